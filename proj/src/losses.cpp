#include "matemb/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace matemb {

MatryoshkaSchedule MatryoshkaSchedule::make(std::vector<int> dims,
                                            std::vector<double> weights) {
  MatryoshkaSchedule sched;
  sched.dims = std::move(dims);
  if (weights.empty())
    sched.weights.assign(sched.dims.size(), 1.0);
  else
    sched.weights = std::move(weights);
  return sched;
}

MatryoshkaSchedule MatryoshkaSchedule::halving(int d_full, int min_dim) {
  std::vector<int> dims;
  for (int m = d_full; m >= std::max(1, min_dim); m /= 2) {
    dims.push_back(m);
    if (m == 1) break;
  }
  return make(std::move(dims));
}

void MatryoshkaSchedule::validate(int d_full) const {
  if (dims.empty())
    throw std::invalid_argument("matryoshka schedule: no dims");
  if (weights.size() != dims.size())
    throw std::invalid_argument(
        "matryoshka schedule: dims/weights size mismatch");
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] < 1)
      throw std::invalid_argument("matryoshka schedule: dim must be >= 1");
    if (dims[i] > d_full)
      throw std::invalid_argument("matryoshka schedule: dim " +
                                  std::to_string(dims[i]) +
                                  " exceeds embedding dim " +
                                  std::to_string(d_full));
    if (i > 0 && dims[i] >= dims[i - 1])
      throw std::invalid_argument(
          "matryoshka schedule: dims must be strictly descending");
    if (!(weights[i] > 0.0))
      throw std::invalid_argument("matryoshka schedule: weights must be > 0");
  }
}

namespace {

void check_batch_dims(const std::vector<Vector>& vs, const char* op) {
  if (vs.empty()) throw std::invalid_argument(std::string(op) + ": empty batch");
  for (const auto& v : vs)
    if (v.size() != vs.front().size())
      throw std::invalid_argument(std::string(op) +
                                  ": inconsistent embedding dims");
}

void check_labels(const std::vector<int>& labels, int num_labels,
                  const char* op) {
  for (int y : labels)
    if (y < 0 || y >= num_labels)
      throw std::invalid_argument(std::string(op) + ": label " +
                                  std::to_string(y) + " outside [0, " +
                                  std::to_string(num_labels) + ")");
}

double logsumexp(const Vector& v) {
  const double m = v.maxCoeff();
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v(i) - m);
  return m + std::log(s);
}

}  // namespace

LossOutput infonce_triplet(const std::vector<Vector>& anchors,
                           const std::vector<Vector>& positives,
                           const std::vector<Vector>& negatives, double scale) {
  const std::size_t n = anchors.size();
  if (positives.size() != n)
    throw std::invalid_argument("infonce_triplet: anchors/positives size mismatch");
  if (!negatives.empty() && negatives.size() != n)
    throw std::invalid_argument("infonce_triplet: negatives size mismatch");
  if (negatives.empty() && n < 2)
    throw std::invalid_argument(
        "infonce_triplet: batch of size < 2 without explicit negatives has no "
        "in-batch signal");
  if (!(scale > 0.0))
    throw std::invalid_argument("infonce_triplet: scale must be > 0");
  check_batch_dims(anchors, "infonce_triplet");

  std::vector<const Vector*> candidates;
  candidates.reserve(n + negatives.size());
  for (const auto& p : positives) candidates.push_back(&p);
  for (const auto& g : negatives) candidates.push_back(&g);
  const std::size_t m = candidates.size();

  LossOutput out;
  out.grads.assign(2 * n + negatives.size(),
                   Vector::Zero(anchors.front().size()));

  Matrix scores(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      scores(i, j) = scale * cosine(anchors[i], *candidates[j]);

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vector row = scores.row(i).transpose();
    const double lse = logsumexp(row);
    total += lse - row(static_cast<Eigen::Index>(i));
    for (std::size_t j = 0; j < m; ++j) {
      const double p = std::exp(row(static_cast<Eigen::Index>(j)) - lse);
      const double ds = (p - (i == j ? 1.0 : 0.0)) / static_cast<double>(n);
      if (ds == 0.0) continue;
      const double w = ds * scale;
      out.grads[i] += w * cosine_grad_wrt_a(anchors[i], *candidates[j]);
      out.grads[n + j] += w * cosine_grad_wrt_a(*candidates[j], anchors[i]);
    }
  }
  out.value = total / static_cast<double>(n);
  return out;
}

namespace {

// Cross-entropy of the width-m slice W_{1:m} z_{1:m}, batch-meaned; gradients
// are scaled by `weight` and scatter-added into the full-width accumulators.
double cls_ce_at_width(const std::vector<Vector>& z,
                       const std::vector<int>& labels,
                       const Matrix& weights, int m, double weight,
                       std::vector<Vector>& d_z, Matrix& d_weights) {
  const std::size_t n = z.size();
  const auto wm = weights.leftCols(m);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vector logits = wm * z[i].head(m);
    const double lse = logsumexp(logits);
    total += lse - logits(labels[i]);
    Vector dlogits(logits.size());
    for (Eigen::Index l = 0; l < logits.size(); ++l)
      dlogits(l) = (std::exp(logits(l) - lse) - (l == labels[i] ? 1.0 : 0.0)) /
                   static_cast<double>(n);
    dlogits *= weight;
    d_weights.leftCols(m).noalias() += dlogits * z[i].head(m).transpose();
    d_z[i].head(m).noalias() += wm.transpose() * dlogits;
  }
  return total / static_cast<double>(n);
}

}  // namespace

HeadLossOutput linear_cls_loss(const std::vector<Vector>& z,
                               const std::vector<int>& labels,
                               const ClassifierHead& head) {
  check_batch_dims(z, "linear_cls_loss");
  if (labels.size() != z.size())
    throw std::invalid_argument("linear_cls_loss: labels size mismatch");
  check_labels(labels, head.num_labels(), "linear_cls_loss");
  if (head.feature_dim() != z.front().size())
    throw std::invalid_argument("linear_cls_loss: head/embedding dim mismatch");

  HeadLossOutput out;
  out.grads.assign(z.size(), Vector::Zero(z.front().size()));
  out.head_grad = Matrix::Zero(head.weights.rows(), head.weights.cols());
  out.value = cls_ce_at_width(z, labels, head.weights, head.feature_dim(), 1.0,
                              out.grads, out.head_grad);
  return out;
}

HeadLossOutput mrl_classification_loss(const std::vector<Vector>& z,
                                       const std::vector<int>& labels,
                                       const ClassifierHead& head,
                                       const MatryoshkaSchedule& sched) {
  check_batch_dims(z, "mrl_classification_loss");
  if (labels.size() != z.size())
    throw std::invalid_argument("mrl_classification_loss: labels size mismatch");
  check_labels(labels, head.num_labels(), "mrl_classification_loss");
  const int d_full = static_cast<int>(z.front().size());
  sched.validate(d_full);
  if (head.feature_dim() < sched.dims.front())
    throw std::invalid_argument(
        "mrl_classification_loss: head narrower than largest schedule dim");
  if (!head.tied_truncation && sched.dims.size() > 1)
    throw std::invalid_argument(
        "mrl_classification_loss: untied head cannot serve a multi-dim "
        "schedule");

  HeadLossOutput out;
  out.grads.assign(z.size(), Vector::Zero(d_full));
  out.head_grad = Matrix::Zero(head.weights.rows(), head.weights.cols());
  for (std::size_t k = 0; k < sched.dims.size(); ++k)
    out.value += sched.weights[k] *
                 cls_ce_at_width(z, labels, head.weights, sched.dims[k],
                                 sched.weights[k], out.grads, out.head_grad);
  return out;
}

LossOutput matryoshka_wrap(const BatchLoss& base,
                           const std::vector<Vector>& inputs,
                           const MatryoshkaSchedule& sched, bool renormalize) {
  check_batch_dims(inputs, "matryoshka_wrap");
  const int d_full = static_cast<int>(inputs.front().size());
  sched.validate(d_full);

  LossOutput out;
  out.grads.assign(inputs.size(), Vector::Zero(d_full));
  for (std::size_t k = 0; k < sched.dims.size(); ++k) {
    const int m = sched.dims[k];
    const double c = sched.weights[k];
    std::vector<Vector> views(inputs.size());
    std::vector<double> norms(inputs.size(), 1.0);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      views[i] = inputs[i].head(m);
      if (renormalize) {
        norms[i] = views[i].norm();
        if (norms[i] == 0.0)
          throw std::domain_error(
              "matryoshka_wrap: zero-norm truncation cannot be renormalized");
        views[i] /= norms[i];
      }
    }
    const LossOutput r = base(views);
    if (r.grads.size() != inputs.size())
      throw std::invalid_argument(
          "matryoshka_wrap: base loss returned wrong gradient count");
    out.value += c * r.value;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (renormalize) {
        const Vector& w = views[i];
        out.grads[i].head(m) +=
            c * (r.grads[i] - w * w.dot(r.grads[i])) / norms[i];
      } else {
        out.grads[i].head(m) += c * r.grads[i];
      }
    }
  }
  return out;
}

LossOutput cosent_loss(const std::vector<Vector>& inputs,
                       const std::vector<double>& gold, Temperature tau) {
  if (!(tau.tau > 0.0))
    throw std::invalid_argument("cosent_loss: tau must be > 0");
  const std::size_t n = gold.size();
  if (inputs.size() != 2 * n)
    throw std::invalid_argument(
        "cosent_loss: expected 2 embeddings per scored pair");
  if (n == 0) throw std::invalid_argument("cosent_loss: empty batch");
  check_batch_dims(inputs, "cosent_loss");

  std::vector<double> cos(n);
  for (std::size_t k = 0; k < n; ++k)
    cos[k] = cosine(inputs[2 * k], inputs[2 * k + 1]);

  // Ordered violation pairs (hi, lo) with gold[hi] > gold[lo]; the sum always
  // carries an implicit exp(0) term.
  struct Term {
    std::size_t hi, lo;
    double t;
  };
  std::vector<Term> terms;
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q = 0; q < n; ++q)
      if (gold[p] > gold[q])
        terms.push_back({p, q, (cos[q] - cos[p]) / tau.tau});

  double peak = 0.0;
  for (const Term& term : terms) peak = std::max(peak, term.t);
  double sum = std::exp(0.0 - peak);
  for (const Term& term : terms) sum += std::exp(term.t - peak);
  const double value = peak + std::log(sum);

  LossOutput out;
  out.value = value;
  out.grads.assign(inputs.size(), Vector::Zero(inputs.front().size()));
  std::vector<double> d_cos(n, 0.0);
  for (const Term& term : terms) {
    const double w = std::exp(term.t - value) / tau.tau;
    d_cos[term.lo] += w;
    d_cos[term.hi] -= w;
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (d_cos[k] == 0.0) continue;
    out.grads[2 * k] =
        d_cos[k] * cosine_grad_wrt_a(inputs[2 * k], inputs[2 * k + 1]);
    out.grads[2 * k + 1] =
        d_cos[k] * cosine_grad_wrt_a(inputs[2 * k + 1], inputs[2 * k]);
  }
  return out;
}

LossOutput label_negative_cls_loss(const std::vector<Vector>& premises,
                                   const std::vector<Vector>& hyps_by_label,
                                   const std::vector<int>& true_labels,
                                   Temperature tau) {
  if (!(tau.tau > 0.0))
    throw std::invalid_argument("label_negative_cls_loss: tau must be > 0");
  const std::size_t n = premises.size();
  if (hyps_by_label.size() != kNumPairLabels * n)
    throw std::invalid_argument(
        "label_negative_cls_loss: expected one hypothesis per label per "
        "example");
  if (true_labels.size() != n)
    throw std::invalid_argument("label_negative_cls_loss: labels size mismatch");
  if (n == 0)
    throw std::invalid_argument("label_negative_cls_loss: empty batch");
  check_labels(true_labels, kNumPairLabels, "label_negative_cls_loss");
  check_batch_dims(premises, "label_negative_cls_loss");

  LossOutput out;
  out.grads.assign(premises.size() + hyps_by_label.size(),
                   Vector::Zero(premises.front().size()));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Vector logits(kNumPairLabels);
    for (int l = 0; l < kNumPairLabels; ++l)
      logits(l) =
          cosine(premises[i], hyps_by_label[kNumPairLabels * i + l]) / tau.tau;
    const double lse = logsumexp(logits);
    total += lse - logits(true_labels[i]);
    for (int l = 0; l < kNumPairLabels; ++l) {
      const double p = std::exp(logits(l) - lse);
      const double ds = (p - (l == true_labels[i] ? 1.0 : 0.0)) /
                        (static_cast<double>(n) * tau.tau);
      const Vector& h = hyps_by_label[kNumPairLabels * i + l];
      out.grads[i] += ds * cosine_grad_wrt_a(premises[i], h);
      out.grads[n + kNumPairLabels * i + l] +=
          ds * cosine_grad_wrt_a(h, premises[i]);
    }
  }
  out.value = total / static_cast<double>(n);
  return out;
}

HeadLossOutput softmax_head_cls_loss(const std::vector<Vector>& u,
                                     const std::vector<Vector>& v,
                                     const std::vector<int>& labels,
                                     const ClassifierHead& head) {
  const std::size_t n = u.size();
  if (v.size() != n || labels.size() != n)
    throw std::invalid_argument("softmax_head_cls_loss: batch size mismatch");
  if (n == 0)
    throw std::invalid_argument("softmax_head_cls_loss: empty batch");
  check_batch_dims(u, "softmax_head_cls_loss");
  check_batch_dims(v, "softmax_head_cls_loss");
  const int d = static_cast<int>(u.front().size());
  if (v.front().size() != d)
    throw std::invalid_argument("softmax_head_cls_loss: u/v dim mismatch");
  if (head.feature_dim() != 3 * d)
    throw std::invalid_argument(
        "softmax_head_cls_loss: head expects features (u, v, |u-v|) of dim " +
        std::to_string(3 * d) + ", got " + std::to_string(head.feature_dim()));
  check_labels(labels, head.num_labels(), "softmax_head_cls_loss");

  HeadLossOutput out;
  out.grads.assign(2 * n, Vector::Zero(d));
  out.head_grad = Matrix::Zero(head.weights.rows(), head.weights.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Vector feat(3 * d);
    feat.head(d) = u[i];
    feat.segment(d, d) = v[i];
    feat.tail(d) = (u[i] - v[i]).cwiseAbs();
    const Vector logits = head.weights * feat;
    const double lse = logsumexp(logits);
    total += lse - logits(labels[i]);
    Vector dlogits(logits.size());
    for (Eigen::Index l = 0; l < logits.size(); ++l)
      dlogits(l) = (std::exp(logits(l) - lse) - (l == labels[i] ? 1.0 : 0.0)) /
                   static_cast<double>(n);
    out.head_grad.noalias() += dlogits * feat.transpose();
    const Vector dfeat = head.weights.transpose() * dlogits;
    const Vector sign =
        (u[i] - v[i]).unaryExpr([](double x) {
          return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        });
    out.grads[i] += dfeat.head(d) + sign.cwiseProduct(dfeat.tail(d));
    out.grads[n + i] += dfeat.segment(d, d) - sign.cwiseProduct(dfeat.tail(d));
  }
  out.value = total / static_cast<double>(n);
  return out;
}

const char* to_string(TaskTag tag) {
  return tag == TaskTag::Classification ? "classification" : "sts";
}

const char* to_string(ClsLossForm form) {
  return form == ClsLossForm::SoftmaxHead ? "softmax-head" : "label-negative";
}

ClsLossForm cls_loss_form_from_string(std::string_view name) {
  if (name == "softmax-head") return ClsLossForm::SoftmaxHead;
  if (name == "label-negative") return ClsLossForm::LabelNegative;
  throw std::domain_error("unknown classification loss form '" +
                          std::string(name) + "'");
}

HeadLossOutput hybrid_dispatch(const TaggedBatch& batch,
                               const HybridLossConfig& config,
                               const ClassifierHead& head) {
  if (batch.tag == TaskTag::Sts) {
    const auto* sts = std::get_if<StsBatch>(&batch.payload);
    if (!sts)
      throw std::logic_error("hybrid_dispatch: sts tag with non-sts payload");
    const LossOutput r = cosent_loss(sts->inputs, sts->gold, config.tau);
    return {r.value, r.grads, Matrix()};
  }
  if (batch.tag == TaskTag::Classification) {
    const auto* cls = std::get_if<ClsBatch>(&batch.payload);
    if (!cls)
      throw std::logic_error(
          "hybrid_dispatch: classification tag with non-classification "
          "payload");
    switch (config.cls_form) {
      case ClsLossForm::SoftmaxHead:
        return softmax_head_cls_loss(cls->premises, cls->hypotheses,
                                     cls->labels, head);
      case ClsLossForm::LabelNegative: {
        if (cls->hyps_by_label.empty())
          throw std::logic_error(
              "hybrid_dispatch: label-negative form needs per-label "
              "hypothesis sets");
        const LossOutput r = label_negative_cls_loss(
            cls->premises, cls->hyps_by_label, cls->labels, config.tau);
        return {r.value, r.grads, Matrix()};
      }
    }
    throw std::logic_error("hybrid_dispatch: unknown classification form");
  }
  throw std::logic_error("hybrid_dispatch: unknown task tag");
}

}  // namespace matemb
