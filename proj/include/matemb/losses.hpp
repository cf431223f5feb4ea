#pragma once

#include "matemb/numerics.hpp"

#include <functional>
#include <variant>
#include <vector>

namespace matemb {

// Temperature scaling parameter of the softmax-style objectives.
struct Temperature {
  double tau = 0.05;
};

// The dimension cut points M with per-dimension weights c_m. Dims are kept
// strictly descending; per-dim terms are always reduced in that order so runs
// stay bit-reproducible.
struct MatryoshkaSchedule {
  std::vector<int> dims;
  std::vector<double> weights;

  static MatryoshkaSchedule make(std::vector<int> dims,
                                 std::vector<double> weights = {});
  // Progressively halves d_full until min_dim, unit weights.
  static MatryoshkaSchedule halving(int d_full, int min_dim = 8);
  static MatryoshkaSchedule single(int d_full) { return make({d_full}); }

  void validate(int d_full) const;  // throws std::invalid_argument
};

// Shared linear classifier. With tied_truncation, the classifier for width m
// is the leading-m-columns slice of one weight matrix.
struct ClassifierHead {
  Matrix weights;  // num_labels x feature_dim
  bool tied_truncation = true;

  int num_labels() const { return static_cast<int>(weights.rows()); }
  int feature_dim() const { return static_cast<int>(weights.cols()); }
};

constexpr int kNumPairLabels = 3;

// Loss value plus exact gradients with respect to the input embeddings. The
// grad layout mirrors the op's input layout; see each op.
struct LossOutput {
  double value = 0.0;
  std::vector<Vector> grads;
};

// Adds the classifier-head gradient (same shape as head.weights).
struct HeadLossOutput {
  double value = 0.0;
  std::vector<Vector> grads;
  Matrix head_grad;
};

// In-batch softmax ranking: row i scores scale*cos(anchor_i, candidate_j)
// over all positives plus all explicit negatives, true class j == i, mean
// cross-entropy. `negatives` may be empty (pure in-batch negatives), in which
// case the batch must have >= 2 examples. Grad layout:
// [anchors..., positives..., negatives...].
LossOutput infonce_triplet(const std::vector<Vector>& anchors,
                           const std::vector<Vector>& positives,
                           const std::vector<Vector>& negatives, double scale);

// Plain multi-class cross-entropy of head.weights * z, batch-meaned. The
// base objective the Matryoshka schedule sums over. Grad layout: [z...].
HeadLossOutput linear_cls_loss(const std::vector<Vector>& z,
                               const std::vector<int>& labels,
                               const ClassifierHead& head);

// sum_m c_m * CE(W_{1:m} z_{1:m}, y), gradients flowing to both z and the
// shared W. Requires tied_truncation for multi-dim schedules.
HeadLossOutput mrl_classification_loss(const std::vector<Vector>& z,
                                       const std::vector<int>& labels,
                                       const ClassifierHead& head,
                                       const MatryoshkaSchedule& sched);

using BatchLoss = std::function<LossOutput(const std::vector<Vector>&)>;

// sum_m c_m * base(truncate_m(inputs)); truncation optionally re-normalizes.
// Gradients from each truncated view scatter-add into the leading m
// coordinates of the full-dim gradients.
LossOutput matryoshka_wrap(const BatchLoss& base,
                           const std::vector<Vector>& inputs,
                           const MatryoshkaSchedule& sched, bool renormalize);

// Pairwise ranking over sentence pairs: log(1 + sum over ordered pair-of-pairs
// with strictly greater gold of exp((cos_lo - cos_hi)/tau)). Inputs are flat,
// pair k at (2k, 2k+1); gold in [0,1]. Ties contribute nothing.
LossOutput cosent_loss(const std::vector<Vector>& inputs,
                       const std::vector<double>& gold, Temperature tau);

// Label-based negatives: per premise, softmax over cosine to one hypothesis
// per label, true class = the example's label. hyps_by_label is flat, example
// i's hypothesis for label l at 3*i + l. Grad layout:
// [premises..., hyps_by_label...].
LossOutput label_negative_cls_loss(const std::vector<Vector>& premises,
                                   const std::vector<Vector>& hyps_by_label,
                                   const std::vector<int>& true_labels,
                                   Temperature tau);

// 3-way softmax over W * concat(u, v, |u-v|), batch-meaned; the |u-v| block
// uses the sign subgradient (0 at exact ties). Grad layout: [u..., v...].
HeadLossOutput softmax_head_cls_loss(const std::vector<Vector>& u,
                                     const std::vector<Vector>& v,
                                     const std::vector<int>& labels,
                                     const ClassifierHead& head);

// ---- hybrid multi-task routing ----------------------------------------------

enum class TaskTag { Classification, Sts };
enum class ClsLossForm { SoftmaxHead, LabelNegative };

const char* to_string(TaskTag tag);
const char* to_string(ClsLossForm form);
ClsLossForm cls_loss_form_from_string(std::string_view name);

struct StsBatch {
  std::vector<Vector> inputs;  // flat pairs, pair k at (2k, 2k+1)
  std::vector<double> gold;    // normalized [0,1]
};

struct ClsBatch {
  std::vector<Vector> premises;
  std::vector<Vector> hypotheses;  // the example's own hypothesis
  std::vector<int> labels;
  std::vector<Vector> hyps_by_label;  // flat 3n; required by LabelNegative
};

struct TaggedBatch {
  TaskTag tag = TaskTag::Sts;
  std::variant<ClsBatch, StsBatch> payload;
};

struct HybridLossConfig {
  ClsLossForm cls_form = ClsLossForm::SoftmaxHead;
  Temperature tau;
};

// Routes classification batches to the configured classification loss and sts
// batches to cosent_loss; the routed output is returned unmodified (head_grad
// is empty for the non-head routes).
HeadLossOutput hybrid_dispatch(const TaggedBatch& batch,
                               const HybridLossConfig& config,
                               const ClassifierHead& head);

}  // namespace matemb
