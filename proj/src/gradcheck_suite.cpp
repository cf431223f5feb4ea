#include "matemb/gradcheck_suite.hpp"

#include "matemb/losses.hpp"
#include "matemb/numerics.hpp"
#include "matemb/rng.hpp"

#include <cmath>
#include <functional>

namespace matemb {

namespace {

constexpr double kFdStep = 1e-5;

Vector random_vector(Rng& rng, int d) {
  Vector v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.uniform(-1.0, 1.0);
  return v;
}

std::vector<Vector> random_batch(Rng& rng, int count, int d) {
  std::vector<Vector> batch;
  batch.reserve(count);
  for (int i = 0; i < count; ++i) batch.push_back(random_vector(rng, d));
  return batch;
}

// Worst error over all input slots: each slot's gradient is checked against
// central differences of the loss as a function of that slot alone.
double check_inputs(
    const std::vector<Vector>& inputs,
    const std::function<double(const std::vector<Vector>&)>& value_of,
    const std::vector<Vector>& analytic) {
  double worst = 0.0;
  for (std::size_t slot = 0; slot < inputs.size(); ++slot) {
    const auto f = [&](const Vector& z) {
      std::vector<Vector> probe = inputs;
      probe[slot] = z;
      return value_of(probe);
    };
    worst = std::max(worst,
                     grad_check(f, analytic[slot], inputs[slot], kFdStep));
  }
  return worst;
}

double check_head(const Matrix& weights,
                  const std::function<double(const Matrix&)>& value_of,
                  const Matrix& analytic) {
  // Flatten the head into one vector-valued check.
  const auto rows = weights.rows();
  const auto cols = weights.cols();
  Vector at(rows * cols);
  Vector grad(rows * cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      at(r * cols + c) = weights(r, c);
      grad(r * cols + c) = analytic(r, c);
    }
  const auto f = [&](const Vector& flat) {
    Matrix w(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = flat(r * cols + c);
    return value_of(w);
  };
  return grad_check(f, grad, at, kFdStep);
}

}  // namespace

std::vector<GradCheckResult> run_loss_gradient_suite(std::uint64_t seed,
                                                     int trials) {
  const int d = 8;
  std::vector<GradCheckResult> results = {
      {"infonce_triplet", 0.0, trials},
      {"mrl_classification_loss", 0.0, trials},
      {"matryoshka_wrap(infonce)", 0.0, trials},
      {"cosent_loss", 0.0, trials},
      {"label_negative_cls_loss", 0.0, trials},
      {"softmax_head_cls_loss", 0.0, trials},
      {"mrl_classification_loss(head)", 0.0, trials},
      {"softmax_head_cls_loss(head)", 0.0, trials},
  };

  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(mix_seed(seed, 1000 + trial));

    {  // infonce_triplet
      const int n = 3;
      auto inputs = random_batch(rng, 3 * n, d);
      const auto split = [n](const std::vector<Vector>& flat) {
        return std::tuple(
            std::vector<Vector>(flat.begin(), flat.begin() + n),
            std::vector<Vector>(flat.begin() + n, flat.begin() + 2 * n),
            std::vector<Vector>(flat.begin() + 2 * n, flat.end()));
      };
      const auto value_of = [&](const std::vector<Vector>& flat) {
        const auto [a, p, g] = split(flat);
        return infonce_triplet(a, p, g, 20.0).value;
      };
      const auto [a, p, g] = split(inputs);
      const LossOutput out = infonce_triplet(a, p, g, 20.0);
      results[0].max_rel_err = std::max(
          results[0].max_rel_err, check_inputs(inputs, value_of, out.grads));
    }

    {  // mrl_classification_loss (+ head)
      const int n = 3;
      auto z = random_batch(rng, n, d);
      std::vector<int> labels;
      for (int i = 0; i < n; ++i)
        labels.push_back(static_cast<int>(rng.below(kNumPairLabels)));
      ClassifierHead head{Matrix(kNumPairLabels, d), true};
      for (Eigen::Index r = 0; r < head.weights.rows(); ++r)
        for (Eigen::Index c = 0; c < head.weights.cols(); ++c)
          head.weights(r, c) = rng.uniform(-1.0, 1.0);
      const MatryoshkaSchedule sched = MatryoshkaSchedule::make({8, 4, 2});
      const HeadLossOutput out =
          mrl_classification_loss(z, labels, head, sched);
      results[1].max_rel_err = std::max(
          results[1].max_rel_err,
          check_inputs(
              z,
              [&](const std::vector<Vector>& probe) {
                return mrl_classification_loss(probe, labels, head, sched)
                    .value;
              },
              out.grads));
      results[6].max_rel_err = std::max(
          results[6].max_rel_err,
          check_head(
              head.weights,
              [&](const Matrix& w) {
                return mrl_classification_loss(
                           z, labels, ClassifierHead{w, true}, sched)
                    .value;
              },
              out.head_grad));
    }

    {  // matryoshka_wrap over infonce, renormalized truncations
      const int n = 2;
      auto inputs = random_batch(rng, 3 * n, d);
      const MatryoshkaSchedule sched = MatryoshkaSchedule::make({8, 4, 2});
      const BatchLoss base = [n](const std::vector<Vector>& flat) {
        return infonce_triplet(
            std::vector<Vector>(flat.begin(), flat.begin() + n),
            std::vector<Vector>(flat.begin() + n, flat.begin() + 2 * n),
            std::vector<Vector>(flat.begin() + 2 * n, flat.end()), 20.0);
      };
      const auto value_of = [&](const std::vector<Vector>& probe) {
        return matryoshka_wrap(base, probe, sched, true).value;
      };
      const LossOutput out = matryoshka_wrap(base, inputs, sched, true);
      results[2].max_rel_err = std::max(
          results[2].max_rel_err, check_inputs(inputs, value_of, out.grads));
    }

    {  // cosent_loss
      const int n = 4;
      auto inputs = random_batch(rng, 2 * n, d);
      std::vector<double> gold;
      for (int i = 0; i < n; ++i) gold.push_back(rng.uniform(0.0, 1.0));
      const Temperature tau{0.05};
      const LossOutput out = cosent_loss(inputs, gold, tau);
      results[3].max_rel_err = std::max(
          results[3].max_rel_err,
          check_inputs(
              inputs,
              [&](const std::vector<Vector>& probe) {
                return cosent_loss(probe, gold, tau).value;
              },
              out.grads));
    }

    {  // label_negative_cls_loss
      const int n = 3;
      auto premises = random_batch(rng, n, d);
      auto hyps = random_batch(rng, kNumPairLabels * n, d);
      std::vector<int> labels;
      for (int i = 0; i < n; ++i)
        labels.push_back(static_cast<int>(rng.below(kNumPairLabels)));
      const Temperature tau{0.05};
      std::vector<Vector> flat = premises;
      flat.insert(flat.end(), hyps.begin(), hyps.end());
      const auto value_of = [&](const std::vector<Vector>& probe) {
        return label_negative_cls_loss(
                   std::vector<Vector>(probe.begin(), probe.begin() + n),
                   std::vector<Vector>(probe.begin() + n, probe.end()),
                   labels, tau)
            .value;
      };
      const LossOutput out =
          label_negative_cls_loss(premises, hyps, labels, tau);
      results[4].max_rel_err = std::max(
          results[4].max_rel_err, check_inputs(flat, value_of, out.grads));
    }

    {  // softmax_head_cls_loss (+ head), keeping |u-v| away from the kink
      const int n = 3;
      auto u = random_batch(rng, n, d);
      std::vector<Vector> v;
      for (int i = 0; i < n; ++i) {
        Vector w = random_vector(rng, d);
        for (int k = 0; k < d; ++k) {
          const double gap = w(k) - u[i](k);
          if (std::abs(gap) < 1e-3) w(k) = u[i](k) + (gap >= 0 ? 1e-3 : -1e-3);
        }
        v.push_back(std::move(w));
      }
      std::vector<int> labels;
      for (int i = 0; i < n; ++i)
        labels.push_back(static_cast<int>(rng.below(kNumPairLabels)));
      ClassifierHead head{Matrix(kNumPairLabels, 3 * d), true};
      for (Eigen::Index r = 0; r < head.weights.rows(); ++r)
        for (Eigen::Index c = 0; c < head.weights.cols(); ++c)
          head.weights(r, c) = rng.uniform(-1.0, 1.0);
      std::vector<Vector> flat = u;
      flat.insert(flat.end(), v.begin(), v.end());
      const auto value_of = [&](const std::vector<Vector>& probe) {
        return softmax_head_cls_loss(
                   std::vector<Vector>(probe.begin(), probe.begin() + n),
                   std::vector<Vector>(probe.begin() + n, probe.end()),
                   labels, head)
            .value;
      };
      const HeadLossOutput out = softmax_head_cls_loss(u, v, labels, head);
      results[5].max_rel_err = std::max(
          results[5].max_rel_err, check_inputs(flat, value_of, out.grads));
      results[7].max_rel_err = std::max(
          results[7].max_rel_err,
          check_head(
              head.weights,
              [&](const Matrix& w) {
                return softmax_head_cls_loss(u, v, labels,
                                             ClassifierHead{w, true})
                    .value;
              },
              out.head_grad));
    }
  }
  return results;
}

}  // namespace matemb
