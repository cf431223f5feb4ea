#pragma once

#include "matemb/data.hpp"
#include "matemb/encoder.hpp"
#include "matemb/eval.hpp"
#include "matemb/losses.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace matemb {

enum class Regime { MatryoshkaTriplet, HybridMultitask };

const char* to_string(Regime regime);
Regime regime_from_string(std::string_view name);

struct TrainConfig {
  Regime regime = Regime::MatryoshkaTriplet;
  int epochs = 5;
  int batch_size = 0;  // 0 = regime default: 128 triplet, 64 hybrid
  double learning_rate = 2e-5;
  double warmup_ratio = 0.1;
  int eval_every = 200;
  int checkpoint_every = 200;
  std::uint64_t seed = 0;
  double grad_clip = 0.0;  // global max-norm, 0 = off

  // Loss configuration.
  double infonce_scale = 20.0;
  double tau = 0.05;
  std::vector<int> matryoshka_dims;        // empty = progressive halving to 8
  std::vector<double> matryoshka_weights;  // empty = unit weights
  bool renormalize = true;
  bool matryoshka = true;  // wrap the triplet loss (control runs disable)
  ClsLossForm cls_form = ClsLossForm::SoftmaxHead;

  std::string checkpoint_dir;  // empty = no periodic checkpoint files

  int resolved_batch_size() const {
    if (batch_size > 0) return batch_size;
    return regime == Regime::MatryoshkaTriplet ? 128 : 64;
  }
  MatryoshkaSchedule resolved_schedule(int d_full) const;
};

// ---- optimizer ---------------------------------------------------------------

// Moment accumulators for one parameter group, with its own update count for
// bias correction (groups may be updated on different step cadences).
struct AdamSlot {
  Matrix m;
  Matrix v;
  long t = 0;
  static AdamSlot zeros(Eigen::Index rows, Eigen::Index cols) {
    return {Matrix::Zero(rows, cols), Matrix::Zero(rows, cols), 0};
  }
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamSlot embed, proj, bias, head;
  long step = 0;  // completed optimizer steps

  static OptimizerState zeros(const EncoderParams& params,
                              const ClassifierHead* head);
};

// One Adam update with bias correction. Aborts with the parameter group name
// and step index on a non-finite gradient.
void adam_update(Eigen::Ref<Matrix> param, const Matrix& grad, AdamSlot& slot,
                 double lr, const AdamHyper& hyper = {},
                 const char* group = "param");

// Updates all encoder groups plus the optional head; increments state.step.
void adam_step(EncoderParams& params, const EncoderGrads& grads,
               ClassifierHead* head, const Matrix* head_grad,
               OptimizerState& state, double lr, const AdamHyper& hyper = {});

// Linear 0 -> peak over ceil(warmup_ratio * total) steps, then linear
// peak -> 0 over the remainder.
double lr_at(long step, long total_steps, double peak_lr, double warmup_ratio);

// ---- run log -----------------------------------------------------------------

struct StepRecord {
  long step = 0;           // 1-based
  std::string task;        // "triplet", "classification" or "sts"
  double loss = 0.0;
  double lr = 0.0;
};

struct EvalSnapshot {
  long step = 0;
  EvalReport report;
  double cls_accuracy = 0.0;
  bool has_accuracy = false;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<EvalSnapshot> evals;
};

void write_runlog_jsonl(const std::string& path, const RunLog& log);

// ---- training ----------------------------------------------------------------

struct TrainData {
  std::vector<TripletExample> triplets;      // matryoshka-triplet regime
  std::vector<LabeledPair> labeled_pairs;    // hybrid classification stream
  std::vector<ScoredPair> scored_pairs;      // hybrid sts stream
  std::vector<ScoredPair> eval_pairs;        // periodic STS snapshots
  std::vector<LabeledPair> eval_labeled;     // accuracy snapshots
};

struct TrainResult {
  Encoder encoder;
  std::optional<ClassifierHead> head;  // hybrid softmax-head regime
  RunLog log;
};

TrainResult train(const TrainData& data, Encoder encoder,
                  const TrainConfig& config);

// Complete optimizer/trainer state; resuming replays the remaining steps
// bit-identically to an uninterrupted run over the same data and config.
struct TrainCheckpoint {
  Checkpoint model;
  OptimizerState opt;
  std::uint64_t seed = 0;  // data-order streams derive from (seed, epoch)
  long step = 0;           // completed steps
};

void save_train_checkpoint(const std::string& path, const TrainCheckpoint& ckpt);
TrainCheckpoint load_train_checkpoint(const std::string& path);

TrainResult train_resume(const TrainCheckpoint& ckpt, const TrainData& data,
                         const TrainConfig& config);

}  // namespace matemb
