#include "matemb/trainer.hpp"

#include "binary_io.hpp"
#include "matemb/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace matemb {

using nlohmann::json;

const char* to_string(Regime regime) {
  return regime == Regime::MatryoshkaTriplet ? "matryoshka-triplet"
                                             : "hybrid-multitask";
}

Regime regime_from_string(std::string_view name) {
  if (name == "matryoshka-triplet") return Regime::MatryoshkaTriplet;
  if (name == "hybrid-multitask") return Regime::HybridMultitask;
  throw std::domain_error("unknown regime '" + std::string(name) + "'");
}

MatryoshkaSchedule TrainConfig::resolved_schedule(int d_full) const {
  if (matryoshka_dims.empty()) return MatryoshkaSchedule::halving(d_full, 8);
  return MatryoshkaSchedule::make(matryoshka_dims, matryoshka_weights);
}

OptimizerState OptimizerState::zeros(const EncoderParams& params,
                                     const ClassifierHead* head) {
  OptimizerState state;
  state.embed = AdamSlot::zeros(params.embed_table.rows(),
                                params.embed_table.cols());
  state.proj = AdamSlot::zeros(params.proj.rows(), params.proj.cols());
  state.bias = AdamSlot::zeros(params.proj_bias.size(), 1);
  if (head)
    state.head = AdamSlot::zeros(head->weights.rows(), head->weights.cols());
  return state;
}

void adam_update(Eigen::Ref<Matrix> param, const Matrix& grad, AdamSlot& slot,
                 double lr, const AdamHyper& hyper, const char* group) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols())
    throw std::invalid_argument(std::string("adam: shape mismatch in ") +
                                group);
  if (!grad.allFinite())
    throw std::runtime_error(std::string("adam: non-finite gradient in ") +
                             group + " at step " + std::to_string(slot.t + 1));
  if (lr < 0.0) throw std::invalid_argument("adam: negative learning rate");
  slot.t += 1;
  slot.m = hyper.beta1 * slot.m + (1.0 - hyper.beta1) * grad;
  slot.v = hyper.beta2 * slot.v + (1.0 - hyper.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(slot.t));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(slot.t));
  param.array() -= lr * (slot.m.array() / bc1) /
                   ((slot.v.array() / bc2).sqrt() + hyper.eps);
}

void adam_step(EncoderParams& params, const EncoderGrads& grads,
               ClassifierHead* head, const Matrix* head_grad,
               OptimizerState& state, double lr, const AdamHyper& hyper) {
  adam_update(params.embed_table, grads.embed_table, state.embed, lr, hyper,
              "embed_table");
  adam_update(params.proj, grads.proj, state.proj, lr, hyper, "proj");
  Eigen::Map<Matrix> bias_view(params.proj_bias.data(),
                               params.proj_bias.size(), 1);
  adam_update(bias_view, Matrix(grads.proj_bias), state.bias, lr, hyper,
              "proj_bias");
  if (head) {
    if (!head_grad)
      throw std::invalid_argument("adam_step: head present without gradient");
    adam_update(head->weights, *head_grad, state.head, lr, hyper, "head");
  }
  state.step += 1;
}

double lr_at(long step, long total_steps, double peak_lr, double warmup_ratio) {
  if (total_steps < 1)
    throw std::invalid_argument("lr_at: total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("lr_at: step outside [0, total_steps]");
  if (step >= total_steps) return 0.0;
  const long warmup = static_cast<long>(
      std::ceil(warmup_ratio * static_cast<double>(total_steps)));
  if (warmup > 0 && step <= warmup)
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  return peak_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

void write_runlog_jsonl(const std::string& path, const RunLog& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  std::size_t ei = 0;
  auto flush_evals_until = [&](long step) {
    while (ei < log.evals.size() && log.evals[ei].step <= step) {
      const EvalSnapshot& snap = log.evals[ei];
      json rec{{"type", "eval"}, {"step", snap.step}};
      rec["report"] = json::parse(emit_report(snap.report, ReportFormat::Json));
      if (snap.has_accuracy) rec["accuracy"] = snap.cls_accuracy;
      out << rec.dump() << '\n';
      ++ei;
    }
  };
  for (const StepRecord& s : log.steps) {
    out << json{{"type", "step"},
                {"step", s.step},
                {"task", s.task},
                {"loss", s.loss},
                {"lr", s.lr}}
               .dump()
        << '\n';
    flush_evals_until(s.step);
  }
  flush_evals_until(std::numeric_limits<long>::max());
}

// ---- train checkpoint --------------------------------------------------------

namespace {

constexpr char kTrainMagic[8] = {'M', 'E', 'M', 'B', 'T', 'R', 'N', '1'};

void put_slot(std::ostream& out, const AdamSlot& slot) {
  io::put_matrix(out, slot.m);
  io::put_matrix(out, slot.v);
  io::put_u64(out, static_cast<std::uint64_t>(slot.t));
}

AdamSlot get_slot(std::istream& in) {
  AdamSlot slot;
  slot.m = io::get_matrix(in);
  slot.v = io::get_matrix(in);
  slot.t = static_cast<long>(io::get_u64(in));
  return slot;
}

}  // namespace

void save_train_checkpoint(const std::string& path,
                           const TrainCheckpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write(kTrainMagic, sizeof(kTrainMagic));
  write_checkpoint(out, ckpt.model);
  put_slot(out, ckpt.opt.embed);
  put_slot(out, ckpt.opt.proj);
  put_slot(out, ckpt.opt.bias);
  put_slot(out, ckpt.opt.head);
  io::put_u64(out, static_cast<std::uint64_t>(ckpt.opt.step));
  io::put_u64(out, ckpt.seed);
  io::put_u64(out, static_cast<std::uint64_t>(ckpt.step));
  if (!out) throw std::runtime_error(path + ": write failed");
}

TrainCheckpoint load_train_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kTrainMagic, sizeof(kTrainMagic)) != 0)
    throw std::runtime_error(path + ": not a training checkpoint");
  TrainCheckpoint ckpt;
  ckpt.model = read_checkpoint(in);
  ckpt.opt.embed = get_slot(in);
  ckpt.opt.proj = get_slot(in);
  ckpt.opt.bias = get_slot(in);
  ckpt.opt.head = get_slot(in);
  ckpt.opt.step = static_cast<long>(io::get_u64(in));
  ckpt.seed = io::get_u64(in);
  ckpt.step = static_cast<long>(io::get_u64(in));
  return ckpt;
}

// ---- training loop -----------------------------------------------------------

namespace {

constexpr std::uint64_t kSaltTriplet = 11;
constexpr std::uint64_t kSaltCls = 22;
constexpr std::uint64_t kSaltSts = 33;
constexpr std::uint64_t kSaltHead = 44;

long batches_of(std::size_t n, int bs) {
  return static_cast<long>((n + bs - 1) / static_cast<std::size_t>(bs));
}

class Session {
 public:
  Session(const TrainData& data, Encoder encoder, const TrainConfig& cfg)
      : data_(data), cfg_(cfg), encoder_(std::move(encoder)) {
    bs_ = cfg_.resolved_batch_size();
    if (cfg_.epochs < 1)
      throw std::invalid_argument("train: epochs must be >= 1");
    if (!(cfg_.warmup_ratio >= 0.0 && cfg_.warmup_ratio < 1.0))
      throw std::invalid_argument("train: warmup_ratio must be in [0, 1)");
    const int d = encoder_.params.dim();
    sched_ = cfg_.resolved_schedule(d);
    sched_.validate(d);

    if (cfg_.regime == Regime::MatryoshkaTriplet) {
      if (data_.triplets.empty())
        throw std::invalid_argument(
            "train: matryoshka-triplet regime needs triplet data");
      if (bs_ < 2)
        throw std::invalid_argument(
            "train: triplet data needs batch_size >= 2 for in-batch "
            "negatives");
      steps_per_epoch_ = batches_of(data_.triplets.size(), bs_);
    } else {
      if (data_.labeled_pairs.empty() || data_.scored_pairs.empty())
        throw std::invalid_argument(
            "train: hybrid-multitask regime needs labeled pairs and scored "
            "pairs");
      cls_batches_ = batches_of(data_.labeled_pairs.size(), bs_);
      sts_batches_ = batches_of(data_.scored_pairs.size(), bs_);
      steps_per_epoch_ = cls_batches_ + sts_batches_;
      build_task_sequence();
      if (cfg_.cls_form == ClsLossForm::SoftmaxHead) {
        head_ = ClassifierHead{init_head_weights(3 * d), true};
      } else {
        build_premise_groups();
      }
    }
    total_steps_ = steps_per_epoch_ * cfg_.epochs;
    opt_ = OptimizerState::zeros(encoder_.params, head_ ? &*head_ : nullptr);
  }

  TrainResult run(long start_step) {
    EncoderGrads acc = EncoderGrads::zeros_like(encoder_.params);
    Matrix head_grad;
    for (long s = start_step; s < total_steps_; ++s) {
      const long epoch = s / steps_per_epoch_;
      const long idx = s % steps_per_epoch_;

      acc.set_zero();
      head_grad = Matrix();
      std::string task;
      double loss = 0.0;

      if (cfg_.regime == Regime::MatryoshkaTriplet) {
        task = "triplet";
        loss = triplet_step(epoch, idx, acc);
      } else {
        const TaskTag tag = task_sequence_[idx];
        task = to_string(tag);
        const long ordinal = task_ordinal_[idx];
        if (tag == TaskTag::Classification)
          loss = classification_step(epoch, ordinal, acc, head_grad);
        else
          loss = sts_step(epoch, ordinal, acc);
      }
      if (!std::isfinite(loss))
        throw std::runtime_error("train: non-finite loss at step " +
                                 std::to_string(s + 1) + " (" + task + ")");
      clip_gradients(acc, head_grad);
      const double lr =
          lr_at(s, total_steps_, cfg_.learning_rate, cfg_.warmup_ratio);
      // The head only receives updates on steps that produced a head
      // gradient; its Adam slot keeps its own bias-correction count.
      ClassifierHead* head_target =
          (head_ && head_grad.size()) ? &*head_ : nullptr;
      adam_step(encoder_.params, acc, head_target,
                head_target ? &head_grad : nullptr, opt_, lr);
      log_.steps.push_back({s + 1, task, loss, lr});

      if (cfg_.eval_every > 0 && (s + 1) % cfg_.eval_every == 0 &&
          (s + 1) != total_steps_)
        snapshot(s + 1);
      if (!cfg_.checkpoint_dir.empty() && cfg_.checkpoint_every > 0 &&
          (s + 1) % cfg_.checkpoint_every == 0)
        save_periodic(s + 1);
    }
    if (!data_.eval_pairs.empty()) snapshot(total_steps_);
    if (!cfg_.checkpoint_dir.empty()) save_periodic(total_steps_, "final");

    TrainResult result;
    result.encoder = std::move(encoder_);
    result.head = std::move(head_);
    result.log = std::move(log_);
    return result;
  }

  void restore(const TrainCheckpoint& ckpt) {
    if (ckpt.seed != cfg_.seed)
      throw std::invalid_argument(
          "train_resume: checkpoint seed does not match config seed");
    if (ckpt.step > total_steps_)
      throw std::invalid_argument(
          "train_resume: checkpoint is beyond the configured run length");
    encoder_ = ckpt.model.encoder;
    if (ckpt.model.head_weights)
      head_ = ClassifierHead{*ckpt.model.head_weights, ckpt.model.head_tied};
    opt_ = ckpt.opt;
  }

 private:
  Matrix init_head_weights(int feature_dim) const {
    const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    Rng rng(mix_seed(cfg_.seed, kSaltHead));
    Matrix w(kNumPairLabels, feature_dim);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        w(r, c) = rng.uniform(-bound, bound);
    return w;
  }

  void build_task_sequence() {
    task_sequence_.clear();
    task_ordinal_.clear();
    long c = 0, s = 0;
    bool cls_turn = true;  // classification first
    while (c < cls_batches_ || s < sts_batches_) {
      bool take_cls;
      if (c < cls_batches_ && s < sts_batches_)
        take_cls = cls_turn;
      else
        take_cls = c < cls_batches_;
      if (take_cls) {
        task_sequence_.push_back(TaskTag::Classification);
        task_ordinal_.push_back(c++);
      } else {
        task_sequence_.push_back(TaskTag::Sts);
        task_ordinal_.push_back(s++);
      }
      cls_turn = !take_cls;
    }
  }

  // Label-negative training draws both negatives from the example's premise
  // group, so every premise must appear with all three labels.
  void build_premise_groups() {
    premise_group_.assign(data_.labeled_pairs.size(), {-1, -1, -1});
    std::size_t i = 0;
    while (i < data_.labeled_pairs.size()) {
      std::size_t j = i;
      std::array<int, 3> by_label{-1, -1, -1};
      while (j < data_.labeled_pairs.size() &&
             data_.labeled_pairs[j].premise == data_.labeled_pairs[i].premise) {
        const int l = static_cast<int>(data_.labeled_pairs[j].label);
        if (by_label[l] != -1)
          throw std::invalid_argument(
              "train: label-negative form needs one hypothesis per label per "
              "premise (duplicate label for premise group at record " +
              std::to_string(j + 1) + ")");
        by_label[l] = static_cast<int>(j);
        ++j;
      }
      for (int l = 0; l < 3; ++l)
        if (by_label[l] == -1)
          throw std::invalid_argument(
              "train: label-negative form needs labeled pairs grouped per "
              "premise covering all 3 labels (incomplete group at record " +
              std::to_string(i + 1) + ")");
      for (std::size_t k = i; k < j; ++k) premise_group_[k] = by_label;
      i = j;
    }
  }

  std::vector<std::size_t> batch_indices(std::size_t n, std::uint64_t salt,
                                         long epoch, long ordinal) const {
    const auto perm = epoch_permutation(
        n, mix_seed(cfg_.seed, salt), static_cast<std::size_t>(epoch));
    const std::size_t begin = static_cast<std::size_t>(ordinal) * bs_;
    const std::size_t end = std::min(n, begin + bs_);
    return {perm.begin() + begin, perm.begin() + end};
  }

  double triplet_step(long epoch, long ordinal, EncoderGrads& acc) {
    const auto idxs =
        batch_indices(data_.triplets.size(), kSaltTriplet, epoch, ordinal);
    const std::size_t k = idxs.size();
    std::vector<ForwardTrace> traces(3 * k);
    std::vector<Vector> inputs(3 * k);
    std::vector<Vector> anchors(k), positives(k), negatives(k);
    for (std::size_t i = 0; i < k; ++i) {
      const TripletExample& t = data_.triplets[idxs[i]];
      std::tie(anchors[i], traces[i]) = encoder_.encode_traced(t.anchor);
      std::tie(positives[i], traces[k + i]) =
          encoder_.encode_traced(t.positive);
      std::tie(negatives[i], traces[2 * k + i]) =
          encoder_.encode_traced(t.negative);
      inputs[i] = anchors[i];
      inputs[k + i] = positives[i];
      inputs[2 * k + i] = negatives[i];
    }
    const auto base = [&](const std::vector<Vector>& views) {
      std::vector<Vector> a(views.begin(), views.begin() + k);
      std::vector<Vector> p(views.begin() + k, views.begin() + 2 * k);
      std::vector<Vector> g(views.begin() + 2 * k, views.end());
      return infonce_triplet(a, p, g, cfg_.infonce_scale);
    };
    const LossOutput out =
        cfg_.matryoshka
            ? matryoshka_wrap(base, inputs, sched_, cfg_.renormalize)
            : base(inputs);
    for (std::size_t i = 0; i < inputs.size(); ++i)
      encoder_.backward(traces[i], out.grads[i], acc);
    return out.value;
  }

  double classification_step(long epoch, long ordinal, EncoderGrads& acc,
                             Matrix& head_grad) {
    const auto idxs =
        batch_indices(data_.labeled_pairs.size(), kSaltCls, epoch, ordinal);
    const std::size_t n = idxs.size();

    ClsBatch batch;
    batch.premises.resize(n);
    batch.hypotheses.resize(n);
    batch.labels.resize(n);
    std::vector<ForwardTrace> premise_traces(n), hyp_traces(n);
    std::vector<ForwardTrace> label_hyp_traces;
    for (std::size_t i = 0; i < n; ++i) {
      const LabeledPair& pair = data_.labeled_pairs[idxs[i]];
      std::tie(batch.premises[i], premise_traces[i]) =
          encoder_.encode_traced(pair.premise);
      std::tie(batch.hypotheses[i], hyp_traces[i]) =
          encoder_.encode_traced(pair.hypothesis);
      batch.labels[i] = static_cast<int>(pair.label);
    }
    if (cfg_.cls_form == ClsLossForm::LabelNegative) {
      batch.hyps_by_label.resize(3 * n);
      label_hyp_traces.resize(3 * n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& group = premise_group_[idxs[i]];
        for (int l = 0; l < 3; ++l)
          std::tie(batch.hyps_by_label[3 * i + l],
                   label_hyp_traces[3 * i + l]) =
              encoder_.encode_traced(
                  data_.labeled_pairs[group[l]].hypothesis);
      }
    }

    TaggedBatch tagged{TaskTag::Classification, std::move(batch)};
    const HybridLossConfig loss_cfg{cfg_.cls_form, Temperature{cfg_.tau}};
    const HeadLossOutput out = hybrid_dispatch(
        tagged, loss_cfg,
        head_ ? *head_ : ClassifierHead{Matrix::Zero(0, 0), true});

    if (cfg_.cls_form == ClsLossForm::SoftmaxHead) {
      for (std::size_t i = 0; i < n; ++i) {
        encoder_.backward(premise_traces[i], out.grads[i], acc);
        encoder_.backward(hyp_traces[i], out.grads[n + i], acc);
      }
      head_grad = out.head_grad;
    } else {
      for (std::size_t i = 0; i < n; ++i)
        encoder_.backward(premise_traces[i], out.grads[i], acc);
      for (std::size_t i = 0; i < 3 * n; ++i)
        encoder_.backward(label_hyp_traces[i], out.grads[n + i], acc);
    }
    return out.value;
  }

  double sts_step(long epoch, long ordinal, EncoderGrads& acc) {
    const auto idxs =
        batch_indices(data_.scored_pairs.size(), kSaltSts, epoch, ordinal);
    const std::size_t n = idxs.size();
    StsBatch batch;
    batch.inputs.resize(2 * n);
    batch.gold.resize(n);
    std::vector<ForwardTrace> traces(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      const ScoredPair& pair = data_.scored_pairs[idxs[i]];
      std::tie(batch.inputs[2 * i], traces[2 * i]) =
          encoder_.encode_traced(pair.text_a);
      std::tie(batch.inputs[2 * i + 1], traces[2 * i + 1]) =
          encoder_.encode_traced(pair.text_b);
      batch.gold[i] = pair.normalized();
    }
    TaggedBatch tagged{TaskTag::Sts, std::move(batch)};
    const HybridLossConfig loss_cfg{cfg_.cls_form, Temperature{cfg_.tau}};
    const HeadLossOutput out = hybrid_dispatch(
        tagged, loss_cfg,
        head_ ? *head_ : ClassifierHead{Matrix::Zero(0, 0), true});
    for (std::size_t i = 0; i < 2 * n; ++i)
      encoder_.backward(traces[i], out.grads[i], acc);
    return out.value;
  }

  void clip_gradients(EncoderGrads& acc, Matrix& head_grad) const {
    if (!(cfg_.grad_clip > 0.0)) return;
    double sq = acc.embed_table.squaredNorm() + acc.proj.squaredNorm() +
                acc.proj_bias.squaredNorm();
    if (head_grad.size()) sq += head_grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm <= cfg_.grad_clip) return;
    const double factor = cfg_.grad_clip / norm;
    acc.embed_table *= factor;
    acc.proj *= factor;
    acc.proj_bias *= factor;
    if (head_grad.size()) head_grad *= factor;
  }

  void snapshot(long step) {
    if (data_.eval_pairs.empty()) return;
    EvalSnapshot snap;
    snap.step = step;
    snap.report = eval_sts(
        encoder_, data_.eval_pairs, sched_.dims,
        {kAllSimilarityKinds.begin(), kAllSimilarityKinds.end()},
        cfg_.renormalize, "eval_pairs", "in-training");
    if (head_ && !data_.eval_labeled.empty()) {
      snap.cls_accuracy =
          classification_accuracy(encoder_, *head_, data_.eval_labeled);
      snap.has_accuracy = true;
    }
    log_.evals.push_back(std::move(snap));
  }

  void save_periodic(long step, const char* stem = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.checkpoint_dir);
    char name[64];
    if (stem)
      std::snprintf(name, sizeof(name), "%s.ckpt", stem);
    else
      std::snprintf(name, sizeof(name), "step_%06ld.ckpt", step);
    TrainCheckpoint ckpt;
    ckpt.model.encoder = encoder_;
    if (head_) {
      ckpt.model.head_weights = head_->weights;
      ckpt.model.head_tied = head_->tied_truncation;
    }
    ckpt.opt = opt_;
    ckpt.seed = cfg_.seed;
    ckpt.step = step;
    save_train_checkpoint((fs::path(cfg_.checkpoint_dir) / name).string(),
                          ckpt);
  }

 public:
  long total_steps() const { return total_steps_; }

 private:
  const TrainData& data_;
  TrainConfig cfg_;
  Encoder encoder_;
  std::optional<ClassifierHead> head_;
  OptimizerState opt_;
  RunLog log_;
  MatryoshkaSchedule sched_;
  int bs_ = 0;
  long steps_per_epoch_ = 0;
  long total_steps_ = 0;
  long cls_batches_ = 0;
  long sts_batches_ = 0;
  std::vector<TaskTag> task_sequence_;
  std::vector<long> task_ordinal_;
  std::vector<std::array<int, 3>> premise_group_;
};

}  // namespace

TrainResult train(const TrainData& data, Encoder encoder,
                  const TrainConfig& config) {
  Session session(data, std::move(encoder), config);
  return session.run(0);
}

TrainResult train_resume(const TrainCheckpoint& ckpt, const TrainData& data,
                         const TrainConfig& config) {
  Session session(data, ckpt.model.encoder, config);
  session.restore(ckpt);
  return session.run(ckpt.step);
}

}  // namespace matemb
