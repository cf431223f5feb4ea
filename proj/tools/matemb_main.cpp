// matemb: train, evaluate and probe multi-granular text embeddings.

#include <CLI11.hpp>

#include "matemb/data.hpp"
#include "matemb/encoder.hpp"
#include "matemb/eval.hpp"
#include "matemb/gradcheck_suite.hpp"
#include "matemb/losses.hpp"
#include "matemb/run_config.hpp"
#include "matemb/trainer.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace matemb;
using nlohmann::json;

namespace {

std::vector<int> default_dims(int d_full) {
  return MatryoshkaSchedule::halving(d_full, 8).dims;
}

std::vector<SimilarityKind> parse_kinds(const std::vector<std::string>& names) {
  if (names.empty())
    return {kAllSimilarityKinds.begin(), kAllSimilarityKinds.end()};
  std::vector<SimilarityKind> kinds;
  for (const auto& n : names) kinds.push_back(similarity_kind_from_string(n));
  return kinds;
}

const char* report_extension(ReportFormat format) {
  switch (format) {
    case ReportFormat::Csv:
      return "csv";
    case ReportFormat::Markdown:
      return "md";
    case ReportFormat::Json:
      return "json";
  }
  return "txt";
}

int run_synth_data(int classes, int per_class, int vocab, std::uint64_t seed,
                   const std::string& out_dir, const std::string& format_name) {
  const FileFormat format = file_format_from_string(format_name);
  const char* ext = format == FileFormat::Jsonl ? "jsonl" : "tsv";
  const SynthCorpus corpus = synth_corpus(classes, per_class, vocab, seed);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_triplets((dir / (std::string("triplets.") + ext)).string(), format,
                 corpus.triplets);
  write_labeled_pairs((dir / (std::string("labeled_pairs.") + ext)).string(),
                      format, corpus.labeled_pairs);
  write_scored_pairs((dir / (std::string("scored_pairs.") + ext)).string(),
                     format, corpus.scored_pairs);
  std::cout << "wrote " << corpus.triplets.size() << " triplets, "
            << corpus.labeled_pairs.size() << " labeled pairs, "
            << corpus.scored_pairs.size() << " scored pairs to " << out_dir
            << "\n";
  return 0;
}

int run_gradcheck(std::uint64_t seed, int trials, double tolerance) {
  const auto results = run_loss_gradient_suite(seed, trials);
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.max_rel_err < tolerance;
    ok = ok && pass;
    std::printf("%-32s max_rel_err %.3e  [%s]\n", r.name.c_str(),
                r.max_rel_err, pass ? "ok" : "FAIL");
  }
  if (!ok) {
    std::cerr << "gradcheck: at least one loss exceeded tolerance "
              << tolerance << "\n";
    return 2;
  }
  return 0;
}

int run_train(const std::string& config_path, RunConfig config,
              bool seed_from_flag) {
  if (!config.seed_provided && !seed_from_flag)
    throw std::invalid_argument(
        "train: a seed is required (config \"seed\" or --seed)");
  if (config.output.checkpoint.empty())
    throw std::invalid_argument(
        "train: output.checkpoint missing in " + config_path +
        " (or pass --out)");

  const TrainData data = load_train_data(config.data);
  Encoder encoder = build_encoder(config.encoder, data, config.train.seed);
  TrainResult result = train(data, std::move(encoder), config.train);

  Checkpoint ckpt;
  ckpt.encoder = std::move(result.encoder);
  if (result.head) {
    ckpt.head_weights = result.head->weights;
    ckpt.head_tied = result.head->tied_truncation;
  }
  save_checkpoint(config.output.checkpoint, ckpt);
  std::cout << "checkpoint " << config.output.checkpoint << "\n";

  if (!config.output.runlog.empty()) {
    write_runlog_jsonl(config.output.runlog, result.log);
    std::cout << "runlog " << config.output.runlog << "\n";
  }
  if (!result.log.evals.empty()) {
    const EvalSnapshot& last = result.log.evals.back();
    const double headline =
        last.report.cell(last.report.full_dim, SimilarityKind::Cosine)
            .spearman;
    std::cout << "final eval: spearman-cosine@" << last.report.full_dim << " "
              << headline;
    if (last.has_accuracy) std::cout << ", accuracy " << last.cls_accuracy;
    std::cout << "\n";
  }
  return 0;
}

int run_evaluate(const std::string& ckpt_path, const std::string& scored_path,
                 const std::string& labeled_path,
                 const std::string& data_format, std::vector<int> dims,
                 const std::vector<std::string>& kind_names, bool renormalize,
                 const std::string& report_format_name,
                 const std::string& out_path, bool with_retention) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const FileFormat format = file_format_from_string(data_format);
  const auto pairs = load_scored_pairs(scored_path, format);
  if (dims.empty()) dims = default_dims(ckpt.encoder.params.dim());
  const auto kinds = parse_kinds(kind_names);
  const ReportFormat report_format =
      report_format_from_string(report_format_name);

  const EvalReport report =
      eval_sts(ckpt.encoder, pairs, dims, kinds, renormalize,
               fs::path(scored_path).stem().string(),
               fs::path(ckpt_path).stem().string());
  const std::string rendered = emit_report(report, report_format);

  if (out_path.empty()) {
    std::cout << rendered;
  } else {
    fs::path target(out_path);
    if (fs::is_directory(target) || out_path.back() == '/') {
      fs::create_directories(target);
      target /= report.checkpoint_id + "_" + report.dataset_id + "_eval." +
                report_extension(report_format);
    }
    std::ofstream out(target);
    if (!out)
      throw std::runtime_error(target.string() + ": cannot open for writing");
    out << rendered;
    std::cout << "report " << target.string() << "\n";
  }

  if (with_retention) {
    const RetentionSummary summary = retention(report);
    std::cout << "retention (spearman cosine):\n";
    for (std::size_t i = 0; i < summary.dims.size(); ++i)
      std::printf("  dim %-5d avg %.6f  retention %.4f\n", summary.dims[i],
                  summary.average[i], summary.retention[i]);
  }

  if (!labeled_path.empty()) {
    if (!ckpt.head_weights)
      throw std::invalid_argument(
          "evaluate: --labeled needs a checkpoint with a classification head");
    const ClassifierHead head{*ckpt.head_weights, ckpt.head_tied};
    const auto labeled = load_labeled_pairs(labeled_path, format);
    std::printf("classification accuracy %.6f over %zu pairs\n",
                classification_accuracy(ckpt.encoder, head, labeled),
                labeled.size());
  }
  return 0;
}

int run_embed(const std::string& ckpt_path, const std::string& input_path,
              int dim, bool renormalize) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (dim == 0) dim = ckpt.encoder.params.dim();

  std::ifstream file;
  std::istream* in = &std::cin;
  if (!input_path.empty() && input_path != "-") {
    file.open(input_path);
    if (!file)
      throw std::runtime_error(input_path + ": cannot open for reading");
    in = &file;
  }
  std::string line;
  while (std::getline(*in, line)) {
    if (line.empty()) continue;
    const Vector emb =
        truncate_embedding(ckpt.encoder.encode(line), dim, renormalize);
    json rec;
    rec["text"] = line;
    rec["embedding"] = std::vector<double>(emb.data(), emb.data() + emb.size());
    std::cout << rec.dump() << "\n";
  }
  return 0;
}

int run_inspect(const std::string& ckpt_path, const std::string& text_a,
                const std::string& text_b, int dim, bool renormalize) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (dim == 0) dim = ckpt.encoder.params.dim();
  const PairScoreCard card =
      inspect_pair(ckpt.encoder, text_a, text_b, dim, renormalize);
  std::printf("dim %d\n", card.dim);
  for (std::size_t k = 0; k < kAllSimilarityKinds.size(); ++k)
    std::printf("%-10s % .6f\n", to_string(kAllSimilarityKinds[k]),
                card.scores[k]);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-granular text embedding trainer and STS evaluator"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic corpus");
  int classes = 4, per_class = 50, vocab = 200;
  std::uint64_t synth_seed = 0;
  std::string synth_out, synth_format = "jsonl";
  synth->add_option("--classes", classes, "number of classes")->required();
  synth->add_option("--per-class", per_class, "texts per class")->required();
  synth->add_option("--vocab", vocab, "vocabulary size");
  synth->add_option("--seed", synth_seed, "generator seed")->required();
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--format", synth_format, "jsonl or tsv");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference loss checks");
  std::uint64_t gc_seed = 7;
  int gc_trials = 10;
  double gc_tol = 1e-4;
  gc->add_option("--seed", gc_seed, "suite seed");
  gc->add_option("--trials", gc_trials, "instances per loss");
  gc->add_option("--tolerance", gc_tol, "max relative error");

  // train
  auto* tr = app.add_subcommand("train", "run a training regime");
  std::string config_path;
  tr->add_option("--config", config_path, "run config JSON")->required();
  std::optional<int> o_epochs, o_batch, o_eval_every, o_ckpt_every;
  std::optional<double> o_lr, o_warmup;
  std::optional<std::uint64_t> o_seed;
  std::optional<std::string> o_regime, o_out, o_runlog, o_ckpt_dir;
  std::optional<bool> o_matryoshka, o_renorm;
  tr->add_option("--epochs", o_epochs);
  tr->add_option("--batch-size", o_batch);
  tr->add_option("--lr", o_lr);
  tr->add_option("--warmup-ratio", o_warmup);
  tr->add_option("--seed", o_seed);
  tr->add_option("--eval-every", o_eval_every);
  tr->add_option("--checkpoint-every", o_ckpt_every);
  tr->add_option("--regime", o_regime, "matryoshka-triplet | hybrid-multitask");
  tr->add_option("--out", o_out, "final checkpoint path");
  tr->add_option("--runlog", o_runlog);
  tr->add_option("--ckpt-dir", o_ckpt_dir);
  tr->add_option("--matryoshka", o_matryoshka, "wrap triplet loss (1|0)");
  tr->add_option("--renormalize", o_renorm, "renormalize truncations (1|0)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "STS correlation grid");
  std::string ev_ckpt, ev_scored, ev_labeled, ev_data_format = "jsonl";
  std::string ev_report_format = "markdown", ev_out;
  std::vector<int> ev_dims;
  std::vector<std::string> ev_kinds;
  bool ev_renorm = true, ev_retention = false;
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--scored", ev_scored, "scored-pair dataset")->required();
  ev->add_option("--labeled", ev_labeled, "labeled pairs for head accuracy");
  ev->add_option("--data-format", ev_data_format, "jsonl or tsv");
  ev->add_option("--dims", ev_dims, "dimensions (default: halving schedule)");
  ev->add_option("--kinds", ev_kinds, "cosine dot euclidean manhattan");
  ev->add_flag("--renormalize,!--no-renormalize", ev_renorm,
               "renormalize truncations");
  ev->add_option("--format", ev_report_format, "csv | markdown | json");
  ev->add_option("--out", ev_out, "report file or directory");
  ev->add_flag("--retention", ev_retention, "print retention summary");

  // embed
  auto* em = app.add_subcommand("embed", "embed lines of text as JSONL");
  std::string em_ckpt, em_input;
  int em_dim = 0;
  bool em_renorm = true;
  em->add_option("--ckpt", em_ckpt)->required();
  em->add_option("--input", em_input, "text file, one per line (default stdin)");
  em->add_option("--dim", em_dim, "truncation dim (default: full)");
  em->add_flag("--renormalize,!--no-renormalize", em_renorm);

  // inspect
  auto* in = app.add_subcommand("inspect", "score one pair, all kinds");
  std::string in_ckpt, in_a, in_b;
  int in_dim = 0;
  bool in_renorm = true;
  in->add_option("--ckpt", in_ckpt)->required();
  in->add_option("--a", in_a, "first text")->required();
  in->add_option("--b", in_b, "second text")->required();
  in->add_option("--dim", in_dim, "truncation dim (default: full)");
  in->add_flag("--renormalize,!--no-renormalize", in_renorm);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth)
      return run_synth_data(classes, per_class, vocab, synth_seed, synth_out,
                            synth_format);
    if (*gc) return run_gradcheck(gc_seed, gc_trials, gc_tol);
    if (*tr) {
      RunConfig config = load_run_config(config_path);
      if (o_epochs) config.train.epochs = *o_epochs;
      if (o_batch) config.train.batch_size = *o_batch;
      if (o_lr) config.train.learning_rate = *o_lr;
      if (o_warmup) config.train.warmup_ratio = *o_warmup;
      if (o_seed) config.train.seed = *o_seed;
      if (o_eval_every) config.train.eval_every = *o_eval_every;
      if (o_ckpt_every) config.train.checkpoint_every = *o_ckpt_every;
      if (o_regime) config.train.regime = regime_from_string(*o_regime);
      if (o_out) config.output.checkpoint = *o_out;
      if (o_runlog) config.output.runlog = *o_runlog;
      if (o_ckpt_dir) {
        config.output.checkpoint_dir = *o_ckpt_dir;
        config.train.checkpoint_dir = *o_ckpt_dir;
      }
      if (o_matryoshka) config.train.matryoshka = *o_matryoshka;
      if (o_renorm) config.train.renormalize = *o_renorm;
      return run_train(config_path, std::move(config), o_seed.has_value());
    }
    if (*ev)
      return run_evaluate(ev_ckpt, ev_scored, ev_labeled, ev_data_format,
                          ev_dims, ev_kinds, ev_renorm, ev_report_format,
                          ev_out, ev_retention);
    if (*em) return run_embed(em_ckpt, em_input, em_dim, em_renorm);
    if (*in) return run_inspect(in_ckpt, in_a, in_b, in_dim, in_renorm);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
