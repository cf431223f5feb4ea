#include "matemb/run_config.hpp"

#include "matemb/encoder.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace matemb {

using nlohmann::json;

namespace {

template <typename T>
void read_if(const json& obj, const char* key, T& target) {
  if (obj.contains(key)) target = obj.at(key).get<T>();
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }

  RunConfig config;
  if (doc.contains("regime"))
    config.train.regime = regime_from_string(doc.at("regime").get<std::string>());
  read_if(doc, "epochs", config.train.epochs);
  read_if(doc, "batch_size", config.train.batch_size);
  read_if(doc, "learning_rate", config.train.learning_rate);
  read_if(doc, "warmup_ratio", config.train.warmup_ratio);
  read_if(doc, "eval_every", config.train.eval_every);
  read_if(doc, "checkpoint_every", config.train.checkpoint_every);
  if (doc.contains("seed")) {
    config.train.seed = doc.at("seed").get<std::uint64_t>();
    config.seed_provided = true;
  }
  read_if(doc, "grad_clip", config.train.grad_clip);

  if (doc.contains("loss")) {
    const json& loss = doc.at("loss");
    read_if(loss, "tau", config.train.tau);
    read_if(loss, "scale", config.train.infonce_scale);
    read_if(loss, "matryoshka_dims", config.train.matryoshka_dims);
    read_if(loss, "matryoshka_weights", config.train.matryoshka_weights);
    read_if(loss, "renormalize", config.train.renormalize);
    read_if(loss, "matryoshka", config.train.matryoshka);
    if (loss.contains("classification_form"))
      config.train.cls_form = cls_loss_form_from_string(
          loss.at("classification_form").get<std::string>());
  }

  if (doc.contains("encoder")) {
    const json& enc = doc.at("encoder");
    read_if(enc, "hidden", config.encoder.hidden);
    read_if(enc, "dim", config.encoder.dim);
    read_if(enc, "max_len", config.encoder.max_len);
    read_if(enc, "normalize_output", config.encoder.normalize_output);
  }

  if (doc.contains("data")) {
    const json& data = doc.at("data");
    read_if(data, "triplets", config.data.triplets);
    read_if(data, "labeled_pairs", config.data.labeled_pairs);
    read_if(data, "scored_pairs", config.data.scored_pairs);
    read_if(data, "eval_scored_pairs", config.data.eval_scored_pairs);
    read_if(data, "eval_labeled_pairs", config.data.eval_labeled_pairs);
    if (data.contains("format"))
      config.data.format =
          file_format_from_string(data.at("format").get<std::string>());
  }

  if (doc.contains("output")) {
    const json& out = doc.at("output");
    read_if(out, "checkpoint", config.output.checkpoint);
    read_if(out, "runlog", config.output.runlog);
    read_if(out, "checkpoint_dir", config.output.checkpoint_dir);
  }
  config.train.checkpoint_dir = config.output.checkpoint_dir;
  return config;
}

std::string run_config_to_json(const RunConfig& config) {
  json doc;
  doc["regime"] = to_string(config.train.regime);
  doc["epochs"] = config.train.epochs;
  doc["batch_size"] = config.train.batch_size;
  doc["learning_rate"] = config.train.learning_rate;
  doc["warmup_ratio"] = config.train.warmup_ratio;
  doc["eval_every"] = config.train.eval_every;
  doc["checkpoint_every"] = config.train.checkpoint_every;
  doc["seed"] = config.train.seed;
  doc["grad_clip"] = config.train.grad_clip;
  doc["loss"] = {{"tau", config.train.tau},
                 {"scale", config.train.infonce_scale},
                 {"matryoshka_dims", config.train.matryoshka_dims},
                 {"matryoshka_weights", config.train.matryoshka_weights},
                 {"renormalize", config.train.renormalize},
                 {"matryoshka", config.train.matryoshka},
                 {"classification_form", to_string(config.train.cls_form)}};
  doc["encoder"] = {{"hidden", config.encoder.hidden},
                    {"dim", config.encoder.dim},
                    {"max_len", config.encoder.max_len},
                    {"normalize_output", config.encoder.normalize_output}};
  doc["data"] = {{"triplets", config.data.triplets},
                 {"labeled_pairs", config.data.labeled_pairs},
                 {"scored_pairs", config.data.scored_pairs},
                 {"eval_scored_pairs", config.data.eval_scored_pairs},
                 {"eval_labeled_pairs", config.data.eval_labeled_pairs},
                 {"format", config.data.format == FileFormat::Jsonl ? "jsonl"
                                                                    : "tsv"}};
  doc["output"] = {{"checkpoint", config.output.checkpoint},
                   {"runlog", config.output.runlog},
                   {"checkpoint_dir", config.output.checkpoint_dir}};
  return doc.dump(2) + "\n";
}

TrainData load_train_data(const DataPaths& paths) {
  TrainData data;
  if (!paths.triplets.empty())
    data.triplets = load_triplets(paths.triplets, paths.format);
  if (!paths.labeled_pairs.empty())
    data.labeled_pairs = load_labeled_pairs(paths.labeled_pairs, paths.format);
  if (!paths.scored_pairs.empty())
    data.scored_pairs = load_scored_pairs(paths.scored_pairs, paths.format);
  if (!paths.eval_scored_pairs.empty())
    data.eval_pairs = load_scored_pairs(paths.eval_scored_pairs, paths.format);
  if (!paths.eval_labeled_pairs.empty())
    data.eval_labeled =
        load_labeled_pairs(paths.eval_labeled_pairs, paths.format);
  return data;
}

std::vector<std::string> collect_vocabulary(const TrainData& data) {
  std::set<std::string> tokens;
  auto add_text = [&](const std::string& text) {
    std::istringstream words(text);
    std::string word;
    while (words >> word) {
      for (char& c : word)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      tokens.insert(word);
    }
  };
  for (const auto& t : data.triplets) {
    add_text(t.anchor);
    add_text(t.positive);
    add_text(t.negative);
  }
  for (const auto& p : data.labeled_pairs) {
    add_text(p.premise);
    add_text(p.hypothesis);
  }
  for (const auto& p : data.scored_pairs) {
    add_text(p.text_a);
    add_text(p.text_b);
  }
  return {tokens.begin(), tokens.end()};
}

Encoder build_encoder(const EncoderConfig& config, const TrainData& data,
                      std::uint64_t seed) {
  const auto vocab = collect_vocabulary(data);
  if (vocab.empty())
    throw std::invalid_argument("build_encoder: no training texts to build a "
                                "vocabulary from");
  Tokenizer tokenizer = Tokenizer::build(vocab, config.max_len);
  EncoderParams params =
      init_params(tokenizer.vocab_size(), config.hidden, config.dim, seed,
                  config.normalize_output);
  return Encoder(std::move(tokenizer), std::move(params));
}

}  // namespace matemb
