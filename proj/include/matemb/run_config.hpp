#pragma once

#include "matemb/data.hpp"
#include "matemb/trainer.hpp"

#include <string>

namespace matemb {

// Encoder shape for a fresh run; the vocabulary is built from the training
// texts (sorted unique tokens) so runs are reproducible from config + data.
struct EncoderConfig {
  int hidden = 64;
  int dim = 64;
  std::size_t max_len = 512;
  bool normalize_output = true;
};

struct DataPaths {
  std::string triplets;
  std::string labeled_pairs;
  std::string scored_pairs;
  std::string eval_scored_pairs;
  std::string eval_labeled_pairs;
  FileFormat format = FileFormat::Jsonl;
};

struct OutputPaths {
  std::string checkpoint;      // final model checkpoint
  std::string runlog;          // JSONL step/eval log
  std::string checkpoint_dir;  // periodic full training state
};

// One run config document: training hyperparameters, loss settings, encoder
// shape, dataset paths, output paths.
struct RunConfig {
  TrainConfig train;
  EncoderConfig encoder;
  DataPaths data;
  OutputPaths output;
  bool seed_provided = false;  // train refuses to run without an explicit seed
};

RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& config);

// Loads whatever dataset paths are set.
TrainData load_train_data(const DataPaths& paths);

// Sorted unique whitespace tokens (lowercase-folded) over all training texts.
std::vector<std::string> collect_vocabulary(const TrainData& data);

// init_params + tokenizer from config and data.
Encoder build_encoder(const EncoderConfig& config, const TrainData& data,
                      std::uint64_t seed);

}  // namespace matemb
