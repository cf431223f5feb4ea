#pragma once

#include "matemb/rng.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace matemb {

// ---- record types ----------------------------------------------------------

struct TripletExample {
  std::string anchor;
  std::string positive;
  std::string negative;
  bool operator==(const TripletExample&) const = default;
};

enum class PairLabel : int { Entailment = 0, Neutral = 1, Contradiction = 2 };

const char* to_string(PairLabel label);

struct LabeledPair {
  std::string premise;
  std::string hypothesis;
  PairLabel label = PairLabel::Entailment;
  bool operator==(const LabeledPair&) const = default;
};

struct ScoredPair {
  std::string text_a;
  std::string text_b;
  double gold_score = 0.0;  // ingested on the 0-5 scale
  // All loss/eval code consumes the normalized score.
  double normalized() const { return gold_score / 5.0; }
  bool operator==(const ScoredPair&) const = default;
};

struct IngestStats {
  std::size_t records = 0;
  // Records whose texts repeat within the record (anchor==positive etc.).
  std::size_t duplicates = 0;
  std::array<std::size_t, 3> label_histogram{0, 0, 0};
};

enum class FileFormat { Jsonl, Tsv };

FileFormat file_format_from_string(std::string_view name);

// ---- loaders / writers -----------------------------------------------------
//
// JSONL field names: triplet {"anchor","positive","negative"}, labeled pair
// {"premise","hypothesis","label"}, scored pair {"text_a","text_b","score"}.
// TSV columns follow the same order, tab-separated, no header. Loaders throw
// std::runtime_error naming the file and 1-based line of the first bad record.

std::vector<TripletExample> load_triplets(const std::string& path,
                                          FileFormat format,
                                          IngestStats* stats = nullptr);
std::vector<LabeledPair> load_labeled_pairs(const std::string& path,
                                            FileFormat format,
                                            IngestStats* stats = nullptr);
std::vector<ScoredPair> load_scored_pairs(const std::string& path,
                                          FileFormat format,
                                          IngestStats* stats = nullptr);

void write_triplets(const std::string& path, FileFormat format,
                    const std::vector<TripletExample>& records);
void write_labeled_pairs(const std::string& path, FileFormat format,
                         const std::vector<LabeledPair>& records);
void write_scored_pairs(const std::string& path, FileFormat format,
                        const std::vector<ScoredPair>& records);

// ---- deterministic batching ------------------------------------------------

// Pure function of (n, seed, epoch); identical across runs and platforms.
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed,
                                           std::size_t epoch);

template <typename T>
struct Batch {
  std::vector<T> items;
  std::size_t epoch = 0;
  std::size_t index = 0;
};

// Seeded shuffle chunked into batches; the final partial batch is kept.
// Contrastive datasets need batch_size >= 2 for in-batch negatives.
template <typename T>
std::vector<Batch<T>> batch_iter(const std::vector<T>& records,
                                 std::size_t batch_size, std::uint64_t seed,
                                 std::size_t epoch, bool contrastive = false) {
  if (batch_size == 0)
    throw std::invalid_argument("batch_iter: batch_size must be >= 1");
  if (contrastive && batch_size < 2)
    throw std::invalid_argument(
        "batch_iter: contrastive data needs batch_size >= 2 for in-batch "
        "negatives");
  const std::vector<std::size_t> perm =
      epoch_permutation(records.size(), seed, epoch);
  std::vector<Batch<T>> batches;
  for (std::size_t start = 0; start < perm.size(); start += batch_size) {
    Batch<T> b;
    b.epoch = epoch;
    b.index = batches.size();
    const std::size_t end = std::min(perm.size(), start + batch_size);
    b.items.reserve(end - start);
    for (std::size_t k = start; k < end; ++k)
      b.items.push_back(records[perm[k]]);
    batches.push_back(std::move(b));
  }
  return batches;
}

// ---- synthetic corpus ------------------------------------------------------

struct SynthCorpus {
  std::vector<std::string> texts;  // num_classes * per_class entries
  std::vector<int> classes;        // class id per text
  std::vector<TripletExample> triplets;
  std::vector<LabeledPair> labeled_pairs;  // grouped 3-per-premise when
                                           // num_classes >= 3
  std::vector<ScoredPair> scored_pairs;
};

// Deterministic desk-scale corpus. The vocabulary splits into per-class token
// blocks plus a shared pool (with a small high-frequency subset); triplets
// pair same-class texts as anchor/positive against a cross-class negative;
// labeled pairs map class distance 0/1/>=2 to entailment/neutral/contradiction;
// scored pairs carry gold = token-overlap ratio quantized to {0,.25,.5,.75,1}
// and rescaled to [0,5].
SynthCorpus synth_corpus(int num_classes, int per_class, int vocab_size,
                         std::uint64_t seed);

// Jaccard overlap of the unique-token sets of two whitespace-split texts.
double token_overlap_ratio(std::string_view a, std::string_view b);

// Nearest of {0, 0.25, 0.5, 0.75, 1}.
double quantize_overlap(double ratio);

}  // namespace matemb
