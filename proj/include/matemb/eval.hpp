#pragma once

#include "matemb/data.hpp"
#include "matemb/encoder.hpp"
#include "matemb/losses.hpp"
#include "matemb/numerics.hpp"

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace matemb {

// Leading-m slice of a full embedding, optionally re-L2-normalized.
Vector truncate_embedding(const Vector& full, int m, bool renormalize);

struct EvalCell {
  double pearson = 0.0;
  double spearman = 0.0;
};

// Correlation grid over (dimension, similarity kind, {pearson, spearman}).
struct EvalReport {
  std::vector<int> dims;  // descending
  std::vector<SimilarityKind> kinds;
  std::vector<std::vector<EvalCell>> grid;  // [dim index][kind index]
  int full_dim = 0;                         // encoder output dim at eval time
  std::string dataset_id;
  std::string checkpoint_id;
  bool renormalize = true;

  const EvalCell& cell(int dim, SimilarityKind kind) const;
  bool operator==(const EvalReport&) const;
};

// Embeds both sides of every pair, truncates to each dim, scores every
// similarity kind and correlates against the gold scores. Throws
// std::domain_error when gold is constant (correlation undefined).
EvalReport eval_sts(const Encoder& encoder,
                    const std::vector<ScoredPair>& pairs,
                    const std::vector<int>& dims,
                    const std::vector<SimilarityKind>& kinds, bool renormalize,
                    std::string dataset_id = "", std::string checkpoint_id = "");

struct RetentionSummary {
  std::vector<int> dims;
  std::vector<double> average;    // headline metric (Spearman cosine) per dim
  std::vector<double> retention;  // average[m] / average[full_dim]
};

// Requires the report to cover full_dim; retention there is exactly 1.
RetentionSummary retention(const EvalReport& report);

// Single-pair score card at one dimension, all four similarity kinds in
// kAllSimilarityKinds order.
struct PairScoreCard {
  int dim = 0;
  std::array<double, 4> scores{};
};

PairScoreCard inspect_pair(const Encoder& encoder, std::string_view text_a,
                           std::string_view text_b, int dim, bool renormalize);

enum class ReportFormat { Csv, Markdown, Json };
ReportFormat report_format_from_string(std::string_view name);

// Deterministic field order in every format; the markdown table has dims as
// rows and per-kind correlation columns.
std::string emit_report(const EvalReport& report, ReportFormat format);
EvalReport parse_report_json(const std::string& text);

// Argmax accuracy of the softmax head over (premise, hypothesis) pairs.
double classification_accuracy(const Encoder& encoder,
                               const ClassifierHead& head,
                               const std::vector<LabeledPair>& pairs);

}  // namespace matemb
