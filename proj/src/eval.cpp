#include "matemb/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace matemb {

using nlohmann::json;

Vector truncate_embedding(const Vector& full, int m, bool renormalize) {
  if (m < 1 || m > full.size())
    throw std::invalid_argument("truncate_embedding: dim " + std::to_string(m) +
                                " outside [1, " + std::to_string(full.size()) +
                                "]");
  Vector v = full.head(m);
  if (renormalize) {
    const double norm = v.norm();
    if (norm == 0.0)
      throw std::domain_error(
          "truncate_embedding: zero-norm truncation cannot be renormalized");
    v /= norm;
  }
  return v;
}

const EvalCell& EvalReport::cell(int dim, SimilarityKind kind) const {
  for (std::size_t di = 0; di < dims.size(); ++di) {
    if (dims[di] != dim) continue;
    for (std::size_t ki = 0; ki < kinds.size(); ++ki)
      if (kinds[ki] == kind) return grid[di][ki];
  }
  throw std::invalid_argument("eval report: no cell for dim " +
                              std::to_string(dim) + ", kind " +
                              to_string(kind));
}

bool EvalReport::operator==(const EvalReport& other) const {
  if (dims != other.dims || kinds != other.kinds ||
      full_dim != other.full_dim || dataset_id != other.dataset_id ||
      checkpoint_id != other.checkpoint_id ||
      renormalize != other.renormalize || grid.size() != other.grid.size())
    return false;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i].size() != other.grid[i].size()) return false;
    for (std::size_t j = 0; j < grid[i].size(); ++j)
      if (grid[i][j].pearson != other.grid[i][j].pearson ||
          grid[i][j].spearman != other.grid[i][j].spearman)
        return false;
  }
  return true;
}

EvalReport eval_sts(const Encoder& encoder,
                    const std::vector<ScoredPair>& pairs,
                    const std::vector<int>& dims,
                    const std::vector<SimilarityKind>& kinds, bool renormalize,
                    std::string dataset_id, std::string checkpoint_id) {
  if (pairs.size() < 2)
    throw std::invalid_argument("eval_sts: need at least 2 scored pairs");
  if (dims.empty() || kinds.empty())
    throw std::invalid_argument("eval_sts: empty dims or kinds");

  std::vector<double> gold;
  gold.reserve(pairs.size());
  for (const auto& p : pairs) gold.push_back(p.gold_score);
  if (std::all_of(gold.begin(), gold.end(),
                  [&](double g) { return g == gold.front(); }))
    throw std::domain_error(
        "eval_sts: constant gold scores, correlation undefined");

  EvalReport report;
  report.dims = dims;
  std::sort(report.dims.begin(), report.dims.end(), std::greater<int>());
  report.dims.erase(std::unique(report.dims.begin(), report.dims.end()),
                    report.dims.end());
  report.kinds = kinds;
  report.full_dim = encoder.params.dim();
  report.dataset_id = std::move(dataset_id);
  report.checkpoint_id = std::move(checkpoint_id);
  report.renormalize = renormalize;

  // Each distinct text is embedded once.
  std::map<std::string, Vector> cache;
  auto embed = [&](const std::string& text) -> const Vector& {
    auto it = cache.find(text);
    if (it == cache.end()) it = cache.emplace(text, encoder.encode(text)).first;
    return it->second;
  };

  report.grid.assign(report.dims.size(), std::vector<EvalCell>(kinds.size()));
  for (std::size_t di = 0; di < report.dims.size(); ++di) {
    const int m = report.dims[di];
    std::vector<std::pair<Vector, Vector>> truncated;
    truncated.reserve(pairs.size());
    for (const auto& p : pairs)
      truncated.emplace_back(truncate_embedding(embed(p.text_a), m, renormalize),
                             truncate_embedding(embed(p.text_b), m, renormalize));
    for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
      std::vector<double> predicted;
      predicted.reserve(pairs.size());
      for (const auto& [a, b] : truncated)
        predicted.push_back(similarity(kinds[ki], a, b));
      report.grid[di][ki].pearson = pearson(predicted, gold);
      report.grid[di][ki].spearman = spearman(predicted, gold);
    }
  }
  return report;
}

RetentionSummary retention(const EvalReport& report) {
  const auto full_it =
      std::find(report.dims.begin(), report.dims.end(), report.full_dim);
  if (full_it == report.dims.end())
    throw std::invalid_argument(
        "retention: report does not cover the full dimension " +
        std::to_string(report.full_dim));
  const double full_score =
      report.cell(report.full_dim, SimilarityKind::Cosine).spearman;
  if (full_score == 0.0)
    throw std::domain_error("retention: full-dim score is zero");

  RetentionSummary summary;
  summary.dims = report.dims;
  for (int m : report.dims) {
    const double score = report.cell(m, SimilarityKind::Cosine).spearman;
    summary.average.push_back(score);
    summary.retention.push_back(score / full_score);
  }
  return summary;
}

PairScoreCard inspect_pair(const Encoder& encoder, std::string_view text_a,
                           std::string_view text_b, int dim, bool renormalize) {
  const Vector a = truncate_embedding(encoder.encode(text_a), dim, renormalize);
  const Vector b = truncate_embedding(encoder.encode(text_b), dim, renormalize);
  PairScoreCard card;
  card.dim = dim;
  for (std::size_t k = 0; k < kAllSimilarityKinds.size(); ++k)
    card.scores[k] = similarity(kAllSimilarityKinds[k], a, b);
  return card;
}

ReportFormat report_format_from_string(std::string_view name) {
  if (name == "csv") return ReportFormat::Csv;
  if (name == "markdown" || name == "md") return ReportFormat::Markdown;
  if (name == "json") return ReportFormat::Json;
  throw std::domain_error("unknown report format '" + std::string(name) + "'");
}

namespace {

std::string fmt_score(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_table(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

std::string emit_report(const EvalReport& report, ReportFormat format) {
  std::ostringstream out;
  switch (format) {
    case ReportFormat::Csv: {
      out << "dim,kind,correlation,score\n";
      for (std::size_t di = 0; di < report.dims.size(); ++di)
        for (std::size_t ki = 0; ki < report.kinds.size(); ++ki) {
          out << report.dims[di] << ',' << to_string(report.kinds[ki])
              << ",pearson," << fmt_score(report.grid[di][ki].pearson) << '\n';
          out << report.dims[di] << ',' << to_string(report.kinds[ki])
              << ",spearman," << fmt_score(report.grid[di][ki].spearman)
              << '\n';
        }
      return out.str();
    }
    case ReportFormat::Markdown: {
      out << "| dim |";
      for (const auto kind : report.kinds)
        out << " pearson " << to_string(kind) << " | spearman "
            << to_string(kind) << " |";
      out << "\n|---:|";
      for (std::size_t ki = 0; ki < report.kinds.size(); ++ki)
        out << "---:|---:|";
      out << '\n';
      for (std::size_t di = 0; di < report.dims.size(); ++di) {
        out << "| " << report.dims[di] << " |";
        for (std::size_t ki = 0; ki < report.kinds.size(); ++ki)
          out << ' ' << fmt_table(report.grid[di][ki].pearson) << " | "
              << fmt_table(report.grid[di][ki].spearman) << " |";
        out << '\n';
      }
      return out.str();
    }
    case ReportFormat::Json: {
      json doc;
      doc["dataset_id"] = report.dataset_id;
      doc["checkpoint_id"] = report.checkpoint_id;
      doc["renormalize"] = report.renormalize;
      doc["full_dim"] = report.full_dim;
      doc["dims"] = report.dims;
      json kinds = json::array();
      for (const auto kind : report.kinds) kinds.push_back(to_string(kind));
      doc["kinds"] = kinds;
      json grid = json::array();
      for (std::size_t di = 0; di < report.dims.size(); ++di)
        for (std::size_t ki = 0; ki < report.kinds.size(); ++ki)
          grid.push_back({{"dim", report.dims[di]},
                          {"kind", to_string(report.kinds[ki])},
                          {"pearson", report.grid[di][ki].pearson},
                          {"spearman", report.grid[di][ki].spearman}});
      doc["grid"] = grid;
      return doc.dump(2) + "\n";
    }
  }
  throw std::domain_error("emit_report: unknown format");
}

EvalReport parse_report_json(const std::string& text) {
  const json doc = json::parse(text);
  EvalReport report;
  report.dataset_id = doc.at("dataset_id").get<std::string>();
  report.checkpoint_id = doc.at("checkpoint_id").get<std::string>();
  report.renormalize = doc.at("renormalize").get<bool>();
  report.full_dim = doc.at("full_dim").get<int>();
  report.dims = doc.at("dims").get<std::vector<int>>();
  for (const auto& k : doc.at("kinds"))
    report.kinds.push_back(similarity_kind_from_string(k.get<std::string>()));
  report.grid.assign(report.dims.size(),
                     std::vector<EvalCell>(report.kinds.size()));
  for (const auto& entry : doc.at("grid")) {
    const int dim = entry.at("dim").get<int>();
    const SimilarityKind kind =
        similarity_kind_from_string(entry.at("kind").get<std::string>());
    const auto di = static_cast<std::size_t>(
        std::find(report.dims.begin(), report.dims.end(), dim) -
        report.dims.begin());
    const auto ki = static_cast<std::size_t>(
        std::find(report.kinds.begin(), report.kinds.end(), kind) -
        report.kinds.begin());
    if (di >= report.dims.size() || ki >= report.kinds.size())
      throw std::runtime_error("eval report: grid entry outside dims/kinds");
    report.grid[di][ki].pearson = entry.at("pearson").get<double>();
    report.grid[di][ki].spearman = entry.at("spearman").get<double>();
  }
  return report;
}

double classification_accuracy(const Encoder& encoder,
                               const ClassifierHead& head,
                               const std::vector<LabeledPair>& pairs) {
  if (pairs.empty())
    throw std::invalid_argument("classification_accuracy: no pairs");
  const int d = encoder.params.dim();
  if (head.feature_dim() != 3 * d)
    throw std::invalid_argument(
        "classification_accuracy: head feature dim does not match encoder");
  std::size_t correct = 0;
  for (const auto& pair : pairs) {
    const Vector u = encoder.encode(pair.premise);
    const Vector v = encoder.encode(pair.hypothesis);
    Vector feat(3 * d);
    feat.head(d) = u;
    feat.segment(d, d) = v;
    feat.tail(d) = (u - v).cwiseAbs();
    const Vector logits = head.weights * feat;
    Eigen::Index best = 0;
    for (Eigen::Index l = 1; l < logits.size(); ++l)
      if (logits(l) > logits(best)) best = l;
    if (best == static_cast<int>(pair.label)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

}  // namespace matemb
