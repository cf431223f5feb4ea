#include "matemb/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace matemb {

using nlohmann::json;

const char* to_string(PairLabel label) {
  switch (label) {
    case PairLabel::Entailment:
      return "entailment";
    case PairLabel::Neutral:
      return "neutral";
    case PairLabel::Contradiction:
      return "contradiction";
  }
  return "?";
}

FileFormat file_format_from_string(std::string_view name) {
  if (name == "jsonl") return FileFormat::Jsonl;
  if (name == "tsv") return FileFormat::Tsv;
  throw std::domain_error("unknown file format '" + std::string(name) + "'");
}

namespace {

[[noreturn]] void fail_at(const std::string& path, std::size_t line,
                          const std::string& what) {
  throw std::runtime_error(path + ": " + what + " at line " +
                           std::to_string(line));
}

PairLabel parse_label(const std::string& token, const std::string& path,
                      std::size_t line) {
  if (token == "entailment") return PairLabel::Entailment;
  if (token == "neutral") return PairLabel::Neutral;
  if (token == "contradiction") return PairLabel::Contradiction;
  fail_at(path, line, "unknown label '" + token + "'");
}

double parse_score(const std::string& token, const std::string& path,
                   std::size_t line) {
  std::size_t consumed = 0;
  double value = 0.0;
  try {
    value = std::stod(token, &consumed);
  } catch (const std::exception&) {
    fail_at(path, line, "malformed score '" + token + "'");
  }
  if (consumed != token.size())
    fail_at(path, line, "malformed score '" + token + "'");
  if (!(value >= 0.0 && value <= 5.0))
    fail_at(path, line,
            "score " + token + " outside [0,5]");
  return value;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return fields;
}

std::string get_string_field(const json& obj, const char* key,
                             const std::string& path, std::size_t line) {
  if (!obj.contains(key) || !obj[key].is_string())
    fail_at(path, line, std::string("missing string field \"") + key + "\"");
  return obj[key].get<std::string>();
}

// Reads nonempty lines, dispatching each to `consume(line_text, line_number)`.
template <typename Fn>
void for_each_line(const std::string& path, Fn&& consume) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    consume(line, number);
  }
}

json parse_json_line(const std::string& line, const std::string& path,
                     std::size_t number) {
  json obj = json::parse(line, nullptr, false);
  if (obj.is_discarded() || !obj.is_object())
    fail_at(path, number, "malformed JSON object");
  return obj;
}

void check_tsv_arity(const std::vector<std::string>& fields,
                     const std::string& path, std::size_t number) {
  if (fields.size() != 3)
    fail_at(path, number,
            "expected 3 tab-separated fields, got " +
                std::to_string(fields.size()));
}

void require_writable(std::ofstream& out, const std::string& path) {
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
}

void check_tsv_safe(const std::string& text, const std::string& path) {
  if (text.find('\t') != std::string::npos ||
      text.find('\n') != std::string::npos)
    throw std::invalid_argument(path +
                                ": text contains tab/newline, not "
                                "representable in TSV");
}

std::string format_score(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

}  // namespace

std::vector<TripletExample> load_triplets(const std::string& path,
                                          FileFormat format,
                                          IngestStats* stats) {
  std::vector<TripletExample> records;
  for_each_line(path, [&](const std::string& line, std::size_t number) {
    TripletExample rec;
    if (format == FileFormat::Jsonl) {
      const json obj = parse_json_line(line, path, number);
      rec.anchor = get_string_field(obj, "anchor", path, number);
      rec.positive = get_string_field(obj, "positive", path, number);
      rec.negative = get_string_field(obj, "negative", path, number);
    } else {
      const auto fields = split_tabs(line);
      check_tsv_arity(fields, path, number);
      rec = {fields[0], fields[1], fields[2]};
    }
    if (rec.anchor.empty() || rec.positive.empty() || rec.negative.empty())
      fail_at(path, number, "empty text field");
    records.push_back(std::move(rec));
  });
  if (stats) {
    stats->records = records.size();
    stats->duplicates = 0;
    for (const auto& r : records)
      if (r.anchor == r.positive || r.anchor == r.negative) ++stats->duplicates;
  }
  return records;
}

std::vector<LabeledPair> load_labeled_pairs(const std::string& path,
                                            FileFormat format,
                                            IngestStats* stats) {
  std::vector<LabeledPair> records;
  for_each_line(path, [&](const std::string& line, std::size_t number) {
    LabeledPair rec;
    if (format == FileFormat::Jsonl) {
      const json obj = parse_json_line(line, path, number);
      rec.premise = get_string_field(obj, "premise", path, number);
      rec.hypothesis = get_string_field(obj, "hypothesis", path, number);
      rec.label =
          parse_label(get_string_field(obj, "label", path, number), path,
                      number);
    } else {
      const auto fields = split_tabs(line);
      check_tsv_arity(fields, path, number);
      rec.premise = fields[0];
      rec.hypothesis = fields[1];
      rec.label = parse_label(fields[2], path, number);
    }
    if (rec.premise.empty() || rec.hypothesis.empty())
      fail_at(path, number, "empty text field");
    records.push_back(std::move(rec));
  });
  if (stats) {
    stats->records = records.size();
    stats->duplicates = 0;
    stats->label_histogram = {0, 0, 0};
    for (const auto& r : records) {
      if (r.premise == r.hypothesis) ++stats->duplicates;
      ++stats->label_histogram[static_cast<int>(r.label)];
    }
  }
  return records;
}

std::vector<ScoredPair> load_scored_pairs(const std::string& path,
                                          FileFormat format,
                                          IngestStats* stats) {
  std::vector<ScoredPair> records;
  for_each_line(path, [&](const std::string& line, std::size_t number) {
    ScoredPair rec;
    if (format == FileFormat::Jsonl) {
      const json obj = parse_json_line(line, path, number);
      rec.text_a = get_string_field(obj, "text_a", path, number);
      rec.text_b = get_string_field(obj, "text_b", path, number);
      if (!obj.contains("score") || !obj["score"].is_number())
        fail_at(path, number, "missing numeric field \"score\"");
      rec.gold_score = obj["score"].get<double>();
      if (!(rec.gold_score >= 0.0 && rec.gold_score <= 5.0))
        fail_at(path, number,
                "score " + format_score(rec.gold_score) + " outside [0,5]");
    } else {
      const auto fields = split_tabs(line);
      check_tsv_arity(fields, path, number);
      rec.text_a = fields[0];
      rec.text_b = fields[1];
      rec.gold_score = parse_score(fields[2], path, number);
    }
    if (rec.text_a.empty() || rec.text_b.empty())
      fail_at(path, number, "empty text field");
    records.push_back(std::move(rec));
  });
  if (stats) {
    stats->records = records.size();
    stats->duplicates = 0;
    for (const auto& r : records)
      if (r.text_a == r.text_b) ++stats->duplicates;
  }
  return records;
}

void write_triplets(const std::string& path, FileFormat format,
                    const std::vector<TripletExample>& records) {
  std::ofstream out(path);
  require_writable(out, path);
  for (const auto& r : records) {
    if (format == FileFormat::Jsonl) {
      out << json{{"anchor", r.anchor},
                  {"positive", r.positive},
                  {"negative", r.negative}}
                 .dump()
          << '\n';
    } else {
      check_tsv_safe(r.anchor, path);
      check_tsv_safe(r.positive, path);
      check_tsv_safe(r.negative, path);
      out << r.anchor << '\t' << r.positive << '\t' << r.negative << '\n';
    }
  }
}

void write_labeled_pairs(const std::string& path, FileFormat format,
                         const std::vector<LabeledPair>& records) {
  std::ofstream out(path);
  require_writable(out, path);
  for (const auto& r : records) {
    if (format == FileFormat::Jsonl) {
      out << json{{"premise", r.premise},
                  {"hypothesis", r.hypothesis},
                  {"label", to_string(r.label)}}
                 .dump()
          << '\n';
    } else {
      check_tsv_safe(r.premise, path);
      check_tsv_safe(r.hypothesis, path);
      out << r.premise << '\t' << r.hypothesis << '\t' << to_string(r.label)
          << '\n';
    }
  }
}

void write_scored_pairs(const std::string& path, FileFormat format,
                        const std::vector<ScoredPair>& records) {
  std::ofstream out(path);
  require_writable(out, path);
  for (const auto& r : records) {
    if (format == FileFormat::Jsonl) {
      out << json{{"text_a", r.text_a},
                  {"text_b", r.text_b},
                  {"score", r.gold_score}}
                 .dump()
          << '\n';
    } else {
      check_tsv_safe(r.text_a, path);
      check_tsv_safe(r.text_b, path);
      out << r.text_a << '\t' << r.text_b << '\t' << format_score(r.gold_score)
          << '\n';
    }
  }
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed,
                                           std::size_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0x9A7C0FFEEULL + epoch));
  rng.shuffle(perm);
  return perm;
}

// ---- synthetic corpus ------------------------------------------------------

namespace {

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i])))
      ++i;
    std::size_t j = i;
    while (j < text.size() &&
           !std::isspace(static_cast<unsigned char>(text[j])))
      ++j;
    if (j > i) tokens.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return tokens;
}

std::string token_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "t%04d", index);
  return buf;
}

std::string join_tokens(const std::vector<int>& ids) {
  std::string text;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) text += ' ';
    text += token_name(ids[i]);
  }
  return text;
}

// Draws `count` distinct values from [begin, begin+size) without replacement.
std::vector<int> draw_distinct(Rng& rng, int begin, int size, int count) {
  std::vector<int> pool(size);
  std::iota(pool.begin(), pool.end(), begin);
  rng.shuffle(pool);
  pool.resize(std::min<std::size_t>(pool.size(), count));
  return pool;
}

}  // namespace

double token_overlap_ratio(std::string_view a, std::string_view b) {
  const auto ta = split_whitespace(a);
  const auto tb = split_whitespace(b);
  const std::set<std::string> sa(ta.begin(), ta.end());
  const std::set<std::string> sb(tb.begin(), tb.end());
  std::size_t common = 0;
  for (const auto& t : sa) common += sb.count(t);
  const std::size_t unioned = sa.size() + sb.size() - common;
  if (unioned == 0) return 0.0;
  return static_cast<double>(common) / static_cast<double>(unioned);
}

double quantize_overlap(double ratio) {
  const double q = std::round(std::clamp(ratio, 0.0, 1.0) * 4.0) / 4.0;
  return q;
}

SynthCorpus synth_corpus(int num_classes, int per_class, int vocab_size,
                         std::uint64_t seed) {
  if (num_classes < 2)
    throw std::invalid_argument("synth_corpus: num_classes must be >= 2");
  if (per_class < 1)
    throw std::invalid_argument("synth_corpus: per_class must be >= 1");
  if (vocab_size < num_classes)
    throw std::invalid_argument(
        "synth_corpus: vocab_size must be >= num_classes");

  // Vocabulary layout: num_classes blocks of class-specific tokens, then a
  // shared pool the texts salt themselves from.
  const int per_block = std::max(1, (vocab_size / 2) / num_classes);
  const int class_total = std::min(per_block * num_classes, vocab_size);
  const int block_size = class_total / num_classes;
  const int shared_begin = block_size * num_classes;
  const int shared_count = vocab_size - shared_begin;

  const int n_class_tokens = std::min(6, block_size);
  const int n_shared_tokens = std::min(6, shared_count);

  Rng rng(mix_seed(seed, 0x5EEDC0DEULL));
  SynthCorpus corpus;
  const int num_texts = num_classes * per_class;
  corpus.texts.reserve(num_texts);
  corpus.classes.reserve(num_texts);

  for (int c = 0; c < num_classes; ++c) {
    for (int k = 0; k < per_class; ++k) {
      std::vector<int> ids =
          draw_distinct(rng, c * block_size, block_size, n_class_tokens);
      const std::vector<int> salt =
          draw_distinct(rng, shared_begin, shared_count, n_shared_tokens);
      ids.insert(ids.end(), salt.begin(), salt.end());
      rng.shuffle(ids);
      corpus.texts.push_back(join_tokens(ids));
      corpus.classes.push_back(c);
    }
  }

  auto random_index_in_class = [&](int c) {
    return c * per_class + static_cast<int>(rng.below(per_class));
  };
  auto random_other_class = [&](int c) {
    return static_cast<int>((c + 1 + rng.below(num_classes - 1)) % num_classes);
  };

  // Triplets: three per anchor.
  for (int a = 0; a < num_texts; ++a) {
    const int c = corpus.classes[a];
    for (int rep = 0; rep < 3; ++rep) {
      int pos = a;
      if (per_class > 1) {
        do {
          pos = random_index_in_class(c);
        } while (pos == a);
      }
      const int neg = random_index_in_class(random_other_class(c));
      corpus.triplets.push_back(
          {corpus.texts[a], corpus.texts[pos], corpus.texts[neg]});
    }
  }

  // Labeled pairs, grouped per premise: entailment / neutral / contradiction
  // by class distance 0 / 1 / >=2. The contradiction member needs >=3 classes.
  for (int a = 0; a < num_texts; ++a) {
    const int c = corpus.classes[a];
    int pos = a;
    if (per_class > 1) {
      do {
        pos = random_index_in_class(c);
      } while (pos == a);
    }
    corpus.labeled_pairs.push_back(
        {corpus.texts[a], corpus.texts[pos], PairLabel::Entailment});

    std::vector<int> adjacent;
    if (c - 1 >= 0) adjacent.push_back(c - 1);
    if (c + 1 < num_classes) adjacent.push_back(c + 1);
    const int cn = adjacent[rng.below(adjacent.size())];
    corpus.labeled_pairs.push_back({corpus.texts[a],
                                    corpus.texts[random_index_in_class(cn)],
                                    PairLabel::Neutral});

    std::vector<int> distant;
    for (int cc = 0; cc < num_classes; ++cc)
      if (std::abs(cc - c) >= 2) distant.push_back(cc);
    if (!distant.empty()) {
      const int cd = distant[rng.below(distant.size())];
      corpus.labeled_pairs.push_back({corpus.texts[a],
                                      corpus.texts[random_index_in_class(cd)],
                                      PairLabel::Contradiction});
    }
  }

  // Scored pairs: one per text, cycling the five overlap targets. The gold
  // level is carried by which of the text's tokens the partner keeps (class
  // tokens, shared-pool salt, or both), while the partner's token
  // multiplicities are skewed against the level. Mean-pooled encoders see
  // frequency mass, the gold sees distinct-token overlap, so an untrained
  // encoder cannot read the gold off the surface; the class structure keeps
  // it learnable. Gold is always recomputed from the final strings.
  for (int a = 0; a < 2 * num_texts; ++a) {
    const int text_idx = a % num_texts;
    const int pass = a / num_texts;
    const int c = corpus.classes[text_idx];
    const int level = (text_idx + 2 * pass) % 5;

    const std::vector<std::string> a_tokens =
        split_whitespace(corpus.texts[text_idx]);
    const std::set<std::string> a_set(a_tokens.begin(), a_tokens.end());
    std::vector<std::string> a_class, a_shared;
    for (const auto& tok : a_set) {
      // Token names are ordinal; the block boundary separates class tokens
      // from shared-pool tokens.
      const int id = std::stoi(tok.substr(1));
      (id < shared_begin ? a_class : a_shared).push_back(tok);
    }
    rng.shuffle(a_class);
    rng.shuffle(a_shared);

    const int adjacent_class = (c + 1 < num_classes) ? c + 1 : c - 1;
    const int distant_class = (c + 2 < num_classes) ? c + 2
                              : (c - 2 >= 0)        ? c - 2
                                                    : adjacent_class;

    auto fresh_from = [&](int begin, int size, int count) {
      std::vector<std::string> out;
      std::vector<int> pool(size);
      std::iota(pool.begin(), pool.end(), begin);
      rng.shuffle(pool);
      for (int id : pool) {
        if (static_cast<int>(out.size()) >= count) break;
        const std::string name = token_name(id);
        if (!a_set.count(name)) out.push_back(name);
      }
      return out;
    };

    // Partner token list with multiplicities.
    std::vector<std::string> partner;
    auto push = [&](const std::vector<std::string>& tokens, int copies) {
      for (const auto& tok : tokens)
        for (int r = 0; r < copies; ++r) partner.push_back(tok);
    };

    switch (level) {
      case 0: {  // disjoint, distant class
        push(fresh_from(distant_class * block_size, block_size,
                        n_class_tokens),
             1);
        push(fresh_from(shared_begin, shared_count, n_shared_tokens), 1);
        break;
      }
      case 1: {  // keeps the salt only, heavily repeated; adjacent class
        std::vector<std::string> kept(
            a_shared.begin(),
            a_shared.begin() + std::min<std::size_t>(5, a_shared.size()));
        push(kept, 5);
        push(fresh_from(adjacent_class * block_size, block_size,
                        n_class_tokens),
             1);
        push(fresh_from(shared_begin, shared_count, 1), 1);
        break;
      }
      case 2: {  // keeps all class tokens plus a little salt; distant filler
        push(a_class, 1);
        push({a_shared.begin(),
              a_shared.begin() + std::min<std::size_t>(2, a_shared.size())},
             1);
        push(fresh_from(distant_class * block_size, block_size, 4), 3);
        break;
      }
      case 3: {  // keeps class tokens and most salt; adjacent filler
        push(a_class, 1);
        push({a_shared.begin(),
              a_shared.begin() + std::min<std::size_t>(4, a_shared.size())},
             1);
        push(fresh_from(adjacent_class * block_size, block_size, 2), 4);
        break;
      }
      case 4: {  // same token set, one class token blown up
        std::vector<std::string> all(a_set.begin(), a_set.end());
        rng.shuffle(all);
        push(all, 1);
        push({a_class.empty() ? all.front() : a_class.front()}, 11);
        break;
      }
    }
    rng.shuffle(partner);

    std::string partner_text;
    for (std::size_t i = 0; i < partner.size(); ++i) {
      if (i) partner_text += ' ';
      partner_text += partner[i];
    }

    const double ratio =
        token_overlap_ratio(corpus.texts[text_idx], partner_text);
    corpus.scored_pairs.push_back(
        {corpus.texts[text_idx], partner_text, quantize_overlap(ratio) * 5.0});
  }

  return corpus;
}

}  // namespace matemb
