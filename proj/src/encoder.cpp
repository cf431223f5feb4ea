#include "matemb/encoder.hpp"

#include "binary_io.hpp"
#include "matemb/rng.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace matemb {

Tokenizer Tokenizer::build(const std::vector<std::string>& tokens,
                           std::size_t max_len) {
  Tokenizer tok;
  tok.max_len = max_len;
  tok.id_to_token.push_back("<unk>");
  tok.token_to_id["<unk>"] = 0;
  tok.unk_id = 0;
  for (const auto& raw : tokens) {
    std::string folded = raw;
    for (char& c : folded)
      c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (folded.empty()) continue;
    if (tok.token_to_id.emplace(folded, tok.vocab_size()).second)
      tok.id_to_token.push_back(folded);
  }
  return tok;
}

std::vector<int> Tokenizer::tokenize(std::string_view text) const {
  std::vector<int> ids;
  std::size_t i = 0;
  while (i < text.size() && ids.size() < max_len) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i])))
      ++i;
    std::size_t j = i;
    while (j < text.size() &&
           !std::isspace(static_cast<unsigned char>(text[j])))
      ++j;
    if (j > i) {
      std::string tokstr(text.substr(i, j - i));
      for (char& c : tokstr)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      const auto it = token_to_id.find(tokstr);
      ids.push_back(it == token_to_id.end() ? unk_id : it->second);
    }
    i = j;
  }
  if (ids.empty()) ids.push_back(unk_id);
  return ids;
}

EncoderParams init_params(int vocab_size, int hidden, int out_dim,
                          std::uint64_t seed, bool normalize_output) {
  if (vocab_size < 1 || hidden < 1 || out_dim < 1)
    throw std::invalid_argument("init_params: all dims must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  Rng rng(mix_seed(seed, 0x1417A8C3ULL));
  EncoderParams p;
  p.embed_table.resize(vocab_size, hidden);
  for (Eigen::Index r = 0; r < p.embed_table.rows(); ++r)
    for (Eigen::Index c = 0; c < p.embed_table.cols(); ++c)
      p.embed_table(r, c) = rng.uniform(-bound, bound);
  p.proj.resize(hidden, out_dim);
  for (Eigen::Index r = 0; r < p.proj.rows(); ++r)
    for (Eigen::Index c = 0; c < p.proj.cols(); ++c)
      p.proj(r, c) = rng.uniform(-bound, bound);
  p.proj_bias = Vector::Zero(out_dim);
  p.normalize_output = normalize_output;
  return p;
}

EncoderGrads EncoderGrads::zeros_like(const EncoderParams& p) {
  EncoderGrads g;
  g.embed_table = Matrix::Zero(p.embed_table.rows(), p.embed_table.cols());
  g.proj = Matrix::Zero(p.proj.rows(), p.proj.cols());
  g.proj_bias = Vector::Zero(p.proj_bias.size());
  return g;
}

void EncoderGrads::set_zero() {
  embed_table.setZero();
  proj.setZero();
  proj_bias.setZero();
}

bool EncoderGrads::all_finite() const {
  return embed_table.allFinite() && proj.allFinite() && proj_bias.allFinite();
}

std::pair<Vector, ForwardTrace> Encoder::encode_traced(
    std::string_view text) const {
  ForwardTrace trace;
  trace.token_ids = tokenizer.tokenize(text);
  trace.pooled = Vector::Zero(params.hidden());
  for (int id : trace.token_ids) trace.pooled += params.embed_table.row(id);
  trace.pooled /= static_cast<double>(trace.token_ids.size());
  trace.pre_norm = params.proj.transpose() * trace.pooled + params.proj_bias;
  if (params.normalize_output) {
    const double norm = trace.pre_norm.norm();
    if (norm == 0.0)
      throw std::runtime_error(
          "encode: zero-norm embedding cannot be L2-normalized");
    trace.output = trace.pre_norm / norm;
  } else {
    trace.output = trace.pre_norm;
  }
  return {trace.output, trace};
}

Vector Encoder::encode(std::string_view text) const {
  return encode_traced(text).first;
}

void Encoder::backward(const ForwardTrace& trace, const Vector& d_output,
                       EncoderGrads& acc) const {
  if (trace.pooled.size() != params.hidden() ||
      trace.pre_norm.size() != params.dim() ||
      d_output.size() != params.dim())
    throw std::invalid_argument("backward: trace does not match params");
  for (int id : trace.token_ids)
    if (id < 0 || id >= params.vocab())
      throw std::invalid_argument("backward: trace does not match params");

  Vector d_pre;
  if (params.normalize_output) {
    const double norm = trace.pre_norm.norm();
    d_pre = (d_output - trace.output * trace.output.dot(d_output)) / norm;
  } else {
    d_pre = d_output;
  }
  acc.proj_bias += d_pre;
  acc.proj += trace.pooled * d_pre.transpose();
  const Vector d_pooled = params.proj * d_pre;
  const Vector per_token =
      d_pooled / static_cast<double>(trace.token_ids.size());
  for (int id : trace.token_ids) acc.embed_table.row(id) += per_token;
}

EncoderGrads Encoder::backward(const ForwardTrace& trace,
                               const Vector& d_output) const {
  EncoderGrads acc = EncoderGrads::zeros_like(params);
  backward(trace, d_output, acc);
  return acc;
}

// ---- checkpoint ------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'M', 'E', 'M', 'B', 'C', 'K', 'P', '1'};
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic, sizeof(kMagic));
  io::put_u64(out, 1);  // version

  const Tokenizer& tok = ckpt.encoder.tokenizer;
  io::put_u64(out, tok.max_len);
  io::put_u64(out, static_cast<std::uint64_t>(tok.unk_id));
  io::put_u64(out, static_cast<std::uint64_t>(tok.id_to_token.size()));
  for (const auto& t : tok.id_to_token) io::put_string(out, t);

  const EncoderParams& p = ckpt.encoder.params;
  io::put_u8(out, p.normalize_output ? 1 : 0);
  io::put_matrix(out, p.embed_table);
  io::put_matrix(out, p.proj);
  io::put_vector(out, p.proj_bias);

  io::put_u8(out, ckpt.head_weights.has_value() ? 1 : 0);
  if (ckpt.head_weights) {
    io::put_u8(out, ckpt.head_tied ? 1 : 0);
    io::put_matrix(out, *ckpt.head_weights);
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic, not a checkpoint stream");
  const std::uint64_t version = io::get_u64(in);
  if (version != 1)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));

  Checkpoint ckpt;
  Tokenizer& tok = ckpt.encoder.tokenizer;
  tok.max_len = io::get_u64(in);
  tok.unk_id = static_cast<int>(io::get_u64(in));
  const std::uint64_t vocab = io::get_u64(in);
  tok.id_to_token.reserve(vocab);
  for (std::uint64_t i = 0; i < vocab; ++i) {
    tok.id_to_token.push_back(io::get_string(in));
    tok.token_to_id[tok.id_to_token.back()] = static_cast<int>(i);
  }

  EncoderParams& p = ckpt.encoder.params;
  p.normalize_output = io::get_u8(in) != 0;
  p.embed_table = io::get_matrix(in);
  p.proj = io::get_matrix(in);
  p.proj_bias = io::get_vector(in);

  if (io::get_u8(in) != 0) {
    ckpt.head_tied = io::get_u8(in) != 0;
    ckpt.head_weights = io::get_matrix(in);
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  write_checkpoint(out, ckpt);
  if (!out) throw std::runtime_error(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  try {
    return read_checkpoint(in);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace matemb
