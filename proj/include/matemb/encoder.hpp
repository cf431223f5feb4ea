#pragma once

#include "matemb/numerics.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace matemb {

// Whitespace tokenizer with lowercase folding. Unknown tokens map to the
// reserved <unk> id; sequences are truncated to max_len.
struct Tokenizer {
  std::vector<std::string> id_to_token;  // id 0 is "<unk>"
  std::unordered_map<std::string, int> token_to_id;
  int unk_id = 0;
  std::size_t max_len = 512;

  static Tokenizer build(const std::vector<std::string>& tokens,
                         std::size_t max_len = 512);

  // Empty input tokenizes to a single <unk>.
  std::vector<int> tokenize(std::string_view text) const;

  int vocab_size() const { return static_cast<int>(id_to_token.size()); }
};

struct EncoderParams {
  Matrix embed_table;  // vocab x hidden
  Matrix proj;         // hidden x dim
  Vector proj_bias;    // dim
  bool normalize_output = true;

  int vocab() const { return static_cast<int>(embed_table.rows()); }
  int hidden() const { return static_cast<int>(embed_table.cols()); }
  int dim() const { return static_cast<int>(proj.cols()); }
};

// Seeded init: entries uniform(-1/sqrt(h), 1/sqrt(h)), bias zero.
EncoderParams init_params(int vocab_size, int hidden, int out_dim,
                          std::uint64_t seed, bool normalize_output = true);

// Everything needed to push an output-gradient back to the parameters.
struct ForwardTrace {
  std::vector<int> token_ids;
  Vector pooled;    // hidden
  Vector pre_norm;  // dim, before optional L2 normalization
  Vector output;    // dim
};

struct EncoderGrads {
  Matrix embed_table;
  Matrix proj;
  Vector proj_bias;

  static EncoderGrads zeros_like(const EncoderParams& p);
  void set_zero();
  bool all_finite() const;
};

// Token lookup -> mean pooling -> linear projection -> optional L2 norm.
class Encoder {
 public:
  Tokenizer tokenizer;
  EncoderParams params;

  Encoder() = default;
  Encoder(Tokenizer tok, EncoderParams p)
      : tokenizer(std::move(tok)), params(std::move(p)) {}

  Vector encode(std::string_view text) const;
  std::pair<Vector, ForwardTrace> encode_traced(std::string_view text) const;

  // Accumulates exact parameter gradients for d(loss)/d(output). Throws
  // std::invalid_argument if the trace does not match these params.
  void backward(const ForwardTrace& trace, const Vector& d_output,
                EncoderGrads& acc) const;
  EncoderGrads backward(const ForwardTrace& trace, const Vector& d_output) const;
};

// ---- checkpoint container ---------------------------------------------------
// Versioned binary file: vocab, dims, flags, parameter matrices, and an
// optional classification head. Round-trips bit-exactly.

struct Checkpoint {
  Encoder encoder;
  std::optional<Matrix> head_weights;  // labels x feature_dim, when trained
  bool head_tied = true;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Stream-level versions, used when a checkpoint is embedded in a larger file.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

}  // namespace matemb
