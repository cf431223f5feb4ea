#pragma once

// Little-endian binary primitives shared by the checkpoint writers. Doubles
// are stored as raw IEEE-754 bytes so round-trips are bit-exact.

#include "matemb/numerics.hpp"

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace matemb::io {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated integer");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void put_u8(std::ostream& out, std::uint8_t v) {
  out.put(static_cast<char>(v));
}

inline std::uint8_t get_u8(std::istream& in) {
  const int c = in.get();
  if (c == EOF) throw std::runtime_error("checkpoint: truncated byte");
  return static_cast<std::uint8_t>(c);
}

inline void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

inline double get_f64(std::istream& in) {
  const std::uint64_t bits = get_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
  const std::uint64_t n = get_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

// Row-major element order.
inline void put_matrix(std::ostream& out, const Matrix& m) {
  put_u64(out, static_cast<std::uint64_t>(m.rows()));
  put_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
}

inline Matrix get_matrix(std::istream& in) {
  const auto rows = static_cast<Eigen::Index>(get_u64(in));
  const auto cols = static_cast<Eigen::Index>(get_u64(in));
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get_f64(in);
  return m;
}

inline void put_vector(std::ostream& out, const Vector& v) {
  put_u64(out, static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) put_f64(out, v(i));
}

inline Vector get_vector(std::istream& in) {
  const auto n = static_cast<Eigen::Index>(get_u64(in));
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = get_f64(in);
  return v;
}

}  // namespace matemb::io
