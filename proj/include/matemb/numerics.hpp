#pragma once

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace matemb {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VecRef = Eigen::Ref<const Eigen::VectorXd>;

// Similarity functions used by losses and evaluation. Distance-based kinds
// are negated so "larger = more similar" holds for all four.
enum class SimilarityKind { Cosine, Dot, EuclideanNeg, ManhattanNeg };

inline constexpr std::array<SimilarityKind, 4> kAllSimilarityKinds = {
    SimilarityKind::Cosine, SimilarityKind::Dot, SimilarityKind::EuclideanNeg,
    SimilarityKind::ManhattanNeg};

const char* to_string(SimilarityKind kind);

// Accepts "cosine", "dot", "euclidean", "manhattan"; throws std::domain_error
// on anything else.
SimilarityKind similarity_kind_from_string(std::string_view name);

// dot(a, b) / (|a| |b|), clamped to [-1, 1]. Throws std::domain_error on
// length mismatch or a zero-norm side.
double cosine(const VecRef& a, const VecRef& b);

double similarity(SimilarityKind kind, const VecRef& a, const VecRef& b);

// d cosine(a, b) / d a. Shares the preconditions of cosine().
Vector cosine_grad_wrt_a(const VecRef& a, const VecRef& b);

// Product-moment correlation. Requires equal lengths >= 2 and nonzero
// variance on both sides; the error message names the degenerate sequence.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// 1-based average (fractional) ranks; ties share the mean of their rank span.
std::vector<double> fractional_ranks(const std::vector<double>& x);

// Pearson over fractional ranks.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// Central-difference check of an analytic gradient. Returns
// max_i |fd_i - g_i| / max(1, |fd_i|, |g_i|).
double grad_check(const std::function<double(const Vector&)>& f,
                  const Vector& analytic_grad, const Vector& at, double step);

}  // namespace matemb
