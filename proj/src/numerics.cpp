#include "matemb/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace matemb {

const char* to_string(SimilarityKind kind) {
  switch (kind) {
    case SimilarityKind::Cosine:
      return "cosine";
    case SimilarityKind::Dot:
      return "dot";
    case SimilarityKind::EuclideanNeg:
      return "euclidean";
    case SimilarityKind::ManhattanNeg:
      return "manhattan";
  }
  return "?";
}

SimilarityKind similarity_kind_from_string(std::string_view name) {
  for (SimilarityKind kind : kAllSimilarityKinds) {
    if (name == to_string(kind)) return kind;
  }
  throw std::domain_error("unknown similarity kind '" + std::string(name) +
                          "'");
}

namespace {

void check_same_length(const VecRef& a, const VecRef& b, const char* op) {
  if (a.size() != b.size()) {
    throw std::domain_error(std::string(op) + ": length mismatch (" +
                            std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()) + ")");
  }
}

}  // namespace

double cosine(const VecRef& a, const VecRef& b) {
  check_same_length(a, b, "cosine");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0)
    throw std::domain_error("cosine: left argument has zero norm");
  if (nb == 0.0)
    throw std::domain_error("cosine: right argument has zero norm");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double similarity(SimilarityKind kind, const VecRef& a, const VecRef& b) {
  check_same_length(a, b, "similarity");
  switch (kind) {
    case SimilarityKind::Cosine:
      return cosine(a, b);
    case SimilarityKind::Dot:
      return a.dot(b);
    case SimilarityKind::EuclideanNeg:
      return -(a - b).norm();
    case SimilarityKind::ManhattanNeg:
      return -(a - b).lpNorm<1>();
  }
  throw std::domain_error("similarity: unknown kind");
}

Vector cosine_grad_wrt_a(const VecRef& a, const VecRef& b) {
  check_same_length(a, b, "cosine");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0)
    throw std::domain_error("cosine: left argument has zero norm");
  if (nb == 0.0)
    throw std::domain_error("cosine: right argument has zero norm");
  const double c = a.dot(b) / (na * nb);
  return b / (na * nb) - a * (c / (na * na));
}

namespace {

// Left-to-right accumulation, kept explicit for reproducible reductions.
double mean_of(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

}  // namespace

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size())
    throw std::domain_error("pearson: length mismatch (" +
                            std::to_string(x.size()) + " vs " +
                            std::to_string(y.size()) + ")");
  if (x.size() < 2)
    throw std::domain_error("pearson: need at least 2 observations");
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0)
    throw std::domain_error("pearson: first sequence has zero variance");
  if (syy == 0.0)
    throw std::domain_error("pearson: second sequence has zero variance");
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> fractional_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (x[i] != x[j]) return x[i] < x[j];
    return i < j;
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    // Tie block [i, j]: everyone gets the mean of 1-based ranks i+1..j+1.
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size())
    throw std::domain_error("spearman: length mismatch (" +
                            std::to_string(x.size()) + " vs " +
                            std::to_string(y.size()) + ")");
  if (x.size() < 2)
    throw std::domain_error("spearman: need at least 2 observations");
  return pearson(fractional_ranks(x), fractional_ranks(y));
}

double grad_check(const std::function<double(const Vector&)>& f,
                  const Vector& analytic_grad, const Vector& at, double step) {
  if (step <= 0.0) throw std::domain_error("grad_check: step must be > 0");
  if (analytic_grad.size() != at.size())
    throw std::domain_error("grad_check: gradient/point length mismatch");
  double worst = 0.0;
  Vector probe = at;
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    probe(i) = at(i) + step;
    const double fp = f(probe);
    probe(i) = at(i) - step;
    const double fm = f(probe);
    probe(i) = at(i);
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error(
          "grad_check: non-finite function value at coordinate " +
          std::to_string(i));
    const double fd = (fp - fm) / (2.0 * step);
    const double g = analytic_grad(i);
    const double err =
        std::abs(fd - g) / std::max({1.0, std::abs(fd), std::abs(g)});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace matemb
