#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace kmp {

/// Regular partition of (0,1]^p into K^p half-open blocks
/// prod_j ((k_j - 1)/K, k_j/K]. Blocks are addressed by a linear index with
/// the first coordinate varying fastest; multi-indices are 1-based.
class PartitionGrid {
 public:
  PartitionGrid() = default;
  PartitionGrid(int K, int p) : K_(K), p_(p) {
    if (K < 1) throw std::invalid_argument("partition: K must be >= 1");
    if (p < 1) throw std::invalid_argument("partition: p must be >= 1");
    num_blocks_ = 1;
    for (int j = 0; j < p; ++j) num_blocks_ *= K;
  }

  int K() const { return K_; }
  int dim() const { return p_; }
  int num_blocks() const { return num_blocks_; }

  std::vector<int> multi_index(int block) const {
    std::vector<int> k(p_);
    for (int j = 0; j < p_; ++j) {
      k[j] = block % K_ + 1;
      block /= K_;
    }
    return k;
  }

  int linear_index(std::span<const int> k) const {
    int idx = 0;
    for (int j = p_ - 1; j >= 0; --j) idx = idx * K_ + (k[j] - 1);
    return idx;
  }

  /// j-th coordinate of the block centre (2 k_j - 1) / (2K).
  double center(int block, int j) const {
    for (int d = 0; d < j; ++d) block /= K_;
    const int kj = block % K_ + 1;
    return (2.0 * kj - 1.0) / (2.0 * K_);
  }

  std::vector<double> center(int block) const {
    std::vector<double> c(p_);
    for (int j = 0; j < p_; ++j) c[j] = center(block, j);
    return c;
  }

  /// 1-based block coordinate containing t in [0,1]; t = 0 joins the first
  /// block (closure convention).
  int coordinate_of(double t) const {
    int k = static_cast<int>(std::ceil(t * K_));
    if (k < 1) k = 1;
    if (k > K_) k = K_;
    // ceil can land one block too high when t*K rounds up past an integer.
    if (k > 1 && t <= static_cast<double>(k - 1) / K_) --k;
    return k;
  }

  int block_of(std::span<const double> x) const {
    int idx = 0;
    for (int j = p_ - 1; j >= 0; --j) idx = idx * K_ + (coordinate_of(x[j]) - 1);
    return idx;
  }

  /// Lower/upper edge of block coordinate k along any axis.
  double lower(int k) const { return static_cast<double>(k - 1) / K_; }
  double upper(int k) const { return static_cast<double>(k) / K_; }

 private:
  int K_ = 1;
  int p_ = 1;
  int num_blocks_ = 1;
};

/// All exponent vectors s in {0..m}^p with total degree |s| <= m, ordered by
/// total degree then lexicographically; the zero index comes first.
class MultiIndexSet {
 public:
  MultiIndexSet() = default;
  MultiIndexSet(int p, int m) : p_(p), m_(m) {
    if (p < 1) throw std::invalid_argument("multi-index set: p must be >= 1");
    if (m < 0) throw std::invalid_argument("multi-index set: m must be >= 0");
    std::vector<int> s(p, 0);
    for (int deg = 0; deg <= m; ++deg) enumerate(s, 0, deg);
  }

  int dim() const { return p_; }
  int degree() const { return m_; }
  int size() const { return static_cast<int>(items_.size()); }
  const std::vector<int>& operator[](int i) const { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  int total_degree(int i) const {
    int t = 0;
    for (int e : items_[i]) t += e;
    return t;
  }

  /// prod_j d_j^{s_j}
  double monomial(int i, std::span<const double> d) const {
    double v = 1.0;
    const auto& s = items_[i];
    for (int j = 0; j < p_; ++j)
      for (int e = 0; e < s[j]; ++e) v *= d[j];
    return v;
  }

 private:
  void enumerate(std::vector<int>& s, int j, int remaining) {
    if (j == p_ - 1) {
      s[j] = remaining;
      items_.push_back(s);
      return;
    }
    for (int e = remaining; e >= 0; --e) {
      s[j] = e;
      enumerate(s, j + 1, remaining - e);
    }
  }

  int p_ = 1;
  int m_ = 0;
  std::vector<std::vector<int>> items_;
};

inline long long binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  long long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace kmp
