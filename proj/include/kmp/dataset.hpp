#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace kmp {

/// Design points x (n x p, entries in [0,1]), optional linear covariates
/// z (n x q, q may be 0) and responses y.
struct Dataset {
  Eigen::MatrixXd x;
  Eigen::MatrixXd z;
  Eigen::VectorXd y;
  std::vector<std::string> x_names;
  std::vector<std::string> z_names;
  std::string y_name = "y";
  std::string provenance;

  Eigen::Index n() const { return y.size(); }
  int p() const { return static_cast<int>(x.cols()); }
  int q() const { return static_cast<int>(z.cols()); }
  bool has_z() const { return z.cols() > 0; }

  void validate() const {
    if (x.rows() != y.size()) throw std::invalid_argument("dataset: x/y row count mismatch");
    if (z.cols() > 0 && z.rows() != y.size())
      throw std::invalid_argument("dataset: z/y row count mismatch");
    if (x.cols() < 1 && y.size() > 0) throw std::invalid_argument("dataset: no design columns");
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        if (!std::isfinite(x(i, j)) || x(i, j) < 0.0 || x(i, j) > 1.0)
          throw std::domain_error("dataset: x(" + std::to_string(i) + "," + std::to_string(j) +
                                  ") outside (0,1]");
    if (!y.allFinite()) throw std::invalid_argument("dataset: non-finite response");
    if (z.size() > 0 && !z.allFinite()) throw std::invalid_argument("dataset: non-finite z");
  }

  Dataset subset(const std::vector<Eigen::Index>& rows) const {
    Dataset d;
    d.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
    d.z.resize(static_cast<Eigen::Index>(rows.size()), z.cols());
    d.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto i = static_cast<Eigen::Index>(r);
      d.x.row(i) = x.row(rows[r]);
      if (z.cols() > 0) d.z.row(i) = z.row(rows[r]);
      d.y(i) = y(rows[r]);
    }
    d.x_names = x_names;
    d.z_names = z_names;
    d.y_name = y_name;
    d.provenance = provenance;
    return d;
  }
};

/// Equidistant evaluation grid on (0,1): points (i + 0.5) / size.
inline Eigen::MatrixXd uniform_grid(int size) {
  Eigen::MatrixXd g(size, 1);
  for (int i = 0; i < size; ++i) g(i, 0) = (i + 0.5) / size;
  return g;
}

}  // namespace kmp
