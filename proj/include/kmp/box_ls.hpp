#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace kmp {

struct BoxLsResult {
  Eigen::VectorXd xi;
  double objective = 0.0;  // ||y - Psi xi||^2
  double kkt_residual = 0.0;
  int sweeps = 0;
  bool converged = false;
};

/// Projected-gradient KKT residual max_j |xi_j - clamp(xi_j - g_j)| for the
/// quadratic 1/2 xi' G xi - c' xi on the box [-B, B].
inline double box_kkt_residual(const Eigen::MatrixXd& gram, const Eigen::VectorXd& c,
                               const Eigen::VectorXd& xi, double B) {
  const Eigen::VectorXd g = gram * xi - c;
  double r = 0.0;
  for (Eigen::Index j = 0; j < xi.size(); ++j)
    r = std::max(r, std::abs(xi(j) - std::clamp(xi(j) - g(j), -B, B)));
  return r;
}

/// min ||y - Psi xi||^2 subject to |xi_j| <= B, given the Gram matrix
/// G = Psi'Psi, c = Psi'y and yy = y'y.
///
/// The unconstrained minimum-norm solution is tried first; when it leaves
/// the box, projected coordinate descent runs from its clamp until the KKT
/// residual drops below tol * (1 + max|c|).
inline BoxLsResult solve_box_ls(const Eigen::MatrixXd& gram, const Eigen::VectorXd& c, double yy,
                                double B, double tol = 1e-10, int max_sweeps = 20000) {
  const Eigen::Index J = c.size();
  BoxLsResult res;
  auto objective = [&](const Eigen::VectorXd& xi) {
    return std::max(0.0, yy - 2.0 * c.dot(xi) + xi.dot(gram * xi));
  };
  const double scale = 1.0 + (J > 0 ? c.cwiseAbs().maxCoeff() : 0.0);
  if (J == 0) {
    res.xi = Eigen::VectorXd();
    res.objective = yy;
    res.converged = true;
    return res;
  }
  if (B <= 0.0) {
    res.xi = Eigen::VectorXd::Zero(J);
    res.objective = yy;
    res.converged = true;
    return res;
  }

  Eigen::VectorXd xi = gram.completeOrthogonalDecomposition().solve(c);
  if (xi.allFinite() && xi.cwiseAbs().maxCoeff() <= B) {
    res.kkt_residual = box_kkt_residual(gram, c, xi, B);
    if (res.kkt_residual <= tol * scale * 1e3) {
      res.xi = xi;
      res.objective = objective(xi);
      res.converged = true;
      return res;
    }
  }
  if (!xi.allFinite()) xi.setZero();
  for (Eigen::Index j = 0; j < J; ++j) xi(j) = std::clamp(xi(j), -B, B);

  // Gradient g = G xi - c maintained incrementally.
  Eigen::VectorXd g = gram * xi - c;
  int sweep = 0;
  double kkt = 0.0;
  for (; sweep < max_sweeps; ++sweep) {
    for (Eigen::Index j = 0; j < J; ++j) {
      const double d = gram(j, j);
      double next;
      if (d > 0.0) {
        next = std::clamp(xi(j) - g(j) / d, -B, B);
      } else {
        // Column is identically zero; any value is optimal.
        next = 0.0;
      }
      const double delta = next - xi(j);
      if (delta != 0.0) {
        g.noalias() += gram.col(j) * delta;
        xi(j) = next;
      }
    }
    if ((sweep & 7) == 7 || sweep + 1 == max_sweeps) {
      g = gram * xi - c;
      kkt = 0.0;
      for (Eigen::Index j = 0; j < J; ++j) {
        if (gram(j, j) <= 0.0) continue;
        kkt = std::max(kkt, std::abs(xi(j) - std::clamp(xi(j) - g(j) / gram(j, j), -B, B)) *
                                gram(j, j));
      }
      if (kkt <= tol * scale) {
        ++sweep;
        res.converged = true;
        break;
      }
    }
  }
  res.xi = xi;
  res.sweeps = sweep;
  res.kkt_residual = box_kkt_residual(gram, c, xi, B);
  res.objective = objective(xi);
  return res;
}

/// Convenience overload from a dense design matrix.
inline BoxLsResult solve_box_ls(const Eigen::MatrixXd& psi, const Eigen::VectorXd& y, double B,
                                double tol = 1e-10, int max_sweeps = 20000) {
  const Eigen::MatrixXd gram = psi.transpose() * psi;
  const Eigen::VectorXd c = psi.transpose() * y;
  return solve_box_ls(gram, c, y.squaredNorm(), B, tol, max_sweeps);
}

}  // namespace kmp
