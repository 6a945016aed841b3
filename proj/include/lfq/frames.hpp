#ifndef LFQ_FRAMES_HPP
#define LFQ_FRAMES_HPP

#include <Eigen/Dense>
#include <array>
#include <stdexcept>
#include <string>

#include "geometry.hpp"

namespace lfq {

struct Inertia {
  int pos = 0, neg = 0, zero = 0;
  bool operator==(const Inertia& o) const { return pos == o.pos && neg == o.neg && zero == o.zero; }
  std::string str() const { return "(" + std::to_string(pos) + "," + std::to_string(neg) + "," + std::to_string(zero) + ")"; }
};

struct SignatureMismatch : std::runtime_error {
  SignatureMismatch(const std::string& block, Inertia a, Inertia b)
      : std::runtime_error("SignatureMismatch in " + block + " block: " + a.str() + " vs " + b.str()), given(a), target(b) {}
  Inertia given, target;
};

inline Inertia inertia(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  double scale = es.eigenvalues().cwiseAbs().maxCoeff();
  Inertia in;
  for (int k = 0; k < m.rows(); ++k) {
    double v = es.eigenvalues()(k);
    if (std::abs(v) <= 1e-12 * scale) ++in.zero;
    else if (v > 0) ++in.pos;
    else ++in.neg;
  }
  return in;
}

/// eigenpairs sorted by descending eigenvalue, each eigenvector signed so its largest entry is positive
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> sorted_eigen(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const int k = static_cast<int>(m.rows());
  Eigen::VectorXd d(k);
  Eigen::MatrixXd U(k, k);
  for (int c = 0; c < k; ++c) {
    int src = k - 1 - c;  // solver returns ascending order
    d(c) = es.eigenvalues()(src);
    Eigen::VectorXd v = es.eigenvectors().col(src);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    U.col(c) = v;
  }
  return {d, U};
}

/** \brief E with E^T m E = target: map eigenbases onto each other in descending order. */
inline Eigen::MatrixXd congruence_factor(const Eigen::MatrixXd& m, const Eigen::MatrixXd& target, const std::string& block) {
  Inertia a = inertia(m), b = inertia(target);
  if (!(a == b)) throw SignatureMismatch(block, a, b);
  if (a.zero) throw DegenerateMetric(block + " block is degenerate");
  if (m == target) return Eigen::MatrixXd::Identity(m.rows(), m.cols());
  auto [dm, Um] = sorted_eigen(m);
  auto [dt, Ut] = sorted_eigen(target);
  Eigen::VectorXd s = (dt.cwiseAbs().array() / dm.cwiseAbs().array()).sqrt();
  return Um * s.asDiagonal() * Ut.transpose();
}

struct VielbeinSolution {
  Eigen::MatrixXd e_h;      // e^i_{i'}
  Eigen::MatrixXd e_mixed;  // e^a_{i'}
  Eigen::MatrixXd e_v;      // e^a_{a'}
  std::string gauge = "sorted-eigen";
  std::array<double, 3> residuals{};
};

struct VielbeinTarget {
  Eigen::MatrixXd g, h, N;  // canonical h-block, v-block, N^a_i
};

inline VielbeinTarget target_at(const Geometry& geo) {
  return {values(geo.g, geo.n, geo.n), values(geo.h, geo.n, geo.n), values(geo.N, geo.n, geo.n)};
}

/// the three block residuals, recomputed from the vielbeins alone
inline std::array<double, 3> verify_aleq(const VielbeinSolution& s, const Eigen::MatrixXd& g_coord, const VielbeinTarget& t) {
  const int n = static_cast<int>(t.g.rows());
  Eigen::MatrixXd gh = g_coord.topLeftCorner(n, n), hv = g_coord.bottomRightCorner(n, n);
  return {(s.e_h.transpose() * gh * s.e_h - t.g).cwiseAbs().maxCoeff(),
          (s.e_v.transpose() * hv * s.e_v - t.h).cwiseAbs().maxCoeff(),
          (s.e_mixed.transpose() * hv * s.e_mixed - t.N.transpose() * t.h * t.N).cwiseAbs().maxCoeff()};
}

/** \brief Vielbeins matching the block coefficients of g_coord (h-h and v-v blocks) to the canonical target. */
inline VielbeinSolution solve_vielbeins(const Eigen::MatrixXd& g_coord, const VielbeinTarget& t) {
  const int n = static_cast<int>(t.g.rows());
  if (g_coord.rows() != 2 * n || g_coord.cols() != 2 * n) throw std::invalid_argument("metric must be 2n x 2n");
  VielbeinSolution s;
  s.e_h = congruence_factor(g_coord.topLeftCorner(n, n), t.g, "h");
  s.e_v = congruence_factor(g_coord.bottomRightCorner(n, n), t.h, "v");
  s.e_mixed = s.e_v * t.N;
  s.residuals = verify_aleq(s, g_coord, t);
  return s;
}

/// coordinate metric C^T diag(g, h) C of the canonical target
inline Eigen::MatrixXd canonical_coordinate_metric(const VielbeinTarget& t) {
  const int n = static_cast<int>(t.g.rows());
  Eigen::MatrixXd C = Eigen::MatrixXd::Identity(2 * n, 2 * n), D = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  C.bottomLeftCorner(n, n) = t.N;
  D.topLeftCorner(n, n) = t.g;
  D.bottomRightCorner(n, n) = t.h;
  return C.transpose() * D * C;
}

/// coordinate metric from the vielbeins and the block coefficients of g_coord
inline Eigen::MatrixXd vielbein_metric(const VielbeinSolution& s, const Eigen::MatrixXd& g_coord) {
  const int n = static_cast<int>(s.e_h.rows());
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(2 * n, 2 * n), D = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  V.topLeftCorner(n, n) = s.e_h;
  V.bottomLeftCorner(n, n) = s.e_mixed;
  V.bottomRightCorner(n, n) = s.e_v;
  D.topLeftCorner(n, n) = g_coord.topLeftCorner(n, n);
  D.bottomRightCorner(n, n) = g_coord.bottomRightCorner(n, n);
  return V.transpose() * D * V;
}

}  // namespace lfq

#endif
