#ifndef LFQ_GEOMETRY_HPP
#define LFQ_GEOMETRY_HPP

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "expr.hpp"
#include "series.hpp"

namespace lfq {

struct DegenerateHessian : std::runtime_error {
  explicit DegenerateHessian(const std::string& w) : std::runtime_error("DegenerateHessian: " + w) {}
};
struct DegenerateMetric : std::runtime_error {
  explicit DegenerateMetric(const std::string& w) : std::runtime_error("DegenerateMetric: " + w) {}
};
struct RankDeficient : std::runtime_error {
  explicit RankDeficient(const std::string& w) : std::runtime_error("RankDeficient: " + w) {}
};

/** \brief Generating function L(x,y); in Finsler mode L = F^2. */
struct LagrangeModel {
  int n = 2;
  Expr L;
  bool finsler = false;
  Expr F;

  static LagrangeModel lagrange(int n, const std::string& text) {
    return {n, parse(text, n), false, nullptr};
  }
  static LagrangeModel finsler_from(int n, const std::string& ftext) {
    Expr f = parse(ftext, n);
    return {n, mk::raw(Op::Pow, f, mk::num(2)), true, f};
  }
};

/** \brief Explicit block metric: h-block g_ij, v-block h_ab and N^a_i, all row-major n*n. */
struct NadaptedMetric {
  int n = 2;
  std::vector<Expr> g, h, N;
};

using Model = std::variant<LagrangeModel, NadaptedMetric>;

inline int model_dim(const Model& m) {
  return std::visit([](const auto& x) { return x.n; }, m);
}

using SVec = std::vector<RSeries>;

/// Gauss-Jordan inverse of a k*k series matrix with pivoting on base values
inline SVec invert(const SVec& a, int k, double* det_out = nullptr) {
  SVec m = a;
  const MonomialBasis& b = a[0].basis();
  int ord = a[0].order();
  for (auto& s : a) ord = std::min(ord, s.order());
  SVec inv(k * k, RSeries(b, ord));
  for (int i = 0; i < k; ++i) inv[i * k + i].add_constant(1.0);
  double det = 1;
  for (int c = 0; c < k; ++c) {
    int piv = c;
    for (int r = c + 1; r < k; ++r)
      if (std::abs(m[r * k + c].value()) > std::abs(m[piv * k + c].value())) piv = r;
    if (m[piv * k + c].value() == 0) throw DegenerateMetric("singular matrix");
    if (piv != c) {
      det = -det;
      for (int j = 0; j < k; ++j) {
        std::swap(m[c * k + j], m[piv * k + j]);
        std::swap(inv[c * k + j], inv[piv * k + j]);
      }
    }
    det *= m[c * k + c].value();
    RSeries p = m[c * k + c].reciprocal();
    for (int j = 0; j < k; ++j) {
      m[c * k + j] = m[c * k + j] * p;
      inv[c * k + j] = inv[c * k + j] * p;
    }
    for (int r = 0; r < k; ++r) {
      if (r == c) continue;
      RSeries f = m[r * k + c];
      if (f.max_abs() == 0) continue;
      for (int j = 0; j < k; ++j) {
        RSeries::fma(m[r * k + j], f, m[c * k + j], -1.0);
        RSeries::fma(inv[r * k + j], f, inv[c * k + j], -1.0);
      }
    }
  }
  if (det_out) *det_out = det;
  return inv;
}

inline Eigen::MatrixXd values(const SVec& a, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = a[i * cols + j].value();
  return m;
}

/** \brief Canonical objects at a point, carried as truncated Taylor series.
 *
 * Index layout: h-indices are 0..n-1, v-indices n..2n-1 in full 2n arrays, and
 * 0..n-1 inside v-blocks. Adapted frame e_i = d_i - N^a_i d_a, e_a = d_a.
 */
struct Geometry {
  int n = 0, dim = 0;
  Point u;
  const MonomialBasis* basis = nullptr;
  bool lagrange = false;
  bool finsler = false;
  bool blocks_identical = false;
  std::optional<RSeries> L;
  SVec g, h, ginv, hinv;  // n*n
  SVec G;                 // semispray, n
  SVec N;                 // N[a*n+i]
  double hess_det = 0;

  RSeries zero(int ord) const { return RSeries(*basis, ord); }
  int ord_N() const {
    int o = 1 << 20;
    for (auto& s : N) o = std::min(o, s.order());
    return o;
  }

  /// derivative along the adapted frame vector e_alpha
  RSeries e(const RSeries& f, int alpha) const {
    if (alpha >= n) return f.deriv(alpha);
    RSeries r = f.deriv(alpha);
    for (int a = 0; a < n; ++a) {
      const RSeries& Na = N[a * n + alpha];
      if (Na.max_abs() == 0) continue;
      RSeries::fma(r, Na, f.deriv(n + a), -1.0);
    }
    return r;
  }

  /// full adapted metric diag(g, h) as a dim*dim series array
  SVec adapted_metric() const {
    int ord = std::min(g[0].order(), h[0].order());
    SVec m(dim * dim, zero(ord));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        m[i * dim + j] = g[i * n + j].truncated(ord);
        m[(n + i) * dim + n + j] = h[i * n + j].truncated(ord);
      }
    return m;
  }
  SVec adapted_metric_inverse() const {
    int ord = std::min(ginv[0].order(), hinv[0].order());
    SVec m(dim * dim, zero(ord));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        m[i * dim + j] = ginv[i * n + j].truncated(ord);
        m[(n + i) * dim + n + j] = hinv[i * n + j].truncated(ord);
      }
    return m;
  }

  /// coframe matrix C (rows: e^alpha, columns: du^mu): e^a = dy^a + N^a_i dx^i
  SVec coframe() const {
    int ord = ord_N();
    SVec c(dim * dim, zero(ord));
    for (int k = 0; k < dim; ++k) c[k * dim + k].add_constant(1.0);
    for (int a = 0; a < n; ++a)
      for (int i = 0; i < n; ++i) c[(n + a) * dim + i] = N[a * n + i].truncated(ord);
    return c;
  }
  /// frame matrix E (rows: du^mu components, columns: e_alpha): e_i = d_i - N^a_i d_a
  SVec frame() const {
    int ord = ord_N();
    SVec e(dim * dim, zero(ord));
    for (int k = 0; k < dim; ++k) e[k * dim + k].add_constant(1.0);
    for (int a = 0; a < n; ++a)
      for (int i = 0; i < n; ++i) e[(n + a) * dim + i] = -N[a * n + i].truncated(ord);
    return e;
  }

  /// structure coefficients [e_b, e_c] = w^a_{bc} e_a, index w[(a*dim+b)*dim+c]
  SVec anholonomy() const {
    int ord = ord_N() - 1;
    SVec w(dim * dim * dim, zero(ord));
    auto at = [&](int a, int b, int c) -> RSeries& { return w[(a * dim + b) * dim + c]; };
    for (int a = 0; a < n; ++a)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) at(n + a, i, j) = omega(a, i, j);
    for (int a = 0; a < n; ++a)
      for (int i = 0; i < n; ++i)
        for (int b = 0; b < n; ++b) {
          RSeries d = N[a * n + i].deriv(n + b);
          at(n + a, i, n + b) = d;
          at(n + a, n + b, i) = -d;
        }
    return w;
  }

  /// N-connection curvature Omega^a_ij
  RSeries omega(int a, int i, int j) const {
    RSeries r = N[a * n + i].deriv(j) - N[a * n + j].deriv(i);
    for (int b = 0; b < n; ++b) {
      RSeries::fma(r, N[b * n + i], N[a * n + j].deriv(n + b));
      RSeries::fma(r, N[b * n + j], N[a * n + i].deriv(n + b), -1.0);
    }
    return r;
  }

  /// adapted-basis J (J(e_i) = -e_{n+i}, J(e_{n+i}) = e_i), entry J^alpha_beta at [alpha*dim+beta]
  Eigen::MatrixXd J_adapted() const {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(dim, dim);
    for (int i = 0; i < n; ++i) {
      J(n + i, i) = -1;
      J(i, n + i) = 1;
    }
    return J;
  }

  /// theta(e_alpha, e_beta) from theta = g_ij e^{n+i} ^ dx^j
  SVec theta_adapted() const {
    int ord = g[0].order();
    SVec t(dim * dim, zero(ord));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        t[(n + i) * dim + j] = g[i * n + j];
        t[j * dim + n + i] = -g[i * n + j];
      }
    return t;
  }
};

inline void check_point(const Point& u, int n) {
  if (static_cast<int>(u.size()) != 2 * n) throw std::invalid_argument("point dimension does not match 2n");
  for (double x : u)
    if (!std::isfinite(x)) throw std::invalid_argument("point has a non-finite component");
}

inline void check_regular(const Eigen::MatrixXd& m, int n, const char* what) {
  double scale = m.cwiseAbs().maxCoeff();
  double det = m.determinant();
  if (!(std::abs(det) > 1e-10 * std::pow(scale, n)) || scale == 0)
    throw DegenerateHessian(std::string(what) + " |det| = " + format_number(std::abs(det)));
}

/** \brief Build the series bundle; order is the Taylor order requested for L (or the metric blocks). */
inline Geometry build_geometry(const Model& model, const Point& u, int order) {
  Geometry geo;
  geo.n = model_dim(model);
  geo.dim = 2 * geo.n;
  geo.u = u;
  check_point(u, geo.n);
  const int n = geo.n;
  geo.basis = &MonomialBasis::get(geo.dim, std::max(order, 0));
  if (auto* lm = std::get_if<LagrangeModel>(&model)) {
    if (order < 2) throw std::invalid_argument("Lagrange geometry needs order >= 2");
    geo.lagrange = true;
    geo.finsler = lm->finsler;
    geo.blocks_identical = true;
    geo.L = to_series(lm->L, u, order, *geo.basis);
    geo.h.resize(n * n);
    for (int a = 0; a < n; ++a)
      for (int b = a; b < n; ++b) geo.h[a * n + b] = geo.h[b * n + a] = geo.L->deriv(n + a).deriv(n + b) * 0.5;
    check_regular(values(geo.h, n, n), n, "Hessian");
    geo.hinv = invert(geo.h, n, &geo.hess_det);
    geo.g = geo.h;
    geo.ginv = geo.hinv;
    // 2G^a = 1/2 h^{ab} (d^2L/dy^b dx^k y^k - dL/dx^b)
    SVec rhs(n);
    for (int b = 0; b < n; ++b) {
      RSeries dyb = geo.L->deriv(n + b);
      RSeries r = -geo.L->deriv(b).truncated(order - 2);
      for (int k = 0; k < n; ++k) {
        RSeries yk = RSeries::variable(*geo.basis, order - 2, n + k, u[n + k]);
        RSeries::fma(r, dyb.deriv(k), yk);
      }
      rhs[b] = r;
    }
    geo.G.assign(n, geo.zero(order - 2));
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) RSeries::fma(geo.G[a], geo.hinv[a * n + b], rhs[b], 0.25);
    geo.N.resize(n * n);
    if (order >= 3) {
      for (int a = 0; a < n; ++a)
        for (int i = 0; i < n; ++i) geo.N[a * n + i] = geo.G[a].deriv(n + i);
    } else {
      for (auto& s : geo.N) s = geo.zero(0);
      // order-0 values still follow from the symbolic derivative of G; rebuild at order 3
      Geometry hi = build_geometry(model, u, 3);
      for (int k = 0; k < n * n; ++k) geo.N[k] = RSeries::constant(*geo.basis, 0, hi.N[k].value());
    }
  } else {
    const auto& nm = std::get<NadaptedMetric>(model);
    auto conv = [&](const std::vector<Expr>& v, SVec& out) {
      if (static_cast<int>(v.size()) != n * n) throw std::invalid_argument("metric block must have n*n entries");
      out.clear();
      for (auto& e : v) out.push_back(to_series(e, u, order, *geo.basis));
    };
    conv(nm.g, geo.g);
    conv(nm.h, geo.h);
    conv(nm.N, geo.N);
    bool same = true;
    for (int k = 0; k < n * n; ++k) same = same && structurally_equal(nm.g[k], nm.h[k]);
    geo.blocks_identical = same;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (!structurally_equal(nm.g[i * n + j], nm.g[j * n + i]) || !structurally_equal(nm.h[i * n + j], nm.h[j * n + i]))
          throw std::invalid_argument("metric blocks must be symmetric");
    Eigen::MatrixXd gv = values(geo.g, n, n), hv = values(geo.h, n, n);
    if (std::abs(gv.determinant()) <= 1e-10 * std::pow(gv.cwiseAbs().maxCoeff(), n))
      throw DegenerateMetric("h-block is singular");
    if (std::abs(hv.determinant()) <= 1e-10 * std::pow(hv.cwiseAbs().maxCoeff(), n))
      throw DegenerateMetric("v-block is singular");
    geo.ginv = invert(geo.g, n);
    geo.hinv = invert(geo.h, n, &geo.hess_det);
  }
  return geo;
}

// ---- point-valued operations ----

struct HessianResult {
  Eigen::MatrixXd h, hinv;
};

inline HessianResult hessian_metric(const LagrangeModel& m, const Point& u) {
  Geometry g = build_geometry(m, u, 2);
  return {values(g.h, m.n, m.n), values(g.hinv, m.n, m.n)};
}

inline Eigen::VectorXd semispray(const LagrangeModel& m, const Point& u) {
  Geometry g = build_geometry(m, u, 2);
  Eigen::VectorXd G(m.n);
  for (int a = 0; a < m.n; ++a) G(a) = g.G[a].value();
  return G;
}

/// N^a_i at u, row a, column i
inline Eigen::MatrixXd nconnection(const LagrangeModel& m, const Point& u) {
  Geometry g = build_geometry(m, u, 3);
  return values(g.N, m.n, m.n);
}

/** \brief R_i = L_{y^i y^j} (-2G^j) + L_{y^i x^j} y^j - L_{x^i}, evaluated with the supplied G. */
inline Eigen::VectorXd euler_lagrange_residual_with(const LagrangeModel& m, const Point& u, const Eigen::VectorXd& G) {
  const int n = m.n;
  Geometry geo = build_geometry(m, u, 2);
  Eigen::VectorXd R(n);
  for (int i = 0; i < n; ++i) {
    double r = -geo.L->deriv(i).value();
    RSeries dyi = geo.L->deriv(n + i);
    for (int j = 0; j < n; ++j) {
      r += dyi.deriv(n + j).value() * (-2 * G(j));
      r += dyi.deriv(j).value() * u[n + j];
    }
    R(i) = r;
  }
  return R;
}

inline Eigen::VectorXd euler_lagrange_residual(const LagrangeModel& m, const Point& u) {
  return euler_lagrange_residual_with(m, u, semispray(m, u));
}

struct Frames {
  Eigen::MatrixXd frame, coframe;  // frame columns are e_alpha; coframe rows are e^alpha
};

inline Frames adapted_frames(const Eigen::MatrixXd& N) {
  const int n = static_cast<int>(N.rows()), dim = 2 * n;
  Frames f{Eigen::MatrixXd::Identity(dim, dim), Eigen::MatrixXd::Identity(dim, dim)};
  f.frame.block(n, 0, n, n) = -N;
  f.coframe.block(n, 0, n, n) = N;
  return f;
}

struct Nonholonomy {
  std::vector<double> W;      // W^g_{ab} = structure coefficients of [e_a, e_b], dim^3
  std::vector<double> Omega;  // Omega^a_{ij}, n^3
  bool integrable = false;
};

inline Nonholonomy nonholonomy(const Geometry& geo) {
  const int n = geo.n, dim = geo.dim;
  Nonholonomy r;
  SVec w = geo.anholonomy();
  for (auto& s : w) r.W.push_back(s.value());
  double om = 0, asym = 0;
  for (int a = 0; a < n; ++a)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double v = geo.omega(a, i, j).value();
        r.Omega.push_back(v);
        om = std::max(om, std::abs(v));
        double d = geo.N[a * n + j].deriv(n + i).value() - geo.N[a * n + i].deriv(n + j).value();
        asym = std::max(asym, std::abs(d));
      }
  (void)dim;
  r.integrable = om < 1e-12 && asym < 1e-12;
  return r;
}

struct SasakiMetric {
  Eigen::MatrixXd adapted, coordinate, coordinate_inverse;
};

inline SasakiMetric sasaki_metric(const Geometry& geo) {
  const int dim = geo.dim;
  SasakiMetric s;
  s.adapted = values(geo.adapted_metric(), dim, dim);
  Eigen::MatrixXd C = values(geo.coframe(), dim, dim);
  s.coordinate = C.transpose() * s.adapted * C;
  if (std::abs(s.coordinate.determinant()) <= 1e-14 * std::pow(s.coordinate.cwiseAbs().maxCoeff(), dim))
    throw DegenerateMetric("full metric is singular");
  s.coordinate_inverse = s.coordinate.inverse();
  return s;
}

/// coordinate-basis series version of the full metric (C^T diag(g,h) C)
inline SVec coordinate_metric_series(const Geometry& geo) {
  const int dim = geo.dim;
  SVec G = geo.adapted_metric(), C = geo.coframe();
  int ord = std::min(G[0].order(), C[0].order());
  SVec out(dim * dim, geo.zero(ord));
  for (int m = 0; m < dim; ++m)
    for (int v = 0; v < dim; ++v)
      for (int a = 0; a < dim; ++a)
        for (int b = 0; b < dim; ++b) {
          if (C[a * dim + m].max_abs() == 0 || C[b * dim + v].max_abs() == 0) continue;
          if (G[a * dim + b].max_abs() == 0) continue;
          RSeries t = RSeries::mul(C[a * dim + m], G[a * dim + b]);
          RSeries::fma(out[m * dim + v], t, C[b * dim + v]);
        }
  return out;
}

/// coordinate-basis J = E J_ad C
inline Eigen::MatrixXd almost_complex(const Geometry& geo) {
  Eigen::MatrixXd E = values(geo.frame(), geo.dim, geo.dim), C = values(geo.coframe(), geo.dim, geo.dim);
  return E * geo.J_adapted() * C;
}

struct Symplectic {
  Eigen::MatrixXd theta, theta_inv;  // coordinate basis; theta_inv^{ab} theta_{bc} = delta
};

inline Symplectic almost_symplectic(const Geometry& geo) {
  const int dim = geo.dim;
  Eigen::MatrixXd C = values(geo.coframe(), dim, dim);
  Eigen::MatrixXd t = C.transpose() * values(geo.theta_adapted(), dim, dim) * C;
  t = 0.5 * (t - t.transpose());
  if (std::abs(t.determinant()) <= 1e-14 * std::pow(t.cwiseAbs().maxCoeff(), dim))
    throw DegenerateMetric("almost symplectic form is degenerate");
  return {t, t.inverse()};
}

/// coordinate-basis theta as series (needed for exterior derivatives)
inline SVec theta_coordinate_series(const Geometry& geo) {
  const int dim = geo.dim;
  SVec T = geo.theta_adapted(), C = geo.coframe();
  int ord = std::min(T[0].order(), C[0].order());
  SVec out(dim * dim, geo.zero(ord));
  for (int m = 0; m < dim; ++m)
    for (int v = 0; v < dim; ++v)
      for (int a = 0; a < dim; ++a)
        for (int b = 0; b < dim; ++b) {
          if (T[a * dim + b].max_abs() == 0 || C[a * dim + m].max_abs() == 0 || C[b * dim + v].max_abs() == 0)
            continue;
          RSeries t = RSeries::mul(C[a * dim + m], T[a * dim + b]);
          RSeries::fma(out[m * dim + v], t, C[b * dim + v]);
        }
  return out;
}

/// max |(d theta)_{lmn}| over l<m<n for a coordinate 2-form field
inline double exterior_derivative_residual(const SVec& t, int dim) {
  double r = 0;
  for (int l = 0; l < dim; ++l)
    for (int m = l + 1; m < dim; ++m)
      for (int k = m + 1; k < dim; ++k) {
        double v = t[m * dim + k].deriv(l).value() + t[k * dim + l].deriv(m).value() + t[l * dim + m].deriv(k).value();
        r = std::max(r, std::abs(v));
      }
  return r;
}

/// max |theta - d omega| with omega = 1/2 (dL/dy^i) dx^i
inline double liouville_residual(const Geometry& geo) {
  if (!geo.L) throw std::invalid_argument("Liouville form needs a Lagrangian");
  const int n = geo.n, dim = geo.dim;
  SVec t = theta_coordinate_series(geo);
  std::vector<std::optional<RSeries>> w(dim);
  for (int i = 0; i < n; ++i) w[i] = geo.L->deriv(n + i) * 0.5;
  double r = 0;
  for (int m = 0; m < dim; ++m)
    for (int v = 0; v < dim; ++v) {
      double dw = (w[v] ? w[v]->deriv(m).value() : 0.0) - (w[m] ? w[m]->deriv(v).value() : 0.0);
      r = std::max(r, std::abs(t[m * dim + v].value() - dw));
    }
  return r;
}

/** \brief N solving theta(e_i, d_a) = 0, i.e. theta(d_i, d_a) = N^b_i theta(d_b, d_a). */
inline Eigen::MatrixXd nconnection_from_symplectic(const Eigen::MatrixXd& theta) {
  const int dim = static_cast<int>(theta.rows()), n = dim / 2;
  Eigen::MatrixXd M = theta.block(n, n, n, n), K = theta.block(0, n, n, n);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
  double scale = theta.cwiseAbs().maxCoeff();
  lu.setThreshold(1e-12 * std::max(scale, 1e-300) / std::max(M.cwiseAbs().maxCoeff(), 1e-300));
  if (M.cwiseAbs().maxCoeff() <= 1e-14 * scale || lu.rank() < n)
    throw RankDeficient("v-v block of the 2-form has rank " + std::to_string(M.cwiseAbs().maxCoeff() == 0 ? 0 : lu.rank()) +
                        " < " + std::to_string(n));
  Eigen::MatrixXd Nt = K * M.inverse();  // Nt(i,a) = N^a_i
  return Nt.transpose();
}

/// max_beta |F(x, beta y) - |beta| F(x,y)| / |F(x,y)|
inline double finsler_homogeneity_check(const Expr& F, const Point& u, const std::vector<double>& betas) {
  int n = static_cast<int>(u.size() / 2);
  double f = evaluate(F, u), worst = 0;
  for (double b : betas) {
    Point v = u;
    for (int a = 0; a < n; ++a) v[n + a] *= b;
    worst = std::max(worst, std::abs(evaluate(F, v) - std::abs(b) * f) / std::abs(f));
  }
  return worst;
}

}  // namespace lfq

#endif
