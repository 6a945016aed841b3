#ifndef LFQ_CONNECTION_HPP
#define LFQ_CONNECTION_HPP

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "geometry.hpp"

namespace lfq {

struct DegenerateSymplectic : std::runtime_error {
  explicit DegenerateSymplectic(const std::string& w) : std::runtime_error("DegenerateSymplectic: " + w) {}
};

/** \brief Linear connection in the adapted frame: D_{e_c} e_b = G^a_{bc} e_a, stored at (a*dim+b)*dim+c. */
struct Connection {
  int n = 0, dim = 0;
  std::string kind;
  SVec G;

  Connection() = default;
  Connection(int n_, const MonomialBasis& b, int ord, std::string k)
      : n(n_), dim(2 * n_), kind(std::move(k)), G(dim * dim * dim, RSeries(b, ord)) {}
  RSeries& operator()(int a, int b, int c) { return G[(a * dim + b) * dim + c]; }
  const RSeries& operator()(int a, int b, int c) const { return G[(a * dim + b) * dim + c]; }
  int order() const {
    int o = 1 << 20;
    for (auto& s : G) o = std::min(o, s.order());
    return o;
  }
  std::vector<double> values() const {
    std::vector<double> v;
    for (auto& s : G) v.push_back(s.value());
    return v;
  }
};

namespace detail {

inline int cmin(std::initializer_list<int> l) { return *std::min_element(l.begin(), l.end()); }

/// 1/2 k^{ih}(d_k m_jh + d_j m_hk - d_h m_jk) for a derivation family d
template <class D>
RSeries christoffel_like(const SVec& m, const SVec& minv, int n, int i, int j, int k, D&& d) {
  RSeries r(m[0].basis(), 0);
  bool first = true;
  for (int h = 0; h < n; ++h) {
    RSeries s = d(m[j * n + h], k) + d(m[h * n + k], j) - d(m[j * n + k], h);
    if (first) {
      r = RSeries::mul(minv[i * n + h], s) * 0.5;
      first = false;
    } else {
      RSeries::fma(r, minv[i * n + h], s, 0.5);
    }
  }
  return r;
}

}  // namespace detail

/** \brief Normal d-connection: h-block Christoffels with e_k, v-block Christoffels in y, both copied across. */
inline Connection normal_dconnection(const Geometry& geo) {
  if (!geo.blocks_identical) throw std::invalid_argument("normal d-connection needs identical h- and v-blocks");
  const int n = geo.n;
  auto ed = [&](const RSeries& f, int k) { return geo.e(f, k); };
  auto yd = [&](const RSeries& f, int k) { return f.deriv(n + k); };
  std::vector<RSeries> Lh, Cv;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        Lh.push_back(detail::christoffel_like(geo.g, geo.ginv, n, i, j, k, ed));
        Cv.push_back(detail::christoffel_like(geo.h, geo.hinv, n, i, j, k, yd));
      }
  int ord = std::min(Lh[0].order(), Cv[0].order());
  Connection c(n, *geo.basis, ord, "normal");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const RSeries& L = Lh[(i * n + j) * n + k];
        const RSeries& C = Cv[(i * n + j) * n + k];
        c(i, j, k) = L.truncated(ord);
        c(n + i, n + j, k) = L.truncated(ord);
        c(i, j, n + k) = C.truncated(ord);
        c(n + i, n + j, n + k) = C.truncated(ord);
      }
  return c;
}

/** \brief Canonical d-connection for distinct blocks (metric compatible, h-h and v-v torsion free). */
inline Connection canonical_dconnection(const Geometry& geo) {
  const int n = geo.n;
  auto ed = [&](const RSeries& f, int k) { return geo.e(f, k); };
  auto yd = [&](const RSeries& f, int k) { return f.deriv(n + k); };
  int ord = detail::cmin({geo.g[0].order() - 1, geo.h[0].order() - 1, geo.ord_N() - 1});
  Connection c(n, *geo.basis, ord, "canonical");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        c(i, j, k) = detail::christoffel_like(geo.g, geo.ginv, n, i, j, k, ed).truncated(ord);
        c(n + i, n + j, n + k) = detail::christoffel_like(geo.h, geo.hinv, n, i, j, k, yd).truncated(ord);
      }
  // vL^a_{bk} = e_b N^a_k + 1/2 h^{ac}(e_k h_bc - h_dc e_b N^d_k - h_db e_c N^d_k)
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int k = 0; k < n; ++k) {
        RSeries r = geo.N[a * n + k].deriv(n + b).truncated(ord);
        for (int cc = 0; cc < n; ++cc) {
          RSeries s = geo.e(geo.h[b * n + cc], k);
          for (int d = 0; d < n; ++d) {
            RSeries::fma(s, geo.h[d * n + cc], geo.N[d * n + k].deriv(n + b), -1.0);
            RSeries::fma(s, geo.h[d * n + b], geo.N[d * n + k].deriv(n + cc), -1.0);
          }
          RSeries::fma(r, geo.hinv[a * n + cc], s, 0.5);
        }
        c(n + a, n + b, k) = r;
      }
  // C^i_{jc} = 1/2 g^{ik} e_c g_jk
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int cc = 0; cc < n; ++cc) {
        RSeries r(*geo.basis, ord);
        for (int k = 0; k < n; ++k) RSeries::fma(r, geo.ginv[i * n + k], geo.g[j * n + k].deriv(n + cc), 0.5);
        c(i, j, n + cc) = r;
      }
  return c;
}

/// normal d-connection when the blocks coincide, canonical d-connection otherwise
inline Connection hat_connection(const Geometry& geo) {
  return geo.blocks_identical ? normal_dconnection(geo) : canonical_dconnection(geo);
}

/** \brief T^a_{bc} = G^a_{bc} - G^a_{cb} + w^a_{bc}. */
inline SVec torsion(const Connection& c, const Geometry& geo) {
  const int dim = geo.dim;
  SVec w = geo.anholonomy();
  SVec T(dim * dim * dim);
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b)
      for (int cc = 0; cc < dim; ++cc) {
        int ord = std::min(c.order(), w[0].order());
        T[(a * dim + b) * dim + cc] = (c(a, b, cc) - c(a, cc, b) + w[(a * dim + b) * dim + cc]).truncated(ord);
      }
  return T;
}

/** \brief Torsion from the d-connection parametrization: T^i_jk = T^a_bc = 0, T^i_jc = C^i_jc,
 * T^a_ij = Omega^a_ij, T^a_ib = e_b N^a_i - L^a_bi, other blocks by antisymmetry or zero.
 */
inline SVec dtorsion(const Connection& c, const Geometry& geo) {
  const int n = geo.n, dim = geo.dim;
  int ord = std::min(c.order(), geo.ord_N() - 1);
  SVec T(dim * dim * dim, RSeries(*geo.basis, ord));
  auto t = [&](int a, int b, int cc) -> RSeries& { return T[(a * dim + b) * dim + cc]; };
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        t(i, j, n + k) = c(i, j, n + k).truncated(ord);
        t(i, n + k, j) = -c(i, j, n + k).truncated(ord);
        t(n + i, j, k) = geo.omega(i, j, k).truncated(ord);
        RSeries m = (geo.N[i * n + j].deriv(n + k) - c(n + i, n + k, j)).truncated(ord);
        t(n + i, j, n + k) = m;
        t(n + i, n + k, j) = -m;
      }
  return T;
}

inline std::size_t idx4(int dim, int a, int b, int c, int d) { return ((static_cast<std::size_t>(a) * dim + b) * dim + c) * dim + d; }

/** \brief R^a_{bcd} = e_d G^a_{bc} - e_c G^a_{bd} + G^m_{bc} G^a_{md} - G^m_{bd} G^a_{mc} - w^m_{dc} G^a_{bm}. */
inline SVec curvature(const Connection& c, const Geometry& geo, int ord_cap = 1 << 20) {
  const int dim = geo.dim;
  SVec w = geo.anholonomy();
  int ord = detail::cmin({c.order() - 1, w[0].order(), ord_cap});
  if (ord < 0) throw JetExhausted("curvature needs connection jets of order >= 1");
  std::vector<RSeries> eG(dim * dim * dim * dim, RSeries(*geo.basis, ord));
  std::vector<RSeries> Gt(c.G.size());
  for (std::size_t k = 0; k < c.G.size(); ++k) Gt[k] = c.G[k].truncated(ord + 1);
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b)
      for (int cc = 0; cc < dim; ++cc) {
        const RSeries& g = Gt[(a * dim + b) * dim + cc];
        if (g.max_abs() == 0) continue;
        for (int d = 0; d < dim; ++d) eG[idx4(dim, a, b, cc, d)] = geo.e(g, d).truncated(ord);
      }
  auto G = [&](int a, int b, int cc) -> const RSeries& { return Gt[(a * dim + b) * dim + cc]; };
  SVec R(dim * dim * dim * dim, RSeries(*geo.basis, ord));
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b)
      for (int cc = 0; cc < dim; ++cc)
        for (int d = 0; d < dim; ++d) {
          if (d == cc) continue;
          RSeries& r = R[idx4(dim, a, b, cc, d)];
          r += eG[idx4(dim, a, b, cc, d)];
          r -= eG[idx4(dim, a, b, d, cc)];
          for (int m = 0; m < dim; ++m) {
            if (G(m, b, cc).max_abs() != 0 && G(a, m, d).max_abs() != 0) RSeries::fma(r, G(m, b, cc), G(a, m, d));
            if (G(m, b, d).max_abs() != 0 && G(a, m, cc).max_abs() != 0) RSeries::fma(r, G(m, b, d), G(a, m, cc), -1.0);
            const RSeries& wm = w[(m * dim + d) * dim + cc];
            if (wm.max_abs() != 0 && G(a, b, m).max_abs() != 0) RSeries::fma(r, wm, G(a, b, m), -1.0);
          }
        }
  return R;
}

inline std::vector<double> values(const SVec& s) {
  std::vector<double> v;
  v.reserve(s.size());
  for (auto& x : s) v.push_back(x.value());
  return v;
}

/** \brief P^i_{jka} = e_a L^i_{jk} - D_k C^i_{ja}, with D_k acting on both index types. */
inline std::vector<double> printed_mixed_curvature(const Connection& c, const Geometry& geo) {
  const int n = geo.n;
  std::vector<double> P(n * n * n * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        for (int a = 0; a < n; ++a) {
          double v = geo.e(c(i, j, k), n + a).value() - geo.e(c(i, j, n + a), k).value();
          for (int h = 0; h < n; ++h) {
            v -= c(i, h, k).value() * c(h, j, n + a).value();
            v += c(h, j, k).value() * c(i, h, n + a).value();
          }
          for (int b = 0; b < n; ++b) v += c(n + b, n + a, k).value() * c(i, j, n + b).value();
          P[((i * n + j) * n + k) * n + a] = v;
        }
  return P;
}

/// max |e_c g_ab - G^m_{ac} g_mb - G^m_{bc} g_am|
inline double metric_compatibility_residual(const Connection& c, const Geometry& geo, const SVec& g) {
  const int dim = geo.dim;
  double r = 0;
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b)
      for (int cc = 0; cc < dim; ++cc) {
        double v = geo.e(g[a * dim + b], cc).value();
        for (int m = 0; m < dim; ++m)
          v -= c(m, a, cc).value() * g[m * dim + b].value() + c(m, b, cc).value() * g[a * dim + m].value();
        r = std::max(r, std::abs(v));
      }
  return r;
}

/// (D theta)_{abc} at the point as series (order one below theta)
inline SVec covariant_derivative_2tensor(const Connection& c, const Geometry& geo, const SVec& t) {
  const int dim = geo.dim;
  int ord = std::min(t[0].order() - 1, c.order());
  SVec D(dim * dim * dim, RSeries(*geo.basis, ord));
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b)
      for (int cc = 0; cc < dim; ++cc) {
        RSeries& v = D[(a * dim + b) * dim + cc];
        v += geo.e(t[a * dim + b], cc).truncated(ord);
        for (int m = 0; m < dim; ++m) {
          if (t[m * dim + b].max_abs() != 0) RSeries::fma(v, c(m, a, cc), t[m * dim + b], -1.0);
          if (t[a * dim + m].max_abs() != 0) RSeries::fma(v, c(m, b, cc), t[a * dim + m], -1.0);
        }
      }
  return D;
}

inline double max_abs_value(const SVec& s) {
  double r = 0;
  for (auto& x : s) r = std::max(r, std::abs(x.value()));
  return r;
}

inline double theta_compatibility_residual(const Connection& c, const Geometry& geo) {
  return max_abs_value(covariant_derivative_2tensor(c, geo, geo.theta_adapted()));
}

inline SVec theta_inverse(const Geometry& geo) {
  SVec t = geo.theta_adapted();
  Eigen::MatrixXd tv = values(t, geo.dim, geo.dim);
  if (std::abs(tv.determinant()) <= 1e-14 * std::pow(tv.cwiseAbs().maxCoeff(), geo.dim))
    throw DegenerateSymplectic("theta is degenerate");
  return invert(t, geo.dim);
}

/** \brief Theta-compatible family: base - 1/2 theta^{am}(D_c theta)_{bm}, plus the projection of Y.
 *
 * Y is a numeric array indexed like Connection::G.
 */
inline Connection symplectic_family(const Connection& base, const Geometry& geo, const std::vector<double>& Y = {}) {
  const int dim = geo.dim;
  SVec ti = theta_inverse(geo), t = geo.theta_adapted();
  SVec Dt = covariant_derivative_2tensor(base, geo, t);
  int ord = std::min(base.order(), Dt[0].order());
  Connection out(geo.n, *geo.basis, ord, base.kind + "+symplectic");
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b)
      for (int c = 0; c < dim; ++c) {
        RSeries v = base(a, b, c).truncated(ord);
        for (int m = 0; m < dim; ++m) RSeries::fma(v, ti[a * dim + m], Dt[(b * dim + m) * dim + c], -0.5);
        out(a, b, c) = v;
      }
  if (!Y.empty()) {
    auto y = [&](int r, int b, int c) { return Y[(r * dim + b) * dim + c]; };
    for (int r = 0; r < dim; ++r)
      for (int b = 0; b < dim; ++b)
        for (int c = 0; c < dim; ++c) {
          double x = 0.5 * y(r, b, c);
          for (int m = 0; m < dim; ++m)
            for (int v = 0; v < dim; ++v) x += 0.5 * ti[m * dim + r].value() * t[v * dim + b].value() * y(v, m, c);
          out(r, b, c).add_constant(x);
        }
  }
  return out;
}

/** \brief Levi-Civita connection in the adapted frame via the Koszul formula with anholonomy. */
inline Connection levi_civita_adapted(const Geometry& geo) {
  const int dim = geo.dim;
  SVec g = geo.adapted_metric(), gi = geo.adapted_metric_inverse(), w = geo.anholonomy();
  int ord = std::min(g[0].order() - 1, w[0].order());
  auto W = [&](int m, int b, int c) -> const RSeries& { return w[(m * dim + b) * dim + c]; };
  SVec low(dim * dim * dim, RSeries(*geo.basis, ord));
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b)
      for (int c = 0; c < dim; ++c) {
        RSeries v = (geo.e(g[b * dim + a], c) + geo.e(g[c * dim + a], b) - geo.e(g[c * dim + b], a)).truncated(ord);
        for (int m = 0; m < dim; ++m) {
          if (W(m, c, b).max_abs() != 0) RSeries::fma(v, W(m, c, b), g[m * dim + a]);
          if (W(m, c, a).max_abs() != 0) RSeries::fma(v, W(m, c, a), g[m * dim + b], -1.0);
          if (W(m, b, a).max_abs() != 0) RSeries::fma(v, W(m, b, a), g[m * dim + c], -1.0);
        }
        low[(a * dim + b) * dim + c] = v * 0.5;
      }
  Connection out(geo.n, *geo.basis, ord, "levi-civita");
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b)
      for (int c = 0; c < dim; ++c)
        for (int m = 0; m < dim; ++m)
          if (gi[a * dim + m].max_abs() != 0) RSeries::fma(out(a, b, c), gi[a * dim + m], low[(m * dim + b) * dim + c]);
  return out;
}

/** \brief Textbook coordinate-basis Levi-Civita data: nabla_{d_v} d_r = Gam^m_{rv} d_m. */
struct LeviCivitaOracle {
  int dim = 0;
  SVec christoffel;               // [(m*dim+r)*dim+v]
  std::vector<double> riemann;    // R^r_{smv} = d_m Gam^r_{vs} - d_v Gam^r_{ms} + ...
  Eigen::MatrixXd ricci;          // R_{sv} = R^r_{srv}
  double scalar = 0;
  double torsion_max = 0, metric_compat_max = 0;
};

/// vars[k] is the series variable carrying coordinate k of the metric
inline LeviCivitaOracle levi_civita_oracle(const SVec& g, int dim, std::vector<int> vars = {}) {
  if (vars.empty())
    for (int k = 0; k < dim; ++k) vars.push_back(k);
  LeviCivitaOracle o;
  o.dim = dim;
  Eigen::MatrixXd gv = values(g, dim, dim);
  if (std::abs(gv.determinant()) <= 1e-14 * std::pow(gv.cwiseAbs().maxCoeff(), dim))
    throw DegenerateMetric("coordinate metric is singular");
  SVec gi = invert(g, dim);
  auto d = [&](const RSeries& f, int k) { return f.deriv(vars[k]); };
  int ord = g[0].order() - 1;
  o.christoffel.assign(dim * dim * dim, RSeries(g[0].basis(), ord));
  for (int m = 0; m < dim; ++m)
    for (int r = 0; r < dim; ++r)
      for (int v = 0; v < dim; ++v)
        for (int s = 0; s < dim; ++s) {
          RSeries t = d(g[s * dim + r], v) + d(g[s * dim + v], r) - d(g[r * dim + v], s);
          RSeries::fma(o.christoffel[(m * dim + r) * dim + v], gi[m * dim + s], t, 0.5);
        }
  auto Gam = [&](int m, int r, int v) -> const RSeries& { return o.christoffel[(m * dim + r) * dim + v]; };
  o.riemann.assign(dim * dim * dim * dim, 0.0);
  for (int r = 0; r < dim; ++r)
    for (int s = 0; s < dim; ++s)
      for (int m = 0; m < dim; ++m)
        for (int v = 0; v < dim; ++v) {
          double x = d(Gam(r, v, s), m).value() - d(Gam(r, m, s), v).value();
          for (int l = 0; l < dim; ++l)
            x += Gam(r, m, l).value() * Gam(l, v, s).value() - Gam(r, v, l).value() * Gam(l, m, s).value();
          o.riemann[idx4(dim, r, s, m, v)] = x;
        }
  o.ricci = Eigen::MatrixXd::Zero(dim, dim);
  for (int s = 0; s < dim; ++s)
    for (int v = 0; v < dim; ++v)
      for (int r = 0; r < dim; ++r) o.ricci(s, v) += o.riemann[idx4(dim, r, s, r, v)];
  Eigen::MatrixXd giv = gv.inverse();
  o.scalar = (giv.array() * o.ricci.array()).sum();
  for (int m = 0; m < dim; ++m)
    for (int r = 0; r < dim; ++r)
      for (int v = 0; v < dim; ++v) {
        o.torsion_max = std::max(o.torsion_max, std::abs(Gam(m, r, v).value() - Gam(m, v, r).value()));
        double x = d(g[m * dim + r], v).value();
        for (int l = 0; l < dim; ++l) x -= Gam(l, m, v).value() * gv(l, r) + Gam(l, r, v).value() * gv(m, l);
        o.metric_compat_max = std::max(o.metric_compat_max, std::abs(x));
      }
  return o;
}

/** \brief Coordinate connection re-expressed in the adapted frame: e^a_m (E^v_c d_v E^m_b + E^v_c E^r_b Gam^m_{rv}). */
inline std::vector<double> coordinate_to_adapted(const LeviCivitaOracle& o, const Geometry& geo) {
  const int dim = geo.dim;
  SVec E = geo.frame();
  Eigen::MatrixXd Ev = values(E, dim, dim), Cv = values(geo.coframe(), dim, dim);
  std::vector<double> out(dim * dim * dim, 0.0);
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b)
      for (int c = 0; c < dim; ++c) {
        double x = 0;
        for (int m = 0; m < dim; ++m) {
          double inner = 0;
          for (int v = 0; v < dim; ++v) {
            inner += Ev(v, c) * E[m * dim + b].deriv(v).value();
            for (int r = 0; r < dim; ++r) inner += Ev(v, c) * Ev(r, b) * o.christoffel[(m * dim + r) * dim + v].value();
          }
          x += Cv(a, m) * inner;
        }
        out[(a * dim + b) * dim + c] = x;
      }
  return out;
}

/** \brief Distortion blocks from the closed-form expressions (h-block metric used throughout).
 *
 * Valid for Hessian-type metrics (y-derivatives of g totally symmetric). mixed_plus selects the
 * sign of the Xi operator in the Z^a_{jb} block; with_vertical_term adds C^i_{kb} to Z^i_{bk},
 * which the torsion-free condition Z^i_{bk} = C^i_{kb} + Z^i_{kb} - C^i_{kb} requires.
 */
inline std::vector<double> distortion_closed_form(const Connection& hat, const Geometry& geo, bool mixed_plus = false,
                                                  bool with_vertical_term = true) {
  const int n = geo.n, dim = geo.dim;
  Eigen::MatrixXd g = values(geo.g, n, n), gi = values(geo.ginv, n, n);
  std::vector<double> Z(dim * dim * dim, 0.0);
  auto z = [&](int a, int b, int c) -> double& { return Z[(a * dim + b) * dim + c]; };
  auto C = [&](int i, int j, int b) { return hat(i, j, n + b).value(); };
  auto Om = [&](int a, int j, int k) { return geo.omega(a, j, k).value(); };
  auto dl = [](int a, int b) { return a == b ? 1.0 : 0.0; };
  auto Xi = [&](int i, int h, int j, int k) { return 0.5 * (dl(i, j) * dl(h, k) - g(j, k) * gi(i, h)); };
  auto XiPM = [&](double s, int a, int b, int c, int d) { return 0.5 * (dl(a, c) * dl(b, d) + s * g(c, d) * gi(a, b)); };
  // oL^c_{aj} = L^c_{aj} - e_a N^c_j, L^c_{aj} read from the v-block
  auto oL = [&](int c, int a, int j) { return hat(n + c, n + a, j).value() - geo.N[c * n + j].deriv(n + a).value(); };
  for (int a = 0; a < n; ++a)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        double v = -0.5 * Om(a, j, k);
        for (int b = 0; b < n; ++b)
          for (int i = 0; i < n; ++i) v -= C(i, j, b) * g(i, k) * gi(a, b);
        z(n + a, j, k) = v;
      }
  for (int i = 0; i < n; ++i)
    for (int b = 0; b < n; ++b)
      for (int k = 0; k < n; ++k) {
        double om = 0, xc = 0;
        for (int j = 0; j < n; ++j)
          for (int c = 0; c < n; ++c) om += 0.5 * Om(c, j, k) * g(c, b) * gi(j, i);
        for (int j = 0; j < n; ++j)
          for (int h = 0; h < n; ++h) xc += Xi(i, h, j, k) * C(j, h, b);
        z(i, n + b, k) = om - xc + (with_vertical_term ? C(i, k, b) : 0.0);
        z(i, k, n + b) = om + xc;
      }
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int k = 0; k < n; ++k) {
        double v = 0, m = 0;
        for (int c = 0; c < n; ++c)
          for (int d = 0; d < n; ++d) {
            v += XiPM(+1, a, d, c, b) * oL(c, d, k);
            m -= XiPM(mixed_plus ? +1 : -1, a, d, c, b) * oL(c, d, k);
          }
        z(n + a, n + b, k) = v;
        z(n + a, k, n + b) = m;
      }
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        double v = 0;
        for (int j = 0; j < n; ++j)
          for (int c = 0; c < n; ++c) v -= 0.5 * gi(i, j) * (oL(c, a, j) * g(c, b) + oL(c, b, j) * g(c, a));
        z(i, n + a, n + b) = v;
      }
  return Z;
}

/// names of the eight blocks in storage order of (upper, lower, derivative) h/v tags
inline std::string block_name(int a, int b, int c, int n) {
  static const char* names[8] = {"L^i_jk", "C^i_jb", "L^i_bk", "C^i_bc", "L^a_jk", "C^a_jb", "L^a_bk", "C^a_bc"};
  return names[(a >= n) * 4 + (b >= n) * 2 + (c >= n)];
}

/// per-block max |x - y| over the eight h/v blocks, in block_name order
inline std::array<double, 8> block_differences(const std::vector<double>& x, const std::vector<double>& y, int n) {
  const int dim = 2 * n;
  std::array<double, 8> r{};
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b)
      for (int c = 0; c < dim; ++c) {
        int k = (a >= n) * 4 + (b >= n) * 2 + (c >= n);
        std::size_t i = (a * dim + b) * dim + c;
        r[k] = std::max(r[k], std::abs(x[i] - y[i]));
      }
  return r;
}

// ---- forms over the adapted coframe ----

/// 2-form F = sum_{m<v} F(m,v) e^m ^ e^v, stored as a full antisymmetric matrix
using TwoForm = Eigen::MatrixXd;

/// curvature 2-forms R^t_g = R^t_{g a b} e^a ^ e^b (sum over all a, b), index [t*dim+g]
inline std::vector<TwoForm> curvature_two_forms(const std::vector<double>& R, int dim) {
  std::vector<TwoForm> F(dim * dim, TwoForm::Zero(dim, dim));
  for (int t = 0; t < dim; ++t)
    for (int g = 0; g < dim; ++g)
      for (int a = 0; a < dim; ++a)
        for (int b = 0; b < dim; ++b) F[t * dim + g](a, b) = R[idx4(dim, t, g, a, b)] - R[idx4(dim, t, g, b, a)];
  return F;
}

inline TwoForm wedge11(int a, int b, int dim) {
  TwoForm f = TwoForm::Zero(dim, dim);
  f(a, b) += 1;
  f(b, a) -= 1;
  return f;
}

/// full antisymmetric 3-form components of sum_a w_a e^a ^ F_a
struct ThreeForm {
  int dim;
  std::vector<double> c;
  explicit ThreeForm(int d) : dim(d), c(d * d * d, 0.0) {}
  double& operator()(int a, int b, int g) { return c[(a * dim + b) * dim + g]; }
  double operator()(int a, int b, int g) const { return c[(a * dim + b) * dim + g]; }
  void add_wedge(int a, const TwoForm& F, double s = 1) {
    for (int m = 0; m < dim; ++m)
      for (int v = 0; v < dim; ++v)
        for (int r = 0; r < dim; ++r)
          (*this)(m, v, r) += s * ((a == m) * F(v, r) + (a == v) * F(r, m) + (a == r) * F(m, v));
  }
  double max_abs() const {
    double r = 0;
    for (double x : c) r = std::max(r, std::abs(x));
    return r;
  }
};

inline int levi_civita_symbol(int a, int b, int c, int d) {
  int p[4] = {a, b, c, d};
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      if (p[i] == p[j]) return 0;
  int s = 1;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      if (p[i] > p[j]) s = -s;
  return s;
}

/// R^{bg} = R^b_m g^{mg}
inline std::vector<TwoForm> raise_second(const std::vector<TwoForm>& F, const Eigen::MatrixXd& gi) {
  const int dim = static_cast<int>(gi.rows());
  std::vector<TwoForm> out(dim * dim, TwoForm::Zero(dim, dim));
  for (int b = 0; b < dim; ++b)
    for (int g = 0; g < dim; ++g)
      for (int m = 0; m < dim; ++m)
        if (gi(m, g) != 0) out[b * dim + g] += F[b * dim + m] * gi(m, g);
  return out;
}

/// eps_{abgt} e^a ^ F^{bg} for each t
inline std::vector<ThreeForm> einstein_three_forms(const std::vector<TwoForm>& Fup, int dim) {
  std::vector<ThreeForm> out(dim, ThreeForm(dim));
  for (int t = 0; t < dim; ++t)
    for (int a = 0; a < dim; ++a)
      for (int b = 0; b < dim; ++b)
        for (int g = 0; g < dim; ++g) {
          int e = levi_civita_symbol(a, b, g, t);
          if (e) out[t].add_wedge(a, Fup[b * dim + g], e);
        }
  return out;
}

/// eps_{abgt} e^a ^ e^b ^ e^g for each t
inline std::vector<ThreeForm> volume_three_forms(int dim) {
  std::vector<ThreeForm> out(dim, ThreeForm(dim));
  for (int t = 0; t < dim; ++t)
    for (int a = 0; a < dim; ++a)
      for (int b = 0; b < dim; ++b)
        for (int g = 0; g < dim; ++g) {
          int e = levi_civita_symbol(a, b, g, t);
          if (e) out[t].add_wedge(a, wedge11(b, g, dim), e);
        }
  return out;
}

struct EinsteinConfig {
  double lambda = 0;
  std::vector<double> source;  // T^a_b, dim*dim, empty means zero
  double G = 1;
};

struct CurvatureData {
  std::vector<double> R;                    // adapted-frame R^a_{bcd}
  std::vector<TwoForm> forms;               // R^t_g
  Eigen::MatrixXd ricci, ricci_transposed;  // R_{bc} = R^a_{bca} and its transpose
  double scalar = 0;
};

inline CurvatureData curvature_data(const std::vector<double>& R, const Eigen::MatrixXd& gi) {
  const int dim = static_cast<int>(gi.rows());
  CurvatureData d;
  d.R = R;
  d.forms = curvature_two_forms(R, dim);
  d.ricci = Eigen::MatrixXd::Zero(dim, dim);
  for (int b = 0; b < dim; ++b)
    for (int c = 0; c < dim; ++c)
      for (int a = 0; a < dim; ++a) d.ricci(b, c) += R[idx4(dim, a, b, c, a)];
  d.ricci_transposed = d.ricci.transpose();
  d.scalar = (gi.array() * d.ricci.array()).sum();
  return d;
}

/// max |R^a_b - 1/2 (R + lambda) delta - 8 pi G T^a_b|
inline double einstein_tensor_residual(const CurvatureData& c, const Eigen::MatrixXd& gi, const EinsteinConfig& cfg) {
  const int dim = static_cast<int>(gi.rows());
  Eigen::MatrixXd mixed = gi * c.ricci;
  double r = 0;
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b) {
      double v = mixed(a, b) - (a == b ? 0.5 * (c.scalar + cfg.lambda) : 0.0);
      if (!cfg.source.empty()) v -= 8 * M_PI * cfg.G * cfg.source[a * dim + b];
      r = std::max(r, std::abs(v));
    }
  return r;
}

/// Z-source 3-forms zT_t = -(8 pi G)^-1 eps_{abgt} e^a ^ Z^{bg}
inline std::vector<ThreeForm> distortion_source(const std::vector<TwoForm>& Zup, int dim, double G) {
  auto f = einstein_three_forms(Zup, dim);
  for (auto& t : f)
    for (double& x : t.c) x *= -1.0 / (8 * M_PI * G);
  return f;
}

/// max over t of |eps (e ^ R^{bg} + lambda e^e^e) - 8 pi G source_t|
inline double einstein_form_residual(const std::vector<TwoForm>& Rup, double lambda, const std::vector<ThreeForm>* source,
                                     double G = 1) {
  const int dim = static_cast<int>(Rup[0].rows());
  auto lhs = einstein_three_forms(Rup, dim);
  auto vol = volume_three_forms(dim);
  double r = 0;
  for (int t = 0; t < dim; ++t) {
    ThreeForm x = lhs[t];
    for (std::size_t k = 0; k < x.c.size(); ++k) {
      x.c[k] += lambda * vol[t].c[k];
      if (source) x.c[k] -= 8 * M_PI * G * (*source)[t].c[k];
    }
    r = std::max(r, x.max_abs());
  }
  return r;
}

/// max |R^{bg} + lambda e^b ^ e^g|
inline double constant_curvature_form_residual(const std::vector<TwoForm>& Rup, double lambda) {
  const int dim = static_cast<int>(Rup[0].rows());
  double r = 0;
  for (int b = 0; b < dim; ++b)
    for (int g = 0; g < dim; ++g)
      r = std::max(r, (Rup[b * dim + g] + lambda * wedge11(b, g, dim)).cwiseAbs().maxCoeff());
  return r;
}

/// -1/4 J^a_t R^t_a
inline TwoForm chern_weyl(const std::vector<TwoForm>& F, const Eigen::MatrixXd& J) {
  const int dim = static_cast<int>(J.rows());
  TwoForm g = TwoForm::Zero(dim, dim);
  for (int t = 0; t < dim; ++t)
    for (int a = 0; a < dim; ++a)
      if (J(a, t) != 0) g += -0.25 * J(a, t) * F[t * dim + a];
  return g;
}

/// -i Tr[Pi R] with Pi = 1/2 (Id - i J); returns the complex 2-form
inline Eigen::MatrixXcd chern_weyl_projector(const std::vector<TwoForm>& F, const Eigen::MatrixXd& J) {
  const int dim = static_cast<int>(J.rows());
  const std::complex<double> I(0, 1);
  Eigen::MatrixXcd Pi = 0.5 * (Eigen::MatrixXcd::Identity(dim, dim) - I * J.cast<std::complex<double>>());
  Eigen::MatrixXcd g = Eigen::MatrixXcd::Zero(dim, dim);
  for (int t = 0; t < dim; ++t)
    for (int a = 0; a < dim; ++a) g += -I * Pi(a, t) * F[t * dim + a].cast<std::complex<double>>();
  return g;
}

/// 1/4 J_{ta}(s lambda e^t ^ e^a + Z^{ta}) with J_{ta} = g_{am} J^m_t; s = +1 is the sign implied by the trace route
inline TwoForm chern_weyl_vacuum(const std::vector<TwoForm>& Zup, const Eigen::MatrixXd& J, const Eigen::MatrixXd& g,
                                 double lambda, double s = 1) {
  const int dim = static_cast<int>(J.rows());
  Eigen::MatrixXd Jl = (g * J).transpose();  // Jl(t,a) = g_{am} J^m_t
  TwoForm out = TwoForm::Zero(dim, dim);
  for (int t = 0; t < dim; ++t)
    for (int a = 0; a < dim; ++a)
      if (Jl(t, a) != 0) out += 0.25 * Jl(t, a) * (s * lambda * wedge11(t, a, dim) + Zup[t * dim + a]);
  return out;
}

/// e^a ^ gamma - eps^{abgt} 2 pi G J_{bg} T_t + lambda/4 J_{bg} e^a ^ e^b ^ e^g, max over a
inline double deformed_einstein_residual(const TwoForm& gamma, const Eigen::MatrixXd& J, const Eigen::MatrixXd& g,
                                         const std::vector<ThreeForm>& source, double lambda, double G = 1) {
  const int dim = static_cast<int>(J.rows());
  Eigen::MatrixXd gi = g.inverse();
  Eigen::MatrixXd Jl = (g * J).transpose();
  // eps^{abct}: all four slots of the symbol raised with the inverse metric
  std::vector<double> up(dim * dim * dim * dim, 0.0);
  for (int p = 0; p < dim; ++p)
    for (int q = 0; q < dim; ++q)
      for (int s = 0; s < dim; ++s)
        for (int u = 0; u < dim; ++u) {
          int e = levi_civita_symbol(p, q, s, u);
          if (!e) continue;
          for (int a = 0; a < dim; ++a)
            for (int b = 0; b < dim; ++b)
              for (int c = 0; c < dim; ++c)
                for (int t = 0; t < dim; ++t) up[idx4(dim, a, b, c, t)] += e * gi(a, p) * gi(b, q) * gi(c, s) * gi(t, u);
        }
  double r = 0;
  for (int a = 0; a < dim; ++a) {
    ThreeForm x(dim);
    x.add_wedge(a, gamma);
    for (int b = 0; b < dim; ++b)
      for (int c = 0; c < dim; ++c) {
        if (Jl(b, c) == 0) continue;
        for (int t = 0; t < dim; ++t) {
          double e = up[idx4(dim, a, b, c, t)];
          if (e == 0) continue;
          for (std::size_t k = 0; k < x.c.size(); ++k) x.c[k] -= e * 2 * M_PI * G * Jl(b, c) * source[t].c[k];
        }
        x.add_wedge(a, wedge11(b, c, dim), 0.25 * lambda * Jl(b, c));
      }
    r = std::max(r, x.max_abs());
  }
  return r;
}

// ---- Cartan structure equations in coordinate components ----

struct CartanResidual {
  double first = 0, second = 0;
};

/** \brief de^a - e^m ^ w^a_m + 1/2 T^a e e and dw + w^w + 1/2 R e e, coordinate components.
 *
 * T is the torsion to test against; by default the d-connection parametrization, so that a
 * corrupted connection is detected by the first equation.
 */
inline CartanResidual cartan_structure_check(const Connection& c, const Geometry& geo, const SVec* torsion_in = nullptr) {
  const int dim = geo.dim;
  SVec C = geo.coframe();
  SVec T = torsion_in ? *torsion_in : dtorsion(c, geo);
  std::vector<double> R = values(curvature(c, geo, 0));
  // w^a_{b,v} = G^a_{bg} C^g_v
  int ord = std::min(c.order(), C[0].order());
  SVec w(dim * dim * dim, RSeries(*geo.basis, ord));
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b)
      for (int v = 0; v < dim; ++v)
        for (int g = 0; g < dim; ++g)
          if (C[g * dim + v].max_abs() != 0) RSeries::fma(w[(a * dim + b) * dim + v], c(a, b, g), C[g * dim + v]);
  Eigen::MatrixXd Cv = values(C, dim, dim);
  auto W = [&](int a, int b, int v) { return w[(a * dim + b) * dim + v].value(); };
  CartanResidual out;
  for (int a = 0; a < dim; ++a)
    for (int r = 0; r < dim; ++r)
      for (int s = r + 1; s < dim; ++s) {
        double v = C[a * dim + s].deriv(r).value() - C[a * dim + r].deriv(s).value();
        for (int m = 0; m < dim; ++m) v -= Cv(m, r) * W(a, m, s) - Cv(m, s) * W(a, m, r);
        for (int b = 0; b < dim; ++b)
          for (int g = 0; g < dim; ++g) v += T[(a * dim + b) * dim + g].value() * Cv(b, r) * Cv(g, s);
        out.first = std::max(out.first, std::abs(v));
      }
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b)
      for (int r = 0; r < dim; ++r)
        for (int s = r + 1; s < dim; ++s) {
          double v = w[(a * dim + b) * dim + s].deriv(r).value() - w[(a * dim + b) * dim + r].deriv(s).value();
          for (int m = 0; m < dim; ++m) v += W(a, m, r) * W(m, b, s) - W(a, m, s) * W(m, b, r);
          for (int g = 0; g < dim; ++g)
            for (int d = 0; d < dim; ++d) v += R[idx4(dim, a, b, g, d)] * Cv(g, r) * Cv(d, s);
          out.second = std::max(out.second, std::abs(v));
        }
  return out;
}

}  // namespace lfq

#endif
