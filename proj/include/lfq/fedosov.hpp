#ifndef LFQ_FEDOSOV_HPP
#define LFQ_FEDOSOV_HPP

#include <bit>
#include <complex>
#include <cstdint>
#include <map>
#include <optional>
#include <tuple>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "connection.hpp"
#include "corpus.hpp"
#include "geometry.hpp"
#include "series.hpp"

namespace lfq {

using cplx = std::complex<double>;
using CVec = std::vector<CSeries>;

struct CapMismatch : std::runtime_error {
  explicit CapMismatch(const std::string& w) : std::runtime_error("CapMismatch: " + w) {}
};
struct BudgetExceeded : std::runtime_error {
  explicit BudgetExceeded(const std::string& w) : std::runtime_error("BudgetExceeded: " + w) {}
};

/** \brief Packed key of a Wick monomial v^r z^s e^q.
 *
 * bits 0-3 hold r, bits 4-11 the coframe mask q, and 4 bits per fiber
 * variable from bit 12 on. Supports 2n <= 8 and exponents <= 15.
 */
namespace wkey {

constexpr int kZ = 12;
inline int vpow(std::uint64_t k) { return static_cast<int>(k & 15u); }
inline unsigned qmask(std::uint64_t k) { return static_cast<unsigned>((k >> 4) & 255u); }
inline int zexp(std::uint64_t k, int a) { return static_cast<int>((k >> (kZ + 4 * a)) & 15u); }
inline std::uint64_t zbits(std::uint64_t k) { return k >> kZ << kZ; }
inline int qdeg(std::uint64_t k) { return std::popcount(qmask(k)); }
inline int zdeg(std::uint64_t k) {
  int s = 0;
  for (std::uint64_t z = k >> kZ; z; z >>= 4) s += static_cast<int>(z & 15u);
  return s;
}
inline int Deg(std::uint64_t k) { return 2 * vpow(k) + zdeg(k); }
inline std::uint64_t make(int r, unsigned q, std::uint64_t z) { return static_cast<std::uint64_t>(r) | (static_cast<std::uint64_t>(q) << 4) | z; }
inline std::uint64_t zunit(int a) { return std::uint64_t{1} << (kZ + 4 * a); }
inline std::uint64_t with_q(std::uint64_t k, unsigned q) { return (k & ~(std::uint64_t{255} << 4)) | (static_cast<std::uint64_t>(q) << 4); }
inline std::uint64_t with_r(std::uint64_t k, int r) { return (k & ~std::uint64_t{15}) | static_cast<std::uint64_t>(r); }

/// sign of e^qa ^ e^qb relative to the sorted product; 0 if they overlap
inline int wedge_sign(unsigned qa, unsigned qb) {
  if (qa & qb) return 0;
  int swaps = 0;
  for (unsigned b = qb; b; b &= b - 1) {
    int i = std::countr_zero(b);
    swaps += std::popcount(qa >> (i + 1));
  }
  return swaps & 1 ? -1 : 1;
}
/// sign of removing index a from e^q (interior product with e_a)
inline int interior_sign(unsigned q, int a) { return std::popcount(q & ((1u << a) - 1)) & 1 ? -1 : 1; }

}  // namespace wkey

/** \brief Truncated element of the Wick algebra with form values; coefficients carry u-jets. */
struct WickElement {
  int dim = 0;
  int K = 0;    // Deg cap
  int jet = 0;  // common Taylor order of all coefficients
  const MonomialBasis* basis = nullptr;
  std::map<std::uint64_t, CSeries> terms;

  WickElement() = default;
  WickElement(int dim_, int K_, int jet_, const MonomialBasis& b) : dim(dim_), K(K_), jet(jet_), basis(&b) {
    if (dim > 8 || K > 14) throw std::invalid_argument("Wick keys support 2n <= 8 and Deg cap <= 14");
  }

  WickElement empty_like(int j) const { return WickElement(dim, K, j, *basis); }
  CSeries zero() const { return CSeries(*basis, jet); }

  /// this[key] += s * c, dropping keys above the Deg cap
  void add(std::uint64_t key, const CSeries& c, cplx s = 1.0) {
    if (wkey::Deg(key) > K) return;
    auto it = terms.find(key);
    if (it == terms.end()) it = terms.emplace(key, zero()).first;
    auto& dst = it->second.coeffs();
    const auto& src = c.coeffs();
    if (src.size() < dst.size()) throw JetExhausted("coefficient jet below element jet");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
  }
  void add_product(std::uint64_t key, const CSeries& a, const CSeries& b, cplx s) {
    if (wkey::Deg(key) > K) return;
    auto it = terms.find(key);
    if (it == terms.end()) it = terms.emplace(key, zero()).first;
    CSeries::fma(it->second, a, b, s);
  }

  WickElement& operator+=(const WickElement& o) {
    check_caps(o);
    *this = truncated(std::min(jet, o.jet));
    for (auto& [k, c] : o.terms) add(k, c);
    return *this;
  }
  WickElement& operator-=(const WickElement& o) {
    check_caps(o);
    *this = truncated(std::min(jet, o.jet));
    for (auto& [k, c] : o.terms) add(k, c, -1.0);
    return *this;
  }
  WickElement operator+(const WickElement& o) const { return WickElement(*this) += o; }
  WickElement operator-(const WickElement& o) const { return WickElement(*this) -= o; }
  WickElement scaled(cplx s) const {
    WickElement r = *this;
    for (auto& [k, c] : r.terms) c *= s;
    return r;
  }

  WickElement truncated(int j) const {
    if (j >= jet) return *this;
    if (j < 0) throw JetExhausted("Wick element jet budget exhausted");
    WickElement r(dim, K, j, *basis);
    for (auto& [k, c] : terms) r.terms.emplace(k, c.truncated(j));
    return r;
  }
  WickElement with_cap(int k) const {
    WickElement r(dim, k, jet, *basis);
    for (auto& [key, c] : terms) r.add(key, c);
    return r;
  }

  /// Deg-homogeneous component
  WickElement deg_part(int d) const {
    WickElement r = empty_like(jet);
    for (auto& [k, c] : terms)
      if (wkey::Deg(k) == d) r.terms.emplace(k, c);
    return r;
  }
  WickElement deg_range(int lo, int hi) const {
    WickElement r = empty_like(jet);
    for (auto& [k, c] : terms)
      if (wkey::Deg(k) >= lo && wkey::Deg(k) <= hi) r.terms.emplace(k, c);
    return r;
  }

  /// largest Taylor coefficient over all terms
  double max_abs() const {
    double m = 0;
    for (auto& [k, c] : terms) m = std::max(m, c.max_abs());
    return m;
  }
  /// largest coefficient value at the base point
  double max_value_abs() const {
    double m = 0;
    for (auto& [k, c] : terms) m = std::max(m, std::abs(c.value()));
    return m;
  }
  bool is_zero() const { return max_abs() == 0; }

  void check_caps(const WickElement& o) const {
    if (dim != o.dim || K != o.K || basis != o.basis)
      throw CapMismatch("dim/Deg cap/base point differ (" + std::to_string(K) + " vs " + std::to_string(o.K) + ")");
  }
};

inline double max_abs_diff(const WickElement& a, const WickElement& b) { return (a - b).max_abs(); }

/** \brief Fiber tensors and connection data at the base point, as complex jets. */
struct FiberData {
  int n = 0, dim = 0, K = 0;
  const MonomialBasis* basis = nullptr;
  std::string kind;
  bool torsion_free = false;
  CVec Lam;       // Lambda^{ab} = theta^{ab} - i g^{ab}
  CVec theta;     // theta_{ab}
  CVec theta_up;  // theta^{ab} = -(theta^{-1})^{ab}
  CVec ginv;      // g^{ab}
  CVec Gam;       // Gamma^a_{bc} at (a*dim+b)*dim+c
  CVec w;         // anholonomy w^a_{bc}
  CVec T;         // torsion T^a_{bc}
  CVec R;         // curvature R^a_{bcd}
  CVec N;         // N^a_i at a*n+i
  Eigen::MatrixXd J;

  const CSeries& gam(int a, int b, int c) const { return Gam[(a * dim + b) * dim + c]; }
  const CSeries& anh(int a, int b, int c) const { return w[(a * dim + b) * dim + c]; }

  int ord_lambda() const { return Lam[0].order(); }
  int ord_connection() const { return std::min(Gam[0].order(), w[0].order()); }

  /// frame derivative e_alpha on a complex jet
  CSeries e(const CSeries& f, int alpha) const {
    CSeries r = f.deriv(alpha);
    if (alpha < n)
      for (int a = 0; a < n; ++a) {
        const CSeries& Na = N[a * n + alpha];
        if (Na.max_abs() == 0) continue;
        CSeries::fma(r, Na, f.deriv(n + a), -1.0);
      }
    return r;
  }

  struct PairTerm {
    int k;
    std::uint64_t za, zb;
    CSeries w;
  };
  /// memo of the pairing expansion per monomial pair and jet; not thread-safe
  mutable std::map<std::tuple<std::uint64_t, std::uint64_t, int>, std::vector<PairTerm>> pair_cache_;

  /// sum over k of (i/2)^k/k! (Lambda d_a (x) d_b)^k applied to z^za (x) z^zb, weights to the given jet
  const std::vector<PairTerm>& pairings(std::uint64_t za, std::uint64_t zb, int jet) const {
    jet = std::min(jet, ord_lambda());
    auto key = std::make_tuple(za, zb, jet);
    auto it = pair_cache_.find(key);
    if (it != pair_cache_.end()) return it->second;
    std::vector<PairTerm> out;
    std::map<std::pair<std::uint64_t, std::uint64_t>, CSeries> cur;
    cur.emplace(std::make_pair(za, zb), CSeries::constant(*basis, jet, 1.0));
    out.push_back({0, za, zb, cur.begin()->second});
    const cplx half_i(0, 0.5);
    cplx fac = 1;
    for (int k = 1; !cur.empty(); ++k) {
      std::map<std::pair<std::uint64_t, std::uint64_t>, CSeries> nxt;
      for (auto& [zz, wgt] : cur)
        for (int a = 0; a < dim; ++a) {
          int ea = wkey::zexp(zz.first, a);
          if (!ea) continue;
          for (int b = 0; b < dim; ++b) {
            int eb = wkey::zexp(zz.second, b);
            if (!eb) continue;
            const CSeries& L = Lam[a * dim + b];
            if (L.max_abs() == 0) continue;
            auto nk = std::make_pair(zz.first - wkey::zunit(a), zz.second - wkey::zunit(b));
            auto jt = nxt.find(nk);
            if (jt == nxt.end()) jt = nxt.emplace(nk, CSeries(*basis, jet)).first;
            CSeries::fma(jt->second, wgt, L, static_cast<double>(ea * eb));
          }
        }
      fac *= half_i / static_cast<double>(k);
      for (auto& [zz, wgt] : nxt) {
        CSeries s = wgt;
        s *= fac;
        out.push_back({k, zz.first, zz.second, s});
      }
      cur.swap(nxt);
    }
    return pair_cache_.emplace(key, std::move(out)).first->second;
  }
};

/// Lambda from theta and g; theta^{ab} is fixed by theta^{ab} theta_{bc} = -delta
inline FiberData fiber_data(const Geometry& geo, const Connection& c, int K, bool torsion_free = false) {
  FiberData fd;
  fd.n = geo.n;
  fd.dim = geo.dim;
  fd.K = K;
  fd.basis = geo.basis;
  fd.kind = c.kind;
  fd.torsion_free = torsion_free;
  const int dim = geo.dim;
  auto cx = [](const SVec& v) {
    CVec o;
    o.reserve(v.size());
    for (auto& s : v) o.push_back(to_complex(s));
    return o;
  };
  SVec th = geo.theta_adapted();
  SVec thi = invert(th, dim);
  fd.theta = cx(th);
  fd.theta_up = cx(thi);
  for (auto& s : fd.theta_up) s *= -1.0;
  fd.ginv = cx(geo.adapted_metric_inverse());
  int ol = std::min(fd.theta_up[0].order(), fd.ginv[0].order());
  fd.Lam.assign(dim * dim, CSeries(*geo.basis, ol));
  for (int k = 0; k < dim * dim; ++k) {
    fd.Lam[k] += fd.theta_up[k];
    fd.Lam[k].axpy(cplx(0, -1), fd.ginv[k]);
  }
  fd.Gam = cx(c.G);
  fd.w = cx(geo.anholonomy());
  fd.N = cx(geo.N);
  SVec T = torsion(c, geo);
  fd.T = cx(T);
  if (torsion_free)
    for (auto& s : fd.T) s = CSeries(*geo.basis, s.order());
  fd.R = cx(curvature(c, geo));
  fd.J = geo.J_adapted();
  return fd;
}

inline WickElement make_element(const FiberData& fd, int jet) { return WickElement(fd.dim, fd.K, jet, *fd.basis); }

/// scalar field f as the Deg-0 element
inline WickElement scalar_element(const FiberData& fd, const CSeries& f) {
  WickElement e = make_element(fd, f.order());
  e.add(0, f);
  return e;
}

namespace detail {

/// sum of pairings with k >= kmin, v-power lowered by vshift, scale s
inline void accumulate_product(WickElement& out, const WickElement& a, const WickElement& b, const FiberData& fd, int kmin,
                               int vshift, cplx s) {
  for (auto& [ka, ca] : a.terms) {
    unsigned qa = wkey::qmask(ka);
    for (auto& [kb, cb] : b.terms) {
      unsigned qb = wkey::qmask(kb);
      int sg = wkey::wedge_sign(qa, qb);
      if (!sg) continue;
      // pairings conserve Deg
      if (wkey::Deg(ka) + wkey::Deg(kb) - 2 * vshift > out.K) continue;
      const auto& pts = fd.pairings(wkey::zbits(ka), wkey::zbits(kb), out.jet);
      bool any = false;
      for (auto& pt : pts)
        if (pt.k >= kmin) any = true;
      if (!any) continue;
      CSeries ab = CSeries::mul(ca, cb, out.jet);
      int r0 = wkey::vpow(ka) + wkey::vpow(kb) - vshift;
      for (auto& pt : pts) {
        if (pt.k < kmin) continue;
        std::uint64_t key = wkey::make(r0 + pt.k, qa | qb, pt.za + pt.zb);
        out.add_product(key, ab, pt.w, s * static_cast<double>(sg));
      }
    }
  }
}

}  // namespace detail

/// a o b
inline WickElement wick_product(const WickElement& a, const WickElement& b, const FiberData& fd) {
  a.check_caps(b);
  WickElement out = a.empty_like(std::min({a.jet, b.jet, fd.ord_lambda()}));
  detail::accumulate_product(out, a, b, fd, 0, 0, 1.0);
  return out;
}

/// graded commutator [a,b] = a o b - (-1)^{|a||b|} b o a for form-homogeneous pieces
inline WickElement commutator(const WickElement& a, const WickElement& b, const FiberData& fd) {
  a.check_caps(b);
  WickElement out = a.empty_like(std::min({a.jet, b.jet, fd.ord_lambda()}));
  detail::accumulate_product(out, a, b, fd, 1, 0, 1.0);
  for (int pa = 0; pa <= fd.dim; ++pa)
    for (int pb = 0; pb <= fd.dim; ++pb) {
      WickElement ap = a.empty_like(a.jet), bp = b.empty_like(b.jet);
      for (auto& [k, c] : a.terms)
        if (wkey::qdeg(k) == pa) ap.terms.emplace(k, c);
      for (auto& [k, c] : b.terms)
        if (wkey::qdeg(k) == pb) bp.terms.emplace(k, c);
      if (ap.terms.empty() || bp.terms.empty()) continue;
      detail::accumulate_product(out, bp, ap, fd, 1, 0, (pa * pb) % 2 ? 1.0 : -1.0);
    }
  return out;
}

/// (1/v)[a,b]; the pairing-free part of a graded commutator cancels identically
inline WickElement ad_over_v(const WickElement& a, const WickElement& b, const FiberData& fd) {
  a.check_caps(b);
  WickElement out = a.empty_like(std::min({a.jet, b.jet, fd.ord_lambda()}));
  detail::accumulate_product(out, a, b, fd, 1, 1, 1.0);
  std::map<int, WickElement> ap, bp;
  for (auto& [k, c] : a.terms) {
    auto it = ap.try_emplace(wkey::qdeg(k), a.empty_like(a.jet)).first;
    it->second.terms.emplace(k, c);
  }
  for (auto& [k, c] : b.terms) {
    auto it = bp.try_emplace(wkey::qdeg(k), b.empty_like(b.jet)).first;
    it->second.terms.emplace(k, c);
  }
  for (auto& [pa, ea] : ap)
    for (auto& [pb, eb] : bp) detail::accumulate_product(out, eb, ea, fd, 1, 1, (pa * pb) % 2 ? 1.0 : -1.0);
  return out;
}

/// (i/v) ad(a)(b)
inline WickElement i_over_v_ad(const WickElement& a, const WickElement& b, const FiberData& fd) {
  return ad_over_v(a, b, fd).scaled(cplx(0, 1));
}

/// delta(a) = e^alpha ^ d a / d z^alpha
inline WickElement delta(const WickElement& a) {
  WickElement out = a.empty_like(a.jet);
  for (auto& [k, c] : a.terms) {
    unsigned q = wkey::qmask(k);
    for (int al = 0; al < a.dim; ++al) {
      int e = wkey::zexp(k, al);
      if (!e) continue;
      int sg = wkey::wedge_sign(1u << al, q);
      if (!sg) continue;
      std::uint64_t nk = wkey::with_q(k - wkey::zunit(al), q | (1u << al));
      out.add(nk, c, static_cast<double>(sg * e));
    }
  }
  return out;
}

/// delta^{-1} on the (p,q) part: z^alpha i(e_alpha) a / (p+q), zero on p = q = 0
inline WickElement delta_inv(const WickElement& a) {
  WickElement out = a.empty_like(a.jet);
  for (auto& [k, c] : a.terms) {
    unsigned q = wkey::qmask(k);
    int pq = wkey::zdeg(k) + wkey::qdeg(k);
    if (pq == 0) continue;
    for (unsigned b = q; b; b &= b - 1) {
      int al = std::countr_zero(b);
      std::uint64_t nk = wkey::with_q(k + wkey::zunit(al), q & ~(1u << al));
      out.add(nk, c, static_cast<double>(wkey::interior_sign(q, al)) / pq);
    }
  }
  return out;
}

/// projection onto deg_s = deg_a = 0, as a formal series in v (index = v power)
inline CVec sigma(const WickElement& a) {
  CVec out;
  for (auto& [k, c] : a.terms) {
    if (wkey::zdeg(k) || wkey::qmask(k)) continue;
    int r = wkey::vpow(k);
    if (static_cast<int>(out.size()) <= r) out.resize(r + 1, CSeries(*a.basis, a.jet));
    out[r] += c;
  }
  return out;
}
inline WickElement sigma_element(const WickElement& a) {
  WickElement out = a.empty_like(a.jet);
  for (auto& [k, c] : a.terms)
    if (!wkey::zdeg(k) && !wkey::qmask(k)) out.terms.emplace(k, c);
  return out;
}

/** \brief Lifted connection on Wick-valued forms.
 *
 * D(c z^s e^q) = e^alpha ^ (e_alpha c z^s - Gamma^g_{b alpha} c z^b d_g z^s) e^q + c z^s d e^q,
 * with d e^a = -1/2 w^a_{bc} e^b ^ e^c. Consumes one jet order.
 */
inline WickElement lift_connection(const WickElement& a, const FiberData& fd) {
  if (a.jet < 1) throw JetExhausted("lifted connection needs jet budget >= 1");
  const int dim = fd.dim;
  int j = std::min(a.jet - 1, fd.ord_connection());
  WickElement out = a.empty_like(j);
  for (auto& [k, c] : a.terms) {
    unsigned q = wkey::qmask(k);
    for (int al = 0; al < dim; ++al) {
      int sg = wkey::wedge_sign(1u << al, q);
      if (!sg) continue;
      std::uint64_t kq = wkey::with_q(k, q | (1u << al));
      out.add(kq, fd.e(c, al), static_cast<double>(sg));
      for (int g = 0; g < dim; ++g) {
        int e = wkey::zexp(k, g);
        if (!e) continue;
        for (int b = 0; b < dim; ++b) {
          const CSeries& G = fd.gam(g, b, al);
          if (G.max_abs() == 0) continue;
          std::uint64_t nk = kq - wkey::zunit(g) + wkey::zunit(b);
          out.add_product(nk, c, G, -static_cast<double>(sg * e));
        }
      }
    }
    // exterior derivative of the coframe monomial
    for (unsigned bits = q; bits; bits &= bits - 1) {
      int qj = std::countr_zero(bits);
      int pos = std::popcount(q & ((1u << qj) - 1));
      unsigned rest = q & ~(1u << qj);
      for (int b = 0; b < dim; ++b)
        for (int cc = b + 1; cc < dim; ++cc) {
          const CSeries& W = fd.anh(qj, b, cc);
          if (W.max_abs() == 0) continue;
          unsigned two = (1u << b) | (1u << cc);
          int sg = wkey::wedge_sign(two, rest);
          if (!sg) continue;
          double s = (pos & 1 ? -1.0 : 1.0) * -1.0 * sg;
          out.add_product(wkey::with_q(k, two | rest), c, W, s);
        }
    }
  }
  return out;
}

/// zT = z^g/2 theta_{gt} T^t_{ab} e^a ^ e^b
inline WickElement lifted_torsion(const FiberData& fd) {
  const int dim = fd.dim;
  WickElement out = make_element(fd, std::min(fd.theta[0].order(), fd.T[0].order()));
  if (fd.torsion_free) return out;
  for (int g = 0; g < dim; ++g)
    for (int a = 0; a < dim; ++a)
      for (int b = a + 1; b < dim; ++b)
        for (int t = 0; t < dim; ++t) {
          const CSeries& th = fd.theta[g * dim + t];
          const CSeries& T = fd.T[(t * dim + a) * dim + b];
          if (th.max_abs() == 0 || T.max_abs() == 0) continue;
          out.add_product(wkey::make(0, (1u << a) | (1u << b), wkey::zunit(g)), th, T, 1.0);
        }
  return out;
}

/// zR = z^g z^f/4 theta_{gt} R^t_{fab} e^a ^ e^b
inline WickElement lifted_curvature(const FiberData& fd) {
  const int dim = fd.dim;
  WickElement out = make_element(fd, std::min(fd.theta[0].order(), fd.R[0].order()));
  for (int g = 0; g < dim; ++g)
    for (int f = 0; f < dim; ++f)
      for (int a = 0; a < dim; ++a)
        for (int b = a + 1; b < dim; ++b)
          for (int t = 0; t < dim; ++t) {
            const CSeries& th = fd.theta[g * dim + t];
            const CSeries& R = fd.R[idx4(dim, t, f, a, b)];
            if (th.max_abs() == 0 || R.max_abs() == 0) continue;
            out.add_product(wkey::make(0, (1u << a) | (1u << b), wkey::zunit(g) + wkey::zunit(f)), th, R, 0.5);
          }
  return out;
}

/// random sparse element with Deg <= maxdeg and form degree <= maxform
inline WickElement random_wick_element(const FiberData& fd, std::mt19937_64& rng, int nterms, int maxdeg, int maxform,
                                       int jet) {
  WickElement e = make_element(fd, jet);
  auto uni = [&] { return 2 * unit_uniform(rng) - 1; };
  for (int t = 0; t < nterms; ++t) {
    int d = static_cast<int>(unit_uniform(rng) * (maxdeg + 1));
    int r = static_cast<int>(unit_uniform(rng) * (d / 2 + 1));
    std::uint64_t z = 0;
    for (int s = 0; s < d - 2 * r; ++s) z += wkey::zunit(static_cast<int>(unit_uniform(rng) * fd.dim));
    unsigned q = 0;
    int nf = static_cast<int>(unit_uniform(rng) * (maxform + 1));
    for (int s = 0; s < nf; ++s) q |= 1u << static_cast<int>(unit_uniform(rng) * fd.dim);
    CSeries c(*fd.basis, jet);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = cplx(uni(), uni());
    e.add(wkey::make(r, q, z), c);
  }
  return e;
}

// ---- identities ----

struct FedosovIdentityResiduals {
  double torsion = 0;    // [D, delta] - (i/v) ad(zT)
  double curvature = 0;  // D^2 + (i/v) ad(zR)
  double derivation = 0; // D(a o b) - Da o b - (-1)^|a| a o Db
};

inline double graded_derivation_residual(const WickElement& a, const WickElement& b, const FiberData& fd) {
  WickElement lhs = lift_connection(wick_product(a, b, fd), fd);
  WickElement res = lhs - wick_product(lift_connection(a, fd), b, fd);
  WickElement even = a.empty_like(a.jet), odd = a.empty_like(a.jet);
  for (auto& [k, c] : a.terms) (wkey::qdeg(k) % 2 ? odd : even).terms.emplace(k, c);
  WickElement Db = lift_connection(b, fd);
  res -= wick_product(even, Db, fd);
  res += wick_product(odd, Db, fd);
  return res.max_abs();
}

inline FedosovIdentityResiduals fedosov_identity_residuals(const FiberData& fd, const std::vector<WickElement>& samples) {
  FedosovIdentityResiduals out;
  WickElement zT = lifted_torsion(fd), zR = lifted_curvature(fd);
  for (auto& a : samples) {
    WickElement Da = lift_connection(a, fd);
    WickElement comm = lift_connection(delta(a), fd) + delta(Da);
    out.torsion = std::max(out.torsion, max_abs_diff(comm, i_over_v_ad(zT.truncated(a.jet), a, fd)));
    WickElement D2 = lift_connection(Da, fd);
    out.curvature = std::max(out.curvature, (D2 + i_over_v_ad(zR, a, fd)).max_abs());
  }
  for (std::size_t i = 0; i + 1 < samples.size(); i += 2)
    out.derivation = std::max(out.derivation, graded_derivation_residual(samples[i], samples[i + 1], fd));
  return out;
}

// ---- Fedosov connection ----

/// Deg-homogeneous pieces r^(k), k = 0..Kmax
struct FedosovR {
  int Kmax = 0;
  std::vector<WickElement> part;
  WickElement sum() const {
    WickElement s = part[0];
    for (std::size_t k = 1; k < part.size(); ++k) s += part[k];
    return s;
  }
};

/** \brief r^(2) = delta^-1 zT, r^(3) = delta^-1(zR + D r2 - (i/v) r2 o r2), then the Deg convolution. */
inline FedosovR solve_r(const FiberData& fd, int Kmax) {
  if (Kmax > fd.K) throw CapMismatch("Kmax exceeds the fiber Deg cap");
  FedosovR r;
  r.Kmax = Kmax;
  WickElement zT = lifted_torsion(fd), zR = lifted_curvature(fd);
  r.part.assign(std::max(Kmax + 1, 3), make_element(fd, zT.jet));
  if (Kmax >= 2) r.part[2] = delta_inv(zT);
  for (int k = 3; k <= Kmax; ++k) {
    // (i/v) sum_l r^(l) o r^(k+1-l) = (i/2v) sum_l [r^(l), r^(k+1-l)] for odd r
    WickElement rhs = lift_connection(r.part[k - 1], fd);
    if (k == 3) rhs += zR;
    for (int l = 2; l <= k - 1; ++l) {
      int m = k + 1 - l;
      if (m < 2) continue;
      rhs -= ad_over_v(r.part[l], r.part[m], fd).scaled(cplx(0, 0.5));
    }
    r.part[k] = delta_inv(rhs).deg_part(k);
  }
  r.part.resize(Kmax + 1);
  return r;
}

/// delta r - (zT + zR + D r - (i/v) r o r), Deg components lo..hi
inline double r_equation_residual(const FiberData& fd, const FedosovR& r, int hi) {
  WickElement rs = r.sum();
  WickElement rhs = lifted_torsion(fd) + lifted_curvature(fd) + lift_connection(rs, fd) -
                    ad_over_v(rs, rs, fd).scaled(cplx(0, 0.5));
  WickElement res = delta(rs) - rhs;
  return res.deg_range(0, hi).max_abs();
}

/// Fedosov connection -delta + D - (i/v) ad(r)
inline WickElement fedosov_apply(const WickElement& a, const FiberData& fd, const FedosovR& r) {
  WickElement out = lift_connection(a, fd) - delta(a);
  out -= i_over_v_ad(r.sum(), a, fd);
  return out;
}

/// tau(f)^(k+1) = delta^-1(D tau^(k) - (i/v) sum_l ad(r^(l+2)) tau^(k-l)), up to Deg kmax
inline std::vector<WickElement> tau_parts(const CSeries& f, const FiberData& fd, const FedosovR& r, int kmax) {
  if (r.Kmax < kmax + 1) throw BudgetExceeded("tau to Deg " + std::to_string(kmax) + " needs r to Deg " + std::to_string(kmax + 1));
  std::vector<WickElement> t;
  t.push_back(scalar_element(fd, f));
  for (int k = 0; k < kmax; ++k) {
    WickElement rhs = lift_connection(t[k], fd);
    for (int l = 0; l <= k; ++l) rhs -= i_over_v_ad(r.part[l + 2], t[k - l], fd);
    t.push_back(delta_inv(rhs).deg_part(k + 1));
  }
  return t;
}
inline WickElement tau(const CSeries& f, const FiberData& fd, const FedosovR& r, int kmax) {
  auto t = tau_parts(f, fd, r, kmax);
  WickElement s = t[0];
  for (std::size_t k = 1; k < t.size(); ++k) s += t[k];
  return s;
}

/// tau of a formal series sum_r v^r F_r, truncated at Deg cap
inline WickElement tau_series(const CVec& F, const FiberData& fd, const FedosovR& r, int cap) {
  std::optional<WickElement> s;
  for (int p = 0; p < static_cast<int>(F.size()) && 2 * p <= cap; ++p) {
    WickElement t = tau(F[p], fd, r, cap - 2 * p);
    WickElement shifted = t.empty_like(t.jet);
    for (auto& [k, c] : t.terms) shifted.add(wkey::with_r(k, wkey::vpow(k) + p), c);
    if (s) *s += shifted;
    else s = shifted;
  }
  if (!s) throw std::invalid_argument("empty formal series");
  return *s;
}

/** \brief Star product coefficients C_0..C_rmax of two formal series, sigma(tau(F) o tau(G)). */
inline CVec star_series(const CVec& F, const CVec& G, const FiberData& fd, const FedosovR& r, int rmax) {
  const int cap = 2 * rmax;
  if (r.Kmax < cap + 1)
    throw BudgetExceeded("star order " + std::to_string(rmax) + " needs r to Deg " + std::to_string(cap + 1) + ", have " +
                         std::to_string(r.Kmax));
  for (int p = 0; p < static_cast<int>(F.size()) && 2 * p <= cap; ++p)
    if (F[p].order() < cap - 2 * p)
      throw BudgetExceeded("star order " + std::to_string(rmax) + " needs jet order " + std::to_string(cap - 2 * p) +
                           " of the left factor, have " + std::to_string(F[p].order()));
  for (int p = 0; p < static_cast<int>(G.size()) && 2 * p <= cap; ++p)
    if (G[p].order() < cap - 2 * p)
      throw BudgetExceeded("star order " + std::to_string(rmax) + " needs jet order " + std::to_string(cap - 2 * p) +
                           " of the right factor, have " + std::to_string(G[p].order()));
  WickElement a, b;
  try {
    a = tau_series(F, fd, r, cap).with_cap(cap);
    b = tau_series(G, fd, r, cap).with_cap(cap);
  } catch (const JetExhausted& e) {
    throw BudgetExceeded(std::string("jet budget too small for star order ") + std::to_string(rmax) + ": " + e.what());
  }
  CVec s = sigma(wick_product(a, b, fd));
  s.resize(rmax + 1, CSeries(*fd.basis, 0));
  return s;
}
inline CVec star_product(const CSeries& f, const CSeries& g, const FiberData& fd, const FedosovR& r, int rmax) {
  return star_series({f}, {g}, fd, r, rmax);
}

/// {f,g} = theta^{ab} (e_a f)(e_b g) at the base point
inline cplx poisson_bracket(const CSeries& f, const CSeries& g, const FiberData& fd) {
  cplx s = 0;
  for (int a = 0; a < fd.dim; ++a)
    for (int b = 0; b < fd.dim; ++b) s += fd.theta_up[a * fd.dim + b].value() * fd.e(f, a).value() * fd.e(g, b).value();
  return s;
}

/// {f,g} as a jet, one order below the inputs
inline CSeries poisson_series(const CSeries& f, const CSeries& g, const FiberData& fd) {
  const int dim = fd.dim;
  CSeries out(*fd.basis, std::max(0, std::min({f.order(), g.order(), fd.theta_up[0].order() + 1}) - 1));
  for (int a = 0; a < dim; ++a) {
    CSeries ea = fd.e(f, a);
    for (int b = 0; b < dim; ++b) {
      if (fd.theta_up[a * dim + b].max_abs() == 0) continue;
      CSeries t = ea * fd.e(g, b);
      CSeries::fma(out, fd.theta_up[a * dim + b], t);
    }
  }
  return out;
}

/// g^{ab} (e_a f)(e_b g) at the base point
inline cplx metric_pairing(const CSeries& f, const CSeries& g, const FiberData& fd) {
  cplx s = 0;
  for (int a = 0; a < fd.dim; ++a)
    for (int b = 0; b < fd.dim; ++b) s += fd.ginv[a * fd.dim + b].value() * fd.e(f, a).value() * fd.e(g, b).value();
  return s;
}

/// connection Laplacian g^{ab}(e_a e_b f - Gamma^c_{ba} e_c f)
inline CSeries laplacian(const CSeries& f, const FiberData& fd) {
  const int dim = fd.dim;
  CSeries out(*fd.basis, std::max(0, std::min(f.order() - 2, fd.ginv[0].order())));
  std::vector<CSeries> ef;
  for (int c = 0; c < dim; ++c) ef.push_back(fd.e(f, c));
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b) {
      const CSeries& gi = fd.ginv[a * dim + b];
      if (gi.max_abs() == 0) continue;
      CSeries t = fd.e(ef[b], a);
      for (int c = 0; c < dim; ++c) CSeries::fma(t, fd.gam(c, b, a), ef[c], -1.0);
      CSeries::fma(out, gi, t);
    }
  return out;
}

/// symmetric and antisymmetric parts of C_1 and C_2 at the base point
struct StarCochains {
  cplx c1_sym, c1_anti, c2_sym, c2_anti;
};
inline StarCochains star_cochains(const CSeries& f, const CSeries& g, const FiberData& fd, const FedosovR& r) {
  CVec fg = star_product(f, g, fd, r, 2), gf = star_product(g, f, fd, r, 2);
  return {0.5 * (fg[1].value() + gf[1].value()), 0.5 * (fg[1].value() - gf[1].value()),
          0.5 * (fg[2].value() + gf[2].value()), 0.5 * (fg[2].value() - gf[2].value())};
}

/** \brief Antisymmetric part of C_2 for the equivalent product T(T^-1 f * T^-1 g), T = 1 - (v/4) Laplacian.
 *
 * The Wick-type product has sym C_1 = (1/2) g^{ab} e_a f e_b g; this equivalence removes it
 * and shifts C_2^- by (i/8)({Lap f, g} + {f, Lap g} - Lap{f, g}).
 */
inline cplx normalized_c2_antisym(const CSeries& f, const CSeries& g, const FiberData& fd, const FedosovR& r) {
  cplx raw = star_cochains(f, g, fd, r).c2_anti;
  cplx shift = poisson_series(laplacian(f, fd), g, fd).value() + poisson_series(f, laplacian(g, fd), fd).value() -
               laplacian(poisson_series(f, g, fd), fd).value();
  return raw + cplx(0, 0.125) * shift;
}

// ---- Karabegov form ----

/// kappa = -(i/8) J^a_t R^t_a - (i/6) d(J^a_t T^t_{ab} e^b), components kappa_{cd}
inline CVec karabegov_form(const FiberData& fd) {
  const int dim = fd.dim;
  const cplx I(0, 1);
  int ord = std::min(fd.R[0].order(), fd.T[0].order() - 1);
  ord = std::min(ord, fd.w[0].order());
  CVec psi(dim, CSeries(*fd.basis, fd.T[0].order()));
  for (int b = 0; b < dim; ++b)
    for (int a = 0; a < dim; ++a)
      for (int t = 0; t < dim; ++t)
        if (fd.J(a, t) != 0) psi[b].axpy(fd.J(a, t), fd.T[(t * dim + a) * dim + b]);
  CVec k(dim * dim, CSeries(*fd.basis, ord));
  for (int c = 0; c < dim; ++c)
    for (int d = 0; d < dim; ++d) {
      CSeries& x = k[c * dim + d];
      for (int a = 0; a < dim; ++a)
        for (int t = 0; t < dim; ++t)
          if (fd.J(a, t) != 0) x.axpy(-I / 8.0 * fd.J(a, t), fd.R[idx4(dim, t, a, c, d)]);
      CSeries dpsi = fd.e(psi[d], c) - fd.e(psi[c], d);
      for (int m = 0; m < dim; ++m) CSeries::fma(dpsi, fd.anh(m, c, d), psi[m], -1.0);
      x.axpy(-I / 6.0, dpsi);
    }
  return k;
}

/// max |d kappa (e_a, e_b, e_c)| at the base point
inline double closedness_residual(const CVec& k, const FiberData& fd) {
  const int dim = fd.dim;
  auto K = [&](int a, int b) -> const CSeries& { return k[a * dim + b]; };
  double r = 0;
  for (int a = 0; a < dim; ++a)
    for (int b = a + 1; b < dim; ++b)
      for (int c = b + 1; c < dim; ++c) {
        cplx v = fd.e(K(b, c), a).value() - fd.e(K(a, c), b).value() + fd.e(K(a, b), c).value();
        for (int m = 0; m < dim; ++m)
          v += -fd.anh(m, a, b).value() * K(m, c).value() + fd.anh(m, a, c).value() * K(m, b).value() -
               fd.anh(m, b, c).value() * K(m, a).value();
        r = std::max(r, std::abs(v));
      }
  return r;
}

/// 1/2 kappa(xi_f, xi_g) with xi_f = theta^{ab} (e_b f) e_a
inline cplx half_kappa_hamiltonian(const CVec& k, const CSeries& f, const CSeries& g, const FiberData& fd) {
  const int dim = fd.dim;
  std::vector<cplx> xf(dim, 0.0), xg(dim, 0.0);
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b) {
      xf[a] += fd.theta_up[a * dim + b].value() * fd.e(f, b).value();
      xg[a] += fd.theta_up[a * dim + b].value() * fd.e(g, b).value();
    }
  cplx s = 0;
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b) s += k[a * dim + b].value() * xf[a] * xg[b];
  return 0.5 * s;
}

/// c0 integrand -(1/2i) gamma
inline Eigen::MatrixXcd c0_integrand(const Eigen::MatrixXd& gamma) { return cplx(0, 0.5) * gamma.cast<cplx>(); }

/// printed-formula readings that the implementation replaces
inline std::vector<std::string> fedosov_deviation_notes() {
  return {
      "delta^-1 uses z^a i(e_a)/(p+q) so that delta delta^-1 + delta^-1 delta + sigma = id; the printed frame-derivative form with factor i does not satisfy it",
      "star product is sigma(tau(f) o tau(g)); the printed sigma(tau(f)) o sigma(tau(g)) reduces to the pointwise product",
      "the quadratic term of the r recursion is the Deg convolution sum_l r^(l+2) o r^(k-l+2); the printed diagonal sum is not Deg-homogeneous",
  };
}

}  // namespace lfq

#endif
