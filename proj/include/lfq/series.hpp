#ifndef LFQ_SERIES_HPP
#define LFQ_SERIES_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

namespace lfq {

/** \brief Raised when a derivative is requested from a series with no jet order left. */
struct JetExhausted : std::runtime_error {
  explicit JetExhausted(const std::string& what) : std::runtime_error("JetExhausted: " + what) {}
};

/** \brief Graded monomial basis in nvars variables up to total degree maxdeg.
 *
 * Monomials are ordered by total degree, so the monomials of degree <= d form a prefix.
 * Product pairs are sorted by combined degree for the same reason.
 */
class MonomialBasis {
 public:
  using Exp = std::vector<std::uint8_t>;

  static const MonomialBasis& get(int nvars, int maxdeg) {
    static std::mutex mu;
    static std::map<std::pair<int, int>, std::unique_ptr<MonomialBasis>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[{nvars, maxdeg}];
    if (!slot) slot.reset(new MonomialBasis(nvars, maxdeg));
    return *slot;
  }

  int nvars() const { return nvars_; }
  int maxdeg() const { return maxdeg_; }
  std::size_t size(int deg) const { return deg < 0 ? 0 : end_[std::min(deg, maxdeg_)]; }
  const Exp& exps(std::size_t i) const { return exps_[i]; }
  int degree(std::size_t i) const { return deg_[i]; }

  long index(const Exp& e) const {
    auto it = lookup_.find(key(e));
    return it == lookup_.end() ? -1 : static_cast<long>(it->second);
  }

  /// index of monomial i multiplied by u_v, or -1 beyond maxdeg
  long up(int v, std::size_t i) const { return up_[v][i]; }

  struct Pair {
    std::uint32_t i, j, k;
  };
  const std::vector<Pair>& pairs() const { return pairs_; }
  std::size_t pair_count(int deg) const { return deg < 0 ? 0 : pair_end_[std::min(deg, maxdeg_)]; }

 private:
  MonomialBasis(int nvars, int maxdeg) : nvars_(nvars), maxdeg_(maxdeg) {
    if (nvars < 1 || nvars > 8 || maxdeg < 0 || maxdeg > 60)
      throw std::invalid_argument("MonomialBasis: unsupported size");
    for (int d = 0; d <= maxdeg; ++d) {
      Exp e(nvars, 0);
      enumerate(e, 0, d);
      end_.push_back(exps_.size());
    }
    for (std::size_t i = 0; i < exps_.size(); ++i) lookup_[key(exps_[i])] = i;
    up_.assign(nvars, std::vector<long>(exps_.size(), -1));
    for (int v = 0; v < nvars; ++v)
      for (std::size_t i = 0; i < exps_.size(); ++i) {
        if (deg_[i] == maxdeg) continue;
        Exp e = exps_[i];
        ++e[v];
        up_[v][i] = static_cast<long>(lookup_.at(key(e)));
      }
    std::vector<std::vector<Pair>> by_deg(maxdeg + 1);
    for (std::size_t i = 0; i < exps_.size(); ++i)
      for (std::size_t j = 0; j < end_[maxdeg - deg_[i]]; ++j) {
        Exp e = exps_[i];
        for (int v = 0; v < nvars; ++v) e[v] += exps_[j][v];
        by_deg[deg_[i] + deg_[j]].push_back(
            {static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
             static_cast<std::uint32_t>(lookup_.at(key(e)))});
      }
    for (int d = 0; d <= maxdeg; ++d) {
      pairs_.insert(pairs_.end(), by_deg[d].begin(), by_deg[d].end());
      pair_end_.push_back(pairs_.size());
    }
  }

  void enumerate(Exp& e, int v, int rest) {
    if (v == nvars_ - 1) {
      e[v] = static_cast<std::uint8_t>(rest);
      int d = 0;
      for (auto x : e) d += x;
      exps_.push_back(e);
      deg_.push_back(d);
      return;
    }
    for (int k = rest; k >= 0; --k) {
      e[v] = static_cast<std::uint8_t>(k);
      enumerate(e, v + 1, rest - k);
    }
    e[v] = 0;
  }

  static std::uint64_t key(const Exp& e) {
    std::uint64_t k = 0;
    for (auto x : e) k = (k << 8) | x;
    return k;
  }

  int nvars_, maxdeg_;
  std::vector<Exp> exps_;
  std::vector<int> deg_;
  std::vector<std::size_t> end_;
  std::unordered_map<std::uint64_t, std::size_t> lookup_;
  std::vector<std::vector<long>> up_;
  std::vector<Pair> pairs_;
  std::vector<std::size_t> pair_end_;
};

/** \brief Truncated multivariate Taylor series around a base point.
 *
 * Coefficient c[i] multiplies t^exps(i) where t = u - u0. The order is the
 * number of derivatives still available (the jet budget).
 */
template <class T>
class Series {
 public:
  using value_type = T;

  Series() = default;
  Series(const MonomialBasis& b, int ord) : b_(&b), ord_(ord), c_(b.size(ord), T(0)) {
    if (ord > b.maxdeg()) throw std::invalid_argument("Series order exceeds basis degree");
  }

  static Series constant(const MonomialBasis& b, int ord, T v) {
    Series s(b, ord);
    s.c_[0] = v;
    return s;
  }
  /// the coordinate u_k expanded around the value u0_k
  static Series variable(const MonomialBasis& b, int ord, int k, T u0k) {
    Series s = constant(b, ord, u0k);
    if (ord >= 1) s.c_[b.index(unit(b.nvars(), k))] = T(1);
    return s;
  }

  bool valid() const { return b_ != nullptr; }
  const MonomialBasis& basis() const { return *b_; }
  int order() const { return ord_; }
  std::size_t size() const { return c_.size(); }
  T value() const { return c_[0]; }
  const std::vector<T>& coeffs() const { return c_; }
  std::vector<T>& coeffs() { return c_; }
  T operator[](std::size_t i) const { return c_[i]; }
  T& operator[](std::size_t i) { return c_[i]; }

  Series truncated(int ord) const {
    Series s(*b_, std::min(ord, ord_));
    std::copy(c_.begin(), c_.begin() + s.c_.size(), s.c_.begin());
    return s;
  }

  /// partial derivative with respect to u_v; consumes one order
  Series deriv(int v) const {
    if (ord_ <= 0) throw JetExhausted("derivative of an order-0 series");
    Series s(*b_, ord_ - 1);
    for (std::size_t i = 0; i < s.c_.size(); ++i) {
      long j = b_->up(v, i);
      s.c_[i] = T(b_->exps(i)[v] + 1) * c_[j];
    }
    return s;
  }

  /// partial derivative times factor (avoids a temporary in hot loops)
  void add_deriv_to(Series& out, int v, T factor) const {
    if (ord_ <= 0) throw JetExhausted("derivative of an order-0 series");
    std::size_t n = std::min(out.c_.size(), b_->size(ord_ - 1));
    for (std::size_t i = 0; i < n; ++i) out.c_[i] += factor * T(b_->exps(i)[v] + 1) * c_[b_->up(v, i)];
  }

  /// the derivative of total multi-index e (one-shot, exact), scaled to a plain partial
  T partial(const MonomialBasis::Exp& e) const {
    long i = b_->index(e);
    if (i < 0 || static_cast<std::size_t>(i) >= c_.size()) throw JetExhausted("partial beyond jet order");
    double f = 1;
    for (auto x : e)
      for (int k = 2; k <= x; ++k) f *= k;
    return c_[i] * T(f);
  }

  double max_abs() const {
    double m = 0;
    for (auto& x : c_) m = std::max(m, std::abs(x));
    return m;
  }

  Series& operator+=(const Series& o) { return axpy(T(1), o); }
  Series& operator-=(const Series& o) { return axpy(T(-1), o); }
  Series& axpy(T a, const Series& o) {
    if (!valid()) {
      *this = o;
      for (auto& x : c_) x *= a;
      return *this;
    }
    if (o.ord_ < ord_) {
      ord_ = o.ord_;
      c_.resize(o.c_.size());
    }
    for (std::size_t i = 0; i < c_.size(); ++i) c_[i] += a * o.c_[i];
    return *this;
  }
  Series& operator*=(T a) {
    for (auto& x : c_) x *= a;
    return *this;
  }
  Series& add_constant(T a) {
    c_[0] += a;
    return *this;
  }

  /// out += a * b truncated at out's order
  static void fma(Series& out, const Series& a, const Series& b, T scale = T(1)) {
    int ord = std::min({out.ord_, a.ord_, b.ord_});
    if (ord < out.ord_) {
      out.ord_ = ord;
      out.c_.resize(out.b_->size(ord));
    }
    const auto& pr = out.b_->pairs();
    std::size_t np = out.b_->pair_count(ord);
    const T* ac = a.c_.data();
    const T* bc = b.c_.data();
    T* oc = out.c_.data();
    if (scale == T(1)) {
      for (std::size_t p = 0; p < np; ++p) oc[pr[p].k] += ac[pr[p].i] * bc[pr[p].j];
    } else {
      for (std::size_t p = 0; p < np; ++p) oc[pr[p].k] += scale * (ac[pr[p].i] * bc[pr[p].j]);
    }
  }

  static Series mul(const Series& a, const Series& b, int ord_cap = 1 << 20) {
    Series out(*a.b_, std::min({a.ord_, b.ord_, ord_cap}));
    fma(out, a, b);
    return out;
  }

  /// univariate composition: sum_k d[k] (self - value)^k
  Series compose(const std::vector<T>& d) const {
    Series h = *this;
    h.c_[0] = T(0);
    Series r = constant(*b_, ord_, d[ord_]);
    for (int k = ord_ - 1; k >= 0; --k) {
      r = mul(r, h);
      r.c_[0] += d[k];
    }
    return r;
  }

  Series reciprocal() const {
    T a0 = c_[0];
    if (a0 == T(0)) throw std::domain_error("reciprocal of a series with zero value");
    std::vector<T> d(ord_ + 1);
    T inv = T(1) / a0, p = inv;
    for (int k = 0; k <= ord_; ++k) {
      d[k] = (k % 2 ? -p : p);
      p *= inv;
    }
    return compose(d);
  }

 private:
  static MonomialBasis::Exp unit(int n, int k) {
    MonomialBasis::Exp e(n, 0);
    e[k] = 1;
    return e;
  }

  const MonomialBasis* b_ = nullptr;
  int ord_ = 0;
  std::vector<T> c_;
};

template <class T>
Series<T> operator+(Series<T> a, const Series<T>& b) { return a += b; }
template <class T>
Series<T> operator-(Series<T> a, const Series<T>& b) { return a -= b; }
template <class T>
Series<T> operator-(Series<T> a) { return a *= T(-1); }
template <class T>
Series<T> operator*(const Series<T>& a, const Series<T>& b) { return Series<T>::mul(a, b); }
template <class T>
Series<T> operator*(Series<T> a, T s) { return a *= s; }
template <class T>
Series<T> operator*(T s, Series<T> a) { return a *= s; }
template <class T>
Series<T> operator/(const Series<T>& a, const Series<T>& b) { return a * b.reciprocal(); }

using RSeries = Series<double>;
using CSeries = Series<std::complex<double>>;

inline CSeries to_complex(const RSeries& s) {
  CSeries c(s.basis(), s.order());
  for (std::size_t i = 0; i < s.size(); ++i) c[i] = s[i];
  return c;
}

/// elementary functions on real series (Taylor coefficients at the base value)
namespace sfun {

inline RSeries exp(const RSeries& a) {
  std::vector<double> d(a.order() + 1);
  double e = std::exp(a.value()), f = 1;
  for (int k = 0; k <= a.order(); ++k) {
    if (k) f *= k;
    d[k] = e / f;
  }
  return a.compose(d);
}

inline RSeries log(const RSeries& a) {
  double a0 = a.value();
  if (!(a0 > 0)) throw std::domain_error("log of non-positive value");
  std::vector<double> d(a.order() + 1);
  d[0] = std::log(a0);
  double p = 1;
  for (int k = 1; k <= a.order(); ++k) {
    p /= a0;
    d[k] = (k % 2 ? 1.0 : -1.0) * p / k;
  }
  return a.compose(d);
}

/// real power with constant exponent; non-integer exponents need a positive base
inline RSeries pow(const RSeries& a, double p) {
  double a0 = a.value();
  bool integer = std::floor(p) == p;
  if (!integer && !(a0 > 0)) throw std::domain_error("non-integer power of non-positive value");
  if (integer && p >= 0 && p <= 64) {
    RSeries r = RSeries::constant(a.basis(), a.order(), 1.0), base = a;
    auto e = static_cast<long>(p);
    while (e) {
      if (e & 1) r = r * base;
      e >>= 1;
      if (e) base = base * base;
    }
    return r;
  }
  if (a0 == 0) throw std::domain_error("negative power of zero");
  std::vector<double> d(a.order() + 1);
  double binom = 1;
  for (int k = 0; k <= a.order(); ++k) {
    d[k] = binom * std::pow(a0, p - k);
    binom *= (p - k) / (k + 1);
  }
  return a.compose(d);
}

inline RSeries sqrt(const RSeries& a) {
  if (!(a.value() > 0)) throw std::domain_error("sqrt of non-positive value");
  return pow(a, 0.5);
}

inline std::vector<double> cyclic(double v0, double v1, double v2, double v3, int ord) {
  std::vector<double> d(ord + 1);
  const double cyc[4] = {v0, v1, v2, v3};
  double f = 1;
  for (int k = 0; k <= ord; ++k) {
    if (k) f *= k;
    d[k] = cyc[k % 4] / f;
  }
  return d;
}

inline RSeries sin(const RSeries& a) {
  double s = std::sin(a.value()), c = std::cos(a.value());
  return a.compose(cyclic(s, c, -s, -c, a.order()));
}
inline RSeries cos(const RSeries& a) {
  double s = std::sin(a.value()), c = std::cos(a.value());
  return a.compose(cyclic(c, -s, -c, s, a.order()));
}
inline RSeries sinh(const RSeries& a) {
  double s = std::sinh(a.value()), c = std::cosh(a.value());
  return a.compose(cyclic(s, c, s, c, a.order()));
}
inline RSeries cosh(const RSeries& a) {
  double s = std::sinh(a.value()), c = std::cosh(a.value());
  return a.compose(cyclic(c, s, c, s, a.order()));
}
inline RSeries tan(const RSeries& a) {
  if (std::cos(a.value()) == 0) throw std::domain_error("tan at a pole");
  return sin(a) / cos(a);
}

/// atan via the univariate expansion of 1/(1+x^2) integrated term by term
inline RSeries atan(const RSeries& a) {
  int ord = a.order();
  double x0 = a.value();
  // q(t) = 1 + (x0+t)^2 = (1+x0^2) + 2 x0 t + t^2 ; invert as a univariate series
  std::vector<double> q = {1 + x0 * x0, 2 * x0, 1}, inv(ord + 1, 0.0);
  for (int k = 0; k <= ord; ++k) {
    double s = (k == 0) ? 1.0 : 0.0;
    for (int j = 1; j <= std::min(k, 2); ++j) s -= q[j] * inv[k - j];
    inv[k] = s / q[0];
  }
  std::vector<double> d(ord + 1);
  d[0] = std::atan(x0);
  for (int k = 1; k <= ord; ++k) d[k] = inv[k - 1] / k;
  return a.compose(d);
}

}  // namespace sfun
}  // namespace lfq

#endif
