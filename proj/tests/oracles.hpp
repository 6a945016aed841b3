#ifndef LFQ_TEST_ORACLES_HPP
#define LFQ_TEST_ORACLES_HPP

#include <functional>
#include <random>
#include <vector>

#include "lfq/corpus.hpp"
#include "lfq/expr.hpp"

namespace oracle {

using Fn = std::function<double(const lfq::Point&)>;

inline double central(const Fn& f, lfq::Point u, int k, double step) {
  double x = u[k];
  u[k] = x + step;
  double fp = f(u);
  u[k] = x - step;
  double fm = f(u);
  return (fp - fm) / (2 * step);
}

/// nested central differences along the listed variables
inline double nested(const Fn& f, const lfq::Point& u, std::vector<int> vars, double step) {
  if (vars.empty()) return f(u);
  int k = vars.back();
  vars.pop_back();
  Fn inner = [&, vars](const lfq::Point& p) { return nested(f, p, vars, step); };
  return central(inner, u, k, step);
}

/// nested differences with one Richardson step, error O(step^4)
inline double nested_richardson(const Fn& f, const lfq::Point& u, const std::vector<int>& vars, double step) {
  return (4 * nested(f, u, vars, step / 2) - nested(f, u, vars, step)) / 3;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

inline std::vector<lfq::Point> points(const lfq::CorpusEntry& e, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<lfq::Point> out;
  for (int i = 0; i < count; ++i) out.push_back(lfq::sample_point(e, rng));
  return out;
}

}  // namespace oracle

#endif
