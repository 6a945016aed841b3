#ifndef LFQ_CORPUS_HPP
#define LFQ_CORPUS_HPP

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "geometry.hpp"

namespace lfq {

/// Named test model with a sampling box and (for metric entries) a cosmological constant.
struct CorpusEntry {
  std::string name;
  Model model;
  std::vector<std::pair<double, double>> box;  // per coordinate
  double lambda = 0;
  bool vacuum = false;  // Levi-Civita Ricci is expected to be lambda-Einstein
};

inline NadaptedMetric metric_from_strings(int n, const std::vector<std::string>& g, const std::vector<std::string>& h,
                                          const std::vector<std::string>& N) {
  NadaptedMetric m;
  m.n = n;
  for (auto& s : g) m.g.push_back(parse(s, n));
  for (auto& s : h) m.h.push_back(parse(s, n));
  for (auto& s : N) m.N.push_back(parse(s, n));
  return m;
}

inline std::vector<CorpusEntry> lagrange_corpus() {
  std::vector<std::pair<double, double>> box{{-0.5, 0.5}, {-0.5, 0.5}, {0.5, 1.5}, {0.5, 1.5}};
  return {
      {"flat", LagrangeModel::lagrange(2, "y1^2 + y2^2"), box},
      {"conformal", LagrangeModel::lagrange(2, "exp(2*x1)*(y1^2+y2^2)"), box},
      {"quartic_finsler", LagrangeModel::finsler_from(2, "(y1^4+y2^4)^(1/4)"), box},
      {"hyperbolic_quadratic", LagrangeModel::lagrange(2, "y1^2 + cosh(x1)^2*y2^2"), box},
  };
}

inline std::vector<CorpusEntry> metric_corpus() {
  std::vector<CorpusEntry> c;
  {
    const std::string conf = "4/(1+x1^2+x2^2+y1^2+y2^2)^2";
    CorpusEntry e{"de_sitter", metric_from_strings(2, {conf, "0", "0", conf}, {conf, "0", "0", conf}, {"0", "0", "0", "0"}),
                  {{-0.8, 0.8}, {-0.8, 0.8}, {-0.8, 0.8}, {-0.8, 0.8}}, 2.0, true};
    c.push_back(std::move(e));
  }
  {
    CorpusEntry e{"schwarzschild",
                  metric_from_strings(2, {"-(1-2/x2)", "0", "0", "1/(1-2/x2)"}, {"x2^2", "0", "0", "x2^2*sin(y1)^2"},
                                      {"0", "0", "0", "0"}),
                  {{-1, 1}, {3, 6}, {0.5, 2.5}, {-1, 1}}, 0.0, true};
    c.push_back(std::move(e));
  }
  {
    CorpusEntry e{"sphere_product",
                  metric_from_strings(2, {"4", "0", "0", "4*sin(x1)^2"}, {"1", "0", "0", "1"}, {"0", "0", "0", "0"}),
                  {{0.5, 2.5}, {-1, 1}, {-1, 1}, {-1, 1}}, 0.0, false};
    c.push_back(std::move(e));
  }
  return c;
}

inline std::vector<CorpusEntry> full_corpus() {
  auto c = lagrange_corpus();
  for (auto& e : metric_corpus()) c.push_back(std::move(e));
  return c;
}

inline const CorpusEntry& corpus_entry(const std::vector<CorpusEntry>& c, const std::string& name) {
  for (auto& e : c)
    if (e.name == name) return e;
  throw std::invalid_argument("unknown corpus entry " + name);
}

/// uniform double in [0,1) from the top 53 bits of a 64-bit draw
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline Point sample_point(const CorpusEntry& e, std::mt19937_64& rng) {
  Point u;
  for (auto [lo, hi] : e.box) u.push_back(lo + (hi - lo) * unit_uniform(rng));
  return u;
}

}  // namespace lfq

#endif
