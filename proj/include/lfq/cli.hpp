#ifndef LFQ_CLI_HPP
#define LFQ_CLI_HPP

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "corpus.hpp"
#include "fedosov.hpp"
#include "frames.hpp"
#include "json.hpp"

namespace lfq {

using ojson = nlohmann::ordered_json;

/// parse or validation failure, tagged with the offending field
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error("config error at '" + field + "': " + what), field(field) {}
  std::string field;
};

struct Tolerances {
  double structural = 1e-12, identity = 1e-10, chain = 1e-8, fd = 1e-6;
};

struct Caps {
  int kmax = 6;  // Deg to which the Fedosov r is solved
  int rmax = 2;  // star product order
  int jet = 11;  // Taylor order of the geometry fed to the Fedosov stage
};

struct RunConfig {
  int n = 2;
  std::string mode;  // lagrange | finsler | metric
  std::string L, F, corpus;
  std::vector<std::string> metric_g, metric_h, metric_N;
  bool has_metric = false;

  std::vector<Point> explicit_points;
  int count = 0;
  std::vector<std::pair<double, double>> bounds;
  std::optional<std::uint64_t> seed;

  double lambda = 0;
  std::vector<double> source;  // T^a_b, row-major dim*dim
  std::optional<bool> einstein;  // expect the Levi-Civita curvature to solve the Einstein equations
  Caps caps;
  Tolerances tol;
  std::string star_f = "x1*y2 + x2^2", star_g = "y1^2 - x1*x2", star_h = "x2*y1 + 0.5*x1";
  std::vector<std::string> frame_metric;  // coordinate metric for the vielbein stage, dim*dim

  int dim() const { return 2 * n; }
};

struct Overrides {
  std::optional<int> points, kmax, rmax;
  std::optional<std::uint64_t> seed;
  std::optional<double> tol_scale;
};

namespace cfgdetail {

inline const ojson* field(const ojson& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

inline double number(const ojson& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path, "expected a number");
  return v.get<double>();
}

inline int integer(const ojson& v, const std::string& path) {
  if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
  return v.get<int>();
}

inline std::string text(const ojson& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path, "expected a string");
  return v.get<std::string>();
}

inline std::vector<std::string> strings(const ojson& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array of strings");
  std::vector<std::string> out;
  for (std::size_t k = 0; k < v.size(); ++k) out.push_back(text(v[k], path + "[" + std::to_string(k) + "]"));
  return out;
}

inline std::vector<double> numbers(const ojson& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t k = 0; k < v.size(); ++k) out.push_back(number(v[k], path + "[" + std::to_string(k) + "]"));
  return out;
}

inline void only_keys(const ojson& j, const std::string& path, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (auto* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError(path.empty() ? it.key() : path + "." + it.key(), "unknown key");
  }
}

inline bool within(const Point& u, const std::vector<std::pair<double, double>>& b) {
  for (std::size_t k = 0; k < u.size(); ++k)
    if (u[k] < b[k].first || u[k] > b[k].second) return false;
  return true;
}

}  // namespace cfgdetail

/// field-by-field conversion; semantic checks happen in validate()
inline RunConfig parse_config(const ojson& j) {
  using namespace cfgdetail;
  only_keys(j, "", {"n", "mode", "L", "F", "metric", "corpus", "points", "seed", "lambda", "source", "einstein", "caps",
                    "tolerances", "star", "frames"});
  RunConfig c;
  if (auto* v = field(j, "n")) c.n = integer(*v, "n");
  if (auto* v = field(j, "mode")) c.mode = text(*v, "mode");
  if (auto* v = field(j, "L")) c.L = text(*v, "L");
  if (auto* v = field(j, "F")) c.F = text(*v, "F");
  if (auto* v = field(j, "corpus")) c.corpus = text(*v, "corpus");
  if (auto* v = field(j, "metric")) {
    only_keys(*v, "metric", {"g", "h", "N"});
    c.has_metric = true;
    if (auto* g = field(*v, "g")) c.metric_g = strings(*g, "metric.g");
    if (auto* h = field(*v, "h")) c.metric_h = strings(*h, "metric.h");
    if (auto* N = field(*v, "N")) c.metric_N = strings(*N, "metric.N");
  }
  if (auto* v = field(j, "points")) {
    only_keys(*v, "points", {"explicit", "count", "bounds"});
    if (auto* e = field(*v, "explicit")) {
      if (!e->is_array()) throw ConfigError("points.explicit", "expected an array of points");
      for (std::size_t k = 0; k < e->size(); ++k) c.explicit_points.push_back(numbers((*e)[k], "points.explicit[" + std::to_string(k) + "]"));
    }
    if (auto* n = field(*v, "count")) c.count = integer(*n, "points.count");
    if (auto* b = field(*v, "bounds")) {
      if (!b->is_array()) throw ConfigError("points.bounds", "expected an array of [lo, hi] pairs");
      for (std::size_t k = 0; k < b->size(); ++k) {
        std::string p = "points.bounds[" + std::to_string(k) + "]";
        auto lh = numbers((*b)[k], p);
        if (lh.size() != 2) throw ConfigError(p, "expected [lo, hi]");
        c.bounds.emplace_back(lh[0], lh[1]);
      }
    }
  }
  if (auto* v = field(j, "seed")) {
    if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0))
      throw ConfigError("seed", "expected a non-negative integer");
    c.seed = v->get<std::uint64_t>();
  }
  if (auto* v = field(j, "lambda")) c.lambda = number(*v, "lambda");
  if (auto* v = field(j, "source")) c.source = numbers(*v, "source");
  if (auto* v = field(j, "einstein")) {
    if (!v->is_boolean()) throw ConfigError("einstein", "expected true or false");
    c.einstein = v->get<bool>();
  }
  if (auto* v = field(j, "caps")) {
    only_keys(*v, "caps", {"kmax", "rmax", "jet"});
    if (auto* k = field(*v, "kmax")) c.caps.kmax = integer(*k, "caps.kmax");
    if (auto* k = field(*v, "rmax")) c.caps.rmax = integer(*k, "caps.rmax");
    if (auto* k = field(*v, "jet")) c.caps.jet = integer(*k, "caps.jet");
  }
  if (auto* v = field(j, "tolerances")) {
    only_keys(*v, "tolerances", {"structural", "identity", "chain", "fd"});
    if (auto* t = field(*v, "structural")) c.tol.structural = number(*t, "tolerances.structural");
    if (auto* t = field(*v, "identity")) c.tol.identity = number(*t, "tolerances.identity");
    if (auto* t = field(*v, "chain")) c.tol.chain = number(*t, "tolerances.chain");
    if (auto* t = field(*v, "fd")) c.tol.fd = number(*t, "tolerances.fd");
  }
  if (auto* v = field(j, "star")) {
    only_keys(*v, "star", {"f", "g", "h"});
    if (auto* s = field(*v, "f")) c.star_f = text(*s, "star.f");
    if (auto* s = field(*v, "g")) c.star_g = text(*s, "star.g");
    if (auto* s = field(*v, "h")) c.star_h = text(*s, "star.h");
  }
  if (auto* v = field(j, "frames")) {
    only_keys(*v, "frames", {"metric"});
    if (auto* m = field(*v, "metric")) c.frame_metric = strings(*m, "frames.metric");
  }
  return c;
}

inline void apply_overrides(RunConfig& c, const Overrides& o) {
  if (o.points) c.count = *o.points;
  if (o.seed) c.seed = *o.seed;
  if (o.kmax) c.caps.kmax = *o.kmax;
  if (o.rmax) c.caps.rmax = *o.rmax;
  if (o.tol_scale) {
    if (!(*o.tol_scale > 0)) throw ConfigError("--tol-scale", "must be positive");
    c.tol.structural *= *o.tol_scale;
    c.tol.identity *= *o.tol_scale;
    c.tol.chain *= *o.tol_scale;
    c.tol.fd *= *o.tol_scale;
  }
}

/// semantic checks; fills corpus defaults (model, bounds, lambda)
inline void validate(RunConfig& c) {
  int modes = !c.L.empty() + !c.F.empty() + c.has_metric + !c.corpus.empty();
  if (modes != 1) throw ConfigError("L|F|metric|corpus", "exactly one input mode must be given, found " + std::to_string(modes));
  if (!c.corpus.empty()) {
    static const auto corpus = full_corpus();
    const CorpusEntry* e = nullptr;
    for (auto& x : corpus)
      if (x.name == c.corpus) e = &x;
    if (!e) throw ConfigError("corpus", "unknown corpus entry '" + c.corpus + "'");
    std::string m = std::holds_alternative<NadaptedMetric>(e->model) ? "metric"
                    : std::get<LagrangeModel>(e->model).finsler ? "finsler"
                                                                : "lagrange";
    if (!c.mode.empty() && c.mode != m) throw ConfigError("mode", "corpus entry " + c.corpus + " is in " + m + " mode");
    c.mode = m;
    c.n = model_dim(e->model);
    if (c.bounds.empty()) c.bounds = e->box;
    if (c.lambda == 0) c.lambda = e->lambda;
    if (!c.einstein) c.einstein = e->vacuum;
  } else {
    std::string m = !c.L.empty() ? "lagrange" : !c.F.empty() ? "finsler" : "metric";
    if (c.mode.empty()) c.mode = m;
    if (c.mode != m) throw ConfigError("mode", "mode '" + c.mode + "' does not match the given input (" + m + ")");
  }
  if (!c.einstein) c.einstein = true;
  if (c.n < 1 || c.n > 4) throw ConfigError("n", "must be between 1 and 4");
  const int dim = c.dim();
  const std::size_t nn = static_cast<std::size_t>(c.n * c.n);
  if (c.has_metric) {
    if (c.metric_g.size() != nn) throw ConfigError("metric.g", "expected " + std::to_string(nn) + " entries");
    if (c.metric_h.size() != nn) throw ConfigError("metric.h", "expected " + std::to_string(nn) + " entries");
    if (c.metric_N.empty()) c.metric_N.assign(nn, "0");
    if (c.metric_N.size() != nn) throw ConfigError("metric.N", "expected " + std::to_string(nn) + " entries");
  }
  if (c.caps.kmax < 0) throw ConfigError("caps.kmax", "must be non-negative");
  if (c.caps.rmax < 0) throw ConfigError("caps.rmax", "must be non-negative");
  if (c.caps.jet < 2) throw ConfigError("caps.jet", "must be at least 2");
  for (auto [name, v] : {std::pair{"structural", c.tol.structural}, {"identity", c.tol.identity}, {"chain", c.tol.chain}, {"fd", c.tol.fd}})
    if (!(v > 0)) throw ConfigError(std::string("tolerances.") + name, "must be positive");
  if (c.count < 0) throw ConfigError("points.count", "must be non-negative");
  if (!c.bounds.empty()) {
    if (static_cast<int>(c.bounds.size()) != dim) throw ConfigError("points.bounds", "expected " + std::to_string(dim) + " intervals");
    for (std::size_t k = 0; k < c.bounds.size(); ++k)
      if (!(c.bounds[k].first <= c.bounds[k].second))
        throw ConfigError("points.bounds[" + std::to_string(k) + "]", "lower bound exceeds upper bound");
  }
  if (c.count > 0) {
    if (!c.seed) throw ConfigError("seed", "required when random points are requested");
    if (c.bounds.empty()) throw ConfigError("points.bounds", "required when random points are requested");
  }
  for (std::size_t k = 0; k < c.explicit_points.size(); ++k) {
    std::string p = "points.explicit[" + std::to_string(k) + "]";
    if (static_cast<int>(c.explicit_points[k].size()) != dim) throw ConfigError(p, "expected " + std::to_string(dim) + " coordinates");
    if (!c.bounds.empty() && !cfgdetail::within(c.explicit_points[k], c.bounds)) throw ConfigError(p, "outside the declared bounds");
  }
  if (c.explicit_points.empty() && c.count == 0) throw ConfigError("points", "no points requested");
  if (!c.source.empty() && static_cast<int>(c.source.size()) != dim * dim)
    throw ConfigError("source", "expected " + std::to_string(dim * dim) + " entries");
  if (!c.frame_metric.empty() && static_cast<int>(c.frame_metric.size()) != dim * dim)
    throw ConfigError("frames.metric", "expected " + std::to_string(dim * dim) + " entries");
}

inline RunConfig load_config(const std::string& path, const Overrides& o = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path);
  ojson j;
  try {
    j = ojson::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<file>", e.what());
  }
  RunConfig c = parse_config(j);
  apply_overrides(c, o);
  validate(c);
  return c;
}

/// explicit points first, then `count` draws from MT19937-64 seeded with `seed`
inline std::vector<Point> resolve_points(const RunConfig& c) {
  std::vector<Point> pts = c.explicit_points;
  if (c.count > 0) {
    std::mt19937_64 rng(*c.seed);
    for (int k = 0; k < c.count; ++k) {
      Point u;
      for (auto [lo, hi] : c.bounds) u.push_back(lo + (hi - lo) * unit_uniform(rng));
      pts.push_back(std::move(u));
    }
  }
  return pts;
}

inline Model build_model(const RunConfig& c) {
  auto guarded = [](const std::string& field, auto&& make) {
    try {
      return make();
    } catch (const SyntaxError& e) {
      throw ConfigError(field, e.what());
    } catch (const UnknownSymbol& e) {
      throw ConfigError(field, e.what());
    }
  };
  if (!c.corpus.empty()) return corpus_entry(full_corpus(), c.corpus).model;
  if (!c.L.empty()) return guarded("L", [&] { return Model(LagrangeModel::lagrange(c.n, c.L)); });
  if (!c.F.empty()) return guarded("F", [&] { return Model(LagrangeModel::finsler_from(c.n, c.F)); });
  return guarded("metric", [&] { return Model(metric_from_strings(c.n, c.metric_g, c.metric_h, c.metric_N)); });
}

inline ojson config_echo(const RunConfig& c) {
  ojson j;
  j["n"] = c.n;
  j["mode"] = c.mode;
  if (!c.corpus.empty()) j["corpus"] = c.corpus;
  if (!c.L.empty()) j["L"] = c.L;
  if (!c.F.empty()) j["F"] = c.F;
  if (c.has_metric) j["metric"] = {{"g", c.metric_g}, {"h", c.metric_h}, {"N", c.metric_N}};
  ojson pts;
  pts["explicit"] = c.explicit_points;
  pts["count"] = c.count;
  ojson b = ojson::array();
  for (auto [lo, hi] : c.bounds) b.push_back({lo, hi});
  pts["bounds"] = b;
  j["points"] = pts;
  if (c.seed) j["seed"] = *c.seed;
  j["lambda"] = c.lambda;
  if (!c.source.empty()) j["source"] = c.source;
  j["einstein"] = c.einstein.value_or(true);
  j["caps"] = {{"kmax", c.caps.kmax}, {"rmax", c.caps.rmax}, {"jet", c.caps.jet}};
  j["tolerances"] = {{"structural", c.tol.structural}, {"identity", c.tol.identity}, {"chain", c.tol.chain}, {"fd", c.tol.fd}};
  j["star"] = {{"f", c.star_f}, {"g", c.star_g}, {"h", c.star_h}};
  if (!c.frame_metric.empty()) j["frames"] = {{"metric", c.frame_metric}};
  return j;
}

// ---- reports ----

struct CheckResult {
  std::string name;
  double residual = 0, tol = 0;
  bool pass = false;
};

struct PointReport {
  Point u;
  ojson values = ojson::object();
  std::vector<CheckResult> checks;
  std::map<std::string, double> seconds;  // per stage

  void check(const std::string& name, double residual, double tol) {
    checks.push_back({name, residual, tol, std::isfinite(residual) && residual <= tol});
  }
};

struct Report {
  ojson config;
  std::vector<PointReport> points;
  std::vector<std::string> deviations;
  std::map<std::string, double> timing;

  bool overall_pass() const {
    for (auto& p : points)
      for (auto& c : p.checks)
        if (!c.pass) return false;
    return true;
  }

  ojson to_json(bool with_timing = true) const {
    ojson j;
    j["report_version"] = 1;
    j["config"] = config;
    ojson pts = ojson::array();
    for (auto& p : points) {
      ojson cs = ojson::array();
      for (auto& c : p.checks) cs.push_back({{"name", c.name}, {"residual", c.residual}, {"tol", c.tol}, {"pass", c.pass}});
      pts.push_back({{"u", p.u}, {"values", p.values}, {"checks", cs}});
    }
    j["points"] = pts;
    j["deviations"] = deviations;
    j["overall_pass"] = overall_pass();
    if (with_timing) {
      ojson t = ojson::object();
      for (auto& [k, v] : timing) t[k] = v;
      j["timing"] = t;
    }
    return j;
  }
};

/// stage failure with point context; `input` separates bad input from internal faults
struct StageError : std::runtime_error {
  StageError(std::size_t point, int stage, const std::string& name, const std::string& what, bool input)
      : std::runtime_error("point " + std::to_string(point) + ", stage " + std::to_string(stage) + " (" + name + "): " + what),
        point(point), stage(stage), stage_name(name), input(input) {}
  std::size_t point;
  int stage;
  std::string stage_name;
  bool input;
};

inline bool is_input_error(const std::exception& e) {
  return dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const SyntaxError*>(&e) || dynamic_cast<const UnknownSymbol*>(&e) ||
         dynamic_cast<const DomainError*>(&e) || dynamic_cast<const DegenerateHessian*>(&e) ||
         dynamic_cast<const DegenerateMetric*>(&e) || dynamic_cast<const DegenerateSymplectic*>(&e) ||
         dynamic_cast<const RankDeficient*>(&e) || dynamic_cast<const SignatureMismatch*>(&e) ||
         dynamic_cast<const BudgetExceeded*>(&e) || dynamic_cast<const CapMismatch*>(&e) ||
         dynamic_cast<const JetExhausted*>(&e) || dynamic_cast<const std::invalid_argument*>(&e);
}

namespace pipe {

inline ojson matrix(const Eigen::MatrixXd& m) {
  ojson j = ojson::array();
  for (int r = 0; r < m.rows(); ++r) {
    ojson row = ojson::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(row);
  }
  return j;
}

inline ojson complex_value(cplx z) { return ojson::array({z.real(), z.imag()}); }

inline double max_abs(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

/// numbered stages with wall-clock accounting; failures are rethrown as StageError
class Stages {
 public:
  Stages(std::size_t point, PointReport& rep, const std::string& prefix) : point_(point), rep_(rep), prefix_(prefix) {}

  template <class F>
  auto run(const std::string& name, F&& f) {
    ++number_;
    auto t0 = std::chrono::steady_clock::now();
    auto done = [&] {
      rep_.seconds[prefix_ + "." + name] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    try {
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        done();
      } else {
        auto r = f();
        done();
        return r;
      }
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(point_, number_, prefix_ + "." + name, e.what(), is_input_error(e));
    }
  }

 private:
  std::size_t point_;
  PointReport& rep_;
  std::string prefix_;
  int number_ = 0;
};

inline Eigen::MatrixXd evaluate_matrix(const std::vector<std::string>& entries, int n, const Point& u, int rows) {
  Eigen::MatrixXd m(rows, rows);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < rows; ++c) {
      try {
        m(r, c) = evaluate(parse(entries[r * rows + c], n), u);
      } catch (const SyntaxError& e) {
        throw ConfigError("frames.metric[" + std::to_string(r * rows + c) + "]", e.what());
      } catch (const UnknownSymbol& e) {
        throw ConfigError("frames.metric[" + std::to_string(r * rows + c) + "]", e.what());
      }
    }
  return m;
}

}  // namespace pipe

/** \brief hessian -> semispray -> N -> frames -> theta/J -> d-connection -> torsion/curvature -> distortion -> Cartan. */
inline void geom_point(const RunConfig& cfg, const Model& model, std::size_t idx, PointReport& rep) {
  const int n = cfg.n, dim = cfg.dim();
  const Tolerances& tol = cfg.tol;
  pipe::Stages st(idx, rep, "geom");
  ojson& V = rep.values["geom"];
  const auto* lm = std::get_if<LagrangeModel>(&model);

  Geometry geo = st.run("geometry", [&] { return build_geometry(model, rep.u, 5); });
  st.run("semispray", [&] {
    V["N"] = pipe::matrix(values(geo.N, n, n));
    if (!lm) return;
    V["hessian"] = pipe::matrix(values(geo.h, n, n));
    V["hessian_det"] = geo.hess_det;
    Eigen::VectorXd G(n);
    for (int a = 0; a < n; ++a) G(a) = geo.G[a].value();
    V["semispray"] = std::vector<double>(G.data(), G.data() + n);
    rep.check("euler_lagrange", euler_lagrange_residual(*lm, rep.u).cwiseAbs().maxCoeff(), tol.identity);
    if (lm->finsler) rep.check("finsler_homogeneity", finsler_homogeneity_check(lm->F, rep.u, {0.5, 2.0, 3.0}), tol.identity);
  });
  st.run("frames", [&] {
    Eigen::MatrixXd E = values(geo.frame(), dim, dim), C = values(geo.coframe(), dim, dim);
    rep.check("frame_duality", (E * C - Eigen::MatrixXd::Identity(dim, dim)).cwiseAbs().maxCoeff(), tol.structural);
    auto nh = nonholonomy(geo);
    V["nonholonomy_max"] = pipe::max_abs(nh.Omega);
    V["integrable"] = nh.integrable;
  });
  st.run("almost_kaehler", [&] {
    Eigen::MatrixXd J = geo.J_adapted(), G = values(geo.adapted_metric(), dim, dim);
    Eigen::MatrixXd th = values(geo.theta_adapted(), dim, dim);
    rep.check("almost_complex", (J * J + Eigen::MatrixXd::Identity(dim, dim)).cwiseAbs().maxCoeff(), tol.structural);
    if (geo.blocks_identical) rep.check("theta_from_metric", (th - J.transpose() * G).cwiseAbs().maxCoeff(), tol.structural);
    rep.check("theta_closed", exterior_derivative_residual(theta_coordinate_series(geo), dim), tol.identity);
    if (geo.L) rep.check("theta_exact", liouville_residual(geo), tol.identity);
  });
  Connection hat = st.run("dconnection", [&] {
    Connection c = hat_connection(geo);
    rep.check("metric_compatible", metric_compatibility_residual(c, geo, geo.adapted_metric()), tol.identity);
    if (geo.blocks_identical) rep.check("theta_compatible", theta_compatibility_residual(c, geo), tol.identity);
    V["connection_max"] = pipe::max_abs(c.values());
    return c;
  });
  st.run("torsion_curvature", [&] {
    SVec T = torsion(hat, geo);
    double pure = 0;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        for (int c = 0; c < n; ++c) {
          pure = std::max(pure, std::abs(T[(a * dim + b) * dim + c].value()));
          pure = std::max(pure, std::abs(T[((n + a) * dim + n + b) * dim + n + c].value()));
        }
    rep.check("torsion_pure_blocks", pure, 0.0);
    auto Tv = values(T), Td = values(dtorsion(hat, geo));
    double dev = 0;
    for (std::size_t k = 0; k < Tv.size(); ++k) dev = std::max(dev, std::abs(Tv[k] - Td[k]));
    rep.check("torsion_parametrization", dev, tol.identity);
    V["torsion_max"] = pipe::max_abs(Tv);
    V["curvature_max"] = pipe::max_abs(values(curvature(hat, geo)));
  });
  st.run("levi_civita", [&] {
    auto o = levi_civita_oracle(coordinate_metric_series(geo), dim);
    auto conv = coordinate_to_adapted(o, geo);
    auto lc = levi_civita_adapted(geo).values();
    double d = 0;
    for (std::size_t k = 0; k < lc.size(); ++k) d = std::max(d, std::abs(lc[k] - conv[k]));
    rep.check("levi_civita_oracle", d, tol.chain);
    V["scalar_curvature"] = o.scalar;
    if (lm) {
      auto Z = distortion_closed_form(hat, geo);
      auto sum = hat.values();
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += Z[k];
      double worst = 0;
      for (double b : block_differences(lc, sum, n)) worst = std::max(worst, b);
      rep.check("distortion_blocks", worst, tol.chain);
      V["distortion_max"] = pipe::max_abs(Z);
    }
  });
  st.run("cartan", [&] {
    auto r = cartan_structure_check(hat, geo);
    rep.check("cartan_first", r.first, tol.chain);
    rep.check("cartan_second", r.second, tol.chain);
  });
}

/** \brief Einstein residuals of the Levi-Civita curvature, distortion-sourced hat equation, two routes to gamma. */
inline void einstein_point(const RunConfig& cfg, const Model& model, std::size_t idx, PointReport& rep) {
  const int dim = cfg.dim();
  const Tolerances& tol = cfg.tol;
  const double lambda = cfg.lambda;
  pipe::Stages st(idx, rep, "einstein");
  ojson& V = rep.values["einstein"];
  const bool expect = cfg.einstein.value_or(true);
  auto record = [&](const std::string& name, double r, double t) {
    if (expect) rep.check(name, r, t);
    else V[name + "_residual"] = r;
  };

  Geometry geo = st.run("geometry", [&] { return build_geometry(model, rep.u, 5); });
  struct Curv {
    CurvatureData lc, hat;
    Eigen::MatrixXd gi, gm, J;
  };
  Curv c = st.run("curvature", [&] {
    Eigen::MatrixXd gi = values(geo.adapted_metric_inverse(), dim, dim), gm = values(geo.adapted_metric(), dim, dim);
    return Curv{curvature_data(values(curvature(levi_civita_adapted(geo), geo)), gi),
                curvature_data(values(curvature(hat_connection(geo), geo)), gi), gi, gm, geo.J_adapted()};
  });
  V["scalar_curvature"] = c.lc.scalar;
  V["ricci"] = pipe::matrix(c.lc.ricci);
  st.run("einstein", [&] {
    auto up = raise_second(c.lc.forms, c.gi);
    if (lambda == 0) record("einstein_tensor", einstein_tensor_residual(c.lc, c.gi, {lambda, cfg.source, 1}), tol.chain);
    if (cfg.source.empty()) record("einstein_form", einstein_form_residual(up, lambda, nullptr), tol.chain);
    if (lambda != 0) record("constant_curvature_form", constant_curvature_form_residual(up, lambda), tol.chain);
  });
  st.run("distortion", [&] {
    std::vector<TwoForm> Z(dim * dim);
    for (int k = 0; k < dim * dim; ++k) Z[k] = c.lc.forms[k] - c.hat.forms[k];
    auto Zup = raise_second(Z, c.gi);
    auto src = distortion_source(Zup, dim, 1);
    record("hat_einstein_distortion_source", einstein_form_residual(raise_second(c.hat.forms, c.gi), lambda, &src), tol.chain);
    TwoForm gamma = chern_weyl(c.hat.forms, c.J);
    TwoForm vac = chern_weyl_vacuum(Zup, c.J, c.gm, lambda);
    V["gamma"] = pipe::matrix(gamma);
    record("gamma_two_routes", (gamma - vac).cwiseAbs().maxCoeff(), tol.chain);
    record("deformed_einstein", deformed_einstein_residual(gamma, c.J, c.gm, src, lambda), tol.chain);
  });
}

/** \brief Fedosov pipeline at one point: lifted identities, r, flatness, star coefficients, Karabegov form. */
inline void star_point(const RunConfig& cfg, const Model& model, std::size_t idx, PointReport& rep) {
  const Tolerances& tol = cfg.tol;
  const int K = cfg.caps.kmax, rmax = cfg.caps.rmax, jet = cfg.caps.jet;
  pipe::Stages st(idx, rep, "star");
  ojson& V = rep.values["star"];
  std::mt19937_64 rng(cfg.seed.value_or(0) ^ (0x9e3779b97f4a7c15ull * (idx + 1)));

  Geometry geo = st.run("geometry", [&] { return build_geometry(model, rep.u, jet); });
  FiberData fd = st.run("fiber", [&] { return fiber_data(geo, hat_connection(geo), K); });
  st.run("lifted_identities", [&] {
    std::vector<WickElement> s;
    for (int t = 0; t < 6; ++t) s.push_back(random_wick_element(fd, rng, 5, std::min(4, K), 2, 2));
    auto r = fedosov_identity_residuals(fd, s);
    rep.check("lifted_torsion_identity", r.torsion, tol.chain);
    rep.check("lifted_curvature_identity", r.curvature, tol.chain);
    rep.check("lifted_derivation", r.derivation, tol.chain);
  });
  FedosovR r = st.run("fedosov_r", [&] { return solve_r(fd, K); });
  st.run("fedosov_flatness", [&] {
    if (K < 2) return;
    rep.check("r_equation", r_equation_residual(fd, r, K - 1), tol.chain);
    WickElement a = random_wick_element(fd, rng, 6, K - 1, 2, 3);
    WickElement d2 = fedosov_apply(fedosov_apply(a, fd, r), fd, r);
    rep.check("fedosov_flatness", d2.deg_range(0, K - 2).max_abs(), tol.chain);
  });
  struct Fns {
    CSeries f, g, h;
  };
  Fns F = st.run("functions", [&] {
    const int ord = std::min(jet, 2 * rmax + 4);
    auto lift = [&](const std::string& field, const std::string& s) {
      try {
        return to_complex(to_series(parse(s, cfg.n), rep.u, ord, *fd.basis));
      } catch (const SyntaxError& e) {
        throw ConfigError(field, e.what());
      } catch (const UnknownSymbol& e) {
        throw ConfigError(field, e.what());
      }
    };
    return Fns{lift("star.f", cfg.star_f), lift("star.g", cfg.star_g), lift("star.h", cfg.star_h)};
  });
  st.run("star_product", [&] {
    CVec fg = star_product(F.f, F.g, fd, r, rmax), gf = star_product(F.g, F.f, fd, r, rmax);
    ojson co = ojson::array();
    for (auto& c : fg) co.push_back(pipe::complex_value(c.value()));
    V["coefficients"] = co;
    rep.check("c0_pointwise", std::abs(fg[0].value() - F.f.value() * F.g.value()), 0.0);
    if (rmax >= 1) {
      cplx anti = 0.5 * (fg[1].value() - gf[1].value()), sym = 0.5 * (fg[1].value() + gf[1].value());
      rep.check("c1_poisson", std::abs(anti - cplx(0, 0.5) * poisson_bracket(F.f, F.g, fd)), tol.identity);
      rep.check("c1_metric", std::abs(sym - 0.5 * metric_pairing(F.f, F.g, fd)), tol.identity);
    }
  });
  st.run("associativity", [&] {
    CVec l = star_series(star_product(F.f, F.g, fd, r, rmax), {F.h}, fd, r, rmax);
    CVec rr = star_series({F.f}, star_product(F.g, F.h, fd, r, rmax), fd, r, rmax);
    double d = 0;
    for (int k = 0; k <= rmax; ++k) d = std::max(d, std::abs(l[k].value() - rr[k].value()));
    rep.check("associativity", d, tol.chain);
  });
  st.run("karabegov", [&] {
    CVec kf = karabegov_form(fd);
    rep.check("karabegov_closed", closedness_residual(kf, fd), tol.chain);
    if (rmax >= 2) {
      cplx ext = normalized_c2_antisym(F.f, F.g, fd, r), formula = half_kappa_hamiltonian(kf, F.f, F.g, fd);
      V["c2_antisym_normalized"] = pipe::complex_value(ext);
      V["half_kappa"] = pipe::complex_value(formula);
      rep.check("karabegov_extraction", std::abs(ext - formula), tol.chain);
    }
  });
}

/** \brief Vielbeins mapping a coordinate metric onto the canonical blocks. */
inline void frames_point(const RunConfig& cfg, const Model& model, std::size_t idx, PointReport& rep) {
  const int dim = cfg.dim();
  pipe::Stages st(idx, rep, "frames");
  ojson& V = rep.values["frames"];
  Geometry geo = st.run("geometry", [&] { return build_geometry(model, rep.u, 2); });
  st.run("vielbeins", [&] {
    VielbeinTarget t = target_at(geo);
    Eigen::MatrixXd g = cfg.frame_metric.empty() ? sasaki_metric(geo).coordinate : pipe::evaluate_matrix(cfg.frame_metric, cfg.n, rep.u, dim);
    VielbeinSolution s = solve_vielbeins(g, t);
    auto res = verify_aleq(s, g, t);
    rep.check("vielbein_h", res[0], cfg.tol.identity);
    rep.check("vielbein_v", res[1], cfg.tol.identity);
    rep.check("vielbein_mixed", res[2], cfg.tol.identity);
    rep.check("metric_round_trip", (vielbein_metric(s, g) - canonical_coordinate_metric(t)).cwiseAbs().maxCoeff(), cfg.tol.identity);
    V["e_h"] = pipe::matrix(s.e_h);
    V["e_v"] = pipe::matrix(s.e_v);
    V["e_mixed"] = pipe::matrix(s.e_mixed);
    V["gauge"] = s.gauge;
  });
}

enum class Suite { geom, star, einstein, check, frames };

inline Suite suite_from(const std::string& s) {
  if (s == "geom") return Suite::geom;
  if (s == "star") return Suite::star;
  if (s == "einstein") return Suite::einstein;
  if (s == "check") return Suite::check;
  if (s == "frames") return Suite::frames;
  throw std::invalid_argument("unknown suite " + s);
}

/** \brief Run a suite over all points on a worker pool; the report is ordered by point index. */
inline Report run_suite(const RunConfig& cfg, Suite suite, unsigned workers = 0) {
  Model model = build_model(cfg);
  std::vector<Point> pts = resolve_points(cfg);
  std::vector<PointReport> out(pts.size());
  std::vector<std::exception_ptr> errs(pts.size());
  auto work = [&](std::size_t k) {
    out[k].u = pts[k];
    try {
      if (suite == Suite::geom || suite == Suite::check) geom_point(cfg, model, k, out[k]);
      if (suite == Suite::einstein || suite == Suite::check) einstein_point(cfg, model, k, out[k]);
      if (suite == Suite::star || suite == Suite::check) star_point(cfg, model, k, out[k]);
      if (suite == Suite::frames || suite == Suite::check) frames_point(cfg, model, k, out[k]);
    } catch (...) {
      errs[k] = std::current_exception();
    }
  };
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, pts.size()));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t k; (k = next.fetch_add(1)) < pts.size();) work(k);
    });
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);

  Report rep;
  rep.config = config_echo(cfg);
  rep.points = std::move(out);
  rep.deviations = fedosov_deviation_notes();
  for (auto& p : rep.points)
    for (auto& [k, v] : p.seconds) rep.timing[k] += v;
  return rep;
}

}  // namespace lfq

#endif
