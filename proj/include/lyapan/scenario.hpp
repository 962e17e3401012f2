#pragma once

// Scenario files and run reports for the command-line tool. A scenario names
// a Bernoulli measure or a Markov kernel with its cocycle and the analyses to
// run; the report is JSON in a fixed key order, with CSV tables and SVG plots
// beside it. Wall-clock timings go to a separate file so that reports of
// repeated runs compare byte for byte.
//
// Needs nlohmann/json (vendor/json.hpp) on the include path.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lyapan/analyticity.hpp"
#include "lyapan/contraction.hpp"
#include "lyapan/lyapunov.hpp"
#include "lyapan/markov_cocycle.hpp"
#include "lyapan/svg_plot.hpp"

#ifndef LYAPAN_VERSION
#define LYAPAN_VERSION "0.0.0"
#endif

namespace lyapan {

using Json = nlohmann::ordered_json;

/// Malformed scenario file; the message names the offending field.
class ScenarioError : public DomainError {
 public:
  using DomainError::DomainError;
};

inline const std::vector<std::string>& known_analyses() {
  static const std::vector<std::string> names{"certify", "lyapunov", "reducibility", "taylor", "demo_noncompact"};
  return names;
}

struct ScenarioConfig {
  double tol = 1e-8;
  int taylor_order = 2;
  std::optional<double> taylor_radius;
  ObservableConvention convention = ObservableConvention::perturbed;
  int degree_check_max_n = 3;
  bool cross_check = true;
  int mc_steps = 2000;
  int mc_trials = 200;
  int furstenberg_particles = 200;
  int furstenberg_burn_in = 100;
  int furstenberg_iters = 1000;
  int cert_n_max = 12;
  double eps = 0.1;
  double jump = 1.0;
  double margin = 1.0;  // log a exceeds the threshold by this much
  unsigned threads = 1;
};

struct Scenario {
  enum class Kind { bernoulli, markov };
  std::string name;
  Kind kind = Kind::bernoulli;
  ComplexAtomicMeasure measure;
  std::optional<ComplexAtomicMeasure> direction;
  std::optional<FiniteKernel> kernel;
  std::optional<FiniteKernel> direction_kernel;
  std::optional<CocycleMap> cocycle;
  std::vector<std::string> analyses;  // as requested
  ScenarioConfig config;
  std::uint64_t seed = 1;
  Json source;
};

namespace detail {

inline double json_number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw ScenarioError(where + ": expected a number");
  return j.get<double>();
}

inline Complex json_weight(const Json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_array() && j.size() == 2) return {json_number(j[0], where + "[0]"), json_number(j[1], where + "[1]")};
  if (j.is_object() && j.contains("re"))
    return {json_number(j["re"], where + ".re"), j.contains("im") ? json_number(j["im"], where + ".im") : 0.0};
  throw ScenarioError(where + ": expected a number, a [re, im] pair or {\"re\", \"im\"}");
}

inline Matrix json_matrix(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ScenarioError(where + ": expected a nonempty list of rows");
  const std::size_t d = j.size();
  std::vector<double> entries;
  for (std::size_t i = 0; i < d; ++i) {
    const auto& row = j[i];
    if (!row.is_array() || row.size() != d)
      throw ScenarioError(where + "[" + std::to_string(i) + "]: expected a row of length " + std::to_string(d));
    for (std::size_t k = 0; k < d; ++k)
      entries.push_back(json_number(row[k], where + "[" + std::to_string(i) + "][" + std::to_string(k) + "]"));
  }
  try {
    return Matrix::from_row_major(d, entries);
  } catch (const DomainError& e) {
    throw ScenarioError(where + ": " + e.what());
  }
}

inline ComplexAtomicMeasure json_measure(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ScenarioError(where + ": expected a nonempty list of atoms");
  std::vector<MatrixAtom> atoms;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string at = where + "[" + std::to_string(i) + "]";
    const auto& x = j[i];
    if (!x.is_object() || !x.contains("matrix") || !(x.contains("weight") || x.contains("weight_re")))
      throw ScenarioError(at + ": expected {\"matrix\": ..., \"weight\": ...} or weight_re / weight_im");
    const Complex w = x.contains("weight")
                          ? json_weight(x["weight"], at + ".weight")
                          : Complex(json_number(x["weight_re"], at + ".weight_re"),
                                    x.contains("weight_im") ? json_number(x["weight_im"], at + ".weight_im") : 0.0);
    atoms.push_back({json_matrix(x["matrix"], at + ".matrix"), w});
    if (atoms.back().point.dim() != atoms.front().point.dim())
      throw ScenarioError(at + ".matrix: dimension differs from atom 0");
  }
  return ComplexAtomicMeasure(std::move(atoms));
}

inline FiniteKernel json_kernel_rows(const Json& rows, int states, const std::string& where) {
  if (!rows.is_array() || static_cast<int>(rows.size()) != states)
    throw ScenarioError(where + ": expected " + std::to_string(states) + " rows");
  Eigen::MatrixXcd w = Eigen::MatrixXcd::Zero(states, states);
  for (int s = 0; s < states; ++s) {
    const std::string at = where + "[" + std::to_string(s) + "]";
    const auto& row = rows[static_cast<std::size_t>(s)];
    if (!row.is_array()) throw ScenarioError(at + ": expected a list of {to, w_re, w_im}");
    for (std::size_t e = 0; e < row.size(); ++e) {
      const std::string et = at + "[" + std::to_string(e) + "]";
      const auto& x = row[e];
      if (!x.is_object() || !x.contains("to") || !x["to"].is_number_integer())
        throw ScenarioError(et + ": expected {\"to\": state, \"w_re\": ..., \"w_im\": ...}");
      const int to = x["to"].get<int>();
      if (to < 0 || to >= states) throw ScenarioError(et + ".to: state out of range");
      const double re = x.contains("w_re") ? json_number(x["w_re"], et + ".w_re") : 0.0;
      const double im = x.contains("w_im") ? json_number(x["w_im"], et + ".w_im") : 0.0;
      w(s, to) += Complex(re, im);
    }
  }
  return FiniteKernel(std::move(w));
}

inline int json_states(const Json& k, const std::string& where) {
  if (!k.is_object() || !k.contains("states") || !k["states"].is_number_integer() || k["states"].get<int>() < 1)
    throw ScenarioError(where + ".states: expected a positive integer");
  return k["states"].get<int>();
}

template <class T>
T config_value(const Json& c, const char* key, T fallback) {
  if (!c.contains(key)) return fallback;
  try {
    return c[key].get<T>();
  } catch (const std::exception&) {
    throw ScenarioError(std::string("config.") + key + ": wrong type");
  }
}

}  // namespace detail

inline Scenario parse_scenario(const Json& j, const std::string& fallback_name = "scenario") {
  if (!j.is_object()) throw ScenarioError("scenario: expected a JSON object");
  Scenario sc;
  sc.source = j;
  sc.name = j.contains("name") && j["name"].is_string() ? j["name"].get<std::string>() : fallback_name;
  const std::string kind = j.contains("kind") && j["kind"].is_string() ? j["kind"].get<std::string>() : "bernoulli";
  if (kind == "bernoulli") {
    sc.kind = Scenario::Kind::bernoulli;
    if (!j.contains("measure")) throw ScenarioError("measure: missing");
    sc.measure = detail::json_measure(j["measure"], "measure");
    if (j.contains("direction")) sc.direction = detail::json_measure(j["direction"], "direction");
  } else if (kind == "markov") {
    sc.kind = Scenario::Kind::markov;
    if (!j.contains("kernel")) throw ScenarioError("kernel: missing");
    const auto& k = j["kernel"];
    const int s = detail::json_states(k, "kernel");
    if (!k.contains("rows")) throw ScenarioError("kernel.rows: missing");
    sc.kernel = detail::json_kernel_rows(k["rows"], s, "kernel.rows");
    if (!k.contains("cocycle") || !k["cocycle"].is_array() || static_cast<int>(k["cocycle"].size()) != s)
      throw ScenarioError("kernel.cocycle: expected " + std::to_string(s) + " lists indexed [to][from]");
    std::vector<Matrix> mats;
    for (int to = 0; to < s; ++to) {
      const auto& row = k["cocycle"][static_cast<std::size_t>(to)];
      if (!row.is_array() || static_cast<int>(row.size()) != s)
        throw ScenarioError("kernel.cocycle[" + std::to_string(to) + "]: expected " + std::to_string(s) + " matrices");
      for (int from = 0; from < s; ++from)
        mats.push_back(detail::json_matrix(row[static_cast<std::size_t>(from)],
                                           "kernel.cocycle[" + std::to_string(to) + "][" + std::to_string(from) + "]"));
    }
    for (const auto& g : mats)
      if (g.dim() != mats.front().dim()) throw ScenarioError("kernel.cocycle: matrices have different dimensions");
    sc.cocycle = CocycleMap(s, std::move(mats));
    if (j.contains("direction_kernel")) {
      const auto& l = j["direction_kernel"];
      const int ls = l.contains("states") ? detail::json_states(l, "direction_kernel") : s;
      if (ls != s) throw ScenarioError("direction_kernel.states: differs from kernel.states");
      if (!l.contains("rows")) throw ScenarioError("direction_kernel.rows: missing");
      sc.direction_kernel = detail::json_kernel_rows(l["rows"], s, "direction_kernel.rows");
    }
  } else {
    throw ScenarioError("kind: expected \"bernoulli\" or \"markov\", got \"" + kind + "\"");
  }

  if (!j.contains("analyses") || !j["analyses"].is_array()) throw ScenarioError("analyses: expected a list");
  for (std::size_t i = 0; i < j["analyses"].size(); ++i) {
    const auto& a = j["analyses"][i];
    const auto& known = known_analyses();
    if (!a.is_string() || std::find(known.begin(), known.end(), a.get<std::string>()) == known.end())
      throw ScenarioError("analyses[" + std::to_string(i) + "]: unknown analysis " + a.dump());
    sc.analyses.push_back(a.get<std::string>());
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ScenarioError("seed: expected a nonnegative integer");
    sc.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("config")) {
    const auto& c = j["config"];
    if (!c.is_object()) throw ScenarioError("config: expected an object");
    auto& cf = sc.config;
    cf.tol = detail::config_value(c, "tol", cf.tol);
    cf.taylor_order = detail::config_value(c, "taylor_order", cf.taylor_order);
    if (c.contains("taylor_radius")) cf.taylor_radius = detail::config_value(c, "taylor_radius", 0.0);
    const std::string conv = detail::config_value<std::string>(c, "convention", "perturbed");
    if (conv != "perturbed" && conv != "frozen") throw ScenarioError("config.convention: perturbed or frozen");
    cf.convention = conv == "frozen" ? ObservableConvention::frozen : ObservableConvention::perturbed;
    cf.degree_check_max_n = detail::config_value(c, "degree_check_max_n", cf.degree_check_max_n);
    cf.cross_check = detail::config_value(c, "cross_check", cf.cross_check);
    cf.mc_steps = detail::config_value(c, "mc_steps", cf.mc_steps);
    cf.mc_trials = detail::config_value(c, "mc_trials", cf.mc_trials);
    cf.furstenberg_particles = detail::config_value(c, "furstenberg_particles", cf.furstenberg_particles);
    cf.furstenberg_burn_in = detail::config_value(c, "furstenberg_burn_in", cf.furstenberg_burn_in);
    cf.furstenberg_iters = detail::config_value(c, "furstenberg_iters", cf.furstenberg_iters);
    cf.cert_n_max = detail::config_value(c, "cert_n_max", cf.cert_n_max);
    cf.eps = detail::config_value(c, "eps", cf.eps);
    cf.jump = detail::config_value(c, "jump", cf.jump);
    cf.margin = detail::config_value(c, "margin", cf.margin);
    if (!(cf.tol > 0.0)) throw ScenarioError("config.tol: must be positive");
  }
  return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError(path.string() + ": cannot open");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ScenarioError(path.string() + ": " + e.what());
  }
  try {
    return parse_scenario(j, path.stem().string());
  } catch (const ScenarioError& e) {
    throw ScenarioError(path.string() + ": " + e.what());
  }
}

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> tol;
  std::optional<unsigned> threads;
};

/// A convergence trace or circle table kept for CSV and SVG output.
struct Table {
  std::string name;
  std::vector<std::string> headers;
  std::vector<std::vector<double>> rows;
};

struct RunReport {
  Json report;
  std::map<std::string, double> timings;  // seconds per analysis
  std::vector<Table> tables;
  bool any_error = false;
};

/// Demonstration that L1 is not continuous in total variation once supports
/// may be unbounded: mixing in eps delta_{a I} with
/// log a > (L1(mu) + jump - (1 - eps) D) / eps, D = (1/d) sum w log|det g|,
/// keeps mu within TV 2 eps but pushes the determinant lower bound of L1 past L1(mu) + jump.
struct NoncompactDemo {
  double eps = 0.0, jump = 0.0;
  double L1_base = 0.0;
  double log_det_term = 0.0;  // D
  double threshold = 0.0;     // required lower limit for log a
  double log_a = 0.0;
  double lower_bound = 0.0;  // eps log a + (1 - eps) D
  double target = 0.0;       // L1(mu) + jump
  bool exceeds = false;
  double tv_distance = 0.0;
  double tv_limit = 0.0;  // 2 eps
  double threshold_half_eps = 0.0;
  bool monotone_in_eps = false;
  std::optional<double> L1_perturbed;  // direct iteration, when it converges
};

inline NoncompactDemo demo_noncompact(const ComplexAtomicMeasure& mu, double eps, double jump, double margin = 1.0,
                                      double tol = 1e-10) {
  require_probability(mu, "demo_noncompact");
  if (!(eps > 0.0 && eps < 1.0)) throw DomainError("demo_noncompact needs 0 < eps < 1");
  if (!(jump > 0.0)) throw DomainError("demo_noncompact needs jump > 0");
  if (!(margin > 0.0)) throw DomainError("demo_noncompact needs margin > 0");
  const std::size_t d = dimension(mu);
  NoncompactDemo out;
  out.eps = eps;
  out.jump = jump;
  out.L1_base = lyapunov_iterative(mu, tol).L1;
  out.log_det_term = log_det_average(mu) / static_cast<double>(d);
  auto threshold = [&](double e) { return (out.L1_base + jump - (1.0 - e) * out.log_det_term) / e; };
  out.threshold = threshold(eps);
  out.threshold_half_eps = threshold(eps / 2.0);
  out.monotone_in_eps = out.threshold_half_eps > out.threshold;
  out.log_a = out.threshold + margin;
  out.lower_bound = eps * out.log_a + (1.0 - eps) * out.log_det_term;
  out.target = out.L1_base + jump;
  out.exceeds = out.lower_bound > out.target;
  const Matrix scalar = Matrix::trusted(std::exp(out.log_a) *
                                        Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)));
  const auto mixed = add(scale(1.0 - eps, mu), dirac(scalar), eps);
  out.tv_distance = total_variation(add(mixed, mu, -1.0));
  out.tv_limit = 2.0 * eps;
  try {
    out.L1_perturbed = lyapunov_iterative(mixed, tol).L1;
  } catch (const std::exception&) {
  }
  return out;
}

namespace detail {

inline Json complex_json(Complex c) { return Json::array({c.real(), c.imag()}); }

inline Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

inline Json diagnostics_json(const std::map<std::string, double>& d) {
  Json out = Json::object();
  for (const auto& [k, v] : d) out[k] = v;
  return out;
}

inline Json lyapunov_json(const LyapunovResult& r) {
  Json j;
  j["method"] = to_string(r.method);
  j["L1"] = r.L1;
  j["value"] = complex_json(r.value);
  j["error_bound"] = r.error_bound;
  j["n_used"] = r.n_used;
  j["certified"] = r.certified;
  j["diagnostics"] = diagnostics_json(r.diagnostics);
  return j;
}

inline Json certificate_json(const CertificateSearch& cs) {
  Json j;
  j["found"] = cs.certificate.has_value();
  j["stop_reason"] = cs.stop_reason;
  j["best_alpha"] = cs.best_alpha;
  j["best_n"] = cs.best_n;
  j["best_value"] = cs.best_value;
  if (cs.certificate) {
    const auto& c = *cs.certificate;
    j["alpha"] = c.alpha;
    j["n0"] = c.n0;
    j["kappa"] = c.kappa;
    j["theta"] = c.theta;
    j["C"] = c.C;
    j["tv_radius"] = c.tv_radius;
    j["kappa_neighborhood"] = c.kappa_neighborhood;
    j["power_bounds"] = c.power_bounds;
  }
  return j;
}

inline Json taylor_json(const TaylorReport& t) {
  Json j;
  Json coeffs = Json::array();
  for (const auto& c : t.coefficients) coeffs.push_back(complex_json(c));
  j["coefficients"] = coeffs;
  j["circle_radius"] = t.circle_radius;
  j["radius_source"] = t.radius_source;
  j["certified_radius"] = t.certified_radius;
  j["n_used"] = t.n_used;
  j["reconstruction_residual"] = t.reconstruction_residual;
  j["center_value"] = t.center_value;
  j["center_mismatch"] = t.center_mismatch;
  j["max_mass_defect"] = t.max_mass_defect;
  j["circle_points"] = static_cast<int>(t.circle.nodes.size());
  return j;
}

inline Table trace_table(const std::string& name, const std::vector<Complex>& trace) {
  Table t{name, {"n", "a_re", "a_im", "abs_diff_to_last"}, {}};
  const Complex last = trace.empty() ? Complex{} : trace.back();
  for (std::size_t n = 0; n < trace.size(); ++n)
    t.rows.push_back({static_cast<double>(n), trace[n].real(), trace[n].imag(), std::abs(trace[n] - last)});
  return t;
}

inline Table circle_table(const std::string& name, const CauchyResult& c) {
  Table t{name, {"angle", "direct_re", "direct_im", "reconstruction_re", "reconstruction_im"}, {}};
  for (std::size_t i = 0; i < c.heldout_nodes.size(); ++i)
    t.rows.push_back({std::arg(c.heldout_nodes[i]), c.heldout_values[i].real(), c.heldout_values[i].imag(),
                      c.heldout_reconstruction[i].real(), c.heldout_reconstruction[i].imag()});
  std::sort(t.rows.begin(), t.rows.end());
  return t;
}

// Default direction: move mass from the second atom to the first.
inline std::optional<ComplexAtomicMeasure> default_direction(const ComplexAtomicMeasure& mu) {
  if (mu.size() < 2) return std::nullopt;
  return ComplexAtomicMeasure({{mu.atoms()[0].point, 1.0}, {mu.atoms()[1].point, -1.0}});
}

// Default kernel direction: on the first row with two transitions, move mass between them.
inline std::optional<FiniteKernel> default_direction(const FiniteKernel& k) {
  const int s = k.states();
  for (int i = 0; i < s; ++i) {
    std::vector<int> support;
    for (int t = 0; t < s; ++t)
      if (k(i, t) != Complex{}) support.push_back(t);
    if (support.size() >= 2) {
      Eigen::MatrixXcd w = Eigen::MatrixXcd::Zero(s, s);
      w(i, support[0]) = 1.0;
      w(i, support[1]) = -1.0;
      return FiniteKernel(std::move(w));
    }
  }
  return std::nullopt;
}

class Stopwatch {
 public:
  Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_;
};

inline std::vector<std::string> ordered_analyses(const Scenario& sc) {
  std::set<std::string> req(sc.analyses.begin(), sc.analyses.end());
  // the certificate feeds both lyapunov and taylor
  if (req.count("taylor")) req.insert("certify");
  std::vector<std::string> out;
  for (const auto& name : known_analyses())
    if (req.count(name)) out.push_back(name);
  return out;
}

}  // namespace detail

/// Runs the requested analyses in dependency order. Each analysis either adds
/// its results or a structured {"error": {...}} entry; siblings still run.
inline RunReport run_scenario(const Scenario& sc_in, const RunOverrides& ov = {}) {
  Scenario sc = sc_in;
  if (ov.seed) sc.seed = *ov.seed;
  if (ov.tol) sc.config.tol = *ov.tol;
  if (ov.threads) sc.config.threads = *ov.threads;
  const auto& cf = sc.config;
  const bool markov = sc.kind == Scenario::Kind::markov;

  RunReport out;
  Json& rep = out.report;
  rep["tool"] = "lyapan";
  rep["version"] = LYAPAN_VERSION;
  rep["scenario"] = sc.name;
  rep["kind"] = markov ? "markov" : "bernoulli";
  rep["seed"] = sc.seed;
  rep["tol"] = cf.tol;
  rep["input"] = sc.source;
  const auto order = detail::ordered_analyses(sc);
  rep["requested"] = sc.analyses;
  rep["executed"] = order;
  Json results = Json::object();

  std::optional<ContractionCertificate> cert;
  McLyapunovOptions mc_opt;
  mc_opt.threads = cf.threads;
  FurstenbergOptions fu_opt;
  fu_opt.threads = cf.threads;

  for (const auto& name : order) {
    detail::Stopwatch watch;
    Json r;
    try {
      if (name == "certify") {
        CertificateOptions co;
        co.n_max = cf.cert_n_max;
        CertificateSearch cs;
        if (markov) {
          cs = find_certificate_markov(*sc.kernel, *sc.cocycle, co);
        } else {
          // directions may charge matrices outside supp(mu); the radius must cover them
          if (sc.direction)
            for (const auto& a : *sc.direction) co.extra_symbols.push_back(a.point);
          cs = find_certificate(sc.measure, co);
        }
        cert = cs.certificate;
        r = detail::certificate_json(cs);
        if (!std::count(sc.analyses.begin(), sc.analyses.end(), std::string("certify")))
          r["auto_inserted"] = true;
      } else if (name == "lyapunov") {
        LyapunovResult main;
        if (markov) {
          const auto erg = ergodicity_check(*sc.kernel);
          Json e;
          e["uniformly_ergodic"] = erg.uniformly_ergodic;
          e["stationary"] = erg.stationary;
          e["rate_rho"] = erg.rate_rho;
          e["n_star"] = erg.n_star;
          r["ergodicity"] = e;
          main = lyapunov_markov(*sc.kernel, *sc.cocycle, cf.tol, cert);
          r["iteration"] = detail::lyapunov_json(main);
          if (cf.cross_check) {
            r["monte_carlo"] = detail::lyapunov_json(
                lyapunov_markov_mc(*sc.kernel, *sc.cocycle, cf.mc_steps, cf.mc_trials, sc.seed, mc_opt));
            r["furstenberg"] = detail::lyapunov_json(lyapunov_markov_furstenberg(
                *sc.kernel, *sc.cocycle, cf.furstenberg_particles, cf.furstenberg_burn_in, cf.furstenberg_iters,
                derive_seed(sc.seed, 1), fu_opt));
          }
        } else {
          main = lyapunov_iterative(sc.measure, cf.tol, cert);
          r["iteration"] = detail::lyapunov_json(main);
          if (dimension(sc.measure) >= 2 && is_probability(sc.measure)) {
            const auto se = second_exponent(sc.measure, cf.tol);
            Json s;
            s["L1_plus_L2"] = se.L1_plus_L2;
            s["L2"] = se.L2;
            s["gap"] = se.gap;
            if (se.det_average) s["det_average"] = *se.det_average;
            s["routes_agree"] = se.routes_agree;
            r["second_exponent"] = s;
          }
          if (cf.cross_check && is_probability(sc.measure)) {
            r["monte_carlo"] =
                detail::lyapunov_json(lyapunov_mc(sc.measure, cf.mc_steps, cf.mc_trials, sc.seed, mc_opt));
            r["furstenberg"] = detail::lyapunov_json(lyapunov_furstenberg(
                sc.measure, cf.furstenberg_particles, cf.furstenberg_burn_in, cf.furstenberg_iters,
                derive_seed(sc.seed, 1), fu_opt));
          }
        }
        r["L1"] = main.L1;
        r["error_bound"] = main.error_bound;
        out.tables.push_back(detail::trace_table("lyapunov_trace", main.trace));
      } else if (name == "reducibility") {
        if (markov) {
          const auto s = invariant_section_check(*sc.kernel, *sc.cocycle);
          r["status"] = to_string(s.status);
          Json secs = Json::array();
          for (const auto& sec : s.sections) {
            Json per = Json::array();
            for (const auto& b : sec) per.push_back(detail::matrix_json(b));
            secs.push_back(per);
          }
          r["sections"] = secs;
          r["all_lines_invariant"] = s.all_lines_invariant;
          if (s.restricted_L1) r["restricted_L1"] = *s.restricted_L1;
          if (s.L1) r["L1"] = *s.L1;
          if (s.quasi_irreducible) r["quasi_irreducible"] = *s.quasi_irreducible;
          if (s.loop_span_dimension) r["loop_span_dimension"] = *s.loop_span_dimension;
          r["note"] = s.note;
        } else {
          const auto s = reducibility_check(sc.measure);
          r["status"] = to_string(s.status);
          Json subs = Json::array();
          for (const auto& b : s.invariant_subspaces) subs.push_back(detail::matrix_json(b));
          r["invariant_subspaces"] = subs;
          r["all_lines_invariant"] = s.all_lines_invariant;
          if (s.restricted_L1) r["restricted_L1"] = *s.restricted_L1;
          if (s.L1) r["L1"] = *s.L1;
          if (s.quasi_irreducible) r["quasi_irreducible"] = *s.quasi_irreducible;
          if (s.span_dimension) r["span_dimension"] = *s.span_dimension;
          r["note"] = s.note;
        }
      } else if (name == "taylor") {
        TaylorReport t;
        if (markov) {
          const auto l = sc.direction_kernel ? sc.direction_kernel : detail::default_direction(*sc.kernel);
          if (!l) throw DomainError("no direction_kernel given and no row with two transitions to perturb");
          KernelTaylorOptions ko;
          ko.order = cf.taylor_order;
          ko.radius = cf.taylor_radius;
          ko.tol = cf.tol;
          ko.certificate = cert;
          t = kernel_taylor(*sc.kernel, *l, *sc.cocycle, ko);
        } else {
          const auto nu = sc.direction ? sc.direction : detail::default_direction(sc.measure);
          if (!nu) throw DomainError("no direction given and the measure has a single atom");
          const auto dir = PerturbationDirection::make(*nu);
          TaylorOptions to;
          to.order = cf.taylor_order;
          to.radius = cf.taylor_radius;
          to.tol = cf.tol;
          to.certificate = cert;
          if (!cert && support_leq(dir.nu, sc.measure)) {
            const auto plan = full_support_reduction(sc.measure, dir.nu);
            if (!plan.identity) to.reduction = plan;
            Json red;
            red["identity"] = plan.identity;
            red["strict"] = plan.strict;
            red["dominant_exponent"] = plan.dominant_exponent;
            red["block_dimension"] = static_cast<int>(plan.transform.cols());
            r["reduction"] = red;
          }
          t = taylor_coefficients(sc.measure, dir, to);
          Json degrees = Json::array();
          for (int n = 0; n <= cf.degree_check_max_n; ++n) {
            const auto dc = degree_check(sc.measure, dir, n, detail::all_ones(dimension(sc.measure)), n + 6,
                                         cf.convention);
            Json x;
            x["n"] = n;
            x["degree_bound"] = dc.degree_bound;
            x["observed_degree"] = dc.observed_degree;
            x["spurious_ratio"] = dc.spurious_ratio;
            x["crosscheck"] = dc.crosscheck;
            x["passed"] = dc.passed;
            degrees.push_back(x);
          }
          r["convention"] = to_string(cf.convention);
          r["degree_checks"] = degrees;
        }
        r["expansion"] = detail::taylor_json(t);
        out.tables.push_back(detail::circle_table("taylor_circle", t.circle));
      } else if (name == "demo_noncompact") {
        if (markov) throw DomainError("demo_noncompact applies to Bernoulli scenarios");
        const auto d = demo_noncompact(sc.measure, cf.eps, cf.jump, cf.margin);
        r["eps"] = d.eps;
        r["jump"] = d.jump;
        r["L1_base"] = d.L1_base;
        r["log_det_term"] = d.log_det_term;
        r["threshold_log_a"] = d.threshold;
        r["log_a"] = d.log_a;
        r["lower_bound"] = d.lower_bound;
        r["target"] = d.target;
        r["exceeds"] = d.exceeds;
        r["tv_distance"] = d.tv_distance;
        r["tv_limit"] = d.tv_limit;
        r["threshold_log_a_half_eps"] = d.threshold_half_eps;
        r["monotone_in_eps"] = d.monotone_in_eps;
        if (d.L1_perturbed) r["L1_perturbed"] = *d.L1_perturbed;
      }
    } catch (const std::exception& e) {
      Json err;
      err["type"] = dynamic_cast<const ConvergenceError*>(&e)  ? "convergence"
                    : dynamic_cast<const CapacityError*>(&e)   ? "capacity"
                    : dynamic_cast<const NumericError*>(&e)    ? "numeric"
                    : dynamic_cast<const DomainError*>(&e)     ? "domain"
                                                               : "other";
      err["message"] = e.what();
      r["error"] = err;
      out.any_error = true;
    }
    out.timings[name] = watch.seconds();
    results[name] = r;
  }
  rep["results"] = results;
  rep["status"] = out.any_error ? "error" : "ok";
  return out;
}

enum class OutputFormat { report, csv, svg };

namespace detail {

inline std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

// Flattens the results object into analysis,quantity,value rows (numbers and booleans only).
inline void flatten(const Json& j, const std::string& prefix, std::vector<std::pair<std::string, double>>& out) {
  if (j.is_number()) {
    out.emplace_back(prefix, j.get<double>());
  } else if (j.is_boolean()) {
    out.emplace_back(prefix, j.get<bool>() ? 1.0 : 0.0);
  } else if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) flatten(j[i], prefix + "[" + std::to_string(i) + "]", out);
  }
}

}  // namespace detail

/// Writes report.json, summary.csv and per-table CSV files, SVG plots, and
/// timings.json into `dir` (created if missing). Returns the written paths.
inline std::vector<std::filesystem::path> write_outputs(const RunReport& run, const std::filesystem::path& dir,
                                                        const std::set<OutputFormat>& formats) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<fs::path> written;
  auto emit = [&](const std::string& file, const std::string& text) {
    detail::write_text(dir / file, text);
    written.push_back(dir / file);
  };
  if (formats.count(OutputFormat::report)) emit("report.json", run.report.dump(2) + "\n");
  if (formats.count(OutputFormat::csv)) {
    std::vector<std::pair<std::string, double>> flat;
    const Json& results = run.report["results"];
    for (auto it = results.begin(); it != results.end(); ++it) detail::flatten(it.value(), it.key(), flat);
    std::string csv = "analysis,quantity,value\n";
    for (const auto& [key, v] : flat) {
      const auto dot = key.find('.');
      csv += key.substr(0, dot) + "," + (dot == std::string::npos ? "" : key.substr(dot + 1)) + "," +
             detail::csv_number(v) + "\n";
    }
    emit("summary.csv", csv);
    for (const auto& t : run.tables) {
      std::string s;
      for (std::size_t i = 0; i < t.headers.size(); ++i) s += (i ? "," : "") + t.headers[i];
      s += "\n";
      for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) s += (i ? "," : "") + detail::csv_number(row[i]);
        s += "\n";
      }
      emit(t.name + ".csv", s);
    }
  }
  if (formats.count(OutputFormat::svg)) {
    for (const auto& t : run.tables) {
      if (t.name == "lyapunov_trace") {
        PlotSeries s{"|a_n - a_last|", {}, {}};
        for (const auto& row : t.rows) {
          s.x.push_back(row[0]);
          s.y.push_back(row[3]);
        }
        emit("lyapunov_trace.svg", svg_line_plot({"operator iteration convergence", "n", "|a_n - a_last|", true},
                                                 {s}));
      } else if (t.name == "taylor_circle") {
        PlotSeries direct{"direct (real part)", {}, {}}, rec{"Taylor reconstruction (real part)", {}, {}};
        for (const auto& row : t.rows) {
          direct.x.push_back(row[0]);
          direct.y.push_back(row[1]);
          rec.x.push_back(row[0]);
          rec.y.push_back(row[3]);
        }
        emit("taylor_circle.svg",
             svg_line_plot({"held-out circle points", "angle", "Re L1(z)", false}, {direct, rec}));
      }
    }
  }
  Json timings = Json::object();
  for (const auto& [k, v] : run.timings) timings[k] = v;
  detail::write_text(dir / "timings.json", timings.dump(2) + "\n");
  written.push_back(dir / "timings.json");
  return written;
}

}  // namespace lyapan
