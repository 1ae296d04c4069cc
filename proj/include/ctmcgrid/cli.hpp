#pragma once

// Batch command-line driver. Every verb reads one JSON run configuration,
// applies flag overrides (flag > file > default) and writes into an output
// directory:
//
//   impute      imputed/path_NNN.csv, impute_manifest.json
//   discretize  ctmc/imp_NNN_run_MM.csv, discretize_manifest.json
//   expand      expanded.csv, expand_manifest.json
//   fit         fit.json, coefficients.csv
//   cv          cv_curve.csv, cv.json
//   simulate    simulated/sim_NNN.csv, occupancy.asc, simulate_manifest.json
//
// Exit codes: 0 ok, 2 input error, 3 non-convergence, 4 internal error.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctmcgrid/ascii_grid.hpp"
#include "ctmcgrid/cross_validation.hpp"
#include "ctmcgrid/csv_io.hpp"
#include "ctmcgrid/ctmc.hpp"
#include "ctmcgrid/glm.hpp"
#include "ctmcgrid/lasso.hpp"
#include "ctmcgrid/model_spec.hpp"
#include "ctmcgrid/pipeline.hpp"

namespace ctmcgrid::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode { kOk = 0, kInputError = 2, kNotConverged = 3, kInternalError = 4 };

struct LayerSource {
  std::string name;
  std::string path;
  std::optional<TermRole> role;
};

struct PenaltyConfig {
  PenaltyKind kind = PenaltyKind::none;
  std::optional<double> lambda;
  std::vector<double> lambdas;  // explicit grid
  int grid_size = 20;
  double grid_ratio = 1e-3;
  std::optional<double> grid_max;  // quadratic grids need an upper end
  int folds = 5;
  std::vector<std::string> unpenalized;
};

struct SimulateConfig {
  int paths = 1;
  double duration = 0.0;
  std::optional<std::pair<int, int>> start;
  std::optional<double> start_time;
};

/// Parsed run configuration with every path made absolute.
struct RunConfig {
  fs::path base;
  std::optional<std::string> telemetry;
  std::optional<std::string> grid;
  std::vector<LayerSource> layers;
  std::optional<json> model;
  bool autocovariate = false;
  int imputations = 1;
  std::optional<double> time_step;
  std::optional<double> sigma;
  std::optional<std::uint64_t> seed;
  bool censor_final = true;
  PenaltyConfig penalty;
  std::optional<std::string> coefficients;
  SimulateConfig simulate;
  std::string out = "out";
  unsigned threads = 1;

  fs::path out_dir() const { return fs::path(out); }
  std::string out_file(const std::string& name) const { return (out_dir() / name).string(); }
};

namespace detail {

inline std::string resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return (q.is_absolute() ? q : base / q).lexically_normal().string();
}

inline json read_json_file(const std::string& path) {
  auto in = ctmcgrid::detail::open_input(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline void write_text(const std::string& path, const std::string& text) {
  auto out = ctmcgrid::detail::open_output(path);
  out << text;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string file_hash(const std::string& path) {
  auto in = ctmcgrid::detail::open_input(path);
  std::ostringstream os;
  os << in.rdbuf();
  return hex64(ctmcgrid::detail::fnv1a(os.str()));
}

inline std::string numbered(const std::string& stem, std::size_t i, int width = 3) {
  std::ostringstream os;
  os << stem << std::setw(width) << std::setfill('0') << i;
  return os.str();
}

inline PenaltyKind penalty_kind(const std::string& s) {
  if (s == "none") return PenaltyKind::none;
  if (s == "quadratic") return PenaltyKind::quadratic;
  if (s == "l1" || s == "lasso") return PenaltyKind::l1;
  throw InputError("unknown penalty kind '" + s + "' (expected none, quadratic or l1)");
}

}  // namespace detail

inline RunConfig parse_config(const json& j, const fs::path& base) {
  RunConfig c;
  c.base = base;
  try {
    if (j.contains("telemetry")) c.telemetry = detail::resolve(base, j.at("telemetry").get<std::string>());
    if (j.contains("grid")) c.grid = detail::resolve(base, j.at("grid").get<std::string>());
    if (j.contains("layers")) {
      const auto& l = j.at("layers");
      if (l.is_object()) {
        for (const auto& [name, v] : l.items()) {
          LayerSource s{name, "", std::nullopt};
          if (v.is_string()) {
            s.path = detail::resolve(base, v.get<std::string>());
          } else {
            s.path = detail::resolve(base, v.at("path").get<std::string>());
            if (v.contains("role")) s.role = ctmcgrid::detail::role_from_name(v.at("role").get<std::string>());
          }
          c.layers.push_back(s);
        }
      } else {
        for (const auto& v : l) {
          LayerSource s{v.at("name").get<std::string>(), detail::resolve(base, v.at("path").get<std::string>()), std::nullopt};
          if (v.contains("role")) s.role = ctmcgrid::detail::role_from_name(v.at("role").get<std::string>());
          c.layers.push_back(s);
        }
      }
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.model = m.is_string() ? detail::read_json_file(detail::resolve(base, m.get<std::string>())) : m;
    }
    c.autocovariate = j.value("autocovariate", false);
    c.imputations = j.value("imputations", 1);
    if (j.contains("time_step") && !j.at("time_step").is_null()) c.time_step = j.at("time_step").get<double>();
    if (j.contains("sigma") && !j.at("sigma").is_null()) c.sigma = j.at("sigma").get<double>();
    if (j.contains("seed") && !j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
    c.censor_final = j.value("censor_final", true);
    if (j.contains("penalty")) {
      const auto& p = j.at("penalty");
      c.penalty.kind = detail::penalty_kind(p.value("kind", std::string("none")));
      if (p.contains("lambda")) c.penalty.lambda = p.at("lambda").get<double>();
      if (p.contains("lambdas")) {
        const auto& g = p.at("lambdas");
        if (g.is_array()) {
          c.penalty.lambdas = g.get<std::vector<double>>();
        } else {
          c.penalty.grid_size = g.value("n", 20);
          c.penalty.grid_ratio = g.value("ratio", 1e-3);
          if (g.contains("max")) c.penalty.grid_max = g.at("max").get<double>();
        }
      }
      c.penalty.folds = p.value("folds", 5);
      c.penalty.unpenalized = p.value("unpenalized", std::vector<std::string>{});
    }
    if (j.contains("coefficients")) c.coefficients = detail::resolve(base, j.at("coefficients").get<std::string>());
    if (j.contains("simulate")) {
      const auto& s = j.at("simulate");
      c.simulate.paths = s.value("paths", 1);
      c.simulate.duration = s.value("duration", 0.0);
      if (s.contains("start")) {
        const auto rc = s.at("start").get<std::vector<int>>();
        if (rc.size() != 2) throw InputError("simulate.start must be [row, col]");
        c.simulate.start = std::make_pair(rc[0], rc[1]);
      }
      if (s.contains("start_time")) c.simulate.start_time = s.at("start_time").get<double>();
    }
    c.out = detail::resolve(base, j.value("out", std::string("out")));
    c.threads = j.value("threads", 1u);
  } catch (const json::exception& e) {
    throw InputError(std::string("run configuration: ") + e.what());
  }
  if (c.imputations < 1) throw InputError("run configuration: imputations must be at least 1");
  if (c.threads < 1) c.threads = 1;
  return c;
}

/// Context for a verb: config plus lazily loaded inputs.
class Session {
 public:
  explicit Session(RunConfig cfg, std::ostream& log) : cfg_(std::move(cfg)), log_(log) {}

  const RunConfig& config() const { return cfg_; }
  std::ostream& log() { return log_; }

  std::uint64_t seed() const {
    if (!cfg_.seed) throw InputError("a seed is required for this command (config \"seed\" or --seed)");
    return *cfg_.seed;
  }

  const Telemetry& telemetry() {
    if (!telemetry_) {
      if (!cfg_.telemetry) throw InputError("run configuration has no \"telemetry\" file");
      telemetry_ = read_telemetry_csv(*cfg_.telemetry);
    }
    return *telemetry_;
  }

  const RasterGrid& state_grid() {
    if (!grid_) {
      if (!cfg_.grid) throw InputError("run configuration has no \"grid\" raster");
      grid_ = read_ascii_grid(*cfg_.grid);
    }
    return *grid_;
  }

  ModelSpec model() {
    SpecDefaults d;
    d.grid = state_grid().geometry();
    if (cfg_.telemetry) {
      const auto& f = telemetry().fixes;
      d.t_min = f.front().t;
      d.t_max = f.back().t;
    }
    if (cfg_.model) return model_spec_from_json(*cfg_.model, d);
    // no model document: intercept plus one term per layer role
    ModelSpec s;
    for (const auto& l : cfg_.layers) {
      if (!l.role) throw InputError("layer '" + l.name + "' needs a role when no model is given");
      if (*l.role == TermRole::motility) s.motility.push_back({l.name, l.name});
      else if (*l.role == TermRole::directional) s.directional.push_back({l.name, l.name});
      else throw InputError("layer '" + l.name + "': role must be motility or directional");
    }
    if (cfg_.autocovariate) s.autocovariate = "autocovariate";
    s.validate();
    return s;
  }

  DesignContext design() {
    const auto spec = model();
    std::map<std::string, RasterGrid> layers;
    for (const auto& name : spec.layer_names()) {
      auto it = std::find_if(cfg_.layers.begin(), cfg_.layers.end(), [&](const LayerSource& l) { return l.name == name; });
      if (it == cfg_.layers.end()) throw InputError("model uses layer '" + name + "' but no file is configured for it");
      layers.emplace(name, read_ascii_grid(it->path));
    }
    return DesignContext(spec, state_grid(), std::move(layers));
  }

 private:
  RunConfig cfg_;
  std::ostream& log_;
  std::optional<Telemetry> telemetry_;
  std::optional<RasterGrid> grid_;
};

// --- verbs --------------------------------------------------------------------

inline int cmd_impute(Session& s) {
  const auto& cfg = s.config();
  const auto& tel = s.telemetry();
  const bool estimated = !cfg.sigma;
  const double sigma = estimated ? fit_bridge_sigma(tel) : *cfg.sigma;
  const double cell = s.state_grid().geometry().cell_size;
  const double dt = cfg.time_step ? *cfg.time_step : default_bridge_step(tel, sigma, cell);
  const auto seed = s.seed();
  const auto paths = impute_paths(tel, static_cast<std::size_t>(cfg.imputations), dt, sigma, seed, cfg.threads);
  fs::create_directories(cfg.out_dir() / "imputed");
  json files = json::array();
  for (std::size_t p = 0; p < paths.size(); ++p) {
    const std::string rel = "imputed/" + detail::numbered("path_", p) + ".csv";
    write_continuous_path_csv(paths[p], cfg.out_file(rel));
    files.push_back(rel);
  }
  json m = {{"sigma", sigma},       {"sigma_estimated", estimated}, {"time_step", dt},
            {"imputations", cfg.imputations}, {"seed", seed}, {"streams", "imputation p uses stream p of the seed"},
            {"files", files}};
  detail::write_text(cfg.out_file("impute_manifest.json"), m.dump(2) + "\n");
  s.log() << "imputed " << paths.size() << " paths (sigma " << sigma << ", step " << dt << ")\n";
  return kOk;
}

inline std::vector<ContinuousPath> load_imputed(Session& s) {
  const auto& cfg = s.config();
  const auto manifest_path = cfg.out_file("impute_manifest.json");
  if (!fs::exists(manifest_path)) throw InputError("no imputed paths in '" + cfg.out + "' (run impute first)");
  const auto m = detail::read_json_file(manifest_path);
  std::vector<ContinuousPath> out;
  for (const auto& f : m.at("files")) out.push_back(read_continuous_path_csv(cfg.out_file(f.get<std::string>())));
  return out;
}

inline int cmd_discretize(Session& s) {
  const auto& cfg = s.config();
  const auto imputed = load_imputed(s);
  const auto& grid = s.state_grid();
  std::vector<std::vector<CtmcPath>> runs(imputed.size());
  ctmcgrid::detail::parallel_for(imputed.size(), cfg.threads, [&](std::size_t p) { runs[p] = discretize(imputed[p], grid); });
  fs::create_directories(cfg.out_dir() / "ctmc");
  json per = json::array();
  std::size_t transitions = 0;
  for (std::size_t p = 0; p < runs.size(); ++p) {
    json files = json::array();
    for (std::size_t r = 0; r < runs[p].size(); ++r) {
      const std::string rel = "ctmc/" + detail::numbered("imp_", p) + detail::numbered("_run_", r, 2) + ".csv";
      write_ctmc_path_csv(runs[p][r], grid.geometry(), cfg.out_file(rel));
      files.push_back(rel);
      transitions += runs[p][r].transitions();
    }
    per.push_back(files);
  }
  json m = {{"imputations", runs.size()}, {"files", per}, {"transitions", transitions}};
  detail::write_text(cfg.out_file("discretize_manifest.json"), m.dump(2) + "\n");
  s.log() << "discretized " << runs.size() << " imputations (" << transitions << " transitions)\n";
  return kOk;
}

inline std::vector<std::vector<CtmcPath>> load_ctmc_paths(Session& s) {
  const auto& cfg = s.config();
  const auto manifest_path = cfg.out_file("discretize_manifest.json");
  if (!fs::exists(manifest_path)) throw InputError("no CTMC paths in '" + cfg.out + "' (run discretize first)");
  const auto m = detail::read_json_file(manifest_path);
  const auto& g = s.state_grid().geometry();
  std::vector<std::vector<CtmcPath>> out;
  for (const auto& files : m.at("files")) {
    out.emplace_back();
    for (const auto& f : files) out.back().push_back(read_ctmc_path_csv(cfg.out_file(f.get<std::string>()), g));
  }
  return out;
}

inline int cmd_expand(Session& s, bool run_missing) {
  const auto& cfg = s.config();
  if (run_missing) {
    if (!fs::exists(cfg.out_file("impute_manifest.json"))) cmd_impute(s);
    if (!fs::exists(cfg.out_file("discretize_manifest.json"))) cmd_discretize(s);
  }
  const auto ctx = s.design();
  const auto runs = load_ctmc_paths(s);
  const auto stacked = expand_and_stack(runs, ctx, cfg.censor_final, cfg.threads);
  std::vector<std::size_t> rows(runs.size(), 0);
  for (int id : stacked.path_id) ++rows[static_cast<std::size_t>(id)];
  const auto csv = expanded_to_csv_string(stacked);
  detail::write_text(cfg.out_file("expanded.csv"), csv);
  json m = {{"rows", stacked.rows()},
            {"rows_per_path", rows},
            {"imputations", runs.size()},
            {"weight", 1.0 / static_cast<double>(runs.size())},
            {"labels", stacked.labels},
            {"censor_final", cfg.censor_final},
            {"model", model_spec_to_json(ctx.spec())},
            {"hash", detail::hex64(ctmcgrid::detail::fnv1a(csv))}};
  detail::write_text(cfg.out_file("expand_manifest.json"), m.dump(2) + "\n");
  s.log() << "expanded " << stacked.rows() << " rows x " << stacked.columns() << " columns\n";
  return kOk;
}

/// Expanded data after checking it against the hash recorded by expand.
inline std::pair<ExpandedData, json> load_expanded(Session& s) {
  const auto& cfg = s.config();
  const auto data_path = cfg.out_file("expanded.csv");
  const auto manifest_path = cfg.out_file("expand_manifest.json");
  if (!fs::exists(data_path) || !fs::exists(manifest_path))
    throw InputError("no expanded data in '" + cfg.out + "' (run expand first)");
  const auto m = detail::read_json_file(manifest_path);
  const auto actual = detail::file_hash(data_path);
  const auto recorded = m.value("hash", std::string());
  if (actual != recorded)
    throw InputError(data_path + ": content hash " + actual + " does not match manifest hash " + recorded +
                     " (file changed since expand)");
  return {read_expanded_csv(data_path), m};
}

inline std::vector<bool> penalty_mask(const ExpandedData& d, const PenaltyConfig& p, const json& manifest) {
  std::vector<bool> mask(static_cast<std::size_t>(d.columns()), true);
  std::string intercept = "intercept";
  if (manifest.contains("model") && manifest.at("model").value("intercept", true))
    intercept = manifest.at("model").value("intercept_label", intercept);
  for (int j = 0; j < d.columns(); ++j) {
    if (d.labels[j] == intercept) mask[j] = false;
    for (const auto& u : p.unpenalized)
      if (d.labels[j] == u) mask[j] = false;
  }
  return mask;
}

inline MatrixXd quadratic_penalty(Session& s, const ExpandedData& d, const json& manifest) {
  if (!manifest.contains("model")) throw InputError("expand manifest has no model; cannot build the roughness penalty");
  const auto spec = model_spec_from_json(manifest.at("model"));
  if (spec.column_labels() != d.labels) throw InputError("expanded columns do not match the recorded model");
  const MatrixXd omega = varying_penalty(spec);
  if (omega.isZero()) s.log() << "warning: model has no varying terms of degree >= 2; quadratic penalty is zero\n";
  return omega;
}

inline json fit_json(const FitResult& f) {
  auto j = fit_result_to_json(f);
  j["wald"] = json::array();
  for (const auto& w : wald_tests(f))
    j["wald"].push_back({{"z", ctmcgrid::detail::number_or_null(w.z)}, {"p_value", ctmcgrid::detail::number_or_null(w.p_value)}});
  return j;
}

// Explicit lambda, else the cv.json choice made on the same expanded data.
inline std::optional<double> chosen_lambda(Session& s, const json& manifest) {
  const auto& cfg = s.config();
  if (cfg.penalty.lambda) return cfg.penalty.lambda;
  const auto cv_path = cfg.out_file("cv.json");
  if (!fs::exists(cv_path)) return std::nullopt;
  const auto cv = detail::read_json_file(cv_path);
  if (cv.value("expanded_hash", std::string()) != manifest.value("hash", std::string()) ||
      cv.value("penalty", std::string()) != to_string(cfg.penalty.kind)) {
    s.log() << "warning: ignoring " << cv_path << " (made for other data or penalty)\n";
    return std::nullopt;
  }
  const double l = cv.at("best_lambda").get<double>();
  s.log() << "using cross-validated lambda " << l << " from " << cv_path << "\n";
  return l;
}

inline int cmd_fit(Session& s) {
  const auto& cfg = s.config();
  auto [d, manifest] = load_expanded(s);
  std::optional<double> lambda;
  if (cfg.penalty.kind != PenaltyKind::none) lambda = chosen_lambda(s, manifest);
  FitResult fit;
  std::optional<FitResult> relaxed;
  std::optional<double> lambda_max;
  switch (cfg.penalty.kind) {
    case PenaltyKind::none:
      fit = fit_poisson_weighted(d);
      break;
    case PenaltyKind::quadratic:
      if (!lambda) throw InputError("quadratic penalty needs \"lambda\" (or run cv first)");
      fit = fit_poisson_weighted(d, PenaltySpec::quadratic(quadratic_penalty(s, d, manifest), lambda.value()));
      break;
    case PenaltyKind::l1: {
      if (!lambda) throw InputError("l1 penalty needs \"lambda\" (or run cv first)");
      const auto path = fit_lasso(d, {lambda.value()}, penalty_mask(d, cfg.penalty, manifest));
      fit = path.fits.front();
      lambda_max = path.lambda_max;
      relaxed = relaxed_refit(d, fit);
      break;
    }
  }
  auto j = fit_json(fit);
  j["rows"] = d.rows();
  j["expanded_hash"] = manifest.value("hash", std::string());
  j["model"] = manifest.value("model", json(nullptr));
  if (relaxed) {
    j["relaxed"] = fit_json(*relaxed);
    j["lambda_max"] = *lambda_max;
  }
  detail::write_text(cfg.out_file("fit.json"), j.dump(2) + "\n");
  s.log() << "fit " << to_string(fit.convergence.status) << " after " << fit.convergence.iterations
          << " iterations; log-likelihood " << fit.log_likelihood << "\n";
  const bool use_relaxed = relaxed && relaxed->converged();
  if (relaxed && !use_relaxed)
    s.log() << "warning: relaxed refit " << to_string(relaxed->convergence.status)
            << "; coefficients.csv holds the penalized estimates\n";
  // l1 fits report the unpenalized refit on the selected support when it is usable
  detail::write_text(cfg.out_file("coefficients.csv"), coefficient_table_csv(use_relaxed ? *relaxed : fit));
  if (!fit.converged()) {
    s.log() << "error: fit did not converge (" << to_string(fit.convergence.status) << ")\n";
    return kNotConverged;
  }
  return kOk;
}

inline int cmd_cv(Session& s) {
  const auto& cfg = s.config();
  auto [d, manifest] = load_expanded(s);
  const auto& pc = cfg.penalty;
  PenaltySpec family;
  std::vector<double> grid = pc.lambdas;
  if (pc.kind == PenaltyKind::none) throw InputError("cv needs a penalty kind (quadratic or l1)");
  if (pc.kind == PenaltyKind::quadratic) {
    family = PenaltySpec::quadratic(quadratic_penalty(s, d, manifest), 0.0);
    if (grid.empty()) {
      if (!pc.grid_max) throw InputError("quadratic cv needs \"lambdas\" as a list or with \"max\"");
      grid = lambda_grid(*pc.grid_max, pc.grid_size, pc.grid_ratio);
    }
  } else {
    family = PenaltySpec::l1(penalty_mask(d, pc, manifest), 0.0);
    if (grid.empty()) {
      const double lmax = pc.grid_max ? *pc.grid_max : fit_lasso(d, {}, family.penalized).lambda_max;
      grid = lambda_grid(lmax, pc.grid_size, pc.grid_ratio);
    }
  }
  const auto res = cross_validate(d, family, grid, pc.folds);
  for (const auto& w : res.warnings) s.log() << "warning: " << w << "\n";
  std::ostringstream csv;
  csv << "lambda,mean_deviance";
  for (int f = 0; f < res.folds; ++f) csv << ",fold_" << f;
  csv << '\n';
  for (const auto& pt : res.curve) {
    csv << ctmcgrid::detail::format_double(pt.lambda) << ',' << ctmcgrid::detail::format_double(pt.mean_deviance);
    for (double v : pt.fold_deviance) csv << ',' << ctmcgrid::detail::format_double(v);
    csv << '\n';
  }
  detail::write_text(cfg.out_file("cv_curve.csv"), csv.str());
  json j = {{"best_lambda", res.best_lambda},
            {"penalty", to_string(pc.kind)},
            {"folds", res.folds},
            {"warnings", res.warnings},
            {"expanded_hash", manifest.value("hash", std::string())}};
  detail::write_text(cfg.out_file("cv.json"), j.dump(2) + "\n");
  s.log() << "cv chose lambda " << res.best_lambda << "\n";
  return kOk;
}

inline int cmd_simulate(Session& s) {
  const auto& cfg = s.config();
  const auto ctx = s.design();
  const auto& g = ctx.geometry();
  const std::string coef_path = cfg.coefficients ? *cfg.coefficients : cfg.out_file("fit.json");
  const auto fit = fit_result_from_json(detail::read_json_file(coef_path));
  if (fit.labels != ctx.labels())
    throw InputError(coef_path + ": coefficient labels do not match the model columns");
  const auto seed = s.seed();

  CellId start = kNoCell;
  double t0 = cfg.simulate.start_time.value_or(0.0);
  if (cfg.simulate.start) {
    const auto [r, c] = *cfg.simulate.start;
    if (!g.in_range(r, c)) throw InputError("simulate.start (" + std::to_string(r) + "," + std::to_string(c) + ") is off the grid");
    start = g.cell(r, c);
  } else if (cfg.telemetry) {
    const auto& f = s.telemetry().fixes.front();
    start = cell_index(f.x, f.y, g);
    if (start == kNoCell) throw InputError("first telemetry fix is off the grid; give simulate.start");
    if (!cfg.simulate.start_time) t0 = f.t;
  } else {
    throw InputError("simulate needs simulate.start or a telemetry file");
  }
  if (!(cfg.simulate.duration >= 0.0)) throw InputError("simulate.duration must be nonnegative");
  if (cfg.simulate.paths < 1) throw InputError("simulate.paths must be at least 1");

  std::vector<CtmcPath> paths(static_cast<std::size_t>(cfg.simulate.paths));
  std::vector<std::uint64_t> seeds(paths.size());
  for (std::size_t i = 0; i < paths.size(); ++i) seeds[i] = ctmcgrid::detail::stream_rng(seed, i)();
  // the start cell is checked once, before any worker runs
  simulate_path(ctx, fit.coefficients, start, t0, 0.0, seeds[0]);
  ctmcgrid::detail::parallel_for(paths.size(), cfg.threads, [&](std::size_t i) {
    paths[i] = simulate_path(ctx, fit.coefficients, start, t0, cfg.simulate.duration, seeds[i]).path;
  });
  fs::create_directories(cfg.out_dir() / "simulated");
  json files = json::array();
  std::size_t transitions = 0;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const std::string rel = "simulated/" + detail::numbered("sim_", i) + ".csv";
    write_ctmc_path_csv(paths[i], g, cfg.out_file(rel));
    files.push_back(rel);
    transitions += paths[i].transitions();
  }
  const auto occ = occupancy(paths, g);
  write_ascii_grid(occ, cfg.out_file("occupancy.asc"));
  json m = {{"paths", paths.size()},  {"duration", cfg.simulate.duration}, {"start", {g.row_of(start), g.col_of(start)}},
            {"start_time", t0},       {"seed", seed},                      {"path_seeds", seeds},
            {"transitions", transitions}, {"files", files},                {"occupancy", "occupancy.asc"}};
  detail::write_text(cfg.out_file("simulate_manifest.json"), m.dump(2) + "\n");
  s.log() << "simulated " << paths.size() << " paths (" << transitions << " transitions)\n";
  return kOk;
}

// --- entry point ----------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Grid CTMC movement models: impute, discretize, expand, fit, cv, simulate"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<unsigned> threads;
  app.add_option("--config", config_path, "run configuration (JSON)")->required();
  app.add_option("--seed", seed, "master seed (overrides config)");
  app.add_option("--out", out_dir, "output directory (overrides config)");
  app.add_option("--threads", threads, "maximum worker threads (overrides config)");

  std::optional<int> imputations;
  std::optional<double> sigma, lambda;
  bool run_missing = false;
  auto* impute = app.add_subcommand("impute", "impute continuous paths between telemetry fixes");
  impute->add_option("--imputations", imputations, "number of imputed paths P");
  impute->add_option("--sigma", sigma, "bridge sigma (default: estimated from the fixes)");
  app.add_subcommand("discretize", "convert imputed paths into grid CTMC paths");
  auto* expand_cmd = app.add_subcommand("expand", "expand CTMC paths into stacked Poisson rows");
  expand_cmd->add_flag("--run-missing", run_missing, "run impute and discretize first if their outputs are absent");
  auto* fit_cmd = app.add_subcommand("fit", "fit the stacked weighted likelihood");
  fit_cmd->add_option("--lambda", lambda, "penalty weight (overrides config)");
  app.add_subcommand("cv", "cross-validate the penalty weight");
  std::optional<int> sim_paths;
  std::optional<double> duration;
  auto* sim = app.add_subcommand("simulate", "simulate paths from fitted coefficients");
  sim->add_option("--paths", sim_paths, "number of simulated paths");
  sim->add_option("--duration", duration, "simulated time per path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }

  const std::string verb = app.get_subcommands().front()->get_name();
  try {
    const fs::path cfg_file = fs::absolute(config_path);
    auto cfg = parse_config(detail::read_json_file(cfg_file.string()), cfg_file.parent_path());
    if (seed) cfg.seed = seed;
    if (out_dir) cfg.out = fs::absolute(*out_dir).lexically_normal().string();
    if (threads) cfg.threads = std::max(1u, *threads);
    if (imputations) {
      if (*imputations < 1) throw InputError("--imputations must be at least 1");
      cfg.imputations = *imputations;
    }
    if (sigma) cfg.sigma = sigma;
    if (lambda) cfg.penalty.lambda = lambda;
    if (sim_paths) cfg.simulate.paths = *sim_paths;
    if (duration) cfg.simulate.duration = *duration;
    fs::create_directories(cfg.out_dir());

    Session session(std::move(cfg), out);
    if (verb == "impute") return cmd_impute(session);
    if (verb == "discretize") return cmd_discretize(session);
    if (verb == "expand") return cmd_expand(session, run_missing);
    if (verb == "fit") return cmd_fit(session);
    if (verb == "cv") return cmd_cv(session);
    if (verb == "simulate") return cmd_simulate(session);
    err << "error: unknown command '" << verb << "'\n";
    return kInputError;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const json::exception& e) {
    err << "error: malformed JSON: " << e.what() << "\n";
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const NumericalError& e) {
    err << "error: numerical failure: " << e.what() << "\n";
    return kNotConverged;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
}

}  // namespace ctmcgrid::cli
