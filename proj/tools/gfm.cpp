// gfm: simulate, synthesize, compare and norm from the command line.
//
// Exit status: 0 ok, 1 configuration error, 2 numerical failure,
// 3 unstable result.

#include "gfm/config.hpp"
#include "gfm/errors.hpp"
#include "gfm/simkit.hpp"
#include "gfm/synthesis.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace gfm;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kConfig = 1, kNumerical = 2, kUnstable = 3 };

struct RunConfig {
  std::string params;
  std::vector<std::string> controllers;  // files
  std::vector<std::string> presets;      // names
  std::vector<std::string> scenarios;    // files or preset names
  std::string out = "out";
  std::uint64_t seed = 1;
  int max_iters = 2000;
  int restarts = 3;
  double dt = 0;  // 0 keeps the scenario value
  std::vector<std::string> argv;
};

struct Failure {
  int code;
  std::string message;
};

class Artifacts {
 public:
  explicit Artifacts(const std::string& dir) : dir_(dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Failure{kConfig, "cannot create output directory '" + dir + "': " + ec.message()};
  }

  /// One writer per artifact: the file is written once, whole.
  void write(const std::string& name, const std::string& content) {
    const auto path = fs::path(dir_) / name;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    f << content;
    if (!f) throw Failure{kNumerical, "cannot write '" + path.string() + "'"};
    files_.push_back(name);
  }

  const std::vector<std::string>& files() const { return files_; }

 private:
  std::string dir_;
  std::vector<std::string> files_;
};

std::string num(double v) { return config::number(v); }

plant::ConverterParams load_params(const RunConfig& rc) {
  return rc.params.empty() ? plant::reference_params() : config::load_params(rc.params);
}

simkit::Scenario load_scenario(const std::string& spec, double dt) {
  simkit::Scenario s;
  const auto names = simkit::scenario_names();
  if (std::find(names.begin(), names.end(), spec) != names.end()) {
    s = simkit::scenario_preset(spec);
  } else {
    s = config::load_scenario(spec);
  }
  if (dt > 0.0) s.dt = dt;
  s.validate();
  return s;
}

/// Controller files first, then presets, in command-line order.
std::vector<config::ControllerFile> controller_files(const RunConfig& rc) {
  std::vector<config::ControllerFile> out;
  for (const auto& path : rc.controllers) out.push_back(config::load_controller(path));
  for (const auto& name : rc.presets) {
    config::ControllerFile f;
    f.preset = name;
    const auto names = controllers::preset_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw ConfigError("unknown preset '" + name + "'");
    }
    out.push_back(f);
  }
  return out;
}

/// Name under which a controller's artifacts are stored.
std::string label(const config::ControllerFile& f, const controllers::PhiSpec& s) {
  return f.name.empty() ? s.name : f.name;
}

json manifest(const std::string& command, const RunConfig& rc) {
  json m;
  m["tool"] = "gfm";
  m["version"] = kVersion;
  m["command"] = command;
  m["argv"] = rc.argv;
  m["seed"] = rc.seed;
  return m;
}

void finish(Artifacts& out, json m) {
  m["files"] = out.files();
  out.write("manifest.json", m.dump(2) + "\n");
}

const char* kMetricHeader = "channel,available,initial,steady_state,step,peak,overshoot,settling_time";

std::string metric_row(const std::string& channel, const simkit::Metric& m) {
  return channel + "," + (m.available ? "1" : "0") + "," + num(m.initial) + "," +
         num(m.steady_state) + "," + num(m.step) + "," + num(m.peak) + "," + num(m.overshoot) +
         "," + num(m.settling_time);
}

std::string csv_text(const simkit::SimResult& r) {
  std::ostringstream os;
  simkit::write_csv(r, os);
  return os.str();
}

// --- simulate -----------------------------------------------------------------------------

int cmd_simulate(const RunConfig& rc) {
  const auto p = load_params(rc);
  auto files = controller_files(rc);
  if (files.empty()) {
    config::ControllerFile f;
    f.preset = "mimo-gfm";
    files.push_back(f);
  }
  if (files.size() != 1) throw ConfigError("simulate takes one controller");
  const auto spec = files[0].build(p);
  const auto sc = load_scenario(rc.scenarios.empty() ? "pref_step" : rc.scenarios.front(), rc.dt);

  Artifacts out(rc.out);
  const auto r = simkit::simulate(p, spec, sc);
  out.write("timeseries.csv", csv_text(r));
  std::string metrics = std::string(kMetricHeader) + "\n";
  for (size_t c = 0; c < plant::kOutputNames.size(); ++c) {
    metrics += metric_row(plant::kOutputNames[c], r.metrics[c]) + "\n";
  }
  out.write("metrics.csv", metrics);

  // Echo every input so the directory alone reproduces the run.
  config::ControllerFile echo = files[0];
  out.write("params.cfg", config::to_text(p, config::write_params));
  out.write("controller.cfg", config::to_text(echo, config::write_controller));
  out.write("scenario.cfg", config::to_text(sc, config::write_scenario));

  auto m = manifest("simulate", rc);
  m["controller"] = spec.name;
  m["scenario"] = sc.name;
  m["dt"] = sc.dt;
  m["diverged"] = r.diverged;
  m["warnings"] = r.warnings;
  m["rerun"] = "gfm simulate --params params.cfg --controller controller.cfg --scenario scenario.cfg";
  if (r.diverged) m["reason"] = r.reason;
  finish(out, m);

  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  const auto& mp = r.metrics[1];
  std::cout << spec.name << " on " << sc.name << ": p steady " << num(mp.steady_state)
            << (mp.available ? "" : " (not settled)") << ", overshoot " << num(mp.overshoot)
            << ", settling " << num(mp.settling_time) << " s\n";
  if (r.diverged) throw Failure{kNumerical, "simulation " + r.reason};
  return kOk;
}

// --- synthesize ---------------------------------------------------------------------------

int cmd_synthesize(const RunConfig& rc) {
  const auto p = load_params(rc);
  auto k0 = controllers::GainVector::initial();
  const auto files = controller_files(rc);
  if (files.size() > 1) throw ConfigError("synthesize takes at most one starting controller");
  if (!files.empty()) {
    const auto& f = files[0];
    if (f.preset != "mimo-gfm") throw ConfigError("the starting controller must be a mimo-gfm preset");
    auto t = controllers::default_tuning("mimo-gfm", p);
    for (const auto& [key, v] : f.tuning) t[key] = v;
    std::array<double, 11> a{};
    for (size_t i = 0; i < a.size(); ++i) a[i] = t.at(controllers::GainVector::names()[i]);
    k0 = controllers::GainVector::from_array(a);
  }
  try {
    k0.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("initial gains: ") + e.what());
  }
  if (rc.max_iters < 0 || rc.restarts < 0) throw ConfigError("--max-iters and --restarts must be >= 0");

  synthesis::SynthesisOptions opt;
  opt.max_iters = rc.max_iters;
  opt.restarts = rc.restarts;
  opt.seed = rc.seed;
  const auto prob = synthesis::make_problem(p);

  Artifacts out(rc.out);
  synthesis::SynthesisResult res;
  try {
    res = synthesis::synthesize(prob, k0, opt);
  } catch (const StabilityError& e) {
    auto m = manifest("synthesize", rc);
    m["stable"] = false;
    m["error"] = e.what();
    finish(out, m);
    throw Failure{kUnstable, e.what()};
  }

  json report;
  json gains, start;
  const auto a = res.K_opt.to_array();
  const auto a0 = k0.to_array();
  for (size_t i = 0; i < a.size(); ++i) {
    gains[controllers::GainVector::names()[i]] = a[i];
    start[controllers::GainVector::names()[i]] = a0[i];
  }
  report["gains"] = gains;
  report["initial_gains"] = start;
  report["objective"] = res.gamma;
  report["initial_objective"] = res.initial_objective;
  report["stable"] = res.stable;
  report["max_real"] = res.evaluation.max_real;
  json norms;
  for (size_t i = 0; i < 6; ++i) norms[synthesis::channels()[i].name] = res.evaluation.channel_norms[i];
  report["channel_norms"] = norms;
  json eig = json::array();
  for (const auto& e : linsys::eigenvalues(synthesis::closed_loop(prob, res.K_opt).A()).eigenvalues) {
    eig.push_back({e.real(), e.imag()});
  }
  report["eigenvalues"] = eig;
  report["evaluations"] = res.evaluations;
  report["options"] = {{"max_iters", opt.max_iters}, {"restarts", opt.restarts},
                       {"tol", opt.tol}, {"seed", opt.seed}};
  out.write("report.json", report.dump(2) + "\n");

  std::string hist = "start,iteration,objective,margin\n";
  for (const auto& h : res.history) {
    hist += std::to_string(h.start) + "," + std::to_string(h.iteration) + "," + num(h.objective) +
            "," + num(h.margin) + "\n";
  }
  out.write("history.csv", hist);
  out.write("controller.cfg", config::to_text(config::mimo_file(res.K_opt), config::write_controller));
  out.write("params.cfg", config::to_text(p, config::write_params));

  auto m = manifest("synthesize", rc);
  m["max_iters"] = opt.max_iters;
  m["restarts"] = opt.restarts;
  m["rerun"] = "gfm synthesize --params params.cfg --seed " + std::to_string(rc.seed) +
               " --max-iters " + std::to_string(rc.max_iters) + " --restarts " +
               std::to_string(rc.restarts) + (files.empty() ? "" : " --controller <start>");
  finish(out, m);

  std::cout << "objective " << num(res.initial_objective) << " -> " << num(res.gamma)
            << (res.stable ? " (stable)" : " (unstable)") << "\n";
  return kOk;
}

// --- compare ------------------------------------------------------------------------------

int cmd_compare(const RunConfig& rc) {
  const auto p = load_params(rc);
  const auto files = controller_files(rc);
  if (files.empty()) throw ConfigError("compare needs at least one --controller or --preset");
  std::vector<controllers::PhiSpec> specs;
  std::vector<std::string> names;
  for (const auto& f : files) {
    specs.push_back(f.build(p));
    names.push_back(label(f, specs.back()));
  }
  std::vector<std::string> scen = rc.scenarios;
  if (scen.empty()) scen = simkit::scenario_names();

  Artifacts out(rc.out);
  std::string table = "controller,scenario,status";
  for (const auto& c : plant::kOutputNames) {
    for (const char* f : {"available", "steady_state", "overshoot", "settling_time", "peak"}) {
      table += "," + c + "_" + f;
    }
  }
  // Deviation of p from the first controller's trajectory, absolute and
  // as a fraction of that controller's p step.
  table += ",p_dev,p_dev_frac\n";

  int ok = 0, total = 0;
  for (const auto& sname : scen) {
    const auto sc = load_scenario(sname, rc.dt);
    out.write("scenario_" + sc.name + ".cfg", config::to_text(sc, config::write_scenario));
    const auto rows = simkit::compare(p, specs, sc);
    std::vector<double> first_p;
    double first_step = 0.0;
    for (size_t i = 0; i < rows.size(); ++i) {
      ++total;
      const auto& row = rows[i];
      std::string status = row.error.empty() ? (row.result.diverged ? "diverged" : "ok") : "error";
      if (status == "ok") ++ok;
      table += names[i] + "," + sc.name + "," + status;
      for (size_t c = 0; c < 5; ++c) {
        const auto& m = row.result.metrics[c];
        table += std::string(",") + (m.available ? "1" : "0") + "," + num(m.steady_state) + "," +
                 num(m.overshoot) + "," + num(m.settling_time) + "," + num(m.peak);
      }
      double dev = NAN, frac = NAN;
      if (status == "ok") {
        const auto pv = simkit::channel(row.result, "p");
        if (first_p.empty() && i == 0) {
          first_p = pv;
          first_step = std::abs(row.result.metrics[1].step);
        }
        if (!first_p.empty() && pv.size() == first_p.size()) {
          dev = 0.0;
          for (size_t k = 0; k < pv.size(); ++k) dev = std::max(dev, std::abs(pv[k] - first_p[k]));
          frac = first_step > 0.0 ? dev / first_step : NAN;
        }
        out.write(sc.name + "/" + names[i] + ".csv", csv_text(row.result));
      }
      table += "," + num(dev) + "," + num(frac) + "\n";
      if (!row.error.empty()) std::cerr << names[i] << " on " << sc.name << ": " << row.error << "\n";
      if (row.result.diverged) std::cerr << names[i] << " on " << sc.name << ": " << row.result.reason << "\n";
    }
  }
  out.write("comparison.csv", table);
  out.write("params.cfg", config::to_text(p, config::write_params));
  for (size_t i = 0; i < files.size(); ++i) {
    auto f = files[i];
    if (f.name.empty()) f.name = names[i];
    out.write("controller_" + names[i] + ".cfg", config::to_text(f, config::write_controller));
  }
  auto m = manifest("compare", rc);
  m["controllers"] = names;
  m["scenarios"] = scen;
  m["rows"] = total;
  m["ok"] = ok;
  finish(out, m);

  std::cout << ok << " of " << total << " runs completed\n";
  if (ok == 0) throw Failure{kNumerical, "every comparison run failed"};
  return kOk;
}

// --- norm ---------------------------------------------------------------------------------

int cmd_norm(const RunConfig& rc) {
  const auto p = load_params(rc);
  auto files = controller_files(rc);
  if (files.empty()) {
    config::ControllerFile f;
    f.preset = "mimo-gfm";
    files.push_back(f);
  }
  if (files.size() != 1) throw ConfigError("norm takes one controller");
  const auto spec = files[0].build(p);
  const auto prob = synthesis::make_problem(p);
  const auto cl = synthesis::closed_loop(prob.plant_lin, controllers::realize_phi(spec), p.Dq);
  const auto spectrum = linsys::eigenvalues(cl.A());

  Artifacts out(rc.out);
  json report;
  report["controller"] = spec.name;
  json eig = json::array();
  for (const auto& e : spectrum.eigenvalues) eig.push_back({e.real(), e.imag()});
  report["eigenvalues"] = eig;
  report["max_real"] = spectrum.max_real();
  const bool stable = spectrum.max_real() < 0.0;
  report["stable"] = stable;

  std::cout << "closed-loop eigenvalues (max real part " << num(spectrum.max_real()) << "):\n";
  for (const auto& e : spectrum.eigenvalues) std::cout << "  " << num(e.real()) << " " << num(e.imag()) << "j\n";

  if (!stable) {
    out.write("norms.json", report.dump(2) + "\n");
    finish(out, manifest("norm", rc));
    throw Failure{kUnstable, "closed loop is unstable"};
  }

  const auto raw = synthesis::channel_systems(cl);
  const auto weighted = synthesis::weighted_channels(prob.weights, cl);
  json norms;
  double worst = 0.0;
  std::cout << "channel  unweighted  weighted\n";
  for (size_t i = 0; i < 6; ++i) {
    const double u = linsys::hinf_norm(raw[i], prob.norm_tol);
    const double w = linsys::hinf_norm(weighted[i], prob.norm_tol);
    worst = std::max(worst, w);
    const auto& name = synthesis::channels()[i].name;
    norms[name] = {{"unweighted", u}, {"weighted", w}};
    std::cout << name << "  " << num(u) << "  " << num(w) << "\n";
  }
  report["channels"] = norms;
  report["objective"] = worst;
  out.write("norms.json", report.dump(2) + "\n");

  // Magnitudes on a log grid over [1e-4, 1e6] rad/s.
  std::string csv = "omega";
  for (const auto& c : synthesis::channels()) csv += ",|" + c.name + "|";
  for (const auto& c : synthesis::channels()) csv += ",|W" + c.name.substr(1) + c.name + "|";
  csv += "\n";
  std::vector<linsys::FrequencyEvaluator> ev;
  for (const auto& s : raw) ev.emplace_back(s);
  for (const auto& s : weighted) ev.emplace_back(s);
  constexpr int kPerDecade = 50;
  for (int i = 0; i <= 10 * kPerDecade; ++i) {
    const double w = std::pow(10.0, -4.0 + static_cast<double>(i) / kPerDecade);
    csv += num(w);
    for (const auto& e : ev) csv += "," + num(e.gain(w));
    csv += "\n";
  }
  out.write("freq_response.csv", csv);
  out.write("params.cfg", config::to_text(p, config::write_params));
  out.write("controller.cfg", config::to_text(files[0], config::write_controller));
  finish(out, manifest("norm", rc));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grid-forming converter control design toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  RunConfig rc;
  rc.argv.assign(argv, argv + argc);

  auto common = [&](CLI::App* sub) {
    sub->add_option("--params", rc.params, "parameter file (default: reference lab values)");
    sub->add_option("--controller", rc.controllers, "controller file")->allow_extra_args(false);
    sub->add_option("--preset", rc.presets, "controller preset name")->allow_extra_args(false);
    sub->add_option("--out", rc.out, "output directory");
    sub->add_option("--seed", rc.seed, "random seed");
  };
  auto* sim = app.add_subcommand("simulate", "nonlinear time-domain simulation");
  common(sim);
  sim->add_option("--scenario", rc.scenarios, "scenario file or preset")->allow_extra_args(false);
  sim->add_option("--dt", rc.dt, "integration step, s");

  auto* syn = app.add_subcommand("synthesize", "tune the MIMO-GFM gains");
  common(syn);
  syn->add_option("--max-iters", rc.max_iters, "Nelder-Mead iterations per start");
  syn->add_option("--restarts", rc.restarts, "extra perturbed starts");

  auto* cmp = app.add_subcommand("compare", "simulate several controllers side by side");
  common(cmp);
  cmp->add_option("--scenario", rc.scenarios, "scenario files or presets (default: all presets)")
      ->allow_extra_args(false);
  cmp->add_option("--dt", rc.dt, "integration step, s");

  auto* nrm = app.add_subcommand("norm", "weighted channel norms and eigenvalues");
  common(nrm);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*sim) return cmd_simulate(rc);
    if (*syn) return cmd_synthesize(rc);
    if (*cmp) return cmd_compare(rc);
    if (*nrm) return cmd_norm(rc);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DomainError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const StabilityError& e) {
    std::cerr << "unstable: " << e.what() << "\n";
    return kUnstable;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  }
  return kConfig;
}
