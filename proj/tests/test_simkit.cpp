#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gfm/errors.hpp"
#include "gfm/simkit.hpp"
#include "gfm/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace gfm;
using namespace gfm::simkit;

namespace {

const plant::ConverterParams& params() {
  static const auto p = plant::reference_params();
  return p;
}

controllers::PhiSpec preset(const std::string& name) { return controllers::preset(name, params()); }

// Samples of an analytic response on a uniform grid.
template <typename F>
void sample(F f, double t_end, double dt, std::vector<double>& t, std::vector<double>& v) {
  t.clear();
  v.clear();
  for (long i = 0; i * dt <= t_end + 1e-12; ++i) {
    t.push_back(i * dt);
    v.push_back(f(i * dt));
  }
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("metrics on synthetic series") {
  std::vector<double> t, v;
  sample([](double s) { return 2.0 * (1.0 - std::exp(-s / 0.1)); }, 5.0, 1e-3, t, v);
  auto m = series_metrics(t, v);
  CHECK(m.available);
  CHECK(std::abs(m.overshoot) <= 1e-12);
  CHECK(m.steady_state == doctest::Approx(2.0).epsilon(1e-9));
  // 2 % band: exp(-t/tau) = 0.02
  CHECK(m.settling_time == doctest::Approx(0.1 * std::log(50.0)).epsilon(1e-3));

  const double zeta = 0.1, wn = 10.0;
  const double wd = wn * std::sqrt(1.0 - zeta * zeta);
  const double phi = std::acos(zeta);
  sample([&](double s) {
    return 1.0 - std::exp(-zeta * wn * s) * std::sin(wd * s + phi) / std::sqrt(1.0 - zeta * zeta);
  }, 20.0, 1e-4, t, v);
  m = series_metrics(t, v);
  CHECK(m.available);
  const double expected = std::exp(-M_PI * zeta / std::sqrt(1.0 - zeta * zeta));
  CHECK(m.overshoot == doctest::Approx(expected).epsilon(0.01));
  CHECK(std::abs(expected - 0.729) < 1e-3);
  CHECK(m.peak == doctest::Approx(1.0 + expected).epsilon(1e-3));

  // Downward steps report overshoot in the step direction.
  for (auto& x : v) x = -x;
  m = series_metrics(t, v);
  CHECK(m.overshoot == doctest::Approx(expected).epsilon(0.01));
  CHECK(m.step < 0.0);

  sample([](double) { return 0.7; }, 1.0, 1e-3, t, v);
  m = series_metrics(t, v);
  CHECK(m.available);
  CHECK(m.settling_time == 0.0);
  CHECK(m.overshoot == 0.0);

  // A ramp never settles.
  sample([](double s) { return s; }, 1.0, 1e-3, t, v);
  CHECK_FALSE(series_metrics(t, v).available);

  // Window start shifts the time origin.
  sample([](double s) { return s < 1.0 ? 0.0 : 1.0 - std::exp(-(s - 1.0) / 0.1); }, 6.0, 1e-3, t, v);
  m = series_metrics(t, v, {1.0, -1.0});
  CHECK(m.initial == 0.0);
  CHECK(m.settling_time == doctest::Approx(0.1 * std::log(50.0)).epsilon(1e-3));
}

TEST_CASE("scenario presets and validation") {
  const auto a = pref_step();
  CHECK(a.duration == 3.0);
  REQUIRE(a.events.size() == 1);
  CHECK(a.events[0].time == 1.0);
  CHECK(a.events[0].value == 1.0);
  CHECK(a.setpoints.yref.Pref == 0.5);
  const auto b = scenario_preset("wg_step");
  CHECK(b.duration == 5.0);
  CHECK(b.events[0].quantity == Quantity::omega_g);
  CHECK(b.events[0].value == 0.998);
  CHECK_THROWS_AS(scenario_preset("nope"), DomainError);
  CHECK(parse_quantity("wg") == Quantity::omega_g);
  CHECK(parse_quantity(to_string(Quantity::Vdcref)) == Quantity::Vdcref);

  Scenario s;
  s.dt = 0.0;
  CHECK_THROWS_AS(s.validate(), DomainError);
  s = {};
  s.events = {{0.5, Quantity::Pref, 1.0}, {0.2, Quantity::Pref, 0.5}};
  CHECK_THROWS_AS(s.validate(), DomainError);
  s.events = {{1.5, Quantity::Pref, 1.0}};
  CHECK_THROWS_AS(s.validate(), DomainError);
}

TEST_CASE("zero-event run stays at the equilibrium") {
  Scenario s;
  s.duration = 2.0;
  const auto r = simulate(params(), preset("mimo-gfm"), s);
  REQUIRE_FALSE(r.diverged);
  CHECK(r.t.size() == 20001);
  for (const auto* name : {"vdc", "p", "wu", "q", "V", "iu", "Eu"}) {
    const auto v = channel(r, name);
    for (double x : v) CHECK(std::abs(x - v.front()) <= 1e-6);
  }
  CHECK(r.y.front().p == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("steady state after a power step is set by the reference") {
  auto s = pref_step();
  s.duration = 8.0;  // the slowest closed-loop mode needs a few seconds
  const auto r = simulate(params(), preset("mimo-gfm"), s);
  REQUIRE_FALSE(r.diverged);
  const auto& m = r.metrics[1];
  CHECK(m.available);
  CHECK(std::abs(m.steady_state - 1.0) <= 1e-3);
  CHECK(std::abs(r.y.back().omega_u - 1.0) <= 1e-6);
}

TEST_CASE("grid frequency step moves p along the droop line") {
  const double expected = 0.5 + (1.0 - 0.998) / params().Dp;
  for (const auto* name : {"mimo-gfm", "vsg-2", "droop-5"}) {
    const auto r = simulate(params(), preset(name), wg_step());
    REQUIRE_FALSE(r.diverged);
    CHECK(r.metrics[1].available);
    CHECK(std::abs(r.metrics[1].steady_state - expected) <= 0.005 * expected);
  }
}

TEST_CASE("frequency synchronizes after a grid event") {
  for (const auto* name : {"droop-5", "vsg-2", "matching-1", "mimo-gfm"}) {
    const auto r = simulate(params(), preset(name), wg_step());
    REQUIRE_FALSE(r.diverged);
    const auto m = metrics(r, "wu", {1.0, -1.0});
    CAPTURE(name);
    CHECK(m.available);
    CHECK(std::isfinite(m.settling_time));
    CHECK(std::abs(r.y.back().omega_u - 0.998) <= 0.02 * 0.002);
  }
}

TEST_CASE("logged outputs match the state at every sample") {
  const auto r = simulate(params(), preset("vsg-2"), pref_step());
  REQUIRE_FALSE(r.diverged);
  REQUIRE(r.t.size() == r.x.size());
  REQUIRE(r.t.size() == r.y.size());
  REQUIRE(r.t.size() == r.u.size());
  for (size_t i = 0; i < r.t.size(); ++i) {
    const auto y = plant::g_outputs(r.x[i], r.u[i]);
    CHECK(y.p == r.y[i].p);
    CHECK(y.q == r.y[i].q);
    CHECK(y.V == r.y[i].V);
    CHECK(y.vdc == r.y[i].vdc);
    CHECK(std::abs(r.x[i].delta) <= M_PI);
  }
}

TEST_CASE("halving the step barely changes the outputs") {
  for (const auto& sc : {pref_step(), wg_step()}) {
    auto half = sc;
    half.dt = sc.dt / 2.0;
    const auto a = simulate(params(), preset("mimo-gfm"), sc);
    const auto b = simulate(params(), preset("mimo-gfm"), half);
    REQUIRE(a.t.size() == b.t.size());
    for (const auto* name : {"vdc", "p", "wu", "q", "V"}) {
      const auto va = channel(a, name);
      const auto vb = channel(b, name);
      double scale = 0.0;
      for (double x : va) scale = std::max(scale, std::abs(x));
      CAPTURE(name);
      CHECK(max_abs_diff(va, vb) <= 1e-3 * scale);
    }
    for (size_t c = 0; c < 5; ++c) {
      if (!a.metrics[c].available) continue;
      CHECK(b.metrics[c].steady_state == doctest::Approx(a.metrics[c].steady_state).epsilon(1e-3));
    }
  }
}

TEST_CASE("small steps follow the linearized loop") {
  const auto prob = synthesis::make_problem(params());
  const auto k = controllers::GainVector::reference_optimized();
  const auto cl = synthesis::closed_loop(prob, k);
  const double step = 1e-4, t_event = 0.1;

  Scenario s;
  s.duration = 1.0;
  s.events = {{t_event, Quantity::Pref, 0.5 + step}};
  const auto r = simulate(params(), controllers::gains_to_phi(k, params()), s);
  REQUIRE_FALSE(r.diverged);

  // Same RK4 on the linear model, input Pref only.
  const auto& A = cl.A();
  const linsys::Vector b = cl.B().col(0);
  const linsys::Vector c = cl.C().row(1).transpose();
  const double d = cl.D()(1, 0);
  linsys::Vector x = linsys::Vector::Zero(A.rows());
  const double h = s.dt;
  const long every = std::llround(s.record_dt / h);
  const long steps = std::llround(s.duration / h);
  const long i_event = std::llround(t_event / h);
  const double p0 = r.y.front().p;
  double worst = 0.0;
  size_t sample_idx = 0;
  for (long i = 0; i <= steps; ++i) {
    const double u = i >= i_event ? step : 0.0;
    if (i % every == 0) {
      const double lin = c.dot(x) + d * u;
      worst = std::max(worst, std::abs((r.y[sample_idx].p - p0) - lin));
      ++sample_idx;
    }
    const linsys::Vector k1 = A * x + b * u;
    const linsys::Vector k2 = A * (x + 0.5 * h * k1) + b * u;
    const linsys::Vector k3 = A * (x + 0.5 * h * k2) + b * u;
    const linsys::Vector k4 = A * (x + h * k3) + b * u;
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  CHECK(sample_idx == r.t.size());
  CHECK(worst <= 0.01 * step);
}

TEST_CASE("divergence truncates instead of throwing") {
  // droop-1 destabilizes the reference plant.
  const auto r = simulate(params(), preset("droop-1"), pref_step());
  CHECK(r.diverged);
  CHECK(r.truncation > 0);
  CHECK_FALSE(r.reason.empty());
  CHECK(r.t.size() == r.y.size());
  CHECK(r.t.back() < 3.0);
  for (const auto& y : r.y) CHECK(std::isfinite(y.p));
}

TEST_CASE("off-grid events are snapped with a warning") {
  Scenario s;
  s.duration = 0.01;
  s.events = {{0.005 + 3e-6, Quantity::Pref, 0.6}};
  const auto r = simulate(params(), preset("vsg-2"), s);
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("moved") != std::string::npos);
  s.events = {{0.005, Quantity::Pref, 0.6}};
  CHECK(simulate(params(), preset("vsg-2"), s).warnings.empty());
}

TEST_CASE("compare runs every spec on the same scenario") {
  const auto rows = compare(params(), {preset("droop-5"), preset("vsg-2"), preset("droop-1")}, wg_step());
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].name == "droop-5");
  CHECK(rows[2].result.diverged);
  CHECK(rows[0].result.t == rows[1].result.t);

  // droop-5 and VSG-2 coincide on a grid frequency step ...
  const auto a = channel(rows[0].result, "p");
  const auto b = channel(rows[1].result, "p");
  const double wg_dev = max_abs_diff(a, b);
  CHECK(wg_dev <= 0.005 * 0.2);

  // ... but not on a power step, where Pref enters differently.
  const auto pr = compare(params(), {preset("droop-5"), preset("vsg-2")}, pref_step());
  const double pref_dev = max_abs_diff(channel(pr[0].result, "p"), channel(pr[1].result, "p"));
  CHECK(pref_dev > 5.0 * 0.005 * 0.2);

  // Identical to running them one at a time.
  const auto solo = simulate(params(), preset("vsg-2"), wg_step());
  CHECK(channel(solo, "p") == b);
}

TEST_CASE("csv export") {
  Scenario s;
  s.duration = 0.05;
  s.events = {{0.01, Quantity::Pref, 0.8}};
  const auto r = simulate(params(), preset("mimo-gfm"), s);
  std::ostringstream a, b;
  write_csv(r, a);
  write_csv(r, b);
  CHECK(a.str() == b.str());

  std::istringstream first(a.str());
  std::string header;
  std::getline(first, header);
  CHECK(header == kCsvHeader);
  CHECK(std::count(header.begin(), header.end(), ',') == 14);

  std::istringstream in(a.str());
  const auto rows = read_csv(in);
  REQUIRE(rows.size() == r.t.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i][0] == r.t[i]);
    CHECK(rows[i][7] == r.x[i].delta);
    CHECK(rows[i][9] == r.y[i].p);
    CHECK(rows[i][14] == r.u[i].Eu);
  }
  CHECK_THROWS_AS(export_csv(r, "/nonexistent-dir/x.csv"), Error);
}

TEST_CASE("identical runs are byte-identical") {
  std::ostringstream a, b;
  write_csv(simulate(params(), preset("vsg-2"), pref_step()), a);
  write_csv(simulate(params(), preset("vsg-2"), pref_step()), b);
  CHECK(a.str() == b.str());
}
