#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gfm/config.hpp"
#include "gfm/errors.hpp"
#include "gfm/synthesis.hpp"

#include <sstream>

using namespace gfm;
using namespace gfm::config;

namespace {

Document doc(const std::string& text) {
  std::istringstream in(text);
  return parse(in, "test");
}

void same_params(const plant::ConverterParams& a, const plant::ConverterParams& b) {
  CHECK(a.Lf == b.Lf);
  CHECK(a.Cf == b.Cf);
  CHECK(a.Lg == b.Lg);
  CHECK(a.Rg == b.Rg);
  CHECK(a.Rf == b.Rf);
  CHECK(a.Cdc == b.Cdc);
  CHECK(a.Dp == b.Dp);
  CHECK(a.Dq == b.Dq);
  CHECK(a.Vg == b.Vg);
  CHECK(a.omega_b == b.omega_b);
  CHECK(a.include_rf == b.include_rf);
  CHECK(a.base.Sn == b.base.Sn);
  CHECK(a.base.Vdc_base == b.base.Vdc_base);
}

}  // namespace

TEST_CASE("line syntax") {
  const auto d = doc("# header\n\n  Lf = 2e-3 si  # trailing\nname = my ctrl\nx=1 pu\n");
  REQUIRE(d.entries.size() == 3);
  CHECK(d.entries[0].key == "Lf");
  CHECK(d.entries[0].value == "2e-3");
  CHECK(d.entries[0].unit == "si");
  CHECK(d.entries[0].line == 3);
  CHECK(d.entries[1].value == "my ctrl");
  CHECK(d.entries[1].unit.empty());
  CHECK(d.entries[2].unit == "pu");
  CHECK_THROWS_AS(doc("novalue\n"), ConfigError);
  CHECK_THROWS_AS(doc("k = \n"), ConfigError);
  CHECK_THROWS_AS(doc("k = pu\n"), ConfigError);
  CHECK_THROWS_AS(load("/nonexistent/params.cfg"), ConfigError);
}

TEST_CASE("parameter files") {
  // Empty file keeps the reference values.
  same_params(read_params(doc("")), plant::reference_params());

  // SI and per-unit spellings of the same inductance agree.
  const auto ref = plant::reference_params();
  const auto a = read_params(doc("Lf = 0.002 si\n"));
  const auto b = read_params(doc("Lf = " + number(ref.Lf) + " pu\n"));
  CHECK(a.Lf == doctest::Approx(b.Lf).epsilon(1e-15));
  // Lf = omega_n L / Zb with Zb = 380^2 / 4000
  CHECK(read_params(doc("Lf = 0.004 si\n")).Lf == doctest::Approx(100.0 * M_PI * 0.004 / 36.1).epsilon(1e-12));
  CHECK(read_params(doc("include_rf = false\n")).include_rf == false);

  CHECK_THROWS_AS(read_params(doc("Lf = 2e-3\n")), ConfigError);
  CHECK_THROWS_AS(read_params(doc("Dp = 0.01 si\n")), ConfigError);
  CHECK_THROWS_AS(read_params(doc("Sn = 1 pu\n")), ConfigError);
  CHECK_THROWS_AS(read_params(doc("Lx = 1 pu\n")), ConfigError);
  CHECK_THROWS_AS(read_params(doc("Lf = abc si\n")), ConfigError);
  CHECK_THROWS_AS(read_params(doc("Lf = 1 si\nLf = 2 si\n")), ConfigError);
  CHECK_THROWS_AS(read_params(doc("Lf = -1 si\n")), ConfigError);
  CHECK_THROWS_AS(read_params(doc("include_rf = 1\n")), ConfigError);

  auto p = ref;
  p.Dp = 0.02;
  p.Rg = 0.1234567890123;
  p.include_rf = false;
  std::ostringstream os;
  write_params(p, os);
  same_params(read_params(doc(os.str())), p);
}

TEST_CASE("element text") {
  const auto p = plant::reference_params();
  for (const auto& name : controllers::preset_names()) {
    const auto s = controllers::preset(name, p);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 5; ++j) {
        const auto& e = s.at(i, j);
        const auto back = parse_element(format_element(e));
        CHECK(format_element(back) == format_element(e));
        for (double w : {0.3, 7.0, 900.0}) {
          const linsys::Complex jw(0.0, w);
          CHECK(back.transfer()(jw) == e.transfer()(jw));
          CHECK(back.feedback_transfer()(jw) == e.feedback_transfer()(jw));
        }
      }
    }
  }
  CHECK(format_element(parse_element("0")) == "0");
  CHECK(format_element(parse_element("P(2)")) == "P(2)");
  CHECK(parse_element("P(0.01) | IF(-0.01, 0.12) * D(1, 0.12)").has_feedback_only());
  CHECK_THROWS_AS(parse_element("Q(1)"), ConfigError);
  CHECK_THROWS_AS(parse_element("PI(1)"), ConfigError);
  CHECK_THROWS_AS(parse_element("P(1) P(2)"), ConfigError);
  CHECK_THROWS_AS(parse_element("P(x)"), ConfigError);
}

TEST_CASE("controller files") {
  const auto p = plant::reference_params();
  const auto c = read_controller(doc("preset = vsg-2\nkq = 2.5 pu\n"));
  CHECK(c.preset == "vsg-2");
  const auto s = c.build(p);
  auto t = controllers::default_tuning("vsg-2", p);
  t["kq"] = 2.5;
  const auto expect = controllers::preset("vsg-2", p, t);
  CHECK(format_element(s.at(2, 3)) == format_element(expect.at(2, 3)));

  CHECK_THROWS_AS(read_controller(doc("preset = nope\n")), ConfigError);
  CHECK_THROWS_AS(read_controller(doc("kq = 1 pu\n")), ConfigError);
  CHECK_THROWS_AS(read_controller(doc("preset = vsg-2\nkq = 1\n")), ConfigError);
  CHECK_THROWS_AS(read_controller(doc("preset = vsg-2\nbogus = 1 pu\n")).build(p), DomainError);
  // A derivative on the wu self-loop makes the loop ill-posed.
  CHECK_THROWS_AS(read_controller(doc("Dp = 0.01 pu\nDq = 0.05 pu\nphi.wu.wu = P(1) pu\n")), ConfigError);
  CHECK_THROWS_AS(read_controller(doc("Dp = 0.01 pu\nDq = 0.05 pu\nphi.xx.p = P(1) pu\n")), ConfigError);

  // Explicit grids round-trip through text for every preset.
  for (const auto& name : controllers::preset_names()) {
    ControllerFile f;
    f.name = name;
    f.grid = controllers::preset(name, p);
    std::ostringstream a, b;
    write_controller(f, a);
    const auto back = read_controller(doc(a.str()));
    REQUIRE(back.grid);
    write_controller(back, b);
    CHECK(a.str() == b.str());
    const auto ka = controllers::realize_phi(*f.grid);
    const auto kb = controllers::realize_phi(back.build(p));
    CHECK(ka.A() == kb.A());
    CHECK(ka.D() == kb.D());
  }

  // Synthesized gains written as a preset file rebuild the same matrix.
  const auto k = controllers::GainVector::reference_optimized();
  std::ostringstream os;
  write_controller(mimo_file(k), os);
  const auto back = read_controller(doc(os.str()));
  CHECK(back.tuning.size() == 11);
  const auto ka = controllers::realize_phi(controllers::gains_to_phi(k, p));
  const auto kb = controllers::realize_phi(back.build(p));
  CHECK(ka.C() == kb.C());
  CHECK(ka.D() == kb.D());
}

TEST_CASE("scenario files") {
  auto s = read_scenario(doc("preset = wg_step\n"));
  CHECK(s.name == "wg_step");
  CHECK(s.events.size() == 1);

  s = read_scenario(doc("preset = pref_step\nduration = 2 si\nevent = 0.5 Qref 0.1 pu\nevent = 0.7 wg 0.999 pu\n"));
  CHECK(s.duration == 2.0);
  REQUIRE(s.events.size() == 2);
  CHECK(s.events[0].quantity == simkit::Quantity::Qref);
  CHECK(s.events[1].quantity == simkit::Quantity::omega_g);

  s = read_scenario(doc("omega_g = 0.999 pu\n"));
  CHECK(s.disturbance.omega_g == 0.999);
  CHECK(s.setpoints.yref.omega_g_ref == 0.999);

  CHECK_THROWS_AS(read_scenario(doc("dt = 1e-5 pu\n")), ConfigError);
  CHECK_THROWS_AS(read_scenario(doc("dt = 0 si\n")), ConfigError);
  CHECK_THROWS_AS(read_scenario(doc("event = 0.5 Pref pu\n")), ConfigError);
  CHECK_THROWS_AS(read_scenario(doc("event = 0.5 Foo 1 pu\n")), ConfigError);
  CHECK_THROWS_AS(read_scenario(doc("duration = 1 si\nevent = 2 Pref 1 pu\n")), ConfigError);
  CHECK_THROWS_AS(read_scenario(doc("preset = ramp\n")), ConfigError);

  auto w = simkit::pref_step();
  w.dt = 1e-5;
  w.events.push_back({2.5, simkit::Quantity::Vg, 0.95});
  std::ostringstream a, b;
  write_scenario(w, a);
  const auto back = read_scenario(doc(a.str()));
  write_scenario(back, b);
  CHECK(a.str() == b.str());
  CHECK(back.dt == w.dt);
  CHECK(back.events.size() == 2);
  CHECK(back.events[1].value == 0.95);
}

TEST_CASE("shipped example files load") {
  const std::string dir = GFM_CONFIG_DIR;
  const auto p = load_params(dir + "/reference_params.cfg");
  same_params(p, plant::reference_params());
  const auto prob = synthesis::make_problem(p);
  for (const auto* f : {"vsg2_slow_q.cfg", "droop5_grid.cfg"}) {
    CAPTURE(f);
    const auto spec = load_controller(dir + "/" + f).build(p);
    const auto cl = synthesis::closed_loop(prob.plant_lin, controllers::realize_phi(spec), p.Dq);
    CHECK(linsys::is_hurwitz(cl.A(), 0.0));
  }
  CHECK(load_scenario(dir + "/pref_step_long.cfg").duration == 8.0);
  CHECK(load_scenario(dir + "/voltage_dip.cfg").events.size() == 2);

  // The written-out droop-5 grid is the preset.
  const auto grid = controllers::realize_phi(load_controller(dir + "/droop5_grid.cfg").build(p));
  const auto ref = controllers::realize_phi(controllers::preset("droop-5", p));
  for (double w : {0.1, 3.0, 50.0}) {
    CHECK((linsys::freq_response(grid, w) - linsys::freq_response(ref, w)).norm() <= 1e-6);
  }
}
