#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gfm/controllers.hpp"
#include "gfm/errors.hpp"

#include <cmath>
#include <random>

using namespace gfm;
using namespace gfm::controllers;
using linsys::CMatrix;
using linsys::Complex;

namespace {

Complex eval(const TransferFunction& tf, double w) { return tf(Complex(0.0, w)); }

// Element formulas written out directly at s = jw.
Complex footnote(ElementKind kind, ElementParams p, double w) {
  const Complex s(0.0, w);
  switch (kind) {
    case ElementKind::P: return p.k;
    case ElementKind::I: return p.k / (p.T * s);
    case ElementKind::PI: return p.k * (1.0 + 1.0 / (p.T * s));
    case ElementKind::IF: return p.k / (p.T * s + 1.0);
    case ElementKind::O: return p.k / (p.T * p.T * s * s + 2.0 * p.T * p.xi * s + 1.0);
    default: return 0.0;
  }
}

int channel(const StateSpaceModel& k, const std::string& name) { return k.input_index(name); }

}  // namespace

TEST_CASE("element DC gains") {
  CHECK(make_element(ElementKind::P, {2.5}).dc_gain() == 2.5);
  CHECK(make_element(ElementKind::IF, {1.0, 0.2}).dc_gain() == doctest::Approx(1.0));
  CHECK(make_element(ElementKind::PD, {3.0, 0.1}).dc_gain() == doctest::Approx(3.0));
  CHECK(make_element(ElementKind::O, {0.7, 0.01, 0.3}).dc_gain() == doctest::Approx(0.7));
  CHECK(std::isinf(make_element(ElementKind::I, {1.0, 1.0}).dc_gain()));
  CHECK(std::isinf(make_element(ElementKind::PI, {1.0, 0.5}).dc_gain()));
  CHECK(make_element(ElementKind::D, {1.0, 0.1}).dc_gain() == 0.0);
  CHECK(make_element(ElementKind::Zero).is_zero());
  CHECK(make_element(ElementKind::P, {0.0}).is_zero());
}

TEST_CASE("element frequency responses follow the footnote formulas") {
  const std::vector<std::pair<ElementKind, ElementParams>> cases{
      {ElementKind::P, {1.3}},           {ElementKind::I, {2.0, 0.5}},
      {ElementKind::PI, {90.0, 0.225}},  {ElementKind::IF, {0.01, 0.0167}},
      {ElementKind::O, {1.0, 0.01, 0.2}}};
  for (const auto& [kind, params] : cases) {
    const auto e = make_element(kind, params);
    for (double w : {0.01, 0.3, 1.0, 7.0, 100.0, 1e4}) {
      const Complex want = footnote(kind, params, w);
      CHECK(std::abs(eval(e.transfer(), w) - want) <= 1e-12 * std::abs(want));
    }
  }
}

TEST_CASE("standalone derivative is bandlimited, products keep the ideal form") {
  const auto d = make_element(ElementKind::D, {1.0, 0.01});
  CHECK(d.transfer().is_proper());
  CHECK(std::abs(eval(d.transfer(), 1.0)) == doctest::Approx(0.01).epsilon(1e-3));
  // High-frequency gain capped at N.
  CHECK(std::abs(eval(d.transfer(), 1e9)) == doctest::Approx(kDerivativeRatio).epsilon(1e-6));

  // IF x D is already proper: T s / (T s + 1) with no extra pole.
  const auto hp = make_element(ElementKind::IF, {1.0, 0.2}) * make_element(ElementKind::D, {1.0, 0.2});
  const Complex s(0.0, 3.0);
  CHECK(std::abs(eval(hp.transfer(), 3.0) - 0.2 * s / (0.2 * s + 1.0)) <= 1e-14);
  CHECK(linsys::poly_degree(hp.transfer().den) == 1);
}

TEST_CASE("element parameters are validated") {
  CHECK_THROWS_AS(make_element(ElementKind::I, {1.0, 0.0}), DomainError);
  CHECK_THROWS_AS(make_element(ElementKind::IF, {1.0, -1.0}), DomainError);
  CHECK_THROWS_AS(make_element(ElementKind::O, {1.0, 0.1, 0.0}), DomainError);
  CHECK_THROWS_AS(make_element(ElementKind::P, {std::nan("")}), DomainError);
  CHECK_THROWS_AS(parse_kind("PID"), DomainError);
  CHECK(parse_kind("IF") == ElementKind::IF);
  CHECK(to_string(parse_kind("O")) == "O");
}

TEST_CASE("PI from gains") {
  const auto pi = pi_from_gains(90.0, 400.0);
  for (double w : {0.1, 1.0, 10.0}) {
    const Complex want = 90.0 + 400.0 / Complex(0.0, w);
    CHECK(std::abs(eval(pi.transfer(), w) - want) <= 1e-12 * std::abs(want));
  }
  CHECK(pi_from_gains(3.0, 0.0).dc_gain() == 3.0);
  CHECK(std::abs(eval(pi_from_gains(0.0, 5.0).transfer(), 2.0) - 5.0 / Complex(0.0, 2.0)) <= 1e-14);
  CHECK(pi_from_gains(0.0, 0.0).is_zero());
}

TEST_CASE("gain vector layout") {
  const auto k = GainVector::reference_optimized();
  const auto d = k.diagonal();
  CHECK(d[0] == 120.224);
  CHECK(d[1] == 265.6217);
  CHECK(d[9] == d[10]);
  CHECK(d[11] == d[12]);
  CHECK(GainVector::from_diagonal(d).to_array() == k.to_array());
  auto bad = d;
  bad[10] += 1.0;
  CHECK_THROWS_AS(GainVector::from_diagonal(bad), DomainError);

  const auto init = GainVector::initial().diagonal();
  const std::array<double, 13> expect{90, 400, 0, 0, 0, 20, 0, 0, 0, 0, 0, 1, 1};
  CHECK(init == expect);
  CHECK(GainVector::from_vector(k.to_vector()).to_array() == k.to_array());

  GainVector g = k;
  g.k22 = 0.0;
  CHECK_FALSE(g.is_valid());
  CHECK_THROWS_AS(g.validate(), DomainError);
  g = k;
  g.kidc = -1.0;
  CHECK_THROWS_AS(g.validate(), DomainError);
}

TEST_CASE("gains to control matrix") {
  const auto p = plant::reference_params();
  const auto k = GainVector::reference_optimized();
  const auto phi = gains_to_phi(k, p);
  // 120.224 + 265.6217 / s
  const Complex s(0.0, 2.0);
  CHECK(std::abs(eval(phi.at(0, 0).transfer(), 2.0) - (120.224 + 265.6217 / s)) <= 1e-10);
  CHECK(phi.at(0, 1).dc_gain() == -0.0019);
  CHECK(phi.at(1, 0).dc_gain() == -0.8382);
  CHECK(phi.at(2, 0).dc_gain() == -4.8977);
  // Dp k22 / (s + k22) with Dp = 0.01: 0.017622 / (s + 1.7622)
  CHECK(std::abs(eval(phi.at(1, 1).transfer(), 2.0) - 0.017622 / (s + 1.7622)) <= 1e-12);
  CHECK(phi.at(1, 1).dc_gain() == doctest::Approx(p.Dp));
  // 1.0844 / s and 21.6872 / s
  CHECK(std::abs(eval(phi.at(2, 3).transfer(), 2.0) - 1.0844 / s) <= 1e-12);
  // printed to four decimals
  CHECK(std::abs(eval(phi.at(2, 4).transfer(), 2.0) - 21.6872 / s) <= 1e-4 * 21.6872 / 2.0);
  for (int r = 0; r < 3; ++r) CHECK(phi.at(r, 2).is_zero());
  // The tied V entry is the q entry over Dq.
  CHECK(phi.at(1, 4).dc_gain() * p.Dq == doctest::Approx(phi.at(1, 3).dc_gain()));

  GainVector bad = k;
  bad.k22 = -1.0;
  CHECK_THROWS_AS(gains_to_phi(bad, p), DomainError);
}

TEST_CASE("preset structures") {
  const auto p = plant::reference_params();
  auto nonzero = [](const PhiSpec& s) {
    std::vector<std::pair<int, int>> out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 5; ++c)
        if (!s.at(r, c).is_zero()) out.emplace_back(r, c);
    return out;
  };
  using V = std::vector<std::pair<int, int>>;
  CHECK(nonzero(preset("droop-1", p)) == V{{0, 0}, {1, 1}, {2, 3}});
  CHECK(nonzero(preset("vsg-2", p)) == V{{0, 0}, {1, 1}, {2, 3}, {2, 4}});
  CHECK(nonzero(preset("matching-1", p)) == V{{0, 0}, {1, 0}, {2, 4}});
  CHECK(preset("droop-5", p).at(1, 1).has_feedback_only());

  // 0.059801 / (s + 5.9801)
  const Complex s(0.0, 4.0);
  CHECK(std::abs(eval(preset("vsg-2", p).at(1, 1).transfer(), 4.0) - 0.059801 / (s + 5.9801)) <=
        1e-12);
  CHECK(std::abs(eval(preset("vsg-2", p).at(2, 4).transfer(), 4.0) - 38.0954 / s) <= 1e-5 * 38.0954);
  CHECK(preset("droop-1", p).at(1, 1).dc_gain() == p.Dp);
  CHECK(preset("droop-1", p).at(2, 3).dc_gain() == p.Dq);

  CHECK_THROWS_AS(preset("droop-9", p), DomainError);
  CHECK_THROWS_AS(preset("vsg-2", p, {{"kpdc", 1.0}}), DomainError);
}

TEST_CASE("control matrix validation") {
  PhiSpec s;
  s.at(1, 2) = make_element(ElementKind::P, {1.0});
  CHECK_THROWS_AS(s.validate(), DomainError);
  s.at(1, 2) = make_element(ElementKind::IF, {1.0, 0.1});
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("realization reproduces every element path") {
  const auto p = plant::reference_params();
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> lw(-2.0, 4.0);
  for (const auto& name : preset_names()) {
    const auto spec = preset(name, p);
    const auto k = realize_phi(spec);
    REQUIRE(k.inputs() == 10);
    REQUIRE(k.outputs() == 3);
    for (int k_w = 0; k_w < 20; ++k_w) {
      const double w = std::pow(10.0, lw(rng));
      const CMatrix h = linsys::freq_response(k, w);
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 5; ++c) {
          const auto& e = spec.at(r, c);
          const Complex main = e.is_zero() ? 0.0 : eval(e.transfer(), w);
          const Complex fb = e.has_feedback_only() ? eval(e.feedback_transfer(), w) : 0.0;
          const auto y = plant::kOutputNames[static_cast<size_t>(c)];
          const Complex ref = h(r, channel(k, plant::ref_channel(y)));
          const Complex meas = h(r, channel(k, plant::meas_channel(y)));
          CHECK(std::abs(ref - main) <= 1e-9 * std::max(1.0, std::abs(main)));
          CHECK(std::abs(meas + main + fb) <= 1e-9 * std::max(1.0, std::abs(main + fb)));
        }
      }
    }
  }
}

TEST_CASE("realization state counts") {
  const auto p = plant::reference_params();
  CHECK(realize_phi(preset("droop-1", p)).states() == 1);
  CHECK(realize_phi(preset("droop-5", p)).states() == 3);
  // Shared 1/s between the q and V entries.
  CHECK(realize_phi(preset("vsg-2", p)).states() == 3);
  CHECK(realize_phi(preset("mimo-gfm", p)).states() == 3);
  CHECK(realize_phi(preset("mimo-gfm", p)).input_names()[0] == "ref:vdc");
  CHECK(realize_phi(preset("mimo-gfm", p)).output_names()[1] == "wu");
}

TEST_CASE("droop-5 matches VSG-2 on the feedback path only") {
  const auto p = plant::reference_params();
  const auto droop = realize_phi(preset("droop-5", p));
  const auto vsg = realize_phi(preset("vsg-2", p));
  const int wrow = 1;
  bool ref_differs = false;
  for (double w : {0.1, 1.0, 5.9801, 30.0, 300.0}) {
    const CMatrix hd = linsys::freq_response(droop, w);
    const CMatrix hv = linsys::freq_response(vsg, w);
    const int m = droop.input_index("meas:p");
    const int r = droop.input_index("ref:p");
    CHECK(std::abs(hd(wrow, m) - hv(wrow, m)) <= 1e-9 * std::abs(hv(wrow, m)));
    if (std::abs(hd(wrow, r) - hv(wrow, r)) > 1e-3 * std::abs(hv(wrow, r))) ref_differs = true;
  }
  CHECK(ref_differs);
  // Reference path of droop-5 is the static gain Dp.
  const CMatrix h = linsys::freq_response(droop, 50.0);
  CHECK(std::abs(h(wrow, droop.input_index("ref:p")) - p.Dp) <= 1e-12);
}
