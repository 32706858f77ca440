#include "gfm/controllers.hpp"

#include "gfm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gfm::controllers {

using linsys::Matrix;
using linsys::Polynomial;

std::string to_string(ElementKind kind) {
  switch (kind) {
    case ElementKind::Zero: return "0";
    case ElementKind::P: return "P";
    case ElementKind::I: return "I";
    case ElementKind::D: return "D";
    case ElementKind::PI: return "PI";
    case ElementKind::PD: return "PD";
    case ElementKind::IF: return "IF";
    case ElementKind::O: return "O";
  }
  return "?";
}

ElementKind parse_kind(const std::string& text) {
  for (auto k : {ElementKind::Zero, ElementKind::P, ElementKind::I, ElementKind::D,
                 ElementKind::PI, ElementKind::PD, ElementKind::IF, ElementKind::O}) {
    if (to_string(k) == text) return k;
  }
  if (text == "Zero") return ElementKind::Zero;
  throw DomainError("unknown element kind '" + text + "'");
}

namespace {

TransferFunction factor_transfer(const Factor& f, bool bandlimit) {
  const double k = f.params.k;
  const double t = f.params.T;
  const double td = bandlimit ? t / kDerivativeRatio : 0.0;
  switch (f.kind) {
    case ElementKind::Zero: return {{0.0}, {1.0}};
    case ElementKind::P: return {{k}, {1.0}};
    case ElementKind::I: return {{k}, {0.0, t}};
    case ElementKind::D: return {{0.0, k * t}, {1.0, td}};
    case ElementKind::PI: return {{k, k * t}, {0.0, t}};
    case ElementKind::PD: return {{k, k * (t + td)}, {1.0, td}};
    case ElementKind::IF: return {{k}, {1.0, t}};
    case ElementKind::O: return {{k}, {1.0, 2.0 * t * f.params.xi, t * t}};
  }
  return {{0.0}, {1.0}};
}

bool all_finite(const ElementParams& p) {
  return std::isfinite(p.k) && std::isfinite(p.T) && std::isfinite(p.xi);
}

/// Creates a factor without the T > 0 check; used for gain-derived PI terms
/// whose zero may sit in the right half plane.
Element unchecked(ElementKind kind, ElementParams params) {
  return Element({Factor{kind, params}});
}

}  // namespace

TransferFunction product_transfer(const std::vector<Factor>& factors) {
  if (factors.empty()) return {{0.0}, {1.0}};
  for (bool bandlimit : {false, true}) {
    TransferFunction tf{{1.0}, {1.0}};
    for (const auto& f : factors) tf = tf * factor_transfer(f, bandlimit);
    if (tf.is_zero()) return {{0.0}, {1.0}};
    if (tf.is_proper() || bandlimit) return tf;
  }
  return {{0.0}, {1.0}};
}

Element::Element(std::vector<Factor> factors, std::vector<Factor> feedback_only)
    : factors_(std::move(factors)), feedback_(std::move(feedback_only)) {
  auto drop_zero = [](std::vector<Factor>& v) {
    const bool any_zero = std::any_of(v.begin(), v.end(), [](const Factor& f) {
      return f.kind == ElementKind::Zero || f.params.k == 0.0;
    });
    if (any_zero) v.clear();
  };
  drop_zero(factors_);
  drop_zero(feedback_);
}

bool Element::is_zero() const { return factors_.empty() && feedback_.empty(); }

TransferFunction Element::transfer() const { return product_transfer(factors_); }

TransferFunction Element::feedback_transfer() const { return product_transfer(feedback_); }

double Element::dc_gain() const {
  const auto tf = transfer();
  const auto num0 = tf.num.empty() ? 0.0 : tf.num[0];
  const auto den0 = tf.den.empty() ? 0.0 : tf.den[0];
  if (den0 == 0.0) {
    return tf.is_zero() ? 0.0 : std::numeric_limits<double>::infinity();
  }
  return num0 / den0;
}

Element Element::operator*(const Element& other) const {
  if (factors_.empty() || other.factors_.empty()) return Element{};
  auto f = factors_;
  f.insert(f.end(), other.factors_.begin(), other.factors_.end());
  return Element(std::move(f), feedback_);
}

Element Element::with_feedback(const Element& fb) const {
  return Element(factors_, fb.factors_);
}

Element make_element(ElementKind kind, ElementParams params) {
  if (!all_finite(params)) throw DomainError("element parameters must be finite");
  switch (kind) {
    case ElementKind::Zero:
      return Element{};
    case ElementKind::P:
      break;
    case ElementKind::O:
      if (!(params.xi > 0.0)) throw DomainError("O element requires xi > 0");
      [[fallthrough]];
    case ElementKind::I:
    case ElementKind::D:
    case ElementKind::PI:
    case ElementKind::PD:
    case ElementKind::IF:
      if (!(params.T > 0.0)) throw DomainError(to_string(kind) + " element requires T > 0");
      break;
  }
  return Element({Factor{kind, params}});
}

Element pi_from_gains(double kp, double ki) {
  if (!std::isfinite(kp) || !std::isfinite(ki)) throw DomainError("PI gains must be finite");
  if (ki == 0.0) return kp == 0.0 ? Element{} : make_element(ElementKind::P, {kp});
  if (kp == 0.0) return make_element(ElementKind::I, {ki, 1.0});
  return unchecked(ElementKind::PI, {kp, kp / ki, 0.0});
}

void PhiSpec::validate() const {
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 5; ++j) {
      const auto& e = at(i, j);
      if (!e.transfer().is_proper() || !e.feedback_transfer().is_proper()) {
        throw DomainError("phi(" + std::to_string(i + 1) + "," + std::to_string(j + 1) +
                          ") is not proper");
      }
    }
  }
  const auto& self = at(1, 2);
  const bool main_ok = self.transfer().is_zero() || self.transfer().is_strictly_proper();
  const bool fb_ok =
      self.feedback_transfer().is_zero() || self.feedback_transfer().is_strictly_proper();
  if (!main_ok || !fb_ok) {
    throw DomainError("phi(2,3) must be strictly proper or zero (wu self-loop well-posedness)");
  }
}

// --- gain vector -----------------------------------------------------------------------

const std::array<const char*, 11>& GainVector::names() {
  static const std::array<const char*, 11> n{"kpdc", "kidc", "k21", "k31", "k12", "k22",
                                             "k32",  "k14",  "k15", "k24", "k34"};
  return n;
}

std::array<double, 11> GainVector::to_array() const {
  return {kpdc, kidc, k21, k31, k12, k22, k32, k14, k15, k24, k34};
}

GainVector GainVector::from_array(const std::array<double, 11>& a) {
  return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8], a[9], a[10]};
}

std::vector<double> GainVector::to_vector() const {
  const auto a = to_array();
  return {a.begin(), a.end()};
}

GainVector GainVector::from_vector(const std::vector<double>& v) {
  if (v.size() != 11) throw DimensionError("GainVector expects 11 values");
  std::array<double, 11> a{};
  std::copy(v.begin(), v.end(), a.begin());
  return from_array(a);
}

std::array<double, 13> GainVector::diagonal() const {
  return {kpdc, kidc, k21, k31, k12, k22, k32, k14, k15, k24, k24, k34, k34};
}

GainVector GainVector::from_diagonal(const std::array<double, 13>& d) {
  if (d[9] != d[10] || d[11] != d[12]) {
    throw DomainError("tied diagonal slots (k24, k34) must hold equal values");
  }
  return {d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7], d[8], d[9], d[11]};
}

bool GainVector::is_valid() const {
  for (double v : to_array())
    if (!std::isfinite(v)) return false;
  return k22 > 0.0 && kidc >= 0.0;
}

void GainVector::validate() const {
  for (double v : to_array())
    if (!std::isfinite(v)) throw DomainError("gain vector entries must be finite");
  if (!(k22 > 0.0)) throw DomainError("k22 must be positive (pole of phi22 at -k22)");
  if (!(kidc >= 0.0)) throw DomainError("kidc must be non-negative");
}

GainVector GainVector::initial() { return from_diagonal({90, 400, 0, 0, 0, 20, 0, 0, 0, 0, 0, 1, 1}); }

GainVector GainVector::reference_optimized() {
  GainVector k;
  k.kpdc = 120.224;
  k.kidc = 265.6217;
  k.k12 = -0.0019;
  k.k14 = 0.1673;
  k.k15 = -0.8274;
  k.k21 = -0.8382;
  k.k22 = 1.7622;
  k.k24 = 0.0;
  k.k31 = -4.8977;
  k.k32 = 0.0;
  k.k34 = 1.0844;
  return k;
}

PhiSpec gains_to_phi(const GainVector& k, const plant::ConverterParams& p) {
  k.validate();
  auto prop = [](double g) { return g == 0.0 ? Element{} : make_element(ElementKind::P, {g}); };
  auto integ = [](double g) { return g == 0.0 ? Element{} : make_element(ElementKind::I, {g, 1.0}); };
  PhiSpec s;
  s.name = "mimo-gfm";
  s.Dp = p.Dp;
  s.Dq = p.Dq;
  s.at(0, 0) = pi_from_gains(k.kpdc, k.kidc);
  s.at(0, 1) = prop(k.k12);
  s.at(0, 3) = prop(k.k14);
  s.at(0, 4) = prop(k.k15);
  s.at(1, 0) = prop(k.k21);
  // Dp k22 / (s + k22): unit-DC-gain lag scaled by Dp.
  s.at(1, 1) = make_element(ElementKind::IF, {p.Dp, 1.0 / k.k22});
  s.at(1, 3) = prop(k.k24);
  s.at(1, 4) = prop(k.k24 / p.Dq);
  s.at(2, 0) = prop(k.k31);
  s.at(2, 1) = prop(k.k32);
  s.at(2, 3) = integ(k.k34);
  s.at(2, 4) = integ(k.k34 / p.Dq);
  return s;
}

// --- presets -----------------------------------------------------------------------------

std::vector<std::string> preset_names() {
  return {"droop-1", "droop-5", "psc-1", "vsg-2", "matching-1", "mimo-gfm"};
}

namespace {

/// Inertia constant whose lag 1/(2 H Dp s + 1) has its pole at `pole` rad/s.
double inertia_for_pole(double pole, double dp) { return 1.0 / (2.0 * dp * pole); }

double require(const Tuning& t, const std::string& preset_name, const std::string& key) {
  auto it = t.find(key);
  if (it == t.end()) {
    throw DomainError("preset '" + preset_name + "' requires tuning value '" + key + "'");
  }
  if (!std::isfinite(it->second)) throw DomainError("tuning value '" + key + "' is not finite");
  return it->second;
}

double optional(const Tuning& t, const std::string& key, double fallback) {
  auto it = t.find(key);
  return it == t.end() ? fallback : it->second;
}

}  // namespace

Tuning default_tuning(const std::string& name, const plant::ConverterParams& p) {
  // Reference sparse VSG design: 90 + 400/s, Dp*5.9801/(s + 5.9801), 1.9048/s.
  const double h = inertia_for_pole(5.9801, p.Dp);
  if (name == "droop-1" || name == "psc-1") return {{"kpdc", 90.0}, {"kidc", 400.0}};
  if (name == "droop-5") return {{"kpdc", 90.0}, {"kidc", 400.0}, {"H", h}, {"kq", 1.9048}};
  if (name == "vsg-2") return {{"kpdc", 90.0}, {"kidc", 400.0}, {"H", h}, {"kp", 0.0}, {"kq", 1.9048}};
  if (name == "matching-1") return {{"ki", 20.0}, {"kdc", 0.05}, {"kpv", 0.1}, {"kiv", 20.0}};
  if (name == "mimo-gfm") {
    Tuning t;
    const auto k = GainVector::reference_optimized().to_array();
    for (size_t i = 0; i < k.size(); ++i) t[GainVector::names()[i]] = k[i];
    return t;
  }
  throw DomainError("unknown controller preset '" + name + "'");
}

PhiSpec preset(const std::string& name, const plant::ConverterParams& p, const Tuning& t) {
  PhiSpec s;
  s.name = name;
  s.Dp = p.Dp;
  s.Dq = p.Dq;
  auto dc_pi = [&] { return pi_from_gains(require(t, name, "kpdc"), require(t, name, "kidc")); };

  if (name == "droop-1" || name == "psc-1") {
    s.at(0, 0) = dc_pi();
    s.at(1, 1) = make_element(ElementKind::P, {p.Dp});
    s.at(2, 3) = make_element(ElementKind::P, {p.Dq});
  } else if (name == "droop-5") {
    // Dp (Pref - p) with the measured power low-pass filtered:
    // Dp + {-Dp T s / (T s + 1)} on the feedback channel gives Dp / (T s + 1) from p.
    const double tf = 2.0 * require(t, name, "H") * p.Dp;
    s.at(0, 0) = dc_pi();
    const auto fb = make_element(ElementKind::IF, {-p.Dp, tf}) * make_element(ElementKind::D, {1.0, tf});
    s.at(1, 1) = make_element(ElementKind::P, {p.Dp}).with_feedback(fb);
    const double kq = optional(t, "kq", 0.0);
    if (kq != 0.0) {
      s.at(2, 3) = make_element(ElementKind::I, {kq, 1.0});
      s.at(2, 4) = make_element(ElementKind::I, {kq / p.Dq, 1.0});
    } else {
      s.at(2, 3) = make_element(ElementKind::P, {p.Dq});
    }
  } else if (name == "vsg-2") {
    const double tf = 2.0 * require(t, name, "H") * p.Dp;
    const double kp = optional(t, "kp", 0.0);
    const double kq = require(t, name, "kq");
    s.at(0, 0) = dc_pi();
    s.at(1, 1) = make_element(ElementKind::IF, {p.Dp, tf});
    if (kp != 0.0) s.at(1, 2) = make_element(ElementKind::IF, {kp * p.Dp, tf});
    s.at(2, 3) = make_element(ElementKind::I, {kq, 1.0});
    s.at(2, 4) = make_element(ElementKind::I, {kq / p.Dq, 1.0});
  } else if (name == "matching-1") {
    s.at(0, 0) = make_element(ElementKind::P, {require(t, name, "ki")});
    // wu - w0 = kdc (vdc - Vdcref): the error enters with a minus sign.
    s.at(1, 0) = make_element(ElementKind::P, {-require(t, name, "kdc")});
    s.at(2, 4) = pi_from_gains(require(t, name, "kpv"), require(t, name, "kiv"));
  } else if (name == "mimo-gfm") {
    std::array<double, 11> a{};
    for (size_t i = 0; i < a.size(); ++i) a[i] = require(t, name, GainVector::names()[i]);
    s = gains_to_phi(GainVector::from_array(a), p);
  } else {
    throw DomainError("unknown controller preset '" + name + "'");
  }
  s.validate();
  return s;
}

PhiSpec preset(const std::string& name, const plant::ConverterParams& p) {
  return preset(name, p, default_tuning(name, p));
}

// --- realization -------------------------------------------------------------------------

namespace {

struct Term {
  int input;  // 0..9
  TransferFunction tf;
};

struct DenGroup {
  Polynomial den;  // monic
  std::vector<Polynomial> numerators;  // one per input
};

Polynomial trimmed(Polynomial p) {
  const int d = linsys::poly_degree(p);
  p.resize(static_cast<size_t>(std::max(d, 0)) + 1);
  return p;
}

bool same_poly(const Polynomial& a, const Polynomial& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i] - b[i]) > 1e-12 * std::max({1.0, std::abs(a[i]), std::abs(b[i])})) return false;
  }
  return true;
}

}  // namespace

StateSpaceModel realize_phi(const PhiSpec& spec) {
  spec.validate();
  std::vector<std::string> in_names, out_names{plant::kInputNames.begin(), plant::kInputNames.end()};
  for (const auto& y : plant::kOutputNames) in_names.push_back(plant::ref_channel(y));
  for (const auto& y : plant::kOutputNames) in_names.push_back(plant::meas_channel(y));

  std::vector<Matrix> blocks_a, blocks_b, blocks_c;
  Matrix d = Matrix::Zero(3, 10);
  std::vector<int> block_row;

  for (int i = 0; i < 3; ++i) {
    std::vector<Term> terms;
    for (int j = 0; j < 5; ++j) {
      const auto& e = spec.at(i, j);
      const auto m = e.transfer();
      if (!m.is_zero()) {
        terms.push_back({j, m});
        terms.push_back({5 + j, {linsys::poly_scale(m.num, -1.0), m.den}});
      }
      const auto f = e.feedback_transfer();
      if (!f.is_zero()) terms.push_back({5 + j, {linsys::poly_scale(f.num, -1.0), f.den}});
    }

    std::vector<DenGroup> groups;
    for (const auto& t : terms) {
      if (!t.tf.is_proper()) {
        throw DomainError("realize_phi: improper element in row " + std::to_string(i + 1));
      }
      const Polynomial den = trimmed(t.tf.den);
      const double lead = den.back();
      const Polynomial den_m = linsys::poly_scale(den, 1.0 / lead);
      const Polynomial num_m = linsys::poly_scale(t.tf.num, 1.0 / lead);
      if (den_m.size() == 1) {
        d(i, t.input) += num_m.empty() ? 0.0 : num_m[0];
        continue;
      }
      auto it = std::find_if(groups.begin(), groups.end(),
                             [&](const DenGroup& g) { return same_poly(g.den, den_m); });
      if (it == groups.end()) {
        groups.push_back({den_m, std::vector<Polynomial>(10, Polynomial{0.0})});
        it = groups.end() - 1;
      }
      auto& slot = it->numerators[static_cast<size_t>(t.input)];
      slot = linsys::poly_add(slot, num_m);
    }

    for (const auto& g : groups) {
      const auto r = linsys::realize_common_denominator(g.den, g.numerators);
      d.row(i) += r.D().row(0);
      // A group whose inputs cancel exactly would leave unreachable modes.
      if (r.B().cwiseAbs().maxCoeff() == 0.0) continue;
      blocks_a.push_back(r.A());
      blocks_b.push_back(r.B());
      blocks_c.push_back(r.C());
      block_row.push_back(i);
    }
  }

  Eigen::Index n = 0;
  for (const auto& a : blocks_a) n += a.rows();
  Matrix a = Matrix::Zero(n, n), b = Matrix::Zero(n, 10), c = Matrix::Zero(3, n);
  Eigen::Index off = 0;
  for (size_t k = 0; k < blocks_a.size(); ++k) {
    const auto nk = blocks_a[k].rows();
    a.block(off, off, nk, nk) = blocks_a[k];
    b.middleRows(off, nk) = blocks_b[k];
    c.block(block_row[k], off, 1, nk) = blocks_c[k];
    off += nk;
  }
  return StateSpaceModel(a, b, c, d, in_names, out_names);
}

}  // namespace gfm::controllers
