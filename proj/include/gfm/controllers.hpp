#pragma once

// Control transfer matrix: a 3x5 grid of elements mapping output errors
// e = Yref - y (columns vdc, p, wu, q, V) to control corrections for
// (iu, wu, Eu).

#include "gfm/linsys.hpp"
#include "gfm/plant.hpp"

#include <array>
#include <map>
#include <string>
#include <vector>

namespace gfm::controllers {

using linsys::StateSpaceModel;
using linsys::TransferFunction;

enum class ElementKind { Zero, P, I, D, PI, PD, IF, O };

std::string to_string(ElementKind kind);
ElementKind parse_kind(const std::string& text);

struct ElementParams {
  double k = 1.0;
  double T = 0.0;
  double xi = 0.0;
};

/// One primitive factor from the element vocabulary:
///   P k, I k/(Ts), D k Ts, PI k(1 + 1/(Ts)), PD k(1 + Ts), IF k/(Ts+1),
///   O k/(T^2 s^2 + 2 T xi s + 1).
struct Factor {
  ElementKind kind = ElementKind::Zero;
  ElementParams params;
};

/// Derivative bandlimit ratio: D and PD use the pole T/N when the element
/// would otherwise be improper.
inline constexpr double kDerivativeRatio = 100.0;

/// Product of factors, optionally with a second product that only acts on
/// the measured (feedback) channel. No factors means a structural zero.
class Element {
 public:
  Element() = default;
  explicit Element(std::vector<Factor> factors, std::vector<Factor> feedback_only = {});

  const std::vector<Factor>& factors() const { return factors_; }
  const std::vector<Factor>& feedback_only() const { return feedback_; }
  bool is_zero() const;
  bool has_feedback_only() const { return !feedback_.empty(); }

  /// Transfer function of the main product (acts on the error Yref - y).
  TransferFunction transfer() const;
  /// Transfer function of the feedback-only product (acts on -y).
  TransferFunction feedback_transfer() const;

  /// Infinite when the main product contains an integrator.
  double dc_gain() const;

  Element operator*(const Element& other) const;
  Element with_feedback(const Element& fb) const;

 private:
  std::vector<Factor> factors_;
  std::vector<Factor> feedback_;
};

/// Validated single-factor element. Zero takes no parameters.
Element make_element(ElementKind kind, ElementParams params = {});

/// Product of factors, dropping bandlimits not needed for properness.
TransferFunction product_transfer(const std::vector<Factor>& factors);

/// kp + ki/s built from the element vocabulary; reduces to P or I when a
/// gain is zero.
Element pi_from_gains(double kp, double ki);

struct PhiSpec {
  std::string name = "custom";
  std::array<std::array<Element, 5>, 3> grid{};
  double Dp = 0.01;
  double Dq = 0.05;

  const Element& at(int row, int col) const { return grid[static_cast<size_t>(row)][static_cast<size_t>(col)]; }
  Element& at(int row, int col) { return grid[static_cast<size_t>(row)][static_cast<size_t>(col)]; }

  /// Throws DomainError on improper entries or a non-strictly-proper
  /// wu self-loop entry (row wu, column wu).
  void validate() const;
};

/// The 11 free parameters of the MIMO-GFM matrix (13 diagonal slots; k24
/// and k34 each fill two).
struct GainVector {
  double kpdc = 0, kidc = 0, k21 = 0, k31 = 0, k12 = 0, k22 = 1, k32 = 0, k14 = 0, k15 = 0,
         k24 = 0, k34 = 0;

  static constexpr int size = 11;
  static const std::array<const char*, 11>& names();

  std::array<double, 11> to_array() const;
  static GainVector from_array(const std::array<double, 11>& a);
  std::vector<double> to_vector() const;
  static GainVector from_vector(const std::vector<double>& v);

  /// diag(kpdc, kidc, k21, k31, k12, k22, k32, k14, k15, k24, k24, k34, k34)
  std::array<double, 13> diagonal() const;
  static GainVector from_diagonal(const std::array<double, 13>& d);

  /// Throws DomainError unless k22 > 0 and kidc >= 0.
  void validate() const;
  bool is_valid() const;

  /// Starting point diag(90, 400, 0, 0, 0, 20, 0, 0, 0, 0, 0, 1, 1).
  static GainVector initial();
  /// Reference optimized MIMO-GFM design (Dp = 0.01, Dq = 0.05).
  static GainVector reference_optimized();
};

PhiSpec gains_to_phi(const GainVector& k, const plant::ConverterParams& p);

using Tuning = std::map<std::string, double>;

std::vector<std::string> preset_names();
/// Gains every preset needs; defaults reproduce the reference designs.
Tuning default_tuning(const std::string& name, const plant::ConverterParams& p);
/// Throws DomainError for unknown names or missing tuning entries.
PhiSpec preset(const std::string& name, const plant::ConverterParams& p, const Tuning& tuning);
PhiSpec preset(const std::string& name, const plant::ConverterParams& p);

/// 10-input (ref:* then meas:*), 3-output realization. Elements in a row
/// that share a denominator share states.
StateSpaceModel realize_phi(const PhiSpec& spec);

}  // namespace gfm::controllers
