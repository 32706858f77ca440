#pragma once

// Per-unit converter/grid model in the dq frame rotating at the controller
// frequency: LC filter, grid line, DC link with a controlled current source.

#include "gfm/linsys.hpp"

#include <array>
#include <optional>
#include <string>

namespace gfm::plant {

using linsys::Matrix;
using linsys::StateSpaceModel;
using linsys::Vector;

struct BaseValues {
  double Sn = 4000.0;        // W
  double Vn = 380.0;         // V, line-to-line RMS
  double Vdc_base = 700.0;   // V
  double omega_n = 100.0 * 3.14159265358979323846;  // rad/s

  double impedance() const { return Vn * Vn / Sn; }
  double dc_impedance() const { return Vdc_base * Vdc_base / Sn; }
};

/// Per-unit plant parameters. Lf, Lg are reactances, Cf, Cdc susceptances,
/// so they appear directly as the omega_b / L and omega_b / C factors of the
/// state equations.
struct ConverterParams {
  double omega_b = 100.0 * 3.14159265358979323846;
  double Lf = 0.0;
  double Cf = 0.0;
  double Lg = 0.0;
  double Rg = 0.0;
  double Rf = 0.0;
  double Cdc = 0.0;
  double Dp = 0.01;
  double Dq = 0.05;
  double Vg = 1.0;
  BaseValues base;
  /// Adds -omega_b Rf / Lf terms to the filter-current equations.
  bool include_rf = false;

  /// Throws DomainError when an invariant is violated.
  void validate() const;
};

/// Physical (SI) description of the same plant.
struct SiParameters {
  BaseValues base;
  double Lf = 2e-3;     // H
  double Cf = 20e-6;    // F
  double Lg = 2e-3;     // H
  double Rg = 0.06;     // ohm
  double Rf = 0.06;     // ohm
  double Cdc = 500e-6;  // F
  double Dp = 0.01;     // p.u.
  double Dq = 0.05;     // p.u.
  double Vg = 1.0;      // p.u.
  bool include_rf = false;
};

ConverterParams per_unit_convert(const SiParameters& si);
SiParameters to_si(const ConverterParams& pu);

/// Laboratory reference design (4 kW, 380 V, 700 V DC link).
SiParameters reference_si();
ConverterParams reference_params();

struct PlantState {
  double id = 0, iq = 0, vd = 0, vq = 0, iod = 0, ioq = 0, delta = 0, vdc = 1;

  static constexpr int size = 8;
  Vector to_vector() const;
  static PlantState from_vector(const Vector& v);
};

struct ControlInput {
  double iu = 0, omega_u = 1, Eu = 1;
  static constexpr int size = 3;
};

struct OutputVector {
  double vdc = 0, p = 0, omega_u = 0, q = 0, V = 0;
  static constexpr int size = 5;
  std::array<double, 5> as_array() const { return {vdc, p, omega_u, q, V}; }
};

struct Disturbance {
  double omega_g = 1.0;
  double Vg = 1.0;
};

struct References {
  double Vdcref = 1.0, Pref = 0.5, omega_g_ref = 1.0, Qref = 0.0, Vref = 1.0;
  std::array<double, 5> as_array() const { return {Vdcref, Pref, omega_g_ref, Qref, Vref}; }
};

struct Setpoints {
  ControlInput u0{0.0, 1.0, 1.0};
  References yref;
};

/// Channel labels shared by the plant linearization and controller realizations.
inline const std::array<std::string, 3> kInputNames{"iu", "wu", "Eu"};
inline const std::array<std::string, 5> kOutputNames{"vdc", "p", "wu", "q", "V"};
inline const std::array<std::string, 2> kDisturbanceNames{"wg", "Vg"};
std::string ref_channel(const std::string& output);   // "ref:<y>"
std::string meas_channel(const std::string& output);  // "meas:<y>"

/// Threshold below which the DC-link equation is treated as singular.
inline constexpr double kMinVdc = 1e-6;

/// State derivative (per second). Throws DomainError if vdc <= kMinVdc.
PlantState f_dynamics(const PlantState& x, const ControlInput& u, const Disturbance& d,
                      const ConverterParams& p);

OutputVector g_outputs(const PlantState& x, const ControlInput& u);

/// Angle wrapped into (-pi, pi].
double wrap_angle(double a);

/// Analytic Jacobians. Inputs (iu, wu, Eu, wg, Vg), outputs (vdc, p, wu, q, V).
StateSpaceModel linearize(const ConverterParams& p, const PlantState& x0, const ControlInput& u0,
                          const Disturbance& d0);

struct EquilibriumOptions {
  /// Solve for i0 / E0 when no integrator in the corresponding controller
  /// row fixes the steady state.
  bool dispatch_setpoints = true;
  int max_iterations = 100;
  double tolerance = 1e-10;
  std::optional<PlantState> guess;
};

struct OperatingPoint {
  PlantState x;
  ControlInput u;
  Disturbance d;
  Vector xi;            // controller states
  Setpoints setpoints;  // with any dispatched u0 entries filled in
  double residual = 0;  // infinity norm of the full residual
  int iterations = 0;
  bool dispatched_i0 = false;
  bool dispatched_E0 = false;
};

/// Control input produced by a controller realization (inputs ref:* then
/// meas:*, outputs iu/wu/Eu) in state `xi`; resolves the wu feedthrough.
ControlInput controller_output(const StateSpaceModel& ctrl, const Vector& xi,
                               const Setpoints& sp, const PlantState& x);

/// Newton solve of the combined plant and controller steady state.
OperatingPoint solve_equilibrium(const ConverterParams& p, const Setpoints& sp,
                                 const StateSpaceModel& ctrl, const Disturbance& d,
                                 const EquilibriumOptions& options = {});

}  // namespace gfm::plant
