#pragma once

// Fixed-step nonlinear closed-loop simulation, step-response metrics and CSV
// export.

#include "gfm/controllers.hpp"
#include "gfm/plant.hpp"

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace gfm::simkit {

enum class Quantity { Pref, Qref, Vref, Vdcref, omega_g, Vg };

std::string to_string(Quantity q);
/// Accepts the names above plus "wg" for omega_g. Throws DomainError.
Quantity parse_quantity(const std::string& text);

struct Event {
  double time = 0;
  Quantity quantity = Quantity::Pref;
  double value = 0;
};

struct Scenario {
  std::string name = "custom";
  double duration = 1.0;   // s
  double dt = 20e-6;       // s
  double record_dt = 1e-4; // s; 0 records every step
  plant::Setpoints setpoints;
  plant::Disturbance disturbance;
  std::vector<Event> events;

  /// Throws DomainError on dt <= 0, unordered events or events outside
  /// [0, duration].
  void validate() const;
};

/// Pref 0.5 -> 1.0 at t = 1 s, 3 s long.
Scenario pref_step();
/// Grid frequency 1.0 -> 0.998 at t = 1 s, 5 s long.
Scenario wg_step();
std::vector<std::string> scenario_names();
Scenario scenario_preset(const std::string& name);

struct Metric {
  bool available = false;
  double initial = 0;        // value at the window start
  double steady_state = 0;   // mean over the last 10 % of the window
  double step = 0;           // steady_state - initial
  double peak = 0;           // extreme value in the step direction
  double overshoot = 0;      // (peak - steady) / |step|, signed by the step
  double settling_time = 0;  // s after the window start, 2 % of |step| band
};

struct Window {
  double start = 0;
  double end = -1;  // negative: end of the series
};

/// Metric of one series. Unavailable when the last 10 % still drifts by
/// more than 0.1 % of the step.
Metric series_metrics(const std::vector<double>& t, const std::vector<double>& v, Window w = {});

struct SimResult {
  std::vector<double> t;
  std::vector<plant::PlantState> x;
  std::vector<plant::OutputVector> y;
  std::vector<plant::ControlInput> u;
  plant::OperatingPoint initial;
  bool diverged = false;
  std::size_t truncation = 0;  // first step index that failed
  std::string reason;
  std::vector<std::string> warnings;
  std::array<Metric, 5> metrics{};  // vdc, p, wu, q, V from the first event on
  double elapsed = 0;                // wall-clock seconds
};

/// Series of one output ("vdc", "p", "wu", "q", "V") or input ("iu", "Eu").
std::vector<double> channel(const SimResult& r, const std::string& name);

Metric metrics(const SimResult& r, const std::string& channel_name, Window w = {});

struct SimOptions {
  plant::EquilibriumOptions equilibrium;
  double divergence_norm = 1e6;
};

/// RK4 on the plant and controller states from the equilibrium of the
/// pre-event setpoints. Divergence truncates the result instead of throwing.
SimResult simulate(const plant::ConverterParams& p, const controllers::PhiSpec& phi,
                   const Scenario& sc, const SimOptions& opt = {});

struct CompareRow {
  std::string name;
  SimResult result;
  std::string error;  // non-empty when the run could not start
};

/// One simulation per spec with identical settings, run concurrently.
std::vector<CompareRow> compare(const plant::ConverterParams& p,
                                const std::vector<controllers::PhiSpec>& specs, const Scenario& sc,
                                const SimOptions& opt = {});

inline const char* kCsvHeader = "t,id,iq,vd,vq,iod,ioq,delta,vdc,p,wu,q,V,iu,Eu";

void write_csv(const SimResult& r, std::ostream& out);
/// Throws Error naming the path on I/O failure.
void export_csv(const SimResult& r, const std::string& path);
/// Rows of the 15 CSV columns.
std::vector<std::array<double, 15>> read_csv(std::istream& in);

}  // namespace gfm::simkit
