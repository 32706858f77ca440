#pragma once

// Fixed-structure H-infinity tuning of the MIMO-GFM gain vector.

#include "gfm/controllers.hpp"
#include "gfm/linsys.hpp"
#include "gfm/plant.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace gfm::synthesis {

using controllers::GainVector;
using linsys::StateSpaceModel;
using linsys::TransferFunction;

/// The 13 weighting numbers (lab defaults).
struct WeightNumbers {
  double s11_1 = 4.0, s11_2 = 0.0004;
  double T21_1 = 1.447e-3, T21_2 = 1.447e-5;
  double kw22 = 100.0, T22_1 = 1.447e-3, T22_2 = 1.447e-5;
  double kw31 = 0.015, T31_2 = 1.447e-5;
  double T32_1 = 1.447e-3, T32_2 = 1.447e-5;
  double s41_1 = 60.0, s41_2 = 0.006;

  static constexpr int size = 13;
  static const std::array<const char*, 13>& names();
  std::array<double, 13> to_array() const;
  static WeightNumbers from_array(const std::array<double, 13>& a);
};

struct WeightSet {
  TransferFunction W11, W21, W22, W31, W32, W41;
  WeightNumbers numbers;
};

/// Throws DomainError on non-positive numbers or lead-lag weights with
/// s_1 <= s_2.
WeightSet make_weights(const WeightNumbers& numbers = {});

/// w_j -> z_i index pair; w = [Pref, wg], z = [Pref - p, p, wu, q + V/Dq].
struct Channel {
  std::string name;
  int z = 0;
  int w = 0;
};

/// T11, T21, T22, T31, T32, T41 in objective order.
const std::array<Channel, 6>& channels();

struct SynthesisProblem {
  plant::ConverterParams params;
  plant::OperatingPoint op;  // linearization point
  StateSpaceModel plant_lin;
  WeightSet weights;
  /// Relative tolerance of each channel norm.
  double norm_tol = 1e-3;
};

/// Linearizes the plant at the nominal steady state reached with the
/// initial MIMO-GFM gains.
SynthesisProblem make_problem(const plant::ConverterParams& p, const plant::Setpoints& sp = {},
                              const WeightSet& weights = make_weights());

/// Loop closed with an arbitrary controller realization (ref:* then meas:*):
/// inputs (Pref, wg), outputs (Pref - p, p, wu, q + V/Dq).
StateSpaceModel closed_loop(const StateSpaceModel& plant_lin, const StateSpaceModel& ctrl, double Dq);
StateSpaceModel closed_loop(const SynthesisProblem& problem, const GainVector& k);

/// T11 .. T41 picked out of a closed loop, SISO each.
std::vector<StateSpaceModel> channel_systems(const StateSpaceModel& cl);
/// W11 T11, W21 T21, W22 T22, W31 T31, W32 T32, W41 T41.
std::vector<StateSpaceModel> weighted_channels(const WeightSet& weights, const StateSpaceModel& cl);
std::vector<StateSpaceModel> weighted_channels(const SynthesisProblem& problem, const GainVector& k);

struct Evaluation {
  double value = 0;
  bool stable = false;
  double max_real = 0;                 // closed-loop spectral abscissa
  std::array<double, 6> channel_norms{};  // NaN when unstable
};

/// Max of weighted channel norms if the loop is Hurwitz, else
/// 1e6 (1 + max real part). Invalid gain vectors give +inf.
Evaluation evaluate(const SynthesisProblem& problem, const GainVector& k);
double objective(const SynthesisProblem& problem, const GainVector& k);

inline constexpr double kBarrierScale = 1e6;

struct SynthesisOptions {
  int max_iters = 2000;  // Nelder-Mead iterations per start
  int restarts = 3;      // extra perturbed starts
  double tol = 1e-6;     // relative spread of the simplex values
  std::uint64_t seed = 1;
  bool parallel = true;
};

struct HistoryEntry {
  int start = 0;
  int iteration = 0;
  double objective = 0;  // best so far in this start
  double margin = 0;     // -max real part at that point
};

struct SynthesisResult {
  GainVector K_opt;
  double gamma = 0;
  bool stable = false;
  Evaluation evaluation;
  std::vector<HistoryEntry> history;
  int evaluations = 0;
  double initial_objective = 0;
};

/// Multi-start Nelder-Mead over scaled gains. Start 0 is K_init; start r > 0
/// uses K_init perturbed with an RNG seeded by seed + r. Throws
/// StabilityError if no start reaches a stabilizing point.
SynthesisResult synthesize(const SynthesisProblem& problem, const GainVector& k_init,
                           const SynthesisOptions& options = {});

/// Step sizes used to normalize the search coordinates.
std::array<double, 11> gain_scales(const GainVector& k);

}  // namespace gfm::synthesis
