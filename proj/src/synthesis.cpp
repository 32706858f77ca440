#include "gfm/synthesis.hpp"

#include "gfm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace gfm::synthesis {

using linsys::Block;
using linsys::Matrix;
using linsys::Wiring;

const std::array<const char*, 13>& WeightNumbers::names() {
  static const std::array<const char*, 13> n{"s11_1", "s11_2", "T21_1", "T21_2", "kw22",
                                             "T22_1", "T22_2", "kw31",  "T31_2", "T32_1",
                                             "T32_2", "s41_1", "s41_2"};
  return n;
}

std::array<double, 13> WeightNumbers::to_array() const {
  return {s11_1, s11_2, T21_1, T21_2, kw22, T22_1, T22_2, kw31, T31_2, T32_1, T32_2, s41_1, s41_2};
}

WeightNumbers WeightNumbers::from_array(const std::array<double, 13>& a) {
  WeightNumbers n;
  n.s11_1 = a[0];
  n.s11_2 = a[1];
  n.T21_1 = a[2];
  n.T21_2 = a[3];
  n.kw22 = a[4];
  n.T22_1 = a[5];
  n.T22_2 = a[6];
  n.kw31 = a[7];
  n.T31_2 = a[8];
  n.T32_1 = a[9];
  n.T32_2 = a[10];
  n.s41_1 = a[11];
  n.s41_2 = a[12];
  return n;
}

WeightSet make_weights(const WeightNumbers& n) {
  const auto a = n.to_array();
  for (size_t i = 0; i < a.size(); ++i) {
    if (!(a[i] > 0.0) || !std::isfinite(a[i])) {
      throw DomainError(std::string("weight number ") + WeightNumbers::names()[i] +
                        " must be positive");
    }
  }
  if (!(n.s11_1 > n.s11_2)) throw DomainError("W11 needs s11_1 > s11_2");
  if (!(n.s41_1 > n.s41_2)) throw DomainError("W41 needs s41_1 > s41_2");

  auto lead = [](double t1, double t2) { return TransferFunction{{1.0, t1}, {1.0, t2}}; };
  WeightSet w;
  w.numbers = n;
  w.W11 = {{n.s11_1, 1.0}, {n.s11_2, 1.0}};
  w.W21 = lead(n.T21_1, n.T21_2) * lead(n.T21_1, n.T21_2);
  w.W22 = TransferFunction{{1.0 / n.kw22}, {1.0}} * lead(n.T22_1, n.T22_2);
  w.W31 = {{0.0, 1.0 / n.kw31}, {1.0, n.T31_2}};
  w.W32 = lead(n.T32_1, n.T32_2);
  w.W41 = {{n.s41_1, 1.0}, {n.s41_2, 1.0}};
  return w;
}

const std::array<Channel, 6>& channels() {
  static const std::array<Channel, 6> c{{{"T11", 0, 0},
                                         {"T21", 1, 0},
                                         {"T22", 1, 1},
                                         {"T31", 2, 0},
                                         {"T32", 2, 1},
                                         {"T41", 3, 0}}};
  return c;
}

namespace {

const std::array<std::string, 2> kW{"Pref", "wg"};
const std::array<std::string, 4> kZ{"Pref-p", "p", "wu", "q+V/Dq"};

const TransferFunction& weight_of(const WeightSet& w, int idx) {
  switch (idx) {
    case 0: return w.W11;
    case 1: return w.W21;
    case 2: return w.W22;
    case 3: return w.W31;
    case 4: return w.W32;
    default: return w.W41;
  }
}

}  // namespace

SynthesisProblem make_problem(const plant::ConverterParams& p, const plant::Setpoints& sp,
                              const WeightSet& weights) {
  p.validate();
  const auto ctrl = controllers::realize_phi(controllers::gains_to_phi(GainVector::initial(), p));
  auto op = plant::solve_equilibrium(p, sp, ctrl, {1.0, p.Vg});
  auto lin = plant::linearize(p, op.x, op.u, op.d);
  SynthesisProblem prob{p, op, lin, weights};
  return prob;
}

StateSpaceModel closed_loop(const StateSpaceModel& plant_lin, const StateSpaceModel& ctrl, double Dq) {
  Wiring w;
  for (const auto& y : plant::kOutputNames) {
    w.links.push_back({{Block::Plant, y}, {Block::Controller, plant::meas_channel(y)}});
  }
  for (const auto& u : plant::kInputNames) {
    w.links.push_back({{Block::Controller, u}, {Block::Plant, u}});
  }
  w.inputs.push_back({kW[0], {{{Block::Controller, plant::ref_channel("p")}, 1.0}}});
  // The frequency reference follows the grid.
  w.inputs.push_back({kW[1],
                      {{{Block::Plant, "wg"}, 1.0}, {{Block::Controller, plant::ref_channel("wu")}, 1.0}}});
  w.outputs.push_back({kZ[0], {{{Block::Plant, "p"}, -1.0}}, {{kW[0], 1.0}}});
  w.outputs.push_back({kZ[1], {{{Block::Plant, "p"}, 1.0}}, {}});
  w.outputs.push_back({kZ[2], {{{Block::Plant, "wu"}, 1.0}}, {}});
  w.outputs.push_back({kZ[3], {{{Block::Plant, "q"}, 1.0}, {{Block::Plant, "V"}, 1.0 / Dq}}, {}});
  return linsys::feedback_interconnect(plant_lin, ctrl, w);
}

StateSpaceModel closed_loop(const SynthesisProblem& problem, const GainVector& k) {
  const auto ctrl = controllers::realize_phi(controllers::gains_to_phi(k, problem.params));
  return closed_loop(problem.plant_lin, ctrl, problem.params.Dq);
}

std::vector<StateSpaceModel> channel_systems(const StateSpaceModel& cl) {
  std::vector<StateSpaceModel> out;
  out.reserve(6);
  for (const auto& c : channels()) {
    out.push_back(cl.select({kW[static_cast<size_t>(c.w)]}, {kZ[static_cast<size_t>(c.z)]}));
  }
  return out;
}

std::vector<StateSpaceModel> weighted_channels(const WeightSet& weights, const StateSpaceModel& cl) {
  auto out = channel_systems(cl);
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = linsys::series(out[i], linsys::realize(weight_of(weights, static_cast<int>(i))));
  }
  return out;
}

std::vector<StateSpaceModel> weighted_channels(const SynthesisProblem& problem, const GainVector& k) {
  return weighted_channels(problem.weights, closed_loop(problem, k));
}

Evaluation evaluate(const SynthesisProblem& problem, const GainVector& k) {
  Evaluation ev;
  ev.channel_norms.fill(std::numeric_limits<double>::quiet_NaN());
  ev.value = std::numeric_limits<double>::infinity();
  ev.max_real = std::numeric_limits<double>::infinity();
  const auto arr = k.to_array();
  if (!k.is_valid() ||
      !std::all_of(arr.begin(), arr.end(), [](double v) { return std::isfinite(v); })) {
    return ev;
  }
  try {
    const auto cl = closed_loop(problem, k);
    ev.max_real = linsys::eigenvalues(cl.A()).max_real();
    if (!(ev.max_real < 0.0)) {
      ev.value = kBarrierScale * (1.0 + ev.max_real);
      return ev;
    }
    const auto ch = weighted_channels(problem.weights, cl);
    double worst = 0.0;
    for (size_t i = 0; i < ch.size(); ++i) {
      ev.channel_norms[i] = linsys::hinf_norm(ch[i], problem.norm_tol);
      worst = std::max(worst, ev.channel_norms[i]);
    }
    ev.value = worst;
    ev.stable = true;
  } catch (const Error&) {
    // Ill-posed loop or a failed eigenvalue solve: treat as infeasible.
    ev.stable = false;
    ev.value = std::numeric_limits<double>::infinity();
  }
  return ev;
}

double objective(const SynthesisProblem& problem, const GainVector& k) {
  return evaluate(problem, k).value;
}

std::array<double, 11> gain_scales(const GainVector& k) {
  // Floors keep zero-initialized couplings searchable at a sensible size.
  static const std::array<double, 11> floor{10.0, 40.0, 0.1, 0.5, 0.01, 2.0,
                                            0.1,  0.05, 0.1, 0.01, 0.1};
  const auto a = k.to_array();
  std::array<double, 11> s{};
  for (size_t i = 0; i < s.size(); ++i) s[i] = std::max(0.1 * std::abs(a[i]), floor[i]);
  return s;
}

namespace {

constexpr int kDim = GainVector::size;
using Point = std::array<double, kDim>;

struct Vertex {
  Point y{};
  Evaluation ev;
};

struct StartResult {
  Vertex best;
  std::vector<HistoryEntry> history;
  int evaluations = 0;
};

class Search {
 public:
  Search(const SynthesisProblem& prob, const std::array<double, 11>& scale)
      : prob_(prob), scale_(scale) {}

  Vertex eval(const Point& y) {
    ++count_;
    std::array<double, 11> k{};
    for (int i = 0; i < kDim; ++i) k[static_cast<size_t>(i)] = y[static_cast<size_t>(i)] * scale_[static_cast<size_t>(i)];
    return {y, evaluate(prob_, GainVector::from_array(k))};
  }

  int count() const { return count_; }

 private:
  const SynthesisProblem& prob_;
  std::array<double, 11> scale_;
  int count_ = 0;
};

bool less(const Vertex& a, const Vertex& b) { return a.ev.value < b.ev.value; }

StartResult nelder_mead(const SynthesisProblem& prob, const std::array<double, 11>& scale,
                        const Point& y0, int start, const SynthesisOptions& opt) {
  Search s(prob, scale);
  StartResult out;
  std::vector<Vertex> simplex;
  auto build = [&](const Vertex& base) {
    simplex.assign(1, base);
    for (int i = 0; i < kDim; ++i) {
      Point y = base.y;
      y[static_cast<size_t>(i)] += 1.0;
      simplex.push_back(s.eval(y));
    }
    std::stable_sort(simplex.begin(), simplex.end(), less);
  };
  build(s.eval(y0));

  int it = 0;
  int rebuilds = 0;
  double value_at_rebuild = simplex.front().ev.value;
  while (it < opt.max_iters) {
    ++it;
    const Vertex& worst = simplex.back();
    Point c{};
    for (int v = 0; v < kDim; ++v)
      for (int i = 0; i < kDim; ++i) c[static_cast<size_t>(i)] += simplex[static_cast<size_t>(v)].y[static_cast<size_t>(i)] / kDim;
    auto along = [&](double t) {
      Point y;
      for (int i = 0; i < kDim; ++i) {
        const auto ii = static_cast<size_t>(i);
        y[ii] = c[ii] + t * (worst.y[ii] - c[ii]);
      }
      return y;
    };
    const Vertex r = s.eval(along(-1.0));
    if (r.ev.value < simplex.front().ev.value) {
      const Vertex e = s.eval(along(-2.0));
      simplex.back() = e.ev.value < r.ev.value ? e : r;
    } else if (r.ev.value < simplex[simplex.size() - 2].ev.value) {
      simplex.back() = r;
    } else {
      const bool outside = r.ev.value < worst.ev.value;
      const Vertex ct = s.eval(along(outside ? -0.5 : 0.5));
      if (ct.ev.value < (outside ? r.ev.value : worst.ev.value)) {
        simplex.back() = ct;
      } else {
        // Shrink toward the best vertex.
        for (size_t v = 1; v < simplex.size(); ++v) {
          Point y;
          for (size_t i = 0; i < y.size(); ++i) {
            y[i] = simplex[0].y[i] + 0.5 * (simplex[v].y[i] - simplex[0].y[i]);
          }
          simplex[v] = s.eval(y);
        }
      }
    }
    std::stable_sort(simplex.begin(), simplex.end(), less);
    const auto& best = simplex.front();
    out.history.push_back({start, it, best.ev.value, -best.ev.max_real});

    const double fb = best.ev.value;
    const double fw = simplex.back().ev.value;
    if (std::isfinite(fw) && fw - fb <= opt.tol * std::max(std::abs(fb), 1e-12)) {
      // Collapsed simplex: rebuild once around the best point to check for
      // premature convergence, stop when that no longer pays off.
      const bool improved = fb < value_at_rebuild * (1.0 - opt.tol);
      if (rebuilds > 0 && !improved) break;
      ++rebuilds;
      value_at_rebuild = fb;
      build(best);
    }
  }
  out.best = simplex.front();
  out.evaluations = s.count();
  return out;
}

}  // namespace

SynthesisResult synthesize(const SynthesisProblem& problem, const GainVector& k_init,
                           const SynthesisOptions& options) {
  if (options.max_iters < 0) throw DomainError("max_iters must be non-negative");
  if (options.restarts < 0) throw DomainError("restarts must be non-negative");
  if (!(options.tol > 0.0)) throw DomainError("tol must be positive");
  k_init.validate();

  const auto scale = gain_scales(k_init);
  const auto k0 = k_init.to_array();
  Point y0{};
  for (size_t i = 0; i < y0.size(); ++i) y0[i] = k0[i] / scale[i];

  SynthesisResult res;
  const Evaluation init = evaluate(problem, k_init);
  res.initial_objective = init.value;

  if (options.max_iters == 0) {
    res.K_opt = k_init;
    res.gamma = init.value;
    res.evaluation = init;
    res.stable = init.stable;
    res.evaluations = 1;
    return res;
  }

  std::vector<Point> starts{y0};
  for (int r = 1; r <= options.restarts; ++r) {
    std::mt19937_64 rng(options.seed + static_cast<std::uint64_t>(r));
    std::normal_distribution<double> g(0.0, 1.0);
    Point y = y0;
    for (auto& v : y) v += g(rng);
    // Keep the start inside the gain invariants (kidc >= 0, k22 > 0).
    y[1] = std::abs(y[1]);
    y[5] = std::max(std::abs(y[5]), 1e-3);
    starts.push_back(y);
  }

  std::vector<StartResult> runs(starts.size());
  if (options.parallel && starts.size() > 1) {
    std::vector<std::future<StartResult>> jobs;
    for (size_t i = 0; i < starts.size(); ++i) {
      jobs.push_back(std::async(std::launch::async, nelder_mead, std::cref(problem), scale, starts[i],
                                static_cast<int>(i), std::cref(options)));
    }
    for (size_t i = 0; i < jobs.size(); ++i) runs[i] = jobs[i].get();
  } else {
    for (size_t i = 0; i < starts.size(); ++i) {
      runs[i] = nelder_mead(problem, scale, starts[i], static_cast<int>(i), options);
    }
  }

  size_t best = 0;
  for (size_t i = 1; i < runs.size(); ++i) {
    if (runs[i].best.ev.value < runs[best].best.ev.value) best = i;
  }
  for (auto& r : runs) {
    res.evaluations += r.evaluations;
    res.history.insert(res.history.end(), r.history.begin(), r.history.end());
  }
  const auto& b = runs[best].best;
  std::array<double, 11> k{};
  for (size_t i = 0; i < k.size(); ++i) k[i] = b.y[i] * scale[i];
  res.K_opt = GainVector::from_array(k);
  res.evaluation = b.ev;
  res.gamma = b.ev.value;
  res.stable = b.ev.stable;
  res.evaluations += 1;
  if (!res.stable) {
    std::ostringstream os;
    os << "synthesis found no stabilizing gains; best spectral abscissa " << b.ev.max_real;
    throw StabilityError(os.str());
  }
  return res;
}

}  // namespace gfm::synthesis
