#include "gfm/simkit.hpp"

#include "gfm/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace gfm::simkit {

using linsys::Matrix;
using linsys::Vector;
using plant::ControlInput;
using plant::OutputVector;
using plant::PlantState;

std::string to_string(Quantity q) {
  switch (q) {
    case Quantity::Pref: return "Pref";
    case Quantity::Qref: return "Qref";
    case Quantity::Vref: return "Vref";
    case Quantity::Vdcref: return "Vdcref";
    case Quantity::omega_g: return "omega_g";
    case Quantity::Vg: return "Vg";
  }
  return "?";
}

Quantity parse_quantity(const std::string& text) {
  for (auto q : {Quantity::Pref, Quantity::Qref, Quantity::Vref, Quantity::Vdcref,
                 Quantity::omega_g, Quantity::Vg}) {
    if (to_string(q) == text) return q;
  }
  if (text == "wg") return Quantity::omega_g;
  throw DomainError("unknown event quantity '" + text + "'");
}

void Scenario::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("scenario dt must be positive");
  if (!(duration > 0.0) || !std::isfinite(duration)) {
    throw DomainError("scenario duration must be positive");
  }
  if (!(record_dt >= 0.0)) throw DomainError("scenario record_dt must be non-negative");
  double last = 0.0;
  for (const auto& e : events) {
    if (!(e.time >= 0.0 && e.time <= duration)) {
      throw DomainError("event time outside [0, duration]");
    }
    if (e.time < last) throw DomainError("events must be time-ordered");
    if (!std::isfinite(e.value)) throw DomainError("event value must be finite");
    last = e.time;
  }
}

Scenario pref_step() {
  Scenario s;
  s.name = "pref_step";
  s.duration = 3.0;
  s.events.push_back({1.0, Quantity::Pref, 1.0});
  return s;
}

Scenario wg_step() {
  Scenario s;
  s.name = "wg_step";
  s.duration = 5.0;
  s.events.push_back({1.0, Quantity::omega_g, 0.998});
  return s;
}

std::vector<std::string> scenario_names() { return {"pref_step", "wg_step"}; }

Scenario scenario_preset(const std::string& name) {
  if (name == "pref_step") return pref_step();
  if (name == "wg_step") return wg_step();
  throw DomainError("unknown scenario '" + name + "'");
}

// --- metrics ------------------------------------------------------------------------------

Metric series_metrics(const std::vector<double>& t, const std::vector<double>& v, Window w) {
  if (t.size() != v.size()) throw DimensionError("series_metrics: length mismatch");
  Metric m;
  if (t.empty()) return m;
  const double end = w.end < 0.0 ? t.back() : w.end;
  size_t i0 = 0;
  while (i0 < t.size() && t[i0] < w.start) ++i0;
  size_t i1 = i0;
  while (i1 < t.size() && t[i1] <= end) ++i1;
  if (i1 - i0 < 2) return m;

  const size_t n = i1 - i0;
  const size_t tail = std::max<size_t>(n / 10, 2);
  double ss = 0.0;
  for (size_t i = i1 - tail; i < i1; ++i) ss += v[i];
  ss /= static_cast<double>(tail);

  m.initial = v[i0];
  m.steady_state = ss;
  m.step = ss - m.initial;
  const double mag = std::abs(m.step);

  // Drift between the two halves of the tail.
  const size_t half = tail / 2;
  double a = 0.0, b = 0.0;
  for (size_t i = i1 - tail; i < i1 - half; ++i) a += v[i];
  for (size_t i = i1 - half; i < i1; ++i) b += v[i];
  a /= static_cast<double>(tail - half);
  b /= static_cast<double>(half);
  const double drift = std::abs(b - a);
  const double scale = std::max(std::abs(ss), 1.0);
  if (mag <= 1e-12 * scale) {
    // No step: constant within rounding.
    m.available = drift <= 1e-9 * scale;
    m.peak = ss;
    return m;
  }
  m.available = drift <= 1e-3 * mag;

  const double dir = m.step > 0.0 ? 1.0 : -1.0;
  m.peak = v[i0];
  for (size_t i = i0; i < i1; ++i) {
    if (dir * (v[i] - m.peak) > 0.0) m.peak = v[i];
  }
  m.overshoot = dir * (m.peak - ss) / mag;

  const double band = 0.02 * mag;
  size_t last_out = i0;
  bool ever_out = false;
  for (size_t i = i0; i < i1; ++i) {
    if (std::abs(v[i] - ss) > band) {
      last_out = i;
      ever_out = true;
    }
  }
  if (!ever_out) {
    m.settling_time = 0.0;
  } else if (last_out + 1 >= i1) {
    m.settling_time = t[i1 - 1] - t[i0];
    m.available = false;
  } else {
    // Interpolate the band crossing between the last outside sample and the next.
    const double e0 = std::abs(v[last_out] - ss);
    const double e1 = std::abs(v[last_out + 1] - ss);
    const double f = e0 == e1 ? 1.0 : (e0 - band) / (e0 - e1);
    m.settling_time = t[last_out] + f * (t[last_out + 1] - t[last_out]) - t[i0];
  }
  return m;
}

std::vector<double> channel(const SimResult& r, const std::string& name) {
  std::vector<double> out;
  out.reserve(r.t.size());
  for (size_t i = 0; i < r.t.size(); ++i) {
    const auto& y = r.y[i];
    const auto& u = r.u[i];
    if (name == "vdc") out.push_back(y.vdc);
    else if (name == "p") out.push_back(y.p);
    else if (name == "wu") out.push_back(y.omega_u);
    else if (name == "q") out.push_back(y.q);
    else if (name == "V") out.push_back(y.V);
    else if (name == "iu") out.push_back(u.iu);
    else if (name == "Eu") out.push_back(u.Eu);
    else throw DomainError("unknown channel '" + name + "'");
  }
  return out;
}

Metric metrics(const SimResult& r, const std::string& channel_name, Window w) {
  return series_metrics(r.t, channel(r, channel_name), w);
}

// --- simulation ---------------------------------------------------------------------------

namespace {

/// Controller realization split into fixed-size blocks for the inner loop.
struct Loop {
  Matrix a, b_ref, b_meas;
  Eigen::Matrix<double, 3, Eigen::Dynamic> c;
  Eigen::Matrix<double, 3, 5> d_ref, d_meas;
  Eigen::Matrix3d q;  // resolves the wu feedthrough
  int nc = 0;

  explicit Loop(const linsys::StateSpaceModel& k) {
    std::vector<std::string> refs, meas, outs{plant::kInputNames.begin(), plant::kInputNames.end()};
    for (const auto& y : plant::kOutputNames) {
      refs.push_back(plant::ref_channel(y));
      meas.push_back(plant::meas_channel(y));
    }
    const auto r = k.select(refs, outs);
    const auto m = k.select(meas, outs);
    nc = static_cast<int>(k.states());
    a = k.A();
    b_ref = r.B();
    b_meas = m.B();
    c = k.C();
    d_ref = r.D();
    d_meas = m.D();
    Eigen::Matrix3d loop = Eigen::Matrix3d::Identity();
    loop.col(1) -= d_meas.col(2);
    q = loop.inverse();
  }
};

Eigen::Matrix<double, 5, 1> as_vec(const std::array<double, 5>& a) {
  return Eigen::Map<const Eigen::Matrix<double, 5, 1>>(a.data());
}

struct Inputs {
  plant::Setpoints sp;
  plant::Disturbance d;
};

/// Derivative of the stacked state [x; xi]; also returns u and y.
void rhs(const plant::ConverterParams& p, const Loop& k, const Inputs& in, const Vector& z,
         Vector& dz, ControlInput& u_out, OutputVector& y_out) {
  const auto x = PlantState::from_vector(z.head(8));
  ControlInput probe = in.sp.u0;
  probe.omega_u = 0.0;
  const auto y0 = as_vec(plant::g_outputs(x, probe).as_array());
  const auto r = as_vec(in.sp.yref.as_array());
  Eigen::Vector3d v(in.sp.u0.iu, in.sp.u0.omega_u, in.sp.u0.Eu);
  v += k.d_ref * r + k.d_meas * y0;
  if (k.nc > 0) v += k.c * z.tail(k.nc);
  const Eigen::Vector3d u = k.q * v;
  u_out = {u(0), u(1), u(2)};
  y_out = plant::g_outputs(x, u_out);
  dz.head(8) = plant::f_dynamics(x, u_out, in.d, p).to_vector();
  if (k.nc > 0) {
    dz.tail(k.nc) = k.a * z.tail(k.nc) + k.b_ref * r + k.b_meas * as_vec(y_out.as_array());
  }
}

void apply(Inputs& in, const Event& e) {
  switch (e.quantity) {
    case Quantity::Pref: in.sp.yref.Pref = e.value; break;
    case Quantity::Qref: in.sp.yref.Qref = e.value; break;
    case Quantity::Vref: in.sp.yref.Vref = e.value; break;
    case Quantity::Vdcref: in.sp.yref.Vdcref = e.value; break;
    case Quantity::omega_g:
      // The frequency reference follows the grid.
      in.d.omega_g = e.value;
      in.sp.yref.omega_g_ref = e.value;
      break;
    case Quantity::Vg: in.d.Vg = e.value; break;
  }
}

}  // namespace

SimResult simulate(const plant::ConverterParams& p, const controllers::PhiSpec& phi,
                   const Scenario& sc, const SimOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  sc.validate();
  p.validate();
  phi.validate();
  const auto ctrl = controllers::realize_phi(phi);
  const Loop k(ctrl);

  SimResult res;
  res.initial = plant::solve_equilibrium(p, sc.setpoints, ctrl, sc.disturbance, opt.equilibrium);

  const auto steps = static_cast<long>(std::llround(sc.duration / sc.dt));
  const long every =
      sc.record_dt > 0.0 ? std::max<long>(1, std::llround(sc.record_dt / sc.dt)) : 1;
  if (sc.record_dt > 0.0 && std::abs(every * sc.dt - sc.record_dt) > 1e-9 * sc.record_dt) {
    res.warnings.push_back("record_dt is not a multiple of dt; recording every " +
                           std::to_string(every) + " steps");
  }

  // Events snapped to the step grid.
  std::vector<std::pair<long, Event>> events;
  for (const auto& e : sc.events) {
    const long idx = std::llround(e.time / sc.dt);
    if (std::abs(idx * sc.dt - e.time) > 1e-9 * std::max(1.0, e.time)) {
      std::ostringstream os;
      os << "event at t = " << e.time << " s moved to " << idx * sc.dt << " s";
      res.warnings.push_back(os.str());
    }
    events.emplace_back(idx, e);
  }

  Inputs in{res.initial.setpoints, res.initial.d};
  const int n = 8 + k.nc;
  Vector z(n);
  z.head(8) = res.initial.x.to_vector();
  if (k.nc > 0) z.tail(k.nc) = res.initial.xi;

  const size_t expected = static_cast<size_t>(steps / every + 2);
  res.t.reserve(expected);
  res.x.reserve(expected);
  res.y.reserve(expected);
  res.u.reserve(expected);

  Vector k1(n), k2(n), k3(n), k4(n), tmp(n);
  ControlInput u;
  OutputVector y;
  size_t next_event = 0;
  const double h = sc.dt;

  auto record = [&](long i) {
    Vector dz(n);
    rhs(p, k, in, z, dz, u, y);
    res.t.push_back(static_cast<double>(i) * h);
    res.x.push_back(PlantState::from_vector(z.head(8)));
    res.y.push_back(y);
    res.u.push_back(u);
  };

  for (long i = 0;; ++i) {
    while (next_event < events.size() && events[next_event].first <= i) {
      apply(in, events[next_event].second);
      ++next_event;
    }
    if (i % every == 0 || i == steps) record(i);
    if (i == steps) break;

    try {
      rhs(p, k, in, z, k1, u, y);
      tmp = z + 0.5 * h * k1;
      rhs(p, k, in, tmp, k2, u, y);
      tmp = z + 0.5 * h * k2;
      rhs(p, k, in, tmp, k3, u, y);
      tmp = z + h * k3;
      rhs(p, k, in, tmp, k4, u, y);
    } catch (const DomainError& e) {
      res.diverged = true;
      res.truncation = static_cast<size_t>(i);
      res.reason = e.what();
      break;
    }
    z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    z(6) = plant::wrap_angle(z(6));

    if (!z.allFinite() || z.norm() > opt.divergence_norm || !(z(7) > plant::kMinVdc)) {
      res.diverged = true;
      res.truncation = static_cast<size_t>(i + 1);
      std::ostringstream os;
      os << "diverged at t = " << static_cast<double>(i + 1) * h << " s";
      res.reason = os.str();
      break;
    }
  }

  if (!res.diverged) {
    const double w0 = sc.events.empty() ? 0.0 : sc.events.front().time;
    for (size_t c = 0; c < plant::kOutputNames.size(); ++c) {
      res.metrics[c] = metrics(res, plant::kOutputNames[c], {w0, -1.0});
    }
  }
  res.elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

std::vector<CompareRow> compare(const plant::ConverterParams& p,
                                const std::vector<controllers::PhiSpec>& specs, const Scenario& sc,
                                const SimOptions& opt) {
  std::vector<std::future<SimResult>> jobs;
  jobs.reserve(specs.size());
  for (const auto& s : specs) {
    jobs.push_back(std::async(std::launch::async, [&p, s, &sc, &opt] { return simulate(p, s, sc, opt); }));
  }
  std::vector<CompareRow> rows;
  for (size_t i = 0; i < specs.size(); ++i) {
    CompareRow row;
    row.name = specs[i].name;
    try {
      row.result = jobs[i].get();
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// --- CSV ----------------------------------------------------------------------------------

void write_csv(const SimResult& r, std::ostream& out) {
  out << kCsvHeader << '\n';
  char buf[32];
  for (size_t i = 0; i < r.t.size(); ++i) {
    const auto& x = r.x[i];
    const auto& y = r.y[i];
    const auto& u = r.u[i];
    const double row[15] = {r.t[i], x.id,  x.iq,      x.vd, x.vq, x.iod, x.ioq, x.delta,
                            x.vdc,  y.p,   y.omega_u, y.q,  y.V,  u.iu,  u.Eu};
    for (int c = 0; c < 15; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", row[c]);
      out << buf << (c == 14 ? '\n' : ',');
    }
  }
}

void export_csv(const SimResult& r, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  write_csv(r, f);
  f.flush();
  if (!f) throw Error("failed writing '" + path + "'");
}

std::vector<std::array<double, 15>> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw Error("CSV header mismatch");
  std::vector<std::array<double, 15>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::array<double, 15> row{};
    const char* s = line.c_str();
    for (int c = 0; c < 15; ++c) {
      char* end = nullptr;
      row[static_cast<size_t>(c)] = std::strtod(s, &end);
      if (end == s) throw Error("malformed CSV row: " + line);
      s = *end == ',' ? end + 1 : end;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace gfm::simkit
