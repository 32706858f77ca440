#include "gfm/plant.hpp"

#include "gfm/errors.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace gfm::plant {

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw DomainError(std::string(name) + " must be positive and finite");
  }
}

void check_base(const BaseValues& b) {
  require_positive(b.Sn, "Sn");
  require_positive(b.Vn, "Vn");
  require_positive(b.Vdc_base, "Vdc_base");
  require_positive(b.omega_n, "omega_n");
}

}  // namespace

void ConverterParams::validate() const {
  require_positive(omega_b, "omega_b");
  require_positive(Lf, "Lf");
  require_positive(Cf, "Cf");
  require_positive(Lg, "Lg");
  require_positive(Rg, "Rg");
  require_positive(Cdc, "Cdc");
  require_positive(Vg, "Vg");
  if (!(Rf >= 0.0) || !std::isfinite(Rf)) throw DomainError("Rf must be non-negative");
  if (!(Dp > 0.0 && Dp < 1.0)) throw DomainError("Dp must lie in (0, 1)");
  if (!(Dq > 0.0 && Dq < 1.0)) throw DomainError("Dq must lie in (0, 1)");
  check_base(base);
}

ConverterParams per_unit_convert(const SiParameters& si) {
  check_base(si.base);
  const double zb = si.base.impedance();
  const double zdc = si.base.dc_impedance();
  const double wn = si.base.omega_n;
  ConverterParams p;
  p.omega_b = wn;
  p.Lf = wn * si.Lf / zb;
  p.Lg = wn * si.Lg / zb;
  p.Cf = wn * si.Cf * zb;
  p.Cdc = wn * si.Cdc * zdc;
  p.Rg = si.Rg / zb;
  p.Rf = si.Rf / zb;
  p.Dp = si.Dp;
  p.Dq = si.Dq;
  p.Vg = si.Vg;
  p.base = si.base;
  p.include_rf = si.include_rf;
  p.validate();
  return p;
}

SiParameters to_si(const ConverterParams& p) {
  check_base(p.base);
  const double zb = p.base.impedance();
  const double zdc = p.base.dc_impedance();
  const double wn = p.base.omega_n;
  SiParameters si;
  si.base = p.base;
  si.Lf = p.Lf * zb / wn;
  si.Lg = p.Lg * zb / wn;
  si.Cf = p.Cf / (wn * zb);
  si.Cdc = p.Cdc / (wn * zdc);
  si.Rg = p.Rg * zb;
  si.Rf = p.Rf * zb;
  si.Dp = p.Dp;
  si.Dq = p.Dq;
  si.Vg = p.Vg;
  si.include_rf = p.include_rf;
  return si;
}

SiParameters reference_si() {
  // The lab table lists Rf; without it the network mode near omega_n is
  // too lightly damped for the reference VSG design.
  SiParameters si;
  si.include_rf = true;
  return si;
}

ConverterParams reference_params() { return per_unit_convert(reference_si()); }

Vector PlantState::to_vector() const {
  Vector v(size);
  v << id, iq, vd, vq, iod, ioq, delta, vdc;
  return v;
}

PlantState PlantState::from_vector(const Vector& v) {
  if (v.size() != size) throw DimensionError("PlantState expects 8 entries");
  return {v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7)};
}

std::string ref_channel(const std::string& output) { return "ref:" + output; }
std::string meas_channel(const std::string& output) { return "meas:" + output; }

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  a = std::remainder(a, 2.0 * pi);
  if (a <= -pi) a += 2.0 * pi;
  return a;
}

PlantState f_dynamics(const PlantState& x, const ControlInput& u, const Disturbance& d,
                      const ConverterParams& p) {
  if (!(x.vdc > kMinVdc)) {
    std::ostringstream os;
    os << "f_dynamics: vdc = " << x.vdc << " is at or below the singularity threshold";
    throw DomainError(os.str());
  }
  const double wb = p.omega_b;
  const double wu = u.omega_u;
  const double c = std::cos(x.delta);
  const double s = std::sin(x.delta);
  PlantState dx;
  dx.id = wb / p.Lf * u.Eu - wb / p.Lf * x.vd + wb * wu * x.iq;
  dx.iq = -wb / p.Lf * x.vq - wb * wu * x.id;
  if (p.include_rf) {
    dx.id -= wb * p.Rf / p.Lf * x.id;
    dx.iq -= wb * p.Rf / p.Lf * x.iq;
  }
  dx.vd = wb / p.Cf * x.id - wb / p.Cf * x.iod + wb * wu * x.vq;
  dx.vq = wb / p.Cf * x.iq - wb / p.Cf * x.ioq - wb * wu * x.vd;
  dx.iod = wb / p.Lg * x.vd - wb / p.Lg * d.Vg * c - wb * p.Rg / p.Lg * x.iod + wb * wu * x.ioq;
  dx.ioq = wb / p.Lg * x.vq + wb / p.Lg * d.Vg * s - wb * p.Rg / p.Lg * x.ioq - wb * wu * x.iod;
  dx.delta = wb * wu - wb * d.omega_g;
  dx.vdc = wb / p.Cdc * u.iu - wb * u.Eu * x.id / (p.Cdc * x.vdc);
  return dx;
}

OutputVector g_outputs(const PlantState& x, const ControlInput& u) {
  OutputVector y;
  y.vdc = x.vdc;
  y.p = x.vd * x.iod + x.vq * x.ioq;
  y.omega_u = u.omega_u;
  y.q = -x.vd * x.ioq + x.vq * x.iod;
  y.V = std::hypot(x.vd, x.vq);
  return y;
}

StateSpaceModel linearize(const ConverterParams& p, const PlantState& x, const ControlInput& u,
                          const Disturbance& d) {
  if (!(x.vdc > kMinVdc)) throw DomainError("linearize: vdc at or below the singularity threshold");
  const double wb = p.omega_b;
  const double wu = u.omega_u;
  const double c = std::cos(x.delta);
  const double s = std::sin(x.delta);
  enum { ID, IQ, VD, VQ, IOD, IOQ, DELTA, VDC };
  enum { IU, WU, EU, WG, VG };

  Matrix a = Matrix::Zero(8, 8);
  Matrix b = Matrix::Zero(8, 5);
  const double rf = p.include_rf ? wb * p.Rf / p.Lf : 0.0;

  a(ID, ID) = -rf;
  a(ID, IQ) = wb * wu;
  a(ID, VD) = -wb / p.Lf;
  b(ID, EU) = wb / p.Lf;
  b(ID, WU) = wb * x.iq;

  a(IQ, IQ) = -rf;
  a(IQ, VQ) = -wb / p.Lf;
  a(IQ, ID) = -wb * wu;
  b(IQ, WU) = -wb * x.id;

  a(VD, ID) = wb / p.Cf;
  a(VD, IOD) = -wb / p.Cf;
  a(VD, VQ) = wb * wu;
  b(VD, WU) = wb * x.vq;

  a(VQ, IQ) = wb / p.Cf;
  a(VQ, IOQ) = -wb / p.Cf;
  a(VQ, VD) = -wb * wu;
  b(VQ, WU) = -wb * x.vd;

  a(IOD, VD) = wb / p.Lg;
  a(IOD, DELTA) = wb / p.Lg * d.Vg * s;
  a(IOD, IOD) = -wb * p.Rg / p.Lg;
  a(IOD, IOQ) = wb * wu;
  b(IOD, WU) = wb * x.ioq;
  b(IOD, VG) = -wb / p.Lg * c;

  a(IOQ, VQ) = wb / p.Lg;
  a(IOQ, DELTA) = wb / p.Lg * d.Vg * c;
  a(IOQ, IOQ) = -wb * p.Rg / p.Lg;
  a(IOQ, IOD) = -wb * wu;
  b(IOQ, WU) = -wb * x.iod;
  b(IOQ, VG) = wb / p.Lg * s;

  b(DELTA, WU) = wb;
  b(DELTA, WG) = -wb;

  a(VDC, ID) = -wb * u.Eu / (p.Cdc * x.vdc);
  a(VDC, VDC) = wb * u.Eu * x.id / (p.Cdc * x.vdc * x.vdc);
  b(VDC, IU) = wb / p.Cdc;
  b(VDC, EU) = -wb * x.id / (p.Cdc * x.vdc);

  enum { Y_VDC, Y_P, Y_WU, Y_Q, Y_V };
  Matrix cm = Matrix::Zero(5, 8);
  Matrix dm = Matrix::Zero(5, 5);
  cm(Y_VDC, VDC) = 1.0;
  cm(Y_P, VD) = x.iod;
  cm(Y_P, IOD) = x.vd;
  cm(Y_P, VQ) = x.ioq;
  cm(Y_P, IOQ) = x.vq;
  dm(Y_WU, WU) = 1.0;
  cm(Y_Q, VD) = -x.ioq;
  cm(Y_Q, IOQ) = -x.vd;
  cm(Y_Q, VQ) = x.iod;
  cm(Y_Q, IOD) = x.vq;
  // V is not differentiable at the origin; the gradient is taken as zero there.
  const double v = std::hypot(x.vd, x.vq);
  if (v > 0.0) {
    cm(Y_V, VD) = x.vd / v;
    cm(Y_V, VQ) = x.vq / v;
  }

  std::vector<std::string> in{kInputNames.begin(), kInputNames.end()};
  in.insert(in.end(), kDisturbanceNames.begin(), kDisturbanceNames.end());
  std::vector<std::string> out{kOutputNames.begin(), kOutputNames.end()};
  return StateSpaceModel(a, b, cm, dm, in, out);
}

// --- equilibrium -------------------------------------------------------------------

namespace {

struct ControllerBlocks {
  Matrix a, b_ref, b_meas, c, d_ref, d_meas;
};

ControllerBlocks split_controller(const StateSpaceModel& ctrl) {
  std::vector<std::string> refs, meas, outs{kInputNames.begin(), kInputNames.end()};
  for (const auto& y : kOutputNames) {
    refs.push_back(ref_channel(y));
    meas.push_back(meas_channel(y));
  }
  const auto r = ctrl.select(refs, outs);
  const auto m = ctrl.select(meas, outs);
  return {ctrl.A(), r.B(), m.B(), ctrl.C(), r.D(), m.D()};
}

Vector refs_vector(const References& r) {
  const auto a = r.as_array();
  return Eigen::Map<const Vector>(a.data(), 5);
}

Vector outputs_vector(const OutputVector& y) {
  const auto a = y.as_array();
  return Eigen::Map<const Vector>(a.data(), 5);
}

Vector u_vector(const ControlInput& u) {
  Vector v(3);
  v << u.iu, u.omega_u, u.Eu;
  return v;
}

/// True when some marginal (zero) controller mode is visible in output row `row`.
bool row_has_integral_action(const ControllerBlocks& k, int row) {
  if (k.a.rows() == 0) return false;
  linsys::Spectrum s;
  linsys::CMatrix v;
  linsys::eigen_decomposition(k.a, s, v);
  for (size_t i = 0; i < s.eigenvalues.size(); ++i) {
    if (std::abs(s.eigenvalues[i]) > 1e-9 * std::max(1.0, k.a.norm())) continue;
    const auto vi = v.col(static_cast<Eigen::Index>(i));
    if (std::abs((k.c.row(row).cast<linsys::Complex>() * vi)(0, 0)) > 1e-12 * vi.norm()) return true;
  }
  return false;
}

}  // namespace

ControlInput controller_output(const StateSpaceModel& ctrl, const Vector& xi, const Setpoints& sp,
                               const PlantState& x) {
  const auto k = split_controller(ctrl);
  // y depends on u only through wu = u(1).
  ControlInput probe = sp.u0;
  probe.omega_u = 0.0;
  Vector y0 = outputs_vector(g_outputs(x, probe));
  Vector rhs = u_vector(sp.u0) + k.d_ref * refs_vector(sp.yref) + k.d_meas * y0;
  if (xi.size() > 0) rhs += k.c * xi;
  Matrix loop = Matrix::Identity(3, 3);
  loop.col(1) -= k.d_meas.col(2);
  const Vector u = loop.fullPivLu().solve(rhs);
  return {u(0), u(1), u(2)};
}

OperatingPoint solve_equilibrium(const ConverterParams& p, const Setpoints& sp_in,
                                 const StateSpaceModel& ctrl, const Disturbance& d,
                                 const EquilibriumOptions& opt) {
  p.validate();
  const auto k = split_controller(ctrl);
  const auto nc = static_cast<int>(ctrl.states());

  OperatingPoint op;
  op.d = d;
  op.setpoints = sp_in;
  op.dispatched_i0 = opt.dispatch_setpoints && !row_has_integral_action(k, 0);
  op.dispatched_E0 = opt.dispatch_setpoints && !row_has_integral_action(k, 2);
  const int ns = (op.dispatched_i0 ? 1 : 0) + (op.dispatched_E0 ? 1 : 0);
  const int nz = PlantState::size + nc + ns;

  PlantState x0;
  if (opt.guess) {
    x0 = *opt.guess;
  } else {
    const double pref = sp_in.yref.Pref, qref = sp_in.yref.Qref;
    x0 = {pref, -qref, 1.0, 0.0, pref, -qref, 0.1, 1.0};
  }
  Setpoints sp = sp_in;
  if (op.dispatched_i0) sp.u0.iu = sp_in.yref.Pref;
  if (op.dispatched_E0) sp.u0.Eu = 1.0;

  const Vector r = refs_vector(sp.yref);
  Matrix loop = Matrix::Identity(3, 3);
  loop.col(1) -= k.d_meas.col(2);
  const Matrix q_loop = loop.inverse();

  // Initial controller states: least-squares fit to a steady controller that
  // produces the guessed control input.
  Vector xi = Vector::Zero(nc);
  if (nc > 0) {
    ControlInput ug{sp.yref.Pref, d.omega_g, 1.0};
    const Vector y = outputs_vector(g_outputs(x0, ug));
    Matrix lhs(nc + 3, nc);
    lhs << k.a, k.c;
    Vector rhs(nc + 3);
    rhs.head(nc) = -(k.b_ref * r + k.b_meas * y);
    rhs.tail(3) = u_vector(ug) - u_vector(sp.u0) - k.d_ref * r - k.d_meas * y;
    xi = lhs.completeOrthogonalDecomposition().solve(rhs);
  }

  auto unpack = [&](const Vector& z, PlantState& x, Vector& xs, Setpoints& s) {
    x = PlantState::from_vector(z.head(PlantState::size));
    xs = z.segment(PlantState::size, nc);
    s = sp;
    int off = PlantState::size + nc;
    if (op.dispatched_i0) s.u0.iu = z(off++);
    if (op.dispatched_E0) s.u0.Eu = z(off++);
  };

  auto residual = [&](const Vector& z, Vector& f_out) {
    PlantState x;
    Vector xs;
    Setpoints s;
    unpack(z, x, xs, s);
    if (!(x.vdc > kMinVdc)) return false;
    const auto u = controller_output(ctrl, xs, s, x);
    const auto y = g_outputs(x, u);
    f_out.resize(nz);
    f_out.head(PlantState::size) = f_dynamics(x, u, d, p).to_vector();
    if (nc > 0) f_out.segment(PlantState::size, nc) = k.a * xs + k.b_ref * r + k.b_meas * outputs_vector(y);
    int off = PlantState::size + nc;
    if (op.dispatched_i0) f_out(off++) = y.p - s.yref.Pref;
    if (op.dispatched_E0) f_out(off++) = (s.yref.Qref - y.q) + (s.yref.Vref - y.V) / p.Dq;
    return f_out.allFinite();
  };

  auto jacobian = [&](const Vector& z) {
    PlantState x;
    Vector xs;
    Setpoints s;
    unpack(z, x, xs, s);
    const auto u = controller_output(ctrl, xs, s, x);
    const auto lin = linearize(p, x, u, d);
    const Matrix fx = lin.A();
    const Matrix fu = lin.B().leftCols(3);
    const Matrix gx = lin.C();
    const Matrix gu = lin.D().leftCols(3);
    Matrix sel = Matrix::Zero(3, ns);
    int col = 0;
    if (op.dispatched_i0) sel(0, col++) = 1.0;
    if (op.dispatched_E0) sel(2, col++) = 1.0;
    const Matrix du_dx = q_loop * k.d_meas * gx;
    const Matrix du_dxi = q_loop * k.c;
    const Matrix du_ds = q_loop * sel;
    const Matrix dy_dx = gx + gu * du_dx;

    Matrix j = Matrix::Zero(nz, nz);
    const int n = PlantState::size;
    j.block(0, 0, n, n) = fx + fu * du_dx;
    if (nc > 0) {
      j.block(0, n, n, nc) = fu * du_dxi;
      j.block(n, 0, nc, n) = k.b_meas * dy_dx;
      j.block(n, n, nc, nc) = k.a + k.b_meas * gu * du_dxi;
    }
    if (ns > 0) {
      j.block(0, n + nc, n, ns) = fu * du_ds;
      if (nc > 0) j.block(n, n + nc, nc, ns) = k.b_meas * gu * du_ds;
    }
    int row = n + nc;
    if (op.dispatched_i0) {
      j.row(row).head(n) = dy_dx.row(1);
      ++row;
    }
    if (op.dispatched_E0) {
      j.row(row).head(n) = -dy_dx.row(3) - dy_dx.row(4) / p.Dq;
      ++row;
    }
    return j;
  };

  Vector z(nz);
  z.head(PlantState::size) = x0.to_vector();
  z.segment(PlantState::size, nc) = xi;
  {
    int off = PlantState::size + nc;
    if (op.dispatched_i0) z(off++) = sp.u0.iu;
    if (op.dispatched_E0) z(off++) = sp.u0.Eu;
  }

  Vector f;
  if (!residual(z, f)) throw ConvergenceError("solve_equilibrium: initial guess is infeasible", NAN);
  double norm = f.lpNorm<Eigen::Infinity>();
  int it = 0;
  for (; it < opt.max_iterations && norm > opt.tolerance; ++it) {
    const Matrix j = jacobian(z);
    Eigen::FullPivLU<Matrix> lu(j);
    if (!lu.isInvertible() || lu.rcond() < 1e-14) {
      throw NumericalError("solve_equilibrium: Jacobian is singular or badly conditioned", it);
    }
    const Vector step = lu.solve(-f);
    double t = 1.0;
    Vector trial, ft;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
      trial = z + t * step;
      if (residual(trial, ft) && ft.lpNorm<Eigen::Infinity>() < norm * (1.0 - 1e-4 * t)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // Full step anyway: once at round-off level, no monotone decrease is available.
      trial = z + step;
      if (!residual(trial, ft)) break;
      if (ft.lpNorm<Eigen::Infinity>() >= norm) break;
    }
    z = trial;
    f = ft;
    norm = f.lpNorm<Eigen::Infinity>();
  }
  if (!(norm <= opt.tolerance)) {
    std::ostringstream os;
    os << "solve_equilibrium: Newton iteration stopped after " << it
       << " iterations with residual " << norm;
    throw ConvergenceError(os.str(), norm);
  }

  unpack(z, op.x, op.xi, op.setpoints);
  op.x.delta = wrap_angle(op.x.delta);
  op.u = controller_output(ctrl, op.xi, op.setpoints, op.x);
  op.residual = norm;
  op.iterations = it;
  return op;
}

}  // namespace gfm::plant
