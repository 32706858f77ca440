#include "gfm/linsys.hpp"

#include "gfm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace gfm::linsys {

namespace {

std::vector<std::string> default_names(const char* prefix, Eigen::Index n) {
  std::vector<std::string> names;
  names.reserve(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) names.push_back(prefix + std::to_string(i));
  return names;
}

void check_unique(const std::vector<std::string>& names, const char* what) {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) {
      throw DimensionError(std::string("duplicate ") + what + " label '" + n + "'");
    }
  }
}

Eigen::Index find_label(const std::vector<std::string>& names, const std::string& name,
                        const char* what) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw DimensionError(std::string("unknown ") + what + " '" + name + "'");
  return static_cast<Eigen::Index>(it - names.begin());
}

}  // namespace

StateSpaceModel::StateSpaceModel(Matrix a, Matrix b, Matrix c, Matrix d,
                                 std::vector<std::string> input_names,
                                 std::vector<std::string> output_names)
    : a_(std::move(a)),
      b_(std::move(b)),
      c_(std::move(c)),
      d_(std::move(d)),
      inputs_(std::move(input_names)),
      outputs_(std::move(output_names)) {
  const auto n = a_.rows();
  const auto m = d_.cols();
  const auto p = d_.rows();
  // Empty-state systems may arrive as 0x0 blocks with B, C of any shape.
  if (n == 0) {
    b_.resize(0, m);
    c_.resize(p, 0);
  }
  if (a_.cols() != n || b_.rows() != n || b_.cols() != m || c_.rows() != p || c_.cols() != n) {
    std::ostringstream os;
    os << "inconsistent state-space dimensions: A " << a_.rows() << "x" << a_.cols() << ", B "
       << b_.rows() << "x" << b_.cols() << ", C " << c_.rows() << "x" << c_.cols() << ", D "
       << d_.rows() << "x" << d_.cols();
    throw DimensionError(os.str());
  }
  if (static_cast<Eigen::Index>(inputs_.size()) != m ||
      static_cast<Eigen::Index>(outputs_.size()) != p) {
    throw DimensionError("channel label count does not match D dimensions");
  }
  if (!a_.allFinite() || !b_.allFinite() || !c_.allFinite() || !d_.allFinite()) {
    throw DomainError("state-space matrices contain non-finite entries");
  }
  check_unique(inputs_, "input");
  check_unique(outputs_, "output");
}

StateSpaceModel::StateSpaceModel(Matrix a, Matrix b, Matrix c, Matrix d)
    : StateSpaceModel(a, b, c, d, default_names("u", d.cols()), default_names("y", d.rows())) {}

StateSpaceModel StateSpaceModel::gain(Matrix d, std::vector<std::string> input_names,
                                      std::vector<std::string> output_names) {
  if (input_names.empty()) input_names = default_names("u", d.cols());
  if (output_names.empty()) output_names = default_names("y", d.rows());
  const auto m = d.cols();
  const auto p = d.rows();
  return StateSpaceModel(Matrix(0, 0), Matrix(0, m), Matrix(p, 0), std::move(d),
                         std::move(input_names), std::move(output_names));
}

Eigen::Index StateSpaceModel::input_index(const std::string& name) const {
  return find_label(inputs_, name, "input");
}

Eigen::Index StateSpaceModel::output_index(const std::string& name) const {
  return find_label(outputs_, name, "output");
}

StateSpaceModel StateSpaceModel::select(const std::vector<std::string>& inputs,
                                        const std::vector<std::string>& outputs) const {
  const auto n = states();
  Matrix b(n, static_cast<Eigen::Index>(inputs.size()));
  Matrix c(static_cast<Eigen::Index>(outputs.size()), n);
  Matrix d(c.rows(), b.cols());
  for (size_t j = 0; j < inputs.size(); ++j) {
    const auto jj = input_index(inputs[j]);
    b.col(static_cast<Eigen::Index>(j)) = b_.col(jj);
  }
  for (size_t i = 0; i < outputs.size(); ++i) {
    const auto ii = output_index(outputs[i]);
    c.row(static_cast<Eigen::Index>(i)) = c_.row(ii);
    for (size_t j = 0; j < inputs.size(); ++j) {
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d_(ii, input_index(inputs[j]));
    }
  }
  return StateSpaceModel(a_, b, c, d, inputs, outputs);
}

StateSpaceModel StateSpaceModel::with_names(std::vector<std::string> input_names,
                                            std::vector<std::string> output_names) const {
  return StateSpaceModel(a_, b_, c_, d_, std::move(input_names), std::move(output_names));
}

// --- spectra -----------------------------------------------------------------

double Spectrum::max_real() const {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& l : eigenvalues) m = std::max(m, l.real());
  return m;
}

bool Spectrum::conjugate_closed(double tol) const {
  for (const auto& l : eigenvalues) {
    if (l.imag() == 0.0) continue;
    const auto target = std::conj(l);
    const bool found = std::any_of(eigenvalues.begin(), eigenvalues.end(), [&](const Complex& o) {
      return std::abs(o - target) <= tol * std::max(1.0, std::abs(l));
    });
    if (!found) return false;
  }
  return true;
}

namespace {

Eigen::EigenSolver<Matrix> solve_eigen(const Matrix& a, bool vectors) {
  if (a.rows() != a.cols()) {
    throw DimensionError("eigenvalues: matrix is " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + ", expected square");
  }
  if (!a.allFinite()) throw DomainError("eigenvalues: non-finite entries");
  Eigen::EigenSolver<Matrix> es(a, vectors);
  if (es.info() != Eigen::Success) {
    // Eigen's RealSchur default budget is 40 sweeps per row.
    const int iters = 40 * static_cast<int>(a.rows());
    throw NumericalError("eigenvalues: QR iteration did not converge after " +
                             std::to_string(iters) + " iterations",
                         iters);
  }
  return es;
}

}  // namespace

Spectrum eigenvalues(const Matrix& a) {
  Spectrum s;
  if (a.rows() == 0 && a.cols() == 0) return s;
  const auto es = solve_eigen(a, false);
  const auto& ev = es.eigenvalues();
  s.eigenvalues.assign(ev.data(), ev.data() + ev.size());
  return s;
}

void eigen_decomposition(const Matrix& a, Spectrum& spectrum, CMatrix& vectors) {
  const auto es = solve_eigen(a, true);
  const auto& ev = es.eigenvalues();
  spectrum.eigenvalues.assign(ev.data(), ev.data() + ev.size());
  vectors = es.eigenvectors();
}

bool is_hurwitz(const Matrix& a, double margin) {
  if (a.rows() == 0) {
    if (a.cols() != 0) throw DimensionError("is_hurwitz: matrix not square");
    return true;
  }
  return eigenvalues(a).max_real() < -margin;
}

// --- frequency response --------------------------------------------------------

double sigma_max(const CMatrix& m) {
  if (m.size() == 0) return 0.0;
  if (m.rows() == 1 || m.cols() == 1) return m.norm();
  Eigen::JacobiSVD<CMatrix> svd(m);
  return svd.singularValues()(0);
}

FrequencyEvaluator::FrequencyEvaluator(const StateSpaceModel& sys)
    : sys_(sys), spectrum_(eigenvalues(sys.A())) {}

CMatrix FrequencyEvaluator::at(double omega) const {
  const auto n = sys_.states();
  if (n == 0) return sys_.D().cast<Complex>();
  const Complex jw(0.0, omega);
  for (const auto& l : spectrum_.eigenvalues) {
    if (std::abs(jw - l) <= 1e-12 * std::max(1.0, std::abs(l))) {
      throw DomainError("freq_response: j*" + std::to_string(omega) +
                        " coincides with a pole of the system");
    }
  }
  CMatrix resolvent = -sys_.A().cast<Complex>();
  resolvent.diagonal().array() += jw;
  Eigen::PartialPivLU<CMatrix> lu(resolvent);
  CMatrix x = lu.solve(sys_.B().cast<Complex>());
  return sys_.C().cast<Complex>() * x + sys_.D().cast<Complex>();
}

CMatrix freq_response(const StateSpaceModel& sys, double omega) {
  return FrequencyEvaluator(sys).at(omega);
}

// --- H-infinity norm -----------------------------------------------------------

namespace {

/// Frequencies where the Hamiltonian for level gamma has (numerically)
/// imaginary eigenvalues. Empty means gamma exceeds the norm.
std::vector<double> imaginary_crossings(const StateSpaceModel& sys, double gamma) {
  const auto& a = sys.A();
  const auto& b = sys.B();
  const auto& c = sys.C();
  const auto& d = sys.D();
  const auto n = a.rows();
  const auto m = b.cols();
  const auto p = c.rows();

  Matrix r = gamma * gamma * Matrix::Identity(m, m) - d.transpose() * d;
  Eigen::LLT<Matrix> llt(r);
  if (llt.info() != Eigen::Success) return {0.0};
  const Matrix r_inv = llt.solve(Matrix::Identity(m, m));
  const Matrix ak = a + b * r_inv * d.transpose() * c;
  Matrix h(2 * n, 2 * n);
  h.topLeftCorner(n, n) = ak;
  h.topRightCorner(n, n) = b * r_inv * b.transpose();
  h.bottomLeftCorner(n, n) =
      -c.transpose() * (Matrix::Identity(p, p) + d * r_inv * d.transpose()) * c;
  h.bottomRightCorner(n, n) = -ak.transpose();

  const auto spec = eigenvalues(h);
  const double scale = std::max(1.0, h.lpNorm<Eigen::Infinity>());
  std::vector<double> out;
  for (const auto& l : spec.eigenvalues) {
    if (std::abs(l.real()) <= 1e-7 * std::max(std::abs(l), 1e-3 * scale)) {
      out.push_back(std::abs(l.imag()));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Frequencies worth sampling for a coarse lower bound on the peak gain.
std::vector<double> probe_frequencies(const Spectrum& spec) {
  std::vector<double> w{0.0};
  for (double e = -4.0; e <= 6.0 + 1e-12; e += 1.0 / 30.0) w.push_back(std::pow(10.0, e));
  for (const auto& l : spec.eigenvalues) {
    w.push_back(std::abs(l.imag()));
    w.push_back(std::abs(l));
  }
  return w;
}

}  // namespace

double hinf_norm(const StateSpaceModel& sys, double tol) {
  if (!(tol > 0.0 && tol <= 0.1)) throw DomainError("hinf_norm: tol must lie in (0, 0.1]");
  const double sd = sigma_max(sys.D().cast<Complex>());
  if (sys.states() == 0) return sd;
  if (!is_hurwitz(sys.A(), 0.0)) throw StabilityError("hinf_norm: system is not Hurwitz");

  const auto bal = balance(sys);
  const FrequencyEvaluator eval(bal);

  double peak = sd;
  for (double w : probe_frequencies(eval.spectrum())) peak = std::max(peak, eval.gain(w));
  if (peak == 0.0) return 0.0;

  double lo = std::max(sd, 0.5 * peak);
  double hi = 2.0 * peak;
  // Level sets of the gain at `gamma`, confirmed by direct evaluation so
  // that eigenvalues merely close to the axis do not count.
  auto attained_at = [&](double gamma) {
    const auto crossings = imaginary_crossings(bal, gamma);
    double attained = 0.0;
    for (double w : crossings) attained = std::max(attained, eval.gain(w));
    // Gains between consecutive crossings lift the lower bound much faster
    // than halving alone.
    for (size_t i = 1; i < crossings.size(); ++i) {
      const double a = crossings[i - 1], b = crossings[i];
      const double w = a > 0.0 ? std::sqrt(a * b) : 0.5 * (a + b);
      attained = std::max(attained, eval.gain(w));
    }
    return attained;
  };

  for (int k = 0; k < 30; ++k) {
    const double got = attained_at(hi);
    if (got < hi * (1.0 - 1e-6)) break;
    lo = std::max(lo, got);
    hi = 10.0 * got;
  }
  // The sampled peak is a certified lower bound.
  lo = std::max(lo, peak);

  for (int it = 0; it < 200 && hi - lo > tol * lo; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double got = attained_at(mid);
    if (got >= mid * (1.0 - 1e-6)) {
      lo = std::max(mid, got);
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

GridPeak hinf_norm_grid(const StateSpaceModel& sys, int points_per_decade, double omega_min,
                        double omega_max) {
  if (points_per_decade < 1 || !(omega_min > 0.0) || !(omega_max > omega_min)) {
    throw DomainError("hinf_norm_grid: invalid grid");
  }
  if (sys.states() > 0 && !is_hurwitz(sys.A(), 0.0)) {
    throw StabilityError("hinf_norm_grid: system is not Hurwitz");
  }
  const FrequencyEvaluator eval(sys);
  const double lmin = std::log10(omega_min);
  const double lmax = std::log10(omega_max);
  const int count = static_cast<int>(std::ceil((lmax - lmin) * points_per_decade)) + 1;
  const double step = (lmax - lmin) / (count - 1);

  std::vector<double> g(static_cast<size_t>(count));
  for (int k = 0; k < count; ++k) g[static_cast<size_t>(k)] = eval.gain(std::pow(10.0, lmin + k * step));

  GridPeak best{eval.gain(0.0), 0.0};
  const double sd = sigma_max(sys.D().cast<Complex>());
  if (sd > best.gain) best = {sd, std::numeric_limits<double>::infinity()};

  // Every interior local maximum may hide a resonance narrower than the grid
  // spacing, so refine the largest few instead of only the global one.
  std::vector<int> peaks;
  for (int k = 0; k < count; ++k) {
    const double left = k > 0 ? g[static_cast<size_t>(k - 1)] : -1.0;
    const double right = k + 1 < count ? g[static_cast<size_t>(k + 1)] : -1.0;
    const double v = g[static_cast<size_t>(k)];
    if (v >= left && v >= right) peaks.push_back(k);
  }
  std::stable_sort(peaks.begin(), peaks.end(), [&](int a, int b) {
    return g[static_cast<size_t>(a)] > g[static_cast<size_t>(b)];
  });
  if (peaks.size() > 32) peaks.resize(32);

  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  auto f = [&](double lw) { return eval.gain(std::pow(10.0, lw)); };
  for (int k : peaks) {
    const double v = g[static_cast<size_t>(k)];
    if (v > best.gain) best = {v, std::pow(10.0, lmin + k * step)};
    double a = lmin + std::max(k - 1, 0) * step;
    double b = lmin + std::min(k + 1, count - 1) * step;
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < 80; ++it) {
      if (f1 > f2) {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - phi * (b - a);
        f1 = f(x1);
      } else {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + phi * (b - a);
        f2 = f(x2);
      }
    }
    const double lw = f1 > f2 ? x1 : x2;
    const double top = std::max(f1, f2);
    if (top > best.gain) best = {top, std::pow(10.0, lw)};
  }
  return best;
}

// --- composition ---------------------------------------------------------------

StateSpaceModel series(const StateSpaceModel& g1, const StateSpaceModel& g2) {
  if (g1.outputs() != g2.inputs()) {
    throw DimensionError("series: g1 has " + std::to_string(g1.outputs()) + " outputs but g2 has " +
                         std::to_string(g2.inputs()) + " inputs");
  }
  const auto n1 = g1.states();
  const auto n2 = g2.states();
  Matrix a = Matrix::Zero(n1 + n2, n1 + n2);
  a.topLeftCorner(n1, n1) = g1.A();
  a.bottomLeftCorner(n2, n1) = g2.B() * g1.C();
  a.bottomRightCorner(n2, n2) = g2.A();
  Matrix b(n1 + n2, g1.inputs());
  b.topRows(n1) = g1.B();
  b.bottomRows(n2) = g2.B() * g1.D();
  Matrix c(g2.outputs(), n1 + n2);
  c.leftCols(n1) = g2.D() * g1.C();
  c.rightCols(n2) = g2.C();
  Matrix d = g2.D() * g1.D();
  return StateSpaceModel(a, b, c, d, g1.input_names(), g2.output_names());
}

StateSpaceModel append(const std::vector<StateSpaceModel>& systems) {
  Eigen::Index n = 0, m = 0, p = 0;
  for (const auto& s : systems) {
    n += s.states();
    m += s.inputs();
    p += s.outputs();
  }
  Matrix a = Matrix::Zero(n, n), b = Matrix::Zero(n, m), c = Matrix::Zero(p, n),
         d = Matrix::Zero(p, m);
  std::vector<std::string> in, out;
  Eigen::Index xi = 0, ui = 0, yi = 0;
  for (const auto& s : systems) {
    a.block(xi, xi, s.states(), s.states()) = s.A();
    b.block(xi, ui, s.states(), s.inputs()) = s.B();
    c.block(yi, xi, s.outputs(), s.states()) = s.C();
    d.block(yi, ui, s.outputs(), s.inputs()) = s.D();
    in.insert(in.end(), s.input_names().begin(), s.input_names().end());
    out.insert(out.end(), s.output_names().begin(), s.output_names().end());
    xi += s.states();
    ui += s.inputs();
    yi += s.outputs();
  }
  // Clashing labels get the block index as a prefix.
  auto make_unique = [&](std::vector<std::string>& names, bool inputs) {
    std::vector<std::string> sorted = names;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end()) return;
    names.clear();
    for (size_t k = 0; k < systems.size(); ++k) {
      const auto& src = inputs ? systems[k].input_names() : systems[k].output_names();
      for (const auto& l : src) names.push_back(std::to_string(k) + ":" + l);
    }
  };
  make_unique(in, true);
  make_unique(out, false);
  return StateSpaceModel(a, b, c, d, in, out);
}

StateSpaceModel balance(const StateSpaceModel& sys) {
  const auto n = sys.states();
  if (n == 0) return sys;
  Matrix a = sys.A();
  Vector scale = Vector::Ones(n);
  constexpr double radix = 2.0;
  bool converged = false;
  for (int sweep = 0; sweep < 100 && !converged; ++sweep) {
    converged = true;
    for (Eigen::Index i = 0; i < n; ++i) {
      double col = 0.0, row = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        col += std::abs(a(j, i));
        row += std::abs(a(i, j));
      }
      if (col == 0.0 || row == 0.0) continue;
      const double total = col + row;
      double f = 1.0;
      double g = row / radix;
      while (col < g) {
        f *= radix;
        col *= radix * radix;
      }
      g = row * radix;
      while (col >= g) {
        f /= radix;
        col /= radix * radix;
      }
      if ((col + row) / f < 0.95 * total) {
        converged = false;
        scale(i) *= f;
        a.row(i) /= f;
        a.col(i) *= f;
      }
    }
  }
  // x = T z with T = diag(scale): A' = T^-1 A T, B' = T^-1 B, C' = C T.
  Matrix b = scale.cwiseInverse().asDiagonal() * sys.B();
  Matrix c = sys.C() * scale.asDiagonal();
  return StateSpaceModel(a, b, c, sys.D(), sys.input_names(), sys.output_names());
}

// --- polynomials and realizations ----------------------------------------------

int poly_degree(const Polynomial& p) {
  for (int i = static_cast<int>(p.size()) - 1; i >= 0; --i) {
    if (p[static_cast<size_t>(i)] != 0.0) return i;
  }
  return -1;
}

Polynomial poly_mul(const Polynomial& a, const Polynomial& b) {
  if (a.empty() || b.empty()) return {0.0};
  Polynomial r(a.size() + b.size() - 1, 0.0);
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
  return r;
}

Polynomial poly_add(const Polynomial& a, const Polynomial& b) {
  Polynomial r(std::max(a.size(), b.size()), 0.0);
  for (size_t i = 0; i < a.size(); ++i) r[i] += a[i];
  for (size_t i = 0; i < b.size(); ++i) r[i] += b[i];
  return r;
}

Polynomial poly_scale(const Polynomial& a, double k) {
  Polynomial r = a;
  for (auto& c : r) c *= k;
  return r;
}

Complex poly_eval(const Polynomial& p, Complex s) {
  Complex acc = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) acc = acc * s + *it;
  return acc;
}

TransferFunction operator*(const TransferFunction& a, const TransferFunction& b) {
  return {poly_mul(a.num, b.num), poly_mul(a.den, b.den)};
}

StateSpaceModel realize_common_denominator(const Polynomial& den,
                                           const std::vector<Polynomial>& numerators) {
  const int n = poly_degree(den);
  if (n < 0) throw DomainError("realize: zero denominator");
  const double lead = den[static_cast<size_t>(n)];
  const auto m = static_cast<Eigen::Index>(numerators.size());

  Matrix a = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    if (i > 0) a(i, i - 1) = 1.0;
    a(i, n - 1) = -den[static_cast<size_t>(i)] / lead;
  }
  Matrix b = Matrix::Zero(n, m);
  Matrix d = Matrix::Zero(1, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto& num = numerators[static_cast<size_t>(j)];
    if (poly_degree(num) > n) throw DomainError("realize: improper transfer function");
    const double bn = static_cast<size_t>(n) < num.size() ? num[static_cast<size_t>(n)] / lead : 0.0;
    d(0, j) = bn;
    for (int i = 0; i < n; ++i) {
      const double ni = static_cast<size_t>(i) < num.size() ? num[static_cast<size_t>(i)] : 0.0;
      b(i, j) = ni / lead - bn * den[static_cast<size_t>(i)] / lead;
    }
  }
  Matrix c = Matrix::Zero(1, n);
  if (n > 0) c(0, n - 1) = 1.0;
  return StateSpaceModel(a, b, c, d);
}

StateSpaceModel realize(const TransferFunction& tf) {
  return realize_common_denominator(tf.den, {tf.num});
}

// --- interconnection -------------------------------------------------------------

StateSpaceModel feedback_interconnect(const StateSpaceModel& plant, const StateSpaceModel& ctrl,
                                      const Wiring& wiring) {
  const auto np = plant.states(), nk = ctrl.states();
  const auto mp = plant.inputs(), mk = ctrl.inputs();
  const auto pp = plant.outputs(), pk = ctrl.outputs();
  const auto n = np + nk, m = mp + mk, p = pp + pk;
  const auto nw = static_cast<Eigen::Index>(wiring.inputs.size());
  const auto nz = static_cast<Eigen::Index>(wiring.outputs.size());

  auto in_index = [&](const Signal& s) {
    return s.block == Block::Plant ? plant.input_index(s.channel)
                                   : mp + ctrl.input_index(s.channel);
  };
  auto out_index = [&](const Signal& s) {
    return s.block == Block::Plant ? plant.output_index(s.channel)
                                   : pp + ctrl.output_index(s.channel);
  };
  auto label = [](const Signal& s) {
    return std::string(s.block == Block::Plant ? "plant:" : "ctrl:") + s.channel;
  };

  // Stacked open system o = Cs x + Ds v, x' = As x + Bs v.
  Matrix as = Matrix::Zero(n, n), bs = Matrix::Zero(n, m), cs = Matrix::Zero(p, n),
         ds = Matrix::Zero(p, m);
  as.topLeftCorner(np, np) = plant.A();
  as.bottomRightCorner(nk, nk) = ctrl.A();
  bs.topLeftCorner(np, mp) = plant.B();
  bs.bottomRightCorner(nk, mk) = ctrl.B();
  cs.topLeftCorner(pp, np) = plant.C();
  cs.bottomRightCorner(pk, nk) = ctrl.C();
  ds.topLeftCorner(pp, mp) = plant.D();
  ds.bottomRightCorner(pk, mk) = ctrl.D();

  // v = M o + N w ; z = L o + Z w.
  Matrix mm = Matrix::Zero(m, p), nn = Matrix::Zero(m, nw), ll = Matrix::Zero(nz, p),
         zz = Matrix::Zero(nz, nw);
  for (const auto& link : wiring.links) mm(in_index(link.to), out_index(link.from)) += link.gain;
  std::vector<std::string> in_names, out_names;
  for (Eigen::Index j = 0; j < nw; ++j) {
    const auto& ext = wiring.inputs[static_cast<size_t>(j)];
    in_names.push_back(ext.name);
    for (const auto& inj : ext.drives) nn(in_index(inj.to), j) += inj.gain;
  }
  for (Eigen::Index i = 0; i < nz; ++i) {
    const auto& ext = wiring.outputs[static_cast<size_t>(i)];
    out_names.push_back(ext.name);
    for (const auto& tap : ext.taps) ll(i, out_index(tap.from)) += tap.gain;
    for (const auto& [name, g] : ext.direct) {
      auto it = std::find(in_names.begin(), in_names.end(), name);
      if (it == in_names.end()) throw DimensionError("unknown external input '" + name + "'");
      zz(i, it - in_names.begin()) += g;
    }
  }

  const Matrix loop = Matrix::Identity(m, m) - mm * ds;
  Eigen::FullPivLU<Matrix> lu(loop);
  lu.setThreshold(1e-10);
  if (!lu.isInvertible()) {
    std::ostringstream os;
    os << "ill-posed algebraic loop; direct-feedthrough paths:";
    for (const auto& link : wiring.links) {
      const auto o = out_index(link.from);
      if (ds.row(o).cwiseAbs().maxCoeff() > 0.0) {
        os << ' ' << label(link.from) << "->" << label(link.to);
      }
    }
    throw WellPosednessError(os.str());
  }
  const Matrix f = lu.inverse();
  const Matrix v_x = f * mm * cs;  // v as a function of x
  const Matrix v_w = f * nn;       // v as a function of w

  Matrix a = as + bs * v_x;
  Matrix b = bs * v_w;
  Matrix c = ll * (cs + ds * v_x);
  Matrix d = ll * ds * v_w + zz;
  return StateSpaceModel(a, b, c, d, in_names, out_names);
}

}  // namespace gfm::linsys
