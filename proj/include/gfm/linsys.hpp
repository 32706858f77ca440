#pragma once

// Dense continuous-time linear systems: containers, composition, spectra,
// frequency response and the H-infinity norm.

#include <Eigen/Dense>

#include <complex>
#include <string>
#include <vector>

namespace gfm::linsys {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using CMatrix = Eigen::MatrixXcd;
using Complex = std::complex<double>;

/// Real state-space quadruple with labelled input and output channels.
/// Immutable once constructed; the constructor enforces dimensions,
/// finiteness and label uniqueness.
class StateSpaceModel {
 public:
  StateSpaceModel(Matrix a, Matrix b, Matrix c, Matrix d,
                  std::vector<std::string> input_names,
                  std::vector<std::string> output_names);

  /// Labels default to u0.. / y0.. when omitted.
  StateSpaceModel(Matrix a, Matrix b, Matrix c, Matrix d);

  /// Static gain block y = D u.
  static StateSpaceModel gain(Matrix d, std::vector<std::string> input_names = {},
                              std::vector<std::string> output_names = {});

  const Matrix& A() const { return a_; }
  const Matrix& B() const { return b_; }
  const Matrix& C() const { return c_; }
  const Matrix& D() const { return d_; }
  const std::vector<std::string>& input_names() const { return inputs_; }
  const std::vector<std::string>& output_names() const { return outputs_; }

  Eigen::Index states() const { return a_.rows(); }
  Eigen::Index inputs() const { return b_.cols(); }
  Eigen::Index outputs() const { return c_.rows(); }

  /// Throws DimensionError for unknown labels.
  Eigen::Index input_index(const std::string& name) const;
  Eigen::Index output_index(const std::string& name) const;

  /// Sub-system keeping the named inputs and outputs, in the given order.
  StateSpaceModel select(const std::vector<std::string>& inputs,
                         const std::vector<std::string>& outputs) const;

  StateSpaceModel with_names(std::vector<std::string> input_names,
                             std::vector<std::string> output_names) const;

 private:
  Matrix a_, b_, c_, d_;
  std::vector<std::string> inputs_, outputs_;
};

struct Spectrum {
  std::vector<Complex> eigenvalues;

  double max_real() const;
  /// Every non-real eigenvalue has a partner within `tol` of its conjugate.
  bool conjugate_closed(double tol = 1e-9) const;
};

/// All eigenvalues of a square real matrix.
Spectrum eigenvalues(const Matrix& a);

/// Eigenvalues together with (column) eigenvectors.
void eigen_decomposition(const Matrix& a, Spectrum& spectrum, CMatrix& vectors);

/// True iff every eigenvalue has real part < -margin.
bool is_hurwitz(const Matrix& a, double margin = 0.0);

/// C (jw I - A)^-1 B + D.
CMatrix freq_response(const StateSpaceModel& sys, double omega);

double sigma_max(const CMatrix& m);

/// Re-usable evaluator for sweeping many frequencies of one system.
class FrequencyEvaluator {
 public:
  explicit FrequencyEvaluator(const StateSpaceModel& sys);
  CMatrix at(double omega) const;
  double gain(double omega) const { return sigma_max(at(omega)); }
  const Spectrum& spectrum() const { return spectrum_; }

 private:
  StateSpaceModel sys_;
  Spectrum spectrum_;
};

/// H-infinity norm by bisection on gamma with the Hamiltonian
/// imaginary-axis eigenvalue test. Relative accuracy `tol`.
double hinf_norm(const StateSpaceModel& sys, double tol = 1e-4);

struct GridPeak {
  double gain = 0.0;
  double omega = 0.0;
};

/// Independent check for hinf_norm: dense log-spaced frequency sweep plus
/// golden-section refinement around the largest local maxima.
GridPeak hinf_norm_grid(const StateSpaceModel& sys, int points_per_decade = 400,
                        double omega_min = 1e-4, double omega_max = 1e6);

/// g2 after g1 (g1 outputs feed g2 inputs).
StateSpaceModel series(const StateSpaceModel& g1, const StateSpaceModel& g2);

/// Block-diagonal stacking of independent systems.
StateSpaceModel append(const std::vector<StateSpaceModel>& systems);

/// Similarity transform with power-of-two diagonal scaling that balances
/// row and column norms of A. Transfer function is unchanged.
StateSpaceModel balance(const StateSpaceModel& sys);

// --- rational transfer functions -------------------------------------------

/// Polynomial with ascending coefficients: c[0] + c[1] s + c[2] s^2 ...
using Polynomial = std::vector<double>;

Polynomial poly_mul(const Polynomial& a, const Polynomial& b);
Polynomial poly_add(const Polynomial& a, const Polynomial& b);
Polynomial poly_scale(const Polynomial& a, double k);
Complex poly_eval(const Polynomial& p, Complex s);
/// Degree after trimming trailing zeros; -1 for the zero polynomial.
int poly_degree(const Polynomial& p);

struct TransferFunction {
  Polynomial num{0.0};
  Polynomial den{1.0};

  Complex operator()(Complex s) const { return poly_eval(num, s) / poly_eval(den, s); }
  bool is_zero() const { return poly_degree(num) < 0; }
  bool is_proper() const { return poly_degree(num) <= poly_degree(den); }
  bool is_strictly_proper() const { return poly_degree(num) < poly_degree(den); }
};

TransferFunction operator*(const TransferFunction& a, const TransferFunction& b);

/// Observable canonical realization of a single-output, multi-input row of
/// proper transfer functions that share the denominator `den`.
StateSpaceModel realize_common_denominator(const Polynomial& den,
                                           const std::vector<Polynomial>& numerators);

StateSpaceModel realize(const TransferFunction& tf);

// --- interconnection ---------------------------------------------------------

enum class Block { Plant, Controller };

struct Signal {
  Block block;
  std::string channel;
};

/// Block output `from` is added, scaled by `gain`, into block input `to`.
struct Link {
  Signal from;
  Signal to;
  double gain = 1.0;
};

struct Injection {
  Signal to;
  double gain = 1.0;
};

struct ExternalInput {
  std::string name;
  std::vector<Injection> drives;
};

struct Tap {
  Signal from;
  double gain = 1.0;
};

struct ExternalOutput {
  std::string name;
  std::vector<Tap> taps;
  /// Direct terms from external inputs, by name.
  std::vector<std::pair<std::string, double>> direct;
};

struct Wiring {
  std::vector<Link> links;
  std::vector<ExternalInput> inputs;
  std::vector<ExternalOutput> outputs;
};

/// Closes plant and controller through `wiring`. State order is
/// [plant states, controller states]. Throws WellPosednessError when the
/// instantaneous loop (I - M D) is singular.
StateSpaceModel feedback_interconnect(const StateSpaceModel& plant,
                                      const StateSpaceModel& ctrl, const Wiring& wiring);

}  // namespace gfm::linsys
