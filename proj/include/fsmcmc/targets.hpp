#pragma once

// Log-density models for the samplers.

#include "fsmcmc/prng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsmcmc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// p(x) ∝ f(x) N(x | 0, L Lᵀ); what elliptical slice sampling needs.
struct GaussianPrior {
  Matrix chol;
  std::function<double(const Vector&)> log_likelihood;
};

struct TargetModel {
  std::string name;
  Eigen::Index dim = 0;
  std::function<double(const Vector&)> log_density;
  /// Returns the log-density and writes the gradient; empty when the model
  /// has no gradient.
  std::function<double(const Vector&, Vector&)> value_and_gradient;
  std::optional<GaussianPrior> gaussian_prior;
  /// Cost of one log-density (or value+gradient) evaluation, in units of
  /// one closed-form Gaussian evaluation.
  double eval_cost = 1.0;

  bool has_gradient() const { return static_cast<bool>(value_and_gradient); }
};

using TargetPtr = std::shared_ptr<const TargetModel>;

class TargetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline bool lower_with_positive_diagonal(const Matrix& L) {
  if (L.rows() != L.cols() || L.rows() == 0) return false;
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    if (!(L(i, i) > 0.0) || !std::isfinite(L(i, i))) return false;
    for (Eigen::Index j = i + 1; j < L.cols(); ++j) {
      if (L(i, j) != 0.0) return false;
    }
  }
  return true;
}

inline double log_sum_exp(const std::vector<double>& v) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double a : v) hi = std::max(hi, a);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double a : v) s += std::exp(a - hi);
  return hi + std::log(s);
}

// Zero-mean Gaussian log-density from a lower Cholesky factor.
inline double gaussian_log_density(const Vector& centered, const Matrix& L, double log_det) {
  const Vector w = L.triangularView<Eigen::Lower>().solve(centered);
  return -0.5 * w.squaredNorm() - 0.5 * log_det -
         0.5 * static_cast<double>(centered.size()) * kLog2Pi;
}

inline double chol_log_det(const Matrix& L) {
  return 2.0 * L.diagonal().array().log().sum();
}

}  // namespace detail

/// Multivariate normal N(mean, L Lᵀ) with analytic gradient.
inline TargetPtr gaussian_target(const Vector& mean, const Matrix& chol) {
  if (!detail::lower_with_positive_diagonal(chol) || chol.rows() != mean.size()) {
    throw std::invalid_argument(
        "gaussian_target: factor must be lower-triangular with positive diagonal and match the mean");
  }
  const double log_det = detail::chol_log_det(chol);
  auto t = std::make_shared<TargetModel>();
  t->name = "gaussian";
  t->dim = mean.size();
  t->log_density = [mean, chol, log_det](const Vector& x) {
    return detail::gaussian_log_density(x - mean, chol, log_det);
  };
  t->value_and_gradient = [mean, chol, log_det](const Vector& x, Vector& grad) {
    const Vector centered = x - mean;
    const Vector w = chol.triangularView<Eigen::Lower>().solve(centered);
    grad = -chol.transpose().triangularView<Eigen::Upper>().solve(w);
    return -0.5 * w.squaredNorm() - 0.5 * log_det -
           0.5 * static_cast<double>(x.size()) * detail::kLog2Pi;
  };
  GaussianPrior prior;
  prior.chol = chol;
  prior.log_likelihood = [mean, chol, log_det](const Vector& x) {
    return detail::gaussian_log_density(x - mean, chol, log_det) -
           detail::gaussian_log_density(x, chol, log_det);
  };
  t->gaussian_prior = std::move(prior);
  return t;
}

/// Cholesky factor of the equicorrelation matrix (1-ρ) I + ρ 11ᵀ.
inline Matrix equicorrelation_chol(Eigen::Index d, double rho) {
  Matrix cov = Matrix::Constant(d, d, rho);
  cov.diagonal().setOnes();
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("equicorrelation_chol: covariance is not positive definite");
  }
  return llt.matrixL();
}

/// Equal-weight Gaussian mixture with shared equicorrelated covariance and
/// modes at offset * 1.
inline TargetPtr correlated_mog_target(Eigen::Index d, double rho,
                                       const std::vector<double>& mode_offsets) {
  if (d < 1) throw std::invalid_argument("correlated_mog_target: d must be >= 1");
  if (!(std::abs(rho) < 1.0)) throw std::invalid_argument("correlated_mog_target: |rho| must be < 1");
  if (mode_offsets.empty()) throw std::invalid_argument("correlated_mog_target: need at least one mode");
  Matrix cov = Matrix::Constant(d, d, rho);
  cov.diagonal().setOnes();
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("correlated_mog_target: singular covariance");
  }
  const Matrix L = llt.matrixL();
  const Matrix precision = llt.solve(Matrix::Identity(d, d));
  const double norm_const = -0.5 * detail::chol_log_det(L) - 0.5 * static_cast<double>(d) * detail::kLog2Pi -
                            std::log(static_cast<double>(mode_offsets.size()));

  auto eval = [precision, mode_offsets, norm_const](const Vector& x, Vector* grad) {
    const std::size_t k = mode_offsets.size();
    std::vector<double> terms(k);
    std::vector<Vector> pulls;
    if (grad) pulls.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      const Vector centered = x.array() - mode_offsets[i];
      const Vector pc = precision * centered;
      terms[i] = -0.5 * centered.dot(pc);
      if (grad) pulls[i] = -pc;
    }
    const double lse = detail::log_sum_exp(terms);
    if (grad) {
      grad->setZero(x.size());
      for (std::size_t i = 0; i < k; ++i) *grad += std::exp(terms[i] - lse) * pulls[i];
    }
    return lse + norm_const;
  };

  auto t = std::make_shared<TargetModel>();
  t->name = "mog";
  t->dim = d;
  t->log_density = [eval](const Vector& x) { return eval(x, nullptr); };
  t->value_and_gradient = [eval](const Vector& x, Vector& grad) { return eval(x, &grad); };
  return t;
}

/// Uniform density on the box [lo, hi]^d; -inf outside.
inline TargetPtr uniform_box_target(Eigen::Index d, double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("uniform_box_target: need hi > lo");
  const double log_vol = static_cast<double>(d) * std::log(hi - lo);
  auto t = std::make_shared<TargetModel>();
  t->name = "uniform";
  t->dim = d;
  t->log_density = [lo, hi, log_vol](const Vector& x) {
    for (double v : x) {
      if (v < lo || v > hi) return -std::numeric_limits<double>::infinity();
    }
    return -log_vol;
  };
  return t;
}

/// Gaussian likelihood N(x | lik_mean, Σ_L) times a zero-mean Gaussian prior
/// N(x | 0, Σ_p). The posterior is Gaussian, which makes it the reference
/// case for elliptical slice sampling.
inline TargetPtr conjugate_gaussian_target(const Matrix& prior_chol, const Vector& lik_mean,
                                           const Matrix& lik_chol) {
  if (!detail::lower_with_positive_diagonal(prior_chol) ||
      !detail::lower_with_positive_diagonal(lik_chol) || prior_chol.rows() != lik_mean.size() ||
      lik_chol.rows() != lik_mean.size()) {
    throw std::invalid_argument("conjugate_gaussian_target: invalid factors");
  }
  const double prior_ld = detail::chol_log_det(prior_chol);
  const double lik_ld = detail::chol_log_det(lik_chol);
  auto loglik = [lik_mean, lik_chol, lik_ld](const Vector& x) {
    return detail::gaussian_log_density(x - lik_mean, lik_chol, lik_ld);
  };
  auto t = std::make_shared<TargetModel>();
  t->name = "conjugate";
  t->dim = lik_mean.size();
  t->log_density = [loglik, prior_chol, prior_ld](const Vector& x) {
    return loglik(x) + detail::gaussian_log_density(x, prior_chol, prior_ld);
  };
  t->value_and_gradient = [lik_mean, lik_chol, prior_chol, t_ld = lik_ld, p_ld = prior_ld](
                              const Vector& x, Vector& grad) {
    const Vector wl = lik_chol.triangularView<Eigen::Lower>().solve(x - lik_mean);
    const Vector wp = prior_chol.triangularView<Eigen::Lower>().solve(x);
    grad = -lik_chol.transpose().triangularView<Eigen::Upper>().solve(wl) -
           prior_chol.transpose().triangularView<Eigen::Upper>().solve(wp);
    const double n = static_cast<double>(x.size());
    return -0.5 * wl.squaredNorm() - 0.5 * t_ld - 0.5 * wp.squaredNorm() - 0.5 * p_ld - n * detail::kLog2Pi;
  };
  t->gaussian_prior = GaussianPrior{prior_chol, loglik};
  return t;
}

/// Closed-form posterior of the conjugate pair above.
struct GaussianMoments {
  Vector mean;
  Matrix cov;
};

inline GaussianMoments conjugate_posterior(const Matrix& prior_chol, const Vector& lik_mean,
                                           const Matrix& lik_chol) {
  const Matrix prior_prec = (prior_chol * prior_chol.transpose()).inverse();
  const Matrix lik_prec = (lik_chol * lik_chol.transpose()).inverse();
  GaussianMoments out;
  out.cov = (prior_prec + lik_prec).inverse();
  out.mean = out.cov * (lik_prec * lik_mean);
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian-process hyperparameter posterior.

struct GpData {
  Matrix inputs;   // n x p
  Vector outputs;  // n
};

inline constexpr double kGpJitter = 1e-8;
inline constexpr std::uint64_t kGpDataSeed = 20240501;

/// RBF kernel matrix τ² exp(-λ² |x - x'|²) + (σ² + jitter) I.
inline Matrix gp_kernel_matrix(const Matrix& inputs, double sigma, double tau, double lambda) {
  const Eigen::Index n = inputs.rows();
  Matrix K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double sq = (inputs.row(i) - inputs.row(j)).squaredNorm();
      const double v = tau * tau * std::exp(-lambda * lambda * sq);
      K(i, j) = v;
      K(j, i) = v;
    }
    K(i, i) += sigma * sigma + kGpJitter;
  }
  return K;
}

/// Synthetic regression data drawn from the GP prior at
/// (σ, τ, λ) = (0.3, 1, 1): inputs ~ N(0, I_p), outputs ~ N(0, K).
/// Rows are prefix-stable: the first k rows do not depend on n.
inline GpData synthetic_gp_data(Eigen::Index n, Eigen::Index p = 3, std::uint64_t seed = kGpDataSeed) {
  if (n < 2 || p < 1) throw std::invalid_argument("synthetic_gp_data: need n >= 2, p >= 1");
  const auto streams = split(make_key(seed), 2);
  GpData data;
  data.inputs.resize(n, p);
  RngKey kx = streams[0];
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) std::tie(data.inputs(i, j), kx) = normal(kx);
  }
  const Matrix K = gp_kernel_matrix(data.inputs, 0.3, 1.0, 1.0);
  Eigen::LLT<Matrix> llt(K);
  if (llt.info() != Eigen::Success) throw TargetError("synthetic_gp_data: kernel matrix not PD");
  auto [z, unused] = standard_normal_vec(streams[1], n);
  data.outputs = llt.matrixL() * z;
  return data;
}

inline void write_gp_csv(const GpData& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_gp_csv: cannot open " + path);
  out.precision(17);
  for (Eigen::Index j = 0; j < data.inputs.cols(); ++j) out << "x" << j << ",";
  out << "y\n";
  for (Eigen::Index i = 0; i < data.inputs.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.inputs.cols(); ++j) out << data.inputs(i, j) << ",";
    out << data.outputs[i] << "\n";
  }
}

inline GpData read_gp_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_gp_csv: cannot open " + path);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error("read_gp_csv: ragged row");
    }
    rows.push_back(std::move(row));
  }
  if (rows.size() < 2 || rows.front().size() < 2) throw std::runtime_error("read_gp_csv: too few rows");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(rows.front().size()) - 1;
  GpData data{Matrix(n, p), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) data.inputs(i, j) = rows[i][j];
    data.outputs[i] = rows[i][p];
  }
  return data;
}

namespace detail {

// Log marginal likelihood of y under N(0, K(θ)) and optionally its gradient
// in θ = (σ, τ, λ).
inline double gp_log_marginal(const GpData& data, const Vector& theta, Vector* grad) {
  const double sigma = theta[0], tau = theta[1], lambda = theta[2];
  const Eigen::Index n = data.inputs.rows();
  Matrix sqdist(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double sq = (data.inputs.row(i) - data.inputs.row(j)).squaredNorm();
      sqdist(i, j) = sq;
      sqdist(j, i) = sq;
    }
  }
  const Matrix E = (-lambda * lambda * sqdist).array().exp().matrix();
  Matrix K = tau * tau * E;
  K.diagonal().array() += sigma * sigma + kGpJitter;
  Eigen::LLT<Matrix> llt(K);
  if (llt.info() != Eigen::Success) {
    throw TargetError("gp target: Cholesky of the kernel matrix failed");
  }
  const Vector alpha = llt.solve(data.outputs);
  const Matrix L = llt.matrixL();
  const double value = -0.5 * data.outputs.dot(alpha) - 0.5 * chol_log_det(L) -
                       0.5 * static_cast<double>(n) * kLog2Pi;
  if (grad) {
    // d/dθ = ½ tr((ααᵀ - K⁻¹) dK/dθ)
    const Matrix W = alpha * alpha.transpose() - llt.solve(Matrix::Identity(n, n));
    const Matrix dtau = 2.0 * tau * E;
    const Matrix dlambda = (tau * tau * -2.0 * lambda) * E.cwiseProduct(sqdist);
    grad->resize(3);
    (*grad)[0] = 0.5 * W.trace() * 2.0 * sigma;
    (*grad)[1] = 0.5 * W.cwiseProduct(dtau).sum();
    (*grad)[2] = 0.5 * W.cwiseProduct(dlambda).sum();
  }
  return value;
}

}  // namespace detail

/// Posterior over (σ, τ, λ) with independent N(0, 1) priors. The prior is
/// exposed as the Gaussian part (Σ = I) and the GP marginal likelihood as f.
inline TargetPtr gp_hyperparameter_target(GpData data) {
  if (data.inputs.rows() < 2 || data.outputs.size() != data.inputs.rows()) {
    throw std::invalid_argument("gp_hyperparameter_target: need n >= 2 matched rows");
  }
  auto shared = std::make_shared<const GpData>(std::move(data));
  const double n = static_cast<double>(shared->inputs.rows());
  auto t = std::make_shared<TargetModel>();
  t->name = "gp";
  t->dim = 3;
  t->log_density = [shared](const Vector& theta) {
    return detail::gp_log_marginal(*shared, theta, nullptr) - 0.5 * theta.squaredNorm() -
           1.5 * detail::kLog2Pi;
  };
  t->value_and_gradient = [shared](const Vector& theta, Vector& grad) {
    const double v = detail::gp_log_marginal(*shared, theta, &grad);
    grad -= theta;
    return v - 0.5 * theta.squaredNorm() - 1.5 * detail::kLog2Pi;
  };
  t->gaussian_prior =
      GaussianPrior{Matrix::Identity(3, 3),
                    [shared](const Vector& theta) { return detail::gp_log_marginal(*shared, theta, nullptr); }};
  // Cholesky dominates: O(n³), normalised so a 10-point GP costs one unit.
  t->eval_cost = (n / 10.0) * (n / 10.0) * (n / 10.0);
  return t;
}

/// Max relative disagreement between the analytic gradient and central
/// differences at x, measured in the infinity norm.
inline double gradient_fd_error(const TargetModel& target, const Vector& x, double rel_step = 1e-5) {
  if (!target.has_gradient()) throw std::invalid_argument("gradient_fd_error: target has no gradient");
  Vector grad;
  target.value_and_gradient(x, grad);
  Vector fd(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * std::max(1.0, std::abs(x[i]));
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    fd[i] = (target.log_density(xp) - target.log_density(xm)) / (2 * h);
  }
  return (grad - fd).lpNorm<Eigen::Infinity>() / std::max(fd.lpNorm<Eigen::Infinity>(), 1e-8);
}

}  // namespace fsmcmc
