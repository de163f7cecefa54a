#include "ecborrow/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "ecborrow/data_model.hpp"
#include "ecborrow/error.hpp"

namespace ecborrow {

CalibrationProblem CalibrationProblem::from_covariates(const Eigen::MatrixXd& ec_x,
                                                       const Eigen::MatrixXd& rpct_x,
                                                       const BasisSpec& basis) {
  CalibrationProblem p;
  p.basis_spec = basis;
  p.ec_basis = basis.expand(ec_x);
  p.target_moments = basis.expand(rpct_x).colwise().mean().transpose();
  return p;
}

namespace {

struct DualState {
  Eigen::VectorXd scores;   // eta'(z_i - t)
  Eigen::VectorXd w;        // softmax(scores)
  double value = 0.0;       // log sum exp(scores)
  Eigen::VectorXd grad;     // sum w_i (z_i - t)
};

DualState evaluate(const Eigen::MatrixXd& zc, const Eigen::VectorXd& eta) {
  DualState s;
  s.scores = zc * eta;
  const double m = s.scores.maxCoeff();
  s.w = (s.scores.array() - m).exp();
  const double sum = s.w.sum();
  s.w /= sum;
  s.value = m + std::log(sum);
  s.grad = zc.transpose() * s.w;
  return s;
}

}  // namespace

CalibrationWeights solve_calibration(const CalibrationProblem& problem,
                                     const CalibrationOptions& options) {
  const Eigen::MatrixXd& g = problem.ec_basis;
  const Eigen::VectorXd& target = problem.target_moments;
  const Eigen::Index n = g.rows();
  const Eigen::Index k = g.cols();
  if (n < 1 || k < 1) throw std::invalid_argument("solve_calibration: empty problem");
  if (target.size() != k) throw std::invalid_argument("solve_calibration: target length mismatch");

  // Standardize the EC basis; constant columns are either trivially satisfied
  // or make the problem infeasible.
  std::vector<Eigen::Index> active;
  Eigen::VectorXd mean = g.colwise().mean().transpose();
  Eigen::VectorXd sd(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    sd(j) = std::sqrt((g.col(j).array() - mean(j)).square().sum() / static_cast<double>(n));
    const double scale = 1.0 + std::abs(mean(j)) + std::abs(target(j));
    if (sd(j) <= 1e-12 * scale) {
      if (std::abs(target(j) - mean(j)) > options.tol * scale) {
        std::ostringstream msg;
        msg << "calibration infeasible: basis column " << j << " is constant (" << mean(j)
            << ") on external controls but the target is " << target(j)
            << "; reduce the basis or pre-match external controls";
        throw InfeasibleError(msg.str());
      }
    } else {
      active.push_back(j);
    }
  }

  const auto ka = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd zc(n, ka);  // standardized, centered at the target
  Eigen::VectorXd sda(ka);
  for (Eigen::Index a = 0; a < ka; ++a) {
    const auto j = active[static_cast<std::size_t>(a)];
    zc.col(a) = (g.col(j).array() - target(j)) / sd(j);
    sda(a) = sd(j);
  }

  Eigen::VectorXd eta = Eigen::VectorXd::Zero(ka);
  CalibrationWeights out;
  out.basis_spec = problem.basis_spec;

  auto residual_of = [&](const DualState& s) {
    return ka == 0 ? 0.0 : (s.grad.array() * sda.array()).abs().maxCoeff();
  };

  DualState state = evaluate(zc, eta);
  double residual = residual_of(state);
  double best = residual;
  int stalled = 0;
  bool converged = residual <= options.tol;
  int it = 0;

  while (!converged && it < options.max_iter) {
    ++it;
    // Hessian of the dual: weighted covariance of the centered basis.
    Eigen::MatrixXd h = zc.transpose() * state.w.asDiagonal() * zc - state.grad * state.grad.transpose();
    const double ridge = 1e-14 * std::max(h.trace(), 1e-300);
    h.diagonal().array() += ridge;
    Eigen::VectorXd dir = -h.ldlt().solve(state.grad);
    if (!dir.allFinite()) dir = -state.grad;
    double slope = state.grad.dot(dir);
    if (slope >= 0) {
      dir = -state.grad;
      slope = -state.grad.squaredNorm();
    }

    double step = 1.0;
    DualState next = evaluate(zc, eta + dir);
    // Near the optimum the objective is flat to rounding; a shrinking gradient
    // then stands in for sufficient decrease.
    auto accept = [&](const DualState& s, double t) {
      return s.value <= state.value + 1e-4 * t * slope ||
             s.grad.norm() <= (1.0 - 1e-4 * t) * state.grad.norm();
    };
    for (int bt = 0; bt < 60 && !accept(next, step); ++bt) {
      step *= 0.5;
      next = evaluate(zc, eta + step * dir);
    }
    eta += step * dir;
    state = std::move(next);
    residual = residual_of(state);

    if (eta.norm() > options.dual_cap) {
      std::ostringstream msg;
      msg << "calibration infeasible: dual norm exceeded " << options.dual_cap
          << " (constraint residual " << residual
          << "); the target moments are outside or on the boundary of the external-control "
             "convex hull; reduce the basis or pre-match external controls";
      throw InfeasibleError(msg.str());
    }
    if (residual <= options.tol) {
      converged = true;
      break;
    }
    if (residual < best * (1.0 - 1e-12)) {
      best = residual;
      stalled = 0;
    } else if (++stalled >= options.stall_limit) {
      if (residual <= options.accept_tol) {
        converged = true;
        break;
      }
      std::ostringstream msg;
      msg << "calibration infeasible: constraint residual stalled at " << residual << " for "
          << options.stall_limit
          << " iterations; reduce the basis or pre-match external controls";
      throw InfeasibleError(msg.str());
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "calibration did not converge in " << options.max_iter
        << " iterations (constraint residual " << residual << ", dual norm " << eta.norm() << ")";
    throw ConvergenceError(msg.str());
  }

  out.iterations = it;
  out.weights = state.w;
  out.dual = Eigen::VectorXd::Zero(k);
  for (Eigen::Index a = 0; a < ka; ++a) out.dual(active[static_cast<std::size_t>(a)]) = eta(a) / sda(a);

  // Original-scale quantities and the normalizer for out-of-sample evaluation.
  const Eigen::VectorXd lin = g * out.dual;
  out.shift = lin.maxCoeff();
  out.log_sum = std::log((lin.array() - out.shift).exp().sum());
  const Eigen::VectorXd moments = g.transpose() * out.weights;
  out.residual = (moments - target).lpNorm<Eigen::Infinity>();
  out.dual_residual = (moments - target).norm();
  out.objective = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double q = out.weights(i);
    if (q > 0) out.objective += q * std::log(q);
  }
  return out;
}

Eigen::VectorXd density_ratio_scale(const CalibrationWeights& weights, std::size_t n_rpct) {
  return weights.weights * static_cast<double>(n_rpct);
}

Eigen::VectorXd evaluate_weights(const CalibrationWeights& weights, const Eigen::MatrixXd& basis_rows) {
  if (basis_rows.cols() != weights.dual.size()) {
    throw std::invalid_argument("evaluate_weights: basis dimension mismatch");
  }
  return ((basis_rows * weights.dual).array() - weights.shift - weights.log_sum).exp();
}

Eigen::VectorXd evaluate_weights_at(const CalibrationWeights& weights, const Eigen::MatrixXd& x) {
  return evaluate_weights(weights, weights.basis_spec.expand(x));
}

void write_weights_csv(std::ostream& out, std::span<const std::size_t> record_ids,
                       const CalibrationWeights& weights, std::size_t n_rpct, int group,
                       bool header) {
  if (record_ids.size() != static_cast<std::size_t>(weights.weights.size())) {
    throw std::invalid_argument("write_weights_csv: id count mismatch");
  }
  const Eigen::VectorXd dr = density_ratio_scale(weights, n_rpct);
  if (header) out << "record_id,weight,density_ratio_weight" << (group >= 0 ? ",group\n" : "\n");
  for (std::size_t i = 0; i < record_ids.size(); ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    out << record_ids[i] << ',' << format_double(weights.weights(e)) << ','
        << format_double(dr(e));
    if (group >= 0) out << ',' << group;
    out << '\n';
  }
}

}  // namespace ecborrow
