#include "ecborrow/nuisance.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ecborrow/random.hpp"

namespace ecborrow {

// ---------------------------------------------------------------------------
// Basis

BasisSpec BasisSpec::tail_powers(std::size_t p, std::size_t tail, int degree) {
  if (tail > p) throw std::invalid_argument("tail_powers: tail exceeds dimension");
  BasisSpec b;
  b.degree = degree;
  for (std::size_t c = p - tail; c < p; ++c) b.power_columns.push_back(c);
  return b;
}

std::size_t BasisSpec::dimension(std::size_t p) const {
  const std::size_t powered = power_columns.empty() ? p : power_columns.size();
  std::size_t d = p + static_cast<std::size_t>(std::max(degree - 1, 0)) * powered;
  if (interactions) d += p * (p - 1) / 2;
  return d;
}

Eigen::MatrixXd BasisSpec::expand(const Eigen::MatrixXd& x) const {
  const auto p = static_cast<std::size_t>(x.cols());
  for (auto c : power_columns) {
    if (c >= p) throw std::invalid_argument("basis power column out of range");
  }
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(dimension(p)));
  Eigen::Index col = 0;
  out.leftCols(x.cols()) = x;
  col += x.cols();
  for (int pw = 2; pw <= degree; ++pw) {
    auto add = [&](std::size_t c) {
      out.col(col++) = x.col(static_cast<Eigen::Index>(c)).array().pow(pw).matrix();
    };
    if (power_columns.empty()) {
      for (std::size_t c = 0; c < p; ++c) add(c);
    } else {
      for (auto c : power_columns) add(c);
    }
  }
  if (interactions) {
    for (Eigen::Index a = 0; a < x.cols(); ++a) {
      for (Eigen::Index b = a + 1; b < x.cols(); ++b) {
        out.col(col++) = x.col(a).cwiseProduct(x.col(b));
      }
    }
  }
  return out;
}

std::vector<std::string> BasisSpec::names(const std::vector<std::string>& cov) const {
  std::vector<std::string> out(cov);
  for (int pw = 2; pw <= degree; ++pw) {
    if (power_columns.empty()) {
      for (const auto& c : cov) out.push_back(c + "^" + std::to_string(pw));
    } else {
      for (auto c : power_columns) out.push_back(cov.at(c) + "^" + std::to_string(pw));
    }
  }
  if (interactions) {
    for (std::size_t a = 0; a < cov.size(); ++a) {
      for (std::size_t b = a + 1; b < cov.size(); ++b) out.push_back(cov[a] + "*" + cov[b]);
    }
  }
  return out;
}

std::string BasisSpec::describe() const {
  if (degree <= 1 && !interactions) return "identity";
  std::ostringstream s;
  s << "poly" << degree;
  if (!power_columns.empty()) {
    s << "[";
    for (std::size_t i = 0; i < power_columns.size(); ++i) {
      s << (i ? "," : "") << power_columns[i];
    }
    s << "]";
  }
  if (interactions) s << "+int";
  return s.str();
}

void to_json(nlohmann::json& j, const BasisSpec& b) {
  j = nlohmann::json{{"degree", b.degree},
                     {"power_columns", b.power_columns},
                     {"interactions", b.interactions}};
}

void from_json(const nlohmann::json& j, BasisSpec& b) {
  b.degree = j.value("degree", 1);
  b.power_columns = j.value("power_columns", std::vector<std::size_t>{});
  b.interactions = j.value("interactions", false);
}

// ---------------------------------------------------------------------------
// OLS

namespace {

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& b) {
  Eigen::MatrixXd d(b.rows(), b.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(b.cols()) = b;
  return d;
}

struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;  // 0 marks a constant column

  explicit Standardizer(const Eigen::MatrixXd& x) {
    const double n = static_cast<double>(x.rows());
    mean = x.colwise().mean().transpose();
    sd.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double v = (x.col(j).array() - mean(j)).square().sum() / n;
      const double s = std::sqrt(v);
      sd(j) = s > 1e-12 * std::max(1.0, std::abs(mean(j))) ? s : 0.0;
    }
  }

  std::vector<Eigen::Index> active() const {
    std::vector<Eigen::Index> a;
    for (Eigen::Index j = 0; j < sd.size(); ++j) {
      if (sd(j) > 0.0) a.push_back(j);
    }
    return a;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& cols) const {
    Eigen::MatrixXd z(x.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const auto j = cols[k];
      z.col(static_cast<Eigen::Index>(k)) = (x.col(j).array() - mean(j)) / sd(j);
    }
    return z;
  }
};

}  // namespace

LinearModel fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const BasisSpec& basis,
                    const OlsOptions& options, std::string fitted_on) {
  if (x.rows() != y.size()) throw std::invalid_argument("fit_ols: row count mismatch");
  if (x.rows() == 0) throw std::invalid_argument("fit_ols: empty design");

  LinearModel model;
  model.basis = basis;
  model.fitted_on = std::move(fitted_on);

  const Eigen::MatrixXd b = basis.expand(x);
  const Eigen::MatrixXd d = with_intercept(b);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d);
  if (qr.rank() == d.cols()) {
    model.coefficients = qr.solve(y);
    return model;
  }
  if (!options.ridge_fallback) {
    throw NumericalError("fit_ols: rank-deficient design (rank " + std::to_string(qr.rank()) +
                         " < " + std::to_string(d.cols()) + ")");
  }

  // Ridge on the standardized, centered design; the intercept is unpenalized.
  const Standardizer st(b);
  const auto cols = st.active();
  const Eigen::MatrixXd z = st.apply(b, cols);
  const double ybar = y.mean();
  const Eigen::VectorXd yc = y.array() - ybar;
  Eigen::MatrixXd gram = z.transpose() * z;
  gram.diagonal().array() += options.ridge_penalty;
  const Eigen::VectorXd beta_z = gram.ldlt().solve(z.transpose() * yc);

  model.coefficients = Eigen::VectorXd::Zero(d.cols());
  double intercept = ybar;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const auto j = cols[k];
    const double beta = beta_z(static_cast<Eigen::Index>(k)) / st.sd(j);
    model.coefficients(j + 1) = beta;
    intercept -= beta * st.mean(j);
  }
  model.coefficients(0) = intercept;
  model.ridge_used = true;
  return model;
}

Eigen::VectorXd ols_leverage(const Eigen::MatrixXd& x_train, const Eigen::MatrixXd& x_new,
                             const BasisSpec& basis) {
  if (x_train.cols() != x_new.cols()) throw std::invalid_argument("ols_leverage: column mismatch");
  const Eigen::MatrixXd dt = with_intercept(basis.expand(x_train));
  const Eigen::MatrixXd dn = with_intercept(basis.expand(x_new));
  const Eigen::MatrixXd gram = dt.transpose() * dt;
  const Eigen::MatrixXd sol = gram.completeOrthogonalDecomposition().solve(Eigen::MatrixXd(dn.transpose()));
  Eigen::VectorXd h(dn.rows());
  for (Eigen::Index i = 0; i < dn.rows(); ++i) h(i) = std::max(0.0, dn.row(i).dot(sol.col(i)));
  return h;
}

Eigen::VectorXd LinearModel::predict(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd b = basis.expand(x);
  if (b.cols() + 1 != coefficients.size()) {
    throw std::invalid_argument("LinearModel::predict: dimension mismatch");
  }
  return (b * coefficients.tail(b.cols())).array() + coefficients(0);
}

Eigen::VectorXd predict_mu(const LinearModel& model, const Eigen::MatrixXd& x) {
  return model.predict(x);
}

// ---------------------------------------------------------------------------
// Logistic regression

namespace {

double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// log(1 + exp(t)) without overflow.
double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double log_likelihood(const Eigen::MatrixXd& w, const Eigen::VectorXd& y, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = w * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y(i) * eta(i) - softplus(eta(i));
  return ll;
}

}  // namespace

LogisticModel fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                           const LogisticOptions& options) {
  if (x.rows() != y.size()) throw std::invalid_argument("fit_logistic: row count mismatch");
  const double ones = y.sum();
  if (ones <= 0.0 || ones >= static_cast<double>(y.size())) {
    throw NumericalError("fit_logistic: response must contain both classes");
  }

  const Standardizer st(x);
  const auto cols = st.active();
  const Eigen::MatrixXd w = with_intercept(st.apply(x, cols));

  LogisticModel model;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(w.cols());
  double ll = log_likelihood(w, y, beta);

  for (int it = 1; it <= options.max_iter; ++it) {
    model.iterations = it;
    const Eigen::VectorXd eta = w * beta;
    Eigen::VectorXd p(eta.size());
    Eigen::VectorXd v(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      p(i) = sigmoid(eta(i));
      v(i) = std::max(p(i) * (1.0 - p(i)), 1e-300);
    }
    const Eigen::VectorXd grad = w.transpose() * (y - p);
    if (grad.norm() <= options.tol) {
      model.converged = true;
      break;
    }
    const Eigen::MatrixXd hess = w.transpose() * v.asDiagonal() * w;
    Eigen::VectorXd step = hess.ldlt().solve(grad);
    if (!step.allFinite()) {
      model.separated = true;
      break;
    }

    double t = 1.0;
    Eigen::VectorXd next = beta + step;
    double next_ll = log_likelihood(w, y, next);
    for (int h = 0; h < 40 && next_ll < ll - 1e-12 * std::abs(ll); ++h) {
      t *= 0.5;
      next = beta + t * step;
      next_ll = log_likelihood(w, y, next);
    }
    const double moved = (next - beta).lpNorm<Eigen::Infinity>();
    beta = next;
    ll = next_ll;

    if (beta.norm() > options.coefficient_cap) {
      beta *= options.coefficient_cap / beta.norm();
      model.separated = true;
      break;
    }
    if (moved <= 1e-13 * (1.0 + beta.lpNorm<Eigen::Infinity>())) {
      model.converged = true;
      break;
    }
  }

  // Back to the raw covariate scale.
  model.coefficients = Eigen::VectorXd::Zero(x.cols() + 1);
  double intercept = beta(0);
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const auto j = cols[k];
    const double b = beta(static_cast<Eigen::Index>(k) + 1) / st.sd(j);
    model.coefficients(j + 1) = b;
    intercept -= b * st.mean(j);
  }
  model.coefficients(0) = intercept;

  const Eigen::MatrixXd d = with_intercept(x);
  const Eigen::VectorXd p = model.predict_proba(x);
  model.gradient_norm = (d.transpose() * (y - p)).norm();
  return model;
}

Eigen::VectorXd LogisticModel::predict_proba(const Eigen::MatrixXd& x) const {
  if (x.cols() + 1 != coefficients.size()) {
    throw std::invalid_argument("LogisticModel::predict_proba: dimension mismatch");
  }
  const Eigen::VectorXd eta = (x * coefficients.tail(x.cols())).array() + coefficients(0);
  return eta.unaryExpr([](double t) { return sigmoid(t); });
}

// ---------------------------------------------------------------------------
// Boosted trees

double RegressionTree::predict(const RowRef& row) const {
  if (nodes.empty()) return 0.0;
  int k = 0;
  while (nodes[static_cast<std::size_t>(k)].feature >= 0) {
    const auto& n = nodes[static_cast<std::size_t>(k)];
    k = row(n.feature) <= n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(k)].value;
}

double TreeEnsemble::predict_row(const RowRef& row, int n_trees) const {
  const std::size_t m =
      n_trees < 0 ? trees.size() : std::min(trees.size(), static_cast<std::size_t>(n_trees));
  double s = 0.0;
  for (std::size_t t = 0; t < m; ++t) s += trees[t].predict(row);
  return intercept + shrinkage * s;
}

Eigen::VectorXd TreeEnsemble::predict(const Eigen::MatrixXd& x, int n_trees) const {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = predict_row(x.row(i), n_trees);
  return out;
}

namespace {

// Exact greedy depth-limited tree growth on a fixed row set. Per-feature sort
// orders are computed once per ensemble; each tree works on a copy and nodes
// own contiguous ranges that are stably partitioned in place.
class TreeGrower {
 public:
  TreeGrower(const Eigen::MatrixXd& x, const std::vector<int>& rows, int max_depth, int min_leaf)
      : x_(x), max_depth_(max_depth), min_leaf_(std::max(min_leaf, 1)),
        left_flag_(static_cast<std::size_t>(x.rows()), 0), tmp_(rows.size()) {
    sorted_.resize(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index f = 0; f < x.cols(); ++f) {
      auto& s = sorted_[static_cast<std::size_t>(f)];
      s = rows;
      std::stable_sort(s.begin(), s.end(), [&](int a, int b) { return x_(a, f) < x_(b, f); });
    }
    work_ = sorted_;
  }

  // Grows one tree on resid (indexed by design row) and adds shrinkage * leaf
  // value to fit for every training row.
  RegressionTree grow(const std::vector<double>& resid, double shrinkage, std::vector<double>& fit) {
    for (std::size_t f = 0; f < sorted_.size(); ++f) {
      std::copy(sorted_[f].begin(), sorted_[f].end(), work_[f].begin());
    }
    RegressionTree tree;
    build(tree, 0, tmp_.size(), resid, 0, shrinkage, fit);
    return tree;
  }

 private:
  int build(RegressionTree& tree, std::size_t lo, std::size_t hi, const std::vector<double>& resid,
            int depth, double shrinkage, std::vector<double>& fit) {
    const int* any = work_.front().data();
    const auto m = static_cast<long>(hi - lo);
    const double n = static_cast<double>(m);
    double total = 0.0;
    for (std::size_t i = lo; i < hi; ++i) total += resid[static_cast<std::size_t>(any[i])];

    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes.back().value = total / n;

    int best_f = -1;
    double best_thr = 0.0;
    double best_gain = 1e-12 * (1.0 + total * total / n);
    if (depth < max_depth_ && m >= 2L * min_leaf_) {
      for (std::size_t f = 0; f < work_.size(); ++f) {
        const int* s = work_[f].data() + lo;
        const double* col = x_.col(static_cast<Eigen::Index>(f)).data();
        double left = 0.0;
        for (long i = 0; i + 1 < m; ++i) {
          left += resid[static_cast<std::size_t>(s[i])];
          const long nl = i + 1;
          const long nr = m - nl;
          if (nl < min_leaf_) continue;
          if (nr < min_leaf_) break;
          const double a = col[s[i]];
          const double b = col[s[i + 1]];
          if (!(a < b)) continue;
          const double right = total - left;
          const double gain = left * left / static_cast<double>(nl) +
                              right * right / static_cast<double>(nr) - total * total / n;
          if (gain > best_gain) {
            best_gain = gain;
            best_f = static_cast<int>(f);
            double thr = a + 0.5 * (b - a);
            if (!(thr < b)) thr = a;
            best_thr = thr;
          }
        }
      }
    }

    if (best_f < 0) {
      const double v = tree.nodes[static_cast<std::size_t>(id)].value;
      for (std::size_t i = lo; i < hi; ++i) fit[static_cast<std::size_t>(any[i])] += shrinkage * v;
      return id;
    }

    const double* col = x_.col(best_f).data();
    std::size_t n_left = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      const bool l = col[any[i]] <= best_thr;
      left_flag_[static_cast<std::size_t>(any[i])] = l ? 1 : 0;
      n_left += l ? 1 : 0;
    }
    for (auto& w : work_) {
      std::size_t a = 0;
      std::size_t b = n_left;
      for (std::size_t i = lo; i < hi; ++i) {
        const int r = w[i];
        tmp_[left_flag_[static_cast<std::size_t>(r)] ? a++ : b++] = r;
      }
      std::copy(tmp_.begin(), tmp_.begin() + static_cast<long>(hi - lo), w.begin() + static_cast<long>(lo));
    }
    tree.nodes[static_cast<std::size_t>(id)].feature = best_f;
    tree.nodes[static_cast<std::size_t>(id)].threshold = best_thr;
    const int l = build(tree, lo, lo + n_left, resid, depth + 1, shrinkage, fit);
    tree.nodes[static_cast<std::size_t>(id)].left = l;
    const int r = build(tree, lo + n_left, hi, resid, depth + 1, shrinkage, fit);
    tree.nodes[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  const Eigen::MatrixXd& x_;
  int max_depth_;
  int min_leaf_;
  std::vector<char> left_flag_;
  std::vector<int> tmp_;
  std::vector<std::vector<int>> sorted_;
  std::vector<std::vector<int>> work_;
};

// Boosts on the given rows of x against target (indexed by design row).
// After each tree, on_tree(t, ensemble) is invoked when provided.
template <typename OnTree>
TreeEnsemble boost_rows(const Eigen::MatrixXd& x, const Eigen::VectorXd& target,
                        const std::vector<int>& rows, int n_trees, int depth, double shrinkage,
                        int min_leaf, OnTree&& on_tree) {
  TreeEnsemble ens;
  ens.shrinkage = shrinkage;
  double mean = 0.0;
  for (int r : rows) mean += target(r);
  mean /= static_cast<double>(rows.size());
  ens.intercept = mean;
  if (n_trees <= 0 || rows.empty()) return ens;

  std::vector<double> fit(static_cast<std::size_t>(x.rows()), mean);
  std::vector<double> resid(static_cast<std::size_t>(x.rows()), 0.0);
  TreeGrower grower(x, rows, depth, min_leaf);
  ens.trees.reserve(static_cast<std::size_t>(n_trees));
  for (int t = 0; t < n_trees; ++t) {
    for (int r : rows) resid[static_cast<std::size_t>(r)] = target(r) - fit[static_cast<std::size_t>(r)];
    ens.trees.push_back(grower.grow(resid, shrinkage, fit));
    on_tree(t, ens);
  }
  return ens;
}

struct TuneResult {
  int depth = 1;
  int n_trees = 0;
  std::vector<TuningPoint> path;
};

// K-fold CV over (depth, checkpoint) restricted to rows; folds[k] indexes rows.
TuneResult tune(const Eigen::MatrixXd& x, const Eigen::VectorXd& target, const std::vector<int>& rows,
                const std::vector<int>& folds, int k_folds, const BoostingConfig& config) {
  std::vector<int> grid = config.tree_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  std::vector<int> depths = config.depth_grid;
  std::sort(depths.begin(), depths.end());
  depths.erase(std::unique(depths.begin(), depths.end()), depths.end());
  if (grid.empty() || depths.empty()) throw std::invalid_argument("boosting grids must be nonempty");
  const int t_max = grid.back();

  TuneResult best;
  double best_mse = std::numeric_limits<double>::infinity();
  for (int depth : depths) {
    std::vector<double> sse(grid.size(), 0.0);
    double count = 0.0;
    for (int k = 0; k < k_folds; ++k) {
      std::vector<int> train;
      std::vector<int> held;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        (folds[i] == k ? held : train).push_back(rows[i]);
      }
      if (held.empty() || train.empty()) continue;
      count += static_cast<double>(held.size());
      std::vector<double> pred(held.size(), 0.0);
      std::size_t next = 0;
      while (next < grid.size() && grid[next] <= 0) ++next;
      TreeEnsemble fitted = boost_rows(
          x, target, train, t_max, depth, config.shrinkage, config.min_leaf,
          [&](int t, const TreeEnsemble& ens) {
            const auto& tree = ens.trees.back();
            for (std::size_t h = 0; h < held.size(); ++h) {
              pred[h] += ens.shrinkage * tree.predict(x.row(held[h]));
            }
            while (next < grid.size() && grid[next] == t + 1) {
              double s = 0.0;
              for (std::size_t h = 0; h < held.size(); ++h) {
                const double e = target(held[h]) - (ens.intercept + pred[h]);
                s += e * e;
              }
              sse[next] += s;
              ++next;
            }
          });
      // Checkpoints at zero trees (if any) score the intercept alone.
      for (std::size_t g = 0; g < grid.size() && grid[g] <= 0; ++g) {
        for (std::size_t h = 0; h < held.size(); ++h) {
          const double e = target(held[h]) - fitted.intercept;
          sse[g] += e * e;
        }
      }
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const double mse = count > 0 ? sse[g] / count : std::numeric_limits<double>::infinity();
      best.path.push_back({depth, grid[g], mse});
      if (mse < best_mse) {
        best_mse = mse;
        best.depth = depth;
        best.n_trees = std::max(grid[g], 0);
      }
    }
  }
  return best;
}

bool is_constant(const Eigen::VectorXd& v) {
  if (v.size() == 0) return true;
  const double lo = v.minCoeff();
  const double hi = v.maxCoeff();
  return hi - lo <= 1e-12 * (1.0 + std::abs(lo) + std::abs(hi));
}

}  // namespace

TreeEnsemble boost(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int n_trees, int depth,
                   double shrinkage, int min_leaf) {
  std::vector<int> rows(static_cast<std::size_t>(x.rows()));
  std::iota(rows.begin(), rows.end(), 0);
  return boost_rows(x, y, rows, n_trees, depth, shrinkage, min_leaf, [](int, const TreeEnsemble&) {});
}

BoostedTreesModel fit_boosted_trees(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                    const BoostingConfig& config, const Eigen::VectorXd* offset) {
  if (x.rows() != y.size()) throw std::invalid_argument("fit_boosted_trees: row count mismatch");
  if (config.folds < 2) throw std::invalid_argument("fit_boosted_trees: need at least 2 folds");
  if (x.rows() < 2 * config.folds) {
    throw std::invalid_argument("fit_boosted_trees: need at least 2 rows per fold");
  }
  if (offset && offset->size() != y.size()) {
    throw std::invalid_argument("fit_boosted_trees: offset length mismatch");
  }

  const Eigen::VectorXd target = offset ? Eigen::VectorXd(y - *offset) : y;
  const auto n = static_cast<std::size_t>(x.rows());

  BoostedTreesModel model;
  model.shrinkage = config.shrinkage;
  model.has_offset = offset != nullptr;
  model.fold_assignment = assign_folds(n, config.folds, config.seed);

  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);

  if (is_constant(target)) {
    model.degenerate = true;
    model.full.intercept = target.mean();
    model.full.shrinkage = config.shrinkage;
    model.fold_models.assign(static_cast<std::size_t>(config.folds), model.full);
    return model;
  }

  const TuneResult full = tune(x, target, all, model.fold_assignment, config.folds, config);
  model.cv_path = full.path;
  model.max_depth = full.depth;
  model.n_trees = full.n_trees;
  model.full = boost_rows(x, target, all, full.n_trees, full.depth, config.shrinkage,
                          config.min_leaf, [](int, const TreeEnsemble&) {});

  for (int k = 0; k < config.folds; ++k) {
    std::vector<int> train;
    for (std::size_t i = 0; i < n; ++i) {
      if (model.fold_assignment[i] != k) train.push_back(static_cast<int>(i));
    }
    const auto inner = assign_folds(train.size(), config.folds,
                                    derive_seed(config.seed, static_cast<std::uint64_t>(k) + 1));
    const TuneResult t = tune(x, target, train, inner, config.folds, config);
    model.fold_models.push_back(boost_rows(x, target, train, t.n_trees, t.depth, config.shrinkage,
                                           config.min_leaf, [](int, const TreeEnsemble&) {}));
  }
  return model;
}

Eigen::VectorXd predict_mu(const BoostedTreesModel& model, const Eigen::MatrixXd& x,
                           PredictMode mode, const Eigen::VectorXd* offset) {
  if (model.has_offset && !offset) {
    throw std::invalid_argument("predict_mu: model was fitted with an offset; supply it");
  }
  if (offset && offset->size() != x.rows()) {
    throw std::invalid_argument("predict_mu: offset length mismatch");
  }
  Eigen::VectorXd out(x.rows());
  if (mode == PredictMode::kInSample) {
    out = model.full.predict(x);
  } else {
    if (static_cast<std::size_t>(x.rows()) != model.fold_assignment.size()) {
      throw std::invalid_argument("predict_mu: cross-fitted mode needs the training design");
    }
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const auto k = static_cast<std::size_t>(model.fold_assignment[static_cast<std::size_t>(i)]);
      out(i) = model.fold_models.at(k).predict_row(x.row(i));
    }
  }
  if (offset) out += *offset;
  return out;
}

// ---------------------------------------------------------------------------

VarianceRatio estimate_variance_ratio(std::span<const double> resid_rpct_controls,
                                      std::span<const double> resid_ec) {
  if (resid_rpct_controls.empty() || resid_ec.empty()) {
    throw std::invalid_argument("estimate_variance_ratio: residual vectors must be nonempty");
  }
  auto mean_sq = [](std::span<const double> v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return s / static_cast<double>(v.size());
  };
  VarianceRatio r;
  r.numerator = mean_sq(resid_rpct_controls);
  r.denominator = mean_sq(resid_ec);
  if (!(r.denominator > 0.0)) {
    throw NumericalError("estimate_variance_ratio: EC residual mean square is zero");
  }
  r.value = r.numerator / r.denominator;
  return r;
}

// ---------------------------------------------------------------------------

namespace {
std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }
}  // namespace

nlohmann::json summary_json(const LinearModel& m) {
  return {{"type", "linear"},
          {"basis", m.basis},
          {"basis_name", m.basis.describe()},
          {"coefficients", to_vec(m.coefficients)},
          {"fitted_on", m.fitted_on},
          {"ridge_used", m.ridge_used}};
}

nlohmann::json summary_json(const LogisticModel& m) {
  return {{"type", "logistic"},
          {"coefficients", to_vec(m.coefficients)},
          {"iterations", m.iterations},
          {"gradient_norm", m.gradient_norm},
          {"converged", m.converged},
          {"separated", m.separated}};
}

nlohmann::json summary_json(const BoostedTreesModel& m) {
  nlohmann::json path = nlohmann::json::array();
  for (const auto& p : m.cv_path) {
    path.push_back({{"depth", p.depth}, {"n_trees", p.n_trees}, {"mse", p.mse}});
  }
  return {{"type", "boosted_trees"},
          {"n_trees", m.n_trees},
          {"max_depth", m.max_depth},
          {"shrinkage", m.shrinkage},
          {"folds", m.fold_models.size()},
          {"has_offset", m.has_offset},
          {"degenerate", m.degenerate},
          {"cv_path", path}};
}

}  // namespace ecborrow
