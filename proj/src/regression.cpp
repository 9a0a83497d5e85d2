#include "covshift/regression.hpp"

#include "covshift/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace covshift {

Eigen::VectorXd FittedRegression::predict_rows(const Covariates& x) const {
  Eigen::VectorXd out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) out(i) = predict(row(x, i));
  return out;
}

std::vector<std::vector<int>> monomial_exponents(Index p, int degree) {
  std::vector<std::vector<int>> out;
  std::vector<int> e(static_cast<std::size_t>(p), 0);
  for (int total = 0; total <= degree; ++total) {
    // Enumerate compositions of `total` into p parts, lexicographically descending.
    std::function<void(std::size_t, int)> rec = [&](std::size_t j, int left) {
      if (j + 1 == e.size()) {
        e[j] = left;
        out.push_back(e);
        return;
      }
      for (int k = left; k >= 0; --k) {
        e[j] = k;
        rec(j + 1, left - k);
      }
    };
    if (p == 0) {
      if (total == 0) out.emplace_back();
      continue;
    }
    rec(0, total);
  }
  return out;
}

namespace {

class PolynomialBasis {
 public:
  PolynomialBasis(const Covariates& x, int degree)
      : degree_(degree), exponents_(monomial_exponents(x.cols(), degree)) {
    mean_ = x.colwise().mean().transpose();
    scale_.resize(x.cols());
    for (Index j = 0; j < x.cols(); ++j) {
      const double sd = std::sqrt((x.col(j).array() - mean_(j)).square().mean());
      scale_(j) = sd > 0.0 ? 1.0 / sd : 1.0;
    }
  }

  std::size_t size() const { return exponents_.size(); }

  void features(CovRef x, Eigen::Ref<Eigen::VectorXd> out) const {
    const Index p = x.size();
    Eigen::MatrixXd powers(p, degree_ + 1);
    for (Index j = 0; j < p; ++j) {
      const double z = (x(j) - mean_(j)) * scale_(j);
      powers(j, 0) = 1.0;
      for (int k = 1; k <= degree_; ++k) powers(j, k) = powers(j, k - 1) * z;
    }
    for (std::size_t b = 0; b < exponents_.size(); ++b) {
      double v = 1.0;
      for (Index j = 0; j < p; ++j) v *= powers(j, exponents_[b][static_cast<std::size_t>(j)]);
      out(static_cast<Index>(b)) = v;
    }
  }

  Eigen::MatrixXd design(const Covariates& x) const {
    Eigen::MatrixXd d(x.rows(), static_cast<Index>(size()));
    Eigen::VectorXd buf(static_cast<Index>(size()));
    for (Index i = 0; i < x.rows(); ++i) {
      features(row(x, i), buf);
      d.row(i) = buf.transpose();
    }
    return d;
  }

 private:
  int degree_;
  std::vector<std::vector<int>> exponents_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd scale_;
};

Eigen::VectorXd solve_normal_equations(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs, double ridge) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() == Eigen::Success && ldlt.rcond() >= 1e-12) return ldlt.solve(rhs);
  Eigen::MatrixXd reg = gram;
  reg.diagonal().array() += ridge;
  Eigen::LDLT<Eigen::MatrixXd> fallback(reg);
  return fallback.solve(rhs);
}

Eigen::VectorXd least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, double ridge) {
  return solve_normal_equations(design.transpose() * design, design.transpose() * y, ridge);
}

Covariates take_rows(const Covariates& x, const std::vector<Index>& rows) {
  Covariates out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = x.row(rows[k]);
  return out;
}

}  // namespace

FittedRegression fit_sieve(const Covariates& x, const Eigen::VectorXd& y, const SieveOptions& options) {
  const Index n = x.rows();
  if (y.size() != n) throw InvalidDataError("features and targets differ in length");
  if (options.folds < 2 || n < options.folds) throw ConfigurationError("sieve needs n >= folds >= 2");
  if (options.degrees.empty()) throw ConfigurationError("empty candidate degree set");

  const auto k = static_cast<Index>(options.folds);
  std::vector<std::vector<Index>> train(k), test(k);
  for (Index i = 0; i < n; ++i) {
    for (Index f = 0; f < k; ++f) (i % k == f ? test : train)[f].push_back(i);
  }
  std::size_t min_train = static_cast<std::size_t>(n);
  for (const auto& t : train) min_train = std::min(min_train, t.size());

  std::vector<int> degrees = options.degrees;
  std::sort(degrees.begin(), degrees.end());
  int best_degree = -1;
  double best_err = std::numeric_limits<double>::infinity();
  for (int d : degrees) {
    if (d < 0) throw ConfigurationError("negative sieve degree");
    if (monomial_exponents(x.cols(), d).size() > min_train) continue;
    double err = 0.0;
    for (Index f = 0; f < k; ++f) {
      const Covariates xt = take_rows(x, train[f]);
      Eigen::VectorXd yt(static_cast<Index>(train[f].size()));
      for (std::size_t r = 0; r < train[f].size(); ++r) yt(static_cast<Index>(r)) = y(train[f][r]);
      const PolynomialBasis basis(xt, d);
      const Eigen::VectorXd beta = least_squares(basis.design(xt), yt, options.ridge);
      const Eigen::MatrixXd dv = basis.design(take_rows(x, test[f]));
      const Eigen::VectorXd pred = dv * beta;
      for (std::size_t r = 0; r < test[f].size(); ++r) {
        const double e = pred(static_cast<Index>(r)) - y(test[f][r]);
        err += e * e;
      }
    }
    if (err < best_err) {
      best_err = err;
      best_degree = d;
    }
  }
  if (best_degree < 0) best_degree = degrees.front();

  auto basis = std::make_shared<const PolynomialBasis>(x, best_degree);
  const Eigen::VectorXd beta = least_squares(basis->design(x), y, options.ridge);
  return FittedRegression(RegressionFamily::sieve_poly, best_degree, [basis, beta](CovRef xi) {
    Eigen::VectorXd f(static_cast<Index>(basis->size()));
    basis->features(xi, f);
    return f.dot(beta);
  });
}

namespace {

struct TreeNode {
  int feature = -1;  ///< -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct TreeEnsemble {
  double base = 0.0;
  std::vector<TreeNode> nodes;
  std::vector<int> roots;

  double predict(CovRef x) const {
    double out = base;
    for (int r : roots) {
      int k = r;
      while (nodes[static_cast<std::size_t>(k)].feature >= 0) {
        const auto& nd = nodes[static_cast<std::size_t>(k)];
        k = x(nd.feature) <= nd.threshold ? nd.left : nd.right;
      }
      out += nodes[static_cast<std::size_t>(k)].value;
    }
    return out;
  }
};

}  // namespace

namespace {

std::shared_ptr<TreeEnsemble> grow_ensemble(const Covariates& x, const Eigen::VectorXd& y,
                                            const BoostingOptions& options, int trees) {
  const Index n = x.rows();
  const Index p = x.cols();
  const Index min_leaf = std::max<Index>(1, options.min_leaf);

  std::vector<std::vector<Index>> sorted(static_cast<std::size_t>(p));
  for (Index j = 0; j < p; ++j) {
    auto& o = sorted[static_cast<std::size_t>(j)];
    o.resize(static_cast<std::size_t>(n));
    std::iota(o.begin(), o.end(), Index{0});
    std::stable_sort(o.begin(), o.end(), [&](Index a, Index b) { return x(a, j) < x(b, j); });
  }

  auto model = std::make_shared<TreeEnsemble>();
  model->base = y.mean();
  Eigen::VectorXd fitted = Eigen::VectorXd::Constant(n, model->base);
  if (options.shrinkage == 0.0) return model;

  if (!(options.subsample > 0.0 && options.subsample <= 1.0)) throw ConfigurationError("subsample must be in (0, 1]");
  const auto bag_size = std::max<Index>(2 * min_leaf, static_cast<Index>(std::floor(options.subsample * n)));
  std::mt19937_64 rng(options.seed);
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::vector<char> in_bag(static_cast<std::size_t>(n), 1);

  std::vector<int> node_of(static_cast<std::size_t>(n));
  for (int t = 0; t < trees; ++t) {
    const Eigen::VectorXd resid = y - fitted;
    if (bag_size < n) {
      // Partial Fisher-Yates draw of the rows used to grow this tree.
      for (Index k = 0; k < bag_size; ++k) {
        std::uniform_int_distribution<Index> pick(k, n - 1);
        std::swap(perm[static_cast<std::size_t>(k)], perm[static_cast<std::size_t>(pick(rng))]);
      }
      std::fill(in_bag.begin(), in_bag.end(), 0);
      for (Index k = 0; k < bag_size; ++k) in_bag[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = 1;
    }
    auto& nodes = model->nodes;
    const int root = static_cast<int>(nodes.size());
    nodes.emplace_back();
    model->roots.push_back(root);
    std::fill(node_of.begin(), node_of.end(), root);
    std::vector<int> active{root};

    for (int level = 0; level < options.depth && !active.empty(); ++level) {
      const std::size_t m = active.size();
      std::vector<int> slot(nodes.size(), -1);
      for (std::size_t s = 0; s < m; ++s) slot[static_cast<std::size_t>(active[s])] = static_cast<int>(s);
      std::vector<double> tot_sum(m, 0.0);
      std::vector<Index> tot_cnt(m, 0);
      for (Index i = 0; i < n; ++i) {
        const int s = slot[static_cast<std::size_t>(node_of[static_cast<std::size_t>(i)])];
        if (s < 0 || !in_bag[static_cast<std::size_t>(i)]) continue;
        tot_sum[static_cast<std::size_t>(s)] += resid(i);
        ++tot_cnt[static_cast<std::size_t>(s)];
      }
      std::vector<double> best_gain(m, 1e-12);
      std::vector<int> best_feat(m, -1);
      std::vector<double> best_thr(m, 0.0);
      for (Index j = 0; j < p; ++j) {
        std::vector<double> ls(m, 0.0);
        std::vector<Index> lc(m, 0);
        std::vector<double> last(m, -std::numeric_limits<double>::infinity());
        for (Index i : sorted[static_cast<std::size_t>(j)]) {
          const int s = slot[static_cast<std::size_t>(node_of[static_cast<std::size_t>(i)])];
          if (s < 0 || !in_bag[static_cast<std::size_t>(i)]) continue;
          const auto su = static_cast<std::size_t>(s);
          const double v = x(i, j);
          const Index rc = tot_cnt[su] - lc[su];
          if (lc[su] >= min_leaf && rc >= min_leaf && v > last[su]) {
            const double rs = tot_sum[su] - ls[su];
            const double gain = ls[su] * ls[su] / static_cast<double>(lc[su]) +
                                rs * rs / static_cast<double>(rc) -
                                tot_sum[su] * tot_sum[su] / static_cast<double>(tot_cnt[su]);
            if (gain > best_gain[su]) {
              best_gain[su] = gain;
              best_feat[su] = static_cast<int>(j);
              best_thr[su] = 0.5 * (last[su] + v);
            }
          }
          ls[su] += resid(i);
          ++lc[su];
          last[su] = v;
        }
      }
      std::vector<int> next;
      for (std::size_t s = 0; s < m; ++s) {
        if (best_feat[s] < 0) continue;
        const int k = active[s];
        const int l = static_cast<int>(nodes.size());
        nodes.emplace_back();
        nodes.emplace_back();
        nodes[static_cast<std::size_t>(k)].feature = best_feat[s];
        nodes[static_cast<std::size_t>(k)].threshold = best_thr[s];
        nodes[static_cast<std::size_t>(k)].left = l;
        nodes[static_cast<std::size_t>(k)].right = l + 1;
        next.push_back(l);
        next.push_back(l + 1);
      }
      for (Index i = 0; i < n; ++i) {
        const auto& nd = nodes[static_cast<std::size_t>(node_of[static_cast<std::size_t>(i)])];
        if (nd.feature >= 0) node_of[static_cast<std::size_t>(i)] = x(i, nd.feature) <= nd.threshold ? nd.left : nd.right;
      }
      active = std::move(next);
    }

    std::vector<double> leaf_sum(nodes.size() - static_cast<std::size_t>(root), 0.0);
    std::vector<Index> leaf_cnt(leaf_sum.size(), 0);
    for (Index i = 0; i < n; ++i) {
      if (!in_bag[static_cast<std::size_t>(i)]) continue;
      const auto k = static_cast<std::size_t>(node_of[static_cast<std::size_t>(i)] - root);
      leaf_sum[k] += resid(i);
      ++leaf_cnt[k];
    }
    for (std::size_t k = 0; k < leaf_sum.size(); ++k) {
      if (leaf_cnt[k] > 0) {
        nodes[k + static_cast<std::size_t>(root)].value =
            options.shrinkage * leaf_sum[k] / static_cast<double>(leaf_cnt[k]);
      }
    }
    for (Index i = 0; i < n; ++i) fitted(i) += nodes[static_cast<std::size_t>(node_of[static_cast<std::size_t>(i)])].value;
  }
  return model;
}

// Number of trees in [0, options.trees] minimizing K-fold held-out squared
// error, folds by row index modulo K; ties go to fewer trees.
int cv_tree_count(const Covariates& x, const Eigen::VectorXd& y, const BoostingOptions& options) {
  const Index n = x.rows();
  const int k = options.cv_folds;
  std::vector<double> sse(static_cast<std::size_t>(options.trees) + 1, 0.0);
  for (int f = 0; f < k; ++f) {
    std::vector<Index> train, held;
    for (Index i = 0; i < n; ++i) (i % k == f ? held : train).push_back(i);
    Eigen::VectorXd yt(static_cast<Index>(train.size()));
    for (std::size_t r = 0; r < train.size(); ++r) yt(static_cast<Index>(r)) = y(train[r]);
    const auto model = grow_ensemble(take_rows(x, train), yt, options, options.trees);
    for (Index i : held) {
      const auto xi = row(x, i);
      double pred = model->base;
      sse[0] += (y(i) - pred) * (y(i) - pred);
      for (std::size_t t = 0; t < model->roots.size(); ++t) {
        int node = model->roots[t];
        while (model->nodes[static_cast<std::size_t>(node)].feature >= 0) {
          const auto& nd = model->nodes[static_cast<std::size_t>(node)];
          node = xi(nd.feature) <= nd.threshold ? nd.left : nd.right;
        }
        pred += model->nodes[static_cast<std::size_t>(node)].value;
        sse[t + 1] += (y(i) - pred) * (y(i) - pred);
      }
      // An empty ensemble (zero shrinkage) predicts the base for every count.
      for (std::size_t t = model->roots.size() + 1; t < sse.size(); ++t) sse[t] += (y(i) - pred) * (y(i) - pred);
    }
  }
  return static_cast<int>(std::min_element(sse.begin(), sse.end()) - sse.begin());
}

}  // namespace

FittedRegression fit_boosted_stumps(const Covariates& x, const Eigen::VectorXd& y, const BoostingOptions& options) {
  const Index n = x.rows();
  const Index p = x.cols();
  if (y.size() != n) throw InvalidDataError("features and targets differ in length");
  if (n < 10) throw InvalidDataError("boosting needs at least 10 rows");
  if (options.trees < 0 || options.depth < 1 || options.shrinkage < 0.0 || options.cv_folds < 0 ||
      options.cv_folds == 1 || options.cv_folds > n) {
    throw ConfigurationError("invalid boosting options");
  }
  const int trees = options.cv_folds >= 2 ? cv_tree_count(x, y, options) : options.trees;
  const auto model = grow_ensemble(x, y, options, trees);
  if (p == 1) {
    // A scalar ensemble is a step function: tabulate it once per cell.
    std::vector<double> cuts;
    for (const auto& nd : model->nodes) {
      if (nd.feature >= 0) cuts.push_back(nd.threshold);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    std::vector<double> cell(cuts.size() + 1);
    Eigen::VectorXd probe(1);
    for (std::size_t c = 0; c < cuts.size(); ++c) {
      probe(0) = cuts[c];
      cell[c] = model->predict(probe);
    }
    probe(0) = std::numeric_limits<double>::infinity();
    cell.back() = model->predict(probe);
    return FittedRegression(RegressionFamily::boosted_stumps, trees, [cuts, cell](CovRef xi) {
      const auto c = static_cast<std::size_t>(std::lower_bound(cuts.begin(), cuts.end(), xi(0)) - cuts.begin());
      return cell[c];
    });
  }
  return FittedRegression(RegressionFamily::boosted_stumps, trees,
                          [model](CovRef xi) { return model->predict(xi); });
}

FittedRegression fit_logistic(const Covariates& x, const Eigen::VectorXi& labels, const LogisticOptions& options) {
  const Index n = x.rows();
  if (labels.size() != n) throw InvalidDataError("features and labels differ in length");
  if (((labels.array() != 0) && (labels.array() != 1)).any()) throw InvalidDataError("labels must be 0 or 1");
  if (!(options.clip > 0.0 && options.clip < 0.5)) throw ConfigurationError("logistic clip must lie in (0, 0.5)");

  auto basis = std::make_shared<const PolynomialBasis>(x, options.degree);
  const Eigen::MatrixXd d = basis->design(x);
  const Eigen::VectorXd target = labels.cast<double>();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d.cols());
  const double frac = std::clamp(target.mean(), 1e-3, 1.0 - 1e-3);
  beta(0) = std::log(frac / (1.0 - frac));
  for (int it = 0; it < options.max_iter; ++it) {
    const Eigen::ArrayXd eta = (d * beta).array();
    const Eigen::ArrayXd prob = 1.0 / (1.0 + (-eta).exp());
    const Eigen::ArrayXd wts = (prob * (1.0 - prob)).max(1e-10);
    Eigen::MatrixXd hess = d.transpose() * (d.array().colwise() * wts).matrix();
    hess.diagonal().array() += options.ridge;
    const Eigen::VectorXd grad = d.transpose() * (target.array() - prob).matrix() - options.ridge * beta;
    const Eigen::VectorXd step = Eigen::LDLT<Eigen::MatrixXd>(hess).solve(grad);
    if (!step.allFinite()) break;
    beta += step;
    if (step.lpNorm<Eigen::Infinity>() < options.tol) break;
  }
  const double lo = options.clip;
  return FittedRegression(RegressionFamily::logistic, options.degree, [basis, beta, lo](CovRef xi) {
    Eigen::VectorXd f(static_cast<Index>(basis->size()));
    basis->features(xi, f);
    const double prob = 1.0 / (1.0 + std::exp(-f.dot(beta)));
    return std::clamp(prob, lo, 1.0 - lo);
  });
}

}  // namespace covshift
