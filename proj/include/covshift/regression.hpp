#pragma once

// Nonparametric regression learners used for nuisance fitting: a polynomial
// sieve with cross-validated degree, least-squares boosted trees, and
// logistic regression by iteratively reweighted least squares.

#include "covshift/numeric.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace covshift {

enum class RegressionFamily { sieve_poly, boosted_stumps, logistic };

/// Immutable fitted regression; safe to share across threads.
class FittedRegression {
 public:
  FittedRegression(RegressionFamily family, int complexity, std::function<double(CovRef)> predictor)
      : family_(family),
        complexity_(complexity),
        predictor_(std::make_shared<const std::function<double(CovRef)>>(std::move(predictor))) {}

  double predict(CovRef x) const { return (*predictor_)(x); }
  Eigen::VectorXd predict_rows(const Covariates& x) const;
  RegressionFamily family() const { return family_; }
  /// Sieve degree, number of trees, or logistic feature degree.
  int selected_complexity() const { return complexity_; }

 private:
  RegressionFamily family_;
  int complexity_;
  std::shared_ptr<const std::function<double(CovRef)>> predictor_;
};

/// Exponent vectors of all monomials in p variables with total degree <= d,
/// starting with the constant.
std::vector<std::vector<int>> monomial_exponents(Index p, int degree);

struct SieveOptions {
  std::vector<int> degrees{1, 2, 3, 5};
  int folds = 5;
  double ridge = 1e-8;  ///< added to the Gram diagonal when it is numerically singular
};

/// Least squares on standardized polynomial features; the degree minimizes
/// K-fold CV error (ties to the smaller degree). Degrees whose basis has more
/// terms than a CV training split has rows are skipped.
FittedRegression fit_sieve(const Covariates& x, const Eigen::VectorXd& y, const SieveOptions& options = {});

struct BoostingOptions {
  int trees = 500;
  int depth = 2;
  double shrinkage = 0.05;
  Index min_leaf = 5;
  double subsample = 1.0;   ///< fraction of rows drawn without replacement per tree
  std::uint64_t seed = 0;   ///< subsampling stream
  /// When >= 2, the number of trees (at most `trees`) is chosen by K-fold CV.
  int cv_folds = 5;
};

FittedRegression fit_boosted_stumps(const Covariates& x, const Eigen::VectorXd& y,
                                    const BoostingOptions& options = {});

struct LogisticOptions {
  int degree = 1;          ///< polynomial degree of the linear predictor
  int max_iter = 100;
  double tol = 1e-10;
  double ridge = 1e-8;
  double clip = 1e-6;      ///< predictions are clipped to [clip, 1 - clip]
};

/// P(label = 1 | x) for 0/1 labels.
FittedRegression fit_logistic(const Covariates& x, const Eigen::VectorXi& labels,
                              const LogisticOptions& options = {});

}  // namespace covshift
