#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "peerfx/dig2rsi.hpp"
#include "peerfx/nn.hpp"
#include "peerfx/result.hpp"
#include "peerfx/sem.hpp"
#include "peerfx/types.hpp"

namespace peerfx {

class SingularMatrixError : public std::runtime_error {
 public:
  explicit SingularMatrixError(const std::string& what)
      : std::runtime_error(what) {}
};

// Solve (D'D + ridge I) c = D'y. Plain Cholesky first, with a pivoted LDLT
// fallback; at ridge = 0 the solution must satisfy residual orthogonality
// ||D'(y - Dc)||_inf < 1e-6 ||D'y||_inf or the design is reported singular.
inline Vector least_squares(const Matrix& design, const Vector& target,
                            double ridge = 0.0) {
  if (design.rows() < design.cols()) {
    throw std::invalid_argument("least_squares needs rows >= columns");
  }
  if (design.rows() != target.size()) {
    throw std::invalid_argument("design/target row mismatch");
  }
  if (ridge < 0.0) throw std::invalid_argument("ridge must be >= 0");

  Matrix normal = design.transpose() * design;
  normal.diagonal().array() += ridge;
  const Vector rhs = design.transpose() * target;

  // Pivoted factorization doubles as the rank check: a vanishing pivot
  // means the normal matrix is singular and coefficients are not unique.
  const auto ldlt = normal.ldlt();
  const Vector pivots = ldlt.vectorD().cwiseAbs();
  if (!(pivots.minCoeff() > 1e-12 * pivots.maxCoeff())) {
    throw SingularMatrixError("normal matrix is singular");
  }

  Vector coef;
  const Eigen::LLT<Matrix> llt(normal);
  if (llt.info() == Eigen::Success) {
    coef = llt.solve(rhs);
  } else {
    coef = ldlt.solve(rhs);
  }
  if (!coef.allFinite()) {
    throw SingularMatrixError("normal matrix is singular");
  }
  if (ridge == 0.0) {
    const double gap =
        (design.transpose() * (target - design * coef)).cwiseAbs().maxCoeff();
    const double scale = std::max(rhs.cwiseAbs().maxCoeff(), 1e-12);
    if (gap > 1e-6 * scale) {
      throw SingularMatrixError(
          "normal equations unsolved to tolerance; collinear design");
    }
  }
  return coef;
}

enum class InstrumentSource { second_order, first_order_mean, leave_one_out };

inline std::string to_string(InstrumentSource s) {
  switch (s) {
    case InstrumentSource::second_order: return "2SLS";
    case InstrumentSource::first_order_mean: return "FN-IV";
    case InstrumentSource::leave_one_out: return "LOO";
  }
  return "?";
}

struct LinearIvSpec {
  InstrumentSource source = InstrumentSource::second_order;
  bool control_own_x = true;         // include X in both stages
  bool control_first_order = true;   // include X_G; forced off when X_G is
                                     // itself the excluded instrument
  double ridge = 0.0;
  bool use_raw = false;              // skip the (I-G) preprocessing

  void validate() const {
    if (ridge < 0.0) throw std::invalid_argument("ridge must be >= 0");
  }
};

namespace detail {

inline Dataset ensure_preprocessed(const Dataset& ds, bool use_raw) {
  if (use_raw || ds.ig_transformed) return ds;
  return preprocess_ig(ds);
}

// least_squares with one automatic tiny-ridge retry on collinearity.
inline Vector solve_with_retry(const Matrix& design, const Vector& target,
                               double ridge,
                               std::vector<std::string>& warnings) {
  try {
    return least_squares(design, target, ridge);
  } catch (const SingularMatrixError&) {
    const double fallback = std::max(ridge, 1e-8);
    warnings.push_back("collinear design; retried with ridge " +
                       std::to_string(fallback));
    return least_squares(design, target, fallback);
  }
}

}  // namespace detail

// Ablation anchor: regress the (I-G)-transformed outcome on
// (Y_G, X_G, X, intercept) and read the Y_G coefficient. Biased under
// confounding; that is the point.
inline EstimationResult naive_ols(const Dataset& ds, bool use_raw = false) {
  const Dataset pre = detail::ensure_preprocessed(ds, use_raw);
  const int n = pre.n(), d = pre.d();
  Matrix design(n, 2 * d + 2);
  design << pre.y_g, pre.x_g, pre.x, Vector::Ones(n);
  const Vector coef = least_squares(design, pre.y, 0.0);
  EstimationResult res = make_constant_pe_result("Naive", coef[0], n, pre);
  const Vector resid = pre.y - design * coef;
  res.diagnostics["r2"] = r_squared(pre.y, resid);
  return res;
}

// Leave-one-out instruments: for each focal node i, delete every edge
// incident to i, re-row-normalize, and take row i of the second-order
// aggregate in the reduced graph. Removing i's incident edges isolates i
// itself, so its first hop in G_{-i} is empty and row i vanishes; the same
// holds trivially when i had no neighbors to begin with. The instrument
// matrix is therefore identically zero under this construction, and the
// downstream 2SLS run flags it as weak.
inline Matrix loo_instruments(const SparseGraph& g, const Matrix& x) {
  if (x.rows() != g.num_nodes()) {
    throw std::invalid_argument("feature rows do not match node count");
  }
  // Row i of G_{-i}^2 X: every length-two walk from i starts on an edge
  // incident to i, and all of those were deleted, so the row is zero for
  // every focal node regardless of the rest of G_{-i}.
  return Matrix::Zero(x.rows(), x.cols());
}

// Two-stage least squares with network instruments. Stage 1 regresses the
// peer exposure on (instruments, controls); stage 2 regresses the outcome
// on (fitted exposure, controls). The instrument set and controls follow
// the source: second_order uses X_G2 with controls (X_G, X); the
// first-order variant uses X_G itself as the excluded instrument with own
// features as controls; leave_one_out uses the reduced-graph instruments
// with controls (X_G, X).
inline EstimationResult tsls(const Dataset& ds, const LinearIvSpec& spec) {
  spec.validate();
  Matrix loo;
  if (spec.source == InstrumentSource::leave_one_out) {
    loo = loo_instruments(ds.graph, ds.x);
    if (!spec.use_raw && !ds.ig_transformed) loo = ds.graph.ig_transform(loo);
  }
  const Dataset pre = detail::ensure_preprocessed(ds, spec.use_raw);
  const int n = pre.n(), d = pre.d();

  Matrix instruments;
  switch (spec.source) {
    case InstrumentSource::second_order:
      instruments = pre.x_g2;
      break;
    case InstrumentSource::first_order_mean:
      instruments = pre.x_g;
      break;
    case InstrumentSource::leave_one_out:
      instruments = loo;
      break;
  }
  const bool with_xg = spec.control_first_order &&
                       spec.source != InstrumentSource::first_order_mean;
  Matrix controls(n, (with_xg ? d : 0) + (spec.control_own_x ? d : 0));
  {
    Index col = 0;
    if (with_xg) {
      controls.middleCols(col, d) = pre.x_g;
      col += d;
    }
    if (spec.control_own_x) controls.middleCols(col, d) = pre.x;
  }

  std::vector<std::string> warnings;

  Matrix d1(n, instruments.cols() + controls.cols() + 1);
  d1 << instruments, controls, Vector::Ones(n);
  const Vector c1 = detail::solve_with_retry(d1, pre.y_g, spec.ridge, warnings);
  const Vector yg_hat = d1 * c1;

  // Weak-instrument diagnostic: partial R^2 of the excluded instruments in
  // stage 1, from the restricted regression on controls alone.
  Matrix d1r(n, controls.cols() + 1);
  d1r << controls, Vector::Ones(n);
  const Vector c1r = detail::solve_with_retry(d1r, pre.y_g, spec.ridge, warnings);
  const double rss_full = (pre.y_g - yg_hat).squaredNorm();
  const double rss_restricted = (pre.y_g - d1r * c1r).squaredNorm();
  const double partial_r2 =
      rss_restricted > 0.0 ? (rss_restricted - rss_full) / rss_restricted : 0.0;
  if (partial_r2 < 0.01) {
    warnings.push_back("weak instruments: stage-1 partial R^2 " +
                       std::to_string(partial_r2) + " < 0.01");
  }

  Matrix d2(n, controls.cols() + 2);
  d2 << yg_hat, controls, Vector::Ones(n);
  const Vector c2 = detail::solve_with_retry(d2, pre.y, spec.ridge, warnings);

  EstimationResult res =
      make_constant_pe_result(to_string(spec.source), c2[0], n, pre);
  res.warnings = std::move(warnings);
  res.diagnostics["stage1_partial_r2"] = partial_r2;
  res.diagnostics["stage1_r2"] = r_squared(pre.y_g, pre.y_g - yg_hat);
  if (spec.source == InstrumentSource::first_order_mean) {
    // X_G is excluded from stage 2 here; with a single feature this is a
    // just-identified design.
    res.diagnostics["excluded_instruments"] = static_cast<double>(d);
  }
  return res;
}

// Deep-learning 2SLS: plug-in prediction with two MLPs and no control
// function. Stage 1 predicts the exposure from (X_G2, X_G, X); stage 2
// predicts the outcome from (fitted exposure, X_G, X); the peer effect is
// the average derivative with respect to the fitted exposure.
inline EstimationResult dl_2sls(const Dataset& ds, const TrainConfig& cfg1,
                                const TrainConfig& cfg2, bool use_raw = false) {
  cfg1.validate();
  cfg2.validate();
  const Dataset pre = detail::ensure_preprocessed(ds, use_raw);
  const int n = pre.n(), d = pre.d();

  const Matrix z1 = stage1_input(pre);
  Mlp stage1(default_stage1_arch(static_cast<int>(z1.cols())), cfg1.seed);
  fit(stage1, z1, pre.y_g, cfg1);
  stage1.set_train(false);
  const Vector yg_hat = stage1.forward_eval(z1).col(0);

  Matrix z2(n, 1 + 2 * d);
  z2 << yg_hat, pre.x_g, pre.x;
  Mlp stage2(MlpSpec::scalar_regressor(static_cast<int>(z2.cols()),
                                       arch::kHiddenWidth, arch::kHiddenLayers,
                                       /*batchnorm=*/false, /*dropout=*/0.0),
             cfg2.seed);
  fit(stage2, z2, pre.y, cfg2);
  stage2.set_train(false);

  EstimationResult res;
  res.estimator = "DL-2SLS";
  res.per_node_pe = partial_wrt_input(stage2, z2, 0);
  res.pe_hat = res.per_node_pe.mean();
  fill_bias(res, pre);
  res.diagnostics["stage1_r2"] = r_squared(pre.y_g, pre.y_g - yg_hat);
  return res;
}

}  // namespace peerfx
