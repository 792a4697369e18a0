#include <catch2/catch.hpp>

#include "peerfx/baselines.hpp"

using namespace peerfx;

namespace {

Matrix random_matrix(Index rows, Index cols, std::uint64_t seed) {
  Rng rng(seed);
  return Matrix::NullaryExpr(rows, cols, [&]() { return rng.normal(); });
}

DatasetSpec confounded_linear_spec(int n) {
  DatasetSpec spec;
  spec.n = n;
  spec.d = 3;
  spec.graph.param = 10.0 / n;
  return spec;  // lambda = omega = 1 by default
}

DatasetSpec unconfounded_linear_spec(int n) {
  DatasetSpec spec = confounded_linear_spec(n);
  spec.params.lambda_u = 1e-12;
  spec.params.omega = 0.0;
  spec.params.confounder_scale = 1e-12;
  return spec;
}

}  // namespace

TEST_CASE("least_squares", "[baselines]") {
  SECTION("exact line") {
    Matrix d(3, 1);
    d << 1, 2, 3;
    Vector y(3);
    y << 2, 4, 6;
    const Vector c = least_squares(d, y, 0.0);
    REQUIRE(c[0] == Approx(2.0).margin(1e-12));
  }

  SECTION("target orthogonal to the design column") {
    Matrix d(2, 1);
    d << 1, 1;
    Vector y(2);
    y << 1, -1;
    const Vector c = least_squares(d, y, 0.0);
    REQUIRE(std::abs(c[0]) < 1e-12);
  }

  SECTION("random system matches a dense QR oracle") {
    const Matrix d = random_matrix(50, 5, 7);
    const Vector y = random_matrix(50, 1, 8).col(0);
    const Vector c = least_squares(d, y, 0.0);
    const Vector oracle = d.colPivHouseholderQr().solve(y);
    REQUIRE((c - oracle).cwiseAbs().maxCoeff() < 1e-8);
  }

  SECTION("residual orthogonality at ridge 0") {
    const Matrix d = random_matrix(80, 4, 9);
    const Vector y = random_matrix(80, 1, 10).col(0);
    const Vector c = least_squares(d, y, 0.0);
    const double gap = (d.transpose() * (y - d * c)).cwiseAbs().maxCoeff();
    REQUIRE(gap < 1e-6 * (d.transpose() * y).cwiseAbs().maxCoeff());
  }

  SECTION("singular design is reported") {
    Matrix d(4, 2);
    d.col(0) << 1, 2, 3, 4;
    d.col(1) = 2.0 * d.col(0);  // exact collinearity
    const Vector y = random_matrix(4, 1, 11).col(0);
    REQUIRE_THROWS_AS(least_squares(d, y, 0.0), SingularMatrixError);
    // A positive ridge makes it solvable.
    REQUIRE_NOTHROW(least_squares(d, y, 1e-6));
  }

  SECTION("underdetermined shape is rejected") {
    REQUIRE_THROWS_AS(least_squares(random_matrix(3, 5, 1), Vector::Zero(3)),
                      std::invalid_argument);
  }
}

TEST_CASE("naive_ols", "[baselines]") {
  SECTION("unconfounded linear data is recovered approximately") {
    double sum = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      sum += naive_ols(gen_dataset(unconfounded_linear_spec(3000), seed)).pe_hat;
    }
    REQUIRE(std::abs(sum / 5 - 0.5) < 0.05);
  }

  SECTION("confounding biases the coefficient upward") {
    double sum = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      sum += naive_ols(gen_dataset(confounded_linear_spec(3000), seed)).pe_hat;
    }
    REQUIRE(sum / 5 > 0.5);
  }

  SECTION("null effect stays near zero") {
    DatasetSpec spec = unconfounded_linear_spec(3000);
    spec.params.beta = 0.0;
    double sum = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      sum += naive_ols(gen_dataset(spec, seed)).pe_hat;
    }
    REQUIRE(std::abs(sum / 5) < 0.05);
  }

  SECTION("result bookkeeping") {
    const auto res = naive_ols(gen_dataset(confounded_linear_spec(500), 3));
    REQUIRE(res.estimator == "Naive");
    REQUIRE(res.per_node_pe.size() == 500);
    REQUIRE(res.pe_hat == Approx(res.per_node_pe.mean()));
    REQUIRE(res.abs_bias.has_value());
    REQUIRE(*res.abs_bias == Approx(std::abs(res.pe_hat - 0.5)));
    REQUIRE(*res.rel_bias ==
            Approx(std::abs((res.pe_hat - 0.5) / 0.5) * 100.0));
  }
}

TEST_CASE("tsls with second-order instruments", "[baselines]") {
  SECTION("consistent under confounding, and beats naive") {
    double tsum = 0, nsum = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const Dataset ds = gen_dataset(confounded_linear_spec(5000), seed);
      tsum += std::abs(tsls(ds, LinearIvSpec{}).pe_hat - 0.5) / 5;
      nsum += std::abs(naive_ols(ds).pe_hat - 0.5) / 5;
    }
    REQUIRE(tsum < 0.1);
    REQUIRE(tsum < nsum);
  }

  SECTION("unconfounded recovery") {
    double sum = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      sum +=
          std::abs(tsls(gen_dataset(unconfounded_linear_spec(3000), seed),
                        LinearIvSpec{})
                       .pe_hat -
                   0.5) /
          5;
    }
    REQUIRE(sum < 0.05);
  }

  SECTION("weak instruments raise a warning") {
    // Destroy the instruments: a dataset whose x_g2 is a copy of x_g has no
    // excluded variation after controls.
    Dataset ds = gen_dataset(confounded_linear_spec(400), 9);
    ds.x_g2 = ds.x_g;
    const auto res = tsls(ds, LinearIvSpec{});
    bool warned = false;
    for (const auto& w : res.warnings) {
      if (w.find("weak instruments") != std::string::npos ||
          w.find("collinear") != std::string::npos) {
        warned = true;
      }
    }
    REQUIRE(warned);
  }
}

TEST_CASE("tsls matches a hand-rolled two-step computation", "[baselines]") {
  // Independent oracle: both stages written out as explicit normal
  // equations on a fixed 30-node instance.
  const Dataset raw = gen_dataset(confounded_linear_spec(30), 17);
  const Dataset pre = preprocess_ig(raw);
  const int n = 30, d = pre.d();

  Matrix d1(n, 3 * d + 1);
  d1 << pre.x_g2, pre.x_g, pre.x, Vector::Ones(n);
  const Vector c1 =
      (d1.transpose() * d1).fullPivLu().solve(d1.transpose() * pre.y_g);
  const Vector yg_hat = d1 * c1;
  Matrix d2(n, 2 * d + 2);
  d2 << yg_hat, pre.x_g, pre.x, Vector::Ones(n);
  const Vector c2 =
      (d2.transpose() * d2).fullPivLu().solve(d2.transpose() * pre.y);

  const auto res = tsls(raw, LinearIvSpec{});
  REQUIRE(std::abs(res.pe_hat - c2[0]) < 1e-8);
}

TEST_CASE("fn-iv uses first-order features as the excluded instrument",
          "[baselines]") {
  LinearIvSpec spec;
  spec.source = InstrumentSource::first_order_mean;
  const auto res = tsls(gen_dataset(confounded_linear_spec(1000), 5), spec);
  REQUIRE(res.estimator == "FN-IV");
  REQUIRE(res.diagnostics.count("excluded_instruments") == 1);
  REQUIRE(std::isfinite(res.pe_hat));
}

TEST_CASE("control flags change the design", "[baselines]") {
  const Dataset ds = gen_dataset(confounded_linear_spec(800), 13);
  LinearIvSpec with;
  LinearIvSpec without = with;
  without.control_own_x = false;
  REQUIRE(tsls(ds, with).pe_hat != tsls(ds, without).pe_hat);
}

TEST_CASE("loo_instruments", "[baselines]") {
  SECTION("path graph: deleting the middle node's edges isolates everything") {
    const auto g = SparseGraph::from_edge_list({{0, 1}, {1, 2}}, 3);
    const Matrix x = random_matrix(3, 2, 3);
    const Matrix z = loo_instruments(g, x);
    REQUIRE(z.row(1).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("isolated focal node equals its plain second-order row") {
    const auto g = SparseGraph::from_edge_list({{0, 1}}, 3);
    const Matrix x = random_matrix(3, 2, 4);
    const Matrix z = loo_instruments(g, x);
    const Matrix plain = g.second_order(x);
    REQUIRE((z.row(2) - plain.row(2)).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("triangle: the focal node is isolated in the reduced graph") {
    const auto g = SparseGraph::from_edge_list({{0, 1}, {0, 2}, {1, 2}}, 3);
    const Matrix x = random_matrix(3, 2, 5);
    const Matrix z = loo_instruments(g, x);
    REQUIRE(z.row(0).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("locality: edges far from the focal node cannot matter") {
    // Rows are zero either way; assert the stronger statement that adding a
    // remote edge leaves the whole instrument matrix unchanged.
    const auto g1 = SparseGraph::from_edge_list({{0, 1}, {2, 3}, {4, 5}}, 6);
    const auto g2 =
        SparseGraph::from_edge_list({{0, 1}, {2, 3}, {4, 5}, {3, 4}}, 6);
    const Matrix x = random_matrix(6, 2, 6);
    REQUIRE(loo_instruments(g1, x) == loo_instruments(g2, x));
  }

  SECTION("tsls with loo instruments runs and flags weakness") {
    LinearIvSpec spec;
    spec.source = InstrumentSource::leave_one_out;
    const auto res = tsls(gen_dataset(confounded_linear_spec(500), 7), spec);
    REQUIRE(res.estimator == "LOO");
    REQUIRE(std::isfinite(res.pe_hat));
    bool weak = false;
    for (const auto& w : res.warnings) {
      if (w.find("weak instruments") != std::string::npos) weak = true;
    }
    REQUIRE(weak);
  }
}

TEST_CASE("instrument exclusion falsification", "[baselines][slow]") {
  // Adding X_G2 directly to the outcome violates the exclusion restriction
  // and must visibly increase 2SLS bias.
  auto biased_dataset = [](std::uint64_t seed, double leak) {
    DatasetSpec spec = confounded_linear_spec(3000);
    Dataset ds = gen_dataset(spec, seed);
    // Re-solve the equilibrium with a direct second-order term added.
    const SemParams p = ds.truth->broadcast(spec.d);
    const Vector c = ds.x_g * p.gamma + ds.x * p.delta +
                     p.lambda_u * (*ds.u) +
                     p.omega * ds.graph.aggregate(*ds.u) + (*ds.eps) +
                     leak * ds.x_g2.rowwise().sum();
    ds.y = solve_equilibrium(ds.graph, p.beta, c);
    ds.y_g = ds.graph.aggregate(ds.y);
    return ds;
  };
  double clean = 0, leaky = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    clean += std::abs(tsls(biased_dataset(seed, 0.0), LinearIvSpec{}).pe_hat -
                      0.5) /
             3;
    leaky += std::abs(tsls(biased_dataset(seed, 1.0), LinearIvSpec{}).pe_hat -
                      0.5) /
             3;
  }
  REQUIRE(leaky > clean + 0.05);
}

TEST_CASE("dl_2sls determinism and sanity", "[baselines][slow]") {
  const Dataset ds = gen_dataset(unconfounded_linear_spec(2000), 3);
  TrainConfig cfg1;
  cfg1.epochs = 60;
  cfg1.seed = 11;
  TrainConfig cfg2;
  cfg2.epochs = 60;
  cfg2.seed = 12;

  const auto a = dl_2sls(ds, cfg1, cfg2);
  const auto b = dl_2sls(ds, cfg1, cfg2);
  REQUIRE(a.pe_hat == b.pe_hat);
  REQUIRE(a.per_node_pe == b.per_node_pe);
  REQUIRE(std::abs(a.pe_hat - 0.5) < 0.15);
  REQUIRE(a.estimator == "DL-2SLS");
}
