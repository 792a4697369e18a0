#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "peerfx/nn.hpp"
#include "peerfx/result.hpp"
#include "peerfx/sem.hpp"
#include "peerfx/types.hpp"

namespace peerfx {

namespace arch {
inline constexpr int kHiddenWidth = 64;
inline constexpr int kHiddenLayers = 2;
inline constexpr double kStage1Dropout = 0.1;
}  // namespace arch

// Stage-1 regressor input: concatenated (X_G2, X_G, X), one row per node.
inline Matrix stage1_input(const Dataset& ds) {
  Matrix z(ds.n(), 3 * ds.d());
  z << ds.x_g2, ds.x_g, ds.x;
  return z;
}

// Stage-2 input Z = (Y_G, X_G, X, V_hat). Column 0 carries the peer
// exposure; the peer-effect derivative is taken with respect to it.
inline Matrix stage2_input(const Dataset& ds, const Vector& v_hat) {
  if (v_hat.size() != ds.n()) {
    throw std::invalid_argument("residual length does not match node count");
  }
  Matrix z(ds.n(), 2 + 2 * ds.d());
  z << ds.y_g, ds.x_g, ds.x, v_hat;
  return z;
}

inline constexpr int kPeerExposureColumn = 0;

inline double r_squared(const Vector& target, const Vector& resid) {
  const double ss_tot = (target.array() - target.mean()).square().sum();
  if (ss_tot == 0.0) return 0.0;
  return 1.0 - resid.squaredNorm() / ss_tot;
}

struct Stage1Output {
  Mlp model;
  Vector residuals;  // V_hat = Y_G - r(X_G2, X_G, X), eval mode
  double fit_loss = 0.0;
  double r2 = 0.0;
  std::vector<std::string> warnings;
};

inline MlpSpec default_stage1_arch(int input_dim) {
  return MlpSpec::scalar_regressor(input_dim, arch::kHiddenWidth,
                                   arch::kHiddenLayers, /*batchnorm=*/true,
                                   arch::kStage1Dropout);
}

// Fit the peer-exposure regression on the instruments and extract the
// control-function residuals. `ds` is expected to be (I - G) preprocessed.
inline Stage1Output stage1_fit(const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  const Matrix z = stage1_input(ds);

  std::vector<std::string> warnings;
  for (Index j = 0; j < ds.x_g2.cols(); ++j) {
    if (ds.x_g2.col(j).cwiseAbs().maxCoeff() == 0.0) {
      warnings.push_back("degenerate instrument: X_G2 column " +
                         std::to_string(j) + " is identically zero");
      break;
    }
  }

  Mlp model(default_stage1_arch(static_cast<int>(z.cols())), cfg.seed);
  const auto losses = fit(model, z, ds.y_g, cfg);

  Stage1Output out{std::move(model), Vector(), losses.back(), 0.0,
                   std::move(warnings)};
  out.model.set_train(false);
  out.residuals = ds.y_g - out.model.forward_eval(z).col(0);
  out.r2 = r_squared(ds.y_g, out.residuals);
  return out;
}

// Small weight decay on the main model: adversarial ascent on L_disc can
// otherwise inflate the embedding without bound on unlucky seeds.
inline TrainConfig stage2_train_defaults() {
  TrainConfig cfg;
  cfg.weight_decay = 1e-4;
  return cfg;
}

struct Stage2Config {
  TrainConfig train = stage2_train_defaults();  // eta_2 / epochs p / batch
  double disc_lr = 1e-3;                        // eta_disc
  double lambda_a = 0.01;
  bool per_epoch_alternation = false;  // default alternates per mini-batch
  double holdout_frac = 0.2;           // residual-probe split
  int hidden_width = arch::kHiddenWidth;
  int hidden_layers = arch::kHiddenLayers;

  void validate() const {
    train.validate();
    if (!(disc_lr > 0.0)) throw std::invalid_argument("disc_lr must be > 0");
    if (lambda_a < 0.0) throw std::invalid_argument("lambda_a must be >= 0");
    if (!(holdout_frac > 0.0 && holdout_frac < 1.0)) {
      throw std::invalid_argument("holdout_frac must lie in (0, 1)");
    }
  }
};

struct Stage2Model {
  Mlp extractor;       // Z -> embedding h
  Mlp outcome_head;    // h -> predicted outcome
  Mlp discriminator;   // h -> predicted residual
  double lambda_a = 0.0;
  Vector v_hat;        // residuals the model was trained with
  std::vector<std::pair<double, double>> history;  // per-epoch (L_out, L_disc)
  double disc_holdout_r2 = 0.0;  // linear probe of V_hat from h, held out
};

// Least-squares R^2 of a linear probe from the embedding to the residual,
// fit on one split and scored on the other. Measures how much residual
// signal survives in the representation, independently of the adversarially
// trained discriminator head.
inline double embedding_probe_r2(const Matrix& h, const Vector& v,
                                 double holdout_frac, std::uint64_t seed) {
  const Index n = h.rows();
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  Rng rng = Rng::stream(seed, 0x70726f6265ULL);  // "probe"
  rng.shuffle(perm);
  const Index n_hold = std::max<Index>(1, static_cast<Index>(
                                              std::floor(holdout_frac * n)));
  const Index n_fit = n - n_hold;
  if (n_fit < h.cols() + 1) {
    throw std::invalid_argument("probe split leaves too few rows to fit");
  }

  Matrix df(n_fit, h.cols() + 1);
  Vector vf(n_fit);
  for (Index i = 0; i < n_fit; ++i) {
    df.row(i) << h.row(perm[static_cast<std::size_t>(i)]), 1.0;
    vf[i] = v[perm[static_cast<std::size_t>(i)]];
  }
  Matrix dh(n_hold, h.cols() + 1);
  Vector vh(n_hold);
  for (Index i = 0; i < n_hold; ++i) {
    dh.row(i) << h.row(perm[static_cast<std::size_t>(n_fit + i)]), 1.0;
    vh[i] = v[perm[static_cast<std::size_t>(n_fit + i)]];
  }

  // Standardize on the fit split; dead embedding units become zero columns
  // and the scaled ridge keeps the probe stable.
  for (Index j = 0; j + 1 < df.cols(); ++j) {
    const double mean = df.col(j).mean();
    const double sd = std::sqrt((df.col(j).array() - mean).square().sum() /
                                static_cast<double>(n_fit));
    const double scale = sd > 1e-8 ? 1.0 / sd : 0.0;
    df.col(j) = (df.col(j).array() - mean) * scale;
    dh.col(j) = (dh.col(j).array() - mean) * scale;
  }
  Matrix normal = df.transpose() * df;
  normal.diagonal().array() += 1e-6 * static_cast<double>(n_fit);
  const Vector coef = normal.ldlt().solve(df.transpose() * vf);
  const Vector resid = vh - dh * coef;
  return r_squared(vh, resid);
}

// Alternating min-max trainer for stage 2. Exposed as a class so the two
// update steps can be driven (and inspected) independently; stage2_fit is
// the standard full loop.
class Stage2Trainer {
 public:
  Stage2Trainer(const Dataset& ds, Vector v_hat, const Stage2Config& cfg)
      : cfg_(cfg),
        z_(stage2_input(ds, v_hat)),
        y_(ds.y),
        v_(std::move(v_hat)),
        extractor_(MlpSpec::extractor(static_cast<int>(z_.cols()),
                                      cfg.hidden_width, cfg.hidden_layers),
                   cfg.train.seed),
        outcome_head_(MlpSpec::linear_head(cfg.hidden_width),
                      splitmix64(cfg.train.seed ^ 0x6f7574ULL)),
        discriminator_(MlpSpec::linear_head(cfg.hidden_width),
                       splitmix64(cfg.train.seed ^ 0x64697363ULL)),
        extractor_state_(AdamState::for_model(extractor_)),
        outcome_state_(AdamState::for_model(outcome_head_)),
        disc_state_(AdamState::for_model(discriminator_)) {
    cfg.validate();
    main_cfg_ = cfg.train;
    disc_cfg_ = cfg.train;
    disc_cfg_.lr = cfg.disc_lr;
    extractor_.set_train(true);
    outcome_head_.set_train(true);
    discriminator_.set_train(true);
  }

  // (a) Discriminator update: descend L_disc in theta with the extractor
  // held fixed. Returns the batch L_disc.
  double disc_step(const std::vector<Index>& rows) {
    const Matrix zb = gather_rows(z_, rows);
    const Vector vb = gather(v_, rows);
    const double m = static_cast<double>(rows.size());
    const Matrix h = extractor_.forward(zb);
    Mlp::Cache cache;
    const Matrix pred = discriminator_.forward(h, &cache);
    const Vector err = pred.col(0) - vb;
    const double loss = err.squaredNorm() / m;
    check_finite(loss, "discriminator");
    const Matrix upstream = (2.0 / m) * err;
    adam_step(discriminator_, discriminator_.backward(cache, upstream),
              disc_cfg_, disc_state_);
    return loss;
  }

  // (b) Main update: descend L_out - lambda_a * L_disc in the extractor and
  // outcome head with theta frozen; the discriminator only back-propagates
  // into the embedding. Returns the batch L_out.
  double main_step(const std::vector<Index>& rows) {
    const Matrix zb = gather_rows(z_, rows);
    const Vector yb = gather(y_, rows);
    const Vector vb = gather(v_, rows);
    const double m = static_cast<double>(rows.size());

    Mlp::Cache cache_e;
    const Matrix h = extractor_.forward(zb, &cache_e);
    Mlp::Cache cache_o;
    const Matrix ypred = outcome_head_.forward(h, &cache_o);
    const Vector out_err = ypred.col(0) - yb;
    const double l_out = out_err.squaredNorm() / m;
    check_finite(l_out, "outcome");

    const auto out_grads =
        outcome_head_.backward(cache_o, (2.0 / m) * out_err);

    Matrix upstream_h = out_grads.input;
    if (cfg_.lambda_a > 0.0) {
      Mlp::Cache cache_d;
      const Matrix dpred = discriminator_.forward(h, &cache_d);
      const Vector disc_err = dpred.col(0) - vb;
      const auto disc_grads =
          discriminator_.backward(cache_d, (2.0 / m) * disc_err);
      upstream_h -= cfg_.lambda_a * disc_grads.input;
    }
    const auto ext_grads = extractor_.backward(cache_e, upstream_h);

    adam_step(outcome_head_, out_grads, main_cfg_, outcome_state_);
    adam_step(extractor_, ext_grads, main_cfg_, extractor_state_);
    return l_out;
  }

  // Full training loop: per mini-batch (a) then (b), or with the two passes
  // separated per epoch when cfg.per_epoch_alternation is set.
  void run() {
    const Index n = z_.rows();
    for (int epoch = 0; epoch < cfg_.train.epochs; ++epoch) {
      Rng shuffle_rng = Rng::stream(
          cfg_.train.seed, 0x73326570ULL + static_cast<std::uint64_t>(epoch));
      const auto batches =
          epoch_batches(n, cfg_.train.batch_size, shuffle_rng);
      double out_sum = 0.0, disc_sum = 0.0;
      if (cfg_.per_epoch_alternation) {
        for (const auto& rows : batches) disc_sum += disc_step(rows);
        for (const auto& rows : batches) out_sum += main_step(rows);
      } else {
        for (const auto& rows : batches) {
          disc_sum += disc_step(rows);
          out_sum += main_step(rows);
        }
      }
      const double nb = static_cast<double>(batches.size());
      history_.emplace_back(out_sum / nb, disc_sum / nb);
    }
  }

  const Mlp& discriminator() const { return discriminator_; }
  const Mlp& extractor() const { return extractor_; }

  Stage2Model finish() {
    extractor_.set_train(false);
    outcome_head_.set_train(false);
    discriminator_.set_train(false);
    Stage2Model m{std::move(extractor_),     std::move(outcome_head_),
                  std::move(discriminator_), cfg_.lambda_a,
                  std::move(v_),             std::move(history_),
                  0.0};
    const Matrix h = m.extractor.forward_eval(z_);
    m.disc_holdout_r2 =
        embedding_probe_r2(h, m.v_hat, cfg_.holdout_frac, cfg_.train.seed);
    return m;
  }

 private:
  static void check_finite(double loss, const char* which) {
    if (!std::isfinite(loss)) {
      throw std::runtime_error(std::string("non-finite stage-2 ") + which +
                               " loss; lower the learning rate");
    }
  }

  Stage2Config cfg_;
  TrainConfig main_cfg_, disc_cfg_;
  Matrix z_;
  Vector y_, v_;
  Mlp extractor_, outcome_head_, discriminator_;
  AdamState extractor_state_, outcome_state_, disc_state_;
  std::vector<std::pair<double, double>> history_;
};

inline Stage2Model stage2_fit(const Dataset& ds, const Vector& v_hat,
                              const Stage2Config& cfg) {
  Stage2Trainer trainer(ds, v_hat, cfg);
  trainer.run();
  return trainer.finish();
}

// Per-node peer effect: analytic derivative of the outcome prediction with
// respect to the peer-exposure input column, averaged over the sample.
inline EstimationResult estimate_pe(const Stage2Model& m, const Dataset& ds) {
  if (m.extractor.train_mode() || m.outcome_head.train_mode()) {
    throw std::logic_error("estimate_pe requires eval mode");
  }
  const Matrix z = stage2_input(ds, m.v_hat);
  if (z.cols() != m.extractor.input_dim()) {
    throw std::invalid_argument("stage-2 input width mismatch");
  }
  Mlp::Cache cache_e;
  const Matrix h = m.extractor.forward_eval(z, &cache_e);
  Mlp::Cache cache_o;
  m.outcome_head.forward_eval(h, &cache_o);
  const auto head_grads =
      m.outcome_head.backward(cache_o, Matrix::Ones(z.rows(), 1));
  const auto ext_grads = m.extractor.backward(cache_e, head_grads.input);

  EstimationResult res;
  res.estimator = "DIG2RSI";
  res.per_node_pe = ext_grads.input.col(kPeerExposureColumn);
  res.pe_hat = res.per_node_pe.mean();
  fill_bias(res, ds);
  res.diagnostics["disc_holdout_r2"] = m.disc_holdout_r2;
  res.diagnostics["lambda_a"] = m.lambda_a;
  return res;
}

// Full pipeline: (I-G) preprocessing, stage-1 residual extraction, stage-2
// adversarial control-function regression, then derivative-based
// peer-effect extraction. Deterministic in (dataset, configs, seed); the
// two stages draw from streams derived from `seed`.
inline EstimationResult run_dig2rsi(const Dataset& ds_raw,
                                    const TrainConfig& cfg1,
                                    const Stage2Config& cfg2,
                                    std::uint64_t seed) {
  if (ds_raw.ig_transformed) {
    throw std::invalid_argument("run_dig2rsi expects the raw dataset");
  }
  const Dataset pre = preprocess_ig(ds_raw);

  TrainConfig c1 = cfg1;
  c1.seed = splitmix64(seed ^ rng_tag::stage1);
  const Stage1Output s1 = stage1_fit(pre, c1);

  Stage2Config c2 = cfg2;
  c2.train.seed = splitmix64(seed ^ rng_tag::stage2);
  const Stage2Model model = stage2_fit(pre, s1.residuals, c2);

  EstimationResult res = estimate_pe(model, pre);
  res.warnings = s1.warnings;
  res.diagnostics["stage1_r2"] = s1.r2;
  res.diagnostics["stage1_loss"] = s1.fit_loss;
  res.diagnostics["seed"] = static_cast<double>(seed);
  res.config_echo["stage1_epochs"] = std::to_string(cfg1.epochs);
  res.config_echo["stage2_epochs"] = std::to_string(cfg2.train.epochs);
  res.config_echo["lambda_a"] = std::to_string(cfg2.lambda_a);
  return res;
}

}  // namespace peerfx
