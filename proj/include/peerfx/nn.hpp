#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "peerfx/rng.hpp"
#include "peerfx/types.hpp"

namespace peerfx {

enum class Activation { relu, identity };

inline std::string to_string(Activation a) {
  return a == Activation::relu ? "relu" : "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation: " + s);
}

struct LayerSpec {
  int width = 0;
  Activation act = Activation::relu;
  bool batchnorm = false;
  double dropout = 0.0;  // in [0, 1)
};

struct MlpSpec {
  int input_dim = 0;
  std::vector<LayerSpec> layers;  // last entry is the output layer

  void validate() const {
    if (input_dim < 1) throw std::invalid_argument("input_dim must be >= 1");
    if (layers.empty()) throw std::invalid_argument("at least one layer required");
    for (const auto& l : layers) {
      if (l.width < 1) throw std::invalid_argument("layer width must be >= 1");
      if (l.dropout < 0.0 || l.dropout >= 1.0) {
        throw std::invalid_argument("dropout rate must lie in [0, 1)");
      }
    }
  }

  // Stacks hidden layers of one width, then a linear scalar head.
  static MlpSpec scalar_regressor(int input_dim, int hidden_width,
                                  int hidden_layers, bool batchnorm,
                                  double dropout) {
    MlpSpec spec;
    spec.input_dim = input_dim;
    for (int i = 0; i < hidden_layers; ++i) {
      spec.layers.push_back({hidden_width, Activation::relu, batchnorm, dropout});
    }
    spec.layers.push_back({1, Activation::identity, false, 0.0});
    return spec;
  }

  // Hidden layers only; the output is the last hidden activation (an
  // embedding), to be consumed by separate linear heads.
  static MlpSpec extractor(int input_dim, int hidden_width, int hidden_layers) {
    MlpSpec spec;
    spec.input_dim = input_dim;
    for (int i = 0; i < hidden_layers; ++i) {
      spec.layers.push_back({hidden_width, Activation::relu, false, 0.0});
    }
    return spec;
  }

  static MlpSpec linear_head(int input_dim) {
    MlpSpec spec;
    spec.input_dim = input_dim;
    spec.layers.push_back({1, Activation::identity, false, 0.0});
    return spec;
  }
};

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 150;
  int batch_size = 256;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  }
};

// Feed-forward net with explicit reverse-mode gradients. Layer order is
// affine -> batchnorm (optional) -> activation -> dropout (train only,
// inverted scaling). The architecture is fixed at construction; training
// mutates parameters and batchnorm running statistics only.
class Mlp {
 public:
  struct Layer {
    Matrix w;  // out x in
    Vector b;  // out
    Activation act = Activation::identity;
    bool batchnorm = false;
    double dropout = 0.0;
    Vector bn_gamma, bn_beta;        // learned scale/shift
    Vector bn_run_mean, bn_run_var;  // eval-mode statistics
  };

  struct LayerCache {
    Matrix input;      // batch entering the layer
    Matrix xhat;       // normalized pre-activation (batchnorm only)
    Vector inv_std;    // 1/sqrt(var + eps) used at forward time
    Matrix act_input;  // tensor entering the activation
    Matrix drop_mask;  // 0 or 1/(1-p); empty when dropout inactive
    bool bn_batch_stats = false;  // true when batch statistics were used
  };

  struct Cache {
    std::vector<LayerCache> layers;
    std::uint64_t param_version = 0;
    Index batch_rows = 0;
  };

  struct LayerGrad {
    Matrix w;
    Vector b;
    Vector bn_gamma, bn_beta;
  };

  struct Gradients {
    std::vector<LayerGrad> layers;
    Matrix input;  // d(loss)/d(batch), same shape as the forward batch
  };

  Mlp(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    input_dim_ = spec.input_dim;
    Rng rng = Rng::stream(seed, kInitTag);
    int fan_in = spec.input_dim;
    for (const auto& ls : spec.layers) {
      Layer layer;
      layer.act = ls.act;
      layer.batchnorm = ls.batchnorm;
      layer.dropout = ls.dropout;
      // He initialization for relu layers, Xavier-style for linear ones.
      const double scale = ls.act == Activation::relu
                               ? std::sqrt(2.0 / static_cast<double>(fan_in))
                               : std::sqrt(1.0 / static_cast<double>(fan_in));
      layer.w = Matrix::NullaryExpr(ls.width, fan_in,
                                    [&]() { return scale * rng.normal(); });
      layer.b = Vector::Zero(ls.width);
      if (ls.batchnorm) {
        layer.bn_gamma = Vector::Ones(ls.width);
        layer.bn_beta = Vector::Zero(ls.width);
        layer.bn_run_mean = Vector::Zero(ls.width);
        layer.bn_run_var = Vector::Ones(ls.width);
      }
      layers_.push_back(std::move(layer));
      fan_in = ls.width;
    }
  }

  int input_dim() const { return input_dim_; }
  int output_dim() const { return static_cast<int>(layers_.back().w.rows()); }
  bool train_mode() const { return train_mode_; }
  void set_train(bool on) { train_mode_ = on; }

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  std::uint64_t param_version() const { return param_version_; }
  // Invalidates outstanding caches; called by the optimizer after an update.
  void bump_param_version() { ++param_version_; }

  // Mode-honoring forward pass. In train mode batch statistics are used and
  // running statistics updated; dropout requires an Rng. In eval mode the
  // pass is deterministic and leaves the model untouched.
  Matrix forward(const Matrix& batch, Cache* cache = nullptr,
                 Rng* dropout_rng = nullptr) {
    return run_forward(batch, cache, dropout_rng, train_mode_);
  }

  // Eval-path forward, independent of the mode flag and safe for concurrent
  // use on a const model.
  Matrix forward_eval(const Matrix& batch, Cache* cache = nullptr) const {
    return const_cast<Mlp*>(this)->run_forward(batch, cache, nullptr, false);
  }

  // Reverse-mode pass. `upstream` is d(loss)/d(output), one row per sample.
  // The cache must come from the most recent forward under the current
  // parameters.
  Gradients backward(const Cache& cache, const Matrix& upstream) const {
    if (cache.param_version != param_version_) {
      throw std::logic_error("stale forward cache: parameters changed");
    }
    if (upstream.rows() != cache.batch_rows ||
        upstream.cols() != output_dim()) {
      throw std::invalid_argument("upstream gradient shape mismatch");
    }
    Gradients grads;
    grads.layers.resize(layers_.size());
    Matrix d = upstream;
    for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
      const Layer& layer = layers_[static_cast<std::size_t>(li)];
      const LayerCache& lc = cache.layers[static_cast<std::size_t>(li)];
      LayerGrad& lg = grads.layers[static_cast<std::size_t>(li)];

      if (lc.drop_mask.size() > 0) d = d.cwiseProduct(lc.drop_mask);
      if (layer.act == Activation::relu) {
        d = d.cwiseProduct((lc.act_input.array() > 0.0).cast<double>().matrix());
      }

      Matrix dz;
      if (layer.batchnorm) {
        lg.bn_gamma = d.cwiseProduct(lc.xhat).colwise().sum().transpose();
        lg.bn_beta = d.colwise().sum().transpose();
        const Matrix dxhat =
            (d.array().rowwise() * layer.bn_gamma.transpose().array()).matrix();
        if (lc.bn_batch_stats) {
          const double m = static_cast<double>(d.rows());
          const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
          const Eigen::RowVectorXd sum_dxhat_xhat =
              dxhat.cwiseProduct(lc.xhat).colwise().sum();
          dz = (m * dxhat).rowwise() - sum_dxhat;
          dz -= (lc.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
          dz = (dz.array().rowwise() * (lc.inv_std.transpose().array() / m))
                   .matrix();
        } else {
          dz = (dxhat.array().rowwise() * lc.inv_std.transpose().array())
                   .matrix();
        }
      } else {
        dz = std::move(d);
      }

      lg.w = dz.transpose() * lc.input;
      lg.b = dz.colwise().sum().transpose();
      d = dz * layer.w;
    }
    grads.input = std::move(d);
    return grads;
  }

  void save(std::ostream& os) const {
    os << "peerfx-mlp 1\n";
    os << input_dim_ << " " << layers_.size() << "\n";
    for (const auto& l : layers_) {
      os << l.w.rows() << " " << to_string(l.act) << " "
         << (l.batchnorm ? 1 : 0) << " " << fmt(l.dropout) << "\n";
    }
    for (const auto& l : layers_) {
      write_matrix(os, l.w);
      write_vector(os, l.b);
      if (l.batchnorm) {
        write_vector(os, l.bn_gamma);
        write_vector(os, l.bn_beta);
        write_vector(os, l.bn_run_mean);
        write_vector(os, l.bn_run_var);
      }
    }
  }

  static Mlp load(std::istream& is) {
    std::string magic;
    int version = 0;
    is >> magic >> version;
    if (magic != "peerfx-mlp" || version != 1) {
      throw std::runtime_error("unrecognized model checkpoint header");
    }
    MlpSpec spec;
    std::size_t n_layers = 0;
    is >> spec.input_dim >> n_layers;
    for (std::size_t i = 0; i < n_layers; ++i) {
      LayerSpec ls;
      std::string act;
      int bn = 0;
      is >> ls.width >> act >> bn >> ls.dropout;
      ls.act = activation_from_string(act);
      ls.batchnorm = bn != 0;
      spec.layers.push_back(ls);
    }
    Mlp model(spec, 0);
    for (auto& l : model.layers_) {
      read_matrix(is, l.w);
      read_vector(is, l.b);
      if (l.batchnorm) {
        read_vector(is, l.bn_gamma);
        read_vector(is, l.bn_beta);
        read_vector(is, l.bn_run_mean);
        read_vector(is, l.bn_run_var);
      }
    }
    if (!is) throw std::runtime_error("truncated model checkpoint");
    model.bump_param_version();
    return model;
  }

 private:
  static constexpr std::uint64_t kInitTag = 0x6d6c705f696e6974ULL;  // "mlp_init"
  static constexpr double kBnEps = 1e-5;
  static constexpr double kBnMomentum = 0.1;

  Matrix run_forward(const Matrix& batch, Cache* cache, Rng* dropout_rng,
                     bool train) {
    if (batch.cols() != input_dim_) {
      throw std::invalid_argument("batch width (" + std::to_string(batch.cols()) +
                                  ") does not match input dim (" +
                                  std::to_string(input_dim_) + ")");
    }
    if (cache) {
      cache->layers.assign(layers_.size(), LayerCache{});
      cache->param_version = param_version_;
      cache->batch_rows = batch.rows();
    }
    Matrix a = batch;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      Layer& layer = layers_[li];
      LayerCache* lc = cache ? &cache->layers[li] : nullptr;
      if (lc) lc->input = a;

      Matrix z = a * layer.w.transpose();
      z.rowwise() += layer.b.transpose();

      if (layer.batchnorm) {
        if (train) {
          if (z.rows() < 2) {
            throw std::invalid_argument(
                "batchnorm requires batch size >= 2 in train mode");
          }
          const double m = static_cast<double>(z.rows());
          const Eigen::RowVectorXd mean = z.colwise().mean();
          const Eigen::RowVectorXd var =
              ((z.rowwise() - mean).array().square().colwise().sum() / m)
                  .matrix();
          const Eigen::RowVectorXd inv_std =
              (var.array() + kBnEps).sqrt().inverse().matrix();
          Matrix xhat =
              ((z.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
          layer.bn_run_mean = (1.0 - kBnMomentum) * layer.bn_run_mean +
                              kBnMomentum * mean.transpose();
          layer.bn_run_var = (1.0 - kBnMomentum) * layer.bn_run_var +
                             kBnMomentum * var.transpose();
          if (lc) {
            lc->xhat = xhat;
            lc->inv_std = inv_std.transpose();
            lc->bn_batch_stats = true;
          }
          z = (xhat.array().rowwise() * layer.bn_gamma.transpose().array())
                  .matrix();
          z.rowwise() += layer.bn_beta.transpose();
        } else {
          const Eigen::RowVectorXd inv_std =
              (layer.bn_run_var.transpose().array() + kBnEps)
                  .sqrt()
                  .inverse()
                  .matrix();
          Matrix xhat = ((z.rowwise() - layer.bn_run_mean.transpose())
                             .array()
                             .rowwise() *
                         inv_std.array())
                            .matrix();
          if (lc) {
            lc->xhat = xhat;
            lc->inv_std = inv_std.transpose();
            lc->bn_batch_stats = false;
          }
          z = (xhat.array().rowwise() * layer.bn_gamma.transpose().array())
                  .matrix();
          z.rowwise() += layer.bn_beta.transpose();
        }
      }

      if (lc) lc->act_input = z;
      if (layer.act == Activation::relu) z = z.cwiseMax(0.0);

      if (train && layer.dropout > 0.0) {
        if (!dropout_rng) {
          throw std::invalid_argument(
              "train-mode forward through a dropout layer needs an rng");
        }
        const double keep = 1.0 - layer.dropout;
        Matrix mask = Matrix::NullaryExpr(z.rows(), z.cols(), [&]() {
          return dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
        });
        z = z.cwiseProduct(mask);
        if (lc) lc->drop_mask = std::move(mask);
      }

      a = std::move(z);
    }
    return a;
  }

  static std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
  }

  static void write_matrix(std::ostream& os, const Matrix& m) {
    os << m.rows() << " " << m.cols();
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) os << " " << fmt(m(i, j));
    }
    os << "\n";
  }

  static void write_vector(std::ostream& os, const Vector& v) {
    os << v.size();
    for (Index i = 0; i < v.size(); ++i) os << " " << fmt(v[i]);
    os << "\n";
  }

  static void read_matrix(std::istream& is, Matrix& m) {
    Index rows = 0, cols = 0;
    is >> rows >> cols;
    m.resize(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) is >> m(i, j);
    }
  }

  static void read_vector(std::istream& is, Vector& v) {
    Index n = 0;
    is >> n;
    v.resize(n);
    for (Index i = 0; i < n; ++i) is >> v[i];
  }

  int input_dim_ = 0;
  std::vector<Layer> layers_;
  bool train_mode_ = true;
  std::uint64_t param_version_ = 0;
};

// Adam moment buffers, one slot per layer.
struct AdamState {
  struct Slot {
    Matrix mw, vw;
    Vector mb, vb;
    Vector mg, vg;  // batchnorm gamma
    Vector mt, vt;  // batchnorm beta
  };
  std::vector<Slot> slots;
  long step = 0;

  static AdamState for_model(const Mlp& model) {
    AdamState st;
    for (const auto& l : model.layers()) {
      Slot s;
      s.mw = Matrix::Zero(l.w.rows(), l.w.cols());
      s.vw = Matrix::Zero(l.w.rows(), l.w.cols());
      s.mb = Vector::Zero(l.b.size());
      s.vb = Vector::Zero(l.b.size());
      if (l.batchnorm) {
        s.mg = Vector::Zero(l.bn_gamma.size());
        s.vg = Vector::Zero(l.bn_gamma.size());
        s.mt = Vector::Zero(l.bn_beta.size());
        s.vt = Vector::Zero(l.bn_beta.size());
      }
      st.slots.push_back(std::move(s));
    }
    return st;
  }
};

namespace detail {

template <typename T>
void adam_update(T& param, const T& grad, T& m, T& v, double lr, double b1,
                 double b2, double eps, double bc1, double bc2) {
  m = b1 * m + (1.0 - b1) * grad;
  v = (b2 * v.array() + (1.0 - b2) * grad.array().square()).matrix();
  param -= (lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps)).matrix();
}

}  // namespace detail

// One Adam step over all parameters of `model` from `grads`.
inline void adam_step(Mlp& model, const Mlp::Gradients& grads,
                      const TrainConfig& cfg, AdamState& state) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto& layers = model.layers();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    auto& layer = layers[li];
    const auto& lg = grads.layers[li];
    auto& slot = state.slots[li];
    Matrix gw = lg.w;
    if (cfg.weight_decay > 0.0) gw += cfg.weight_decay * layer.w;
    detail::adam_update(layer.w, gw, slot.mw, slot.vw, cfg.lr, cfg.beta1,
                        cfg.beta2, cfg.adam_eps, bc1, bc2);
    detail::adam_update(layer.b, lg.b, slot.mb, slot.vb, cfg.lr, cfg.beta1,
                        cfg.beta2, cfg.adam_eps, bc1, bc2);
    if (layer.batchnorm) {
      detail::adam_update(layer.bn_gamma, lg.bn_gamma, slot.mg, slot.vg, cfg.lr,
                          cfg.beta1, cfg.beta2, cfg.adam_eps, bc1, bc2);
      detail::adam_update(layer.bn_beta, lg.bn_beta, slot.mt, slot.vt, cfg.lr,
                          cfg.beta1, cfg.beta2, cfg.adam_eps, bc1, bc2);
    }
  }
  model.bump_param_version();
}

// Deterministic mini-batch index blocks for one epoch. A trailing singleton
// is folded into the previous batch so batchnorm never sees a 1-row batch.
inline std::vector<std::vector<Index>> epoch_batches(Index n, int batch_size,
                                                     Rng& rng) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  rng.shuffle(perm);
  std::vector<std::vector<Index>> batches;
  for (Index start = 0; start < n; start += batch_size) {
    const Index stop = std::min<Index>(start + batch_size, n);
    batches.emplace_back(perm.begin() + start, perm.begin() + stop);
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

inline Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Index>(i)) = m.row(rows[i]);
  }
  return out;
}

inline Vector gather(const Vector& v, const std::vector<Index>& rows) {
  Vector out(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out[static_cast<Index>(i)] = v[rows[i]];
  }
  return out;
}

// One full pass of mini-batch MSE training in a seed-determined shuffle
// order. Returns the mean batch loss. `epoch` feeds the shuffle/dropout
// streams so successive epochs draw differently but reproducibly.
inline double train_epoch(Mlp& model, const Matrix& inputs,
                          const Vector& targets, const TrainConfig& cfg,
                          AdamState& state, int epoch) {
  cfg.validate();
  if (inputs.rows() != targets.size()) {
    throw std::invalid_argument("inputs/targets row mismatch");
  }
  if (model.output_dim() != 1) {
    throw std::invalid_argument("train_epoch expects a scalar-output model");
  }
  model.set_train(true);
  Rng shuffle_rng = Rng::stream(cfg.seed, 0x73687566ULL + static_cast<std::uint64_t>(epoch));
  Rng dropout_rng = Rng::stream(cfg.seed, 0x64726f70ULL + static_cast<std::uint64_t>(epoch));
  const auto batches = epoch_batches(inputs.rows(), cfg.batch_size, shuffle_rng);

  double loss_sum = 0.0;
  for (const auto& rows : batches) {
    const Matrix xb = gather_rows(inputs, rows);
    const Vector yb = gather(targets, rows);
    Mlp::Cache cache;
    const Matrix pred = model.forward(xb, &cache, &dropout_rng);
    const Vector err = pred.col(0) - yb;
    const double m = static_cast<double>(rows.size());
    const double loss = err.squaredNorm() / m;
    if (!std::isfinite(loss)) {
      throw std::runtime_error("non-finite training loss; lower the learning rate");
    }
    loss_sum += loss;
    const Matrix upstream = (2.0 / m) * err;
    adam_step(model, model.backward(cache, upstream), cfg, state);
  }
  return loss_sum / static_cast<double>(batches.size());
}

// Runs cfg.epochs passes; returns the per-epoch mean losses.
inline std::vector<double> fit(Mlp& model, const Matrix& inputs,
                               const Vector& targets, const TrainConfig& cfg) {
  AdamState state = AdamState::for_model(model);
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int e = 0; e < cfg.epochs; ++e) {
    losses.push_back(train_epoch(model, inputs, targets, cfg, state, e));
  }
  model.set_train(false);
  return losses;
}

// Per-row derivative of the scalar output with respect to one input column,
// computed by a reverse pass into the inputs. Eval mode only: dropout would
// randomize the derivative.
inline Vector partial_wrt_input(const Mlp& model, const Matrix& batch,
                                int input_column) {
  if (model.train_mode()) {
    throw std::logic_error("partial_wrt_input requires eval mode");
  }
  if (model.output_dim() != 1) {
    throw std::invalid_argument("partial_wrt_input expects a scalar output");
  }
  if (input_column < 0 || input_column >= model.input_dim()) {
    throw std::invalid_argument("input column out of range");
  }
  Mlp::Cache cache;
  model.forward_eval(batch, &cache);
  const Matrix upstream = Matrix::Ones(batch.rows(), 1);
  return model.backward(cache, upstream).input.col(input_column);
}

}  // namespace peerfx
