#include "ferrobnn/bnn.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

#include "ferrobnn/common.hpp"

namespace ferrobnn::bnn {

// ---------------------------------------------------------------------------

void NetworkSpec::validate() const {
  if (widths.size() < 2) throw ConfigError("network spec: need at least input and output widths");
  for (int w : widths)
    if (w < 1) throw ConfigError("network spec: widths must be positive");
}

NetworkSpec NetworkSpec::mlp5() { return {{784, 512, 256, 128, 64, 10}, Activation::Relu}; }

double softplus(double rho) { return std::max(rho, 0.0) + std::log1p(std::exp(-std::abs(rho))); }

double inverse_softplus(double sigma) {
  if (!(sigma > 0.0)) throw std::domain_error("inverse_softplus: sigma must be > 0");
  return sigma > 20.0 ? sigma + std::log(-std::expm1(-sigma)) : std::log(std::expm1(sigma));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------

double kl_gaussian(double mu_p, double sigma_p, double mu_q, double sigma_q,
                   KlDirection direction) {
  if (!(sigma_p > 0.0) || !(sigma_q > 0.0))
    throw std::domain_error("kl_gaussian: standard deviations must be positive");
  const double dm2 = (mu_p - mu_q) * (mu_p - mu_q);
  if (direction == KlDirection::PriorToPosterior)
    return std::log(sigma_q / sigma_p) + (sigma_p * sigma_p + dm2) / (2.0 * sigma_q * sigma_q) -
           0.5;
  return std::log(sigma_p / sigma_q) + (sigma_q * sigma_q + dm2) / (2.0 * sigma_p * sigma_p) - 0.5;
}

KlGradient kl_gaussian_gradient(double mu_p, double sigma_p, double mu_q, double sigma_q,
                                KlDirection direction) {
  const double dm = mu_q - mu_p;
  if (direction == KlDirection::PriorToPosterior) {
    const double sq2 = sigma_q * sigma_q;
    return {dm / sq2, 1.0 / sigma_q - (sigma_p * sigma_p + dm * dm) / (sq2 * sigma_q)};
  }
  const double sp2 = sigma_p * sigma_p;
  return {dm / sp2, -1.0 / sigma_q + sigma_q / sp2};
}

namespace {

Matrix activate(const Matrix& z, Activation a) {
  if (a == Activation::Relu) return z.cwiseMax(0.0);
  return z.array().tanh().matrix();
}

// dL/dz from dL/da, given pre-activation z and activation a(z).
Matrix activation_backward(const Matrix& grad, const Matrix& z, const Matrix& a, Activation act) {
  if (act == Activation::Relu) return (z.array() > 0.0).select(grad, 0.0);
  return (grad.array() * (1.0 - a.array().square())).matrix();
}

// Softmax cross-entropy: returns mean loss and writes dL/dlogits.
double cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* grad) {
  const Eigen::Index n = logits.rows();
  double loss = 0.0;
  if (grad) grad->resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const auto shifted = (logits.row(i).array() - mx).exp();
    const double sum = shifted.sum();
    const int y = labels[static_cast<std::size_t>(i)];
    loss += std::log(sum) + mx - logits(i, y);
    if (grad) {
      grad->row(i) = shifted / sum;
      (*grad)(i, y) -= 1.0;
    }
  }
  if (grad) *grad /= static_cast<double>(n);
  return loss / static_cast<double>(n);
}

Matrix softplus_matrix(const Matrix& rho) { return rho.unaryExpr([](double r) { return softplus(r); }); }
Vector softplus_vector(const Vector& rho) { return rho.unaryExpr([](double r) { return softplus(r); }); }

// Means for every layer, shared by the variational and plain initializers.
std::vector<DenseLayer> init_means(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(mix_seed(seed, 0));
  std::vector<DenseLayer> layers;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int in = spec.widths[static_cast<std::size_t>(l)];
    const int out = spec.widths[static_cast<std::size_t>(l + 1)];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer layer;
    layer.weight.resize(out, in);
    layer.bias.resize(out);
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = u(rng);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = u(rng);
    layers.push_back(std::move(layer));
  }
  return layers;
}

}  // namespace

// ---------------------------------------------------------------------------

double DenseLayer::max_abs() const {
  return std::max(weight.cwiseAbs().maxCoeff(), bias.size() ? bias.cwiseAbs().maxCoeff() : 0.0);
}

Matrix PlainNetwork::logits(const Matrix& inputs) const {
  if (layers.empty()) throw std::logic_error("network has no layers");
  if (inputs.cols() != layers.front().weight.cols())
    throw std::invalid_argument(fmt::format("network expects {} features, got {}",
                                            layers.front().weight.cols(), inputs.cols()));
  Matrix a = inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = a * layers[l].weight.transpose();
    z.rowwise() += layers[l].bias.transpose();
    a = l + 1 < layers.size() ? activate(z, spec.activation) : std::move(z);
  }
  return a;
}

std::vector<int> PlainNetwork::predict(const Matrix& inputs) const {
  return argmax_rows(logits(inputs));
}

std::vector<int> argmax_rows(const Matrix& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < scores.cols(); ++j)
      if (scores(i, j) > scores(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw std::invalid_argument("accuracy: size mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------

VariationalDenseLayer::VariationalDenseLayer(int inputs, int outputs)
    : mu_w(Matrix::Zero(outputs, inputs)),
      rho_w(Matrix::Zero(outputs, inputs)),
      mu_b(Vector::Zero(outputs)),
      rho_b(Vector::Zero(outputs)),
      prior_mu_w(Matrix::Zero(outputs, inputs)),
      prior_sigma_w(Matrix::Ones(outputs, inputs)),
      prior_mu_b(Vector::Zero(outputs)),
      prior_sigma_b(Vector::Ones(outputs)) {}

Matrix VariationalDenseLayer::sigma_w() const { return softplus_matrix(rho_w); }
Vector VariationalDenseLayer::sigma_b() const { return softplus_vector(rho_b); }

double VariationalDenseLayer::max_abs_mean() const {
  return std::max(mu_w.cwiseAbs().maxCoeff(), mu_b.size() ? mu_b.cwiseAbs().maxCoeff() : 0.0);
}

double VariationalDenseLayer::kl(KlDirection direction) const {
  double sum = 0.0;
  for (Eigen::Index j = 0; j < mu_w.cols(); ++j)
    for (Eigen::Index i = 0; i < mu_w.rows(); ++i)
      sum += kl_gaussian(prior_mu_w(i, j), prior_sigma_w(i, j), mu_w(i, j), softplus(rho_w(i, j)),
                         direction);
  for (Eigen::Index i = 0; i < mu_b.size(); ++i)
    sum += kl_gaussian(prior_mu_b(i), prior_sigma_b(i), mu_b(i), softplus(rho_b(i)), direction);
  return sum;
}

PreActivationMoments preactivation_moments(const VariationalDenseLayer& layer,
                                           const Matrix& inputs) {
  if (inputs.cols() != layer.inputs())
    throw std::invalid_argument(fmt::format("layer expects {} inputs, got {}", layer.inputs(),
                                            inputs.cols()));
  PreActivationMoments m;
  m.mean = inputs * layer.mu_w.transpose();
  m.mean.rowwise() += layer.mu_b.transpose();
  const Matrix var_w = layer.sigma_w().array().square().matrix();
  const Vector var_b = layer.sigma_b().array().square().matrix();
  m.variance = inputs.array().square().matrix() * var_w.transpose();
  m.variance.rowwise() += var_b.transpose();
  return m;
}

Matrix forward_local_reparam(const VariationalDenseLayer& layer, const Matrix& inputs,
                             const Matrix& noise) {
  auto m = preactivation_moments(layer, inputs);
  if (noise.rows() != m.mean.rows() || noise.cols() != m.mean.cols())
    throw std::invalid_argument("forward_local_reparam: noise shape mismatch");
  return m.mean + (m.variance.array().sqrt() * noise.array()).matrix();
}

Matrix forward_local_reparam(const VariationalDenseLayer& layer, const Matrix& inputs,
                             std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix noise(inputs.rows(), layer.outputs());
  for (Eigen::Index j = 0; j < noise.cols(); ++j)
    for (Eigen::Index i = 0; i < noise.rows(); ++i) noise(i, j) = normal(rng);
  return forward_local_reparam(layer, inputs, noise);
}

// ---------------------------------------------------------------------------

VariationalNetwork::VariationalNetwork(NetworkSpec spec, std::uint64_t seed, double init_sigma)
    : spec_(std::move(spec)) {
  const auto means = init_means(spec_, seed);
  const double rho = inverse_softplus(init_sigma);
  for (const auto& m : means) {
    VariationalDenseLayer layer(static_cast<int>(m.weight.cols()), static_cast<int>(m.weight.rows()));
    layer.mu_w = m.weight;
    layer.mu_b = m.bias;
    layer.rho_w.setConstant(rho);
    layer.rho_b.setConstant(rho);
    layers_.push_back(std::move(layer));
  }
}

std::size_t VariationalNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += 2 * static_cast<std::size_t>(l.mu_w.size() + l.mu_b.size());
  return n;
}

double VariationalNetwork::kl(KlDirection direction) const {
  double sum = 0.0;
  for (const auto& l : layers_) sum += l.kl(direction);
  return sum;
}

NoiseDraw draw_noise(const VariationalNetwork& net, Eigen::Index batch, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  NoiseDraw noise;
  for (const auto& l : net.layers()) {
    Matrix e(batch, l.outputs());
    for (Eigen::Index j = 0; j < e.cols(); ++j)
      for (Eigen::Index i = 0; i < e.rows(); ++i) e(i, j) = normal(rng);
    noise.push_back(std::move(e));
  }
  return noise;
}

NoiseDraw zero_noise(const VariationalNetwork& net, Eigen::Index batch) {
  NoiseDraw noise;
  for (const auto& l : net.layers()) noise.push_back(Matrix::Zero(batch, l.outputs()));
  return noise;
}

namespace {

struct Tape {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> stddev;  // sqrt of pre-activation variance
  std::vector<Matrix> pre;     // sampled pre-activations
  Matrix logits;
};

Tape run_forward(const VariationalNetwork& net, const Matrix& inputs, const NoiseDraw& noise) {
  const auto& layers = net.layers();
  if (noise.size() != layers.size()) throw std::invalid_argument("noise draw / layer count mismatch");
  Tape tape;
  Matrix a = inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto m = preactivation_moments(layers[l], a);
    if (noise[l].rows() != a.rows() || noise[l].cols() != layers[l].outputs())
      throw std::invalid_argument("noise draw shape mismatch");
    Matrix sd = m.variance.array().sqrt().matrix();
    Matrix z = m.mean + (sd.array() * noise[l].array()).matrix();
    tape.inputs.push_back(std::move(a));
    tape.stddev.push_back(std::move(sd));
    if (l + 1 < layers.size()) {
      a = activate(z, net.spec().activation);
    } else {
      tape.logits = z;
    }
    tape.pre.push_back(std::move(z));
  }
  return tape;
}

}  // namespace

Matrix forward(const VariationalNetwork& net, const Matrix& inputs, const NoiseDraw& noise) {
  return run_forward(net, inputs, noise).logits;
}

Gradients zero_gradients(const VariationalNetwork& net) {
  Gradients g;
  for (const auto& l : net.layers())
    g.push_back({Matrix::Zero(l.outputs(), l.inputs()), Matrix::Zero(l.outputs(), l.inputs()),
                 Vector::Zero(l.outputs()), Vector::Zero(l.outputs())});
  return g;
}

LossBreakdown evaluate_loss(const VariationalNetwork& net, const Matrix& inputs,
                            std::span<const int> labels, const NoiseDraw& noise,
                            const LossOptions& options) {
  const Tape tape = run_forward(net, inputs, noise);
  LossBreakdown out;
  out.likelihood = cross_entropy(tape.logits, labels, nullptr);
  out.kl = options.kl_weight != 0.0 ? net.kl(options.direction) / options.kl_normalizer : 0.0;
  out.total = out.likelihood + options.kl_weight * out.kl;
  return out;
}

LossBreakdown backward(const VariationalNetwork& net, const Matrix& inputs,
                       std::span<const int> labels, const NoiseDraw& noise,
                       const LossOptions& options, Gradients& grads) {
  const auto& layers = net.layers();
  const Tape tape = run_forward(net, inputs, noise);
  grads = zero_gradients(net);

  LossBreakdown out;
  Matrix g;  // dL/dz for the current layer
  out.likelihood = cross_entropy(tape.logits, labels, &g);

  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& layer = layers[k];
    const Matrix& x = tape.inputs[k];
    // z = m + s .* eps, s = sqrt(v): dL/dv = dL/dz .* eps / (2 s)
    Matrix d_var = (g.array() * noise[k].array() / (2.0 * tape.stddev[k].array())).matrix();
    const Matrix sigma_w = layer.sigma_w();
    const Vector sigma_b = layer.sigma_b();
    auto& lg = grads[k];
    lg.d_mu_w = g.transpose() * x;
    lg.d_mu_b = g.colwise().sum().transpose();
    const Matrix d_var_w = d_var.transpose() * x.array().square().matrix();
    const Vector d_var_b = d_var.colwise().sum().transpose();
    // var = sigma^2, sigma = softplus(rho)
    lg.d_rho_w = (d_var_w.array() * 2.0 * sigma_w.array() *
                  layer.rho_w.unaryExpr([](double r) { return sigmoid(r); }).array())
                     .matrix();
    lg.d_rho_b = (d_var_b.array() * 2.0 * sigma_b.array() *
                  layer.rho_b.unaryExpr([](double r) { return sigmoid(r); }).array())
                     .matrix();
    if (k > 0) {
      Matrix d_x = g * layer.mu_w;
      d_x += (2.0 * x.array() * (d_var * sigma_w.array().square().matrix()).array()).matrix();
      const Matrix& z_prev = tape.pre[k - 1];
      g = activation_backward(d_x, z_prev, x, net.spec().activation);
    }
  }

  if (options.kl_weight != 0.0) {
    const double scale = options.kl_weight / options.kl_normalizer;
    double kl_sum = 0.0;
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      auto& lg = grads[k];
      for (Eigen::Index j = 0; j < l.mu_w.cols(); ++j)
        for (Eigen::Index i = 0; i < l.mu_w.rows(); ++i) {
          const double sq = softplus(l.rho_w(i, j));
          kl_sum += kl_gaussian(l.prior_mu_w(i, j), l.prior_sigma_w(i, j), l.mu_w(i, j), sq,
                                options.direction);
          const auto kg = kl_gaussian_gradient(l.prior_mu_w(i, j), l.prior_sigma_w(i, j),
                                               l.mu_w(i, j), sq, options.direction);
          lg.d_mu_w(i, j) += scale * kg.d_mu_q;
          lg.d_rho_w(i, j) += scale * kg.d_sigma_q * sigmoid(l.rho_w(i, j));
        }
      for (Eigen::Index i = 0; i < l.mu_b.size(); ++i) {
        const double sq = softplus(l.rho_b(i));
        kl_sum += kl_gaussian(l.prior_mu_b(i), l.prior_sigma_b(i), l.mu_b(i), sq, options.direction);
        const auto kg = kl_gaussian_gradient(l.prior_mu_b(i), l.prior_sigma_b(i), l.mu_b(i), sq,
                                             options.direction);
        lg.d_mu_b(i) += scale * kg.d_mu_q;
        lg.d_rho_b(i) += scale * kg.d_sigma_q * sigmoid(l.rho_b(i));
      }
    }
    out.kl = kl_sum / options.kl_normalizer;
  }
  out.total = out.likelihood + options.kl_weight * out.kl;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

const variation::VariationFit& fit_for_layer(std::span<const variation::VariationFit> fits,
                                             std::size_t layer, std::size_t n_layers) {
  if (fits.empty()) throw ConfigError("update_prior: no variation fit supplied");
  if (fits.size() == 1) return fits.front();
  if (fits.size() != n_layers)
    throw ConfigError(fmt::format("update_prior: {} fits for {} layers", fits.size(), n_layers));
  return fits[layer];
}

}  // namespace

void update_prior(VariationalNetwork& net, std::span<const variation::VariationFit> fits,
                  const mapping::MappingConfig& cfg, mapping::SigmaConversion conversion) {
  auto& layers = net.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    auto& l = layers[k];
    const auto& fit = fit_for_layer(fits, k, layers.size());
    const auto layer_cfg = mapping::scaled_to(cfg, l.max_abs_mean());
    l.prior_mu_w = l.mu_w;
    l.prior_mu_b = l.mu_b;
    l.prior_sigma_w = l.mu_w.unaryExpr(
        [&](double w) { return mapping::weight_sigma(w, layer_cfg, fit, conversion); });
    l.prior_sigma_b = l.mu_b.unaryExpr(
        [&](double w) { return mapping::weight_sigma(w, layer_cfg, fit, conversion); });
  }
}

void update_prior_fixed(VariationalNetwork& net, double sigma_f_us, const mapping::MappingConfig& cfg) {
  if (!(sigma_f_us > 0.0)) throw ConfigError("fixed prior: sigma_f must be > 0");
  for (auto& l : net.layers()) {
    const auto layer_cfg = mapping::scaled_to(cfg, l.max_abs_mean());
    const double sigma_w = sigma_f_us / layer_cfg.slope();
    l.prior_mu_w = l.mu_w;
    l.prior_mu_b = l.mu_b;
    l.prior_sigma_w.setConstant(l.mu_w.rows(), l.mu_w.cols(), sigma_w);
    l.prior_sigma_b.setConstant(l.mu_b.size(), sigma_w);
  }
}

void set_static_prior(VariationalNetwork& net, double mu, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("static prior: sigma must be > 0");
  for (auto& l : net.layers()) {
    l.prior_mu_w.setConstant(l.mu_w.rows(), l.mu_w.cols(), mu);
    l.prior_mu_b.setConstant(l.mu_b.size(), mu);
    l.prior_sigma_w.setConstant(l.mu_w.rows(), l.mu_w.cols(), sigma);
    l.prior_sigma_b.setConstant(l.mu_b.size(), sigma);
  }
}

PriorModel PriorModel::variation_aware(std::vector<variation::VariationFit> fits,
                                       mapping::MappingConfig cfg,
                                       mapping::SigmaConversion conversion) {
  PriorModel p;
  p.kind = Kind::VariationAware;
  p.fits = std::move(fits);
  p.mapping = cfg;
  p.conversion = conversion;
  return p;
}

PriorModel PriorModel::fixed(double sigma_f_us, mapping::MappingConfig cfg) {
  PriorModel p;
  p.kind = Kind::Fixed;
  p.sigma_f_us = sigma_f_us;
  p.mapping = cfg;
  return p;
}

void PriorModel::apply(VariationalNetwork& net) const {
  switch (kind) {
    case Kind::Static:
      set_static_prior(net, static_mu, static_sigma);
      break;
    case Kind::VariationAware:
      update_prior(net, fits, mapping, conversion);
      break;
    case Kind::Fixed:
      update_prior_fixed(net, sigma_f_us, mapping);
      break;
  }
}

// ---------------------------------------------------------------------------

double TrainConfig::learning_rate_at(int epoch) const {
  if (lr_decay_every <= 0) return learning_rate;
  return learning_rate * std::pow(lr_decay, (epoch - 1) / lr_decay_every);
}

void TrainConfig::validate() const {
  if (!(kl_weight >= 0.0 && kl_weight <= 1.0)) throw ConfigError("train: kl_weight must be in [0, 1]");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be >= 0");
  if (!(lr_decay > 0.0)) throw ConfigError("train: lr_decay must be > 0");
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (mc_samples < 1) throw ConfigError("train: mc_samples must be >= 1");
  if (!(init_sigma > 0.0)) throw ConfigError("train: init_sigma must be > 0");
}

void Adam::step(double learning_rate, std::span<const std::span<double>> params,
                std::span<const std::span<const double>> grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam: params/grads mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    auto g = grads[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon_);
    }
  }
}

void Adam::restore(long t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

namespace {

template <typename M>
std::span<double> as_span(M& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}
template <typename M>
std::span<const double> as_cspan(const M& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

Matrix rows_of(const Matrix& x, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

void check_finite(const LossBreakdown& loss, int epoch, std::size_t batch) {
  if (!std::isfinite(loss.total))
    throw NumericalError(fmt::format(
        "training diverged at epoch {} batch {}: likelihood={} kl={} total={}", epoch, batch,
        loss.likelihood, loss.kl, loss.total));
}

}  // namespace

PlainNetwork snapshot_mean_network(const VariationalNetwork& net) {
  PlainNetwork plain;
  plain.spec = net.spec();
  for (const auto& l : net.layers()) plain.layers.push_back({l.mu_w, l.mu_b});
  return plain;
}

void train_more(TrainResult& state, const data::DatasetHandle& data, const TrainConfig& cfg,
                const PriorModel& prior, int first_epoch, int last_epoch, const TrainHooks& hooks) {
  cfg.validate();
  auto& net = state.network;
  const auto& train_set = data.train;
  if (train_set.feature_dim() != net.spec().inputs())
    throw DataError(fmt::format("dataset has {} features, network expects {}",
                                train_set.feature_dim(), net.spec().inputs()));
  if (train_set.classes > net.spec().classes())
    throw DataError("dataset has more classes than the network outputs");

  const std::size_t n = train_set.size();
  LossOptions opts;
  opts.kl_weight = cfg.kl_weight;
  opts.kl_normalizer = static_cast<double>(n);
  opts.direction = cfg.kl_direction;

  std::vector<std::size_t> order(n);
  for (int epoch = first_epoch; epoch <= last_epoch; ++epoch) {
    // Streams depend only on (seed, epoch) so resumed runs match uninterrupted ones.
    std::mt19937_64 data_rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    std::mt19937_64 noise_rng(mix_seed(cfg.seed, 2000000 + static_cast<std::uint64_t>(epoch)));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), data_rng);
    const double lr = cfg.learning_rate_at(epoch);

    double like_sum = 0.0;
    std::size_t correct = 0;
    LossBreakdown last{};
    if (cfg.prior_cadence == PriorCadence::Epoch) prior.apply(net);

    for (std::size_t start = 0, batch = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size), ++batch) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Matrix x = rows_of(train_set.features, idx);
      std::vector<int> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = train_set.labels[idx[i]];

      if (cfg.prior_cadence == PriorCadence::Iteration) prior.apply(net);

      Gradients total = zero_gradients(net);
      LossBreakdown loss{};
      for (int s = 0; s < cfg.mc_samples; ++s) {
        const NoiseDraw noise = draw_noise(net, x.rows(), noise_rng);
        Gradients g;
        const auto l = backward(net, x, y, noise, opts, g);
        const double w = 1.0 / cfg.mc_samples;
        loss.likelihood += w * l.likelihood;
        loss.kl = l.kl;
        for (std::size_t k = 0; k < g.size(); ++k) {
          total[k].d_mu_w += w * g[k].d_mu_w;
          total[k].d_rho_w += w * g[k].d_rho_w;
          total[k].d_mu_b += w * g[k].d_mu_b;
          total[k].d_rho_b += w * g[k].d_rho_b;
        }
        if (s == 0) {
          const auto pred = argmax_rows(forward(net, x, noise));
          for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
        }
      }
      loss.total = loss.likelihood + cfg.kl_weight * loss.kl;
      check_finite(loss, epoch, batch);
      like_sum += loss.likelihood * static_cast<double>(idx.size());
      last = loss;

      std::vector<std::span<double>> params;
      std::vector<std::span<const double>> grads;
      for (std::size_t k = 0; k < net.layers().size(); ++k) {
        auto& l = net.layers()[k];
        params.insert(params.end(), {as_span(l.mu_w), as_span(l.rho_w), as_span(l.mu_b), as_span(l.rho_b)});
        grads.insert(grads.end(), {as_cspan(total[k].d_mu_w), as_cspan(total[k].d_rho_w),
                                   as_cspan(total[k].d_mu_b), as_cspan(total[k].d_rho_b)});
      }
      state.optimizer.step(lr, params, grads);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.likelihood = like_sum / static_cast<double>(n);
    m.kl = last.kl;
    m.total = m.likelihood + cfg.kl_weight * m.kl;
    m.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    if (data.test.size() > 0) {
      const auto snap = snapshot_mean_network(net);
      m.test_acc = accuracy(snap.predict(data.test.features), data.test.labels);
    }
    state.history.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);
    if (hooks.on_epoch_network) hooks.on_epoch_network(epoch, net);
  }
}

TrainResult train(const NetworkSpec& spec, const data::DatasetHandle& data, const TrainConfig& cfg,
                  const PriorModel& prior, const TrainHooks& hooks) {
  cfg.validate();
  TrainResult state{VariationalNetwork(spec, cfg.seed, cfg.init_sigma), {}, Adam{}};
  prior.apply(state.network);
  train_more(state, data, cfg, prior, 1, cfg.epochs, hooks);
  return state;
}

// ---------------------------------------------------------------------------

PlainNetwork init_plain(const NetworkSpec& spec, std::uint64_t seed) {
  return {spec, init_means(spec, seed)};
}

double plain_loss_and_gradients(const PlainNetwork& net, const Matrix& inputs,
                                std::span<const int> labels, std::vector<DenseLayer>& grads) {
  const auto& layers = net.layers;
  std::vector<Matrix> acts{inputs};
  std::vector<Matrix> pre;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = acts.back() * layers[l].weight.transpose();
    z.rowwise() += layers[l].bias.transpose();
    pre.push_back(z);
    if (l + 1 < layers.size()) acts.push_back(activate(z, net.spec.activation));
  }
  Matrix g;
  const double loss = cross_entropy(pre.back(), labels, &g);
  grads.resize(layers.size());
  for (std::size_t k = layers.size(); k-- > 0;) {
    grads[k].weight = g.transpose() * acts[k];
    grads[k].bias = g.colwise().sum().transpose();
    if (k > 0) {
      const Matrix d_x = g * layers[k].weight;
      g = activation_backward(d_x, pre[k - 1], acts[k], net.spec.activation);
    }
  }
  return loss;
}

PlainTrainResult train_deterministic(const NetworkSpec& spec, const data::DatasetHandle& data,
                                     const TrainConfig& cfg, double sigma_rel,
                                     const std::function<void(const EpochMetrics&)>& on_epoch) {
  cfg.validate();
  if (!(sigma_rel >= 0.0)) throw ConfigError("train_deterministic: sigma_rel must be >= 0");
  PlainTrainResult result{init_plain(spec, cfg.seed), {}};
  auto& net = result.network;
  const auto& train_set = data.train;
  if (train_set.feature_dim() != spec.inputs())
    throw DataError(fmt::format("dataset has {} features, network expects {}",
                                train_set.feature_dim(), spec.inputs()));
  const std::size_t n = train_set.size();
  Adam adam;
  std::vector<std::size_t> order(n);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 data_rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    std::mt19937_64 noise_rng(mix_seed(cfg.seed, 3000000 + static_cast<std::uint64_t>(epoch)));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), data_rng);
    const double lr = cfg.learning_rate_at(epoch);
    double like_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t start = 0, batch = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size), ++batch) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Matrix x = rows_of(train_set.features, idx);
      std::vector<int> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = train_set.labels[idx[i]];

      PlainNetwork perturbed = net;
      if (sigma_rel > 0.0) {
        for (auto& l : perturbed.layers) {
          l.weight = l.weight.unaryExpr([&](double w) { return w * (1.0 + sigma_rel * normal(noise_rng)); });
          l.bias = l.bias.unaryExpr([&](double w) { return w * (1.0 + sigma_rel * normal(noise_rng)); });
        }
      }
      std::vector<DenseLayer> grads;
      const double loss = plain_loss_and_gradients(perturbed, x, y, grads);
      if (!std::isfinite(loss))
        throw NumericalError(fmt::format("training diverged at epoch {} batch {}: loss={}", epoch,
                                         batch, loss));
      like_sum += loss * static_cast<double>(idx.size());
      const auto pred = perturbed.predict(x);
      for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];

      std::vector<std::span<double>> params;
      std::vector<std::span<const double>> gspans;
      for (std::size_t k = 0; k < net.layers.size(); ++k) {
        params.insert(params.end(), {as_span(net.layers[k].weight), as_span(net.layers[k].bias)});
        gspans.insert(gspans.end(), {as_cspan(grads[k].weight), as_cspan(grads[k].bias)});
      }
      adam.step(lr, params, gspans);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.likelihood = like_sum / static_cast<double>(n);
    m.total = m.likelihood;
    m.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    if (data.test.size() > 0) m.test_acc = accuracy(net.predict(data.test.features), data.test.labels);
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

}  // namespace ferrobnn::bnn
