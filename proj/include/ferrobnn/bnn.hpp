#pragma once

// Variational dense networks trained with Bayes by Backprop.
//
// Every weight has a Gaussian posterior N(mu_q, sigma_q^2) with
// sigma_q = softplus(rho_q), and a Gaussian prior N(mu_p, sigma_p^2) whose
// mean tracks mu_q and whose spread comes from a device variation model.
// The likelihood term is estimated with the local reparameterization trick:
// pre-activations are sampled from their exact Gaussian moments instead of
// sampling weight matrices.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ferrobnn/dataset.hpp"
#include "ferrobnn/mapping.hpp"
#include "ferrobnn/variation_model.hpp"

namespace ferrobnn::bnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { Relu, Tanh };

struct NetworkSpec {
  std::vector<int> widths;  // input, hidden..., classes
  Activation activation = Activation::Relu;

  int inputs() const { return widths.front(); }
  int classes() const { return widths.back(); }
  int layer_count() const { return static_cast<int>(widths.size()) - 1; }
  void validate() const;

  /// 784-512-256-128-64-10
  static NetworkSpec mlp5();
};

double softplus(double rho);
double inverse_softplus(double sigma);
double sigmoid(double x);

// ---------------------------------------------------------------------------
// KL divergence between the prior P = N(mu_p, sigma_p) and posterior
// q = N(mu_q, sigma_q).

enum class KlDirection {
  PriorToPosterior,  // KL(P || q): log(sq/sp) + (sp^2 + (mp - mq)^2) / (2 sq^2) - 1/2
  PosteriorToPrior,  // KL(q || P)
};

double kl_gaussian(double mu_p, double sigma_p, double mu_q, double sigma_q,
                   KlDirection direction = KlDirection::PriorToPosterior);

struct KlGradient {
  double d_mu_q = 0.0;
  double d_sigma_q = 0.0;
};

/// Derivatives with respect to the posterior parameters; the prior is a
/// constant.
KlGradient kl_gaussian_gradient(double mu_p, double sigma_p, double mu_q, double sigma_q,
                                KlDirection direction = KlDirection::PriorToPosterior);

// ---------------------------------------------------------------------------

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;

  double max_abs() const;
};

/// Deterministic network (also the deployed form of a variational one).
struct PlainNetwork {
  NetworkSpec spec;
  std::vector<DenseLayer> layers;

  Matrix logits(const Matrix& inputs) const;
  std::vector<int> predict(const Matrix& inputs) const;
};

/// Row-wise argmax; exact ties resolve to the lowest class index.
std::vector<int> argmax_rows(const Matrix& scores);
double accuracy(std::span<const int> predicted, std::span<const int> labels);

struct VariationalDenseLayer {
  Matrix mu_w, rho_w;  // out x in
  Vector mu_b, rho_b;
  Matrix prior_mu_w, prior_sigma_w;
  Vector prior_mu_b, prior_sigma_b;

  VariationalDenseLayer() = default;
  VariationalDenseLayer(int inputs, int outputs);

  int inputs() const { return static_cast<int>(mu_w.cols()); }
  int outputs() const { return static_cast<int>(mu_w.rows()); }
  Matrix sigma_w() const;
  Vector sigma_b() const;
  /// max |mu| over weights and biases
  double max_abs_mean() const;
  double kl(KlDirection direction) const;
};

struct PreActivationMoments {
  Matrix mean;      // batch x out
  Matrix variance;  // batch x out
};

PreActivationMoments preactivation_moments(const VariationalDenseLayer& layer, const Matrix& inputs);

/// mean + sqrt(variance) .* noise for a caller-supplied standard-normal draw.
Matrix forward_local_reparam(const VariationalDenseLayer& layer, const Matrix& inputs,
                             const Matrix& noise);
Matrix forward_local_reparam(const VariationalDenseLayer& layer, const Matrix& inputs,
                             std::mt19937_64& rng);

class VariationalNetwork {
 public:
  VariationalNetwork() = default;
  /// Means ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); rho = inverse_softplus(init_sigma).
  VariationalNetwork(NetworkSpec spec, std::uint64_t seed, double init_sigma = 0.05);

  const NetworkSpec& spec() const { return spec_; }
  std::vector<VariationalDenseLayer>& layers() { return layers_; }
  const std::vector<VariationalDenseLayer>& layers() const { return layers_; }
  std::size_t parameter_count() const;

  /// Sum of per-layer KL terms (unnormalized).
  double kl(KlDirection direction = KlDirection::PriorToPosterior) const;

 private:
  NetworkSpec spec_;
  std::vector<VariationalDenseLayer> layers_;
};

/// Standard-normal draws for every layer's pre-activations, batch x out.
using NoiseDraw = std::vector<Matrix>;
NoiseDraw draw_noise(const VariationalNetwork& net, Eigen::Index batch, std::mt19937_64& rng);
NoiseDraw zero_noise(const VariationalNetwork& net, Eigen::Index batch);

/// Logits for a fixed noise draw.
Matrix forward(const VariationalNetwork& net, const Matrix& inputs, const NoiseDraw& noise);

struct LossBreakdown {
  double likelihood = 0.0;  // mean cross-entropy
  double kl = 0.0;          // layer-summed KL / kl_normalizer
  double total = 0.0;       // likelihood + kl_weight * kl
};

struct LossOptions {
  double kl_weight = 0.1;
  double kl_normalizer = 1.0;  // dataset size
  KlDirection direction = KlDirection::PriorToPosterior;
};

struct LayerGradient {
  Matrix d_mu_w, d_rho_w;
  Vector d_mu_b, d_rho_b;
};
using Gradients = std::vector<LayerGradient>;

Gradients zero_gradients(const VariationalNetwork& net);

/// Loss only (no gradients); used by finite-difference checks.
LossBreakdown evaluate_loss(const VariationalNetwork& net, const Matrix& inputs,
                            std::span<const int> labels, const NoiseDraw& noise,
                            const LossOptions& options);

/// Reverse-mode gradients of the total loss with respect to every mu and
/// rho, with the prior held constant. Returns the loss at the same point.
LossBreakdown backward(const VariationalNetwork& net, const Matrix& inputs,
                       std::span<const int> labels, const NoiseDraw& noise,
                       const LossOptions& options, Gradients& grads);

// ---------------------------------------------------------------------------
// Priors

/// mu_p <- mu_q; sigma_p <- weight_sigma(mu_q) under the layer's max-abs
/// scaled mapping. `fits` holds one fit shared by all layers or one per layer.
void update_prior(VariationalNetwork& net, std::span<const variation::VariationFit> fits,
                  const mapping::MappingConfig& cfg,
                  mapping::SigmaConversion conversion = mapping::SigmaConversion::Jacobian);

/// mu_p <- mu_q; sigma_p <- sigma_f_us pulled back through each layer's map.
void update_prior_fixed(VariationalNetwork& net, double sigma_f_us,
                        const mapping::MappingConfig& cfg);

/// Fixed N(mu, sigma) prior for every weight.
void set_static_prior(VariationalNetwork& net, double mu, double sigma);

struct PriorModel {
  enum class Kind { Static, VariationAware, Fixed };
  Kind kind = Kind::Static;
  double static_mu = 0.0;
  double static_sigma = 1.0;
  std::vector<variation::VariationFit> fits;
  mapping::MappingConfig mapping;
  mapping::SigmaConversion conversion = mapping::SigmaConversion::Jacobian;
  double sigma_f_us = 0.0;

  static PriorModel variation_aware(std::vector<variation::VariationFit> fits,
                                    mapping::MappingConfig cfg,
                                    mapping::SigmaConversion conversion = mapping::SigmaConversion::Jacobian);
  static PriorModel fixed(double sigma_f_us, mapping::MappingConfig cfg);
  void apply(VariationalNetwork& net) const;
};

// ---------------------------------------------------------------------------
// Training

enum class PriorCadence { Iteration, Epoch };

struct TrainConfig {
  double kl_weight = 0.1;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double lr_decay = 0.5;    // step decay factor
  int lr_decay_every = 10;  // epochs
  int epochs = 30;
  int mc_samples = 1;
  double init_sigma = 0.05;
  KlDirection kl_direction = KlDirection::PriorToPosterior;
  PriorCadence prior_cadence = PriorCadence::Iteration;
  mapping::SigmaConversion sigma_conversion = mapping::SigmaConversion::Jacobian;
  std::uint64_t seed = 0;

  double learning_rate_at(int epoch) const;  // epoch is 1-based
  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double likelihood = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double train_acc = 0.0;  // from the stochastic training forward passes
  double test_acc = 0.0;   // posterior-mean snapshot on the test split
};

class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  /// params[i] -= lr * mhat / (sqrt(vhat) + eps) for parallel spans.
  void step(double learning_rate, std::span<const std::span<double>> params,
            std::span<const std::span<const double>> grads);

  long steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moment() const { return m_; }
  const std::vector<std::vector<double>>& second_moment() const { return v_; }
  void restore(long t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  double beta1_, beta2_, epsilon_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainHooks {
  /// Called after each epoch's metrics are computed; may append derived values.
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(int epoch, const VariationalNetwork&)> on_epoch_network;
};

struct TrainResult {
  VariationalNetwork network;
  std::vector<EpochMetrics> history;
  Adam optimizer;
};

/// Bayes-by-Backprop loop: refresh prior -> local-reparam forward ->
/// likelihood + kl_weight * KL / N -> backward -> Adam.
/// Throws NumericalError on a non-finite loss.
TrainResult train(const NetworkSpec& spec, const data::DatasetHandle& data, const TrainConfig& cfg,
                  const PriorModel& prior, const TrainHooks& hooks = {});

/// Continues training an existing network (same loop as train).
void train_more(TrainResult& state, const data::DatasetHandle& data, const TrainConfig& cfg,
                const PriorModel& prior, int first_epoch, int last_epoch,
                const TrainHooks& hooks = {});

PlainNetwork snapshot_mean_network(const VariationalNetwork& net);

struct PlainTrainResult {
  PlainNetwork network;
  std::vector<EpochMetrics> history;
};

/// Point-estimate training. With sigma_rel > 0 every forward pass uses
/// w * (1 + delta), delta ~ N(0, sigma_rel^2) per weight, and the gradient at
/// the perturbed weights is applied to the clean weights.
PlainTrainResult train_deterministic(const NetworkSpec& spec, const data::DatasetHandle& data,
                                     const TrainConfig& cfg, double sigma_rel = 0.0,
                                     const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// Plain network initialized exactly like the variational means for `seed`.
PlainNetwork init_plain(const NetworkSpec& spec, std::uint64_t seed);

/// Mean cross-entropy and its gradients for a plain network.
double plain_loss_and_gradients(const PlainNetwork& net, const Matrix& inputs,
                                std::span<const int> labels, std::vector<DenseLayer>& grads);

}  // namespace ferrobnn::bnn
