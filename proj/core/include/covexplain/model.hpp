#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "covexplain/corpus.hpp"
#include "covexplain/embed.hpp"
#include "covexplain/random.hpp"

namespace covexplain::model {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

inline constexpr std::size_t kNumLayers = 6;
inline constexpr std::size_t kDefaultHidden = 1024;

// One affine block. Hidden blocks carry batch-norm parameters and running
// statistics; the output block leaves them empty.
template <typename T>
struct Layer {
    Matrix<T> weight;  // fan_in x fan_out
    RowVector<T> bias;
    RowVector<T> gamma;
    RowVector<T> beta;
    RowVector<T> running_mean;
    RowVector<T> running_var;

    bool normalized() const noexcept { return gamma.size() > 0; }
};

template <typename T>
struct ParamsT {
    std::vector<Layer<T>> layers;
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    std::size_t output_dim = 0;

    std::size_t parameter_count() const noexcept;

    template <typename U>
    ParamsT<U> cast() const {
        ParamsT<U> out;
        out.input_dim = input_dim;
        out.hidden_dim = hidden_dim;
        out.output_dim = output_dim;
        for (const auto& l : layers) {
            out.layers.push_back(Layer<U>{l.weight.template cast<U>(), l.bias.template cast<U>(),
                                          l.gamma.template cast<U>(), l.beta.template cast<U>(),
                                          l.running_mean.template cast<U>(),
                                          l.running_var.template cast<U>()});
        }
        return out;
    }
};

using ModelParams = ParamsT<float>;

// Glorot-uniform weights, zero biases, unit gain, zero shift, running mean 0
// and running variance 1. Layer widths: n -> hidden (x5) -> output_dim.
ModelParams init_params(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed,
                        std::size_t output_dim = corpus::kNumClasses);

enum class Mode { Train, Eval, MonteCarlo };

struct Architecture {
    double leaky_slope = 0.01;
    double dropout_p = 0.2;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
};

// Multipliers applied after each hidden activation: 0 or 1/(1-p).
template <typename T>
using DropoutMasks = std::vector<Matrix<T>>;

template <typename T>
struct LayerTape {
    Matrix<T> input;
    Matrix<T> normalized;
    Matrix<T> preactivation;
    RowVector<T> inv_std;
    RowVector<T> batch_mean;
    RowVector<T> batch_var;
};

// Everything backward() needs from the paired forward pass.
template <typename T>
struct ForwardTape {
    Mode mode = Mode::Eval;
    std::vector<LayerTape<T>> layers;
    DropoutMasks<T> masks;
    Matrix<T> logits;
    bool recorded = false;
};

// Runs the network on a B x n batch and returns B x K logits. Dropout masks
// are replayed from `replay` when given, otherwise drawn from `rng` (required
// in Train/MonteCarlo mode when dropout_p > 0). Running statistics are not
// touched; see update_running_stats.
template <typename T>
Matrix<T> forward(const ParamsT<T>& params, const Matrix<T>& batch, Mode mode,
                  const Architecture& arch, Rng* rng = nullptr, ForwardTape<T>* tape = nullptr,
                  const DropoutMasks<T>* replay = nullptr);

// Folds the batch statistics of a Train-mode tape into the running averages.
template <typename T>
void update_running_stats(ParamsT<T>& params, const ForwardTape<T>& tape, const Architecture& arch);

// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> z);
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& z);

inline constexpr double kProbabilityClamp = 1e-7;

// Mean over rows of -sum_i [y_i log p_i + (1 - y_i) log(1 - p_i)], p clamped
// to [1e-7, 1 - 1e-7].
template <typename T>
T bce_loss(const Matrix<T>& targets, const Matrix<T>& probs);

template <typename T>
Matrix<T> one_hot(std::span<const corpus::StanceLabel> labels, std::size_t classes = corpus::kNumClasses);

template <typename T>
struct LayerGrad {
    Matrix<T> weight;
    RowVector<T> bias;
    RowVector<T> gamma;
    RowVector<T> beta;
};

template <typename T>
using Gradients = std::vector<LayerGrad<T>>;

// Exact gradient of bce_loss(targets, softmax(forward)) with respect to every
// trainable tensor, using the masks and batch statistics stored in `tape`.
template <typename T>
Gradients<T> backward(const ParamsT<T>& params, const ForwardTape<T>& tape, const Matrix<T>& targets,
                      const Architecture& arch);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

template <typename T>
struct AdamWState {
    Gradients<T> first;
    Gradients<T> second;
};

template <typename T>
AdamWState<T> make_adamw_state(const ParamsT<T>& params);

// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta),
// step index t >= 1. Throws NumericError naming the layer on non-finite gradients.
template <typename T>
void adamw_step(ParamsT<T>& params, const Gradients<T>& grads, AdamWState<T>& state, std::size_t t,
                double learning_rate, const AdamWConfig& config);

struct TrainConfig {
    double learning_rate = 1e-2;
    std::size_t epochs = 80;
    std::size_t batch_size = 256;
    std::size_t hidden_dim = kDefaultHidden;
    double dropout_p = 0.2;
    double leaky_slope = 0.01;
    AdamWConfig adamw;
    std::uint64_t seed = 0;
    bool shuffle = true;

    Architecture architecture() const { return Architecture{leaky_slope, dropout_p}; }
    void validate() const;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochMetrics> epochs;
};

TrainResult train(const embed::FeatureMatrix& features, std::span<const corpus::StanceLabel> labels,
                  const TrainConfig& config);

struct Prediction {
    std::vector<double> probs;
    corpus::StanceLabel label = corpus::StanceLabel::Anti;
    std::optional<std::vector<double>> mc_std;
};

// Argmax with ties resolved toward class 0 (Anti).
corpus::StanceLabel argmax_label(std::span<const double> probs);

// Eval-mode class probabilities, one row per input row.
Matrix<float> predict_proba(const ModelParams& params, const embed::FeatureMatrix& features,
                            const Architecture& arch);

// mc_samples == 0: one eval pass. Otherwise mc_samples dropout-active passes,
// averaged, with per-class standard deviation.
std::vector<Prediction> predict(const ModelParams& params, const embed::FeatureMatrix& features,
                                std::size_t mc_samples, const Architecture& arch, std::uint64_t seed = 0);

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t checked = 0;
    // Stencils that straddled a LeakyReLU kink and were redone with a 10x smaller step.
    std::size_t kink_retries = 0;
};

// Central finite differences (five-point stencil, step h) on a float64 copy of
// `params`, with the dropout masks of one Train-mode pass frozen for every
// evaluation. Stencils that cross a LeakyReLU kink are retried with a smaller
// step.
GradCheckReport grad_check(const ModelParams& params, const embed::FeatureMatrix& batch,
                           std::span<const corpus::StanceLabel> labels, const Architecture& arch,
                           std::uint64_t mask_seed = 0, double h = 1e-3);
GradCheckReport grad_check(const ParamsT<double>& params, const Matrix<double>& batch,
                           std::span<const corpus::StanceLabel> labels, const Architecture& arch,
                           std::uint64_t mask_seed = 0, double h = 1e-3);

}  // namespace covexplain::model
