#include "covexplain/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "covexplain/error.hpp"

namespace covexplain::model {

template <typename T>
std::size_t ParamsT<T>::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers)
        n += static_cast<std::size_t>(l.weight.size() + l.bias.size() + l.gamma.size() + l.beta.size());
    return n;
}

ModelParams init_params(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed,
                        std::size_t output_dim) {
    if (input_dim == 0) throw InvalidArgument("init_params: input dimension must be positive");
    if (hidden_dim == 0) throw InvalidArgument("init_params: hidden width must be positive");
    if (output_dim < 2) throw InvalidArgument("init_params: need at least two output classes");

    Rng rng(seed);
    ModelParams params;
    params.input_dim = input_dim;
    params.hidden_dim = hidden_dim;
    params.output_dim = output_dim;
    for (std::size_t l = 0; l < kNumLayers; ++l) {
        const auto fan_in = static_cast<Eigen::Index>(l == 0 ? input_dim : hidden_dim);
        const auto fan_out = static_cast<Eigen::Index>(l + 1 == kNumLayers ? output_dim : hidden_dim);
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Layer<float> layer;
        layer.weight.resize(fan_in, fan_out);
        for (Eigen::Index r = 0; r < fan_in; ++r)
            for (Eigen::Index c = 0; c < fan_out; ++c)
                layer.weight(r, c) = static_cast<float>(rng.uniform(-limit, limit));
        layer.bias = RowVector<float>::Zero(fan_out);
        if (l + 1 < kNumLayers) {
            layer.gamma = RowVector<float>::Ones(fan_out);
            layer.beta = RowVector<float>::Zero(fan_out);
            layer.running_mean = RowVector<float>::Zero(fan_out);
            layer.running_var = RowVector<float>::Ones(fan_out);
        }
        params.layers.push_back(std::move(layer));
    }
    return params;
}

namespace {

template <typename T>
void check_shape(const ParamsT<T>& params, const Matrix<T>& batch) {
    if (params.layers.size() != kNumLayers)
        throw InvalidArgument("model has " + std::to_string(params.layers.size()) + " layers, expected " +
                              std::to_string(kNumLayers));
    if (static_cast<std::size_t>(batch.cols()) != params.input_dim)
        throw InvalidArgument("batch has " + std::to_string(batch.cols()) + " columns, model expects " +
                              std::to_string(params.input_dim));
}

template <typename T>
Matrix<T> draw_mask(Rng& rng, Eigen::Index rows, Eigen::Index cols, double p) {
    const double keep = 1.0 - p;
    const T scale = static_cast<T>(1.0 / keep);
    Matrix<T> mask(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) mask(r, c) = rng.uniform() < keep ? scale : T(0);
    return mask;
}

}  // namespace

template <typename T>
Matrix<T> forward(const ParamsT<T>& params, const Matrix<T>& batch, Mode mode, const Architecture& arch,
                  Rng* rng, ForwardTape<T>* tape, const DropoutMasks<T>* replay) {
    check_shape(params, batch);
    if (!batch.allFinite()) throw InvalidArgument("forward: non-finite input");
    const bool batch_stats = mode == Mode::Train;
    if (batch_stats && batch.rows() < 2)
        throw InvalidArgument("forward: train mode needs at least 2 rows for batch statistics");
    const bool dropout = mode != Mode::Eval && arch.dropout_p > 0.0;
    if (dropout && replay == nullptr && rng == nullptr)
        throw InvalidArgument("forward: dropout is active but no random source was supplied");

    if (tape != nullptr) {
        tape->mode = mode;
        tape->layers.clear();
        tape->masks.clear();
        tape->recorded = false;
    }
    const T slope = static_cast<T>(arch.leaky_slope);
    const T eps = static_cast<T>(arch.bn_eps);

    Matrix<T> a = batch;
    std::size_t hidden_index = 0;
    for (const auto& layer : params.layers) {
        Matrix<T> z = a * layer.weight;
        z.rowwise() += layer.bias;
        if (!layer.normalized()) {
            if (tape != nullptr) {
                LayerTape<T> lt;
                lt.input = std::move(a);
                tape->layers.push_back(std::move(lt));
                tape->logits = z;
                tape->recorded = true;
            }
            return z;
        }

        LayerTape<T> lt;
        RowVector<T> mean;
        RowVector<T> inv_std;
        if (batch_stats) {
            mean = z.colwise().mean();
            const RowVector<T> var = (z.rowwise() - mean).array().square().colwise().mean().matrix();
            inv_std = (var.array() + eps).rsqrt().matrix();
            lt.batch_mean = mean;
            lt.batch_var = var;
        } else {
            mean = layer.running_mean;
            inv_std = (layer.running_var.array() + eps).rsqrt().matrix();
        }
        Matrix<T> xhat = ((z.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
        Matrix<T> y = ((xhat.array().rowwise() * layer.gamma.array()).rowwise() + layer.beta.array()).matrix();
        Matrix<T> h = y.unaryExpr([slope](T v) { return v > T(0) ? v : slope * v; });
        if (dropout) {
            Matrix<T> mask;
            if (replay != nullptr) {
                if (hidden_index >= replay->size() || (*replay)[hidden_index].rows() != h.rows() ||
                    (*replay)[hidden_index].cols() != h.cols())
                    throw InvalidArgument("forward: replayed dropout masks do not match the batch");
                mask = (*replay)[hidden_index];
            } else {
                mask = draw_mask<T>(*rng, h.rows(), h.cols(), arch.dropout_p);
            }
            h = h.cwiseProduct(mask);
            if (tape != nullptr) tape->masks.push_back(std::move(mask));
        }
        if (tape != nullptr) {
            lt.input = std::move(a);
            lt.normalized = std::move(xhat);
            lt.preactivation = std::move(y);
            lt.inv_std = std::move(inv_std);
            tape->layers.push_back(std::move(lt));
        }
        a = std::move(h);
        ++hidden_index;
    }
    throw InvalidArgument("forward: model has no output layer");
}

template <typename T>
void update_running_stats(ParamsT<T>& params, const ForwardTape<T>& tape, const Architecture& arch) {
    if (!tape.recorded || tape.mode != Mode::Train)
        throw InvalidArgument("update_running_stats needs a train-mode forward tape");
    const T m = static_cast<T>(arch.bn_momentum);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& layer = params.layers[l];
        if (!layer.normalized()) continue;
        const auto& lt = tape.layers[l];
        const auto b = static_cast<T>(lt.input.rows());
        const RowVector<T> unbiased = lt.batch_var * (b / (b - T(1)));
        layer.running_mean = (T(1) - m) * layer.running_mean + m * lt.batch_mean;
        layer.running_var = (T(1) - m) * layer.running_var + m * unbiased;
    }
}

std::vector<double> softmax(std::span<const double> z) {
    if (z.empty()) return {};
    const double mx = *std::max_element(z.begin(), z.end());
    std::vector<double> out(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - mx);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& z) {
    Matrix<T> out(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const T mx = z.row(r).maxCoeff();
        out.row(r) = (z.row(r).array() - mx).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

template <typename T>
T bce_loss(const Matrix<T>& targets, const Matrix<T>& probs) {
    if (targets.rows() != probs.rows() || targets.cols() != probs.cols())
        throw InvalidArgument("bce_loss: target and probability shapes differ");
    if (targets.rows() == 0) throw InvalidArgument("bce_loss: empty batch");
    double total = 0.0;
    for (Eigen::Index r = 0; r < targets.rows(); ++r) {
        for (Eigen::Index c = 0; c < targets.cols(); ++c) {
            const double p = std::clamp(static_cast<double>(probs(r, c)), kProbabilityClamp,
                                        1.0 - kProbabilityClamp);
            const double y = static_cast<double>(targets(r, c));
            total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        }
    }
    return static_cast<T>(total / static_cast<double>(targets.rows()));
}

template <typename T>
Matrix<T> one_hot(std::span<const corpus::StanceLabel> labels, std::size_t classes) {
    Matrix<T> out = Matrix<T>::Zero(static_cast<Eigen::Index>(labels.size()),
                                    static_cast<Eigen::Index>(classes));
    for (std::size_t i = 0; i < labels.size(); ++i)
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i])) = T(1);
    return out;
}

template <typename T>
Gradients<T> backward(const ParamsT<T>& params, const ForwardTape<T>& tape, const Matrix<T>& targets,
                      const Architecture& arch) {
    if (!tape.recorded || tape.layers.size() != params.layers.size())
        throw InvalidArgument("backward: no paired forward pass recorded");
    const Matrix<T>& logits = tape.logits;
    if (targets.rows() != logits.rows() || targets.cols() != logits.cols())
        throw InvalidArgument("backward: target shape does not match the recorded batch");

    const Eigen::Index rows = logits.rows();
    const T inv_rows = T(1) / static_cast<T>(rows);
    const Matrix<T> probs = softmax_rows(logits);

    // dL/dp with the clamp treated as flat outside [eps, 1 - eps].
    Matrix<T> dprob(rows, logits.cols());
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            const double p = static_cast<double>(probs(r, c));
            const double y = static_cast<double>(targets(r, c));
            double g = 0.0;
            if (p > kProbabilityClamp && p < 1.0 - kProbabilityClamp) g = -y / p + (1.0 - y) / (1.0 - p);
            dprob(r, c) = static_cast<T>(g) * inv_rows;
        }
    }
    // Softmax Jacobian: dz_j = p_j (dp_j - sum_i p_i dp_i).
    const Matrix<T> weighted = probs.cwiseProduct(dprob);
    const Eigen::Matrix<T, Eigen::Dynamic, 1> dots = weighted.rowwise().sum();
    Matrix<T> dz = weighted - (probs.array().colwise() * dots.array()).matrix();

    Gradients<T> grads(params.layers.size());
    const T slope = static_cast<T>(arch.leaky_slope);
    std::size_t mask_index = tape.masks.size();
    for (std::size_t l = params.layers.size(); l-- > 0;) {
        const auto& layer = params.layers[l];
        const auto& lt = tape.layers[l];
        auto& g = grads[l];
        if (layer.normalized()) {
            // dz currently holds dL/d(post-dropout activation).
            Matrix<T> dh = std::move(dz);
            if (!tape.masks.empty()) dh = dh.cwiseProduct(tape.masks[--mask_index]);
            const Matrix<T> dy = dh.cwiseProduct(
                lt.preactivation.unaryExpr([slope](T v) { return v > T(0) ? T(1) : slope; }));
            g.gamma = dy.cwiseProduct(lt.normalized).colwise().sum();
            g.beta = dy.colwise().sum();
            const Matrix<T> dxhat = (dy.array().rowwise() * layer.gamma.array()).matrix();
            if (tape.mode == Mode::Train) {
                const RowVector<T> sum_dxhat = dxhat.colwise().sum();
                const RowVector<T> sum_dxhat_xhat = dxhat.cwiseProduct(lt.normalized).colwise().sum();
                const T b = static_cast<T>(rows);
                Matrix<T> inner = (dxhat * b).rowwise() - sum_dxhat;
                inner -= (lt.normalized.array().rowwise() * sum_dxhat_xhat.array()).matrix();
                dz = ((inner.array().rowwise() * lt.inv_std.array()) / b).matrix();
            } else {
                dz = (dxhat.array().rowwise() * lt.inv_std.array()).matrix();
            }
        }
        g.weight = lt.input.transpose() * dz;
        g.bias = dz.colwise().sum();
        if (l > 0) dz = dz * layer.weight.transpose();
    }
    return grads;
}

template <typename T>
AdamWState<T> make_adamw_state(const ParamsT<T>& params) {
    AdamWState<T> state;
    for (const auto& l : params.layers) {
        LayerGrad<T> zero{Matrix<T>::Zero(l.weight.rows(), l.weight.cols()),
                          RowVector<T>::Zero(l.bias.size()), RowVector<T>::Zero(l.gamma.size()),
                          RowVector<T>::Zero(l.beta.size())};
        state.first.push_back(zero);
        state.second.push_back(std::move(zero));
    }
    return state;
}

namespace {

template <typename T, typename Fn>
void for_each_tensor(Layer<T>& layer, const LayerGrad<T>& grad, LayerGrad<T>& m, LayerGrad<T>& v, Fn&& fn) {
    fn(layer.weight.data(), grad.weight.data(), m.weight.data(), v.weight.data(),
       static_cast<std::size_t>(layer.weight.size()), grad.weight.size());
    fn(layer.bias.data(), grad.bias.data(), m.bias.data(), v.bias.data(),
       static_cast<std::size_t>(layer.bias.size()), grad.bias.size());
    fn(layer.gamma.data(), grad.gamma.data(), m.gamma.data(), v.gamma.data(),
       static_cast<std::size_t>(layer.gamma.size()), grad.gamma.size());
    fn(layer.beta.data(), grad.beta.data(), m.beta.data(), v.beta.data(),
       static_cast<std::size_t>(layer.beta.size()), grad.beta.size());
}

}  // namespace

template <typename T>
void adamw_step(ParamsT<T>& params, const Gradients<T>& grads, AdamWState<T>& state, std::size_t t,
                double learning_rate, const AdamWConfig& config) {
    if (t < 1) throw InvalidArgument("adamw_step: step index starts at 1");
    if (grads.size() != params.layers.size() || state.first.size() != params.layers.size() ||
        state.second.size() != params.layers.size())
        throw InvalidArgument("adamw_step: gradient/state layer count does not match the model");
    for (std::size_t l = 0; l < grads.size(); ++l) {
        const auto& g = grads[l];
        if (!g.weight.allFinite() || !g.bias.allFinite() || !g.gamma.allFinite() || !g.beta.allFinite())
            throw NumericError("adamw_step: non-finite gradient in layer " + std::to_string(l + 1));
    }

    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        for_each_tensor(params.layers[l], grads[l], state.first[l], state.second[l],
                        [&](T* theta, const T* g, T* m, T* v, std::size_t n, Eigen::Index gn) {
                            if (static_cast<std::size_t>(gn) != n)
                                throw InvalidArgument("adamw_step: gradient shape mismatch in layer " +
                                                      std::to_string(l + 1));
                            for (std::size_t i = 0; i < n; ++i) {
                                const double gi = static_cast<double>(g[i]);
                                const double mi = config.beta1 * static_cast<double>(m[i]) +
                                                  (1.0 - config.beta1) * gi;
                                const double vi = config.beta2 * static_cast<double>(v[i]) +
                                                  (1.0 - config.beta2) * gi * gi;
                                m[i] = static_cast<T>(mi);
                                v[i] = static_cast<T>(vi);
                                const double m_hat = mi / bc1;
                                const double v_hat = vi / bc2;
                                const double th = static_cast<double>(theta[i]);
                                theta[i] = static_cast<T>(
                                    th - learning_rate * (m_hat / (std::sqrt(v_hat) + config.eps) +
                                                          config.weight_decay * th));
                            }
                        });
    }
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw InvalidArgument("dropout probability must be in [0, 1)");
    if (batch_size < 2) throw InvalidArgument("batch size must be at least 2");
    if (hidden_dim == 0) throw InvalidArgument("hidden width must be positive");
}

TrainResult train(const embed::FeatureMatrix& features, std::span<const corpus::StanceLabel> labels,
                  const TrainConfig& config) {
    config.validate();
    const auto n = static_cast<std::size_t>(features.rows());
    if (labels.size() != n)
        throw InvalidArgument("train: " + std::to_string(n) + " feature rows but " +
                              std::to_string(labels.size()) + " labels");
    if (features.cols() == 0) throw InvalidArgument("train: zero-width features");
    std::size_t counts[2] = {0, 0};
    for (const auto y : labels) ++counts[static_cast<std::size_t>(y)];
    if (counts[0] == 0 || counts[1] == 0) throw InvalidArgument("single-class data");
    if (counts[0] < 2 || counts[1] < 2) throw InvalidArgument("train: need at least 2 samples per class");

    const Architecture arch = config.architecture();
    TrainResult result;
    result.params = init_params(static_cast<std::size_t>(features.cols()), config.hidden_dim,
                                derive_seed(config.seed, 1));
    auto state = make_adamw_state(result.params);
    Rng shuffle_rng(derive_seed(config.seed, 2));
    Rng dropout_rng(derive_seed(config.seed, 3));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t step = 0;
    ForwardTape<float> tape;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.shuffle) shuffle_rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t size = std::min(config.batch_size, n - start);
            if (size < 2) break;
            Matrix<float> xb(static_cast<Eigen::Index>(size), features.cols());
            std::vector<corpus::StanceLabel> yb(size);
            for (std::size_t i = 0; i < size; ++i) {
                xb.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(order[start + i]));
                yb[i] = labels[order[start + i]];
            }
            const Matrix<float> targets = one_hot<float>(yb);
            const Matrix<float> logits = forward(result.params, xb, Mode::Train, arch, &dropout_rng, &tape);
            const Matrix<float> probs = softmax_rows(logits);
            loss_sum += static_cast<double>(bce_loss(targets, probs)) * static_cast<double>(size);
            for (std::size_t i = 0; i < size; ++i) {
                const auto r = static_cast<Eigen::Index>(i);
                const auto pred = probs(r, 1) > probs(r, 0) ? corpus::StanceLabel::Pro : corpus::StanceLabel::Anti;
                if (pred == yb[i]) ++correct;
            }
            seen += size;
            const auto grads = backward(result.params, tape, targets, arch);
            update_running_stats(result.params, tape, arch);
            adamw_step(result.params, grads, state, ++step, config.learning_rate, config.adamw);
        }
        result.epochs.push_back(EpochMetrics{epoch + 1, seen ? loss_sum / static_cast<double>(seen) : 0.0,
                                             seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0});
    }
    return result;
}

corpus::StanceLabel argmax_label(std::span<const double> probs) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[best]) best = i;
    return best == 0 ? corpus::StanceLabel::Anti : corpus::StanceLabel::Pro;
}

Matrix<float> predict_proba(const ModelParams& params, const embed::FeatureMatrix& features,
                            const Architecture& arch) {
    const Matrix<float> x = features;
    return softmax_rows(forward(params, x, Mode::Eval, arch));
}

std::vector<Prediction> predict(const ModelParams& params, const embed::FeatureMatrix& features,
                                std::size_t mc_samples, const Architecture& arch, std::uint64_t seed) {
    const auto rows = static_cast<std::size_t>(features.rows());
    const auto k = static_cast<Eigen::Index>(params.output_dim);
    std::vector<Prediction> out(rows);
    if (mc_samples == 0) {
        const auto probs = predict_proba(params, features, arch);
        for (std::size_t i = 0; i < rows; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            out[i].probs.resize(static_cast<std::size_t>(k));
            for (Eigen::Index c = 0; c < k; ++c) out[i].probs[static_cast<std::size_t>(c)] = probs(r, c);
            out[i].label = argmax_label(out[i].probs);
        }
        return out;
    }

    // Welford accumulation: identical samples give a standard deviation of exactly 0.
    Rng rng(seed);
    const Matrix<float> x = features;
    Matrix<double> mean = Matrix<double>::Zero(x.rows(), k);
    Matrix<double> m2 = Matrix<double>::Zero(x.rows(), k);
    for (std::size_t s = 0; s < mc_samples; ++s) {
        const Matrix<double> p = softmax_rows(forward(params, x, Mode::MonteCarlo, arch, &rng)).cast<double>();
        const Matrix<double> delta = p - mean;
        mean += delta / static_cast<double>(s + 1);
        m2 += delta.cwiseProduct(p - mean);
    }
    const double t = static_cast<double>(mc_samples);
    for (std::size_t i = 0; i < rows; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        out[i].probs.resize(static_cast<std::size_t>(k));
        std::vector<double> sd(static_cast<std::size_t>(k));
        for (Eigen::Index c = 0; c < k; ++c) {
            out[i].probs[static_cast<std::size_t>(c)] = mean(r, c);
            sd[static_cast<std::size_t>(c)] = std::sqrt(std::max(0.0, m2(r, c) / t));
        }
        out[i].label = argmax_label(out[i].probs);
        out[i].mc_std = std::move(sd);
    }
    return out;
}

GradCheckReport grad_check(const ParamsT<double>& params, const Matrix<double>& batch,
                           std::span<const corpus::StanceLabel> labels, const Architecture& arch,
                           std::uint64_t mask_seed, double h) {
    const Matrix<double> targets = one_hot<double>(labels, params.output_dim);
    Rng rng(mask_seed);
    ForwardTape<double> tape;
    forward(params, batch, Mode::Train, arch, &rng, &tape);
    const auto analytic = backward(params, tape, targets, arch);
    const DropoutMasks<double> masks = tape.masks;
    const DropoutMasks<double>* replay = masks.empty() ? nullptr : &masks;

    ParamsT<double> probe = params;
    // LeakyReLU sign pattern of the unperturbed network. A finite difference
    // whose stencil changes this pattern straddles a kink and is retried with
    // a smaller step.
    const auto pattern_of = [&](const ForwardTape<double>& t) {
        std::vector<bool> bits;
        for (const auto& lt : t.layers)
            for (Eigen::Index i = 0; i < lt.preactivation.size(); ++i)
                bits.push_back(lt.preactivation.data()[i] > 0.0);
        return bits;
    };
    const auto base_pattern = pattern_of(tape);
    ForwardTape<double> probe_tape;
    bool crossed = false;
    const auto loss_at = [&]() {
        const auto logits = forward<double>(probe, batch, Mode::Train, arch, nullptr, &probe_tape, replay);
        if (pattern_of(probe_tape) != base_pattern) crossed = true;
        return bce_loss(targets, softmax_rows(logits));
    };

    GradCheckReport report;
    const auto check = [&](const std::string& name, double* value, const double* grad, Eigen::Index n) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double saved = value[i];
            const auto at = [&](double offset) {
                value[i] = saved + offset;
                return loss_at();
            };
            double step = h;
            double fd = 0.0;
            for (int attempt = 0; attempt < 6; ++attempt, step /= 10.0) {
                crossed = false;
                // Five-point central stencil, O(h^4) truncation.
                fd = (at(-2.0 * step) - 8.0 * at(-step) + 8.0 * at(step) - at(2.0 * step)) / (12.0 * step);
                if (!crossed) break;
                ++report.kink_retries;
            }
            value[i] = saved;
            const double denom = std::max({std::abs(grad[i]), std::abs(fd), 1e-8});
            const double rel = std::abs(grad[i] - fd) / denom;
            ++report.checked;
            if (rel > report.max_relative_error) {
                report.max_relative_error = rel;
                report.worst_parameter = name + "[" + std::to_string(i) + "]";
            }
        }
    };
    for (std::size_t l = 0; l < probe.layers.size(); ++l) {
        auto& layer = probe.layers[l];
        const auto& g = analytic[l];
        const std::string prefix = "layer" + std::to_string(l + 1) + ".";
        check(prefix + "weight", layer.weight.data(), g.weight.data(), layer.weight.size());
        check(prefix + "bias", layer.bias.data(), g.bias.data(), layer.bias.size());
        check(prefix + "gamma", layer.gamma.data(), g.gamma.data(), layer.gamma.size());
        check(prefix + "beta", layer.beta.data(), g.beta.data(), layer.beta.size());
    }
    return report;
}

GradCheckReport grad_check(const ModelParams& params, const embed::FeatureMatrix& batch,
                           std::span<const corpus::StanceLabel> labels, const Architecture& arch,
                           std::uint64_t mask_seed, double h) {
    const Matrix<double> shadow_batch = batch.cast<double>();
    return grad_check(params.cast<double>(), shadow_batch, labels, arch, mask_seed, h);
}

template struct ParamsT<float>;
template struct ParamsT<double>;

#define COVEXPLAIN_INSTANTIATE(T)                                                                      \
    template Matrix<T> forward(const ParamsT<T>&, const Matrix<T>&, Mode, const Architecture&, Rng*,     \
                               ForwardTape<T>*, const DropoutMasks<T>*);                               \
    template void update_running_stats(ParamsT<T>&, const ForwardTape<T>&, const Architecture&);         \
    template Matrix<T> softmax_rows(const Matrix<T>&);                                                 \
    template T bce_loss(const Matrix<T>&, const Matrix<T>&);                                           \
    template Matrix<T> one_hot(std::span<const corpus::StanceLabel>, std::size_t);                     \
    template Gradients<T> backward(const ParamsT<T>&, const ForwardTape<T>&, const Matrix<T>&,          \
                                   const Architecture&);                                               \
    template AdamWState<T> make_adamw_state(const ParamsT<T>&);                                        \
    template void adamw_step(ParamsT<T>&, const Gradients<T>&, AdamWState<T>&, std::size_t, double,      \
                             const AdamWConfig&);

COVEXPLAIN_INSTANTIATE(float)
COVEXPLAIN_INSTANTIATE(double)

#undef COVEXPLAIN_INSTANTIATE

}  // namespace covexplain::model
