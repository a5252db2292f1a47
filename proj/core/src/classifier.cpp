#include "covexplain/classifier.hpp"

#include <algorithm>
#include <charconv>

#include "covexplain/error.hpp"

namespace covexplain {

using checkpoint::Checkpoint;
using checkpoint::Tensor;
using corpus::StanceLabel;

namespace {

constexpr ModelKind kAllKinds[] = {ModelKind::CovExplain, ModelKind::Linear, ModelKind::GaussianNB,
                                   ModelKind::SvmRbf};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return out;
}

baselines::Matrix to_double(const embed::FeatureMatrix& x) { return x.cast<double>(); }

std::vector<double> row_major(const baselines::Matrix& m) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    return out;
}

baselines::Matrix matrix_from(const Tensor& t, std::string_view what) {
    if (t.dtype != checkpoint::DType::F64 || t.shape.size() != 2)
        throw FormatError("checkpoint: tensor " + std::string(what) + " must be a float64 matrix");
    baselines::Matrix m(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.f64[k++];
    return m;
}

baselines::Vector vector_from(const Tensor& t, std::string_view what) {
    if (t.dtype != checkpoint::DType::F64 || t.shape.size() != 1)
        throw FormatError("checkpoint: tensor " + std::string(what) + " must be a float64 vector");
    return Eigen::Map<const baselines::Vector>(t.f64.data(), static_cast<Eigen::Index>(t.f64.size()));
}

void require_fitted(bool fitted, std::string_view who) {
    if (!fitted) throw InvalidArgument(std::string(who) + ": model has not been fitted");
}

class LinearClassifier final : public Classifier {
public:
    explicit LinearClassifier(double lambda) : lambda_(lambda) {}
    explicit LinearClassifier(baselines::LinearModel model) : lambda_(model.lambda), model_(std::move(model)), fitted_(true) {}

    std::string name() const override { return std::string(display_name(ModelKind::Linear)); }
    void fit(const embed::FeatureMatrix& x, std::span<const StanceLabel> y, std::uint64_t) override {
        model_ = baselines::fit_linear(to_double(x), y, lambda_);
        fitted_ = true;
    }
    std::vector<StanceLabel> predict(const embed::FeatureMatrix& x) const override {
        require_fitted(fitted_, "linear");
        return baselines::predict(model_, to_double(x));
    }
    void save(Checkpoint& out) const override {
        require_fitted(fitted_, "linear");
        out.config["kind"] = model_key(ModelKind::Linear);
        out.config["linear.lambda"] = format_double(lambda_);
        const auto d = static_cast<std::uint64_t>(model_.weight.size());
        out.tensors.push_back(Tensor::from_f64("weight", {d}, std::vector<double>(model_.weight.data(), model_.weight.data() + d)));
        out.tensors.push_back(Tensor::from_f64("bias", {1}, {model_.bias}));
    }

private:
    double lambda_;
    baselines::LinearModel model_;
    bool fitted_ = false;
};

class GnbClassifier final : public Classifier {
public:
    GnbClassifier() = default;
    explicit GnbClassifier(baselines::GaussianNBModel model) : model_(std::move(model)), fitted_(true) {}

    std::string name() const override { return std::string(display_name(ModelKind::GaussianNB)); }
    void fit(const embed::FeatureMatrix& x, std::span<const StanceLabel> y, std::uint64_t) override {
        model_ = baselines::fit_gnb(to_double(x), y);
        fitted_ = true;
    }
    std::vector<StanceLabel> predict(const embed::FeatureMatrix& x) const override {
        require_fitted(fitted_, "gaussian naive bayes");
        return baselines::predict(model_, to_double(x));
    }
    void save(Checkpoint& out) const override {
        require_fitted(fitted_, "gaussian naive bayes");
        out.config["kind"] = model_key(ModelKind::GaussianNB);
        out.config["gnb.variance_floor"] = format_double(baselines::kVarianceFloor);
        const auto d = static_cast<std::uint64_t>(model_.mean.cols());
        out.tensors.push_back(Tensor::from_f64("log_prior", {2}, {model_.log_prior[0], model_.log_prior[1]}));
        out.tensors.push_back(Tensor::from_f64("mean", {2, d}, row_major(model_.mean)));
        out.tensors.push_back(Tensor::from_f64("variance", {2, d}, row_major(model_.variance)));
    }

private:
    baselines::GaussianNBModel model_;
    bool fitted_ = false;
};

class SvmClassifier final : public Classifier {
public:
    explicit SvmClassifier(baselines::SvmConfig config) : config_(config) {}
    SvmClassifier(baselines::SvmConfig config, baselines::SvmModel model)
        : config_(config), model_(std::move(model)), fitted_(true) {}

    std::string name() const override { return std::string(display_name(ModelKind::SvmRbf)); }
    void fit(const embed::FeatureMatrix& x, std::span<const StanceLabel> y, std::uint64_t) override {
        model_ = baselines::fit_svm_rbf(to_double(x), y, config_);
        fitted_ = true;
    }
    std::vector<StanceLabel> predict(const embed::FeatureMatrix& x) const override {
        require_fitted(fitted_, "svm");
        return baselines::predict(model_, to_double(x));
    }
    void save(Checkpoint& out) const override {
        require_fitted(fitted_, "svm");
        out.config["kind"] = model_key(ModelKind::SvmRbf);
        out.config["svm.c"] = format_double(model_.c);
        out.config["svm.gamma"] = format_double(model_.gamma);
        out.config["svm.tolerance"] = format_double(config_.tolerance);
        const auto s = static_cast<std::uint64_t>(model_.support_vectors.rows());
        const auto d = static_cast<std::uint64_t>(model_.support_vectors.cols());
        out.tensors.push_back(Tensor::from_f64("support_vectors", {s, d}, row_major(model_.support_vectors)));
        out.tensors.push_back(Tensor::from_f64(
            "coefficients", {s}, std::vector<double>(model_.coefficients.data(), model_.coefficients.data() + s)));
        out.tensors.push_back(Tensor::from_f64("bias", {1}, {model_.bias}));
    }

private:
    baselines::SvmConfig config_;
    baselines::SvmModel model_;
    bool fitted_ = false;
};

void put_row_vector(Checkpoint& out, const std::string& name, const model::RowVector<float>& v) {
    const auto n = static_cast<std::uint64_t>(v.size());
    out.tensors.push_back(Tensor::from_f32(name, {n}, std::vector<float>(v.data(), v.data() + n)));
}

model::RowVector<float> get_row_vector(const Checkpoint& ckpt, const std::string& name, Eigen::Index expected) {
    const auto& t = ckpt.tensor(name);
    if (t.dtype != checkpoint::DType::F32 || t.shape.size() != 1 || static_cast<Eigen::Index>(t.shape[0]) != expected)
        throw FormatError("checkpoint: tensor " + name + " has the wrong shape");
    return Eigen::Map<const model::RowVector<float>>(t.f32.data(), expected);
}

std::unique_ptr<Classifier> load_mlp(const Checkpoint& ckpt) {
    model::TrainConfig config;
    config.learning_rate = parse_double(ckpt.get("train.learning_rate"), "train.learning_rate");
    config.epochs = parse_u64(ckpt.get("train.epochs"), "train.epochs");
    config.batch_size = parse_u64(ckpt.get("train.batch_size"), "train.batch_size");
    config.hidden_dim = parse_u64(ckpt.get("model.hidden_dim"), "model.hidden_dim");
    config.dropout_p = parse_double(ckpt.get("train.dropout_p"), "train.dropout_p");
    config.leaky_slope = parse_double(ckpt.get("train.leaky_slope"), "train.leaky_slope");
    config.seed = parse_u64(ckpt.get("train.seed"), "train.seed");
    config.shuffle = ckpt.get("train.shuffle") == "1";
    config.adamw.beta1 = parse_double(ckpt.get("adamw.beta1"), "adamw.beta1");
    config.adamw.beta2 = parse_double(ckpt.get("adamw.beta2"), "adamw.beta2");
    config.adamw.eps = parse_double(ckpt.get("adamw.eps"), "adamw.eps");
    config.adamw.weight_decay = parse_double(ckpt.get("adamw.weight_decay"), "adamw.weight_decay");

    model::ModelParams params;
    params.input_dim = parse_u64(ckpt.get("model.input_dim"), "model.input_dim");
    params.hidden_dim = config.hidden_dim;
    params.output_dim = parse_u64(ckpt.get("model.output_dim"), "model.output_dim");
    for (std::size_t l = 0; l < model::kNumLayers; ++l) {
        const std::string prefix = "layer" + std::to_string(l + 1) + ".";
        const auto fan_in = static_cast<Eigen::Index>(l == 0 ? params.input_dim : params.hidden_dim);
        const auto fan_out = static_cast<Eigen::Index>(l + 1 == model::kNumLayers ? params.output_dim : params.hidden_dim);
        const auto& w = ckpt.tensor(prefix + "weight");
        if (w.dtype != checkpoint::DType::F32 || w.shape.size() != 2 ||
            static_cast<Eigen::Index>(w.shape[0]) != fan_in || static_cast<Eigen::Index>(w.shape[1]) != fan_out)
            throw FormatError("checkpoint: tensor " + prefix + "weight has the wrong shape");
        model::Layer<float> layer;
        layer.weight = Eigen::Map<const model::Matrix<float>>(w.f32.data(), fan_in, fan_out);
        layer.bias = get_row_vector(ckpt, prefix + "bias", fan_out);
        if (l + 1 < model::kNumLayers) {
            layer.gamma = get_row_vector(ckpt, prefix + "gamma", fan_out);
            layer.beta = get_row_vector(ckpt, prefix + "beta", fan_out);
            layer.running_mean = get_row_vector(ckpt, prefix + "running_mean", fan_out);
            layer.running_var = get_row_vector(ckpt, prefix + "running_var", fan_out);
        }
        params.layers.push_back(std::move(layer));
    }
    return std::make_unique<MlpClassifier>(config, std::move(params));
}

}  // namespace

std::string_view display_name(ModelKind kind) noexcept {
    switch (kind) {
        case ModelKind::CovExplain: return "CovExplain";
        case ModelKind::Linear: return "Linear";
        case ModelKind::GaussianNB: return "Naive Bayes";
        case ModelKind::SvmRbf: return "SVM";
    }
    return "?";
}

std::string_view model_key(ModelKind kind) noexcept {
    switch (kind) {
        case ModelKind::CovExplain: return "covexplain";
        case ModelKind::Linear: return "linear";
        case ModelKind::GaussianNB: return "gnb";
        case ModelKind::SvmRbf: return "svm";
    }
    return "?";
}

ModelKind parse_model_kind(std::string_view text) {
    const std::string key = lower(trim(text));
    for (const auto kind : kAllKinds)
        if (key == model_key(kind) || key == lower(display_name(kind))) return kind;
    if (key == "mlp") return ModelKind::CovExplain;
    if (key == "naive_bayes" || key == "gaussiannb") return ModelKind::GaussianNB;
    if (key == "svm_rbf") return ModelKind::SvmRbf;
    throw InvalidArgument("unknown model \"" + std::string(text) + "\" (expected covexplain, linear, gnb, svm or all)");
}

std::vector<ModelKind> parse_model_list(std::string_view text) {
    if (lower(trim(text)) == "all") return {std::begin(kAllKinds), std::end(kAllKinds)};
    std::vector<ModelKind> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto comma = text.find(',', pos);
        const auto item = text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
        const auto kind = parse_model_kind(item);
        if (std::find(out.begin(), out.end(), kind) == out.end()) out.push_back(kind);
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

std::string MlpClassifier::name() const { return std::string(display_name(ModelKind::CovExplain)); }

void MlpClassifier::fit(const embed::FeatureMatrix& x, std::span<const StanceLabel> y, std::uint64_t seed) {
    config_.seed = seed;
    auto result = model::train(x, y, config_);
    params_ = std::move(result.params);
    history_ = std::move(result.epochs);
}

std::vector<StanceLabel> MlpClassifier::predict(const embed::FeatureMatrix& x) const {
    require_fitted(!params_.layers.empty(), "covexplain");
    const auto preds = model::predict(params_, x, 0, config_.architecture());
    std::vector<StanceLabel> out;
    out.reserve(preds.size());
    for (const auto& p : preds) out.push_back(p.label);
    return out;
}

void MlpClassifier::save(Checkpoint& out) const {
    require_fitted(!params_.layers.empty(), "covexplain");
    auto& c = out.config;
    c["kind"] = model_key(ModelKind::CovExplain);
    c["model.input_dim"] = std::to_string(params_.input_dim);
    c["model.hidden_dim"] = std::to_string(params_.hidden_dim);
    c["model.output_dim"] = std::to_string(params_.output_dim);
    c["model.layers"] = std::to_string(model::kNumLayers);
    c["train.learning_rate"] = format_double(config_.learning_rate);
    c["train.epochs"] = std::to_string(config_.epochs);
    c["train.batch_size"] = std::to_string(config_.batch_size);
    c["train.dropout_p"] = format_double(config_.dropout_p);
    c["train.leaky_slope"] = format_double(config_.leaky_slope);
    c["train.seed"] = std::to_string(config_.seed);
    c["train.shuffle"] = config_.shuffle ? "1" : "0";
    c["adamw.beta1"] = format_double(config_.adamw.beta1);
    c["adamw.beta2"] = format_double(config_.adamw.beta2);
    c["adamw.eps"] = format_double(config_.adamw.eps);
    c["adamw.weight_decay"] = format_double(config_.adamw.weight_decay);
    const model::Architecture arch = config_.architecture();
    c["bn.eps"] = format_double(arch.bn_eps);
    c["bn.momentum"] = format_double(arch.bn_momentum);
    for (std::size_t l = 0; l < params_.layers.size(); ++l) {
        const auto& layer = params_.layers[l];
        const std::string prefix = "layer" + std::to_string(l + 1) + ".";
        const auto rows = static_cast<std::uint64_t>(layer.weight.rows());
        const auto cols = static_cast<std::uint64_t>(layer.weight.cols());
        out.tensors.push_back(Tensor::from_f32(prefix + "weight", {rows, cols},
                                               std::vector<float>(layer.weight.data(), layer.weight.data() + rows * cols)));
        put_row_vector(out, prefix + "bias", layer.bias);
        if (layer.normalized()) {
            put_row_vector(out, prefix + "gamma", layer.gamma);
            put_row_vector(out, prefix + "beta", layer.beta);
            put_row_vector(out, prefix + "running_mean", layer.running_mean);
            put_row_vector(out, prefix + "running_var", layer.running_var);
        }
    }
}

std::unique_ptr<Classifier> make_classifier(ModelKind kind, const ClassifierOptions& options) {
    switch (kind) {
        case ModelKind::CovExplain: return std::make_unique<MlpClassifier>(options.mlp);
        case ModelKind::Linear: return std::make_unique<LinearClassifier>(options.ridge_lambda);
        case ModelKind::GaussianNB: return std::make_unique<GnbClassifier>();
        case ModelKind::SvmRbf: return std::make_unique<SvmClassifier>(options.svm);
    }
    throw InvalidArgument("unknown model kind");
}

std::unique_ptr<Classifier> load_classifier(const Checkpoint& ckpt) {
    const auto kind = parse_model_kind(ckpt.get("kind"));
    switch (kind) {
        case ModelKind::CovExplain: return load_mlp(ckpt);
        case ModelKind::Linear: {
            baselines::LinearModel m;
            m.lambda = parse_double(ckpt.get("linear.lambda"), "linear.lambda");
            m.weight = vector_from(ckpt.tensor("weight"), "weight");
            m.bias = vector_from(ckpt.tensor("bias"), "bias")[0];
            return std::make_unique<LinearClassifier>(std::move(m));
        }
        case ModelKind::GaussianNB: {
            baselines::GaussianNBModel m;
            const auto prior = vector_from(ckpt.tensor("log_prior"), "log_prior");
            if (prior.size() != 2) throw FormatError("checkpoint: log_prior must have 2 entries");
            m.log_prior = {prior[0], prior[1]};
            m.mean = matrix_from(ckpt.tensor("mean"), "mean");
            m.variance = matrix_from(ckpt.tensor("variance"), "variance");
            if (m.mean.rows() != 2 || m.variance.rows() != 2 || m.mean.cols() != m.variance.cols())
                throw FormatError("checkpoint: gaussian naive bayes tensors disagree in shape");
            return std::make_unique<GnbClassifier>(std::move(m));
        }
        case ModelKind::SvmRbf: {
            baselines::SvmConfig config;
            config.c = parse_double(ckpt.get("svm.c"), "svm.c");
            config.gamma = parse_double(ckpt.get("svm.gamma"), "svm.gamma");
            config.tolerance = parse_double(ckpt.get("svm.tolerance"), "svm.tolerance");
            baselines::SvmModel m;
            m.c = config.c;
            m.gamma = config.gamma;
            m.support_vectors = matrix_from(ckpt.tensor("support_vectors"), "support_vectors");
            m.coefficients = vector_from(ckpt.tensor("coefficients"), "coefficients");
            m.bias = vector_from(ckpt.tensor("bias"), "bias")[0];
            if (m.coefficients.size() != m.support_vectors.rows())
                throw FormatError("checkpoint: svm coefficient count does not match support vectors");
            return std::make_unique<SvmClassifier>(config, std::move(m));
        }
    }
    throw FormatError("checkpoint: unknown model kind");
}

double accuracy(std::span<const StanceLabel> predicted, std::span<const StanceLabel> truth) {
    if (predicted.size() != truth.size()) throw InvalidArgument("accuracy: prediction and label counts differ");
    if (truth.empty()) throw InvalidArgument("accuracy: empty evaluation set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

std::string format_double(double value) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, std::string_view what) {
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
        throw InvalidArgument("invalid number for " + std::string(what) + ": \"" + std::string(text) + "\"");
    return v;
}

std::uint64_t parse_u64(std::string_view text, std::string_view what) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
        throw InvalidArgument("invalid integer for " + std::string(what) + ": \"" + std::string(text) + "\"");
    return v;
}

}  // namespace covexplain
