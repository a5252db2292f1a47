#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "covexplain/baselines.hpp"
#include "covexplain/checkpoint.hpp"
#include "covexplain/corpus.hpp"
#include "covexplain/embed.hpp"
#include "covexplain/model.hpp"

namespace covexplain {

enum class ModelKind { CovExplain, Linear, GaussianNB, SvmRbf };

// Column titles used in reports.
std::string_view display_name(ModelKind kind) noexcept;
// Short keys used on the command line and in checkpoints.
std::string_view model_key(ModelKind kind) noexcept;
ModelKind parse_model_kind(std::string_view text);
// "all" or a comma-separated list of keys.
std::vector<ModelKind> parse_model_list(std::string_view text);

struct ClassifierOptions {
    model::TrainConfig mlp;
    double ridge_lambda = baselines::kDefaultRidge;
    baselines::SvmConfig svm;
};

// Common fit/predict contract of the stance model and the baselines.
class Classifier {
public:
    virtual ~Classifier() = default;
    virtual std::string name() const = 0;
    // `seed` drives every random choice made during fitting.
    virtual void fit(const embed::FeatureMatrix& x, std::span<const corpus::StanceLabel> y, std::uint64_t seed) = 0;
    virtual std::vector<corpus::StanceLabel> predict(const embed::FeatureMatrix& x) const = 0;
    // Adds the kind tag, hyperparameters and fitted tensors.
    virtual void save(checkpoint::Checkpoint& out) const = 0;
};

std::unique_ptr<Classifier> make_classifier(ModelKind kind, const ClassifierOptions& options = {});
std::unique_ptr<Classifier> load_classifier(const checkpoint::Checkpoint& ckpt);

class MlpClassifier final : public Classifier {
public:
    explicit MlpClassifier(model::TrainConfig config = {}) : config_(config) {}
    MlpClassifier(model::TrainConfig config, model::ModelParams params)
        : config_(config), params_(std::move(params)) {}

    std::string name() const override;
    void fit(const embed::FeatureMatrix& x, std::span<const corpus::StanceLabel> y, std::uint64_t seed) override;
    std::vector<corpus::StanceLabel> predict(const embed::FeatureMatrix& x) const override;
    void save(checkpoint::Checkpoint& out) const override;

    const model::ModelParams& params() const noexcept { return params_; }
    const model::TrainConfig& config() const noexcept { return config_; }
    const std::vector<model::EpochMetrics>& history() const noexcept { return history_; }

private:
    model::TrainConfig config_;
    model::ModelParams params_;
    std::vector<model::EpochMetrics> history_;
};

double accuracy(std::span<const corpus::StanceLabel> predicted, std::span<const corpus::StanceLabel> truth);

// Shortest round-trip decimal form, used for config values.
std::string format_double(double value);
double parse_double(std::string_view text, std::string_view what);
std::uint64_t parse_u64(std::string_view text, std::string_view what);

}  // namespace covexplain
