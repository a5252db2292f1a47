#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "covexplain/corpus.hpp"
#include "covexplain/embed.hpp"
#include "covexplain/model.hpp"

namespace covexplain::explain {

// Membership flags, one per player.
using Coalition = std::vector<bool>;

struct CoalitionGame {
    std::size_t n_players = 0;
    std::vector<std::string> player_names;
    std::function<double(const Coalition&)> value;
    // Optional vectorized form; used instead of `value` when set.
    std::function<std::vector<double>(std::span<const Coalition>)> batch_value;

    std::vector<double> evaluate(std::span<const Coalition> coalitions) const;
};

enum class Unit { FeatureGroup, Token };

struct Attribution {
    std::string target;
    Unit unit = Unit::FeatureGroup;
    corpus::StanceLabel target_class = corpus::StanceLabel::Anti;
    std::vector<std::pair<std::string, double>> values;
    // Original player position of each entry in `values`.
    std::vector<std::size_t> player_index;
    double baseline_value = 0.0;  // v(empty)
    double full_value = 0.0;      // v(all players)

    double total() const noexcept;
    // |sum(phi) - (v(N) - v(empty))|
    double efficiency_gap() const noexcept;
};

inline constexpr std::size_t kMaxExactPlayers = 20;

// Enumerates all 2^n coalitions once; factorial weights are precomputed.
Attribution shapley_exact(const CoalitionGame& game);

// Average marginal contribution over `permutations` seeded random orderings.
// Every coalition is evaluated once and reused, so each ordering telescopes
// to v(N) - v(empty) exactly.
Attribution shapley_sampled(const CoalitionGame& game, std::size_t permutations, std::uint64_t seed);

// Class probabilities (rows x 2) for a batch of fused feature rows.
using ProbabilityModel = std::function<Eigen::MatrixXd(const embed::FeatureMatrix&)>;

ProbabilityModel mlp_probabilities(const model::ModelParams& params, const model::Architecture& arch);

// Per-segment training-set means of a dataset, concatenated in layout order.
std::vector<float> segment_baseline(const embed::Dataset& training);

// Players are layout segments; absent segments take their baseline values.
// Without a target class the model's prediction on the full input is used.
Attribution explain_feature_groups(const ProbabilityModel& model, std::span<const float> fused,
                                   const embed::Layout& layout, std::span<const float> baseline,
                                   std::optional<corpus::StanceLabel> target_class = std::nullopt,
                                   std::string target_id = {});

// Builds the fused input for a post when only the given tweet tokens are kept.
using TokenEmbedder = std::function<std::vector<float>(std::span<const std::string> kept_tokens)>;

// Re-hashes the kept tweet tokens and keeps every other selected segment at
// the post's actual values.
TokenEmbedder hashing_token_embedder(const corpus::RawPost& post, const corpus::CategoricalSchema& schema,
                                     const embed::FeatureSelection& selection, embed::HashingParams tweet_hashing,
                                     std::optional<std::span<const float>> description_row);

// Tweet tokens of a post as explained: whitespace words of the sanitized text.
std::vector<std::string> explanation_tokens(const corpus::RawPost& post);

// Sampled Shapley over tokens; values sorted by |phi| descending.
Attribution explain_tokens(const ProbabilityModel& model, const corpus::RawPost& post,
                           const TokenEmbedder& embedder, std::size_t permutations, std::uint64_t seed,
                           std::optional<corpus::StanceLabel> target_class = std::nullopt);

// CSV "rank,name,phi" preceded by a "# target=...,class=..." metadata line.
void write_attribution_csv(std::ostream& out, const Attribution& attribution);
// Token spans with red (toward Anti) or blue (toward Pro) backgrounds whose
// opacity follows |phi|.
// Players appear in their original order.
void write_attribution_html(std::ostream& out, const Attribution& attribution);

}  // namespace covexplain::explain
