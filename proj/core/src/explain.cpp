#include "covexplain/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include "covexplain/error.hpp"
#include "covexplain/random.hpp"

namespace covexplain::explain {

using corpus::StanceLabel;

namespace {

constexpr std::size_t kChunk = 4096;
constexpr std::size_t kPermutationChunk = 64;

Attribution make_attribution(const CoalitionGame& game, std::vector<double> phi, double empty, double full) {
    Attribution a;
    a.baseline_value = empty;
    a.full_value = full;
    for (std::size_t i = 0; i < game.n_players; ++i) {
        a.values.emplace_back(i < game.player_names.size() ? game.player_names[i] : "p" + std::to_string(i),
                              phi[i]);
        a.player_index.push_back(i);
    }
    return a;
}

void check_game(const CoalitionGame& game) {
    if (!game.value && !game.batch_value) throw InvalidArgument("coalition game has no value function");
    if (!game.player_names.empty() && game.player_names.size() != game.n_players)
        throw InvalidArgument("coalition game names " + std::to_string(game.player_names.size()) + " players, expected " +
                              std::to_string(game.n_players));
}

void sort_by_magnitude(Attribution& a) {
    std::vector<std::size_t> order(a.values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return std::abs(a.values[x].second) > std::abs(a.values[y].second);
    });
    Attribution sorted = a;
    for (std::size_t k = 0; k < order.size(); ++k) {
        sorted.values[k] = a.values[order[k]];
        sorted.player_index[k] = a.player_index[order[k]];
    }
    a = std::move(sorted);
}

StanceLabel resolve_target(const ProbabilityModel& model, const embed::FeatureMatrix& full,
                           std::optional<StanceLabel> target) {
    if (target) return *target;
    const Eigen::MatrixXd p = model(full);
    return p(0, 1) > p(0, 0) ? StanceLabel::Pro : StanceLabel::Anti;
}

}  // namespace

std::vector<double> CoalitionGame::evaluate(std::span<const Coalition> coalitions) const {
    for (const auto& c : coalitions)
        if (c.size() != n_players) throw InvalidArgument("coalition size does not match the player count");
    if (batch_value) {
        auto out = batch_value(coalitions);
        if (out.size() != coalitions.size()) throw InvalidArgument("batch value function returned the wrong count");
        return out;
    }
    std::vector<double> out;
    out.reserve(coalitions.size());
    for (const auto& c : coalitions) out.push_back(value(c));
    return out;
}

double Attribution::total() const noexcept {
    double s = 0.0;
    for (const auto& [name, phi] : values) s += phi;
    return s;
}

double Attribution::efficiency_gap() const noexcept { return std::abs(total() - (full_value - baseline_value)); }

Attribution shapley_exact(const CoalitionGame& game) {
    check_game(game);
    const std::size_t n = game.n_players;
    if (n > kMaxExactPlayers)
        throw InvalidArgument("shapley_exact: " + std::to_string(n) + " players exceeds the limit of " +
                              std::to_string(kMaxExactPlayers) + "; use shapley_sampled");
    const std::size_t subsets = std::size_t{1} << n;
    std::vector<double> v(subsets);
    std::vector<Coalition> batch;
    for (std::size_t start = 0; start < subsets; start += kChunk) {
        const std::size_t end = std::min(subsets, start + kChunk);
        batch.clear();
        for (std::size_t mask = start; mask < end; ++mask) {
            Coalition c(n);
            for (std::size_t i = 0; i < n; ++i) c[i] = (mask >> i) & 1u;
            batch.push_back(std::move(c));
        }
        const auto values = game.evaluate(batch);
        std::copy(values.begin(), values.end(), v.begin() + static_cast<std::ptrdiff_t>(start));
    }

    // weight[s] = s! (n-s-1)! / n! = 1 / (n * C(n-1, s))
    std::vector<double> weight(n > 0 ? n : 1);
    for (std::size_t s = 0; s < n; ++s) {
        double binom = 1.0;
        for (std::size_t k = 1; k <= s; ++k)
            binom = binom * static_cast<double>(n - 1 - s + k) / static_cast<double>(k);
        weight[s] = 1.0 / (static_cast<double>(n) * binom);
    }
    std::vector<double> phi(n, 0.0);
    for (std::size_t mask = 0; mask < subsets; ++mask) {
        const auto size = static_cast<std::size_t>(std::popcount(mask));
        for (std::size_t i = 0; i < n; ++i) {
            if ((mask >> i) & 1u) continue;
            phi[i] += weight[size] * (v[mask | (std::size_t{1} << i)] - v[mask]);
        }
    }
    return make_attribution(game, std::move(phi), v[0], v[subsets - 1]);
}

Attribution shapley_sampled(const CoalitionGame& game, std::size_t permutations, std::uint64_t seed) {
    check_game(game);
    if (permutations == 0) throw InvalidArgument("shapley_sampled: need at least one permutation");
    const std::size_t n = game.n_players;
    std::unordered_map<Coalition, double> cache;
    const auto fill = [&](std::vector<Coalition>& pending) {
        if (pending.empty()) return;
        const auto values = game.evaluate(pending);
        for (std::size_t k = 0; k < pending.size(); ++k) cache.emplace(std::move(pending[k]), values[k]);
        pending.clear();
    };

    std::vector<Coalition> pending;
    {
        Coalition empty(n, false), full(n, true);
        pending.push_back(empty);
        if (n > 0) pending.push_back(full);
        fill(pending);
    }

    std::vector<double> phi(n, 0.0);
    std::vector<std::vector<std::size_t>> orders;
    std::unordered_set<Coalition> queued;
    for (std::size_t start = 0; start < permutations; start += kPermutationChunk) {
        const std::size_t end = std::min(permutations, start + kPermutationChunk);
        orders.clear();
        for (std::size_t t = start; t < end; ++t) {
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), std::size_t{0});
            Rng rng(derive_seed(seed, t));
            rng.shuffle(std::span<std::size_t>(order));
            Coalition c(n, false);
            for (const auto p : order) {
                c[p] = true;
                if (!cache.contains(c) && queued.insert(c).second) pending.push_back(c);
            }
            orders.push_back(std::move(order));
        }
        fill(pending);
        queued.clear();
        for (const auto& order : orders) {
            Coalition c(n, false);
            double prev = cache.at(c);
            for (const auto p : order) {
                c[p] = true;
                const double cur = cache.at(c);
                phi[p] += cur - prev;
                prev = cur;
            }
        }
    }
    for (auto& x : phi) x /= static_cast<double>(permutations);
    return make_attribution(game, std::move(phi), cache.at(Coalition(n, false)), cache.at(Coalition(n, true)));
}

ProbabilityModel mlp_probabilities(const model::ModelParams& params, const model::Architecture& arch) {
    return [params, arch](const embed::FeatureMatrix& x) -> Eigen::MatrixXd {
        return model::predict_proba(params, x, arch).cast<double>();
    };
}

std::vector<float> segment_baseline(const embed::Dataset& training) {
    if (training.features.rows() == 0) throw InvalidArgument("segment_baseline: empty training set");
    const Eigen::RowVectorXd mean = training.features.cast<double>().colwise().mean();
    std::vector<float> out(static_cast<std::size_t>(mean.size()));
    for (Eigen::Index i = 0; i < mean.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(mean[i]);
    return out;
}

Attribution explain_feature_groups(const ProbabilityModel& model, std::span<const float> fused,
                                   const embed::Layout& layout, std::span<const float> baseline,
                                   std::optional<StanceLabel> target_class, std::string target_id) {
    std::size_t offset = 0;
    for (const auto& seg : layout) {
        if (seg.offset != offset) throw InvalidArgument("explain_feature_groups: layout is not contiguous");
        offset += seg.length;
    }
    if (offset != fused.size() || baseline.size() != fused.size())
        throw InvalidArgument("explain_feature_groups: layout covers " + std::to_string(offset) +
                              " values but the input has " + std::to_string(fused.size()) + " and the baseline " +
                              std::to_string(baseline.size()));
    if (layout.empty()) throw InvalidArgument("explain_feature_groups: empty layout");

    const auto cols = static_cast<Eigen::Index>(fused.size());
    embed::FeatureMatrix full(1, cols);
    for (Eigen::Index c = 0; c < cols; ++c) full(0, c) = fused[static_cast<std::size_t>(c)];
    const StanceLabel target = resolve_target(model, full, target_class);
    const auto column = static_cast<Eigen::Index>(target);

    CoalitionGame game;
    game.n_players = layout.size();
    for (const auto& seg : layout) game.player_names.push_back(seg.name);
    game.batch_value = [&](std::span<const Coalition> coalitions) {
        embed::FeatureMatrix x(static_cast<Eigen::Index>(coalitions.size()), cols);
        for (std::size_t r = 0; r < coalitions.size(); ++r) {
            const auto row = static_cast<Eigen::Index>(r);
            for (std::size_t s = 0; s < layout.size(); ++s) {
                const auto& src = coalitions[r][s] ? fused : baseline;
                for (std::size_t k = layout[s].offset; k < layout[s].offset + layout[s].length; ++k)
                    x(row, static_cast<Eigen::Index>(k)) = src[k];
            }
        }
        const Eigen::MatrixXd p = model(x);
        std::vector<double> out(coalitions.size());
        for (std::size_t r = 0; r < coalitions.size(); ++r) out[r] = p(static_cast<Eigen::Index>(r), column);
        return out;
    };
    Attribution a = shapley_exact(game);
    a.unit = Unit::FeatureGroup;
    a.target = std::move(target_id);
    a.target_class = target;
    return a;
}

TokenEmbedder hashing_token_embedder(const corpus::RawPost& post, const corpus::CategoricalSchema& schema,
                                     const embed::FeatureSelection& selection, embed::HashingParams tweet_hashing,
                                     std::optional<std::span<const float>> description_row) {
    if (!selection.tweet) throw InvalidArgument("token explanations need the tweet segment in the feature selection");
    if (tweet_hashing.dim < 2) throw InvalidArgument("token explanations need a hashing embedder with dim >= 2");
    std::optional<std::vector<float>> desc;
    if (description_row) desc.emplace(description_row->begin(), description_row->end());
    return [post, schema, selection, tweet_hashing, desc](std::span<const std::string> kept) {
        const auto tweet = embed::hash_embed_tokens(kept, tweet_hashing.dim, tweet_hashing.seed);
        std::optional<std::span<const float>> d;
        if (desc) d = std::span<const float>(*desc);
        return embed::assemble_features(post, std::span<const float>(tweet), d, schema, selection).values;
    };
}

std::vector<std::string> explanation_tokens(const corpus::RawPost& post) {
    return embed::tokenize(corpus::sanitize_text(post.text));
}

Attribution explain_tokens(const ProbabilityModel& model, const corpus::RawPost& post,
                           const TokenEmbedder& embedder, std::size_t permutations, std::uint64_t seed,
                           std::optional<StanceLabel> target_class) {
    const auto tokens = explanation_tokens(post);
    if (tokens.empty()) throw InvalidArgument("explain_tokens: post " + post.id + " has no tokens");

    const auto build = [&](std::span<const Coalition> coalitions) {
        std::vector<std::vector<float>> rows;
        rows.reserve(coalitions.size());
        std::vector<std::string> kept;
        for (const auto& c : coalitions) {
            kept.clear();
            for (std::size_t i = 0; i < tokens.size(); ++i)
                if (c[i]) kept.push_back(tokens[i]);
            rows.push_back(embedder(kept));
        }
        const auto cols = static_cast<Eigen::Index>(rows.empty() ? 0 : rows.front().size());
        embed::FeatureMatrix x(static_cast<Eigen::Index>(rows.size()), cols);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (static_cast<Eigen::Index>(rows[r].size()) != cols)
                throw InvalidArgument("explain_tokens: embedder returned rows of different widths");
            for (Eigen::Index c = 0; c < cols; ++c) x(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
        }
        return x;
    };

    const Coalition all(tokens.size(), true);
    const StanceLabel target = resolve_target(model, build(std::span<const Coalition>(&all, 1)), target_class);
    const auto column = static_cast<Eigen::Index>(target);

    CoalitionGame game;
    game.n_players = tokens.size();
    game.player_names = tokens;
    game.batch_value = [&](std::span<const Coalition> coalitions) {
        std::vector<double> out;
        out.reserve(coalitions.size());
        for (std::size_t start = 0; start < coalitions.size(); start += kChunk) {
            const auto part = coalitions.subspan(start, std::min(kChunk, coalitions.size() - start));
            const Eigen::MatrixXd p = model(build(part));
            for (Eigen::Index r = 0; r < p.rows(); ++r) out.push_back(p(r, column));
        }
        return out;
    };
    Attribution a = shapley_sampled(game, permutations, seed);
    a.unit = Unit::Token;
    a.target = post.id;
    a.target_class = target;
    sort_by_magnitude(a);
    return a;
}

namespace {

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string html_escape(const std::string& s) {
    std::string out;
    for (const char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

void write_attribution_csv(std::ostream& out, const Attribution& a) {
    out << "# target=" << a.target << ",class=" << corpus::to_string(a.target_class)
        << ",unit=" << (a.unit == Unit::Token ? "token" : "feature_group") << ",v_empty=" << number(a.baseline_value)
        << ",v_full=" << number(a.full_value) << '\n';
    out << "rank,name,phi\n";
    for (std::size_t k = 0; k < a.values.size(); ++k)
        out << (k + 1) << ',' << csv_escape(a.values[k].first) << ',' << number(a.values[k].second) << '\n';
}

void write_attribution_html(std::ostream& out, const Attribution& a) {
    double max_abs = 0.0;
    for (const auto& [name, phi] : a.values) max_abs = std::max(max_abs, std::abs(phi));
    std::vector<std::size_t> by_player(a.values.size());
    for (std::size_t k = 0; k < a.values.size(); ++k) {
        const std::size_t p = k < a.player_index.size() ? a.player_index[k] : k;
        if (p >= by_player.size()) throw InvalidArgument("attribution player index out of range");
        by_player[p] = k;
    }
    const double toward_pro = a.target_class == StanceLabel::Pro ? 1.0 : -1.0;
    out << "<div class=\"covexplain-attribution\" data-target=\"" << html_escape(a.target) << "\" data-class=\""
        << corpus::to_string(a.target_class) << "\">";
    for (std::size_t p = 0; p < by_player.size(); ++p) {
        const auto& [name, phi] = a.values[by_player[p]];
        const double opacity = max_abs > 0.0 ? std::abs(phi) / max_abs : 0.0;
        const bool pro = phi * toward_pro > 0.0;
        char style[96];
        std::snprintf(style, sizeof(style), "background-color:rgba(%s,%.3f)", pro ? "30,90,220" : "220,40,40",
                      opacity);
        if (p > 0) out << ' ';
        out << "<span style=\"" << style << "\" title=\"phi=" << number(phi) << "\">" << html_escape(name)
            << "</span>";
    }
    out << "</div>\n";
}

}  // namespace covexplain::explain
