#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "covexplain/corpus.hpp"

namespace covexplain::synth {

inline constexpr std::string_view kAntiTextToken = "jabalpha";
inline constexpr std::string_view kProTextToken = "jabbeta";
inline constexpr std::string_view kAntiDescriptionToken = "bioalpha";
inline constexpr std::string_view kProDescriptionToken = "biobeta";

// Class-conditional category draw for one offline feature. Categories named
// here never occur as background values.
struct CategoricalSignal {
    std::vector<std::pair<std::string, double>> anti;
    std::vector<std::pair<std::string, double>> pro;
    double strength = 0.0;

    friend bool operator==(const CategoricalSignal&, const CategoricalSignal&) = default;
};

struct SignalSpec {
    std::size_t n_records = 1000;
    double text_signal_strength = 0.0;
    double desc_signal_strength = 0.0;
    std::map<std::string, CategoricalSignal, std::less<>> offline_signal;
    double class_balance = 0.5;  // probability of Pro
    std::int64_t time_start = 1609459200;
    std::int64_t time_end = 1640995199;
    std::uint64_t seed = 0;
    // At most one carrier per record; strengths become carrier shares and
    // must sum to at most 1.
    bool disjoint_carriers = false;
    // Records come as Anti/Pro twins that share the timestamp and every
    // attribute except the planted signal. Carrier shares are met exactly in
    // blocks of kPairBlock pairs. Requires disjoint carriers, balance 0.5 and
    // an even record count.
    bool paired = false;

    void validate() const;
    friend bool operator==(const SignalSpec&, const SignalSpec&) = default;
};

inline constexpr std::size_t kPairBlock = 20;

// Background category lists used when a feature carries no signal.
const std::vector<std::string>& background_categories(std::string_view feature);

corpus::Corpus generate(const SignalSpec& spec);

// Text on 60% of records, state on a disjoint 25%, nothing on the rest;
// 4,000 paired records.
SignalSpec planted_fusion_spec();

// Best achievable accuracy per modality when carriers are disjoint and each
// signal category belongs to one class: signal records are always
// recoverable, the rest only at the class prior.
struct BayesBounds {
    double offline = 0.0;
    double online = 0.0;
    double hybrid = 0.0;
};
BayesBounds bayes_bounds(const SignalSpec& spec);

}  // namespace covexplain::synth
