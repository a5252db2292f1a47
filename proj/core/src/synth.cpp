#include "covexplain/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "covexplain/error.hpp"
#include "covexplain/random.hpp"

namespace covexplain::synth {

using corpus::StanceLabel;

namespace {

const std::vector<std::string> kStates = {
    "AK", "AL", "AR", "AZ", "CA", "CO", "CT", "DE", "FL", "GA", "HI", "IA", "ID", "IL", "IN", "KS", "KY",
    "LA", "MA", "MD", "ME", "MI", "MN", "MO", "MS", "MT", "NC", "ND", "NE", "NH", "NJ", "NM", "NV", "NY",
    "OH", "OK", "OR", "PA", "RI", "SC", "SD", "TN", "TX", "UT", "VA", "VT", "WA", "WI", "WV", "WY"};
const std::vector<std::string> kRaces = {"asian", "black", "hispanic", "white"};
const std::vector<std::string> kGenders = {"female", "male", "unknown"};

const std::vector<std::string_view> kTextWords = {
    "the", "shot", "today", "got", "my", "second", "dose", "clinic", "line", "waiting", "news", "people",
    "county", "health", "week", "booster", "appointment", "arm", "sore", "family", "pharmacy", "update",
    "mask", "school", "work", "cases", "numbers", "report", "friends", "wait", "finally", "again", "think",
    "hear", "read", "about", "study", "trial", "doctor", "nurse", "hospital", "state", "city", "local",
    "open", "closed", "new", "rules", "travel", "summer", "winter", "spring", "fall", "mandate", "policy",
    "data", "science", "risk", "safe", "question", "answer", "online", "post", "video", "story", "thread",
    "morning", "evening", "line", "site", "drive", "through", "walk", "in", "free", "paid", "time", "long",
    "short", "back", "home", "office", "mom", "dad", "kids", "neighbors", "town", "event", "today's", "day"};
const std::vector<std::string_view> kDescriptionWords = {
    "mother", "father", "teacher", "engineer", "student", "writer", "runner", "coffee", "dogs", "cats",
    "music", "books", "travel", "gardener", "veteran", "nurse", "coach", "fan", "sports", "faith", "art",
    "photographer", "chef", "baker", "hiker", "gamer", "retired", "proud", "grandma", "grandpa", "husband",
    "wife", "opinions", "mine", "views", "own", "lover", "of", "life", "news", "junkie", "tech", "science",
    "history", "nerd", "podcast", "host", "small", "business", "owner"};

std::vector<std::string> minus(const std::vector<std::string>& base, const std::set<std::string>& reserved) {
    std::vector<std::string> out;
    for (const auto& v : base)
        if (!reserved.contains(v)) out.push_back(v);
    return out;
}

std::set<std::string> reserved_categories(const CategoricalSignal& signal) {
    std::set<std::string> out;
    for (const auto& [v, w] : signal.anti) out.insert(v);
    for (const auto& [v, w] : signal.pro) out.insert(v);
    return out;
}

std::string pick(Rng& rng, const std::vector<std::string>& values) {
    return values[static_cast<std::size_t>(rng.below(values.size()))];
}

std::string draw_weighted(Rng& rng, const std::vector<std::pair<std::string, double>>& dist) {
    double total = 0.0;
    for (const auto& [v, w] : dist) total += w;
    double u = rng.uniform() * total;
    for (const auto& [v, w] : dist) {
        if (u < w) return v;
        u -= w;
    }
    return dist.back().first;
}

std::vector<std::string> filler(Rng& rng, const std::vector<std::string_view>& vocab, std::size_t lo,
                                std::size_t hi, bool web_tokens) {
    const std::size_t len = lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
    std::vector<std::string> words;
    for (std::size_t i = 0; i < len; ++i) words.emplace_back(vocab[static_cast<std::size_t>(rng.below(vocab.size()))]);
    if (web_tokens) {
        if (rng.bernoulli(0.15)) words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), "#covid19");
        if (rng.bernoulli(0.10)) {
            char url[48];
            std::snprintf(url, sizeof(url), "https://t.co/x%06llu",
                          static_cast<unsigned long long>(rng.below(1000000)));
            words.emplace_back(url);
        }
    }
    return words;
}

std::vector<std::string> words_of(const std::string& text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto end = std::min(text.find(' ', i), text.size());
        if (end > i) out.push_back(text.substr(i, end - i));
        i = end + 1;
    }
    return out;
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

std::string with_token(std::vector<std::string> words, std::size_t position, std::string_view token) {
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(std::min(position, words.size())), std::string(token));
    return join(words);
}

// Carrier slots: 0 text, 1 description, 2.. offline features in map order, last = none.
struct Carriers {
    std::vector<std::string> offline_names;
    std::vector<double> shares;
};

Carriers carrier_shares(const SignalSpec& spec) {
    Carriers c;
    c.shares.push_back(spec.text_signal_strength);
    c.shares.push_back(spec.desc_signal_strength);
    double used = spec.text_signal_strength + spec.desc_signal_strength;
    for (const auto& [name, sig] : spec.offline_signal) {
        c.offline_names.push_back(name);
        c.shares.push_back(sig.strength);
        used += sig.strength;
    }
    c.shares.push_back(std::max(0.0, 1.0 - used));
    return c;
}

// Largest-remainder apportionment of `count` slots to the given shares.
std::vector<std::size_t> apportion(const std::vector<double>& shares, std::size_t count) {
    std::vector<std::size_t> quota(shares.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t given = 0;
    for (std::size_t i = 0; i < shares.size(); ++i) {
        const double exact = shares[i] * static_cast<double>(count);
        quota[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        given += quota[i];
        rem.emplace_back(exact - static_cast<double>(quota[i]), i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; given < count && k < rem.size(); ++k, ++given) ++quota[rem[k].second];
    return quota;
}

std::size_t draw_carrier(Rng& rng, const std::vector<double>& shares) {
    double u = rng.uniform();
    for (std::size_t i = 0; i + 1 < shares.size(); ++i) {
        if (u < shares[i]) return i;
        u -= shares[i];
    }
    return shares.size() - 1;
}

std::string& offline_slot(corpus::RawPost& post, std::string_view feature) {
    if (feature == corpus::kState) return post.state;
    if (feature == corpus::kRace) return post.race;
    if (feature == corpus::kRacePic) return post.race_pic;
    return post.gender;
}

std::string record_id(std::size_t index, char suffix = '\0') {
    char buf[32];
    if (suffix) std::snprintf(buf, sizeof(buf), "p%06zu%c", index, suffix);
    else std::snprintf(buf, sizeof(buf), "s%06zu", index);
    return buf;
}

}  // namespace

const std::vector<std::string>& background_categories(std::string_view feature) {
    if (feature == corpus::kState) return kStates;
    if (feature == corpus::kRace || feature == corpus::kRacePic) return kRaces;
    if (feature == corpus::kGender) return kGenders;
    throw InvalidArgument("unknown offline feature \"" + std::string(feature) + "\"");
}

void SignalSpec::validate() const {
    const auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (n_records == 0) throw InvalidArgument("synth: n_records must be positive");
    if (!prob(text_signal_strength) || !prob(desc_signal_strength))
        throw InvalidArgument("synth: signal strengths must lie in [0, 1]");
    if (!(class_balance > 0.0 && class_balance < 1.0)) throw InvalidArgument("synth: class_balance must lie in (0, 1)");
    if (time_end < time_start || time_start < 0) throw InvalidArgument("synth: empty or negative time range");
    double total = text_signal_strength + desc_signal_strength;
    for (const auto& [name, sig] : offline_signal) {
        const auto& bg = background_categories(name);
        if (!prob(sig.strength)) throw InvalidArgument("synth: strength for " + name + " must lie in [0, 1]");
        if (sig.anti.empty() || sig.pro.empty())
            throw InvalidArgument("synth: signal for " + name + " needs categories for both classes");
        for (const auto* dist : {&sig.anti, &sig.pro})
            for (const auto& [v, w] : *dist)
                if (!(w > 0.0) || v.empty()) throw InvalidArgument("synth: bad category weight for " + name);
        if (minus(bg, reserved_categories(sig)).empty())
            throw InvalidArgument("synth: signal for " + name + " leaves no background categories");
        total += sig.strength;
    }
    if (disjoint_carriers && total > 1.0 + 1e-12)
        throw InvalidArgument("synth: disjoint carrier shares sum to more than 1");
    if (paired) {
        if (!disjoint_carriers) throw InvalidArgument("synth: paired mode needs disjoint carriers");
        if (class_balance != 0.5) throw InvalidArgument("synth: paired mode needs class_balance 0.5");
        if (n_records % 2 != 0) throw InvalidArgument("synth: paired mode needs an even record count");
        if (static_cast<std::uint64_t>(time_end - time_start) + 1 < n_records / 2)
            throw InvalidArgument("synth: time range too short for distinct pair timestamps");
    }
}

corpus::Corpus generate(const SignalSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    std::map<std::string, std::vector<std::string>, std::less<>> background;
    for (const auto name : {corpus::kState, corpus::kRace, corpus::kRacePic, corpus::kGender}) {
        const auto it = spec.offline_signal.find(name);
        background[std::string(name)] = it == spec.offline_signal.end()
                                            ? background_categories(name)
                                            : minus(background_categories(name), reserved_categories(it->second));
    }
    const Carriers carriers = carrier_shares(spec);
    const std::size_t none_slot = carriers.shares.size() - 1;

    // Fills the shared, signal-free part of a record.
    const auto base_record = [&](Rng& r) {
        corpus::RawPost p;
        auto words = filler(r, kTextWords, 8, 14, true);
        p.text = join(words);
        if (!r.bernoulli(0.05)) p.description = join(filler(r, kDescriptionWords, 4, 9, false));
        for (const auto& [name, values] : background) offline_slot(p, name) = pick(r, values);
        return p;
    };
    const auto plant = [&](corpus::RawPost& p, std::size_t slot, StanceLabel label, std::size_t text_pos,
                           std::size_t desc_pos, Rng& r) {
        const bool anti = label == StanceLabel::Anti;
        if (slot == 0) {
            auto words = words_of(p.text);
            p.text = with_token(std::move(words), text_pos, anti ? kAntiTextToken : kProTextToken);
        } else if (slot == 1) {
            auto words = words_of(p.description);
            p.description = with_token(std::move(words), desc_pos, anti ? kAntiDescriptionToken : kProDescriptionToken);
        } else if (slot != none_slot) {
            const auto& name = carriers.offline_names[slot - 2];
            const auto& sig = spec.offline_signal.find(name)->second;
            offline_slot(p, name) = draw_weighted(r, anti ? sig.anti : sig.pro);
        }
    };

    corpus::Corpus out;
    const std::int64_t span = spec.time_end - spec.time_start;
    const auto draw_time = [&](Rng& r) {
        return spec.time_start + static_cast<std::int64_t>(r.below(static_cast<std::uint64_t>(span) + 1));
    };

    if (spec.paired) {
        const std::size_t pairs = spec.n_records / 2;
        std::vector<std::size_t> slots;
        slots.reserve(pairs);
        for (std::size_t start = 0; start < pairs; start += kPairBlock) {
            const std::size_t size = std::min(kPairBlock, pairs - start);
            const auto quota = apportion(carriers.shares, size);
            std::vector<std::size_t> block;
            for (std::size_t s = 0; s < quota.size(); ++s) block.insert(block.end(), quota[s], s);
            rng.shuffle(std::span<std::size_t>(block));
            slots.insert(slots.end(), block.begin(), block.end());
        }
        std::vector<std::int64_t> times(pairs);
        for (auto& t : times) t = draw_time(rng);
        std::sort(times.begin(), times.end());
        for (std::size_t k = 1; k < pairs; ++k) times[k] = std::max(times[k], times[k - 1] + 1);
        for (std::size_t k = pairs; k-- > 0;)
            times[k] = std::min(times[k], spec.time_end - static_cast<std::int64_t>(pairs - 1 - k));

        for (std::size_t k = 0; k < pairs; ++k) {
            corpus::RawPost base = base_record(rng);
            base.timestamp = times[k];
            const std::size_t text_pos = static_cast<std::size_t>(rng.below(words_of(base.text).size() + 1));
            const std::size_t desc_pos = static_cast<std::size_t>(rng.below(words_of(base.description).size() + 1));
            Rng twin_rng(derive_seed(spec.seed, k));
            for (const auto label : {StanceLabel::Anti, StanceLabel::Pro}) {
                corpus::RawPost p = base;
                p.label = label;
                p.id = record_id(k, label == StanceLabel::Anti ? 'a' : 'b');
                plant(p, slots[k], label, text_pos, desc_pos, twin_rng);
                out.posts.push_back(std::move(p));
            }
        }
    } else {
        for (std::size_t i = 0; i < spec.n_records; ++i) {
            corpus::RawPost p = base_record(rng);
            p.id = record_id(i);
            p.timestamp = draw_time(rng);
            p.label = rng.bernoulli(spec.class_balance) ? StanceLabel::Pro : StanceLabel::Anti;
            std::vector<std::size_t> active;
            if (spec.disjoint_carriers) {
                active.push_back(draw_carrier(rng, carriers.shares));
            } else {
                for (std::size_t s = 0; s < none_slot; ++s)
                    if (rng.bernoulli(carriers.shares[s])) active.push_back(s);
            }
            for (const auto slot : active) {
                const std::size_t text_pos = static_cast<std::size_t>(rng.below(words_of(p.text).size() + 1));
                const std::size_t desc_pos = static_cast<std::size_t>(rng.below(words_of(p.description).size() + 1));
                plant(p, slot, p.label, text_pos, desc_pos, rng);
            }
            out.posts.push_back(std::move(p));
        }
    }

    std::vector<corpus::CategoricalFeature> features;
    for (const auto name : {corpus::kState, corpus::kRace, corpus::kRacePic, corpus::kGender}) {
        std::set<std::string> cats(background[std::string(name)].begin(), background[std::string(name)].end());
        if (const auto it = spec.offline_signal.find(name); it != spec.offline_signal.end()) {
            const auto reserved = reserved_categories(it->second);
            cats.insert(reserved.begin(), reserved.end());
        }
        features.push_back(corpus::CategoricalFeature{std::string(name), {cats.begin(), cats.end()},
                                                      corpus::UnknownPolicy::ExtraSlot});
    }
    out.schema = corpus::CategoricalSchema(std::move(features));
    out.provenance = "synth;seed=" + std::to_string(spec.seed) + ";n=" + std::to_string(spec.n_records) +
                     (spec.paired ? ";paired" : "");
    return out;
}

SignalSpec planted_fusion_spec() {
    SignalSpec spec;
    spec.n_records = 4000;
    spec.text_signal_strength = 0.60;
    spec.desc_signal_strength = 0.0;
    spec.offline_signal[std::string(corpus::kState)] = CategoricalSignal{{{"WY", 1.0}}, {{"VT", 1.0}}, 0.25};
    spec.class_balance = 0.5;
    spec.seed = 20210101;
    spec.disjoint_carriers = true;
    spec.paired = true;
    return spec;
}

BayesBounds bayes_bounds(const SignalSpec& spec) {
    spec.validate();
    if (!spec.disjoint_carriers) throw InvalidArgument("bayes_bounds: needs disjoint carriers");
    for (const auto& [name, sig] : spec.offline_signal) {
        std::set<std::string> anti;
        for (const auto& [v, w] : sig.anti) anti.insert(v);
        for (const auto& [v, w] : sig.pro)
            if (anti.contains(v)) throw InvalidArgument("bayes_bounds: category " + v + " signals both classes");
    }
    const double prior = std::max(spec.class_balance, 1.0 - spec.class_balance);
    double offline = 0.0;
    for (const auto& [name, sig] : spec.offline_signal) offline += sig.strength;
    const double online = spec.text_signal_strength + spec.desc_signal_strength;
    const auto bound = [prior](double covered) { return covered + (1.0 - covered) * prior; };
    return BayesBounds{bound(offline), bound(online), bound(offline + online)};
}

}  // namespace covexplain::synth
