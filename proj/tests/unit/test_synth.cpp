#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "covexplain/baselines.hpp"
#include "covexplain/embed.hpp"
#include "covexplain/error.hpp"
#include "covexplain/synth.hpp"

using namespace covexplain;
using namespace covexplain::synth;
using corpus::StanceLabel;

namespace {

bool has_word(const std::string& text, std::string_view word) {
    for (const auto& w : embed::tokenize(text))
        if (w == word) return true;
    return false;
}

std::string dump(const corpus::Corpus& c) {
    std::ostringstream out;
    corpus::write_records(out, c.posts);
    return out.str();
}

// Fits ridge on the hashed tweet text of the first half, scores the second.
double text_holdout_accuracy(const corpus::Corpus& c) {
    const std::size_t dim = 1024;
    const auto tweets = embed::embed_corpus(c, embed::TextField::Tweet, dim, 1);
    embed::FeatureSelection sel;
    sel.tweet = true;
    std::vector<std::size_t> train(c.posts.size() / 2), test(c.posts.size() - train.size());
    std::iota(train.begin(), train.end(), std::size_t{0});
    std::iota(test.begin(), test.end(), train.size());
    const auto tr = embed::build_dataset(c, train, &tweets, nullptr, sel);
    const auto te = embed::build_dataset(c, test, &tweets, nullptr, sel);
    const auto m = baselines::fit_linear(tr.features.cast<double>(), tr.labels, 1.0);
    const auto pred = baselines::predict(m, te.features.cast<double>());
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == te.labels[i];
    return double(hit) / pred.size();
}

}  // namespace

TEST_CASE("class balance and signal incidence match the spec") {
    SignalSpec spec;
    spec.n_records = 5000;
    spec.class_balance = 0.3;
    spec.text_signal_strength = 0.4;
    spec.desc_signal_strength = 0.2;
    spec.offline_signal["state"] = CategoricalSignal{{{"WY", 1.0}}, {{"VT", 2.0}, {"ME", 1.0}}, 0.5};
    spec.seed = 8;
    const auto c = generate(spec);
    REQUIRE(c.posts.size() == 5000);

    const double n = 5000;
    const auto within = [&](double count, double p) {
        return std::abs(count - n * p) <= 4.0 * std::sqrt(n * p * (1 - p));
    };
    std::size_t pro = 0, text = 0, desc = 0, state = 0, wrong_class = 0;
    for (const auto& p : c.posts) {
        const bool is_pro = p.label == StanceLabel::Pro;
        pro += is_pro;
        const bool t_anti = has_word(p.text, kAntiTextToken), t_pro = has_word(p.text, kProTextToken);
        const bool d_anti = has_word(p.description, kAntiDescriptionToken);
        const bool d_pro = has_word(p.description, kProDescriptionToken);
        const bool s_sig = p.state == "WY" || p.state == "VT" || p.state == "ME";
        text += t_anti || t_pro;
        desc += d_anti || d_pro;
        state += s_sig;
        wrong_class += (is_pro && (t_anti || d_anti || p.state == "WY")) ||
                       (!is_pro && (t_pro || d_pro || p.state == "VT" || p.state == "ME"));
        CHECK(p.timestamp >= spec.time_start);
        CHECK(p.timestamp <= spec.time_end);
    }
    CHECK(within(pro, 0.3));
    CHECK(within(text, 0.4));
    CHECK(within(desc, 0.2));
    CHECK(within(state, 0.5));
    CHECK(wrong_class == 0);
    CHECK(c.schema.contains("state"));
    CHECK(c.schema.feature("state").index_of("WY").has_value());
}

TEST_CASE("disjoint carriers never overlap") {
    SignalSpec spec;
    spec.n_records = 3000;
    spec.text_signal_strength = 0.3;
    spec.desc_signal_strength = 0.3;
    spec.offline_signal["gender"] = CategoricalSignal{{{"male", 1.0}}, {{"female", 1.0}}, 0.3};
    spec.disjoint_carriers = true;
    spec.seed = 2;
    std::size_t none = 0;
    for (const auto& p : generate(spec).posts) {
        const int carriers = (has_word(p.text, kAntiTextToken) || has_word(p.text, kProTextToken)) +
                             (has_word(p.description, kAntiDescriptionToken) ||
                              has_word(p.description, kProDescriptionToken)) +
                             (p.gender != "unknown");
        CHECK(carriers <= 1);
        none += carriers == 0;
    }
    CHECK(std::abs(double(none) - 300.0) <= 4 * std::sqrt(3000 * 0.1 * 0.9));
}

TEST_CASE("generation is a pure function of the spec") {
    SignalSpec spec;
    spec.n_records = 400;
    spec.text_signal_strength = 0.5;
    spec.seed = 77;
    CHECK(dump(generate(spec)) == dump(generate(spec)));
    auto other = spec;
    other.seed = 78;
    CHECK(dump(generate(spec)) != dump(generate(other)));
    const auto c = generate(spec);
    CHECK(c.provenance == "synth;seed=77;n=400");
}

TEST_CASE("full text signal is linearly recoverable") {
    SignalSpec spec;
    spec.n_records = 1000;
    spec.text_signal_strength = 1.0;
    spec.seed = 4;
    CHECK(text_holdout_accuracy(generate(spec)) == 1.0);
}

TEST_CASE("no signal leaves chance accuracy") {
    double total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SignalSpec spec;
        spec.n_records = 1000;
        spec.seed = seed;
        total += text_holdout_accuracy(generate(spec));
    }
    CHECK(std::abs(total / 10 - 0.5) <= 0.05);
}

TEST_CASE("planted fusion spec and its bounds") {
    const auto spec = planted_fusion_spec();
    CHECK(spec.n_records == 4000);
    CHECK(spec.text_signal_strength == 0.60);
    CHECK(spec.desc_signal_strength == 0.0);
    REQUIRE(spec.offline_signal.contains("state"));
    CHECK(spec.offline_signal.at("state").strength == 0.25);
    CHECK(spec.class_balance == 0.5);
    CHECK(spec.disjoint_carriers);
    CHECK(spec == planted_fusion_spec());

    const auto b = bayes_bounds(spec);
    CHECK(b.offline == doctest::Approx(0.25 + 0.75 * 0.5));
    CHECK(b.online == doctest::Approx(0.60 + 0.40 * 0.5));
    CHECK(b.hybrid == doctest::Approx(0.85 + 0.15 * 0.5));
    CHECK(b.offline == doctest::Approx(0.625));
    CHECK(b.online == doctest::Approx(0.80));
    CHECK(b.hybrid == doctest::Approx(0.925));

    SignalSpec skewed;
    skewed.class_balance = 0.7;
    skewed.text_signal_strength = 0.5;
    skewed.disjoint_carriers = true;
    CHECK(bayes_bounds(skewed).online == doctest::Approx(0.5 + 0.5 * 0.7));
    CHECK(bayes_bounds(skewed).offline == doctest::Approx(0.7));
    skewed.disjoint_carriers = false;
    CHECK_THROWS_AS(bayes_bounds(skewed), InvalidArgument);
}

TEST_CASE("paired corpora: twins differ only in the planted signal") {
    const auto c = generate(planted_fusion_spec());
    REQUIRE(c.posts.size() == 4000);
    std::size_t text = 0, state = 0;
    std::int64_t last = -1;
    for (std::size_t k = 0; k < 2000; ++k) {
        const auto& a = c.posts[2 * k];
        const auto& b = c.posts[2 * k + 1];
        REQUIRE(a.label == StanceLabel::Anti);
        REQUIRE(b.label == StanceLabel::Pro);
        CHECK(a.timestamp == b.timestamp);
        CHECK(a.timestamp > last);
        last = a.timestamp;
        CHECK(a.description == b.description);
        CHECK(a.race == b.race);
        CHECK(a.gender == b.gender);
        const bool tx = has_word(a.text, kAntiTextToken);
        CHECK(tx == has_word(b.text, kProTextToken));
        const bool st = a.state == "WY";
        CHECK(st == (b.state == "VT"));
        CHECK(!(tx && st));
        if (!st) CHECK(a.state == b.state);
        if (!tx) CHECK(a.text == b.text);
        text += tx;
        state += st;
        if ((k + 1) % kPairBlock == 0) {
            CHECK(text * kPairBlock == (k + 1) * 12);
            CHECK(state * kPairBlock == (k + 1) * 5);
        }
    }
}

TEST_CASE("spec validation") {
    const auto bad = [](auto mutate) {
        SignalSpec s;
        mutate(s);
        return std::make_pair(
            [s] {
                try {
                    generate(s);
                } catch (const InvalidArgument&) {
                    return true;
                }
                return false;
            }(),
            0);
    };
    CHECK(bad([](SignalSpec& s) { s.n_records = 0; }).first);
    CHECK(bad([](SignalSpec& s) { s.text_signal_strength = 1.5; }).first);
    CHECK(bad([](SignalSpec& s) { s.class_balance = 1.0; }).first);
    CHECK(bad([](SignalSpec& s) { s.time_end = s.time_start - 1; }).first);
    CHECK(bad([](SignalSpec& s) {
              s.offline_signal["race"] = CategoricalSignal{{{"asian", 1}, {"black", 1}}, {{"hispanic", 1}, {"white", 1}}, 0.2};
          }).first);
    CHECK(bad([](SignalSpec& s) { s.offline_signal["zodiac"] = CategoricalSignal{{{"a", 1}}, {{"b", 1}}, 0.1}; }).first);
    CHECK(bad([](SignalSpec& s) {
              s.disjoint_carriers = true;
              s.text_signal_strength = 0.7;
              s.desc_signal_strength = 0.7;
          }).first);
    CHECK(bad([](SignalSpec& s) { s.paired = true; }).first);
    CHECK(bad([](SignalSpec& s) {
              s.paired = true;
              s.disjoint_carriers = true;
              s.n_records = 11;
          }).first);
    CHECK_FALSE(bad([](SignalSpec& s) { s.n_records = 10; }).first);
}
