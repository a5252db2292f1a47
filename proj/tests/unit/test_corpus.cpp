#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <sstream>

#include "covexplain/corpus.hpp"
#include "covexplain/error.hpp"
#include "helpers.hpp"

using namespace covexplain;
using namespace covexplain::corpus;
using testutil::make_post;

namespace {

std::string record(const std::string& id, long ts, const std::string& gender, const std::string& label) {
    return "{\"id\":\"" + id + "\",\"timestamp\":" + std::to_string(ts) +
           ",\"text\":\"t\",\"description\":\"d\",\"state\":\"CA\",\"race\":\"white\",\"race_pic\":\"white\","
           "\"gender\":\"" + gender + "\",\"label\":\"" + label + "\"}\n";
}

Corpus corpus_with_timestamps(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_int_distribution<std::int64_t> ts(0, 50);
    Corpus c;
    for (std::size_t i = 0; i < n; ++i)
        c.posts.push_back(make_post("r" + std::to_string(i), ts(gen), i % 3 ? StanceLabel::Pro : StanceLabel::Anti));
    c.schema = infer_schema(c.posts);
    return c;
}

bool is_sub_multiset(const std::vector<RawPost>& sub, const std::vector<RawPost>& all) {
    std::map<std::string, int> counts;
    for (const auto& p : all) ++counts[p.id];
    for (const auto& p : sub)
        if (--counts[p.id] < 0) return false;
    return true;
}

}  // namespace

TEST_CASE("parse_records keeps file order and ids") {
    std::istringstream in(record("a", 3, "male", "pro") + record("b", 1, "female", "anti") + record("c", 2, "male", "pro"));
    const auto c = parse_records(in, SchemaMode::Infer);
    REQUIRE(c.posts.size() == 3);
    CHECK(c.posts[0].id == "a");
    CHECK(c.posts[1].id == "b");
    CHECK(c.posts[2].id == "c");
    CHECK(c.posts[1].label == StanceLabel::Anti);
    CHECK(c.count(StanceLabel::Pro) == 2);
}

TEST_CASE("duplicate ids are rejected by name") {
    std::istringstream in(record("t1", 1, "male", "pro") + record("t2", 1, "male", "pro") +
                          record("t3", 1, "male", "pro") + record("t1", 1, "male", "anti"));
    try {
        parse_records(in, SchemaMode::Infer);
        FAIL("expected an error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("\"t1\"") != std::string::npos);
        CHECK(std::string(e.what()).find("lines 1 and 4") != std::string::npos);
    }
}

TEST_CASE("malformed lines carry their line number") {
    std::istringstream in(record("a", 1, "male", "pro") + "{not json\n");
    try {
        parse_records(in, SchemaMode::Infer);
        FAIL("expected an error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).rfind("line 2:", 0) == 0);
    }
    std::istringstream bad_label(record("a", 1, "male", "neutral"));
    CHECK_THROWS_AS(parse_records(bad_label, SchemaMode::Infer), FormatError);
}

TEST_CASE("inferred schema sorts categories") {
    std::istringstream in(record("a", 1, "male", "pro") + record("b", 1, "female", "anti"));
    const auto c = parse_records(in, SchemaMode::Infer);
    CHECK(c.schema.feature("gender").categories == std::vector<std::string>{"female", "male"});
    CHECK(c.schema.features().size() == 4);
}

TEST_CASE("schema JSON round trip") {
    CategoricalSchema s({{"gender", {"female", "male", "unknown"}, UnknownPolicy::Reject},
                         {"state", {"CA", "NY"}, UnknownPolicy::ExtraSlot}});
    CHECK(CategoricalSchema::from_json(s.to_json()) == s);
    CHECK(CategoricalSchema::from_json(s.to_json(-1)) == s);
    CHECK_THROWS_AS(CategoricalSchema::from_json("{"), FormatError);
    CHECK_THROWS_AS(CategoricalSchema({{"g", {"a", "a"}}}), InvalidArgument);
}

TEST_CASE("given schema with reject policy refuses unseen values") {
    CategoricalSchema s({{"gender", {"female", "male"}, UnknownPolicy::Reject}});
    std::istringstream in(record("a", 1, "nonbinary", "pro"));
    CHECK_THROWS_AS(parse_records(in, SchemaMode::Given, s), InvalidArgument);
}

TEST_CASE("records survive write and parse") {
    std::vector<RawPost> posts{make_post("x\"1", 5, StanceLabel::Pro, "quote \" and \\ slash"),
                               make_post("x2", 7, StanceLabel::Anti, "üñí")};
    std::ostringstream out;
    write_records(out, posts);
    std::istringstream in(out.str());
    const auto back = parse_records(in, SchemaMode::Infer);
    REQUIRE(back.posts.size() == 2);
    CHECK(back.posts[0].id == posts[0].id);
    CHECK(back.posts[0].text == posts[0].text);
    CHECK(back.posts[1].text == posts[1].text);
    CHECK(back.posts[1].label == StanceLabel::Anti);
}

TEST_CASE("sanitize_text") {
    CHECK(sanitize_text("Get the shot #VaccinesWork https://t.co/x now") == "Get the shot <HASHTAG> <URL> now");
    CHECK(sanitize_text("") == "");
    CHECK(sanitize_text(sanitize_text("a #b c")) == sanitize_text("a #b c"));
    CHECK(sanitize_text("see http://a.b/c?d=1") == "see <URL>");
}

TEST_CASE("sanitize_text properties on random strings") {
    std::mt19937_64 gen(11);
    const std::vector<std::string> pieces{"#", "http://", "https://", "x", " ", "\t", "#tag", "a#b", "h", "ttp", "é", "\n"};
    std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
    for (int trial = 0; trial < 500; ++trial) {
        std::string s;
        for (int i = 0; i < 12; ++i) s += pieces[pick(gen)];
        const auto out = sanitize_text(s);
        CHECK(std::count(out.begin(), out.end(), '#') <= std::count(s.begin(), s.end(), '#'));
        CHECK(out.find("http://") == std::string::npos);
        CHECK(out.find("https://") == std::string::npos);
        CHECK(sanitize_text(out) == out);
    }
}

TEST_CASE("encode_onehot") {
    std::vector<std::string> states;
    for (int i = 0; i < 50; ++i) states.push_back("S" + std::to_string(i));
    const CategoricalSchema s({{"state", states, UnknownPolicy::Reject}, {"gender", {"female", "male", "unknown"}, UnknownPolicy::Reject}});

    auto p = make_post("a", 1, StanceLabel::Pro);
    p.gender = "male";
    p.state = "S7";
    CHECK(encode_onehot(p, s, {"gender"}) == std::vector<float>{0, 1, 0});

    const auto both = encode_onehot(p, s, {"state", "gender"});
    CHECK(both.size() == 53);
    CHECK(std::count(both.begin(), both.end(), 1.0f) == 2);
    CHECK(both[7] == 1.0f);
    CHECK(onehot_width(s, {"state", "gender"}) == 53);

    CategoricalSchema open({{"gender", {"female", "male", "unknown"}, UnknownPolicy::ExtraSlot}});
    p.gender = "nonbinary";
    CHECK(encode_onehot(p, open, {"gender"}) == std::vector<float>{0, 0, 0, 1});
    CHECK_THROWS_AS(encode_onehot(p, s, {"gender"}), InvalidArgument);
    CHECK_THROWS_AS(encode_onehot(p, s, {"race"}), InvalidArgument);
}

TEST_CASE("one-hot blocks have unit mass") {
    std::mt19937_64 gen(5);
    const std::vector<std::string> g{"female", "male", "unknown", "other"};
    CategoricalSchema s({{"gender", {"female", "male", "unknown"}, UnknownPolicy::ExtraSlot},
                         {"race", {"asian", "black", "white"}, UnknownPolicy::ExtraSlot}});
    for (int i = 0; i < 100; ++i) {
        auto p = make_post("p", 1, StanceLabel::Pro);
        p.gender = g[gen() % g.size()];
        p.race = i % 2 ? "white" : "martian";
        const auto v = encode_onehot(p, s, {"gender", "race"});
        REQUIRE(v.size() == 8);
        float first = 0;
        float second = 0;
        for (std::size_t j = 0; j < 4; ++j) first += v[j];
        for (std::size_t j = 4; j < 8; ++j) second += v[j];
        CHECK(first == 1.0f);
        CHECK(second == 1.0f);
        for (const float x : v) CHECK((x == 0.0f || x == 1.0f));
    }
}

TEST_CASE("chronological_split examples") {
    Corpus c;
    for (int t = 100; t >= 1; --t) c.posts.push_back(make_post("id" + std::to_string(t), t, StanceLabel::Pro));
    const auto s = chronological_split(c, 10);
    REQUIRE(s.test_indices().size() == 10);
    std::vector<std::int64_t> ts;
    for (const auto i : s.test_indices()) ts.push_back(c.posts[i].timestamp);
    std::vector<std::int64_t> want(10);
    std::iota(want.begin(), want.end(), 91);
    CHECK(ts == want);
    CHECK(s.boundaries.front() == 1);
    CHECK(s.boundaries.back() == 100);

    Corpus small;
    for (int t = 0; t < 10; ++t) small.posts.push_back(make_post("s" + std::to_string(t), t, StanceLabel::Pro));
    const auto three = chronological_split(small, 3);
    CHECK(three.members[0].size() == 4);
    CHECK(three.members[1].size() == 3);
    CHECK(three.members[2].size() == 3);

    CHECK_THROWS_AS(chronological_split(small, 0), InvalidArgument);
    CHECK_THROWS_AS(chronological_split(small, 11), InvalidArgument);
    CHECK_THROWS_AS(chronological_split(Corpus{}, 1), InvalidArgument);
}

TEST_CASE("chronological_split breaks timestamp ties by id") {
    Corpus c;
    c.posts = {make_post("b", 1, StanceLabel::Pro), make_post("a", 1, StanceLabel::Pro), make_post("c", 0, StanceLabel::Pro)};
    const auto s = chronological_split(c, 3);
    CHECK(c.posts[s.members[0][0]].id == "c");
    CHECK(c.posts[s.members[1][0]].id == "a");
    CHECK(c.posts[s.members[2][0]].id == "b");
}

TEST_CASE("split soundness on random corpora") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const std::size_t n = 10 + seed * 7;
        const auto c = corpus_with_timestamps(n, seed);
        for (const std::size_t k : {1u, 2u, 3u, 10u}) {
            const auto s = chronological_split(c, k);
            std::size_t lo = n;
            std::size_t hi = 0;
            std::size_t total = 0;
            for (const auto& m : s.members) {
                lo = std::min(lo, m.size());
                hi = std::max(hi, m.size());
                total += m.size();
            }
            CHECK(total == n);
            CHECK(hi - lo <= 1);
            if (k < 2) continue;
            std::int64_t max_train = 0;
            for (const auto i : s.train_indices()) max_train = std::max(max_train, c.posts[i].timestamp);
            std::int64_t min_test = 1 << 30;
            for (const auto i : s.test_indices()) min_test = std::min(min_test, c.posts[i].timestamp);
            CHECK(max_train <= min_test);
        }
    }
}

TEST_CASE("balance_sample") {
    Corpus balanced;
    for (int i = 0; i < 10; ++i)
        balanced.posts.push_back(make_post("b" + std::to_string(i), i, i < 5 ? StanceLabel::Anti : StanceLabel::Pro));
    CHECK(balance_sample(balanced, 3).posts.size() == 10);

    const auto c = corpus_with_timestamps(90, 1);
    const auto a = balance_sample(c, 42);
    const auto b = balance_sample(c, 42);
    CHECK(a.count(StanceLabel::Anti) == a.count(StanceLabel::Pro));
    CHECK(a.count(StanceLabel::Anti) == c.count(StanceLabel::Anti));
    CHECK(is_sub_multiset(a.posts, c.posts));
    std::vector<std::string> ia;
    std::vector<std::string> ib;
    for (const auto& p : a.posts) ia.push_back(p.id);
    for (const auto& p : b.posts) ib.push_back(p.id);
    CHECK(ia == ib);

    Corpus one_class;
    one_class.posts = {make_post("x", 1, StanceLabel::Pro), make_post("y", 2, StanceLabel::Pro)};
    CHECK_THROWS_AS(balance_sample(one_class, 0), InvalidArgument);
}

TEST_CASE("balanced size at paper scale") {
    std::vector<RawPost> posts;
    posts.reserve(69028 + 560981);
    std::vector<std::size_t> all;
    for (std::size_t i = 0; i < 69028 + 560981; ++i) {
        RawPost p;
        p.label = i < 69028 ? StanceLabel::Anti : StanceLabel::Pro;
        posts.push_back(std::move(p));
        all.push_back(i);
    }
    const auto picked = balance_indices(posts, all, 9);
    CHECK(picked.size() == 138056);
    const auto anti = std::count_if(picked.begin(), picked.end(), [&](std::size_t i) { return posts[i].label == StanceLabel::Anti; });
    CHECK(anti == 69028);
}

TEST_CASE("split manifest round trip") {
    const auto c = corpus_with_timestamps(37, 4);
    const auto s = chronological_split(c, 5);
    std::ostringstream out;
    write_split_manifest(out, c, s);
    CHECK(out.str().rfind("id,slice\n", 0) == 0);
    std::istringstream in(out.str());
    const auto back = read_split_manifest(in, c);
    CHECK(back.k == 5);
    CHECK(back.members == s.members);
    CHECK(back.boundaries == s.boundaries);

    std::istringstream missing("id,slice\nr0,0\n");
    CHECK_THROWS_AS(read_split_manifest(missing, c), FormatError);
    std::istringstream no_header("r0,0\n");
    CHECK_THROWS_AS(read_split_manifest(no_header, c), FormatError);
    std::istringstream unknown("id,slice\nzzz,0\n");
    CHECK_THROWS_AS(read_split_manifest(unknown, c), FormatError);
}
