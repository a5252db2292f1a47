#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "covexplain/embed.hpp"
#include "helpers.hpp"

using namespace covexplain;
using namespace covexplain::embed;
using corpus::StanceLabel;

namespace {

double l2(const std::vector<float>& v) {
    double s = 0;
    for (const float x : v) s += double(x) * x;
    return std::sqrt(s);
}

std::string bytes_of(const EmbeddingMatrix& m) {
    std::ostringstream out(std::ios::binary);
    write_embeddings(out, m);
    return out.str();
}

template <typename T>
T le_at(const std::string& s, std::size_t off) {
    T v{};
    std::memcpy(&v, s.data() + off, sizeof(T));
    return v;
}

}  // namespace

TEST_CASE("hash_embed basics") {
    const auto a = hash_embed("get the shot now", 64, 3);
    const auto b = hash_embed("get the shot now", 64, 3);
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
    CHECK(hash_embed("get the shot now", 64, 4) != a);
    CHECK(hash_embed("GET the Shot now", 64, 3) == a);

    const auto empty = hash_embed("", 16, 0);
    CHECK(empty == std::vector<float>(16, 0.0f));
    CHECK(hash_embed("   \t ", 16, 0) == std::vector<float>(16, 0.0f));
    CHECK_THROWS_AS(hash_embed("x", 1, 0), InvalidArgument);

    std::vector<std::string> tokens{"get", "the", "shot", "now"};
    CHECK(hash_embed_tokens(tokens, 64, 3) == a);
}

TEST_CASE("hash_embed is unit length on random texts and sparse") {
    std::mt19937_64 gen(1);
    std::uniform_int_distribution<int> letter('a', 'z');
    std::uniform_int_distribution<int> len(1, 8);
    double nonzero_fraction = 0;
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
        std::string text;
        for (int w = 0; w < 10; ++w) {
            if (w) text += ' ';
            for (int c = len(gen); c > 0; --c) text += static_cast<char>(letter(gen));
        }
        const auto v = hash_embed(text, 1024, 7);
        CHECK(std::abs(l2(v) - 1.0) < 1e-6);
        std::size_t nz = 0;
        for (const float x : v) nz += x != 0.0f;
        nonzero_fraction += double(nz) / v.size();
    }
    CHECK(nonzero_fraction / trials < 0.05);
}

TEST_CASE("CVXE header layout") {
    const EmbeddingMatrix m({"a", "bc"}, 3, {1, 2, 3, 4, 5, 6});
    const auto s = bytes_of(m);
    CHECK(s.substr(0, 4) == "CVXE");
    CHECK(le_at<std::uint16_t>(s, 4) == 1);
    CHECK(le_at<std::uint64_t>(s, 6) == 2);
    CHECK(le_at<std::uint16_t>(s, 14) == 1);
    CHECK(s.substr(16, 1) == "a");
    CHECK(le_at<std::uint16_t>(s, 17) == 2);
    CHECK(s.substr(19, 2) == "bc");
    CHECK(le_at<std::uint32_t>(s, 21) == 3);
    CHECK(s.size() == 25 + 24);
    CHECK(le_at<float>(s, 25) == 1.0f);
    CHECK(le_at<float>(s, 25 + 5 * 4) == 6.0f);
}

TEST_CASE("CVXE round trip is exact") {
    std::mt19937_64 gen(3);
    std::normal_distribution<float> nd;
    std::vector<float> rows(2 * 3);
    for (auto& x : rows) x = nd(gen);
    rows[1] = -0.0f;
    rows[2] = 1e-42f;
    const EmbeddingMatrix m({"r1", "r2"}, 3, rows);
    std::istringstream in(bytes_of(m));
    const auto back = read_embeddings(in);
    CHECK(back.same_content(m));
    CHECK(std::memcmp(back.data().data(), rows.data(), rows.size() * sizeof(float)) == 0);
}

TEST_CASE("CVXE defects are named") {
    const EmbeddingMatrix m({"a", "b"}, 3, {1, 2, 3, 4, 5, 6});
    const auto good = bytes_of(m);
    const auto defect_of = [](const std::string& bytes) {
        std::istringstream in(bytes);
        try {
            read_embeddings(in);
        } catch (const CvxeError& e) {
            return std::pair{e.defect(), std::string(e.what())};
        }
        return std::pair{CvxeDefect::InvalidId, std::string("no error")};
    };

    auto [d1, w1] = defect_of(good.substr(0, good.size() - 6));
    CHECK(d1 == CvxeDefect::TruncatedPayload);
    CHECK(w1.rfind("truncated payload", 0) == 0);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK(defect_of(bad_magic).first == CvxeDefect::BadMagic);

    auto bad_version = good;
    bad_version[4] = 9;
    CHECK(defect_of(bad_version).first == CvxeDefect::UnsupportedVersion);

    CHECK(defect_of(good.substr(0, 9)).first == CvxeDefect::TruncatedHeader);

    auto zero_dim = good.substr(0, 20) + std::string("\0\0\0\0", 4);
    CHECK(defect_of(zero_dim).first == CvxeDefect::ZeroDim);

    CHECK(defect_of(good + "xx").first == CvxeDefect::CountMismatch);

    auto nan = good;
    const float q = std::nanf("");
    std::memcpy(nan.data() + 24, &q, 4);
    CHECK(defect_of(nan).first == CvxeDefect::NonFinite);

    std::vector<std::string> names{describe(CvxeDefect::BadMagic).data(), describe(CvxeDefect::TruncatedPayload).data(),
                                   describe(CvxeDefect::ZeroDim).data(), describe(CvxeDefect::CountMismatch).data()};
    std::sort(names.begin(), names.end());
    CHECK(std::unique(names.begin(), names.end()) == names.end());
}

TEST_CASE("CVXE files carry their tag in a sidecar") {
    testutil::TempDir dir("embed");
    const EmbeddingMatrix m({"a"}, 2, {0.5f, -0.5f}, "hashing-v1;seed=9");
    write_embeddings(m, dir.path() / "t.cvxe");
    const auto back = read_embeddings(dir.path() / "t.cvxe");
    CHECK(back.same_content(m));
    CHECK(back.source_tag() == "hashing-v1;seed=9");
    CHECK(parse_hashing_tag(back.source_tag(), 2)->seed == 9);
    CHECK_FALSE(parse_hashing_tag("transformer-last4", 2).has_value());
    CHECK_THROWS_AS(read_embeddings(dir.path() / "missing.cvxe"), Error);
}

TEST_CASE("EmbeddingMatrix validates its invariants") {
    CHECK_THROWS_AS(EmbeddingMatrix({"a"}, 0, {}), InvalidArgument);
    CHECK_THROWS_AS(EmbeddingMatrix({"a"}, 2, {1.0f}), InvalidArgument);
    CHECK_THROWS_AS(EmbeddingMatrix({"a", "a"}, 1, {1.0f, 2.0f}), InvalidArgument);
    CHECK_THROWS_AS(EmbeddingMatrix({"a"}, 1, {INFINITY}), InvalidArgument);
    const EmbeddingMatrix m({"a", "b"}, 1, {1.0f, 2.0f});
    CHECK((*m.find("b"))[0] == 2.0f);
    CHECK_FALSE(m.find("c").has_value());
}

TEST_CASE("assemble_features") {
    const corpus::CategoricalSchema schema({{"state", {"CA", "NY"}}, {"race", {"black", "white"}},
                                            {"gender", {"female", "male", "unknown"}, corpus::UnknownPolicy::Reject}});
    auto post = testutil::make_post("p1", 1, StanceLabel::Pro);
    post.gender = "male";
    const std::vector<float> tweet{0.1f, 0.2f, 0.3f, 0.4f};

    FeatureSelection sel;
    sel.tweet = true;
    sel.offline = {"gender"};
    const auto fused = assemble_features(post, std::span<const float>(tweet), std::nullopt, schema, sel);
    CHECK(fused.values == std::vector<float>{0.1f, 0.2f, 0.3f, 0.4f, 0, 1, 0});
    CHECK(fused.layout == Layout{{"tweet", 0, 4}, {"gender", 4, 3}});

    FeatureSelection offline_only;
    offline_only.offline = {"state", "race", "gender"};
    const auto off = assemble_features(post, std::nullopt, std::nullopt, schema, offline_only);
    for (const auto& seg : off.layout) CHECK((seg.name != "tweet" && seg.name != "description"));
    std::size_t covered = 0;
    for (const auto& seg : off.layout) {
        CHECK(seg.offset == covered);
        covered += seg.length;
    }
    CHECK(covered == off.values.size());
    CHECK(off.layout[0].name == "state");
    CHECK(off.layout[2].name == "gender");

    try {
        assemble_features(post, std::nullopt, std::nullopt, schema, FeatureSelection{});
        FAIL("expected an error");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()) == "no features selected");
    }
    try {
        assemble_features(post, std::nullopt, std::nullopt, schema, sel);
        FAIL("expected an error");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("p1") != std::string::npos);
    }
}

TEST_CASE("FeatureSelection parses and prints canonically") {
    const corpus::CategoricalSchema schema({{"state", {"CA"}}, {"race", {"x"}}, {"race_pic", {"x"}}, {"gender", {"f"}}});
    const auto sel = FeatureSelection::parse("gender,tweet,state");
    CHECK(sel.tweet);
    CHECK_FALSE(sel.description);
    CHECK(sel.to_string(schema) == "tweet,state,gender");
    CHECK(FeatureSelection::parse("").empty());
}

TEST_CASE("build_dataset rows follow indices") {
    corpus::Corpus c;
    c.posts = {testutil::make_post("a", 1, StanceLabel::Pro, "jab one"), testutil::make_post("b", 2, StanceLabel::Anti, "two")};
    c.schema = corpus::infer_schema(c.posts);
    const auto tweets = embed_corpus(c, TextField::Tweet, 8, 1);
    CHECK(tweets.source_tag() == "hashing-v1;seed=1");
    FeatureSelection sel;
    sel.tweet = true;
    sel.offline = {"gender"};
    const std::vector<std::size_t> idx{1, 0};
    const auto ds = build_dataset(c, idx, &tweets, nullptr, sel);
    REQUIRE(ds.features.rows() == 2);
    CHECK(ds.features.cols() == 10);
    CHECK(ds.labels[0] == StanceLabel::Anti);
    const auto two = hash_embed("two", 8, 1);
    for (int j = 0; j < 8; ++j) CHECK(ds.features(0, j) == two[j]);
    CHECK_THROWS_AS(build_dataset(c, idx, nullptr, nullptr, sel), InvalidArgument);
}
