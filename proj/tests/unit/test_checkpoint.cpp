#include <doctest.h>

#include <cstring>
#include <random>
#include <sstream>

#include "covexplain/checkpoint.hpp"
#include "covexplain/classifier.hpp"
#include "covexplain/error.hpp"
#include "helpers.hpp"

using namespace covexplain;
using namespace covexplain::checkpoint;
using corpus::StanceLabel;

namespace {

std::string bytes_of(const Checkpoint& c) {
    std::ostringstream out(std::ios::binary);
    write_checkpoint(out, c);
    return out.str();
}

Checkpoint from_bytes(const std::string& s) {
    std::istringstream in(s);
    return read_checkpoint(in);
}

std::string read_error(const std::string& s) {
    try {
        from_bytes(s);
    } catch (const FormatError& e) {
        return e.what();
    }
    return "no error";
}

Checkpoint sample() {
    Checkpoint c;
    c.config["model"] = "linear";
    c.config["alpha"] = "0.5";
    c.tensors.push_back(Tensor::from_f32("w", {2, 2}, {1, -2, 3.5f, -0.0f}));
    c.tensors.push_back(Tensor::from_f64("b", {1}, {0.1}));
    c.tensors.push_back(Tensor::from_f64("empty", {0}, {}));
    return c;
}

void blobs(embed::FeatureMatrix& x, std::vector<StanceLabel>& y, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<float> nd;
    x.resize(static_cast<Eigen::Index>(n), 3);
    y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % 2 ? StanceLabel::Pro : StanceLabel::Anti;
        const float shift = y[i] == StanceLabel::Pro ? 1.5f : -1.5f;
        for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = nd(gen) + shift * (j == 0 ? 1.0f : 0.3f);
    }
}

}  // namespace

TEST_CASE("checkpoint layout") {
    const auto s = bytes_of(sample());
    CHECK(s.substr(0, 4) == "CVXM");
    std::uint16_t version;
    std::memcpy(&version, s.data() + 4, 2);
    CHECK(version == kCvxmVersion);
    std::uint32_t text_len;
    std::memcpy(&text_len, s.data() + 6, 4);
    CHECK(s.substr(10, text_len) == "alpha=0.5\nmodel=linear\n");
}

TEST_CASE("checkpoint round trip is exact") {
    const auto c = sample();
    const auto back = from_bytes(bytes_of(c));
    CHECK(back == c);
    CHECK(back.get("model") == "linear");
    CHECK(back.get_or("missing", "x") == "x");
    CHECK(back.tensor("w").shape == std::vector<std::uint64_t>{2, 2});
    CHECK(std::signbit(back.tensor("w").f32[3]));
    CHECK(back.has_tensor("empty"));
    CHECK_FALSE(back.has_tensor("nope"));
    CHECK_THROWS_AS(back.get("missing"), FormatError);
    CHECK_THROWS_AS(back.tensor("nope"), FormatError);

    testutil::TempDir dir("ckpt");
    write_checkpoint(c, dir.file("m.cvxm"));
    CHECK(read_checkpoint(dir.file("m.cvxm")) == c);
    CHECK(bytes_of(read_checkpoint(dir.file("m.cvxm"))) == bytes_of(c));
    CHECK_THROWS_AS(read_checkpoint(dir.file("absent.cvxm")), Error);
}

TEST_CASE("checkpoint writer rejects what the reader could not parse") {
    Checkpoint c;
    c.config["a=b"] = "1";
    CHECK_THROWS_AS(bytes_of(c), InvalidArgument);
    c.config.clear();
    c.config["k"] = "two\nlines";
    CHECK_THROWS_AS(bytes_of(c), InvalidArgument);
    c.config.clear();
    Tensor bad;
    bad.name = "t";
    bad.shape = {3};
    bad.f32 = {1, 2};
    c.tensors.push_back(bad);
    CHECK_THROWS_AS(bytes_of(c), InvalidArgument);
    CHECK_THROWS_AS(Tensor::from_f64("x", {2, 2}, {1.0}), InvalidArgument);
}

TEST_CASE("checkpoint reader names each defect") {
    const auto good = bytes_of(sample());
    CHECK(read_error("CVX") == "checkpoint: truncated header");
    auto magic = good;
    magic[3] = 'Q';
    CHECK(read_error(magic) == "checkpoint: bad magic");
    auto version = good;
    version[4] = 7;
    CHECK(read_error(version) == "checkpoint: unsupported version 7");
    CHECK(read_error(good.substr(0, 15)) == "checkpoint: truncated config block");
    CHECK(read_error(good.substr(0, good.size() - 17 - 3)) == "checkpoint: truncated payload in tensor b");
    CHECK(read_error(good.substr(0, good.size() - 3)) == "checkpoint: truncated tensor header");
    CHECK(read_error(good + "z") == "checkpoint: trailing bytes after last tensor");
    CHECK(read_error(good.substr(0, 10 + 23)) == "checkpoint: truncated tensor table");
}

TEST_CASE("every classifier survives a checkpoint round trip") {
    embed::FeatureMatrix x;
    std::vector<StanceLabel> y;
    blobs(x, y, 60, 5);
    ClassifierOptions opts;
    opts.mlp.hidden_dim = 8;
    opts.mlp.epochs = 5;
    opts.mlp.batch_size = 16;
    for (const auto kind : parse_model_list("all")) {
        CAPTURE(model_key(kind));
        auto clf = make_classifier(kind, opts);
        clf->fit(x, y, 3);
        Checkpoint c;
        clf->save(c);
        const auto restored = load_classifier(from_bytes(bytes_of(c)));
        CHECK(restored->name() == clf->name());
        CHECK(restored->predict(x) == clf->predict(x));
        Checkpoint again;
        restored->save(again);
        CHECK(bytes_of(again) == bytes_of(c));
        if (kind != ModelKind::CovExplain) CHECK(accuracy(clf->predict(x), y) > 0.9);
    }
}

TEST_CASE("classifier helpers") {
    CHECK(parse_model_list("all").size() == 4);
    CHECK(parse_model_list("svm,linear") == std::vector<ModelKind>{ModelKind::SvmRbf, ModelKind::Linear});
    CHECK_THROWS_AS(parse_model_list("forest"), InvalidArgument);
    for (const auto kind : parse_model_list("all")) CHECK(parse_model_kind(model_key(kind)) == kind);

    const std::vector<StanceLabel> t{StanceLabel::Anti, StanceLabel::Pro, StanceLabel::Pro, StanceLabel::Anti};
    const std::vector<StanceLabel> p{StanceLabel::Anti, StanceLabel::Pro, StanceLabel::Anti, StanceLabel::Anti};
    CHECK(accuracy(p, t) == 0.75);
    CHECK_THROWS_AS(accuracy(std::vector<StanceLabel>{}, std::vector<StanceLabel>{}), InvalidArgument);

    for (const double v : {0.1, 1e-8, 123456.789, -2.5e300, 1.0 / 3.0}) CHECK(parse_double(format_double(v), "v") == v);
    CHECK_THROWS_AS(parse_double("1.5x", "lr"), InvalidArgument);
    CHECK(parse_u64("42", "n") == 42u);
    CHECK_THROWS_AS(parse_u64("-1", "n"), InvalidArgument);

    Checkpoint empty;
    CHECK_THROWS(load_classifier(empty));
    auto unfitted = make_classifier(ModelKind::Linear);
    CHECK_THROWS_AS(unfitted->predict(embed::FeatureMatrix::Zero(1, 3)), InvalidArgument);
}
