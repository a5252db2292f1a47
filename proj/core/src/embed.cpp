#include "covexplain/embed.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "binary_io.hpp"
#include "covexplain/random.hpp"

namespace covexplain::embed {

namespace {

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

std::uint64_t hash_token(std::string_view token, std::uint64_t seed) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ mix64(seed);
    for (const char c : token) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return mix64(h);
}

void accumulate(std::vector<double>& acc, std::string_view gram, std::uint64_t seed) {
    const auto h = hash_token(gram, seed);
    const auto index = static_cast<std::size_t>((h & 0x7fffffffffffffffULL) % acc.size());
    acc[index] += (h >> 63) ? -1.0 : 1.0;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t end = i;
        while (end < text.size() && !is_space(text[end])) ++end;
        if (end > i) {
            std::string token(text.substr(i, end - i));
            for (auto& c : token)
                if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
            tokens.push_back(std::move(token));
        }
        i = end;
    }
    return tokens;
}

std::vector<float> hash_embed_tokens(std::span<const std::string> tokens, std::size_t dim,
                                     std::uint64_t seed) {
    if (dim < 2) throw InvalidArgument("hash_embed: dim must be at least 2");
    std::vector<double> acc(dim, 0.0);
    std::string bigram;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        accumulate(acc, tokens[i], seed);
        if (i + 1 < tokens.size()) {
            bigram.assign(tokens[i]);
            bigram.push_back(' ');
            bigram.append(tokens[i + 1]);
            accumulate(acc, bigram, seed);
        }
    }
    double norm2 = 0.0;
    for (const double v : acc) norm2 += v * v;
    std::vector<float> out(dim, 0.0f);
    if (norm2 > 0.0) {
        const double inv = 1.0 / std::sqrt(norm2);
        for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i] * inv);
    }
    return out;
}

std::vector<float> hash_embed(std::string_view text, std::size_t dim, std::uint64_t seed) {
    const auto tokens = tokenize(text);
    return hash_embed_tokens(tokens, dim, seed);
}

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim,
                                 std::vector<float> rows, std::string source_tag)
    : ids_(std::move(ids)), dim_(dim), rows_(std::move(rows)), source_tag_(std::move(source_tag)) {
    if (dim_ == 0) throw InvalidArgument("embedding dim must be positive");
    if (rows_.size() != ids_.size() * dim_)
        throw InvalidArgument("embedding payload holds " + std::to_string(rows_.size()) +
                              " values, expected " + std::to_string(ids_.size() * dim_));
    for (const float v : rows_)
        if (!std::isfinite(v)) throw InvalidArgument("embedding contains a non-finite entry");
    index_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i)
        if (!index_.emplace(ids_[i], i).second)
            throw InvalidArgument("embedding lists id \"" + ids_[i] + "\" twice");
}

std::optional<std::span<const float>> EmbeddingMatrix::find(std::string_view id) const {
    const auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return row(it->second);
}

std::string hashing_tag(std::uint64_t seed) {
    return std::string(kHashingTag) + ";seed=" + std::to_string(seed);
}

std::optional<HashingParams> parse_hashing_tag(std::string_view tag, std::size_t dim) {
    const std::string prefix = std::string(kHashingTag) + ";seed=";
    if (tag.substr(0, prefix.size()) != prefix) return std::nullopt;
    const auto digits = tag.substr(prefix.size());
    if (digits.empty()) return std::nullopt;
    std::uint64_t seed = 0;
    for (const char c : digits) {
        if (c < '0' || c > '9') return std::nullopt;
        seed = seed * 10 + static_cast<std::uint64_t>(c - '0');
    }
    return HashingParams{dim, seed};
}

EmbeddingMatrix embed_corpus(const corpus::Corpus& corpus, TextField field, std::size_t dim,
                             std::uint64_t seed) {
    std::vector<std::string> ids;
    std::vector<float> rows;
    ids.reserve(corpus.posts.size());
    rows.reserve(corpus.posts.size() * dim);
    for (const auto& post : corpus.posts) {
        const auto& raw = field == TextField::Tweet ? post.text : post.description;
        const auto v = hash_embed(corpus::sanitize_text(raw), dim, seed);
        ids.push_back(post.id);
        rows.insert(rows.end(), v.begin(), v.end());
    }
    return EmbeddingMatrix(std::move(ids), dim, std::move(rows), hashing_tag(seed));
}

std::string_view describe(CvxeDefect defect) noexcept {
    switch (defect) {
        case CvxeDefect::BadMagic: return "bad magic";
        case CvxeDefect::UnsupportedVersion: return "unsupported version";
        case CvxeDefect::TruncatedHeader: return "truncated header";
        case CvxeDefect::TruncatedPayload: return "truncated payload";
        case CvxeDefect::ZeroDim: return "dim=0";
        case CvxeDefect::CountMismatch: return "count mismatch";
        case CvxeDefect::NonFinite: return "non-finite value";
        case CvxeDefect::InvalidId: return "invalid id";
    }
    return "unknown defect";
}

CvxeError::CvxeError(CvxeDefect defect, const std::string& detail)
    : FormatError(std::string(describe(defect)) + (detail.empty() ? "" : ": " + detail)),
      defect_(defect) {}

void write_embeddings(std::ostream& out, const EmbeddingMatrix& m) {
    using namespace detail;
    out.write("CVXE", 4);
    put_le<std::uint16_t>(out, kCvxeVersion);
    put_le<std::uint64_t>(out, m.count());
    for (const auto& id : m.ids()) {
        if (id.size() > 0xffff) throw CvxeError(CvxeDefect::InvalidId, "id longer than 65535 bytes");
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim()));
    for (const float v : m.data()) put_le_f32(out, v);
    if (!out) throw Error("failed writing embedding stream");
}

EmbeddingMatrix read_embeddings(std::istream& in) {
    using namespace detail;
    char magic[4];
    if (!in.read(magic, 4)) throw CvxeError(CvxeDefect::TruncatedHeader, "missing magic");
    if (std::string_view(magic, 4) != "CVXE") throw CvxeError(CvxeDefect::BadMagic);
    std::uint16_t version = 0;
    std::uint64_t count = 0;
    if (!get_le(in, version) || !get_le(in, count)) throw CvxeError(CvxeDefect::TruncatedHeader);
    if (version != kCvxeVersion)
        throw CvxeError(CvxeDefect::UnsupportedVersion, "version " + std::to_string(version));

    std::vector<std::string> ids;
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint16_t len = 0;
        if (!get_le(in, len))
            throw CvxeError(CvxeDefect::TruncatedHeader, "id table ends after " + std::to_string(i) +
                                                             " of " + std::to_string(count) + " ids");
        std::string id(len, '\0');
        if (len > 0 && !in.read(id.data(), len)) throw CvxeError(CvxeDefect::TruncatedHeader, "id bytes");
        if (id.empty()) throw CvxeError(CvxeDefect::InvalidId, "empty id at position " + std::to_string(i));
        ids.push_back(std::move(id));
    }
    std::uint32_t dim = 0;
    if (!get_le(in, dim)) throw CvxeError(CvxeDefect::TruncatedHeader, "missing dim");
    if (dim == 0) throw CvxeError(CvxeDefect::ZeroDim);

    const std::uint64_t total = count * dim;
    // Grow with the data actually read so a corrupt header cannot force a huge allocation.
    std::vector<float> rows;
    rows.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(total, 1 << 20)));
    std::vector<unsigned char> chunk;
    constexpr std::uint64_t kChunkValues = 1 << 16;
    for (std::uint64_t start = 0; start < total; start += kChunkValues) {
        const auto n = std::min(kChunkValues, total - start);
        chunk.resize(static_cast<std::size_t>(n * 4));
        in.read(reinterpret_cast<char*>(chunk.data()), static_cast<std::streamsize>(chunk.size()));
        const auto got = static_cast<std::uint64_t>(in.gcount()) / 4;
        if (got < n)
            throw CvxeError(CvxeDefect::TruncatedPayload,
                            "row " + std::to_string((start + got) / dim) + " of " + std::to_string(count));
        for (std::uint64_t i = 0; i < n; ++i) {
            const auto* b = &chunk[static_cast<std::size_t>(i * 4)];
            const std::uint32_t bits = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                                       (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
            const float v = std::bit_cast<float>(bits);
            if (!std::isfinite(v))
                throw CvxeError(CvxeDefect::NonFinite, "row " + std::to_string((start + i) / dim));
            rows.push_back(v);
        }
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw CvxeError(CvxeDefect::CountMismatch, "payload extends past " + std::to_string(count) + " rows");
    try {
        return EmbeddingMatrix(std::move(ids), dim, std::move(rows));
    } catch (const InvalidArgument& e) {
        throw CvxeError(CvxeDefect::InvalidId, e.what());
    }
}

void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write " + path.string());
        write_embeddings(out, m);
    }
    auto tag_path = path;
    tag_path += ".tag";
    if (!m.source_tag().empty()) {
        std::ofstream tag(tag_path, std::ios::binary);
        tag << m.source_tag() << '\n';
    } else {
        std::error_code ec;
        std::filesystem::remove(tag_path, ec);
    }
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open embeddings " + path.string());
    auto m = read_embeddings(in);
    auto tag_path = path;
    tag_path += ".tag";
    std::ifstream tag(tag_path);
    std::string source_tag;
    if (tag && std::getline(tag, source_tag)) {
        return EmbeddingMatrix(m.ids(), m.dim(), m.data(), source_tag);
    }
    return m;
}

std::string FeatureSelection::to_string(const corpus::CategoricalSchema& schema) const {
    std::string out;
    const auto add = [&](std::string_view name) {
        if (!out.empty()) out += ',';
        out += name;
    };
    if (tweet) add(kTweetSegment);
    if (description) add(kDescriptionSegment);
    for (const auto& f : schema.features())
        if (offline.contains(f.name)) add(f.name);
    return out;
}

FeatureSelection FeatureSelection::parse(std::string_view list) {
    FeatureSelection sel;
    std::size_t pos = 0;
    while (pos <= list.size()) {
        auto end = list.find(',', pos);
        if (end == std::string_view::npos) end = list.size();
        const auto name = list.substr(pos, end - pos);
        if (name == kTweetSegment)
            sel.tweet = true;
        else if (name == kDescriptionSegment)
            sel.description = true;
        else if (!name.empty())
            sel.offline.emplace(name);
        pos = end + 1;
    }
    return sel;
}

Layout feature_layout(const corpus::CategoricalSchema& schema, const FeatureSelection& selection,
                      std::size_t tweet_dim, std::size_t description_dim) {
    if (selection.empty()) throw InvalidArgument("no features selected");
    Layout layout;
    std::size_t offset = 0;
    const auto push = [&](std::string name, std::size_t len) {
        layout.push_back(Segment{std::move(name), offset, len});
        offset += len;
    };
    if (selection.tweet) push(std::string(kTweetSegment), tweet_dim);
    if (selection.description) push(std::string(kDescriptionSegment), description_dim);
    for (const auto& name : selection.offline)
        if (!schema.contains(name))
            throw InvalidArgument("selected feature \"" + name + "\" is not in the schema");
    for (const auto& f : schema.features())
        if (selection.offline.contains(f.name)) push(f.name, f.width());
    return layout;
}

FusedVector assemble_features(const corpus::RawPost& post,
                              std::optional<std::span<const float>> tweet_row,
                              std::optional<std::span<const float>> description_row,
                              const corpus::CategoricalSchema& schema,
                              const FeatureSelection& selection) {
    if (selection.empty()) throw InvalidArgument("no features selected");
    if (selection.tweet && !tweet_row)
        throw InvalidArgument("record \"" + post.id + "\" has no tweet embedding");
    if (selection.description && !description_row)
        throw InvalidArgument("record \"" + post.id + "\" has no description embedding");

    FusedVector fused;
    fused.layout = feature_layout(schema, selection, tweet_row ? tweet_row->size() : 0,
                                  description_row ? description_row->size() : 0);
    if (selection.tweet) fused.values.insert(fused.values.end(), tweet_row->begin(), tweet_row->end());
    if (selection.description)
        fused.values.insert(fused.values.end(), description_row->begin(), description_row->end());
    if (!selection.offline.empty()) {
        const auto onehot = corpus::encode_onehot(post, schema, selection.offline);
        fused.values.insert(fused.values.end(), onehot.begin(), onehot.end());
    }
    return fused;
}

Dataset build_dataset(const corpus::Corpus& corpus, std::span<const std::size_t> indices,
                      const EmbeddingMatrix* tweets, const EmbeddingMatrix* descriptions,
                      const FeatureSelection& selection) {
    if (selection.tweet && tweets == nullptr)
        throw InvalidArgument("tweet features selected but no tweet embeddings supplied");
    if (selection.description && descriptions == nullptr)
        throw InvalidArgument("description features selected but no description embeddings supplied");

    Dataset ds;
    ds.layout = feature_layout(corpus.schema, selection, tweets ? tweets->dim() : 0,
                               descriptions ? descriptions->dim() : 0);
    const std::size_t width = ds.layout.back().offset + ds.layout.back().length;
    ds.features.resize(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(width));
    ds.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto& post = corpus.posts.at(indices[r]);
        std::optional<std::span<const float>> t;
        std::optional<std::span<const float>> d;
        if (selection.tweet) t = tweets->find(post.id);
        if (selection.description) d = descriptions->find(post.id);
        const auto fused = assemble_features(post, t, d, corpus.schema, selection);
        for (std::size_t c = 0; c < width; ++c)
            ds.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = fused.values[c];
        ds.labels.push_back(post.label);
    }
    return ds;
}

}  // namespace covexplain::embed
