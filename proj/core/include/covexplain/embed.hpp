#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "covexplain/corpus.hpp"
#include "covexplain/error.hpp"

namespace covexplain::embed {

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::string_view kHashingTag = "hashing-v1";

// Lowercased whitespace tokens of already-sanitized text.
std::vector<std::string> tokenize(std::string_view text);

// Signed feature hashing of word unigrams and bigrams, L2-normalized unless
// the text has no tokens. Deterministic in (text, dim, seed).
std::vector<float> hash_embed(std::string_view text, std::size_t dim, std::uint64_t seed);

// Same as hash_embed, but over an explicit token list (bigrams are formed from
// neighbours in the list). Used when tokens are masked out before embedding.
std::vector<float> hash_embed_tokens(std::span<const std::string> tokens, std::size_t dim,
                                     std::uint64_t seed);

// Dense per-record feature rows keyed by record id.
class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;
    // Throws InvalidArgument on dim == 0, row-count mismatch, duplicate ids or
    // non-finite entries.
    EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim, std::vector<float> rows,
                    std::string source_tag = {});

    const std::vector<std::string>& ids() const noexcept { return ids_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t count() const noexcept { return ids_.size(); }
    const std::vector<float>& data() const noexcept { return rows_; }
    const std::string& source_tag() const noexcept { return source_tag_; }

    std::span<const float> row(std::size_t i) const {
        return std::span<const float>(rows_).subspan(i * dim_, dim_);
    }
    // Row for a record id, or nullopt when the id is absent.
    std::optional<std::span<const float>> find(std::string_view id) const;

    bool same_content(const EmbeddingMatrix& other) const noexcept {
        return ids_ == other.ids_ && dim_ == other.dim_ && rows_ == other.rows_;
    }

private:
    std::vector<std::string> ids_;
    std::size_t dim_ = 0;
    std::vector<float> rows_;
    std::string source_tag_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Hashes the chosen text field of every post. The tag records the embedder
// parameters ("hashing-v1;seed=<s>").
enum class TextField { Tweet, Description };
EmbeddingMatrix embed_corpus(const corpus::Corpus& corpus, TextField field, std::size_t dim,
                             std::uint64_t seed);

// Hashing parameters recovered from a source tag, if it names the hashing embedder.
struct HashingParams {
    std::size_t dim = 0;
    std::uint64_t seed = 0;
};
std::optional<HashingParams> parse_hashing_tag(std::string_view tag, std::size_t dim);
std::string hashing_tag(std::uint64_t seed);

enum class CvxeDefect {
    BadMagic,
    UnsupportedVersion,
    TruncatedHeader,
    TruncatedPayload,
    ZeroDim,
    CountMismatch,
    NonFinite,
    InvalidId,
};

std::string_view describe(CvxeDefect defect) noexcept;

class CvxeError : public FormatError {
public:
    explicit CvxeError(CvxeDefect defect, const std::string& detail = {});
    CvxeDefect defect() const noexcept { return defect_; }

private:
    CvxeDefect defect_;
};

inline constexpr std::uint16_t kCvxeVersion = 1;

// CVXE, little-endian: "CVXE", u16 version, u64 count, count x (u16 len, id
// bytes), u32 dim, count*dim float32.
void write_embeddings(std::ostream& out, const EmbeddingMatrix& m);
EmbeddingMatrix read_embeddings(std::istream& in);

// File variants. The source tag travels in a "<path>.tag" sidecar when present.
void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path);
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;

    friend bool operator==(const Segment&, const Segment&) = default;
};

using Layout = std::vector<Segment>;

struct FusedVector {
    std::vector<float> values;
    Layout layout;
};

inline constexpr std::string_view kTweetSegment = "tweet";
inline constexpr std::string_view kDescriptionSegment = "description";

// Which feature segments feed a model: any of the two online segments plus
// a subset of the offline schema features.
struct FeatureSelection {
    bool tweet = false;
    bool description = false;
    corpus::FeatureSet offline;

    bool empty() const noexcept { return !tweet && !description && offline.empty(); }
    // Comma-separated names in canonical order, e.g. "tweet,state,gender".
    std::string to_string(const corpus::CategoricalSchema& schema) const;
    static FeatureSelection parse(std::string_view list);

    friend bool operator==(const FeatureSelection&, const FeatureSelection&) = default;
};

// Concatenates tweet, description, then offline one-hot blocks in schema order.
FusedVector assemble_features(const corpus::RawPost& post,
                              std::optional<std::span<const float>> tweet_row,
                              std::optional<std::span<const float>> description_row,
                              const corpus::CategoricalSchema& schema,
                              const FeatureSelection& selection);

// Layout that assemble_features would produce for the given dimensions.
Layout feature_layout(const corpus::CategoricalSchema& schema, const FeatureSelection& selection,
                      std::size_t tweet_dim, std::size_t description_dim);

struct Dataset {
    FeatureMatrix features;
    std::vector<corpus::StanceLabel> labels;
    Layout layout;
};

// Assembles one row per post index. Embedding matrices may be null when the
// selection does not use them.
Dataset build_dataset(const corpus::Corpus& corpus, std::span<const std::size_t> indices,
                      const EmbeddingMatrix* tweets, const EmbeddingMatrix* descriptions,
                      const FeatureSelection& selection);

}  // namespace covexplain::embed
