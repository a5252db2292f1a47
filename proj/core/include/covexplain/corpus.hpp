#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace covexplain::corpus {

enum class StanceLabel : std::uint8_t { Anti = 0, Pro = 1 };

inline constexpr std::size_t kNumClasses = 2;

std::string_view to_string(StanceLabel label) noexcept;
StanceLabel parse_label(std::string_view text);

// Names of the four offline attributes, in canonical order.
inline constexpr std::string_view kState = "state";
inline constexpr std::string_view kRace = "race";
inline constexpr std::string_view kRacePic = "race_pic";
inline constexpr std::string_view kGender = "gender";

using FeatureSet = std::set<std::string, std::less<>>;

struct RawPost {
    std::string id;
    std::int64_t timestamp = 0;
    std::string text;
    std::string description;
    std::string state;
    std::string race;
    std::string race_pic;
    std::string gender;
    StanceLabel label = StanceLabel::Anti;

    // Value of an offline attribute by name; throws for unknown names.
    const std::string& offline_value(std::string_view feature) const;
};

enum class UnknownPolicy { Reject, ExtraSlot };

struct CategoricalFeature {
    std::string name;
    std::vector<std::string> categories;
    UnknownPolicy unknown_policy = UnknownPolicy::ExtraSlot;

    std::size_t width() const noexcept {
        return categories.size() + (unknown_policy == UnknownPolicy::ExtraSlot ? 1 : 0);
    }
    std::optional<std::size_t> index_of(std::string_view value) const;

    friend bool operator==(const CategoricalFeature&, const CategoricalFeature&) = default;
};

class CategoricalSchema {
public:
    CategoricalSchema() = default;
    // Validates duplicate-free, nonempty category lists and unique names.
    explicit CategoricalSchema(std::vector<CategoricalFeature> features);

    const std::vector<CategoricalFeature>& features() const noexcept { return features_; }
    const CategoricalFeature& feature(std::string_view name) const;
    bool contains(std::string_view name) const noexcept;

    // indent < 0 gives single-line output.
    std::string to_json(int indent = 2) const;
    static CategoricalSchema from_json(std::string_view json);

    friend bool operator==(const CategoricalSchema&, const CategoricalSchema&) = default;

private:
    std::vector<CategoricalFeature> features_;
};

struct Corpus {
    std::vector<RawPost> posts;
    CategoricalSchema schema;
    std::string provenance;

    std::size_t count(StanceLabel label) const noexcept;
};

// Chronological partition of a corpus. Slice k-1 is the evaluation slice.
struct TimeSlices {
    std::size_t k = 0;
    // boundaries[i] is the first timestamp of slice i; boundaries[k] is the
    // last timestamp of slice k-1.
    std::vector<std::int64_t> boundaries;
    std::unordered_map<std::string, std::size_t> assignment;
    // Post indices (into the source corpus) per slice, in (timestamp, id) order.
    std::vector<std::vector<std::size_t>> members;

    std::size_t test_slice() const noexcept { return k - 1; }
    std::vector<std::size_t> train_indices() const;
    const std::vector<std::size_t>& test_indices() const { return members.at(k - 1); }
};

enum class SchemaMode { Given, Infer };

// Parses the JSON-Lines record format. With SchemaMode::Infer the schema is
// built from observed categories (lexicographic order, extra_slot policy) and
// `schema` is ignored.
Corpus parse_records(std::istream& in, SchemaMode mode, const CategoricalSchema& schema = {});
Corpus ingest_records(const std::filesystem::path& path, SchemaMode mode,
                      const CategoricalSchema& schema = {});

void write_records(std::ostream& out, const std::vector<RawPost>& posts);
void write_records(const std::filesystem::path& path, const std::vector<RawPost>& posts);

CategoricalSchema infer_schema(const std::vector<RawPost>& posts);

// Replaces '#'-initial tokens with "<HASHTAG>" and http(s) URLs with "<URL>".
std::string sanitize_text(std::string_view text);

inline constexpr std::string_view kHashtagToken = "<HASHTAG>";
inline constexpr std::string_view kUrlToken = "<URL>";

// One-hot layout of the selected features, concatenated in schema order.
std::vector<float> encode_onehot(const RawPost& post, const CategoricalSchema& schema,
                                 const FeatureSet& selected);

// Width of encode_onehot's output for a given selection.
std::size_t onehot_width(const CategoricalSchema& schema,
                         const FeatureSet& selected);

TimeSlices chronological_split(const Corpus& corpus, std::size_t k);

// Keeps every minority-class post plus an equal-size seeded sample of the
// majority class, in a seed-determined order.
Corpus balance_sample(const Corpus& corpus, std::uint64_t seed);

// Index-level variant used by the ablation grid: returns indices into `posts`
// selected from `candidates`.
std::vector<std::size_t> balance_indices(const std::vector<RawPost>& posts,
                                         const std::vector<std::size_t>& candidates,
                                         std::uint64_t seed);

// Split manifest CSV: header "id,slice" then one row per post in slice order.
void write_split_manifest(std::ostream& out, const Corpus& corpus, const TimeSlices& slices);
// Rebuilds slices from a manifest; every post must be listed exactly once.
TimeSlices read_split_manifest(std::istream& in, const Corpus& corpus);

}  // namespace covexplain::corpus
