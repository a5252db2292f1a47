#include "covexplain/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "covexplain/error.hpp"
#include "covexplain/random.hpp"
#include "csv.hpp"

namespace covexplain::corpus {

using nlohmann::json;

std::string_view to_string(StanceLabel label) noexcept {
    return label == StanceLabel::Anti ? "anti" : "pro";
}

StanceLabel parse_label(std::string_view text) {
    if (text == "anti") return StanceLabel::Anti;
    if (text == "pro") return StanceLabel::Pro;
    throw InvalidArgument("unknown label \"" + std::string(text) + "\" (expected \"anti\" or \"pro\")");
}

const std::string& RawPost::offline_value(std::string_view feature) const {
    if (feature == kState) return state;
    if (feature == kRace) return race;
    if (feature == kRacePic) return race_pic;
    if (feature == kGender) return gender;
    throw InvalidArgument("unknown offline feature \"" + std::string(feature) + "\"");
}

std::optional<std::size_t> CategoricalFeature::index_of(std::string_view value) const {
    const auto it = std::find(categories.begin(), categories.end(), value);
    if (it == categories.end()) return std::nullopt;
    return static_cast<std::size_t>(it - categories.begin());
}

CategoricalSchema::CategoricalSchema(std::vector<CategoricalFeature> features)
    : features_(std::move(features)) {
    std::unordered_set<std::string> names;
    for (const auto& f : features_) {
        if (!names.insert(f.name).second)
            throw InvalidArgument("schema lists feature \"" + f.name + "\" twice");
        if (f.categories.empty())
            throw InvalidArgument("schema feature \"" + f.name + "\" has no categories");
        std::unordered_set<std::string> seen;
        for (const auto& c : f.categories)
            if (!seen.insert(c).second)
                throw InvalidArgument("schema feature \"" + f.name + "\" repeats category \"" + c +
                                      "\"");
    }
}

const CategoricalFeature& CategoricalSchema::feature(std::string_view name) const {
    for (const auto& f : features_)
        if (f.name == name) return f;
    throw InvalidArgument("schema has no feature \"" + std::string(name) + "\"");
}

bool CategoricalSchema::contains(std::string_view name) const noexcept {
    return std::any_of(features_.begin(), features_.end(),
                       [&](const CategoricalFeature& f) { return f.name == name; });
}

std::string CategoricalSchema::to_json(int indent) const {
    json out;
    out["features"] = json::array();
    for (const auto& f : features_) {
        out["features"].push_back({
            {"name", f.name},
            {"categories", f.categories},
            {"unknown_policy", f.unknown_policy == UnknownPolicy::Reject ? "reject" : "extra_slot"},
        });
    }
    return out.dump(indent);
}

CategoricalSchema CategoricalSchema::from_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("schema is not valid JSON: ") + e.what());
    }
    std::vector<CategoricalFeature> features;
    try {
        for (const auto& entry : doc.at("features")) {
            CategoricalFeature f;
            f.name = entry.at("name").get<std::string>();
            f.categories = entry.at("categories").get<std::vector<std::string>>();
            const auto policy = entry.value("unknown_policy", std::string("extra_slot"));
            if (policy == "reject")
                f.unknown_policy = UnknownPolicy::Reject;
            else if (policy == "extra_slot")
                f.unknown_policy = UnknownPolicy::ExtraSlot;
            else
                throw FormatError("unknown_policy \"" + policy + "\" for feature \"" + f.name + "\"");
            features.push_back(std::move(f));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("schema: ") + e.what());
    }
    return CategoricalSchema(std::move(features));
}

std::size_t Corpus::count(StanceLabel label) const noexcept {
    return static_cast<std::size_t>(std::count_if(
        posts.begin(), posts.end(), [&](const RawPost& p) { return p.label == label; }));
}

std::vector<std::size_t> TimeSlices::train_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s + 1 < k; ++s)
        out.insert(out.end(), members[s].begin(), members[s].end());
    return out;
}

namespace {

constexpr std::string_view kOfflineFeatures[] = {kState, kRace, kRacePic, kGender};

RawPost parse_record(const std::string& line, std::size_t line_no) {
    const auto fail = [&](const std::string& why) -> FormatError {
        return FormatError("line " + std::to_string(line_no) + ": " + why);
    };
    json doc;
    try {
        doc = json::parse(line);
    } catch (const json::exception& e) {
        throw fail(std::string("malformed JSON (") + e.what() + ")");
    }
    if (!doc.is_object()) throw fail("record is not a JSON object");
    RawPost post;
    try {
        post.id = doc.at("id").get<std::string>();
        post.timestamp = doc.at("timestamp").get<std::int64_t>();
        post.text = doc.at("text").get<std::string>();
        post.description = doc.at("description").get<std::string>();
        post.state = doc.at("state").get<std::string>();
        post.race = doc.at("race").get<std::string>();
        post.race_pic = doc.at("race_pic").get<std::string>();
        post.gender = doc.at("gender").get<std::string>();
        const auto label = doc.at("label").get<std::string>();
        try {
            post.label = parse_label(label);
        } catch (const InvalidArgument& e) {
            throw fail(e.what());
        }
    } catch (const json::exception& e) {
        throw fail(std::string("bad field (") + e.what() + ")");
    }
    if (post.id.empty()) throw fail("empty id");
    if (post.timestamp < 0) throw fail("negative timestamp");
    return post;
}

void check_against_schema(const std::vector<RawPost>& posts, const CategoricalSchema& schema) {
    for (const auto& f : schema.features()) {
        if (f.unknown_policy != UnknownPolicy::Reject) continue;
        const bool known_feature = std::find(std::begin(kOfflineFeatures), std::end(kOfflineFeatures),
                                             f.name) != std::end(kOfflineFeatures);
        if (!known_feature) continue;
        for (const auto& p : posts) {
            const auto& v = p.offline_value(f.name);
            if (!f.index_of(v))
                throw InvalidArgument("record \"" + p.id + "\": value \"" + v +
                                      "\" is not a category of \"" + f.name + "\"");
        }
    }
}

}  // namespace

CategoricalSchema infer_schema(const std::vector<RawPost>& posts) {
    std::vector<CategoricalFeature> features;
    for (const auto name : kOfflineFeatures) {
        std::set<std::string> seen;
        for (const auto& p : posts) seen.insert(p.offline_value(name));
        CategoricalFeature f;
        f.name = std::string(name);
        f.categories.assign(seen.begin(), seen.end());
        if (f.categories.empty()) f.categories.push_back("unknown");
        features.push_back(std::move(f));
    }
    return CategoricalSchema(std::move(features));
}

Corpus parse_records(std::istream& in, SchemaMode mode, const CategoricalSchema& schema) {
    Corpus corpus;
    std::unordered_map<std::string, std::size_t> first_line;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        auto post = parse_record(line, line_no);
        const auto [it, inserted] = first_line.emplace(post.id, line_no);
        if (!inserted)
            throw FormatError("duplicate id \"" + post.id + "\" on lines " +
                              std::to_string(it->second) + " and " + std::to_string(line_no));
        corpus.posts.push_back(std::move(post));
    }
    if (mode == SchemaMode::Infer) {
        corpus.schema = infer_schema(corpus.posts);
    } else {
        check_against_schema(corpus.posts, schema);
        corpus.schema = schema;
    }
    return corpus;
}

Corpus ingest_records(const std::filesystem::path& path, SchemaMode mode,
                      const CategoricalSchema& schema) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open corpus " + path.string());
    auto corpus = parse_records(in, mode, schema);
    corpus.provenance = path.string();
    return corpus;
}

void write_records(std::ostream& out, const std::vector<RawPost>& posts) {
    for (const auto& p : posts) {
        // Key order is fixed so output is byte-stable.
        out << "{\"id\":" << json(p.id).dump() << ",\"timestamp\":" << p.timestamp
            << ",\"text\":" << json(p.text).dump() << ",\"description\":" << json(p.description).dump()
            << ",\"state\":" << json(p.state).dump() << ",\"race\":" << json(p.race).dump()
            << ",\"race_pic\":" << json(p.race_pic).dump() << ",\"gender\":" << json(p.gender).dump()
            << ",\"label\":\"" << to_string(p.label) << "\"}\n";
    }
}

void write_records(const std::filesystem::path& path, const std::vector<RawPost>& posts) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    write_records(out, posts);
}

std::string sanitize_text(std::string_view text) {
    const auto is_space = [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
    };
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (is_space(text[i])) {
            out.push_back(text[i++]);
            continue;
        }
        std::size_t end = i;
        while (end < text.size() && !is_space(text[end])) ++end;
        const std::string_view token = text.substr(i, end - i);
        if (token.front() == '#') {
            out += kHashtagToken;
        } else {
            const auto http = token.find("http://");
            const auto https = token.find("https://");
            const auto url = std::min(http, https);
            if (url == std::string_view::npos) {
                out += token;
            } else {
                out += token.substr(0, url);
                out += kUrlToken;
            }
        }
        i = end;
    }
    return out;
}

std::size_t onehot_width(const CategoricalSchema& schema, const FeatureSet& selected) {
    std::size_t width = 0;
    for (const auto& name : selected) width += schema.feature(name).width();
    return width;
}

std::vector<float> encode_onehot(const RawPost& post, const CategoricalSchema& schema,
                                 const FeatureSet& selected) {
    for (const auto& name : selected)
        if (!schema.contains(name))
            throw InvalidArgument("selected feature \"" + name + "\" is not in the schema");
    std::vector<float> out;
    out.reserve(onehot_width(schema, selected));
    for (const auto& f : schema.features()) {
        if (!selected.contains(f.name)) continue;
        const auto& value = post.offline_value(f.name);
        const auto offset = out.size();
        out.resize(offset + f.width(), 0.0f);
        if (const auto idx = f.index_of(value)) {
            out[offset + *idx] = 1.0f;
        } else if (f.unknown_policy == UnknownPolicy::ExtraSlot) {
            out[offset + f.categories.size()] = 1.0f;
        } else {
            throw InvalidArgument("feature \"" + f.name + "\": value \"" + value +
                                  "\" is not in the schema");
        }
    }
    return out;
}

TimeSlices chronological_split(const Corpus& corpus, std::size_t k) {
    const std::size_t n = corpus.posts.size();
    if (k == 0) throw InvalidArgument("slice count must be positive");
    if (n == 0) throw InvalidArgument("cannot split an empty corpus");
    if (k > n)
        throw InvalidArgument("slice count " + std::to_string(k) + " exceeds corpus size " +
                              std::to_string(n));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& pa = corpus.posts[a];
        const auto& pb = corpus.posts[b];
        if (pa.timestamp != pb.timestamp) return pa.timestamp < pb.timestamp;
        return pa.id < pb.id;
    });

    TimeSlices slices;
    slices.k = k;
    slices.members.resize(k);
    const std::size_t base = n / k;
    const std::size_t extra = n % k;
    std::size_t pos = 0;
    for (std::size_t s = 0; s < k; ++s) {
        const std::size_t size = base + (s < extra ? 1 : 0);
        slices.members[s].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                 order.begin() + static_cast<std::ptrdiff_t>(pos + size));
        slices.boundaries.push_back(corpus.posts[order[pos]].timestamp);
        for (const auto idx : slices.members[s]) slices.assignment.emplace(corpus.posts[idx].id, s);
        pos += size;
    }
    slices.boundaries.push_back(corpus.posts[order.back()].timestamp);
    return slices;
}

std::vector<std::size_t> balance_indices(const std::vector<RawPost>& posts,
                                         const std::vector<std::size_t>& candidates,
                                         std::uint64_t seed) {
    std::vector<std::size_t> anti;
    std::vector<std::size_t> pro;
    for (const auto idx : candidates)
        (posts.at(idx).label == StanceLabel::Anti ? anti : pro).push_back(idx);
    if (anti.empty() || pro.empty())
        throw InvalidArgument(std::string("cannot balance: no ") + (anti.empty() ? "anti" : "pro") +
                              " posts");

    Rng rng(seed);
    auto& minority = anti.size() <= pro.size() ? anti : pro;
    auto& majority = anti.size() <= pro.size() ? pro : anti;
    // Partial Fisher-Yates: the first |minority| slots become a uniform sample.
    for (std::size_t i = 0; i < minority.size(); ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(majority.size() - i));
        std::swap(majority[i], majority[j]);
    }
    std::vector<std::size_t> out(minority);
    out.insert(out.end(), majority.begin(),
               majority.begin() + static_cast<std::ptrdiff_t>(minority.size()));
    rng.shuffle(std::span<std::size_t>(out));
    return out;
}

Corpus balance_sample(const Corpus& corpus, std::uint64_t seed) {
    std::vector<std::size_t> all(corpus.posts.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto picked = balance_indices(corpus.posts, all, seed);
    Corpus out;
    out.schema = corpus.schema;
    out.provenance = corpus.provenance;
    out.posts.reserve(picked.size());
    for (const auto idx : picked) out.posts.push_back(corpus.posts[idx]);
    return out;
}

void write_split_manifest(std::ostream& out, const Corpus& corpus, const TimeSlices& slices) {
    out << "id,slice\n";
    for (std::size_t s = 0; s < slices.k; ++s)
        for (const auto idx : slices.members[s])
            out << detail::csv_field(corpus.posts[idx].id) << ',' << s << '\n';
}

TimeSlices read_split_manifest(std::istream& in, const Corpus& corpus) {
    std::unordered_map<std::string_view, std::size_t> index;
    for (std::size_t i = 0; i < corpus.posts.size(); ++i) index.emplace(corpus.posts[i].id, i);

    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line) || (line != "id,slice" && line != "id,slice\r"))
        throw FormatError("split manifest: missing \"id,slice\" header");
    std::vector<std::pair<std::size_t, std::size_t>> rows;
    std::vector<bool> seen(corpus.posts.size(), false);
    std::vector<std::string> fields;
    std::size_t k = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto where = "split manifest line " + std::to_string(line_no) + ": ";
        if (!detail::split_csv_line(line, fields) || fields.size() != 2)
            throw FormatError(where + "expected id,slice");
        const auto it = index.find(fields[0]);
        if (it == index.end()) throw FormatError(where + "unknown id \"" + fields[0] + "\"");
        if (seen[it->second]) throw FormatError(where + "id \"" + fields[0] + "\" listed twice");
        std::size_t slice = 0;
        const auto res = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), slice);
        if (res.ec != std::errc() || res.ptr != fields[1].data() + fields[1].size())
            throw FormatError(where + "bad slice index \"" + fields[1] + "\"");
        seen[it->second] = true;
        rows.emplace_back(it->second, slice);
        k = std::max(k, slice + 1);
    }
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i]) throw FormatError("split manifest does not list id \"" + corpus.posts[i].id + "\"");

    TimeSlices slices;
    slices.k = k;
    slices.members.resize(k);
    for (const auto& [idx, s] : rows) {
        slices.members[s].push_back(idx);
        slices.assignment.emplace(corpus.posts[idx].id, s);
    }
    for (std::size_t s = 0; s < k; ++s) {
        auto& m = slices.members[s];
        if (m.empty()) throw FormatError("split manifest: slice " + std::to_string(s) + " is empty");
        std::sort(m.begin(), m.end(), [&](std::size_t a, std::size_t b) {
            const auto& pa = corpus.posts[a];
            const auto& pb = corpus.posts[b];
            return pa.timestamp != pb.timestamp ? pa.timestamp < pb.timestamp : pa.id < pb.id;
        });
        slices.boundaries.push_back(corpus.posts[m.front()].timestamp);
    }
    slices.boundaries.push_back(corpus.posts[slices.members.back().back()].timestamp);
    return slices;
}

}  // namespace covexplain::corpus
