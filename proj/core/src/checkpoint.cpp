#include "covexplain/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include "binary_io.hpp"
#include "covexplain/error.hpp"

namespace covexplain::checkpoint {

namespace {

constexpr char kMagic[4] = {'C', 'V', 'X', 'M'};
constexpr std::uint8_t kMaxRank = 8;

[[noreturn]] void fail(const std::string& what) { throw FormatError("checkpoint: " + what); }

}  // namespace

std::uint64_t Tensor::element_count() const noexcept {
    std::uint64_t n = 1;
    for (const auto d : shape) n *= d;
    return n;
}

Tensor Tensor::from_f32(std::string name, std::vector<std::uint64_t> shape, std::vector<float> values) {
    Tensor t{std::move(name), std::move(shape), DType::F32, std::move(values), {}};
    if (t.element_count() != t.f32.size()) throw InvalidArgument("tensor " + t.name + ": shape does not match data");
    return t;
}

Tensor Tensor::from_f64(std::string name, std::vector<std::uint64_t> shape, std::vector<double> values) {
    Tensor t{std::move(name), std::move(shape), DType::F64, {}, std::move(values)};
    if (t.element_count() != t.f64.size()) throw InvalidArgument("tensor " + t.name + ": shape does not match data");
    return t;
}

const std::string& Checkpoint::get(std::string_view key) const {
    const auto it = config.find(key);
    if (it == config.end()) fail("missing config key \"" + std::string(key) + "\"");
    return it->second;
}

std::string Checkpoint::get_or(std::string_view key, std::string_view fallback) const {
    const auto it = config.find(key);
    return it == config.end() ? std::string(fallback) : it->second;
}

const Tensor& Checkpoint::tensor(std::string_view name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    fail("missing tensor \"" + std::string(name) + "\"");
}

bool Checkpoint::has_tensor(std::string_view name) const noexcept {
    for (const auto& t : tensors)
        if (t.name == name) return true;
    return false;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    std::string text;
    for (const auto& [key, value] : ckpt.config) {
        if (key.empty() || key.find_first_of("=\n") != std::string::npos)
            throw InvalidArgument("checkpoint: invalid config key \"" + key + "\"");
        if (value.find('\n') != std::string::npos)
            throw InvalidArgument("checkpoint: config value for \"" + key + "\" spans lines");
        text += key;
        text += '=';
        text += value;
        text += '\n';
    }
    out.write(kMagic, 4);
    detail::put_le<std::uint16_t>(out, kCvxmVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        if (t.name.empty() || t.name.size() > 0xffff) throw InvalidArgument("checkpoint: bad tensor name");
        if (t.shape.size() > kMaxRank) throw InvalidArgument("checkpoint: tensor " + t.name + " has too many dims");
        const auto n = t.element_count();
        if ((t.dtype == DType::F32 ? t.f32.size() : t.f64.size()) != n)
            throw InvalidArgument("checkpoint: tensor " + t.name + " shape does not match data");
        detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
        detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
        for (const auto d : t.shape) detail::put_le<std::uint64_t>(out, d);
        if (t.dtype == DType::F32)
            for (const float v : t.f32) detail::put_le_f32(out, v);
        else
            for (const double v : t.f64) detail::put_le_f64(out, v);
    }
    if (!out) throw Error("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4)) fail("truncated header");
    if (!std::equal(magic, magic + 4, kMagic)) fail("bad magic");
    std::uint16_t version = 0;
    if (!detail::get_le(in, version)) fail("truncated header");
    if (version != kCvxmVersion) fail("unsupported version " + std::to_string(version));
    std::uint32_t text_len = 0;
    if (!detail::get_le(in, text_len)) fail("truncated header");
    std::string text(text_len, '\0');
    if (text_len > 0 && !in.read(text.data(), text_len)) fail("truncated config block");

    Checkpoint ckpt;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        if (nl == std::string::npos) fail("unterminated config line");
        const std::string_view line(text.data() + pos, nl - pos);
        const auto eq = line.find('=');
        if (eq == std::string_view::npos || eq == 0) fail("malformed config line \"" + std::string(line) + "\"");
        ckpt.config.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
        pos = nl + 1;
    }

    std::uint32_t count = 0;
    if (!detail::get_le(in, count)) fail("truncated tensor table");
    for (std::uint32_t i = 0; i < count; ++i) {
        Tensor t;
        std::uint16_t name_len = 0;
        if (!detail::get_le(in, name_len)) fail("truncated tensor header");
        t.name.resize(name_len);
        if (name_len > 0 && !in.read(t.name.data(), name_len)) fail("truncated tensor header");
        std::uint8_t dtype = 0;
        std::uint8_t rank = 0;
        if (!detail::get_le(in, dtype) || !detail::get_le(in, rank)) fail("truncated tensor header");
        if (dtype > 1) fail("tensor " + t.name + " has unknown dtype " + std::to_string(dtype));
        if (rank > kMaxRank) fail("tensor " + t.name + " has rank " + std::to_string(rank));
        t.dtype = static_cast<DType>(dtype);
        t.shape.resize(rank);
        for (auto& d : t.shape)
            if (!detail::get_le(in, d)) fail("truncated tensor header");
        const auto n = t.element_count();
        if (n > (std::uint64_t{1} << 32)) fail("tensor " + t.name + " is implausibly large");
        if (t.dtype == DType::F32) {
            t.f32.resize(n);
            for (auto& v : t.f32)
                if (!detail::get_le_f32(in, v)) fail("truncated payload in tensor " + t.name);
        } else {
            t.f64.resize(n);
            for (auto& v : t.f64)
                if (!detail::get_le_f64(in, v)) fail("truncated payload in tensor " + t.name);
        }
        ckpt.tensors.push_back(std::move(t));
    }
    if (in.peek() != std::char_traits<char>::eof()) fail("trailing bytes after last tensor");
    return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    write_checkpoint(out, ckpt);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return read_checkpoint(in);
}

}  // namespace covexplain::checkpoint
