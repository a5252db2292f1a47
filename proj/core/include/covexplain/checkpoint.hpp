#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace covexplain::checkpoint {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct Tensor {
    std::string name;
    std::vector<std::uint64_t> shape;
    DType dtype = DType::F32;
    std::vector<float> f32;
    std::vector<double> f64;

    std::uint64_t element_count() const noexcept;

    static Tensor from_f32(std::string name, std::vector<std::uint64_t> shape, std::vector<float> values);
    static Tensor from_f64(std::string name, std::vector<std::uint64_t> shape, std::vector<double> values);

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline constexpr std::uint16_t kCvxmVersion = 1;

// Model container shared by the MLP and the baselines. Config values are
// single-line UTF-8 strings; keys are written in sorted order.
struct Checkpoint {
    std::map<std::string, std::string, std::less<>> config;
    std::vector<Tensor> tensors;

    const std::string& get(std::string_view key) const;
    std::string get_or(std::string_view key, std::string_view fallback) const;
    const Tensor& tensor(std::string_view name) const;
    bool has_tensor(std::string_view name) const noexcept;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// CVXM, little-endian: "CVXM", u16 version, u32 config byte length, config
// text ("key=value\n" lines), u32 tensor count, then per tensor: u16 name
// length, name, u8 dtype, u8 rank, rank x u64 dims, payload.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace covexplain::checkpoint
