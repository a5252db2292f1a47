#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <type_traits>

namespace covexplain::detail {

template <typename U>
    requires std::is_unsigned_v<U>
void put_le(std::ostream& out, U value) {
    char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i)
        bytes[i] = static_cast<char>((value >> (8 * i)) & 0xffu);
    out.write(bytes, sizeof(U));
}

template <typename U>
    requires std::is_unsigned_v<U>
bool get_le(std::istream& in, U& value) {
    unsigned char bytes[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) return false;
    value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(U(bytes[i]) << (8 * i));
    return true;
}

inline void put_le_f32(std::ostream& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_le_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

inline bool get_le_f32(std::istream& in, float& v) {
    std::uint32_t bits = 0;
    if (!get_le(in, bits)) return false;
    v = std::bit_cast<float>(bits);
    return true;
}

inline bool get_le_f64(std::istream& in, double& v) {
    std::uint64_t bits = 0;
    if (!get_le(in, bits)) return false;
    v = std::bit_cast<double>(bits);
    return true;
}

}  // namespace covexplain::detail
