#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace unialign {

// Payload encoding shared by checkpoints and feature caches: raw 64-bit
// floats, little-endian, independent of host byte order.

inline void write_le_doubles(std::ostream& out, const std::vector<double>& values) {
    for (double v : values) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        char bytes[8];
        for (int k = 0; k < 8; ++k) bytes[k] = static_cast<char>((bits >> (8 * k)) & 0xff);
        out.write(bytes, 8);
    }
}

inline void read_le_doubles(std::istream& in, std::vector<double>& values) {
    for (double& v : values) {
        char bytes[8];
        if (!in.read(bytes, 8)) throw std::runtime_error("payload truncated");
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[k])) << (8 * k);
        v = std::bit_cast<double>(bits);
    }
}

}  // namespace unialign
