#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ecn {

/// Incremental 64-bit FNV-1a. Stable across processes and platforms, so it
/// can key deterministic fakes.
class Fnv1a64 {
public:
    Fnv1a64& add(std::string_view bytes);
    Fnv1a64& add(std::uint64_t value);
    /// Length-prefixed, so ("ab","c") and ("a","bc") hash differently.
    Fnv1a64& add_field(std::string_view text);
    std::uint64_t value() const noexcept { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

/// Maps a 64-bit hash to a double in [0, 1).
double unit_interval(std::uint64_t bits);

std::string sha256_hex(std::string_view bytes);

}  // namespace ecn
