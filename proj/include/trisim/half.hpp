// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>

namespace trisim {

// IEEE-754 binary16 conversion, round-to-nearest-even. Used by the reduced
// precision training mode for activation storage and parameter copies.

inline std::uint16_t float_to_half(float f) {
  std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  std::uint32_t sign = (x >> 16) & 0x8000u;
  std::uint32_t exp = (x >> 23) & 0xffu;
  std::uint32_t mant = x & 0x7fffffu;

  if (exp == 0xffu) {  // inf / nan
    return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x200u : 0u));
  }
  // Re-bias from 127 to 15.
  std::int32_t e = static_cast<std::int32_t>(exp) - 127 + 15;
  if (e >= 0x1f) {  // overflow -> inf
    return static_cast<std::uint16_t>(sign | 0x7c00u);
  }
  if (e <= 0) {
    // Subnormal half or zero. Shift the (implicit-one) mantissa right.
    if (e < -10) return static_cast<std::uint16_t>(sign);
    mant |= 0x800000u;
    std::uint32_t shift = static_cast<std::uint32_t>(14 - e);
    std::uint32_t half_mant = mant >> shift;
    std::uint32_t rem = mant & ((1u << shift) - 1u);
    std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half_mant & 1u))) half_mant++;
    return static_cast<std::uint16_t>(sign | half_mant);
  }
  std::uint32_t half_mant = mant >> 13;
  std::uint32_t rem = mant & 0x1fffu;
  std::uint16_t h = static_cast<std::uint16_t>(sign | (static_cast<std::uint32_t>(e) << 10) | half_mant);
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) h++;  // may carry into exponent; that is correct
  return h;
}

inline float half_to_float(std::uint16_t h) {
  std::uint32_t sign = (static_cast<std::uint32_t>(h) & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1fu;
  std::uint32_t mant = h & 0x3ffu;
  std::uint32_t x;
  if (exp == 0) {
    if (mant == 0) {
      x = sign;
    } else {
      // Normalize the subnormal.
      std::int32_t e = -1;
      do {
        e++;
        mant <<= 1;
      } while ((mant & 0x400u) == 0);
      mant &= 0x3ffu;
      x = sign | (static_cast<std::uint32_t>(113 - e) << 23) | (mant << 13);
    }
  } else if (exp == 0x1fu) {
    x = sign | 0x7f800000u | (mant << 13);
  } else {
    x = sign | ((exp + 112u) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(x);
}

// Round a float through the binary16 grid.
inline float half_round_trip(float f) { return half_to_float(float_to_half(f)); }

}  // namespace trisim
