/*
 * Copyright 2026 The usb3sim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// 8b/10b tables are built at first use from the 5b/6b and 3b/4b sub-block
// codes instead of being transcribed symbol by symbol.

#include <algorithm>
#include <bit>
#include <string>

#include "usb3sim/line_coding.hpp"

namespace usb3sim {
namespace {

// abcdei for D.x at RD-; a is the most significant bit.
constexpr std::array<std::uint8_t, 32> k6bNegative = {
    0b100111, 0b011101, 0b101101, 0b110001, 0b110101, 0b101001, 0b011001, 0b111000,
    0b111001, 0b100101, 0b010101, 0b110100, 0b001101, 0b101100, 0b011100, 0b010111,
    0b011011, 0b100011, 0b010011, 0b110010, 0b001011, 0b101010, 0b011010, 0b111010,
    0b110011, 0b100110, 0b010110, 0b110110, 0b001110, 0b101110, 0b011110, 0b101011};

// fghj for D.x.y at RD-; index 7 is the primary P7 form.
constexpr std::array<std::uint8_t, 8> k4bNegative = {0b1011, 0b1001, 0b0101, 0b1100,
                                                     0b1101, 0b1010, 0b0110, 0b1110};
constexpr std::uint8_t k4bAlt7Negative = 0b0111;
constexpr std::uint8_t k6bK28Negative = 0b001111;

constexpr std::array<std::uint8_t, 12> kKCodes = {
    kcode::K28_0, kcode::K28_1, kcode::K28_2, kcode::K28_3, kcode::K28_4, kcode::K28_5,
    kcode::K28_6, kcode::K28_7, kcode::K23_7, kcode::K27_7, kcode::K29_7, kcode::K30_7};

std::uint8_t six_bits(unsigned x, RunningDisparity rd) {
  const std::uint8_t neg = k6bNegative[x];
  if (rd == RunningDisparity::Negative) return neg;
  // D.07 is balanced but still has two forms.
  if (std::popcount(neg) != 3 || x == 7) return static_cast<std::uint8_t>(~neg & 0x3F);
  return neg;
}

std::uint8_t four_bits(unsigned x, unsigned y, RunningDisparity rd) {
  bool alt = false;
  if (y == 7) {
    alt = (rd == RunningDisparity::Negative && (x == 17 || x == 18 || x == 20)) ||
          (rd == RunningDisparity::Positive && (x == 11 || x == 13 || x == 14));
  }
  const std::uint8_t neg = alt ? k4bAlt7Negative : k4bNegative[y];
  if (rd == RunningDisparity::Negative) return neg;
  if (std::popcount(neg) != 2 || y == 3) return static_cast<std::uint8_t>(~neg & 0x0F);
  return neg;
}

RunningDisparity after(RunningDisparity rd, unsigned ones, unsigned width) {
  if (2 * ones == width) return rd;
  return 2 * ones > width ? RunningDisparity::Positive : RunningDisparity::Negative;
}

std::uint16_t encode_data(std::uint8_t byte, RunningDisparity rd) {
  const unsigned x = byte & 0x1F;
  const unsigned y = byte >> 5;
  const std::uint8_t six = six_bits(x, rd);
  const RunningDisparity mid = after(rd, std::popcount(six), 6);
  const std::uint8_t four = four_bits(x, y, mid);
  return static_cast<std::uint16_t>((six << 4) | four);
}

std::uint16_t encode_k(std::uint8_t byte, RunningDisparity rd) {
  const unsigned x = byte & 0x1F;
  const unsigned y = byte >> 5;
  // The RD- form is a positive 6b block followed by the 4b block chosen at
  // RD+ (with the alternate form for y = 7); the RD+ form is its complement.
  const std::uint8_t six = x == 28 ? k6bK28Negative : k6bNegative[x];
  const std::uint8_t four =
      y == 7 ? static_cast<std::uint8_t>(~k4bAlt7Negative & 0x0F)
             : four_bits(x, y, RunningDisparity::Positive);
  const auto neg = static_cast<std::uint16_t>((six << 4) | four);
  return rd == RunningDisparity::Negative ? neg : static_cast<std::uint16_t>(~neg & 0x3FF);
}

struct DecodeEntry {
  std::uint8_t byte = 0;
  bool is_k = false;
  bool valid = false;
};

struct Tables {
  // [rd index][k][byte] -> ten bits; 0xFFFF marks an illegal K.
  std::array<std::array<std::array<std::uint16_t, 256>, 2>, 2> encode{};
  std::array<std::array<DecodeEntry, 1024>, 2> decode{};

  Tables() {
    for (int r = 0; r < 2; ++r) {
      const auto rd = r == 0 ? RunningDisparity::Negative : RunningDisparity::Positive;
      for (unsigned b = 0; b < 256; ++b) {
        const auto byte = static_cast<std::uint8_t>(b);
        encode[r][0][b] = encode_data(byte, rd);
        encode[r][1][b] = is_k_code(byte) ? encode_k(byte, rd) : 0xFFFF;
        add(r, encode[r][0][b], byte, false);
        if (is_k_code(byte)) add(r, encode[r][1][b], byte, true);
      }
    }
  }

  void add(int r, std::uint16_t sym, std::uint8_t byte, bool k) {
    DecodeEntry& e = decode[r][sym];
    if (e.valid && (e.byte != byte || e.is_k != k)) {
      throw std::logic_error("8b10b table collision at symbol " + std::to_string(sym));
    }
    e = DecodeEntry{byte, k, true};
  }
};

const Tables& tables() {
  static const Tables t;
  return t;
}

constexpr int index_of(RunningDisparity rd) { return rd == RunningDisparity::Negative ? 0 : 1; }

}  // namespace

std::span<const std::uint8_t, 12> k_codes() { return kKCodes; }

bool is_k_code(std::uint8_t byte) {
  return std::find(kKCodes.begin(), kKCodes.end(), byte) != kKCodes.end();
}

int symbol_disparity(std::uint16_t ten_bits) {
  const int ones = std::popcount(static_cast<unsigned>(ten_bits & 0x3FF));
  return 2 * ones - 10;
}

EncodeResult encode_8b10b(std::uint8_t byte, bool is_k, RunningDisparity rd) {
  const std::uint16_t sym = tables().encode[index_of(rd)][is_k ? 1 : 0][byte];
  if (sym == 0xFFFF) throw CodingError("not a K-code: " + std::to_string(byte));
  const int d = symbol_disparity(sym);
  const RunningDisparity next =
      d == 0 ? rd : (d > 0 ? RunningDisparity::Positive : RunningDisparity::Negative);
  return {Symbol{sym, is_k}, next};
}

DecodeResult decode_8b10b(Symbol symbol, RunningDisparity rd) {
  const std::uint16_t sym = symbol.ten_bits & 0x3FF;
  const int d = symbol_disparity(sym);
  const RunningDisparity next =
      d == 0 ? rd : (d > 0 ? RunningDisparity::Positive : RunningDisparity::Negative);
  const Tables& t = tables();
  if (const DecodeEntry& e = t.decode[index_of(rd)][sym]; e.valid) {
    return {e.byte, e.is_k, next, DecodeStatus::Ok};
  }
  if (const DecodeEntry& e = t.decode[index_of(flip(rd))][sym]; e.valid) {
    // A balanced symbol that is only legal at the other disparity leaves the
    // line at that other disparity.
    return {e.byte, e.is_k, d == 0 ? flip(rd) : next, DecodeStatus::DisparityError};
  }
  return {0, false, (d == 2 || d == -2) ? next : rd, DecodeStatus::CodeViolation};
}

}  // namespace usb3sim
