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

#include <string>

#include "usb3sim/line_coding.hpp"

namespace usb3sim {
namespace {

std::uint32_t reflect(std::uint32_t v, unsigned width) {
  std::uint32_t r = 0;
  for (unsigned i = 0; i < width; ++i) {
    if (v & (1u << i)) r |= 1u << (width - 1 - i);
  }
  return r;
}

std::uint32_t mask_of(unsigned width) {
  return width == 32 ? 0xFFFFFFFFu : ((1u << width) - 1);
}

struct BitwiseCrc {
  const CrcSpec& spec;
  std::uint32_t reg;

  explicit BitwiseCrc(const CrcSpec& s) : spec(s), reg(s.init & mask_of(s.width)) {}

  void feed_bit(unsigned bit) {
    const unsigned top = (reg >> (spec.width - 1)) & 1u;
    reg = (reg << 1) & mask_of(spec.width);
    if (top ^ bit) reg ^= spec.poly;
  }

  void feed_byte(std::uint8_t b) {
    for (int i = 0; i < 8; ++i) {
      feed_bit(spec.reflect_in ? (b >> i) & 1u : (b >> (7 - i)) & 1u);
    }
  }

  std::uint32_t finish() const {
    const std::uint32_t r = spec.reflect_out ? reflect(reg, spec.width) : reg;
    return (r ^ spec.xor_out) & mask_of(spec.width);
  }
};

// Reflected byte tables derived from the bitwise engine.
template <typename T>
struct ReflectedTable {
  std::array<T, 256> entries{};
  explicit ReflectedTable(const CrcSpec& spec) {
    const T poly = static_cast<T>(reflect(spec.poly, spec.width));
    for (unsigned i = 0; i < 256; ++i) {
      T r = static_cast<T>(i);
      for (int k = 0; k < 8; ++k) r = static_cast<T>((r & 1) ? (r >> 1) ^ poly : r >> 1);
      entries[i] = r;
    }
  }
};

}  // namespace

std::uint32_t crc_bitwise(const CrcSpec& spec, std::span<const std::uint8_t> bytes) {
  BitwiseCrc crc(spec);
  for (auto b : bytes) crc.feed_byte(b);
  return crc.finish();
}

std::uint32_t crc_bitwise_bits(const CrcSpec& spec, std::uint64_t bits, unsigned nbits) {
  BitwiseCrc crc(spec);
  for (unsigned i = 0; i < nbits; ++i) {
    const unsigned idx = spec.reflect_in ? i : nbits - 1 - i;
    crc.feed_bit(static_cast<unsigned>((bits >> idx) & 1u));
  }
  return crc.finish();
}

std::uint16_t crc16_header(std::span<const std::uint8_t> body) {
  static const ReflectedTable<std::uint16_t> table(kCrc16Header);
  std::uint16_t r = static_cast<std::uint16_t>(reflect(kCrc16Header.init, 16));
  for (auto b : body) r = static_cast<std::uint16_t>((r >> 8) ^ table.entries[(r ^ b) & 0xFF]);
  return static_cast<std::uint16_t>(r ^ kCrc16Header.xor_out);
}

std::uint32_t crc32_payload(std::span<const std::uint8_t> payload) {
  if (payload.size() > kMaxPayloadBytes) {
    throw std::length_error("payload of " + std::to_string(payload.size()) +
                            " bytes exceeds the 1024-byte maximum");
  }
  static const ReflectedTable<std::uint32_t> table(kCrc32Payload);
  std::uint32_t r = reflect(kCrc32Payload.init, 32);
  for (auto b : payload) r = (r >> 8) ^ table.entries[(r ^ b) & 0xFF];
  return r ^ kCrc32Payload.xor_out;
}

std::uint8_t crc5_lcw(std::uint16_t eleven_bits) {
  return static_cast<std::uint8_t>(crc_bitwise_bits(kCrc5Lcw, eleven_bits & 0x7FF, 11));
}

bool check_crc16_header(std::span<const std::uint8_t> body, std::uint16_t crc) {
  return crc16_header(body) == crc;
}

bool check_crc32_payload(std::span<const std::uint8_t> payload, std::uint32_t crc) {
  return payload.size() <= kMaxPayloadBytes && crc32_payload(payload) == crc;
}

bool check_crc5_lcw(std::uint16_t eleven_bits, std::uint8_t crc) {
  return crc5_lcw(eleven_bits) == (crc & 0x1F);
}

}  // namespace usb3sim
