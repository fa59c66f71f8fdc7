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

/**
 * @file line_coding.hpp
 * @brief Symbol-level codecs: 8b/10b with running disparity, the X^16 data
 *        scrambler, header/payload/link-command CRCs and training ordered
 *        sets.
 *
 * All functions are pure or operate on explicit state values.
 */

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "usb3sim/symbol.hpp"

namespace usb3sim {

// ---------------------------------------------------------------------------
// 8b/10b

enum class RunningDisparity : std::int8_t { Negative = -1, Positive = +1 };

constexpr int value_of(RunningDisparity rd) { return static_cast<int>(rd); }
constexpr RunningDisparity flip(RunningDisparity rd) {
  return rd == RunningDisparity::Negative ? RunningDisparity::Positive : RunningDisparity::Negative;
}

/// K.x.y code points as bytes ((y << 5) | x).
namespace kcode {
inline constexpr std::uint8_t K28_0 = 0x1C;
inline constexpr std::uint8_t K28_1 = 0x3C;
inline constexpr std::uint8_t K28_2 = 0x5C;
inline constexpr std::uint8_t K28_3 = 0x7C;
inline constexpr std::uint8_t K28_4 = 0x9C;
inline constexpr std::uint8_t K28_5 = 0xBC;
inline constexpr std::uint8_t K28_6 = 0xDC;
inline constexpr std::uint8_t K28_7 = 0xFC;
inline constexpr std::uint8_t K23_7 = 0xF7;
inline constexpr std::uint8_t K27_7 = 0xFB;
inline constexpr std::uint8_t K29_7 = 0xFD;
inline constexpr std::uint8_t K30_7 = 0xFE;

// SuperSpeed names for the control symbols used by this model.
inline constexpr std::uint8_t SKP = K28_1;
inline constexpr std::uint8_t SDP = K28_2;
inline constexpr std::uint8_t EDB = K28_3;
inline constexpr std::uint8_t COM = K28_5;
inline constexpr std::uint8_t SHP = K27_7;
inline constexpr std::uint8_t END = K29_7;
inline constexpr std::uint8_t SLC = K30_7;
inline constexpr std::uint8_t EPF = K23_7;
}  // namespace kcode

std::span<const std::uint8_t, 12> k_codes();
bool is_k_code(std::uint8_t byte);

class CodingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EncodeResult {
  Symbol symbol;
  RunningDisparity rd;
};

/// Throws CodingError for a K flag on a byte that is not one of the 12 K-codes.
EncodeResult encode_8b10b(std::uint8_t byte, bool is_k, RunningDisparity rd);

enum class DecodeStatus : std::uint8_t { Ok, CodeViolation, DisparityError };

struct DecodeResult {
  std::uint8_t byte = 0;
  bool is_k = false;
  RunningDisparity rd = RunningDisparity::Negative;
  DecodeStatus status = DecodeStatus::Ok;

  bool ok() const { return status == DecodeStatus::Ok; }
};

/// On a disparity error the byte is still reported and `rd` resynchronizes to
/// the received symbol. On a code violation `rd` follows the symbol's own
/// disparity when it is +-2 and is otherwise unchanged.
DecodeResult decode_8b10b(Symbol symbol, RunningDisparity rd);

/// Ones minus zeros over the 10 bits (-2, 0 or +2 for legal symbols).
int symbol_disparity(std::uint16_t ten_bits);

// ---------------------------------------------------------------------------
// Scrambler

/// Galois LFSR for X^16 + X^5 + X^4 + X^3 + 1, reset to 0xFFFF when training
/// completes. Data bytes are XORed LSB first with the register's bit 15; the
/// register is clocked once per bit.
struct ScramblerConfig {
  static constexpr std::uint16_t kTaps = 0x0039;  // X^5 + X^4 + X^3 + 1
  static constexpr std::uint16_t kSeed = 0xFFFF;
};

struct ScramblerState {
  std::uint16_t lfsr = ScramblerConfig::kSeed;
  friend bool operator==(const ScramblerState&, const ScramblerState&) = default;
};

/// Table-driven byte-at-a-time keystream.
class Scrambler {
 public:
  explicit Scrambler(ScramblerState state = {});

  std::uint8_t next_key();
  std::uint8_t apply(std::uint8_t byte) { return byte ^ next_key(); }
  void apply(std::span<std::uint8_t> bytes);
  void reset() { state_ = ScramblerState{}; }
  ScramblerState state() const { return state_; }

 private:
  ScramblerState state_;
};

/// Throws std::invalid_argument on an all-zero (locked) state.
std::pair<std::vector<std::uint8_t>, ScramblerState> scramble(std::span<const std::uint8_t> bytes,
                                                              ScramblerState state);
std::pair<std::vector<std::uint8_t>, ScramblerState> descramble(
    std::span<const std::uint8_t> bytes, ScramblerState state);

// ---------------------------------------------------------------------------
// CRC

struct CrcSpec {
  unsigned width;
  std::uint32_t poly;
  std::uint32_t init;
  bool reflect_in;
  bool reflect_out;
  std::uint32_t xor_out;
};

/// CRC-16/USB over the 12-byte header body.
inline constexpr CrcSpec kCrc16Header{16, 0x8005, 0xFFFF, true, true, 0xFFFF};
/// CRC-32 (IEEE 802.3) over data payloads.
inline constexpr CrcSpec kCrc32Payload{32, 0x04C11DB7, 0xFFFFFFFF, true, true, 0xFFFFFFFF};
/// CRC-5/USB over the 11-bit link control word.
inline constexpr CrcSpec kCrc5Lcw{5, 0x05, 0x1F, true, true, 0x1F};

inline constexpr std::size_t kHeaderBodyBytes = 12;
inline constexpr std::size_t kMaxPayloadBytes = 1024;

/// Reference implementation: one bit per step, MSB-first register.
std::uint32_t crc_bitwise(const CrcSpec& spec, std::span<const std::uint8_t> bytes);
/// `nbits` message bits taken LSB first from `bits`.
std::uint32_t crc_bitwise_bits(const CrcSpec& spec, std::uint64_t bits, unsigned nbits);

std::uint16_t crc16_header(std::span<const std::uint8_t> body);
/// Throws std::length_error beyond kMaxPayloadBytes.
std::uint32_t crc32_payload(std::span<const std::uint8_t> payload);
std::uint8_t crc5_lcw(std::uint16_t eleven_bits);

bool check_crc16_header(std::span<const std::uint8_t> body, std::uint16_t crc);
bool check_crc32_payload(std::span<const std::uint8_t> payload, std::uint32_t crc);
bool check_crc5_lcw(std::uint16_t eleven_bits, std::uint8_t crc);

// ---------------------------------------------------------------------------
// Training ordered sets

enum class OrderedSetKind : std::uint8_t { TSEQ, TS1, TS2 };

const char* to_string(OrderedSetKind kind);

/// A decoded symbol: the byte, its K flag and whether decoding succeeded.
struct CodePoint {
  std::uint8_t byte = 0;
  bool is_k = false;
  bool valid = true;

  friend bool operator==(const CodePoint&, const CodePoint&) = default;
};

/// Block contents for each ordered set. The defaults follow SuperSpeed
/// layouts: TSEQ is a comma plus 31 training bytes, TS1/TS2 are four commas,
/// two link-configuration bytes and ten identifier bytes.
struct OrderedSetConfig {
  std::vector<CodePoint> tseq;
  std::vector<CodePoint> ts1;
  std::vector<CodePoint> ts2;
  std::size_t consecutive_required = 2;

  static OrderedSetConfig defaults();
  const std::vector<CodePoint>& block(OrderedSetKind kind) const;
};

struct OrderedSet {
  OrderedSetKind kind;
  std::vector<Symbol> symbols;
};

/// Encodes one block, threading the transmitter's running disparity.
OrderedSet ordered_set_make(OrderedSetKind kind, RunningDisparity& rd,
                            const OrderedSetConfig& cfg = OrderedSetConfig::defaults());

struct BlockMatch {
  OrderedSetKind kind;
  std::size_t position;  // index of the block's first symbol
  std::size_t run;       // consecutive matching blocks ending here
};

struct OrderedSetDetection {
  OrderedSetKind kind;
  std::size_t position;  // first symbol of the first block of the run
};

/// Streaming recognizer. Every clean block is reported as a BlockMatch; a
/// detection fires when a run reaches `consecutive_required`.
class OrderedSetScanner {
 public:
  explicit OrderedSetScanner(OrderedSetConfig cfg = OrderedSetConfig::defaults());

  struct Result {
    std::optional<BlockMatch> match;
    std::optional<OrderedSetDetection> detection;
  };

  Result push(const CodePoint& cp);
  void reset();
  std::size_t position() const { return count_; }

 private:
  OrderedSetConfig cfg_;
  std::vector<CodePoint> window_;  // ring buffer of the last max-block symbols
  std::size_t count_ = 0;
  struct RunState {
    std::size_t last_end = 0;  // one past the last matched block
    std::size_t run = 0;
    std::size_t run_start = 0;
  };
  std::array<RunState, 3> runs_{};
};

/// Decodes `symbols` starting from `rd` and returns every detection.
std::vector<OrderedSetDetection> ordered_set_scan(
    std::span<const Symbol> symbols, const OrderedSetConfig& cfg = OrderedSetConfig::defaults(),
    RunningDisparity rd = RunningDisparity::Negative);

}  // namespace usb3sim
