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
 * @file phy.hpp
 * @brief LFPS timing, burst generation and classification, the PIPE control
 *        signals and receiver detection.
 *
 * LFPS is produced the way a transceiver without an LFPS block does it: with
 * 8b10b bypassed, two all-ones 40-bit words followed by two all-zeros words
 * give one 32 ns square-wave cycle.
 */

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "usb3sim/link_state.hpp"
#include "usb3sim/sim_core.hpp"
#include "usb3sim/trace.hpp"

namespace usb3sim {

enum class LfpsKind : std::uint8_t { Polling, Ping, Reset, U1Exit, U2Exit, U1Wakeup };

inline constexpr std::array<LfpsKind, 6> kAllLfpsKinds = {
    LfpsKind::Polling, LfpsKind::Ping,   LfpsKind::Reset,
    LfpsKind::U1Exit,  LfpsKind::U2Exit, LfpsKind::U1Wakeup};

std::string_view to_string(LfpsKind kind);

/// One row of the transmitter timing table.
struct LfpsTiming {
  LfpsKind kind = LfpsKind::Polling;
  SimTime burst_min;
  std::optional<SimTime> burst_normal;
  SimTime burst_max;
  std::optional<std::uint32_t> min_cycles;
  std::optional<SimTime> repeat_min;
  std::optional<SimTime> repeat_normal;
  std::optional<SimTime> repeat_max;

  bool has_repeat() const { return repeat_min.has_value(); }
  bool burst_in_window(SimTime t) const { return t >= burst_min && t <= burst_max; }
  bool repeat_in_window(SimTime t) const {
    return has_repeat() && t >= *repeat_min && t <= *repeat_max;
  }
};

/// The unscaled transmitter timing table, one row per kind in kAllLfpsKinds
/// order.
const std::array<LfpsTiming, 6>& lfps_timing_table();

/// Timing row with the millisecond-range values (Ping repeat, Reset burst)
/// divided by `scale_divisor`. A divisor of 1 returns the table row.
LfpsTiming lfps_timing(LfpsKind kind, std::uint32_t scale_divisor = 1);

inline constexpr SimTime kLfpsPeriod = SimTime::ns(32);
inline constexpr SimTime kLfpsPeriodMin = SimTime::ns(20);
inline constexpr SimTime kLfpsPeriodMax = SimTime::ns(100);

/// A concrete burst as emitted or as measured at the receiver.
struct LfpsBurst {
  SimTime t_period;
  std::uint32_t n_cycles = 0;
  std::optional<SimTime> t_repeat;
  SimTime start;

  SimTime duration() const { return t_period * n_cycles; }
};

/// Cycle count and repeat interval this model emits for each kind.
struct LfpsShape {
  std::uint32_t cycles = 0;
  std::optional<SimTime> repeat;
};

LfpsShape lfps_shape(LfpsKind kind, std::uint32_t scale_divisor = 1);

/// PIPE-style control and status pins. txpd/rxpd use the low two bits.
struct PipeSignals {
  bool txdetectrx = false;
  bool txelecidle = true;
  std::uint8_t txpd = 0;
  std::uint8_t rxpd = 0;
  bool rxelecidle = true;
  bool phystatus = false;

  bool operator==(const PipeSignals&) const = default;
};

/// Link initialisation needs txpd=0, rxpd=0, txdetectrx=1, txelecidle=1.
/// Waking a partner needs txpd=01, rxpd=01 and txelecidle=0.
enum class LfpsPurpose : std::uint8_t { LinkInit, Wake };

LfpsPurpose lfps_purpose(LfpsKind kind);
bool lfps_permitted(const PipeSignals& s, LfpsPurpose purpose);

class LfpsNotPermitted : public std::logic_error {
 public:
  LfpsNotPermitted() : std::logic_error("LFPS not permitted in this signal state") {}
};

/// First `count` bursts of the stream for `kind`, starting at `start`.
/// Throws LfpsNotPermitted when `signals` do not allow this kind.
std::vector<LfpsBurst> lfps_generate(LfpsKind kind, const PipeSignals& signals, SimTime start,
                                     std::size_t count, std::uint32_t scale_divisor = 1);

inline constexpr unsigned kPhyWordBits = 40;
inline constexpr SimTime kPhyWordTime = kBitTime * kPhyWordBits;

struct PhyWord {
  std::uint64_t bits = 0;  // low 40 bits used
  bool bypass_8b10b = false;

  bool operator==(const PhyWord&) const = default;
};

inline constexpr std::uint64_t kPhyWordOnes = 0xFF'FFFF'FFFFULL;

/// Two all-ones words then two all-zeros words per cycle, all bypassing the
/// 8b10b encoder.
std::vector<PhyWord> pack_lfps_words(std::uint32_t cycles);

/// Line time occupied by `words` transceiver words.
constexpr SimTime phy_words_time(std::size_t words) { return kPhyWordTime * words; }

/// Kind whose burst window (and repeat window when a repeat was measured)
/// contains the observation. Overlaps are resolved by `context`; nullopt
/// means unrecognized.
std::optional<LfpsKind> lfps_classify(const LfpsBurst& observed, LinkState context,
                                      std::uint32_t scale_divisor = 1);

struct PhyConfig {
  bool partner_present = true;
  SimTime detect_delay = SimTime::us(1);
  SimTime phystatus_pulse = SimTime::ns(8);
  std::uint32_t scale_divisor = 1;
};

class DetectDuringTransmit : public std::logic_error {
 public:
  DetectDuringTransmit() : std::logic_error("detect during active transmit") {}
};

/// The PHY of one link partner: owns the PIPE signals, drives LFPS onto its
/// transmit lane and measures LFPS arriving from the partner.
class PhyPort {
 public:
  using LfpsListener = std::function<void(std::optional<LfpsKind>, const LfpsBurst&)>;
  using DetectListener = std::function<void(bool present)>;
  using BurstListener = std::function<void(LfpsKind)>;

  PhyPort(Simulator& sim, Endpoint side, SerialLane& tx, PhyConfig cfg, Tracer* tracer = nullptr);

  const PipeSignals& signals() const { return sig_; }
  const PhyConfig& config() const { return cfg_; }

  void set_power(std::uint8_t txpd, std::uint8_t rxpd);
  void set_txelecidle(bool v);
  void set_txdetectrx(bool v);

  void on_detect(DetectListener l) { detect_listener_ = std::move(l); }
  void on_lfps(LfpsListener l) { lfps_listener_ = std::move(l); }
  /// Fires when each locally generated burst has finished.
  void on_burst_sent(BurstListener l) { burst_listener_ = std::move(l); }
  void set_context(std::function<LinkState()> ctx) { context_ = std::move(ctx); }

  /// Asserts txdetectrx and reports the outcome after the detect delay with a
  /// phystatus pulse.
  void receiver_detect();
  bool detect_in_progress() const { return detecting_; }

  /// Starts emitting `kind`; repeating kinds continue until stop_lfps().
  void start_lfps(LfpsKind kind);
  /// Stops further bursts. A burst already on the wire completes.
  void stop_lfps();
  bool lfps_active() const { return lfps_active_; }
  std::uint64_t bursts_sent() const { return bursts_sent_; }

  /// Receive-side LFPS edges from the partner's transmit lane.
  void lfps_edge(bool active, const SerialLane::LfpsActivity& activity);
  void clear_lfps_history() { last_rx_start_.reset(); }

  /// Symbol data onto the line. Returns the serialization completion time.
  SimTime transmit(std::vector<Symbol> symbols) { return tx_.transmit(std::move(symbols)); }
  SimTime tx_busy_until() const { return tx_.busy_until(); }

 private:
  void emit_burst();
  void trace_signal(const char* name, unsigned value);

  Simulator& sim_;
  Endpoint side_;
  SerialLane& tx_;
  PhyConfig cfg_;
  Tracer* tracer_;
  PipeSignals sig_;

  DetectListener detect_listener_;
  LfpsListener lfps_listener_;
  BurstListener burst_listener_;
  std::function<LinkState()> context_;

  bool detecting_ = false;
  bool lfps_active_ = false;
  LfpsKind lfps_kind_ = LfpsKind::Polling;
  std::uint64_t lfps_generation_ = 0;
  std::optional<EventHandle> next_burst_;
  std::uint64_t bursts_sent_ = 0;

  std::optional<SimTime> rx_start_;
  std::optional<SimTime> last_rx_start_;
};

}  // namespace usb3sim
