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
 * @file sim_core.hpp
 * @brief Discrete-event kernel, integer picosecond time base and the serial
 *        channel that connects the two link partners.
 *
 * Everything runs on one event queue. Events at the same instant fire in the
 * order they were scheduled, so a scenario replayed with the same seeds
 * produces the same trace byte for byte.
 */

#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "usb3sim/symbol.hpp"

namespace usb3sim {

/// Simulated time in integer picoseconds.
class SimTime {
 public:
  constexpr SimTime() = default;
  constexpr explicit SimTime(std::uint64_t ps) : ps_(ps) {}

  static constexpr SimTime ps(std::uint64_t v) { return SimTime{v}; }
  static constexpr SimTime ns(std::uint64_t v) { return SimTime{v * 1000ULL}; }
  static constexpr SimTime us(std::uint64_t v) { return SimTime{v * 1000000ULL}; }
  static constexpr SimTime ms(std::uint64_t v) { return SimTime{v * 1000000000ULL}; }
  static constexpr SimTime max() { return SimTime{std::numeric_limits<std::uint64_t>::max()}; }

  constexpr std::uint64_t picoseconds() const { return ps_; }
  constexpr double nanoseconds() const { return static_cast<double>(ps_) / 1e3; }
  constexpr double microseconds() const { return static_cast<double>(ps_) / 1e6; }
  constexpr double seconds() const { return static_cast<double>(ps_) / 1e12; }

  constexpr SimTime operator+(SimTime o) const { return SimTime{ps_ + o.ps_}; }
  constexpr SimTime operator-(SimTime o) const {
    if (o.ps_ > ps_) throw std::underflow_error("negative SimTime");
    return SimTime{ps_ - o.ps_};
  }
  constexpr SimTime operator*(std::uint64_t k) const { return SimTime{ps_ * k}; }
  constexpr SimTime operator/(std::uint64_t k) const { return SimTime{ps_ / k}; }
  constexpr SimTime& operator+=(SimTime o) {
    ps_ += o.ps_;
    return *this;
  }
  constexpr auto operator<=>(const SimTime&) const = default;

 private:
  std::uint64_t ps_ = 0;
};

/// 5 Gb/s line rate: one bit every 200 ps.
inline constexpr SimTime kBitTime = SimTime::ps(200);
inline constexpr SimTime kSymbolTime = SimTime::ps(200 * kBitsPerSymbol);

constexpr SimTime serialization_time(std::size_t symbols) { return kSymbolTime * symbols; }

namespace literals {
constexpr SimTime operator""_ps(unsigned long long v) { return SimTime::ps(v); }
constexpr SimTime operator""_ns(unsigned long long v) { return SimTime::ns(v); }
constexpr SimTime operator""_us(unsigned long long v) { return SimTime::us(v); }
constexpr SimTime operator""_ms(unsigned long long v) { return SimTime::ms(v); }
}  // namespace literals

enum class Endpoint : std::uint8_t { Host, Device, Channel };

std::string_view to_string(Endpoint e);
Endpoint peer_of(Endpoint e);

using EventHandle = std::uint64_t;

struct SimEvent {
  SimTime at;
  Endpoint target = Endpoint::Channel;
  std::function<void()> payload;
  std::uint64_t sequence = 0;  // assigned by Simulator::schedule
};

class CausalityError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct RunStats {
  std::uint64_t events_dispatched = 0;
  SimTime final_time;
};

class Simulator {
 public:
  SimTime now() const { return now_; }

  /// Queues `event`; its `sequence` field is overwritten with the tie-break
  /// counter. Throws CausalityError when `event.at` is before now().
  EventHandle schedule(SimEvent event);
  EventHandle schedule_at(SimTime at, Endpoint target, std::function<void()> fn);
  EventHandle schedule_in(SimTime delay, Endpoint target, std::function<void()> fn);

  /// Returns false when the handle already fired or was cancelled.
  bool cancel(EventHandle handle);

  /// Dispatches every event with at <= deadline and leaves the clock at
  /// `deadline`.
  RunStats run_until(SimTime deadline);

  /// Like run_until, but returns right after the first event for which
  /// `stop()` holds. The clock then stays at that event's time.
  RunStats run_until(SimTime deadline, const std::function<bool()>& stop);

  std::size_t pending() const { return heap_.size() - cancelled_.size(); }
  std::uint64_t total_dispatched() const { return total_dispatched_; }

 private:
  struct HeapGreater {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
      if (a.at != b.at) return a.at > b.at;
      return a.sequence > b.sequence;
    }
  };

  SimTime now_;
  std::uint64_t next_sequence_ = 0;
  std::uint64_t total_dispatched_ = 0;
  std::vector<SimEvent> heap_;
  std::unordered_set<std::uint64_t> cancelled_;
};

/// xoshiro256** seeded through splitmix64. This is the one generator used for
/// every stochastic decision in the simulator.
class Xoshiro256 {
 public:
  explicit Xoshiro256(std::uint64_t seed);
  std::uint64_t next();
  /// Uniform on (0, 1], 53-bit resolution.
  double uniform_open0();

 private:
  std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t& state);

struct ChannelConfig {
  SimTime latency;
  double bit_error_rate = 0.0;
  std::uint64_t rng_seed = 1;

  void validate() const;
};

/// Independent per-bit flips with probability `ber`. The distance to the next
/// flipped bit is drawn as floor(ln U / ln(1 - ber)), which is distributed
/// exactly like a run of Bernoulli(ber) trials.
class BitErrorInjector {
 public:
  BitErrorInjector(double ber, std::uint64_t seed);

  /// Flips bits in place; returns how many were flipped.
  std::uint64_t corrupt(std::span<Symbol> symbols);

  std::uint64_t bits_seen() const { return bits_seen_; }
  std::uint64_t bits_flipped() const { return bits_flipped_; }

 private:
  std::uint64_t draw_gap();

  double ber_;
  Xoshiro256 rng_;
  std::uint64_t until_next_;  // clean bits before the next flip
  std::uint64_t bits_seen_ = 0;
  std::uint64_t bits_flipped_ = 0;
};

struct Delivery {
  std::vector<Symbol> symbols;
  SimTime at;
  std::uint64_t bits_flipped = 0;
};

/// One direction of the serial link: latency plus bit errors.
class Channel {
 public:
  explicit Channel(ChannelConfig cfg);

  /// Delivery time is send_time + latency + symbols * 10 * 200 ps.
  Delivery transmit(std::vector<Symbol> symbols, SimTime send_time);

  const ChannelConfig& config() const { return cfg_; }
  const BitErrorInjector& injector() const { return injector_; }

 private:
  ChannelConfig cfg_;
  BitErrorInjector injector_;
};

/// A Channel bound to the simulator: tracks when the transmitter is busy and
/// schedules delivery of symbol frames and LFPS activity at the far end.
class SerialLane {
 public:
  using SymbolSink = std::function<void(std::vector<Symbol>)>;
  struct LfpsActivity {
    SimTime period;
    std::uint32_t cycles = 0;
  };
  using LfpsSink = std::function<void(bool active, const LfpsActivity&)>;

  SerialLane(Simulator& sim, ChannelConfig cfg, Endpoint receiver);

  void set_symbol_sink(SymbolSink sink) { symbol_sink_ = std::move(sink); }
  void set_lfps_sink(LfpsSink sink) { lfps_sink_ = std::move(sink); }

  /// Starts serializing at max(now, busy_until). Returns the completion time.
  SimTime transmit(std::vector<Symbol> symbols);
  /// Electrical activity seen by the receiver from start+latency for `cycles`
  /// periods.
  void send_lfps(SimTime start, SimTime period, std::uint32_t cycles);

  bool busy() const { return busy_until_ > sim_.now(); }
  SimTime busy_until() const { return busy_until_; }
  const Channel& channel() const { return channel_; }

 private:
  Simulator& sim_;
  Channel channel_;
  Endpoint receiver_;
  SimTime busy_until_;
  SymbolSink symbol_sink_;
  LfpsSink lfps_sink_;
};

/// Host->device and device->host lanes; the second lane's error stream is
/// seeded from splitmix64(seed) so the two directions are independent.
class DuplexChannel {
 public:
  DuplexChannel(Simulator& sim, const ChannelConfig& cfg);

  SerialLane& toward(Endpoint receiver);
  const SerialLane& toward(Endpoint receiver) const;

 private:
  SerialLane to_device_;
  SerialLane to_host_;
};

}  // namespace usb3sim
