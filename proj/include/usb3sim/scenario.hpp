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
 * @file scenario.hpp
 * @brief Scenario configuration and the two-partner testbench behind the
 *        command-line runner.
 *
 * Config file format: one `key = value` per line, `#` starts a comment,
 * blank lines are ignored. Keys are the ones written by to_text(); unknown
 * keys are errors.
 */

#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "usb3sim/partner.hpp"
#include "usb3sim/protocol.hpp"

namespace usb3sim {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Direction : std::uint8_t { In, Out };
std::string_view to_string(Direction d);

struct ScenarioConfig {
  std::uint64_t seed = 1;

  // Channel.
  double ber = 0.0;
  std::uint64_t latency_ns = 100;
  bool partner_present = true;

  // Training. Millisecond-range LFPS values are divided by scale_divisor.
  std::uint32_t scale_divisor = 1000;
  std::uint32_t tseq_count = 64;
  std::uint64_t polling_timeout_us = 2000;
  std::uint64_t recovery_timeout_us = 1000;
  /// The device powers on up to this long after the host (seeded draw).
  std::uint64_t max_skew_ns = 50000;

  // Link.
  std::uint32_t credits = 4;
  std::uint32_t max_packet = 1024;
  std::uint32_t retry_budget = 64;

  // Transfer.
  Direction direction = Direction::In;
  std::uint64_t bytes = 1 << 20;
  std::uint32_t burst = 16;
  PatternKind pattern = PatternKind::Counter;

  // Horizons in simulated time.
  std::uint64_t bringup_horizon_us = 20000;
  std::uint64_t transfer_horizon_ms = 10000;

  std::string trace_out;

  /// Throws ConfigError naming the offending key.
  void validate() const;
  /// Sets one key from its text form. Throws ConfigError.
  void set(std::string_view key, std::string_view value);
  /// Every key with its current value, one per line, commented header.
  std::string to_text() const;
  /// Applies `text` on top of this config. Errors name the line number.
  void merge_text(std::string_view text);
  static ScenarioConfig from_text(std::string_view text);
  static const std::vector<std::string_view>& keys();

  bool operator==(const ScenarioConfig&) const = default;

  PartnerConfig partner() const;
  ChannelConfig channel() const;
  SimTime startup_skew() const;
};

struct BringupReport {
  bool ok = false;
  LinkState host_state = LinkState::RxDetect;
  LinkState device_state = LinkState::RxDetect;
  SimTime skew;
  std::optional<SimTime> time_to_u0;  // both sides in U0
  std::uint64_t lfps_bursts = 0;      // sent by either side
};

struct TransferReport {
  bool ok = false;
  bool intact = false;
  std::string error;
  TransferStats stats;
};

struct PmtReport {
  bool ok = false;
  std::string error;
  std::uint64_t events = 0;
  std::uint64_t bytes = 0;
  SimTime span;
  /// Device bytes still queued when each new event arrived.
  std::uint64_t max_backlog_at_event = 0;
  std::uint64_t final_backlog = 0;
  std::size_t max_link_queue = 0;
};

/// Host and device partners with their protocol engines on one channel.
class Testbench {
 public:
  explicit Testbench(const ScenarioConfig& cfg, std::ostream* trace = nullptr);
  ~Testbench();
  Testbench(const Testbench&) = delete;
  Testbench& operator=(const Testbench&) = delete;

  BringupReport bring_up();
  /// Brings the link up first when needed.
  EnumerationResult enumerate();
  /// Link up, enumeration, then one bulk transfer per the config.
  TransferReport bulk();
  /// Bulk IN streaming of fixed-size events produced at a fixed rate.
  PmtReport pmt(const WorkloadPreset& w);

  Simulator& sim() { return sim_; }
  Tracer& tracer() { return tracer_; }
  LinkPartner& host() { return *host_; }
  LinkPartner& device() { return *dev_; }
  ProtocolHost& host_protocol() { return *phost_; }
  ProtocolDevice& device_protocol() { return *pdev_; }

 private:
  bool link_dead() const;
  void fill_link_stats(TransferStats& s) const;

  ScenarioConfig cfg_;
  Simulator sim_;
  Tracer tracer_;
  DuplexChannel channel_;
  std::unique_ptr<LinkPartner> host_;
  std::unique_ptr<LinkPartner> dev_;
  std::unique_ptr<ProtocolHost> phost_;
  std::unique_ptr<ProtocolDevice> pdev_;
  std::optional<BringupReport> bringup_;
  std::optional<EnumerationResult> enumeration_;
};

struct BerSweepRow {
  double ber = 0.0;
  TransferReport result;
};

std::vector<BerSweepRow> ber_sweep(const ScenarioConfig& base, const std::vector<double>& rates);

}  // namespace usb3sim
