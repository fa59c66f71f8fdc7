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
 * @file protocol.hpp
 * @brief Transaction and data packets, descriptors, the device's endpoint
 *        handling and the host's enumeration and bulk engines.
 *
 * Header body layouts (byte offsets, multi-byte fields little endian):
 *
 *   TP   0 type=0x04  1 address  2 subtype  3 endpoint|dir<<7  4 seq  5 NumP
 *   DPH  0 type=0x08  1 address  2 endpoint|dir<<7  3 seq  4-5 length
 *        6 flags (bit 0: setup)
 *
 * dir is 1 for IN (device to host). Bulk sequence numbers are 5 bits.
 *
 * Control transfers:
 *
 *   host                               device
 *   Setup DP (EP0 OUT, 8 bytes)   ->
 *                                 <-   ACK TP, or STALL TP
 *   [IN data stage]
 *   ACK TP (EP0 IN, NumP 1)       ->
 *                                 <-   DP (EP0 IN)
 *   ACK TP (EP0 IN, NumP 0)       ->
 *   STATUS TP (EP0)               ->
 *                                 <-   ACK TP; SET_ADDRESS applies here
 *
 * Bulk IN: every ACK TP names the next sequence the host expects and opens
 * NumP packets from there. Bulk OUT mirrors it with the device acknowledging;
 * the host may send up to the burst depth before the first acknowledgment.
 */

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "usb3sim/link_layer.hpp"
#include "usb3sim/sim_core.hpp"
#include "usb3sim/trace.hpp"

namespace usb3sim {

inline constexpr std::uint16_t kBulkMaxPacket = 1024;
inline constexpr std::uint32_t kMaxBurst = 16;
inline constexpr std::uint8_t kBulkSeqModulo = 32;

enum class TpSubtype : std::uint8_t { ACK = 1, STALL = 2, STATUS = 3 };
std::string_view to_string(TpSubtype s);

struct TransactionPacket {
  std::uint8_t address = 0;
  TpSubtype subtype = TpSubtype::ACK;
  std::uint8_t endpoint = 0;
  bool in = false;
  std::uint8_t seq = 0;
  std::uint8_t num_packets = 0;

  bool operator==(const TransactionPacket&) const = default;
};

struct DataPacketHeader {
  std::uint8_t address = 0;
  std::uint8_t endpoint = 0;
  bool in = false;
  std::uint8_t seq = 0;
  std::uint16_t length = 0;
  bool setup = false;

  bool operator==(const DataPacketHeader&) const = default;
};

LinkPacket encode_tp(const TransactionPacket& tp);
LinkPacket encode_dp(const DataPacketHeader& h, std::vector<std::uint8_t> payload);
std::optional<TransactionPacket> decode_tp(const HeaderPacket& h);
/// Also checks that the length field matches the payload carried.
std::optional<DataPacketHeader> decode_dph(const LinkPacket& p);

/// Absolute count nearest to `reference` whose low five bits are `seq`.
std::uint64_t unwrap_seq(std::uint64_t reference, std::uint8_t seq);

// ---------------------------------------------------------------------------
// Control requests and descriptors

namespace request {
inline constexpr std::uint8_t GET_STATUS = 0;
inline constexpr std::uint8_t SET_ADDRESS = 5;
inline constexpr std::uint8_t GET_DESCRIPTOR = 6;
inline constexpr std::uint8_t GET_CONFIGURATION = 8;
inline constexpr std::uint8_t SET_CONFIGURATION = 9;
}  // namespace request

namespace desc_type {
inline constexpr std::uint8_t DEVICE = 1;
inline constexpr std::uint8_t CONFIGURATION = 2;
inline constexpr std::uint8_t STRING = 3;
inline constexpr std::uint8_t INTERFACE = 4;
inline constexpr std::uint8_t ENDPOINT = 5;
inline constexpr std::uint8_t SS_ENDPOINT_COMPANION = 0x30;
}  // namespace desc_type

struct SetupPacket {
  std::uint8_t bmRequestType = 0;
  std::uint8_t bRequest = 0;
  std::uint16_t wValue = 0;
  std::uint16_t wIndex = 0;
  std::uint16_t wLength = 0;

  std::vector<std::uint8_t> encode() const;
  static std::optional<SetupPacket> decode(std::span<const std::uint8_t> bytes);
  bool device_to_host() const { return bmRequestType & 0x80; }
  bool operator==(const SetupPacket&) const = default;
};

SetupPacket get_descriptor(std::uint8_t type, std::uint8_t index, std::uint16_t length,
                           std::uint16_t language = 0);
SetupPacket set_address(std::uint8_t address);
SetupPacket set_configuration(std::uint8_t value);
std::string describe(const SetupPacket& s);

enum class EndpointKind : std::uint8_t { Control, BulkIn, BulkOut };

struct EndpointConfig {
  std::uint8_t number = 0;
  EndpointKind kind = EndpointKind::Control;
  std::uint16_t max_packet = kBulkMaxPacket;
  std::uint32_t burst_depth = 1;  // 1..16

  void validate() const;
};

/// The device's fixed descriptor set: one configuration, one vendor-class
/// interface, EP1 bulk IN and EP2 bulk OUT with SuperSpeed companions.
///
///   device         18  bcdUSB 3.00, bMaxPacketSize0 9 (512), VID 0x1209,
///                      PID 0x0001, bcdDevice 1.00, strings 1/2/3
///   configuration   9  wTotalLength 44, one interface, value 1, self 0x80,
///                      bMaxPower 0x32
///   interface       9  class 0xFF, two endpoints
///   endpoint        7  0x81 bulk 1024, then companion (6) bMaxBurst = depth-1
///   endpoint        7  0x02 bulk 1024, then companion (6)
///   strings            0: 0x0409; 1 "usb3sim"; 2 "SuperSpeed bulk device";
///                      3 "0001" (UTF-16LE)
struct DescriptorSet {
  std::vector<std::uint8_t> device;
  std::vector<std::uint8_t> configuration;  // full, wTotalLength bytes
  std::vector<std::vector<std::uint8_t>> strings;

  static DescriptorSet standard(std::uint32_t burst_depth = kMaxBurst);
  std::optional<std::vector<std::uint8_t>> lookup(std::uint8_t type, std::uint8_t index) const;
};

inline constexpr std::uint16_t kVendorId = 0x1209;
inline constexpr std::uint16_t kProductId = 0x0001;

struct DeviceDescriptor {
  std::uint16_t bcd_usb = 0;
  std::uint8_t max_packet0_exp = 0;
  std::uint16_t vendor = 0;
  std::uint16_t product = 0;
  std::uint16_t bcd_device = 0;
  std::uint8_t manufacturer = 0;
  std::uint8_t product_string = 0;
  std::uint8_t serial = 0;
  std::uint8_t num_configurations = 0;
};

struct EndpointInfo {
  std::uint8_t address = 0;  // with direction bit
  std::uint8_t attributes = 0;
  std::uint16_t max_packet = 0;
  std::uint32_t burst_depth = 1;

  bool in() const { return address & 0x80; }
  std::uint8_t number() const { return address & 0x0F; }
};

struct ConfigurationInfo {
  std::uint8_t value = 0;
  std::uint16_t total_length = 0;
  std::uint8_t interface_class = 0;
  std::vector<EndpointInfo> endpoints;
};

class DescriptorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throw DescriptorError on malformed input.
DeviceDescriptor parse_device_descriptor(std::span<const std::uint8_t> bytes);
ConfigurationInfo parse_configuration(std::span<const std::uint8_t> bytes);
std::string parse_string_descriptor(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Data patterns

enum class PatternKind : std::uint8_t { Counter, Random };

/// Counter: consecutive little-endian 32-bit words 0, 1, 2, ...
/// Random: 64-bit words from splitmix64 of (seed + word index).
class PatternGenerator {
 public:
  explicit PatternGenerator(PatternKind kind = PatternKind::Counter, std::uint64_t seed = 0)
      : kind_(kind), seed_(seed) {}
  std::uint8_t at(std::uint64_t offset) const;
  void fill(std::uint64_t offset, std::span<std::uint8_t> out) const;

 private:
  PatternKind kind_;
  std::uint64_t seed_;
};

/// Verifies a byte stream against a pattern as it arrives.
class PatternChecker {
 public:
  explicit PatternChecker(PatternGenerator gen) : gen_(gen) {}
  void consume(std::span<const std::uint8_t> bytes);
  std::uint64_t bytes() const { return bytes_; }
  bool intact() const { return !first_mismatch_; }
  std::optional<std::uint64_t> first_mismatch() const { return first_mismatch_; }

 private:
  PatternGenerator gen_;
  std::uint64_t bytes_ = 0;
  std::optional<std::uint64_t> first_mismatch_;
};

/// Bytes the device may send on EP1: pattern data made available either all
/// at once or as events arrive.
class BulkSource {
 public:
  explicit BulkSource(PatternGenerator gen = PatternGenerator{}) : gen_(gen) {}
  void add(std::uint64_t bytes) { produced_ += bytes; }
  std::uint64_t available() const { return produced_ - taken_; }
  std::uint64_t taken() const { return taken_; }
  std::vector<std::uint8_t> take(std::size_t n);

 private:
  PatternGenerator gen_;
  std::uint64_t produced_ = 0;
  std::uint64_t taken_ = 0;
};

// ---------------------------------------------------------------------------
// Engines

using PacketOut = std::function<void(LinkPacket)>;

enum class DeviceState : std::uint8_t { Default, Addressed, Configured };
std::string_view to_string(DeviceState s);

struct ProtocolCounters {
  std::uint64_t misaddressed = 0;
  std::uint64_t stalls_sent = 0;
  std::uint64_t malformed = 0;
  std::uint64_t sequence_errors = 0;
};

/// Device side: EP0 request dispatch, EP1 source, EP2 sink.
class ProtocolDevice {
 public:
  ProtocolDevice(Simulator& sim, DescriptorSet descriptors, std::uint32_t burst_depth,
                 Tracer* tracer = nullptr);

  void set_output(PacketOut out) { out_ = std::move(out); }
  void receive(LinkPacket p);

  BulkSource& source() { return source_; }
  /// Call after adding bytes to the source.
  void source_updated() { pump_in(); }
  void set_sink(PatternChecker* sink) { sink_ = sink; }
  /// EP1 payload per data packet, 1..1024.
  void set_max_packet(std::uint16_t n);

  DeviceState state() const { return state_; }
  std::uint8_t address() const { return address_; }
  std::uint8_t configuration() const { return configuration_; }
  const ProtocolCounters& counters() const { return counters_; }
  std::uint64_t out_bytes() const { return out_bytes_; }

  struct ControlResult {
    bool stall = false;
    std::vector<std::uint8_t> data;
  };
  /// Standard-request dispatch; no side effects until the status stage.
  ControlResult handle_control(const SetupPacket& s) const;

 private:
  void send_tp(TpSubtype st, std::uint8_t ep, bool in, std::uint8_t seq, std::uint8_t nump);
  void on_tp(const TransactionPacket& tp);
  void on_dp(const DataPacketHeader& h, std::vector<std::uint8_t> payload);
  void pump_in();
  void trace(const char* kind, std::vector<std::pair<std::string, std::string>> f);

  Simulator& sim_;
  DescriptorSet desc_;
  std::uint32_t burst_;
  Tracer* tracer_;
  PacketOut out_;
  DeviceState state_ = DeviceState::Default;
  std::uint8_t address_ = 0;
  std::uint8_t configuration_ = 0;
  ProtocolCounters counters_;

  std::optional<SetupPacket> setup_;
  std::vector<std::uint8_t> control_data_;

  BulkSource source_;
  std::uint64_t in_sent_ = 0;   // EP1 packets sent
  std::uint64_t in_limit_ = 0;  // EP1 packets granted

  PatternChecker* sink_ = nullptr;
  std::uint16_t max_packet_ = kBulkMaxPacket;
  std::uint64_t out_expected_ = 0;  // EP2 next packet
  std::uint64_t out_bytes_ = 0;
};

struct DeviceInfo {
  std::uint8_t address = 0;
  DeviceDescriptor device;
  ConfigurationInfo configuration;
  std::vector<std::uint8_t> device_bytes;
  std::vector<std::uint8_t> configuration_bytes;
  std::string manufacturer;
  std::string product;
  std::string serial;
};

struct EnumerationResult {
  bool ok = false;
  std::string phase;  // failing phase when !ok
  std::string error;
  DeviceInfo info;
};

struct TransferStats {
  std::uint64_t bytes_moved = 0;
  SimTime elapsed;
  std::uint64_t retries = 0;
  std::uint64_t crc_errors = 0;

  /// Decimal MB/s; 0 for an empty transfer.
  double effective_rate_mbps() const;
};

struct TransferResult {
  bool ok = false;
  std::string error;
  TransferStats stats;
};

struct ControlResponse {
  bool ok = false;
  bool stalled = false;
  std::vector<std::uint8_t> data;
};

/// Host side: control transfers, enumeration and the bulk engines.
class ProtocolHost {
 public:
  using ControlDone = std::function<void(ControlResponse)>;
  using EnumerationDone = std::function<void(EnumerationResult)>;
  using TransferDone = std::function<void(TransferResult)>;

  ProtocolHost(Simulator& sim, Tracer* tracer = nullptr);

  void set_output(PacketOut out) { out_ = std::move(out); }
  void receive(LinkPacket p);

  void control(const SetupPacket& s, ControlDone done);
  void enumerate(std::uint8_t address, EnumerationDone done);

  /// Requests `total` bytes from EP1, opening `burst` packets at a time.
  void bulk_in(std::uint64_t total, std::uint32_t burst, PatternChecker* sink, TransferDone done);
  /// Streams `total` pattern bytes to EP2.
  void bulk_out(std::uint64_t total, std::uint32_t burst, PatternGenerator gen, TransferDone done);
  /// Abandons whatever is running with the given error.
  void fail(const std::string& why);
  /// EP2 payload per data packet, 1..1024.
  void set_max_packet(std::uint16_t n);

  std::uint8_t address() const { return address_; }
  const ProtocolCounters& counters() const { return counters_; }
  bool busy() const { return mode_ != Mode::Idle; }

 private:
  enum class Mode : std::uint8_t { Idle, Control, BulkIn, BulkOut };
  enum class ControlStage : std::uint8_t { Setup, DataRequest, Status };

  void send_tp(TpSubtype st, std::uint8_t ep, bool in, std::uint8_t seq, std::uint8_t nump);
  void on_control_tp(const TransactionPacket& tp);
  void on_control_dp(std::vector<std::uint8_t> payload);
  void finish_control(ControlResponse r);
  void pump_out();
  void finish_transfer(bool ok, const std::string& error);
  void enum_step(std::size_t step, std::shared_ptr<EnumerationResult> st, EnumerationDone done);
  void trace(const char* kind, std::vector<std::pair<std::string, std::string>> f);

  Simulator& sim_;
  Tracer* tracer_;
  PacketOut out_;
  std::uint8_t address_ = 0;
  ProtocolCounters counters_;
  Mode mode_ = Mode::Idle;

  // Control.
  SetupPacket setup_;
  ControlStage stage_ = ControlStage::Setup;
  ControlDone control_done_;
  ControlResponse control_resp_;
  std::optional<std::uint8_t> pending_address_;

  // Bulk.
  TransferDone transfer_done_;
  std::uint64_t total_ = 0;
  std::uint32_t burst_ = 1;
  std::uint64_t moved_ = 0;
  std::uint64_t packets_ = 0;  // next expected (IN) or sent (OUT)
  std::uint64_t acked_ = 0;    // OUT: packets acknowledged
  std::uint64_t limit_ = 0;    // OUT: packets the device allows
  std::uint64_t total_packets_ = 0;
  SimTime started_;
  PatternChecker* sink_ = nullptr;
  PatternGenerator gen_;
  std::uint16_t max_packet_ = kBulkMaxPacket;
};

/// Sustained bulk-in workload: fixed-size events at a fixed rate.
struct WorkloadPreset {
  std::uint32_t event_bytes = 2000;
  std::uint32_t rate_hz = 50000;
  SimTime duration = SimTime::ms(1000);

  double offered_mbps() const { return static_cast<double>(event_bytes) * rate_hz / 1e6; }
  std::uint64_t events() const;
  /// Zero when rate_hz is zero.
  SimTime interval() const;
};

/// 1000 points x 2 bytes per point at 50 kHz.
WorkloadPreset workload_preset_pmt();

}  // namespace usb3sim
