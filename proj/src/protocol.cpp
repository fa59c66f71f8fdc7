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

#include "usb3sim/protocol.hpp"

#include <algorithm>
#include <cstdio>

namespace usb3sim {
namespace {

constexpr std::uint8_t kFlagSetup = 0x01;

std::uint16_t le16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

void put16(std::vector<std::uint8_t>& v, std::uint16_t x) {
  v.push_back(static_cast<std::uint8_t>(x));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
}

std::vector<std::uint8_t> string_descriptor(std::string_view s) {
  std::vector<std::uint8_t> d{static_cast<std::uint8_t>(2 + 2 * s.size()), desc_type::STRING};
  for (char c : s) put16(d, static_cast<std::uint8_t>(c));
  return d;
}

std::string hex(unsigned v, int width) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%0*X", width, v);
  return buf;
}

std::uint8_t ep_byte(std::uint8_t ep, bool in) { return static_cast<std::uint8_t>((ep & 0x0F) | (in ? 0x80 : 0)); }

std::vector<EndpointConfig> device_endpoints(std::uint32_t burst) {
  return {{0, EndpointKind::Control, 512, 1},
          {1, EndpointKind::BulkIn, kBulkMaxPacket, burst},
          {2, EndpointKind::BulkOut, kBulkMaxPacket, burst}};
}

bool direction_matches(const EndpointConfig& e, bool in) {
  switch (e.kind) {
    case EndpointKind::Control:
      return true;
    case EndpointKind::BulkIn:
      return in;
    case EndpointKind::BulkOut:
      return !in;
  }
  return false;
}

}  // namespace

std::string_view to_string(TpSubtype s) {
  switch (s) {
    case TpSubtype::ACK:
      return "ACK";
    case TpSubtype::STALL:
      return "STALL";
    case TpSubtype::STATUS:
      return "STATUS";
  }
  return "?";
}

std::string_view to_string(DeviceState s) {
  switch (s) {
    case DeviceState::Default:
      return "Default";
    case DeviceState::Addressed:
      return "Addressed";
    case DeviceState::Configured:
      return "Configured";
  }
  return "?";
}

LinkPacket encode_tp(const TransactionPacket& tp) {
  LinkPacket p;
  auto& b = p.header.body;
  b[0] = static_cast<std::uint8_t>(PacketType::Transaction);
  b[1] = tp.address;
  b[2] = static_cast<std::uint8_t>(tp.subtype);
  b[3] = ep_byte(tp.endpoint, tp.in);
  b[4] = static_cast<std::uint8_t>(tp.seq % kBulkSeqModulo);
  b[5] = tp.num_packets;
  return p;
}

LinkPacket encode_dp(const DataPacketHeader& h, std::vector<std::uint8_t> payload) {
  if (payload.size() != h.length) throw std::invalid_argument("data length does not match payload");
  LinkPacket p;
  auto& b = p.header.body;
  b[0] = static_cast<std::uint8_t>(PacketType::DataPacketHeader);
  b[1] = h.address;
  b[2] = ep_byte(h.endpoint, h.in);
  b[3] = static_cast<std::uint8_t>(h.seq % kBulkSeqModulo);
  b[4] = static_cast<std::uint8_t>(h.length);
  b[5] = static_cast<std::uint8_t>(h.length >> 8);
  b[6] = h.setup ? kFlagSetup : 0;
  p.payload = std::move(payload);
  return p;
}

std::optional<TransactionPacket> decode_tp(const HeaderPacket& h) {
  const auto& b = h.body;
  if (h.type() != PacketType::Transaction) return std::nullopt;
  if (b[2] < 1 || b[2] > 3 || (b[3] & 0x70) || b[4] >= kBulkSeqModulo || b[5] > kMaxBurst) return std::nullopt;
  TransactionPacket tp;
  tp.address = b[1];
  tp.subtype = static_cast<TpSubtype>(b[2]);
  tp.endpoint = b[3] & 0x0F;
  tp.in = b[3] & 0x80;
  tp.seq = b[4];
  tp.num_packets = b[5];
  return tp;
}

std::optional<DataPacketHeader> decode_dph(const LinkPacket& p) {
  const auto& b = p.header.body;
  if (p.header.type() != PacketType::DataPacketHeader) return std::nullopt;
  if ((b[2] & 0x70) || b[3] >= kBulkSeqModulo || (b[6] & ~kFlagSetup)) return std::nullopt;
  DataPacketHeader h;
  h.address = b[1];
  h.endpoint = b[2] & 0x0F;
  h.in = b[2] & 0x80;
  h.seq = b[3];
  h.length = static_cast<std::uint16_t>(b[4] | (b[5] << 8));
  h.setup = b[6] & kFlagSetup;
  if (h.length != p.payload.size() || h.length > kBulkMaxPacket) return std::nullopt;
  return h;
}

std::uint64_t unwrap_seq(std::uint64_t reference, std::uint8_t seq) {
  const std::uint64_t diff = (seq + kBulkSeqModulo - reference % kBulkSeqModulo) % kBulkSeqModulo;
  if (diff < kBulkSeqModulo / 2 || reference + diff < kBulkSeqModulo) return reference + diff;
  return reference + diff - kBulkSeqModulo;
}

// ---------------------------------------------------------------------------
// Setup packets and descriptors

std::vector<std::uint8_t> SetupPacket::encode() const {
  std::vector<std::uint8_t> v{bmRequestType, bRequest};
  put16(v, wValue);
  put16(v, wIndex);
  put16(v, wLength);
  return v;
}

std::optional<SetupPacket> SetupPacket::decode(std::span<const std::uint8_t> b) {
  if (b.size() != 8) return std::nullopt;
  return SetupPacket{b[0], b[1], le16(b, 2), le16(b, 4), le16(b, 6)};
}

SetupPacket get_descriptor(std::uint8_t type, std::uint8_t index, std::uint16_t length, std::uint16_t language) {
  return {0x80, request::GET_DESCRIPTOR, static_cast<std::uint16_t>((type << 8) | index), language, length};
}

SetupPacket set_address(std::uint8_t address) { return {0x00, request::SET_ADDRESS, address, 0, 0}; }

SetupPacket set_configuration(std::uint8_t value) { return {0x00, request::SET_CONFIGURATION, value, 0, 0}; }

std::string describe(const SetupPacket& s) {
  if ((s.bmRequestType & 0x60) == 0) {
    switch (s.bRequest) {
      case request::GET_DESCRIPTOR: {
        static const char* names[] = {"?", "DEVICE", "CONFIGURATION", "STRING"};
        const unsigned t = s.wValue >> 8;
        const std::string name = t < 4 ? names[t] : std::to_string(t);
        return "GET_DESCRIPTOR(" + name + "," + std::to_string(s.wValue & 0xFF) + "," +
               std::to_string(s.wLength) + ")";
      }
      case request::SET_ADDRESS:
        return "SET_ADDRESS(" + std::to_string(s.wValue) + ")";
      case request::SET_CONFIGURATION:
        return "SET_CONFIGURATION(" + std::to_string(s.wValue) + ")";
      case request::GET_CONFIGURATION:
        return "GET_CONFIGURATION";
      case request::GET_STATUS:
        return "GET_STATUS";
      default:
        break;
    }
  }
  return "REQUEST(" + hex(s.bmRequestType, 2) + "," + hex(s.bRequest, 2) + ")";
}

void EndpointConfig::validate() const {
  if (number > 2) throw std::invalid_argument("endpoint number must be 0..2");
  const EndpointKind want[] = {EndpointKind::Control, EndpointKind::BulkIn, EndpointKind::BulkOut};
  if (kind != want[number]) throw std::invalid_argument("endpoint kind does not match its number");
  if (burst_depth < 1 || burst_depth > kMaxBurst) throw std::invalid_argument("burst depth must be 1..16");
  if (max_packet == 0 || max_packet > kBulkMaxPacket) throw std::invalid_argument("max packet must be 1..1024");
}

DescriptorSet DescriptorSet::standard(std::uint32_t burst_depth) {
  if (burst_depth < 1 || burst_depth > kMaxBurst) throw std::invalid_argument("burst depth must be 1..16");
  DescriptorSet d;
  d.device = {18, desc_type::DEVICE, 0x00, 0x03, 0x00, 0x00, 0x00, 9};
  put16(d.device, kVendorId);
  put16(d.device, kProductId);
  put16(d.device, 0x0100);
  d.device.insert(d.device.end(), {1, 2, 3, 1});

  auto& c = d.configuration;
  c = {9, desc_type::CONFIGURATION, 0, 0, 1, 1, 0, 0x80, 0x32};
  c.insert(c.end(), {9, desc_type::INTERFACE, 0, 0, 2, 0xFF, 0x00, 0x00, 0});
  const auto burst = static_cast<std::uint8_t>(burst_depth - 1);
  for (std::uint8_t addr : {std::uint8_t{0x81}, std::uint8_t{0x02}}) {
    c.insert(c.end(), {7, desc_type::ENDPOINT, addr, 0x02, 0x00, 0x04, 0});
    c.insert(c.end(), {6, desc_type::SS_ENDPOINT_COMPANION, burst, 0, 0, 0});
  }
  c[2] = static_cast<std::uint8_t>(c.size());
  c[3] = static_cast<std::uint8_t>(c.size() >> 8);

  d.strings.push_back({4, desc_type::STRING, 0x09, 0x04});
  d.strings.push_back(string_descriptor("usb3sim"));
  d.strings.push_back(string_descriptor("SuperSpeed bulk device"));
  d.strings.push_back(string_descriptor("0001"));
  return d;
}

std::optional<std::vector<std::uint8_t>> DescriptorSet::lookup(std::uint8_t type, std::uint8_t index) const {
  switch (type) {
    case desc_type::DEVICE:
      if (index == 0) return device;
      break;
    case desc_type::CONFIGURATION:
      if (index == 0) return configuration;
      break;
    case desc_type::STRING:
      if (index < strings.size()) return strings[index];
      break;
    default:
      break;
  }
  return std::nullopt;
}

DeviceDescriptor parse_device_descriptor(std::span<const std::uint8_t> b) {
  if (b.size() != 18 || b[0] != 18 || b[1] != desc_type::DEVICE)
    throw DescriptorError("device descriptor: bad length or type");
  DeviceDescriptor d;
  d.bcd_usb = le16(b, 2);
  d.max_packet0_exp = b[7];
  d.vendor = le16(b, 8);
  d.product = le16(b, 10);
  d.bcd_device = le16(b, 12);
  d.manufacturer = b[14];
  d.product_string = b[15];
  d.serial = b[16];
  d.num_configurations = b[17];
  if (d.num_configurations == 0) throw DescriptorError("device descriptor: no configurations");
  return d;
}

ConfigurationInfo parse_configuration(std::span<const std::uint8_t> b) {
  if (b.size() < 9 || b[0] != 9 || b[1] != desc_type::CONFIGURATION)
    throw DescriptorError("configuration: bad header");
  ConfigurationInfo info;
  info.total_length = le16(b, 2);
  info.value = b[5];
  if (info.total_length != b.size()) throw DescriptorError("configuration: wTotalLength mismatch");
  const unsigned interfaces = b[4];
  unsigned interfaces_seen = 0;
  unsigned endpoints_expected = 0;
  std::size_t at = 9;
  bool want_companion = false;
  while (at < b.size()) {
    const std::size_t len = b[at];
    if (len < 2 || at + len > b.size()) throw DescriptorError("configuration: truncated descriptor");
    const std::uint8_t type = b[at + 1];
    if (want_companion && type != desc_type::SS_ENDPOINT_COMPANION)
      throw DescriptorError("configuration: endpoint without companion");
    switch (type) {
      case desc_type::INTERFACE:
        if (len != 9) throw DescriptorError("configuration: bad interface length");
        ++interfaces_seen;
        endpoints_expected += b[at + 4];
        info.interface_class = b[at + 5];
        break;
      case desc_type::ENDPOINT: {
        if (len != 7) throw DescriptorError("configuration: bad endpoint length");
        EndpointInfo e;
        e.address = b[at + 2];
        e.attributes = b[at + 3];
        e.max_packet = le16(b, at + 4);
        info.endpoints.push_back(e);
        want_companion = true;
        break;
      }
      case desc_type::SS_ENDPOINT_COMPANION:
        if (len != 6 || !want_companion) throw DescriptorError("configuration: stray companion");
        info.endpoints.back().burst_depth = b[at + 2] + 1u;
        want_companion = false;
        break;
      default:
        break;
    }
    at += len;
  }
  if (want_companion) throw DescriptorError("configuration: endpoint without companion");
  if (interfaces_seen != interfaces) throw DescriptorError("configuration: interface count mismatch");
  if (info.endpoints.size() != endpoints_expected) throw DescriptorError("configuration: endpoint count mismatch");
  return info;
}

std::string parse_string_descriptor(std::span<const std::uint8_t> b) {
  if (b.size() < 2 || b[0] != b.size() || b[1] != desc_type::STRING || b.size() % 2)
    throw DescriptorError("string descriptor: bad length or type");
  std::string s;
  for (std::size_t i = 2; i < b.size(); i += 2) {
    const std::uint16_t u = le16(b, i);
    s.push_back(u < 0x80 ? static_cast<char>(u) : '?');
  }
  return s;
}

// ---------------------------------------------------------------------------
// Patterns

std::uint8_t PatternGenerator::at(std::uint64_t offset) const {
  if (kind_ == PatternKind::Counter) {
    const auto word = static_cast<std::uint32_t>(offset / 4);
    return static_cast<std::uint8_t>(word >> (8 * (offset % 4)));
  }
  std::uint64_t state = seed_ + offset / 8;
  return static_cast<std::uint8_t>(splitmix64(state) >> (8 * (offset % 8)));
}

void PatternGenerator::fill(std::uint64_t offset, std::span<std::uint8_t> out) const {
  std::size_t i = 0;
  if (kind_ == PatternKind::Counter) {
    while (i < out.size()) {
      const std::uint64_t o = offset + i;
      const auto word = static_cast<std::uint32_t>(o / 4);
      for (std::uint64_t k = o % 4; k < 4 && i < out.size(); ++k, ++i)
        out[i] = static_cast<std::uint8_t>(word >> (8 * k));
    }
    return;
  }
  while (i < out.size()) {
    const std::uint64_t o = offset + i;
    std::uint64_t state = seed_ + o / 8;
    const std::uint64_t word = splitmix64(state);
    for (std::uint64_t k = o % 8; k < 8 && i < out.size(); ++k, ++i)
      out[i] = static_cast<std::uint8_t>(word >> (8 * k));
  }
}

void PatternChecker::consume(std::span<const std::uint8_t> bytes) {
  std::vector<std::uint8_t> want(bytes.size());
  gen_.fill(bytes_, want);
  if (!first_mismatch_) {
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      if (bytes[i] != want[i]) {
        first_mismatch_ = bytes_ + i;
        break;
      }
    }
  }
  bytes_ += bytes.size();
}

std::vector<std::uint8_t> BulkSource::take(std::size_t n) {
  n = static_cast<std::size_t>(std::min<std::uint64_t>(n, available()));
  std::vector<std::uint8_t> out(n);
  gen_.fill(taken_, out);
  taken_ += n;
  return out;
}

double TransferStats::effective_rate_mbps() const {
  if (bytes_moved == 0 || elapsed == SimTime{}) return 0.0;
  return static_cast<double>(bytes_moved) / elapsed.seconds() / 1e6;
}

std::uint64_t WorkloadPreset::events() const {
  return static_cast<std::uint64_t>(rate_hz) * duration.picoseconds() / 1'000'000'000'000ULL;
}

SimTime WorkloadPreset::interval() const {
  if (rate_hz == 0) return SimTime{};
  return SimTime::ps(1'000'000'000'000ULL / rate_hz);
}

WorkloadPreset workload_preset_pmt() { return WorkloadPreset{1000 * 2, 50000, SimTime::ms(1000)}; }

// ---------------------------------------------------------------------------
// Device

ProtocolDevice::ProtocolDevice(Simulator& sim, DescriptorSet descriptors, std::uint32_t burst_depth,
                               Tracer* tracer)
    : sim_(sim), desc_(std::move(descriptors)), burst_(burst_depth), tracer_(tracer) {
  for (const auto& e : device_endpoints(burst_)) e.validate();
}

void ProtocolDevice::trace(const char* kind, std::vector<std::pair<std::string, std::string>> f) {
  if (tracer_ && tracer_->enabled()) tracer_->emit(sim_.now(), Endpoint::Device, TraceLayer::Protocol, kind, std::move(f));
}

void ProtocolDevice::send_tp(TpSubtype st, std::uint8_t ep, bool in, std::uint8_t seq, std::uint8_t nump) {
  if (st == TpSubtype::STALL) {
    ++counters_.stalls_sent;
    trace("stall", {{"ep", std::to_string(ep)}});
  }
  if (out_) out_(encode_tp({address_, st, ep, in, seq, nump}));
}

ProtocolDevice::ControlResult ProtocolDevice::handle_control(const SetupPacket& s) const {
  ControlResult r;
  r.stall = true;
  if ((s.bmRequestType & 0x60) != 0) return r;  // class and vendor requests
  const bool in = s.device_to_host();
  const bool in_default = state_ == DeviceState::Default;
  switch (s.bRequest) {
    case request::GET_DESCRIPTOR: {
      if (!in) return r;
      auto d = desc_.lookup(static_cast<std::uint8_t>(s.wValue >> 8), static_cast<std::uint8_t>(s.wValue));
      if (!d) return r;
      d->resize(std::min<std::size_t>(d->size(), s.wLength));
      r.data = std::move(*d);
      r.stall = false;
      return r;
    }
    case request::GET_STATUS:
      if (!in) return r;
      r.data = {0, 0};
      r.data.resize(std::min<std::size_t>(2, s.wLength));
      r.stall = false;
      return r;
    case request::SET_ADDRESS:
      if (in || s.wValue > 127 || state_ == DeviceState::Configured) return r;
      r.stall = false;
      return r;
    case request::GET_CONFIGURATION:
      if (!in || in_default) return r;
      r.data = {configuration_};
      r.data.resize(std::min<std::size_t>(1, s.wLength));
      r.stall = false;
      return r;
    case request::SET_CONFIGURATION:
      if (in || in_default || s.wValue > 1) return r;
      r.stall = false;
      return r;
    default:
      return r;
  }
}

void ProtocolDevice::receive(LinkPacket p) {
  const PacketType type = p.header.type();
  if (type == PacketType::Transaction) {
    auto tp = decode_tp(p.header);
    if (!tp) {
      ++counters_.malformed;
      return;
    }
    if (tp->address != address_) {
      ++counters_.misaddressed;
      return;
    }
    on_tp(*tp);
  } else if (type == PacketType::DataPacketHeader) {
    auto h = decode_dph(p);
    if (!h) {
      ++counters_.malformed;
      return;
    }
    if (h->address != address_) {
      ++counters_.misaddressed;
      return;
    }
    on_dp(*h, std::move(p.payload));
  } else if (type != PacketType::LinkManagement) {
    ++counters_.malformed;
  }
}

void ProtocolDevice::on_dp(const DataPacketHeader& h, std::vector<std::uint8_t> payload) {
  const auto eps = device_endpoints(burst_);
  if (h.endpoint >= eps.size() || !direction_matches(eps[h.endpoint], h.in) || h.in) {
    ++counters_.malformed;
    send_tp(TpSubtype::STALL, h.endpoint, h.in, 0, 0);
    return;
  }
  if (h.endpoint == 0) {
    auto s = h.setup ? SetupPacket::decode(payload) : std::nullopt;
    if (!s) {
      ++counters_.malformed;
      setup_.reset();
      send_tp(TpSubtype::STALL, 0, false, 0, 0);
      return;
    }
    auto r = handle_control(*s);
    trace("setup", {{"request", describe(*s)}, {"stall", r.stall ? "1" : "0"}});
    if (r.stall) {
      setup_.reset();
      send_tp(TpSubtype::STALL, 0, false, 0, 0);
      return;
    }
    setup_ = *s;
    control_data_ = std::move(r.data);
    send_tp(TpSubtype::ACK, 0, false, 1, 0);
    return;
  }
  // EP2 bulk OUT.
  if (state_ != DeviceState::Configured) {
    send_tp(TpSubtype::STALL, 2, false, 0, 0);
    return;
  }
  const std::uint64_t abs = unwrap_seq(out_expected_, h.seq);
  if (abs == out_expected_) {
    if (sink_) sink_->consume(payload);
    out_bytes_ += payload.size();
    ++out_expected_;
  } else {
    ++counters_.sequence_errors;
  }
  send_tp(TpSubtype::ACK, 2, false, static_cast<std::uint8_t>(out_expected_ % kBulkSeqModulo),
          static_cast<std::uint8_t>(burst_));
}

void ProtocolDevice::on_tp(const TransactionPacket& tp) {
  const auto eps = device_endpoints(burst_);
  if (tp.endpoint >= eps.size() || !direction_matches(eps[tp.endpoint], tp.in)) {
    ++counters_.malformed;
    send_tp(TpSubtype::STALL, tp.endpoint, tp.in, 0, 0);
    return;
  }
  if (tp.endpoint == 0) {
    if (!setup_) {
      ++counters_.malformed;
      return;
    }
    if (tp.subtype == TpSubtype::ACK && tp.in) {
      if (tp.num_packets == 0) return;  // host acknowledged the data stage
      DataPacketHeader h{address_, 0, true, 0, static_cast<std::uint16_t>(control_data_.size()), false};
      if (out_) out_(encode_dp(h, control_data_));
      return;
    }
    if (tp.subtype == TpSubtype::STATUS) {
      send_tp(TpSubtype::ACK, 0, false, 0, 0);
      const SetupPacket s = *setup_;
      setup_.reset();
      const DeviceState before = state_;
      if (s.bRequest == request::SET_ADDRESS) {
        address_ = static_cast<std::uint8_t>(s.wValue);
        state_ = address_ ? DeviceState::Addressed : DeviceState::Default;
      } else if (s.bRequest == request::SET_CONFIGURATION) {
        configuration_ = static_cast<std::uint8_t>(s.wValue);
        state_ = configuration_ ? DeviceState::Configured : DeviceState::Addressed;
      }
      if (state_ != before)
        trace("state", {{"from", std::string(to_string(before))},
                        {"to", std::string(to_string(state_))},
                        {"address", std::to_string(address_)}});
      return;
    }
    ++counters_.malformed;
    return;
  }
  // EP1 bulk IN.
  if (state_ != DeviceState::Configured || tp.subtype != TpSubtype::ACK) {
    send_tp(TpSubtype::STALL, 1, true, 0, 0);
    return;
  }
  const std::uint64_t abs = unwrap_seq(in_sent_, tp.seq);
  if (abs > in_sent_) {
    ++counters_.sequence_errors;
    return;
  }
  in_limit_ = std::max(in_limit_, abs + tp.num_packets);
  pump_in();
}

void ProtocolDevice::set_max_packet(std::uint16_t n) {
  if (n == 0 || n > kBulkMaxPacket) throw std::invalid_argument("max packet must be 1..1024");
  max_packet_ = n;
}

void ProtocolDevice::pump_in() {
  while (in_sent_ < in_limit_ && source_.available() > 0) {
    auto data = source_.take(max_packet_);
    DataPacketHeader h{address_, 1, true, static_cast<std::uint8_t>(in_sent_ % kBulkSeqModulo),
                       static_cast<std::uint16_t>(data.size()), false};
    ++in_sent_;
    if (out_) out_(encode_dp(h, std::move(data)));
  }
}

// ---------------------------------------------------------------------------
// Host

ProtocolHost::ProtocolHost(Simulator& sim, Tracer* tracer) : sim_(sim), tracer_(tracer) {}

void ProtocolHost::trace(const char* kind, std::vector<std::pair<std::string, std::string>> f) {
  if (tracer_ && tracer_->enabled()) tracer_->emit(sim_.now(), Endpoint::Host, TraceLayer::Protocol, kind, std::move(f));
}

void ProtocolHost::send_tp(TpSubtype st, std::uint8_t ep, bool in, std::uint8_t seq, std::uint8_t nump) {
  if (out_) out_(encode_tp({address_, st, ep, in, seq, nump}));
}

void ProtocolHost::control(const SetupPacket& s, ControlDone done) {
  if (mode_ != Mode::Idle) throw std::logic_error("host protocol engine busy");
  mode_ = Mode::Control;
  setup_ = s;
  stage_ = ControlStage::Setup;
  control_done_ = std::move(done);
  control_resp_ = {};
  pending_address_.reset();
  if (s.bRequest == request::SET_ADDRESS && (s.bmRequestType & 0x60) == 0)
    pending_address_ = static_cast<std::uint8_t>(s.wValue);
  DataPacketHeader h{address_, 0, false, 0, 8, true};
  if (out_) out_(encode_dp(h, s.encode()));
}

void ProtocolHost::finish_control(ControlResponse r) {
  trace("control", {{"request", describe(setup_)},
                    {"result", r.ok ? "ok" : (r.stalled ? "stall" : "error")},
                    {"bytes", std::to_string(r.data.size())}});
  mode_ = Mode::Idle;
  auto done = std::move(control_done_);
  control_done_ = nullptr;
  if (done) done(std::move(r));
}

void ProtocolHost::on_control_tp(const TransactionPacket& tp) {
  if (tp.endpoint != 0) {
    ++counters_.malformed;
    return;
  }
  if (tp.subtype == TpSubtype::STALL) {
    finish_control({false, true, {}});
    return;
  }
  if (tp.subtype != TpSubtype::ACK) {
    ++counters_.malformed;
    return;
  }
  switch (stage_) {
    case ControlStage::Setup:
      if (setup_.device_to_host() && setup_.wLength > 0) {
        stage_ = ControlStage::DataRequest;
        send_tp(TpSubtype::ACK, 0, true, 0, 1);
      } else {
        stage_ = ControlStage::Status;
        send_tp(TpSubtype::STATUS, 0, false, 0, 0);
      }
      return;
    case ControlStage::Status:
      if (pending_address_) address_ = *pending_address_;
      control_resp_.ok = true;
      finish_control(std::move(control_resp_));
      return;
    case ControlStage::DataRequest:
      ++counters_.malformed;
      return;
  }
}

void ProtocolHost::on_control_dp(std::vector<std::uint8_t> payload) {
  if (stage_ != ControlStage::DataRequest) {
    ++counters_.malformed;
    return;
  }
  control_resp_.data = std::move(payload);
  send_tp(TpSubtype::ACK, 0, true, 1, 0);
  stage_ = ControlStage::Status;
  send_tp(TpSubtype::STATUS, 0, false, 0, 0);
}

void ProtocolHost::receive(LinkPacket p) {
  const PacketType type = p.header.type();
  std::optional<TransactionPacket> tp;
  std::optional<DataPacketHeader> dph;
  if (type == PacketType::Transaction) {
    tp = decode_tp(p.header);
  } else if (type == PacketType::DataPacketHeader) {
    dph = decode_dph(p);
  } else if (type == PacketType::LinkManagement) {
    return;
  }
  if (!tp && !dph) {
    ++counters_.malformed;
    return;
  }
  switch (mode_) {
    case Mode::Idle:
      ++counters_.malformed;
      return;
    case Mode::Control:
      if (tp) {
        on_control_tp(*tp);
      } else if (dph->endpoint == 0 && dph->in) {
        on_control_dp(std::move(p.payload));
      } else {
        ++counters_.malformed;
      }
      return;
    case Mode::BulkIn: {
      if (tp) {
        if (tp->subtype == TpSubtype::STALL) finish_transfer(false, "device stalled EP1");
        return;
      }
      if (dph->endpoint != 1 || !dph->in) {
        ++counters_.malformed;
        return;
      }
      if (unwrap_seq(packets_, dph->seq) != packets_) {
        ++counters_.sequence_errors;
        finish_transfer(false, "EP1 sequence error");
        return;
      }
      if (p.payload.empty() || moved_ + p.payload.size() > total_) {
        finish_transfer(false, "EP1 packet length out of range");
        return;
      }
      if (sink_) sink_->consume(p.payload);
      moved_ += p.payload.size();
      ++packets_;
      const auto seq = static_cast<std::uint8_t>(packets_ % kBulkSeqModulo);
      if (moved_ >= total_) {
        send_tp(TpSubtype::ACK, 1, true, seq, 0);
        finish_transfer(true, "");
      } else {
        send_tp(TpSubtype::ACK, 1, true, seq, static_cast<std::uint8_t>(burst_));
      }
      return;
    }
    case Mode::BulkOut: {
      if (!tp || tp->endpoint != 2) {
        ++counters_.malformed;
        return;
      }
      if (tp->subtype == TpSubtype::STALL) {
        finish_transfer(false, "device stalled EP2");
        return;
      }
      const std::uint64_t abs = unwrap_seq(acked_, tp->seq);
      if (tp->subtype != TpSubtype::ACK || abs < acked_ || abs > packets_) {
        ++counters_.sequence_errors;
        finish_transfer(false, "EP2 acknowledgment out of range");
        return;
      }
      acked_ = abs;
      moved_ = std::min<std::uint64_t>(total_, acked_ * max_packet_);
      limit_ = std::max(limit_, abs + std::min<std::uint32_t>(tp->num_packets, burst_));
      if (acked_ == total_packets_) {
        finish_transfer(true, "");
        return;
      }
      pump_out();
      return;
    }
  }
}

void ProtocolHost::bulk_in(std::uint64_t total, std::uint32_t burst, PatternChecker* sink, TransferDone done) {
  if (mode_ != Mode::Idle) throw std::logic_error("host protocol engine busy");
  if (burst < 1 || burst > kMaxBurst) throw std::invalid_argument("burst depth must be 1..16");
  transfer_done_ = std::move(done);
  total_ = total;
  burst_ = burst;
  moved_ = 0;
  packets_ = 0;
  sink_ = sink;
  started_ = sim_.now();
  mode_ = Mode::BulkIn;
  trace("transfer_start", {{"dir", "in"}, {"bytes", std::to_string(total)}, {"burst", std::to_string(burst)}});
  if (total == 0) {
    finish_transfer(true, "");
    return;
  }
  send_tp(TpSubtype::ACK, 1, true, 0, static_cast<std::uint8_t>(burst));
}

void ProtocolHost::bulk_out(std::uint64_t total, std::uint32_t burst, PatternGenerator gen, TransferDone done) {
  if (mode_ != Mode::Idle) throw std::logic_error("host protocol engine busy");
  if (burst < 1 || burst > kMaxBurst) throw std::invalid_argument("burst depth must be 1..16");
  transfer_done_ = std::move(done);
  total_ = total;
  burst_ = burst;
  moved_ = 0;
  packets_ = 0;
  acked_ = 0;
  limit_ = burst;
  total_packets_ = (total + max_packet_ - 1) / max_packet_;
  gen_ = gen;
  started_ = sim_.now();
  mode_ = Mode::BulkOut;
  trace("transfer_start", {{"dir", "out"}, {"bytes", std::to_string(total)}, {"burst", std::to_string(burst)}});
  if (total == 0) {
    finish_transfer(true, "");
    return;
  }
  pump_out();
}

void ProtocolHost::pump_out() {
  while (packets_ < limit_ && packets_ < total_packets_) {
    const std::uint64_t offset = packets_ * max_packet_;
    std::vector<std::uint8_t> data(static_cast<std::size_t>(std::min<std::uint64_t>(max_packet_, total_ - offset)));
    gen_.fill(offset, data);
    DataPacketHeader h{address_, 2, false, static_cast<std::uint8_t>(packets_ % kBulkSeqModulo),
                       static_cast<std::uint16_t>(data.size()), false};
    ++packets_;
    if (out_) out_(encode_dp(h, std::move(data)));
  }
}

void ProtocolHost::finish_transfer(bool ok, const std::string& error) {
  TransferResult r;
  r.ok = ok;
  r.error = error;
  r.stats.bytes_moved = moved_;
  r.stats.elapsed = sim_.now() - started_;
  trace("transfer_done", {{"ok", ok ? "1" : "0"},
                          {"bytes", std::to_string(moved_)},
                          {"elapsed_ps", std::to_string(r.stats.elapsed.picoseconds())}});
  mode_ = Mode::Idle;
  auto done = std::move(transfer_done_);
  transfer_done_ = nullptr;
  if (done) done(std::move(r));
}

void ProtocolHost::set_max_packet(std::uint16_t n) {
  if (n == 0 || n > kBulkMaxPacket) throw std::invalid_argument("max packet must be 1..1024");
  max_packet_ = n;
}

void ProtocolHost::fail(const std::string& why) {
  switch (mode_) {
    case Mode::Idle:
      return;
    case Mode::Control:
      control_resp_ = {};
      finish_control({false, false, {}});
      return;
    case Mode::BulkIn:
    case Mode::BulkOut:
      finish_transfer(false, why);
      return;
  }
}

// ---------------------------------------------------------------------------
// Enumeration

void ProtocolHost::enumerate(std::uint8_t address, EnumerationDone done) {
  if (address == 0 || address > 127) throw std::invalid_argument("device address must be 1..127");
  auto st = std::make_shared<EnumerationResult>();
  st->info.address = address;
  enum_step(0, st, std::move(done));
}

void ProtocolHost::enum_step(std::size_t step, std::shared_ptr<EnumerationResult> st, EnumerationDone done) {
  auto fail_with = [this, st, done](const std::string& phase, const std::string& error) {
    st->ok = false;
    st->phase = phase;
    st->error = error;
    trace("enumeration_failed", {{"phase", phase}});
    done(*st);
  };
  auto next = [this, step, st, done] { enum_step(step + 1, st, done); };
  auto run = [&, fail_with, next](const std::string& phase, const SetupPacket& s,
                                  std::function<void(const std::vector<std::uint8_t>&)> accept) {
    control(s, [fail_with, next, phase, s, accept](ControlResponse r) {
      if (!r.ok) {
        fail_with(phase, r.stalled ? "STALL on " + describe(s) : "control transfer failed: " + describe(s));
        return;
      }
      try {
        accept(r.data);
      } catch (const DescriptorError& e) {
        fail_with(phase, e.what());
        return;
      }
      next();
    });
  };

  DeviceInfo& info = st->info;
  const std::uint8_t string_index[] = {info.device.manufacturer, info.device.product_string, info.device.serial};
  if (step >= 4 && step <= 6 && string_index[step - 4] == 0) {
    next();
    return;
  }
  switch (step) {
    case 0:
      run("device_descriptor", get_descriptor(desc_type::DEVICE, 0, 18), [&info](const auto& d) {
        info.device = parse_device_descriptor(d);
        info.device_bytes = d;
      });
      return;
    case 1:
      run("set_address", set_address(info.address), [](const auto&) {});
      return;
    case 2:
      run("configuration_header", get_descriptor(desc_type::CONFIGURATION, 0, 9), [&info](const auto& d) {
        if (d.size() != 9 || d[1] != desc_type::CONFIGURATION)
          throw DescriptorError("configuration: short header");
        info.configuration.total_length = le16(d, 2);
      });
      return;
    case 3:
      run("configuration_parse",
          get_descriptor(desc_type::CONFIGURATION, 0, info.configuration.total_length), [&info](const auto& d) {
            info.configuration = parse_configuration(d);
            info.configuration_bytes = d;
          });
      return;
    case 4:
      run("string", get_descriptor(desc_type::STRING, info.device.manufacturer, 255, 0x0409),
          [&info](const auto& d) { info.manufacturer = parse_string_descriptor(d); });
      return;
    case 5:
      run("string", get_descriptor(desc_type::STRING, info.device.product_string, 255, 0x0409),
          [&info](const auto& d) { info.product = parse_string_descriptor(d); });
      return;
    case 6:
      run("string", get_descriptor(desc_type::STRING, info.device.serial, 255, 0x0409),
          [&info](const auto& d) { info.serial = parse_string_descriptor(d); });
      return;
    case 7:
      run("set_configuration", set_configuration(info.configuration.value), [](const auto&) {});
      return;
    default:
      st->ok = true;
      trace("enumerated", {{"address", std::to_string(info.address)},
                           {"vid", hex(info.device.vendor, 4)},
                           {"pid", hex(info.device.product, 4)},
                           {"endpoints", std::to_string(info.configuration.endpoints.size())}});
      done(*st);
      return;
  }
}

}  // namespace usb3sim
