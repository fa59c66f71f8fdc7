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

#include <doctest.h>

#include <random>

#include "usb3sim/protocol.hpp"

using namespace usb3sim;
using namespace usb3sim::literals;
using Bytes = std::vector<std::uint8_t>;

namespace {

// Host and device engines joined by a fixed-latency, lossless pipe.
struct Loop {
  Simulator sim;
  Tracer tracer;
  ProtocolHost host;
  ProtocolDevice dev;
  SimTime latency = 100_ns;

  explicit Loop(DescriptorSet d = DescriptorSet::standard(), std::uint32_t burst = 16)
      : host(sim, &tracer), dev(sim, std::move(d), burst, &tracer) {
    tracer.keep_records(true);
    host.set_output([this](LinkPacket p) {
      sim.schedule_in(latency, Endpoint::Device, [this, p] { dev.receive(p); });
    });
    dev.set_output([this](LinkPacket p) {
      sim.schedule_in(latency, Endpoint::Host, [this, p] { host.receive(p); });
    });
  }

  EnumerationResult enumerate() {
    EnumerationResult out;
    host.enumerate(1, [&](EnumerationResult r) { out = std::move(r); });
    sim.run_until(sim.now() + 1_ms);
    return out;
  }

  ControlResponse control(const SetupPacket& s) {
    ControlResponse out;
    host.control(s, [&](ControlResponse r) { out = std::move(r); });
    sim.run_until(sim.now() + 100_us);
    return out;
  }

  std::vector<std::string> requests() const {
    std::vector<std::string> out;
    for (const auto& r : tracer.records())
      if (r.kind == "control") out.push_back(std::string(*r.get("request")) + ":" + std::string(*r.get("result")));
    return out;
  }
};

Bytes utf16(std::string_view s) {
  Bytes b{static_cast<std::uint8_t>(2 + 2 * s.size()), 3};
  for (char c : s) {
    b.push_back(static_cast<std::uint8_t>(c));
    b.push_back(0);
  }
  return b;
}

}  // namespace

TEST_CASE("descriptor bytes") {
  const auto d = DescriptorSet::standard(16);
  CHECK(d.device == Bytes{18, 1, 0x00, 0x03, 0, 0, 0, 9, 0x09, 0x12, 0x01, 0x00, 0x00, 0x01, 1, 2, 3, 1});
  const Bytes config{
      9, 2, 44, 0, 1, 1, 0, 0x80, 0x32,        // configuration
      9, 4, 0, 0, 2, 0xFF, 0, 0, 0,            // interface
      7, 5, 0x81, 2, 0x00, 0x04, 0,            // EP1 IN
      6, 0x30, 15, 0, 0, 0,                    // companion
      7, 5, 0x02, 2, 0x00, 0x04, 0,            // EP2 OUT
      6, 0x30, 15, 0, 0, 0,                    // companion
  };
  CHECK(d.configuration == config);
  CHECK(d.configuration.size() == 9 + 9 + 7 + 6 + 7 + 6);
  REQUIRE(d.strings.size() == 4);
  CHECK(d.strings[0] == Bytes{4, 3, 0x09, 0x04});
  CHECK(d.strings[1] == utf16("usb3sim"));
  CHECK(d.strings[2] == utf16("SuperSpeed bulk device"));
  CHECK(d.strings[3] == utf16("0001"));
  CHECK(DescriptorSet::standard(1).configuration[29] == 0);
  CHECK_THROWS(DescriptorSet::standard(17));
  CHECK_THROWS(DescriptorSet::standard(0));
}

TEST_CASE("descriptor parsing") {
  const auto d = DescriptorSet::standard(8);
  const auto dev = parse_device_descriptor(d.device);
  CHECK(dev.vendor == kVendorId);
  CHECK(dev.product == kProductId);
  CHECK(dev.bcd_usb == 0x0300);
  CHECK(dev.max_packet0_exp == 9);
  const auto cfg = parse_configuration(d.configuration);
  CHECK(cfg.total_length == 44);
  CHECK(cfg.value == 1);
  CHECK(cfg.interface_class == 0xFF);
  REQUIRE(cfg.endpoints.size() == 2);
  CHECK(cfg.endpoints[0].address == 0x81);
  CHECK(cfg.endpoints[0].in());
  CHECK(cfg.endpoints[1].number() == 2);
  CHECK(cfg.endpoints[1].max_packet == 1024);
  CHECK(cfg.endpoints[1].burst_depth == 8);
  CHECK(parse_string_descriptor(d.strings[2]) == "SuperSpeed bulk device");

  auto bad = d.configuration;
  bad.resize(bad.size() - 13);  // drop EP2 and its companion
  CHECK_THROWS_AS(parse_configuration(bad), DescriptorError);
  bad[2] = static_cast<std::uint8_t>(bad.size());
  CHECK_THROWS_WITH_AS(parse_configuration(bad), "configuration: endpoint count mismatch", DescriptorError);
  bad = d.configuration;
  bad.erase(bad.begin() + 25, bad.begin() + 31);  // EP1 companion
  bad[2] = static_cast<std::uint8_t>(bad.size());
  CHECK_THROWS_AS(parse_configuration(bad), DescriptorError);
  CHECK_THROWS_AS(parse_device_descriptor(Bytes(d.device.begin(), d.device.begin() + 8)), DescriptorError);
}

TEST_CASE("packet codecs") {
  const TransactionPacket tp{3, TpSubtype::ACK, 1, true, 17, 16};
  const auto lp = encode_tp(tp);
  CHECK(lp.header.type() == PacketType::Transaction);
  CHECK(decode_tp(lp.header) == tp);
  auto bad = lp.header;
  bad.body[5] = 17;
  CHECK_FALSE(decode_tp(bad));

  const DataPacketHeader h{3, 2, false, 31, 5, false};
  const auto dp = encode_dp(h, {1, 2, 3, 4, 5});
  CHECK(decode_dph(dp) == h);
  auto short_dp = dp;
  short_dp.payload.pop_back();
  CHECK_FALSE(decode_dph(short_dp));
  CHECK_THROWS(encode_dp(h, {1}));
  CHECK_FALSE(decode_dph(lp));
}

TEST_CASE("sequence unwrapping") {
  for (std::uint64_t ref = 0; ref < 200; ++ref) {
    for (int off = -16; off < 16; ++off) {
      if (static_cast<std::int64_t>(ref) + off < 0) continue;
      const std::uint64_t want = ref + off;
      CHECK(unwrap_seq(ref, static_cast<std::uint8_t>(want % 32)) == want);
    }
  }
}

TEST_CASE("standard request dispatch") {
  Simulator sim;
  ProtocolDevice dev(sim, DescriptorSet::standard(), 16);
  auto r = dev.handle_control(get_descriptor(desc_type::DEVICE, 0, 18));
  CHECK_FALSE(r.stall);
  CHECK(r.data.size() == 18);
  r = dev.handle_control(get_descriptor(desc_type::DEVICE, 0, 8));
  const auto device = DescriptorSet::standard().device;
  CHECK(r.data == Bytes(device.begin(), device.begin() + 8));
  r = dev.handle_control(get_descriptor(desc_type::CONFIGURATION, 0, 1000));
  CHECK(r.data.size() == 44);
  CHECK(dev.handle_control({0xC0, 0x42, 0, 0, 4}).stall);  // vendor
  CHECK(dev.handle_control({0x21, 0x09, 0, 0, 0}).stall);  // class
  CHECK(dev.handle_control(set_configuration(1)).stall);    // not addressed yet
  CHECK(dev.handle_control({0x80, request::GET_CONFIGURATION, 0, 0, 1}).stall);
  CHECK_FALSE(dev.handle_control(set_address(1)).stall);
  CHECK(dev.handle_control(set_address(200)).stall);
  CHECK(dev.handle_control(get_descriptor(desc_type::STRING, 9, 255)).stall);
  CHECK(dev.handle_control(get_descriptor(7, 0, 10)).stall);
  CHECK(dev.handle_control({0x80, request::GET_STATUS, 0, 0, 2}).data == Bytes{0, 0});
}

TEST_CASE("setup packet encoding") {
  const auto s = get_descriptor(desc_type::CONFIGURATION, 0, 44);
  CHECK(s.encode() == Bytes{0x80, 6, 0x00, 0x02, 0, 0, 44, 0});
  CHECK(SetupPacket::decode(s.encode()) == s);
  CHECK_FALSE(SetupPacket::decode(Bytes{1, 2, 3}));
  CHECK(describe(s) == "GET_DESCRIPTOR(CONFIGURATION,0,44)");
  CHECK(describe({0xC0, 0x42, 0, 0, 0}) == "REQUEST(0xC0,0x42)");
}

TEST_CASE("enumeration of a compliant device") {
  Loop lp;
  const auto r = lp.enumerate();
  INFO(r.phase, ": ", r.error);
  REQUIRE(r.ok);
  CHECK(lp.dev.state() == DeviceState::Configured);
  CHECK(lp.dev.address() == 1);
  CHECK(lp.host.address() == 1);
  CHECK(r.info.device.vendor == kVendorId);
  CHECK(r.info.configuration.endpoints.size() == 2);
  CHECK(r.info.manufacturer == "usb3sim");
  CHECK(r.info.product == "SuperSpeed bulk device");
  CHECK(r.info.serial == "0001");
  CHECK(lp.requests() == std::vector<std::string>{
                             "GET_DESCRIPTOR(DEVICE,0,18):ok",
                             "SET_ADDRESS(1):ok",
                             "GET_DESCRIPTOR(CONFIGURATION,0,9):ok",
                             "GET_DESCRIPTOR(CONFIGURATION,0,44):ok",
                             "GET_DESCRIPTOR(STRING,1,255):ok",
                             "GET_DESCRIPTOR(STRING,2,255):ok",
                             "GET_DESCRIPTOR(STRING,3,255):ok",
                             "SET_CONFIGURATION(1):ok",
                         });

  // Repeated reads return the same bytes; packets for address 0 are ignored.
  const auto a = lp.control(get_descriptor(desc_type::CONFIGURATION, 0, 44));
  const auto b = lp.control(get_descriptor(desc_type::CONFIGURATION, 0, 44));
  CHECK(a.ok);
  CHECK(a.data == b.data);
  CHECK(a.data == r.info.configuration_bytes);
  lp.dev.receive(encode_tp({0, TpSubtype::ACK, 1, true, 0, 1}));
  CHECK(lp.dev.counters().misaddressed == 1);
}

TEST_CASE("enumeration failures name their phase") {
  SUBCASE("missing endpoint descriptor") {
    auto d = DescriptorSet::standard();
    d.configuration.resize(d.configuration.size() - 13);
    d.configuration[2] = static_cast<std::uint8_t>(d.configuration.size());
    Loop lp(d);
    const auto r = lp.enumerate();
    CHECK_FALSE(r.ok);
    CHECK(r.phase == "configuration_parse");
    CHECK(lp.dev.state() == DeviceState::Addressed);
  }
  SUBCASE("stalled string request") {
    auto d = DescriptorSet::standard();
    d.strings.resize(2);
    Loop lp(d);
    const auto r = lp.enumerate();
    CHECK_FALSE(r.ok);
    CHECK(r.phase == "string");
    CHECK(r.error == "STALL on GET_DESCRIPTOR(STRING,2,255)");
  }
  SUBCASE("bad device descriptor") {
    auto d = DescriptorSet::standard();
    d.device[1] = 7;
    Loop lp(d);
    const auto r = lp.enumerate();
    CHECK_FALSE(r.ok);
    CHECK(r.phase == "device_descriptor");
  }
}

TEST_CASE("patterns") {
  PatternGenerator counter;
  Bytes b(12);
  counter.fill(0, b);
  CHECK(b == Bytes{0, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0});
  counter.fill(0x3FC, std::span(b).first(4));
  CHECK(Bytes(b.begin(), b.begin() + 4) == Bytes{0xFF, 0, 0, 0});

  std::mt19937_64 rng(5);
  for (PatternKind k : {PatternKind::Counter, PatternKind::Random}) {
    PatternGenerator g(k, 99);
    for (int t = 0; t < 100; ++t) {
      const std::uint64_t off = rng() % 100000;
      Bytes chunk(1 + rng() % 40);
      g.fill(off, chunk);
      for (std::size_t i = 0; i < chunk.size(); ++i) CHECK(chunk[i] == g.at(off + i));
    }
  }
  CHECK(PatternGenerator(PatternKind::Random, 1).at(0) != PatternGenerator(PatternKind::Random, 2).at(0));

  PatternChecker ck(PatternGenerator(PatternKind::Random, 7));
  Bytes data(5000);
  PatternGenerator(PatternKind::Random, 7).fill(0, data);
  data[3210] ^= 0x40;
  ck.consume(std::span(data).first(1000));
  ck.consume(std::span(data).subspan(1000));
  CHECK(ck.bytes() == 5000);
  CHECK_FALSE(ck.intact());
  CHECK(ck.first_mismatch() == 3210);
}

TEST_CASE("bulk transfers over a lossless pipe") {
  for (std::uint32_t burst : {1u, 4u, 16u}) {
    for (std::uint64_t total : {std::uint64_t{1}, std::uint64_t{1024}, std::uint64_t{100000}}) {
      CAPTURE(burst);
      CAPTURE(total);
      {
        Loop lp(DescriptorSet::standard(burst), burst);
        REQUIRE(lp.enumerate().ok);
        lp.dev.source().add(total);
        PatternChecker sink{PatternGenerator{}};
        TransferResult res;
        lp.host.bulk_in(total, burst, &sink, [&](TransferResult r) { res = r; });
        lp.sim.run_until(lp.sim.now() + 100_ms);
        CHECK(res.ok);
        CHECK(res.stats.bytes_moved == total);
        CHECK(sink.bytes() == total);
        CHECK(sink.intact());
      }
      {
        Loop lp(DescriptorSet::standard(burst), burst);
        REQUIRE(lp.enumerate().ok);
        PatternChecker sink{PatternGenerator{PatternKind::Random, 3}};
        lp.dev.set_sink(&sink);
        TransferResult res;
        lp.host.bulk_out(total, burst, PatternGenerator{PatternKind::Random, 3},
                         [&](TransferResult r) { res = r; });
        lp.sim.run_until(lp.sim.now() + 100_ms);
        CHECK(res.ok);
        CHECK(res.stats.bytes_moved == total);
        CHECK(sink.bytes() == total);
        CHECK(sink.intact());
      }
    }
  }
}

TEST_CASE("zero-length transfers finish at once") {
  Loop lp;
  REQUIRE(lp.enumerate().ok);
  TransferResult res;
  lp.host.bulk_in(0, 16, nullptr, [&](TransferResult r) { res = r; });
  CHECK(res.ok);
  CHECK(res.stats.bytes_moved == 0);
  CHECK(res.stats.elapsed == SimTime{});
  CHECK(res.stats.effective_rate_mbps() == 0.0);
  res = {};
  lp.host.bulk_out(0, 16, PatternGenerator{}, [&](TransferResult r) { res = r; });
  CHECK(res.ok);
  CHECK(res.stats.bytes_moved == 0);
}

TEST_CASE("bulk before configuration is stalled") {
  Loop lp;
  lp.dev.source().add(4096);
  TransferResult res;
  lp.host.bulk_in(4096, 4, nullptr, [&](TransferResult r) { res = r; });
  lp.sim.run_until(lp.sim.now() + 10_us);
  CHECK_FALSE(res.ok);
  CHECK(res.error == "device stalled EP1");
}

TEST_CASE("rate arithmetic") {
  TransferStats s;
  s.bytes_moved = 320'000'000;
  s.elapsed = SimTime::ms(1000);
  CHECK(s.effective_rate_mbps() == doctest::Approx(320.0));
}

TEST_CASE("PMT workload preset") {
  const auto w = workload_preset_pmt();
  CHECK(w.event_bytes == 2000);
  CHECK(w.rate_hz == 50000);
  CHECK(w.offered_mbps() == doctest::Approx(100.0));
  CHECK(w.events() == 50000);
  CHECK(w.interval() == 20_us);
  WorkloadPreset idle = w;
  idle.rate_hz = 0;
  CHECK(idle.offered_mbps() == 0.0);
  CHECK(idle.events() == 0);
  CHECK(idle.interval() == SimTime{});
}

TEST_CASE("endpoint configuration") {
  CHECK_NOTHROW(EndpointConfig{1, EndpointKind::BulkIn, 1024, 16}.validate());
  CHECK_THROWS(EndpointConfig{1, EndpointKind::BulkOut, 1024, 16}.validate());
  CHECK_THROWS(EndpointConfig{0, EndpointKind::Control, 512, 17}.validate());
  CHECK_THROWS(EndpointConfig{3, EndpointKind::BulkIn, 1024, 1}.validate());
}
