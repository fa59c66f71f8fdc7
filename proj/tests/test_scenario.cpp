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
#include <set>
#include <sstream>

#include "usb3sim/scenario.hpp"

using namespace usb3sim;
using namespace usb3sim::literals;

namespace {

ScenarioConfig random_config(std::mt19937_64& rng) {
  ScenarioConfig c;
  c.seed = rng();
  c.ber = std::uniform_real_distribution<double>(0, 0.5)(rng);
  c.latency_ns = rng() % 1'000'001;
  c.partner_present = rng() % 2;
  c.scale_divisor = 1 + static_cast<std::uint32_t>(rng() % 1'000'000);
  c.tseq_count = 1 + static_cast<std::uint32_t>(rng() % 1000);
  c.polling_timeout_us = 1 + rng() % 100000;
  c.recovery_timeout_us = 1 + rng() % 100000;
  c.max_skew_ns = rng() % 1'000'000;
  c.credits = 1 + static_cast<std::uint32_t>(rng() % 4);
  c.max_packet = 512 + static_cast<std::uint32_t>(rng() % 513);
  c.retry_budget = 1 + static_cast<std::uint32_t>(rng() % 100);
  c.direction = rng() % 2 ? Direction::In : Direction::Out;
  c.bytes = rng() % (std::uint64_t{1} << 40);
  c.burst = 1 + static_cast<std::uint32_t>(rng() % 16);
  c.pattern = rng() % 2 ? PatternKind::Counter : PatternKind::Random;
  c.bringup_horizon_us = 1 + rng() % 1000000;
  c.transfer_horizon_ms = 1 + rng() % 100000;
  c.trace_out = rng() % 2 ? "" : "out/trace_" + std::to_string(rng() % 1000) + ".txt";
  return c;
}

ScenarioConfig small(std::uint64_t bytes = 64 * 1024) {
  ScenarioConfig c;
  c.bytes = bytes;
  return c;
}

}  // namespace

TEST_CASE("config text round-trips losslessly") {
  CHECK(ScenarioConfig::from_text(ScenarioConfig{}.to_text()) == ScenarioConfig{});
  std::mt19937_64 rng(17);
  for (int i = 0; i < 500; ++i) {
    const ScenarioConfig c = random_config(rng);
    CHECK_NOTHROW(c.validate());
    const ScenarioConfig back = ScenarioConfig::from_text(c.to_text());
    CHECK(back == c);
    CHECK(back.to_text() == c.to_text());
  }
  // Every key appears once in the serialized form.
  const std::string text = ScenarioConfig{}.to_text();
  for (auto k : ScenarioConfig::keys()) CHECK(text.find("\n" + std::string(k) + " = ") != std::string::npos);
}

TEST_CASE("config file syntax") {
  const auto c = ScenarioConfig::from_text(
      "# comment\n"
      "\n"
      "  seed = 42   # trailing\n"
      "ber=1e-6\r\n"
      "direction = out\n");
  CHECK(c.seed == 42);
  CHECK(c.ber == 1e-6);
  CHECK(c.direction == Direction::Out);
  CHECK(c.burst == ScenarioConfig{}.burst);

  CHECK_THROWS_WITH_AS(ScenarioConfig::from_text("seed = 1\nbogus = 3\n"), "line 2: unknown key 'bogus'",
                       ConfigError);
  CHECK_THROWS_WITH_AS(ScenarioConfig::from_text("seed 1\n"), "line 1: expected key = value", ConfigError);
  CHECK_THROWS_AS(ScenarioConfig::from_text("seed = -1\n"), ConfigError);
  CHECK_THROWS_AS(ScenarioConfig::from_text("burst = 4x\n"), ConfigError);
  CHECK_THROWS_AS(ScenarioConfig::from_text("partner_present = maybe\n"), ConfigError);
  CHECK_THROWS_AS(ScenarioConfig::from_text("pattern = zeros\n"), ConfigError);
}

TEST_CASE("later sources override earlier ones") {
  ScenarioConfig c;  // defaults
  c.merge_text("seed = 5\nburst = 4\n");
  CHECK(c.seed == 5);
  c.set("burst", "8");  // a flag on top of the file
  CHECK(c.burst == 8);
  CHECK(c.seed == 5);
  CHECK(c.latency_ns == 100);
}

TEST_CASE("validation bounds") {
  auto bad = [](auto mutate) {
    ScenarioConfig c;
    mutate(c);
    return c;
  };
  CHECK_THROWS_WITH_AS(bad([](auto& c) { c.burst = 0; }).validate(), "burst out of range (1..16)", ConfigError);
  CHECK_THROWS_AS(bad([](auto& c) { c.burst = 17; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](auto& c) { c.ber = 0.6; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](auto& c) { c.ber = -1e-9; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](auto& c) { c.credits = 5; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](auto& c) { c.max_packet = 256; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](auto& c) { c.scale_divisor = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](auto& c) { c.transfer_horizon_ms = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(Testbench(bad([](auto& c) { c.tseq_count = 0; })), ConfigError);
}

TEST_CASE("startup skew is seeded and bounded") {
  ScenarioConfig a, b;
  a.seed = 3;
  b.seed = 3;
  CHECK(a.startup_skew() == b.startup_skew());
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 200; ++s) {
    a.seed = s;
    CHECK(a.startup_skew() <= SimTime::ns(a.max_skew_ns));
    seen.insert(a.startup_skew().picoseconds());
  }
  CHECK(seen.size() > 190);
  a.max_skew_ns = 0;
  CHECK(a.startup_skew() == SimTime{});
}

TEST_CASE("bring-up with defaults reaches U0 well inside 1 ms") {
  Testbench tb(ScenarioConfig{});
  const auto r = tb.bring_up();
  CHECK(r.ok);
  REQUIRE(r.time_to_u0);
  CHECK(*r.time_to_u0 < 1_ms);
  CHECK(r.lfps_bursts >= 4);
}

TEST_CASE("bring-up without a partner fails in RxDetect") {
  ScenarioConfig c;
  c.partner_present = false;
  Testbench tb(c);
  const auto r = tb.bring_up();
  CHECK_FALSE(r.ok);
  CHECK(r.host_state == LinkState::RxDetect);
  CHECK_FALSE(r.time_to_u0);
  const auto e = tb.enumerate();
  CHECK_FALSE(e.ok);
  CHECK(e.phase == "bringup");
}

TEST_CASE("enumeration over the full stack") {
  Testbench tb(ScenarioConfig{});
  const auto e = tb.enumerate();
  REQUIRE(e.ok);
  CHECK(tb.device_protocol().state() == DeviceState::Configured);
  CHECK(e.info.configuration.endpoints.size() == 2);
  CHECK(e.info.product == "SuperSpeed bulk device");
}

TEST_CASE("bulk transfers deliver the pattern intact") {
  for (Direction d : {Direction::In, Direction::Out}) {
    for (PatternKind k : {PatternKind::Counter, PatternKind::Random}) {
      ScenarioConfig c = small(100'000);
      c.direction = d;
      c.pattern = k;
      Testbench tb(c);
      const auto r = tb.bulk();
      CHECK(r.ok);
      CHECK(r.intact);
      CHECK(r.stats.bytes_moved == 100'000);
      CHECK(r.stats.retries == 0);
      CHECK(r.stats.crc_errors == 0);
    }
  }
}

TEST_CASE("smaller link packets still carry the stream") {
  ScenarioConfig c = small(50'000);
  c.max_packet = 512;
  c.burst = 3;
  Testbench tb(c);
  const auto r = tb.bulk();
  CHECK(r.ok);
  CHECK(r.intact);
}

TEST_CASE("zero-byte transfer succeeds at once") {
  Testbench tb(small(0));
  const auto r = tb.bulk();
  CHECK(r.ok);
  CHECK(r.intact);
  CHECK(r.stats.bytes_moved == 0);
  CHECK(r.stats.effective_rate_mbps() == 0.0);
}

TEST_CASE("bit errors cost retries, not data") {
  ScenarioConfig c = small(400'000);
  c.ber = 1e-5;
  c.seed = 4;
  Testbench tb(c);
  const auto r = tb.bulk();
  CHECK(r.ok);
  CHECK(r.intact);
  CHECK(r.stats.retries > 0);
  CHECK(r.stats.crc_errors > 0);
}

TEST_CASE("a hopeless channel is reported, not crashed") {
  ScenarioConfig c = small(10'000);
  c.ber = 0.4;
  c.bringup_horizon_us = 5000;
  c.transfer_horizon_ms = 5;
  Testbench tb(c);
  const auto r = tb.bulk();
  CHECK_FALSE(r.ok);
  CHECK_FALSE(r.error.empty());
}

TEST_CASE("identical config and seed give identical traces") {
  auto run = [](std::uint64_t seed) {
    ScenarioConfig c = small(20'000);
    c.seed = seed;
    c.ber = 1e-5;
    std::ostringstream out;
    Testbench tb(c, &out);
    tb.bulk();
    return out.str();
  };
  const std::string a = run(11);
  CHECK(a.size() > 10000);
  CHECK(a == run(11));
  CHECK(a != run(12));
}

TEST_CASE("sweep rows follow the rate list") {
  ScenarioConfig c = small(30'000);
  const auto rows = ber_sweep(c, {0.0, 1e-6});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].ber == 0.0);
  CHECK(rows[0].result.intact);
  CHECK(rows[0].result.stats.retries == 0);
  CHECK(rows[1].result.intact);
}

TEST_CASE("streaming workload keeps up") {
  WorkloadPreset w = workload_preset_pmt();
  w.duration = 5_ms;
  Testbench tb(ScenarioConfig{});
  const auto r = tb.pmt(w);
  CHECK(r.ok);
  CHECK(r.events == 250);
  CHECK(r.bytes == 500'000);
  CHECK(r.max_backlog_at_event == 0);
  CHECK(r.final_backlog == 0);

  WorkloadPreset none = w;
  none.rate_hz = 0;
  Testbench idle(ScenarioConfig{});
  const auto z = idle.pmt(none);
  CHECK(z.ok);
  CHECK(z.events == 0);
  CHECK(z.bytes == 0);
}

TEST_CASE("an oversubscribed stream shows its backlog") {
  WorkloadPreset w;
  w.event_bytes = 16384;
  w.rate_hz = 50000;  // 819 MB/s offered
  w.duration = 1_ms;
  Testbench tb(ScenarioConfig{});
  const auto r = tb.pmt(w);
  CHECK(r.ok);
  CHECK(r.max_backlog_at_event > 100'000);
}
