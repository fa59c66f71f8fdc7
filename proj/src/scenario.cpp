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

#include "usb3sim/scenario.hpp"

#include <charconv>
#include <ostream>
#include <sstream>

namespace usb3sim {
namespace {

constexpr std::uint8_t kDeviceAddress = 1;

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_uint(std::string_view key, std::string_view v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) {
    throw ConfigError(std::string(key) + ": expected an unsigned integer, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

std::string format_double(double d) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, p);
}

void check(bool ok, const char* key, const char* range) {
  if (!ok) throw ConfigError(std::string(key) + " out of range (" + range + ")");
}

const ScenarioConfig& validated(const ScenarioConfig& c) {
  c.validate();
  return c;
}

}  // namespace

std::string_view to_string(Direction d) { return d == Direction::In ? "in" : "out"; }

const std::vector<std::string_view>& ScenarioConfig::keys() {
  static const std::vector<std::string_view> k = {
      "seed",        "ber",          "latency_ns",   "partner_present",    "scale_divisor",
      "tseq_count",  "polling_timeout_us", "recovery_timeout_us", "max_skew_ns", "credits",
      "max_packet",  "retry_budget", "direction",    "bytes",              "burst",
      "pattern",     "bringup_horizon_us", "transfer_horizon_ms", "trace_out"};
  return k;
}

void ScenarioConfig::validate() const {
  check(ber >= 0.0 && ber <= 0.5, "ber", "0..0.5");
  check(latency_ns <= 1'000'000, "latency_ns", "0..1000000");
  check(scale_divisor >= 1 && scale_divisor <= 1'000'000, "scale_divisor", "1..1000000");
  check(tseq_count >= 1 && tseq_count <= 1'000'000, "tseq_count", "1..1000000");
  check(polling_timeout_us >= 1 && polling_timeout_us <= 10'000'000, "polling_timeout_us", "1..10000000");
  check(recovery_timeout_us >= 1 && recovery_timeout_us <= 10'000'000, "recovery_timeout_us", "1..10000000");
  check(max_skew_ns <= 1'000'000'000, "max_skew_ns", "0..1000000000");
  check(credits >= 1 && credits <= 4, "credits", "1..4");
  // Control transfers carry up to 255 descriptor bytes in one packet.
  check(max_packet >= 512 && max_packet <= 1024, "max_packet", "512..1024");
  check(retry_budget >= 1 && retry_budget <= 1'000'000, "retry_budget", "1..1000000");
  check(bytes <= (std::uint64_t{1} << 40), "bytes", "0..2^40");
  check(burst >= 1 && burst <= kMaxBurst, "burst", "1..16");
  check(bringup_horizon_us >= 1 && bringup_horizon_us <= 100'000'000, "bringup_horizon_us", "1..100000000");
  check(transfer_horizon_ms >= 1 && transfer_horizon_ms <= 10'000'000, "transfer_horizon_ms", "1..10000000");
}

void ScenarioConfig::set(std::string_view key, std::string_view value) {
  const std::string_view v = trim(value);
  if (key == "seed") {
    seed = parse_uint<std::uint64_t>(key, v);
  } else if (key == "ber") {
    ber = parse_double(key, v);
  } else if (key == "latency_ns") {
    latency_ns = parse_uint<std::uint64_t>(key, v);
  } else if (key == "partner_present") {
    partner_present = parse_bool(key, v);
  } else if (key == "scale_divisor") {
    scale_divisor = parse_uint<std::uint32_t>(key, v);
  } else if (key == "tseq_count") {
    tseq_count = parse_uint<std::uint32_t>(key, v);
  } else if (key == "polling_timeout_us") {
    polling_timeout_us = parse_uint<std::uint64_t>(key, v);
  } else if (key == "recovery_timeout_us") {
    recovery_timeout_us = parse_uint<std::uint64_t>(key, v);
  } else if (key == "max_skew_ns") {
    max_skew_ns = parse_uint<std::uint64_t>(key, v);
  } else if (key == "credits") {
    credits = parse_uint<std::uint32_t>(key, v);
  } else if (key == "max_packet") {
    max_packet = parse_uint<std::uint32_t>(key, v);
  } else if (key == "retry_budget") {
    retry_budget = parse_uint<std::uint32_t>(key, v);
  } else if (key == "direction") {
    if (v == "in") {
      direction = Direction::In;
    } else if (v == "out") {
      direction = Direction::Out;
    } else {
      throw ConfigError("direction: expected in or out, got '" + std::string(v) + "'");
    }
  } else if (key == "bytes") {
    bytes = parse_uint<std::uint64_t>(key, v);
  } else if (key == "burst") {
    burst = parse_uint<std::uint32_t>(key, v);
  } else if (key == "pattern") {
    if (v == "counter") {
      pattern = PatternKind::Counter;
    } else if (v == "random") {
      pattern = PatternKind::Random;
    } else {
      throw ConfigError("pattern: expected counter or random, got '" + std::string(v) + "'");
    }
  } else if (key == "bringup_horizon_us") {
    bringup_horizon_us = parse_uint<std::uint64_t>(key, v);
  } else if (key == "transfer_horizon_ms") {
    transfer_horizon_ms = parse_uint<std::uint64_t>(key, v);
  } else if (key == "trace_out") {
    trace_out = std::string(v);
  } else {
    throw ConfigError("unknown key '" + std::string(key) + "'");
  }
}

std::string ScenarioConfig::to_text() const {
  std::ostringstream o;
  o << "# usb3sim scenario\n";
  o << "seed = " << seed << '\n';
  o << "\n# channel\n";
  o << "ber = " << format_double(ber) << '\n';
  o << "latency_ns = " << latency_ns << '\n';
  o << "partner_present = " << (partner_present ? "true" : "false") << '\n';
  o << "\n# training\n";
  o << "scale_divisor = " << scale_divisor << '\n';
  o << "tseq_count = " << tseq_count << '\n';
  o << "polling_timeout_us = " << polling_timeout_us << '\n';
  o << "recovery_timeout_us = " << recovery_timeout_us << '\n';
  o << "max_skew_ns = " << max_skew_ns << '\n';
  o << "\n# link\n";
  o << "credits = " << credits << '\n';
  o << "max_packet = " << max_packet << '\n';
  o << "retry_budget = " << retry_budget << '\n';
  o << "\n# transfer\n";
  o << "direction = " << to_string(direction) << '\n';
  o << "bytes = " << bytes << '\n';
  o << "burst = " << burst << '\n';
  o << "pattern = " << (pattern == PatternKind::Counter ? "counter" : "random") << '\n';
  o << "\n# horizons (simulated)\n";
  o << "bringup_horizon_us = " << bringup_horizon_us << '\n';
  o << "transfer_horizon_ms = " << transfer_horizon_ms << '\n';
  o << "\ntrace_out = " << trace_out << '\n';
  return o.str();
}

void ScenarioConfig::merge_text(std::string_view text) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

ScenarioConfig ScenarioConfig::from_text(std::string_view text) {
  ScenarioConfig c;
  c.merge_text(text);
  return c;
}

PartnerConfig ScenarioConfig::partner() const {
  PartnerConfig p;
  p.phy.partner_present = partner_present;
  p.phy.scale_divisor = scale_divisor;
  p.ltssm.tseq_count = tseq_count;
  p.ltssm.polling_timeout = SimTime::us(polling_timeout_us);
  p.ltssm.recovery_timeout = SimTime::us(recovery_timeout_us);
  p.link.credits = credits;
  p.link.max_payload = max_packet;
  p.link.retry_budget = retry_budget;
  return p;
}

ChannelConfig ScenarioConfig::channel() const { return {SimTime::ns(latency_ns), ber, seed}; }

SimTime ScenarioConfig::startup_skew() const {
  if (max_skew_ns == 0) return {};
  // A stream apart from the channel's error generators.
  Xoshiro256 rng(seed ^ 0x5EED'5CE3'0000'0000ULL);
  return SimTime::ps(rng.next() % (max_skew_ns * 1000 + 1));
}

// ---------------------------------------------------------------------------

Testbench::Testbench(const ScenarioConfig& cfg, std::ostream* trace)
    : cfg_(validated(cfg)), tracer_(trace), channel_(sim_, cfg.channel()) {
  const PartnerConfig pc = cfg_.partner();
  host_ = std::make_unique<LinkPartner>(sim_, Endpoint::Host, channel_.toward(Endpoint::Device),
                                        channel_.toward(Endpoint::Host), pc, &tracer_);
  dev_ = std::make_unique<LinkPartner>(sim_, Endpoint::Device, channel_.toward(Endpoint::Host),
                                       channel_.toward(Endpoint::Device), pc, &tracer_);
  phost_ = std::make_unique<ProtocolHost>(sim_, &tracer_);
  pdev_ = std::make_unique<ProtocolDevice>(sim_, DescriptorSet::standard(cfg_.burst), cfg_.burst, &tracer_);
  phost_->set_max_packet(static_cast<std::uint16_t>(cfg_.max_packet));
  pdev_->set_max_packet(static_cast<std::uint16_t>(cfg_.max_packet));

  phost_->set_output([this](LinkPacket p) { host_->submit(std::move(p)); });
  pdev_->set_output([this](LinkPacket p) { dev_->submit(std::move(p)); });
  host_->link().set_deliver([this](LinkPacket p) { phost_->receive(std::move(p)); });
  dev_->link().set_deliver([this](LinkPacket p) { pdev_->receive(std::move(p)); });

  if (tracer_.enabled()) {
    tracer_.emit(SimTime{}, Endpoint::Channel, TraceLayer::Phy, "config",
                 {{"seed", std::to_string(cfg_.seed)},
                  {"ber", format_double(cfg_.ber)},
                  {"latency_ps", std::to_string(SimTime::ns(cfg_.latency_ns).picoseconds())},
                  {"scale_divisor", std::to_string(cfg_.scale_divisor)}});
  }
}

Testbench::~Testbench() = default;

bool Testbench::link_dead() const {
  return host_->link().aborted() || dev_->link().aborted();
}

void Testbench::fill_link_stats(TransferStats& s) const {
  s.retries = host_->link().stats().retransmissions + dev_->link().stats().retransmissions;
  s.crc_errors = 0;
  for (const LinkPartner* p : {host_.get(), dev_.get()}) {
    const LinkStats& ls = p->link().stats();
    s.crc_errors += ls.header_errors + ls.payload_errors + ls.link_commands_lost;
  }
}

BringupReport Testbench::bring_up() {
  if (bringup_) return *bringup_;
  BringupReport r;
  r.skew = cfg_.startup_skew();
  host_->power_on();
  dev_->power_on(r.skew);
  auto both = [this] { return host_->state() == LinkState::U0 && dev_->state() == LinkState::U0; };
  sim_.run_until(SimTime::us(cfg_.bringup_horizon_us), both);
  r.ok = both();
  r.host_state = host_->state();
  r.device_state = dev_->state();
  if (r.ok) r.time_to_u0 = sim_.now();
  r.lfps_bursts = host_->phy().bursts_sent() + dev_->phy().bursts_sent();
  bringup_ = r;
  return r;
}

EnumerationResult Testbench::enumerate() {
  if (enumeration_) return *enumeration_;
  const BringupReport b = bring_up();
  EnumerationResult out;
  if (!b.ok) {
    out.phase = "bringup";
    out.error = "link did not reach U0";
    enumeration_ = out;
    return out;
  }
  bool done = false;
  phost_->enumerate(kDeviceAddress, [&](EnumerationResult r) {
    out = std::move(r);
    done = true;
  });
  sim_.run_until(sim_.now() + SimTime::ms(cfg_.transfer_horizon_ms), [&] { return done || link_dead(); });
  if (!done) {
    phost_->fail(link_dead() ? "link aborted" : "timed out");
    out.ok = false;
    if (out.phase.empty()) out.phase = "timeout";
    out.error = link_dead() ? "link aborted" : "enumeration timed out";
  }
  enumeration_ = out;
  return out;
}

TransferReport Testbench::bulk() {
  TransferReport rep;
  const EnumerationResult e = enumerate();
  if (!e.ok) {
    rep.error = "enumeration failed at " + e.phase + ": " + e.error;
    return rep;
  }
  const PatternGenerator gen(cfg_.pattern, cfg_.seed);
  PatternChecker checker(gen);
  bool done = false;
  TransferResult tr;
  auto finish = [&](TransferResult r) {
    tr = std::move(r);
    done = true;
  };
  if (cfg_.direction == Direction::In) {
    pdev_->source() = BulkSource(gen);
    pdev_->source().add(cfg_.bytes);
    pdev_->source_updated();
    phost_->bulk_in(cfg_.bytes, cfg_.burst, &checker, finish);
  } else {
    pdev_->set_sink(&checker);
    phost_->bulk_out(cfg_.bytes, cfg_.burst, gen, finish);
  }
  sim_.run_until(sim_.now() + SimTime::ms(cfg_.transfer_horizon_ms), [&] { return done || link_dead(); });
  if (!done) phost_->fail(link_dead() ? "link aborted: retry budget exhausted" : "transfer timed out");
  pdev_->set_sink(nullptr);
  rep.ok = tr.ok;
  rep.error = tr.error;
  rep.stats = tr.stats;
  fill_link_stats(rep.stats);
  rep.intact = tr.ok && checker.bytes() == cfg_.bytes && checker.intact();
  if (tr.ok && !rep.intact) {
    rep.ok = false;
    rep.error = checker.first_mismatch()
                    ? "data mismatch at byte " + std::to_string(*checker.first_mismatch())
                    : "byte count mismatch";
  }
  return rep;
}

PmtReport Testbench::pmt(const WorkloadPreset& w) {
  PmtReport rep;
  const EnumerationResult e = enumerate();
  if (!e.ok) {
    rep.error = "enumeration failed at " + e.phase + ": " + e.error;
    return rep;
  }
  rep.events = w.events();
  const std::uint64_t total = rep.events * w.event_bytes;
  const PatternGenerator gen(cfg_.pattern, cfg_.seed);
  PatternChecker checker(gen);
  pdev_->source() = BulkSource(gen);

  const SimTime start = sim_.now();
  for (std::uint64_t i = 0; i < rep.events; ++i) {
    sim_.schedule_at(start + w.interval() * i, Endpoint::Device, [this, &rep, &w] {
      rep.max_backlog_at_event = std::max(rep.max_backlog_at_event, pdev_->source().available());
      rep.max_link_queue = std::max(rep.max_link_queue, dev_->link().queued());
      pdev_->source().add(w.event_bytes);
      pdev_->source_updated();
    });
  }
  bool done = false;
  TransferResult tr;
  phost_->bulk_in(total, cfg_.burst, &checker, [&](TransferResult r) {
    tr = std::move(r);
    done = true;
  });
  const SimTime horizon = start + w.duration + SimTime::ms(cfg_.transfer_horizon_ms);
  sim_.run_until(horizon, [&] { return done || link_dead(); });
  if (!done) phost_->fail(link_dead() ? "link aborted" : "stream timed out");
  rep.bytes = checker.bytes();
  rep.span = sim_.now() - start;
  rep.final_backlog = pdev_->source().available();
  const bool intact = checker.bytes() == total && checker.intact();
  rep.ok = tr.ok && intact;
  rep.error = tr.ok && !intact ? "data mismatch" : tr.error;
  return rep;
}

std::vector<BerSweepRow> ber_sweep(const ScenarioConfig& base, const std::vector<double>& rates) {
  std::vector<BerSweepRow> rows;
  for (double ber : rates) {
    ScenarioConfig c = base;
    c.ber = ber;
    Testbench tb(c);
    rows.push_back({ber, tb.bulk()});
  }
  return rows;
}

}  // namespace usb3sim
