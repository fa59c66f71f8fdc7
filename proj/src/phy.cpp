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

#include "usb3sim/phy.hpp"

#include <string>

namespace usb3sim {
namespace {

using namespace usb3sim::literals;

std::size_t index_of(LfpsKind k) { return static_cast<std::size_t>(k); }

std::string ps_string(SimTime t) { return std::to_string(t.picoseconds()); }

}  // namespace

std::string_view to_string(LfpsKind kind) {
  switch (kind) {
    case LfpsKind::Polling:
      return "Polling";
    case LfpsKind::Ping:
      return "Ping";
    case LfpsKind::Reset:
      return "Reset";
    case LfpsKind::U1Exit:
      return "U1Exit";
    case LfpsKind::U2Exit:
      return "U2Exit";
    case LfpsKind::U1Wakeup:
      return "U1Wakeup";
  }
  return "?";
}

const std::array<LfpsTiming, 6>& lfps_timing_table() {
  static const std::array<LfpsTiming, 6> table = {{
      {LfpsKind::Polling, 600_ns, 1_us, 1400_ns, std::nullopt, 6_us, 10_us, 14_us},
      {LfpsKind::Ping, 40_ns, std::nullopt, 200_ns, 2u, 160_ms, 200_ms, 240_ms},
      {LfpsKind::Reset, 80_ms, 100_ms, 120_ms, std::nullopt, std::nullopt, std::nullopt,
       std::nullopt},
      {LfpsKind::U1Exit, 600_ns, std::nullopt, 2_ms, std::nullopt, std::nullopt, std::nullopt,
       std::nullopt},
      {LfpsKind::U2Exit, 80_us, std::nullopt, 2_ms, std::nullopt, std::nullopt, std::nullopt,
       std::nullopt},
      {LfpsKind::U1Wakeup, 80_us, std::nullopt, 10_ms, std::nullopt, std::nullopt, std::nullopt,
       std::nullopt},
  }};
  return table;
}

LfpsTiming lfps_timing(LfpsKind kind, std::uint32_t scale_divisor) {
  if (scale_divisor == 0) throw std::invalid_argument("scale divisor must be at least 1");
  LfpsTiming t = lfps_timing_table()[index_of(kind)];
  if (scale_divisor == 1) return t;
  auto scale = [&](std::optional<SimTime>& v) {
    if (v) v = *v / scale_divisor;
  };
  if (kind == LfpsKind::Ping) {
    scale(t.repeat_min);
    scale(t.repeat_normal);
    scale(t.repeat_max);
  } else if (kind == LfpsKind::Reset) {
    t.burst_min = t.burst_min / scale_divisor;
    t.burst_max = t.burst_max / scale_divisor;
    scale(t.burst_normal);
  }
  return t;
}

LfpsShape lfps_shape(LfpsKind kind, std::uint32_t scale_divisor) {
  if (scale_divisor == 0) throw std::invalid_argument("scale divisor must be at least 1");
  switch (kind) {
    case LfpsKind::Polling:
      return {32, 10_us};
    case LfpsKind::Ping:
      return {3, 200_ms / scale_divisor};
    case LfpsKind::Reset: {
      const SimTime burst = 100_ms / scale_divisor;
      return {static_cast<std::uint32_t>(burst.picoseconds() / kLfpsPeriod.picoseconds()),
              std::nullopt};
    }
    case LfpsKind::U1Exit:
      return {64, std::nullopt};
    case LfpsKind::U2Exit:
      return {3125, std::nullopt};
    case LfpsKind::U1Wakeup:
      return {156250, std::nullopt};
  }
  return {};
}

LfpsPurpose lfps_purpose(LfpsKind kind) {
  return kind == LfpsKind::Polling || kind == LfpsKind::Reset ? LfpsPurpose::LinkInit
                                                              : LfpsPurpose::Wake;
}

bool lfps_permitted(const PipeSignals& s, LfpsPurpose purpose) {
  if (purpose == LfpsPurpose::LinkInit) {
    return (s.txpd & 3) == 0 && (s.rxpd & 3) == 0 && s.txdetectrx && s.txelecidle;
  }
  return (s.txpd & 3) == 1 && (s.rxpd & 3) == 1 && !s.txelecidle;
}

std::vector<LfpsBurst> lfps_generate(LfpsKind kind, const PipeSignals& signals, SimTime start,
                                     std::size_t count, std::uint32_t scale_divisor) {
  if (!lfps_permitted(signals, lfps_purpose(kind))) throw LfpsNotPermitted();
  const LfpsShape shape = lfps_shape(kind, scale_divisor);
  std::vector<LfpsBurst> out;
  const std::size_t n = shape.repeat ? count : std::min<std::size_t>(count, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const SimTime at = shape.repeat ? start + *shape.repeat * i : start;
    out.push_back(LfpsBurst{kLfpsPeriod, shape.cycles, shape.repeat, at});
  }
  return out;
}

std::vector<PhyWord> pack_lfps_words(std::uint32_t cycles) {
  std::vector<PhyWord> out;
  out.reserve(static_cast<std::size_t>(cycles) * 4);
  for (std::uint32_t c = 0; c < cycles; ++c) {
    out.push_back({kPhyWordOnes, true});
    out.push_back({kPhyWordOnes, true});
    out.push_back({0, true});
    out.push_back({0, true});
  }
  return out;
}

std::optional<LfpsKind> lfps_classify(const LfpsBurst& observed, LinkState context,
                                      std::uint32_t scale_divisor) {
  std::array<bool, 6> cand{};
  int n = 0;
  for (auto k : kAllLfpsKinds) {
    const LfpsTiming t = lfps_timing(k, scale_divisor);
    bool ok = t.burst_in_window(observed.duration());
    if (t.min_cycles) ok = ok && observed.n_cycles >= *t.min_cycles;
    if (observed.t_repeat) ok = ok && t.repeat_in_window(*observed.t_repeat);
    cand[index_of(k)] = ok;
    n += ok;
  }
  if (n == 0) return std::nullopt;
  if (n == 1) {
    for (auto k : kAllLfpsKinds) {
      if (cand[index_of(k)]) return k;
    }
  }
  std::vector<LfpsKind> prefer;
  switch (context) {
    case LinkState::RxDetect:
    case LinkState::Polling_LFPS:
    case LinkState::Polling_TSEQ:
    case LinkState::Polling_TS1TS2:
      prefer = {LfpsKind::Polling};
      break;
    case LinkState::U1:
      prefer = {LfpsKind::U1Exit, LfpsKind::U1Wakeup};
      break;
    case LinkState::U2:
      prefer = {LfpsKind::U2Exit};
      break;
    case LinkState::U0:
    case LinkState::Recovery:
      prefer = {LfpsKind::Ping};
      break;
    case LinkState::Reset:
      break;
  }
  prefer.push_back(LfpsKind::Reset);
  for (auto k : prefer) {
    if (cand[index_of(k)]) return k;
  }
  return std::nullopt;
}

PhyPort::PhyPort(Simulator& sim, Endpoint side, SerialLane& tx, PhyConfig cfg, Tracer* tracer)
    : sim_(sim), side_(side), tx_(tx), cfg_(cfg), tracer_(tracer) {
  if (cfg_.scale_divisor == 0) throw std::invalid_argument("scale divisor must be at least 1");
}

void PhyPort::trace_signal(const char* name, unsigned value) {
  if (tracer_ && tracer_->enabled()) {
    tracer_->emit(sim_.now(), side_, TraceLayer::Phy, "signal",
                  {{"name", name}, {"value", std::to_string(value)}});
  }
}

void PhyPort::set_power(std::uint8_t txpd, std::uint8_t rxpd) {
  txpd &= 3;
  rxpd &= 3;
  if (sig_.txpd != txpd) {
    sig_.txpd = txpd;
    trace_signal("txpd", txpd);
  }
  if (sig_.rxpd != rxpd) {
    sig_.rxpd = rxpd;
    trace_signal("rxpd", rxpd);
  }
}

void PhyPort::set_txelecidle(bool v) {
  if (sig_.txelecidle == v) return;
  sig_.txelecidle = v;
  trace_signal("txelecidle", v);
}

void PhyPort::set_txdetectrx(bool v) {
  if (sig_.txdetectrx == v) return;
  sig_.txdetectrx = v;
  trace_signal("txdetectrx", v);
}

void PhyPort::receiver_detect() {
  if (!sig_.txelecidle) throw DetectDuringTransmit();
  if (detecting_ || sig_.phystatus) return;
  detecting_ = true;
  set_txdetectrx(true);
  sim_.schedule_in(cfg_.detect_delay, side_, [this] {
    detecting_ = false;
    sig_.phystatus = true;
    trace_signal("phystatus", 1);
    const bool present = cfg_.partner_present;
    if (tracer_ && tracer_->enabled()) {
      tracer_->emit(sim_.now(), side_, TraceLayer::Phy, "rx_detect",
                    {{"result", present ? "present" : "absent"}});
    }
    sim_.schedule_in(cfg_.phystatus_pulse, side_, [this] {
      sig_.phystatus = false;
      trace_signal("phystatus", 0);
    });
    if (detect_listener_) detect_listener_(present);
  });
}

void PhyPort::start_lfps(LfpsKind kind) {
  if (!lfps_permitted(sig_, lfps_purpose(kind))) throw LfpsNotPermitted();
  stop_lfps();
  lfps_active_ = true;
  lfps_kind_ = kind;
  emit_burst();
}

void PhyPort::stop_lfps() {
  lfps_active_ = false;
  ++lfps_generation_;
  if (next_burst_) {
    sim_.cancel(*next_burst_);
    next_burst_.reset();
  }
}

void PhyPort::emit_burst() {
  next_burst_.reset();
  const LfpsShape shape = lfps_shape(lfps_kind_, cfg_.scale_divisor);
  const SimTime start = sim_.now();
  const SimTime duration = kLfpsPeriod * shape.cycles;
  const LfpsKind kind = lfps_kind_;
  const std::uint64_t gen = lfps_generation_;
  if (tracer_ && tracer_->enabled()) {
    tracer_->emit(start, side_, TraceLayer::Phy, "lfps_tx",
                  {{"lfps", std::string(to_string(kind))},
                   {"period_ps", ps_string(kLfpsPeriod)},
                   {"cycles", std::to_string(shape.cycles)},
                   {"burst_ps", ps_string(duration)}});
  }
  tx_.send_lfps(start, kLfpsPeriod, shape.cycles);
  sim_.schedule_at(start + duration, side_, [this, kind, gen] {
    ++bursts_sent_;
    set_txelecidle(true);
    if (tracer_ && tracer_->enabled()) {
      tracer_->emit(sim_.now(), side_, TraceLayer::Phy, "lfps_tx_end",
                    {{"lfps", std::string(to_string(kind))}});
    }
    if (gen != lfps_generation_) return;
    if (!lfps_shape(kind, cfg_.scale_divisor).repeat) lfps_active_ = false;
    if (burst_listener_) burst_listener_(kind);
  });
  if (shape.repeat) {
    next_burst_ = sim_.schedule_at(start + *shape.repeat, side_, [this, gen] {
      if (gen == lfps_generation_ && lfps_active_) emit_burst();
    });
  }
}

void PhyPort::lfps_edge(bool active, const SerialLane::LfpsActivity& activity) {
  if (active) {
    sig_.rxelecidle = false;
    trace_signal("rxelecidle", 0);
    rx_start_ = sim_.now();
    return;
  }
  sig_.rxelecidle = true;
  trace_signal("rxelecidle", 1);
  const SimTime start = rx_start_.value_or(sim_.now());
  rx_start_.reset();
  LfpsBurst seen{activity.period, activity.cycles, std::nullopt, start};
  if (last_rx_start_) seen.t_repeat = start - *last_rx_start_;
  last_rx_start_ = start;
  const LinkState ctx = context_ ? context_() : LinkState::U0;
  const auto kind = lfps_classify(seen, ctx, cfg_.scale_divisor);
  if (tracer_ && tracer_->enabled()) {
    std::vector<std::pair<std::string, std::string>> f = {
        {"lfps", kind ? std::string(to_string(*kind)) : "Unrecognized"},
        {"burst_ps", ps_string(seen.duration())},
        {"cycles", std::to_string(seen.n_cycles)}};
    if (seen.t_repeat) f.emplace_back("repeat_ps", ps_string(*seen.t_repeat));
    tracer_->emit(sim_.now(), side_, TraceLayer::Phy, "lfps_rx", std::move(f));
  }
  if (lfps_listener_) lfps_listener_(kind, seen);
}

}  // namespace usb3sim
