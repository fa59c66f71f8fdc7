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

#include "usb3sim/partner.hpp"

#include <algorithm>

namespace usb3sim {
namespace {

using A = LtssmAction::Kind;

constexpr std::size_t kStashLimit = 64;

bool is_training(LinkState s) { return s == LinkState::Polling_TS1TS2 || s == LinkState::Recovery; }

bool starts_with_comma(const std::vector<CodePoint>& cps) {
  return !cps.empty() && cps.front().is_k && cps.front().byte == kcode::COM;
}

// An idle frame, possibly with a few damaged symbols.
bool looks_idle(const std::vector<CodePoint>& cps) {
  if (cps.size() != kIdleFrameSymbols) return false;
  const auto zeros = std::count_if(cps.begin(), cps.end(),
                                   [](const CodePoint& c) { return c.valid && !c.is_k && c.byte == 0; });
  return static_cast<std::size_t>(zeros) * 2 >= cps.size();
}

}  // namespace

LinkPartner::LinkPartner(Simulator& sim, Endpoint side, SerialLane& tx, SerialLane& rx,
                         PartnerConfig cfg, Tracer* tracer)
    : sim_(sim),
      side_(side),
      cfg_(cfg),
      tracer_(tracer),
      phy_(sim, side, tx, cfg.phy, tracer),
      link_(sim, side, cfg.link, tracer) {
  cfg_.ltssm.validate();
  cfg_.link.validate();

  rx.set_symbol_sink([this](std::vector<Symbol> s) { on_symbols(s); });
  rx.set_lfps_sink([this](bool active, const SerialLane::LfpsActivity& a) { phy_.lfps_edge(active, a); });

  phy_.set_context([this] { return ltssm_.state; });
  phy_.on_detect([this](bool present) { feed(LtssmEvent::phystatus(present, sim_.now())); });
  phy_.on_lfps([this](std::optional<LfpsKind> kind, const LfpsBurst&) {
    if (kind) feed(LtssmEvent::lfps_detected(*kind, sim_.now()));
  });
  phy_.on_burst_sent([this](LfpsKind k) { feed(LtssmEvent::burst_sent(k, sim_.now())); });

  link_.set_frame_sink([this](std::vector<CodePoint> f) -> SimTime {
    std::vector<Symbol> out;
    out.reserve(f.size());
    for (const CodePoint& cp : f) {
      const EncodeResult r = encode_8b10b(cp.byte, cp.is_k, tx_rd_);
      tx_rd_ = r.rd;
      out.push_back(r.symbol);
    }
    return phy_.transmit(std::move(out));
  });
  link_.on_recovery_request([this] { defer(LtssmEvent::recovery()); });
  link_.on_abort([this] {
    ++stats_.link_aborts;
    defer(LtssmEvent::reset());
  });
  link_.on_low_power([this](LinkState target) {
    link_.deactivate();
    defer(LtssmEvent::go_low_power(target));
  });
}

void LinkPartner::power_on(SimTime delay) {
  sim_.schedule_in(delay, side_, [this] {
    ltssm_ = LtssmState{};
    ltssm_.entered_at = sim_.now();
    if (tracer_ && tracer_->enabled()) {
      tracer_->emit(sim_.now(), side_, TraceLayer::Ltssm, "power_on",
                    {{"state", std::string(to_string(ltssm_.state))}});
    }
    for (const auto& a : ltssm_initial_actions()) execute(a);
  });
}

void LinkPartner::defer(LtssmEvent e) {
  sim_.schedule_in(SimTime{}, side_, [this, e]() mutable {
    e.at = sim_.now();
    feed(e);
  });
}

void LinkPartner::feed(const LtssmEvent& e) {
  LtssmStep st = ltssm_step(ltssm_, e, cfg_.ltssm);
  if (st.ignored) return;
  const LinkState from = ltssm_.state;
  const LinkState to = st.next.state;
  if (st.transitioned) {
    for (EventHandle h : timers_) sim_.cancel(h);
    timers_.clear();
    ++unit_generation_;
    phy_.clear_lfps_history();
    if (from == LinkState::U0) link_.deactivate();
    if (to != LinkState::U0) stash_.clear();
    if (to == LinkState::Recovery) ++stats_.recoveries;
    if (to == LinkState::Reset) ++stats_.resets;
    if (tracer_ && tracer_->enabled()) {
      tracer_->emit(sim_.now(), side_, TraceLayer::Ltssm, "transition",
                    {{"from", std::string(to_string(from))},
                     {"to", std::string(to_string(to))},
                     {"event", describe(e)}});
    }
  }
  ltssm_ = st.next;
  for (const auto& a : st.actions) execute(a);
  if (st.transitioned && state_listener_) state_listener_(from, to);
}

void LinkPartner::prepare_lfps(LfpsKind kind) {
  if (lfps_purpose(kind) == LfpsPurpose::LinkInit) {
    phy_.set_power(0, 0);
    phy_.set_txelecidle(true);
    phy_.set_txdetectrx(true);
  } else {
    phy_.set_power(1, 1);
    phy_.set_txelecidle(false);
  }
}

void LinkPartner::execute(const LtssmAction& a) {
  switch (a.kind) {
    case A::StartReceiverDetect:
      phy_.set_txelecidle(true);
      phy_.receiver_detect();
      return;
    case A::StartLfps:
      prepare_lfps(a.lfps);
      phy_.start_lfps(a.lfps);
      return;
    case A::StopLfps:
      phy_.stop_lfps();
      return;
    case A::EnableTransceiver:
      phy_.set_power(0, 0);
      phy_.set_txelecidle(false);
      return;
    case A::ElectricalIdle:
      phy_.set_txelecidle(true);
      if (a.low_power) {
        const std::uint8_t pd = ltssm_.state == LinkState::U2 ? 2 : 1;
        phy_.set_power(pd, pd);
      }
      return;
    case A::SendOrderedSet: {
      const OrderedSet os = ordered_set_make(a.set, tx_rd_);
      const SimTime done = phy_.transmit(os.symbols);
      const std::uint64_t gen = unit_generation_;
      const OrderedSetKind kind = a.set;
      sim_.schedule_at(done, side_, [this, gen, kind] {
        if (gen == unit_generation_) feed(LtssmEvent::set_sent(kind, sim_.now()));
      });
      return;
    }
    case A::SendIdle: {
      std::vector<Symbol> out;
      out.reserve(kIdleFrameSymbols);
      for (std::size_t i = 0; i < kIdleFrameSymbols; ++i) {
        const EncodeResult r = encode_8b10b(0x00, false, tx_rd_);
        tx_rd_ = r.rd;
        out.push_back(r.symbol);
      }
      const SimTime done = phy_.transmit(std::move(out));
      const std::uint64_t gen = unit_generation_;
      sim_.schedule_at(done, side_, [this, gen] {
        if (gen == unit_generation_) feed(LtssmEvent::idle_sent(sim_.now()));
      });
      return;
    }
    case A::StartTimer: {
      const LtssmTimer t = a.timer;
      timers_.push_back(sim_.schedule_in(a.duration, side_, [this, t] {
        feed(LtssmEvent::timeout(t, sim_.now()));
      }));
      return;
    }
    case A::LinkActive: {
      if (!first_u0_) first_u0_ = sim_.now();
      ++stats_.u0_entries;
      link_.activate();
      auto pending = std::move(stash_);
      stash_.clear();
      for (auto& f : pending) {
        if (ltssm_.state != LinkState::U0) break;
        link_.receive_frame(f);
      }
      return;
    }
  }
}

void LinkPartner::on_symbols(const std::vector<Symbol>& symbols) {
  std::vector<CodePoint> cps;
  cps.reserve(symbols.size());
  for (const Symbol& s : symbols) {
    const DecodeResult r = decode_8b10b(s, rx_rd_);
    rx_rd_ = r.rd;
    if (!r.ok()) ++stats_.decode_errors;
    cps.push_back(CodePoint{r.byte, r.is_k, r.ok()});
  }
  if (cps.empty()) return;

  switch (ltssm_.state) {
    case LinkState::RxDetect:
    case LinkState::Reset:
    case LinkState::U1:
    case LinkState::U2:
      return;
    case LinkState::U0:
      if (starts_with_comma(cps)) {
        scan(cps);
      } else if (!looks_idle(cps)) {
        link_.receive_frame(cps);
      }
      return;
    default:
      break;
  }
  if (starts_with_comma(cps)) {
    scan(cps);
  } else if (looks_idle(cps)) {
    feed(LtssmEvent::idle_seen(sim_.now()));
  } else if (is_training(ltssm_.state) && ltssm_.phase == TrainingPhase::Idle) {
    // The partner already reached U0: its idle phase is over and these
    // frames belong to our link layer once we get there. Frames seen in
    // earlier phases predate the partner's own retraining.
    if (stash_.size() < kStashLimit) stash_.push_back(std::move(cps));
    feed(LtssmEvent::idle_seen(sim_.now()));
  }
}

void LinkPartner::scan(const std::vector<CodePoint>& cps) {
  for (const CodePoint& cp : cps) {
    const auto r = scanner_.push(cp);
    if (r.match) {
      feed(LtssmEvent::set_seen(r.match->kind, static_cast<std::uint32_t>(r.match->run), sim_.now()));
    }
  }
}

void LinkPartner::submit(LinkPacket p) {
  link_.submit(std::move(p));
  if (ltssm_.state == LinkState::U1 || ltssm_.state == LinkState::U2) wake();
}

bool LinkPartner::request_low_power(LinkState target) {
  if (ltssm_.state != LinkState::U0) return false;
  return link_.request_low_power(target);
}

void LinkPartner::wake() { feed(LtssmEvent::wake(sim_.now())); }

void LinkPartner::request_recovery() { feed(LtssmEvent::recovery(sim_.now())); }

void LinkPartner::request_reset() { feed(LtssmEvent::reset(sim_.now())); }

}  // namespace usb3sim
