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

#include "usb3sim/ltssm.hpp"

#include <stdexcept>

namespace usb3sim {
namespace {

using A = LtssmAction::Kind;
using E = LtssmEvent::Kind;

LtssmAction act(A k) {
  LtssmAction a;
  a.kind = k;
  return a;
}

LtssmAction start_lfps(LfpsKind k) {
  LtssmAction a = act(A::StartLfps);
  a.lfps = k;
  return a;
}

LtssmAction send_set(OrderedSetKind k) {
  LtssmAction a = act(A::SendOrderedSet);
  a.set = k;
  return a;
}

LtssmAction start_timer(LtssmTimer t, SimTime d) {
  LtssmAction a = act(A::StartTimer);
  a.timer = t;
  a.duration = d;
  return a;
}

LtssmAction electrical_idle(bool low_power) {
  LtssmAction a = act(A::ElectricalIdle);
  a.low_power = low_power;
  return a;
}

LtssmStep stay(const LtssmState& s, std::vector<LtssmAction> actions = {}) {
  return LtssmStep{s, std::move(actions), false, false};
}

LtssmStep ignore(const LtssmState& s) { return LtssmStep{s, {}, false, true}; }

LtssmStep enter(LinkState to, const LtssmEvent& e, const LtssmConfig& cfg,
                std::vector<LtssmAction> first = {}) {
  LtssmStep st;
  st.next.state = to;
  st.next.entered_at = e.at;
  st.transitioned = true;
  st.actions = std::move(first);
  auto& a = st.actions;
  switch (to) {
    case LinkState::RxDetect:
      a.push_back(act(A::StopLfps));
      a.push_back(electrical_idle(false));
      a.push_back(act(A::StartReceiverDetect));
      break;
    case LinkState::Polling_LFPS:
      a.push_back(start_lfps(LfpsKind::Polling));
      a.push_back(start_timer(LtssmTimer::Polling, cfg.polling_timeout));
      break;
    case LinkState::Polling_TSEQ:
      a.push_back(act(A::StopLfps));
      a.push_back(act(A::EnableTransceiver));
      a.push_back(send_set(OrderedSetKind::TSEQ));
      a.push_back(start_timer(LtssmTimer::Polling, cfg.polling_timeout));
      break;
    case LinkState::Polling_TS1TS2:
      a.push_back(send_set(OrderedSetKind::TS1));
      a.push_back(start_timer(LtssmTimer::Polling, cfg.polling_timeout));
      break;
    case LinkState::U0:
      a.push_back(act(A::LinkActive));
      break;
    case LinkState::U1:
    case LinkState::U2:
      a.push_back(electrical_idle(true));
      break;
    case LinkState::Recovery:
      a.push_back(act(A::EnableTransceiver));
      a.push_back(send_set(OrderedSetKind::TS1));
      a.push_back(start_timer(LtssmTimer::Recovery, cfg.recovery_timeout));
      break;
    case LinkState::Reset:
      a.push_back(act(A::StopLfps));
      a.push_back(electrical_idle(false));
      a.push_back(start_lfps(LfpsKind::Reset));
      break;
  }
  return st;
}

// Next unit on the wire while training: one ordered set or idle frame is in
// flight at any time.
LtssmAction next_unit(const LtssmState& s) {
  switch (s.phase) {
    case TrainingPhase::TS1:
      return send_set(OrderedSetKind::TS1);
    case TrainingPhase::TS2:
      return send_set(OrderedSetKind::TS2);
    case TrainingPhase::Idle:
      break;
  }
  return act(A::SendIdle);
}

LtssmStep train(const LtssmState& s, const LtssmEvent& e, const LtssmConfig& cfg) {
  const bool recovery = s.state == LinkState::Recovery;
  const std::uint32_t seen_req =
      recovery ? cfg.recovery_ts2_seen_required : cfg.ts2_seen_required;
  const std::uint32_t sent_req =
      recovery ? cfg.recovery_ts2_sent_after_seen : cfg.ts2_sent_after_seen;
  LtssmState n = s;
  std::vector<LtssmAction> actions;
  switch (e.kind) {
    case E::OrderedSetSeen:
      if (e.set == OrderedSetKind::TSEQ) return stay(s);
      if (e.set == OrderedSetKind::TS2) ++n.sets_seen;
      if (n.phase == TrainingPhase::TS1 && e.run >= cfg.sets_to_detect) {
        n.phase = TrainingPhase::TS2;
      }
      break;
    case E::OrderedSetSent:
      if (e.set == OrderedSetKind::TS2 && n.sets_seen > 0) ++n.sets_sent;
      break;
    case E::IdleSent:
      ++n.idle_sent;
      break;
    case E::IdleSeen:
      ++n.idle_seen;
      break;
    case E::HandshakeDone:
      return enter(LinkState::U0, e, cfg);
    case E::Timeout:
      if (recovery && e.timer == LtssmTimer::Recovery) return enter(LinkState::Reset, e, cfg);
      if (!recovery && e.timer == LtssmTimer::Polling) return enter(LinkState::RxDetect, e, cfg);
      return ignore(s);
    default:
      return ignore(s);
  }
  if (n.phase == TrainingPhase::TS2 && n.sets_seen >= seen_req && n.sets_sent >= sent_req) {
    n.phase = TrainingPhase::Idle;
  }
  if (e.kind == E::OrderedSetSent || e.kind == E::IdleSent) actions.push_back(next_unit(n));
  if (n.phase == TrainingPhase::Idle && n.idle_sent >= cfg.idle_sent_required &&
      n.idle_seen >= cfg.idle_seen_required) {
    LtssmEvent done = LtssmEvent::handshake_done(e.at);
    // The unit just queued is dropped: U0 takes over the transmitter.
    return enter(LinkState::U0, done, cfg);
  }
  return stay(n, std::move(actions));
}

}  // namespace

void LtssmConfig::validate() const {
  if (tseq_count == 0) throw std::invalid_argument("tseq_count must be at least 1");
  if (sets_to_detect == 0) throw std::invalid_argument("sets_to_detect must be at least 1");
  if (ts2_seen_required == 0 || recovery_ts2_seen_required == 0) {
    throw std::invalid_argument("TS2 seen requirement must be at least 1");
  }
  if (idle_sent_required == 0) throw std::invalid_argument("idle_sent_required must be at least 1");
  if (polling_timeout == SimTime{} || recovery_timeout == SimTime{} || wake_timeout == SimTime{} ||
      detect_retry == SimTime{}) {
    throw std::invalid_argument("LTSSM timeouts must be positive");
  }
}

std::string_view to_string(TrainingPhase p) {
  switch (p) {
    case TrainingPhase::TS1:
      return "TS1";
    case TrainingPhase::TS2:
      return "TS2";
    case TrainingPhase::Idle:
      return "Idle";
  }
  return "?";
}

std::string_view to_string(LtssmTimer t) {
  switch (t) {
    case LtssmTimer::Polling:
      return "Polling";
    case LtssmTimer::Recovery:
      return "Recovery";
    case LtssmTimer::Wake:
      return "Wake";
    case LtssmTimer::DetectRetry:
      return "DetectRetry";
  }
  return "?";
}

LtssmEvent LtssmEvent::phystatus(bool present, SimTime at) {
  LtssmEvent e;
  e.kind = Kind::PhystatusHigh;
  e.present = present;
  e.at = at;
  return e;
}

LtssmEvent LtssmEvent::lfps_detected(LfpsKind k, SimTime at) {
  LtssmEvent e;
  e.kind = Kind::LfpsDetected;
  e.lfps = k;
  e.at = at;
  return e;
}

LtssmEvent LtssmEvent::set_seen(OrderedSetKind k, std::uint32_t run, SimTime at) {
  LtssmEvent e;
  e.kind = Kind::OrderedSetSeen;
  e.set = k;
  e.run = run;
  e.at = at;
  return e;
}

LtssmEvent LtssmEvent::set_sent(OrderedSetKind k, SimTime at) {
  LtssmEvent e;
  e.kind = Kind::OrderedSetSent;
  e.set = k;
  e.at = at;
  return e;
}

LtssmEvent LtssmEvent::idle_seen(SimTime at) {
  LtssmEvent e;
  e.kind = Kind::IdleSeen;
  e.at = at;
  return e;
}

LtssmEvent LtssmEvent::idle_sent(SimTime at) {
  LtssmEvent e;
  e.kind = Kind::IdleSent;
  e.at = at;
  return e;
}

LtssmEvent LtssmEvent::burst_sent(LfpsKind k, SimTime at) {
  LtssmEvent e;
  e.kind = Kind::BurstSent;
  e.lfps = k;
  e.at = at;
  return e;
}

LtssmEvent LtssmEvent::handshake_done(SimTime at) {
  LtssmEvent e;
  e.kind = Kind::HandshakeDone;
  e.at = at;
  return e;
}

LtssmEvent LtssmEvent::timeout(LtssmTimer t, SimTime at) {
  LtssmEvent e;
  e.kind = Kind::Timeout;
  e.timer = t;
  e.at = at;
  return e;
}

LtssmEvent LtssmEvent::go_low_power(LinkState target, SimTime at) {
  if (target != LinkState::U1 && target != LinkState::U2) {
    throw std::invalid_argument("low-power target must be U1 or U2");
  }
  LtssmEvent e;
  e.kind = Kind::GoLowPower;
  e.target = target;
  e.at = at;
  return e;
}

LtssmEvent LtssmEvent::wake(SimTime at) {
  LtssmEvent e;
  e.kind = Kind::WakeRequest;
  e.at = at;
  return e;
}

LtssmEvent LtssmEvent::reset(SimTime at) {
  LtssmEvent e;
  e.kind = Kind::ResetRequest;
  e.at = at;
  return e;
}

LtssmEvent LtssmEvent::recovery(SimTime at) {
  LtssmEvent e;
  e.kind = Kind::RecoveryRequest;
  e.at = at;
  return e;
}

std::string describe(const LtssmEvent& e) {
  switch (e.kind) {
    case E::PhystatusHigh:
      return std::string("PhystatusHigh/") + (e.present ? "present" : "absent");
    case E::LfpsDetected:
      return "LfpsDetected/" + std::string(to_string(e.lfps));
    case E::OrderedSetSeen:
      return "OrderedSetSeen/" + std::string(to_string(e.set)) + "/" + std::to_string(e.run);
    case E::OrderedSetSent:
      return "OrderedSetSent/" + std::string(to_string(e.set));
    case E::IdleSeen:
      return "IdleSeen";
    case E::IdleSent:
      return "IdleSent";
    case E::BurstSent:
      return "BurstSent/" + std::string(to_string(e.lfps));
    case E::HandshakeDone:
      return "HandshakeDone";
    case E::Timeout:
      return "Timeout/" + std::string(to_string(e.timer));
    case E::GoLowPower:
      return "GoLowPower/" + std::string(to_string(e.target));
    case E::WakeRequest:
      return "WakeRequest";
    case E::ResetRequest:
      return "ResetRequest";
    case E::RecoveryRequest:
      return "RecoveryRequest";
  }
  return "?";
}

std::string describe(const LtssmAction& a) {
  switch (a.kind) {
    case A::StartReceiverDetect:
      return "StartReceiverDetect";
    case A::StartLfps:
      return "StartLfps/" + std::string(to_string(a.lfps));
    case A::StopLfps:
      return "StopLfps";
    case A::EnableTransceiver:
      return "EnableTransceiver";
    case A::ElectricalIdle:
      return a.low_power ? "ElectricalIdle/low_power" : "ElectricalIdle";
    case A::SendOrderedSet:
      return "SendOrderedSet/" + std::string(to_string(a.set));
    case A::SendIdle:
      return "SendIdle";
    case A::StartTimer:
      return "StartTimer/" + std::string(to_string(a.timer)) + "/" +
             std::to_string(a.duration.picoseconds());
    case A::LinkActive:
      return "LinkActive";
  }
  return "?";
}

std::vector<LtssmAction> ltssm_initial_actions() { return {act(A::StartReceiverDetect)}; }

LtssmStep ltssm_step(const LtssmState& s, const LtssmEvent& e, const LtssmConfig& cfg) {
  // Events that apply in every state.
  if (e.kind == E::LfpsDetected && e.lfps == LfpsKind::Reset) {
    if (s.state == LinkState::RxDetect || s.state == LinkState::Reset) return ignore(s);
    return enter(LinkState::RxDetect, e, cfg);
  }
  if (e.kind == E::ResetRequest) {
    if (s.state == LinkState::Reset) return ignore(s);
    return enter(LinkState::Reset, e, cfg);
  }

  switch (s.state) {
    case LinkState::RxDetect:
      if (e.kind == E::PhystatusHigh) {
        if (e.present) return enter(LinkState::Polling_LFPS, e, cfg);
        return stay(s, {start_timer(LtssmTimer::DetectRetry, cfg.detect_retry)});
      }
      if (e.kind == E::Timeout && e.timer == LtssmTimer::DetectRetry) {
        return stay(s, {act(A::StartReceiverDetect)});
      }
      return ignore(s);

    case LinkState::Polling_LFPS: {
      LtssmState n = s;
      if (e.kind == E::LfpsDetected && e.lfps == LfpsKind::Polling) {
        if (n.partner_lfps_seen) return stay(s);
        n.partner_lfps_seen = true;
        if (cfg.lfps_bursts_after_detect == 0) return enter(LinkState::Polling_TSEQ, e, cfg);
        return stay(n);
      }
      if (e.kind == E::BurstSent && e.lfps == LfpsKind::Polling) {
        if (!n.partner_lfps_seen) return stay(s);
        if (++n.bursts_sent >= cfg.lfps_bursts_after_detect) {
          return enter(LinkState::Polling_TSEQ, e, cfg);
        }
        return stay(n);
      }
      if (e.kind == E::Timeout && e.timer == LtssmTimer::Polling) {
        return enter(LinkState::RxDetect, e, cfg);
      }
      return ignore(s);
    }

    case LinkState::Polling_TSEQ: {
      if (e.kind == E::OrderedSetSent && e.set == OrderedSetKind::TSEQ) {
        LtssmState n = s;
        if (++n.sets_sent >= cfg.tseq_count) return enter(LinkState::Polling_TS1TS2, e, cfg);
        return stay(n, {send_set(OrderedSetKind::TSEQ)});
      }
      if (e.kind == E::OrderedSetSeen) return stay(s);
      if (e.kind == E::Timeout && e.timer == LtssmTimer::Polling) {
        return enter(LinkState::RxDetect, e, cfg);
      }
      return ignore(s);
    }

    case LinkState::Polling_TS1TS2:
      return train(s, e, cfg);

    case LinkState::Recovery:
      if (e.kind == E::RecoveryRequest) return stay(s);
      return train(s, e, cfg);

    case LinkState::U0:
      if (e.kind == E::OrderedSetSeen && e.set == OrderedSetKind::TS1 &&
          e.run >= cfg.sets_to_detect) {
        return enter(LinkState::Recovery, e, cfg);
      }
      if (e.kind == E::RecoveryRequest) return enter(LinkState::Recovery, e, cfg);
      if (e.kind == E::GoLowPower) return enter(e.target, e, cfg);
      if (e.kind == E::LfpsDetected && e.lfps == LfpsKind::Ping) return stay(s);
      return ignore(s);

    case LinkState::U1:
    case LinkState::U2: {
      const bool u1 = s.state == LinkState::U1;
      const LfpsKind exit = u1 ? LfpsKind::U1Exit : LfpsKind::U2Exit;
      if (e.kind == E::WakeRequest) {
        if (s.waking) return stay(s);
        LtssmState n = s;
        n.waking = true;
        return stay(n, {start_lfps(exit), start_timer(LtssmTimer::Wake, cfg.wake_timeout)});
      }
      const bool exit_seen =
          e.kind == E::LfpsDetected &&
          (e.lfps == exit || (u1 && e.lfps == LfpsKind::U1Wakeup));
      if (exit_seen) {
        if (s.waking) return enter(LinkState::Recovery, e, cfg);
        // Answer with our own exit LFPS before training.
        return enter(LinkState::Recovery, e, cfg, {start_lfps(exit)});
      }
      if (e.kind == E::Timeout && e.timer == LtssmTimer::Wake) {
        return enter(LinkState::Reset, e, cfg);
      }
      return ignore(s);
    }

    case LinkState::Reset:
      if (e.kind == E::BurstSent && e.lfps == LfpsKind::Reset) {
        return enter(LinkState::RxDetect, e, cfg);
      }
      return ignore(s);
  }
  return ignore(s);
}

}  // namespace usb3sim
