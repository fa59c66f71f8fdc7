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
 * @file ltssm.hpp
 * @brief Link training and status state machine as a pure transition
 *        function.
 *
 * ltssm_step() never touches the simulator. It returns the next state and a
 * list of directives for the PHY and link layer; the owner executes them and
 * feeds back completion events (burst sent, ordered set sent, ...). The owner
 * cancels every LTSSM timer whenever the top-level state changes.
 *
 * Training (Polling_TS1TS2 and Recovery) runs three phases:
 *   TS1  - send TS1 until a run of TS1 or TS2 arrives from the partner;
 *   TS2  - send TS2 until enough TS2 were seen and enough were sent after
 *          the first one arrived;
 *   Idle - exchange idle frames; completion raises HandshakeDone -> U0.
 */

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "usb3sim/line_coding.hpp"
#include "usb3sim/link_state.hpp"
#include "usb3sim/phy.hpp"
#include "usb3sim/sim_core.hpp"

namespace usb3sim {

struct LtssmConfig {
  /// Polling bursts still sent after the partner's Polling LFPS was seen.
  std::uint32_t lfps_bursts_after_detect = 2;
  std::uint32_t tseq_count = 64;
  /// Consecutive blocks that make a TS1/TS2 detection.
  std::uint32_t sets_to_detect = 2;
  std::uint32_t ts2_seen_required = 8;
  std::uint32_t ts2_sent_after_seen = 16;
  std::uint32_t recovery_ts2_seen_required = 2;
  std::uint32_t recovery_ts2_sent_after_seen = 4;
  std::uint32_t idle_sent_required = 2;
  std::uint32_t idle_seen_required = 1;
  SimTime polling_timeout = SimTime::ms(2);
  SimTime recovery_timeout = SimTime::ms(1);
  SimTime wake_timeout = SimTime::ms(2);
  SimTime detect_retry = SimTime::us(100);

  void validate() const;
};

enum class TrainingPhase : std::uint8_t { TS1, TS2, Idle };
enum class LtssmTimer : std::uint8_t { Polling, Recovery, Wake, DetectRetry };

std::string_view to_string(TrainingPhase p);
std::string_view to_string(LtssmTimer t);

struct LtssmState {
  LinkState state = LinkState::RxDetect;
  SimTime entered_at;
  // Substate; all reset on every top-level transition.
  bool partner_lfps_seen = false;
  std::uint32_t bursts_sent = 0;  // Polling bursts completed after partner seen
  bool waking = false;            // U1/U2: our exit LFPS awaits an answer
  TrainingPhase phase = TrainingPhase::TS1;
  std::uint32_t sets_sent = 0;  // TSEQ sent, or TS2 sent after first TS2 seen
  std::uint32_t sets_seen = 0;  // TS2 blocks seen
  std::uint32_t idle_sent = 0;
  std::uint32_t idle_seen = 0;

  bool operator==(const LtssmState&) const = default;
};

struct LtssmEvent {
  enum class Kind : std::uint8_t {
    PhystatusHigh,
    LfpsDetected,
    OrderedSetSeen,
    OrderedSetSent,
    IdleSeen,
    IdleSent,
    BurstSent,
    HandshakeDone,
    Timeout,
    GoLowPower,
    WakeRequest,
    ResetRequest,
    RecoveryRequest,
  };

  Kind kind = Kind::HandshakeDone;
  SimTime at;
  bool present = false;                         // PhystatusHigh
  LfpsKind lfps = LfpsKind::Polling;            // LfpsDetected, BurstSent
  OrderedSetKind set = OrderedSetKind::TS1;     // OrderedSetSeen/Sent
  std::uint32_t run = 1;                        // OrderedSetSeen: consecutive blocks
  LtssmTimer timer = LtssmTimer::Polling;       // Timeout
  LinkState target = LinkState::U1;             // GoLowPower

  static LtssmEvent phystatus(bool present, SimTime at = {});
  static LtssmEvent lfps_detected(LfpsKind k, SimTime at = {});
  static LtssmEvent set_seen(OrderedSetKind k, std::uint32_t run, SimTime at = {});
  static LtssmEvent set_sent(OrderedSetKind k, SimTime at = {});
  static LtssmEvent idle_seen(SimTime at = {});
  static LtssmEvent idle_sent(SimTime at = {});
  static LtssmEvent burst_sent(LfpsKind k, SimTime at = {});
  static LtssmEvent handshake_done(SimTime at = {});
  static LtssmEvent timeout(LtssmTimer t, SimTime at = {});
  static LtssmEvent go_low_power(LinkState target, SimTime at = {});
  static LtssmEvent wake(SimTime at = {});
  static LtssmEvent reset(SimTime at = {});
  static LtssmEvent recovery(SimTime at = {});
};

inline constexpr std::size_t kLtssmEventKinds = 13;

std::string describe(const LtssmEvent& e);

struct LtssmAction {
  enum class Kind : std::uint8_t {
    StartReceiverDetect,
    StartLfps,
    StopLfps,
    EnableTransceiver,
    /// Transmitter to electrical idle; `low_power` also drops to the wake
    /// power state.
    ElectricalIdle,
    SendOrderedSet,
    SendIdle,
    StartTimer,
    LinkActive,
  };

  Kind kind = Kind::LinkActive;
  LfpsKind lfps = LfpsKind::Polling;
  OrderedSetKind set = OrderedSetKind::TS1;
  LtssmTimer timer = LtssmTimer::Polling;
  SimTime duration;
  bool low_power = false;

  bool operator==(const LtssmAction&) const = default;
};

std::string describe(const LtssmAction& a);

struct LtssmStep {
  LtssmState next;
  std::vector<LtssmAction> actions;
  bool transitioned = false;  // top-level state changed
  bool ignored = false;       // event not meaningful in this state
};

/// Pure transition function.
LtssmStep ltssm_step(const LtssmState& s, const LtssmEvent& e, const LtssmConfig& cfg);

/// Actions performed when the machine starts in RxDetect.
std::vector<LtssmAction> ltssm_initial_actions();

}  // namespace usb3sim
