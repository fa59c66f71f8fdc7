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
 * @file partner.hpp
 * @brief One side of the link: PHY, LTSSM, 8b10b and the link layer wired
 *        onto a pair of serial lanes.
 *
 * The partner executes LTSSM directives, turns transmit completions and
 * received symbols back into LTSSM events, and hands link frames to the link
 * layer while in U0. Each transmit call is one unit on the wire: an ordered
 * set block, an idle frame or a link frame.
 */

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "usb3sim/line_coding.hpp"
#include "usb3sim/link_layer.hpp"
#include "usb3sim/ltssm.hpp"
#include "usb3sim/phy.hpp"
#include "usb3sim/sim_core.hpp"
#include "usb3sim/trace.hpp"

namespace usb3sim {

/// Logical idle sent during the last training phase: D0.0 symbols.
/// Sixteen symbols cannot be mistaken for a link frame (8, 20 or 32+).
inline constexpr std::size_t kIdleFrameSymbols = 16;

struct PartnerConfig {
  PhyConfig phy;
  LtssmConfig ltssm;
  LinkConfig link;
};

struct PartnerStats {
  std::uint64_t u0_entries = 0;
  std::uint64_t recoveries = 0;
  std::uint64_t resets = 0;
  std::uint64_t decode_errors = 0;
  std::uint64_t link_aborts = 0;
};

class LinkPartner {
 public:
  using StateListener = std::function<void(LinkState from, LinkState to)>;

  /// `tx` carries our symbols to the partner, `rx` brings the partner's to us.
  LinkPartner(Simulator& sim, Endpoint side, SerialLane& tx, SerialLane& rx, PartnerConfig cfg,
              Tracer* tracer = nullptr);
  LinkPartner(const LinkPartner&) = delete;
  LinkPartner& operator=(const LinkPartner&) = delete;

  /// Starts the LTSSM in RxDetect after `delay`.
  void power_on(SimTime delay = {});

  LinkState state() const { return ltssm_.state; }
  const LtssmState& ltssm() const { return ltssm_; }
  std::optional<SimTime> first_u0() const { return first_u0_; }
  const PartnerStats& stats() const { return stats_; }
  void on_state_change(StateListener l) { state_listener_ = std::move(l); }

  PhyPort& phy() { return phy_; }
  LinkLayer& link() { return link_; }
  const LinkLayer& link() const { return link_; }

  /// Queues a packet; wakes the link when it is in U1 or U2.
  void submit(LinkPacket p);
  /// Starts the LGO_Ux handshake. False when the link layer refuses.
  bool request_low_power(LinkState target);
  void wake();
  void request_recovery();
  void request_reset();

 private:
  void feed(const LtssmEvent& e);
  void execute(const LtssmAction& a);
  void send_unit(const std::vector<CodePoint>& cps, std::function<void()> on_done);
  void on_symbols(const std::vector<Symbol>& symbols);
  void scan(const std::vector<CodePoint>& cps);
  void prepare_lfps(LfpsKind kind);
  void defer(LtssmEvent e);

  Simulator& sim_;
  Endpoint side_;
  PartnerConfig cfg_;
  Tracer* tracer_;
  PhyPort phy_;
  LinkLayer link_;

  LtssmState ltssm_;
  std::uint64_t unit_generation_ = 0;  // invalidates completions of old units
  std::vector<EventHandle> timers_;
  RunningDisparity tx_rd_ = RunningDisparity::Negative;
  RunningDisparity rx_rd_ = RunningDisparity::Negative;
  OrderedSetScanner scanner_;
  std::vector<std::vector<CodePoint>> stash_;  // link frames seen before our U0

  std::optional<SimTime> first_u0_;
  PartnerStats stats_;
  StateListener state_listener_;
};

}  // namespace usb3sim
