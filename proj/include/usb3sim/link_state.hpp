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

#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace usb3sim {

/// Top-level LTSSM states. Shared by the PHY, which uses the current state
/// as context when classifying LFPS.
enum class LinkState : std::uint8_t {
  RxDetect,
  Polling_LFPS,
  Polling_TSEQ,
  Polling_TS1TS2,
  U0,
  U1,
  U2,
  Recovery,
  Reset,
};

inline constexpr std::array<LinkState, 9> kAllLinkStates = {
    LinkState::RxDetect, LinkState::Polling_LFPS, LinkState::Polling_TSEQ,
    LinkState::Polling_TS1TS2, LinkState::U0, LinkState::U1,
    LinkState::U2, LinkState::Recovery, LinkState::Reset};

constexpr std::string_view to_string(LinkState s) {
  switch (s) {
    case LinkState::RxDetect:
      return "RxDetect";
    case LinkState::Polling_LFPS:
      return "Polling_LFPS";
    case LinkState::Polling_TSEQ:
      return "Polling_TSEQ";
    case LinkState::Polling_TS1TS2:
      return "Polling_TS1TS2";
    case LinkState::U0:
      return "U0";
    case LinkState::U1:
      return "U1";
    case LinkState::U2:
      return "U2";
    case LinkState::Recovery:
      return "Recovery";
    case LinkState::Reset:
      return "Reset";
  }
  return "?";
}

constexpr bool is_polling(LinkState s) {
  return s == LinkState::Polling_LFPS || s == LinkState::Polling_TSEQ ||
         s == LinkState::Polling_TS1TS2;
}

}  // namespace usb3sim
