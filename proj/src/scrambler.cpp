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

#include <memory>

#include "usb3sim/line_coding.hpp"

namespace usb3sim {
namespace {

struct Step {
  std::uint16_t next;
  std::uint8_t key;
};

// Eight clocks of the LFSR for every 16-bit state.
const std::array<Step, 65536>& step_table() {
  static const auto table = [] {
    auto t = std::make_unique<std::array<Step, 65536>>();
    for (std::uint32_t s = 0; s < 65536; ++s) {
      auto lfsr = static_cast<std::uint16_t>(s);
      std::uint8_t key = 0;
      for (int bit = 0; bit < 8; ++bit) {
        const unsigned out = (lfsr >> 15) & 1u;
        key |= static_cast<std::uint8_t>(out << bit);
        lfsr = static_cast<std::uint16_t>(lfsr << 1);
        if (out) lfsr ^= ScramblerConfig::kTaps;
      }
      (*t)[s] = Step{lfsr, key};
    }
    return t;
  }();
  return *table;
}

}  // namespace

Scrambler::Scrambler(ScramblerState state) : state_(state) {
  if (state.lfsr == 0) throw std::invalid_argument("scrambler state must not be zero");
}

std::uint8_t Scrambler::next_key() {
  const Step& s = step_table()[state_.lfsr];
  state_.lfsr = s.next;
  return s.key;
}

void Scrambler::apply(std::span<std::uint8_t> bytes) {
  for (auto& b : bytes) b ^= next_key();
}

std::pair<std::vector<std::uint8_t>, ScramblerState> scramble(std::span<const std::uint8_t> bytes,
                                                              ScramblerState state) {
  Scrambler s(state);
  std::vector<std::uint8_t> out(bytes.begin(), bytes.end());
  s.apply(out);
  return {std::move(out), s.state()};
}

std::pair<std::vector<std::uint8_t>, ScramblerState> descramble(
    std::span<const std::uint8_t> bytes, ScramblerState state) {
  return scramble(bytes, state);
}

}  // namespace usb3sim
