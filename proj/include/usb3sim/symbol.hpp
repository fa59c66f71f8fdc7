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

#include <cstdint>

namespace usb3sim {

/// One 10-bit line symbol. Bit 9 is transmitted first ("a"), bit 0 last ("j").
struct Symbol {
  std::uint16_t ten_bits = 0;
  bool is_control = false;  // K-code flag, meaningful after decode

  friend bool operator==(const Symbol&, const Symbol&) = default;
};

inline constexpr unsigned kBitsPerSymbol = 10;

}  // namespace usb3sim
