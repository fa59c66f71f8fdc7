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

#include <algorithm>

#include "usb3sim/line_coding.hpp"

namespace usb3sim {
namespace {

constexpr std::array<OrderedSetKind, 3> kKinds = {OrderedSetKind::TSEQ, OrderedSetKind::TS1,
                                                  OrderedSetKind::TS2};

CodePoint k(std::uint8_t b) { return CodePoint{b, true, true}; }
CodePoint d(std::uint8_t b) { return CodePoint{b, false, true}; }

}  // namespace

const char* to_string(OrderedSetKind kind) {
  switch (kind) {
    case OrderedSetKind::TSEQ:
      return "TSEQ";
    case OrderedSetKind::TS1:
      return "TS1";
    case OrderedSetKind::TS2:
      return "TS2";
  }
  return "?";
}

OrderedSetConfig OrderedSetConfig::defaults() {
  OrderedSetConfig cfg;
  cfg.tseq = {k(kcode::COM), d(0x17), d(0xC0), d(0x14), d(0xB2), d(0xE7), d(0x02), d(0x82),
              d(0x72),       d(0x6E), d(0x28), d(0xA6), d(0xBE), d(0x6D), d(0xBF), d(0x8D)};
  cfg.tseq.resize(32, d(0x4A));
  // Byte 4 is the link functionality byte, byte 5 the link configuration.
  cfg.ts1 = {k(kcode::COM), k(kcode::COM), k(kcode::COM), k(kcode::COM), d(0x00), d(0x00)};
  cfg.ts1.resize(16, d(0x4A));
  cfg.ts2 = {k(kcode::COM), k(kcode::COM), k(kcode::COM), k(kcode::COM), d(0x00), d(0x00)};
  cfg.ts2.resize(16, d(0x45));
  return cfg;
}

const std::vector<CodePoint>& OrderedSetConfig::block(OrderedSetKind kind) const {
  switch (kind) {
    case OrderedSetKind::TSEQ:
      return tseq;
    case OrderedSetKind::TS1:
      return ts1;
    case OrderedSetKind::TS2:
      return ts2;
  }
  return tseq;
}

OrderedSet ordered_set_make(OrderedSetKind kind, RunningDisparity& rd,
                            const OrderedSetConfig& cfg) {
  OrderedSet set{kind, {}};
  const auto& block = cfg.block(kind);
  set.symbols.reserve(block.size());
  for (const auto& cp : block) {
    auto r = encode_8b10b(cp.byte, cp.is_k, rd);
    rd = r.rd;
    set.symbols.push_back(r.symbol);
  }
  return set;
}

OrderedSetScanner::OrderedSetScanner(OrderedSetConfig cfg) : cfg_(std::move(cfg)) {
  std::size_t longest = 0;
  for (auto kind : kKinds) longest = std::max(longest, cfg_.block(kind).size());
  window_.resize(longest);
}

void OrderedSetScanner::reset() {
  count_ = 0;
  runs_ = {};
}

OrderedSetScanner::Result OrderedSetScanner::push(const CodePoint& cp) {
  window_[count_ % window_.size()] = cp;
  ++count_;
  Result result;
  for (std::size_t i = 0; i < kKinds.size(); ++i) {
    const auto& block = cfg_.block(kKinds[i]);
    const std::size_t len = block.size();
    if (len == 0 || count_ < len) continue;
    const std::size_t start = count_ - len;
    bool match = true;
    for (std::size_t j = 0; j < len && match; ++j) {
      match = window_[(start + j) % window_.size()] == block[j];
    }
    if (!match) continue;
    RunState& rs = runs_[i];
    if (rs.run > 0 && rs.last_end == start) {
      ++rs.run;
    } else {
      rs.run = 1;
      rs.run_start = start;
    }
    rs.last_end = count_;
    result.match = BlockMatch{kKinds[i], start, rs.run};
    if (rs.run == cfg_.consecutive_required) {
      result.detection = OrderedSetDetection{kKinds[i], rs.run_start};
    }
  }
  return result;
}

std::vector<OrderedSetDetection> ordered_set_scan(std::span<const Symbol> symbols,
                                                  const OrderedSetConfig& cfg,
                                                  RunningDisparity rd) {
  OrderedSetScanner scanner(cfg);
  std::vector<OrderedSetDetection> out;
  for (const auto& s : symbols) {
    const auto r = decode_8b10b(s, rd);
    rd = r.rd;
    const auto res = scanner.push(CodePoint{r.byte, r.is_k, r.ok()});
    if (res.detection) out.push_back(*res.detection);
  }
  return out;
}

}  // namespace usb3sim
