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
 * @file trace.hpp
 * @brief Line-oriented trace records.
 *
 * One record per line:
 *
 *     t=<picoseconds> side=<host|device|channel> layer=<phy|ltssm|link|protocol> kind=<word> [key=value ...]
 *
 * Keys and values are non-empty and contain no whitespace or '='. The first
 * four keys are fixed and in that order; detail keys keep insertion order.
 */

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "usb3sim/sim_core.hpp"

namespace usb3sim {

enum class TraceLayer : std::uint8_t { Phy, Ltssm, Link, Protocol };

std::string_view to_string(TraceLayer layer);

struct TraceRecord {
  std::uint64_t time_ps = 0;
  Endpoint side = Endpoint::Channel;
  TraceLayer layer = TraceLayer::Phy;
  std::string kind;
  std::vector<std::pair<std::string, std::string>> fields;

  /// Value of a detail field, if present.
  std::optional<std::string_view> get(std::string_view key) const;

  bool operator==(const TraceRecord&) const = default;
};

class TraceParseError : public std::runtime_error {
 public:
  TraceParseError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

std::string format_record(const TraceRecord& r);
/// Throws TraceParseError tagged with `line_no`.
TraceRecord parse_record(std::string_view line, std::size_t line_no = 1);
/// Parses a whole file body. Blank lines are skipped.
std::vector<TraceRecord> parse_trace(std::istream& in);
/// Human-readable one-line rendering used by decode-trace.
std::string describe_record(const TraceRecord& r);

/// Sink shared by every layer of one simulation. Disabled tracers cost a
/// branch per call site.
class Tracer {
 public:
  Tracer() = default;
  explicit Tracer(std::ostream* out) : out_(out) {}

  bool enabled() const { return out_ != nullptr || keep_; }
  /// Also retain records in memory (tests).
  void keep_records(bool keep) { keep_ = keep; }
  const std::vector<TraceRecord>& records() const { return records_; }

  void emit(TraceRecord r);
  void emit(SimTime t, Endpoint side, TraceLayer layer, std::string kind,
            std::vector<std::pair<std::string, std::string>> fields = {});

  std::uint64_t count() const { return count_; }

 private:
  std::ostream* out_ = nullptr;
  bool keep_ = false;
  std::vector<TraceRecord> records_;
  std::uint64_t count_ = 0;
};

}  // namespace usb3sim
