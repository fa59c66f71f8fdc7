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

#include "usb3sim/trace.hpp"

#include <charconv>
#include <cstdio>
#include <istream>
#include <ostream>

namespace usb3sim {
namespace {

bool valid_token(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '=') return false;
  }
  return true;
}

std::pair<std::string_view, std::string_view> split_kv(std::string_view tok, std::size_t line) {
  const auto eq = tok.find('=');
  if (eq == std::string_view::npos || eq == 0 || eq + 1 == tok.size() ||
      tok.find('=', eq + 1) != std::string_view::npos) {
    throw TraceParseError(line, "malformed field '" + std::string(tok) + "'");
  }
  return {tok.substr(0, eq), tok.substr(eq + 1)};
}

}  // namespace

std::string_view to_string(TraceLayer layer) {
  switch (layer) {
    case TraceLayer::Phy:
      return "phy";
    case TraceLayer::Ltssm:
      return "ltssm";
    case TraceLayer::Link:
      return "link";
    case TraceLayer::Protocol:
      return "protocol";
  }
  return "?";
}

std::optional<std::string_view> TraceRecord::get(std::string_view key) const {
  for (const auto& [k, v] : fields) {
    if (k == key) return std::string_view(v);
  }
  return std::nullopt;
}

TraceParseError::TraceParseError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

std::string format_record(const TraceRecord& r) {
  std::string s = "t=" + std::to_string(r.time_ps);
  s += " side=";
  s += to_string(r.side);
  s += " layer=";
  s += to_string(r.layer);
  s += " kind=";
  s += r.kind;
  for (const auto& [k, v] : r.fields) {
    s += ' ';
    s += k;
    s += '=';
    s += v;
  }
  return s;
}

TraceRecord parse_record(std::string_view line, std::size_t line_no) {
  std::vector<std::string_view> toks;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    if (i >= line.size()) break;
    const std::size_t j = line.find(' ', i);
    const std::size_t end = j == std::string_view::npos ? line.size() : j;
    toks.push_back(line.substr(i, end - i));
    i = end;
  }
  if (toks.size() < 4) throw TraceParseError(line_no, "expected t, side, layer and kind");

  TraceRecord r;
  const char* expected[] = {"t", "side", "layer", "kind"};
  std::string_view head[4];
  for (int k = 0; k < 4; ++k) {
    auto [key, value] = split_kv(toks[static_cast<std::size_t>(k)], line_no);
    if (key != expected[k]) {
      throw TraceParseError(line_no, "expected key '" + std::string(expected[k]) + "', got '" +
                                         std::string(key) + "'");
    }
    head[k] = value;
  }
  const auto [ptr, ec] = std::from_chars(head[0].data(), head[0].data() + head[0].size(), r.time_ps);
  if (ec != std::errc{} || ptr != head[0].data() + head[0].size()) {
    throw TraceParseError(line_no, "bad time '" + std::string(head[0]) + "'");
  }
  if (head[1] == "host") {
    r.side = Endpoint::Host;
  } else if (head[1] == "device") {
    r.side = Endpoint::Device;
  } else if (head[1] == "channel") {
    r.side = Endpoint::Channel;
  } else {
    throw TraceParseError(line_no, "unknown side '" + std::string(head[1]) + "'");
  }
  bool layer_ok = false;
  for (auto l : {TraceLayer::Phy, TraceLayer::Ltssm, TraceLayer::Link, TraceLayer::Protocol}) {
    if (head[2] == to_string(l)) {
      r.layer = l;
      layer_ok = true;
    }
  }
  if (!layer_ok) throw TraceParseError(line_no, "unknown layer '" + std::string(head[2]) + "'");
  r.kind = std::string(head[3]);
  for (std::size_t k = 4; k < toks.size(); ++k) {
    auto [key, value] = split_kv(toks[k], line_no);
    r.fields.emplace_back(std::string(key), std::string(value));
  }
  return r;
}

std::vector<TraceRecord> parse_trace(std::istream& in) {
  std::vector<TraceRecord> out;
  std::string line;
  std::size_t n = 0;
  std::uint64_t last = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(' ') == std::string::npos) continue;
    out.push_back(parse_record(line, n));
    if (out.back().time_ps < last) throw TraceParseError(n, "record out of time order");
    last = out.back().time_ps;
  }
  return out;
}

std::string describe_record(const TraceRecord& r) {
  char head[96];
  std::snprintf(head, sizeof head, "%14.6f us  %-7s %-8s %-14s", static_cast<double>(r.time_ps) / 1e6,
                std::string(to_string(r.side)).c_str(), std::string(to_string(r.layer)).c_str(),
                r.kind.c_str());
  std::string s = head;
  if (r.layer == TraceLayer::Ltssm && r.kind == "transition") {
    s += ' ';
    s += std::string(r.get("from").value_or("?"));
    s += " -> ";
    s += std::string(r.get("to").value_or("?"));
    if (auto ev = r.get("event")) {
      s += "  on ";
      s += std::string(*ev);
    }
    return s;
  }
  for (const auto& [k, v] : r.fields) {
    s += ' ';
    s += k;
    s += ':';
    s += v;
  }
  return s;
}

void Tracer::emit(TraceRecord r) {
  ++count_;
  if (out_) *out_ << format_record(r) << '\n';
  if (keep_) records_.push_back(std::move(r));
}

void Tracer::emit(SimTime t, Endpoint side, TraceLayer layer, std::string kind,
                  std::vector<std::pair<std::string, std::string>> fields) {
  if (!enabled()) return;
  for (const auto& [k, v] : fields) {
    if (!valid_token(k) || !valid_token(v)) {
      throw std::invalid_argument("trace field '" + k + "' is not a single token");
    }
  }
  emit(TraceRecord{t.picoseconds(), side, layer, std::move(kind), std::move(fields)});
}

}  // namespace usb3sim
