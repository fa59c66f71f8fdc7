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

// usb3sim: scenario runner and trace tooling.
//
// Exit status: 0 success, 1 scenario failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "usb3sim/scenario.hpp"

using namespace usb3sim;

namespace {

constexpr int kOk = 0;
constexpr int kScenarioFailure = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Flags {
  std::string config_path;
  std::uint64_t seed = 0;
  double ber = 0;
  std::uint64_t latency_ns = 0;
  std::uint64_t bytes = 0;
  std::uint32_t burst = 0;
  std::string trace_out;
  std::uint32_t scale_divisor = 0;
  std::vector<std::string> sets;
  std::string stats_out;
  bool dump_config = false;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Precedence: flags > config file > defaults.
ScenarioConfig effective_config(const CLI::App& app, const Flags& f) {
  ScenarioConfig c;
  if (!f.config_path.empty()) c.merge_text(read_file(f.config_path));
  if (app.count("--seed")) c.seed = f.seed;
  if (app.count("--ber")) c.ber = f.ber;
  if (app.count("--latency-ns")) c.latency_ns = f.latency_ns;
  if (app.count("--bytes")) c.bytes = f.bytes;
  if (app.count("--burst")) c.burst = f.burst;
  if (app.count("--trace-out")) c.trace_out = f.trace_out;
  if (app.count("--scale-divisor")) c.scale_divisor = f.scale_divisor;
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  c.validate();
  return c;
}

void note_scaling(const ScenarioConfig& c) {
  if (c.scale_divisor != 1) {
    std::cerr << "note: ms-range LFPS timings scaled down by " << c.scale_divisor << "\n";
  }
}

class TraceFile {
 public:
  explicit TraceFile(const std::string& path) {
    if (path.empty()) return;
    file_.open(path, std::ios::binary | std::ios::trunc);
    if (!file_) throw UsageError("cannot write " + path);
  }
  std::ostream* stream() { return file_.is_open() ? &file_ : nullptr; }

 private:
  std::ofstream file_;
};

void write_stats(const std::string& path, const std::vector<std::pair<std::string, std::string>>& kv) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path);
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
}

std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string us(SimTime t) { return fixed(t.microseconds()); }

void print_table(const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [k, v] : kv) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "  %-16s %s", k.c_str(), v.c_str());
    std::cout << buf << '\n';
  }
}

// ---------------------------------------------------------------------------

int cmd_bringup(const ScenarioConfig& c, const Flags& f) {
  note_scaling(c);
  TraceFile trace(c.trace_out);
  Testbench tb(c, trace.stream());
  const BringupReport r = tb.bring_up();
  std::vector<std::pair<std::string, std::string>> kv = {
      {"result", r.ok ? "U0" : "failed"},
      {"host_state", std::string(to_string(r.host_state))},
      {"device_state", std::string(to_string(r.device_state))},
      {"startup_skew_us", us(r.skew)},
      {"time_to_u0_us", r.time_to_u0 ? us(*r.time_to_u0) : "n/a"},
      {"lfps_bursts", std::to_string(r.lfps_bursts)},
  };
  std::cout << "bring-up\n";
  print_table(kv);
  write_stats(f.stats_out, kv);
  return r.ok ? kOk : kScenarioFailure;
}

int cmd_enumerate(const ScenarioConfig& c, const Flags& f) {
  note_scaling(c);
  TraceFile trace(c.trace_out);
  Testbench tb(c, trace.stream());
  const EnumerationResult e = tb.enumerate();
  std::vector<std::pair<std::string, std::string>> kv = {{"result", e.ok ? "configured" : "failed"}};
  if (!e.ok) {
    kv.emplace_back("phase", e.phase);
    kv.emplace_back("error", e.error);
  } else {
    char id[32];
    std::snprintf(id, sizeof id, "%04x:%04x", e.info.device.vendor, e.info.device.product);
    kv.emplace_back("address", std::to_string(e.info.address));
    kv.emplace_back("id", id);
    kv.emplace_back("manufacturer", e.info.manufacturer);
    kv.emplace_back("product", e.info.product);
    kv.emplace_back("serial", e.info.serial);
    kv.emplace_back("config_length", std::to_string(e.info.configuration.total_length));
    for (const auto& ep : e.info.configuration.endpoints) {
      char buf[80];
      std::snprintf(buf, sizeof buf, "bulk %s max %u burst %u", ep.in() ? "in" : "out", ep.max_packet,
                    ep.burst_depth);
      char name[16];
      std::snprintf(name, sizeof name, "ep_0x%02x", ep.address);
      kv.emplace_back(name, buf);
    }
  }
  std::cout << "enumeration\n";
  print_table(kv);
  write_stats(f.stats_out, kv);
  return e.ok ? kOk : kScenarioFailure;
}

std::vector<std::pair<std::string, std::string>> transfer_kv(const ScenarioConfig& c, const TransferReport& r) {
  const bool rate = r.ok && r.stats.bytes_moved > 0;
  std::vector<std::pair<std::string, std::string>> kv = {
      {"direction", std::string(to_string(c.direction))},
      {"bytes_requested", std::to_string(c.bytes)},
      {"bytes_moved", std::to_string(r.stats.bytes_moved)},
      {"burst", std::to_string(c.burst)},
      {"ber", fixed(c.ber, 12)},
      {"elapsed_us", us(r.stats.elapsed)},
      {"rate_mbps", rate ? fixed(r.stats.effective_rate_mbps()) : "n/a"},
      {"retries", std::to_string(r.stats.retries)},
      {"crc_errors", std::to_string(r.stats.crc_errors)},
      {"intact", r.intact ? "yes" : "no"},
      {"result", r.ok ? "ok" : "failed"},
  };
  if (!r.ok) kv.emplace_back("error", r.error);
  return kv;
}

int cmd_bulk(ScenarioConfig c, const Flags& f, Direction d) {
  c.direction = d;
  note_scaling(c);
  TraceFile trace(c.trace_out);
  Testbench tb(c, trace.stream());
  const TransferReport r = tb.bulk();
  const auto kv = transfer_kv(c, r);
  std::cout << "bulk-" << to_string(d) << "\n";
  print_table(kv);
  write_stats(f.stats_out, kv);
  return r.ok ? kOk : kScenarioFailure;
}

std::vector<double> parse_rates(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    ScenarioConfig probe;
    probe.set("ber", tok);
    probe.validate();
    out.push_back(probe.ber);
  }
  if (out.empty()) throw UsageError("--rates needs at least one value");
  return out;
}

int cmd_ber_sweep(const ScenarioConfig& c, const Flags& f, const std::string& rates_text, unsigned jobs) {
  const std::vector<double> rates = parse_rates(rates_text);
  note_scaling(c);
  std::vector<TransferReport> results(rates.size());
  std::vector<std::future<void>> running;
  auto run_one = [&](std::size_t i) {
    ScenarioConfig ci = c;
    ci.ber = rates[i];
    TraceFile trace(c.trace_out.empty() ? "" : c.trace_out + "." + std::to_string(i));
    Testbench tb(ci, trace.stream());
    results[i] = tb.bulk();
  };
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (jobs <= 1) {
      run_one(i);
      continue;
    }
    if (running.size() >= jobs) {
      running.front().get();
      running.erase(running.begin());
    }
    running.push_back(std::async(std::launch::async, run_one, i));
  }
  for (auto& r : running) r.get();

  bool ok = true;
  std::ostringstream stats;
  std::cout << "ber-sweep " << to_string(c.direction) << " " << c.bytes << " bytes\n";
  std::cout << "           ber  intact   retries  crc_errors   rate_mbps  note\n";
  for (std::size_t i = 0; i < rates.size(); ++i) {
    const TransferReport& r = results[i];
    const bool rate = r.ok && r.stats.bytes_moved > 0;
    char line[256];
    std::snprintf(line, sizeof line, "  %12.3g  %-6s  %8llu  %10llu  %10s  %s", rates[i], r.intact ? "yes" : "no",
                  static_cast<unsigned long long>(r.stats.retries),
                  static_cast<unsigned long long>(r.stats.crc_errors),
                  rate ? fixed(r.stats.effective_rate_mbps()).c_str() : "n/a", r.error.c_str());
    std::cout << line << '\n';
    stats << "ber=" << fixed(rates[i], 12) << " intact=" << (r.intact ? "yes" : "no")
          << " retries=" << r.stats.retries << " crc_errors=" << r.stats.crc_errors
          << " rate_mbps=" << (rate ? fixed(r.stats.effective_rate_mbps()) : "n/a") << '\n';
    // Integrity is required up to 1e-4; beyond that failure is reported only.
    if (rates[i] <= 1e-4 && !r.intact) ok = false;
  }
  if (!f.stats_out.empty()) {
    std::ofstream out(f.stats_out, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + f.stats_out);
    out << stats.str();
  }
  return ok ? kOk : kScenarioFailure;
}

// ---------------------------------------------------------------------------
// codec

// Tokens: two hex digits for a data byte, "K" plus two hex digits for a
// control byte (e.g. Kbc for K28.5).
std::vector<CodePoint> parse_code_points(const std::vector<std::string>& toks) {
  std::vector<CodePoint> out;
  for (const auto& t : toks) {
    const bool k = !t.empty() && (t[0] == 'K' || t[0] == 'k');
    const std::string hex = k ? t.substr(1) : t;
    if (hex.size() != 2 || hex.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos) {
      throw UsageError("bad byte token '" + t + "'");
    }
    out.push_back({static_cast<std::uint8_t>(std::stoul(hex, nullptr, 16)), k, true});
  }
  return out;
}

std::vector<std::uint8_t> parse_bytes(const std::vector<std::string>& toks) {
  std::vector<std::uint8_t> out;
  for (const auto& cp : parse_code_points(toks)) {
    if (cp.is_k) throw UsageError("control bytes are not allowed here");
    out.push_back(cp.byte);
  }
  return out;
}

std::string hex2(unsigned v) {
  char b[8];
  std::snprintf(b, sizeof b, "%02x", v);
  return b;
}

std::string hex3(unsigned v) {
  char b[8];
  std::snprintf(b, sizeof b, "%03x", v);
  return b;
}

int cmd_codec(const std::string& op, const std::vector<std::string>& toks, const std::string& rd_text) {
  RunningDisparity rd = RunningDisparity::Negative;
  if (rd_text == "+" || rd_text == "pos") {
    rd = RunningDisparity::Positive;
  } else if (rd_text != "-" && rd_text != "neg") {
    throw UsageError("--rd expects neg or pos");
  }
  std::string out;
  auto add = [&](const std::string& s) {
    if (!out.empty()) out += ' ';
    out += s;
  };
  if (op == "encode") {
    for (const auto& cp : parse_code_points(toks)) {
      EncodeResult r;
      try {
        r = encode_8b10b(cp.byte, cp.is_k, rd);
      } catch (const CodingError& e) {
        throw UsageError(e.what());
      }
      rd = r.rd;
      add(hex3(r.symbol.ten_bits));
    }
    std::cout << out << "\nrd " << (rd == RunningDisparity::Negative ? "neg" : "pos") << '\n';
    return kOk;
  }
  if (op == "decode") {
    bool clean = true;
    for (const auto& t : toks) {
      if (t.empty() || t.size() > 3 || t.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos) {
        throw UsageError("bad symbol token '" + t + "'");
      }
      const unsigned v = static_cast<unsigned>(std::stoul(t, nullptr, 16));
      if (v > 0x3FF) throw UsageError("symbol out of range '" + t + "'");
      const DecodeResult r = decode_8b10b(Symbol{static_cast<std::uint16_t>(v), false}, rd);
      rd = r.rd;
      std::string s = (r.is_k ? "K" : "") + hex2(r.byte);
      if (r.status == DecodeStatus::CodeViolation) s = "!code";
      if (r.status == DecodeStatus::DisparityError) s += "!rd";
      clean = clean && r.ok();
      add(s);
    }
    std::cout << out << "\nrd " << (rd == RunningDisparity::Negative ? "neg" : "pos") << '\n';
    return clean ? kOk : kScenarioFailure;
  }
  if (op == "scramble") {
    auto bytes = parse_bytes(toks);
    Scrambler s;
    s.apply(bytes);
    for (auto b : bytes) add(hex2(b));
    std::cout << out << '\n';
    return kOk;
  }
  if (op == "crc16" || op == "crc32") {
    const auto bytes = parse_bytes(toks);
    char buf[16];
    if (op == "crc16") {
      std::snprintf(buf, sizeof buf, "%04x", crc16_header(bytes));
    } else {
      std::snprintf(buf, sizeof buf, "%08x", crc32_payload(bytes));
    }
    std::cout << buf << '\n';
    return kOk;
  }
  throw UsageError("unknown codec operation '" + op + "'");
}

int cmd_decode_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::vector<TraceRecord> records;
  try {
    records = parse_trace(in);
  } catch (const TraceParseError& e) {
    std::cerr << "error: " << path << ": " << e.what() << '\n';
    return kScenarioFailure;
  }
  for (const auto& r : records) std::cout << describe_record(r) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"USB 3.0 SuperSpeed link simulator"};
  app.require_subcommand(1);
  app.fallthrough();

  Flags f;
  app.add_option("--config", f.config_path, "Scenario config file (key = value)");
  app.add_option("--seed", f.seed, "Seed for every random draw");
  app.add_option("--ber", f.ber, "Channel bit error rate");
  app.add_option("--latency-ns", f.latency_ns, "One-way channel latency");
  app.add_option("--bytes", f.bytes, "Transfer size");
  app.add_option("--burst", f.burst, "Bulk burst depth, 1..16");
  app.add_option("--trace-out", f.trace_out, "Write the event trace here");
  app.add_option("--scale-divisor", f.scale_divisor, "Divide ms-range LFPS timings by this");
  app.add_option("--set", f.sets, "Override any config key: key=value");
  app.add_option("--stats-out", f.stats_out, "Write machine-readable results here");
  app.add_flag("--dump-config", f.dump_config, "Print the effective config and exit");

  auto* bringup = app.add_subcommand("bringup", "Train the link from RxDetect to U0");
  auto* enumerate = app.add_subcommand("enumerate", "Bring up the link and enumerate the device");
  auto* bulk_in = app.add_subcommand("bulk-in", "Device-to-host bulk transfer");
  auto* bulk_out = app.add_subcommand("bulk-out", "Host-to-device bulk transfer");

  auto* sweep = app.add_subcommand("ber-sweep", "Bulk transfer at each bit error rate");
  std::string rates = "0,1e-7,1e-6,1e-5,1e-4";
  unsigned jobs = 1;
  sweep->add_option("--rates", rates, "Comma-separated bit error rates")->capture_default_str();
  sweep->add_option("--jobs", jobs, "Rates simulated concurrently")->check(CLI::Range(1u, 64u));

  auto* codec = app.add_subcommand("codec", "8b10b, scrambler and CRC on hex streams");
  std::string codec_op;
  std::vector<std::string> codec_args;
  std::string rd = "neg";
  codec->add_option("op", codec_op, "encode | decode | scramble | crc16 | crc32")
      ->required()
      ->check(CLI::IsMember({"encode", "decode", "scramble", "crc16", "crc32"}));
  codec->add_option("tokens", codec_args, "Bytes (xx, Kxx) or 10-bit symbols (xxx)");
  codec->add_option("--rd", rd, "Starting running disparity: neg | pos")->capture_default_str();

  auto* decode = app.add_subcommand("decode-trace", "Print a trace file in readable form");
  std::string trace_path;
  decode->add_option("path", trace_path, "Trace file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (codec->parsed()) return cmd_codec(codec_op, codec_args, rd);
    if (decode->parsed()) return cmd_decode_trace(trace_path);

    const ScenarioConfig cfg = effective_config(app, f);
    if (f.dump_config) {
      std::cout << cfg.to_text();
      return kOk;
    }
    if (bringup->parsed()) return cmd_bringup(cfg, f);
    if (enumerate->parsed()) return cmd_enumerate(cfg, f);
    if (bulk_in->parsed()) return cmd_bulk(cfg, f, Direction::In);
    if (bulk_out->parsed()) return cmd_bulk(cfg, f, Direction::Out);
    if (sweep->parsed()) return cmd_ber_sweep(cfg, f, rates, jobs);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kScenarioFailure;
  }
  return kUsage;
}
