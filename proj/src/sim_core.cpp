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

#include "usb3sim/sim_core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace usb3sim {

std::string_view to_string(Endpoint e) {
  switch (e) {
    case Endpoint::Host:
      return "host";
    case Endpoint::Device:
      return "device";
    case Endpoint::Channel:
      return "channel";
  }
  return "?";
}

Endpoint peer_of(Endpoint e) {
  if (e == Endpoint::Host) return Endpoint::Device;
  if (e == Endpoint::Device) return Endpoint::Host;
  return Endpoint::Channel;
}

// ---------------------------------------------------------------------------
// Simulator

EventHandle Simulator::schedule(SimEvent event) {
  if (event.at < now_) {
    throw CausalityError("causality violation: event at " + std::to_string(event.at.picoseconds()) +
                         " ps scheduled while clock is at " + std::to_string(now_.picoseconds()) +
                         " ps");
  }
  event.sequence = next_sequence_++;
  const EventHandle handle = event.sequence;
  heap_.push_back(std::move(event));
  std::push_heap(heap_.begin(), heap_.end(), HeapGreater{});
  return handle;
}

EventHandle Simulator::schedule_at(SimTime at, Endpoint target, std::function<void()> fn) {
  return schedule(SimEvent{at, target, std::move(fn), 0});
}

EventHandle Simulator::schedule_in(SimTime delay, Endpoint target, std::function<void()> fn) {
  return schedule(SimEvent{now_ + delay, target, std::move(fn), 0});
}

bool Simulator::cancel(EventHandle handle) {
  if (handle >= next_sequence_) return false;
  const bool queued = std::any_of(heap_.begin(), heap_.end(),
                                  [&](const SimEvent& e) { return e.sequence == handle; });
  if (!queued) return false;
  return cancelled_.insert(handle).second;
}

RunStats Simulator::run_until(SimTime deadline) {
  auto stats = run_until(deadline, {});
  if (now_ < deadline) now_ = deadline;
  stats.final_time = now_;
  return stats;
}

RunStats Simulator::run_until(SimTime deadline, const std::function<bool()>& stop) {
  RunStats stats;
  while (!heap_.empty() && heap_.front().at <= deadline) {
    std::pop_heap(heap_.begin(), heap_.end(), HeapGreater{});
    SimEvent ev = std::move(heap_.back());
    heap_.pop_back();
    if (auto it = cancelled_.find(ev.sequence); it != cancelled_.end()) {
      cancelled_.erase(it);
      continue;
    }
    now_ = ev.at;
    ++stats.events_dispatched;
    ++total_dispatched_;
    if (ev.payload) ev.payload();
    if (stop && stop()) break;
  }
  stats.final_time = now_;
  return stats;
}

// ---------------------------------------------------------------------------
// Random numbers

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Xoshiro256::Xoshiro256(std::uint64_t seed) {
  for (auto& word : s_) word = splitmix64(seed);
}

std::uint64_t Xoshiro256::next() {
  const auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Xoshiro256::uniform_open0() {
  return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// Channel

void ChannelConfig::validate() const {
  if (!(bit_error_rate >= 0.0 && bit_error_rate <= 1.0)) {
    throw std::invalid_argument("bit_error_rate must lie in [0, 1]");
  }
}

BitErrorInjector::BitErrorInjector(double ber, std::uint64_t seed) : ber_(ber), rng_(seed) {
  if (!(ber >= 0.0 && ber <= 1.0)) throw std::invalid_argument("bit_error_rate must lie in [0, 1]");
  until_next_ = draw_gap();
}

std::uint64_t BitErrorInjector::draw_gap() {
  constexpr auto kNever = std::numeric_limits<std::uint64_t>::max();
  if (ber_ <= 0.0) return kNever;
  if (ber_ >= 1.0) return 0;
  const double gap = std::floor(std::log(rng_.uniform_open0()) / std::log1p(-ber_));
  if (gap >= 1.8e19) return kNever;
  return static_cast<std::uint64_t>(gap);
}

std::uint64_t BitErrorInjector::corrupt(std::span<Symbol> symbols) {
  const std::uint64_t total = static_cast<std::uint64_t>(symbols.size()) * kBitsPerSymbol;
  bits_seen_ += total;
  std::uint64_t pos = 0;
  std::uint64_t flipped = 0;
  while (until_next_ < total - pos) {
    pos += until_next_;
    Symbol& s = symbols[pos / kBitsPerSymbol];
    s.ten_bits ^= static_cast<std::uint16_t>(1u << (kBitsPerSymbol - 1 - pos % kBitsPerSymbol));
    ++flipped;
    ++pos;
    until_next_ = draw_gap();
  }
  if (until_next_ != std::numeric_limits<std::uint64_t>::max()) until_next_ -= total - pos;
  bits_flipped_ += flipped;
  return flipped;
}

Channel::Channel(ChannelConfig cfg) : cfg_(cfg), injector_(cfg.bit_error_rate, cfg.rng_seed) {
  cfg_.validate();
}

Delivery Channel::transmit(std::vector<Symbol> symbols, SimTime send_time) {
  if (symbols.empty()) throw std::invalid_argument("channel_transmit needs at least one symbol");
  Delivery d;
  d.at = send_time + cfg_.latency + serialization_time(symbols.size());
  d.bits_flipped = injector_.corrupt(symbols);
  d.symbols = std::move(symbols);
  return d;
}

SerialLane::SerialLane(Simulator& sim, ChannelConfig cfg, Endpoint receiver)
    : sim_(sim), channel_(cfg), receiver_(receiver) {}

SimTime SerialLane::transmit(std::vector<Symbol> symbols) {
  const SimTime start = std::max(sim_.now(), busy_until_);
  Delivery d = channel_.transmit(std::move(symbols), start);
  busy_until_ = start + serialization_time(d.symbols.size());
  sim_.schedule_at(d.at, receiver_, [this, syms = std::move(d.symbols)]() mutable {
    if (symbol_sink_) symbol_sink_(std::move(syms));
  });
  return busy_until_;
}

void SerialLane::send_lfps(SimTime start, SimTime period, std::uint32_t cycles) {
  const LfpsActivity activity{period, cycles};
  // The transmitter is occupied for the whole burst.
  busy_until_ = std::max(busy_until_, start + period * cycles);
  const SimTime arrive = start + channel_.config().latency;
  sim_.schedule_at(arrive, receiver_, [this, activity] {
    if (lfps_sink_) lfps_sink_(true, activity);
  });
  sim_.schedule_at(arrive + period * cycles, receiver_, [this, activity] {
    if (lfps_sink_) lfps_sink_(false, activity);
  });
}

DuplexChannel::DuplexChannel(Simulator& sim, const ChannelConfig& cfg)
    : to_device_(sim, cfg, Endpoint::Device),
      to_host_(sim,
               [&] {
                 ChannelConfig c = cfg;
                 std::uint64_t s = cfg.rng_seed;
                 c.rng_seed = splitmix64(s);
                 return c;
               }(),
               Endpoint::Host) {}

SerialLane& DuplexChannel::toward(Endpoint receiver) {
  return receiver == Endpoint::Device ? to_device_ : to_host_;
}

const SerialLane& DuplexChannel::toward(Endpoint receiver) const {
  return receiver == Endpoint::Device ? to_device_ : to_host_;
}

}  // namespace usb3sim
