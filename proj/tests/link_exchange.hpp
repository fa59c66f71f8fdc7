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

// Two link layers on a corrupting wire, checked against the brute-force
// reorderer. Shared by the unit tests and the acceptance binary.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "usb3sim/link_layer.hpp"
#include "usb3sim/sim_core.hpp"

namespace usb3sim::testing {

struct ExchangeConfig {
  std::uint64_t seed = 1;
  std::size_t max_packets = 32;  // per direction
  std::size_t max_payload = 64;
  double corrupt_prob = 0.1;  // per frame
  SimTime latency = SimTime::ns(100);
  SimTime recovery_time = SimTime::us(2);
  SimTime limit = SimTime::ms(50);
};

struct ExchangeResult {
  bool ok = true;
  std::string failure;
  std::size_t packets = 0;
  std::uint64_t corrupted_frames = 0;
  std::uint64_t retransmissions = 0;
  std::uint64_t lbad = 0;
  std::uint64_t recoveries = 0;
  std::uint32_t max_credits = 0;
};

inline ExchangeResult run_link_exchange(const ExchangeConfig& xc) {
  ExchangeResult res;
  auto fail = [&](std::string why) {
    if (res.ok) res.failure = std::move(why);
    res.ok = false;
  };

  std::mt19937_64 rng(xc.seed);
  Simulator sim;
  LinkConfig lc;
  std::array<LinkLayer*, 2> layer{};
  LinkLayer host(sim, Endpoint::Host, lc);
  LinkLayer dev(sim, Endpoint::Device, lc);
  layer[0] = &host;
  layer[1] = &dev;

  std::array<SimTime, 2> busy{};
  std::array<oracle::BitSerialLfsr, 2> lfsr{oracle::BitSerialLfsr{}, oracle::BitSerialLfsr{}};
  std::array<std::vector<std::uint32_t>, 2> wire_log;   // intact arrivals at side i
  std::array<std::vector<std::uint32_t>, 2> delivered;  // at side i
  std::array<std::vector<LinkPacket>, 2> submitted;     // by side i
  std::uint64_t epoch = 0;
  bool recovering = false;

  auto id_of = [](const std::array<std::uint8_t, kHeaderBodyBytes>& body) {
    return static_cast<std::uint32_t>(body[1] | (body[2] << 8) | (body[3] << 16) | (body[4] << 24));
  };

  for (int s = 0; s < 2; ++s) {
    const int peer = 1 - s;
    layer[s]->set_frame_sink([&, s, peer](std::vector<CodePoint> f) -> SimTime {
      if (layer[s]->credits() > lc.credits) fail("credits above limit");
      res.max_credits = std::max(res.max_credits, layer[s]->credits());
      const SimTime start = std::max(sim.now(), busy[s]);
      const SimTime done = start + serialization_time(f.size());
      busy[s] = done;
      const bool packet = f.size() == kHeaderFrameSymbols || f.size() > kDataFrameOverhead;
      std::uint32_t id = 0;
      if (packet) {
        std::array<std::uint8_t, kHeaderBodyBytes> body{};
        for (std::size_t i = 0; i < f.size(); ++i) {
          const std::uint8_t key = lfsr[s].next_byte();
          if (i >= kFramingSymbols && i < kFramingSymbols + kHeaderBodyBytes)
            body[i - kFramingSymbols] = f[i].byte ^ key;
        }
        id = id_of(body);
      }
      // A copy counts as intact when the receiver must accept it: damage
      // confined to framing quadruplets, at most one symbol each.
      bool intact = true;
      if (std::uniform_real_distribution<double>(0, 1)(rng) < xc.corrupt_prob) {
        ++res.corrupted_frames;
        const std::size_t hits = 1 + rng() % 2;
        std::vector<std::size_t> pos;
        while (pos.size() < hits) {
          const std::size_t i = rng() % f.size();
          if (std::find(pos.begin(), pos.end(), i) == pos.end()) pos.push_back(i);
        }
        std::array<int, 3> quad_hits{};
        for (std::size_t i : pos) {
          CodePoint& cp = f[i];
          if (rng() % 2) {
            cp.valid = false;
          } else {
            cp.byte ^= static_cast<std::uint8_t>(1u << (rng() % 8));
          }
          if (!packet && f.size() != kLinkCommandSymbols) continue;
          int q = -1;
          if (i < kFramingSymbols) q = 0;
          if (packet && f.size() > kHeaderFrameSymbols) {
            if (i >= kHeaderFrameSymbols && i < kHeaderFrameSymbols + kFramingSymbols) q = 1;
            if (i >= f.size() - kFramingSymbols) q = 2;
          }
          if (q < 0 || ++quad_hits[static_cast<std::size_t>(q)] > 1) intact = false;
        }
      }
      const std::uint64_t ep = epoch;
      sim.schedule_at(done + xc.latency, static_cast<Endpoint>(peer),
                      [&, peer, ep, packet, intact, id, f = std::move(f)] {
                        if (ep != epoch) return;
                        if (packet && intact) wire_log[peer].push_back(id);
                        layer[peer]->receive_frame(f);
                      });
      return done;
    });
    layer[s]->set_deliver([&, s, peer](LinkPacket p) {
      const std::uint32_t id = id_of(p.header.body);
      delivered[s].push_back(id);
      if (id >= submitted[peer].size()) {
        fail("delivered unknown id");
        return;
      }
      LinkPacket want = submitted[peer][id];
      want.header.seq = p.header.seq;
      if (!(p == want)) fail("delivered packet differs from submission");
    });
    layer[s]->on_abort([&] { fail("retry budget exhausted"); });
    layer[s]->on_recovery_request([&] {
      if (recovering) return;
      recovering = true;
      ++res.recoveries;
      host.deactivate();
      dev.deactivate();
      ++epoch;
      sim.schedule_in(xc.recovery_time, Endpoint::Channel, [&] {
        lfsr.fill(oracle::BitSerialLfsr{});
        recovering = false;
        host.activate();
        dev.activate();
      });
    });
  }

  for (int s = 0; s < 2; ++s) {
    const std::size_t n = 1 + rng() % xc.max_packets;
    std::vector<std::uint64_t> times(n);
    for (auto& t : times) t = rng() % 20000;
    std::sort(times.begin(), times.end());
    for (std::uint32_t id = 0; id < n; ++id) {
      LinkPacket p;
      const std::size_t len = rng() % (xc.max_payload + 1);
      p.header.body[0] = static_cast<std::uint8_t>(len ? PacketType::DataPacketHeader : PacketType::Transaction);
      p.header.body[1] = static_cast<std::uint8_t>(id);
      p.header.body[2] = static_cast<std::uint8_t>(id >> 8);
      p.header.body[3] = static_cast<std::uint8_t>(id >> 16);
      p.header.body[4] = static_cast<std::uint8_t>(id >> 24);
      for (std::size_t i = 5; i < kHeaderBodyBytes; ++i) p.header.body[i] = static_cast<std::uint8_t>(rng());
      p.payload.resize(len);
      for (auto& b : p.payload) b = static_cast<std::uint8_t>(rng());
      submitted[s].push_back(p);
      const SimTime at = SimTime::ns(times[id]);
      sim.schedule_at(at, static_cast<Endpoint>(s), [&, s, p] { layer[s]->submit(p); });
    }
    res.packets += n;
  }
  host.activate();
  dev.activate();

  auto done = [&] {
    return delivered[0].size() == submitted[1].size() && delivered[1].size() == submitted[0].size() &&
           host.idle() && dev.idle() && !recovering;
  };
  sim.run_until(xc.limit, [&] { return !res.ok || (sim.now() > SimTime::us(20) && done()); });

  if (res.ok && !done()) fail("exchange did not quiesce");
  for (int s = 0; s < 2 && res.ok; ++s) {
    std::vector<std::uint32_t> expect(submitted[1 - s].size());
    for (std::uint32_t i = 0; i < expect.size(); ++i) expect[i] = i;
    const auto ref = oracle::reference_reorder(wire_log[s]);
    if (ref != expect) fail("reference reorderer disagrees with submission");
    if (delivered[s] != ref) {
      std::string d = "delivered sequence differs from reference:";
      for (auto v : delivered[s]) d += " " + std::to_string(v);
      d += " | ref:";
      for (auto v : ref) d += " " + std::to_string(v);
      fail(d);
    }
  }
  for (auto* l : layer) {
    res.retransmissions += l->stats().retransmissions;
    res.lbad += l->stats().lbad_sent;
    res.max_credits = std::max(res.max_credits, l->stats().max_credits_seen);
  }
  if (res.max_credits > lc.credits) fail("credits above limit");
  return res;
}

}  // namespace usb3sim::testing
