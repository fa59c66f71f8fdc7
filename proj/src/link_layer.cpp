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

#include "usb3sim/link_layer.hpp"

#include <stdexcept>
#include <string>

namespace usb3sim {

using namespace kcode;

namespace {

std::uint8_t seq_add(std::uint8_t s, unsigned k) { return static_cast<std::uint8_t>((s + k) % kSeqModulo); }

void push_framing(std::vector<CodePoint>& out, std::uint8_t k) {
  out.push_back({k, true, true});
  out.push_back({k, true, true});
  out.push_back({k, true, true});
  out.push_back({EPF, true, true});
}

void push_data(std::vector<CodePoint>& out, std::uint8_t b) { out.push_back({b, false, true}); }

bool is_data(const CodePoint& cp) { return cp.valid && !cp.is_k; }

std::string lc_kind(LinkCommandKind k) { return std::string(to_string(k)); }

}  // namespace

std::string_view to_string(LinkCommandKind k) {
  switch (k) {
    case LinkCommandKind::LGOOD:
      return "LGOOD";
    case LinkCommandKind::LCRD:
      return "LCRD";
    case LinkCommandKind::LRTY:
      return "LRTY";
    case LinkCommandKind::LBAD:
      return "LBAD";
    case LinkCommandKind::LGO_U1:
      return "LGO_U1";
    case LinkCommandKind::LGO_U2:
      return "LGO_U2";
    case LinkCommandKind::LAU:
      return "LAU";
    case LinkCommandKind::LXU:
      return "LXU";
  }
  return "?";
}

std::uint16_t lcw_word(const LinkCommand& c) {
  return static_cast<std::uint16_t>((c.n & 0x7) | (static_cast<unsigned>(c.kind) << 3));
}

std::optional<LinkCommand> lcw_parse(std::uint16_t w) {
  if (w & 0xFF80) return std::nullopt;
  LinkCommand c{static_cast<LinkCommandKind>((w >> 3) & 0xF), static_cast<std::uint8_t>(w & 0x7)};
  switch (c.kind) {
    case LinkCommandKind::LGOOD:
      return c;
    case LinkCommandKind::LCRD:
      if (c.n > 3) return std::nullopt;
      return c;
    default:
      if (c.n != 0) return std::nullopt;
      return c;
  }
}

std::uint16_t lcw_field(std::uint16_t w) {
  w &= 0x07FF;
  return static_cast<std::uint16_t>(w | (crc5_lcw(w) << 11));
}

std::optional<std::uint16_t> lcw_check(std::uint16_t field) {
  const std::uint16_t w = field & 0x07FF;
  if (!check_crc5_lcw(w, static_cast<std::uint8_t>(field >> 11))) return std::nullopt;
  return w;
}

bool framing_matches(std::span<const CodePoint> quad, std::uint8_t k) {
  if (quad.size() != kFramingSymbols) return false;
  const std::uint8_t want[kFramingSymbols] = {k, k, k, EPF};
  int good = 0;
  for (std::size_t i = 0; i < kFramingSymbols; ++i) {
    if (quad[i].valid && quad[i].is_k && quad[i].byte == want[i]) ++good;
  }
  return good >= 3;
}

std::vector<CodePoint> build_link_command(const LinkCommand& c) {
  std::vector<CodePoint> out;
  out.reserve(kLinkCommandSymbols);
  push_framing(out, SLC);
  const std::uint16_t f = lcw_field(lcw_word(c));
  for (int copy = 0; copy < 2; ++copy) {
    push_data(out, static_cast<std::uint8_t>(f & 0xFF));
    push_data(out, static_cast<std::uint8_t>(f >> 8));
  }
  return out;
}

std::optional<LinkCommand> parse_link_command(std::span<const CodePoint> frame) {
  if (frame.size() != kLinkCommandSymbols) return std::nullopt;
  if (!framing_matches(frame.first(kFramingSymbols), SLC)) return std::nullopt;
  std::optional<LinkCommand> copies[2];
  for (int copy = 0; copy < 2; ++copy) {
    const CodePoint& lo = frame[kFramingSymbols + 2 * copy];
    const CodePoint& hi = frame[kFramingSymbols + 2 * copy + 1];
    if (!is_data(lo) || !is_data(hi)) continue;
    auto w = lcw_check(static_cast<std::uint16_t>(lo.byte | (hi.byte << 8)));
    if (w) copies[copy] = lcw_parse(*w);
  }
  // One intact copy is enough; two intact copies must agree.
  if (copies[0] && copies[1] && !(*copies[0] == *copies[1])) return std::nullopt;
  return copies[0] ? copies[0] : copies[1];
}

std::vector<CodePoint> build_packet_frame(const LinkPacket& p, Scrambler& scr) {
  std::vector<CodePoint> out;
  out.reserve(p.payload.empty() ? kHeaderFrameSymbols : p.payload.size() + kDataFrameOverhead);
  push_framing(out, SHP);
  for (auto b : p.header.body) push_data(out, b);
  const std::uint16_t crc = crc16_header(p.header.body);
  push_data(out, static_cast<std::uint8_t>(crc & 0xFF));
  push_data(out, static_cast<std::uint8_t>(crc >> 8));
  const std::uint16_t lcw = lcw_field(p.header.seq & 0x7);
  push_data(out, static_cast<std::uint8_t>(lcw & 0xFF));
  push_data(out, static_cast<std::uint8_t>(lcw >> 8));
  if (!p.payload.empty()) {
    push_framing(out, SDP);
    for (auto b : p.payload) push_data(out, b);
    const std::uint32_t c32 = crc32_payload(p.payload);
    for (int i = 0; i < 4; ++i) push_data(out, static_cast<std::uint8_t>(c32 >> (8 * i)));
    push_framing(out, END);
  }
  for (auto& cp : out) {
    const std::uint8_t key = scr.next_key();
    if (!cp.is_k) cp.byte ^= key;
  }
  return out;
}

ParsedFrame parse_packet_frame(std::span<const CodePoint> frame, Scrambler& scr) {
  ParsedFrame r;
  const std::size_t n = frame.size();
  // Data positions by layout, whatever the received K flags say.
  std::vector<std::uint8_t> bytes(n);
  std::vector<bool> ok(n);
  const bool has_payload = n > kHeaderFrameSymbols;
  const std::size_t payload_end = has_payload ? n - 8 : n;
  auto data_pos = [&](std::size_t i) {
    if (i < kFramingSymbols) return false;
    if (!has_payload) return true;
    if (i < kHeaderFrameSymbols) return true;
    if (i < kHeaderFrameSymbols + kFramingSymbols) return false;
    return i < n - kFramingSymbols;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t key = scr.next_key();
    if (data_pos(i)) {
      bytes[i] = frame[i].byte ^ key;
      ok[i] = is_data(frame[i]);
    }
  }

  if (n != kHeaderFrameSymbols && n < kDataFrameOverhead + 1) {
    r.status = FrameStatus::BadHeader;
    return r;
  }
  if (!framing_matches(frame.first(kFramingSymbols), SHP)) {
    r.status = FrameStatus::BadHeader;
    return r;
  }
  for (std::size_t i = kFramingSymbols; i < kHeaderFrameSymbols; ++i) {
    if (!ok[i]) {
      r.status = FrameStatus::BadHeader;
      return r;
    }
  }
  for (std::size_t i = 0; i < kHeaderBodyBytes; ++i) r.packet.header.body[i] = bytes[kFramingSymbols + i];
  const std::uint16_t crc = static_cast<std::uint16_t>(bytes[16] | (bytes[17] << 8));
  auto lcw = lcw_check(static_cast<std::uint16_t>(bytes[18] | (bytes[19] << 8)));
  if (!check_crc16_header(r.packet.header.body, crc) || !lcw || (*lcw & ~0x7)) {
    r.status = FrameStatus::BadHeader;
    return r;
  }
  r.packet.header.seq = static_cast<std::uint8_t>(*lcw & 0x7);
  if (!has_payload) return r;

  const std::size_t p0 = kHeaderFrameSymbols + kFramingSymbols;
  bool good = framing_matches(frame.subspan(kHeaderFrameSymbols, kFramingSymbols), SDP) &&
              framing_matches(frame.subspan(n - kFramingSymbols, kFramingSymbols), END);
  for (std::size_t i = p0; good && i < n - kFramingSymbols; ++i) good = ok[i];
  if (good) {
    r.packet.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(p0),
                            bytes.begin() + static_cast<std::ptrdiff_t>(payload_end));
    std::uint32_t c32 = 0;
    for (int i = 0; i < 4; ++i) c32 |= static_cast<std::uint32_t>(bytes[payload_end + i]) << (8 * i);
    good = check_crc32_payload(r.packet.payload, c32);
  }
  if (!good) {
    r.packet.payload.clear();
    r.status = FrameStatus::BadPayload;
  }
  return r;
}

void LinkConfig::validate() const {
  if (credits < 1 || credits > 4) throw std::invalid_argument("link credits must be 1..4");
  if (retry_budget < 1) throw std::invalid_argument("retry budget must be positive");
  if (pending_hp_timeout == SimTime{} || credit_hp_timeout == SimTime{})
    throw std::invalid_argument("link timers must be positive");
  if (max_payload < 1 || max_payload > kMaxPayloadBytes)
    throw std::invalid_argument("max payload must be 1..1024");
}

void LinkLayer::Timer::arm(SimTime deadline) {
  armed_ = true;
  deadline_ = deadline;
  if (!scheduled_ || scheduled_at_ > deadline) {
    scheduled_ = true;
    scheduled_at_ = deadline;
    sim_.schedule_at(deadline, side_, [this] { check(); });
  }
}

void LinkLayer::Timer::check() {
  const SimTime now = sim_.now();
  if (scheduled_ && scheduled_at_ == now) scheduled_ = false;
  if (!armed_) return;
  if (now >= deadline_) {
    armed_ = false;
    fire_();
  } else if (!scheduled_) {
    scheduled_ = true;
    scheduled_at_ = deadline_;
    sim_.schedule_at(deadline_, side_, [this] { check(); });
  }
}

LinkLayer::LinkLayer(Simulator& sim, Endpoint side, LinkConfig cfg, Tracer* tracer)
    : sim_(sim),
      side_(side),
      cfg_(cfg),
      tracer_(tracer),
      pending_timer_(sim, side,
                     [this] {
                       ++stats_.timeouts;
                       trace("timeout", {{"timer", "PENDING_HP"}});
                       request_recovery("pending_hp");
                     }),
      credit_timer_(sim, side, [this] {
        ++stats_.timeouts;
        trace("timeout", {{"timer", "CREDIT_HP"}});
        request_recovery("credit_hp");
      }) {
  cfg_.validate();
}

void LinkLayer::trace(const char* kind, std::vector<std::pair<std::string, std::string>> f) {
  if (tracer_ && tracer_->enabled()) tracer_->emit(sim_.now(), side_, TraceLayer::Link, kind, std::move(f));
}

bool LinkLayer::idle() const { return queue_.empty() && retry_.empty() && credits_ == cfg_.credits; }

void LinkLayer::submit(LinkPacket p) {
  if (p.payload.size() > cfg_.max_payload) throw std::invalid_argument("payload exceeds maximum");
  queue_.push_back(std::move(p));
  pump();
}

void LinkLayer::activate() {
  active_ = true;
  tx_busy_ = false;
  tx_scr_.reset();
  rx_scr_.reset();
  credits_ = 0;
  expected_lcrd_slot_ = 0;
  first_lgood_ = true;
  rx_awaiting_retry_ = false;
  resending_ = !retry_.empty();
  resend_next_ = 0;
  resend_consumes_credit_ = true;
  commands_.clear();
  pending_low_power_.reset();
  trace("activate", {{"rx_expected", std::to_string(rx_expected_)}, {"retry", std::to_string(retry_.size())}});
  // Re-advertise: the last header accepted, then every buffer credit.
  queue_command({LinkCommandKind::LGOOD, seq_add(rx_expected_, kSeqModulo - 1)});
  for (std::uint32_t i = 0; i < cfg_.credits; ++i)
    queue_command({LinkCommandKind::LCRD, static_cast<std::uint8_t>(i % 4)});
  tx_lcrd_slot_ = static_cast<std::uint8_t>(cfg_.credits % 4);
  refresh_timers();
  pump();
}

void LinkLayer::deactivate() {
  if (!active_) return;
  active_ = false;
  ++generation_;
  tx_busy_ = false;
  commands_.clear();
  pending_low_power_.reset();
  pending_timer_.disarm();
  credit_timer_.disarm();
  trace("deactivate", {});
}

bool LinkLayer::request_low_power(LinkState target) {
  if (target != LinkState::U1 && target != LinkState::U2)
    throw std::invalid_argument("low power target must be U1 or U2");
  if (!active_ || aborted_ || pending_low_power_ || !idle()) return false;
  pending_low_power_ = target;
  queue_command({target == LinkState::U1 ? LinkCommandKind::LGO_U1 : LinkCommandKind::LGO_U2, 0});
  return true;
}

void LinkLayer::queue_command(LinkCommand c) {
  commands_.push_back(c);
  pump();
}

void LinkLayer::refresh_timers() {
  if (!active_) return;
  if (retry_.empty()) {
    pending_timer_.disarm();
  } else if (!pending_timer_.armed()) {
    pending_timer_.arm(sim_.now() + cfg_.pending_hp_timeout);
  }
  if (credits_ >= cfg_.credits) {
    credit_timer_.disarm();
  } else if (!credit_timer_.armed()) {
    credit_timer_.arm(sim_.now() + cfg_.credit_hp_timeout);
  }
}

void LinkLayer::send_frame(std::vector<CodePoint> frame, std::optional<LinkState> after) {
  tx_busy_ = true;
  const SimTime done = sink_(std::move(frame));
  const std::uint64_t gen = generation_;
  sim_.schedule_at(done, side_, [this, gen, after] {
    if (gen != generation_) return;
    tx_busy_ = false;
    if (after && low_power_) low_power_(*after);
    pump();
  });
}

void LinkLayer::pump() {
  if (!active_ || aborted_ || tx_busy_ || !sink_) return;

  if (!commands_.empty()) {
    const LinkCommand c = commands_.front();
    commands_.pop_front();
    ++stats_.link_commands_sent;
    if (tracing()) trace("lc_tx", {{"cmd", lc_kind(c.kind)}, {"n", std::to_string(c.n)}});
    std::optional<LinkState> after;
    if (c.kind == LinkCommandKind::LAU) {
      after = accepted_low_power_;
      accepted_low_power_.reset();
    }
    send_frame(build_link_command(c), after);
    return;
  }
  if (pending_low_power_ || accepted_low_power_) return;

  if (resending_) {
    if (resend_next_ < retry_.size()) {
      if (resend_consumes_credit_) {
        if (credits_ == 0) return;
        --credits_;
      }
      LinkPacket& p = retry_[resend_next_++];
      ++stats_.retransmissions;
      if (tracing())
        trace("hp_tx", {{"seq", std::to_string(p.header.seq)},
                        {"type", std::to_string(p.header.body[0])},
                        {"len", std::to_string(p.payload.size())},
                        {"retry", "1"}});
      send_frame(build_packet_frame(p, tx_scr_));
      refresh_timers();
      return;
    }
    resending_ = false;
  }

  if (!queue_.empty() && credits_ > 0 && retry_.size() < cfg_.credits) {
    LinkPacket p = std::move(queue_.front());
    queue_.pop_front();
    p.header.seq = tx_seq_;
    tx_seq_ = seq_add(tx_seq_, 1);
    --credits_;
    ++stats_.packets_sent;
    if (tracing())
      trace("hp_tx", {{"seq", std::to_string(p.header.seq)},
                      {"type", std::to_string(p.header.body[0])},
                      {"len", std::to_string(p.payload.size())},
                      {"retry", "0"}});
    retry_.push_back(std::move(p));
    resend_next_ = retry_.size();
    send_frame(build_packet_frame(retry_.back(), tx_scr_));
    refresh_timers();
  }
}

void LinkLayer::receive_frame(std::span<const CodePoint> frame) {
  if (!active_ || aborted_) return;
  if (frame.size() == kLinkCommandSymbols) {
    auto c = parse_link_command(frame);
    if (!c) {
      // Idle frames also land here; only count what looked like a command.
      if (framing_matches(frame.first(kFramingSymbols), SLC)) {
        ++stats_.link_commands_lost;
        trace("lc_lost", {});
      }
      return;
    }
    handle_command(*c);
    return;
  }
  if (frame.size() == kHeaderFrameSymbols || frame.size() > kDataFrameOverhead) {
    handle_packet(frame);
  }
}

void LinkLayer::handle_packet(std::span<const CodePoint> frame) {
  ParsedFrame parsed = parse_packet_frame(frame, rx_scr_);
  const auto& hdr = parsed.packet.header;
  if (rx_awaiting_retry_) {
    ++stats_.dropped_awaiting_retry;
    if (tracing()) trace("hp_rx", {{"seq", std::to_string(hdr.seq)}, {"result", "drop"}});
    return;
  }
  auto send_lbad = [&](const char* why) {
    ++stats_.lbad_sent;
    rx_awaiting_retry_ = true;
    if (tracing()) trace("hp_rx", {{"seq", std::to_string(hdr.seq)}, {"crc_ok", "0"}, {"result", why}});
    queue_command({LinkCommandKind::LBAD, 0});
  };
  if (parsed.status == FrameStatus::BadHeader) {
    ++stats_.header_errors;
    send_lbad("bad_header");
    return;
  }
  const std::uint8_t back = static_cast<std::uint8_t>((rx_expected_ + kSeqModulo - hdr.seq) % kSeqModulo);
  if (back == 0) {
    if (parsed.status == FrameStatus::BadPayload) {
      ++stats_.payload_errors;
      send_lbad("bad_payload");
      return;
    }
    rx_expected_ = seq_add(rx_expected_, 1);
    ++stats_.delivered;
    if (tracing()) trace("hp_rx", {{"seq", std::to_string(hdr.seq)}, {"crc_ok", "1"}, {"result", "accept"}});
    commands_.push_back({LinkCommandKind::LGOOD, hdr.seq});
    commands_.push_back({LinkCommandKind::LCRD, tx_lcrd_slot_});
    tx_lcrd_slot_ = static_cast<std::uint8_t>((tx_lcrd_slot_ + 1) % 4);
    if (deliver_) deliver_(std::move(parsed.packet));
    pump();
  } else if (back <= 4) {
    ++stats_.duplicates;
    if (tracing()) trace("hp_rx", {{"seq", std::to_string(hdr.seq)}, {"crc_ok", "1"}, {"result", "duplicate"}});
    queue_command({LinkCommandKind::LGOOD, hdr.seq});
  } else {
    send_lbad("out_of_sequence");
  }
}

void LinkLayer::pop_head() {
  last_popped_ = retry_.front().header.seq;
  retry_.pop_front();
  if (resend_next_ > 0) --resend_next_;
  consecutive_failures_ = 0;
  // Restart the pending timer for whatever is now at the head.
  pending_timer_.disarm();
  refresh_timers();
}

void LinkLayer::handle_command(const LinkCommand& c) {
  if (tracing()) trace("lc_rx", {{"cmd", lc_kind(c.kind)}, {"n", std::to_string(c.n)}});
  switch (c.kind) {
    case LinkCommandKind::LGOOD: {
      if (first_lgood_) {
        // First acknowledgment after U0 entry is cumulative.
        first_lgood_ = false;
        std::size_t idx = retry_.size();
        for (std::size_t i = 0; i < retry_.size(); ++i)
          if (retry_[i].header.seq == c.n) idx = i;
        if (idx < retry_.size())
          for (std::size_t i = 0; i <= idx; ++i) pop_head();
      } else if (!retry_.empty() && retry_.front().header.seq == c.n) {
        pop_head();
      } else if (c.n != last_popped_) {
        violation("lgood_out_of_order");
        return;
      }
      if (acked_) acked_();
      pump();
      return;
    }
    case LinkCommandKind::LCRD:
      if (c.n != expected_lcrd_slot_) {
        violation("lcrd_slot");
        request_recovery("lcrd_slot");
        return;
      }
      expected_lcrd_slot_ = static_cast<std::uint8_t>((expected_lcrd_slot_ + 1) % 4);
      if (credits_ >= cfg_.credits) {
        violation("lcrd_overflow");
        return;
      }
      ++credits_;
      if (credits_ > stats_.max_credits_seen) stats_.max_credits_seen = credits_;
      credit_timer_.disarm();
      refresh_timers();
      pump();
      return;
    case LinkCommandKind::LBAD:
      ++stats_.lbad_received;
      if (++consecutive_failures_ > cfg_.retry_budget) {
        aborted_ = true;
        pending_timer_.disarm();
        credit_timer_.disarm();
        trace("abort", {{"failures", std::to_string(consecutive_failures_)}});
        if (abort_) abort_();
        return;
      }
      resending_ = true;
      resend_next_ = 0;
      resend_consumes_credit_ = false;
      queue_command({LinkCommandKind::LRTY, 0});
      return;
    case LinkCommandKind::LRTY:
      rx_awaiting_retry_ = false;
      return;
    case LinkCommandKind::LGO_U1:
    case LinkCommandKind::LGO_U2: {
      const LinkState target = c.kind == LinkCommandKind::LGO_U1 ? LinkState::U1 : LinkState::U2;
      if (idle() && !pending_low_power_) {
        accepted_low_power_ = target;
        queue_command({LinkCommandKind::LAU, 0});
      } else {
        queue_command({LinkCommandKind::LXU, 0});
      }
      return;
    }
    case LinkCommandKind::LAU:
      if (pending_low_power_) {
        const LinkState target = *pending_low_power_;
        pending_low_power_.reset();
        if (low_power_) low_power_(target);
      }
      return;
    case LinkCommandKind::LXU:
      pending_low_power_.reset();
      pump();
      return;
  }
}

void LinkLayer::violation(const char* what) {
  ++stats_.violations;
  trace("violation", {{"what", what}});
}

void LinkLayer::request_recovery(const char* why) {
  if (!active_) return;
  ++stats_.recovery_requests;
  trace("recovery_request", {{"why", why}});
  if (recovery_) recovery_();
}

}  // namespace usb3sim
