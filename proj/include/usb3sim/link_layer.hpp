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
 * @file link_layer.hpp
 * @brief Header packets, link commands, credits and retry.
 *
 * Frames on the wire (code points before 8b10b):
 *
 *   header      SHP SHP SHP EPF | body[12] crc16[2] lcw[2]              20
 *   header+data header frame    | SDP SDP SDP EPF data[n] crc32[4]
 *                               | END END END EPF                   n + 32
 *   link cmd    SLC SLC SLC EPF | lcw[2] lcw[2]                          8
 *
 * Multi-byte fields are little endian. A 16-bit LCW field carries an 11-bit
 * word in bits 0-10 and its CRC-5 in bits 11-15. Header and data frames are
 * scrambled: the scrambler advances on every symbol and only data positions
 * are XORed. Link commands are sent in the clear and carry two copies of
 * the word. A framing quadruplet is accepted with at most one bad symbol.
 */

#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "usb3sim/line_coding.hpp"
#include "usb3sim/link_state.hpp"
#include "usb3sim/sim_core.hpp"
#include "usb3sim/trace.hpp"

namespace usb3sim {

inline constexpr std::size_t kFramingSymbols = 4;
inline constexpr std::size_t kHeaderFrameSymbols = 20;
inline constexpr std::size_t kLinkCommandSymbols = 8;
inline constexpr std::size_t kDataFrameOverhead = 32;  // header frame + 12 framing/crc
inline constexpr std::uint8_t kSeqModulo = 8;

enum class PacketType : std::uint8_t {
  LinkManagement = 0x00,
  Transaction = 0x04,
  DataPacketHeader = 0x08,
};

/// A header packet. body[0] holds the packet type.
struct HeaderPacket {
  std::uint8_t seq = 0;
  std::array<std::uint8_t, kHeaderBodyBytes> body{};

  PacketType type() const { return static_cast<PacketType>(body[0]); }
  bool operator==(const HeaderPacket&) const = default;
};

/// Unit handed to and delivered by the link layer: a header, and for a data
/// packet header the payload that follows it in the same frame.
struct LinkPacket {
  HeaderPacket header;
  std::vector<std::uint8_t> payload;

  bool has_payload() const { return !payload.empty(); }
  bool operator==(const LinkPacket&) const = default;
};

enum class LinkCommandKind : std::uint8_t {
  LGOOD = 0,
  LCRD = 1,
  LRTY = 2,
  LBAD = 3,
  LGO_U1 = 4,
  LGO_U2 = 5,
  LAU = 6,
  LXU = 7,
};

std::string_view to_string(LinkCommandKind k);

/// `n` is the sequence number for LGOOD and the slot (0=A..3=D) for LCRD.
struct LinkCommand {
  LinkCommandKind kind = LinkCommandKind::LGOOD;
  std::uint8_t n = 0;

  bool operator==(const LinkCommand&) const = default;
};

/// 11-bit word: bits 0-2 n, bits 3-6 kind, bits 7-10 zero.
std::uint16_t lcw_word(const LinkCommand& c);
std::optional<LinkCommand> lcw_parse(std::uint16_t eleven_bits);
/// 16-bit field: word plus CRC-5 in the top bits.
std::uint16_t lcw_field(std::uint16_t eleven_bits);
std::optional<std::uint16_t> lcw_check(std::uint16_t field);

std::vector<CodePoint> build_link_command(const LinkCommand& c);
std::optional<LinkCommand> parse_link_command(std::span<const CodePoint> frame);

std::vector<CodePoint> build_packet_frame(const LinkPacket& p, Scrambler& scr);

enum class FrameStatus : std::uint8_t { Ok, BadHeader, BadPayload };

struct ParsedFrame {
  FrameStatus status = FrameStatus::Ok;
  LinkPacket packet;  // header valid unless BadHeader
};

/// Descrambles and checks a header or header+data frame. The scrambler
/// advances by the frame length whatever the outcome.
ParsedFrame parse_packet_frame(std::span<const CodePoint> frame, Scrambler& scr);

bool framing_matches(std::span<const CodePoint> quad, std::uint8_t k);

struct LinkConfig {
  std::uint32_t credits = 4;
  /// Consecutive LBADs tolerated before the link layer gives up.
  std::uint32_t retry_budget = 64;
  SimTime pending_hp_timeout = SimTime::us(10);
  SimTime credit_hp_timeout = SimTime::us(10);
  std::size_t max_payload = kMaxPayloadBytes;

  void validate() const;
};

struct LinkStats {
  std::uint64_t packets_sent = 0;  // first transmissions
  std::uint64_t retransmissions = 0;
  std::uint64_t delivered = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t header_errors = 0;
  std::uint64_t payload_errors = 0;
  std::uint64_t dropped_awaiting_retry = 0;
  std::uint64_t lbad_sent = 0;
  std::uint64_t lbad_received = 0;
  std::uint64_t link_commands_sent = 0;
  std::uint64_t link_commands_lost = 0;
  std::uint64_t violations = 0;
  std::uint64_t timeouts = 0;
  std::uint64_t recovery_requests = 0;
  std::uint32_t max_credits_seen = 0;
};

class LinkLayer {
 public:
  /// Hands a frame to the line; returns when its last symbol has left.
  using FrameSink = std::function<SimTime(std::vector<CodePoint>)>;
  using Deliver = std::function<void(LinkPacket)>;
  using Notify = std::function<void()>;
  using LowPower = std::function<void(LinkState target)>;

  LinkLayer(Simulator& sim, Endpoint side, LinkConfig cfg, Tracer* tracer = nullptr);

  void set_frame_sink(FrameSink f) { sink_ = std::move(f); }
  void set_deliver(Deliver d) { deliver_ = std::move(d); }
  void on_recovery_request(Notify n) { recovery_ = std::move(n); }
  void on_abort(Notify n) { abort_ = std::move(n); }
  void on_low_power(LowPower l) { low_power_ = std::move(l); }
  /// Called whenever a packet has been acknowledged (space may be free).
  void on_acknowledged(Notify n) { acked_ = std::move(n); }

  /// Queues a packet. Sequence numbers are assigned at first transmission.
  void submit(LinkPacket p);
  void receive_frame(std::span<const CodePoint> frame);

  /// U0 entered: scramblers reset, credits re-advertised, unacknowledged
  /// packets resent.
  void activate();
  /// U0 left.
  void deactivate();
  bool active() const { return active_; }
  bool aborted() const { return aborted_; }

  /// Nothing queued, nothing unacknowledged, all credits back.
  bool idle() const;
  /// Starts an LGO_U1/LGO_U2 handshake. Returns false if not idle.
  bool request_low_power(LinkState target);

  std::uint32_t credits() const { return credits_; }
  std::size_t retry_buffer_size() const { return retry_.size(); }
  std::size_t queued() const { return queue_.size(); }
  const LinkStats& stats() const { return stats_; }
  const LinkConfig& config() const { return cfg_; }
  std::uint8_t rx_expected_seq() const { return rx_expected_; }
  std::uint8_t tx_next_seq() const { return tx_seq_; }

 private:
  class Timer {
   public:
    Timer(Simulator& sim, Endpoint side, std::function<void()> fire)
        : sim_(sim), side_(side), fire_(std::move(fire)) {}
    void arm(SimTime deadline);
    void disarm() { armed_ = false; }
    bool armed() const { return armed_; }

   private:
    void check();
    Simulator& sim_;
    Endpoint side_;
    std::function<void()> fire_;
    bool armed_ = false;
    bool scheduled_ = false;
    SimTime deadline_;
    SimTime scheduled_at_;
  };

  void queue_command(LinkCommand c);
  void pump();
  void send_frame(std::vector<CodePoint> frame, std::optional<LinkState> after = std::nullopt);
  void handle_command(const LinkCommand& c);
  void handle_packet(std::span<const CodePoint> frame);
  void pop_head();
  void request_recovery(const char* why);
  void violation(const char* what);
  void refresh_timers();
  bool tracing() const { return tracer_ && tracer_->enabled(); }
  void trace(const char* kind, std::vector<std::pair<std::string, std::string>> f);

  Simulator& sim_;
  Endpoint side_;
  LinkConfig cfg_;
  Tracer* tracer_;
  FrameSink sink_;
  Deliver deliver_;
  Notify recovery_;
  Notify abort_;
  LowPower low_power_;
  Notify acked_;

  bool active_ = false;
  bool aborted_ = false;
  bool tx_busy_ = false;
  std::uint64_t generation_ = 0;  // bumped on deactivate; stale completions ignored

  // Transmit side.
  std::deque<LinkPacket> queue_;
  std::deque<LinkPacket> retry_;  // sent, not yet LGOOD'd; header.seq set
  std::size_t resend_next_ = 0;   // retry_ entries before this index are on the wire again
  bool resending_ = false;
  bool resend_consumes_credit_ = false;
  std::deque<LinkCommand> commands_;
  std::uint8_t tx_seq_ = 0;
  std::uint8_t last_popped_ = kSeqModulo - 1;
  bool first_lgood_ = true;
  std::uint32_t credits_ = 0;
  std::uint8_t expected_lcrd_slot_ = 0;
  std::uint32_t consecutive_failures_ = 0;
  std::optional<LinkState> pending_low_power_;
  std::optional<LinkState> accepted_low_power_;
  Scrambler tx_scr_;

  // Receive side.
  std::uint8_t rx_expected_ = 0;
  std::uint8_t tx_lcrd_slot_ = 0;
  bool rx_awaiting_retry_ = false;
  Scrambler rx_scr_;

  Timer pending_timer_;
  Timer credit_timer_;
  LinkStats stats_;
};

}  // namespace usb3sim
