#pragma once

#include <string>

#include "dmlsim/network.hpp"

namespace dmlsim {

enum class Architecture { cl, fl, sl, hsfl, hfsl };

std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& s);

// Per-round ledger: every transmission and compute event with its schedule.
// Totals are derived from the event list, so every byte is attributable to
// exactly one logged transmission.
struct RoundTrace {
  Architecture arch = Architecture::fl;
  uint32_t round = 0;
  RoundTiming timing;
  bool aborted = false;  // all uploads failed; global model unchanged

  // Delivered payload bytes (failed transmissions excluded).
  uint64_t bytes(LinkClass c) const {
    uint64_t total = 0;
    for (const Event& e : timing.events)
      if (e.kind == EventKind::transmit && e.ok && e.link_class == c)
        total += e.bytes;
    return total;
  }

  uint64_t bytes_total() const {
    uint64_t total = 0;
    for (const Event& e : timing.events)
      if (e.kind == EventKind::transmit && e.ok) total += e.bytes;
    return total;
  }

  uint64_t attempted_bytes() const {
    uint64_t total = 0;
    for (const Event& e : timing.events)
      if (e.kind == EventKind::transmit) total += e.bytes;
    return total;
  }

  // Client-attributable traffic: everything except server-tier exchanges.
  uint64_t client_bytes(bool include_handoff = true) const {
    uint64_t total = bytes(LinkClass::uplink) + bytes(LinkClass::downlink) +
                     bytes(LinkClass::d2d);
    if (include_handoff) total += bytes(LinkClass::handoff);
    return total;
  }

  uint64_t flops(bool client_side) const {
    uint64_t total = 0;
    for (const Event& e : timing.events)
      if (e.kind == EventKind::compute && e.client_side == client_side)
        total += e.flops;
    return total;
  }
  uint64_t client_flops() const { return flops(true); }
  uint64_t server_flops() const { return flops(false); }

  Ratio duration() const { return timing.round_duration; }
};

}  // namespace dmlsim
