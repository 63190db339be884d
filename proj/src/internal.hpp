#pragma once

// Shared helpers for the protocol round implementations. Not installed.

#include <string>
#include <utility>
#include <vector>

#include "dmlsim/orchestration.hpp"

namespace dmlsim::internal {

struct EventBuilder {
  std::vector<Event> events;

  size_t transmit(std::string src, std::string dst, uint64_t bytes, Ratio dur,
                  LinkClass cls, std::vector<size_t> deps, bool ok,
                  std::string label) {
    Event e;
    e.kind = EventKind::transmit;
    e.node = std::move(src);
    e.dst = std::move(dst);
    e.bytes = bytes;
    e.duration = dur;
    e.link_class = cls;
    e.deps = std::move(deps);
    e.ok = ok;
    e.label = std::move(label);
    events.push_back(std::move(e));
    return events.size() - 1;
  }

  size_t compute(std::string node, uint64_t flops, Ratio dur, bool client_side,
                 std::vector<size_t> deps, std::string label) {
    Event e;
    e.kind = EventKind::compute;
    e.node = std::move(node);
    e.flops = flops;
    e.duration = dur;
    e.client_side = client_side;
    e.deps = std::move(deps);
    e.label = std::move(label);
    events.push_back(std::move(e));
    return events.size() - 1;
  }
};

// Model over layers [begin, end) of full's spec, sharing parameter values.
Model slice_model(const Model& full, size_t begin, size_t end);

// Concatenate part models into one (layer widths must be adjacent).
Model compose_models(const std::vector<const Model*>& parts,
                     uint32_t param_dtype_bytes);

}  // namespace dmlsim::internal
