#pragma once

#include <map>
#include <set>
#include <vector>

#include "dgc/heap.hpp"

namespace dgc {

// Result of one per-machine collection pass. Entry items are treated as
// pseudo-roots; every object ends up live, isolated, or reclaimed.
struct LocalGcReport {
    std::set<ObjectId> live;            // locally reachable from roots
    std::set<ObjectId> isolated;        // reachable only via entry items
    std::vector<ObjectId> reclaimed;
    std::set<ObjectId> live_exits;      // exit targets reachable from roots
    std::set<ObjectId> isolated_exits;  // exit targets reachable only via entries
};

// Local reachability over one machine's heap, no remote state consulted.
// `from` holds object ids; reached exit targets are collected separately.
void mark_from(const MachineState& m, const std::set<ObjectId>& from,
               std::set<ObjectId>& objects, std::set<ObjectId>& exit_targets);

struct PrecursorResult {
    bool live_blocked = false;
    std::set<ObjectId> precursors;  // entry items reaching the exit via isolated objects
};

}  // namespace dgc
