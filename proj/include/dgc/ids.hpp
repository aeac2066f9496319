#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <string>

namespace dgc {

using MachineId = uint32_t;
using SimTime = uint64_t;

// Objects are named by (host machine, per-machine serial). The id doubles as
// the locator for remote references: the host is always the hosting machine.
struct ObjectId {
    MachineId host = 0;
    uint32_t serial = 0;

    auto operator<=>(const ObjectId&) const = default;
};

inline bool valid(const ObjectId& id) { return id.serial != 0; }

// A trace is identified by the entry item (object) that initiated it. The
// derived ordering is total, which leader election and merge tie-breaking
// rely on.
struct TraceId {
    ObjectId initiator;

    auto operator<=>(const TraceId&) const = default;
};

// Exit items are shared per (owning machine, remote target): all local
// references on one machine to the same remote object go through one item.
struct ExitItemId {
    MachineId owner = 0;
    ObjectId target;

    auto operator<=>(const ExitItemId&) const = default;
};

// Logical timestamp for reference-list inserts/deletes: simulation time plus
// a per-machine sequence number. Monotone per machine and consistent with
// real-time order across machines whenever the times differ.
struct Timestamp {
    SimTime time = 0;
    uint64_t seq = 0;

    auto operator<=>(const Timestamp&) const = default;
};

std::string to_string(const ObjectId& id);
std::string to_string(const TraceId& id);
std::string to_string(const Timestamp& ts);

}  // namespace dgc
