#pragma once

#include <map>
#include <optional>
#include <set>
#include <vector>

#include "dgc/messages.hpp"

namespace dgc {

struct Object {
    ObjectId id;
    std::set<ObjectId> local_refs;  // same-machine objects
    std::set<ObjectId> exit_refs;   // remote targets, via the machine's exit items
};

struct ExitItem {
    ObjectId target;
    bool persistent = false;
    Timestamp birth_ts;  // timestamp of the insert that created it
};

struct EntryListSlot {
    Timestamp ts;          // largest insert timestamp seen for this member
    bool persistent = false;
};

// Darkest request color seen per entry-list member since entrycolors were
// initialized, plus the traces that sent requests over that reference.
struct EntryColorSlot {
    Color color = Color::white;
    std::set<TraceId> by;
};

// Responsible: a remote object from which a mark-gray request was received.
struct Responsible {
    ObjectId obj;
    MachineId machine = 0;
    bool whitened = false;  // sent us a mark-white (or sweep) release
    bool failed = false;
    bool acked = false;     // we have acknowledged its request

    auto operator<=>(const Responsible&) const = default;
};

enum class ExitlistState : uint8_t { absent, valid, out_of_date };

// Per-distributed-object record on its host: entry list, trace state and
// heuristic bits all live here.
struct EntryItem {
    ObjectId obj;

    // acyclic_reflist
    std::map<MachineId, EntryListSlot> entry_list;

    // trace state (one trace colors an entry item at a time)
    Color color = Color::white;
    TraceId owner;                         // trace that colored it
    TraceId black_by;                      // phase-2 trace that blacked it
    std::vector<Responsible> responsibles;
    std::optional<ObjectId> parent;        // requester owed the withheld ack
    MachineId parent_machine = 0;
    bool parent_acked = false;
    bool is_trace_root = false;
    std::vector<ObjectId> sent_gray_to;    // targets of our mark-gray requests
    std::set<ObjectId> dependents;         // targets still owing us acks
    bool pending_reparent = false;

    // phase-2 per-node aggregation (kept for re-mark-black adoption)
    std::set<ExitItemId> black_pending;        // exits we forwarded mark-black to
    std::set<ExitItemId> sent_black_to;        // all exits we mark-blacked (sweep routing)
    bool black_live = false;
    std::vector<ReachEdge> black_edges;
    std::map<TraceId, std::set<ObjectId>> black_boundary;
    std::vector<std::pair<ExitItemId, ObjectId>> black_reply_to;  // (exit, requester)

    // cached exitlist (isolated exit items reachable from this entry)
    ExitlistState exitlist_state = ExitlistState::absent;
    std::vector<ObjectId> exitlist;   // exit targets
    uint64_t exitlist_epoch = 0;
    bool barrier_pending = false;     // transfer barrier hit during recompute

    // heuristic
    bool vulnerable = true;
    bool active = true;
    std::map<MachineId, EntryColorSlot> entrycolors;
    std::set<MachineId> white_at_end;  // slots white when last whitened
    bool has_traced = false;           // entrycolors snapshot is meaningful

    bool colored() const { return color != Color::white; }
};

struct PrecursorMemo {
    bool live_blocked = false;
    std::set<ObjectId> precursors;
};

struct MachineState {
    MachineId id = 0;
    bool alive = true;
    uint32_t next_serial = 1;
    uint64_t ts_seq = 1;
    uint64_t barrier_epoch = 1;

    std::map<ObjectId, Object> objects;
    std::map<ObjectId, EntryItem> entries;   // keyed by object id
    std::map<ObjectId, ExitItem> exits;      // keyed by remote target id
    std::set<ObjectId> roots;
    std::map<ObjectId, int> temp_roots;      // remote-invocation pins
    std::set<ObjectId> handle_roots;         // unattached received locators

    // inverse images of cached exitlists: exit target -> entries listing it
    std::map<ObjectId, std::set<ObjectId>> exitlist_inverse;

    // precursor memos per exit item (keyed by target), and last-seen
    // local-reachability to detect reachable -> isolated transitions
    std::map<ObjectId, PrecursorMemo> old_precursors;
    std::map<ObjectId, bool> exit_was_reachable;

    // machine-level failure knowledge (set when the notification is handled)
    std::set<MachineId> known_failed;

    // mark-gray/black requests parked while an exitlist recomputation or a
    // foreign-color block is pending
    std::vector<SimMessage> parked;

    // re-mark-gray requests buffered until the failure is locally confirmed
    std::vector<SimMessage> rg_buffer;
};

}  // namespace dgc
