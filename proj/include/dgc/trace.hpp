#pragma once

#include <map>
#include <optional>
#include <set>
#include <vector>

#include "dgc/messages.hpp"

namespace dgc {

enum class TracePhase : uint8_t {
    mark_gray,      // phase 1 in progress
    await_done,     // locally done, waiting for the group done broadcast
    mark_black,     // phase 2 back trace in progress
    await_verdict,  // phase 2 done locally, token/exchange pending
    exchanging,     // neighbor-list exchange in progress
    completed,      // swept; record kept as a tombstone for MR(done) replies
    dissolved       // aborted by faults; state erased
};

struct JoinRecord {
    TraceId target_leader;
};

struct AcceptRecord {
    TraceId requester_leader;
    bool acked = false;
};

// One initiator's collection attempt plus the group bookkeeping it carries.
// Lives on the initiator's machine; all fields are driven by messages.
struct PartialTrace {
    TraceId id;
    ObjectId root;
    TracePhase phase = TracePhase::mark_gray;
    bool fault_tainted = false;

    // group membership
    std::set<TraceId> group;     // includes self
    TraceId leader;              // min(group) when in consensus
    bool in_consensus = true;
    std::set<TraceId> merge_list;
    MergeState merge_state = MergeState::none;

    // trace-level dependency tracking
    std::set<TraceId> dependents;   // traces whose completion we await
    std::set<TraceId> done_traces;  // encountered traces known finished
    std::map<TraceId, std::set<ObjectId>> neighbors;  // trace -> meeting objects

    // leader-side merge queues
    std::vector<JoinRecord> joins;
    std::vector<AcceptRecord> accepts;
    bool join_inflight = false;          // one outgoing JN at a time
    bool install_active = false;         // a JN/AC install is in progress here
    bool install_joiner = false;         // we sent the JN (we drive the CR)
    bool awaiting_mc = false;            // winning leader still owed the MC
    std::set<TraceId> old_group;         // group at install start
    std::set<TraceId> gi_pending;        // members still owing GI_ACK
    std::set<TraceId> cm_pending;        // members still owing CM_ACK
    std::optional<TraceId> gi_inflight, cm_inflight;
    bool cr_sent = false, cr_received = false, cr_acked = false;
    bool cm_phase = false;
    std::optional<TraceId> peer_leader;  // other side of the active install
    bool losing_leader = false;
    std::vector<SimMessage> deferred;    // JN/AR arriving mid-install

    // own outstanding requests (for reissue after elections)
    std::vector<JoinRecord> my_joins;
    std::vector<AcceptRecord> my_accepts;
    std::set<TraceId> mr_outstanding;    // encountered traces owing MR_ACK
    std::map<TraceId, std::set<TraceId>> mr_reply_to;  // requester leader -> MR senders
    std::map<TraceId, std::vector<std::pair<ObjectId, ObjectId>>> pending_ecs;
    std::set<TraceId> defunct;           // encountered traces on dead machines

    // fault consensus
    std::set<TraceId> fault_set;
    std::map<TraceId, MsgFaultSet> fault_reports;  // collected by acting leader
    bool awaiting_confirm = false;

    // termination token
    bool has_token = false;
    TokenData token;
    int token_phase = 1;
    uint64_t token_epoch_seen = 0;

    // phase-1 local completion
    bool locally_done = false;

    // re-mark-gray adoption
    std::set<ObjectId> rg_dependents;

    // phase 2
    std::set<TraceId> marks;
    bool outside_flag = false;   // hit an object reachable from outside
    bool verdict_live = false;
    std::vector<ReachEdge> reach_edges;
    std::set<ObjectId> outside_objects;  // objects known reachable from outside
    // exchange state
    bool exchange_engaged = false;
    TraceId exchange_parent;
    int exchange_deficit = 0;
    std::map<TraceId, std::set<ObjectId>> asked_by;     // who asked about what
    std::map<TraceId, std::set<ObjectId>> reported_to;  // outside objects already sent
    std::set<ObjectId> rmb_outstanding;                 // re-mark-black replies owed

    bool is_leader() const { return leader == id; }
};

}  // namespace dgc
