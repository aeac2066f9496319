#pragma once

#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "dgc/ids.hpp"

namespace dgc {

enum class Color : uint8_t { white, gray, black, purple };

std::string to_string(Color c);

// ---------------------------------------------------------------------------
// Acyclic reference listing
// ---------------------------------------------------------------------------

struct MsgInsert {
    ObjectId target;
    MachineId member;  // machine gaining the reference
    Timestamp ts;
    bool persistent = false;
};

struct MsgDelete {
    ObjectId target;
    MachineId member;  // machine dropping the reference
    Timestamp ts;
};

// Locator in transit: the receiving machine materializes an exit item when
// this is delivered.
struct MsgRefTransfer {
    ObjectId target;
    ObjectId holder;  // object on the receiving machine to attach to; 0 = handle
    Timestamp ts;
    bool persistent = false;
};

// Remote procedure call: gives the target a temp root for `duration` ticks.
struct MsgInvoke {
    ObjectId target;
    SimTime duration = 0;
};

// ---------------------------------------------------------------------------
// Phase one: mark gray
// ---------------------------------------------------------------------------

struct MsgMarkGray {
    TraceId trace;
    ObjectId target;       // entry item receiving the request
    ObjectId sender_obj;   // entry item that forwarded (or initiator root)
    MachineId sender_machine = 0;
};

struct MsgGrayAck {
    TraceId trace;
    ObjectId from_obj;  // entry item acknowledging
    ObjectId to_obj;    // entry item that sent the mark-gray
};

struct MsgMarkWhite {
    TraceId trace;
    ObjectId target;
    ObjectId sender_obj;
    MachineId sender_machine = 0;
};

struct MsgReparentReq {
    TraceId trace;
    ObjectId requester;  // entry item asking to be listed in the initiator's dependents
};

struct MsgReparentAck {
    TraceId trace;
    ObjectId requester;
};

// ---------------------------------------------------------------------------
// Cooperating traces: encounters, merging, fault consensus, termination token
// ---------------------------------------------------------------------------

struct MsgEncounter {
    TraceId requesting;  // trace whose mark-gray hit a foreign object
    TraceId owner;       // trace that colored the object
    ObjectId at_object;  // the encountered entry item
    ObjectId requester;  // entry item that sent the mark-gray
};

struct MsgEncounterAck {
    TraceId requesting;
    ObjectId at_object;
    ObjectId requester;
};

struct MsgMergeReq {  // MR
    TraceId from;
    TraceId to;
    TraceId from_leader;
};

struct MsgMergeReply {  // MR_ACK: either "done" or carries the peer's leader
    TraceId from;
    TraceId to;
    bool done = false;
    TraceId leader;
};

struct MsgAcceptReq {  // AR: member tells its leader a join is coming
    TraceId from;
    TraceId to;             // leader
    TraceId requester_leader;
};

struct MsgAcceptAck {  // AR_ACK
    TraceId from;
    TraceId to;
    TraceId requester_leader;
};

struct MsgJoinReq {  // JR: member asks its own leader to join another group
    TraceId from;
    TraceId to;            // own leader
    TraceId target_leader;
};

struct MsgJoin {  // JN: leader-to-leader, carries the joining group
    TraceId from;
    TraceId to;
    std::set<TraceId> group;
};

struct MsgAccept {  // AC: reply to JN, carries the accepting group
    TraceId from;
    TraceId to;
    std::set<TraceId> group;
};

struct MsgGroupInstall {  // GI: step 1, staged group list
    TraceId from;
    TraceId to;
    std::set<TraceId> merge_list;
};

struct MsgGroupInstallAck {  // GI_ACK
    TraceId from;
    TraceId to;
};

struct MsgCommitReq {  // CR between leaders when both distributions finish
    TraceId from;
    TraceId to;
};

struct MsgCommitReqAck {  // CR_ACK
    TraceId from;
    TraceId to;
};

struct MsgCommit {  // CM: step 2, install merge_list as group
    TraceId from;
    TraceId to;
};

struct MsgCommitAck {  // CM_ACK
    TraceId from;
    TraceId to;
};

struct MsgMergeComplete {  // MC: losing leader hands joins/accepts to new leader
    TraceId from;
    TraceId to;
    std::vector<TraceId> join_targets;                  // outstanding join requests
    std::vector<std::pair<TraceId, bool>> accepts;      // (requester leader, acked)
};

struct MsgMergeInquiry {  // MI: surviving leader probes the other group
    TraceId from;
    TraceId to;
};

struct MsgMergeInquiryAck {  // MI_ACK
    TraceId from;
    TraceId to;
    bool merging = false;
};

struct MsgMergeAbort {
    TraceId from;
    TraceId to;
};

enum class MergeState : uint8_t { none, staged, installed };

struct MsgFaultSet {  // sent to the acting leader on fault detection
    TraceId from;
    TraceId to;
    std::set<TraceId> faults;
    bool has_token = false;
    MergeState merge_state = MergeState::none;
    // reissued requests for a new leader
    std::vector<TraceId> join_targets;
    std::vector<std::pair<TraceId, bool>> accepts;
};

struct MsgFaultConfirm {
    TraceId from;
    TraceId to;
    std::set<TraceId> faults;
};

struct TokenData {
    uint64_t epoch = 0;  // bumped each time the leader mints a token
    std::vector<TraceId> done;
    std::vector<TraceId> next;
    // phase-2 extension: per-trace outside-reachability flags
    std::map<TraceId, bool> outside;
};

struct MsgToken {
    TraceId from;
    TraceId to;
    int phase = 1;
    TokenData token;
};

struct MsgDoneBcast {
    TraceId from;
    TraceId to;
    int phase = 1;
    uint64_t epoch = 0;
    std::vector<TraceId> done;
    std::map<TraceId, bool> outside;
};

struct MsgReMarkGray {  // RG
    TraceId trace;        // surviving trace re-adopting the region
    TraceId failed;       // trace whose initiator died
    ObjectId target;
    ObjectId sender_obj;  // 0 when sent by the trace itself
    MachineId sender_machine = 0;
};

struct MsgReMarkGrayReply {  // object already re-adopted: reports its trace
    TraceId trace;
    ObjectId at_object;
    TraceId belongs_to;
};

// ---------------------------------------------------------------------------
// Phase two: mark black
// ---------------------------------------------------------------------------

// One edge of the reachability relation shipped back to initiators.
// Nodes are entry items (objects) and exit items; OUT is encoded as src==0.
struct ReachEdge {
    ObjectId src;  // entry item (0 = outside source)
    ObjectId dst;  // entry item reachable from src via one exit hop

    auto operator<=>(const ReachEdge&) const = default;
};

struct MsgMarkBlack {
    TraceId trace;
    ExitItemId target;      // exit item on the receiving machine
    ObjectId requester;     // entry item whose back trace sent this
    std::set<TraceId> marks;
};

struct MsgBlackReply {
    TraceId trace;
    ExitItemId from_exit;
    ObjectId to_obj;
    bool live = false;
    std::vector<ReachEdge> edges;                       // transitive-reduced
    std::map<TraceId, std::set<ObjectId>> boundary;     // neighbor meetings
};

struct MsgNeighborQuery {
    TraceId from;
    TraceId to;
    std::set<ObjectId> objects;
};

struct MsgNeighborReply {
    TraceId from;
    TraceId to;
    std::set<ObjectId> outside_reachable;
};

struct MsgLivenessForward {
    TraceId from;
    TraceId to;
    std::set<ObjectId> outside_reachable;
};

struct MsgExchangeAck {  // acks DONE_BCAST engagement / LIVENESS_FORWARD
    TraceId from;
    TraceId to;
};

struct MsgReMarkBlack {
    TraceId trace;    // surviving trace
    TraceId failed;
    ObjectId target;  // black object previously owned by the failed trace
};

struct MsgReMarkBlackReply {
    TraceId trace;
    ObjectId at_object;
    TraceId attached_to;                               // first-wins owner
    bool fresh = false;                                // true when this request attached
    bool live = false;
    std::vector<ReachEdge> edges;
    std::map<TraceId, std::set<ObjectId>> boundary;
};

// ---------------------------------------------------------------------------
// Phase three
// ---------------------------------------------------------------------------

struct MsgSweep {  // garbage verdict, propagated along the mark-gray tree
    TraceId trace;
    ObjectId target;
    ObjectId sender_obj;
    MachineId sender_machine = 0;
};

using Payload = std::variant<
    MsgInsert, MsgDelete, MsgRefTransfer, MsgInvoke,
    MsgMarkGray, MsgGrayAck, MsgMarkWhite, MsgReparentReq, MsgReparentAck,
    MsgEncounter, MsgEncounterAck,
    MsgMergeReq, MsgMergeReply, MsgAcceptReq, MsgAcceptAck, MsgJoinReq,
    MsgJoin, MsgAccept, MsgGroupInstall, MsgGroupInstallAck,
    MsgCommitReq, MsgCommitReqAck, MsgCommit, MsgCommitAck,
    MsgMergeComplete, MsgMergeInquiry, MsgMergeInquiryAck, MsgMergeAbort,
    MsgFaultSet, MsgFaultConfirm, MsgToken, MsgDoneBcast,
    MsgReMarkGray, MsgReMarkGrayReply,
    MsgMarkBlack, MsgBlackReply,
    MsgNeighborQuery, MsgNeighborReply, MsgLivenessForward, MsgExchangeAck,
    MsgReMarkBlack, MsgReMarkBlackReply,
    MsgSweep>;

// Wire name of a payload, e.g. "MARK_GRAY". Used in logs, metrics and the
// protocol catalog exhaustiveness check.
const char* kind_name(const Payload& p);

// All message kind names, in variant order.
std::vector<std::string> all_kind_names();

// Short human-readable payload summary for the event log.
std::string summarize(const Payload& p);

}  // namespace dgc
