#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dgc/heap.hpp"
#include "dgc/local_gc.hpp"
#include "dgc/simnet.hpp"
#include "dgc/trace.hpp"

namespace dgc {

struct WorldConfig {
    uint64_t seed = 1;
    SimTime latency_max = 5;
    bool cyclic_tracer = true;   // heuristic may start traces
    bool sharper_scc = false;    // SCC-refined suspect estimate (default off)
    SimTime block_timeout = 0;   // 0 = 40 * latency_max
    bool invariant_checks = true;
};

struct Violation {
    SimTime time = 0;
    std::string kind;    // "safety" | "completeness" | "protocol" | "assert"
    std::string detail;
};

// A block parked until the blocking entry item whitens, is collected, or the
// timeout converts the verdict to live.
struct ParkedBlock {
    uint64_t id = 0;
    MachineId machine = 0;
    ObjectId blocking;               // entry item we wait on
    std::optional<SimMessage> msg;   // request to re-dispatch, or:
    std::optional<TraceId> begin_phase2;
    uint64_t timeout_event = 0;
    bool due = false;
};

// Pending mark-black aggregation at an exit item.
struct ExitBlackRecord {
    ExitItemId exit;
    ObjectId requester;
    TraceId trace;
    std::set<ObjectId> waiting;   // backlist entries not yet resolved
    std::set<ObjectId> backlist;  // resolved backlist (kept for sweep routing)
    bool live = false;
    std::vector<ReachEdge> edges;
    std::map<TraceId, std::set<ObjectId>> boundary;
    bool replied = false;
    bool swept = false;
};

// The whole simulated system: machines, network, collector protocol state,
// metrics and the ground-truth hooks the oracle uses. Single-threaded; one
// World per simulation.
class World {
  public:
    explicit World(WorldConfig cfg = {});

    MachineId add_machine();
    MachineState& machine(MachineId m) { return machines_.at(m); }
    const MachineState& machine(MachineId m) const { return machines_.at(m); }
    const std::map<MachineId, MachineState>& machines() const { return machines_; }
    SimNet& net() { return net_; }
    const WorldConfig& config() const { return cfg_; }

    // ---- mutator operations (core_graph) ----
    std::optional<ObjectId> create_object(MachineId m, bool rooted);
    bool mutate_local_edge(ObjectId src, ObjectId dst, bool add);
    // Creation when from == target.host, duplication otherwise. The insert is
    // stamped with the sender's clock; the locator travels as REF_TRANSFER.
    bool export_reference(MachineId from, ObjectId target, MachineId to,
                          ObjectId holder = {}, bool persistent = false);
    bool delete_remote_reference(MachineId m, ObjectId target);
    bool remote_invoke(MachineId m, ObjectId target, SimTime duration);
    bool attach_exit(ObjectId holder, ObjectId target);
    bool detach_exit(ObjectId holder, ObjectId target);
    bool set_root(ObjectId obj, bool rooted);
    void crash(MachineId m, SimTime t);

    // ---- scheduler ----
    bool step();  // one event; false when quiescent
    void run_until(SimTime t);
    // Runs until the queue drains or `limit` events, whichever first.
    void run_until_quiescent(uint64_t limit = 2'000'000);
    SimTime now() const { return net_.now(); }

    // ---- local collector ----
    LocalGcReport run_local_gc(MachineId m);
    std::vector<ObjectId> compute_exitlist(MachineId m, ObjectId entry);
    std::pair<std::set<ObjectId>, bool> compute_backlist(MachineId m, ObjectId exit_target);
    PrecursorResult compute_precursors(MachineId m, ObjectId exit_target);

    // ---- heuristic ----
    bool is_eligible(const MachineState& m, const EntryItem& e) const;

    // ---- introspection ----
    bool object_exists(ObjectId id) const;
    const EntryItem* find_entry(ObjectId id) const;
    std::set<ObjectId> all_objects() const;
    const std::vector<Violation>& violations() const { return violations_; }
    void add_violation(const std::string& kind, const std::string& detail);
    std::map<std::string, uint64_t>& counters() { return net_.counters(); }

    // scenario hook, invoked on EvScenarioStep
    std::function<void(size_t)> scenario_step;

    // test hook, invoked with every reclaimed object (oracle safety checks)
    std::function<void(ObjectId)> on_reclaim;

    // ---- protocol handlers (driven by step(); public for tests) ----
    void handle_message(MachineId m, const SimMessage& msg);
    void on_local_slot(MachineId m);
    void handle_failure_notification(MachineId m, MachineId failed);
    void start_trace(MachineId m, ObjectId entry);
    void check_invariants();

  private:
    // heap helpers
    Object* find_object(ObjectId id);
    EntryItem& ensure_entry(MachineState& m, ObjectId obj);
    Timestamp stamp(MachineState& m);
    void reclaim_object(MachineState& m, ObjectId id, const char* how);
    void delete_exit_item(MachineState& m, ObjectId target, bool notify);
    void materialize_exit(MachineState& m, const MsgRefTransfer& t);
    void subscribe(MachineId watcher, MachineId watched);

    // reflist
    void apply_insert(MachineState& m, const MsgInsert& ins);
    void apply_delete(MachineState& m, const MsgDelete& del);
    void reflist_member_gone(MachineState& m, EntryItem& e, MachineId member);

    // local collector internals
    void invalidate_exitlist(MachineState& m, ObjectId entry);
    void set_exitlist(MachineState& m, EntryItem& e, std::vector<ObjectId> exits);
    void exit_isolated_hook(MachineState& m, ObjectId exit_target, const LocalGcReport& rep);
    PrecursorResult precursors_with_report(MachineState& m, ObjectId exit_target,
                                           const LocalGcReport& rep);

    // barriers
    void purple_barrier(MachineState& m, EntryItem& e, const char* cause);
    void transfer_barrier(MachineState& m, ObjectId obj);

    // phase 1
    void handle_mark_gray(MachineState& m, const SimMessage& raw, const MsgMarkGray& mg);
    void handle_gray_ack(MachineState& m, const MsgGrayAck& ack);
    void handle_mark_white(MachineState& m, const MsgMarkWhite& mw);
    void handle_reparent_req(MachineState& m, const MsgReparentReq& rq);
    void handle_reparent_ack(MachineState& m, const MsgReparentAck& ra);
    void forward_gray(MachineState& m, EntryItem& e, const TraceId& trace);
    void entry_drained(MachineState& m, EntryItem& e);
    void ack_responsibles(MachineState& m, EntryItem& e, bool keep_parent);
    void whiten(MachineState& m, EntryItem& e, bool propagate, const char* why);
    void release_trace_state(MachineState& m, EntryItem& e);
    void maybe_whiten(MachineState& m, EntryItem& e);
    void trace_locally_done(MachineId m, const TraceId& id);

    // groups / token
    PartialTrace* find_trace(const TraceId& id);
    PartialTrace& trace_at(MachineId m, const TraceId& id);
    void send_to_trace(const TraceId& from, const TraceId& to, Payload p);
    void handle_encounter(MachineState& m, const MsgEncounter& ec);
    void handle_encounter_ack(MachineState& m, const MsgEncounterAck& ack);
    void handle_merge_req(MachineState& m, const MsgMergeReq& mr);
    void handle_merge_reply(MachineState& m, const MsgMergeReply& mr);
    void handle_accept_req(MachineState& m, const MsgAcceptReq& ar);
    void handle_accept_ack(MachineState& m, const MsgAcceptAck& aa);
    void handle_join_req(MachineState& m, const MsgJoinReq& jr);
    void handle_join(MachineState& m, const SimMessage& raw, const MsgJoin& jn);
    void handle_accept(MachineState& m, const MsgAccept& ac);
    void handle_group_install(MachineState& m, const MsgGroupInstall& gi);
    void handle_group_install_ack(MachineState& m, const MsgGroupInstallAck& ack);
    void handle_commit_req(MachineState& m, const MsgCommitReq& cr);
    void handle_commit_req_ack(MachineState& m, const MsgCommitReqAck& cra);
    void handle_commit(MachineState& m, const MsgCommit& cm);
    void handle_commit_ack(MachineState& m, const MsgCommitAck& ack);
    void handle_merge_complete(MachineState& m, const MsgMergeComplete& mc);
    void handle_merge_inquiry(MachineState& m, const MsgMergeInquiry& mi);
    void handle_merge_inquiry_ack(MachineState& m, const MsgMergeInquiryAck& ack);
    void handle_merge_abort(MachineState& m, const MsgMergeAbort& ab);
    void handle_fault_set(MachineState& m, const SimMessage& raw, const MsgFaultSet& fs);
    void handle_fault_confirm(MachineState& m, const MsgFaultConfirm& fc);
    void handle_token(MachineState& m, const MsgToken& tk);
    void handle_done_bcast(MachineState& m, const MsgDoneBcast& db);
    void handle_re_mark_gray(MachineState& m, const SimMessage& raw, const MsgReMarkGray& rg);
    void handle_re_mark_gray_reply(MachineState& m, const MsgReMarkGrayReply& rr);

    void start_merge(PartialTrace& x, const TraceId& encountered);
    void leader_service_queues(PartialTrace& leader);
    void start_install(PartialTrace& leader, std::set<TraceId> union_group, const TraceId& peer,
                       bool losing);
    void continue_install(PartialTrace& leader);
    void finish_install(PartialTrace& t);
    void install_done_check(PartialTrace& leader);
    void mint_token(PartialTrace& leader, int phase);
    void advance_token(PartialTrace& t);
    void token_at_leader(PartialTrace& leader, MsgToken tk);
    void maybe_broadcast_done(PartialTrace& leader);
    void report_fault(PartialTrace& t);
    void acting_leader_check(PartialTrace& t);
    void apply_fault_confirm(PartialTrace& t, const std::set<TraceId>& faults);
    void consensus_changed(PartialTrace& t);
    void report_reissue_if_needed(PartialTrace& t);

    // phase 2
    void begin_phase2(MachineId m, const TraceId& id, bool timeout_live);
    void handle_mark_black(MachineState& m, const SimMessage& raw, const MsgMarkBlack& mb,
                           bool timeout_live);
    void handle_black_reply(MachineState& m, const MsgBlackReply& br);
    void entry_black_resolved(MachineState& m, EntryItem& e);
    void exit_record_resolved(MachineState& m, ExitBlackRecord& rec);
    void contribute_to_exit(MachineState& m, ExitBlackRecord& rec, bool live,
                            const std::vector<ReachEdge>& edges,
                            const std::map<TraceId, std::set<ObjectId>>& boundary,
                            ObjectId resolved_entry);
    void trace_phase2_done(MachineId m, const TraceId& id);
    void begin_exchange(PartialTrace& t);
    void handle_neighbor_query(MachineState& m, const MsgNeighborQuery& q);
    void handle_neighbor_reply(MachineState& m, const MsgNeighborReply& r);
    void handle_liveness_forward(MachineState& m, const MsgLivenessForward& f);
    void handle_exchange_ack(MachineState& m, const MsgExchangeAck& a);
    void exchange_learn(PartialTrace& t, const std::set<ObjectId>& outside);
    void exchange_quiesce_check(PartialTrace& t);
    void handle_re_mark_black(MachineState& m, const MsgReMarkBlack& rmb);
    void handle_re_mark_black_reply(MachineState& m, const MsgReMarkBlackReply& rr);
    std::set<ObjectId> outside_closure(const PartialTrace& t) const;

    // sweep
    void sweep_trace(MachineId m, const TraceId& id, bool live);
    void handle_sweep(MachineState& m, const MsgSweep& sw);
    void sweep_exit_record(MachineState& m, ExitBlackRecord& rec, const TraceId& trace);
    bool sweep_keep(MachineState& m, const EntryItem& e);
    void finish_trace(MachineId m, const TraceId& id, bool live, const char* outcome);

    // heuristic
    void record_request_color(MachineState& m, EntryItem& e, MachineId member, Color c,
                              const TraceId& by);
    void init_entrycolors(EntryItem& e);
    void on_trace_end(MachineState& m, EntryItem& e);
    void on_inactive_progress(MachineState& m, EntryItem& e);
    void on_remote_failure(MachineState& m, EntryItem& e, MachineId member, bool persistent);
    uint64_t heuristic_guard_begin();
    void heuristic_guard_end(uint64_t before, const char* hook);

    // parks
    void park_block(MachineId m, ObjectId blocking, std::optional<SimMessage> msg,
                    std::optional<TraceId> begin);
    void resume_parks(MachineId m, ObjectId blocking);
    void run_due_parks(MachineId m);
    void resolve_park_timeout(MachineId m, uint64_t park_id);

    // fault plumbing
    void machine_failed_cleanup(MachineState& m, MachineId failed);
    void phase1_peer_failed(MachineState& m, MachineId failed);
    void trace_peer_failed(MachineState& m, MachineId failed);

    WorldConfig cfg_;
    SimNet net_;
    std::map<MachineId, MachineState> machines_;
    MachineId next_machine_ = 1;
    std::vector<Violation> violations_;
    std::map<MachineId, std::map<uint64_t, ParkedBlock>> parks_;
    std::map<MachineId, std::vector<ExitBlackRecord>> exit_records_;
    uint64_t next_park_ = 1;
    uint64_t token_epochs_ = 1;

    friend class Oracle;
};

// Smallest digraph with the same transitive closure; strongly connected
// components are condensed first, each represented as one cycle.
std::vector<ReachEdge> transitive_reduce(const std::vector<ReachEdge>& edges);
std::set<std::pair<ObjectId, ObjectId>> transitive_closure(const std::vector<ReachEdge>& edges);

}  // namespace dgc
