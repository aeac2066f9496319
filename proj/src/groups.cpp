#include <algorithm>

#include "dgc/world.hpp"

namespace dgc {

PartialTrace* World::find_trace(const TraceId& id) {
    auto mit = machines_.find(id.initiator.host);
    if (mit == machines_.end()) return nullptr;
    auto tit = mit->second.traces.find(id);
    return tit == mit->second.traces.end() ? nullptr : &tit->second;
}

PartialTrace& World::trace_at(MachineId m, const TraceId& id) {
    return machines_.at(m).traces.at(id);
}

void World::send_to_trace(const TraceId& from, const TraceId& to, Payload p) {
    if (from.initiator.host == to.initiator.host) {
        // local: loop through the network anyway for a uniform event order
        net_.send(from.initiator.host, to.initiator.host, std::move(p));
    } else {
        net_.send(from.initiator.host, to.initiator.host, std::move(p));
    }
}

namespace {
bool finished_phase1(const PartialTrace& t) {
    return t.phase != TracePhase::mark_gray;
}
bool defunct_phase(const PartialTrace& t) {
    return t.phase == TracePhase::completed || t.phase == TracePhase::dissolved;
}
}  // namespace

// ---------------------------------------------------------------------------
// encounters
// ---------------------------------------------------------------------------

void World::handle_encounter(MachineState& m, const MsgEncounter& ec) {
    PartialTrace* t = find_trace(ec.requesting);
    if (!t || defunct_phase(*t)) {
        net_.send(m.id, ec.at_object.host, MsgEncounterAck{ec.requesting, ec.at_object, ec.requester});
        return;
    }
    t->neighbors[ec.owner].insert(ec.at_object);
    if (t->group.count(ec.owner) || t->done_traces.count(ec.owner) || t->defunct.count(ec.owner)) {
        net_.send(m.id, ec.at_object.host, MsgEncounterAck{ec.requesting, ec.at_object, ec.requester});
        return;
    }
    t->pending_ecs[ec.owner].push_back({ec.at_object, ec.requester});
    if (!t->mr_outstanding.count(ec.owner)) {
        t->mr_outstanding.insert(ec.owner);
        send_to_trace(t->id, ec.owner, MsgMergeReq{t->id, ec.owner, t->leader});
        subscribe(m.id, ec.owner.initiator.host);
    }
}

void World::handle_encounter_ack(MachineState& m, const MsgEncounterAck& ack) {
    auto eit = m.entries.find(ack.at_object);
    if (eit == m.entries.end()) return;
    EntryItem& e = eit->second;
    for (auto& r : e.responsibles) {
        if (r.obj == ack.requester && !r.acked && !r.failed) {
            net_.send(m.id, r.machine, MsgGrayAck{ack.requesting, e.obj, r.obj});
            r.acked = true;
        }
    }
}

// release queued encounter acks for `owner` after the merge question settles
static void flush_pending_ecs(World& w, SimNet& net, MachineState& m, PartialTrace& t,
                              const TraceId& owner) {
    auto it = t.pending_ecs.find(owner);
    if (it == t.pending_ecs.end()) return;
    for (auto& [at_object, requester] : it->second)
        net.send(m.id, at_object.host, MsgEncounterAck{t.id, at_object, requester});
    t.pending_ecs.erase(it);
}

// ---------------------------------------------------------------------------
// merge handshake
// ---------------------------------------------------------------------------

void World::handle_merge_req(MachineState& m, const MsgMergeReq& mr) {
    PartialTrace* t = find_trace(mr.to);
    if (!t || defunct_phase(*t) || finished_phase1(*t)) {
        send_to_trace(mr.to, mr.from, MsgMergeReply{mr.to, mr.from, true, {}});
        return;
    }
    // remember the pending accept for reissue after elections
    bool have = false;
    for (auto& a : t->my_accepts)
        if (a.requester_leader == mr.from_leader) have = true;
    if (!have) t->my_accepts.push_back({mr.from_leader, false});
    t->mr_reply_to[mr.from_leader].insert(mr.from);
    send_to_trace(t->id, t->leader, MsgAcceptReq{t->id, t->leader, mr.from_leader});
}

void World::handle_merge_reply(MachineState& m, const MsgMergeReply& mr) {
    PartialTrace* t = find_trace(mr.to);
    if (!t || defunct_phase(*t)) return;
    t->mr_outstanding.erase(mr.from);
    if (mr.done) {
        // finished trace: no need to wait for it
        t->done_traces.insert(mr.from);
        flush_pending_ecs(*this, net_, m, *t, mr.from);
        return;
    }
    // the two traces must come to a consensus on the new group
    t->dependents.insert(mr.from);
    flush_pending_ecs(*this, net_, m, *t, mr.from);
    bool have = false;
    for (auto& j : t->my_joins)
        if (j.target_leader == mr.leader) have = true;
    if (!have && !t->group.count(mr.leader)) {
        t->my_joins.push_back({mr.leader});
        send_to_trace(t->id, t->leader, MsgJoinReq{t->id, t->leader, mr.leader});
    }
}

void World::handle_accept_req(MachineState& m, const MsgAcceptReq& ar) {
    PartialTrace* t = find_trace(ar.to);
    if (!t || defunct_phase(*t)) return;
    if (!t->is_leader()) {  // leadership moved: forward once
        send_to_trace(t->id, t->leader, MsgAcceptReq{ar.from, t->leader, ar.requester_leader});
        return;
    }
    if (t->install_active) {
        SimMessage raw;
        raw.src = ar.from.initiator.host;
        raw.dst = m.id;
        raw.payload = ar;
        t->deferred.push_back(raw);
        return;
    }
    bool have = false;
    for (auto& a : t->accepts) {
        if (a.requester_leader == ar.requester_leader) {
            a.via.insert(ar.from);
            have = true;
        }
    }
    if (!have) {
        AcceptRecord rec;
        rec.requester_leader = ar.requester_leader;
        rec.via.insert(ar.from);
        t->accepts.push_back(rec);
    }
    leader_service_queues(*t);
}

void World::handle_accept_ack(MachineState& m, const MsgAcceptAck& aa) {
    PartialTrace* t = find_trace(aa.to);
    if (!t || defunct_phase(*t)) return;
    for (auto& a : t->my_accepts)
        if (a.requester_leader == aa.requester_leader) a.acked = true;
    // tell the requesting trace(s) who our leader is
    auto it = t->mr_reply_to.find(aa.requester_leader);
    if (it == t->mr_reply_to.end()) return;
    for (const TraceId& requester : it->second)
        send_to_trace(t->id, requester, MsgMergeReply{t->id, requester, false, t->leader});
    t->mr_reply_to.erase(it);
}

void World::handle_join_req(MachineState& m, const MsgJoinReq& jr) {
    PartialTrace* t = find_trace(jr.to);
    if (!t || defunct_phase(*t)) return;
    if (!t->is_leader()) {
        send_to_trace(t->id, t->leader, MsgJoinReq{jr.from, t->leader, jr.target_leader});
        return;
    }
    if (t->group.count(jr.target_leader)) return;  // already merged
    for (auto& j : t->joins)
        if (j.target_leader == jr.target_leader) return;
    t->joins.push_back({jr.target_leader});
    leader_service_queues(*t);
}

// Deadlock-avoidance: a join is processed only if the leader has no
// acknowledged accepts or the join's id is <= the smallest acknowledged
// accept; accepts are acknowledged one at a time and only with no joins
// pending.
void World::leader_service_queues(PartialTrace& t) {
    if (!t.is_leader() || t.install_active || defunct_phase(t)) return;

    std::optional<TraceId> min_acked;
    bool any_acked = false;
    for (const auto& a : t.accepts) {
        if (a.acked) {
            any_acked = true;
            if (!min_acked || a.requester_leader < *min_acked) min_acked = a.requester_leader;
        }
    }

    if (!t.joins.empty() && !t.join_inflight) {
        if (!any_acked || t.id <= *min_acked) {
            const JoinRecord& j = t.joins.front();
            if (t.group.count(j.target_leader)) {
                t.joins.erase(t.joins.begin());
                leader_service_queues(t);
                return;
            }
            t.join_inflight = true;
            send_to_trace(t.id, j.target_leader, MsgJoin{t.id, j.target_leader, t.group});
            subscribe(t.id.initiator.host, j.target_leader.initiator.host);
            return;
        }
    }

    if (t.joins.empty() && !any_acked && !t.accepts.empty()) {
        // smallest unacked accept
        AcceptRecord* best = nullptr;
        for (auto& a : t.accepts)
            if (!a.acked && (!best || a.requester_leader < best->requester_leader)) best = &a;
        if (best) {
            best->acked = true;
            for (const TraceId& via : best->via)
                send_to_trace(t.id, via, MsgAcceptAck{t.id, via, best->requester_leader});
        }
    }
}

void World::handle_join(MachineState& m, const SimMessage& raw, const MsgJoin& jn) {
    PartialTrace* t = find_trace(jn.to);
    if (!t || defunct_phase(*t)) return;
    if (!t->is_leader()) {  // forwarded at most once in practice
        send_to_trace(t->id, t->leader, MsgJoin{jn.from, t->leader, jn.group});
        return;
    }
    if (t->install_active) {
        t->deferred.push_back(raw);
        return;
    }
    // consume the matching acknowledged accept: its requester leads (or is a
    // member of) the joining group
    for (auto it = t->accepts.begin(); it != t->accepts.end(); ++it) {
        if (jn.group.count(it->requester_leader)) {
            t->accepts.erase(it);
            break;
        }
    }
    std::set<TraceId> union_group = t->group;
    union_group.insert(jn.group.begin(), jn.group.end());
    send_to_trace(t->id, jn.from, MsgAccept{t->id, jn.from, t->group});
    start_install(*t, union_group, jn.from, /*joiner=*/false);
}

void World::handle_accept(MachineState& m, const MsgAccept& ac) {
    PartialTrace* t = find_trace(ac.to);
    if (!t || defunct_phase(*t)) return;
    t->join_inflight = false;
    // drop the satisfied join (the replier is a member of the target group)
    for (auto it = t->joins.begin(); it != t->joins.end(); ++it) {
        if (ac.group.count(it->target_leader) || ac.from == it->target_leader) {
            t->joins.erase(it);
            break;
        }
    }
    std::set<TraceId> union_group = t->group;
    union_group.insert(ac.group.begin(), ac.group.end());
    start_install(*t, union_group, ac.from, /*joiner=*/true);
}

// ---------------------------------------------------------------------------
// two-step fault-tolerant install
// ---------------------------------------------------------------------------

void World::start_install(PartialTrace& t, std::set<TraceId> union_group, const TraceId& peer,
                          bool joiner) {
    t.install_active = true;
    t.install_joiner = joiner;
    t.in_consensus = false;
    t.old_group = t.group;
    t.merge_list = std::move(union_group);
    t.merge_state = MergeState::staged;
    t.peer_leader = peer;
    t.losing_leader = (*t.merge_list.begin() != t.id);
    t.cr_sent = t.cr_received = t.cr_acked = false;
    t.cm_phase = false;
    t.gi_pending.clear();
    t.cm_pending.clear();
    for (const TraceId& z : t.old_group)
        if (z != t.id) t.gi_pending.insert(z);
    for (const TraceId& z : t.merge_list) subscribe(t.id.initiator.host, z.initiator.host);
    net_.log_line(t.id.initiator.host, "MERGE_START",
                  to_string(t.id) + " n=" + std::to_string(t.merge_list.size()));
    continue_install(t);
}

void World::continue_install(PartialTrace& t) {
    if (!t.install_active) return;
    if (!t.cm_phase) {
        // step 1: GI in increasing id order, one at a time
        if (t.gi_inflight) return;
        // skip members on machines known failed
        MachineState& m = machines_.at(t.id.initiator.host);
        while (!t.gi_pending.empty() &&
               m.known_failed.count(t.gi_pending.begin()->initiator.host)) {
            t.gi_pending.erase(t.gi_pending.begin());
        }
        if (!t.gi_pending.empty()) {
            TraceId next = *t.gi_pending.begin();
            t.gi_inflight = next;
            send_to_trace(t.id, next, MsgGroupInstall{t.id, next, t.merge_list});
            return;
        }
        // own-side distribution complete: CR handshake
        if (t.install_joiner && !t.cr_sent && t.peer_leader) {
            t.cr_sent = true;
            send_to_trace(t.id, *t.peer_leader, MsgCommitReq{t.id, *t.peer_leader});
            return;
        }
        if (!t.install_joiner && t.cr_received && !t.cr_acked && t.peer_leader) {
            t.cr_acked = true;
            send_to_trace(t.id, *t.peer_leader, MsgCommitReqAck{t.id, *t.peer_leader});
            // the second step begins now
            t.cm_phase = true;
            for (const TraceId& z : t.old_group)
                if (z != t.id) t.cm_pending.insert(z);
            continue_install(t);
        }
        return;
    }
    // step 2: CM in descending id order, one at a time
    if (t.cm_inflight) return;
    MachineState& m = machines_.at(t.id.initiator.host);
    while (!t.cm_pending.empty() &&
           m.known_failed.count(std::prev(t.cm_pending.end())->initiator.host)) {
        t.cm_pending.erase(std::prev(t.cm_pending.end()));
    }
    if (!t.cm_pending.empty()) {
        TraceId next = *std::prev(t.cm_pending.end());
        t.cm_inflight = next;
        send_to_trace(t.id, next, MsgCommit{t.id, next});
        return;
    }
    finish_install(t);
}

void World::handle_group_install(MachineState& m, const MsgGroupInstall& gi) {
    PartialTrace* t = find_trace(gi.to);
    if (t && !defunct_phase(*t)) {
        t->merge_list = gi.merge_list;
        t->merge_state = MergeState::staged;
        t->in_consensus = false;
        for (const TraceId& z : t->merge_list) subscribe(m.id, z.initiator.host);
    }
    send_to_trace(gi.to, gi.from, MsgGroupInstallAck{gi.to, gi.from});
}

void World::handle_group_install_ack(MachineState& m, const MsgGroupInstallAck& ack) {
    PartialTrace* t = find_trace(ack.to);
    if (!t || !t->install_active) return;
    if (t->gi_inflight && *t->gi_inflight == ack.from) {
        t->gi_pending.erase(ack.from);
        t->gi_inflight.reset();
    }
    continue_install(*t);
}

void World::handle_commit_req(MachineState& m, const MsgCommitReq& cr) {
    PartialTrace* t = find_trace(cr.to);
    if (!t || defunct_phase(*t)) return;
    t->cr_received = true;
    if (t->install_active) continue_install(*t);
}

void World::handle_commit_req_ack(MachineState& m, const MsgCommitReqAck& cra) {
    PartialTrace* t = find_trace(cra.to);
    if (!t || !t->install_active || t->cm_phase) return;
    t->cm_phase = true;
    for (const TraceId& z : t->old_group)
        if (z != t->id) t->cm_pending.insert(z);
    continue_install(*t);
}

void World::handle_commit(MachineState& m, const MsgCommit& cm) {
    PartialTrace* t = find_trace(cm.to);
    if (t && !defunct_phase(*t) && t->merge_state == MergeState::staged) {
        t->group = t->merge_list;
        t->merge_state = MergeState::installed;
        t->leader = *t->group.begin();
        net_.log_line(m.id, "GROUP_INSTALLED",
                      to_string(t->id) + " leader=" + to_string(t->leader));
    }
    send_to_trace(cm.to, cm.from, MsgCommitAck{cm.to, cm.from});
}

void World::handle_commit_ack(MachineState& m, const MsgCommitAck& ack) {
    PartialTrace* t = find_trace(ack.to);
    if (!t || !t->install_active) return;
    if (t->cm_inflight && *t->cm_inflight == ack.from) {
        t->cm_pending.erase(ack.from);
        t->cm_inflight.reset();
    }
    continue_install(*t);
}

void World::finish_install(PartialTrace& t) {
    t.group = t.merge_list;
    t.merge_state = MergeState::installed;
    TraceId new_leader = *t.group.begin();
    bool lost = new_leader != t.id;
    t.leader = new_leader;
    t.install_active = false;
    t.gi_inflight.reset();
    t.cm_inflight.reset();
    t.peer_leader.reset();
    if (lost) {
        // hand outstanding requests to the new leader
        MsgMergeComplete mc;
        mc.from = t.id;
        mc.to = new_leader;
        for (const auto& j : t.joins)
            if (!t.group.count(j.target_leader)) mc.join_targets.push_back(j.target_leader);
        for (const auto& a : t.accepts)
            if (!t.group.count(a.requester_leader))
                mc.accepts.push_back({a.requester_leader, a.acked});
        send_to_trace(t.id, new_leader, mc);
        t.joins.clear();
        t.accepts.clear();
    } else {
        t.awaiting_mc = true;
    }
    // requests satisfied by the merge disappear
    std::erase_if(t.joins, [&](const JoinRecord& j) { return t.group.count(j.target_leader); });
    std::erase_if(t.accepts,
                  [&](const AcceptRecord& a) { return t.group.count(a.requester_leader); });
    std::erase_if(t.my_joins, [&](const JoinRecord& j) { return t.group.count(j.target_leader); });
    std::erase_if(t.my_accepts,
                  [&](const AcceptRecord& a) { return t.group.count(a.requester_leader); });
    net_.log_line(t.id.initiator.host, "MERGE_DONE",
                  to_string(t.id) + " leader=" + to_string(t.leader));
    std::vector<SimMessage> deferred;
    deferred.swap(t.deferred);
    for (const auto& msg : deferred) handle_message(t.id.initiator.host, msg);
    if (!lost) {
        consensus_changed(t);
    } else {
        t.in_consensus = true;  // member view; the new leader coordinates
        t.merge_state = MergeState::none;
        t.merge_list.clear();
    }
}

void World::handle_merge_complete(MachineState& m, const MsgMergeComplete& mc) {
    PartialTrace* t = find_trace(mc.to);
    if (!t || defunct_phase(*t)) return;
    for (const TraceId& target : mc.join_targets) {
        if (t->group.count(target)) continue;
        bool have = false;
        for (auto& j : t->joins)
            if (j.target_leader == target) have = true;
        if (!have) t->joins.push_back({target});
    }
    for (const auto& [requester, acked] : mc.accepts) {
        if (t->group.count(requester)) continue;
        bool have = false;
        for (auto& a : t->accepts) {
            if (a.requester_leader == requester) {
                a.acked = a.acked || acked;
                have = true;
            }
        }
        if (!have) {
            AcceptRecord rec;
            rec.requester_leader = requester;
            rec.acked = acked;
            t->accepts.push_back(rec);
        }
    }
    t->awaiting_mc = false;
    consensus_changed(*t);
}

void World::consensus_changed(PartialTrace& t) {
    if (!t.is_leader()) return;
    if (t.install_active || t.awaiting_mc || !t.fault_set.empty()) return;
    t.in_consensus = true;
    t.merge_state = MergeState::none;
    t.merge_list.clear();
    net_.log_line(t.id.initiator.host, "CONSENSUS",
                  to_string(t.id) + " n=" + std::to_string(t.group.size()));
    // group changed: previous token is stale; mint a fresh one
    mint_token(t, finished_phase1(t) ? 2 : 1);
    leader_service_queues(t);
}

// ---------------------------------------------------------------------------
// merge inquiry / abort (peer-leader failure recovery)
// ---------------------------------------------------------------------------

void World::handle_merge_inquiry(MachineState& m, const MsgMergeInquiry& mi) {
    PartialTrace* t = find_trace(mi.to);
    bool merging = t && !defunct_phase(*t) && t->merge_state != MergeState::none &&
                   t->merge_list.count(mi.from);
    send_to_trace(mi.to, mi.from, MsgMergeInquiryAck{mi.to, mi.from, merging});
}

void World::handle_merge_inquiry_ack(MachineState& m, const MsgMergeInquiryAck& ack) {
    PartialTrace* t = find_trace(ack.to);
    if (!t || defunct_phase(*t)) return;
    if (!ack.merging) {
        // peer side aborted (or never staged): abort our side
        handle_merge_abort(m, MsgMergeAbort{ack.from, t->id});
        return;
    }
    // peer side resumes; re-drive the commit handshake toward the new peer
    t->peer_leader = ack.from;
    if (t->install_active && t->install_joiner) {
        t->cr_sent = false;
        continue_install(*t);
    }
}

void World::handle_merge_abort(MachineState& m, const MsgMergeAbort& ab) {
    PartialTrace* t = find_trace(ab.to);
    if (!t || defunct_phase(*t)) return;
    if (t->merge_state == MergeState::installed) return;  // too late to abort
    net_.log_line(m.id, "MERGE_ABORT", to_string(t->id));
    bool was_leader_install = t->install_active;
    std::set<TraceId> old_targets;
    if (was_leader_install) old_targets = t->old_group;
    t->merge_list.clear();
    t->merge_state = MergeState::none;
    t->install_active = false;
    t->gi_inflight.reset();
    t->cm_inflight.reset();
    t->peer_leader.reset();
    t->gi_pending.clear();
    t->cm_pending.clear();
    if (was_leader_install) {
        for (const TraceId& z : old_targets)
            if (z != t->id) send_to_trace(t->id, z, MsgMergeAbort{t->id, z});
    }
    if (t->is_leader()) consensus_changed(*t);
    else t->in_consensus = true;
}

// ---------------------------------------------------------------------------
// fault consensus
// ---------------------------------------------------------------------------

void World::report_fault(PartialTrace& t) {
    MachineState& m = machines_.at(t.id.initiator.host);
    // acting leader: smallest group member not known faulty
    TraceId acting = t.id;
    for (const TraceId& z : t.group) {
        if (t.fault_set.count(z) || m.known_failed.count(z.initiator.host)) continue;
        acting = z;
        break;
    }
    t.in_consensus = false;
    MsgFaultSet fs;
    fs.from = t.id;
    fs.to = acting;
    fs.faults = t.fault_set;
    fs.has_token = t.has_token;
    fs.merge_state = t.merge_state;
    for (const auto& j : t.my_joins) fs.join_targets.push_back(j.target_leader);
    for (const auto& a : t.my_accepts) fs.accepts.push_back({a.requester_leader, a.acked});
    if (acting == t.id) {
        t.fault_reports[t.id] = fs;
        acting_leader_check(t);
    } else {
        send_to_trace(t.id, acting, fs);
    }
}

void World::handle_fault_set(MachineState& m, const SimMessage& raw, const MsgFaultSet& fs) {
    PartialTrace* t = find_trace(fs.to);
    if (!t || defunct_phase(*t)) return;
    // not the acting leader in our own view: forward toward smaller ids
    TraceId acting = t->id;
    for (const TraceId& z : t->group) {
        if (t->fault_set.count(z) || m.known_failed.count(z.initiator.host)) continue;
        acting = z;
        break;
    }
    if (acting != t->id) {
        MsgFaultSet fwd = fs;
        fwd.to = acting;
        send_to_trace(t->id, acting, fwd);
        return;
    }
    t->fault_reports[fs.from] = fs;
    // learn faults we have not detected ourselves yet (confirmation still
    // waits for our own notification to arrive)
    acting_leader_check(*t);
}

void World::acting_leader_check(PartialTrace& t) {
    if (t.fault_set.empty()) return;
    MachineState& m = machines_.at(t.id.initiator.host);

    // finish any install work first so membership changes serialize
    if (t.install_active) {
        continue_install(t);
        if (t.install_active) return;
    }

    // merge recovery when the original leader died mid-install
    bool any_installed = t.merge_state == MergeState::installed;
    bool any_staged = t.merge_state == MergeState::staged;
    for (const auto& [from, rep] : t.fault_reports) {
        if (rep.merge_state == MergeState::installed) any_installed = true;
        if (rep.merge_state == MergeState::staged) any_staged = true;
    }
    if (any_installed && t.merge_state == MergeState::staged) {
        // step 1 completed globally; push our own install to completion
        t.group = t.merge_list;
        t.merge_state = MergeState::installed;
        t.leader = *t.group.begin();
        if (!t.is_leader()) {
            // defer to the new leader's confirmation round
            report_fault(t);
            return;
        }
    }

    std::set<TraceId> needed;
    for (const TraceId& z : t.group) {
        if (t.fault_set.count(z)) continue;
        if (m.known_failed.count(z.initiator.host)) continue;
        needed.insert(z);
    }
    for (const TraceId& z : needed) {
        auto it = t.fault_reports.find(z);
        if (it == t.fault_reports.end() || it->second.faults != t.fault_set) return;
    }

    // all non-faulty members reported matching fault sets: confirm
    std::set<TraceId> faults = t.fault_set;
    bool token_lost = true;
    bool token_tainted = false;
    for (const auto& [from, rep] : t.fault_reports) {
        if (rep.has_token && needed.count(from)) token_lost = false;
    }
    if (t.has_token) token_lost = false;
    for (const TraceId& f : faults) {
        if (std::find(t.token.done.begin(), t.token.done.end(), f) != t.token.done.end())
            token_tainted = true;
        if (std::find(t.token.next.begin(), t.token.next.end(), f) != t.token.next.end())
            token_tainted = true;
    }

    // rebuild joins/accepts from the reissued requests
    if (any_staged && t.merge_state == MergeState::none) {
        // no survivor holds a merge list on our side: cleanly aborted
    }
    for (const auto& [from, rep] : t.fault_reports) {
        if (!needed.count(from)) continue;
        for (const TraceId& target : rep.join_targets) {
            if (t.group.count(target) || faults.count(target)) continue;
            bool have = false;
            for (auto& j : t.joins)
                if (j.target_leader == target) have = true;
            if (!have) t.joins.push_back({target});
        }
        for (const auto& [requester, acked] : rep.accepts) {
            if (t.group.count(requester) || faults.count(requester)) continue;
            bool have = false;
            for (auto& a : t.accepts)
                if (a.requester_leader == requester) have = true;
            if (!have) {
                AcceptRecord rec;
                rec.requester_leader = requester;
                rec.acked = acked;
                t.accepts.push_back(rec);
            }
        }
    }

    for (const TraceId& z : needed) {
        if (z == t.id) continue;
        send_to_trace(t.id, z, MsgFaultConfirm{t.id, z, faults});
    }
    apply_fault_confirm(t, faults);
    (void)token_lost;
    (void)token_tainted;
}

void World::handle_fault_confirm(MachineState& m, const MsgFaultConfirm& fc) {
    PartialTrace* t = find_trace(fc.to);
    if (!t || defunct_phase(*t)) return;
    apply_fault_confirm(*t, fc.faults);
}

void World::apply_fault_confirm(PartialTrace& t, const std::set<TraceId>& faults) {
    for (const TraceId& f : faults) {
        t.group.erase(f);
        t.fault_set.erase(f);
        t.merge_list.erase(f);
        t.dependents.erase(f);
        t.mr_outstanding.erase(f);
        t.defunct.insert(f);
        flush_pending_ecs(*this, net_, machines_.at(t.id.initiator.host), t, f);
    }
    t.fault_reports.clear();
    if (t.group.empty()) t.group = {t.id};
    t.leader = *t.group.begin();
    std::erase_if(t.joins, [&](const JoinRecord& j) { return faults.count(j.target_leader); });
    std::erase_if(t.accepts,
                  [&](const AcceptRecord& a) { return faults.count(a.requester_leader); });
    std::erase_if(t.my_joins, [&](const JoinRecord& j) { return faults.count(j.target_leader); });
    std::erase_if(t.my_accepts,
                  [&](const AcceptRecord& a) { return faults.count(a.requester_leader); });
    net_.log_line(t.id.initiator.host, "FAULT_CONFIRM",
                  to_string(t.id) + " n=" + std::to_string(faults.size()));

    // re-adopt the regions owned by failed traces we met
    t.fault_tainted = true;
    for (const TraceId& f : faults) {
        auto nit = t.neighbors.find(f);
        if (nit == t.neighbors.end()) continue;
        if (!finished_phase1(t)) {
            for (ObjectId obj : nit->second) {
                net_.send(t.id.initiator.host, obj.host, MsgReMarkGray{t.id, f, obj, {}, 0});
            }
        } else if (t.phase == TracePhase::mark_black || t.phase == TracePhase::await_verdict ||
                   t.phase == TracePhase::exchanging) {
            for (ObjectId obj : nit->second) {
                net_.send(t.id.initiator.host, obj.host, MsgReMarkBlack{t.id, f, obj});
                t.rmb_outstanding.insert(obj);
            }
            if (t.phase == TracePhase::exchanging) t.phase = TracePhase::await_verdict;
        }
        t.neighbors.erase(f);
    }

    if (t.is_leader()) {
        t.in_consensus = t.fault_set.empty() && !t.install_active && !t.awaiting_mc;
        if (t.in_consensus) {
            // the token is discarded and a fresh one minted after any fault
            mint_token(t, finished_phase1(t) ? 2 : 1);
            leader_service_queues(t);
        }
    } else {
        t.in_consensus = t.fault_set.empty();
        t.has_token = false;  // stale token, if any, is discarded
        if (t.in_consensus) report_reissue_if_needed(t);
    }
}

void World::report_reissue_if_needed(PartialTrace& t) {
    // leadership may have changed: reissue outstanding requests
    if (t.my_joins.empty() && t.my_accepts.empty()) return;
    for (const auto& j : t.my_joins)
        send_to_trace(t.id, t.leader, MsgJoinReq{t.id, t.leader, j.target_leader});
    for (const auto& a : t.my_accepts)
        send_to_trace(t.id, t.leader, MsgAcceptReq{t.id, t.leader, a.requester_leader});
}

// ---------------------------------------------------------------------------
// termination token
// ---------------------------------------------------------------------------

void World::mint_token(PartialTrace& leader, int phase) {
    leader.token = TokenData{};
    leader.token.epoch = ++token_epochs_;
    leader.has_token = true;
    leader.token_epoch_seen = leader.token.epoch;
    leader.token_phase = phase;
    net_.log_line(leader.id.initiator.host, "TOKEN_MINT",
                  to_string(leader.id) + " phase=" + std::to_string(phase));
    advance_token(leader);
}

static bool token_ready(const PartialTrace& t, int phase) {
    if (phase == 1) return t.locally_done && t.rg_dependents.empty();
    return (t.phase == TracePhase::await_verdict || t.phase == TracePhase::completed) &&
           t.rmb_outstanding.empty();
}

void World::advance_token(PartialTrace& t) {
    if (!t.has_token) return;
    int phase = t.token_phase;
    if (!token_ready(t, phase)) return;  // hold the token until locally done

    auto in_list = [](const std::vector<TraceId>& v, const TraceId& id) {
        return std::find(v.begin(), v.end(), id) != v.end();
    };
    if (!in_list(t.token.done, t.id)) {
        t.token.done.push_back(t.id);
        if (phase == 2) t.token.outside[t.id] = t.outside_flag || t.verdict_live;
        for (const TraceId& d : t.dependents)
            if (!in_list(t.token.done, d) && !in_list(t.token.next, d)) t.token.next.push_back(d);
    }
    while (!t.token.next.empty() &&
           (in_list(t.token.done, t.token.next.front()) || t.token.next.front() == t.id)) {
        t.token.next.erase(t.token.next.begin());
    }
    if (!t.token.next.empty()) {
        TraceId to = t.token.next.front();
        t.token.next.erase(t.token.next.begin());
        MsgToken tk{t.id, to, phase, t.token};
        t.has_token = false;
        send_to_trace(t.id, to, tk);
        return;
    }
    if (t.is_leader()) {
        token_at_leader(t, MsgToken{t.id, t.id, phase, t.token});
    } else {
        MsgToken tk{t.id, t.leader, phase, t.token};
        t.has_token = false;
        send_to_trace(t.id, t.leader, tk);
    }
}

void World::handle_token(MachineState& m, const MsgToken& tk) {
    PartialTrace* t = find_trace(tk.to);
    if (!t || defunct_phase(*t)) return;
    if (tk.token.epoch < t->token_epoch_seen) return;  // discarded token
    t->token_epoch_seen = tk.token.epoch;
    if (t->is_leader()) {
        token_at_leader(*t, tk);
        return;
    }
    t->token = tk.token;
    t->token_phase = tk.phase;
    t->has_token = true;
    advance_token(*t);
}

void World::token_at_leader(PartialTrace& leader, MsgToken tk) {
    leader.token = tk.token;
    leader.token_phase = tk.phase;
    leader.has_token = true;
    auto in_list = [](const std::vector<TraceId>& v, const TraceId& id) {
        return std::find(v.begin(), v.end(), id) != v.end();
    };
    if (!token_ready(leader, tk.phase)) return;
    if (!in_list(leader.token.done, leader.id)) {
        advance_token(leader);
        return;
    }
    // re-seed circulation with members the dependency edges missed
    std::vector<TraceId> missing;
    for (const TraceId& z : leader.group)
        if (!in_list(leader.token.done, z)) missing.push_back(z);
    if (!missing.empty()) {
        leader.token.next.insert(leader.token.next.end(), missing.begin(), missing.end());
        advance_token(leader);
        return;
    }
    maybe_broadcast_done(leader);
}

void World::maybe_broadcast_done(PartialTrace& leader) {
    if (!leader.in_consensus || !leader.has_token) return;
    auto in_list = [](const std::vector<TraceId>& v, const TraceId& id) {
        return std::find(v.begin(), v.end(), id) != v.end();
    };
    for (const TraceId& z : leader.group)
        if (!in_list(leader.token.done, z)) return;

    if (cfg_.invariant_checks && leader.token_phase == 1) {
        // no mark-gray of this group may still be undelivered
        for (const SimMessage* msg : net_.in_flight()) {
            if (const auto* mg = std::get_if<MsgMarkGray>(&msg->payload)) {
                if (leader.group.count(mg->trace))
                    add_violation("protocol", "done broadcast with MARK_GRAY in flight");
            }
        }
    }
    MsgDoneBcast db;
    db.from = leader.id;
    db.phase = leader.token_phase;
    db.epoch = leader.token.epoch;
    db.done = leader.token.done;
    db.outside = leader.token.outside;
    net_.log_line(leader.id.initiator.host, "DONE_BCAST",
                  to_string(leader.id) + " phase=" + std::to_string(leader.token_phase));
    for (const TraceId& z : leader.group) {
        if (z == leader.id) continue;
        db.to = z;
        send_to_trace(leader.id, z, db);
    }
    db.to = leader.id;
    handle_done_bcast(machines_.at(leader.id.initiator.host), db);
}

void World::handle_done_bcast(MachineState& m, const MsgDoneBcast& db) {
    PartialTrace* t = find_trace(db.to);
    if (!t || defunct_phase(*t)) return;
    if (db.phase == 1) {
        if (t->phase != TracePhase::mark_gray) return;
        for (const TraceId& d : db.done) {
            t->done_traces.insert(d);
            t->dependents.erase(d);
        }
        if (t->dependents.empty()) {
            t->marks = std::set<TraceId>(db.done.begin(), db.done.end());
            t->phase = TracePhase::await_done;
            net_.count("traces.phase1_done");
            begin_phase2(m.id, t->id, false);
        }
        return;
    }
    if (db.phase == 2) {
        // verdict resolution
        bool all_false = true, all_true = true;
        for (const auto& [z, flag] : db.outside) {
            all_false = all_false && !flag;
            all_true = all_true && flag;
        }
        if (all_false) {
            sweep_trace(m.id, t->id, false);
        } else if (all_true) {
            sweep_trace(m.id, t->id, true);
        } else {
            t->exchange_parent = db.from;
            t->exchange_engaged = true;
            if (db.from == t->id)  // root: members owe engagement acks
                t->exchange_deficit += static_cast<int>(t->group.size()) - 1;
            begin_exchange(*t);
        }
        return;
    }
    // phase 3: exchange complete, sweep with the local verdict
    if (t->phase == TracePhase::exchanging) {
        bool live = t->outside_flag || t->verdict_live ||
                    outside_closure(*t).count(t->root) != 0;
        sweep_trace(m.id, t->id, live);
    }
}

// ---------------------------------------------------------------------------
// re-mark gray (initiator failure during phase 1)
// ---------------------------------------------------------------------------

void World::handle_re_mark_gray(MachineState& m, const SimMessage& raw, const MsgReMarkGray& rg) {
    if (!m.known_failed.count(rg.failed.initiator.host)) {
        // buffer until the failure is confirmed locally
        m.rg_buffer.push_back(raw);
        return;
    }
    auto eit = m.entries.find(rg.target);
    if (eit == m.entries.end() || !eit->second.colored()) {
        net_.send(m.id, rg.trace.initiator.host,
                  MsgReMarkGrayReply{rg.trace, rg.target, TraceId{}});
        return;
    }
    EntryItem& e = eit->second;
    if (e.owner != rg.failed) {
        // already adopted (or never owned by the failed trace)
        net_.send(m.id, rg.trace.initiator.host, MsgReMarkGrayReply{rg.trace, rg.target, e.owner});
        return;
    }
    // adopt: hang directly off the surviving trace's root
    e.owner = rg.trace;
    e.is_trace_root = false;
    e.parent = rg.trace.initiator;
    e.parent_machine = rg.trace.initiator.host;
    e.parent_acked = false;
    e.pending_reparent = false;
    for (ObjectId target : e.sent_gray_to)
        net_.send(m.id, target.host, MsgReMarkGray{rg.trace, rg.failed, target, e.obj, m.id});
    net_.send(m.id, rg.trace.initiator.host,
              MsgReMarkGrayReply{rg.trace, rg.target, rg.trace});
    if (e.dependents.empty()) entry_drained(m, e);
}

void World::handle_re_mark_gray_reply(MachineState& m, const MsgReMarkGrayReply& rr) {
    PartialTrace* t = find_trace(rr.trace);
    if (!t || defunct_phase(*t)) return;
    if (!valid(rr.belongs_to.initiator)) return;  // whitened or collected
    if (rr.belongs_to == t->id) {
        // freshly adopted: wait for its acknowledgement
        auto eit = m.entries.find(t->root);
        if (eit != m.entries.end() && eit->second.colored()) {
            eit->second.dependents.insert(rr.at_object);
            t->locally_done = false;
        }
        return;
    }
    t->neighbors[rr.belongs_to].insert(rr.at_object);
    if (!t->group.count(rr.belongs_to) && !t->done_traces.count(rr.belongs_to) &&
        !t->defunct.count(rr.belongs_to) && !t->mr_outstanding.count(rr.belongs_to)) {
        t->mr_outstanding.insert(rr.belongs_to);
        send_to_trace(t->id, rr.belongs_to, MsgMergeReq{t->id, rr.belongs_to, t->leader});
    }
}

}  // namespace dgc
