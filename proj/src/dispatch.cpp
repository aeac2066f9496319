#include <algorithm>

#include "dgc/world.hpp"

namespace dgc {

void World::handle_message(MachineId mid, const SimMessage& msg) {
    MachineState& m = machines_.at(mid);
    if (!m.alive) return;

    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, MsgInsert>) {
                apply_insert(m, p);
            } else if constexpr (std::is_same_v<T, MsgDelete>) {
                apply_delete(m, p);
            } else if constexpr (std::is_same_v<T, MsgRefTransfer>) {
                materialize_exit(m, p);
            } else if constexpr (std::is_same_v<T, MsgInvoke>) {
                auto oit = m.objects.find(p.target);
                if (oit == m.objects.end()) return;  // call lost
                m.temp_roots[p.target]++;
                net_.schedule(mid, net_.now() + std::max<SimTime>(p.duration, 1),
                              EvTempRootExpire{p.target});
                transfer_barrier(m, p.target);
                auto eit = m.entries.find(p.target);
                if (eit != m.entries.end()) purple_barrier(m, eit->second, "remote-traversal");
                net_.request_slot(mid);
            } else if constexpr (std::is_same_v<T, MsgMarkGray>) {
                handle_mark_gray(m, msg, p);
            } else if constexpr (std::is_same_v<T, MsgGrayAck>) {
                handle_gray_ack(m, p);
            } else if constexpr (std::is_same_v<T, MsgMarkWhite>) {
                handle_mark_white(m, p);
            } else if constexpr (std::is_same_v<T, MsgReparentReq>) {
                handle_reparent_req(m, p);
            } else if constexpr (std::is_same_v<T, MsgReparentAck>) {
                handle_reparent_ack(m, p);
            } else if constexpr (std::is_same_v<T, MsgEncounter>) {
                handle_encounter(m, p);
            } else if constexpr (std::is_same_v<T, MsgEncounterAck>) {
                handle_encounter_ack(m, p);
            } else if constexpr (std::is_same_v<T, MsgMergeReq>) {
                handle_merge_req(m, p);
            } else if constexpr (std::is_same_v<T, MsgMergeReply>) {
                handle_merge_reply(m, p);
            } else if constexpr (std::is_same_v<T, MsgAcceptReq>) {
                handle_accept_req(m, p);
            } else if constexpr (std::is_same_v<T, MsgAcceptAck>) {
                handle_accept_ack(m, p);
            } else if constexpr (std::is_same_v<T, MsgJoinReq>) {
                handle_join_req(m, p);
            } else if constexpr (std::is_same_v<T, MsgJoin>) {
                handle_join(m, msg, p);
            } else if constexpr (std::is_same_v<T, MsgAccept>) {
                handle_accept(m, p);
            } else if constexpr (std::is_same_v<T, MsgGroupInstall>) {
                handle_group_install(m, p);
            } else if constexpr (std::is_same_v<T, MsgGroupInstallAck>) {
                handle_group_install_ack(m, p);
            } else if constexpr (std::is_same_v<T, MsgCommitReq>) {
                handle_commit_req(m, p);
            } else if constexpr (std::is_same_v<T, MsgCommitReqAck>) {
                handle_commit_req_ack(m, p);
            } else if constexpr (std::is_same_v<T, MsgCommit>) {
                handle_commit(m, p);
            } else if constexpr (std::is_same_v<T, MsgCommitAck>) {
                handle_commit_ack(m, p);
            } else if constexpr (std::is_same_v<T, MsgMergeComplete>) {
                handle_merge_complete(m, p);
            } else if constexpr (std::is_same_v<T, MsgMergeInquiry>) {
                handle_merge_inquiry(m, p);
            } else if constexpr (std::is_same_v<T, MsgMergeInquiryAck>) {
                handle_merge_inquiry_ack(m, p);
            } else if constexpr (std::is_same_v<T, MsgMergeAbort>) {
                handle_merge_abort(m, p);
            } else if constexpr (std::is_same_v<T, MsgFaultSet>) {
                handle_fault_set(m, msg, p);
            } else if constexpr (std::is_same_v<T, MsgFaultConfirm>) {
                handle_fault_confirm(m, p);
            } else if constexpr (std::is_same_v<T, MsgToken>) {
                handle_token(m, p);
            } else if constexpr (std::is_same_v<T, MsgDoneBcast>) {
                handle_done_bcast(m, p);
            } else if constexpr (std::is_same_v<T, MsgReMarkGray>) {
                handle_re_mark_gray(m, msg, p);
            } else if constexpr (std::is_same_v<T, MsgReMarkGrayReply>) {
                handle_re_mark_gray_reply(m, p);
            } else if constexpr (std::is_same_v<T, MsgMarkBlack>) {
                handle_mark_black(m, msg, p, false);
            } else if constexpr (std::is_same_v<T, MsgBlackReply>) {
                handle_black_reply(m, p);
            } else if constexpr (std::is_same_v<T, MsgNeighborQuery>) {
                handle_neighbor_query(m, p);
            } else if constexpr (std::is_same_v<T, MsgNeighborReply>) {
                handle_neighbor_reply(m, p);
            } else if constexpr (std::is_same_v<T, MsgLivenessForward>) {
                handle_liveness_forward(m, p);
            } else if constexpr (std::is_same_v<T, MsgExchangeAck>) {
                handle_exchange_ack(m, p);
            } else if constexpr (std::is_same_v<T, MsgReMarkBlack>) {
                handle_re_mark_black(m, p);
            } else if constexpr (std::is_same_v<T, MsgReMarkBlackReply>) {
                handle_re_mark_black_reply(m, p);
            } else if constexpr (std::is_same_v<T, MsgSweep>) {
                handle_sweep(m, p);
            }
        },
        msg.payload);
}

// Failure notification processing: fail flush first, then the reference
// lister, dangling exit items, phase-1 rules and group rules, in that order.
void World::handle_failure_notification(MachineId mid, MachineId failed) {
    MachineState& m = machines_.at(mid);
    if (!m.alive) return;
    if (!m.known_failed.insert(failed).second) return;

    std::vector<SimMessage> flushed = net_.fail_flush(mid, failed);
    net_.count("fail_flush.messages", flushed.size());
    for (const SimMessage& msg : flushed) handle_message(mid, msg);

    // reference lists: drop non-persistent members from the failed machine
    std::vector<ObjectId> entry_ids;
    for (const auto& [obj, e] : m.entries) entry_ids.push_back(obj);
    for (ObjectId obj : entry_ids) {
        auto eit = m.entries.find(obj);
        if (eit == m.entries.end()) continue;
        EntryItem& e = eit->second;
        auto slot = e.entry_list.find(failed);
        if (slot == e.entry_list.end()) continue;
        uint64_t guard = heuristic_guard_begin();
        if (slot->second.persistent) {
            on_remote_failure(m, e, failed, true);  // take no action
            heuristic_guard_end(guard, "on_remote_failure");
            continue;
        }
        e.entry_list.erase(slot);
        on_remote_failure(m, e, failed, false);
        heuristic_guard_end(guard, "on_remote_failure");
        resume_parks(mid, obj);
    }

    // exit items pointing at the failed machine are dangling now
    std::vector<ObjectId> dead_targets;
    for (const auto& [target, ex] : m.exits)
        if (target.host == failed && !ex.persistent) dead_targets.push_back(target);
    for (ObjectId target : dead_targets) {
        delete_exit_item(m, target, false);
        for (auto& [oid, obj] : m.objects) obj.exit_refs.erase(target);
        m.handle_roots.erase(target);
    }

    phase1_peer_failed(m, failed);
    trace_peer_failed(m, failed);

    // buffered re-mark-gray requests for this failure can run now
    std::vector<SimMessage> rg;
    for (auto it = m.rg_buffer.begin(); it != m.rg_buffer.end();) {
        const auto* req = std::get_if<MsgReMarkGray>(&it->payload);
        if (req && req->failed.initiator.host == failed) {
            rg.push_back(*it);
            it = m.rg_buffer.erase(it);
        } else {
            ++it;
        }
    }
    for (const SimMessage& msg : rg) handle_message(mid, msg);

    net_.request_slot(mid);
}

void World::trace_peer_failed(MachineState& m, MachineId failed) {
    std::vector<TraceId> ids;
    for (const auto& [id, t] : m.traces) ids.push_back(id);
    for (const TraceId& id : ids) {
        auto tit = m.traces.find(id);
        if (tit == m.traces.end()) continue;
        PartialTrace& t = tit->second;
        if (t.phase == TracePhase::completed || t.phase == TracePhase::dissolved) continue;

        // encounters answered by traces on the failed machine resolve as done
        std::vector<TraceId> gone;
        for (const TraceId& z : t.mr_outstanding)
            if (z.initiator.host == failed) gone.push_back(z);
        for (const TraceId& z : gone) {
            t.mr_outstanding.erase(z);
            t.defunct.insert(z);
            auto pit = t.pending_ecs.find(z);
            if (pit != t.pending_ecs.end()) {
                for (auto& [at_object, requester] : pit->second)
                    net_.send(m.id, at_object.host, MsgEncounterAck{t.id, at_object, requester});
                t.pending_ecs.erase(pit);
            }
        }

        // peer leader of an active install died: probe the surviving side
        if (t.install_active && t.peer_leader && t.peer_leader->initiator.host == failed) {
            std::set<TraceId> other_side;
            for (const TraceId& z : t.merge_list)
                if (!t.old_group.count(z)) other_side.insert(z);
            TraceId acting{};
            for (const TraceId& z : other_side) {
                if (m.known_failed.count(z.initiator.host)) continue;
                acting = z;
                break;
            }
            if (valid(acting.initiator)) {
                send_to_trace(t.id, acting, MsgMergeInquiry{t.id, acting});
            } else {
                handle_merge_abort(m, MsgMergeAbort{t.id, t.id});
            }
        }
        // distribution acknowledgements from dead members are assumed
        if (t.install_active) {
            if (t.gi_inflight && t.gi_inflight->initiator.host == failed) {
                t.gi_pending.erase(*t.gi_inflight);
                t.gi_inflight.reset();
            }
            if (t.cm_inflight && t.cm_inflight->initiator.host == failed) {
                t.cm_pending.erase(*t.cm_inflight);
                t.cm_inflight.reset();
            }
            continue_install(t);
        }

        std::set<TraceId> affected;
        for (const TraceId& z : t.group)
            if (z != t.id && z.initiator.host == failed) affected.insert(z);
        for (const TraceId& z : t.merge_list)
            if (z != t.id && z.initiator.host == failed) affected.insert(z);
        if (!affected.empty()) {
            size_t before = t.fault_set.size();
            t.fault_set.insert(affected.begin(), affected.end());
            if (t.fault_set.size() != before || !t.fault_reports.empty()) report_fault(t);
        }
    }
}

void World::check_invariants() {
    // parent edges with withheld acknowledgements form a forest (no cycles)
    std::map<ObjectId, ObjectId> parent_of;
    for (const auto& [mid, m] : machines_) {
        if (!m.alive) continue;
        for (const auto& [obj, e] : m.entries)
            if (e.colored() && e.parent && !e.parent_acked) parent_of[obj] = *e.parent;
    }
    for (const auto& [start, p] : parent_of) {
        ObjectId cur = start;
        size_t hops = 0;
        while (parent_of.count(cur)) {
            cur = parent_of.at(cur);
            if (++hops > parent_of.size()) {
                add_violation("protocol", "cycle in phase-1 parent forest at " + to_string(start));
                break;
            }
        }
    }
}

}  // namespace dgc
