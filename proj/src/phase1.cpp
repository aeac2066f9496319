#include <algorithm>

#include "dgc/world.hpp"

namespace dgc {

void World::start_trace(MachineId mid, ObjectId entry) {
    MachineState& m = machines_.at(mid);
    auto eit = m.entries.find(entry);
    if (eit == m.entries.end() || eit->second.colored()) return;  // heuristic gate
    EntryItem& e = eit->second;

    TraceId tid{entry};
    if (auto* old = find_trace(tid); old && old->phase != TracePhase::completed &&
                                     old->phase != TracePhase::dissolved)
        return;  // previous attempt still winding down

    e.color = Color::gray;
    e.owner = tid;
    e.is_trace_root = true;
    e.parent.reset();
    e.parent_acked = true;
    e.responsibles.clear();
    e.dependents.clear();
    e.sent_gray_to.clear();
    init_entrycolors(e);

    PartialTrace t;
    t.id = tid;
    t.root = entry;
    t.group = {tid};
    t.leader = tid;
    m.traces[tid] = std::move(t);
    net_.log_line(mid, "TRACE_START", to_string(tid));
    net_.count("traces.started");
    mint_token(m.traces[tid], 1);

    forward_gray(m, e, tid);
    if (e.dependents.empty()) trace_locally_done(mid, tid);
}

void World::forward_gray(MachineState& m, EntryItem& e, const TraceId& trace) {
    std::vector<ObjectId> exits = compute_exitlist(m.id, e.obj);
    e.sent_gray_to = exits;
    e.dependents = std::set<ObjectId>(exits.begin(), exits.end());
    for (ObjectId target : exits) {
        net_.send(m.id, target.host, MsgMarkGray{trace, target, e.obj, m.id});
        subscribe(m.id, target.host);
    }
    subscribe(m.id, trace.initiator.host);
}

void World::handle_mark_gray(MachineState& m, const SimMessage& raw, const MsgMarkGray& mg) {
    if (!m.objects.count(mg.target)) {
        // target collected while the request was in flight: release the sender
        net_.send(m.id, raw.src, MsgGrayAck{mg.trace, mg.target, mg.sender_obj});
        return;
    }
    EntryItem& e = ensure_entry(m, mg.target);
    subscribe(m.id, mg.sender_machine);
    subscribe(m.id, mg.trace.initiator.host);

    if (e.color == Color::white) {
        if (e.exitlist_state == ExitlistState::out_of_date) {
            // exitlist recomputation pending: wait locally
            m.parked.push_back(raw);
            net_.request_slot(m.id);
            net_.count("markgray.parked");
            return;
        }
        e.color = Color::gray;
        e.owner = mg.trace;
        e.is_trace_root = false;
        init_entrycolors(e);
        record_request_color(m, e, mg.sender_machine, Color::gray, mg.trace);
        e.responsibles.push_back({mg.sender_obj, mg.sender_machine, false, false, false});
        e.parent = mg.sender_obj;
        e.parent_machine = mg.sender_machine;
        e.parent_acked = false;
        e.pending_reparent = false;
        forward_gray(m, e, mg.trace);
        if (e.dependents.empty()) entry_drained(m, e);
        return;
    }

    record_request_color(m, e, mg.sender_machine, Color::gray, mg.trace);

    if (e.owner == mg.trace) {
        e.responsibles.push_back({mg.sender_obj, mg.sender_machine, false, false, false});
        Responsible& r = e.responsibles.back();
        if (!e.parent || e.parent_acked) {
            // root, or subtree already acknowledged: ack immediately
            net_.send(m.id, mg.sender_machine, MsgGrayAck{mg.trace, e.obj, mg.sender_obj});
            r.acked = true;
        } else if (!e.pending_reparent) {
            // second request with the parent ack withheld: ask to be listed
            // in the initiator's dependents
            e.pending_reparent = true;
            net_.send(m.id, mg.trace.initiator.host, MsgReparentReq{mg.trace, e.obj});
        }
        // while a reparent is pending no acknowledgements are sent
        return;
    }

    // colored by a different trace: cooperation
    e.responsibles.push_back({mg.sender_obj, mg.sender_machine, false, false, false});
    net_.send(m.id, mg.trace.initiator.host,
              MsgEncounter{mg.trace, e.owner, e.obj, mg.sender_obj});
    subscribe(m.id, e.owner.initiator.host);
}

void World::entry_drained(MachineState& m, EntryItem& e) {
    if (e.is_trace_root) {
        trace_locally_done(m.id, e.owner);
        return;
    }
    if (e.parent && !e.parent_acked) {
        net_.send(m.id, e.parent_machine, MsgGrayAck{e.owner, e.obj, *e.parent});
        e.parent_acked = true;
        for (auto& r : e.responsibles)
            if (r.obj == *e.parent) r.acked = true;
    }
}

void World::handle_gray_ack(MachineState& m, const MsgGrayAck& ack) {
    auto eit = m.entries.find(ack.to_obj);
    if (eit == m.entries.end()) return;  // collected meanwhile
    EntryItem& e = eit->second;
    if (!e.colored() || e.owner != ack.trace) {
        net_.log_line(m.id, "PROTO_ERR", "GRAY_ACK for untraced entry " + to_string(ack.to_obj));
        return;
    }
    if (!e.dependents.erase(ack.from_obj)) {
        net_.log_line(m.id, "PROTO_ERR", "GRAY_ACK from unknown sender " + to_string(ack.from_obj));
        return;
    }
    if (e.dependents.empty()) entry_drained(m, e);
}

void World::ack_responsibles(MachineState& m, EntryItem& e, bool keep_parent) {
    for (auto& r : e.responsibles) {
        if (r.acked || r.failed) continue;
        if (keep_parent && e.parent && r.obj == *e.parent) continue;
        net_.send(m.id, r.machine, MsgGrayAck{e.owner, e.obj, r.obj});
        r.acked = true;
    }
}

void World::maybe_whiten(MachineState& m, EntryItem& e) {
    if (!e.colored() || e.responsibles.empty()) return;
    for (const auto& r : e.responsibles)
        if (!r.whitened && !r.failed) return;
    whiten(m, e, true, "responsibles drained");
}

void World::whiten(MachineState& m, EntryItem& e, bool propagate, const char* why) {
    if (e.color == Color::white) return;
    TraceId owner = e.owner;
    net_.log_line(m.id, "WHITEN", to_string(e.obj) + " " + why);
    if (propagate) {
        for (ObjectId t : e.sent_gray_to)
            net_.send(m.id, t.host, MsgMarkWhite{owner, t, e.obj, m.id});
    }
    ack_responsibles(m, e, false);
    e.color = Color::white;
    e.responsibles.clear();
    e.dependents.clear();
    e.parent.reset();
    e.parent_acked = false;
    e.pending_reparent = false;
    e.sent_gray_to.clear();
    e.is_trace_root = false;
    e.black_pending.clear();
    e.black_reply_to.clear();
    e.black_live = false;
    e.black_edges.clear();
    e.black_boundary.clear();
    uint64_t guard = heuristic_guard_begin();
    on_trace_end(m, e);
    heuristic_guard_end(guard, "on_trace_end");
    resume_parks(m.id, e.obj);
    net_.request_slot(m.id);
}

// Reclamation of a colored entry: release every obligation without firing
// heuristic bit updates (the object is going away).
void World::release_trace_state(MachineState& m, EntryItem& e) {
    for (ObjectId t : e.sent_gray_to)
        net_.send(m.id, t.host, MsgMarkWhite{e.owner, t, e.obj, m.id});
    ack_responsibles(m, e, false);
    // entries blocked in a back trace on this object: collected => continue
    for (auto& [ex, requester] : e.black_reply_to) {
        for (auto& rec : exit_records_[m.id]) {
            if (rec.exit == ex && rec.requester == requester && !rec.replied)
                contribute_to_exit(m, rec, false, {}, {}, e.obj);
        }
    }
    e.color = Color::white;
}

void World::handle_mark_white(MachineState& m, const MsgMarkWhite& mw) {
    auto eit = m.entries.find(mw.target);
    if (eit == m.entries.end()) return;
    EntryItem& e = eit->second;
    if (!e.colored()) return;
    for (auto& r : e.responsibles) {
        if (r.obj == mw.sender_obj && r.machine == mw.sender_machine) {
            r.whitened = true;
            r.acked = true;
        }
    }
    resume_parks(m.id, e.obj);  // a blocked back trace answers live
    maybe_whiten(m, e);
}

void World::handle_reparent_req(MachineState& m, const MsgReparentReq& rq) {
    PartialTrace* t = find_trace(rq.trace);
    ObjectId requester = rq.requester;
    if (!t || t->phase == TracePhase::dissolved || t->phase == TracePhase::completed) {
        // nothing to wait for; let the requester proceed
        net_.send(m.id, requester.host, MsgReparentAck{rq.trace, requester});
        return;
    }
    auto eit = m.entries.find(t->root);
    if (eit != m.entries.end() && eit->second.colored()) {
        eit->second.dependents.insert(requester);
        if (t->locally_done) {
            t->locally_done = false;  // re-armed; token machinery re-runs
        }
    }
    net_.send(m.id, requester.host, MsgReparentAck{rq.trace, requester});
}

void World::handle_reparent_ack(MachineState& m, const MsgReparentAck& ra) {
    auto eit = m.entries.find(ra.requester);
    if (eit == m.entries.end()) return;
    EntryItem& e = eit->second;
    if (!e.pending_reparent || e.owner != ra.trace) return;
    e.pending_reparent = false;
    e.parent = ra.trace.initiator;
    e.parent_machine = ra.trace.initiator.host;
    e.parent_acked = false;
    ack_responsibles(m, e, true);  // everything except the new parent
    if (e.dependents.empty()) entry_drained(m, e);
}

// Failure rules for phase-1 state on machine m after `failed` crashed.
void World::phase1_peer_failed(MachineState& m, MachineId failed) {
    std::vector<ObjectId> colored;
    for (auto& [obj, e] : m.entries)
        if (e.colored()) colored.push_back(obj);

    for (ObjectId obj : colored) {
        auto eit = m.entries.find(obj);
        if (eit == m.entries.end()) continue;
        EntryItem& e = eit->second;

        for (auto& r : e.responsibles)
            if (r.machine == failed) r.failed = true;

        bool initiator_dead = !net_.alive(e.owner.initiator.host);

        // dependents on the failed machine: proceed as if acknowledged
        bool drained = false;
        for (auto it = e.dependents.begin(); it != e.dependents.end();) {
            if (it->host == failed) {
                it = e.dependents.erase(it);
                drained = true;
            } else {
                ++it;
            }
        }

        if (e.pending_reparent && initiator_dead) {
            // acts as if the reparent was acknowledged; no one left to notify
            e.pending_reparent = false;
            e.parent_acked = true;
            ack_responsibles(m, e, false);
        } else if (e.parent && !e.parent_acked && e.parent_machine == failed &&
                   !e.pending_reparent) {
            bool any_live = false;
            for (const auto& r : e.responsibles)
                if (!r.failed && !r.whitened) any_live = true;
            if (any_live && !initiator_dead && !e.is_trace_root) {
                e.pending_reparent = true;
                net_.send(m.id, e.owner.initiator.host, MsgReparentReq{e.owner, e.obj});
            } else if (initiator_dead) {
                e.parent_acked = true;
                ack_responsibles(m, e, false);
            }
        }

        // mark-black requests pending on the failed machine: assume live
        std::vector<ExitItemId> dead_black;
        for (const auto& ex : e.black_pending)
            if (ex.owner == failed) dead_black.push_back(ex);
        for (const auto& ex : dead_black) {
            e.black_pending.erase(ex);
            e.black_live = true;  // processes that fail are assumed live
            e.black_edges.push_back(ReachEdge{ObjectId{}, e.obj});
        }
        if (!dead_black.empty() && e.black_pending.empty()) entry_black_resolved(m, e);

        maybe_whiten(m, e);
        auto again = m.entries.find(obj);
        if (again != m.entries.end() && again->second.colored()) {
            if (drained && again->second.dependents.empty()) entry_drained(m, again->second);
        }
    }
}

void World::trace_locally_done(MachineId mid, const TraceId& id) {
    MachineState& m = machines_.at(mid);
    auto it = m.traces.find(id);
    if (it == m.traces.end()) return;
    PartialTrace& t = it->second;
    if (t.phase != TracePhase::mark_gray || t.locally_done) return;
    if (!t.rg_dependents.empty()) return;
    t.locally_done = true;
    net_.log_line(mid, "PHASE1_LOCAL_DONE", to_string(id));
    if (t.has_token) advance_token(t);
}

}  // namespace dgc
