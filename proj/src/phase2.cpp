#include <algorithm>
#include <map>

#include "dgc/world.hpp"

namespace dgc {

// ---------------------------------------------------------------------------
// transitive reduction
// ---------------------------------------------------------------------------

std::set<std::pair<ObjectId, ObjectId>> transitive_closure(const std::vector<ReachEdge>& edges) {
    std::map<ObjectId, std::set<ObjectId>> adj;
    std::set<ObjectId> nodes;
    for (const auto& e : edges) {
        adj[e.src].insert(e.dst);
        nodes.insert(e.src);
        nodes.insert(e.dst);
    }
    std::set<std::pair<ObjectId, ObjectId>> closure;
    for (ObjectId s : nodes) {
        std::vector<ObjectId> stack{s};
        std::set<ObjectId> seen;
        while (!stack.empty()) {
            ObjectId u = stack.back();
            stack.pop_back();
            auto it = adj.find(u);
            if (it == adj.end()) continue;
            for (ObjectId v : it->second)
                if (seen.insert(v).second) {
                    closure.insert({s, v});
                    stack.push_back(v);
                }
        }
    }
    return closure;
}

namespace {

struct SccResult {
    std::map<ObjectId, int> comp;
    std::vector<std::vector<ObjectId>> members;
};

// iterative Tarjan
SccResult scc_condense(const std::map<ObjectId, std::set<ObjectId>>& adj,
                       const std::set<ObjectId>& nodes) {
    SccResult res;
    std::map<ObjectId, int> index, low;
    std::vector<ObjectId> stack;
    std::set<ObjectId> on_stack;
    int next_index = 0;

    struct Frame {
        ObjectId node;
        std::vector<ObjectId> succ;
        size_t next = 0;
    };

    for (ObjectId start : nodes) {
        if (index.count(start)) continue;
        std::vector<Frame> frames;
        auto push_node = [&](ObjectId n) {
            index[n] = low[n] = next_index++;
            stack.push_back(n);
            on_stack.insert(n);
            Frame f;
            f.node = n;
            auto it = adj.find(n);
            if (it != adj.end()) f.succ.assign(it->second.begin(), it->second.end());
            frames.push_back(std::move(f));
        };
        push_node(start);
        while (!frames.empty()) {
            Frame& f = frames.back();
            if (f.next < f.succ.size()) {
                ObjectId w = f.succ[f.next++];
                if (!index.count(w)) {
                    push_node(w);
                } else if (on_stack.count(w)) {
                    low[f.node] = std::min(low[f.node], index[w]);
                }
                continue;
            }
            ObjectId n = f.node;
            if (low[n] == index[n]) {
                std::vector<ObjectId> comp;
                while (true) {
                    ObjectId w = stack.back();
                    stack.pop_back();
                    on_stack.erase(w);
                    comp.push_back(w);
                    res.comp[w] = static_cast<int>(res.members.size());
                    if (w == n) break;
                }
                std::sort(comp.begin(), comp.end());
                res.members.push_back(std::move(comp));
            }
            frames.pop_back();
            if (!frames.empty())
                low[frames.back().node] = std::min(low[frames.back().node], low[n]);
        }
    }
    return res;
}

}  // namespace

std::vector<ReachEdge> transitive_reduce(const std::vector<ReachEdge>& edges) {
    std::map<ObjectId, std::set<ObjectId>> adj;
    std::set<ObjectId> nodes;
    for (const auto& e : edges) {
        if (e.src == e.dst) continue;  // self loops add nothing to the closure
        adj[e.src].insert(e.dst);
        nodes.insert(e.src);
        nodes.insert(e.dst);
    }
    if (nodes.empty()) return {};

    SccResult scc = scc_condense(adj, nodes);
    int ncomp = static_cast<int>(scc.members.size());

    // condensation DAG
    std::vector<std::set<int>> dag(ncomp);
    for (const auto& [u, succ] : adj)
        for (ObjectId v : succ) {
            int cu = scc.comp.at(u), cv = scc.comp.at(v);
            if (cu != cv) dag[cu].insert(cv);
        }

    // reachability between components
    std::vector<std::set<int>> reach(ncomp);
    // process in reverse topological order: Tarjan emits components in
    // reverse topological order already (successors first)
    for (int c = 0; c < ncomp; ++c) {
        for (int d : dag[c]) {
            reach[c].insert(d);
            reach[c].insert(reach[d].begin(), reach[d].end());
        }
    }

    std::vector<ReachEdge> out;
    // one cycle per non-trivial component
    for (const auto& members : scc.members) {
        if (members.size() < 2) continue;
        for (size_t i = 0; i < members.size(); ++i)
            out.push_back({members[i], members[(i + 1) % members.size()]});
    }
    // DAG edges minus the transitively implied ones, via representatives
    for (int c = 0; c < ncomp; ++c) {
        for (int d : dag[c]) {
            bool redundant = false;
            for (int w : dag[c]) {
                if (w != d && reach[w].count(d)) {
                    redundant = true;
                    break;
                }
            }
            if (!redundant)
                out.push_back({scc.members[c].front(), scc.members[d].front()});
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// begin phase two
// ---------------------------------------------------------------------------

void World::begin_phase2(MachineId mid, const TraceId& id, bool timeout_live) {
    MachineState& m = machines_.at(mid);
    auto tit = m.traces.find(id);
    if (tit == m.traces.end()) return;
    PartialTrace& t = tit->second;
    if (t.phase != TracePhase::await_done) return;

    auto eit = m.entries.find(t.root);
    if (eit == m.entries.end() || !m.objects.count(t.root)) {
        // root collected by the reference lister meanwhile
        finish_trace(mid, id, false, "root collected");
        return;
    }
    EntryItem& e = eit->second;
    if (e.color == Color::purple) {
        t.outside_flag = true;
        t.verdict_live = true;
        trace_phase2_done(mid, id);
        return;
    }
    if (e.color != Color::gray) {
        // whitened by fault propagation while waiting
        t.phase = TracePhase::dissolved;
        net_.count("traces.aborted");
        return;
    }

    // every incoming reference must have produced a mark-gray request from a
    // trace in marks; a white slot means the object is reachable from outside
    for (const auto& [member, slot] : e.entry_list) {
        auto cit = e.entrycolors.find(member);
        if (cit == e.entrycolors.end() || cit->second.color == Color::white) {
            t.outside_flag = true;
            t.verdict_live = true;
            trace_phase2_done(mid, id);
            return;
        }
        bool in_marks = false, foreign = false;
        for (const TraceId& by : cit->second.by)
            (t.marks.count(by) ? in_marks : foreign) = true;
        if (!in_marks && foreign) {
            // colored only by traces outside marks: block until that
            // reference sends a mark white or is deleted
            if (timeout_live) {
                t.outside_flag = true;
                t.verdict_live = true;
                t.fault_tainted = true;
                trace_phase2_done(mid, id);
                return;
            }
            bool released = false;
            for (const auto& r : e.responsibles)
                if (r.machine == member && (r.whitened || r.failed)) released = true;
            if (released) {
                t.outside_flag = true;
                t.verdict_live = true;
                trace_phase2_done(mid, id);
                return;
            }
            park_block(mid, e.obj, std::nullopt, id);
            return;
        }
    }

    // proceed: color black and back-trace over the incoming references
    t.phase = TracePhase::mark_black;
    e.color = Color::black;
    e.black_by = id;
    e.black_pending.clear();
    e.black_live = false;
    e.black_edges.clear();
    e.black_boundary.clear();
    e.black_reply_to.clear();
    e.sent_black_to.clear();
    net_.log_line(mid, "PHASE2_START", to_string(id));
    if (e.entry_list.empty()) {
        entry_black_resolved(m, e);
        return;
    }
    for (const auto& [member, slot] : e.entry_list) {
        ExitItemId ex{member, e.obj};
        e.black_pending.insert(ex);
        e.sent_black_to.insert(ex);
        net_.send(mid, member, MsgMarkBlack{id, ex, e.obj, t.marks});
        subscribe(mid, member);
    }
}

// ---------------------------------------------------------------------------
// mark black at an exit item
// ---------------------------------------------------------------------------

void World::handle_mark_black(MachineState& m, const SimMessage& raw, const MsgMarkBlack& mb,
                              bool timeout_live) {
    // the exit item may be gone: its machine dropped the reference, so the
    // requesting entry lost that incoming edge; treat as garbage leg
    if (!m.exits.count(mb.target.target)) {
        net_.send(m.id, raw.src, MsgBlackReply{mb.trace, mb.target, mb.requester, false, {}, {}});
        return;
    }

    auto [backlist, live_flag] = compute_backlist(m.id, mb.target.target);

    ExitBlackRecord rec;
    rec.exit = mb.target;
    rec.requester = mb.requester;
    rec.trace = mb.trace;
    rec.backlist = backlist;

    if (live_flag) {
        rec.live = true;
        rec.edges.push_back({ObjectId{}, mb.requester});  // outside source
        rec.replied = true;
        net_.send(m.id, raw.src,
                  MsgBlackReply{mb.trace, mb.target, mb.requester, true, rec.edges, {}});
        exit_records_[m.id].push_back(std::move(rec));
        return;
    }

    // purple entries or entries colored by a trace outside marks block the
    // back trace until they whiten or are collected
    for (ObjectId r : backlist) {
        auto eit = m.entries.find(r);
        if (eit == m.entries.end()) continue;
        EntryItem& e = eit->second;
        if (e.color == Color::purple) {
            rec.live = true;
            rec.edges.push_back({ObjectId{}, mb.requester});
            rec.replied = true;
            net_.send(m.id, raw.src,
                      MsgBlackReply{mb.trace, mb.target, mb.requester, true, rec.edges, {}});
            exit_records_[m.id].push_back(std::move(rec));
            return;
        }
        bool foreign = e.colored() && !mb.marks.count(e.owner) &&
                       !(e.color == Color::black && mb.marks.count(e.black_by));
        if (foreign) {
            if (timeout_live) {
                rec.live = true;
                rec.edges.push_back({ObjectId{}, mb.requester});
                rec.replied = true;
                net_.send(m.id, raw.src,
                          MsgBlackReply{mb.trace, mb.target, mb.requester, true, rec.edges, {}});
                exit_records_[m.id].push_back(std::move(rec));
                net_.count("phase2.timeout_live");
                return;
            }
            park_block(m.id, r, raw, std::nullopt);
            return;
        }
    }

    for (ObjectId r : backlist) {
        auto eit = m.entries.find(r);
        if (eit == m.entries.end()) continue;
        EntryItem& e = eit->second;
        rec.edges.push_back({r, mb.requester});

        if (e.color == Color::black) {
            if (e.black_by == mb.trace) {
                if (e.black_pending.empty() && e.black_reply_to.empty() && !e.is_trace_root) {
                    // resolved subtree: contribute its aggregate now
                    rec.live = rec.live || e.black_live;
                } else if (e.black_live) {
                    rec.live = true;
                }
                // edges flow to the initiator along the first-request path
            } else {
                // met an object colored black by another trace in the group
                rec.boundary[e.black_by].insert(r);
            }
            continue;
        }
        if (e.color == Color::gray && mb.marks.count(e.owner)) {
            // color black and continue backwards
            e.color = Color::black;
            e.black_by = mb.trace;
            e.black_pending.clear();
            e.black_live = false;
            e.black_edges.clear();
            e.black_boundary.clear();
            e.black_reply_to.clear();
            e.sent_black_to.clear();
            e.black_reply_to.push_back({mb.target, mb.requester});
            rec.waiting.insert(r);
            if (e.entry_list.empty()) {
                entry_black_resolved(m, e);
            } else {
                for (const auto& [member, slot] : e.entry_list) {
                    ExitItemId ex{member, e.obj};
                    e.black_pending.insert(ex);
                    e.sent_black_to.insert(ex);
                    net_.send(m.id, member, MsgMarkBlack{mb.trace, ex, e.obj, mb.marks});
                    subscribe(m.id, member);
                }
            }
            continue;
        }
        if (e.color == Color::white) {
            // whitened after the backlist scan started: live
            rec.live = true;
            rec.edges.push_back({ObjectId{}, mb.requester});
        }
    }

    exit_records_[m.id].push_back(std::move(rec));
    ExitBlackRecord& stored = exit_records_[m.id].back();
    if (stored.waiting.empty()) exit_record_resolved(m, stored);
}

// A backlist entry finished its own aggregation (or was collected): fold its
// result into the exit records waiting on it.
void World::contribute_to_exit(MachineState& m, ExitBlackRecord& rec, bool live,
                               const std::vector<ReachEdge>& edges,
                               const std::map<TraceId, std::set<ObjectId>>& boundary,
                               ObjectId resolved_entry) {
    if (rec.replied) return;
    rec.live = rec.live || live;
    rec.edges.insert(rec.edges.end(), edges.begin(), edges.end());
    for (const auto& [z, objs] : boundary) rec.boundary[z].insert(objs.begin(), objs.end());
    rec.waiting.erase(resolved_entry);
    if (rec.waiting.empty()) exit_record_resolved(m, rec);
}

void World::exit_record_resolved(MachineState& m, ExitBlackRecord& rec) {
    if (rec.replied) return;
    rec.replied = true;
    std::vector<ReachEdge> reduced = transitive_reduce(rec.edges);
    net_.send(m.id, rec.requester.host,
              MsgBlackReply{rec.trace, rec.exit, rec.requester, rec.live, reduced, rec.boundary});
}

void World::handle_black_reply(MachineState& m, const MsgBlackReply& br) {
    auto eit = m.entries.find(br.to_obj);
    if (eit == m.entries.end()) return;
    EntryItem& e = eit->second;
    if (!e.colored()) return;
    if (!e.black_pending.erase(br.from_exit)) return;
    e.black_live = e.black_live || br.live;
    e.black_edges.insert(e.black_edges.end(), br.edges.begin(), br.edges.end());
    for (const auto& [z, objs] : br.boundary) e.black_boundary[z].insert(objs.begin(), objs.end());
    if (e.black_pending.empty()) entry_black_resolved(m, e);
}

void World::entry_black_resolved(MachineState& m, EntryItem& e) {
    // answer local exit records waiting on this entry
    for (auto& rec : exit_records_[m.id]) {
        if (!rec.replied && rec.waiting.count(e.obj))
            contribute_to_exit(m, rec, e.black_live, e.black_edges, e.black_boundary, e.obj);
    }
    e.black_reply_to.clear();
    if (e.is_trace_root && e.black_by == e.owner) trace_phase2_done(m.id, e.owner);
}

void World::trace_phase2_done(MachineId mid, const TraceId& id) {
    MachineState& m = machines_.at(mid);
    auto tit = m.traces.find(id);
    if (tit == m.traces.end()) return;
    PartialTrace& t = tit->second;
    if (t.phase != TracePhase::mark_black && t.phase != TracePhase::await_done) return;
    t.phase = TracePhase::await_verdict;

    auto eit = m.entries.find(t.root);
    if (eit != m.entries.end()) {
        EntryItem& e = eit->second;
        t.outside_flag = t.outside_flag || e.black_live;
        t.reach_edges.insert(t.reach_edges.end(), e.black_edges.begin(), e.black_edges.end());
        for (const auto& [z, objs] : e.black_boundary)
            t.neighbors[z].insert(objs.begin(), objs.end());
    }
    net_.log_line(mid, "PHASE2_LOCAL_DONE",
                  to_string(id) + (t.outside_flag ? " outside" : " confined"));
    if (t.has_token) advance_token(t);
}

// ---------------------------------------------------------------------------
// neighbor-list exchange (mixed verdicts)
// ---------------------------------------------------------------------------

std::set<ObjectId> World::outside_closure(const PartialTrace& t) const {
    // nodes reachable from the outside sources within this trace's edges
    std::map<ObjectId, std::set<ObjectId>> adj;
    for (const auto& e : t.reach_edges) adj[e.src].insert(e.dst);
    std::vector<ObjectId> stack(t.outside_objects.begin(), t.outside_objects.end());
    stack.push_back(ObjectId{});  // OUT
    std::set<ObjectId> seen;
    while (!stack.empty()) {
        ObjectId u = stack.back();
        stack.pop_back();
        auto it = adj.find(u);
        if (it == adj.end()) continue;
        for (ObjectId v : it->second)
            if (seen.insert(v).second) stack.push_back(v);
    }
    return seen;
}

void World::begin_exchange(PartialTrace& t) {
    t.phase = TracePhase::exchanging;
    net_.log_line(t.id.initiator.host, "EXCHANGE", to_string(t.id));
    for (const auto& [z, objs] : t.neighbors) {
        if (z == t.id || objs.empty()) continue;
        if (!t.group.count(z)) continue;
        send_to_trace(t.id, z, MsgNeighborQuery{t.id, z, objs});
        t.exchange_deficit++;
    }
    exchange_quiesce_check(t);
}

void World::handle_neighbor_query(MachineState& m, const MsgNeighborQuery& q) {
    PartialTrace* t = find_trace(q.to);
    if (!t) return;
    for (ObjectId obj : q.objects) t->asked_by[q.from].insert(obj);
    std::set<ObjectId> closure = outside_closure(*t);
    std::set<ObjectId> outside;
    for (ObjectId obj : q.objects)
        if (closure.count(obj) || t->outside_objects.count(obj)) outside.insert(obj);
    t->reported_to[q.from].insert(outside.begin(), outside.end());
    send_to_trace(t->id, q.from, MsgNeighborReply{t->id, q.from, outside});
}

void World::handle_neighbor_reply(MachineState& m, const MsgNeighborReply& r) {
    PartialTrace* t = find_trace(r.to);
    if (!t || t->phase != TracePhase::exchanging) return;
    t->exchange_deficit--;
    exchange_learn(*t, r.outside_reachable);
    exchange_quiesce_check(*t);
}

void World::handle_liveness_forward(MachineState& m, const MsgLivenessForward& f) {
    PartialTrace* t = find_trace(f.to);
    if (!t) return;
    if (!t->exchange_engaged) {
        // re-engaged under the sender; the ack waits for our own quiescence
        t->exchange_engaged = true;
        t->exchange_parent = f.from;
    } else {
        send_to_trace(t->id, f.from, MsgExchangeAck{t->id, f.from});
    }
    exchange_learn(*t, f.outside_reachable);
    exchange_quiesce_check(*t);
}

void World::handle_exchange_ack(MachineState& m, const MsgExchangeAck& a) {
    PartialTrace* t = find_trace(a.to);
    if (!t || t->phase != TracePhase::exchanging) return;
    t->exchange_deficit--;
    exchange_quiesce_check(*t);
}

void World::exchange_learn(PartialTrace& t, const std::set<ObjectId>& outside) {
    std::set<ObjectId> fresh;
    for (ObjectId obj : outside)
        if (t.outside_objects.insert(obj).second) fresh.insert(obj);
    if (fresh.empty()) return;
    // later-learned liveness is forwarded to earlier responders
    std::set<ObjectId> closure = outside_closure(t);
    for (auto& [asker, objs] : t.asked_by) {
        std::set<ObjectId> additions;
        for (ObjectId obj : objs) {
            if ((closure.count(obj) || t.outside_objects.count(obj)) &&
                !t.reported_to[asker].count(obj))
                additions.insert(obj);
        }
        if (!additions.empty()) {
            t.reported_to[asker].insert(additions.begin(), additions.end());
            send_to_trace(t.id, asker, MsgLivenessForward{t.id, asker, additions});
            t.exchange_deficit++;
        }
    }
}

void World::exchange_quiesce_check(PartialTrace& t) {
    if (t.phase != TracePhase::exchanging) return;
    if (!t.exchange_engaged || t.exchange_deficit > 0) return;
    t.exchange_engaged = false;
    if (t.exchange_parent == t.id) {
        // root of the exchange tree: global quiescence, distribute sweep
        MsgDoneBcast db;
        db.from = t.id;
        db.phase = 3;
        db.epoch = t.token.epoch;
        for (const TraceId& z : t.group) {
            if (z == t.id) continue;
            db.to = z;
            send_to_trace(t.id, z, db);
        }
        db.to = t.id;
        handle_done_bcast(machines_.at(t.id.initiator.host), db);
        return;
    }
    send_to_trace(t.id, t.exchange_parent, MsgExchangeAck{t.id, t.exchange_parent});
}

// ---------------------------------------------------------------------------
// re-mark black (initiator failure during phase 2)
// ---------------------------------------------------------------------------

void World::handle_re_mark_black(MachineState& m, const MsgReMarkBlack& rmb) {
    auto eit = m.entries.find(rmb.target);
    MsgReMarkBlackReply reply;
    reply.trace = rmb.trace;
    reply.at_object = rmb.target;
    if (eit == m.entries.end() || eit->second.color != Color::black) {
        reply.attached_to = TraceId{};  // collected or whitened
        net_.send(m.id, rmb.trace.initiator.host, reply);
        return;
    }
    EntryItem& e = eit->second;
    if (e.black_by == rmb.failed) {
        // attached to the first trace that asks
        e.black_by = rmb.trace;
        reply.attached_to = rmb.trace;
        reply.fresh = true;
        reply.live = e.black_live;
        reply.edges = e.black_edges;
        reply.boundary = e.black_boundary;
    } else {
        reply.attached_to = e.black_by;
    }
    net_.send(m.id, rmb.trace.initiator.host, reply);
}

void World::handle_re_mark_black_reply(MachineState& m, const MsgReMarkBlackReply& rr) {
    PartialTrace* t = find_trace(rr.trace);
    if (!t) return;
    t->rmb_outstanding.erase(rr.at_object);
    if (valid(rr.attached_to.initiator)) {
        if (rr.fresh) {
            t->outside_flag = t->outside_flag || rr.live;
            t->reach_edges.insert(t->reach_edges.end(), rr.edges.begin(), rr.edges.end());
            for (const auto& [z, objs] : rr.boundary) {
                if (z == t->id) continue;
                if (machines_.count(z.initiator.host) && !net_.alive(z.initiator.host)) {
                    // the boundary names another failed trace: repeat
                    for (ObjectId obj : objs) {
                        net_.send(t->id.initiator.host, obj.host, MsgReMarkBlack{t->id, z, obj});
                        t->rmb_outstanding.insert(obj);
                    }
                } else {
                    t->neighbors[z].insert(objs.begin(), objs.end());
                }
            }
        } else if (rr.attached_to != t->id) {
            t->neighbors[rr.attached_to].insert(rr.at_object);
        }
    }
    if (t->rmb_outstanding.empty() && t->has_token) advance_token(*t);
}

}  // namespace dgc
