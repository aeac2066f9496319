#include <algorithm>

#include "dgc/world.hpp"

namespace dgc {

// Objects to keep out of a garbage sweep: purple, or locally reachable from
// roots, temp roots or purple entries at sweep instant. Purple entries count
// as pseudo-roots so the keep-set is closed under local reachability.
bool World::sweep_keep(MachineState& m, const EntryItem& e) {
    if (e.color == Color::purple) return true;
    std::set<ObjectId> seeds = m.roots;
    for (const auto& [obj, n] : m.temp_roots)
        if (n > 0) seeds.insert(obj);
    for (const auto& [obj, other] : m.entries)
        if (other.color == Color::purple && m.objects.count(obj)) seeds.insert(obj);
    std::set<ObjectId> objs, exits;
    mark_from(m, seeds, objs, exits);
    return objs.count(e.obj) != 0;
}

void World::finish_trace(MachineId mid, const TraceId& id, bool live, const char* outcome) {
    MachineState& m = machines_.at(mid);
    auto it = m.traces.find(id);
    if (it == m.traces.end()) return;
    PartialTrace& t = it->second;
    t.phase = TracePhase::completed;
    t.verdict_live = live;
    t.has_token = false;
    net_.log_line(mid, "TRACE_END", to_string(id) + " " + outcome);
    net_.count(live ? "traces.live" : "traces.collected");
}

void World::sweep_exit_record(MachineState& m, ExitBlackRecord& rec, const TraceId& trace) {
    if (rec.swept) return;
    rec.swept = true;
    for (ObjectId r : rec.backlist) {
        auto eit = m.entries.find(r);
        if (eit == m.entries.end()) continue;
        EntryItem& e = eit->second;
        if (e.color == Color::black && e.black_by == trace) {
            // reclaim or keep, then forward along the black tree
            bool keep = sweep_keep(m, e);
            std::set<ExitItemId> forward = e.sent_black_to;
            std::vector<ObjectId> gray_children = e.sent_gray_to;
            if (keep) {
                net_.count("sweep.kept");
                whiten(m, e, true, "sweep kept");
            } else {
                for (const auto& ex : forward)
                    net_.send(m.id, ex.owner, MsgSweep{trace, ex.target, e.obj, m.id});
                for (ObjectId gt : gray_children)
                    net_.send(m.id, gt.host, MsgMarkWhite{trace, gt, e.obj, m.id});
                e.sent_gray_to.clear();
                reclaim_object(m, e.obj, "sweep");
            }
        }
    }
}

void World::handle_sweep(MachineState& m, const MsgSweep& sw) {
    auto& records = exit_records_[m.id];
    bool any = false;
    for (auto& rec : records) {
        if (rec.trace == sw.trace && rec.exit.target == sw.target && !rec.swept) {
            sweep_exit_record(m, rec, sw.trace);
            any = true;
        }
    }
    if (!any) {
        // exit already handled (or never traced here); nothing to do
        net_.count("sweep.noop");
    }
}

void World::sweep_trace(MachineId mid, const TraceId& id, bool live) {
    MachineState& m = machines_.at(mid);
    auto tit = m.traces.find(id);
    if (tit == m.traces.end()) return;
    PartialTrace& t = tit->second;
    if (t.phase == TracePhase::completed || t.phase == TracePhase::dissolved) return;
    bool tainted = t.fault_tainted;
    net_.log_line(mid, "SWEEP", to_string(id) + (live ? " live" : " garbage"));

    auto eit = m.entries.find(t.root);
    if (eit == m.entries.end()) {
        finish_trace(mid, id, live, live ? "live" : "root gone");
        return;
    }
    EntryItem& e = eit->second;

    if (live) {
        if (e.colored()) whiten(m, e, true, "sweep live");
        // a faulted trace's initiator stays vulnerable and active to retry
        auto again = m.entries.find(t.root);
        if (tainted && again != m.entries.end()) {
            again->second.vulnerable = true;
            again->second.active = true;
            net_.log_line(mid, "RETRY_ELIGIBLE", to_string(t.root));
        }
        finish_trace(mid, id, true, "live");
        net_.request_slot(mid);
        return;
    }

    // garbage: reclaim the black region, release the gray tree
    if (e.color == Color::black && e.black_by == id) {
        if (sweep_keep(m, e)) {
            whiten(m, e, true, "sweep kept");
            net_.count("sweep.kept");
        } else {
            for (const auto& ex : e.sent_black_to)
                net_.send(mid, ex.owner, MsgSweep{id, ex.target, e.obj, mid});
            for (ObjectId gt : e.sent_gray_to)
                net_.send(mid, gt.host, MsgMarkWhite{id, gt, e.obj, mid});
            e.sent_gray_to.clear();
            reclaim_object(m, e.obj, "sweep");
        }
    } else if (e.colored()) {
        whiten(m, e, true, "sweep");
    }
    finish_trace(mid, id, false, "collected");
    net_.request_slot(mid);
}

}  // namespace dgc
