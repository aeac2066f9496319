#include "dgc/world.hpp"

#include <algorithm>
#include <cassert>
#include <sstream>

namespace dgc {

World::World(WorldConfig cfg) : cfg_(cfg), net_(cfg.seed, cfg.latency_max) {
    if (cfg_.block_timeout == 0) cfg_.block_timeout = 40 * cfg_.latency_max;
}

MachineId World::add_machine() {
    MachineId id = next_machine_++;
    MachineState m;
    m.id = id;
    machines_.emplace(id, std::move(m));
    return id;
}

// ---------------------------------------------------------------------------
// heap helpers
// ---------------------------------------------------------------------------

Object* World::find_object(ObjectId id) {
    auto mit = machines_.find(id.host);
    if (mit == machines_.end()) return nullptr;
    auto oit = mit->second.objects.find(id);
    return oit == mit->second.objects.end() ? nullptr : &oit->second;
}

bool World::object_exists(ObjectId id) const {
    auto mit = machines_.find(id.host);
    if (mit == machines_.end()) return false;
    return mit->second.objects.count(id) != 0;
}

const EntryItem* World::find_entry(ObjectId id) const {
    auto mit = machines_.find(id.host);
    if (mit == machines_.end()) return nullptr;
    auto eit = mit->second.entries.find(id);
    return eit == mit->second.entries.end() ? nullptr : &eit->second;
}

std::set<ObjectId> World::all_objects() const {
    std::set<ObjectId> out;
    for (const auto& [id, m] : machines_)
        for (const auto& [oid, _] : m.objects) out.insert(oid);
    return out;
}

EntryItem& World::ensure_entry(MachineState& m, ObjectId obj) {
    auto it = m.entries.find(obj);
    if (it == m.entries.end()) {
        EntryItem e;
        e.obj = obj;
        it = m.entries.emplace(obj, std::move(e)).first;
    }
    return it->second;
}

Timestamp World::stamp(MachineState& m) { return Timestamp{net_.now(), m.ts_seq++}; }

void World::add_violation(const std::string& kind, const std::string& detail) {
    violations_.push_back({net_.now(), kind, detail});
    net_.log_line(0, "VIOLATION", kind + ": " + detail);
}

void World::subscribe(MachineId watcher, MachineId watched) {
    if (watcher == watched) return;
    net_.subscribe_failure(watcher, watched);
}

// ---------------------------------------------------------------------------
// mutator operations
// ---------------------------------------------------------------------------

std::optional<ObjectId> World::create_object(MachineId mid, bool rooted) {
    auto it = machines_.find(mid);
    if (it == machines_.end() || !it->second.alive) return std::nullopt;
    MachineState& m = it->second;
    ObjectId id{mid, m.next_serial++};
    Object obj;
    obj.id = id;
    m.objects.emplace(id, std::move(obj));
    if (rooted) m.roots.insert(id);
    net_.log_line(mid, "CREATE", to_string(id) + (rooted ? " rooted" : ""));
    net_.request_slot(mid);
    return id;
}

bool World::mutate_local_edge(ObjectId src, ObjectId dst, bool add) {
    if (src.host != dst.host) return false;  // cross-machine pair rejected
    Object* s = find_object(src);
    if (!s || !find_object(dst)) return false;
    MachineState& m = machines_.at(src.host);
    if (!m.alive) return false;
    if (add)
        s->local_refs.insert(dst);
    else
        s->local_refs.erase(dst);
    net_.log_line(m.id, add ? "LINK" : "UNLINK", to_string(src) + "->" + to_string(dst));
    net_.request_slot(m.id);
    return true;
}

bool World::export_reference(MachineId from, ObjectId target, MachineId to, ObjectId holder,
                             bool persistent) {
    auto fit = machines_.find(from);
    auto tit = machines_.find(to);
    if (fit == machines_.end() || tit == machines_.end()) return false;
    MachineState& sender = fit->second;
    if (!sender.alive) return false;
    // creation requires hosting the target, duplication an exit item for it
    bool creator = (from == target.host);
    if (creator) {
        if (!sender.objects.count(target)) return false;
    } else if (!sender.exits.count(target)) {
        return false;
    }
    if (valid(holder) && holder.host != to) return false;

    Timestamp ts = stamp(sender);
    if (creator) {
        EntryItem& e = ensure_entry(sender, target);
        (void)e;
    }
    MsgInsert ins{target, to, ts, persistent};
    if (target.host == from) {
        apply_insert(sender, ins);  // host's own entry list, applied locally
    } else {
        net_.send(from, target.host, ins);
    }
    net_.send(from, to, MsgRefTransfer{target, holder, ts, persistent});
    net_.log_line(from, "EXPORT", to_string(target) + " to=M" + std::to_string(to));
    return true;
}

void World::materialize_exit(MachineState& m, const MsgRefTransfer& t) {
    auto it = m.exits.find(t.target);
    bool fresh = it == m.exits.end();
    if (fresh) {
        ExitItem ex;
        ex.target = t.target;
        ex.persistent = t.persistent;
        ex.birth_ts = t.ts;
        m.exits.emplace(t.target, ex);
        // The receiver announces its own membership. Redundant with the
        // sender's insert in the common case; duplicates are safely ignored,
        // and this pins the member-clock ordering for later deletes.
        if (t.target.host == m.id) {
            apply_insert(m, MsgInsert{t.target, m.id, stamp(m), t.persistent});
        } else {
            net_.send(m.id, t.target.host, MsgInsert{t.target, m.id, stamp(m), t.persistent});
        }
        subscribe(m.id, t.target.host);
    } else if (t.persistent) {
        it->second.persistent = true;
    }
    if (valid(t.holder) && m.objects.count(t.holder)) {
        m.objects.at(t.holder).exit_refs.insert(t.target);
    } else {
        m.handle_roots.insert(t.target);
    }
    net_.request_slot(m.id);
}

bool World::delete_remote_reference(MachineId mid, ObjectId target) {
    auto it = machines_.find(mid);
    if (it == machines_.end() || !it->second.alive) return false;
    MachineState& m = it->second;
    if (!m.exits.count(target)) return false;
    net_.log_line(mid, "DELETE_REF", to_string(target));
    delete_exit_item(m, target, true);
    for (auto& [oid, obj] : m.objects) obj.exit_refs.erase(target);
    m.handle_roots.erase(target);
    net_.request_slot(mid);
    return true;
}

void World::delete_exit_item(MachineState& m, ObjectId target, bool notify) {
    auto it = m.exits.find(target);
    if (it == m.exits.end()) return;
    m.exits.erase(it);
    m.exitlist_inverse.erase(target);
    m.old_precursors.erase(target);
    m.exit_was_reachable.erase(target);
    if (notify && machines_.count(target.host)) {
        net_.send(m.id, target.host, MsgDelete{target, m.id, stamp(m)});
    }
}

bool World::attach_exit(ObjectId holder, ObjectId target) {
    Object* h = find_object(holder);
    if (!h) return false;
    MachineState& m = machines_.at(holder.host);
    if (!m.alive || !m.exits.count(target)) return false;
    h->exit_refs.insert(target);
    m.handle_roots.erase(target);
    net_.log_line(m.id, "ATTACH", to_string(holder) + "->" + to_string(target));
    net_.request_slot(m.id);
    return true;
}

bool World::detach_exit(ObjectId holder, ObjectId target) {
    Object* h = find_object(holder);
    if (!h) return false;
    MachineState& m = machines_.at(holder.host);
    if (!m.alive) return false;
    h->exit_refs.erase(target);
    net_.log_line(m.id, "DETACH", to_string(holder) + "->" + to_string(target));
    net_.request_slot(m.id);
    return true;
}

bool World::set_root(ObjectId obj, bool rooted) {
    Object* o = find_object(obj);
    if (!o) return false;
    MachineState& m = machines_.at(obj.host);
    if (!m.alive) return false;
    if (rooted)
        m.roots.insert(obj);
    else
        m.roots.erase(obj);
    net_.log_line(m.id, rooted ? "ROOT" : "UNROOT", to_string(obj));
    net_.request_slot(m.id);
    return true;
}

bool World::remote_invoke(MachineId mid, ObjectId target, SimTime duration) {
    auto it = machines_.find(mid);
    if (it == machines_.end() || !it->second.alive) return false;
    if (!it->second.exits.count(target)) return false;
    net_.send(mid, target.host, MsgInvoke{target, duration});
    net_.log_line(mid, "INVOKE_SENT", to_string(target));
    return true;
}

void World::crash(MachineId m, SimTime t) { net_.schedule_crash(m, t); }

// ---------------------------------------------------------------------------
// scheduler
// ---------------------------------------------------------------------------

bool World::step() {
    auto popped = net_.step();
    if (!popped) return false;
    auto& [ev, msg] = *popped;

    if (std::holds_alternative<EvDeliver>(ev.body)) {
        handle_message(ev.machine, *msg);
    } else if (std::holds_alternative<EvCrash>(ev.body)) {
        machines_.at(ev.machine).alive = false;
        net_.count("crashes");
    } else if (auto* f = std::get_if<EvFailureNotify>(&ev.body)) {
        handle_failure_notification(ev.machine, f->failed);
    } else if (std::holds_alternative<EvLocalSlot>(ev.body)) {
        on_local_slot(ev.machine);
    } else if (auto* tr = std::get_if<EvTempRootExpire>(&ev.body)) {
        MachineState& m = machines_.at(ev.machine);
        auto it = m.temp_roots.find(tr->obj);
        if (it != m.temp_roots.end() && --it->second <= 0) m.temp_roots.erase(it);
        net_.request_slot(ev.machine);
    } else if (auto* sc = std::get_if<EvScenarioStep>(&ev.body)) {
        if (scenario_step) scenario_step(sc->index);
    } else if (auto* pk = std::get_if<EvParkTimeout>(&ev.body)) {
        resolve_park_timeout(ev.machine, pk->park_id);
    }

    if (cfg_.invariant_checks) check_invariants();
    return true;
}

void World::run_until(SimTime t) {
    while (auto next = net_.next_time()) {
        if (*next > t) break;
        if (!step()) break;
    }
}

void World::run_until_quiescent(uint64_t limit) {
    uint64_t n = 0;
    while (step()) {
        if (++n >= limit) {
            add_violation("protocol", "event limit reached before quiescence");
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// reference listing
// ---------------------------------------------------------------------------

void World::apply_insert(MachineState& m, const MsgInsert& ins) {
    if (!m.objects.count(ins.target)) return;  // reclaimed meanwhile; stale
    EntryItem& e = ensure_entry(m, ins.target);
    auto it = e.entry_list.find(ins.member);
    if (it != e.entry_list.end()) {
        if (ins.ts <= it->second.ts) return;  // duplicate, safely ignored
        it->second.ts = ins.ts;
        it->second.persistent = it->second.persistent || ins.persistent;
    } else {
        e.entry_list[ins.member] = EntryListSlot{ins.ts, ins.persistent};
        subscribe(m.id, ins.member);
    }
    if (e.colored()) purple_barrier(m, e, "remote-ref-created");
    net_.request_slot(m.id);
}

void World::apply_delete(MachineState& m, const MsgDelete& del) {
    auto eit = m.entries.find(del.target);
    if (eit == m.entries.end()) return;
    EntryItem& e = eit->second;
    auto it = e.entry_list.find(del.member);
    if (it == e.entry_list.end()) return;           // no-op
    if (del.ts <= it->second.ts) return;            // smaller timestamp: ignored
    e.entry_list.erase(it);
    reflist_member_gone(m, e, del.member);
}

// Shared tail of member removal (delete message or machine failure): drop the
// entrycolors slot, re-evaluate inactive reactivation and unblock parks.
void World::reflist_member_gone(MachineState& m, EntryItem& e, MachineId member) {
    e.entrycolors.erase(member);
    uint64_t guard = heuristic_guard_begin();
    on_inactive_progress(m, e);
    heuristic_guard_end(guard, "on_inactive_progress");
    resume_parks(m.id, e.obj);
    net_.request_slot(m.id);
}

// ---------------------------------------------------------------------------
// local collector
// ---------------------------------------------------------------------------

void mark_from(const MachineState& m, const std::set<ObjectId>& from, std::set<ObjectId>& objects,
               std::set<ObjectId>& exit_targets) {
    std::vector<ObjectId> stack(from.begin(), from.end());
    while (!stack.empty()) {
        ObjectId id = stack.back();
        stack.pop_back();
        auto it = m.objects.find(id);
        if (it == m.objects.end()) continue;
        if (!objects.insert(id).second) continue;
        for (ObjectId r : it->second.local_refs) stack.push_back(r);
        for (ObjectId x : it->second.exit_refs)
            if (m.exits.count(x)) exit_targets.insert(x);
    }
}

LocalGcReport World::run_local_gc(MachineId mid) {
    MachineState& m = machines_.at(mid);
    LocalGcReport rep;
    if (!m.alive) return rep;

    std::set<ObjectId> root_seeds = m.roots;
    for (const auto& [obj, n] : m.temp_roots)
        if (n > 0) root_seeds.insert(obj);
    mark_from(m, root_seeds, rep.live, rep.live_exits);

    std::set<ObjectId> pseudo;
    for (const auto& [obj, e] : m.entries)
        if (!e.entry_list.empty() && m.objects.count(obj)) pseudo.insert(obj);
    std::set<ObjectId> via_entries, entry_exits;
    mark_from(m, pseudo, via_entries, entry_exits);
    for (ObjectId o : via_entries)
        if (!rep.live.count(o)) rep.isolated.insert(o);
    for (ObjectId x : entry_exits)
        if (!rep.live_exits.count(x)) rep.isolated_exits.insert(x);
    // handle roots pin their exit items (received locators not yet stored)
    for (ObjectId x : m.handle_roots)
        if (m.exits.count(x)) rep.live_exits.insert(x);

    // reclaim unreachable objects
    std::vector<ObjectId> dead;
    for (const auto& [oid, obj] : m.objects)
        if (!rep.live.count(oid) && !rep.isolated.count(oid)) dead.push_back(oid);
    for (ObjectId oid : dead) {
        reclaim_object(m, oid, "reflist");
        rep.reclaimed.push_back(oid);
    }

    // delete exit items reachable from nothing
    std::vector<ObjectId> dead_exits;
    for (const auto& [target, ex] : m.exits)
        if (!rep.live_exits.count(target) && !rep.isolated_exits.count(target))
            dead_exits.push_back(target);
    for (ObjectId t : dead_exits) {
        net_.log_line(mid, "EXIT_DROP", to_string(t));
        delete_exit_item(m, t, true);
    }

    // locally-reachable -> isolated transitions fire the heuristic hook
    std::vector<ObjectId> newly_isolated;
    for (const auto& [target, ex] : m.exits) {
        bool reachable = rep.live_exits.count(target) != 0;
        auto prev = m.exit_was_reachable.find(target);
        bool was_reachable = prev == m.exit_was_reachable.end() || prev->second;
        if (!reachable && was_reachable && rep.isolated_exits.count(target))
            newly_isolated.push_back(target);
        m.exit_was_reachable[target] = reachable;
    }
    for (ObjectId t : newly_isolated) exit_isolated_hook(m, t, rep);
    return rep;
}

void World::reclaim_object(MachineState& m, ObjectId id, const char* how) {
    auto it = m.objects.find(id);
    if (it == m.objects.end()) return;
    auto eit = m.entries.find(id);
    if (eit != m.entries.end()) {
        EntryItem& e = eit->second;
        if (e.color == Color::purple)
            add_violation("protocol", "reclaiming purple object " + to_string(id));
        if (e.colored()) release_trace_state(m, e);
        m.entries.erase(eit);
    }
    m.objects.erase(it);
    m.roots.erase(id);
    m.temp_roots.erase(id);
    for (auto& [oid, obj] : m.objects) obj.local_refs.erase(id);
    net_.log_line(m.id, "RECLAIM", to_string(id) + " via=" + how);
    net_.count(std::string("reclaimed.") + how);
    resume_parks(m.id, id);
    if (on_reclaim) on_reclaim(id);
}

std::vector<ObjectId> World::compute_exitlist(MachineId mid, ObjectId entry) {
    MachineState& m = machines_.at(mid);
    EntryItem& e = ensure_entry(m, entry);
    if (e.exitlist_state == ExitlistState::valid) {
        net_.count("exitlist.cache_hit");
        return e.exitlist;
    }
    net_.count("exitlist.compute");
    // fresh local reachability; only isolated exit items may carry a trace
    LocalGcReport rep = run_local_gc(mid);
    std::set<ObjectId> objs, exits;
    if (m.objects.count(entry)) mark_from(m, {entry}, objs, exits);
    std::vector<ObjectId> result;
    for (ObjectId x : exits)
        if (rep.isolated_exits.count(x)) result.push_back(x);
    set_exitlist(m, e, std::move(result));
    if (e.barrier_pending) {
        e.barrier_pending = false;
        transfer_barrier(m, entry);  // reapplied once to the fresh list
    }
    return e.exitlist;
}

void World::set_exitlist(MachineState& m, EntryItem& e, std::vector<ObjectId> exits) {
    for (ObjectId old : e.exitlist) {
        auto inv = m.exitlist_inverse.find(old);
        if (inv != m.exitlist_inverse.end()) inv->second.erase(e.obj);
    }
    e.exitlist = std::move(exits);
    std::sort(e.exitlist.begin(), e.exitlist.end());
    e.exitlist_state = ExitlistState::valid;
    e.exitlist_epoch = m.barrier_epoch;
    for (ObjectId x : e.exitlist) m.exitlist_inverse[x].insert(e.obj);
}

void World::invalidate_exitlist(MachineState& m, ObjectId entry) {
    auto it = m.entries.find(entry);
    if (it == m.entries.end()) return;
    if (it->second.exitlist_state == ExitlistState::valid)
        it->second.exitlist_state = ExitlistState::out_of_date;
}

std::pair<std::set<ObjectId>, bool> World::compute_backlist(MachineId mid, ObjectId exit_target) {
    MachineState& m = machines_.at(mid);
    LocalGcReport rep = run_local_gc(mid);
    std::set<ObjectId> entries;
    bool live = rep.live_exits.count(exit_target) != 0;
    for (const auto& [obj, e] : m.entries) {
        if (!m.objects.count(obj) || e.entry_list.empty()) continue;
        std::set<ObjectId> objs, exits;
        mark_from(m, {obj}, objs, exits);
        if (exits.count(exit_target)) {
            entries.insert(obj);
            if (e.color == Color::white) live = true;
        }
    }
    return {entries, live};
}

PrecursorResult World::compute_precursors(MachineId mid, ObjectId exit_target) {
    MachineState& m = machines_.at(mid);
    LocalGcReport rep = run_local_gc(mid);
    return precursors_with_report(m, exit_target, rep);
}

PrecursorResult World::precursors_with_report(MachineState& m, ObjectId exit_target,
                                              const LocalGcReport& rep) {
    PrecursorResult res;
    if (rep.live_exits.count(exit_target)) {
        res.live_blocked = true;  // live object on the back trace
        return res;
    }
    for (const auto& [obj, e] : m.entries) {
        if (e.entry_list.empty() || !m.objects.count(obj)) continue;
        if (!rep.isolated.count(obj)) continue;
        // restricted to isolated objects
        std::set<ObjectId> objs, exits;
        std::vector<ObjectId> stack{obj};
        while (!stack.empty()) {
            ObjectId id = stack.back();
            stack.pop_back();
            auto oit = m.objects.find(id);
            if (oit == m.objects.end()) continue;
            if (!rep.isolated.count(id)) continue;
            if (!objs.insert(id).second) continue;
            for (ObjectId r : oit->second.local_refs) stack.push_back(r);
            for (ObjectId x : oit->second.exit_refs)
                if (m.exits.count(x)) exits.insert(x);
        }
        if (exits.count(exit_target)) res.precursors.insert(obj);
    }
    return res;
}

// ---------------------------------------------------------------------------
// barriers
// ---------------------------------------------------------------------------

void World::purple_barrier(MachineState& m, EntryItem& e, const char* cause) {
    if (e.color != Color::gray && e.color != Color::black) return;
    bool was_black = e.color == Color::black;
    e.color = Color::purple;
    net_.log_line(m.id, "PURPLE", to_string(e.obj) + " cause=" + cause);
    net_.count("purpled");
    if (was_black) e.black_live = true;  // a trace meeting a purple object returns live
    resume_parks(m.id, e.obj);
}

void World::transfer_barrier(MachineState& m, ObjectId obj) {
    auto it = m.entries.find(obj);
    m.barrier_epoch++;
    std::set<ObjectId> mine;
    if (it != m.entries.end()) {
        EntryItem& e = it->second;
        if (e.exitlist_state == ExitlistState::valid) {
            mine.insert(e.exitlist.begin(), e.exitlist.end());
        } else if (e.exitlist_state == ExitlistState::out_of_date) {
            // recomputation pending: record and reapply when available
            e.barrier_pending = true;
            mine.insert(e.exitlist.begin(), e.exitlist.end());
        }
    }
    // overlapping exitlists found via inverse images
    std::set<ObjectId> stale;
    for (ObjectId x : mine) {
        auto inv = m.exitlist_inverse.find(x);
        if (inv == m.exitlist_inverse.end()) continue;
        for (ObjectId y : inv->second)
            if (y != obj) stale.insert(y);
    }
    for (ObjectId y : stale) {
        invalidate_exitlist(m, y);
        net_.log_line(m.id, "EXITLIST_STALE", to_string(y));
    }
    if (it != m.entries.end() && it->second.exitlist_state == ExitlistState::valid) {
        it->second.exitlist_state = ExitlistState::out_of_date;  // discarded
    }
    net_.count("transfer_barrier");
}

// ---------------------------------------------------------------------------
// heuristic
// ---------------------------------------------------------------------------

bool World::is_eligible(const MachineState& m, const EntryItem& e) const {
    if (!e.vulnerable || !e.active) return false;
    if (e.colored()) return false;  // currently being traced
    if (e.entry_list.empty()) return false;
    if (!m.objects.count(e.obj)) return false;
    // isolated: not locally reachable
    std::set<ObjectId> seeds = m.roots;
    for (const auto& [obj, n] : m.temp_roots)
        if (n > 0) seeds.insert(obj);
    std::set<ObjectId> objs, exits;
    mark_from(m, seeds, objs, exits);
    return objs.count(e.obj) == 0;
}

uint64_t World::heuristic_guard_begin() { return net_.counters()["msg.total"]; }

void World::heuristic_guard_end(uint64_t before, const char* hook) {
    uint64_t after = net_.counters()["msg.total"];
    if (after != before)
        add_violation("protocol", std::string("heuristic hook sent messages: ") + hook);
}

void World::init_entrycolors(EntryItem& e) {
    e.entrycolors.clear();
    for (const auto& [member, slot] : e.entry_list) e.entrycolors[member];  // all white
}

void World::record_request_color(MachineState& m, EntryItem& e, MachineId member, Color c,
                                 const TraceId& by) {
    auto it = e.entrycolors.find(member);
    if (it == e.entrycolors.end()) {
        if (!e.entry_list.count(member)) return;  // not (or no longer) a member
        it = e.entrycolors.emplace(member, EntryColorSlot{}).first;
    }
    if (static_cast<int>(c) > static_cast<int>(it->second.color)) it->second.color = c;
    it->second.by.insert(by);
}

void World::on_trace_end(MachineState& m, EntryItem& e) {
    e.has_traced = true;
    e.white_at_end.clear();
    bool any_white = false;
    for (const auto& [member, slot] : e.entrycolors) {
        if (slot.color == Color::white) {
            any_white = true;
            e.white_at_end.insert(member);
        }
    }
    if (!any_white) {
        // every incoming reference was traced: an uphill entry item can
        // reliably initiate collection
        e.vulnerable = false;
        e.active = true;
    } else {
        e.active = false;
        e.vulnerable = true;
    }
    net_.log_line(m.id, "BITS",
                  to_string(e.obj) + (e.vulnerable ? " vul" : " invul") +
                      (e.active ? " act" : " inact"));
}

void World::on_inactive_progress(MachineState& m, EntryItem& e) {
    if (e.active || !e.has_traced) return;
    // reactivate once every formerly-white slot has been colored, or its
    // member reclaimed/deleted; vulnerability is unchanged (a case-2 entry is
    // vulnerable by construction)
    for (MachineId member : e.white_at_end) {
        auto it = e.entrycolors.find(member);
        if (it == e.entrycolors.end()) continue;         // member gone
        if (it->second.color == Color::white) return;    // still white
    }
    e.active = true;
    net_.log_line(m.id, "REACTIVATE", to_string(e.obj));
    net_.request_slot(m.id);
}

void World::on_remote_failure(MachineState& m, EntryItem& e, MachineId member, bool persistent) {
    if (persistent) return;  // take no action
    e.vulnerable = true;     // conservatively maintain completeness
    // activity updated as if the member's reference were deleted
    e.entrycolors.erase(member);
    on_inactive_progress(m, e);
}

void World::exit_isolated_hook(MachineState& m, ObjectId exit_target, const LocalGcReport& rep) {
    uint64_t guard = heuristic_guard_begin();
    PrecursorResult res = precursors_with_report(m, exit_target, rep);
    if (res.live_blocked) {
        heuristic_guard_end(guard, "on_exit_isolated");
        return;  // wait for the next isolation event
    }
    auto memo = m.old_precursors.find(exit_target);
    bool have_old = memo != m.old_precursors.end();
    const std::set<ObjectId>& oldp = have_old ? memo->second.precursors : res.precursors;

    bool any_eligible = false;
    for (ObjectId p : res.precursors) {
        auto eit = m.entries.find(p);
        if (eit != m.entries.end() && is_eligible(m, eit->second)) any_eligible = true;
    }
    if (!any_eligible) {
        // entries whose stored exitlist does not name this exit item
        std::vector<ObjectId> lacking;
        bool all_list = true;
        for (ObjectId p : res.precursors) {
            auto eit = m.entries.find(p);
            bool lists = false;
            if (eit != m.entries.end() && eit->second.exitlist_state != ExitlistState::absent) {
                const auto& xl = eit->second.exitlist;
                lists = std::find(xl.begin(), xl.end(), exit_target) != xl.end();
            }
            if (!lists) {
                all_list = false;
                lacking.push_back(p);
            }
        }
        if (!all_list && !lacking.empty()) {
            // second case: reset the smallest such entry
            ObjectId b = *std::min_element(lacking.begin(), lacking.end());
            auto& e = m.entries.at(b);
            e.active = true;
            e.vulnerable = true;
            net_.log_line(m.id, "RESET_ELIGIBLE", to_string(b) + " case=2");
            net_.request_slot(m.id);
        } else if (have_old && oldp != res.precursors && !res.precursors.empty()) {
            // fourth case: precursor set changed while locally reachable
            ObjectId b = *res.precursors.begin();
            auto& e = m.entries.at(b);
            e.active = true;
            e.vulnerable = true;
            net_.log_line(m.id, "RESET_ELIGIBLE", to_string(b) + " case=4");
            net_.request_slot(m.id);
        }
        // third case (identical precursors, all listing): nothing to do
    }
    m.old_precursors[exit_target] = PrecursorMemo{false, res.precursors};
    heuristic_guard_end(guard, "on_exit_isolated");
}

// ---------------------------------------------------------------------------
// slots: local GC + trace initiation
// ---------------------------------------------------------------------------

void World::on_local_slot(MachineId mid) {
    MachineState& m = machines_.at(mid);
    if (!m.alive) return;
    run_local_gc(mid);

    // re-dispatch parked trace requests (exitlists recompute on demand now)
    if (!m.parked.empty()) {
        std::vector<SimMessage> parked;
        parked.swap(m.parked);
        for (const auto& msg : parked) handle_message(mid, msg);
    }
    run_due_parks(mid);

    if (!cfg_.cyclic_tracer) return;
    // eligible entries start traces without undue delay
    std::vector<ObjectId> starts;
    for (const auto& [obj, e] : m.entries)
        if (is_eligible(m, e)) starts.push_back(obj);
    for (ObjectId obj : starts) {
        auto it = m.entries.find(obj);
        if (it != m.entries.end() && is_eligible(m, it->second)) start_trace(mid, obj);
    }
}

// ---------------------------------------------------------------------------
// parked blocks
// ---------------------------------------------------------------------------

void World::park_block(MachineId mid, ObjectId blocking, std::optional<SimMessage> msg,
                       std::optional<TraceId> begin) {
    ParkedBlock pb;
    pb.id = next_park_++;
    pb.machine = mid;
    pb.blocking = blocking;
    pb.msg = std::move(msg);
    pb.begin_phase2 = begin;
    pb.timeout_event = net_.schedule_cancellable(mid, net_.now() + cfg_.block_timeout,
                                                 EvParkTimeout{pb.id});
    net_.count("phase2.blocked");
    parks_[mid].emplace(pb.id, std::move(pb));
}

void World::resume_parks(MachineId mid, ObjectId blocking) {
    auto it = parks_.find(mid);
    if (it == parks_.end()) return;
    bool any = false;
    for (auto& [id, pb] : it->second) {
        if (pb.blocking == blocking && !pb.due) {
            pb.due = true;
            net_.cancel(pb.timeout_event);
            any = true;
        }
    }
    if (any) net_.request_slot(mid);  // resumed only by the scheduler
}

void World::run_due_parks(MachineId mid) {
    auto it = parks_.find(mid);
    if (it == parks_.end()) return;
    std::vector<ParkedBlock> ready;
    for (auto pit = it->second.begin(); pit != it->second.end();) {
        if (pit->second.due) {
            ready.push_back(std::move(pit->second));
            pit = it->second.erase(pit);
        } else {
            ++pit;
        }
    }
    for (auto& pb : ready) {
        if (pb.begin_phase2) {
            begin_phase2(pb.machine, *pb.begin_phase2, false);
        } else if (pb.msg) {
            handle_message(pb.machine, *pb.msg);
        }
    }
}

void World::resolve_park_timeout(MachineId mid, uint64_t park_id) {
    auto it = parks_.find(mid);
    if (it == parks_.end()) return;
    auto pit = it->second.find(park_id);
    if (pit == it->second.end()) return;
    ParkedBlock pb = std::move(pit->second);
    it->second.erase(pit);
    net_.count("phase2.block_timeout");
    net_.log_line(mid, "BLOCK_TIMEOUT", to_string(pb.blocking));
    if (pb.begin_phase2) {
        begin_phase2(pb.machine, *pb.begin_phase2, true);
    } else if (pb.msg) {
        if (auto* mb = std::get_if<MsgMarkBlack>(&pb.msg->payload)) {
            MachineState& m = machines_.at(mid);
            handle_mark_black(m, *pb.msg, *mb, true);
        } else {
            handle_message(pb.machine, *pb.msg);
        }
    }
}

}  // namespace dgc
