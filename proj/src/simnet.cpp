#include "dgc/simnet.hpp"

#include <sstream>
#include <stdexcept>

namespace dgc {

std::string to_string(const ObjectId& id) {
    std::ostringstream os;
    os << "M" << id.host << ":" << id.serial;
    return os.str();
}

std::string to_string(const TraceId& id) { return "T(" + to_string(id.initiator) + ")"; }

std::string to_string(const Timestamp& ts) {
    std::ostringstream os;
    os << ts.time << "." << ts.seq;
    return os.str();
}

std::string to_string(Color c) {
    switch (c) {
        case Color::white: return "white";
        case Color::gray: return "gray";
        case Color::black: return "black";
        case Color::purple: return "purple";
    }
    return "?";
}

SimNet::SimNet(uint64_t seed, SimTime latency_max)
    : latency_max_(latency_max ? latency_max : 1), rng_(seed) {}

std::optional<SimTime> SimNet::crash_time(MachineId m) const {
    auto it = crashed_.find(m);
    if (it == crashed_.end()) return std::nullopt;
    return it->second;
}

uint64_t SimNet::rand_range(uint64_t lo, uint64_t hi) {
    if (hi <= lo) return lo;
    return lo + rng_() % (hi - lo + 1);
}

void SimNet::send(MachineId src, MachineId dst, Payload payload) {
    if (!alive(src)) return;  // a failed process cannot send
    SimMessage msg;
    msg.src = src;
    msg.dst = dst;
    msg.send_time = now_;
    msg.seq = next_seq_++;
    SimTime lat = rand_range(1, latency_max_);
    SimTime& floor = channel_floor_[{src, dst}];
    msg.deliver_time = std::max(now_ + lat, floor);
    floor = msg.deliver_time;
    msg.payload = std::move(payload);
    count(std::string("msg.") + kind_name(msg.payload));
    count("msg.total");
    queue_.push(Event{msg.deliver_time, dst, msg.seq, EvDeliver{msg.seq}});
    in_flight_.emplace(msg.seq, std::move(msg));
}

void SimNet::schedule_crash(MachineId m, SimTime t) {
    queue_.push(Event{std::max(t, now_), m, next_seq_++, EvCrash{}});
}

bool SimNet::subscribe_failure(MachineId watcher, MachineId watched) {
    if (watcher == watched) return false;
    if (!alive(watcher)) return false;
    if (!subscribers_[watched].insert(watcher).second) return true;
    if (!alive(watched)) {
        SimTime t = now_ + rand_range(1, latency_max_);
        queue_.push(Event{t, watcher, next_seq_++, EvFailureNotify{watched}});
    }
    return true;
}

std::vector<SimMessage> SimNet::fail_flush(MachineId requester, MachineId failed) {
    if (alive(failed)) throw std::logic_error("fail_flush: machine is alive");
    std::vector<SimMessage> out;
    for (auto it = in_flight_.begin(); it != in_flight_.end();) {
        if (it->second.src == failed && it->second.dst == requester) {
            cancelled_.insert(it->first);
            out.push_back(it->second);
            it = in_flight_.erase(it);
        } else {
            ++it;
        }
    }
    return out;  // map order == seq order == channel order
}

void SimNet::schedule(MachineId m, SimTime t, EventBody body) {
    queue_.push(Event{std::max(t, now_), m, next_seq_++, std::move(body)});
}

uint64_t SimNet::schedule_cancellable(MachineId m, SimTime t, EventBody body) {
    uint64_t seq = next_seq_++;
    queue_.push(Event{std::max(t, now_), m, seq, std::move(body)});
    return seq;
}

void SimNet::cancel(uint64_t event_seq) { cancelled_.insert(event_seq); }

void SimNet::request_slot(MachineId m) {
    if (!alive(m)) return;
    if (!slot_pending_.insert(m).second) return;
    queue_.push(Event{now_ + 1, m, next_seq_++, EvLocalSlot{}});
}

std::optional<std::pair<Event, std::optional<SimMessage>>> SimNet::step() {
    while (!queue_.empty()) {
        Event ev = queue_.top();
        queue_.pop();
        now_ = std::max(now_, ev.time);

        if (cancelled_.erase(ev.seq)) continue;

        if (auto* d = std::get_if<EvDeliver>(&ev.body)) {
            auto it = in_flight_.find(d->msg_seq);
            if (it == in_flight_.end()) continue;  // flushed meanwhile
            SimMessage msg = std::move(it->second);
            in_flight_.erase(it);
            if (!alive(ev.machine)) {
                // undeliverable: discarded without notifying the sender
                count("msg.discarded");
                continue;
            }
            log_line(ev.machine, kind_name(msg.payload),
                     "from=M" + std::to_string(msg.src) + " " + summarize(msg.payload));
            return std::make_pair(ev, std::make_optional(std::move(msg)));
        }

        if (std::holds_alternative<EvCrash>(ev.body)) {
            if (!alive(ev.machine)) continue;  // double crash is a no-op
            crashed_[ev.machine] = ev.time;
            log_line(ev.machine, "CRASH", "");
            auto subs = subscribers_.find(ev.machine);
            if (subs != subscribers_.end()) {
                for (MachineId w : subs->second) {
                    SimTime t = ev.time + rand_range(1, latency_max_);
                    queue_.push(Event{t, w, next_seq_++, EvFailureNotify{ev.machine}});
                }
            }
            return std::make_pair(ev, std::nullopt);
        }

        if (std::holds_alternative<EvFailureNotify>(ev.body)) {
            if (!alive(ev.machine)) continue;
            auto f = std::get<EvFailureNotify>(ev.body);
            log_line(ev.machine, "FAIL_NOTIFY", "failed=M" + std::to_string(f.failed));
            return std::make_pair(ev, std::nullopt);
        }

        if (std::holds_alternative<EvLocalSlot>(ev.body)) {
            slot_pending_.erase(ev.machine);
            if (!alive(ev.machine)) continue;
            return std::make_pair(ev, std::nullopt);
        }

        // remaining kinds: just dropped on crashed machines
        if (!alive(ev.machine)) continue;
        return std::make_pair(ev, std::nullopt);
    }
    return std::nullopt;
}

bool SimNet::empty() {
    // queue may still hold only cancelled entries
    while (!queue_.empty()) {
        const Event& ev = queue_.top();
        if (cancelled_.count(ev.seq)) {
            cancelled_.erase(ev.seq);
            queue_.pop();
            continue;
        }
        if (std::holds_alternative<EvDeliver>(ev.body) &&
            !in_flight_.count(std::get<EvDeliver>(ev.body).msg_seq)) {
            queue_.pop();
            continue;
        }
        return false;
    }
    return true;
}

std::optional<SimTime> SimNet::next_time() {
    if (empty()) return std::nullopt;
    return queue_.top().time;
}

void SimNet::log_line(MachineId m, const std::string& kind, const std::string& detail) {
    std::ostringstream os;
    os << now_ << " M" << m << " " << kind;
    if (!detail.empty()) os << " " << detail;
    log_.push_back(os.str());
}

std::vector<const SimMessage*> SimNet::in_flight() const {
    std::vector<const SimMessage*> out;
    out.reserve(in_flight_.size());
    for (const auto& [seq, msg] : in_flight_) out.push_back(&msg);
    return out;
}

}  // namespace dgc
