#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dgc/messages.hpp"

namespace dgc {

struct SimMessage {
    MachineId src = 0;
    MachineId dst = 0;
    SimTime send_time = 0;
    SimTime deliver_time = 0;
    uint64_t seq = 0;
    Payload payload;
};

// Machine-local events. Delivered through the same queue as messages so the
// whole simulation is a single deterministic sequence.
struct EvDeliver { uint64_t msg_seq = 0; };
struct EvCrash {};
struct EvFailureNotify { MachineId failed = 0; };
struct EvLocalSlot {};                         // local GC + heuristic pass
struct EvTempRootExpire { ObjectId obj; };
struct EvScenarioStep { size_t index = 0; };
struct EvParkTimeout { uint64_t park_id = 0; };

using EventBody = std::variant<EvDeliver, EvCrash, EvFailureNotify, EvLocalSlot,
                               EvTempRootExpire, EvScenarioStep, EvParkTimeout>;

struct Event {
    SimTime time = 0;
    MachineId machine = 0;
    uint64_t seq = 0;
    EventBody body;
};

// Deterministic discrete-event network providing the three services the
// collector assumes: reliable FIFO delivery between live machines, failure
// notification a finite time after a crash, and fail flush of the channel
// from a machine known to have failed.
class SimNet {
  public:
    explicit SimNet(uint64_t seed = 1, SimTime latency_max = 5);

    SimTime now() const { return now_; }
    SimTime latency_max() const { return latency_max_; }

    bool alive(MachineId m) const { return !crashed_.count(m); }
    std::optional<SimTime> crash_time(MachineId m) const;

    // Enqueues a message with seeded random latency in [1, latency_max],
    // FIFO per ordered pair. Sends from a crashed machine are dropped.
    void send(MachineId src, MachineId dst, Payload payload);

    // Schedules a crash at time t (>= now). Subscribers are notified a finite
    // random time after the crash, independently per subscriber.
    void schedule_crash(MachineId m, SimTime t);

    // Idempotent. If `watched` is already down, a notification is scheduled
    // immediately. Self-subscription is rejected (returns false).
    bool subscribe_failure(MachineId watcher, MachineId watched);

    // Returns every undelivered message failed->requester, in channel order,
    // and removes them from the network. Throws if `failed` is still alive.
    std::vector<SimMessage> fail_flush(MachineId requester, MachineId failed);

    // Machine-local event scheduling.
    void schedule(MachineId m, SimTime t, EventBody body);
    uint64_t schedule_cancellable(MachineId m, SimTime t, EventBody body);
    void cancel(uint64_t event_seq);

    // Pops the earliest event; ties broken by (time, machine, seq). Returns
    // nullopt when the queue is empty. Cancelled and undeliverable entries
    // are consumed internally. The event log receives one line per event.
    std::optional<std::pair<Event, std::optional<SimMessage>>> step();

    bool empty();
    std::optional<SimTime> next_time();  // earliest pending event, if any

    uint64_t rand_range(uint64_t lo, uint64_t hi);  // inclusive, deterministic

    // Ensures at most one pending EvLocalSlot per machine.
    void request_slot(MachineId m);

    const std::vector<std::string>& log() const { return log_; }
    void log_line(MachineId m, const std::string& kind, const std::string& detail);

    std::map<std::string, uint64_t>& counters() { return counters_; }
    void count(const std::string& key, uint64_t n = 1) { counters_[key] += n; }

    // Messages still in flight (ground truth for the oracle).
    std::vector<const SimMessage*> in_flight() const;

  private:
    struct QueueCmp {
        bool operator()(const Event& a, const Event& b) const {
            return std::tie(a.time, a.machine, a.seq) > std::tie(b.time, b.machine, b.seq);
        }
    };

    SimTime now_ = 0;
    SimTime latency_max_;
    std::mt19937_64 rng_;
    uint64_t next_seq_ = 1;

    std::priority_queue<Event, std::vector<Event>, QueueCmp> queue_;
    std::map<uint64_t, SimMessage> in_flight_;              // by message seq
    std::map<std::pair<MachineId, MachineId>, SimTime> channel_floor_;
    std::set<uint64_t> cancelled_;
    std::map<MachineId, SimTime> crashed_;
    std::map<MachineId, std::set<MachineId>> subscribers_;  // watched -> watchers
    std::set<MachineId> slot_pending_;

    std::vector<std::string> log_;
    std::map<std::string, uint64_t> counters_;
};

}  // namespace dgc
