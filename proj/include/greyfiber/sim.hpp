#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <queue>
#include <vector>

#include "greyfiber/types.hpp"

namespace gf::sim {

// Ordering of events that share an instant. Probes observe the network as it
// was before anything else happening at that instant; rate samples see the
// result of every mutation at that instant.
enum class Phase : int {
  Probe = 0,
  Physical = 1,  // failures, repairs
  Control = 2,   // pipeline stages, lane activation, expiry
  Sample = 3,    // substrate rate recomputation
};

// Single-threaded discrete-event scheduler over a millisecond virtual clock.
class Scheduler {
 public:
  using Action = std::function<void()>;

  explicit Scheduler(Millis start = Millis{0}) : now_(start) {}

  Millis now() const { return now_; }

  // Events in the past are clamped to now.
  void at(Millis t, Phase phase, Action action);
  void after(Millis delay, Phase phase, Action action) { at(now_ + delay, phase, std::move(action)); }

  // Runs every event with time <= horizon, then advances the clock to horizon.
  void run_until(Millis horizon);
  bool step();
  bool empty() const { return queue_.empty(); }
  std::optional<Millis> next_time() const {
    if (queue_.empty()) return std::nullopt;
    return queue_.top().t;
  }
  std::size_t processed() const { return processed_; }

 private:
  struct Event {
    Millis t;
    Phase phase;
    std::uint64_t seq;
    Action action;
  };
  struct Later {
    bool operator()(const Event& x, const Event& y) const {
      if (x.t != y.t) return x.t > y.t;
      if (x.phase != y.phase) return x.phase > y.phase;
      return x.seq > y.seq;
    }
  };

  Millis now_;
  std::uint64_t seq_ = 0;
  std::size_t processed_ = 0;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
};

}  // namespace gf::sim
