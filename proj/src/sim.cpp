#include "greyfiber/sim.hpp"

namespace gf::sim {

void Scheduler::at(Millis t, Phase phase, Action action) {
  if (t < now_) t = now_;
  queue_.push(Event{t, phase, seq_++, std::move(action)});
}

bool Scheduler::step() {
  if (queue_.empty()) return false;
  // priority_queue::top is const; the action is copied out before pop.
  Event ev = queue_.top();
  queue_.pop();
  now_ = ev.t;
  ++processed_;
  ev.action();
  return true;
}

void Scheduler::run_until(Millis horizon) {
  while (!queue_.empty() && queue_.top().t <= horizon) step();
  if (now_ < horizon) now_ = horizon;
}

}  // namespace gf::sim
