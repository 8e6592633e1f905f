#include "greyfiber/glsc.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "greyfiber/error.hpp"

namespace gf::glsc {

void MonitorPolicy::validate() const {
  if (interval.count() <= 0) throw Error(Errc::InvalidArgument, "monitor interval must be positive");
  if (probe_rtt.count() < 0) throw Error(Errc::InvalidArgument, "probe RTT must be non-negative");
}

Glsc::Glsc(SiteId site, sim::Scheduler& sched, const LinkProbe& probe, substrate::LatencyProfile profile,
           MonitorPolicy policy, ggc::BackupMode backup, topology::TopologyGraph* graph)
    : site_(std::move(site)),
      sched_(sched),
      probe_(probe),
      profile_(profile),
      policy_(std::move(policy)),
      backup_(backup),
      graph_(graph) {
  policy_.validate();
}

bool Glsc::owns(const LinkId& link) const {
  if (graph_) return graph_->has_link(link) && graph_->owner_site(link) == site_;
  return monitored_.count(link) != 0;
}

void Glsc::push_config(const SiteConfig& config, std::function<void(const ggc::ConfigAck&)> done) {
  try {
    apply_configuration(config, done);
  } catch (const Error& e) {
    ggc::ConfigAck nack{site_, config.lease, HandleId{}, Millis{0}, false, std::string(errc_name(e.code()))};
    sched_.at(sched_.now(), sim::Phase::Control, [done, nack] { done(nack); });
  }
}

HandleId Glsc::apply_configuration(const SiteConfig& config, std::function<void(const ggc::ConfigAck&)> done) {
  if (config.site != site_)
    throw Error(Errc::InvalidArgument, fmt::format("config for {} pushed to {}", config.site.str(), site_.str()));
  if (config.circuits.empty()) throw Error(Errc::InvalidArgument, "config names no circuits");
  for (const auto& c : config.circuits) {
    if (graph_) {
      auto conduit = graph_->conduit(graph_->link(c.link).conduit);
      if (graph_->node(conduit.a).site != site_ && graph_->node(conduit.b).site != site_)
        throw Error(Errc::InvalidArgument, fmt::format("link {} does not terminate at {}", c.link.str(), site_.str()));
      if (graph_->link(c.link).status != topology::LinkStatus::Up) throw Error(Errc::LinkDown, c.link.str());
    }
    if (monitored_.count(c.link) && !probe_.link_up(c.link)) throw Error(Errc::LinkDown, c.link.str());
  }

  HandleId id;
  if (auto it = by_lease_.find(config.lease); it != by_lease_.end()) {
    id = it->second;
    auto& h = handles_.at(id);
    for (const auto& c : config.circuits) {
      auto same = std::find_if(h.circuits.begin(), h.circuits.end(),
                               [&](const ggc::SiteCircuit& x) { return x.lane == c.lane && x.hop == c.hop; });
      if (same != h.circuits.end())
        *same = c;
      else
        h.circuits.push_back(c);
    }
  } else {
    id = HandleId{next_handle_++};
    handles_[id] = Handle{config.lease, config.allocation, config.circuits, config.anchor, true};
    by_lease_[config.lease] = id;
  }
  for (const auto& c : config.circuits)
    if (owns(c.link)) monitor(c.link);

  Millis latency = substrate::provision_latency(profile_, config.circuits.size());
  if (done) {
    ggc::ConfigAck ack{site_, config.lease, id, latency, true, ""};
    sched_.at(sched_.now() + latency, sim::Phase::Control, [done, ack] { done(ack); });
  }
  return id;
}

void Glsc::teardown_circuit(HandleId handle) {
  auto it = handles_.find(handle);
  if (it == handles_.end()) throw Error(Errc::UnknownHandle, fmt::format("handle {}", handle.value));
  auto& h = it->second;
  if (!h.live) return;
  h.live = false;
  by_lease_.erase(h.lease);
  if (h.anchor && graph_ && graph_->is_live(h.allocation)) graph_->release(h.allocation);
}

void Glsc::teardown(LeaseId lease) {
  if (auto h = handle_for(lease)) teardown_circuit(*h);
}

std::optional<HandleId> Glsc::handle_for(LeaseId lease) const {
  auto it = by_lease_.find(lease);
  if (it == by_lease_.end()) return std::nullopt;
  return it->second;
}

std::vector<ggc::SiteCircuit> Glsc::circuits(HandleId handle) const {
  auto it = handles_.find(handle);
  if (it == handles_.end()) throw Error(Errc::UnknownHandle, fmt::format("handle {}", handle.value));
  return it->second.circuits;
}

bool Glsc::is_live(HandleId handle) const {
  auto it = handles_.find(handle);
  return it != handles_.end() && it->second.live;
}

void Glsc::links_registered(const std::vector<LinkId>& links) {
  for (const auto& l : links)
    if (!graph_ || owns(l)) monitor(l);
}

void Glsc::monitor(const LinkId& link) {
  if (monitored_.insert(link).second) health_[link] = LinkHealth{};
}

void Glsc::start() {
  running_ = true;
  schedule_tick(generation_, false);
}

void Glsc::set_interval(Millis interval) {
  MonitorPolicy next = policy_;
  next.interval = interval;
  next.validate();
  policy_ = next;
  ++generation_;
  if (running_) schedule_tick(generation_, true);
}

void Glsc::schedule_tick(std::uint64_t generation, bool after_now) {
  // A tick may already have fired at this instant; do not probe twice.
  const auto now = sched_.now().count() + (after_now ? 1 : 0);
  const auto step = policy_.interval.count();
  const auto phase = policy_.phase.count();
  auto k = (now - phase + step - 1) / step;
  if (now - phase < 0) k = (now - phase) / step;  // truncation toward zero rounds up for negatives
  Millis at{phase + k * step};
  sched_.at(at, sim::Phase::Probe, [this, generation] { tick(generation); });
}

void Glsc::tick(std::uint64_t generation) {
  if (generation != generation_) return;
  std::vector<StatusReport> reports;
  std::vector<FailureEvent> failures;
  for (auto& item : poll_monitor(sched_.now())) {
    if (auto* r = std::get_if<StatusReport>(&item))
      reports.push_back(*r);
    else
      failures.push_back(std::get<FailureEvent>(item));
  }
  if (uplink_ && !reports.empty()) uplink_->status_batch(site_, reports);
  for (const auto& f : failures) on_failure(f);
  sched_.at(sched_.now() + policy_.interval, sim::Phase::Probe, [this, generation] { tick(generation); });
}

std::vector<MonitorItem> Glsc::poll_monitor(Millis now) {
  std::vector<MonitorItem> out;
  for (const auto& link : monitored_) {
    ++probes_;
    auto& h = health_[link];
    bool up = probe_.link_up(link);
    if (up) {
      if (!h.up) {
        h.up = true;
        h.stability = 0;
        if (graph_ && owns(link)) graph_->set_link_status(link, topology::LinkStatus::Up);
      }
      ++h.stability;
      out.emplace_back(StatusReport{link, now, to_seconds(policy_.probe_rtt), 0.0,
                                    std::clamp(probe_.utilization(link), 0.0, 1.0), h.stability});
    } else if (h.up) {
      h.up = false;
      h.stability = 0;
      FailureEvent ev{link, now};
      failures_.push_back(ev);
      out.emplace_back(ev);
    } else {
      out.emplace_back(StatusReport{link, now, to_seconds(policy_.probe_rtt), 1.0, 0.0, 0});
    }
  }
  return out;
}

std::vector<BackupAction> Glsc::on_failure(const FailureEvent& ev) {
  std::vector<BackupAction> actions;
  if (!owns(ev.link)) return actions;

  struct Affected {
    LeaseId lease;
    AllocationId allocation;
    std::size_t lane, hop;
    Bps bandwidth;
  };
  std::vector<Affected> affected;
  if (graph_) {
    graph_->set_link_status(ev.link, topology::LinkStatus::Down);
    for (auto id : graph_->allocations_on_link(ev.link)) {
      auto alloc = graph_->allocation(id);
      for (const auto& c : alloc.circuits)
        if (c.link == ev.link) affected.push_back({alloc.lease, id, c.lane, c.hop, c.bandwidth});
    }
  } else {
    for (const auto& [_, h] : handles_) {
      if (!h.live) continue;
      for (const auto& c : h.circuits)
        if (c.link == ev.link) affected.push_back({h.lease, h.allocation, c.lane, c.hop, c.bandwidth});
    }
  }

  for (const auto& a : affected) {
    BackupAction act;
    act.lease = a.lease;
    act.lane = a.lane;
    act.hop = a.hop;
    act.failed = ev.link;
    if (backup_ == ggc::BackupMode::None) {
      act.kind = BackupKind::Disabled;
      if (uplink_) uplink_->failure_notify(site_, ev.link, a.lease, a.lane, a.hop, ev.detected_at, true);
      actions.push_back(act);
      continue;
    }
    std::optional<LinkId> spare;
    if (graph_) spare = graph_->find_spare(graph_->link(ev.link).conduit, a.bandwidth, {ev.link});
    if (!spare) {
      // Nothing local (or no local view): the GGC searches further.
      act.kind = BackupKind::Escalated;
      if (uplink_) uplink_->failure_notify(site_, ev.link, a.lease, a.lane, a.hop, ev.detected_at, graph_ != nullptr);
      actions.push_back(act);
      continue;
    }
    auto alloc = graph_->replace_hop(a.allocation, a.lane, a.hop, *spare);
    if (auto h = handle_for(a.lease)) {
      auto& circuits = handles_.at(*h).circuits;
      for (const auto& c : alloc.circuits) {
        if (c.lane != a.lane || c.hop != a.hop) continue;
        for (auto& local : circuits)
          if (local.lane == c.lane && local.hop == c.hop) local = {c.id, c.link, c.wavelength, c.bandwidth, c.lane, c.hop};
      }
    }
    monitor(*spare);
    act.kind = BackupKind::SameConduit;
    act.replacement = spare;
    act.active_from = sched_.now() + substrate::provision_latency(profile_, 1);
    if (uplink_) uplink_->backup_provisioned(site_, a.lease, a.lane, ev.link, ev.detected_at, *act.active_from);
    actions.push_back(act);
  }
  return actions;
}

}  // namespace gf::glsc
