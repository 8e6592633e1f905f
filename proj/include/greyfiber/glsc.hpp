#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "greyfiber/ggc.hpp"
#include "greyfiber/sim.hpp"
#include "greyfiber/substrate.hpp"
#include "greyfiber/topology.hpp"

namespace gf::glsc {

using ggc::SiteConfig;
using ggc::StatusReport;

struct MonitorPolicy {
  Millis interval{1000};
  Millis phase{0};  // probes fire at phase + k * interval
  std::string probe = "status";
  Millis probe_rtt{0};

  void validate() const;
};

struct FailureEvent {
  LinkId link;
  Millis detected_at{0};
};

using MonitorItem = std::variant<StatusReport, FailureEvent>;

enum class BackupKind { SameConduit, Escalated, Disabled };

struct BackupAction {
  BackupKind kind = BackupKind::SameConduit;
  LeaseId lease;
  std::size_t lane = 0;
  std::size_t hop = 0;
  LinkId failed;
  std::optional<LinkId> replacement;
  std::optional<Millis> active_from;
};

// Read-only view of the physical links, used by probes.
class LinkProbe {
 public:
  virtual ~LinkProbe() = default;
  virtual bool link_up(const LinkId& link) const = 0;
  virtual double utilization(const LinkId& link) const {
    (void)link;
    return 0.0;
  }
};

class NetworkProbe : public LinkProbe {
 public:
  explicit NetworkProbe(const substrate::Network& net) : net_(net) {}
  bool link_up(const LinkId& link) const override { return net_.link_up(link); }

 private:
  const substrate::Network& net_;
};

// Local Site Control for one site. In simulation it shares the topology graph
// with the GGC and repairs failures itself; without a graph (service mode)
// it reports every failure and lets the GGC choose the backup.
class Glsc : public ggc::SiteAgent {
 public:
  Glsc(SiteId site, sim::Scheduler& sched, const LinkProbe& probe, substrate::LatencyProfile profile,
       MonitorPolicy policy = {}, ggc::BackupMode backup = ggc::BackupMode::Local,
       topology::TopologyGraph* graph = nullptr);

  void set_uplink(ggc::ControlUplink* uplink) { uplink_ = uplink; }

  // SiteAgent
  SiteId site() const override { return site_; }
  void push_config(const SiteConfig& config, std::function<void(const ggc::ConfigAck&)> done) override;
  void teardown(LeaseId lease) override;
  void links_registered(const std::vector<LinkId>& links) override;

  // Validates, records the circuits, and acks once the substrate latency has
  // elapsed. A config for a lease already held here extends its handle.
  HandleId apply_configuration(const SiteConfig& config, std::function<void(const ggc::ConfigAck&)> done = {});
  void teardown_circuit(HandleId handle);
  std::optional<HandleId> handle_for(LeaseId lease) const;
  std::vector<ggc::SiteCircuit> circuits(HandleId handle) const;
  bool is_live(HandleId handle) const;

  void monitor(const LinkId& link);
  const std::set<LinkId>& monitored() const { return monitored_; }
  // Starts the periodic probe loop on the scheduler.
  void start();
  void set_interval(Millis interval);
  const MonitorPolicy& policy() const { return policy_; }

  std::vector<MonitorItem> poll_monitor(Millis now);
  std::vector<BackupAction> on_failure(const FailureEvent& event);

  const std::vector<FailureEvent>& failures() const { return failures_; }
  std::size_t probes() const { return probes_; }

 private:
  struct Handle {
    LeaseId lease;
    AllocationId allocation;
    std::vector<ggc::SiteCircuit> circuits;
    bool anchor = false;
    bool live = true;
  };
  struct LinkHealth {
    bool up = true;
    std::uint32_t stability = 0;
  };

  void tick(std::uint64_t generation);
  void schedule_tick(std::uint64_t generation, bool after_now);
  bool owns(const LinkId& link) const;

  SiteId site_;
  sim::Scheduler& sched_;
  const LinkProbe& probe_;
  substrate::LatencyProfile profile_;
  MonitorPolicy policy_;
  ggc::BackupMode backup_;
  topology::TopologyGraph* graph_;
  ggc::ControlUplink* uplink_ = nullptr;

  std::map<HandleId, Handle> handles_;
  std::map<LeaseId, HandleId> by_lease_;
  std::set<LinkId> monitored_;
  std::map<LinkId, LinkHealth> health_;
  std::vector<FailureEvent> failures_;
  std::uint64_t next_handle_ = 1;
  std::uint64_t generation_ = 0;
  bool running_ = false;
  std::size_t probes_ = 0;
};

}  // namespace gf::glsc
