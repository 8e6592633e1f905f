#pragma once

#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "greyfiber/sim.hpp"
#include "greyfiber/types.hpp"

namespace gf::substrate {

// ---------------------------------------------------------------------------
// Provisioning latency

enum class ProfileKind { Ideal, Optical, Geni };

struct LatencyProfile {
  ProfileKind kind = ProfileKind::Ideal;

  static LatencyProfile named(std::string_view name);
  std::string_view name() const;
};

// Time for the substrate to bring up a batch of n links at one site.
// ideal: 0. optical: 240 ms per batch. geni: piecewise-linear over the
// measured table, clamped past its last point.
Millis provision_latency(const LatencyProfile& profile, std::size_t n);

struct TablePoint {
  std::size_t links;
  double seconds;
};
const std::vector<TablePoint>& geni_table();

// ---------------------------------------------------------------------------
// Flow model

inline constexpr double kGreedy = std::numeric_limits<double>::infinity();

struct Flow {
  std::string id;
  NodeId src;
  NodeId dst;
  Millis start{0};
  Millis stop{0};
  double demand_bps = kGreedy;
};

struct FlowModelParams {
  double efficiency = 1.0;  // eta
  Millis warmup{0};
  // Linear ramp to the steady rate over the warmup, in ramp_step increments.
  bool ramp = false;
  Millis ramp_step{1000};

  void validate() const;
};

// Water-filling over one bottleneck. Flows with demand below their fair share
// keep their demand; the remainder is split evenly among the rest.
std::vector<double> max_min_share(double capacity, const std::vector<double>& demands);

// Dumbbell assumption: every flow crosses the aggregate of `live_capacities`.
std::vector<double> fair_share_throughput(const std::vector<Flow>& active, const std::vector<Bps>& live_capacities,
                                          const FlowModelParams& params);

// ---------------------------------------------------------------------------
// Failures and the OSPF baseline

struct OspfTimers {
  double hello_s = 10.0;
  double dead_s = 40.0;
  double wait_s = 4.0;

  void validate() const;
};

// Traffic resumes on the pre-configured backup dead - wait after the failure.
Millis ospf_recovery_time(const OspfTimers& timers, Millis t_fail);

struct ScheduledFailure {
  LinkId link;
  Millis fail{0};
  std::optional<Millis> repair;
};
using FailureSchedule = std::vector<ScheduledFailure>;

// ---------------------------------------------------------------------------
// Rate traces

// A flow's rate holds from t until that flow's next point.
struct RatePoint {
  Millis t{0};
  std::string flow;
  double rate_bps = 0.0;
  friend bool operator==(const RatePoint&, const RatePoint&) = default;
};
using RateTrace = std::vector<RatePoint>;

// Exact integral, in bits, of the summed (or one flow's) rate over [from, to).
double bits_transferred(const RateTrace& trace, Millis from, Millis to);
double bits_transferred(const RateTrace& trace, const std::string& flow, Millis from, Millis to);
double mean_rate(const RateTrace& trace, const std::string& flow, Millis from, Millis to);
double rate_at(const RateTrace& trace, const std::string& flow, Millis t);
double aggregate_rate_at(const RateTrace& trace, Millis t);
std::vector<std::string> trace_flows(const RateTrace& trace);

// Time from t_fail until the summed rate is next positive; zero if traffic
// never stopped. nullopt if it never comes back.
std::optional<Millis> recovery_lag(const RateTrace& trace, Millis t_fail);

std::string to_csv(const RateTrace& trace);
RateTrace parse_csv(const std::string& text);

// ---------------------------------------------------------------------------
// The simulated network

struct LaneKey {
  LeaseId lease;
  std::size_t lane = 0;
  friend auto operator<=>(const LaneKey&, const LaneKey&) = default;
};

// Physical truth for links, circuits (lanes) and flows. Every mutation
// happens on a scheduler event; rates are recomputed once per instant, after
// all other events at that instant.
class Network {
 public:
  Network(sim::Scheduler& sched, FlowModelParams params = {});

  void add_link(const LinkId& link, Bps capacity);
  bool has_link(const LinkId& link) const;
  bool link_up(const LinkId& link) const;

  // Schedules failures (and repairs) as Physical events. Unknown links throw.
  void inject_failure(const FailureSchedule& schedule);
  void fail_link(const LinkId& link);
  void repair_link(const LinkId& link);

  // OSPF baseline: standby lanes come up dead - wait after a failure severs
  // traffic between their endpoints.
  void set_ospf(std::optional<OspfTimers> timers) { ospf_ = timers; }

  void add_flow(const Flow& flow);

  // A lane carries traffic from active_from while all of its links are Up,
  // until removed or severed by a failure of one of its links.
  void provision_lane(const LaneKey& key, const NodeId& a, const NodeId& b, std::vector<LinkId> links,
                      Bps capacity, Millis active_from);
  void add_standby_lane(const LaneKey& key, const NodeId& a, const NodeId& b, std::vector<LinkId> links,
                        Bps capacity);
  void remove_lane(const LaneKey& key);  // idempotent
  void remove_lease(LeaseId lease);

  bool lane_carrying(const LaneKey& key) const;
  std::vector<LaneKey> lanes() const;

  // Rates as of the last sample.
  std::map<std::string, double> current_rates() const;
  const RateTrace& trace() const { return trace_; }

 private:
  struct LinkState {
    Bps capacity = 0;
    bool up = true;
  };
  struct LaneState {
    NodeId a, b;
    std::vector<LinkId> links;
    Bps capacity = 0;
    Millis active_from{0};
    bool severed = false;
    bool standby = false;
  };

  bool carrying(const LaneState& lane, Millis now) const;
  void touch();
  void sample();
  double ramp_factor(const Flow& f, Millis now) const;

  sim::Scheduler& sched_;
  FlowModelParams params_;
  std::optional<OspfTimers> ospf_;
  std::map<LinkId, LinkState> links_;
  std::map<LaneKey, LaneState> lanes_;
  std::vector<Flow> flows_;
  std::map<std::string, double> last_;
  RateTrace trace_;
  bool sample_pending_ = false;
};

}  // namespace gf::substrate
