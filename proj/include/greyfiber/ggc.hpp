#pragma once

#include <array>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "greyfiber/exchange.hpp"
#include "greyfiber/sim.hpp"
#include "greyfiber/substrate.hpp"
#include "greyfiber/topology.hpp"
#include "greyfiber/types.hpp"

namespace gf::ggc {

// ---------------------------------------------------------------------------
// Requests and classification

struct LeaseWindow {
  Millis start{0};
  double duration_s = 0.0;
};

struct ResourceRequest {
  NodeId endpoint_a;
  NodeId endpoint_b;
  std::uint32_t strands_needed = 1;
  Money bid_amount;
  std::optional<Money> value;  // private valuation; payoff accounting only
  LeaseWindow time;
  Bps capacity_needed = 0;
  std::string client_name;
  bool backup_required = false;
  bool elastic = false;

  void validate() const;
};

ResourceRequest parse_request(const nlohmann::json& j);
nlohmann::json to_json(const ResourceRequest& r);

enum class Immediacy { Realtime, NonRealtime };
enum class Timescale { Small, Medium, Large, ExtraLarge };
std::string_view immediacy_name(Immediacy i);
std::string_view timescale_name(Timescale t);

struct ProvisionClass {
  Immediacy immediacy = Immediacy::Realtime;
  Timescale timescale = Timescale::Small;
  bool backup_required = false;
  bool elastic = false;
};

// Small < 1 h <= Medium < 24 h <= Large < 365 d <= ExtraLarge
Timescale timescale_for(double duration_s);
ProvisionClass classify_request(const ResourceRequest& r, Millis now);

// ---------------------------------------------------------------------------
// Leases and outcomes

enum class LeaseState { Pending, Active, Expired, TornDown };
std::string_view lease_state_name(LeaseState s);

struct Lease {
  LeaseId id;
  RequestId request;
  std::string buyer;
  topology::Path path;
  topology::CircuitAllocation allocation;
  Money price;
  Millis start{0};
  Millis expiry{0};
  LeaseState state = LeaseState::Pending;
};

struct Connectivity {
  topology::Path path;
  std::vector<CircuitId> circuits;
  std::vector<std::pair<LinkId, std::uint32_t>> wavelengths;
};

enum class Disposition { Granted, Rejected, Outbid };
std::string_view disposition_name(Disposition d);

struct LeaseOutcome {
  RequestId request;
  std::string client;
  Disposition disposition = Disposition::Rejected;
  std::optional<Lease> lease;
  std::optional<Connectivity> connectivity;
  std::string reason;
  Money payment;
  Millis decided_at{0};
};

// ---------------------------------------------------------------------------
// Event log

enum class Stage {
  AcceptBid = 7,
  Auction = 8,
  WinnerNotify = 9,
  GraphQuery = 10,
  Admissibility = 11,
  ConfigGeneration = 12,
  ConfigPush = 13,
  CircuitCreation = 14,
  LeaseActivation = 15,
  CounterUpdate = 16,
  Notify = 17,
};

inline constexpr std::array<Stage, 11> kStages{
    Stage::AcceptBid,        Stage::Auction,    Stage::WinnerNotify,    Stage::GraphQuery,
    Stage::Admissibility,    Stage::ConfigGeneration, Stage::ConfigPush, Stage::CircuitCreation,
    Stage::LeaseActivation,  Stage::CounterUpdate,    Stage::Notify,
};

std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view s);
inline int stage_step(Stage s) { return static_cast<int>(s); }

struct StageRecord {
  RequestId request_id;
  Stage stage = Stage::AcceptBid;
  Millis t_start{0};
  Millis t_end{0};
  friend bool operator==(const StageRecord&, const StageRecord&) = default;
};

// Append-only, one JSON line per stage record.
class EventLog {
 public:
  void append(const StageRecord& r);
  std::vector<StageRecord> records() const;
  std::string to_jsonl() const;
  std::size_t size() const;

  static std::string line(const StageRecord& r);
  static std::vector<StageRecord> parse_jsonl(std::string_view text);

 private:
  mutable std::mutex mu_;
  std::vector<StageRecord> records_;
};

// ---------------------------------------------------------------------------
// Configuration

struct SiteCircuit {
  CircuitId circuit;
  LinkId link;
  std::uint32_t wavelength = 0;
  Bps bandwidth = 0;
  std::size_t lane = 0;
  std::size_t hop = 0;
};

struct SiteConfig {
  SiteId site;
  LeaseId lease;
  AllocationId allocation;
  std::vector<SiteCircuit> circuits;
  Millis start{0};
  Millis expiry{0};
  bool anchor = false;  // the source site; its teardown releases the allocation
};

struct ConfigBundle {
  LeaseId lease;
  std::vector<SiteConfig> configs;  // ordered by site id
};

nlohmann::json to_json(const SiteConfig& c);
SiteConfig site_config_from_json(const nlohmann::json& j);

// One config per distinct site touched by the lease's circuits; each lists
// the circuits on strands that terminate at that site. Pure.
ConfigBundle generate_configuration(const topology::TopologyGraph& graph, const Lease& lease);
// Same, restricted to the circuits of the given lanes.
ConfigBundle generate_configuration(const topology::TopologyGraph& graph, const Lease& lease,
                                    const std::vector<std::size_t>& lanes);

// ---------------------------------------------------------------------------
// Control-plane costs on the virtual clock

struct ControlCosts {
  Millis accept_bid{2};
  Millis auction{170};
  Millis winner_notify{5};
  Millis graph_query{1};
  Millis admissibility{1};
  Millis config_push{2};
  Millis lease_activation{1};
  Millis counter_update{1};
  Millis notify{2};
  bool model_config_generation = true;

  // Every stage costs only the real time it takes (service mode).
  static ControlCosts zero();
};

// Configuration-generation time by link count, interpolated over measured
// values (0.107 - 0.148 s) and clamped beyond them.
Millis config_generation_cost(std::size_t links);

// ---------------------------------------------------------------------------
// Collaborators

struct ConfigAck {
  SiteId site;
  LeaseId lease;
  HandleId handle;
  Millis latency{0};
  bool ok = true;
  std::string error;
};

// A GLSC as seen from the GGC: local in simulation, a TCP proxy in service mode.
class SiteAgent {
 public:
  virtual ~SiteAgent() = default;
  virtual SiteId site() const = 0;
  virtual void push_config(const SiteConfig& config, std::function<void(const ConfigAck&)> done) = 0;
  virtual void teardown(LeaseId lease) = 0;  // idempotent
  virtual void links_registered(const std::vector<LinkId>& links) { (void)links; }
};

// Data-plane side effects of lease lifecycle events (the substrate in simulation).
class LeaseObserver {
 public:
  virtual ~LeaseObserver() = default;
  virtual void on_active(const Lease& lease, Millis at) = 0;
  virtual void on_lane_replaced(const Lease& lease, std::size_t lane, Millis active_from) = 0;
  virtual void on_released(const Lease& lease) = 0;
};

struct StatusReport {
  LinkId link;
  Millis ts{0};
  double rtt_s = 0.0;
  double loss = 0.0;
  double utilization = 0.0;
  std::uint32_t stability = 0;
};

// GLSC -> GGC direction of the site protocol.
class ControlUplink {
 public:
  virtual ~ControlUplink() = default;
  virtual void status_batch(const SiteId& site, const std::vector<StatusReport>& reports) = 0;
  // A circuit on `link` lost service. `local_exhausted` means the site already
  // searched its own conduit; otherwise the GGC tries that first.
  virtual void failure_notify(const SiteId& site, const LinkId& link, LeaseId lease, std::size_t lane,
                              std::size_t hop, Millis detected_at, bool local_exhausted) = 0;
  virtual void backup_provisioned(const SiteId& site, LeaseId lease, std::size_t lane, const LinkId& failed,
                                  Millis detected_at, Millis active_from) = 0;
};

enum class BackupMode { Local, None };
BackupMode parse_backup_mode(std::string_view s);
std::string_view backup_mode_name(BackupMode m);

struct BackupRecord {
  LeaseId lease;
  std::size_t lane = 0;
  LinkId failed;
  Millis detected_at{0};
  std::optional<Millis> active_from;
  std::string how;  // same-conduit, escalated, disabled, unrecovered
};

struct GgcOptions {
  exchange::Mechanism mechanism = exchange::Mechanism::GSP;
  ControlCosts costs;
  BackupMode backup = BackupMode::Local;
  // Wall clock in service mode; defaults to the scheduler's virtual clock.
  std::function<Millis()> clock;
};

// ---------------------------------------------------------------------------

// Global Control: registration, classification, the request pipeline
// (accept bid through notification), lease lifecycle and failure escalation.
// All methods run on the scheduler's thread.
class Ggc : public ControlUplink {
 public:
  using OutcomeSink = std::function<void(const LeaseOutcome&)>;

  Ggc(topology::TopologyGraph& graph, exchange::Exchange& exchange, sim::Scheduler& sched, EventLog& log,
      GgcOptions options = {});

  void attach_agent(SiteAgent* agent);
  void detach_agent(const SiteId& site);
  void set_observer(LeaseObserver* observer) { observer_ = observer; }
  void set_outcome_sink(OutcomeSink sink) { sink_ = std::move(sink); }

  // Steps 1-3. Returns the links that were added or updated.
  std::vector<LinkId> register_seller(const SellerId& seller, const topology::TopologyDocument& fragment,
                                      const std::map<LinkId, Money>& reserves = {});
  std::string register_buyer(const std::string& client_name);
  bool is_buyer(const std::string& client_name) const;

  // Steps 7-17, starting at the scheduler's current time.
  RequestId submit(const ResourceRequest& request);

  std::vector<LeaseId> expire_leases(Millis now);

  // ControlUplink
  void status_batch(const SiteId& site, const std::vector<StatusReport>& reports) override;
  void failure_notify(const SiteId& site, const LinkId& link, LeaseId lease, std::size_t lane, std::size_t hop,
                      Millis detected_at, bool local_exhausted) override;
  void backup_provisioned(const SiteId& site, LeaseId lease, std::size_t lane, const LinkId& failed,
                          Millis detected_at, Millis active_from) override;

  std::optional<Lease> lease(LeaseId id) const;
  std::vector<Lease> leases() const;
  const std::vector<LeaseOutcome>& outcomes() const { return outcomes_; }
  std::optional<LeaseOutcome> outcome(RequestId id) const;
  const std::vector<BackupRecord>& backups() const { return backups_; }
  std::size_t status_reports() const { return status_reports_; }
  const std::map<std::string, std::size_t>& message_counts() const { return messages_; }
  Millis now() const;

 private:
  struct Pending {
    RequestId id;
    ResourceRequest request;
    ProvisionClass cls;
    Millis submitted{0};
  };
  struct Flight {
    Pending pending;
    Money payment;
    std::optional<LeaseId> lease;
    ConfigBundle bundle;
    std::size_t acks_pending = 0;
    Millis push_end{0};
    Millis last_ack{0};
    bool failed = false;
    std::string failure;
  };
  struct RoundKey {
    Millis t;
    NodeId a, b;
    std::uint32_t strands;
    Bps capacity;
    Millis start;
    friend auto operator<=>(const RoundKey&, const RoundKey&) = default;
  };

  void record(RequestId id, Stage stage, Millis start, Millis end);
  Millis finish(Millis start, Millis cost) const;
  void count(std::string_view type) { ++messages_[std::string(type)]; }

  void close_round(const RoundKey& key);
  void start_provisioning(RequestId id);
  void admit(RequestId id, Millis t);
  void configure(RequestId id, Millis t);
  void on_ack(RequestId id, const ConfigAck& ack);
  void activate(RequestId id, Millis t);
  void reject(RequestId id, const std::string& reason, Millis t);
  void decide(const Pending& p, Disposition d, const std::string& reason, Money payment, Millis t,
              std::optional<Lease> lease = std::nullopt);
  void teardown(Lease& lease, LeaseState final_state);
  void escalate(LeaseId lease, std::size_t lane, const LinkId& failed, Millis detected_at);
  void push_replacement(LeaseId lease, std::size_t lane, const LinkId& failed, Millis detected_at,
                        const std::string& how);

  topology::TopologyGraph& graph_;
  exchange::Exchange& exchange_;
  sim::Scheduler& sched_;
  EventLog& log_;
  GgcOptions opts_;
  std::map<SiteId, SiteAgent*> agents_;
  LeaseObserver* observer_ = nullptr;
  OutcomeSink sink_;

  std::map<std::string, std::string> buyers_;
  std::map<RoundKey, std::vector<Pending>> rounds_;
  std::map<RequestId, Flight> flights_;
  std::map<LeaseId, Lease> leases_;
  std::vector<LeaseOutcome> outcomes_;
  std::vector<BackupRecord> backups_;
  std::map<std::string, std::size_t> messages_;
  std::size_t status_reports_ = 0;
  std::uint64_t next_request_ = 1;
  std::uint64_t next_lease_ = 1;
};

}  // namespace gf::ggc
