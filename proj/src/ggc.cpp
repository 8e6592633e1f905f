#include "greyfiber/ggc.hpp"

#include <algorithm>
#include <memory>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "greyfiber/error.hpp"

namespace gf::ggc {

using nlohmann::json;
using topology::TopologyGraph;

namespace {

constexpr double kHour = 3600.0;
constexpr double kDay = 24 * kHour;
constexpr double kYear = 365 * kDay;

template <class T>
T required(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(Errc::SchemaViolation, fmt::format("request is missing '{}'", key));
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaViolation, fmt::format("request field '{}': {}", key, e.what()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void ResourceRequest::validate() const {
  auto bad = [](const std::string& why) { throw Error(Errc::InvalidRequest, why); };
  if (endpoint_a.empty() || endpoint_b.empty()) bad("endpoints must be named");
  if (endpoint_a == endpoint_b) bad("endpoints must be distinct");
  if (strands_needed < 1) bad("strands_needed must be at least 1");
  if (!(time.duration_s > 0.0)) bad("duration must be positive");
  if (capacity_needed <= 0) bad("capacity_needed must be positive");
  if (bid_amount.micros < 0) bad("bid_amount must be non-negative");
  if (client_name.empty()) bad("client_name must be set");
}

ResourceRequest parse_request(const json& j) {
  if (!j.is_object()) throw Error(Errc::SchemaViolation, "request must be an object");
  ResourceRequest r;
  r.endpoint_a = NodeId{required<std::string>(j, "endpoint_a")};
  r.endpoint_b = NodeId{required<std::string>(j, "endpoint_b")};
  r.strands_needed = required<std::uint32_t>(j, "strands_needed");
  r.bid_amount = Money{required<std::int64_t>(j, "bid_amount")};
  if (j.contains("value")) r.value = Money{required<std::int64_t>(j, "value")};
  auto t = required<json>(j, "time");
  r.time.start = from_seconds(required<double>(t, "start"));
  r.time.duration_s = required<double>(t, "duration_s");
  r.capacity_needed = required<Bps>(j, "capacity_needed_bps");
  r.client_name = required<std::string>(j, "client_name");
  r.backup_required = j.value("backup_required", false);
  r.elastic = j.value("elastic", false);
  return r;
}

json to_json(const ResourceRequest& r) {
  json j{{"endpoint_a", r.endpoint_a.str()},
         {"endpoint_b", r.endpoint_b.str()},
         {"strands_needed", r.strands_needed},
         {"bid_amount", r.bid_amount.micros},
         {"time", {{"start", to_seconds(r.time.start)}, {"duration_s", r.time.duration_s}}},
         {"capacity_needed_bps", r.capacity_needed},
         {"client_name", r.client_name}};
  if (r.value) j["value"] = r.value->micros;
  if (r.backup_required) j["backup_required"] = true;
  if (r.elastic) j["elastic"] = true;
  return j;
}

std::string_view immediacy_name(Immediacy i) { return i == Immediacy::Realtime ? "realtime" : "non-realtime"; }

std::string_view timescale_name(Timescale t) {
  switch (t) {
    case Timescale::Small: return "small";
    case Timescale::Medium: return "medium";
    case Timescale::Large: return "large";
    case Timescale::ExtraLarge: return "extra-large";
  }
  return "?";
}

Timescale timescale_for(double duration_s) {
  if (duration_s < kHour) return Timescale::Small;
  if (duration_s < kDay) return Timescale::Medium;
  if (duration_s < kYear) return Timescale::Large;
  return Timescale::ExtraLarge;
}

ProvisionClass classify_request(const ResourceRequest& r, Millis now) {
  return ProvisionClass{r.time.start <= now ? Immediacy::Realtime : Immediacy::NonRealtime,
                        timescale_for(r.time.duration_s), r.backup_required, r.elastic};
}

std::string_view lease_state_name(LeaseState s) {
  switch (s) {
    case LeaseState::Pending: return "pending";
    case LeaseState::Active: return "active";
    case LeaseState::Expired: return "expired";
    case LeaseState::TornDown: return "torn-down";
  }
  return "?";
}

std::string_view disposition_name(Disposition d) {
  switch (d) {
    case Disposition::Granted: return "granted";
    case Disposition::Rejected: return "rejected";
    case Disposition::Outbid: return "outbid";
  }
  return "?";
}

// ---------------------------------------------------------------------------

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::AcceptBid: return "accept_bid";
    case Stage::Auction: return "auction";
    case Stage::WinnerNotify: return "winner_notify";
    case Stage::GraphQuery: return "graph_query";
    case Stage::Admissibility: return "admissibility";
    case Stage::ConfigGeneration: return "config_generation";
    case Stage::ConfigPush: return "config_push";
    case Stage::CircuitCreation: return "circuit_creation";
    case Stage::LeaseActivation: return "lease_activation";
    case Stage::CounterUpdate: return "counter_update";
    case Stage::Notify: return "notify";
  }
  return "?";
}

Stage parse_stage(std::string_view s) {
  for (Stage st : kStages)
    if (stage_name(st) == s) return st;
  throw Error(Errc::MalformedLog, fmt::format("unknown stage '{}'", s));
}

void EventLog::append(const StageRecord& r) {
  std::lock_guard lock(mu_);
  records_.push_back(r);
}

std::vector<StageRecord> EventLog::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::size_t EventLog::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

std::string EventLog::line(const StageRecord& r) {
  return fmt::format(R"({{"request_id":{},"stage":"{}","step":{},"t_start":{:.3f},"t_end":{:.3f}}})",
                     r.request_id.value, stage_name(r.stage), stage_step(r.stage), to_seconds(r.t_start),
                     to_seconds(r.t_end));
}

std::string EventLog::to_jsonl() const {
  std::lock_guard lock(mu_);
  std::string out;
  for (const auto& r : records_) out += line(r) + "\n";
  return out;
}

std::vector<StageRecord> EventLog::parse_jsonl(std::string_view text) {
  std::vector<StageRecord> out;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (raw.empty()) continue;
    json j = json::parse(raw, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(Errc::MalformedLog, fmt::format("line {}: not JSON", lineno));
    try {
      StageRecord r;
      r.request_id = RequestId{j.at("request_id").get<std::uint64_t>()};
      r.stage = parse_stage(j.at("stage").get<std::string>());
      r.t_start = from_seconds(j.at("t_start").get<double>());
      r.t_end = from_seconds(j.at("t_end").get<double>());
      if (r.t_end < r.t_start) throw Error(Errc::MalformedLog, fmt::format("line {}: stage ends before it starts", lineno));
      out.push_back(r);
    } catch (const json::exception& e) {
      throw Error(Errc::MalformedLog, fmt::format("line {}: {}", lineno, e.what()));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

json to_json(const SiteConfig& c) {
  json circuits = json::array();
  for (const auto& sc : c.circuits)
    circuits.push_back({{"circuit", sc.circuit.value},
                        {"link", sc.link.str()},
                        {"wavelength", sc.wavelength},
                        {"bandwidth_bps", sc.bandwidth},
                        {"lane", sc.lane},
                        {"hop", sc.hop}});
  return {{"site", c.site.str()},           {"lease", c.lease.value},
          {"allocation", c.allocation.value}, {"circuits", circuits},
          {"start", to_seconds(c.start)},   {"expiry", to_seconds(c.expiry)},
          {"anchor", c.anchor}};
}

SiteConfig site_config_from_json(const json& j) {
  try {
    SiteConfig c;
    c.site = SiteId{j.at("site").get<std::string>()};
    c.lease = LeaseId{j.at("lease").get<std::uint64_t>()};
    c.allocation = AllocationId{j.at("allocation").get<std::uint64_t>()};
    for (const auto& x : j.at("circuits"))
      c.circuits.push_back({CircuitId{x.at("circuit").get<std::uint64_t>()}, LinkId{x.at("link").get<std::string>()},
                            x.at("wavelength").get<std::uint32_t>(), x.at("bandwidth_bps").get<Bps>(),
                            x.at("lane").get<std::size_t>(), x.at("hop").get<std::size_t>()});
    c.start = from_seconds(j.at("start").get<double>());
    c.expiry = from_seconds(j.at("expiry").get<double>());
    c.anchor = j.value("anchor", false);
    return c;
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaViolation, fmt::format("site config: {}", e.what()));
  }
}

ConfigBundle generate_configuration(const TopologyGraph& graph, const Lease& lease,
                                    const std::vector<std::size_t>& lanes) {
  const std::set<std::size_t> wanted(lanes.begin(), lanes.end());
  const SiteId anchor = graph.node(lease.path.src).site;
  std::map<SiteId, SiteConfig> by_site;
  for (const auto& c : lease.allocation.circuits) {
    if (!wanted.count(c.lane)) continue;
    auto conduit = graph.conduit(graph.link(c.link).conduit);
    std::set<SiteId> sites{graph.node(conduit.a).site, graph.node(conduit.b).site};
    for (const auto& site : sites) {
      auto& cfg = by_site[site];
      cfg.site = site;
      cfg.circuits.push_back({c.id, c.link, c.wavelength, c.bandwidth, c.lane, c.hop});
    }
  }
  ConfigBundle bundle{lease.id, {}};
  for (auto& [site, cfg] : by_site) {
    cfg.lease = lease.id;
    cfg.allocation = lease.allocation.id;
    cfg.start = lease.start;
    cfg.expiry = lease.expiry;
    cfg.anchor = site == anchor;
    bundle.configs.push_back(std::move(cfg));
  }
  return bundle;
}

ConfigBundle generate_configuration(const TopologyGraph& graph, const Lease& lease) {
  std::vector<std::size_t> all(lease.allocation.path.lanes.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return generate_configuration(graph, lease, all);
}

ControlCosts ControlCosts::zero() {
  ControlCosts c;
  c.accept_bid = c.auction = c.winner_notify = c.graph_query = c.admissibility = c.config_push = c.lease_activation =
      c.counter_update = c.notify = Millis{0};
  c.model_config_generation = false;
  return c;
}

Millis config_generation_cost(std::size_t links) {
  static const std::vector<std::pair<std::size_t, double>> table{
      {1, 0.124}, {2, 0.116}, {3, 0.107}, {4, 0.148}, {5, 0.126},
      {10, 0.112}, {20, 0.119}, {30, 0.120}, {40, 0.112}, {50, 0.121},
  };
  links = std::max<std::size_t>(links, 1);
  if (links >= table.back().first) return from_seconds(table.back().second);
  auto hi = std::find_if(table.begin(), table.end(), [&](const auto& p) { return p.first >= links; });
  if (hi->first == links || hi == table.begin()) return from_seconds(hi->second);
  auto lo = std::prev(hi);
  double f = static_cast<double>(links - lo->first) / static_cast<double>(hi->first - lo->first);
  return from_seconds(lo->second + f * (hi->second - lo->second));
}

BackupMode parse_backup_mode(std::string_view s) {
  if (s == "local" || s == "greyfiber") return BackupMode::Local;
  if (s == "none") return BackupMode::None;
  throw Error(Errc::InvalidArgument, fmt::format("unknown backup mode '{}'", s));
}

std::string_view backup_mode_name(BackupMode m) { return m == BackupMode::Local ? "local" : "none"; }

// ---------------------------------------------------------------------------

Ggc::Ggc(TopologyGraph& graph, exchange::Exchange& exchange, sim::Scheduler& sched, EventLog& log,
         GgcOptions options)
    : graph_(graph), exchange_(exchange), sched_(sched), log_(log), opts_(std::move(options)) {}

void Ggc::attach_agent(SiteAgent* agent) { agents_[agent->site()] = agent; }
void Ggc::detach_agent(const SiteId& site) { agents_.erase(site); }

Millis Ggc::now() const { return opts_.clock ? std::max(opts_.clock(), sched_.now()) : sched_.now(); }

Millis Ggc::finish(Millis start, Millis cost) const { return std::max(start + cost, now()); }

void Ggc::record(RequestId id, Stage stage, Millis start, Millis end) { log_.append({id, stage, start, end}); }

std::vector<LinkId> Ggc::register_seller(const SellerId& seller, const topology::TopologyDocument& fragment,
                                         const std::map<LinkId, Money>& reserves) {
  count("REGISTER_SELLER");
  auto touched = graph_.merge(fragment, seller);
  std::map<SiteId, std::vector<LinkId>> by_site;
  for (const auto& l : touched) {
    auto it = reserves.find(l);
    Money reserve = it != reserves.end() ? it->second : Money{0};
    if (auto cur = exchange_.offering_for(l); cur && cur->reserve != reserve) exchange_.withdraw_offering(cur->id);
    exchange_.register_offering(seller, l, reserve, now());
    by_site[graph_.owner_site(l)].push_back(l);
  }
  for (const auto& [site, links] : by_site) {
    if (auto it = agents_.find(site); it != agents_.end()) {
      count("REGISTER");
      it->second->links_registered(links);
    }
  }
  return touched;
}

std::string Ggc::register_buyer(const std::string& client_name) {
  if (client_name.empty()) throw Error(Errc::InvalidArgument, "buyer needs a name");
  if (buyers_.count(client_name)) throw Error(Errc::DuplicateBuyer, client_name);
  count("REGISTER_BUYER");
  auto token = fmt::format("buyer-{}", buyers_.size() + 1);
  buyers_[client_name] = token;
  exchange_.register_bidder(client_name);
  return token;
}

bool Ggc::is_buyer(const std::string& client_name) const { return buyers_.count(client_name) != 0; }

RequestId Ggc::submit(const ResourceRequest& request) {
  RequestId id{next_request_++};
  const Millis t = now();
  Pending p{id, request, {}, t};
  count("SUBMIT_BID");
  auto refuse = [&](const std::string& reason) {
    Millis end = finish(t, opts_.costs.accept_bid);
    record(id, Stage::AcceptBid, t, end);
    decide(p, Disposition::Rejected, reason, Money{0}, end);
    return id;
  };
  try {
    request.validate();
  } catch (const Error& e) {
    return refuse(std::string(errc_name(e.code())));
  }
  p.cls = classify_request(request, t);
  if (!is_buyer(request.client_name)) return refuse("UnknownBidder");

  auto [a, b] = std::minmax(request.endpoint_a, request.endpoint_b);
  RoundKey key{t, a, b, request.strands_needed, request.capacity_needed,
               p.cls.immediacy == Immediacy::NonRealtime ? request.time.start : Millis{0}};
  auto& round = rounds_[key];
  for (const auto& other : round)
    if (other.request.client_name == request.client_name) return refuse("DuplicateBid");
  round.push_back(p);
  if (round.size() == 1)
    sched_.at(finish(t, opts_.costs.accept_bid), sim::Phase::Control, [this, key] { close_round(key); });
  return id;
}

void Ggc::close_round(const RoundKey& key) {
  auto members = std::move(rounds_.at(key));
  rounds_.erase(key);
  const Millis t7 = now();
  for (const auto& m : members) record(m.id, Stage::AcceptBid, m.submitted, t7);

  // The lot covers the first candidate path; it is won or lost as a whole.
  const auto& probe = members.front().request;
  auto paths = graph_.find_candidate_paths(probe.endpoint_a, probe.endpoint_b, probe.strands_needed,
                                           probe.capacity_needed);
  Money reserve{0};
  std::vector<OfferingId> offerings;
  if (!paths.empty()) {
    for (const auto& l : paths.front().segments()) {
      if (auto o = exchange_.offering_for(l)) {
        reserve = reserve + o->reserve;
        offerings.push_back(o->id);
      }
    }
  }
  // Slots: how many members could be served at once, by a greedy dry run.
  std::size_t slots = 0;
  if (!paths.empty()) {
    TopologyGraph dry(graph_);
    for (std::size_t i = 0; i < members.size(); ++i) {
      auto cand = dry.find_candidate_paths(probe.endpoint_a, probe.endpoint_b, probe.strands_needed,
                                           probe.capacity_needed);
      if (cand.empty()) break;
      dry.allocate(cand.front(), probe.strands_needed, probe.capacity_needed, LeaseId{0});
      ++slots;
    }
  }
  slots = std::max<std::size_t>(slots, 1);

  LotId lot = exchange_.open_lot(offerings, slots, reserve);
  std::vector<Pending> bidders;
  for (const auto& m : members) {
    exchange::Bid bid{m.request.client_name, lot, m.request.bid_amount, m.request.value.value_or(m.request.bid_amount),
                      m.submitted};
    try {
      exchange_.submit_bid(bid);
      bidders.push_back(m);
    } catch (const Error& e) {
      Millis end = finish(t7, opts_.costs.auction);
      record(m.id, Stage::Auction, t7, end);
      decide(m, Disposition::Rejected, std::string(errc_name(e.code())), Money{0}, end);
    }
  }
  if (bidders.empty()) return;

  std::optional<exchange::AuctionOutcome> outcome;
  try {
    outcome = exchange_.close_lot(lot, opts_.mechanism);
  } catch (const Error& e) {
    if (e.code() != Errc::EmptyRound) throw;
  }
  const Millis t8 = finish(t7, opts_.costs.auction);
  for (const auto& m : bidders) record(m.id, Stage::Auction, t7, t8);
  if (!outcome) {
    for (const auto& m : bidders) decide(m, Disposition::Rejected, "BelowReserve", Money{0}, t8);
    return;
  }
  count("AUCTION_RESULT");
  const Millis t9 = finish(t8, opts_.costs.winner_notify);
  for (const auto& m : bidders) record(m.id, Stage::WinnerNotify, t8, t9);

  for (const auto& m : bidders)
    if (!outcome->award_for(m.request.client_name)) decide(m, Disposition::Outbid, "Outbid", Money{0}, t9);
  for (const auto& w : outcome->winners) {
    auto it = std::find_if(bidders.begin(), bidders.end(),
                           [&](const Pending& m) { return m.request.client_name == w.bidder; });
    Flight f;
    f.pending = *it;
    f.payment = w.payment;
    RequestId id = it->id;
    flights_.emplace(id, std::move(f));
    // Scheduled requests hold here until their start time.
    Millis go = it->cls.immediacy == Immediacy::NonRealtime ? std::max(t9, it->request.time.start) : t9;
    sched_.at(go, sim::Phase::Control, [this, id] { start_provisioning(id); });
  }
}

void Ggc::start_provisioning(RequestId id) {
  const Millis t = now();
  const Millis t10 = finish(t, opts_.costs.graph_query);
  record(id, Stage::GraphQuery, t, t10);
  sched_.at(t10, sim::Phase::Control, [this, id, t10] { admit(id, t10); });
}

void Ggc::admit(RequestId id, Millis t) {
  auto& f = flights_.at(id);
  const auto& r = f.pending.request;
  auto result = graph_.check_admissibility({r.endpoint_a, r.endpoint_b, r.strands_needed, r.capacity_needed});
  const Millis t11 = finish(t, opts_.costs.admissibility);
  record(id, Stage::Admissibility, t, t11);
  if (!result.admissible) {
    reject(id, std::string(topology::reject_reason_name(*result.reason)), t11);
    return;
  }
  LeaseId lid{next_lease_++};
  std::optional<topology::CircuitAllocation> alloc;
  std::string failure = "ConcurrentDepletion";
  for (const auto& path : result.candidates) {
    try {
      alloc = graph_.allocate(path, r.strands_needed, r.capacity_needed, lid);
      break;
    } catch (const Error& e) {
      if (e.code() != Errc::ConcurrentDepletion && e.code() != Errc::WavelengthExhausted) throw;
      failure = std::string(errc_name(e.code()));
    }
  }
  if (!alloc) {
    reject(id, failure, t11);
    return;
  }
  Lease lease;
  lease.id = lid;
  lease.request = id;
  lease.buyer = r.client_name;
  lease.path = alloc->path;
  lease.allocation = *alloc;
  lease.price = f.payment;
  lease.state = LeaseState::Pending;
  leases_.emplace(lid, lease);
  f.lease = lid;
  sched_.at(t11, sim::Phase::Control, [this, id, t11] { configure(id, t11); });
}

void Ggc::configure(RequestId id, Millis t) {
  auto& f = flights_.at(id);
  auto& lease = leases_.at(*f.lease);
  f.bundle = generate_configuration(graph_, lease);
  Millis cost = opts_.costs.model_config_generation ? config_generation_cost(lease.path.segments().size()) : Millis{0};
  const Millis t12 = finish(t, cost);
  record(id, Stage::ConfigGeneration, t, t12);
  const Millis t13 = finish(t12, opts_.costs.config_push);
  record(id, Stage::ConfigPush, t12, t13);
  f.push_end = t13;
  f.last_ack = t13;
  f.acks_pending = f.bundle.configs.size();
  sched_.at(t13, sim::Phase::Control, [this, id] {
    auto& fl = flights_.at(id);
    auto configs = fl.bundle.configs;
    for (const auto& cfg : configs) {
      auto it = agents_.find(cfg.site);
      if (it == agents_.end()) {
        on_ack(id, ConfigAck{cfg.site, cfg.lease, HandleId{}, Millis{0}, false, "no agent for site " + cfg.site.str()});
        continue;
      }
      count("CONFIG_PUSH");
      it->second->push_config(cfg, [this, id](const ConfigAck& ack) { on_ack(id, ack); });
    }
  });
}

void Ggc::on_ack(RequestId id, const ConfigAck& ack) {
  auto it = flights_.find(id);
  if (it == flights_.end()) return;
  auto& f = it->second;
  if (ack.handle.value != 0) count("CONFIG_ACK");
  if (!ack.ok) {
    f.failed = true;
    if (f.failure.empty()) f.failure = ack.error;
  }
  f.last_ack = std::max(f.last_ack, now());
  if (--f.acks_pending > 0) return;
  if (f.failed) {
    reject(id, f.failure, f.last_ack);
    return;
  }
  record(id, Stage::CircuitCreation, f.push_end, f.last_ack);
  activate(id, f.last_ack);
}

void Ggc::activate(RequestId id, Millis t) {
  auto node = flights_.extract(id);
  auto& f = node.mapped();
  auto& lease = leases_.at(*f.lease);
  lease.state = LeaseState::Active;
  lease.start = t;
  lease.expiry = t + from_seconds(f.pending.request.time.duration_s);
  if (observer_) observer_->on_active(lease, t);
  const Millis t15 = finish(t, opts_.costs.lease_activation);
  record(id, Stage::LeaseActivation, t, t15);
  // Counters were debited atomically at admission; this stage commits them.
  const Millis t16 = finish(t15, opts_.costs.counter_update);
  record(id, Stage::CounterUpdate, t15, t16);
  const Millis t17 = finish(t16, opts_.costs.notify);
  record(id, Stage::Notify, t16, t17);
  sched_.at(lease.expiry, sim::Phase::Control, [this] { expire_leases(now()); });
  decide(f.pending, Disposition::Granted, "", f.payment, t17, lease);
}

void Ggc::reject(RequestId id, const std::string& reason, Millis t) {
  auto node = flights_.extract(id);
  if (node.empty()) return;
  auto& f = node.mapped();
  if (f.lease) {
    auto& lease = leases_.at(*f.lease);
    teardown(lease, LeaseState::TornDown);
    leases_.erase(*f.lease);
  }
  // The payment obligation from the auction is cancelled.
  decide(f.pending, Disposition::Rejected, reason, Money{0}, t);
}

void Ggc::decide(const Pending& p, Disposition d, const std::string& reason, Money payment, Millis t,
                 std::optional<Lease> lease) {
  LeaseOutcome o;
  o.request = p.id;
  o.client = p.request.client_name;
  o.disposition = d;
  o.reason = reason;
  o.payment = payment;
  o.decided_at = t;
  if (lease) {
    Connectivity c;
    c.path = lease->path;
    for (const auto& circuit : lease->allocation.circuits) {
      c.circuits.push_back(circuit.id);
      c.wavelengths.emplace_back(circuit.link, circuit.wavelength);
    }
    o.connectivity = std::move(c);
    o.lease = std::move(lease);
  }
  outcomes_.push_back(o);
  if (sink_) sink_(outcomes_.back());
}

void Ggc::teardown(Lease& lease, LeaseState final_state) {
  std::vector<SiteId> sites;
  if (graph_.is_live(lease.allocation.id)) {
    lease.allocation = graph_.allocation(lease.allocation.id);
    for (const auto& cfg : generate_configuration(graph_, lease).configs) sites.push_back(cfg.site);
  }
  for (const auto& site : sites) {
    if (auto it = agents_.find(site); it != agents_.end()) {
      count("TEARDOWN");
      it->second->teardown(lease.id);
    }
  }
  // Agents release through the anchor site; anything left is cleaned up here.
  if (graph_.is_live(lease.allocation.id)) graph_.release(lease.allocation.id);
  if (observer_) observer_->on_released(lease);
  lease.state = final_state;
}

std::vector<LeaseId> Ggc::expire_leases(Millis now) {
  std::vector<LeaseId> out;
  for (auto& [id, lease] : leases_) {
    if (lease.state != LeaseState::Active || lease.expiry > now) continue;
    teardown(lease, LeaseState::Expired);
    out.push_back(id);
  }
  return out;
}

void Ggc::status_batch(const SiteId&, const std::vector<StatusReport>& reports) {
  count("STATUS_REPORT");
  status_reports_ += reports.size();
  // Remote sites do not share the graph; their reports carry link health.
  for (const auto& r : reports) {
    if (!graph_.has_link(r.link)) continue;
    auto want = r.loss >= 1.0 ? topology::LinkStatus::Down : topology::LinkStatus::Up;
    if (graph_.link(r.link).status != want) graph_.set_link_status(r.link, want);
  }
}

void Ggc::failure_notify(const SiteId&, const LinkId& link, LeaseId lease_id, std::size_t lane, std::size_t hop,
                         Millis detected_at, bool local_exhausted) {
  count("FAILURE_NOTIFY");
  if (graph_.has_link(link) && graph_.link(link).status != topology::LinkStatus::Down)
    graph_.set_link_status(link, topology::LinkStatus::Down);
  auto it = leases_.find(lease_id);
  if (it == leases_.end() || it->second.state != LeaseState::Active || !graph_.is_live(it->second.allocation.id))
    return;
  if (opts_.backup == BackupMode::None) {
    backups_.push_back({lease_id, lane, link, detected_at, std::nullopt, "disabled"});
    return;
  }
  auto& lease = it->second;
  if (!local_exhausted) {
    auto conduit = graph_.link(link).conduit;
    if (auto spare = graph_.find_spare(conduit, lease.allocation.capacity, {link})) {
      graph_.replace_hop(lease.allocation.id, lane, hop, *spare);
      push_replacement(lease_id, lane, link, detected_at, "same-conduit");
      return;
    }
  }
  escalate(lease_id, lane, link, detected_at);
}

void Ggc::escalate(LeaseId lease_id, std::size_t lane, const LinkId& failed, Millis detected_at) {
  auto& lease = leases_.at(lease_id);
  lease.allocation = graph_.allocation(lease.allocation.id);
  const auto& nodes = lease.allocation.path.lanes.at(lane).nodes;
  auto candidates = graph_.find_candidate_paths(nodes.front(), nodes.back(), 1, lease.allocation.capacity);
  for (const auto& c : candidates) {
    try {
      graph_.replace_lane(lease.allocation.id, lane, c.lanes.front());
      push_replacement(lease_id, lane, failed, detected_at, "escalated");
      return;
    } catch (const Error& e) {
      if (e.code() != Errc::ConcurrentDepletion && e.code() != Errc::WavelengthExhausted) throw;
    }
  }
  backups_.push_back({lease_id, lane, failed, detected_at, std::nullopt, "unrecovered"});
}

void Ggc::push_replacement(LeaseId lease_id, std::size_t lane, const LinkId& failed, Millis detected_at,
                           const std::string& how) {
  auto& lease = leases_.at(lease_id);
  lease.allocation = graph_.allocation(lease.allocation.id);
  lease.path = lease.allocation.path;
  auto bundle = generate_configuration(graph_, lease, {lane});
  struct Tally {
    std::size_t pending = 0;
    Millis last{0};
    bool ok = true;
  };
  auto tally = std::make_shared<Tally>();
  tally->pending = bundle.configs.size();
  tally->last = now();
  auto done = [this, tally, lease_id, lane, failed, detected_at, how](const ConfigAck& ack) {
    if (!ack.ok) tally->ok = false;
    tally->last = std::max(tally->last, now());
    if (--tally->pending > 0) return;
    auto it = leases_.find(lease_id);
    if (it == leases_.end() || !tally->ok) {
      backups_.push_back({lease_id, lane, failed, detected_at, std::nullopt, "unrecovered"});
      return;
    }
    if (observer_) observer_->on_lane_replaced(it->second, lane, tally->last);
    backups_.push_back({lease_id, lane, failed, detected_at, tally->last, how});
  };
  for (const auto& cfg : bundle.configs) {
    auto it = agents_.find(cfg.site);
    if (it == agents_.end()) {
      done(ConfigAck{cfg.site, lease_id, HandleId{}, Millis{0}, false, "no agent"});
      continue;
    }
    count("PROVISION_BACKUP");
    it->second->push_config(cfg, done);
  }
}

void Ggc::backup_provisioned(const SiteId&, LeaseId lease_id, std::size_t lane, const LinkId& failed,
                             Millis detected_at, Millis active_from) {
  count("PROVISION_BACKUP");
  auto it = leases_.find(lease_id);
  if (it == leases_.end() || !graph_.is_live(it->second.allocation.id)) return;
  it->second.allocation = graph_.allocation(it->second.allocation.id);
  it->second.path = it->second.allocation.path;
  if (observer_) observer_->on_lane_replaced(it->second, lane, active_from);
  backups_.push_back({lease_id, lane, failed, detected_at, active_from, "same-conduit"});
}

std::optional<Lease> Ggc::lease(LeaseId id) const {
  auto it = leases_.find(id);
  if (it == leases_.end()) return std::nullopt;
  return it->second;
}

std::vector<Lease> Ggc::leases() const {
  std::vector<Lease> out;
  for (const auto& [_, l] : leases_) out.push_back(l);
  return out;
}

std::optional<LeaseOutcome> Ggc::outcome(RequestId id) const {
  for (const auto& o : outcomes_)
    if (o.request == id) return o;
  return std::nullopt;
}

}  // namespace gf::ggc
