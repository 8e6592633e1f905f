#include "greyfiber/substrate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "greyfiber/error.hpp"

namespace gf::substrate {

LatencyProfile LatencyProfile::named(std::string_view name) {
  if (name == "ideal") return {ProfileKind::Ideal};
  if (name == "optical") return {ProfileKind::Optical};
  if (name == "geni") return {ProfileKind::Geni};
  throw Error(Errc::InvalidArgument, fmt::format("unknown latency profile '{}'", name));
}

std::string_view LatencyProfile::name() const {
  switch (kind) {
    case ProfileKind::Ideal: return "ideal";
    case ProfileKind::Optical: return "optical";
    case ProfileKind::Geni: return "geni";
  }
  return "?";
}

const std::vector<TablePoint>& geni_table() {
  // Circuit provision time in seconds by link count, five-run means.
  static const std::vector<TablePoint> table{
      {1, 19}, {2, 22}, {3, 21}, {4, 25}, {5, 24}, {10, 33}, {20, 35}, {30, 37}, {40, 47}, {50, 54},
  };
  return table;
}

Millis provision_latency(const LatencyProfile& profile, std::size_t n) {
  if (n == 0) throw Error(Errc::InvalidArgument, "provision latency needs at least one link");
  switch (profile.kind) {
    case ProfileKind::Ideal: return Millis{0};
    case ProfileKind::Optical: return Millis{240};
    case ProfileKind::Geni: break;
  }
  const auto& t = geni_table();
  if (n <= t.front().links) return from_seconds(t.front().seconds);
  if (n >= t.back().links) return from_seconds(t.back().seconds);
  auto hi = std::find_if(t.begin(), t.end(), [&](const TablePoint& p) { return p.links >= n; });
  auto lo = std::prev(hi);
  double frac = static_cast<double>(n - lo->links) / static_cast<double>(hi->links - lo->links);
  return from_seconds(lo->seconds + frac * (hi->seconds - lo->seconds));
}

void FlowModelParams::validate() const {
  if (!(efficiency > 0.0 && efficiency <= 1.0)) throw Error(Errc::InvalidArgument, "efficiency must lie in (0, 1]");
  if (warmup.count() < 0) throw Error(Errc::InvalidArgument, "warmup must be non-negative");
  if (ramp && ramp_step.count() <= 0) throw Error(Errc::InvalidArgument, "ramp step must be positive");
}

std::vector<double> max_min_share(double capacity, const std::vector<double>& demands) {
  std::vector<double> out(demands.size(), 0.0);
  if (demands.empty() || capacity <= 0.0) return out;
  std::vector<std::size_t> order(demands.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return demands[a] < demands[b]; });
  double left = capacity;
  std::size_t i = 0;
  for (; i < order.size(); ++i) {
    double share = left / static_cast<double>(order.size() - i);
    if (demands[order[i]] > share) break;
    out[order[i]] = std::max(0.0, demands[order[i]]);
    left -= out[order[i]];
  }
  // Everyone still unsatisfied gets the same share, so identical flows are exactly equal.
  if (i < order.size()) {
    double share = left / static_cast<double>(order.size() - i);
    for (; i < order.size(); ++i) out[order[i]] = share;
  }
  return out;
}

std::vector<double> fair_share_throughput(const std::vector<Flow>& active, const std::vector<Bps>& live_capacities,
                                          const FlowModelParams& params) {
  params.validate();
  double total = 0.0;
  for (Bps c : live_capacities) total += static_cast<double>(std::max<Bps>(c, 0));
  std::vector<double> demands;
  demands.reserve(active.size());
  for (const auto& f : active) demands.push_back(f.demand_bps);
  return max_min_share(params.efficiency * total, demands);
}

void OspfTimers::validate() const {
  if (hello_s <= 0 || dead_s <= 0 || wait_s < 0) throw Error(Errc::InvalidArgument, "OSPF timers must be positive");
  if (wait_s > dead_s) throw Error(Errc::InvalidArgument, "OSPF wait must not exceed dead");
  if (hello_s > dead_s) throw Error(Errc::InvalidArgument, "OSPF hello must not exceed dead");
}

Millis ospf_recovery_time(const OspfTimers& timers, Millis t_fail) {
  timers.validate();
  return t_fail + from_seconds(timers.dead_s - timers.wait_s);
}

// ---------------------------------------------------------------------------

namespace {

std::pair<NodeId, NodeId> ordered(const NodeId& a, const NodeId& b) {
  return a < b ? std::pair{a, b} : std::pair{b, a};
}

double overlap_bits(Millis a, Millis b, Millis from, Millis to, double rate) {
  Millis lo = std::max(a, from), hi = std::min(b, to);
  if (hi <= lo || rate == 0.0) return 0.0;
  return rate * to_seconds(hi - lo);
}

}  // namespace

double bits_transferred(const RateTrace& trace, const std::string& flow, Millis from, Millis to) {
  double bits = 0.0;
  const RatePoint* prev = nullptr;
  for (const auto& p : trace) {
    if (p.flow != flow) continue;
    if (prev) bits += overlap_bits(prev->t, p.t, from, to, prev->rate_bps);
    prev = &p;
  }
  if (prev) bits += overlap_bits(prev->t, std::max(prev->t, to), from, to, prev->rate_bps);
  return bits;
}

double bits_transferred(const RateTrace& trace, Millis from, Millis to) {
  double bits = 0.0;
  for (const auto& f : trace_flows(trace)) bits += bits_transferred(trace, f, from, to);
  return bits;
}

double mean_rate(const RateTrace& trace, const std::string& flow, Millis from, Millis to) {
  if (to <= from) throw Error(Errc::InvalidArgument, "empty averaging window");
  return bits_transferred(trace, flow, from, to) / to_seconds(to - from);
}

double rate_at(const RateTrace& trace, const std::string& flow, Millis t) {
  double r = 0.0;
  for (const auto& p : trace) {
    if (p.t > t) break;
    if (p.flow == flow) r = p.rate_bps;
  }
  return r;
}

double aggregate_rate_at(const RateTrace& trace, Millis t) {
  std::map<std::string, double> cur;
  for (const auto& p : trace) {
    if (p.t > t) break;
    cur[p.flow] = p.rate_bps;
  }
  double sum = 0.0;
  for (const auto& [_, r] : cur) sum += r;
  return sum;
}

std::vector<std::string> trace_flows(const RateTrace& trace) {
  std::set<std::string> ids;
  for (const auto& p : trace) ids.insert(p.flow);
  return {ids.begin(), ids.end()};
}

std::optional<Millis> recovery_lag(const RateTrace& trace, Millis t_fail) {
  if (aggregate_rate_at(trace, t_fail) > 0.0) return Millis{0};
  std::set<Millis> times;
  for (const auto& p : trace)
    if (p.t > t_fail) times.insert(p.t);
  for (Millis t : times)
    if (aggregate_rate_at(trace, t) > 0.0) return t - t_fail;
  return std::nullopt;
}

std::string to_csv(const RateTrace& trace) {
  std::string out = "t_s,flow_id,rate_bps\n";
  for (const auto& p : trace) out += fmt::format("{:.3f},{},{}\n", to_seconds(p.t), p.flow, p.rate_bps);
  return out;
}

RateTrace parse_csv(const std::string& text) {
  RateTrace trace;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("t_s,", 0) == 0) continue;
    }
    auto c1 = line.find(','), c2 = line.rfind(',');
    if (c1 == std::string::npos || c1 == c2) throw Error(Errc::MalformedLog, "bad rate row: " + line);
    try {
      trace.push_back({from_seconds(std::stod(line.substr(0, c1))), line.substr(c1 + 1, c2 - c1 - 1),
                       std::stod(line.substr(c2 + 1))});
    } catch (const std::logic_error&) {
      throw Error(Errc::MalformedLog, "bad rate row: " + line);
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------

Network::Network(sim::Scheduler& sched, FlowModelParams params) : sched_(sched), params_(params) {
  params_.validate();
}

void Network::add_link(const LinkId& link, Bps capacity) {
  if (capacity < 0) throw Error(Errc::InvalidArgument, "negative link capacity");
  links_[link] = LinkState{capacity, true};
}

bool Network::has_link(const LinkId& link) const { return links_.count(link) != 0; }

bool Network::link_up(const LinkId& link) const {
  auto it = links_.find(link);
  if (it == links_.end()) throw Error(Errc::UnknownLink, link.str());
  return it->second.up;
}

void Network::inject_failure(const FailureSchedule& schedule) {
  for (const auto& f : schedule) {
    if (!has_link(f.link)) throw Error(Errc::UnknownLink, f.link.str());
    if (f.repair && *f.repair <= f.fail) throw Error(Errc::InvalidArgument, "repair must follow failure");
  }
  for (const auto& f : schedule) {
    sched_.at(f.fail, sim::Phase::Physical, [this, l = f.link] { fail_link(l); });
    if (f.repair) sched_.at(*f.repair, sim::Phase::Physical, [this, l = f.link] { repair_link(l); });
  }
}

void Network::fail_link(const LinkId& link) {
  auto& st = links_.at(link);
  st.up = false;
  std::set<std::pair<NodeId, NodeId>> cut;
  for (auto& [key, lane] : lanes_) {
    if (lane.severed || std::find(lane.links.begin(), lane.links.end(), link) == lane.links.end()) continue;
    lane.severed = true;
    if (!lane.standby) cut.insert(ordered(lane.a, lane.b));
  }
  if (ospf_ && !cut.empty()) {
    Millis resume = ospf_recovery_time(*ospf_, sched_.now());
    for (auto& [key, lane] : lanes_) {
      if (!lane.standby || lane.severed || !cut.count(ordered(lane.a, lane.b))) continue;
      sched_.at(resume, sim::Phase::Control, [this, k = key, resume] {
        auto it = lanes_.find(k);
        if (it == lanes_.end() || !it->second.standby) return;
        it->second.standby = false;
        it->second.active_from = resume;
        touch();
      });
    }
  }
  touch();
}

void Network::repair_link(const LinkId& link) {
  links_.at(link).up = true;
  touch();
}

void Network::add_flow(const Flow& flow) {
  if (flow.id.empty()) throw Error(Errc::InvalidArgument, "flow needs an id");
  if (flow.start >= flow.stop) throw Error(Errc::InvalidArgument, "flow " + flow.id + " must start before it stops");
  if (!(flow.demand_bps >= 0.0)) throw Error(Errc::InvalidArgument, "flow demand must be non-negative");
  for (const auto& f : flows_)
    if (f.id == flow.id) throw Error(Errc::DuplicateId, "flow " + flow.id);
  flows_.push_back(flow);
  std::sort(flows_.begin(), flows_.end(), [](const Flow& a, const Flow& b) { return a.id < b.id; });
  auto at = [this](Millis t) { sched_.at(t, sim::Phase::Control, [this] { touch(); }); };
  at(flow.start);
  at(flow.stop);
  if (params_.ramp && params_.warmup.count() > 0) {
    for (Millis t = flow.start + params_.ramp_step; t < flow.start + params_.warmup && t < flow.stop;
         t += params_.ramp_step)
      at(t);
    if (flow.start + params_.warmup < flow.stop) at(flow.start + params_.warmup);
  }
}

void Network::provision_lane(const LaneKey& key, const NodeId& a, const NodeId& b, std::vector<LinkId> links,
                             Bps capacity, Millis active_from) {
  LaneState lane{a, b, std::move(links), capacity, active_from, false, false};
  for (const auto& l : lane.links) {
    if (!link_up(l)) lane.severed = true;  // circuits never come up on a dark strand
    lane.capacity = std::min(lane.capacity, links_.at(l).capacity);
  }
  lanes_[key] = std::move(lane);
  sched_.at(active_from, sim::Phase::Control, [this] { touch(); });
  touch();
}

void Network::add_standby_lane(const LaneKey& key, const NodeId& a, const NodeId& b, std::vector<LinkId> links,
                               Bps capacity) {
  LaneState lane{a, b, std::move(links), capacity, Millis{0}, false, true};
  for (const auto& l : lane.links) lane.capacity = std::min(lane.capacity, links_.at(l).capacity);
  lanes_[key] = std::move(lane);
}

void Network::remove_lane(const LaneKey& key) {
  if (lanes_.erase(key)) touch();
}

void Network::remove_lease(LeaseId lease) {
  bool any = false;
  for (auto it = lanes_.begin(); it != lanes_.end();) {
    if (it->first.lease == lease) {
      it = lanes_.erase(it);
      any = true;
    } else {
      ++it;
    }
  }
  if (any) touch();
}

bool Network::carrying(const LaneState& lane, Millis now) const {
  if (lane.severed || lane.standby || now < lane.active_from) return false;
  for (const auto& l : lane.links)
    if (!links_.at(l).up) return false;
  return true;
}

bool Network::lane_carrying(const LaneKey& key) const {
  auto it = lanes_.find(key);
  return it != lanes_.end() && carrying(it->second, sched_.now());
}

std::vector<LaneKey> Network::lanes() const {
  std::vector<LaneKey> out;
  for (const auto& [k, _] : lanes_) out.push_back(k);
  return out;
}

std::map<std::string, double> Network::current_rates() const { return last_; }

void Network::touch() {
  if (sample_pending_) return;
  sample_pending_ = true;
  sched_.at(sched_.now(), sim::Phase::Sample, [this] {
    sample_pending_ = false;
    sample();
  });
}

double Network::ramp_factor(const Flow& f, Millis now) const {
  if (!params_.ramp || params_.warmup.count() == 0) return 1.0;
  auto since = (now - f.start).count();
  auto step = params_.ramp_step.count();
  double reached = static_cast<double>((since / step + 1) * step);
  return std::min(1.0, reached / static_cast<double>(params_.warmup.count()));
}

void Network::sample() {
  const Millis now = sched_.now();
  using Pair = std::pair<NodeId, NodeId>;
  std::map<Pair, std::vector<const Flow*>> groups;
  for (const auto& f : flows_)
    if (f.start <= now && now < f.stop) groups[ordered(f.src, f.dst)].push_back(&f);

  std::map<std::string, double> rates;
  for (const auto& f : flows_)
    if (now >= f.start) rates[f.id] = 0.0;
  for (const auto& [pair, members] : groups) {
    std::vector<Bps> caps;
    for (const auto& [_, lane] : lanes_)
      if (ordered(lane.a, lane.b) == pair && carrying(lane, now)) caps.push_back(lane.capacity);
    std::vector<Flow> active;
    for (const auto* f : members) active.push_back(*f);
    auto share = fair_share_throughput(active, caps, params_);
    for (std::size_t i = 0; i < members.size(); ++i)
      rates[members[i]->id] = share[i] * ramp_factor(*members[i], now);
  }
  for (const auto& [id, r] : rates) {
    auto it = last_.find(id);
    if (it != last_.end() && it->second == r) continue;
    trace_.push_back({now, id, r});
    last_[id] = r;
  }
}

}  // namespace gf::substrate
