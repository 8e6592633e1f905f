#include "greyfiber/topology.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <mutex>

#include <fmt/format.h>

#include "greyfiber/error.hpp"

namespace gf::topology {

using nlohmann::json;

std::string_view reject_reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::InsufficientStrands: return "InsufficientStrands";
    case RejectReason::InsufficientCapacity: return "InsufficientCapacity";
    case RejectReason::NoRoute: return "NoRoute";
  }
  return "Unknown";
}

Composition Path::composition() const {
  return (lanes.size() > 1 && hop_count() == 1) ? Composition::Parallel : Composition::Sequential;
}

std::vector<LinkId> Path::segments() const {
  std::vector<LinkId> out;
  for (const auto& lane : lanes)
    for (const auto& h : lane.hops) out.push_back(h.link);
  return out;
}

std::vector<ConduitId> Path::conduits() const {
  std::vector<ConduitId> out;
  if (lanes.empty()) return out;
  for (const auto& h : lanes.front().hops) out.push_back(h.conduit);
  return out;
}

// ---------------------------------------------------------------------------
// Document parsing

namespace {

[[noreturn]] void schema(const std::string& what) { throw Error(Errc::SchemaViolation, what); }

const json& require(const json& obj, const char* key, const char* where) {
  if (!obj.is_object() || !obj.contains(key)) schema(fmt::format("{}: missing field '{}'", where, key));
  return obj.at(key);
}

std::string require_string(const json& obj, const char* key, const char* where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string() || v.get<std::string>().empty())
    schema(fmt::format("{}: field '{}' must be a non-empty string", where, key));
  return v.get<std::string>();
}

std::int64_t require_nonneg_int(const json& obj, const char* key, const char* where) {
  const auto& v = require(obj, key, where);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    schema(fmt::format("{}: field '{}' must be a non-negative integer", where, key));
  return v.get<std::int64_t>();
}

LinkStatus parse_status(const json& v) {
  if (!v.is_string()) schema("link status must be a string");
  auto s = v.get<std::string>();
  if (s == "up" || s == "Up") return LinkStatus::Up;
  if (s == "down" || s == "Down") return LinkStatus::Down;
  schema("unknown link status '" + s + "'");
}

}  // namespace

TopologyDocument parse_topology(const json& doc) {
  if (!doc.is_object()) schema("topology document must be an object");
  TopologyDocument out;
  for (const char* key : {"nodes", "conduits", "links"}) {
    if (!doc.contains(key) || !doc.at(key).is_array())
      schema(fmt::format("topology: '{}' must be an array", key));
  }
  for (const auto& n : doc.at("nodes")) {
    Node node{NodeId{require_string(n, "id", "node")}, SiteId{require_string(n, "site", "node")}, {}};
    if (n.contains("geo")) {
      const auto& g = n.at("geo");
      if (g.is_object() && g.contains("lat") && g.contains("lon") && g.at("lat").is_number() &&
          g.at("lon").is_number()) {
        node.geo = {g.at("lat").get<double>(), g.at("lon").get<double>()};
      } else if (g.is_array() && g.size() == 2 && g[0].is_number() && g[1].is_number()) {
        node.geo = {g[0].get<double>(), g[1].get<double>()};
      } else {
        schema("node: 'geo' must be {lat, lon}");
      }
    }
    out.nodes.push_back(std::move(node));
  }
  for (const auto& c : doc.at("conduits")) {
    Conduit conduit;
    conduit.id = ConduitId{require_string(c, "id", "conduit")};
    const auto& ends = require(c, "endpoints", "conduit");
    if (!ends.is_array() || ends.size() != 2 || !ends[0].is_string() || !ends[1].is_string())
      schema("conduit: 'endpoints' must be a pair of node ids");
    conduit.a = NodeId{ends[0].get<std::string>()};
    conduit.b = NodeId{ends[1].get<std::string>()};
    const auto& links = require(c, "links", "conduit");
    if (!links.is_array()) schema("conduit: 'links' must be an array");
    for (const auto& l : links) {
      if (!l.is_string()) schema("conduit: link ids must be strings");
      conduit.links.emplace_back(l.get<std::string>());
    }
    out.conduits.push_back(std::move(conduit));
  }
  for (const auto& l : doc.at("links")) {
    FiberLink link;
    link.id = LinkId{require_string(l, "id", "link")};
    link.conduit = ConduitId{require_string(l, "conduit", "link")};
    link.seller = SellerId{require_string(l, "seller", "link")};
    link.max_bandwidth = require_nonneg_int(l, "max_bandwidth_bps", "link");
    link.wavelength_capacity = static_cast<std::uint32_t>(require_nonneg_int(l, "wavelength_capacity", "link"));
    link.available_bandwidth = link.max_bandwidth;
    if (l.contains("available_bandwidth_bps"))
      link.available_bandwidth = require_nonneg_int(l, "available_bandwidth_bps", "link");
    if (l.contains("wavelengths_in_use")) {
      const auto& w = l.at("wavelengths_in_use");
      if (!w.is_array()) schema("link: 'wavelengths_in_use' must be an array");
      for (const auto& idx : w) {
        if (!idx.is_number_integer() || idx.get<std::int64_t>() < 0)
          schema("link: wavelength indices must be non-negative integers");
        auto value = idx.get<std::uint32_t>();
        if (!link.external_wavelengths.insert(value).second)
          throw Error(Errc::DuplicateWavelength,
                      fmt::format("link {} declares wavelength {} twice", link.id.str(), value));
      }
    }
    if (l.contains("status")) link.status = parse_status(l.at("status"));
    link.external_bandwidth = link.max_bandwidth - link.available_bandwidth;
    link.wavelengths_in_use = link.external_wavelengths;
    out.links.push_back(std::move(link));
  }
  return out;
}

json to_json(const TopologyDocument& doc) {
  json out{{"nodes", json::array()}, {"conduits", json::array()}, {"links", json::array()}};
  for (const auto& n : doc.nodes)
    out["nodes"].push_back({{"id", n.id.str()}, {"site", n.site.str()}, {"geo", {{"lat", n.geo.lat}, {"lon", n.geo.lon}}}});
  for (const auto& c : doc.conduits) {
    json links = json::array();
    for (const auto& l : c.links) links.push_back(l.str());
    out["conduits"].push_back({{"id", c.id.str()}, {"endpoints", {c.a.str(), c.b.str()}}, {"links", links}});
  }
  for (const auto& l : doc.links) {
    out["links"].push_back({{"id", l.id.str()},
                            {"conduit", l.conduit.str()},
                            {"seller", l.seller.str()},
                            {"max_bandwidth_bps", l.max_bandwidth},
                            {"available_bandwidth_bps", l.max_bandwidth - l.external_bandwidth},
                            {"wavelength_capacity", l.wavelength_capacity},
                            {"wavelengths_in_use", l.external_wavelengths},
                            {"status", l.status == LinkStatus::Up ? "up" : "down"}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Construction

TopologyGraph::TopologyGraph(const TopologyDocument& doc) {
  State s;
  for (const auto& n : doc.nodes) {
    if (!s.nodes.emplace(n.id, n).second)
      throw Error(Errc::DuplicateId, "node " + n.id.str());
  }
  for (const auto& c : doc.conduits) {
    if (!s.conduits.emplace(c.id, c).second)
      throw Error(Errc::DuplicateId, "conduit " + c.id.str());
  }
  for (const auto& l : doc.links) {
    if (!s.links.emplace(l.id, l).second)
      throw Error(Errc::DuplicateId, "link " + l.id.str());
  }
  validate_and_index(s);
  state_ = std::move(s);
}

TopologyGraph::TopologyGraph(const TopologyGraph& other) {
  std::shared_lock lock(other.mu_);
  state_ = other.state_;
  max_hops_ = other.max_hops_;
}

TopologyGraph& TopologyGraph::operator=(const TopologyGraph& other) {
  if (this == &other) return *this;
  State copy;
  std::size_t hops = 0;
  {
    std::shared_lock lock(other.mu_);
    copy = other.state_;
    hops = other.max_hops_;
  }
  std::unique_lock lock(mu_);
  state_ = std::move(copy);
  max_hops_ = hops;
  return *this;
}

TopologyGraph TopologyGraph::from_json(const json& doc) { return TopologyGraph(parse_topology(doc)); }

TopologyGraph TopologyGraph::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::SchemaViolation, "cannot open topology file " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw Error(Errc::SchemaViolation, fmt::format("{}: {}", path, e.what()));
  }
  return from_json(doc);
}

TopologyDocument TopologyGraph::document() const {
  std::shared_lock lock(mu_);
  TopologyDocument doc;
  for (const auto& [_, n] : state_.nodes) doc.nodes.push_back(n);
  for (const auto& [_, c] : state_.conduits) doc.conduits.push_back(c);
  for (const auto& [_, l] : state_.links) doc.links.push_back(l);
  return doc;
}

void TopologyGraph::validate_and_index(State& s) {
  s.adjacency.clear();
  for (const auto& [id, n] : s.nodes) {
    if (n.site.empty()) throw Error(Errc::SchemaViolation, "node " + id.str() + " has no site");
    s.adjacency[id];
  }
  for (const auto& [id, c] : s.conduits) {
    if (!s.nodes.count(c.a) || !s.nodes.count(c.b))
      throw Error(Errc::DanglingReference, "conduit " + id.str() + " references an unknown node");
    if (c.a == c.b) throw Error(Errc::SchemaViolation, "conduit " + id.str() + " endpoints must be distinct");
    if (c.links.empty()) throw Error(Errc::SchemaViolation, "conduit " + id.str() + " has no links");
    std::set<LinkId> seen;
    for (const auto& l : c.links) {
      auto it = s.links.find(l);
      if (it == s.links.end())
        throw Error(Errc::DanglingReference, "conduit " + id.str() + " lists unknown link " + l.str());
      if (it->second.conduit != id)
        throw Error(Errc::DanglingReference, "link " + l.str() + " does not belong to conduit " + id.str());
      if (!seen.insert(l).second)
        throw Error(Errc::DuplicateId, "conduit " + id.str() + " lists link " + l.str() + " twice");
    }
    s.adjacency[c.a].push_back(id);
    s.adjacency[c.b].push_back(id);
  }
  for (const auto& [id, l] : s.links) {
    auto it = s.conduits.find(l.conduit);
    if (it == s.conduits.end())
      throw Error(Errc::DanglingReference, "link " + id.str() + " references unknown conduit " + l.conduit.str());
    if (std::find(it->second.links.begin(), it->second.links.end(), id) == it->second.links.end())
      throw Error(Errc::DanglingReference, "link " + id.str() + " is not listed by conduit " + l.conduit.str());
    if (l.available_bandwidth > l.max_bandwidth)
      throw Error(Errc::SchemaViolation, "link " + id.str() + " available bandwidth exceeds maximum");
    if (l.external_wavelengths.size() > l.wavelength_capacity ||
        (!l.external_wavelengths.empty() && *l.external_wavelengths.rbegin() >= l.wavelength_capacity))
      throw Error(Errc::SchemaViolation, "link " + id.str() + " declares wavelengths beyond its capacity");
  }
  for (auto& [_, adj] : s.adjacency) std::sort(adj.begin(), adj.end());
  s.annotations.clear();
  for (const auto& [id, c] : s.conduits) s.annotations[id] = aggregate(s, c);
}

std::vector<LinkId> TopologyGraph::merge(const TopologyDocument& fragment, const SellerId& seller) {
  std::unique_lock lock(mu_);
  State s = state_;
  std::vector<LinkId> touched;
  for (const auto& n : fragment.nodes) {
    auto it = s.nodes.find(n.id);
    if (it == s.nodes.end()) {
      s.nodes.emplace(n.id, n);
    } else if (it->second.site != n.site) {
      throw Error(Errc::ConflictingLink, "node " + n.id.str() + " already registered at another site");
    }
  }
  for (const auto& c : fragment.conduits) {
    auto it = s.conduits.find(c.id);
    if (it == s.conduits.end()) {
      s.conduits.emplace(c.id, c);
      continue;
    }
    if (!(it->second.a == c.a && it->second.b == c.b))
      throw Error(Errc::ConflictingLink, "conduit " + c.id.str() + " redeclared with other endpoints");
    for (const auto& l : c.links) {
      auto& members = it->second.links;
      if (std::find(members.begin(), members.end(), l) == members.end()) members.push_back(l);
    }
  }
  for (const auto& l : fragment.links) {
    if (l.seller != seller)
      throw Error(Errc::ConflictingLink, "link " + l.id.str() + " is declared for seller " + l.seller.str());
    auto it = s.links.find(l.id);
    if (it == s.links.end()) {
      s.links.emplace(l.id, l);
      auto cit = s.conduits.find(l.conduit);
      if (cit != s.conduits.end()) {
        auto& members = cit->second.links;
        if (std::find(members.begin(), members.end(), l.id) == members.end()) members.push_back(l.id);
      }
    } else {
      auto& cur = it->second;
      if (cur.seller != seller)
        throw Error(Errc::ConflictingLink, "link " + l.id.str() + " belongs to seller " + cur.seller.str());
      if (cur.conduit != l.conduit)
        throw Error(Errc::ConflictingLink, "link " + l.id.str() + " moved to another conduit");
      Bps held = (cur.max_bandwidth - cur.external_bandwidth) - cur.available_bandwidth;
      Bps offered = l.max_bandwidth - l.external_bandwidth;
      if (offered < held)
        throw Error(Errc::ConflictingLink, "link " + l.id.str() + " update would strand live circuits");
      cur.max_bandwidth = l.max_bandwidth;
      cur.external_bandwidth = l.external_bandwidth;
      cur.available_bandwidth = offered - held;
      cur.wavelength_capacity = std::max<std::uint32_t>(cur.wavelength_capacity, l.wavelength_capacity);
    }
    touched.push_back(l.id);
  }
  validate_and_index(s);
  state_ = std::move(s);
  return touched;
}

// ---------------------------------------------------------------------------
// Accessors

bool TopologyGraph::has_node(const NodeId& id) const {
  std::shared_lock lock(mu_);
  return state_.nodes.count(id) != 0;
}

bool TopologyGraph::has_link(const LinkId& id) const {
  std::shared_lock lock(mu_);
  return state_.links.count(id) != 0;
}

Node TopologyGraph::node(const NodeId& id) const {
  std::shared_lock lock(mu_);
  auto it = state_.nodes.find(id);
  if (it == state_.nodes.end()) throw Error(Errc::UnknownNode, id.str());
  return it->second;
}

FiberLink TopologyGraph::link(const LinkId& id) const {
  std::shared_lock lock(mu_);
  auto it = state_.links.find(id);
  if (it == state_.links.end()) throw Error(Errc::UnknownLink, id.str());
  return it->second;
}

Conduit TopologyGraph::conduit(const ConduitId& id) const {
  std::shared_lock lock(mu_);
  auto it = state_.conduits.find(id);
  if (it == state_.conduits.end()) throw Error(Errc::DanglingReference, "conduit " + id.str());
  return it->second;
}

std::vector<NodeId> TopologyGraph::node_ids() const {
  std::shared_lock lock(mu_);
  std::vector<NodeId> out;
  for (const auto& [id, _] : state_.nodes) out.push_back(id);
  return out;
}

std::vector<LinkId> TopologyGraph::link_ids() const {
  std::shared_lock lock(mu_);
  std::vector<LinkId> out;
  for (const auto& [id, _] : state_.links) out.push_back(id);
  return out;
}

std::vector<ConduitId> TopologyGraph::conduit_ids() const {
  std::shared_lock lock(mu_);
  std::vector<ConduitId> out;
  for (const auto& [id, _] : state_.conduits) out.push_back(id);
  return out;
}

SiteId TopologyGraph::owner_site(const LinkId& link) const {
  std::shared_lock lock(mu_);
  auto it = state_.links.find(link);
  if (it == state_.links.end()) throw Error(Errc::UnknownLink, link.str());
  const auto& c = state_.conduits.at(it->second.conduit);
  return state_.nodes.at(c.a).site;
}

EdgeAnnotation TopologyGraph::annotation(const ConduitId& id) const {
  std::shared_lock lock(mu_);
  auto it = state_.annotations.find(id);
  if (it == state_.annotations.end()) throw Error(Errc::DanglingReference, "conduit " + id.str());
  return it->second;
}

EdgeAnnotation TopologyGraph::aggregate(const State& s, const Conduit& c) {
  EdgeAnnotation a;
  for (const auto& lid : c.links) {
    const auto& l = s.links.at(lid);
    a.max_bandwidth += l.max_bandwidth;
    a.available_bandwidth += l.available_bandwidth;
    a.total_strands += 1;
    if (l.status == LinkStatus::Up && l.has_free_wavelength() && l.available_bandwidth > 0)
      a.available_strands += 1;
  }
  return a;
}

void TopologyGraph::reannotate(State& s, const ConduitId& conduit) {
  s.annotations[conduit] = aggregate(s, s.conduits.at(conduit));
}

// ---------------------------------------------------------------------------
// Path search

void TopologyGraph::check_endpoints_locked(const NodeId& src, const NodeId& dst) const {
  if (!state_.nodes.count(src)) throw Error(Errc::UnknownNode, src.str());
  if (!state_.nodes.count(dst)) throw Error(Errc::UnknownNode, dst.str());
  if (src == dst) throw Error(Errc::InvalidRequest, "endpoints must be distinct");
}

std::vector<Path> TopologyGraph::candidates_locked(const NodeId& src, const NodeId& dst,
                                                   std::uint32_t strands, Bps capacity,
                                                   bool ignore_capacity) const {
  struct Ranked {
    Path path;
    Bps min_free;
    std::vector<ConduitId> key;
  };
  std::vector<Ranked> found;

  auto eligible = [&](const Conduit& c) {
    std::vector<LinkId> out;
    for (const auto& lid : c.links) {  // sorted below
      const auto& l = state_.links.at(lid);
      bool ok = ignore_capacity ? (l.status == LinkStatus::Up && l.has_free_wavelength())
                                : l.usable_for(capacity);
      if (ok) out.push_back(lid);
    }
    std::sort(out.begin(), out.end());
    return out;
  };

  std::vector<NodeId> nodes{src};
  std::vector<ConduitId> hops;
  std::set<NodeId> visited{src};

  std::function<void(const NodeId&)> dfs = [&](const NodeId& at) {
    if (at == dst) {
      Ranked r;
      r.path.src = src;
      r.path.dst = dst;
      r.path.lanes.resize(strands);
      for (auto& lane : r.path.lanes) lane.nodes = nodes;
      r.min_free = -1;
      for (const auto& cid : hops) {
        auto links = eligible(state_.conduits.at(cid));
        if (links.size() < strands) return;
        for (std::uint32_t s = 0; s < strands; ++s) {
          r.path.lanes[s].hops.push_back({cid, links[s]});
          Bps free = state_.links.at(links[s]).available_bandwidth;
          if (r.min_free < 0 || free < r.min_free) r.min_free = free;
        }
      }
      r.key = hops;
      found.push_back(std::move(r));
      return;
    }
    if (hops.size() >= max_hops_) return;
    for (const auto& cid : state_.adjacency.at(at)) {
      const auto& c = state_.conduits.at(cid);
      NodeId next = c.other_end(at);
      if (visited.count(next)) continue;
      visited.insert(next);
      nodes.push_back(next);
      hops.push_back(cid);
      dfs(next);
      hops.pop_back();
      nodes.pop_back();
      visited.erase(next);
    }
  };
  dfs(src);

  std::sort(found.begin(), found.end(), [](const Ranked& x, const Ranked& y) {
    if (x.key.size() != y.key.size()) return x.key.size() < y.key.size();
    if (x.min_free != y.min_free) return x.min_free > y.min_free;
    return x.key < y.key;
  });
  std::vector<Path> out;
  out.reserve(found.size());
  for (auto& r : found) out.push_back(std::move(r.path));
  return out;
}

bool TopologyGraph::route_exists_locked(const NodeId& src, const NodeId& dst) const {
  std::set<NodeId> seen{src};
  std::vector<NodeId> frontier{src};
  while (!frontier.empty()) {
    NodeId at = frontier.back();
    frontier.pop_back();
    if (at == dst) return true;
    for (const auto& cid : state_.adjacency.at(at)) {
      NodeId next = state_.conduits.at(cid).other_end(at);
      if (seen.insert(next).second) frontier.push_back(next);
    }
  }
  return false;
}

std::vector<Path> TopologyGraph::find_candidate_paths(const NodeId& src, const NodeId& dst,
                                                      std::uint32_t strands, Bps capacity) const {
  std::shared_lock lock(mu_);
  check_endpoints_locked(src, dst);
  if (strands == 0 || capacity <= 0)
    throw Error(Errc::InvalidRequest, "strands and capacity must be positive");
  return candidates_locked(src, dst, strands, capacity, false);
}

AdmissibilityResult TopologyGraph::check_admissibility(const Demand& demand) const {
  std::shared_lock lock(mu_);
  check_endpoints_locked(demand.src, demand.dst);
  if (demand.strands == 0 || demand.capacity <= 0)
    throw Error(Errc::InvalidRequest, "strands and capacity must be positive");
  AdmissibilityResult r;
  r.candidates = candidates_locked(demand.src, demand.dst, demand.strands, demand.capacity, false);
  r.admissible = !r.candidates.empty();
  if (!r.admissible) {
    if (!route_exists_locked(demand.src, demand.dst))
      r.reason = RejectReason::NoRoute;
    else if (!candidates_locked(demand.src, demand.dst, demand.strands, demand.capacity, true).empty())
      r.reason = RejectReason::InsufficientCapacity;
    else
      r.reason = RejectReason::InsufficientStrands;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Allocation

Circuit TopologyGraph::place_circuit_locked(FiberLink& link, Bps bandwidth, LeaseId lease,
                                            std::size_t lane, std::size_t hop) {
  std::uint32_t wl = 0;
  while (link.wavelengths_in_use.count(wl)) ++wl;
  link.wavelengths_in_use.insert(wl);
  link.available_bandwidth -= bandwidth;
  return Circuit{CircuitId{state_.next_circuit++}, link.id, wl, bandwidth, lease, lane, hop};
}

void TopologyGraph::remove_circuit_locked(const Circuit& c) {
  auto& link = state_.links.at(c.link);
  link.wavelengths_in_use.erase(c.wavelength);
  link.available_bandwidth += c.bandwidth;
}

namespace {

// Validates one lane's shape: hop count matches node count and every hop's
// conduit joins the consecutive nodes.
template <class State>
void check_lane_shape(const State& s, const Lane& lane, const NodeId& src, const NodeId& dst) {
  if (lane.hops.empty() || lane.nodes.size() != lane.hops.size() + 1 || lane.nodes.front() != src ||
      lane.nodes.back() != dst)
    throw Error(Errc::InvalidRequest, "lane does not join the path endpoints");
  for (std::size_t i = 0; i < lane.hops.size(); ++i) {
    auto cit = s.conduits.find(lane.hops[i].conduit);
    if (cit == s.conduits.end())
      throw Error(Errc::InvalidRequest, "unknown conduit " + lane.hops[i].conduit.str());
    const auto& c = cit->second;
    bool joins = (c.a == lane.nodes[i] && c.b == lane.nodes[i + 1]) ||
                 (c.b == lane.nodes[i] && c.a == lane.nodes[i + 1]);
    if (!joins) throw Error(Errc::InvalidRequest, "conduit " + c.id.str() + " does not chain the lane");
    auto lit = s.links.find(lane.hops[i].link);
    if (lit == s.links.end()) throw Error(Errc::UnknownLink, lane.hops[i].link.str());
    if (lit->second.conduit != c.id)
      throw Error(Errc::InvalidRequest, "link " + lit->first.str() + " is not in conduit " + c.id.str());
  }
}

}  // namespace

CircuitAllocation TopologyGraph::allocate(const Path& path, std::uint32_t strands, Bps capacity,
                                          LeaseId lease) {
  std::unique_lock lock(mu_);
  if (strands == 0 || capacity <= 0 || path.lanes.size() != strands)
    throw Error(Errc::InvalidRequest, "path must carry exactly `strands` lanes with positive capacity");
  check_endpoints_locked(path.src, path.dst);

  // Validate everything before touching any counter.
  std::map<LinkId, std::pair<Bps, std::uint32_t>> demand;  // bandwidth, wavelengths
  for (const auto& lane : path.lanes) {
    check_lane_shape(state_, lane, path.src, path.dst);
    for (const auto& h : lane.hops) {
      auto& d = demand[h.link];
      d.first += capacity;
      d.second += 1;
    }
  }
  for (const auto& [lid, need] : demand) {
    const auto& l = state_.links.at(lid);
    if (l.status != LinkStatus::Up || l.available_bandwidth < need.first)
      throw Error(Errc::ConcurrentDepletion, "link " + lid.str() + " no longer has the requested resources");
    if (l.wavelengths_in_use.size() + need.second > l.wavelength_capacity)
      throw Error(Errc::WavelengthExhausted, "link " + lid.str());
  }

  CircuitAllocation alloc;
  alloc.id = AllocationId{state_.next_allocation++};
  alloc.lease = lease;
  alloc.path = path;
  alloc.capacity = capacity;
  std::set<ConduitId> touched;
  for (std::size_t li = 0; li < path.lanes.size(); ++li) {
    for (std::size_t hi = 0; hi < path.lanes[li].hops.size(); ++hi) {
      const auto& h = path.lanes[li].hops[hi];
      alloc.circuits.push_back(place_circuit_locked(state_.links.at(h.link), capacity, lease, li, hi));
      touched.insert(h.conduit);
    }
  }
  for (const auto& c : touched) reannotate(state_, c);
  state_.live.emplace(alloc.id, alloc);
  return alloc;
}

void TopologyGraph::release(AllocationId id) {
  std::unique_lock lock(mu_);
  auto it = state_.live.find(id);
  if (it == state_.live.end()) {
    if (state_.released.count(id)) throw Error(Errc::DoubleRelease, fmt::format("allocation {}", id.value));
    throw Error(Errc::UnknownAllocation, fmt::format("allocation {}", id.value));
  }
  std::set<ConduitId> touched;
  for (const auto& c : it->second.circuits) {
    remove_circuit_locked(c);
    touched.insert(state_.links.at(c.link).conduit);
  }
  for (const auto& c : touched) reannotate(state_, c);
  state_.live.erase(it);
  state_.released.insert(id);
}

bool TopologyGraph::is_live(AllocationId id) const {
  std::shared_lock lock(mu_);
  return state_.live.count(id) != 0;
}

CircuitAllocation TopologyGraph::allocation(AllocationId id) const {
  std::shared_lock lock(mu_);
  auto it = state_.live.find(id);
  if (it == state_.live.end()) throw Error(Errc::UnknownAllocation, fmt::format("allocation {}", id.value));
  return it->second;
}

std::vector<AllocationId> TopologyGraph::live_allocations() const {
  std::shared_lock lock(mu_);
  std::vector<AllocationId> out;
  for (const auto& [id, _] : state_.live) out.push_back(id);
  return out;
}

std::vector<AllocationId> TopologyGraph::allocations_on_link(const LinkId& link) const {
  std::shared_lock lock(mu_);
  std::vector<AllocationId> out;
  for (const auto& [id, a] : state_.live) {
    for (const auto& c : a.circuits) {
      if (c.link == link) {
        out.push_back(id);
        break;
      }
    }
  }
  return out;
}

std::optional<LinkId> TopologyGraph::find_spare(const ConduitId& conduit, Bps capacity,
                                                const std::set<LinkId>& exclude) const {
  std::shared_lock lock(mu_);
  auto cit = state_.conduits.find(conduit);
  if (cit == state_.conduits.end()) throw Error(Errc::DanglingReference, "conduit " + conduit.str());
  std::vector<LinkId> links = cit->second.links;
  std::sort(links.begin(), links.end());
  for (const auto& lid : links) {
    if (exclude.count(lid)) continue;
    if (state_.links.at(lid).usable_for(capacity)) return lid;
  }
  return std::nullopt;
}

CircuitAllocation TopologyGraph::replace_hop(AllocationId id, std::size_t lane, std::size_t hop,
                                             const LinkId& replacement) {
  std::unique_lock lock(mu_);
  auto it = state_.live.find(id);
  if (it == state_.live.end()) throw Error(Errc::UnknownAllocation, fmt::format("allocation {}", id.value));
  auto& alloc = it->second;
  if (lane >= alloc.path.lanes.size() || hop >= alloc.path.lanes[lane].hops.size())
    throw Error(Errc::InvalidRequest, "no such lane/hop");
  auto& h = alloc.path.lanes[lane].hops[hop];
  auto lit = state_.links.find(replacement);
  if (lit == state_.links.end()) throw Error(Errc::UnknownLink, replacement.str());
  if (lit->second.conduit != h.conduit)
    throw Error(Errc::InvalidRequest, "replacement must lie in conduit " + h.conduit.str());
  if (replacement == h.link) throw Error(Errc::InvalidRequest, "replacement equals the current link");
  if (lit->second.status != LinkStatus::Up || lit->second.available_bandwidth < alloc.capacity)
    throw Error(Errc::ConcurrentDepletion, "link " + replacement.str());
  if (!lit->second.has_free_wavelength()) throw Error(Errc::WavelengthExhausted, replacement.str());

  auto cit = std::find_if(alloc.circuits.begin(), alloc.circuits.end(),
                          [&](const Circuit& c) { return c.lane == lane && c.hop == hop; });
  remove_circuit_locked(*cit);
  *cit = place_circuit_locked(lit->second, alloc.capacity, alloc.lease, lane, hop);
  h.link = replacement;
  reannotate(state_, h.conduit);
  return alloc;
}

CircuitAllocation TopologyGraph::replace_lane(AllocationId id, std::size_t lane, const Lane& replacement) {
  std::unique_lock lock(mu_);
  auto it = state_.live.find(id);
  if (it == state_.live.end()) throw Error(Errc::UnknownAllocation, fmt::format("allocation {}", id.value));
  auto& alloc = it->second;
  if (lane >= alloc.path.lanes.size()) throw Error(Errc::InvalidRequest, "no such lane");
  check_lane_shape(state_, replacement, alloc.path.src, alloc.path.dst);

  // Resources released by the old lane are not counted: a failed lane's
  // strands are not reused for its own replacement.
  std::map<LinkId, std::uint32_t> uses;
  for (const auto& h : replacement.hops) uses[h.link] += 1;
  for (const auto& [lid, n] : uses) {
    const auto& l = state_.links.at(lid);
    if (l.status != LinkStatus::Up || l.available_bandwidth < alloc.capacity * n)
      throw Error(Errc::ConcurrentDepletion, "link " + lid.str());
    if (l.wavelengths_in_use.size() + n > l.wavelength_capacity) throw Error(Errc::WavelengthExhausted, lid.str());
  }

  std::set<ConduitId> touched;
  std::vector<Circuit> kept;
  for (const auto& c : alloc.circuits) {
    if (c.lane == lane) {
      remove_circuit_locked(c);
      touched.insert(state_.links.at(c.link).conduit);
    } else {
      kept.push_back(c);
    }
  }
  for (std::size_t hi = 0; hi < replacement.hops.size(); ++hi) {
    const auto& h = replacement.hops[hi];
    kept.push_back(place_circuit_locked(state_.links.at(h.link), alloc.capacity, alloc.lease, lane, hi));
    touched.insert(h.conduit);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const Circuit& x, const Circuit& y) {
    return std::tie(x.lane, x.hop) < std::tie(y.lane, y.hop);
  });
  alloc.circuits = std::move(kept);
  alloc.path.lanes[lane] = replacement;
  for (const auto& c : touched) reannotate(state_, c);
  return alloc;
}

void TopologyGraph::set_link_status(const LinkId& link, LinkStatus status) {
  std::unique_lock lock(mu_);
  auto it = state_.links.find(link);
  if (it == state_.links.end()) throw Error(Errc::UnknownLink, link.str());
  it->second.status = status;
  reannotate(state_, it->second.conduit);
}

void TopologyGraph::update_link_bandwidth(const LinkId& link, Bps max_bandwidth, Bps available_bandwidth) {
  std::unique_lock lock(mu_);
  auto it = state_.links.find(link);
  if (it == state_.links.end()) throw Error(Errc::UnknownLink, link.str());
  auto& l = it->second;
  if (available_bandwidth < 0 || available_bandwidth > max_bandwidth)
    throw Error(Errc::InvalidRequest, "available bandwidth must lie in [0, max]");
  Bps held = (l.max_bandwidth - l.external_bandwidth) - l.available_bandwidth;
  if (available_bandwidth < held)
    throw Error(Errc::ConflictingLink, "update would strand live circuits on " + link.str());
  l.max_bandwidth = max_bandwidth;
  l.external_bandwidth = max_bandwidth - available_bandwidth;
  l.available_bandwidth = available_bandwidth - held;
  reannotate(state_, l.conduit);
}

// ---------------------------------------------------------------------------
// Invariants

CounterSnapshot TopologyGraph::snapshot() const {
  std::shared_lock lock(mu_);
  CounterSnapshot s;
  for (const auto& [id, l] : state_.links) s.links[id] = {l.available_bandwidth, l.wavelengths_in_use};
  s.annotations = state_.annotations;
  return s;
}

std::size_t TopologyGraph::live_circuit_count() const {
  std::shared_lock lock(mu_);
  std::size_t n = 0;
  for (const auto& [_, a] : state_.live) n += a.circuits.size();
  return n;
}

void TopologyGraph::verify() const {
  std::shared_lock lock(mu_);
  std::map<LinkId, Bps> held;
  std::map<LinkId, std::set<std::uint32_t>> wl;
  for (const auto& [id, a] : state_.live) {
    for (const auto& c : a.circuits) {
      if (c.bandwidth <= 0) throw Error(Errc::InvalidArgument, "circuit with non-positive bandwidth");
      held[c.link] += c.bandwidth;
      if (!wl[c.link].insert(c.wavelength).second)
        throw Error(Errc::InvalidArgument,
                    fmt::format("wavelength collision on {} at index {}", c.link.str(), c.wavelength));
    }
  }
  for (const auto& [id, l] : state_.links) {
    Bps expect = l.max_bandwidth - l.external_bandwidth - held[id];
    if (l.available_bandwidth != expect)
      throw Error(Errc::InvalidArgument,
                  fmt::format("link {} available {} != recomputed {}", id.str(), l.available_bandwidth, expect));
    if (l.available_bandwidth < 0 || l.available_bandwidth > l.max_bandwidth)
      throw Error(Errc::InvalidArgument, "link " + id.str() + " available bandwidth out of range");
    std::set<std::uint32_t> expect_wl = l.external_wavelengths;
    for (auto w : wl[id]) {
      if (!expect_wl.insert(w).second)
        throw Error(Errc::InvalidArgument, "circuit reuses an externally held wavelength on " + id.str());
    }
    if (expect_wl != l.wavelengths_in_use)
      throw Error(Errc::InvalidArgument, "link " + id.str() + " wavelength set drifted");
    if (l.wavelengths_in_use.size() > l.wavelength_capacity)
      throw Error(Errc::InvalidArgument, "link " + id.str() + " exceeds wavelength capacity");
  }
  for (const auto& [id, c] : state_.conduits) {
    if (!(state_.annotations.at(id) == aggregate(state_, c)))
      throw Error(Errc::InvalidArgument, "annotation drift on conduit " + id.str());
  }
}

}  // namespace gf::topology
