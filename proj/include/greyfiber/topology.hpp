#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "greyfiber/types.hpp"

namespace gf::topology {

enum class LinkStatus { Up, Down };
enum class Composition { Sequential, Parallel };

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
};

struct Node {
  NodeId id;
  SiteId site;
  GeoPoint geo;
};

struct Conduit {
  ConduitId id;
  NodeId a;  // endpoints are an ordered pair; `a` names the owning site
  NodeId b;
  std::vector<LinkId> links;

  NodeId other_end(const NodeId& n) const { return n == a ? b : a; }
  bool touches(const NodeId& n) const { return n == a || n == b; }
};

// A single fiber strand. Wavelength indices occupied outside the exchange
// (declared in the topology document) are kept apart from those held by
// circuits so the accounting invariants can be recomputed exactly.
struct FiberLink {
  LinkId id;
  ConduitId conduit;
  SellerId seller;
  Bps max_bandwidth = 0;
  Bps available_bandwidth = 0;
  std::uint32_t wavelength_capacity = 0;
  std::set<std::uint32_t> wavelengths_in_use;
  LinkStatus status = LinkStatus::Up;

  std::set<std::uint32_t> external_wavelengths;
  Bps external_bandwidth = 0;

  bool has_free_wavelength() const { return wavelengths_in_use.size() < wavelength_capacity; }
  bool usable_for(Bps capacity) const {
    return status == LinkStatus::Up && has_free_wavelength() && available_bandwidth >= capacity;
  }
};

struct Circuit {
  CircuitId id;
  LinkId link;
  std::uint32_t wavelength = 0;
  Bps bandwidth = 0;
  LeaseId lease;
  std::size_t lane = 0;
  std::size_t hop = 0;
};

struct Hop {
  ConduitId conduit;
  LinkId link;
  friend bool operator==(const Hop&, const Hop&) = default;
};

// One strand's worth of end-to-end connectivity: nodes[i] -> nodes[i+1] over hops[i].
struct Lane {
  std::vector<NodeId> nodes;
  std::vector<Hop> hops;
  friend bool operator==(const Lane&, const Lane&) = default;
};

struct Path {
  NodeId src;
  NodeId dst;
  std::vector<Lane> lanes;

  Composition composition() const;
  std::vector<LinkId> segments() const;
  std::vector<ConduitId> conduits() const;
  std::size_t hop_count() const { return lanes.empty() ? 0 : lanes.front().hops.size(); }
  std::size_t strands() const { return lanes.size(); }
  friend bool operator==(const Path&, const Path&) = default;
};

struct CircuitAllocation {
  AllocationId id;
  LeaseId lease;
  Path path;
  Bps capacity = 0;
  std::vector<Circuit> circuits;  // lane-major, hop-minor
};

struct EdgeAnnotation {
  Bps max_bandwidth = 0;
  Bps available_bandwidth = 0;
  std::size_t total_strands = 0;
  std::size_t available_strands = 0;
  friend bool operator==(const EdgeAnnotation&, const EdgeAnnotation&) = default;
};

struct Demand {
  NodeId src;
  NodeId dst;
  std::uint32_t strands = 0;
  Bps capacity = 0;
};

enum class RejectReason { InsufficientStrands, InsufficientCapacity, NoRoute };
std::string_view reject_reason_name(RejectReason r);

struct AdmissibilityResult {
  bool admissible = false;
  std::vector<Path> candidates;
  std::optional<RejectReason> reason;
};

// Accounting state only; link status is deliberately excluded.
struct CounterSnapshot {
  std::map<LinkId, std::pair<Bps, std::set<std::uint32_t>>> links;
  std::map<ConduitId, EdgeAnnotation> annotations;
  friend bool operator==(const CounterSnapshot&, const CounterSnapshot&) = default;
};

struct TopologyDocument {
  std::vector<Node> nodes;
  std::vector<Conduit> conduits;
  std::vector<FiberLink> links;
};

TopologyDocument parse_topology(const nlohmann::json& doc);
nlohmann::json to_json(const TopologyDocument& doc);

// The physical graph G: nodes, conduits, strands and their circuits, with
// per-conduit edge annotations kept consistent with member links.
//
// Mutations are linearizable (single writer); reads may run concurrently.
class TopologyGraph {
 public:
  TopologyGraph() = default;
  explicit TopologyGraph(const TopologyDocument& doc);
  TopologyGraph(const TopologyGraph& other);
  TopologyGraph& operator=(const TopologyGraph& other);

  static TopologyGraph from_json(const nlohmann::json& doc);
  static TopologyGraph load_file(const std::string& path);
  TopologyDocument document() const;

  // Adds the fragment's nodes, conduits and links atomically. Nodes and
  // conduits already present must match; links already present must belong
  // to `seller` and have their bandwidth figures updated. Returns the ids of
  // links that were new or updated.
  std::vector<LinkId> merge(const TopologyDocument& fragment, const SellerId& seller);

  bool has_node(const NodeId& id) const;
  bool has_link(const LinkId& id) const;
  Node node(const NodeId& id) const;
  FiberLink link(const LinkId& id) const;
  Conduit conduit(const ConduitId& id) const;
  std::vector<NodeId> node_ids() const;
  std::vector<LinkId> link_ids() const;
  std::vector<ConduitId> conduit_ids() const;
  SiteId owner_site(const LinkId& link) const;

  EdgeAnnotation annotation(const ConduitId& id) const;

  AdmissibilityResult check_admissibility(const Demand& demand) const;
  std::vector<Path> find_candidate_paths(const NodeId& src, const NodeId& dst,
                                         std::uint32_t strands, Bps capacity) const;

  CircuitAllocation allocate(const Path& path, std::uint32_t strands, Bps capacity, LeaseId lease);
  void release(AllocationId id);
  void release(const CircuitAllocation& allocation) { release(allocation.id); }

  bool is_live(AllocationId id) const;
  CircuitAllocation allocation(AllocationId id) const;
  std::vector<AllocationId> live_allocations() const;
  std::vector<AllocationId> allocations_on_link(const LinkId& link) const;

  // Lowest-id usable strand in `conduit` not listed in `exclude`.
  std::optional<LinkId> find_spare(const ConduitId& conduit, Bps capacity,
                                   const std::set<LinkId>& exclude) const;
  // Moves one circuit of a live allocation onto another strand of the same conduit.
  CircuitAllocation replace_hop(AllocationId id, std::size_t lane, std::size_t hop,
                                const LinkId& replacement);
  // Re-routes a whole lane of a live allocation.
  CircuitAllocation replace_lane(AllocationId id, std::size_t lane, const Lane& replacement);

  void set_link_status(const LinkId& link, LinkStatus status);
  // Seller-side update of a link's bandwidth figures; live circuits are preserved.
  void update_link_bandwidth(const LinkId& link, Bps max_bandwidth, Bps available_bandwidth);

  CounterSnapshot snapshot() const;
  std::size_t live_circuit_count() const;
  // Recomputes every derived counter from scratch; throws on any mismatch.
  void verify() const;

  void set_max_hops(std::size_t hops) { max_hops_ = hops; }

 private:
  struct State {
    std::map<NodeId, Node> nodes;
    std::map<ConduitId, Conduit> conduits;
    std::map<LinkId, FiberLink> links;
    std::map<ConduitId, EdgeAnnotation> annotations;
    std::map<AllocationId, CircuitAllocation> live;
    std::set<AllocationId> released;
    std::map<NodeId, std::vector<ConduitId>> adjacency;
    std::uint64_t next_allocation = 1;
    std::uint64_t next_circuit = 1;
  };

  static void validate_and_index(State& s);
  static void reannotate(State& s, const ConduitId& conduit);
  static EdgeAnnotation aggregate(const State& s, const Conduit& c);
  std::vector<Path> candidates_locked(const NodeId& src, const NodeId& dst, std::uint32_t strands,
                                      Bps capacity, bool ignore_capacity) const;
  bool route_exists_locked(const NodeId& src, const NodeId& dst) const;
  void check_endpoints_locked(const NodeId& src, const NodeId& dst) const;
  Circuit place_circuit_locked(FiberLink& link, Bps bandwidth, LeaseId lease, std::size_t lane,
                               std::size_t hop);
  void remove_circuit_locked(const Circuit& c);

  State state_;
  std::size_t max_hops_ = 8;
  mutable std::shared_mutex mu_;
};

}  // namespace gf::topology
