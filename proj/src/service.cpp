#include "greyfiber/service.hpp"

#include <csignal>
#include <fstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "greyfiber/error.hpp"

namespace gf::service {

using nlohmann::json;
using proto::Message;
using proto::MsgType;

// ---------------------------------------------------------------------------
// Loop

RealtimeLoop::RealtimeLoop() : epoch_(std::chrono::steady_clock::now()), sched_(Millis{0}) {}

Millis RealtimeLoop::wall_now() const {
  return std::chrono::duration_cast<Millis>(std::chrono::steady_clock::now() - epoch_);
}

void RealtimeLoop::post(std::function<void()> fn) {
  {
    std::lock_guard lock(mu_);
    inbox_.push_back(std::move(fn));
  }
  cv_.notify_one();
}

void RealtimeLoop::run() {
  for (;;) {
    std::deque<std::function<void()>> work;
    {
      std::unique_lock lock(mu_);
      if (stopping_) return;
      work.swap(inbox_);
    }
    sched_.run_until(wall_now());
    for (auto& fn : work) {
      fn();
      sched_.run_until(wall_now());
    }
    std::unique_lock lock(mu_);
    if (stopping_) return;
    if (!inbox_.empty()) continue;
    auto wake = std::chrono::milliseconds(50);
    if (auto next = sched_.next_time()) wake = std::min(wake, std::max(Millis{0}, *next - wall_now()));
    cv_.wait_for(lock, wake, [&] { return stopping_ || !inbox_.empty(); });
  }
}

void RealtimeLoop::stop() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
}

// ---------------------------------------------------------------------------
// Peers and servers

std::uint64_t Peer::send(MsgType type, json body, std::optional<std::uint64_t> ack_of) {
  std::lock_guard lock(send_mu_);
  Message m{type, next_id_++, clock_ ? to_seconds(clock_->wall_now()) : 0.0, ack_of, std::move(body)};
  conn_.send(m);
  return m.msg_id;
}

Server::Server(std::uint16_t port) : listener_(port) {}

Server::~Server() { stop(); }

void Server::start() {
  running_ = true;
  loop_thread_ = std::thread([this] { loop_.run(); });
  accept_thread_ = std::thread([this] { accept_loop(); });
}

void Server::stop() {
  if (!running_.exchange(false)) return;
  listener_.close();
  if (accept_thread_.joinable()) accept_thread_.join();
  {
    std::lock_guard lock(peers_mu_);
    for (auto& p : peers_) p->shutdown();
  }
  for (auto& t : readers_) t.join();
  readers_.clear();
  loop_.stop();
  if (loop_thread_.joinable()) loop_thread_.join();
}

void Server::accept_loop() {
  while (auto conn = listener_.accept()) {
    auto peer = std::make_shared<Peer>(std::move(*conn), &loop_);
    std::lock_guard lock(peers_mu_);
    peers_.push_back(peer);
    readers_.emplace_back([this, peer] {
      try {
        while (auto m = peer->receive()) loop_.post([this, peer, msg = std::move(*m)] { handle(peer, msg); });
      } catch (const Error&) {
        // Malformed frame or reset: the peer is dropped either way.
      }
      loop_.post([this, peer] { closed(peer); });
    });
  }
}

void Server::reply_error(const std::shared_ptr<Peer>& peer, const Message& m, const std::string& code,
                         const std::string& detail) {
  try {
    peer->send(MsgType::ERROR, {{"code", code}, {"detail", detail}}, m.msg_id);
  } catch (const Error&) {
  }
}

// ---------------------------------------------------------------------------
// Wire forms

namespace {

json ack_json(const ggc::ConfigAck& a) {
  return {{"site", a.site.str()},  {"lease", a.lease.value},         {"handle", a.handle.value},
          {"latency_s", to_seconds(a.latency)}, {"ok", a.ok}, {"error", a.error}};
}

ggc::ConfigAck ack_from_json(const json& j) {
  return {SiteId{j.at("site").get<std::string>()}, LeaseId{j.at("lease").get<std::uint64_t>()},
          HandleId{j.at("handle").get<std::uint64_t>()}, from_seconds(j.at("latency_s").get<double>()),
          j.at("ok").get<bool>(), j.value("error", std::string())};
}

json report_json(const ggc::StatusReport& r) {
  return {{"link", r.link.str()}, {"ts", to_seconds(r.ts)},       {"rtt_s", r.rtt_s},
          {"loss", r.loss},       {"utilization", r.utilization}, {"stability", r.stability}};
}

ggc::StatusReport report_from_json(const json& j) {
  return {LinkId{j.at("link").get<std::string>()}, from_seconds(j.at("ts").get<double>()), j.at("rtt_s").get<double>(),
          j.at("loss").get<double>(), j.at("utilization").get<double>(), j.at("stability").get<std::uint32_t>()};
}

json outcome_json(const ggc::LeaseOutcome& o) {
  json j{{"request_id", o.request.value},
         {"client", o.client},
         {"disposition", ggc::disposition_name(o.disposition)},
         {"reason", o.reason},
         {"payment", o.payment.micros},
         {"decided_at_s", to_seconds(o.decided_at)}};
  if (o.lease) {
    j["lease"] = {{"id", o.lease->id.value},
                  {"start_s", to_seconds(o.lease->start)},
                  {"expiry_s", to_seconds(o.lease->expiry)}};
  }
  if (o.connectivity) {
    json circuits = json::array(), wl = json::array();
    for (const auto& c : o.connectivity->circuits) circuits.push_back(c.value);
    for (const auto& [link, w] : o.connectivity->wavelengths) wl.push_back({link.str(), w});
    j["connectivity"] = {{"src", o.connectivity->path.src.str()},
                         {"dst", o.connectivity->path.dst.str()},
                         {"circuits", circuits},
                         {"wavelengths", wl}};
  }
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// GGC service

// The GGC's view of a GLSC connected over TCP.
class GgcServer::RemoteSite : public ggc::SiteAgent {
 public:
  RemoteSite(SiteId site, std::shared_ptr<Peer> peer) : site_(std::move(site)), peer_(std::move(peer)) {}

  SiteId site() const override { return site_; }
  const std::shared_ptr<Peer>& peer() const { return peer_; }

  void push_config(const ggc::SiteConfig& cfg, std::function<void(const ggc::ConfigAck&)> done) override {
    try {
      pending_[peer_->send(MsgType::CONFIG_PUSH, ggc::to_json(cfg))] = std::move(done);
    } catch (const Error& e) {
      done({site_, cfg.lease, HandleId{}, Millis{0}, false, "Transport"});
    }
  }
  void teardown(LeaseId lease) override {
    try {
      peer_->send(MsgType::TEARDOWN, {{"lease", lease.value}});
    } catch (const Error&) {
    }
  }
  void links_registered(const std::vector<LinkId>& links) override {
    json ids = json::array();
    for (const auto& l : links) ids.push_back(l.str());
    try {
      peer_->send(MsgType::REGISTER, {{"links", ids}});
    } catch (const Error&) {
    }
  }

  void acked(std::uint64_t push_id, const ggc::ConfigAck& ack) {
    auto it = pending_.find(push_id);
    if (it == pending_.end()) return;
    auto done = std::move(it->second);
    pending_.erase(it);
    done(ack);
  }
  void fail_pending() {
    auto pending = std::move(pending_);
    for (auto& [_, done] : pending) done({site_, LeaseId{}, HandleId{}, Millis{0}, false, "Transport"});
  }

 private:
  SiteId site_;
  std::shared_ptr<Peer> peer_;
  std::map<std::uint64_t, std::function<void(const ggc::ConfigAck&)>> pending_;
};

namespace {
ggc::GgcOptions service_options(const GgcServiceOptions& o, RealtimeLoop& loop) {
  ggc::GgcOptions g;
  g.mechanism = exchange::parse_mechanism(o.mechanism);
  g.backup = ggc::parse_backup_mode(o.backup);
  g.costs = ggc::ControlCosts::zero();
  g.clock = [&loop] { return loop.wall_now(); };
  return g;
}
}  // namespace

GgcServer::GgcServer(const GgcServiceOptions& options)
    : Server(options.listen_port),
      opts_(options),
      exchange_([this](const LinkId& l) { return graph_.has_link(l); }),
      ggc_(graph_, exchange_, loop_.scheduler(), log_, service_options(options, loop_)) {
  ggc_.set_outcome_sink([this](const ggc::LeaseOutcome& o) { on_outcome(o); });
  if (!opts_.topology_file.empty()) {
    auto g = topology::TopologyGraph::load_file(opts_.topology_file);
    ggc_.register_seller(SellerId{"seller1"}, g.document());
  }
}

GgcServer::~GgcServer() {
  stop();
  if (!opts_.events_file.empty()) {
    std::ofstream out(opts_.events_file, std::ios::app);
    out << log_.to_jsonl();
  }
}

void GgcServer::on_outcome(const ggc::LeaseOutcome& o) {
  std::shared_ptr<Peer> peer = submitting_;
  if (auto it = submitters_.find(o.request); it != submitters_.end()) {
    peer = it->second;
    submitters_.erase(it);
  }
  if (!peer) return;
  try {
    peer->send(MsgType::AUCTION_RESULT, outcome_json(o));
  } catch (const Error&) {
  }
}

void GgcServer::handle(const std::shared_ptr<Peer>& peer, const Message& m) {
  try {
    switch (m.type) {
      case MsgType::REGISTER: {
        SiteId site{m.body.at("site").get<std::string>()};
        if (sites_.count(site)) throw Error(Errc::DuplicateId, "site " + site.str() + " already connected");
        auto agent = std::make_unique<RemoteSite>(site, peer);
        ggc_.attach_agent(agent.get());
        auto* raw = agent.get();
        sites_[site] = std::move(agent);
        peer->send(MsgType::REGISTER, {{"site", site.str()}}, m.msg_id);
        std::vector<LinkId> owned;
        for (const auto& l : graph_.link_ids())
          if (graph_.owner_site(l) == site) owned.push_back(l);
        if (!owned.empty()) raw->links_registered(owned);
        return;
      }
      case MsgType::REGISTER_SELLER: {
        auto doc = topology::parse_topology(m.body.at("topology"));
        std::map<LinkId, Money> reserves;
        for (const auto& [l, micros] : m.body.value("reserves", json::object()).items())
          reserves[LinkId{l}] = Money{micros.get<std::int64_t>()};
        auto touched = ggc_.register_seller(SellerId{m.body.at("seller").get<std::string>()}, doc, reserves);
        json ids = json::array();
        for (const auto& l : touched) ids.push_back(l.str());
        peer->send(MsgType::REGISTER_SELLER, {{"links", ids}}, m.msg_id);
        return;
      }
      case MsgType::REGISTER_BUYER: {
        auto token = ggc_.register_buyer(m.body.at("client_name").get<std::string>());
        peer->send(MsgType::REGISTER_BUYER, {{"token", token}}, m.msg_id);
        return;
      }
      case MsgType::SUBMIT_BID: {
        auto req = ggc::parse_request(m.body.at("request"));
        submitting_ = peer;
        auto id = ggc_.submit(req);
        submitting_.reset();
        if (!ggc_.outcome(id)) submitters_[id] = peer;
        peer->send(MsgType::SUBMIT_BID, {{"request_id", id.value}}, m.msg_id);
        return;
      }
      case MsgType::CONFIG_ACK: {
        for (auto& [_, s] : sites_)
          if (s->peer() == peer && m.ack_of) s->acked(*m.ack_of, ack_from_json(m.body));
        return;
      }
      case MsgType::STATUS_REPORT: {
        std::vector<ggc::StatusReport> reports;
        for (const auto& r : m.body.at("reports")) reports.push_back(report_from_json(r));
        ggc_.status_batch(SiteId{m.body.at("site").get<std::string>()}, reports);
        return;
      }
      case MsgType::FAILURE_NOTIFY: {
        const auto& b = m.body;
        ggc_.failure_notify(SiteId{b.at("site").get<std::string>()}, LinkId{b.at("link").get<std::string>()},
                            LeaseId{b.at("lease").get<std::uint64_t>()}, b.at("lane").get<std::size_t>(),
                            b.at("hop").get<std::size_t>(), from_seconds(b.at("detected_at_s").get<double>()),
                            b.at("local_exhausted").get<bool>());
        return;
      }
      case MsgType::PROVISION_BACKUP: {
        const auto& b = m.body;
        ggc_.backup_provisioned(SiteId{b.at("site").get<std::string>()}, LeaseId{b.at("lease").get<std::uint64_t>()},
                                b.at("lane").get<std::size_t>(), LinkId{b.at("failed").get<std::string>()},
                                from_seconds(b.at("detected_at_s").get<double>()),
                                from_seconds(b.at("active_from_s").get<double>()));
        return;
      }
      default:
        reply_error(peer, m, "InvalidArgument", fmt::format("unexpected {}", proto::msg_type_name(m.type)));
    }
  } catch (const Error& e) {
    submitting_.reset();
    reply_error(peer, m, std::string(errc_name(e.code())), e.what());
  } catch (const json::exception& e) {
    submitting_.reset();
    reply_error(peer, m, "SchemaViolation", e.what());
  }
}

void GgcServer::closed(const std::shared_ptr<Peer>& peer) {
  for (auto it = sites_.begin(); it != sites_.end();) {
    if (it->second->peer() == peer) {
      ggc_.detach_agent(it->first);
      it->second->fail_pending();
      it = sites_.erase(it);
    } else {
      ++it;
    }
  }
  std::erase_if(submitters_, [&](const auto& kv) { return kv.second == peer; });
}

namespace {
std::atomic<bool> g_interrupted{false};
void on_signal(int) { g_interrupted = true; }

void wait_for_signal() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}
}  // namespace

int serve_ggc(const GgcServiceOptions& options) {
  GgcServer server(options);
  server.start();
  fmt::print("ggc listening on 127.0.0.1:{}\n", server.port());
  std::fflush(stdout);
  wait_for_signal();
  server.stop();
  return 0;
}

// ---------------------------------------------------------------------------
// GLSC service

bool ManualProbe::link_up(const LinkId& link) const {
  std::lock_guard lock(mu_);
  return !down_.count(link);
}

void ManualProbe::set_up(const LinkId& link, bool up) {
  std::lock_guard lock(mu_);
  if (up)
    down_.erase(link);
  else
    down_.insert(link);
}

namespace {
glsc::MonitorPolicy policy_for(double interval_s) {
  glsc::MonitorPolicy p;
  p.interval = from_seconds(interval_s);
  return p;
}
}  // namespace

GlscClient::GlscClient(const GlscServiceOptions& options)
    : opts_(options),
      glsc_(SiteId{options.site}, loop_.scheduler(), probe_, substrate::LatencyProfile::named(options.profile),
            policy_for(options.monitor_interval_s), ggc::BackupMode::Local, nullptr) {
  glsc_.set_uplink(this);
}

GlscClient::~GlscClient() { stop(); }

void GlscClient::start() {
  peer_ = std::make_shared<Peer>(proto::Connection::dial(opts_.ggc), &loop_);
  loop_thread_ = std::thread([this] { loop_.run(); });
  peer_->send(MsgType::REGISTER, {{"site", opts_.site}});
  reader_ = std::thread([this] { read_loop(); });
  loop_.post([this] { glsc_.start(); });
}

void GlscClient::stop() {
  if (peer_) peer_->shutdown();
  if (reader_.joinable()) reader_.join();
  loop_.stop();
  if (loop_thread_.joinable()) loop_thread_.join();
}

void GlscClient::read_loop() {
  try {
    while (auto m = peer_->receive()) loop_.post([this, msg = std::move(*m)] { handle(msg); });
  } catch (const Error&) {
  }
}

void GlscClient::handle(const Message& m) {
  try {
    switch (m.type) {
      case MsgType::REGISTER:
        if (m.body.contains("links")) {
          std::vector<LinkId> links;
          for (const auto& l : m.body.at("links")) links.push_back(LinkId{l.get<std::string>()});
          glsc_.links_registered(links);
        }
        return;
      case MsgType::CONFIG_PUSH: {
        auto id = m.msg_id;
        glsc_.push_config(ggc::site_config_from_json(m.body), [this, id](const ggc::ConfigAck& ack) {
          try {
            peer_->send(MsgType::CONFIG_ACK, ack_json(ack), id);
          } catch (const Error&) {
          }
        });
        return;
      }
      case MsgType::TEARDOWN:
        glsc_.teardown(LeaseId{m.body.at("lease").get<std::uint64_t>()});
        return;
      default:
        return;
    }
  } catch (const std::exception& e) {
    try {
      peer_->send(MsgType::ERROR, {{"code", "SchemaViolation"}, {"detail", e.what()}}, m.msg_id);
    } catch (const Error&) {
    }
  }
}

void GlscClient::status_batch(const SiteId& site, const std::vector<ggc::StatusReport>& reports) {
  json rs = json::array();
  for (const auto& r : reports) rs.push_back(report_json(r));
  try {
    peer_->send(MsgType::STATUS_REPORT, {{"site", site.str()}, {"reports", rs}});
  } catch (const Error&) {
  }
}

void GlscClient::failure_notify(const SiteId& site, const LinkId& link, LeaseId lease, std::size_t lane,
                                std::size_t hop, Millis detected_at, bool local_exhausted) {
  try {
    peer_->send(MsgType::FAILURE_NOTIFY, {{"site", site.str()},
                                          {"link", link.str()},
                                          {"lease", lease.value},
                                          {"lane", lane},
                                          {"hop", hop},
                                          {"detected_at_s", to_seconds(detected_at)},
                                          {"local_exhausted", local_exhausted}});
  } catch (const Error&) {
  }
}

void GlscClient::backup_provisioned(const SiteId& site, LeaseId lease, std::size_t lane, const LinkId& failed,
                                    Millis detected_at, Millis active_from) {
  try {
    peer_->send(MsgType::PROVISION_BACKUP, {{"site", site.str()},
                                            {"lease", lease.value},
                                            {"lane", lane},
                                            {"failed", failed.str()},
                                            {"detected_at_s", to_seconds(detected_at)},
                                            {"active_from_s", to_seconds(active_from)}});
  } catch (const Error&) {
  }
}

int serve_glsc(const GlscServiceOptions& options) {
  GlscClient client(options);
  client.start();
  fmt::print("glsc {} connected to {}\n", options.site, options.ggc);
  std::fflush(stdout);
  wait_for_signal();
  client.stop();
  return 0;
}

// ---------------------------------------------------------------------------
// Standalone exchange

ExchangeServer::ExchangeServer(const ExchangeServiceOptions& options)
    : Server(options.listen_port), opts_(options), exchange_([](const LinkId&) { return true; }) {
  exchange::parse_mechanism(opts_.mechanism);
}

ExchangeServer::~ExchangeServer() { stop(); }

void ExchangeServer::handle(const std::shared_ptr<Peer>& peer, const Message& m) {
  try {
    switch (m.type) {
      case MsgType::REGISTER_SELLER: {
        SellerId seller{m.body.at("seller").get<std::string>()};
        json ids = json::array();
        for (const auto& o : m.body.at("offerings"))
          ids.push_back(exchange_
                            .register_offering(seller, LinkId{o.at("link").get<std::string>()},
                                               Money{o.value("reserve", std::int64_t{0})}, loop_.wall_now())
                            .value);
        peer->send(MsgType::REGISTER_SELLER, {{"offerings", ids}}, m.msg_id);
        return;
      }
      case MsgType::REGISTER_BUYER:
        exchange_.register_bidder(m.body.at("client_name").get<std::string>());
        peer->send(MsgType::REGISTER_BUYER, json::object(), m.msg_id);
        return;
      case MsgType::SUBMIT_BID: {
        auto links = m.body.at("links").get<std::vector<std::string>>();
        std::sort(links.begin(), links.end());
        auto slots = m.body.value("slots", std::size_t{1});
        std::string key = fmt::format("{}|{}", fmt::join(links, ","), slots);
        auto it = rounds_.find(key);
        if (it == rounds_.end()) {
          std::vector<OfferingId> offerings;
          for (const auto& l : links) {
            auto o = exchange_.offering_for(LinkId{l});
            if (!o) throw Error(Errc::UnknownOffering, l);
            offerings.push_back(o->id);
          }
          Round r;
          r.lot = exchange_.open_lot(offerings, slots);
          it = rounds_.emplace(key, std::move(r)).first;
          loop_.scheduler().after(from_seconds(opts_.round_window_s), sim::Phase::Control, [this, key] { close(key); });
        }
        auto client = m.body.at("client_name").get<std::string>();
        Money amount{m.body.at("amount").get<std::int64_t>()};
        Money value{m.body.value("value", amount.micros)};
        exchange_.submit_bid({client, it->second.lot, amount, value, loop_.wall_now()});
        it->second.index[client] = it->second.bidders.size();
        it->second.bidders.emplace_back(peer, m.msg_id);
        peer->send(MsgType::SUBMIT_BID, {{"lot", it->second.lot.value}}, m.msg_id);
        return;
      }
      default:
        reply_error(peer, m, "InvalidArgument", fmt::format("unexpected {}", proto::msg_type_name(m.type)));
    }
  } catch (const Error& e) {
    reply_error(peer, m, std::string(errc_name(e.code())), e.what());
  } catch (const json::exception& e) {
    reply_error(peer, m, "SchemaViolation", e.what());
  }
}

void ExchangeServer::close(const std::string& key) {
  auto node = rounds_.extract(key);
  if (node.empty()) return;
  auto& round = node.mapped();
  std::optional<exchange::AuctionOutcome> out;
  try {
    out = exchange_.close_lot(round.lot, exchange::parse_mechanism(opts_.mechanism));
  } catch (const Error& e) {
    if (e.code() != Errc::EmptyRound) throw;
  }
  for (const auto& [client, idx] : round.index) {
    auto& [peer, bid_id] = round.bidders[idx];
    json body{{"lot", round.lot.value}, {"client", client}, {"won", false}, {"payment", 0}};
    if (out) {
      if (const auto* award = out->award_for(client)) {
        body["won"] = true;
        body["payment"] = award->payment.micros;
        body["rank"] = award->rank;
      }
    }
    try {
      peer->send(MsgType::AUCTION_RESULT, body, bid_id);
    } catch (const Error&) {
    }
  }
}

int serve_exchange(const ExchangeServiceOptions& options) {
  ExchangeServer server(options);
  server.start();
  fmt::print("exchange listening on 127.0.0.1:{}\n", server.port());
  std::fflush(stdout);
  wait_for_signal();
  server.stop();
  return 0;
}

// ---------------------------------------------------------------------------
// Client

Client::Client(const std::string& address) : conn_(proto::Connection::dial(address)) {}

Message Client::request(MsgType type, json body) {
  Message m{type, next_id_++, 0.0, std::nullopt, std::move(body)};
  conn_.send(m);
  for (;;) {
    auto reply = conn_.receive();
    if (!reply) throw Error(Errc::Transport, "connection closed while waiting for a reply");
    if (reply->ack_of == m.msg_id) {
      if (reply->type == MsgType::ERROR)
        throw Error(Errc::Transport, fmt::format("{}: {}", reply->body.value("code", std::string("ERROR")),
                                                 reply->body.value("detail", std::string())));
      return *reply;
    }
    queued_.push_back(std::move(*reply));
  }
}

Message Client::next_unsolicited() {
  if (!queued_.empty()) {
    auto m = std::move(queued_.front());
    queued_.pop_front();
    return m;
  }
  auto m = conn_.receive();
  if (!m) throw Error(Errc::Transport, "connection closed");
  return *m;
}

}  // namespace gf::service
