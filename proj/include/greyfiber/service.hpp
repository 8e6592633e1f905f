#pragma once

// Service mode: the simulation components on the wall clock, talking the
// framed JSON protocol over TCP.

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "greyfiber/exchange.hpp"
#include "greyfiber/ggc.hpp"
#include "greyfiber/glsc.hpp"
#include "greyfiber/proto.hpp"
#include "greyfiber/sim.hpp"
#include "greyfiber/topology.hpp"

namespace gf::service {

// Drives a Scheduler in step with a monotonic clock. All component calls
// happen on the thread inside run(); other threads hand work over with post().
class RealtimeLoop {
 public:
  RealtimeLoop();

  sim::Scheduler& scheduler() { return sched_; }
  // Milliseconds since construction.
  Millis wall_now() const;

  void post(std::function<void()> fn);
  // Runs fn on the loop thread and waits for it. Never call from that thread.
  template <typename F>
  auto call(F fn) -> decltype(fn()) {
    std::packaged_task<decltype(fn())()> task(std::move(fn));
    auto fut = task.get_future();
    post([&task] { task(); });
    return fut.get();
  }

  void run();
  void stop();

 private:
  std::chrono::steady_clock::time_point epoch_;
  sim::Scheduler sched_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> inbox_;
  bool stopping_ = false;
};

// One TCP peer. send() may be called from any thread.
class Peer {
 public:
  Peer(proto::Connection conn, const RealtimeLoop* clock) : conn_(std::move(conn)), clock_(clock) {}

  std::uint64_t send(proto::MsgType type, nlohmann::json body, std::optional<std::uint64_t> ack_of = std::nullopt);
  std::optional<proto::Message> receive() { return conn_.receive(); }
  void shutdown() { conn_.shutdown(); }

 private:
  proto::Connection conn_;
  const RealtimeLoop* clock_;
  std::mutex send_mu_;
  std::uint64_t next_id_ = 1;
};

// Accepts connections and hands every message to handle() on the loop thread.
class Server {
 public:
  explicit Server(std::uint16_t port);
  virtual ~Server();

  std::uint16_t port() const { return listener_.port(); }
  RealtimeLoop& loop() { return loop_; }
  void start();
  void stop();

 protected:
  virtual void handle(const std::shared_ptr<Peer>& peer, const proto::Message& m) = 0;
  virtual void closed(const std::shared_ptr<Peer>& peer) { (void)peer; }
  void reply_error(const std::shared_ptr<Peer>& peer, const proto::Message& m, const std::string& code,
                   const std::string& detail);

  RealtimeLoop loop_;

 private:
  void accept_loop();

  proto::Listener listener_;
  std::thread loop_thread_;
  std::thread accept_thread_;
  std::mutex peers_mu_;
  std::vector<std::shared_ptr<Peer>> peers_;
  std::vector<std::thread> readers_;
  std::atomic<bool> running_{false};
};

// ---------------------------------------------------------------------------

struct GgcServiceOptions {
  std::uint16_t listen_port = 0;
  std::string topology_file;  // optional: registered for "seller1" at start-up
  std::string mechanism = "gsp";
  std::string backup = "local";
  std::string events_file;  // optional stage-record sink
};

class GgcServer : public Server {
 public:
  explicit GgcServer(const GgcServiceOptions& options);
  ~GgcServer() override;

  std::vector<ggc::StageRecord> events() const { return log_.records(); }
  // Loop-thread access for tests and the CLI.
  template <typename F>
  auto with_ggc(F fn) {
    return loop_.call([&] { return fn(ggc_, graph_); });
  }

 protected:
  void handle(const std::shared_ptr<Peer>& peer, const proto::Message& m) override;
  void closed(const std::shared_ptr<Peer>& peer) override;

 private:
  class RemoteSite;
  void on_outcome(const ggc::LeaseOutcome& o);

  GgcServiceOptions opts_;
  topology::TopologyGraph graph_;
  exchange::Exchange exchange_;
  ggc::EventLog log_;
  ggc::Ggc ggc_;
  std::map<SiteId, std::unique_ptr<RemoteSite>> sites_;
  std::map<RequestId, std::shared_ptr<Peer>> submitters_;
  std::shared_ptr<Peer> submitting_;
};

int serve_ggc(const GgcServiceOptions& options);

// ---------------------------------------------------------------------------

// Link health set by an operator (or a test) rather than observed.
class ManualProbe : public glsc::LinkProbe {
 public:
  bool link_up(const LinkId& link) const override;
  void set_up(const LinkId& link, bool up);

 private:
  mutable std::mutex mu_;
  std::set<LinkId> down_;
};

struct GlscServiceOptions {
  std::string site;
  std::string ggc = "127.0.0.1:7700";
  std::string profile = "ideal";
  double monitor_interval_s = 1.0;
};

class GlscClient : public ggc::ControlUplink {
 public:
  explicit GlscClient(const GlscServiceOptions& options);
  ~GlscClient() override;

  void start();
  void stop();
  RealtimeLoop& loop() { return loop_; }
  ManualProbe& probe() { return probe_; }
  template <typename F>
  auto with_glsc(F fn) {
    return loop_.call([&] { return fn(glsc_); });
  }

  void status_batch(const SiteId& site, const std::vector<ggc::StatusReport>& reports) override;
  void failure_notify(const SiteId& site, const LinkId& link, LeaseId lease, std::size_t lane, std::size_t hop,
                      Millis detected_at, bool local_exhausted) override;
  void backup_provisioned(const SiteId& site, LeaseId lease, std::size_t lane, const LinkId& failed,
                          Millis detected_at, Millis active_from) override;

 private:
  void read_loop();
  void handle(const proto::Message& m);

  GlscServiceOptions opts_;
  RealtimeLoop loop_;
  ManualProbe probe_;
  glsc::Glsc glsc_;
  std::shared_ptr<Peer> peer_;
  std::thread loop_thread_;
  std::thread reader_;
};

int serve_glsc(const GlscServiceOptions& options);

// ---------------------------------------------------------------------------

struct ExchangeServiceOptions {
  std::uint16_t listen_port = 0;
  std::string mechanism = "gsp";
  double round_window_s = 0.2;  // bids for the same links within this window form one round
};

class ExchangeServer : public Server {
 public:
  explicit ExchangeServer(const ExchangeServiceOptions& options);
  ~ExchangeServer() override;

 protected:
  void handle(const std::shared_ptr<Peer>& peer, const proto::Message& m) override;

 private:
  struct Round {
    LotId lot;
    std::vector<std::pair<std::shared_ptr<Peer>, std::uint64_t>> bidders;  // peer, SUBMIT_BID msg id
    std::map<std::string, std::size_t> index;
  };
  void close(const std::string& key);

  ExchangeServiceOptions opts_;
  exchange::Exchange exchange_;
  std::map<std::string, Round> rounds_;
};

int serve_exchange(const ExchangeServiceOptions& options);

// ---------------------------------------------------------------------------

// Blocking request/response helper for clients and tests.
class Client {
 public:
  explicit Client(const std::string& address);
  // Sends and waits for the reply whose ack_of matches; unsolicited messages
  // that arrive meanwhile are queued for next_unsolicited().
  proto::Message request(proto::MsgType type, nlohmann::json body);
  proto::Message next_unsolicited();

 private:
  proto::Connection conn_;
  std::uint64_t next_id_ = 1;
  std::deque<proto::Message> queued_;
};

}  // namespace gf::service
