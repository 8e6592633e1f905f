#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "greyfiber/types.hpp"

namespace gf::proto {

enum class MsgType {
  REGISTER,
  CONFIG_PUSH,
  CONFIG_ACK,
  TEARDOWN,
  STATUS_REPORT,
  FAILURE_NOTIFY,
  PROVISION_BACKUP,
  AUCTION_RESULT,
  REGISTER_SELLER,
  REGISTER_BUYER,
  SUBMIT_BID,
  ERROR,
};

std::string_view msg_type_name(MsgType t);
MsgType parse_msg_type(std::string_view s);

struct Message {
  MsgType type = MsgType::REGISTER;
  std::uint64_t msg_id = 0;
  double ts = 0.0;  // sender clock, seconds
  std::optional<std::uint64_t> ack_of;
  nlohmann::json body = nlohmann::json::object();
};

nlohmann::json to_json(const Message& m);
Message message_from_json(const nlohmann::json& j);

// Byte-level stage applied to every payload between JSON and the length
// prefix. Identity by default; compression or encryption slot in here.
class Transform {
 public:
  virtual ~Transform() = default;
  virtual std::string encode(std::string payload) const { return payload; }
  virtual std::string decode(std::string payload) const { return payload; }
};

inline constexpr std::size_t kMaxFrame = 16u << 20;

// 4-byte big-endian length, then the transformed JSON payload.
std::string encode_frame(const Message& m, const Transform* transform = nullptr);

// Incremental decoder for a byte stream carrying frames.
class FrameDecoder {
 public:
  explicit FrameDecoder(std::shared_ptr<const Transform> transform = nullptr) : transform_(std::move(transform)) {}

  void feed(std::string_view bytes) { buf_.append(bytes); }
  // Throws MalformedFrame on an oversized length or undecodable payload.
  std::optional<Message> next();
  std::size_t buffered() const { return buf_.size(); }

 private:
  std::string buf_;
  std::shared_ptr<const Transform> transform_;
};

// Blocking TCP stream carrying frames. Not copyable; closes on destruction.
class Connection {
 public:
  Connection() = default;
  explicit Connection(int fd, std::shared_ptr<const Transform> transform = nullptr);
  Connection(Connection&& other) noexcept;
  Connection& operator=(Connection&& other) noexcept;
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;
  ~Connection();

  // "host:port"
  static Connection dial(const std::string& address, std::shared_ptr<const Transform> transform = nullptr);

  void send(const Message& m);
  // nullopt on orderly close by the peer.
  std::optional<Message> receive();
  void shutdown();
  bool open() const { return fd_ >= 0; }

 private:
  int fd_ = -1;
  FrameDecoder decoder_;
  std::shared_ptr<const Transform> transform_;
};

class Listener {
 public:
  // Port 0 picks an ephemeral port on the loopback interface.
  explicit Listener(std::uint16_t port = 0, const std::string& host = "127.0.0.1");
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;
  ~Listener();

  std::uint16_t port() const { return port_; }
  // nullopt once close() has been called.
  std::optional<Connection> accept();
  void close();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

}  // namespace gf::proto
