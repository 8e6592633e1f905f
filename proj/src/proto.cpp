#include "greyfiber/proto.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>

#include <fmt/format.h>

#include "greyfiber/error.hpp"

namespace gf::proto {

namespace {

constexpr std::array<std::pair<MsgType, std::string_view>, 12> kNames{{
    {MsgType::REGISTER, "REGISTER"},
    {MsgType::CONFIG_PUSH, "CONFIG_PUSH"},
    {MsgType::CONFIG_ACK, "CONFIG_ACK"},
    {MsgType::TEARDOWN, "TEARDOWN"},
    {MsgType::STATUS_REPORT, "STATUS_REPORT"},
    {MsgType::FAILURE_NOTIFY, "FAILURE_NOTIFY"},
    {MsgType::PROVISION_BACKUP, "PROVISION_BACKUP"},
    {MsgType::AUCTION_RESULT, "AUCTION_RESULT"},
    {MsgType::REGISTER_SELLER, "REGISTER_SELLER"},
    {MsgType::REGISTER_BUYER, "REGISTER_BUYER"},
    {MsgType::SUBMIT_BID, "SUBMIT_BID"},
    {MsgType::ERROR, "ERROR"},
}};

[[noreturn]] void sys_fail(const std::string& what) {
  throw Error(Errc::Transport, fmt::format("{}: {}", what, std::strerror(errno)));
}

}  // namespace

std::string_view msg_type_name(MsgType t) {
  for (const auto& [k, v] : kNames)
    if (k == t) return v;
  return "?";
}

MsgType parse_msg_type(std::string_view s) {
  for (const auto& [k, v] : kNames)
    if (v == s) return k;
  throw Error(Errc::MalformedFrame, fmt::format("unknown message type '{}'", s));
}

nlohmann::json to_json(const Message& m) {
  nlohmann::json j{{"type", msg_type_name(m.type)}, {"msg_id", m.msg_id}, {"ts", m.ts}, {"body", m.body}};
  if (m.ack_of) j["ack_of"] = *m.ack_of;
  return j;
}

Message message_from_json(const nlohmann::json& j) {
  try {
    Message m;
    m.type = parse_msg_type(j.at("type").get<std::string>());
    m.msg_id = j.at("msg_id").get<std::uint64_t>();
    m.ts = j.at("ts").get<double>();
    if (j.contains("ack_of") && !j["ack_of"].is_null()) m.ack_of = j["ack_of"].get<std::uint64_t>();
    if (j.contains("body")) m.body = j["body"];
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::MalformedFrame, e.what());
  }
}

std::string encode_frame(const Message& m, const Transform* transform) {
  std::string payload = to_json(m).dump();
  if (transform) payload = transform->encode(std::move(payload));
  if (payload.size() > kMaxFrame) throw Error(Errc::MalformedFrame, "frame too large");
  auto n = static_cast<std::uint32_t>(payload.size());
  std::string out(4, '\0');
  out[0] = static_cast<char>((n >> 24) & 0xff);
  out[1] = static_cast<char>((n >> 16) & 0xff);
  out[2] = static_cast<char>((n >> 8) & 0xff);
  out[3] = static_cast<char>(n & 0xff);
  return out + payload;
}

std::optional<Message> FrameDecoder::next() {
  if (buf_.size() < 4) return std::nullopt;
  auto b = [&](int i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[i])); };
  std::uint32_t n = (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
  if (n > kMaxFrame) throw Error(Errc::MalformedFrame, fmt::format("frame length {} exceeds limit", n));
  if (buf_.size() < 4 + static_cast<std::size_t>(n)) return std::nullopt;
  std::string payload = buf_.substr(4, n);
  buf_.erase(0, 4 + static_cast<std::size_t>(n));
  if (transform_) payload = transform_->decode(std::move(payload));
  nlohmann::json j = nlohmann::json::parse(payload, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(Errc::MalformedFrame, "payload is not a JSON object");
  return message_from_json(j);
}

// ---------------------------------------------------------------------------

Connection::Connection(int fd, std::shared_ptr<const Transform> transform)
    : fd_(fd), decoder_(transform), transform_(std::move(transform)) {
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Connection::Connection(Connection&& other) noexcept
    : fd_(other.fd_), decoder_(std::move(other.decoder_)), transform_(std::move(other.transform_)) {
  other.fd_ = -1;
}

Connection& Connection::operator=(Connection&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = other.fd_;
    decoder_ = std::move(other.decoder_);
    transform_ = std::move(other.transform_);
    other.fd_ = -1;
  }
  return *this;
}

Connection::~Connection() {
  if (fd_ >= 0) ::close(fd_);
}

Connection Connection::dial(const std::string& address, std::shared_ptr<const Transform> transform) {
  auto colon = address.rfind(':');
  if (colon == std::string::npos) throw Error(Errc::InvalidArgument, "address must be host:port");
  std::string host = address.substr(0, colon), port = address.substr(colon + 1);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0)
    throw Error(Errc::Transport, fmt::format("resolve {}: {}", address, ::gai_strerror(rc)));
  int fd = -1;
  for (auto* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) sys_fail("connect " + address);
  return Connection(fd, std::move(transform));
}

void Connection::send(const Message& m) {
  if (fd_ < 0) throw Error(Errc::Transport, "send on closed connection");
  std::string frame = encode_frame(m, transform_.get());
  std::size_t off = 0;
  while (off < frame.size()) {
    ssize_t n = ::send(fd_, frame.data() + off, frame.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      sys_fail("send");
    }
    off += static_cast<std::size_t>(n);
  }
}

std::optional<Message> Connection::receive() {
  while (true) {
    if (auto m = decoder_.next()) return m;
    if (fd_ < 0) return std::nullopt;
    char buf[4096];
    ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n == 0) return std::nullopt;
    if (n < 0) {
      if (errno == EINTR) continue;
      // A local shutdown() surfaces as an error on some kernels; treat as closed.
      if (errno == EBADF || errno == ECONNRESET || errno == ENOTCONN) return std::nullopt;
      sys_fail("recv");
    }
    decoder_.feed(std::string_view(buf, static_cast<std::size_t>(n)));
  }
}

void Connection::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

Listener::Listener(std::uint16_t port, const std::string& host) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) sys_fail("socket");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) throw Error(Errc::InvalidArgument, "bad host " + host);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) sys_fail("bind");
  if (::listen(fd_, 16) != 0) sys_fail("listen");
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

Listener::~Listener() {
  if (fd_ >= 0) ::close(fd_);
}

std::optional<Connection> Listener::accept() {
  while (true) {
    int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) return Connection(fd);
    if (errno == EINTR) continue;
    return std::nullopt;
  }
}

void Listener::close() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

}  // namespace gf::proto
