#include <doctest.h>

#include <thread>

#include <fmt/format.h>

#include "greyfiber/error.hpp"
#include "greyfiber/proto.hpp"

using namespace gf;
using namespace gf::proto;

namespace {

// Stand-in for a compression/encryption stage.
struct XorTransform : Transform {
  std::string encode(std::string p) const override {
    for (auto& c : p) c = static_cast<char>(c ^ 0x5a);
    return p;
  }
  std::string decode(std::string p) const override { return encode(std::move(p)); }
};

Message sample(std::uint64_t id) {
  Message m;
  m.type = MsgType::CONFIG_PUSH;
  m.msg_id = id;
  m.ts = 12.5;
  m.body = {{"site", "S1"}, {"links", {"l1", "l2"}}};
  return m;
}

}  // namespace

TEST_CASE("frames survive arbitrary stream splits") {
  std::string stream = encode_frame(sample(1)) + encode_frame(sample(2));
  FrameDecoder dec;
  std::vector<Message> got;
  for (char c : stream) {
    dec.feed(std::string_view(&c, 1));
    while (auto m = dec.next()) got.push_back(*m);
  }
  REQUIRE(got.size() == 2);
  CHECK(got[1].msg_id == 2);
  CHECK(got[0].type == MsgType::CONFIG_PUSH);
  CHECK(got[0].body["links"][1] == "l2");
  CHECK(!got[0].ack_of);
  CHECK(dec.buffered() == 0);
}

TEST_CASE("length prefix is big-endian") {
  auto f = encode_frame(sample(1));
  std::uint32_t n = (static_cast<unsigned char>(f[0]) << 24) | (static_cast<unsigned char>(f[1]) << 16) |
                    (static_cast<unsigned char>(f[2]) << 8) | static_cast<unsigned char>(f[3]);
  CHECK(n == f.size() - 4);
}

TEST_CASE("malformed frames are rejected") {
  FrameDecoder big;
  big.feed(std::string("\x7f\xff\xff\xff", 4));
  CHECK_THROWS_AS(big.next(), Error);
  FrameDecoder junk;
  junk.feed(std::string("\0\0\0\3abc", 7));
  CHECK_THROWS_AS(junk.next(), Error);
  CHECK_THROWS_AS(parse_msg_type("HELLO"), Error);
}

TEST_CASE("transform layer slots in between JSON and framing") {
  auto x = std::make_shared<XorTransform>();
  auto f = encode_frame(sample(3), x.get());
  CHECK(f.find("CONFIG_PUSH") == std::string::npos);
  FrameDecoder dec(x);
  dec.feed(f);
  CHECK(dec.next()->msg_id == 3);
}

TEST_CASE("loopback request and ack") {
  Listener listener;
  std::thread server([&] {
    auto conn = listener.accept();
    REQUIRE(conn);
    while (auto m = conn->receive()) {
      Message ack;
      ack.type = MsgType::CONFIG_ACK;
      ack.msg_id = 1000 + m->msg_id;
      ack.ack_of = m->msg_id;
      conn->send(ack);
    }
  });
  auto client = Connection::dial(fmt::format("127.0.0.1:{}", listener.port()));
  for (std::uint64_t i = 1; i <= 3; ++i) {
    client.send(sample(i));
    auto ack = client.receive();
    REQUIRE(ack);
    CHECK(ack->type == MsgType::CONFIG_ACK);
    CHECK(ack->ack_of == i);
  }
  client.shutdown();
  server.join();
}
