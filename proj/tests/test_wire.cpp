// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

#include <gtest/gtest.h>

#include <chrono>
#include <bit>
#include <cmath>
#include <limits>
#include <thread>

#include "ssdsgd/message.hpp"
#include "ssdsgd/transport.hpp"

using namespace ssdsgd::ps;
using ssdsgd::DenseVec;
using namespace std::chrono_literals;

TEST(Wire, HeaderLayoutIsLittleEndian) {
  const Message m{MessageKind::PullResp, 0x01020304u, 0x0506, 0x0708090a0b0c0d0eULL, {1.0}};
  const auto bytes = encode(m);
  ASSERT_EQ(bytes.size(), kHeaderBytes + 8);
  auto b = [&](std::size_t i) { return std::to_integer<int>(bytes[i]); };
  EXPECT_EQ(b(0), 3);
  EXPECT_EQ(b(1), 0x04);
  EXPECT_EQ(b(4), 0x01);
  EXPECT_EQ(b(5), 0x06);
  EXPECT_EQ(b(6), 0x05);
  EXPECT_EQ(b(7), 0x0e);
  EXPECT_EQ(b(14), 0x07);
  EXPECT_EQ(b(15), 1);  // element count
  EXPECT_EQ(b(16), 0);
  // 1.0 = 0x3ff0000000000000
  EXPECT_EQ(b(kHeaderBytes + 6), 0xf0);
  EXPECT_EQ(b(kHeaderBytes + 7), 0x3f);
}

TEST(Wire, RoundTripIsBitExact) {
  const DenseVec payload{0.0, -0.0, 1e-310, std::numeric_limits<double>::max(), -3.25, 0.1};
  for (auto kind : {MessageKind::Push, MessageKind::PushAck, MessageKind::PullReq, MessageKind::PullResp}) {
    const Message m{kind, 7, 3, 123456789, kind == MessageKind::PushAck ? DenseVec{} : payload};
    const auto bytes = encode(m);
    const auto d = decode(bytes);
    ASSERT_TRUE(d);
    EXPECT_EQ(d->second, bytes.size());
    EXPECT_EQ(d->first.kind, m.kind);
    ASSERT_EQ(d->first.payload.size(), m.payload.size());
    for (std::size_t i = 0; i < m.payload.size(); ++i)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(d->first.payload[i]), std::bit_cast<std::uint64_t>(m.payload[i]));
  }
}

TEST(Wire, PartialRecordsNeedMoreBytes) {
  const auto bytes = encode(Message{MessageKind::Push, 1, 1, 1, {1.0, 2.0}});
  for (std::size_t n = 0; n < bytes.size(); ++n)
    EXPECT_FALSE(decode(std::span<const std::byte>(bytes.data(), n))) << n;
}

TEST(Wire, ConcatenatedRecordsDecodeInOrder) {
  std::vector<std::byte> stream;
  encode(Message{MessageKind::Push, 1, 0, 5, {1.0}}, stream);
  encode(Message{MessageKind::PullReq, 2, 0, 5, {}}, stream);
  auto first = decode(stream);
  ASSERT_TRUE(first);
  auto second = decode(std::span<const std::byte>(stream).subspan(first->second));
  ASSERT_TRUE(second);
  EXPECT_EQ(first->first.key, 1u);
  EXPECT_EQ(second->first.kind, MessageKind::PullReq);
  EXPECT_EQ(first->second + second->second, stream.size());
}

TEST(Wire, UnknownKindIsProtocolError) {
  auto bytes = encode(Message{MessageKind::Push, 1, 0, 0, {}});
  bytes[0] = std::byte{9};
  EXPECT_THROW(decode(bytes), ssdsgd::ProtocolError);
}

class MailboxTest : public ::testing::TestWithParam<TransportKind> {};

TEST_P(MailboxTest, DeliversInOrderAndReportsTimeoutAndClose) {
  auto mb = make_mailbox(GetParam());
  EXPECT_EQ(mb->receive(1ms).status, Received::Status::Timeout);
  for (std::uint64_t i = 0; i < 100; ++i) mb->send({MessageKind::Push, 0, 1, i, DenseVec(i % 7, 0.5)});
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto r = mb->receive(1s);
    ASSERT_EQ(r.status, Received::Status::Ok);
    EXPECT_EQ(r.message.iteration, i);
    EXPECT_EQ(r.message.payload.size(), i % 7);
  }
  mb->close();
  EXPECT_EQ(mb->receive(100ms).status, Received::Status::Closed);
}

TEST_P(MailboxTest, ManyProducersOneConsumer) {
  auto mb = make_mailbox(GetParam());
  std::vector<std::thread> producers;
  for (std::uint16_t w = 0; w < 4; ++w)
    producers.emplace_back([&, w] {
      for (std::uint64_t i = 0; i < 200; ++i) mb->send({MessageKind::Push, 0, w, i, DenseVec(3, double(w))});
    });
  std::vector<std::uint64_t> next(4, 0);
  for (int n = 0; n < 800; ++n) {
    auto r = mb->receive(5s);
    ASSERT_EQ(r.status, Received::Status::Ok);
    EXPECT_EQ(r.message.iteration, next[r.message.worker_id]++);
    EXPECT_EQ(r.message.payload[0], double(r.message.worker_id));
  }
  for (auto& t : producers) t.join();
}

INSTANTIATE_TEST_SUITE_P(Transports, MailboxTest,
                         ::testing::Values(TransportKind::InProcess, TransportKind::LoopbackSocket),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Wire, LinkModelCost) {
  LinkModel link{std::chrono::microseconds(10), 1e6};
  EXPECT_EQ(link.cost(1000).count(), 10'000 + 1'000'000);
}
