#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>

#include "test_support.hpp"
#include "v2v/protocol_messages.hpp"

using namespace v2v;
using namespace v2v::testing;

namespace {

std::string read_hex(const std::string& name) {
  std::ifstream in(std::string(V2V_SOURCE_DIR) + "/tests/golden/" + name);
  std::string s, line;
  while (std::getline(in, line))
    for (char c : line)
      if (std::isxdigit(static_cast<unsigned char>(c))) s += c;
  return s;
}

}  // namespace

TEST(Encoding, IsDeterministic) {
  std::mt19937_64 g(1);
  for (int i = 0; i < 200; ++i) {
    Message m = random_message(g);
    EXPECT_EQ(encode_canonical(m), encode_canonical(m));
  }
}

TEST(Encoding, BeaconRoundTripWithAllFields) {
  Message m = golden_beacon();
  set_tag(m, AuthTag{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  EXPECT_EQ(decode(encode_canonical(m)), m);
}

TEST(Encoding, RoundTripFuzz100k) {
  std::mt19937_64 g(7);
  for (int i = 0; i < 100000; ++i) {
    const Message m = random_message(g);
    const Bytes b = encode_canonical(m);
    ASSERT_EQ(decode(b), m) << "iteration " << i;
  }
}

TEST(Encoding, SeqChangeTouchesOnlySeqBytes) {
  // Header is 6 bytes, sender id 4 bytes, then the 8-byte seq field.
  constexpr std::size_t kSeqBegin = 6 + 4, kSeqEnd = kSeqBegin + 8;
  std::mt19937_64 g(3);
  for (int i = 0; i < 500; ++i) {
    BeaconMessage a = random_beacon(g);
    BeaconMessage b = a;
    while (b.seq == a.seq) b.seq = g();
    const Bytes ea = encode_canonical(a), eb = encode_canonical(b);
    ASSERT_EQ(ea.size(), eb.size());
    bool any = false;
    for (std::size_t k = 0; k < ea.size(); ++k) {
      if (ea[k] == eb[k]) continue;
      any = true;
      EXPECT_TRUE(k >= kSeqBegin && k < kSeqEnd) << "byte " << k;
    }
    EXPECT_TRUE(any);
    for (std::size_t k = 0; k < 8; ++k) {
      EXPECT_EQ(ea[kSeqBegin + k], static_cast<std::uint8_t>(a.seq >> (8 * k)));
      EXPECT_EQ(eb[kSeqBegin + k], static_cast<std::uint8_t>(b.seq >> (8 * k)));
    }
  }
}

TEST(Encoding, DomainErrors) {
  BeaconMessage b = golden_beacon();
  b.observability_quality = 1.5;
  EXPECT_THROW(encode_canonical(b), EncodingDomainError);
  b = golden_beacon();
  b.ttl_ms = 0;
  EXPECT_THROW(encode_canonical(b), EncodingDomainError);
  b = golden_beacon();
  b.intent[1].eta_ms = b.intent[0].eta_ms;
  EXPECT_THROW(encode_canonical(b), EncodingDomainError);
  b = golden_beacon();
  b.intent.resize(9, {{}, 0});
  for (std::size_t i = 0; i < 9; ++i) b.intent[i].eta_ms = static_cast<SimTimeMs>(i + 1);
  EXPECT_THROW(encode_canonical(b), EncodingDomainError);

  CoordinationMessage c = golden_coordination();
  c.validity_ms = 0;
  EXPECT_THROW(encode_canonical(c), EncodingDomainError);
  c = golden_coordination();
  c.lifecycle = Lifecycle::Propose;
  c.participants = {7};
  EXPECT_THROW(encode_canonical(c), EncodingDomainError);
  c.participants.clear();
  EXPECT_THROW(encode_canonical(c), EncodingDomainError);
}

TEST(Decoding, RejectsEmptyAndTrailingBytes) {
  EXPECT_THROW(decode({}), MalformedMessage);
  Bytes b = encode_canonical(golden_beacon());
  b.push_back(0);
  EXPECT_THROW(decode(b), MalformedMessage);
  Bytes c = encode_canonical(golden_coordination());
  c.pop_back();
  EXPECT_THROW(decode(c), MalformedMessage);
}

TEST(Decoding, RejectsUnknownDiscriminants) {
  Bytes b = encode_canonical(golden_beacon());
  b[0] = 0x7f;
  EXPECT_THROW(decode(b), MalformedMessage);
  b = encode_canonical(golden_beacon());
  b[1] = 9;
  EXPECT_THROW(decode(b), MalformedMessage);
}

TEST(Decoding, FuzzNeverCrashesAndOnlyAcceptsCanonical) {
  std::mt19937_64 g(11);
  int accepted = 0;
  for (int i = 0; i < 100000; ++i) {
    Bytes b = encode_canonical(random_message(g));
    const int flips = 1 + static_cast<int>(g() % 3);
    for (int f = 0; f < flips; ++f) b[g() % b.size()] ^= static_cast<std::uint8_t>(1u << (g() % 8));
    if (g() % 8 == 0) b.resize(g() % (b.size() + 4), 0xab);
    try {
      Message m = decode(b);
      ++accepted;
      ASSERT_EQ(encode_canonical(m), b) << "accepted a non-canonical encoding";
    } catch (const MalformedMessage&) {
    }
  }
  EXPECT_GT(accepted, 0);
}

TEST(AuthTag, Deterministic) {
  const AuthKey k = golden_key();
  const Bytes b = encode_canonical(golden_beacon());
  EXPECT_EQ(compute_auth_tag(k, b), compute_auth_tag(k, b));
}

TEST(AuthTag, SingleBitFlipsChangeTag) {
  const AuthKey k = golden_key();
  const Bytes base = encode_canonical(golden_coordination());
  const AuthTag t0 = compute_auth_tag(k, base);
  std::mt19937_64 g(5);
  std::set<std::pair<std::size_t, int>> seen;
  for (int i = 0; i < 1000; ++i) {
    Bytes b = base;
    const std::size_t pos = g() % b.size();
    const int bit = static_cast<int>(g() % 8);
    b[pos] ^= static_cast<std::uint8_t>(1u << bit);
    EXPECT_NE(compute_auth_tag(k, b), t0);
    seen.emplace(pos, bit);
  }
  EXPECT_GT(seen.size(), 500u);
}

TEST(AuthTag, DistinctKeysGiveDistinctTags) {
  const Bytes b = encode_canonical(golden_beacon());
  std::mt19937_64 g(9);
  for (int i = 0; i < 100; ++i) {
    AuthKey k1{}, k2{};
    for (auto& x : k1) x = static_cast<std::uint8_t>(g());
    do {
      for (auto& x : k2) x = static_cast<std::uint8_t>(g());
    } while (k1 == k2);
    EXPECT_NE(compute_auth_tag(k1, b), compute_auth_tag(k2, b));
  }
}

TEST(AuthTag, VerificationFailsForAnyFieldMutation) {
  const AuthKey k = golden_key();
  std::mt19937_64 g(13);
  for (int i = 0; i < 100000; ++i) {
    Message m = random_message(g);
    const Bytes sealed = seal(m, k);
    ASSERT_TRUE(verify_auth_tag(k, sealed));
    Bytes bad = sealed;
    const std::size_t covered = sealed.size() - kAuthTagBytes;
    bad[g() % covered] ^= static_cast<std::uint8_t>(1u << (g() % 8));
    ASSERT_FALSE(verify_auth_tag(k, bad));
  }
}

TEST(AuthTag, TagBytesExcludedFromCoveredRegion) {
  Message m = golden_beacon();
  const Bytes a = encode_canonical(m);
  set_tag(m, AuthTag{0xff});
  const Bytes b = encode_canonical(m);
  ASSERT_EQ(a.size(), b.size());
  EXPECT_TRUE(std::equal(tag_input(a).begin(), tag_input(a).end(), tag_input(b).begin()));
}

TEST(GoldenVectors, BeaconMatchesCheckedInHex) {
  Message m = golden_beacon();
  const std::string expect = read_hex("beacon.hex");
  ASSERT_FALSE(expect.empty());
  EXPECT_EQ(to_hex(seal(m, golden_key())), expect);
}

TEST(GoldenVectors, CoordinationMatchesCheckedInHex) {
  Message m = golden_coordination();
  const std::string expect = read_hex("coordination.hex");
  ASSERT_FALSE(expect.empty());
  EXPECT_EQ(to_hex(seal(m, golden_key())), expect);
}
