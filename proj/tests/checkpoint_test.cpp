#include <gtest/gtest.h>

#include <filesystem>

#include "ssal/checkpoint.hpp"
#include "test_util.hpp"

namespace ssal {
namespace {

using namespace ssal::testing;
using ndgrad::ParamStore;

Checkpoint sample() {
  Rng rng(1);
  ParamStore a, b;
  a.add("w", random_tensor({3, 4}, rng));
  a.add("bias", random_tensor({4}, rng));
  b.add("w", random_tensor({3, 4}, rng));
  b.add("bias", random_tensor({4}, rng));
  a.at("w")[0] = 1.0 / 3.0;
  a.at("w")[1] = -0.0;
  a.at("w")[2] = std::numeric_limits<double>::denorm_min();
  Checkpoint ck;
  ck.stores = {{"student", a}, {"teacher", b}};
  ck.step = 1234;
  ck.config_hash = "abc123";
  ck.state = {{"round", 2}, {"labeled", {1, 5, 9}}};
  return ck;
}

TEST(Checkpoint, Float64RoundTripIsBitwise) {
  const Checkpoint ck = sample();
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
  ASSERT_EQ(back.stores.size(), 2u);
  for (std::size_t s = 0; s < 2; ++s) {
    EXPECT_EQ(back.stores[s].first, ck.stores[s].first);
    const auto& x = back.stores[s].second;
    const auto& y = ck.stores[s].second;
    ASSERT_EQ(x.names(), y.names());
    for (std::size_t i = 0; i < x.size(); ++i) {
      ASSERT_EQ(x.at(i).shape(), y.at(i).shape());
      EXPECT_EQ(std::memcmp(x.at(i).raw(), y.at(i).raw(), x.at(i).size() * sizeof(double)), 0);
    }
  }
  EXPECT_TRUE(std::signbit(back.store("student").at("w")[1]));
  EXPECT_EQ(back.step, 1234u);
  EXPECT_EQ(back.config_hash, "abc123");
  EXPECT_EQ(back.state, ck.state);
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
  EXPECT_THROW(back.store("ema"), FormatError);
}

TEST(Checkpoint, Float32RoundsOnce) {
  const Checkpoint ck = sample();
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ck, BlobType::float32));
  const auto& x = back.store("teacher");
  const auto& y = ck.store("teacher");
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x.at(i).size(); ++j) EXPECT_EQ(x.at(i)[j], double(float(y.at(i)[j])));
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "ssal_ckpt_test" / "a.ckpt";
  save_checkpoint(path, sample());
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.store("student"), sample().store("student"));
  std::filesystem::remove_all(path.parent_path());
  EXPECT_THROW(load_checkpoint(path), FormatError);
}

TEST(Checkpoint, TruncatedBlob) {
  std::string bytes = encode_checkpoint(sample());
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(bytes), TruncatedError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 10)), TruncatedError);
}

TEST(Checkpoint, TamperedLengthField) {
  const std::string bytes = encode_checkpoint(sample());
  const auto nl = bytes.find('\n');
  auto header = nlohmann::json::parse(bytes.substr(0, nl));
  header["blob_bytes"] = header["blob_bytes"].get<std::size_t>() + 8;
  EXPECT_THROW(decode_checkpoint(header.dump() + bytes.substr(nl)), TruncatedError);
  header["blob_bytes"] = header["blob_bytes"].get<std::size_t>() - 16;
  EXPECT_THROW(decode_checkpoint(header.dump() + bytes.substr(nl)), FormatError);
}

TEST(Checkpoint, BadMagicAndTrailingBytes) {
  std::string bytes = encode_checkpoint(sample());
  EXPECT_THROW(decode_checkpoint(bytes + "x"), FormatError);
  const auto at = bytes.find("ssal-checkpoint");
  bytes.replace(at, 4, "xxxx");
  EXPECT_THROW(decode_checkpoint(bytes), MagicMismatchError);
  EXPECT_THROW(decode_checkpoint("{not json\n"), FormatError);
}

TEST(Checkpoint, MissingHeaderFieldNamesCheckpoint) {
  const std::string bytes = encode_checkpoint(sample());
  const auto nl = bytes.find('\n');
  auto header = nlohmann::json::parse(bytes.substr(0, nl));
  header.erase("step");
  EXPECT_THROW(decode_checkpoint(header.dump() + bytes.substr(nl)), ValidationError);
}

TEST(Checkpoint, FnvKnownVectors) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

}  // namespace
}  // namespace ssal
