#include <gtest/gtest.h>

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradcheck.hpp"
#include "uat/checkpoint.hpp"
#include "uat/error.hpp"
#include "uat/mlm.hpp"

namespace uat {
namespace {

MlmModel small_model() {
  std::vector<std::string> words;
  for (int i = 0; i < 20; ++i) words.push_back("w" + std::to_string(i));
  MlmModel m(Vocabulary(words), testing::tiny_model_config(24, 6));
  m.metadata = {{"note", "unit test"}, {"epochs", 3}};
  return m;
}

ErrorCode code_of(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize_checkpoint(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::kIo;
}

// Re-encodes a checkpoint with an edited header.
std::vector<std::uint8_t> with_header(const std::vector<std::uint8_t>& bytes, const nlohmann::json& header) {
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(bytes[8 + i]) << (8 * i);
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(bytes.begin(), bytes.begin() + 8);
  for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(std::uint64_t(text.size()) >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), bytes.begin() + 16 + std::ptrdiff_t(len), bytes.end());
  return out;
}

nlohmann::json header_of(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(bytes[8 + i]) << (8 * i);
  return nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(len));
}

TEST(Checkpoint, SerializeRoundTripIsByteIdentical) {
  const auto m = small_model();
  const auto bytes = serialize_checkpoint(m);
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "UATF");
  const auto back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.vocab, m.vocab);
  EXPECT_EQ(back.config(), m.config());
  EXPECT_EQ(back.metadata, m.metadata);
}

TEST(Checkpoint, FileRoundTripIsByteIdenticalAndPredictsTheSame) {
  const auto dir = std::filesystem::temp_directory_path() / "uat_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto m = small_model();
  save_checkpoint(m, dir / "a.ckpt");
  const auto loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(loaded, dir / "b.ckpt");
  EXPECT_EQ(read_file_bytes(dir / "a.ckpt"), read_file_bytes(dir / "b.ckpt"));
  const TokenIds tokens = {5, kMaskId, 7};
  EXPECT_EQ(m.lm.predict_mask(tokens, 1), loaded.lm.predict_mask(tokens, 1));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, MissingFile) {
  try {
    load_checkpoint("/nonexistent/uat/model.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingFile);
  }
}

TEST(Checkpoint, BadMagic) {
  auto bytes = serialize_checkpoint(small_model());
  bytes[0] ^= 0x20;
  EXPECT_EQ(code_of(bytes), ErrorCode::kBadMagic);
}

TEST(Checkpoint, VersionMismatch) {
  auto bytes = serialize_checkpoint(small_model());
  bytes[4] = 2;
  EXPECT_EQ(code_of(bytes), ErrorCode::kVersionMismatch);
}

TEST(Checkpoint, Truncation) {
  const auto bytes = serialize_checkpoint(small_model());
  EXPECT_EQ(code_of({bytes.begin(), bytes.begin() + 10}), ErrorCode::kTruncated);
  EXPECT_EQ(code_of({bytes.begin(), bytes.begin() + 40}), ErrorCode::kTruncated);
  EXPECT_EQ(code_of({bytes.begin(), bytes.end() - 4}), ErrorCode::kTruncated);
}

TEST(Checkpoint, TrailingBytesRejected) {
  auto bytes = serialize_checkpoint(small_model());
  bytes.push_back(0);
  EXPECT_EQ(code_of(bytes), ErrorCode::kCorruptHeader);
}

TEST(Checkpoint, WrongShapeNamesTheArray) {
  const auto bytes = serialize_checkpoint(small_model());
  auto header = header_of(bytes);
  const std::string name = header["arrays"][2]["name"];
  header["arrays"][2]["shape"] = {3, 3};
  try {
    deserialize_checkpoint(with_header(bytes, header));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
    EXPECT_NE(std::string(e.what()).find(name), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, CorruptHeaders) {
  const auto bytes = serialize_checkpoint(small_model());
  auto header = header_of(bytes);
  header["tied_output_embedding"] = false;
  EXPECT_EQ(code_of(with_header(bytes, header)), ErrorCode::kCorruptHeader);

  header = header_of(bytes);
  header["vocabulary"]["words"].erase(0);
  EXPECT_EQ(code_of(with_header(bytes, header)), ErrorCode::kCorruptHeader);

  auto broken = bytes;
  broken[16] = '!';
  EXPECT_EQ(code_of(broken), ErrorCode::kCorruptHeader);
}

TEST(WriteFileAtomic, ReplacesContents) {
  const auto path = std::filesystem::temp_directory_path() / "uat_atomic_test.txt";
  write_file_atomic(path, "first");
  write_file_atomic(path, "second");
  const auto bytes = read_file_bytes(path);
  EXPECT_EQ(std::string(bytes.begin(), bytes.end()), "second");
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace uat
