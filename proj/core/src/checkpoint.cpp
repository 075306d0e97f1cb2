#include "uat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "uat/error.hpp"

namespace uat {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename U>
U get_le(const std::vector<std::uint8_t>& in, std::size_t at) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in[at + i]) << (8 * i);
  return v;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const MlmModel& model) {
  const auto& params = model.lm.parameters();
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel() * sizeof(float);
  }
  std::vector<std::string> words(model.vocab.tokens().begin() + kNumSpecial, model.vocab.tokens().end());
  nlohmann::json header = {
      {"architecture", model.config().to_json()},
      {"layernorm_epsilon", model.config().layernorm_epsilon},
      {"tied_output_embedding", true},
      {"vocabulary", {{"special", {kMaskToken, kPadToken, kUnkToken, kClsToken}}, {"words", words}}},
      {"metadata", model.metadata},
      {"arrays", manifest},
  };
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(16 + text.size() + offset);
  out.insert(out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, t] : params) {
    auto d = t.data();
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(d.data());
    out.insert(out.end(), bytes, bytes + d.size() * sizeof(float));
  }
  return out;
}

MlmModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw Error(ErrorCode::kBadMagic, "checkpoint: bad magic");
  }
  if (bytes.size() < 16) throw Error(ErrorCode::kTruncated, "checkpoint: truncated preamble");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kVersionMismatch, "checkpoint: unsupported version " + std::to_string(version) +
                                                 " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - 16) throw Error(ErrorCode::kTruncated, "checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptHeader, std::string("checkpoint: header is not valid JSON: ") + e.what());
  }

  try {
    MlmConfig config = MlmConfig::from_json(header.at("architecture"));
    if (!header.at("tied_output_embedding").get<bool>()) {
      throw Error(ErrorCode::kCorruptHeader, "checkpoint: untied output projection is not supported");
    }
    auto words = header.at("vocabulary").at("words").get<std::vector<std::string>>();
    Vocabulary vocab(std::move(words));
    if (vocab.size() != config.vocab_size) {
      throw Error(ErrorCode::kCorruptHeader, "checkpoint: vocabulary size disagrees with architecture");
    }
    MlmModel model(std::move(vocab), config);
    model.metadata = header.at("metadata");

    const auto& manifest = header.at("arrays");
    auto& params = model.lm.parameters();
    if (manifest.size() != params.size()) {
      throw Error(ErrorCode::kShapeMismatch, "checkpoint: manifest lists " + std::to_string(manifest.size()) +
                                                 " arrays, architecture needs " + std::to_string(params.size()));
    }
    const std::size_t blob_start = 16 + header_len;
    std::uint64_t expected_offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& entry = manifest[i];
      const auto name = entry.at("name").get<std::string>();
      auto& [pname, tensor] = params[i];
      if (name != pname) {
        throw Error(ErrorCode::kShapeMismatch, "checkpoint: array " + std::to_string(i) + " is '" + name +
                                                   "', expected '" + pname + "'");
      }
      const auto shape = entry.at("shape").get<Shape>();
      if (shape != tensor.shape()) {
        throw Error(ErrorCode::kShapeMismatch, "checkpoint: shape mismatch for array '" + name + "': header " +
                                                   shape_str(shape) + ", architecture " +
                                                   shape_str(tensor.shape()));
      }
      const auto offset = entry.at("offset").get<std::uint64_t>();
      if (offset != expected_offset) {
        throw Error(ErrorCode::kCorruptHeader, "checkpoint: array '" + name + "' has offset " +
                                                   std::to_string(offset) + ", expected " +
                                                   std::to_string(expected_offset));
      }
      const std::size_t nbytes = tensor.numel() * sizeof(float);
      if (blob_start + offset + nbytes > bytes.size()) {
        throw Error(ErrorCode::kTruncated, "checkpoint: truncated blob in array '" + name + "'");
      }
      std::memcpy(tensor.mutable_data().data(), bytes.data() + blob_start + offset, nbytes);
      expected_offset += nbytes;
    }
    if (blob_start + expected_offset != bytes.size()) {
      throw Error(ErrorCode::kCorruptHeader, "checkpoint: " + std::to_string(bytes.size() - blob_start - expected_offset) +
                                                 " trailing bytes after blob");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptHeader, std::string("checkpoint: malformed header: ") + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!os) {
      os.close();
      std::filesystem::remove(tmp);
      throw Error(ErrorCode::kIo, "short write to " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error(ErrorCode::kIo, "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void save_checkpoint(const MlmModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

MlmModel load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

}  // namespace uat
