#pragma once

// Checkpoint container shared by the language model and the critic.
//
// Layout (little-endian):
//   "NANOCKPT"            8-byte magic
//   u32 version           currently 1
//   u32 header_len
//   header                UTF-8 JSON: kind, config, vocab, tensor table, extra
//   f64[...]              tensor payloads in header order, row-major

#include "nano/lm.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace nano {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;  // "lm" or "critic"
  LMConfig config;
  Vocab vocab;
  bool embedding_frozen = false;
  nlohmann::json extra = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix& tensor(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string content_hash(std::span<const std::uint8_t> bytes);

Checkpoint lm_checkpoint(const LMParams& lm, const Vocab& vocab);
LMParams lm_from_checkpoint(const Checkpoint& ckpt);

void save_lm(const std::filesystem::path& path, const LMParams& lm, const Vocab& vocab);
struct LoadedLM {
  LMParams lm;
  Vocab vocab;
};
LoadedLM load_lm(const std::filesystem::path& path);

// Hash of the encoded LM checkpoint; equal hashes mean bitwise-equal weights.
std::string lm_hash(const LMParams& lm, const Vocab& vocab);

nlohmann::json to_json(const LMConfig& c);
LMConfig lm_config_from_json(const nlohmann::json& j);

}  // namespace nano
