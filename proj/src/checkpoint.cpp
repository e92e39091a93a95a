#include "nano/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace nano {

namespace {

constexpr char kMagic[8] = {'N', 'A', 'N', 'O', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

}  // namespace

const Matrix& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return m;
  }
  throw CheckpointError("checkpoint: missing tensor " + name);
}

nlohmann::json to_json(const LMConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"context", c.context}};
}

LMConfig lm_config_from_json(const nlohmann::json& j) {
  LMConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.context = j.at("context").get<int>();
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["kind"] = ckpt.kind;
  header["config"] = to_json(ckpt.config);
  header["vocab"] = ckpt.vocab.tokens();
  header["embedding_frozen"] = ckpt.embedding_frozen;
  header["extra"] = ckpt.extra;
  auto table = nlohmann::json::array();
  for (const auto& [name, m] : ckpt.tensors) table.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  header["tensors"] = table;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, m] : ckpt.tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(m.data());
    out.insert(out.end(), p, p + m.size() * sizeof(double));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw CheckpointError("checkpoint: bad magic");
  const auto version = get_u32(bytes, 8);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto header_len = get_u32(bytes, 12);
  if (16 + static_cast<std::size_t>(header_len) > bytes.size()) throw CheckpointError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad header: ") + e.what());
  }

  Checkpoint ckpt;
  ckpt.kind = header.at("kind").get<std::string>();
  ckpt.config = lm_config_from_json(header.at("config"));
  ckpt.vocab = Vocab(header.at("vocab").get<std::vector<std::string>>());
  ckpt.embedding_frozen = header.at("embedding_frozen").get<bool>();
  ckpt.extra = header.value("extra", nlohmann::json::object());

  std::size_t at = 16 + header_len;
  for (const auto& t : header.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const std::size_t n = static_cast<std::size_t>(rows * cols) * sizeof(double);
    if (at + n > bytes.size()) throw CheckpointError("checkpoint: truncated tensor data");
    Matrix m(rows, cols);
    std::memcpy(m.data(), bytes.data() + at, n);
    at += n;
    ckpt.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  if (at != bytes.size()) throw CheckpointError("checkpoint: trailing bytes");
  return ckpt;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::string content_hash(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
    h >>= 4;
  }
  return out;
}

Checkpoint lm_checkpoint(const LMParams& lm, const Vocab& vocab) {
  Checkpoint c;
  c.kind = "lm";
  c.config = lm.config;
  c.vocab = vocab;
  c.embedding_frozen = lm.embedding_frozen();
  for (const auto& [name, v] : lm.named_tensors()) c.tensors.emplace_back(name, v->value);
  return c;
}

LMParams lm_from_checkpoint(const Checkpoint& ckpt) {
  LMParams lm = LMParams::init(ckpt.config, 0);
  for (auto& [name, v] : lm.named_tensors()) {
    const Matrix& m = ckpt.tensor(name);
    if (m.rows() != v->rows() || m.cols() != v->cols()) throw CheckpointError("checkpoint: shape mismatch for " + name);
    v->value = m;
  }
  if (ckpt.embedding_frozen) lm.freeze_embedding();
  return lm;
}

void save_lm(const std::filesystem::path& path, const LMParams& lm, const Vocab& vocab) {
  write_file_atomic(path, encode_checkpoint(lm_checkpoint(lm, vocab)));
}

LoadedLM load_lm(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  auto ckpt = decode_checkpoint(bytes);
  if (ckpt.kind != "lm") throw CheckpointError("checkpoint: expected an lm checkpoint, got " + ckpt.kind);
  return {lm_from_checkpoint(ckpt), ckpt.vocab};
}

std::string lm_hash(const LMParams& lm, const Vocab& vocab) { return content_hash(encode_checkpoint(lm_checkpoint(lm, vocab))); }

}  // namespace nano
