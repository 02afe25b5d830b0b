#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "ctlm/error.hpp"
#include "ctlm/model.hpp"

namespace ctlm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'T', 'L', 'M'};
constexpr std::uint32_t kMaxNameLength = 1024;
constexpr std::uint32_t kMaxConfigLength = 1 << 20;

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t read_u32(std::istream& in, const char* what) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  return v;
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_u32(out, kCheckpointVersion);
  const std::string config = state.config().to_json().dump();
  write_u32(out, static_cast<std::uint32_t>(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  for (const auto& s : state.slots()) {
    write_u32(out, static_cast<std::uint32_t>(s.name.size()));
    out.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
    if (s.rows == 1) {
      write_u32(out, 1);
      write_u32(out, static_cast<std::uint32_t>(s.cols));
    } else {
      write_u32(out, 2);
      write_u32(out, static_cast<std::uint32_t>(s.rows));
      write_u32(out, static_cast<std::uint32_t>(s.cols));
    }
    out.write(reinterpret_cast<const char*>(state.parameters().data() + s.offset),
              static_cast<std::streamsize>(s.size() * sizeof(float)));
  }
  if (!out) throw InputError("failed writing checkpoint " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  char magic[4] = {};
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw FormatError("not a CTLM checkpoint: " + path.string());
  }
  const auto version = read_u32(in, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto config_len = read_u32(in, "config length");
  if (config_len == 0 || config_len > kMaxConfigLength) throw FormatError("implausible config length");
  std::string config_text(config_len, '\0');
  if (!in.read(config_text.data(), config_len)) throw FormatError("checkpoint truncated in config");

  ModelConfig config;
  try {
    config = ModelConfig::from_json(nlohmann::json::parse(config_text));
    config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model config in checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad model config in checkpoint: ") + e.what());
  }

  ModelState state(config, ModelState::Init::kZero);
  std::set<std::string> seen;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto name_len = read_u32(in, "tensor name length");
    if (name_len == 0 || name_len > kMaxNameLength) throw FormatError("implausible tensor name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw FormatError("checkpoint truncated in tensor name");
    const auto rank = read_u32(in, "tensor rank");
    if (rank < 1 || rank > 2) throw FormatError("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    std::uint32_t rows = 1;
    std::uint32_t cols = read_u32(in, "tensor dims");
    if (rank == 2) {
      rows = cols;
      cols = read_u32(in, "tensor dims");
    }
    const TensorSlot* slot = nullptr;
    for (const auto& s : state.slots()) {
      if (s.name == name) slot = &s;
    }
    if (!slot) throw FormatError("unexpected tensor '" + name + "' in checkpoint");
    if (static_cast<int>(rows) != slot->rows || static_cast<int>(cols) != slot->cols) {
      throw FormatError("tensor '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                        ", expected " + std::to_string(slot->rows) + "x" + std::to_string(slot->cols));
    }
    if (!seen.insert(name).second) throw FormatError("duplicate tensor '" + name + "'");
    if (!in.read(reinterpret_cast<char*>(state.parameters().data() + slot->offset),
                 static_cast<std::streamsize>(slot->size() * sizeof(float)))) {
      throw FormatError("checkpoint truncated in tensor '" + name + "'");
    }
  }
  if (seen.size() != state.slots().size()) {
    for (const auto& s : state.slots()) {
      if (!seen.count(s.name)) throw FormatError("checkpoint is missing tensor '" + s.name + "'");
    }
  }
  return state;
}

ModelState load_checkpoint(const std::filesystem::path& path, int expected_vocab_size) {
  ModelState state = load_checkpoint(path);
  if (state.config().vocab_size != expected_vocab_size) {
    throw FormatError("checkpoint vocabulary size " + std::to_string(state.config().vocab_size) +
                      " does not match expected " + std::to_string(expected_vocab_size));
  }
  return state;
}

}  // namespace ctlm
