#include "gft/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <zlib.h>

#include "gft/config.hpp"

namespace gft::persist {

static_assert(std::endian::native == std::endian::little, "checkpoint code assumes a little-endian host");
static_assert(sizeof(float) == 4);

const char* to_string(CheckpointErrorKind kind) {
  switch (kind) {
    case CheckpointErrorKind::io: return "i/o error";
    case CheckpointErrorKind::bad_magic: return "bad magic";
    case CheckpointErrorKind::version_mismatch: return "version mismatch";
    case CheckpointErrorKind::truncated: return "truncated";
    case CheckpointErrorKind::checksum_mismatch: return "checksum mismatch";
    case CheckpointErrorKind::malformed: return "malformed";
  }
  return "unknown";
}

namespace {

constexpr std::size_t kHeaderSize = 8 + 4 + 8;  // magic, version, body length
constexpr std::size_t kTrailerSize = 4;         // CRC-32

class Writer {
 public:
  template <class V>
  void put(V v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(V));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class V>
  V get() {
    V v;
    std::memcpy(&v, need(sizeof(V)), sizeof(V));
    return v;
  }
  const std::uint8_t* need(std::size_t n) {
    if (n > bytes_.size() - pos_) throw CheckpointError(CheckpointErrorKind::malformed, "record runs past the body");
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large inputs.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, bytes.data() + pos, static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

void put_floats(Writer& w, const Tensor& t) { w.put_bytes(t.ptr(), t.numel() * sizeof(float)); }

Tensor get_floats(Reader& r, Shape shape) {
  Tensor t(std::move(shape));
  std::memcpy(t.ptr(), r.need(t.numel() * sizeof(float)), t.numel() * sizeof(float));
  return t;
}

}  // namespace

std::vector<std::uint8_t> serialize(const GftModel<float>& model, const std::vector<gala::ImportanceState>& states) {
  Writer body;
  const std::string config = to_json(model.config).dump();
  body.put(static_cast<std::uint32_t>(config.size()));
  body.put_bytes(config.data(), config.size());

  body.put(static_cast<std::uint32_t>(model.params.size()));
  for (const auto& p : model.params) {
    if (p.name.size() > 0xffff) throw std::invalid_argument("serialize: parameter name too long");
    body.put(static_cast<std::uint16_t>(p.name.size()));
    body.put_bytes(p.name.data(), p.name.size());
    body.put(static_cast<std::uint8_t>(p.value.rank()));
    for (std::size_t d : p.value.shape().dims()) body.put(static_cast<std::uint32_t>(d));
    body.put(static_cast<std::uint8_t>(p.trainable ? 1 : 0));
    put_floats(body, p.value);
  }

  body.put(static_cast<std::uint32_t>(states.size()));
  for (const auto& s : states) {
    body.put(static_cast<std::uint64_t>(s.step_count));
    body.put(static_cast<std::uint32_t>(s.num_patches));
    const bool has_ema = !s.ema.empty();
    body.put(static_cast<std::uint8_t>(has_ema ? 1 : 0));
    if (has_ema) {
      if (s.ema.numel() != s.num_patches || s.seen.size() != s.num_patches)
        throw std::invalid_argument("serialize: importance state arrays do not match num_patches");
      put_floats(body, s.ema);
      body.put_bytes(s.seen.data(), s.seen.size());
    }
  }

  Writer out;
  out.put_bytes(kMagic, sizeof(kMagic));
  out.put(kFormatVersion);
  out.put(static_cast<std::uint64_t>(body.bytes.size()));
  out.bytes.insert(out.bytes.end(), body.bytes.begin(), body.bytes.end());
  out.put(crc32_of(out.bytes));
  return std::move(out.bytes);
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  using K = CheckpointErrorKind;
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    if (bytes.size() < sizeof(kMagic) && std::equal(bytes.begin(), bytes.end(), kMagic))
      throw CheckpointError(K::truncated, "file ends inside the magic number");
    throw CheckpointError(K::bad_magic, "not a checkpoint file");
  }
  if (bytes.size() < kHeaderSize) throw CheckpointError(K::truncated, "file ends inside the header");
  Reader header(bytes.subspan(sizeof(kMagic), kHeaderSize - sizeof(kMagic)));
  const auto version = header.get<std::uint32_t>();
  if (version != kFormatVersion)
    throw CheckpointError(K::version_mismatch,
                          "file has version " + std::to_string(version) + ", expected " + std::to_string(kFormatVersion));
  const auto body_length = header.get<std::uint64_t>();
  if (body_length > bytes.size() || bytes.size() - kHeaderSize < body_length + kTrailerSize)
    throw CheckpointError(K::truncated, "expected " + std::to_string(body_length + kHeaderSize + kTrailerSize) +
                                            " bytes, found " + std::to_string(bytes.size()));
  if (bytes.size() != kHeaderSize + body_length + kTrailerSize)
    throw CheckpointError(K::malformed, "trailing bytes after the checksum");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + kHeaderSize + body_length, sizeof(stored));
  if (crc32_of(bytes.first(kHeaderSize + body_length)) != stored)
    throw CheckpointError(K::checksum_mismatch, "CRC-32 does not match the contents");

  Reader r(bytes.subspan(kHeaderSize, body_length));
  GftConfig config;
  try {
    const auto n = r.get<std::uint32_t>();
    const auto* p = reinterpret_cast<const char*>(r.need(n));
    config = gft_config_from_json(nlohmann::json::parse(p, p + n));
    config.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(K::malformed, std::string("config: ") + e.what());
  }

  Checkpoint ck{make_model(config, 0), make_states(config)};
  const auto count = r.get<std::uint32_t>();
  if (count != ck.model.params.size())
    throw CheckpointError(K::malformed, "expected " + std::to_string(ck.model.params.size()) + " tensors, found " +
                                            std::to_string(count));
  std::set<std::string> loaded;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>();
    const auto* np = reinterpret_cast<const char*>(r.need(name_len));
    const std::string name(np, name_len);
    const auto rank = r.get<std::uint8_t>();
    if (rank == 0) throw CheckpointError(K::malformed, "tensor " + name + " has rank 0");
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = r.get<std::uint32_t>();
    const bool trainable = r.get<std::uint8_t>() != 0;
    std::size_t slot;
    try {
      slot = ck.model.params.index_of(name);
    } catch (const std::out_of_range&) {
      throw CheckpointError(K::malformed, "unexpected tensor " + name);
    }
    if (!loaded.insert(name).second) throw CheckpointError(K::malformed, "duplicate tensor " + name);
    auto& param = ck.model.params[slot];
    if (dims != param.value.shape().dims())
      throw CheckpointError(K::malformed, "tensor " + name + " has shape " + Shape(dims).str() + ", expected " +
                                              param.value.shape().str());
    param.value = get_floats(r, Shape(dims));
    param.trainable = trainable;
  }

  const auto state_count = r.get<std::uint32_t>();
  if (state_count != ck.states.size())
    throw CheckpointError(K::malformed, "expected " + std::to_string(ck.states.size()) + " importance states");
  for (auto& s : ck.states) {
    s.step_count = r.get<std::uint64_t>();
    const auto n = r.get<std::uint32_t>();
    if (n != s.num_patches) throw CheckpointError(K::malformed, "importance state has the wrong patch count");
    if (r.get<std::uint8_t>() != 0) {
      s.ema = get_floats(r, Shape{n});
      const auto* seen = r.need(n);
      s.seen.assign(seen, seen + n);
    }
  }
  if (!r.done()) throw CheckpointError(K::malformed, "unread bytes at the end of the body");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const GftModel<float>& model,
                     const std::vector<gala::ImportanceState>& states) {
  const auto bytes = serialize(model, states);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointErrorKind::io, "cannot open " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointErrorKind::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(CheckpointErrorKind::io, "cannot rename to " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::io, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace gft::persist
