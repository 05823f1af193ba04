#include "rmn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace rmn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'R', 'M', 'S', 'K'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <typename V>
  void put(V v) {
    put_bytes(&v, sizeof(V));
  }
  void put_bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : buf_(std::move(bytes)) {}

  template <typename V>
  V get(const char* what) {
    V v;
    need(sizeof(V), what);
    std::memcpy(&v, buf_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  const char* take(std::size_t n, const char* what) {
    need(n, what);
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) {
      throw CheckpointTruncatedError("checkpoint truncated while reading " + std::string(what) +
                                     " at byte " + std::to_string(pos_));
    }
  }

  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<char> bytes(static_cast<std::size_t>(in.tellg()));
  in.seekg(0);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw IoError("cannot read checkpoint '" + path.string() + "'");
  return bytes;
}

struct RawEntry {
  CheckpointEntry meta;
  const char* data = nullptr;
};

struct Parsed {
  std::uint16_t version = 0;
  std::vector<RawEntry> entries;
};

// The reader must outlive the returned pointers.
Parsed parse(Reader& r) {
  Parsed out;
  const char* magic = r.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointFormatError("not a checkpoint file (bad magic)");
  out.version = r.get<std::uint16_t>("version");
  if (out.version != kCheckpointVersion) {
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(out.version) +
                                 " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = r.get<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    RawEntry e;
    const auto len = r.get<std::uint16_t>("name length");
    e.meta.name.assign(r.take(len, "name"), len);
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype > 1) throw CheckpointFormatError("entry '" + e.meta.name + "': unknown dtype " + std::to_string(dtype));
    e.meta.is_double = dtype == 1;
    const auto rank = r.get<std::uint8_t>("rank");
    if (rank < 1 || rank > 4) throw CheckpointFormatError("entry '" + e.meta.name + "': bad rank");
    for (int d = 0; d < rank; ++d) e.meta.shape.push_back(r.get<std::uint32_t>("extent"));
    const std::size_t bytes = static_cast<std::size_t>(shape_numel(e.meta.shape)) *
                              (e.meta.is_double ? sizeof(double) : sizeof(float));
    e.data = r.take(bytes, "values");
    out.entries.push_back(std::move(e));
  }
  if (!r.done()) throw CheckpointFormatError("trailing bytes after the last entry");
  return out;
}

template <Scalar T>
void copy_values(const RawEntry& e, std::span<T> dst) {
  if (e.meta.is_double) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      double v;
      std::memcpy(&v, e.data + i * sizeof(double), sizeof(double));
      dst[i] = static_cast<T>(v);
    }
  } else {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      float v;
      std::memcpy(&v, e.data + i * sizeof(float), sizeof(float));
      dst[i] = static_cast<T>(v);
    }
  }
}

template <Scalar T>
void load_entries(Network<T>& net, const Parsed& parsed) {
  std::map<std::string, NamedTensor<T>> slots;
  for (auto& e : net.state()) slots.emplace(e.name, e);
  std::map<std::string, bool> filled;
  for (const auto& e : parsed.entries) {
    auto it = slots.find(e.meta.name);
    if (it == slots.end()) {
      throw UnknownParameterError("checkpoint entry '" + e.meta.name +
                                  "' does not exist in the " + net.spec().name + " network");
    }
    if (it->second.tensor.shape() != e.meta.shape) {
      throw CheckpointFormatError("entry '" + e.meta.name + "' has shape " + to_string(e.meta.shape) +
                                  ", network expects " + to_string(it->second.tensor.shape()));
    }
    if (filled[e.meta.name]) throw CheckpointFormatError("duplicate entry '" + e.meta.name + "'");
    filled[e.meta.name] = true;
  }
  for (const auto& [name, slot] : slots) {
    if (!filled[name]) throw CheckpointFormatError("checkpoint is missing '" + name + "'");
  }
  for (const auto& e : parsed.entries) copy_values(e, slots.at(e.meta.name).tensor.mutable_data());
}

std::string match_preset(const std::vector<RawEntry>& entries) {
  const RawEntry* stem = nullptr;
  bool masked = false;
  for (const auto& e : entries) {
    if (e.meta.name == "stem.conv.weight") stem = &e;
    if (e.meta.name.find(".mask.") != std::string::npos) masked = true;
  }
  if (!stem || stem->meta.shape.size() != 4) return {};
  for (const std::string base : {"default", "mini"}) {
    const NetworkSpec spec = NetworkSpec::preset(base);
    if (stem->meta.shape[0] == spec.stem_channels) {
      if (!masked) return base == "default" ? "backbone" : "mini-backbone";
      return base;
    }
  }
  return {};
}

}  // namespace

template <Scalar T>
void save_checkpoint(const Network<T>& net, const std::filesystem::path& path) {
  // Write beside the target and rename so a failed save never leaves a
  // half-written checkpoint under the final name.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + tmp.string() + "'");
    Writer w(out);
    const auto state = net.state();
    w.put_bytes(kMagic, 4);
    w.put<std::uint16_t>(kCheckpointVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(state.size()));
    for (const auto& e : state) {
      w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
      w.put_bytes(e.name.data(), e.name.size());
      w.put<std::uint8_t>(std::is_same_v<T, double> ? 1 : 0);
      w.put<std::uint8_t>(static_cast<std::uint8_t>(e.tensor.rank()));
      for (auto d : e.tensor.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
      const auto data = e.tensor.data();
      w.put_bytes(data.data(), data.size_bytes());
    }
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

template <Scalar T>
void load_state(Network<T>& net, const std::filesystem::path& path) {
  Reader r(read_file(path));
  load_entries(net, parse(r));
}

template <Scalar T>
Network<T> load_checkpoint(const std::filesystem::path& path) {
  Reader r(read_file(path));
  const Parsed parsed = parse(r);
  const std::string arch = match_preset(parsed.entries);
  if (arch.empty()) {
    throw CheckpointFormatError("'" + path.string() + "' does not match any known architecture");
  }
  Network<T> net(NetworkSpec::preset(arch));
  load_entries(net, parsed);
  return net;
}

CheckpointInfo inspect_checkpoint(const std::filesystem::path& path) {
  Reader r(read_file(path));
  const Parsed parsed = parse(r);
  CheckpointInfo info;
  info.version = parsed.version;
  for (const auto& e : parsed.entries) info.entries.push_back(e.meta);
  info.architecture = match_preset(parsed.entries);
  return info;
}

template void save_checkpoint(const Network<float>&, const std::filesystem::path&);
template void save_checkpoint(const Network<double>&, const std::filesystem::path&);
template void load_state(Network<float>&, const std::filesystem::path&);
template void load_state(Network<double>&, const std::filesystem::path&);
template Network<float> load_checkpoint(const std::filesystem::path&);
template Network<double> load_checkpoint(const std::filesystem::path&);

}  // namespace rmn
