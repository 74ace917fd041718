#include "sphereat/spherehead/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sphereat/kv.hpp"

namespace sphereat {

namespace {

template <typename T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::ostream& os, T v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_bytes(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  template <typename T>
  T get(const char* what) {
    T v{};
    read(reinterpret_cast<char*>(&v), sizeof(T), what);
    return to_le(v);
  }

  std::string bytes(const char* what, std::size_t limit = 1u << 24) {
    const auto n = get<std::uint32_t>(what);
    if (n > limit) fail(std::string(what) + " length " + std::to_string(n) + " is implausible");
    std::string s(n, '\0');
    read(s.data(), n, what);
    return s;
  }

  void read(char* dst, std::size_t n, const char* what) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) fail(std::string("truncated while reading ") + what);
    offset_ += n;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("checkpoint: " + msg + " at byte offset " + std::to_string(offset_));
  }

  std::size_t offset() const { return offset_; }

 private:
  std::istream& is_;
  std::size_t offset_ = 0;
};

}  // namespace

void write_archive(std::ostream& os, const TensorArchive& archive) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put_bytes(os, archive.header);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& t : archive.tensors) {
    put_bytes(os, t.name);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.value.rank()));
    for (auto e : t.value.shape()) put<std::uint64_t>(os, e);
    put<std::uint64_t>(os, t.value.size());
    for (double v : t.value.data()) put<double>(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

TensorArchive read_archive(std::istream& is) {
  Reader r(is);
  char magic[8];
  r.read(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw ParseError("checkpoint: bad magic at byte offset 0");
  const auto version = r.get<std::uint32_t>("format version");
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  }
  TensorArchive a;
  a.header = r.bytes("header");
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes("tensor name", 4096);
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) r.fail("tensor rank " + std::to_string(rank) + " out of range");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = r.get<std::uint64_t>("extent");
      if (e == 0) r.fail("zero extent");
      shape.push_back(static_cast<std::size_t>(e));
    }
    const auto n = r.get<std::uint64_t>("element count");
    if (n != diff::shape_size(shape)) r.fail("element count disagrees with shape " + diff::shape_str(shape));
    std::vector<double> data(n);
    r.read(reinterpret_cast<char*>(data.data()), n * sizeof(double), "tensor data");
    if constexpr (std::endian::native == std::endian::big) {
      for (auto& v : data) v = to_le(v);
    }
    t.value = Tensor(std::move(shape), std::move(data));
    a.tensors.push_back(std::move(t));
  }
  return a;
}

void save_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_archive(os, archive);
}

TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open " + path.string());
  return read_archive(is);
}

TensorArchive to_archive(const ModelParams& params, const HeadConfig& head) {
  TensorArchive a;
  std::ostringstream hdr;
  hdr << "content = model\n" << params.arch.to_kv();
  hdr << "head.mode = " << to_string(head.mode) << '\n';
  hdr << "head.scale = " << format_double(head.scale) << '\n';
  hdr << "head.margin = " << format_double(head.margin) << '\n';
  a.header = hdr.str();
  for (const auto& blk : params.blocks) a.tensors.push_back({blk.name, blk.value});
  return a;
}

Checkpoint from_archive(const TensorArchive& archive) {
  Checkpoint c;
  bool is_model = false;
  for (const auto& e : parse_kv(archive.header)) {
    if (e.key == "content") is_model = e.value == "model";
    else if (e.key == "head.mode") c.head.mode = parse_head_mode(e.value);
    else if (e.key == "head.scale") c.head.scale = parse_double(e.value);
    else if (e.key == "head.margin") c.head.margin = parse_double(e.value);
  }
  if (!is_model) throw ParseError("checkpoint: archive does not hold a model");
  c.params.arch = ArchitectureSpec::from_kv(archive.header);
  for (const auto& t : archive.tensors) c.params.blocks.push_back({t.name, t.value});
  const auto expected = init_model(c.params.arch, 0);
  if (expected.blocks.size() != c.params.blocks.size()) throw ParseError("checkpoint: block count disagrees with architecture");
  for (std::size_t i = 0; i < expected.blocks.size(); ++i) {
    if (expected.blocks[i].name != c.params.blocks[i].name ||
        expected.blocks[i].value.shape() != c.params.blocks[i].value.shape()) {
      throw ParseError("checkpoint: block " + c.params.blocks[i].name + " does not match the architecture");
    }
  }
  c.head.validate();
  c.params.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const HeadConfig& head) {
  save_archive(path, to_archive(params, head));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return from_archive(load_archive(path)); }

}  // namespace sphereat
