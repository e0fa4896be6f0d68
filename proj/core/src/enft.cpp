#include "enf/enft.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "enf/error.hpp"

namespace enf {
namespace {

constexpr char kMagic[4] = {'E', 'N', 'F', 'T'};
constexpr std::uint8_t kBlobDtype = 2;

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return value;
  }

  std::string get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("ENFT: truncated while reading ") + what + " at byte " +
                        std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void TensorArchive::put(std::string name, Tensor tensor) {
  for (auto& e : entries_) {
    if (e.name == name) {
      e.payload = std::move(tensor);
      return;
    }
  }
  entries_.push_back({std::move(name), std::move(tensor)});
}

void TensorArchive::put_blob(std::string name, std::string bytes) {
  for (auto& e : entries_) {
    if (e.name == name) {
      e.payload = std::move(bytes);
      return;
    }
  }
  entries_.push_back({std::move(name), std::move(bytes)});
}

const TensorArchive::Entry* TensorArchive::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

bool TensorArchive::contains(const std::string& name) const { return find(name) != nullptr; }

const Tensor& TensorArchive::tensor(const std::string& name) const {
  const Entry* e = find(name);
  if (!e) throw FormatError("ENFT: missing tensor '" + name + "'");
  if (const auto* t = std::get_if<Tensor>(&e->payload)) return *t;
  throw FormatError("ENFT: entry '" + name + "' is a blob, not a tensor");
}

const std::string& TensorArchive::blob(const std::string& name) const {
  const Entry* e = find(name);
  if (!e) throw FormatError("ENFT: missing blob '" + name + "'");
  if (const auto* s = std::get_if<std::string>(&e->payload)) return *s;
  throw FormatError("ENFT: entry '" + name + "' is a tensor, not a blob");
}

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    if (const auto* blob = std::get_if<std::string>(&e.payload)) {
      out.push_back(kBlobDtype);
      put_le<std::uint32_t>(out, 1);
      put_le<std::uint64_t>(out, blob->size());
      out.insert(out.end(), blob->begin(), blob->end());
      continue;
    }
    const Tensor& t = std::get<Tensor>(e.payload);
    out.push_back(static_cast<std::uint8_t>(t.dtype()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.data()) {
      if (t.dtype() == DType::F32) {
        std::uint32_t bits;
        const float f = static_cast<float>(v);
        std::memcpy(&bits, &f, sizeof bits);
        put_le(out, bits);
      } else {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        put_le(out, bits);
      }
    }
  }
  return out;
}

TensorArchive TensorArchive::deserialize(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (in.get_bytes(4, "magic") != std::string(kMagic, 4)) throw FormatError("ENFT: bad magic bytes");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kVersion) {
    throw FormatError("ENFT: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kVersion) + ")");
  }
  const auto count = in.get<std::uint32_t>("tensor count");
  TensorArchive archive;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = in.get<std::uint32_t>("name length");
    std::string name = in.get_bytes(name_len, "name");
    const auto dtype = in.get<std::uint8_t>("dtype");
    if (dtype > kBlobDtype) {
      throw FormatError("ENFT: unknown dtype byte " + std::to_string(dtype) + " for '" + name + "'");
    }
    const auto rank = in.get<std::uint32_t>("rank");
    if (rank > 8) throw FormatError("ENFT: implausible rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto d = in.get<std::uint64_t>("dims");
      if (d == 0 || d > (std::uint64_t{1} << 40)) throw FormatError("ENFT: bad extent in '" + name + "'");
      shape.push_back(static_cast<std::size_t>(d));
      numel *= d;
    }
    if (dtype == kBlobDtype) {
      if (rank != 1) throw FormatError("ENFT: blob '" + name + "' must have rank 1");
      archive.put_blob(std::move(name), in.get_bytes(static_cast<std::size_t>(numel), "blob payload"));
      continue;
    }
    std::vector<double> data(static_cast<std::size_t>(numel));
    const auto dt = static_cast<DType>(dtype);
    for (auto& v : data) {
      if (dt == DType::F32) {
        const auto bits = in.get<std::uint32_t>("payload");
        float f;
        std::memcpy(&f, &bits, sizeof f);
        v = f;
      } else {
        const auto bits = in.get<std::uint64_t>("payload");
        std::memcpy(&v, &bits, sizeof v);
      }
    }
    archive.put(std::move(name), Tensor(std::move(shape), std::move(data), dt));
  }
  if (!in.at_end()) throw FormatError("ENFT: trailing bytes after last entry");
  return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write to '" + path.string() + "' failed");
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace enf
