#include "impash/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace impash {

namespace {

constexpr char kMagic[8] = {'I', 'M', 'P', 'A', 'S', 'H', 'A', 'R'};

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

template <typename T>
void put_raw(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::runtime_error("archive: truncated data");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor& Archive::tensor(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw std::out_of_range("archive: missing entry " + key);
  if (const auto* t = std::get_if<Tensor>(&it->second)) return *t;
  throw std::runtime_error("archive: entry " + key + " is not a tensor");
}

std::int64_t Archive::integer(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw std::out_of_range("archive: missing entry " + key);
  if (const auto* v = std::get_if<std::int64_t>(&it->second)) return *v;
  throw std::runtime_error("archive: entry " + key + " is not an integer");
}

const std::string& Archive::text(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw std::out_of_range("archive: missing entry " + key);
  if (const auto* v = std::get_if<std::string>(&it->second)) return *v;
  throw std::runtime_error("archive: entry " + key + " is not a string");
}

std::string Archive::serialize() const {
  std::string out(kMagic, sizeof kMagic);
  put_raw<std::uint32_t>(out, kArchiveVersion);
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [key, value] : entries_) {
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
    out += key;
    if (const auto* t = std::get_if<Tensor>(&value)) {
      put_raw<std::uint8_t>(out, 1);
      put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(t->rank()));
      for (const auto d : t->shape) put_raw<std::uint64_t>(out, d);
      out.append(reinterpret_cast<const char*>(t->data.data()), t->data.size() * sizeof(double));
    } else if (const auto* i = std::get_if<std::int64_t>(&value)) {
      put_raw<std::uint8_t>(out, 2);
      put_raw<std::int64_t>(out, *i);
    } else {
      const auto& s = std::get<std::string>(value);
      put_raw<std::uint8_t>(out, 3);
      put_raw<std::uint64_t>(out, s.size());
      out += s;
    }
  }
  return out;
}

Archive Archive::deserialize(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw std::runtime_error("archive: bad magic");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kArchiveVersion) {
    throw std::runtime_error("archive: unsupported version " + std::to_string(version));
  }
  const auto count = in.get<std::uint32_t>();
  Archive archive;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::string key = in.get_bytes(in.get<std::uint32_t>());
    const auto kind = in.get<std::uint8_t>();
    if (kind == 1) {
      const auto rank = in.get<std::uint32_t>();
      Tensor t;
      for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>()));
      t.data.resize(Tensor::count(t.shape));
      const std::string raw = in.get_bytes(t.data.size() * sizeof(double));
      std::memcpy(t.data.data(), raw.data(), raw.size());
      archive.put(key, std::move(t));
    } else if (kind == 2) {
      archive.put(key, in.get<std::int64_t>());
    } else if (kind == 3) {
      archive.put(key, in.get_bytes(static_cast<std::size_t>(in.get<std::uint64_t>())));
    } else {
      throw std::runtime_error("archive: unknown entry kind for " + key);
    }
  }
  if (!in.done()) throw std::runtime_error("archive: trailing bytes");
  return archive;
}

void Archive::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open archive: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize(ss.str());
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace impash
