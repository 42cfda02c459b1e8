#include "rdnet/named_arrays.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rdnet/error.hpp"

namespace rdnet {
namespace {

constexpr char kMagic[4] = {'R', 'D', 'N', '1'};

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(std::string("named-array container truncated while reading ") + what +
                        " at byte " + std::to_string(pos_));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n, "entry name");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void NamedArrays::add(NamedArray entry) {
  if (entry.name.empty() || entry.name.size() > 0xFFFF) {
    throw FormatError("array name length must be in [1, 65535]: '" + entry.name + "'");
  }
  if (entry.extents.size() > 0xFF) throw FormatError("rank above 255 for '" + entry.name + "'");
  std::uint64_t count = 1;
  for (auto e : entry.extents) count *= e;
  if (count != entry.values.size()) {
    throw FormatError("array '" + entry.name + "' has " + std::to_string(entry.values.size()) +
                      " values but extents imply " + std::to_string(count));
  }
  if (find(entry.name)) throw FormatError("duplicate array name '" + entry.name + "'");
  entries_.push_back(std::move(entry));
}

void NamedArrays::add(std::string name, std::vector<std::uint32_t> extents,
                      std::vector<float> values) {
  add(NamedArray{std::move(name), std::move(extents), std::move(values)});
}

void NamedArrays::add_text(std::string name, std::string_view text) {
  std::vector<float> values;
  values.reserve(text.size());
  for (unsigned char c : text) values.push_back(static_cast<float>(c));
  const auto count = static_cast<std::uint32_t>(values.size());
  add(std::move(name), {count}, std::move(values));
}

const NamedArray* NamedArrays::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const NamedArray& NamedArrays::at(std::string_view name) const {
  const auto* e = find(name);
  if (!e) throw FormatError("missing array '" + std::string(name) + "'");
  return *e;
}

std::optional<std::string> NamedArrays::text(std::string_view name) const {
  const auto* e = find(name);
  if (!e) return std::nullopt;
  std::string s;
  s.reserve(e->values.size());
  for (float v : e->values) {
    if (!(v >= 0.0f && v <= 255.0f) || v != static_cast<float>(static_cast<int>(v))) {
      throw FormatError("array '" + std::string(name) + "' is not a text entry");
    }
    s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  }
  return s;
}

std::vector<std::uint8_t> NamedArrays::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u8(out, static_cast<std::uint8_t>(e.extents.size()));
    for (auto x : e.extents) put_u32(out, x);
    for (float v : e.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

NamedArrays NamedArrays::parse(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a named-array container (bad magic)");
  }
  Reader r(bytes);
  for (int i = 0; i < 4; ++i) r.u8("magic");
  const std::uint32_t count = r.u32("entry count");
  NamedArrays out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray e;
    const std::uint16_t len = r.u16("name length");
    e.name = r.str(len);
    const std::uint8_t rank = r.u8("rank");
    std::uint64_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      e.extents.push_back(r.u32("extent"));
      n *= e.extents.back();
    }
    r.need(n * 4, "payload");
    e.values.resize(n);
    for (auto& v : e.values) v = std::bit_cast<float>(r.u32("payload"));
    out.add(std::move(e));
  }
  if (!r.done()) {
    throw FormatError("trailing bytes after entry " + std::to_string(count) + " at byte " +
                      std::to_string(r.pos()));
  }
  return out;
}

void NamedArrays::write(const std::filesystem::path& path) const {
  write_file_bytes(path, serialize());
}

NamedArrays NamedArrays::read(const std::filesystem::path& path) {
  return parse(read_file_bytes(path));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace rdnet
