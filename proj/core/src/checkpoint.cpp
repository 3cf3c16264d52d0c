#include "unmix/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "unmix/error.hpp"

namespace unmix {

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n)
      throw FormatError("checkpoint truncated reading " + std::string(what) + " at byte offset " +
                        std::to_string(pos_));
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw FormatError("checkpoint has no record '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, value] : checkpoint.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(value.rank()));
    for (auto e : value.shape()) w.u64(static_cast<std::uint64_t>(e));
    for (float v : value.data()) w.f32(v);
  }
  if (!checkpoint.metadata.empty()) {
    std::string text;
    for (const auto& [k, v] : checkpoint.metadata) text += k + "=" + v + "\n";
    w.bytes("META", 4);
    w.u32(static_cast<std::uint32_t>(text.size()));
    w.bytes(text.data(), text.size());
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.str(4, "magic");
  if (magic != std::string(kCheckpointMagic, 4)) {
    if (magic.compare(0, 3, "UMX") == 0)
      throw FormatVersionError("unsupported checkpoint format version '" + magic.substr(3) +
                               "' (expected '1')");
    throw FormatError("not a UMX checkpoint: bad magic bytes at byte offset 0");
  }
  Checkpoint out;
  const auto count = r.u32("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.str(r.u32("name length"), "name");
    const auto rank = r.u32("rank");
    Shape shape;
    std::uint64_t total = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const auto e = r.u64("extent");
      if (e == 0 || e > (1ULL << 40))
        throw FormatError("record '" + name + "' has invalid extent at byte offset " + std::to_string(r.offset() - 8));
      total *= e;
      shape.push_back(static_cast<std::int64_t>(e));
    }
    r.need(total * 4, "payload");
    std::vector<float> values(total);
    for (auto& v : values) v = std::bit_cast<float>(r.u32("payload"));
    out.tensors.push_back({name, Tensor::from(std::move(shape), std::move(values))});
  }
  if (!r.done()) {
    if (r.str(4, "trailer tag") != "META")
      throw FormatError("unexpected trailer at byte offset " + std::to_string(r.offset() - 4));
    std::istringstream text(r.str(r.u32("metadata length"), "metadata"));
    std::string line;
    while (std::getline(text, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("malformed metadata line '" + line + "'");
      out.metadata[line.substr(0, eq)] = line.substr(eq + 1);
    }
    if (!r.done()) throw FormatError("trailing bytes at byte offset " + std::to_string(r.offset()));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& text) {
  return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace unmix
