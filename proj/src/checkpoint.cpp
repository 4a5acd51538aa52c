#include "luvit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace luvit {
namespace {

constexpr char kMagic[4] = {'L', 'U', 'V', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  template <typename U>
  U uint(const char* what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  float f32(const char* what) { return std::bit_cast<float>(uint<std::uint32_t>(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) throw LoadError(std::string("checkpoint truncated while reading ") + what);
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const CheckpointTensor& Checkpoint::require(const std::string& name) const {
  if (const auto* t = find(name)) return *t;
  throw LoadError("missing tensor \"" + name + "\"");
}

void Checkpoint::add(std::string name, Shape shape, std::vector<float> data, bool trainable) {
  if (static_cast<Index>(data.size()) != numel(shape)) throw ShapeError("checkpoint tensor " + name + ": data does not match shape");
  if (find(name) != nullptr) throw ContractError("checkpoint already holds a tensor named " + name);
  tensors.push_back(CheckpointTensor{std::move(name), std::move(shape), trainable, std::move(data)});
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.uint<std::uint32_t>(ckpt.version);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    if (t.shape.size() > 255) throw ShapeError("checkpoint tensor " + t.name + ": rank exceeds 255");
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (Index d : t.shape) w.uint<std::uint64_t>(static_cast<std::uint64_t>(d));
    w.uint<std::uint8_t>(t.trainable ? 1 : 0);
    for (float v : t.data) w.f32(v);
  }
  w.uint<std::uint64_t>(ckpt.step);
  w.uint<std::uint64_t>(ckpt.config.size());
  w.bytes(ckpt.config.data(), ckpt.config.size());
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(4, "magic") != std::string(kMagic, 4)) throw LoadError("not a LUVT checkpoint (bad magic)");
  Checkpoint ckpt;
  ckpt.version = r.uint<std::uint32_t>("version");
  if (ckpt.version != kCheckpointVersion) throw LoadError("unsupported checkpoint version " + std::to_string(ckpt.version));
  const auto count = r.uint<std::uint32_t>("tensor count");
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = r.str(r.uint<std::uint32_t>("name length"), "name");
    const auto rank = r.uint<std::uint8_t>("rank");
    for (std::uint8_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<Index>(r.uint<std::uint64_t>("dims")));
    t.trainable = r.uint<std::uint8_t>("trainable flag") != 0;
    const Index n = numel(t.shape);
    t.data.resize(static_cast<std::size_t>(n));
    for (Index j = 0; j < n; ++j) t.data[j] = r.f32("tensor data");
    ckpt.tensors.push_back(std::move(t));
  }
  ckpt.step = r.uint<std::uint64_t>("step");
  ckpt.config = r.str(r.uint<std::uint64_t>("config length"), "config");
  if (!r.done()) throw LoadError("trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw LoadError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw LoadError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace luvit
