#include "duet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace duet {

namespace {

constexpr char kMagic[8] = {'D', 'U', 'E', 'T', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  void expect_magic() {
    need(sizeof(kMagic));
    if (std::memcmp(bytes_.data(), kMagic, sizeof(kMagic)) != 0) throw std::runtime_error("not a checkpoint file (bad magic)");
    pos_ += sizeof(kMagic);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("truncated checkpoint");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw std::out_of_range("checkpoint has no metadata key '" + key + "'");
  return it->second;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (shape_numel(t.shape) != t.data.size()) throw std::invalid_argument("checkpoint tensor '" + t.name + "' has inconsistent shape");
    w.str(t.name);
    w.str(t.tag);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.u64(d);
    for (double v : t.data) w.f64(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.expect_magic();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  const std::uint32_t nmeta = r.u32();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    ckpt.metadata[k] = r.str();
  }
  const std::uint32_t ntensors = r.u32();
  ckpt.tensors.reserve(ntensors);
  for (std::uint32_t i = 0; i < ntensors; ++i) {
    CheckpointTensor t;
    t.name = r.str();
    t.tag = r.str();
    const std::uint32_t rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(static_cast<std::size_t>(r.u64()));
    t.data.resize(shape_numel(t.shape));
    for (double& v : t.data) v = r.f64();
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw std::runtime_error("trailing bytes after checkpoint payload");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
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

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void store_params(Checkpoint& ckpt, const ParamTree& params) {
  for (const auto& [name, e] : params.entries()) {
    const auto d = e.value.data();
    ckpt.tensors.push_back({"param/" + name, std::string(to_string(e.branch)), e.value.shape(), {d.begin(), d.end()}});
  }
}

ParamTree load_params(const Checkpoint& ckpt) {
  ParamTree params;
  for (const auto& t : ckpt.tensors) {
    if (t.name.rfind("param/", 0) != 0) continue;
    params.add(t.name.substr(6), Tensor(t.shape, t.data), parse_branch(t.tag));
  }
  return params;
}

void store_optimizer(Checkpoint& ckpt, const AdamW& opt) {
  ckpt.metadata["optimizer.step"] = std::to_string(opt.step_count());
  for (const auto& [name, mom] : opt.moments()) {
    ckpt.tensors.push_back({"adam.m/" + name, "optimizer", {mom.m.size()}, mom.m});
    ckpt.tensors.push_back({"adam.v/" + name, "optimizer", {mom.v.size()}, mom.v});
  }
}

AdamW load_optimizer(const Checkpoint& ckpt, AdamWConfig config) {
  AdamW opt(config);
  std::map<std::string, Moments> moments;
  for (const auto& t : ckpt.tensors) {
    if (t.name.rfind("adam.m/", 0) == 0) moments[t.name.substr(7)].m = t.data;
    if (t.name.rfind("adam.v/", 0) == 0) moments[t.name.substr(7)].v = t.data;
  }
  auto it = ckpt.metadata.find("optimizer.step");
  opt.restore(it == ckpt.metadata.end() ? 0 : std::stoull(it->second), std::move(moments));
  return opt;
}

void store_assets(Checkpoint& ckpt, const std::string& group, const std::map<std::string, Tensor>& assets) {
  for (const auto& [name, t] : assets) {
    const auto d = t.data();
    ckpt.tensors.push_back({"asset/" + group + "/" + name, "asset", t.shape(), {d.begin(), d.end()}});
  }
}

std::map<std::string, Tensor> load_assets(const Checkpoint& ckpt, const std::string& group) {
  std::map<std::string, Tensor> out;
  const std::string prefix = "asset/" + group + "/";
  for (const auto& t : ckpt.tensors)
    if (t.name.rfind(prefix, 0) == 0) out.emplace(t.name.substr(prefix.size()), Tensor(t.shape, t.data));
  return out;
}

}  // namespace duet
