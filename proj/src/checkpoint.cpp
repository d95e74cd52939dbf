#include "hfmf/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <map>
#include <sstream>

#include "hfmf/errors.hpp"

namespace hfmf {
namespace {

constexpr char kMagic[5] = {'H', 'F', 'M', 'F', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_string(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& origin) : b_(bytes), origin_(origin) {}

  const char* take(std::size_t n) {
    if (n > b_.size() - pos_) throw FormatError(origin_ + ": truncated checkpoint");
    const char* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t u64() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(8));
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  std::uint32_t u32() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4));
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > b_.size()) throw FormatError(origin_ + ": corrupt string length");
    const char* p = take(static_cast<std::size_t>(n));
    return std::string(p, static_cast<std::size_t>(n));
  }
  bool done() const { return pos_ == b_.size(); }
  const std::string& origin() const { return origin_; }

 private:
  const std::string& b_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(const ParamList& params, std::string config_json,
                           std::string metrics_json) {
  Checkpoint c;
  c.config_json = std::move(config_json);
  c.metrics_json = std::move(metrics_json);
  for (const auto& p : params) c.tensors.push_back({p.name, p.tensor.detach()});
  return c;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, ckpt.version);
  put_string(out, ckpt.config_json);
  put_string(out, ckpt.metrics_json);
  put_u64(out, ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    put_string(out, t.name);
    put_u32(out, static_cast<std::uint32_t>(t.tensor.rank()));
    for (std::size_t d : t.tensor.shape()) put_u64(out, d);
    for (double v : t.tensor.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (bytes.size() < sizeof kMagic || bytes.compare(0, sizeof kMagic, kMagic, sizeof kMagic) != 0)
    throw FormatError(origin + ": not an HFMF1 checkpoint (bad magic)");
  r.take(sizeof kMagic);
  Checkpoint c;
  c.version = r.u32();
  if (c.version != kCheckpointVersion)
    throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(c.version));
  c.config_json = r.str();
  c.metrics_json = r.str();
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError(origin + ": tensor '" + t.name + "' has rank " +
                                    std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
    const std::size_t count = shape_numel(shape);
    if (count > bytes.size() / 8) throw FormatError(origin + ": corrupt tensor '" + t.name + "'");
    std::vector<double> values(count);
    for (double& v : values) v = std::bit_cast<double>(r.u64());
    t.tensor = Tensor(shape, std::move(values));
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError(origin + ": trailing bytes after tensor table");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), path.string());
}

void load_parameters(const Checkpoint& ckpt, const ParamList& params) {
  std::map<std::string, const Tensor*> stored;
  for (const auto& t : ckpt.tensors) stored[t.name] = &t.tensor;
  if (stored.size() != params.size())
    throw FormatError("checkpoint holds " + std::to_string(stored.size()) +
                      " tensors, model expects " + std::to_string(params.size()));
  for (const auto& p : params) {
    const auto it = stored.find(p.name);
    if (it == stored.end()) throw FormatError("checkpoint lacks tensor '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape())
      throw FormatError("tensor '" + p.name + "' has shape " + shape_str(it->second->shape()) +
                        ", model expects " + shape_str(p.tensor.shape()));
  }
  for (const auto& p : params) {
    const auto src = stored.at(p.name)->data();
    auto dst = Tensor(p.tensor).mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace hfmf
