#include "progdet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace progdet {

namespace {

constexpr char kMagic[8] = {'P', 'G', 'D', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
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
  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParamMap& params) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, m] : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) put<double>(out, m.data()[i]);
  }
  return out;
}

ParamMap decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw CheckpointError("not a checkpoint file");
  if (in.get<std::uint32_t>() != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version");
  const auto count = in.get<std::uint32_t>();
  ParamMap out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = in.get<std::uint32_t>();
    std::string name = in.get_string(len);
    const auto rows = static_cast<Eigen::Index>(in.get<std::uint64_t>());
    const auto cols = static_cast<Eigen::Index>(in.get<std::uint64_t>());
    Tensor2 m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = in.get<double>();
    if (!out.emplace(std::move(name), std::move(m)).second)
      throw CheckpointError("duplicate parameter name in checkpoint");
  }
  if (!in.done()) throw CheckpointError("trailing bytes after checkpoint");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const Param* const> params) {
  ParamMap map;
  for (const Param* p : params) map[p->name] = p->value;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  const std::string bytes = encode_checkpoint(map);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ParamMap load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

void restore_params(const ParamMap& stored, std::span<Param* const> params) {
  for (Param* p : params) {
    auto it = stored.find(p->name);
    if (it == stored.end()) throw CheckpointError("checkpoint lacks parameter " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw CheckpointError("shape mismatch for parameter " + p->name);
    p->value = it->second;
    p->zero_grad();
  }
}

}  // namespace progdet
