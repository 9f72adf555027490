#include "plforge/adapter.hpp"

#include <cstring>
#include <fstream>

#include "plforge/bundle.hpp"  // fnv1a64

namespace plforge {
namespace {

constexpr char kMagic[4] = {'A', 'D', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void append_f64(std::string &out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(bits >> (8 * i)));
}

double take_f64(const unsigned char *&p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(p[i]) << (8 * i);
  p += 8;
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

VecD AdapterModel::pack_params() const {
  VecD flat(W.size() + b.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < W.rows(); ++r)
    for (Eigen::Index c = 0; c < W.cols(); ++c) flat(k++) = W(r, c);
  for (Eigen::Index i = 0; i < b.size(); ++i) flat(k++) = b(i);
  return flat;
}

void AdapterModel::unpack_params(const VecD &flat) {
  if (flat.size() != W.size() + b.size())
    throw ConfigError("parameter vector size mismatch");
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < W.rows(); ++r)
    for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = flat(k++);
  for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = flat(k++);
}

void save_model(const AdapterModel &model, const std::filesystem::path &path) {
  std::string payload;
  payload.reserve(8 * static_cast<std::size_t>(model.W.size() +
                                               model.b.size() +
                                               model.F.size()));
  for (Eigen::Index r = 0; r < model.W.rows(); ++r)
    for (Eigen::Index c = 0; c < model.W.cols(); ++c)
      append_f64(payload, model.W(r, c));
  for (Eigen::Index i = 0; i < model.b.size(); ++i)
    append_f64(payload, model.b(i));
  for (Eigen::Index r = 0; r < model.F.rows(); ++r)
    for (Eigen::Index c = 0; c < model.F.cols(); ++c)
      append_f64(payload, model.F(r, c));
  const std::uint64_t checksum = fnv1a64(payload.data(), payload.size());

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(kMagic, 4);
  auto put_u32 = [&os](std::uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char *>(buf), 4);
  };
  put_u32(kVersion);
  put_u32(static_cast<std::uint32_t>(model.d_out()));
  put_u32(static_cast<std::uint32_t>(model.d_in()));
  put_u32(static_cast<std::uint32_t>(model.n_classes()));
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  unsigned char cbuf[8];
  for (int i = 0; i < 8; ++i)
    cbuf[i] = static_cast<unsigned char>(checksum >> (8 * i));
  os.write(reinterpret_cast<const char *>(cbuf), 8);
  if (!os) throw IoError("write failure: " + path.string());
}

AdapterModel load_model(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("bad magic in " + path.string());
  auto get_u32 = [&is, &path]() {
    unsigned char buf[4];
    is.read(reinterpret_cast<char *>(buf), 4);
    if (!is) throw IoError("truncated checkpoint: " + path.string());
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf[i]) << (8 * i);
    return v;
  };
  const std::uint32_t version = get_u32();
  if (version != kVersion)
    throw IoError("checkpoint version mismatch: got " + std::to_string(version));
  const std::uint32_t d_out = get_u32();
  const std::uint32_t d_in = get_u32();
  const std::uint32_t n_classes = get_u32();
  const std::size_t payload_len =
      8ull * (std::size_t(d_out) * d_in + d_out + std::size_t(n_classes) * d_out);
  std::string payload(payload_len, '\0');
  is.read(payload.data(), static_cast<std::streamsize>(payload_len));
  if (static_cast<std::size_t>(is.gcount()) != payload_len)
    throw IoError("truncated checkpoint: " + path.string());
  unsigned char cbuf[8];
  is.read(reinterpret_cast<char *>(cbuf), 8);
  if (!is) throw IoError("truncated checkpoint: " + path.string());
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= std::uint64_t(cbuf[i]) << (8 * i);
  if (stored != fnv1a64(payload.data(), payload.size()))
    throw IoError("checksum mismatch in " + path.string());

  AdapterModel m;
  m.W.resize(d_out, d_in);
  m.b.resize(d_out);
  m.F.resize(n_classes, d_out);
  const auto *p = reinterpret_cast<const unsigned char *>(payload.data());
  for (std::uint32_t r = 0; r < d_out; ++r)
    for (std::uint32_t c = 0; c < d_in; ++c) m.W(r, c) = take_f64(p);
  for (std::uint32_t i = 0; i < d_out; ++i) m.b(i) = take_f64(p);
  for (std::uint32_t r = 0; r < n_classes; ++r)
    for (std::uint32_t c = 0; c < d_out; ++c) m.F(r, c) = take_f64(p);
  return m;
}

}  // namespace plforge
