#include "plforge/bundle.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_set>

namespace plforge {
namespace {

constexpr char kMagic[4] = {'F', 'B', 'U', 'N'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream &os, std::uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char *>(buf), 4);
}

void write_u64(std::ostream &os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char *>(buf), 8);
}

std::uint32_t read_u32(std::istream &is) {
  unsigned char buf[4];
  is.read(reinterpret_cast<char *>(buf), 4);
  if (!is) throw IoError("truncated payload: expected u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream &is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char *>(buf), 8);
  if (!is) throw IoError("truncated payload: expected u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[i]) << (8 * i);
  return v;
}

// Serialized little-endian bytes of the variable-size section
// (features | logits | labels? | ids); the checksum covers exactly this.
std::string payload_bytes(const FeatureBundle &b) {
  std::string out;
  const auto n = static_cast<std::size_t>(b.n());
  const auto d = static_cast<std::size_t>(b.dim());
  const auto c = static_cast<std::size_t>(b.n_classes());
  out.reserve(4 * (n * d + n * c + n) + (b.labels ? 4 * n : 0));
  auto put_f32 = [&out](float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i)
      out.push_back(static_cast<char>(bits >> (8 * i)));
  };
  auto put_u32 = [&out](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
  };
  for (Eigen::Index r = 0; r < b.features.rows(); ++r)
    for (Eigen::Index col = 0; col < b.features.cols(); ++col)
      put_f32(b.features(r, col));
  for (Eigen::Index r = 0; r < b.logits.rows(); ++r)
    for (Eigen::Index col = 0; col < b.logits.cols(); ++col)
      put_f32(b.logits(r, col));
  if (b.labels)
    for (std::int32_t lab : *b.labels)
      put_u32(static_cast<std::uint32_t>(lab));
  for (std::uint32_t id : b.ids) put_u32(id);
  return out;
}

}  // namespace

std::uint64_t fnv1a64(const void *data, std::size_t len, std::uint64_t seed) {
  const auto *p = static_cast<const unsigned char *>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

void FeatureBundle::validate() const {
  if (n() < 1 || dim() < 1 || n_classes() < 2)
    throw ConfigError("bundle requires N >= 1, D >= 1, C >= 2");
  if (logits.rows() != n())
    throw ConfigError("feature/logit row count mismatch");
  if (static_cast<Eigen::Index>(ids.size()) != n())
    throw ConfigError("ids length mismatch");
  if (labels && static_cast<Eigen::Index>(labels->size()) != n())
    throw ConfigError("labels length mismatch");
  for (Eigen::Index r = 0; r < features.rows(); ++r)
    for (Eigen::Index c = 0; c < features.cols(); ++c)
      if (!std::isfinite(features(r, c)))
        throw ConfigError("non-finite value at row " + std::to_string(r) +
                          ", col " + std::to_string(c));
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    for (Eigen::Index c = 0; c < logits.cols(); ++c)
      if (!std::isfinite(logits(r, c)))
        throw ConfigError("non-finite logit at row " + std::to_string(r) +
                          ", col " + std::to_string(c));
  if (labels)
    for (std::size_t i = 0; i < labels->size(); ++i)
      if ((*labels)[i] < 0 || (*labels)[i] >= n_classes())
        throw ConfigError("label out of range at row " + std::to_string(i));
  std::unordered_set<std::uint32_t> seen(ids.begin(), ids.end());
  if (seen.size() != ids.size()) throw ConfigError("duplicate sample ids");
}

void save_bundle(const FeatureBundle &bundle, const std::filesystem::path &path,
                 const std::string &domain_name) {
  bundle.validate();
  const std::string payload = payload_bytes(bundle);
  const std::uint64_t checksum = fnv1a64(payload.data(), payload.size());

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(bundle.n()));
  write_u32(os, static_cast<std::uint32_t>(bundle.dim()));
  write_u32(os, static_cast<std::uint32_t>(bundle.n_classes()));
  os.put(bundle.labels ? 1 : 0);
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  write_u64(os, checksum);
  if (!os) throw IoError("write failure: " + path.string());
  os.close();

  nlohmann::json manifest = {
      {"n_samples", bundle.n()},
      {"feature_dim", bundle.dim()},
      {"n_classes", bundle.n_classes()},
      {"domain_name", domain_name},
      {"has_labels", bundle.labels.has_value()},
      {"checksum", checksum},
  };
  auto mpath = path;
  mpath += ".manifest.json";
  std::ofstream ms(mpath);
  if (!ms) throw IoError("cannot open for writing: " + mpath.string());
  ms << manifest.dump(2) << "\n";
}

FeatureBundle load_bundle(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("bad magic in " + path.string());
  const std::uint32_t version = read_u32(is);
  if (version != kVersion)
    throw IoError("version mismatch: got " + std::to_string(version));
  const std::uint32_t n = read_u32(is);
  const std::uint32_t d = read_u32(is);
  const std::uint32_t c = read_u32(is);
  const int has_labels = is.get();
  if (has_labels != 0 && has_labels != 1)
    throw IoError("truncated payload: missing label flag");

  const std::size_t payload_len =
      4ull * (std::size_t(n) * d + std::size_t(n) * c + n) +
      (has_labels ? 4ull * n : 0ull);
  std::string payload(payload_len, '\0');
  is.read(payload.data(), static_cast<std::streamsize>(payload_len));
  if (static_cast<std::size_t>(is.gcount()) != payload_len)
    throw IoError("truncated payload in " + path.string());
  const std::uint64_t stored = read_u64(is);
  const std::uint64_t actual = fnv1a64(payload.data(), payload.size());
  if (stored != actual) throw IoError("checksum mismatch in " + path.string());

  FeatureBundle b;
  b.features.resize(n, d);
  b.logits.resize(n, c);
  b.ids.resize(n);
  const auto *p = reinterpret_cast<const unsigned char *>(payload.data());
  auto take_f32 = [&p]() {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= std::uint32_t(p[i]) << (8 * i);
    p += 4;
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  };
  auto take_u32 = [&p]() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
    p += 4;
    return v;
  };
  for (std::uint32_t r = 0; r < n; ++r)
    for (std::uint32_t col = 0; col < d; ++col) b.features(r, col) = take_f32();
  for (std::uint32_t r = 0; r < n; ++r)
    for (std::uint32_t col = 0; col < c; ++col) b.logits(r, col) = take_f32();
  if (has_labels) {
    b.labels.emplace(n);
    for (std::uint32_t r = 0; r < n; ++r)
      (*b.labels)[r] = static_cast<std::int32_t>(take_u32());
  }
  for (std::uint32_t r = 0; r < n; ++r) b.ids[r] = take_u32();
  b.validate();
  return b;
}

Manifest load_manifest(const std::filesystem::path &fbun_path) {
  auto mpath = fbun_path;
  mpath += ".manifest.json";
  std::ifstream is(mpath);
  if (!is) throw IoError("cannot open: " + mpath.string());
  nlohmann::json j = nlohmann::json::parse(is);
  Manifest m;
  m.n_samples = j.at("n_samples").get<std::uint32_t>();
  m.feature_dim = j.at("feature_dim").get<std::uint32_t>();
  m.n_classes = j.at("n_classes").get<std::uint32_t>();
  m.domain_name = j.at("domain_name").get<std::string>();
  m.has_labels = j.at("has_labels").get<bool>();
  m.checksum = j.at("checksum").get<std::uint64_t>();
  return m;
}

namespace {

MatF parse_numeric_csv(const std::filesystem::path &path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path.string());
  std::vector<std::vector<float>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<float> row;
    std::stringstream ss(line);
    std::string cell;
    std::size_t colno = 0;
    while (std::getline(ss, cell, ',')) {
      ++colno;
      try {
        std::size_t pos = 0;
        const float v = std::stof(cell, &pos);
        while (pos < cell.size() && std::isspace(cell[pos])) ++pos;
        if (pos != cell.size()) throw std::invalid_argument(cell);
        row.push_back(v);
      } catch (const std::exception &) {
        throw ConfigError("non-numeric cell \"" + cell + "\" at row " +
                          std::to_string(lineno) + ", column " +
                          std::to_string(colno) + " of " + path.string());
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ConfigError("ragged row " + std::to_string(lineno) + " in " +
                        path.string());
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("empty CSV: " + path.string());
  MatF m(static_cast<Eigen::Index>(rows.size()),
         static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          rows[r][c];
  return m;
}

}  // namespace

FeatureBundle import_csv(const std::filesystem::path &features_csv,
                         const std::filesystem::path &logits_csv,
                         const std::optional<std::filesystem::path> &labels_csv) {
  FeatureBundle b;
  b.features = parse_numeric_csv(features_csv);
  b.logits = parse_numeric_csv(logits_csv);
  if (b.features.rows() != b.logits.rows())
    throw ConfigError("row-count mismatch: features has " +
                      std::to_string(b.features.rows()) + " rows, logits has " +
                      std::to_string(b.logits.rows()));
  if (labels_csv) {
    const MatF lab = parse_numeric_csv(*labels_csv);
    if (lab.rows() != b.features.rows() || lab.cols() != 1)
      throw ConfigError("row-count mismatch: labels CSV must be one column of " +
                        std::to_string(b.features.rows()) + " rows");
    b.labels.emplace(lab.rows());
    for (Eigen::Index r = 0; r < lab.rows(); ++r)
      (*b.labels)[r] = static_cast<std::int32_t>(std::lround(lab(r, 0)));
  }
  b.ids.resize(b.features.rows());
  for (std::size_t i = 0; i < b.ids.size(); ++i)
    b.ids[i] = static_cast<std::uint32_t>(i);
  b.validate();
  return b;
}

}  // namespace plforge
