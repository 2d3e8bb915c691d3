#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "ssmil/dataset.hpp"

namespace ssmil {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'M', 'B'};
constexpr std::uint8_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

struct Reader {
  const std::string& buf;
  std::uint64_t at = 0;

  void need(std::uint64_t n, const char* what) {
    if (at + n > buf.size()) throw ParseError(std::string("truncated bag file reading ") + what, at);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf[at++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint8_t>(buf[at]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[at + 1])) << 8);
    at += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[at + i])) << (8 * i);
    at += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[at + i])) << (8 * i);
    at += 8;
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace

void save_bag(const Bag& bag, const std::string& path) {
  contract(bag.grid.rows <= 0xFFFF && bag.grid.cols <= 0xFFFF && bag.features.cols() <= 0xFFFF,
           "save_bag: extents exceed u16");
  const Index n = bag.features.rows();
  contract(static_cast<Index>(bag.back_map.size()) == n &&
               static_cast<Index>(bag.instance_labels.size()) == n,
           "save_bag: token metadata misaligned");
  std::string out;
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  put_u16(out, static_cast<std::uint16_t>(bag.grid.rows));
  put_u16(out, static_cast<std::uint16_t>(bag.grid.cols));
  put_u16(out, static_cast<std::uint16_t>(bag.features.cols()));
  put_u32(out, static_cast<std::uint32_t>(n));
  for (Index t = 0; t < n; ++t) {
    const Index cell = bag.back_map[static_cast<size_t>(t)];
    put_u16(out, static_cast<std::uint16_t>(cell / bag.grid.cols));
    put_u16(out, static_cast<std::uint16_t>(cell % bag.grid.cols));
  }
  for (Index t = 0; t < n; ++t)
    for (Index j = 0; j < bag.features.cols(); ++j) put_f64(out, bag.features(t, j));
  for (Index t = 0; t < n; ++t)
    out.push_back(static_cast<char>(bag.instance_labels[static_cast<size_t>(t)]));
  write_file(path, out);
}

Bag load_bag(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r{buf};
  r.need(4, "magic");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw ParseError("bad magic in " + path, 0);
  r.at = 4;
  const std::uint8_t version = r.u8("version");
  if (version != kVersion)
    throw ParseError("unsupported bag version " + std::to_string(version), 4);
  Bag bag;
  bag.grid.rows = r.u16("rows");
  bag.grid.cols = r.u16("cols");
  const Index d = r.u16("feature dim");
  const Index n = r.u32("valid count");
  if (bag.grid.rows < 1 || bag.grid.cols < 1 || d < 1)
    throw ParseError("degenerate extents in " + path, 5);
  if (n > bag.grid.cell_count()) throw ParseError("valid count exceeds grid", 11);
  bag.grid.valid.assign(static_cast<size_t>(bag.grid.cell_count()), 0);
  bag.back_map.reserve(static_cast<size_t>(n));
  Index prev_cell = -1;
  for (Index t = 0; t < n; ++t) {
    const std::uint64_t coord_at = r.at;
    const Index row = r.u16("coordinate row");
    const Index col = r.u16("coordinate col");
    if (row >= bag.grid.rows || col >= bag.grid.cols)
      throw ParseError("coordinate outside grid", coord_at);
    const Index cell = bag.grid.cell(row, col);
    if (cell <= prev_cell) throw ParseError("coordinates not strictly ascending", coord_at);
    prev_cell = cell;
    bag.grid.valid[static_cast<size_t>(cell)] = 1;
    bag.back_map.push_back(cell);
  }
  bag.features.resize(n, d);
  for (Index t = 0; t < n; ++t)
    for (Index j = 0; j < d; ++j) bag.features(t, j) = r.f64("feature value");
  bag.instance_labels.reserve(static_cast<size_t>(n));
  for (Index t = 0; t < n; ++t) bag.instance_labels.push_back(r.u8("instance label"));
  if (r.at != buf.size()) throw ParseError("trailing bytes after bag payload", r.at);
  // half-step grids have odd extents; the coarse lattice sits on even coords
  bag.coarse_rows = (bag.grid.rows + 1) / 2;
  bag.coarse_cols = (bag.grid.cols + 1) / 2;
  return bag;
}

std::vector<Index> dataset_indices(const Dataset& data, const std::string& split) {
  std::vector<Index> idx;
  for (size_t i = 0; i < data.bags.size(); ++i)
    if (data.split[i] == split) idx.push_back(static_cast<Index>(i));
  return idx;
}

void save_dataset(const Dataset& data, const std::string& dir) {
  contract(data.bags.size() == data.split.size(), "save_dataset: split tags misaligned");
  std::filesystem::create_directories(dir);
  nlohmann::json spec;
  spec["coarse_rows"] = data.spec.coarse_rows;
  spec["coarse_cols"] = data.spec.coarse_cols;
  spec["feature_dim"] = data.spec.feature_dim;
  spec["tissue_fraction"] = data.spec.tissue_fraction;
  spec["cluster_radius"] = data.spec.cluster_radius;
  spec["signal_strength"] = data.spec.signal_strength;
  spec["noise_scale"] = data.spec.noise_scale;
  spec["n_classes"] = data.spec.n_classes;
  spec["seed"] = data.spec.seed;

  nlohmann::json bags = nlohmann::json::array();
  for (size_t i = 0; i < data.bags.size(); ++i) {
    nlohmann::json b;
    b["id"] = data.bags[i].id;
    b["label"] = data.bags[i].label;
    b["split"] = data.split[i];
    b["file"] = data.bags[i].id + ".ssmb";
    bags.push_back(b);
    save_bag(data.bags[i], dir + "/" + data.bags[i].id + ".ssmb");
  }
  nlohmann::json manifest;
  manifest["spec"] = spec;
  manifest["train_fraction"] = data.train_fraction;
  manifest["bags"] = bags;
  write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::string& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir + "/manifest.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("manifest.json: " + std::string(e.what()), e.byte);
  }
  Dataset data;
  try {
    const auto& spec = manifest.at("spec");
    data.spec.coarse_rows = spec.at("coarse_rows").get<Index>();
    data.spec.coarse_cols = spec.at("coarse_cols").get<Index>();
    data.spec.feature_dim = spec.at("feature_dim").get<Index>();
    data.spec.tissue_fraction = spec.at("tissue_fraction").get<double>();
    data.spec.cluster_radius = spec.at("cluster_radius").get<double>();
    data.spec.signal_strength = spec.at("signal_strength").get<double>();
    data.spec.noise_scale = spec.at("noise_scale").get<double>();
    data.spec.n_classes = spec.at("n_classes").get<Index>();
    data.spec.seed = spec.at("seed").get<std::uint64_t>();
    data.train_fraction = manifest.at("train_fraction").get<double>();
    for (const auto& b : manifest.at("bags")) {
      Bag bag = load_bag(dir + "/" + b.at("file").get<std::string>());
      bag.id = b.at("id").get<std::string>();
      bag.label = b.at("label").get<Index>();
      data.split.push_back(b.at("split").get<std::string>());
      data.bags.push_back(std::move(bag));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest.json: " + std::string(e.what()), 0);
  }
  return data;
}

}  // namespace ssmil
