#include "dualseg/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <fstream>

namespace dualseg {

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "tensor blobs are little-endian; big-endian hosts need byte swaps");

void TensorStore::put(const std::string& name, int rows, int cols, std::vector<real> data) {
  if (static_cast<size_t>(rows) * cols != data.size())
    throw std::invalid_argument("TensorStore::put: size mismatch for '" + name + "'");
  for (const auto& e : entries_)
    if (e.name == name) throw std::invalid_argument("TensorStore::put: duplicate '" + name + "'");
  entries_.push_back({name, rows, cols, std::move(data)});
}

void TensorStore::put(const std::string& name, const Tensor& t) {
  put(name, t.rows(), t.cols(), t.value());
}

bool TensorStore::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const StoredTensor& TensorStore::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw std::runtime_error("TensorStore: no entry named '" + name + "'");
}

void TensorStore::save(const fs::path& dir) const {
  fs::create_directories(dir);
  json header;
  header["version"] = 1;
  json list = json::array();
  for (size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    char buf[32];
    std::snprintf(buf, sizeof(buf), "t%04zu.bin", i);
    list.push_back({{"name", e.name},
                    {"shape", {e.rows, e.cols}},
                    {"dtype", "f64"},
                    {"file", buf}});
    std::ofstream blob(dir / buf, std::ios::binary);
    blob.write(reinterpret_cast<const char*>(e.data.data()),
               static_cast<std::streamsize>(e.data.size() * sizeof(real)));
    if (!blob) throw std::runtime_error("TensorStore: failed writing blob for '" + e.name + "'");
  }
  header["entries"] = list;
  std::ofstream hf(dir / "header.json");
  hf << header.dump(2) << "\n";
  if (!hf) throw std::runtime_error("TensorStore: failed writing header in " + dir.string());
}

TensorStore TensorStore::load(const fs::path& dir) {
  std::ifstream hf(dir / "header.json");
  if (!hf) throw std::runtime_error("TensorStore: cannot open " + (dir / "header.json").string());
  json header = json::parse(hf);
  const int version = header.value("version", 0);
  if (version != 1)
    throw std::runtime_error("TensorStore: unsupported version " + std::to_string(version));

  TensorStore store;
  for (const auto& e : header.at("entries")) {
    StoredTensor t;
    t.name = e.at("name").get<std::string>();
    t.rows = e.at("shape").at(0).get<int>();
    t.cols = e.at("shape").at(1).get<int>();
    const std::string dtype = e.at("dtype").get<std::string>();
    const fs::path blob_path = dir / e.at("file").get<std::string>();
    std::ifstream blob(blob_path, std::ios::binary);
    if (!blob) throw std::runtime_error("TensorStore: missing blob " + blob_path.string());
    const size_t count = static_cast<size_t>(t.rows) * t.cols;
    t.data.resize(count);
    if (dtype == "f64") {
      blob.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
    } else if (dtype == "f32") {
      std::vector<float> tmp(count);
      blob.read(reinterpret_cast<char*>(tmp.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
      for (size_t i = 0; i < count; ++i) t.data[i] = tmp[i];
    } else {
      throw std::runtime_error("TensorStore: unsupported dtype '" + dtype + "' for '" + t.name +
                               "'");
    }
    if (blob.gcount() !=
        static_cast<std::streamsize>(count * (dtype == "f32" ? sizeof(float) : sizeof(double))))
      throw std::runtime_error("TensorStore: truncated blob for '" + t.name + "'");
    store.entries_.push_back(std::move(t));
  }
  return store;
}

}  // namespace dualseg
