#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dualseg/tensor.hpp"

namespace dualseg {

// On-disk tensor bundle: header.json lists names/shapes/dtypes, each entry is
// a raw little-endian row-major blob in its own file. Model snapshots and
// externally converted weights share this format.
struct StoredTensor {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<real> data;
};

class TensorStore {
 public:
  void put(const std::string& name, int rows, int cols, std::vector<real> data);
  void put(const std::string& name, const Tensor& t);

  bool contains(const std::string& name) const;
  const StoredTensor& get(const std::string& name) const;
  const std::vector<StoredTensor>& entries() const { return entries_; }

  void save(const std::filesystem::path& dir) const;
  static TensorStore load(const std::filesystem::path& dir);

 private:
  std::vector<StoredTensor> entries_;
};

}  // namespace dualseg
