#pragma once

// Checkpoint container.
//
// Layout (all integers little-endian):
//   8 bytes   magic "MANSYCK1"
//   u64       header length N
//   N bytes   JSON header: {"kind", "seed", "config", "arrays": [{"name","rows","cols"}...]}
//   float32   array payloads, column-major, in header order
//
// The header alone describes everything needed to rebuild a model.

#include "mansy/parameters.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mansy {

struct NamedArray {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<float> data;
};

struct Checkpoint {
  std::string kind;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Appends every parameter of `store` as "<prefix><name>".
template <typename T>
void append_store(Checkpoint& ckpt, const ParameterStore<T>& store, const std::string& prefix = "") {
  for (const auto& e : store.entries()) {
    NamedArray a{prefix + e.name, e.value.rows(), e.value.cols(), {}};
    a.data.resize(static_cast<std::size_t>(e.value.size()));
    for (Eigen::Index i = 0; i < e.value.size(); ++i) a.data[static_cast<std::size_t>(i)] = static_cast<float>(e.value.data()[i]);
    ckpt.arrays.push_back(std::move(a));
  }
}

/// Overwrites every parameter of `store` from "<prefix><name>" arrays.
/// Throws std::runtime_error on a missing array or shape mismatch.
template <typename T>
void restore_store(ParameterStore<T>& store, const Checkpoint& ckpt, const std::string& prefix = "") {
  for (auto& e : store.entries()) {
    const NamedArray& a = ckpt.array(prefix + e.name);
    if (a.rows != e.value.rows() || a.cols != e.value.cols())
      throw std::runtime_error("checkpoint array '" + a.name + "' has the wrong shape");
    for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value.data()[i] = static_cast<T>(a.data[static_cast<std::size_t>(i)]);
  }
}

}  // namespace mansy
