#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <unordered_map>
#include <vector>

#include "fshgr/rng.hpp"
#include "fshgr/tensor.hpp"

namespace fshgr {

// Named learned parameters. Entry order is creation order and is part of the
// deterministic construction contract (checkpoints address entries by name).
template <typename T>
struct ParamSet {
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<T> value;
  };

  std::vector<Entry> entries;
  std::unordered_map<std::string, int> by_name;

  int add(std::string name, Shape shape) {
    if (by_name.count(name))
      throw ParameterError("duplicate parameter name: " + name);
    Entry e;
    e.shape = std::move(shape);
    e.value.assign(static_cast<std::size_t>(shape_numel(e.shape)), T(0));
    e.name = name;
    entries.push_back(std::move(e));
    const int id = static_cast<int>(entries.size()) - 1;
    by_name.emplace(std::move(name), id);
    return id;
  }

  int add_uniform(std::string name, Shape shape, T bound, RngStream& rng) {
    const int id = add(std::move(name), std::move(shape));
    for (auto& v : entries[static_cast<std::size_t>(id)].value)
      v = static_cast<T>(rng.uniform(-static_cast<double>(bound), static_cast<double>(bound)));
    return id;
  }

  int find(const std::string& name) const {
    auto it = by_name.find(name);
    return it == by_name.end() ? -1 : it->second;
  }

  std::int64_t total_params() const {
    std::int64_t n = 0;
    for (const auto& e : entries) n += static_cast<std::int64_t>(e.value.size());
    return n;
  }

  // FNV-1a over raw value bytes; used to assert read-only access paths.
  std::uint64_t value_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : entries) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(e.value.data());
      for (std::size_t i = 0; i < e.value.size() * sizeof(T); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
      }
    }
    return h;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& e : entries) {
      const int id = out.add(e.name, e.shape);
      auto& dst = out.entries[static_cast<std::size_t>(id)].value;
      for (std::size_t i = 0; i < e.value.size(); ++i) dst[i] = static_cast<U>(e.value[i]);
    }
    return out;
  }
};

// Per-parameter gradient accumulator, entry-parallel to a ParamSet.
template <typename T>
using GradStore = std::vector<std::vector<T>>;

template <typename T>
GradStore<T> make_grad_store(const ParamSet<T>& ps) {
  GradStore<T> gs(ps.entries.size());
  for (std::size_t i = 0; i < ps.entries.size(); ++i)
    gs[i].assign(ps.entries[i].value.size(), T(0));
  return gs;
}

template <typename T>
void zero_grad_store(GradStore<T>& gs) {
  for (auto& g : gs)
    for (auto& v : g) v = T(0);
}

template <typename T>
void accumulate_grad_store(GradStore<T>& dst, const GradStore<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i)
    for (std::size_t j = 0; j < dst[i].size(); ++j) dst[i][j] += src[i][j];
}

// Emits a leaf bound to the parameter's storage; gradients harvested via
// Graph::add_param_grads land at the same index.
template <typename T>
Tensor<T> use_param(Graph<T>& g, const ParamSet<T>& ps, int id) {
  const auto& e = ps.entries[static_cast<std::size_t>(id)];
  return g.param_leaf(e.shape, e.value.data(), id);
}

}  // namespace fshgr
