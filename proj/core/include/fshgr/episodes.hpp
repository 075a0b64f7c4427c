#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fshgr/config.hpp"
#include "fshgr/dataset.hpp"
#include "fshgr/rng.hpp"
#include "fshgr/signal.hpp"
#include "fshgr/tensor.hpp"

namespace fshgr {

// A fully preprocessed recording held in RAM; windows are views into it.
struct PrepRecording {
  std::uint32_t subject, gesture, repetition;
  std::int64_t t_len;
  int channels;
  std::vector<float> samples;  // row-major [T x C], values in [0, 1]
};

struct PreprocessedStore {
  std::vector<PrepRecording> recs;
  int window = 0;  // samples
  int step = 0;    // samples
};

struct WindowInfo {
  int rec;              // index into store
  std::int64_t offset;  // first sample of the window
  std::uint32_t subject, gesture, repetition;
  std::uint32_t window_index;  // position within the recording's window list
};

// One split's windows plus the lookup structures episode sampling needs.
struct WindowPool {
  const PreprocessedStore* store = nullptr;
  std::vector<WindowInfo> windows;

  std::vector<std::uint32_t> subjects;  // sorted distinct
  std::vector<std::uint32_t> gestures;  // sorted distinct
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<int>> by_subject_gesture;
  std::map<std::uint32_t, std::vector<std::uint32_t>> gestures_of_subject;
  std::map<std::uint32_t, std::vector<std::uint32_t>> subjects_of_gesture;
  std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t, std::uint32_t>, int>
      by_identity;  // (subject, gesture, repetition, window_index) -> index

  void build_index();
  std::size_t size() const { return windows.size(); }
};

struct MetaSplit {
  Scenario scenario;
  std::shared_ptr<PreprocessedStore> store;
  WindowPool train, val, test;
  NormStats stats;
  ClampStats clamps;
  bool val_overlaps_train = false;

  const WindowPool& pool(Split s) const {
    switch (s) {
      case Split::MetaTrain: return train;
      case Split::MetaVal: return val;
      case Split::MetaTest: return test;
    }
    throw ParameterError("unknown split");
  }
};

// Membership rule for the three generalization scenarios. DB2-scale catalogs
// (40 subjects / 49 gestures / repetitions within 1..6) get the published
// splits; smaller catalogs fall back to the same proportions.
struct SplitPlan {
  Scenario scenario;
  std::vector<std::uint32_t> subjects[3];  // indexed by Split
  std::vector<std::uint32_t> gestures[3];
  std::vector<std::uint32_t> reps[3];
  bool val_overlaps_train = false;

  static SplitPlan make(Scenario scenario, std::vector<std::uint32_t> subjects,
                        std::vector<std::uint32_t> gestures, std::vector<std::uint32_t> reps,
                        bool include_rest);

  // include_rest routing is already folded into the gesture sets.
  bool contains(Split split, std::uint32_t subject, std::uint32_t gesture,
                std::uint32_t repetition) const;
};

// Loads, filters, compands and segments the catalog into per-split window
// pools. NormStats come from meta-train only.
MetaSplit build_meta_split(const Catalog& catalog, Scenario scenario,
                           const PreprocessConfig& prep, bool include_rest = false);

// An N-way k-shot task. Window references index into the pool it was sampled
// from; slot_gesture maps class slots back to gesture ids.
struct Episode {
  std::vector<std::pair<int, int>> support;  // (pool window index, slot 0..N-1)
  int query = -1;
  int query_slot = -1;
  SamplingMode mode = SamplingMode::SameSubject;
  std::vector<std::uint32_t> slot_gesture;
};

// Throws SamplingError when the pool cannot provide N classes with k support
// windows plus a spare query window.
void check_pool_feasibility(const WindowPool& pool, int n_way, int k_shot, SamplingMode mode);

Episode sample_episode(const WindowPool& pool, int n_way, int k_shot, SamplingMode mode,
                       RngStream& rng, bool label_shuffle = true);

// --- Replay files ("FSEP") ---------------------------------------------------
// magic "FSEP" | u32 version | u64 seed | u32 n_way | u32 k_shot | u32 mode
// | u64 count | per episode: slot_gesture[n_way], then N*k support elements
// and the query element as (subject, gesture, repetition, window_index, slot).

struct ReplayFile {
  std::uint64_t seed = 0;
  int n_way = 0, k_shot = 0;
  SamplingMode mode = SamplingMode::SameSubject;
  std::vector<Episode> episodes;
};

void save_replay(const std::filesystem::path& path, std::uint64_t seed, int n_way, int k_shot,
                 SamplingMode mode, std::span<const Episode> episodes, const WindowPool& pool);
ReplayFile load_replay(const std::filesystem::path& path, const WindowPool& pool);

// --- Task encoding -------------------------------------------------------------

// Copies one window out of the pool as a [C x W] channel-major leaf.
template <typename T>
Tensor<T> window_leaf(Graph<T>& g, const WindowPool& pool, int window_idx) {
  const WindowInfo& wi = pool.windows[static_cast<std::size_t>(window_idx)];
  const PrepRecording& rec = pool.store->recs[static_cast<std::size_t>(wi.rec)];
  const int c = rec.channels;
  const int w = pool.store->window;
  std::vector<T> buf(static_cast<std::size_t>(c) * static_cast<std::size_t>(w));
  for (int ch = 0; ch < c; ++ch)
    for (int t = 0; t < w; ++t)
      buf[static_cast<std::size_t>(ch * w + t)] =
          static_cast<T>(rec.samples[static_cast<std::size_t>((wi.offset + t) * c + ch)]);
  return g.leaf({c, w}, std::move(buf));
}

// Builds the [(out_dim + N) x l] sequence of Fig-2 style (feature | label)
// columns: supports in episode order with one-hot labels, query last with the
// all-zero null label. pad_len > l appends zero columns after the query (used
// by the causality checks).
template <typename T, typename EmbedFn>
Tensor<T> encode_task(Graph<T>& g, const WindowPool& pool, const Episode& ep, EmbedFn&& embed,
                      int n_way, int pad_len = 0) {
  std::vector<Tensor<T>> cols;
  const int l = static_cast<int>(ep.support.size()) + 1;
  cols.reserve(static_cast<std::size_t>(pad_len > l ? pad_len : l));
  int out_dim = -1;
  for (const auto& [widx, slot] : ep.support) {
    Tensor<T> feat = embed(g, window_leaf<T>(g, pool, widx));
    out_dim = feat.shape()[0];
    std::vector<T> onehot(static_cast<std::size_t>(n_way), T(0));
    onehot[static_cast<std::size_t>(slot)] = T(1);
    Tensor<T> label = g.leaf({n_way}, std::move(onehot));
    cols.push_back(concat_channels(feat, label));
  }
  Tensor<T> qfeat = embed(g, window_leaf<T>(g, pool, ep.query));
  out_dim = qfeat.shape()[0];
  Tensor<T> null_label = g.zeros({n_way});
  cols.push_back(concat_channels(qfeat, null_label));
  for (int p = l; p < pad_len; ++p) cols.push_back(g.zeros({out_dim + n_way}));
  return stack_columns(std::span<const Tensor<T>>(cols.data(), cols.size()));
}

}  // namespace fshgr
