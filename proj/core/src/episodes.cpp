#include "fshgr/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "fshgr/io_util.hpp"

namespace fshgr {

namespace {

bool contains_id(const std::vector<std::uint32_t>& v, std::uint32_t x) {
  return std::binary_search(v.begin(), v.end(), x);
}

// round-to-nearest count with [1, n-2] clamping so every split stays nonempty
void three_way_counts(std::size_t n, double train_frac, double val_frac, std::size_t& n_train,
                      std::size_t& n_val) {
  n_train = static_cast<std::size_t>(std::lround(train_frac * static_cast<double>(n)));
  n_val = static_cast<std::size_t>(std::lround(val_frac * static_cast<double>(n)));
  n_train = std::max<std::size_t>(1, n_train);
  n_val = std::max<std::size_t>(1, n_val);
  while (n_train + n_val > n - 1) {
    if (n_train > 1)
      --n_train;
    else
      --n_val;
  }
}

}  // namespace

SplitPlan SplitPlan::make(Scenario scenario, std::vector<std::uint32_t> subjects,
                          std::vector<std::uint32_t> gestures, std::vector<std::uint32_t> reps,
                          bool include_rest) {
  std::sort(subjects.begin(), subjects.end());
  std::sort(gestures.begin(), gestures.end());
  std::sort(reps.begin(), reps.end());
  // Rest (gesture 0) is routed explicitly below; the proportional math runs
  // over the episodic gesture ids only.
  std::vector<std::uint32_t> episodic_gestures;
  for (auto g : gestures)
    if (g != 0) episodic_gestures.push_back(g);

  SplitPlan plan;
  plan.scenario = scenario;
  const auto all = [](std::vector<std::uint32_t> v) { return v; };

  switch (scenario) {
    case Scenario::NewRepetitions: {
      std::vector<std::uint32_t> train_reps, test_reps;
      for (auto r : reps) {
        if (r == 1 || r == 3 || r == 4 || r == 6) train_reps.push_back(r);
        if (r == 2 || r == 5) test_reps.push_back(r);
      }
      if (train_reps.empty() || test_reps.empty())
        throw ParameterError(
            "scenario new-repetitions needs repetitions from both {1,3,4,6} and {2,5}; catalog "
            "has " +
            std::to_string(reps.size()) + " distinct repetitions");
      for (int s = 0; s < 3; ++s) {
        plan.subjects[s] = subjects;
        plan.gestures[s] = include_rest ? gestures : episodic_gestures;
      }
      plan.reps[0] = train_reps;
      plan.reps[1] = train_reps;  // meta-val episodes are carved from train repetitions
      plan.reps[2] = test_reps;
      plan.val_overlaps_train = true;
      break;
    }
    case Scenario::NewSubjects: {
      if (subjects.size() < 3)
        throw ParameterError("scenario new-subjects requires at least 3 subjects, catalog has " +
                             std::to_string(subjects.size()));
      std::size_t n_train, n_val;
      if (subjects.size() == 40) {
        n_train = 27;  // published DB2 split: 27 / 5 / 8
        n_val = 5;
      } else {
        three_way_counts(subjects.size(), 27.0 / 40.0, 5.0 / 40.0, n_train, n_val);
      }
      plan.subjects[0].assign(subjects.begin(), subjects.begin() + static_cast<long>(n_train));
      plan.subjects[1].assign(subjects.begin() + static_cast<long>(n_train),
                              subjects.begin() + static_cast<long>(n_train + n_val));
      plan.subjects[2].assign(subjects.begin() + static_cast<long>(n_train + n_val),
                              subjects.end());
      for (int s = 0; s < 3; ++s) {
        plan.gestures[s] = include_rest ? gestures : episodic_gestures;
        plan.reps[s] = all(reps);
      }
      break;
    }
    case Scenario::NewGestures: {
      if (episodic_gestures.size() < 3)
        throw ParameterError("scenario new-gestures requires at least 3 gestures, catalog has " +
                             std::to_string(episodic_gestures.size()));
      std::size_t n_train, n_val;
      if (episodic_gestures.size() == 49) {
        n_train = 34;  // published DB2 split: 34 / 6 / 9
        n_val = 6;
      } else {
        three_way_counts(episodic_gestures.size(), 34.0 / 49.0, 6.0 / 49.0, n_train, n_val);
      }
      plan.gestures[0].assign(episodic_gestures.begin(),
                              episodic_gestures.begin() + static_cast<long>(n_train));
      plan.gestures[1].assign(episodic_gestures.begin() + static_cast<long>(n_train),
                              episodic_gestures.begin() + static_cast<long>(n_train + n_val));
      plan.gestures[2].assign(episodic_gestures.begin() + static_cast<long>(n_train + n_val),
                              episodic_gestures.end());
      if (include_rest) {
        // rest joins meta-train
        plan.gestures[0].insert(plan.gestures[0].begin(), 0);
      }
      for (int s = 0; s < 3; ++s) {
        plan.subjects[s] = subjects;
        plan.reps[s] = all(reps);
      }
      break;
    }
  }
  return plan;
}

bool SplitPlan::contains(Split split, std::uint32_t subject, std::uint32_t gesture,
                         std::uint32_t repetition) const {
  const int s = static_cast<int>(split);
  return contains_id(subjects[s], subject) && contains_id(gestures[s], gesture) &&
         contains_id(reps[s], repetition);
}

// --- WindowPool ------------------------------------------------------------

void WindowPool::build_index() {
  std::set<std::uint32_t> subj, gest;
  by_subject_gesture.clear();
  gestures_of_subject.clear();
  subjects_of_gesture.clear();
  by_identity.clear();
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    subj.insert(w.subject);
    gest.insert(w.gesture);
    by_subject_gesture[{w.subject, w.gesture}].push_back(static_cast<int>(i));
    by_identity[{w.subject, w.gesture, w.repetition, w.window_index}] = static_cast<int>(i);
  }
  subjects.assign(subj.begin(), subj.end());
  gestures.assign(gest.begin(), gest.end());
  for (const auto& [key, idxs] : by_subject_gesture) {
    gestures_of_subject[key.first].push_back(key.second);
    subjects_of_gesture[key.second].push_back(key.first);
  }
}

// --- build_meta_split ---------------------------------------------------------

MetaSplit build_meta_split(const Catalog& catalog, Scenario scenario,
                           const PreprocessConfig& prep, bool include_rest) {
  prep.validate();
  if (catalog.empty()) throw CatalogError("cannot build meta split from an empty catalog");

  const auto subjects = catalog.subjects();
  auto gestures = catalog.gestures();
  const auto reps = catalog.repetitions();
  if (!include_rest) {
    gestures.erase(std::remove(gestures.begin(), gestures.end(), 0u), gestures.end());
    if (gestures.empty())
      throw CatalogError("catalog only contains rest recordings; nothing to sample");
  }

  SplitPlan plan = SplitPlan::make(scenario, subjects, gestures, reps, include_rest);

  auto split = MetaSplit{};
  split.scenario = scenario;
  split.store = std::make_shared<PreprocessedStore>();
  split.store->window = prep.window_samples();
  split.store->step = prep.step_samples();
  split.val_overlaps_train = plan.val_overlaps_train;

  // Pass 1: load + filter everything we keep, accumulating NormStats over the
  // meta-train members only.
  struct Pending {
    PrepRecording rec;
    bool in[3];
  };
  std::vector<Pending> pending;
  int channels = -1;
  NormStatsAccumulator* acc = nullptr;
  std::unique_ptr<NormStatsAccumulator> acc_storage;

  for (const auto& entry : catalog.entries()) {
    bool in[3];
    bool any = false;
    for (int s = 0; s < 3; ++s) {
      in[s] = plan.contains(static_cast<Split>(s), entry.subject, entry.gesture,
                            entry.repetition);
      any = any || in[s];
    }
    if (!any) continue;
    Recording raw = load_recording(entry.file);
    if (channels < 0) {
      channels = static_cast<int>(raw.channels);
      acc_storage = std::make_unique<NormStatsAccumulator>(channels);
      acc = acc_storage.get();
    } else if (channels != static_cast<int>(raw.channels)) {
      throw CatalogError("mixed channel counts in catalog: " + std::to_string(channels) +
                         " vs " + std::to_string(raw.channels) + " in " + entry.file.string());
    }
    PrepRecording pr{raw.subject, raw.gesture, raw.repetition, raw.samples_len,
                     static_cast<int>(raw.channels), std::move(raw.samples)};
    butterworth_lowpass_channels(pr.samples, pr.t_len, pr.channels, prep.fs, prep.cutoff_hz);
    if (in[0]) acc->add_filtered(pr.samples, pr.t_len, pr.channels, prep.mu);
    pending.push_back(Pending{std::move(pr), {in[0], in[1], in[2]}});
  }
  if (pending.empty())
    throw CatalogError("no catalog entries matched scenario " + to_string(scenario));
  bool any_train = false;
  for (const auto& p : pending) any_train = any_train || p.in[0];
  if (!any_train)
    throw CatalogError("scenario " + to_string(scenario) +
                       ": no recordings fall into meta-train, cannot compute normalization stats");

  split.stats = acc->finish();
  split.stats.source_split = "meta-train";

  // Pass 2: compand against meta-train stats, segment, assign pool windows.
  WindowPool* pools[3] = {&split.train, &split.val, &split.test};
  for (int s = 0; s < 3; ++s) pools[s]->store = split.store.get();

  for (auto& p : pending) {
    apply_companding(p.rec.samples, p.rec.t_len, p.rec.channels, prep, split.stats,
                     split.clamps);
    const int rec_idx = static_cast<int>(split.store->recs.size());
    const auto offsets = window_offsets(p.rec.t_len, split.store->window, split.store->step);
    for (int s = 0; s < 3; ++s) {
      if (!p.in[s]) continue;
      for (std::size_t w = 0; w < offsets.size(); ++w) {
        pools[s]->windows.push_back(WindowInfo{rec_idx, offsets[w], p.rec.subject,
                                               p.rec.gesture, p.rec.repetition,
                                               static_cast<std::uint32_t>(w)});
      }
    }
    split.store->recs.push_back(std::move(p.rec));
  }
  for (int s = 0; s < 3; ++s) pools[s]->build_index();
  return split;
}

// --- episode sampling ------------------------------------------------------------

namespace {

int windows_of(const WindowPool& pool, std::uint32_t subject, std::uint32_t gesture) {
  auto it = pool.by_subject_gesture.find({subject, gesture});
  return it == pool.by_subject_gesture.end() ? 0 : static_cast<int>(it->second.size());
}

int windows_of_gesture_best(const WindowPool& pool, std::uint32_t gesture) {
  int best = 0;
  auto it = pool.subjects_of_gesture.find(gesture);
  if (it == pool.subjects_of_gesture.end()) return 0;
  for (auto s : it->second) best = std::max(best, windows_of(pool, s, gesture));
  return best;
}

}  // namespace

void check_pool_feasibility(const WindowPool& pool, int n_way, int k_shot, SamplingMode mode) {
  if (n_way < 2) throw ParameterError("episodes: n_way must be >= 2");
  if (k_shot < 1) throw ParameterError("episodes: k_shot must be >= 1");
  if (mode == SamplingMode::SameSubject) {
    for (auto s : pool.subjects) {
      int classes = 0, query_capable = 0;
      for (auto g : pool.gestures_of_subject.at(s)) {
        const int n = windows_of(pool, s, g);
        if (n >= k_shot) ++classes;
        if (n >= k_shot + 1) ++query_capable;
      }
      if (classes >= n_way && query_capable >= 1) return;
    }
    throw SamplingError("no subject in the pool offers " + std::to_string(n_way) +
                        " gesture classes with " + std::to_string(k_shot) +
                        " support windows plus a query window (pool has " +
                        std::to_string(pool.subjects.size()) + " subjects, " +
                        std::to_string(pool.gestures.size()) + " gestures)");
  }
  int classes = 0, query_capable = 0;
  for (auto g : pool.gestures) {
    const int best = windows_of_gesture_best(pool, g);
    if (best >= k_shot) ++classes;
    if (best >= k_shot + 1) ++query_capable;
  }
  if (classes < n_way || query_capable < 1)
    throw SamplingError("pool offers only " + std::to_string(classes) + " of " +
                        std::to_string(n_way) + " gesture classes with " +
                        std::to_string(k_shot) + "+1 windows in a single subject");
}

Episode sample_episode(const WindowPool& pool, int n_way, int k_shot, SamplingMode mode,
                       RngStream& rng, bool label_shuffle) {
  Episode ep;
  ep.mode = mode;
  ep.slot_gesture.assign(static_cast<std::size_t>(n_way), 0);

  // Class selection: the query class is drawn first from the classes that can
  // spare a (k+1)-th window, the remaining N-1 classes from the rest.
  std::vector<std::uint32_t> classes;       // [0] = query class
  std::vector<std::uint32_t> class_subject;  // chosen subject per class

  if (mode == SamplingMode::SameSubject) {
    std::vector<std::uint32_t> eligible;
    for (auto s : pool.subjects) {
      int n_classes = 0, n_query = 0;
      for (auto g : pool.gestures_of_subject.at(s)) {
        const int n = windows_of(pool, s, g);
        if (n >= k_shot) ++n_classes;
        if (n >= k_shot + 1) ++n_query;
      }
      if (n_classes >= n_way && n_query >= 1) eligible.push_back(s);
    }
    if (eligible.empty())
      throw SamplingError("same-subject episode: no eligible subject for " +
                          std::to_string(n_way) + "-way " + std::to_string(k_shot) + "-shot");
    const std::uint32_t subject = eligible[static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(eligible.size())))];

    std::vector<std::uint32_t> with_k, with_k1;
    for (auto g : pool.gestures_of_subject.at(subject)) {
      const int n = windows_of(pool, subject, g);
      if (n >= k_shot) with_k.push_back(g);
      if (n >= k_shot + 1) with_k1.push_back(g);
    }
    const std::uint32_t qc =
        with_k1[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(with_k1.size())))];
    std::vector<std::uint32_t> rest;
    for (auto g : with_k)
      if (g != qc) rest.push_back(g);
    if (static_cast<int>(rest.size()) < n_way - 1)
      throw SamplingError("same-subject episode: subject " + std::to_string(subject) +
                          " offers only " + std::to_string(rest.size() + 1) + " classes, need " +
                          std::to_string(n_way));
    classes.push_back(qc);
    for (int idx : rng.sample_without_replacement(static_cast<int>(rest.size()), n_way - 1))
      classes.push_back(rest[static_cast<std::size_t>(idx)]);
    class_subject.assign(static_cast<std::size_t>(n_way), subject);
  } else {
    std::vector<std::uint32_t> with_k, with_k1;
    for (auto g : pool.gestures) {
      const int best = windows_of_gesture_best(pool, g);
      if (best >= k_shot) with_k.push_back(g);
      if (best >= k_shot + 1) with_k1.push_back(g);
    }
    if (static_cast<int>(with_k.size()) < n_way || with_k1.empty())
      throw SamplingError("cross-subject episode: only " + std::to_string(with_k.size()) +
                          " gesture classes support " + std::to_string(k_shot) + "-shot, need " +
                          std::to_string(n_way));
    const std::uint32_t qc =
        with_k1[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(with_k1.size())))];
    std::vector<std::uint32_t> rest;
    for (auto g : with_k)
      if (g != qc) rest.push_back(g);
    classes.push_back(qc);
    for (int idx : rng.sample_without_replacement(static_cast<int>(rest.size()), n_way - 1))
      classes.push_back(rest[static_cast<std::size_t>(idx)]);

    // each class may come from a different participant
    for (int i = 0; i < n_way; ++i) {
      const std::uint32_t g = classes[static_cast<std::size_t>(i)];
      const int need = (i == 0) ? k_shot + 1 : k_shot;
      std::vector<std::uint32_t> subj_ok;
      for (auto s : pool.subjects_of_gesture.at(g))
        if (windows_of(pool, s, g) >= need) subj_ok.push_back(s);
      if (subj_ok.empty())
        throw SamplingError("cross-subject episode: gesture " + std::to_string(g) +
                            " has no subject with " + std::to_string(need) + " windows");
      class_subject.push_back(subj_ok[static_cast<std::size_t>(
          rng.uniform_int(static_cast<int>(subj_ok.size())))]);
    }
  }

  // Gesture -> slot assignment; a fresh permutation per episode unless label
  // shuffling is disabled for ablation.
  std::vector<int> slots(static_cast<std::size_t>(n_way));
  for (int i = 0; i < n_way; ++i) slots[static_cast<std::size_t>(i)] = i;
  if (label_shuffle) rng.shuffle(slots.begin(), slots.end());
  for (int i = 0; i < n_way; ++i)
    ep.slot_gesture[static_cast<std::size_t>(slots[static_cast<std::size_t>(i)])] =
        classes[static_cast<std::size_t>(i)];

  // Window draws: k+1 distinct for the query class (last one is the query),
  // k distinct for the others.
  for (int i = 0; i < n_way; ++i) {
    const std::uint32_t g = classes[static_cast<std::size_t>(i)];
    const auto& wins = pool.by_subject_gesture.at({class_subject[static_cast<std::size_t>(i)], g});
    const int need = (i == 0) ? k_shot + 1 : k_shot;
    const auto picks = rng.sample_without_replacement(static_cast<int>(wins.size()), need);
    for (int j = 0; j < k_shot; ++j)
      ep.support.emplace_back(wins[static_cast<std::size_t>(picks[static_cast<std::size_t>(j)])],
                              slots[static_cast<std::size_t>(i)]);
    if (i == 0) {
      ep.query = wins[static_cast<std::size_t>(picks[static_cast<std::size_t>(k_shot)])];
      ep.query_slot = slots[0];
    }
  }

  // The sequence order of the support elements carries no information.
  rng.shuffle(ep.support.begin(), ep.support.end());
  return ep;
}

// --- replay files ---------------------------------------------------------------

namespace {
constexpr char kReplayMagic[4] = {'F', 'S', 'E', 'P'};

void write_element(std::ostream& out, const WindowPool& pool, int idx, int slot) {
  const auto& w = pool.windows[static_cast<std::size_t>(idx)];
  io::write_u32(out, w.subject);
  io::write_u32(out, w.gesture);
  io::write_u32(out, w.repetition);
  io::write_u32(out, w.window_index);
  io::write_u32(out, static_cast<std::uint32_t>(slot));
}

int read_element(std::istream& in, const WindowPool& pool, const std::string& ctx, int* slot) {
  const std::uint32_t subject = io::read_u32(in, ctx);
  const std::uint32_t gesture = io::read_u32(in, ctx);
  const std::uint32_t repetition = io::read_u32(in, ctx);
  const std::uint32_t window_index = io::read_u32(in, ctx);
  *slot = static_cast<int>(io::read_u32(in, ctx));
  auto it = pool.by_identity.find({subject, gesture, repetition, window_index});
  if (it == pool.by_identity.end())
    throw FormatError(ctx + ": replay references window (subject=" + std::to_string(subject) +
                      ", gesture=" + std::to_string(gesture) + ", repetition=" +
                      std::to_string(repetition) + ", window=" + std::to_string(window_index) +
                      ") not present in the pool");
  return it->second;
}
}  // namespace

void save_replay(const std::filesystem::path& path, std::uint64_t seed, int n_way, int k_shot,
                 SamplingMode mode, std::span<const Episode> episodes, const WindowPool& pool) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(kReplayMagic, 4);
  io::write_u32(out, 1);
  io::write_u64(out, seed);
  io::write_u32(out, static_cast<std::uint32_t>(n_way));
  io::write_u32(out, static_cast<std::uint32_t>(k_shot));
  io::write_u32(out, static_cast<std::uint32_t>(mode));
  io::write_u64(out, episodes.size());
  for (const auto& ep : episodes) {
    for (auto g : ep.slot_gesture) io::write_u32(out, g);
    for (const auto& [w, slot] : ep.support) write_element(out, pool, w, slot);
    write_element(out, pool, ep.query, ep.query_slot);
  }
  if (!out) throw FormatError("write failure on " + path.string());
}

ReplayFile load_replay(const std::filesystem::path& path, const WindowPool& pool) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::string ctx = path.string();
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kReplayMagic, 4) != 0)
    throw FormatError(ctx + ": bad magic, expected FSEP", 0);
  const std::uint32_t version = io::read_u32(in, ctx);
  if (version != 1) throw FormatError(ctx + ": unsupported replay version", 4);
  ReplayFile rf;
  rf.seed = io::read_u64(in, ctx);
  rf.n_way = static_cast<int>(io::read_u32(in, ctx));
  rf.k_shot = static_cast<int>(io::read_u32(in, ctx));
  const std::uint32_t mode = io::read_u32(in, ctx);
  if (mode > 1) throw FormatError(ctx + ": bad sampling mode code " + std::to_string(mode));
  rf.mode = static_cast<SamplingMode>(mode);
  const std::uint64_t count = io::read_u64(in, ctx);
  rf.episodes.reserve(count);
  for (std::uint64_t e = 0; e < count; ++e) {
    Episode ep;
    ep.mode = rf.mode;
    ep.slot_gesture.resize(static_cast<std::size_t>(rf.n_way));
    for (auto& g : ep.slot_gesture) g = io::read_u32(in, ctx);
    const int n_support = rf.n_way * rf.k_shot;
    for (int i = 0; i < n_support; ++i) {
      int slot = 0;
      const int w = read_element(in, pool, ctx, &slot);
      ep.support.emplace_back(w, slot);
    }
    ep.query = read_element(in, pool, ctx, &ep.query_slot);
    rf.episodes.push_back(std::move(ep));
  }
  return rf;
}

}  // namespace fshgr
