#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fshgr/errors.hpp"
#include "fshgr/rng.hpp"

namespace fshgr {

enum class Exercise : std::uint32_t { B = 0, C = 1, D = 2 };

// DB2 exercise layout: B = gestures 1..17, C = 18..40, D = 41..49.
Exercise exercise_for_gesture(std::uint32_t gesture);
const char* exercise_name(Exercise e);

// One subject/gesture/repetition multichannel recording, samples row-major
// [T x C] (time-major).
struct Recording {
  std::uint32_t subject = 0;
  std::uint32_t gesture = 0;     // 0 = rest
  std::uint32_t repetition = 0;  // 1..6
  Exercise exercise = Exercise::B;
  std::uint32_t fs = 2000;
  std::uint32_t channels = 12;
  std::int64_t samples_len = 0;  // T
  std::vector<float> samples;    // T*C floats

  float at(std::int64_t t, int c) const { return samples[static_cast<std::size_t>(t * channels + c)]; }
};

// "FSE1" recording file, all little-endian:
//   magic "FSE1" | u32 version | u32 subject | u32 gesture | u32 repetition
//   | u32 exercise | u32 fs | u32 channels | u64 T | T*C float32 row-major
void write_recording(const std::filesystem::path& path, const Recording& rec);
Recording load_recording(const std::filesystem::path& path);
// Header-only parse (no payload); used by catalog scans.
Recording load_recording_header(const std::filesystem::path& path);

struct CatalogEntry {
  std::uint32_t subject, gesture, repetition;
  Exercise exercise;
  std::uint32_t fs, channels;
  std::int64_t samples_len;
  std::filesystem::path file;
};

// Immutable index of a recording tree, keyed by (subject, gesture, repetition).
class Catalog {
 public:
  static Catalog build(const std::filesystem::path& root);

  const std::vector<CatalogEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

  const CatalogEntry* find(std::uint32_t subject, std::uint32_t gesture,
                           std::uint32_t repetition) const;

  // Sorted distinct values present in the catalog.
  std::vector<std::uint32_t> subjects() const;
  std::vector<std::uint32_t> gestures() const;
  std::vector<std::uint32_t> repetitions() const;

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::vector<CatalogEntry> entries_;
  std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>, std::size_t> index_;
};

// Synthetic sEMG-like corpus for desk-scale runs. Each (subject, gesture)
// pair gets a band-limited class template (per-channel DC signature plus
// low-frequency sinusoids) under a trapezoidal activation envelope; subjects
// perturb gains and phases, repetitions jitter the template, and white noise
// is added on top.
struct SynthSpec {
  int subjects = 8;
  int gestures = 10;  // gesture ids 1..gestures
  int reps = 6;
  double duration_s = 5.0;
  double fs = 2000.0;
  int channels = 12;
  double noise = 0.05;          // white-noise sigma
  double rep_jitter = 0.05;     // repetition-level phase/amplitude jitter
  double subject_jitter = 0.15; // subject-level template perturbation
  bool with_rest = false;       // also emit gesture 0 as noise-only recordings

  void validate() const;
};

// Deterministic in (spec, seed): the same invocation produces bit-identical
// files regardless of generation order.
Recording synthesize_recording(const SynthSpec& spec, std::uint64_t seed,
                               std::uint32_t subject, std::uint32_t gesture,
                               std::uint32_t repetition);

// Writes the whole tree root/subject_SS/gesture_GG_rep_R.fse; returns file count.
std::size_t generate_synthetic(const SynthSpec& spec, std::uint64_t seed,
                               const std::filesystem::path& out_root);

std::filesystem::path recording_path(const std::filesystem::path& root, std::uint32_t subject,
                                     std::uint32_t gesture, std::uint32_t repetition);

}  // namespace fshgr
