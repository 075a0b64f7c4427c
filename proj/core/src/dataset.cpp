#include "fshgr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "fshgr/io_util.hpp"

namespace fshgr {

namespace fs = std::filesystem;

Exercise exercise_for_gesture(std::uint32_t gesture) {
  if (gesture <= 17) return Exercise::B;  // rest files keep exercise B
  if (gesture <= 40) return Exercise::C;
  return Exercise::D;
}

const char* exercise_name(Exercise e) {
  switch (e) {
    case Exercise::B: return "B";
    case Exercise::C: return "C";
    case Exercise::D: return "D";
  }
  return "?";
}

// --- FSE1 ------------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'F', 'S', 'E', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kHeaderBytes = 4 + 7 * 4 + 8;

Recording read_header(std::ifstream& in, const std::string& ctx) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(ctx + ": bad magic, expected FSE1", 0);
  const std::uint32_t version = io::read_u32(in, ctx);
  if (version != kVersion)
    throw FormatError(ctx + ": unsupported version " + std::to_string(version), 4);
  Recording rec;
  rec.subject = io::read_u32(in, ctx);
  rec.gesture = io::read_u32(in, ctx);
  rec.repetition = io::read_u32(in, ctx);
  const std::uint32_t ex = io::read_u32(in, ctx);
  if (ex > 2) throw FormatError(ctx + ": exercise code " + std::to_string(ex), 20);
  rec.exercise = static_cast<Exercise>(ex);
  rec.fs = io::read_u32(in, ctx);
  rec.channels = io::read_u32(in, ctx);
  rec.samples_len = static_cast<std::int64_t>(io::read_u64(in, ctx));
  if (rec.channels == 0 || rec.samples_len < 0)
    throw FormatError(ctx + ": invalid shape " + std::to_string(rec.samples_len) + "x" +
                          std::to_string(rec.channels),
                      28);
  return rec;
}
}  // namespace

void write_recording(const fs::path& path, const Recording& rec) {
  if (static_cast<std::int64_t>(rec.samples.size()) !=
      rec.samples_len * static_cast<std::int64_t>(rec.channels))
    throw DimensionError("write_recording: sample buffer size " +
                         std::to_string(rec.samples.size()) + " does not match " +
                         std::to_string(rec.samples_len) + "x" + std::to_string(rec.channels));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  io::write_u32(out, kVersion);
  io::write_u32(out, rec.subject);
  io::write_u32(out, rec.gesture);
  io::write_u32(out, rec.repetition);
  io::write_u32(out, static_cast<std::uint32_t>(rec.exercise));
  io::write_u32(out, rec.fs);
  io::write_u32(out, rec.channels);
  io::write_u64(out, static_cast<std::uint64_t>(rec.samples_len));
  io::write_f32_array(out, rec.samples.data(), rec.samples.size());
  if (!out) throw FormatError("write failure on " + path.string());
}

Recording load_recording(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  Recording rec = read_header(in, path.string());
  const std::size_t n =
      static_cast<std::size_t>(rec.samples_len) * static_cast<std::size_t>(rec.channels);
  rec.samples.resize(n);
  io::read_f32_array(in, rec.samples.data(), n, path.string(), kHeaderBytes);
  return rec;
}

Recording load_recording_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_header(in, path.string());
}

// --- Catalog ----------------------------------------------------------------

Catalog Catalog::build(const fs::path& root) {
  Catalog cat;
  cat.root_ = root;
  if (!fs::exists(root)) throw CatalogError("catalog root does not exist: " + root.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().extension() == ".fse") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    Recording hdr = load_recording_header(f);
    const auto key = std::make_tuple(hdr.subject, hdr.gesture, hdr.repetition);
    if (cat.index_.count(key))
      throw CatalogError("duplicate recording key (subject=" + std::to_string(hdr.subject) +
                         ", gesture=" + std::to_string(hdr.gesture) +
                         ", repetition=" + std::to_string(hdr.repetition) + "): " +
                         cat.entries_[cat.index_[key]].file.string() + " and " + f.string());
    CatalogEntry ce{hdr.subject, hdr.gesture, hdr.repetition, hdr.exercise,
                    hdr.fs, hdr.channels, hdr.samples_len, f};
    cat.index_.emplace(key, cat.entries_.size());
    cat.entries_.push_back(std::move(ce));
  }
  return cat;
}

const CatalogEntry* Catalog::find(std::uint32_t subject, std::uint32_t gesture,
                                  std::uint32_t repetition) const {
  auto it = index_.find(std::make_tuple(subject, gesture, repetition));
  return it == index_.end() ? nullptr : &entries_[it->second];
}

namespace {
template <typename F>
std::vector<std::uint32_t> distinct(const std::vector<CatalogEntry>& entries, F&& field) {
  std::set<std::uint32_t> s;
  for (const auto& e : entries) s.insert(field(e));
  return {s.begin(), s.end()};
}
}  // namespace

std::vector<std::uint32_t> Catalog::subjects() const {
  return distinct(entries_, [](const CatalogEntry& e) { return e.subject; });
}
std::vector<std::uint32_t> Catalog::gestures() const {
  return distinct(entries_, [](const CatalogEntry& e) { return e.gesture; });
}
std::vector<std::uint32_t> Catalog::repetitions() const {
  return distinct(entries_, [](const CatalogEntry& e) { return e.repetition; });
}

// --- Synthetic generator -----------------------------------------------------

void SynthSpec::validate() const {
  if (subjects < 1) throw ParameterError("synth: subjects must be >= 1");
  if (gestures < 1) throw ParameterError("synth: gestures must be >= 1");
  if (reps < 1) throw ParameterError("synth: reps must be >= 1");
  if (duration_s <= 0) throw ParameterError("synth: duration must be positive");
  if (fs <= 0) throw ParameterError("synth: fs must be positive");
  if (channels < 1) throw ParameterError("synth: channels must be >= 1");
  if (noise < 0 || rep_jitter < 0 || subject_jitter < 0)
    throw ParameterError("synth: noise and jitter levels must be non-negative");
}

namespace {

constexpr int kHarmonics = 3;
constexpr double kTwoPi = 6.283185307179586476925286766559;

struct ChannelTemplate {
  double dc;
  double freq[kHarmonics];
  double amp[kHarmonics];
  double phase[kHarmonics];
};

// Class template for one (gesture, channel): distinct DC signature plus
// band-limited oscillation. The DC term is what makes windowed channel means
// a sufficient statistic for the nearest-centroid separability oracle.
ChannelTemplate make_template(RngStream& rng) {
  ChannelTemplate t;
  const double mag = rng.uniform(0.4, 1.2);
  t.dc = rng.uniform() < 0.5 ? -mag : mag;
  for (int h = 0; h < kHarmonics; ++h) {
    t.freq[h] = rng.uniform(0.5, 4.0);
    t.amp[h] = rng.uniform(0.05, 0.25);
    t.phase[h] = rng.uniform(0.0, kTwoPi);
  }
  return t;
}

// Trapezoid: 10% ramp up, flat hold, 10% ramp down.
double envelope(double t, double duration) {
  const double ramp = 0.1 * duration;
  if (t < ramp) return t / ramp;
  if (t > duration - ramp) return (duration - t) / ramp;
  return 1.0;
}

}  // namespace

Recording synthesize_recording(const SynthSpec& spec, std::uint64_t seed,
                               std::uint32_t subject, std::uint32_t gesture,
                               std::uint32_t repetition) {
  spec.validate();
  const auto t_len = static_cast<std::int64_t>(spec.duration_s * spec.fs + 0.5);
  Recording rec;
  rec.subject = subject;
  rec.gesture = gesture;
  rec.repetition = repetition;
  rec.exercise = exercise_for_gesture(gesture);
  rec.fs = static_cast<std::uint32_t>(spec.fs + 0.5);
  rec.channels = static_cast<std::uint32_t>(spec.channels);
  rec.samples_len = t_len;
  rec.samples.assign(static_cast<std::size_t>(t_len) * spec.channels, 0.0f);

  RngStream master(seed);
  RngStream noise_rng = master.fork("noise", (static_cast<std::uint64_t>(subject) << 32) ^
                                                 (gesture << 16) ^ repetition);

  if (gesture == 0) {  // rest: noise only
    if (spec.noise > 0) {
      for (auto& v : rec.samples) v = static_cast<float>(noise_rng.normal(0.0, spec.noise));
    }
    return rec;
  }

  // Repetition-level jitter shared across channels of this recording.
  RngStream rep_rng = master.fork("rep", (static_cast<std::uint64_t>(subject) << 32) ^
                                             (gesture << 16) ^ repetition);
  const double rep_amp = spec.rep_jitter > 0
                             ? rep_rng.uniform(1.0 - spec.rep_jitter, 1.0 + spec.rep_jitter)
                             : 1.0;
  const double rep_shift = spec.rep_jitter > 0
                               ? rep_rng.uniform(0.0, spec.rep_jitter * spec.duration_s)
                               : 0.0;

  for (int ch = 0; ch < spec.channels; ++ch) {
    RngStream class_rng = master.fork("class", (static_cast<std::uint64_t>(gesture) << 16) ^
                                                   static_cast<std::uint64_t>(ch));
    ChannelTemplate tpl = make_template(class_rng);

    RngStream subj_rng = master.fork("subject", (static_cast<std::uint64_t>(subject) << 32) ^
                                                    (gesture << 16) ^
                                                    static_cast<std::uint64_t>(ch));
    const double gain = subj_rng.uniform(0.7, 1.3);
    const double dc = tpl.dc * (spec.subject_jitter > 0
                                    ? subj_rng.uniform(1.0 - spec.subject_jitter,
                                                       1.0 + spec.subject_jitter)
                                    : 1.0);
    double phase[kHarmonics];
    for (int h = 0; h < kHarmonics; ++h) {
      phase[h] = tpl.phase[h] + (spec.subject_jitter > 0
                                     ? subj_rng.normal(0.0, spec.subject_jitter * kTwoPi / 4)
                                     : 0.0);
    }

    for (std::int64_t i = 0; i < t_len; ++i) {
      const double t = static_cast<double>(i) / spec.fs;
      double v = dc;
      for (int h = 0; h < kHarmonics; ++h)
        v += tpl.amp[h] * std::sin(kTwoPi * tpl.freq[h] * (t + rep_shift) + phase[h]);
      v *= gain * rep_amp * envelope(t, spec.duration_s);
      rec.samples[static_cast<std::size_t>(i * spec.channels + ch)] = static_cast<float>(v);
    }
  }

  if (spec.noise > 0) {
    for (auto& v : rec.samples)
      v = static_cast<float>(v + noise_rng.normal(0.0, spec.noise));
  }
  return rec;
}

std::filesystem::path recording_path(const fs::path& root, std::uint32_t subject,
                                     std::uint32_t gesture, std::uint32_t repetition) {
  char sub[32], file[64];
  std::snprintf(sub, sizeof sub, "subject_%02u", subject);
  std::snprintf(file, sizeof file, "gesture_%02u_rep_%u.fse", gesture, repetition);
  return root / sub / file;
}

std::size_t generate_synthetic(const SynthSpec& spec, std::uint64_t seed,
                               const fs::path& out_root) {
  spec.validate();
  std::size_t count = 0;
  const std::uint32_t g_lo = spec.with_rest ? 0 : 1;
  for (int s = 1; s <= spec.subjects; ++s) {
    const auto subject = static_cast<std::uint32_t>(s);
    for (std::uint32_t g = g_lo; g <= static_cast<std::uint32_t>(spec.gestures); ++g) {
      for (int r = 1; r <= spec.reps; ++r) {
        const auto rep = static_cast<std::uint32_t>(r);
        Recording rec = synthesize_recording(spec, seed, subject, g, rep);
        const fs::path file = recording_path(out_root, subject, g, rep);
        fs::create_directories(file.parent_path());
        write_recording(file, rec);
        ++count;
      }
    }
  }
  return count;
}

}  // namespace fshgr
