#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fshgr/errors.hpp"

namespace fshgr {

struct PreprocessConfig {
  double fs = 2000.0;        // Hz
  double cutoff_hz = 1.0;    // Butterworth low-pass cutoff
  double mu = 2048.0;        // mu-law companding parameter
  double window_ms = 200.0;  // window length
  double step_ms = 50.0;     // sliding step

  void validate() const;
  int window_samples() const { return static_cast<int>(window_ms * fs / 1000.0 + 0.5); }
  int step_samples() const { return static_cast<int>(step_ms * fs / 1000.0 + 0.5); }
};

// Per-channel statistics learned on the meta-train split only.
//   scale    — max-abs of the filtered signal (raw units), pre-scales into [-1, 1]
//   post_min — minimum of the mu-law output over meta-train
//   post_max — maximum of the mu-law output over meta-train
struct NormStats {
  std::vector<double> scale;
  std::vector<double> post_min;
  std::vector<double> post_max;
  std::string source_split = "meta-train";

  int channels() const { return static_cast<int>(scale.size()); }
  void save(const std::filesystem::path& path) const;  // "FSN1" sidecar
  static NormStats load(const std::filesystem::path& path);
};

// Out-of-range samples in unseen splits are clamped, not rejected; counters
// let callers report the rate.
struct ClampStats {
  std::uint64_t prescale_clamped = 0;
  std::uint64_t minmax_clamped = 0;
  std::uint64_t degenerate_channels = 0;
  std::uint64_t total_samples = 0;
};

struct ButterworthCoeffs {
  double b0, b1, a1;  // y[t] = b0 x[t] + b1 x[t-1] - a1 y[t-1]
};

// First-order low-pass via bilinear transform:
//   K = tan(pi*fc/fs), b0 = b1 = K/(1+K), a1 = (K-1)/(1+K)
ButterworthCoeffs butterworth_design(double fs, double cutoff_hz);

// Single-channel filter, zero initial state.
void butterworth_lowpass(std::span<const float> x, std::span<float> y, double fs,
                         double cutoff_hz);

// In-place per-channel filter over a row-major [T x C] sample matrix.
void butterworth_lowpass_channels(std::span<float> samples, std::int64_t t_len, int channels,
                                  double fs, double cutoff_hz);

// Eq-style companding: sign(x) * ln(1 + mu|x|) / ln(1 + mu). Odd, strictly
// monotone, maps [-1, 1] onto [-1, 1]. Callers pre-scale inputs.
double mu_law(double x, double mu);

// Same, but clamps |x| > 1 to +-1 and counts the clamp.
double mu_law_clamped(double x, double mu, std::uint64_t& clamp_count);

// Computes NormStats from filtered meta-train sample matrices.
class NormStatsAccumulator {
 public:
  explicit NormStatsAccumulator(int channels);
  // `filtered` is row-major [T x C], already low-pass filtered.
  void add_filtered(std::span<const float> filtered, std::int64_t t_len, int channels,
                    double mu);
  NormStats finish() const;

 private:
  int channels_;
  std::vector<double> max_abs_;
  std::vector<double> raw_min_, raw_max_;
  double mu_ = 0.0;
  bool any_ = false;
};

// Applies prescale -> mu-law -> minmax to an already-filtered [T x C] matrix.
void apply_companding(std::span<float> samples, std::int64_t t_len, int channels,
                      const PreprocessConfig& cfg, const NormStats& stats, ClampStats& clamps);

// Full pipeline on a raw sample matrix: filter, prescale, mu-law, minmax.
void preprocess_samples(std::span<float> samples, std::int64_t t_len, int channels,
                        const PreprocessConfig& cfg, const NormStats& stats,
                        ClampStats& clamps);

// Sliding-window segmentation bookkeeping. Windows start at 0, S, 2S, ...
std::int64_t window_count(std::int64_t t_len, int window, int step);
std::vector<std::int64_t> window_offsets(std::int64_t t_len, int window, int step);

}  // namespace fshgr
