#include "fshgr/signal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fshgr/io_util.hpp"

namespace fshgr {

void PreprocessConfig::validate() const {
  if (fs <= 0) throw ParameterError("preprocess: fs must be positive");
  if (!(cutoff_hz > 0 && cutoff_hz < fs / 2))
    throw ParameterError("preprocess: cutoff_hz must lie in (0, fs/2), got " +
                         std::to_string(cutoff_hz) + " at fs=" + std::to_string(fs));
  if (mu <= 0) throw ParameterError("preprocess: mu must be positive");
  if (window_ms <= 0 || window_ms > 300)
    throw ParameterError("preprocess: window_ms must be in (0, 300], got " +
                         std::to_string(window_ms));
  if (step_ms <= 0) throw ParameterError("preprocess: step_ms must be positive");
}

ButterworthCoeffs butterworth_design(double fs, double cutoff_hz) {
  if (!(cutoff_hz > 0 && cutoff_hz < fs / 2))
    throw ParameterError("butterworth: cutoff " + std::to_string(cutoff_hz) +
                         " Hz must lie in (0, fs/2) for fs=" + std::to_string(fs));
  const double k = std::tan(3.14159265358979323846 * cutoff_hz / fs);
  ButterworthCoeffs c{k / (1.0 + k), k / (1.0 + k), (k - 1.0) / (1.0 + k)};
  if (!(std::abs(c.a1) < 1.0)) throw NumericError("butterworth: unstable pole |a1| >= 1");
  return c;
}

void butterworth_lowpass(std::span<const float> x, std::span<float> y, double fs,
                         double cutoff_hz) {
  const ButterworthCoeffs c = butterworth_design(fs, cutoff_hz);
  double xprev = 0.0, yprev = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double xt = x[t];
    const double yt = c.b0 * xt + c.b1 * xprev - c.a1 * yprev;
    y[t] = static_cast<float>(yt);
    xprev = xt;
    yprev = yt;
  }
}

void butterworth_lowpass_channels(std::span<float> samples, std::int64_t t_len, int channels,
                                  double fs, double cutoff_hz) {
  const ButterworthCoeffs c = butterworth_design(fs, cutoff_hz);
  std::vector<double> xprev(static_cast<std::size_t>(channels), 0.0);
  std::vector<double> yprev(static_cast<std::size_t>(channels), 0.0);
  for (std::int64_t t = 0; t < t_len; ++t) {
    float* row = samples.data() + t * channels;
    for (int ch = 0; ch < channels; ++ch) {
      const double xt = row[ch];
      const double yt = c.b0 * xt + c.b1 * xprev[static_cast<std::size_t>(ch)] -
                        c.a1 * yprev[static_cast<std::size_t>(ch)];
      row[ch] = static_cast<float>(yt);
      xprev[static_cast<std::size_t>(ch)] = xt;
      yprev[static_cast<std::size_t>(ch)] = yt;
    }
  }
}

double mu_law(double x, double mu) {
  const double s = x < 0 ? -1.0 : 1.0;
  return s * std::log(1.0 + mu * std::abs(x)) / std::log(1.0 + mu);
}

double mu_law_clamped(double x, double mu, std::uint64_t& clamp_count) {
  if (x > 1.0) {
    ++clamp_count;
    return 1.0;
  }
  if (x < -1.0) {
    ++clamp_count;
    return -1.0;
  }
  return mu_law(x, mu);
}

NormStatsAccumulator::NormStatsAccumulator(int channels)
    : channels_(channels),
      max_abs_(static_cast<std::size_t>(channels), 0.0),
      raw_min_(static_cast<std::size_t>(channels), 0.0),
      raw_max_(static_cast<std::size_t>(channels), 0.0) {}

void NormStatsAccumulator::add_filtered(std::span<const float> filtered, std::int64_t t_len,
                                        int channels, double mu) {
  if (channels != channels_)
    throw DimensionError("norm stats: channel count changed from " +
                         std::to_string(channels_) + " to " + std::to_string(channels));
  mu_ = mu;
  for (std::int64_t t = 0; t < t_len; ++t) {
    const float* row = filtered.data() + t * channels;
    for (int ch = 0; ch < channels; ++ch) {
      const auto c = static_cast<std::size_t>(ch);
      const double v = row[ch];
      if (!any_ && t == 0) {
        raw_min_[c] = v;
        raw_max_[c] = v;
      }
      raw_min_[c] = std::min(raw_min_[c], v);
      raw_max_[c] = std::max(raw_max_[c], v);
      max_abs_[c] = std::max(max_abs_[c], std::abs(v));
    }
  }
  any_ = true;
}

NormStats NormStatsAccumulator::finish() const {
  if (!any_) throw ParameterError("norm stats: no meta-train data accumulated");
  NormStats s;
  s.scale.resize(static_cast<std::size_t>(channels_));
  s.post_min.resize(static_cast<std::size_t>(channels_));
  s.post_max.resize(static_cast<std::size_t>(channels_));
  for (int ch = 0; ch < channels_; ++ch) {
    const auto c = static_cast<std::size_t>(ch);
    const double scale = max_abs_[c] > 0.0 ? max_abs_[c] : 1.0;
    s.scale[c] = scale;
    s.post_min[c] = mu_law(raw_min_[c] / scale, mu_);
    s.post_max[c] = mu_law(raw_max_[c] / scale, mu_);
  }
  return s;
}

void apply_companding(std::span<float> samples, std::int64_t t_len, int channels,
                      const PreprocessConfig& cfg, const NormStats& stats,
                      ClampStats& clamps) {
  if (stats.channels() != channels)
    throw DimensionError("companding: stats cover " + std::to_string(stats.channels()) +
                         " channels, data has " + std::to_string(channels));
  for (std::int64_t t = 0; t < t_len; ++t) {
    float* row = samples.data() + t * channels;
    for (int ch = 0; ch < channels; ++ch) {
      const auto c = static_cast<std::size_t>(ch);
      const double scaled = row[ch] / stats.scale[c];
      const double companded = mu_law_clamped(scaled, cfg.mu, clamps.prescale_clamped);
      const double span = stats.post_max[c] - stats.post_min[c];
      double out;
      if (span <= 1e-300) {
        out = 0.5;
        ++clamps.degenerate_channels;
      } else {
        out = (companded - stats.post_min[c]) / span;
        if (out < 0.0) {
          out = 0.0;
          ++clamps.minmax_clamped;
        } else if (out > 1.0) {
          out = 1.0;
          ++clamps.minmax_clamped;
        }
      }
      row[ch] = static_cast<float>(out);
      ++clamps.total_samples;
    }
  }
}

void preprocess_samples(std::span<float> samples, std::int64_t t_len, int channels,
                        const PreprocessConfig& cfg, const NormStats& stats,
                        ClampStats& clamps) {
  cfg.validate();
  butterworth_lowpass_channels(samples, t_len, channels, cfg.fs, cfg.cutoff_hz);
  apply_companding(samples, t_len, channels, cfg, stats, clamps);
}

std::int64_t window_count(std::int64_t t_len, int window, int step) {
  if (window <= 0 || step <= 0) throw ParameterError("segmentation: window and step must be positive");
  if (t_len < window) return 0;
  return (t_len - window) / step + 1;
}

std::vector<std::int64_t> window_offsets(std::int64_t t_len, int window, int step) {
  const std::int64_t count = window_count(t_len, window, step);
  std::vector<std::int64_t> offs;
  offs.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) offs.push_back(i * step);
  return offs;
}

// --- FSN1 sidecar ---------------------------------------------------------
// "FSN1" | u32 channels | per channel: f64 scale, f64 post_min, f64 post_max

void NormStats::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write("FSN1", 4);
  io::write_u32(out, static_cast<std::uint32_t>(channels()));
  for (int ch = 0; ch < channels(); ++ch) {
    const auto c = static_cast<std::size_t>(ch);
    io::write_f64(out, scale[c]);
    io::write_f64(out, post_min[c]);
    io::write_f64(out, post_max[c]);
  }
  if (!out) throw FormatError("write failure on " + path.string());
}

NormStats NormStats::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "FSN1")
    throw FormatError(path.string() + ": bad magic, expected FSN1", 0);
  const std::uint32_t channels = io::read_u32(in, path.string());
  NormStats s;
  s.scale.resize(channels);
  s.post_min.resize(channels);
  s.post_max.resize(channels);
  for (std::uint32_t c = 0; c < channels; ++c) {
    s.scale[c] = io::read_f64(in, path.string());
    s.post_min[c] = io::read_f64(in, path.string());
    s.post_max[c] = io::read_f64(in, path.string());
  }
  return s;
}

}  // namespace fshgr
