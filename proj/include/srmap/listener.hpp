#pragma once

// Listener front end: calibrated log-Mel spectrogram per ear, hearing loss
// (hard threshold floor plus Gaussian level uncertainty), and binaural
// feature assembly [left ; right ; left - right].

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "srmap/common.hpp"
#include "srmap/config.hpp"
#include "srmap/device.hpp"
#include "srmap/fft.hpp"
#include "srmap/signal.hpp"

namespace srmap::listener {

/// Band level assigned to digital silence before any flooring.
inline constexpr double kSilenceDb = -100.0;

struct MelConfig {
  int sample_rate = kDefaultSampleRate;
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  int bands = 20;
  double f_min = 64.0;
  double f_max = 8000.0;
  std::size_t nfft = 512;
};

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Triangular mel filters with unit peak; adjacent triangles sum to one
/// between the first and last center.
class MelFilterbank {
 public:
  explicit MelFilterbank(MelConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.f_max > cfg_.sample_rate / 2.0 + 1e-9)
      throw ValidationError("mel filterbank: upper edge above Nyquist for sample rate " +
                            std::to_string(cfg_.sample_rate));
    frame_len_ = static_cast<std::size_t>(std::llround(cfg_.frame_ms * cfg_.sample_rate / 1000.0));
    hop_ = static_cast<std::size_t>(std::llround(cfg_.hop_ms * cfg_.sample_rate / 1000.0));
    if (cfg_.nfft < frame_len_) cfg_.nfft = fft::next_pow2(frame_len_);
    const double lo = hz_to_mel(cfg_.f_min), hi = hz_to_mel(cfg_.f_max);
    std::vector<double> edges(static_cast<std::size_t>(cfg_.bands) + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
      edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg_.bands + 1));
    centers_.assign(edges.begin() + 1, edges.end() - 1);
    const std::size_t bins = cfg_.nfft / 2 + 1;
    weights_.assign(static_cast<std::size_t>(cfg_.bands), std::vector<double>(bins, 0.0));
    for (int b = 0; b < cfg_.bands; ++b) {
      const double f0 = edges[static_cast<std::size_t>(b)], f1 = edges[static_cast<std::size_t>(b) + 1],
                   f2 = edges[static_cast<std::size_t>(b) + 2];
      for (std::size_t k = 0; k < bins; ++k) {
        const double f = static_cast<double>(k) * cfg_.sample_rate / static_cast<double>(cfg_.nfft);
        double w = 0.0;
        if (f > f0 && f <= f1) w = (f - f0) / (f1 - f0);
        else if (f > f1 && f < f2) w = (f2 - f) / (f2 - f1);
        weights_[static_cast<std::size_t>(b)][k] = w;
      }
    }
    for (const auto& w : weights_) {
      std::size_t lo = 0, hi = 0;
      for (std::size_t k = 0; k < w.size(); ++k)
        if (w[k] != 0.0) {
          if (hi == 0) lo = k;
          hi = k + 1;
        }
      support_.emplace_back(lo, hi);
    }
    window_.resize(frame_len_);
    double wsq = 0.0;
    for (std::size_t n = 0; n < frame_len_; ++n) {
      window_[n] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(n) / static_cast<double>(frame_len_));
      wsq += window_[n] * window_[n];
    }
    // one-sided power spectrum -> mean square of the windowed frame
    power_scale_ = 1.0 / (static_cast<double>(cfg_.nfft) * wsq);
  }

  const MelConfig& config() const { return cfg_; }
  int bands() const { return cfg_.bands; }
  std::size_t frame_length() const { return frame_len_; }
  std::size_t hop() const { return hop_; }
  const std::vector<double>& centers() const { return centers_; }
  double weight(int band, std::size_t bin) const { return weights_[static_cast<std::size_t>(band)][bin]; }

  std::size_t frame_count(std::size_t samples) const {
    return samples < frame_len_ ? 0 : 1 + (samples - frame_len_) / hop_;
  }

  /// Band levels (dB SPL) of every frame of one calibrated channel, frame-major.
  std::vector<double> analyze(std::span<const double> x, double calibration_db) const {
    const std::size_t frames = frame_count(x.size());
    const std::size_t nb = static_cast<std::size_t>(cfg_.bands);
    std::vector<double> out(frames * nb);
    std::vector<double> buf(frame_len_);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t n = 0; n < frame_len_; ++n) buf[n] = x[t * hop_ + n] * window_[n];
      const auto spec = fft::rfft(buf, cfg_.nfft);
      const std::size_t last = spec.size() - 1;
      for (std::size_t b = 0; b < nb; ++b) {
        double e = 0.0;
        const auto& w = weights_[b];
        for (std::size_t k = support_[b].first; k < support_[b].second; ++k) {
          const double side = (k == 0 || k == last) ? 1.0 : 2.0;
          e += w[k] * side * std::norm(spec[k]);
        }
        e *= power_scale_;
        out[t * nb + b] = e > 0.0 ? std::max(power_to_db(e) + calibration_db, kSilenceDb) : kSilenceDb;
      }
    }
    return out;
  }

 private:
  MelConfig cfg_;
  std::size_t frame_len_ = 0;
  std::size_t hop_ = 0;
  std::vector<double> centers_;
  std::vector<std::vector<double>> weights_;
  std::vector<std::pair<std::size_t, std::size_t>> support_;  // nonzero bin range per band
  std::vector<double> window_;
  double power_scale_ = 1.0;
};

struct LogMelGram {
  std::size_t frames = 0;
  std::size_t bands = 0;
  double frame_hop_ms = 10.0;
  std::vector<double> band_centers;
  std::vector<double> levels;  // frames x bands, dB SPL

  double& at(std::size_t t, std::size_t b) { return levels[t * bands + b]; }
  double at(std::size_t t, std::size_t b) const { return levels[t * bands + b]; }
};

inline std::pair<LogMelGram, LogMelGram> log_mel(const BinauralSignal& x, const MelFilterbank& fb) {
  x.check();
  if (x.sample_rate != fb.config().sample_rate)
    throw ValidationError("log_mel: signal sample rate " + std::to_string(x.sample_rate) +
                          " does not match filterbank design " + std::to_string(fb.config().sample_rate));
  auto make = [&](const std::vector<double>& ch) {
    LogMelGram g;
    g.bands = static_cast<std::size_t>(fb.bands());
    g.frames = fb.frame_count(ch.size());
    g.frame_hop_ms = fb.config().hop_ms;
    g.band_centers = fb.centers();
    g.levels = fb.analyze(ch, x.calibration_db);
    return g;
  };
  return {make(x.channels[0]), make(x.channels[1])};
}

// Profiles --------------------------------------------------------------------------

enum class ProfileName { normal, impaired_unaided, impaired_aided };

inline std::string to_string(ProfileName p) {
  switch (p) {
    case ProfileName::normal: return "normal";
    case ProfileName::impaired_unaided: return "impaired_unaided";
    case ProfileName::impaired_aided: return "impaired_aided";
  }
  return "?";
}

inline std::optional<ProfileName> parse_profile(std::string_view s) {
  if (s == "normal") return ProfileName::normal;
  if (s == "impaired_unaided") return ProfileName::impaired_unaided;
  if (s == "impaired_aided") return ProfileName::impaired_aided;
  return std::nullopt;
}

enum class DegradationOrder { noise_then_floor, floor_then_noise };

struct ListenerProfile {
  ProfileName name = ProfileName::normal;
  std::vector<double> thresholds_db_spl;  // one per mel band
  double level_uncertainty_db = 1.0;
  bool aided = false;
  DegradationOrder order = DegradationOrder::floor_then_noise;

  void validate() const {
    if (!(level_uncertainty_db > 0.0)) throw ValidationError("listener profile: level uncertainty must be > 0");
    for (double t : thresholds_db_spl)
      if (std::isnan(t)) throw ValidationError("listener profile: thresholds must not be NaN");
  }
};

/// Reference thresholds (dB SPL) for converting dB HL.
struct ReferenceThresholds {
  std::vector<double> frequencies;
  std::vector<double> db_spl;

  static ReferenceThresholds load(const std::filesystem::path& path = data_dir() / "maf.conf") {
    const auto kv = KeyValueConfig::load(path);
    ReferenceThresholds r{kv.numbers("frequencies"), kv.numbers("threshold_db_spl")};
    if (r.frequencies.size() != r.db_spl.size() || r.frequencies.empty())
      throw ValidationError("reference thresholds: table size mismatch");
    return r;
  }

  double at(double f) const {
    std::vector<double> logf(frequencies.size());
    for (std::size_t i = 0; i < frequencies.size(); ++i) logf[i] = std::log2(frequencies[i]);
    return interp_linear(logf, db_spl, std::log2(f));
  }
};

/// Per-band floors: audiogram (dB HL) interpolated onto the band centers plus
/// the reference threshold at each center.
inline std::vector<double> band_thresholds(const device::Audiogram& a, const std::vector<double>& centers,
                                           const ReferenceThresholds& ref) {
  std::vector<double> out;
  out.reserve(centers.size());
  for (double f : centers) out.push_back(a.at(f) + ref.at(f));
  return out;
}

struct ProfileSettings {
  std::string impaired_audiogram = "N3";
  double normal_uncertainty_db = 1.0;
  double impaired_uncertainty_db = 10.0;
  DegradationOrder order = DegradationOrder::floor_then_noise;
};

inline ListenerProfile make_profile(ProfileName name, const std::vector<double>& band_centers,
                                    const ProfileSettings& s = {},
                                    const std::filesystem::path& dir = data_dir()) {
  const auto ref = ReferenceThresholds::load(dir / "maf.conf");
  ListenerProfile p;
  p.name = name;
  p.order = s.order;
  if (name == ProfileName::normal) {
    p.thresholds_db_spl = band_thresholds(device::Audiogram::flat(0.0), band_centers, ref);
    p.level_uncertainty_db = s.normal_uncertainty_db;
  } else {
    p.thresholds_db_spl =
        band_thresholds(device::load_audiogram(s.impaired_audiogram, dir / "audiograms.conf"), band_centers, ref);
    p.level_uncertainty_db = s.impaired_uncertainty_db;
    p.aided = name == ProfileName::impaired_aided;
  }
  return p;
}

/// Floor first (default): out = max(in, threshold) + e, so nothing below the
/// threshold survives. Noise first: out = max(in + e, threshold).
/// e ~ N(0, sigma^2) i.i.d. per cell.
inline LogMelGram apply_hearing_loss(const LogMelGram& g, const ListenerProfile& p, std::mt19937_64& rng) {
  if (p.thresholds_db_spl.size() != g.bands)
    throw ValidationError("apply_hearing_loss: profile has " + std::to_string(p.thresholds_db_spl.size()) +
                          " thresholds for " + std::to_string(g.bands) + " bands");
  LogMelGram out = g;
  std::normal_distribution<double> gauss(0.0, p.level_uncertainty_db);
  for (std::size_t t = 0; t < g.frames; ++t)
    for (std::size_t b = 0; b < g.bands; ++b) {
      const double thr = p.thresholds_db_spl[b];
      const double e = gauss(rng);
      double& v = out.at(t, b);
      v = p.order == DegradationOrder::noise_then_floor ? std::max(v + e, thr) : std::max(v, thr) + e;
    }
  return out;
}

// Features --------------------------------------------------------------------------

struct FeatureSequence {
  std::size_t frames = 0;
  std::size_t dims = 0;
  std::vector<double> values;  // frames x dims

  std::span<const double> row(std::size_t t) const { return {values.data() + t * dims, dims}; }
  std::span<double> row(std::size_t t) { return {values.data() + t * dims, dims}; }
};

inline FeatureSequence binaural_features(const LogMelGram& left, const LogMelGram& right) {
  if (left.frames != right.frames || left.bands != right.bands)
    throw ValidationError("binaural_features: left and right spectrograms differ in shape");
  FeatureSequence f;
  f.frames = left.frames;
  f.dims = 3 * left.bands;
  f.values.resize(f.frames * f.dims);
  for (std::size_t t = 0; t < f.frames; ++t) {
    auto r = f.row(t);
    for (std::size_t b = 0; b < left.bands; ++b) {
      r[b] = left.at(t, b);
      r[left.bands + b] = right.at(t, b);
      r[2 * left.bands + b] = left.at(t, b) - right.at(t, b);
    }
  }
  return f;
}

// Feature dump: "SRMF", u32 version = 1, u32 frames, u32 dims, then
// frames * dims little-endian float32 values, row-major.

inline void write_features(const std::filesystem::path& path, const FeatureSequence& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("write_features: cannot open " + path.string());
  auto put = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  os.write("SRMF", 4);
  put(1);
  put(static_cast<std::uint32_t>(f.frames));
  put(static_cast<std::uint32_t>(f.dims));
  for (double v : f.values) {
    const float x = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &x, 4);
    put(bits);
  }
}

inline FeatureSequence read_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("read_features: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SRMF", 4) != 0) throw ParseError("read_features: bad magic in " + path.string());
  auto get = [&]() {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw ParseError("read_features: truncated file " + path.string());
    return static_cast<std::uint32_t>(b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24));
  };
  if (get() != 1) throw ParseError("read_features: unsupported version");
  FeatureSequence f;
  f.frames = get();
  f.dims = get();
  f.values.resize(f.frames * f.dims);
  for (double& v : f.values) {
    const std::uint32_t bits = get();
    float x;
    std::memcpy(&x, &bits, 4);
    v = x;
  }
  return f;
}

}  // namespace srmap::listener
