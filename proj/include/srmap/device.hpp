#pragma once

// Hearing device model: a linked two-channel multiband dynamic compressor.
//
// The input is split by a zero-phase FFT filter bank whose band masks sum to
// exactly one. Each band's level is measured as RMS over short blocks and
// smoothed by an asymmetric one-pole filter in the dB domain (attack when
// rising, decay when falling). The smoothed level indexes a per-band gain
// curve; block gains are interpolated per sample and the bands are resummed.
// In linked mode the controlling level is max(L, R), so both ears receive
// identical gain trajectories.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "srmap/common.hpp"
#include "srmap/config.hpp"
#include "srmap/fft.hpp"
#include "srmap/signal.hpp"

namespace srmap::device {

struct Audiogram {
  std::vector<double> frequencies;       // Hz, ascending
  std::vector<double> thresholds_db_hl;  // one per frequency

  static Audiogram flat(double db_hl) {
    return {{250, 500, 1000, 2000, 4000, 6000}, std::vector<double>(6, db_hl)};
  }

  void validate() const {
    if (frequencies.empty() || frequencies.size() != thresholds_db_hl.size())
      throw ValidationError("audiogram: frequencies and thresholds must be non-empty and of equal length");
    for (std::size_t i = 1; i < frequencies.size(); ++i)
      if (!(frequencies[i] > frequencies[i - 1])) throw ValidationError("audiogram: frequencies must ascend");
    for (double t : thresholds_db_hl)
      if (!(t >= -10.0 && t <= 120.0)) throw ValidationError("audiogram: thresholds must lie in [-10, 120] dB HL");
  }

  /// Threshold at `f`, interpolated linearly over log frequency, flat outside.
  double at(double f) const {
    std::vector<double> logf(frequencies.size());
    for (std::size_t i = 0; i < frequencies.size(); ++i) logf[i] = std::log2(frequencies[i]);
    return interp_linear(logf, thresholds_db_hl, std::log2(f));
  }
};

/// Loads a named standard audiogram ("N1".."N7") from a key = value fixture
/// with a `frequencies` row. "flat:<dB>" yields a flat audiogram.
inline Audiogram load_audiogram(const std::string& name,
                                const std::filesystem::path& path = data_dir() / "audiograms.conf") {
  if (name.rfind("flat:", 0) == 0) {
    double v;
    if (!parse_double(name.substr(5), v)) throw ValidationError("audiogram: bad flat level '" + name + "'");
    return Audiogram::flat(v);
  }
  const auto cfg = KeyValueConfig::load(path);
  Audiogram a{cfg.numbers("frequencies"), cfg.numbers(name)};
  a.validate();
  return a;
}

/// Piecewise-linear input level (dB SPL) -> gain (dB) curve, flat extrapolation.
struct GainCurve {
  std::vector<double> input_db;
  std::vector<double> gain_db;

  double gain(double input_level_db) const { return interp_linear(input_db, gain_db, input_level_db); }

  void validate() const {
    if (input_db.empty() || input_db.size() != gain_db.size())
      throw ValidationError("gain curve: breakpoints must be non-empty and paired");
    for (std::size_t i = 1; i < input_db.size(); ++i)
      if (!(input_db[i] > input_db[i - 1])) throw ValidationError("gain curve: input levels must ascend");
    for (double g : gain_db)
      if (!std::isfinite(g)) throw ValidationError("gain curve: gains must be finite");
  }
};

using GainTable = std::vector<GainCurve>;  // one curve per band

enum class PrescriptionRule { half_gain_compressive };

inline PrescriptionRule parse_rule(std::string_view s) {
  if (s == "half_gain_compressive") return PrescriptionRule::half_gain_compressive;
  throw ValidationError("unknown prescription rule '" + std::string(s) + "'");
}

inline const std::vector<double>& default_band_centers() {
  static const std::vector<double> c = {250, 500, 1000, 2000, 4000, 6000};
  return c;
}

/// Half-gain compressive rule for one band with hearing loss `hl` (dB HL):
/// gain(65) = hl/2, 2:1 compression between 45 and 65 dB and above 65 dB,
/// constant gain below 45 dB, gain confined to [0, hl], output limited to
/// 100 dB SPL.
inline double half_gain_compressive(double hl, double input_db) {
  const double g65 = 0.5 * hl;
  double g = g65 + 0.5 * (65.0 - std::max(input_db, 45.0));
  g = std::clamp(g, 0.0, std::max(hl, 0.0));
  return std::min(g, std::max(0.0, 100.0 - input_db));
}

inline GainTable prescribe_gains(const Audiogram& audiogram, PrescriptionRule rule,
                                 const std::vector<double>& band_centers = default_band_centers()) {
  audiogram.validate();
  GainTable table;
  for (double fc : band_centers) {
    const double hl = audiogram.at(fc);
    GainCurve curve;
    for (int l = 0; l <= 140; ++l) {
      curve.input_db.push_back(l);
      switch (rule) {
        case PrescriptionRule::half_gain_compressive:
          curve.gain_db.push_back(half_gain_compressive(hl, l));
          break;
      }
    }
    table.push_back(std::move(curve));
  }
  return table;
}

inline GainTable zero_gain_table(std::size_t bands) { return GainTable(bands, GainCurve{{0.0}, {0.0}}); }

struct DeviceConfig {
  std::vector<double> band_centers = default_band_centers();
  double attack_ms = 50.0;
  double decay_ms = 500.0;
  double block_ms = 4.0;
  bool linked = true;
  double calibration_db = kDefaultCalibration;
  GainTable gains = zero_gain_table(6);

  void validate() const {
    if (band_centers.empty()) throw ValidationError("device: no bands");
    for (std::size_t i = 1; i < band_centers.size(); ++i)
      if (!(band_centers[i] > band_centers[i - 1])) throw ValidationError("device: band centers must increase");
    if (gains.size() != band_centers.size()) throw ValidationError("device: one gain curve per band required");
    for (const auto& g : gains) g.validate();
    if (!(attack_ms > 0.0 && decay_ms > 0.0 && block_ms > 0.0))
      throw ValidationError("device: time constants must be positive");
  }

  /// Reads the declarative device description. Either `audiogram` (+ optional
  /// `prescription`) or an explicit `gain_input_db` row with one `gain_<Hz>`
  /// row per band defines the gains.
  static DeviceConfig from(const KeyValueConfig& kv,
                           const std::filesystem::path& audiograms = data_dir() / "audiograms.conf") {
    DeviceConfig c;
    if (kv.has("band_centers")) c.band_centers = kv.numbers("band_centers");
    c.attack_ms = kv.number_or("attack_ms", c.attack_ms);
    c.decay_ms = kv.number_or("decay_ms", c.decay_ms);
    c.block_ms = kv.number_or("block_ms", c.block_ms);
    c.calibration_db = kv.number_or("calibration_db", c.calibration_db);
    c.linked = kv.number_or("linked", 1.0) != 0.0;
    if (kv.has("gain_input_db")) {
      c.gains.clear();
      const auto in = kv.numbers("gain_input_db");
      for (double fc : c.band_centers) {
        const std::string key = "gain_" + format_number(fc);
        c.gains.push_back({in, kv.numbers(key)});
      }
    } else if (kv.has("audiogram")) {
      const auto rule = parse_rule(kv.has("prescription") ? kv.get("prescription") : "half_gain_compressive");
      c.gains = prescribe_gains(load_audiogram(kv.get("audiogram"), audiograms), rule, c.band_centers);
    } else {
      c.gains = zero_gain_table(c.band_centers.size());
    }
    c.validate();
    return c;
  }

  static DeviceConfig load(const std::filesystem::path& path) {
    return from(KeyValueConfig::load(path), path.parent_path() / "audiograms.conf");
  }
};

// Filter bank ---------------------------------------------------------------------

/// Crossover masks over rfft bins. Band b = LP_b - LP_{b-1} with raised-cosine
/// lowpass transitions (in log frequency) at the geometric means between
/// centers; the masks telescope to exactly one.
inline std::vector<std::vector<double>> band_masks(const std::vector<double>& centers, int sample_rate,
                                                   std::size_t nfft) {
  const std::size_t bins = nfft / 2 + 1;
  const std::size_t nb = centers.size();
  std::vector<std::vector<double>> lowpass;  // nb - 1 crossovers
  for (std::size_t i = 0; i + 1 < nb; ++i) {
    const double xo = std::sqrt(centers[i] * centers[i + 1]);
    const double half_width = std::min(0.25, 0.45 * std::log2(centers[i + 1] / centers[i]));
    std::vector<double> lp(bins);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(nfft);
      if (k == 0) {
        lp[k] = 1.0;
        continue;
      }
      const double t = std::clamp(std::log2(f / xo) / half_width, -1.0, 1.0);
      lp[k] = 0.5 * (1.0 - std::sin(0.5 * kPi * t));
    }
    lowpass.push_back(std::move(lp));
  }
  std::vector<std::vector<double>> masks(nb, std::vector<double>(bins));
  for (std::size_t k = 0; k < bins; ++k)
    for (std::size_t b = 0; b < nb; ++b) {
      const double upper = b + 1 < nb ? lowpass[b][k] : 1.0;
      const double lower = b > 0 ? lowpass[b - 1][k] : 0.0;
      masks[b][k] = upper - lower;
    }
  return masks;
}

namespace detail {

inline const std::vector<std::vector<double>>& cached_masks(const std::vector<double>& centers, int sample_rate,
                                                            std::size_t nfft) {
  static std::mutex mutex;
  static std::map<std::tuple<std::vector<double>, int, std::size_t>, std::vector<std::vector<double>>> cache;
  std::lock_guard lock(mutex);
  auto key = std::make_tuple(centers, sample_rate, nfft);
  auto it = cache.find(key);
  if (it == cache.end()) {
    if (cache.size() > 32) cache.clear();
    it = cache.emplace(key, band_masks(centers, sample_rate, nfft)).first;
  }
  return it->second;
}

}  // namespace detail

/// Splits one channel into bands; the bands sum back to the input.
inline std::vector<std::vector<double>> split_bands(std::span<const double> x, const std::vector<double>& centers,
                                                    int sample_rate) {
  const std::size_t n = x.size();
  const std::size_t nfft = fft::good_size(n + 4096);
  const auto& masks = detail::cached_masks(centers, sample_rate, nfft);
  const auto spec = fft::rfft(x, nfft);
  std::vector<std::vector<double>> out;
  for (const auto& m : masks) {
    auto s = spec;
    for (std::size_t k = 0; k < s.size(); ++k) s[k] *= m[k];
    auto y = fft::irfft(std::move(s), nfft);
    y.resize(n);
    out.push_back(std::move(y));
  }
  return out;
}

// Envelope tracking ---------------------------------------------------------------

struct Envelopes {
  std::size_t block = 0;  // samples per block
  // [channel][band][block], smoothed levels in dB SPL
  std::array<std::vector<std::vector<double>>, 2> levels;
};

namespace detail {

inline std::vector<double> block_levels(std::span<const double> band, std::size_t block, double calibration) {
  const std::size_t nblocks = (band.size() + block - 1) / block;
  std::vector<double> out(nblocks);
  for (std::size_t k = 0; k < nblocks; ++k) {
    const std::size_t b = k * block, e = std::min(band.size(), b + block);
    double acc = 0.0;
    for (std::size_t i = b; i < e; ++i) acc += band[i] * band[i];
    out[k] = 10.0 * std::log10(acc / static_cast<double>(e - b) + 1e-20) + calibration;
  }
  return out;
}

inline std::vector<double> smooth(const std::vector<double>& raw, double alpha_attack, double alpha_decay) {
  std::vector<double> out(raw.size());
  double e = raw.empty() ? 0.0 : raw.front();
  for (std::size_t k = 0; k < raw.size(); ++k) {
    e += (raw[k] > e ? alpha_attack : alpha_decay) * (raw[k] - e);
    out[k] = e;
  }
  return out;
}

}  // namespace detail

inline void check_calibrated(const BinauralSignal& x, const DeviceConfig& cfg) {
  x.check();
  if (std::abs(x.calibration_db - cfg.calibration_db) > 1e-9)
    throw ValidationError("compress: input calibration " + format_number(x.calibration_db) +
                          " dB SPL does not match the device calibration " + format_number(cfg.calibration_db));
}

/// Smoothed band levels of an already band-split signal ([channel][band][sample]).
inline Envelopes band_envelopes(const std::array<std::vector<std::vector<double>>, 2>& bands, int sample_rate,
                                const DeviceConfig& cfg) {
  Envelopes env;
  env.block = static_cast<std::size_t>(std::max<long long>(1, std::llround(cfg.block_ms * sample_rate / 1000.0)));
  const double block_s = static_cast<double>(env.block) / sample_rate;
  const double a_att = 1.0 - std::exp(-block_s / (cfg.attack_ms / 1000.0));
  const double a_dec = 1.0 - std::exp(-block_s / (cfg.decay_ms / 1000.0));
  const std::size_t nb = cfg.band_centers.size();
  for (int c = 0; c < 2; ++c) env.levels[c].resize(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    auto l = detail::block_levels(bands[0][b], env.block, cfg.calibration_db);
    auto r = detail::block_levels(bands[1][b], env.block, cfg.calibration_db);
    if (cfg.linked) {
      for (std::size_t k = 0; k < l.size(); ++k) l[k] = std::max(l[k], r[k]);
      env.levels[0][b] = detail::smooth(l, a_att, a_dec);
      env.levels[1][b] = env.levels[0][b];
    } else {
      env.levels[0][b] = detail::smooth(l, a_att, a_dec);
      env.levels[1][b] = detail::smooth(r, a_att, a_dec);
    }
  }
  return env;
}

inline Envelopes band_envelopes(const BinauralSignal& x, const DeviceConfig& cfg) {
  check_calibrated(x, cfg);
  std::array<std::vector<std::vector<double>>, 2> bands;
  for (int c = 0; c < 2; ++c) bands[c] = split_bands(x.channels[c], cfg.band_centers, x.sample_rate);
  return band_envelopes(bands, x.sample_rate, cfg);
}

inline BinauralSignal compress(const BinauralSignal& x, const DeviceConfig& cfg) {
  cfg.validate();
  check_calibrated(x, cfg);
  const std::size_t n = x.size();
  std::array<std::vector<std::vector<double>>, 2> bands;
  for (int c = 0; c < 2; ++c) bands[c] = split_bands(x.channels[c], cfg.band_centers, x.sample_rate);
  const auto env = band_envelopes(bands, x.sample_rate, cfg);
  BinauralSignal out(n, x.sample_rate, x.calibration_db);
  const double half = 0.5 * static_cast<double>(env.block);
  for (int c = 0; c < 2; ++c)
    for (std::size_t b = 0; b < cfg.band_centers.size(); ++b) {
      const auto& lv = env.levels[c][b];
      std::vector<double> g(lv.size());
      for (std::size_t k = 0; k < lv.size(); ++k) g[k] = db_to_amplitude(cfg.gains[b].gain(lv[k]));
      const auto& band = bands[c][b];
      for (std::size_t i = 0; i < n; ++i) {
        // interpolate between block centers
        const double pos = (static_cast<double>(i) + 0.5 - half) / static_cast<double>(env.block);
        double gain;
        if (pos <= 0.0) {
          gain = g.front();
        } else {
          const auto k = static_cast<std::size_t>(pos);
          gain = k + 1 < g.size() ? g[k] + (pos - static_cast<double>(k)) * (g[k + 1] - g[k]) : g.back();
        }
        out.channels[c][i] += gain * band[i];
      }
    }
  return out;
}

// Batch processing ----------------------------------------------------------------

struct BatchReport {
  std::vector<std::size_t> processed;
  std::vector<std::pair<std::size_t, std::string>> errors;
};

inline std::vector<std::string> read_list(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("batch_process: cannot open list " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    auto t = trim(line);
    if (!t.empty()) lines.emplace_back(t);
  }
  return lines;
}

/// Processes items offset, offset + increment, ... of the source list into the
/// corresponding target paths. Failing items are reported and skipped.
inline BatchReport batch_process(const std::filesystem::path& source_list, const std::filesystem::path& target_list,
                                 std::size_t increment, std::size_t offset, const DeviceConfig& cfg) {
  if (increment < 1) throw ValidationError("batch_process: increment must be >= 1");
  if (offset >= increment) throw ValidationError("batch_process: offset must be < increment");
  const auto sources = read_list(source_list);
  const auto targets = read_list(target_list);
  if (sources.size() != targets.size())
    throw ValidationError("batch_process: source list has " + std::to_string(sources.size()) +
                          " entries, target list " + std::to_string(targets.size()));
  BatchReport report;
  for (std::size_t i = offset; i < sources.size(); i += increment) {
    try {
      auto in = wav::read_binaural(sources[i]);
      in.calibration_db = cfg.calibration_db;
      wav::write(targets[i], compress(in, cfg));
      report.processed.push_back(i);
    } catch (const std::exception& e) {
      report.errors.emplace_back(i, e.what());
    }
  }
  return report;
}

}  // namespace srmap::device
