#pragma once

// Room acoustic rendering: shoebox image sources up to a fixed reflection
// order, a seeded exponentially decaying diffuse tail, and an ORTF receiver
// (two cardioids, 17 cm apart, +-55 deg). ITD comes from per-capsule
// fractional delays (linear interpolation), ILD from cardioid directivity
// and 1/r spreading.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "srmap/common.hpp"
#include "srmap/fft.hpp"
#include "srmap/scene.hpp"
#include "srmap/signal.hpp"

namespace srmap::render {

struct RenderOptions {
  int reflection_order = 2;
  double r_min_m = 0.2;
  double ir_duration_s = 1.0;
  double tail_onset_s = 0.005;  // after the earliest direct-path arrival
};

inline double cardioid_gain(double angle_rad) { return 0.5 * (1.0 + std::cos(angle_rad)); }

struct ImageSource {
  Vec3 position;
  double gain = 0.0;
  int reflections = 0;
};

/// Direct path plus mirror images of `src` in a shoebox room with total
/// reflection count <= order. gain = reflection^k / max(r, r_min), where r is
/// the image-to-receiver distance.
inline std::vector<ImageSource> image_sources(const scene::Room& room, Vec3 src, Vec3 receiver,
                                              int order, double r_min = 0.2) {
  if (order < 0 || order > 3) throw ValidationError("image_sources: order must lie in [0, 3]");
  if (!room.contains(src)) throw ValidationError("image_sources: source lies outside the room");

  struct AxisImage {
    double coord;
    int reflections;
  };
  auto axis_images = [order](double lo, double hi, double u_abs) {
    const double len = hi - lo;
    const double u = u_abs - lo;
    std::vector<AxisImage> out;
    for (int n = -order; n <= order; ++n) {
      if (std::abs(2 * n) <= order) out.push_back({lo + 2.0 * n * len + u, std::abs(2 * n)});
      if (std::abs(2 * n - 1) <= order) out.push_back({lo + 2.0 * n * len - u, std::abs(2 * n - 1)});
    }
    return out;
  };
  const auto xs = axis_images(room.min.x, room.max.x, src.x);
  const auto ys = axis_images(room.min.y, room.max.y, src.y);
  const auto zs = axis_images(room.min.z, room.max.z, src.z);

  std::vector<ImageSource> out;
  for (const auto& ix : xs)
    for (const auto& iy : ys)
      for (const auto& iz : zs) {
        const int k = ix.reflections + iy.reflections + iz.reflections;
        if (k > order) continue;
        ImageSource img;
        img.position = {ix.coord, iy.coord, iz.coord};
        img.reflections = k;
        const double r = (img.position - receiver).norm();
        img.gain = std::pow(room.reflection, k) / std::max(r, r_min);
        out.push_back(img);
      }
  std::stable_sort(out.begin(), out.end(),
                   [](const ImageSource& a, const ImageSource& b) { return a.reflections < b.reflections; });
  return out;
}

struct OrtfReceiver {
  Vec3 position;
  double look_bearing_deg = 0.0;
  double capsule_spacing_m = 0.17;
  double capsule_angle_deg = 55.0;

  static OrtfReceiver from(const scene::Receiver& r) {
    OrtfReceiver o;
    o.position = r.position;
    o.look_bearing_deg = r.look_bearing_deg();
    return o;
  }

  static double side(Ear e) { return e == Ear::left ? 1.0 : -1.0; }

  Vec3 capsule_position(Ear e) const {
    return position + (0.5 * capsule_spacing_m) * bearing_vector(look_bearing_deg + side(e) * 90.0);
  }
  Vec3 capsule_axis(Ear e) const { return bearing_vector(look_bearing_deg + side(e) * capsule_angle_deg); }

  /// Cardioid gain of one capsule for sound arriving from `from`.
  double directivity(Ear e, Vec3 from) const {
    const Vec3 d = from - capsule_position(e);
    const double r = d.norm();
    if (r <= 0.0) return 1.0;
    const double c = std::clamp(d.dot(capsule_axis(e)) / r, -1.0, 1.0);
    return 0.5 * (1.0 + c);
  }
};

namespace detail {

inline void add_fractional_tap(std::vector<double>& ir, double delay_samples, double gain) {
  const double fl = std::floor(delay_samples);
  const auto i = static_cast<std::size_t>(fl);
  const double frac = delay_samples - fl;
  if (i < ir.size()) ir[i] += gain * (1.0 - frac);
  if (i + 1 < ir.size()) ir[i + 1] += gain * frac;
}

inline const scene::Room& receiver_room(const scene::SceneInstance& inst) {
  const auto* room = inst.room_containing(inst.receiver.position);
  if (!room) throw ValidationError("render: receiver lies outside every room");
  return *room;
}

}  // namespace detail

/// Deterministic early part (image sources through the ORTF capsules). Returns
/// the earliest direct-path arrival in samples through `first_arrival`.
inline ImpulseResponsePair early_response(const scene::Room& room, Vec3 src, const OrtfReceiver& rcv,
                                          int sample_rate, const RenderOptions& opt,
                                          double* first_arrival = nullptr) {
  ImpulseResponsePair out;
  out.sample_rate = sample_rate;
  out.probe_position = src;
  const auto len = static_cast<std::size_t>(std::llround(opt.ir_duration_s * sample_rate));
  const auto images = image_sources(room, src, rcv.position, opt.reflection_order, opt.r_min_m);
  double earliest = 1e300;
  for (Ear e : {Ear::left, Ear::right}) {
    auto& ir = out.ir[static_cast<int>(e)];
    ir.assign(len, 0.0);
    const Vec3 cap = rcv.capsule_position(e);
    for (const auto& img : images) {
      const double r = (img.position - cap).norm();
      const double delay = r / kSpeedOfSound * sample_rate;
      const double gain =
          std::pow(room.reflection, img.reflections) / std::max(r, opt.r_min_m) * rcv.directivity(e, img.position);
      detail::add_fractional_tap(ir, delay, gain);
      if (img.reflections == 0) earliest = std::min(earliest, delay);
    }
  }
  if (first_arrival) *first_arrival = earliest;
  return out;
}

/// Adds independent exponentially decaying Gaussian noise to both channels,
/// starting at `onset` samples. Total expected tail energy per channel is
/// 10^(level_db/10) (relative to a unit direct path at 1 m).
inline void add_late_tail(ImpulseResponsePair& ir, std::size_t onset, const scene::ReverbSpec& rev,
                          std::uint64_t seed) {
  if (!rev.enabled) return;
  const double fs = ir.sample_rate;
  const double decay = std::log(1000.0) / (rev.rt60_s * fs);  // amplitude decay per sample
  const double series = 1.0 / (1.0 - std::exp(-2.0 * decay));
  const double amp = std::sqrt(std::pow(10.0, rev.level_db / 10.0) / series);
  for (int c = 0; c < 2; ++c) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto& h = ir.ir[c];
    for (std::size_t n = onset; n < h.size(); ++n)
      h[n] += amp * std::exp(-decay * static_cast<double>(n - onset)) * gauss(rng);
  }
}

/// Source-to-ear response including the seeded tail.
inline ImpulseResponsePair propagation_response(const scene::SceneInstance& inst, Vec3 src,
                                                std::uint64_t seed, const RenderOptions& opt) {
  const auto& room = detail::receiver_room(inst);
  if (!room.contains(src)) throw ValidationError("render: source lies outside the receiver's room");
  const auto rcv = OrtfReceiver::from(inst.receiver);
  double first = 0.0;
  auto ir = early_response(room, src, rcv, inst.sample_rate, opt, &first);
  const auto onset = static_cast<std::size_t>(std::floor(first)) +
                     static_cast<std::size_t>(std::llround(opt.tail_onset_s * inst.sample_rate));
  add_late_tail(ir, onset, inst.reverb, seed);
  return ir;
}

/// Impulse responses from `probe` to both ears, `repeats` realizations that
/// share the early part and differ in the seeded tail.
inline std::vector<ImpulseResponsePair> render_hrir(const scene::SceneInstance& inst, Vec3 probe, int repeats,
                                                    std::uint64_t seed, const RenderOptions& opt = {}) {
  if (inst.mode != scene::RenderMode::hrir) throw ValidationError("render_hrir: scene is not in hrir mode");
  if (repeats < 1) throw ValidationError("render_hrir: repeats must be >= 1");
  const auto& room = detail::receiver_room(inst);
  if (!room.contains(probe)) throw ValidationError("render_hrir: probe position lies outside the geometry");
  std::vector<ImpulseResponsePair> out;
  out.reserve(static_cast<std::size_t>(repeats));
  for (int r = 0; r < repeats; ++r) {
    auto ir = propagation_response(inst, probe, mix_seed(seed ^ inst.reverb.seed, static_cast<std::uint64_t>(r)), opt);
    ir.realization_index = r;
    ir.probe_position = probe;
    out.push_back(std::move(ir));
  }
  return out;
}

// Source signal generators -----------------------------------------------------

namespace detail {

inline std::vector<double> shaped_noise(std::uint64_t seed, std::size_t n, int fs,
                                        double (*magnitude)(double)) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = gauss(rng);
  const std::size_t nfft = fft::next_pow2(n);
  auto spec = fft::rfft(x, nfft);
  for (std::size_t k = 0; k < spec.size(); ++k)
    spec[k] *= magnitude(static_cast<double>(k) * fs / static_cast<double>(nfft));
  auto y = fft::irfft(std::move(spec), nfft);
  y.resize(n);
  return y;
}

// Long-term average speech spectrum approximation: flat 100-500 Hz, -7 dB/oct above.
inline double speech_shape(double f) {
  if (f < 1.0) return 0.0;
  double m = f < 100.0 ? (f / 100.0) * (f / 100.0) : 1.0;
  if (f > 500.0) m *= std::pow(500.0 / f, 7.0 / 6.0);
  return m;
}

inline double dishwasher_shape(double f) {
  if (f < 30.0) return 0.0;
  if (f < 1500.0) return 1.0;
  if (f < 2000.0) return 0.5 * (1.0 + std::cos(kPi * (f - 1500.0) / 500.0));
  return 0.0;
}

inline void normalize_rms(std::vector<double>& x, double target) {
  const double r = rms(x);
  if (r > 0.0)
    for (double& v : x) v *= target / r;
}

}  // namespace detail

/// `n` samples of a source signal calibrated to `level_db` RMS (dB SPL at 1 m).
inline std::vector<double> generate_source_signal(scene::SignalKind kind, double level_db, std::uint64_t seed,
                                                  int sample_rate, std::size_t n,
                                                  double calibration_db = kDefaultCalibration) {
  const double target = db_to_amplitude(level_db - calibration_db);
  std::vector<double> x;
  switch (kind) {
    case scene::SignalKind::impulse:
      x.assign(n, 0.0);
      if (n > 0) x[0] = target;
      return x;
    case scene::SignalKind::tv:
    case scene::SignalKind::conversation: {
      x = detail::shaped_noise(seed, n, sample_rate, detail::speech_shape);
      const double rate_hz = kind == scene::SignalKind::tv ? 4.0 : 3.0;
      const double phase = static_cast<double>(mix_seed(seed, 99) % 6283) / 1000.0;
      for (std::size_t i = 0; i < n; ++i)
        x[i] *= 1.0 + 0.8 * std::sin(2.0 * kPi * rate_hz * static_cast<double>(i) / sample_rate + phase);
      break;
    }
    case scene::SignalKind::dishwasher:
      x = detail::shaped_noise(seed, n, sample_rate, detail::dishwasher_shape);
      break;
  }
  detail::normalize_rms(x, target);
  return x;
}

/// Binaural recording of all unmuted sources over [start_s, start_s + duration_s).
/// Returns digital silence when every source is muted.
inline BinauralSignal render_environment(const scene::SceneInstance& inst, double start_s, double duration_s,
                                         std::uint64_t seed, const RenderOptions& opt = {}) {
  if (inst.mode != scene::RenderMode::environment)
    throw ValidationError("render_environment: scene is not in environment mode");
  if (!(duration_s > 0.0)) throw ValidationError("render_environment: duration must be positive");
  if (start_s < 0.0) throw ValidationError("render_environment: start must be >= 0");
  const int fs = inst.sample_rate;
  const auto n_out = static_cast<std::size_t>(std::llround(duration_s * fs));
  const auto preroll = static_cast<std::size_t>(std::llround(opt.ir_duration_s * fs));
  const auto start = static_cast<std::size_t>(std::llround(start_s * fs));
  BinauralSignal out(n_out, fs, inst.calibration_db);
  for (const auto& src : inst.sources) {
    if (src.muted) continue;
    const std::uint64_t src_seed = mix_seed(seed, src.seed);
    const auto ir = propagation_response(inst, src.position, mix_seed(src_seed ^ inst.reverb.seed, 0x7a11), opt);
    // the signal timeline starts one IR length before t = 0 so that every
    // output sample sees a fully populated convolution
    const std::size_t n_sig = preroll + start + n_out;
    std::vector<double> sig;
    if (src.signal == scene::SignalKind::impulse) {
      sig.assign(n_sig, 0.0);
      const auto at = preroll + static_cast<std::size_t>(std::llround(src.start_s * fs));
      if (at < n_sig) sig[at] = db_to_amplitude(src.level_db - inst.calibration_db);
    } else {
      sig = generate_source_signal(src.signal, src.level_db, src_seed, fs, n_sig, inst.calibration_db);
    }
    for (int c = 0; c < 2; ++c) {
      const auto y = fft::convolve(sig, ir.ir[c]);
      for (std::size_t i = 0; i < n_out; ++i) out.channels[c][i] += y[preroll + start + i];
    }
  }
  return out;
}

}  // namespace srmap::render
