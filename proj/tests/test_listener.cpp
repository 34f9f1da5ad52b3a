#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "srmap/listener.hpp"

using namespace srmap;
using namespace srmap::listener;

namespace {

BinauralSignal tone(double f, double level_db, double seconds) {
  const auto n = static_cast<std::size_t>(seconds * 16000);
  BinauralSignal x(n, 16000);
  const double a = std::sqrt(2.0) * db_to_amplitude(level_db - 130.0);
  for (std::size_t i = 0; i < n; ++i) x.channels[0][i] = x.channels[1][i] = a * std::sin(2 * kPi * f * i / 16000.0);
  return x;
}

// HTK triangle weight of band b at frequency f, written from the mel formula.
double triangle(int b, double f) {
  auto mel = [](double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::exp(m / 1127.0) - 1.0); };
  const double lo = mel(64.0), hi = mel(8000.0), step = (hi - lo) / 21.0;
  const double f0 = hz(lo + b * step), f1 = hz(lo + (b + 1) * step), f2 = hz(lo + (b + 2) * step);
  if (f > f0 && f <= f1) return (f - f0) / (f1 - f0);
  if (f > f1 && f < f2) return (f2 - f) / (f2 - f1);
  return 0.0;
}

LogMelGram constant_gram(std::size_t frames, std::size_t bands, double v) {
  LogMelGram g;
  g.frames = frames;
  g.bands = bands;
  g.levels.assign(frames * bands, v);
  return g;
}

ListenerProfile flat_profile(std::size_t bands, double thr, double sigma, DegradationOrder order) {
  ListenerProfile p;
  p.thresholds_db_spl.assign(bands, thr);
  p.level_uncertainty_db = sigma;
  p.order = order;
  return p;
}

double stddev(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= v.size();
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / (v.size() - 1));
}

}  // namespace

TEST(LogMel, FrameCount) {
  MelFilterbank fb;
  EXPECT_EQ(fb.frame_count(32000), 198u);
  EXPECT_EQ(fb.frame_count(399), 0u);
  EXPECT_EQ(fb.frame_count(400), 1u);
  const auto [l, r] = log_mel(BinauralSignal(32000, 16000), fb);
  EXPECT_EQ(l.frames, 198u);
  EXPECT_EQ(l.bands, 20u);
}

TEST(LogMel, SilenceIsSentinel) {
  const auto [l, r] = log_mel(BinauralSignal(8000, 16000), MelFilterbank{});
  for (double v : l.levels) EXPECT_EQ(v, kSilenceDb);
}

TEST(LogMel, ToneLevelMatchesAnalyticFilterWeight) {
  MelFilterbank fb;
  const auto [l, r] = log_mel(tone(1000.0, 70.0, 1.0), fb);
  int best = 0;
  for (int b = 1; b < 20; ++b)
    if (triangle(b, 1000.0) > triangle(best, 1000.0)) best = b;
  // mean band level across frames
  std::vector<double> mean(20, 0.0);
  for (std::size_t t = 0; t < l.frames; ++t)
    for (int b = 0; b < 20; ++b) mean[b] += std::pow(10.0, l.at(t, b) / 10.0) / l.frames;
  int dominant = static_cast<int>(std::max_element(mean.begin(), mean.end()) - mean.begin());
  EXPECT_EQ(dominant, best);
  EXPECT_NEAR(10 * std::log10(mean[best]), 70.0 + 10 * std::log10(triangle(best, 1000.0)), 1.0);
  EXPECT_NEAR(10 * std::log10(mean[best]), 70.0, 1.0);
  double total = 0;
  for (double m : mean) total += m;
  EXPECT_NEAR(10 * std::log10(total), 70.0, 0.1);  // triangles sum to one at 1 kHz
}

TEST(LogMel, NoiseBandPowerSumsToOverallLevel) {
  std::mt19937_64 rng(4);
  BinauralSignal x(64000, 16000);
  x.channels[0] = oracle::random_vector(rng, 64000);
  x.channels[1] = x.channels[0];
  const double k = level_db_spl(x.channels[0]);
  const auto [l, r] = log_mel(x, MelFilterbank{});
  double total = 0;
  for (std::size_t t = 0; t < l.frames; ++t)
    for (std::size_t b = 0; b < 20; ++b) total += std::pow(10.0, l.at(t, b) / 10.0);
  total /= l.frames;
  // Expected coverage of a flat spectrum by the triangle sum.
  double cover = 0;
  const int bins = 8001;
  for (int i = 0; i < bins; ++i) {
    double s = 0;
    for (int b = 0; b < 20; ++b) s += triangle(b, i * 1.0);
    cover += s / bins;
  }
  EXPECT_NEAR(10 * std::log10(total), k + 10 * std::log10(cover), 0.3);
  EXPECT_NEAR(10 * std::log10(total), k, 0.5);
}

TEST(LogMel, SampleRateMismatch) {
  EXPECT_THROW(log_mel(BinauralSignal(8000, 44100), MelFilterbank{}), ValidationError);
  MelConfig c;
  c.sample_rate = 8000;
  EXPECT_THROW(MelFilterbank{c}, ValidationError);
}

TEST(HearingLoss, IdentityLimit) {
  MelFilterbank fb;
  const auto [g, unused] = log_mel(tone(500, 60, 0.5), fb);
  for (auto order : {DegradationOrder::noise_then_floor, DegradationOrder::floor_then_noise}) {
    std::mt19937_64 rng(1);
    const auto out = apply_hearing_loss(g, flat_profile(20, -std::numeric_limits<double>::infinity(), 1e-9, order), rng);
    for (std::size_t i = 0; i < g.levels.size(); ++i) EXPECT_NEAR(out.levels[i], g.levels[i], 1e-6);
  }
}

TEST(HearingLoss, SilenceFloorsToThreshold) {
  const auto g = constant_gram(50, 20, kSilenceDb);
  std::mt19937_64 rng(2);
  const auto out = apply_hearing_loss(g, flat_profile(20, 20.0, 10.0, DegradationOrder::noise_then_floor), rng);
  for (double v : out.levels) EXPECT_EQ(v, 20.0);
  const auto tiny = apply_hearing_loss(g, flat_profile(20, 20.0, 1e-9, DegradationOrder::floor_then_noise), rng);
  for (double v : tiny.levels) EXPECT_NEAR(v, 20.0, 1e-6);
}

TEST(HearingLoss, MonteCarloSigma) {
  const auto g = constant_gram(5000, 20, 90.0);  // 10^5 cells
  for (auto order : {DegradationOrder::noise_then_floor, DegradationOrder::floor_then_noise}) {
    std::mt19937_64 rng(3);
    const auto out = apply_hearing_loss(g, flat_profile(20, 0.0, 10.0, order), rng);
    std::vector<double> d(out.levels.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = out.levels[i] - g.levels[i];
    EXPECT_NEAR(stddev(d), 10.0, 0.15);
  }
}

TEST(HearingLoss, NoiseThenFloorNeverBelowThreshold) {
  std::mt19937_64 src(8);
  auto g = constant_gram(300, 20, 0.0);
  for (double& v : g.levels) v = 40.0 + 20.0 * std::normal_distribution<double>()(src);
  std::vector<double> thr(20);
  for (int b = 0; b < 20; ++b) thr[b] = 30.0 + b;
  auto p = flat_profile(20, 0.0, 10.0, DegradationOrder::noise_then_floor);
  p.thresholds_db_spl = thr;
  std::mt19937_64 rng(9);
  const auto out = apply_hearing_loss(g, p, rng);
  for (std::size_t t = 0; t < out.frames; ++t)
    for (std::size_t b = 0; b < 20; ++b) ASSERT_GE(out.at(t, b), thr[b]);
}

// Under the default order nothing below threshold reaches the output.
TEST(HearingLoss, FloorThenNoiseHidesSubThresholdDetail) {
  auto a = constant_gram(200, 20, 10.0), b = a;
  std::mt19937_64 src(10);
  for (std::size_t i = 0; i < a.levels.size(); ++i) {
    a.levels[i] = 25.0 * std::uniform_real_distribution<double>()(src);
    b.levels[i] = kSilenceDb;
  }
  const auto p = flat_profile(20, 30.0, 10.0, DegradationOrder::floor_then_noise);
  EXPECT_EQ(p.order, ListenerProfile{}.order);
  std::mt19937_64 r1(4), r2(4);
  EXPECT_EQ(apply_hearing_loss(a, p, r1).levels, apply_hearing_loss(b, p, r2).levels);
  // With noise first the same difference leaks through.
  const auto q = flat_profile(20, 30.0, 10.0, DegradationOrder::noise_then_floor);
  std::mt19937_64 r3(4), r4(4);
  EXPECT_NE(apply_hearing_loss(a, q, r3).levels, apply_hearing_loss(b, q, r4).levels);
}

TEST(HearingLoss, AmplificationDefeatsFloorNotUncertainty) {
  std::mt19937_64 src(12);
  auto g = constant_gram(2000, 20, 0.0);
  for (double& v : g.levels) v = 60.0 + 8.0 * std::normal_distribution<double>()(src);
  const auto p = flat_profile(20, 50.0, 10.0, DegradationOrder::floor_then_noise);
  auto snr = [&](double gain) {
    auto h = g;
    for (double& v : h.levels) v += gain;
    std::mt19937_64 rng(77);
    const auto out = apply_hearing_loss(h, p, rng);
    std::vector<double> sig, eps;
    for (std::size_t i = 0; i < h.levels.size(); ++i) {
      sig.push_back(h.levels[i]);
      eps.push_back(out.levels[i] - h.levels[i]);
    }
    return std::pow(stddev(sig) / stddev(eps), 2);
  };
  const double a = snr(40.0), b = snr(60.0);
  EXPECT_NEAR(a, b, 1e-9);
  EXPECT_NEAR(a, 0.64, 0.03);
  // Above the floor a gain shifts every cell by exactly G.
  auto h = g;
  for (double& v : h.levels) v += 40.0;
  auto k = h;
  for (double& v : k.levels) v += 5.0;
  std::mt19937_64 r1(5), r2(5);
  const auto o1 = apply_hearing_loss(h, p, r1), o2 = apply_hearing_loss(k, p, r2);
  for (std::size_t i = 0; i < o1.levels.size(); ++i) ASSERT_NEAR(o2.levels[i] - o1.levels[i], 5.0, 1e-9);
}

TEST(HearingLoss, DeterministicAndShapeChecked) {
  const auto g = constant_gram(10, 20, 50.0);
  const auto p = flat_profile(20, 0.0, 10.0, DegradationOrder::floor_then_noise);
  std::mt19937_64 a(6), b(6);
  EXPECT_EQ(apply_hearing_loss(g, p, a).levels, apply_hearing_loss(g, p, b).levels);
  EXPECT_THROW(apply_hearing_loss(g, flat_profile(19, 0.0, 1.0, DegradationOrder::floor_then_noise), a), ValidationError);
}

TEST(Profiles, ThresholdsAndSigmas) {
  MelFilterbank fb;
  const auto n = make_profile(ProfileName::normal, fb.centers());
  const auto u = make_profile(ProfileName::impaired_unaided, fb.centers());
  const auto a = make_profile(ProfileName::impaired_aided, fb.centers());
  EXPECT_EQ(n.level_uncertainty_db, 1.0);
  EXPECT_EQ(u.level_uncertainty_db, 10.0);
  EXPECT_EQ(a.thresholds_db_spl, u.thresholds_db_spl);
  EXPECT_EQ(a.level_uncertainty_db, u.level_uncertainty_db);
  EXPECT_TRUE(a.aided);
  EXPECT_FALSE(u.aided);
  const auto n3 = device::load_audiogram("N3");
  const auto ref = ReferenceThresholds::load();
  for (std::size_t b = 0; b < 20; ++b) {
    EXPECT_NEAR(u.thresholds_db_spl[b] - n.thresholds_db_spl[b], n3.at(fb.centers()[b]), 1e-9);
    EXPECT_NEAR(n.thresholds_db_spl[b], ref.at(fb.centers()[b]), 1e-9);
  }
  EXPECT_EQ(parse_profile("impaired_aided"), ProfileName::impaired_aided);
  EXPECT_FALSE(parse_profile("deaf").has_value());
  ListenerProfile bad;
  bad.level_uncertainty_db = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Features, BinauralLayout) {
  auto l = constant_gram(7, 20, 50.0), r = l;
  auto f = binaural_features(l, r);
  EXPECT_EQ(f.dims, 60u);
  EXPECT_EQ(f.frames, 7u);
  for (std::size_t t = 0; t < 7; ++t)
    for (std::size_t b = 40; b < 60; ++b) EXPECT_EQ(f.row(t)[b], 0.0);
  for (double& v : l.levels) v += 6.0;
  f = binaural_features(l, r);
  for (std::size_t t = 0; t < 7; ++t)
    for (std::size_t b = 0; b < 20; ++b) {
      EXPECT_EQ(f.row(t)[b], 56.0);
      EXPECT_EQ(f.row(t)[20 + b], 50.0);
      EXPECT_EQ(f.row(t)[40 + b], 6.0);
    }
  EXPECT_THROW(binaural_features(constant_gram(7, 20, 0), constant_gram(8, 20, 0)), ValidationError);
}

TEST(Features, DumpRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "srmap_features.srmf";
  FeatureSequence f;
  f.frames = 3;
  f.dims = 4;
  f.values = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, -12.5};
  write_features(path, f);
  const auto g = read_features(path);
  EXPECT_EQ(g.frames, 3u);
  EXPECT_EQ(g.dims, 4u);
  EXPECT_EQ(g.values, f.values);
  const auto bytes = read_text_file(path);
  EXPECT_EQ(bytes.size(), 16u + 12u * 4u);
  EXPECT_EQ(bytes.substr(0, 4), "SRMF");
  {
    std::ofstream os(path, std::ios::binary);
    os << "XXXX";
  }
  EXPECT_THROW(read_features(path), ParseError);
  std::filesystem::remove(path);
}
