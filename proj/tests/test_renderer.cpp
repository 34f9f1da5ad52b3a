#include <gtest/gtest.h>

#include <set>

#include "srmap/renderer.hpp"

using namespace srmap;
using namespace srmap::render;

namespace {

scene::SceneTemplate bundled() { return scene::load_template(scene::bundled_scene_path()); }

scene::Room cube(double side) {
  scene::Room r;
  r.name = "cube";
  r.min = {0, 0, 0};
  r.max = {side, side, side};
  return r;
}

// Images by repeated mirroring across the six walls, deduplicated.
std::map<std::tuple<long, long, long>, int> mirror_images(const scene::Room& room, Vec3 src, int order) {
  auto key = [](Vec3 p) { return std::make_tuple(std::lround(p.x * 1e6), std::lround(p.y * 1e6), std::lround(p.z * 1e6)); };
  std::map<std::tuple<long, long, long>, int> seen{{key(src), 0}};
  std::vector<Vec3> frontier{src};
  for (int k = 1; k <= order; ++k) {
    std::vector<Vec3> next;
    for (const auto& p : frontier) {
      const Vec3 cands[6] = {{2 * room.min.x - p.x, p.y, p.z}, {2 * room.max.x - p.x, p.y, p.z},
                             {p.x, 2 * room.min.y - p.y, p.z}, {p.x, 2 * room.max.y - p.y, p.z},
                             {p.x, p.y, 2 * room.min.z - p.z}, {p.x, p.y, 2 * room.max.z - p.z}};
      for (const auto& c : cands)
        if (seen.emplace(key(c), k).second) next.push_back(c);
    }
    frontier = next;
  }
  return seen;
}

double peak_delay(const std::vector<double>& h) {
  std::size_t i = 0;
  for (std::size_t k = 0; k < h.size(); ++k)
    if (h[k] != 0.0) {
      i = k;
      break;
    }
  return static_cast<double>(i) + h[i + 1] / (h[i] + h[i + 1]);
}

}  // namespace

TEST(Cardioid, Values) {
  EXPECT_DOUBLE_EQ(cardioid_gain(0.0), 1.0);
  EXPECT_NEAR(cardioid_gain(kPi), 0.0, 1e-15);
  EXPECT_NEAR(cardioid_gain(kPi / 2), 0.5, 1e-15);
}

TEST(ImageSources, OrderZeroIsDirectPath) {
  const auto im = image_sources(cube(4), {1, 2, 3}, {2, 2, 2}, 0);
  ASSERT_EQ(im.size(), 1u);
  EXPECT_EQ(im[0].reflections, 0);
  EXPECT_NEAR(im[0].gain, 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(ImageSources, FirstOrderShoeboxHasSixImages) {
  scene::Room room;
  room.min = {0, 0, 0};
  room.max = {5, 4, 2.5};
  EXPECT_EQ(image_sources(room, {1, 1, 1}, {3, 2, 1}, 1).size(), 7u);
}

TEST(ImageSources, CubeCenterImagesEquidistant) {
  const auto im = image_sources(cube(4), {2, 2, 2}, {1, 1, 1}, 1);
  ASSERT_EQ(im.size(), 7u);
  for (const auto& s : im)
    if (s.reflections == 1) EXPECT_NEAR((s.position - Vec3{2, 2, 2}).norm(), 4.0, 1e-12);
}

TEST(ImageSources, MatchesMirrorEnumeration) {
  scene::Room room;
  room.min = {0, 0, 0};
  room.max = {5, 4, 2.5};
  room.reflection = 0.7;
  const Vec3 src{1.3, 2.9, 0.8}, rcv{3.1, 0.7, 1.4};
  for (int order = 0; order <= 3; ++order) {
    const auto ref = mirror_images(room, src, order);
    const auto im = image_sources(room, src, rcv, order);
    ASSERT_EQ(im.size(), ref.size()) << order;
    for (const auto& s : im) {
      auto it = ref.find({std::lround(s.position.x * 1e6), std::lround(s.position.y * 1e6), std::lround(s.position.z * 1e6)});
      ASSERT_NE(it, ref.end());
      EXPECT_EQ(it->second, s.reflections);
      const double r = (s.position - rcv).norm();
      EXPECT_NEAR(s.gain, std::pow(0.7, s.reflections) / std::max(r, 0.2), 1e-12);
    }
  }
}

TEST(ImageSources, Errors) {
  EXPECT_THROW(image_sources(cube(4), {5, 1, 1}, {1, 1, 1}, 1), ValidationError);
  EXPECT_THROW(image_sources(cube(4), {1, 1, 1}, {1, 1, 1}, 4), ValidationError);
}

TEST(RenderHrir, FiveRealizationsShareEarlyPart) {
  const auto inst = scene::instantiate(bundled(), scene::SceneParams::hrir({2.5, 2.0, 1.5}, 0.0));
  const auto irs = render_hrir(inst, {2.5, 2.0, 1.5}, 5, 42);
  ASSERT_EQ(irs.size(), 5u);
  const double first = std::hypot(2.5 - 2.5 + 0.085, 2.0 - 0.45, 1.5 - 1.2) / kSpeedOfSound * 16000;
  const auto shared = static_cast<std::size_t>(first) + 80;  // 5 ms at 16 kHz
  for (int r = 0; r < 5; ++r) {
    EXPECT_EQ(irs[r].size(), 16000u);
    EXPECT_EQ(irs[r].realization_index, r);
    for (int c = 0; c < 2; ++c)
      for (std::size_t n = 0; n < shared; ++n) ASSERT_EQ(irs[r].ir[c][n], irs[0].ir[c][n]);
  }
  EXPECT_NE(irs[1].ir[0], irs[0].ir[0]);
  const auto again = render_hrir(inst, {2.5, 2.0, 1.5}, 5, 42);
  for (int r = 0; r < 5; ++r) EXPECT_EQ(again[r].ir, irs[r].ir);
}

TEST(RenderHrir, DirectDelayFollowsGeometry) {
  auto p = scene::SceneParams::hrir({2.5, 1.45, 1.2}, 0.0);
  p.reverb_on = false;
  const auto tpl = bundled();
  RenderOptions opt;
  opt.reflection_order = 0;
  const Vec3 near{2.5, 1.45, 1.2}, far{2.5, 2.45, 1.2};
  const auto a = render_hrir(scene::instantiate(tpl, p), near, 1, 1, opt)[0];
  p.probe_xyz = far;
  const auto b = render_hrir(scene::instantiate(tpl, p), far, 1, 1, opt)[0];
  const auto inst = scene::instantiate(tpl, p);
  const auto rcv = OrtfReceiver::from(inst.receiver);
  for (Ear e : {Ear::left, Ear::right}) {
    const Vec3 cap = rcv.capsule_position(e);
    const double expected = ((far - cap).norm() - (near - cap).norm()) / kSpeedOfSound * 16000;
    const int c = static_cast<int>(e);
    EXPECT_NEAR(peak_delay(b.ir[c]) - peak_delay(a.ir[c]), expected, 1e-6);
    EXPECT_NEAR(expected, 1.0 / kSpeedOfSound * 16000, 0.2);
  }
}

TEST(RenderHrir, NoReverbMeansNoTail) {
  auto p = scene::SceneParams::hrir({2.0, 2.0, 1.5}, 0.0);
  p.reverb_on = false;
  const auto inst = scene::instantiate(bundled(), p);
  const auto ir = render_hrir(inst, {2.0, 2.0, 1.5}, 1, 3)[0];
  const auto rcv = OrtfReceiver::from(inst.receiver);
  double last = 0.0;
  for (const auto& s : image_sources(inst.rooms[0], {2.0, 2.0, 1.5}, rcv.position, 2))
    for (Ear e : {Ear::left, Ear::right}) last = std::max(last, (s.position - rcv.capsule_position(e)).norm());
  const auto end = static_cast<std::size_t>(last / kSpeedOfSound * 16000) + 2;
  for (int c = 0; c < 2; ++c)
    for (std::size_t n = end; n < ir.size(); ++n) ASSERT_EQ(ir.ir[c][n], 0.0);
}

TEST(RenderHrir, ProbeOutsideGeometry) {
  const auto inst = scene::instantiate(bundled(), scene::SceneParams::hrir({2.0, 2.0, 1.5}, 0.0));
  EXPECT_THROW(render_hrir(inst, {6.5, 2.0, 1.5}, 1, 0), ValidationError);
  EXPECT_THROW(render_hrir(inst, {2.0, 2.0, 1.5}, 0, 0), ValidationError);
}

TEST(RenderHrir, TailEnergyDecays) {
  const auto inst = scene::instantiate(bundled(), scene::SceneParams::hrir({2.0, 2.0, 1.5}, 0.0));
  const auto irs = render_hrir(inst, {2.0, 2.0, 1.5}, 5, 9);
  std::vector<double> e(9, 0.0);
  for (const auto& ir : irs)
    for (int c = 0; c < 2; ++c)
      for (std::size_t w = 0; w < e.size(); ++w)
        for (std::size_t n = 1600 * (w + 1); n < 1600 * (w + 2); ++n) e[w] += ir.ir[c][n] * ir.ir[c][n];
  for (std::size_t w = 1; w < e.size(); ++w) EXPECT_LT(e[w], e[w - 1]);
}

TEST(Ortf, Laterality) {
  const Vec3 rp{2.5, 0.45, 1.2};
  OrtfReceiver rcv;
  rcv.position = rp;
  rcv.look_bearing_deg = 90.0;
  scene::Room room;
  room.min = {0, 0, 0};
  room.max = {5, 4, 2.5};
  RenderOptions opt;
  opt.reflection_order = 0;
  auto peak = [](const std::vector<double>& h) { return *std::max_element(h.begin(), h.end()); };
  // +90 deg in the listener frame is bearing 180 here.
  const auto left_src = early_response(room, rp + Vec3{-1.5, 0, 0}, rcv, 16000, opt);
  EXPECT_GT(peak(left_src.ir[0]), peak(left_src.ir[1]));
  const auto right_src = early_response(room, rp + Vec3{1.5, 0, 0}, rcv, 16000, opt);
  EXPECT_LT(peak(right_src.ir[0]), peak(right_src.ir[1]));
}

TEST(Ortf, MirrorSymmetricCapsules) {
  OrtfReceiver rcv;
  rcv.position = {1, 1, 1};
  rcv.look_bearing_deg = 30.0;
  const Vec3 look = bearing_vector(30.0);
  const Vec3 l = rcv.capsule_position(Ear::left) - rcv.position, r = rcv.capsule_position(Ear::right) - rcv.position;
  EXPECT_NEAR(l.dot(look), r.dot(look), 1e-12);
  EXPECT_NEAR((l - r).norm(), 0.17, 1e-12);
  EXPECT_NEAR(rcv.capsule_axis(Ear::left).dot(look), std::cos(55.0 * kPi / 180), 1e-12);
  EXPECT_NEAR(rcv.capsule_axis(Ear::right).dot(look), std::cos(55.0 * kPi / 180), 1e-12);
}

// Turning the head by theta is the same as turning the world by -theta.
TEST(Ortf, RotationEquivalence) {
  scene::Room big;
  big.min = {-50, -50, -50};
  big.max = {50, 50, 50};
  RenderOptions opt;
  opt.reflection_order = 0;
  OrtfReceiver a;
  a.position = {0, 0, 0};
  a.look_bearing_deg = 90.0 + 37.0;
  OrtfReceiver b = a;
  b.look_bearing_deg = 90.0;
  const Vec3 src{1.2, 2.3, 0.4};
  const double t = -37.0 * kPi / 180;
  const Vec3 rotated{std::cos(t) * src.x - std::sin(t) * src.y, std::sin(t) * src.x + std::cos(t) * src.y, src.z};
  const auto x = early_response(big, src, a, 16000, opt);
  const auto y = early_response(big, rotated, b, 16000, opt);
  for (int c = 0; c < 2; ++c)
    for (std::size_t n = 0; n < x.size(); ++n) ASSERT_NEAR(x.ir[c][n], y.ir[c][n], 1e-12);
}

TEST(RenderEnvironment, SilenceWhenAllMuted) {
  const auto inst = scene::instantiate(bundled(), scene::SceneParams::environment(0, false, false, {}));
  const auto s = render_environment(inst, 0.0, 10.0, 1);
  EXPECT_EQ(s.size(), 160000u);
  for (int c = 0; c < 2; ++c)
    for (double v : s.channels[c]) ASSERT_EQ(v, 0.0);
}

TEST(RenderEnvironment, LengthDeterminismAndSeeds) {
  const auto inst = scene::instantiate(bundled(), scene::SceneParams::environment(0, true, true, {}));
  const auto a = render_environment(inst, 0.0, 10.0, 5);
  EXPECT_EQ(a.channels[0].size(), 160000u);
  EXPECT_EQ(a.channels[1].size(), 160000u);
  EXPECT_EQ(a.calibration_db, 130.0);
  const auto b = render_environment(inst, 0.0, 10.0, 5);
  EXPECT_EQ(a.channels, b.channels);
  const auto c = render_environment(inst, 0.0, 1.0, 6);
  EXPECT_NE(std::vector<double>(a.channels[0].begin(), a.channels[0].begin() + 16000), c.channels[0]);
  EXPECT_GT(level_db_spl(a.channels[0]), 30.0);
}

TEST(RenderEnvironment, ModeAndArgumentChecks) {
  const auto hr = scene::instantiate(bundled(), scene::SceneParams::hrir({2, 2, 1.5}, 0));
  EXPECT_THROW(render_environment(hr, 0, 1, 0), ValidationError);
  const auto env = scene::instantiate(bundled(), scene::SceneParams::environment(0, true, true, {}));
  EXPECT_THROW(render_hrir(env, {2, 2, 1.5}, 1, 0), ValidationError);
  EXPECT_THROW(render_environment(env, 0, 0, 0), ValidationError);
}

TEST(Generators, DishwasherIsLowPass) {
  const auto x = generate_source_signal(scene::SignalKind::dishwasher, 60.0, 3, 16000, 32768);
  const auto spec = fft::rfft(x, 32768);
  double lo = 0, hi = 0;
  for (std::size_t k = 0; k < spec.size(); ++k) (k * 16000.0 / 32768 < 2000 ? lo : hi) += std::norm(spec[k]);
  EXPECT_GT(lo, 20 * hi);
  EXPECT_NEAR(level_db_spl(x), 60.0, 0.01);
}
