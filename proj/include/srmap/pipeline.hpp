#pragma once

// One condition end to end: render masker and talker IRs, build noisy
// sentences, optional hearing device, listener front end, recognizer, SRT.

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "srmap/common.hpp"
#include "srmap/corpus.hpp"
#include "srmap/device.hpp"
#include "srmap/listener.hpp"
#include "srmap/recognizer.hpp"
#include "srmap/renderer.hpp"
#include "srmap/scene.hpp"

namespace srmap::orchestrator {

using listener::ProfileName;

struct ConditionSpec {
  double azimuth_deg = 0.0;
  int ix = 0;
  int iy = 0;
  double mesh_m = 0.5;
  bool tv = false;
  bool door = false;
  ProfileName profile = ProfileName::normal;

  /// Canonical text used for seeding; stable across machines.
  std::string canonical() const {
    return "azimuth=" + format_number(azimuth_deg) + ";ix=" + std::to_string(ix) + ";iy=" + std::to_string(iy) +
           ";mesh=" + format_number(mesh_m) + ";tv=" + (tv ? "1" : "0") + ";door=" + (door ? "1" : "0") +
           ";profile=" + listener::to_string(profile);
  }

  /// File-name friendly identifier.
  std::string id() const {
    return "az" + format_number(azimuth_deg) + "_m" + format_number(mesh_m) + "_x" + std::to_string(ix) + "_y" +
           std::to_string(iy) + "_tv" + (tv ? "1" : "0") + "_door" + (door ? "1" : "0") + "_" +
           listener::to_string(profile);
  }

  /// Canonical ordering: orientation, mesh, cell row-major, tv, door, profile.
  friend auto operator<=>(const ConditionSpec& a, const ConditionSpec& b) {
    return std::tie(a.azimuth_deg, a.mesh_m, a.iy, a.ix, a.tv, a.door, a.profile) <=>
           std::tie(b.azimuth_deg, b.mesh_m, b.iy, b.ix, b.tv, b.door, b.profile);
  }
  friend bool operator==(const ConditionSpec&, const ConditionSpec&) = default;
};

struct LevelSearch {
  bool pilot = true;
  double pilot_lo = -12.0;
  double pilot_hi = 96.0;
  double pilot_step = 12.0;
  recognizer::Budget pilot_budget{20, 10};
  double below_pilot_db = 12.0;  // main grid starts this far below the pilot crossing
  int max_shifts = 2;
  double fixed_lo = 30.0;  // used when the pilot is off
};

struct PipelineConfig {
  recognizer::Budget budget{60, 20};
  int n_levels = 7;
  double level_step = 3.0;
  LevelSearch search;
  recognizer::TrainOptions train;
  render::RenderOptions render;
  int ir_realizations = 5;
  double masker_duration_s = 10.0;
  listener::ProfileSettings profiles;
};

struct ConditionOutcome {
  recognizer::SrtResult srt;
  recognizer::RecognitionResultMap map;
  std::vector<double> pilot_levels;
  std::vector<double> pilot_scores;
  double wall_s = 0.0;
};

/// Matched train/test score per level, then the first upward 50% crossing
/// (lowest level if already above, highest level if never reached).
inline double pilot_crossing(const std::vector<double>& levels, const std::vector<double>& scores, double target = 50.0) {
  if (scores.front() >= target) return levels.front();
  for (std::size_t i = 1; i < levels.size(); ++i)
    if (scores[i - 1] < target && scores[i] >= target)
      return levels[i - 1] + (target - scores[i - 1]) / (scores[i] - scores[i - 1]) * (levels[i] - levels[i - 1]);
  return levels.back();
}

class Simulator {
 public:
  Simulator(scene::SceneTemplate tpl, PipelineConfig cfg, device::DeviceConfig device,
            std::filesystem::path data = data_dir())
      : tpl_(std::move(tpl)), cfg_(std::move(cfg)), device_(std::move(device)), area_(scene::walkable_area(tpl_)) {
    fb_ = std::make_unique<listener::MelFilterbank>();
    for (auto p : {ProfileName::normal, ProfileName::impaired_unaided, ProfileName::impaired_aided})
      profiles_[static_cast<int>(p)] = listener::make_profile(p, fb_->centers(), cfg_.profiles, data);
  }

  static Simulator bundled(PipelineConfig cfg = {}) {
    return Simulator(scene::load_template(scene::bundled_scene_path()), std::move(cfg),
                     device::DeviceConfig::load(data_dir() / "device.conf"));
  }

  const scene::SceneTemplate& scene_template() const { return tpl_; }
  const scene::WalkableArea& area() const { return area_; }
  const PipelineConfig& config() const { return cfg_; }
  const listener::ListenerProfile& profile(ProfileName p) const { return profiles_.at(static_cast<int>(p)); }
  std::uint64_t scene_hash() const { return tpl_.hash(); }

  Vec3 talker_position(const ConditionSpec& c) const {
    if (c.ix < 0 || c.iy < 0 || c.ix >= area_.count_x(c.mesh_m) || c.iy >= area_.count_y(c.mesh_m))
      throw ValidationError("condition " + c.canonical() + ": talker cell outside the walkable area");
    return area_.cell_center(c.ix, c.iy, c.mesh_m);
  }

  // Seeds. The masker depends on (azimuth, tv, door), the talker IRs on
  // (azimuth, cell) and the speech material on everything except the
  // profile, so the three profiles see identical stimuli.
  std::uint64_t environment_seed(const ConditionSpec& c) const {
    return fnv1a64("environment;azimuth=" + format_number(c.azimuth_deg) + ";tv=" + (c.tv ? "1" : "0") +
                   ";door=" + (c.door ? "1" : "0") + ";scene=" + hex64(scene_hash()));
  }
  std::uint64_t hrir_seed(const ConditionSpec& c) const {
    return fnv1a64("hrir;azimuth=" + format_number(c.azimuth_deg) + ";ix=" + std::to_string(c.ix) +
                   ";iy=" + std::to_string(c.iy) + ";mesh=" + format_number(c.mesh_m) + ";scene=" + hex64(scene_hash()));
  }
  std::uint64_t corpus_seed(const ConditionSpec& c) const {
    auto s = c;
    s.profile = ProfileName::normal;
    return fnv1a64("corpus;" + s.canonical() + ";scene=" + hex64(scene_hash()));
  }
  std::uint64_t condition_seed(const ConditionSpec& c) const {
    return fnv1a64(c.canonical() + ";scene=" + hex64(scene_hash()));
  }

  std::shared_ptr<const BinauralSignal> masker(const ConditionSpec& c) {
    const std::string key = "az=" + format_number(c.azimuth_deg) + (c.tv ? ";tv" : "") + (c.door ? ";door" : "");
    {
      std::lock_guard lock(mutex_);
      if (auto it = maskers_.find(key); it != maskers_.end()) return it->second;
    }
    auto params = scene::SceneParams::environment(c.azimuth_deg, c.tv, c.door, talker_position(c));
    params.duration_s = cfg_.masker_duration_s;
    const auto inst = scene::instantiate(tpl_, params);
    auto sig = std::make_shared<const BinauralSignal>(
        render::render_environment(inst, 0.0, cfg_.masker_duration_s, environment_seed(c), cfg_.render));
    std::lock_guard lock(mutex_);
    return maskers_.emplace(key, std::move(sig)).first->second;
  }

  std::shared_ptr<const corpus::SpeechAtEars> talker(const ConditionSpec& c) {
    const std::string key = "az=" + format_number(c.azimuth_deg) + ";x=" + std::to_string(c.ix) +
                            ";y=" + std::to_string(c.iy) + ";m=" + format_number(c.mesh_m);
    {
      std::lock_guard lock(mutex_);
      if (auto it = irs_.find(key); it != irs_.end()) return it->second;
    }
    const Vec3 probe = talker_position(c);
    const auto inst = scene::instantiate(tpl_, scene::SceneParams::hrir(probe, c.azimuth_deg));
    auto irs = std::make_shared<const corpus::SpeechAtEars>(
        bank_, render::render_hrir(inst, probe, cfg_.ir_realizations, hrir_seed(c), cfg_.render));
    std::lock_guard lock(mutex_);
    if (irs_.size() >= 16) irs_.clear();
    return irs_.emplace(key, std::move(irs)).first->second;
  }

  /// Features of noisy sentences at `level` as heard by the condition's listener.
  std::vector<listener::FeatureSequence> features(const ConditionSpec& c, std::span<const corpus::Sentence> sentences,
                                                  double level_db_spl, std::uint64_t seed) {
    const auto m = masker(c);
    const auto tk = talker(c);
    const auto& prof = profile(c.profile);
    std::vector<listener::FeatureSequence> out;
    out.reserve(sentences.size());
    for (std::size_t k = 0; k < sentences.size(); ++k) {
      std::mt19937_64 rng(mix_seed(seed, k));
      auto item = corpus::build_noisy_item(*tk, sentences[k], {level_db_spl}, *m, rng, k);
      if (prof.aided) item.signal = device::compress(item.signal, device_);
      auto [l, r] = listener::log_mel(item.signal, *fb_);
      std::mt19937_64 hl(mix_seed(seed ^ 0x4c5d6e7f, k));
      out.push_back(listener::binaural_features(listener::apply_hearing_loss(l, prof, hl),
                                                listener::apply_hearing_loss(r, prof, hl)));
    }
    return out;
  }

  recognizer::ItemProvider provider(const ConditionSpec& c) {
    return [this, c](std::span<const corpus::Sentence> s, double level, int, std::uint64_t seed) {
      return features(c, s, level, seed);
    };
  }

  /// Coarse matched-level sweep locating the 50% region.
  std::pair<std::vector<double>, std::vector<double>> pilot(const ConditionSpec& c) {
    const auto& ls = cfg_.search;
    const std::uint64_t seed = mix_seed(corpus_seed(c), 0x9110);
    std::vector<double> levels, scores;
    for (double L = ls.pilot_lo; L <= ls.pilot_hi + 1e-9; L += ls.pilot_step) {
      const auto s = mix_seed(seed, static_cast<std::uint64_t>(levels.size()));
      const auto train_s = corpus::balanced_sentences(ls.pilot_budget.n_train, s);
      auto train_f = features(c, train_s, L, s);
      std::vector<recognizer::LabeledItem> items(train_s.size());
      for (std::size_t k = 0; k < items.size(); ++k) items[k] = {train_s[k], std::move(train_f[k])};
      const auto models = recognizer::train_models(items, cfg_.train);
      const auto ts = mix_seed(s, 0x7e57);
      const auto test_s = corpus::enumerate_sentences(corpus::MatrixGrammar::standard(), ls.pilot_budget.n_test, ts);
      const auto test_f = features(c, test_s, L, ts);
      std::vector<corpus::Sentence> hyp;
      for (const auto& f : test_f) hyp.push_back(recognizer::decode(f, models));
      levels.push_back(L);
      scores.push_back(recognizer::score(hyp, test_s));
    }
    return {levels, scores};
  }

  ConditionOutcome run(const ConditionSpec& c) {
    const auto t0 = std::chrono::steady_clock::now();
    ConditionOutcome out;
    const auto& ls = cfg_.search;
    double lo = ls.fixed_lo;
    if (ls.pilot) {
      std::tie(out.pilot_levels, out.pilot_scores) = pilot(c);
      const double x = pilot_crossing(out.pilot_levels, out.pilot_scores);
      lo = cfg_.level_step * std::round((x - ls.below_pilot_db) / cfg_.level_step);
    }
    const std::uint64_t seed = corpus_seed(c);
    for (int shift = 0;; ++shift) {
      const auto levels = recognizer::level_grid(lo, cfg_.n_levels, cfg_.level_step);
      out.map = recognizer::build_result_map(provider(c), levels, cfg_.budget, mix_seed(seed, static_cast<std::uint64_t>(std::llround(lo * 10))),
                                             cfg_.train, c.canonical());
      out.srt = recognizer::extract_srt(out.map);
      if (shift >= ls.max_shifts || !ls.pilot) break;
      const double span = cfg_.level_step * (cfg_.n_levels - 1);
      if (out.srt.flag == recognizer::SrtFlag::unbounded_low) lo -= span * 2.0 / 3.0;
      else if (out.srt.flag == recognizer::SrtFlag::unbounded_high) lo += span * 2.0 / 3.0;
      else break;
      lo = cfg_.level_step * std::round(lo / cfg_.level_step);
    }
    out.srt.condition_id = c.id();
    out.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

 private:
  scene::SceneTemplate tpl_;
  PipelineConfig cfg_;
  device::DeviceConfig device_;
  scene::WalkableArea area_;
  std::unique_ptr<listener::MelFilterbank> fb_;
  std::map<int, listener::ListenerProfile> profiles_;
  corpus::WordBank bank_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const BinauralSignal>> maskers_;
  std::map<std::string, std::shared_ptr<const corpus::SpeechAtEars>> irs_;
};

}  // namespace srmap::orchestrator
