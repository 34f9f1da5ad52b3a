// Acceptance gate: one PASS/FAIL line per primary criterion. Exit status is
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "srmap/fft.hpp"
#include "srmap/mapserver.hpp"
#include "srmap/orchestrator.hpp"

using namespace srmap;
using orchestrator::ConditionSpec;
using orchestrator::GridConfig;
using orchestrator::Simulator;
using listener::ProfileName;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << (ok ? "PASS " : "FAIL ") << name << " | " << detail << std::endl;
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os.precision(prec);
  os << std::fixed << v;
  return os.str();
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------

void enumeration() {
  const auto area = scene::walkable_area(scene::load_template(scene::bundled_scene_path()));
  const auto t0 = Clock::now();
  const auto c = orchestrator::enumerate_conditions(GridConfig::paper(), area);
  const double t = seconds_since(t0);
  report(c.size() == 2880 && t < 1.0, "enumeration",
         "paper grid " + std::to_string(c.size()) + " conditions (want 2880) in " + fmt(t, 4) + " s (< 1 s)");
}

void quantization() {
  const auto t0 = Clock::now();
  const auto s = mapserver::ColorScale::bundled(12);
  const int a = mapserver::quantize_level(45.0, s), b = mapserver::quantize_level(85.0, s),
            c = mapserver::quantize_level(90.0, s), d = mapserver::quantize_level(61.7, s);
  const bool ok = s.grade_width() == 40.0 / 12.0 && a == 0 && b == 11 && c == 11 && d == 5 && seconds_since(t0) < 1.0;
  report(ok, "quantization",
         "width " + fmt(s.grade_width(), 6) + " dB; 45->" + std::to_string(a) + " 85->" + std::to_string(b) + " 90->" +
             std::to_string(c) + " 61.7->" + std::to_string(d) + " (want 0 11 11 5)");
}

void srt_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  double worst = 0.0;
  int flag_mismatch = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 9);
    recognizer::RecognitionResultMap m;
    m.train_levels = m.test_levels = recognizer::level_grid(static_cast<double>(rng() % 60) - 10.0, n);
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(n));
    for (auto& row : rows) {
      double v = 0.6 * u(rng);
      for (int j = 0; j < n; ++j) {
        v = std::clamp(v + 0.4 * u(rng) - 12.0, 0.0, 100.0);
        row.push_back(v);
        m.cells.push_back(v);
      }
    }
    const auto got = recognizer::extract_srt(m);
    const auto want = oracle::brute_force_srt(m.test_levels, rows, 50.0);
    worst = std::max(worst, std::abs(got.srt_db_spl - want.srt));
    flag_mismatch += static_cast<int>(got.flag) != want.kind;
  }
  const double t = seconds_since(t0);
  report(worst <= 1e-9 && flag_mismatch == 0 && t < 10.0, "srt_oracle",
         "1000 maps, max |diff| " + std::to_string(worst) + " dB, flag mismatches " + std::to_string(flag_mismatch) +
             ", " + fmt(t) + " s");
}

void convolution() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const auto a = oracle::random_vector(rng, 1 + rng() % 3000);
    const auto b = oracle::random_vector(rng, 1 + rng() % 600);
    worst = std::max(worst, oracle::relative_l2(fft::convolve(a, b), oracle::direct_convolution(a, b)));
  }
  const double t = seconds_since(t0);
  report(worst <= 1e-6 && t < 10.0, "convolution",
         "200 pairs, max relative L2 " + std::to_string(worst) + " (<= 1e-6), " + fmt(t) + " s");
}

// 1 kHz tone stepping between two levels; time until the 1 kHz band envelope
// has covered 63% of the change.
double time_to_63_percent(double from_dbfs, double to_dbfs) {
  const int fs = 16000;
  const std::size_t n = 3 * fs, step = fs;
  BinauralSignal x(n, fs);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::sqrt(2.0) * db_to_amplitude(i < step ? from_dbfs : to_dbfs);
    x.channels[0][i] = x.channels[1][i] = a * std::sin(2 * kPi * 1000.0 * static_cast<double>(i) / fs);
  }
  const auto env = device::band_envelopes(x, device::DeviceConfig{});
  const auto& e = env.levels[0][2];
  const std::size_t k0 = step / env.block;
  const double before = e[k0 - 1], after = e.back();
  const double goal = before + 0.632 * (after - before);
  for (std::size_t k = k0; k < e.size(); ++k)
    if ((after > before && e[k] >= goal) || (after < before && e[k] <= goal))
      return static_cast<double>((k + 1) * env.block - step) / fs * 1000.0;
  return 1e9;
}

void compressor() {
  const auto t0 = Clock::now();
  const double attack = time_to_63_percent(-40.0, -20.0), decay = time_to_63_percent(-20.0, -40.0);
  const double t = seconds_since(t0);
  const bool ok = std::abs(attack - 50.0) <= 10.0 && std::abs(decay - 500.0) <= 100.0 && t < 10.0;
  report(ok, "compressor_time_constants",
         "attack " + fmt(attack, 1) + " ms (50 +/- 10), decay " + fmt(decay, 1) + " ms (500 +/- 100), " + fmt(t) + " s");
}

void level_uncertainty() {
  const auto t0 = Clock::now();
  listener::LogMelGram g;
  g.frames = 5000;
  g.bands = 20;
  g.levels.assign(g.frames * g.bands, 90.0);
  listener::ListenerProfile p;
  p.thresholds_db_spl.assign(20, 0.0);
  p.level_uncertainty_db = 10.0;
  std::mt19937_64 rng(31337);
  const auto out = listener::apply_hearing_loss(g, p, rng);
  double m = 0.0, s = 0.0;
  for (std::size_t i = 0; i < out.levels.size(); ++i) m += out.levels[i] - g.levels[i];
  m /= static_cast<double>(out.levels.size());
  for (std::size_t i = 0; i < out.levels.size(); ++i) s += std::pow(out.levels[i] - g.levels[i] - m, 2);
  const double sigma = std::sqrt(s / static_cast<double>(out.levels.size() - 1));
  const double t = seconds_since(t0);
  report(std::abs(sigma - 10.0) <= 0.15 && t < 5.0, "level_uncertainty",
         "sigma " + fmt(sigma, 4) + " dB over " + std::to_string(out.levels.size()) + " cells (10 +/- 0.15), " +
             fmt(t) + " s");
}

// Models trained on audible speech, then scored on items whose speech is
// far below both the masker and the listener thresholds.
void chance_floor() {
  const auto t0 = Clock::now();
  auto sim = Simulator::bundled();
  const ConditionSpec c{0, 4, 2, 0.5, true, true, ProfileName::normal};
  const auto train_s = corpus::balanced_sentences(60, 5);
  auto feats = sim.features(c, train_s, 70.0, 11);
  std::vector<recognizer::LabeledItem> items;
  for (std::size_t k = 0; k < train_s.size(); ++k) items.push_back({train_s[k], std::move(feats[k])});
  const auto models = recognizer::train_models(items, sim.config().train);
  const auto test_s = corpus::enumerate_sentences(corpus::MatrixGrammar::standard(), 1000, 17);
  std::vector<corpus::Sentence> hyp;
  for (std::size_t start = 0; start < test_s.size(); start += 100) {
    const std::span<const corpus::Sentence> chunk(test_s.data() + start, 100);
    for (const auto& f : sim.features(c, chunk, -80.0, 1000 + start)) hyp.push_back(recognizer::decode(f, models));
  }
  const double pct = recognizer::score(hyp, test_s);
  const double t = seconds_since(t0);
  report(std::abs(pct - 10.0) <= 2.0 && t < 120.0, "chance_floor",
         fmt(pct, 2) + "% of " + std::to_string(hyp.size() * corpus::kSlots) + " words (10 +/- 2), " + fmt(t, 1) + " s");
}

// CI grid ---------------------------------------------------------------------

std::string atlas_text(const orchestrator::SrtAtlas& a) {
  std::ostringstream os;
  orchestrator::write_atlas_stream(os, a);
  return os.str();
}

orchestrator::SrtAtlas run_grid(const fs::path& dir, std::size_t shards, const std::vector<ConditionSpec>& conds) {
  std::size_t failed = 0;
  for (std::size_t k = 0; k < shards; ++k) {
    auto sim = Simulator::bundled();  // each shard starts cold, as a separate process would
    failed += orchestrator::run_shard(sim, conds, shards, k, dir, orchestrator::worker_count(), &std::cerr).failed;
  }
  if (failed) std::cerr << "[acceptance] " << failed << " conditions failed in " << dir << '\n';
  return orchestrator::collect(dir);
}

struct Cell {
  int ix, iy;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

// srt[cell][(tv, door, profile)]
using Table = std::map<Cell, std::map<std::tuple<bool, bool, ProfileName>, double>>;

Table tabulate(const orchestrator::SrtAtlas& a, int& missing) {
  Table t;
  missing = 0;
  for (const auto& r : a.rows) {
    if (r.missing()) {
      ++missing;
      continue;
    }
    t[{r.spec.ix, r.spec.iy}][{r.spec.tv, r.spec.door, r.spec.profile}] = r.result.srt_db_spl;
  }
  return t;
}

std::optional<double> get(const Table& t, const Cell& c, bool tv, bool door, ProfileName p) {
  auto it = t.find(c);
  if (it == t.end()) return std::nullopt;
  auto jt = it->second.find({tv, door, p});
  if (jt == it->second.end()) return std::nullopt;
  return jt->second;
}

void grid_criteria(const fs::path& work, bool resume) {
  const auto t0 = Clock::now();
  if (!resume) fs::remove_all(work);
  const auto area = scene::walkable_area(scene::load_template(scene::bundled_scene_path()));
  const auto conds = orchestrator::enumerate_conditions(GridConfig::ci(), area);

  const auto four = run_grid(work / "shards4", 4, conds);
  const double t4 = seconds_since(t0);
  const auto one = run_grid(work / "shards1", 1, conds);
  const double t_all = seconds_since(t0);
  orchestrator::write_atlas(work / "atlas.tsv", four);

  int missing = 0;
  const auto table = tabulate(four, missing);
  const std::vector<Cell> cells = [&] {
    std::vector<Cell> v;
    for (auto [ix, iy] : GridConfig::ci().cells) v.push_back({ix, iy});
    return v;
  }();
  const std::string run_note = "; CI grid " + std::to_string(four.rows.size()) + " rows, " + std::to_string(missing) +
                               " missing, first run " + fmt(t4 / 60.0, 1) + " min on " +
                               std::to_string(orchestrator::worker_count()) + " worker(s)";

  // profile ordering, all noise on
  {
    std::vector<double> n, a, u, benefit, gap;
    int ordered = 0, complete = 0;
    for (const auto& c : cells) {
      const auto sn = get(table, c, true, true, ProfileName::normal);
      const auto sa = get(table, c, true, true, ProfileName::impaired_aided);
      const auto su = get(table, c, true, true, ProfileName::impaired_unaided);
      if (!sn || !sa || !su) continue;
      ++complete;
      n.push_back(*sn), a.push_back(*sa), u.push_back(*su);
      benefit.push_back(*su - *sa);
      gap.push_back(*sa - *sn);
      ordered += *sn < *sa && *sa < *su;
    }
    const double mn = median(n), ma = median(a), mu = median(u), mb = median(benefit), mg = median(gap);
    const bool ok = complete == static_cast<int>(cells.size()) && mn < ma && ma < mu && mb >= 3.0 && mg >= 2.0;
    report(ok, "profile_ordering",
           "medians normal " + fmt(mn, 2) + " < aided " + fmt(ma, 2) + " < unaided " + fmt(mu, 2) + "; aided benefit " +
               fmt(mb, 2) + " dB (>= 3); aided-normal gap " + fmt(mg, 2) + " dB (>= 2); ordered in " +
               std::to_string(ordered) + "/" + std::to_string(cells.size()) + " cells" + run_note);
  }

  // impaired spread across the four noise states, every cell
  {
    const double limit = 40.0 / 12.0 + 1.0;
    std::vector<double> spreads;
    std::string worst_cell;
    double worst = -1.0;
    int complete = 0;
    for (const auto& c : cells) {
      std::vector<double> v;
      for (bool tv : {false, true})
        for (bool door : {false, true})
          if (auto s = get(table, c, tv, door, ProfileName::impaired_unaided)) v.push_back(*s);
      if (v.size() != 4) continue;
      ++complete;
      const double sp = *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end());
      spreads.push_back(sp);
      if (sp > worst) worst = sp, worst_cell = "(" + std::to_string(c.ix) + "," + std::to_string(c.iy) + ")";
    }
    const auto over = std::count_if(spreads.begin(), spreads.end(), [&](double s) { return s > limit; });
    report(complete == static_cast<int>(cells.size()) && over == 0, "impaired_spread",
           "max spread " + fmt(worst, 2) + " dB at " + worst_cell + " (<= " + fmt(limit, 3) + " per cell); " +
               std::to_string(over) + "/" + std::to_string(spreads.size()) + " cells over; median spread " +
               fmt(median(spreads), 2) + " dB");
  }

  // quiet benefit for normal hearing
  {
    std::vector<double> d;
    for (const auto& c : cells) {
      const auto q = get(table, c, false, false, ProfileName::normal);
      const auto tv = get(table, c, true, false, ProfileName::normal);
      if (q && tv) d.push_back(*tv - *q);
    }
    const double md = median(d);
    report(d.size() == cells.size() && md >= 6.0, "quiet_benefit",
           "median SRT(tv) - SRT(quiet) " + fmt(md, 2) + " dB (>= 6) over " + std::to_string(d.size()) + " cells");
  }

  // shard invariance
  {
    const auto a = atlas_text(four), b = atlas_text(one);
    report(a == b && !four.rows.empty(), "shard_invariance",
           "shards 4 vs 1: " + std::string(a == b ? "byte-identical" : "DIFFER") + " (" + std::to_string(a.size()) +
               " bytes); both runs " + fmt(t_all / 60.0, 1) + " min");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"srmap acceptance suite"};
  std::string work = (fs::temp_directory_path() / "srmap_acceptance").string();
  bool resume = false;
  app.add_option("--work-dir", work, "scratch directory for the CI grid runs");
  app.add_flag("--resume", resume, "keep finished conditions from an earlier run");
  CLI11_PARSE(app, argc, argv);

  try {
    enumeration();
    quantization();
    srt_oracle();
    convolution();
    compressor();
    level_uncertainty();
    chance_floor();
    grid_criteria(work, resume);
  } catch (const std::exception& e) {
    std::cout << "FAIL aborted | " << e.what() << std::endl;
    return 2;
  }
  std::cout << (failures ? "FAILED " : "ALL PASSED ") << failures << " criteria failed" << std::endl;
  return failures ? 1 : 0;
}
