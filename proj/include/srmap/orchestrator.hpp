#pragma once

// Condition grid, sharded resumable runner, SRT atlas files and mesh
// refinement.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <tuple>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "srmap/common.hpp"
#include "srmap/config.hpp"
#include "srmap/pipeline.hpp"
#include "srmap/recognizer.hpp"

#ifndef SRMAP_VERSION
#define SRMAP_VERSION "0.1.0"
#endif

namespace srmap::orchestrator {

using recognizer::SrtFlag;
using recognizer::SrtResult;

struct GridConfig {
  std::string name = "custom";
  std::vector<double> azimuths{0.0};
  double mesh_m = 0.5;
  std::vector<std::pair<int, int>> cells;  // (ix, iy); empty means every walkable cell
  std::vector<bool> tv{false, true};
  std::vector<bool> door{false, true};
  std::vector<ProfileName> profiles{ProfileName::normal, ProfileName::impaired_unaided, ProfileName::impaired_aided};

  static GridConfig paper() {
    GridConfig g;
    g.name = "paper";
    g.azimuths = {-90, -45, 0, 45, 90};
    return g;
  }

  static GridConfig ci() {
    GridConfig g;
    g.name = "ci";
    g.azimuths = {0};
    for (int iy : {0, 2, 5})
      for (int ix : {1, 4, 7}) g.cells.emplace_back(ix, iy);
    return g;
  }

  static GridConfig named(std::string_view n) {
    if (n == "paper") return paper();
    if (n == "ci") return ci();
    throw ValidationError("unknown grid '" + std::string(n) + "' (expected paper or ci)");
  }
};

/// Cartesian product in the order orientation, cell (row-major), tv, door,
/// profile.
inline std::vector<ConditionSpec> enumerate_conditions(const GridConfig& g, const scene::WalkableArea& area) {
  if (!(g.mesh_m > 0.0)) throw ValidationError("grid: mesh size must be positive");
  auto cells = g.cells;
  if (cells.empty())
    for (int iy = 0; iy < area.count_y(g.mesh_m); ++iy)
      for (int ix = 0; ix < area.count_x(g.mesh_m); ++ix) cells.emplace_back(ix, iy);
  for (auto [ix, iy] : cells)
    if (ix < 0 || iy < 0 || ix >= area.count_x(g.mesh_m) || iy >= area.count_y(g.mesh_m))
      throw ValidationError("grid: cell (" + std::to_string(ix) + ", " + std::to_string(iy) +
                            ") lies outside the walkable area");
  std::vector<ConditionSpec> out;
  for (double az : g.azimuths)
    for (auto [ix, iy] : cells)
      for (bool tv : g.tv)
        for (bool door : g.door)
          for (auto p : g.profiles) out.push_back({az, ix, iy, g.mesh_m, tv, door, p});
  if (out.empty()) throw ValidationError("grid '" + g.name + "' is empty");
  return out;
}

// Atlas ---------------------------------------------------------------------------

inline const std::vector<std::string>& atlas_columns() {
  static const std::vector<std::string> c = {"azimuth_deg", "ix",      "iy",         "mesh_m", "tv",
                                             "door",        "profile", "srt_db_spl", "flag"};
  return c;
}

struct AtlasRow {
  ConditionSpec spec;
  SrtResult result;
  std::vector<std::string> extra;  // values of unknown columns, in header order

  bool missing() const { return result.flag == SrtFlag::error || std::isnan(result.srt_db_spl); }
};

struct SrtAtlas {
  std::vector<std::string> extra_columns;
  std::vector<AtlasRow> rows;
  std::map<std::string, std::string> metadata;

  void sort() {
    std::stable_sort(rows.begin(), rows.end(), [](const AtlasRow& a, const AtlasRow& b) { return a.spec < b.spec; });
  }

  const AtlasRow* find(const ConditionSpec& c) const {
    for (const auto& r : rows)
      if (r.spec == c) return &r;
    return nullptr;
  }

  friend bool operator==(const SrtAtlas& a, const SrtAtlas& b) {
    if (a.extra_columns != b.extra_columns || a.metadata != b.metadata || a.rows.size() != b.rows.size()) return false;
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      const auto &x = a.rows[i], &y = b.rows[i];
      if (!(x.spec == y.spec) || x.extra != y.extra || x.result.flag != y.result.flag) return false;
      const bool nx = std::isnan(x.result.srt_db_spl), ny = std::isnan(y.result.srt_db_spl);
      if (nx != ny || (!nx && x.result.srt_db_spl != y.result.srt_db_spl)) return false;
    }
    return true;
  }
};

inline std::string atlas_header(const std::vector<std::string>& extra) {
  std::string h;
  for (const auto& c : atlas_columns()) h += (h.empty() ? "" : "\t") + c;
  for (const auto& c : extra) h += "\t" + c;
  return h;
}

inline std::string atlas_line(const AtlasRow& r) {
  const auto& s = r.spec;
  std::string line = format_number(s.azimuth_deg) + '\t' + std::to_string(s.ix) + '\t' + std::to_string(s.iy) + '\t' +
                     format_number(s.mesh_m) + '\t' + (s.tv ? "1" : "0") + '\t' + (s.door ? "1" : "0") + '\t' +
                     listener::to_string(s.profile) + '\t' +
                     (std::isnan(r.result.srt_db_spl) ? std::string("NA") : format_number(r.result.srt_db_spl)) + '\t' +
                     recognizer::to_string(r.result.flag);
  for (const auto& e : r.extra) line += "\t" + e;
  return line;
}

inline void write_atlas_stream(std::ostream& os, const SrtAtlas& a) {
  os << atlas_header(a.extra_columns) << '\n';
  for (const auto& r : a.rows) os << atlas_line(r) << '\n';
}

inline std::filesystem::path meta_path(const std::filesystem::path& atlas) {
  auto p = atlas;
  p += ".meta";
  return p;
}

/// Writes the TSV atomically; metadata goes to a sidecar `<path>.meta` file.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp." + hex64(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("cannot write " + tmp.string());
    os << text;
    if (!os) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_atlas(const std::filesystem::path& path, const SrtAtlas& a) {
  std::ostringstream os;
  write_atlas_stream(os, a);
  write_text_atomic(path, os.str());
  if (!a.metadata.empty()) {
    std::string meta;
    for (const auto& [k, v] : a.metadata) meta += k + " = " + v + "\n";
    write_text_atomic(meta_path(path), meta);
  }
}

inline SrtAtlas parse_atlas(std::string_view text, const std::string& source = "atlas") {
  SrtAtlas a;
  const auto lines = split(text, '\n');
  std::size_t ln = 0;
  while (ln < lines.size() && trim(lines[ln]).empty()) ++ln;
  if (ln >= lines.size()) throw ParseError(source + ": missing header", 1, 1);
  auto strip_cr = [](std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
  };
  const auto header = split(strip_cr(lines[ln]), '\t');
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (pos.count(header[i])) throw ParseError(source + ": duplicate column '" + header[i] + "'", ln + 1, 1);
    pos[header[i]] = i;
  }
  std::vector<std::size_t> known;
  for (const auto& c : atlas_columns()) {
    auto it = pos.find(c);
    if (it == pos.end()) throw ParseError(source + ": missing column '" + c + "'", ln + 1, 1);
    known.push_back(it->second);
  }
  std::vector<std::size_t> extra_idx;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (std::find(known.begin(), known.end(), i) == known.end()) {
      a.extra_columns.push_back(header[i]);
      extra_idx.push_back(i);
    }

  for (++ln; ln < lines.size(); ++ln) {
    const auto line = strip_cr(lines[ln]);
    if (trim(line).empty()) continue;
    const auto f = split(line, '\t');
    const std::size_t lineno = ln + 1;
    auto fail = [&](const std::string& what) -> ParseError {
      return ParseError(source + ":" + std::to_string(lineno) + ": " + what, lineno, 1);
    };
    if (f.size() != header.size())
      throw fail("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
    auto num = [&](std::size_t col, const char* name) {
      double v;
      if (!parse_double(f[known[col]], v) || !std::isfinite(v)) throw fail(std::string("bad ") + name + " '" + f[known[col]] + "'");
      return v;
    };
    auto integer = [&](std::size_t col, const char* name) {
      long long v;
      if (!parse_int(f[known[col]], v)) throw fail(std::string("bad ") + name + " '" + f[known[col]] + "'");
      return static_cast<int>(v);
    };
    auto boolean = [&](std::size_t col, const char* name) {
      const auto& s = f[known[col]];
      if (s == "1") return true;
      if (s == "0") return false;
      throw fail(std::string("bad ") + name + " '" + s + "' (expected 0 or 1)");
    };
    AtlasRow r;
    r.spec.azimuth_deg = num(0, "azimuth_deg");
    r.spec.ix = integer(1, "ix");
    r.spec.iy = integer(2, "iy");
    r.spec.mesh_m = num(3, "mesh_m");
    r.spec.tv = boolean(4, "tv");
    r.spec.door = boolean(5, "door");
    const auto prof = listener::parse_profile(f[known[6]]);
    if (!prof) throw fail("unknown profile '" + f[known[6]] + "'");
    r.spec.profile = *prof;
    const auto flag = recognizer::parse_flag(f[known[8]]);
    if (!flag) throw fail("unknown flag '" + f[known[8]] + "'");
    r.result.flag = *flag;
    if (f[known[7]] == "NA") {
      r.result.srt_db_spl = std::numeric_limits<double>::quiet_NaN();
      r.result.flag = SrtFlag::error;
    } else {
      r.result.srt_db_spl = num(7, "srt_db_spl");
    }
    r.result.condition_id = r.spec.id();
    for (auto i : extra_idx) r.extra.push_back(f[i]);
    a.rows.push_back(std::move(r));
  }
  return a;
}

inline SrtAtlas read_atlas(const std::filesystem::path& path) {
  auto a = parse_atlas(read_text_file(path), path.string());
  const auto mp = meta_path(path);
  if (std::filesystem::exists(mp)) {
    const auto kv = KeyValueConfig::load(mp);
    for (const auto& k : kv.keys()) a.metadata[k] = kv.get(k);
  }
  return a;
}

// Refinement ----------------------------------------------------------------------

/// Conditions for the halved mesh that are not already covered: every
/// non-spatial combination present in the atlas, at every lattice point of
/// the finer mesh whose center does not coincide with an existing cell.
inline std::vector<ConditionSpec> refine_mesh(const SrtAtlas& atlas, const scene::WalkableArea& area) {
  if (atlas.rows.empty()) throw ValidationError("refine_mesh: empty atlas");
  double mesh = atlas.rows.front().spec.mesh_m;
  for (const auto& r : atlas.rows) mesh = std::min(mesh, r.spec.mesh_m);
  const double fine = mesh / 2.0;

  using Combo = std::tuple<double, bool, bool, ProfileName>;
  std::set<Combo> combos;
  std::set<std::tuple<Combo, long long, long long>> covered;  // positions in units of the fine mesh
  for (const auto& r : atlas.rows) {
    const Combo k{r.spec.azimuth_deg, r.spec.tv, r.spec.door, r.spec.profile};
    combos.insert(k);
    const Vec3 p = area.cell_center(r.spec.ix, r.spec.iy, r.spec.mesh_m);
    covered.insert({k, std::llround((p.x - area.x_min) / fine), std::llround((p.y - area.y_min) / fine)});
  }
  std::vector<ConditionSpec> out;
  for (const auto& k : combos)
    for (int iy = 0; iy < area.count_y(fine); ++iy)
      for (int ix = 0; ix < area.count_x(fine); ++ix) {
        if (covered.count({k, ix, iy})) continue;
        const auto& [az, tv, door, prof] = k;
        out.push_back({az, ix, iy, fine, tv, door, prof});
      }
  std::sort(out.begin(), out.end());
  return out;
}

// Runner --------------------------------------------------------------------------

inline int worker_count() {
  if (const char* env = std::getenv("SRMAP_WORKERS")) {
    long long v;
    if (parse_int(env, v) && v >= 1) return static_cast<int>(v);
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

struct ShardReport {
  std::size_t run = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
};

inline std::filesystem::path condition_file(const std::filesystem::path& out_dir, const ConditionSpec& c) {
  return out_dir / "conditions" / (c.id() + ".tsv");
}

/// Runs conditions offset, offset + increment, ... and writes one result
/// file per condition (temp file, then rename). Existing results are kept,
/// so an interrupted shard can simply be rerun. Failures become error rows.
inline ShardReport run_shard(Simulator& sim, const std::vector<ConditionSpec>& conditions, std::size_t increment,
                             std::size_t offset, const std::filesystem::path& out_dir, int workers = worker_count(),
                             std::ostream* log = &std::cerr) {
  if (increment < 1) throw ValidationError("run_shard: increment must be >= 1");
  if (offset >= increment) throw ValidationError("run_shard: offset must be < increment");
  std::filesystem::create_directories(out_dir / "conditions");
  std::filesystem::create_directories(out_dir / "maps");

  std::vector<ConditionSpec> mine;
  ShardReport report;
  for (std::size_t i = offset; i < conditions.size(); i += increment) {
    if (std::filesystem::exists(condition_file(out_dir, conditions[i]))) ++report.skipped;
    else mine.push_back(conditions[i]);
  }

  std::mutex mutex;
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= mine.size()) return;
      const auto& c = mine[i];
      AtlasRow row;
      row.spec = c;
      std::string note;
      double wall = 0.0;
      try {
        auto outcome = sim.run(c);
        row.result = outcome.srt;
        wall = outcome.wall_s;
        std::ostringstream map;
        recognizer::write_result_map(map, outcome.map);
        write_text_atomic(out_dir / "maps" / (c.id() + ".tsv"), map.str());
      } catch (const std::exception& e) {
        row.result = SrtResult{};
        row.result.flag = SrtFlag::error;
        note = e.what();
      }
      write_text_atomic(condition_file(out_dir, c), atlas_header({}) + "\n" + atlas_line(row) + "\n");
      std::lock_guard lock(mutex);
      ++report.run;
      if (!note.empty()) ++report.failed;
      if (log) {
        *log << "[srmap] " << c.id() << " srt=" << (std::isnan(row.result.srt_db_spl) ? std::string("NA") : format_number(row.result.srt_db_spl))
             << " flag=" << recognizer::to_string(row.result.flag) << " wall_s=" << format_number(std::round(wall * 100) / 100);
        if (!note.empty()) *log << " error=\"" << note << '"';
        *log << std::endl;
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(mine.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < n; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return report;
}

inline std::map<std::string, std::string> atlas_metadata(const Simulator& sim, const std::string& grid) {
  const auto& cfg = sim.config();
  return {
      {"scene_hash", hex64(sim.scene_hash())},
      {"software_version", SRMAP_VERSION},
      {"grid", grid},
      {"seed_scheme", "fnv1a64(canonical condition; scene hash)"},
      {"budget", "n_train=" + std::to_string(cfg.budget.n_train) + " n_test=" + std::to_string(cfg.budget.n_test) +
                     " levels=" + std::to_string(cfg.n_levels) + " step_db=" + format_number(cfg.level_step)},
  };
}

/// Gathers every per-condition result under `out_dir` into one sorted atlas.
inline SrtAtlas collect(const std::filesystem::path& out_dir) {
  SrtAtlas atlas;
  const auto dir = out_dir / "conditions";
  if (!std::filesystem::exists(dir)) throw Error("collect: no results under " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".tsv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    auto part = parse_atlas(read_text_file(f), f.string());
    for (auto& r : part.rows) atlas.rows.push_back(std::move(r));
  }
  atlas.sort();
  return atlas;
}

}  // namespace srmap::orchestrator
