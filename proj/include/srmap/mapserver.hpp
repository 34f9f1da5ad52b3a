#pragma once

// Color quantization, vocal-effort labels and the HTTP/JSON map service.
// Requests are answered from an immutable snapshot; reload swaps it whole.

#include <cmath>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "srmap/common.hpp"
#include "srmap/config.hpp"
#include "srmap/orchestrator.hpp"
#include "srmap/scene.hpp"

namespace srmap::mapserver {

using json = nlohmann::json;
using orchestrator::SrtAtlas;
using listener::ProfileName;

inline const std::vector<int>& allowed_color_counts() {
  static const std::vector<int> v{8, 12, 16, 24};
  return v;
}

struct EffortBand {
  std::string label;
  double lo = 0.0;
  double hi = 0.0;
};

struct Rgb {
  int r = 0, g = 0, b = 0;
  std::string hex() const {
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
  }
};

// "rrggbb" or "#rrggbb"; config files use the bare form since '#' starts a comment there.
inline Rgb parse_rgb(std::string_view s) {
  const std::string_view in = s;
  if (!s.empty() && s[0] == '#') s.remove_prefix(1);
  if (s.size() != 6) throw ValidationError("palette: bad color '" + std::string(in) + "'");
  auto nib = [&](char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw ValidationError("palette: bad color '" + std::string(in) + "'");
  };
  auto byte = [&](int i) { return nib(s[i]) * 16 + nib(s[i + 1]); };
  return {byte(0), byte(2), byte(4)};
}

/// n colors spread evenly over the anchor sequence (linear RGB blend).
inline std::vector<std::string> resample_palette(const std::vector<Rgb>& anchors, int n) {
  if (anchors.size() < 2) throw ValidationError("palette: need at least two anchors");
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : static_cast<double>(i) * (anchors.size() - 1) / (n - 1);
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(t), anchors.size() - 2);
    const double f = t - k;
    auto mix = [&](int a, int b) { return static_cast<int>(std::lround(a + f * (b - a))); };
    const auto &a = anchors[k], &b = anchors[k + 1];
    out.push_back(Rgb{mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)}.hex());
  }
  return out;
}

struct ColorScale {
  int n_colors = 12;
  double lo_db_spl = 45.0;
  double hi_db_spl = 85.0;
  std::vector<std::string> palette;
  std::vector<EffortBand> effort_bands;

  double grade_width() const { return (hi_db_spl - lo_db_spl) / n_colors; }

  void validate() const {
    if (n_colors < 1) throw ValidationError("color scale: need at least one color");
    if (!(hi_db_spl > lo_db_spl)) throw ValidationError("color scale: hi must exceed lo");
    if (static_cast<int>(palette.size()) != n_colors) throw ValidationError("color scale: palette length != n_colors");
    if (effort_bands.empty()) throw ValidationError("color scale: no effort bands");
    if (effort_bands.front().lo != lo_db_spl || effort_bands.back().hi != hi_db_spl)
      throw ValidationError("color scale: effort bands must span [lo, hi]");
    for (std::size_t i = 0; i < effort_bands.size(); ++i) {
      if (!(effort_bands[i].hi > effort_bands[i].lo)) throw ValidationError("color scale: empty effort band");
      if (i > 0 && effort_bands[i].lo != effort_bands[i - 1].hi)
        throw ValidationError("color scale: effort bands overlap or leave a gap");
    }
  }

  /// Scale from a palette file (anchors, effort labels and edges).
  static ColorScale load(const std::filesystem::path& path, int n_colors = 12) {
    const auto kv = KeyValueConfig::load(path);
    std::vector<Rgb> anchors;
    for (const auto& a : split_whitespace(kv.get("anchors"))) anchors.push_back(parse_rgb(a));
    ColorScale s;
    s.n_colors = n_colors;
    if (kv.has("lo_db_spl")) s.lo_db_spl = kv.number("lo_db_spl");
    if (kv.has("hi_db_spl")) s.hi_db_spl = kv.number("hi_db_spl");
    s.palette = resample_palette(anchors, n_colors);
    const auto labels = split_whitespace(kv.get("effort_labels"));
    const auto edges = kv.numbers("effort_edges");
    if (edges.size() != labels.size() + 1)
      throw ValidationError(path.string() + ": effort_edges needs one more entry than effort_labels");
    for (std::size_t i = 0; i < labels.size(); ++i) s.effort_bands.push_back({labels[i], edges[i], edges[i + 1]});
    s.validate();
    return s;
  }

  static ColorScale bundled(int n_colors = 12) { return load(data_dir() / "palette.conf", n_colors); }
};

inline int quantize_level(double srt_db_spl, const ColorScale& s) {
  if (!std::isfinite(srt_db_spl)) throw ValidationError("quantize_level: SRT must be finite");
  const double g = std::floor((srt_db_spl - s.lo_db_spl) / s.grade_width());
  return static_cast<int>(std::clamp(g, 0.0, static_cast<double>(s.n_colors - 1)));
}

inline const std::string& effort_label(double srt_db_spl, const ColorScale& s) {
  if (!std::isfinite(srt_db_spl)) throw ValidationError("effort_label: SRT must be finite");
  for (const auto& b : s.effort_bands)
    if (srt_db_spl < b.hi) return b.label;
  return s.effort_bands.back().label;
}

// Service ---------------------------------------------------------------------

struct Reply {
  int status = 200;
  std::string body;
};

struct Snapshot {
  SrtAtlas atlas;
  scene::WalkableArea area;
  json geometry;
  json meta;  // prebuilt /api/meta body
};

inline json scene_geometry(const scene::SceneTemplate& tpl) {
  const auto inst = scene::instantiate(tpl, scene::SceneParams::environment(0.0, true, true, {}));
  auto vec = [](Vec3 v) { return json::array({v.x, v.y, v.z}); };
  json g;
  g["name"] = inst.name;
  g["rooms"] = json::array();
  for (const auto& r : inst.rooms) g["rooms"].push_back({{"name", r.name}, {"min", vec(r.min)}, {"max", vec(r.max)}});
  g["doors"] = json::array();
  for (const auto& d : inst.doors) g["doors"].push_back({{"name", d.name}, {"min", vec(d.min)}, {"max", vec(d.max)}});
  g["sources"] = json::array();
  for (const auto& s : inst.sources)
    if (s.signal != scene::SignalKind::impulse) g["sources"].push_back({{"name", s.name}, {"group", s.group}, {"position", vec(s.position)}});
  g["listener"] = {{"position", vec(inst.receiver.position)}, {"heading_deg", inst.receiver.heading_deg}};
  return g;
}

class MapService {
 public:
  explicit MapService(ColorScale base = ColorScale::bundled(), std::filesystem::path palette = data_dir() / "palette.conf")
      : base_(std::move(base)), palette_(std::move(palette)) {
    for (int n : allowed_color_counts()) scales_.emplace(n, n == base_.n_colors ? base_ : ColorScale::load(palette_, n));
  }

  void load(SrtAtlas atlas, const scene::SceneTemplate& tpl) {
    auto snap = std::make_shared<Snapshot>();
    atlas.sort();
    snap->atlas = std::move(atlas);
    snap->area = scene::walkable_area(tpl);
    snap->geometry = scene_geometry(tpl);
    snap->meta = build_meta(*snap);
    std::lock_guard lock(mutex_);
    snapshot_ = std::move(snap);
  }

  bool loaded() const { return current() != nullptr; }

  Reply meta() const {
    auto snap = current();
    if (!snap) return error(503, "no atlas loaded");
    return {200, snap->meta.dump()};
  }

  /// Query keys: azimuth, tv, door, profile; optional mesh and colors.
  Reply map(const std::map<std::string, std::string>& q) const {
    auto snap = current();
    if (!snap) return error(503, "no atlas loaded");
    for (const auto& [k, v] : q)
      if (k != "azimuth" && k != "tv" && k != "door" && k != "profile" && k != "mesh" && k != "colors")
        return error(422, "unknown query parameter '" + k + "'");
    auto get = [&](const char* k) -> std::optional<std::string> {
      auto it = q.find(k);
      if (it == q.end()) return std::nullopt;
      return it->second;
    };
    double az;
    const auto az_s = get("azimuth");
    if (!az_s || !parse_double(*az_s, az) || !std::isfinite(az)) return error(422, "azimuth must be a number");
    auto flag = [&](const char* k, bool& out) {
      const auto v = get(k);
      if (!v || (*v != "0" && *v != "1")) return false;
      out = *v == "1";
      return true;
    };
    bool tv, door;
    if (!flag("tv", tv)) return error(422, "tv must be 0 or 1");
    if (!flag("door", door)) return error(422, "door must be 0 or 1");
    const auto prof_s = get("profile");
    const auto prof = prof_s ? listener::parse_profile(*prof_s) : std::nullopt;
    if (!prof) return error(422, "profile must be one of normal, impaired_unaided, impaired_aided");
    int colors = base_.n_colors;
    if (const auto c = get("colors")) {
      long long v;
      if (!parse_int(*c, v) || !scales_.count(static_cast<int>(v))) return error(422, "colors must be one of 8, 12, 16, 24");
      colors = static_cast<int>(v);
    }
    std::optional<double> mesh;
    if (const auto m = get("mesh")) {
      double v;
      if (!parse_double(*m, v) || !(v > 0.0)) return error(422, "mesh must be a positive number");
      mesh = v;
    }

    std::vector<const orchestrator::AtlasRow*> rows;
    double finest = std::numeric_limits<double>::infinity();
    for (const auto& r : snap->atlas.rows)
      if (r.spec.azimuth_deg == az && r.spec.tv == tv && r.spec.door == door && r.spec.profile == *prof) {
        rows.push_back(&r);
        finest = std::min(finest, r.spec.mesh_m);
      }
    if (rows.empty()) return error(404, "no results for this combination");
    const double m = mesh.value_or(finest);
    if (m < finest - 1e-12) return error(404, "no results at this mesh size");

    const auto& area = snap->area;
    const int nx = area.count_x(m), ny = area.count_y(m);
    std::vector<const orchestrator::AtlasRow*> grid(static_cast<std::size_t>(nx) * ny, nullptr);
    for (const auto* r : rows) {
      if (r->spec.mesh_m < m - 1e-12) continue;
      const Vec3 p = area.cell_center(r->spec.ix, r->spec.iy, r->spec.mesh_m);
      const double fx = (p.x - area.x_min) / m, fy = (p.y - area.y_min) / m;
      const long long ix = std::llround(fx), iy = std::llround(fy);
      if (std::abs(fx - ix) > 1e-6 || std::abs(fy - iy) > 1e-6 || ix < 0 || iy < 0 || ix >= nx || iy >= ny) continue;
      auto& slot = grid[static_cast<std::size_t>(iy) * nx + ix];
      if (!slot || r->spec.mesh_m < slot->spec.mesh_m) slot = r;  // the finer run wins
    }

    const auto& scale = scales_.at(colors);
    json cells = json::array();
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) {
        const auto* r = grid[static_cast<std::size_t>(iy) * nx + ix];
        const Vec3 p = area.cell_center(ix, iy, m);
        json c = {{"ix", ix}, {"iy", iy}, {"x", p.x}, {"y", p.y}};
        if (!r) {
          c["srt"] = nullptr, c["grade"] = nullptr, c["effort"] = nullptr, c["flag"] = "missing";
        } else if (r->missing()) {
          c["srt"] = nullptr, c["grade"] = nullptr, c["effort"] = nullptr, c["flag"] = "error";
        } else {
          const double s = r->result.srt_db_spl;
          c["srt"] = s;
          c["grade"] = quantize_level(s, scale);
          c["effort"] = effort_label(s, scale);
          c["flag"] = recognizer::to_string(r->result.flag);
        }
        cells.push_back(std::move(c));
      }
    json body = {{"azimuth_deg", az}, {"tv", tv},  {"door", door}, {"profile", listener::to_string(*prof)},
                 {"mesh_m", m},       {"nx", nx},  {"ny", ny},     {"colors", colors},
                 {"palette", scale.palette},        {"cells", std::move(cells)}};
    return {200, body.dump()};
  }

  const ColorScale& scale(int n) const { return scales_.at(n); }

 private:
  static Reply error(int status, const std::string& msg) { return {status, json{{"error", msg}}.dump()}; }

  std::shared_ptr<const Snapshot> current() const {
    std::lock_guard lock(mutex_);
    return snapshot_;
  }

  json build_meta(const Snapshot& s) const {
    std::set<double> az, meshes;
    std::set<std::string> profiles;
    std::set<std::pair<bool, bool>> states;
    for (const auto& r : s.atlas.rows) {
      az.insert(r.spec.azimuth_deg);
      meshes.insert(r.spec.mesh_m);
      profiles.insert(listener::to_string(r.spec.profile));
      states.insert({r.spec.tv, r.spec.door});
    }
    json st = json::array();
    for (auto [tv, door] : states) st.push_back({{"tv", tv}, {"door", door}});
    std::vector<std::string> prof_order;
    for (auto p : {ProfileName::normal, ProfileName::impaired_unaided, ProfileName::impaired_aided})
      if (profiles.count(listener::to_string(p))) prof_order.push_back(listener::to_string(p));
    json bands = json::array();
    for (const auto& b : base_.effort_bands) bands.push_back({{"label", b.label}, {"lo_db_spl", b.lo}, {"hi_db_spl", b.hi}});
    const double coarse = meshes.empty() ? s.area.mesh_m : *meshes.rbegin();
    json meta;
    meta["scene"] = s.geometry;
    meta["grid"] = {{"mesh_m", coarse},
                    {"meshes", std::vector<double>(meshes.begin(), meshes.end())},
                    {"walkable_min", {s.area.x_min, s.area.y_min}},
                    {"walkable_max", {s.area.x_max, s.area.y_max}},
                    {"nx", s.area.count_x(coarse)},
                    {"ny", s.area.count_y(coarse)}};
    meta["orientations"] = std::vector<double>(az.begin(), az.end());
    meta["profiles"] = prof_order;
    meta["noise_states"] = st;
    meta["colors"] = {{"n", base_.n_colors},
                      {"allowed", allowed_color_counts()},
                      {"lo_db_spl", base_.lo_db_spl},
                      {"hi_db_spl", base_.hi_db_spl},
                      {"grade_width_db", base_.grade_width()},
                      {"palette", base_.palette},
                      {"effort_bands", bands}};
    meta["atlas"] = s.atlas.metadata;
    meta["rows"] = s.atlas.rows.size();
    return meta;
  }

  ColorScale base_;
  std::filesystem::path palette_;
  std::map<int, ColorScale> scales_;
  mutable std::mutex mutex_;
  std::shared_ptr<const Snapshot> snapshot_;
};

/// Binds the service to an httplib server with permissive CORS.
inline void install_routes(httplib::Server& srv, const MapService& svc) {
  auto send = [](httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Methods", "GET, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  srv.Get("/api/meta", [&svc, send](const httplib::Request&, httplib::Response& res) { send(res, svc.meta()); });
  srv.Get("/api/map", [&svc, send](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> q;
    for (const auto& [k, v] : req.params) {
      if (q.count(k)) {
        send(res, {422, json{{"error", "repeated query parameter '" + k + "'"}}.dump()});
        return;
      }
      q[k] = v;
    }
    send(res, svc.map(q));
  });
  srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
}

}  // namespace srmap::mapserver
