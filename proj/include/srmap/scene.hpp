#pragma once

// Scene templates: markup with placeholder tokens, bound to typed rendering
// parameters and interpreted into a validated SceneInstance.
//
// A placeholder is any whitespace-delimited token of an attribute value or
// element text that consists of an uppercase letter followed by at least two
// characters from [A-Z0-9_]. Binding replaces whole tokens inside the parsed
// tree; no textual substitution is performed on the raw markup.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "srmap/common.hpp"
#include "srmap/config.hpp"
#include "srmap/markup.hpp"

namespace srmap::scene {

enum class RenderMode { environment, hrir };
enum class ReceiverType { ortf };
enum class SignalKind { impulse, tv, conversation, dishwasher };

inline std::string to_string(RenderMode m) { return m == RenderMode::hrir ? "hrir" : "environment"; }

inline RenderMode parse_render_mode(std::string_view s) {
  if (s == "environment") return RenderMode::environment;
  if (s == "hrir") return RenderMode::hrir;
  throw ValidationError("unknown render mode '" + std::string(s) + "'");
}

inline ReceiverType parse_receiver_type(std::string_view s) {
  if (s == "ortf") return ReceiverType::ortf;
  throw ValidationError("unsupported receiver type '" + std::string(s) + "'");
}

inline SignalKind parse_signal_kind(std::string_view s) {
  if (s == "impulse") return SignalKind::impulse;
  if (s == "tv") return SignalKind::tv;
  if (s == "conversation") return SignalKind::conversation;
  if (s == "dishwasher") return SignalKind::dishwasher;
  throw ValidationError("unknown sound generator '" + std::string(s) + "'");
}

// Placeholder names understood by instantiate().
namespace placeholder {
inline constexpr const char* kProbeMute = "PROBEMUTE";
inline constexpr const char* kProbeX = "PROBEXXX";
inline constexpr const char* kProbeY = "PROBEYYY";
inline constexpr const char* kProbeZ = "PROBEZZZ";
inline constexpr const char* kProbeStart = "PROBESTART";
inline constexpr const char* kReceiverAzimuth = "RECEIVERAZIMUTH";
inline constexpr const char* kTvMute = "TVMUTE";
inline constexpr const char* kConnectedRoomMute = "CRMUTE";
inline constexpr const char* kReverb = "REVERB";
}  // namespace placeholder

inline bool is_placeholder_token(std::string_view tok) {
  if (tok.size() < 3 || !(tok[0] >= 'A' && tok[0] <= 'Z')) return false;
  return std::all_of(tok.begin(), tok.end(), [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
  });
}

struct SceneTemplate {
  std::string raw_text;
  markup::Node root;
  std::set<std::string> placeholder_names;

  std::uint64_t hash() const { return fnv1a64(raw_text); }
};

struct SceneParams {
  RenderMode mode = RenderMode::environment;
  std::string outfile;
  double start_s = 0.0;
  double duration_s = 10.0;
  Vec3 probe_xyz;
  ReceiverType receiver_type = ReceiverType::ortf;
  double receiver_azimuth_deg = 0.0;
  bool tv_on = true;
  bool connected_room_on = true;
  bool reverb_on = true;

  static SceneParams environment(double azimuth_deg, bool tv, bool connected_room, Vec3 probe) {
    SceneParams p;
    p.mode = RenderMode::environment;
    p.duration_s = 10.0;
    p.receiver_azimuth_deg = azimuth_deg;
    p.tv_on = tv;
    p.connected_room_on = connected_room;
    p.probe_xyz = probe;
    return p;
  }

  static SceneParams hrir(Vec3 probe, double azimuth_deg) {
    SceneParams p;
    p.mode = RenderMode::hrir;
    p.duration_s = 1.0;
    p.probe_xyz = probe;
    p.receiver_azimuth_deg = azimuth_deg;
    return p;
  }

  void validate() const {
    if (!(start_s >= 0.0)) throw ValidationError("scene params: start must be >= 0");
    if (!(duration_s > 0.0)) throw ValidationError("scene params: duration must be > 0");
    if (!(receiver_azimuth_deg >= -180.0 && receiver_azimuth_deg <= 180.0))
      throw ValidationError("scene params: receiver azimuth must lie in [-180, 180]");
    if (!std::isfinite(probe_xyz.x) || !std::isfinite(probe_xyz.y) || !std::isfinite(probe_xyz.z))
      throw ValidationError("scene params: probe position must be finite");
  }
};

struct Room {
  std::string name;
  Vec3 min;
  Vec3 max;
  double reflection = 0.7;

  bool contains(Vec3 p) const {
    return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z &&
           p.z <= max.z;
  }
  Vec3 size() const { return max - min; }
  friend bool operator==(const Room&, const Room&) = default;
};

struct Door {
  std::string name;
  std::string room_a;
  std::string room_b;
  Vec3 min;
  Vec3 max;
  friend bool operator==(const Door&, const Door&) = default;
};

struct Source {
  std::string name;
  std::string group;
  Vec3 position;
  SignalKind signal = SignalKind::impulse;
  double level_db = 65.0;  // RMS dB SPL at 1 m
  std::uint64_t seed = 0;
  double start_s = 0.0;
  bool muted = false;
  friend bool operator==(const Source&, const Source&) = default;
};

struct Receiver {
  std::string name;
  ReceiverType type = ReceiverType::ortf;
  Vec3 position;
  double heading_deg = 0.0;  // bearing of azimuth 0, counterclockwise from +x
  double azimuth_deg = 0.0;  // positive turns the head to the left

  double look_bearing_deg() const { return heading_deg + azimuth_deg; }
  friend bool operator==(const Receiver&, const Receiver&) = default;
};

struct ReverbSpec {
  bool enabled = true;
  double rt60_s = 0.4;
  double level_db = -16.0;  // diffuse tail energy relative to the 1 m direct-path energy
  std::uint64_t seed = 0;
  friend bool operator==(const ReverbSpec&, const ReverbSpec&) = default;
};

/// Talker positions: lattice points min + k * mesh that lie within [min, max].
struct WalkableArea {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;
  double mesh_m = 0.5;
  double height_m = 1.5;

  int count_x(double mesh) const { return static_cast<int>(std::floor((x_max - x_min) / mesh + 1e-9)) + 1; }
  int count_y(double mesh) const { return static_cast<int>(std::floor((y_max - y_min) / mesh + 1e-9)) + 1; }
  Vec3 cell_center(int ix, int iy, double mesh) const {
    return {x_min + ix * mesh, y_min + iy * mesh, height_m};
  }
  friend bool operator==(const WalkableArea&, const WalkableArea&) = default;
};

struct SceneInstance {
  std::string name;
  int sample_rate = kDefaultSampleRate;
  double calibration_db = kDefaultCalibration;
  RenderMode mode = RenderMode::environment;
  double start_s = 0.0;
  double duration_s = 10.0;
  std::vector<Room> rooms;
  std::vector<Door> doors;
  std::vector<Source> sources;
  Receiver receiver;
  ReverbSpec reverb;
  std::optional<WalkableArea> walkable;
  markup::Node document;  // substituted markup

  const Room* room_containing(Vec3 p) const {
    for (const auto& r : rooms)
      if (r.contains(p)) return &r;
    return nullptr;
  }
  const Source* find_source(std::string_view n) const {
    for (const auto& s : sources)
      if (s.name == n) return &s;
    return nullptr;
  }
  friend bool operator==(const SceneInstance&, const SceneInstance&) = default;
};

namespace detail {

inline void collect_placeholders(const markup::Node& n, std::set<std::string>& out) {
  for (const auto& [k, v] : n.attributes)
    for (const auto& tok : split_whitespace(v))
      if (is_placeholder_token(tok)) out.insert(tok);
  for (const auto& tok : split_whitespace(n.text))
    if (is_placeholder_token(tok)) out.insert(tok);
  for (const auto& c : n.children) collect_placeholders(c, out);
}

inline std::string substitute_tokens(const std::string& value,
                                     const std::map<std::string, std::string>& bindings) {
  bool any = false;
  for (const auto& tok : split_whitespace(value))
    if (bindings.count(tok)) any = true;
  if (!any) return value;
  std::string out;
  for (const auto& tok : split_whitespace(value)) {
    if (!out.empty()) out += ' ';
    auto it = bindings.find(tok);
    out += it != bindings.end() ? it->second : tok;
  }
  return out;
}

inline void bind(markup::Node& n, const std::map<std::string, std::string>& bindings) {
  for (auto& [k, v] : n.attributes) v = substitute_tokens(v, bindings);
  n.text = substitute_tokens(n.text, bindings);
  for (auto& c : n.children) bind(c, bindings);
}

[[noreturn]] inline void invalid(const markup::Node& n, const std::string& msg) {
  throw ValidationError("scene: <" + n.name + "> at line " + std::to_string(n.line) + ": " + msg);
}

inline const std::string& required_attr(const markup::Node& n, std::string_view key) {
  const auto* v = n.attribute(key);
  if (!v) invalid(n, "missing attribute '" + std::string(key) + "'");
  return *v;
}

inline double number_attr(const markup::Node& n, std::string_view key) {
  double v;
  if (!parse_double(required_attr(n, key), v)) invalid(n, "attribute '" + std::string(key) + "' is not a number");
  return v;
}

inline double number_attr_or(const markup::Node& n, std::string_view key, double fallback) {
  return n.attribute(key) ? number_attr(n, key) : fallback;
}

inline bool flag_attr(const markup::Node& n, std::string_view key) {
  const auto& v = required_attr(n, key);
  if (v == "0" || v == "false") return false;
  if (v == "1" || v == "true") return true;
  invalid(n, "attribute '" + std::string(key) + "' must be 0 or 1");
}

inline std::vector<double> numbers(const markup::Node& n, std::string_view text) {
  std::vector<double> out;
  for (const auto& tok : split_whitespace(text)) {
    double v;
    if (!parse_double(tok, v)) invalid(n, "'" + tok + "' is not a number");
    out.push_back(v);
  }
  return out;
}

inline Vec3 vec_attr(const markup::Node& n, std::string_view key, std::size_t dims = 3) {
  const auto v = numbers(n, required_attr(n, key));
  if (v.size() != dims) invalid(n, "attribute '" + std::string(key) + "' needs " + std::to_string(dims) + " numbers");
  return {v[0], v[1], dims == 3 ? v[2] : 0.0};
}

/// TASCAR-style "<position>t x y z</position>"; the time stamp is ignored.
inline Vec3 position_of(const markup::Node& n) {
  const auto* pos = n.child("position");
  if (!pos) invalid(n, "missing <position>");
  const auto v = numbers(*pos, pos->text);
  if (v.size() == 4) return {v[1], v[2], v[3]};
  if (v.size() == 3) return {v[0], v[1], v[2]};
  invalid(*pos, "expected 't x y z'");
}

inline std::uint64_t seed_attr(const markup::Node& n, std::string_view key, std::uint64_t fallback) {
  const auto* v = n.attribute(key);
  if (!v) return fallback;
  long long s;
  if (!parse_int(*v, s) || s < 0) invalid(n, "seed must be a non-negative integer");
  return static_cast<std::uint64_t>(s);
}

inline SceneInstance interpret(const markup::Node& root) {
  if (root.name != "scene") invalid(root, "root element must be <scene>");
  SceneInstance inst;
  inst.name = root.attribute("name") ? *root.attribute("name") : "scene";
  inst.sample_rate = static_cast<int>(number_attr_or(root, "samplerate", kDefaultSampleRate));
  inst.calibration_db = number_attr_or(root, "calibration", kDefaultCalibration);
  if (inst.sample_rate <= 0) invalid(root, "samplerate must be positive");
  int receivers = 0;
  std::set<std::string> source_names;
  for (const auto& n : root.children) {
    if (n.name == "room") {
      Room r;
      r.name = required_attr(n, "name");
      r.min = vec_attr(n, "min");
      r.max = vec_attr(n, "max");
      r.reflection = number_attr_or(n, "reflection", 0.7);
      if (!(r.max.x > r.min.x && r.max.y > r.min.y && r.max.z > r.min.z)) invalid(n, "room has no volume");
      if (r.reflection < 0.0 || r.reflection >= 1.0) invalid(n, "reflection must lie in [0, 1)");
      inst.rooms.push_back(r);
    } else if (n.name == "door") {
      Door d;
      d.name = required_attr(n, "name");
      const auto rooms = split_whitespace(required_attr(n, "rooms"));
      if (rooms.size() != 2) invalid(n, "door connects exactly two rooms");
      d.room_a = rooms[0];
      d.room_b = rooms[1];
      d.min = vec_attr(n, "min");
      d.max = vec_attr(n, "max");
      inst.doors.push_back(d);
    } else if (n.name == "source") {
      Source s;
      s.name = required_attr(n, "name");
      if (!source_names.insert(s.name).second) invalid(n, "duplicate source name '" + s.name + "'");
      s.group = n.attribute("group") ? *n.attribute("group") : s.name;
      s.muted = flag_attr(n, "mute");
      s.position = position_of(n);
      if (const auto* sound = n.child("sound")) {
        if (sound->attribute("generator")) {
          s.signal = parse_signal_kind(*sound->attribute("generator"));
          s.level_db = number_attr(*sound, "level");
          s.seed = seed_attr(*sound, "seed", 0);
        } else if (const auto* plugins = sound->child("plugins")) {
          const auto* file = plugins->child("sndfile");
          if (!file) invalid(*plugins, "expected <sndfile>");
          s.signal = SignalKind::impulse;
          s.level_db = number_attr_or(*file, "level", 65.0);
          s.start_s = number_attr_or(*file, "position", 0.0);
        } else {
          invalid(*sound, "expected a generator attribute or <plugins>");
        }
      }
      inst.sources.push_back(s);
    } else if (n.name == "receiver") {
      ++receivers;
      inst.receiver.name = required_attr(n, "name");
      inst.receiver.type = parse_receiver_type(required_attr(n, "type"));
      inst.receiver.heading_deg = number_attr_or(n, "heading", 0.0);
      inst.receiver.azimuth_deg = number_attr_or(n, "azimuth", 0.0);
      inst.receiver.position = position_of(n);
    } else if (n.name == "reverb") {
      inst.reverb.enabled = flag_attr(n, "enabled");
      inst.reverb.rt60_s = number_attr_or(n, "rt60", 0.4);
      inst.reverb.level_db = number_attr_or(n, "level", -16.0);
      inst.reverb.seed = seed_attr(n, "seed", 0);
      if (!(inst.reverb.rt60_s > 0.0)) invalid(n, "rt60 must be positive");
    } else if (n.name == "walkable") {
      WalkableArea w;
      const Vec3 lo = vec_attr(n, "min", 2);
      const Vec3 hi = vec_attr(n, "max", 2);
      w.x_min = lo.x;
      w.y_min = lo.y;
      w.x_max = hi.x;
      w.y_max = hi.y;
      w.mesh_m = number_attr_or(n, "mesh", 0.5);
      w.height_m = number_attr_or(n, "height", 1.5);
      if (!(w.x_max >= w.x_min && w.y_max >= w.y_min && w.mesh_m > 0.0)) invalid(n, "invalid walkable area");
      inst.walkable = w;
    } else {
      invalid(n, "unknown element");
    }
  }
  if (receivers != 1) throw ValidationError("scene: exactly one <receiver> required, found " + std::to_string(receivers));
  if (inst.rooms.empty()) throw ValidationError("scene: at least one <room> required");
  if (!inst.room_containing(inst.receiver.position))
    throw ValidationError("scene: receiver position lies outside every room");
  for (const auto& s : inst.sources)
    if (!inst.room_containing(s.position))
      throw ValidationError("scene: source '" + s.name + "' position lies outside every room");
  return inst;
}

}  // namespace detail

/// Parses scene markup and extracts its placeholder set. Rejects malformed
/// markup (ParseError with line/column) and duplicate source names.
inline SceneTemplate parse_template(std::string_view text) {
  if (trim(text).empty()) throw ParseError("scene: empty template");
  SceneTemplate tpl;
  tpl.raw_text = std::string(text);
  tpl.root = markup::parse(text);
  detail::collect_placeholders(tpl.root, tpl.placeholder_names);
  std::set<std::string> names;
  for (const auto& n : tpl.root.children)
    if (n.name == "source")
      if (const auto* name = n.attribute("name"); name && !names.insert(*name).second)
        throw ValidationError("scene: duplicate source name '" + *name + "' at line " + std::to_string(n.line));
  return tpl;
}

inline SceneTemplate load_template(const std::filesystem::path& path) {
  return parse_template(read_text_file(path));
}

inline std::filesystem::path bundled_scene_path() { return data_dir() / "living_room.scene.xml"; }

/// Value bound to each placeholder for the given parameters. Mute flags follow
/// the render interface: TV/CR = 1 means the source plays in environment mode.
inline std::map<std::string, std::string> bindings_for(const SceneParams& p) {
  const bool env = p.mode == RenderMode::environment;
  auto flag = [](bool b) { return std::string(b ? "1" : "0"); };
  return {
      {placeholder::kProbeMute, flag(env)},
      {placeholder::kProbeX, format_number(p.probe_xyz.x)},
      {placeholder::kProbeY, format_number(p.probe_xyz.y)},
      {placeholder::kProbeZ, format_number(p.probe_xyz.z)},
      {placeholder::kProbeStart, format_number(p.start_s)},
      {placeholder::kReceiverAzimuth, format_number(p.receiver_azimuth_deg)},
      {placeholder::kTvMute, flag(!(env && p.tv_on))},
      {placeholder::kConnectedRoomMute, flag(!(env && p.connected_room_on))},
      {placeholder::kReverb, flag(p.reverb_on)},
  };
}

inline SceneInstance instantiate(const SceneTemplate& tpl, const SceneParams& params) {
  params.validate();
  markup::Node doc = tpl.root;
  detail::bind(doc, bindings_for(params));
  std::set<std::string> remaining;
  detail::collect_placeholders(doc, remaining);
  if (!remaining.empty()) {
    std::string names;
    for (const auto& r : remaining) names += (names.empty() ? "" : ", ") + r;
    throw ValidationError("scene: unknown placeholder(s) left after substitution: " + names);
  }
  SceneInstance inst = detail::interpret(doc);
  inst.mode = params.mode;
  inst.start_s = params.start_s;
  inst.duration_s = params.duration_s;
  inst.document = std::move(doc);
  return inst;
}

inline std::string serialize(const SceneInstance& inst) { return markup::serialize(inst.document); }

/// Walkable talker area declared by a template (no placeholders allowed there).
inline WalkableArea walkable_area(const SceneTemplate& tpl) {
  const auto* w = tpl.root.child("walkable");
  if (!w) throw ValidationError("scene: template declares no <walkable> area");
  const Vec3 lo = detail::vec_attr(*w, "min", 2);
  const Vec3 hi = detail::vec_attr(*w, "max", 2);
  WalkableArea area;
  area.x_min = lo.x;
  area.y_min = lo.y;
  area.x_max = hi.x;
  area.y_max = hi.y;
  area.mesh_m = detail::number_attr_or(*w, "mesh", 0.5);
  area.height_m = detail::number_attr_or(*w, "height", 1.5);
  return area;
}

}  // namespace srmap::scene
