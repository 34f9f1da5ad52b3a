#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "srmap/mapserver.hpp"

using namespace srmap;
using namespace srmap::mapserver;
using orchestrator::AtlasRow;
using recognizer::SrtFlag;
using json = nlohmann::json;

namespace {

const scene::SceneTemplate& tpl() {
  static const auto t = scene::load_template(scene::bundled_scene_path());
  return t;
}

// Every 0.5 m cell for az 0 / tv 1 / door 0 in three profiles; srt rises with ix.
SrtAtlas demo_atlas() {
  SrtAtlas a;
  const auto area = scene::walkable_area(tpl());
  for (auto p : {listener::ProfileName::normal, listener::ProfileName::impaired_unaided, listener::ProfileName::impaired_aided})
    for (int iy = 0; iy < area.count_y(0.5); ++iy)
      for (int ix = 0; ix < area.count_x(0.5); ++ix) {
        AtlasRow r;
        r.spec = {0, ix, iy, 0.5, true, false, p};
        r.result.srt_db_spl = 40.0 + 5.0 * ix + static_cast<int>(p);
        r.result.flag = SrtFlag::ok;
        a.rows.push_back(r);
      }
  a.rows[1].result.srt_db_spl = std::nan("");
  a.rows[1].result.flag = SrtFlag::error;
  a.rows.erase(a.rows.begin() + 2);  // one missing cell
  // a quiet state that is audible everywhere
  for (int iy = 0; iy < area.count_y(0.5); ++iy)
    for (int ix = 0; ix < area.count_x(0.5); ++ix) {
      AtlasRow r;
      r.spec = {0, ix, iy, 0.5, false, false, listener::ProfileName::normal};
      r.result.srt_db_spl = 5.0 + ix;
      r.result.flag = SrtFlag::ok;
      a.rows.push_back(r);
    }
  a.metadata = {{"grid", "demo"}};
  return a;
}

struct Server {
  MapService svc;
  httplib::Server srv;
  std::thread thread;
  int port = 0;

  Server() {
    install_routes(srv, svc);
    port = srv.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { srv.listen_after_bind(); });
    srv.wait_until_ready();
  }
  ~Server() {
    srv.stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

}  // namespace

TEST(Quantize, WorkedExamples) {
  const auto s = ColorScale::bundled(12);
  EXPECT_DOUBLE_EQ(s.grade_width(), 40.0 / 12.0);
  EXPECT_EQ(quantize_level(45.0, s), 0);
  EXPECT_EQ(quantize_level(85.0, s), 11);
  EXPECT_EQ(quantize_level(90.0, s), 11);
  EXPECT_EQ(quantize_level(61.7, s), 5);
  EXPECT_EQ(quantize_level(-20.0, s), 0);
  EXPECT_THROW(quantize_level(std::nan(""), s), ValidationError);
}

TEST(Quantize, MonotoneAndFullRange) {
  for (int n : allowed_color_counts()) {
    const auto s = ColorScale::bundled(n);
    EXPECT_EQ(static_cast<int>(s.palette.size()), n);
    int prev = 0;
    std::set<int> seen;
    for (double x = 30.0; x <= 100.0; x += 0.01) {
      const int g = quantize_level(x, s);
      ASSERT_GE(g, prev);
      ASSERT_LT(g, n);
      prev = g;
      seen.insert(g);
    }
    EXPECT_EQ(static_cast<int>(seen.size()), n);
    // each grade spans grade_width
    for (int k = 1; k < n; ++k)
      EXPECT_EQ(quantize_level(45.0 + k * s.grade_width() + 1e-9, s), k);
  }
}

TEST(Effort, BandsAreHalfOpen) {
  const auto s = ColorScale::bundled();
  EXPECT_EQ(effort_label(10.0, s), "casual");
  EXPECT_EQ(effort_label(51.99, s), "casual");
  EXPECT_EQ(effort_label(52.0, s), "normal");
  EXPECT_EQ(effort_label(75.0, s), "shouted");
  EXPECT_EQ(effort_label(200.0, s), "shouted");
  auto bad = s;
  bad.effort_bands[1].lo += 1;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = s;
  bad.palette.pop_back();
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Palette, ResampleKeepsEndpoints) {
  const std::vector<Rgb> a{parse_rgb("#000000"), parse_rgb("#ff8000")};
  const auto p = resample_palette(a, 3);
  EXPECT_EQ(p, (std::vector<std::string>{"#000000", "#804000", "#ff8000"}));
  EXPECT_THROW(parse_rgb("#12345"), ValidationError);
  EXPECT_THROW(parse_rgb("#12345g"), ValidationError);
  EXPECT_THROW(resample_palette({a[0]}, 4), ValidationError);
}

TEST(Http, UnavailableBeforeLoad) {
  Server s;
  auto c = s.client();
  auto r = c.Get("/api/meta");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 503);
  r = c.Get("/api/map?azimuth=0&tv=1&door=0&profile=normal");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 503);
  EXPECT_TRUE(json::parse(r->body).contains("error"));
}

TEST(Http, MetaDescribesAtlas) {
  Server s;
  s.svc.load(demo_atlas(), tpl());
  auto r = s.client().Get("/api/meta");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_NE(r->get_header_value("Content-Type").find("application/json"), std::string::npos);
  const auto m = json::parse(r->body);
  EXPECT_EQ(m["grid"]["mesh_m"], 0.5);
  EXPECT_EQ(m["grid"]["nx"], scene::walkable_area(tpl()).count_x(0.5));
  EXPECT_EQ(m["orientations"], json::array({0.0}));
  EXPECT_EQ(m["profiles"], json::array({"normal", "impaired_unaided", "impaired_aided"}));
  EXPECT_EQ(m["noise_states"].size(), 2u);
  EXPECT_EQ(m["colors"]["n"], 12);
  EXPECT_EQ(m["colors"]["palette"].size(), 12u);
  EXPECT_EQ(m["colors"]["effort_bands"].size(), 5u);
  EXPECT_EQ(m["atlas"]["grid"], "demo");
  EXPECT_FALSE(m["scene"]["rooms"].empty());
  for (const auto& src : m["scene"]["sources"]) EXPECT_NE(src["name"], "probe");
}

TEST(Http, MapCellsAndFlags) {
  Server s;
  s.svc.load(demo_atlas(), tpl());
  auto c = s.client();
  auto r = c.Get("/api/map?azimuth=0&tv=1&door=0&profile=normal");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200);
  const auto m = json::parse(r->body);
  const auto area = scene::walkable_area(tpl());
  ASSERT_EQ(m["cells"].size(), static_cast<std::size_t>(area.count_x(0.5) * area.count_y(0.5)));
  EXPECT_EQ(m["cells"][1]["flag"], "error");
  EXPECT_TRUE(m["cells"][1]["srt"].is_null());
  EXPECT_EQ(m["cells"][2]["flag"], "missing");
  const auto& c3 = m["cells"][3];
  EXPECT_EQ(c3["ix"], 3);
  EXPECT_EQ(c3["srt"], 55.0);
  EXPECT_EQ(c3["grade"], quantize_level(55.0, ColorScale::bundled()));
  EXPECT_EQ(c3["effort"], "normal");
  EXPECT_EQ(c3["x"], area.cell_center(3, 0, 0.5).x);

  // byte-identical repeated answers
  EXPECT_EQ(c.Get("/api/map?azimuth=0&tv=1&door=0&profile=normal")->body, r->body);

  // quiet state is grade 0 everywhere
  const auto q = json::parse(c.Get("/api/map?azimuth=0&tv=0&door=0&profile=normal")->body);
  for (const auto& cell : q["cells"]) EXPECT_EQ(cell["grade"], 0);

  const auto p24 = json::parse(c.Get("/api/map?azimuth=0&tv=1&door=0&profile=normal&colors=24")->body);
  EXPECT_EQ(p24["palette"].size(), 24u);
  EXPECT_EQ(p24["cells"][3]["grade"], quantize_level(55.0, ColorScale::bundled(24)));
}

TEST(Http, ErrorStatuses) {
  Server s;
  s.svc.load(demo_atlas(), tpl());
  auto c = s.client();
  auto status = [&](const std::string& q) { return c.Get("/api/map?" + q)->status; };
  EXPECT_EQ(status("tv=1&door=0&profile=normal"), 422);
  EXPECT_EQ(status("azimuth=zero&tv=1&door=0&profile=normal"), 422);
  EXPECT_EQ(status("azimuth=0&tv=2&door=0&profile=normal"), 422);
  EXPECT_EQ(status("azimuth=0&tv=1&door=0&profile=cat"), 422);
  EXPECT_EQ(status("azimuth=0&tv=1&door=0&profile=normal&colors=10"), 422);
  EXPECT_EQ(status("azimuth=0&tv=1&door=0&profile=normal&mesh=-1"), 422);
  EXPECT_EQ(status("azimuth=0&tv=1&door=0&profile=normal&zoom=2"), 422);
  EXPECT_EQ(status("azimuth=0&azimuth=45&tv=1&door=0&profile=normal"), 422);
  EXPECT_EQ(status("tv=1&tv=0&azimuth=0&door=0&profile=normal"), 422);
  EXPECT_EQ(status("azimuth=45&tv=1&door=0&profile=normal"), 404);
  EXPECT_EQ(status("azimuth=0&tv=1&door=1&profile=normal"), 404);
  EXPECT_EQ(status("azimuth=0&tv=1&door=0&profile=normal&mesh=0.25"), 404);
  EXPECT_EQ(status("azimuth=0&tv=1&door=0&profile=normal&mesh=1"), 200);
  EXPECT_EQ(c.Get("/api/nothing")->status, 404);
  auto opt = c.Options("/api/map");
  ASSERT_TRUE(opt);
  EXPECT_EQ(opt->status, 204);
  EXPECT_EQ(opt->get_header_value("Access-Control-Allow-Methods"), "GET, OPTIONS");
}

TEST(Http, FinerRunsOverrideCoarse) {
  auto a = demo_atlas();
  AtlasRow fine;
  fine.spec = {0, 6, 0, 0.25, true, false, listener::ProfileName::normal};  // same point as (3, 0) at 0.5
  fine.result.srt_db_spl = 80.0;
  fine.result.flag = SrtFlag::ok;
  a.rows.push_back(fine);
  Server s;
  s.svc.load(a, tpl());
  auto c = s.client();
  auto m = json::parse(c.Get("/api/map?azimuth=0&tv=1&door=0&profile=normal&mesh=0.5")->body);
  EXPECT_EQ(m["cells"][3]["srt"], 55.0);  // the coarse view only draws coarse-or-coarser runs
  m = json::parse(c.Get("/api/map?azimuth=0&tv=1&door=0&profile=normal")->body);
  EXPECT_EQ(m["mesh_m"], 0.25);
  EXPECT_EQ(m["cells"][6]["srt"], 80.0);
  EXPECT_EQ(m["cells"][5]["flag"], "missing");
  EXPECT_EQ(m["cells"][8]["srt"], 60.0);
  EXPECT_EQ(m["cells"][0]["srt"], 40.0);
}
