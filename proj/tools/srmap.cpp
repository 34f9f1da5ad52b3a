// srmap command line: render, batch_process, simulate, collect, refine, serve.

#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "srmap/mapserver.hpp"
#include "srmap/orchestrator.hpp"
#include "srmap/renderer.hpp"

using namespace srmap;

namespace {

int cmd_render(const std::string& type, const std::filesystem::path& out, double start, double duration,
               Vec3 probe, const std::string& receiver, double azimuth, int tv, int cr, int reverb, int repeats,
               std::uint64_t seed, const std::filesystem::path& scene_file) {
  if (receiver != "ortf") throw ValidationError("render: only the ortf receiver is supported");
  const auto tpl = scene::load_template(scene_file);
  scene::SceneParams p;
  p.mode = scene::parse_render_mode(type);
  p.outfile = out.string();
  p.start_s = start;
  p.duration_s = duration;
  p.probe_xyz = probe;
  p.receiver_azimuth_deg = azimuth;
  p.tv_on = tv != 0;
  p.connected_room_on = cr != 0;
  p.reverb_on = reverb != 0;
  const auto inst = scene::instantiate(tpl, p);
  if (p.mode == scene::RenderMode::environment) {
    wav::write(out, render::render_environment(inst, start, duration, seed));
    std::cout << out.string() << '\n';
    return 0;
  }
  const auto irs = render::render_hrir(inst, probe, repeats, seed);
  for (const auto& ir : irs) {
    auto path = out;
    if (irs.size() > 1)
      path = out.parent_path() / (out.stem().string() + "_r" + std::to_string(ir.realization_index) + out.extension().string());
    wav::write(path, ir);
    std::cout << path.string() << '\n';
  }
  return 0;
}

int cmd_simulate(const std::string& grid_name, std::size_t shards, std::size_t shard_id,
                 const std::filesystem::path& out, bool do_collect) {
  auto sim = orchestrator::Simulator::bundled();
  const auto grid = orchestrator::GridConfig::named(grid_name);
  const auto conditions = orchestrator::enumerate_conditions(grid, sim.area());
  std::cerr << "[srmap] grid " << grid.name << ": " << conditions.size() << " conditions, shard " << shard_id << "/"
            << shards << ", workers " << orchestrator::worker_count() << std::endl;
  const auto rep = orchestrator::run_shard(sim, conditions, shards, shard_id, out);
  std::cerr << "[srmap] ran " << rep.run << ", skipped " << rep.skipped << ", failed " << rep.failed << std::endl;
  if (do_collect) {
    auto atlas = orchestrator::collect(out);
    atlas.metadata = orchestrator::atlas_metadata(sim, grid.name);
    orchestrator::write_atlas(out / "atlas.tsv", atlas);
    std::cout << (out / "atlas.tsv").string() << '\n';
  }
  return rep.failed == 0 ? 0 : 3;
}

int cmd_refine(const std::filesystem::path& atlas_path, const std::filesystem::path& out, bool run) {
  auto sim = orchestrator::Simulator::bundled();
  const auto atlas = orchestrator::read_atlas(atlas_path);
  const auto todo = orchestrator::refine_mesh(atlas, sim.area());
  std::cerr << "[srmap] refinement adds " << todo.size() << " conditions" << std::endl;
  if (!run) {
    for (const auto& c : todo) std::cout << c.canonical() << '\n';
    return 0;
  }
  const auto rep = orchestrator::run_shard(sim, todo, 1, 0, out);
  auto fresh = orchestrator::collect(out);
  auto merged = atlas;
  for (auto& r : fresh.rows)
    if (!merged.find(r.spec)) {
      r.extra.assign(merged.extra_columns.size(), "");
      merged.rows.push_back(std::move(r));
    }
  merged.sort();
  if (merged.metadata.empty()) merged.metadata = orchestrator::atlas_metadata(sim, "refined");
  orchestrator::write_atlas(out / "atlas.tsv", merged);
  std::cout << (out / "atlas.tsv").string() << '\n';
  return rep.failed == 0 ? 0 : 3;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const std::filesystem::path& atlas_path, int port, const std::string& host,
              const std::filesystem::path& scene_file) {
  mapserver::MapService svc;
  svc.load(orchestrator::read_atlas(atlas_path), scene::load_template(scene_file));
  httplib::Server srv;
  mapserver::install_routes(srv, svc);
  g_server = &srv;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  std::cerr << "[srmap] serving " << atlas_path.string() << " on http://" << host << ":" << port << std::endl;
  if (!srv.listen(host, port)) throw Error("serve: cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial speech recognition maps"};
  app.set_version_flag("--version", std::string(SRMAP_VERSION));
  app.require_subcommand(1);

  auto* render = app.add_subcommand("render", "Render environment noise or impulse responses to a WAV file");
  std::string type = "environment", receiver = "ortf";
  std::filesystem::path out, scene_file = scene::bundled_scene_path();
  double start = 0.0, duration = 10.0, azimuth = 0.0;
  Vec3 probe{2.5, 2.0, 1.5};
  int tv = 1, cr = 1, reverb = 1, repeats = 5;
  std::uint64_t seed = 0;
  render->add_option("--type", type, "environment or hrir")->check(CLI::IsMember({"environment", "hrir"}));
  render->add_option("--out", out, "Output WAV path")->required();
  render->add_option("--start", start, "Start time in s");
  render->add_option("--duration", duration, "Duration in s");
  render->add_option("--x", probe.x, "Probe x in m");
  render->add_option("--y", probe.y, "Probe y in m");
  render->add_option("--z", probe.z, "Probe z in m");
  render->add_option("--receiver", receiver, "Receiver type (ortf)");
  render->add_option("--azimuth", azimuth, "Head orientation in degrees");
  render->add_option("--tv", tv, "TV on (1) or muted (0)")->check(CLI::Range(0, 1));
  render->add_option("--cr", cr, "Connected room on (1) or muted (0)")->check(CLI::Range(0, 1));
  render->add_option("--reverb", reverb, "Late reverb on (1) or off (0)")->check(CLI::Range(0, 1));
  render->add_option("--repeats", repeats, "Impulse response realizations (hrir)")->check(CLI::PositiveNumber);
  render->add_option("--seed", seed, "Random seed");
  render->add_option("--scene", scene_file, "Scene template")->check(CLI::ExistingFile);

  auto* batch = app.add_subcommand("batch_process", "Run the hearing device over a list of WAV files");
  std::filesystem::path src_list, tgt_list, device_conf = data_dir() / "device.conf";
  std::size_t increment = 1, offset = 0;
  batch->add_option("SOURCELIST", src_list)->required();
  batch->add_option("TARGETLIST", tgt_list)->required();
  batch->add_option("INCREMENT", increment)->required();
  batch->add_option("OFFSET", offset)->required();
  batch->add_option("--config", device_conf, "Device configuration")->check(CLI::ExistingFile);

  auto* simulate = app.add_subcommand("simulate", "Run a shard of the condition grid");
  std::string grid = "ci";
  std::size_t shards = 1, shard_id = 0;
  std::filesystem::path sim_out;
  bool no_collect = false;
  simulate->add_option("--grid", grid)->check(CLI::IsMember({"paper", "ci"}));
  simulate->add_option("--shards", shards)->check(CLI::PositiveNumber);
  simulate->add_option("--shard-id", shard_id);
  simulate->add_option("--out", sim_out)->required();
  simulate->add_flag("--no-collect", no_collect, "Skip writing out/atlas.tsv after the shard");

  auto* collect = app.add_subcommand("collect", "Merge per-condition results into OUT/atlas.tsv");
  std::filesystem::path coll_out;
  std::string coll_grid = "ci";
  collect->add_option("--out", coll_out)->required();
  collect->add_option("--grid", coll_grid, "Grid name recorded in the metadata");

  auto* refine = app.add_subcommand("refine", "Halve the mesh of an atlas");
  std::filesystem::path ref_atlas, ref_out;
  refine->add_option("--atlas", ref_atlas)->required()->check(CLI::ExistingFile);
  refine->add_option("--out", ref_out, "Run the new conditions here and write a merged atlas");

  auto* serve = app.add_subcommand("serve", "Serve an atlas over HTTP");
  std::filesystem::path serve_atlas;
  int port = 8080;
  std::string host = "0.0.0.0";
  serve->add_option("--atlas", serve_atlas)->required()->check(CLI::ExistingFile);
  serve->add_option("--port", port)->check(CLI::Range(1, 65535));
  serve->add_option("--host", host);
  serve->add_option("--scene", scene_file, "Scene template")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*render) return cmd_render(type, out, start, duration, probe, receiver, azimuth, tv, cr, reverb, repeats, seed, scene_file);
    if (*batch) {
      const auto rep = device::batch_process(src_list, tgt_list, increment, offset, device::DeviceConfig::load(device_conf));
      for (const auto& [i, msg] : rep.errors) std::cerr << "item " << i << ": " << msg << '\n';
      std::cerr << "processed " << rep.processed.size() << ", failed " << rep.errors.size() << '\n';
      return rep.errors.empty() ? 0 : 3;
    }
    if (*simulate) {
      if (shard_id >= shards) throw ValidationError("--shard-id must be < --shards");
      return cmd_simulate(grid, shards, shard_id, sim_out, !no_collect);
    }
    if (*collect) {
      auto sim = orchestrator::Simulator::bundled();
      auto atlas = orchestrator::collect(coll_out);
      atlas.metadata = orchestrator::atlas_metadata(sim, coll_grid);
      orchestrator::write_atlas(coll_out / "atlas.tsv", atlas);
      std::cout << (coll_out / "atlas.tsv").string() << '\n';
      return 0;
    }
    if (*refine) return cmd_refine(ref_atlas, ref_out, !ref_out.empty());
    if (*serve) return cmd_serve(serve_atlas, port, host, scene_file);
  } catch (const std::exception& e) {
    std::cerr << "srmap: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
