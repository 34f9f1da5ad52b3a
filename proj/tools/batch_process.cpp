// batch_process <SOURCELIST> <TARGETLIST> <INCREMENT> <OFFSET>

#include <iostream>

#include "CLI11.hpp"
#include "srmap/device.hpp"

int main(int argc, char** argv) {
  using namespace srmap;
  CLI::App app{"Hearing device batch processor"};
  std::filesystem::path src, tgt, conf = data_dir() / "device.conf";
  std::size_t increment = 1, offset = 0;
  app.add_option("SOURCELIST", src)->required();
  app.add_option("TARGETLIST", tgt)->required();
  app.add_option("INCREMENT", increment)->required();
  app.add_option("OFFSET", offset)->required();
  app.add_option("--config", conf, "Device configuration")->check(CLI::ExistingFile);
  CLI11_PARSE(app, argc, argv);
  try {
    const auto rep = device::batch_process(src, tgt, increment, offset, device::DeviceConfig::load(conf));
    for (const auto& [i, msg] : rep.errors) std::cerr << "item " << i << ": " << msg << '\n';
    std::cerr << "processed " << rep.processed.size() << ", failed " << rep.errors.size() << '\n';
    return rep.errors.empty() ? 0 : 3;
  } catch (const std::exception& e) {
    std::cerr << "batch_process: " << e.what() << '\n';
    return 2;
  }
}
