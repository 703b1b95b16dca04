// Writes a synthetic grid-city corpus: manifest.jsonl, pano_<k>.ppm and
// path.txt (an L-shaped path along the anchor drives).
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "panorag/error.hpp"
#include "panorag/grid_city.hpp"

int main(int argc, char** argv) {
  namespace fx = panorag::fixtures;
  CLI::App app{"Synthetic grid-city capture corpus", "make_grid_city"};
  std::filesystem::path out_dir;
  fx::GridCityParams params;
  int pano_width = 64;
  app.add_option("out_dir", out_dir, "Output directory")->required();
  app.add_option("--seed", params.seed, "Random seed");
  app.add_option("--sessions", params.sessions, "Random capture sessions");
  app.add_option("--blocks", params.blocks, "Blocks per side");
  app.add_option("--block-m", params.block_m, "Block length in meters");
  app.add_option("--pano-width", pano_width, "Panorama image width");
  CLI11_PARSE(app, argc, argv);

  try {
    std::filesystem::create_directories(out_dir);
    const auto city = fx::make_grid_city(params);
    fx::write_manifest(out_dir / "manifest.jsonl", city.records);
    fx::write_pano_images(out_dir, params.pano_images, pano_width);
    std::ofstream path(out_dir / "path.txt");
    path << "# lat lon alt\n" << std::setprecision(12);
    for (const auto& p : city.anchor_path()) {
      const auto g = city.frame.to_geodetic(Eigen::Vector3d(p.x(), p.y(), 0.0));
      path << g.lat << " " << g.lon << " " << g.alt << "\n";
    }
    std::cout << "records " << city.records.size() << "\n";
  } catch (const panorag::Error& e) {
    std::cerr << panorag::error_code_name(e.code()) << ": " << e.what() << "\n";
    return 2;
  }
  return 0;
}
