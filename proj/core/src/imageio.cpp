#include "ktraj/io.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>

namespace ktraj {

namespace fs = std::filesystem;
using nlohmann::json;

void atomic_write_file(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void save_image_f32(const fs::path& raw_path, const CVec& image, GridShape grid) {
  if (image.size() != grid.nvox()) throw std::invalid_argument("save_image_f32: size mismatch");
  std::string bytes(sizeof(float) * 2 * image.size(), '\0');
  auto* f = reinterpret_cast<float*>(bytes.data());
  for (Eigen::Index k = 0; k < image.size(); ++k) {
    f[2 * k] = static_cast<float>(image[k].real());
    f[2 * k + 1] = static_cast<float>(image[k].imag());
  }
  atomic_write_file(raw_path, bytes);

  json side;
  side["shape"] = {grid.n[0], grid.n[1]};
  side["complex"] = true;
  fs::path sidecar = raw_path;
  sidecar.replace_extension(".json");
  atomic_write_file(sidecar, side.dump(2) + "\n");
}

CVec load_image_f32(const fs::path& raw_path, GridShape* grid_out) {
  fs::path sidecar = raw_path;
  sidecar.replace_extension(".json");
  json side;
  try {
    side = json::parse(read_file_bytes(sidecar));
  } catch (const json::exception& e) {
    throw ConfigError("bad image sidecar " + sidecar.string() + ": " + e.what());
  }
  if (!side.contains("shape") || !side["shape"].is_array() || side["shape"].size() < 1 ||
      side["shape"].size() > 2) {
    throw ConfigError("image sidecar missing 2D shape: " + sidecar.string());
  }
  const int nx = side["shape"][0].get<int>();
  const int ny = side["shape"].size() == 2 ? side["shape"][1].get<int>() : 1;
  const bool is_complex = side.value("complex", false);
  GridShape grid = (side["shape"].size() == 2) ? GridShape(nx, ny) : GridShape(nx);

  std::string bytes = read_file_bytes(raw_path);
  const size_t per = is_complex ? 2 * sizeof(float) : sizeof(float);
  if (bytes.size() != per * static_cast<size_t>(grid.nvox())) {
    throw ConfigError("image raw size does not match sidecar shape: " + raw_path.string());
  }
  const auto* f = reinterpret_cast<const float*>(bytes.data());
  CVec img(grid.nvox());
  for (int k = 0; k < grid.nvox(); ++k) {
    img[k] = is_complex ? Cplx(f[2 * k], f[2 * k + 1]) : Cplx(f[k], 0.0);
  }
  if (grid_out) *grid_out = grid;
  return img;
}

}  // namespace ktraj
