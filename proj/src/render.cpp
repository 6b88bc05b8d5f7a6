#include "elemental/render.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "elemental/error.hpp"

namespace elemental {

std::array<std::uint8_t, 3> Image::pixel(int x, int y) const {
  const std::size_t off = (static_cast<std::size_t>(y) * width + x) * 3;
  return {rgb[off], rgb[off + 1], rgb[off + 2]};
}

void RenderConfig::validate() const {
  if (width < 32 || height < 32) throw ConfigurationError("render size must be at least 32x32");
  if (marker_radius < 1) throw ConfigurationError("marker radius must be >= 1");
  if (!(alpha_floor >= 0.0 && alpha_floor < 1.0)) {
    throw ConfigurationError("alpha_floor must be in [0, 1)");
  }
}

namespace {

class Canvas {
 public:
  explicit Canvas(const RenderConfig& cfg) {
    img_.width = cfg.width;
    img_.height = cfg.height;
    img_.rgb.resize(static_cast<std::size_t>(cfg.width) * cfg.height * 3);
    for (std::size_t i = 0; i < img_.rgb.size(); i += 3) {
      std::copy(cfg.background.begin(), cfg.background.end(), img_.rgb.begin() + i);
    }
  }

  // [0,1]^2 with y up to pixel coordinates.
  std::array<double, 2> to_pixel(const std::array<double, 2>& p) const {
    return {p[0] * (img_.width - 1), (1.0 - p[1]) * (img_.height - 1)};
  }

  void blend(int x, int y, const Rgb& c, double alpha) {
    if (x < 0 || y < 0 || x >= img_.width || y >= img_.height) return;
    const std::size_t off = (static_cast<std::size_t>(y) * img_.width + x) * 3;
    for (int k = 0; k < 3; ++k) {
      const double v = (1.0 - alpha) * img_.rgb[off + k] + alpha * c[k];
      img_.rgb[off + k] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  }

  void disc(const std::array<double, 2>& p, int radius, const Rgb& c, double alpha) {
    const auto [cx, cy] = to_pixel(p);
    const int x0 = static_cast<int>(std::lround(cx));
    const int y0 = static_cast<int>(std::lround(cy));
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dx = -radius; dx <= radius; ++dx) {
        if (dx * dx + dy * dy <= radius * radius) blend(x0 + dx, y0 + dy, c, alpha);
      }
    }
  }

  void ring(const std::array<double, 2>& p, int radius, const Rgb& c) {
    const auto [cx, cy] = to_pixel(p);
    const int x0 = static_cast<int>(std::lround(cx));
    const int y0 = static_cast<int>(std::lround(cy));
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dx = -radius; dx <= radius; ++dx) {
        if (std::max(std::abs(dx), std::abs(dy)) >= radius - 1) blend(x0 + dx, y0 + dy, c, 1.0);
      }
    }
  }

  void grid(int cols, int rows, const Rgb& c) {
    for (int i = 0; i <= cols; ++i) {
      const int x = static_cast<int>(std::lround(static_cast<double>(i) / cols * (img_.width - 1)));
      for (int y = 0; y < img_.height; ++y) blend(x, y, c, 1.0);
    }
    for (int j = 0; j <= rows; ++j) {
      const int y = static_cast<int>(std::lround(static_cast<double>(j) / rows * (img_.height - 1)));
      for (int x = 0; x < img_.width; ++x) blend(x, y, c, 1.0);
    }
  }

  Image take() { return std::move(img_); }

 private:
  Image img_;
};

Canvas background(const Environment& env, const RenderConfig& cfg) {
  cfg.validate();
  Canvas canvas(cfg);
  if (const auto g = env.render_grid()) canvas.grid((*g)[0], (*g)[1], cfg.grid);
  if (const auto goal = env.goal_projection()) canvas.ring(*goal, cfg.marker_radius + 2, cfg.goal);
  return canvas;
}

std::array<double, 2> project_or_throw(const Environment& env, std::span<const double> obs) {
  const auto p = env.project(obs);
  if (!p) throw UnsupportedRenderError("environment " + env.id() + " has no 2-D projection");
  return *p;
}

}  // namespace

Image render_superimposed(std::span<const Trajectory> trajs, const Environment& env,
                          const RenderConfig& cfg) {
  if (!env.project(std::vector<double>(env.spec().obs_dim, 0.0))) {
    throw UnsupportedRenderError("environment " + env.id() + " has no 2-D projection");
  }
  Canvas canvas = background(env, cfg);
  for (const auto& traj : trajs) {
    const double T = static_cast<double>(traj.observations.size());
    for (std::size_t t = 0; t < traj.observations.size(); ++t) {
      const double alpha = cfg.alpha_floor + (1.0 - cfg.alpha_floor) * (t + 1.0) / T;
      canvas.disc(project_or_throw(env, traj.observations[t]), cfg.marker_radius, cfg.agent, alpha);
    }
  }
  return canvas.take();
}

std::vector<int> keyframe_indices(int episode_length, int count) {
  if (count < 2) throw ConfigurationError("keyframe count must be >= 2");
  if (episode_length < count) {
    throw ConfigurationError("episode of length " + std::to_string(episode_length) +
                             " is shorter than the keyframe count " + std::to_string(count));
  }
  std::vector<int> out;
  for (int i = 0; i < count; ++i) {
    const int idx = static_cast<int>(
        std::lround(static_cast<double>(i) * (episode_length - 1) / (count - 1)));
    if (out.empty() || out.back() != idx) out.push_back(idx);
  }
  return out;
}

KeyframeSet render_keyframes(const Trajectory& traj, const Environment& env, int count,
                             const RenderConfig& cfg, std::optional<std::vector<int>> indices) {
  const int T = static_cast<int>(traj.observations.size());
  KeyframeSet set;
  if (indices) {
    const auto& idx = *indices;
    if (idx.empty()) throw ConfigurationError("keyframe override is empty");
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= T || (i > 0 && idx[i] <= idx[i - 1])) {
        throw ConfigurationError("keyframe indices must be strictly increasing and in range");
      }
    }
    set.indices = idx;
  } else {
    set.indices = keyframe_indices(T, count);
  }
  for (int idx : set.indices) {
    Canvas canvas = background(env, cfg);
    canvas.disc(project_or_throw(env, traj.observations[idx]), cfg.marker_radius, cfg.agent, 1.0);
    set.frames.push_back(canvas.take());
  }
  return set;
}

namespace {

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void png_flush_noop(png_structp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG encoding failed");
  }
  png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(&image.rgb[static_cast<std::size_t>(y) * image.width * 3]));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.rgb.begin(), image.rgb.end());
  return out;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace elemental
