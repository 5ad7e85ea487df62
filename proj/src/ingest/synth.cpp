#include "axi/ingest/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <stdexcept>

#include "axi/rng.hpp"

namespace axi::ingest {

std::string to_string(DefectKind kind) {
  switch (kind) {
    case DefectKind::kVoid: return "void";
    case DefectKind::kInsufficient: return "insufficient";
    case DefectKind::kShort: return "short";
    default: return "none";
  }
}

std::array<double, 6> default_slice_distribution() {
  std::array<double, 6> counts{763, 1694, 7576, 466029, 41345, 945};
  double total = 0;
  for (double c : counts) total += c;
  for (double& c : counts) c /= total;
  return counts;
}

void SynthConfig::validate() const {
  if (!(defect_fraction >= 0.0 && defect_fraction <= 1.0)) {
    throw std::invalid_argument("defect fraction must be in [0, 1]");
  }
  if (!(roi_noise >= 0.0 && roi_noise <= 1.0)) throw std::invalid_argument("roi noise must be in [0, 1]");
  double total = 0.0;
  for (double p : slice_distribution) {
    if (p < 0.0) throw std::invalid_argument("slice distribution weights must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("slice distribution must sum to 1");
  if (image_bound < 32) throw std::invalid_argument("image bound must be at least 32 pixels");
  if (board_types == 0) throw std::invalid_argument("need at least one board type");
}

namespace {

struct BoardStyle {
  double background, solder, noise_sigma, radius_frac, blur_base, blur_step;
};

BoardStyle board_style(std::uint64_t seed, std::size_t board) {
  Rng rng(derive_seed(seed, 0xb0a4d000u + board));
  BoardStyle s;
  s.background = rng.uniform(45, 75);
  s.solder = rng.uniform(175, 215);
  s.noise_sigma = rng.uniform(3, 6);
  s.radius_frac = rng.uniform(0.09, 0.115);
  s.blur_base = rng.uniform(0.03, 0.06);
  s.blur_step = rng.uniform(0.08, 0.14);
  return s;
}

std::int64_t clamp_coord(double v, std::int64_t bound) {
  return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::lround(v)), 0, bound);
}

Roi box_roi(double cx, double cy, double half_w, double half_h, std::int64_t bound) {
  Roi r{clamp_coord(cx - half_w, bound), clamp_coord(cx + half_w, bound), clamp_coord(cy - half_h, bound),
        clamp_coord(cy + half_h, bound)};
  if (r.xmax <= r.xmin) r.xmax = std::min(bound, r.xmin + 1), r.xmin = r.xmax - 1;
  if (r.ymax <= r.ymin) r.ymax = std::min(bound, r.ymin + 1), r.ymin = r.ymax - 1;
  return r;
}

std::string joint_name(std::size_t j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "J%06zu", j);
  return buf;
}

std::string board_name(std::size_t b) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "B%02zu", b);
  return buf;
}

/// Soft indicator of "inside" given signed distance (positive inside).
inline double soft_inside(double signed_dist, double softness) {
  return 1.0 / (1.0 + std::exp(-signed_dist / softness));
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

std::vector<JointScene> plan_synthetic(const SynthConfig& config) {
  config.validate();
  const double bound = static_cast<double>(config.image_bound);

  std::vector<double> board_weights(config.board_types);
  std::vector<BoardStyle> styles(config.board_types);
  {
    Rng rng(derive_seed(config.seed, 0xb0a4du));
    for (std::size_t b = 0; b < config.board_types; ++b) {
      board_weights[b] = rng.uniform(0.5, 1.5);
      styles[b] = board_style(config.seed, b);
    }
  }
  const std::vector<double> slice_weights(config.slice_distribution.begin(), config.slice_distribution.end());

  std::vector<JointScene> scenes(config.joints);
  for (std::size_t j = 0; j < config.joints; ++j) {
    Rng rng(derive_seed(config.seed, j));
    JointScene& s = scenes[j];
    s.joint_id = joint_name(j);
    const std::size_t board = rng.categorical(board_weights);
    const BoardStyle& style = styles[board];
    s.board_type = board_name(board);

    s.label = rng.bernoulli(config.defect_fraction) ? Label::kDefect : Label::kNormal;
    s.defect = s.label == Label::kDefect ? static_cast<DefectKind>(1 + rng.below(3)) : DefectKind::kNone;
    s.slice_count = 1 + rng.categorical(slice_weights);
    s.focal_slice = rng.below(s.slice_count);

    s.radius = style.radius_frac * bound * rng.uniform(0.9, 1.1);
    s.cx = bound * (0.5 + rng.uniform(-0.06, 0.06));
    s.cy = bound * (0.5 + rng.uniform(-0.06, 0.06));
    const double angle = rng.bernoulli(0.5) ? 0.0 : std::numbers::pi / 2;
    const double tilt = rng.uniform(-0.15, 0.15);
    s.dir_x = std::cos(angle + tilt);
    s.dir_y = std::sin(angle + tilt);
    s.pitch = s.radius * rng.uniform(2.7, 3.2);
    s.neighbor_radius = s.radius * rng.uniform(0.9, 1.1);

    s.background = style.background + rng.uniform(-5, 5);
    s.solder = style.solder + rng.uniform(-10, 10);
    s.noise_sigma = style.noise_sigma;
    s.blur_base = style.blur_base * s.radius;
    s.blur_step = style.blur_step * s.radius;
    for (int w = 0; w < 3; ++w) {
      const double period = bound * rng.uniform(0.3, 1.0);
      const double theta = rng.uniform(0, 2 * std::numbers::pi);
      s.texture[3 * w + 0] = 2 * std::numbers::pi / period * std::cos(theta);
      s.texture[3 * w + 1] = 2 * std::numbers::pi / period * std::sin(theta);
      s.texture[3 * w + 2] = rng.uniform(0, 2 * std::numbers::pi);
    }
    s.noise_seed = rng.next();

    // Defect geometry is drawn for every joint so the stream layout does not
    // depend on the label.
    const double void_r = s.radius * rng.uniform(0.28, 0.42);
    const double void_off = s.radius * rng.uniform(0.0, 0.35);
    const double void_ang = rng.uniform(0, 2 * std::numbers::pi);
    const double void_depth = rng.uniform(0.55, 0.8);
    const double shrink = rng.uniform(0.4, 0.6);
    const int side = rng.bernoulli(0.5) ? 1 : -1;
    const double bridge_w = s.radius * rng.uniform(0.35, 0.55);
    s.solder_radius = s.radius;
    switch (s.defect) {
      case DefectKind::kVoid:
        s.void_x = s.cx + void_off * std::cos(void_ang);
        s.void_y = s.cy + void_off * std::sin(void_ang);
        s.void_radius = void_r;
        s.void_depth = void_depth;
        break;
      case DefectKind::kInsufficient:
        s.solder_radius = s.radius * shrink;
        break;
      case DefectKind::kShort:
        s.bridge_side = side;
        s.bridge_width = bridge_w;
        break;
      default:
        break;
    }

    s.true_roi = box_roi(s.cx, s.cy, s.radius, s.radius, config.image_bound);
    s.recorded_roi = s.true_roi;
    const bool noisy = rng.bernoulli(config.roi_noise);
    const bool shift = rng.bernoulli(0.5);
    const double sx = rng.uniform(-0.3, 0.3), sy = rng.uniform(-0.3, 0.3);
    if (noisy) {
      s.roi_noisy = true;
      const double w = static_cast<double>(s.true_roi.width());
      const double h = static_cast<double>(s.true_roi.height());
      const double mx = 0.5 * (s.true_roi.xmin + s.true_roi.xmax);
      const double my = 0.5 * (s.true_roi.ymin + s.true_roi.ymax);
      s.recorded_roi = shift ? box_roi(mx + sx * w, my + sy * h, 0.5 * w, 0.5 * h, config.image_bound)
                             : box_roi(mx, my, 0.3 * w, 0.3 * h, config.image_bound);
    }
  }
  return scenes;
}

std::vector<GrayImage> render_slices(const JointScene& s, std::int64_t image_bound) {
  const std::size_t side = static_cast<std::size_t>(image_bound);
  std::vector<GrayImage> slices;
  slices.reserve(s.slice_count);
  Rng noise(s.noise_seed);

  const double n1x = s.cx + s.dir_x * s.pitch, n1y = s.cy + s.dir_y * s.pitch;
  const double n2x = s.cx - s.dir_x * s.pitch, n2y = s.cy - s.dir_y * s.pitch;
  const double bx = s.bridge_side > 0 ? n1x : n2x;
  const double by = s.bridge_side > 0 ? n1y : n2y;
  const double contrast = s.solder - s.background;

  for (std::size_t k = 0; k < s.slice_count; ++k) {
    const double dist = std::abs(static_cast<double>(k) - static_cast<double>(s.focal_slice));
    const double soft = std::max(0.35, s.blur_base + s.blur_step * dist);
    const double fade = 1.0 - 0.07 * dist;
    const double reach = 8.0 * soft;
    GrayImage img(side, side);
    for (std::size_t y = 0; y < side; ++y) {
      const double py = static_cast<double>(y) + 0.5;
      for (std::size_t x = 0; x < side; ++x) {
        const double px = static_cast<double>(x) + 0.5;
        double bg = s.background;
        for (int w = 0; w < 3; ++w) bg += 5.0 * std::sin(s.texture[3 * w] * px + s.texture[3 * w + 1] * py + s.texture[3 * w + 2]);

        auto disk = [&](double cx, double cy, double r) {
          const double d = std::hypot(px - cx, py - cy);
          if (d > r + reach) return 0.0;
          if (d < r - reach) return 1.0;
          return soft_inside(r - d, soft);
        };
        const double joint = disk(s.cx, s.cy, s.solder_radius);
        double cover = std::max({joint, disk(n1x, n1y, s.neighbor_radius), disk(n2x, n2y, s.neighbor_radius)});
        if (s.defect == DefectKind::kShort) {
          const double d = segment_distance(px, py, s.cx, s.cy, bx, by);
          if (d < 0.5 * s.bridge_width + reach) cover = std::max(cover, soft_inside(0.5 * s.bridge_width - d, soft));
        }
        double value = bg + fade * contrast * cover;
        if (s.defect == DefectKind::kVoid) {
          value -= fade * s.void_depth * contrast * joint * disk(s.void_x, s.void_y, s.void_radius);
        }
        value += s.noise_sigma * noise.normal();
        img.pixels[y * side + x] = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
      }
    }
    slices.push_back(std::move(img));
  }
  return slices;
}

DatasetManifest generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir) {
  const std::vector<JointScene> scenes = plan_synthetic(config);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw std::runtime_error("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.image_bound = config.image_bound;
  manifest.base_dir = out_dir;
  manifest.records.resize(scenes.size());

  std::optional<std::string> failure;
  const auto count = static_cast<std::int64_t>(scenes.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t j = 0; j < count; ++j) {
    const JointScene& s = scenes[static_cast<std::size_t>(j)];
    JointRecord& rec = manifest.records[static_cast<std::size_t>(j)];
    rec.joint_id = s.joint_id;
    rec.board_type = s.board_type;
    rec.joint_type = "PTH";
    rec.roi = s.recorded_roi;
    rec.label = s.label;
    try {
      const auto images = render_slices(s, config.image_bound);
      for (std::size_t k = 0; k < images.size(); ++k) {
        const std::string rel = "images/" + s.joint_id + "_s" + std::to_string(k) + ".pgm";
        write_pgm(out_dir / rel, images[k]);
        rec.slices.push_back({k, rel});
      }
    } catch (const std::exception& e) {
#pragma omp critical(axi_synth_failure)
      if (!failure) failure = e.what();
    }
  }
  if (failure) throw std::runtime_error(*failure);
  write_manifest(out_dir / "manifest.tsv", manifest);
  return manifest;
}

}  // namespace axi::ingest
