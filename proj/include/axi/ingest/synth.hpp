#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "axi/ingest/manifest.hpp"
#include "axi/ingest/pgm.hpp"

namespace axi::ingest {

enum class DefectKind { kNone, kVoid, kInsufficient, kShort };

std::string to_string(DefectKind kind);

/// Slice-count weights for 1..6 slices, proportional to the through-hole
/// counts 763 / 1694 / 7576 / 466029 / 41345 / 945.
std::array<double, 6> default_slice_distribution();

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t joints = 1000;
  double defect_fraction = 0.15;
  std::array<double, 6> slice_distribution = default_slice_distribution();
  /// Probability that a joint's recorded ROI is shifted or shrunk.
  double roi_noise = 0.0;
  std::int64_t image_bound = kDefaultImageBound;
  std::size_t board_types = 10;

  /// Throws std::invalid_argument on out-of-range settings.
  void validate() const;
};

/// Everything needed to render one joint deterministically.
struct JointScene {
  std::string joint_id;
  std::string board_type;
  Label label = Label::kNormal;
  DefectKind defect = DefectKind::kNone;
  std::size_t slice_count = 4;
  std::size_t focal_slice = 0;

  double cx = 0, cy = 0, radius = 0;  // nominal pad disk, pixels
  double solder_radius = 0;           // rendered disk; smaller when insufficient
  double dir_x = 1, dir_y = 0;        // neighbor axis (unit)
  double pitch = 0;                   // center distance to each neighbor
  double neighbor_radius = 0;

  double background = 60, solder = 200, noise_sigma = 4;
  double blur_base = 1, blur_step = 2;  // edge softness: base + step * |slice - focal|

  double void_x = 0, void_y = 0, void_radius = 0, void_depth = 0;
  int bridge_side = 1;  // which neighbor a short connects to
  double bridge_width = 0;

  std::array<double, 9> texture{};  // three background waves: kx, ky, phase
  std::uint64_t noise_seed = 0;

  Roi true_roi;
  Roi recorded_roi;
  bool roi_noisy = false;
};

/// Draws every joint's scene without rendering pixels.
std::vector<JointScene> plan_synthetic(const SynthConfig& config);

/// Renders the joint's slices, each image_bound x image_bound.
std::vector<GrayImage> render_slices(const JointScene& scene, std::int64_t image_bound);

/// Writes manifest.tsv and images/ under out_dir and returns the manifest.
DatasetManifest generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace axi::ingest
