#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "axi/ingest/manifest.hpp"
#include "axi/ingest/pgm.hpp"
#include "axi/nn/tensor.hpp"

namespace axi::preprocess {

inline constexpr std::size_t kChannels = ingest::kMaxSlices;
inline constexpr std::size_t kDefaultSide = 128;

struct PreprocessConfig {
  std::size_t side = kDefaultSide;  // output patch is side x side x 6
};

/// Square crop window in pixel coordinates, half-open: [cxmin, cxmax).
/// May extend past the image; those pixels read as zero.
struct CropWindow {
  std::int64_t cxmin = 0, cymin = 0, cxmax = 0, cymax = 0;

  std::int64_t side() const { return cxmax - cxmin; }
  bool operator==(const CropWindow&) const = default;
};

/// Side is 1.5x the ROI's larger extent and the window is centered on the
/// ROI, both rounded half-up.
CropWindow compute_crop(const ingest::Roi& roi);

struct Patch {
  std::string joint_id;
  ingest::Label label = ingest::Label::kNormal;
  CropWindow window;
  std::size_t real_slices = 0;
  nn::Tensor<float> data;  // [side, side, 6, 1], values in [0, 1]

  std::size_t side() const { return data.extent(0); }
};

class PatchError : public std::runtime_error {
 public:
  PatchError(std::string joint_id, std::optional<std::size_t> slice, const std::string& what);
  const std::string& joint_id() const { return joint_id_; }
  std::optional<std::size_t> slice() const { return slice_; }
  /// Message without the joint / slice prefix.
  const std::string& detail() const { return detail_; }

 private:
  std::string joint_id_;
  std::optional<std::size_t> slice_;
  std::string detail_;
};

/// Crops every slice with the record's window, resizes bilinearly to
/// config.side and stacks slice k into channel k. images[i] belongs to
/// record.slices[i]; missing channels stay zero.
Patch extract_patch(const ingest::JointRecord& record, std::span<const ingest::GrayImage> images,
                    std::int64_t image_bound, const PreprocessConfig& config = {});

/// Loads the record's slices from disk, then extract_patch.
Patch extract_patch(const ingest::DatasetManifest& manifest, const ingest::JointRecord& record,
                    const PreprocessConfig& config = {});

/// One channel: crop window[0..side) of image, resized to out_side.
std::vector<float> crop_resize(const ingest::GrayImage& image, const CropWindow& window, std::size_t out_side);

struct FailedJoint {
  std::string joint_id;
  std::optional<std::size_t> slice;
  std::string message;
  bool operator==(const FailedJoint&) const = default;
};

struct PreprocessResult {
  std::int64_t image_bound = ingest::kDefaultImageBound;  // of the source images
  std::vector<Patch> patches;  // manifest order, failures skipped
  std::vector<FailedJoint> errors;
};

/// Runs every record, continuing past failures.
PreprocessResult preprocess_records(const ingest::DatasetManifest& manifest, const PreprocessConfig& config = {});

}  // namespace axi::preprocess
