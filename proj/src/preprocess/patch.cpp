#include "axi/preprocess/patch.hpp"

#include <algorithm>
#include <cmath>

namespace axi::preprocess {

namespace {

// floor(a / 2) for possibly negative a.
std::int64_t floor_half(std::int64_t a) { return a >= 0 ? a / 2 : -((-a + 1) / 2); }

std::string prefix(const std::string& joint_id, std::optional<std::size_t> slice) {
  std::string p = "joint " + joint_id;
  if (slice) p += " slice " + std::to_string(*slice);
  return p + ": ";
}

}  // namespace

PatchError::PatchError(std::string joint_id, std::optional<std::size_t> slice, const std::string& what)
    : std::runtime_error(prefix(joint_id, slice) + what), joint_id_(std::move(joint_id)), slice_(slice), detail_(what) {}

CropWindow compute_crop(const ingest::Roi& roi) {
  const std::int64_t m = std::max(roi.width(), roi.height());
  const std::int64_t side = (3 * m + 1) / 2;  // round half-up of 1.5m
  CropWindow w;
  w.cxmin = floor_half(roi.xmin + roi.xmax - side + 1);
  w.cymin = floor_half(roi.ymin + roi.ymax - side + 1);
  w.cxmax = w.cxmin + side;
  w.cymax = w.cymin + side;
  return w;
}

std::vector<float> crop_resize(const ingest::GrayImage& image, const CropWindow& window, std::size_t out_side) {
  const std::int64_t side = window.side();
  const double scale = static_cast<double>(side) / static_cast<double>(out_side);
  const auto iw = static_cast<std::int64_t>(image.width);
  const auto ih = static_cast<std::int64_t>(image.height);

  struct Tap {
    std::int64_t i0, i1;
    double f;
  };
  auto taps = [&](std::int64_t cmin) {
    std::vector<Tap> t(out_side);
    for (std::size_t d = 0; d < out_side; ++d) {
      double s = static_cast<double>(cmin) + (static_cast<double>(d) + 0.5) * scale - 0.5;
      s = std::clamp(s, static_cast<double>(cmin), static_cast<double>(cmin + side - 1));
      const auto i0 = static_cast<std::int64_t>(std::floor(s));
      t[d] = {i0, std::min(i0 + 1, cmin + side - 1), s - static_cast<double>(i0)};
    }
    return t;
  };
  const auto tx = taps(window.cxmin);
  const auto ty = taps(window.cymin);
  auto pixel = [&](std::int64_t x, std::int64_t y) -> double {
    if (x < 0 || y < 0 || x >= iw || y >= ih) return 0.0;
    return image.pixels[static_cast<std::size_t>(y * iw + x)];
  };

  std::vector<float> out(out_side * out_side);
  for (std::size_t y = 0; y < out_side; ++y) {
    const Tap& a = ty[y];
    for (std::size_t x = 0; x < out_side; ++x) {
      const Tap& b = tx[x];
      const double top = (1 - b.f) * pixel(b.i0, a.i0) + b.f * pixel(b.i1, a.i0);
      const double bottom = (1 - b.f) * pixel(b.i0, a.i1) + b.f * pixel(b.i1, a.i1);
      const double v = (1 - a.f) * top + a.f * bottom;
      out[y * out_side + x] = std::clamp(static_cast<float>(v) / 255.0f, 0.0f, 1.0f);
    }
  }
  return out;
}

Patch extract_patch(const ingest::JointRecord& record, std::span<const ingest::GrayImage> images,
                    std::int64_t image_bound, const PreprocessConfig& config) {
  if (config.side == 0) throw std::invalid_argument("patch side must be positive");
  if (images.size() != record.slices.size()) {
    throw PatchError(record.joint_id, std::nullopt,
                     "got " + std::to_string(images.size()) + " images for " + std::to_string(record.slices.size()) +
                         " slices");
  }
  if (record.slices.empty() || record.slices.size() > kChannels) {
    throw PatchError(record.joint_id, std::nullopt,
                     "slice count " + std::to_string(record.slices.size()) + " outside [1, 6]");
  }
  try {
    ingest::validate_roi(record.roi, image_bound);
  } catch (const std::invalid_argument& e) {
    throw PatchError(record.joint_id, std::nullopt, e.what());
  }

  Patch patch;
  patch.joint_id = record.joint_id;
  patch.label = record.label;
  patch.window = compute_crop(record.roi);
  patch.real_slices = record.slices.size();
  const std::size_t s = config.side;
  patch.data = nn::Tensor<float>(nn::Shape{s, s, kChannels, 1});
  auto out = patch.data.data();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::size_t k = record.slices[i].index;
    const auto& img = images[i];
    if (k >= kChannels) throw PatchError(record.joint_id, k, "slice index outside [0, 6)");
    if (static_cast<std::int64_t>(img.width) != image_bound || static_cast<std::int64_t>(img.height) != image_bound) {
      throw PatchError(record.joint_id, k,
                       "image is " + std::to_string(img.width) + "x" + std::to_string(img.height) + ", expected " +
                           std::to_string(image_bound) + " square");
    }
    const auto channel = crop_resize(img, patch.window, s);
    for (std::size_t p = 0; p < s * s; ++p) out[p * kChannels + k] = channel[p];
  }
  return patch;
}

Patch extract_patch(const ingest::DatasetManifest& manifest, const ingest::JointRecord& record,
                    const PreprocessConfig& config) {
  std::vector<ingest::GrayImage> images;
  images.reserve(record.slices.size());
  for (const auto& slice : record.slices) {
    try {
      images.push_back(ingest::read_pgm(manifest.resolve(slice)));
    } catch (const std::exception& e) {
      throw PatchError(record.joint_id, slice.index, e.what());
    }
  }
  return extract_patch(record, images, manifest.image_bound, config);
}

PreprocessResult preprocess_records(const ingest::DatasetManifest& manifest, const PreprocessConfig& config) {
  const std::size_t n = manifest.records.size();
  std::vector<std::optional<Patch>> patches(n);
  std::vector<std::optional<FailedJoint>> failures(n);
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t j = 0; j < count; ++j) {
    const auto& rec = manifest.records[static_cast<std::size_t>(j)];
    try {
      patches[static_cast<std::size_t>(j)] = extract_patch(manifest, rec, config);
    } catch (const PatchError& e) {
      failures[static_cast<std::size_t>(j)] = FailedJoint{e.joint_id(), e.slice(), e.detail()};
    } catch (const std::exception& e) {
      failures[static_cast<std::size_t>(j)] = FailedJoint{rec.joint_id, std::nullopt, e.what()};
    }
  }
  PreprocessResult result;
  result.image_bound = manifest.image_bound;
  for (std::size_t j = 0; j < n; ++j) {
    if (patches[j]) result.patches.push_back(std::move(*patches[j]));
    if (failures[j]) result.errors.push_back(std::move(*failures[j]));
  }
  return result;
}

}  // namespace axi::preprocess
