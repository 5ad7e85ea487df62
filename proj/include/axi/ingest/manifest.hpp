#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace axi::ingest {

inline constexpr std::size_t kMaxSlices = 6;
inline constexpr std::int64_t kDefaultImageBound = 1024;

enum class Label : std::uint8_t { kNormal = 0, kDefect = 1 };

std::string to_string(Label label);
Label parse_label(const std::string& text);

struct Roi {
  std::int64_t xmin = 0, xmax = 0, ymin = 0, ymax = 0;

  std::int64_t width() const { return xmax - xmin; }
  std::int64_t height() const { return ymax - ymin; }
  bool operator==(const Roi&) const = default;
};

/// Throws std::invalid_argument unless xmin < xmax, ymin < ymax and all
/// coordinates lie in [0, image_bound].
void validate_roi(const Roi& roi, std::int64_t image_bound);

struct SliceRef {
  std::size_t index = 0;  // focal-depth position, 0..5
  std::string path;       // as written in the manifest
  bool operator==(const SliceRef&) const = default;
};

struct JointRecord {
  std::string joint_id;
  std::string board_type;
  std::string joint_type;
  Roi roi;
  std::vector<SliceRef> slices;  // ascending index, 1..6 entries
  Label label = Label::kNormal;

  bool operator==(const JointRecord&) const = default;
};

struct DatasetManifest {
  std::int64_t image_bound = kDefaultImageBound;
  std::vector<JointRecord> records;  // ordered by joint_id
  /// Directory relative slice paths are resolved against.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const SliceRef& slice) const;
  std::size_t count(Label label) const;
};

class ManifestError : public std::runtime_error {
 public:
  ManifestError(std::size_t line, const std::string& what)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Tab-separated slice rows grouped into joint records. Lines starting with
/// '#' are headers; "#image_bound=N" sets the bound.
DatasetManifest parse_manifest(std::istream& in, std::filesystem::path base_dir = {});
DatasetManifest parse_manifest(const std::filesystem::path& path);

void write_manifest(std::ostream& out, const DatasetManifest& manifest);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

}  // namespace axi::ingest
