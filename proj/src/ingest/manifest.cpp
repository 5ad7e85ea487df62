#include "axi/ingest/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace axi::ingest {

std::string to_string(Label label) { return label == Label::kDefect ? "defect" : "normal"; }

Label parse_label(const std::string& text) {
  if (text == "defect") return Label::kDefect;
  if (text == "normal") return Label::kNormal;
  throw std::invalid_argument("label must be 'normal' or 'defect', got '" + text + "'");
}

void validate_roi(const Roi& roi, std::int64_t image_bound) {
  if (roi.xmin >= roi.xmax || roi.ymin >= roi.ymax) {
    throw std::invalid_argument("ROI must satisfy xmin < xmax and ymin < ymax");
  }
  for (std::int64_t v : {roi.xmin, roi.xmax, roi.ymin, roi.ymax}) {
    if (v < 0 || v > image_bound) {
      throw std::invalid_argument("ROI coordinate " + std::to_string(v) + " outside [0, " +
                                  std::to_string(image_bound) + "]");
    }
  }
}

std::filesystem::path DatasetManifest::resolve(const SliceRef& slice) const {
  std::filesystem::path p(slice.path);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

std::size_t DatasetManifest::count(Label label) const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.label == label;
  return n;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::int64_t parse_int(const std::string& field, const char* name, std::size_t line) {
  std::int64_t value = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ManifestError(line, std::string("bad ") + name + " '" + field + "'");
  }
  return value;
}

}  // namespace

DatasetManifest parse_manifest(std::istream& in, std::filesystem::path base_dir) {
  DatasetManifest manifest;
  manifest.base_dir = std::move(base_dir);
  std::map<std::string, JointRecord> joints;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      constexpr std::string_view kBound = "#image_bound=";
      if (line.starts_with(kBound)) {
        manifest.image_bound = parse_int(line.substr(kBound.size()), "image_bound", line_no);
        if (manifest.image_bound <= 0) throw ManifestError(line_no, "image_bound must be positive");
      }
      continue;
    }
    const auto f = split_tabs(line);
    if (f.size() != 10) {
      throw ManifestError(line_no, "expected 10 tab-separated fields, got " + std::to_string(f.size()));
    }
    if (f[0].empty()) throw ManifestError(line_no, "empty joint_id");
    const std::int64_t index = parse_int(f[3], "slice_index", line_no);
    if (index < 0 || index >= static_cast<std::int64_t>(kMaxSlices)) {
      throw ManifestError(line_no, "slice_index " + f[3] + " outside [0, 6)");
    }
    Roi roi{parse_int(f[4], "xmin", line_no), parse_int(f[5], "xmax", line_no), parse_int(f[6], "ymin", line_no),
            parse_int(f[7], "ymax", line_no)};
    Label label;
    try {
      label = parse_label(f[8]);
    } catch (const std::invalid_argument& e) {
      throw ManifestError(line_no, e.what());
    }
    if (f[9].empty()) throw ManifestError(line_no, "empty image_path");

    auto [it, inserted] = joints.try_emplace(f[0]);
    JointRecord& rec = it->second;
    if (inserted) {
      rec.joint_id = f[0];
      rec.board_type = f[1];
      rec.joint_type = f[2];
      rec.roi = roi;
      rec.label = label;
    } else if (rec.board_type != f[1] || rec.joint_type != f[2] || rec.roi != roi || rec.label != label) {
      throw ManifestError(line_no, "joint " + f[0] + " has inconsistent fields across slices");
    }
    for (const auto& s : rec.slices) {
      if (s.index == static_cast<std::size_t>(index)) {
        throw ManifestError(line_no, "duplicate slice " + f[3] + " for joint " + f[0]);
      }
    }
    if (rec.slices.size() == kMaxSlices) {
      throw ManifestError(line_no, "joint " + f[0] + " has more than 6 slices");
    }
    rec.slices.push_back({static_cast<std::size_t>(index), f[9]});
  }
  for (auto& [id, rec] : joints) {
    try {
      validate_roi(rec.roi, manifest.image_bound);
    } catch (const std::invalid_argument& e) {
      throw ManifestError(0, "joint " + id + ": " + e.what());
    }
    std::sort(rec.slices.begin(), rec.slices.end(),
              [](const SliceRef& a, const SliceRef& b) { return a.index < b.index; });
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

DatasetManifest parse_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError(0, "cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

void write_manifest(std::ostream& out, const DatasetManifest& manifest) {
  out << "#image_bound=" << manifest.image_bound << '\n';
  out << "#joint_id\tboard_type\tjoint_type\tslice_index\txmin\txmax\tymin\tymax\tlabel\timage_path\n";
  for (const auto& r : manifest.records) {
    for (const auto& s : r.slices) {
      out << r.joint_id << '\t' << r.board_type << '\t' << r.joint_type << '\t' << s.index << '\t' << r.roi.xmin
          << '\t' << r.roi.xmax << '\t' << r.roi.ymin << '\t' << r.roi.ymax << '\t' << to_string(r.label) << '\t'
          << s.path << '\n';
    }
  }
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ManifestError(0, "cannot write manifest " + path.string());
  write_manifest(out, manifest);
  if (!out) throw ManifestError(0, "short write to " + path.string());
}

}  // namespace axi::ingest
