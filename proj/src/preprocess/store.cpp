#include "axi/preprocess/store.hpp"

#include "axi/bytes.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

namespace axi::preprocess {

namespace {

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  return ByteReader(std::string_view(in).substr(at, 4)).u32();
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw StoreError("short write to " + path.string());
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, '\t')) f.push_back(item);
  if (!line.empty() && line.back() == '\t') f.emplace_back();
  return f;
}

std::string file_name(std::size_t ordinal, const std::string& joint_id) {
  std::string safe;
  for (char c : joint_id) safe.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu_", ordinal);
  return buf + safe + ".axpt";
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

std::string encode_patch(const Patch& patch) {
  std::string out(kPatchMagic, kPatchMagic + 4);
  put_u32(out, kPatchVersion);
  put_u32(out, static_cast<std::uint32_t>(patch.joint_id.size()));
  out += patch.joint_id;
  out.push_back(static_cast<char>(patch.label));
  const auto data = patch.data.data();
  out.reserve(out.size() + 4 * data.size());
  for (float v : data) put_f32(out, v);
  return out;
}

Patch decode_patch(const std::string& bytes) {
  if (bytes.size() < 13 || std::memcmp(bytes.data(), kPatchMagic, 4) != 0) throw StoreError("not a patch file");
  if (get_u32(bytes, 4) != kPatchVersion) throw StoreError("unsupported patch version " + std::to_string(get_u32(bytes, 4)));
  const std::size_t id_len = get_u32(bytes, 8);
  if (bytes.size() < 13 + id_len) throw StoreError("truncated patch header");
  Patch patch;
  patch.joint_id = bytes.substr(12, id_len);
  const auto label = static_cast<unsigned char>(bytes[12 + id_len]);
  if (label > 1) throw StoreError("bad label byte " + std::to_string(label));
  patch.label = static_cast<ingest::Label>(label);

  const std::size_t start = 13 + id_len;
  const std::size_t payload = bytes.size() - start;
  const std::size_t per_channel = payload / (4 * kChannels);
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(per_channel))));
  if (side == 0 || payload != side * side * kChannels * 4) {
    throw StoreError("patch payload of " + std::to_string(payload) + " bytes is not side*side*6 floats");
  }
  patch.data = nn::Tensor<float>(nn::Shape{side, side, kChannels, 1});
  auto out = patch.data.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<float>(get_u32(bytes, start + 4 * i));
  return patch;
}

void write_patch(const std::filesystem::path& path, const Patch& patch) { dump(path, encode_patch(patch)); }

Patch read_patch(const std::filesystem::path& path) {
  try {
    return decode_patch(slurp(path));
  } catch (const StoreError& e) {
    throw StoreError(path.string() + ": " + e.what());
  }
}

void write_store(const std::filesystem::path& dir, const PreprocessResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw StoreError("cannot create " + dir.string() + ": " + ec.message());
  std::ostringstream index;
  index << "#image_bound=" << result.image_bound << '\n';
  index << "#joint_id\tlabel\tfile\tcxmin\tcymin\tcxmax\tcymax\treal_slices\n";
  for (std::size_t i = 0; i < result.patches.size(); ++i) {
    const Patch& p = result.patches[i];
    const std::string name = file_name(i, p.joint_id);
    write_patch(dir / name, p);
    index << p.joint_id << '\t' << to_string(p.label) << '\t' << name << '\t' << p.window.cxmin << '\t'
          << p.window.cymin << '\t' << p.window.cxmax << '\t' << p.window.cymax << '\t' << p.real_slices << '\n';
  }
  dump(dir / "index.tsv", index.str());
  std::ostringstream errors;
  errors << "#joint_id\tslice\tmessage\n";
  for (const auto& e : result.errors) {
    errors << e.joint_id << '\t' << (e.slice ? std::to_string(*e.slice) : "-") << '\t' << one_line(e.message) << '\n';
  }
  dump(dir / "errors.tsv", errors.str());
}

PreprocessResult read_store(const std::filesystem::path& dir) {
  PreprocessResult result;
  std::istringstream index(slurp(dir / "index.tsv"));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(index, line)) {
    ++line_no;
    if (line.starts_with("#image_bound=")) {
      try {
        result.image_bound = std::stoll(line.substr(13));
      } catch (const std::exception&) {
        throw StoreError("index.tsv line " + std::to_string(line_no) + ": bad image_bound");
      }
      continue;
    }
    if (line.empty() || line.front() == '#') continue;
    const auto f = split_tabs(line);
    if (f.size() != 8) throw StoreError("index.tsv line " + std::to_string(line_no) + ": expected 8 fields");
    Patch p = read_patch(dir / f[2]);
    if (p.joint_id != f[0] || to_string(p.label) != f[1]) {
      throw StoreError("index.tsv line " + std::to_string(line_no) + ": entry disagrees with " + f[2]);
    }
    try {
      p.window = {std::stoll(f[3]), std::stoll(f[4]), std::stoll(f[5]), std::stoll(f[6])};
      p.real_slices = std::stoul(f[7]);
    } catch (const std::exception&) {
      throw StoreError("index.tsv line " + std::to_string(line_no) + ": bad number");
    }
    result.patches.push_back(std::move(p));
  }
  if (std::filesystem::exists(dir / "errors.tsv")) {
    std::istringstream errors(slurp(dir / "errors.tsv"));
    while (std::getline(errors, line)) {
      if (line.empty() || line.front() == '#') continue;
      const auto f = split_tabs(line);
      if (f.size() != 3) throw StoreError("malformed errors.tsv row");
      FailedJoint e{f[0], std::nullopt, f[2]};
      if (f[1] != "-") e.slice = std::stoul(f[1]);
      result.errors.push_back(std::move(e));
    }
  }
  return result;
}

PreprocessResult preprocess_dataset(const ingest::DatasetManifest& manifest, const std::filesystem::path& out_dir,
                                    const PreprocessConfig& config) {
  PreprocessResult result = preprocess_records(manifest, config);
  write_store(out_dir, result);
  return result;
}

}  // namespace axi::preprocess
