#include "viqa/dataset.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace viqa {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  if (line.find('"') != std::string::npos) throw InputError("manifest: quoted fields are not supported");
  std::vector<std::string> fields;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_number(const std::string& s, const std::string& what, std::size_t line_no) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InputError("manifest line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  }
  return v;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<ManifestRow> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError("manifest is empty: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) {
    throw InputError("manifest header must be '" + std::string(kManifestHeader) + "'");
  }
  std::vector<ManifestRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw InputError("manifest line " + std::to_string(line_no) + ": expected 6 fields");
    ManifestRow r{f[0], f[1], parse_number(f[2], "mos", line_no), f[3], f[4], parse_number(f[5], "strength", line_no)};
    if (r.ref_path.empty() || r.dist_path.empty() || r.scene_id.empty()) {
      throw InputError("manifest line " + std::to_string(line_no) + ": empty path or scene_id");
    }
    if (r.mos < 0.0 || r.mos > 100.0) {
      throw InputError("manifest line " + std::to_string(line_no) + ": mos outside [0, 100]");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRow>& rows) {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const ManifestRow& r : rows) {
    for (const std::string* field : {&r.ref_path, &r.dist_path, &r.scene_id, &r.codec}) {
      if (field->find_first_of(",\"\n") != std::string::npos) {
        throw InputError("manifest field contains a separator: " + *field);
      }
    }
    out << r.ref_path << ',' << r.dist_path << ',' << format_number(r.mos) << ',' << r.scene_id << ',' << r.codec << ','
        << format_number(r.strength) << '\n';
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw ImageIoError(ImageIoErrc::io_failure, "cannot write manifest " + path.string());
  file << out.str();
  if (!file) throw ImageIoError(ImageIoErrc::io_failure, "failed writing manifest " + path.string());
}

std::vector<TrainSample> load_dataset(const fs::path& manifest) {
  const auto rows = read_manifest(manifest);
  if (rows.empty()) throw InputError("manifest has no rows: " + manifest.string());
  const fs::path base = manifest.parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::map<std::string, std::shared_ptr<const ImageBuffer>> refs;
  std::vector<TrainSample> samples;
  samples.reserve(rows.size());
  for (const ManifestRow& r : rows) {
    auto& ref = refs[r.ref_path];
    if (!ref) ref = std::make_shared<const ImageBuffer>(load_image(resolve(r.ref_path)));
    auto dist = std::make_shared<const ImageBuffer>(load_image(resolve(r.dist_path)));
    if (!dist->same_shape(*ref) || (!samples.empty() && !dist->same_shape(*samples.front().dist_image))) {
      throw ShapeError("dataset images must share dimensions: " + r.dist_path);
    }
    samples.push_back({std::move(dist), ref, r.mos, r.scene_id, r.codec, r.strength});
  }
  return samples;
}

}  // namespace viqa
