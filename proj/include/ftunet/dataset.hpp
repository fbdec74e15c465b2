#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftunet/error.hpp"
#include "ftunet/image_io.hpp"
#include "ftunet/sample.hpp"

namespace ftunet {

enum class Modality { natural, ultrasound, xray, synthetic };
NLOHMANN_JSON_SERIALIZE_ENUM(Modality, {{Modality::natural, "natural"},
                                        {Modality::ultrasound, "ultrasound"},
                                        {Modality::xray, "xray"},
                                        {Modality::synthetic, "synthetic"}})

struct SampleRecord {
  std::string id;
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
  std::string origin_id;  // equals id for originals
};

struct DatasetManifest {
  std::vector<SampleRecord> records;
  Modality modality = Modality::synthetic;
  std::string name;

  std::size_t original_count() const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [](const SampleRecord& r) { return r.id == r.origin_id; }));
  }
};

namespace detail {

inline bool is_image_file(const std::filesystem::path& p) {
  static const std::set<std::string> exts{".png", ".bmp", ".tif", ".tiff"};
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return exts.contains(e);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  return cells;
}

inline std::vector<SampleRecord> read_manifest_csv(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IngestionError("cannot open manifest " + csv.string());
  std::string line;
  if (!std::getline(in, line)) return {};
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int id_col = column("id"), img_col = column("image_path"), mask_col = column("mask_path");
  const int origin_col = column("origin_id");
  if (id_col < 0 || img_col < 0 || mask_col < 0)
    throw IngestionError(csv.string() + ": header must contain id,image_path,mask_path");
  const auto base = csv.parent_path();
  std::vector<SampleRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    const int needed = std::max({id_col, img_col, mask_col, origin_col}) + 1;
    if (static_cast<int>(cells.size()) < needed)
      throw IngestionError(csv.string() + ":" + std::to_string(lineno) + ": too few columns");
    SampleRecord r;
    r.id = cells[id_col];
    r.image_path = cells[img_col];
    r.mask_path = cells[mask_col];
    if (r.image_path.is_relative()) r.image_path = base / r.image_path;
    if (r.mask_path.is_relative()) r.mask_path = base / r.mask_path;
    r.origin_id = origin_col >= 0 && !cells[origin_col].empty() ? cells[origin_col] : r.id;
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<SampleRecord> read_directory_pairs(const std::filesystem::path& dir) {
  const auto images = dir / "images";
  const auto masks = dir / "masks";
  std::map<std::string, std::filesystem::path> mask_files;
  if (std::filesystem::is_directory(masks))
    for (const auto& e : std::filesystem::directory_iterator(masks))
      if (e.is_regular_file() && is_image_file(e.path())) mask_files[e.path().stem().string()] = e.path();
  std::vector<SampleRecord> out;
  for (const auto& e : std::filesystem::directory_iterator(images)) {
    if (!e.is_regular_file() || !is_image_file(e.path())) continue;
    const std::string id = e.path().stem().string();
    auto it = mask_files.find(id);
    if (it == mask_files.end()) throw IngestionError("sample " + id + ": no mask under " + masks.string());
    out.push_back({id, e.path(), it->second, id});
  }
  return out;
}

}  // namespace detail

// Reads a CSV manifest (id,image_path,mask_path[,origin_id]) or a directory
// holding manifest.csv or the images/<id> + masks/<id> convention. Every pair
// is decoded to verify it; records come back sorted by id.
inline DatasetManifest load_manifest(const std::filesystem::path& path, Modality modality = Modality::synthetic) {
  DatasetManifest m;
  m.modality = modality;
  m.name = path.filename().empty() ? path.parent_path().filename().string() : path.stem().string();
  if (std::filesystem::is_directory(path)) {
    if (std::filesystem::exists(path / "manifest.csv")) {
      m.records = detail::read_manifest_csv(path / "manifest.csv");
    } else if (std::filesystem::is_directory(path / "images")) {
      m.records = detail::read_directory_pairs(path);
    } else if (std::filesystem::is_empty(path)) {
      return m;
    } else {
      throw IngestionError(path.string() + ": neither manifest.csv nor an images/ directory");
    }
  } else if (std::filesystem::exists(path)) {
    m.records = detail::read_manifest_csv(path);
  } else {
    throw IngestionError("dataset path does not exist: " + path.string());
  }
  std::sort(m.records.begin(), m.records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::set<std::string> ids;
  for (const auto& r : m.records)
    if (!ids.insert(r.id).second) throw IngestionError("duplicate sample id " + r.id);
  for (const auto& r : m.records) {
    if (!ids.contains(r.origin_id)) throw IngestionError("sample " + r.id + ": unknown origin " + r.origin_id);
    if (!std::filesystem::exists(r.image_path)) throw IngestionError("sample " + r.id + ": missing image " + r.image_path.string());
    if (!std::filesystem::exists(r.mask_path)) throw IngestionError("sample " + r.id + ": missing mask " + r.mask_path.string());
    cv::Mat img, mask;
    try {
      img = read_raw_image(r.image_path);
      mask = read_raw_image(r.mask_path);
    } catch (const Error& e) {
      throw IngestionError("sample " + r.id + ": " + e.what());
    }
    if (img.rows != mask.rows || img.cols != mask.cols)
      throw IngestionError("sample " + r.id + ": image and mask sizes differ");
  }
  return m;
}

// Decodes and preprocesses every record to the network input size.
inline SampleSet load_samples(const DatasetManifest& m, int height = kDefaultImageSize, int width = kDefaultImageSize) {
  SampleSet out;
  out.reserve(m.records.size());
  for (const auto& r : m.records) {
    try {
      out.push_back({r.id, r.origin_id, preprocess_image(read_raw_image(r.image_path), height, width),
                     preprocess_mask(read_raw_image(r.mask_path), height, width)});
    } catch (const Error& e) {
      throw IngestionError("sample " + r.id + ": " + e.what());
    }
  }
  return out;
}

inline void write_manifest_csv(const std::vector<SampleRecord>& records, const std::filesystem::path& csv) {
  std::ofstream out(csv);
  if (!out) throw Error("cannot write " + csv.string());
  const auto base = csv.parent_path();
  out << "id,image_path,mask_path,origin_id\n";
  for (const auto& r : records)
    out << r.id << ',' << std::filesystem::relative(r.image_path, base).generic_string() << ','
        << std::filesystem::relative(r.mask_path, base).generic_string() << ',' << r.origin_id << '\n';
}

// Writes images/<id>.png, masks/<id>.png and manifest.csv under dir.
inline DatasetManifest write_sample_set(const SampleSet& samples, const std::filesystem::path& dir,
                                        Modality modality = Modality::synthetic) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  DatasetManifest m;
  m.modality = modality;
  m.name = dir.filename().string();
  for (const auto& s : samples) {
    SampleRecord r{s.id, dir / "images" / (s.id + ".png"), dir / "masks" / (s.id + ".png"), s.origin_id};
    write_image(s.image, r.image_path);
    write_image(s.mask, r.mask_path);
    m.records.push_back(std::move(r));
  }
  write_manifest_csv(m.records, dir / "manifest.csv");
  return m;
}

}  // namespace ftunet
