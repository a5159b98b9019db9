#include "metaseg/episodes/dataset_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "metaseg/common/error.hpp"

namespace metaseg::episodes {

namespace fs = std::filesystem;

namespace {

void write_netpbm(const fs::path& path, const char* magic, std::size_t w, std::size_t h,
                  const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << magic << "\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

struct Netpbm {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> bytes;
};

Netpbm read_netpbm(const fs::path& path, const std::string& want_magic, std::size_t channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  auto token = [&]() {
    std::string t;
    char c = 0;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  const std::string magic = token();
  if (magic != want_magic) {
    throw FormatError(path.string() + ": expected " + want_magic + " header, found '" + magic + "'");
  }
  Netpbm img;
  long long w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(token());
    h = std::stoll(token());
    maxval = std::stoll(token());
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw FormatError(path.string() + ": unsupported header (" + std::to_string(w) + "x" + std::to_string(h) +
                      ", maxval " + std::to_string(maxval) + ")");
  }
  img.width = static_cast<std::size_t>(w);
  img.height = static_cast<std::size_t>(h);
  img.bytes.resize(img.width * img.height * channels);
  in.read(reinterpret_cast<char*>(img.bytes.data()), static_cast<std::streamsize>(img.bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.bytes.size())) {
    throw FormatError(path.string() + ": truncated pixel data");
  }
  return img;
}

std::string join_ids(const std::set<int>& ids) {
  std::string s;
  for (const int id : ids) s += (s.empty() ? "" : ",") + std::to_string(id);
  return s;
}

std::set<int> parse_ids(const std::string& text, const fs::path& file) {
  std::set<int> ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t\r") + 1);
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const int id = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      ids.insert(id);
    } catch (const std::exception&) {
      throw FormatError(file.string() + ": bad class id '" + item + "'");
    }
  }
  return ids;
}

}  // namespace

void write_dataset_dir(const SegDataset& dataset, const fs::path& dir) {
  dataset.validate();
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "masks", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "classes.txt");
    if (!out) throw IoError("cannot write " + (dir / "classes.txt").string());
    for (const auto& [id, name] : dataset.class_names) out << id << '\t' << name << '\n';
  }
  {
    std::ofstream out(dir / "split.txt");
    if (!out) throw IoError("cannot write " + (dir / "split.txt").string());
    out << "train: " << join_ids(dataset.split.train) << "\nnovel: " << join_ids(dataset.split.novel) << '\n';
  }
  for (const Record& r : dataset.records) {
    // P6 is interleaved, records are planar
    std::vector<std::uint8_t> rgb(r.image.size());
    const std::size_t plane = r.height * r.width;
    for (std::size_t i = 0; i < plane; ++i)
      for (std::size_t c = 0; c < 3; ++c) rgb[3 * i + c] = r.image[c * plane + i];
    write_netpbm(dir / "images" / (r.name + ".ppm"), "P6", r.width, r.height, rgb);
    write_netpbm(dir / "masks" / (r.name + ".pgm"), "P5", r.width, r.height, r.mask);
  }
}

SegDataset load_dataset_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  SegDataset ds;

  const fs::path classes_file = dir / "classes.txt";
  std::ifstream classes(classes_file);
  if (!classes) throw IoError("cannot read " + classes_file.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(classes, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    int id = 0;
    try {
      std::size_t used = 0;
      id = std::stoi(line.substr(0, tab), &used);
      if (used != tab && tab != std::string::npos) throw std::invalid_argument(line);
    } catch (const std::exception&) {
      throw FormatError(classes_file.string() + ":" + std::to_string(line_no) + ": expected '<id>\\t<name>'");
    }
    if (tab == std::string::npos || id < 1 || id > 255) {
      throw FormatError(classes_file.string() + ":" + std::to_string(line_no) + ": expected '<id>\\t<name>' with id in [1, 255]");
    }
    if (!ds.class_names.emplace(id, line.substr(tab + 1)).second) {
      throw FormatError(classes_file.string() + ": duplicate class id " + std::to_string(id));
    }
  }

  const fs::path split_file = dir / "split.txt";
  if (fs::exists(split_file)) {
    std::ifstream split(split_file);
    while (std::getline(split, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto colon = line.find(':');
      const std::string key = line.substr(0, colon);
      if (colon == std::string::npos || (key != "train" && key != "novel")) {
        throw FormatError(split_file.string() + ": expected 'train: ...' or 'novel: ...', got '" + line + "'");
      }
      (key == "train" ? ds.split.train : ds.split.novel) = parse_ids(line.substr(colon + 1), split_file);
    }
  }

  std::vector<std::string> names;
  if (fs::is_directory(dir / "images")) {
    for (const auto& entry : fs::directory_iterator(dir / "images")) {
      if (entry.path().extension() == ".ppm") names.push_back(entry.path().stem().string());
    }
  }
  std::sort(names.begin(), names.end());
  if (fs::is_directory(dir / "masks")) {
    for (const auto& entry : fs::directory_iterator(dir / "masks")) {
      if (entry.path().extension() != ".pgm") continue;
      const std::string stem = entry.path().stem().string();
      if (!std::binary_search(names.begin(), names.end(), stem)) {
        throw ValidationError("mask " + entry.path().string() + " has no matching image");
      }
    }
  }

  for (const std::string& name : names) {
    const fs::path image_path = dir / "images" / (name + ".ppm");
    const fs::path mask_path = dir / "masks" / (name + ".pgm");
    if (!fs::exists(mask_path)) {
      throw ValidationError("image " + image_path.string() + " has no mask (expected " + mask_path.string() + ")");
    }
    const Netpbm img = read_netpbm(image_path, "P6", 3);
    const Netpbm mask = read_netpbm(mask_path, "P5", 1);
    if (img.width != mask.width || img.height != mask.height) {
      throw ValidationError("size mismatch: " + image_path.string() + " is " + std::to_string(img.width) + "x" +
                            std::to_string(img.height) + ", mask is " + std::to_string(mask.width) + "x" +
                            std::to_string(mask.height));
    }
    for (const std::uint8_t v : mask.bytes) {
      if (v != 0 && !ds.class_names.count(v)) {
        throw ValidationError(mask_path.string() + ": mask value " + std::to_string(v) + " is not a declared class");
      }
    }
    Record r;
    r.name = name;
    r.width = img.width;
    r.height = img.height;
    const std::size_t plane = r.height * r.width;
    r.image.resize(3 * plane);
    for (std::size_t i = 0; i < plane; ++i)
      for (std::size_t c = 0; c < 3; ++c) r.image[c * plane + i] = img.bytes[3 * i + c];
    r.mask = mask.bytes;
    r.refresh_present();
    ds.records.push_back(std::move(r));
  }
  ds.validate();
  return ds;
}

}  // namespace metaseg::episodes
