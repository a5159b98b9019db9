#include "metaseg/cli/config.hpp"

#include <fstream>
#include <sstream>

#include "metaseg/common/error.hpp"

namespace metaseg::cli {

namespace {

std::string list_text(const std::vector<int>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

std::vector<int> to_ints(const std::vector<std::int64_t>& v) {
  std::vector<int> out;
  for (const auto x : v) {
    if (x < -1000000 || x > 1000000) throw ValidationError("list value out of range: " + std::to_string(x));
    out.push_back(static_cast<int>(x));
  }
  return out;
}

int narrow(std::int64_t v, const char* key) {
  if (v < -1000000000 || v > 1000000000) throw ValidationError(std::string("value out of range for ") + key);
  return static_cast<int>(v);
}

}  // namespace

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("bad integer list entry '" + item + "' in '" + text + "'");
    }
  }
  if (out.empty()) throw ValidationError("empty integer list");
  return out;
}

void RunConfig::apply(ConfigTable& t) {
  if (auto v = t.take_int("data.num_classes")) data.num_classes = narrow(*v, "num_classes");
  if (auto v = t.take_int("data.images_per_class")) data.images_per_class = narrow(*v, "images_per_class");
  if (auto v = t.take_int("data.image_size")) data.image_size = narrow(*v, "image_size");
  if (auto v = t.take_int("data.min_objects")) data.min_objects = narrow(*v, "min_objects");
  if (auto v = t.take_int("data.max_objects")) data.max_objects = narrow(*v, "max_objects");
  if (auto v = t.take_double("data.min_radius")) data.min_radius = *v;
  if (auto v = t.take_double("data.max_radius")) data.max_radius = *v;
  if (auto v = t.take_double("data.mixed_prob")) data.mixed_prob = *v;
  if (auto v = t.take_double("data.noise")) data.noise = *v;
  if (auto v = t.take_int("data.clutter")) data.clutter = narrow(*v, "clutter");
  if (auto v = t.take_int("data.max_way")) data.max_way = narrow(*v, "max_way");
  if (auto v = t.take_u64("data.seed")) data.seed = *v;
  if (auto v = t.take_int_list("data.novel_classes")) novel_classes = to_ints(*v);

  train.apply(t);

  if (auto v = t.take_int("eval.way")) eval.K = narrow(*v, "way");
  if (auto v = t.take_int("eval.shot")) eval.N = narrow(*v, "shot");
  if (auto v = t.take_int("eval.query")) eval.Q = narrow(*v, "query");
  if (auto v = t.take_int("eval.tasks")) eval.tasks = narrow(*v, "tasks");
  if (auto v = t.take_u64("eval.seed")) eval.seed = *v;
  if (auto v = t.take_int_list("eval.shots")) eval.shots = to_ints(*v);
  if (auto v = t.take_string("eval.csv")) eval.csv = *v;

  if (auto v = t.take_string("paths.dataset")) dataset_dir = *v;
  if (auto v = t.take_string("paths.out")) out_dir = *v;
  if (auto v = t.take_string("paths.checkpoint")) checkpoint = *v;
}

std::string RunConfig::to_text() const {
  std::ostringstream o;
  o << "[data]\nnum_classes = " << data.num_classes << "\nimages_per_class = " << data.images_per_class
    << "\nimage_size = " << data.image_size << "\nmin_objects = " << data.min_objects
    << "\nmax_objects = " << data.max_objects << "\nmin_radius = " << format_double(data.min_radius)
    << "\nmax_radius = " << format_double(data.max_radius) << "\nmixed_prob = " << format_double(data.mixed_prob)
    << "\nnoise = " << format_double(data.noise) << "\nclutter = " << data.clutter << "\nmax_way = " << data.max_way
    << "\nseed = " << data.seed << "\nnovel_classes = " << list_text(novel_classes) << "\n\n";
  o << train.to_text() << "\n";
  o << "[eval]\nway = " << eval.K << "\nshot = " << eval.N << "\nquery = " << eval.Q << "\ntasks = " << eval.tasks
    << "\nseed = " << eval.seed << "\nshots = " << list_text(eval.shots) << "\ncsv = " << quote(eval.csv) << "\n\n";
  o << "[paths]\ndataset = " << quote(dataset_dir) << "\nout = " << quote(out_dir)
    << "\ncheckpoint = " << quote(checkpoint) << "\n";
  return o.str();
}

void RunConfig::validate() const {
  data.validate();
  train.validate();
  if (eval.K < 1 || eval.N < 1 || eval.Q < 1) throw ValidationError("eval: way, shot and query must be >= 1");
  if (eval.tasks < 1) throw ValidationError("eval: tasks must be >= 1");
  for (const int s : eval.shots) {
    if (s < 1) throw ValidationError("eval: shot counts must be >= 1");
  }
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  RunConfig c;
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw IoError("config file not found: " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  ConfigTable table = ConfigTable::parse(text.str(), path.string());
  c.apply(table);
  table.reject_unknown();
  return c;
}

}  // namespace metaseg::cli
