#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metaseg/common/config_text.hpp"
#include "metaseg/episodes/synth.hpp"
#include "metaseg/trainer/trainer.hpp"

namespace metaseg::cli {

struct EvalSettings {
  int K = 2;
  int N = 5;
  int Q = 2;
  int tasks = 200;
  std::uint64_t seed = 7;
  std::vector<int> shots;  // non-empty = shot sweep
  std::string csv;         // CSV report path, empty = none
};

// Everything a run can be configured with. Sections: [data], [train],
// [embed], [eval], [paths].
struct RunConfig {
  episodes::SynthConfig data;
  std::vector<int> novel_classes = episodes::kDefaultNovelClasses;
  trainer::TrainConfig train;
  EvalSettings eval;
  std::string dataset_dir;  // load from here instead of generating
  std::string out_dir = "run";
  std::string checkpoint;

  void apply(ConfigTable& table);
  std::string to_text() const;
  void validate() const;

  // Defaults, then the file (if any); unknown keys are rejected.
  static RunConfig load(const std::filesystem::path& path);
};

std::vector<int> parse_int_list(const std::string& text);

}  // namespace metaseg::cli
