#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "afldm/config.hpp"

namespace afldm::cli {

struct Invocation {
  std::string command;
  std::filesystem::path config_path;  // empty: built-in defaults
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
  std::vector<std::filesystem::path> ckpts;
  bool f64 = false;
  std::optional<int> steps;
};

const std::vector<std::string>& command_names();

// Loads the config, applies flag overrides, writes the manifest and runs the
// command. Errors propagate as afldm exceptions.
void run(const Invocation& inv, const std::string& build_id);

}  // namespace afldm::cli
