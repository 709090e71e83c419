#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "clcagan/error.hpp"
#include "clcagan/train.hpp"

namespace clcagan::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitNumerical = 4 };

int exit_code_for(const Error& error);

struct SceneSource {
  std::filesystem::path cube;
  std::optional<std::filesystem::path> truth;
  std::string name;
};

/// "dir" (holding scene.hsib and, optionally, truth.msk) or
/// "cube.hsib[,truth.msk]". The name defaults to the directory or file stem.
SceneSource parse_scene_arg(const std::string& arg);
Task load_task(const SceneSource& source);

/// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace clcagan::cli
