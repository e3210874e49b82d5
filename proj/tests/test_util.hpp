#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>
#include <unistd.h>

#include "cosmovae/error.hpp"

namespace testutil {

template <typename F>
::testing::AssertionResult fails_with(F&& f, cosmovae::ErrorCode code) {
  try {
    f();
  } catch (const cosmovae::Error& e) {
    if (e.code() == code) return ::testing::AssertionSuccess();
    return ::testing::AssertionFailure()
           << "threw " << cosmovae::to_string(e.code()) << ": " << e.what();
  }
  return ::testing::AssertionFailure() << "did not throw";
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("cosmovae_ut_" + tag + "_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
