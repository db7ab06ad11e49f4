#pragma once

#include "blend/dataset.hpp"
#include "blend/error.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace support {

// Error code raised by f; fails the test when nothing is thrown.
inline blend::ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const blend::Error& e) {
    return e.code();
  }
  FAIL("expected a blend::Error");
  return blend::ErrorCode::Io;
}

// Small datasets built row by row.
struct Toy {
  std::vector<std::string> aux{"x"};
  std::vector<std::string> outcomes{"y"};
  std::vector<blend::Unit> units;

  Toy& prob(std::vector<double> x, double y, double d_star) {
    return add(blend::Membership::Prob, std::move(x), y, d_star);
  }
  Toy& conv(std::vector<double> x, double y, std::optional<double> d_star = std::nullopt) {
    return add(blend::Membership::Conv, std::move(x), y, d_star);
  }
  Toy& add(blend::Membership m, std::vector<double> x, double y, std::optional<double> d_star) {
    blend::Unit u;
    u.id = "u" + std::to_string(units.size());
    u.membership = m;
    u.x = std::move(x);
    u.y = {y};
    u.d_star = d_star;
    units.push_back(std::move(u));
    return *this;
  }
  blend::Dataset build() const { return blend::Dataset::from_units({aux, outcomes}, units); }
};

// Fresh, empty directory under the system temp path.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("blend_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace support
