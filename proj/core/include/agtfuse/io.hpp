#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

namespace agtfuse {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Writes content to a sibling temp file and renames it over `path`, so
/// readers never observe a partial file.
void atomic_write_file(const std::filesystem::path& path,
                       const std::string& content);

/// Formats a double with fixed 4 decimals (the convention for CSV reports).
std::string format_fixed4(double value);

}  // namespace agtfuse
