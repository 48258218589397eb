#pragma once

#include <stdexcept>
#include <string>

namespace eit {

/// Base class for every error raised by the library. The CLI maps the
/// category onto its exit code.
class Error : public std::runtime_error {
public:
  enum class Category { config, numerical, parse, stale_manifest };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

private:
  Category category_;
};

/// Invalid user input: bad layout, inadmissible conductivity, malformed config.
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error(Category::config, what) {}
};

/// Solver breakdown, non-finite values, degenerate statistics.
class NumericalError : public Error {
public:
  explicit NumericalError(const std::string& what) : Error(Category::numerical, what) {}
};

/// Malformed on-disk artifact. Carries the line (1-based) and section.
class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t line, std::string section)
      : Error(Category::parse, "line " + std::to_string(line) + " [" + section + "]: " + what),
        line_(line),
        section_(std::move(section)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& section() const noexcept { return section_; }

private:
  std::size_t line_;
  std::string section_;
};

class StaleManifestError : public Error {
public:
  explicit StaleManifestError(const std::string& what)
      : Error(Category::stale_manifest, what) {}
};

}  // namespace eit
