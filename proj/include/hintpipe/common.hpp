#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hintpipe {

using TokenId = std::uint32_t;
using SentId = std::uint32_t;

/// Runtime failure raised by any pipeline stage.
class Error : public std::runtime_error
{
  public:
	using std::runtime_error::runtime_error;
};

/// Writes through a temporary sibling file and renames it over `path`, so a
/// reader never observes a half-written artifact.
void atomic_write(const std::filesystem::path &path,
                  const std::function<void(std::ostream &)> &writer,
                  bool binary = false);

std::string read_file(const std::filesystem::path &path);

std::string_view trim(std::string_view s);

} // namespace hintpipe
