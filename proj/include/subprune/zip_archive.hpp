#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace subprune::zip {

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Entry {
  std::string name;
  std::vector<std::uint8_t> data;
};

/// Writes a zip archive with stored (uncompressed) entries in the given order.
/// All timestamps are the DOS epoch (1980-01-01 00:00), so output bytes depend
/// only on entry names, contents and order.
std::vector<std::uint8_t> write_archive(const std::vector<Entry>& entries);

/// Reads stored or deflated entries via the central directory; CRCs are checked.
std::vector<Entry> read_archive(std::span<const std::uint8_t> bytes);

}  // namespace subprune::zip
