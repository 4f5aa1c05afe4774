#pragma once

// Shard files: one decimal float per line, LF newlines.

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "dhill/distributions.hpp"
#include "dhill/error.hpp"
#include "dhill/simharness.hpp"

namespace dhill {

inline Shard read_shard_file(const std::filesystem::path& path, int machine_id = 1) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read shard file " + path.string());
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto v = sim::parse_double(line);
    if (!v) throw Error(ErrorKind::Io, path.string() + ":" + std::to_string(line_no) + ": not a number");
    values.push_back(*v);
  }
  try {
    return Shard(machine_id, std::move(values));
  } catch (const Error& e) {
    throw Error(ErrorKind::Io, path.string() + ": " + e.what());
  }
}

/// Writes values with 17 significant digits so that reading them back is exact.
inline void write_shard_file(const std::filesystem::path& path, std::span<const double> values) {
  std::string text;
  for (double v : values) {
    text += sim::format_double(v);
    text += '\n';
  }
  sim::write_text_file(path, text);
}

}  // namespace dhill
