// SPDX-License-Identifier: Apache-2.0
#include "csarec/io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace csarec {

void atomic_write(const std::string& path, const std::function<void(std::ostream&)>& writer, bool binary) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, binary ? std::ios::out | std::ios::binary | std::ios::trunc : std::ios::out | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    try {
      writer(out);
    } catch (...) {
      out.close();
      fs::remove(tmp);
      throw;
    }
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw std::runtime_error("write failed for " + path);
    }
  }
  fs::rename(tmp, target);
}

void atomic_write_text(const std::string& path, const std::string& content) {
  atomic_write(path, [&](std::ostream& out) { out << content; });
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace csarec
