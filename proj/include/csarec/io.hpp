// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <iosfwd>
#include <string>

namespace csarec {

// Writes to "<path>.tmp" then renames over `path`, so readers never see a
// partial file.
void atomic_write(const std::string& path, const std::function<void(std::ostream&)>& writer, bool binary = false);
void atomic_write_text(const std::string& path, const std::string& content);

std::string read_text(const std::string& path);

}  // namespace csarec
