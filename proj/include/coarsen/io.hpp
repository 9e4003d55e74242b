#pragma once

#include <string>
#include <string_view>

namespace coarsen {

// Shortest decimal text that parses back to the same double.
std::string fmt(double v);

// Throws std::runtime_error on failure.
void write_text_file(const std::string& path, std::string_view content);

}  // namespace coarsen
