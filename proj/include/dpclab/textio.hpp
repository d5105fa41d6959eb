#pragma once

#include <string>
#include <vector>

#include "dpclab/numerics.hpp"

namespace dpclab {

/// Shortest round-trip decimal form of v, locale independent. All CSV, meta
/// and SVG emission goes through this so identical runs produce identical
/// bytes.
std::string fmt_double(double v);

/// Row-major single-line matrix form, e.g. "[[1,2],[3,4]]".
std::string mat_to_string(const Mat& m);
Mat mat_from_string(const std::string& text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace dpclab
