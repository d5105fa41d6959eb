#include "dpclab/textio.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace dpclab {

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string mat_to_string(const Mat& m) {
  std::string out = "[";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out += "[";
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out += ",";
      out += fmt_double(m(i, j));
    }
    out += "]";
    if (i + 1 < m.rows()) out += ",";
  }
  out += "]";
  return out;
}

Mat mat_from_string(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::vector<double> current;
  size_t i = 0;
  auto fail = [&](const char* why) {
    throw std::runtime_error(std::string("mat_from_string: ") + why + " near position " +
                             std::to_string(i) + " in '" + text + "'");
  };
  int depth = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '[') {
      ++depth;
      if (depth == 2) current.clear();
      ++i;
    } else if (c == ']') {
      if (depth == 2) rows.push_back(current);
      --depth;
      if (depth < 0) fail("unbalanced brackets");
      ++i;
    } else if (c == ',' || c == ' ' || c == '\t') {
      ++i;
    } else {
      char* end = nullptr;
      const double v = std::strtod(text.c_str() + i, &end);
      if (end == text.c_str() + i) fail("expected a number");
      if (depth != 2) fail("number outside a row");
      current.push_back(v);
      i = end - text.c_str();
    }
  }
  if (depth != 0) fail("unbalanced brackets");
  if (rows.empty()) return Mat(0, 0);
  Mat m(rows.size(), rows[0].size());
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) fail("ragged rows");
    for (size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace dpclab
