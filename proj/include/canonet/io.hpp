#pragma once

// Small text helpers shared by the exporters. Numbers are printed with
// "%.12g" so that CSV output is byte-stable for identical inputs.

#include "canonet/core.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace canonet {

std::string format_number(double v);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

/// Comma-separated fields of one line; no quoting support.
std::vector<std::string> split_csv_line(const std::string& line);

/// Strict number parse; throws ValidationError naming the field.
double parse_number(const std::string& text, const char* what);

}  // namespace canonet
