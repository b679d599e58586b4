#include "loopscope/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "loopscope/error.hpp"

namespace loopscope {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error("format_double: conversion failed");
  return std::string(buf, end);
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
  for (const auto& name : header) field(name);
  end_row();
}

void CsvWriter::separator() {
  if (in_row_ > 0) out_ += ',';
  ++in_row_;
}

CsvWriter& CsvWriter::field(std::string_view value) {
  separator();
  if (value.find_first_of(",\"\n\r") == std::string_view::npos) {
    out_ += value;
    return *this;
  }
  out_ += '"';
  for (char c : value) {
    if (c == '"') out_ += '"';
    out_ += c;
  }
  out_ += '"';
  return *this;
}

CsvWriter& CsvWriter::field(double value) { return field(std::string_view(format_double(value))); }

CsvWriter& CsvWriter::field(long long value) {
  return field(std::string_view(std::to_string(value)));
}

CsvWriter& CsvWriter::field(unsigned long long value) {
  return field(std::string_view(std::to_string(value)));
}

void CsvWriter::end_row() {
  if (in_row_ != columns_) {
    throw Error("csv row has " + std::to_string(in_row_) + " fields, expected " +
                std::to_string(columns_));
  }
  out_ += '\n';
  in_row_ = 0;
}

void CsvWriter::save(const std::filesystem::path& path) const { write_text_file(path, out_); }

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace loopscope
