#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

namespace loopscope {

/// Minimal CSV writer: comma separated, "\n" line endings, fields quoted only
/// when they contain a comma, quote or newline. Doubles use up to 17
/// significant digits so values round-trip.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);

  CsvWriter& field(std::string_view value);
  CsvWriter& field(double value);
  CsvWriter& field(long long value);
  CsvWriter& field(unsigned long long value);
  CsvWriter& field(int value) { return field(static_cast<long long>(value)); }
  CsvWriter& field(long value) { return field(static_cast<long long>(value)); }
  CsvWriter& field(unsigned long value) { return field(static_cast<unsigned long long>(value)); }
  void end_row();

  const std::string& str() const { return out_; }
  void save(const std::filesystem::path& path) const;

 private:
  void separator();

  std::string out_;
  std::size_t columns_;
  std::size_t in_row_ = 0;
};

std::string format_double(double value);

/// Writes text to path, creating parent directories. Throws IoError.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace loopscope
