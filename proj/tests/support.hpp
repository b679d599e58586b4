#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "loopscope/trace.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("loopscope-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Every regular file under dir, relative path -> contents.
inline std::vector<std::pair<std::string, std::string>> tree(const std::filesystem::path& dir) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) {
      out.emplace_back(std::filesystem::relative(e.path(), dir).string(), slurp(e.path()));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline loopscope::Passage real_passage(std::string id, std::vector<loopscope::TokenId> tokens,
                                       loopscope::Split split = loopscope::Split::train) {
  loopscope::Passage p;
  p.id = std::move(id);
  p.tokens = std::move(tokens);
  p.split = split;
  return p;
}

inline std::vector<std::string> random_words(std::mt19937_64& gen, std::size_t max_len,
                                             int alphabet, bool allow_empty = false) {
  std::uniform_int_distribution<std::size_t> len(allow_empty ? 0 : 1, max_len);
  std::uniform_int_distribution<int> letter(0, alphabet - 1);
  std::vector<std::string> out(len(gen));
  for (auto& w : out) w = "w" + std::to_string(letter(gen));
  return out;
}

}  // namespace testing
