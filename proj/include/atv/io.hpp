#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "atv/tensor.hpp"

namespace atv::io {

namespace fs = std::filesystem;

/// Missing or malformed input data. The CLI maps it to exit status 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit RGB (or gray, replicated) PNG -> 3 x H x W in [0, 1].
Tensor read_png(const fs::path& path);
/// Values are clamped to [0, 1] and rounded to 8 bits.
void write_png(const fs::path& path, const Tensor& image);

/// Single-channel little-endian PFM ("Pf", negative scale, rows stored
/// bottom to top). Values pass through float32.
Tensor read_pfm(const fs::path& path);
void write_pfm(const fs::path& path, const Tensor& map);

/// One reference view and its ordered source views.
struct ViewPair {
  int ref = 0;
  std::vector<int> sources;
  std::vector<double> scores;
};

/// pair.txt: view count, then per view a line with the reference index and
/// a line "n src0 score0 src1 score1 ...".
std::vector<ViewPair> parse_pairs(const std::string& text, const std::string& source);
std::vector<ViewPair> read_pairs(const fs::path& path);
void write_pairs(const fs::path& path, const std::vector<ViewPair>& pairs);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Named-tensor archive: magic "ATVT", u32 version, u64 count, then per
/// entry u32 name length, name bytes, u32 rank, i64 dims, float64 payload.
/// Everything little-endian.
void write_archive(const fs::path& path, const NamedTensors& tensors);
NamedTensors read_archive(const fs::path& path);

std::string read_text(const fs::path& path);
/// Writes through a temporary file and renames it into place.
void write_text(const fs::path& path, const std::string& text);

/// "%08d" file stem used by the dataset layout.
std::string view_stem(int view);

}  // namespace atv::io
