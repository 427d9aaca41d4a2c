#include "atv/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace atv::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian");

namespace {

std::string read_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_binary(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot write");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(path.string() + ": write failed");
  }
  fs::rename(tmp, path);
}

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  const char* cursor(std::size_t n) {
    need(n);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError(source_ + ": truncated file");
  }
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

// Reads one whitespace-delimited token from a PFM header.
std::string header_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  return bytes.substr(start, pos - start);
}

}  // namespace

Tensor read_png(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError(path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError(path.string() + ": " + image.message);
  }
  const int H = static_cast<int>(image.height), W = static_cast<int>(image.width);
  Tensor out({3, H, W});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < 3; ++c) out.at(c, i, j) = buf[(i * W + j) * 3 + c] / 255.0;
  return out;
}

void write_png(const fs::path& path, const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3) {
    throw ShapeError("write_png: expected 3 x H x W, got " + shape_str(img.shape()));
  }
  const int H = img.dim(1), W = img.dim(2);
  std::vector<png_byte> buf(static_cast<std::size_t>(H) * W * 3);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(c, i, j), 0.0, 1.0);
        buf[(i * W + j) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
      }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = W;
  image.height = H;
  image.format = PNG_FORMAT_RGB;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw DataError(path.string() + ": " + image.message);
  }
}

Tensor read_pfm(const fs::path& path) {
  const std::string bytes = read_binary(path);
  std::size_t pos = 0;
  const std::string magic = header_token(bytes, pos);
  if (magic != "Pf") throw DataError(path.string() + ": not a single-channel PFM");
  int W = 0, H = 0;
  double scale = 0;
  try {
    W = std::stoi(header_token(bytes, pos));
    H = std::stoi(header_token(bytes, pos));
    scale = std::stod(header_token(bytes, pos));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PFM header");
  }
  if (W <= 0 || H <= 0) throw DataError(path.string() + ": bad PFM dimensions");
  if (scale >= 0) throw DataError(path.string() + ": big-endian PFM is not supported");
  ++pos;  // single whitespace after the scale
  const std::size_t n = static_cast<std::size_t>(W) * H;
  if (bytes.size() < pos + n * 4) throw DataError(path.string() + ": truncated PFM");
  Tensor out({H, W});
  for (int r = 0; r < H; ++r) {
    for (int j = 0; j < W; ++j) {
      float v;
      std::memcpy(&v, bytes.data() + pos + (static_cast<std::size_t>(r) * W + j) * 4, 4);
      out.at(H - 1 - r, j) = v;
    }
  }
  return out;
}

void write_pfm(const fs::path& path, const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("write_pfm: expected H x W, got " + shape_str(map.shape()));
  const int H = map.dim(0), W = map.dim(1);
  std::string out = "Pf\n" + std::to_string(W) + " " + std::to_string(H) + "\n-1.0\n";
  for (int r = H - 1; r >= 0; --r)
    for (int j = 0; j < W; ++j) put(out, static_cast<float>(map.at(r, j)));
  write_binary(path, out);
}

std::vector<ViewPair> parse_pairs(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  int count = 0;
  if (!(in >> count) || count < 0) throw DataError(source + ": missing view count");
  std::vector<ViewPair> pairs(count);
  for (int v = 0; v < count; ++v) {
    int n = 0;
    if (!(in >> pairs[v].ref >> n) || n < 0) {
      throw DataError(source + ": malformed entry for view " + std::to_string(v));
    }
    for (int k = 0; k < n; ++k) {
      int s;
      double score;
      if (!(in >> s >> score)) {
        throw DataError(source + ": truncated source list for view " + std::to_string(pairs[v].ref));
      }
      pairs[v].sources.push_back(s);
      pairs[v].scores.push_back(score);
    }
  }
  return pairs;
}

std::vector<ViewPair> read_pairs(const fs::path& path) {
  return parse_pairs(read_text(path), path.string());
}

void write_pairs(const fs::path& path, const std::vector<ViewPair>& pairs) {
  std::ostringstream out;
  out << pairs.size() << "\n";
  for (const ViewPair& p : pairs) {
    out << p.ref << "\n" << p.sources.size();
    for (std::size_t k = 0; k < p.sources.size(); ++k) {
      out << " " << p.sources[k] << " " << (k < p.scores.size() ? p.scores[k] : 1.0);
    }
    out << "\n";
  }
  write_text(path, out.str());
}

void write_archive(const fs::path& path, const NamedTensors& tensors) {
  std::string out = "ATVT";
  put<std::uint32_t>(out, 1);
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put<std::int64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  write_binary(path, out);
}

NamedTensors read_archive(const fs::path& path) {
  const std::string bytes = read_binary(path);
  Reader r(bytes, path.string());
  if (r.get_string(4) != "ATVT") throw DataError(path.string() + ": not a tensor archive");
  if (r.get<std::uint32_t>() != 1) throw DataError(path.string() + ": unsupported archive version");
  const auto count = r.get<std::uint64_t>();
  NamedTensors out;
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::string name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw DataError(path.string() + ": implausible rank for " + name);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::int64_t>();
      if (dim < 0 || dim > (1 << 30)) throw DataError(path.string() + ": bad dimension in " + name);
      shape.push_back(static_cast<int>(dim));
    }
    Tensor t(shape);
    std::memcpy(t.data(), r.cursor(t.size() * sizeof(double)), t.size() * sizeof(double));
    out.emplace_back(name, std::move(t));
  }
  if (!r.done()) throw DataError(path.string() + ": trailing bytes");
  return out;
}

std::string read_text(const fs::path& path) { return read_binary(path); }

void write_text(const fs::path& path, const std::string& text) { write_binary(path, text); }

std::string view_stem(int view) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08d", view);
  return buf;
}

}  // namespace atv::io
