#include "medvt/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace medvt::io {

namespace {

void put_u32le(std::ostream& os, uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

uint32_t get_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw std::runtime_error("mvt1: " + path + ": " + why);
}

}  // namespace

void write_mvt1(const std::string& path, const Tensor& t) {
  check(t.defined(), "write_mvt1: undefined tensor");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("mvt1: cannot open " + path + " for writing");
  os.write("MVT1", 4);
  const uint8_t code = t.dtype() == Dtype::f32 ? 0 : 1;
  os.put(static_cast<char>(code));
  os.put(static_cast<char>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) put_u32le(os, static_cast<uint32_t>(t.dim(i)));
  // Row-major payload, little-endian. Host is little-endian; written via
  // explicit per-element encode to stay portable.
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* p = t.data<T>();
    for (int64_t i = 0; i < t.numel(); ++i) {
      uint64_t bits = 0;
      std::memcpy(&bits, &p[i], sizeof(T));
      for (size_t b = 0; b < sizeof(T); ++b) os.put(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  });
  if (!os) throw std::runtime_error("mvt1: short write to " + path);
}

Tensor read_mvt1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MVT1", 4) != 0) fail(path, "bad magic");
  const int code = is.get();
  const int rank = is.get();
  if (code != 0 && code != 1) fail(path, "unknown dtype code " + std::to_string(code));
  if (rank < 1 || rank > 8) fail(path, "unsupported rank " + std::to_string(rank));
  Shape shape(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i) shape[static_cast<size_t>(i)] = static_cast<int64_t>(get_u32le(is));
  if (!is) fail(path, "truncated header");
  const Dtype dt = code == 0 ? Dtype::f32 : Dtype::f64;
  Tensor t(shape, dt);
  dispatch(dt, [&](auto tag) {
    using T = decltype(tag);
    T* p = t.data<T>();
    for (int64_t i = 0; i < t.numel(); ++i) {
      uint64_t bits = 0;
      for (size_t b = 0; b < sizeof(T); ++b) {
        const int c = is.get();
        if (c == EOF) fail(path, "truncated payload");
        bits |= static_cast<uint64_t>(c & 0xff) << (8 * b);
      }
      std::memcpy(&p[i], &bits, sizeof(T));
    }
  });
  return t;
}

void write_pgm(const std::string& path, const std::vector<uint8_t>& pixels, int64_t h, int64_t w) {
  check(static_cast<int64_t>(pixels.size()) == h * w, "write_pgm: pixel count mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("pgm: cannot open " + path + " for writing");
  os << "P5\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

std::vector<uint8_t> read_pgm(const std::string& path, int64_t* h, int64_t* w) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("pgm: cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5") throw std::runtime_error("pgm: " + path + ": expected P5");
  // Skip whitespace/comments.
  auto next_int = [&]() -> int64_t {
    for (;;) {
      int c = is.peek();
      if (c == '#') {
        std::string line;
        std::getline(is, line);
      } else if (std::isspace(c)) {
        is.get();
      } else {
        break;
      }
    }
    int64_t v;
    is >> v;
    return v;
  };
  const int64_t ww = next_int();
  const int64_t hh = next_int();
  const int64_t maxval = next_int();
  if (maxval != 255) throw std::runtime_error("pgm: " + path + ": only maxval 255 supported");
  is.get();  // single whitespace after header
  std::vector<uint8_t> pixels(static_cast<size_t>(ww * hh));
  is.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!is) throw std::runtime_error("pgm: " + path + ": truncated payload");
  if (h) *h = hh;
  if (w) *w = ww;
  return pixels;
}

void write_mask_pgm(const std::string& path, const Tensor& mask_hw) {
  check(mask_hw.rank() == 2, "write_mask_pgm: mask must be [H,W]");
  const int64_t h = mask_hw.dim(0), w = mask_hw.dim(1);
  std::vector<uint8_t> px(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < h * w; ++i) {
    const double v = mask_hw.get(i);
    check(v >= 0 && v <= 255, "write_mask_pgm: class index out of [0,255]");
    px[static_cast<size_t>(i)] = static_cast<uint8_t>(v);
  }
  write_pgm(path, px, h, w);
}

Tensor read_mask_pgm(const std::string& path) {
  int64_t h = 0, w = 0;
  const std::vector<uint8_t> px = read_pgm(path, &h, &w);
  Tensor t({h, w}, Dtype::f64);
  for (int64_t i = 0; i < h * w; ++i) t.set(i, static_cast<double>(px[static_cast<size_t>(i)]));
  return t;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << contents;
}

}  // namespace medvt::io
