#include "patkit/tensor.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <memory>

namespace patkit {

namespace {

constexpr char kMagic[4] = {'P', 'A', 'T', 'T'};
constexpr uint8_t kVersion = 1;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_or_throw(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path);
  return f;
}

void put_u32le(std::FILE* f, uint32_t v) {
  uint8_t b[4] = {(uint8_t)(v & 0xff), (uint8_t)(v >> 8 & 0xff), (uint8_t)(v >> 16 & 0xff),
                  (uint8_t)(v >> 24 & 0xff)};
  if (std::fwrite(b, 1, 4, f) != 4) throw IoError("short write");
}

uint32_t get_u32le(std::FILE* f) {
  uint8_t b[4];
  if (std::fread(b, 1, 4, f) != 4) throw FormatError("truncated file");
  return (uint32_t)b[0] | (uint32_t)b[1] << 8 | (uint32_t)b[2] << 16 | (uint32_t)b[3] << 24;
}

template <typename T>
void write_impl(const std::string& path, const Tensor<T>& t) {
  if (!t.finite()) throw NumericError("refusing to write non-finite tensor");
  auto f = open_or_throw(path, "wb");
  if (std::fwrite(kMagic, 1, 4, f.get()) != 4) throw IoError("short write");
  uint8_t hdr[3] = {kVersion, (uint8_t)dtype_of<T>(), (uint8_t)t.ndim()};
  if (std::fwrite(hdr, 1, 3, f.get()) != 3) throw IoError("short write");
  for (int d : t.shape) {
    if ((int64_t)d > 0xFFFFFFFFll) throw SizeError("dim overflow");
    put_u32le(f.get(), (uint32_t)d);
  }
  // payload assumed little-endian host
  size_t n = t.size();
  if (std::fwrite(t.ptr(), sizeof(T), n, f.get()) != n) throw IoError("short write");
}

template <typename T>
Tensor<T> read_payload(std::FILE* f, std::vector<int> shape) {
  Tensor<T> t(std::move(shape));
  if (std::fread(t.ptr(), sizeof(T), t.size(), f) != t.size())
    throw FormatError("truncated payload");
  return t;
}

}  // namespace

void write_tensor(const std::string& path, const TensorF& t) { write_impl(path, t); }
void write_tensor(const std::string& path, const TensorD& t) { write_impl(path, t); }

AnyTensor read_tensor(const std::string& path) {
  auto f = open_or_throw(path, "rb");
  char magic[4];
  if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad magic in " + path);
  uint8_t hdr[3];
  if (std::fread(hdr, 1, 3, f.get()) != 3) throw FormatError("truncated header");
  if (hdr[0] != kVersion) throw FormatError("unsupported version");
  if (hdr[1] > 1) throw FormatError("unknown dtype");
  int ndim = hdr[2];
  if (ndim < 1 || ndim > 4) throw FormatError("bad rank");
  std::vector<int> shape(ndim);
  size_t n = 1;
  for (int i = 0; i < ndim; ++i) {
    uint32_t d = get_u32le(f.get());
    if (d == 0 || d > 0x7FFFFFFFu) throw SizeError("dim overflow");
    shape[i] = (int)d;
    if (n > (size_t)1 << 40) throw SizeError("tensor too large");
    n *= d;
  }
  AnyTensor out;
  out.dtype = (Dtype)hdr[1];
  if (out.dtype == Dtype::f32)
    out.f32 = read_payload<float>(f.get(), shape);
  else
    out.f64 = read_payload<double>(f.get(), shape);
  return out;
}

void write_pgm(const std::string& path, const TensorD& img, double lo, double hi) {
  if (img.ndim() != 2) throw DimensionError("pgm export needs a 2D tensor");
  if (lo == hi) {
    lo = img.data[0];
    hi = img.data[0];
    for (double v : img.data) {
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
    if (hi == lo) hi = lo + 1;
  }
  auto f = open_or_throw(path, "wb");
  std::fprintf(f.get(), "P5\n%d %d\n255\n", img.shape[1], img.shape[0]);
  std::vector<uint8_t> row(img.shape[1]);
  for (int r = 0; r < img.shape[0]; ++r) {
    for (int c = 0; c < img.shape[1]; ++c) {
      double v = (img.at(r, c) - lo) / (hi - lo) * 255.0;
      row[c] = (uint8_t)(v < 0 ? 0 : v > 255 ? 255 : v + 0.5);
    }
    if (std::fwrite(row.data(), 1, row.size(), f.get()) != row.size()) throw IoError("short write");
  }
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  auto f = open_or_throw(path, "wb");
  for (size_t i = 0; i < header.size(); ++i)
    std::fprintf(f.get(), "%s%s", header[i].c_str(), i + 1 < header.size() ? "," : "\n");
  for (const auto& r : rows) {
    for (size_t i = 0; i < r.size(); ++i)
      std::fprintf(f.get(), "%s%s", format_g17(r[i]).c_str(), i + 1 < r.size() ? "," : "\n");
  }
}

}  // namespace patkit
