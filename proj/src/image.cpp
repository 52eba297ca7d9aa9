#include "eqpose/image.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

namespace eqpose {

namespace {

// Reads one whitespace-delimited token, skipping `#` comments (legal in PNM
// headers between tokens).
std::string next_token(std::FILE* f, const std::string& path) {
  std::string tok;
  int c;
  while ((c = std::fgetc(f)) != EOF) {
    if (c == '#') {
      while ((c = std::fgetc(f)) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back((char)c);
  }
  if (tok.empty()) throw IoError(path + ": truncated header");
  return tok;
}

long parse_dim(const std::string& tok, const std::string& path, const char* what) {
  char* end = nullptr;
  long v = std::strtol(tok.c_str(), &end, 10);
  if (end == tok.c_str() || *end != '\0' || v <= 0)
    throw IoError(path + ": bad " + what + " '" + tok + "'");
  return v;
}

}  // namespace

Image read_pnm(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError(path + ": cannot open for reading");
  struct Closer {
    std::FILE* f;
    ~Closer() { std::fclose(f); }
  } closer{f};

  std::string magic = next_token(f, path);
  int channels;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw IoError(path + ": unsupported magic '" + magic + "' (want P5 or P6)");
  long w = parse_dim(next_token(f, path), path, "width");
  long h = parse_dim(next_token(f, path), path, "height");
  long maxval = parse_dim(next_token(f, path), path, "maxval");
  if (maxval != 255) throw IoError(path + ": maxval must be 255, got " + std::to_string(maxval));

  Image img((int)w, (int)h, channels);
  size_t count = (size_t)w * h * channels;
  std::vector<unsigned char> raw(count);
  if (std::fread(raw.data(), 1, count, f) != count)
    throw IoError(path + ": truncated pixel data");
  for (size_t i = 0; i < count; ++i) img.pix[i] = raw[i] / 255.0;
  return img;
}

std::vector<unsigned char> quantize_bytes(const Image& img) {
  std::vector<unsigned char> out(img.pix.size());
  for (size_t i = 0; i < img.pix.size(); ++i) {
    double v = img.pix[i];
    if (!(v >= 0.0)) v = 0.0;  // also catches NaN
    if (v > 1.0) v = 1.0;
    out[i] = (unsigned char)std::lround(v * 255.0);
  }
  return out;
}

void write_pnm(const Image& img, const std::string& path) {
  contract(img.width >= 1 && img.height >= 1 && (img.channels == 1 || img.channels == 3),
           "write_pnm: bad image geometry");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError(path + ": cannot open for writing");
  struct Closer {
    std::FILE* f;
    ~Closer() { std::fclose(f); }
  } closer{f};

  std::fprintf(f, "%s\n%d %d\n255\n", img.channels == 1 ? "P5" : "P6", img.width, img.height);
  std::vector<unsigned char> raw = quantize_bytes(img);
  if (std::fwrite(raw.data(), 1, raw.size(), f) != raw.size())
    throw IoError(path + ": short write");
}

}  // namespace eqpose
