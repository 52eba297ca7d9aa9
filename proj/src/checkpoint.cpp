#include "eqpose/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "eqpose/error.hpp"

namespace eqpose {

namespace {

constexpr char kMagic[5] = {'E', 'P', 'N', 'T', '1'};

// All integers are little-endian u32; floats are little-endian IEEE f64.
void put_u32(std::string& out, uint32_t v) {
  char b[4];
  b[0] = (char)(v & 0xff);
  b[1] = (char)((v >> 8) & 0xff);
  b[2] = (char)((v >> 16) & 0xff);
  b[3] = (char)((v >> 24) & 0xff);
  out.append(b, 4);
}

void put_f64(std::string& out, double v) {
  uint64_t u;
  static_assert(sizeof(u) == sizeof(v));
  std::memcpy(&u, &v, 8);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (char)((u >> (8 * i)) & 0xff);
  out.append(b, 8);
}

struct Reader {
  std::string buf;
  size_t pos = 0;
  std::string path;

  void need(size_t n, const char* what) {
    if (pos + n > buf.size())
      throw IoError(path + ": truncated checkpoint while reading " + what);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    const unsigned char* p = (const unsigned char*)buf.data() + pos;
    pos += 4;
    return (uint32_t)p[0] | ((uint32_t)p[1] << 8) | ((uint32_t)p[2] << 16) |
           ((uint32_t)p[3] << 24);
  }
  double f64(const char* what) {
    need(8, what);
    const unsigned char* p = (const unsigned char*)buf.data() + pos;
    pos += 8;
    uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= (uint64_t)p[i] << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void write_entries(const std::string& path, const std::vector<CheckpointEntry>& entries) {
  std::string out;
  out.append(kMagic, 5);
  put_u32(out, (uint32_t)entries.size());
  for (const auto& e : entries) {
    put_u32(out, (uint32_t)e.name.size());
    out.append(e.name);
    put_u32(out, (uint32_t)e.dims.size());
    long long numel = 1;
    for (int d : e.dims) {
      contract(d > 0, "checkpoint entry '" + e.name + "' has non-positive dim");
      put_u32(out, (uint32_t)d);
      numel *= d;
    }
    contract((long long)e.data.size() == numel,
             "checkpoint entry '" + e.name + "' payload does not match dims");
    for (double v : e.data) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path + ": cannot open for writing");
  f.write(out.data(), (std::streamsize)out.size());
  if (!f) throw IoError(path + ": write failed");
}

std::vector<CheckpointEntry> read_entries(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path + ": cannot open");
  Reader r;
  r.path = path;
  r.buf.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  std::string magic = r.str(5, "magic");
  if (std::memcmp(magic.data(), kMagic, 5) != 0)
    throw IoError(path + ": bad magic, not a checkpoint file");
  uint32_t count = r.u32("entry count");
  std::vector<CheckpointEntry> es;
  es.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    uint32_t name_len = r.u32("name length");
    e.name = r.str(name_len, "name");
    uint32_t rank = r.u32("rank");
    if (rank > 8) throw IoError(path + ": entry '" + e.name + "' has absurd rank");
    long long numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      uint32_t ext = r.u32("dim");
      if (ext == 0) throw IoError(path + ": entry '" + e.name + "' has zero dim");
      e.dims.push_back((int)ext);
      numel *= ext;
    }
    e.data.reserve((size_t)numel);
    for (long long k = 0; k < numel; ++k) e.data.push_back(r.f64("payload"));
    es.push_back(std::move(e));
  }
  if (r.pos != r.buf.size())
    throw IoError(path + ": trailing bytes after last checkpoint entry");
  return es;
}

}  // namespace eqpose
