#include "dernn/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

namespace dernn::io {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, double v) {
  const float f = static_cast<float>(v);
  if (!std::isfinite(f)) throw FormatError("value not representable as a finite 32-bit float");
  put_u32(out, std::bit_cast<std::uint32_t>(f));
}

std::uint32_t to_u32(Index v, const char* what) {
  if (v < 0 || v > static_cast<Index>(std::numeric_limits<std::uint32_t>::max())) {
    throw FormatError(std::string(what) + " does not fit in 32 bits");
  }
  return static_cast<std::uint32_t>(v);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) throw FormatError(std::string("truncated ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f32(const char* what) { return static_cast<double>(std::bit_cast<float>(u32(what))); }
  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_hsic(const Tensor& t) {
  Index h, w, c;
  if (t.rank() == 2) {
    h = t.dim(0), w = t.dim(1), c = 1;
  } else if (t.rank() == 3) {
    h = t.dim(0), w = t.dim(1), c = t.dim(2);
  } else {
    throw InvalidShape("HSIC stores rank-2 or rank-3 tensors, got " + shape_string(t.shape()));
  }
  std::string out = "HSIC";
  put_u32(out, kHsicVersion);
  put_u32(out, to_u32(h, "H"));
  put_u32(out, to_u32(w, "W"));
  put_u32(out, to_u32(c, "C"));
  out.reserve(out.size() + static_cast<std::size_t>(4 * t.size()));
  for (Index n = 0; n < c; ++n) {
    for (Index r = 0; r < h; ++r) {
      for (Index col = 0; col < w; ++col) put_f32(out, t[(r * w + col) * c + n]);
    }
  }
  return out;
}

Tensor decode_hsic(const std::string& bytes) {
  Reader rd(bytes);
  if (rd.raw(4, "HSIC magic") != "HSIC") throw FormatError("bad magic: not an HSIC file");
  const std::uint32_t version = rd.u32("HSIC header");
  if (version != kHsicVersion) throw FormatError("unsupported HSIC version " + std::to_string(version));
  const Index h = rd.u32("HSIC header"), w = rd.u32("HSIC header"), c = rd.u32("HSIC header");
  const std::size_t expected = static_cast<std::size_t>(4) * static_cast<std::size_t>(h * w * c);
  if (rd.remaining() != expected) {
    throw FormatError("HSIC payload length " + std::to_string(rd.remaining()) + " bytes, expected " +
                      std::to_string(expected));
  }
  Tensor t({h, w, c});
  for (Index n = 0; n < c; ++n) {
    for (Index r = 0; r < h; ++r) {
      for (Index col = 0; col < w; ++col) t[(r * w + col) * c + n] = rd.f32("HSIC payload");
    }
  }
  if (!t.all_finite()) throw FormatError("HSIC payload holds non-finite values");
  return t;
}

std::string encode_params(const ParamStore& store) {
  std::string out = "DPRM";
  put_u32(out, kDprmVersion);
  put_u32(out, to_u32(static_cast<Index>(store.count()), "parameter count"));
  for (const auto& [name, t] : store) {
    put_u32(out, to_u32(static_cast<Index>(name.size()), "name length"));
    out += name;
    put_u32(out, to_u32(t.rank(), "rank"));
    for (Index e : t.shape()) put_u32(out, to_u32(e, "extent"));
    for (Index i = 0; i < t.size(); ++i) put_f32(out, t[i]);
  }
  return out;
}

ParamStore decode_params(const std::string& bytes) {
  Reader rd(bytes);
  if (rd.raw(4, "DPRM magic") != "DPRM") throw FormatError("bad magic: not a DPRM file");
  const std::uint32_t version = rd.u32("DPRM header");
  if (version != kDprmVersion) throw FormatError("unsupported DPRM version " + std::to_string(version));
  const std::uint32_t count = rd.u32("DPRM header");
  ParamStore store;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint32_t len = rd.u32("DPRM entry");
    std::string name = rd.raw(len, "DPRM name");
    const std::uint32_t rank = rd.u32("DPRM entry");
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(rd.u32("DPRM extents"));
      numel *= static_cast<std::size_t>(shape.back());
    }
    rd.need(4 * numel, "DPRM payload");
    Tensor t(shape);
    for (Index i = 0; i < t.size(); ++i) t[i] = rd.f32("DPRM payload");
    if (store.contains(name)) throw FormatError("duplicate parameter name '" + name + "'");
    store.add(name, std::move(t));
  }
  if (rd.remaining() != 0) throw FormatError("trailing bytes after DPRM entries");
  return store;
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + tmp + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("failed writing '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FormatError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_hsic(const std::string& path, const Tensor& t) { write_file_atomic(path, encode_hsic(t)); }
Tensor read_hsic(const std::string& path) { return decode_hsic(read_file(path)); }

void write_params(const std::string& path, const ParamStore& store) { write_file_atomic(path, encode_params(store)); }
ParamStore read_params(const std::string& path) { return decode_params(read_file(path)); }

}  // namespace dernn::io
