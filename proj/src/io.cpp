#include "hyperinv/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "hyperinv/error.hpp"

namespace hyperinv {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("archive truncated in ") + what);
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t checksum(std::string_view bytes) {
  return fnv1a({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
}

}  // namespace

std::string archive_encode(const NamedTensors& tensors, ArchiveDType dtype) {
  std::string out = "HTA1";
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xFFFF) throw Error("archive: name too long: " + name);
    if (t.rank() > 0xFF) throw Error("archive: too many dimensions in " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) {
      if (d > 0xFFFFFFFFu) throw Error("archive: dimension too large in " + name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    if (dtype == ArchiveDType::F64) {
      out.append(reinterpret_cast<const char*>(t.ptr()), t.size() * sizeof(double));
    } else {
      for (double v : t.data()) put<float>(out, static_cast<float>(v));
    }
  }
  put<std::uint64_t>(out, checksum(out));
  return out;
}

NamedTensors archive_decode(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "HTA1") throw FormatError("bad magic");
  if (bytes.size() < 16) throw FormatError("archive truncated in header");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 8);
  if (stored != checksum(body)) throw FormatError("archive checksum mismatch");

  Reader r(body);
  r.take(4, "magic");
  const auto count = r.get<std::uint32_t>("record count");
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name(r.take(len, "name"));
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype > 1) throw FormatError("archive: unknown dtype " + std::to_string(dtype) + " for " + name);
    const auto ndim = r.get<std::uint8_t>("ndim");
    Shape shape(ndim);
    for (auto& d : shape) d = r.get<std::uint32_t>("dims");
    const std::size_t n = numel(shape);
    std::vector<double> data(n);
    if (dtype == 1) {
      const auto raw = r.take(n * sizeof(double), "payload");
      std::memcpy(data.data(), raw.data(), raw.size());
    } else {
      const auto raw = r.take(n * sizeof(float), "payload");
      for (std::size_t k = 0; k < n; ++k) {
        float f;
        std::memcpy(&f, raw.data() + k * sizeof(float), sizeof(float));
        data[k] = f;
      }
    }
    if (out.contains(name)) throw FormatError("archive: duplicate name " + name);
    out.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.pos() != body.size()) throw FormatError("archive: trailing bytes before checksum");
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void archive_write(const std::filesystem::path& path, const NamedTensors& tensors,
                   ArchiveDType dtype) {
  write_file_atomic(path, archive_encode(tensors, dtype));
}

NamedTensors archive_read(const std::filesystem::path& path) {
  return archive_decode(read_file(path));
}

// ---------------------------------------------------------------------------

namespace {

// Next header token of a PNM file, skipping whitespace and '#' comments.
std::string pnm_token(std::string_view bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw FormatError("ppm: truncated header");
  return std::string(bytes.substr(start, pos - start));
}

std::size_t pnm_number(std::string_view bytes, std::size_t& pos, const char* what) {
  const std::string tok = pnm_token(bytes, pos);
  std::size_t v = 0;
  for (char c : tok) {
    if (c < '0' || c > '9') throw FormatError(std::string("ppm: bad ") + what);
    v = v * 10 + static_cast<std::size_t>(c - '0');
  }
  return v;
}

}  // namespace

std::uint8_t quantize_pixel(double v) {
  const double u = std::round((v + 1.0) * 127.5);  // std::round is half away from zero
  if (!(u > 0.0)) return 0;
  if (u >= 255.0) return 255;
  return static_cast<std::uint8_t>(u);
}

Tensor image_decode_ppm(std::string_view bytes) {
  std::size_t pos = 0;
  if (pnm_token(bytes, pos) != "P6") throw FormatError("ppm: bad magic (expected P6)");
  const std::size_t w = pnm_number(bytes, pos, "width");
  const std::size_t h = pnm_number(bytes, pos, "height");
  const std::size_t maxval = pnm_number(bytes, pos, "maxval");
  if (maxval != 255) throw FormatError("ppm: maxval must be 255");
  if (w == 0 || h == 0) throw FormatError("ppm: empty image");
  ++pos;  // single whitespace byte after maxval
  if (pos > bytes.size() || bytes.size() - pos < w * h * 3) throw FormatError("ppm: truncated pixel data");
  Tensor img({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const auto v = static_cast<unsigned char>(bytes[pos + (y * w + x) * 3 + c]);
        img[(c * h + y) * w + x] = v / 127.5 - 1.0;
      }
  return img;
}

std::string image_encode_ppm(const Tensor& image) {
  const Shape& s = image.shape();
  const bool batched = s.size() == 4 && s[0] == 1;
  if (!(s.size() == 3 || batched) || s[s.size() - 3] != 3)
    throw ShapeError("image_write_ppm", Shape{3, 0, 0}, s);
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + w * h * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.push_back(static_cast<char>(quantize_pixel(image[(c * h + y) * w + x])));
  return out;
}

Tensor image_read_ppm(const std::filesystem::path& path) { return image_decode_ppm(read_file(path)); }

void image_write_ppm(const std::filesystem::path& path, const Tensor& image) {
  write_file_atomic(path, image_encode_ppm(image));
}

std::string heatmap_encode_pgm(const Tensor& map, double scale) {
  if (map.rank() != 2) throw ShapeError("heatmap_write_pgm", Shape{0, 0}, map.shape());
  const std::size_t h = map.dim(0), w = map.dim(1);
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (double v : map.data()) {
    const double u = std::round(std::clamp(v * scale, 0.0, 1.0) * 255.0);
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(u)));
  }
  return out;
}

void heatmap_write_pgm(const std::filesystem::path& path, const Tensor& map, double scale) {
  write_file_atomic(path, heatmap_encode_pgm(map, scale));
}

}  // namespace hyperinv
