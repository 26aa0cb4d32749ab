// Constrained GeoTIFF profile: classic (32-bit offset) TIFF, a single IFD,
// uncompressed or DEFLATE, strips or tiles, chunky or planar, u8/u16/f32
// samples, georeferenced with ModelPixelScale + ModelTiepoint.

#include "cropcube/raster_io.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>

namespace cropcube {
namespace {

enum Tag : std::uint16_t {
  kImageWidth = 256,
  kImageLength = 257,
  kBitsPerSample = 258,
  kCompression = 259,
  kPhotometric = 262,
  kImageDescription = 270,
  kStripOffsets = 273,
  kSamplesPerPixel = 277,
  kRowsPerStrip = 278,
  kStripByteCounts = 279,
  kPlanarConfig = 284,
  kPredictor = 317,
  kTileWidth = 322,
  kTileLength = 323,
  kTileOffsets = 324,
  kTileByteCounts = 325,
  kSampleFormat = 339,
  kModelPixelScale = 33550,
  kModelTiepoint = 33922,
  kModelTransformation = 34264,
  kGeoKeyDirectory = 34735,
  kGdalNodata = 42113,
};

constexpr std::uint16_t kCompressionDeflateLegacy = 32946;

std::size_t type_size(std::uint16_t type) {
  switch (type) {
    case 1: case 2: case 6: case 7: return 1;
    case 3: case 8: return 2;
    case 4: case 9: case 11: return 4;
    case 5: case 10: case 12: return 8;
    default: return 0;
  }
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, bool little) : bytes_(bytes), little_(little) {}

  void need(std::uint64_t offset, std::uint64_t len) const {
    if (offset + len > bytes_.size() || offset + len < offset)
      fail(ErrorCode::CorruptFile, "TIFF reference beyond end of file");
  }

  std::uint64_t uint(std::uint64_t offset, std::size_t len) const {
    need(offset, len);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < len; ++i) {
      const std::uint64_t b = bytes_[offset + i];
      v |= little_ ? b << (8 * i) : b << (8 * (len - 1 - i));
    }
    return v;
  }

  std::uint16_t u16(std::uint64_t off) const { return static_cast<std::uint16_t>(uint(off, 2)); }
  std::uint32_t u32(std::uint64_t off) const { return static_cast<std::uint32_t>(uint(off, 4)); }

  double f64(std::uint64_t off) const { return std::bit_cast<double>(uint(off, 8)); }
  float f32(std::uint64_t off) const { return std::bit_cast<float>(static_cast<std::uint32_t>(uint(off, 4))); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  bool little_;
};

struct Entry {
  std::uint16_t type = 0;
  std::uint32_t count = 0;
  std::uint64_t value_offset = 0;  // where the values live
};

std::vector<double> numbers(const Reader& r, const Entry& e) {
  const std::size_t sz = type_size(e.type);
  if (sz == 0 || e.type == 2) fail(ErrorCode::UnsupportedProfile, "non-numeric TIFF tag type");
  r.need(e.value_offset, static_cast<std::uint64_t>(sz) * e.count);
  std::vector<double> out;
  out.reserve(e.count);
  for (std::uint32_t i = 0; i < e.count; ++i) {
    const std::uint64_t off = e.value_offset + i * sz;
    switch (e.type) {
      case 1: case 7: out.push_back(static_cast<double>(r.uint(off, 1))); break;
      case 3: out.push_back(r.u16(off)); break;
      case 4: out.push_back(r.u32(off)); break;
      case 6: out.push_back(static_cast<std::int8_t>(r.uint(off, 1))); break;
      case 8: out.push_back(static_cast<std::int16_t>(r.u16(off))); break;
      case 9: out.push_back(static_cast<std::int32_t>(r.u32(off))); break;
      case 11: out.push_back(r.f32(off)); break;
      case 12: out.push_back(r.f64(off)); break;
      case 5: out.push_back(static_cast<double>(r.u32(off)) / r.u32(off + 4)); break;
      case 10:
        out.push_back(static_cast<double>(static_cast<std::int32_t>(r.u32(off))) /
                      static_cast<std::int32_t>(r.u32(off + 4)));
        break;
    }
  }
  return out;
}

std::string ascii(const Reader& r, const Entry& e) {
  if (e.type != 2) fail(ErrorCode::UnsupportedProfile, "expected ASCII TIFF tag");
  r.need(e.value_offset, e.count);
  std::string s(reinterpret_cast<const char*>(r.bytes().data() + e.value_offset), e.count);
  while (!s.empty() && s.back() == '\0') s.pop_back();
  return s;
}

std::vector<std::uint8_t> inflate_chunk(const std::uint8_t* src, std::size_t n, std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  uLongf out_len = static_cast<uLongf>(expected);
  const int rc = ::uncompress(out.data(), &out_len, src, static_cast<uLong>(n));
  if (rc != Z_OK || out_len != expected)
    fail(ErrorCode::CorruptFile, "DEFLATE chunk does not inflate to the expected size");
  return out;
}

}  // namespace

GeoTiffImage decode_geotiff(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) fail(ErrorCode::CorruptFile, "file too short for a TIFF header");
  bool little = false;
  if (bytes[0] == 'I' && bytes[1] == 'I') little = true;
  else if (bytes[0] == 'M' && bytes[1] == 'M') little = false;
  else fail(ErrorCode::CorruptFile, "missing TIFF byte-order mark");
  const Reader r(bytes, little);
  const std::uint16_t magic = r.u16(2);
  if (magic == 43) fail(ErrorCode::UnsupportedProfile, "BigTIFF is outside the profile");
  if (magic != 42) fail(ErrorCode::CorruptFile, "bad TIFF magic number");

  const std::uint32_t ifd = r.u32(4);
  const std::uint16_t n_entries = r.u16(ifd);
  std::map<std::uint16_t, Entry> tags;
  for (std::uint16_t i = 0; i < n_entries; ++i) {
    const std::uint64_t at = ifd + 2u + 12u * i;
    Entry e;
    const std::uint16_t tag = r.u16(at);
    e.type = r.u16(at + 2);
    e.count = r.u32(at + 4);
    const std::size_t sz = type_size(e.type);
    if (sz == 0) continue;  // unknown types are skipped, not fatal
    e.value_offset = (sz * e.count <= 4) ? at + 8 : r.u32(at + 8);
    tags[tag] = e;
  }
  if (r.u32(ifd + 2u + 12u * n_entries) != 0)
    fail(ErrorCode::UnsupportedProfile, "multiple IFDs are outside the profile");

  auto scalar = [&](std::uint16_t tag, std::optional<double> fallback) -> double {
    auto it = tags.find(tag);
    if (it == tags.end()) {
      if (!fallback) fail(ErrorCode::CorruptFile, "required TIFF tag " + std::to_string(tag) + " missing");
      return *fallback;
    }
    auto v = numbers(r, it->second);
    if (v.empty()) fail(ErrorCode::CorruptFile, "empty TIFF tag " + std::to_string(tag));
    return v.front();
  };

  const auto width = static_cast<Index>(scalar(kImageWidth, std::nullopt));
  const auto height = static_cast<Index>(scalar(kImageLength, std::nullopt));
  const auto spp = static_cast<Index>(scalar(kSamplesPerPixel, 1.0));
  if (width < 1 || height < 1 || spp < 1) fail(ErrorCode::CorruptFile, "zero-sized image");

  const auto compression = static_cast<std::uint16_t>(scalar(kCompression, 1.0));
  if (compression != 1 && compression != 8 && compression != kCompressionDeflateLegacy)
    fail(ErrorCode::UnsupportedProfile, "compression " + std::to_string(compression) + " is outside the profile");
  if (scalar(kPredictor, 1.0) != 1.0) fail(ErrorCode::UnsupportedProfile, "predictors are outside the profile");
  const auto planar_config = static_cast<int>(scalar(kPlanarConfig, 1.0));
  if (planar_config != 1 && planar_config != 2) fail(ErrorCode::CorruptFile, "bad PlanarConfiguration");
  if (tags.count(kModelTransformation))
    fail(ErrorCode::UnsupportedProfile, "ModelTransformation georeferencing is outside the profile");

  std::vector<double> bits = tags.count(kBitsPerSample) ? numbers(r, tags[kBitsPerSample]) : std::vector<double>{1.0};
  std::vector<double> formats = tags.count(kSampleFormat) ? numbers(r, tags[kSampleFormat]) : std::vector<double>{1.0};
  for (double b : bits)
    if (b != bits.front()) fail(ErrorCode::UnsupportedProfile, "mixed bit depths are outside the profile");
  for (double f : formats)
    if (f != formats.front()) fail(ErrorCode::UnsupportedProfile, "mixed sample formats are outside the profile");
  const int bps = static_cast<int>(bits.front());
  const int fmt = static_cast<int>(formats.front());
  TiffSampleType sample_type{};
  if (bps == 8 && fmt == 1) sample_type = TiffSampleType::U8;
  else if (bps == 16 && fmt == 1) sample_type = TiffSampleType::U16;
  else if (bps == 32 && fmt == 3) sample_type = TiffSampleType::F32;
  else fail(ErrorCode::UnsupportedProfile, "sample type (bits " + std::to_string(bps) + ", format " +
                                               std::to_string(fmt) + ") is outside the profile");
  const std::size_t sample_bytes = static_cast<std::size_t>(bps / 8);

  const bool tiled = tags.count(kTileOffsets) > 0;
  Index chunk_w = width, chunk_h = 0;
  std::vector<double> offsets, counts;
  if (tiled) {
    chunk_w = static_cast<Index>(scalar(kTileWidth, std::nullopt));
    chunk_h = static_cast<Index>(scalar(kTileLength, std::nullopt));
    offsets = numbers(r, tags[kTileOffsets]);
    if (!tags.count(kTileByteCounts)) fail(ErrorCode::CorruptFile, "TileByteCounts missing");
    counts = numbers(r, tags[kTileByteCounts]);
  } else {
    if (!tags.count(kStripOffsets)) fail(ErrorCode::UnsupportedProfile, "image has neither strips nor tiles");
    chunk_h = std::min<Index>(static_cast<Index>(scalar(kRowsPerStrip, static_cast<double>(height))), height);
    offsets = numbers(r, tags[kStripOffsets]);
    if (!tags.count(kStripByteCounts)) fail(ErrorCode::CorruptFile, "StripByteCounts missing");
    counts = numbers(r, tags[kStripByteCounts]);
  }
  if (chunk_w < 1 || chunk_h < 1) fail(ErrorCode::CorruptFile, "zero chunk dimensions");

  const Index across = (width + chunk_w - 1) / chunk_w;
  const Index down = (height + chunk_h - 1) / chunk_h;
  const Index planes = planar_config == 2 ? spp : 1;
  const Index spp_chunk = planar_config == 2 ? 1 : spp;
  if (static_cast<Index>(offsets.size()) != across * down * planes || counts.size() != offsets.size())
    fail(ErrorCode::CorruptFile, "chunk table length does not match the image layout");

  GeoTiffImage img;
  img.pixels = Tensor3f::Zero({spp, height, width});
  for (Index plane = 0; plane < planes; ++plane) {
    for (Index ty = 0; ty < down; ++ty) {
      for (Index tx = 0; tx < across; ++tx) {
        const auto k = static_cast<std::size_t>(plane * across * down + ty * across + tx);
        const Index rows = tiled ? chunk_h : std::min(chunk_h, height - ty * chunk_h);
        const std::size_t expected = static_cast<std::size_t>(rows * chunk_w * spp_chunk) * sample_bytes;
        const auto off = static_cast<std::uint64_t>(offsets[k]);
        const auto len = static_cast<std::uint64_t>(counts[k]);
        r.need(off, len);
        std::vector<std::uint8_t> buf;
        if (compression == 1) {
          if (len < expected) fail(ErrorCode::CorruptFile, "uncompressed chunk is short");
          buf.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                     bytes.begin() + static_cast<std::ptrdiff_t>(off + expected));
        } else {
          buf = inflate_chunk(bytes.data() + off, static_cast<std::size_t>(len), expected);
        }
        const Reader cr(buf, little);
        for (Index rr = 0; rr < rows; ++rr) {
          const Index row = ty * chunk_h + rr;
          if (row >= height) break;
          for (Index cc = 0; cc < chunk_w; ++cc) {
            const Index col = tx * chunk_w + cc;
            if (col >= width) break;
            for (Index s = 0; s < spp_chunk; ++s) {
              const Index band = planar_config == 2 ? plane : s;
              const std::uint64_t at = static_cast<std::uint64_t>((rr * chunk_w + cc) * spp_chunk + s) * sample_bytes;
              float v = 0.0f;
              switch (sample_type) {
                case TiffSampleType::U8: v = static_cast<float>(buf[at]); break;
                case TiffSampleType::U16: v = static_cast<float>(cr.u16(at)); break;
                case TiffSampleType::F32: v = cr.f32(at); break;
              }
              img.pixels(band, row, col) = v;
            }
          }
        }
      }
    }
  }

  if (!tags.count(kModelPixelScale) || !tags.count(kModelTiepoint))
    fail(ErrorCode::UnsupportedProfile, "ModelPixelScale + ModelTiepoint georeferencing required");
  const auto scale = numbers(r, tags[kModelPixelScale]);
  const auto tie = numbers(r, tags[kModelTiepoint]);
  if (scale.size() < 2 || tie.size() != 6)
    fail(ErrorCode::UnsupportedProfile, "only a single tiepoint with a pixel scale is supported");
  img.geotransform.pixel_size_x = scale[0];
  img.geotransform.pixel_size_y = -scale[1];
  img.geotransform.origin_x = tie[3] - tie[0] * scale[0];
  img.geotransform.origin_y = tie[4] + tie[1] * scale[1];
  validate_geotransform(img.geotransform);

  if (auto it = tags.find(kGdalNodata); it != tags.end()) {
    const std::string text = ascii(r, it->second);
    try {
      std::size_t used = 0;
      const float v = std::stof(text, &used);
      img.nodata_value = v;
    } catch (const std::exception&) {
      fail(ErrorCode::CorruptFile, "unparseable GDAL_NODATA value '" + text + "'");
    }
  }
  if (auto it = tags.find(kImageDescription); it != tags.end()) {
    const auto doc = nlohmann::json::parse(ascii(r, it->second), nullptr, false);
    if (doc.is_object() && doc.contains("bands") && doc["bands"].is_array()) {
      std::vector<std::string> names;
      for (const auto& b : doc["bands"])
        if (b.is_string()) names.push_back(b.get<std::string>());
      if (static_cast<Index>(names.size()) == spp) img.band_names = std::move(names);
    }
  }
  return img;
}

namespace {

class Writer {
 public:
  std::vector<std::uint8_t> bytes;

  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void put_u32(std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  void align() {
    if (bytes.size() % 2) bytes.push_back(0);
  }
  std::uint32_t pos() const {
    if (bytes.size() > std::numeric_limits<std::uint32_t>::max())
      fail(ErrorCode::UnsupportedProfile, "image exceeds the classic TIFF 4 GiB limit");
    return static_cast<std::uint32_t>(bytes.size());
  }
};

struct OutEntry {
  std::uint16_t tag;
  std::uint16_t type;
  std::uint32_t count;
  std::vector<std::uint8_t> data;  // encoded little-endian values
};

OutEntry shorts(std::uint16_t tag, const std::vector<std::uint16_t>& v) {
  Writer w;
  for (auto x : v) w.u16(x);
  return {tag, 3, static_cast<std::uint32_t>(v.size()), std::move(w.bytes)};
}
OutEntry longs(std::uint16_t tag, const std::vector<std::uint32_t>& v) {
  Writer w;
  for (auto x : v) w.u32(x);
  return {tag, 4, static_cast<std::uint32_t>(v.size()), std::move(w.bytes)};
}
OutEntry doubles(std::uint16_t tag, const std::vector<double>& v) {
  Writer w;
  for (auto x : v) w.u64(std::bit_cast<std::uint64_t>(x));
  return {tag, 12, static_cast<std::uint32_t>(v.size()), std::move(w.bytes)};
}
OutEntry text(std::uint16_t tag, const std::string& s) {
  std::vector<std::uint8_t> d(s.begin(), s.end());
  d.push_back(0);
  return {tag, 2, static_cast<std::uint32_t>(d.size()), std::move(d)};
}

}  // namespace

std::vector<std::uint8_t> encode_geotiff(const Scene& scene, const GeoTiffWriteOptions& opt) {
  check_scene_invariants(scene);
  const Index c = scene.channels(), h = scene.height(), w = scene.width();
  const std::size_t sample_bytes = opt.sample_type == TiffSampleType::U8 ? 1 : opt.sample_type == TiffSampleType::U16 ? 2 : 4;
  const Index chunk_w = opt.tile_size ? *opt.tile_size : w;
  const Index chunk_h = opt.tile_size ? *opt.tile_size : std::clamp<Index>(opt.rows_per_strip, 1, h);
  if (opt.tile_size && (*opt.tile_size < 16 || *opt.tile_size % 16 != 0))
    fail(ErrorCode::UnsupportedProfile, "tile size must be a positive multiple of 16");
  const Index across = (w + chunk_w - 1) / chunk_w;
  const Index down = (h + chunk_h - 1) / chunk_h;
  const Index planes = opt.planar ? c : 1;
  const Index spp_chunk = opt.planar ? 1 : c;

  auto encode_sample = [&](Writer& out, float v) {
    if (std::isnan(v)) v = scene.nodata_value.value_or(0.0f);
    switch (opt.sample_type) {
      case TiffSampleType::U8: out.u8(static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L))); break;
      case TiffSampleType::U16: out.u16(static_cast<std::uint16_t>(std::clamp(std::lround(v), 0L, 65535L))); break;
      case TiffSampleType::F32: out.u32(std::bit_cast<std::uint32_t>(v)); break;
    }
  };

  Writer file;
  file.u8('I');
  file.u8('I');
  file.u16(42);
  file.u32(0);  // IFD offset, patched below

  std::vector<std::uint32_t> offsets, counts;
  for (Index plane = 0; plane < planes; ++plane) {
    for (Index ty = 0; ty < down; ++ty) {
      for (Index tx = 0; tx < across; ++tx) {
        const Index rows = opt.tile_size ? chunk_h : std::min(chunk_h, h - ty * chunk_h);
        Writer chunk;
        chunk.bytes.reserve(static_cast<std::size_t>(rows * chunk_w * spp_chunk) * sample_bytes);
        for (Index rr = 0; rr < rows; ++rr) {
          for (Index cc = 0; cc < chunk_w; ++cc) {
            for (Index s = 0; s < spp_chunk; ++s) {
              const Index row = ty * chunk_h + rr, col = tx * chunk_w + cc;
              const Index band = opt.planar ? plane : s;
              encode_sample(chunk, (row < h && col < w) ? scene.pixels(band, row, col) : 0.0f);
            }
          }
        }
        std::vector<std::uint8_t> payload = std::move(chunk.bytes);
        if (opt.compression == TiffCompression::Deflate) {
          uLongf bound = ::compressBound(static_cast<uLong>(payload.size()));
          std::vector<std::uint8_t> packed(bound);
          if (::compress2(packed.data(), &bound, payload.data(), static_cast<uLong>(payload.size()), 6) != Z_OK)
            fail(ErrorCode::IoError, "DEFLATE compression failed");
          packed.resize(bound);
          payload = std::move(packed);
        }
        file.align();
        offsets.push_back(file.pos());
        counts.push_back(static_cast<std::uint32_t>(payload.size()));
        file.bytes.insert(file.bytes.end(), payload.begin(), payload.end());
      }
    }
  }

  const auto n16 = [](Index v) { return static_cast<std::uint16_t>(v); };
  const auto n32 = [](Index v) { return static_cast<std::uint32_t>(v); };
  const std::uint16_t bits = static_cast<std::uint16_t>(sample_bytes * 8);
  const std::uint16_t fmt = opt.sample_type == TiffSampleType::F32 ? 3 : 1;
  std::vector<OutEntry> entries;
  entries.push_back(longs(kImageWidth, {n32(w)}));
  entries.push_back(longs(kImageLength, {n32(h)}));
  entries.push_back(shorts(kBitsPerSample, std::vector<std::uint16_t>(static_cast<std::size_t>(c), bits)));
  entries.push_back(shorts(kCompression, {static_cast<std::uint16_t>(opt.compression)}));
  entries.push_back(shorts(kPhotometric, {1}));
  entries.push_back(text(kImageDescription, nlohmann::json{{"bands", scene.bands}}.dump()));
  if (!opt.tile_size) entries.push_back(longs(kStripOffsets, offsets));
  entries.push_back(shorts(kSamplesPerPixel, {n16(c)}));
  if (!opt.tile_size) {
    entries.push_back(longs(kRowsPerStrip, {n32(chunk_h)}));
    entries.push_back(longs(kStripByteCounts, counts));
  }
  entries.push_back(shorts(kPlanarConfig, {static_cast<std::uint16_t>(opt.planar ? 2 : 1)}));
  if (opt.tile_size) {
    entries.push_back(longs(kTileWidth, {n32(chunk_w)}));
    entries.push_back(longs(kTileLength, {n32(chunk_h)}));
    entries.push_back(longs(kTileOffsets, offsets));
    entries.push_back(longs(kTileByteCounts, counts));
  }
  entries.push_back(shorts(kSampleFormat, std::vector<std::uint16_t>(static_cast<std::size_t>(c), fmt)));
  const auto& gt = scene.geotransform;
  entries.push_back(doubles(kModelPixelScale, {gt.pixel_size_x, -gt.pixel_size_y, 0.0}));
  entries.push_back(doubles(kModelTiepoint, {0.0, 0.0, 0.0, gt.origin_x, gt.origin_y, 0.0}));
  // GTModelTypeGeoKey = projected; the CRS itself is not carried.
  entries.push_back(shorts(kGeoKeyDirectory, {1, 1, 0, 1, 1024, 0, 1, 1}));
  if (scene.nodata_value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(*scene.nodata_value));
    entries.push_back(text(kGdalNodata, buf));
  }

  std::vector<std::uint32_t> value_offsets(entries.size(), 0);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].data.size() <= 4) continue;
    file.align();
    value_offsets[i] = file.pos();
    file.bytes.insert(file.bytes.end(), entries[i].data.begin(), entries[i].data.end());
  }
  file.align();
  file.put_u32(4, file.pos());
  file.u16(static_cast<std::uint16_t>(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    file.u16(e.tag);
    file.u16(e.type);
    file.u32(e.count);
    if (e.data.size() <= 4) {
      std::array<std::uint8_t, 4> inl{};
      std::copy(e.data.begin(), e.data.end(), inl.begin());
      file.bytes.insert(file.bytes.end(), inl.begin(), inl.end());
    } else {
      file.u32(value_offsets[i]);
    }
  }
  file.u32(0);
  return std::move(file.bytes);
}

void write_geotiff(const Scene& scene, const std::filesystem::path& path, const GeoTiffWriteOptions& options) {
  write_file_bytes(path, encode_geotiff(scene, options));
}

}  // namespace cropcube
