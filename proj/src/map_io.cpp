#include "dap/map_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dap/error.hpp"

namespace dap::io {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{p[i]} << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

// Parses the "P5\n<w> <h>\n255\n" style header shared by PGM and PPM.
// Returns the payload offset.
std::size_t parse_netpbm_header(std::span<const std::uint8_t> bytes,
                                const char* magic, std::size_t& w,
                                std::size_t& h, const std::filesystem::path& path) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::size_t {
    skip_space();
    std::size_t v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
    }
    if (!any) throw DataError("malformed netpbm header in " + path.string());
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
    throw BadMagicError(path.string() + ": expected " + magic + " netpbm file");
  }
  pos = 2;
  w = read_int();
  h = read_int();
  const std::size_t maxval = read_int();
  if (maxval != 255) {
    throw DataError(path.string() + ": only maxval 255 is supported");
  }
  ++pos;  // single whitespace before the raster
  return pos;
}

}  // namespace

std::vector<std::uint8_t> encode_map(const AttentionMap& map) {
  if (map.values.size() != map.width * map.height) {
    throw DimensionError("encode_map: value count does not match dims");
  }
  std::vector<std::uint8_t> out{'A', 'T', 'N', 'M'};
  out.reserve(kAtnmHeaderBytes + 8 * map.size());
  put_u32(out, kAtnmVersion);
  put_u32(out, static_cast<std::uint32_t>(map.width));
  put_u32(out, static_cast<std::uint32_t>(map.height));
  out.push_back(map.normalized ? 1 : 0);
  for (double v : map.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

AttentionMap decode_map(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "ATNM", 4) != 0) {
    throw BadMagicError("not an ATNM raster (bad magic)");
  }
  if (bytes.size() < kAtnmHeaderBytes) {
    throw TruncatedError("ATNM header truncated");
  }
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kAtnmVersion) {
    throw DataError("unsupported ATNM version " + std::to_string(version));
  }
  const std::size_t w = get_u32(bytes.data() + 8);
  const std::size_t h = get_u32(bytes.data() + 12);
  const std::uint8_t flag = bytes[16];
  if (flag > 1) throw DataError("ATNM normalized flag must be 0 or 1");
  const std::size_t expected = kAtnmHeaderBytes + 8 * w * h;
  if (bytes.size() < expected) {
    throw TruncatedError("ATNM payload truncated: expected " +
                         std::to_string(expected) + " bytes, got " +
                         std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw DataError("ATNM file has " + std::to_string(bytes.size() - expected) +
                    " trailing bytes");
  }
  std::vector<double> values(w * h);
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<double>(get_u64(bytes.data() + kAtnmHeaderBytes + 8 * i));
    if (std::isnan(values[i])) {
      throw NanPayloadError("ATNM payload contains NaN at index " + std::to_string(i));
    }
  }
  return AttentionMap(w, h, std::move(values), flag == 1);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void save_map(const AttentionMap& map, const std::filesystem::path& path) {
  write_file(path, encode_map(map));
}

AttentionMap load_map(const std::filesystem::path& path) {
  try {
    return decode_map(read_file(path));
  } catch (const DataError& e) {
    // Re-throw with the file name while keeping the concrete error type.
    const std::string msg = path.string() + ": " + e.what();
    if (dynamic_cast<const BadMagicError*>(&e)) throw BadMagicError(msg);
    if (dynamic_cast<const TruncatedError*>(&e)) throw TruncatedError(msg);
    if (dynamic_cast<const NanPayloadError*>(&e)) throw NanPayloadError(msg);
    throw DataError(msg);
  }
}

std::vector<std::uint8_t> encode_pgm(const AttentionMap& map) {
  const std::string header = "P5\n" + std::to_string(map.width) + " " +
                             std::to_string(map.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double mn = map.values.empty() ? 0.0 : *lo;
  const double mx = map.values.empty() ? 0.0 : *hi;
  for (double v : map.values) {
    if (mx == mn) {
      out.push_back(128);
    } else {
      const double s = std::round(255.0 * (v - mn) / (mx - mn));
      out.push_back(static_cast<std::uint8_t>(std::clamp(s, 0.0, 255.0)));
    }
  }
  return out;
}

void export_pgm(const AttentionMap& map, const std::filesystem::path& path) {
  write_file(path, encode_pgm(map));
}

AttentionMap load_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t w = 0, h = 0;
  const std::size_t off = parse_netpbm_header(bytes, "P5", w, h, path);
  if (bytes.size() < off + w * h) throw TruncatedError(path.string() + ": PGM truncated");
  std::vector<double> v(w * h);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = bytes[off + i] / 255.0;
  return AttentionMap(w, h, std::move(v));
}

void save_mask(const KnowledgeMask& mask, const std::filesystem::path& path) {
  if (path.extension() == ".pgm") {
    std::string header = "P5\n" + std::to_string(mask.width) + " " +
                         std::to_string(mask.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (auto v : mask.values) out.push_back(v ? 255 : 0);
    write_file(path, out);
  } else {
    save_map(AttentionMap(mask.width, mask.height,
                          std::vector<double>(mask.values.begin(), mask.values.end())),
             path);
  }
}

KnowledgeMask load_mask(const std::filesystem::path& path) {
  const bool pgm = path.extension() == ".pgm";
  const AttentionMap m = pgm ? load_pgm(path) : load_map(path);
  KnowledgeMask mask(m.width, m.height);
  const double threshold = pgm ? 128.0 / 255.0 : 0.5;
  for (std::size_t i = 0; i < m.size(); ++i) {
    mask.values[i] = m.values[i] >= threshold ? 1 : 0;
  }
  return mask;
}

Tensor quantize_frame(const Tensor& frame) {
  Tensor out = frame;
  for (real& v : out.data()) {
    v = static_cast<real>(std::round(std::clamp<double>(v, 0.0, 1.0) * 255.0) / 255.0);
  }
  return out;
}

void save_frame(const Tensor& frame, const std::filesystem::path& path) {
  if (frame.rank() != 3 || frame.dim(0) != 3) {
    throw DimensionError("save_frame expects [3, H, W], got " + to_string(frame.shape()));
  }
  const std::size_t h = frame.dim(1), w = frame.dim(2);
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp<double>(frame[(c * h + y) * w + x], 0.0, 1.0);
        out.push_back(static_cast<std::uint8_t>(std::round(v * 255.0)));
      }
    }
  }
  write_file(path, out);
}

Tensor load_frame(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t w = 0, h = 0;
  const std::size_t off = parse_netpbm_header(bytes, "P6", w, h, path);
  if (bytes.size() < off + 3 * w * h) throw TruncatedError(path.string() + ": PPM truncated");
  Tensor frame(Shape{3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        frame[(c * h + y) * w + x] =
            static_cast<real>(bytes[off + 3 * (y * w + x) + c] / 255.0);
      }
    }
  }
  return frame;
}

}  // namespace dap::io
