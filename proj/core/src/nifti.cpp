#include "voxharm/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <fmt/format.h>
#include <zlib.h>

#include "voxharm/error.hpp"

namespace voxharm::nifti {
namespace {

static_assert(std::endian::native == std::endian::little,
              "byte layout code assumes a little-endian host");

// Field offsets in the 348-byte NIfTI-1 header.
constexpr std::size_t off_sizeof_hdr = 0;
constexpr std::size_t off_dim = 40;
constexpr std::size_t off_datatype = 70;
constexpr std::size_t off_bitpix = 72;
constexpr std::size_t off_pixdim = 76;
constexpr std::size_t off_vox_offset = 108;
constexpr std::size_t off_scl_slope = 112;
constexpr std::size_t off_scl_inter = 116;
constexpr std::size_t off_xyzt_units = 123;
constexpr std::size_t off_qform_code = 252;
constexpr std::size_t off_sform_code = 254;
constexpr std::size_t off_qoffset = 268;
constexpr std::size_t off_srow = 280;
constexpr std::size_t off_magic = 344;
constexpr std::size_t orientation_end = 328;
constexpr std::size_t single_file_offset = 352;

template <typename T>
T byteswap_value(T v) {
  auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    T v;
    std::memcpy(&v, bytes_.data() + offset, sizeof(T));
    return swap_ ? byteswap_value(v) : v;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  bool swap_;
};

template <typename T>
void put(std::vector<std::uint8_t>& buf, std::size_t offset, T v) {
  std::memcpy(buf.data() + offset, &v, sizeof(T));
}

bool is_gzip(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, fmt::format("cannot open '{}'", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorKind::io, fmt::format("error reading '{}'", path.string()));
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, fmt::format("cannot create '{}'", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(ErrorKind::io, fmt::format("error writing '{}'", path.string()));
}

std::size_t bytes_per_voxel(Datatype dt) {
  switch (dt) {
    case Datatype::uint8: return 1;
    case Datatype::int16: return 2;
    case Datatype::float32: return 4;
  }
  return 0;
}

std::string_view datatype_name(Datatype dt) {
  switch (dt) {
    case Datatype::uint8: return "uint8";
    case Datatype::int16: return "int16";
    case Datatype::float32: return "float32";
  }
  return "?";
}

// Header parse on an uncompressed image.
HeaderView parse_raw_header(std::span<const std::uint8_t> raw, bool compressed) {
  if (raw.size() < header_size)
    throw Error(ErrorKind::format, fmt::format("file too short for a header ({} bytes)", raw.size()));

  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, raw.data() + off_sizeof_hdr, 4);
  bool swap = false;
  if (sizeof_hdr != static_cast<std::int32_t>(header_size)) {
    if (byteswap_value(sizeof_hdr) == static_cast<std::int32_t>(header_size)) {
      swap = true;
    } else if (sizeof_hdr == 540 || byteswap_value(sizeof_hdr) == 540) {
      throw Error(ErrorKind::unsupported, "NIfTI-2 files are not supported");
    } else {
      throw Error(ErrorKind::format,
                  fmt::format("corrupt header: sizeof_hdr = {}, expected 348", sizeof_hdr));
    }
  }
  const Reader r(raw, swap);

  const char* magic = reinterpret_cast<const char*>(raw.data() + off_magic);
  if (std::memcmp(magic, "ni1\0", 4) == 0)
    throw Error(ErrorKind::unsupported, "dual-file (.hdr/.img) NIfTI is not supported");
  if (std::memcmp(magic, "n+1\0", 4) != 0)
    throw Error(ErrorKind::format, "bad magic: not a single-file NIfTI-1 image");

  HeaderView h;
  h.compressed = compressed;
  h.big_endian = swap;

  const auto rank = r.get<std::int16_t>(off_dim);
  if (rank < 1 || rank > 7)
    throw Error(ErrorKind::format, fmt::format("invalid dim[0] = {}", rank));
  for (int a = 0; a < rank; ++a) {
    const auto d = r.get<std::int16_t>(off_dim + 2 * (a + 1));
    if (d < 1) throw Error(ErrorKind::format, fmt::format("invalid dim[{}] = {}", a + 1, d));
    if (a < 3)
      h.dims[a] = static_cast<std::size_t>(d);
    else if (d != 1)
      throw Error(ErrorKind::unsupported,
                  fmt::format("rank-{} image with non-singleton dim[{}] = {}", rank, a + 1, d));
  }

  const auto dt = r.get<std::int16_t>(off_datatype);
  switch (dt) {
    case 2: h.datatype = Datatype::uint8; break;
    case 4: h.datatype = Datatype::int16; break;
    case 16: h.datatype = Datatype::float32; break;
    default:
      throw Error(ErrorKind::unsupported, fmt::format("unsupported datatype code {}", dt));
  }

  for (int a = 0; a < 3; ++a) {
    const double s = a < rank ? std::abs(r.get<float>(off_pixdim + 4 * (a + 1))) : 1.0;
    h.spacing[a] = (std::isfinite(s) && s > 0.0) ? s : 1.0;
  }

  const float vox = r.get<float>(off_vox_offset);
  if (!std::isfinite(vox) || vox < 0.0f)
    throw Error(ErrorKind::format, "invalid vox_offset");
  h.vox_offset = std::max<std::size_t>(single_file_offset, static_cast<std::size_t>(vox));

  h.scl_slope = r.get<float>(off_scl_slope);
  h.scl_inter = r.get<float>(off_scl_inter);
  if (!std::isfinite(h.scl_slope)) h.scl_slope = 0.0;
  if (!std::isfinite(h.scl_inter)) h.scl_inter = 0.0;

  const auto qform_code = r.get<std::int16_t>(off_qform_code);
  const auto sform_code = r.get<std::int16_t>(off_sform_code);
  if (qform_code > 0) {
    for (int a = 0; a < 3; ++a) h.origin[a] = r.get<float>(off_qoffset + 4 * a);
  } else if (sform_code > 0) {
    for (int a = 0; a < 3; ++a) h.origin[a] = r.get<float>(off_srow + 16 * a + 12);
  }

  // Orientation block, normalised to little-endian: qfac then 2 shorts + 18 floats.
  h.orientation.resize(orientation_blob_size);
  std::size_t pos = 0;
  auto keep = [&](auto v) {
    std::memcpy(h.orientation.data() + pos, &v, sizeof(v));
    pos += sizeof(v);
  };
  keep(r.get<float>(off_pixdim));
  keep(qform_code);
  keep(sform_code);
  for (std::size_t off = off_qform_code + 4; off < orientation_end; off += 4) keep(r.get<float>(off));
  return h;
}

struct RawImage {
  HeaderView header;
  std::vector<std::uint8_t> owned;  // decompressed copy when gzip
  std::span<const std::uint8_t> bytes;
};

RawImage load(std::span<const std::uint8_t> file_bytes) {
  RawImage img;
  const bool gz = is_gzip(file_bytes);
  if (gz) {
    img.owned = gzip_decompress(file_bytes);
    img.bytes = img.owned;
  } else {
    img.bytes = file_bytes;
  }
  img.header = parse_raw_header(img.bytes, gz);

  std::size_t count = 1;
  for (auto d : img.header.dims) {
    if (count > std::numeric_limits<std::size_t>::max() / d)
      throw Error(ErrorKind::out_of_range, "dimension overflow");
    count *= d;
  }
  const std::size_t bpv = bytes_per_voxel(img.header.datatype);
  if (count > (std::numeric_limits<std::size_t>::max() - img.header.vox_offset) / bpv)
    throw Error(ErrorKind::out_of_range, "dimension overflow");
  if (img.bytes.size() < img.header.vox_offset + count * bpv)
    throw Error(ErrorKind::format,
                fmt::format("truncated image: need {} bytes of voxel data after offset {}, have {}",
                            count * bpv, img.header.vox_offset,
                            img.bytes.size() - std::min(img.bytes.size(), img.header.vox_offset)));
  return img;
}

Geometry geometry_of(const HeaderView& h) {
  Geometry g;
  g.dims = h.dims;
  g.spacing = h.spacing;
  g.origin = h.origin;
  return g;
}

// Stored values as doubles, before scaling.
std::vector<double> stored_values(const RawImage& img) {
  const Reader r(img.bytes, img.header.big_endian);
  const std::size_t n = img.header.dims[0] * img.header.dims[1] * img.header.dims[2];
  const std::size_t base = img.header.vox_offset;
  std::vector<double> out(n);
  switch (img.header.datatype) {
    case Datatype::uint8:
      for (std::size_t i = 0; i < n; ++i) out[i] = img.bytes[base + i];
      break;
    case Datatype::int16:
      for (std::size_t i = 0; i < n; ++i) out[i] = r.get<std::int16_t>(base + 2 * i);
      break;
    case Datatype::float32:
      for (std::size_t i = 0; i < n; ++i) out[i] = r.get<float>(base + 4 * i);
      break;
  }
  return out;
}

std::vector<std::uint8_t> make_header(const Geometry& g, const OrientationBlob& orientation,
                                      Datatype dt, double slope, double inter) {
  std::vector<std::uint8_t> h(single_file_offset, 0);
  put<std::int32_t>(h, off_sizeof_hdr, static_cast<std::int32_t>(header_size));
  h[38] = 'r';  // "regular"
  put<std::int16_t>(h, off_dim, 3);
  for (int a = 0; a < 3; ++a) {
    if (g.dims[a] > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max()))
      throw Error(ErrorKind::out_of_range,
                  fmt::format("dimension {} too large for NIfTI-1", g.dims[a]));
    put<std::int16_t>(h, off_dim + 2 * (a + 1), static_cast<std::int16_t>(g.dims[a]));
  }
  for (int a = 4; a <= 7; ++a) put<std::int16_t>(h, off_dim + 2 * a, 1);
  put<std::int16_t>(h, off_datatype, static_cast<std::int16_t>(dt));
  put<std::int16_t>(h, off_bitpix, static_cast<std::int16_t>(8 * bytes_per_voxel(dt)));
  put<float>(h, off_pixdim, 1.0f);
  for (int a = 0; a < 3; ++a)
    put<float>(h, off_pixdim + 4 * (a + 1), static_cast<float>(g.spacing[a]));
  for (int a = 4; a <= 7; ++a) put<float>(h, off_pixdim + 4 * a, 1.0f);
  put<float>(h, off_vox_offset, static_cast<float>(single_file_offset));
  put<float>(h, off_scl_slope, static_cast<float>(slope));
  put<float>(h, off_scl_inter, static_cast<float>(inter));
  h[off_xyzt_units] = 2 | 8;  // mm, s

  if (orientation.size() == orientation_blob_size) {
    std::memcpy(h.data() + off_pixdim, orientation.data(), 4);
    std::memcpy(h.data() + off_qform_code, orientation.data() + 4, orientation_end - off_qform_code);
  } else {
    put<std::int16_t>(h, off_qform_code, 1);
    put<std::int16_t>(h, off_sform_code, 0);
    for (int a = 0; a < 3; ++a) put<float>(h, off_qoffset + 4 * a, static_cast<float>(g.origin[a]));
  }
  std::memcpy(h.data() + off_magic, "n+1\0", 4);
  return h;
}

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T v) {
  const auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
  out.insert(out.end(), bytes.begin(), bytes.end());
}

std::vector<std::uint8_t> stored_integers(std::span<const double> values, Datatype dt,
                                          double slope, double inter) {
  const double lo = dt == Datatype::uint8 ? 0.0 : std::numeric_limits<std::int16_t>::min();
  const double hi = dt == Datatype::uint8 ? 255.0 : std::numeric_limits<std::int16_t>::max();
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * bytes_per_voxel(dt));
  for (double v : values) {
    const double s = std::nearbyint((v - inter) / slope);
    if (!(s >= lo && s <= hi))
      throw Error(ErrorKind::out_of_range,
                  fmt::format("value {} does not fit {} storage", v, datatype_name(dt)));
    if (dt == Datatype::uint8)
      out.push_back(static_cast<std::uint8_t>(s));
    else
      append_le(out, static_cast<std::int16_t>(s));
  }
  return out;
}

std::pair<double, double> scaling_of(const VolumeWriteOptions& options) {
  if (!options.scaling) return {1.0, 0.0};
  const auto [slope, inter] = *options.scaling;
  if (!(std::isfinite(slope) && slope != 0.0 && std::isfinite(inter)))
    throw Error(ErrorKind::invalid_argument, "scaling slope must be finite and non-zero");
  return {slope, inter};
}

}  // namespace

bool wants_compression(const std::filesystem::path& path) { return path.extension() == ".gz"; }

std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> raw) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    throw Error(ErrorKind::io, "deflateInit2 failed");
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(raw.size())) + 64);
  zs.next_in = const_cast<Bytef*>(raw.data());
  zs.avail_in = static_cast<uInt>(raw.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  const auto produced = zs.total_out;
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw Error(ErrorKind::io, "gzip compression failed");
  out.resize(produced);
  return out;
}

std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> gz) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw Error(ErrorKind::io, "inflateInit2 failed");
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> chunk;
  zs.next_in = const_cast<Bytef*>(gz.data());
  zs.avail_in = static_cast<uInt>(gz.size());
  int rc = Z_OK;
  while (true) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw Error(ErrorKind::format, "corrupt gzip stream");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc == Z_STREAM_END) {
      if (zs.avail_in == 0) break;
      inflateReset(&zs);  // concatenated members
    } else if (zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw Error(ErrorKind::format, "truncated gzip stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

HeaderView parse_header(std::span<const std::uint8_t> file_bytes) {
  return load(file_bytes).header;
}

HeaderView read_header(const std::filesystem::path& path) { return parse_header(read_file(path)); }

Volume decode_volume(std::span<const std::uint8_t> file_bytes) {
  const RawImage img = load(file_bytes);
  auto values = stored_values(img);
  const auto& h = img.header;
  if (h.scl_slope != 0.0 && !(h.scl_slope == 1.0 && h.scl_inter == 0.0))
    for (auto& v : values) v = h.scl_slope * v + h.scl_inter;
  return Volume(geometry_of(h), std::move(values), h.orientation);
}

Volume read_volume(const std::filesystem::path& path) {
  try {
    return decode_volume(read_file(path));
  } catch (const Error& e) {
    throw Error(e.kind(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<std::uint8_t> stored_data(const Volume& volume, const VolumeWriteOptions& options) {
  const auto values = volume.data();
  if (options.datatype == Datatype::float32) {
    if (options.scaling)
      throw Error(ErrorKind::invalid_argument, "scaling applies to integer datatypes only");
    std::vector<std::uint8_t> out;
    out.reserve(values.size() * 4);
    for (double v : values) {
      const auto f = static_cast<float>(v);
      if (!std::isfinite(f))
        throw Error(ErrorKind::out_of_range, fmt::format("value {} overflows float32", v));
      append_le(out, f);
    }
    return out;
  }
  const auto [slope, inter] = scaling_of(options);
  return stored_integers(values, options.datatype, slope, inter);
}

std::vector<std::uint8_t> stored_data(const LabelMap& labels, Datatype datatype) {
  if (datatype == Datatype::float32)
    throw Error(ErrorKind::invalid_argument, "labels must be written with an integer datatype");
  std::vector<double> values(labels.data().begin(), labels.data().end());
  return stored_integers(values, datatype, 1.0, 0.0);
}

std::vector<std::uint8_t> encode_volume(const Volume& volume, const VolumeWriteOptions& options,
                                        bool compress) {
  const auto [slope, inter] = scaling_of(options);
  auto bytes = make_header(volume.geometry(), volume.orientation(), options.datatype, slope, inter);
  const auto data = stored_data(volume, options);
  bytes.insert(bytes.end(), data.begin(), data.end());
  return compress ? gzip_compress(bytes) : bytes;
}

void write_volume(const Volume& volume, const std::filesystem::path& path,
                  const VolumeWriteOptions& options) {
  write_file(path, encode_volume(volume, options, wants_compression(path)));
}

LabelMap decode_labels(std::span<const std::uint8_t> file_bytes, const Vocabulary& vocabulary,
                       bool strict) {
  const RawImage img = load(file_bytes);
  const auto& h = img.header;
  if (h.datatype == Datatype::float32)
    throw Error(ErrorKind::format, "label image has a non-integer datatype");
  if (!(h.scl_slope == 0.0 || (h.scl_slope == 1.0 && h.scl_inter == 0.0)))
    throw Error(ErrorKind::format, "label image declares value scaling");
  const auto values = stored_values(img);
  std::vector<Label> data(values.size());
  Vocabulary vocab = vocabulary;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] < 0)
      throw Error(ErrorKind::format, fmt::format("negative label {}", values[i]));
    const auto l = static_cast<Label>(values[i]);
    data[i] = l;
    if (l != 0 && !vocab.contains(l)) {
      if (strict)
        throw Error(ErrorKind::invalid_argument,
                    fmt::format("label {} not in the vocabulary (strict mode)", l));
      vocab.emplace(l, fmt::format("label_{}", l));
    }
  }
  return LabelMap(geometry_of(h), std::move(data), std::move(vocab), h.orientation);
}

LabelMap read_labels(const std::filesystem::path& path, const Vocabulary& vocabulary,
                     bool strict) {
  try {
    return decode_labels(read_file(path), vocabulary, strict);
  } catch (const Error& e) {
    throw Error(e.kind(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<std::uint8_t> encode_labels(const LabelMap& labels, Datatype datatype, bool compress) {
  auto bytes = make_header(labels.geometry(), labels.orientation(), datatype, 1.0, 0.0);
  const auto data = stored_data(labels, datatype);
  bytes.insert(bytes.end(), data.begin(), data.end());
  return compress ? gzip_compress(bytes) : bytes;
}

void write_labels(const LabelMap& labels, const std::filesystem::path& path, Datatype datatype) {
  write_file(path, encode_labels(labels, datatype, wants_compression(path)));
}

}  // namespace voxharm::nifti
