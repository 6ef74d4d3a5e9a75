#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "voxharm/volume.hpp"

namespace voxharm::nifti {

/// Stored voxel types understood by the reader and writer.
enum class Datatype : std::int16_t {
  uint8 = 2,
  int16 = 4,
  float32 = 16,
};

/// The header fields the toolkit consumes, decoded to native values.
struct HeaderView {
  Index3 dims{1, 1, 1};
  Datatype datatype = Datatype::float32;
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  double scl_slope = 0.0;  // 0 means "no scaling"
  double scl_inter = 0.0;
  std::size_t vox_offset = 352;
  bool compressed = false;
  bool big_endian = false;
  OrientationBlob orientation;  // qform/sform block, little-endian normalised
};

constexpr std::size_t header_size = 348;

/// Size of the preserved orientation block: qfac (pixdim[0]) followed by the
/// qform_code..srow_z fields.
constexpr std::size_t orientation_blob_size = 80;

struct VolumeWriteOptions {
  Datatype datatype = Datatype::float32;
  /// (slope, intercept) for integer outputs; stored = round((v - inter) / slope).
  std::optional<std::pair<double, double>> scaling;
};

/// Parses a complete single-file image held in memory (gzip or raw).
HeaderView parse_header(std::span<const std::uint8_t> file_bytes);

HeaderView read_header(const std::filesystem::path& path);

Volume read_volume(const std::filesystem::path& path);
Volume decode_volume(std::span<const std::uint8_t> file_bytes);

void write_volume(const Volume& volume, const std::filesystem::path& path,
                  const VolumeWriteOptions& options = {});

/// Full file image. Gzip-wrapped when compress is set.
std::vector<std::uint8_t> encode_volume(const Volume& volume, const VolumeWriteOptions& options,
                                        bool compress);

/// Voxel array exactly as it is stored on disk (little-endian), without header.
std::vector<std::uint8_t> stored_data(const Volume& volume, const VolumeWriteOptions& options = {});
std::vector<std::uint8_t> stored_data(const LabelMap& labels, Datatype datatype = Datatype::uint8);

/// Reads an integer-typed image as labels. Values missing from vocabulary are
/// an error when strict; otherwise they are added as "label_<id>".
LabelMap read_labels(const std::filesystem::path& path, const Vocabulary& vocabulary = {},
                     bool strict = false);
LabelMap decode_labels(std::span<const std::uint8_t> file_bytes, const Vocabulary& vocabulary = {},
                       bool strict = false);

void write_labels(const LabelMap& labels, const std::filesystem::path& path,
                  Datatype datatype = Datatype::uint8);
std::vector<std::uint8_t> encode_labels(const LabelMap& labels, Datatype datatype, bool compress);

/// True for names ending in ".gz".
bool wants_compression(const std::filesystem::path& path);

std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> raw);
std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> gz);

}  // namespace voxharm::nifti
