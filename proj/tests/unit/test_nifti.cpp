#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "test_util.hpp"
#include "voxharm/digest.hpp"
#include "voxharm/error.hpp"
#include "voxharm/nifti.hpp"

using namespace voxharm;
using namespace voxharm::test;

namespace {

// Minimal hand-rolled NIfTI-1 writer, independent of the library encoder.
struct RawHeader {
  std::vector<std::uint8_t> bytes = std::vector<std::uint8_t>(352, 0);
  bool big = false;

  template <typename T>
  void put(std::size_t off, T v) {
    std::array<std::uint8_t, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    if (big) std::reverse(b.begin(), b.end());
    std::memcpy(bytes.data() + off, b.data(), sizeof(T));
  }

  RawHeader(std::array<std::int16_t, 3> dims, std::int16_t datatype, std::int16_t bitpix, bool big_endian = false)
      : big(big_endian) {
    put<std::int32_t>(0, 348);
    put<std::int16_t>(40, 3);
    for (int a = 0; a < 3; ++a) put<std::int16_t>(42 + 2 * a, dims[a]);
    for (int a = 3; a < 7; ++a) put<std::int16_t>(42 + 2 * a, 1);
    put<std::int16_t>(70, datatype);
    put<std::int16_t>(72, bitpix);
    put<float>(76, 1.0f);
    for (int a = 0; a < 3; ++a) put<float>(80 + 4 * a, 1.0f);
    put<float>(108, 352.0f);
    std::memcpy(bytes.data() + 344, "n+1\0", 4);
  }

  template <typename T>
  void append(const std::vector<T>& values) {
    for (T v : values) {
      std::array<std::uint8_t, sizeof(T)> b;
      std::memcpy(b.data(), &v, sizeof(T));
      if (big) std::reverse(b.begin(), b.end());
      bytes.insert(bytes.end(), b.begin(), b.end());
    }
  }
};

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

void expect_bit_equal(std::span<const double> a, std::span<const double> b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    ASSERT_EQ(std::bit_cast<std::uint64_t>(a[i]), std::bit_cast<std::uint64_t>(b[i])) << i;
}

Volume float_valued(const Geometry& g, std::uint64_t seed) {
  // Values exactly representable in float32 so the round trip is bit-exact.
  const auto v = random_volume(g, seed, 0.0, 500.0);
  std::vector<double> d(v.data().begin(), v.data().end());
  for (auto& x : d) x = static_cast<float>(x);
  return Volume(g, std::move(d));
}

}  // namespace

TEST(Nifti, FloatRoundTripIsBitExact) {
  TempDir dir;
  const auto g = geom(7, 5, 3, {0.8, 0.75, 2.5}, {-10.5, 3.25, 100.0});
  const auto v = float_valued(g, 1);
  for (const char* name : {"a.nii", "a.nii.gz"}) {
    nifti::write_volume(v, dir / name);
    const auto r = nifti::read_volume(dir / name);
    EXPECT_EQ(r.geometry().dims, g.dims);
    for (int a = 0; a < 3; ++a) {
      EXPECT_EQ(r.geometry().spacing[a], static_cast<float>(g.spacing[a]));
      EXPECT_EQ(r.geometry().origin[a], static_cast<float>(g.origin[a]));
    }
    expect_bit_equal(r.data(), v.data());
  }
}

TEST(Nifti, ReadWriteReadPreservesHeaderAndOrientation) {
  TempDir dir;
  RawHeader h({2, 2, 1}, 16, 32);
  h.put<std::int16_t>(252, 2);   // qform_code
  h.put<std::int16_t>(254, 1);   // sform_code
  h.put<float>(256, 0.5f);       // quatern_b
  h.put<float>(268, 12.0f);      // qoffset_x
  h.put<float>(280, 0.9f);       // srow_x[0]
  h.append<float>({1.5f, -2.0f, 3.25f, 0.0f});
  write_bytes(dir / "in.nii", h.bytes);

  const auto a = nifti::read_volume(dir / "in.nii");
  EXPECT_EQ(a.geometry().origin[0], 12.0);
  nifti::write_volume(a, dir / "out.nii");
  const auto b = nifti::read_volume(dir / "out.nii");
  EXPECT_EQ(a.orientation(), b.orientation());
  EXPECT_EQ(a.geometry(), b.geometry());
  expect_bit_equal(a.data(), b.data());

  // The orientation block on disk is byte-identical to the input.
  std::ifstream in(dir / "out.nii", std::ios::binary);
  std::vector<std::uint8_t> out((std::istreambuf_iterator<char>(in)), {});
  EXPECT_TRUE(std::equal(h.bytes.begin() + 252, h.bytes.begin() + 328, out.begin() + 252));
}

TEST(Nifti, Int16ScalingGivesHu) {
  TempDir dir;
  RawHeader h({2, 1, 1}, 4, 16);
  h.put<float>(112, 1.0f);
  h.put<float>(116, -1024.0f);
  h.append<std::int16_t>({1024, 0});
  write_bytes(dir / "ct.nii", h.bytes);
  const auto v = nifti::read_volume(dir / "ct.nii");
  EXPECT_EQ(v.data()[0], 0.0);
  EXPECT_EQ(v.data()[1], -1024.0);
}

TEST(Nifti, BigEndianMatchesLittleEndian) {
  TempDir dir;
  const std::vector<std::int16_t> values{-3, 7, 300, -1000, 12, 0};
  for (bool big : {false, true}) {
    RawHeader h({3, 2, 1}, 4, 16, big);
    h.put<float>(80, 0.5f);
    h.append(values);
    write_bytes(dir / (big ? "be.nii" : "le.nii"), h.bytes);
  }
  const auto le = nifti::read_volume(dir / "le.nii");
  const auto be = nifti::read_volume(dir / "be.nii");
  EXPECT_TRUE(nifti::read_header(dir / "be.nii").big_endian);
  EXPECT_EQ(le.geometry(), be.geometry());
  expect_bit_equal(le.data(), be.data());
  EXPECT_EQ(be.data()[3], -1000.0);
  EXPECT_EQ(be.geometry().spacing[0], 0.5);
}

TEST(Nifti, CompressionIsTransparent) {
  const auto v = float_valued(geom(6, 6, 6), 2);
  const auto raw = nifti::encode_volume(v, {}, false);
  const auto gz = nifti::encode_volume(v, {}, true);
  EXPECT_EQ(gz[0], 0x1f);
  EXPECT_EQ(gz[1], 0x8b);
  EXPECT_EQ(nifti::gzip_decompress(gz), raw);
  expect_bit_equal(nifti::decode_volume(raw).data(), nifti::decode_volume(gz).data());
}

TEST(Nifti, Rank4SingletonAccepted) {
  RawHeader h({2, 1, 1}, 2, 8);
  h.put<std::int16_t>(40, 4);
  h.append<std::uint8_t>({5, 6});
  EXPECT_EQ(nifti::decode_volume(h.bytes).data()[1], 6.0);

  RawHeader bad({2, 1, 1}, 2, 8);
  bad.put<std::int16_t>(40, 4);
  bad.put<std::int16_t>(48, 2);  // dim[4] = 2
  bad.append<std::uint8_t>({5, 6, 7, 8});
  EXPECT_THROW(nifti::decode_volume(bad.bytes), Error);
}

TEST(Nifti, RejectsCorruptAndUnsupported) {
  RawHeader h({2, 1, 1}, 16, 32);
  h.append<float>({1.0f, 2.0f});

  auto bad_size = h.bytes;
  bad_size[0] = 100;
  EXPECT_THROW(nifti::decode_volume(bad_size), Error);

  auto nifti2 = h.bytes;
  const std::int32_t n2 = 540;
  std::memcpy(nifti2.data(), &n2, 4);
  try {
    nifti::decode_volume(nifti2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::unsupported);
  }

  auto pair = h.bytes;
  std::memcpy(pair.data() + 344, "ni1\0", 4);
  EXPECT_THROW(nifti::decode_volume(pair), Error);

  auto dtype = h.bytes;
  const std::int16_t f64 = 64;
  std::memcpy(dtype.data() + 70, &f64, 2);
  try {
    nifti::decode_volume(dtype);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::unsupported);
  }

  auto truncated = h.bytes;
  truncated.resize(truncated.size() - 2);
  EXPECT_THROW(nifti::decode_volume(truncated), Error);

  EXPECT_THROW(nifti::read_volume("/nonexistent/x.nii"), Error);
}

TEST(Nifti, IntegerWriteRangeChecks) {
  const Volume v(geom(2, 1, 1), {-2000.0, 40000.0});
  EXPECT_THROW(nifti::encode_volume(v, {nifti::Datatype::int16, std::nullopt}, false), Error);
  const nifti::VolumeWriteOptions scaled{nifti::Datatype::int16, std::pair{2.0, 0.0}};
  const auto r = nifti::decode_volume(nifti::encode_volume(v, scaled, false));
  EXPECT_EQ(r.data()[0], -2000.0);
  EXPECT_EQ(r.data()[1], 40000.0);
  const Volume u(geom(2, 1, 1), {0.0, 255.0});
  const auto ru = nifti::decode_volume(nifti::encode_volume(u, {nifti::Datatype::uint8, std::nullopt}, true));
  EXPECT_EQ(ru.data()[1], 255.0);
}

TEST(Nifti, LabelRoundTripAndVocabulary) {
  TempDir dir;
  const Vocabulary v{{1, "kidney"}, {2, "tumor"}, {3, "cyst"}};
  const auto labels = random_labels(geom(9, 8, 7), 4, 3, v);
  nifti::write_labels(labels, dir / "l.nii.gz");
  const auto r = nifti::read_labels(dir / "l.nii.gz", v, true);
  EXPECT_TRUE(std::equal(labels.data().begin(), labels.data().end(), r.data().begin()));
  EXPECT_EQ(r.vocabulary(), v);

  const Vocabulary small{{1, "kidney"}};
  EXPECT_THROW(nifti::read_labels(dir / "l.nii.gz", small, true), Error);
  const auto loose = nifti::read_labels(dir / "l.nii.gz", small, false);
  EXPECT_EQ(loose.vocabulary().at(3), "label_3");
}

TEST(Nifti, LabelsRejectFloatAndNegative) {
  RawHeader f({2, 1, 1}, 16, 32);
  f.append<float>({0.0f, 1.0f});
  EXPECT_THROW(nifti::decode_labels(f.bytes), Error);
  RawHeader neg({2, 1, 1}, 4, 16);
  neg.append<std::int16_t>({0, -1});
  EXPECT_THROW(nifti::decode_labels(neg.bytes), Error);
}

TEST(Nifti, StoredDataMatchesFileArray) {
  const auto v = float_valued(geom(4, 3, 2), 9);
  const auto file = nifti::encode_volume(v, {}, false);
  const auto data = nifti::stored_data(v);
  ASSERT_EQ(file.size(), 352 + data.size());
  EXPECT_TRUE(std::equal(data.begin(), data.end(), file.begin() + 352));
}

TEST(Digest, KnownVectors) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex({reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size()}),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex({}), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}
