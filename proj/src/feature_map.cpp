#include "weblabel/feature_map.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "weblabel/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "VFM1 I/O assumes a little-endian host");

namespace weblabel {

namespace {

constexpr char kMagic[4] = {'V', 'F', 'M', '1'};

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

FeatureMap FeatureMap::zeros(int height, int width, int channels) {
  FeatureMap map;
  map.height = height;
  map.width = width;
  map.values = RowMajorMatrix::Zero(
      static_cast<Eigen::Index>(height) * width, channels);
  return map;
}

FeatureMap load_feature_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(errc::io_failure, "cannot open " + path.string());

  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw Error(errc::bad_magic, "not a VFM1 file: " + path.string());

  const std::uint32_t h = read_u32(in);
  const std::uint32_t w = read_u32(in);
  const std::uint32_t c = read_u32(in);
  if (!in)
    throw Error(errc::io_failure, "truncated header: " + path.string());
  if (h == 0 || w == 0 || c == 0)
    throw Error(errc::dimension_mismatch,
                "zero dimension in header of " + path.string());

  const std::uint64_t count = std::uint64_t(h) * w * c;
  std::vector<float> payload(count);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::uint64_t>(in.gcount()) != count * sizeof(float))
    throw Error(errc::dimension_mismatch,
                "payload shorter than " + std::to_string(count) +
                    " floats in " + path.string());
  if (in.peek() != std::ifstream::traits_type::eof())
    throw Error(errc::dimension_mismatch,
                "payload longer than " + std::to_string(count) +
                    " floats in " + path.string());

  FeatureMap map;
  map.height = static_cast<int>(h);
  map.width = static_cast<int>(w);
  map.values.resize(static_cast<Eigen::Index>(h) * w, c);
  for (std::uint64_t i = 0; i < count; ++i) {
    const float v = payload[i];
    if (!std::isfinite(v))
      throw Error(errc::non_finite_value,
                  "non-finite value at element " + std::to_string(i) +
                      " of " + path.string());
    map.values.data()[i] = static_cast<Scalar>(v);
  }
  return map;
}

void save_feature_map(const FeatureMap& map, const std::filesystem::path& path) {
  const std::int64_t pixels = map.pixel_count();
  if (map.height <= 0 || map.width <= 0 || map.channels() <= 0 ||
      map.values.rows() != pixels)
    throw Error(errc::dimension_mismatch, "feature map shape is inconsistent");
  if (!map.values.allFinite())
    throw Error(errc::non_finite_value, "feature map holds non-finite values");

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error(errc::io_failure,
                  "cannot open " + tmp.string() + " for write");

    out.write(kMagic, 4);
    const std::uint32_t dims[3] = {static_cast<std::uint32_t>(map.height),
                                   static_cast<std::uint32_t>(map.width),
                                   static_cast<std::uint32_t>(map.channels())};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));

    const std::int64_t count = pixels * map.channels();
    std::vector<float> payload(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i)
      payload[static_cast<std::size_t>(i)] =
          static_cast<float>(map.values.data()[i]);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(count * sizeof(float)));
    if (!out)
      throw Error(errc::io_failure, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw Error(errc::io_failure,
                "cannot move " + tmp.string() + " into place: " + ec.message());
}

Vector global_average_pool(const FeatureMap& map) {
  return map.values.colwise().mean().transpose();
}

}  // namespace weblabel
