#include "cosmovae/sphere_map.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cosmovae/error.hpp"
#include "cosmovae/fits.hpp"
#include "cosmovae/healpix.hpp"

namespace cosmovae {
namespace {

constexpr char kRawMagic[4] = {'S', 'M', 'A', 'P'};
constexpr std::size_t kRawHeader = 16;
constexpr double kHealpyUnseen = -1.6375e30;

static_assert(std::endian::native == std::endian::little,
              "raw map I/O assumes a little-endian host");

struct RawPayload {
  std::int64_t n_side = 0;
  Ordering ordering = Ordering::kRing;
  std::vector<double> values;
  std::optional<double> bad_value;
};

std::uint32_t read_u32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

void check_nside(std::int64_t n_side) {
  require(healpix::is_valid_nside(n_side), ErrorCode::kMalformedHeader,
          "n_side must be a positive power of two, got " + std::to_string(n_side));
}

RawPayload read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  require(bytes.size() >= kRawHeader && std::memcmp(bytes.data(), kRawMagic, 4) == 0,
          ErrorCode::kMalformedHeader, "not a raw sphere map: " + path.string());
  RawPayload payload;
  payload.n_side = read_u32(bytes.data() + 4);
  check_nside(payload.n_side);
  const std::uint32_t ordering = read_u32(bytes.data() + 8);
  require(ordering <= 1, ErrorCode::kMalformedHeader, "unknown ordering code");
  payload.ordering = static_cast<Ordering>(ordering);
  const std::size_t expected = static_cast<std::size_t>(healpix::npix(payload.n_side));
  const std::size_t body = bytes.size() - kRawHeader;
  require(body == expected * sizeof(double), ErrorCode::kLengthMismatch,
          "raw map holds " + std::to_string(body / sizeof(double)) + " values, expected " +
              std::to_string(expected));
  payload.values.resize(expected);
  std::memcpy(payload.values.data(), bytes.data() + kRawHeader, body);
  return payload;
}

RawPayload read_fits(const std::filesystem::path& path) {
  const fits::HealpixTable table = fits::read_first_column(path);
  RawPayload payload;
  const auto nside = table.keyword("NSIDE");
  require(nside.has_value(), ErrorCode::kMalformedHeader, "FITS map lacks NSIDE");
  try {
    payload.n_side = std::stoll(*nside);
  } catch (const std::exception&) {
    fail(ErrorCode::kMalformedHeader, "FITS NSIDE is not an integer");
  }
  check_nside(payload.n_side);
  const std::string ordering = table.keyword("ORDERING").value_or("RING");
  if (ordering.rfind("NEST", 0) == 0) {
    payload.ordering = Ordering::kNested;
  } else {
    require(ordering == "RING", ErrorCode::kMalformedHeader, "unknown ORDERING " + ordering);
  }
  const std::size_t expected = static_cast<std::size_t>(healpix::npix(payload.n_side));
  require(table.column.size() == expected, ErrorCode::kLengthMismatch,
          "FITS map holds " + std::to_string(table.column.size()) + " values, expected " +
              std::to_string(expected));
  payload.values = table.column;
  if (const auto bad = table.keyword("BAD_DATA")) {
    payload.bad_value = std::stod(*bad);
    // Single-precision columns round the sentinel; compare in float.
    for (double& v : payload.values) {
      if (static_cast<float>(v) == static_cast<float>(*payload.bad_value)) v = *payload.bad_value;
    }
  } else {
    for (double& v : payload.values) {
      if (static_cast<float>(v) == static_cast<float>(kHealpyUnseen)) {
        v = kHealpyUnseen;
        payload.bad_value = kHealpyUnseen;
      }
    }
  }
  return payload;
}

RawPayload read_any(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorCode::kIo, "no such file: " + path.string());
  return fits::looks_like_fits(path) ? read_fits(path) : read_raw(path);
}

template <typename T>
std::vector<T> nested_to_ring(std::int64_t n_side, const std::vector<T>& nested) {
  std::vector<T> ring(nested.size());
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(nested.size()); ++p) {
    ring[static_cast<std::size_t>(healpix::nest2ring(n_side, p))] = nested[static_cast<std::size_t>(p)];
  }
  return ring;
}

void write_raw(const std::filesystem::path& path, std::int64_t n_side, Ordering ordering,
               const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  const auto ns = static_cast<std::uint32_t>(n_side);
  const auto ord = static_cast<std::uint32_t>(ordering);
  const std::uint32_t reserved = 0;
  out.write(kRawMagic, 4);
  out.write(reinterpret_cast<const char*>(&ns), 4);
  out.write(reinterpret_cast<const char*>(&ord), 4);
  out.write(reinterpret_cast<const char*>(&reserved), 4);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace

void validate(const SphereMap& map) {
  require(healpix::is_valid_nside(map.n_side), ErrorCode::kInvalidArgument,
          "n_side must be a positive power of two");
  require(static_cast<std::int64_t>(map.values.size()) == map.npix(), ErrorCode::kLengthMismatch,
          "map length must equal 12*n_side^2");
  for (std::size_t p = 0; p < map.values.size(); ++p) {
    require(map.is_bad(p) || std::isfinite(map.values[p]), ErrorCode::kNonFiniteValue,
            "non-finite map value at pixel " + std::to_string(p));
  }
}

void validate(const MaskMap& mask) {
  require(healpix::is_valid_nside(mask.n_side), ErrorCode::kInvalidArgument,
          "n_side must be a positive power of two");
  require(static_cast<std::int64_t>(mask.values.size()) == mask.npix(),
          ErrorCode::kLengthMismatch, "mask length must equal 12*n_side^2");
  for (std::size_t p = 0; p < mask.values.size(); ++p) {
    require(mask.values[p] <= 1, ErrorCode::kNonBinaryMask, "non-binary mask");
  }
}

bool same_geometry(const SphereMap& map, const MaskMap& mask) {
  return map.n_side == mask.n_side && map.ordering == mask.ordering &&
         map.values.size() == mask.values.size();
}

SphereMap to_ring(SphereMap map) {
  if (map.ordering == Ordering::kNested) {
    map.values = nested_to_ring(map.n_side, map.values);
    map.ordering = Ordering::kRing;
  }
  return map;
}

MaskMap to_ring(MaskMap mask) {
  if (mask.ordering == Ordering::kNested) {
    mask.values = nested_to_ring(mask.n_side, mask.values);
    mask.ordering = Ordering::kRing;
  }
  return mask;
}

SphereMap make_constant_map(std::int64_t n_side, double value) {
  SphereMap map;
  map.n_side = n_side;
  map.values.assign(static_cast<std::size_t>(healpix::npix(n_side)), value);
  validate(map);
  return map;
}

MaskMap make_empty_mask(std::int64_t n_side) {
  MaskMap mask;
  mask.n_side = n_side;
  mask.values.assign(static_cast<std::size_t>(healpix::npix(n_side)), 0);
  validate(mask);
  return mask;
}

std::variant<SphereMap, MaskMap> load_map(const std::filesystem::path& path, MapKind kind) {
  RawPayload payload = read_any(path);
  if (kind == MapKind::kMap) {
    SphereMap map;
    map.n_side = payload.n_side;
    map.ordering = payload.ordering;
    map.values = std::move(payload.values);
    map.bad_value = payload.bad_value;
    validate(map);
    return to_ring(std::move(map));
  }
  MaskMap mask;
  mask.n_side = payload.n_side;
  mask.ordering = payload.ordering;
  mask.values.resize(payload.values.size());
  for (std::size_t p = 0; p < payload.values.size(); ++p) {
    const double v = payload.values[p];
    require(v == 0.0 || v == 1.0, ErrorCode::kNonBinaryMask,
            "non-binary mask value at pixel " + std::to_string(p));
    mask.values[p] = static_cast<std::uint8_t>(v);
  }
  validate(mask);
  return to_ring(std::move(mask));
}

SphereMap load_sphere_map(const std::filesystem::path& path) {
  return std::get<SphereMap>(load_map(path, MapKind::kMap));
}

MaskMap load_mask_map(const std::filesystem::path& path) {
  return std::get<MaskMap>(load_map(path, MapKind::kMask));
}

MapFormat format_for_path(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  return (ext == ".fits" || ext == ".fit") ? MapFormat::kFits : MapFormat::kRaw;
}

void save_map(const std::filesystem::path& path, const SphereMap& map, MapFormat format) {
  validate(map);
  if (format == MapFormat::kFits) {
    fits::write_healpix_table(path, map.values, map.n_side, map.ordering == Ordering::kNested,
                              "TEMPERATURE", map.bad_value);
  } else {
    write_raw(path, map.n_side, map.ordering, map.values);
  }
}

void save_map(const std::filesystem::path& path, const MaskMap& mask, MapFormat format) {
  validate(mask);
  std::vector<double> values(mask.values.begin(), mask.values.end());
  if (format == MapFormat::kFits) {
    fits::write_healpix_table(path, values, mask.n_side, mask.ordering == Ordering::kNested,
                              "MASK", std::nullopt);
  } else {
    write_raw(path, mask.n_side, mask.ordering, values);
  }
}

}  // namespace cosmovae
