#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cosmovae::fits {

/// Contents of the first binary-table extension of a FITS file: the first
/// column flattened to doubles, plus every header keyword (primary and
/// extension, the extension winning on conflicts).
struct HealpixTable {
  std::vector<double> column;
  std::map<std::string, std::string> keywords;

  std::optional<std::string> keyword(const std::string& key) const;
};

/// True when the file starts with a FITS primary header card.
bool looks_like_fits(const std::filesystem::path& path);

HealpixTable read_first_column(const std::filesystem::path& path);

/// Writes a one-column float64 binary table carrying the HEALPix keywords.
void write_healpix_table(const std::filesystem::path& path, const std::vector<double>& values,
                         std::int64_t n_side, bool nested, const std::string& column_name,
                         std::optional<double> bad_value);

}  // namespace cosmovae::fits
