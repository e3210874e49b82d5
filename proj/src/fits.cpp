#include "cosmovae/fits.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cosmovae/error.hpp"

namespace cosmovae::fits {
namespace {

constexpr std::size_t kBlock = 2880;
constexpr std::size_t kCard = 80;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(' ');
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(' ');
  return s.substr(first, last - first + 1);
}

struct Header {
  std::map<std::string, std::string> keywords;
  std::size_t end_offset = 0;  // byte offset of the data unit
};

Header parse_header(const std::vector<char>& bytes, std::size_t offset) {
  Header header;
  for (std::size_t pos = offset;; pos += kCard) {
    require(pos + kCard <= bytes.size(), ErrorCode::kMalformedHeader, "FITS header has no END card");
    const std::string card(bytes.data() + pos, kCard);
    const std::string key = trim(card.substr(0, 8));
    if (key == "END") {
      const std::size_t used = pos + kCard - offset;
      header.end_offset = offset + ((used + kBlock - 1) / kBlock) * kBlock;
      return header;
    }
    if (card.size() < 10 || card[8] != '=') continue;
    std::string value = card.substr(10);
    std::string parsed;
    const auto first = value.find_first_not_of(' ');
    if (first != std::string::npos && value[first] == '\'') {
      std::size_t k = first + 1;
      while (k < value.size()) {
        if (value[k] == '\'') {
          if (k + 1 < value.size() && value[k + 1] == '\'') {
            parsed += '\'';
            k += 2;
            continue;
          }
          break;
        }
        parsed += value[k++];
      }
      parsed = trim(parsed);
    } else {
      const auto slash = value.find('/');
      parsed = trim(value.substr(0, slash));
    }
    header.keywords[key] = parsed;
  }
}

long long int_keyword(const Header& h, const std::string& key) {
  const auto it = h.keywords.find(key);
  require(it != h.keywords.end(), ErrorCode::kMalformedHeader, "FITS keyword missing: " + key);
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    fail(ErrorCode::kMalformedHeader, "FITS keyword not an integer: " + key);
  }
}

std::size_t data_size(const Header& h) {
  const long long naxis = int_keyword(h, "NAXIS");
  if (naxis == 0) return 0;
  const long long bitpix = int_keyword(h, "BITPIX");
  long long count = 1;
  for (long long k = 1; k <= naxis; ++k) count *= int_keyword(h, "NAXIS" + std::to_string(k));
  long long pcount = 0;
  long long gcount = 1;
  if (h.keywords.contains("PCOUNT")) pcount = int_keyword(h, "PCOUNT");
  if (h.keywords.contains("GCOUNT")) gcount = int_keyword(h, "GCOUNT");
  const long long bits = std::llabs(bitpix) * gcount * (pcount + count);
  const auto bytes = static_cast<std::size_t>(bits / 8);
  return ((bytes + kBlock - 1) / kBlock) * kBlock;
}

template <typename T>
T read_be(const char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::little && sizeof(T) > 1) {
    auto* raw = reinterpret_cast<unsigned char*>(&value);
    std::reverse(raw, raw + sizeof(T));
  }
  return value;
}

template <typename T>
void append_be(std::string& out, T value) {
  char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::little && sizeof(T) > 1) {
    std::reverse(raw, raw + sizeof(T));
  }
  out.append(raw, sizeof(T));
}

std::string card(const std::string& key, const std::string& value, bool quoted) {
  std::string c = key;
  c.resize(8, ' ');
  c += "= ";
  if (quoted) {
    std::string q = "'" + value;
    if (q.size() < 9) q.resize(9, ' ');
    q += "'";
    c += q;
  } else {
    std::string v = value;
    if (v.size() < 20) v.insert(0, 20 - v.size(), ' ');
    c += v;
  }
  c.resize(kCard, ' ');
  return c;
}

void pad(std::string& s, char fill) {
  const std::size_t rem = s.size() % kBlock;
  if (rem != 0) s.append(kBlock - rem, fill);
}

std::string end_header(std::string cards) {
  std::string end = "END";
  end.resize(kCard, ' ');
  cards += end;
  pad(cards, ' ');
  return cards;
}

}  // namespace

std::optional<std::string> HealpixTable::keyword(const std::string& key) const {
  const auto it = keywords.find(key);
  if (it == keywords.end()) return std::nullopt;
  return it->second;
}

bool looks_like_fits(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  char head[9] = {};
  in.read(head, 9);
  return in.gcount() == 9 && std::string(head, 9) == "SIMPLE  =";
}

HealpixTable read_first_column(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  const Header primary = parse_header(bytes, 0);
  const std::size_t ext_offset = primary.end_offset + data_size(primary);
  const Header ext = parse_header(bytes, ext_offset);
  const auto xt = ext.keywords.find("XTENSION");
  require(xt != ext.keywords.end() && xt->second == "BINTABLE", ErrorCode::kMalformedHeader,
          "first FITS extension is not a binary table");
  const long long row_bytes = int_keyword(ext, "NAXIS1");
  const long long rows = int_keyword(ext, "NAXIS2");
  require(int_keyword(ext, "TFIELDS") >= 1, ErrorCode::kMalformedHeader, "binary table has no columns");
  const auto tform_it = ext.keywords.find("TFORM1");
  require(tform_it != ext.keywords.end(), ErrorCode::kMalformedHeader, "TFORM1 missing");
  const std::string tform = tform_it->second;
  std::size_t digits = 0;
  while (digits < tform.size() && std::isdigit(static_cast<unsigned char>(tform[digits]))) ++digits;
  require(digits < tform.size(), ErrorCode::kMalformedHeader, "bad TFORM1 " + tform);
  const long long repeat = digits == 0 ? 1 : std::stoll(tform.substr(0, digits));
  const char type = tform[digits];
  std::size_t width = 0;
  switch (type) {
    case 'D': case 'K': width = 8; break;
    case 'E': case 'J': width = 4; break;
    case 'I': width = 2; break;
    case 'B': width = 1; break;
    default: fail(ErrorCode::kMalformedHeader, "unsupported TFORM1 type " + tform);
  }
  require(static_cast<long long>(width) * repeat <= row_bytes, ErrorCode::kMalformedHeader,
          "TFORM1 wider than a table row");
  require(ext.end_offset + static_cast<std::size_t>(row_bytes * rows) <= bytes.size(),
          ErrorCode::kLengthMismatch, "FITS table truncated");

  HealpixTable table;
  table.keywords = primary.keywords;
  for (const auto& [k, v] : ext.keywords) table.keywords[k] = v;
  table.column.reserve(static_cast<std::size_t>(rows * repeat));
  for (long long r = 0; r < rows; ++r) {
    const char* row = bytes.data() + ext.end_offset + static_cast<std::size_t>(r * row_bytes);
    for (long long k = 0; k < repeat; ++k) {
      const char* p = row + static_cast<std::size_t>(k) * width;
      double v = 0.0;
      switch (type) {
        case 'D': v = read_be<double>(p); break;
        case 'E': v = static_cast<double>(read_be<float>(p)); break;
        case 'K': v = static_cast<double>(read_be<std::int64_t>(p)); break;
        case 'J': v = static_cast<double>(read_be<std::int32_t>(p)); break;
        case 'I': v = static_cast<double>(read_be<std::int16_t>(p)); break;
        default: v = static_cast<double>(static_cast<unsigned char>(*p)); break;
      }
      table.column.push_back(v);
    }
  }
  return table;
}

void write_healpix_table(const std::filesystem::path& path, const std::vector<double>& values,
                         std::int64_t n_side, bool nested, const std::string& column_name,
                         std::optional<double> bad_value) {
  std::string out = end_header(card("SIMPLE", "T", false) + card("BITPIX", "8", false) +
                               card("NAXIS", "0", false) + card("EXTEND", "T", false));
  std::string ext = card("XTENSION", "BINTABLE", true) + card("BITPIX", "8", false) +
                    card("NAXIS", "2", false) + card("NAXIS1", "8", false) +
                    card("NAXIS2", std::to_string(values.size()), false) +
                    card("PCOUNT", "0", false) + card("GCOUNT", "1", false) +
                    card("TFIELDS", "1", false) + card("TTYPE1", column_name, true) +
                    card("TFORM1", "D", true) + card("PIXTYPE", "HEALPIX", true) +
                    card("ORDERING", nested ? "NESTED" : "RING", true) +
                    card("NSIDE", std::to_string(n_side), false) +
                    card("FIRSTPIX", "0", false) +
                    card("LASTPIX", std::to_string(values.size() - 1), false) +
                    card("INDXSCHM", "IMPLICIT", true);
  if (bad_value) {
    std::ostringstream s;
    s.precision(17);
    s << std::uppercase << *bad_value;
    ext += card("BAD_DATA", s.str(), false);
  }
  out += end_header(ext);
  std::string data;
  data.reserve(values.size() * 8);
  for (double v : values) append_be(data, v);
  pad(data, '\0');
  out += data;
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(static_cast<bool>(f), ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace cosmovae::fits
