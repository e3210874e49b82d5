#include "cosmovae/grf.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "cosmovae/error.hpp"
#include "cosmovae/healpix.hpp"

namespace cosmovae::grf {
namespace {

constexpr double kFourPi = 4.0 * std::numbers::pi;

void check_direct_sum(int ell_max) {
  require(ell_max <= kDirectSumEllMax, ErrorCode::kEllMaxTooLarge,
          "ell_max " + std::to_string(ell_max) + " exceeds the direct-summation limit " +
              std::to_string(kDirectSumEllMax));
}

}  // namespace

AlmSet::AlmSet(int ell_max) : ell_max_(ell_max) {
  require(ell_max >= 0, ErrorCode::kInvalidArgument, "ell_max must be non-negative");
  coeffs_.assign(static_cast<std::size_t>(ell_max + 1) * (ell_max + 2) / 2, {0.0, 0.0});
}

std::complex<double> AlmSet::at(int ell, int m) const {
  require(ell >= 0 && ell <= ell_max_ && std::abs(m) <= ell, ErrorCode::kInvalidArgument,
          "(ell, m) outside the stored range");
  if (m >= 0) return (*this)(ell, m);
  const std::complex<double> c = std::conj((*this)(ell, -m));
  return (-m) % 2 == 0 ? c : -c;
}

void validate(const PowerSpectrum& spectrum) {
  require(!spectrum.values.empty(), ErrorCode::kInvalidArgument, "empty power spectrum");
  for (std::size_t l = 0; l < spectrum.values.size(); ++l) {
    require(std::isfinite(spectrum.values[l]) && spectrum.values[l] >= 0.0,
            ErrorCode::kInvalidArgument, "C_ell must be finite and >= 0 (ell=" + std::to_string(l) + ")");
  }
}

void validate(const AlmSet& alm) {
  require(alm.ell_max() >= 0, ErrorCode::kInvalidArgument, "empty AlmSet");
  for (int l = 0; l <= alm.ell_max(); ++l) {
    require(alm(l, 0).imag() == 0.0, ErrorCode::kInvalidArgument,
            "a_l0 must be real (ell=" + std::to_string(l) + ")");
  }
}

std::vector<double> normalized_legendre(int ell_max, double x) {
  std::vector<double> lam(static_cast<std::size_t>(ell_max + 1) * (ell_max + 2) / 2, 0.0);
  const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
  double diag = 1.0 / std::sqrt(kFourPi);
  for (int m = 0; m <= ell_max; ++m) {
    if (m > 0) diag *= -std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * s;
    lam[AlmSet::index(m, m)] = diag;
    if (m == ell_max) break;
    double prev2 = diag;
    double prev1 = x * std::sqrt(2.0 * m + 3.0) * diag;
    lam[AlmSet::index(m + 1, m)] = prev1;
    for (int l = m + 2; l <= ell_max; ++l) {
      const double ll = l;
      const double mm = m;
      const double a = std::sqrt((4.0 * ll * ll - 1.0) / (ll * ll - mm * mm));
      const double b = std::sqrt(((ll - 1.0) * (ll - 1.0) - mm * mm) /
                                 (4.0 * (ll - 1.0) * (ll - 1.0) - 1.0));
      const double cur = a * (x * prev1 - b * prev2);
      lam[AlmSet::index(l, m)] = cur;
      prev2 = prev1;
      prev1 = cur;
    }
  }
  return lam;
}

AlmSet sample_alm(const PowerSpectrum& spectrum, std::uint64_t seed) {
  validate(spectrum);
  AlmSet alm(spectrum.ell_max());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int l = 0; l <= alm.ell_max(); ++l) {
    const double sd = std::sqrt(spectrum.values[static_cast<std::size_t>(l)]);
    const double sd_half = std::sqrt(0.5 * spectrum.values[static_cast<std::size_t>(l)]);
    alm(l, 0) = {sd * normal(rng), 0.0};
    for (int m = 1; m <= l; ++m) {
      const double re = sd_half * normal(rng);
      const double im = sd_half * normal(rng);
      alm(l, m) = {re, im};
    }
  }
  return alm;
}

SphereMap synthesize(const AlmSet& alm, std::int64_t n_side,
                     std::optional<FieldConstants> constants) {
  validate(alm);
  check_direct_sum(alm.ell_max());
  require(healpix::is_valid_nside(n_side), ErrorCode::kInvalidArgument,
          "n_side must be a positive power of two");
  if (constants) {
    require(constants->t_cmb > 0.0, ErrorCode::kInvalidArgument, "t_cmb must be positive");
  }
  const int lmax = alm.ell_max();
  SphereMap map;
  map.n_side = n_side;
  map.values.assign(static_cast<std::size_t>(healpix::npix(n_side)), 0.0);
  std::vector<std::complex<double>> f_m(static_cast<std::size_t>(lmax + 1));
  for (std::int64_t r = 1; r <= healpix::nrings(n_side); ++r) {
    const healpix::RingInfo ring = healpix::ring_info(n_side, r);
    const std::vector<double> lam = normalized_legendre(lmax, ring.z);
    for (int m = 0; m <= lmax; ++m) {
      std::complex<double> acc{0.0, 0.0};
      for (int l = m; l <= lmax; ++l) acc += alm(l, m) * lam[AlmSet::index(l, m)];
      f_m[static_cast<std::size_t>(m)] = acc;
    }
    const double dphi = 2.0 * std::numbers::pi / static_cast<double>(ring.n_pixels);
    for (std::int64_t k = 0; k < ring.n_pixels; ++k) {
      const double phi = ring.phi0 + static_cast<double>(k) * dphi;
      double value = f_m[0].real();
      for (int m = 1; m <= lmax; ++m) {
        const std::complex<double> phase = std::polar(1.0, m * phi);
        value += 2.0 * (f_m[static_cast<std::size_t>(m)] * phase).real();
      }
      map.values[static_cast<std::size_t>(ring.first_pixel + k)] =
          constants ? constants->t_cmb * (1.0 + value) : value;
    }
  }
  return map;
}

AlmSet analyze(const SphereMap& map, int ell_max) {
  validate(map);
  require(ell_max >= 0, ErrorCode::kInvalidArgument, "ell_max must be non-negative");
  check_direct_sum(ell_max);
  require(ell_max <= 3 * map.n_side - 1, ErrorCode::kEllMaxTooLarge,
          "ell_max " + std::to_string(ell_max) + " too large for n_side " +
              std::to_string(map.n_side) + " (limit 3*n_side-1)");
  AlmSet alm(ell_max);
  const double weight = kFourPi / static_cast<double>(map.npix());
  std::vector<std::complex<double>> g_m(static_cast<std::size_t>(ell_max + 1));
  for (std::int64_t r = 1; r <= healpix::nrings(map.n_side); ++r) {
    const healpix::RingInfo ring = healpix::ring_info(map.n_side, r);
    std::fill(g_m.begin(), g_m.end(), std::complex<double>{0.0, 0.0});
    const double dphi = 2.0 * std::numbers::pi / static_cast<double>(ring.n_pixels);
    for (std::int64_t k = 0; k < ring.n_pixels; ++k) {
      const auto p = static_cast<std::size_t>(ring.first_pixel + k);
      if (map.is_bad(p)) continue;
      const double phi = ring.phi0 + static_cast<double>(k) * dphi;
      const double v = map.values[p];
      for (int m = 0; m <= ell_max; ++m) g_m[static_cast<std::size_t>(m)] += v * std::polar(1.0, -m * phi);
    }
    const std::vector<double> lam = normalized_legendre(ell_max, ring.z);
    for (int l = 0; l <= ell_max; ++l) {
      for (int m = 0; m <= l; ++m) {
        alm(l, m) += weight * lam[AlmSet::index(l, m)] * g_m[static_cast<std::size_t>(m)];
      }
    }
  }
  // The m = 0 quadrature is real up to rounding; keep the stored invariant exact.
  for (int l = 0; l <= ell_max; ++l) alm(l, 0) = {alm(l, 0).real(), 0.0};
  return alm;
}

PowerSpectrum estimate_spectrum(const AlmSet& alm) {
  PowerSpectrum out;
  out.values.assign(static_cast<std::size_t>(alm.ell_max() + 1), 0.0);
  for (int l = 0; l <= alm.ell_max(); ++l) {
    double sum = std::norm(alm(l, 0));
    for (int m = 1; m <= l; ++m) sum += 2.0 * std::norm(alm(l, m));
    out.values[static_cast<std::size_t>(l)] = sum / (2.0 * l + 1.0);
  }
  return out;
}

std::vector<double> prior_variances(const PowerSpectrum& spectrum, int latent_dim,
                                    double variance_floor, const LatentToEll& mapping) {
  validate(spectrum);
  require(latent_dim > 0, ErrorCode::kInvalidArgument, "latent_dim must be positive");
  require(variance_floor > 0.0, ErrorCode::kInvalidArgument, "variance floor must be positive");
  std::vector<double> out(static_cast<std::size_t>(latent_dim));
  for (int k = 0; k < latent_dim; ++k) {
    const int ell = mapping ? mapping(k) : k;
    require(ell >= 0 && ell <= spectrum.ell_max(), ErrorCode::kInvalidArgument,
            "latent component " + std::to_string(k) + " maps to ell=" + std::to_string(ell) +
                " beyond the spectrum's ell_max " + std::to_string(spectrum.ell_max()));
    out[static_cast<std::size_t>(k)] =
        std::max(spectrum.values[static_cast<std::size_t>(ell)], variance_floor);
  }
  return out;
}

PowerSpectrum read_spectrum(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open spectrum file " + path.string());
  PowerSpectrum spectrum;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    double ell = 0.0;
    double cl = 0.0;
    if (!(ls >> ell)) continue;  // blank
    require(static_cast<bool>(ls >> cl), ErrorCode::kMalformedHeader,
            "spectrum line " + std::to_string(line_no) + " needs two columns");
    require(ell == static_cast<double>(spectrum.values.size()), ErrorCode::kMalformedHeader,
            "spectrum multipoles must be contiguous from 0 (line " + std::to_string(line_no) + ")");
    spectrum.values.push_back(cl);
  }
  require(!spectrum.values.empty(), ErrorCode::kMalformedHeader,
          "spectrum file has no data: " + path.string());
  try {
    validate(spectrum);
  } catch (const Error& e) {
    fail(ErrorCode::kMalformedHeader, std::string("bad spectrum file: ") + e.what());
  }
  return spectrum;
}

void write_spectrum(const std::filesystem::path& path, const PowerSpectrum& spectrum) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << "# ell C_ell\n";
  out << std::setprecision(17);
  for (std::size_t l = 0; l < spectrum.values.size(); ++l) {
    out << l << ' ' << spectrum.values[l] << '\n';
  }
}

}  // namespace cosmovae::grf
