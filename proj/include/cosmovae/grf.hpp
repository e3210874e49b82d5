#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "cosmovae/sphere_map.hpp"

namespace cosmovae::grf {

/// Largest multipole handled by the direct-summation transforms.
inline constexpr int kDirectSumEllMax = 64;
inline constexpr double kDefaultVarianceFloor = 1e-12;
inline constexpr double kDefaultTcmb = 2.7255;

struct PowerSpectrum {
  std::vector<double> values;  // C_ell for ell = 0..ell_max

  int ell_max() const { return static_cast<int>(values.size()) - 1; }
  bool operator==(const PowerSpectrum&) const = default;
};

/// Harmonic coefficients for 0 <= m <= ell <= ell_max; negative m follow from
/// a_{l,-m} = (-1)^m conj(a_{lm}).
class AlmSet {
 public:
  AlmSet() = default;
  explicit AlmSet(int ell_max);

  int ell_max() const { return ell_max_; }
  std::size_t size() const { return coeffs_.size(); }
  static std::size_t index(int ell, int m) {
    return static_cast<std::size_t>(ell) * (ell + 1) / 2 + static_cast<std::size_t>(m);
  }
  std::complex<double>& operator()(int ell, int m) { return coeffs_[index(ell, m)]; }
  const std::complex<double>& operator()(int ell, int m) const { return coeffs_[index(ell, m)]; }
  /// Coefficient for any m in [-ell, ell].
  std::complex<double> at(int ell, int m) const;

  const std::vector<std::complex<double>>& coefficients() const { return coeffs_; }
  bool operator==(const AlmSet&) const = default;

 private:
  int ell_max_ = -1;
  std::vector<std::complex<double>> coeffs_;
};

struct FieldConstants {
  double t_cmb = kDefaultTcmb;  // kelvin
};

void validate(const PowerSpectrum& spectrum);
void validate(const AlmSet& alm);

/// Orthonormal associated Legendre values lambda_lm(x), Condon-Shortley phase
/// included, so that Y_lm = lambda_lm(cos theta) e^{i m phi}. Result is indexed
/// with AlmSet::index.
std::vector<double> normalized_legendre(int ell_max, double x);

/// a_l0 ~ N(0, C_l) real; for m > 0 real and imaginary parts ~ N(0, C_l / 2).
AlmSet sample_alm(const PowerSpectrum& spectrum, std::uint64_t seed);

/// Real-field synthesis by direct summation on ring-ordered pixel centers.
/// With constants, the result is t_cmb * (1 + Theta).
SphereMap synthesize(const AlmSet& alm, std::int64_t n_side,
                     std::optional<FieldConstants> constants = std::nullopt);

/// Equal-area quadrature: a_lm = (4 pi / N_pix) sum_p map(p) conj(Y_lm(p)).
/// Pixels carrying the bad-value sentinel contribute nothing.
AlmSet analyze(const SphereMap& map, int ell_max);

/// Full-sky estimator C_l = (1 / (2l + 1)) sum_{m=-l}^{l} |a_lm|^2.
PowerSpectrum estimate_spectrum(const AlmSet& alm);

using LatentToEll = std::function<int(int)>;

/// Prior variance per latent component: C_ell for ell = mapping(k), identity by
/// default, floored at variance_floor.
std::vector<double> prior_variances(const PowerSpectrum& spectrum, int latent_dim,
                                    double variance_floor = kDefaultVarianceFloor,
                                    const LatentToEll& mapping = {});

/// Two-column text "ell C_ell"; '#' starts a comment; ell contiguous from 0.
PowerSpectrum read_spectrum(const std::filesystem::path& path);
void write_spectrum(const std::filesystem::path& path, const PowerSpectrum& spectrum);

}  // namespace cosmovae::grf
