#include "cosmovae/healpix.hpp"

#include <cmath>
#include <numbers>

#include "cosmovae/error.hpp"

namespace cosmovae::healpix {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kHalfPi = 0.5 * std::numbers::pi;

std::int64_t isqrt(std::int64_t v) {
  auto r = static_cast<std::int64_t>(std::sqrt(static_cast<double>(v) + 0.5));
  while (r * r > v) --r;
  while ((r + 1) * (r + 1) <= v) ++r;
  return r;
}

std::int64_t imod(std::int64_t a, std::int64_t n) {
  const std::int64_t r = a % n;
  return r < 0 ? r + n : r;
}

double wrap_phi(double phi) {
  double p = std::fmod(phi, kTwoPi);
  if (p < 0.0) p += kTwoPi;
  if (p >= kTwoPi) p = 0.0;
  return p;
}

// Index of the ring directly north of z (0 when z lies above the first ring).
std::int64_t ring_above(std::int64_t n_side, double z) {
  const double az = std::abs(z);
  if (az <= 2.0 / 3.0) {
    return static_cast<std::int64_t>(static_cast<double>(n_side) * (2.0 - 1.5 * z));
  }
  const auto iring =
      static_cast<std::int64_t>(static_cast<double>(n_side) * std::sqrt(3.0 * (1.0 - az)));
  return z > 0.0 ? iring : 4 * n_side - iring - 1;
}

double ring_value(const RingInfo& ring, std::span<const double> values, double phi) {
  const double dphi = kTwoPi / static_cast<double>(ring.n_pixels);
  const double t = (phi - ring.phi0) / dphi;
  const double fl = std::floor(t);
  const double w = t - fl;
  const std::int64_t k0 = imod(static_cast<std::int64_t>(fl), ring.n_pixels);
  const std::int64_t k1 = (k0 + 1) % ring.n_pixels;
  return (1.0 - w) * values[static_cast<std::size_t>(ring.first_pixel + k0)] +
         w * values[static_cast<std::size_t>(ring.first_pixel + k1)];
}

double ring_mean(const RingInfo& ring, std::span<const double> values) {
  double sum = 0.0;
  for (std::int64_t k = 0; k < ring.n_pixels; ++k) {
    sum += values[static_cast<std::size_t>(ring.first_pixel + k)];
  }
  return sum / static_cast<double>(ring.n_pixels);
}

constexpr int kJrll[12] = {2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4};
constexpr int kJpll[12] = {1, 3, 5, 7, 0, 2, 4, 6, 1, 3, 5, 7};

}  // namespace

bool is_valid_nside(std::int64_t n_side) {
  return n_side > 0 && n_side <= (std::int64_t{1} << 29) && (n_side & (n_side - 1)) == 0;
}

std::int64_t npix(std::int64_t n_side) { return 12 * n_side * n_side; }

std::int64_t nrings(std::int64_t n_side) { return 4 * n_side - 1; }

Angles pix2ang_ring(std::int64_t n_side, std::int64_t pixel) {
  const std::int64_t n_pix = npix(n_side);
  require(pixel >= 0 && pixel < n_pix, ErrorCode::kInvalidArgument, "pixel index out of range");
  const std::int64_t ncap = 2 * n_side * (n_side - 1);
  const double fact2 = 4.0 / static_cast<double>(n_pix);
  double z = 0.0;
  double phi = 0.0;
  if (pixel < ncap) {
    const std::int64_t iring = (1 + isqrt(1 + 2 * pixel)) >> 1;
    const std::int64_t iphi = pixel + 1 - 2 * iring * (iring - 1);
    z = 1.0 - static_cast<double>(iring * iring) * fact2;
    phi = (static_cast<double>(iphi) - 0.5) * kHalfPi / static_cast<double>(iring);
  } else if (pixel < n_pix - ncap) {
    const std::int64_t ip = pixel - ncap;
    const std::int64_t iring = ip / (4 * n_side) + n_side;
    const std::int64_t iphi = ip % (4 * n_side) + 1;
    const double fodd = ((iring + n_side) & 1) ? 1.0 : 0.5;
    z = static_cast<double>(2 * n_side - iring) * 2.0 / (3.0 * static_cast<double>(n_side));
    phi = (static_cast<double>(iphi) - fodd) * kPi / static_cast<double>(2 * n_side);
  } else {
    const std::int64_t ip = n_pix - pixel;
    const std::int64_t iring = (1 + isqrt(2 * ip - 1)) >> 1;
    const std::int64_t iphi = 4 * iring + 1 - (ip - 2 * iring * (iring - 1));
    z = -1.0 + static_cast<double>(iring * iring) * fact2;
    phi = (static_cast<double>(iphi) - 0.5) * kHalfPi / static_cast<double>(iring);
  }
  return {std::acos(z), phi};
}

std::int64_t ang2pix_ring(std::int64_t n_side, double theta, double phi) {
  require(theta >= 0.0 && theta <= kPi, ErrorCode::kInvalidArgument, "theta out of range");
  const double z = std::cos(theta);
  const double za = std::abs(z);
  const double tt = wrap_phi(phi) / kHalfPi;  // [0, 4)
  const auto ns = static_cast<double>(n_side);
  if (za <= 2.0 / 3.0) {
    const double temp1 = ns * (0.5 + tt);
    const double temp2 = ns * z * 0.75;
    const auto jp = static_cast<std::int64_t>(temp1 - temp2);
    const auto jm = static_cast<std::int64_t>(temp1 + temp2);
    const std::int64_t ir = n_side + 1 + jp - jm;
    const std::int64_t kshift = 1 - (ir & 1);
    const std::int64_t ip = imod((jp + jm - n_side + kshift + 1) / 2, 4 * n_side);
    return 2 * n_side * (n_side - 1) + (ir - 1) * 4 * n_side + ip;
  }
  const double tp = tt - std::floor(tt);
  const double tmp = ns * std::sqrt(3.0 * (1.0 - za));
  const auto jp = static_cast<std::int64_t>(tp * tmp);
  const auto jm = static_cast<std::int64_t>((1.0 - tp) * tmp);
  const std::int64_t ir = jp + jm + 1;
  const std::int64_t ip = imod(static_cast<std::int64_t>(tt * static_cast<double>(ir)), 4 * ir);
  if (z > 0.0) return 2 * ir * (ir - 1) + ip;
  return npix(n_side) - 2 * ir * (ir + 1) + ip;
}

std::int64_t nest2ring(std::int64_t n_side, std::int64_t pixel) {
  const std::int64_t n_pix = npix(n_side);
  require(pixel >= 0 && pixel < n_pix, ErrorCode::kInvalidArgument, "pixel index out of range");
  const std::int64_t face_pixels = n_side * n_side;
  const auto face = static_cast<int>(pixel / face_pixels);
  std::int64_t ipf = pixel % face_pixels;
  std::int64_t ix = 0;
  std::int64_t iy = 0;
  for (int bit = 0; ipf != 0; ++bit) {
    ix |= (ipf & 1) << bit;
    ipf >>= 1;
    iy |= (ipf & 1) << bit;
    ipf >>= 1;
  }
  const std::int64_t nl4 = 4 * n_side;
  const std::int64_t jr = kJrll[face] * n_side - ix - iy - 1;
  std::int64_t nr = 0;
  std::int64_t n_before = 0;
  std::int64_t kshift = 0;
  if (jr < n_side) {
    nr = jr;
    n_before = 2 * nr * (nr - 1);
  } else if (jr > 3 * n_side) {
    nr = nl4 - jr;
    n_before = n_pix - 2 * (nr + 1) * nr;
  } else {
    nr = n_side;
    n_before = 2 * n_side * (n_side - 1) + (jr - n_side) * nl4;
    kshift = (jr - n_side) & 1;
  }
  std::int64_t jp = (kJpll[face] * nr + ix - iy + 1 + kshift) / 2;
  if (jp > nl4) jp -= nl4;
  if (jp < 1) jp += nl4;
  return n_before + jp - 1;
}

std::int64_t ring2nest(std::int64_t n_side, std::int64_t pixel) {
  const std::int64_t n_pix = npix(n_side);
  require(pixel >= 0 && pixel < n_pix, ErrorCode::kInvalidArgument, "pixel index out of range");
  const std::int64_t ncap = 2 * n_side * (n_side - 1);
  const std::int64_t nl2 = 2 * n_side;
  std::int64_t iring = 0;
  std::int64_t iphi = 0;  // 1-based position within the ring
  std::int64_t kshift = 0;
  std::int64_t nr = 0;
  std::int64_t face = 0;
  if (pixel < ncap) {
    iring = (1 + isqrt(1 + 2 * pixel)) >> 1;
    iphi = pixel + 1 - 2 * iring * (iring - 1);
    nr = iring;
    face = (iphi - 1) / nr;
  } else if (pixel < n_pix - ncap) {
    const std::int64_t ip = pixel - ncap;
    const std::int64_t tmp = ip / (4 * n_side);
    iring = tmp + n_side;
    iphi = ip - tmp * 4 * n_side + 1;
    kshift = (iring + n_side) & 1;
    nr = n_side;
    const std::int64_t ire = tmp + 1;
    const std::int64_t irm = nl2 + 2 - ire;
    const std::int64_t ifm = (iphi - ire / 2 + n_side - 1) / n_side;
    const std::int64_t ifp = (iphi - irm / 2 + n_side - 1) / n_side;
    if (ifp == ifm) {
      face = ifp == 4 ? 4 : ifp + 4;
    } else if (ifp < ifm) {
      face = ifp;
    } else {
      face = ifm + 8;
    }
  } else {
    const std::int64_t ip = n_pix - pixel;
    iring = (1 + isqrt(2 * ip - 1)) >> 1;
    iphi = 4 * iring + 1 - (ip - 2 * iring * (iring - 1));
    nr = iring;
    iring = 2 * nl2 - iring;
    face = (iphi - 1) / nr + 8;
  }
  const std::int64_t irt = iring - kJrll[face] * n_side + 1;
  std::int64_t ipt = 2 * iphi - kJpll[face] * nr - kshift - 1;
  if (ipt >= nl2) ipt -= 8 * n_side;
  const std::int64_t ix = (ipt - irt) >> 1;
  const std::int64_t iy = (-ipt - irt) >> 1;
  require(ix >= 0 && ix < n_side && iy >= 0 && iy < n_side, ErrorCode::kInvalidArgument,
          "ring2nest: face coordinates out of range");
  std::int64_t ipf = 0;
  for (int bit = 0; (ix >> bit) != 0 || (iy >> bit) != 0; ++bit) {
    ipf |= ((ix >> bit) & 1) << (2 * bit);
    ipf |= ((iy >> bit) & 1) << (2 * bit + 1);
  }
  return face * n_side * n_side + ipf;
}

RingInfo ring_info(std::int64_t n_side, std::int64_t ring) {
  require(ring >= 1 && ring <= nrings(n_side), ErrorCode::kInvalidArgument, "ring out of range");
  RingInfo info{};
  const auto ns = static_cast<double>(n_side);
  if (ring < n_side) {
    info.n_pixels = 4 * ring;
    info.first_pixel = 2 * ring * (ring - 1);
    info.z = 1.0 - static_cast<double>(ring * ring) / (3.0 * ns * ns);
    info.phi0 = kPi / static_cast<double>(info.n_pixels);
  } else if (ring <= 3 * n_side) {
    info.n_pixels = 4 * n_side;
    info.first_pixel = 2 * n_side * (n_side - 1) + (ring - n_side) * 4 * n_side;
    info.z = static_cast<double>(2 * n_side - ring) * 2.0 / (3.0 * ns);
    const bool shifted = ((ring + n_side) & 1) == 0;
    info.phi0 = shifted ? kPi / static_cast<double>(info.n_pixels) : 0.0;
  } else {
    const std::int64_t mirror = 4 * n_side - ring;
    info.n_pixels = 4 * mirror;
    info.first_pixel = npix(n_side) - 2 * mirror * (mirror + 1);
    info.z = -1.0 + static_cast<double>(mirror * mirror) / (3.0 * ns * ns);
    info.phi0 = kPi / static_cast<double>(info.n_pixels);
  }
  info.theta = std::acos(info.z);
  return info;
}

double interpolate_ring(std::int64_t n_side, std::span<const double> values, double theta,
                        double phi) {
  require(static_cast<std::int64_t>(values.size()) == npix(n_side), ErrorCode::kLengthMismatch,
          "map length does not match n_side");
  const double p = wrap_phi(phi);
  const std::int64_t above = ring_above(n_side, std::cos(theta));
  const std::int64_t last = nrings(n_side);
  if (above <= 0) {
    const RingInfo r = ring_info(n_side, 1);
    const double w = theta / r.theta;
    return w * ring_value(r, values, p) + (1.0 - w) * ring_mean(r, values);
  }
  if (above >= last) {
    const RingInfo r = ring_info(n_side, last);
    const double w = (kPi - theta) / (kPi - r.theta);
    return w * ring_value(r, values, p) + (1.0 - w) * ring_mean(r, values);
  }
  const RingInfo r1 = ring_info(n_side, above);
  const RingInfo r2 = ring_info(n_side, above + 1);
  const double w = (theta - r1.theta) / (r2.theta - r1.theta);
  return (1.0 - w) * ring_value(r1, values, p) + w * ring_value(r2, values, p);
}

}  // namespace cosmovae::healpix
