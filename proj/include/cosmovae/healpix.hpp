#pragma once

#include <cstdint>
#include <span>

namespace cosmovae::healpix {

/// Pixel-center direction: colatitude theta in [0, pi], longitude phi in [0, 2 pi).
struct Angles {
  double theta;
  double phi;
};

/// One iso-latitude ring of the grid, rings numbered 1..4*n_side-1 from the north pole.
struct RingInfo {
  std::int64_t first_pixel;
  std::int64_t n_pixels;
  double z;          // cos(theta) of the ring
  double phi0;       // longitude of the first pixel center
  double theta;
};

bool is_valid_nside(std::int64_t n_side);
std::int64_t npix(std::int64_t n_side);
std::int64_t nrings(std::int64_t n_side);

Angles pix2ang_ring(std::int64_t n_side, std::int64_t pixel);
std::int64_t ang2pix_ring(std::int64_t n_side, double theta, double phi);

std::int64_t nest2ring(std::int64_t n_side, std::int64_t pixel);
std::int64_t ring2nest(std::int64_t n_side, std::int64_t pixel);

RingInfo ring_info(std::int64_t n_side, std::int64_t ring);

/// Ring-ordered bilinear interpolation: linear in longitude along the two rings
/// bracketing theta, then linear in colatitude between them. Above the first
/// (below the last) ring the pole value is taken as the mean of that ring.
double interpolate_ring(std::int64_t n_side, std::span<const double> values,
                        double theta, double phi);

}  // namespace cosmovae::healpix
