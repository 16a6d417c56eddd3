#pragma once

#include <optional>
#include <stdexcept>

#include "dmslam/types.hpp"

namespace dmslam {

// Raised when the MT coincides with the (virtual) anchor it is measured from.
struct DegenerateRay : std::domain_error {
  using std::domain_error::domain_error;
};

// Uniform rectangular array template in the local yz-plane, centred on the origin.
// Column m = iy*nz + iz holds (0, py[iy], pz[iz]).
struct UraGeometry {
  int ny = 1;
  int nz = 1;
  double dy = 0.0;
  double dz = 0.0;
  VecX py;
  VecX pz;
  Mat3X tmpl;

  int count() const { return ny * nz; }
};

struct PaConfig {
  Vec3 position = Vec3::Zero();
  Mat3 orientation = Mat3::Identity();
  UraGeometry geometry;
};

struct SphericalParams {
  double delay = 0.0;
  double elevation = 0.0;
  double azimuth = 0.0;
  bool pole = false;  // r_x = r_y = 0, azimuth pinned to 0
};

UraGeometry template_layout(int ny, int nz, double dy, double dz);

Mat3X pa_layout(const PaConfig& pa);

// Element positions of the virtual anchor mirrored across the surface encoded by psfv.
Mat3X va_layout(const PaConfig& pa, const Vec3& psfv);

Mat3 householder(const Vec3& psfv);

Vec3 sfv_to_va(const Vec3& pa, const Vec3& psfv);

// PA-local ray towards the (virtual) MT. Empty psfv selects the LOS component.
Vec3 local_ray(const Vec3& p_mt, const std::optional<Vec3>& psfv, const PaConfig& pa);

SphericalParams spherical_params(const Vec3& r);

Vec3 direction_cosines(double elevation, double azimuth);

// Active rotation built as Rz(yaw) * Ry(pitch) * Rx(roll), angles in radians.
Mat3 rotation_ypr(double yaw, double pitch, double roll);

}  // namespace dmslam
