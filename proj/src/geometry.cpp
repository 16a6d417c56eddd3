#include "dmslam/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace dmslam {

namespace {

VecX centred_axis(int n, double d) {
  VecX v(n);
  for (int i = 0; i < n; ++i) v[i] = (i - 0.5 * (n - 1)) * d;
  return v;
}

void require_sfv(const Vec3& psfv) {
  if (!(psfv.squaredNorm() > 0.0)) throw std::invalid_argument("surface feature at the origin");
}

}  // namespace

UraGeometry template_layout(int ny, int nz, double dy, double dz) {
  if (ny < 1 || nz < 1) throw std::invalid_argument("array counts must be positive");
  if (!(dy > 0.0) || !(dz > 0.0)) throw std::invalid_argument("array spacing must be positive");
  UraGeometry g;
  g.ny = ny;
  g.nz = nz;
  g.dy = dy;
  g.dz = dz;
  g.py = centred_axis(ny, dy);
  g.pz = centred_axis(nz, dz);
  g.tmpl = Mat3X::Zero(3, ny * nz);
  for (int iy = 0; iy < ny; ++iy) {
    for (int iz = 0; iz < nz; ++iz) {
      g.tmpl(1, iy * nz + iz) = g.py[iy];
      g.tmpl(2, iy * nz + iz) = g.pz[iz];
    }
  }
  return g;
}

Mat3X pa_layout(const PaConfig& pa) {
  Mat3X out = pa.orientation * pa.geometry.tmpl;
  out.colwise() += pa.position;
  return out;
}

Mat3X va_layout(const PaConfig& pa, const Vec3& psfv) {
  Mat3X out = householder(psfv) * pa.orientation * pa.geometry.tmpl;
  out.colwise() += sfv_to_va(pa.position, psfv);
  return out;
}

Mat3 householder(const Vec3& psfv) {
  require_sfv(psfv);
  return Mat3::Identity() - 2.0 * psfv * psfv.transpose() / psfv.squaredNorm();
}

Vec3 sfv_to_va(const Vec3& pa, const Vec3& psfv) {
  require_sfv(psfv);
  const double s2 = psfv.squaredNorm();
  return pa - (2.0 * pa.dot(psfv) / s2 - 1.0) * psfv;
}

Vec3 local_ray(const Vec3& p_mt, const std::optional<Vec3>& psfv, const PaConfig& pa) {
  Vec3 r;
  if (!psfv) {
    r = pa.orientation.transpose() * (p_mt - pa.position);
  } else {
    const Vec3 va = sfv_to_va(pa.position, *psfv);
    r = pa.orientation.transpose() * (householder(*psfv) * (p_mt - va));
  }
  if (!(r.squaredNorm() > 0.0)) throw DegenerateRay("MT coincides with anchor");
  return r;
}

SphericalParams spherical_params(const Vec3& r) {
  const double norm = r.norm();
  if (!(norm > 0.0)) throw DegenerateRay("zero-length ray");
  SphericalParams s;
  s.delay = norm / kSpeedOfLight;
  s.elevation = std::acos(std::clamp(r.z() / norm, -1.0, 1.0));
  if (r.x() == 0.0 && r.y() == 0.0) {
    s.azimuth = 0.0;
    s.pole = true;
  } else {
    s.azimuth = std::atan2(r.y(), r.x());
  }
  return s;
}

Vec3 direction_cosines(double elevation, double azimuth) {
  return {std::sin(elevation) * std::cos(azimuth), std::sin(elevation) * std::sin(azimuth),
          std::cos(elevation)};
}

Mat3 rotation_ypr(double yaw, double pitch, double roll) {
  return (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
          Eigen::AngleAxisd(roll, Vec3::UnitX()))
      .toRotationMatrix();
}

}  // namespace dmslam
