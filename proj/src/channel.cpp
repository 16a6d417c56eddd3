#include "dmslam/channel.hpp"

#include <cmath>
#include <stdexcept>

namespace dmslam {

namespace {

inline cd unit_phase(double phase) { return {std::cos(phase), std::sin(phase)}; }

}  // namespace

RfParams RfParams::make(double fc, double bandwidth, int nf) {
  if (!(fc > 0.0)) throw std::invalid_argument("carrier frequency must be positive");
  if (nf < 1) throw std::invalid_argument("need at least one frequency bin");
  if (nf > 1 && !(bandwidth > 0.0)) throw std::invalid_argument("bandwidth must be positive");
  RfParams rf;
  rf.fc = fc;
  rf.bandwidth = bandwidth;
  rf.nf = nf;
  rf.freqs = VecX::Zero(nf);
  if (nf > 1) {
    const double df = bandwidth / (nf - 1);
    for (int i = 0; i < nf; ++i) rf.freqs[i] = (i - 0.5 * (nf - 1)) * df;
  }
  rf.wavelength = kSpeedOfLight / fc;
  return rf;
}

CVec delay_response(double tau, const RfParams& rf) {
  CVec b(rf.nf);
  for (int i = 0; i < rf.nf; ++i) b[i] = unit_phase(-2.0 * kPi * rf.freqs[i] * tau);
  return b;
}

CVec spatial_response(double elevation, double azimuth, const UraGeometry& geom, double lambda) {
  const double ky = 2.0 * kPi / lambda * std::sin(elevation) * std::sin(azimuth);
  const double kz = 2.0 * kPi / lambda * std::cos(elevation);
  CVec a(geom.count());
  for (int iy = 0; iy < geom.ny; ++iy) {
    const cd ay = unit_phase(ky * geom.py[iy]);
    for (int iz = 0; iz < geom.nz; ++iz) a[iy * geom.nz + iz] = ay * unit_phase(kz * geom.pz[iz]);
  }
  return a;
}

void planar_response_into(const Vec3& r, const RfParams& rf, const UraGeometry& geom,
                          bool unit_modulus, cd* out) {
  const double dist = r.norm();
  if (!(dist > 0.0)) throw DegenerateRay("zero-length ray");
  const double tau = dist / kSpeedOfLight;
  // sin(theta) sin(phi) = r_y/|r| and cos(theta) = r_z/|r|; no pole special case needed.
  const double ky = 2.0 * kPi / rf.wavelength * r.y() / dist;
  const double kz = 2.0 * kPi / rf.wavelength * r.z() / dist;
  const double gain = unit_modulus ? 1.0 : rf.wavelength / (4.0 * kPi * dist);
  const cd carrier = gain * unit_phase(-2.0 * kPi * rf.fc * tau);

  constexpr int kStack = 64;
  cd az_stack[kStack];
  std::vector<cd> az_heap;
  cd* az = az_stack;
  if (geom.nz > kStack) {
    az_heap.resize(geom.nz);
    az = az_heap.data();
  }
  for (int iz = 0; iz < geom.nz; ++iz) az[iz] = unit_phase(kz * geom.pz[iz]);

  const int na = geom.count();
  for (int f = 0; f < rf.nf; ++f) {
    const cd bf = carrier * unit_phase(-2.0 * kPi * rf.freqs[f] * tau);
    for (int iy = 0; iy < geom.ny; ++iy) {
      const cd by = bf * unit_phase(ky * geom.py[iy]);
      cd* row = out + f * na + iy * geom.nz;
      for (int iz = 0; iz < geom.nz; ++iz) row[iz] = by * az[iz];
    }
  }
}

CVec planar_response(const Vec3& r, const RfParams& rf, const UraGeometry& geom, bool unit_modulus) {
  CVec out(obs_length(rf, geom));
  planar_response_into(r, rf, geom, unit_modulus, out.data());
  return out;
}

CVec spherical_response(const Vec3& p_source, const PaConfig& pa, const std::optional<Vec3>& psfv,
                        const RfParams& rf) {
  const Mat3X layout = psfv ? va_layout(pa, *psfv) : pa_layout(pa);
  const int na = static_cast<int>(layout.cols());
  CVec out(rf.nf * na);
  for (int m = 0; m < na; ++m) {
    const double d = (p_source - layout.col(m)).norm();
    if (!(d > 0.0)) throw DegenerateRay("source coincides with an array element");
    for (int f = 0; f < rf.nf; ++f)
      out[f * na + m] = unit_phase(-2.0 * kPi * (rf.fc + rf.freqs[f]) * d / kSpeedOfLight);
  }
  return out;
}

CVec component_response(const Vec3& p_mt, const std::optional<Vec3>& psfv, const PaConfig& pa,
                        const RfParams& rf, Wavefront wf) {
  const Vec3 r = local_ray(p_mt, psfv, pa);
  if (wf == Wavefront::planar) return planar_response(r, rf, pa.geometry, false);
  return spherical_response(p_mt, pa, psfv, rf) * (rf.wavelength / (4.0 * kPi * r.norm()));
}

CVec generate_observation(const Vec3& p_mt, const std::vector<PathComponent>& comps,
                          const PaConfig& pa, const RfParams& rf, double noise_var, CounterRng& rng,
                          Wavefront wf) {
  if (noise_var < 0.0) throw std::invalid_argument("negative noise variance");
  CVec z = CVec::Zero(obs_length(rf, pa.geometry));
  for (const auto& c : comps) {
    if (!c.visible) continue;
    z += c.amplitude * component_response(p_mt, c.psfv, pa, rf, wf);
  }
  if (noise_var > 0.0)
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] += rng.complex_normal(noise_var);
  return z;
}

double channel_power(const Vec3& p_mt, const std::vector<std::vector<PathComponent>>& comps_per_pa,
                     const std::vector<PaConfig>& pas, const RfParams& rf, Wavefront wf) {
  if (comps_per_pa.size() != pas.size()) throw std::invalid_argument("component list per PA");
  double total = 0.0;
  double count = 0.0;
  for (std::size_t j = 0; j < pas.size(); ++j) {
    CVec s = CVec::Zero(obs_length(rf, pas[j].geometry));
    for (const auto& c : comps_per_pa[j])
      if (c.visible) s += c.amplitude * component_response(p_mt, c.psfv, pas[j], rf, wf);
    total += s.squaredNorm();
    count += static_cast<double>(s.size());
  }
  return total / count;
}

double snr_noise_variance(double channel_pow, double snr_db) {
  if (!(channel_pow > 0.0)) throw std::invalid_argument("zero channel power");
  return channel_pow / std::pow(10.0, snr_db / 10.0);
}

}  // namespace dmslam
