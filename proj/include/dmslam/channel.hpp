#pragma once

#include <optional>
#include <vector>

#include "dmslam/geometry.hpp"
#include "dmslam/rng.hpp"

namespace dmslam {

struct RfParams {
  double fc = 0.0;
  double bandwidth = 0.0;
  int nf = 1;
  VecX freqs;  // baseband bins, symmetric about 0
  double wavelength = 0.0;

  static RfParams make(double fc, double bandwidth, int nf);
};

inline int obs_length(const RfParams& rf, const UraGeometry& g) { return rf.nf * g.count(); }

CVec delay_response(double tau, const RfParams& rf);

CVec spatial_response(double elevation, double azimuth, const UraGeometry& geom, double lambda);

// b(tau) kron a(theta, phi) times the carrier phase. Index f*(ny*nz) + iy*nz + iz.
// unit_modulus=false applies the free-space gain lambda / (4 pi |r|).
CVec planar_response(const Vec3& r, const RfParams& rf, const UraGeometry& geom, bool unit_modulus);

// Same as planar_response, writing into a caller buffer of length obs_length.
void planar_response_into(const Vec3& r, const RfParams& rf, const UraGeometry& geom,
                          bool unit_modulus, cd* out);

// Exact element-to-source distances; element layout is the VA layout when psfv is given.
CVec spherical_response(const Vec3& p_source, const PaConfig& pa, const std::optional<Vec3>& psfv,
                        const RfParams& rf);

enum class Wavefront { planar, spherical };

struct PathComponent {
  std::optional<Vec3> psfv;  // empty for LOS
  cd amplitude{0.0, 0.0};
  bool visible = true;
};

// Noise-free path-loss response of one component.
CVec component_response(const Vec3& p_mt, const std::optional<Vec3>& psfv, const PaConfig& pa,
                        const RfParams& rf, Wavefront wf);

CVec generate_observation(const Vec3& p_mt, const std::vector<PathComponent>& comps,
                          const PaConfig& pa, const RfParams& rf, double noise_var, CounterRng& rng,
                          Wavefront wf = Wavefront::planar);

// (1 / (Nz J)) sum_j || sum_k rho psi ||^2 over the visible components of every PA.
double channel_power(const Vec3& p_mt, const std::vector<std::vector<PathComponent>>& comps_per_pa,
                     const std::vector<PaConfig>& pas, const RfParams& rf,
                     Wavefront wf = Wavefront::planar);

double snr_noise_variance(double channel_pow, double snr_db);

}  // namespace dmslam
