// SPDX-License-Identifier: Apache-2.0
//
// activesense: active channel sensing laboratory
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#ifndef ACTIVESENSE_CHANNEL_HPP
#define ACTIVESENSE_CHANNEL_HPP

#include "activesense/numerics.hpp"

#include <iosfwd>
#include <numbers>
#include <string>
#include <vector>

namespace activesense::chan
{
    using num::ComplexVector;
    using num::cplx;
    using num::RandomStream;
    using num::Rng;

    // ---- mmWave uplink with a uniform linear array ----

    struct MmWaveConfig
    {
        std::size_t M_r = 16;
        std::size_t L_p = 1;
        double phi_min = -std::numbers::pi / 3.0;
        double phi_max = std::numbers::pi / 3.0;
        double d_over_lambda = 0.5;

        void validate() const;
    };

    struct MmWaveChannel
    {
        std::vector<double> phis;  // radians
        std::vector<cplx> alphas;  // fading coefficients
        ComplexVector h;           // sum_l alpha_l a(phi_l)
    };

    // Entry m is exp(j 2 pi d m sin(phi)), m = 0..M-1.
    ComplexVector array_response(double phi, std::size_t M, double d_over_lambda = 0.5);

    MmWaveChannel assemble_mmwave(std::vector<double> phis, std::vector<cplx> alphas, const MmWaveConfig &cfg);
    MmWaveChannel sample_mmwave(const MmWaveConfig &cfg, Rng &rng);
    MmWaveChannel sample_mmwave(const MmWaveConfig &cfg, RandomStream stream);

    // ---- sensing vectors ----

    enum class Constraint
    {
        unit_norm,        // ||v||_2 = 1
        constant_modulus, // |v_i| = 1/sqrt(M)
        unit_modulus,     // |v_i| = 1
    };

    std::string to_string(Constraint c);
    Constraint constraint_from_string(const std::string &s);

    inline constexpr double constraint_tolerance = 1e-9;

    // Largest deviation of v from the tagged constraint (norm or per-entry modulus).
    double constraint_violation(const ComplexVector &v, Constraint c);

    struct SensingVector
    {
        ComplexVector v;
        Constraint constraint = Constraint::unit_norm;

        // Throws invalid_argument unless v satisfies c to constraint_tolerance.
        static SensingVector make(ComplexVector v, Constraint c);
        bool satisfied(double tol = constraint_tolerance) const;
        std::size_t size() const { return v.size(); }
    };

    // A random constraint-satisfying vector: Gaussian direction for unit_norm,
    // uniform phases otherwise.
    SensingVector random_sensing_vector(std::size_t M, Constraint c, Rng &rng);

    // sqrt(P) w^H h + w^H z, z ~ CN(0, noise_variance I) drawn from rng.
    // noise_variance = 0 suppresses the noise (oracle tests only).
    cplx measure_mmwave(const MmWaveChannel &ch, const SensingVector &w, double P, Rng &rng,
                        double noise_variance = 1.0);
    // Same model with an explicit noise vector z.
    cplx measure_mmwave(const ComplexVector &h, const SensingVector &w, double P, const ComplexVector &z);

    // ---- RIS link with a uniform rectangular array ----

    struct AngleRange
    {
        double lo = 0.0, hi = 0.0;
    };

    struct RisConfig
    {
        std::size_t N1 = 4;
        std::size_t N2 = 4;
        double d1_over_lambda = 0.5;
        double d2_over_lambda = 0.5;
        double rician_factor = 10.0;
        AngleRange azimuth_t{-std::numbers::pi / 2.0, 0.0};
        AngleRange azimuth_r{0.0, std::numbers::pi / 2.0};
        AngleRange elevation_t{-std::numbers::pi / 2.0, std::numbers::pi / 2.0};
        AngleRange elevation_r{-std::numbers::pi / 2.0, std::numbers::pi / 2.0};
        double noise_variance = 1.0;

        std::size_t elements() const { return N1 * N2; }
        void validate() const;
    };

    // Element l (0-based) has horizontal index l mod N1 and vertical index floor(l / N1).
    ComplexVector upa_response(double azimuth, double elevation, std::size_t N1, std::size_t N2,
                               double d1_over_lambda = 0.5, double d2_over_lambda = 0.5);

    struct RisChannelSet
    {
        ComplexVector h_t, h_r; // transmitter-RIS and RIS-receiver
        ComplexVector h_c;      // cascaded, h_c[i] = h_t[i] h_r[i]
        ComplexVector los_t, los_r; // line-of-sight parts before the Rician weighting
    };

    RisChannelSet assemble_ris(ComplexVector h_t, ComplexVector h_r);
    RisChannelSet sample_ris(const RisConfig &cfg, Rng &rng);
    RisChannelSet sample_ris(const RisConfig &cfg, RandomStream stream);

    // sqrt(P) w^T h_c + n, n ~ CN(0, sigma2). sigma2 = 0 suppresses the noise.
    cplx measure_ris(const RisChannelSet &set, const SensingVector &w, double P, double sigma2, Rng &rng);
    cplx measure_ris(const ComplexVector &h_c, const SensingVector &w, double P, cplx n);

    // ---- objectives ----

    enum class Pairing
    {
        hermitian, // |h^H v|^2
        transpose, // |h^T v|^2
    };

    double beamforming_gain(const ComplexVector &h, const ComplexVector &v, Pairing pairing);
    double beamforming_gain(const ComplexVector &h, const SensingVector &v, Pairing pairing);

    // |w^H a(phi)|^2 per grid angle.
    std::vector<double> beam_pattern(const SensingVector &w, const std::vector<double> &grid,
                                     double d_over_lambda = 0.5);

    // P such that 10 log10(P / noise_variance) = snr_db.
    double snr_to_power(double snr_db, double noise_variance = 1.0);

    // ---- dataset export ----

    // Columns: index, h_re_0..h_re_{M-1}, h_im_0..h_im_{M-1}, phi_0.., alpha_re_0.., alpha_im_0..
    void write_mmwave_csv(std::ostream &os, const std::vector<MmWaveChannel> &channels);
    // Columns: index, then re/im blocks for h_t, h_r and h_c.
    void write_ris_csv(std::ostream &os, const std::vector<RisChannelSet> &channels);
}

#endif
