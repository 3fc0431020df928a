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

#include "activesense/channel.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace activesense::chan
{
    using std::numbers::pi;

    void MmWaveConfig::validate() const
    {
        if (M_r < 1)
            throw std::invalid_argument("MmWaveConfig: M_r must be >= 1");
        if (L_p < 1)
            throw std::invalid_argument("MmWaveConfig: L_p must be >= 1");
        if (!(phi_min < phi_max))
            throw std::invalid_argument("MmWaveConfig: phi_min must be < phi_max");
        if (!(d_over_lambda > 0.0))
            throw std::invalid_argument("MmWaveConfig: d_over_lambda must be > 0");
    }

    ComplexVector array_response(double phi, std::size_t M, double d_over_lambda)
    {
        ComplexVector a(M);
        const double k = 2.0 * pi * d_over_lambda * std::sin(phi);
        for (std::size_t m = 0; m < M; ++m)
        {
            a.re[m] = std::cos(k * double(m));
            a.im[m] = std::sin(k * double(m));
        }
        return a;
    }

    MmWaveChannel assemble_mmwave(std::vector<double> phis, std::vector<cplx> alphas, const MmWaveConfig &cfg)
    {
        if (phis.size() != alphas.size())
            throw std::invalid_argument("assemble_mmwave: phis and alphas differ in length");
        MmWaveChannel ch;
        ch.h = ComplexVector(cfg.M_r);
        for (std::size_t l = 0; l < phis.size(); ++l)
        {
            const auto a = array_response(phis[l], cfg.M_r, cfg.d_over_lambda);
            for (std::size_t m = 0; m < cfg.M_r; ++m)
                ch.h.set(m, ch.h[m] + alphas[l] * a[m]);
        }
        ch.phis = std::move(phis);
        ch.alphas = std::move(alphas);
        return ch;
    }

    MmWaveChannel sample_mmwave(const MmWaveConfig &cfg, Rng &rng)
    {
        cfg.validate();
        std::vector<double> phis(cfg.L_p);
        std::vector<cplx> alphas(cfg.L_p);
        for (auto &p : phis)
            p = rng.uniform(cfg.phi_min, cfg.phi_max);
        for (auto &a : alphas)
            a = rng.complex_normal(1.0);
        return assemble_mmwave(std::move(phis), std::move(alphas), cfg);
    }

    MmWaveChannel sample_mmwave(const MmWaveConfig &cfg, RandomStream stream)
    {
        Rng rng(stream);
        return sample_mmwave(cfg, rng);
    }

    std::string to_string(Constraint c)
    {
        switch (c)
        {
        case Constraint::unit_norm: return "unit-norm";
        case Constraint::constant_modulus: return "constant-modulus";
        case Constraint::unit_modulus: return "unit-modulus";
        }
        return "?";
    }

    Constraint constraint_from_string(const std::string &s)
    {
        if (s == "unit-norm")
            return Constraint::unit_norm;
        if (s == "constant-modulus")
            return Constraint::constant_modulus;
        if (s == "unit-modulus")
            return Constraint::unit_modulus;
        throw std::invalid_argument("unknown constraint '" + s + "'");
    }

    double constraint_violation(const ComplexVector &v, Constraint c)
    {
        if (v.size() == 0)
            return std::numeric_limits<double>::infinity();
        if (c == Constraint::unit_norm)
            return std::abs(v.norm() - 1.0);
        const double target = c == Constraint::unit_modulus ? 1.0 : 1.0 / std::sqrt(double(v.size()));
        double worst = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i)
            worst = std::max(worst, std::abs(std::hypot(v.re[i], v.im[i]) - target));
        return worst;
    }

    SensingVector SensingVector::make(ComplexVector v, Constraint c)
    {
        const double err = constraint_violation(v, c);
        if (!(err <= constraint_tolerance))
            throw std::invalid_argument("SensingVector: " + to_string(c) + " constraint violated by " +
                                        std::to_string(err));
        return {std::move(v), c};
    }

    bool SensingVector::satisfied(double tol) const { return constraint_violation(v, constraint) <= tol; }

    SensingVector random_sensing_vector(std::size_t M, Constraint c, Rng &rng)
    {
        if (M == 0)
            throw std::invalid_argument("random_sensing_vector: M must be positive");
        ComplexVector v(M);
        if (c == Constraint::unit_norm)
        {
            v = num::sample_complex_gaussian(M, 1.0, rng);
            const double n = v.norm();
            for (std::size_t i = 0; i < M; ++i)
                v.set(i, v[i] / n);
        }
        else
        {
            const double r = c == Constraint::unit_modulus ? 1.0 : 1.0 / std::sqrt(double(M));
            for (std::size_t i = 0; i < M; ++i)
                v.set(i, std::polar(r, rng.uniform(0.0, 2.0 * pi)));
        }
        return {std::move(v), c};
    }

    namespace
    {
        void require_valid(const SensingVector &w, std::size_t M, const char *who)
        {
            if (w.size() != M)
                throw std::invalid_argument(std::string(who) + ": sensing vector extent mismatch");
            if (!w.satisfied())
                throw std::invalid_argument(std::string(who) + ": sensing vector violates its " +
                                            to_string(w.constraint) + " constraint");
        }

        void require_power(double P, double variance, const char *who)
        {
            if (!(P >= 0.0))
                throw std::invalid_argument(std::string(who) + ": P must be >= 0");
            if (!(variance >= 0.0))
                throw std::invalid_argument(std::string(who) + ": noise variance must be >= 0");
        }
    }

    cplx measure_mmwave(const MmWaveChannel &ch, const SensingVector &w, double P, Rng &rng, double noise_variance)
    {
        require_power(P, noise_variance, "measure_mmwave");
        require_valid(w, ch.h.size(), "measure_mmwave");
        cplx y = std::sqrt(P) * num::hermitian_inner(w.v, ch.h);
        if (noise_variance > 0.0)
            y += num::hermitian_inner(w.v, num::sample_complex_gaussian(ch.h.size(), noise_variance, rng));
        return y;
    }

    cplx measure_mmwave(const ComplexVector &h, const SensingVector &w, double P, const ComplexVector &z)
    {
        require_power(P, 0.0, "measure_mmwave");
        require_valid(w, h.size(), "measure_mmwave");
        if (z.size() != h.size())
            throw std::invalid_argument("measure_mmwave: noise extent mismatch");
        return std::sqrt(P) * num::hermitian_inner(w.v, h) + num::hermitian_inner(w.v, z);
    }

    void RisConfig::validate() const
    {
        if (N1 < 1 || N2 < 1)
            throw std::invalid_argument("RisConfig: N1 and N2 must be >= 1");
        if (!(rician_factor >= 0.0))
            throw std::invalid_argument("RisConfig: rician_factor must be >= 0");
        if (!(d1_over_lambda > 0.0) || !(d2_over_lambda > 0.0))
            throw std::invalid_argument("RisConfig: element spacings must be > 0");
        for (const auto *r : {&azimuth_t, &azimuth_r, &elevation_t, &elevation_r})
            if (!(r->lo <= r->hi))
                throw std::invalid_argument("RisConfig: angle range with lo > hi");
        if (!(noise_variance >= 0.0))
            throw std::invalid_argument("RisConfig: noise_variance must be >= 0");
    }

    ComplexVector upa_response(double azimuth, double elevation, std::size_t N1, std::size_t N2,
                               double d1_over_lambda, double d2_over_lambda)
    {
        const std::size_t N = N1 * N2;
        ComplexVector a(N);
        const double kh = 2.0 * pi * d1_over_lambda * std::sin(azimuth) * std::cos(elevation);
        const double kv = 2.0 * pi * d2_over_lambda * std::sin(elevation);
        for (std::size_t l = 0; l < N; ++l)
        {
            const double arg = kh * double(l % N1) + kv * double(l / N1);
            a.re[l] = std::cos(arg);
            a.im[l] = std::sin(arg);
        }
        return a;
    }

    RisChannelSet assemble_ris(ComplexVector h_t, ComplexVector h_r)
    {
        if (h_t.size() != h_r.size())
            throw std::invalid_argument("assemble_ris: h_t and h_r differ in length");
        RisChannelSet s;
        s.h_c = ComplexVector(h_t.size());
        for (std::size_t i = 0; i < h_t.size(); ++i)
            s.h_c.set(i, h_t[i] * h_r[i]);
        s.h_t = std::move(h_t);
        s.h_r = std::move(h_r);
        return s;
    }

    namespace
    {
        // Rician draw for one side; returns (channel, line-of-sight term).
        std::pair<ComplexVector, ComplexVector> rician_side(const RisConfig &cfg, const AngleRange &az,
                                                            const AngleRange &el, Rng &rng)
        {
            const std::size_t N = cfg.elements();
            const double azimuth = rng.uniform(az.lo, az.hi);
            const double elevation = rng.uniform(el.lo, el.hi);
            const cplx fade = rng.complex_normal(1.0);
            ComplexVector los = upa_response(azimuth, elevation, cfg.N1, cfg.N2, cfg.d1_over_lambda, cfg.d2_over_lambda);
            for (std::size_t i = 0; i < N; ++i)
                los.set(i, fade * los[i]);
            const ComplexVector nlos = num::sample_complex_gaussian(N, 1.0, rng);
            const double eps = cfg.rician_factor;
            const double w_los = std::sqrt(eps / (1.0 + eps));
            const double w_nlos = std::sqrt(1.0 / (1.0 + eps));
            ComplexVector h(N);
            for (std::size_t i = 0; i < N; ++i)
                h.set(i, w_los * los[i] + w_nlos * nlos[i]);
            return {std::move(h), std::move(los)};
        }
    }

    RisChannelSet sample_ris(const RisConfig &cfg, Rng &rng)
    {
        cfg.validate();
        auto [h_t, los_t] = rician_side(cfg, cfg.azimuth_t, cfg.elevation_t, rng);
        auto [h_r, los_r] = rician_side(cfg, cfg.azimuth_r, cfg.elevation_r, rng);
        RisChannelSet s = assemble_ris(std::move(h_t), std::move(h_r));
        s.los_t = std::move(los_t);
        s.los_r = std::move(los_r);
        return s;
    }

    RisChannelSet sample_ris(const RisConfig &cfg, RandomStream stream)
    {
        Rng rng(stream);
        return sample_ris(cfg, rng);
    }

    cplx measure_ris(const RisChannelSet &set, const SensingVector &w, double P, double sigma2, Rng &rng)
    {
        require_power(P, sigma2, "measure_ris");
        if (w.constraint != Constraint::unit_modulus)
            throw std::invalid_argument("measure_ris: reflection vector must be tagged unit-modulus");
        require_valid(w, set.h_c.size(), "measure_ris");
        cplx y = std::sqrt(P) * num::transpose_inner(w.v, set.h_c);
        if (sigma2 > 0.0)
            y += rng.complex_normal(sigma2);
        return y;
    }

    cplx measure_ris(const ComplexVector &h_c, const SensingVector &w, double P, cplx n)
    {
        require_power(P, 0.0, "measure_ris");
        require_valid(w, h_c.size(), "measure_ris");
        return std::sqrt(P) * num::transpose_inner(w.v, h_c) + n;
    }

    double beamforming_gain(const ComplexVector &h, const ComplexVector &v, Pairing pairing)
    {
        const cplx p = pairing == Pairing::hermitian ? num::hermitian_inner(h, v) : num::transpose_inner(h, v);
        return std::norm(p);
    }

    double beamforming_gain(const ComplexVector &h, const SensingVector &v, Pairing pairing)
    {
        return beamforming_gain(h, v.v, pairing);
    }

    std::vector<double> beam_pattern(const SensingVector &w, const std::vector<double> &grid, double d_over_lambda)
    {
        if (grid.empty())
            throw std::invalid_argument("beam_pattern: empty grid");
        std::vector<double> out;
        out.reserve(grid.size());
        for (double phi : grid)
            out.push_back(std::norm(num::hermitian_inner(w.v, array_response(phi, w.size(), d_over_lambda))));
        return out;
    }

    double snr_to_power(double snr_db, double noise_variance)
    {
        return noise_variance * std::pow(10.0, snr_db / 10.0);
    }

    namespace
    {
        void write_block(std::ostream &os, const ComplexVector &v)
        {
            for (double x : v.re)
                os << ',' << x;
            for (double x : v.im)
                os << ',' << x;
        }

        void header_block(std::ostream &os, const std::string &name, std::size_t n)
        {
            for (const char *part : {"_re_", "_im_"})
                for (std::size_t i = 0; i < n; ++i)
                    os << ',' << name << part << i;
        }
    }

    void write_mmwave_csv(std::ostream &os, const std::vector<MmWaveChannel> &channels)
    {
        if (channels.empty())
            return;
        const std::size_t M = channels.front().h.size(), L = channels.front().phis.size();
        os << "index";
        header_block(os, "h", M);
        for (std::size_t l = 0; l < L; ++l)
            os << ",phi_" << l;
        for (std::size_t l = 0; l < L; ++l)
            os << ",alpha_re_" << l;
        for (std::size_t l = 0; l < L; ++l)
            os << ",alpha_im_" << l;
        os << '\n' << std::setprecision(17);
        for (std::size_t k = 0; k < channels.size(); ++k)
        {
            const auto &ch = channels[k];
            os << k;
            write_block(os, ch.h);
            for (double p : ch.phis)
                os << ',' << p;
            for (auto a : ch.alphas)
                os << ',' << a.real();
            for (auto a : ch.alphas)
                os << ',' << a.imag();
            os << '\n';
        }
    }

    void write_ris_csv(std::ostream &os, const std::vector<RisChannelSet> &channels)
    {
        if (channels.empty())
            return;
        const std::size_t N = channels.front().h_c.size();
        os << "index";
        header_block(os, "h_t", N);
        header_block(os, "h_r", N);
        header_block(os, "h_c", N);
        os << '\n' << std::setprecision(17);
        for (std::size_t k = 0; k < channels.size(); ++k)
        {
            os << k;
            write_block(os, channels[k].h_t);
            write_block(os, channels[k].h_r);
            write_block(os, channels[k].h_c);
            os << '\n';
        }
    }
}
