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

#include "doctest.h"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

using namespace activesense;
using namespace activesense::chan;

namespace
{
    constexpr double pi = std::numbers::pi;

    SensingVector unit(const ComplexVector &v)
    {
        ComplexVector u = v;
        const double n = v.norm();
        for (std::size_t i = 0; i < u.size(); ++i)
            u.set(i, v[i] / n);
        return SensingVector::make(u, Constraint::unit_norm);
    }

    SensingVector ones(std::size_t n, double modulus, Constraint c)
    {
        ComplexVector v(n);
        for (auto &x : v.re)
            x = modulus;
        return SensingVector::make(v, c);
    }
}

TEST_CASE("array_response examples")
{
    const auto a0 = array_response(0.0, 7);
    for (std::size_t m = 0; m < 7; ++m)
        CHECK(a0[m] == cplx(1.0, 0.0));
    const auto a = array_response(pi / 2.0, 2, 0.5);
    CHECK(std::abs(a[0] - cplx(1.0, 0.0)) < 1e-15);
    CHECK(std::abs(a[1] - cplx(-1.0, 0.0)) < 1e-15);
    for (double phi : {-1.0, 0.1, 0.9})
        CHECK(array_response(phi, 16).norm() == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("sample_mmwave examples")
{
    MmWaveConfig cfg;
    cfg.M_r = 8;
    const auto ch = assemble_mmwave({0.0}, {cplx(1.0, 0.0)}, cfg);
    for (std::size_t m = 0; m < 8; ++m)
        CHECK(ch.h[m] == cplx(1.0, 0.0));

    const auto a = sample_mmwave(cfg, RandomStream{4, 1});
    const auto b = sample_mmwave(cfg, RandomStream{4, 1});
    CHECK(a.phis == b.phis);
    CHECK(a.h.re == b.h.re);
}

TEST_CASE("E||h||^2 = M_r over 1e5 draws")
{
    MmWaveConfig cfg;
    cfg.M_r = 16;
    double s = 0.0;
    const std::size_t n = 100000;
    for (std::size_t k = 0; k < n; ++k)
    {
        const auto ch = sample_mmwave(cfg, RandomStream{21}.child(k));
        s += ch.h.squared_norm();
        CHECK(ch.phis[0] >= cfg.phi_min);
        CHECK(ch.phis[0] <= cfg.phi_max);
    }
    CHECK(s / double(n) == doctest::Approx(16.0).epsilon(0.02));
}

TEST_CASE("sampled channels reassemble exactly")
{
    MmWaveConfig cfg;
    cfg.M_r = 12;
    cfg.L_p = 3;
    for (std::uint64_t k = 0; k < 100; ++k)
    {
        const auto ch = sample_mmwave(cfg, RandomStream{22}.child(k));
        // independent sum over paths
        for (std::size_t m = 0; m < cfg.M_r; ++m)
        {
            cplx acc = 0.0;
            for (std::size_t l = 0; l < cfg.L_p; ++l)
                acc += ch.alphas[l] * std::exp(cplx(0.0, 2.0 * pi * 0.5 * double(m) * std::sin(ch.phis[l])));
            CHECK(std::abs(ch.h[m] - acc) < 1e-12);
        }
        const auto again = assemble_mmwave(ch.phis, ch.alphas, cfg);
        CHECK(again.h.re == ch.h.re);
        CHECK(again.h.im == ch.h.im);
    }
}

TEST_CASE("measure_mmwave examples")
{
    MmWaveConfig cfg;
    cfg.M_r = 16;
    const double phi = 0.37, P = 3.0;
    const auto ch = assemble_mmwave({phi}, {cplx(1.0, 0.0)}, cfg);
    Rng rng(RandomStream{1});
    const auto w = unit(array_response(phi, 16));
    CHECK(std::abs(measure_mmwave(ch, w, 0.0, rng, 0.0)) == 0.0);
    CHECK(std::abs(measure_mmwave(ch, w, P, rng, 0.0) - cplx(std::sqrt(P * 16.0), 0.0)) < 1e-12);

    double s = 0.0;
    const std::size_t n = 100000;
    Rng noise(RandomStream{2});
    for (std::size_t k = 0; k < n; ++k)
        s += std::norm(measure_mmwave(ch, w, 0.0, noise));
    CHECK(s / double(n) == doctest::Approx(1.0).epsilon(0.02));

    SensingVector bad = w;
    bad.v.re[0] += 1e-3;
    CHECK_THROWS_AS(measure_mmwave(ch, bad, P, rng), std::invalid_argument);
    CHECK_THROWS_AS(SensingVector::make(bad.v, Constraint::unit_norm), std::invalid_argument);
}

TEST_CASE("noise-suppressed measurement is linear in w")
{
    MmWaveConfig cfg;
    cfg.M_r = 8;
    cfg.L_p = 2;
    const auto ch = sample_mmwave(cfg, RandomStream{30});
    const ComplexVector z(8);
    for (std::uint64_t k = 0; k < 100; ++k)
    {
        const auto a = num::sample_complex_gaussian(8, 1.0, RandomStream{31}.child(k));
        const auto b = num::sample_complex_gaussian(8, 1.0, RandomStream{32}.child(k));
        const cplx ca(0.3, -0.4), cb(0.8, 0.0);
        ComplexVector mix(8);
        for (std::size_t i = 0; i < 8; ++i)
            mix.set(i, ca * a[i] + cb * b[i]);
        const double n = mix.norm();
        ComplexVector mixn = mix;
        for (std::size_t i = 0; i < 8; ++i)
            mixn.set(i, mix[i] / n);
        const auto ua = unit(a), ub = unit(b);
        // y(w) = sqrt(P) w^H h, conjugate-linear in w
        const cplx ya = measure_mmwave(ch.h, ua, 2.0, z) * a.norm();
        const cplx yb = measure_mmwave(ch.h, ub, 2.0, z) * b.norm();
        const cplx ym = measure_mmwave(ch.h, SensingVector::make(mixn, Constraint::unit_norm), 2.0, z) * n;
        CHECK(std::abs(ym - (std::conj(ca) * ya + std::conj(cb) * yb)) < 1e-12);
    }
}

TEST_CASE("sample_ris examples")
{
    RisConfig cfg;
    cfg.rician_factor = 1e12;
    for (std::uint64_t k = 0; k < 20; ++k)
    {
        const auto s = sample_ris(cfg, RandomStream{40}.child(k));
        double err = 0.0, ref = 0.0;
        for (std::size_t i = 0; i < s.h_t.size(); ++i)
        {
            err += std::norm(s.h_t[i] - s.los_t[i]);
            ref += std::norm(s.los_t[i]);
        }
        CHECK(std::sqrt(err / ref) < 1e-5);
    }

    cfg.rician_factor = 0.0;
    double e2 = 0.0;
    const std::size_t n = 100000;
    for (std::size_t k = 0; k < n; ++k)
    {
        const auto s = sample_ris(cfg, RandomStream{41}.child(k));
        e2 += std::norm(s.h_t[k % 16]);
        for (std::size_t i = 0; i < 16; ++i)
            REQUIRE(s.h_c[i] == s.h_t[i] * s.h_r[i]);
    }
    CHECK(e2 / double(n) == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("UPA response indexing")
{
    // Element l sits at column l mod N1, row floor(l / N1).
    const std::size_t N1 = 4, N2 = 2;
    const double az = 0.3, el = -0.7;
    const auto a = upa_response(az, el, N1, N2);
    REQUIRE(a.size() == N1 * N2);
    const auto a_first = upa_response(az, el, N1, N2);
    for (std::size_t l = 0; l < N1 * N2; ++l)
        CHECK(std::abs(std::abs(a[l]) - 1.0) < 1e-14);
    CHECK(a[0] == cplx(1.0, 0.0));
    // Entries along one row share the same vertical phase: a[l+1]/a[l] constant within a row.
    const cplx step = a[1] / a[0];
    CHECK(std::abs(a[2] / a[1] - step) < 1e-12);
    CHECK(std::abs(a[5] / a[4] - step) < 1e-12);
    // Moving down one row multiplies by the vertical factor.
    const cplx vert = a[4] / a[0];
    CHECK(std::abs(a[7] / a[3] - vert) < 1e-12);
    CHECK(a_first.re == a.re);
}

TEST_CASE("measure_ris examples")
{
    const double P = 4.0;
    ComplexVector e1(16);
    e1.re[0] = 1.0;
    const auto w1 = ones(16, 1.0, Constraint::unit_modulus);
    CHECK(std::abs(measure_ris(e1, w1, P, cplx(0.0, 0.0)) - cplx(2.0, 0.0)) < 1e-15);

    RisConfig cfg;
    const auto s = sample_ris(cfg, RandomStream{50});
    ComplexVector pm(16);
    double sum_abs = 0.0;
    for (std::size_t i = 0; i < 16; ++i)
    {
        pm.set(i, std::polar(1.0, -std::arg(s.h_c[i])));
        sum_abs += std::abs(s.h_c[i]);
    }
    const auto w = SensingVector::make(pm, Constraint::unit_modulus);
    Rng rng(RandomStream{51});
    CHECK(std::abs(measure_ris(s, w, P, 0.0, rng) - cplx(std::sqrt(P) * sum_abs, 0.0)) < 1e-12);
    CHECK(beamforming_gain(s.h_c, w, Pairing::transpose) == doctest::Approx(sum_abs * sum_abs).epsilon(1e-13));

    double v = 0.0;
    const std::size_t n = 100000;
    for (std::size_t k = 0; k < n; ++k)
        v += std::norm(measure_ris(s, w, 0.0, 2.5, rng));
    CHECK(v / double(n) == doctest::Approx(2.5).epsilon(0.02));

    const auto bad = ones(16, 0.25, Constraint::constant_modulus);
    CHECK_THROWS_AS(measure_ris(s, bad, P, 0.0, rng), std::invalid_argument);
}

TEST_CASE("beamforming_gain examples and bounds")
{
    MmWaveConfig cfg;
    cfg.M_r = 8;
    cfg.L_p = 2;
    for (std::uint64_t k = 0; k < 1000; ++k)
    {
        const auto ch = sample_mmwave(cfg, RandomStream{60}.child(k));
        const double h2 = ch.h.squared_norm();
        CHECK(beamforming_gain(ch.h, unit(ch.h), Pairing::hermitian) == doctest::Approx(h2).epsilon(1e-13));
        Rng rng(RandomStream{61}.child(k));
        const auto v = random_sensing_vector(8, Constraint::unit_norm, rng);
        CHECK(beamforming_gain(ch.h, v, Pairing::hermitian) <= h2 * (1.0 + 1e-12));

        RisConfig rc;
        const auto s = sample_ris(rc, RandomStream{62}.child(k));
        double sa = 0.0;
        for (std::size_t i = 0; i < 16; ++i)
            sa += std::abs(s.h_c[i]);
        const auto u = random_sensing_vector(16, Constraint::unit_modulus, rng);
        CHECK(beamforming_gain(s.h_c, u, Pairing::transpose) <= sa * sa * (1.0 + 1e-12));
    }
    // orthogonal
    ComplexVector h({1.0, 0.0}, {0.0, 0.0});
    ComplexVector v({0.0, 1.0}, {0.0, 0.0});
    CHECK(beamforming_gain(h, v, Pairing::hermitian) == 0.0);
    CHECK_THROWS_AS(beamforming_gain(h, ComplexVector(3), Pairing::hermitian), std::invalid_argument);
}

TEST_CASE("beam_pattern examples")
{
    const std::size_t M = 16;
    const double phi0 = 0.2;
    const auto w = unit(array_response(phi0, M));
    CHECK(beam_pattern(w, {phi0})[0] == doctest::Approx(double(M)).epsilon(1e-13));
    // Dirichlet-kernel zero: sin(phi) - sin(phi0) = 2 / M (d = 1/2)
    const double zero = std::asin(std::sin(phi0) + 2.0 / double(M));
    CHECK(beam_pattern(w, {zero})[0] < 1e-9);
    const auto u = ones(M, 1.0 / 4.0, Constraint::constant_modulus);
    CHECK(beam_pattern(u, {0.0})[0] == doctest::Approx(double(M)).epsilon(1e-13));
}

TEST_CASE("constraint checks per tag")
{
    Rng rng(RandomStream{70});
    for (auto c : {Constraint::unit_norm, Constraint::constant_modulus, Constraint::unit_modulus})
        for (int k = 0; k < 50; ++k)
        {
            const auto v = random_sensing_vector(10, c, rng);
            CHECK(constraint_violation(v.v, c) < 1e-12);
            CHECK(v.satisfied());
        }
    CHECK(constraint_from_string(to_string(Constraint::constant_modulus)) == Constraint::constant_modulus);
}

TEST_CASE("snr_to_power")
{
    CHECK(snr_to_power(10.0) == doctest::Approx(10.0));
    CHECK(snr_to_power(0.0, 2.0) == doctest::Approx(2.0));
}

TEST_CASE("channel CSV export layout")
{
    MmWaveConfig cfg;
    cfg.M_r = 2;
    std::ostringstream os;
    write_mmwave_csv(os, {assemble_mmwave({0.0}, {cplx(1.0, 0.0)}, cfg)});
    std::istringstream is(os.str());
    std::string header, row;
    std::getline(is, header);
    std::getline(is, row);
    CHECK(header == "index,h_re_0,h_re_1,h_im_0,h_im_1,phi_0,alpha_re_0,alpha_im_0");
    CHECK(row.substr(0, 6) == "0,1,1,");
}

TEST_CASE("config validation")
{
    MmWaveConfig m;
    m.M_r = 0;
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    MmWaveConfig r;
    r.phi_min = 1.0;
    r.phi_max = 0.5;
    CHECK_THROWS_AS(r.validate(), std::invalid_argument);
    RisConfig c;
    c.rician_factor = -1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
