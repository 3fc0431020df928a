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

// Reference computations shared by unit and acceptance tests. Everything here
// is written from the model equations with plain loops and does not call the
// estimator under test.

#ifndef ACTIVESENSE_TEST_ORACLES_HPP
#define ACTIVESENSE_TEST_ORACLES_HPP

#include "activesense/channel.hpp"

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

namespace oracle
{
    using activesense::chan::Constraint;
    using activesense::chan::SensingVector;
    using activesense::num::ComplexVector;
    using cplx = std::complex<double>;

    // Rows of the unitary DFT matrix: T = M orthonormal unit-norm sensing vectors.
    inline std::vector<SensingVector> dft_sensing(std::size_t M)
    {
        std::vector<SensingVector> W;
        for (std::size_t t = 0; t < M; ++t)
        {
            ComplexVector v(M);
            for (std::size_t m = 0; m < M; ++m)
                v.set(m, std::polar(1.0 / std::sqrt(double(M)), -2.0 * std::numbers::pi * double(t * m) / double(M)));
            W.push_back(SensingVector::make(v, Constraint::unit_norm));
        }
        return W;
    }

    inline cplx steer(double phi, std::size_t m, double d = 0.5)
    {
        return std::polar(1.0, 2.0 * std::numbers::pi * d * double(m) * std::sin(phi));
    }

    // Effective atom k: d_k[t] = sqrt(P) w_t^H a(phi_k).
    inline std::vector<cplx> atom(const std::vector<SensingVector> &W, double phi, double P)
    {
        std::vector<cplx> d(W.size());
        for (std::size_t t = 0; t < W.size(); ++t)
        {
            cplx s = 0.0;
            for (std::size_t m = 0; m < W[t].size(); ++m)
                s += std::conj(W[t].v[m]) * steer(phi, m);
            d[t] = std::sqrt(P) * s;
        }
        return d;
    }

    inline cplx inner(const std::vector<cplx> &a, const std::vector<cplx> &b)
    {
        cplx s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
            s += std::conj(a[i]) * b[i];
        return s;
    }

    // Exhaustive single-atom search: argmax_k |d_k^H y| / ||d_k||, lowest index on ties.
    inline std::size_t best_single_atom(const std::vector<cplx> &y, const std::vector<SensingVector> &W,
                                        const std::vector<double> &grid, double P)
    {
        std::size_t best = 0;
        double best_v = -1.0;
        for (std::size_t k = 0; k < grid.size(); ++k)
        {
            const auto d = atom(W, grid[k], P);
            const double v = std::abs(inner(d, y)) / std::sqrt(std::real(inner(d, d)));
            if (v > best_v)
            {
                best_v = v;
                best = k;
            }
        }
        return best;
    }

    // Exhaustive pair search: the unordered pair whose span leaves the smallest
    // least-squares residual (2x2 normal equations solved in closed form).
    inline std::pair<std::size_t, std::size_t> best_atom_pair(const std::vector<cplx> &y,
                                                              const std::vector<SensingVector> &W,
                                                              const std::vector<double> &grid, double P)
    {
        std::vector<std::vector<cplx>> D;
        for (double phi : grid)
            D.push_back(atom(W, phi, P));
        const double yy = std::real(inner(y, y));
        double best = std::numeric_limits<double>::infinity();
        std::pair<std::size_t, std::size_t> arg{0, 1};
        for (std::size_t i = 0; i < D.size(); ++i)
            for (std::size_t j = i + 1; j < D.size(); ++j)
            {
                const cplx g11 = inner(D[i], D[i]), g12 = inner(D[i], D[j]), g22 = inner(D[j], D[j]);
                const cplx b1 = inner(D[i], y), b2 = inner(D[j], y);
                const cplx det = g11 * g22 - g12 * std::conj(g12);
                if (std::abs(det) < 1e-12 * std::abs(g11 * g22))
                    continue;
                const cplx x1 = (g22 * b1 - g12 * b2) / det;
                const cplx x2 = (g11 * b2 - std::conj(g12) * b1) / det;
                // residual^2 = y^H y - x^H b for the LS solution
                const double r = yy - std::real(std::conj(x1) * b1 + std::conj(x2) * b2);
                if (r < best - 1e-12)
                {
                    best = r;
                    arg = {i, j};
                }
            }
        return arg;
    }
}

#endif
