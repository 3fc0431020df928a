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

#ifndef ACTIVESENSE_BASELINES_HPP
#define ACTIVESENSE_BASELINES_HPP

#include "activesense/channel.hpp"
#include "activesense/numerics.hpp"
#include "activesense/policy.hpp"

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace activesense::base
{
    using chan::SensingVector;
    using num::ComplexVector;
    using num::cplx;
    using num::RandomStream;

    // ---- angle grid ----

    struct AoaGrid
    {
        std::vector<double> points;  // radians, strictly increasing
        Eigen::MatrixXcd dictionary; // M x N, column k = array_response(points[k])
        double d_over_lambda = 0.5;

        std::size_t size() const { return points.size(); }
        std::size_t antennas() const { return std::size_t(dictionary.rows()); }
        std::size_t nearest(double phi) const;
    };

    // N points spanning [phi_min, phi_max] inclusive.
    AoaGrid build_grid(const chan::MmWaveConfig &cfg, std::size_t N);

    Eigen::VectorXcd to_eigen(const ComplexVector &v);
    ComplexVector from_eigen(const Eigen::VectorXcd &v);

    // ---- OMP ----

    struct OmpResult
    {
        std::vector<std::size_t> atoms;   // grid indices, strongest first
        std::vector<double> angles;       // grid angles, same order
        std::vector<cplx> amplitudes;     // least-squares path gains, same order
        bool rank_deficient = false;      // pseudo-inverse fallback taken
    };

    // Greedy recovery on the effective dictionary sqrt(P) W^H A. Correlations are
    // column-normalized; the lowest grid index wins exact ties.
    OmpResult omp_recover(const std::vector<cplx> &y, const std::vector<SensingVector> &W, const AoaGrid &grid,
                          std::size_t L_p, double P);

    // Channel rebuilt from an OMP result: sum amplitude * array_response(angle).
    ComplexVector omp_channel(const OmpResult &r, const AoaGrid &grid);

    // ---- hierarchical codebook ----

    struct HierCodebook
    {
        std::size_t stages = 0;                        // log2(N)
        std::vector<std::vector<SensingVector>> words; // words[s-1][k], stage s = 1..stages, 2^s sectors

        const SensingVector &word(std::size_t stage, std::size_t sector) const;
        std::size_t sector_width(std::size_t stage, std::size_t grid_size) const; // grid points per sector
    };

    // w = (A^H)^+ g / ||(A^H)^+ g||, g the indicator of the sector's grid indices.
    HierCodebook build_hier_codebook(const AoaGrid &grid);

    // Pilot oracle: the measurement of codeword w as pilot number `pilot` (0-based).
    using PilotOracle = std::function<cplx(const SensingVector &w, std::size_t pilot)>;

    struct HiebsResult
    {
        std::size_t sector = 0; // final-stage sector index
        double angle = 0.0;     // its midpoint
        std::size_t pilots = 0;
        std::vector<std::size_t> path; // chosen sector per stage
    };

    // Bisection descent, two pilots per stage, the larger |y| wins (lower index on ties).
    // flip_stage (1-based, test hook) inverts the decision at that stage.
    HiebsResult hiebs_align(const PilotOracle &oracle, const HierCodebook &cb, const AoaGrid &grid,
                            std::size_t flip_stage = 0);

    // ---- grid posterior ----

    struct Posterior
    {
        std::vector<double> mass;
        bool reset = false; // the last update underflowed and restarted from uniform

        static Posterior uniform(std::size_t N);
        double total() const;
        double entropy() const; // nats
        std::size_t argmax() const;
    };

    // mass[k] proportional to prior[k] exp(-|y - sqrt(P) alpha w^H a_k|^2 / sigma2).
    Posterior posterior_update(const Posterior &prior, cplx y, const SensingVector &w, cplx alpha, double P,
                               double sigma2, const AoaGrid &grid);
    // All measurements at once (product likelihood).
    Posterior posterior_update(const Posterior &prior, const std::vector<cplx> &y, const std::vector<SensingVector> &w,
                               cplx alpha, double P, double sigma2, const AoaGrid &grid);

    double sector_mass(const Posterior &post, const HierCodebook &cb, std::size_t stage, std::size_t sector);

    // Deepest stage holding a sector with mass >= 1/2, its heaviest sector; stage 1 when none qualifies.
    SensingVector hiepm_select(const Posterior &post, const HierCodebook &cb);
    std::pair<std::size_t, std::size_t> hiepm_select_index(const Posterior &post, const HierCodebook &cb);

    struct HiepmTrace
    {
        std::vector<Posterior> posteriors; // after each pilot
        std::vector<SensingVector> sensing;
        std::vector<cplx> measurements;
        double estimate = 0.0; // argmax grid angle after the last pilot
    };

    HiepmTrace hiepm_run(const PilotOracle &oracle, std::size_t pilots, cplx alpha, double P, double sigma2,
                         const HierCodebook &cb, const AoaGrid &grid);

    // ---- LMMSE, MRT, phase matching ----

    struct LinearPrior
    {
        Eigen::VectorXcd mean;
        Eigen::MatrixXcd cov;
    };

    // Sample mean and covariance of n cascaded channel draws.
    LinearPrior estimate_ris_prior(const chan::RisConfig &cfg, std::size_t n, RandomStream stream);

    struct LmmseResult
    {
        ComplexVector h;
        bool ridge = false; // innovation matrix was singular; 1e-10 ridge added
    };

    // Transpose measurements y_t = sqrt(P) w_t^T h + n_t.
    LmmseResult lmmse_estimate(const std::vector<cplx> &y, const std::vector<SensingVector> &W, const LinearPrior &prior,
                               double P, double sigma2);

    // h / ||h||; throws invalid_argument for a zero channel.
    SensingVector mrt_precoder(const ComplexVector &h);

    struct PhaseMatch
    {
        SensingVector v;
        std::size_t zero_entries = 0; // entries given phase 0
    };

    // e^{-j arg h_i}, maximizing |h^T v|^2 under unit modulus.
    PhaseMatch phase_match(const ComplexVector &h_c);

    // Gain-optimal beamformer for channel h under the scenario's constraint and pairing.
    SensingVector matched_beamformer(const policy::Scenario &sc, const ComplexVector &h);

    // ---- nonadaptive networks ----

    enum class FixedVariant
    {
        random,
        learned,
    };

    // Both variants with one seed start from the same initial draw, fixed vectors included.
    policy::TrainResult train_nonadaptive(const policy::Scenario &sc, FixedVariant variant, policy::AgentArch arch,
                                          const policy::TrainConfig &cfg, const policy::TrainObserver &observer = {});

    // ---- batch estimators on the common test episodes ----

    // T constraint-satisfying random vectors, shared by every episode.
    std::vector<SensingVector> random_sensing_set(const policy::Scenario &sc, RandomStream stream);

    policy::BatchEstimator omp_estimator(const policy::Scenario &sc, const AoaGrid &grid,
                                         std::vector<SensingVector> W);
    // Precoding: OMP channel estimate followed by the matched beamformer.
    policy::BatchEstimator cs_mrt_estimator(const policy::Scenario &sc, const AoaGrid &grid,
                                            std::vector<SensingVector> W);
    // Requires L_p = 1 and T = 2 log2(N).
    policy::BatchEstimator hiebs_estimator(const policy::Scenario &sc, const HierCodebook &cb, const AoaGrid &grid);
    // Requires L_p = 1; the fading coefficient is taken as known.
    policy::BatchEstimator hiepm_estimator(const policy::Scenario &sc, const HierCodebook &cb, const AoaGrid &grid);
    policy::BatchEstimator lmmse_phase_match_estimator(const policy::Scenario &sc, LinearPrior prior,
                                                       std::vector<SensingVector> W);
}

#endif
