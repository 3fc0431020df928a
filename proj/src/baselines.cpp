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

#include "activesense/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace activesense::base
{
    namespace
    {
        bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

        std::size_t log2_exact(std::size_t n)
        {
            std::size_t s = 0;
            while ((std::size_t(1) << s) < n)
                ++s;
            return s;
        }

        // Strongest first; equal magnitudes keep selection order.
        void order_by_strength(OmpResult &r)
        {
            std::vector<std::size_t> idx(r.atoms.size());
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(),
                             [&](std::size_t a, std::size_t b) { return std::abs(r.amplitudes[a]) > std::abs(r.amplitudes[b]); });
            OmpResult o;
            o.rank_deficient = r.rank_deficient;
            for (auto i : idx)
            {
                o.atoms.push_back(r.atoms[i]);
                o.angles.push_back(r.angles[i]);
                o.amplitudes.push_back(r.amplitudes[i]);
            }
            r = std::move(o);
        }

        // c_k = a_k^H w for every grid column.
        Eigen::VectorXcd grid_response(const AoaGrid &grid, const SensingVector &w)
        {
            if (w.size() != grid.antennas())
                throw std::invalid_argument("sensing vector extent does not match the grid dictionary");
            return grid.dictionary.adjoint() * to_eigen(w.v);
        }

        void add_log_likelihood(std::vector<double> &logp, cplx y, const SensingVector &w, cplx alpha, double P,
                                double sigma2, const AoaGrid &grid)
        {
            const Eigen::VectorXcd c = grid_response(grid, w);
            const double amp = std::sqrt(P);
            for (std::size_t k = 0; k < logp.size(); ++k)
            {
                // w^H a_k = conj(a_k^H w)
                const cplx pred = amp * alpha * std::conj(c[Eigen::Index(k)]);
                logp[k] -= std::norm(y - pred) / sigma2;
            }
        }

        Posterior normalize_log(std::vector<double> logp)
        {
            Posterior out;
            double mx = -std::numeric_limits<double>::infinity();
            for (double v : logp)
                if (v > mx)
                    mx = v;
            if (!std::isfinite(mx))
            {
                out = Posterior::uniform(logp.size());
                out.reset = true;
                return out;
            }
            out.mass.resize(logp.size());
            double s = 0.0;
            for (std::size_t k = 0; k < logp.size(); ++k)
            {
                out.mass[k] = std::exp(logp[k] - mx);
                s += out.mass[k];
            }
            for (auto &m : out.mass)
                m /= s;
            return out;
        }

        std::vector<double> log_of(const Posterior &prior, const AoaGrid &grid)
        {
            if (prior.mass.size() != grid.size())
                throw std::invalid_argument("posterior_update: prior size does not match the grid");
            std::vector<double> logp(prior.mass.size());
            for (std::size_t k = 0; k < logp.size(); ++k)
            {
                if (!(prior.mass[k] >= 0.0))
                    throw std::invalid_argument("posterior_update: negative prior mass");
                logp[k] = prior.mass[k] > 0.0 ? std::log(prior.mass[k]) : -std::numeric_limits<double>::infinity();
            }
            return logp;
        }

        // Frame t measurement of an mmWave test episode under sensing vector w.
        cplx mmwave_pilot(const policy::EpisodeBatch &b, std::size_t i, std::size_t t, const SensingVector &w, double P)
        {
            return chan::measure_mmwave(b.mmwave[i].h, w, P, b.noise[i][t]);
        }

        double aoa_sq_error(const std::vector<double> &estimate, const chan::MmWaveChannel &ch)
        {
            return policy::loss_aoa(estimate, ch.phis, ch.alphas);
        }
    }

    // ---- grid ----

    std::size_t AoaGrid::nearest(double phi) const
    {
        const auto it = std::lower_bound(points.begin(), points.end(), phi);
        if (it == points.begin())
            return 0;
        if (it == points.end())
            return points.size() - 1;
        const std::size_t hi = std::size_t(it - points.begin());
        return (phi - points[hi - 1] <= points[hi] - phi) ? hi - 1 : hi;
    }

    AoaGrid build_grid(const chan::MmWaveConfig &cfg, std::size_t N)
    {
        if (N < 2)
            throw std::invalid_argument("build_grid: N must be >= 2");
        cfg.validate();
        AoaGrid g;
        g.d_over_lambda = cfg.d_over_lambda;
        g.points.resize(N);
        const double step = (cfg.phi_max - cfg.phi_min) / double(N - 1);
        for (std::size_t k = 0; k < N; ++k)
            g.points[k] = cfg.phi_min + step * double(k);
        g.points[N - 1] = cfg.phi_max;
        g.dictionary.resize(Eigen::Index(cfg.M_r), Eigen::Index(N));
        for (std::size_t k = 0; k < N; ++k)
            g.dictionary.col(Eigen::Index(k)) = to_eigen(chan::array_response(g.points[k], cfg.M_r, cfg.d_over_lambda));
        return g;
    }

    Eigen::VectorXcd to_eigen(const ComplexVector &v)
    {
        Eigen::VectorXcd e(static_cast<Eigen::Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i)
            e[Eigen::Index(i)] = v[i];
        return e;
    }

    ComplexVector from_eigen(const Eigen::VectorXcd &v)
    {
        ComplexVector out(std::size_t(v.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i)
            out.set(std::size_t(i), v[i]);
        return out;
    }

    // ---- OMP ----

    OmpResult omp_recover(const std::vector<cplx> &y, const std::vector<SensingVector> &W, const AoaGrid &grid,
                          std::size_t L_p, double P)
    {
        const std::size_t T = y.size();
        if (W.size() != T)
            throw std::invalid_argument("omp_recover: measurement and sensing counts differ");
        if (L_p < 1 || T < L_p)
            throw std::invalid_argument("omp_recover: need 1 <= L_p <= T");
        if (L_p > grid.size())
            throw std::invalid_argument("omp_recover: L_p exceeds the grid size");
        const Eigen::Index M = Eigen::Index(grid.antennas());

        Eigen::MatrixXcd Wm(M, Eigen::Index(T));
        for (std::size_t t = 0; t < T; ++t)
        {
            if (W[t].size() != grid.antennas())
                throw std::invalid_argument("omp_recover: sensing vector extent does not match the grid");
            Wm.col(Eigen::Index(t)) = to_eigen(W[t].v);
        }
        const Eigen::MatrixXcd D = std::sqrt(P) * (Wm.adjoint() * grid.dictionary); // T x N
        const Eigen::VectorXd col_norm = D.colwise().norm().transpose();
        Eigen::VectorXcd yv(static_cast<Eigen::Index>(T));
        for (std::size_t t = 0; t < T; ++t)
            yv[Eigen::Index(t)] = y[t];

        OmpResult r;
        Eigen::VectorXcd resid = yv;
        Eigen::VectorXcd coef;
        std::vector<bool> used(grid.size(), false);
        for (std::size_t it = 0; it < L_p; ++it)
        {
            const Eigen::VectorXcd corr = D.adjoint() * resid;
            std::size_t best = grid.size();
            double best_v = -1.0;
            for (std::size_t k = 0; k < grid.size(); ++k)
            {
                if (used[k])
                    continue;
                const double nk = col_norm[Eigen::Index(k)];
                const double v = nk > 0.0 ? std::abs(corr[Eigen::Index(k)]) / nk : 0.0;
                if (v > best_v)
                {
                    best_v = v;
                    best = k;
                }
            }
            used[best] = true;
            r.atoms.push_back(best);

            Eigen::MatrixXcd S(Eigen::Index(T), Eigen::Index(r.atoms.size()));
            for (std::size_t j = 0; j < r.atoms.size(); ++j)
                S.col(Eigen::Index(j)) = D.col(Eigen::Index(r.atoms[j]));
            Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXcd> cod(S);
            if (std::size_t(cod.rank()) < r.atoms.size())
                r.rank_deficient = true;
            coef = cod.solve(yv);
            resid = yv - S * coef;
        }
        for (std::size_t j = 0; j < r.atoms.size(); ++j)
        {
            r.angles.push_back(grid.points[r.atoms[j]]);
            r.amplitudes.push_back(coef[Eigen::Index(j)]);
        }
        order_by_strength(r);
        return r;
    }

    ComplexVector omp_channel(const OmpResult &r, const AoaGrid &grid)
    {
        Eigen::VectorXcd h = Eigen::VectorXcd::Zero(grid.dictionary.rows());
        for (std::size_t j = 0; j < r.atoms.size(); ++j)
            h += r.amplitudes[j] * grid.dictionary.col(Eigen::Index(r.atoms[j]));
        return from_eigen(h);
    }

    // ---- hierarchical codebook ----

    const SensingVector &HierCodebook::word(std::size_t stage, std::size_t sector) const
    {
        if (stage < 1 || stage > stages)
            throw std::out_of_range("HierCodebook: stage out of range");
        const auto &row = words[stage - 1];
        if (sector >= row.size())
            throw std::out_of_range("HierCodebook: sector out of range");
        return row[sector];
    }

    std::size_t HierCodebook::sector_width(std::size_t stage, std::size_t grid_size) const
    {
        return grid_size >> stage;
    }

    HierCodebook build_hier_codebook(const AoaGrid &grid)
    {
        const std::size_t N = grid.size();
        if (!is_pow2(N) || N < 2)
            throw std::invalid_argument("build_hier_codebook: grid size must be a power of two");
        HierCodebook cb;
        cb.stages = log2_exact(N);
        // (A^H)^+ maps a desired pattern over the grid to the least-squares beamformer.
        const Eigen::MatrixXcd pinv =
            Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXcd>(grid.dictionary.adjoint()).pseudoInverse();
        for (std::size_t s = 1; s <= cb.stages; ++s)
        {
            const std::size_t sectors = std::size_t(1) << s;
            const std::size_t width = N >> s;
            std::vector<SensingVector> row;
            for (std::size_t k = 0; k < sectors; ++k)
            {
                Eigen::VectorXcd w = pinv.middleCols(Eigen::Index(k * width), Eigen::Index(width)).rowwise().sum();
                const double n = w.norm();
                if (!(n > 0.0))
                    throw std::runtime_error("build_hier_codebook: degenerate codeword");
                w /= n;
                row.push_back(SensingVector::make(from_eigen(w), chan::Constraint::unit_norm));
            }
            cb.words.push_back(std::move(row));
        }
        return cb;
    }

    HiebsResult hiebs_align(const PilotOracle &oracle, const HierCodebook &cb, const AoaGrid &grid,
                            std::size_t flip_stage)
    {
        if (cb.stages == 0 || (std::size_t(1) << cb.stages) != grid.size())
            throw std::invalid_argument("hiebs_align: codebook does not match the grid");
        HiebsResult r;
        std::size_t parent = 0;
        for (std::size_t s = 1; s <= cb.stages; ++s)
        {
            const std::size_t a = 2 * parent, b = a + 1;
            const double ya = std::abs(oracle(cb.word(s, a), r.pilots++));
            const double yb = std::abs(oracle(cb.word(s, b), r.pilots++));
            std::size_t pick = yb > ya ? b : a;
            if (s == flip_stage)
                pick = pick == a ? b : a;
            r.path.push_back(pick);
            parent = pick;
        }
        r.sector = parent;
        const std::size_t width = cb.sector_width(cb.stages, grid.size());
        double s = 0.0;
        for (std::size_t k = parent * width; k < (parent + 1) * width; ++k)
            s += grid.points[k];
        r.angle = s / double(width);
        return r;
    }

    // ---- posterior ----

    Posterior Posterior::uniform(std::size_t N)
    {
        if (N == 0)
            throw std::invalid_argument("Posterior: empty grid");
        Posterior p;
        p.mass.assign(N, 1.0 / double(N));
        return p;
    }

    double Posterior::total() const
    {
        double s = 0.0;
        for (double m : mass)
            s += m;
        return s;
    }

    double Posterior::entropy() const
    {
        double h = 0.0;
        for (double m : mass)
            if (m > 0.0)
                h -= m * std::log(m);
        return h;
    }

    std::size_t Posterior::argmax() const
    {
        return std::size_t(std::max_element(mass.begin(), mass.end()) - mass.begin());
    }

    Posterior posterior_update(const Posterior &prior, cplx y, const SensingVector &w, cplx alpha, double P,
                               double sigma2, const AoaGrid &grid)
    {
        return posterior_update(prior, std::vector<cplx>{y}, std::vector<SensingVector>{w}, alpha, P, sigma2, grid);
    }

    Posterior posterior_update(const Posterior &prior, const std::vector<cplx> &y, const std::vector<SensingVector> &w,
                               cplx alpha, double P, double sigma2, const AoaGrid &grid)
    {
        if (y.size() != w.size())
            throw std::invalid_argument("posterior_update: measurement and sensing counts differ");
        if (!(sigma2 > 0.0))
            throw std::invalid_argument("posterior_update: sigma2 must be positive");
        auto logp = log_of(prior, grid);
        for (std::size_t t = 0; t < y.size(); ++t)
            add_log_likelihood(logp, y[t], w[t], alpha, P, sigma2, grid);
        return normalize_log(std::move(logp));
    }

    double sector_mass(const Posterior &post, const HierCodebook &cb, std::size_t stage, std::size_t sector)
    {
        const std::size_t width = cb.sector_width(stage, post.mass.size());
        double s = 0.0;
        for (std::size_t k = sector * width; k < (sector + 1) * width; ++k)
            s += post.mass[k];
        return s;
    }

    std::pair<std::size_t, std::size_t> hiepm_select_index(const Posterior &post, const HierCodebook &cb)
    {
        if (post.mass.size() != (std::size_t(1) << cb.stages))
            throw std::invalid_argument("hiepm_select: posterior does not match the codebook");
        std::pair<std::size_t, std::size_t> pick{1, 0};
        double stage1_best = -1.0;
        for (std::size_t k = 0; k < 2; ++k)
        {
            const double m = sector_mass(post, cb, 1, k);
            if (m > stage1_best)
            {
                stage1_best = m;
                pick.second = k;
            }
        }
        for (std::size_t s = 1; s <= cb.stages; ++s)
        {
            double best = -1.0;
            std::size_t best_k = 0;
            for (std::size_t k = 0; k < (std::size_t(1) << s); ++k)
            {
                const double m = sector_mass(post, cb, s, k);
                if (m > best)
                {
                    best = m;
                    best_k = k;
                }
            }
            if (best >= 0.5)
                pick = {s, best_k};
        }
        return pick;
    }

    SensingVector hiepm_select(const Posterior &post, const HierCodebook &cb)
    {
        const auto [s, k] = hiepm_select_index(post, cb);
        return cb.word(s, k);
    }

    HiepmTrace hiepm_run(const PilotOracle &oracle, std::size_t pilots, cplx alpha, double P, double sigma2,
                         const HierCodebook &cb, const AoaGrid &grid)
    {
        HiepmTrace tr;
        Posterior post = Posterior::uniform(grid.size());
        for (std::size_t t = 0; t < pilots; ++t)
        {
            const SensingVector w = hiepm_select(post, cb);
            const cplx y = oracle(w, t);
            post = posterior_update(post, y, w, alpha, P, sigma2, grid);
            tr.sensing.push_back(w);
            tr.measurements.push_back(y);
            tr.posteriors.push_back(post);
        }
        tr.estimate = grid.points[post.argmax()];
        return tr;
    }

    // ---- LMMSE, MRT, phase matching ----

    LinearPrior estimate_ris_prior(const chan::RisConfig &cfg, std::size_t n, RandomStream stream)
    {
        if (n < 2)
            throw std::invalid_argument("estimate_ris_prior: need at least two draws");
        const Eigen::Index N = Eigen::Index(cfg.elements());
        Eigen::MatrixXcd X(N, Eigen::Index(n));
        for (std::size_t i = 0; i < n; ++i)
            X.col(Eigen::Index(i)) = to_eigen(chan::sample_ris(cfg, stream.child(std::uint64_t(i))).h_c);
        LinearPrior p;
        p.mean = X.rowwise().mean();
        const Eigen::MatrixXcd C = X.colwise() - p.mean;
        p.cov = (C * C.adjoint()) / double(n - 1);
        return p;
    }

    LmmseResult lmmse_estimate(const std::vector<cplx> &y, const std::vector<SensingVector> &W, const LinearPrior &prior,
                               double P, double sigma2)
    {
        if (y.size() != W.size())
            throw std::invalid_argument("lmmse_estimate: measurement and sensing counts differ");
        const Eigen::Index N = prior.mean.size();
        if (prior.cov.rows() != N || prior.cov.cols() != N)
            throw std::invalid_argument("lmmse_estimate: prior shapes disagree");
        LmmseResult r;
        if (y.empty())
        {
            r.h = from_eigen(prior.mean);
            return r;
        }
        const Eigen::Index T = Eigen::Index(y.size());
        // Rows of G are sqrt(P) w_t^T, so y = G h + n.
        Eigen::MatrixXcd G(T, N);
        Eigen::VectorXcd yv(T);
        for (Eigen::Index t = 0; t < T; ++t)
        {
            const auto &w = W[std::size_t(t)];
            if (Eigen::Index(w.size()) != N)
                throw std::invalid_argument("lmmse_estimate: sensing vector extent mismatch");
            G.row(t) = std::sqrt(P) * to_eigen(w.v).transpose();
            yv[t] = y[std::size_t(t)];
        }
        Eigen::MatrixXcd S = G * prior.cov * G.adjoint();
        S.diagonal().array() += sigma2;
        const Eigen::VectorXcd innov = yv - G * prior.mean;
        Eigen::LLT<Eigen::MatrixXcd> llt(S);
        if (llt.info() != Eigen::Success)
        {
            S.diagonal().array() += 1e-10;
            llt.compute(S);
            r.ridge = true;
        }
        Eigen::VectorXcd x;
        if (llt.info() == Eigen::Success)
            x = llt.solve(innov);
        else
            x = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXcd>(S).solve(innov);
        r.h = from_eigen(prior.mean + prior.cov * G.adjoint() * x);
        return r;
    }

    SensingVector mrt_precoder(const ComplexVector &h)
    {
        const double n = h.norm();
        if (!(n > 0.0))
            throw std::invalid_argument("mrt_precoder: zero channel");
        ComplexVector v(h.size());
        for (std::size_t i = 0; i < h.size(); ++i)
            v.set(i, h[i] / n);
        return SensingVector::make(std::move(v), chan::Constraint::unit_norm);
    }

    PhaseMatch phase_match(const ComplexVector &h_c)
    {
        PhaseMatch out;
        ComplexVector v(h_c.size());
        for (std::size_t i = 0; i < h_c.size(); ++i)
        {
            if (h_c[i] == cplx{})
            {
                ++out.zero_entries;
                v.set(i, 1.0);
            }
            else
                v.set(i, std::polar(1.0, -std::arg(h_c[i])));
        }
        out.v = SensingVector::make(std::move(v), chan::Constraint::unit_modulus);
        return out;
    }

    SensingVector matched_beamformer(const policy::Scenario &sc, const ComplexVector &h)
    {
        const chan::Constraint c = sc.spec.constraint;
        if (c == chan::Constraint::unit_norm)
        {
            if (sc.pairing() == chan::Pairing::hermitian)
                return mrt_precoder(h);
            ComplexVector hc(h.size());
            for (std::size_t i = 0; i < h.size(); ++i)
                hc.set(i, std::conj(h[i]));
            return mrt_precoder(hc);
        }
        if (sc.pairing() == chan::Pairing::transpose && c == chan::Constraint::unit_modulus)
            return phase_match(h).v;
        const double r = sc.target_modulus();
        ComplexVector v(h.size());
        for (std::size_t i = 0; i < h.size(); ++i)
        {
            const double ph = h[i] == cplx{} ? 0.0 : std::arg(h[i]);
            v.set(i, std::polar(r, sc.pairing() == chan::Pairing::hermitian ? ph : -ph));
        }
        return SensingVector::make(std::move(v), c);
    }

    // ---- nonadaptive networks ----

    policy::TrainResult train_nonadaptive(const policy::Scenario &sc, FixedVariant variant, policy::AgentArch arch,
                                          const policy::TrainConfig &cfg, const policy::TrainObserver &observer)
    {
        arch.kind = variant == FixedVariant::random ? policy::AgentKind::nonadaptive_random
                                                    : policy::AgentKind::nonadaptive_learned;
        return policy::train(sc, arch, cfg, observer);
    }

    // ---- batch estimators ----

    std::vector<SensingVector> random_sensing_set(const policy::Scenario &sc, RandomStream stream)
    {
        num::Rng rng(stream);
        std::vector<SensingVector> W;
        for (std::size_t t = 0; t < sc.spec.T; ++t)
            W.push_back(chan::random_sensing_vector(sc.antennas(), sc.spec.constraint, rng));
        return W;
    }

    policy::BatchEstimator omp_estimator(const policy::Scenario &sc, const AoaGrid &grid, std::vector<SensingVector> W)
    {
        if (sc.spec.task != policy::Task::aoa)
            throw std::invalid_argument("omp_estimator: AoA task only");
        if (W.size() != sc.spec.T)
            throw std::invalid_argument("omp_estimator: need T sensing vectors");
        const double P = sc.power();
        const std::size_t L = sc.mmwave.L_p;
        return [&grid, W = std::move(W), P, L](const policy::EpisodeBatch &b) {
            std::vector<double> out;
            out.reserve(b.size());
            for (std::size_t i = 0; i < b.size(); ++i)
            {
                std::vector<cplx> y;
                for (std::size_t t = 0; t < W.size(); ++t)
                    y.push_back(mmwave_pilot(b, i, t, W[t], P));
                const auto r = omp_recover(y, W, grid, L, P);
                out.push_back(aoa_sq_error(r.angles, b.mmwave[i]));
            }
            return out;
        };
    }

    policy::BatchEstimator cs_mrt_estimator(const policy::Scenario &sc, const AoaGrid &grid,
                                            std::vector<SensingVector> W)
    {
        if (sc.spec.task != policy::Task::precoding)
            throw std::invalid_argument("cs_mrt_estimator: precoding task only");
        if (W.size() != sc.spec.T)
            throw std::invalid_argument("cs_mrt_estimator: need T sensing vectors");
        const double P = sc.power();
        const std::size_t L = std::min(sc.mmwave.L_p, sc.spec.T);
        return [&grid, sc, W = std::move(W), P, L](const policy::EpisodeBatch &b) {
            std::vector<double> out;
            out.reserve(b.size());
            for (std::size_t i = 0; i < b.size(); ++i)
            {
                std::vector<cplx> y;
                for (std::size_t t = 0; t < W.size(); ++t)
                    y.push_back(mmwave_pilot(b, i, t, W[t], P));
                const auto r = omp_recover(y, W, grid, L, P);
                ComplexVector h_hat = omp_channel(r, grid);
                if (!(h_hat.norm() > 0.0))
                    h_hat = grid.dictionary.cols() > 0 ? from_eigen(grid.dictionary.col(0)) : h_hat;
                const auto v = matched_beamformer(sc, h_hat);
                out.push_back(chan::beamforming_gain(b.mmwave[i].h, v, chan::Pairing::hermitian));
            }
            return out;
        };
    }

    policy::BatchEstimator hiebs_estimator(const policy::Scenario &sc, const HierCodebook &cb, const AoaGrid &grid)
    {
        if (sc.spec.task != policy::Task::aoa || sc.mmwave.L_p != 1)
            throw std::invalid_argument("hiebs_estimator: single-path AoA task only");
        if (sc.spec.T != 2 * cb.stages)
            throw std::invalid_argument("hiebs_estimator: T must equal 2 log2(N)");
        const double P = sc.power();
        return [&cb, &grid, P](const policy::EpisodeBatch &b) {
            std::vector<double> out;
            out.reserve(b.size());
            for (std::size_t i = 0; i < b.size(); ++i)
            {
                const auto r = hiebs_align(
                    [&](const SensingVector &w, std::size_t t) { return mmwave_pilot(b, i, t, w, P); }, cb, grid);
                out.push_back(aoa_sq_error({r.angle}, b.mmwave[i]));
            }
            return out;
        };
    }

    policy::BatchEstimator hiepm_estimator(const policy::Scenario &sc, const HierCodebook &cb, const AoaGrid &grid)
    {
        if (sc.spec.task != policy::Task::aoa || sc.mmwave.L_p != 1)
            throw std::invalid_argument("hiepm_estimator: single-path AoA task only");
        const double P = sc.power();
        const std::size_t T = sc.spec.T;
        return [&cb, &grid, P, T](const policy::EpisodeBatch &b) {
            std::vector<double> out;
            out.reserve(b.size());
            for (std::size_t i = 0; i < b.size(); ++i)
            {
                const auto tr = hiepm_run(
                    [&](const SensingVector &w, std::size_t t) { return mmwave_pilot(b, i, t, w, P); }, T,
                    b.mmwave[i].alphas[0], P, 1.0, cb, grid);
                out.push_back(aoa_sq_error({tr.estimate}, b.mmwave[i]));
            }
            return out;
        };
    }

    policy::BatchEstimator lmmse_phase_match_estimator(const policy::Scenario &sc, LinearPrior prior,
                                                       std::vector<SensingVector> W)
    {
        if (!sc.is_ris())
            throw std::invalid_argument("lmmse_phase_match_estimator: RIS task only");
        if (W.size() != sc.spec.T)
            throw std::invalid_argument("lmmse_phase_match_estimator: need T sensing vectors");
        const double P = sc.power();
        const double s2 = sc.noise_variance();
        return [prior = std::move(prior), W = std::move(W), P, s2](const policy::EpisodeBatch &b) {
            std::vector<double> out;
            out.reserve(b.size());
            for (std::size_t i = 0; i < b.size(); ++i)
            {
                const auto &h_c = b.ris[i].h_c;
                std::vector<cplx> y;
                for (std::size_t t = 0; t < W.size(); ++t)
                    y.push_back(chan::measure_ris(h_c, W[t], P, b.noise[i][t][0]));
                const auto est = lmmse_estimate(y, W, prior, P, s2);
                out.push_back(chan::beamforming_gain(h_c, phase_match(est.h).v, chan::Pairing::transpose));
            }
            return out;
        };
    }
}
