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


// Acceptance criteria runner. `acceptance <n>` checks criterion n (1..11) and
// prints one PASS/FAIL line; the exit status is 0 only on PASS.
//
// Criteria 7-11 run the shipped configs through the harness. Their outputs and
// checkpoint cache go under the work directory (--work, default ./acceptance-work).

#include "activesense/baselines.hpp"
#include "activesense/harness.hpp"

#include "../common/oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <numbers>
#include <sstream>
#include <string>

using namespace activesense;
namespace fs = std::filesystem;
namespace hx = activesense::harness;
using num::cplx;
using num::RandomStream;

namespace
{
    struct Outcome
    {
        bool pass = false;
        std::string detail;
    };

    fs::path g_configs = ACTIVESENSE_CONFIG_DIR;
    fs::path g_work = "acceptance-work";

    std::string fmt(const char *f, double a)
    {
        char buf[64];
        std::snprintf(buf, sizeof buf, f, a);
        return buf;
    }

    cplx herm(const chan::SensingVector &w, const num::ComplexVector &h)
    {
        cplx s = 0.0;
        for (std::size_t i = 0; i < h.size(); ++i)
            s += std::conj(w.v[i]) * h[i];
        return s;
    }

    cplx trans(const chan::SensingVector &w, const num::ComplexVector &h)
    {
        cplx s = 0.0;
        for (std::size_t i = 0; i < h.size(); ++i)
            s += w.v[i] * h[i];
        return s;
    }

    policy::Scenario scenario(policy::Task task, chan::Constraint c, std::size_t M, std::size_t T, double snr_db)
    {
        policy::Scenario sc;
        sc.spec.task = task;
        sc.spec.constraint = c;
        sc.spec.include_snr = task == policy::Task::aoa;
        sc.spec.T = T;
        sc.spec.snr_db = snr_db;
        sc.mmwave.M_r = M;
        if (task == policy::Task::ris)
        {
            sc.ris.N1 = 4;
            sc.ris.N2 = M / 4;
        }
        return sc;
    }

    // Initial weights plus a perturbation, so that gates and batch-norm see generic inputs.
    policy::AgentParams generic_params(const policy::Scenario &sc, const policy::AgentArch &arch, std::uint64_t seed)
    {
        auto p = policy::init_agent(sc, arch, RandomStream{seed}.child("init"));
        auto m = p.flatten();
        num::Rng rng(RandomStream{seed}.child("jitter"));
        for (auto &[k, t] : m)
        {
            if (k.ends_with("running_var"))
                continue;
            for (auto &x : t.data)
                x += 0.1 * rng.normal();
        }
        p.assign(m);
        return p;
    }

    // ---- 1: gradients ----

    Outcome gradients()
    {
        using nn::Activation;
        double layer = 0.0;
        num::Rng rng(RandomStream{101});
        auto rnd = [&](std::vector<std::size_t> shape, double scale) {
            nn::Tensor t(std::move(shape));
            for (auto &x : t.data)
                x = rng.uniform(-scale, scale);
            return t;
        };
        {
            nn::Graph g;
            auto d = nn::register_dense(g, "d", nn::init_dense(8, 16, Activation::relu, rng));
            g.mark_output("loss", g.sum(g.mul(nn::apply_dense(g, d, g.input("x")), g.constant(rnd({5, 16}, 1.0))),
                                        ad::Axis::all));
            layer = std::max(layer, ad::check_gradients(g, {{"x", rnd({5, 8}, 1.0)}}, "loss", 1e-6));
        }
        {
            nn::Graph g;
            auto l = nn::register_lstm(g, "lstm", nn::init_lstm(3, 16, rng));
            auto st = nn::apply_lstm(g, l, g.input("y"), g.input("s"), g.input("c"));
            g.mark_output("loss", g.add(g.sum(g.mul(st.s, g.constant(rnd({5, 16}, 1.0))), ad::Axis::all),
                                        g.sum(g.mul(st.c, g.constant(rnd({5, 16}, 1.0))), ad::Axis::all)));
            layer = std::max(layer, ad::check_gradients(
                                        g, {{"y", rnd({5, 3}, 1.0)}, {"s", rnd({5, 16}, 0.9)}, {"c", rnd({5, 16}, 2.0)}},
                                        "loss", 1e-6));
        }
        {
            nn::Graph g;
            auto bn = nn::register_batchnorm(g, "bn", nn::init_batchnorm(16));
            g.set_batch_norm_mode(ad::BatchNormMode::train);
            auto x = g.parameter("x", rnd({6, 16}, 2.0));
            g.mark_output("loss", g.sum(g.mul(nn::apply_batchnorm(g, bn, x), g.constant(rnd({6, 16}, 1.0))),
                                        ad::Axis::all));
            layer = std::max(layer, ad::check_gradients(g, {}, "loss", 1e-6));
        }
        {
            nn::Graph g;
            auto x = g.parameter("x", rnd({4, 16}, 1.0));
            g.mark_output("loss", g.add(g.sum(g.mul(g.normalize_unit_power(x), g.constant(rnd({4, 16}, 1.0))),
                                              ad::Axis::all),
                                        g.sum(g.mul(g.normalize_modulus(x, std::sqrt(2.0 / 16.0)),
                                                    g.constant(rnd({4, 16}, 1.0))),
                                              ad::Axis::all)));
            layer = std::max(layer, ad::check_gradients(g, {}, "loss", 1e-6));
        }

        double e2e = 0.0;
        const std::vector<std::pair<policy::Task, chan::Constraint>> cases{
            {policy::Task::aoa, chan::Constraint::unit_norm},
            {policy::Task::precoding, chan::Constraint::unit_norm},
            {policy::Task::precoding, chan::Constraint::constant_modulus},
            {policy::Task::ris, chan::Constraint::unit_modulus},
        };
        for (const auto &[task, c] : cases)
        {
            const auto sc = scenario(task, c, 8, 4, 5.0);
            policy::AgentArch arch;
            arch.state_size = 16;
            arch.sensing_widths = {16};
            arch.final_widths = {16};
            policy::Agent agent(sc, generic_params(sc, arch, 7));
            const auto b = policy::draw_episodes(sc, RandomStream{102}, 0, 4, sc.spec.T);
            agent.graph().set_batch_norm_mode(ad::BatchNormMode::train);
            // Batch-norm curvature lives at the scale sqrt(eps) ~ 3e-3, so the central-difference
            // truncation error (~h^2) needs a smaller step than the per-layer checks.
            e2e = std::max(e2e, ad::check_gradients(agent.graph(), agent.bind(b), "loss", 1e-7));
        }
        return {e2e < 1e-4 && layer < 1e-5,
                "end-to-end max rel err " + fmt("%.2e", e2e) + " (< 1e-4), per-layer " + fmt("%.2e", layer) +
                    " (< 1e-5)"};
    }

    // ---- 2: constraints ----

    double violation(const num::ComplexVector &v, chan::Constraint c)
    {
        double worst = 0.0;
        if (c == chan::Constraint::unit_norm)
        {
            double n2 = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i)
                n2 += std::norm(v[i]);
            return std::abs(std::sqrt(n2) - 1.0);
        }
        // sqrt(2 / M) over the 2M_r real entries
        const double target = c == chan::Constraint::unit_modulus ? 1.0 : std::sqrt(2.0 / double(2 * v.size()));
        for (std::size_t i = 0; i < v.size(); ++i)
            worst = std::max(worst, std::abs(std::abs(v[i]) - target));
        return worst;
    }

    Outcome constraints()
    {
        const std::vector<std::pair<policy::Task, chan::Constraint>> cases{
            {policy::Task::aoa, chan::Constraint::unit_norm},
            {policy::Task::aoa, chan::Constraint::constant_modulus},
            {policy::Task::precoding, chan::Constraint::unit_norm},
            {policy::Task::precoding, chan::Constraint::constant_modulus},
            {policy::Task::ris, chan::Constraint::unit_modulus},
        };
        double worst = 0.0;
        std::size_t checked = 0;
        for (const auto &[task, c] : cases)
        {
            const auto sc = scenario(task, c, 16, 6, 0.0);
            policy::AgentArch arch;
            arch.state_size = 32;
            arch.sensing_widths = {32};
            arch.final_widths = {32};
            policy::Agent agent(sc, generic_params(sc, arch, 11));
            for (std::size_t chunk = 0; chunk < 10; ++chunk)
            {
                const auto b = policy::draw_episodes(sc, RandomStream{103}, chunk * 1000, 1000, sc.spec.T);
                const auto r = agent.run(b, nn::Mode::infer, true);
                for (const auto &rec : r.records)
                {
                    for (const auto &w : rec.sensing)
                    {
                        worst = std::max(worst, violation(w.v, c));
                        ++checked;
                    }
                    if (task != policy::Task::aoa)
                    {
                        worst = std::max(worst, violation(num::ComplexVector::from_stacked(rec.output), c));
                        ++checked;
                    }
                }
            }
        }
        return {worst <= 1e-9, std::to_string(checked) + " vectors over 5 task/constraint cases x 10^4 episodes, "
                                   "max violation " + fmt("%.2e", worst) + " (<= 1e-9)"};
    }

    // ---- 3: analytic optima ----

    Outcome optima()
    {
        num::Rng rng(RandomStream{104});
        double mrt_err = 0.0, pm_err = 0.0;
        std::size_t mrt_beaten = 0, pm_beaten = 0;
        chan::RisConfig ris;
        for (std::size_t d = 0; d < 1000; ++d)
        {
            const auto h = num::sample_complex_gaussian(16, 1.0, rng);
            const auto v = base::mrt_precoder(h);
            const double g = -policy::loss_gain(h, v, chan::Pairing::hermitian);
            double n2 = 0.0;
            for (std::size_t i = 0; i < 16; ++i)
                n2 += std::norm(h[i]);
            mrt_err = std::max(mrt_err, std::abs(g - n2) / n2);
            for (int k = 0; k < 1000; ++k)
                mrt_beaten += std::norm(herm(chan::random_sensing_vector(16, chan::Constraint::unit_norm, rng), h)) >
                              g * (1.0 + 1e-12);

            const auto hc = chan::sample_ris(ris, RandomStream{105}.child(std::uint64_t(d))).h_c;
            const auto pm = base::phase_match(hc);
            const double gp = -policy::loss_gain(hc, pm.v, chan::Pairing::transpose);
            double l1 = 0.0;
            for (std::size_t i = 0; i < hc.size(); ++i)
                l1 += std::abs(hc[i]);
            pm_err = std::max(pm_err, std::abs(gp - l1 * l1) / (l1 * l1));
            for (int k = 0; k < 1000; ++k)
                pm_beaten +=
                    std::norm(trans(chan::random_sensing_vector(hc.size(), chan::Constraint::unit_modulus, rng), hc)) >
                    gp * (1.0 + 1e-12);
        }
        const bool ok = mrt_err < 1e-12 && pm_err < 1e-12 && mrt_beaten == 0 && pm_beaten == 0;
        return {ok, "MRT |gain - ||h||^2| rel " + fmt("%.1e", mrt_err) + ", beaten " + std::to_string(mrt_beaten) +
                        "/10^6; phase match rel " + fmt("%.1e", pm_err) + ", beaten " + std::to_string(pm_beaten) +
                        "/10^6"};
    }

    // ---- 4: OMP ----

    Outcome omp()
    {
        chan::MmWaveConfig mc;
        mc.M_r = 16;
        const auto grid = base::build_grid(mc, 64);
        const auto W = oracle::dft_sensing(16);
        num::Rng rng(RandomStream{106});
        int single = 0, pair = 0, agree = 0;
        for (int trial = 0; trial < 100; ++trial)
        {
            const std::size_t k = std::size_t(rng.uniform() * 64.0);
            const cplx a = rng.complex_normal(1.0);
            std::vector<cplx> y;
            for (const auto &w : W)
                y.push_back(a * herm(w, chan::array_response(grid.points[k], 16)));
            const auto r = base::omp_recover(y, W, grid, 1, 1.0);
            single += r.atoms[0] == k && oracle::best_single_atom(y, W, grid.points, 1.0) == k;
        }
        for (int trial = 0; trial < 100; ++trial)
        {
            // well separated: at least 8 grid cells (about 4 beamwidths / 2) apart
            std::size_t k1 = std::size_t(rng.uniform() * 64.0), k2 = k1;
            while (std::max(k1, k2) - std::min(k1, k2) < 8)
                k2 = std::size_t(rng.uniform() * 64.0);
            const cplx a1 = rng.complex_normal(1.0), a2 = rng.complex_normal(1.0);
            std::vector<cplx> y;
            for (const auto &w : W)
                y.push_back(a1 * herm(w, chan::array_response(grid.points[k1], 16)) +
                            a2 * herm(w, chan::array_response(grid.points[k2], 16)));
            const auto r = base::omp_recover(y, W, grid, 2, 1.0);
            const auto bf = oracle::best_atom_pair(y, W, grid.points, 1.0);
            const std::set<std::size_t> got(r.atoms.begin(), r.atoms.end()), truth{k1, k2};
            pair += got == truth;
            agree += got == std::set<std::size_t>{bf.first, bf.second};
        }
        return {single == 100 && pair >= 99 && agree >= 99,
                "L_p=1 " + std::to_string(single) + "/100 (need 100), L_p=2 " + std::to_string(pair) +
                    "/100 (need 99), brute-force agreement " + std::to_string(agree) + "/100"};
    }

    // ---- 5: hieBS ----

    Outcome hiebs()
    {
        chan::MmWaveConfig mc;
        mc.M_r = 16;
        bool pilots_ok = true;
        for (std::size_t N : {16u, 64u, 128u})
        {
            const auto grid = base::build_grid(mc, N);
            const auto cb = base::build_hier_codebook(grid);
            const auto a = chan::array_response(grid.points[N / 3], 16);
            const auto r = base::hiebs_align([&](const chan::SensingVector &w, std::size_t) { return herm(w, a); },
                                             cb, grid);
            pilots_ok = pilots_ok && r.pilots == 2 * std::size_t(std::log2(double(N)) + 0.5);
            if (N == 128)
                pilots_ok = pilots_ok && r.pilots == 14;
        }
        const auto grid = base::build_grid(mc, 64);
        const auto cb = base::build_hier_codebook(grid);
        num::Rng rng(RandomStream{107});
        int hits = 0;
        for (int trial = 0; trial < 100; ++trial)
        {
            const std::size_t k = std::size_t(rng.uniform() * 64.0);
            const auto a = chan::array_response(grid.points[k], 16);
            const auto r = base::hiebs_align([&](const chan::SensingVector &w, std::size_t) { return herm(w, a); },
                                             cb, grid);
            hits += r.sector == k; // final-stage sectors hold one grid point each
        }
        return {pilots_ok && hits == 100, std::string("pilot count 2 log2 N ") + (pilots_ok ? "ok" : "WRONG") +
                                              " (14 at N=128); noiseless descent " + std::to_string(hits) +
                                              "/100 true sectors (need 100)"};
    }

    // ---- 6: posterior engine ----

    double entropy(const std::vector<double> &m)
    {
        double h = 0.0;
        for (double p : m)
            if (p > 0.0)
                h -= p * std::log(p);
        return h;
    }

    Outcome posterior()
    {
        chan::MmWaveConfig mc;
        mc.M_r = 16;
        const std::size_t N = 64, T = 12;
        const auto grid = base::build_grid(mc, N);
        double sum_err = 0.0, batch_err = 0.0;
        int concentrated = 0, monotone = 0;
        for (double snr_db : {30.0, 0.0})
        {
            const double P = std::pow(10.0, snr_db / 10.0);
            for (std::uint64_t e = 0; e < 100; ++e)
            {
                const RandomStream ep = RandomStream{108}.child(std::uint64_t(snr_db)).child(e);
                num::Rng rng(ep);
                const std::size_t k = std::size_t(rng.uniform() * double(N));
                const auto h = chan::array_response(grid.points[k], 16);
                auto post = base::Posterior::uniform(N);
                std::vector<chan::SensingVector> ws;
                std::vector<cplx> ys;
                double prev = entropy(post.mass);
                bool mono = true;
                for (std::size_t t = 0; t < T; ++t)
                {
                    // beam matched to the current posterior peak
                    auto a = chan::array_response(grid.points[post.argmax()], 16);
                    for (std::size_t m = 0; m < 16; ++m)
                        a.set(m, a[m] / 4.0);
                    ws.push_back(chan::SensingVector::make(a, chan::Constraint::unit_norm));
                    const auto z = num::sample_complex_gaussian(16, 1.0, rng);
                    ys.push_back(chan::measure_mmwave(h, ws.back(), P, z));
                    post = base::posterior_update(post, ys.back(), ws.back(), 1.0, P, 1.0, grid);
                    double s = 0.0;
                    for (double m : post.mass)
                        s += m;
                    sum_err = std::max(sum_err, std::abs(s - 1.0));
                    const double H = entropy(post.mass);
                    mono = mono && H < prev;
                    prev = H;
                }
                const auto batched = base::posterior_update(base::Posterior::uniform(N), ys, ws, 1.0, P, 1.0, grid);
                for (std::size_t j = 0; j < N; ++j)
                    batch_err = std::max(batch_err, std::abs(batched.mass[j] - post.mass[j]));
                if (snr_db > 0.0)
                    concentrated += post.argmax() == k;
                else
                    monotone += mono;
            }
        }
        const bool ok = sum_err <= 1e-12 && batch_err <= 1e-10 && concentrated == 100 && monotone >= 90;
        return {ok, "sum err " + fmt("%.1e", sum_err) + ", chained vs batched " + fmt("%.1e", batch_err) +
                        ", 30 dB argmax at truth " + std::to_string(concentrated) +
                        "/100, 0 dB monotone entropy " + std::to_string(monotone) + "/100 (need 90)"};
    }

    // ---- 7-11: trained trends through the harness ----

    hx::ExperimentConfig load(const std::string &file, const std::string &out)
    {
        auto cfg = hx::load_config((g_configs / file).string());
        cfg.output_dir = (g_work / out).string();
        cfg.cache_dir = (g_work / "cache").string();
        return cfg;
    }

    hx::RunOptions options()
    {
        hx::RunOptions o;
        o.log = [](const std::string &s) { std::cerr << s << "\n"; };
        return o;
    }

    // Trained models come from the shared cache when an earlier criterion produced them.
    std::vector<hx::ResultRow> run(const hx::ExperimentConfig &cfg)
    {
        return hx::run_experiment(cfg, options()).rows;
    }

    const hx::ResultRow &row(const std::vector<hx::ResultRow> &rows, const std::string &method, std::uint64_t seed)
    {
        for (const auto &r : rows)
            if (r.method == method && r.seed == seed)
                return r;
        throw std::runtime_error("no result row for " + method);
    }

    // Paired margin of a over b in units of the paired standard error.
    struct Margin
    {
        double diff = 0.0, se = 0.0;
        double z() const { return se > 0.0 ? diff / se : (diff > 0.0 ? INFINITY : 0.0); }
    };

    Margin paired(const hx::ResultRow &a, const hx::ResultRow &b)
    {
        const auto &x = a.per_episode, &y = b.per_episode;
        if (x.size() != y.size() || x.size() < 2)
            throw std::runtime_error("paired margin needs equal episode counts");
        const double n = double(x.size());
        double mean = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            mean += (x[i] - y[i]) / n;
        double ss = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            ss += (x[i] - y[i] - mean) * (x[i] - y[i] - mean);
        return {mean, std::sqrt(ss / (n - 1.0) / n)};
    }

    Outcome mmwave_trend()
    {
        const auto rows = run(load("c07_mmwave_aoa.json", "c07"));
        const double active = row(rows, "active", 1).metric_mean, omp = row(rows, "omp", 1).metric_mean;
        return {omp >= 2.0 * active, "active MSE " + fmt("%.4g", active) + " rad^2, OMP " + fmt("%.4g", omp) +
                                         ", ratio " + fmt("%.3f", omp / active) + " (need >= 2)"};
    }

    std::string ordering(const std::vector<hx::ResultRow> &rows, const std::vector<std::string> &chain,
                         std::uint64_t seed, bool &ok)
    {
        std::string s = "seed " + std::to_string(seed) + ":";
        for (std::size_t i = 0; i < chain.size(); ++i)
            s += " " + chain[i] + " " + fmt("%.4g", row(rows, chain[i], seed).metric_mean);
        for (std::size_t i = 0; i + 1 < chain.size(); ++i)
        {
            const auto m = paired(row(rows, chain[i], seed), row(rows, chain[i + 1], seed));
            ok = ok && m.z() >= 2.0;
            s += "; " + chain[i] + "-" + chain[i + 1] + " " + fmt("%+.4g", m.diff) + " (" + fmt("%.1f", m.z()) + " SE)";
        }
        return s;
    }

    Outcome gain_ordering()
    {
        const auto cfg = load("c08_precoding.json", "c08");
        const auto rows = run(cfg);
        bool ok = true;
        std::string s;
        for (auto seed : cfg.seeds)
            s += (s.empty() ? "" : " | ") +
                 ordering(rows, {"active", "nonadaptive-learned", "nonadaptive-random"}, seed, ok);
        return {ok, s};
    }

    Outcome ris_trend()
    {
        const auto cfg = load("c09_ris.json", "c09");
        const auto rows = run(cfg);
        bool ok = true;
        const std::string s = ordering(
            rows, {"active", "nonadaptive-learned", "nonadaptive-random", "lmmse-phase-match"}, cfg.seeds.front(), ok);
        return {ok, s};
    }

    Outcome noncoherent()
    {
        const auto coh = run(load("c07_mmwave_aoa.json", "c07"));
        const auto nc = run(load("c10_noncoherent.json", "c10"));
        const double a = row(coh, "active", 1).metric_mean, o = row(coh, "omp", 1).metric_mean;
        const double n = row(nc, "active", 1).metric_mean;
        return {n <= 4.0 * a && n < o, "noncoherent MSE " + fmt("%.4g", n) + ", coherent " + fmt("%.4g", a) +
                                           " (ratio " + fmt("%.2f", n / a) + ", need <= 4), OMP " + fmt("%.4g", o)};
    }

    Outcome determinism()
    {
        auto first = load("c07_mmwave_aoa.json", "c07");
        const std::string a = hx::run_experiment(first, options()).results_path;
        auto again = load("c07_mmwave_aoa.json", "c11");
        again.use_cache = false;
        const std::string b = hx::run_experiment(again, options()).results_path;
        auto slurp = [](const std::string &p) {
            std::ifstream f(p, std::ios::binary);
            std::ostringstream os;
            os << f.rdbuf();
            return os.str();
        };
        const std::string x = slurp(a), y = slurp(b);
        return {!x.empty() && x == y, "retrained results.csv (" + std::to_string(y.size()) + " bytes) " +
                                          (x == y ? "bit-identical to" : "DIFFERS from") + " the first run"};
    }
}

int main(int argc, char **argv)
{
    int which = 0;
    for (int i = 1; i < argc; ++i)
    {
        const std::string a = argv[i];
        if (a == "--work" && i + 1 < argc)
            g_work = argv[++i];
        else if (a == "--configs" && i + 1 < argc)
            g_configs = argv[++i];
        else
            which = std::atoi(a.c_str());
    }
    const std::map<int, std::function<Outcome()>> criteria{
        {1, gradients},    {2, constraints},   {3, optima},     {4, omp},      {5, hiebs},        {6, posterior},
        {7, mmwave_trend}, {8, gain_ordering}, {9, ris_trend}, {10, noncoherent}, {11, determinism},
    };
    if (!criteria.count(which))
    {
        std::cerr << "usage: acceptance <1..11> [--work DIR] [--configs DIR]\n";
        return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try
    {
        o = criteria.at(which)();
    }
    catch (const std::exception &e)
    {
        o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << which << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  ["
              << fmt("%.0f", secs) << " s]" << std::endl;
    return o.pass ? 0 : 1;
}
