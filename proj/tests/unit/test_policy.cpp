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

#include "activesense/policy.hpp"

#include "doctest.h"

#include <cmath>
#include <sstream>
#include <stdexcept>

using namespace activesense;
using namespace activesense::policy;

namespace
{
    AgentArch small_arch(AgentKind kind = AgentKind::active)
    {
        AgentArch a;
        a.kind = kind;
        a.state_size = 8;
        a.sensing_widths = {12};
        a.final_widths = {10};
        return a;
    }

    Scenario mmwave_scenario(Task task, std::size_t M, std::size_t L, std::size_t T, double snr_db)
    {
        Scenario sc;
        sc.spec.task = task;
        sc.spec.include_snr = task == Task::aoa;
        sc.spec.T = T;
        sc.spec.snr_db = snr_db;
        sc.mmwave.M_r = M;
        sc.mmwave.L_p = L;
        return sc;
    }

    // Parameters with every weight perturbed away from the degenerate init so that
    // batch-norm and gates see non-trivial inputs.
    AgentParams trained_like(const Scenario &sc, const AgentArch &arch, std::uint64_t seed)
    {
        auto p = init_agent(sc, arch, RandomStream{seed}.child("init"));
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

    bool same(const chan::SensingVector &a, const chan::SensingVector &b)
    {
        return a.v.re == b.v.re && a.v.im == b.v.im;
    }
}

TEST_CASE("build_feature examples")
{
    TaskSpec pre;
    pre.task = Task::precoding;
    pre.include_snr = false;
    CHECK(build_feature({1.0, 2.0}, pre, 0.0) == std::vector<double>{1.0, 2.0});

    TaskSpec nc;
    nc.task = Task::aoa;
    nc.coherence = Coherence::noncoherent;
    const auto f = build_feature({3.0, 4.0}, nc, 10.0);
    REQUIRE(f.size() == 2);
    CHECK(f[0] == doctest::Approx(5.0));
    CHECK(f[1] == doctest::Approx(1.0));

    TaskSpec co;
    co.task = Task::aoa;
    CHECK(build_feature({0.0, 0.0}, co, 0.0) == std::vector<double>{0.0, 0.0, 0.0});

    TaskSpec ncp;
    ncp.task = Task::precoding;
    ncp.include_snr = false;
    ncp.coherence = Coherence::noncoherent;
    CHECK(build_feature({0.0, -2.0}, ncp, 0.0) == std::vector<double>{2.0});
}

TEST_CASE("SNR feature is allowed for AoA only")
{
    TaskSpec s;
    s.task = Task::precoding;
    s.include_snr = true;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s.T = 0;
    s.include_snr = false;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("loss_aoa examples")
{
    CHECK(loss_aoa({0.3}, {0.3}, {cplx(1.0, 0.0)}) == 0.0);
    CHECK(loss_aoa({0.4}, {0.3}, {cplx(1.0, 0.0)}) == doctest::Approx(0.01));
    CHECK(loss_aoa({-0.2, 0.3}, {0.3, -0.2}, {cplx(0.5, 0.0), cplx(0.0, 2.0)}) == 0.0);
    CHECK_THROWS_AS(loss_aoa({0.1}, {0.1, 0.2}, {cplx(1.0, 0.0), cplx(1.0, 0.0)}), std::invalid_argument);
}

TEST_CASE("loss_gain examples")
{
    chan::MmWaveConfig cfg;
    cfg.M_r = 8;
    cfg.L_p = 2;
    const auto ch = chan::sample_mmwave(cfg, RandomStream{3});
    ComplexVector v(8);
    const double n = ch.h.norm();
    for (std::size_t k = 0; k < 8; ++k)
        v.set(k, ch.h[k] / n);
    CHECK(loss_gain(ch.h, chan::SensingVector::make(v, chan::Constraint::unit_norm), chan::Pairing::hermitian) ==
          doctest::Approx(-ch.h.squared_norm()).epsilon(1e-13));

    ComplexVector h({1.0, 0.0}, {0.0, 0.0});
    ComplexVector o({0.0, 1.0}, {0.0, 0.0});
    CHECK(loss_gain(h, chan::SensingVector::make(o, chan::Constraint::unit_norm), chan::Pairing::hermitian) == 0.0);

    num::Rng rng(RandomStream{4});
    for (int k = 0; k < 20; ++k)
    {
        const auto w = chan::random_sensing_vector(8, chan::Constraint::constant_modulus, rng);
        const cplx inner = num::hermitian_inner(ch.h, w.v);
        CHECK(std::abs(loss_gain(ch.h, w, chan::Pairing::hermitian) + std::norm(inner)) < 1e-12);
    }

    chan::SensingVector bad{ComplexVector({2.0, 0.0}, {0.0, 0.0}), chan::Constraint::unit_norm};
    CHECK_THROWS_AS(loss_gain(h, bad, chan::Pairing::hermitian), std::logic_error);
}

TEST_CASE("w_1 is shared by all channels")
{
    const auto sc = mmwave_scenario(Task::aoa, 8, 1, 4, 10.0);
    Agent agent(sc, trained_like(sc, small_arch(), 1));
    const auto b = draw_episodes(sc, RandomStream{5}, 0, 2, 4);
    const auto r0 = run_episode(agent, slice(b, 0, 1), nn::Mode::infer);
    const auto r1 = run_episode(agent, slice(b, 1, 1), nn::Mode::infer);
    CHECK(same(r0.sensing[0], r1.sensing[0]));
    CHECK_FALSE(same(r0.sensing[1], r1.sensing[1]));
}

TEST_CASE("zero parameters emit the flagged canonical sensing vector")
{
    const auto sc = mmwave_scenario(Task::aoa, 8, 1, 1, 10.0);
    auto p = init_agent(sc, small_arch(), RandomStream{1});
    auto m = p.flatten();
    for (auto &[k, t] : m)
        if (!k.ends_with("running_var"))
            for (auto &x : t.data)
                x = 0.0;
    p.assign(m);
    Agent agent(sc, p);
    const auto b = draw_episodes(sc, RandomStream{2}, 0, 1, 1);
    const auto r = agent.run(b, nn::Mode::infer, true);
    CHECK(r.degenerate >= 1);
    const auto &w = r.records[0].sensing[0];
    CHECK(w.v.re[0] == 1.0);
    CHECK(w.v.squared_norm() == 1.0);
}

TEST_CASE("causality of the sensing sequence")
{
    const std::size_t T = 5;
    const auto sc = mmwave_scenario(Task::aoa, 8, 1, T, 10.0);
    Agent agent(sc, trained_like(sc, small_arch(), 2));
    const auto base = draw_episodes(sc, RandomStream{6}, 0, 1, T);
    const auto ref = run_episode(agent, base, nn::Mode::infer);

    auto other = base;
    other.mmwave[0] = chan::sample_mmwave(sc.mmwave, RandomStream{99});
    const auto rc = run_episode(agent, other, nn::Mode::infer);
    CHECK(same(rc.sensing[0], ref.sensing[0]));
    for (std::size_t t = 1; t < T; ++t)
        CHECK_FALSE(same(rc.sensing[t], ref.sensing[t]));

    for (std::size_t f = 0; f < T; ++f)
    {
        CAPTURE(f);
        auto pert = base;
        for (auto &x : pert.noise[0][f].re)
            x += 0.5;
        const auto rn = run_episode(agent, pert, nn::Mode::infer);
        // frame f noise enters y_{f+1}; w_1..w_{f+1} are untouched
        for (std::size_t t = 0; t <= f; ++t)
            CHECK(same(rn.sensing[t], ref.sensing[t]));
        for (std::size_t t = f + 1; t < T; ++t)
            CHECK_FALSE(same(rn.sensing[t], ref.sensing[t]));
        CHECK(rn.measurements[f] != ref.measurements[f]);
    }
}

TEST_CASE("sensing vectors and beamformers satisfy their constraints")
{
    struct Case
    {
        Task task;
        chan::Constraint c;
    };
    for (auto [task, c] : {Case{Task::aoa, chan::Constraint::unit_norm}, Case{Task::aoa, chan::Constraint::constant_modulus},
                           Case{Task::precoding, chan::Constraint::unit_norm},
                           Case{Task::precoding, chan::Constraint::constant_modulus},
                           Case{Task::ris, chan::Constraint::unit_modulus}})
    {
        Scenario sc = mmwave_scenario(task, 8, 2, 3, 0.0);
        sc.spec.constraint = c;
        for (auto kind : {AgentKind::active, AgentKind::nonadaptive_learned})
        {
            Agent agent(sc, trained_like(sc, small_arch(kind), 3));
            const auto b = draw_episodes(sc, RandomStream{7}, 0, 100, 3);
            const auto r = agent.run(b, nn::Mode::infer, true);
            for (const auto &rec : r.records)
            {
                for (const auto &w : rec.sensing)
                    CHECK(chan::constraint_violation(w.v, c) < 1e-9);
                if (task != Task::aoa)
                {
                    const auto v = ComplexVector::from_stacked(rec.output);
                    CHECK(chan::constraint_violation(v, c) < 1e-9);
                }
            }
        }
    }
}

TEST_CASE("episode graph gradient check, small instance")
{
    for (Task task : {Task::aoa, Task::precoding, Task::ris})
    {
        CAPTURE(to_string(task));
        Scenario sc = mmwave_scenario(task, 4, 1, 2, 5.0);
        if (task == Task::ris)
        {
            sc.spec.constraint = chan::Constraint::unit_modulus;
            sc.ris.N1 = 2;
            sc.ris.N2 = 2;
        }
        AgentArch a = small_arch();
        a.state_size = 4;
        a.sensing_widths = {6};
        a.final_widths = {5};
        Agent agent(sc, trained_like(sc, a, 4));
        const auto b = draw_episodes(sc, RandomStream{8}, 0, 4, 2);
        agent.graph().set_batch_norm_mode(ad::BatchNormMode::train);
        CHECK(ad::check_gradients(agent.graph(), agent.bind(b), "loss", 1e-6) < 1e-4);
    }
}

TEST_CASE("tied LSTM weights equal the sum of per-copy gradients")
{
    num::Rng rng(RandomStream{9});
    const auto p = nn::init_lstm(3, 4, rng);
    const nn::TensorMap in{{"y0", Tensor({2, 3}, 0.3)}, {"y1", Tensor({2, 3}, -0.7)}, {"z", Tensor({2, 4}, 0.0)}};

    nn::Graph tied;
    {
        auto h = nn::register_lstm(tied, "lstm", p);
        auto z = tied.input("z");
        auto s1 = nn::apply_lstm(tied, h, tied.input("y0"), z, z);
        auto s2 = nn::apply_lstm(tied, h, tied.input("y1"), s1.s, s1.c);
        tied.mark_output("loss", tied.sum(tied.square(s2.s), ad::Axis::all));
    }
    nn::Graph dup;
    {
        auto h1 = nn::register_lstm(dup, "a", p);
        auto h2 = nn::register_lstm(dup, "b", p);
        auto z = dup.input("z");
        auto s1 = nn::apply_lstm(dup, h1, dup.input("y0"), z, z);
        auto s2 = nn::apply_lstm(dup, h2, dup.input("y1"), s1.s, s1.c);
        dup.mark_output("loss", dup.sum(dup.square(s2.s), ad::Axis::all));
    }
    tied.forward(in);
    dup.forward(in);
    const auto gt = tied.backward("loss");
    const auto gd = dup.backward("loss");
    for (const char *w : {"A_f", "U_i", "b_o", "A_c"})
    {
        const auto &t = gt.at(std::string("lstm.") + w);
        const auto &a = gd.at(std::string("a.") + w);
        const auto &b = gd.at(std::string("b.") + w);
        for (std::size_t k = 0; k < t.numel(); ++k)
            CHECK(std::abs(t.data[k] - (a.data[k] + b.data[k])) < 1e-14);
    }
}

TEST_CASE("training reduces the toy AoA error tenfold")
{
    const auto sc = mmwave_scenario(Task::aoa, 8, 1, 3, 20.0);
    TrainConfig cfg;
    cfg.max_steps = 2000;
    cfg.check_every = 200;
    cfg.validation_size = 500;
    cfg.seed = 3;
    const auto r = train(sc, AgentArch{}, cfg);
    REQUIRE(r.history.size() >= 2);
    const double initial = r.history.front().val_loss;
    CHECK(r.best_val * 10.0 < initial);
}

TEST_CASE("training is deterministic and keeps the best checkpoint")
{
    const auto sc = mmwave_scenario(Task::precoding, 4, 1, 2, 0.0);
    TrainConfig cfg;
    cfg.max_steps = 40;
    cfg.check_every = 10;
    cfg.validation_size = 50;
    cfg.batch_size = 8;
    cfg.calibration_batches = 2;
    const auto a = train(sc, small_arch(), cfg);
    const auto b = train(sc, small_arch(), cfg);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t k = 0; k < a.history.size(); ++k)
    {
        CHECK(a.history[k].val_loss == b.history[k].val_loss);
        CHECK(a.history[k].lr == b.history[k].lr);
    }
    std::ostringstream os;
    write_history_csv(os, a.history);
    CHECK(os.str().rfind("step,lr,train_loss,val_loss\n", 0) == 0);

    TrainConfig flat = cfg;
    flat.lr_initial = 1e-300;
    flat.lr_floor = 1e-300;
    flat.max_steps = 200;
    flat.early_stop_patience = 3;
    const auto f = train(sc, small_arch(), flat);
    CHECK(f.early_stopped);
    CHECK(f.best_step == 0);
    CHECK(f.history.size() == 4);
}

TEST_CASE("evaluate with the perfect-CSI oracle")
{
    const auto sc = mmwave_scenario(Task::precoding, 8, 2, 3, 0.0);
    const auto m = evaluate(mrt_oracle(sc), sc, 100, 11, 30);
    const auto b = draw_episodes(sc, test_stream(11), 0, 100, 3);
    double s = 0.0;
    for (const auto &ch : b.mmwave)
        s += ch.h.squared_norm();
    CHECK(m.mean == doctest::Approx(s / 100.0).epsilon(1e-12));
    CHECK(m.metric == "gain");
    CHECK(m.mean_db == doctest::Approx(10.0 * std::log10(m.mean)));

    const auto one = evaluate(mrt_oracle(sc), sc, 1, 11);
    CHECK_FALSE(one.std_error.has_value());

    const auto again = evaluate(mrt_oracle(sc), sc, 100, 11, 7);
    CHECK(again.per_episode == m.per_episode);
    CHECK_THROWS_AS(evaluate(mrt_oracle(sc), sc, 0, 11), std::invalid_argument);
}

TEST_CASE("episode draws do not depend on batching")
{
    const auto sc = mmwave_scenario(Task::aoa, 8, 2, 3, 0.0);
    const auto all = draw_episodes(sc, RandomStream{12}, 0, 10, 3);
    const auto part = draw_episodes(sc, RandomStream{12}, 4, 3, 3);
    for (std::size_t i = 0; i < 3; ++i)
    {
        CHECK(part.mmwave[i].h.re == all.mmwave[4 + i].h.re);
        CHECK(part.noise[i][2].im == all.noise[4 + i][2].im);
    }
}

TEST_CASE("parameter flatten and assign round trip")
{
    const auto sc = mmwave_scenario(Task::aoa, 8, 1, 3, 10.0);
    const auto p = trained_like(sc, small_arch(), 5);
    auto q = init_agent(sc, small_arch(), RandomStream{77});
    q.assign(p.flatten());
    CHECK(q.flatten().at("lstm.A_f").data == p.flatten().at("lstm.A_f").data);
    auto bad = p.flatten();
    bad.erase("lstm.A_f");
    CHECK_THROWS_AS(q.assign(bad), std::invalid_argument);

    Agent agent(sc, p);
    const auto back = agent.params().flatten();
    for (const auto &[k, t] : p.flatten())
        CHECK(back.at(k).data == t.data);
}
