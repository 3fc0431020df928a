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

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

namespace activesense::policy
{
    using ad::Value;

    std::string to_string(Task t)
    {
        switch (t)
        {
        case Task::aoa: return "aoa";
        case Task::precoding: return "precoding";
        case Task::ris: return "ris";
        }
        return "?";
    }

    Task task_from_string(const std::string &s)
    {
        if (s == "aoa")
            return Task::aoa;
        if (s == "precoding")
            return Task::precoding;
        if (s == "ris")
            return Task::ris;
        throw std::invalid_argument("unknown task '" + s + "'");
    }

    std::string to_string(Coherence c) { return c == Coherence::coherent ? "coherent" : "noncoherent"; }

    Coherence coherence_from_string(const std::string &s)
    {
        if (s == "coherent")
            return Coherence::coherent;
        if (s == "noncoherent")
            return Coherence::noncoherent;
        throw std::invalid_argument("unknown coherence '" + s + "'");
    }

    std::string to_string(AgentKind k)
    {
        switch (k)
        {
        case AgentKind::active: return "active";
        case AgentKind::nonadaptive_random: return "nonadaptive-random";
        case AgentKind::nonadaptive_learned: return "nonadaptive-learned";
        }
        return "?";
    }

    AgentKind agent_kind_from_string(const std::string &s)
    {
        if (s == "active")
            return AgentKind::active;
        if (s == "nonadaptive-random")
            return AgentKind::nonadaptive_random;
        if (s == "nonadaptive-learned")
            return AgentKind::nonadaptive_learned;
        throw std::invalid_argument("unknown agent kind '" + s + "'");
    }

    void TaskSpec::validate() const
    {
        if (T < 1)
            throw std::invalid_argument("TaskSpec: T must be >= 1");
        if (include_snr && task != Task::aoa)
            throw std::invalid_argument("TaskSpec: the SNR feature is only used for AoA estimation");
        if (!std::isfinite(snr_db))
            throw std::invalid_argument("TaskSpec: snr_db must be finite");
        if (task == Task::ris)
        {
            if (constraint != chan::Constraint::unit_modulus)
                throw std::invalid_argument("TaskSpec: the RIS task requires the unit-modulus constraint");
            if (coherence != Coherence::coherent)
                throw std::invalid_argument("TaskSpec: the RIS task is coherent only");
        }
        else if (constraint == chan::Constraint::unit_modulus)
        {
            throw std::invalid_argument("TaskSpec: mmWave tasks use unit-norm or constant-modulus sensing");
        }
    }

    void Scenario::validate() const
    {
        spec.validate();
        if (is_ris())
            ris.validate();
        else
            mmwave.validate();
    }

    std::size_t Scenario::antennas() const { return is_ris() ? ris.elements() : mmwave.M_r; }

    std::size_t Scenario::feature_dim() const
    {
        return (spec.coherence == Coherence::coherent ? 2 : 1) + (spec.include_snr ? 1 : 0);
    }

    std::size_t Scenario::output_dim() const { return spec.task == Task::aoa ? mmwave.L_p : 2 * antennas(); }

    double Scenario::noise_variance() const { return is_ris() ? ris.noise_variance : 1.0; }

    double Scenario::power() const
    {
        // A zero noise variance keeps P at the SNR ratio against unit noise.
        const double nv = noise_variance();
        return chan::snr_to_power(spec.snr_db, nv > 0.0 ? nv : 1.0);
    }

    double Scenario::snr_feature() const { return spec.snr_db / 10.0; }

    double Scenario::target_modulus() const
    {
        if (spec.constraint == chan::Constraint::unit_modulus)
            return 1.0;
        return 1.0 / std::sqrt(double(antennas()));
    }

    chan::Pairing Scenario::pairing() const { return is_ris() ? chan::Pairing::transpose : chan::Pairing::hermitian; }

    std::size_t Scenario::noise_dim() const { return is_ris() ? 1 : mmwave.M_r; }

    std::vector<double> build_feature(cplx y, const TaskSpec &spec, double snr_db)
    {
        std::vector<double> f;
        if (spec.coherence == Coherence::coherent)
        {
            f.push_back(y.real());
            f.push_back(y.imag());
        }
        else
        {
            f.push_back(std::abs(y));
        }
        if (spec.include_snr)
            f.push_back(snr_db / 10.0);
        return f;
    }

    // ---- episodes ----

    const ComplexVector &EpisodeBatch::channel(std::size_t i) const
    {
        return ris.empty() ? mmwave.at(i).h : ris.at(i).h_c;
    }

    namespace
    {
        std::vector<ComplexVector> draw_noise(const Scenario &sc, RandomStream s, std::size_t frames)
        {
            std::vector<ComplexVector> out;
            out.reserve(frames);
            const double var = sc.noise_variance();
            for (std::size_t t = 0; t < frames; ++t)
            {
                if (var > 0.0)
                    out.push_back(num::sample_complex_gaussian(sc.noise_dim(), var, s.child(std::uint64_t(t))));
                else
                    out.emplace_back(sc.noise_dim());
            }
            return out;
        }
    }

    EpisodeBatch draw_episodes(const Scenario &sc, RandomStream base, std::size_t first, std::size_t count,
                               std::size_t frames)
    {
        EpisodeBatch b;
        b.noise.reserve(count);
        for (std::size_t k = first; k < first + count; ++k)
        {
            const RandomStream es = base.child(std::uint64_t(k));
            if (sc.is_ris())
                b.ris.push_back(chan::sample_ris(sc.ris, es));
            else
                b.mmwave.push_back(chan::sample_mmwave(sc.mmwave, es));
            b.noise.push_back(draw_noise(sc, es.child("noise"), frames));
        }
        return b;
    }

    EpisodeBatch single_episode(const Scenario &sc, chan::MmWaveChannel ch, RandomStream noise, std::size_t frames)
    {
        EpisodeBatch b;
        b.mmwave.push_back(std::move(ch));
        b.noise.push_back(draw_noise(sc, noise, frames));
        return b;
    }

    EpisodeBatch single_episode(const Scenario &sc, chan::RisChannelSet ch, RandomStream noise, std::size_t frames)
    {
        EpisodeBatch b;
        b.ris.push_back(std::move(ch));
        b.noise.push_back(draw_noise(sc, noise, frames));
        return b;
    }

    EpisodeBatch slice(const EpisodeBatch &b, std::size_t first, std::size_t count)
    {
        if (first + count > b.size())
            throw std::invalid_argument("slice: range exceeds batch");
        EpisodeBatch out;
        auto sub = [&](const auto &v, auto &dst) {
            if (!v.empty())
                dst.assign(v.begin() + std::ptrdiff_t(first), v.begin() + std::ptrdiff_t(first + count));
        };
        sub(b.mmwave, out.mmwave);
        sub(b.ris, out.ris);
        sub(b.noise, out.noise);
        return out;
    }

    std::vector<double> strength_ordered_angles(const chan::MmWaveChannel &ch)
    {
        std::vector<std::size_t> idx(ch.phis.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return std::abs(ch.alphas[a]) > std::abs(ch.alphas[b]); });
        std::vector<double> out;
        for (auto i : idx)
            out.push_back(ch.phis[i]);
        return out;
    }

    // ---- parameters ----

    namespace
    {
        void put_dense(TensorMap &m, const std::string &p, const nn::DenseParams &d)
        {
            m[p + ".A"] = d.A;
            m[p + ".b"] = d.b;
        }

        void put_bn(TensorMap &m, const std::string &p, const nn::BatchNormState &s)
        {
            m[p + ".gamma"] = s.gamma;
            m[p + ".beta"] = s.beta;
            m[p + ".running_mean"] = s.running_mean;
            m[p + ".running_var"] = s.running_var;
        }

        void take(const TensorMap &m, const std::string &name, Tensor &dst)
        {
            auto it = m.find(name);
            if (it == m.end())
                throw std::invalid_argument("AgentParams: missing entry '" + name + "'");
            if (it->second.shape != dst.shape)
                throw std::invalid_argument("AgentParams: shape mismatch for '" + name + "': expected " +
                                            ad::shape_string(dst.shape) + ", got " +
                                            ad::shape_string(it->second.shape));
            dst.data = it->second.data;
        }

        void take_dense(const TensorMap &m, const std::string &p, nn::DenseParams &d)
        {
            take(m, p + ".A", d.A);
            take(m, p + ".b", d.b);
        }

        void take_bn(const TensorMap &m, const std::string &p, nn::BatchNormState &s)
        {
            take(m, p + ".gamma", s.gamma);
            take(m, p + ".beta", s.beta);
            take(m, p + ".running_mean", s.running_mean);
            take(m, p + ".running_var", s.running_var);
        }

        std::string indexed(const char *prefix, std::size_t k) { return std::string(prefix) + "." + std::to_string(k); }

        struct LstmSlot
        {
            const char *name;
            Tensor nn::LstmParams::*member;
        };

        constexpr LstmSlot lstm_slots[] = {
            {"A_f", &nn::LstmParams::A_f}, {"A_i", &nn::LstmParams::A_i}, {"A_o", &nn::LstmParams::A_o},
            {"A_c", &nn::LstmParams::A_c}, {"U_f", &nn::LstmParams::U_f}, {"U_i", &nn::LstmParams::U_i},
            {"U_o", &nn::LstmParams::U_o}, {"U_c", &nn::LstmParams::U_c}, {"b_f", &nn::LstmParams::b_f},
            {"b_i", &nn::LstmParams::b_i}, {"b_o", &nn::LstmParams::b_o}, {"b_c", &nn::LstmParams::b_c},
        };
    }

    TensorMap AgentParams::flatten() const
    {
        TensorMap m;
        if (arch.kind == AgentKind::active)
            for (const auto &slot : lstm_slots)
                m[std::string("lstm.") + slot.name] = lstm.*slot.member;
        for (std::size_t k = 0; k < sensing.size(); ++k)
            put_dense(m, indexed("sense", k), sensing[k]);
        for (std::size_t k = 0; k < sensing_bn.size(); ++k)
            put_bn(m, indexed("sense_bn", k), sensing_bn[k]);
        for (std::size_t k = 0; k < final_head.size(); ++k)
            put_dense(m, indexed("final", k), final_head[k]);
        for (std::size_t k = 0; k < final_bn.size(); ++k)
            put_bn(m, indexed("final_bn", k), final_bn[k]);
        if (arch.kind != AgentKind::active)
            m["fixed.W"] = fixed_sensing;
        return m;
    }

    void AgentParams::assign(const TensorMap &entries)
    {
        if (arch.kind == AgentKind::active)
            for (const auto &slot : lstm_slots)
                take(entries, std::string("lstm.") + slot.name, lstm.*slot.member);
        for (std::size_t k = 0; k < sensing.size(); ++k)
            take_dense(entries, indexed("sense", k), sensing[k]);
        for (std::size_t k = 0; k < sensing_bn.size(); ++k)
            take_bn(entries, indexed("sense_bn", k), sensing_bn[k]);
        for (std::size_t k = 0; k < final_head.size(); ++k)
            take_dense(entries, indexed("final", k), final_head[k]);
        for (std::size_t k = 0; k < final_bn.size(); ++k)
            take_bn(entries, indexed("final_bn", k), final_bn[k]);
        if (arch.kind != AgentKind::active)
            take(entries, "fixed.W", fixed_sensing);
    }

    namespace
    {
        nn::Activation head_activation(const Scenario &sc)
        {
            return sc.spec.constraint == chan::Constraint::unit_norm ? nn::Activation::normalize_unit_power
                                                                     : nn::Activation::normalize_modulus;
        }

        void init_stack(std::size_t in, const std::vector<std::size_t> &widths, std::size_t out,
                        nn::Activation out_act, double target, const AgentArch &arch, RandomStream s,
                        std::vector<nn::DenseParams> &layers, std::vector<nn::BatchNormState> &bns)
        {
            std::size_t cur = in;
            std::vector<std::size_t> all(widths);
            all.push_back(out);
            for (std::size_t k = 0; k < all.size(); ++k)
            {
                num::Rng rng(s.child(std::uint64_t(k)));
                const bool last = k + 1 == all.size();
                if (arch.batch_norm)
                    bns.push_back(nn::init_batchnorm(cur, arch.bn_momentum, arch.bn_epsilon));
                layers.push_back(nn::init_dense(cur, all[k], last ? out_act : nn::Activation::relu, rng, target));
                cur = all[k];
            }
        }
    }

    AgentParams init_agent(const Scenario &sc, const AgentArch &arch, RandomStream init)
    {
        sc.validate();
        if (arch.state_size == 0 && arch.kind == AgentKind::active)
            throw std::invalid_argument("AgentArch: state_size must be positive");
        for (auto w : arch.sensing_widths)
            if (w == 0)
                throw std::invalid_argument("AgentArch: zero sensing width");
        for (auto w : arch.final_widths)
            if (w == 0)
                throw std::invalid_argument("AgentArch: zero final width");
        AgentParams p;
        p.arch = arch;
        const std::size_t M2 = 2 * sc.antennas();
        const nn::Activation out_act =
            sc.spec.task == Task::aoa ? nn::Activation::linear : head_activation(sc);
        if (arch.kind == AgentKind::active)
        {
            num::Rng rng(init.child("lstm"));
            p.lstm = nn::init_lstm(sc.feature_dim(), arch.state_size, rng);
            init_stack(arch.state_size, arch.sensing_widths, M2, head_activation(sc), sc.target_modulus(), arch,
                       init.child("sense"), p.sensing, p.sensing_bn);
            for (auto &bn : p.sensing_bn)
            {
                const std::size_t F = bn.features();
                bn.running_mean = Tensor({sc.spec.T, F}, 0.0);
                bn.running_var = Tensor({sc.spec.T, F}, 1.0);
            }
            init_stack(arch.state_size, arch.final_widths, sc.output_dim(), out_act, sc.target_modulus(), arch,
                       init.child("final"), p.final_head, p.final_bn);
        }
        else
        {
            const std::size_t T = sc.spec.T;
            p.fixed_sensing = Tensor({T, M2});
            num::Rng rng(init.child("fixed"));
            for (std::size_t t = 0; t < T; ++t)
            {
                const auto w = chan::random_sensing_vector(sc.antennas(), sc.spec.constraint, rng).v.stacked();
                std::copy(w.begin(), w.end(), p.fixed_sensing.data.begin() + std::ptrdiff_t(t * M2));
            }
            init_stack(T * sc.feature_dim(), arch.final_widths, sc.output_dim(), out_act, sc.target_modulus(), arch,
                       init.child("final"), p.final_head, p.final_bn);
        }
        return p;
    }

    // ---- agent graph ----

    Agent::Agent(const Scenario &sc, const AgentParams &params) : sc_(sc), arch_(params.arch)
    {
        sc_.validate();
        build(params);
    }

    void Agent::set_params(const AgentParams &p)
    {
        arch_ = p.arch;
        build(p);
    }

    namespace
    {
        struct Stack
        {
            std::vector<nn::DenseHandles> dense;
            std::vector<nn::BatchNormHandles> bn;
        };

        std::string frame_key(const std::string &prefix, std::size_t t) { return prefix + ".t" + std::to_string(t); }

        Tensor row_of(const Tensor &t, std::size_t r)
        {
            const std::size_t C = t.cols();
            return Tensor({C}, std::vector<double>(t.data.begin() + std::ptrdiff_t(r * C),
                                                   t.data.begin() + std::ptrdiff_t((r + 1) * C)));
        }

        // frames = 0: one set of running statistics per layer. frames > 0: the
        // layer is applied once per unrolled frame; gamma/beta are tied and the
        // running statistics are kept per frame (rows of a [frames, F] tensor).
        Stack register_stack(ad::Graph &g, const char *dense_prefix, const char *bn_prefix,
                             const std::vector<nn::DenseParams> &layers, const std::vector<nn::BatchNormState> &bns,
                             std::size_t frames)
        {
            Stack s;
            for (std::size_t k = 0; k < layers.size(); ++k)
                s.dense.push_back(nn::register_dense(g, indexed(dense_prefix, k), layers[k]));
            for (std::size_t k = 0; k < bns.size(); ++k)
            {
                const std::string prefix = indexed(bn_prefix, k);
                if (frames == 0)
                {
                    s.bn.push_back(nn::register_batchnorm(g, prefix, bns[k]));
                    continue;
                }
                const auto &st = bns[k];
                const std::size_t F = st.features();
                if (st.running_mean.rows() != frames || st.running_mean.cols() != F ||
                    st.running_var.rows() != frames || st.running_var.cols() != F)
                    throw std::invalid_argument("AgentParams: per-frame running statistics must be [T, F] for '" +
                                                prefix + "'");
                s.bn.push_back({g.parameter(prefix + ".gamma", st.gamma), g.parameter(prefix + ".beta", st.beta), prefix,
                                st.epsilon});
                for (std::size_t t = 0; t < frames; ++t)
                {
                    g.set_buffer(frame_key(prefix, t) + ".running_mean", row_of(st.running_mean, t));
                    g.set_buffer(frame_key(prefix, t) + ".running_var", row_of(st.running_var, t));
                }
            }
            return s;
        }

        Value apply_stack(ad::Graph &g, const Stack &s, Value x, std::optional<std::size_t> frame = {})
        {
            for (std::size_t k = 0; k < s.dense.size(); ++k)
            {
                if (!s.bn.empty())
                {
                    nn::BatchNormHandles h = s.bn[k];
                    if (frame)
                        h.key = frame_key(h.key, *frame);
                    x = nn::apply_batchnorm(g, h, x);
                }
                x = nn::apply_dense(g, s.dense[k], x);
            }
            return x;
        }

        std::string frame_name(const char *base, std::size_t t) { return std::string(base) + "." + std::to_string(t); }
    }

    void Agent::build(const AgentParams &p)
    {
        g_ = ad::Graph();
        const std::size_t M = sc_.antennas(), T = sc_.spec.T;
        const bool active = p.arch.kind == AgentKind::active;
        if (!p.sensing_bn.empty() && p.sensing_bn.size() != p.sensing.size())
            throw std::invalid_argument("AgentParams: one batch-norm state per sensing layer expected");
        if (!p.final_bn.empty() && p.final_bn.size() != p.final_head.size())
            throw std::invalid_argument("AgentParams: one batch-norm state per final layer expected");

        Value h = g_.input("h");
        Value amp = g_.input("amp");
        Value hr = g_.slice_cols(h, 0, M), hi = g_.slice_cols(h, M, 2 * M);
        Value ahr = g_.mul(hr, amp), ahi = g_.mul(hi, amp);
        Value snr = sc_.spec.include_snr ? g_.input("snr") : Value{};

        auto measure = [&](Value w, std::size_t t) -> std::pair<Value, Value> {
            Value wr = g_.slice_cols(w, 0, M), wi = g_.slice_cols(w, M, 2 * M);
            Value noise = g_.input(frame_name("noise", t));
            if (sc_.is_ris())
            {
                // sqrt(P) w^T h_c + n
                Value re = g_.sum(g_.sub(g_.mul(wr, ahr), g_.mul(wi, ahi)), ad::Axis::cols);
                Value im = g_.sum(g_.add(g_.mul(wr, ahi), g_.mul(wi, ahr)), ad::Axis::cols);
                return {g_.add(re, g_.slice_cols(noise, 0, 1)), g_.add(im, g_.slice_cols(noise, 1, 2))};
            }
            // w^H (sqrt(P) h + z)
            Value rr = g_.add(ahr, g_.slice_cols(noise, 0, M));
            Value ri = g_.add(ahi, g_.slice_cols(noise, M, 2 * M));
            Value re = g_.sum(g_.add(g_.mul(wr, rr), g_.mul(wi, ri)), ad::Axis::cols);
            Value im = g_.sum(g_.sub(g_.mul(wr, ri), g_.mul(wi, rr)), ad::Axis::cols);
            return {re, im};
        };

        auto feature = [&](Value re, Value im) {
            std::vector<Value> parts;
            if (sc_.spec.coherence == Coherence::coherent)
                parts = {re, im};
            else
                parts = {g_.complex_abs(re, im)};
            if (snr.valid())
                parts.push_back(snr);
            return parts.size() == 1 ? parts[0] : g_.concat_cols(parts);
        };

        Value head_in;
        if (active)
        {
            auto lstm = nn::register_lstm(g_, "lstm", p.lstm);
            Stack sense = register_stack(g_, "sense", "sense_bn", p.sensing, p.sensing_bn, T);
            Value zero = g_.input("zero");
            auto st = nn::apply_lstm(g_, lstm, g_.input("boot"), zero, zero);
            for (std::size_t t = 0; t < T; ++t)
            {
                Value w = apply_stack(g_, sense, st.s, t);
                g_.mark_output(frame_name("w", t), w);
                auto [re, im] = measure(w, t);
                g_.mark_output(frame_name("y", t), g_.concat_cols({re, im}));
                Value f = feature(re, im);
                g_.mark_output(frame_name("feature", t), f);
                st = nn::apply_lstm(g_, lstm, f, st.s, st.c);
            }
            head_in = p.arch.final_input == FinalInput::cell ? st.c : st.s;
            fixed_is_parameter_ = false;
        }
        else
        {
            if (p.fixed_sensing.rows() != T || p.fixed_sensing.cols() != 2 * M)
                throw std::invalid_argument("AgentParams: fixed sensing must be [T, 2M]");
            fixed_is_parameter_ = p.arch.kind == AgentKind::nonadaptive_learned;
            Value W = fixed_is_parameter_ ? g_.parameter("fixed.W", p.fixed_sensing) : g_.constant(p.fixed_sensing);
            std::vector<Value> feats;
            for (std::size_t t = 0; t < T; ++t)
            {
                Value raw = g_.slice_rows(W, t, t + 1);
                Value w = sc_.spec.constraint == chan::Constraint::unit_norm
                              ? g_.normalize_unit_power(raw)
                              : g_.normalize_modulus(raw, sc_.target_modulus());
                g_.mark_output(frame_name("w", t), w);
                auto [re, im] = measure(w, t);
                g_.mark_output(frame_name("y", t), g_.concat_cols({re, im}));
                Value f = feature(re, im);
                g_.mark_output(frame_name("feature", t), f);
                feats.push_back(f);
            }
            head_in = feats.size() == 1 ? feats[0] : g_.concat_cols(feats);
        }

        Stack fin = register_stack(g_, "final", "final_bn", p.final_head, p.final_bn, 0);
        Value out = apply_stack(g_, fin, head_in);
        g_.mark_output("output", out);

        Value metric, loss;
        if (sc_.spec.task == Task::aoa)
        {
            metric = g_.sum(g_.square(g_.sub(out, g_.input("target"))), ad::Axis::cols);
            loss = g_.mean(metric, ad::Axis::all);
        }
        else
        {
            Value vr = g_.slice_cols(out, 0, M), vi = g_.slice_cols(out, M, 2 * M);
            Value re, im;
            if (sc_.is_ris())
            {
                re = g_.sum(g_.sub(g_.mul(hr, vr), g_.mul(hi, vi)), ad::Axis::cols);
                im = g_.sum(g_.add(g_.mul(hr, vi), g_.mul(hi, vr)), ad::Axis::cols);
            }
            else
            {
                re = g_.sum(g_.add(g_.mul(hr, vr), g_.mul(hi, vi)), ad::Axis::cols);
                im = g_.sum(g_.sub(g_.mul(hr, vi), g_.mul(hi, vr)), ad::Axis::cols);
            }
            metric = g_.add(g_.square(re), g_.square(im));
            loss = g_.scale(g_.mean(metric, ad::Axis::all), -1.0);
        }
        g_.mark_output("metric", metric);
        g_.mark_output("loss", loss);
        proto_ = p;
    }

    AgentParams Agent::params() const
    {
        TensorMap m = g_.parameters();
        for (const auto &[k, v] : g_.buffers())
            m[k] = v;
        if (proto_.arch.kind == AgentKind::nonadaptive_random)
            m["fixed.W"] = proto_.fixed_sensing;
        for (std::size_t k = 0; k < proto_.sensing_bn.size(); ++k)
        {
            const std::string prefix = indexed("sense_bn", k);
            for (const char *stat : {".running_mean", ".running_var"})
            {
                Tensor all = proto_.sensing_bn[k].running_mean;
                const std::size_t F = all.cols();
                for (std::size_t t = 0; t < all.rows(); ++t)
                {
                    const Tensor &row = g_.buffers().at(frame_key(prefix, t) + stat);
                    std::copy(row.data.begin(), row.data.end(), all.data.begin() + std::ptrdiff_t(t * F));
                }
                m[prefix + stat] = std::move(all);
            }
        }
        AgentParams p = proto_;
        p.assign(m);
        return p;
    }

    TensorMap Agent::bind(const EpisodeBatch &batch) const
    {
        const std::size_t B = batch.size(), M = sc_.antennas(), T = sc_.spec.T;
        if (B == 0)
            throw std::invalid_argument("Agent: empty batch");
        if (sc_.is_ris() ? batch.ris.size() != B : batch.mmwave.size() != B)
            throw std::invalid_argument("Agent: batch does not match the scenario's channel type");
        TensorMap in;
        Tensor h({B, 2 * M});
        for (std::size_t i = 0; i < B; ++i)
        {
            const auto &c = batch.channel(i);
            if (c.size() != M)
                throw std::invalid_argument("Agent: channel extent mismatch");
            std::copy(c.re.begin(), c.re.end(), h.data.begin() + std::ptrdiff_t(i * 2 * M));
            std::copy(c.im.begin(), c.im.end(), h.data.begin() + std::ptrdiff_t(i * 2 * M + M));
        }
        in["h"] = std::move(h);
        in["amp"] = Tensor::scalar(std::sqrt(sc_.power()));
        const std::size_t nd = sc_.noise_dim();
        for (std::size_t t = 0; t < T; ++t)
        {
            Tensor z({B, 2 * nd});
            for (std::size_t i = 0; i < B; ++i)
            {
                if (batch.noise[i].size() < T)
                    throw std::invalid_argument("Agent: episode carries fewer noise frames than T");
                const auto &n = batch.noise[i][t];
                if (n.size() != nd)
                    throw std::invalid_argument("Agent: noise extent mismatch");
                std::copy(n.re.begin(), n.re.end(), z.data.begin() + std::ptrdiff_t(i * 2 * nd));
                std::copy(n.im.begin(), n.im.end(), z.data.begin() + std::ptrdiff_t(i * 2 * nd + nd));
            }
            in[frame_name("noise", t)] = std::move(z);
        }
        if (sc_.spec.include_snr)
            in["snr"] = Tensor({B, 1}, sc_.snr_feature());
        if (arch_.kind == AgentKind::active)
        {
            in["boot"] = Tensor({B, sc_.feature_dim()}, 1.0);
            in["zero"] = Tensor({B, arch_.state_size}, 0.0);
        }
        if (sc_.spec.task == Task::aoa)
        {
            const std::size_t L = sc_.mmwave.L_p;
            Tensor target({B, L});
            for (std::size_t i = 0; i < B; ++i)
            {
                const auto ordered = strength_ordered_angles(batch.mmwave[i]);
                if (ordered.size() != L)
                    throw std::invalid_argument("Agent: path count mismatch");
                std::copy(ordered.begin(), ordered.end(), target.data.begin() + std::ptrdiff_t(i * L));
            }
            in["target"] = std::move(target);
        }
        return in;
    }

    BatchResult Agent::run(const EpisodeBatch &batch, nn::Mode mode, bool record)
    {
        g_.set_batch_norm_mode(mode == nn::Mode::train ? ad::BatchNormMode::train : ad::BatchNormMode::infer);
        const TensorMap out = g_.forward(bind(batch));
        BatchResult r;
        r.loss = out.at("loss").item();
        r.metric = out.at("metric").data;
        r.degenerate = g_.degenerate_count();
        if (!record)
            return r;

        const std::size_t B = batch.size(), M = sc_.antennas(), T = sc_.spec.T;
        const chan::Constraint c = sc_.spec.constraint;
        const Tensor &o = out.at("output");
        for (std::size_t i = 0; i < B; ++i)
        {
            EpisodeRecord rec;
            for (std::size_t t = 0; t < T; ++t)
            {
                const Tensor &w = out.at(frame_name("w", t));
                const std::size_t row = w.rows() == 1 ? 0 : i;
                const double *pw = w.data.data() + row * 2 * M;
                chan::SensingVector sv{num::ComplexVector::from_stacked(std::span<const double>(pw, 2 * M)), c};
                if (!sv.satisfied())
                    throw std::logic_error("Agent: emitted sensing vector violates its constraint");
                rec.sensing.push_back(std::move(sv));
                const Tensor &y = out.at(frame_name("y", t));
                rec.measurements.emplace_back(y(i, 0), y(i, 1));
                const Tensor &f = out.at(frame_name("feature", t));
                rec.features.emplace_back(f.data.begin() + std::ptrdiff_t(i * f.cols()),
                                          f.data.begin() + std::ptrdiff_t((i + 1) * f.cols()));
            }
            rec.output.assign(o.data.begin() + std::ptrdiff_t(i * o.cols()),
                              o.data.begin() + std::ptrdiff_t((i + 1) * o.cols()));
            if (sc_.spec.task != Task::aoa)
            {
                chan::SensingVector v{num::ComplexVector::from_stacked(rec.output), c};
                if (!v.satisfied())
                    throw std::logic_error("Agent: final beamformer violates its constraint");
            }
            rec.loss = sc_.spec.task == Task::aoa ? r.metric[i] : -r.metric[i];
            r.records.push_back(std::move(rec));
        }
        return r;
    }

    double Agent::loss_and_gradients(const EpisodeBatch &batch, TensorMap &grads)
    {
        g_.set_batch_norm_mode(ad::BatchNormMode::train);
        const TensorMap out = g_.forward(bind(batch));
        const double loss = out.at("loss").item();
        if (!std::isfinite(loss))
            return loss;
        grads = g_.backward("loss");
        return loss;
    }

    void Agent::fold_batch_statistics()
    {
        for (const auto &s : g_.batch_statistics())
        {
            const auto &buf = g_.buffers();
            nn::BatchNormState st;
            st.running_mean = buf.at(s.key + ".running_mean");
            st.running_var = buf.at(s.key + ".running_var");
            st.gamma = Tensor(st.running_mean.shape, 1.0);
            st.momentum = arch_.bn_momentum;
            nn::update_running_stats(st, s);
            g_.set_buffer(s.key + ".running_mean", std::move(st.running_mean));
            g_.set_buffer(s.key + ".running_var", std::move(st.running_var));
        }
    }

    void Agent::recalibrate(const std::vector<EpisodeBatch> &batches)
    {
        if (batches.empty())
            return;
        std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> acc;
        g_.set_batch_norm_mode(ad::BatchNormMode::train);
        for (const auto &b : batches)
        {
            g_.forward(bind(b));
            for (const auto &s : g_.batch_statistics())
            {
                auto &[m, v] = acc[s.key];
                m.resize(s.mean.size(), 0.0);
                v.resize(s.var.size(), 0.0);
                for (std::size_t c = 0; c < s.mean.size(); ++c)
                {
                    m[c] += s.mean[c];
                    v[c] += s.var[c];
                }
            }
        }
        const double inv = 1.0 / double(batches.size());
        for (auto &[key, mv] : acc)
        {
            Tensor mean({mv.first.size()}), var({mv.second.size()});
            for (std::size_t c = 0; c < mean.numel(); ++c)
            {
                mean.data[c] = mv.first[c] * inv;
                var.data[c] = mv.second[c] * inv;
            }
            g_.set_buffer(key + ".running_mean", std::move(mean));
            g_.set_buffer(key + ".running_var", std::move(var));
        }
    }

    void Agent::apply_adam(const TensorMap &grads, nn::AdamState &st, double lr)
    {
        TensorMap p = g_.parameters();
        nn::adam_step(p, grads, st, lr);
        for (const auto &[k, v] : p)
            g_.set_parameter(k, v);
    }

    EpisodeRecord run_episode(Agent &agent, const EpisodeBatch &single, nn::Mode mode)
    {
        if (single.size() != 1)
            throw std::invalid_argument("run_episode: expects exactly one episode");
        auto r = agent.run(single, mode, true);
        return std::move(r.records.front());
    }

    // ---- losses ----

    double loss_aoa(const std::vector<double> &estimate, const std::vector<double> &truth,
                    const std::vector<cplx> &alphas)
    {
        if (estimate.size() != truth.size() || truth.size() != alphas.size())
            throw std::invalid_argument("loss_aoa: length mismatch");
        chan::MmWaveChannel ch;
        ch.phis = truth;
        ch.alphas = alphas;
        const auto ordered = strength_ordered_angles(ch);
        double s = 0.0;
        for (std::size_t l = 0; l < ordered.size(); ++l)
            s += (estimate[l] - ordered[l]) * (estimate[l] - ordered[l]);
        return s;
    }

    double loss_gain(const ComplexVector &h, const chan::SensingVector &v, chan::Pairing pairing)
    {
        if (!v.satisfied())
            throw std::logic_error("loss_gain: beamformer violates its " + chan::to_string(v.constraint) +
                                   " constraint");
        return -chan::beamforming_gain(h, v, pairing);
    }

    // ---- training ----

    void TrainConfig::validate() const
    {
        if (batch_size < 2)
            throw std::invalid_argument("TrainConfig: batch_size must be >= 2 (batch normalization)");
        if (validation_size < 1)
            throw std::invalid_argument("TrainConfig: validation_size must be >= 1");
        if (check_every < 1)
            throw std::invalid_argument("TrainConfig: check_every must be >= 1");
        if (!(lr_initial > 0.0) || !(lr_floor > 0.0) || !(lr_factor > 0.0 && lr_factor < 1.0))
            throw std::invalid_argument("TrainConfig: invalid learning-rate schedule");
        if (lr_patience < 1 || early_stop_patience < 1)
            throw std::invalid_argument("TrainConfig: patience values must be >= 1");
        if (eval_chunk < 1)
            throw std::invalid_argument("TrainConfig: eval_chunk must be >= 1");
    }

    namespace
    {
        double validation_loss(Agent &agent, const std::vector<EpisodeBatch> &chunks)
        {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto &c : chunks)
            {
                const auto r = agent.run(c, nn::Mode::infer);
                for (double m : r.metric)
                    sum += m;
                n += r.metric.size();
            }
            const double mean = sum / double(n);
            return agent.scenario().spec.task == Task::aoa ? mean : -mean;
        }
    }

    TrainResult train(const Scenario &sc, const AgentArch &arch, const TrainConfig &cfg, const TrainObserver &observer)
    {
        return train_from(sc, init_agent(sc, arch, RandomStream{cfg.seed}.child("init")), cfg, observer);
    }

    TrainResult train_from(const Scenario &sc, AgentParams init, const TrainConfig &cfg, const TrainObserver &observer)
    {
        cfg.validate();
        Agent agent(sc, init);
        const std::size_t T = sc.spec.T;
        const RandomStream root{cfg.seed};

        std::vector<EpisodeBatch> val;
        {
            const auto all = draw_episodes(sc, root.child("validation"), 0, cfg.validation_size, T);
            for (std::size_t first = 0; first < all.size(); first += cfg.eval_chunk)
                val.push_back(slice(all, first, std::min(cfg.eval_chunk, all.size() - first)));
        }

        std::vector<EpisodeBatch> calib;
        for (std::size_t k = 0; k < cfg.calibration_batches; ++k)
            calib.push_back(draw_episodes(sc, root.child("calibration").child(std::uint64_t(k)), 0, cfg.batch_size, T));

        nn::PlateauSchedule sched(cfg.lr_initial, cfg.lr_factor, cfg.lr_patience, cfg.lr_floor);
        nn::AdamState adam;
        TrainResult res;

        auto check = [&](std::size_t step, double train_loss) {
            agent.recalibrate(calib);
            HistoryRow row{step, sched.lr(), train_loss, validation_loss(agent, val)};
            if (!std::isfinite(row.val_loss))
                throw TrainingError("validation loss is not finite at step " + std::to_string(step));
            res.history.push_back(row);
            if (observer)
                observer(row);
            if (sched.observe(row.val_loss))
            {
                res.params = agent.params();
                res.best_step = step;
                res.best_val = row.val_loss;
            }
        };

        check(0, std::numeric_limits<double>::quiet_NaN());
        double acc = 0.0;
        std::size_t acc_n = 0;
        TensorMap grads;
        for (std::size_t step = 1; step <= cfg.max_steps; ++step)
        {
            const auto batch = draw_episodes(sc, root.child("train").child(std::uint64_t(step)), 0, cfg.batch_size, T);
            const double loss = agent.loss_and_gradients(batch, grads);
            if (!std::isfinite(loss))
            {
                if (!cfg.diagnostic_path.empty())
                    nn::save_checkpoint(cfg.diagnostic_path, {"diagnostic", agent.params().flatten()});
                throw TrainingError("training loss is not finite at step " + std::to_string(step));
            }
            agent.fold_batch_statistics();
            agent.apply_adam(grads, adam, sched.lr());
            acc += loss;
            ++acc_n;
            if (step % cfg.check_every == 0 || step == cfg.max_steps)
            {
                check(step, acc / double(acc_n));
                acc = 0.0;
                acc_n = 0;
                if (sched.checks_since_best() >= cfg.early_stop_patience)
                {
                    res.early_stopped = true;
                    break;
                }
            }
        }
        return res;
    }

    void write_history_csv(std::ostream &os, const std::vector<HistoryRow> &history)
    {
        os << "step,lr,train_loss,val_loss\n" << std::setprecision(17);
        for (const auto &r : history)
        {
            os << r.step << ',' << r.lr << ',';
            if (std::isfinite(r.train_loss))
                os << r.train_loss;
            os << ',' << r.val_loss << '\n';
        }
    }

    // ---- evaluation ----

    Metrics summarize(std::string metric, std::vector<double> per_episode)
    {
        if (per_episode.empty())
            throw std::invalid_argument("summarize: no episodes");
        Metrics m;
        m.metric = std::move(metric);
        m.n = per_episode.size();
        double s = 0.0;
        for (double v : per_episode)
            s += v;
        m.mean = s / double(m.n);
        if (m.n > 1)
        {
            double ss = 0.0;
            for (double v : per_episode)
                ss += (v - m.mean) * (v - m.mean);
            m.std_error = std::sqrt(ss / double(m.n - 1) / double(m.n));
        }
        if (m.metric == "gain")
        {
            m.mean_db = 10.0 * std::log10(m.mean);
            if (m.std_error)
                m.std_error_db = 10.0 / std::log(10.0) * *m.std_error / m.mean;
        }
        m.per_episode = std::move(per_episode);
        return m;
    }

    RandomStream test_stream(std::uint64_t seed) { return RandomStream{seed}.child("test"); }

    Metrics evaluate(const BatchEstimator &est, const Scenario &sc, std::size_t n_episodes, std::uint64_t seed,
                     std::size_t chunk)
    {
        if (n_episodes < 1)
            throw std::invalid_argument("evaluate: n_episodes must be >= 1");
        if (chunk < 1)
            throw std::invalid_argument("evaluate: chunk must be >= 1");
        const RandomStream base = test_stream(seed);
        std::vector<double> per;
        per.reserve(n_episodes);
        for (std::size_t first = 0; first < n_episodes; first += chunk)
        {
            const std::size_t cnt = std::min(chunk, n_episodes - first);
            const auto batch = draw_episodes(sc, base, first, cnt, sc.spec.T);
            const auto m = est(batch);
            if (m.size() != cnt)
                throw std::logic_error("evaluate: estimator returned the wrong number of episodes");
            per.insert(per.end(), m.begin(), m.end());
        }
        return summarize(sc.spec.task == Task::aoa ? "mse_rad2" : "gain", std::move(per));
    }

    BatchEstimator agent_estimator(Agent &agent)
    {
        return [&agent](const EpisodeBatch &b) { return agent.run(b, nn::Mode::infer).metric; };
    }

    BatchEstimator mrt_oracle(const Scenario &sc)
    {
        if (sc.spec.task == Task::aoa)
            throw std::invalid_argument("mrt_oracle: not defined for AoA estimation");
        const chan::Constraint c = sc.spec.constraint;
        const chan::Pairing pairing = sc.pairing();
        return [c, pairing](const EpisodeBatch &b) {
            std::vector<double> out;
            for (std::size_t i = 0; i < b.size(); ++i)
            {
                const auto &h = b.channel(i);
                const std::size_t M = h.size();
                ComplexVector v(M);
                if (c == chan::Constraint::unit_norm)
                {
                    const double n = h.norm();
                    for (std::size_t k = 0; k < M; ++k)
                        v.set(k, h[k] / n);
                }
                else
                {
                    const double r = c == chan::Constraint::unit_modulus ? 1.0 : 1.0 / std::sqrt(double(M));
                    for (std::size_t k = 0; k < M; ++k)
                    {
                        // Hermitian pairing aligns with arg(h); transpose pairing with -arg(h).
                        const double ph = std::arg(h[k]);
                        v.set(k, std::polar(r, pairing == chan::Pairing::hermitian ? ph : -ph));
                    }
                }
                out.push_back(chan::beamforming_gain(h, v, pairing));
            }
            return out;
        };
    }
}
