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

#include "activesense/nn.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace activesense::nn
{
    std::string to_string(Activation a)
    {
        switch (a)
        {
        case Activation::relu: return "relu";
        case Activation::linear: return "linear";
        case Activation::normalize_unit_power: return "normalize-unit-power";
        case Activation::normalize_modulus: return "normalize-modulus";
        }
        return "?";
    }

    Activation activation_from_string(const std::string &s)
    {
        if (s == "relu")
            return Activation::relu;
        if (s == "linear")
            return Activation::linear;
        if (s == "normalize-unit-power")
            return Activation::normalize_unit_power;
        if (s == "normalize-modulus")
            return Activation::normalize_modulus;
        throw std::invalid_argument("unknown activation '" + s + "'");
    }

    void LstmParams::validate() const
    {
        const std::size_t S = U_f.rows(), D = A_f.cols();
        for (const Tensor *U : {&U_f, &U_i, &U_o, &U_c})
            if (U->rows() != S || U->cols() != S)
                throw std::invalid_argument("LstmParams: recurrent matrices must be S x S");
        for (const Tensor *A : {&A_f, &A_i, &A_o, &A_c})
            if (A->rows() != S || A->cols() != D)
                throw std::invalid_argument("LstmParams: input matrices must be S x input_dim");
        for (const Tensor *b : {&b_f, &b_i, &b_o, &b_c})
            if (b->numel() != S)
                throw std::invalid_argument("LstmParams: biases must have extent S");
    }

    namespace
    {
        Tensor glorot(std::size_t out, std::size_t in, num::Rng &rng)
        {
            const double lim = std::sqrt(6.0 / double(in + out));
            Tensor t({out, in});
            for (auto &v : t.data)
                v = rng.uniform(-lim, lim);
            return t;
        }

        void require(bool ok, const std::string &msg)
        {
            if (!ok)
                throw std::invalid_argument(msg);
        }
    }

    DenseParams init_dense(std::size_t in, std::size_t out, Activation act, num::Rng &rng, double target_modulus)
    {
        require(in > 0 && out > 0, "init_dense: extents must be positive");
        DenseParams p;
        p.A = glorot(out, in, rng);
        p.b = Tensor({out}, 0.0);
        p.activation = act;
        p.target_modulus = target_modulus;
        return p;
    }

    LstmParams init_lstm(std::size_t input_dim, std::size_t state_size, num::Rng &rng)
    {
        require(input_dim > 0 && state_size > 0, "init_lstm: extents must be positive");
        LstmParams p;
        p.A_f = glorot(state_size, input_dim, rng);
        p.A_i = glorot(state_size, input_dim, rng);
        p.A_o = glorot(state_size, input_dim, rng);
        p.A_c = glorot(state_size, input_dim, rng);
        p.U_f = glorot(state_size, state_size, rng);
        p.U_i = glorot(state_size, state_size, rng);
        p.U_o = glorot(state_size, state_size, rng);
        p.U_c = glorot(state_size, state_size, rng);
        p.b_f = Tensor({state_size}, 1.0);
        p.b_i = Tensor({state_size}, 0.0);
        p.b_o = Tensor({state_size}, 0.0);
        p.b_c = Tensor({state_size}, 0.0);
        return p;
    }

    BatchNormState init_batchnorm(std::size_t features, double momentum, double epsilon)
    {
        require(features > 0, "init_batchnorm: features must be positive");
        require(epsilon > 0.0, "init_batchnorm: epsilon must be positive");
        BatchNormState st;
        st.gamma = Tensor({features}, 1.0);
        st.beta = Tensor({features}, 0.0);
        st.running_mean = Tensor({features}, 0.0);
        st.running_var = Tensor({features}, 1.0);
        st.momentum = momentum;
        st.epsilon = epsilon;
        return st;
    }

    // ---- graph builders ----

    DenseHandles register_dense(Graph &g, const std::string &prefix, const DenseParams &p)
    {
        require(p.A.rows() == p.b.numel(), "DenseParams: A row count must equal b length");
        return {g.parameter(prefix + ".A", p.A), g.parameter(prefix + ".b", p.b), p.activation, p.target_modulus};
    }

    Value apply_dense(Graph &g, const DenseHandles &h, Value x)
    {
        Value z = g.add(g.matmul(x, h.A, true), h.b);
        switch (h.activation)
        {
        case Activation::relu: return g.relu(z);
        case Activation::linear: return z;
        case Activation::normalize_unit_power: return g.normalize_unit_power(z);
        case Activation::normalize_modulus: return g.normalize_modulus(z, h.target_modulus);
        }
        return z;
    }

    LstmHandles register_lstm(Graph &g, const std::string &prefix, const LstmParams &p)
    {
        p.validate();
        const std::string q = prefix + ".";
        return {g.parameter(q + "A_f", p.A_f), g.parameter(q + "A_i", p.A_i), g.parameter(q + "A_o", p.A_o),
                g.parameter(q + "A_c", p.A_c), g.parameter(q + "U_f", p.U_f), g.parameter(q + "U_i", p.U_i),
                g.parameter(q + "U_o", p.U_o), g.parameter(q + "U_c", p.U_c), g.parameter(q + "b_f", p.b_f),
                g.parameter(q + "b_i", p.b_i), g.parameter(q + "b_o", p.b_o), g.parameter(q + "b_c", p.b_c)};
    }

    LstmValues apply_lstm(Graph &g, const LstmHandles &h, Value y, Value s_prev, Value c_prev)
    {
        auto pre = [&](Value A, Value U, Value b) {
            return g.add(g.add(g.matmul(y, A, true), g.matmul(s_prev, U, true)), b);
        };
        Value f = g.sigmoid(pre(h.A_f, h.U_f, h.b_f));
        Value i = g.sigmoid(pre(h.A_i, h.U_i, h.b_i));
        Value o = g.sigmoid(pre(h.A_o, h.U_o, h.b_o));
        Value cand = g.tanh(pre(h.A_c, h.U_c, h.b_c));
        Value c = g.add(g.mul(f, c_prev), g.mul(i, cand));
        Value s = g.mul(o, g.tanh(c));
        return {s, c};
    }

    BatchNormHandles register_batchnorm(Graph &g, const std::string &prefix, const BatchNormState &st)
    {
        const std::size_t F = st.features();
        require(st.beta.numel() == F && st.running_mean.numel() == F && st.running_var.numel() == F,
                "BatchNormState: inconsistent extents");
        g.set_buffer(prefix + ".running_mean", st.running_mean);
        g.set_buffer(prefix + ".running_var", st.running_var);
        return {g.parameter(prefix + ".gamma", st.gamma), g.parameter(prefix + ".beta", st.beta), prefix, st.epsilon};
    }

    Value apply_batchnorm(Graph &g, const BatchNormHandles &h, Value x)
    {
        return g.batch_norm(x, h.gamma, h.beta, h.key, h.epsilon);
    }

    void update_running_stats(BatchNormState &st, const ad::BatchStats &stats)
    {
        const std::size_t F = st.features();
        require(stats.mean.size() == F && stats.var.size() == F, "update_running_stats: extent mismatch");
        const double m = st.momentum;
        for (std::size_t c = 0; c < F; ++c)
        {
            st.running_mean.data[c] = (1.0 - m) * st.running_mean.data[c] + m * stats.mean[c];
            st.running_var.data[c] = (1.0 - m) * st.running_var.data[c] + m * stats.var[c];
        }
    }

    // ---- standalone evaluation ----

    Tensor dense_forward(const Tensor &x, const DenseParams &p)
    {
        if (x.cols() != p.A.cols())
            throw std::invalid_argument("dense_forward: input extent " + std::to_string(x.cols()) +
                                        " does not match A column count " + std::to_string(p.A.cols()));
        Graph g;
        auto h = register_dense(g, "dense", p);
        Value out = apply_dense(g, h, g.input("x"));
        g.mark_output("y", out);
        return g.forward({{"x", x}}).at("y");
    }

    LstmState lstm_step(const Tensor &y, const LstmState &prev, const LstmParams &p)
    {
        p.validate();
        const std::size_t S = p.state_size();
        if (y.cols() != p.input_dim())
            throw std::invalid_argument("lstm_step: input extent does not match input_dim");
        if (prev.s.cols() != S || prev.c.cols() != S || prev.s.rows() != y.rows() || prev.c.rows() != y.rows())
            throw std::invalid_argument("lstm_step: previous state extents do not match S");
        Graph g;
        auto h = register_lstm(g, "lstm", p);
        auto out = apply_lstm(g, h, g.input("y"), g.input("s"), g.input("c"));
        g.mark_output("s", out.s);
        g.mark_output("c", out.c);
        auto r = g.forward({{"y", y}, {"s", prev.s}, {"c", prev.c}});
        return {r.at("s"), r.at("c")};
    }

    NormalizeResult normalize_unit_power(const Tensor &w_raw)
    {
        if (w_raw.cols() % 2 != 0)
            throw std::invalid_argument("normalize_unit_power: extent must be even (split complex)");
        Graph g;
        Value out = g.normalize_unit_power(g.input("w"));
        g.mark_output("w", out);
        Tensor t = g.forward({{"w", w_raw}}).at("w");
        t.shape = w_raw.shape;
        return {std::move(t), g.degenerate_count()};
    }

    NormalizeResult normalize_modulus(const Tensor &w_raw, double target_modulus)
    {
        Graph g;
        Value out = g.normalize_modulus(g.input("w"), target_modulus);
        g.mark_output("w", out);
        Tensor t = g.forward({{"w", w_raw}}).at("w");
        t.shape = w_raw.shape;
        return {std::move(t), g.degenerate_count()};
    }

    Tensor batchnorm_forward(const Tensor &x, BatchNormState &st, Mode mode)
    {
        if (mode == Mode::train && x.rows() < 2)
            throw std::invalid_argument("batchnorm_forward: train mode requires batch extent >= 2");
        Graph g;
        g.set_batch_norm_mode(mode == Mode::train ? ad::BatchNormMode::train : ad::BatchNormMode::infer);
        auto h = register_batchnorm(g, "bn", st);
        g.mark_output("y", apply_batchnorm(g, h, g.input("x")));
        Tensor y = g.forward({{"x", x}}).at("y");
        if (mode == Mode::train)
            for (const auto &s : g.batch_statistics())
                update_running_stats(st, s);
        return y;
    }

    void adam_step(TensorMap &params, const TensorMap &grads, AdamState &st, double lr)
    {
        if (!(lr > 0.0))
            throw std::invalid_argument("adam_step: learning rate must be positive");
        for (const auto &[name, g] : grads)
        {
            auto it = params.find(name);
            if (it == params.end())
                throw std::invalid_argument("adam_step: gradient for unknown parameter '" + name + "'");
            if (it->second.shape != g.shape)
                throw std::invalid_argument("adam_step: shape mismatch for '" + name + "'");
        }
        ++st.step;
        const double c1 = 1.0 - std::pow(st.beta1, double(st.step));
        const double c2 = 1.0 - std::pow(st.beta2, double(st.step));
        for (const auto &[name, g] : grads)
        {
            Tensor &p = params.at(name);
            auto &m = st.m[name];
            auto &v = st.v[name];
            if (m.numel() != g.numel())
                m = Tensor(g.shape, 0.0);
            if (v.numel() != g.numel())
                v = Tensor(g.shape, 0.0);
            for (std::size_t i = 0; i < g.numel(); ++i)
            {
                const double gi = g.data[i];
                m.data[i] = st.beta1 * m.data[i] + (1.0 - st.beta1) * gi;
                v.data[i] = st.beta2 * v.data[i] + (1.0 - st.beta2) * gi * gi;
                const double mh = m.data[i] / c1;
                const double vh = v.data[i] / c2;
                p.data[i] -= lr * mh / (std::sqrt(vh) + st.epsilon);
            }
        }
    }

    PlateauSchedule::PlateauSchedule(double initial, double factor, int patience, double floor)
        : lr_(initial), factor_(factor), floor_(floor), patience_(patience),
          best_(std::numeric_limits<double>::infinity())
    {
        require(initial > 0.0 && factor > 0.0 && factor < 1.0 && patience >= 1 && floor > 0.0,
                "PlateauSchedule: invalid configuration");
    }

    bool PlateauSchedule::observe(double val_loss)
    {
        if (val_loss < best_)
        {
            best_ = val_loss;
            since_best_ = 0;
            since_decay_ = 0;
            return true;
        }
        ++since_best_;
        if (++since_decay_ >= patience_)
        {
            lr_ = std::max(floor_, lr_ * factor_);
            since_decay_ = 0;
        }
        return false;
    }

    // ---- checkpoint ----

    namespace
    {
        static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");
        constexpr char magic[8] = {'A', 'S', 'C', 'K', 'P', 'T', '0', '1'};

        template <typename T>
        void put(std::ostream &os, T v)
        {
            os.write(reinterpret_cast<const char *>(&v), sizeof(T));
        }

        template <typename T>
        T get(std::istream &is)
        {
            T v{};
            is.read(reinterpret_cast<char *>(&v), sizeof(T));
            if (!is)
                throw std::runtime_error("checkpoint: truncated file");
            return v;
        }

        std::string get_string(std::istream &is)
        {
            const auto n = get<std::uint32_t>(is);
            std::string s(n, '\0');
            is.read(s.data(), n);
            if (!is)
                throw std::runtime_error("checkpoint: truncated file");
            return s;
        }
    }

    void save_checkpoint(const std::string &path, const Checkpoint &ckpt)
    {
        const std::string tmp = path + ".tmp";
        {
            std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
            if (!os)
                throw std::runtime_error("checkpoint: cannot open '" + tmp + "' for writing");
            os.write(magic, sizeof(magic));
            put<std::uint32_t>(os, std::uint32_t(ckpt.config_hash.size()));
            os.write(ckpt.config_hash.data(), std::streamsize(ckpt.config_hash.size()));
            put<std::uint32_t>(os, std::uint32_t(ckpt.entries.size()));
            for (const auto &[name, t] : ckpt.entries)
            {
                put<std::uint32_t>(os, std::uint32_t(name.size()));
                os.write(name.data(), std::streamsize(name.size()));
                put<std::uint32_t>(os, std::uint32_t(t.shape.size()));
                for (auto d : t.shape)
                    put<std::uint64_t>(os, std::uint64_t(d));
                os.write(reinterpret_cast<const char *>(t.data.data()), std::streamsize(t.data.size() * sizeof(double)));
            }
            if (!os)
                throw std::runtime_error("checkpoint: write failed for '" + tmp + "'");
        }
        std::filesystem::rename(tmp, path);
    }

    Checkpoint load_checkpoint(const std::string &path)
    {
        std::ifstream is(path, std::ios::binary);
        if (!is)
            throw std::runtime_error("checkpoint: cannot open '" + path + "'");
        char m[8];
        is.read(m, 8);
        if (!is || std::memcmp(m, magic, 8) != 0)
            throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
        Checkpoint ck;
        ck.config_hash = get_string(is);
        const auto count = get<std::uint32_t>(is);
        for (std::uint32_t e = 0; e < count; ++e)
        {
            std::string name = get_string(is);
            const auto rank = get<std::uint32_t>(is);
            std::vector<std::size_t> shape(rank);
            for (auto &d : shape)
                d = std::size_t(get<std::uint64_t>(is));
            Tensor t(shape, 0.0);
            is.read(reinterpret_cast<char *>(t.data.data()), std::streamsize(t.data.size() * sizeof(double)));
            if (!is)
                throw std::runtime_error("checkpoint: truncated payload for '" + name + "'");
            ck.entries.emplace(std::move(name), std::move(t));
        }
        return ck;
    }
}
