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

#ifndef ACTIVESENSE_NN_HPP
#define ACTIVESENSE_NN_HPP

#include "activesense/autodiff.hpp"
#include "activesense/numerics.hpp"

#include <string>
#include <vector>

namespace activesense::nn
{
    using ad::Graph;
    using ad::Tensor;
    using ad::TensorMap;
    using ad::Value;

    enum class Activation
    {
        relu,
        linear,
        normalize_unit_power,
        normalize_modulus,
    };

    std::string to_string(Activation a);
    Activation activation_from_string(const std::string &s);

    // Fully connected layer: activation(A x + b), A is out x in.
    struct DenseParams
    {
        Tensor A;
        Tensor b;
        Activation activation = Activation::linear;
        double target_modulus = 1.0; // only for normalize_modulus

        std::size_t in_features() const { return A.cols(); }
        std::size_t out_features() const { return A.rows(); }
    };

    // Gate order everywhere: forget, input, output, candidate.
    struct LstmParams
    {
        Tensor A_f, A_i, A_o, A_c; // S x input_dim
        Tensor U_f, U_i, U_o, U_c; // S x S
        Tensor b_f, b_i, b_o, b_c; // S

        std::size_t state_size() const { return U_f.rows(); }
        std::size_t input_dim() const { return A_f.cols(); }
        void validate() const;
    };

    struct LstmState
    {
        Tensor s; // hidden state [B, S]
        Tensor c; // cell state [B, S]
    };

    struct BatchNormState
    {
        Tensor gamma, beta;
        Tensor running_mean, running_var;
        // Weight of the newest batch statistic in the running average:
        // running <- (1 - momentum) * running + momentum * batch.
        double momentum = 0.01;
        double epsilon = 1e-5;

        std::size_t features() const { return gamma.numel(); }
    };

    struct AdamState
    {
        TensorMap m, v;
        long step = 0;
        double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
    };

    // ---- initialization ----

    // Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
    DenseParams init_dense(std::size_t in, std::size_t out, Activation act, num::Rng &rng,
                           double target_modulus = 1.0);
    // Same weight law; biases zero except the forget-gate bias, set to 1.
    LstmParams init_lstm(std::size_t input_dim, std::size_t state_size, num::Rng &rng);
    BatchNormState init_batchnorm(std::size_t features, double momentum = 0.01, double epsilon = 1e-5);

    // ---- graph builders (parameters registered once, applied any number of times) ----

    struct DenseHandles
    {
        Value A, b;
        Activation activation;
        double target_modulus;
    };
    DenseHandles register_dense(Graph &g, const std::string &prefix, const DenseParams &p);
    Value apply_dense(Graph &g, const DenseHandles &h, Value x);

    struct LstmHandles
    {
        Value A_f, A_i, A_o, A_c, U_f, U_i, U_o, U_c, b_f, b_i, b_o, b_c;
    };
    LstmHandles register_lstm(Graph &g, const std::string &prefix, const LstmParams &p);

    struct LstmValues
    {
        Value s, c;
    };
    LstmValues apply_lstm(Graph &g, const LstmHandles &h, Value y, Value s_prev, Value c_prev);

    struct BatchNormHandles
    {
        Value gamma, beta;
        std::string key;
        double epsilon;
    };
    // Registers gamma/beta as parameters and the running statistics as graph buffers.
    BatchNormHandles register_batchnorm(Graph &g, const std::string &prefix, const BatchNormState &st);
    Value apply_batchnorm(Graph &g, const BatchNormHandles &h, Value x);

    // Fold a train-mode batch statistic into the running averages.
    void update_running_stats(BatchNormState &st, const ad::BatchStats &stats);

    // ---- standalone evaluation ----

    Tensor dense_forward(const Tensor &x, const DenseParams &p);
    LstmState lstm_step(const Tensor &y, const LstmState &prev, const LstmParams &p);

    struct NormalizeResult
    {
        Tensor out;
        std::size_t degenerate = 0; // rows/entries that took the canonical fallback
    };
    NormalizeResult normalize_unit_power(const Tensor &w_raw);
    NormalizeResult normalize_modulus(const Tensor &w_raw, double target_modulus);

    enum class Mode
    {
        train,
        infer
    };
    // Train mode normalizes by batch statistics and updates the running averages in st.
    Tensor batchnorm_forward(const Tensor &x, BatchNormState &st, Mode mode);

    // Bias-corrected Adam update of every entry of params that has a gradient.
    void adam_step(TensorMap &params, const TensorMap &grads, AdamState &st, double lr);

    // Multiplies the learning rate by `factor` whenever the validation loss has
    // not improved for `patience` consecutive checks; never drops below `floor`.
    class PlateauSchedule
    {
    public:
        PlateauSchedule(double initial = 1e-3, double factor = 0.3162, int patience = 10, double floor = 1e-5);

        // Returns true when val_loss is a new best.
        bool observe(double val_loss);
        double lr() const { return lr_; }
        int checks_since_best() const { return since_best_; }
        double best() const { return best_; }

    private:
        double lr_, factor_, floor_;
        int patience_;
        int since_best_ = 0;
        int since_decay_ = 0;
        double best_;
    };

    // ---- checkpoint container ----

    struct Checkpoint
    {
        std::string config_hash;
        TensorMap entries;
    };

    // Binary layout (all integers little-endian):
    //   "ASCKPT01" | u32 hash_len | hash bytes | u32 count |
    //   count x { u32 name_len | name | u32 rank | u64 dims[rank] | f64 payload[numel] }
    // The file is written to "<path>.tmp" and renamed into place.
    void save_checkpoint(const std::string &path, const Checkpoint &ckpt);
    Checkpoint load_checkpoint(const std::string &path);
}

#endif
