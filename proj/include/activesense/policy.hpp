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

#ifndef ACTIVESENSE_POLICY_HPP
#define ACTIVESENSE_POLICY_HPP

#include "activesense/autodiff.hpp"
#include "activesense/channel.hpp"
#include "activesense/nn.hpp"
#include "activesense/numerics.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace activesense::policy
{
    using ad::Tensor;
    using ad::TensorMap;
    using num::ComplexVector;
    using num::cplx;
    using num::RandomStream;

    enum class Task
    {
        aoa,       // estimate the path angles
        precoding, // design a downlink beamformer
        ris,       // design RIS reflection coefficients
    };

    enum class Coherence
    {
        coherent,
        noncoherent,
    };

    std::string to_string(Task t);
    Task task_from_string(const std::string &s);
    std::string to_string(Coherence c);
    Coherence coherence_from_string(const std::string &s);

    struct TaskSpec
    {
        Task task = Task::aoa;
        chan::Constraint constraint = chan::Constraint::unit_norm; // sensing (and beamformer) constraint
        Coherence coherence = Coherence::coherent;
        bool include_snr = true;
        std::size_t T = 6;
        double snr_db = 10.0;

        void validate() const;
    };

    // Task plus the channel law it runs on.
    struct Scenario
    {
        TaskSpec spec;
        chan::MmWaveConfig mmwave;
        chan::RisConfig ris;

        void validate() const;
        bool is_ris() const { return spec.task == Task::ris; }
        std::size_t antennas() const;       // M_r or N_r
        std::size_t feature_dim() const;    // per-frame LSTM input width
        std::size_t output_dim() const;     // L_p or 2 * antennas
        double noise_variance() const;      // 1 for mmWave, sigma^2 for RIS
        double power() const;               // P from snr_db
        double snr_feature() const;         // snr_db / 10
        double target_modulus() const;      // per-entry modulus of constant/unit-modulus heads
        chan::Pairing pairing() const;      // hermitian (mmWave) or transpose (RIS)
        std::size_t noise_dim() const;      // M_r for mmWave, 1 for RIS
    };

    // y -> network input for one frame. snr_db is scaled by 1/10.
    std::vector<double> build_feature(cplx y, const TaskSpec &spec, double snr_db);

    // ---- episode data ----

    // A batch of channel realizations with the per-frame noise they are observed through.
    struct EpisodeBatch
    {
        std::vector<chan::MmWaveChannel> mmwave;
        std::vector<chan::RisChannelSet> ris;
        // noise[i][t]: frame t+1 noise of episode i; extent M_r (z_t, CN(0, I)) or 1 (n_t, CN(0, sigma^2)).
        std::vector<std::vector<ComplexVector>> noise;

        std::size_t size() const { return noise.size(); }
        const ComplexVector &channel(std::size_t i) const; // h or h_c
    };

    // Episode k (absolute index first + j) takes its channel from base.child(k) and
    // its frame-t noise from base.child(k).child("noise").child(t), t = 0-based.
    // The draw of an episode therefore never depends on the batch it lands in or on T.
    EpisodeBatch draw_episodes(const Scenario &sc, RandomStream base, std::size_t first, std::size_t count,
                               std::size_t frames);
    EpisodeBatch single_episode(const Scenario &sc, chan::MmWaveChannel ch, RandomStream noise, std::size_t frames);
    EpisodeBatch single_episode(const Scenario &sc, chan::RisChannelSet ch, RandomStream noise, std::size_t frames);
    EpisodeBatch slice(const EpisodeBatch &b, std::size_t first, std::size_t count);

    // Path angles ordered by |alpha| descending (stable for ties).
    std::vector<double> strength_ordered_angles(const chan::MmWaveChannel &ch);

    // ---- agent ----

    enum class AgentKind
    {
        active,              // LSTM-driven adaptive sensing
        nonadaptive_random,  // fixed random sensing vectors + feedforward head
        nonadaptive_learned, // trainable fixed sensing vectors + feedforward head
    };

    enum class FinalInput
    {
        cell,   // c_T
        hidden, // s_T
    };

    std::string to_string(AgentKind k);
    AgentKind agent_kind_from_string(const std::string &s);

    struct AgentArch
    {
        AgentKind kind = AgentKind::active;
        std::size_t state_size = 128;
        std::vector<std::size_t> sensing_widths{256, 256, 256}; // hidden widths; the 2M output layer is implicit
        std::vector<std::size_t> final_widths{256, 256, 256};   // hidden widths; the output layer is implicit
        FinalInput final_input = FinalInput::cell;
        bool batch_norm = true;
        double bn_momentum = 0.01;
        double bn_epsilon = 1e-5;
    };

    struct AgentParams
    {
        AgentArch arch;
        nn::LstmParams lstm;                       // active only
        std::vector<nn::DenseParams> sensing;      // active only
        // The sensing head runs once per frame: gamma/beta are tied across frames while
        // the inference statistics are kept per frame, running_mean/var being [T, F].
        std::vector<nn::BatchNormState> sensing_bn;
        std::vector<nn::DenseParams> final_head;
        std::vector<nn::BatchNormState> final_bn;
        Tensor fixed_sensing; // nonadaptive: [T, 2M] raw sensing vectors (normalized by the sensing head activation)

        // Names: lstm.A_f .. lstm.b_c, sense.<k>.A/.b, sense_bn.<k>.gamma/.beta/.running_mean/.running_var,
        // final.<k>.*, final_bn.<k>.*, fixed.W.
        TensorMap flatten() const;
        void assign(const TensorMap &entries); // throws invalid_argument on missing names or shape mismatch
    };

    AgentParams init_agent(const Scenario &sc, const AgentArch &arch, RandomStream init);

    // Per-episode trajectory.
    struct EpisodeRecord
    {
        std::vector<chan::SensingVector> sensing; // w_1..w_T
        std::vector<cplx> measurements;           // y_1..y_T
        std::vector<std::vector<double>> features;
        std::vector<double> output; // AoA estimate (radians) or stacked [re; im] beamformer
        double loss = 0.0;          // squared AoA error or negative gain
    };

    struct BatchResult
    {
        double loss = 0.0;
        std::vector<double> metric; // per episode: squared AoA error (rad^2) or gain
        std::vector<EpisodeRecord> records;
        std::size_t degenerate = 0; // normalization fallbacks taken
    };

    // The unrolled episode graph of one agent. Parameters live inside the graph;
    // the graph is built once and serves any batch extent.
    class Agent
    {
    public:
        Agent(const Scenario &sc, const AgentParams &params);

        const Scenario &scenario() const { return sc_; }
        const AgentArch &arch() const { return arch_; }
        AgentParams params() const;
        void set_params(const AgentParams &p);

        // Graph inputs for a batch of episodes.
        TensorMap bind(const EpisodeBatch &batch) const;

        // Forward pass in the given batch-norm mode. Running statistics are not touched.
        BatchResult run(const EpisodeBatch &batch, nn::Mode mode, bool record = false);

        // Train-mode forward + backward on the mean loss. Returns the loss; fills grads.
        double loss_and_gradients(const EpisodeBatch &batch, TensorMap &grads);
        // Fold the batch statistics of the last train-mode pass into the running averages.
        void fold_batch_statistics();
        // Replace the running statistics by population statistics of the current
        // weights: the average over the given batches of train-mode batch mean and
        // variance.
        void recalibrate(const std::vector<EpisodeBatch> &batches);
        // Apply an Adam update to every trainable tensor.
        void apply_adam(const TensorMap &grads, nn::AdamState &st, double lr);

        ad::Graph &graph() { return g_; }
        std::size_t frames() const { return sc_.spec.T; }

    private:
        void build(const AgentParams &p);

        Scenario sc_;
        AgentArch arch_;
        AgentParams proto_;
        ad::Graph g_;
        bool fixed_is_parameter_ = false;
    };

    // One episode in the requested mode (train mode needs a batch; use Agent::run).
    EpisodeRecord run_episode(Agent &agent, const EpisodeBatch &single, nn::Mode mode);

    // ---- losses ----

    // Squared 2-norm of estimate - truth, truth ordered by |alpha| descending.
    double loss_aoa(const std::vector<double> &estimate, const std::vector<double> &truth,
                    const std::vector<cplx> &alphas);
    // Negative beamforming gain; throws std::logic_error when v violates the constraint.
    double loss_gain(const ComplexVector &h, const chan::SensingVector &v, chan::Pairing pairing);

    // ---- training ----

    struct TrainConfig
    {
        std::size_t batch_size = 64;
        std::size_t validation_size = 1000;
        std::size_t max_steps = 20000;
        std::size_t check_every = 100;
        double lr_initial = 1e-3;
        double lr_factor = 0.3162;
        int lr_patience = 10;
        double lr_floor = 1e-5;
        int early_stop_patience = 40; // validation checks without improvement
        std::uint64_t seed = 1;
        std::size_t eval_chunk = 250;
        std::size_t calibration_batches = 16; // batch-norm population statistics before each check; 0 keeps running averages
        std::string diagnostic_path; // checkpoint written when the loss turns non-finite

        void validate() const;
    };

    struct HistoryRow
    {
        std::size_t step = 0;
        double lr = 0.0;
        double train_loss = 0.0;
        double val_loss = 0.0;
    };

    struct TrainResult
    {
        AgentParams params; // best-validation parameters
        std::vector<HistoryRow> history;
        std::size_t best_step = 0;
        double best_val = 0.0;
        bool early_stopped = false;
    };

    class TrainingError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    // Optional per-check callback (progress reporting).
    using TrainObserver = std::function<void(const HistoryRow &)>;

    TrainResult train(const Scenario &sc, const AgentArch &arch, const TrainConfig &cfg,
                      const TrainObserver &observer = {});
    // Continue from given parameters (used for nonadaptive variants seeded from a shared draw).
    TrainResult train_from(const Scenario &sc, AgentParams init, const TrainConfig &cfg,
                           const TrainObserver &observer = {});

    void write_history_csv(std::ostream &os, const std::vector<HistoryRow> &history);

    // ---- evaluation ----

    // Per-episode metric for a batch: squared AoA error (rad^2) or beamforming gain.
    using BatchEstimator = std::function<std::vector<double>(const EpisodeBatch &)>;

    struct Metrics
    {
        std::string metric; // "mse_rad2" or "gain"
        std::size_t n = 0;
        double mean = 0.0;
        std::optional<double> std_error; // empty when n = 1
        double mean_db = 0.0;            // gain tasks: 10 log10(mean)
        std::optional<double> std_error_db;
        std::vector<double> per_episode;
    };

    Metrics summarize(std::string metric, std::vector<double> per_episode);

    // Test episodes come from RandomStream{seed}.child("test"), so every method
    // evaluated with one seed sees the same channels and noise.
    RandomStream test_stream(std::uint64_t seed);
    Metrics evaluate(const BatchEstimator &est, const Scenario &sc, std::size_t n_episodes, std::uint64_t seed,
                     std::size_t chunk = 250);
    BatchEstimator agent_estimator(Agent &agent);

    // Perfect-CSI stand-in: MRT (unit norm), phase-only MRT (constant modulus) or
    // phase matching (RIS). Test hook for the evaluation path.
    BatchEstimator mrt_oracle(const Scenario &sc);
}

#endif
