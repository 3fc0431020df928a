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

#ifndef ACTIVESENSE_HARNESS_HPP
#define ACTIVESENSE_HARNESS_HPP

#include "activesense/policy.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace activesense::harness
{
    // Failure categories, mapped to CLI exit codes.
    class ValidationError : public std::runtime_error
    {
    public:
        explicit ValidationError(std::vector<std::string> problems);
        const std::vector<std::string> &problems() const { return problems_; }

    private:
        std::vector<std::string> problems_;
    };

    class NotFoundError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    enum class Method
    {
        active,
        nonadaptive_random,
        nonadaptive_learned,
        omp, // OMP AoA recovery, or OMP channel estimate + matched beamformer for precoding
        hiebs,
        hiepm,
        lmmse_phase_match,
        mrt_oracle,
    };

    std::string to_string(Method m);
    Method method_from_string(const std::string &s); // throws ValidationError
    bool is_trained(Method m);

    enum class SweepAxis
    {
        none,
        snr_db,
        T,
    };

    std::string to_string(SweepAxis a);

    struct BaselineConfig
    {
        std::size_t grid_size = 2560;        // OMP dictionary
        std::size_t hiepm_grid_size = 256;   // power of two
        std::size_t lmmse_prior_draws = 10000;
    };

    struct ExperimentConfig
    {
        std::string name = "experiment";
        policy::Scenario scenario;
        std::vector<Method> methods;
        SweepAxis sweep_axis = SweepAxis::none;
        std::vector<double> sweep_values;
        policy::AgentArch arch;
        policy::TrainConfig train;
        BaselineConfig baselines;
        std::size_t test_episodes = 1000;
        std::vector<std::uint64_t> seeds{1};
        std::string output_dir = "results";
        std::string cache_dir; // empty: <output_dir>/cache
        bool use_cache = true;

        // Scenario at one sweep point.
        policy::Scenario scenario_at(double sweep_value) const;
        std::vector<double> sweep_points() const; // {NaN} when there is no sweep
        std::string cache_path() const;
    };

    // Parse JSON text; unknown keys and bad values are collected into one ValidationError.
    ExperimentConfig parse_config(const std::string &json_text);
    ExperimentConfig load_config(const std::string &path); // NotFoundError when unreadable
    // Cross-field checks (method/task compatibility, sweep ordering, ...).
    void validate(const ExperimentConfig &cfg);

    // Canonical JSON of everything that determines results (output paths and cache switches excluded).
    std::string canonical_json(const ExperimentConfig &cfg);
    std::string config_hash(const ExperimentConfig &cfg); // 16 hex digits of FNV-1a

    struct ResultRow
    {
        std::string method;
        std::string sweep_axis;
        double sweep_value = 0.0; // NaN without a sweep
        std::string metric;
        double metric_mean = 0.0;
        std::optional<double> std_error;
        std::size_t n_episodes = 0;
        std::uint64_t seed = 0;
        std::string config_hash;
        double mean_db = 0.0;                // gain metrics
        std::optional<double> std_error_db;
        std::vector<double> per_episode;
    };

    struct RunOptions
    {
        std::size_t workers = 1;
        std::optional<std::uint64_t> seed_override;
        std::optional<std::string> output_dir_override;
        bool verbose = false;
        std::function<void(const std::string &)> log; // progress lines
    };

    struct RunSummary
    {
        std::vector<ResultRow> rows;
        std::string results_path;
        std::size_t trained = 0;    // models trained in this run
        std::size_t cache_hits = 0; // models loaded from the cache
    };

    // Train (or load) every learned method, evaluate all methods on the common test
    // episodes and write results.csv, per-episode CSVs and training histories.
    RunSummary run_experiment(ExperimentConfig cfg, const RunOptions &opt = {});

    void write_results_csv(std::ostream &os, const std::vector<ResultRow> &rows);
    std::vector<ResultRow> read_results_csv(const std::string &path);

    // Trained parameters of a learned method at one sweep point and seed; loads the
    // cache or throws NotFoundError when train_if_missing is false.
    policy::AgentParams trained_params(const ExperimentConfig &cfg, Method m, double sweep_value, std::uint64_t seed,
                                       bool train_if_missing, bool *was_cached = nullptr,
                                       std::vector<policy::HistoryRow> *history = nullptr);

    // ---- exports ----

    enum class ExportKind
    {
        mse_vs_snr,
        gain_vs_T,
        beam_pattern,
        posterior_trace,
        channels,
    };

    ExportKind export_kind_from_string(const std::string &s);

    struct ExportRequest
    {
        ExportKind kind = ExportKind::mse_vs_snr;
        std::string config_path;
        std::string results_path; // mse-vs-snr / gain-vs-T; default <output_dir>/results.csv
        std::string out_path;
        std::string method = "active"; // beam-pattern / posterior-trace sensing source
        double phi_deg = 25.0;     // beam-pattern / posterior-trace channel, alpha = 1
        std::size_t grid_size = 0; // 0: baselines.hiepm_grid_size (posterior) or 721 (pattern)
        std::size_t count = 100;   // channels export
        std::optional<double> sweep_value;
        std::optional<std::uint64_t> seed;
        bool degrees = false;      // MSE in deg^2
    };

    // Writes the CSV and returns its path.
    std::string export_figure_data(const ExportRequest &req);

    // Remove the checkpoint cache of a config. Returns the number of files deleted.
    std::size_t clean_cache(const ExperimentConfig &cfg);
}

#endif
