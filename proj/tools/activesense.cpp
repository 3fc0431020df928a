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

// Command-line front end: validate, run, export, clean-cache.
//
// Exit codes: 0 ok, 1 usage or unexpected failure, 2 invalid config,
// 3 missing input, 4 runtime failure (training divergence, I/O).

#include "activesense/harness.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace hx = activesense::harness;

namespace
{
    enum Exit
    {
        exit_ok = 0,
        exit_other = 1,
        exit_invalid = 2,
        exit_not_found = 3,
        exit_runtime = 4,
    };

    template <class F>
    int guarded(F &&f)
    {
        try
        {
            f();
            return exit_ok;
        }
        catch (const hx::ValidationError &e)
        {
            std::cerr << "error: invalid config\n";
            for (const auto &p : e.problems())
                std::cerr << "  " << p << "\n";
            return exit_invalid;
        }
        catch (const hx::NotFoundError &e)
        {
            std::cerr << "error: not found: " << e.what() << "\n";
            return exit_not_found;
        }
        catch (const std::runtime_error &e)
        {
            std::cerr << "error: " << e.what() << "\n";
            return exit_runtime;
        }
        catch (const std::exception &e)
        {
            std::cerr << "error: " << e.what() << "\n";
            return exit_other;
        }
    }
}

int main(int argc, char **argv)
{
    CLI::App app{"activesense: active channel sensing experiments"};
    app.require_subcommand(1);

    std::string config;
    std::string output;
    std::size_t workers = 1;
    std::uint64_t seed = 0;
    bool quiet = false;

    auto *validate = app.add_subcommand("validate", "Parse and check a config");
    validate->add_option("-c,--config", config, "Experiment config (JSON)")->required();

    auto *run = app.add_subcommand("run", "Train, evaluate and write the result table");
    run->add_option("-c,--config", config, "Experiment config (JSON)")->required();
    auto *run_out = run->add_option("-o,--output", output, "Output directory (overrides the config)");
    run->add_option("-j,--workers", workers, "Parallel jobs")->check(CLI::PositiveNumber);
    auto *run_seed = run->add_option("-s,--seed", seed, "Run a single seed instead of the config's list");
    run->add_flag("-q,--quiet", quiet, "No progress lines");

    std::string kind;
    hx::ExportRequest req;
    double sweep_value = 0.0;
    auto *exp = app.add_subcommand("export", "Write plot-ready CSV");
    exp->add_option("kind", kind, "mse-vs-snr | gain-vs-T | beam-pattern | posterior-trace | channels")->required();
    exp->add_option("-c,--config", config, "Experiment config (JSON)")->required();
    exp->add_option("-o,--output", req.out_path, "Output CSV path");
    exp->add_option("-r,--results", req.results_path, "Result table (default <output_dir>/results.csv)");
    exp->add_option("-m,--method", req.method, "Sensing source for beam-pattern / posterior-trace");
    exp->add_option("--phi", req.phi_deg, "True AoA in degrees for beam-pattern / posterior-trace");
    exp->add_option("--grid", req.grid_size, "Angle grid size");
    exp->add_option("--count", req.count, "Number of channels for the channels export");
    auto *exp_sweep = exp->add_option("--sweep-value", sweep_value, "Sweep point of the checkpoint to use");
    auto *exp_seed = exp->add_option("-s,--seed", seed, "Seed of the checkpoint to use");
    exp->add_flag("--degrees", req.degrees, "Report MSE in deg^2");

    auto *clean = app.add_subcommand("clean-cache", "Delete cached checkpoints of a config");
    clean->add_option("-c,--config", config, "Experiment config (JSON)")->required();
    auto *clean_out = clean->add_option("-o,--output", output, "Output directory (overrides the config)");

    CLI11_PARSE(app, argc, argv);

    if (validate->parsed())
        return guarded([&] {
            const auto cfg = hx::load_config(config);
            std::cout << "ok " << cfg.name << " " << hx::config_hash(cfg) << "\n";
        });

    if (run->parsed())
        return guarded([&] {
            auto cfg = hx::load_config(config);
            hx::RunOptions opt;
            opt.workers = workers;
            if (*run_seed)
                opt.seed_override = seed;
            if (*run_out)
                opt.output_dir_override = output;
            if (!quiet)
                opt.log = [](const std::string &s) { std::cerr << s << "\n"; };
            const auto s = hx::run_experiment(cfg, opt);
            for (const auto &r : s.rows)
                std::cout << r.method << " " << r.sweep_axis << "=" << r.sweep_value << " seed " << r.seed << " "
                          << r.metric << " " << r.metric_mean << "\n";
            std::cout << "wrote " << s.results_path << " (" << s.trained << " trained, " << s.cache_hits
                      << " cached)\n";
        });

    if (exp->parsed())
        return guarded([&] {
            req.kind = hx::export_kind_from_string(kind);
            req.config_path = config;
            if (*exp_sweep)
                req.sweep_value = sweep_value;
            if (*exp_seed)
                req.seed = seed;
            const std::string path = hx::export_figure_data(req);
            std::cout << "wrote " << path << "\n";
        });

    if (clean->parsed())
        return guarded([&] {
            auto cfg = hx::load_config(config);
            if (*clean_out)
                cfg.output_dir = output;
            std::cout << "removed " << hx::clean_cache(cfg) << " files\n";
        });

    return exit_other;
}
