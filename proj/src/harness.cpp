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

#include "activesense/harness.hpp"

#include "activesense/baselines.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

namespace activesense::harness
{
    namespace fs = std::filesystem;
    using json = nlohmann::ordered_json;
    using num::cplx;
    using num::RandomStream;

    namespace
    {
        std::string join_lines(const std::vector<std::string> &p)
        {
            std::string s = "invalid config:";
            for (const auto &x : p)
                s += "\n  " + x;
            return s;
        }

        double deg(double rad) { return rad * 180.0 / std::numbers::pi; }
        double rad(double deg) { return deg * std::numbers::pi / 180.0; }

        std::string fmt(double v)
        {
            std::ostringstream os;
            os << std::setprecision(17) << v;
            return os.str();
        }

        bool is_pow2(std::size_t n) { return n >= 2 && (n & (n - 1)) == 0; }

        // Typed access to one JSON object; every problem is recorded, unknown keys included.
        class Reader
        {
        public:
            Reader(const json &obj, std::string path, std::vector<std::string> &problems)
                : obj_(obj), path_(std::move(path)), problems_(problems)
            {
                if (!obj_.is_object())
                    problems_.push_back(path_ + ": expected an object");
            }

            ~Reader()
            {
                if (!obj_.is_object())
                    return;
                for (auto it = obj_.begin(); it != obj_.end(); ++it)
                    if (!seen_.count(it.key()))
                        problems_.push_back(where(it.key()) + ": unknown key");
            }

            bool has(const std::string &k)
            {
                seen_.insert(k);
                return obj_.is_object() && obj_.contains(k);
            }

            const json *raw(const std::string &k)
            {
                return has(k) ? &obj_.at(k) : nullptr;
            }

            template <class T>
            void get(const std::string &k, T &out)
            {
                const json *v = raw(k);
                if (!v)
                    return;
                try
                {
                    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t> ||
                                  std::is_same_v<T, int>)
                    {
                        if (!v->is_number_integer() || (v->is_number_integer() && v->get<long long>() < 0))
                            throw std::invalid_argument("expected a non-negative integer");
                        out = T(v->get<long long>());
                    }
                    else if constexpr (std::is_same_v<T, double>)
                    {
                        if (!v->is_number())
                            throw std::invalid_argument("expected a number");
                        out = v->get<double>();
                    }
                    else if constexpr (std::is_same_v<T, bool>)
                    {
                        if (!v->is_boolean())
                            throw std::invalid_argument("expected true or false");
                        out = v->get<bool>();
                    }
                    else if constexpr (std::is_same_v<T, std::string>)
                    {
                        if (!v->is_string())
                            throw std::invalid_argument("expected a string");
                        out = v->get<std::string>();
                    }
                    else if constexpr (std::is_same_v<T, std::vector<std::size_t>> ||
                                       std::is_same_v<T, std::vector<std::uint64_t>>)
                    {
                        if (!v->is_array())
                            throw std::invalid_argument("expected an array of non-negative integers");
                        out.clear();
                        for (const auto &e : *v)
                        {
                            if (!e.is_number_integer() || e.get<long long>() < 0)
                                throw std::invalid_argument("expected an array of non-negative integers");
                            out.push_back(typename T::value_type(e.get<long long>()));
                        }
                    }
                    else if constexpr (std::is_same_v<T, std::vector<double>>)
                    {
                        if (!v->is_array())
                            throw std::invalid_argument("expected an array of numbers");
                        out.clear();
                        for (const auto &e : *v)
                        {
                            if (!e.is_number())
                                throw std::invalid_argument("expected an array of numbers");
                            out.push_back(e.get<double>());
                        }
                    }
                }
                catch (const std::exception &e)
                {
                    problems_.push_back(where(k) + ": " + e.what());
                }
            }

            // Enumerated string value.
            template <class E, class F>
            void get_enum(const std::string &k, E &out, F parse)
            {
                std::string s;
                const std::size_t before = problems_.size();
                get(k, s);
                if (problems_.size() != before || !has(k))
                    return;
                try
                {
                    out = parse(s);
                }
                catch (const std::exception &)
                {
                    problems_.push_back(where(k) + ": unknown value '" + s + "'");
                }
            }

            void angle_range(const std::string &k, chan::AngleRange &r)
            {
                std::vector<double> v;
                const std::size_t before = problems_.size();
                get(k, v);
                if (problems_.size() != before || !has(k))
                    return;
                if (v.size() != 2)
                {
                    problems_.push_back(where(k) + ": expected [lo, hi] in degrees");
                    return;
                }
                r = {rad(v[0]), rad(v[1])};
            }

            std::string where(const std::string &k) const { return path_.empty() ? k : path_ + "." + k; }

        private:
            const json &obj_;
            std::string path_;
            std::vector<std::string> &problems_;
            std::set<std::string> seen_;
        };

        json range_json(const chan::AngleRange &r) { return json::array({deg(r.lo), deg(r.hi)}); }

        json scenario_json(const policy::Scenario &sc)
        {
            json j;
            j["task"] = {{"task", policy::to_string(sc.spec.task)},
                         {"constraint", chan::to_string(sc.spec.constraint)},
                         {"coherence", policy::to_string(sc.spec.coherence)},
                         {"include_snr", sc.spec.include_snr},
                         {"T", sc.spec.T},
                         {"snr_db", sc.spec.snr_db}};
            if (sc.is_ris())
                j["ris"] = {{"N1", sc.ris.N1},
                            {"N2", sc.ris.N2},
                            {"d1_over_lambda", sc.ris.d1_over_lambda},
                            {"d2_over_lambda", sc.ris.d2_over_lambda},
                            {"rician_factor", sc.ris.rician_factor},
                            {"azimuth_t_deg", range_json(sc.ris.azimuth_t)},
                            {"azimuth_r_deg", range_json(sc.ris.azimuth_r)},
                            {"elevation_t_deg", range_json(sc.ris.elevation_t)},
                            {"elevation_r_deg", range_json(sc.ris.elevation_r)},
                            {"noise_variance", sc.ris.noise_variance}};
            else
                j["mmwave"] = {{"M_r", sc.mmwave.M_r},
                               {"L_p", sc.mmwave.L_p},
                               {"phi_min_deg", deg(sc.mmwave.phi_min)},
                               {"phi_max_deg", deg(sc.mmwave.phi_max)},
                               {"d_over_lambda", sc.mmwave.d_over_lambda}};
            return j;
        }

        json arch_json(const policy::AgentArch &a)
        {
            return {{"state_size", a.state_size},
                    {"sensing_widths", a.sensing_widths},
                    {"final_widths", a.final_widths},
                    {"final_input", a.final_input == policy::FinalInput::cell ? "cell" : "hidden"},
                    {"batch_norm", a.batch_norm},
                    {"bn_momentum", a.bn_momentum},
                    {"bn_epsilon", a.bn_epsilon}};
        }

        json train_json(const policy::TrainConfig &t)
        {
            return {{"batch_size", t.batch_size},
                    {"validation_size", t.validation_size},
                    {"max_steps", t.max_steps},
                    {"check_every", t.check_every},
                    {"lr_initial", t.lr_initial},
                    {"lr_factor", t.lr_factor},
                    {"lr_patience", t.lr_patience},
                    {"lr_floor", t.lr_floor},
                    {"early_stop_patience", t.early_stop_patience},
                    {"eval_chunk", t.eval_chunk},
                    {"calibration_batches", t.calibration_batches}};
        }

        std::string hex16(std::uint64_t h)
        {
            std::ostringstream os;
            os << std::hex << std::setw(16) << std::setfill('0') << h;
            return os.str();
        }

        std::string point_label(SweepAxis axis, double v)
        {
            if (axis == SweepAxis::none)
                return "none";
            std::ostringstream os;
            os << to_string(axis) << std::setprecision(10) << v;
            return os.str();
        }

        policy::AgentKind kind_of(Method m)
        {
            switch (m)
            {
            case Method::active:
                return policy::AgentKind::active;
            case Method::nonadaptive_random:
                return policy::AgentKind::nonadaptive_random;
            case Method::nonadaptive_learned:
                return policy::AgentKind::nonadaptive_learned;
            default:
                throw std::logic_error("kind_of: not a trained method");
            }
        }

        // Cache key of one trained model.
        std::string model_key(const ExperimentConfig &cfg, Method m, double sweep_value, std::uint64_t seed)
        {
            json j;
            j["method"] = to_string(m);
            j["scenario"] = scenario_json(cfg.scenario_at(sweep_value));
            j["arch"] = arch_json(cfg.arch);
            j["train"] = train_json(cfg.train);
            j["seed"] = seed;
            return hex16(num::fnv1a(j.dump()));
        }

        void write_atomic(const fs::path &path, const std::string &content)
        {
            fs::create_directories(path.parent_path());
            const fs::path tmp = path.string() + ".tmp";
            {
                std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
                if (!os)
                    throw std::runtime_error("cannot write " + tmp.string());
                os << content;
                if (!os)
                    throw std::runtime_error("write failed for " + tmp.string());
            }
            fs::rename(tmp, path);
        }

        std::string read_file(const std::string &path)
        {
            std::ifstream is(path, std::ios::binary);
            if (!is)
                throw NotFoundError("cannot read " + path);
            std::ostringstream ss;
            ss << is.rdbuf();
            return ss.str();
        }

        std::vector<policy::HistoryRow> read_history(const std::string &path)
        {
            std::vector<policy::HistoryRow> out;
            std::istringstream is(read_file(path));
            std::string line;
            std::getline(is, line);
            while (std::getline(is, line))
            {
                if (line.empty())
                    continue;
                std::vector<std::string> f;
                std::stringstream ls(line);
                std::string cell;
                while (std::getline(ls, cell, ','))
                    f.push_back(cell);
                while (f.size() < 4)
                    f.emplace_back();
                policy::HistoryRow r;
                r.step = std::stoul(f[0]);
                r.lr = std::stod(f[1]);
                r.train_loss = f[2].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[2]);
                r.val_loss = std::stod(f[3]);
                out.push_back(r);
            }
            return out;
        }

        // Per-method estimator context; owns the grids and codebooks the estimator refers to.
        struct Prepared
        {
            std::unique_ptr<policy::Agent> agent;
            std::unique_ptr<base::AoaGrid> grid;
            std::unique_ptr<base::HierCodebook> codebook;
            policy::BatchEstimator est;
        };

        Prepared prepare(const ExperimentConfig &cfg, Method m, const policy::Scenario &sc, double sweep_value,
                         std::uint64_t seed, const policy::AgentParams *params)
        {
            Prepared p;
            const RandomStream root{seed};
            switch (m)
            {
            case Method::active:
            case Method::nonadaptive_random:
            case Method::nonadaptive_learned:
                p.agent = std::make_unique<policy::Agent>(sc, *params);
                p.est = policy::agent_estimator(*p.agent);
                break;
            case Method::omp:
                p.grid = std::make_unique<base::AoaGrid>(base::build_grid(sc.mmwave, cfg.baselines.grid_size));
                if (sc.spec.task == policy::Task::aoa)
                    p.est = base::omp_estimator(sc, *p.grid, base::random_sensing_set(sc, root.child("omp-sensing")));
                else
                    p.est = base::cs_mrt_estimator(sc, *p.grid, base::random_sensing_set(sc, root.child("omp-sensing")));
                break;
            case Method::hiebs:
                p.grid = std::make_unique<base::AoaGrid>(base::build_grid(sc.mmwave, std::size_t(1) << (sc.spec.T / 2)));
                p.codebook = std::make_unique<base::HierCodebook>(base::build_hier_codebook(*p.grid));
                p.est = base::hiebs_estimator(sc, *p.codebook, *p.grid);
                break;
            case Method::hiepm:
                p.grid = std::make_unique<base::AoaGrid>(base::build_grid(sc.mmwave, cfg.baselines.hiepm_grid_size));
                p.codebook = std::make_unique<base::HierCodebook>(base::build_hier_codebook(*p.grid));
                p.est = base::hiepm_estimator(sc, *p.codebook, *p.grid);
                break;
            case Method::lmmse_phase_match:
                p.est = base::lmmse_phase_match_estimator(
                    sc, base::estimate_ris_prior(sc.ris, cfg.baselines.lmmse_prior_draws, root.child("lmmse-prior")),
                    base::random_sensing_set(sc, root.child("lmmse-sensing")));
                break;
            case Method::mrt_oracle:
                p.est = policy::mrt_oracle(sc);
                break;
            }
            (void)sweep_value;
            return p;
        }

        std::vector<std::string> split_csv(const std::string &line)
        {
            std::vector<std::string> f;
            std::string cell;
            std::stringstream ls(line);
            while (std::getline(ls, cell, ','))
                f.push_back(cell);
            if (!line.empty() && line.back() == ',')
                f.emplace_back();
            return f;
        }
    }

    ValidationError::ValidationError(std::vector<std::string> problems)
        : std::runtime_error(join_lines(problems)), problems_(std::move(problems))
    {
    }

    // ---- names ----

    std::string to_string(Method m)
    {
        switch (m)
        {
        case Method::active:
            return "active";
        case Method::nonadaptive_random:
            return "nonadaptive-random";
        case Method::nonadaptive_learned:
            return "nonadaptive-learned";
        case Method::omp:
            return "omp";
        case Method::hiebs:
            return "hiebs";
        case Method::hiepm:
            return "hiepm";
        case Method::lmmse_phase_match:
            return "lmmse-phase-match";
        case Method::mrt_oracle:
            return "mrt-oracle";
        }
        return "?";
    }

    Method method_from_string(const std::string &s)
    {
        for (Method m : {Method::active, Method::nonadaptive_random, Method::nonadaptive_learned, Method::omp,
                         Method::hiebs, Method::hiepm, Method::lmmse_phase_match, Method::mrt_oracle})
            if (to_string(m) == s)
                return m;
        throw ValidationError({"unknown method '" + s + "'"});
    }

    bool is_trained(Method m)
    {
        return m == Method::active || m == Method::nonadaptive_random || m == Method::nonadaptive_learned;
    }

    std::string to_string(SweepAxis a)
    {
        switch (a)
        {
        case SweepAxis::none:
            return "none";
        case SweepAxis::snr_db:
            return "snr_db";
        case SweepAxis::T:
            return "T";
        }
        return "?";
    }

    // ---- config ----

    policy::Scenario ExperimentConfig::scenario_at(double v) const
    {
        policy::Scenario sc = scenario;
        if (sweep_axis == SweepAxis::snr_db && !std::isnan(v))
            sc.spec.snr_db = v;
        else if (sweep_axis == SweepAxis::T && !std::isnan(v))
            sc.spec.T = std::size_t(std::llround(v));
        return sc;
    }

    std::vector<double> ExperimentConfig::sweep_points() const
    {
        if (sweep_axis == SweepAxis::none)
            return {std::numeric_limits<double>::quiet_NaN()};
        return sweep_values;
    }

    std::string ExperimentConfig::cache_path() const
    {
        return cache_dir.empty() ? (fs::path(output_dir) / "cache").string() : cache_dir;
    }

    ExperimentConfig parse_config(const std::string &text)
    {
        json root;
        try
        {
            root = json::parse(text);
        }
        catch (const json::parse_error &e)
        {
            throw ValidationError({std::string("malformed JSON: ") + e.what()});
        }
        std::vector<std::string> problems;
        ExperimentConfig cfg;
        {
            Reader r(root, "", problems);
            r.get("name", cfg.name);

            auto &spec = cfg.scenario.spec;
            bool snr_given = false, constraint_given = false;
            if (const json *t = r.raw("task"))
            {
                Reader tr(*t, "task", problems);
                tr.get_enum("task", spec.task, policy::task_from_string);
                constraint_given = tr.has("constraint");
                tr.get_enum("constraint", spec.constraint, chan::constraint_from_string);
                tr.get_enum("coherence", spec.coherence, policy::coherence_from_string);
                snr_given = tr.has("include_snr");
                tr.get("include_snr", spec.include_snr);
                tr.get("T", spec.T);
                tr.get("snr_db", spec.snr_db);
            }
            else
                problems.push_back("task: missing");
            if (!snr_given)
                spec.include_snr = spec.task == policy::Task::aoa;
            if (spec.task == policy::Task::ris && !constraint_given)
                spec.constraint = chan::Constraint::unit_modulus;

            if (const json *m = r.raw("mmwave"))
            {
                Reader mr(*m, "mmwave", problems);
                auto &mc = cfg.scenario.mmwave;
                mr.get("M_r", mc.M_r);
                mr.get("L_p", mc.L_p);
                double lo = deg(mc.phi_min), hi = deg(mc.phi_max);
                mr.get("phi_min_deg", lo);
                mr.get("phi_max_deg", hi);
                mc.phi_min = rad(lo);
                mc.phi_max = rad(hi);
                mr.get("d_over_lambda", mc.d_over_lambda);
            }
            if (const json *m = r.raw("ris"))
            {
                Reader rr(*m, "ris", problems);
                auto &rc = cfg.scenario.ris;
                rr.get("N1", rc.N1);
                rr.get("N2", rc.N2);
                rr.get("d1_over_lambda", rc.d1_over_lambda);
                rr.get("d2_over_lambda", rc.d2_over_lambda);
                rr.get("rician_factor", rc.rician_factor);
                rr.angle_range("azimuth_t_deg", rc.azimuth_t);
                rr.angle_range("azimuth_r_deg", rc.azimuth_r);
                rr.angle_range("elevation_t_deg", rc.elevation_t);
                rr.angle_range("elevation_r_deg", rc.elevation_r);
                rr.get("noise_variance", rc.noise_variance);
            }

            if (const json *m = r.raw("methods"))
            {
                if (!m->is_array())
                    problems.push_back("methods: expected an array of method names");
                else
                    for (const auto &e : *m)
                    {
                        if (!e.is_string())
                        {
                            problems.push_back("methods: expected an array of method names");
                            continue;
                        }
                        try
                        {
                            cfg.methods.push_back(method_from_string(e.get<std::string>()));
                        }
                        catch (const ValidationError &)
                        {
                            problems.push_back("methods: unknown method '" + e.get<std::string>() + "'");
                        }
                    }
            }

            if (const json *s = r.raw("sweep"))
            {
                Reader sr(*s, "sweep", problems);
                sr.get_enum("axis", cfg.sweep_axis, [](const std::string &a) {
                    if (a == "none")
                        return SweepAxis::none;
                    if (a == "snr_db")
                        return SweepAxis::snr_db;
                    if (a == "T")
                        return SweepAxis::T;
                    throw std::invalid_argument(a);
                });
                sr.get("values", cfg.sweep_values);
            }

            if (const json *a = r.raw("arch"))
            {
                Reader ar(*a, "arch", problems);
                auto &arch = cfg.arch;
                ar.get("state_size", arch.state_size);
                ar.get("sensing_widths", arch.sensing_widths);
                ar.get("final_widths", arch.final_widths);
                ar.get_enum("final_input", arch.final_input, [](const std::string &s) {
                    if (s == "cell")
                        return policy::FinalInput::cell;
                    if (s == "hidden")
                        return policy::FinalInput::hidden;
                    throw std::invalid_argument(s);
                });
                ar.get("batch_norm", arch.batch_norm);
                ar.get("bn_momentum", arch.bn_momentum);
                ar.get("bn_epsilon", arch.bn_epsilon);
            }

            if (const json *t = r.raw("train"))
            {
                Reader tr(*t, "train", problems);
                auto &tc = cfg.train;
                tr.get("batch_size", tc.batch_size);
                tr.get("validation_size", tc.validation_size);
                tr.get("max_steps", tc.max_steps);
                tr.get("check_every", tc.check_every);
                tr.get("lr_initial", tc.lr_initial);
                tr.get("lr_factor", tc.lr_factor);
                tr.get("lr_patience", tc.lr_patience);
                tr.get("lr_floor", tc.lr_floor);
                tr.get("early_stop_patience", tc.early_stop_patience);
                tr.get("eval_chunk", tc.eval_chunk);
                tr.get("calibration_batches", tc.calibration_batches);
            }

            if (const json *b = r.raw("baselines"))
            {
                Reader br(*b, "baselines", problems);
                br.get("grid_size", cfg.baselines.grid_size);
                br.get("hiepm_grid_size", cfg.baselines.hiepm_grid_size);
                br.get("lmmse_prior_draws", cfg.baselines.lmmse_prior_draws);
            }

            r.get("test_episodes", cfg.test_episodes);
            r.get("seeds", cfg.seeds);
            r.get("output_dir", cfg.output_dir);
            r.get("cache_dir", cfg.cache_dir);
            r.get("use_cache", cfg.use_cache);
        }
        if (!problems.empty())
            throw ValidationError(problems);
        validate(cfg);
        return cfg;
    }

    ExperimentConfig load_config(const std::string &path)
    {
        return parse_config(read_file(path));
    }

    void validate(const ExperimentConfig &cfg)
    {
        std::vector<std::string> p;
        if (cfg.methods.empty())
            p.push_back("methods: at least one method is required");
        {
            std::set<Method> seen;
            for (Method m : cfg.methods)
                if (!seen.insert(m).second)
                    p.push_back("methods: '" + to_string(m) + "' listed twice");
        }
        if (cfg.sweep_axis == SweepAxis::none && !cfg.sweep_values.empty())
            p.push_back("sweep.values: must be empty when sweep.axis is none");
        if (cfg.sweep_axis != SweepAxis::none && cfg.sweep_values.empty())
            p.push_back("sweep.values: at least one value is required");
        for (std::size_t i = 1; i < cfg.sweep_values.size(); ++i)
            if (!(cfg.sweep_values[i] > cfg.sweep_values[i - 1]))
            {
                p.push_back("sweep.values: must be strictly increasing");
                break;
            }
        if (cfg.sweep_axis == SweepAxis::T)
            for (double v : cfg.sweep_values)
                if (!(v >= 1.0) || v != std::floor(v))
                {
                    p.push_back("sweep.values: T values must be positive integers");
                    break;
                }
        for (double v : cfg.sweep_values)
            if (!std::isfinite(v))
            {
                p.push_back("sweep.values: non-finite value");
                break;
            }
        if (cfg.test_episodes < 1)
            p.push_back("test_episodes: must be >= 1");
        if (cfg.seeds.empty())
            p.push_back("seeds: at least one seed is required");
        {
            std::set<std::uint64_t> s(cfg.seeds.begin(), cfg.seeds.end());
            if (s.size() != cfg.seeds.size())
                p.push_back("seeds: duplicate seed");
        }
        try
        {
            cfg.train.validate();
        }
        catch (const std::invalid_argument &e)
        {
            p.push_back(std::string("train: ") + e.what());
        }
        if (cfg.arch.state_size < 1)
            p.push_back("arch.state_size: must be >= 1");
        for (auto w : cfg.arch.sensing_widths)
            if (w < 1)
                p.push_back("arch.sensing_widths: widths must be >= 1");
        for (auto w : cfg.arch.final_widths)
            if (w < 1)
                p.push_back("arch.final_widths: widths must be >= 1");
        if (!(cfg.arch.bn_momentum > 0.0 && cfg.arch.bn_momentum <= 1.0))
            p.push_back("arch.bn_momentum: must be in (0, 1]");
        if (!(cfg.arch.bn_epsilon > 0.0))
            p.push_back("arch.bn_epsilon: must be positive");
        if (cfg.baselines.grid_size < 2)
            p.push_back("baselines.grid_size: must be >= 2");
        if (cfg.baselines.lmmse_prior_draws < 2)
            p.push_back("baselines.lmmse_prior_draws: must be >= 2");

        const auto points = cfg.sweep_points();
        for (double v : points)
        {
            const policy::Scenario sc = cfg.scenario_at(v);
            const std::string at = std::isnan(v) ? "" : " (at " + point_label(cfg.sweep_axis, v) + ")";
            try
            {
                sc.validate();
            }
            catch (const std::invalid_argument &e)
            {
                p.push_back(std::string("task") + at + ": " + e.what());
                continue;
            }
            const auto task = sc.spec.task;
            for (Method m : cfg.methods)
            {
                const std::string name = "methods: " + to_string(m) + at;
                switch (m)
                {
                case Method::omp:
                    if (task == policy::Task::ris)
                        p.push_back(name + ": needs an mmWave task");
                    else if (sc.spec.T < sc.mmwave.L_p)
                        p.push_back(name + ": needs T >= L_p");
                    else if (sc.spec.coherence != policy::Coherence::coherent)
                        p.push_back(name + ": needs coherent measurements");
                    break;
                case Method::hiebs:
                    if (task != policy::Task::aoa)
                        p.push_back(name + ": AoA task only");
                    else if (sc.mmwave.L_p != 1)
                        p.push_back(name + ": requires L_p = 1");
                    else if (sc.spec.constraint != chan::Constraint::unit_norm)
                        p.push_back(name + ": requires the unit-norm constraint");
                    else if (sc.spec.T < 2 || sc.spec.T % 2 != 0 || sc.spec.T > 40)
                        p.push_back(name + ": requires T = 2 log2(N) for a grid of N >= 2 points (even T in [2, 40])");
                    break;
                case Method::hiepm:
                    if (task != policy::Task::aoa)
                        p.push_back(name + ": AoA task only");
                    else if (sc.mmwave.L_p != 1)
                        p.push_back(name + ": requires L_p = 1");
                    else if (sc.spec.constraint != chan::Constraint::unit_norm)
                        p.push_back(name + ": requires the unit-norm constraint");
                    else if (sc.spec.coherence != policy::Coherence::coherent)
                        p.push_back(name + ": needs coherent measurements");
                    else if (!is_pow2(cfg.baselines.hiepm_grid_size))
                        p.push_back(name + ": baselines.hiepm_grid_size must be a power of two");
                    break;
                case Method::lmmse_phase_match:
                    if (task != policy::Task::ris)
                        p.push_back(name + ": RIS task only");
                    break;
                case Method::mrt_oracle:
                    if (task == policy::Task::aoa)
                        p.push_back(name + ": gain tasks only");
                    break;
                default:
                    break;
                }
            }
        }
        if (!p.empty())
            throw ValidationError(p);
    }

    std::string canonical_json(const ExperimentConfig &cfg)
    {
        json j;
        j["name"] = cfg.name;
        const json sc = scenario_json(cfg.scenario);
        for (auto it = sc.begin(); it != sc.end(); ++it)
            j[it.key()] = it.value();
        json methods = json::array();
        for (Method m : cfg.methods)
            methods.push_back(to_string(m));
        j["methods"] = methods;
        j["sweep"] = {{"axis", to_string(cfg.sweep_axis)}, {"values", cfg.sweep_values}};
        j["arch"] = arch_json(cfg.arch);
        j["train"] = train_json(cfg.train);
        j["baselines"] = {{"grid_size", cfg.baselines.grid_size},
                          {"hiepm_grid_size", cfg.baselines.hiepm_grid_size},
                          {"lmmse_prior_draws", cfg.baselines.lmmse_prior_draws}};
        j["test_episodes"] = cfg.test_episodes;
        j["seeds"] = cfg.seeds;
        return j.dump(2);
    }

    std::string config_hash(const ExperimentConfig &cfg) { return hex16(num::fnv1a(canonical_json(cfg))); }

    // ---- training cache ----

    policy::AgentParams trained_params(const ExperimentConfig &cfg, Method m, double sweep_value, std::uint64_t seed,
                                       bool train_if_missing, bool *was_cached,
                                       std::vector<policy::HistoryRow> *history)
    {
        if (!is_trained(m))
            throw std::invalid_argument("trained_params: " + to_string(m) + " has no trained parameters");
        const policy::Scenario sc = cfg.scenario_at(sweep_value);
        policy::AgentArch arch = cfg.arch;
        arch.kind = kind_of(m);
        policy::TrainConfig tc = cfg.train;
        tc.seed = seed;

        const std::string key = model_key(cfg, m, sweep_value, seed);
        const fs::path dir = cfg.cache_path();
        const fs::path ckpt = dir / (to_string(m) + "-" + key + ".ckpt");
        const fs::path hist = dir / (to_string(m) + "-" + key + ".history.csv");
        if (was_cached)
            *was_cached = false;

        if (cfg.use_cache && fs::exists(ckpt))
        {
            const auto c = nn::load_checkpoint(ckpt.string());
            if (c.config_hash == key)
            {
                auto p = policy::init_agent(sc, arch, RandomStream{seed}.child("init"));
                p.assign(c.entries);
                if (history && fs::exists(hist))
                    *history = read_history(hist.string());
                if (was_cached)
                    *was_cached = true;
                return p;
            }
        }
        if (!train_if_missing)
            throw NotFoundError("no cached checkpoint for " + to_string(m) + " at " + ckpt.string());

        tc.diagnostic_path = (dir / (to_string(m) + "-" + key + ".diagnostic.ckpt")).string();
        fs::create_directories(dir);
        const auto res = policy::train(sc, arch, tc);
        if (cfg.use_cache)
        {
            nn::save_checkpoint(ckpt.string(), {key, res.params.flatten()});
            std::ostringstream hs;
            policy::write_history_csv(hs, res.history);
            write_atomic(hist, hs.str());
        }
        if (history)
            *history = res.history;
        return res.params;
    }

    // ---- run ----

    void write_results_csv(std::ostream &os, const std::vector<ResultRow> &rows)
    {
        os << "method,sweep_axis,sweep_value,metric,metric_mean,std_error,n_episodes,seed,config_hash,mean_db,"
              "std_error_db\n";
        for (const auto &r : rows)
        {
            os << r.method << ',' << r.sweep_axis << ',' << (std::isnan(r.sweep_value) ? "" : fmt(r.sweep_value))
               << ',' << r.metric << ',' << fmt(r.metric_mean) << ',' << (r.std_error ? fmt(*r.std_error) : "")
               << ',' << r.n_episodes << ',' << r.seed << ',' << r.config_hash << ',';
            if (r.metric == "gain")
                os << fmt(r.mean_db);
            os << ',' << (r.std_error_db ? fmt(*r.std_error_db) : "") << '\n';
        }
    }

    std::vector<ResultRow> read_results_csv(const std::string &path)
    {
        std::istringstream is(read_file(path));
        std::string line;
        std::getline(is, line);
        std::vector<ResultRow> rows;
        while (std::getline(is, line))
        {
            if (line.empty())
                continue;
            auto f = split_csv(line);
            if (f.size() != 11)
                throw std::runtime_error("results file " + path + ": malformed row");
            ResultRow r;
            r.method = f[0];
            r.sweep_axis = f[1];
            r.sweep_value = f[2].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[2]);
            r.metric = f[3];
            r.metric_mean = std::stod(f[4]);
            if (!f[5].empty())
                r.std_error = std::stod(f[5]);
            r.n_episodes = std::stoul(f[6]);
            r.seed = std::stoull(f[7]);
            r.config_hash = f[8];
            if (!f[9].empty())
                r.mean_db = std::stod(f[9]);
            if (!f[10].empty())
                r.std_error_db = std::stod(f[10]);
            rows.push_back(r);
        }
        return rows;
    }

    RunSummary run_experiment(ExperimentConfig cfg, const RunOptions &opt)
    {
        if (opt.seed_override)
            cfg.seeds = {*opt.seed_override};
        if (opt.output_dir_override)
            cfg.output_dir = *opt.output_dir_override;
        validate(cfg);
        const std::string hash = config_hash(cfg);
        const fs::path out = cfg.output_dir;
        fs::create_directories(out / "episodes");
        fs::create_directories(out / "histories");
        write_atomic(out / "config.json", canonical_json(cfg) + "\n");

        struct Job
        {
            std::uint64_t seed;
            double point;
            Method method;
        };
        std::vector<Job> jobs;
        for (auto seed : cfg.seeds)
            for (double v : cfg.sweep_points())
                for (Method m : cfg.methods)
                    jobs.push_back({seed, v, m});

        std::vector<ResultRow> rows(jobs.size());
        std::vector<std::exception_ptr> errors(jobs.size());
        std::atomic<std::size_t> next{0}, trained{0}, hits{0};
        std::mutex log_mu;
        auto log = [&](const std::string &s) {
            if (!opt.log)
                return;
            std::lock_guard<std::mutex> lk(log_mu);
            opt.log(s);
        };

        auto worker = [&]() {
            for (std::size_t i = next++; i < jobs.size(); i = next++)
            {
                const Job &j = jobs[i];
                const std::string label =
                    to_string(j.method) + " " + point_label(cfg.sweep_axis, j.point) + " seed " + std::to_string(j.seed);
                try
                {
                    const policy::Scenario sc = cfg.scenario_at(j.point);
                    std::optional<policy::AgentParams> params;
                    if (is_trained(j.method))
                    {
                        bool cached = false;
                        std::vector<policy::HistoryRow> hist;
                        log(label + ": " + (cfg.use_cache ? "loading or training" : "training"));
                        params = trained_params(cfg, j.method, j.point, j.seed, true, &cached, &hist);
                        (cached ? hits : trained)++;
                        std::ostringstream hs;
                        policy::write_history_csv(hs, hist);
                        write_atomic(out / "histories" /
                                         (to_string(j.method) + "_" + point_label(cfg.sweep_axis, j.point) + "_seed" +
                                          std::to_string(j.seed) + ".csv"),
                                     hs.str());
                    }
                    auto prep = prepare(cfg, j.method, sc, j.point, j.seed, params ? &*params : nullptr);
                    auto metrics = policy::evaluate(prep.est, sc, cfg.test_episodes, j.seed, cfg.train.eval_chunk);

                    ResultRow &r = rows[i];
                    r.method = to_string(j.method);
                    r.sweep_axis = to_string(cfg.sweep_axis);
                    r.sweep_value = j.point;
                    r.metric = metrics.metric;
                    r.metric_mean = metrics.mean;
                    r.std_error = metrics.std_error;
                    r.n_episodes = metrics.n;
                    r.seed = j.seed;
                    r.config_hash = hash;
                    r.mean_db = metrics.mean_db;
                    r.std_error_db = metrics.std_error_db;
                    r.per_episode = std::move(metrics.per_episode);

                    std::ostringstream es;
                    es << "episode," << r.metric << "\n";
                    for (std::size_t k = 0; k < r.per_episode.size(); ++k)
                        es << k << ',' << fmt(r.per_episode[k]) << '\n';
                    write_atomic(out / "episodes" /
                                     (r.method + "_" + point_label(cfg.sweep_axis, j.point) + "_seed" +
                                      std::to_string(j.seed) + ".csv"),
                                 es.str());
                    log(label + ": " + r.metric + " = " + fmt(r.metric_mean));
                }
                catch (...)
                {
                    errors[i] = std::current_exception();
                }
            }
        };

        const std::size_t nw = std::max<std::size_t>(1, std::min(opt.workers, jobs.size()));
        if (nw == 1)
            worker();
        else
        {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < nw; ++w)
                pool.emplace_back(worker);
            for (auto &t : pool)
                t.join();
        }
        for (auto &e : errors)
            if (e)
                std::rethrow_exception(e);

        std::ostringstream rs;
        write_results_csv(rs, rows);
        const fs::path results = out / "results.csv";
        write_atomic(results, rs.str());

        RunSummary s;
        s.rows = std::move(rows);
        s.results_path = results.string();
        s.trained = trained;
        s.cache_hits = hits;
        return s;
    }

    // ---- exports ----

    ExportKind export_kind_from_string(const std::string &s)
    {
        if (s == "mse-vs-snr")
            return ExportKind::mse_vs_snr;
        if (s == "gain-vs-T")
            return ExportKind::gain_vs_T;
        if (s == "beam-pattern")
            return ExportKind::beam_pattern;
        if (s == "posterior-trace")
            return ExportKind::posterior_trace;
        if (s == "channels")
            return ExportKind::channels;
        throw ValidationError({"unknown export kind '" + s + "'"});
    }

    namespace
    {
        struct Aggregate
        {
            double sum = 0.0, se2 = 0.0;
            std::size_t k = 0, n = 0;
            double sum_db = 0.0, se2_db = 0.0;
        };

        // Seeds are averaged per (method, sweep value); SEs combine as sqrt(sum se^2) / k.
        std::string sweep_table(const std::vector<ResultRow> &rows, const std::string &metric,
                                const std::string &axis_name, bool degrees, const ExperimentConfig &cfg)
        {
            std::vector<std::string> order;
            std::map<std::string, std::map<double, Aggregate>> agg;
            for (const auto &r : rows)
            {
                if (r.metric != metric)
                    continue;
                double x = r.sweep_value;
                if (std::isnan(x))
                    x = axis_name == "snr_db" ? cfg.scenario.spec.snr_db : double(cfg.scenario.spec.T);
                else if (r.sweep_axis != axis_name)
                    throw ValidationError({"results were swept over " + r.sweep_axis + ", not " + axis_name});
                if (!agg.count(r.method))
                    order.push_back(r.method);
                auto &a = agg[r.method][x];
                a.sum += r.metric_mean;
                a.se2 += r.std_error ? *r.std_error * *r.std_error : 0.0;
                a.sum_db += r.mean_db;
                a.se2_db += r.std_error_db ? *r.std_error_db * *r.std_error_db : 0.0;
                a.k += 1;
                a.n += r.n_episodes;
            }
            if (order.empty())
                throw NotFoundError("no " + metric + " rows in the results table");
            std::ostringstream os;
            const double scale = degrees ? std::pow(180.0 / std::numbers::pi, 2) : 1.0;
            if (metric == "mse_rad2")
                os << "method,snr_db,mse,std_error,unit,n_seeds,n_episodes\n";
            else
                os << "method,T,gain,std_error,gain_db,std_error_db,n_seeds,n_episodes\n";
            for (const auto &m : order)
                for (const auto &[x, a] : agg[m])
                {
                    const double k = double(a.k);
                    if (metric == "mse_rad2")
                        os << m << ',' << fmt(x) << ',' << fmt(scale * a.sum / k) << ','
                           << fmt(scale * std::sqrt(a.se2) / k) << ',' << (degrees ? "deg2" : "rad2") << ',' << a.k
                           << ',' << a.n << '\n';
                    else
                        os << m << ',' << fmt(x) << ',' << fmt(a.sum / k) << ',' << fmt(std::sqrt(a.se2) / k) << ','
                           << fmt(10.0 * std::log10(a.sum / k)) << ',' << fmt(std::sqrt(a.se2_db) / k) << ',' << a.k
                           << ',' << a.n << '\n';
                }
            return os.str();
        }

        // Sensing vectors of one alpha = 1 episode at angle phi under the requested source.
        struct Replay
        {
            policy::Scenario sc;
            std::vector<chan::SensingVector> sensing;
            std::vector<cplx> measurements;
        };

        Replay replay(const ExperimentConfig &cfg, const ExportRequest &req, double point, std::uint64_t seed)
        {
            Replay rp;
            rp.sc = cfg.scenario_at(point);
            if (rp.sc.spec.task == policy::Task::ris)
                throw ValidationError({"export: beam patterns and posterior traces need an mmWave task"});
            const auto ch = chan::assemble_mmwave(std::vector<double>(rp.sc.mmwave.L_p, rad(req.phi_deg)),
                                                  std::vector<cplx>(rp.sc.mmwave.L_p, 1.0), rp.sc.mmwave);
            const RandomStream noise = RandomStream{seed}.child("export").child("noise");
            const auto single = policy::single_episode(rp.sc, ch, noise, rp.sc.spec.T);
            const double P = rp.sc.power();
            Method m = method_from_string(req.method);
            if (is_trained(m))
            {
                policy::Agent agent(rp.sc, trained_params(cfg, m, point, seed, false));
                auto rec = policy::run_episode(agent, single, nn::Mode::infer);
                rp.sensing = rec.sensing;
                rp.measurements = rec.measurements;
            }
            else if (m == Method::omp)
            {
                rp.sensing = base::random_sensing_set(rp.sc, RandomStream{seed}.child("omp-sensing"));
                for (std::size_t t = 0; t < rp.sensing.size(); ++t)
                    rp.measurements.push_back(chan::measure_mmwave(ch.h, rp.sensing[t], P, single.noise[0][t]));
            }
            else if (m == Method::hiepm)
            {
                const auto grid = base::build_grid(rp.sc.mmwave, cfg.baselines.hiepm_grid_size);
                const auto cb = base::build_hier_codebook(grid);
                const auto tr = base::hiepm_run(
                    [&](const chan::SensingVector &w, std::size_t t) {
                        return chan::measure_mmwave(ch.h, w, P, single.noise[0][t]);
                    },
                    rp.sc.spec.T, 1.0, P, 1.0, cb, grid);
                rp.sensing = tr.sensing;
                rp.measurements = tr.measurements;
            }
            else
                throw ValidationError({"export: method '" + req.method + "' has no sensing sequence to replay"});
            return rp;
        }
    }

    std::string export_figure_data(const ExportRequest &req)
    {
        const ExperimentConfig cfg = load_config(req.config_path);
        const std::uint64_t seed = req.seed.value_or(cfg.seeds.front());
        double point = std::numeric_limits<double>::quiet_NaN();
        if (cfg.sweep_axis != SweepAxis::none)
            point = req.sweep_value.value_or(cfg.sweep_values.front());
        std::string body;
        std::string default_name;

        switch (req.kind)
        {
        case ExportKind::mse_vs_snr:
        case ExportKind::gain_vs_T:
        {
            const std::string results =
                req.results_path.empty() ? (fs::path(cfg.output_dir) / "results.csv").string() : req.results_path;
            if (!fs::exists(results))
                throw NotFoundError("results table not found: " + results);
            const auto rows = read_results_csv(results);
            if (req.kind == ExportKind::mse_vs_snr)
            {
                body = sweep_table(rows, "mse_rad2", "snr_db", req.degrees, cfg);
                default_name = "mse_vs_snr.csv";
            }
            else
            {
                body = sweep_table(rows, "gain", "T", false, cfg);
                default_name = "gain_vs_T.csv";
            }
            break;
        }
        case ExportKind::beam_pattern:
        {
            const auto rp = replay(cfg, req, point, seed);
            const std::size_t n = req.grid_size ? req.grid_size : 721;
            if (n < 2)
                throw ValidationError({"export: grid size must be >= 2"});
            std::vector<double> angles(n);
            for (std::size_t k = 0; k < n; ++k)
                angles[k] = rp.sc.mmwave.phi_min + (rp.sc.mmwave.phi_max - rp.sc.mmwave.phi_min) * double(k) / double(n - 1);
            std::ostringstream os;
            os << "frame,angle_deg,gain\n";
            for (std::size_t t = 0; t < rp.sensing.size(); ++t)
            {
                const auto g = chan::beam_pattern(rp.sensing[t], angles, rp.sc.mmwave.d_over_lambda);
                for (std::size_t k = 0; k < n; ++k)
                    os << t + 1 << ',' << fmt(deg(angles[k])) << ',' << fmt(g[k]) << '\n';
            }
            body = os.str();
            default_name = "beam_pattern.csv";
            break;
        }
        case ExportKind::posterior_trace:
        {
            const auto rp = replay(cfg, req, point, seed);
            if (rp.sc.mmwave.L_p != 1)
                throw ValidationError({"export: posterior traces need L_p = 1"});
            if (rp.sc.spec.coherence != policy::Coherence::coherent)
                throw ValidationError({"export: posterior traces need coherent measurements"});
            const std::size_t n = req.grid_size ? req.grid_size : cfg.baselines.hiepm_grid_size;
            const auto grid = base::build_grid(rp.sc.mmwave, n);
            auto post = base::Posterior::uniform(grid.size());
            std::ostringstream os;
            os << "frame,angle_deg,mass\n";
            for (std::size_t t = 0; t < rp.sensing.size(); ++t)
            {
                post = base::posterior_update(post, rp.measurements[t], rp.sensing[t], 1.0, rp.sc.power(), 1.0, grid);
                for (std::size_t k = 0; k < grid.size(); ++k)
                    os << t + 1 << ',' << fmt(deg(grid.points[k])) << ',' << fmt(post.mass[k]) << '\n';
            }
            body = os.str();
            default_name = "posterior_trace.csv";
            break;
        }
        case ExportKind::channels:
        {
            const auto sc = cfg.scenario_at(point);
            const auto b = policy::draw_episodes(sc, policy::test_stream(seed), 0, req.count, sc.spec.T);
            std::ostringstream os;
            if (sc.is_ris())
                chan::write_ris_csv(os, b.ris);
            else
                chan::write_mmwave_csv(os, b.mmwave);
            body = os.str();
            default_name = "channels.csv";
            break;
        }
        }

        const fs::path path = req.out_path.empty() ? fs::path(cfg.output_dir) / "exports" / default_name
                                                   : fs::path(req.out_path);
        write_atomic(path, body);
        return path.string();
    }

    std::size_t clean_cache(const ExperimentConfig &cfg)
    {
        const fs::path dir = cfg.cache_path();
        if (!fs::exists(dir))
            return 0;
        std::size_t n = 0;
        for (const auto &e : fs::directory_iterator(dir))
        {
            const std::string name = e.path().filename().string();
            const bool ours =
                name.ends_with(".ckpt") || name.ends_with(".history.csv") || name.ends_with(".tmp");
            if (e.is_regular_file() && ours)
            {
                fs::remove(e.path());
                ++n;
            }
        }
        return n;
    }
}
