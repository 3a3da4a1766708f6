#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lmvae/data/dataset.hpp"
#include "lmvae/vae/expert.hpp"

namespace lmvae::trainer {

enum class Mode { Unsupervised, Disentangled, Supervised, SemiSupervised };
/// mixture: fixed K with Dirichlet gating; expansion: shared-trunk pool
/// grown by novelty; transfer: one expert trained on every task in turn.
enum class Policy { Mixture, Expansion, Transfer };
enum class OptimizerKind { Adam, Sgd };

const char* mode_name(Mode m);
const char* policy_name(Policy p);
Mode parse_mode(const std::string& s);
Policy parse_policy(const std::string& s);

/// Where a task's samples come from.
struct TaskSource {
    std::string name;
    std::string source = "synth";  // idx | lmv1 | synth
    std::string path;              // idx: directory, lmv1: file
    std::string prefix;            // idx: file prefix, e.g. "mnist"
    std::string generator = "gaussian-blobs";
    std::string base;              // transform generators: another task's name
    std::uint64_t seed = 0;
    std::size_t height = 28;
    std::size_t width = 28;
    std::size_t classes = 10;
    double noise = 0.1;
    double separation = 0.0;
    std::size_t train_count = 2000;  // synth: generated; idx/lmv1: cap (0 keeps all)
    std::size_t test_count = 500;
    std::size_t epochs = 0;          // 0: use the run default
    std::size_t label_budget = 0;    // semi-supervised labeled count; 0: use the run default
};

struct RunConfig {
    // [run]
    std::uint64_t seed = 1;
    Mode mode = Mode::Unsupervised;
    Policy policy = Policy::Mixture;
    std::string output_dir;
    std::string base_dir;             // relative paths resolve here
    std::size_t stop_after_tasks = 0; // > 0 stops early, for interrupted runs
    std::size_t eval_samples = 500;   // test samples per task in evaluations, 0 keeps all
    std::size_t transfer_samples = 200;
    std::size_t routing_draws = 16;   // noise draws averaged into each routing ELBO
    bool transfer_curves = true;

    // [tasks]
    std::vector<std::string> order;
    std::vector<TaskSource> tasks;
    std::size_t epochs = 10;
    std::size_t label_budget = 100;

    // [model]
    std::size_t experts = 2;
    std::size_t latent = 32;
    std::vector<std::size_t> hidden{256};
    std::vector<std::size_t> class_hidden{128};
    std::size_t classes = 10;

    // [train]
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double momentum = 0.9;
    std::size_t selection_batches = 4;

    // [mixture]
    double floor_e = 1e-3;
    double penalty_u = 1e6;

    // [expansion]
    double threshold = 10.0;
    std::size_t probe_size = 64;

    // [schedule]
    double beta_star_start = 1.0;
    double beta_star_ramp = 0.5;
    double gamma = 4.0;
    double capacity_start = 0.5;
    double capacity_end = 25.0;
    double temperature_start = 1.0;
    double temperature_end = 0.5;
    double semi_beta = 0.5;

    bool discrete() const { return mode == Mode::Supervised || mode == Mode::SemiSupervised; }
    const TaskSource& task(const std::string& name) const;
    std::size_t epochs_for(std::size_t position) const;
    std::size_t label_budget_for(std::size_t position) const;
    vae::ExpertConfig expert_config(std::size_t input_width) const;
    /// Joins a possibly relative path onto base_dir.
    std::string resolve(const std::string& path) const;

    /// Throws ConfigError naming the offending key.
    void validate() const;
};

/// INI text: `key = value` lines under `[section]` headers. Task sources
/// live in `[task.<name>]` sections.
RunConfig parse_config(const std::string& text, const std::string& base_dir = "");
RunConfig load_config(const std::string& path);
/// Canonical INI text; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const RunConfig& config);

/// `section.key=value`, or `task.<name>.key=value`.
void apply_override(RunConfig& config, const std::string& assignment);

/// Builds every task of the sequence, in order.
std::vector<std::shared_ptr<const data::TaskDataset>> load_tasks(const RunConfig& config);

}  // namespace lmvae::trainer
