#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "lmvae/data/dataset.hpp"
#include "lmvae/metrics/metrics.hpp"
#include "lmvae/trainer/checkpoint.hpp"
#include "lmvae/trainer/config.hpp"
#include "lmvae/trainer/events.hpp"

namespace lmvae::trainer {

using TaskList = std::vector<std::shared_ptr<const data::TaskDataset>>;

struct StageEvaluation {
    metrics::EvalReport report;
    std::vector<double> routing_accuracy;  // per evaluated task, against its training expert
    std::vector<Event> events;
};

/// Metrics on the test sets of `task_ids` with ELBO routing over
/// the routable experts. Deterministic in (seed, stage).
StageEvaluation evaluate_tasks(const RunConfig& config, const ModelState& model, const TaskList& tasks,
                               const std::vector<std::size_t>& task_ids, const std::vector<std::size_t>& task_expert,
                               std::size_t stage);

struct RunResult {
    Checkpoint checkpoint;
    std::vector<StageEvaluation> evaluations;  // one per task finished in this invocation
    std::vector<metrics::TransferCurve> curves;
    std::vector<double> losses;  // first-step loss of every iteration
    std::size_t iterations = 0;
    std::size_t optimizer_steps = 0;
    bool audit_passed = true;
    std::string events;
};

/// Trains the task sequence in order. With `resume`, continues from
/// output_dir/last.ckpt when it exists. Writes events.csv, task<k>.ckpt,
/// last.ckpt and eval_task<k>.{csv,txt} when output_dir is set.
RunResult run_lifelong(const RunConfig& config, bool resume = false);
RunResult run_lifelong(const RunConfig& config, const TaskList& tasks, bool resume = false);

}  // namespace lmvae::trainer
