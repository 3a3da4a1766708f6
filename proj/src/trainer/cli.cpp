#include "lmvae/trainer/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "lmvae/common/errors.hpp"
#include "lmvae/discrete/discrete.hpp"
#include "lmvae/trainer/trainer.hpp"

namespace lmvae::trainer {

namespace fs = std::filesystem;

namespace {

struct Loaded {
    Checkpoint ckpt;
    RunConfig config;
    TaskList tasks;
};

Loaded open_checkpoint(const std::string& path) {
    Loaded l;
    l.ckpt = load_checkpoint(path);
    l.config = l.ckpt.config();
    l.tasks = load_tasks(l.config);
    return l;
}

std::size_t check_task(const Loaded& l, std::size_t task) {
    if (task >= l.ckpt.completed)
        throw ConfigError("--task " + std::to_string(task) + ": the checkpoint has completed " +
                          std::to_string(l.ckpt.completed) + " task(s)");
    return task;
}

std::size_t pick_expert(const Loaded& l, std::size_t task, long expert) {
    if (expert < 0) return l.ckpt.task_expert.at(task);
    if (static_cast<std::size_t>(expert) >= l.ckpt.model.expert_count())
        throw ConfigError("--expert " + std::to_string(expert) + " out of range");
    return static_cast<std::size_t>(expert);
}

ad::Tensor test_row(const data::TaskDataset& ds, std::size_t index) {
    if (index >= ds.test.count)
        throw ConfigError("sample " + std::to_string(index) + " out of range for " + std::to_string(ds.test.count) +
                          " test samples");
    const std::size_t i[] = {index};
    return ds.rows(data::Part::Test, i);
}

std::vector<std::string> write_frames(const std::string& dir, const std::string& stem, const ad::Tensor& frames,
                                      const data::TaskDataset& ds) {
    fs::create_directories(dir);
    const metrics::ImageShape shape{ds.height, ds.width, ds.channels};
    const std::string ext = ds.channels == 3 ? ".ppm" : ".pgm";
    std::vector<std::string> paths;
    const std::size_t d = frames.cols();
    for (std::size_t f = 0; f < frames.rows(); ++f) {
        auto row = frames.values().subspan(f * d, d);
        std::ostringstream name;
        name << stem << "_" << std::setw(2) << std::setfill('0') << f << ext;
        const auto path = (fs::path(dir) / name.str()).string();
        metrics::write_image_grid(path, ad::Tensor::matrix(1, d, {row.begin(), row.end()}), shape, 1);
        paths.push_back(path);
    }
    return paths;
}

}  // namespace

int cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Lifelong mixture of VAEs: train, evaluate and inspect runs", "lmvae"};
    app.require_subcommand(1);

    std::string config_path, output_dir, checkpoint;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool resume = false;
    auto* train = app.add_subcommand("train", "run the lifelong task loop");
    train->add_option("--config", config_path, "INI run configuration")->required()->check(CLI::ExistingFile);
    auto* seed_opt = train->add_option("--seed", seed, "override run.seed");
    train->add_option("--output", output_dir, "override run.output_dir");
    train->add_option("--set", overrides, "section.key=value override, repeatable");
    train->add_flag("--resume", resume, "continue from output_dir/last.ckpt when present");

    std::vector<std::size_t> eval_tasks;
    std::string csv_path;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on learned tasks");
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--task", eval_tasks, "task position, repeatable (default: all completed)");
    eval->add_option("--csv", csv_path, "also write the CSV here");
    eval->add_option("--set", overrides, "section.key=value override of the stored configuration");

    std::size_t task = 0, steps = 10, sample_a = 0, sample_b = 1, dim = 0;
    long expert = -1;
    std::string out_dir = ".";
    std::vector<double> range{-3.0, 3.0};
    auto* interp = app.add_subcommand("interpolate", "decode a straight latent path between two test samples");
    interp->add_option("--checkpoint", checkpoint)->required();
    interp->add_option("--task", task, "task position");
    interp->add_option("--from", sample_a, "first test sample");
    interp->add_option("--to", sample_b, "second test sample");
    interp->add_option("--steps", steps, "frame count")->check(CLI::Range(2, 1000));
    interp->add_option("--expert", expert, "expert index (default: the task's expert)");
    interp->add_option("--out", out_dir, "frame directory");

    auto* trav = app.add_subcommand("traverse", "sweep one latent coordinate of a test sample");
    trav->add_option("--checkpoint", checkpoint)->required();
    trav->add_option("--task", task, "task position");
    trav->add_option("--sample", sample_a, "test sample");
    trav->add_option("--dim", dim, "latent coordinate")->required();
    trav->add_option("--range", range, "lower and upper value")->expected(2)->allow_extra_args(false);
    trav->add_option("--steps", steps, "frame count")->check(CLI::Range(1, 1000));
    trav->add_option("--expert", expert, "expert index (default: the task's expert)");
    trav->add_option("--out", out_dir, "frame directory");

    std::size_t count = 0;
    auto* cls = app.add_subcommand("classify", "route and classify test samples");
    cls->add_option("--checkpoint", checkpoint)->required();
    cls->add_option("--task", task, "task position");
    cls->add_option("--count", count, "samples to classify (default: all)");

    auto* inspect = app.add_subcommand("inspect-checkpoint", "print a checkpoint manifest");
    inspect->add_option("checkpoint", checkpoint, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        if (code == 0) return 0;
        err << app.help();
        return 2;
    }

    try {
        if (*train) {
            auto config = load_config(config_path);
            for (const auto& o : overrides) apply_override(config, o);
            if (*seed_opt) config.seed = seed;
            if (!output_dir.empty()) config.output_dir = output_dir;
            config.validate();
            const auto r = run_lifelong(config, resume);
            for (const auto& ev : r.evaluations) out << ev.report.summary();
            out << "tasks completed: " << r.checkpoint.completed << " of " << config.order.size() << "\n";
            if (!r.audit_passed) {
                err << "freeze audit failed: a frozen expert changed\n";
                return 1;
            }
            return 0;
        }
        if (*eval) {
            auto l = open_checkpoint(checkpoint);
            for (const auto& o : overrides) apply_override(l.config, o);
            if (eval_tasks.empty())
                for (std::size_t t = 0; t < l.ckpt.completed; ++t) eval_tasks.push_back(t);
            for (auto t : eval_tasks) check_task(l, t);
            const auto ev = evaluate_tasks(l.config, l.ckpt.model, l.tasks, eval_tasks, l.ckpt.task_expert,
                                           l.ckpt.completed - 1);
            const auto csv = ev.report.to_csv();
            out << csv;
            if (!csv_path.empty()) {
                std::ofstream f(csv_path, std::ios::binary);
                f << csv;
                if (!f) throw std::runtime_error("cannot write " + csv_path);
            }
            return 0;
        }
        if (*interp || *trav) {
            const auto l = open_checkpoint(checkpoint);
            check_task(l, task);
            const auto& ds = *l.tasks[task];
            const auto e = l.ckpt.model.expert(pick_expert(l, task, expert));
            ad::Tensor frames;
            std::string stem;
            if (*interp) {
                frames = metrics::latent_interpolate(e, test_row(ds, sample_a), test_row(ds, sample_b), steps);
                stem = "interpolate";
            } else {
                frames = metrics::latent_traverse(e, test_row(ds, sample_a), dim, steps, range[0], range[1]);
                stem = "traverse_dim" + std::to_string(dim);
            }
            for (const auto& p : write_frames(out_dir, stem, frames, ds)) out << p << "\n";
            return 0;
        }
        if (*cls) {
            const auto l = open_checkpoint(checkpoint);
            check_task(l, task);
            if (!l.config.discrete()) throw ConfigError("classify needs a supervised or semi-supervised checkpoint");
            const auto& ds = *l.tasks[task];
            const std::size_t n = count ? std::min(count, ds.test.count) : ds.test.count;
            std::vector<std::size_t> idx(n);
            for (std::size_t i = 0; i < n; ++i) idx[i] = i;
            const auto x = ds.rows(data::Part::Test, idx);
            const auto ids = l.ckpt.model.routable();
            Rng rng = Rng::stream(l.config.seed, 2000000 + task);
            const auto rs = l.ckpt.model.routing_state();
            const auto res = discrete::classify(rs, x, vae::standard_normal(n, rs.expert(0).latent_width(), rng));
            const auto labels = ds.labels(data::Part::Test, idx);
            std::size_t hits = 0;
            out << "sample,expert,predicted_class,true_class\n";
            for (std::size_t b = 0; b < n; ++b) {
                out << b << "," << ids[res[b].expert] << "," << res[b].label << "," << labels[b] << "\n";
                hits += res[b].label == labels[b];
            }
            err << "accuracy " << static_cast<double>(hits) / static_cast<double>(n) << "\n";
            return 0;
        }
        if (*inspect) {
            out << checkpoint_manifest(load_checkpoint(checkpoint));
            return 0;
        }
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace lmvae::trainer
