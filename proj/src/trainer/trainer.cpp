#include "lmvae/trainer/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "lmvae/autodiff/ops.hpp"
#include "lmvae/autodiff/optimizer.hpp"
#include "lmvae/autodiff/serialize.hpp"
#include "lmvae/common/binary_io.hpp"
#include "lmvae/common/errors.hpp"
#include "lmvae/discrete/discrete.hpp"
#include "lmvae/expansion/expansion.hpp"

namespace lmvae::trainer {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTaskSeedStride = 1000003;
constexpr std::uint64_t kEvalStream = 1000000;
constexpr std::uint64_t kLabeledSalt = 0x5bd1e995;

std::uint64_t task_seed(const RunConfig& c, std::size_t pos) { return c.seed + kTaskSeedStride * pos; }

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

std::vector<std::size_t> take_indices(const std::vector<std::size_t>& pool, const std::vector<std::size_t>& order) {
    std::vector<std::size_t> out;
    out.reserve(order.size());
    for (auto i : order) out.push_back(pool[i]);
    return out;
}

std::unique_ptr<ad::Optimizer> make_optimizer(const RunConfig& c, const std::vector<ad::Tensor>& params) {
    std::unique_ptr<ad::Optimizer> opt;
    if (c.optimizer == OptimizerKind::Adam)
        opt = std::make_unique<ad::AdamOptimizer>(c.learning_rate);
    else
        opt = std::make_unique<ad::SgdOptimizer>(c.learning_rate, c.momentum);
    opt->add_parameters(params);
    return opt;
}

struct Batch {
    ad::Tensor x;   // unsupervised input, supervised input, or unlabeled part
    ad::Tensor y;   // one-hot labels of x (supervised)
    ad::Tensor lx;  // labeled part (semi-supervised)
    ad::Tensor ly;
};

/// One iteration: the mode's objective, then the cross-entropy step for
/// discrete modes. Returns the first loss.
double train_iteration(const RunConfig& cfg, const mixture::MixtureState& state, ad::Optimizer& opt, const Batch& b,
                       double progress, Rng& rng, std::size_t& steps) {
    const std::size_t latent = state.expert(0).latent_width();
    ad::Tensor loss;
    switch (cfg.mode) {
    case Mode::Unsupervised: {
        const auto noise = vae::standard_normal(b.x.rows(), latent, rng);
        const double beta =
            cfg.beta_star_start < 1.0 ? vae::beta_star_at(progress, cfg.beta_star_start, cfg.beta_star_ramp) : 1.0;
        loss = ad::neg(mixture::melbo(state, b.x, noise, beta));
        break;
    }
    case Mode::Disentangled: {
        const auto noise = vae::standard_normal(b.x.rows(), latent, rng);
        const vae::DisentangleSchedule s{cfg.gamma, cfg.capacity_start, cfg.capacity_end, progress};
        loss = ad::neg(mixture::weighted_objective(
            state, [&](const vae::VaeExpert& e) { return vae::disentangled_loss(e, b.x, noise, s); }));
        break;
    }
    case Mode::Supervised: {
        const auto noise = vae::standard_normal(b.x.rows(), latent, rng);
        loss = ad::neg(discrete::mixture_supervised_loss(state, b.x, b.y, noise).elbo);
        break;
    }
    case Mode::SemiSupervised: {
        discrete::SemiSupervisedBatch sb{b.lx, b.ly, b.x};
        const auto noise_l = vae::standard_normal(b.lx.rows(), latent, rng);
        ad::Tensor noise_u;
        if (b.x.defined()) noise_u = vae::standard_normal(b.x.rows(), latent, rng);
        const double t = discrete::temperature_at(progress, cfg.temperature_start, cfg.temperature_end);
        loss = ad::neg(discrete::semi_supervised_objective(state, sb, cfg.semi_beta, noise_l, noise_u, t, rng));
        break;
    }
    }
    opt.zero_grad();
    ad::backward(loss);
    opt.step();
    ++steps;
    const double value = loss.item();

    if (cfg.discrete()) {
        const auto& cx = cfg.mode == Mode::Supervised ? b.x : b.lx;
        const auto& cy = cfg.mode == Mode::Supervised ? b.y : b.ly;
        auto ce = mixture::weighted_objective(
            state, [&](const vae::VaeExpert& e) { return discrete::cross_entropy(e.class_probabilities(cx), cy); });
        opt.zero_grad();
        ad::backward(ce);
        opt.step();
        ++steps;
    }
    return value;
}

void check_tasks(const RunConfig& cfg, const TaskList& tasks) {
    if (tasks.size() != cfg.order.size()) throw ConfigError("task list does not match tasks.order");
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const auto& ds = *tasks[i];
        if (ds.sample_width() != tasks[0]->sample_width())
            throw ConfigError("task " + ds.name + ": sample width " + std::to_string(ds.sample_width()) +
                              " differs from " + std::to_string(tasks[0]->sample_width()));
        if (ds.train.count == 0) throw ConfigError("task " + ds.name + " has no training samples");
        if (cfg.discrete()) {
            if (!ds.has_labels()) throw ConfigError("task " + ds.name + " has no labels, needed in this mode");
            if (ds.class_count > cfg.classes)
                throw ConfigError("task " + ds.name + " has " + std::to_string(ds.class_count) +
                                  " classes, more than model.classes");
        }
    }
}

std::string task_file(const std::string& dir, const std::string& stem, std::size_t pos, const std::string& ext) {
    return (fs::path(dir) / (stem + std::to_string(pos) + ext)).string();
}

void write_text(const std::string& path, const std::string& text) {
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

StageEvaluation evaluate_tasks(const RunConfig& config, const ModelState& model, const TaskList& tasks,
                               const std::vector<std::size_t>& task_ids, const std::vector<std::size_t>& task_expert,
                               std::size_t stage) {
    ad::NoGradGuard guard;
    StageEvaluation ev;
    ev.report.timestamp = metrics::utc_timestamp();
    const auto ids = model.routable();
    const auto rs = model.routing_state();
    Rng rng = Rng::stream(config.seed, kEvalStream + stage);
    const std::size_t latent = rs.expert(0).latent_width();

    for (auto t : task_ids) {
        if (t >= tasks.size()) throw RangeError("task " + std::to_string(t) + " out of range");
        const auto& ds = *tasks[t];
        std::size_t n = ds.test.count;
        if (config.eval_samples) n = std::min(n, config.eval_samples);
        if (n == 0) throw ContractError("task " + ds.name + " has no test samples");
        const auto idx = iota(n);
        const auto x = ds.rows(data::Part::Test, idx);
        // ELBO per (expert, sample), averaged over the routing draws
        std::vector<std::vector<double>> score(ids.size(), std::vector<double>(n, 0.0));
        for (std::size_t r = 0; r < config.routing_draws; ++r) {
            const auto s = mixture::score_experts(rs, x, vae::standard_normal(n, latent, rng));
            for (std::size_t k = 0; k < ids.size(); ++k)
                for (std::size_t b = 0; b < n; ++b) score[k][b] += s[k][b] / static_cast<double>(config.routing_draws);
        }
        std::vector<std::size_t> routes(n);
        std::vector<double> column(ids.size());
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t k = 0; k < ids.size(); ++k) column[k] = score[k][b];
            routes[b] = mixture::inference_selection(column).chosen;
        }
        const std::size_t d = x.cols();

        std::vector<double> recon(n * d), nll(n);
        std::vector<std::size_t> predicted(n, 0);
        const bool classify = config.discrete() && ds.has_labels();
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (std::find(routes.begin(), routes.end(), k) == routes.end()) continue;
            const auto& e = rs.expert(k);
            const auto r = vae::reconstruct_mean(e, x);
            ad::Tensor probs;
            if (classify) probs = e.class_probabilities(x);
            for (std::size_t b = 0; b < n; ++b) {
                if (routes[b] != k) continue;
                std::copy_n(r.values().begin() + static_cast<std::ptrdiff_t>(b * d), d,
                            recon.begin() + static_cast<std::ptrdiff_t>(b * d));
                nll[b] = -score[k][b];
                if (classify) {
                    const std::size_t c = probs.cols();
                    auto row = probs.values().subspan(b * c, c);
                    predicted[b] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
                }
            }
        }
        const auto rt = ad::Tensor::matrix(n, d, std::move(recon));
        const metrics::ImageShape shape{ds.height, ds.width, ds.channels};

        metrics::TaskMetrics tm;
        tm.task = ds.name;
        tm.nll = std::accumulate(nll.begin(), nll.end(), 0.0) / static_cast<double>(n);
        tm.mse = metrics::mse(x, rt);
        tm.psnr = metrics::psnr(x, rt);
        tm.ssim = metrics::ssim(x, rt, shape);

        std::vector<std::size_t> counts(model.expert_count(), 0);
        std::size_t on_own = 0;
        const std::size_t own = t < task_expert.size() ? task_expert[t] : model.expert_count();
        for (auto r : routes) {
            ++counts[ids[r]];
            on_own += ids[r] == own;
        }
        const double routing_acc = static_cast<double>(on_own) / static_cast<double>(n);

        if (classify) {
            const auto labels = ds.labels(data::Part::Test, idx);
            std::size_t hits = 0;
            for (std::size_t b = 0; b < n; ++b) {
                hits += predicted[b] == labels[b];
                Event c{.kind = "classify", .task = t, .item = b, .chosen = ids[routes[b]]};
                c.true_class = labels[b];
                c.predicted_class = predicted[b];
                ev.events.push_back(c);
            }
            tm.accuracy = static_cast<double>(hits) / static_cast<double>(n);
        }

        auto metric = [&](const std::string& name, double v) {
            ev.events.push_back(Event{.kind = "eval", .task = stage, .item = t, .value = v, .note = name});
        };
        metric("nll", tm.nll);
        metric("mse", tm.mse);
        metric("psnr", tm.psnr.db);
        metric("ssim", tm.ssim);
        if (tm.accuracy) metric("accuracy", *tm.accuracy);
        metric("routing_accuracy", routing_acc);

        ev.report.tasks.push_back(tm);
        ev.report.routing.push_back(counts);
        ev.routing_accuracy.push_back(routing_acc);
    }
    return ev;
}

RunResult run_lifelong(const RunConfig& config, bool resume) {
    config.validate();
    return run_lifelong(config, load_tasks(config), resume);
}

RunResult run_lifelong(const RunConfig& cfg, const TaskList& tasks, bool resume) {
    cfg.validate();
    check_tasks(cfg, tasks);
    const std::size_t width = tasks[0]->sample_width();
    const bool files = !cfg.output_dir.empty();
    if (files) fs::create_directories(cfg.output_dir);
    const std::string log_path = files ? (fs::path(cfg.output_dir) / "events.csv").string() : "";
    const std::string last_path = files ? (fs::path(cfg.output_dir) / "last.ckpt").string() : "";

    RunResult res;
    Checkpoint& ck = res.checkpoint;
    Rng rng = Rng::stream(cfg.seed, 0);
    EventLog log;
    if (resume && files && fs::exists(last_path)) {
        ck = load_checkpoint(last_path);
        if (ck.config_ini != checkpoint_config_text(cfg))
            throw ConfigError(last_path + " was written by a different configuration");
        rng.restore(ck.rng_state);
        log = EventLog::resume(log_path, ck.log_offset);
    } else {
        ck.config_ini = checkpoint_config_text(cfg);
        ck.base_dir = cfg.base_dir;
        ck.model = build_model(cfg, width, rng);
        log = EventLog(log_path);
    }
    ModelState& model = ck.model;

    std::size_t stop = cfg.order.size();
    if (cfg.stop_after_tasks) stop = std::min(stop, cfg.stop_after_tasks);

    for (std::size_t pos = ck.completed; pos < stop; ++pos) {
        const auto& ds = *tasks[pos];
        const std::uint64_t tseed = task_seed(cfg, pos);
        const std::size_t n = ds.train.count;
        const auto first_order = data::batch_order(n, tseed, 0);

        // ---- task switch ----
        std::size_t active = 0;
        if (cfg.policy == Policy::Mixture) {
            auto sel_batches = data::make_batches(first_order, cfg.batch_size);
            sel_batches.resize(std::min(sel_batches.size(), cfg.selection_batches));
            std::vector<ad::Tensor> xs;
            for (const auto& b : sel_batches) xs.push_back(ds.rows(data::Part::Train, b));
            const auto rep = mixture::select_and_freeze(model.mixture, xs, rng);
            active = rep.chosen;
            model.mixture.set_dirichlet(mixture::dirichlet_parameters(model.mixture.previous(), cfg.floor_e));
            log.append(Event{.kind = "selection", .task = pos, .chosen = active, .elbo = rep.elbo,
                             .p_assign = rep.p_assign, .v_select = rep.v_select, .note = ds.name});
        } else if (cfg.policy == Policy::Transfer) {
            log.append(Event{.kind = "selection", .task = pos, .chosen = 0, .note = ds.name});
        } else if (pos == 0) {
            log.append(Event{.kind = "novelty", .task = pos, .chosen = 0, .note = "initial"});
        } else {
            std::vector<std::size_t> probe_idx(first_order.begin(),
                                               first_order.begin() + static_cast<std::ptrdiff_t>(
                                                                         std::min(cfg.probe_size, n)));
            const auto rep = expansion::decide_expansion(model.pool, ds.rows(data::Part::Train, probe_idx));
            active = rep.add_new ? model.pool.add_expert(rng) : rep.chosen;
            log.append(Event{.kind = "novelty", .task = pos, .chosen = active, .elbo = rep.scores,
                             .value = rep.min_score, .note = rep.add_new ? "add" : "update"});
        }
        ck.task_expert.resize(pos);
        ck.task_expert.push_back(active);

        // ---- objective state and optimizer ----
        mixture::MixtureState local;
        mixture::MixtureState* state = &model.mixture;
        std::vector<ad::Tensor> params;
        if (cfg.policy == Policy::Expansion) {
            local = mixture::MixtureState({model.pool.compose(active)}, cfg.floor_e, cfg.penalty_u);
            state = &local;
            params = model.pool.trainable_parameters(active);
        } else {
            for (const auto& e : model.mixture.experts()) {
                auto p = e.trainable_parameters();
                params.insert(params.end(), p.begin(), p.end());
            }
        }
        if (cfg.policy != Policy::Mixture) state->set_weights({1.0});
        auto opt = make_optimizer(cfg, params);

        // ---- data for this task ----
        std::vector<std::size_t> main_pool = iota(n), labeled;
        if (cfg.mode == Mode::SemiSupervised) {
            const auto split = data::split_semi_supervised(ds, std::min(cfg.label_budget_for(pos), n), tseed);
            labeled = split.labeled;
            main_pool = split.unlabeled;
            if (labeled.empty()) throw ConfigError("task " + ds.name + ": label budget is zero");
        }
        const bool unlabeled_empty = main_pool.empty();
        if (unlabeled_empty) main_pool = labeled;
        const std::size_t per_epoch = (main_pool.size() + cfg.batch_size - 1) / cfg.batch_size;
        const std::size_t epochs = cfg.epochs_for(pos);
        const std::size_t total = per_epoch * epochs;
        std::vector<std::vector<std::size_t>> lbatches;
        std::size_t lcursor = 0, lcycle = 0;

        const std::size_t probe_n = std::min(cfg.transfer_samples ? cfg.transfer_samples : ds.test.count,
                                             ds.test.count);
        ad::Tensor transfer_x;
        metrics::TransferCurve curve(pos, active, metrics::Delta::Mse);
        auto record_transfer = [&](std::size_t epoch, std::size_t step) {
            if (!cfg.transfer_curves || probe_n == 0) return;
            if (!transfer_x.defined()) transfer_x = ds.rows(data::Part::Test, iota(probe_n));
            const double s = metrics::transfer_score(state->expert(cfg.policy == Policy::Mixture ? active : 0),
                                                     transfer_x, metrics::Delta::Mse);
            curve.add(step, s);
            log.append(Event{.kind = "transfer", .task = pos, .epoch = epoch, .chosen = active, .score = s});
        };
        record_transfer(0, 0);

        std::size_t it = 0;
        for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
            const auto order = take_indices(main_pool, data::batch_order(main_pool.size(), tseed, epoch));
            double sum = 0;
            std::size_t count = 0;
            for (const auto& idx : data::make_batches(order, cfg.batch_size)) {
                Batch b;
                if (cfg.mode == Mode::SemiSupervised) {
                    if (lcursor >= lbatches.size()) {
                        const auto lorder =
                            take_indices(labeled, data::batch_order(labeled.size(), tseed ^ kLabeledSalt, lcycle++));
                        lbatches = data::make_batches(lorder, cfg.batch_size);
                        lcursor = 0;
                    }
                    const auto& li = lbatches[lcursor++];
                    b.lx = ds.rows(data::Part::Train, li);
                    b.ly = discrete::one_hot(ds.labels(data::Part::Train, li), cfg.classes);
                    if (!unlabeled_empty) b.x = ds.rows(data::Part::Train, idx);
                } else {
                    b.x = ds.rows(data::Part::Train, idx);
                    if (cfg.mode == Mode::Supervised)
                        b.y = discrete::one_hot(ds.labels(data::Part::Train, idx), cfg.classes);
                }
                if (cfg.policy == Policy::Mixture)
                    state->set_weights(mixture::sample_mixing_weights(state->dirichlet(), rng));
                const double progress = total ? static_cast<double>(it) / static_cast<double>(total) : 0.0;
                const double loss = train_iteration(cfg, *state, *opt, b, progress, rng, res.optimizer_steps);
                res.losses.push_back(loss);
                sum += loss;
                ++count;
                ++it;
            }
            res.iterations += count;
            log.append(Event{.kind = "epoch", .task = pos, .epoch = epoch + 1, .chosen = active,
                             .value = count ? sum / static_cast<double>(count) : 0.0});
            record_transfer(epoch + 1, it);
        }
        if (cfg.transfer_curves) res.curves.push_back(curve);

        // ---- task end ----
        if (cfg.policy == Policy::Mixture) {
            model.mixture.freeze_expert(active);
            FreezeRecord r{pos, "expert", active, 0};
            r.digest = frozen_digest(model, r);
            ck.freezes.push_back(r);
            log.append(Event{.kind = "freeze", .task = pos, .chosen = active, .note = "expert digest " + hex64(r.digest)});
        } else if (cfg.policy == Policy::Expansion && !model.pool.shared_frozen()) {
            model.pool.freeze_shared();
            FreezeRecord r{pos, "shared", 0, 0};
            r.digest = frozen_digest(model, r);
            ck.freezes.push_back(r);
            log.append(Event{.kind = "freeze", .task = pos, .note = "shared digest " + hex64(r.digest)});
        }
        ck.completed = pos + 1;

        auto ev = evaluate_tasks(cfg, model, tasks, iota(pos + 1), ck.task_expert, pos);
        for (const auto& e : ev.events) log.append(e);
        if (files) {
            write_text(task_file(cfg.output_dir, "eval_task", pos, ".csv"), ev.report.to_csv());
            write_text(task_file(cfg.output_dir, "eval_task", pos, ".txt"), ev.report.summary());
        }
        res.evaluations.push_back(std::move(ev));

        ck.rng_state = rng.state();
        ck.log_offset = log.offset();
        if (files) {
            const auto bytes = encode_checkpoint(ck);
            write_file_bytes(task_file(cfg.output_dir, "task", pos, ".ckpt"), bytes);
            write_file_bytes(last_path, bytes);
        }
    }

    for (const auto& r : ck.freezes) {
        const auto now = frozen_digest(model, r);
        const bool ok = now == r.digest;
        res.audit_passed = res.audit_passed && ok;
        log.append(Event{.kind = "audit", .task = r.task, .chosen = r.expert, .value = ok ? 1.0 : 0.0,
                         .note = r.part + " digest " + hex64(now)});
    }
    res.events = log.text();
    return res;
}

}  // namespace lmvae::trainer
