#include "lmvae/trainer/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "lmvae/common/binary_io.hpp"
#include "lmvae/common/errors.hpp"

namespace lmvae::trainer {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": '" + v + "' is not a number");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    if (v.empty() || !std::all_of(v.begin(), v.end(), [](char c) { return c >= '0' && c <= '9'; }))
        throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ConfigError(key + ": '" + v + "' is out of range");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": '" + v + "' is not a boolean");
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(v)) out.push_back(to_u64(key, item));
    return out;
}

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
    return s;
}

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
    return s;
}

template <class T>
struct Field {
    std::string section;
    std::string key;
    std::function<std::string(const T&)> get;
    std::function<void(T&, const std::string&, const std::string&)> set;  // (target, full key, value)
};

#define LMVAE_SIZE(sec, name, member)                                                                  \
    Field<RunConfig> {                                                                                 \
        sec, name, [](const RunConfig& c) { return std::to_string(c.member); },                        \
            [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_u64(k, v); } \
    }
#define LMVAE_REAL(sec, name, member)                                                                     \
    Field<RunConfig> {                                                                                    \
        sec, name, [](const RunConfig& c) { return fmt_double(c.member); },                               \
            [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); } \
    }

const std::vector<Field<RunConfig>>& run_fields() {
    static const std::vector<Field<RunConfig>> fields = {
        LMVAE_SIZE("run", "seed", seed),
        {"run", "mode", [](const RunConfig& c) { return std::string(mode_name(c.mode)); },
         [](RunConfig& c, const std::string&, const std::string& v) { c.mode = parse_mode(v); }},
        {"run", "policy", [](const RunConfig& c) { return std::string(policy_name(c.policy)); },
         [](RunConfig& c, const std::string&, const std::string& v) { c.policy = parse_policy(v); }},
        {"run", "output_dir", [](const RunConfig& c) { return c.output_dir; },
         [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }},
        LMVAE_SIZE("run", "stop_after_tasks", stop_after_tasks),
        LMVAE_SIZE("run", "eval_samples", eval_samples),
        LMVAE_SIZE("run", "transfer_samples", transfer_samples),
        LMVAE_SIZE("run", "routing_draws", routing_draws),
        {"run", "transfer_curves", [](const RunConfig& c) { return std::string(c.transfer_curves ? "true" : "false"); },
         [](RunConfig& c, const std::string& k, const std::string& v) { c.transfer_curves = to_bool(k, v); }},
        {"tasks", "order", [](const RunConfig& c) { return join(c.order); },
         [](RunConfig& c, const std::string&, const std::string& v) { c.order = split_list(v); }},
        LMVAE_SIZE("tasks", "epochs", epochs),
        LMVAE_SIZE("tasks", "label_budget", label_budget),
        LMVAE_SIZE("model", "experts", experts),
        LMVAE_SIZE("model", "latent", latent),
        {"model", "hidden", [](const RunConfig& c) { return join(c.hidden); },
         [](RunConfig& c, const std::string& k, const std::string& v) { c.hidden = to_sizes(k, v); }},
        {"model", "class_hidden", [](const RunConfig& c) { return join(c.class_hidden); },
         [](RunConfig& c, const std::string& k, const std::string& v) { c.class_hidden = to_sizes(k, v); }},
        LMVAE_SIZE("model", "classes", classes),
        LMVAE_SIZE("train", "batch_size", batch_size),
        LMVAE_REAL("train", "learning_rate", learning_rate),
        {"train", "optimizer",
         [](const RunConfig& c) { return std::string(c.optimizer == OptimizerKind::Adam ? "adam" : "sgd"); },
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "adam") c.optimizer = OptimizerKind::Adam;
             else if (v == "sgd") c.optimizer = OptimizerKind::Sgd;
             else throw ConfigError(k + ": unknown optimizer '" + v + "'");
         }},
        LMVAE_REAL("train", "momentum", momentum),
        LMVAE_SIZE("train", "selection_batches", selection_batches),
        LMVAE_REAL("mixture", "e", floor_e),
        LMVAE_REAL("mixture", "u", penalty_u),
        LMVAE_REAL("expansion", "threshold", threshold),
        LMVAE_SIZE("expansion", "probe_size", probe_size),
        LMVAE_REAL("schedule", "beta_star_start", beta_star_start),
        LMVAE_REAL("schedule", "beta_star_ramp", beta_star_ramp),
        LMVAE_REAL("schedule", "gamma", gamma),
        LMVAE_REAL("schedule", "capacity_start", capacity_start),
        LMVAE_REAL("schedule", "capacity_end", capacity_end),
        LMVAE_REAL("schedule", "temperature_start", temperature_start),
        LMVAE_REAL("schedule", "temperature_end", temperature_end),
        LMVAE_REAL("schedule", "semi_beta", semi_beta),
    };
    return fields;
}

#define LMVAE_TSIZE(name, member)                                                                       \
    Field<TaskSource> {                                                                                 \
        "", name, [](const TaskSource& t) { return std::to_string(t.member); },                         \
            [](TaskSource& t, const std::string& k, const std::string& v) { t.member = to_u64(k, v); } \
    }
#define LMVAE_TREAL(name, member)                                                                          \
    Field<TaskSource> {                                                                                    \
        "", name, [](const TaskSource& t) { return fmt_double(t.member); },                                \
            [](TaskSource& t, const std::string& k, const std::string& v) { t.member = to_double(k, v); } \
    }
#define LMVAE_TSTR(name, member)                                                                \
    Field<TaskSource> {                                                                         \
        "", name, [](const TaskSource& t) { return t.member; },                                 \
            [](TaskSource& t, const std::string&, const std::string& v) { t.member = v; }       \
    }

const std::vector<Field<TaskSource>>& task_fields() {
    static const std::vector<Field<TaskSource>> fields = {
        LMVAE_TSTR("source", source),     LMVAE_TSTR("path", path),         LMVAE_TSTR("prefix", prefix),
        LMVAE_TSTR("generator", generator), LMVAE_TSTR("base", base),       LMVAE_TSIZE("seed", seed),
        LMVAE_TSIZE("height", height),    LMVAE_TSIZE("width", width),      LMVAE_TSIZE("classes", classes),
        LMVAE_TREAL("noise", noise),      LMVAE_TREAL("separation", separation),
        LMVAE_TSIZE("train_count", train_count), LMVAE_TSIZE("test_count", test_count),
        LMVAE_TSIZE("epochs", epochs),    LMVAE_TSIZE("label_budget", label_budget),
    };
    return fields;
}

void set_run_key(RunConfig& c, const std::string& section, const std::string& key, const std::string& value) {
    const std::string full = section + "." + key;
    for (const auto& f : run_fields())
        if (f.section == section && f.key == key) return f.set(c, full, value);
    throw ConfigError("unknown configuration key '" + full + "'");
}

TaskSource& task_entry(RunConfig& c, const std::string& name) {
    for (auto& t : c.tasks)
        if (t.name == name) return t;
    TaskSource t;
    t.name = name;
    c.tasks.push_back(t);
    return c.tasks.back();
}

void set_task_key(RunConfig& c, const std::string& name, const std::string& key, const std::string& value) {
    const std::string full = "task." + name + "." + key;
    auto& t = task_entry(c, name);
    for (const auto& f : task_fields())
        if (f.key == key) return f.set(t, full, value);
    throw ConfigError("unknown configuration key '" + full + "'");
}

}  // namespace

const char* mode_name(Mode m) {
    switch (m) {
    case Mode::Unsupervised: return "unsupervised";
    case Mode::Disentangled: return "disentangled";
    case Mode::Supervised: return "supervised";
    case Mode::SemiSupervised: return "semi-supervised";
    }
    return "?";
}

const char* policy_name(Policy p) {
    switch (p) {
    case Policy::Mixture: return "mixture";
    case Policy::Expansion: return "expansion";
    case Policy::Transfer: return "transfer";
    }
    return "?";
}

Mode parse_mode(const std::string& s) {
    for (auto m : {Mode::Unsupervised, Mode::Disentangled, Mode::Supervised, Mode::SemiSupervised})
        if (s == mode_name(m)) return m;
    throw ConfigError("run.mode: unknown mode '" + s + "'");
}

Policy parse_policy(const std::string& s) {
    for (auto p : {Policy::Mixture, Policy::Expansion, Policy::Transfer})
        if (s == policy_name(p)) return p;
    throw ConfigError("run.policy: unknown policy '" + s + "'");
}

const TaskSource& RunConfig::task(const std::string& name) const {
    for (const auto& t : tasks)
        if (t.name == name) return t;
    throw ConfigError("task '" + name + "' has no [task." + name + "] section");
}

std::size_t RunConfig::epochs_for(std::size_t position) const {
    const auto& t = task(order.at(position));
    return t.epochs ? t.epochs : epochs;
}

std::size_t RunConfig::label_budget_for(std::size_t position) const {
    const auto& t = task(order.at(position));
    return t.label_budget ? t.label_budget : label_budget;
}

vae::ExpertConfig RunConfig::expert_config(std::size_t input_width) const {
    vae::ExpertConfig c;
    c.input_width = input_width;
    c.latent_width = latent;
    c.hidden = hidden;
    c.class_hidden = class_hidden;
    c.class_count = discrete() ? classes : 0;
    return c;
}

std::string RunConfig::resolve(const std::string& path) const {
    if (path.empty() || base_dir.empty() || std::filesystem::path(path).is_absolute()) return path;
    return (std::filesystem::path(base_dir) / path).string();
}

void RunConfig::validate() const {
    if (order.empty()) throw ConfigError("tasks.order: the task sequence is empty");
    for (const auto& name : order) {
        const auto& t = task(name);
        if (t.source != "idx" && t.source != "lmv1" && t.source != "synth")
            throw ConfigError("task." + name + ".source: unknown source '" + t.source + "'");
        if (t.source == "synth") {
            const auto g = data::parse_generator(t.generator);
            const bool transform =
                g == data::Generator::Invert || g == data::Generator::PermutePixels || g == data::Generator::Rotate90;
            if (transform && t.base.empty()) throw ConfigError("task." + name + ".base: transform needs a base task");
            if (transform) task(t.base);
        }
        if (t.source != "synth" && t.path.empty()) throw ConfigError("task." + name + ".path is required");
    }
    if (routing_draws == 0) throw ConfigError("run.routing_draws must be positive");
    if (epochs == 0) throw ConfigError("tasks.epochs must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (!(learning_rate > 0)) throw ConfigError("train.learning_rate must be positive");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum must lie in [0, 1)");
    if (latent == 0) throw ConfigError("model.latent must be positive");
    if (selection_batches == 0) throw ConfigError("train.selection_batches must be positive");
    if (policy == Policy::Mixture && experts == 0) throw ConfigError("model.experts must be positive");
    if (policy == Policy::Expansion) {
        if (!(threshold > 0)) throw ConfigError("expansion.threshold must be positive");
        if (probe_size == 0) throw ConfigError("expansion.probe_size must be positive");
        if (hidden.empty()) throw ConfigError("model.hidden: expansion mode needs a hidden layer to share");
    }
    if (!(floor_e > 0)) throw ConfigError("mixture.e must be positive");
    if (policy == Policy::Mixture && floor_e * static_cast<double>(experts) >= 1.0)
        throw ConfigError("mixture.e * model.experts must stay below 1");
    if (!(penalty_u > 0)) throw ConfigError("mixture.u must be positive");
    if (!(beta_star_start > 0 && beta_star_start <= 1)) throw ConfigError("schedule.beta_star_start must lie in (0, 1]");
    if (!(beta_star_ramp > 0 && beta_star_ramp <= 1)) throw ConfigError("schedule.beta_star_ramp must lie in (0, 1]");
    if (!(gamma >= 0)) throw ConfigError("schedule.gamma must be non-negative");
    if (!(capacity_start >= 0 && capacity_end >= 0)) throw ConfigError("schedule capacities must be non-negative");
    if (!(temperature_start > 0 && temperature_end > 0)) throw ConfigError("schedule temperatures must be positive");
    if (!(semi_beta >= 0)) throw ConfigError("schedule.semi_beta must be non-negative");
    if (discrete() && (classes < 2 || classes > 256)) throw ConfigError("model.classes must lie in [2, 256]");
}

RunConfig parse_config(const std::string& text, const std::string& base_dir) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
    }
    RunConfig c;
    c.base_dir = base_dir;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError("key '" + section + "' must live inside a [section]");
        for (const auto& [key, node] : body) {
            const std::string value = trim(node.data());
            if (section.rfind("task.", 0) == 0)
                set_task_key(c, section.substr(5), key, value);
            else
                set_run_key(c, section, key, value);
        }
    }
    return c;
}

RunConfig load_config(const std::string& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = read_file_bytes(path);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    const auto dir = std::filesystem::path(path).parent_path().string();
    return parse_config(std::string(bytes.begin(), bytes.end()), dir);
}

std::string to_ini(const RunConfig& config) {
    std::ostringstream s;
    std::string section;
    for (const auto& f : run_fields()) {
        if (f.section != section) {
            s << (section.empty() ? "" : "\n") << "[" << f.section << "]\n";
            section = f.section;
        }
        s << f.key << " = " << f.get(config) << "\n";
    }
    for (const auto& t : config.tasks) {
        s << "\n[task." << t.name << "]\n";
        for (const auto& f : task_fields()) s << f.key << " = " << f.get(t) << "\n";
    }
    return s.str();
}

void apply_override(RunConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string lhs = trim(assignment.substr(0, eq)), value = trim(assignment.substr(eq + 1));
    if (lhs.rfind("task.", 0) == 0) {
        const auto dot = lhs.rfind('.');
        if (dot <= 5) throw ConfigError("override '" + lhs + "' must be task.<name>.<key>");
        set_task_key(config, lhs.substr(5, dot - 5), lhs.substr(dot + 1), value);
        return;
    }
    const auto dot = lhs.find('.');
    if (dot == std::string::npos) throw ConfigError("override '" + lhs + "' must be section.key");
    set_run_key(config, lhs.substr(0, dot), lhs.substr(dot + 1), value);
}

std::vector<std::shared_ptr<const data::TaskDataset>> load_tasks(const RunConfig& config) {
    std::map<std::string, std::shared_ptr<const data::TaskDataset>> built;
    std::function<std::shared_ptr<const data::TaskDataset>(const std::string&, int)> build =
        [&](const std::string& name, int depth) -> std::shared_ptr<const data::TaskDataset> {
        if (depth > 16) throw ConfigError("task." + name + ".base: transform chain too deep or cyclic");
        if (auto it = built.find(name); it != built.end()) return it->second;
        const auto& t = config.task(name);
        data::TaskDataset ds;
        if (t.source == "idx") {
            ds = data::load_idx_task(name, config.resolve(t.path), t.prefix.empty() ? name : t.prefix, t.train_count,
                                     t.test_count);
        } else if (t.source == "lmv1") {
            ds = data::load_lmv1(config.resolve(t.path));
            ds.name = name;
        } else {
            data::SynthSpec sp;
            sp.generator = data::parse_generator(t.generator);
            sp.seed = t.seed;
            sp.train_count = t.train_count;
            sp.test_count = t.test_count;
            sp.height = t.height;
            sp.width = t.width;
            sp.classes = t.classes;
            sp.noise = t.noise;
            sp.separation = t.separation;
            if (!t.base.empty()) sp.base = build(t.base, depth + 1);
            ds = data::synthesize_task(sp);
            ds.name = name;
        }
        auto ptr = std::make_shared<const data::TaskDataset>(std::move(ds));
        built[name] = ptr;
        return ptr;
    };
    std::vector<std::shared_ptr<const data::TaskDataset>> out;
    for (const auto& name : config.order) out.push_back(build(name, 0));
    return out;
}

}  // namespace lmvae::trainer
