#include "kdbench/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <thread>

#include "kdbench/errors.hpp"
#include "kdbench/hash.hpp"
#include "kdbench/rng.hpp"

namespace fs = std::filesystem;

namespace kdbench {

namespace {

bool path_safe(const std::string& name) {
    if (name.empty()) return false;
    for (char c : name) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                        c == '_' || c == '-' || c == '.';
        if (!ok) return false;
    }
    return true;
}

long long parse_suffix_int(const std::string& text, const std::string& what) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(text, &pos);
        if (pos != text.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("expected an integer after '" + what + ":'");
    }
}

double parse_suffix_double(const std::string& text, const std::string& what) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(text, &pos);
        if (pos != text.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("expected a number after '" + what + ":'");
    }
}

}  // namespace

TeacherStrategy parse_strategy(const std::string& text) {
    const auto colon = text.find(':');
    const std::string head = text.substr(0, colon);
    const std::string tail = colon == std::string::npos ? "" : text.substr(colon + 1);
    if (head == "single_best") return TeacherStrategy::single_best();
    if (head == "random_single") return TeacherStrategy::random_single();
    if (head == "by_id") {
        if (tail.empty()) throw ConfigError("by_id needs a teacher id, e.g. by_id:t3");
        return TeacherStrategy::single_by_id(tail);
    }
    if (head == "greedy") {
        const long long k = parse_suffix_int(tail, "greedy");
        if (k < 1) throw ConfigError("greedy ensemble size must be >= 1");
        return TeacherStrategy::greedy_ensemble(static_cast<int>(k));
    }
    if (head == "random_subset") {
        const long long k = parse_suffix_int(tail, "random_subset");
        if (k < 1) throw ConfigError("random subset size must be >= 1");
        return TeacherStrategy::random_subset(static_cast<int>(k));
    }
    throw ConfigError("unknown strategy '" + text + "'");
}

std::string strategy_text(const TeacherStrategy& strategy) {
    switch (strategy.kind) {
        case StrategyKind::SingleBest: return "single_best";
        case StrategyKind::SingleById: return "by_id:" + strategy.id;
        case StrategyKind::GreedyEnsemble: return "greedy:" + std::to_string(strategy.k);
        case StrategyKind::RandomSubset: return "random_subset:" + std::to_string(strategy.k);
        case StrategyKind::RandomSingle: return "random_single";
    }
    throw ContractError("unknown strategy kind");
}

DistillSchedule parse_distill_schedule(const std::string& text) {
    const auto colon = text.find(':');
    const std::string head = text.substr(0, colon);
    const std::string tail = colon == std::string::npos ? "" : text.substr(colon + 1);
    DistillSchedule sched;
    if (head == "always") {
        sched.kind = DistillKind::Always;
        return sched;
    }
    if (head == "first_fraction") {
        sched.kind = DistillKind::FirstFraction;
        sched.fraction = parse_suffix_double(tail, "first_fraction");
        if (!(sched.fraction > 0.0 && sched.fraction <= 1.0))
            throw ConfigError("first_fraction needs a fraction in (0, 1]");
        return sched;
    }
    if (head == "every_k") {
        sched.kind = DistillKind::EveryK;
        sched.every_k = parse_suffix_int(tail, "every_k");
        if (sched.every_k < 1) throw ConfigError("every_k needs k >= 1");
        return sched;
    }
    throw ConfigError("unknown distillation schedule '" + text + "'");
}

std::string distill_schedule_text(const DistillSchedule& schedule) {
    switch (schedule.kind) {
        case DistillKind::Always: return "always";
        case DistillKind::FirstFraction: return "first_fraction:" + format_double(schedule.fraction);
        case DistillKind::EveryK: return "every_k:" + std::to_string(schedule.every_k);
    }
    throw ContractError("unknown distillation schedule kind");
}

ExperimentPlan parse_plan(const KvFile& file) {
    if (file.globals.get_int("schema") != 1) throw ConfigError("unsupported plan schema");
    ExperimentPlan plan;
    plan.name = file.globals.get_string("name");
    if (!path_safe(plan.name)) throw ConfigError("plan name must be path safe");
    plan.default_out = file.globals.get_string("out", "runs");

    const KvSection* ds = file.section("dataset");
    if (!ds) throw ConfigError("plan needs a [dataset] section");
    plan.dataset.num_classes = static_cast<int>(ds->get_int("classes"));
    plan.dataset.dim = static_cast<int>(ds->get_int("dim"));
    plan.dataset.covariance_scale = ds->get_double("covariance_scale", 1.0);
    plan.dataset.label_noise = ds->get_double("label_noise", 0.0);
    plan.dataset.seed = ds->get_u64("seed");
    plan.n_train = static_cast<int>(ds->get_int("n_train"));
    plan.n_val = static_cast<int>(ds->get_int("n_val"));
    plan.bayes_mc = ds->get_int("bayes_mc", 100000);
    const std::string means_mode = ds->get_string("means", "random");
    if (means_mode == "random") {
        plan.dataset = random_means_spec(plan.dataset.num_classes, plan.dataset.dim,
                                         ds->get_double("mean_radius"), plan.dataset.covariance_scale,
                                         plan.dataset.label_noise, plan.dataset.seed);
    } else if (means_mode == "explicit") {
        plan.dataset.means.clear();
        for (int c = 0; c < plan.dataset.num_classes; ++c)
            plan.dataset.means.push_back(ds->get_double_list("mean" + std::to_string(c)));
    } else {
        throw ConfigError("[dataset] means must be 'random' or 'explicit'", ds->line);
    }

    const KvSection* model = file.section("model");
    if (!model) throw ConfigError("plan needs a [model] section");
    plan.model.input_dim = plan.dataset.dim;
    plan.model.hidden_widths = model->get_int_list("hidden");
    plan.model.num_classes = plan.dataset.num_classes;

    const KvSection* opt = file.section("optimizer");
    if (!opt) throw ConfigError("plan needs an [optimizer] section");
    const std::string opt_kind = opt->get_string("kind");
    if (opt_kind == "sgdw")
        plan.optimizer.kind = OptimizerKind::SGDW;
    else if (opt_kind == "adamw")
        plan.optimizer.kind = OptimizerKind::AdamW;
    else
        throw ConfigError("[optimizer] kind must be 'sgdw' or 'adamw'", opt->line);
    plan.optimizer.momentum = opt->get_double("momentum", 0.875);
    plan.optimizer.beta1 = opt->get_double("beta1", 0.9);
    plan.optimizer.beta2 = opt->get_double("beta2", 0.999);
    plan.optimizer.epsilon = opt->get_double("epsilon", 1e-8);
    plan.optimizer.weight_decay = opt->get_double("weight_decay", 0.0);

    const KvSection* sched = file.section("schedule");
    if (!sched) throw ConfigError("plan needs a [schedule] section");
    const std::string lr_kind = sched->get_string("kind");
    if (lr_kind == "cosine")
        plan.lr.kind = LrKind::CosineAnnealing;
    else if (lr_kind == "linear")
        plan.lr.kind = LrKind::LinearDecay;
    else
        throw ConfigError("[schedule] kind must be 'cosine' or 'linear'", sched->line);
    plan.lr.base_lr = sched->get_double("base_lr");
    plan.lr.min_lr = sched->get_double("min_lr", 0.0);
    plan.lr.warmup_fraction = sched->get_double("warmup_fraction", 0.0);

    const KvSection* train = file.section("train");
    if (!train) throw ConfigError("plan needs a [train] section");
    plan.total_steps = train->get_int("total_steps");
    plan.batch_size = static_cast<int>(train->get_int("batch_size"));
    plan.eval_every = train->get_int("eval_every");
    plan.teacher_cost_tau = train->get_double("teacher_cost_tau", 0.5);
    plan.seeds = static_cast<int>(train->get_int("seeds", 1));
    plan.base_seed = train->get_u64("base_seed");

    for (const auto* sec : file.sections_named("teacher")) {
        TeacherGridPoint point;
        point.id = sec->get_string("id");
        if (!path_safe(point.id)) throw ConfigError("teacher id must be path safe", sec->line);
        point.lr = sec->get_double("lr");
        point.weight_decay = sec->get_double("weight_decay", plan.optimizer.weight_decay);
        point.mixup_alpha = sec->get_double("mixup_alpha", 0.0);
        plan.teacher_grid.push_back(std::move(point));
    }

    for (const auto* sec : file.sections_named("variant")) {
        VariantSpec variant;
        variant.name = sec->get_string("name");
        if (!path_safe(variant.name)) throw ConfigError("variant name must be path safe", sec->line);
        if (sec->has("durations")) variant.durations = sec->get_double_list("durations");
        if (sec->has("strategy")) {
            DistillConfig d;
            d.strategy = parse_strategy(sec->get_string("strategy"));
            const std::string loss = sec->get_string("loss", "kl");
            if (loss == "kl")
                d.loss = DistillLoss::KL;
            else if (loss == "mse")
                d.loss = DistillLoss::MSE;
            else
                throw ConfigError("[variant] loss must be 'kl' or 'mse'", sec->line);
            d.lambda_kd = sec->get_double("lambda");
            d.temperature = sec->get_double("temperature", 1.0);
            d.schedule = parse_distill_schedule(sec->get_string("distill", "always"));
            variant.distill = std::move(d);
        } else if (sec->has("lambda") || sec->has("loss") || sec->has("distill")) {
            throw ConfigError("[variant] " + variant.name + " sets distillation keys without a strategy",
                              sec->line);
        }
        plan.variants.push_back(std::move(variant));
    }

    const bool has_baseline = std::any_of(plan.variants.begin(), plan.variants.end(),
                                          [](const VariantSpec& v) { return v.name == "baseline"; });
    if (!has_baseline) plan.variants.insert(plan.variants.begin(), VariantSpec{"baseline", {}, {1.0}});

    plan.validate();
    return plan;
}

ExperimentPlan load_plan(const std::string& path) { return parse_plan(KvFile::parse_file(path)); }

void ExperimentPlan::validate() const {
    dataset.validate();
    if (n_train < 1 || n_val < 1) throw ConfigError("split sizes must be >= 1");
    model.validate();
    optimizer.validate();
    if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
    if (seeds < 1) throw ConfigError("seeds must be >= 1");
    if (bayes_mc != 0 && bayes_mc < 10000) throw ConfigError("bayes_mc must be 0 or >= 10000");

    std::set<std::string> teacher_ids;
    for (const auto& t : teacher_grid) {
        if (!teacher_ids.insert(t.id).second) throw ConfigError("duplicate teacher id: " + t.id);
        if (!(t.lr > 0.0)) throw ConfigError("teacher lr must be > 0: " + t.id);
        if (t.weight_decay < 0.0) throw ConfigError("teacher weight_decay must be >= 0: " + t.id);
        if (t.mixup_alpha < 0.0) throw ConfigError("teacher mixup_alpha must be >= 0: " + t.id);
    }

    if (variants.empty()) throw ConfigError("plan needs at least one variant");
    std::set<std::string> names;
    for (const auto& v : variants) {
        if (!names.insert(v.name).second) throw ConfigError("duplicate variant name: " + v.name);
        if (v.durations.empty()) throw ConfigError("variant needs at least one duration: " + v.name);
        std::set<std::string> seen;
        for (double d : v.durations) {
            if (!(d > 0.0)) throw ConfigError("durations must be > 0: " + v.name);
            if (!seen.insert(format_double(d)).second)
                throw ConfigError("duplicate duration in variant: " + v.name);
        }
        if (v.name == "baseline") {
            if (v.distill) throw ConfigError("the baseline variant must not distill");
            if (std::none_of(v.durations.begin(), v.durations.end(),
                             [](double d) { return d == 1.0; }))
                throw ConfigError("the baseline variant must include duration 1");
        }
    }

    // Every (variant, duration) cell must resolve to a trainable config.
    for (const auto& v : variants)
        for (double d : v.durations) {
            try {
                resolve_run(*this, v, d, 0);
            } catch (const std::invalid_argument& e) {
                throw ConfigError("variant " + v.name + " at duration " + format_double(d) + ": " +
                                  e.what());
            }
        }
}

KvFile serialize_plan(const ExperimentPlan& plan) {
    KvFile file;
    file.globals.set_int("schema", 1);
    file.globals.set("name", plan.name);
    file.globals.set("out", plan.default_out);

    auto& ds = file.add_section("dataset");
    ds.set_int("classes", plan.dataset.num_classes);
    ds.set_int("dim", plan.dataset.dim);
    ds.set_double("covariance_scale", plan.dataset.covariance_scale);
    ds.set_double("label_noise", plan.dataset.label_noise);
    ds.set_u64("seed", plan.dataset.seed);
    ds.set_int("n_train", plan.n_train);
    ds.set_int("n_val", plan.n_val);
    ds.set_int("bayes_mc", plan.bayes_mc);
    ds.set("means", "explicit");
    for (int c = 0; c < plan.dataset.num_classes; ++c) {
        std::string row;
        for (double v : plan.dataset.means[static_cast<std::size_t>(c)]) {
            if (!row.empty()) row += ", ";
            row += format_double(v);
        }
        ds.set("mean" + std::to_string(c), row);
    }

    auto& model = file.add_section("model");
    std::string hidden;
    for (int w : plan.model.hidden_widths) {
        if (!hidden.empty()) hidden += ", ";
        hidden += std::to_string(w);
    }
    model.set("hidden", hidden);

    auto& opt = file.add_section("optimizer");
    opt.set("kind", plan.optimizer.kind == OptimizerKind::SGDW ? "sgdw" : "adamw");
    opt.set_double("momentum", plan.optimizer.momentum);
    opt.set_double("beta1", plan.optimizer.beta1);
    opt.set_double("beta2", plan.optimizer.beta2);
    opt.set_double("epsilon", plan.optimizer.epsilon);
    opt.set_double("weight_decay", plan.optimizer.weight_decay);

    auto& sched = file.add_section("schedule");
    sched.set("kind", plan.lr.kind == LrKind::CosineAnnealing ? "cosine" : "linear");
    sched.set_double("base_lr", plan.lr.base_lr);
    sched.set_double("min_lr", plan.lr.min_lr);
    sched.set_double("warmup_fraction", plan.lr.warmup_fraction);

    auto& train = file.add_section("train");
    train.set_int("total_steps", plan.total_steps);
    train.set_int("batch_size", plan.batch_size);
    train.set_int("eval_every", plan.eval_every);
    train.set_double("teacher_cost_tau", plan.teacher_cost_tau);
    train.set_int("seeds", plan.seeds);
    train.set_u64("base_seed", plan.base_seed);

    for (const auto& t : plan.teacher_grid) {
        auto& sec = file.add_section("teacher");
        sec.set("id", t.id);
        sec.set_double("lr", t.lr);
        sec.set_double("weight_decay", t.weight_decay);
        sec.set_double("mixup_alpha", t.mixup_alpha);
    }

    for (const auto& v : plan.variants) {
        auto& sec = file.add_section("variant");
        sec.set("name", v.name);
        std::string durations;
        for (double d : v.durations) {
            if (!durations.empty()) durations += ", ";
            durations += format_double(d);
        }
        sec.set("durations", durations);
        if (v.distill) {
            sec.set("strategy", strategy_text(v.distill->strategy));
            sec.set("loss", v.distill->loss == DistillLoss::KL ? "kl" : "mse");
            sec.set_double("lambda", v.distill->lambda_kd);
            sec.set_double("temperature", v.distill->temperature);
            sec.set("distill", distill_schedule_text(v.distill->schedule));
        }
    }
    return file;
}

std::string run_id(const std::string& variant, double duration, int seed_index) {
    return variant + "_d" + format_double(duration) + "_s" + std::to_string(seed_index);
}

std::uint64_t seed_for_index(const ExperimentPlan& plan, int seed_index) {
    return mix_seed(plan.base_seed, "seed/" + std::to_string(seed_index));
}

RunConfig resolve_run(const ExperimentPlan& plan, const VariantSpec& variant, double duration,
                      int seed_index) {
    RunConfig config;
    config.dataset = plan.dataset;
    config.n_train = plan.n_train;
    config.n_val = plan.n_val;
    config.model = plan.model;
    config.optimizer = plan.optimizer;
    config.lr = plan.lr;
    config.total_steps = std::llround(duration * static_cast<double>(plan.total_steps));
    config.lr.total_steps = config.total_steps;
    config.batch_size = plan.batch_size;
    config.eval_every = plan.eval_every;
    config.teacher_cost_tau = plan.teacher_cost_tau;
    config.run_seed = seed_for_index(plan, seed_index);
    config.model.init_seed = mix_seed(config.run_seed, kStreamInit);
    if (variant.distill) {
        config.distill = variant.distill;
        config.distill->schedule.total_steps = config.total_steps;
    }
    config.validate();
    return config;
}

std::string canonical_config(const RunConfig& config) {
    KvFile file;
    file.globals.set_int("schema", 1);

    auto& ds = file.add_section("dataset");
    ds.set_int("classes", config.dataset.num_classes);
    ds.set_int("dim", config.dataset.dim);
    ds.set_double("covariance_scale", config.dataset.covariance_scale);
    ds.set_double("label_noise", config.dataset.label_noise);
    ds.set_u64("seed", config.dataset.seed);
    for (int c = 0; c < config.dataset.num_classes; ++c) {
        std::string row;
        for (double v : config.dataset.means[static_cast<std::size_t>(c)]) {
            if (!row.empty()) row += ", ";
            row += format_double(v);
        }
        ds.set("mean" + std::to_string(c), row);
    }
    ds.set_int("n_train", config.n_train);
    ds.set_int("n_val", config.n_val);

    auto& model = file.add_section("model");
    model.set_int("input_dim", config.model.input_dim);
    std::string hidden;
    for (int w : config.model.hidden_widths) {
        if (!hidden.empty()) hidden += ", ";
        hidden += std::to_string(w);
    }
    model.set("hidden", hidden);
    model.set_int("classes", config.model.num_classes);
    model.set_u64("init_seed", config.model.init_seed);

    auto& opt = file.add_section("optimizer");
    opt.set("kind", config.optimizer.kind == OptimizerKind::SGDW ? "sgdw" : "adamw");
    opt.set_double("momentum", config.optimizer.momentum);
    opt.set_double("beta1", config.optimizer.beta1);
    opt.set_double("beta2", config.optimizer.beta2);
    opt.set_double("epsilon", config.optimizer.epsilon);
    opt.set_double("weight_decay", config.optimizer.weight_decay);

    auto& lr = file.add_section("lr");
    lr.set("kind", config.lr.kind == LrKind::CosineAnnealing ? "cosine" : "linear");
    lr.set_double("base_lr", config.lr.base_lr);
    lr.set_double("min_lr", config.lr.min_lr);
    lr.set_double("warmup_fraction", config.lr.warmup_fraction);
    lr.set_int("total_steps", config.lr.total_steps);

    auto& train = file.add_section("train");
    train.set_int("total_steps", config.total_steps);
    train.set_int("batch_size", config.batch_size);
    train.set_int("eval_every", config.eval_every);
    train.set_u64("run_seed", config.run_seed);
    train.set_double("teacher_cost_tau", config.teacher_cost_tau);
    train.set_double("mixup_alpha", config.mixup_alpha);

    if (config.distill) {
        auto& distill = file.add_section("distill");
        distill.set("strategy", strategy_text(config.distill->strategy));
        distill.set("loss", config.distill->loss == DistillLoss::KL ? "kl" : "mse");
        distill.set_double("lambda", config.distill->lambda_kd);
        distill.set_double("temperature", config.distill->temperature);
        distill.set("schedule", distill_schedule_text(config.distill->schedule));
    }
    return file.serialize();
}

std::string config_hash(const RunConfig& config) { return content_hash(canonical_config(config)); }

namespace {

void run_parallel(int jobs, int n, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    jobs = std::clamp(jobs, 1, n);
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(jobs));
    for (int j = 0; j < jobs; ++j)
        workers.emplace_back([&next, n, &fn] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (auto& w : workers) w.join();
}

RunConfig sweep_base(const ExperimentPlan& plan) {
    const VariantSpec plain{"baseline", {}, {1.0}};
    RunConfig base = resolve_run(plan, plain, 1.0, 0);
    base.run_seed = mix_seed(plan.base_seed, "sweep");
    return base;
}

struct RunRecord {
    std::string run_id;
    std::string variant;
    double duration = 1.0;
    int seed_index = 0;
    std::string config_hash;
    bool diverged = false;
    long long diverged_step = -1;
    long long steps = 0;
    double final_val_acc = 0.0;
    double final_cost_units = 0.0;
    long long teacher_forwards = 0;
};

void save_run_manifest(const std::string& path, const RunRecord& record) {
    KvFile file;
    file.globals.set_int("schema", 1);
    file.globals.set("run_id", record.run_id);
    file.globals.set("variant", record.variant);
    file.globals.set_double("duration", record.duration);
    file.globals.set_int("seed_index", record.seed_index);
    file.globals.set("config_hash", record.config_hash);
    file.globals.set_bool("diverged", record.diverged);
    if (record.diverged) file.globals.set_int("diverged_step", record.diverged_step);
    file.globals.set_int("steps", record.steps);
    file.globals.set_double("final_val_acc", record.final_val_acc);
    file.globals.set_double("final_cost_units", record.final_cost_units);
    file.globals.set_int("teacher_forwards", record.teacher_forwards);
    file.save(path);
}

RunRecord load_run_manifest(const std::string& path) {
    const KvFile file = KvFile::parse_file(path);
    if (file.globals.get_int("schema") != 1) throw ConfigError(path + ": unsupported manifest schema");
    RunRecord record;
    record.run_id = file.globals.get_string("run_id");
    record.variant = file.globals.get_string("variant");
    record.duration = file.globals.get_double("duration");
    record.seed_index = static_cast<int>(file.globals.get_int("seed_index"));
    record.config_hash = file.globals.get_string("config_hash");
    record.diverged = file.globals.get_bool("diverged");
    record.diverged_step = file.globals.get_int("diverged_step", -1);
    record.steps = file.globals.get_int("steps");
    record.final_val_acc = file.globals.get_double("final_val_acc");
    record.final_cost_units = file.globals.get_double("final_cost_units");
    record.teacher_forwards = file.globals.get_int("teacher_forwards");
    return record;
}

struct Cell {
    const VariantSpec* variant = nullptr;
    double duration = 1.0;
    int seed_index = 0;
    std::string id;
};

std::vector<Cell> expand_cells(const ExperimentPlan& plan, int seed_offset) {
    std::vector<Cell> cells;
    for (const auto& variant : plan.variants)
        for (double duration : variant.durations)
            for (int s = 0; s < plan.seeds; ++s) {
                Cell cell;
                cell.variant = &variant;
                cell.duration = duration;
                cell.seed_index = seed_offset + s;
                cell.id = run_id(variant.name, duration, cell.seed_index);
                cells.push_back(std::move(cell));
            }
    return cells;
}

}  // namespace

CommandOutcome cmd_sweep(const ExperimentPlan& plan, const CommandOptions& options) {
    if (plan.teacher_grid.empty()) throw ConfigError("plan has no [teacher] sections to sweep");
    const fs::path registry_dir = fs::path(options.out) / "registry";
    fs::create_directories(registry_dir);
    const std::string manifest_path = (registry_dir / "manifest.kv").string();

    Registry previous;
    if (fs::exists(manifest_path)) previous = load_registry(manifest_path);

    const RunConfig base = sweep_base(plan);
    const int n = static_cast<int>(plan.teacher_grid.size());

    CommandOutcome outcome;
    outcome.attempted = n;
    std::vector<RegistryEntry> entries(static_cast<std::size_t>(n));
    std::vector<std::string> errors(static_cast<std::size_t>(n));
    std::vector<int> status(static_cast<std::size_t>(n), 0);  // 0 ok, 1 skipped, 2 failed

    run_parallel(options.jobs, n, [&](int i) {
        const TeacherGridPoint& point = plan.teacher_grid[static_cast<std::size_t>(i)];
        try {
            const RunConfig config = teacher_run_config(base, point);
            const std::string hash = config_hash(config);
            const std::string ckpt_rel = point.id + ".ckpt";
            const fs::path ckpt_path = registry_dir / ckpt_rel;

            for (const auto& old : previous.entries)
                if (old.id == point.id && old.config_hash == hash && fs::exists(ckpt_path)) {
                    entries[static_cast<std::size_t>(i)] = old;
                    status[static_cast<std::size_t>(i)] = 1;
                    return;
                }

            TrainResult run = train_run(config, nullptr);
            run.params.frozen = true;
            save_checkpoint(ckpt_path.string(), run.params);

            RegistryEntry entry;
            entry.id = point.id;
            entry.checkpoint = ckpt_rel;
            entry.reported_accuracy = run.trace.final_row().val_accuracy;
            entry.lr = point.lr;
            entry.weight_decay = point.weight_decay;
            entry.mixup_alpha = point.mixup_alpha;
            entry.diverged = run.diverged;
            entry.config_hash = hash;
            entries[static_cast<std::size_t>(i)] = std::move(entry);
        } catch (const std::exception& e) {
            status[static_cast<std::size_t>(i)] = 2;
            errors[static_cast<std::size_t>(i)] = std::string("teacher ") + point.id + ": " + e.what();
        }
    });

    Registry registry;
    registry.pool_seed = mix_seed(base.run_seed, "pool");
    for (int i = 0; i < n; ++i) {
        switch (status[static_cast<std::size_t>(i)]) {
            case 0:
                outcome.succeeded += 1;
                registry.entries.push_back(entries[static_cast<std::size_t>(i)]);
                break;
            case 1:
                outcome.skipped += 1;
                registry.entries.push_back(entries[static_cast<std::size_t>(i)]);
                break;
            default:
                outcome.failed += 1;
                outcome.errors.push_back(errors[static_cast<std::size_t>(i)]);
                break;
        }
    }
    save_registry(manifest_path, registry);
    return outcome;
}

CommandOutcome cmd_distill(const ExperimentPlan& plan, const CommandOptions& options) {
    const fs::path out(options.out);
    const std::string manifest_path = (out / "registry" / "manifest.kv").string();
    const bool needs_pool = std::any_of(plan.variants.begin(), plan.variants.end(),
                                        [](const VariantSpec& v) { return v.distill.has_value(); });
    TeacherPool pool;
    if (needs_pool) {
        if (!fs::exists(manifest_path))
            throw ConfigError("no teacher registry at " + manifest_path + "; run sweep first");
        pool = load_pool(manifest_path);
    }

    const auto cells = expand_cells(plan, options.seed_offset);
    const int n = static_cast<int>(cells.size());
    CommandOutcome outcome;
    outcome.attempted = n;
    std::vector<int> status(static_cast<std::size_t>(n), 0);
    std::vector<std::string> errors(static_cast<std::size_t>(n));

    run_parallel(options.jobs, n, [&](int i) {
        const Cell& cell = cells[static_cast<std::size_t>(i)];
        try {
            const RunConfig config =
                resolve_run(plan, *cell.variant, cell.duration, cell.seed_index);
            const std::string hash = config_hash(config);
            const fs::path run_dir = out / "runs" / cell.id;
            const fs::path manifest = run_dir / "manifest.kv";
            const fs::path metrics = run_dir / "metrics.csv";

            if (fs::exists(manifest) && fs::exists(metrics)) {
                const RunRecord old = load_run_manifest(manifest.string());
                if (old.config_hash == hash) {
                    status[static_cast<std::size_t>(i)] = 1;
                    return;
                }
            }

            const TeacherPool* run_pool = config.distill ? &pool : nullptr;
            TrainResult run = train_run(config, run_pool);

            save_trace_csv(metrics.string(), run.trace);
            save_checkpoint((run_dir / "model.ckpt").string(), run.params);

            RunRecord record;
            record.run_id = cell.id;
            record.variant = cell.variant->name;
            record.duration = cell.duration;
            record.seed_index = cell.seed_index;
            record.config_hash = hash;
            record.diverged = run.diverged;
            record.diverged_step = run.diverged ? run.diverged_step : -1;
            record.steps = run.diverged ? run.diverged_step : config.total_steps;
            record.final_val_acc = run.trace.final_row().val_accuracy;
            record.final_cost_units = run.trace.final_row().cost_units;
            record.teacher_forwards = run.costs.teacher_forwards;
            save_run_manifest(manifest.string(), record);

            if (run.diverged) {
                status[static_cast<std::size_t>(i)] = 2;
                errors[static_cast<std::size_t>(i)] =
                    "run " + cell.id + ": diverged at step " + std::to_string(run.diverged_step) +
                    " (lr=" + format_double(run.diverged_lr) + ")";
            }
        } catch (const std::exception& e) {
            status[static_cast<std::size_t>(i)] = 2;
            errors[static_cast<std::size_t>(i)] = "run " + cell.id + ": " + e.what();
        }
    });

    for (int i = 0; i < n; ++i) {
        switch (status[static_cast<std::size_t>(i)]) {
            case 0: outcome.succeeded += 1; break;
            case 1: outcome.skipped += 1; break;
            default:
                outcome.failed += 1;
                outcome.errors.push_back(errors[static_cast<std::size_t>(i)]);
                break;
        }
    }
    return outcome;
}

namespace {

struct LoadedRun {
    RunRecord record;
    MetricTrace trace;
};

std::vector<LoadedRun> load_finished_runs(const ExperimentPlan& plan, const CommandOptions& options,
                                          CommandOutcome& outcome) {
    const fs::path out(options.out);
    std::vector<LoadedRun> runs;
    for (const auto& cell : expand_cells(plan, options.seed_offset)) {
        const fs::path run_dir = out / "runs" / cell.id;
        outcome.attempted += 1;
        try {
            LoadedRun loaded;
            loaded.record = load_run_manifest((run_dir / "manifest.kv").string());
            loaded.trace = load_trace_csv((run_dir / "metrics.csv").string());
            runs.push_back(std::move(loaded));
            outcome.succeeded += 1;
        } catch (const std::exception& e) {
            outcome.failed += 1;
            outcome.errors.push_back("run " + cell.id + ": " + e.what());
        }
    }
    if (runs.empty()) throw ConfigError("no finished runs under " + (out / "runs").string());
    return runs;
}

std::string axis_name(ResourceAxis axis) { return axis == ResourceAxis::Wall ? "wall" : "cost"; }

std::vector<ParetoPoint> final_points(const std::vector<LoadedRun>& runs, ResourceAxis axis) {
    std::vector<ParetoPoint> points;
    for (const auto& run : runs) {
        const auto& last = run.trace.rows.back();
        ParetoPoint p;
        p.resource = axis == ResourceAxis::Wall ? static_cast<double>(last.wall_ns) : last.cost_units;
        p.quality = last.val_accuracy;
        p.run_id = run.record.run_id;
        points.push_back(std::move(p));
    }
    return points;
}

}  // namespace

CommandOutcome cmd_report(const ExperimentPlan& plan, const CommandOptions& options) {
    const fs::path out(options.out);
    const fs::path reports = out / "reports";
    CommandOutcome outcome;
    const auto runs = load_finished_runs(plan, options, outcome);

    std::map<int, const LoadedRun*> baselines;
    for (const auto& run : runs)
        if (run.record.variant == "baseline" && run.record.duration == 1.0 && !run.record.diverged)
            baselines[run.record.seed_index] = &run;
    if (baselines.empty()) throw ConfigError("report needs finished baseline runs at duration 1");

    fs::create_directories(reports);

    // Every report covers both resource axes; options.axis only picks the
    // headline axis echoed in summary.kv.
    for (const ResourceAxis axis : {ResourceAxis::Wall, ResourceAxis::Cost}) {
        // Speedup of every non-baseline run against its seed's baseline.
        std::string csv = "run_id,variant,duration,seed,target_quality,baseline_resource,"
                          "candidate_resource,achieved,speedup\n";
        for (const auto& run : runs) {
            if (run.record.variant == "baseline") continue;
            const auto it = baselines.find(run.record.seed_index);
            if (it == baselines.end()) continue;
            const QualityCurve base_curve = curve_from_trace(it->second->trace, axis);
            const QualityCurve cand_curve = curve_from_trace(run.trace, axis);
            const SpeedupReport rep = speedup(base_curve, cand_curve);
            csv += run.record.run_id + ',' + run.record.variant + ',' +
                   format_double(run.record.duration) + ',' + std::to_string(run.record.seed_index) +
                   ',' + format_double(rep.target_quality) + ',' +
                   format_double(rep.baseline_resource) + ',' +
                   (rep.candidate_resource ? format_double(*rep.candidate_resource) : "na") + ',' +
                   (rep.achieved ? "1" : "0") + ',' +
                   (rep.speedup ? format_double(*rep.speedup) : "na") + '\n';
        }
        const fs::path path = reports / ("speedup_" + axis_name(axis) + ".csv");
        const fs::path tmp = path.string() + ".tmp";
        {
            std::ofstream os(tmp, std::ios::trunc);
            if (!os) throw ConfigError("cannot open for writing: " + tmp.string());
            os << csv;
        }
        fs::rename(tmp, path);

        save_pareto_csv((reports / ("pareto_" + axis_name(axis) + ".csv")).string(),
                        pareto_front(final_points(runs, axis)));
    }

    // Teacher/student pairs from by-id variants at duration 1.
    TeacherStudentTable table;
    const std::string registry_path = (out / "registry" / "manifest.kv").string();
    if (fs::exists(registry_path)) {
        const Registry registry = load_registry(registry_path);
        std::map<std::string, std::pair<double, int>> by_teacher;  // id -> (acc sum, count)
        for (const auto& run : runs) {
            if (run.record.duration != 1.0 || run.record.diverged) continue;
            const VariantSpec* variant = nullptr;
            for (const auto& v : plan.variants)
                if (v.name == run.record.variant) {
                    variant = &v;
                    break;
                }
            if (!variant || !variant->distill ||
                variant->distill->strategy.kind != StrategyKind::SingleById)
                continue;
            auto& acc = by_teacher[variant->distill->strategy.id];
            acc.first += run.record.final_val_acc;
            acc.second += 1;
        }
        std::vector<TeacherStudentRow> rows;
        for (const auto& [teacher_id, acc] : by_teacher) {
            const auto entry = std::find_if(registry.entries.begin(), registry.entries.end(),
                                            [&](const RegistryEntry& e) { return e.id == teacher_id; });
            if (entry == registry.entries.end()) continue;
            TeacherStudentRow row;
            row.teacher_id = teacher_id;
            row.teacher_accuracy = entry->reported_accuracy;
            row.student_accuracy = acc.first / acc.second;
            rows.push_back(std::move(row));
        }
        if (!rows.empty()) {
            table = teacher_student_table(std::move(rows));
            std::string csv = "teacher_id,teacher_acc,student_acc\n";
            for (const auto& row : table.rows)
                csv += row.teacher_id + ',' + format_double(row.teacher_accuracy) + ',' +
                       format_double(row.student_accuracy) + '\n';
            const fs::path path = reports / "teacher_student.csv";
            const fs::path tmp = path.string() + ".tmp";
            {
                std::ofstream os(tmp, std::ios::trunc);
                if (!os) throw ConfigError("cannot open for writing: " + tmp.string());
                os << csv;
            }
            fs::rename(tmp, path);
        }
    }

    // Plan-level summary.
    KvFile summary;
    summary.globals.set_int("schema", 1);
    summary.globals.set("plan", plan.name);
    summary.globals.set("plan_hash", content_hash(serialize_plan(plan).serialize()));
    summary.globals.set("axis", axis_name(options.axis));
    summary.globals.set_int("runs", static_cast<long long>(runs.size()));
    if (plan.bayes_mc >= 10000) {
        const BayesEstimate bayes = bayes_accuracy(plan.dataset, plan.bayes_mc);
        summary.globals.set_double("bayes_accuracy", bayes.accuracy);
        summary.globals.set_double("bayes_std_error", bayes.std_error);
    }
    summary.globals.set("spearman_rho",
                        table.spearman_rho ? format_double(*table.spearman_rho) : "na");

    std::map<std::string, std::vector<const LoadedRun*>> grouped;
    for (const auto& run : runs)
        grouped[run.record.variant + "_d" + format_double(run.record.duration)].push_back(&run);
    for (const auto& [key, group] : grouped) {
        auto& sec = summary.add_section("group");
        sec.set("key", key);
        sec.set("variant", group.front()->record.variant);
        sec.set_double("duration", group.front()->record.duration);
        sec.set_int("runs", static_cast<long long>(group.size()));
        int diverged = 0;
        double acc_sum = 0.0, cost_sum = 0.0;
        long long teacher_sum = 0;
        for (const auto* run : group) {
            diverged += run->record.diverged ? 1 : 0;
            acc_sum += run->record.final_val_acc;
            cost_sum += run->record.final_cost_units;
            teacher_sum += run->record.teacher_forwards;
        }
        const double inv = 1.0 / static_cast<double>(group.size());
        sec.set_int("diverged", diverged);
        sec.set_double("mean_final_acc", acc_sum * inv);
        sec.set_double("mean_cost_units", cost_sum * inv);
        sec.set_double("mean_teacher_forwards", static_cast<double>(teacher_sum) * inv);
    }
    summary.save((reports / "summary.kv").string());
    return outcome;
}

CommandOutcome cmd_pareto(const ExperimentPlan& plan, const CommandOptions& options) {
    const fs::path out(options.out);
    CommandOutcome outcome;
    const auto runs = load_finished_runs(plan, options, outcome);
    const fs::path reports = out / "reports";
    fs::create_directories(reports);
    save_pareto_csv((reports / ("pareto_" + axis_name(options.axis) + ".csv")).string(),
                    pareto_front(final_points(runs, options.axis)));
    return outcome;
}

}  // namespace kdbench
