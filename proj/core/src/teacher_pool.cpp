#include "kdbench/teacher_pool.hpp"

#include <algorithm>
#include <filesystem>
#include <set>

#include "kdbench/errors.hpp"
#include "kdbench/kvfile.hpp"
#include "kdbench/rng.hpp"

namespace kdbench {

void TeacherPool::validate() const {
    if (teachers.empty()) throw DomainError("teacher pool must not be empty");
    std::set<std::string> ids;
    for (const auto& t : teachers) {
        if (t.id.empty()) throw DomainError("teacher id must not be empty");
        if (!ids.insert(t.id).second) throw DomainError("duplicate teacher id: " + t.id);
        if (!t.params.frozen) throw DomainError("teacher '" + t.id + "' is not frozen");
        if (!t.params.spec.same_architecture(teachers.front().params.spec))
            throw DomainError("teacher '" + t.id + "' has a different architecture");
    }
}

const TeacherEntry& TeacherPool::find(const std::string& id) const {
    for (const auto& t : teachers)
        if (t.id == id) return t;
    throw LookupError("unknown teacher id: " + id);
}

TeacherStrategy TeacherStrategy::single_best() { return {StrategyKind::SingleBest, 1, ""}; }
TeacherStrategy TeacherStrategy::single_by_id(std::string id) {
    return {StrategyKind::SingleById, 1, std::move(id)};
}
TeacherStrategy TeacherStrategy::greedy_ensemble(int k) { return {StrategyKind::GreedyEnsemble, k, ""}; }
TeacherStrategy TeacherStrategy::random_subset(int k) { return {StrategyKind::RandomSubset, k, ""}; }
TeacherStrategy TeacherStrategy::random_single() { return {StrategyKind::RandomSingle, 1, ""}; }

void TeacherStrategy::validate(const TeacherPool& pool) const {
    switch (kind) {
        case StrategyKind::SingleBest:
        case StrategyKind::RandomSingle:
            return;
        case StrategyKind::SingleById:
            if (id.empty()) throw DomainError("single_by_id needs a teacher id");
            pool.find(id);
            return;
        case StrategyKind::GreedyEnsemble:
        case StrategyKind::RandomSubset:
            if (k < 1 || k > pool.size())
                throw DomainError("ensemble size must lie in [1, pool size]");
            return;
    }
    throw ContractError("unknown strategy kind");
}

std::string TeacherStrategy::describe() const {
    switch (kind) {
        case StrategyKind::SingleBest: return "single_best";
        case StrategyKind::SingleById: return "single_by_id:" + id;
        case StrategyKind::GreedyEnsemble: return "greedy_ensemble:" + std::to_string(k);
        case StrategyKind::RandomSubset: return "random_subset:" + std::to_string(k);
        case StrategyKind::RandomSingle: return "random_single";
    }
    throw ContractError("unknown strategy kind");
}

std::vector<std::string> greedy_members(const TeacherPool& pool, int k) {
    pool.validate();
    if (k < 1 || k > pool.size()) throw DomainError("k must lie in [1, pool size]");
    std::vector<const TeacherEntry*> ranked;
    ranked.reserve(pool.teachers.size());
    for (const auto& t : pool.teachers) ranked.push_back(&t);
    std::sort(ranked.begin(), ranked.end(), [](const TeacherEntry* a, const TeacherEntry* b) {
        if (a->reported_accuracy != b->reported_accuracy)
            return a->reported_accuracy > b->reported_accuracy;
        return a->id < b->id;
    });
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) out.push_back(ranked[static_cast<std::size_t>(i)]->id);
    return out;
}

std::vector<std::string> select(const TeacherStrategy& strategy, const TeacherPool& pool,
                                long long step, std::uint64_t seed) {
    strategy.validate(pool);
    if (step < 0) throw DomainError("step must be >= 0");
    switch (strategy.kind) {
        case StrategyKind::SingleBest:
            return greedy_members(pool, 1);
        case StrategyKind::SingleById:
            return {strategy.id};
        case StrategyKind::GreedyEnsemble:
            return greedy_members(pool, strategy.k);
        case StrategyKind::RandomSubset: {
            Rng rng(mix_seed(seed, static_cast<std::uint64_t>(step)));
            std::vector<std::string> out;
            for (int idx : rng.sample_without_replacement(pool.size(), strategy.k))
                out.push_back(pool.teachers[static_cast<std::size_t>(idx)].id);
            return out;
        }
        case StrategyKind::RandomSingle: {
            Rng rng(mix_seed(seed, static_cast<std::uint64_t>(step)));
            return {pool.teachers[rng.below(pool.size())].id};
        }
    }
    throw ContractError("unknown strategy kind");
}

std::vector<std::string> select(const TeacherStrategy& strategy, const TeacherPool& pool,
                                long long step) {
    return select(strategy, pool, step, pool.rng_seed);
}

long long per_step_cost(const TeacherStrategy& strategy, int pool_size) {
    if (pool_size < 1) throw DomainError("pool_size must be >= 1");
    switch (strategy.kind) {
        case StrategyKind::SingleBest:
        case StrategyKind::SingleById:
        case StrategyKind::RandomSingle:
            return 1;
        case StrategyKind::GreedyEnsemble:
        case StrategyKind::RandomSubset:
            if (strategy.k < 1 || strategy.k > pool_size)
                throw DomainError("ensemble size must lie in [1, pool size]");
            return strategy.k;
    }
    throw ContractError("unknown strategy kind");
}

CostCounts CostMeter::counts() const {
    CostCounts c;
    c.teacher_forwards = teacher_forwards_.load(std::memory_order_relaxed);
    c.student_forwards = student_forwards_.load(std::memory_order_relaxed);
    c.student_backwards = student_backwards_.load(std::memory_order_relaxed);
    c.wall_clock_ns = wall_clock_ns_.load(std::memory_order_relaxed);
    return c;
}

Tensor ensemble_logits(const TeacherPool& pool, const std::vector<std::string>& ids,
                       const Tensor& x, CostMeter& meter) {
    if (ids.empty()) throw DomainError("ensemble needs at least one teacher");
    std::vector<std::string> ordered = ids;
    std::sort(ordered.begin(), ordered.end());
    Tensor sum;
    bool first = true;
    for (const auto& id : ordered) {
        const auto& teacher = pool.find(id);
        Tensor logits = forward_eval(teacher.params, x);
        if (first) {
            sum = std::move(logits);
            first = false;
        } else {
            if (!sum.same_shape(logits)) throw ShapeError("teacher logit shapes disagree");
            for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += logits.data[i];
        }
    }
    const double inv = 1.0 / static_cast<double>(ordered.size());
    for (auto& v : sum.data) v *= inv;
    meter.add_teacher_forwards(static_cast<long long>(ordered.size()));
    return sum;
}

void save_registry(const std::string& path, const Registry& registry) {
    KvFile file;
    file.globals.set_int("schema", 1);
    file.globals.set_u64("pool_seed", registry.pool_seed);
    for (const auto& e : registry.entries) {
        auto& sec = file.add_section("teacher");
        sec.set("id", e.id);
        sec.set("checkpoint", e.checkpoint);
        sec.set_double("reported_accuracy", e.reported_accuracy);
        sec.set_double("lr", e.lr);
        sec.set_double("weight_decay", e.weight_decay);
        sec.set_double("mixup_alpha", e.mixup_alpha);
        sec.set_bool("diverged", e.diverged);
        sec.set("config_hash", e.config_hash);
    }
    file.save(path);
}

Registry load_registry(const std::string& path) {
    const KvFile file = KvFile::parse_file(path);
    if (file.globals.get_int("schema") != 1) throw ConfigError(path + ": unsupported registry schema");
    Registry registry;
    registry.pool_seed = file.globals.get_u64("pool_seed");
    for (const auto* sec : file.sections_named("teacher")) {
        RegistryEntry e;
        e.id = sec->get_string("id");
        e.checkpoint = sec->get_string("checkpoint");
        e.reported_accuracy = sec->get_double("reported_accuracy");
        e.lr = sec->get_double("lr");
        e.weight_decay = sec->get_double("weight_decay");
        e.mixup_alpha = sec->get_double("mixup_alpha", 0.0);
        e.diverged = sec->get_bool("diverged", false);
        e.config_hash = sec->get_string("config_hash", "");
        registry.entries.push_back(std::move(e));
    }
    return registry;
}

TeacherPool load_pool(const std::string& manifest_path, bool include_diverged) {
    namespace fs = std::filesystem;
    const Registry registry = load_registry(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    TeacherPool pool;
    pool.rng_seed = registry.pool_seed;
    for (const auto& e : registry.entries) {
        if (e.diverged && !include_diverged) continue;
        TeacherEntry t;
        t.id = e.id;
        t.params = load_checkpoint((base / e.checkpoint).string());
        t.params.frozen = true;
        t.reported_accuracy = e.reported_accuracy;
        pool.teachers.push_back(std::move(t));
    }
    pool.validate();
    return pool;
}

}  // namespace kdbench
