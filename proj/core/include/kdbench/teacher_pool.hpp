#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "kdbench/models.hpp"
#include "kdbench/tensor.hpp"

namespace kdbench {

struct TeacherEntry {
    std::string id;
    ModelParams params;  // must be frozen
    double reported_accuracy = 0.0;
};

struct TeacherPool {
    std::vector<TeacherEntry> teachers;
    std::uint64_t rng_seed = 0;

    // Throws DomainError on an empty pool, duplicate ids, an unfrozen teacher,
    // or mixed architectures.
    void validate() const;
    const TeacherEntry& find(const std::string& id) const;  // LookupError if absent
    int size() const { return static_cast<int>(teachers.size()); }
};

enum class StrategyKind { SingleBest, SingleById, GreedyEnsemble, RandomSubset, RandomSingle };

struct TeacherStrategy {
    StrategyKind kind = StrategyKind::SingleBest;
    int k = 1;       // ensemble / subset size
    std::string id;  // SingleById target

    static TeacherStrategy single_best();
    static TeacherStrategy single_by_id(std::string id);
    static TeacherStrategy greedy_ensemble(int k);
    static TeacherStrategy random_subset(int k);
    static TeacherStrategy random_single();

    // Throws DomainError when k is out of [1, pool size] or the id is empty
    // where one is required.
    void validate(const TeacherPool& pool) const;
    std::string describe() const;
};

// Top-k teacher ids by reported accuracy, descending, ties broken by id
// ascending. The ranking is over reported accuracy only; it never runs the
// teachers.
std::vector<std::string> greedy_members(const TeacherPool& pool, int k);

// Teacher ids used at one step. Random strategies reseed from (seed, step),
// so the choice is a pure function of those two values and replay needs no
// state. Fixed strategies ignore both.
std::vector<std::string> select(const TeacherStrategy& strategy, const TeacherPool& pool,
                                long long step, std::uint64_t seed);
std::vector<std::string> select(const TeacherStrategy& strategy, const TeacherPool& pool,
                                long long step);

// Teacher forwards charged per distillation-active step.
long long per_step_cost(const TeacherStrategy& strategy, int pool_size);

struct CostCounts {
    long long teacher_forwards = 0;
    long long student_forwards = 0;
    long long student_backwards = 0;
    long long wall_clock_ns = 0;
};

class CostMeter {
  public:
    void add_teacher_forwards(long long n) { teacher_forwards_.fetch_add(n, std::memory_order_relaxed); }
    void add_student_forward() { student_forwards_.fetch_add(1, std::memory_order_relaxed); }
    void add_student_backward() { student_backwards_.fetch_add(1, std::memory_order_relaxed); }
    void add_wall_ns(long long ns) { wall_clock_ns_.fetch_add(ns, std::memory_order_relaxed); }
    CostCounts counts() const;

  private:
    std::atomic<long long> teacher_forwards_{0};
    std::atomic<long long> student_forwards_{0};
    std::atomic<long long> student_backwards_{0};
    std::atomic<long long> wall_clock_ns_{0};
};

// Mean of the selected teachers' raw logits on the batch. Members are reduced
// in ascending id order regardless of the order ids arrive in, so the result
// is bitwise reproducible. Charges |ids| teacher forwards to the meter.
Tensor ensemble_logits(const TeacherPool& pool, const std::vector<std::string>& ids,
                       const Tensor& x, CostMeter& meter);

// Registry manifest: one [teacher] section per entry with id, checkpoint
// path, reported accuracy, and training provenance.
struct RegistryEntry {
    std::string id;
    std::string checkpoint;  // path relative to the manifest
    double reported_accuracy = 0.0;
    double lr = 0.0;
    double weight_decay = 0.0;
    double mixup_alpha = 0.0;
    bool diverged = false;
    std::string config_hash;
};

struct Registry {
    std::uint64_t pool_seed = 0;
    std::vector<RegistryEntry> entries;
};

void save_registry(const std::string& path, const Registry& registry);
Registry load_registry(const std::string& path);

// Loads registry checkpoints into a frozen pool. Diverged entries (their
// checkpoints hold the last finite snapshot) are skipped unless asked for.
TeacherPool load_pool(const std::string& manifest_path, bool include_diverged = false);

}  // namespace kdbench
