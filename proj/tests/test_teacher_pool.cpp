#include <algorithm>
#include <filesystem>
#include <set>
#include <thread>
#include <vector>

#include "doctest.h"
#include "kdbench/errors.hpp"
#include "kdbench/models.hpp"
#include "kdbench/teacher_pool.hpp"

using namespace kdbench;
namespace fs = std::filesystem;

namespace {

MlpSpec arch(std::uint64_t seed) {
    MlpSpec spec;
    spec.input_dim = 3;
    spec.hidden_widths = {4};
    spec.num_classes = 2;
    spec.init_seed = seed;
    return spec;
}

TeacherEntry teacher(const std::string& id, double acc, std::uint64_t seed) {
    TeacherEntry t;
    t.id = id;
    t.params = init(arch(seed));
    t.params.frozen = true;
    t.reported_accuracy = acc;
    return t;
}

TeacherPool pool4() {
    TeacherPool pool;
    pool.rng_seed = 77;
    pool.teachers = {teacher("a", 0.90, 1), teacher("b", 0.95, 2), teacher("c", 0.90, 3),
                     teacher("d", 0.80, 4)};
    pool.validate();
    return pool;
}

}  // namespace

TEST_CASE("pool validation") {
    TeacherPool pool = pool4();
    CHECK_NOTHROW(pool.validate());
    CHECK(pool.size() == 4);

    TeacherPool empty;
    CHECK_THROWS_AS(empty.validate(), DomainError);

    TeacherPool dup = pool4();
    dup.teachers[1].id = "a";
    CHECK_THROWS_AS(dup.validate(), DomainError);

    TeacherPool thawed = pool4();
    thawed.teachers[2].params.frozen = false;
    CHECK_THROWS_AS(thawed.validate(), DomainError);

    TeacherPool mixed = pool4();
    mixed.teachers[3].params.spec.hidden_widths = {9};
    CHECK_THROWS_AS(mixed.validate(), DomainError);
}

TEST_CASE("find locates teachers by id") {
    const TeacherPool pool = pool4();
    CHECK(pool.find("c").reported_accuracy == 0.90);
    CHECK_THROWS_AS(pool.find("zz"), LookupError);
}

TEST_CASE("greedy members rank by accuracy with id tiebreak") {
    const TeacherPool pool = pool4();
    CHECK(greedy_members(pool, 1) == std::vector<std::string>{"b"});
    CHECK(greedy_members(pool, 2) == std::vector<std::string>{"b", "a"});
    CHECK(greedy_members(pool, 3) == std::vector<std::string>{"b", "a", "c"});
    CHECK(greedy_members(pool, 4) == std::vector<std::string>{"b", "a", "c", "d"});
    CHECK_THROWS_AS(greedy_members(pool, 0), DomainError);
    CHECK_THROWS_AS(greedy_members(pool, 5), DomainError);
}

TEST_CASE("strategy factories and validation") {
    const TeacherPool pool = pool4();
    CHECK_NOTHROW(TeacherStrategy::single_best().validate(pool));
    CHECK_NOTHROW(TeacherStrategy::single_by_id("c").validate(pool));
    CHECK_NOTHROW(TeacherStrategy::greedy_ensemble(4).validate(pool));
    CHECK_NOTHROW(TeacherStrategy::random_subset(2).validate(pool));
    CHECK_NOTHROW(TeacherStrategy::random_single().validate(pool));

    CHECK_THROWS_AS(TeacherStrategy::single_by_id("").validate(pool), DomainError);
    CHECK_THROWS_AS(TeacherStrategy::single_by_id("nope").validate(pool), LookupError);
    CHECK_THROWS_AS(TeacherStrategy::greedy_ensemble(0).validate(pool), DomainError);
    CHECK_THROWS_AS(TeacherStrategy::greedy_ensemble(5).validate(pool), DomainError);
    CHECK_THROWS_AS(TeacherStrategy::random_subset(5).validate(pool), DomainError);
}

TEST_CASE("fixed strategies ignore the step") {
    const TeacherPool pool = pool4();
    CHECK(select(TeacherStrategy::single_best(), pool, 0) == std::vector<std::string>{"b"});
    CHECK(select(TeacherStrategy::single_best(), pool, 999) == std::vector<std::string>{"b"});
    CHECK(select(TeacherStrategy::single_by_id("d"), pool, 5) == std::vector<std::string>{"d"});
    CHECK(select(TeacherStrategy::greedy_ensemble(2), pool, 0) ==
          std::vector<std::string>{"b", "a"});
    CHECK(select(TeacherStrategy::greedy_ensemble(2), pool, 123) ==
          std::vector<std::string>{"b", "a"});
}

TEST_CASE("random strategies are pure functions of (seed, step)") {
    const TeacherPool pool = pool4();
    const TeacherStrategy rsub = TeacherStrategy::random_subset(2);
    const TeacherStrategy rone = TeacherStrategy::random_single();

    bool any_step_diff = false;
    for (long long step = 0; step < 50; ++step) {
        const auto s1 = select(rsub, pool, step, 42);
        const auto s2 = select(rsub, pool, step, 42);
        CHECK(s1 == s2);
        REQUIRE(s1.size() == 2u);
        CHECK(std::set<std::string>(s1.begin(), s1.end()).size() == 2u);
        if (s1 != select(rsub, pool, 0, 42)) any_step_diff = true;

        const auto o1 = select(rone, pool, step, 42);
        CHECK(o1 == select(rone, pool, step, 42));
        CHECK(o1.size() == 1u);
    }
    CHECK(any_step_diff);

    // Different seeds decouple the streams.
    bool any_seed_diff = false;
    for (long long step = 0; step < 20; ++step)
        if (select(rone, pool, step, 1) != select(rone, pool, step, 2)) any_seed_diff = true;
    CHECK(any_seed_diff);

    // The pool-seed overload is just select(..., pool.rng_seed).
    for (long long step = 0; step < 20; ++step)
        CHECK(select(rone, pool, step) == select(rone, pool, step, pool.rng_seed));
}

TEST_CASE("per-step cost charges the ensemble width") {
    CHECK(per_step_cost(TeacherStrategy::single_best(), 5) == 1);
    CHECK(per_step_cost(TeacherStrategy::single_by_id("a"), 5) == 1);
    CHECK(per_step_cost(TeacherStrategy::greedy_ensemble(4), 5) == 4);
    CHECK(per_step_cost(TeacherStrategy::random_subset(3), 5) == 3);
    CHECK(per_step_cost(TeacherStrategy::random_single(), 5) == 1);
    CHECK_THROWS_AS(per_step_cost(TeacherStrategy::greedy_ensemble(6), 5), DomainError);
}

TEST_CASE("ensemble logits average member outputs in id order") {
    const TeacherPool pool = pool4();
    const Tensor x = Tensor::matrix({{0.2, -0.4, 0.9}, {1.0, 0.0, -1.0}});
    CostMeter meter;

    const Tensor one = ensemble_logits(pool, {"c"}, x, meter);
    CHECK(one.data == forward_eval(pool.find("c").params, x).data);

    const Tensor ab = ensemble_logits(pool, {"a", "b"}, x, meter);
    const Tensor ba = ensemble_logits(pool, {"b", "a"}, x, meter);
    CHECK(ab.data == ba.data);  // reduction order is fixed by id, not arrival

    const Tensor ta = forward_eval(pool.find("a").params, x);
    const Tensor tb = forward_eval(pool.find("b").params, x);
    for (std::size_t i = 0; i < ab.data.size(); ++i)
        CHECK(ab.data[i] == doctest::Approx((ta.data[i] + tb.data[i]) / 2.0).epsilon(1e-15));

    CHECK(meter.counts().teacher_forwards == 1 + 2 + 2);
    CHECK_THROWS_AS(ensemble_logits(pool, {}, x, meter), DomainError);
    CHECK_THROWS_AS(ensemble_logits(pool, {"zz"}, x, meter), LookupError);
}

TEST_CASE("cost meter accumulates across threads") {
    CostMeter meter;
    std::vector<std::thread> workers;
    for (int t = 0; t < 4; ++t)
        workers.emplace_back([&meter] {
            for (int i = 0; i < 10000; ++i) {
                meter.add_teacher_forwards(2);
                meter.add_student_forward();
                meter.add_student_backward();
                meter.add_wall_ns(3);
            }
        });
    for (auto& w : workers) w.join();
    const CostCounts counts = meter.counts();
    CHECK(counts.teacher_forwards == 80000);
    CHECK(counts.student_forwards == 40000);
    CHECK(counts.student_backwards == 40000);
    CHECK(counts.wall_clock_ns == 120000);
}

TEST_CASE("registry round-trips and loads into a pool") {
    const fs::path dir = fs::temp_directory_path() / "kdbench_registry_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    const TeacherPool pool = pool4();
    Registry registry;
    registry.pool_seed = 555;
    for (const auto& t : pool.teachers) {
        RegistryEntry e;
        e.id = t.id;
        e.checkpoint = t.id + ".ckpt";
        e.reported_accuracy = t.reported_accuracy;
        e.lr = 0.1;
        e.weight_decay = 1e-4;
        e.mixup_alpha = 0.0;
        e.diverged = t.id == "d";
        e.config_hash = "00000000000000aa";
        registry.entries.push_back(e);
        save_checkpoint((dir / e.checkpoint).string(), t.params);
    }
    const std::string manifest = (dir / "manifest.kv").string();
    save_registry(manifest, registry);

    const Registry back = load_registry(manifest);
    CHECK(back.pool_seed == 555u);
    REQUIRE(back.entries.size() == 4u);
    CHECK(back.entries[0].id == "a");
    CHECK(back.entries[0].reported_accuracy == 0.90);
    CHECK(back.entries[0].lr == 0.1);
    CHECK(back.entries[0].weight_decay == 1e-4);
    CHECK_FALSE(back.entries[0].diverged);
    CHECK(back.entries[3].diverged);
    CHECK(back.entries[3].config_hash == "00000000000000aa");

    // Diverged entries are skipped by default, included on request.
    const TeacherPool loaded = load_pool(manifest);
    CHECK(loaded.size() == 3);
    CHECK(loaded.rng_seed == 555u);
    CHECK_THROWS_AS(loaded.find("d"), LookupError);
    CHECK(loaded.find("a").params.frozen);
    CHECK(loaded.find("a").params.weights[0].data == pool.find("a").params.weights[0].data);

    const TeacherPool full = load_pool(manifest, true);
    CHECK(full.size() == 4);
    CHECK(full.find("d").params.frozen);

    CHECK_THROWS_AS(load_registry((dir / "missing.kv").string()), ConfigError);
    fs::remove_all(dir);
}
