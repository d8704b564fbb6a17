#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kdbench/trainer.hpp"

namespace kdbench {

enum class ResourceAxis { Wall, Cost };

struct QualityPoint {
    double resource = 0.0;
    double quality = 0.0;
};

// Quality as a function of cumulative resource. Resource must be strictly
// increasing; quality may move in either direction.
struct QualityCurve {
    std::vector<QualityPoint> points;

    void validate() const;
};

QualityCurve curve_from_trace(const MetricTrace& trace, ResourceAxis axis);

// Resource at the first recorded point whose quality reaches the target.
// No interpolation: the answer is conservative by up to one eval interval.
std::optional<double> time_to_quality(const QualityCurve& curve, double target);

struct SpeedupReport {
    double target_quality = 0.0;         // the baseline's final quality
    double baseline_resource = 0.0;      // first crossing; always exists
    bool achieved = false;               // candidate reached the target
    std::optional<double> candidate_resource;
    std::optional<double> speedup;       // baseline / candidate; absent, never NaN
};

// How much sooner the candidate reaches the baseline's final quality.
// A candidate that reaches it later still gets a (sub-1) speedup.
SpeedupReport speedup(const QualityCurve& baseline, const QualityCurve& candidate);

struct ParetoPoint {
    double resource = 0.0;  // lower is better
    double quality = 0.0;   // higher is better
    std::string run_id;
    bool dominated = false;
};

// Fills the dominated flags: a point is dominated when some other point has
// resource <= and quality >= with at least one strict. Duplicate coordinate
// pairs do not dominate each other. O(n log n).
std::vector<ParetoPoint> pareto_front(std::vector<ParetoPoint> points);

// Spearman rank correlation with average ranks over ties. Returns nullopt
// when either side is constant (the rank variance is zero) or sizes differ
// below 2.
std::optional<double> spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct TeacherStudentRow {
    std::string teacher_id;
    double teacher_accuracy = 0.0;
    double student_accuracy = 0.0;
};

struct TeacherStudentTable {
    std::vector<TeacherStudentRow> rows;
    std::optional<double> spearman_rho;
};

TeacherStudentTable teacher_student_table(std::vector<TeacherStudentRow> rows);

// pareto.csv: "resource,quality,run_id,dominated", rows sorted by resource
// ascending then quality descending then run_id; dominated is 0/1.
void save_pareto_csv(const std::string& path, const std::vector<ParetoPoint>& points);
std::vector<ParetoPoint> load_pareto_csv(const std::string& path);

}  // namespace kdbench
