#include "kdbench/efficiency.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "kdbench/errors.hpp"
#include "kdbench/kvfile.hpp"

namespace kdbench {

void QualityCurve::validate() const {
    if (points.empty()) throw DomainError("quality curve must have at least one point");
    for (std::size_t i = 1; i < points.size(); ++i)
        if (!(points[i].resource > points[i - 1].resource))
            throw DomainError("curve resource must be strictly increasing");
}

QualityCurve curve_from_trace(const MetricTrace& trace, ResourceAxis axis) {
    QualityCurve curve;
    curve.points.reserve(trace.rows.size());
    for (const auto& row : trace.rows) {
        QualityPoint p;
        p.resource = axis == ResourceAxis::Wall ? static_cast<double>(row.wall_ns) : row.cost_units;
        p.quality = row.val_accuracy;
        curve.points.push_back(p);
    }
    curve.validate();
    return curve;
}

std::optional<double> time_to_quality(const QualityCurve& curve, double target) {
    curve.validate();
    for (const auto& p : curve.points)
        if (p.quality >= target) return p.resource;
    return std::nullopt;
}

SpeedupReport speedup(const QualityCurve& baseline, const QualityCurve& candidate) {
    baseline.validate();
    candidate.validate();
    SpeedupReport report;
    report.target_quality = baseline.points.back().quality;
    report.baseline_resource = *time_to_quality(baseline, report.target_quality);
    report.candidate_resource = time_to_quality(candidate, report.target_quality);
    report.achieved = report.candidate_resource.has_value();
    if (report.achieved && *report.candidate_resource > 0.0)
        report.speedup = report.baseline_resource / *report.candidate_resource;
    return report;
}

std::vector<ParetoPoint> pareto_front(std::vector<ParetoPoint> points) {
    const std::size_t n = points.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&points](std::size_t a, std::size_t b) {
        if (points[a].resource != points[b].resource) return points[a].resource < points[b].resource;
        if (points[a].quality != points[b].quality) return points[a].quality > points[b].quality;
        return points[a].run_id < points[b].run_id;
    });

    double best_cheaper = -std::numeric_limits<double>::infinity();
    std::size_t i = 0;
    while (i < n) {
        // One group per distinct resource value; within it only strictly
        // higher quality dominates.
        std::size_t j = i;
        double group_best = -std::numeric_limits<double>::infinity();
        while (j < n && points[order[j]].resource == points[order[i]].resource) {
            group_best = std::max(group_best, points[order[j]].quality);
            ++j;
        }
        for (std::size_t k = i; k < j; ++k) {
            ParetoPoint& p = points[order[k]];
            p.dominated = best_cheaper >= p.quality || group_best > p.quality;
        }
        best_cheaper = std::max(best_cheaper, group_best);
        i = j;
    }
    return points;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&xs](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && xs[order[j]] == xs[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
        i = j;
    }
    return ranks;
}

}  // namespace

std::optional<double> spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw ShapeError("spearman inputs must have equal length");
    if (xs.size() < 2) return std::nullopt;
    const auto rx = average_ranks(xs);
    const auto ry = average_ranks(ys);
    const double n = static_cast<double>(xs.size());
    const double mean = (n + 1.0) / 2.0;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double a = rx[i] - mean;
        const double b = ry[i] - mean;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

TeacherStudentTable teacher_student_table(std::vector<TeacherStudentRow> rows) {
    TeacherStudentTable table;
    table.rows = std::move(rows);
    std::sort(table.rows.begin(), table.rows.end(),
              [](const TeacherStudentRow& a, const TeacherStudentRow& b) {
                  return a.teacher_id < b.teacher_id;
              });
    std::vector<double> tx, sy;
    for (const auto& r : table.rows) {
        tx.push_back(r.teacher_accuracy);
        sy.push_back(r.student_accuracy);
    }
    table.spearman_rho = spearman(tx, sy);
    return table;
}

void save_pareto_csv(const std::string& path, const std::vector<ParetoPoint>& points) {
    std::vector<ParetoPoint> sorted = points;
    std::sort(sorted.begin(), sorted.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
        if (a.resource != b.resource) return a.resource < b.resource;
        if (a.quality != b.quality) return a.quality > b.quality;
        return a.run_id < b.run_id;
    });
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw ConfigError("cannot open for writing: " + tmp.string());
        os << "resource,quality,run_id,dominated\n";
        for (const auto& p : sorted)
            os << format_double(p.resource) << ',' << format_double(p.quality) << ',' << p.run_id
               << ',' << (p.dominated ? 1 : 0) << '\n';
        if (!os) throw ConfigError("write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

std::vector<ParetoPoint> load_pareto_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) throw ConfigError(path + ": empty pareto file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "resource,quality,run_id,dominated")
        throw ConfigError(path + ": unexpected pareto header", 1);
    std::vector<ParetoPoint> points;
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 4) throw ConfigError(path + ": expected 4 columns", line_no);
        try {
            ParetoPoint p;
            p.resource = std::stod(cells[0]);
            p.quality = std::stod(cells[1]);
            p.run_id = cells[2];
            p.dominated = cells[3] == "1";
            points.push_back(std::move(p));
        } catch (const std::exception&) {
            throw ConfigError(path + ": unparseable pareto row", line_no);
        }
    }
    return points;
}

}  // namespace kdbench
