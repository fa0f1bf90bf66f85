#include "abclab/report.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace abclab {

namespace {

struct Pivot {
    std::vector<int> lengths;
    // task -> model -> length -> accuracy
    std::map<std::string, std::map<std::string, std::map<int, double>>> cells;
};

Pivot build_pivot(const std::vector<EvalReport>& reports) {
    Pivot p;
    std::set<int> lengths;
    for (const auto& r : reports) {
        for (const auto& e : r.entries) {
            lengths.insert(e.length);
            p.cells[r.task][r.model_label][e.length] = e.accuracy;
        }
    }
    p.lengths.assign(lengths.begin(), lengths.end());
    return p;
}

}  // namespace

std::string render_results_table(const std::vector<EvalReport>& reports) {
    const Pivot p = build_pivot(reports);
    std::ostringstream out;
    out << std::left << std::setw(12) << "task" << std::setw(12) << "model";
    for (int L : p.lengths) out << std::right << std::setw(9) << L;
    out << '\n';
    out << std::string(24 + 9 * p.lengths.size(), '-') << '\n';
    for (const auto& [task, models] : p.cells) {
        for (const auto& [model, row] : models) {
            out << std::left << std::setw(12) << task << std::setw(12) << model;
            for (int L : p.lengths) {
                auto it = row.find(L);
                if (it == row.end()) {
                    out << std::right << std::setw(9) << '-';
                } else {
                    std::ostringstream cell;
                    cell << std::fixed << std::setprecision(1) << 100.0 * it->second;
                    out << std::right << std::setw(9) << cell.str();
                }
            }
            out << '\n';
        }
    }
    return out.str();
}

std::string render_results_csv(const std::vector<EvalReport>& reports) {
    const Pivot p = build_pivot(reports);
    std::ostringstream out;
    out << "task,model";
    for (int L : p.lengths) out << ",len" << L;
    out << '\n';
    for (const auto& [task, models] : p.cells) {
        for (const auto& [model, row] : models) {
            out << task << ',' << model;
            for (int L : p.lengths) {
                auto it = row.find(L);
                out << ',';
                if (it != row.end()) out << std::setprecision(10) << it->second;
            }
            out << '\n';
        }
    }
    return out.str();
}

}  // namespace abclab
