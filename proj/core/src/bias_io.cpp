#include "abclab/bias_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "abclab/errors.hpp"

namespace abclab {

namespace fs = std::filesystem;

namespace {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

void append_value(std::ostream& out, float v) {
    if (std::isinf(v)) {
        out << (v < 0 ? "-inf" : "inf");
    } else {
        out << std::setprecision(std::numeric_limits<float>::max_digits10) << v;
    }
}

float parse_value(const std::string& token) {
    if (token == "-inf") return kNegInf;
    if (token == "inf") return std::numeric_limits<float>::infinity();
    return std::stof(token);
}

}  // namespace

void write_matrix_csv(const Eigen::MatrixXf& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_matrix_csv: cannot open " + path);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            append_value(out, m(i, j));
        }
        out << '\n';
    }
    if (!out) throw IoError("write_matrix_csv: write failed for " + path);
}

Eigen::MatrixXf read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_matrix_csv: cannot open " + path);
    std::vector<std::vector<float>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<float> row;
        std::stringstream ss(line);
        std::string token;
        while (std::getline(ss, token, ',')) row.push_back(parse_value(token));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) return {};
    Eigen::MatrixXf m(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) {
            throw IoError("read_matrix_csv: ragged rows in " + path);
        }
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return m;
}

void write_pgm(const Eigen::MatrixXf& m, const std::string& path) {
    float lo = std::numeric_limits<float>::max();
    float hi = std::numeric_limits<float>::lowest();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (std::isfinite(m(i, j))) {
                lo = std::min(lo, m(i, j));
                hi = std::max(hi, m(i, j));
            }
        }
    }
    const bool degenerate = !(hi > lo);

    std::ofstream out(path);
    if (!out) throw IoError("write_pgm: cannot open " + path);
    out << "P2\n" << m.cols() << ' ' << m.rows() << "\n255\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            int level = 0;
            if (std::isfinite(m(i, j)) && !degenerate) {
                level = static_cast<int>(std::lround(255.0f * (m(i, j) - lo) / (hi - lo)));
            }
            out << level << (j + 1 == m.cols() ? '\n' : ' ');
        }
    }
    if (!out) throw IoError("write_pgm: write failed for " + path);
}

void save_bias_set(const BiasSet& bias, const std::vector<LineStatRecord>& stats,
                   const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream meta(fs::path(dir) / "meta");
    if (!meta) throw IoError("save_bias_set: cannot open meta in " + dir);
    const Eigen::Index M = bias.has_cross() ? bias.cross_heads[0].rows()
                                            : (bias.has_self() ? bias.self_heads[0].rows() : 0);
    const Eigen::Index N = bias.has_cross() ? bias.cross_heads[0].cols() : M;
    meta << "M=" << M << '\n' << "N=" << N << '\n';
    meta << "heads=" << std::max(bias.self_heads.size(), bias.cross_heads.size()) << '\n';
    meta << "sites=" << (bias.has_self() ? (bias.has_cross() ? "self,cross" : "self") : "cross")
         << '\n';
    meta << "stats=site,head,delta,mu,sigma,threshold,d_max,surviving\n";
    for (const auto& r : stats) {
        meta << "stat=" << r.site << ',' << r.head << ',' << r.delta << ',' << r.mu << ','
             << r.sigma << ',' << r.threshold << ',' << r.d_max << ',' << r.surviving << '\n';
    }

    for (std::size_t h = 0; h < bias.self_heads.size(); ++h) {
        write_matrix_csv(Eigen::MatrixXf(bias.self_heads[h]),
                         (fs::path(dir) / ("self_h" + std::to_string(h) + ".csv")).string());
    }
    for (std::size_t h = 0; h < bias.cross_heads.size(); ++h) {
        write_matrix_csv(Eigen::MatrixXf(bias.cross_heads[h]),
                         (fs::path(dir) / ("cross_h" + std::to_string(h) + ".csv")).string());
    }
}

BiasSet load_bias_set(const std::string& dir) {
    BiasSet bias;
    for (std::size_t h = 0;; ++h) {
        const fs::path p = fs::path(dir) / ("self_h" + std::to_string(h) + ".csv");
        if (!fs::exists(p)) break;
        bias.self_heads.emplace_back(read_matrix_csv(p.string()));
    }
    for (std::size_t h = 0;; ++h) {
        const fs::path p = fs::path(dir) / ("cross_h" + std::to_string(h) + ".csv");
        if (!fs::exists(p)) break;
        bias.cross_heads.emplace_back(read_matrix_csv(p.string()));
    }
    if (!bias.has_self() && !bias.has_cross()) {
        throw IoError("load_bias_set: no bias matrices found in " + dir);
    }
    return bias;
}

void export_heatmaps(const std::vector<Eigen::MatrixXf>& heads, const std::string& dir,
                     const std::string& prefix) {
    fs::create_directories(dir);
    for (std::size_t h = 0; h < heads.size(); ++h) {
        const std::string stem = prefix + "_h" + std::to_string(h);
        write_matrix_csv(heads[h], (fs::path(dir) / (stem + ".csv")).string());
        write_pgm(heads[h], (fs::path(dir) / (stem + ".pgm")).string());
    }
}

void export_heatmaps(const BiasSet& bias, const std::string& dir) {
    std::vector<Eigen::MatrixXf> self, cross;
    for (const auto& h : bias.self_heads) self.emplace_back(h);
    for (const auto& h : bias.cross_heads) cross.emplace_back(h);
    if (!self.empty()) export_heatmaps(self, dir, "self");
    if (!cross.empty()) export_heatmaps(cross, dir, "cross");
}

void export_heatmaps(const AttentionTensor& attn, const std::string& dir,
                     const std::string& prefix) {
    export_heatmaps(attn.heads, dir, prefix);
}

}  // namespace abclab
