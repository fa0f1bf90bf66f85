#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "abclab/calibration.hpp"
#include "abclab/model.hpp"

namespace abclab {

// CSV with one row per attention query; -inf entries use the literal token
// "-inf". Round-trips exactly (floats are printed with max_digits10).
void write_matrix_csv(const Eigen::MatrixXf& m, const std::string& path);
Eigen::MatrixXf read_matrix_csv(const std::string& path);

// Grayscale PGM scaled to [min, max] of the finite entries; -inf renders
// black, and a degenerate range (e.g. the all-zero transparent bias) renders
// uniformly black.
void write_pgm(const Eigen::MatrixXf& m, const std::string& path);

// BiasSet directory layout:
//   meta                    dims, head count, sites, directions, threshold stats
//   self_h<k>.csv
//   cross_h<k>.csv
void save_bias_set(const BiasSet& bias, const std::vector<LineStatRecord>& stats,
                   const std::string& dir);
BiasSet load_bias_set(const std::string& dir);

// Per-head PGM + CSV pairs, named <prefix>_h<k>.{pgm,csv}.
void export_heatmaps(const std::vector<Eigen::MatrixXf>& heads, const std::string& dir,
                     const std::string& prefix);
void export_heatmaps(const BiasSet& bias, const std::string& dir);
void export_heatmaps(const AttentionTensor& attn, const std::string& dir,
                     const std::string& prefix);

}  // namespace abclab
