#pragma once

// File formats: count matrices (Matrix Market coordinate or dense CSV, cells
// x genes), cell label tables, columnar binary posterior draws, simulation
// truth as JSON, and flat key=value run configurations.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "velokin/model.hpp"
#include "velokin/sampler.hpp"
#include "velokin/simulate.hpp"

namespace velokin::io {

namespace fs = std::filesystem;

/// Matrix Market "coordinate integer|real general". Real entries must be
/// integral. Throws DatasetError.
CountMatrix read_matrix_market(const fs::path& path);

/// Dense CSV of non-negative integers. A header row and a leading row-name
/// column are detected and skipped. Throws DatasetError.
CountMatrix read_dense_csv(const fs::path& path);

/// Dispatches on the Matrix Market banner.
CountMatrix read_counts(const fs::path& path);

void write_matrix_market(const fs::path& path, const CountMatrix& m);
void write_dense_csv(const fs::path& path, const CountMatrix& m);
void write_dense_csv(const fs::path& path, const Eigen::MatrixXd& m,
                     const std::vector<std::string>& header = {});

/// Cell labels. Group and subgroup tokens are arbitrary strings; indices are
/// assigned in sorted token order (numerically when every token is an integer).
struct Labels {
  std::vector<std::string> cell_ids;
  std::vector<int> group;
  std::vector<int> subgroup;  ///< equals group when the file has no subgroup column
  std::vector<std::string> group_names;
  std::vector<std::string> subgroup_names;
  bool has_subgroups = false;
};

/// Two- or three-column CSV: cell id, group[, subgroup]. A header row is
/// recognised when its first field is "cell" or "cell_id".
Labels read_labels(const fs::path& path);
void write_labels(const fs::path& path, const Labels& labels);

/// Labels with 1-based integer tokens from 0-based indices.
Labels make_labels(const std::vector<int>& group, const std::vector<int>& subgroup);

/// Validated dataset from count files and a label table.
Dataset ingest(const fs::path& spliced, const fs::path& unspliced, const fs::path& labels);
Dataset ingest(CountMatrix spliced, CountMatrix unspliced, const Labels& labels);

/// Columnar binary matrix: magic "VKCOL001", int64 rows, int64 cols, then
/// the values column by column (one parameter's draws are contiguous).
void write_columnar(const fs::path& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_columnar(const fs::path& path);

/// One columnar file per parameter family plus log_posterior and iteration,
/// and meta.json describing the dimensions, hyperparameters, labels,
/// acceptance and WAIC. Output is a pure function of the draws.
void write_posterior(const fs::path& dir, const PosteriorDraws& post, const Dataset& data);

struct StoredPosterior {
  std::vector<ModelState> draws;
  std::vector<double> log_posterior;
  std::vector<int> group_of_subgroup;
  std::vector<int> subgroup_of_cell;
  std::vector<int> group_of_cell;
  WaicResult waic;
};

StoredPosterior read_posterior(const fs::path& dir);

/// Writes the per-family draws as CSV (draws x parameters) next to the binaries.
void export_posterior_csv(const fs::path& dir, const StoredPosterior& post);

void write_truth(const fs::path& path, const SimulationTruth& truth);
/// The parts needed for evaluation: state and labels.
SimulationTruth read_truth(const fs::path& path);

void write_waic(const fs::path& path, const WaicResult& w);

/// Flat key=value text. '#' starts a comment; blank lines are ignored.
using Settings = std::map<std::string, std::string>;
Settings read_settings(const fs::path& path);
void write_settings(const fs::path& path, const Settings& s);

}  // namespace velokin::io
