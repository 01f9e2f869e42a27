#pragma once

// Dataset ingestion, normalization, smoothing, finite-difference velocities,
// and synthetic oracle generation (ellipse, square, star contours and a
// sinusoidal joint-space swimming template).

#include <Eigen/Dense>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "osmp/util.hpp"

namespace osmp {

/// Isotropic scale plus per-coordinate offset: x' = (x - offset) / scale.
struct NormalizationTransform {
  double scale = 1.0;
  Vec offset;

  Vec apply(const Vec& x) const { return (x - offset) / scale; }
  Vec invert(const Vec& x) const { return scale * x + offset; }
  bool is_identity() const { return scale == 1.0 && (offset.size() == 0 || offset.isZero(0.0)); }
};

struct OracleDataset {
  Vec timestamps;         // strictly increasing, seconds
  Mat positions;          // N x n
  Mat velocities;         // N x n
  std::optional<Vec> conditioning;  // per-sample scalar z
  Eigen::Index periodic_start = 0;  // [start, end) indices of the periodic subset
  Eigen::Index periodic_end = 0;
  double period = 0.0;    // seconds, > 0 when the periodic subset is nonempty
  bool normalized = false;
  NormalizationTransform transform;  // recorded by normalize() for denormalization

  Eigen::Index size() const { return positions.rows(); }
  Eigen::Index dim() const { return positions.cols(); }
  bool has_periodic() const { return periodic_end > periodic_start; }

  void validate() const;

  /// Euclidean length of the bounding-box diagonal; used as the workspace
  /// diameter for divergence thresholds.
  double workspace_diameter() const;
};

/// Dataset file: delimited text with header `t, x_1..x_n[, v_1..v_n][, z]`
/// plus a JSON sidecar manifest `<path>.manifest.json`. Round-trips
/// bit-exactly. Missing velocity columns are filled by finite differences.
OracleDataset load_dataset(const std::string& path);
void save_dataset(const OracleDataset& ds, const std::string& path);

/// Centers every coordinate and applies one shared scale so the max-range
/// coordinate spans exactly [-0.5, 0.5]; velocities share the scale.
OracleDataset normalize(const OracleDataset& ds, NormalizationTransform* out_transform = nullptr);
OracleDataset denormalize(const OracleDataset& ds);

/// Local least-squares polynomial smoothing; even windows are handled with an
/// asymmetric stencil and edges with truncated windows.
Vec savitzky_golay(const Vec& series, int order, int window);
Mat savitzky_golay(const Mat& series, int order, int window);

/// Central differences in the interior, one-sided at the ends; in periodic
/// mode the stencil wraps across the period.
Mat finite_difference_velocities(const Mat& positions, const Vec& timestamps,
                                 bool periodic = false);

enum class OracleKind { kEllipse, kSquare, kStar, kSwim };
OracleKind oracle_kind_from_string(const std::string& name);

struct OracleParams {
  double a = 0.5;          // ellipse semi-axis / half side / outer radius
  double b = 0.25;         // ellipse semi-axis / star inner radius
  Vec center;              // defaults to the origin
  double period = 20.0;    // seconds per cycle
  Eigen::Index samples = 500;
  int star_points = 5;
  // swim template
  Eigen::Index swim_joints = 3;
  Vec swim_amplitude;      // defaults to (0.5, 0.35, 0.25)
  Vec swim_phase;          // defaults to (0, 2pi/3, 4pi/3)
  double conditioning = std::numeric_limits<double>::quiet_NaN();  // constant z column if finite
};

/// Analytic generators with exact velocities. Square and star contours close
/// (first sample equals the last) and carry corner velocities averaged over
/// the adjacent segments.
OracleDataset synth_oracle(OracleKind kind, const OracleParams& params);

/// Concatenates datasets (e.g. differently conditioned oracles) into one,
/// shifting timestamps so they stay strictly increasing.
OracleDataset concat_datasets(const std::vector<OracleDataset>& parts);

}  // namespace osmp
