#include "osmp/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

namespace osmp {

void OracleDataset::validate() const {
  const Eigen::Index n = size();
  require(n > 0, "dataset: empty");
  require(timestamps.size() == n, "dataset: timestamp count mismatch");
  require(velocities.rows() == n && velocities.cols() == dim(),
          "dataset: velocity shape mismatch");
  if (conditioning) require(conditioning->size() == n, "dataset: conditioning count mismatch");
  for (Eigen::Index i = 1; i < n; ++i)
    require(timestamps(i) > timestamps(i - 1), "dataset: timestamps must be strictly increasing");
  require(positions.allFinite() && velocities.allFinite(), "dataset: non-finite entries");
  require(periodic_start >= 0 && periodic_end <= n && periodic_start <= periodic_end,
          "dataset: bad periodic range");
  if (has_periodic()) require(period > 0.0, "dataset: period must be positive");
}

double OracleDataset::workspace_diameter() const {
  Vec lo = positions.colwise().minCoeff();
  Vec hi = positions.colwise().maxCoeff();
  return (hi - lo).norm();
}

// ---- normalization ----

OracleDataset normalize(const OracleDataset& ds, NormalizationTransform* out_transform) {
  ds.validate();
  Vec mean = ds.positions.colwise().mean();
  Mat centered = ds.positions.rowwise() - mean.transpose();
  double max_abs = centered.cwiseAbs().maxCoeff();
  require(max_abs > 0.0, "normalize: zero-range coordinates");
  for (Eigen::Index c = 0; c < centered.cols(); ++c)
    require(centered.col(c).maxCoeff() - centered.col(c).minCoeff() > 0.0,
            "normalize: zero-range coordinate " + std::to_string(c));

  NormalizationTransform tf;
  tf.scale = 2.0 * max_abs;
  tf.offset = mean;

  OracleDataset out = ds;
  out.positions = centered / tf.scale;
  out.velocities = ds.velocities / tf.scale;
  out.normalized = true;
  out.transform = tf;
  if (out_transform) *out_transform = tf;
  return out;
}

OracleDataset denormalize(const OracleDataset& ds) {
  OracleDataset out = ds;
  out.positions = (ds.positions * ds.transform.scale).rowwise() + ds.transform.offset.transpose();
  out.velocities = ds.velocities * ds.transform.scale;
  out.normalized = false;
  out.transform = NormalizationTransform{};
  return out;
}

// ---- smoothing ----

Vec savitzky_golay(const Vec& series, int order, int window) {
  require(window > order, "savitzky_golay: window must exceed order");
  require(window >= 2, "savitzky_golay: window too small");
  require(window <= series.size(), "savitzky_golay: window exceeds series length");
  const Eigen::Index n = series.size();
  const int left_nominal = (window - 1) / 2;
  Vec out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index lo = i - left_nominal;
    Eigen::Index hi = lo + window;  // exclusive
    if (lo < 0) {
      lo = 0;
      hi = std::min<Eigen::Index>(window, n);
    }
    if (hi > n) {
      hi = n;
      lo = std::max<Eigen::Index>(0, n - window);
    }
    const Eigen::Index w = hi - lo;
    const int deg = std::min<int>(order, static_cast<int>(w) - 1);
    Mat a(w, deg + 1);
    for (Eigen::Index r = 0; r < w; ++r) {
      double dt = static_cast<double>(lo + r - i);
      double p = 1.0;
      for (int c = 0; c <= deg; ++c) {
        a(r, c) = p;
        p *= dt;
      }
    }
    Vec seg = series.segment(lo, w);
    Vec coef = (a.transpose() * a).ldlt().solve(a.transpose() * seg);
    out(i) = coef(0);
  }
  return out;
}

Mat savitzky_golay(const Mat& series, int order, int window) {
  Mat out(series.rows(), series.cols());
  for (Eigen::Index c = 0; c < series.cols(); ++c)
    out.col(c) = savitzky_golay(Vec(series.col(c)), order, window);
  return out;
}

// ---- finite-difference velocities ----

Mat finite_difference_velocities(const Mat& positions, const Vec& timestamps, bool periodic) {
  const Eigen::Index n = positions.rows();
  require(n >= 3, "finite_difference_velocities: need at least 3 samples");
  require(timestamps.size() == n, "finite_difference_velocities: timestamp count mismatch");
  Mat v(n, positions.cols());
  if (periodic) {
    // treat the sequence as one closed cycle of duration t(n-1) - t(0)
    const double p = timestamps(n - 1) - timestamps(0);
    const bool closed = (positions.row(0) - positions.row(n - 1)).norm() < 1e-12;
    auto at = [&](Eigen::Index i) -> Eigen::Index {
      // with a duplicated closing sample, skip it when wrapping
      const Eigen::Index last = closed ? n - 1 : n;
      return ((i % last) + last) % last;
    };
    auto t_at = [&](Eigen::Index raw) {
      double t = timestamps(at(raw));
      if (raw < 0) t -= p;
      if (raw >= (closed ? n - 1 : n)) t += p;
      return t;
    };
    const Eigen::Index last = closed ? n - 1 : n;
    for (Eigen::Index i = 0; i < last; ++i) {
      Eigen::Index im = i - 1, ip = i + 1;
      v.row(i) = (positions.row(at(ip)) - positions.row(at(im))) / (t_at(ip) - t_at(im));
    }
    if (closed) v.row(n - 1) = v.row(0);
  } else {
    v.row(0) = (positions.row(1) - positions.row(0)) / (timestamps(1) - timestamps(0));
    v.row(n - 1) =
        (positions.row(n - 1) - positions.row(n - 2)) / (timestamps(n - 1) - timestamps(n - 2));
    for (Eigen::Index i = 1; i < n - 1; ++i)
      v.row(i) = (positions.row(i + 1) - positions.row(i - 1)) /
                 (timestamps(i + 1) - timestamps(i - 1));
  }
  return v;
}

// ---- synthetic oracles ----

OracleKind oracle_kind_from_string(const std::string& name) {
  if (name == "ellipse") return OracleKind::kEllipse;
  if (name == "square") return OracleKind::kSquare;
  if (name == "star") return OracleKind::kStar;
  if (name == "swim") return OracleKind::kSwim;
  throw std::invalid_argument("unknown oracle kind: " + name);
}

namespace {

// Piecewise-linear closed contour traversed at constant speed. Corner samples
// get the average of the adjacent segment velocities.
OracleDataset polyline_oracle(const std::vector<Vec>& corners, const OracleParams& prm) {
  const Eigen::Index n = corners.front().size();
  const std::size_t m = corners.size();
  std::vector<double> seg_len(m);
  double perimeter = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    seg_len[i] = (corners[(i + 1) % m] - corners[i]).norm();
    perimeter += seg_len[i];
  }
  const double speed = perimeter / prm.period;

  OracleDataset ds;
  const Eigen::Index ns = prm.samples;
  ds.timestamps = Vec::LinSpaced(ns, 0.0, prm.period);
  ds.positions = Mat(ns, n);
  ds.velocities = Mat(ns, n);
  std::vector<double> cum(m + 1, 0.0);
  for (std::size_t i = 0; i < m; ++i) cum[i + 1] = cum[i] + seg_len[i];

  for (Eigen::Index k = 0; k < ns; ++k) {
    double arc = speed * ds.timestamps(k);
    arc = std::min(arc, perimeter);
    std::size_t seg = 0;
    while (seg + 1 < m && arc > cum[seg + 1]) ++seg;
    const double local = arc - cum[seg];
    const Vec dir = (corners[(seg + 1) % m] - corners[seg]) / seg_len[seg];
    ds.positions.row(k) = (corners[seg] + local * dir).transpose();

    const bool at_corner =
        (std::abs(local) < 1e-9 * perimeter) || (std::abs(local - seg_len[seg]) < 1e-9 * perimeter);
    if (at_corner) {
      std::size_t before = (std::abs(local) < 1e-9 * perimeter) ? (seg + m - 1) % m : seg;
      std::size_t after = (before + 1) % m;
      const Vec d0 = (corners[(before + 1) % m] - corners[before]) / seg_len[before];
      const Vec d1 = (corners[(after + 1) % m] - corners[after]) / seg_len[after];
      ds.velocities.row(k) = (0.5 * speed * (d0 + d1)).transpose();
    } else {
      ds.velocities.row(k) = (speed * dir).transpose();
    }
  }
  // close the contour exactly
  ds.positions.row(ns - 1) = ds.positions.row(0);
  ds.velocities.row(ns - 1) = ds.velocities.row(0);
  ds.periodic_start = 0;
  ds.periodic_end = ns;
  ds.period = prm.period;
  return ds;
}

}  // namespace

OracleDataset synth_oracle(OracleKind kind, const OracleParams& prm) {
  require(prm.samples >= 8, "synth_oracle: need at least 8 samples");
  require(prm.period > 0.0, "synth_oracle: period must be positive");

  OracleDataset ds;
  switch (kind) {
    case OracleKind::kEllipse: {
      Vec c = prm.center.size() == 2 ? prm.center : Vec::Zero(2);
      const Eigen::Index ns = prm.samples;
      ds.timestamps = Vec::LinSpaced(ns, 0.0, prm.period);
      ds.positions = Mat(ns, 2);
      ds.velocities = Mat(ns, 2);
      const double w = 2.0 * kPi / prm.period;
      for (Eigen::Index k = 0; k < ns; ++k) {
        const double th = w * ds.timestamps(k);
        ds.positions(k, 0) = c(0) + prm.a * std::cos(th);
        ds.positions(k, 1) = c(1) + prm.b * std::sin(th);
        ds.velocities(k, 0) = -prm.a * w * std::sin(th);
        ds.velocities(k, 1) = prm.b * w * std::cos(th);
      }
      ds.periodic_start = 0;
      ds.periodic_end = ns;
      ds.period = prm.period;
      break;
    }
    case OracleKind::kSquare: {
      Vec c = prm.center.size() == 2 ? prm.center : Vec::Zero(2);
      const double h = prm.a;  // half side
      // start at the middle of the right edge, counter-clockwise
      std::vector<Vec> corners;
      auto pt = [&](double x, double y) {
        Vec v(2);
        v << c(0) + x, c(1) + y;
        return v;
      };
      corners = {pt(h, 0), pt(h, h), pt(-h, h), pt(-h, -h), pt(h, -h)};
      ds = polyline_oracle(corners, prm);
      break;
    }
    case OracleKind::kStar: {
      Vec c = prm.center.size() == 2 ? prm.center : Vec::Zero(2);
      std::vector<Vec> corners;
      const int p = prm.star_points;
      require(p >= 3, "synth_oracle: star needs at least 3 points");
      for (int i = 0; i < 2 * p; ++i) {
        const double rad = (i % 2 == 0) ? prm.a : prm.b;
        const double th = kPi * i / p;
        Vec v(2);
        v << c(0) + rad * std::cos(th), c(1) + rad * std::sin(th);
        corners.push_back(v);
      }
      ds = polyline_oracle(corners, prm);
      break;
    }
    case OracleKind::kSwim: {
      const Eigen::Index nj = prm.swim_joints;
      require(nj >= 2, "synth_oracle: swim needs at least 2 joints");
      Vec amp = prm.swim_amplitude.size() == nj ? prm.swim_amplitude
                                                : Vec::NullaryExpr(nj, [&](Eigen::Index i) {
                                                    return 0.5 - 0.1 * static_cast<double>(i);
                                                  });
      Vec ph = prm.swim_phase.size() == nj ? prm.swim_phase : Vec::NullaryExpr(nj, [&](Eigen::Index i) {
        return 2.0 * kPi * static_cast<double>(i) / static_cast<double>(nj);
      });
      const Eigen::Index ns = prm.samples;
      ds.timestamps = Vec::LinSpaced(ns, 0.0, prm.period);
      ds.positions = Mat(ns, nj);
      ds.velocities = Mat(ns, nj);
      const double w = 2.0 * kPi / prm.period;
      for (Eigen::Index k = 0; k < ns; ++k)
        for (Eigen::Index j = 0; j < nj; ++j) {
          const double th = w * ds.timestamps(k) + ph(j);
          ds.positions(k, j) = amp(j) * std::sin(th);
          ds.velocities(k, j) = amp(j) * w * std::cos(th);
        }
      ds.periodic_start = 0;
      ds.periodic_end = ns;
      ds.period = prm.period;
      break;
    }
  }
  if (std::isfinite(prm.conditioning))
    ds.conditioning = Vec::Constant(ds.size(), prm.conditioning);
  ds.validate();
  return ds;
}

OracleDataset concat_datasets(const std::vector<OracleDataset>& parts) {
  require(!parts.empty(), "concat_datasets: no parts");
  Eigen::Index total = 0;
  const Eigen::Index n = parts.front().dim();
  bool any_cond = false;
  for (const OracleDataset& p : parts) {
    require(p.dim() == n, "concat_datasets: dimension mismatch");
    total += p.size();
    if (p.conditioning) any_cond = true;
  }
  OracleDataset out;
  out.timestamps = Vec(total);
  out.positions = Mat(total, n);
  out.velocities = Mat(total, n);
  if (any_cond) out.conditioning = Vec::Zero(total);
  Eigen::Index at = 0;
  double t_shift = 0.0;
  for (const OracleDataset& p : parts) {
    const Eigen::Index m = p.size();
    out.timestamps.segment(at, m) = p.timestamps.array() - p.timestamps(0) + t_shift;
    out.positions.middleRows(at, m) = p.positions;
    out.velocities.middleRows(at, m) = p.velocities;
    if (any_cond) {
      require(p.conditioning.has_value(), "concat_datasets: mixed conditioning presence");
      out.conditioning->segment(at, m) = *p.conditioning;
    }
    const double span = p.timestamps(m - 1) - p.timestamps(0);
    const double dt = span / static_cast<double>(m - 1);
    t_shift += span + dt;
    at += m;
  }
  out.periodic_start = 0;
  out.periodic_end = total;
  out.period = parts.front().period;
  out.validate();
  return out;
}

// ---- file I/O ----

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_dataset(const OracleDataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream f(path);
  require(f.good(), "save_dataset: cannot open " + path);
  const Eigen::Index n = ds.dim();
  f << "t";
  for (Eigen::Index c = 0; c < n; ++c) f << ", x_" << (c + 1);
  for (Eigen::Index c = 0; c < n; ++c) f << ", v_" << (c + 1);
  if (ds.conditioning) f << ", z";
  f << "\n";
  for (Eigen::Index k = 0; k < ds.size(); ++k) {
    f << fmt_double(ds.timestamps(k));
    for (Eigen::Index c = 0; c < n; ++c) f << ", " << fmt_double(ds.positions(k, c));
    for (Eigen::Index c = 0; c < n; ++c) f << ", " << fmt_double(ds.velocities(k, c));
    if (ds.conditioning) f << ", " << fmt_double((*ds.conditioning)(k));
    f << "\n";
  }

  nlohmann::json m;
  m["version"] = 1;
  m["n"] = n;
  m["period"] = ds.period;
  m["periodic_start"] = ds.periodic_start;
  m["periodic_end"] = ds.periodic_end;
  m["units"] = "dimensionless";
  m["normalized"] = ds.normalized;
  m["scale"] = ds.transform.scale;
  std::vector<double> off(ds.transform.offset.data(),
                          ds.transform.offset.data() + ds.transform.offset.size());
  m["offset"] = off;
  std::ofstream mf(path + ".manifest.json");
  require(mf.good(), "save_dataset: cannot open manifest for " + path);
  mf << m.dump(2);
}

OracleDataset load_dataset(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "load_dataset: cannot open " + path);
  std::string header;
  require(static_cast<bool>(std::getline(f, header)), "load_dataset: empty file");

  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      std::size_t b = tok.find_first_not_of(" \t\r");
      std::size_t e = tok.find_last_not_of(" \t\r");
      out.push_back(b == std::string::npos ? "" : tok.substr(b, e - b + 1));
    }
    return out;
  };

  std::vector<std::string> cols = split(header);
  require(!cols.empty() && cols[0] == "t", "load_dataset: header must start with t");
  Eigen::Index n_x = 0, n_v = 0;
  bool has_z = false;
  for (std::size_t i = 1; i < cols.size(); ++i) {
    if (cols[i].rfind("x_", 0) == 0)
      ++n_x;
    else if (cols[i].rfind("v_", 0) == 0)
      ++n_v;
    else if (cols[i] == "z")
      has_z = true;
    else
      throw std::invalid_argument("load_dataset: unknown column " + cols[i]);
  }
  require(n_x >= 1, "load_dataset: missing position columns");
  require(n_v == 0 || n_v == n_x, "load_dataset: velocity column count mismatch");

  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<std::string> toks = split(line);
    require(toks.size() == cols.size(), "load_dataset: bad row width");
    std::vector<double> row;
    for (const std::string& tok : toks) row.push_back(std::stod(tok));
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), "load_dataset: no samples");

  OracleDataset ds;
  const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
  ds.timestamps = Vec(m);
  ds.positions = Mat(m, n_x);
  const bool had_v = n_v > 0;
  ds.velocities = Mat(m, n_x);
  if (has_z) ds.conditioning = Vec(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& r = rows[static_cast<std::size_t>(k)];
    std::size_t at = 0;
    ds.timestamps(k) = r[at++];
    for (Eigen::Index c = 0; c < n_x; ++c) ds.positions(k, c) = r[at++];
    if (had_v)
      for (Eigen::Index c = 0; c < n_x; ++c) ds.velocities(k, c) = r[at++];
    if (has_z) (*ds.conditioning)(k) = r[at++];
  }

  // sidecar manifest
  std::ifstream mf(path + ".manifest.json");
  if (mf.good()) {
    nlohmann::json mj;
    mf >> mj;
    require(mj.at("n").get<Eigen::Index>() == n_x, "load_dataset: manifest dimension mismatch");
    ds.period = mj.at("period").get<double>();
    ds.periodic_start = mj.at("periodic_start").get<Eigen::Index>();
    ds.periodic_end = mj.at("periodic_end").get<Eigen::Index>();
    ds.normalized = mj.at("normalized").get<bool>();
    ds.transform.scale = mj.at("scale").get<double>();
    std::vector<double> off = mj.at("offset").get<std::vector<double>>();
    ds.transform.offset = Eigen::Map<Vec>(off.data(), static_cast<Eigen::Index>(off.size()));
  } else {
    // no manifest: the timestamp span of the full (assumed periodic) set
    ds.periodic_start = 0;
    ds.periodic_end = m;
    ds.period = ds.timestamps(m - 1) - ds.timestamps(0);
  }

  if (!had_v) {
    const bool closed =
        ds.has_periodic() && (ds.positions.row(0) - ds.positions.row(m - 1)).norm() < 1e-9;
    ds.velocities = finite_difference_velocities(ds.positions, ds.timestamps, closed);
  }
  ds.validate();
  return ds;
}

}  // namespace osmp
