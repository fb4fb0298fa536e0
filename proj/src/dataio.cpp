#include "fedcast/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace fedcast::data {

namespace {

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"'))
    s.remove_suffix(1);
  return s;
}

void check_features(const TimeSeriesDataset& ds, std::size_t n, const char* what) {
  if (ds.n_features() != n) {
    throw DimensionMismatch(std::string(what) + ": dataset has " + std::to_string(ds.n_features()) +
                            " features, parameters cover " + std::to_string(n));
  }
}

TimeSeriesDataset slice_rows(const TimeSeriesDataset& ds, std::size_t begin, std::size_t count,
                             Segment segment) {
  TimeSeriesDataset out;
  out.client_id = ds.client_id;
  out.feature_names = ds.feature_names;
  out.segment = segment;
  out.values = ds.values.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
  if (!ds.timestamps.empty()) {
    out.timestamps.assign(ds.timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                          ds.timestamps.begin() + static_cast<std::ptrdiff_t>(begin + count));
  }
  return out;
}

}  // namespace

const char* to_string(Segment s) {
  switch (s) {
    case Segment::whole: return "whole";
    case Segment::train: return "train";
    case Segment::validation: return "validation";
    case Segment::test: return "test";
  }
  return "?";
}

const char* to_string(ScalingScope s) { return s == ScalingScope::local ? "local" : "global"; }

ScalingScope scaling_scope_from_string(const std::string& s) {
  if (s == "local") return ScalingScope::local;
  if (s == "global") return ScalingScope::global;
  throw InvalidArgument("unknown scaling scope '" + s + "'");
}

void ScalerParams::validate() const {
  if (min.size() != max.size()) throw InvalidArgument("scaler min/max lengths differ");
  for (std::size_t j = 0; j < min.size(); ++j) {
    if (!(min[j] <= max[j])) {
      throw InvalidArgument("scaler feature " + std::to_string(j) + " has min > max");
    }
  }
}

std::int64_t parse_timestamp(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  const auto t = std::string(trim(text));
  if (std::sscanf(t.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &s) != 7 ||
      (sep != ' ' && sep != 'T')) {
    throw InvalidArgument("bad timestamp '" + text + "'");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 60) {
    throw InvalidArgument("bad timestamp '" + text + "'");
  }
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_timestamp(std::int64_t seconds) {
  using namespace std::chrono;
  auto days = seconds / 86400;
  auto rem = seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02lld:%02lld:%02lld", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long long>(rem / 3600), static_cast<long long>((rem / 60) % 60),
                static_cast<long long>(rem % 60));
  return buf;
}

std::optional<double> parse_cell(std::string_view cell) {
  cell = trim(cell);
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

TimeSeriesDataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& schema) {
  std::ifstream in(path);
  if (!in) throw FileNotFound("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw HeaderMismatch(path.string() + ": missing header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
  const auto header = split_line(line);
  if (header.size() != schema.size() + 1) {
    throw HeaderMismatch(path.string() + ": expected " + std::to_string(schema.size() + 1) +
                         " columns, found " + std::to_string(header.size()));
  }
  for (std::size_t j = 0; j < schema.size(); ++j) {
    if (trim(header[j + 1]) != schema[j]) {
      throw HeaderMismatch(path.string() + ": column " + std::to_string(j + 1) + " is '" +
                           std::string(trim(header[j + 1])) + "', expected '" + schema[j] + "'");
    }
  }

  TimeSeriesDataset ds;
  ds.client_id = path.stem().string();
  ds.feature_names = schema;
  std::vector<double> flat;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    const auto ts = parse_timestamp(std::string(cells[0]));
    if (!ds.timestamps.empty() && ts <= ds.timestamps.back()) {
      throw NonMonotoneTimestamps(path.string() + ":" + std::to_string(line_no) +
                                  ": timestamp not after previous row");
    }
    ds.timestamps.push_back(ts);
    for (std::size_t j = 0; j < schema.size(); ++j) {
      const auto v = j + 1 < cells.size() ? parse_cell(cells[j + 1]) : std::nullopt;
      flat.push_back(v.value_or(std::numeric_limits<double>::quiet_NaN()));
    }
  }
  ds.values = Eigen::Map<Matrix>(flat.data(), static_cast<Eigen::Index>(ds.timestamps.size()),
                                 static_cast<Eigen::Index>(schema.size()));
  return ds;
}

void write_csv(const std::filesystem::path& path, const TimeSeriesDataset& ds) {
  std::ofstream out(path);
  if (!out) throw FileNotFound("cannot write " + path.string());
  out << "time";
  for (const auto& name : ds.feature_names) out << ',' << name;
  out << '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < ds.values.rows(); ++i) {
    out << format_timestamp(ds.timestamps.at(static_cast<std::size_t>(i)));
    for (Eigen::Index j = 0; j < ds.values.cols(); ++j) {
      out << ',';
      const double v = ds.values(i, j);
      if (std::isfinite(v)) {
        const auto res = std::to_chars(buf, buf + sizeof buf, v);
        out.write(buf, res.ptr - buf);
      }
    }
    out << '\n';
  }
}

TimeSeriesDataset clean_missing(TimeSeriesDataset ds) {
  ds.values = ds.values.unaryExpr([](double v) { return std::isfinite(v) ? v : 0.0; });
  return ds;
}

SplitDataset split_chronological(const TimeSeriesDataset& ds) {
  const std::size_t n = ds.n_timesteps();
  if (n < 5) throw InvalidArgument("split needs at least 5 timesteps, got " + std::to_string(n));
  const std::size_t n_train = n * 6 / 10;
  const std::size_t n_val = n * 2 / 10;
  const std::size_t n_test = n - n_train - n_val;
  return SplitDataset{slice_rows(ds, 0, n_train, Segment::train),
                      slice_rows(ds, n_train, n_val, Segment::validation),
                      slice_rows(ds, n_train + n_val, n_test, Segment::test)};
}

double percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw InvalidArgument("percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double rank = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

FloodCapParams fit_flood_cap(const TimeSeriesDataset& train, double lower_pct, double upper_pct) {
  if (!(lower_pct > 0.0 && lower_pct < upper_pct && upper_pct < 100.0)) {
    throw InvalidArgument("flood/cap percentiles must satisfy 0 < lower < upper < 100");
  }
  if (train.segment != Segment::train) {
    throw InvalidArgument("flood/cap must be fitted on a training split, got " +
                          std::string(to_string(train.segment)));
  }
  if (train.empty()) throw InvalidArgument("flood/cap fitted on an empty training split");

  FloodCapParams p;
  p.lower_percentile = lower_pct;
  p.upper_percentile = upper_pct;
  p.fitted_on_client = train.client_id;
  p.fitted_on_segment = train.segment;
  for (Eigen::Index j = 0; j < train.values.cols(); ++j) {
    std::vector<double> column(train.values.col(j).begin(), train.values.col(j).end());
    p.cut_low.push_back(percentile(column, lower_pct));
    p.cut_high.push_back(percentile(std::move(column), upper_pct));
  }
  return p;
}

TimeSeriesDataset apply_flood_cap(TimeSeriesDataset ds, const FloodCapParams& params) {
  check_features(ds, params.cut_low.size(), "apply_flood_cap");
  for (Eigen::Index j = 0; j < ds.values.cols(); ++j) {
    const double lo = params.cut_low[static_cast<std::size_t>(j)];
    const double hi = params.cut_high[static_cast<std::size_t>(j)];
    ds.values.col(j) = ds.values.col(j).cwiseMax(lo).cwiseMin(hi);
  }
  return ds;
}

ScalerParams fit_scaler(const TimeSeriesDataset& train) {
  ScalerParams sc;
  sc.scope = ScalingScope::local;
  for (Eigen::Index j = 0; j < train.values.cols(); ++j) {
    if (train.empty()) {
      sc.min.push_back(0.0);
      sc.max.push_back(0.0);
    } else {
      sc.min.push_back(train.values.col(j).minCoeff());
      sc.max.push_back(train.values.col(j).maxCoeff());
    }
  }
  return sc;
}

ScalerParams negotiate_global_scaler(const std::vector<ScalerParams>& local_params) {
  if (local_params.empty()) throw InvalidArgument("no local scalers to merge");
  ScalerParams global = local_params.front();
  global.validate();
  for (std::size_t c = 1; c < local_params.size(); ++c) {
    const auto& p = local_params[c];
    p.validate();
    if (p.n_features() != global.n_features()) {
      throw DimensionMismatch("local scalers disagree on feature count");
    }
    for (std::size_t j = 0; j < p.n_features(); ++j) {
      global.min[j] = std::min(global.min[j], p.min[j]);
      global.max[j] = std::max(global.max[j], p.max[j]);
    }
  }
  global.scope = ScalingScope::global;
  return global;
}

void scale_in_place(Matrix& values, const ScalerParams& sc) {
  if (static_cast<std::size_t>(values.cols()) > sc.n_features()) {
    throw DimensionMismatch("scale: matrix has more columns than the scaler");
  }
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    const double lo = sc.min[static_cast<std::size_t>(j)];
    const double range = sc.max[static_cast<std::size_t>(j)] - lo;
    if (range > 0.0) {
      values.col(j) = (values.col(j).array() - lo) / range;
    } else {
      values.col(j).setZero();
    }
  }
}

void inverse_scale_in_place(Matrix& values, const ScalerParams& sc) {
  if (static_cast<std::size_t>(values.cols()) > sc.n_features()) {
    throw DimensionMismatch("inverse_scale: matrix has more columns than the scaler");
  }
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    const double lo = sc.min[static_cast<std::size_t>(j)];
    const double range = sc.max[static_cast<std::size_t>(j)] - lo;
    values.col(j) = values.col(j).array() * range + lo;
  }
}

TimeSeriesDataset scale(TimeSeriesDataset ds, const ScalerParams& sc) {
  check_features(ds, sc.n_features(), "scale");
  scale_in_place(ds.values, sc);
  return ds;
}

TimeSeriesDataset inverse_scale(TimeSeriesDataset ds, const ScalerParams& sc) {
  check_features(ds, sc.n_features(), "inverse_scale");
  inverse_scale_in_place(ds.values, sc);
  return ds;
}

Matrix inverse_scale_targets(const Matrix& scaled, const ScalerParams& sc) {
  Matrix out = scaled;
  inverse_scale_in_place(out, sc);
  return out;
}

WindowedDataset make_windows(const TimeSeriesDataset& segment, std::size_t window) {
  if (window == 0) throw InvalidArgument("window size must be positive");
  const std::size_t n = segment.n_timesteps();
  const std::size_t d = segment.n_features();
  const std::size_t n_targets = std::min(kNumTargets, d);
  WindowedDataset w;
  w.client_id = segment.client_id;
  w.window = window;
  w.n_features = d;
  const std::size_t count = n > window ? n - window : 0;
  w.inputs.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(window * d));
  w.targets.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(n_targets));
  for (std::size_t k = 0; k < count; ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    // Row-major storage makes rows k..k+T-1 one contiguous run of T*d values.
    w.inputs.row(row) = Eigen::Map<const RowVector>(segment.values.row(row).data(),
                                                    static_cast<Eigen::Index>(window * d));
    w.targets.row(row) =
        segment.values.row(row + static_cast<Eigen::Index>(window)).head(static_cast<Eigen::Index>(n_targets));
  }
  return w;
}

WindowedDataset concat_windows(const std::vector<const WindowedDataset*>& parts, std::string client_id) {
  WindowedDataset out;
  out.client_id = std::move(client_id);
  Eigen::Index rows = 0;
  for (const auto* p : parts) {
    if (out.window == 0 && p->window != 0) {
      out.window = p->window;
      out.n_features = p->n_features;
      out.inputs.resize(0, p->inputs.cols());
      out.targets.resize(0, p->targets.cols());
    }
    if (p->window != 0 && (p->window != out.window || p->n_features != out.n_features)) {
      throw DimensionMismatch("concat_windows: window shapes differ");
    }
    rows += p->inputs.rows();
  }
  Matrix inputs(rows, out.inputs.cols());
  Matrix targets(rows, out.targets.cols());
  Eigen::Index at = 0;
  for (const auto* p : parts) {
    if (p->inputs.rows() == 0) continue;
    inputs.middleRows(at, p->inputs.rows()) = p->inputs;
    targets.middleRows(at, p->targets.rows()) = p->targets;
    at += p->inputs.rows();
  }
  out.inputs = std::move(inputs);
  out.targets = std::move(targets);
  return out;
}

std::vector<ClientData> preprocess(const std::vector<TimeSeriesDataset>& raw, const PreprocessConfig& config) {
  std::vector<SplitDataset> splits;
  std::vector<ClientData> out(raw.size());
  std::vector<ScalerParams> local;
  for (std::size_t c = 0; c < raw.size(); ++c) {
    auto split = split_chronological(clean_missing(raw[c]));
    out[c].client_id = raw[c].client_id;
    if (config.flood_cap) {
      auto setting = *config.flood_cap;
      if (auto it = config.flood_cap_per_client.find(raw[c].client_id); it != config.flood_cap_per_client.end()) {
        setting = it->second;
      }
      auto params = fit_flood_cap(split.train, setting.lower, setting.upper);
      split.train = apply_flood_cap(std::move(split.train), params);
      out[c].flood_cap = std::move(params);
    }
    local.push_back(fit_scaler(split.train));
    splits.push_back(std::move(split));
  }
  const ScalerParams global =
      config.scaling == ScalingScope::global && !local.empty() ? negotiate_global_scaler(local) : ScalerParams{};
  for (std::size_t c = 0; c < raw.size(); ++c) {
    out[c].scaler = config.scaling == ScalingScope::global ? global : local[c];
    auto& s = splits[c];
    out[c].train = make_windows(scale(std::move(s.train), out[c].scaler), config.window);
    out[c].validation = make_windows(scale(std::move(s.validation), out[c].scaler), config.window);
    out[c].test = make_windows(scale(std::move(s.test), out[c].scaler), config.window);
  }
  return out;
}

}  // namespace fedcast::data
