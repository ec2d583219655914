#include "bapofi/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "bapofi/error.hpp"

namespace bapofi {

TrialDataset::TrialDataset(std::vector<int> arm, std::vector<double> x,
                           std::vector<Covariate> covariates, std::vector<double> log_time,
                           std::vector<int> event, std::optional<std::vector<int>> tox)
    : arm_(std::move(arm)),
      x_(std::move(x)),
      covariates_(std::move(covariates)),
      log_time_(std::move(log_time)),
      event_(std::move(event)),
      tox_(std::move(tox)) {
  const std::size_t n = arm_.size();
  if (log_time_.size() != n || event_.size() != n || x_.size() != n * covariates_.size() ||
      (tox_ && tox_->size() != n)) {
    throw SchemaError("dataset columns have inconsistent lengths");
  }
  auto binary = [](int v) { return v == 0 || v == 1; };
  for (std::size_t i = 0; i < n; ++i) {
    if (!binary(arm_[i])) throw SchemaError("arm must be 0/1 (row " + std::to_string(i + 1) + ")");
    if (!binary(event_[i])) throw SchemaError("event must be 0/1 (row " + std::to_string(i + 1) + ")");
    if (tox_ && !binary((*tox_)[i])) throw SchemaError("tox must be 0/1 (row " + std::to_string(i + 1) + ")");
    if (!std::isfinite(log_time_[i])) throw SchemaError("non-finite log time (row " + std::to_string(i + 1) + ")");
  }
  for (double v : x_) {
    if (!std::isfinite(v)) throw SchemaError("non-finite covariate value");
  }
}

std::vector<double> TrialDataset::column(std::size_t j) const {
  std::vector<double> out(n());
  for (std::size_t i = 0; i < n(); ++i) out[i] = x(i, j);
  return out;
}

const std::vector<int>& TrialDataset::tox() const {
  if (!tox_) throw SchemaError("dataset has no tox column");
  return *tox_;
}

std::size_t TrialDataset::censored_count() const {
  return static_cast<std::size_t>(std::count(event_.begin(), event_.end(), 0));
}

TrialDataset TrialDataset::select_covariates(std::span<const std::size_t> columns) const {
  std::vector<double> x;
  x.reserve(n() * columns.size());
  std::vector<Covariate> covs;
  for (std::size_t j : columns) {
    if (j >= p()) throw SchemaError("covariate column out of range");
    covs.push_back(covariates_[j]);
  }
  for (std::size_t i = 0; i < n(); ++i) {
    for (std::size_t j : columns) x.push_back(this->x(i, j));
  }
  return TrialDataset(arm_, std::move(x), std::move(covs), log_time_, event_, tox_);
}

std::size_t TrialDataset::covariate_index(const std::string& name) const {
  for (std::size_t j = 0; j < p(); ++j) {
    if (covariates_[j].name == name) return j;
  }
  throw SchemaError("unknown covariate '" + name + "'");
}

namespace {

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

// Splits one CSV record; supports double-quoted fields with "" escapes.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"' && k + 1 < line.size() && line[k + 1] == '"') {
        field += '"';
        ++k;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(trim(field));
  return out;
}

std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

bool is_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == ".";
}

int parse_flag(const std::string& s, const char* column, std::size_t row) {
  auto v = parse_number(s);
  if (!v || (*v != 0.0 && *v != 1.0)) {
    throw SchemaError(std::string("column '") + column + "' must be 0/1 (row " +
                      std::to_string(row) + ", value '" + s + "')");
  }
  return static_cast<int>(*v);
}

}  // namespace

TrialDataset load_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty CSV input");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv(line);

  std::optional<std::size_t> arm_col, time_col, event_col, tox_col;
  std::vector<std::size_t> cov_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& h = header[c];
    if (h == "arm") arm_col = c;
    else if (h == "time") time_col = c;
    else if (h == "event") event_col = c;
    else if (h == "tox") tox_col = c;
    else cov_cols.push_back(c);
  }
  if (!arm_col) throw SchemaError("missing required column 'arm'");
  if (!time_col) throw SchemaError("missing required column 'time'");
  if (!event_col) throw SchemaError("missing required column 'event'");

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw SchemaError("row " + std::to_string(rows.size() + 1) + " has " +
                        std::to_string(fields.size()) + " fields, header has " +
                        std::to_string(header.size()));
    }
    rows.push_back(std::move(fields));
  }
  const std::size_t n = rows.size();
  if (n == 0) throw SchemaError("CSV has no data rows");

  // Missing covariates: collect every offending row before failing.
  std::vector<std::size_t> bad_rows;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c : cov_cols) {
      if (is_missing(rows[i][c])) {
        bad_rows.push_back(i + 1);
        break;
      }
    }
  }
  if (!bad_rows.empty()) {
    std::ostringstream msg;
    msg << bad_rows.size() << " row(s) with missing covariate values:";
    for (std::size_t r : bad_rows) msg << ' ' << r;
    throw SchemaError(msg.str());
  }

  // A covariate column is numeric if every value parses; otherwise it is coded
  // against its sorted set of labels.
  std::vector<Covariate> covariates;
  std::vector<std::vector<double>> columns;
  for (std::size_t c : cov_cols) {
    Covariate cov{header[c], {}};
    std::vector<double> values(n);
    bool numeric = true;
    for (std::size_t i = 0; i < n && numeric; ++i) {
      auto v = parse_number(rows[i][c]);
      if (v && std::isfinite(*v)) values[i] = *v;
      else numeric = false;
    }
    if (!numeric) {
      std::set<std::string> labels;
      for (std::size_t i = 0; i < n; ++i) labels.insert(rows[i][c]);
      cov.levels.assign(labels.begin(), labels.end());
      for (std::size_t i = 0; i < n; ++i) {
        auto it = std::lower_bound(cov.levels.begin(), cov.levels.end(), rows[i][c]);
        values[i] = static_cast<double>(it - cov.levels.begin());
      }
    }
    covariates.push_back(std::move(cov));
    columns.push_back(std::move(values));
  }

  std::vector<int> arm(n), event(n);
  std::vector<double> log_time(n);
  std::optional<std::vector<int>> tox;
  if (tox_col) tox.emplace(n);
  std::vector<double> x(n * cov_cols.size());
  for (std::size_t i = 0; i < n; ++i) {
    arm[i] = parse_flag(rows[i][*arm_col], "arm", i + 1);
    event[i] = parse_flag(rows[i][*event_col], "event", i + 1);
    if (tox) (*tox)[i] = parse_flag(rows[i][*tox_col], "tox", i + 1);
    auto t = parse_number(rows[i][*time_col]);
    if (!t || !std::isfinite(*t) || *t <= 0.0) {
      throw SchemaError("time must be a positive number (row " + std::to_string(i + 1) +
                        ", value '" + rows[i][*time_col] + "')");
    }
    log_time[i] = std::log(*t);
    for (std::size_t j = 0; j < cov_cols.size(); ++j) x[i * cov_cols.size() + j] = columns[j][i];
  }
  return TrialDataset(std::move(arm), std::move(x), std::move(covariates), std::move(log_time),
                      std::move(event), std::move(tox));
}

TrialDataset load_dataset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open data file '" + path + "'");
  return load_dataset(in);
}

namespace {

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

void write_dataset(std::ostream& out, const TrialDataset& d) {
  out << "arm,time,event";
  if (d.has_tox()) out << ",tox";
  for (const auto& c : d.covariates()) out << ',' << quote_if_needed(c.name);
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < d.n(); ++i) {
    // exp/log do not round-trip bit-exactly in general; write the log time in
    // hex-float form would break the CSV contract, so search the neighbourhood
    // of exp(y) for a decimal time whose log reproduces y.
    const double y = d.log_time()[i];
    double t = std::exp(y);
    for (int step = 0; step < 64 && std::log(t) != y; ++step) {
      t = std::log(t) < y ? std::nextafter(t, INFINITY) : std::nextafter(t, 0.0);
    }
    out << d.arm(i) << ',' << t << ',' << d.event()[i];
    if (d.has_tox()) out << ',' << d.tox()[i];
    for (std::size_t j = 0; j < d.p(); ++j) {
      const auto& cov = d.covariates()[j];
      out << ',';
      if (cov.is_coded()) out << quote_if_needed(cov.levels[static_cast<std::size_t>(d.x(i, j))]);
      else out << d.x(i, j);
    }
    out << '\n';
  }
}

void write_dataset_file(const std::string& path, const TrialDataset& d) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_dataset(out, d);
}

CompleteData complete_data(const TrialDataset& d, const std::map<std::size_t, double>& kappa) {
  CompleteData out{d.log_time(), std::vector<double>(d.n(), 0.0)};
  for (const auto& [i, k] : kappa) {
    if (i >= d.n()) throw std::invalid_argument("kappa index out of range");
    if (d.event()[i] == 1) throw std::invalid_argument("kappa supplied for uncensored patient");
    if (!(k >= 0.0)) throw std::invalid_argument("kappa must be nonnegative");
    out.kappa[i] = k;
    out.y_log[i] += k;
  }
  for (std::size_t i = 0; i < d.n(); ++i) {
    if (d.event()[i] == 0 && !kappa.contains(i)) {
      throw std::invalid_argument("censored patient " + std::to_string(i) + " has no kappa");
    }
  }
  return out;
}

}  // namespace bapofi
