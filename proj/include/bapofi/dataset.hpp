#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bapofi {

// One covariate column. Categorical columns read from text carry a level
// dictionary mapping integer codes back to the original labels.
struct Covariate {
  std::string name;
  std::vector<std::string> levels;  // empty for numeric columns
  bool is_coded() const { return !levels.empty(); }
  bool operator==(const Covariate&) const = default;
};

// Observed trial data D = (z, X, y_obs, gamma, y_tox). Times are stored on the
// natural log scale. Immutable once constructed.
class TrialDataset {
 public:
  TrialDataset() = default;
  // `x` is row-major n x p. Throws SchemaError on any invariant violation.
  TrialDataset(std::vector<int> arm, std::vector<double> x, std::vector<Covariate> covariates,
               std::vector<double> log_time, std::vector<int> event,
               std::optional<std::vector<int>> tox);

  std::size_t n() const { return arm_.size(); }
  std::size_t p() const { return covariates_.size(); }

  const std::vector<int>& arm() const { return arm_; }
  int arm(std::size_t i) const { return arm_[i]; }
  double x(std::size_t i, std::size_t j) const { return x_[i * p() + j]; }
  std::span<const double> row(std::size_t i) const { return {x_.data() + i * p(), p()}; }
  const std::vector<double>& x() const { return x_; }
  std::vector<double> column(std::size_t j) const;
  const std::vector<Covariate>& covariates() const { return covariates_; }
  const std::vector<double>& log_time() const { return log_time_; }
  const std::vector<int>& event() const { return event_; }
  bool has_tox() const { return tox_.has_value(); }
  const std::vector<int>& tox() const;
  std::size_t censored_count() const;

  // Keeps the listed covariate columns (in the given order).
  TrialDataset select_covariates(std::span<const std::size_t> columns) const;
  // Index of a covariate by name; throws SchemaError when absent.
  std::size_t covariate_index(const std::string& name) const;

  bool operator==(const TrialDataset&) const = default;

 private:
  std::vector<int> arm_;
  std::vector<double> x_;
  std::vector<Covariate> covariates_;
  std::vector<double> log_time_;
  std::vector<int> event_;
  std::optional<std::vector<int>> tox_;
};

// Reads the CSV layout: required columns arm, time, event; optional tox; all
// remaining columns are covariates. Missing covariate values are an error.
TrialDataset load_dataset(std::istream& in);
TrialDataset load_dataset_file(const std::string& path);

// Writes the same layout back. Times are written as exp(log_time) with full
// round-trip precision, so load(write(d)) reproduces d.
void write_dataset(std::ostream& out, const TrialDataset& d);
void write_dataset_file(const std::string& path, const TrialDataset& d);

// Complete log times: y_log_i = y_obs_log_i for events, y_obs_log_i + kappa_i
// for censored patients.
struct CompleteData {
  std::vector<double> y_log;
  std::vector<double> kappa;  // length n, zero for events
};

// `kappa` maps censored patient index -> offset. Throws std::invalid_argument
// for negative offsets, offsets on uncensored patients, or censored patients
// without an offset.
CompleteData complete_data(const TrialDataset& d, const std::map<std::size_t, double>& kappa);

}  // namespace bapofi
