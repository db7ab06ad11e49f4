#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace blend {

enum class Membership { Prob, Conv };

// One respondent. `x` and `y` are ordered as the owning dataset's schema;
// missing outcomes are stored as NaN.
struct Unit {
  std::string id;
  Membership membership = Membership::Prob;
  std::vector<double> x;
  std::vector<double> y;
  std::optional<double> d_star;
  // User-supplied response probability r_i (data mode).
  std::optional<double> r_hat;
};

struct Schema {
  std::vector<std::string> auxiliary;
  std::vector<std::string> outcomes;
};

// Column roles for loading delimited data. `id`, `sample` and `d_star` are
// reserved names and are always read.
struct ColumnRoles {
  std::vector<std::string> auxiliary;
  std::vector<std::string> outcomes;
  // Subset of `auxiliary` that must be coded 0/1.
  std::vector<std::string> binary;
  // Optional column with per-unit response probabilities.
  std::optional<std::string> response_column;
};

// The blended sample S = S1 u S2. Immutable once constructed.
class Dataset {
 public:
  Dataset() = default;

  // Validates the invariants (id uniqueness, d_star ranges, schema widths,
  // both samples nonempty) and throws blend::Error on violation.
  static Dataset from_units(Schema schema, std::vector<Unit> units);

  std::size_t size() const { return ids_.size(); }
  std::size_t n1() const { return n1_; }
  std::size_t n2() const { return size() - n1_; }
  const Schema& schema() const { return schema_; }

  const std::string& id(std::size_t i) const { return ids_[i]; }
  Membership membership(std::size_t i) const { return membership_[i]; }
  bool is_conv(std::size_t i) const { return membership_[i] == Membership::Conv; }
  const std::vector<Membership>& memberships() const { return membership_; }
  std::optional<double> d_star(std::size_t i) const;
  std::optional<double> r_hat(std::size_t i) const;
  bool has_response_column() const;

  // Full auxiliary matrix, one row per unit, columns in schema order.
  const Eigen::MatrixXd& aux() const { return aux_; }
  // Outcome column (NaN where missing).
  Eigen::VectorXd outcome(const std::string& name) const;
  std::size_t aux_index(const std::string& name) const;
  std::size_t outcome_index(const std::string& name) const;

  Unit unit(std::size_t i) const;

  // Units whose `keep` flag is set, in original order. Sample-size checks are
  // not repeated, so replicate subsets with a thin sample remain usable.
  Dataset subset(const std::vector<bool>& keep) const;

 private:
  Schema schema_;
  std::vector<std::string> ids_;
  std::vector<Membership> membership_;
  Eigen::MatrixXd aux_;
  Eigen::MatrixXd outcomes_;
  Eigen::VectorXd d_star_;  // NaN when absent
  Eigen::VectorXd r_hat_;   // NaN when absent
  std::size_t n1_ = 0;
};

Dataset load_dataset(const std::string& path, const ColumnRoles& roles);
void write_dataset(const std::string& path, const Dataset& ds);

struct DesignMatrix {
  Eigen::MatrixXd X;
  std::vector<std::string> columns;
  // Row r of X belongs to dataset unit rows[r].
  std::vector<std::size_t> rows;
};

inline constexpr const char* kInterceptName = "(Intercept)";

DesignMatrix design_matrix(const Dataset& ds, const std::vector<std::string>& vars,
                           bool add_intercept);

}  // namespace blend
