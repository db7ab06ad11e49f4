#include "blend/dataset.hpp"

#include "blend/csv.hpp"
#include "blend/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_set>

namespace blend {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool valid_probability(double p) { return p > 0.0 && p <= 1.0; }

std::size_t index_of(const std::vector<std::string>& names, const std::string& name,
                     const char* what) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    throw Error(ErrorCode::UnknownVariable, std::string(what) + " '" + name + "' not in schema");
  }
  return static_cast<std::size_t>(it - names.begin());
}

}  // namespace

Dataset Dataset::from_units(Schema schema, std::vector<Unit> units) {
  const std::size_t n = units.size();
  const std::size_t p = schema.auxiliary.size();
  const std::size_t q = schema.outcomes.size();

  Dataset ds;
  ds.schema_ = std::move(schema);
  ds.ids_.reserve(n);
  ds.membership_.reserve(n);
  ds.aux_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  ds.outcomes_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q));
  ds.d_star_ = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), kNaN);
  ds.r_hat_ = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), kNaN);

  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < n; ++i) {
    Unit& u = units[i];
    const auto r = static_cast<Eigen::Index>(i);
    if (!seen.insert(u.id).second) throw Error(ErrorCode::DuplicateId, "id '" + u.id + "'");
    if (u.x.size() != p) {
      throw Error(ErrorCode::MissingAuxiliary,
                  "unit '" + u.id + "' has " + std::to_string(u.x.size()) +
                      " auxiliary values, schema has " + std::to_string(p));
    }
    if (u.y.size() != q) {
      throw Error(ErrorCode::BadValue, "unit '" + u.id + "' outcome width mismatch");
    }
    for (std::size_t j = 0; j < p; ++j) {
      if (!std::isfinite(u.x[j])) {
        throw Error(ErrorCode::MissingAuxiliary,
                    "unit '" + u.id + "' lacks '" + ds.schema_.auxiliary[j] + "'");
      }
      ds.aux_(r, static_cast<Eigen::Index>(j)) = u.x[j];
    }
    for (std::size_t j = 0; j < q; ++j) ds.outcomes_(r, static_cast<Eigen::Index>(j)) = u.y[j];
    if (u.d_star) {
      if (!valid_probability(*u.d_star)) {
        throw Error(ErrorCode::BadProbability,
                    "unit '" + u.id + "' d_star=" + csv::format(*u.d_star) + " outside (0,1]");
      }
      ds.d_star_(r) = *u.d_star;
    } else if (u.membership == Membership::Prob) {
      throw Error(ErrorCode::BadProbability, "probability-sample unit '" + u.id + "' lacks d_star");
    }
    if (u.r_hat) {
      if (!valid_probability(*u.r_hat)) {
        throw Error(ErrorCode::BadProbability,
                    "unit '" + u.id + "' response probability outside (0,1]");
      }
      ds.r_hat_(r) = *u.r_hat;
    }
    if (u.membership == Membership::Prob) ++ds.n1_;
    ds.ids_.push_back(std::move(u.id));
    ds.membership_.push_back(u.membership);
  }
  if (ds.n1_ == 0) throw Error(ErrorCode::EmptySample, "no probability-sample units");
  if (ds.n1_ == n) throw Error(ErrorCode::EmptySample, "no convenience-sample units");
  return ds;
}

std::optional<double> Dataset::d_star(std::size_t i) const {
  const double v = d_star_(static_cast<Eigen::Index>(i));
  if (std::isnan(v)) return std::nullopt;
  return v;
}

std::optional<double> Dataset::r_hat(std::size_t i) const {
  const double v = r_hat_(static_cast<Eigen::Index>(i));
  if (std::isnan(v)) return std::nullopt;
  return v;
}

bool Dataset::has_response_column() const {
  return r_hat_.size() > 0 && !r_hat_.array().isNaN().all();
}

std::size_t Dataset::aux_index(const std::string& name) const {
  return index_of(schema_.auxiliary, name, "auxiliary variable");
}

std::size_t Dataset::outcome_index(const std::string& name) const {
  return index_of(schema_.outcomes, name, "outcome");
}

Eigen::VectorXd Dataset::outcome(const std::string& name) const {
  return outcomes_.col(static_cast<Eigen::Index>(outcome_index(name)));
}

Unit Dataset::unit(std::size_t i) const {
  const auto r = static_cast<Eigen::Index>(i);
  Unit u;
  u.id = ids_[i];
  u.membership = membership_[i];
  u.x.resize(schema_.auxiliary.size());
  for (Eigen::Index j = 0; j < aux_.cols(); ++j) u.x[static_cast<std::size_t>(j)] = aux_(r, j);
  u.y.resize(schema_.outcomes.size());
  for (Eigen::Index j = 0; j < outcomes_.cols(); ++j)
    u.y[static_cast<std::size_t>(j)] = outcomes_(r, j);
  u.d_star = d_star(i);
  u.r_hat = r_hat(i);
  return u;
}

Dataset Dataset::subset(const std::vector<bool>& keep) const {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < size(); ++i) {
    if (keep[i]) rows.push_back(static_cast<Eigen::Index>(i));
  }
  Dataset out;
  out.schema_ = schema_;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.aux_.resize(m, aux_.cols());
  out.outcomes_.resize(m, outcomes_.cols());
  out.d_star_.resize(m);
  out.r_hat_.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = rows[static_cast<std::size_t>(k)];
    out.aux_.row(k) = aux_.row(i);
    out.outcomes_.row(k) = outcomes_.row(i);
    out.d_star_(k) = d_star_(i);
    out.r_hat_(k) = r_hat_(i);
    out.ids_.push_back(ids_[static_cast<std::size_t>(i)]);
    out.membership_.push_back(membership_[static_cast<std::size_t>(i)]);
    if (membership_[static_cast<std::size_t>(i)] == Membership::Prob) ++out.n1_;
  }
  return out;
}

Dataset load_dataset(const std::string& path, const ColumnRoles& roles) {
  const csv::Table table = csv::read(path);

  auto require = [&](const std::string& name) {
    auto pos = table.find(name);
    if (!pos) throw Error(ErrorCode::MissingColumn, "'" + path + "' lacks column '" + name + "'");
    return *pos;
  };
  const std::size_t id_col = require("id");
  const std::size_t sample_col = require("sample");
  const std::size_t d_col = require("d_star");
  std::vector<std::size_t> aux_cols;
  for (const auto& name : roles.auxiliary) aux_cols.push_back(require(name));
  std::vector<std::size_t> out_cols;
  for (const auto& name : roles.outcomes) out_cols.push_back(require(name));
  std::optional<std::size_t> r_col;
  if (roles.response_column) r_col = require(*roles.response_column);

  std::vector<bool> binary(roles.auxiliary.size(), false);
  for (const auto& name : roles.binary) {
    auto it = std::find(roles.auxiliary.begin(), roles.auxiliary.end(), name);
    if (it == roles.auxiliary.end()) {
      throw Error(ErrorCode::UnknownVariable, "binary variable '" + name + "' is not auxiliary");
    }
    binary[static_cast<std::size_t>(it - roles.auxiliary.begin())] = true;
  }

  std::vector<Unit> units;
  units.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = path + " row " + std::to_string(r + 2);
    Unit u;
    u.id = row[id_col];
    if (u.id.empty()) throw Error(ErrorCode::BadValue, where + ": empty id");
    const std::string& label = row[sample_col];
    if (label == "prob") {
      u.membership = Membership::Prob;
    } else if (label == "conv") {
      u.membership = Membership::Conv;
    } else {
      throw Error(ErrorCode::BadValue, where + ": sample must be 'prob' or 'conv', got '" +
                                           label + "'");
    }
    if (!csv::is_missing(row[d_col])) {
      auto d = csv::parse_double(row[d_col]);
      if (!d) throw Error(ErrorCode::BadProbability, where + ": unparsable d_star");
      u.d_star = *d;
    }
    for (std::size_t j = 0; j < aux_cols.size(); ++j) {
      const auto& cell = row[aux_cols[j]];
      if (csv::is_missing(cell)) {
        throw Error(ErrorCode::MissingAuxiliary, where + ": missing '" + roles.auxiliary[j] + "'");
      }
      auto v = csv::parse_double(cell);
      if (!v) throw Error(ErrorCode::BadValue, where + ": non-numeric '" + roles.auxiliary[j] + "'");
      if (binary[j] && *v != 0.0 && *v != 1.0) {
        throw Error(ErrorCode::BadValue,
                    where + ": binary '" + roles.auxiliary[j] + "' must be coded 0/1");
      }
      u.x.push_back(*v);
    }
    for (std::size_t j = 0; j < out_cols.size(); ++j) {
      const auto& cell = row[out_cols[j]];
      if (csv::is_missing(cell)) {
        u.y.push_back(kNaN);
        continue;
      }
      auto v = csv::parse_double(cell);
      if (!v) throw Error(ErrorCode::BadValue, where + ": non-numeric '" + roles.outcomes[j] + "'");
      u.y.push_back(*v);
    }
    if (r_col && !csv::is_missing(row[*r_col])) {
      auto v = csv::parse_double(row[*r_col]);
      if (!v) throw Error(ErrorCode::BadProbability, where + ": unparsable response probability");
      u.r_hat = *v;
    }
    units.push_back(std::move(u));
  }
  return Dataset::from_units(Schema{roles.auxiliary, roles.outcomes}, std::move(units));
}

void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  const bool with_r = ds.has_response_column();
  std::vector<std::string> header{"id", "sample", "d_star"};
  for (const auto& a : ds.schema().auxiliary) header.push_back(a);
  for (const auto& y : ds.schema().outcomes) header.push_back(y);
  if (with_r) header.push_back("r_hat");
  csv::write_row(out, header);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Unit u = ds.unit(i);
    std::vector<std::string> row{u.id, u.membership == Membership::Prob ? "prob" : "conv",
                                 u.d_star ? csv::format(*u.d_star) : "NA"};
    for (double v : u.x) row.push_back(csv::format(v));
    for (double v : u.y) row.push_back(csv::format(v));
    if (with_r) row.push_back(u.r_hat ? csv::format(*u.r_hat) : "NA");
    csv::write_row(out, row);
  }
}

DesignMatrix design_matrix(const Dataset& ds, const std::vector<std::string>& vars,
                           bool add_intercept) {
  std::vector<std::size_t> cols;
  cols.reserve(vars.size());
  for (const auto& v : vars) cols.push_back(ds.aux_index(v));

  DesignMatrix dm;
  const auto n = static_cast<Eigen::Index>(ds.size());
  const Eigen::Index offset = add_intercept ? 1 : 0;
  dm.X.resize(n, offset + static_cast<Eigen::Index>(cols.size()));
  if (add_intercept) {
    dm.X.col(0).setOnes();
    dm.columns.emplace_back(kInterceptName);
  }
  for (std::size_t j = 0; j < cols.size(); ++j) {
    dm.X.col(offset + static_cast<Eigen::Index>(j)) =
        ds.aux().col(static_cast<Eigen::Index>(cols[j]));
    dm.columns.push_back(vars[j]);
  }
  dm.rows.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) dm.rows[i] = i;
  return dm;
}

}  // namespace blend
