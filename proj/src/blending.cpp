#include "blend/blending.hpp"

#include "blend/csv.hpp"
#include "blend/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

namespace blend {

std::string_view scheme_name(Scheme s) {
  switch (s) {
    case Scheme::SPS: return "SPS";
    case Scheme::DPS: return "DPS";
    case Scheme::SC: return "SC";
    case Scheme::DC: return "DC";
    case Scheme::DesignOnly: return "DESIGN_ONLY";
  }
  return "?";
}

Scheme parse_scheme(std::string_view text) {
  std::string up(text);
  std::transform(up.begin(), up.end(), up.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  for (Scheme s : {Scheme::SPS, Scheme::DPS, Scheme::SC, Scheme::DC, Scheme::DesignOnly}) {
    if (up == scheme_name(s)) return s;
  }
  throw Error(ErrorCode::BadSpec, "unknown weighting scheme '" + std::string(text) + "'");
}

WeightSet sps_weights(const InclusionProbs& probs) {
  WeightSet ws;
  ws.scheme = Scheme::SPS;
  ws.weights.resize(probs.p_hat.size());
  for (Eigen::Index i = 0; i < probs.p_hat.size(); ++i) {
    if (!(probs.p_hat(i) > 0.0)) throw Error(ErrorCode::BadProbability, "p_hat must be positive");
    ws.weights(i) = 1.0 / probs.p_hat(i);
  }
  return ws;
}

double kish_kappa(const Eigen::VectorXd& s1_weights, const Eigen::VectorXd& s2_weights) {
  if (s1_weights.size() == 0 || s2_weights.size() == 0) {
    throw Error(ErrorCode::EmptySample, "kappa needs weights from both samples");
  }
  const double a1 = s1_weights.sum();
  const double a2 = s1_weights.squaredNorm();
  const double b1 = s2_weights.sum();
  const double b2 = s2_weights.squaredNorm();
  return (a1 * b2) / (a1 * b2 + a2 * b1);
}

double kish_deff(const Eigen::VectorXd& weights) {
  if (weights.size() == 0) throw Error(ErrorCode::NotEnoughUnits, "deff of empty weight vector");
  const double s = weights.sum();
  return static_cast<double>(weights.size()) * weights.squaredNorm() / (s * s);
}

WeightSet mix_disjoint(Scheme scheme, const std::vector<Membership>& membership,
                       const Eigen::VectorXd& s1_weights, const Eigen::VectorXd& s2_weights,
                       Kappa kappa) {
  const double k = kappa ? *kappa : kish_kappa(s1_weights, s2_weights);
  if (!(k >= 0.0 && k <= 1.0)) throw Error(ErrorCode::BadSpec, "kappa must lie in [0,1]");
  WeightSet ws;
  ws.scheme = scheme;
  ws.kappa = k;
  ws.weights.resize(static_cast<Eigen::Index>(membership.size()));
  Eigen::Index a = 0;
  Eigen::Index b = 0;
  for (std::size_t i = 0; i < membership.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    if (membership[i] == Membership::Prob) {
      ws.weights(r) = k * s1_weights(a++);
    } else {
      ws.weights(r) = (1.0 - k) * s2_weights(b++);
    }
  }
  if (a != s1_weights.size() || b != s2_weights.size()) {
    throw Error(ErrorCode::BadValue, "per-sample weight lengths do not match membership");
  }
  return ws;
}

WeightSet dps_weights(const InclusionProbs& probs, Kappa kappa) {
  std::vector<double> a;
  std::vector<double> b;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    if (probs.membership[i] == Membership::Prob) {
      a.push_back(1.0 / probs.d_hat(r));
    } else {
      if (!(probs.q_hat(r) > 0.0)) {
        throw Error(ErrorCode::ZeroConvenienceProb,
                    "q_hat is zero for a convenience unit; disjoint weights need positivity");
      }
      b.push_back(1.0 / probs.q_hat(r));
    }
  }
  return mix_disjoint(Scheme::DPS, probs.membership,
                      Eigen::Map<Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size())),
                      Eigen::Map<Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size())),
                      kappa);
}

double quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw Error(ErrorCode::NotEnoughUnits, "quantile of empty vector");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

WeightSet trim_weights(const WeightSet& ws, double pct) {
  if (!(pct >= 0.0 && pct < 0.5)) throw Error(ErrorCode::BadSpec, "trim fraction must lie in [0, 0.5)");
  WeightSet out = ws;
  if (pct == 0.0 || ws.weights.size() == 0) return out;

  std::vector<double> v(ws.weights.data(), ws.weights.data() + ws.weights.size());
  const double low = quantile(v, pct);
  const double high = quantile(v, 1.0 - pct);
  const double total = ws.weights.sum();

  double clamped_sum = 0.0;
  double interior_sum = 0.0;
  std::vector<bool> clamped(v.size(), false);
  for (Eigen::Index i = 0; i < out.weights.size(); ++i) {
    double& w = out.weights(i);
    if (w < low) {
      w = low;
      clamped[static_cast<std::size_t>(i)] = true;
      clamped_sum += w;
    } else if (w > high) {
      w = high;
      clamped[static_cast<std::size_t>(i)] = true;
      clamped_sum += w;
    } else {
      interior_sum += w;
    }
  }
  if (interior_sum > 0.0 && total - clamped_sum > 0.0) {
    const double scale = (total - clamped_sum) / interior_sum;
    for (Eigen::Index i = 0; i < out.weights.size(); ++i) {
      if (!clamped[static_cast<std::size_t>(i)]) out.weights(i) *= scale;
    }
  } else {
    out.weights *= total / out.weights.sum();
  }
  out.trimmed = true;
  out.trim_bounds = std::make_pair(low, high);
  return out;
}

void write_weights(const std::string& path, const std::vector<std::string>& ids,
                   const WeightSet& ws) {
  if (ids.size() != ws.size()) throw Error(ErrorCode::BadValue, "ids and weights differ in length");
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  csv::write_row(out, {"id", "scheme", "weight", "trimmed"});
  const std::string scheme(scheme_name(ws.scheme));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    csv::write_row(out, {ids[i], scheme, csv::format(ws.weights(static_cast<Eigen::Index>(i))),
                         ws.trimmed ? "1" : "0"});
  }
}

}  // namespace blend
