#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridrisk/grid.hpp"
#include "gridrisk/surrogate.hpp"
#include "gridrisk/util.hpp"

namespace gridrisk {

// Probability that the true flow of one line exceeds its limit, given the
// surrogate's point prediction and the line's residual spread on held-out
// data. The residual is treated as centered Gaussian noise around the
// prediction; with no spread the score collapses to a hard threshold.
inline double line_overload_probability(double f_hat, double limit_mw, double sigma) {
    if (!(limit_mw > 0.0)) throw ValidationError("thermal limit must be positive");
    if (!(sigma >= 0.0)) throw ValidationError("residual sigma must be non-negative");
    if (sigma == 0.0) {
        if (f_hat > limit_mw) return 1.0;
        if (f_hat < limit_mw) return 0.0;
        return 0.5;
    }
    return 0.5 * std::erfc((limit_mw - f_hat) / (sigma * std::numbers::sqrt2));
}

// Per-line residual spread: root mean squared prediction error against the
// exact solver, line by line, over every record where the truth is defined.
// Lines that never carry a defined truth get zero spread.
inline Eigen::VectorXd residual_sigma(const std::vector<Eigen::VectorXd>& predicted,
                                      const std::vector<Eigen::VectorXd>& truth) {
    if (predicted.size() != truth.size() || predicted.empty())
        throw ValidationError("residual estimation needs matching non-empty prediction/truth pairs");
    const Eigen::Index n = predicted.front().size();
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(n);
    for (std::size_t r = 0; r < predicted.size(); ++r) {
        if (predicted[r].size() != n || truth[r].size() != n)
            throw ValidationError("residual estimation got inconsistent vector sizes");
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!std::isfinite(truth[r][i])) continue;
            double d = predicted[r][i] - truth[r][i];
            sq[i] += d * d;
            count[i] += 1.0;
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) sq[i] = count[i] > 0.0 ? std::sqrt(sq[i] / count[i]) : 0.0;
    return sq;
}

// Mean optimism of the raw score against observed losses; subtracted (and
// clamped at zero) before scores are used.
inline double score_bias(const std::vector<double>& aux_scores, const std::vector<int>& true_losses) {
    if (aux_scores.size() != true_losses.size() || aux_scores.empty())
        throw ValidationError("bias estimation needs matching non-empty score/loss pairs");
    double mean_aux = 0.0, mean_loss = 0.0;
    for (double a : aux_scores) mean_aux += a;
    for (int l : true_losses) {
        if (l != 0 && l != 1) throw ValidationError("losses must be 0 or 1 for bias estimation");
        mean_loss += l;
    }
    return (mean_aux - mean_loss) / static_cast<double>(aux_scores.size());
}

struct ScoredContingency {
    Contingency z;
    double aux = 0.0;    // raw: worst per-line overload probability
    double l_hat = 0.0;  // bias-corrected loss estimate
    double s_hat = 0.0;  // l_hat times the contingency probability
};

// Raw severity of one contingency: the worst overload probability over the
// lines that remain in service.
inline double contingency_score_aux(const Eigen::VectorXd& f_hat, const Eigen::VectorXd& limits_mw,
                                    const Eigen::VectorXd& sigma, const std::vector<int>& outed) {
    if (f_hat.size() != limits_mw.size() || f_hat.size() != sigma.size())
        throw ValidationError("flow, limit, and sigma vectors must align");
    double worst = 0.0;
    for (Eigen::Index i = 0; i < f_hat.size(); ++i) {
        if (std::find(outed.begin(), outed.end(), static_cast<int>(i)) != outed.end()) continue;
        worst = std::max(worst, line_overload_probability(f_hat[i], limits_mw[i], sigma[i]));
    }
    return worst;
}

inline std::vector<ScoredContingency> score_contingencies(const BatchPredictor& predictor,
                                                          const std::vector<Contingency>& zs,
                                                          const Eigen::VectorXd& limits_mw,
                                                          const Eigen::VectorXd& sigma, double bias) {
    std::vector<ScoredContingency> scored;
    scored.reserve(zs.size());
    for (const Contingency& z : zs) {
        ScoredContingency sc;
        sc.z = z;
        std::vector<int> outed = z.outed_lines();
        Eigen::VectorXd f_hat = predictor.predict(outed);
        sc.aux = contingency_score_aux(f_hat, limits_mw, sigma, outed);
        sc.l_hat = std::max(sc.aux - bias, 0.0);
        sc.s_hat = sc.l_hat * z.probability;
        scored.push_back(sc);
    }
    return scored;
}

// Severity order: estimated risk first, then raw probability (a single
// outranks an equally scored pair), then canonical order. Returns the
// permutation, most severe first.
inline std::vector<int> rank_by_severity(const std::vector<ScoredContingency>& scored) {
    std::vector<int> order(scored.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const ScoredContingency& x = scored[static_cast<std::size_t>(a)];
        const ScoredContingency& y = scored[static_cast<std::size_t>(b)];
        if (x.s_hat != y.s_hat) return x.s_hat > y.s_hat;
        if (x.z.probability != y.z.probability) return x.z.probability > y.z.probability;
        return canonical_less(x.z, y.z);
    });
    return order;
}

// Total risk from exact losses, summed in the caller's (canonical) order so
// the value is reproducible bit for bit.
inline double true_total_risk(const std::vector<Contingency>& zs, const std::vector<int>& losses) {
    if (zs.size() != losses.size()) throw ValidationError("one loss per contingency is required");
    double total = 0.0;
    for (std::size_t k = 0; k < zs.size(); ++k) {
        if (losses[k] != 0 && losses[k] != 1)
            throw ValidationError("loss must be 0 or 1; apply limits before risk aggregation");
        total += zs[k].probability * losses[k];
    }
    return total;
}

// Budget sweep along a ranking. At budget k the k most severe contingencies
// have been handed to the exact solver, the rest keep their estimate:
//   hybrid[k]        total risk with the first k terms replaced by the truth
//   residual_true[k] exact risk still hiding past the first k
//   residual_hat[k]  estimated risk past the first k
// Residuals are suffix sums accumulated from the tail, so adding one more
// non-negative term at the front can never lower them: monotonicity holds in
// exact IEEE arithmetic, not only approximately.
struct RiskCurves {
    std::vector<double> hybrid;
    std::vector<double> residual_true;
    std::vector<double> residual_hat;
    double r_max_hat = 0.0;  // estimated total risk, equal to residual_hat[0]
};

inline RiskCurves risk_curves(const std::vector<ScoredContingency>& scored,
                              const std::vector<int>& ranking, const std::vector<int>& losses,
                              int k_max) {
    const std::size_t m = scored.size();
    if (ranking.size() != m || losses.size() != m)
        throw ValidationError("scored list, ranking, and losses must align");
    if (k_max < 0) throw ValidationError("budget must be non-negative");
    std::size_t km = std::min(static_cast<std::size_t>(k_max), m);

    std::vector<double> suffix_true(m + 1, 0.0), suffix_hat(m + 1, 0.0), prefix_true(m + 1, 0.0);
    for (std::size_t j = m; j-- > 0;) {
        int idx = ranking[j];
        const ScoredContingency& sc = scored[static_cast<std::size_t>(idx)];
        int loss = losses[static_cast<std::size_t>(idx)];
        if (loss != 0 && loss != 1) throw ValidationError("loss must be 0 or 1 in risk curves");
        suffix_true[j] = suffix_true[j + 1] + sc.z.probability * loss;
        suffix_hat[j] = suffix_hat[j + 1] + sc.s_hat;
    }
    for (std::size_t j = 0; j < m; ++j) {
        int idx = ranking[j];
        prefix_true[j + 1] =
            prefix_true[j] + scored[static_cast<std::size_t>(idx)].z.probability *
                                 losses[static_cast<std::size_t>(idx)];
    }

    RiskCurves curves;
    curves.r_max_hat = suffix_hat[0];
    curves.hybrid.resize(km + 1);
    curves.residual_true.resize(km + 1);
    curves.residual_hat.resize(km + 1);
    for (std::size_t k = 0; k <= km; ++k) {
        curves.hybrid[k] = prefix_true[k] + suffix_hat[k];
        curves.residual_true[k] = suffix_true[k];
        curves.residual_hat[k] = suffix_hat[k];
    }
    return curves;
}

// Mean absolute percentage error. Pairs with zero truth have no defined
// percentage and are excluded but reported.
struct MapeResult {
    double mape = 0.0;
    int counted = 0;
    int excluded_zero_truth = 0;
};

inline MapeResult mape_of(const std::vector<double>& estimates, const std::vector<double>& truths) {
    if (estimates.size() != truths.size() || estimates.empty())
        throw ValidationError("MAPE needs matching non-empty estimate/truth pairs");
    MapeResult r;
    double sum = 0.0;
    for (std::size_t k = 0; k < truths.size(); ++k) {
        if (truths[k] == 0.0) {
            ++r.excluded_zero_truth;
            continue;
        }
        sum += std::abs(estimates[k] - truths[k]) / std::abs(truths[k]);
        ++r.counted;
    }
    r.mape = r.counted > 0 ? sum / r.counted : 0.0;
    return r;
}

// Linear-interpolation quantile on a copy of the data.
inline double quantile_of(std::vector<double> v, double p) {
    if (v.empty()) throw ValidationError("quantile needs data");
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("quantile fraction must be in [0, 1]");
    std::sort(v.begin(), v.end());
    double pos = p * static_cast<double>(v.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + (pos - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

inline double pearson_of(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw ValidationError("correlation needs at least two aligned pairs");
    double ma = 0.0, mb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        ma += a[k];
        mb += b[k];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(a.size());
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        double da = a[k] - ma, db = b[k] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (!(va > 0.0) || !(vb > 0.0)) return 0.0;
    return cov / std::sqrt(va * vb);
}

}  // namespace gridrisk
