#include "hte/causal_mars.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

#include "hte/threading.hpp"

namespace hte {

namespace {

constexpr double kRidge = 1e-8;

/// A hinge side enters a stratum's fits only when each arm holds min_span
/// supported rows AND at least this share of the side's pooled squared
/// values; otherwise a near-empty arm fits an interpolating slope that
/// extrapolates onto the other arm's range.
constexpr double kArmEnergyShare = 0.02;

inline bool arm_gate(int n0, int n1, double a0, double a1, int min_span) {
  if (n0 < min_span || n1 < min_span) return false;
  const double pooled = a0 + a1;
  return a0 >= kArmEnergyShare * pooled && a1 >= kArmEnergyShare * pooled;
}

/// Regression-gain of a single term with proportional ridge: keeps the
/// arm-specific-vs-shared nesting inequality exact.
inline double ridge_gain(double w, double a) {
  return a > 0.0 ? w * w / ((1.0 + kRidge) * a) : 0.0;
}

/// Cholesky solve of (G + lambda I) beta = rhs; G is m x m row-major
/// symmetric positive semidefinite. Returns false when the factorization
/// fails even with the ridge.
bool ridge_solve(std::vector<double> G, std::vector<double> rhs, int m,
                 std::vector<double>& beta) {
  double trace = 0.0;
  for (int i = 0; i < m; ++i) trace += G[static_cast<std::size_t>(i * m + i)];
  const double lambda = kRidge * (trace / std::max(1, m)) + 1e-12;
  for (int i = 0; i < m; ++i) G[static_cast<std::size_t>(i * m + i)] += lambda;

  // In-place Cholesky, lower triangle.
  for (int j = 0; j < m; ++j) {
    double diag = G[static_cast<std::size_t>(j * m + j)];
    for (int k = 0; k < j; ++k) {
      const double v = G[static_cast<std::size_t>(j * m + k)];
      diag -= v * v;
    }
    if (!(diag > 0.0)) return false;
    const double root = std::sqrt(diag);
    G[static_cast<std::size_t>(j * m + j)] = root;
    for (int i = j + 1; i < m; ++i) {
      double v = G[static_cast<std::size_t>(i * m + j)];
      for (int k = 0; k < j; ++k) {
        v -= G[static_cast<std::size_t>(i * m + k)] * G[static_cast<std::size_t>(j * m + k)];
      }
      G[static_cast<std::size_t>(i * m + j)] = v / root;
    }
  }
  // Forward then backward substitution.
  for (int i = 0; i < m; ++i) {
    double v = rhs[static_cast<std::size_t>(i)];
    for (int k = 0; k < i; ++k)
      v -= G[static_cast<std::size_t>(i * m + k)] * rhs[static_cast<std::size_t>(k)];
    rhs[static_cast<std::size_t>(i)] = v / G[static_cast<std::size_t>(i * m + i)];
  }
  beta.assign(static_cast<std::size_t>(m), 0.0);
  for (int i = m - 1; i >= 0; --i) {
    double v = rhs[static_cast<std::size_t>(i)];
    for (int k = i + 1; k < m; ++k)
      v -= G[static_cast<std::size_t>(k * m + i)] * beta[static_cast<std::size_t>(k)];
    beta[static_cast<std::size_t>(i)] = v / G[static_cast<std::size_t>(i * m + i)];
  }
  return true;
}

struct FitContext {
  const Dataset& d;
  MarsParams params;  // min_span resolved
  std::vector<int> strata;  // 1-based labels
  int S = 1;
  std::vector<double> stratum_count;              // n_s over the fitting data
  std::vector<std::vector<double>> knots;         // ascending, per feature
  std::vector<std::vector<std::size_t>> order;    // rows by descending feature value
};

FitContext make_context(const Dataset& d, const MarsParams& params,
                        const StrataAssignment* sa) {
  FitContext ctx{d, params, {}, 1, {}, {}, {}};
  ctx.params.min_span = effective_min_span(params, d.p());
  if (sa != nullptr) {
    if (sa->strata.size() != d.n()) fail("dimension-mismatch", "strata length != n");
    ctx.strata = sa->strata;
    ctx.S = sa->S;
  } else {
    ctx.strata.assign(d.n(), 1);
  }
  ctx.stratum_count.assign(static_cast<std::size_t>(ctx.S), 0.0);
  for (int s : ctx.strata) ctx.stratum_count[static_cast<std::size_t>(s - 1)] += 1.0;

  const std::size_t p = d.p();
  ctx.knots.resize(p);
  ctx.order.resize(p);
  for (std::size_t j = 0; j < p; ++j) {
    const auto col = d.features.col(j);
    std::vector<double> vals(col.begin(), col.end());
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    const int cap = std::max(2, params.knots_per_feature);
    if (static_cast<int>(vals.size()) > cap) {
      std::vector<double> picked(static_cast<std::size_t>(cap));
      for (int k = 0; k < cap; ++k) {
        const double q = static_cast<double>(k) / static_cast<double>(cap - 1);
        const auto idx = static_cast<std::size_t>(
            std::llround(q * static_cast<double>(vals.size() - 1)));
        picked[static_cast<std::size_t>(k)] = vals[idx];
      }
      picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
      vals = std::move(picked);
    }
    ctx.knots[j] = std::move(vals);

    std::vector<std::size_t> ord(d.n());
    std::iota(ord.begin(), ord.end(), std::size_t{0});
    std::stable_sort(ord.begin(), ord.end(),
                     [&col](std::size_t a, std::size_t b) { return col[a] > col[b]; });
    ctx.order[j] = std::move(ord);
  }
  return ctx;
}

/// Per (arm, stratum) sweep accumulators for one candidate (basis, feature):
/// Q = sum b^2, Qx = sum b^2 x, Qxx = sum b^2 x^2, P = sum b R, Px = sum b x R.
struct SweepCell {
  double Q = 0.0, Qx = 0.0, Qxx = 0.0, P = 0.0, Px = 0.0;
  int cnt = 0;
};

struct BestCandidate {
  double criterion = -1.0;
  int basis_index = -1;
  int feature = -1;
  double knot = 0.0;
  bool found = false;
};

class ForwardPass {
 public:
  ForwardPass(const FitContext& ctx) : ctx_(ctx), n_(ctx.d.n()) {
    cells_ = static_cast<std::size_t>(ctx.S) * 2;
  }

  /// Scores all admissible (basis, feature, knot) pairs against the current
  /// residuals; returns the best and (when recording) the full score list.
  BestCandidate scan(const std::vector<std::vector<double>>& basis_vals,
                     const std::vector<BasisFunction>& basis,
                     std::span<const double> residual, bool record,
                     std::vector<MarsCandidateScore>& scores) {
    BestCandidate best;
    scores.clear();
    std::vector<SweepCell> total(cells_), suffix(cells_);

    for (std::size_t b = 0; b < basis.size(); ++b) {
      if (basis[b].degree() >= ctx_.params.max_degree) continue;
      const std::vector<double>& bv = basis_vals[b];
      for (std::size_t j = 0; j < ctx_.d.p(); ++j) {
        if (basis[b].uses_feature(static_cast<int>(j))) continue;
        const auto col = ctx_.d.features.col(j);

        std::fill(total.begin(), total.end(), SweepCell{});
        for (std::size_t i = 0; i < n_; ++i) {
          const double bi = bv[i];
          if (bi == 0.0) continue;
          SweepCell& c = total[cell_of(i)];
          const double x = col[i];
          const double b2 = bi * bi;
          const double br = bi * residual[i];
          c.Q += b2;
          c.Qx += b2 * x;
          c.Qxx += b2 * x * x;
          c.P += br;
          c.Px += br * x;
          ++c.cnt;
        }

        std::fill(suffix.begin(), suffix.end(), SweepCell{});
        const auto& ord = ctx_.order[j];
        const auto& knots = ctx_.knots[j];
        std::vector<int> eq_cnt(cells_);
        std::size_t pos = 0;
        for (auto it = knots.rbegin(); it != knots.rend(); ++it) {
          const double c = *it;
          while (pos < n_ && col[ord[pos]] > c) {
            const std::size_t i = ord[pos];
            const double bi = bv[i];
            if (bi != 0.0) {
              SweepCell& sc = suffix[cell_of(i)];
              const double x = col[i];
              const double b2 = bi * bi;
              const double br = bi * residual[i];
              sc.Q += b2;
              sc.Qx += b2 * x;
              sc.Qxx += b2 * x * x;
              sc.P += br;
              sc.Px += br * x;
              ++sc.cnt;
            }
            ++pos;
          }
          // Rows sitting exactly at the knot support neither hinge.
          std::fill(eq_cnt.begin(), eq_cnt.end(), 0);
          for (std::size_t q = pos; q < n_ && col[ord[q]] == c; ++q) {
            if (bv[ord[q]] != 0.0) ++eq_cnt[cell_of(ord[q])];
          }
          const double criterion = score_at(total, suffix, eq_cnt, c);
          if (record)
            scores.push_back({static_cast<int>(b), static_cast<int>(j), c, criterion});
          if (criterion > best.criterion) {
            best.criterion = criterion;
            best.basis_index = static_cast<int>(b);
            best.feature = static_cast<int>(j);
            best.knot = c;
            best.found = true;
          }
        }
      }
    }
    return best;
  }

 private:
  std::size_t cell_of(std::size_t i) const {
    return static_cast<std::size_t>(ctx_.strata[i] - 1) * 2 +
           static_cast<std::size_t>(ctx_.d.treatment[i]);
  }

  /// Criterion sum_s n_s * dRSS_s for the hinge pair at knot c given the
  /// suffix (x > c) and total accumulators. A hinge side participates in a
  /// stratum only when both arms have at least min_span supported units
  /// there; the gate applies equally to the shared and arm-specific fits,
  /// which keeps dRSS_s >= 0 exact.
  double score_at(const std::vector<SweepCell>& total, const std::vector<SweepCell>& suffix,
                  const std::vector<int>& eq_cnt, double c) const {
    const int min_span = ctx_.params.min_span;
    double criterion = 0.0;
    for (int s = 0; s < ctx_.S; ++s) {
      double w_up[2], a_up[2], w_dn[2], a_dn[2];
      int n_up[2], n_dn[2];
      for (int t = 0; t < 2; ++t) {
        const std::size_t cell = static_cast<std::size_t>(s) * 2 + static_cast<std::size_t>(t);
        const SweepCell& sf = suffix[cell];
        const SweepCell& tt = total[cell];
        // (x - c)+ over the suffix.
        a_up[t] = sf.Qxx - 2.0 * c * sf.Qx + c * c * sf.Q;
        w_up[t] = sf.Px - c * sf.P;
        n_up[t] = sf.cnt;
        // (c - x)+ over the prefix; rows with x == c cancel to zero.
        const double Q = tt.Q - sf.Q, Qx = tt.Qx - sf.Qx, Qxx = tt.Qxx - sf.Qxx;
        const double P = tt.P - sf.P, Px = tt.Px - sf.Px;
        a_dn[t] = c * c * Q - 2.0 * c * Qx + Qxx;
        w_dn[t] = c * P - Px;
        n_dn[t] = tt.cnt - sf.cnt - eq_cnt[cell];
      }
      double red_tau = 0.0, red_mu = 0.0;
      if (arm_gate(n_up[0], n_up[1], a_up[0], a_up[1], min_span)) {
        red_tau += ridge_gain(w_up[0], a_up[0]) + ridge_gain(w_up[1], a_up[1]);
        red_mu += ridge_gain(w_up[0] + w_up[1], a_up[0] + a_up[1]);
      }
      if (arm_gate(n_dn[0], n_dn[1], a_dn[0], a_dn[1], min_span)) {
        red_tau += ridge_gain(w_dn[0], a_dn[0]) + ridge_gain(w_dn[1], a_dn[1]);
        red_mu += ridge_gain(w_dn[0] + w_dn[1], a_dn[0] + a_dn[1]);
      }
      criterion += ctx_.stratum_count[static_cast<std::size_t>(s)] * (red_tau - red_mu);
    }
    return criterion;
  }

  const FitContext& ctx_;
  std::size_t n_;
  std::size_t cells_ = 2;
};

/// Joint arm- and stratum-specific least squares of y on the given basis
/// columns, plus the per-stratum arm-shared fit, to evaluate the deletion
/// criterion sum_s n_s (RSS_mu,s - RSS_tau,s) on arbitrary subsets.
class JointFitter {
 public:
  JointFitter(const FitContext& ctx, const std::vector<std::vector<double>>& basis_vals,
              std::span<const double> y, std::span<const std::size_t> rows)
      : ctx_(ctx), basis_vals_(basis_vals), y_(y), rows_(rows.begin(), rows.end()) {
    m_ = static_cast<int>(basis_vals.size());
    const std::size_t S = static_cast<std::size_t>(ctx.S);
    gram_.assign(S * 2, std::vector<double>(static_cast<std::size_t>(m_ * m_), 0.0));
    rhs_.assign(S * 2, std::vector<double>(static_cast<std::size_t>(m_), 0.0));
    ysq_.assign(S * 2, 0.0);
    count_.assign(S * 2, 0.0);
    std::vector<std::vector<int>> nonzero(S * 2, std::vector<int>(static_cast<std::size_t>(m_), 0));

    for (std::size_t r : rows_) {
      const std::size_t cell = cell_of(r);
      auto& G = gram_[cell];
      auto& v = rhs_[cell];
      for (int a = 0; a < m_; ++a) {
        const double xa = basis_vals_[static_cast<std::size_t>(a)][r];
        if (xa == 0.0) continue;
        ++nonzero[cell][static_cast<std::size_t>(a)];
        v[static_cast<std::size_t>(a)] += xa * y_[r];
        for (int b = a; b < m_; ++b) {
          G[static_cast<std::size_t>(a * m_ + b)] +=
              xa * basis_vals_[static_cast<std::size_t>(b)][r];
        }
      }
      ysq_[cell] += y_[r] * y_[r];
      count_[cell] += 1.0;
    }
    for (auto& G : gram_) {
      for (int a = 0; a < m_; ++a) {
        for (int b = 0; b < a; ++b) {
          G[static_cast<std::size_t>(a * m_ + b)] = G[static_cast<std::size_t>(b * m_ + a)];
        }
      }
    }
    // A non-constant column joins a stratum's fits only when both arms give
    // it min_span supported rows there; the gate binds the shared and
    // arm-specific fits equally.
    alive_.assign(S, std::vector<std::uint8_t>(static_cast<std::size_t>(m_), 0));
    for (std::size_t s = 0; s < S; ++s) {
      for (int a = 0; a < m_; ++a) {
        const double e0 = gram_[s * 2][static_cast<std::size_t>(a * m_ + a)];
        const double e1 = gram_[s * 2 + 1][static_cast<std::size_t>(a * m_ + a)];
        const bool ok = a == 0 || arm_gate(nonzero[s * 2][static_cast<std::size_t>(a)],
                                           nonzero[s * 2 + 1][static_cast<std::size_t>(a)], e0,
                                           e1, ctx.params.min_span);
        alive_[s][static_cast<std::size_t>(a)] = ok ? 1 : 0;
      }
    }
  }

  /// Criterion over a basis subset (indices into the full basis).
  double criterion(const std::vector<int>& subset) const {
    double total = 0.0;
    for (int s = 0; s < ctx_.S; ++s) {
      const double ns = stratum_rows(s);
      if (ns == 0.0) continue;
      const std::vector<int> kept = filter_alive(s, subset);
      const double rss_tau = cell_rss(cell_index(s, 0), kept) + cell_rss(cell_index(s, 1), kept);
      const double rss_mu = shared_rss(s, kept);
      total += ns * (rss_mu - rss_tau);
    }
    return total;
  }

  /// Arm-specific coefficients per stratum for a basis subset; gated-out
  /// columns keep zero coefficients.
  void coefficients(const std::vector<int>& subset, std::vector<std::vector<double>>& coef1,
                    std::vector<std::vector<double>>& coef0) const {
    const auto S = static_cast<std::size_t>(ctx_.S);
    const std::size_t k = subset.size();
    coef1.assign(S, std::vector<double>(k, 0.0));
    coef0.assign(S, std::vector<double>(k, 0.0));
    std::vector<double> beta;
    for (int s = 0; s < ctx_.S; ++s) {
      const std::vector<int> kept = filter_alive(s, subset);
      std::vector<std::size_t> where;  // positions of kept columns inside subset
      for (std::size_t a = 0; a < k; ++a) {
        if (alive_[static_cast<std::size_t>(s)][static_cast<std::size_t>(subset[a])]) {
          where.push_back(a);
        }
      }
      for (int t = 0; t < 2; ++t) {
        if (cell_beta(cell_index(s, t), kept, beta)) {
          auto& dst = (t == 1 ? coef1 : coef0)[static_cast<std::size_t>(s)];
          for (std::size_t a = 0; a < kept.size(); ++a) dst[where[a]] = beta[a];
        }
      }
    }
  }

 private:
  std::size_t cell_of(std::size_t i) const {
    return static_cast<std::size_t>(ctx_.strata[i] - 1) * 2 +
           static_cast<std::size_t>(ctx_.d.treatment[i]);
  }
  static std::size_t cell_index(int s, int t) {
    return static_cast<std::size_t>(s) * 2 + static_cast<std::size_t>(t);
  }
  double stratum_rows(int s) const {
    return count_[cell_index(s, 0)] + count_[cell_index(s, 1)];
  }

  std::vector<int> filter_alive(int s, const std::vector<int>& subset) const {
    std::vector<int> kept;
    kept.reserve(subset.size());
    for (int idx : subset) {
      if (alive_[static_cast<std::size_t>(s)][static_cast<std::size_t>(idx)]) kept.push_back(idx);
    }
    return kept;
  }

  void gather(const std::vector<double>& G, const std::vector<double>& v,
              const std::vector<int>& subset, std::vector<double>& Gs,
              std::vector<double>& vs) const {
    const std::size_t k = subset.size();
    Gs.resize(k * k);
    vs.resize(k);
    for (std::size_t a = 0; a < k; ++a) {
      vs[a] = v[static_cast<std::size_t>(subset[a])];
      for (std::size_t b = 0; b < k; ++b) {
        Gs[a * k + b] = G[static_cast<std::size_t>(subset[a] * m_ + subset[b])];
      }
    }
  }

  bool cell_beta(std::size_t cell, const std::vector<int>& subset,
                 std::vector<double>& beta) const {
    if (count_[cell] == 0.0) return false;
    std::vector<double> Gs, vs;
    gather(gram_[cell], rhs_[cell], subset, Gs, vs);
    return ridge_solve(std::move(Gs), std::move(vs), static_cast<int>(subset.size()), beta);
  }

  double quad_rss(const std::vector<double>& Gs, const std::vector<double>& vs, double ysq,
                  const std::vector<double>& beta) const {
    const std::size_t k = beta.size();
    double rss = ysq;
    for (std::size_t a = 0; a < k; ++a) {
      rss -= 2.0 * beta[a] * vs[a];
      for (std::size_t b = 0; b < k; ++b) rss += beta[a] * Gs[a * k + b] * beta[b];
    }
    return std::max(0.0, rss);
  }

  double cell_rss(std::size_t cell, const std::vector<int>& subset) const {
    if (count_[cell] == 0.0) return 0.0;
    if (subset.empty()) return ysq_[cell];
    std::vector<double> Gs, vs, beta;
    gather(gram_[cell], rhs_[cell], subset, Gs, vs);
    if (!ridge_solve(Gs, vs, static_cast<int>(subset.size()), beta)) return ysq_[cell];
    return quad_rss(Gs, vs, ysq_[cell], beta);
  }

  double shared_rss(int s, const std::vector<int>& subset) const {
    const std::size_t c0 = cell_index(s, 0), c1 = cell_index(s, 1);
    if (count_[c0] + count_[c1] == 0.0) return 0.0;
    if (subset.empty()) return ysq_[c0] + ysq_[c1];
    const std::size_t k = subset.size();
    std::vector<double> Gs(k * k, 0.0), vs(k, 0.0), part, partv;
    for (std::size_t cell : {c0, c1}) {
      if (count_[cell] == 0.0) continue;
      gather(gram_[cell], rhs_[cell], subset, part, partv);
      for (std::size_t a = 0; a < k * k; ++a) Gs[a] += part[a];
      for (std::size_t a = 0; a < k; ++a) vs[a] += partv[a];
    }
    std::vector<double> beta;
    if (!ridge_solve(Gs, vs, static_cast<int>(k), beta)) return ysq_[c0] + ysq_[c1];
    return quad_rss(Gs, vs, ysq_[c0] + ysq_[c1], beta);
  }

  const FitContext& ctx_;
  const std::vector<std::vector<double>>& basis_vals_;
  std::span<const double> y_;
  std::vector<std::size_t> rows_;
  int m_ = 0;
  std::vector<std::vector<double>> gram_;  // per cell, m x m
  std::vector<std::vector<double>> rhs_;
  std::vector<double> ysq_;
  std::vector<double> count_;
  std::vector<std::vector<std::uint8_t>> alive_;  // [stratum][column]
};

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

/// Effects of a coefficient set at given rows.
std::vector<double> effects_at(const FitContext& ctx,
                               const std::vector<std::vector<double>>& basis_vals,
                               const std::vector<int>& subset,
                               const std::vector<std::vector<double>>& coef1,
                               const std::vector<std::vector<double>>& coef0,
                               std::span<const std::size_t> rows) {
  std::vector<double> out(rows.size(), 0.0);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t i = rows[k];
    const auto s = static_cast<std::size_t>(ctx.strata[i] - 1);
    double eff = 0.0;
    for (std::size_t a = 0; a < subset.size(); ++a) {
      const double v = basis_vals[static_cast<std::size_t>(subset[a])][i];
      eff += v * (coef1[s][a] - coef0[s][a]);
    }
    out[k] = eff;
  }
  return out;
}

}  // namespace

int effective_min_span(const MarsParams& params, std::size_t p) {
  if (params.min_span > 0) return params.min_span;
  const double scaled = 3.0 + std::log2(static_cast<double>(std::max<std::size_t>(p, 1)));
  return std::max(3, static_cast<int>(std::ceil(scaled)));
}

double BasisFunction::eval(std::span<const double> x) const {
  double v = 1.0;
  for (const HingeTerm& t : terms) {
    const double z = t.positive ? x[static_cast<std::size_t>(t.feature)] - t.knot
                                : t.knot - x[static_cast<std::size_t>(t.feature)];
    if (z <= 0.0) return 0.0;
    v *= z;
  }
  return v;
}

bool BasisFunction::uses_feature(int j) const {
  for (const HingeTerm& t : terms) {
    if (t.feature == j) return true;
  }
  return false;
}

std::pair<double, double> MarsModel::predict_means_in_stratum(std::span<const double> x,
                                                              int stratum) const {
  if (stratum < 1 || stratum > S) fail("missing-stratum", "stratum out of range");
  const auto s = static_cast<std::size_t>(stratum - 1);
  double m1 = 0.0, m0 = 0.0;
  for (std::size_t h = 0; h < basis.size(); ++h) {
    const double v = basis[h].eval(x);
    if (v == 0.0) continue;
    m1 += coef1[s][h] * v;
    m0 += coef0[s][h] * v;
  }
  return {m1, m0};
}

std::pair<double, double> MarsModel::predict_means(std::span<const double> x) const {
  if (S == 1) return predict_means_in_stratum(x, 1);
  if (!propensity_model)
    fail("missing-stratum", "stratified model needs a stratum or a propensity model");
  const double score = propensity_model->predict(x);
  int s = S;
  for (int k = 1; k < S; ++k) {
    if (score < strata_boundaries[static_cast<std::size_t>(k)]) {
      s = k;
      break;
    }
  }
  return predict_means_in_stratum(x, s);
}

MarsModel fit_causal_mars(const Dataset& d, const MarsParams& params,
                          const StrataAssignment* sa, Rng& rng,
                          const MarsStepObserver& observer) {
  validate_dataset(d);
  if (params.forward_pairs < 1) fail("invalid-params", "forward_pairs must be >= 1");
  if (params.max_degree < 1) fail("invalid-params", "max_degree must be >= 1");

  const FitContext ctx = make_context(d, params, sa);
  const std::size_t n = d.n();
  const std::size_t S = static_cast<std::size_t>(ctx.S);

  MarsModel model;
  model.S = ctx.S;
  if (sa != nullptr) model.strata_boundaries = sa->boundaries;

  model.basis.push_back(BasisFunction{});  // constant
  std::vector<std::vector<double>> basis_vals;
  basis_vals.emplace_back(n, 1.0);

  // Arm means per stratum; empty cells fall back to the arm's overall mean.
  std::vector<double> residual(d.response.begin(), d.response.end());
  {
    std::vector<double> sum(S * 2, 0.0), cnt(S * 2, 0.0);
    double g1 = 0.0, g0 = 0.0, n1 = 0.0, n0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t cell = static_cast<std::size_t>(ctx.strata[i] - 1) * 2 +
                               static_cast<std::size_t>(d.treatment[i]);
      sum[cell] += d.response[i];
      cnt[cell] += 1.0;
      if (d.treatment[i] == 1) {
        g1 += d.response[i];
        n1 += 1.0;
      } else {
        g0 += d.response[i];
        n0 += 1.0;
      }
    }
    g1 /= n1;
    g0 /= n0;
    model.coef1.assign(S, std::vector<double>(1, g1));
    model.coef0.assign(S, std::vector<double>(1, g0));
    for (std::size_t s = 0; s < S; ++s) {
      if (cnt[s * 2 + 1] > 0.0) model.coef1[s][0] = sum[s * 2 + 1] / cnt[s * 2 + 1];
      if (cnt[s * 2] > 0.0) model.coef0[s][0] = sum[s * 2] / cnt[s * 2];
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto s = static_cast<std::size_t>(ctx.strata[i] - 1);
      residual[i] -= d.treatment[i] == 1 ? model.coef1[s][0] : model.coef0[s][0];
    }
  }

  ForwardPass pass(ctx);
  std::vector<MarsCandidateScore> scores;
  const bool record = static_cast<bool>(observer);

  for (int step = 1; step <= params.forward_pairs; ++step) {
    const BestCandidate best = pass.scan(basis_vals, model.basis, residual, record, scores);
    if (!best.found) break;
    if (record) {
      std::size_t chosen = 0;
      for (std::size_t k = 0; k < scores.size(); ++k) {
        if (scores[k].basis_index == best.basis_index && scores[k].feature == best.feature &&
            scores[k].knot == best.knot) {
          chosen = k;
          break;
        }
      }
      observer(step, scores, chosen);
    }

    const BasisFunction& parent = model.basis[static_cast<std::size_t>(best.basis_index)];
    BasisFunction up = parent, down = parent;
    up.terms.push_back({best.feature, best.knot, true});
    down.terms.push_back({best.feature, best.knot, false});

    for (const BasisFunction* bf : {&up, &down}) {
      std::vector<double> vals(n);
      std::vector<double> x;
      for (std::size_t i = 0; i < n; ++i) {
        d.features.row(i, x);
        vals[i] = bf->eval(x);
      }
      // Per-cell one-dimensional ridge fit against the current residuals,
      // under the same per-stratum support gate the scoring used.
      std::vector<double> w(S * 2, 0.0), a(S * 2, 0.0);
      std::vector<int> cnt(S * 2, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const double v = vals[i];
        if (v == 0.0) continue;
        const std::size_t cell = static_cast<std::size_t>(ctx.strata[i] - 1) * 2 +
                                 static_cast<std::size_t>(d.treatment[i]);
        w[cell] += v * residual[i];
        a[cell] += v * v;
        ++cnt[cell];
      }
      for (std::size_t s = 0; s < S; ++s) {
        const bool alive =
            arm_gate(cnt[s * 2], cnt[s * 2 + 1], a[s * 2], a[s * 2 + 1], ctx.params.min_span);
        const double b1 =
            alive && a[s * 2 + 1] > 0.0 ? w[s * 2 + 1] / ((1.0 + kRidge) * a[s * 2 + 1]) : 0.0;
        const double b0 =
            alive && a[s * 2] > 0.0 ? w[s * 2] / ((1.0 + kRidge) * a[s * 2]) : 0.0;
        model.coef1[s].push_back(b1);
        model.coef0[s].push_back(b0);
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double v = vals[i];
        if (v == 0.0) continue;
        const auto s = static_cast<std::size_t>(ctx.strata[i] - 1);
        residual[i] -= v * (d.treatment[i] == 1 ? model.coef1[s].back() : model.coef0[s].back());
      }
      model.basis.push_back(*bf);
      basis_vals.push_back(std::move(vals));
    }
  }

  if (!params.backward_deletion) return model;

  // Backward deletion on the joint fit, then out-of-bag size selection.
  const std::vector<std::size_t> rows = all_rows(n);
  const JointFitter full(ctx, basis_vals, d.response, rows);

  std::vector<int> current(model.basis.size());
  std::iota(current.begin(), current.end(), 0);
  std::vector<std::vector<int>> path{current};
  while (current.size() > 1) {
    double best_q = -std::numeric_limits<double>::infinity();
    std::size_t best_drop = 1;
    for (std::size_t k = 1; k < current.size(); ++k) {  // never the constant
      std::vector<int> trial = current;
      trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(k));
      const double q = full.criterion(trial);
      if (q > best_q) {
        best_q = q;
        best_drop = k;
      }
    }
    current.erase(current.begin() + static_cast<std::ptrdiff_t>(best_drop));
    path.push_back(current);
  }

  // Out-of-bag comparison of every model on the deletion path against the
  // saturated re-fit on the held-out rows themselves.
  std::vector<double> path_err(path.size(), 0.0);
  Rng bag_base(rng.next());
  int used_bags = 0;
  for (int r = 0; r < params.size_select_bags; ++r) {
    Rng bag_rng = bag_base.child(static_cast<std::uint64_t>(r));
    std::vector<std::uint8_t> in(n, 0);
    std::vector<std::size_t> in_rows;
    in_rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = bag_rng.uniform_index(n);
      in[k] = 1;
      in_rows.push_back(k);
    }
    std::sort(in_rows.begin(), in_rows.end());
    std::vector<std::size_t> out_rows;
    for (std::size_t i = 0; i < n; ++i) {
      if (!in[i]) out_rows.push_back(i);
    }
    if (out_rows.size() < 4) continue;

    const JointFitter fit_in(ctx, basis_vals, d.response, in_rows);
    const JointFitter fit_out(ctx, basis_vals, d.response, out_rows);

    std::vector<std::vector<double>> c1, c0;
    fit_out.coefficients(path.front(), c1, c0);
    const std::vector<double> ref = effects_at(ctx, basis_vals, path.front(), c1, c0, out_rows);

    for (std::size_t m = 0; m < path.size(); ++m) {
      fit_in.coefficients(path[m], c1, c0);
      const std::vector<double> est = effects_at(ctx, basis_vals, path[m], c1, c0, out_rows);
      double err = 0.0;
      for (std::size_t k = 0; k < est.size(); ++k) {
        const double dd = est[k] - ref[k];
        err += dd * dd;
      }
      path_err[m] += err;
    }
    ++used_bags;
  }

  std::size_t chosen = 0;
  if (used_bags > 0) {
    // Ties resolve to the smaller model (later in the path).
    for (std::size_t m = 1; m < path.size(); ++m) {
      if (path_err[m] <= path_err[chosen]) chosen = m;
    }
  }

  const std::vector<int>& subset = path[chosen];
  std::vector<std::vector<double>> c1, c0;
  full.coefficients(subset, c1, c0);

  MarsModel pruned;
  pruned.S = model.S;
  pruned.strata_boundaries = model.strata_boundaries;
  for (int idx : subset) pruned.basis.push_back(model.basis[static_cast<std::size_t>(idx)]);
  pruned.coef1 = std::move(c1);
  pruned.coef0 = std::move(c0);
  return pruned;
}

std::pair<double, double> BaggedMars::predict_means_in_stratum(std::span<const double> x,
                                                               int stratum) const {
  double m1 = 0.0, m0 = 0.0;
  for (const auto& m : models) {
    const auto pr = m.predict_means_in_stratum(x, stratum);
    m1 += pr.first;
    m0 += pr.second;
  }
  const double k = static_cast<double>(models.size());
  return {m1 / k, m0 / k};
}

std::pair<double, double> BaggedMars::predict_means(std::span<const double> x) const {
  double m1 = 0.0, m0 = 0.0;
  for (const auto& m : models) {
    const auto pr = m.predict_means(x);
    m1 += pr.first;
    m0 += pr.second;
  }
  const double k = static_cast<double>(models.size());
  return {m1 / k, m0 / k};
}

BaggedMars fit_bagged_causal_mars(const Dataset& d, const MarsParams& params, int bags,
                                  const StrataAssignment* sa, Rng& rng) {
  validate_dataset(d);
  if (bags < 1) fail("invalid-params", "bags must be >= 1");

  MarsParams member_params = params;
  member_params.backward_deletion = false;

  BaggedMars out;
  out.models.resize(static_cast<std::size_t>(bags));
  const Rng base(rng.next());

  parallel_for(static_cast<std::size_t>(bags), [&](std::size_t b) {
    Rng member_rng = base.child(b);
    const std::size_t n = d.n();
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = member_rng.uniform_index(n);
    std::sort(rows.begin(), rows.end());
    const Dataset resample = d.subset(rows);
    if (sa != nullptr) {
      const StrataAssignment sub = sa->subset(rows);
      out.models[b] = fit_causal_mars(resample, member_params, &sub, member_rng);
    } else {
      out.models[b] = fit_causal_mars(resample, member_params, nullptr, member_rng);
    }
  });
  return out;
}

std::pair<double, double> predict_mars(const MarsModel& m, std::span<const double> x,
                                       std::optional<int> stratum) {
  if (stratum.has_value()) return m.predict_means_in_stratum(x, *stratum);
  if (m.S > 1 && !m.propensity_model) fail("missing-stratum", "stratified model needs a stratum");
  return m.predict_means(x);
}

}  // namespace hte
