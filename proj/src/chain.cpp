#include "chain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

namespace coarsen::detail {
namespace {

// Fraction of the remaining time-to-zero a step may cover near a crossing.
constexpr double kApproach = 0.25;
// Event times are never resolved finer than this many ulps of t.
constexpr double kUlpCut = 64.0;

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace

void Track::push(double tt, double yy, double ff) {
  if (!t.empty() && t.back() == tt && y.back() == yy && f.back() == ff) return;
  t.push_back(tt);
  y.push_back(yy);
  f.push_back(ff);
}

namespace {

std::size_t segment_of(const Track& tr, double s) {
  // Last knot with t <= s, kept below the final knot.
  auto it = std::upper_bound(tr.t.begin(), tr.t.end(), s);
  std::size_t i = it == tr.t.begin() ? 0 : static_cast<std::size_t>(it - tr.t.begin()) - 1;
  if (i + 1 >= tr.t.size()) i = tr.t.size() >= 2 ? tr.t.size() - 2 : 0;
  return i;
}

}  // namespace

double Track::value(double s) const {
  if (t.empty()) return 0.0;
  if (t.size() == 1) return y[0] + f[0] * (s - t[0]);
  const std::size_t i = segment_of(*this, s);
  if (s >= t[i + 1]) return y[i + 1] + f[i + 1] * (s - t[i + 1]);
  const double h = t[i + 1] - t[i];
  if (s <= t[i]) return y[i] + f[i] * (s - t[i]);
  const double th = (s - t[i]) / h;
  const double th2 = th * th, th3 = th2 * th;
  const double h00 = 2 * th3 - 3 * th2 + 1, h10 = th3 - 2 * th2 + th;
  const double h01 = -2 * th3 + 3 * th2, h11 = th3 - th2;
  return h00 * y[i] + h10 * h * f[i] + h01 * y[i + 1] + h11 * h * f[i + 1];
}

double Track::slope(double s) const {
  if (t.empty()) return 0.0;
  if (t.size() == 1) return f[0];
  const std::size_t i = segment_of(*this, s);
  if (s >= t[i + 1]) return f[i + 1];
  if (s <= t[i]) return f[i];
  const double h = t[i + 1] - t[i];
  const double th = (s - t[i]) / h;
  const double th2 = th * th;
  return (6 * th2 - 6 * th) / h * y[i] + (3 * th2 - 4 * th + 1) * f[i] +
         (-6 * th2 + 6 * th) / h * y[i + 1] + (3 * th2 - 2 * th) * f[i + 1];
}

Chain::Chain(ChainSetup s, double t0)
    : beta_(s.beta),
      a_(s.beta / (s.beta + 1.0)),
      bp1_(s.beta + 1.0),
      c_(s.ctrl),
      periodic_(s.periodic),
      ledge_(s.left),
      redge_(s.right),
      ids_(std::move(s.ids)),
      seg_(std::move(s.segment)),
      y_(std::move(s.y)),
      lg_(std::move(s.left_ghosts)),
      rg_(std::move(s.right_ghosts)),
      forcing_(std::move(s.forcing)),
      t_(t0),
      h_(s.h_init > 0.0 ? s.h_init : s.ctrl.dt_init) {
  if (seg_.empty()) seg_.assign(ids_.size(), 0);
  rec_.assign(ids_.size(), -1);
  for (Index id : s.record) {
    auto it = std::find(ids_.begin(), ids_.end(), id);
    if (it == ids_.end()) continue;
    rec_[static_cast<std::size_t>(it - ids_.begin())] = static_cast<int>(tracks_.size());
    Track tr;
    tr.id = id;
    tracks_.push_back(std::move(tr));
  }
  f_.assign(ids_.size(), 0.0);
  relink();
}

void Chain::relink() {
  const std::size_t L = ids_.size();
  lidx_.resize(L);
  ridx_.resize(L);
  p_.assign(L + 3, 0.0);
  g_.assign(L + 3, 0.0);
  for (std::size_t k = 0; k < L; ++k) {
    if (k > 0 && seg_[k - 1] == seg_[k])
      lidx_[k] = k - 1;
    else if (periodic_)
      lidx_[k] = L - 1;
    else if (ledge_ == Edge::Ghost && k == 0)
      lidx_[k] = L + 1;
    else
      lidx_[k] = L;
    if (k + 1 < L && seg_[k + 1] == seg_[k])
      ridx_[k] = k + 1;
    else if (periodic_)
      ridx_[k] = 0;
    else if (redge_ == Edge::Ghost && k + 1 == L)
      ridx_[k] = L + 2;
    else
      ridx_[k] = L;
  }
}

double Chain::ghost_g(bool left_side, double s) const {
  const auto& list = left_side ? lg_ : rg_;
  const std::size_t cur = left_side ? lcur_ : rcur_;
  if (cur >= list.size()) return 0.0;
  const double yv = list[cur]->value(s);
  return yv > 0.0 ? std::pow(yv, -a_) : 0.0;
}

double Chain::ghost_x(bool left_side) const {
  const auto& list = left_side ? lg_ : rg_;
  const std::size_t cur = left_side ? lcur_ : rcur_;
  if (cur >= list.size()) return 0.0;
  const double yv = list[cur]->value(t_);
  return yv > 0.0 ? std::pow(yv, 1.0 / bp1_) : 0.0;
}

double Chain::neighbour_g(std::size_t slot) const {
  const std::size_t L = ids_.size();
  if (slot < L) return y_[slot] > 0.0 ? std::pow(y_[slot], -a_) : 0.0;
  if (slot == L + 1) return ghost_g(true, t_);
  if (slot == L + 2) return ghost_g(false, t_);
  return 0.0;
}

void Chain::eval(double s, const double* Y, double* F) {
  const std::size_t L = ids_.size();
  double* p = p_.data();
  double* g = g_.data();
  for (std::size_t k = 0; k < L; ++k) {
    const double yk = Y[k];
    if (yk > 0.0) {
      const double pk = std::pow(yk, a_);
      p[k] = pk;
      g[k] = 1.0 / pk;
    } else {
      p[k] = 0.0;
      g[k] = 0.0;
    }
  }
  g[L] = 0.0;
  g[L + 1] = ledge_ == Edge::Ghost ? ghost_g(true, s) : 0.0;
  g[L + 2] = redge_ == Edge::Ghost ? ghost_g(false, s) : 0.0;
  const std::size_t* li = lidx_.data();
  const std::size_t* ri = ridx_.data();
  for (std::size_t k = 0; k < L; ++k) F[k] = bp1_ * (p[k] * (g[li[k]] + g[ri[k]]) - 2.0);
  if (forcing_)
    for (std::size_t k = 0; k < L; ++k) F[k] += bp1_ * p[k] * forcing_(ids_[k], s);
}

double Chain::next_break() const {
  double b = kInf;
  if (ledge_ == Edge::Ghost && lcur_ < lg_.size()) b = std::min(b, lg_[lcur_]->end);
  if (redge_ == Edge::Ghost && rcur_ < rg_.size()) b = std::min(b, rg_[rcur_]->end);
  return b;
}

bool Chain::process_ghost_ends() {
  bool changed = false;
  auto feed = [&](std::size_t pos, double give) {
    if (give == 0.0) return;
    const double x = std::pow(y_[pos], 1.0 / bp1_) + give;
    y_[pos] = x > 0.0 ? std::pow(x, bp1_) : y_[pos];
  };
  if (ledge_ == Edge::Ghost) {
    while (lcur_ < lg_.size() && lg_[lcur_]->end <= t_) {
      if (!ids_.empty()) feed(0, lg_[lcur_]->give_right);
      ++lcur_;
      changed = true;
    }
    if (lcur_ >= lg_.size()) ghost_exhausted_ = true;
  }
  if (redge_ == Edge::Ghost) {
    while (rcur_ < rg_.size() && rg_[rcur_]->end <= t_) {
      if (!ids_.empty()) feed(ids_.size() - 1, rg_[rcur_]->give_left);
      ++rcur_;
      changed = true;
    }
    if (rcur_ >= rg_.size()) ghost_exhausted_ = true;
  }
  return changed;
}

double Chain::tick() const {
  return std::max(c_.event_tol, kUlpCut * std::numeric_limits<double>::epsilon() * std::fabs(t_));
}

Chain::Cut Chain::terminal_cut(std::size_t k, double t_stop) const {
  Cut c;
  const double yk = y_[k], fk = f_[k];
  if (yk <= c_.y_floor) {
    c.ttz = fk < 0.0 ? yk / -fk : 0.0;
    c.cut = kInf;
    return c;
  }
  if (!(fk < 0.0)) return c;
  c.ttz = yk / -fk;
  c.cut = tick();
  if (!c_.terminal_lump || forcing_) return c;

  const std::size_t L = ids_.size();
  const double xk = std::pow(yk, 1.0 / bp1_);
  const double pk = std::pow(yk, a_);
  double G = 0.0, gx = 0.0, xmin = kInf;
  for (int side = 0; side < 2; ++side) {
    const std::size_t slot = side == 0 ? lidx_[k] : ridx_[k];
    if (slot == L) continue;
    double xn, gn;
    if (slot < L) {
      if (slot == k) return c;
      const double yn = y_[slot];
      if (!(yn > 0.0)) return c;
      if (f_[slot] < 0.0 && yn / -f_[slot] < 20.0 * c.ttz) return c;
      xn = std::pow(yn, 1.0 / bp1_);
      gn = std::pow(yn, -a_);
    } else {
      xn = ghost_x(slot == L + 1);
      if (!(xn > 0.0)) return c;
      gn = std::pow(xn, -beta_);
    }
    if (xn < 4.0 * xk) return c;
    G += gn;
    gx = std::max(gx, gn / xn);
    xmin = std::min(xmin, xn);
  }
  const double q = 0.5 * pk * G;
  if (q > 0.9) return c;
  const double D = c.ttz;
  const double ex = bp1_ / (beta_ + 2.0);  // error ~ D^((beta+2)/(beta+1))
  double cut = kInf;
  if (xmin < kInf) {
    const double mass_err = beta_ * xk * D * gx;
    const double time_err = D * q * beta_ * xk / (2.0 * xmin * (1.0 - q));
    const double thr_m = 0.1 * c_.rel_tol * xmin;
    const double thr_t = 0.5 * c_.event_tol;
    if (mass_err > 0.0) cut = std::min(cut, D * std::pow(thr_m / mass_err, ex));
    if (time_err > 0.0) cut = std::min(cut, D * std::pow(thr_t / time_err, ex));
  }
  if (t_ + D > t_stop || t_ + D > next_break()) return c;
  c.cut = std::max(cut, tick());
  c.lump = cut >= D;
  return c;
}

bool Chain::process_terminal(double t_stop) {
  const std::size_t L = ids_.size();
  if (L == 0) return false;
  const double probe = 2.0 * std::max(h_, tick());
  std::vector<std::size_t> S;
  std::vector<Cut> cuts;
  double tmin = kInf;
  for (std::size_t k = 0; k < L; ++k) {
    const double yk = y_[k], fk = f_[k];
    if (yk > c_.y_floor && !(fk < 0.0)) continue;
    if (yk > c_.y_floor && yk / -fk >= probe) continue;
    Cut cu = terminal_cut(k, t_stop);
    if (cu.ttz <= cu.cut) {
      S.push_back(k);
      cuts.push_back(cu);
      tmin = std::min(tmin, cu.ttz);
    }
  }
  if (S.empty()) return false;
  // Anything due within the simultaneity window of the earliest joins the batch.
  std::vector<char> inS(L, 0);
  for (auto k : S) inS[k] = 1;
  for (std::size_t k = 0; k < L; ++k) {
    if (inS[k] || !(f_[k] < 0.0)) continue;
    if (y_[k] / -f_[k] <= tmin + c_.simultaneity_window) {
      Cut cu;
      cu.ttz = y_[k] / -f_[k];
      S.push_back(k);
      cuts.push_back(cu);
      inS[k] = 1;
    }
  }
  std::vector<std::size_t> order(S.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return S[a] < S[b]; });

  std::vector<double> delta(L, 0.0);
  auto slot_id = [&](std::size_t slot) -> Index {
    if (slot < L) return ids_[slot];
    if (slot == L + 1 && lcur_ < lg_.size()) return lg_[lcur_]->id;
    if (slot == L + 2 && rcur_ < rg_.size()) return rg_[rcur_]->id;
    return kNone;
  };
  for (auto oi : order) {
    const std::size_t k = S[oi];
    const Cut& cu = cuts[oi];
    const double xk = std::pow(std::max(y_[k], 0.0), 1.0 / bp1_);
    Removal r;
    r.id = ids_[k];
    r.t_cut = t_;
    r.left = slot_id(lidx_[k]);
    r.right = slot_id(ridx_[k]);
    const bool lump = cu.lump && !(lidx_[k] < L && inS[lidx_[k]]) && !(ridx_[k] < L && inS[ridx_[k]]);
    if (lump) {
      const double gl = neighbour_g(lidx_[k]);
      const double gr = neighbour_g(ridx_[k]);
      const double G = gl + gr;
      const double q = 0.5 * std::pow(y_[k], a_) * G;
      double sum = 0.0, qn = 1.0;
      for (int n = 0; n < 4000; ++n) {
        const double term = qn / (n * a_ + 1.0);
        sum += term;
        if (term < 1e-17 * sum) break;
        qn *= q;
      }
      const double D = y_[k] / (2.0 * bp1_) * sum;
      const double I = 0.5 * (xk + D * G);
      r.tau = t_ + D;
      r.give_left = I - D * gr;
      r.give_right = I - D * gl;
      if (!(r.give_left >= 0.0 && r.give_right >= 0.0)) r.give_left = r.give_right = 0.5 * xk;
    } else {
      r.tau = t_ + (std::isfinite(cu.ttz) ? cu.ttz : 0.0);
      r.give_left = r.give_right = 0.5 * xk;
    }
    // Route shares past neighbours removed in the same batch.
    std::size_t s = lidx_[k];
    for (std::size_t guard = 0; s < L && inS[s] && guard <= L; ++guard) s = lidx_[s];
    if (s < L && !inS[s]) delta[s] += r.give_left;
    s = ridx_[k];
    for (std::size_t guard = 0; s < L && inS[s] && guard <= L; ++guard) s = ridx_[s];
    if (s < L && !inS[s]) delta[s] += r.give_right;
    if (rec_[k] >= 0) {
      Track& tr = tracks_[static_cast<std::size_t>(rec_[k])];
      tr.end = t_;
      tr.give_left = r.give_left;
      tr.give_right = r.give_right;
    }
    removals_.push_back(r);
  }
  std::size_t w = 0;
  for (std::size_t k = 0; k < L; ++k) {
    if (inS[k]) continue;
    double yk = y_[k];
    if (delta[k] != 0.0) {
      const double x = std::pow(yk, 1.0 / bp1_) + delta[k];
      if (x > 0.0) yk = std::pow(x, bp1_);
    }
    ids_[w] = ids_[k];
    seg_[w] = seg_[k];
    y_[w] = yk;
    f_[w] = f_[k];
    rec_[w] = rec_[k];
    ++w;
  }
  ids_.resize(w);
  seg_.resize(w);
  y_.resize(w);
  f_.resize(w);
  rec_.resize(w);
  relink();
  return true;
}

void Chain::record_all() {
  for (std::size_t k = 0; k < ids_.size(); ++k)
    if (rec_[k] >= 0) tracks_[static_cast<std::size_t>(rec_[k])].push(t_, y_[k], f_[k]);
}

void Chain::run(double t_stop) {
  bool fresh = false;
  auto refresh = [&] {
    eval(t_, y_.data(), f_.data());
    record_all();
    fresh = true;
  };
  refresh();
  bool last_rejected = false;
  for (;;) {
    bool changed = process_ghost_ends();
    if (changed) refresh();
    while (fresh && process_terminal(t_stop)) refresh();
    const std::size_t L = ids_.size();
    if (t_ >= t_stop) break;
    if (L == 0) {
      t_ = t_stop;
      break;
    }
    const double brk = next_break();
    double h = std::min({h_, c_.dt_max, t_stop - t_, brk - t_});
    bool capped = h < h_;
    for (std::size_t k = 0; k < L; ++k) {
      if (!(f_[k] < 0.0)) continue;
      const double ttz = y_[k] / -f_[k];
      if (ttz * kApproach >= h && ttz >= 2.0 * h) continue;
      const Cut cu = terminal_cut(k, t_stop);
      // Shrink geometrically toward the crossing; land inside the cut once close.
      double target = ttz < 2.0 * cu.cut ? ttz - 0.5 * std::min(cu.cut, ttz) : kApproach * ttz;
      if (target <= 0.0) target = 0.5 * ttz;
      if (target < h) {
        h = target;
        capped = true;
      }
    }
    double t_new = t_ + h;
    if (h == t_stop - t_) t_new = t_stop;
    if (h == brk - t_) t_new = brk;
    if (!(t_new > t_) || h < 1e-300) {
      std::ostringstream os;
      os << "step size underflow at t=" << t_ << " (h=" << h << ", living=" << L << ")";
      throw NumericFailure(os.str());
    }
    h = t_new - t_;

    k2_.resize(L), k3_.resize(L), k4_.resize(L), k5_.resize(L), k6_.resize(L), k7_.resize(L);
    ys_.resize(L), yn_.resize(L);
    const double* Y = y_.data();
    const double* k1 = f_.data();
    double* ys = ys_.data();
    for (std::size_t k = 0; k < L; ++k) ys[k] = Y[k] + h * a21 * k1[k];
    eval(t_ + c2 * h, ys, k2_.data());
    for (std::size_t k = 0; k < L; ++k) ys[k] = Y[k] + h * (a31 * k1[k] + a32 * k2_[k]);
    eval(t_ + c3 * h, ys, k3_.data());
    for (std::size_t k = 0; k < L; ++k)
      ys[k] = Y[k] + h * (a41 * k1[k] + a42 * k2_[k] + a43 * k3_[k]);
    eval(t_ + c4 * h, ys, k4_.data());
    for (std::size_t k = 0; k < L; ++k)
      ys[k] = Y[k] + h * (a51 * k1[k] + a52 * k2_[k] + a53 * k3_[k] + a54 * k4_[k]);
    eval(t_ + c5 * h, ys, k5_.data());
    for (std::size_t k = 0; k < L; ++k)
      ys[k] = Y[k] + h * (a61 * k1[k] + a62 * k2_[k] + a63 * k3_[k] + a64 * k4_[k] + a65 * k5_[k]);
    eval(t_new, ys, k6_.data());
    double* yn = yn_.data();
    for (std::size_t k = 0; k < L; ++k)
      yn[k] = Y[k] + h * (a71 * k1[k] + a73 * k3_[k] + a74 * k4_[k] + a75 * k5_[k] + a76 * k6_[k]);
    bool crossed = false;
    for (std::size_t k = 0; k < L; ++k)
      if (yn[k] <= c_.y_floor) crossed = true;
    // A rejected step must shrink after rounding t + h, or the loop stalls.
    auto shrink = [&](double proposal) {
      const double floor_h = 4.0 * std::numeric_limits<double>::epsilon() * std::fabs(t_);
      if (h <= floor_h) {
        std::ostringstream os;
        os << "step size underflow at t=" << t_ << " (h=" << h << ", living=" << L << ")";
        throw NumericFailure(os.str());
      }
      h_ = std::min(proposal, h - 0.5 * floor_h);
    };
    if (crossed) {
      ++rejected_;
      shrink(0.5 * h);
      last_rejected = true;
      fresh = false;
      continue;
    }
    eval(t_new, yn, k7_.data());
    double err = 0.0;
    for (std::size_t k = 0; k < L; ++k) {
      const double ek = h * (e1 * k1[k] + e3 * k3_[k] + e4 * k4_[k] + e5 * k5_[k] + e6 * k6_[k] +
                             e7 * k7_[k]);
      const double sc = c_.abs_tol + c_.rel_tol * std::max(std::fabs(Y[k]), std::fabs(yn[k]));
      err = std::max(err, std::fabs(ek) / sc);
    }
    if (!(err <= 1.0)) {
      ++rejected_;
      const double fac = std::isfinite(err) ? std::max(0.2, 0.9 * std::pow(err, -0.2)) : 0.2;
      shrink(h * fac);
      last_rejected = true;
      fresh = false;
      continue;
    }
    ++accepted_;
    // PI control damps the oscillation that the endpoint singularities provoke.
    const double e_now = std::max(err, 1e-10);
    double fac = 0.9 * std::pow(e_now, -0.14) * std::pow(err_prev_, 0.08);
    err_prev_ = std::max(err, 1e-4);
    fac = std::clamp(fac, 0.2, last_rejected ? 1.0 : 5.0);
    const double h_next = h * fac;
    h_ = capped ? std::max(h_, h_next) : h_next;
    last_rejected = false;
    t_ = t_new;
    y_.swap(yn_);
    f_.swap(k7_);
    record_all();
    fresh = true;
  }
}

}  // namespace coarsen::detail
