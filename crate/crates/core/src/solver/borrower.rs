use rayon::prelude::*;

use super::{BorrowerValues, Model, Policies, PriceSchedule, Segments};

/// Runs `$body` with `$u` bound to a monomorphized utility closure.
macro_rules! with_utility {
    ($util:expr, $u:ident => $body:expr) => {{
        let sigma = $util.sigma();
        if sigma == 2.0 {
            let $u = |c: f64| -1.0 / c;
            $body
        } else if sigma == 1.0 {
            let $u = |c: f64| c.ln();
            $body
        } else {
            let $u = move |c: f64| c.powf(1.0 - sigma) / (1.0 - sigma);
            $body
        }
    }};
}

/// `out[y][j] = scale * sum_{y'} P(y'|y) m[y'][j]` in fixed summation order.
pub(crate) fn expect_rows(model: &Model, m: &[f64], width: usize, scale: f64) -> Vec<f64> {
    let n_y = model.n_y();
    let chain = &model.grids.chain;
    let mut out = vec![0.0; n_y * width];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (yp, &p) in chain.row(y).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let src = &m[yp * width..(yp + 1) * width];
            for (o, s) in row.iter_mut().zip(src) {
                *o += p * s;
            }
        }
        row.iter_mut().for_each(|o| *o *= scale);
    });
    out
}

/// Cash on hand before the i.i.d. shock for each choice `B'` at `(y, B)`.
#[inline]
fn fill_cash(model: &Model, q_row: &[f64], y: usize, b: usize, cash: &mut [f64]) {
    let bonds = &model.grids.bonds;
    let bb = bonds[b];
    let base = model.grids.chain.levels[y] + model.coupon * bb;
    let carried = model.carry * bb;
    for ((c, &q), &bn) in cash.iter_mut().zip(q_row).zip(bonds) {
        *c = base - q * (bn - carried);
    }
}

/// Best choice for every shock value in `xs`; ties keep the lowest index.
#[inline(always)]
fn best_choices<U: Fn(f64) -> f64>(
    u: U,
    cash: &[f64],
    cont: &[f64],
    xs: &[f64],
    best: &mut [f64],
    arg: &mut [u32],
) {
    best.fill(f64::NEG_INFINITY);
    arg.fill(0);
    for (j, (&k, &w)) in cash.iter().zip(cont).enumerate() {
        for ((&x, bv), av) in xs.iter().zip(best.iter_mut()).zip(arg.iter_mut()) {
            let c = k + x;
            let v = if c > 0.0 { w + u(c) } else { f64::NEG_INFINITY };
            if v > *bv {
                *bv = v;
                *av = j as u32;
            }
        }
    }
}

/// Shock value at which choice `c` (less cash, better continuation)
/// overtakes choice `t`, clamped to `[lo, hi]`.
fn crossing(model: &Model, kt: f64, ct: f64, kc: f64, cc: f64, lo: f64, hi: f64) -> f64 {
    let gap = cc - ct;
    let dk = kt - kc;
    let sigma = model.util.sigma();
    let x = if sigma == 2.0 {
        // (kc + x)(kc + x + dk) = dk / gap
        let r = dk / gap;
        let s = 2.0 * r / (dk + (dk * dk + 4.0 * r).sqrt());
        s - kc
    } else if sigma == 1.0 {
        dk / gap.exp_m1() - kc
    } else {
        let u = model.util;
        let better = |x: f64| cc + u.eval(kc + x) > ct + u.eval(kt + x);
        if better(lo) {
            return lo;
        }
        if !better(hi) {
            return hi;
        }
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if better(m) {
                b = m;
            } else {
                a = m;
            }
        }
        b
    };
    if x.is_nan() {
        hi
    } else {
        x.clamp(lo, hi)
    }
}

/// Scratch buffers for one `(y, B)` envelope.
struct Work {
    cash: Vec<f64>,
    band: Vec<u32>,
    stack: Vec<(u32, f64)>,
}

/// Upper envelope over `x` in `[lo, hi]` of the repayment payoffs of all
/// debt choices. Lower cash on hand means a steeper payoff in `x`, so any
/// two choices cross at most once and the envelope visits choices in
/// decreasing order of cash on hand.
fn envelope(model: &Model, cont: &[f64], w: &mut Work, lo: f64, hi: f64) {
    let mut best = [f64::NEG_INFINITY; 2];
    let mut arg = [0u32; 2];
    with_utility!(model.util, u => best_choices(u, &w.cash, cont, &[lo, hi], &mut best, &mut arg));
    w.stack.clear();
    let a_lo = arg[0];
    if best[1] == f64::NEG_INFINITY || lo == hi {
        w.stack.push((a_lo, lo));
        return;
    }
    let k_top = w.cash[a_lo as usize];
    let k_bottom = w.cash[arg[1] as usize];
    let cash = &w.cash;
    w.band.clear();
    w.band.extend(
        (0..cash.len() as u32).filter(|&j| cash[j as usize] <= k_top && cash[j as usize] >= k_bottom),
    );
    w.band.sort_by(|&a, &b| {
        let (a, b) = (a as usize, b as usize);
        cash[b]
            .total_cmp(&cash[a])
            .then(cont[b].total_cmp(&cont[a]))
            .then(a.cmp(&b))
    });
    let mut run = f64::NEG_INFINITY;
    let mut last_k = f64::NAN;
    for &j in w.band.iter() {
        let (k, c) = (cash[j as usize], cont[j as usize]);
        if c <= run || k == last_k {
            continue;
        }
        run = c;
        last_k = k;
        let mut start = lo;
        while let Some(&(t, st)) = w.stack.last() {
            let xc = crossing(model, cash[t as usize], cont[t as usize], k, c, lo, hi);
            if xc <= st {
                w.stack.pop();
                continue;
            }
            start = xc;
            break;
        }
        if start < hi {
            w.stack.push((j, start));
        }
    }
    if w.stack.is_empty() {
        w.stack.push((a_lo, lo));
    }
}

fn autarky_values(model: &Model, cont_aut: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_x = model.n_x();
    let xq = &model.grids.xquad;
    let u = model.util;
    let mut v_aut = vec![0.0; model.n_y() * n_x];
    let mut v_low = vec![0.0; model.n_y()];
    let mut ev_aut = vec![0.0; model.n_y()];
    for y in 0..model.n_y() {
        let mut ev = 0.0;
        for (i, (&x, &w)) in xq.nodes.iter().zip(&xq.weights).enumerate() {
            let v = u.eval(model.autarky_consumption(y, x)) + cont_aut[y];
            v_aut[y * n_x + i] = v;
            ev += w * v;
        }
        v_low[y] = u.eval(model.autarky_consumption(y, xq.lower)) + cont_aut[y];
        ev_aut[y] = ev;
    }
    (v_aut, v_low, ev_aut)
}

fn autarky_continuation(model: &Model, ev_option: &[f64], ev_autarky: &[f64]) -> Vec<f64> {
    let pi = model.config.pi_reentry;
    let z = model.grids.zero_index;
    let n_b = model.n_b();
    let mix: Vec<f64> = (0..model.n_y())
        .map(|y| (1.0 - pi) * ev_autarky[y] + pi * ev_option[y * n_b + z])
        .collect();
    expect_rows(model, &mix, 1, model.config.beta)
}

/// Values of staying in autarky forever; the initial guess of the solver.
pub fn autarky_forever(model: &Model) -> BorrowerValues {
    let n_y = model.n_y();
    let beta = model.config.beta;
    let flow: Vec<f64> = (0..n_y)
        .map(|y| {
            model
                .grids
                .xquad
                .integrate(|x| model.util.eval(model.autarky_consumption(y, x)))
        })
        .collect();
    let mut ev = flow.clone();
    for _ in 0..100_000 {
        let cont = expect_rows(model, &ev, 1, beta);
        let next: Vec<f64> = flow.iter().zip(&cont).map(|(f, c)| f + c).collect();
        let done = super::sup_diff(&next, &ev) < 1e-12;
        ev = next;
        if done {
            break;
        }
    }
    let cont_aut = expect_rows(model, &ev, 1, beta);
    let (v_autarky, v_autarky_low, ev_autarky) = autarky_values(model, &cont_aut);
    let n_b = model.n_b();
    let ev_option: Vec<f64> = (0..n_y * n_b).map(|i| ev_autarky[i / n_b]).collect();
    BorrowerValues {
        v_repay: vec![f64::NEG_INFINITY; n_y * n_b * model.n_x()],
        v_autarky,
        v_autarky_low,
        continuation: expect_rows(model, &ev_option, n_b, beta),
        ev_option,
        ev_autarky,
        continuation_autarky: cont_aut,
    }
}

/// Per-y output of the borrower sweep.
struct RowOut {
    start: Vec<f64>,
    choice: Vec<u32>,
    prob: Vec<f64>,
    counts: Vec<u32>,
    forced: usize,
}

/// One Bellman update of the borrower given prices and last values.
///
/// Repayment is chosen when `V_R >= V_A(x_low, y)`, so ties repay. States
/// where no choice gives positive consumption have `V_R = -inf` and default.
/// Besides the values at the quadrature nodes, the exact policy over the
/// whole shock interval is recorded as segments of constant debt choice
/// together with the default threshold.
pub fn borrower_step(model: &Model, q: &PriceSchedule, values: &BorrowerValues) -> (BorrowerValues, Policies) {
    let (n_y, n_b, n_x) = (model.n_y(), model.n_b(), model.n_x());
    let beta = model.config.beta;
    let cont = expect_rows(model, &values.ev_option, n_b, beta);
    let cont_aut = autarky_continuation(model, &values.ev_option, &values.ev_autarky);
    let (v_autarky, v_autarky_low, ev_autarky) = autarky_values(model, &cont_aut);

    let mut v_repay = vec![0.0; n_y * n_b * n_x];
    let mut debt_choice = vec![0u32; n_y * n_b * n_x];
    let mut repay = vec![0u8; n_y * n_b * n_x];
    let mut ev_option = vec![0.0; n_y * n_b];
    let mut x_threshold = vec![0.0; n_y * n_b];
    let mut default_prob = vec![0.0; n_y * n_b];
    let xq = &model.grids.xquad;
    let dist = xq.distribution();
    let (lo, hi) = (xq.lower, xq.upper);
    let block = n_b * n_x;
    let u = model.util;

    let rows: Vec<RowOut> = v_repay
        .par_chunks_mut(block)
        .zip(debt_choice.par_chunks_mut(block))
        .zip(repay.par_chunks_mut(block))
        .zip(ev_option.par_chunks_mut(n_b))
        .zip(x_threshold.par_chunks_mut(n_b))
        .zip(default_prob.par_chunks_mut(n_b))
        .enumerate()
        .map(|(y, (((((vr, dc), rp), ev), thr), dp))| {
            let q_row = q.row(y);
            let cont_row = &cont[y * n_b..(y + 1) * n_b];
            let v_low = v_autarky_low[y];
            let mut w = Work {
                cash: vec![0.0; n_b],
                band: Vec::with_capacity(n_b),
                stack: Vec::with_capacity(64),
            };
            let mut out = RowOut {
                start: Vec::new(),
                choice: Vec::new(),
                prob: Vec::new(),
                counts: Vec::with_capacity(n_b),
                forced: 0,
            };
            for b in 0..n_b {
                fill_cash(model, q_row, y, b, &mut w.cash);
                envelope(model, cont_row, &mut w, lo, hi);
                let value = |j: u32, x: f64| {
                    let c = w.cash[j as usize] + x;
                    if c > 0.0 {
                        cont_row[j as usize] + u.eval(c)
                    } else {
                        f64::NEG_INFINITY
                    }
                };
                // node values from the envelope
                let mut seg = 0;
                let mut e = 0.0;
                for i in 0..n_x {
                    let x = xq.nodes[i];
                    while seg + 1 < w.stack.len() && w.stack[seg + 1].1 <= x {
                        seg += 1;
                    }
                    let j = w.stack[seg].0;
                    let v = value(j, x);
                    let k = b * n_x + i;
                    vr[k] = v;
                    dc[k] = j;
                    if v == f64::NEG_INFINITY {
                        out.forced += 1;
                    }
                    let keep = v >= v_low;
                    rp[k] = keep as u8;
                    e += xq.weights[i] * if keep { v } else { v_low };
                }
                ev[b] = e;

                // default threshold on the envelope
                let n_seg = w.stack.len();
                let seg_end = |s: usize| if s + 1 < n_seg { w.stack[s + 1].1 } else { hi };
                let t = if value(w.stack[0].0, lo) >= v_low {
                    f64::NEG_INFINITY
                } else if value(w.stack[n_seg - 1].0, hi) < v_low {
                    f64::INFINITY
                } else {
                    let s = (0..n_seg)
                        .find(|&s| value(w.stack[s].0, seg_end(s)) >= v_low)
                        .unwrap_or(n_seg - 1);
                    let j = w.stack[s].0 as usize;
                    let root = u.inverse(v_low - cont_row[j]) - w.cash[j];
                    if root.is_nan() {
                        w.stack[s].1
                    } else {
                        root.clamp(w.stack[s].1, seg_end(s))
                    }
                };
                thr[b] = t;
                if lo == hi {
                    // degenerate shock: the single node decides
                    let p = rp[b * n_x] as f64;
                    dp[b] = 1.0 - p;
                    out.start.push(lo);
                    out.choice.push(w.stack[0].0);
                    out.prob.push(p);
                    out.counts.push(1);
                    continue;
                }
                dp[b] = dist.cdf(t);
                let mut f_prev = dp[b];
                let mut pushed = 0;
                for s in 0..n_seg {
                    let end = seg_end(s);
                    if end <= t {
                        continue;
                    }
                    let f_end = if s + 1 == n_seg { 1.0 } else { dist.cdf(end) };
                    out.start.push(w.stack[s].1.max(t));
                    out.choice.push(w.stack[s].0);
                    out.prob.push((f_end - f_prev).max(0.0));
                    f_prev = f_end;
                    pushed += 1;
                }
                out.counts.push(pushed);
            }
            out
        })
        .collect();

    let mut segments = Segments {
        offsets: Vec::with_capacity(n_y * n_b + 1),
        start: Vec::new(),
        choice: Vec::new(),
        prob: Vec::new(),
    };
    segments.offsets.push(0);
    let mut forced = 0;
    for r in rows {
        let mut off = *segments.offsets.last().unwrap();
        for c in r.counts {
            off += c;
            segments.offsets.push(off);
        }
        segments.start.extend(r.start);
        segments.choice.extend(r.choice);
        segments.prob.extend(r.prob);
        forced += r.forced;
    }

    let values = BorrowerValues {
        v_repay,
        v_autarky,
        v_autarky_low,
        ev_option,
        ev_autarky,
        continuation: cont,
        continuation_autarky: cont_aut,
    };
    let policies = Policies {
        debt_choice,
        repay,
        x_threshold,
        default_prob,
        segments,
        forced_defaults: forced,
    };
    (values, policies)
}

/// Repayment value and debt choice at an arbitrary shock value `x`, using
/// the continuation stored in `values`.
pub fn repay_choice_at(
    model: &Model,
    q: &PriceSchedule,
    values: &BorrowerValues,
    y: usize,
    b: usize,
    x: f64,
) -> (f64, usize) {
    let n_b = model.n_b();
    let mut cash = vec![0.0; n_b];
    fill_cash(model, q.row(y), y, b, &mut cash);
    let mut best = [f64::NEG_INFINITY];
    let mut arg = [0u32];
    let cont = &values.continuation[y * n_b..(y + 1) * n_b];
    with_utility!(model.util, u => best_choices(u, &cash, cont, &[x], &mut best, &mut arg));
    (best[0], arg[0] as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::economy::EconomyConfig;

    fn brute(model: &Model, cash: &[f64], cont: &[f64], x: f64) -> (f64, u32) {
        let mut best = [f64::NEG_INFINITY];
        let mut arg = [0u32];
        with_utility!(model.util, u => best_choices(u, cash, cont, &[x], &mut best, &mut arg));
        (best[0], arg[0])
    }

    #[test]
    fn envelope_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for sigma in [2.0, 1.0, 3.0] {
            let cfg = EconomyConfig {
                sigma,
                ..EconomyConfig::small()
            };
            let model = Model::new(cfg).unwrap();
            let (lo, hi) = (model.grids.xquad.lower, model.grids.xquad.upper);
            for _ in 0..200 {
                let n = 60;
                let mut w = Work {
                    cash: (0..n).map(|j| 1.2 - 0.01 * j as f64 + rng.gen_range(-0.02..0.02)).collect(),
                    band: Vec::new(),
                    stack: Vec::new(),
                };
                let cont: Vec<f64> = (0..n).map(|j| -30.0 + 0.012 * j as f64 + rng.gen_range(-0.05..0.05)).collect();
                envelope(&model, &cont, &mut w, lo, hi);
                for s in w.stack.windows(2) {
                    assert!(s[1].1 > s[0].1);
                }
                for i in 0..=400 {
                    let x = lo + (hi - lo) * i as f64 / 400.0;
                    let seg = w.stack.iter().rposition(|s| s.1 <= x).unwrap();
                    let j = w.stack[seg].0 as usize;
                    let v = cont[j] + model.util.eval(w.cash[j] + x);
                    let (bv, _) = brute(&model, &w.cash, &cont, x);
                    assert!((v - bv).abs() <= 1e-9 * bv.abs().max(1.0), "sigma {sigma}: {v} vs {bv}");
                }
            }
        }
    }

    #[test]
    fn crossing_solves_equal_values() {
        let model = Model::new(EconomyConfig::small()).unwrap();
        let (kt, ct, kc, cc) = (1.05, -20.0, 1.0, -19.96);
        let x = crossing(&model, kt, ct, kc, cc, -1.0, 1.0);
        let u = model.util;
        assert!((ct + u.eval(kt + x) - cc - u.eval(kc + x)).abs() < 1e-12);
    }
}
