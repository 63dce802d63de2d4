//! Limited-memory BFGS with a strong-Wolfe line search, holding curvature
//! history across mini-batch epochs.

use crate::error::{Error, Result};
use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsConfig {
    pub lr: f64,
    pub max_iter: usize,
    pub max_eval: usize,
    pub history: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_ls: usize,
    pub tolerance_grad: f64,
    pub tolerance_change: f64,
    /// relative loss decrease below which an epoch counts as stale
    pub stale_decrease: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            lr: 1.0,
            max_iter: 50,
            max_eval: 62,
            history: 50,
            c1: 1e-4,
            c2: 0.9,
            max_ls: 25,
            tolerance_grad: 1e-7,
            tolerance_change: 1e-9,
            stale_decrease: 1e-8,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Curvature pair store and the state carried between iterations.
#[derive(Clone, Debug, Default)]
pub struct LbfgsState {
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
    gamma: f64,
    /// step `s` and gradient of the last iteration, valid only within the
    /// current objective
    pending: Option<(Vec<f64>, Vec<f64>)>,
}

impl LbfgsState {
    pub fn new() -> Self {
        Self {
            gamma: 1.0,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.pairs.iter().map(|(s, y)| (s.as_slice(), y.as_slice()))
    }

    pub fn clear(&mut self) {
        *self = Self::new();
    }

    /// Stores `(s, y)` unless the curvature test fails. Returns whether it
    /// was kept.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>, history: usize) -> bool {
        let ys = dot(&y, &s);
        if !(ys > 1e-12 * norm(&s) * norm(&y)) {
            return false;
        }
        if self.pairs.len() == history {
            self.pairs.pop_front();
        }
        self.gamma = ys / dot(&y, &y);
        self.pairs.push_back((s, y));
        true
    }

    /// `H·q` by the two-loop recursion with `H₀ = γI`.
    pub fn apply(&self, q: &[f64]) -> Vec<f64> {
        two_loop(&self.pairs.iter().map(|(s, y)| (s.as_slice(), y.as_slice())).collect::<Vec<_>>(), self.gamma, q)
    }
}

/// Two-loop recursion over pairs ordered oldest first.
pub fn two_loop(pairs: &[(&[f64], &[f64])], gamma: f64, q: &[f64]) -> Vec<f64> {
    let mut q = q.to_vec();
    let mut alpha = vec![0.0; pairs.len()];
    for (i, (s, y)) in pairs.iter().enumerate().rev() {
        let rho = 1.0 / dot(y, s);
        alpha[i] = rho * dot(s, &q);
        for (qv, yv) in q.iter_mut().zip(y.iter()) {
            *qv -= alpha[i] * yv;
        }
    }
    for v in q.iter_mut() {
        *v *= gamma;
    }
    for (i, (s, y)) in pairs.iter().enumerate() {
        let rho = 1.0 / dot(y, s);
        let beta = rho * dot(y, &q);
        for (qv, sv) in q.iter_mut().zip(s.iter()) {
            *qv += (alpha[i] - beta) * sv;
        }
    }
    q
}

fn cubic_interpolate(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, bounds: Option<(f64, f64)>) -> f64 {
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let pos = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        pos.max(lo).min(hi)
    } else {
        (lo + hi) / 2.0
    }
}

#[derive(Clone, Debug)]
struct Probe {
    t: f64,
    f: f64,
    g: Vec<f64>,
    gtd: f64,
}

/// Result of a line search: the last probe examined, whether it meets both
/// strong-Wolfe inequalities, and the evaluation count.
struct Search {
    best: Probe,
    wolfe: bool,
    evals: usize,
}

#[allow(clippy::too_many_arguments)]
fn strong_wolfe<F>(obj: &mut F, x: &[f64], mut t: f64, d: &[f64], f: f64, g: &[f64], gtd: f64, cfg: &LbfgsConfig) -> Result<Search>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (c1, c2) = (cfg.c1, cfg.c2);
    let d_norm = max_abs(d);
    let mut trial = |t: f64| -> Result<Probe> {
        let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        let (f, g) = obj(&xt)?;
        let gtd = dot(&g, d);
        Ok(Probe { t, f, g, gtd })
    };
    let mut new = trial(t)?;
    let mut evals = 1;
    let mut prev = Probe {
        t: 0.0,
        f,
        g: g.to_vec(),
        gtd,
    };
    let mut ls_iter = 0;
    let mut bracket: Option<[Probe; 2]> = None;
    while ls_iter < cfg.max_ls {
        if new.f > f + c1 * new.t * gtd || (ls_iter > 1 && new.f >= prev.f) {
            bracket = Some([prev, new.clone()]);
            break;
        }
        if new.gtd.abs() <= -c2 * gtd {
            return Ok(Search {
                best: new,
                wolfe: true,
                evals,
            });
        }
        if new.gtd >= 0.0 {
            bracket = Some([prev, new.clone()]);
            break;
        }
        let lo = new.t + 0.01 * (new.t - prev.t);
        let hi = new.t * 10.0;
        t = cubic_interpolate(prev.t, prev.f, prev.gtd, new.t, new.f, new.gtd, Some((lo, hi)));
        prev = new;
        new = trial(t)?;
        evals += 1;
        ls_iter += 1;
    }
    let mut b = match bracket {
        Some(b) => b,
        None => [
            Probe {
                t: 0.0,
                f,
                g: g.to_vec(),
                gtd,
            },
            new,
        ],
    };
    let mut insuf = false;
    let (mut low, mut high) = if b[0].f <= b[1].f { (0, 1) } else { (1, 0) };
    while ls_iter < cfg.max_ls {
        if (b[1].t - b[0].t).abs() * d_norm < cfg.tolerance_change {
            break;
        }
        let mut t = cubic_interpolate(b[0].t, b[0].f, b[0].gtd, b[1].t, b[1].f, b[1].gtd, None);
        let bmin = b[0].t.min(b[1].t);
        let bmax = b[0].t.max(b[1].t);
        let eps = 0.1 * (bmax - bmin);
        if (bmax - t).min(t - bmin) < eps {
            if insuf || t >= bmax || t <= bmin {
                t = if (t - bmax).abs() < (t - bmin).abs() {
                    bmax - eps
                } else {
                    bmin + eps
                };
                insuf = false;
            } else {
                insuf = true;
            }
        } else {
            insuf = false;
        }
        let p = trial(t)?;
        evals += 1;
        ls_iter += 1;
        if p.f > f + c1 * t * gtd || p.f >= b[low].f {
            b[high] = p;
        } else {
            if p.gtd.abs() <= -c2 * gtd {
                return Ok(Search {
                    best: p,
                    wolfe: true,
                    evals,
                });
            }
            if p.gtd * (b[high].t - b[low].t) >= 0.0 {
                b[high] = b[low].clone();
            }
            b[low] = p;
        }
        if b[0].f <= b[1].f {
            low = 0;
            high = 1;
        } else {
            low = 1;
            high = 0;
        }
    }
    let best = b[low].clone();
    let wolfe = best.t > 0.0 && best.f <= f + c1 * best.t * gtd && best.gtd.abs() <= -c2 * gtd;
    Ok(Search { best, wolfe, evals })
}

/// One accepted step, with the quantities needed to audit the Wolfe
/// inequalities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub f0: f64,
    pub gtd0: f64,
    pub f: f64,
    pub gtd: f64,
}

impl StepRecord {
    pub fn satisfies_strong_wolfe(&self, c1: f64, c2: f64) -> bool {
        self.f <= self.f0 + c1 * self.t * self.gtd0 && self.gtd.abs() <= -c2 * self.gtd0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub accepted_pairs: usize,
    pub steps: Vec<StepRecord>,
    /// steepest-descent fallbacks taken after a failed line search
    pub fallbacks: usize,
    pub stale: bool,
    /// the objective became non-finite and the epoch was cut short
    pub aborted: bool,
}

/// Runs up to `max_iter` quasi-Newton iterations on a fixed objective.
///
/// `x` always holds the last accepted iterate; a non-finite objective inside
/// the line search ends the epoch early and marks it stale.
pub fn lbfgs_epoch<F>(x: &mut [f64], mut obj: F, state: &mut LbfgsState, cfg: &LbfgsConfig) -> Result<EpochReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    // curvature pairs never span two different objectives
    state.pending = None;
    let (mut loss, mut g) = obj(x)?;
    let mut rep = EpochReport {
        initial_loss: loss,
        final_loss: loss,
        evaluations: 1,
        ..Default::default()
    };
    if max_abs(&g) <= cfg.tolerance_grad {
        rep.stale = true;
        return Ok(rep);
    }
    while rep.iterations < cfg.max_iter {
        rep.iterations += 1;
        if let Some((s, g_prev)) = state.pending.take() {
            let y: Vec<f64> = g.iter().zip(&g_prev).map(|(a, b)| a - b).collect();
            if state.push(s, y, cfg.history) {
                rep.accepted_pairs += 1;
            }
        }
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let d = if state.is_empty() { neg } else { state.apply(&neg) };
        let mut t = if state.is_empty() {
            (1.0f64).min(1.0 / g.iter().map(|v| v.abs()).sum::<f64>()) * cfg.lr
        } else {
            cfg.lr
        };
        let mut gtd = dot(&g, &d);
        let mut d = d;
        if !(gtd < -cfg.tolerance_change) {
            // not a descent direction: restart from steepest descent
            state.clear();
            d = g.iter().map(|v| -v).collect();
            gtd = dot(&g, &d);
            t = (1.0f64).min(1.0 / g.iter().map(|v| v.abs()).sum::<f64>()) * cfg.lr;
            if !(gtd < -cfg.tolerance_change) {
                break;
            }
        }
        let prev_loss = loss;
        let search = match strong_wolfe(&mut obj, x, t, &d, loss, &g, gtd, cfg) {
            Ok(s) => s,
            Err(Error::NonFiniteLoss(_)) => {
                rep.aborted = true;
                break;
            }
            Err(e) => return Err(e),
        };
        rep.evaluations += search.evals;
        if search.wolfe {
            let step = search.best.t;
            for (xi, di) in x.iter_mut().zip(&d) {
                *xi += step * di;
            }
            rep.steps.push(StepRecord {
                t: step,
                f0: loss,
                gtd0: gtd,
                f: search.best.f,
                gtd: search.best.gtd,
            });
            let s: Vec<f64> = d.iter().map(|v| v * step).collect();
            let done_change = max_abs(&s) <= cfg.tolerance_change;
            state.pending = Some((s, g));
            loss = search.best.f;
            g = search.best.g;
            if done_change {
                break;
            }
        } else {
            // steepest-descent fallback, kept only if it lowers the loss
            let sd = (1.0f64).min(1.0 / g.iter().map(|v| v.abs()).sum::<f64>()) * cfg.lr * 1e-2;
            let xt: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - sd * b).collect();
            rep.evaluations += 1;
            match obj(&xt) {
                Ok((f, gn)) if f < loss => {
                    x.copy_from_slice(&xt);
                    loss = f;
                    g = gn;
                    rep.fallbacks += 1;
                }
                Ok(_) => break,
                Err(Error::NonFiniteLoss(_)) => {
                    rep.aborted = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if rep.evaluations >= cfg.max_eval
            || max_abs(&g) <= cfg.tolerance_grad
            || (loss - prev_loss).abs() < cfg.tolerance_change
        {
            break;
        }
    }
    rep.final_loss = loss;
    let decrease = (rep.initial_loss - loss) / rep.initial_loss.abs().max(f64::MIN_POSITIVE);
    rep.stale = rep.aborted || rep.accepted_pairs == 0 || decrease < cfg.stale_decrease;
    Ok(rep)
}
