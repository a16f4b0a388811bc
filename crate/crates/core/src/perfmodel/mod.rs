//! Profile-driven performance model for refining a coarse lock placement.
//!
//! All parameters are per thread and per run: `tc` is the time one thread
//! spends in the coarse critical statements, `nu` the locks it acquires,
//! `kappa` the average number of threads inside (or queued for) the
//! critical statements while any thread is.

pub mod search;
pub mod sim;

pub use search::{augment_constraints, enumerate_pairs, optimize_perf, unique_performance, PerfFormula, PerfResult, Region};
pub use sim::{measure_tl, profile, simulate, ExecutionTrace, SimConfig, SimError, Workload};

use crate::lang::{LocId, Program};
use crate::lang::SyncOp;
use crate::lockcons::{held_sets, LockPlacement};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum PerfError {
    #[error("contention equation did not converge (residual {residual:.3e})")]
    NoConvergence { residual: f64 },
    #[error("placement protects `{0}`, which the coarse placement leaves unprotected")]
    NotARefinement(String),
    #[error("lock constraints are unsatisfiable")]
    Unsat,
}

/// Lock acquisition cost by contention, sampled at 1, 2, ... and
/// interpolated linearly in between; clamped to the end samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TlCurve {
    pub samples: Vec<f64>,
}

impl TlCurve {
    pub fn constant(c: f64) -> TlCurve {
        TlCurve { samples: vec![c] }
    }

    pub fn eval(&self, k: f64) -> f64 {
        let s = &self.samples;
        if s.is_empty() {
            return 0.0;
        }
        if k <= 1.0 || s.len() == 1 {
            return s[0];
        }
        let i = (k - 1.0).floor() as usize;
        if i + 1 >= s.len() {
            return *s.last().unwrap();
        }
        let t = k - 1.0 - i as f64;
        s[i] + t * (s[i + 1] - s[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfParams {
    pub kappa: f64,
    pub tc: f64,
    pub nu: f64,
    pub tl: TlCurve,
    /// Time per run spent in each block.
    pub block_costs: BTreeMap<String, f64>,
    /// Executions per run of each statement.
    pub freqs: BTreeMap<String, f64>,
    /// Statements protected in the coarse program.
    pub protected: Vec<String>,
}

impl PerfParams {
    pub fn nu_max(&self) -> f64 {
        self.freqs.values().sum()
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn from_text(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Result of solving the contention equation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contention {
    pub kappa: f64,
    /// Several roots were found in `[1, kappa]`; the smallest was taken.
    pub ambiguous: bool,
}

const TOL: f64 = 1e-6;
const MAX_ITER: usize = 10_000;

fn section_time(tc1: f64, nu1: f64, tl: &TlCurve, k: f64) -> f64 {
    (tc1 + nu1 * tl.eval(k)) * (k - 0.5).max(1.0)
}

/// Right-hand side of the contention equation.
fn contention_rhs(tc1: f64, nu1: f64, p: &PerfParams, k: f64) -> f64 {
    let a = section_time(tc1, nu1, &p.tl, k);
    let den = (p.tc - tc1) + a;
    let frac = if den > 0.0 { a / den } else { 0.0 };
    1.0 + (p.kappa - 1.0) * frac
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm <= 0.0) == (flo <= 0.0) && fm != 0.0 {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Contention of a refined critical section with cost `tc1` and `nu1`
/// acquisitions per thread.
pub fn solve_contention(tc1: f64, nu1: f64, p: &PerfParams) -> Result<Contention, PerfError> {
    let kmax = p.kappa.max(1.0);
    let resid = |k: f64| contention_rhs(tc1, nu1, p, k) - k;
    // Damped fixpoint iteration from the coarse contention.
    let mut k = kmax;
    let mut fix = None;
    for _ in 0..MAX_ITER {
        let next = 0.5 * k + 0.5 * contention_rhs(tc1, nu1, p, k);
        if (next - k).abs() < TOL * 1e-3 {
            fix = Some(next);
            break;
        }
        k = next;
    }
    // Scan for sign changes to detect several roots.
    const N: usize = 256;
    let mut roots = Vec::new();
    let mut prev = (1.0, resid(1.0));
    if prev.1.abs() < 1e-12 {
        roots.push(1.0);
    }
    for i in 1..=N {
        let x = 1.0 + (kmax - 1.0) * i as f64 / N as f64;
        let r = resid(x);
        if r.abs() < 1e-12 {
            if roots.last().map_or(true, |l: &f64| x - l > 1e-9) {
                roots.push(x);
            }
        } else if prev.1.abs() >= 1e-12 && (r > 0.0) != (prev.1 > 0.0) {
            roots.push(bisect(resid, prev.0, x));
        }
        prev = (x, r);
    }
    let ambiguous = roots.len() > 1;
    let kappa = match (fix, roots.first()) {
        (Some(f), Some(r)) if ambiguous && *r < f - TOL => *r,
        (Some(f), _) => f,
        (None, Some(r)) => *r,
        (None, None) => return Err(PerfError::NoConvergence { residual: resid(k).abs() }),
    };
    if resid(kappa).abs() > TOL {
        return Err(PerfError::NoConvergence { residual: resid(kappa).abs() });
    }
    Ok(Contention { kappa, ambiguous })
}

/// Predicted time a thread spends on the coarse critical statements under
/// the refined placement.
pub fn rate(tc1: f64, nu1: f64, p: &PerfParams) -> Result<f64, PerfError> {
    let k = solve_contention(tc1, nu1, p)?.kappa;
    Ok((p.tc - tc1) + section_time(tc1, nu1, &p.tl, k))
}

/// Contention per lock when each lock guards its own part `(tc', nu')` of
/// the coarse critical statements. All equations share the denominator:
/// the time a thread spends in the coarse statements.
pub fn multi_lock_contention(parts: &[(f64, f64)], p: &PerfParams) -> Result<Vec<f64>, PerfError> {
    let kmax = p.kappa.max(1.0);
    let rhs = |ks: &[f64]| -> Vec<f64> {
        let a: Vec<f64> = parts.iter().zip(ks).map(|((t, n), k)| section_time(*t, *n, &p.tl, *k)).collect();
        let free = p.tc - parts.iter().map(|x| x.0).sum::<f64>();
        let den = free + a.iter().sum::<f64>();
        a.iter().map(|ai| 1.0 + (p.kappa - 1.0) * if den > 0.0 { ai / den } else { 0.0 }).collect()
    };
    let mut ks = vec![kmax; parts.len()];
    for _ in 0..MAX_ITER {
        let r = rhs(&ks);
        let next: Vec<f64> = ks.iter().zip(&r).map(|(k, f)| 0.5 * k + 0.5 * f).collect();
        let step = next.iter().zip(&ks).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ks = next;
        if step < TOL * 1e-3 {
            let res = rhs(&ks).iter().zip(&ks).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if res <= TOL {
                return Ok(ks);
            }
            return Err(PerfError::NoConvergence { residual: res });
        }
    }
    let res = rhs(&ks).iter().zip(&ks).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Err(PerfError::NoConvergence { residual: res })
}

/// Rating with one contention variable per lock.
pub fn rate_multi(parts: &[(f64, f64)], p: &PerfParams) -> Result<f64, PerfError> {
    let ks = multi_lock_contention(parts, p)?;
    let free = p.tc - parts.iter().map(|x| x.0).sum::<f64>();
    Ok(free + parts.iter().zip(&ks).map(|((t, n), k)| section_time(*t, *n, &p.tl, *k)).sum::<f64>())
}

/// Upper bounds on the partial derivatives of the rating, estimated by
/// finite differences on an `n × n` grid and padded by half.
pub fn bound_derivatives(p: &PerfParams, n: usize) -> (f64, f64) {
    let n = n.max(2);
    let (w, h) = (p.tc, p.nu_max());
    let mut grid = vec![vec![f64::NAN; n + 1]; n + 1];
    for (i, row) in grid.iter_mut().enumerate() {
        for (j, g) in row.iter_mut().enumerate() {
            *g = rate(w * i as f64 / n as f64, h * j as f64 / n as f64, p).unwrap_or(f64::NAN);
        }
    }
    let (mut d1, mut d2) = (0.0f64, 0.0f64);
    for i in 0..=n {
        for j in 0..=n {
            if i < n && w > 0.0 {
                let d = (grid[i + 1][j] - grid[i][j]).abs() / (w / n as f64);
                if d.is_finite() {
                    d1 = d1.max(d);
                }
            }
            if j < n && h > 0.0 {
                let d = (grid[i][j + 1] - grid[i][j]).abs() / (h / n as f64);
                if d.is_finite() {
                    d2 = d2.max(d);
                }
            }
        }
    }
    (1.5 * d1, 1.5 * d2)
}

/// Block of every statement: declared blocks, else a block of its own.
pub fn block_of(p: &Program) -> Vec<Option<String>> {
    let mut out = vec![None; p.nodes.len()];
    for l in p.all_statements() {
        out[l.idx()] = Some(p.name(l).to_string());
    }
    for b in &p.blocks {
        for m in &b.members {
            out[m.idx()] = Some(b.name.clone());
        }
    }
    out
}

/// Statements entered right after a synthesized lock statement.
pub fn lock_followers(pl: &LockPlacement) -> Vec<LocId> {
    let mut v: Vec<LocId> =
        pl.insertions.iter().filter(|i| i.ops.iter().any(|(op, _)| *op == SyncOp::Lock)).map(|i| i.to).collect();
    v.sort();
    v.dedup();
    v
}

/// `(tc', nu')` of a placement that refines the coarse one.
pub fn refine_params(p: &Program, params: &PerfParams, pl: &LockPlacement) -> Result<(f64, f64), PerfError> {
    let (inl, _) = held_sets(p, pl);
    let blocks = block_of(p);
    let mut hit = std::collections::BTreeSet::new();
    for x in p.all_statements() {
        if inl[x.idx()] != 0 {
            let nm = p.name(x);
            if !params.protected.iter().any(|s| s == nm) {
                return Err(PerfError::NotARefinement(nm.to_string()));
            }
            if let Some(b) = &blocks[x.idx()] {
                hit.insert(b.clone());
            }
        }
    }
    let tc1 = hit.iter().map(|b| params.block_costs.get(b).copied().unwrap_or(0.0)).sum();
    let nu1 = lock_followers(pl).iter().map(|v| params.freqs.get(p.name(*v)).copied().unwrap_or(0.0)).sum();
    Ok((tc1, nu1))
}

#[cfg(test)]
mod tests;
