//! Seed-deterministic discrete-event simulator standing in for profiling
//! runs on real hardware.
//!
//! Each logical thread has its own clock. The runnable thread with the
//! smallest clock executes its next statement, which takes the statement's
//! annotated cost. Locks are handed over in FIFO order; acquiring one costs
//! `lock_base + lock_slope * (threads queued, acquirer included - 1)`, which
//! is the contention-dependent overhead the model calls `tl`.

use super::{block_of, lock_followers, PerfParams, TlCurve};
use crate::lang::{parse_program, BinOp, Expr, LocId, NodeKind, Program, SyncOp, UnOp, VarKind};
use crate::lockcons::{apply_placement, held_sets, LockPlacement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SimError {
    #[error("simulation deadlocked at t={time:.3}: {detail}")]
    Deadlock { time: f64, detail: String },
    #[error("simulation exceeded {0} steps")]
    StepLimit(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    /// Initial values by variable name (shared variables and every thread's locals).
    pub init: BTreeMap<String, i64>,
    /// Cost multipliers by block or statement name.
    pub scale: BTreeMap<String, f64>,
    /// Probability that `*` evaluates to 1.
    pub star_true: f64,
    /// Inputs and havocs are drawn from `0..input_max`.
    pub input_max: i64,
    /// Relative uniform jitter applied to statement costs.
    pub jitter: f64,
}

impl Default for Workload {
    fn default() -> Self {
        Workload { init: BTreeMap::new(), scale: BTreeMap::new(), star_true: 0.5, input_max: 100, jitter: 0.0 }
    }
}

impl Workload {
    /// Parse `name=value` pairs separated by commas: integers initialise
    /// variables, `scale.NAME=f` scales costs, `star=p` and `jitter=j` set
    /// the respective knobs.
    pub fn parse(s: &str) -> Result<Workload, String> {
        let mut w = Workload::default();
        for part in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| format!("expected name=value, got `{part}`"))?;
            let fv = || v.parse::<f64>().map_err(|e| format!("{part}: {e}"));
            match k {
                "star" => w.star_true = fv()?,
                "jitter" => w.jitter = fv()?,
                "input_max" => w.input_max = v.parse().map_err(|e| format!("{part}: {e}"))?,
                _ => match k.strip_prefix("scale.") {
                    Some(n) => {
                        w.scale.insert(n.to_string(), fv()?);
                    }
                    None => {
                        w.init.insert(k.to_string(), v.parse().map_err(|e| format!("{part}: {e}"))?);
                    }
                },
            }
        }
        Ok(w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Logical threads; thread `i` runs the code of program thread `i mod n`.
    /// Zero means one per program thread.
    pub threads: usize,
    pub seed: u64,
    pub runs: usize,
    pub lock_base: f64,
    pub lock_slope: f64,
    /// Cost of statements without a `cost` annotation (sync and yield cost 0).
    pub default_cost: f64,
    pub max_steps: usize,
    pub workload: Workload,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            threads: 0,
            seed: 1,
            runs: 4,
            lock_base: 0.2,
            lock_slope: 0.1,
            default_cost: 1.0,
            max_steps: 2_000_000,
            workload: Workload::default(),
        }
    }
}

/// One executed statement. For lock statements `wait` is the time spent
/// queued; the acquisition itself occupies `end - start - wait`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceEvent {
    pub thread: usize,
    pub loc: LocId,
    pub start: f64,
    pub end: f64,
    pub wait: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExecutionTrace {
    pub events: Vec<TraceEvent>,
    /// Completion time of each logical thread.
    pub finish: Vec<f64>,
    /// Time each thread was not queued on a lock.
    pub busy: Vec<f64>,
    pub acquisitions: u64,
}

impl ExecutionTrace {
    pub fn makespan(&self) -> f64 {
        self.finish.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_finish(&self) -> f64 {
        if self.finish.is_empty() {
            0.0
        } else {
            self.finish.iter().sum::<f64>() / self.finish.len() as f64
        }
    }

    /// Executions of each location, summed over threads.
    pub fn counts(&self, n: usize) -> Vec<u64> {
        let mut c = vec![0; n];
        for e in &self.events {
            c[e.loc.idx()] += 1;
        }
        c
    }

    /// Time-average of the number of threads executing locations in `set`,
    /// over the instants where at least one is.
    pub fn occupancy(&self, set: impl Fn(LocId) -> bool) -> f64 {
        let mut pts: Vec<(f64, i32)> = Vec::new();
        for e in self.events.iter().filter(|e| set(e.loc) && e.end > e.start) {
            pts.push((e.start, 1));
            pts.push((e.end, -1));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (mut area, mut busy, mut cur, mut last) = (0.0, 0.0, 0i32, 0.0);
        for (t, d) in pts {
            let dt = t - last;
            if cur > 0 {
                area += cur as f64 * dt;
                busy += dt;
            }
            cur += d;
            last = t;
        }
        if busy > 0.0 {
            area / busy
        } else {
            1.0
        }
    }
}

struct Th {
    code: usize,
    pc: Option<LocId>,
    time: f64,
    env: Vec<i64>,
    queued: bool,
    wait_since: f64,
    blocked_total: f64,
}

fn eval(e: &Expr, env: &[i64], shared: &[i64], is_shared: &[bool], rng: &mut ChaCha8Rng, star: f64) -> i64 {
    let mut ev = |x: &Expr| eval(x, env, shared, is_shared, rng, star);
    match e {
        Expr::Int(i) => *i,
        Expr::Star => rng.gen_bool(star.clamp(0.0, 1.0)) as i64,
        Expr::Var(v) => {
            if is_shared[v.idx()] {
                shared[v.idx()]
            } else {
                env[v.idx()]
            }
        }
        Expr::Unary(UnOp::Neg, x) => ev(x).wrapping_neg(),
        Expr::Unary(UnOp::Not, x) => (ev(x) == 0) as i64,
        Expr::Binary(op, a, b) => {
            let (x, y) = (ev(a), ev(b));
            match op {
                BinOp::Add => x.wrapping_add(y),
                BinOp::Sub => x.wrapping_sub(y),
                BinOp::Mul => x.wrapping_mul(y),
                BinOp::Div => x.checked_div(y).unwrap_or(0),
                BinOp::Rem => x.checked_rem(y).unwrap_or(0),
                BinOp::Eq => (x == y) as i64,
                BinOp::Ne => (x != y) as i64,
                BinOp::Lt => (x < y) as i64,
                BinOp::Le => (x <= y) as i64,
                BinOp::Gt => (x > y) as i64,
                BinOp::Ge => (x >= y) as i64,
                BinOp::And => (x != 0 && y != 0) as i64,
                BinOp::Or => (x != 0 || y != 0) as i64,
            }
        }
    }
}

fn stmt_cost(p: &Program, cfg: &SimConfig, blocks: &[Option<String>], l: LocId) -> f64 {
    let n = p.node(l);
    let base = p.cost_of(l).unwrap_or(match n.kind {
        NodeKind::Sync { .. } | NodeKind::Yield | NodeKind::Last => 0.0,
        _ => cfg.default_cost,
    });
    let sc = &cfg.workload.scale;
    let by_block = blocks.get(l.idx()).and_then(|b| b.as_ref()).and_then(|b| sc.get(b));
    base * by_block.or_else(|| sc.get(&n.name)).copied().unwrap_or(1.0)
}

/// Run the program once under `cfg` with the given seed.
pub fn simulate(p: &Program, cfg: &SimConfig, seed: u64) -> Result<ExecutionTrace, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfgraph = p.cfg();
    let blocks = block_of(p);
    let costs: Vec<f64> = (0..p.nodes.len()).map(|i| stmt_cost(p, cfg, &blocks, LocId(i as u32))).collect();
    let nv = p.vars.len();
    let is_shared: Vec<bool> = p.vars.iter().map(|v| v.kind != VarKind::Local).collect();
    let mut init = vec![0i64; nv];
    for (i, v) in p.vars.iter().enumerate() {
        if let Some(x) = cfg.workload.init.get(&v.name) {
            init[i] = *x;
        }
    }
    let mut shared = init.clone();
    for (i, v) in p.vars.iter().enumerate() {
        if v.kind == VarKind::Lock {
            shared[i] = -1;
        }
    }
    let nt = if cfg.threads == 0 { p.threads.len() } else { cfg.threads };
    let mut ths: Vec<Th> = (0..nt)
        .map(|i| {
            let code = i % p.threads.len();
            Th {
                code,
                pc: Some(p.threads[code].first),
                time: 0.0,
                env: init.clone(),
                queued: false,
                wait_since: 0.0,
                blocked_total: 0.0,
            }
        })
        .collect();
    let mut queues: BTreeMap<usize, VecDeque<usize>> = BTreeMap::new();
    let mut tr = ExecutionTrace { finish: vec![0.0; nt], busy: vec![0.0; nt], ..Default::default() };
    let acquire_cost = |waiting: usize| cfg.lock_base + cfg.lock_slope * waiting as f64;
    let star = cfg.workload.star_true;
    let mut steps = 0usize;
    loop {
        let Some(t) = (0..nt).filter(|i| ths[*i].pc.is_some() && !ths[*i].queued).min_by(|a, b| {
            ths[*a].time.total_cmp(&ths[*b].time).then(a.cmp(b))
        }) else {
            if ths.iter().all(|t| t.pc.is_none()) {
                break;
            }
            let stuck: Vec<String> =
                ths.iter().filter_map(|t| t.pc).map(|l| p.name(l).to_string()).collect();
            let time = ths.iter().map(|t| t.time).fold(0.0, f64::max);
            return Err(SimError::Deadlock { time, detail: stuck.join(", ") });
        };
        steps += 1;
        if steps > cfg.max_steps {
            return Err(SimError::StepLimit(cfg.max_steps));
        }
        let x = ths[t].pc.unwrap();
        let node = p.node(x);
        let mut c = costs[x.idx()];
        if cfg.workload.jitter > 0.0 && c > 0.0 {
            c *= 1.0 + cfg.workload.jitter * rng.gen_range(-1.0..1.0);
        }
        let start = ths[t].time;
        let succ = &cfgraph.succ[x.idx()];
        let mut next = succ.first().copied();
        match &node.kind {
            NodeKind::Assign { target, value } => {
                let v = eval(value, &ths[t].env, &shared, &is_shared, &mut rng, star);
                if is_shared[target.idx()] {
                    shared[target.idx()] = v;
                } else {
                    ths[t].env[target.idx()] = v;
                }
            }
            NodeKind::Havoc { target } | NodeKind::Input { target, .. } => {
                let v = rng.gen_range(0..cfg.workload.input_max.max(1));
                if is_shared[target.idx()] {
                    shared[target.idx()] = v;
                } else {
                    ths[t].env[target.idx()] = v;
                }
            }
            NodeKind::Output { value, .. } => {
                eval(value, &ths[t].env, &shared, &is_shared, &mut rng, star);
            }
            NodeKind::If { cond } | NodeKind::While { cond } => {
                let b = eval(cond, &ths[t].env, &shared, &is_shared, &mut rng, star) != 0;
                next = Some(succ[if b { 0 } else { 1 }]);
            }
            NodeKind::Goto { target } => next = Some(*target),
            NodeKind::Yield | NodeKind::Skip => {}
            NodeKind::Last => {
                ths[t].pc = None;
                tr.finish[t] = start;
                tr.busy[t] = start - ths[t].blocked_total;
                continue;
            }
            NodeKind::Sync { op, var } => {
                let vi = var.idx();
                match op {
                    SyncOp::Lock => {
                        if shared[vi] < 0 {
                            shared[vi] = t as i64;
                            let q = queues.get(&vi).map_or(0, |q| q.len());
                            c += acquire_cost(q);
                            tr.acquisitions += 1;
                        } else {
                            ths[t].queued = true;
                            ths[t].wait_since = start;
                            queues.entry(vi).or_default().push_back(t);
                            continue;
                        }
                    }
                    SyncOp::Unlock => {
                        if shared[vi] == t as i64 {
                            shared[vi] = -1;
                            let now = start + c;
                            if let Some(w) = queues.get_mut(&vi).and_then(|q| q.pop_front()) {
                                let left = queues[&vi].len();
                                shared[vi] = w as i64;
                                let ws = ths[w].wait_since;
                                let at = now.max(ws);
                                let end = at + acquire_cost(left);
                                tr.events.push(TraceEvent { thread: w, loc: ths[w].pc.unwrap(), start: ws, end, wait: at - ws });
                                tr.acquisitions += 1;
                                let wl = ths[w].pc.unwrap();
                                ths[w].blocked_total += at - ws;
                                ths[w].time = end;
                                ths[w].queued = false;
                                ths[w].pc = cfgraph.succ[wl.idx()].first().copied();
                            }
                        }
                    }
                    SyncOp::Wait | SyncOp::Assume | SyncOp::WaitNot | SyncOp::AssumeNot => {
                        let want = matches!(op, SyncOp::Wait | SyncOp::Assume);
                        if (shared[vi] == 1) != want {
                            // Spin until another thread has moved on.
                            let other = (0..nt)
                                .filter(|i| *i != t && ths[*i].pc.is_some() && !ths[*i].queued)
                                .map(|i| ths[i].time)
                                .fold(f64::INFINITY, f64::min);
                            if !other.is_finite() {
                                return Err(SimError::Deadlock { time: start, detail: p.name(x).to_string() });
                            }
                            ths[t].time = other.max(start) + 1e-6;
                            continue;
                        }
                    }
                    SyncOp::Notify | SyncOp::Set => shared[vi] = 1,
                    SyncOp::Reset | SyncOp::Unset => shared[vi] = 0,
                }
            }
        }
        let end = start + c;
        tr.events.push(TraceEvent { thread: t, loc: x, start, end, wait: 0.0 });
        ths[t].time = end;
        ths[t].pc = next;
        let _ = ths[t].code;
    }
    Ok(tr)
}

const TL_BENCH: &str = "decl shared x;\ndecl local i, n;\ndecl lock m;\n\
thread T {\n    while (i < n) {\n        lock(m);\n        x := x + 1;\n        unlock(m);\n        i := i + 1;\n    }\n}\n";

/// Measure the lock acquisition overhead at contention `1..=threads`: run a
/// lock-heavy loop with and without its locks and divide the extra busy time
/// by the number of acquisitions.
pub fn measure_tl(threads: usize, cfg: &SimConfig) -> TlCurve {
    let locked = parse_program(TL_BENCH).expect("benchmark parses");
    let unlocked = parse_program(&TL_BENCH.replace("        lock(m);\n", "").replace("        unlock(m);\n", ""))
        .expect("benchmark parses");
    let mut samples = Vec::new();
    for k in 1..=threads.max(1) {
        let mut c = cfg.clone();
        c.threads = k;
        c.workload = Workload::default();
        c.workload.init.insert("n".into(), 50);
        let (mut extra, mut acq) = (0.0, 0u64);
        for r in 0..cfg.runs.max(1) {
            let seed = cfg.seed.wrapping_add(r as u64);
            let a = simulate(&locked, &c, seed).expect("benchmark runs");
            let b = simulate(&unlocked, &c, seed).expect("benchmark runs");
            extra += a.busy.iter().sum::<f64>() - b.busy.iter().sum::<f64>();
            acq += a.acquisitions;
        }
        samples.push(if acq > 0 { extra / acq as f64 } else { cfg.lock_base });
    }
    TlCurve { samples }
}

/// Profile the coarse program: statement frequencies, block costs and
/// contention of the coarse critical statements, each from separate runs.
pub fn profile(orig: &Program, coarse: &LockPlacement, cfg: &SimConfig, tl: TlCurve) -> Result<PerfParams, crate::perfmodel::sim::SimError> {
    let patched = apply_placement(orig, coarse);
    let n0 = orig.nodes.len();
    let nt = if cfg.threads == 0 { orig.threads.len() } else { cfg.threads };
    let runs = cfg.runs.max(1);
    let denom = (runs * nt) as f64;
    let stmts = orig.all_statements();

    let mut counts = vec![0u64; patched.nodes.len()];
    for r in 0..runs {
        let tr = simulate(&patched, cfg, cfg.seed.wrapping_add(r as u64))?;
        for (i, c) in tr.counts(patched.nodes.len()).into_iter().enumerate() {
            counts[i] += c;
        }
    }
    let freqs: BTreeMap<String, f64> =
        stmts.iter().map(|l| (orig.name(*l).to_string(), counts[l.idx()] as f64 / denom)).collect();

    let blocks = block_of(orig);
    let mut block_costs: BTreeMap<String, f64> = BTreeMap::new();
    for l in &stmts {
        block_costs.entry(blocks[l.idx()].clone().unwrap()).or_insert(0.0);
    }
    for r in 0..runs {
        let tr = simulate(&patched, cfg, cfg.seed.wrapping_add(1000 + r as u64))?;
        for e in tr.events.iter().filter(|e| e.loc.idx() < n0) {
            if let Some(b) = &blocks[e.loc.idx()] {
                *block_costs.get_mut(b).unwrap() += (e.end - e.start) / denom;
            }
        }
    }

    let (inl, _) = held_sets(orig, coarse);
    let in_s: Vec<bool> = (0..patched.nodes.len())
        .map(|i| {
            if i < n0 {
                inl[i] != 0 && !matches!(orig.nodes[i].kind, NodeKind::Last)
            } else {
                matches!(patched.nodes[i].kind, NodeKind::Sync { op: SyncOp::Lock, .. })
            }
        })
        .collect();
    let mut kappa = 0.0;
    for r in 0..runs {
        let tr = simulate(&patched, cfg, cfg.seed.wrapping_add(2000 + r as u64))?;
        kappa += tr.occupancy(|l| in_s[l.idx()]);
    }
    kappa /= runs as f64;

    let protected: Vec<String> = stmts.iter().filter(|l| in_s[l.idx()]).map(|l| orig.name(*l).to_string()).collect();
    let hit: BTreeSet<&String> = stmts.iter().filter(|l| in_s[l.idx()]).filter_map(|l| blocks[l.idx()].as_ref()).collect();
    let tc = hit.iter().map(|b| block_costs[*b]).sum();
    let nu = lock_followers(coarse).iter().map(|v| freqs.get(orig.name(*v)).copied().unwrap_or(0.0)).sum();
    Ok(PerfParams { kappa, tc, nu, tl, block_costs, freqs, protected })
}
