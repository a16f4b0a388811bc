use clap::{Args, Parser, Subcommand};
use locksynth::abstraction::abstract_program;
use locksynth::automata::{build_np_nfa, build_p_nfa, ConflictSet, StateGraph};
use locksynth::lang::{build_flow_graph, parse_program, Program};
use locksynth::lockcons::{
    default_lock_count, encode_coarse, encode_fine, encode_global, synthesize, Objective,
};
use locksynth::perfmodel::{PerfParams, SimConfig, Workload};
use locksynth::pipeline::{self, infer_conflicts, profile_coarse, speedup_csv, speedup_sweep, Options};
use std::path::PathBuf;
use std::process::ExitCode;

const NFA_DUMP_LIMIT: usize = 20_000;

#[derive(Parser)]
#[command(name = "locksynth", version, about = "Synthesize lock placements for programs written against a non-preemptive scheduler")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check preemption-safety of a program as written.
    Check {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Infer constraints and emit the patched source.
    Synth {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "coarse")]
        objective: Objective,
        #[arg(long)]
        locks: Option<usize>,
        /// Profile produced by `locksynth profile`; simulated on demand otherwise.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Write the patched source here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Write the JSON report here instead of stderr.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        dump_cnf: bool,
        #[arg(long)]
        dump_mutex: bool,
        #[arg(long)]
        no_verify: bool,
    },
    /// Simulate the coarse solution and print the measured parameters.
    Profile {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// CSV of predicted against simulated speed-up of fine over coarse
    /// locking while the cost of some blocks is scaled.
    Plot {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Blocks (or statement labels) whose cost is scaled.
        #[arg(long, value_delimiter = ',', required = true)]
        blocks: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2,4,8,16,32")]
        scales: Vec<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// Largest displacement bound; the schedule doubles from 2 up to it.
    #[arg(long)]
    bound: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Simulated threads (0: one per program thread).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 4)]
    runs: usize,
    /// e.g. `n=20,scale.C1=2,star=0.5,jitter=0.1`
    #[arg(long)]
    workload: Option<String>,
    #[arg(long)]
    dump_cfg: bool,
    #[arg(long)]
    dump_abs: bool,
    #[arg(long)]
    dump_nfa: bool,
}

enum Fail {
    Property,
    Tool(String),
}

impl<E: std::fmt::Display> From<E> for Fail {
    fn from(e: E) -> Self {
        Fail::Tool(e.to_string())
    }
}

fn schedule(bound: usize) -> Vec<usize> {
    let mut s = vec![];
    let mut k = 2;
    while k < bound {
        s.push(k);
        k *= 2;
    }
    s.push(bound.max(1));
    s
}

impl Common {
    fn options(&self) -> Result<Options, Fail> {
        let mut o = Options::default();
        if let Some(b) = self.bound {
            o.schedule = schedule(b);
            o.synth_schedule = o.schedule.clone();
        }
        o.max_len = self.max_len;
        o.sim = SimConfig { threads: self.threads, seed: self.seed, runs: self.runs, ..SimConfig::default() };
        if let Some(w) = &self.workload {
            o.sim.workload = Workload::parse(w).map_err(Fail::Tool)?;
        }
        Ok(o)
    }

    fn dumps(&self, p: &Program) {
        if self.dump_cfg {
            for th in &p.threads {
                eprint!("{}", build_flow_graph(p, th.tid).dump(p));
            }
        }
        if !(self.dump_abs || self.dump_nfa) {
            return;
        }
        let ap = abstract_program(p);
        if self.dump_abs {
            eprint!("{}", ap.dump());
        }
        if self.dump_nfa {
            let np = build_np_nfa(&ap);
            eprintln!("# non-preemptive");
            eprint!("{}", StateGraph::new(&np).dump(NFA_DUMP_LIMIT, |o| ap.fmt_obs(o)));
            let pn = build_p_nfa(&ap, &ConflictSet::default());
            eprintln!("# preemptive");
            eprint!("{}", StateGraph::new(&pn).dump(NFA_DUMP_LIMIT, |o| ap.fmt_obs(o)));
        }
    }
}

fn load(path: &PathBuf) -> Result<Program, Fail> {
    let src = std::fs::read_to_string(path).map_err(|e| Fail::Tool(format!("{}: {e}", path.display())))?;
    parse_program(&src).map_err(|e| Fail::Tool(format!("{}: {e}", path.display())))
}

fn write_or_print(out: &Option<PathBuf>, text: &str, stderr: bool) -> Result<(), Fail> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Fail::Tool(format!("{}: {e}", path.display()))),
        None if stderr => {
            eprintln!("{text}");
            Ok(())
        }
        None => emit(text),
    }
}

/// Write to stdout; a reader that went away (`| head`) is not an error.
fn emit(text: &str) -> Result<(), Fail> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn dump_cnf(p: &Program, opts: &Options) -> Result<(), Fail> {
    let ap = abstract_program(p);
    let (cs, ..) = infer_conflicts(&ap, opts)?;
    if cs.is_empty() {
        eprintln!("c no conflicts; empty placement");
        return Ok(());
    }
    let locks = match opts.objective {
        Objective::Perf => 1,
        _ => opts.locks.unwrap_or_else(|| default_lock_count(&cs)),
    };
    let mut enc = encode_global(&ap, &cs, locks)?;
    match opts.objective {
        Objective::Coarse => encode_coarse(&mut enc),
        Objective::Fine => encode_fine(&mut enc, &ap),
        Objective::None | Objective::Perf => {}
    }
    eprint!("{}", enc.wcnf.to_dimacs());
    Ok(())
}

fn run(cmd: Cmd) -> Result<(), Fail> {
    match cmd {
        Cmd::Check { file, common } => {
            let p = load(&file)?;
            common.dumps(&p);
            let rep = pipeline::check(&p, &common.options()?);
            emit(&(serde_json::to_string_pretty(&rep)? + "\n"))?;
            if rep.preemption_safe && rep.precondition.is_empty() {
                Ok(())
            } else {
                Err(Fail::Property)
            }
        }
        Cmd::Synth { file, common, objective, locks, profile, out, report, dump_cnf: cnf, dump_mutex, no_verify } => {
            let p = load(&file)?;
            common.dumps(&p);
            let mut opts = common.options()?;
            opts.objective = objective;
            opts.locks = locks;
            opts.verify = !no_verify;
            if let Some(path) = profile {
                let text = std::fs::read_to_string(&path).map_err(|e| Fail::Tool(format!("{}: {e}", path.display())))?;
                opts.perf = Some(PerfParams::from_text(&text)?);
            }
            if cnf {
                dump_cnf(&p, &opts)?;
            }
            let s = match pipeline::run(&p, &opts) {
                Ok(s) => s,
                Err(e @ (pipeline::PipelineError::Precondition(_)
                | pipeline::PipelineError::NotLockFixable(_)
                | pipeline::PipelineError::Lock(_))) => {
                    eprintln!("locksynth: {e}");
                    return Err(Fail::Property);
                }
                Err(e) => return Err(e.into()),
            };
            if dump_mutex {
                for (i, it) in s.report.iterations.iter().enumerate() {
                    eprintln!("iteration {i} (bound {}): {}", it.bound, it.formula);
                    for m in &it.mutexes {
                        eprintln!("  {m}");
                    }
                }
            }
            write_or_print(&out, &s.text, false)?;
            write_or_print(&report, &s.report.to_json(), true)?;
            if s.verified() {
                Ok(())
            } else {
                Err(Fail::Property)
            }
        }
        Cmd::Profile { file, common, out } => {
            let p = load(&file)?;
            common.dumps(&p);
            let opts = common.options()?;
            let ap = abstract_program(&p);
            let (cs, ..) = infer_conflicts(&ap, &opts)?;
            let params = profile_coarse(&ap, &cs, &opts.sim)?;
            write_or_print(&out, &params.to_text(), false)
        }
        Cmd::Plot { file, common, blocks, scales } => {
            let p = load(&file)?;
            common.dumps(&p);
            let opts = common.options()?;
            let ap = abstract_program(&p);
            let (cs, ..) = infer_conflicts(&ap, &opts)?;
            let coarse = synthesize(&ap, &cs, 1, Objective::Coarse)?.placement;
            let fine = synthesize(&ap, &cs, 1, Objective::Fine)?.placement;
            let blocks: Vec<&str> = blocks.iter().map(String::as_str).collect();
            let pts = speedup_sweep(&p, &coarse, &fine, &blocks, &scales, &opts.sim)?;
            emit(&speedup_csv(&pts))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Property) => ExitCode::from(1),
        Err(Fail::Tool(msg)) => {
            eprintln!("locksynth: {msg}");
            ExitCode::from(2)
        }
    }
}
