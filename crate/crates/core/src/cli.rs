//! Command-line front end. Exit codes: 0 success, 1 internal error, 2 input error,
//! 3 when `root --require-agreement` finds `V̂` and `Ŝ` disagreeing.

use std::ffi::OsString;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use crate::biascorr::{bias_moment, bias_s, BiasForm, SampleSizes};
use crate::error::Error;
use crate::estimators::{estimate_all, s_hat_chunked, FreqPanel, DEFAULT_CHUNK_SIZE};
use crate::io;
use crate::lsfit::{ls_pair, w_invariance_check};
use crate::pairing::{pair_snps, PairingOutcome};
use crate::rootsplit::{find_root_split, RootPartition, SearchMode, Statistic};
use crate::symcore::{
    apply_d, apply_v, apply_w, kernel_dim, operator_norm, OperatorKind, SymMat,
    DEFAULT_OPERATOR_CAP,
};
use crate::treesim::{
    binomial_sample, expected_sigma, expected_sigma1, scenario_tree, simulate_panel,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DISAGREEMENT: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "popcov",
    version,
    about = "Population covariance estimation from allele-frequency panels"
)]
pub struct Cli {
    /// Worker threads for estimation and simulation (default: all cores).
    #[arg(long, global = true, env = "POPCOV_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate Ŵ, D̂, V̂ and Ŝ from a panel.
    Stats(StatsArgs),
    /// Find the root bipartition from V̂ and from Ŝ.
    Root(RootArgs),
    /// Pair SNPs across chromosomes and write the pairing report.
    Pair(PairArgs),
    /// Least-squares fits of V̂ and Ŵ in a subspace, with the consistency check.
    Lsfit(LsfitArgs),
    /// Simulate a panel under the sequential-split scenario.
    Simulate(SimulateArgs),
    /// Print operator norms and kernel dimensions.
    Norms(NormsArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EstimationArgs {
    /// Panel TSV (`snp_id, chrom, pop...`), optionally gzip-compressed with a `.gz` suffix.
    #[arg(long)]
    pub panel: PathBuf,
    /// Subtract the sampling bias; requires `--sizes`.
    #[arg(long)]
    pub bias: bool,
    /// Sample-size TSV matching the panel; only used with `--bias`.
    #[arg(long)]
    pub sizes: Option<PathBuf>,
    /// Bias formula: `paper` or `alt`.
    #[arg(long, default_value = "paper")]
    pub bias_form: BiasForm,
    /// SNPs per accumulation chunk; results are reproducible for a fixed value.
    #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE)]
    pub chunk_size: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct StatsArgs {
    #[command(flatten)]
    pub est: EstimationArgs,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Pixel size of one matrix cell in the heatmaps.
    #[arg(long, default_value_t = 16)]
    pub heatmap_cell: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct RootArgs {
    #[command(flatten)]
    pub est: EstimationArgs,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Search mode: `auto`, `exhaustive` or `greedy`.
    #[arg(long, default_value = "auto")]
    pub mode: SearchMode,
    /// Exit with status 3 if the V̂ and Ŝ partitions differ.
    #[arg(long)]
    pub require_agreement: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct PairArgs {
    /// Panel TSV.
    #[arg(long)]
    pub panel: PathBuf,
    /// Pairing report TSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct LsfitArgs {
    /// Panel TSV; alternatively give `--vhat` and `--what`.
    #[arg(long, conflicts_with_all = ["vhat", "what"])]
    pub panel: Option<PathBuf>,
    /// V̂ matrix file.
    #[arg(long, requires = "what")]
    pub vhat: Option<PathBuf>,
    /// Ŵ matrix file.
    #[arg(long, requires = "vhat")]
    pub what: Option<PathBuf>,
    /// Subspace file (`# basis k=<count> m=<dim>` followed by matrix blocks).
    #[arg(long)]
    pub subspace: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Scenario file of `key=value` lines.
    #[arg(long)]
    pub config: PathBuf,
    /// Seed; overrides the scenario file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct NormsArgs {
    /// Smallest dimension.
    #[arg(long, default_value_t = 2)]
    pub m_min: usize,
    /// Largest dimension (at most 64).
    #[arg(long, default_value_t = 10)]
    pub m_max: usize,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Disagreement(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Entry point for the binary.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    run(std::env::args_os())
}

/// Parses `args` (including the program name) and runs the command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| dispatch(&cli)));
    match outcome {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(Failure::Input(msg))) => {
            eprintln!("error: {msg}");
            EXIT_INPUT
        }
        Ok(Err(Failure::Disagreement(msg))) => {
            eprintln!("error: {msg}");
            EXIT_DISAGREEMENT
        }
        Err(_) => {
            eprintln!("error: internal failure");
            EXIT_INTERNAL
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Input("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::Input(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Stats(a) => cmd_stats(a),
        Command::Root(a) => cmd_root(a),
        Command::Pair(a) => cmd_pair(a),
        Command::Lsfit(a) => cmd_lsfit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Norms(a) => cmd_norms(a),
    })
}

fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Input(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e).into())
}

/// Everything `stats` and `root` need from a panel.
struct Computed {
    panel: FreqPanel,
    what: SymMat,
    dhat: SymMat,
    vhat: SymMat,
    pairing: Option<PairingOutcome>,
    shat: Option<SymMat>,
    pairing_error: Option<String>,
}

fn compute(args: &EstimationArgs) -> CliResult<Computed> {
    if args.chunk_size == 0 {
        return Err(Failure::Input("--chunk-size must be at least 1".into()));
    }
    let sizes_path = match (args.bias, &args.sizes) {
        (true, None) => return Err(Failure::Input("--bias requires --sizes".into())),
        (false, Some(_)) => return Err(Failure::Input("--sizes given without --bias".into())),
        (_, s) => s.clone(),
    };
    // values outside [0, 1] are fine for the estimators; sampling correction needs frequencies
    let mut panel = io::read_panel(&args.panel)?;
    if args.bias {
        panel = panel.into_frequencies()?;
    }
    let sizes: Option<SampleSizes> = sizes_path.map(|p| io::read_sizes(&p, &panel)).transpose()?;
    info!(
        "read {} SNPs x {} populations",
        panel.n_snps(),
        panel.n_pops()
    );

    let est = estimate_all(&panel, args.chunk_size)?;
    let (mut what, mut dhat, mut vhat) = (est.w, est.d, est.v);
    if let Some(sizes) = &sizes {
        let b = bias_moment(&panel, sizes, args.bias_form)?;
        what = &what - &apply_w(&b);
        dhat = &dhat - &apply_d(&b);
        vhat = &vhat - &apply_v(&b);
    }

    let (pairing, shat, pairing_error) = match pair_snps(&panel) {
        Ok(outcome) if !outcome.pairing.is_empty() => {
            let mut s = s_hat_chunked(&panel, &outcome.pairing, args.chunk_size)?;
            if let Some(sizes) = &sizes {
                s = &s - &bias_s(&panel, &outcome.pairing, sizes, args.bias_form)?;
            }
            (Some(outcome), Some(s), None)
        }
        Ok(_) => (
            None,
            None,
            Some("fewer than two SNPs; no pairs".to_string()),
        ),
        Err(e @ Error::PairingInfeasible(_)) => {
            warn!("{e}; Ŝ not computed");
            (None, None, Some(e.to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    Ok(Computed {
        panel,
        what,
        dhat,
        vhat,
        pairing,
        shat,
        pairing_error,
    })
}

fn pairing_summary(c: &Computed) -> serde_json::Value {
    match &c.pairing {
        Some(p) => json!({
            "n_pairs": p.pairing.len(),
            "discarded_snps": p.discarded.len(),
            "method": p.method,
        }),
        None => json!({
            "n_pairs": 0,
            "discarded_snps": c.panel.n_snps(),
            "error": c.pairing_error,
        }),
    }
}

fn cmd_stats(args: &StatsArgs) -> CliResult<()> {
    let start = Instant::now();
    let c = compute(&args.est)?;
    ensure_dir(&args.out)?;
    let mut outputs = vec![("what", &c.what), ("dhat", &c.dhat), ("vhat", &c.vhat)];
    if let Some(s) = &c.shat {
        outputs.push(("shat", s));
    }
    for (name, mat) in &outputs {
        io::write_symmat_file(&args.out.join(format!("{name}.tsv")), mat)?;
        io::write_heatmap_pgm(
            &args.out.join(format!("heatmap_{name}.pgm")),
            mat,
            args.heatmap_cell,
        )?;
    }
    let report = json!({
        "command": "stats",
        "n": c.panel.n_snps(),
        "m": c.panel.n_pops(),
        "populations": c.panel.pop_names(),
        "bias": args.est.bias,
        "bias_form": args.est.bias_form,
        "pairing": pairing_summary(&c),
        "outputs": outputs.iter().map(|(n, _)| format!("{n}.tsv")).collect::<Vec<_>>(),
        "runtime_seconds": start.elapsed().as_secs_f64(),
        "config": args,
    });
    write_json(&args.out.join("report.json"), &report)
}

fn search(m: &SymMat, mode: SearchMode, method: Statistic) -> CliResult<RootPartition> {
    let part = find_root_split(m, mode)?.with_method(method);
    if part.n_tied > 1 {
        warn!(
            "{method}: {} bipartitions tie for the best score; reporting the canonical one",
            part.n_tied
        );
    }
    Ok(part)
}

fn cmd_root(args: &RootArgs) -> CliResult<()> {
    let c = compute(&args.est)?;
    ensure_dir(&args.out)?;
    let names = c.panel.pop_names();
    let v_part = search(&c.vhat, args.mode, Statistic::Vhat)?;
    io_json(&args.out.join("root_vhat.json"), &v_part, names)?;
    let s_part = match &c.shat {
        Some(s) => {
            let p = search(s, args.mode, Statistic::Shat)?;
            io_json(&args.out.join("root_shat.json"), &p, names)?;
            Some(p)
        }
        None => None,
    };
    let describe = |p: &RootPartition| {
        let g = |idx: &[usize]| {
            idx.iter()
                .map(|&i| names[i].as_str())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!("{{{}}}|{{{}}}", g(&p.group_a), g(&p.group_b))
    };
    println!("vhat  {}  score {:e}", describe(&v_part), v_part.score);
    if let Some(p) = &s_part {
        println!("shat  {}  score {:e}", describe(p), p.score);
    }
    if args.require_agreement {
        match &s_part {
            None => {
                return Err(Failure::Input(format!(
                    "--require-agreement needs Ŝ, which could not be computed: {}",
                    c.pairing_error.as_deref().unwrap_or("no pairing")
                )))
            }
            Some(p) if p.group_a != v_part.group_a => {
                return Err(Failure::Disagreement(format!(
                    "root partitions differ: vhat {} vs shat {}",
                    describe(&v_part),
                    describe(p)
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

fn io_json(path: &Path, part: &RootPartition, names: &[String]) -> CliResult<()> {
    write_json(path, &part.to_json(names))
}

fn cmd_pair(args: &PairArgs) -> CliResult<()> {
    let panel = io::read_panel(&args.panel)?;
    let outcome = pair_snps(&panel)?;
    io::write_pairing_report(&args.out, &panel, &outcome)?;
    println!(
        "pairs={} discarded={} method={}",
        outcome.pairing.len(),
        outcome.discarded.len(),
        serde_json::to_value(&outcome.method)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default()
    );
    Ok(())
}

fn cmd_lsfit(args: &LsfitArgs) -> CliResult<()> {
    let (vhat, what) = match (&args.panel, &args.vhat, &args.what) {
        (Some(p), _, _) => {
            let est = estimate_all(&io::read_panel(p)?, DEFAULT_CHUNK_SIZE)?;
            (est.v, est.w)
        }
        (None, Some(v), Some(w)) => (io::read_symmat_file(v)?, io::read_symmat_file(w)?),
        _ => {
            return Err(Failure::Input(
                "give --panel or both --vhat and --what".into(),
            ))
        }
    };
    let l = io::read_subspace_file(&args.subspace)?;
    let pair = ls_pair(&vhat, &what, &l)?;
    let invariant = w_invariance_check(&l)?;
    ensure_dir(&args.out)?;
    io::write_symmat_file(&args.out.join("v_fit.tsv"), &pair.v_fit)?;
    io::write_symmat_file(&args.out.join("w_fit.tsv"), &pair.w_fit)?;
    write_json(
        &args.out.join("lsfit.json"),
        &json!({
            "m": l.dim_m(),
            "subspace_dim": l.rank(),
            "w_invariant": invariant,
            "consistent": pair.consistent,
            "gap": pair.gap,
            "config": args,
        }),
    )?;
    println!(
        "consistent={} gap={:e} w_invariant={}",
        pair.consistent, pair.gap, invariant
    );
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg = io::read_scenario(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    if cfg.sample_size.is_some() {
        // sampling needs values in [0, 1]
        cfg.sim.clamp = true;
    }
    let tree = scenario_tree(&cfg.params)?;
    let panel = simulate_panel(&tree, &cfg.sim)?;
    ensure_dir(&args.out)?;
    let mut clamped = 0;
    match cfg.sample_size {
        Some(n) => {
            let sizes = SampleSizes::uniform(panel.n_snps(), panel.n_pops(), n);
            let (sampled, c) = binomial_sample(&panel, &sizes, cfg.sim.seed)?;
            clamped = c;
            io::write_panel(&args.out.join("panel.tsv"), &sampled)?;
            io::write_panel(&args.out.join("population_panel.tsv"), &panel)?;
            io::write_sizes(&args.out.join("sizes.tsv"), &panel, &sizes)?;
        }
        None => io::write_panel(&args.out.join("panel.tsv"), &panel)?,
    }
    let sigma = expected_sigma(&tree);
    io::write_symmat_file(&args.out.join("expected_sigma.tsv"), &sigma)?;
    io::write_symmat_file(&args.out.join("expected_v.tsv"), &apply_v(&sigma))?;
    io::write_symmat_file(
        &args.out.join("expected_sigma1.tsv"),
        &expected_sigma1(&tree),
    )?;
    write_json(
        &args.out.join("report.json"),
        &json!({
            "command": "simulate",
            "n": panel.n_snps(),
            "m": panel.n_pops(),
            "clamped_before_sampling": clamped,
            "runtime_seconds": start.elapsed().as_secs_f64(),
            "config": {
                "scenario": cfg.params,
                "simulation": cfg.sim,
                "sample_size": cfg.sample_size,
            },
        }),
    )
}

fn cmd_norms(args: &NormsArgs) -> CliResult<()> {
    if args.m_min < 2 || args.m_min > args.m_max {
        return Err(Failure::Input("need 2 <= --m-min <= --m-max".into()));
    }
    // validate the whole range before printing anything
    if args.m_max > DEFAULT_OPERATOR_CAP {
        return Err(Error::DimCapExceeded {
            m: args.m_max,
            cap: DEFAULT_OPERATOR_CAP,
        }
        .into());
    }
    for m in args.m_min..=args.m_max {
        let w = operator_norm(OperatorKind::W, m)?;
        let v = operator_norm(OperatorKind::V, m)?;
        let hd = operator_norm(OperatorKind::HalfNegD, m)?;
        println!(
            "m={m}  W {w:.10}  V {v:.10}  -D/2 {hd:.10}  kerW {}  kerD {}  kerV {}",
            kernel_dim(OperatorKind::W, m)?,
            kernel_dim(OperatorKind::D, m)?,
            kernel_dim(OperatorKind::V, m)?
        );
    }
    Ok(())
}
