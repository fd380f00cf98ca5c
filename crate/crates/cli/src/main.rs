use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use transolve_cli::exit_codes;
use transolve_cli::gen::{generate, GenKind};
use transolve_cli::oracle::oracle_solve;
use transolve_cli::report::{build_report, render, RunReport};
use transolve_core::ipd::{ipd_solve, trace_to_csv, Schedule, SolveStatus, SolverConfig};
use transolve_core::problem::GeneralizedTransportProblem;

#[derive(Parser)]
#[command(
    name = "transolve",
    about = "Sparse solver for generalized transport problems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a problem instance and write it as JSON
    Gen(GenArgs),
    /// Solve a problem file end to end, writing a report and a CSV trace
    Solve(SolveArgs),
    /// Grid-Laplacian robustness benchmark (W-cycle vs Jacobi-PCG)
    BenchAmg(BenchArgs),
    /// Brute-force reference solve for tiny instances
    Oracle(OracleArgs),
    /// Render a saved report, re-deriving the totals from its trace
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// ot-random | ot-quadratic | birkhoff | birkhoff-fixed |
    /// partial-random | partial-quadratic
    #[arg(long)]
    kind: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: PathBuf,
    /// solver config JSON; defaults apply when absent
    #[arg(long)]
    config: Option<PathBuf>,
    /// linear backend for large components: amg | pcg
    #[arg(long)]
    backend: Option<String>,
    /// schedule override: constant:A | warmup:HI,K0,LO | vanishing:P
    #[arg(long)]
    schedule: Option<String>,
    /// KKT tolerance override
    #[arg(long)]
    tol: Option<f64>,
    /// report path; the trace CSV lands next to it with a .trace.csv suffix
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// comma-separated grid exponents k (mesh 1/h = 2^k)
    #[arg(long, default_value = "4,6")]
    grid_k: String,
    /// comma-separated shifts; 0 runs in the mean-zero subspace
    #[arg(long, default_value = "1e-4,1e-6,1e-8,1e-10,0")]
    eps: String,
    #[arg(long, default_value_t = 1e-11)]
    tol: f64,
    /// benchmark a Matrix Market Laplacian instead of the built-in grids
    #[arg(long, conflicts_with = "grid_k")]
    matrix: Option<PathBuf>,
    /// write the per-level {level,size,nnz} summary of the last hierarchy
    #[arg(long)]
    levels_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    problem: PathBuf,
    /// write the result JSON here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    report: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_codes::INVALID_INPUT
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Solve(args) => cmd_solve(args),
        Command::BenchAmg(args) => cmd_bench(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn load_problem(path: &Path) -> Result<GeneralizedTransportProblem> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading problem file {}", path.display()))?;
    GeneralizedTransportProblem::from_json(&text)
        .map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()))
}

fn parse_schedule(text: &str) -> Result<Schedule> {
    let (kind, rest) = text
        .split_once(':')
        .map(|(k, r)| (k, Some(r)))
        .unwrap_or((text, None));
    let nums = |r: Option<&str>| -> Result<Vec<f64>> {
        r.unwrap_or("")
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().context("schedule parameter"))
            .collect()
    };
    let params = nums(rest)?;
    match (kind, params.as_slice()) {
        ("constant", [alpha]) => Ok(Schedule::Constant { alpha: *alpha }),
        ("warmup", [hi, k0, lo]) => Ok(Schedule::Warmup {
            alpha_hi: *hi,
            k0: *k0 as usize,
            alpha_lo: *lo,
        }),
        ("vanishing", [p]) => Ok(Schedule::Vanishing { p: *p }),
        _ => bail!(
            "cannot parse schedule `{text}`; expected constant:A, warmup:HI,K0,LO, or vanishing:P"
        ),
    }
}

fn cmd_gen(args: GenArgs) -> Result<i32> {
    let kind: GenKind = args
        .kind
        .parse()
        .map_err(|e: String| anyhow::anyhow!("{e}"))?;
    let problem = generate(kind, args.n, args.seed)?;
    std::fs::write(&args.out, problem.to_json())
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} ({}x{}, seed {})",
        args.out.display(),
        problem.m,
        problem.n,
        args.seed
    );
    Ok(exit_codes::SUCCESS)
}

fn cmd_solve(args: SolveArgs) -> Result<i32> {
    let problem = load_problem(&args.problem)?;
    let mut config: SolverConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => SolverConfig::default(),
    };
    if let Some(backend) = &args.backend {
        if !matches!(backend.as_str(), "amg" | "pcg") {
            bail!("backend must be `amg` or `pcg`, got `{backend}`");
        }
        config.linear.backend = backend.clone();
    }
    if let Some(schedule) = &args.schedule {
        config.schedule = parse_schedule(schedule)?;
    }
    if let Some(tol) = args.tol {
        config.kkt_tol = tol;
    }
    let started = std::time::Instant::now();
    let result = match ipd_solve(&problem, &config) {
        Ok(result) => result,
        Err(err) => {
            eprintln!("solver failure: {err}");
            return Ok(exit_codes::SOLVER_FAILURE);
        }
    };
    let wall = started.elapsed().as_secs_f64();
    let report = build_report(&problem, &config, &result, wall);
    std::fs::write(&args.out, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let trace_path = trace_path_for(&args.out);
    std::fs::write(&trace_path, trace_to_csv(&result.trace))
        .with_context(|| format!("writing {}", trace_path.display()))?;
    print!("{}", render(&report));
    println!("report: {}", args.out.display());
    println!("trace:  {}", trace_path.display());
    Ok(match result.status {
        SolveStatus::Converged => exit_codes::SUCCESS,
        SolveStatus::MaxOuterReached => exit_codes::NON_CONVERGENCE,
    })
}

fn trace_path_for(report_path: &Path) -> PathBuf {
    let stem = report_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    report_path.with_file_name(format!("{stem}.trace.csv"))
}

fn cmd_bench(args: BenchArgs) -> Result<i32> {
    let eps_list: Vec<f64> = args
        .eps
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.trim().parse::<f64>().context("eps value"))
        .collect::<Result<_>>()?;
    let mut levels_summary = String::new();
    let csv = match &args.matrix {
        Some(path) => {
            let file = std::fs::File::open(path)
                .with_context(|| format!("opening {}", path.display()))?;
            let base = transolve_core::sparsela::matrix_market::read(
                &mut std::io::BufReader::new(file),
            )
            .with_context(|| format!("parsing {}", path.display()))?;
            if base.rows != base.cols {
                bail!("matrix must be square, got {}x{}", base.rows, base.cols);
            }
            let mut rows = Vec::new();
            for &eps in &eps_list {
                let (row, levels) =
                    transolve_cli::bench::bench_matrix(&base, base.rows, eps, args.tol, 0);
                levels_summary = levels;
                rows.push(row);
            }
            transolve_cli::bench::rows_to_csv(&rows)
        }
        None => {
            let grid_ks: Vec<u32> = args
                .grid_k
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.trim().parse::<u32>().context("grid exponent"))
                .collect::<Result<_>>()?;
            if grid_ks.iter().any(|&k| k > 8) {
                bail!("grid exponents above 8 are out of the desk-scale budget");
            }
            let rows = transolve_cli::bench::bench_amg(&grid_ks, &eps_list, args.tol);
            if args.levels_out.is_some() {
                if let (Some(&k), Some(&eps)) = (grid_ks.last(), eps_list.last()) {
                    let g = 2usize.pow(k) + 1;
                    let base = transolve_core::amg::grid_graph_laplacian(g);
                    let (_, levels) = transolve_cli::bench::bench_matrix(
                        &base,
                        g - 1,
                        eps,
                        args.tol,
                        u64::from(k),
                    );
                    levels_summary = levels;
                }
            }
            transolve_cli::bench::rows_to_csv(&rows)
        }
    };
    if let Some(path) = &args.levels_out {
        std::fs::write(path, &levels_summary)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(exit_codes::SUCCESS)
}

fn cmd_oracle(args: OracleArgs) -> Result<i32> {
    let problem = load_problem(&args.problem)?;
    let result = match oracle_solve(&problem) {
        Ok(result) => result,
        Err(err) => {
            eprintln!("oracle: {err}");
            return Ok(exit_codes::INVALID_INPUT);
        }
    };
    let plan_rows: Vec<Vec<f64>> = (0..result.plan.rows)
        .map(|i| {
            (0..result.plan.cols)
                .map(|j| result.plan.get(i, j))
                .collect()
        })
        .collect();
    let doc = serde_json::json!({
        "objective": result.objective,
        "plan": plan_rows,
    });
    let text = serde_json::to_string_pretty(&doc)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => println!("{text}"),
    }
    Ok(exit_codes::SUCCESS)
}

fn cmd_report(args: ReportArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&args.report)
        .with_context(|| format!("reading {}", args.report.display()))?;
    let report: RunReport = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.report.display()))?;
    // totals must agree with the stored trace
    let derived = transolve_cli::totals_from_trace(&report.trace);
    if derived.it_ipd != report.totals.it_ipd || derived.it_ssn != report.totals.it_ssn {
        bail!(
            "report totals disagree with the trace: stored ({}, {}), derived ({}, {})",
            report.totals.it_ipd,
            report.totals.it_ssn,
            derived.it_ipd,
            derived.it_ssn
        );
    }
    print!("{}", render(&report));
    Ok(exit_codes::SUCCESS)
}
