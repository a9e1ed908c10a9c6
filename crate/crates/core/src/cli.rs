//! Command-line runner: one subcommand per study, a TOML configuration
//! with flag overrides, and CSV/JSON artifacts written once at the end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::carleman::EstimateKind;
use crate::config::{RunConfig, Task};
use crate::control::{decay_study, DecayRow};
use crate::error::{Error, Result};
use crate::inverse::{lipschitz_study, noise_sweep, InverseProblem};
use crate::solver::{energy_report, Controls, ProblemSpec, RESIDUAL_TOLERANCE};
use crate::study::{
    carleman_sweep, energy_study, epsilon_cauchy, hardy_study, observability_study, spread, MemberData, Setup,
};
use crate::weights::{beta0, WeightKind, WeightParams, WeightSystem};

/// Tolerance of the discrete duality identity.
pub const DUALITY_TOLERANCE: f64 = 1e-10;
/// Tolerance of the noiseless inverse round trip.
pub const ROUND_TRIP_TOLERANCE: f64 = 1e-8;
/// Number of halvings of the largest `ε` in the convergence table.
pub const CAUCHY_HALVINGS: usize = 12;
/// Allowed distance to the `ε = 0` solution, in units of the refinement floor.
pub const CAUCHY_FLOOR_FACTOR: f64 = 10.0;

#[derive(Debug, Parser)]
#[command(name = "degen-spde", version, about = "Studies for 1-D stochastic degenerate parabolic equations")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; defaults are used for missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "DEGEN_SPDE_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Tree depth (number of time steps).
    #[arg(long = "n", global = true)]
    pub depth: Option<usize>,
    /// Number of cells.
    #[arg(long = "N", global = true)]
    pub cells: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forward trajectory, duality, energy and ε-convergence tables.
    Simulate,
    /// Ensemble sweep of one weighted inequality over the `s` grid.
    Check {
        #[arg(long, value_parser = parse_estimate)]
        estimate: Option<EstimateKind>,
    },
    /// Penalized controls along a decreasing penalization grid.
    NullControl {
        /// Decades `1e-1:1e-4` or a comma-separated list.
        #[arg(long, value_parser = parse_tau_grid)]
        tau_grid: Option<TauGrid>,
    },
    /// Noiseless round trip, Lipschitz study and noise sweep.
    InverseSource,
    /// Weighted Hardy inequality over random profiles.
    Hardy,
    /// Observability ratio over random terminal data.
    Observability,
}

impl Command {
    pub fn task(&self) -> Task {
        match self {
            Command::Simulate => Task::Simulate,
            Command::Check { .. } => Task::Check,
            Command::NullControl { .. } => Task::NullControl,
            Command::InverseSource => Task::InverseSource,
            Command::Hardy => Task::Hardy,
            Command::Observability => Task::Observability,
        }
    }
}

fn parse_estimate(s: &str) -> std::result::Result<EstimateKind, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| {
        "expected one of backward-singular, cacciopoli, forward-regular, convection".to_string()
    })
}

/// Penalization grid given on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct TauGrid(pub Vec<f64>);

/// `a:b` expands to the powers of ten from `a` down to `b`; anything else
/// is read as a comma-separated list.
pub fn parse_tau_grid(s: &str) -> std::result::Result<TauGrid, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    if let Some((a, b)) = s.split_once(':') {
        let (a, b) = (num(a)?, num(b)?);
        if !(a > 0.0 && b > 0.0 && b < a) {
            return Err("expected start:end with 0 < end < start".into());
        }
        let (ea, eb) = (a.log10().round() as i32, b.log10().round() as i32);
        if (10f64.powi(ea) - a).abs() > 1e-12 * a || (10f64.powi(eb) - b).abs() > 1e-12 * b {
            return Err("range endpoints must be powers of ten".into());
        }
        Ok(TauGrid((0..=(ea - eb)).map(|i| 10f64.powi(ea - i)).collect()))
    } else {
        s.split(',').map(num).collect::<std::result::Result<_, _>>().map(TauGrid)
    }
}

/// Outcome of a task: summary, named CSV contents and the verdict.
pub struct TaskOutput {
    pub summary: Value,
    pub files: Vec<(String, String)>,
    pub pass: bool,
}

/// Configuration after applying the file and the flag overrides.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    let g = &cli.global;
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = &g.out {
        cfg.out = v.to_string_lossy().into_owned();
    }
    if let Some(v) = g.alpha {
        cfg.problem.alpha = v;
    }
    if let Some(v) = g.eps {
        cfg.problem.eps = v;
    }
    if let Some(v) = g.depth {
        cfg.discretization.depth = v;
    }
    if let Some(v) = g.cells {
        cfg.discretization.cells = v;
    }
    match &cli.command {
        Command::Check { estimate: Some(k) } => cfg.check.estimate = *k,
        Command::NullControl { tau_grid: Some(t) } => cfg.null_control.tau = t.0.clone(),
        _ => {}
    }
    Ok(cfg)
}

/// Validates, runs the task and writes its artifacts. Returns the verdict.
pub fn run(cli: &Cli) -> Result<bool> {
    let cfg = resolve(cli)?;
    let task = cli.command.task();
    let v = cfg.violations(task);
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    if let Some(threads) = cli.global.threads {
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let output = execute(&cfg, task)?;
    write_artifacts(Path::new(&cfg.out), &cfg, task, &output)?;
    Ok(output.pass)
}

pub fn execute(cfg: &RunConfig, task: Task) -> Result<TaskOutput> {
    match task {
        Task::Simulate => simulate(cfg),
        Task::Check => check(cfg),
        Task::NullControl => null_control(cfg),
        Task::InverseSource => inverse_source(cfg),
        Task::Hardy => hardy(cfg),
        Task::Observability => observability(cfg),
    }
}

fn write_artifacts(dir: &Path, cfg: &RunConfig, task: Task, output: &TaskOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let summary = json!({
        "task": task.name(),
        "seed": cfg.seed,
        "pass": output.pass,
        "config": cfg,
        "results": output.summary,
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Output(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), text + "\n")?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    for (name, body) in &output.files {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}

fn csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Output(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Output(e.to_string()))
}

fn context(task: &'static str, e: Error) -> Error {
    Error::Task {
        task,
        source: Box::new(e),
    }
}

#[derive(Serialize)]
struct TrajectoryRow {
    step: usize,
    node: usize,
    j: usize,
    x: f64,
    value: f64,
}

#[derive(Serialize)]
struct DistanceRow {
    eps_from: f64,
    eps_to: f64,
    distance: f64,
}

fn simulate(cfg: &RunConfig) -> Result<TaskOutput> {
    let setup = cfg.setup();
    let inner = || -> Result<TaskOutput> {
        let scheme = setup.scheme()?;
        let tree = *scheme.tree();
        let mesh = *scheme.mesh();
        let last = tree.steps() - 1;
        let data = MemberData::draw(cfg.seed, 0);
        let spec = ProblemSpec {
            f: Some(data.first.sample(&tree, &mesh, last)),
            big_f: Some(data.second.sample(&tree, &mesh, last)),
            ..setup.spec()
        };
        let y0 = data.profile.sample(&mesh);
        let y = scheme.forward(&spec, &y0, &Controls::default())?;
        let forward_residual = scheme.forward_residual(&spec, &y, &Controls::default())?;
        let energy = energy_report(&scheme, &spec, &y);

        // Duality against a backward solve with independent data.
        let dual = MemberData::draw(cfg.seed, 1);
        let controls = Controls {
            g: Some(dual.second.sample(&tree, &mesh, last)),
            big_g: Some(dual.first.sample(&tree, &mesh, last)),
        };
        let yc = scheme.forward(&spec, &y0, &controls)?;
        let rho = data.second.sample(&tree, &mesh, last);
        let back = scheme.backward(&setup.spec(), &dual.first.terminal(&tree, &mesh), Some(&rho))?;
        let duality = scheme.duality_residual(&spec, &controls, &yc, &back, Some(&rho))?;

        let free = scheme.forward(&ProblemSpec::default(), &y0, &Controls::default())?;
        let w = mesh.weights();
        let n0 = mesh.norm_sq(&y0);
        let dissipative = (0..=tree.steps()).all(|k| free.mean_square(k, &w) <= n0);

        let s = &cfg.simulate;
        let energy_rows = energy_study(&setup, &s.eps_list, &[setup.cells, 2 * setup.cells], s.draws, cfg.seed)?;
        let energy_spread = spread(&energy_rows.iter().map(|r| r.constant).collect::<Vec<_>>());
        let top = s.eps_list[0];
        let halving: Vec<f64> = (0..=CAUCHY_HALVINGS)
            .map(|i| top / f64::from(1u32 << i))
            .chain([0.0])
            .collect();
        let cauchy = epsilon_cauchy(&setup, &halving, cfg.seed)?;

        let pass = forward_residual <= RESIDUAL_TOLERANCE
            && duality <= DUALITY_TOLERANCE
            && dissipative
            && energy_spread < 2.0
            && cauchy.strictly_decreasing()
            && cauchy.floor_multiple() <= CAUCHY_FLOOR_FACTOR;

        let xs = mesh.centers();
        let mut traj = Vec::new();
        for k in 0..=tree.steps() {
            for node in 0..tree.nodes_at(k) {
                for (j, v) in y.node(k, node).iter().enumerate() {
                    traj.push(TrajectoryRow {
                        step: k,
                        node,
                        j,
                        x: xs[j],
                        value: *v,
                    });
                }
            }
        }
        let distances: Vec<DistanceRow> = cauchy
            .consecutive
            .iter()
            .map(|r| DistanceRow {
                eps_from: r.eps_from,
                eps_to: r.eps_to,
                distance: r.distance,
            })
            .collect();
        Ok(TaskOutput {
            summary: json!({
                "forward_residual": forward_residual,
                "duality_residual": duality,
                "energy": energy,
                "energy_constant": energy.constant(),
                "energy_spread": energy_spread,
                "noise_free_dissipative": dissipative,
                "cauchy_strictly_decreasing": cauchy.strictly_decreasing(),
                "cauchy_floor": cauchy.floor,
                "cauchy_floor_multiple": cauchy.floor_multiple(),
            }),
            files: vec![
                ("trajectory.csv".into(), csv(&traj)?),
                ("energy.csv".into(), csv(&energy_rows)?),
                ("epsilon.csv".into(), csv(&distances)?),
            ],
            pass,
        })
    };
    inner().map_err(|e| context("simulate", e))
}

#[derive(Serialize)]
struct SweepRow {
    lambda: f64,
    s: f64,
    constant: f64,
    ln_lhs: f64,
    ln_rhs: f64,
}

#[derive(Serialize)]
struct WeightRow {
    x: f64,
    t: f64,
    phi: f64,
    log_weight: f64,
}

fn check(cfg: &RunConfig) -> Result<TaskOutput> {
    let setup = cfg.setup();
    let kind = cfg.check.estimate;
    let inner = || -> Result<TaskOutput> {
        let mut rows = Vec::new();
        let mut sweeps = Vec::new();
        let mut pass = true;
        for &lambda in &cfg.weights.lambda {
            let sweep = carleman_sweep(
                &setup,
                kind,
                &cfg.weight_choice(lambda),
                &cfg.weights.s,
                cfg.check.draws,
                cfg.seed,
            )?;
            pass &= sweep.finite() && sweep.s_star.is_some();
            for r in &sweep.reports {
                rows.push(SweepRow {
                    lambda,
                    s: r.s,
                    constant: r.constant,
                    ln_lhs: r.ln_lhs,
                    ln_rhs: r.ln_rhs,
                });
            }
            sweeps.push(json!({
                "lambda": lambda,
                "s_star": sweep.s_star,
                "bound": sweep.bound,
                "finite": sweep.finite(),
                "terminal_exponent": sweep.terminal_exponent,
            }));
        }
        let weights = weight_table(cfg, &setup, kind)?;
        let beta = cfg.weight_choice(1.0).beta_for(kind, setup.alpha);
        let b0 = beta0(setup.alpha).ok();
        Ok(TaskOutput {
            summary: json!({
                "estimate": kind.label(),
                "beta": beta,
                "beta0": b0,
                "draws": cfg.check.draws,
                "sweeps": sweeps,
            }),
            files: vec![("sweep.csv".into(), csv(&rows)?), ("weights.csv".into(), csv(&weights)?)],
            pass,
        })
    };
    inner().map_err(|e| context("check", e))
}

/// `φ(x, t)` and `2sφ` at the smallest `s` of the grid on the interior
/// time steps.
fn weight_table(cfg: &RunConfig, setup: &Setup, kind: EstimateKind) -> Result<Vec<WeightRow>> {
    let choice = cfg.weight_choice(cfg.weights.lambda[0]);
    let wkind = if kind == EstimateKind::ForwardRegular {
        WeightKind::Regular
    } else {
        WeightKind::Singular
    };
    let ws = WeightSystem::new(
        WeightParams {
            beta: choice.beta_for(kind, setup.alpha),
            lambda: choice.lambda,
            s: cfg.weights.s[0],
            eps: setup.eps,
            horizon: setup.horizon,
            m_margin: choice.m_margin,
        },
        setup.region,
        wkind,
    )?;
    let tree = setup.tree()?;
    let xs = setup.mesh()?.centers();
    let mut rows = Vec::new();
    for k in 1..tree.steps() {
        let t = tree.time(k);
        for &x in &xs {
            rows.push(WeightRow {
                x,
                t,
                phi: ws.phi(x, t),
                log_weight: ws.log_weight(x, t),
            });
        }
    }
    Ok(rows)
}

fn null_control(cfg: &RunConfig) -> Result<TaskOutput> {
    let setup = cfg.setup();
    let n = &cfg.null_control;
    let inner = || -> Result<TaskOutput> {
        let scheme = setup.scheme()?;
        let y0: Vec<f64> = scheme
            .mesh()
            .centers()
            .iter()
            .map(|x| (std::f64::consts::PI * x).sin())
            .collect();
        let rows: Vec<DecayRow> = decay_study(&scheme, &setup.spec(), &setup.region, &y0, &n.hum(n.tau[0]), &n.tau)?;
        let residual_ok = rows.iter().all(|r| r.optimality_residual <= n.cg_tolerance);
        let decreasing = rows.windows(2).all(|w| w[1].terminal_energy < w[0].terminal_energy);
        let last = rows.last().expect("non-empty grid");
        let decrease = if last.terminal_energy > 0.0 {
            last.uncontrolled_terminal_energy / last.terminal_energy
        } else {
            f64::INFINITY
        };
        let cost_spread = spread(&rows.iter().map(|r| r.cost_ratio).collect::<Vec<_>>());
        let pass = residual_ok && decreasing && decrease >= n.min_decrease && cost_spread <= n.max_cost_spread;
        Ok(TaskOutput {
            summary: json!({
                "initial_state": "sin(pi x)",
                "optimality_residual_ok": residual_ok,
                "strictly_decreasing": decreasing,
                "total_decrease": decrease,
                "cost_spread": cost_spread,
                "rows": rows,
            }),
            files: vec![("decay.csv".into(), csv(&rows)?)],
            pass,
        })
    };
    inner().map_err(|e| context("null-control", e))
}

#[derive(Serialize)]
struct ReconstructionRow {
    step: usize,
    t: f64,
    h_true: f64,
    h_reconstructed: f64,
}

fn inverse_source(cfg: &RunConfig) -> Result<TaskOutput> {
    let setup = cfg.setup();
    let i = &cfg.inverse_source;
    let inner = || -> Result<TaskOutput> {
        let problem = InverseProblem::new(setup.scheme()?, i.profile())?;
        let fine = InverseProblem::new(setup.with_cells(2 * setup.cells).scheme()?, i.profile())?;
        let steps = problem.steps();
        let tree = *problem.scheme().tree();
        let zero = vec![0.0; setup.cells];
        let h_true: Vec<f64> = (0..steps)
            .map(|k| 1.0 + 0.5 * (std::f64::consts::PI * tree.time(k) / tree.horizon()).cos())
            .collect();

        let rec = problem.reconstruct(&problem.forward_map(&h_true, &zero)?, &zero, 0.0)?;
        let diff: Vec<f64> = rec.h.iter().zip(&h_true).map(|(a, b)| a - b).collect();
        let round_trip = problem.history_norm(&diff) / problem.history_norm(&h_true);

        let pulse_step = steps / 2;
        let mut pulse = vec![0.0; steps];
        pulse[pulse_step] = 1.0;
        let obs = problem.forward_map(&pulse, &zero)?;
        let causal = (0..=pulse_step).all(|k| obs.interior.level(k).iter().all(|v| *v == 0.0));

        let lip = lipschitz_study(&problem, i.pairs, cfg.seed, &zero)?;
        let noise = noise_sweep(&problem, &fine, &h_true, &vec![0.0; 2 * setup.cells], &zero, &i.noise, cfg.seed)?;
        let slopes_ok = noise
            .iter()
            .all(|r| r.slope <= i.slope_factor * lip.max && r.slope * i.slope_factor >= lip.max);
        let pass = round_trip <= ROUND_TRIP_TOLERANCE && causal && lip.max.is_finite() && lip.max > 0.0 && slopes_ok;
        let table: Vec<ReconstructionRow> = (0..steps)
            .map(|k| ReconstructionRow {
                step: k,
                t: tree.time(k),
                h_true: h_true[k],
                h_reconstructed: rec.h[k],
            })
            .collect();
        Ok(TaskOutput {
            summary: json!({
                "round_trip_relative_error": round_trip,
                "sigma_min": rec.sigma_min,
                "sigma_max": rec.sigma_max,
                "causal": causal,
                "lipschitz": lip,
                "noise": noise,
            }),
            files: vec![
                ("reconstruction.csv".into(), csv(&table)?),
                ("noise.csv".into(), csv(&noise)?),
            ],
            pass,
        })
    };
    inner().map_err(|e| context("inverse-source", e))
}

fn hardy(cfg: &RunConfig) -> Result<TaskOutput> {
    let h = &cfg.hardy;
    let rows = hardy_study(cfg.discretization.cells, &h.gamma, &h.eps, h.profiles, cfg.seed)
        .map_err(|e| context("hardy", e))?;
    let pass = rows.iter().all(|r| r.pass);
    Ok(TaskOutput {
        summary: json!({ "profiles": h.profiles, "rows": rows }),
        files: vec![("hardy.csv".into(), csv(&rows)?)],
        pass,
    })
}

#[derive(Serialize)]
struct RatioRow {
    draw: usize,
    ratio: f64,
}

fn observability(cfg: &RunConfig) -> Result<TaskOutput> {
    let (report, ratios) =
        observability_study(&cfg.setup(), cfg.observability.draws, cfg.seed).map_err(|e| context("observability", e))?;
    let rows: Vec<RatioRow> = ratios
        .iter()
        .enumerate()
        .map(|(draw, &ratio)| RatioRow { draw, ratio })
        .collect();
    let pass = report.max_ratio.is_finite() && report.max_ratio > 0.0;
    Ok(TaskOutput {
        summary: json!({ "report": report }),
        files: vec![("observability.csv".into(), csv(&rows)?)],
        pass,
    })
}
