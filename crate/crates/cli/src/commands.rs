//! The `verify`, `converge` and `run` subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};

use sbpdiff::cg::CgConfig;
use sbpdiff::grid::{make_grid, Grid1D, GridFunction};
use sbpdiff::linalg::DENSE_LIMIT;
use sbpdiff::mms::{run_convergence, ConvergenceReport, ConvergenceStudy};
use sbpdiff::parallel::{
    assemble_parallel_penalty, build_interpolation, make_random_map, read_map_file,
    verify_interpolation, verify_parallel_penalty, write_map_csv, MapDirection,
    ParallelPenaltyOperator, PointMap,
};
use sbpdiff::report::PropertyReport;
use sbpdiff::sbp::{verify_first_derivative, verify_operator_set, SbpOperatorSet, Scaling};
use sbpdiff::solver::{SatBoundary, SolverState, SplittingSolver, StageOneSystem, TimeStepRule};

use crate::config::{InitialCondition, KappaSpec, MapSpec, RunConfig};
use crate::error::{CliError, Result};

/// Seed for the random vectors drawn by the sampled definiteness checks.
const VERIFY_SAMPLE_SEED: u64 = 2024;

/// Where a command writes and what it stamps on every artifact.
#[derive(Debug, Clone)]
pub struct Output {
    pub dir: PathBuf,
    pub provenance: Vec<String>,
}

impl Output {
    pub fn new(cfg: &RunConfig, dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|source| CliError::Write {
            path: dir.clone(),
            source,
        })?;
        let seeds = match cfg.maps.resolved_seeds() {
            (None, None) => "none".to_string(),
            (f, b) => format!("forward={},backward={}", seed_str(f), seed_str(b)),
        };
        let mut provenance = vec![
            format!("config_hash={}", cfg.hash()),
            format!("seed={seeds}"),
            format!("generator=sbpdiff {}", env!("CARGO_PKG_VERSION")),
        ];
        if let Some(name) = &cfg.name {
            provenance.push(format!("preset={name}"));
        }
        Ok(Self { dir, provenance })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    fn header(&self, extra: &[String]) -> String {
        let mut s = String::new();
        for line in self.provenance.iter().chain(extra) {
            let _ = writeln!(s, "# {line}");
        }
        s
    }

    fn write(&self, file: &str, body: &str) -> Result<PathBuf> {
        let path = self.path(file);
        fs::write(&path, body).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    fn write_csv(&self, file: &str, extra: &[String], body: &str) -> Result<PathBuf> {
        self.write(file, &format!("{}{body}", self.header(extra)))
    }

    fn write_map(&self, file: &str, map: &PointMap, grid: &Grid1D) -> Result<()> {
        let targets = map.evaluate(grid)?;
        let mut comments = self.provenance.clone();
        comments.push(format!(
            "map={} direction={} clamped={}",
            map.name(),
            map.direction,
            targets.clamped
        ));
        let path = self.path(file);
        let f = fs::File::create(&path).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        write_map_csv(std::io::BufWriter::new(f), &comments, &targets.targets)?;
        Ok(())
    }
}

fn seed_str(s: Option<u64>) -> String {
    s.map_or_else(|| "none".into(), |v| v.to_string())
}

/// Grid, operators and maps assembled from a configuration.
pub struct Setup {
    pub grid: Arc<Grid1D>,
    pub ops: SbpOperatorSet,
    pub forward: PointMap,
    pub backward: PointMap,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = make_grid(cfg.grid.length, cfg.grid.n)?;
        let kappa = match &cfg.physics.kappa_perp {
            KappaSpec::Constant(k) => GridFunction::constant(&grid, *k)?,
            KappaSpec::PerNode(v) => GridFunction::new(&grid, v.clone())?,
        };
        let ops = SbpOperatorSet::new(&grid, cfg.order(), &kappa, cfg.construction())?;
        let (sf, sb) = cfg.maps.resolved_seeds();
        let forward = build_map(&cfg.maps.forward, MapDirection::Forward, sf, &grid)?;
        let backward = build_map(&cfg.maps.backward, MapDirection::Backward, sb, &grid)?;
        Ok(Self {
            grid,
            ops,
            forward,
            backward,
        })
    }

    /// `None` when the parallel term vanishes (`α = 0` or `κ‖ = 0`).
    pub fn penalty(&self, kappa_par: f64, alpha: f64) -> Result<Option<ParallelPenaltyOperator>> {
        if alpha == 0.0 || kappa_par == 0.0 {
            return Ok(None);
        }
        let pf = build_interpolation(&self.grid, &self.forward)?;
        let pb = build_interpolation(&self.grid, &self.backward)?;
        Ok(Some(assemble_parallel_penalty(
            pf,
            pb,
            kappa_par,
            alpha,
            self.ops.h(),
            self.grid.dx(),
        )?))
    }
}

pub fn build_map(
    spec: &MapSpec,
    direction: MapDirection,
    seed: Option<u64>,
    grid: &Arc<Grid1D>,
) -> Result<PointMap> {
    Ok(match spec {
        MapSpec::Identity => PointMap::identity(direction),
        MapSpec::F1 => PointMap::f1(direction),
        MapSpec::F2 => PointMap::f2(direction),
        MapSpec::Reflect => {
            let length = grid.length();
            PointMap::analytic("reflect", direction, move |x| length - x)
        }
        MapSpec::Random(_) => make_random_map(grid, seed.unwrap_or(0)).with_direction(direction),
        MapSpec::Tabulated(path) => PointMap::tabulated(direction, read_map_file(path)?),
    })
}

pub fn initial_condition(cfg: &RunConfig, grid: &Arc<Grid1D>) -> Result<GridFunction> {
    let u = match &cfg.initial {
        InitialCondition::Gaussian { center, width } => {
            let (c, w) = (*center, *width);
            GridFunction::from_fn(grid, |x| (-(x - c) * (x - c) / w).exp())?
        }
        InitialCondition::F1 {} => GridFunction::from_fn(grid, sbpdiff::parallel::f1)?,
        InitialCondition::F2 {} => GridFunction::from_fn(grid, sbpdiff::parallel::f2)?,
        InitialCondition::Uniform { value } => GridFunction::constant(grid, *value)?,
        InitialCondition::Tabulated { path } => GridFunction::new(grid, read_map_file(path)?)?,
    };
    Ok(u)
}

fn boundary(cfg: &RunConfig) -> SatBoundary {
    let b = cfg.boundary;
    if b.left == 0.0 && b.right == 0.0 {
        SatBoundary::no_flux()
    } else {
        SatBoundary::constant(b.left, b.right)
    }
}

fn cg_config(cfg: &RunConfig) -> CgConfig {
    CgConfig {
        tol: cfg.cg.tol,
        max_iter: cfg.cg.max_iter,
        jacobi: cfg.cg.jacobi,
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect::<String>()
        .split('_')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

#[derive(Debug)]
pub struct VerifyOutcome {
    pub reports: Vec<(String, PropertyReport)>,
    pub files: Vec<PathBuf>,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|(_, r)| r.passed())
    }
}

/// Builds every operator and runs each property suite. Returns an error
/// naming the failing checks unless all of them pass.
pub fn cmd_verify(cfg: &RunConfig, out: &Output) -> Result<VerifyOutcome> {
    let setup = Setup::new(cfg)?;
    let mut reports = vec![
        (
            "sbp_first".to_string(),
            verify_first_derivative(&setup.ops.first, Scaling::Magnitude),
        ),
        (
            "sbp_operator_set".to_string(),
            verify_operator_set(&setup.ops.first, &setup.ops.second)?,
        ),
    ];
    if setup.grid.n() <= DENSE_LIMIT {
        let dt = cfg.step_rule().dt(&setup.grid)?;
        let system = StageOneSystem::new(&setup.ops, dt, boundary(cfg), None)?;
        reports.push(("stage_one".to_string(), system.certify()));
    } else {
        info!("n > {DENSE_LIMIT}: skipping the dense stage-one eigen check");
    }
    match setup.penalty(cfg.physics.kappa_par, cfg.physics.alpha)? {
        Some(p) => {
            info!("parallel map certificate λ_max = {:.6}", p.certificate());
            reports.push((
                "parallel_penalty".to_string(),
                verify_parallel_penalty(&p, cfg.output.samples, VERIFY_SAMPLE_SEED),
            ));
        }
        None => {
            for (name, map) in [
                ("map_forward", &setup.forward),
                ("map_backward", &setup.backward),
            ] {
                let p = build_interpolation(&setup.grid, map)?;
                reports.push((name.to_string(), verify_interpolation(&p)));
            }
        }
    }

    let mut files = Vec::new();
    let mut failures = Vec::new();
    for (name, report) in &reports {
        println!("{report}");
        let file = format!("verify_{}.csv", slug(name));
        files.push(out.write_csv(
            &file,
            &[format!("report={}", report.title)],
            &report.to_csv(),
        )?);
        for f in report.failures() {
            failures.push(format!(
                "{}: {} (residual {:e} > tolerance {:e})",
                report.title, f.name, f.residual, f.tolerance
            ));
        }
    }
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("FAIL {f}");
        }
        return Err(CliError::Verification(failures.join("; ")));
    }
    println!("all {} property reports passed", reports.len());
    Ok(VerifyOutcome { reports, files })
}

/// Runs the manufactured-solution study configured in `[converge]`.
pub fn cmd_converge(cfg: &RunConfig, out: &Output) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let conv = cfg
        .converge
        .as_ref()
        .ok_or_else(|| CliError::Config("converge needs a [converge] section with grids".into()))?;
    if conv.grids.len() == 1 {
        warn!("only one grid size given: no convergence rate can be computed");
    }
    let study = ConvergenceStudy {
        operators: vec![(cfg.order(), cfg.construction())],
        grids: conv.grids.clone(),
        kappa: conv.kappa,
        final_time: conv.final_time,
        dt_rule: TimeStepRule::DxSquaredOver(conv.divisor),
    };
    let report = run_convergence(&study)?.remove(0);
    let meta = vec![format!(
        "order={} construction={} kappa={} final_time={} dt=dx^2/{}",
        report.order, report.construction, conv.kappa, conv.final_time, conv.divisor
    )];
    let mut comments = out.provenance.clone();
    comments.extend(meta);
    out.write("convergence.csv", &report.to_csv(&comments))?;

    println!("{:>6} {:>12} {:>14} {:>8}", "n", "dx", "error", "rate");
    for r in &report.rows {
        let rate = r.rate.map(|q| format!("{q:.3}")).unwrap_or_default();
        println!("{:>6} {:>12.4e} {:>14.6e} {:>8}", r.n, r.dx, r.error, rate);
    }
    match report.mean_rate() {
        Some(q) => println!("mean observed rate {q:.3}"),
        None => println!("mean observed rate: n/a"),
    }
    Ok(report)
}

/// Summary of one integration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub initial_spread: f64,
    pub final_spread: f64,
    pub final_mean: f64,
    pub energy_violations: usize,
    pub certificate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub main: RunSummary,
    pub companion: Option<RunSummary>,
}

struct Trajectory {
    snapshots: Vec<(f64, Vec<f64>)>,
    state: SolverState,
}

fn integrate(
    solver: &SplittingSolver,
    u0: GridFunction,
    times: &[f64],
    rule: TimeStepRule,
) -> Result<Trajectory> {
    let mut state = solver.initial_state(u0)?;
    let mut snapshots = Vec::new();
    for &ts in times {
        if ts > state.t {
            state = solver.advance(state, ts, rule)?;
        }
        snapshots.push((state.t, state.u.values().to_vec()));
    }
    Ok(Trajectory { snapshots, state })
}

fn spread(u: &[f64]) -> f64 {
    let (lo, hi) = u
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    hi - lo
}

fn mean_level(h: &[f64], u: &[f64], length: f64) -> f64 {
    h.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() / length
}

fn write_trajectory(
    out: &Output,
    prefix: &str,
    grid: &Grid1D,
    traj: &Trajectory,
    meta: &[String],
) -> Result<()> {
    let mut snap = String::from("t,x,u\n");
    for (t, u) in &traj.snapshots {
        for (x, v) in grid.nodes().iter().zip(u) {
            let _ = writeln!(snap, "{t:e},{x:e},{v:e}");
        }
    }
    out.write_csv(&format!("{prefix}snapshots.csv"), meta, &snap)?;
    let mut energy = String::from("step,t,energy\n");
    for (k, (t, e)) in traj.state.energy_history.iter().enumerate() {
        let _ = writeln!(energy, "{k},{t:e},{e:e}");
    }
    out.write_csv(&format!("{prefix}energy.csv"), meta, &energy)?;
    Ok(())
}

/// Integrates to `T`, writing snapshots, the energy history, the map targets
/// and a summary; with `companion = true` the `α = 0` run is written as well.
pub fn cmd_run(cfg: &RunConfig, out: &Output) -> Result<RunOutcome> {
    let setup = Setup::new(cfg)?;
    let grid = setup.grid.clone();
    let u0 = initial_condition(cfg, &grid)?;
    let times = cfg.snapshot_times();
    let rule = cfg.step_rule();
    let base = SplittingSolver::new(setup.ops.clone(), boundary(cfg)).with_cg(cg_config(cfg));

    let penalty = setup.penalty(cfg.physics.kappa_par, cfg.physics.alpha)?;
    let certificate = penalty.as_ref().map(|p| p.certificate());
    let solver = match penalty {
        Some(p) => base.clone().with_penalty(p),
        None => base.clone(),
    };
    out.write_map("map_forward.csv", &setup.forward, &grid)?;
    out.write_map("map_backward.csv", &setup.backward, &grid)?;
    out.write("config.toml", &cfg.to_toml_string())?;

    let h = setup.ops.h().to_vec();
    let summarise = |traj: &Trajectory, certificate| RunSummary {
        steps: traj.state.step_index,
        initial_spread: spread(u0.values()),
        final_spread: spread(traj.state.u.values()),
        final_mean: mean_level(&h, traj.state.u.values(), grid.length()),
        energy_violations: traj.state.energy_violations,
        certificate,
    };

    let traj = integrate(&solver, u0.clone(), &times, rule)?;
    let meta = [format!(
        "run=main alpha={} kappa_par={}",
        cfg.physics.alpha, cfg.physics.kappa_par
    )];
    write_trajectory(out, "", &grid, &traj, &meta)?;
    let main = summarise(&traj, certificate);

    let companion = if cfg.companion {
        let traj = integrate(&base, u0.clone(), &times, rule)?;
        let meta = [format!(
            "run=companion alpha=0 kappa_par={}",
            cfg.physics.kappa_par
        )];
        write_trajectory(out, "companion_", &grid, &traj, &meta)?;
        Some(summarise(&traj, None))
    } else {
        None
    };

    let mut summary = String::from("key,value\n");
    let mut push = |k: &str, v: String| {
        let _ = writeln!(summary, "{k},{v}");
    };
    push("steps", main.steps.to_string());
    push("initial_spread", format!("{:e}", main.initial_spread));
    push("final_spread", format!("{:e}", main.final_spread));
    push("final_mean", format!("{:e}", main.final_mean));
    push("energy_violations", main.energy_violations.to_string());
    push(
        "certificate",
        main.certificate
            .map(|c| format!("{c:e}"))
            .unwrap_or_default(),
    );
    if let Some(c) = &companion {
        push("companion_final_spread", format!("{:e}", c.final_spread));
        push("companion_final_mean", format!("{:e}", c.final_mean));
    }
    out.write_csv("summary.csv", &[], &summary)?;

    println!(
        "{} steps to t = {}: spread {:.4e} -> {:.4e}, mean level {:.6e}, energy increases {}",
        main.steps,
        cfg.time.final_time,
        main.initial_spread,
        main.final_spread,
        main.final_mean,
        main.energy_violations
    );
    if let Some(c) = &companion {
        println!(
            "companion (α = 0): spread {:.4e}, mean level {:.6e}",
            c.final_spread, c.final_mean
        );
    }
    Ok(RunOutcome { main, companion })
}

/// Loads a configuration, applies the seed override and resolves relative
/// file paths against the configuration's directory.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.override_seed(s);
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.resolve_paths(&base);
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slug_is_file_safe() {
        assert_eq!(
            slug("SBP operator set order2 wide n=33"),
            "sbp_operator_set_order2_wide_n_33"
        );
    }

    #[test]
    fn spread_and_mean() {
        assert_eq!(spread(&[1.0, -2.0, 3.0]), 5.0);
        assert_eq!(mean_level(&[0.5, 0.5], &[2.0, 4.0], 1.0), 3.0);
    }

    #[test]
    fn reflect_map_is_an_involution_on_nodes() {
        let g = make_grid(1.0, 11).unwrap();
        let m = build_map(&MapSpec::Reflect, MapDirection::Forward, None, &g).unwrap();
        let t = m.evaluate(&g).unwrap().targets;
        for (i, y) in t.iter().enumerate() {
            assert!((y - g.nodes()[10 - i]).abs() < 1e-15);
        }
    }
}
