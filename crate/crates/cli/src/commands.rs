use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chimhd_core::diagnostics::{error_norms, infsup_estimate};
use chimhd_core::experiments::{
    require_verified_forcing, run_sweep, spatial_case, sweep_cases, temporal_case, SweepMode,
};
use chimhd_core::forms::{
    convection_matrix, div_coupling_rt0, jb_stabilization, mass_matrix, stiffness_matrix, Coefficient,
};
use chimhd_core::{
    unit_square, CaseError, Constraint, Discretization, ErrorReport, FeSpace, FieldCoefficients, Norm, SpaceKind,
    SparseMatrix, StepLog,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::output;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    let probe = dir.join(".chimhd-write-test");
    std::fs::write(&probe, b"").map_err(io_at(dir))?;
    std::fs::remove_file(&probe).map_err(io_at(dir))
}

#[derive(Debug)]
pub struct RunSummary {
    pub steps: usize,
    pub snapshots: usize,
    pub last: Option<StepLog>,
    pub errors: Option<ErrorReport>,
}

/// Runs one case, streaming `diagnostics.csv` and VTK snapshots. On solver
/// failure the rows of completed steps stay on disk.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let case = cfg.problem_case()?;
    prepare_out(&cfg.out)?;
    std::fs::write(cfg.out.join("config.txt"), cfg.to_text()).map_err(io_at(&cfg.out))?;

    let last = case.params.steps;
    let every = cfg.snapshot_every.unwrap_or(last);
    let csv_path = cfg.out.join("diagnostics.csv");
    let mut csv = output::create(&csv_path).map_err(io_at(&csv_path))?;
    writeln!(csv, "{}", output::DIAGNOSTICS_HEADER).map_err(io_at(&csv_path))?;

    let disc = case.discretization()?;
    let initial = case.initial_state(&disc);
    let snap = |state: &chimhd_core::State| -> Result<(), CliError> {
        let path = output::snapshot_path(&cfg.out, state.n);
        let mut w = output::create(&path).map_err(io_at(&path))?;
        output::write_vtk(&mut w, state).and_then(|_| w.flush()).map_err(io_at(&path))
    };
    snap(&initial)?;
    let mut snapshots = 1;
    let mut write_error: Option<CliError> = None;

    let mut scheme = chimhd_core::Scheme::new(disc, case.params.clone()).map_err(CaseError::from)?;
    let data = case.problem_data();
    let result = scheme.run(initial, data.as_ref(), |state, log| {
        if write_error.is_some() {
            return;
        }
        let row = writeln!(csv, "{}", output::diagnostics_row(log)).map_err(io_at(&csv_path));
        let vtk = if output::is_snapshot_step(log.n, every, last) {
            snapshots += 1;
            snap(state)
        } else {
            Ok(())
        };
        write_error = row.and(vtk).err();
    });
    csv.flush().map_err(io_at(&csv_path))?;
    if let Some(e) = write_error {
        return Err(e);
    }
    let traj = result.map_err(CaseError::from)?;
    let errors = case.exact.as_ref().map(|exact| {
        let mut r = error_norms(&traj.state, exact.as_ref(), case.params.tau);
        r.h = case.h();
        r
    });
    Ok(RunSummary { steps: traj.logs.len(), snapshots, last: traj.logs.last().copied(), errors })
}

/// Runs a convergence sweep and writes `rates.csv`; returns the markdown table.
pub fn cmd_converge(mode: SweepMode, cfg: &RunConfig) -> Result<(Vec<ErrorReport>, String), CliError> {
    if cfg.tau.is_some() || cfg.t_final.is_some() || cfg.steps.is_some() || cfg.h.is_some() || cfg.nx.is_some() {
        return Err(ConfigError::Invalid("a sweep fixes tau, T and the mesh of every run".into()).into());
    }
    prepare_out(&cfg.out)?;
    let mut cases = sweep_cases(mode);
    for case in &mut cases {
        if let Some(c) = cfg.coupling {
            case.params.coupling = c;
        }
        case.corrupt = cfg.corrupt;
    }
    if let Some(eq) = cfg.corrupt.filter(|e| !e.has_source()) {
        return Err(ConfigError::Invalid(format!("the {eq} equation has no source term to corrupt")).into());
    }
    let reports = run_sweep(&cases, cfg.jobs.max(1), cfg.seed)?;
    let path = cfg.out.join("rates.csv");
    let mut w = output::create(&path).map_err(io_at(&path))?;
    output::write_rates_csv(&mut w, &reports).and_then(|_| w.flush()).map_err(io_at(&path))?;
    let table = output::rates_markdown(&reports);
    Ok((reports, table))
}

#[derive(Debug, Default)]
pub struct CheckReport {
    pub lines: Vec<(String, bool, String)>,
}

impl CheckReport {
    fn push(&mut self, name: &str, ok: bool, detail: String) {
        self.lines.push((name.into(), ok, detail));
    }

    pub fn passed(&self) -> bool {
        self.lines.iter().all(|(_, ok, _)| *ok)
    }

    pub fn render(&self) -> String {
        self.lines
            .iter()
            .map(|(name, ok, detail)| format!("{:<5} {name}: {detail}\n", if *ok { "ok" } else { "FAIL" }))
            .collect()
    }
}

fn frobenius(m: &SparseMatrix) -> f64 {
    m.values().iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Forcing oracle, algebraic invariants and inf-sup estimates.
pub fn cmd_check(cfg: &RunConfig) -> CheckReport {
    let mut report = CheckReport::default();
    if let Some(eq) = cfg.corrupt.filter(|e| !e.has_source()) {
        report.push("forcing", false, format!("the {eq} equation has no source term to corrupt"));
    }

    for mut case in [temporal_case(), spatial_case(3)] {
        case.corrupt = cfg.corrupt;
        match require_verified_forcing(&case, cfg.seed) {
            Ok(r) => {
                let (eq, res) = r.worst();
                report.push(&format!("forcing {}", case.name), true, format!("worst {eq} residual {res:.2e}"));
            }
            Err(e) => report.push(&format!("forcing {}", case.name), false, e.to_string()),
        }
    }

    let mesh = Arc::new(unit_square(4).expect("valid mesh"));
    let space = |kind| Arc::new(FeSpace::new(Arc::clone(&mesh), kind, Constraint::None));
    let vel = space(SpaceKind::MiniVector);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut skew: f64 = 0.0;
    for _ in 0..50 {
        let mut draw = || (0..vel.ndofs()).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (w, v) = (draw(), draw());
        let w = FieldCoefficients::new(Arc::clone(&vel), w).expect("sized");
        let n = convection_matrix(&vel, &w).expect("Mini space");
        let vv: f64 = v.iter().map(|x| x * x).sum();
        skew = skew.max(n.bilinear(&v, &v).abs() / (frobenius(&n) * vv));
    }
    report.push("convection skew", skew <= 1e-12, format!("max |v.Nv| / (|N| |v|^2) = {skew:.1e}"));

    let coeff = |x: [f64; 2]| 1.0 + x[0] * x[0] + 0.5 * x[1];
    let mut worst_sym: f64 = 0.0;
    for kind in [SpaceKind::P1, SpaceKind::P0, SpaceKind::Rt0, SpaceKind::MiniVector] {
        let m = mass_matrix(&space(kind), Coefficient::Function(&coeff)).expect("mass");
        worst_sym = worst_sym.max(m.symmetry_defect() / m.max_abs());
    }
    let k = stiffness_matrix(&space(SpaceKind::P1), Coefficient::Function(&coeff)).expect("stiffness");
    worst_sym = worst_sym.max(k.symmetry_defect() / k.max_abs());
    report.push("symmetry", worst_sym <= 1e-14, format!("max relative defect {worst_sym:.1e}"));

    let rt0 = space(SpaceKind::Rt0);
    let (b, tau) = (1.5, 0.1);
    let jb = jb_stabilization(&rt0, Coefficient::Constant(b), tau).expect("RT0");
    let m = mass_matrix(&rt0, Coefficient::Constant(1.0)).expect("RT0");
    let diff = SparseMatrix::combine(&[(1.0, &jb), (-tau * b * b, &m)]).expect("same shape").max_abs();
    report.push("J x B stabilization", diff <= 1e-14 * jb.max_abs(), format!("max deviation {diff:.1e}"));

    let d = div_coupling_rt0(&rt0, &space(SpaceKind::P0)).expect("RT0/P0");
    let unit = d.values().iter().all(|&v| v == 0.0 || v.abs() == 1.0);
    report.push("RT0/P0 divergence", unit, format!("{} entries in {{-1, 0, 1}}: {unit}", d.nnz()));

    let disc = Discretization::new(Arc::new(unit_square(8).expect("valid mesh")));
    for (name, primal, multiplier) in
        [("inf-sup Mini/P1", &disc.velocity, &disc.pressure), ("inf-sup RT0/P0", &disc.current, &disc.potential)]
    {
        match infsup_estimate(primal, multiplier) {
            Ok(beta) => report.push(name, beta.is_finite() && beta > 0.0, format!("beta_h = {beta:.4} at h = 1/8")),
            Err(e) => report.push(name, false, e.to_string()),
        }
    }
    report
}

/// One line per norm of a final-time error report.
pub fn describe_errors(r: &ErrorReport) -> String {
    Norm::ALL.iter().map(|&n| format!("{n} = {:.4e}", r.get(n))).collect::<Vec<_>>().join(", ")
}
