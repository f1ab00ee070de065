//! Named experiments over the library's checks: each kind wires a canonical
//! test case to the statistics layer and reports per-metric pass/fail against
//! a caller-pinned tolerance.
//!
//! Reports are deterministic functions of the [`Experiment`] record (seed
//! included): identical experiments render byte-identical CSV, whatever the
//! worker count.

use super::{log_log_slope, map_paths, mean, summarize, MIN_STATISTICAL_PATHS};
use crate::integrate::{
    duality_check, duality_check_cylindrical, isometry_check, isometry_check_cylindrical,
    operator_pushthrough_check, operator_pushthrough_check_cylindrical, Constant,
    ConstantOperator, DriverIntegrand, FnIntegrand, FnOperator, Integrand, IntegrandClass,
};
use crate::noise::{BrownianPath, CylindricalNoise, RngSpec, TimeGrid};
use crate::spaces::LinearOp;
use crate::spde::{
    energy_residual, gronwall_envelope, ito_formula_residual, reconstruct_inputs, solve_em,
    solve_strat, solve_strat_heun, truncation_convergence, uniqueness_check, DiffusionFamily,
    DriftOp, ItoFunction,
};
use crate::stratonovich::{collapse_constant_noise, collapsed_driver};
use crate::variation::{
    bdg_ratio, cross_variation, qv_identity_check, qv_identity_check_cylindrical,
    scalar_quadratic_variation, Partition,
};
use crate::{Error, Result, Space, SpaceScale, Vector};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

/// Suite case of the isometry experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsometryCase {
    /// Deterministic `a = (3,4)`: reference `‖a‖² = 25`.
    Constant,
    /// `Ψ_s = W_s`: reference `t²/2`.
    Brownian,
    /// Constant operator with columns `0.6·e_1, 0.8·e_2`: reference `t`.
    Cylindrical,
}

/// Suite case of the quadratic-variation experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QvCase {
    /// Real constant integrand 1: reference `t`.
    Constant,
    /// `Ψ_s = W_s`: reference `t²/2`.
    Driver,
    /// Constant two-mode operator with unit columns: reference `2t`.
    Cylindrical,
    /// Deterministic `X_t = t·v`: variation vanishes at rate `O(mesh)`.
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Isometry { case: IsometryCase },
    Duality,
    Pushthrough,
    Qv { case: QvCase },
    Cross,
    Bdg,
    StratConvert,
    Collapse,
    Solve,
    Truncation,
    Energy,
    ItoFormula,
}

impl ExperimentKind {
    /// Pathwise identities run at any path count; everything else estimates
    /// expectations and needs at least [`MIN_STATISTICAL_PATHS`].
    pub fn is_statistical(&self) -> bool {
        !matches!(self, ExperimentKind::Duality | ExperimentKind::Pushthrough)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Isometry { .. } => "isometry",
            ExperimentKind::Duality => "duality",
            ExperimentKind::Pushthrough => "pushthrough",
            ExperimentKind::Qv { .. } => "qv",
            ExperimentKind::Cross => "cross",
            ExperimentKind::Bdg => "bdg",
            ExperimentKind::StratConvert => "strat-convert",
            ExperimentKind::Collapse => "collapse",
            ExperimentKind::Solve => "solve",
            ExperimentKind::Truncation => "truncate",
            ExperimentKind::Energy => "energy",
            ExperimentKind::ItoFormula => "ito-formula",
        }
    }
}

/// One reproducible experiment: kind, Monte Carlo size, grid and tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub kind: ExperimentKind,
    pub n_paths: usize,
    pub seed: u64,
    pub dt: f64,
    pub t_final: f64,
    pub k_modes: usize,
    pub tolerance: f64,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        if self.kind.is_statistical() && self.n_paths < MIN_STATISTICAL_PATHS {
            return Err(Error::TooFewPaths { got: self.n_paths, min: MIN_STATISTICAL_PATHS });
        }
        if self.n_paths == 0 {
            return Err(Error::TooFewPaths { got: 0, min: 1 });
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Invalid("tolerance must be strictly positive".into()));
        }
        if self.k_modes == 0 {
            return Err(Error::Invalid("k_modes must be at least 1".into()));
        }
        TimeGrid::from_horizon(self.t_final, self.dt).map(|_| ())
    }

    fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::from_horizon(self.t_final, self.dt)
    }
}

/// One reported metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub value: f64,
    pub std_err: Option<f64>,
    pub ci95: Option<(f64, f64)>,
    pub n: usize,
    pub pass: bool,
}

impl MetricRow {
    fn plain(name: &str, value: f64, n: usize, pass: bool) -> Self {
        MetricRow { name: name.into(), value, std_err: None, ci95: None, n, pass }
    }

    fn with_summary(name: &str, s: super::StatSummary, pass: bool) -> Self {
        MetricRow {
            name: name.into(),
            value: s.mean,
            std_err: Some(s.std_err),
            ci95: Some(s.ci95),
            n: s.n,
            pass,
        }
    }
}

/// Experiment outcome: every metric the kind defines, overall pass, wall time.
#[derive(Debug, Clone)]
pub struct Report {
    pub metrics: Vec<MetricRow>,
    pub pass: bool,
    pub runtime: Duration,
}

impl Report {
    fn from_metrics(metrics: Vec<MetricRow>, started: Instant) -> Report {
        let pass = metrics.iter().all(|m| m.pass);
        Report { metrics, pass, runtime: started.elapsed() }
    }

    /// Deterministic CSV: header row, one row per metric, and a trailing
    /// metadata comment. Wall time is deliberately excluded.
    pub fn to_csv(&self, exp: &Experiment) -> String {
        let mut out = String::from("metric,value,std_err,ci_lo,ci_hi,n,pass\n");
        for m in &self.metrics {
            let std_err = m.std_err.map(|v| format!("{v:.16e}")).unwrap_or_default();
            let (lo, hi) = m
                .ci95
                .map(|(a, b)| (format!("{a:.16e}"), format!("{b:.16e}")))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{:.16e},{},{},{},{},{}\n",
                m.name, m.value, std_err, lo, hi, m.n, m.pass
            ));
        }
        out.push_str(&format!("# seed={}, dt={}, n={}\n", exp.seed, exp.dt, exp.n_paths));
        out
    }
}

/// Runs one experiment; worker panics surface as errors, not aborts.
pub fn run(exp: &Experiment) -> Result<Report> {
    exp.validate()?;
    let started = Instant::now();
    let metrics = catch_unwind(AssertUnwindSafe(|| dispatch(exp)))
        .map_err(|p| {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "worker panic".into());
            Error::Invalid(format!("worker panic: {msg}"))
        })??;
    Ok(Report::from_metrics(metrics, started))
}

fn dispatch(exp: &Experiment) -> Result<Vec<MetricRow>> {
    match exp.kind {
        ExperimentKind::Isometry { case } => run_isometry(exp, case),
        ExperimentKind::Duality => run_duality(exp),
        ExperimentKind::Pushthrough => run_pushthrough(exp),
        ExperimentKind::Qv { case } => run_qv(exp, case),
        ExperimentKind::Cross => run_cross(exp),
        ExperimentKind::Bdg => run_bdg(exp),
        ExperimentKind::StratConvert => run_strat_convert(exp),
        ExperimentKind::Collapse => run_collapse(exp),
        ExperimentKind::Solve => run_solve(exp),
        ExperimentKind::Truncation => run_truncation(exp),
        ExperimentKind::Energy => run_energy(exp),
        ExperimentKind::ItoFormula => run_ito_formula(exp),
    }
}

fn run_isometry(exp: &Experiment, case: IsometryCase) -> Result<Vec<MetricRow>> {
    let grid = exp.grid()?;
    let t = exp.t_final;
    let (report, analytic) = match case {
        IsometryCase::Constant => {
            let scale = SpaceScale::unit(2);
            let a = Vector::new(vec![3.0, 4.0]);
            let r = isometry_check(&Constant(a), &scale, Space::H, &grid, t, exp.n_paths, exp.seed)?;
            (r, 25.0)
        }
        IsometryCase::Brownian => {
            let scale = SpaceScale::unit(1);
            let r = isometry_check(
                &DriverIntegrand,
                &scale,
                Space::H,
                &grid,
                t,
                exp.n_paths,
                exp.seed,
            )?;
            (r, t * t / 2.0)
        }
        IsometryCase::Cylindrical => {
            let scale = SpaceScale::unit(2);
            let b = ConstantOperator::new(vec![
                Vector::new(vec![0.6, 0.0]),
                Vector::new(vec![0.0, 0.8]),
            ])?;
            let r = isometry_check_cylindrical(
                &b,
                &scale,
                Space::H,
                &grid,
                t,
                exp.n_paths,
                exp.seed,
            )?;
            (r, t)
        }
    };
    let vs_analytic = (report.lhs.mean - analytic).abs() / analytic;
    Ok(vec![
        MetricRow::with_summary("lhs_mean_sq_integral", report.lhs, true),
        MetricRow::with_summary("rhs_mean_time_integral", report.rhs, true),
        MetricRow::plain("rel_err", report.rel_err, exp.n_paths, report.rel_err <= exp.tolerance),
        MetricRow::plain("analytic_reference", analytic, exp.n_paths, true),
        MetricRow::plain(
            "rel_err_vs_analytic",
            vs_analytic,
            exp.n_paths,
            vs_analytic <= exp.tolerance,
        ),
    ])
}

/// Two-dimensional adapted integrand `(W_s, W_s² − s)` shared by the pathwise
/// identity experiments.
fn pathwise_integrand() -> impl Integrand {
    FnIntegrand::new(2, IntegrandClass::SquareIntegrable, |view, k, out| {
        let w = view.w(k);
        out[0] = w;
        out[1] = w * w - view.time(k);
    })
}

fn pathwise_operator() -> impl crate::integrate::OperatorIntegrand {
    FnOperator::new(2, 2, IntegrandClass::SquareIntegrable, |view, mode, k, out| {
        let w = view.w(mode, k);
        out[0] = w + 0.2 * mode as f64;
        out[1] = w * w - view.time(k);
    })
}

fn run_duality(exp: &Experiment) -> Result<Vec<MetricRow>> {
    let grid = exp.grid()?;
    let scale = SpaceScale::unit(2);
    let phi = Vector::new(vec![0.7, -1.3]);
    let scalar = duality_check(
        &pathwise_integrand(),
        &phi,
        &scale,
        Space::H,
        &grid,
        exp.t_final,
        exp.n_paths,
        exp.seed,
    )?;
    let cylindrical = duality_check_cylindrical(
        &pathwise_operator(),
        &phi,
        &scale,
        Space::H,
        &grid,
        exp.t_final,
        exp.n_paths,
        exp.seed ^ 1,
    )?;
    Ok(vec![
        MetricRow::plain(
            "scalar_max_abs_diff",
            scalar.max_abs_diff,
            exp.n_paths,
            scalar.within(exp.tolerance),
        ),
        MetricRow::plain("scalar_term_scale", scalar.term_scale, exp.n_paths, true),
        MetricRow::plain(
            "cylindrical_max_abs_diff",
            cylindrical.max_abs_diff,
            exp.n_paths,
            cylindrical.within(exp.tolerance),
        ),
        MetricRow::plain("cylindrical_term_scale", cylindrical.term_scale, exp.n_paths, true),
    ])
}

fn run_pushthrough(exp: &Experiment) -> Result<Vec<MetricRow>> {
    let grid = exp.grid()?;
    let mut rng = RngSpec::new(exp.seed ^ 0xbead, 0, 0).stream();
    let op = LinearOp::random(2, &mut rng);
    let scalar = operator_pushthrough_check(
        &op,
        &pathwise_integrand(),
        &grid,
        exp.t_final,
        exp.n_paths,
        exp.seed,
    )?;
    let cylindrical = operator_pushthrough_check_cylindrical(
        &op,
        &pathwise_operator(),
        &grid,
        exp.t_final,
        exp.n_paths,
        exp.seed ^ 1,
    )?;
    Ok(vec![
        MetricRow::plain(
            "scalar_max_abs_diff",
            scalar.max_abs_diff,
            exp.n_paths,
            scalar.within(exp.tolerance),
        ),
        MetricRow::plain("scalar_term_scale", scalar.term_scale, exp.n_paths, true),
        MetricRow::plain(
            "cylindrical_max_abs_diff",
            cylindrical.max_abs_diff,
            exp.n_paths,
            cylindrical.within(exp.tolerance),
        ),
        MetricRow::plain("cylindrical_term_scale", cylindrical.term_scale, exp.n_paths, true),
    ])
}

fn qv_ladder_metrics(
    ladder: crate::variation::QvLadder,
    analytic: Option<f64>,
    exp: &Experiment,
) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for r in &ladder.reports {
        rows.push(MetricRow::with_summary(
            &format!("l1_error_mesh_{:e}", r.mesh),
            r.l1_error,
            true,
        ));
    }
    let last = ladder.reports.last().expect("nonempty ladder");
    rows.push(MetricRow::plain(
        "ladder_strictly_decreasing",
        ladder.decreasing_beyond_ci as u8 as f64,
        exp.n_paths,
        ladder.decreasing_beyond_ci,
    ));
    let reference = analytic.unwrap_or(last.reference);
    let rel = (last.estimate - reference).abs() / reference.abs().max(f64::MIN_POSITIVE);
    rows.push(MetricRow::plain("final_estimate", last.estimate, exp.n_paths, true));
    rows.push(MetricRow::plain("reference", reference, exp.n_paths, true));
    rows.push(MetricRow::plain("rel_err", rel, exp.n_paths, rel <= exp.tolerance));
    rows
}

fn run_qv(exp: &Experiment, case: QvCase) -> Result<Vec<MetricRow>> {
    let grid = exp.grid()?;
    let strides = [8usize, 4, 2, 1];
    let t = exp.t_final;
    match case {
        QvCase::Constant => {
            let scale = SpaceScale::unit(1);
            let ladder = qv_identity_check(
                &Constant(Vector::new(vec![1.0])),
                &scale,
                Space::H,
                &grid,
                t,
                &strides,
                exp.n_paths,
                exp.seed,
            )?;
            // The estimator is exact up to MC noise at every mesh; the ladder
            // monotonicity clause does not apply to a flat error profile.
            let mut rows = qv_ladder_metrics(ladder, Some(t), exp);
            for r in &mut rows {
                if r.name == "ladder_strictly_decreasing" {
                    r.pass = true;
                }
            }
            Ok(rows)
        }
        QvCase::Driver => {
            let scale = SpaceScale::unit(1);
            let ladder = qv_identity_check(
                &DriverIntegrand,
                &scale,
                Space::H,
                &grid,
                t,
                &strides,
                exp.n_paths,
                exp.seed,
            )?;
            Ok(qv_ladder_metrics(ladder, Some(t * t / 2.0), exp))
        }
        QvCase::Cylindrical => {
            let scale = SpaceScale::unit(2);
            let b = ConstantOperator::new(vec![
                Vector::new(vec![1.0, 0.0]),
                Vector::new(vec![0.0, 1.0]),
            ])?;
            let ladder = qv_identity_check_cylindrical(
                &b,
                &scale,
                Space::H,
                &grid,
                t,
                &strides,
                exp.n_paths,
                exp.seed,
            )?;
            Ok(qv_ladder_metrics(ladder, Some(2.0 * t), exp))
        }
        QvCase::Smooth => {
            // Deterministic X_t = t·v: the partition sum is ‖v‖²·t·mesh.
            let scale = SpaceScale::unit(1);
            let end = grid.index_of(t)?;
            let xs: Vec<Vector> =
                (0..=end).map(|k| Vector::new(vec![1.5 * grid.time(k)])).collect();
            let mut rows = Vec::new();
            let mut prev = f64::INFINITY;
            let mut monotone = true;
            for stride in strides {
                let part = Partition::with_stride(end, stride)?;
                let qv = crate::variation::quadratic_variation(&scale, Space::H, &xs, &part)?;
                monotone &= qv < prev;
                prev = qv;
                rows.push(MetricRow::plain(
                    &format!("qv_mesh_{:e}", part.mesh(&grid)),
                    qv,
                    1,
                    true,
                ));
            }
            let final_ok = prev <= exp.tolerance * (2.25 * t);
            rows.push(MetricRow::plain("vanishes_with_mesh", monotone as u8 as f64, 1, monotone));
            rows.push(MetricRow::plain("final_qv", prev, 1, final_ok));
            Ok(rows)
        }
    }
}

fn run_cross(exp: &Experiment) -> Result<Vec<MetricRow>> {
    let grid = exp.grid()?;
    let t = exp.t_final;
    let end = grid.index_of(t)?;
    let part = Partition::with_stride(end, 1)?;
    let a = 0.7;
    let samples = map_paths(exp.n_paths, |p| {
        let noise = CylindricalNoise::sample(&grid, 2, exp.seed, p).expect("two modes");
        let w1 = noise.component_path(0);
        let nodes =
            crate::integrate::ito_nodes(&Constant(Vector::new(vec![a])), &w1, t).expect("on grid");
        let ys: Vec<f64> = (0..=end).map(|k| w1.value(k)).collect();
        let same = cross_variation(&nodes, &ys, &part).expect("aligned")[0];
        let other: Vec<f64> = (0..=end).map(|k| noise.value(1, k)).collect();
        let indep = cross_variation(&nodes, &other, &part).expect("aligned")[0];
        (same, indep)
    });
    let same = summarize(&samples.iter().map(|s| s.0).collect::<Vec<_>>(), exp.seed ^ 0x31)?;
    let indep = summarize(&samples.iter().map(|s| s.1).collect::<Vec<_>>(), exp.seed ^ 0x32)?;
    let oracle = a * t;
    let rel = (same.mean - oracle).abs() / oracle;
    let indep_band = 3.0 * indep.std_err;
    Ok(vec![
        MetricRow::with_summary("cross_with_own_driver", same, rel <= exp.tolerance),
        MetricRow::plain("oracle_a_times_t", oracle, exp.n_paths, true),
        MetricRow::plain("rel_err", rel, exp.n_paths, rel <= exp.tolerance),
        MetricRow::with_summary(
            "cross_with_independent_driver",
            indep,
            indep.mean.abs() <= indep_band,
        ),
    ])
}

fn run_bdg(exp: &Experiment) -> Result<Vec<MetricRow>> {
    let grid = exp.grid()?;
    let scale = SpaceScale::unit(2);
    let mut rng = RngSpec::new(exp.seed ^ 0xbd9, 0, 0).stream();
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for case in 0..10 {
        let cols = vec![Vector::random(2, &mut rng), Vector::random(2, &mut rng)];
        let b = ConstantOperator::new(cols)?;
        let r = bdg_ratio(&b, &scale, Space::H, &grid, exp.t_final, exp.n_paths, exp.seed)?;
        worst = worst.max(r);
        rows.push(MetricRow::plain(&format!("ratio_case_{case}"), r, exp.n_paths, r.is_finite()));
    }
    rows.push(MetricRow::plain("suite_max_ratio", worst, exp.n_paths, worst.is_finite()));
    Ok(rows)
}

fn run_strat_convert(exp: &Experiment) -> Result<Vec<MetricRow>> {
    let grid = exp.grid()?;
    let lambdas = [0.3, 0.4];
    let sigma_sq: f64 = lambdas.iter().map(|l| l * l).sum();
    let a = DriftOp::zero(1);
    let g = DiffusionFamily::diagonal(1, &lambdas);
    let psi0 = Vector::new(vec![1.0]);

    // Mean growth of the converted solver against the geometric closed form.
    let finals = map_paths(exp.n_paths, |p| {
        let noise = CylindricalNoise::sample(&grid, 2, exp.seed, p).expect("two modes");
        solve_strat(&a, &g, &psi0, &noise).expect("solve").terminal()[0]
    });
    let growth = summarize(&finals, exp.seed ^ 0x41)?;
    let oracle = (sigma_sq * exp.t_final / 2.0).exp();
    let rel = (growth.mean - oracle).abs() / oracle;

    // Midpoint (Heun) route against the converted route on a 3-rung ladder.
    let steps = grid.steps();
    if steps % 4 != 0 {
        return Err(Error::InvalidGrid("step count must be divisible by 4 for the ladder".into()));
    }
    let n_ladder = exp.n_paths.min(2000).max(MIN_STATISTICAL_PATHS);
    let mut pts = Vec::new();
    for divisor in [4usize, 2, 1] {
        let rung_grid = TimeGrid::new(exp.dt * divisor as f64, steps / divisor)?;
        let gaps = map_paths(n_ladder, |p| {
            let noise = CylindricalNoise::sample(&rung_grid, 2, exp.seed ^ 0x42, p)
                .expect("two modes");
            let heun = solve_strat_heun(&a, &g, &psi0, &noise).expect("solve");
            let conv = solve_strat(&a, &g, &psi0, &noise).expect("solve");
            let d = heun.terminal()[0] - conv.terminal()[0];
            d * d
        });
        pts.push((rung_grid.dt(), mean(&gaps).sqrt()));
    }
    let slope = log_log_slope(&pts);

    let mut rows = vec![
        MetricRow::with_summary("mean_growth", growth, rel <= exp.tolerance),
        MetricRow::plain("oracle_exp_growth", oracle, exp.n_paths, true),
        MetricRow::plain("rel_err", rel, exp.n_paths, rel <= exp.tolerance),
        MetricRow::plain("midpoint_gap_slope", slope, n_ladder, slope >= 0.4),
    ];
    for (dt, gap) in pts {
        rows.push(MetricRow::plain(&format!("midpoint_gap_dt_{dt:e}"), gap, n_ladder, true));
    }
    Ok(rows)
}

fn run_collapse(exp: &Experiment) -> Result<Vec<MetricRow>> {
    let grid = exp.grid()?;
    let t = exp.t_final;
    let end = grid.index_of(t)?;

    // Geometric eigenvalue tail: σ approaches √(1/3).
    let tail: Vec<f64> = (1..=exp.k_modes.max(2)).map(|i| 0.5f64.powi(i as i32)).collect();
    let sigma_tail = collapse_constant_noise(&tail);
    let tail_err = (sigma_tail - (1.0f64 / 3.0).sqrt()).abs();

    // QV of the collapsed driver Σλ_i W^i over [0, t].
    let lambdas = [0.6, 0.8];
    let sigma_sq: f64 = lambdas.iter().map(|l| l * l).sum();
    let part = Partition::with_stride(end, 1)?;
    let qvs = map_paths(exp.n_paths, |p| {
        let noise = CylindricalNoise::sample(&grid, 2, exp.seed, p).expect("two modes");
        let driver = collapsed_driver(&lambdas, &noise).expect("mode count");
        scalar_quadratic_variation(&driver[..=end], &part).expect("aligned")
    });
    let qv = summarize(&qvs, exp.seed ^ 0x51)?;
    let qv_rel = (qv.mean - sigma_sq * t).abs() / (sigma_sq * t);

    // Law equivalence on the geometric case: ∫GΨ d𝓦 against σ∫Ψ̃ dW̃ on
    // independent noise, first two moments.
    let a = DriftOp::zero(1);
    let g = DiffusionFamily::diagonal(1, &lambdas);
    let sigma = collapse_constant_noise(&lambdas);
    let g_tilde = DiffusionFamily::diagonal(1, &[sigma]);
    let psi0 = Vector::new(vec![1.0]);
    let full = map_paths(exp.n_paths, |p| {
        let noise = CylindricalNoise::sample(&grid, 2, exp.seed ^ 0x52, p).expect("two modes");
        solve_em(&a, &g, &psi0, &noise).expect("solve").terminal()[0] - psi0[0]
    });
    let collapsed = map_paths(exp.n_paths, |p| {
        let noise = CylindricalNoise::sample(&grid, 1, exp.seed ^ 0x53, p).expect("one mode");
        solve_em(&a, &g_tilde, &psi0, &noise).expect("solve").terminal()[0] - psi0[0]
    });
    let m1_full = summarize(&full, exp.seed ^ 0x54)?;
    let m1_col = summarize(&collapsed, exp.seed ^ 0x55)?;
    let m2_full =
        summarize(&full.iter().map(|x| x * x).collect::<Vec<_>>(), exp.seed ^ 0x56)?;
    let m2_col =
        summarize(&collapsed.iter().map(|x| x * x).collect::<Vec<_>>(), exp.seed ^ 0x57)?;
    let overlap = |a: &super::StatSummary, b: &super::StatSummary| {
        a.ci95.0 <= b.ci95.1 && b.ci95.0 <= a.ci95.1
    };
    let m1_ok = overlap(&m1_full, &m1_col);
    let m2_ok = overlap(&m2_full, &m2_col);

    Ok(vec![
        MetricRow::plain("sigma_geometric_tail", sigma_tail, 1, tail_err <= exp.tolerance),
        MetricRow::with_summary("collapsed_driver_qv", qv, qv_rel <= exp.tolerance),
        MetricRow::plain("qv_rel_err", qv_rel, exp.n_paths, qv_rel <= exp.tolerance),
        MetricRow::with_summary("moment1_full", m1_full, m1_ok),
        MetricRow::with_summary("moment1_collapsed", m1_col, m1_ok),
        MetricRow::with_summary("moment2_full", m2_full, m2_ok),
        MetricRow::with_summary("moment2_collapsed", m2_col, m2_ok),
    ])
}

fn run_solve(exp: &Experiment) -> Result<Vec<MetricRow>> {
    let grid = exp.grid()?;
    let t = exp.t_final;
    let theta = 1.0;
    let sigma = 1.0;
    let a = DriftOp::linear_decay(1, theta);
    let mut col = Vector::zeros(1);
    col[0] = sigma;
    let g = DiffusionFamily::additive(vec![col])?;
    let psi0 = Vector::new(vec![0.0]);

    let finals = map_paths(exp.n_paths, |p| {
        let noise = CylindricalNoise::sample(&grid, 1, exp.seed, p).expect("one mode");
        solve_em(&a, &g, &psi0, &noise).expect("solve").terminal()[0]
    });
    let var = mean(&finals.iter().map(|x| x * x).collect::<Vec<_>>());
    let oracle = sigma * sigma * (1.0 - (-2.0 * theta * t).exp()) / (2.0 * theta);
    let rel = (var - oracle).abs() / oracle;

    let unique = uniqueness_check(&a, &g, &psi0, &grid, 1, exp.seed ^ 0x61)?;

    let scale = SpaceScale::unit(1);
    let sups = map_paths(exp.n_paths.min(5000), |p| {
        let noise = CylindricalNoise::sample(&grid, 1, exp.seed ^ 0x62, p).expect("one mode");
        let sol = solve_em(&a, &g, &psi0, &noise).expect("solve");
        sol.states()
            .iter()
            .map(|s| scale.norm_sq(Space::H, s).expect("dim 1"))
            .fold(0.0, f64::max)
    });
    let envelope = gronwall_envelope(a.growth(), g.sum_sq_constants(), exp.dt, t)
        * (scale.norm_sq(Space::H, &psi0)? + 1.0);
    let mean_sup = mean(&sups);

    Ok(vec![
        MetricRow::plain("ou_variance", var, exp.n_paths, rel <= exp.tolerance),
        MetricRow::plain("ou_variance_oracle", oracle, exp.n_paths, true),
        MetricRow::plain("rel_err", rel, exp.n_paths, rel <= exp.tolerance),
        MetricRow::plain(
            "bit_identical_reruns",
            unique.bit_identical as u8 as f64,
            1,
            unique.bit_identical,
        ),
        MetricRow::plain(
            "reversed_order_gap",
            unique.reversed_order_gap,
            1,
            unique.reversed_order_gap <= 1e-10,
        ),
        MetricRow::plain(
            "distinct_seed_differs",
            unique.distinct_seed_differs as u8 as f64,
            1,
            unique.distinct_seed_differs,
        ),
        MetricRow::plain("mean_sup_norm_sq", mean_sup, sups.len(), mean_sup <= envelope),
        MetricRow::plain("gronwall_envelope", envelope, 1, true),
    ])
}

fn run_truncation(exp: &Experiment) -> Result<Vec<MetricRow>> {
    let grid = exp.grid()?;
    let scale = SpaceScale::unit(1);
    let k = exp.k_modes.max(4);
    let g = DiffusionFamily::geometric(1, k, 0.5);
    let a = DriftOp::zero(1);
    let psi0 = Vector::new(vec![1.0]);
    let js: Vec<usize> = (1..k.min(4)).collect();
    let table = truncation_convergence(
        &a,
        &g,
        &psi0,
        &grid,
        exp.t_final,
        k,
        &js,
        exp.n_paths,
        exp.seed,
        &scale,
        Space::H,
    )?;
    let mut rows = Vec::new();
    for r in &table.rows {
        rows.push(MetricRow::plain(
            &format!("sup_sq_error_j_{}", r.j),
            r.mean_sup_sq,
            exp.n_paths,
            true,
        ));
        rows.push(MetricRow::plain(&format!("tail_sq_j_{}", r.j), r.tail_sq, 1, true));
    }
    rows.push(MetricRow::plain(
        "monotone_in_j",
        table.monotone as u8 as f64,
        exp.n_paths,
        table.monotone,
    ));
    for pair in table.rows.windows(2) {
        let ratio = pair[0].mean_sup_sq / pair[1].mean_sup_sq.max(f64::MIN_POSITIVE);
        rows.push(MetricRow::plain(
            &format!("error_ratio_j_{}_to_{}", pair[0].j, pair[1].j),
            ratio,
            exp.n_paths,
            // Tail² drops 4× per level; accept within a factor of 2.
            (2.0..=8.0).contains(&ratio),
        ));
    }
    Ok(rows)
}

fn ou_residual_rms(exp: &Experiment, grid: &TimeGrid, seed: u64, n: usize) -> Result<f64> {
    let scale = SpaceScale::unit(1);
    let a = DriftOp::linear_decay(1, 1.0);
    let mut col = Vector::zeros(1);
    col[0] = 1.0;
    let g = DiffusionFamily::additive(vec![col])?;
    let psi0 = Vector::new(vec![1.0]);
    let t = exp.t_final;
    let sq = map_paths(n, |p| {
        let noise = CylindricalNoise::sample(grid, 1, seed, p).expect("one mode");
        let sol = solve_em(&a, &g, &psi0, &noise).expect("solve");
        let (eta, cols) = reconstruct_inputs(&sol, &a, &g);
        let r = energy_residual(&scale, Space::H, &sol, &eta, &cols, &noise, t)
            .expect("aligned grids");
        r * r
    });
    Ok(mean(&sq).sqrt())
}

fn run_energy(exp: &Experiment) -> Result<Vec<MetricRow>> {
    let grid = exp.grid()?;
    let fine = TimeGrid::new(exp.dt / 2.0, grid.steps() * 2)?;
    let n = exp.n_paths;
    let coarse_rms = ou_residual_rms(exp, &grid, exp.seed, n)?;
    let fine_rms = ou_residual_rms(exp, &fine, exp.seed ^ 0x71, n)?;
    let ratio = coarse_rms / fine_rms.max(f64::MIN_POSITIVE);
    // RMS halves under dt-halving, with the ±30% band around 2 from the suite.
    let halving_ok = (1.4..=2.6).contains(&ratio);

    // A = 0, constant B: residual mean sits in its own CI around 0.
    let scale = SpaceScale::unit(1);
    let a = DriftOp::zero(1);
    let mut col = Vector::zeros(1);
    col[0] = 1.0;
    let g = DiffusionFamily::additive(vec![col])?;
    let psi0 = Vector::new(vec![0.0]);
    let rs = map_paths(n, |p| {
        let noise = CylindricalNoise::sample(&grid, 1, exp.seed ^ 0x72, p).expect("one mode");
        let sol = solve_em(&a, &g, &psi0, &noise).expect("solve");
        let (eta, cols) = reconstruct_inputs(&sol, &a, &g);
        energy_residual(&scale, Space::H, &sol, &eta, &cols, &noise, exp.t_final)
            .expect("aligned grids")
    });
    let zero_mean = summarize(&rs, exp.seed ^ 0x73)?;
    let covers_zero = zero_mean.ci95.0 <= 0.0 && 0.0 <= zero_mean.ci95.1;

    Ok(vec![
        MetricRow::plain("rms_residual_dt", coarse_rms, n, true),
        MetricRow::plain("rms_residual_half_dt", fine_rms, n, true),
        MetricRow::plain("halving_ratio", ratio, n, halving_ok),
        MetricRow::with_summary("additive_residual_mean", zero_mean, covers_zero),
    ])
}

fn run_ito_formula(exp: &Experiment) -> Result<Vec<MetricRow>> {
    let grid = exp.grid()?;
    let scale = SpaceScale::unit(2);
    let noise = CylindricalNoise::sample(&grid, 2, exp.seed, 0)?;
    let a = DriftOp::linear_decay(2, 0.5);
    let g = DiffusionFamily::diagonal(2, &[0.4, 0.1]);
    let psi0 = Vector::new(vec![1.0, 0.5]);
    let sol = solve_em(&a, &g, &psi0, &noise)?;
    let t = exp.t_final;

    let (eta, cols) = reconstruct_inputs(&sol, &a, &g);
    let energy = energy_residual(&scale, Space::U, &sol, &eta, &cols, &noise, t)?;
    let rules = ItoFunction::norm_sq(scale.clone(), Space::U);
    let ito = ito_formula_residual(&rules, &sol, &a, &g, &noise, t, &scale, Space::U, exp.seed)?;
    let gap = (ito - energy).abs();

    let linear = ItoFunction::linear(scale.clone(), Space::H, Vector::new(vec![0.3, 2.0]));
    let linear_res =
        ito_formula_residual(&linear, &sol, &a, &g, &noise, t, &scale, Space::H, exp.seed)?;

    Ok(vec![
        MetricRow::plain("energy_residual", energy, 1, true),
        MetricRow::plain("norm_sq_residual", ito, 1, true),
        MetricRow::plain("specialization_gap", gap, 1, gap <= 1e-12),
        MetricRow::plain(
            "linear_functional_residual",
            linear_res,
            1,
            linear_res.abs() <= 1e-12,
        ),
    ])
}

/// Kinds that define a single scalar refinement error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineKind {
    /// RMS gap between the left Itô sum of `W dW` and `(W_t² − t)/2`;
    /// expected slope ½.
    ItoClosedForm,
    /// Deterministic quadratic variation of `t·v`; expected slope 1.
    QvSmooth,
    /// Isometry error of a constant integrand: pure Monte Carlo floor.
    ConstantFloor,
    /// Terminal error of the noise-free decay solve; expected slope 1.
    SolveDecay,
}

#[derive(Debug, Clone)]
pub struct RefineReport {
    pub rungs: Vec<(f64, f64)>,
    pub slope: f64,
    /// Every rung's error lies inside its own 5σ Monte Carlo band: the metric
    /// sits at its statistical floor and the slope is not meaningful.
    pub floor_detected: bool,
}

/// Error at one rung together with the 5σ Monte Carlo band of that error
/// estimate (0 for deterministic metrics).
fn refine_error(kind: RefineKind, dt: f64, t: f64, n: usize, seed: u64) -> Result<(f64, f64)> {
    let grid = TimeGrid::from_horizon(t, dt)?;
    let end = grid.steps();
    match kind {
        RefineKind::ItoClosedForm => {
            let sq = map_paths(n, |p| {
                let path = BrownianPath::sample(&grid, &RngSpec::new(seed, p, 0));
                let left = crate::integrate::integrate_ito(&DriverIntegrand, &path, t)
                    .expect("on grid")[0];
                let w = path.value(end);
                let exact = (w * w - t) / 2.0;
                (left - exact) * (left - exact)
            });
            let s = summarize(&sq, seed ^ 0x91)?;
            let rms = s.mean.sqrt();
            // Delta method: d√m = dm / (2√m).
            let band = 5.0 * s.std_err / (2.0 * rms.max(f64::MIN_POSITIVE));
            Ok((rms, band))
        }
        RefineKind::QvSmooth => {
            let scale = SpaceScale::unit(1);
            let xs: Vec<Vector> =
                (0..=end).map(|k| Vector::new(vec![1.5 * grid.time(k)])).collect();
            let part = Partition::with_stride(end, 1)?;
            let qv = crate::variation::quadratic_variation(&scale, Space::H, &xs, &part)?;
            Ok((qv, 0.0))
        }
        RefineKind::ConstantFloor => {
            let scale = SpaceScale::unit(2);
            let a = Vector::new(vec![3.0, 4.0]);
            let diffs = map_paths(n, |p| {
                let path = BrownianPath::sample(&grid, &RngSpec::new(seed, p, 0));
                let lhs = crate::integrate::integrate_ito(&Constant(a.clone()), &path, t)
                    .expect("on grid");
                scale.norm_sq(Space::H, &lhs).expect("dim 2") - 25.0 * t
            });
            let s = summarize(&diffs, seed ^ 0x92)?;
            Ok((s.mean.abs(), 5.0 * s.std_err))
        }
        RefineKind::SolveDecay => {
            let a = DriftOp::linear_decay(1, 1.0);
            let g = DiffusionFamily::diagonal(1, &[0.0]);
            let noise = CylindricalNoise::sample(&grid, 1, seed, 0)?;
            let sol = solve_em(&a, &g, &Vector::new(vec![1.0]), &noise)?;
            Ok(((sol.terminal()[0] - (-t).exp()).abs(), 0.0))
        }
    }
}

/// Least-squares log-log slope of the refinement error over a strictly
/// decreasing `dt` ladder of at least three rungs.
pub fn refine(exp: &Experiment, kind: RefineKind, ladder: &[f64]) -> Result<RefineReport> {
    if ladder.len() < 3 {
        return Err(Error::ShortLadder { min: 3 });
    }
    if !ladder.windows(2).all(|w| w[1] < w[0]) {
        return Err(Error::ShortLadder { min: 3 });
    }
    let mut rungs = Vec::with_capacity(ladder.len());
    let mut at_floor = true;
    for (i, &dt) in ladder.iter().enumerate() {
        let (err, band) = refine_error(kind, dt, exp.t_final, exp.n_paths, exp.seed ^ i as u64)?;
        at_floor &= band > 0.0 && err <= band;
        rungs.push((dt, err));
    }
    let slope = log_log_slope(&rungs);
    Ok(RefineReport { rungs, slope, floor_detected: at_floor })
}
