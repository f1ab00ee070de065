//! Itô stochastic integrals on the grid: exact simple-process sums, left-point
//! Riemann–Itô sums for general adapted integrands, cylindrical integrals as
//! mode sums, and localization by first-passage stopping rules.
//!
//! Integrands evaluate through an [`AdaptedView`] that exposes the driver only
//! up to the current node, so adaptedness is enforced by construction: the
//! value held on the block `(t_k, t_{k+1}]` can use information up to `t_k`
//! and nothing later.

use crate::harness::{self, StatSummary, MIN_STATISTICAL_PATHS};
use crate::noise::{BrownianPath, CylindricalNoise, RngSpec, TimeGrid};
use crate::spaces::LinearOp;
use crate::{Error, Result, Space, SpaceScale, Vector};

/// Declared integrability class of an integrand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrandClass {
    /// Square-integrable in expectation; isometry-grade.
    SquareIntegrable,
    /// Square-integrable path by path only; must be localized before any
    /// expectation-level identity is asserted.
    LocallySquareIntegrable,
}

/// Scalar driver restricted to nodes `0..=limit`.
pub struct AdaptedView<'a> {
    path: &'a BrownianPath,
    limit: usize,
}

impl<'a> AdaptedView<'a> {
    pub fn new(path: &'a BrownianPath, limit: usize) -> Self {
        AdaptedView { path, limit }
    }

    /// `W_{t_j}`, available for `j ≤ limit` only.
    pub fn w(&self, j: usize) -> f64 {
        assert!(j <= self.limit, "adaptedness violation: node {j} read at limit {}", self.limit);
        self.path.value(j)
    }

    pub fn time(&self, j: usize) -> f64 {
        self.path.grid().time(j)
    }

    pub fn grid(&self) -> &TimeGrid {
        self.path.grid()
    }

    pub fn limit(&self) -> usize {
        self.limit
    }
}

/// Cylindrical driver restricted to nodes `0..=limit` on every component.
pub struct CylAdaptedView<'a> {
    noise: &'a CylindricalNoise,
    limit: usize,
}

impl<'a> CylAdaptedView<'a> {
    pub fn new(noise: &'a CylindricalNoise, limit: usize) -> Self {
        CylAdaptedView { noise, limit }
    }

    /// `W^comp_{t_j}`, available for `j ≤ limit` only.
    pub fn w(&self, comp: usize, j: usize) -> f64 {
        assert!(j <= self.limit, "adaptedness violation: node {j} read at limit {}", self.limit);
        self.noise.value(comp, j)
    }

    pub fn time(&self, j: usize) -> f64 {
        self.noise.grid().time(j)
    }

    pub fn grid(&self) -> &TimeGrid {
        self.noise.grid()
    }

    pub fn limit(&self) -> usize {
        self.limit
    }
}

/// H-valued adapted integrand of a scalar driver, evaluated by the left-point
/// rule.
pub trait Integrand: Sync {
    fn dim(&self) -> usize;

    fn class(&self) -> IntegrandClass {
        IntegrandClass::SquareIntegrable
    }

    /// Writes the value held on `(t_k, t_{k+1}]` into `out`; the view is
    /// limited to node `k`.
    fn value_into(&self, view: &AdaptedView<'_>, k: usize, out: &mut [f64]);
}

/// Operator-valued adapted integrand of a cylindrical driver, given column by
/// column: `column_into(view, i, k, out)` is `B_{e_i}` held on
/// `(t_k, t_{k+1}]`.
pub trait OperatorIntegrand: Sync {
    fn dim(&self) -> usize;

    /// Number of modes (columns) `K`.
    fn modes(&self) -> usize;

    fn class(&self) -> IntegrandClass {
        IntegrandClass::SquareIntegrable
    }

    fn column_into(&self, view: &CylAdaptedView<'_>, mode: usize, k: usize, out: &mut [f64]);
}

/// Deterministic constant integrand.
pub struct Constant(pub Vector);

impl Integrand for Constant {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value_into(&self, _view: &AdaptedView<'_>, _k: usize, out: &mut [f64]) {
        out.copy_from_slice(self.0.coords());
    }
}

/// The driver itself as a one-dimensional integrand, `Ψ_s = W_s`.
pub struct DriverIntegrand;

impl Integrand for DriverIntegrand {
    fn dim(&self) -> usize {
        1
    }
    fn value_into(&self, view: &AdaptedView<'_>, k: usize, out: &mut [f64]) {
        out[0] = view.w(k);
    }
}

/// Closure-backed integrand.
pub struct FnIntegrand<F: Fn(&AdaptedView<'_>, usize, &mut [f64]) + Sync> {
    dim: usize,
    class: IntegrandClass,
    f: F,
}

impl<F: Fn(&AdaptedView<'_>, usize, &mut [f64]) + Sync> FnIntegrand<F> {
    pub fn new(dim: usize, class: IntegrandClass, f: F) -> Self {
        FnIntegrand { dim, class, f }
    }
}

impl<F: Fn(&AdaptedView<'_>, usize, &mut [f64]) + Sync> Integrand for FnIntegrand<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn class(&self) -> IntegrandClass {
        self.class
    }
    fn value_into(&self, view: &AdaptedView<'_>, k: usize, out: &mut [f64]) {
        (self.f)(view, k, out)
    }
}

/// Integrand frozen from an already-realized trajectory: the value on
/// `(t_k, t_{k+1}]` is `values[k]`. Adaptedness is inherited from however the
/// trajectory was produced.
pub struct Frozen {
    values: Vec<Vector>,
    dim: usize,
}

impl Frozen {
    pub fn new(values: Vec<Vector>) -> Result<Self> {
        let dim = values
            .first()
            .map(Vector::dim)
            .ok_or(Error::Invalid("frozen integrand needs at least one value".into()))?;
        if values.iter().any(|v| v.dim() != dim) {
            return Err(Error::Invalid("frozen values must share one dimension".into()));
        }
        Ok(Frozen { values, dim })
    }
}

impl Integrand for Frozen {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value_into(&self, _view: &AdaptedView<'_>, k: usize, out: &mut [f64]) {
        out.copy_from_slice(self.values[k].coords());
    }
}

/// Constant operator integrand with explicit columns.
pub struct ConstantOperator {
    columns: Vec<Vector>,
    dim: usize,
}

impl ConstantOperator {
    pub fn new(columns: Vec<Vector>) -> Result<Self> {
        let dim = columns
            .first()
            .map(Vector::dim)
            .ok_or(Error::Invalid("constant operator needs at least one column".into()))?;
        if columns.iter().any(|c| c.dim() != dim) {
            return Err(Error::Invalid("columns must share one dimension".into()));
        }
        Ok(ConstantOperator { columns, dim })
    }

    pub fn columns(&self) -> &[Vector] {
        &self.columns
    }
}

impl OperatorIntegrand for ConstantOperator {
    fn dim(&self) -> usize {
        self.dim
    }
    fn modes(&self) -> usize {
        self.columns.len()
    }
    fn column_into(&self, _view: &CylAdaptedView<'_>, mode: usize, _k: usize, out: &mut [f64]) {
        out.copy_from_slice(self.columns[mode].coords());
    }
}

/// Closure-backed operator integrand.
pub struct FnOperator<F: Fn(&CylAdaptedView<'_>, usize, usize, &mut [f64]) + Sync> {
    dim: usize,
    modes: usize,
    class: IntegrandClass,
    f: F,
}

impl<F: Fn(&CylAdaptedView<'_>, usize, usize, &mut [f64]) + Sync> FnOperator<F> {
    pub fn new(dim: usize, modes: usize, class: IntegrandClass, f: F) -> Self {
        FnOperator { dim, modes, class, f }
    }
}

impl<F: Fn(&CylAdaptedView<'_>, usize, usize, &mut [f64]) + Sync> OperatorIntegrand
    for FnOperator<F>
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn modes(&self) -> usize {
        self.modes
    }
    fn class(&self) -> IntegrandClass {
        self.class
    }
    fn column_into(&self, view: &CylAdaptedView<'_>, mode: usize, k: usize, out: &mut [f64]) {
        (self.f)(view, mode, k, out)
    }
}

/// Simple process: value `a_i` held on `(t_i, t_{i+1}]` for breakpoints
/// `t_0 < t_1 < …` on the grid, the last value extending beyond the final
/// breakpoint.
pub struct SimpleProcess {
    breakpoint_indices: Vec<usize>,
    values: Vec<Vector>,
    dim: usize,
}

impl SimpleProcess {
    pub fn new(breakpoint_indices: Vec<usize>, values: Vec<Vector>) -> Result<Self> {
        if breakpoint_indices.is_empty() || breakpoint_indices.len() != values.len() {
            return Err(Error::Invalid(
                "need one value per breakpoint, at least one of each".into(),
            ));
        }
        if !breakpoint_indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Invalid("breakpoints must be strictly increasing".into()));
        }
        let dim = values[0].dim();
        if values.iter().any(|v| v.dim() != dim) {
            return Err(Error::Invalid("values must share one dimension".into()));
        }
        Ok(SimpleProcess { breakpoint_indices, values, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Value held on `(t_k, t_{k+1}]`; zero before the first breakpoint.
    fn value_on_block(&self, k: usize) -> Option<&Vector> {
        match self.breakpoint_indices.partition_point(|&b| b <= k) {
            0 => None,
            i => Some(&self.values[i - 1]),
        }
    }

    /// Left-point integrand view of the process.
    pub fn as_integrand(&self) -> impl Integrand + '_ {
        FnIntegrand::new(self.dim, IntegrandClass::SquareIntegrable, move |_view, k, out| {
            match self.value_on_block(k) {
                Some(v) => out.copy_from_slice(v.coords()),
                None => out.fill(0.0),
            }
        })
    }
}

/// Exact integral of a simple process:
/// `Σ_i a_i (W_{t_{i+1} ∧ t} − W_{t_i ∧ t})`. No discretization error given
/// the path; `t` and all breakpoints must be grid nodes.
pub fn integrate_simple(proc: &SimpleProcess, path: &BrownianPath, t: f64) -> Result<Vector> {
    let grid = path.grid();
    let end = grid.index_of(t)?;
    if *proc.breakpoint_indices.last().unwrap() > grid.steps() {
        return Err(Error::Invalid("breakpoint beyond the grid horizon".into()));
    }
    let mut acc = Vector::zeros(proc.dim);
    for (i, value) in proc.values.iter().enumerate() {
        let lo = proc.breakpoint_indices[i].min(end);
        let hi = match proc.breakpoint_indices.get(i + 1) {
            Some(&b) => b.min(end),
            None => end,
        };
        if hi > lo {
            acc.add_scaled(value, path.value(hi) - path.value(lo));
        }
    }
    Ok(acc)
}

/// Left-point Riemann–Itô sum `Σ_{k: t_{k+1} ≤ t} Ψ(t_k)·ΔW_k`.
pub fn integrate_ito(integrand: &dyn Integrand, path: &BrownianPath, t: f64) -> Result<Vector> {
    let end = path.grid().index_of(t)?;
    let dim = integrand.dim();
    let mut acc = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    for k in 0..end {
        integrand.value_into(&AdaptedView::new(path, k), k, &mut buf);
        let dw = path.increment(k);
        for d in 0..dim {
            acc[d] += buf[d] * dw;
        }
    }
    Ok(Vector::new(acc))
}

/// Running Itô integral at every node up to `t`: entry `k` is the integral
/// over `[0, t_k]`.
pub fn ito_nodes(integrand: &dyn Integrand, path: &BrownianPath, t: f64) -> Result<Vec<Vector>> {
    let end = path.grid().index_of(t)?;
    let dim = integrand.dim();
    let mut acc = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    let mut nodes = Vec::with_capacity(end + 1);
    nodes.push(Vector::zeros(dim));
    for k in 0..end {
        integrand.value_into(&AdaptedView::new(path, k), k, &mut buf);
        let dw = path.increment(k);
        for d in 0..dim {
            acc[d] += buf[d] * dw;
        }
        nodes.push(Vector::new(acc.clone()));
    }
    Ok(nodes)
}

/// Cylindrical integral `Σ_{i<K} ∫ B_{e_i} dW^i` up to `t`. The operator must
/// carry exactly as many modes as the noise.
pub fn integrate_cylindrical(
    b: &dyn OperatorIntegrand,
    noise: &CylindricalNoise,
    t: f64,
) -> Result<Vector> {
    if b.modes() != noise.modes() {
        return Err(Error::ModeMismatch { expected: noise.modes(), got: b.modes() });
    }
    let end = noise.grid().index_of(t)?;
    let dim = b.dim();
    let mut acc = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    for mode in 0..b.modes() {
        for k in 0..end {
            b.column_into(&CylAdaptedView::new(noise, k), mode, k, &mut buf);
            let dw = noise.increment(mode, k);
            for d in 0..dim {
                acc[d] += buf[d] * dw;
            }
        }
    }
    Ok(Vector::new(acc))
}

/// Running cylindrical integral at every node up to `t`.
pub fn cylindrical_nodes(
    b: &dyn OperatorIntegrand,
    noise: &CylindricalNoise,
    t: f64,
) -> Result<Vec<Vector>> {
    if b.modes() != noise.modes() {
        return Err(Error::ModeMismatch { expected: noise.modes(), got: b.modes() });
    }
    let end = noise.grid().index_of(t)?;
    let dim = b.dim();
    let mut acc = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    let mut nodes = Vec::with_capacity(end + 1);
    nodes.push(Vector::zeros(dim));
    for k in 0..end {
        for mode in 0..b.modes() {
            b.column_into(&CylAdaptedView::new(noise, k), mode, k, &mut buf);
            let dw = noise.increment(mode, k);
            for d in 0..dim {
                acc[d] += buf[d] * dw;
            }
        }
        nodes.push(Vector::new(acc.clone()));
    }
    Ok(nodes)
}

/// First passage of a running square-integral above `level`, capped at time
/// `level` itself. `level = ∞` disables truncation.
#[derive(Debug, Clone, Copy)]
pub struct StoppingRule {
    pub level: f64,
}

impl StoppingRule {
    pub fn new(level: f64) -> Result<Self> {
        if level <= 0.0 || level.is_nan() {
            return Err(Error::Invalid("stopping level must be positive".into()));
        }
        Ok(StoppingRule { level })
    }

    pub fn unbounded() -> Self {
        StoppingRule { level: f64::INFINITY }
    }

    /// Stopping node: the first node `j` at which the running left sum
    /// `Σ_{m<j} f(m)·dt` has reached `level`, capped at the node of time
    /// `min(level, horizon)`. `f(m)` is the squared size of the integrand on
    /// block `m`.
    fn stop_node(&self, grid: &TimeGrid, mut block_sq: impl FnMut(usize) -> f64) -> usize {
        let cap = if self.level.is_infinite() {
            grid.steps()
        } else {
            ((self.level / grid.dt()).floor() as usize).min(grid.steps())
        };
        let mut running = 0.0;
        for j in 0..cap {
            if running >= self.level {
                return j;
            }
            running += block_sq(j) * grid.dt();
        }
        cap
    }
}

/// `Ψ·1_{t ≤ τ}` for `τ` the first passage of `∫‖Ψ‖²_space ds` above the
/// rule's level.
pub struct Localized<'a> {
    inner: &'a dyn Integrand,
    rule: StoppingRule,
    scale: &'a SpaceScale,
    space: Space,
}

/// Truncates `inner` at the rule's first-passage time, measured through the
/// running `∫‖Ψ‖²_space ds` of `inner` itself.
pub fn localize<'a>(
    inner: &'a dyn Integrand,
    rule: StoppingRule,
    scale: &'a SpaceScale,
    space: Space,
) -> Localized<'a> {
    Localized { inner, rule, scale, space }
}

impl Localized<'_> {
    /// Stopping node for a concrete path.
    pub fn stop_node(&self, path: &BrownianPath) -> usize {
        let mut buf = vec![0.0; self.inner.dim()];
        self.rule.stop_node(path.grid(), |m| {
            self.inner.value_into(&AdaptedView::new(path, m), m, &mut buf);
            self.scale.norm_sq_slice(self.space, &buf)
        })
    }
}

impl Integrand for Localized<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn class(&self) -> IntegrandClass {
        if self.rule.level.is_infinite() {
            self.inner.class()
        } else {
            IntegrandClass::SquareIntegrable
        }
    }

    fn value_into(&self, view: &AdaptedView<'_>, k: usize, out: &mut [f64]) {
        if self.rule.level.is_infinite() {
            return self.inner.value_into(view, k, out);
        }
        // The block (t_k, t_{k+1}] survives iff t_{k+1} ≤ τ.
        let stop = self.stop_node(view.path);
        if k + 1 <= stop {
            self.inner.value_into(view, k, out);
        } else {
            out.fill(0.0);
        }
    }
}

/// `B·1_{t ≤ τ}` for `τ` the first passage of the running Hilbert–Schmidt
/// square-integral above the rule's level.
pub struct LocalizedOperator<'a> {
    inner: &'a dyn OperatorIntegrand,
    rule: StoppingRule,
    scale: &'a SpaceScale,
    space: Space,
}

pub fn localize_operator<'a>(
    inner: &'a dyn OperatorIntegrand,
    rule: StoppingRule,
    scale: &'a SpaceScale,
    space: Space,
) -> LocalizedOperator<'a> {
    LocalizedOperator { inner, rule, scale, space }
}

impl LocalizedOperator<'_> {
    fn hs_sq_at(&self, noise: &CylindricalNoise, m: usize, buf: &mut [f64]) -> f64 {
        let mut acc = 0.0;
        for mode in 0..self.inner.modes() {
            self.inner.column_into(&CylAdaptedView::new(noise, m), mode, m, buf);
            acc += self.scale.norm_sq_slice(self.space, buf);
        }
        acc
    }

    pub fn stop_node(&self, noise: &CylindricalNoise) -> usize {
        let mut buf = vec![0.0; self.inner.dim()];
        self.rule.stop_node(noise.grid(), |m| self.hs_sq_at(noise, m, &mut buf))
    }
}

impl OperatorIntegrand for LocalizedOperator<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn modes(&self) -> usize {
        self.inner.modes()
    }

    fn class(&self) -> IntegrandClass {
        if self.rule.level.is_infinite() {
            self.inner.class()
        } else {
            IntegrandClass::SquareIntegrable
        }
    }

    fn column_into(&self, view: &CylAdaptedView<'_>, mode: usize, k: usize, out: &mut [f64]) {
        if self.rule.level.is_infinite() {
            return self.inner.column_into(view, mode, k, out);
        }
        let stop = self.stop_node(view.noise);
        if k + 1 <= stop {
            self.inner.column_into(view, mode, k, out);
        } else {
            out.fill(0.0);
        }
    }
}

/// Result of a Monte Carlo isometry comparison: `lhs ≈ E‖∫‖²` against
/// `rhs ≈ E∫‖·‖²`.
#[derive(Debug, Clone)]
pub struct IsometryReport {
    pub lhs: StatSummary,
    pub rhs: StatSummary,
    /// `|lhs − rhs| / rhs` (absolute difference when the reference is 0).
    pub rel_err: f64,
    /// Bootstrap 95% interval of the paired difference `lhs − rhs`.
    pub diff_ci95: (f64, f64),
}

fn isometry_report(lhs: Vec<f64>, rhs: Vec<f64>, seed: u64) -> Result<IsometryReport> {
    let diffs: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let lhs = harness::summarize(&lhs, seed ^ 0x150)?;
    let rhs = harness::summarize(&rhs, seed ^ 0x151)?;
    let diff = harness::summarize(&diffs, seed ^ 0x152)?;
    let rel_err = if rhs.mean != 0.0 {
        (lhs.mean - rhs.mean).abs() / rhs.mean.abs()
    } else {
        lhs.mean.abs()
    };
    Ok(IsometryReport { lhs, rhs, rel_err, diff_ci95: diff.ci95 })
}

fn require_paths(n_paths: usize) -> Result<()> {
    if n_paths < MIN_STATISTICAL_PATHS {
        return Err(Error::TooFewPaths { got: n_paths, min: MIN_STATISTICAL_PATHS });
    }
    Ok(())
}

/// Monte Carlo check of `E‖∫Ψ dW‖²_space = E∫‖Ψ_s‖²_space ds` at time `t`,
/// over `n_paths` with streams keyed by `seed`. Refuses integrands that are
/// only locally square-integrable.
pub fn isometry_check(
    integrand: &dyn Integrand,
    scale: &SpaceScale,
    space: Space,
    grid: &TimeGrid,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<IsometryReport> {
    require_paths(n_paths)?;
    if integrand.class() != IntegrandClass::SquareIntegrable {
        return Err(Error::RequiresSquareIntegrable);
    }
    let end = grid.index_of(t)?;
    let dim = integrand.dim();
    if dim != scale.dim() {
        return Err(Error::DimensionMismatch { expected: scale.dim(), got: dim });
    }
    let samples = harness::map_paths(n_paths, |p| {
        let path = BrownianPath::sample(grid, &RngSpec::new(seed, p, 0));
        let mut acc = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        let mut time_integral = 0.0;
        for k in 0..end {
            integrand.value_into(&AdaptedView::new(&path, k), k, &mut buf);
            time_integral += scale.norm_sq_slice(space, &buf) * grid.dt();
            let dw = path.increment(k);
            for d in 0..dim {
                acc[d] += buf[d] * dw;
            }
        }
        (scale.norm_sq_slice(space, &acc), time_integral)
    });
    let (lhs, rhs) = samples.into_iter().unzip();
    isometry_report(lhs, rhs, seed)
}

/// Cylindrical isometry check:
/// `E‖∫B d𝓦‖²_space = E∫‖B_s‖²_HS ds` with the Hilbert–Schmidt norm taken
/// over the operator's columns.
pub fn isometry_check_cylindrical(
    b: &dyn OperatorIntegrand,
    scale: &SpaceScale,
    space: Space,
    grid: &TimeGrid,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<IsometryReport> {
    require_paths(n_paths)?;
    if b.class() != IntegrandClass::SquareIntegrable {
        return Err(Error::RequiresSquareIntegrable);
    }
    let end = grid.index_of(t)?;
    let dim = b.dim();
    if dim != scale.dim() {
        return Err(Error::DimensionMismatch { expected: scale.dim(), got: dim });
    }
    let modes = b.modes();
    let samples = harness::map_paths(n_paths, |p| {
        let noise = CylindricalNoise::sample(grid, modes, seed, p).expect("modes >= 1");
        let mut acc = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        let mut time_integral = 0.0;
        for k in 0..end {
            for mode in 0..modes {
                b.column_into(&CylAdaptedView::new(&noise, k), mode, k, &mut buf);
                time_integral += scale.norm_sq_slice(space, &buf) * grid.dt();
                let dw = noise.increment(mode, k);
                for d in 0..dim {
                    acc[d] += buf[d] * dw;
                }
            }
        }
        (scale.norm_sq_slice(space, &acc), time_integral)
    });
    let (lhs, rhs) = samples.into_iter().unzip();
    isometry_report(lhs, rhs, seed)
}

/// Pathwise comparison of two algebraically identical finite sums.
#[derive(Debug, Clone, Copy)]
pub struct PathwiseReport {
    /// Largest absolute difference over all paths.
    pub max_abs_diff: f64,
    /// Largest absolute-term sum over all paths; the natural scale against
    /// which the difference is pure floating-point noise.
    pub term_scale: f64,
}

impl PathwiseReport {
    /// `max_abs_diff ≤ tol · max(1, term_scale)`.
    pub fn within(&self, tol: f64) -> bool {
        self.max_abs_diff <= tol * self.term_scale.max(1.0)
    }
}

/// Pathwise duality check: `⟨∫Ψ dW, φ⟩_space` against `∫⟨Ψ_s, φ⟩_space dW_s`
/// on identical noise. The two sides are the same finite sum reassociated.
pub fn duality_check(
    integrand: &dyn Integrand,
    phi: &Vector,
    scale: &SpaceScale,
    space: Space,
    grid: &TimeGrid,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PathwiseReport> {
    let end = grid.index_of(t)?;
    let dim = integrand.dim();
    if phi.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: phi.dim() });
    }
    let weights = scale.weights(space).to_vec();
    if weights.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: weights.len() });
    }
    let per_path = harness::map_paths(n_paths.max(1), |p| {
        let path = BrownianPath::sample(grid, &RngSpec::new(seed, p, 0));
        let mut acc = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        let mut rhs = 0.0;
        let mut scale_terms = 0.0;
        for k in 0..end {
            integrand.value_into(&AdaptedView::new(&path, k), k, &mut buf);
            let dw = path.increment(k);
            let mut pairing = 0.0;
            for d in 0..dim {
                pairing += weights[d] * buf[d] * phi[d];
                acc[d] += buf[d] * dw;
            }
            rhs += pairing * dw;
            scale_terms += (pairing * dw).abs();
        }
        let mut lhs = 0.0;
        for d in 0..dim {
            lhs += weights[d] * acc[d] * phi[d];
        }
        ((lhs - rhs).abs(), scale_terms)
    });
    let max_abs_diff = per_path.iter().map(|(d, _)| *d).fold(0.0, f64::max);
    let term_scale = per_path.iter().map(|(_, s)| *s).fold(0.0, f64::max);
    Ok(PathwiseReport { max_abs_diff, term_scale })
}

/// Cylindrical duality check: `⟨∫B d𝓦, φ⟩` against `Σ_i ∫⟨B_{e_i}, φ⟩ dW^i`.
pub fn duality_check_cylindrical(
    b: &dyn OperatorIntegrand,
    phi: &Vector,
    scale: &SpaceScale,
    space: Space,
    grid: &TimeGrid,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PathwiseReport> {
    let end = grid.index_of(t)?;
    let dim = b.dim();
    if phi.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: phi.dim() });
    }
    let weights = scale.weights(space).to_vec();
    if weights.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: weights.len() });
    }
    let modes = b.modes();
    let per_path = harness::map_paths(n_paths.max(1), |p| {
        let noise = CylindricalNoise::sample(grid, modes, seed, p).expect("modes >= 1");
        let mut acc = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        let mut rhs = 0.0;
        let mut scale_terms = 0.0;
        for k in 0..end {
            for mode in 0..modes {
                b.column_into(&CylAdaptedView::new(&noise, k), mode, k, &mut buf);
                let dw = noise.increment(mode, k);
                let mut pairing = 0.0;
                for d in 0..dim {
                    pairing += weights[d] * buf[d] * phi[d];
                    acc[d] += buf[d] * dw;
                }
                rhs += pairing * dw;
                scale_terms += (pairing * dw).abs();
            }
        }
        let mut lhs = 0.0;
        for d in 0..dim {
            lhs += weights[d] * acc[d] * phi[d];
        }
        ((lhs - rhs).abs(), scale_terms)
    });
    let max_abs_diff = per_path.iter().map(|(d, _)| *d).fold(0.0, f64::max);
    let term_scale = per_path.iter().map(|(_, s)| *s).fold(0.0, f64::max);
    Ok(PathwiseReport { max_abs_diff, term_scale })
}

/// Pathwise check that a bounded operator commutes with the integral:
/// `T(∫Ψ dW) = ∫TΨ dW` on identical noise.
pub fn operator_pushthrough_check(
    op: &LinearOp,
    integrand: &dyn Integrand,
    grid: &TimeGrid,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PathwiseReport> {
    let end = grid.index_of(t)?;
    let dim = integrand.dim();
    if op.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: op.dim() });
    }
    let per_path = harness::map_paths(n_paths.max(1), |p| {
        let path = BrownianPath::sample(grid, &RngSpec::new(seed, p, 0));
        let mut acc = vec![0.0; dim];
        let mut pushed_acc = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        let mut pushed = vec![0.0; dim];
        let mut scale_terms = 0.0;
        for k in 0..end {
            integrand.value_into(&AdaptedView::new(&path, k), k, &mut buf);
            op.apply_into(&buf, &mut pushed);
            let dw = path.increment(k);
            for d in 0..dim {
                acc[d] += buf[d] * dw;
                pushed_acc[d] += pushed[d] * dw;
                scale_terms += (pushed[d] * dw).abs();
            }
        }
        op.apply_into(&acc.clone(), &mut acc);
        let diff =
            acc.iter().zip(&pushed_acc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        (diff, scale_terms)
    });
    let max_abs_diff = per_path.iter().map(|(d, _)| *d).fold(0.0, f64::max);
    let term_scale = per_path.iter().map(|(_, s)| *s).fold(0.0, f64::max);
    Ok(PathwiseReport { max_abs_diff, term_scale })
}

/// Cylindrical analogue of [`operator_pushthrough_check`].
pub fn operator_pushthrough_check_cylindrical(
    op: &LinearOp,
    b: &dyn OperatorIntegrand,
    grid: &TimeGrid,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PathwiseReport> {
    let end = grid.index_of(t)?;
    let dim = b.dim();
    if op.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: op.dim() });
    }
    let modes = b.modes();
    let per_path = harness::map_paths(n_paths.max(1), |p| {
        let noise = CylindricalNoise::sample(grid, modes, seed, p).expect("modes >= 1");
        let mut acc = vec![0.0; dim];
        let mut pushed_acc = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        let mut pushed = vec![0.0; dim];
        let mut scale_terms = 0.0;
        for k in 0..end {
            for mode in 0..modes {
                b.column_into(&CylAdaptedView::new(&noise, k), mode, k, &mut buf);
                op.apply_into(&buf, &mut pushed);
                let dw = noise.increment(mode, k);
                for d in 0..dim {
                    acc[d] += buf[d] * dw;
                    pushed_acc[d] += pushed[d] * dw;
                    scale_terms += (pushed[d] * dw).abs();
                }
            }
        }
        op.apply_into(&acc.clone(), &mut acc);
        let diff =
            acc.iter().zip(&pushed_acc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        (diff, scale_terms)
    });
    let max_abs_diff = per_path.iter().map(|(d, _)| *d).fold(0.0, f64::max);
    let term_scale = per_path.iter().map(|(_, s)| *s).fold(0.0, f64::max);
    Ok(PathwiseReport { max_abs_diff, term_scale })
}
