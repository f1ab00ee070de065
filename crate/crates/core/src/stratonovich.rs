//! Stratonovich integrals on the grid, the Itô–Stratonovich drift correction
//! `½ ΣG_i²`, and the collapse of constant-multiplicative cylindrical noise
//! to a single scalar driver.
//!
//! A Stratonovich integrand must come with a semimartingale witness: the
//! finite-variation / martingale decomposition of its realized path. The
//! integral is then the left-point Itô sum plus half the partition-sum
//! cross-variation of the martingale part with the driver. Integrands without
//! a witness are rejected, so every `∘`-integral here is backed by an explicit
//! decomposition (solver trajectories provide one).

use crate::integrate::Frozen;
use crate::noise::{BrownianPath, CylindricalNoise};
use crate::spde::{Diffusion, DiffusionFamily, DriftOp, SolutionPath};
use crate::{Error, Result, Vector};

/// Finite-variation and martingale node paths whose sum reconstructs a
/// semimartingale on the grid.
#[derive(Debug, Clone)]
pub struct SemimartingaleWitness {
    pub finite_variation: Vec<Vector>,
    pub martingale: Vec<Vector>,
}

/// Node values of a semimartingale together with its decomposition witness.
#[derive(Debug, Clone)]
pub struct StratIntegrand {
    nodes: Vec<Vector>,
    witness: SemimartingaleWitness,
}

impl StratIntegrand {
    /// Requires one witness pair per node, with
    /// `‖nodes[k] − (fv[k] + mart[k])‖_∞ ≤ tol` everywhere.
    pub fn new(nodes: Vec<Vector>, witness: SemimartingaleWitness, tol: f64) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::Invalid("integrand needs at least one node".into()));
        }
        if witness.finite_variation.len() != n || witness.martingale.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: witness.finite_variation.len().min(witness.martingale.len()),
            });
        }
        for k in 0..n {
            let mut recon = witness.finite_variation[k].clone();
            recon.add_scaled(&witness.martingale[k], 1.0);
            let gap = recon
                .sub(&nodes[k])
                .coords()
                .iter()
                .map(|d| d.abs())
                .fold(0.0, f64::max);
            if gap > tol {
                return Err(Error::Invalid(format!(
                    "witness does not reconstruct the path at node {k}: gap {gap} > {tol}"
                )));
            }
        }
        Ok(StratIntegrand { nodes, witness })
    }

    /// The driver itself, `Ψ = W`: pure martingale witness.
    pub fn from_driver(path: &BrownianPath) -> Self {
        let nodes: Vec<Vector> =
            (0..=path.grid().steps()).map(|k| Vector::new(vec![path.value(k)])).collect();
        let witness = SemimartingaleWitness {
            finite_variation: vec![Vector::zeros(1); nodes.len()],
            martingale: nodes.clone(),
        };
        StratIntegrand { nodes, witness }
    }

    /// Deterministic constant: pure finite-variation witness.
    pub fn constant(a: Vector, n_nodes: usize) -> Self {
        StratIntegrand {
            nodes: vec![a.clone(); n_nodes],
            witness: SemimartingaleWitness {
                finite_variation: vec![a.clone(); n_nodes],
                martingale: vec![Vector::zeros(a.dim()); n_nodes],
            },
        }
    }

    /// Deterministic smooth path `t ↦ f(t)`: pure finite-variation witness.
    pub fn smooth(values: Vec<Vector>) -> Result<Self> {
        let dim = values
            .first()
            .map(Vector::dim)
            .ok_or(Error::Invalid("integrand needs at least one node".into()))?;
        Ok(StratIntegrand {
            witness: SemimartingaleWitness {
                finite_variation: values.clone(),
                martingale: vec![Vector::zeros(dim); values.len()],
            },
            nodes: values,
        })
    }

    pub fn nodes(&self) -> &[Vector] {
        &self.nodes
    }

    pub fn witness(&self) -> &SemimartingaleWitness {
        &self.witness
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].dim()
    }

    /// Left-point Itô view of the node values.
    pub fn as_ito_integrand(&self) -> Result<Frozen> {
        Frozen::new(self.nodes.clone())
    }

    /// Linear image: applies `op` to every node and both witness parts; a
    /// bounded operator maps a semimartingale decomposition to one of its
    /// image.
    pub fn map_linear(&self, op: &crate::spaces::LinearOp) -> Result<StratIntegrand> {
        let map = |xs: &[Vector]| -> Result<Vec<Vector>> { xs.iter().map(|x| op.apply(x)).collect() };
        Ok(StratIntegrand {
            nodes: map(&self.nodes)?,
            witness: SemimartingaleWitness {
                finite_variation: map(&self.witness.finite_variation)?,
                martingale: map(&self.witness.martingale)?,
            },
        })
    }
}

/// Witness for a solver trajectory: the finite-variation part accumulates the
/// drift increments, the martingale part the diffusion increments; their sum
/// reconstructs the states exactly (same arithmetic as the scheme, possibly
/// reassociated).
pub fn witness_from_solution(
    sol: &SolutionPath,
    a: &DriftOp,
    g: &DiffusionFamily,
    noise: &CylindricalNoise,
) -> Result<StratIntegrand> {
    if noise.grid() != sol.grid() {
        return Err(Error::InvalidGrid("solution and noise grids differ".into()));
    }
    let grid = sol.grid();
    let dim = sol.state(0).dim();
    let steps = grid.steps();
    let mut fv = Vec::with_capacity(steps + 1);
    let mut mart = Vec::with_capacity(steps + 1);
    fv.push(sol.state(0).clone());
    mart.push(Vector::zeros(dim));
    let mut fv_acc = sol.state(0).clone();
    let mut mart_acc = Vector::zeros(dim);
    let mut buf = vec![0.0; dim];
    for k in 0..steps {
        let state = sol.state(k);
        fv_acc.add_scaled(&a.apply(grid.time(k), state), grid.dt());
        for i in 0..g.modes() {
            g.apply_into(i, state.coords(), &mut buf);
            mart_acc.add_scaled_slice(&buf, noise.increment(i, k));
        }
        fv.push(fv_acc.clone());
        mart.push(mart_acc.clone());
    }
    StratIntegrand::new(
        sol.states().to_vec(),
        SemimartingaleWitness { finite_variation: fv, martingale: mart },
        1e-9 * (1.0 + sol.states().iter().map(|s| s.coords()[0].abs()).fold(0.0, f64::max)),
    )
}

/// Partition-sum cross-variation of the integrand's martingale part with the
/// driver over the full grid up to `t`: `Σ_k (M_{k+1} − M_k)·ΔW_k`.
pub fn cross_variation_with_driver(
    si: &StratIntegrand,
    path: &BrownianPath,
    t: f64,
) -> Result<Vector> {
    let end = path.grid().index_of(t)?;
    if si.nodes.len() < end + 1 {
        return Err(Error::DimensionMismatch { expected: end + 1, got: si.nodes.len() });
    }
    let mut acc = Vector::zeros(si.dim());
    let mart = &si.witness.martingale;
    for k in 0..end {
        let dm = mart[k + 1].sub(&mart[k]);
        acc.add_scaled(&dm, path.increment(k));
    }
    Ok(acc)
}

/// Stratonovich integral against a scalar driver:
/// left-point Itô sum plus half the cross-variation,
/// `Σ_k Ψ_k·ΔW_k + ½ Σ_k ΔM_k·ΔW_k`.
pub fn integrate_stratonovich_1d(
    si: &StratIntegrand,
    path: &BrownianPath,
    t: f64,
) -> Result<Vector> {
    let end = path.grid().index_of(t)?;
    if si.nodes.len() < end + 1 {
        return Err(Error::DimensionMismatch { expected: end + 1, got: si.nodes.len() });
    }
    let mut acc = Vector::zeros(si.dim());
    for k in 0..end {
        acc.add_scaled(&si.nodes[k], path.increment(k));
    }
    acc.add_scaled(&cross_variation_with_driver(si, path, t)?, 0.5);
    Ok(acc)
}

/// Cylindrical Stratonovich integral: `Σ_i (∫B_{e_i} dW^i + ½[B_{e_i}, W^i])`
/// with one witnessed column per mode.
pub fn strat_cylindrical(
    columns: &[StratIntegrand],
    noise: &CylindricalNoise,
    t: f64,
) -> Result<Vector> {
    if columns.len() != noise.modes() {
        return Err(Error::ModeMismatch { expected: noise.modes(), got: columns.len() });
    }
    let dim = columns[0].dim();
    let mut acc = Vector::zeros(dim);
    for (i, col) in columns.iter().enumerate() {
        if col.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: col.dim() });
        }
        let path = noise.component_path(i);
        acc.add_scaled(&integrate_stratonovich_1d(col, &path, t)?, 1.0);
    }
    Ok(acc)
}

/// Midpoint Riemann sum evaluated on a half-step refinement: the integrand's
/// refined nodes supply the value at each coarse-block midpoint,
/// `Σ_k Ψ(t_k + dt/2)·(W_{t_{k+1}} − W_{t_k})`. The refined grid must carry
/// exactly twice the coarse steps.
pub fn midpoint_riemann_refined(
    fine_nodes: &[Vector],
    fine_path: &BrownianPath,
    t: f64,
) -> Result<Vector> {
    let fine_steps = fine_path.grid().steps();
    if fine_steps % 2 != 0 {
        return Err(Error::InvalidGrid("refined grid needs an even step count".into()));
    }
    if fine_nodes.len() < fine_steps + 1 {
        return Err(Error::DimensionMismatch { expected: fine_steps + 1, got: fine_nodes.len() });
    }
    let fine_end = fine_path.grid().index_of(t)?;
    if fine_end % 2 != 0 {
        return Err(Error::OffGrid { t, dt: 2.0 * fine_path.grid().dt() });
    }
    let mut acc = Vector::zeros(fine_nodes[0].dim());
    for k in 0..fine_end / 2 {
        let dw = fine_path.value(2 * k + 2) - fine_path.value(2 * k);
        acc.add_scaled(&fine_nodes[2 * k + 1], dw);
    }
    Ok(acc)
}

/// Stratonovich-to-Itô drift augment `½ Σ_i G_i(G_i φ)` for linear modes;
/// state-independent (constant) modes have zero coefficient derivative and
/// contribute nothing.
pub fn ito_correction(g: &DiffusionFamily, phi: &Vector) -> Result<Vector> {
    if phi.dim() != g.dim() {
        return Err(Error::DimensionMismatch { expected: g.dim(), got: phi.dim() });
    }
    let mut acc = Vector::zeros(g.dim());
    for i in 0..g.modes() {
        if let Diffusion::Linear(op) = g.entry(i) {
            acc.add_scaled(&op.apply(&op.apply(phi)?)?, 0.5);
        }
    }
    Ok(acc)
}

/// Scalar scale `σ = (Σ λ_i²)^{1/2}` of the collapsed driver
/// `Σ λ_i W^i = σ·W̃`.
pub fn collapse_constant_noise(lambdas: &[f64]) -> f64 {
    lambdas.iter().map(|l| l * l).sum::<f64>().sqrt()
}

/// Node values of the collapsed scalar driver `Σ_i λ_i W^i_{t_k}`.
pub fn collapsed_driver(lambdas: &[f64], noise: &CylindricalNoise) -> Result<Vec<f64>> {
    if lambdas.len() != noise.modes() {
        return Err(Error::ModeMismatch { expected: noise.modes(), got: lambdas.len() });
    }
    let steps = noise.grid().steps();
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let mut acc = 0.0;
        for (i, l) in lambdas.iter().enumerate() {
            acc += l * noise.value(i, k);
        }
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{map_paths, mean};
    use crate::integrate::integrate_ito;
    use crate::noise::{RngSpec, TimeGrid};
    use crate::spaces::LinearOp;
    use crate::variation::{scalar_quadratic_variation, Partition};
    use crate::{Space, SpaceScale};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn v(coords: &[f64]) -> Vector {
        Vector::new(coords.to_vec())
    }

    #[test]
    fn witness_must_reconstruct_the_path() {
        let nodes = vec![v(&[1.0]), v(&[2.0])];
        let bad = SemimartingaleWitness {
            finite_variation: vec![v(&[1.0]), v(&[1.0])],
            martingale: vec![v(&[0.0]), v(&[0.5])],
        };
        assert!(StratIntegrand::new(nodes.clone(), bad, 1e-9).is_err());
        let good = SemimartingaleWitness {
            finite_variation: vec![v(&[1.0]), v(&[1.5])],
            martingale: vec![v(&[0.0]), v(&[0.5])],
        };
        assert!(StratIntegrand::new(nodes, good, 1e-9).is_ok());
    }

    #[test]
    fn smooth_integrand_has_equal_ito_and_stratonovich_integrals() {
        let grid = TimeGrid::new(1e-2, 100).unwrap();
        let path = BrownianPath::sample(&grid, &RngSpec::new(1, 0, 0));
        let values: Vec<Vector> = (0..=100).map(|k| v(&[grid.time(k).sin()])).collect();
        let si = StratIntegrand::smooth(values).unwrap();
        let strat = integrate_stratonovich_1d(&si, &path, 1.0).unwrap();
        let ito = integrate_ito(&si.as_ito_integrand().unwrap(), &path, 1.0).unwrap();
        assert!(strat.bits_eq(&ito));
    }

    #[test]
    fn driver_against_itself_gives_half_w_squared() {
        // ∫W ∘ dW = W_t²/2 pathwise on the grid (the ½ΣΔW² term completes the
        // square); the Itô integral is (W_t² − ΣΔW²)/2 → (W_t² − t)/2.
        let grid = TimeGrid::new(1e-3, 1000).unwrap();
        let path = BrownianPath::sample(&grid, &RngSpec::new(3, 0, 0));
        let si = StratIntegrand::from_driver(&path);
        let strat = integrate_stratonovich_1d(&si, &path, 1.0).unwrap()[0];
        let w1 = path.value(1000);
        assert_relative_eq!(strat, w1 * w1 / 2.0, max_relative = 1e-10);
        // The left sum is (W² − ΣΔW²)/2 exactly; ΣΔW² concentrates at t with
        // standard deviation √(2·dt·t).
        let ito = integrate_ito(&si.as_ito_integrand().unwrap(), &path, 1.0).unwrap()[0];
        let dw_sq: f64 = (0..1000).map(|k| path.increment(k) * path.increment(k)).sum();
        assert_relative_eq!(ito, (w1 * w1 - dw_sq) / 2.0, max_relative = 1e-10);
        assert_abs_diff_eq!(ito, (w1 * w1 - 1.0) / 2.0, epsilon = 5.0 * (2e-3f64).sqrt() / 2.0);
    }

    #[test]
    fn linear_stratonovich_sde_mean_growth() {
        // dΨ = λΨ ∘ dW, λ = 0.5: E[Ψ_1] = e^{λ²/2} = e^{0.125}.
        let grid = TimeGrid::new(1e-3, 1000).unwrap();
        let a = DriftOp::zero(1);
        let g = DiffusionFamily::diagonal(1, &[0.5]);
        let psi0 = v(&[1.0]);
        let n = 20_000;
        let finals = map_paths(n, |p| {
            let noise = CylindricalNoise::sample(&grid, 1, 5, p).unwrap();
            crate::spde::solve_strat(&a, &g, &psi0, &noise).unwrap().terminal()[0]
        });
        assert_relative_eq!(mean(&finals), (0.125f64).exp(), max_relative = 0.05);
    }

    #[test]
    fn stratonovich_integral_recovers_the_sde_increment() {
        // For dΨ = λΨ ∘ dW solved by the converted scheme,
        // λ·∫Ψ ∘ dW reproduces Ψ_t − Ψ_0 up to grid accuracy.
        let grid = TimeGrid::new(1e-3, 1000).unwrap();
        let lambda = 0.5;
        let a = DriftOp::zero(1);
        let g = DiffusionFamily::diagonal(1, &[lambda]);
        let psi0 = v(&[1.0]);
        let noise = CylindricalNoise::sample(&grid, 1, 7, 4).unwrap();
        let sol = crate::spde::solve_strat(&a, &g, &psi0, &noise).unwrap();
        let si = witness_from_solution(&sol, &a.with_correction(&g), &g, &noise).unwrap();
        let path = noise.component_path(0);
        let strat = integrate_stratonovich_1d(&si, &path, 1.0).unwrap()[0];
        let increment = sol.terminal()[0] - psi0[0];
        assert_relative_eq!(lambda * strat, increment, max_relative = 0.05);
    }

    #[test]
    fn cylindrical_single_mode_reduces_to_one_dimensional() {
        let grid = TimeGrid::new(1e-2, 100).unwrap();
        let noise = CylindricalNoise::sample(&grid, 1, 9, 0).unwrap();
        let path = noise.component_path(0);
        let si = StratIntegrand::from_driver(&path);
        let a = strat_cylindrical(std::slice::from_ref(&si), &noise, 1.0).unwrap();
        let b = integrate_stratonovich_1d(&si, &path, 1.0).unwrap();
        assert!(a.bits_eq(&b));
    }

    #[test]
    fn constant_columns_have_no_correction() {
        let grid = TimeGrid::new(1e-2, 100).unwrap();
        let noise = CylindricalNoise::sample(&grid, 2, 11, 0).unwrap();
        let cols: Vec<StratIntegrand> = vec![
            StratIntegrand::constant(v(&[1.0, 0.0]), 101),
            StratIntegrand::constant(v(&[0.0, 2.0]), 101),
        ];
        let strat = strat_cylindrical(&cols, &noise, 1.0).unwrap();
        let ito = v(&[noise.value(0, 100), 2.0 * noise.value(1, 100)]);
        for d in 0..2 {
            assert_abs_diff_eq!(strat[d], ito[d], epsilon = 1e-12);
        }
    }

    #[test]
    fn multiplicative_columns_reproduce_the_conversion_correction() {
        // B_{e_i} = λ_i Ψ with Ψ solving the diagonal Stratonovich SPDE: the
        // Stratonovich-minus-Itô gap is ½Σλ_i²·∫Ψ ds.
        let grid = TimeGrid::new(1e-3, 1000).unwrap();
        let lambdas = [0.3, 0.4];
        let a = DriftOp::zero(1);
        let g = DiffusionFamily::diagonal(1, &lambdas);
        let psi0 = v(&[1.0]);
        let n = 3000;
        let gaps = map_paths(n, |p| {
            let noise = CylindricalNoise::sample(&grid, 2, 13, p).unwrap();
            let sol = crate::spde::solve_strat(&a, &g, &psi0, &noise).unwrap();
            let si = witness_from_solution(&sol, &a.with_correction(&g), &g, &noise).unwrap();
            let cols: Vec<StratIntegrand> = lambdas
                .iter()
                .map(|&l| si.map_linear(&LinearOp::scaled_identity(1, l)).unwrap())
                .collect();
            let strat = strat_cylindrical(&cols, &noise, 1.0).unwrap()[0];
            let mut ito = 0.0;
            for (i, col) in cols.iter().enumerate() {
                ito += integrate_ito(
                    &col.as_ito_integrand().unwrap(),
                    &noise.component_path(i),
                    1.0,
                )
                .unwrap()[0];
            }
            let time_integral: f64 =
                (0..1000).map(|k| sol.state(k)[0] * grid.dt()).sum();
            (strat - ito) - 0.5 * 0.25 * time_integral
        });
        let s = crate::harness::summarize(&gaps, 8).unwrap();
        // Partition-sum cross-variation vs the time integral: grid-level bias
        // only, so the mean gap sits near zero at dt = 1e-3.
        assert!(s.mean.abs() < 5e-3, "mean gap {}", s.mean);
    }

    #[test]
    fn correction_for_diagonal_family_is_half_sum_of_squares() {
        let g = DiffusionFamily::diagonal(3, &[0.3, 0.4]);
        let phi = v(&[2.0, -1.0, 0.5]);
        let corr = ito_correction(&g, &phi).unwrap();
        let factor = 0.5 * (0.09 + 0.16);
        for d in 0..3 {
            assert_relative_eq!(corr[d], factor * phi[d], max_relative = 1e-14);
        }
        // Linearity in φ.
        let corr2 = ito_correction(&g, &phi.scaled(-3.5)).unwrap();
        for d in 0..3 {
            assert_relative_eq!(corr2[d], -3.5 * corr[d], max_relative = 1e-14);
        }
        // Zero at the origin.
        let zero = ito_correction(&g, &Vector::zeros(3)).unwrap();
        assert_eq!(zero.coords(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn correction_of_nilpotent_shift_vanishes() {
        let shift = LinearOp::upper_shift(2);
        let g = DiffusionFamily::new(
            vec![crate::spde::Diffusion::Linear(shift)],
            vec![1.0],
            &SpaceScale::unit(2),
            15,
        )
        .unwrap();
        let corr = ito_correction(&g, &v(&[3.0, 4.0])).unwrap();
        assert_eq!(corr.coords(), &[0.0, 0.0]);
    }

    #[test]
    fn collapse_scale_values() {
        assert_eq!(collapse_constant_noise(&[1.0]), 1.0);
        assert_relative_eq!(collapse_constant_noise(&[0.6, 0.8]), 1.0, max_relative = 1e-15);
        // λ_i = 2^{-i}: Σ4^{-i} → 1/3.
        let lambdas: Vec<f64> = (1..=30).map(|i| 0.5f64.powi(i)).collect();
        assert_relative_eq!(
            collapse_constant_noise(&lambdas),
            (1.0f64 / 3.0).sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn collapsed_driver_quadratic_variation_is_sigma_squared_t() {
        let grid = TimeGrid::new(1e-3, 1000).unwrap();
        let lambdas = [0.6, 0.8];
        let part = Partition::with_stride(1000, 1).unwrap();
        let n = 2000;
        let qvs = map_paths(n, |p| {
            let noise = CylindricalNoise::sample(&grid, 2, 17, p).unwrap();
            let driver = collapsed_driver(&lambdas, &noise).unwrap();
            scalar_quadratic_variation(&driver, &part).unwrap()
        });
        assert_relative_eq!(mean(&qvs), 1.0, max_relative = 0.05);
    }

    #[test]
    fn collapse_identity_is_pathwise_on_shared_noise() {
        // Σλ_i ∫Ψ dW^i = σ ∫Ψ d(Σλ_iW^i/σ) term by term: pure reassociation.
        let grid = TimeGrid::new(1e-2, 100).unwrap();
        let lambdas = [0.3, 0.4];
        let sigma = collapse_constant_noise(&lambdas);
        let a = DriftOp::zero(1);
        let g = DiffusionFamily::diagonal(1, &lambdas);
        let psi0 = v(&[1.0]);
        for p in 0..50 {
            let noise = CylindricalNoise::sample(&grid, 2, 19, p).unwrap();
            let sol = crate::spde::solve_em(&a, &g, &psi0, &noise).unwrap();
            let states = Frozen::new(sol.states()[..100].to_vec()).unwrap();
            let lhs = crate::integrate::integrate_cylindrical(
                &crate::integrate::FnOperator::new(
                    1,
                    2,
                    crate::integrate::IntegrandClass::SquareIntegrable,
                    |_view, mode, k, out: &mut [f64]| {
                        out[0] = lambdas[mode] * sol.state(k)[0];
                    },
                ),
                &noise,
                1.0,
            )
            .unwrap()[0];
            let tilde_nodes = collapsed_driver(&lambdas, &noise).unwrap();
            let tilde: Vec<f64> = tilde_nodes.iter().map(|w| w / sigma).collect();
            let tilde_path = BrownianPath::from_increments(
                noise.grid(),
                &(0..100).map(|k| tilde[k + 1] - tilde[k]).collect::<Vec<_>>(),
            )
            .unwrap();
            let rhs = sigma * integrate_ito(&states, &tilde_path, 1.0).unwrap()[0];
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
        }
    }

    #[test]
    fn midpoint_rule_approaches_the_corrected_integral() {
        // ∫W ∘ dW via midpoint evaluation on a refined path against the
        // (Itô + ½ cross-variation) form on the coarse grid: the MC-L² gap
        // shrinks under dt-halving.
        let n = 2000;
        let mut gaps = Vec::new();
        for &coarse_steps in &[50usize, 100, 200] {
            let fine = TimeGrid::new(0.5 / coarse_steps as f64, 2 * coarse_steps).unwrap();
            let sq = map_paths(n, |p| {
                let fine_path = BrownianPath::sample(&fine, &RngSpec::new(21, p, 0));
                let fine_nodes: Vec<Vector> =
                    (0..=fine.steps()).map(|k| v(&[fine_path.value(k)])).collect();
                let mid = midpoint_riemann_refined(&fine_nodes, &fine_path, 1.0).unwrap()[0];
                // Coarse path from every second node of the fine one.
                let coarse = TimeGrid::new(1.0 / coarse_steps as f64, coarse_steps).unwrap();
                let incr: Vec<f64> = (0..coarse_steps)
                    .map(|k| fine_path.value(2 * k + 2) - fine_path.value(2 * k))
                    .collect();
                let coarse_path = BrownianPath::from_increments(&coarse, &incr).unwrap();
                let si = StratIntegrand::from_driver(&coarse_path);
                let strat = integrate_stratonovich_1d(&si, &coarse_path, 1.0).unwrap()[0];
                (mid - strat) * (mid - strat)
            });
            gaps.push(mean(&sq));
        }
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "gaps {gaps:?}");
    }
}
