//! Brownian paths and truncated cylindrical Brownian motion on a uniform time
//! grid, with reproducible per-path randomness.
//!
//! Randomness is organised as counter-style streams keyed by
//! `(master_seed, path, component)`: the key is hashed into a ChaCha stream,
//! so any worker can regenerate any path's noise independently of scheduling.
//! Identical keys give bit-identical draws.

use crate::harness::pairwise_sum;
use crate::{Error, Result, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::{Read, Write};

/// Uniform grid `t_k = k·dt`, `k = 0..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    steps: usize,
}

/// Relative slack for matching a time to a grid node.
const GRID_TOL: f64 = 1e-9;

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("steps must be at least 1".into()));
        }
        Ok(TimeGrid { dt, steps })
    }

    /// Grid covering `[0, horizon]`; `horizon` must be a whole number of steps.
    pub fn from_horizon(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        let steps = (horizon / dt).round();
        if steps < 1.0 || ((steps * dt) - horizon).abs() > GRID_TOL * horizon.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon {horizon} is not a whole number of dt = {dt} steps"
            )));
        }
        TimeGrid::new(dt, steps as usize)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Node index of `t`; errors if `t` is off the grid (no interpolation).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        let off = Error::OffGrid { t, dt: self.dt };
        if !(t.is_finite() && k >= 0.0) {
            return Err(off);
        }
        if (k * self.dt - t).abs() > GRID_TOL * t.abs().max(1.0) {
            return Err(off);
        }
        let k = k as usize;
        if k > self.steps {
            return Err(off);
        }
        Ok(k)
    }
}

/// Stream key for one scalar noise source: `(master_seed, path, component)`.
///
/// Distinct keys give statistically independent streams; the same key always
/// reproduces the same draws regardless of worker scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSpec {
    pub master_seed: u64,
    pub path: u64,
    pub component: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSpec {
    pub fn new(master_seed: u64, path: u64, component: u64) -> Self {
        RngSpec { master_seed, path, component }
    }

    fn key(&self) -> u64 {
        let z = splitmix64(self.master_seed ^ splitmix64(self.path.wrapping_add(0x0DD0)));
        splitmix64(z ^ splitmix64(self.component.wrapping_add(0xC01D)))
    }

    pub fn stream(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key())
    }
}

/// One scalar Brownian path on a grid: node values `w[k] = W_{t_k}`, `w[0] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: TimeGrid,
    w: Vec<f64>,
}

impl BrownianPath {
    /// Draws `steps` independent `N(0, dt)` increments from the stream and
    /// accumulates them.
    pub fn sample(grid: &TimeGrid, spec: &RngSpec) -> BrownianPath {
        let mut rng = spec.stream();
        let sqrt_dt = grid.dt().sqrt();
        let mut w = Vec::with_capacity(grid.steps() + 1);
        w.push(0.0);
        let mut acc = 0.0;
        for _ in 0..grid.steps() {
            let z: f64 = rng.sample(StandardNormal);
            acc += sqrt_dt * z;
            w.push(acc);
        }
        BrownianPath { grid: grid.clone(), w }
    }

    pub fn from_increments(grid: &TimeGrid, increments: &[f64]) -> Result<BrownianPath> {
        if increments.len() != grid.steps() {
            return Err(Error::DimensionMismatch {
                expected: grid.steps(),
                got: increments.len(),
            });
        }
        let mut w = Vec::with_capacity(grid.steps() + 1);
        w.push(0.0);
        let mut acc = 0.0;
        for d in increments {
            acc += d;
            w.push(acc);
        }
        Ok(BrownianPath { grid: grid.clone(), w })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `W_{t_k}`.
    pub fn value(&self, k: usize) -> f64 {
        self.w[k]
    }

    /// `W_{t_{k+1}} − W_{t_k}`.
    pub fn increment(&self, k: usize) -> f64 {
        self.w[k + 1] - self.w[k]
    }

    pub fn at_time(&self, t: f64) -> Result<f64> {
        Ok(self.w[self.grid.index_of(t)?])
    }
}

/// Truncated cylindrical Brownian motion: `K` independent scalar Brownian
/// paths on a shared grid, component `i` standing in for `W^i` along the
/// basis vector `e_i`.
#[derive(Debug, Clone)]
pub struct CylindricalNoise {
    grid: TimeGrid,
    k: usize,
    /// Row-major `(component, step)` increments `ΔW^i_k`.
    increments: Vec<f64>,
    /// Row-major `(component, node)` cumulative values, `steps + 1` per row.
    cumulative: Vec<f64>,
    provenance: Option<(u64, u64)>,
}

impl CylindricalNoise {
    /// Samples `k ≥ 1` components; component `i` uses the stream
    /// `(master_seed, path, i)`.
    pub fn sample(grid: &TimeGrid, k: usize, master_seed: u64, path: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Invalid("truncation level K must be at least 1".into()));
        }
        let steps = grid.steps();
        let sqrt_dt = grid.dt().sqrt();
        let mut increments = Vec::with_capacity(k * steps);
        let mut cumulative = Vec::with_capacity(k * (steps + 1));
        for comp in 0..k {
            let mut rng = RngSpec::new(master_seed, path, comp as u64).stream();
            let mut acc = 0.0;
            cumulative.push(0.0);
            for _ in 0..steps {
                let z: f64 = rng.sample(StandardNormal);
                let d = sqrt_dt * z;
                increments.push(d);
                acc += d;
                cumulative.push(acc);
            }
        }
        Ok(CylindricalNoise {
            grid: grid.clone(),
            k,
            increments,
            cumulative,
            provenance: Some((master_seed, path)),
        })
    }

    pub fn from_increments(grid: &TimeGrid, k: usize, increments: Vec<f64>) -> Result<Self> {
        let steps = grid.steps();
        if increments.len() != k * steps {
            return Err(Error::DimensionMismatch {
                expected: k * steps,
                got: increments.len(),
            });
        }
        let mut cumulative = Vec::with_capacity(k * (steps + 1));
        for comp in 0..k {
            let mut acc = 0.0;
            cumulative.push(0.0);
            for s in 0..steps {
                acc += increments[comp * steps + s];
                cumulative.push(acc);
            }
        }
        Ok(CylindricalNoise { grid: grid.clone(), k, increments, cumulative, provenance: None })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Truncation level `K`.
    pub fn modes(&self) -> usize {
        self.k
    }

    /// `(master_seed, path)` of the streams that produced this noise, when
    /// sampled rather than loaded.
    pub fn provenance(&self) -> Option<(u64, u64)> {
        self.provenance
    }

    /// `ΔW^comp_step`.
    pub fn increment(&self, comp: usize, step: usize) -> f64 {
        self.increments[comp * self.grid.steps() + step]
    }

    /// `W^comp_{t_k}`.
    pub fn value(&self, comp: usize, k: usize) -> f64 {
        self.cumulative[comp * (self.grid.steps() + 1) + k]
    }

    pub fn component_path(&self, comp: usize) -> BrownianPath {
        let n = self.grid.steps() + 1;
        BrownianPath {
            grid: self.grid.clone(),
            w: self.cumulative[comp * n..(comp + 1) * n].to_vec(),
        }
    }

    /// Binary dump: 24-byte header (`b"CYLN"`, K as u32, steps as u64, dt as
    /// f64, little-endian) followed by the `K × steps` increments as
    /// little-endian f64, row-major `(component, step)`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(b"CYLN")?;
        out.write_all(&(self.k as u32).to_le_bytes())?;
        out.write_all(&(self.grid.steps() as u64).to_le_bytes())?;
        out.write_all(&self.grid.dt().to_le_bytes())?;
        for d in &self.increments {
            out.write_all(&d.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("increment dump: {m}"));
        let mut header = [0u8; 24];
        input.read_exact(&mut header).map_err(|e| bad(&e.to_string()))?;
        if &header[0..4] != b"CYLN" {
            return Err(bad("missing CYLN magic"));
        }
        let k = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let steps = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let dt = f64::from_le_bytes(header[16..24].try_into().unwrap());
        let grid = TimeGrid::new(dt, steps)?;
        let mut increments = vec![0.0f64; k * steps];
        let mut buf = [0u8; 8];
        for d in &mut increments {
            input.read_exact(&mut buf).map_err(|e| bad(&e.to_string()))?;
            *d = f64::from_le_bytes(buf);
        }
        CylindricalNoise::from_increments(&grid, k, increments)
    }
}

/// Eigenvalues `λ_i ≥ 0` of a diagonal covariance operator on the first `K`
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct QSpec {
    eigenvalues: Vec<f64>,
}

impl QSpec {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Invalid("eigenvalues must be finite and nonnegative".into()));
        }
        Ok(QSpec { eigenvalues })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalue(&self, i: usize) -> f64 {
        self.eigenvalues[i]
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// `⟨Qg, h⟩ = Σ_i λ_i g_i h_i` in the coordinate basis (coordinates past
    /// the truncation carry eigenvalue 0).
    pub fn pair(&self, g: &Vector, h: &Vector) -> Result<f64> {
        if g.dim() != h.dim() {
            return Err(Error::DimensionMismatch { expected: g.dim(), got: h.dim() });
        }
        if self.len() > g.dim() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: g.dim() });
        }
        let mut acc = 0.0;
        for i in 0..self.len() {
            acc += self.eigenvalues[i] * g[i] * h[i];
        }
        Ok(acc)
    }
}

/// Value of the trace-class representation `Σ_{i<K} sqrt(λ_i)·e_i·W^i_t` as a
/// coordinate vector of dimension `dim`. `t` must lie on the grid.
pub fn regular_representation(
    q: &QSpec,
    noise: &CylindricalNoise,
    t: f64,
    dim: usize,
) -> Result<Vector> {
    if q.len() != noise.modes() {
        return Err(Error::ModeMismatch { expected: noise.modes(), got: q.len() });
    }
    if dim < noise.modes() {
        return Err(Error::DimensionMismatch { expected: noise.modes(), got: dim });
    }
    let k = noise.grid().index_of(t)?;
    let mut out = Vector::zeros(dim);
    for i in 0..noise.modes() {
        out[i] = q.eigenvalue(i).sqrt() * noise.value(i, k);
    }
    Ok(out)
}

/// Monte Carlo estimate of `E[X_g(t)·X_h(s)]` for the truncated Q-cylindrical
/// process, where `X_g(t) = Σ_i sqrt(λ_i) g_i W^i_t`. Converges to
/// `⟨Qg, h⟩·min(t, s)` as `n_paths → ∞`.
pub fn covariance_estimate(
    q: &QSpec,
    grid: &TimeGrid,
    n_paths: usize,
    g: &Vector,
    h: &Vector,
    t: f64,
    s: f64,
    master_seed: u64,
) -> Result<f64> {
    if n_paths == 0 {
        return Err(Error::TooFewPaths { got: 0, min: 1 });
    }
    if g.dim() != h.dim() {
        return Err(Error::DimensionMismatch { expected: g.dim(), got: h.dim() });
    }
    if q.len() > g.dim() {
        return Err(Error::DimensionMismatch { expected: q.len(), got: g.dim() });
    }
    let kt = grid.index_of(t)?;
    let ks = grid.index_of(s)?;
    let products = crate::harness::map_paths(n_paths, |path| {
        let noise = CylindricalNoise::sample(grid, q.len().max(1), master_seed, path)
            .expect("K >= 1 by construction");
        let mut xg = 0.0;
        let mut xh = 0.0;
        for i in 0..q.len() {
            let root = q.eigenvalue(i).sqrt();
            xg += root * g[i] * noise.value(i, kt);
            xh += root * h[i] * noise.value(i, ks);
        }
        xg * xh
    });
    Ok(pairwise_sum(&products) / n_paths as f64)
}
