//! Finite-dimensional emulation of the embedded Hilbert space quartet
//! `V ↪ H ↪ U ↪ X`.
//!
//! All four spaces share one coordinate basis of dimension `dim`; each carries
//! its own positive weight sequence, so the inner products
//!
//! ```text
//! ⟨x, y⟩_S = Σ_i w_S[i] · x_i · y_i
//! ```
//!
//! differ while staying comparable. Weight monotonicity `w_V ≥ w_H ≥ w_U ≥ w_X`
//! is enforced at construction, which makes every embedding constant along the
//! chain at most 1 and keeps the hot loops free of per-call checks.

use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// The four spaces of the chain, finest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    V,
    H,
    U,
    X,
}

impl Space {
    /// Chain order, finest to coarsest.
    pub const CHAIN: [Space; 4] = [Space::V, Space::H, Space::U, Space::X];

    fn index(self) -> usize {
        match self {
            Space::V => 0,
            Space::H => 1,
            Space::U => 2,
            Space::X => 3,
        }
    }
}

/// Coordinate vector in the shared basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    coords: Vec<f64>,
}

impl Vector {
    pub fn new(coords: Vec<f64>) -> Self {
        Vector { coords }
    }

    pub fn zeros(dim: usize) -> Self {
        Vector { coords: vec![0.0; dim] }
    }

    /// The `i`-th coordinate basis vector.
    pub fn basis(dim: usize, i: usize) -> Self {
        assert!(i < dim, "basis index {i} out of range for dim {dim}");
        let mut coords = vec![0.0; dim];
        coords[i] = 1.0;
        Vector { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }

    pub fn scaled(&self, alpha: f64) -> Vector {
        Vector { coords: self.coords.iter().map(|c| alpha * c).collect() }
    }

    /// `self += alpha · other`.
    pub fn add_scaled(&mut self, other: &Vector, alpha: f64) {
        debug_assert_eq!(self.dim(), other.dim());
        for (s, o) in self.coords.iter_mut().zip(&other.coords) {
            *s += alpha * o;
        }
    }

    /// `self += alpha · xs` for a raw coordinate slice.
    pub fn add_scaled_slice(&mut self, xs: &[f64], alpha: f64) {
        debug_assert_eq!(self.dim(), xs.len());
        for (s, x) in self.coords.iter_mut().zip(xs) {
            *s += alpha * x;
        }
    }

    pub fn add(&self, other: &Vector) -> Vector {
        let mut out = self.clone();
        out.add_scaled(other, 1.0);
        out
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        let mut out = self.clone();
        out.add_scaled(other, -1.0);
        out
    }

    /// Standard-normal coordinates, for randomized probing.
    pub fn random<R: Rng>(dim: usize, rng: &mut R) -> Vector {
        Vector { coords: (0..dim).map(|_| rng.sample(StandardNormal)).collect() }
    }

    /// Componentwise bit equality; the strict form of `==` used by
    /// reproducibility checks.
    pub fn bits_eq(&self, other: &Vector) -> bool {
        self.dim() == other.dim()
            && self
                .coords
                .iter()
                .zip(&other.coords)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coords[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.coords[i]
    }
}

/// Per-coordinate weight sequences defining the norms of the four spaces.
#[derive(Debug, Clone)]
pub struct SpaceScale {
    dim: usize,
    weights: [Vec<f64>; 4],
}

impl SpaceScale {
    /// Requires `dim ≥ 1`, all weights positive and finite, and
    /// `w_V ≥ w_H ≥ w_U ≥ w_X` at every index.
    pub fn new(
        weights_v: Vec<f64>,
        weights_h: Vec<f64>,
        weights_u: Vec<f64>,
        weights_x: Vec<f64>,
    ) -> Result<Self> {
        let dim = weights_v.len();
        if dim == 0 {
            return Err(Error::Invalid("dim must be at least 1".into()));
        }
        for w in [&weights_h, &weights_u, &weights_x] {
            if w.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: w.len() });
            }
        }
        for i in 0..dim {
            let (v, h, u, x) = (weights_v[i], weights_h[i], weights_u[i], weights_x[i]);
            let ordered = v >= h && h >= u && u >= x && x > 0.0;
            if !(ordered && v.is_finite()) {
                return Err(Error::WeightOrder { index: i });
            }
        }
        Ok(SpaceScale { dim, weights: [weights_v, weights_h, weights_u, weights_x] })
    }

    /// All weights 1: the four spaces coincide with Euclidean `R^dim`.
    pub fn unit(dim: usize) -> Self {
        SpaceScale::new(vec![1.0; dim], vec![1.0; dim], vec![1.0; dim], vec![1.0; dim])
            .expect("unit weights are valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self, space: Space) -> &[f64] {
        &self.weights[space.index()]
    }

    fn conforming<'a>(&self, x: &'a Vector) -> Result<&'a [f64]> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.dim() });
        }
        Ok(x.coords())
    }

    /// Weighted inner product `⟨x, y⟩_space`.
    pub fn inner(&self, space: Space, x: &Vector, y: &Vector) -> Result<f64> {
        let (xs, ys) = (self.conforming(x)?, self.conforming(y)?);
        let w = self.weights(space);
        let mut acc = 0.0;
        for i in 0..self.dim {
            acc += w[i] * xs[i] * ys[i];
        }
        Ok(acc)
    }

    /// Norm induced by [`SpaceScale::inner`].
    pub fn norm(&self, space: Space, x: &Vector) -> Result<f64> {
        Ok(self.norm_sq(space, x)?.sqrt())
    }

    pub fn norm_sq(&self, space: Space, x: &Vector) -> Result<f64> {
        let xs = self.conforming(x)?;
        let w = self.weights(space);
        let mut acc = 0.0;
        for i in 0..self.dim {
            acc += w[i] * xs[i] * xs[i];
        }
        Ok(acc)
    }

    /// Norm-squared of a raw coordinate slice; hot-loop variant of
    /// [`SpaceScale::norm_sq`] (length is asserted, not errored).
    pub fn norm_sq_slice(&self, space: Space, xs: &[f64]) -> f64 {
        debug_assert_eq!(xs.len(), self.dim);
        let w = self.weights(space);
        let mut acc = 0.0;
        for i in 0..self.dim {
            acc += w[i] * xs[i] * xs[i];
        }
        acc
    }

    /// Hilbert-Schmidt norm of an operator given by its columns `B(e_i)`:
    /// `sqrt(Σ_i ‖B(e_i)‖²_target)`. An empty column list has norm 0.
    pub fn hs_norm(&self, target: Space, columns: &[Vector]) -> Result<f64> {
        let mut acc = 0.0;
        for col in columns {
            acc += self.norm_sq(target, col)?;
        }
        Ok(acc.sqrt())
    }

    /// Smallest constant `c` with `‖x‖_to ≤ c‖x‖_from` for all `x`, namely
    /// `max_i sqrt(w_to[i] / w_from[i])`. `from` must sit strictly finer in
    /// the chain than `to`.
    pub fn embedding_constant(&self, from: Space, to: Space) -> Result<f64> {
        if from.index() >= to.index() {
            return Err(Error::ChainOrder { from, to });
        }
        let (wf, wt) = (self.weights(from), self.weights(to));
        let mut best = 0.0f64;
        for i in 0..self.dim {
            best = best.max((wt[i] / wf[i]).sqrt());
        }
        Ok(best)
    }
}

/// Certified operator-norm bound between two named spaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorBound {
    pub source: Space,
    pub target: Space,
    pub constant: f64,
}

/// Dense linear operator on the shared coordinate basis, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOp {
    dim: usize,
    entries: Vec<f64>,
    bound: Option<OperatorBound>,
}

/// Relative slack admitted when probing a certified bound; covers rounding in
/// the norm evaluations, not modelling error.
const CERTIFY_SLACK: f64 = 1e-9;

impl LinearOp {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: entries.len() });
        }
        if !entries.iter().all(|e| e.is_finite()) {
            return Err(Error::Invalid("operator entries must be finite".into()));
        }
        Ok(LinearOp { dim, entries, bound: None })
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        LinearOp { dim, entries, bound: None }
    }

    pub fn scaled_identity(dim: usize, alpha: f64) -> Self {
        let mut op = LinearOp::identity(dim);
        for e in &mut op.entries {
            *e *= alpha;
        }
        op
    }

    pub fn zero(dim: usize) -> Self {
        LinearOp { dim, entries: vec![0.0; dim * dim], bound: None }
    }

    /// Upper shift `e_i ↦ e_{i-1}`; nilpotent of order `dim`.
    pub fn upper_shift(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim.saturating_sub(1) {
            entries[i * dim + i + 1] = 1.0;
        }
        LinearOp { dim, entries, bound: None }
    }

    /// Standard-normal entries, for randomized identity checks.
    pub fn random<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let entries = (0..dim * dim).map(|_| rng.sample(StandardNormal)).collect();
        LinearOp { dim, entries, bound: None }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> Option<OperatorBound> {
        self.bound
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.dim() });
        }
        let mut out = Vector::zeros(self.dim);
        self.apply_into(x.coords(), out.coords_mut());
        Ok(out)
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        for r in 0..self.dim {
            let row = &self.entries[r * self.dim..(r + 1) * self.dim];
            let mut acc = 0.0;
            for c in 0..self.dim {
                acc += row[c] * x[c];
            }
            out[r] = acc;
        }
    }

    /// Matrix product `self ∘ other`.
    pub fn compose(&self, other: &LinearOp) -> Result<LinearOp> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let d = self.dim;
        let mut entries = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += self.entries[r * d + k] * other.entries[k * d + c];
                }
                entries[r * d + c] = acc;
            }
        }
        Ok(LinearOp { dim: d, entries, bound: None })
    }

    /// Certify `‖Tφ‖_target ≤ constant·‖φ‖_source` by probing every basis
    /// vector plus `probes` standard-normal vectors. Stores the bound on
    /// success; fails with the worst observed ratio otherwise.
    pub fn certify(
        &mut self,
        scale: &SpaceScale,
        source: Space,
        target: Space,
        constant: f64,
        probes: usize,
        seed: u64,
    ) -> Result<()> {
        if scale.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: scale.dim() });
        }
        if !(constant > 0.0 && constant.is_finite()) {
            return Err(Error::Certification("bound constant must be positive".into()));
        }
        let mut rng = crate::noise::RngSpec::new(seed, 0, u64::MAX).stream();
        let mut worst = 0.0f64;
        let mut check = |x: &Vector| -> Result<()> {
            let nx = scale.norm(source, x)?;
            if nx == 0.0 {
                return Ok(());
            }
            let ratio = scale.norm(target, &self.apply(x)?)? / nx;
            worst = worst.max(ratio);
            Ok(())
        };
        for i in 0..self.dim {
            check(&Vector::basis(self.dim, i))?;
        }
        for _ in 0..probes {
            check(&Vector::random(self.dim, &mut rng))?;
        }
        if worst > constant * (1.0 + CERTIFY_SLACK) {
            return Err(Error::Certification(format!(
                "claimed ‖T‖ ≤ {constant} between {source:?} and {target:?}, observed ratio {worst}"
            )));
        }
        self.bound = Some(OperatorBound { source, target, constant });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(coords: &[f64]) -> Vector {
        Vector::new(coords.to_vec())
    }

    #[test]
    fn inner_orthogonal_basis_vectors() {
        let scale = SpaceScale::unit(2);
        let r = scale.inner(Space::H, &v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn inner_euclidean_norm_squared() {
        let scale = SpaceScale::unit(2);
        let x = v(&[3.0, 4.0]);
        assert_eq!(scale.inner(Space::U, &x, &x).unwrap(), 25.0);
    }

    #[test]
    fn inner_weighted_hand_computed() {
        // w_H = (2, 1), x = y = (1, 1): 2·1·1 + 1·1·1 = 3.
        let scale =
            SpaceScale::new(vec![2.0, 1.0], vec![2.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0])
                .unwrap();
        let x = v(&[1.0, 1.0]);
        assert_eq!(scale.inner(Space::H, &x, &x).unwrap(), 3.0);
    }

    #[test]
    fn inner_dimension_mismatch_rejected() {
        let scale = SpaceScale::unit(2);
        let err = scale.inner(Space::H, &v(&[1.0]), &v(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn norm_zero_vector() {
        let scale = SpaceScale::unit(3);
        assert_eq!(scale.norm(Space::V, &Vector::zeros(3)).unwrap(), 0.0);
    }

    #[test]
    fn norm_three_four_five() {
        let scale = SpaceScale::unit(2);
        assert_eq!(scale.norm(Space::X, &v(&[3.0, 4.0])).unwrap(), 5.0);
    }

    #[test]
    fn norm_weighted_hand_computed() {
        // w_V = (4, 1), x = (1, 1): sqrt(4 + 1) = sqrt 5.
        let scale =
            SpaceScale::new(vec![4.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0])
                .unwrap();
        assert_relative_eq!(
            scale.norm(Space::V, &v(&[1.0, 1.0])).unwrap(),
            5.0f64.sqrt(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn hs_norm_cases() {
        let scale = SpaceScale::unit(2);
        // Single column (1,0) → 1.
        assert_eq!(scale.hs_norm(Space::H, &[v(&[1.0, 0.0])]).unwrap(), 1.0);
        // Orthonormal columns → sqrt 2.
        let cols = [v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        assert_relative_eq!(scale.hs_norm(Space::H, &cols).unwrap(), 2.0f64.sqrt());
        // Columns (1,1), (2,0): sqrt(2 + 4) = sqrt 6.
        let cols = [v(&[1.0, 1.0]), v(&[2.0, 0.0])];
        assert_relative_eq!(scale.hs_norm(Space::H, &cols).unwrap(), 6.0f64.sqrt());
        // Empty operator has norm 0, not an error.
        assert_eq!(scale.hs_norm(Space::H, &[]).unwrap(), 0.0);
    }

    #[test]
    fn embedding_constant_cases() {
        let scale = SpaceScale::unit(2);
        assert_eq!(scale.embedding_constant(Space::V, Space::H).unwrap(), 1.0);

        let scale =
            SpaceScale::new(vec![4.0, 4.0], vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0])
                .unwrap();
        assert_eq!(scale.embedding_constant(Space::V, Space::H).unwrap(), 0.5);

        // w_H = (2, 8), w_U = (1, 2): max(sqrt(1/2), sqrt(1/4)) = sqrt(1/2).
        let scale =
            SpaceScale::new(vec![2.0, 8.0], vec![2.0, 8.0], vec![1.0, 2.0], vec![1.0, 2.0])
                .unwrap();
        assert_relative_eq!(
            scale.embedding_constant(Space::H, Space::U).unwrap(),
            0.5f64.sqrt(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn embedding_constant_reversed_chain_rejected() {
        let scale = SpaceScale::unit(2);
        assert!(matches!(
            scale.embedding_constant(Space::U, Space::H),
            Err(Error::ChainOrder { .. })
        ));
        assert!(matches!(
            scale.embedding_constant(Space::H, Space::H),
            Err(Error::ChainOrder { .. })
        ));
    }

    #[test]
    fn weight_monotonicity_enforced() {
        let err = SpaceScale::new(vec![1.0], vec![2.0], vec![1.0], vec![1.0]).unwrap_err();
        assert!(matches!(err, Error::WeightOrder { index: 0 }));
        let err = SpaceScale::new(vec![1.0], vec![1.0], vec![1.0], vec![0.0]).unwrap_err();
        assert!(matches!(err, Error::WeightOrder { index: 0 }));
    }

    #[test]
    fn linear_op_apply_and_compose() {
        let op = LinearOp::new(2, vec![0.0, 1.0, 0.0, 0.0]).unwrap(); // upper shift
        let out = op.apply(&v(&[5.0, 7.0])).unwrap();
        assert_eq!(out.coords(), &[7.0, 0.0]);
        let sq = op.compose(&op).unwrap();
        assert_eq!(sq.apply(&v(&[5.0, 7.0])).unwrap().coords(), &[0.0, 0.0]);
    }

    #[test]
    fn certify_accepts_true_bound_and_rejects_false_one() {
        let scale = SpaceScale::unit(3);
        let mut op = LinearOp::scaled_identity(3, 2.0);
        op.certify(&scale, Space::V, Space::H, 2.0, 200, 7).unwrap();
        assert_eq!(
            op.bound(),
            Some(OperatorBound { source: Space::V, target: Space::H, constant: 2.0 })
        );
        let mut op = LinearOp::scaled_identity(3, 2.0);
        let err = op.certify(&scale, Space::V, Space::H, 1.5, 200, 7).unwrap_err();
        assert!(matches!(err, Error::Certification(_)));
        assert!(op.bound().is_none());
    }
}
