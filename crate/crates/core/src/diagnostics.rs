//! Conserved and monitored quantities of a discrete field: the covariant
//! momentum maps of each triangle, the slice momentum maps and energies of
//! the time and space evolutions, the rectangle Noether sum and the
//! identities relating them.
//!
//! Everything is recomputed from stored configurations through
//! [`FieldMomenta`], never from integrator internals.
//!
//! Triangle `(j, a)` has vertices `g_a^j`, `g_a^{j+1}`, `g_{a+1}^j`. It
//! exists when both `μ_a^j` and `λ_a^j` are defined, which under the edge
//! conventions includes the last column of a zero-traction field and the
//! last row of a zero-momentum field.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::beam_model::BeamParams;
use crate::grid::{DiscreteField, EdgeConvention, GridError};
use crate::integrators::FieldMomenta;
use crate::liegroup::{tau, CoAlgebraVector};

fn missing(field: &DiscreteField, j: usize, a: usize) -> GridError {
    GridError::IndexOutOfRange {
        j,
        a,
        n_time: field.n_time(),
        n_space: field.n_space(),
    }
}

/// Largest column index `a` with triangles `(·, a)`.
pub fn last_triangle_column(field: &DiscreteField) -> Option<usize> {
    let m = field.n_space();
    match field.edge() {
        EdgeConvention::ZeroTraction => m.checked_sub(1),
        _ => m.checked_sub(2),
    }
}

/// Largest row index `j` with triangles `(j, ·)`.
pub fn last_triangle_row(field: &DiscreteField) -> Option<usize> {
    let n = field.n_time();
    match field.edge() {
        EdgeConvention::ZeroMomentum => n.checked_sub(1),
        _ => n.checked_sub(2),
    }
}

/// `(J¹, J², J³)` of triangle `(j, a)`, as spatial covectors.
pub fn covariant_momenta(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    params: &BeamParams,
    j: usize,
    a: usize,
) -> Result<[CoAlgebraVector; 3], GridError> {
    let g = *field.node(j, a)?;
    let (Some(xi), Some(eta), Some(mu), Some(lambda)) = (
        momenta.xi(j, a),
        momenta.eta(j, a),
        momenta.mu(j, a),
        momenta.lambda(j, a),
    ) else {
        return Err(missing(field, j + 1, a + 1));
    };
    let (dt, ds) = (field.dt(), field.ds());
    let g_next = field.node_with_edge(j + 1, a)?;
    let g_side = field.node_with_edge(j, a + 1)?;
    let j1 = g.coad(&(mu * (-ds) + lambda * dt - params.d_potential(&g) * (dt * ds)));
    let j2 = g_next.coad(&(tau(&(xi * dt)).ad_transpose(&mu) * ds));
    let j3 = g_side.coad(&(tau(&(eta * ds)).ad_transpose(&lambda) * (-dt)));
    Ok([j1, j2, j3])
}

/// `J¹(△_a^j) + J²(△_a^{j-1}) + J³(△_{a-1}^j)`, dropping the terms whose
/// triangle lies before the first row or column. On a solution this is
/// zero: it is `Ad*_{g⁻¹}` of `Δt Δs` times the stencil residual.
pub fn node_balance(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    params: &BeamParams,
    j: usize,
    a: usize,
) -> Result<CoAlgebraVector, GridError> {
    let mut sum = covariant_momenta(field, momenta, params, j, a)?[0];
    if j > 0 {
        sum += covariant_momenta(field, momenta, params, j - 1, a)?[1];
    }
    if a > 0 {
        sum += covariant_momenta(field, momenta, params, j, a - 1)?[2];
    }
    Ok(sum)
}

/// `Σ_a Δs Ad*_{(g_a^j)⁻¹} μ_a^j` over the whole row.
pub fn momentum_ld(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    j: usize,
) -> Result<CoAlgebraVector, GridError> {
    let mut sum = CoAlgebraVector::zeros();
    for a in 0..field.n_space() {
        let mu = momenta.mu(j, a).ok_or_else(|| missing(field, j + 1, a))?;
        sum += field.node(j, a)?.coad(&mu) * field.ds();
    }
    Ok(sum)
}

/// `Σ_j Δt Ad*_{(g_a^j)⁻¹} λ_a^j` over the whole column.
pub fn momentum_nd(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    a: usize,
) -> Result<CoAlgebraVector, GridError> {
    let mut sum = CoAlgebraVector::zeros();
    for j in 0..field.n_time() {
        let lambda = momenta
            .lambda(j, a)
            .ok_or_else(|| missing(field, j, a + 1))?;
        sum += field.node(j, a)?.coad(&lambda) * field.dt();
    }
    Ok(sum)
}

/// `(J⁺, J⁻)` of the time Lagrangian at row `j`, summed over columns
/// `0..=c`: `J⁺ = Σ J²`, `J⁻ = -Σ (J¹ + J³)`.
pub fn slice_momenta_ld(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    params: &BeamParams,
    j: usize,
    c: usize,
) -> Result<(CoAlgebraVector, CoAlgebraVector), GridError> {
    let mut plus = CoAlgebraVector::zeros();
    let mut minus = CoAlgebraVector::zeros();
    for a in 0..=c {
        let [j1, j2, j3] = covariant_momenta(field, momenta, params, j, a)?;
        plus += j2;
        minus -= j1 + j3;
    }
    Ok((plus, minus))
}

/// `(J⁺, J⁻)` of the space Lagrangian at column `a`, summed over rows
/// `0..=l`: `J⁺ = Σ J³`, `J⁻ = -Σ (J¹ + J²)`.
pub fn slice_momenta_nd(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    params: &BeamParams,
    a: usize,
    l: usize,
) -> Result<(CoAlgebraVector, CoAlgebraVector), GridError> {
    let mut plus = CoAlgebraVector::zeros();
    let mut minus = CoAlgebraVector::zeros();
    for j in 0..=l {
        let [j1, j2, j3] = covariant_momenta(field, momenta, params, j, a)?;
        plus += j3;
        minus -= j1 + j2;
    }
    Ok((plus, minus))
}

/// Time-evolution energy of row `j`:
/// `Σ_{a<A} K(ξ_a^j) + Σ_{a<A-1} (Φ(η_a^j) + Π(g_a^j)) + Π(g_{A-1}^j)`.
pub fn energy_ld(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    params: &BeamParams,
    j: usize,
) -> Result<f64, GridError> {
    let m = field.n_space();
    let mut e = 0.0;
    for a in 0..m {
        let xi = momenta.xi(j, a).ok_or_else(|| missing(field, j + 1, a))?;
        e += params.kinetic(&xi);
    }
    for a in 0..m - 1 {
        let eta = momenta.eta(j, a).ok_or_else(|| missing(field, j, a + 1))?;
        e += params.elastic(&eta) + params.potential(field.node(j, a)?);
    }
    Ok(e + params.potential(field.node(j, m - 1)?))
}

/// Space-evolution "energy" of column `a`, with the half-weighted axial
/// terms on the first and last rows.
pub fn energy_nd(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    params: &BeamParams,
    a: usize,
) -> Result<f64, GridError> {
    let n = field.n_time();
    if n < 2 {
        return Err(missing(field, 1, a));
    }
    let eta_at = |j: usize| momenta.eta(j, a).ok_or_else(|| missing(field, j, a + 1));
    let mut e = 0.0;
    for j in 0..n - 1 {
        let xi = momenta.xi(j, a).ok_or_else(|| missing(field, j + 1, a))?;
        e -= params.kinetic(&xi);
    }
    for j in 1..n - 1 {
        let eta = eta_at(j)?;
        e += -params.axial_force(&eta) - params.elastic(&eta) + params.potential(field.node(j, a)?);
    }
    let first = eta_at(0)?;
    e += -0.5 * params.axial_force(&first) - params.elastic(&first)
        + params.potential(field.node(0, a)?);
    let last = eta_at(n - 1)?;
    e += -0.5 * params.axial_force(&last) - params.elastic(&last);
    Ok(e)
}

/// Corners of a rectangle of triangles: columns `b..=c`, rows `k..=l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rectangle {
    pub b: usize,
    pub c: usize,
    pub k: usize,
    pub l: usize,
}

impl Rectangle {
    pub fn new(b: usize, c: usize, k: usize, l: usize) -> Self {
        Self { b, c, k, l }
    }

    /// The largest rectangle of the field.
    pub fn full(field: &DiscreteField) -> Option<Self> {
        let c = last_triangle_column(field)?;
        let l = last_triangle_row(field)?;
        (c > 0 && l > 0).then_some(Self { b: 0, c, k: 0, l })
    }
}

/// Rectangle Noether sum `𝒥_{B,C}^{K,L}`: the covariant momenta on the
/// boundary of the rectangle. It vanishes when every node strictly inside
/// the rectangle, together with the nodes of its last row and column,
/// satisfies the discrete equations.
pub fn noether_rect(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    params: &BeamParams,
    rect: Rectangle,
) -> Result<CoAlgebraVector, GridError> {
    let Rectangle { b, c, k, l } = rect;
    if b >= c || k >= l {
        return Err(missing(field, l, c));
    }
    let jm = |j: usize, a: usize| covariant_momenta(field, momenta, params, j, a);
    let mut sum = CoAlgebraVector::zeros();
    for j in k + 1..=l {
        sum += jm(j, b)?[0] + jm(j - 1, b)?[1] + jm(j, c)?[2];
    }
    for a in b + 1..=c {
        sum += jm(k, a)?[0] + jm(l, a)?[1] + jm(k, a - 1)?[2];
    }
    sum += jm(k, b)?[0] + jm(l, b)?[1] + jm(k, c)?[2];
    Ok(sum)
}

/// Momentum balance of the first column over rows `1..=l`:
/// `Σ_j Δt (Ad* λ_0^j - Ad* λ_{A-1}^j) + Δs (-Ad* μ_0^l + Ad* μ_0^0)`.
pub fn time_edge_balance(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    l: usize,
) -> Result<CoAlgebraVector, GridError> {
    let last = field.n_space() - 1;
    let coad_lambda = |j: usize, a: usize| -> Result<CoAlgebraVector, GridError> {
        let lambda = momenta
            .lambda(j, a)
            .ok_or_else(|| missing(field, j, a + 1))?;
        Ok(field.node(j, a)?.coad(&lambda))
    };
    let coad_mu = |j: usize| -> Result<CoAlgebraVector, GridError> {
        let mu = momenta.mu(j, 0).ok_or_else(|| missing(field, j + 1, 0))?;
        Ok(field.node(j, 0)?.coad(&mu))
    };
    let mut sum = CoAlgebraVector::zeros();
    for j in 1..=l {
        sum += (coad_lambda(j, 0)? - coad_lambda(j, last)?) * field.dt();
    }
    Ok(sum + (coad_mu(0)? - coad_mu(l)?) * field.ds())
}

/// Momentum balance of the first row over columns `1..=c`:
/// `Σ_a Δs (-Ad* μ_a^0 + Ad* μ_a^{N-1}) + Δt (Ad* λ_c^0 - Ad* λ_0^0)`.
pub fn space_edge_balance(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    c: usize,
) -> Result<CoAlgebraVector, GridError> {
    let last = field.n_time() - 1;
    let coad_mu = |j: usize, a: usize| -> Result<CoAlgebraVector, GridError> {
        let mu = momenta.mu(j, a).ok_or_else(|| missing(field, j + 1, a))?;
        Ok(field.node(j, a)?.coad(&mu))
    };
    let coad_lambda = |a: usize| -> Result<CoAlgebraVector, GridError> {
        let lambda = momenta
            .lambda(0, a)
            .ok_or_else(|| missing(field, 0, a + 1))?;
        Ok(field.node(0, a)?.coad(&lambda))
    };
    let mut sum = CoAlgebraVector::zeros();
    for a in 1..=c {
        sum += (coad_mu(last, a)? - coad_mu(0, a)?) * field.ds();
    }
    Ok(sum + (coad_lambda(c)? - coad_lambda(0)?) * field.dt())
}

/// Which side of the rectangle is the full slice in the decomposition of
/// the Noether sum into slice momenta.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LemmaWindow {
    /// `B = 0`, columns `0..=c`, rows `k..=l`.
    Time { k: usize, l: usize, c: usize },
    /// `K = 0`, rows `0..=l`, columns `b..=c`.
    Space { b: usize, c: usize, l: usize },
}

/// Evaluates both sides of the decomposition of `𝒥` into slice momenta
/// plus the side sums, and returns the largest componentwise difference.
pub fn lemma_discrepancy(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    params: &BeamParams,
    window: LemmaWindow,
) -> Result<f64, GridError> {
    let jm = |j: usize, a: usize| covariant_momenta(field, momenta, params, j, a);
    let (lhs, rhs) = match window {
        LemmaWindow::Time { k, l, c } => {
            let lhs = noether_rect(field, momenta, params, Rectangle::new(0, c, k, l))?;
            let mut rhs = CoAlgebraVector::zeros();
            for j in k + 1..=l {
                rhs += jm(j, 0)?[0] + jm(j - 1, 0)?[1] + jm(j, c)?[2];
            }
            let (plus, _) = slice_momenta_ld(field, momenta, params, l, c)?;
            let (_, minus) = slice_momenta_ld(field, momenta, params, k, c)?;
            (lhs, rhs + plus - minus)
        }
        LemmaWindow::Space { b, c, l } => {
            let lhs = noether_rect(field, momenta, params, Rectangle::new(b, c, 0, l))?;
            let mut rhs = CoAlgebraVector::zeros();
            for a in b + 1..=c {
                rhs += jm(0, a)?[0] + jm(l, a)?[1] + jm(0, a - 1)?[2];
            }
            let (plus, _) = slice_momenta_nd(field, momenta, params, c, l)?;
            let (_, minus) = slice_momenta_nd(field, momenta, params, b, l)?;
            (lhs, rhs + plus - minus)
        }
    };
    Ok((lhs - rhs).amax())
}

/// Evolution direction of a field, which fixes the slices a report runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Rows `j`, with `E_Ld` and `J_Ld`.
    Time,
    /// Columns `a`, with `E_Nd` and `J_Nd`.
    Space,
}

/// `|x - x₀| / max(|x₀|, 1e-14·scale)`, `scale` the largest magnitude in
/// the series. All-zero series have zero drift.
pub fn relative_drift(values: &[f64]) -> Vec<f64> {
    let Some(&first) = values.first() else {
        return Vec::new();
    };
    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return vec![0.0; values.len()];
    }
    let denom = first.abs().max(1e-14 * scale);
    values.iter().map(|v| (v - first).abs() / denom).collect()
}

/// [`relative_drift`] for covector series in the ∞-norm.
pub fn relative_drift_vec(values: &[CoAlgebraVector]) -> Vec<f64> {
    let Some(first) = values.first() else {
        return Vec::new();
    };
    let scale = values.iter().map(CoAlgebraVector::amax).fold(0.0, f64::max);
    if scale == 0.0 {
        return vec![0.0; values.len()];
    }
    let denom = first.amax().max(1e-14 * scale);
    values
        .iter()
        .map(|v| (*v - *first).amax() / denom)
        .collect()
}

/// Momentum restricted to a symmetry subgroup with Lie algebra spanned by
/// the columns of `basis` (6×k).
pub fn project(momentum: &CoAlgebraVector, basis: &DMatrix<f64>) -> DVector<f64> {
    assert_eq!(basis.nrows(), 6, "projection basis must have 6 rows");
    basis.transpose() * DVector::from_column_slice(&momentum.to_array())
}

/// Per-slice energy and momentum series of a field, their drift relative
/// to the first slice, the full-rectangle Noether sum and the largest
/// orthogonality error.
#[derive(Debug, Clone)]
pub struct ConservationReport {
    pub direction: Direction,
    pub energy: Vec<f64>,
    pub momentum: Vec<CoAlgebraVector>,
    pub energy_drift: Vec<f64>,
    pub momentum_drift: Vec<f64>,
    /// `𝒥` over the largest rectangle, zero when the field is too small.
    pub noether_residual: CoAlgebraVector,
    pub orthogonality_drift: f64,
}

impl ConservationReport {
    pub fn compute(
        field: &DiscreteField,
        momenta: &FieldMomenta,
        params: &BeamParams,
        direction: Direction,
    ) -> Result<Self, GridError> {
        let (energy, momentum): (Vec<f64>, Vec<CoAlgebraVector>) = match direction {
            Direction::Time => {
                let last = last_triangle_row(field).ok_or_else(|| missing(field, 1, 0))?;
                (0..=last)
                    .into_par_iter()
                    .map(|j| {
                        Ok((
                            energy_ld(field, momenta, params, j)?,
                            momentum_ld(field, momenta, j)?,
                        ))
                    })
                    .collect::<Result<Vec<_>, GridError>>()?
                    .into_iter()
                    .unzip()
            }
            Direction::Space => {
                let last = last_triangle_column(field).ok_or_else(|| missing(field, 0, 1))?;
                let last = last.min(field.n_space().saturating_sub(2));
                (0..=last)
                    .into_par_iter()
                    .map(|a| {
                        Ok((
                            energy_nd(field, momenta, params, a)?,
                            momentum_nd(field, momenta, a)?,
                        ))
                    })
                    .collect::<Result<Vec<_>, GridError>>()?
                    .into_iter()
                    .unzip()
            }
        };
        let noether_residual = match Rectangle::full(field) {
            Some(rect) => noether_rect(field, momenta, params, rect)?,
            None => CoAlgebraVector::zeros(),
        };
        Ok(Self {
            direction,
            energy_drift: relative_drift(&energy),
            momentum_drift: relative_drift_vec(&momentum),
            energy,
            momentum,
            noether_residual,
            orthogonality_drift: field.max_orthogonality_error(),
        })
    }

    pub fn max_energy_drift(&self) -> f64 {
        self.energy_drift.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_momentum_drift(&self) -> f64 {
        self.momentum_drift.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_momentum_norm(&self) -> f64 {
        self.momentum
            .iter()
            .map(CoAlgebraVector::amax)
            .fold(0.0, f64::max)
    }

    /// Means of the energy over the first and second halves of the series.
    pub fn energy_half_means(&self) -> (f64, f64) {
        let n = self.energy.len();
        let mean = |s: &[f64]| {
            if s.is_empty() {
                f64::NAN
            } else {
                s.iter().sum::<f64>() / s.len() as f64
            }
        };
        (mean(&self.energy[..n / 2]), mean(&self.energy[n / 2..]))
    }

    pub fn projected_momentum(&self, basis: &DMatrix<f64>) -> Vec<DVector<f64>> {
        self.momentum.iter().map(|m| project(m, basis)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beam_model::{MaterialInput, E6};
    use crate::liegroup::{cay_so3, dtau_inv, tau_inv, AlgebraVector, GroupElement};
    use nalgebra::{Matrix6, Vector3, Vector6};
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn params(n: usize, m: usize, gravity: Vector3<f64>) -> BeamParams {
        BeamParams::build(&MaterialInput {
            rho: 1e3,
            side: 0.01,
            length: 0.4,
            young: 5e3,
            poisson: 0.35,
            gravity,
            dt: 0.01,
            ds: 0.1,
            duration: 0.05,
        })
        .unwrap()
        .with_grid(0.01, 0.1, n, m)
    }

    fn random_field(seed: u64, p: &BeamParams, edge: EdgeConvention) -> DiscreteField {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut nodes = Vec::new();
        for j in 0..p.n_time {
            for a in 0..p.n_space {
                let w = Vector3::from_fn(|_, _| rng.random_range(-0.4..0.4));
                let dr = Vector3::from_fn(|_, _| rng.random_range(-0.03..0.03));
                let base = Vector3::new(0.02 * j as f64, 0.0, a as f64 * p.ds);
                nodes.push(GroupElement::new(cay_so3(&w), base + dr));
            }
        }
        DiscreteField::new(p.n_time, p.n_space, p.dt, p.ds, nodes)
            .unwrap()
            .with_edge(edge)
    }

    fn rest_field(p: &BeamParams) -> DiscreteField {
        let mut nodes = Vec::new();
        for _ in 0..p.n_time {
            for a in 0..p.n_space {
                nodes.push(GroupElement::from_translation(Vector3::new(
                    0.0,
                    0.0,
                    a as f64 * p.ds,
                )));
            }
        }
        DiscreteField::new(p.n_time, p.n_space, p.dt, p.ds, nodes).unwrap()
    }

    fn triangle_lagrangian(
        p: &BeamParams,
        g1: &GroupElement,
        g2: &GroupElement,
        g3: &GroupElement,
    ) -> f64 {
        let xi = tau_inv(&g1.between(g2)).unwrap() * (1.0 / p.dt);
        let eta = tau_inv(&g1.between(g3)).unwrap() * (1.0 / p.ds);
        p.dt * p.ds * (p.kinetic(&xi) - p.elastic(&eta) - p.potential(g1))
    }

    #[test]
    fn rest_field_has_zero_diagnostics() {
        let p = params(4, 5, Vector3::zeros());
        let field = rest_field(&p);
        let m = FieldMomenta::compute(&field, &p).unwrap();
        for j in 0..3 {
            assert_eq!(
                momentum_ld(&field, &m, j).unwrap(),
                CoAlgebraVector::zeros()
            );
            assert!(energy_ld(&field, &m, &p, j).unwrap().abs() < 1e-12);
        }
        for a in 0..4 {
            let mn = momentum_nd(&field, &m, a).unwrap().amax();
            assert!(mn < 1e-14, "{mn}");
            assert!(energy_nd(&field, &m, &p, a).unwrap().abs() < 1e-12);
        }
        let traction = field.clone().with_edge(EdgeConvention::ZeroTraction);
        let mt = FieldMomenta::compute(&traction, &p).unwrap();
        assert_eq!(
            momentum_ld(&traction, &mt, 0).unwrap(),
            CoAlgebraVector::zeros()
        );
        let r = noether_rect(&traction, &mt, &p, Rectangle::full(&traction).unwrap()).unwrap();
        assert!(r.amax() < 1e-25);
        assert_eq!(p.axial_force(&E6), 0.0);
    }

    #[test]
    fn covariant_momenta_match_left_action_derivative() {
        let p = params(3, 3, Vector3::new(0.1, 0.0, -0.981));
        for seed in 0..5 {
            let field = random_field(seed, &p, EdgeConvention::None);
            let m = FieldMomenta::compute(&field, &p).unwrap();
            let js = covariant_momenta(&field, &m, &p, 0, 0).unwrap();
            let verts = [*field.at(0, 0), *field.at(1, 0), *field.at(0, 1)];
            let h = 1e-6;
            for (k, jk) in js.iter().enumerate() {
                for comp in 0..6 {
                    let mut z = [0.0; 6];
                    z[comp] = h;
                    let shifted = |zz: [f64; 6]| {
                        let mut v = verts;
                        v[k] = tau(&AlgebraVector::from_array(zz)).compose(&v[k]);
                        triangle_lagrangian(&p, &v[0], &v[1], &v[2])
                    };
                    let plus = shifted(z);
                    z[comp] = -h;
                    let minus = shifted(z);
                    let fd = (plus - minus) / (2.0 * h);
                    let got = jk.to_array()[comp];
                    assert!(
                        (fd - got).abs() < 1e-8 * got.abs().max(1e-3),
                        "k={k} comp={comp}: {fd} vs {got}"
                    );
                }
            }
        }
    }

    #[test]
    fn node_balance_is_transported_stencil() {
        use crate::integrators::{stencil_residual, NoForce};
        let p = params(4, 4, Vector3::new(0.0, 0.0, -0.981));
        let field = random_field(7, &p, EdgeConvention::None);
        let m = FieldMomenta::compute(&field, &p).unwrap();
        for j in 1..3 {
            for a in 1..3 {
                let bal = node_balance(&field, &m, &p, j, a).unwrap();
                let res = stencil_residual(&field, &m, &p, &NoForce, j, a).unwrap();
                let want = field.at(j, a).coad(&(res * (p.dt * p.ds)));
                assert!((bal - want).amax() < 1e-12 * want.amax().max(1e-6));
            }
        }
    }

    #[test]
    fn triangle_momenta_sum_to_zero_without_potential() {
        let p = params(3, 3, Vector3::zeros());
        for seed in 0..10 {
            let field = random_field(seed, &p, EdgeConvention::None);
            let m = FieldMomenta::compute(&field, &p).unwrap();
            let [a, b, c] = covariant_momenta(&field, &m, &p, 0, 0).unwrap();
            let scale = a.amax().max(b.amax()).max(c.amax());
            assert!((a + b + c).amax() < 1e-12 * scale);
        }
    }

    #[test]
    fn noether_sum_is_minus_interior_balances() {
        let p = params(6, 6, Vector3::zeros());
        let field = random_field(3, &p, EdgeConvention::None);
        let m = FieldMomenta::compute(&field, &p).unwrap();
        let rect = Rectangle::new(1, 4, 0, 3);
        let got = noether_rect(&field, &m, &p, rect).unwrap();
        let mut want = CoAlgebraVector::zeros();
        for j in rect.k + 1..=rect.l {
            for a in rect.b + 1..=rect.c {
                want -= node_balance(&field, &m, &p, j, a).unwrap();
            }
        }
        // Negative control: a random field is far from a solution.
        assert!(got.amax() > 1e-6);
        assert!((got - want).amax() < 1e-12 * got.amax());
    }

    #[test]
    fn minimal_rectangle_is_single_node_balance() {
        let p = params(3, 3, Vector3::zeros());
        let field = random_field(11, &p, EdgeConvention::None);
        let m = FieldMomenta::compute(&field, &p).unwrap();
        let got = noether_rect(&field, &m, &p, Rectangle::new(0, 1, 0, 1)).unwrap();
        let want = -node_balance(&field, &m, &p, 1, 1).unwrap();
        assert!((got - want).amax() < 1e-12 * want.amax());
    }

    #[test]
    fn edge_rectangles_follow_the_convention() {
        let p = params(4, 4, Vector3::zeros());
        let traction = random_field(5, &p, EdgeConvention::ZeroTraction);
        let mt = FieldMomenta::compute(&traction, &p).unwrap();
        assert_eq!(Rectangle::full(&traction), Some(Rectangle::new(0, 3, 0, 2)));
        assert!(noether_rect(&traction, &mt, &p, Rectangle::new(0, 3, 0, 2)).is_ok());
        assert!(noether_rect(&traction, &mt, &p, Rectangle::new(0, 3, 0, 3)).is_err());
        let momentum = random_field(5, &p, EdgeConvention::ZeroMomentum);
        let mm = FieldMomenta::compute(&momentum, &p).unwrap();
        assert_eq!(Rectangle::full(&momentum), Some(Rectangle::new(0, 2, 0, 3)));
        assert!(noether_rect(&momentum, &mm, &p, Rectangle::new(0, 3, 0, 3)).is_err());
        assert!(noether_rect(&momentum, &mm, &p, Rectangle::new(2, 2, 0, 3)).is_err());
    }

    #[test]
    fn energy_nd_by_direct_summation() {
        let p = params(3, 3, Vector3::new(0.0, 0.3, -0.981));
        let field = random_field(2, &p, EdgeConvention::None);
        let m = FieldMomenta::compute(&field, &p).unwrap();
        for a in 0..2 {
            let xi = |j: usize| {
                tau_inv(&field.at(j, a).between(field.at(j + 1, a))).unwrap() * (1.0 / p.dt)
            };
            let eta = |j: usize| {
                tau_inv(&field.at(j, a).between(field.at(j, a + 1))).unwrap() * (1.0 / p.ds)
            };
            let c = p.stiffness_operator();
            let e6 = Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.0);
            let axial = |e: AlgebraVector| (c * (e.to_vec6() - e6)).dot(&e6);
            let phi = |e: AlgebraVector| 0.5 * (e.to_vec6() - e6).dot(&(c * (e.to_vec6() - e6)));
            let kin =
                |x: AlgebraVector| 0.5 * x.to_vec6().dot(&(p.inertia_operator() * x.to_vec6()));
            let pi = |j: usize| p.gravity.dot(&field.at(j, a).pos);
            let want = -kin(xi(0)) - kin(xi(1))
                + (-axial(eta(1)) - phi(eta(1)) + pi(1))
                + (-0.5 * axial(eta(0)) - phi(eta(0)) + pi(0))
                + (-0.5 * axial(eta(2)) - phi(eta(2)));
            let got = energy_nd(&field, &m, &p, a).unwrap();
            assert!(
                (got - want).abs() < 1e-12 * want.abs().max(1.0),
                "{got} vs {want}"
            );
        }
    }

    #[test]
    fn rigid_translation_energy_and_momentum() {
        let p = params(4, 5, Vector3::zeros());
        let v = Vector3::new(0.3, -0.2, 0.1);
        let mut nodes = Vec::new();
        for j in 0..p.n_time {
            for a in 0..p.n_space {
                nodes.push(GroupElement::from_translation(
                    Vector3::new(0.0, 0.0, a as f64 * p.ds) + v * (j as f64 * p.dt),
                ));
            }
        }
        let field = DiscreteField::new(p.n_time, p.n_space, p.dt, p.ds, nodes)
            .unwrap()
            .with_edge(EdgeConvention::ZeroTraction);
        let m = FieldMomenta::compute(&field, &p).unwrap();
        let want_e = p.n_space as f64 * 0.5 * p.mass_per_length * v.norm_squared();
        let want_p = v * (p.mass_per_length * p.ds * p.n_space as f64);
        for j in 0..p.n_time - 1 {
            assert!((energy_ld(&field, &m, &p, j).unwrap() - want_e).abs() < 1e-15);
            let got = momentum_ld(&field, &m, j).unwrap();
            assert!((got.lin - want_p).amax() < 1e-15);
            let ang_want = (0..p.n_space)
                .map(|a| field.at(j, a).pos.cross(&(v * (p.mass_per_length * p.ds))))
                .sum::<Vector3<f64>>();
            assert!((got.ang - ang_want).amax() < 1e-15);
        }
    }

    #[test]
    fn single_node_momentum_uses_discrete_legendre_map() {
        let p = params(3, 1, Vector3::zeros());
        let xi = AlgebraVector::from_array([0.3, -0.5, 0.2, 0.1, 0.0, -0.4]);
        let g0 = GroupElement::new(
            cay_so3(&Vector3::new(0.2, 0.1, -0.3)),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let nodes = vec![
            g0,
            g0.compose(&tau(&(xi * p.dt))),
            g0.compose(&tau(&(xi * (2.0 * p.dt)))),
        ];
        let field = DiscreteField::new(3, 1, p.dt, p.ds, nodes)
            .unwrap()
            .with_edge(EdgeConvention::ZeroTraction);
        let m = FieldMomenta::compute(&field, &p).unwrap();
        let v = xi * p.dt;
        let mu: Vector6<f64> =
            dtau_inv(&v).transpose() * Matrix6::from_diagonal(&p.inertia_diag()) * xi.to_vec6();
        let want = g0.coad(&CoAlgebraVector::from_vec6(&mu)) * p.ds;
        assert!((momentum_ld(&field, &m, 0).unwrap() - want).amax() < 1e-14);
    }

    #[test]
    fn edge_balance_matches_first_column_nodes() {
        let p = params(5, 4, Vector3::zeros());
        let field = random_field(9, &p, EdgeConvention::ZeroTraction);
        let m = FieldMomenta::compute(&field, &p).unwrap();
        // On the first column only J¹ and J² of column 0 enter the node
        // balances; their sum over rows telescopes to the edge balance.
        let l = 3;
        let got = time_edge_balance(&field, &m, l).unwrap();
        let mut want = CoAlgebraVector::zeros();
        for j in 1..=l {
            want += node_balance(&field, &m, &p, j, 0).unwrap();
        }
        assert!((got - want).amax() < 1e-12 * want.amax().max(1e-9));

        let field = random_field(9, &p, EdgeConvention::ZeroMomentum);
        let m = FieldMomenta::compute(&field, &p).unwrap();
        let c = 2;
        let got = space_edge_balance(&field, &m, c).unwrap();
        let mut want = CoAlgebraVector::zeros();
        for a in 1..=c {
            want += node_balance(&field, &m, &p, 0, a).unwrap();
        }
        // The zero-momentum last row adds Δs Ad* μ^{N-1} = 0 terms only.
        assert!((got - want).amax() < 1e-12 * want.amax().max(1e-9));
    }

    #[test]
    fn drift_guards_zero_series() {
        assert_eq!(relative_drift(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(relative_drift(&[2.0, 3.0]), vec![0.0, 0.5]);
        let d = relative_drift(&[0.0, 1.0]);
        assert_eq!(d[1], 1e14);
        assert!(relative_drift(&[]).is_empty());
    }

    #[test]
    fn projection_selects_components() {
        let m = CoAlgebraVector::from_array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut basis = DMatrix::zeros(6, 2);
        basis[(2, 0)] = 1.0;
        basis[(5, 1)] = 1.0;
        assert_eq!(project(&m, &basis).as_slice(), &[3.0, 6.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn lemma_is_an_identity_on_any_field(seed in 0u64..10_000, k in 0usize..3, dl in 1usize..3, b in 0usize..2) {
            let p = params(6, 6, Vector3::new(0.0, 0.0, -0.5));
            let traction = random_field(seed, &p, EdgeConvention::ZeroTraction);
            let m = FieldMomenta::compute(&traction, &p).unwrap();
            let l = (k + dl).min(4);
            let d = lemma_discrepancy(&traction, &m, &p, LemmaWindow::Time { k, l, c: 5 }).unwrap();
            prop_assert!(d < 1e-13);
            let momentum = random_field(seed, &p, EdgeConvention::ZeroMomentum);
            let m = FieldMomenta::compute(&momentum, &p).unwrap();
            let d = lemma_discrepancy(&momentum, &m, &p, LemmaWindow::Space { b, c: 4, l: 5 }).unwrap();
            prop_assert!(d < 1e-13);
        }

        #[test]
        fn slice_momenta_coincide_without_potential(seed in 0u64..10_000, j in 0usize..4) {
            let p = params(5, 4, Vector3::zeros());
            let field = random_field(seed, &p, EdgeConvention::ZeroTraction);
            let m = FieldMomenta::compute(&field, &p).unwrap();
            let (plus, minus) = slice_momenta_ld(&field, &m, &p, j, 3).unwrap();
            let direct = momentum_ld(&field, &m, j).unwrap();
            prop_assert!((plus - direct).amax() < 1e-13 * direct.amax().max(1e-9));
            prop_assert!((minus - direct).amax() < 1e-13 * direct.amax().max(1e-9));
        }
    }
}
