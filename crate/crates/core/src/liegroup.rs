//! SO(3) and SE(3) kernel built around the Cayley retraction.
//!
//! Group elements are stored as an explicit rotation matrix plus a position
//! vector. Algebra and co-algebra elements are ℝ⁶ vectors ordered
//! (angular; linear) everywhere in this crate. The dual pairing is the plain
//! dot product, so the matrix of a dual map is the transpose of the matrix of
//! the primal map.
//!
//! Conventions for the adjoint family:
//!
//! * [`GroupElement::ad`] is `Ad_g v`.
//! * [`GroupElement::ad_transpose`] is `Ad*_g p := (Ad_g)ᵀ p`. This is the
//!   form that transports a momentum across one discrete step,
//!   e.g. `Ad*_{τ(Δt ξ)} μ`.
//! * [`GroupElement::coad`] is `Ad*_{g⁻¹} p`, the coadjoint action of `g`
//!   itself, used to push body momenta to the spatial frame.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};
use thiserror::Error;

/// `|1 + Tr(R)|` below which the Cayley chart is considered singular.
pub const CHART_BOUNDARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum LieError {
    #[error("rotation is (numerically) a rotation by ±π: 1 + Tr(R) = {one_plus_trace:e}")]
    NearPiRotation { one_plus_trace: f64 },
}

/// Skew matrix of `w`, so that `hat(w) * v == w.cross(v)`.
#[rustfmt::skip]
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
         0.0, -w.z,  w.y,
         w.z,  0.0, -w.x,
        -w.y,  w.x,  0.0,
    )
}

/// Inverse of [`hat`]. Only reads the lower-left entries.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rotation matrix. The constructor does not re-orthonormalize; use
/// [`Rotation::orthogonality_error`] to measure drift.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix that the caller asserts is a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Largest entry of `|RᵀR - I|`, together with `|det R - 1|`.
    pub fn orthogonality_error(&self) -> f64 {
        let gram = self.0.transpose() * self.0 - Matrix3::identity();
        gram.amax().max((self.0.determinant() - 1.0).abs())
    }
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Rotation").field(&self.0.as_slice()).finish()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

macro_rules! six_vector {
    ($name:ident, $first:ident, $second:ident) => {
        #[derive(Debug, Clone, Copy, PartialEq, Default)]
        pub struct $name {
            pub $first: Vector3<f64>,
            pub $second: Vector3<f64>,
        }

        impl $name {
            pub const fn new($first: Vector3<f64>, $second: Vector3<f64>) -> Self {
                Self { $first, $second }
            }

            pub fn zeros() -> Self {
                Self::default()
            }

            pub fn from_array(v: [f64; 6]) -> Self {
                Self::new(
                    Vector3::new(v[0], v[1], v[2]),
                    Vector3::new(v[3], v[4], v[5]),
                )
            }

            pub fn from_vec6(v: &Vector6<f64>) -> Self {
                Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
            }

            pub fn to_vec6(&self) -> Vector6<f64> {
                let mut out = Vector6::zeros();
                out.fixed_rows_mut::<3>(0).copy_from(&self.$first);
                out.fixed_rows_mut::<3>(3).copy_from(&self.$second);
                out
            }

            pub fn to_array(&self) -> [f64; 6] {
                [
                    self.$first.x,
                    self.$first.y,
                    self.$first.z,
                    self.$second.x,
                    self.$second.y,
                    self.$second.z,
                ]
            }

            /// ∞-norm over the six components.
            pub fn amax(&self) -> f64 {
                self.$first.amax().max(self.$second.amax())
            }

            pub fn is_finite(&self) -> bool {
                self.to_array().iter().all(|x| x.is_finite())
            }
        }

        impl Add for $name {
            type Output = Self;
            fn add(self, rhs: Self) -> Self {
                Self::new(self.$first + rhs.$first, self.$second + rhs.$second)
            }
        }

        impl AddAssign for $name {
            fn add_assign(&mut self, rhs: Self) {
                self.$first += rhs.$first;
                self.$second += rhs.$second;
            }
        }

        impl Sub for $name {
            type Output = Self;
            fn sub(self, rhs: Self) -> Self {
                Self::new(self.$first - rhs.$first, self.$second - rhs.$second)
            }
        }

        impl SubAssign for $name {
            fn sub_assign(&mut self, rhs: Self) {
                self.$first -= rhs.$first;
                self.$second -= rhs.$second;
            }
        }

        impl Neg for $name {
            type Output = Self;
            fn neg(self) -> Self {
                Self::new(-self.$first, -self.$second)
            }
        }

        impl Mul<f64> for $name {
            type Output = Self;
            fn mul(self, rhs: f64) -> Self {
                Self::new(self.$first * rhs, self.$second * rhs)
            }
        }

        impl Mul<$name> for f64 {
            type Output = $name;
            fn mul(self, rhs: $name) -> $name {
                rhs * self
            }
        }

        impl std::iter::Sum for $name {
            fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
                iter.fold(Self::zeros(), |acc, x| acc + x)
            }
        }
    };
}

six_vector!(AlgebraVector, ang, lin);
six_vector!(CoAlgebraVector, ang, lin);

impl CoAlgebraVector {
    /// Dual pairing `⟨p, v⟩`.
    pub fn pair(&self, v: &AlgebraVector) -> f64 {
        self.ang.dot(&v.ang) + self.lin.dot(&v.lin)
    }
}

impl AlgebraVector {
    /// 4×4 matrix of the algebra element in the homogeneous embedding.
    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&self.ang));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.lin);
        m
    }

    /// Reads an algebra element back from its 4×4 form.
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        let rot: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        AlgebraVector::new(vee(&rot), m.fixed_view::<3, 1>(0, 3).into())
    }
}

/// Rigid configuration `(Λ, r)` of one cross-section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupElement {
    pub rot: Rotation,
    pub pos: Vector3<f64>,
}

impl Default for GroupElement {
    fn default() -> Self {
        Self::identity()
    }
}

impl GroupElement {
    pub fn new(rot: Rotation, pos: Vector3<f64>) -> Self {
        Self { rot, pos }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(pos: Vector3<f64>) -> Self {
        Self::new(Rotation::identity(), pos)
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        GroupElement::new(self.rot * other.rot, self.pos + self.rot * other.pos)
    }

    pub fn inverse(&self) -> GroupElement {
        let rt = self.rot.transpose();
        GroupElement::new(rt, -(rt * self.pos))
    }

    /// `self⁻¹ · other`, the relative displacement used for discrete
    /// velocities and strains.
    pub fn between(&self, other: &GroupElement) -> GroupElement {
        let rt = self.rot.transpose();
        GroupElement::new(rt * other.rot, rt * (other.pos - self.pos))
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rot.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.pos);
        m
    }

    /// Reads the rotation and translation blocks of a homogeneous matrix.
    /// The bottom row is ignored.
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        GroupElement::new(
            Rotation::from_matrix_unchecked(m.fixed_view::<3, 3>(0, 0).into()),
            m.fixed_view::<3, 1>(0, 3).into(),
        )
    }

    /// `Ad_g v = (Λω, Λγ + r × Λω)`.
    pub fn ad(&self, v: &AlgebraVector) -> AlgebraVector {
        let rw = self.rot * v.ang;
        AlgebraVector::new(rw, self.rot * v.lin + self.pos.cross(&rw))
    }

    /// `Ad*_g p = (Ad_g)ᵀ p = (Λᵀ(μ + ν × r), Λᵀν)`.
    pub fn ad_transpose(&self, p: &CoAlgebraVector) -> CoAlgebraVector {
        let rt = self.rot.transpose();
        CoAlgebraVector::new(rt * (p.ang + p.lin.cross(&self.pos)), rt * p.lin)
    }

    /// `Ad*_{g⁻¹} p = (Λμ + r × Λν, Λν)`.
    pub fn coad(&self, p: &CoAlgebraVector) -> CoAlgebraVector {
        let rn = self.rot * p.lin;
        CoAlgebraVector::new(self.rot * p.ang + self.pos.cross(&rn), rn)
    }

    /// 6×6 matrix of `Ad_g` in the (angular; linear) basis.
    pub fn ad_matrix(&self) -> Matrix6<f64> {
        let r = self.rot.matrix();
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        m.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(hat(&self.pos) * r));
        m
    }
}

impl Mul for GroupElement {
    type Output = GroupElement;
    fn mul(self, rhs: GroupElement) -> GroupElement {
        self.compose(&rhs)
    }
}

/// Cayley map on so(3): `I + 4/(4+|w|²) (ŵ + ŵ²/2)`.
pub fn cay_so3(w: &Vector3<f64>) -> Rotation {
    let wh = hat(w);
    let scale = 4.0 / (4.0 + w.norm_squared());
    Rotation(Matrix3::identity() + (wh + wh * wh * 0.5) * scale)
}

/// Inverse Cayley map, `2/(1+Tr R) · vee(R - Rᵀ)`.
pub fn cay_inv_so3(r: &Rotation) -> Result<Vector3<f64>, LieError> {
    let one_plus_trace = 1.0 + r.trace();
    if one_plus_trace.abs() < CHART_BOUNDARY_TOL {
        return Err(LieError::NearPiRotation { one_plus_trace });
    }
    let m = r.matrix();
    let skew = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    Ok(skew * (2.0 / one_plus_trace))
}

/// Cayley retraction on SE(3).
pub fn tau(v: &AlgebraVector) -> GroupElement {
    let w = &v.ang;
    let scale = 4.0 / (4.0 + w.norm_squared());
    let pos = (v.lin + w.cross(&v.lin) * 0.5 + w * (w.dot(&v.lin) * 0.25)) * scale;
    GroupElement::new(cay_so3(w), pos)
}

/// Inverse of [`tau`]: rotation part through [`cay_inv_so3`], translation
/// part `2 (Λ + I)⁻¹ r`.
pub fn tau_inv(g: &GroupElement) -> Result<AlgebraVector, LieError> {
    let ang = cay_inv_so3(&g.rot)?;
    // (Λ + I)⁻¹ = (I - ŵ/2)/2 for Λ = cay(w), so 2(Λ + I)⁻¹ r = r - w × r / 2.
    let lin = g.pos - ang.cross(&g.pos) * 0.5;
    Ok(AlgebraVector::new(ang, lin))
}

/// Matrix of the inverse right-trivialized derivative `(dτ_v)⁻¹`:
///
/// ```text
/// [ I - ŵ/2 + w wᵀ/4        0      ]
/// [ -(I - ŵ/2) γ̂ / 2    I - ŵ/2  ]
/// ```
pub fn dtau_inv(v: &AlgebraVector) -> Matrix6<f64> {
    let wh = hat(&v.ang);
    let c = Matrix3::identity() - wh * 0.5;
    let a = c + v.ang * v.ang.transpose() * 0.25;
    let b = c * hat(&v.lin) * -0.5;
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&a);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&b);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&c);
    m
}

/// `((dτ_v)⁻¹)* p`, i.e. `dtau_inv(v)ᵀ p`, in closed form.
pub fn dtau_inv_star(v: &AlgebraVector, p: &CoAlgebraVector) -> CoAlgebraVector {
    let w = &v.ang;
    let lin = p.lin + w.cross(&p.lin) * 0.5;
    let ang = p.ang + w.cross(&p.ang) * 0.5 + w * (w.dot(&p.ang) * 0.25) + v.lin.cross(&lin) * 0.5;
    CoAlgebraVector::new(ang, lin)
}

/// Derivative of `v ↦ dtau_inv_star(v, p)` with `p` held fixed.
pub fn dtau_inv_star_dv(v: &AlgebraVector, p: &CoAlgebraVector) -> Matrix6<f64> {
    let w = &v.ang;
    let m = &p.ang;
    let n = &p.lin;
    let d_ang_dw = hat(m) * -0.5 + (Matrix3::identity() * w.dot(m) + w * m.transpose()) * 0.25
        - hat(&v.lin) * hat(n) * 0.25;
    let d_ang_dgamma = hat(&(n + w.cross(n) * 0.5)) * -0.5;
    let d_lin_dw = hat(n) * -0.5;
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&d_ang_dw);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&d_ang_dgamma);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&d_lin_dw);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        prop::array::uniform3(-2.0..2.0f64).prop_map(Vector3::from)
    }

    fn alg() -> impl Strategy<Value = AlgebraVector> {
        prop::array::uniform6(-1.5..1.5f64).prop_map(AlgebraVector::from_array)
    }

    fn coalg() -> impl Strategy<Value = CoAlgebraVector> {
        prop::array::uniform6(-3.0..3.0f64).prop_map(CoAlgebraVector::from_array)
    }

    fn group() -> impl Strategy<Value = GroupElement> {
        alg().prop_map(|v| tau(&(v * 1.3)))
    }

    #[test]
    fn hat_basis_vector() {
        let m = hat(&Vector3::x());
        #[rustfmt::skip]
        let expected = Matrix3::new(
            0.0, 0.0,  0.0,
            0.0, 0.0, -1.0,
            0.0, 1.0,  0.0,
        );
        assert_eq!(m, expected);
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
    }

    #[test]
    fn cay_at_origin_is_identity() {
        assert_eq!(cay_so3(&Vector3::zeros()), Rotation::identity());
        assert_eq!(tau(&AlgebraVector::zeros()), GroupElement::identity());
    }

    #[test]
    fn cay_matches_rodrigues_through_tan_half_angle() {
        // cay⁻¹(exp(θ n)) = 2 tan(θ/2) n; so cay(2 x̂) is the π/2 rotation about x.
        let theta = std::f64::consts::FRAC_PI_2;
        let r = cay_so3(&Vector3::new(2.0 * (theta / 2.0).tan(), 0.0, 0.0));
        let (s, c) = theta.sin_cos();
        #[rustfmt::skip]
        let rodrigues = Matrix3::new(
            1.0, 0.0, 0.0,
            0.0,   c,  -s,
            0.0,   s,   c,
        );
        assert_relative_eq!(*r.matrix(), rodrigues, epsilon = 1e-15);
    }

    #[test]
    fn cay_inv_known_values() {
        assert_eq!(
            cay_inv_so3(&Rotation::identity()).unwrap(),
            Vector3::zeros()
        );
        let w = Vector3::new(0.3, -0.2, 0.1);
        assert_relative_eq!(cay_inv_so3(&cay_so3(&w)).unwrap(), w, epsilon = 1e-12);
    }

    #[test]
    fn cay_inv_rejects_half_turn() {
        #[rustfmt::skip]
        let rz = Rotation::from_matrix_unchecked(Matrix3::new(
            -1.0,  0.0, 0.0,
             0.0, -1.0, 0.0,
             0.0,  0.0, 1.0,
        ));
        assert!(matches!(
            cay_inv_so3(&rz),
            Err(LieError::NearPiRotation { .. })
        ));
        assert!(tau_inv(&GroupElement::new(rz, Vector3::zeros())).is_err());
    }

    #[test]
    fn tau_pure_translation() {
        let gamma = Vector3::new(0.4, -1.0, 2.5);
        let g = tau(&AlgebraVector::new(Vector3::zeros(), gamma));
        assert_eq!(g, GroupElement::from_translation(gamma));
        let v = tau_inv(&GroupElement::from_translation(Vector3::new(1.0, 2.0, 3.0))).unwrap();
        assert_eq!(v.to_array(), [0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(
            tau_inv(&GroupElement::identity()).unwrap(),
            AlgebraVector::zeros()
        );
    }

    #[test]
    fn dtau_inv_at_origin_is_identity() {
        assert_eq!(dtau_inv(&AlgebraVector::zeros()), Matrix6::identity());
        let p = CoAlgebraVector::from_array([1.0, -2.0, 3.0, 0.5, 0.25, -4.0]);
        assert_eq!(dtau_inv_star(&AlgebraVector::zeros(), &p), p);
    }

    #[test]
    fn dtau_inv_rotation_block_matches_so3_formula() {
        let w = Vector3::new(0.7, -0.4, 1.1);
        let m = dtau_inv(&AlgebraVector::new(w, Vector3::zeros()));
        let expected = Matrix3::identity() - hat(&w) * 0.5 + w * w.transpose() * 0.25;
        assert_relative_eq!(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            expected,
            epsilon = 1e-15
        );
        // The so(3) formula (I - ŵ/2) δŵ (I + ŵ/2), evaluated as a matrix sandwich.
        for k in 0..3 {
            let d = Vector3::ith(k, 1.0);
            let sandwich = (Matrix3::identity() - hat(&w) * 0.5)
                * hat(&d)
                * (Matrix3::identity() + hat(&w) * 0.5);
            assert_relative_eq!(vee(&sandwich), expected * d, epsilon = 1e-14);
        }
    }

    #[test]
    fn pure_translation_adjoint() {
        let g = GroupElement::from_translation(Vector3::new(1.0, 2.0, -0.5));
        let v = AlgebraVector::from_array([0.3, -0.1, 0.2, 1.0, 0.0, 2.0]);
        let out = g.ad(&v);
        assert_eq!(out.ang, v.ang);
        assert_relative_eq!(out.lin, v.lin + g.pos.cross(&v.ang), epsilon = 1e-15);
        assert_eq!(GroupElement::identity().ad(&v), v);
        let p = CoAlgebraVector::from_array([0.3, -0.1, 0.2, 1.0, 0.0, 2.0]);
        assert_eq!(GroupElement::identity().coad(&p), p);
    }

    proptest! {
        #[test]
        fn hat_is_cross_product(w in vec3(), v in vec3()) {
            let lhs = hat(&w) * v;
            let rhs = Vector3::new(
                w.y * v.z - w.z * v.y,
                w.z * v.x - w.x * v.z,
                w.x * v.y - w.y * v.x,
            );
            prop_assert!((lhs - rhs).amax() < 1e-15);
            prop_assert_eq!(hat(&w) + hat(&w).transpose(), Matrix3::zeros());
            prop_assert_eq!(vee(&hat(&w)), w);
        }

        #[test]
        fn cay_output_is_a_rotation(w in prop::array::uniform3(-10.0..10.0f64)) {
            let r = cay_so3(&Vector3::from(w));
            prop_assert!(r.orthogonality_error() < 1e-13);
        }

        #[test]
        fn tau_round_trip(v in prop::array::uniform6(-2.99..2.99f64)) {
            let v = AlgebraVector::from_array(v);
            prop_assume!(v.ang.norm() < 3.0);
            let back = tau_inv(&tau(&v)).unwrap();
            prop_assert!((back - v).amax() < 1e-12, "{:?} vs {:?}", back, v);
        }

        #[test]
        fn tau_matches_homogeneous_cayley(v in alg()) {
            let x = v.to_homogeneous();
            let lhs = (Matrix4::identity() - x * 0.5).try_inverse().unwrap() * (Matrix4::identity() + x * 0.5);
            prop_assert!((lhs - tau(&v).to_homogeneous()).amax() < 1e-13);
        }

        #[test]
        fn dtau_inv_inverts_finite_difference_derivative(v in alg(), d in alg()) {
            // dτ_v(δ) = (T_v τ · δ) τ(v)⁻¹, by central differences.
            let h = 1e-6;
            let plus = tau(&(v + d * h)).to_homogeneous();
            let minus = tau(&(v - d * h)).to_homogeneous();
            let inv = tau(&v).inverse().to_homogeneous();
            let deriv = (plus - minus) * inv / (2.0 * h);
            let dtau_d = AlgebraVector::from_homogeneous(&deriv).to_vec6();
            let recovered = dtau_inv(&v) * dtau_d;
            prop_assert!((recovered - d.to_vec6()).amax() < 1e-6);
        }

        #[test]
        fn dtau_inv_star_is_the_transpose(v in alg(), p in coalg(), q in alg()) {
            let lhs = dtau_inv_star(&v, &p).pair(&q);
            let rhs = p.to_vec6().dot(&(dtau_inv(&v) * q.to_vec6()));
            prop_assert!((lhs - rhs).abs() < 1e-13 * (1.0 + lhs.abs()));
        }

        #[test]
        fn dtau_inv_star_dv_matches_finite_differences(v in alg(), p in coalg()) {
            let h = 1e-6;
            let jac = dtau_inv_star_dv(&v, &p);
            for k in 0..6 {
                let e = AlgebraVector::from_vec6(&Vector6::ith(k, 1.0));
                let fd = (dtau_inv_star(&(v + e * h), &p) - dtau_inv_star(&(v - e * h), &p)).to_vec6() / (2.0 * h);
                prop_assert!((fd - jac.column(k)).amax() < 1e-7);
            }
        }

        #[test]
        fn momentum_transport_matches_explicit_block_form(v in alg(), p in coalg()) {
            // Ad*_{τ(v)} (dτ⁻¹_v)ᵀ p equals (dτ⁻¹_{-v})ᵀ p, i.e. the block
            // matrix with the signs of the ŵ and γ̂ terms flipped.
            let mu = dtau_inv_star(&v, &p);
            let transported = tau(&v).ad_transpose(&mu);
            let w = v.ang;
            let cp = Matrix3::identity() + hat(&w) * 0.5;
            let mut block = Matrix6::zeros();
            block.fixed_view_mut::<3, 3>(0, 0).copy_from(&(cp + w * w.transpose() * 0.25));
            block.fixed_view_mut::<3, 3>(3, 0).copy_from(&(cp * hat(&v.lin) * 0.5));
            block.fixed_view_mut::<3, 3>(3, 3).copy_from(&cp);
            let explicit = block.transpose() * p.to_vec6();
            prop_assert!((transported.to_vec6() - explicit).amax() < 1e-12);
        }

        #[test]
        fn ad_is_a_homomorphism(g1 in group(), g2 in group(), v in alg()) {
            let lhs = g1.compose(&g2).ad(&v);
            let rhs = g1.ad(&g2.ad(&v));
            prop_assert!((lhs - rhs).amax() < 1e-12);
            // Conjugation in the 4×4 embedding.
            let conj = g1.to_homogeneous() * v.to_homogeneous() * g1.inverse().to_homogeneous();
            prop_assert!((AlgebraVector::from_homogeneous(&conj) - g1.ad(&v)).amax() < 1e-12);
            prop_assert!((g1.ad_matrix() * v.to_vec6() - g1.ad(&v).to_vec6()).amax() < 1e-13);
        }

        #[test]
        fn coadjoint_pairing(g in group(), p in coalg(), v in alg()) {
            let lhs = g.coad(&p).pair(&v);
            let rhs = p.pair(&g.inverse().ad(&v));
            prop_assert!((lhs - rhs).abs() < 1e-13 * (1.0 + lhs.abs()));
            let lhs = g.ad_transpose(&p).pair(&v);
            let rhs = p.pair(&g.ad(&v));
            prop_assert!((lhs - rhs).abs() < 1e-13 * (1.0 + lhs.abs()));
        }

        #[test]
        fn compose_matches_matrix_product(g1 in group(), g2 in group(), g3 in group()) {
            let prod = g1.to_homogeneous() * g2.to_homogeneous();
            prop_assert!((g1.compose(&g2).to_homogeneous() - prod).amax() < 1e-13);
            let left = g1.compose(&g2).compose(&g3).to_homogeneous();
            let right = g1.compose(&g2.compose(&g3)).to_homogeneous();
            prop_assert!((left - right).amax() < 1e-13);
            let e = g1.compose(&g1.inverse()).to_homogeneous();
            prop_assert!((e - Matrix4::identity()).amax() < 1e-13);
            prop_assert_eq!(GroupElement::identity().compose(&g1), g1);
            prop_assert!((g1.between(&g2).to_homogeneous() - g1.inverse().compose(&g2).to_homogeneous()).amax() < 1e-13);
        }
    }
}
