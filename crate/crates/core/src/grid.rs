//! Storage for the discrete field `{g_a^j}` on the rectangular space-time
//! mesh, and extraction of discrete velocities and strains.
//!
//! Nodes are stored row-major: row `j` is the time slice `𝐠^j`, column `a`
//! the space slice `𝐠_a`. The dynamic nodes are `j = 0..n_time` and
//! `a = 0..n_space`; the node one step past either edge is never stored.
//! Which value stands in for the missing velocity or strain at the far edge
//! is recorded in [`EdgeConvention`].

use std::fmt;

use thiserror::Error;

use crate::beam_model::E6;
use crate::liegroup::{tau, tau_inv, AlgebraVector, GroupElement, LieError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("node (j={j}, a={a}) outside the {n_time}x{n_space} grid")]
    IndexOutOfRange {
        j: usize,
        a: usize,
        n_time: usize,
        n_space: usize,
    },
    #[error("at node (j={j}, a={a}): {source}")]
    Chart {
        j: usize,
        a: usize,
        source: LieError,
    },
    #[error("expected {expected} nodes, got {got}")]
    Shape { expected: usize, got: usize },
}

/// Free-end convention that defines quantities living on the missing row or
/// column just outside the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdgeConvention {
    /// Nothing is assumed past the edges.
    #[default]
    None,
    /// Free spatial end: `η_{A-1}^j = E₆`, hence `λ_{A-1}^j = 0`.
    ZeroTraction,
    /// Free temporal end: `ξ_a^{N-1} = 0`, hence `μ_a^{N-1} = 0`.
    ZeroMomentum,
}

impl EdgeConvention {
    /// The same convention seen with time and space exchanged.
    pub fn transposed(self) -> Self {
        match self {
            EdgeConvention::None => EdgeConvention::None,
            EdgeConvention::ZeroTraction => EdgeConvention::ZeroMomentum,
            EdgeConvention::ZeroMomentum => EdgeConvention::ZeroTraction,
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct DiscreteField {
    n_time: usize,
    n_space: usize,
    dt: f64,
    ds: f64,
    edge: EdgeConvention,
    nodes: Vec<GroupElement>,
}

impl fmt::Debug for DiscreteField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteField")
            .field("n_time", &self.n_time)
            .field("n_space", &self.n_space)
            .field("dt", &self.dt)
            .field("ds", &self.ds)
            .field("edge", &self.edge)
            .finish_non_exhaustive()
    }
}

impl DiscreteField {
    pub fn new(
        n_time: usize,
        n_space: usize,
        dt: f64,
        ds: f64,
        nodes: Vec<GroupElement>,
    ) -> Result<Self, GridError> {
        if nodes.len() != n_time * n_space {
            return Err(GridError::Shape {
                expected: n_time * n_space,
                got: nodes.len(),
            });
        }
        Ok(Self {
            n_time,
            n_space,
            dt,
            ds,
            edge: EdgeConvention::None,
            nodes,
        })
    }

    /// Builds a field from equally long time slices.
    pub fn from_rows(rows: &[Vec<GroupElement>], dt: f64, ds: f64) -> Result<Self, GridError> {
        let n_space = rows.first().map_or(0, Vec::len);
        let mut nodes = Vec::with_capacity(rows.len() * n_space);
        for row in rows {
            if row.len() != n_space {
                return Err(GridError::Shape {
                    expected: n_space,
                    got: row.len(),
                });
            }
            nodes.extend_from_slice(row);
        }
        Self::new(rows.len(), n_space, dt, ds, nodes)
    }

    /// Builds a field from equally long space slices.
    pub fn from_columns(cols: &[Vec<GroupElement>], dt: f64, ds: f64) -> Result<Self, GridError> {
        let n_time = cols.first().map_or(0, Vec::len);
        for col in cols {
            if col.len() != n_time {
                return Err(GridError::Shape {
                    expected: n_time,
                    got: col.len(),
                });
            }
        }
        let n_space = cols.len();
        let mut nodes = Vec::with_capacity(n_time * n_space);
        for j in 0..n_time {
            nodes.extend(cols.iter().map(|c| c[j]));
        }
        Self::new(n_time, n_space, dt, ds, nodes)
    }

    pub fn with_edge(mut self, edge: EdgeConvention) -> Self {
        self.edge = edge;
        self
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn ds(&self) -> f64 {
        self.ds
    }

    pub fn edge(&self) -> EdgeConvention {
        self.edge
    }

    pub fn nodes(&self) -> &[GroupElement] {
        &self.nodes
    }

    fn check(&self, j: usize, a: usize) -> Result<(), GridError> {
        if j < self.n_time && a < self.n_space {
            Ok(())
        } else {
            Err(GridError::IndexOutOfRange {
                j,
                a,
                n_time: self.n_time,
                n_space: self.n_space,
            })
        }
    }

    pub fn node(&self, j: usize, a: usize) -> Result<&GroupElement, GridError> {
        self.check(j, a)?;
        Ok(&self.nodes[j * self.n_space + a])
    }

    /// Unchecked access; panics outside the grid.
    pub fn at(&self, j: usize, a: usize) -> &GroupElement {
        assert!(
            j < self.n_time && a < self.n_space,
            "node ({j}, {a}) outside grid"
        );
        &self.nodes[j * self.n_space + a]
    }

    /// `ξ_a^j = τ⁻¹((g_a^j)⁻¹ g_a^{j+1}) / Δt`.
    pub fn xi_at(&self, j: usize, a: usize) -> Result<AlgebraVector, GridError> {
        self.check(j + 1, a)?;
        let rel = self.at(j, a).between(self.at(j + 1, a));
        let v = tau_inv(&rel).map_err(|source| GridError::Chart { j, a, source })?;
        Ok(v * (1.0 / self.dt))
    }

    /// `η_a^j = τ⁻¹((g_a^j)⁻¹ g_{a+1}^j) / Δs`.
    pub fn eta_at(&self, j: usize, a: usize) -> Result<AlgebraVector, GridError> {
        self.check(j, a + 1)?;
        let rel = self.at(j, a).between(self.at(j, a + 1));
        let v = tau_inv(&rel).map_err(|source| GridError::Chart { j, a, source })?;
        Ok(v * (1.0 / self.ds))
    }

    /// Like [`xi_at`](Self::xi_at), but defined on the last row under
    /// [`EdgeConvention::ZeroMomentum`]. `Ok(None)` means undefined.
    pub fn xi_with_edge(&self, j: usize, a: usize) -> Result<Option<AlgebraVector>, GridError> {
        self.check(j, a)?;
        if j + 1 < self.n_time {
            self.xi_at(j, a).map(Some)
        } else if self.edge == EdgeConvention::ZeroMomentum {
            Ok(Some(AlgebraVector::zeros()))
        } else {
            Ok(None)
        }
    }

    /// Like [`eta_at`](Self::eta_at), but defined on the last column under
    /// [`EdgeConvention::ZeroTraction`].
    pub fn eta_with_edge(&self, j: usize, a: usize) -> Result<Option<AlgebraVector>, GridError> {
        self.check(j, a)?;
        if a + 1 < self.n_space {
            self.eta_at(j, a).map(Some)
        } else if self.edge == EdgeConvention::ZeroTraction {
            Ok(Some(E6))
        } else {
            Ok(None)
        }
    }

    /// Node `(j, a)` allowing one step past the far edges when the edge
    /// convention defines it.
    pub fn node_with_edge(&self, j: usize, a: usize) -> Result<GroupElement, GridError> {
        if j < self.n_time && a < self.n_space {
            return Ok(*self.at(j, a));
        }
        match self.edge {
            EdgeConvention::ZeroTraction if j < self.n_time && a == self.n_space => {
                Ok(self.ghost_space_node(j))
            }
            EdgeConvention::ZeroMomentum if j == self.n_time && a < self.n_space => {
                Ok(*self.at(j - 1, a))
            }
            _ => Err(GridError::IndexOutOfRange {
                j,
                a,
                n_time: self.n_time,
                n_space: self.n_space,
            }),
        }
    }

    /// Unstrained extension `g_A^j = g_{A-1}^j τ(Δs E₆)` past the last column.
    pub fn ghost_space_node(&self, j: usize) -> GroupElement {
        self.at(j, self.n_space - 1).compose(&tau(&(E6 * self.ds)))
    }

    pub fn time_slice(&self, j: usize) -> TimeSlice<'_> {
        assert!(j < self.n_time, "time slice {j} outside grid");
        TimeSlice { field: self, j }
    }

    pub fn space_slice(&self, a: usize) -> SpaceSlice<'_> {
        assert!(a < self.n_space, "space slice {a} outside grid");
        SpaceSlice { field: self, a }
    }

    pub fn time_slices(&self) -> impl ExactSizeIterator<Item = TimeSlice<'_>> {
        (0..self.n_time).map(move |j| TimeSlice { field: self, j })
    }

    pub fn space_slices(&self) -> impl ExactSizeIterator<Item = SpaceSlice<'_>> {
        (0..self.n_space).map(move |a| SpaceSlice { field: self, a })
    }

    /// The same nodes with the roles of time and space exchanged: node
    /// `(j, a)` of the result is node `(a, j)` of `self`, and `Δt`, `Δs` swap.
    pub fn transposed(&self) -> DiscreteField {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for a in 0..self.n_space {
            nodes.extend((0..self.n_time).map(|j| *self.at(j, a)));
        }
        DiscreteField {
            n_time: self.n_space,
            n_space: self.n_time,
            dt: self.ds,
            ds: self.dt,
            edge: self.edge.transposed(),
            nodes,
        }
    }

    /// Largest deviation of any stored rotation from orthogonality.
    pub fn max_orthogonality_error(&self) -> f64 {
        self.nodes
            .iter()
            .map(|g| g.rot.orthogonality_error())
            .fold(0.0, f64::max)
    }

    pub fn max_position_norm(&self) -> f64 {
        self.nodes.iter().map(|g| g.pos.amax()).fold(0.0, f64::max)
    }
}

/// Row `𝐠^j` of a field.
#[derive(Clone, Copy)]
pub struct TimeSlice<'f> {
    field: &'f DiscreteField,
    j: usize,
}

impl<'f> TimeSlice<'f> {
    pub fn index(&self) -> usize {
        self.j
    }

    pub fn len(&self) -> usize {
        self.field.n_space
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes(&self) -> &'f [GroupElement] {
        let n = self.field.n_space;
        &self.field.nodes[self.j * n..(self.j + 1) * n]
    }

    pub fn xi(&self, a: usize) -> Result<AlgebraVector, GridError> {
        self.field.xi_at(self.j, a)
    }

    pub fn eta(&self, a: usize) -> Result<AlgebraVector, GridError> {
        self.field.eta_at(self.j, a)
    }
}

/// Column `𝐠_a` of a field.
#[derive(Clone, Copy)]
pub struct SpaceSlice<'f> {
    field: &'f DiscreteField,
    a: usize,
}

impl<'f> SpaceSlice<'f> {
    pub fn index(&self) -> usize {
        self.a
    }

    pub fn len(&self) -> usize {
        self.field.n_time
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &'f GroupElement> + 'f {
        let (field, a) = (self.field, self.a);
        (0..field.n_time).map(move |j| field.at(j, a))
    }

    pub fn to_vec(&self) -> Vec<GroupElement> {
        self.iter().copied().collect()
    }

    pub fn xi(&self, j: usize) -> Result<AlgebraVector, GridError> {
        self.field.xi_at(j, self.a)
    }

    pub fn eta(&self, j: usize) -> Result<AlgebraVector, GridError> {
        self.field.eta_at(j, self.a)
    }
}

/// Grows a chain `g_0 = seed`, `g_{k+1} = g_k τ(step · v_k)`.
pub fn grow_slice(seed: &GroupElement, profile: &[AlgebraVector], step: f64) -> Vec<GroupElement> {
    let mut out = Vec::with_capacity(profile.len() + 1);
    out.push(*seed);
    let mut g = *seed;
    for v in profile {
        g = g.compose(&tau(&(*v * step)));
        out.push(g);
    }
    out
}

/// Rows `j = 0, 1` of a time run: each grown along the beam from its seed
/// pose with the given strain profile (one entry per element).
pub fn build_from_boundary_time(
    seed0: &GroupElement,
    seed1: &GroupElement,
    eta0_profile: &[AlgebraVector],
    eta1_profile: &[AlgebraVector],
    ds: f64,
) -> (Vec<GroupElement>, Vec<GroupElement>) {
    (
        grow_slice(seed0, eta0_profile, ds),
        grow_slice(seed1, eta1_profile, ds),
    )
}

/// Columns `a = 0, 1` of a space run: each grown in time from its seed pose
/// with the given velocity profile.
pub fn build_from_boundary_space(
    seed0: &GroupElement,
    seed1: &GroupElement,
    xi0_profile: &[AlgebraVector],
    xi1_profile: &[AlgebraVector],
    dt: f64,
) -> (Vec<GroupElement>, Vec<GroupElement>) {
    (
        grow_slice(seed0, xi0_profile, dt),
        grow_slice(seed1, xi1_profile, dt),
    )
}
