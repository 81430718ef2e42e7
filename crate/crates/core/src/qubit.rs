//! Two-level density-matrix dynamics.
//!
//! Density matrices are vectorized column-major, `vec(ρ) = [ρ00, ρ10, ρ01, ρ11]`,
//! so that `vec(AρB) = (Bᵀ ⊗ A) vec(ρ)`. The Liouvillian is
//!
//! ```text
//! 𝓛ρ = −i[H, ρ] + Σ_k Γ_k (σ_k ρ σ_k − ρ)
//! ```
//!
//! with Pauli jump operators. Under this convention a z-channel of rate Γ
//! decays the coherence ρ01 as e^{−2Γt} and is the HWHM of the σz
//! autocorrelation line of a transversely driven probe.

use nalgebra::{Matrix2, Matrix4, Vector4};
use num_complex::Complex64;

use crate::error::{domain, ensure_finite, QdmError, Result};

pub type C64 = Complex64;
pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;
pub type Vec4 = Vector4<C64>;

/// Tolerance used when validating density matrices.
pub const STATE_TOL: f64 = 1e-12;
/// Relative singular-value threshold below which a direction counts as null.
pub const NULL_SPACE_TOL: f64 = 1e-8;

const fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity2() -> Mat2 {
    Mat2::identity()
}

pub fn sigma_x() -> Mat2 {
    Mat2::new(c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0))
}

pub fn sigma_y() -> Mat2 {
    Mat2::new(c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0))
}

pub fn sigma_z() -> Mat2 {
    Mat2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0))
}

pub fn vectorize(m: &Mat2) -> Vec4 {
    Vec4::new(m[(0, 0)], m[(1, 0)], m[(0, 1)], m[(1, 1)])
}

pub fn unvectorize(v: &Vec4) -> Mat2 {
    Mat2::new(v[0], v[2], v[1], v[3])
}

/// Kronecker product `a ⊗ b` of two 2×2 matrices.
pub fn kron(a: &Mat2, b: &Mat2) -> Mat4 {
    Mat4::from_fn(|r, col| a[(r / 2, col / 2)] * b[(r % 2, col % 2)])
}

/// Eigenvalues of a Hermitian 2×2 matrix, ascending.
pub fn hermitian_eigenvalues(m: &Mat2) -> (f64, f64) {
    let a = m[(0, 0)].re;
    let d = m[(1, 1)].re;
    let b = m[(0, 1)];
    let mean = 0.5 * (a + d);
    let half_gap = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    (mean - half_gap, mean + half_gap)
}

fn hermitize(m: &Mat2) -> Mat2 {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// A valid qubit state: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(Mat2);

impl DensityMatrix {
    /// Validate and wrap a 2×2 matrix.
    pub fn new(m: Mat2) -> Result<Self> {
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return domain("density matrix has non-finite entries");
        }
        let herm_err = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm_err > STATE_TOL {
            return domain(format!("density matrix not Hermitian (error {herm_err:.3e})"));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return domain(format!("density matrix trace {tr} != 1"));
        }
        let (lo, _) = hermitian_eigenvalues(&m);
        if lo < -STATE_TOL {
            return domain(format!("density matrix not positive (eigenvalue {lo:.3e})"));
        }
        Ok(Self(hermitize(&m)))
    }

    /// Wrap a matrix produced by trace-preserving, Hermiticity-preserving
    /// maps, symmetrizing away round-off.
    pub(crate) fn from_propagated(m: Mat2) -> Self {
        Self(hermitize(&m))
    }

    /// State with Bloch vector `(x, y, z)`, |r| ≤ 1.
    pub fn from_bloch(x: f64, y: f64, z: f64) -> Result<Self> {
        let m = (identity2() + sigma_x() * c(x, 0.0) + sigma_y() * c(y, 0.0) + sigma_z() * c(z, 0.0)) * c(0.5, 0.0);
        Self::new(m)
    }

    /// |0⟩⟨0|, the +1 eigenstate of σz.
    pub fn ground() -> Self {
        Self(Mat2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)))
    }

    /// |1⟩⟨1|.
    pub fn excited() -> Self {
        Self(Mat2::new(c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)))
    }

    /// I/2.
    pub fn maximally_mixed() -> Self {
        Self(identity2() * c(0.5, 0.0))
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.0
    }

    pub fn vectorized(&self) -> Vec4 {
        vectorize(&self.0)
    }

    /// Tr[Aρ].
    pub fn expectation(&self, op: &Mat2) -> C64 {
        (op * self.0).trace()
    }

    /// ⟨σz⟩ = ρ00 − ρ11.
    pub fn sigma_z(&self) -> f64 {
        self.0[(0, 0)].re - self.0[(1, 1)].re
    }

    pub fn bloch(&self) -> [f64; 3] {
        [2.0 * self.0[(0, 1)].re, -2.0 * self.0[(0, 1)].im, self.sigma_z()]
    }

    /// Tr ρ².
    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        hermitian_eigenvalues(&self.0)
    }

    /// Von Neumann entropy in bits.
    pub fn entropy_bits(&self) -> f64 {
        let (a, b) = self.eigenvalues();
        binary_term(a) + binary_term(b)
    }

    /// Largest violation of the density-matrix invariants.
    pub fn invariant_error(&self) -> f64 {
        let herm = (self.0 - self.0.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let tr = (self.0.trace() - c(1.0, 0.0)).norm();
        let neg = (-self.eigenvalues().0).max(0.0);
        herm.max(tr).max(neg)
    }
}

fn binary_term(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p * p.log2()
    }
}

/// Probe Hamiltonian `H = εσx + Δσz` (ħ = 1, angular-frequency units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeHamiltonian {
    pub epsilon: f64,
    pub delta: f64,
}

impl ProbeHamiltonian {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        ensure_finite("epsilon", epsilon)?;
        ensure_finite("delta", delta)?;
        Ok(Self { epsilon, delta })
    }

    pub fn matrix(&self) -> Mat2 {
        sigma_x() * c(self.epsilon, 0.0) + sigma_z() * c(self.delta, 0.0)
    }

    /// Eigenvalue splitting `2√(ε² + Δ²)`.
    pub fn transition_energy(&self) -> f64 {
        2.0 * self.epsilon.hypot(self.delta)
    }

    /// Add `shift` to the σz coefficient.
    pub fn with_delta_shift(&self, shift: f64) -> Self {
        Self {
            epsilon: self.epsilon,
            delta: self.delta + shift,
        }
    }

    /// Shift the transition energy by `shift` while keeping the Hamiltonian's
    /// axis in the x–z plane. A null Hamiltonian is shifted along x.
    pub fn with_transition_shift(&self, shift: f64) -> Self {
        let norm = self.epsilon.hypot(self.delta);
        let new_norm = norm + 0.5 * shift;
        if norm == 0.0 {
            return Self {
                epsilon: new_norm,
                delta: 0.0,
            };
        }
        let scale = new_norm / norm;
        Self {
            epsilon: self.epsilon * scale,
            delta: self.delta * scale,
        }
    }
}

/// `ε·σx + Δ·σz` as a matrix.
pub fn build_hamiltonian(epsilon: f64, delta: f64) -> Result<Mat2> {
    Ok(ProbeHamiltonian::new(epsilon, delta)?.matrix())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn pauli(self) -> Mat2 {
        match self {
            Axis::X => sigma_x(),
            Axis::Y => sigma_y(),
            Axis::Z => sigma_z(),
        }
    }
}

/// Pauli dephasing/depolarizing channel `Γ(σρσ − ρ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoherenceChannel {
    pub axis: Axis,
    pub rate: f64,
}

impl DecoherenceChannel {
    pub fn new(axis: Axis, rate: f64) -> Result<Self> {
        ensure_finite("rate", rate)?;
        if rate < 0.0 {
            return domain(format!("decoherence rate must be >= 0, got {rate}"));
        }
        Ok(Self { axis, rate })
    }

    pub fn dephasing(rate: f64) -> Result<Self> {
        Self::new(Axis::Z, rate)
    }
}

/// Generator of the open-system evolution, acting on `vec(ρ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Liouvillian {
    matrix: Mat4,
}

impl Liouvillian {
    /// Wrap an arbitrary superoperator (no physicality check).
    pub fn from_matrix(matrix: Mat4) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.matrix
    }

    /// `e^{𝓛t}`.
    pub fn propagator(&self, t: f64) -> Result<Mat4> {
        ensure_finite("t", t)?;
        if t < 0.0 {
            return domain(format!("evolution time must be >= 0, got {t}"));
        }
        if t == 0.0 {
            return Ok(Mat4::identity());
        }
        Ok((self.matrix * c(t, 0.0)).exp())
    }

    pub fn apply(&self, m: &Mat2) -> Mat2 {
        unvectorize(&(self.matrix * vectorize(m)))
    }
}

/// Assemble `𝓛` for `H` and a set of Pauli channels.
pub fn build_liouvillian(h: &ProbeHamiltonian, channels: &[DecoherenceChannel]) -> Result<Liouvillian> {
    let hm = h.matrix();
    let id = identity2();
    let minus_i = c(0.0, -1.0);
    let mut l = (kron(&id, &hm) - kron(&hm.transpose(), &id)) * minus_i;
    for ch in channels {
        if !(ch.rate >= 0.0) || !ch.rate.is_finite() {
            return domain(format!("decoherence rate must be finite and >= 0, got {}", ch.rate));
        }
        let s = ch.axis.pauli();
        l += (kron(&s.transpose(), &s) - Mat4::identity()) * c(ch.rate, 0.0);
    }
    Ok(Liouvillian { matrix: l })
}

/// `ρ(t) = e^{𝓛t} ρ`.
pub fn evolve(rho: &DensityMatrix, l: &Liouvillian, t: f64) -> Result<DensityMatrix> {
    let p = l.propagator(t)?;
    Ok(apply_propagator(&p, rho))
}

/// Apply a precomputed propagator to a state.
pub fn apply_propagator(p: &Mat4, rho: &DensityMatrix) -> DensityMatrix {
    DensityMatrix::from_propagated(unvectorize(&(p * rho.vectorized())))
}

/// Null-space dimension of `𝓛` and its singular values (descending).
pub fn null_space(l: &Liouvillian) -> (usize, Vec<f64>) {
    let svd = l.matrix.svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let scale = sv[0].max(f64::MIN_POSITIVE);
    let dim = sv.iter().filter(|&&s| s <= NULL_SPACE_TOL * scale).count();
    // A zero generator has a four-dimensional null space.
    let dim = if sv[0] == 0.0 { 4 } else { dim };
    (dim, sv)
}

/// Unique stationary state of `𝓛`, normalized to unit trace.
pub fn steady_state(l: &Liouvillian) -> Result<DensityMatrix> {
    let (dim, sv) = null_space(l);
    if dim > 1 {
        return Err(QdmError::NonUniqueSteadyState { dimension: dim });
    }
    if dim == 0 {
        return Err(QdmError::NoSteadyState {
            smallest: *sv.last().unwrap_or(&f64::NAN),
        });
    }
    let svd = l.matrix.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("four singular values");
    let v: Vec4 = v_t.row(idx).adjoint();
    let tr = v[0] + v[3];
    if tr.norm() < 1e-12 {
        return Err(QdmError::NoSteadyState { smallest: sv[3] });
    }
    Ok(DensityMatrix::from_propagated(unvectorize(&(v / tr))))
}

fn check_grid(tau_grid: &[f64]) -> Result<()> {
    for (i, &t) in tau_grid.iter().enumerate() {
        ensure_finite("tau", t)?;
        if t < 0.0 {
            return domain(format!("tau grid must be nonnegative, got {t}"));
        }
        if i > 0 && t < tau_grid[i - 1] {
            return domain("tau grid must be ascending");
        }
    }
    Ok(())
}

/// `Tr[A e^{𝓛τ} X]` for each τ, with `X` any operator.
pub(crate) fn operator_trace(l: &Liouvillian, op: &Mat2, x: &Mat2, tau_grid: &[f64]) -> Result<Vec<C64>> {
    check_grid(tau_grid)?;
    let xv = vectorize(x);
    tau_grid
        .iter()
        .map(|&t| {
            let p = l.propagator(t)?;
            Ok((op * unvectorize(&(p * xv))).trace())
        })
        .collect()
}

/// `Tr[σz e^{𝓛τ} ρ0]` on an ascending, nonnegative grid.
pub fn sigma_z_expectation_trace(l: &Liouvillian, rho0: &DensityMatrix, tau_grid: &[f64]) -> Result<Vec<f64>> {
    Ok(operator_trace(l, &sigma_z(), rho0.matrix(), tau_grid)?
        .into_iter()
        .map(|z| z.re)
        .collect())
}
