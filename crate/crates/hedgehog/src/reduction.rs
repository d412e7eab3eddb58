//! Reduction of the second variation to radial problems.
//!
//! The chain has three stages, each certified numerically rather than taken
//! on faith: a Fourier split in φ (energy is additive over azimuthal modes),
//! a linear change of variables that decouples each mode energy into two
//! copies of a functional `Φ_k` of three amplitudes, and a projection onto
//! the spherical eigenbases in θ that turns `Φ_k` into a sum of banded radial
//! forms `Φ_{0,i}` handled by `quadforms`.
//!
//! Fields are represented by their frame coefficients throughout; the moving
//! frame `E_0..E_4` appears as explicit matrices only in [`frame_basis`],
//! which exists so the differentiation tables hard-coded into the quadrature
//! integrands can be unit-tested against direct matrix algebra.

use std::f64::consts::PI;
use std::io::{BufRead, BufWriter, Write as IoWrite};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angular::{basis_mode, AngularError, AngularGrid};
use crate::profile::{fmt_g17, RadialGrid, RadialProfile};
use crate::quadforms::{
    eval_import, eval_phi0i_fd, eval_phik, import_rows_quadrature, Field2D, QuadError,
    TripleRadial,
};

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("a mode with k = {0} is already present")]
    DuplicateMode(usize),
    #[error("nu fields must vanish identically for k = 0")]
    NuNotZeroForK0,
    #[error("azimuthal wave number {0} out of supported range 0..=4")]
    BadHarmonic(usize),
    #[error("all ten fields of a mode must share one shape")]
    ShapeMismatch,
    #[error("operation requires the {0} representation")]
    WrongRepresentation(&'static str),
    #[error("frame field file malformed: {0}")]
    BadFile(String),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Angular(#[from] AngularError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// the moving frame
// ---------------------------------------------------------------------------

/// Unit radial, polar and azimuthal directions `(n, m, p)` at `(θ, φ)`.
/// `m = ∂θ n` and `p` is oriented so that `∂φ n = -sinθ p`.
pub fn frame_directions(theta: f64, phi: f64) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    (
        [st * cp, st * sp, ct],
        [ct * cp, ct * sp, -st],
        [sp, -cp, 0.0],
    )
}

fn sym_outer(a: &[f64; 3], b: &[f64; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[i] * b[j] + b[i] * a[j];
        }
    }
    m
}

/// The five symmetric traceless basis matrices `E_0..E_4` at `(θ, φ)`:
/// `E_0 = n⊗n - Id/3`, `E_1 = n⊗p + p⊗n`, `E_2 = n⊗m + m⊗n`,
/// `E_3 = m⊗p + p⊗m`, `E_4 = m⊗m - p⊗p`.
pub fn frame_basis(theta: f64, phi: f64) -> [[[f64; 3]; 3]; 5] {
    let (n, m, p) = frame_directions(theta, phi);
    let mut e0 = [[0.0; 3]; 3];
    let mut e4 = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            e0[i][j] = n[i] * n[j] - if i == j { 1.0 / 3.0 } else { 0.0 };
            e4[i][j] = m[i] * m[j] - p[i] * p[j];
        }
    }
    [e0, sym_outer(&n, &p), sym_outer(&n, &m), sym_outer(&m, &p), e4]
}

// ---------------------------------------------------------------------------
// frame fields and their Fourier modes
// ---------------------------------------------------------------------------

/// One azimuthal Fourier mode of a frame field: the ten amplitudes
/// `w_i = μ^i cos kφ + ν^i sin kφ`.
#[derive(Debug, Clone)]
pub struct FrameMode {
    pub k: usize,
    pub mu: [Field2D; 5],
    pub nu: [Field2D; 5],
}

impl FrameMode {
    pub fn new(k: usize, mu: [Field2D; 5], nu: [Field2D; 5]) -> Result<Self, ReductionError> {
        if k > 4 {
            return Err(ReductionError::BadHarmonic(k));
        }
        let (nr, nq) = (mu[0].nr(), mu[0].nq());
        if mu
            .iter()
            .chain(nu.iter())
            .any(|f| f.nr() != nr || f.nq() != nq)
        {
            return Err(ReductionError::ShapeMismatch);
        }
        if k == 0 && nu.iter().any(|f| f.max_abs() > 0.0) {
            return Err(ReductionError::NuNotZeroForK0);
        }
        Ok(FrameMode { k, mu, nu })
    }
}

/// A band-limited field `V = Σ_i w_i E_i` stored as its φ-Fourier modes.
#[derive(Debug, Clone, Default)]
pub struct FrameField {
    modes: Vec<FrameMode>,
}

impl FrameField {
    pub fn new() -> Self {
        FrameField { modes: Vec::new() }
    }

    pub fn push(&mut self, mode: FrameMode) -> Result<(), ReductionError> {
        if self.modes.iter().any(|m| m.k == mode.k) {
            return Err(ReductionError::DuplicateMode(mode.k));
        }
        self.modes.push(mode);
        self.modes.sort_by_key(|m| m.k);
        Ok(())
    }

    pub fn modes(&self) -> &[FrameMode] {
        &self.modes
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Squared H¹ norm in the normalization of the energy display (gradient
    /// rows plus plain mass, no bulk potential).
    pub fn h1_norm2(&self, prof: &RadialProfile, ang: &AngularGrid) -> f64 {
        self.modes
            .iter()
            .map(|m| import_rows_quadrature(m.k, prof, ang, &m.mu, &m.nu, false, true))
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Fourier split and mode additivity
// ---------------------------------------------------------------------------

/// Evaluate the full second-variation energy by resolving the field on a
/// uniform φ grid and integrating the energy density pointwise.  This is the
/// independent cross-path for the additivity certificate: it never touches
/// the per-mode machinery.
pub fn eval_energy_phi_resolved(
    field: &FrameField,
    prof: &RadialProfile,
    ang: &AngularGrid,
    n_phi: usize,
) -> f64 {
    let grid = prof.grid();
    let nr = grid.nodes().len();
    let nq = ang.order();
    let p = prof.params();
    let drad: Vec<([Vec<f64>; 5], [Vec<f64>; 5])> = field
        .modes
        .iter()
        .map(|m| {
            (
                std::array::from_fn(|i| m.mu[i].radial_derivative(grid)),
                std::array::from_fn(|i| m.nu[i].radial_derivative(grid)),
            )
        })
        .collect();
    let mut total = 0.0;
    let dphi = 2.0 * PI / n_phi as f64;
    let mut integrand = vec![0.0; nr];
    for ip in 0..n_phi {
        let phi = ip as f64 * dphi;
        for ir in 0..nr {
            let r = grid.nodes()[ir];
            let u = prof.u()[ir];
            let (fh, f, ft) = (p.bulk_f_hat(u), p.bulk_f(u), p.bulk_f_tilde(u));
            let mut acc_r2 = 0.0;
            let mut acc_plain = 0.0;
            for iq in 0..nq {
                let wq = ang.weights()[iq];
                let s = ang.sin_theta()[iq];
                let c = ang.x()[iq];
                let mut w = [0.0f64; 5];
                let mut t = [0.0f64; 5];
                let mut g = [0.0f64; 5];
                let mut dphi_w = [0.0f64; 5];
                for (mi, mode) in field.modes.iter().enumerate() {
                    let kf = mode.k as f64;
                    let (sk, ck) = (kf * phi).sin_cos();
                    for j in 0..5 {
                        w[j] += mode.mu[j].at(ir, iq) * ck + mode.nu[j].at(ir, iq) * sk;
                        t[j] += mode.mu[j].dth(ir, iq) * ck + mode.nu[j].dth(ir, iq) * sk;
                        g[j] += drad[mi].0[j][ir * nq + iq] * ck
                            + drad[mi].1[j][ir * nq + iq] * sk;
                        dphi_w[j] +=
                            kf * (-mode.mu[j].at(ir, iq) * sk + mode.nu[j].at(ir, iq) * ck);
                    }
                }
                acc_r2 += wq
                    * (g[0] * g[0] / 3.0
                        + g[1] * g[1]
                        + g[2] * g[2]
                        + g[3] * g[3]
                        + g[4] * g[4]
                        + fh * w[0] * w[0] / 3.0
                        + f * (w[1] * w[1] + w[2] * w[2])
                        + ft * (w[3] * w[3] + w[4] * w[4]));
                let b0 = t[0] - 3.0 * w[2];
                let b1 = t[1] - w[3];
                let b2 = t[2] + w[0] - w[4];
                let b3 = t[3] + w[1];
                let b4 = t[4] + w[2];
                let p0 = dphi_w[0] + 3.0 * s * w[1];
                let p1 = dphi_w[1] - s * w[0] - c * w[2] - s * w[4];
                let p2 = dphi_w[2] + c * w[1] + s * w[3];
                let p3 = dphi_w[3] - s * w[2] - 2.0 * c * w[4];
                let p4 = dphi_w[4] + s * w[1] + 2.0 * c * w[3];
                acc_plain += wq
                    * (b0 * b0 / 3.0 + b1 * b1 + b2 * b2 + b3 * b3 + b4 * b4
                        + (p0 * p0 / 3.0 + p1 * p1 + p2 * p2 + p3 * p3 + p4 * p4) / (s * s));
            }
            integrand[ir] = r * r * acc_r2 + acc_plain;
        }
        total += dphi * grid.integrate(&integrand);
    }
    total
}

/// Which five-field representation a [`ModeBlock`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Representation {
    /// `ξ_0..ξ_4`: amplitudes of `(ξ0 E0 + ξ2 E2 + ξ4 E4) cos kφ +
    /// (ξ1 E1 + ξ3 E3) sin kφ`.
    Xi,
    /// `v_0..v_4`: the decoupling variables of the change of variables.
    V,
}

/// Five radial-angular amplitude fields of one azimuthal mode, in either
/// representation.
#[derive(Debug, Clone)]
pub struct ModeBlock {
    pub k: usize,
    pub rep: Representation,
    pub fields: [Field2D; 5],
}

/// Result of [`fourier_split`]: the per-mode blocks plus the additivity
/// certificate comparing the φ-resolved energy against the mode sum.
#[derive(Debug)]
pub struct FourierSplit {
    pub q_total: f64,
    pub per_mode: Vec<(usize, f64)>,
    pub gap: f64,
    pub blocks: Vec<ModeBlock>,
}

/// Split a frame field into per-mode ξ-blocks and certify the energy
/// additivity `Q(V) = Σ_k Q(V_k)`.
///
/// A mode with `k ≥ 1` contributes two blocks — the cos-aligned amplitudes
/// `(μ⁰, ν¹, μ², ν³, μ⁴)` and the quarter-period partner
/// `(−ν⁰, μ¹, −ν², μ³, −ν⁴)` — whose `Q_k` values sum to `Q(V_k)` exactly.
/// A `k = 0` mode yields a single block holding all five cos-amplitudes,
/// with `Q(V_0) = 2 Q_0(block)` (the φ-average of `cos² 0φ` is `2π`, while
/// `Q_k` carries the `π` of the oscillatory harmonics).
pub fn fourier_split(
    field: &FrameField,
    prof: &RadialProfile,
    ang: &AngularGrid,
    n_phi: usize,
) -> Result<FourierSplit, ReductionError> {
    assert!(n_phi > 8, "phi grid must over-resolve products of k <= 4");
    let mut per_mode = Vec::new();
    let mut blocks = Vec::new();
    let mut q_sum = 0.0;
    for mode in &field.modes {
        let q = eval_import(mode.k, prof, ang, &mode.mu, &mode.nu)?;
        per_mode.push((mode.k, q));
        q_sum += q;
        if mode.k == 0 {
            blocks.push(ModeBlock {
                k: 0,
                rep: Representation::Xi,
                fields: mode.mu.clone(),
            });
            continue;
        }
        let neg = |f: &Field2D| {
            let mut g = f.clone();
            g.scale(-1.0);
            g
        };
        blocks.push(ModeBlock {
            k: mode.k,
            rep: Representation::Xi,
            fields: [
                mode.mu[0].clone(),
                mode.nu[1].clone(),
                mode.mu[2].clone(),
                mode.nu[3].clone(),
                mode.mu[4].clone(),
            ],
        });
        blocks.push(ModeBlock {
            k: mode.k,
            rep: Representation::Xi,
            fields: [
                neg(&mode.nu[0]),
                mode.mu[1].clone(),
                neg(&mode.nu[2]),
                mode.mu[3].clone(),
                neg(&mode.nu[4]),
            ],
        });
    }
    let q_total = eval_energy_phi_resolved(field, prof, ang, n_phi);
    Ok(FourierSplit {
        q_total,
        per_mode,
        gap: (q_total - q_sum).abs(),
        blocks,
    })
}

/// `Q_k` of a ξ-amplitude block.
pub fn qk_value(
    block: &ModeBlock,
    prof: &RadialProfile,
    ang: &AngularGrid,
) -> Result<f64, ReductionError> {
    if block.rep != Representation::Xi {
        return Err(ReductionError::WrongRepresentation("xi"));
    }
    qk_rows_quadrature(block.k, &block.fields, prof, ang)
}

fn xi_bracket(b: usize, kf: f64, s: f64, c: f64, x: &[f64; 5]) -> f64 {
    match b {
        0 => kf * x[1] - s * x[0] - c * x[2] - s * x[4],
        1 => kf * x[3] - s * x[2] - 2.0 * c * x[4],
        2 => -kf * x[0] + 3.0 * s * x[1],
        3 => -kf * x[2] + c * x[1] + s * x[3],
        _ => -kf * x[4] + s * x[1] + 2.0 * c * x[3],
    }
}

const XI_BRACKET_NAMES: [&str; 5] = [
    "k xi1 - s xi0 - c xi2 - s xi4",
    "k xi3 - s xi2 - 2c xi4",
    "k xi0 - 3s xi1",
    "k xi2 - c xi1 - s xi3",
    "k xi4 - s xi1 - 2c xi3",
];

/// The quadratic functional `Q_k` on an amplitude 5-tuple, by its explicit
/// row quadrature with the uniform `π` prefactor.  Unlike [`eval_import`]
/// this treats `k` as a formal parameter, so the domination check can
/// compare adjacent harmonics beyond the band limit and `k = 0` needs no
/// special casing.
fn qk_rows_quadrature(
    k: usize,
    xi: &[Field2D; 5],
    prof: &RadialProfile,
    ang: &AngularGrid,
) -> Result<f64, ReductionError> {
    let grid = prof.grid();
    let nr = grid.nodes().len();
    let nq = ang.order();
    if xi.iter().any(|f| f.nr() != nr || f.nq() != nq) {
        return Err(ReductionError::ShapeMismatch);
    }
    let kf = k as f64;
    let scale = xi.iter().map(Field2D::max_abs).fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Ok(0.0);
    }
    // The azimuthal rows divide by sin²θ, so their brackets must vanish at
    // the poles; same tolerance rationale as the import quadrature.
    let tol = 1e-6 * scale;
    let mut row = vec![0.0; nq];
    for (b, name) in XI_BRACKET_NAMES.iter().enumerate() {
        let mut worst0 = 0.0f64;
        let mut worstp = 0.0f64;
        for ir in 0..nr {
            for (iq, slot) in row.iter_mut().enumerate() {
                let s = ang.sin_theta()[iq];
                let c = ang.x()[iq];
                let x: [f64; 5] = std::array::from_fn(|j| xi[j].at(ir, iq));
                *slot = xi_bracket(b, kf, s, c, &x);
            }
            worst0 = worst0.max(ang.extrapolate(&row, true).abs());
            worstp = worstp.max(ang.extrapolate(&row, false).abs());
        }
        for (worst, place) in [(worst0, "theta = 0"), (worstp, "theta = pi")] {
            if worst > tol {
                return Err(QuadError::SingularWeight {
                    field: name,
                    place,
                    value: worst,
                    scale,
                }
                .into());
            }
        }
    }
    let dxi: Vec<Vec<f64>> = xi.iter().map(|f| f.radial_derivative(grid)).collect();
    let p = prof.params();
    let mut integrand = vec![0.0; nr];
    for ir in 0..nr {
        let r = grid.nodes()[ir];
        let u = prof.u()[ir];
        let (fh, f, ft) = (p.bulk_f_hat(u), p.bulk_f(u), p.bulk_f_tilde(u));
        let base = ir * nq;
        let mut acc_r2 = 0.0;
        let mut acc_plain = 0.0;
        for iq in 0..nq {
            let wq = ang.weights()[iq];
            let s = ang.sin_theta()[iq];
            let c = ang.x()[iq];
            let x: [f64; 5] = std::array::from_fn(|j| xi[j].at(ir, iq));
            let t: [f64; 5] = std::array::from_fn(|j| xi[j].dth(ir, iq));
            let g: [f64; 5] = std::array::from_fn(|j| dxi[j][base + iq]);
            acc_r2 += wq
                * (g[0] * g[0] / 3.0
                    + g[1] * g[1]
                    + g[2] * g[2]
                    + g[3] * g[3]
                    + g[4] * g[4]
                    + fh * x[0] * x[0] / 3.0
                    + f * (x[1] * x[1] + x[2] * x[2])
                    + ft * (x[3] * x[3] + x[4] * x[4]));
            let e0 = t[0] - 3.0 * x[2];
            let e2 = t[2] + x[0] - x[4];
            let e4 = t[4] + x[2];
            let o1 = t[1] - x[3];
            let o3 = t[3] + x[1];
            let mut az = 0.0;
            for b in 0..5 {
                let v = xi_bracket(b, kf, s, c, &x);
                az += if b == 2 { v * v / 3.0 } else { v * v };
            }
            acc_plain += wq
                * (e0 * e0 / 3.0 + e2 * e2 + e4 * e4 + o1 * o1 + o3 * o3 + az / (s * s));
        }
        integrand[ir] = r * r * acc_r2 + acc_plain;
    }
    Ok(PI * grid.integrate(&integrand))
}

/// Report of [`mode_domination_check`].
#[derive(Debug, Clone, Serialize)]
pub struct DominationReport {
    pub k: usize,
    pub q_k: f64,
    pub q_tilde: f64,
    pub margin: f64,
}

/// Certify that reattaching a mode's amplitudes to the harmonic `k - 1`
/// cannot increase the energy (`k >= 3`): returns `Q_k`, `Q_{k-1}` on the
/// same amplitudes, and the margin `Q_k - Q_{k-1} >= 0`.
pub fn mode_domination_check(
    block: &ModeBlock,
    prof: &RadialProfile,
    ang: &AngularGrid,
) -> Result<DominationReport, ReductionError> {
    if block.k < 3 {
        return Err(ReductionError::BadHarmonic(block.k));
    }
    if block.rep != Representation::Xi {
        return Err(ReductionError::WrongRepresentation("xi"));
    }
    let q_k = qk_rows_quadrature(block.k, &block.fields, prof, ang)?;
    let q_tilde = qk_rows_quadrature(block.k - 1, &block.fields, prof, ang)?;
    Ok(DominationReport {
        k: block.k,
        q_k,
        q_tilde,
        margin: q_k - q_tilde,
    })
}

// ---------------------------------------------------------------------------
// change of variables and the Q_k split
// ---------------------------------------------------------------------------

/// Convert a block to the other representation.  The map is the linear
/// bijection `v0 = ξ0/2, v1 = (ξ1+ξ2)/2, v2 = (ξ1−ξ2)/2, v3 = (ξ3+ξ4)/2,
/// v4 = (ξ3−ξ4)/2` and its inverse.
pub fn change_vars(block: &ModeBlock) -> ModeBlock {
    let f = &block.fields;
    let combine = |a: &Field2D, ca: f64, b: &Field2D, cb: f64| {
        let mut out = Field2D::zeros_like(a);
        out.add_scaled(ca, a);
        out.add_scaled(cb, b);
        out
    };
    match block.rep {
        Representation::Xi => {
            let mut v0 = f[0].clone();
            v0.scale(0.5);
            ModeBlock {
                k: block.k,
                rep: Representation::V,
                fields: [
                    v0,
                    combine(&f[1], 0.5, &f[2], 0.5),
                    combine(&f[1], 0.5, &f[2], -0.5),
                    combine(&f[3], 0.5, &f[4], 0.5),
                    combine(&f[3], 0.5, &f[4], -0.5),
                ],
            }
        }
        Representation::V => {
            let mut xi0 = f[0].clone();
            xi0.scale(2.0);
            ModeBlock {
                k: block.k,
                rep: Representation::Xi,
                fields: [
                    xi0,
                    combine(&f[1], 1.0, &f[2], 1.0),
                    combine(&f[1], 1.0, &f[2], -1.0),
                    combine(&f[3], 1.0, &f[4], 1.0),
                    combine(&f[3], 1.0, &f[4], -1.0),
                ],
            }
        }
    }
}

/// Certify the split identity `Q_k = 2Φ_k(ṽ0, ṽ1, ṽ3) + 2Φ_k(v0, v2, v4)`
/// on a v-representation block, where the tilde triple is reflected about
/// `θ = π/2` with a sign flip on `v3`.  Returns `(Q_k, split, gap)`.
pub fn qk_split_check(
    block: &ModeBlock,
    prof: &RadialProfile,
    ang: &AngularGrid,
) -> Result<(f64, f64, f64), ReductionError> {
    if block.rep != Representation::V {
        return Err(ReductionError::WrongRepresentation("v"));
    }
    let xi = change_vars(block);
    let q_k = qk_value(&xi, prof, ang)?;
    let f = &block.fields;
    let v0r = f[0].reflect_theta();
    let v1r = f[1].reflect_theta();
    let mut v3r = f[3].reflect_theta();
    v3r.scale(-1.0);
    let phi_tilde = eval_phik(block.k, prof, ang, &v0r, &v1r, &v3r)?;
    let phi_plain = eval_phik(block.k, prof, ang, &f[0], &f[2], &f[4])?;
    let split = 2.0 * phi_tilde + 2.0 * phi_plain;
    Ok((q_k, split, q_k - split))
}

// ---------------------------------------------------------------------------
// θ-projection onto the spherical bases
// ---------------------------------------------------------------------------

/// One projected basis contribution of [`theta_project`].
#[derive(Debug, Clone)]
pub struct ProjectedMode {
    /// Basis index within the (k, m) families.
    pub i: usize,
    /// Index of the radial form `Φ_{0,j}` this triple feeds.
    pub j: usize,
    /// π-weighted value of that radial form on the projected triple.
    pub value: f64,
    pub triple: TripleRadial,
}

/// Result of [`theta_project`]: the coefficient triples and the sum
/// certificate `Φ_k(v) = π Σ_i Φ_{0,j(i)}(w_i)`.
#[derive(Debug)]
pub struct ThetaProjection {
    pub k: usize,
    pub i_max: usize,
    pub lhs: f64,
    pub partial_sum: f64,
    pub gap: f64,
    pub contributions: Vec<ProjectedMode>,
}

/// Project the amplitude fields of `Φ_k` onto the spherical eigenbases and
/// certify the decomposition into radial forms.  For `k = 2` the radial
/// index is shifted (`j = i + 1`); for `k = 0` the constant angular mode
/// contributes a leading `Φ_{0,0}` term.
pub fn theta_project(
    k: usize,
    v0: &Field2D,
    v2: &Field2D,
    v4: &Field2D,
    i_max: usize,
    prof: &RadialProfile,
    ang: &AngularGrid,
) -> Result<ThetaProjection, ReductionError> {
    if k > 2 {
        return Err(ReductionError::BadHarmonic(k));
    }
    let lhs = eval_phik(k, prof, ang, v0, v2, v4)?;
    let grid = prof.grid();
    let nr = grid.nodes().len();
    let nq = ang.order();
    let project = |field: &Field2D, basis: &[f64], norm2: f64| -> Vec<f64> {
        let mut w = vec![0.0; nr];
        for (ir, slot) in w.iter_mut().enumerate() {
            let mut acc = 0.0;
            for iq in 0..nq {
                acc += ang.weights()[iq] * field.at(ir, iq) * basis[iq];
            }
            *slot = acc / norm2;
        }
        w
    };
    let mut contributions = Vec::new();
    let mut sum = 0.0;
    if k == 0 {
        // constant angular mode; <1, 1> = 2
        let ones = vec![1.0; nq];
        let w00 = project(v0, &ones, 2.0);
        let triple = TripleRadial::new(w00, vec![0.0; nr], vec![0.0; nr])?;
        let value = PI * eval_phi0i_fd(0, prof, &triple)?;
        sum += value;
        contributions.push(ProjectedMode {
            i: 0,
            j: 0,
            value,
            triple,
        });
    }
    for i in 1..=i_max {
        let j = if k == 2 { i + 1 } else { i };
        let mut comps = [vec![0.0; nr], vec![0.0; nr], vec![0.0; nr]];
        for (slot, m) in [0usize, 2, 4].iter().enumerate() {
            let field = match m {
                0 => v0,
                2 => v2,
                _ => v4,
            };
            match basis_mode(k as u8, *m as u8, i, ang) {
                Ok(mode) => comps[slot] = project(field, &mode.values, mode.norm2),
                Err(AngularError::DegenerateMode { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        let [w0, w2, w4] = comps;
        let triple = TripleRadial::new(w0, w2, w4)?;
        let value = PI * eval_phi0i_fd(j, prof, &triple)?;
        sum += value;
        contributions.push(ProjectedMode {
            i,
            j,
            value,
            triple,
        });
    }
    Ok(ThetaProjection {
        k,
        i_max,
        lhs,
        partial_sum: sum,
        gap: lhs - sum,
        contributions,
    })
}

// ---------------------------------------------------------------------------
// translation fields
// ---------------------------------------------------------------------------

/// The frame coefficients of `α · ∇H` for the melting-hedgehog map `H`:
/// `w0 = u'(α·n)`, `w1 = (u/r)(α·p)`, `w2 = (u/r)(α·m)`, assembled into the
/// `k = 0` (axial part) and `k = 1` (in-plane part) Fourier modes.
pub fn translation_field(
    alpha: [f64; 3],
    prof: &RadialProfile,
    ang: &AngularGrid,
) -> Result<FrameField, ReductionError> {
    let grid = prof.grid();
    let nq = ang.order();
    let du = prof.du();
    let u_over_r: Vec<f64> = prof
        .u()
        .iter()
        .zip(grid.nodes())
        .map(|(&u, &r)| if r == 0.0 { 0.0 } else { u / r })
        .collect();
    let sin: Vec<f64> = ang.sin_theta().to_vec();
    let dsin: Vec<f64> = ang.x().to_vec();
    let cos: Vec<f64> = ang.x().to_vec();
    let dcos: Vec<f64> = ang.sin_theta().iter().map(|s| -s).collect();
    let ones = vec![1.0; nq];
    let zeros = vec![0.0; nq];
    let mut field = FrameField::new();
    let [ax, ay, az] = alpha;
    if az != 0.0 {
        let mut mu: [Field2D; 5] = std::array::from_fn(|_| Field2D::zeros(grid, ang));
        let nu: [Field2D; 5] = std::array::from_fn(|_| Field2D::zeros(grid, ang));
        mu[0].add_separable(az, du, &cos, &dcos);
        mu[2].add_separable(-az, &u_over_r, &sin, &dsin);
        field.push(FrameMode::new(0, mu, nu)?)?;
    }
    if ax != 0.0 || ay != 0.0 {
        let mut mu: [Field2D; 5] = std::array::from_fn(|_| Field2D::zeros(grid, ang));
        let mut nu: [Field2D; 5] = std::array::from_fn(|_| Field2D::zeros(grid, ang));
        // α·n = sinθ (ax cosφ + ay sinφ), α·m = cosθ (ax cosφ + ay sinφ),
        // α·p = ax sinφ − ay cosφ
        mu[0].add_separable(ax, du, &sin, &dsin);
        nu[0].add_separable(ay, du, &sin, &dsin);
        mu[2].add_separable(ax, &u_over_r, &cos, &dcos);
        nu[2].add_separable(ay, &u_over_r, &cos, &dcos);
        nu[1].add_separable(ax, &u_over_r, &ones, &zeros);
        mu[1].add_separable(-ay, &u_over_r, &ones, &zeros);
        field.push(FrameMode::new(1, mu, nu)?)?;
    }
    Ok(field)
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct FrameFieldHeader {
    r_max: f64,
    n_intervals: usize,
    quad_order: usize,
    modes: Vec<usize>,
}

/// Write a frame field as `header.json` plus one CSV per mode
/// (`mode_k{K}.csv`, one row per grid point with values and θ-derivatives).
pub fn write_frame_field(
    field: &FrameField,
    grid: &RadialGrid,
    ang: &AngularGrid,
    dir: &Path,
) -> Result<(), ReductionError> {
    std::fs::create_dir_all(dir)?;
    let header = FrameFieldHeader {
        r_max: grid.r_max(),
        n_intervals: grid.n_intervals(),
        quad_order: ang.order(),
        modes: field.modes.iter().map(|m| m.k).collect(),
    };
    let hf = std::fs::File::create(dir.join("header.json"))?;
    serde_json::to_writer_pretty(hf, &header).map_err(std::io::Error::other)?;
    for mode in &field.modes {
        let f = std::fs::File::create(dir.join(format!("mode_k{}.csv", mode.k)))?;
        let mut w = BufWriter::new(f);
        write!(w, "ir,iq")?;
        for j in 0..5 {
            write!(w, ",mu{j},dmu{j}")?;
        }
        for j in 0..5 {
            write!(w, ",nu{j},dnu{j}")?;
        }
        writeln!(w)?;
        for ir in 0..mode.mu[0].nr() {
            for iq in 0..mode.mu[0].nq() {
                write!(w, "{ir},{iq}")?;
                for j in 0..5 {
                    write!(
                        w,
                        ",{},{}",
                        fmt_g17(mode.mu[j].at(ir, iq)),
                        fmt_g17(mode.mu[j].dth(ir, iq))
                    )?;
                }
                for j in 0..5 {
                    write!(
                        w,
                        ",{},{}",
                        fmt_g17(mode.nu[j].at(ir, iq)),
                        fmt_g17(mode.nu[j].dth(ir, iq))
                    )?;
                }
                writeln!(w)?;
            }
        }
    }
    Ok(())
}

/// Read a frame field written by [`write_frame_field`]; the grids must match
/// the stored header.
pub fn read_frame_field(
    dir: &Path,
    grid: &RadialGrid,
    ang: &AngularGrid,
) -> Result<FrameField, ReductionError> {
    let hf = std::fs::File::open(dir.join("header.json"))?;
    let header: FrameFieldHeader =
        serde_json::from_reader(hf).map_err(|e| ReductionError::BadFile(e.to_string()))?;
    if header.n_intervals != grid.n_intervals()
        || (header.r_max - grid.r_max()).abs() > 1e-12 * grid.r_max()
        || header.quad_order != ang.order()
    {
        return Err(ReductionError::BadFile(
            "stored grids do not match the provided ones".into(),
        ));
    }
    let mut field = FrameField::new();
    for &k in &header.modes {
        let f = std::fs::File::open(dir.join(format!("mode_k{k}.csv")))?;
        let reader = std::io::BufReader::new(f);
        let mut mu: [Field2D; 5] = std::array::from_fn(|_| Field2D::zeros(grid, ang));
        let mut nu: [Field2D; 5] = std::array::from_fn(|_| Field2D::zeros(grid, ang));
        let mut vals = [[0.0f64; 2]; 10];
        for (lno, line) in reader.lines().enumerate() {
            let line = line?;
            if lno == 0 {
                continue; // header row
            }
            let mut parts = line.split(',');
            let ir: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ReductionError::BadFile(format!("bad row {lno}")))?;
            let iq: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ReductionError::BadFile(format!("bad row {lno}")))?;
            for slot in vals.iter_mut() {
                for v in slot.iter_mut() {
                    *v = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| ReductionError::BadFile(format!("bad row {lno}")))?;
                }
            }
            for j in 0..5 {
                mu[j].set(ir, iq, vals[j][0], vals[j][1]);
                nu[j].set(ir, iq, vals[5 + j][0], vals[5 + j][1]);
            }
        }
        field.push(FrameMode::new(k, mu, nu)?)?;
    }
    Ok(field)
}
