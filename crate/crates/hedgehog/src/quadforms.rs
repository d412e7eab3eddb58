//! Quadratic forms of the second variation.
//!
//! Two complementary discretizations live here.  The reduced radial forms
//! `Φ_{0,i}` are assembled as banded generalized eigenvalue pencils (P1
//! elements, three-point Gauss per element) and solved by inertia-counting
//! bisection plus shifted inverse iteration, which is robust against the
//! near-degenerate clusters these pencils produce on large domains.  The
//! axially symmetric forms `Φ_k`, `Q(V_k)` and `Q_i` are evaluated directly
//! by Gauss–Legendre quadrature in `θ` and Simpson quadrature in `r`.  The
//! two paths share no assembly code, which is what makes the consistency
//! checks in the test suite meaningful.
//!
//! Weights like `csc²θ` blow up at the axis; a form is only finite when the
//! field vanishes there. Evaluators detect violations by polynomial
//! extrapolation of the field to the singular endpoint and report
//! [`QuadError::SingularWeight`]; the `*_or_inf` wrappers map that case to
//! the `+∞` sentinel instead.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::angular::{AngularGrid, AngularMode};
use crate::model::Params;
use crate::profile::{derivative4_uniform, RadialGrid, RadialProfile};

#[derive(Debug, Error)]
pub enum QuadError {
    /// A field fails to vanish where its weight blows up, so the form takes
    /// the value `+∞`.
    #[error("{field} does not vanish at {place} where the weight is singular (extrapolated {value:.3e} against scale {scale:.3e})")]
    SingularWeight {
        field: &'static str,
        place: &'static str,
        value: f64,
        scale: f64,
    },
    #[error("LDL^T factorization broke down at row {row} (pivot {pivot:.3e})")]
    FactorizationBreakdown { row: usize, pivot: f64 },
    #[error("eigen solve did not converge: residual {residual:.3e} after {iters} iterations")]
    EigenNonConvergence { residual: f64, iters: usize },
    #[error("psi must be strictly positive on interior nodes; psi[{index}] = {value:.6e}")]
    NonPositivePsi { index: usize, value: f64 },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("harmonic index {0} out of supported range 0..=4")]
    BadHarmonic(usize),
    #[error("{0}")]
    BadField(&'static str),
}

// ---------------------------------------------------------------------------
// banded symmetric matrices and LDL^T
// ---------------------------------------------------------------------------

/// Symmetric banded matrix stored by diagonals: entry `(i, i + d)` for
/// `0 <= d <= kd` lives at `data[i * (kd + 1) + d]`.
#[derive(Debug, Clone)]
pub struct Banded {
    n: usize,
    kd: usize,
    data: Vec<f64>,
}

impl Banded {
    pub fn zeros(n: usize, kd: usize) -> Self {
        assert!(n > 0);
        Banded {
            n,
            kd,
            data: vec![0.0; n * (kd + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kd(&self) -> usize {
        self.kd
    }

    #[inline]
    fn slot(&self, i: usize, d: usize) -> usize {
        i * (self.kd + 1) + d
    }

    /// Symmetric read; entries outside the band are zero.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        if hi - lo > self.kd {
            0.0
        } else {
            self.data[self.slot(lo, hi - lo)]
        }
    }

    /// Symmetric accumulate; panics if the entry lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        assert!(hi - lo <= self.kd, "entry ({i}, {j}) outside band kd = {}", self.kd);
        let s = self.slot(lo, hi - lo);
        self.data[s] += v;
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let dmax = self.kd.min(self.n - 1 - i);
            let base = self.slot(i, 0);
            y[i] += self.data[base] * x[i];
            for d in 1..=dmax {
                let a = self.data[base + d];
                y[i] += a * x[i + d];
                y[i + d] += a * x[i];
            }
        }
        y
    }

    /// x^T A x.
    pub fn quad(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// self - mu * other, with bands merged.
    pub fn shifted(&self, mu: f64, other: &Banded) -> Banded {
        assert_eq!(self.n, other.n);
        let kd = self.kd.max(other.kd);
        let mut out = Banded::zeros(self.n, kd);
        for i in 0..self.n {
            let dmax = kd.min(self.n - 1 - i);
            for d in 0..=dmax {
                out.data[i * (kd + 1) + d] = self.get(i, i + d) - mu * other.get(i, i + d);
            }
        }
        out
    }

    pub fn max_abs_diag(&self) -> f64 {
        (0..self.n)
            .map(|i| self.data[self.slot(i, 0)].abs())
            .fold(0.0, f64::max)
    }

    /// Matrix Market coordinate dump of the stored triangle, for offline
    /// inspection of assembled pencils.
    pub fn to_coordinate_text(&self, comment: &str) -> String {
        let mut entries = Vec::new();
        for i in 0..self.n {
            let dmax = self.kd.min(self.n - 1 - i);
            for d in 0..=dmax {
                let v = self.data[self.slot(i, d)];
                if v != 0.0 {
                    // symmetric coordinate format wants the lower triangle
                    entries.push((i + d + 1, i + 1, v));
                }
            }
        }
        let mut s = String::new();
        s.push_str("%%MatrixMarket matrix coordinate real symmetric\n");
        s.push_str(&format!("% {comment}\n"));
        s.push_str(&format!("{} {} {}\n", self.n, self.n, entries.len()));
        for (r, c, v) in entries {
            s.push_str(&format!("{r} {c} {}\n", crate::profile::fmt_g17(v)));
        }
        s
    }
}

struct Ldlt {
    n: usize,
    kd: usize,
    /// `fac[j*(kd+1)]` holds `D_j`; `fac[j*(kd+1)+d]` holds `L_{j+d, j}`.
    fac: Vec<f64>,
    neg: usize,
}

fn ldlt_banded(a: &Banded, breakdown_tol: f64) -> Result<Ldlt, QuadError> {
    let n = a.n;
    let kd = a.kd;
    let w = kd + 1;
    let mut fac = vec![0.0; n * w];
    let mut neg = 0usize;
    for j in 0..n {
        let kmin = j.saturating_sub(kd);
        let mut dj = a.get(j, j);
        for k in kmin..j {
            let l = fac[k * w + (j - k)];
            dj -= l * l * fac[k * w];
        }
        if dj.abs() <= breakdown_tol {
            return Err(QuadError::FactorizationBreakdown { row: j, pivot: dj });
        }
        if dj < 0.0 {
            neg += 1;
        }
        fac[j * w] = dj;
        let imax = (j + kd).min(n - 1);
        for i in j + 1..=imax {
            let klo = i.saturating_sub(kd).max(kmin);
            let mut s = a.get(i, j);
            for k in klo..j {
                s -= fac[k * w + (i - k)] * fac[k * w + (j - k)] * fac[k * w];
            }
            fac[j * w + (i - j)] = s / dj;
        }
    }
    Ok(Ldlt { n, kd, fac, neg })
}

impl Ldlt {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let kd = self.kd;
        let w = kd + 1;
        let mut x = b.to_vec();
        for j in 0..n {
            let yj = x[j];
            let imax = (j + kd).min(n - 1);
            for i in j + 1..=imax {
                x[i] -= self.fac[j * w + (i - j)] * yj;
            }
        }
        for j in 0..n {
            x[j] /= self.fac[j * w];
        }
        for j in (0..n).rev() {
            let imax = (j + kd).min(n - 1);
            let mut s = x[j];
            for i in j + 1..=imax {
                s -= self.fac[j * w + (i - j)] * x[i];
            }
            x[j] = s;
        }
        x
    }
}

const PIVOT_FLOOR: f64 = 1e-250;

/// Number of pencil eigenvalues strictly below `mu`, by Sylvester inertia of
/// `A - mu B`.  Exact-hit breakdowns are resolved by nudging the shift.
fn inertia_below(a: &Banded, b: &Banded, mu: f64, scale: f64) -> Result<usize, QuadError> {
    let mut shift = mu;
    let mut last = QuadError::FactorizationBreakdown { row: 0, pivot: 0.0 };
    for attempt in 0..8 {
        match ldlt_banded(&a.shifted(shift, b), PIVOT_FLOOR) {
            Ok(f) => return Ok(f.neg),
            Err(e) => {
                last = e;
                let bump = scale * 1e-13 * (attempt + 1) as f64;
                shift = mu + if attempt % 2 == 0 { bump } else { -bump };
            }
        }
    }
    Err(last)
}

#[derive(Debug, Clone)]
pub struct EigenOptions {
    /// Relative width at which bisection stops.
    pub rel_tol: f64,
    pub max_bisections: usize,
    pub max_inverse_iters: usize,
    /// Seed for the inverse-iteration start vector.
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            rel_tol: 5e-14,
            max_bisections: 140,
            max_inverse_iters: 80,
            seed: 0x0ddb_a11,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenResult {
    pub mu_min: f64,
    /// `‖A x - mu B x‖₂ / ‖B x‖₂` for the returned (B-normalized) vector.
    pub residual: f64,
    pub bisection_width: f64,
    pub inverse_iterations: usize,
    pub vector: Vec<f64>,
}

/// Smallest eigenvalue of the pencil `A x = mu B x` (`B` positive definite).
pub fn min_eigen(a: &Banded, b: &Banded, opts: &EigenOptions) -> Result<EigenResult, QuadError> {
    assert_eq!(a.n(), b.n(), "pencil dimensions differ");
    let n = a.n();
    // Coordinate Rayleigh quotients bound mu_min from above.
    let mut anchor = f64::INFINITY;
    for i in 0..n {
        let bi = b.get(i, i);
        if bi > 0.0 {
            anchor = anchor.min(a.get(i, i) / bi);
        }
    }
    if !anchor.is_finite() {
        return Err(QuadError::BadField("mass matrix has no positive diagonal"));
    }
    let scale = (a.max_abs_diag() / b.max_abs_diag().max(f64::MIN_POSITIVE))
        .abs()
        .max(anchor.abs())
        .max(1.0);

    let mut hi = anchor + 1e-9 * scale;
    let mut step = scale;
    let mut guard = 0;
    while inertia_below(a, b, hi, scale)? == 0 {
        hi += step;
        step *= 4.0;
        guard += 1;
        if guard > 200 {
            return Err(QuadError::EigenNonConvergence { residual: f64::NAN, iters: guard });
        }
    }
    let mut lo = anchor - scale;
    step = scale;
    guard = 0;
    while inertia_below(a, b, lo, scale)? > 0 {
        lo -= step;
        step *= 4.0;
        guard += 1;
        if guard > 200 {
            return Err(QuadError::EigenNonConvergence { residual: f64::NAN, iters: guard });
        }
    }

    let width_target = opts.rel_tol * scale.max(lo.abs()).max(hi.abs());
    for _ in 0..opts.max_bisections {
        if hi - lo <= width_target {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if inertia_below(a, b, mid, scale)? == 0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let width = hi - lo;

    // Shift strictly below the bracket so A - sigma B is positive definite.
    let mut sigma = lo - width.max(opts.rel_tol * scale);
    let mut fact = None;
    for attempt in 0..6 {
        match ldlt_banded(&a.shifted(sigma, b), PIVOT_FLOOR) {
            Ok(f) => {
                fact = Some(f);
                break;
            }
            Err(e) => {
                if attempt == 5 {
                    return Err(e);
                }
                sigma -= scale * 1e-10 * (attempt + 1) as f64;
            }
        }
    }
    let fact = fact.expect("factorization retried above");

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (n as u64).rotate_left(17));
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let bnorm = |v: &[f64], bv: &[f64]| -> f64 {
        v.iter().zip(bv).map(|(a, c)| a * c).sum::<f64>().sqrt()
    };
    let mut bx = b.mul_vec(&x);
    let nb = bnorm(&x, &bx);
    for v in x.iter_mut() {
        *v /= nb;
    }
    let mut mu = f64::INFINITY;
    let mut iters = 0usize;
    for it in 0..opts.max_inverse_iters {
        iters = it + 1;
        bx = b.mul_vec(&x);
        let y = fact.solve(&bx);
        let by = b.mul_vec(&y);
        let ny = bnorm(&y, &by);
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / ny;
        }
        let ax = a.mul_vec(&x);
        let mu_new: f64 = ax.iter().zip(&x).map(|(a, b)| a * b).sum();
        if (mu_new - mu).abs() <= 1e-14 * scale.max(mu_new.abs()) {
            mu = mu_new;
            break;
        }
        mu = mu_new;
    }
    bx = b.mul_vec(&x);
    let ax = a.mul_vec(&x);
    let rnum: f64 = ax
        .iter()
        .zip(&bx)
        .map(|(a, b)| (a - mu * b) * (a - mu * b))
        .sum::<f64>()
        .sqrt();
    let rden: f64 = bx.iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual = rnum / rden.max(f64::MIN_POSITIVE);
    if !residual.is_finite() || residual > 1e-8 * scale {
        return Err(QuadError::EigenNonConvergence { residual, iters });
    }
    Ok(EigenResult {
        mu_min: mu,
        residual,
        bisection_width: width,
        inverse_iterations: iters,
        vector: x,
    })
}

// ---------------------------------------------------------------------------
// reduced radial forms Φ_{0,i}
// ---------------------------------------------------------------------------

/// A triple of radial test functions `(w0, w2, w4)` sampled on the nodes of a
/// [`RadialGrid`], used to probe the reduced forms independently of the
/// finite-element pencil.  Components that a given mode index does not carry
/// must be identically zero.
#[derive(Debug, Clone)]
pub struct TripleRadial {
    pub w0: Vec<f64>,
    pub w2: Vec<f64>,
    pub w4: Vec<f64>,
}

impl TripleRadial {
    pub fn new(w0: Vec<f64>, w2: Vec<f64>, w4: Vec<f64>) -> Result<Self, QuadError> {
        if w2.len() != w0.len() || w4.len() != w0.len() {
            return Err(QuadError::LengthMismatch {
                expected: w0.len(),
                got: w2.len().max(w4.len()),
            });
        }
        Ok(TripleRadial { w0, w2, w4 })
    }

    pub fn len(&self) -> usize {
        self.w0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w0.is_empty()
    }

    pub fn comp(&self, c: usize) -> &[f64] {
        match c {
            0 => &self.w0,
            1 => &self.w2,
            _ => &self.w4,
        }
    }
}

/// Which mass matrix normalizes the pencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MassChoice {
    /// Plain `∫ Σ w_c² r² dr` (the default).
    Plain,
    /// Mass weighted by the gradient coefficients of the form, an alternative
    /// normalization used to confirm that sign classifications do not depend
    /// on the choice.
    GradientWeighted,
}

struct PhiCoeffs {
    ncomp: usize,
    grad: [f64; 3],
    pot: [[f64; 3]; 3],
    /// Multipliers of (f_hat, f, f_tilde) in the bulk row.
    bulk_pref: [f64; 3],
}

fn phi0i_coeffs(i: usize) -> PhiCoeffs {
    if i == 0 {
        return PhiCoeffs {
            ncomp: 1,
            grad: [2.0 / 3.0, 0.0, 0.0],
            pot: [[4.0, 0.0, 0.0], [0.0; 3], [0.0; 3]],
            bulk_pref: [2.0 / 3.0, 0.0, 0.0],
        };
    }
    let lam = (i * (i + 1)) as f64;
    let mut c = PhiCoeffs {
        ncomp: 3,
        grad: [lam / 3.0, 1.0, lam - 2.0],
        pot: [
            [lam * (lam + 6.0) / 3.0, -2.0 * lam, 0.0],
            [-2.0 * lam, lam + 4.0, 2.0 * (lam - 2.0)],
            [0.0, 2.0 * (lam - 2.0), (lam - 2.0) * (lam - 2.0)],
        ],
        bulk_pref: [lam / 3.0, 1.0, lam - 2.0],
    };
    if i == 1 {
        // lambda = 2: the w4 channel is absent.
        c.ncomp = 2;
        c.grad[2] = 0.0;
        c.bulk_pref[2] = 0.0;
        c.pot[1][2] = 0.0;
        c.pot[2] = [0.0; 3];
    }
    c
}

fn gauss3() -> [(f64, f64); 3] {
    let s = 0.6_f64.sqrt();
    [
        (0.5 * (1.0 - s), 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.5 * (1.0 + s), 5.0 / 18.0),
    ]
}

/// Banded generalized eigenvalue pencil for a reduced radial form.
///
/// Degrees of freedom are interleaved per node (`dof = node * ncomp + comp`).
/// The node at `r = R_max` is clamped to zero; the node at `r = 0` is left
/// free (natural condition), which the potential matrix admits and which
/// keeps the eigenvalue convergence at second order.
#[derive(Debug, Clone)]
pub struct QuadraticFormPencil {
    pub a: Banded,
    pub b: Banded,
    pub ncomp: usize,
    /// Nodes `0..n_active` carry dofs; node `n_active` is the clamped end.
    pub n_active: usize,
    pub i_index: usize,
    pub params: Params,
    pub mass: MassChoice,
    grid: RadialGrid,
}

impl QuadraticFormPencil {
    pub fn n_dof(&self) -> usize {
        self.a.n()
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn dof(&self, node: usize, comp: usize) -> usize {
        node * self.ncomp + comp
    }

    /// Pack full per-component nodal arrays into a dof vector (the value at
    /// the clamped node is dropped; it should be zero or negligible).
    pub fn pack(&self, comps: &[&[f64]]) -> Result<Vec<f64>, QuadError> {
        if comps.len() != self.ncomp {
            return Err(QuadError::LengthMismatch {
                expected: self.ncomp,
                got: comps.len(),
            });
        }
        let n_nodes = self.n_active + 1;
        for c in comps {
            if c.len() != n_nodes {
                return Err(QuadError::LengthMismatch {
                    expected: n_nodes,
                    got: c.len(),
                });
            }
        }
        let mut x = vec![0.0; self.n_dof()];
        for node in 0..self.n_active {
            for c in 0..self.ncomp {
                x[self.dof(node, c)] = comps[c][node];
            }
        }
        Ok(x)
    }

    /// Split a dof vector into per-component nodal arrays, restoring the
    /// clamped zero at `r = R_max`.
    pub fn unpack(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n_active + 1]; self.ncomp];
        for node in 0..self.n_active {
            for c in 0..self.ncomp {
                out[c][node] = x[self.dof(node, c)];
            }
        }
        out
    }

    pub fn min_eigen(&self, opts: &EigenOptions) -> Result<EigenResult, QuadError> {
        min_eigen(&self.a, &self.b, opts)
    }
}

/// Assemble the P1 finite-element pencil of `Φ_{0,i}` on the grid of `prof`.
pub fn assemble_phi0i(i: usize, prof: &RadialProfile, mass: MassChoice) -> QuadraticFormPencil {
    let grid = prof.grid();
    let nel = grid.n_intervals();
    let h = grid.h();
    let c = phi0i_coeffs(i);
    let ncomp = c.ncomp;
    let kd = 2 * ncomp - 1;
    let n_dof = nel * ncomp;
    let mut a = Banded::zeros(n_dof, kd);
    let mut b = Banded::zeros(n_dof, kd);
    let r = grid.nodes();
    let u = prof.u();
    let p = prof.params();
    let g3 = gauss3();

    for e in 0..nel {
        let r0 = r[e];
        for &(t, wt) in &g3 {
            let rg = r0 + t * h;
            let wq = wt * h;
            let r2 = rg * rg;
            let ug = u[e] * (1.0 - t) + u[e + 1] * t;
            let bulk = [
                c.bulk_pref[0] * p.bulk_f_hat(ug),
                c.bulk_pref[1] * p.bulk_f(ug),
                c.bulk_pref[2] * p.bulk_f_tilde(ug),
            ];
            let massw = match mass {
                MassChoice::Plain => [1.0, 1.0, 1.0],
                MassChoice::GradientWeighted => c.grad,
            };
            let shape = [1.0 - t, t];
            let dshape = [-1.0 / h, 1.0 / h];
            for la in 0..2 {
                let na = e + la;
                if na == nel {
                    continue;
                }
                for lb in 0..2 {
                    let nb = e + lb;
                    if nb == nel {
                        continue;
                    }
                    for ca in 0..ncomp {
                        let gi = na * ncomp + ca;
                        for cb in 0..ncomp {
                            let gj = nb * ncomp + cb;
                            if gi > gj {
                                continue; // symmetric partner handles it
                            }
                            let mut v = c.pot[ca][cb] * shape[la] * shape[lb] * wq;
                            if ca == cb {
                                v += (c.grad[ca] * dshape[la] * dshape[lb]
                                    + bulk[ca] * shape[la] * shape[lb])
                                    * r2
                                    * wq;
                                b.add(gi, gj, massw[ca] * r2 * shape[la] * shape[lb] * wq);
                            }
                            if v != 0.0 {
                                a.add(gi, gj, v);
                            }
                        }
                    }
                }
            }
        }
    }
    QuadraticFormPencil {
        a,
        b,
        ncomp,
        n_active: nel,
        i_index: i,
        params: *p,
        mass,
        grid: grid.clone(),
    }
}

/// Evaluate `Φ_{0,i}` on the P1 interpolant of a nodal triple by per-element
/// Gauss quadrature — an independent code path from the assembled pencil.
pub fn eval_phi0i_direct(
    i: usize,
    prof: &RadialProfile,
    t: &TripleRadial,
) -> Result<f64, QuadError> {
    let grid = prof.grid();
    let n_nodes = grid.nodes().len();
    if t.len() != n_nodes {
        return Err(QuadError::LengthMismatch {
            expected: n_nodes,
            got: t.len(),
        });
    }
    let c = phi0i_coeffs(i);
    for dead in c.ncomp..3 {
        if t.comp(dead).iter().any(|&v| v != 0.0) {
            return Err(QuadError::BadField(
                "triple has a nonzero component that this mode index does not carry",
            ));
        }
    }
    let h = grid.h();
    let r = grid.nodes();
    let u = prof.u();
    let p = prof.params();
    let g3 = gauss3();
    let mut total = 0.0;
    for e in 0..grid.n_intervals() {
        let r0 = r[e];
        for &(tg, wt) in &g3 {
            let rg = r0 + tg * h;
            let wq = wt * h;
            let r2 = rg * rg;
            let ug = u[e] * (1.0 - tg) + u[e + 1] * tg;
            let fs = [p.bulk_f_hat(ug), p.bulk_f(ug), p.bulk_f_tilde(ug)];
            let mut w = [0.0; 3];
            let mut dw = [0.0; 3];
            for cc in 0..c.ncomp {
                let comp = t.comp(cc);
                w[cc] = comp[e] * (1.0 - tg) + comp[e + 1] * tg;
                dw[cc] = (comp[e + 1] - comp[e]) / h;
            }
            let mut val = 0.0;
            for ca in 0..c.ncomp {
                val += (c.grad[ca] * dw[ca] * dw[ca] + c.bulk_pref[ca] * fs[ca] * w[ca] * w[ca])
                    * r2;
                for cb in 0..c.ncomp {
                    val += c.pot[ca][cb] * w[ca] * w[cb];
                }
            }
            total += wq * val;
        }
    }
    Ok(total)
}

/// Evaluate `Φ_{0,i}` from nodal values with 4th-order finite-difference
/// gradients and Simpson quadrature.  This matches the discretization of the
/// 2D evaluators ([`eval_phik`] and friends), so decomposition identities
/// close to rounding instead of to the P1 interpolation error.
pub fn eval_phi0i_fd(i: usize, prof: &RadialProfile, t: &TripleRadial) -> Result<f64, QuadError> {
    let grid = prof.grid();
    let n_nodes = grid.nodes().len();
    if t.len() != n_nodes {
        return Err(QuadError::LengthMismatch {
            expected: n_nodes,
            got: t.len(),
        });
    }
    let c = phi0i_coeffs(i);
    for dead in c.ncomp..3 {
        if t.comp(dead).iter().any(|&v| v != 0.0) {
            return Err(QuadError::BadField(
                "triple has a nonzero component that this mode index does not carry",
            ));
        }
    }
    let p = prof.params();
    let mut dw: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (cc, slot) in dw.iter_mut().enumerate().take(c.ncomp) {
        *slot = grid.derivative4(t.comp(cc));
    }
    let mut integrand = vec![0.0; n_nodes];
    for (j, &r) in grid.nodes().iter().enumerate() {
        let u = prof.u()[j];
        let fs = [p.bulk_f_hat(u), p.bulk_f(u), p.bulk_f_tilde(u)];
        let mut val = 0.0;
        for ca in 0..c.ncomp {
            let w = t.comp(ca)[j];
            val += (c.grad[ca] * dw[ca][j] * dw[ca][j] + c.bulk_pref[ca] * fs[ca] * w * w)
                * r
                * r;
            for cb in 0..c.ncomp {
                val += c.pot[ca][cb] * w * t.comp(cb)[j];
            }
        }
        integrand[j] = val;
    }
    Ok(grid.integrate(&integrand))
}

// ---------------------------------------------------------------------------
// 2D fields and the axially symmetric forms
// ---------------------------------------------------------------------------

/// Scalar field on the tensor grid (radial nodes) × (Gauss–Legendre θ nodes).
///
/// The θ-derivative is carried alongside the point values: fields are built
/// from angular modes whose derivatives are known in closed form, and keeping
/// them exact means identity checks are not polluted by numerical
/// differentiation in θ.  Radial derivatives are taken by finite differences
/// on demand.
#[derive(Debug, Clone)]
pub struct Field2D {
    nr: usize,
    nq: usize,
    values: Vec<f64>,
    dtheta: Vec<f64>,
}

impl Field2D {
    pub fn zeros(grid: &RadialGrid, ang: &AngularGrid) -> Self {
        let nr = grid.nodes().len();
        let nq = ang.order();
        Field2D {
            nr,
            nq,
            values: vec![0.0; nr * nq],
            dtheta: vec![0.0; nr * nq],
        }
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn nq(&self) -> usize {
        self.nq
    }

    #[inline]
    pub fn at(&self, ir: usize, iq: usize) -> f64 {
        self.values[ir * self.nq + iq]
    }

    #[inline]
    pub fn dth(&self, ir: usize, iq: usize) -> f64 {
        self.dtheta[ir * self.nq + iq]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, ir: usize) -> &[f64] {
        &self.values[ir * self.nq..(ir + 1) * self.nq]
    }

    /// Accumulate `c * radial(r) * mode(θ)`.
    pub fn add_product(&mut self, c: f64, radial: &[f64], mode: &AngularMode) {
        self.add_separable(c, radial, &mode.values, &mode.dvalues);
    }

    /// Accumulate `c * radial(r) * ang(θ)` with an explicitly supplied
    /// angular derivative.
    pub fn add_separable(&mut self, c: f64, radial: &[f64], ang: &[f64], dang: &[f64]) {
        assert_eq!(radial.len(), self.nr, "radial length mismatch");
        assert_eq!(ang.len(), self.nq, "angular length mismatch");
        assert_eq!(dang.len(), self.nq, "angular derivative length mismatch");
        for ir in 0..self.nr {
            let cr = c * radial[ir];
            let base = ir * self.nq;
            for iq in 0..self.nq {
                self.values[base + iq] += cr * ang[iq];
                self.dtheta[base + iq] += cr * dang[iq];
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.values.iter_mut() {
            *v *= c;
        }
        for v in self.dtheta.iter_mut() {
            *v *= c;
        }
    }

    pub fn zeros_like(other: &Field2D) -> Field2D {
        Field2D {
            nr: other.nr,
            nq: other.nq,
            values: vec![0.0; other.nr * other.nq],
            dtheta: vec![0.0; other.nr * other.nq],
        }
    }

    /// self += c * other.
    pub fn add_scaled(&mut self, c: f64, other: &Field2D) {
        assert_eq!(self.nr, other.nr, "field shapes differ");
        assert_eq!(self.nq, other.nq, "field shapes differ");
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += c * o;
        }
        for (v, o) in self.dtheta.iter_mut().zip(&other.dtheta) {
            *v += c * o;
        }
    }

    /// Overwrite one grid point's value and θ-derivative.
    pub fn set(&mut self, ir: usize, iq: usize, value: f64, dtheta: f64) {
        let idx = ir * self.nq + iq;
        self.values[idx] = value;
        self.dtheta[idx] = dtheta;
    }

    /// The field θ ↦ f(π − θ).  Gauss–Legendre nodes are symmetric about
    /// θ = π/2, so reflection is an exact index reversal; the θ-derivative
    /// picks up a sign.
    pub fn reflect_theta(&self) -> Field2D {
        let mut out = Field2D::zeros_like(self);
        for ir in 0..self.nr {
            let base = ir * self.nq;
            for iq in 0..self.nq {
                let jq = self.nq - 1 - iq;
                out.values[base + iq] = self.values[base + jq];
                out.dtheta[base + iq] = -self.dtheta[base + jq];
            }
        }
        out
    }

    pub fn dtheta_values(&self) -> &[f64] {
        &self.dtheta
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// 4th-order finite-difference radial derivative, same layout as values.
    pub fn radial_derivative(&self, grid: &RadialGrid) -> Vec<f64> {
        assert_eq!(grid.nodes().len(), self.nr, "grid does not match field");
        let mut out = vec![0.0; self.nr * self.nq];
        let mut col = vec![0.0; self.nr];
        for iq in 0..self.nq {
            for ir in 0..self.nr {
                col[ir] = self.values[ir * self.nq + iq];
            }
            let d = derivative4_uniform(grid.h(), &col);
            for ir in 0..self.nr {
                out[ir * self.nq + iq] = d[ir];
            }
        }
        out
    }
}

fn check_field_shape(
    f: &Field2D,
    grid: &RadialGrid,
    ang: &AngularGrid,
) -> Result<(), QuadError> {
    if f.nr() != grid.nodes().len() {
        return Err(QuadError::LengthMismatch {
            expected: grid.nodes().len(),
            got: f.nr(),
        });
    }
    if f.nq() != ang.order() {
        return Err(QuadError::LengthMismatch {
            expected: ang.order(),
            got: f.nq(),
        });
    }
    Ok(())
}

/// Certify that a field vanishes at the requested θ-endpoints, by Lagrange
/// extrapolation of every radial row; tolerance is relative to the field's
/// own scale.
fn require_vanishing(
    ang: &AngularGrid,
    f: &Field2D,
    name: &'static str,
    at_zero: bool,
    at_pi: bool,
) -> Result<(), QuadError> {
    if !(at_zero || at_pi) {
        return Ok(());
    }
    let scale = f.max_abs();
    if scale == 0.0 {
        return Ok(());
    }
    // Genuine violations extrapolate to O(scale); admissible fields leave
    // only the Lagrange extrapolation residue (~1e-8 relative at order 64).
    let tol = 1e-6 * scale;
    let mut worst0 = 0.0f64;
    let mut worstp = 0.0f64;
    for ir in 0..f.nr() {
        let row = f.row(ir);
        if at_zero {
            worst0 = worst0.max(ang.extrapolate(row, true).abs());
        }
        if at_pi {
            worstp = worstp.max(ang.extrapolate(row, false).abs());
        }
    }
    if at_zero && worst0 > tol {
        return Err(QuadError::SingularWeight {
            field: name,
            place: "theta = 0",
            value: worst0,
            scale,
        });
    }
    if at_pi && worstp > tol {
        return Err(QuadError::SingularWeight {
            field: name,
            place: "theta = pi",
            value: worstp,
            scale,
        });
    }
    Ok(())
}

/// Evaluate the mode functional `Φ_k(v0, v2, v4)` by quadrature.
pub fn eval_phik(
    k: usize,
    prof: &RadialProfile,
    ang: &AngularGrid,
    v0: &Field2D,
    v2: &Field2D,
    v4: &Field2D,
) -> Result<f64, QuadError> {
    if k > 4 {
        return Err(QuadError::BadHarmonic(k));
    }
    let grid = prof.grid();
    check_field_shape(v0, grid, ang)?;
    check_field_shape(v2, grid, ang)?;
    check_field_shape(v4, grid, ang)?;
    // Weight singularities: csc²θ on v0 for k >= 1 (both ends); (cot+k csc)²
    // on v2 is singular at 0 always and at π unless k = 1; (2cot+k csc)² on
    // v4 is singular at 0 always and at π unless k = 2.
    require_vanishing(ang, v0, "v0", k >= 1, k >= 1)?;
    require_vanishing(ang, v2, "v2", true, k != 1)?;
    require_vanishing(ang, v4, "v4", true, k != 2)?;

    let d0 = v0.radial_derivative(grid);
    let d2 = v2.radial_derivative(grid);
    let d4 = v4.radial_derivative(grid);
    let kf = k as f64;
    let p = prof.params();
    let nr = v0.nr();
    let nq = v0.nq();
    let wts = ang.weights();
    let mut integrand = vec![0.0; nr];
    for ir in 0..nr {
        let r = grid.nodes()[ir];
        let r2 = r * r;
        let u = prof.u()[ir];
        let (fh, f, ft) = (p.bulk_f_hat(u), p.bulk_f(u), p.bulk_f_tilde(u));
        let base = ir * nq;
        let mut acc_r2 = 0.0;
        let mut acc_plain = 0.0;
        for iq in 0..nq {
            let wq = wts[iq];
            let cot = ang.cot(iq);
            let csc = ang.csc(iq);
            let a0 = v0.values[base + iq];
            let a2 = v2.values[base + iq];
            let a4 = v4.values[base + iq];
            let t0 = v0.dtheta[base + iq];
            let t2 = v2.dtheta[base + iq];
            let t4 = v4.dtheta[base + iq];
            let g0 = d0[base + iq];
            let g2 = d2[base + iq];
            let g4 = d4[base + iq];
            acc_r2 += wq
                * (g0 * g0 / 3.0 + g2 * g2 + g4 * g4 + fh * a0 * a0 / 3.0 + f * a2 * a2
                    + ft * a4 * a4);
            let c2k = cot + kf * csc;
            let c4k = 2.0 * cot + kf * csc;
            let pot = (2.0 + kf * kf * csc * csc / 3.0) * a0 * a0
                + (5.0 + c2k * c2k) * a2 * a2
                + (2.0 + c4k * c4k) * a4 * a4;
            let cross = 4.0 * (-a0 * (t2 + c2k * a2) + (-t2 + c2k * a2) * a4);
            acc_plain += wq * (t0 * t0 / 3.0 + t2 * t2 + t4 * t4 + pot + cross);
        }
        integrand[ir] = r2 * acc_r2 + acc_plain;
    }
    Ok(PI * grid.integrate(&integrand))
}

/// [`eval_phik`] with the singular-weight case mapped to the `+∞` sentinel.
pub fn eval_phik_or_inf(
    k: usize,
    prof: &RadialProfile,
    ang: &AngularGrid,
    v0: &Field2D,
    v2: &Field2D,
    v4: &Field2D,
) -> Result<f64, QuadError> {
    match eval_phik(k, prof, ang, v0, v2, v4) {
        Err(QuadError::SingularWeight { .. }) => Ok(f64::INFINITY),
        other => other,
    }
}

const AZ_BRACKET_NAMES: [&str; 10] = [
    "azimuthal bracket (k nu0 + 3 sin mu1)",
    "azimuthal bracket (k nu1 - sin mu0 - cos mu2 - sin mu4)",
    "azimuthal bracket (k nu2 + cos mu1 + sin mu3)",
    "azimuthal bracket (k nu3 - sin mu2 - 2 cos mu4)",
    "azimuthal bracket (k nu4 + sin mu1 + 2 cos mu3)",
    "azimuthal bracket (-k mu0 + 3 sin nu1)",
    "azimuthal bracket (-k mu1 - sin nu0 - cos nu2 - sin nu4)",
    "azimuthal bracket (-k mu2 + cos nu1 + sin nu3)",
    "azimuthal bracket (-k mu3 - sin nu2 - 2 cos nu4)",
    "azimuthal bracket (-k mu4 + sin nu1 + 2 cos nu3)",
];

fn import_bracket(
    b: usize,
    kf: f64,
    s: f64,
    c: f64,
    m: &[f64; 5],
    n: &[f64; 5],
) -> f64 {
    match b {
        0 => kf * n[0] + 3.0 * s * m[1],
        1 => kf * n[1] - s * m[0] - c * m[2] - s * m[4],
        2 => kf * n[2] + c * m[1] + s * m[3],
        3 => kf * n[3] - s * m[2] - 2.0 * c * m[4],
        4 => kf * n[4] + s * m[1] + 2.0 * c * m[3],
        5 => -kf * m[0] + 3.0 * s * n[1],
        6 => -kf * m[1] - s * n[0] - c * n[2] - s * n[4],
        7 => -kf * m[2] + c * n[1] + s * n[3],
        8 => -kf * m[3] - s * n[2] - 2.0 * c * n[4],
        _ => -kf * m[4] + s * n[1] + 2.0 * c * n[3],
    }
}

fn check_import_brackets(
    k: usize,
    ang: &AngularGrid,
    mu: &[Field2D; 5],
    nu: &[Field2D; 5],
) -> Result<(), QuadError> {
    let kf = k as f64;
    let nr = mu[0].nr();
    let nq = mu[0].nq();
    let scale = mu
        .iter()
        .chain(nu.iter())
        .map(|f| f.max_abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(());
    }
    let tol = 1e-6 * scale;
    let mut row = vec![0.0; nq];
    for b in 0..10 {
        let mut worst0 = 0.0f64;
        let mut worstp = 0.0f64;
        for ir in 0..nr {
            for (iq, slot) in row.iter_mut().enumerate() {
                let s = ang.sin_theta()[iq];
                let c = ang.x()[iq];
                let m = [
                    mu[0].at(ir, iq),
                    mu[1].at(ir, iq),
                    mu[2].at(ir, iq),
                    mu[3].at(ir, iq),
                    mu[4].at(ir, iq),
                ];
                let n = [
                    nu[0].at(ir, iq),
                    nu[1].at(ir, iq),
                    nu[2].at(ir, iq),
                    nu[3].at(ir, iq),
                    nu[4].at(ir, iq),
                ];
                *slot = import_bracket(b, kf, s, c, &m, &n);
            }
            worst0 = worst0.max(ang.extrapolate(&row, true).abs());
            worstp = worstp.max(ang.extrapolate(&row, false).abs());
        }
        if worst0 > tol || worstp > tol {
            return Err(QuadError::SingularWeight {
                field: AZ_BRACKET_NAMES[b],
                place: if worst0 > tol { "theta = 0" } else { "theta = pi" },
                value: worst0.max(worstp),
                scale,
            });
        }
    }
    Ok(())
}

/// Evaluate `Q(V_k)` from the φ-averaged mode amplitudes `(μ_k, ν_k)`.
///
/// For `k = 0` the ν amplitudes must vanish identically and the φ-average
/// carries a factor 2π instead of π.
pub fn eval_import(
    k: usize,
    prof: &RadialProfile,
    ang: &AngularGrid,
    mu: &[Field2D; 5],
    nu: &[Field2D; 5],
) -> Result<f64, QuadError> {
    if k > 4 {
        return Err(QuadError::BadHarmonic(k));
    }
    let grid = prof.grid();
    for f in mu.iter().chain(nu.iter()) {
        check_field_shape(f, grid, ang)?;
    }
    if k == 0 && nu.iter().any(|f| f.max_abs() > 0.0) {
        return Err(QuadError::BadField("nu amplitudes must vanish for k = 0"));
    }
    check_import_brackets(k, ang, mu, nu)?;
    Ok(import_rows_quadrature(k, prof, ang, mu, nu, true, false))
}

/// Shared quadrature core of the φ-averaged mode energy: always the gradient
/// and angular rows, optionally the bulk row (the energy) or the plain mass
/// row (for Sobolev norms).  Includes the φ-average prefactor.
pub(crate) fn import_rows_quadrature(
    k: usize,
    prof: &RadialProfile,
    ang: &AngularGrid,
    mu: &[Field2D; 5],
    nu: &[Field2D; 5],
    include_bulk: bool,
    include_mass: bool,
) -> f64 {
    let grid = prof.grid();
    let dmu: Vec<Vec<f64>> = mu.iter().map(|f| f.radial_derivative(grid)).collect();
    let dnu: Vec<Vec<f64>> = nu.iter().map(|f| f.radial_derivative(grid)).collect();
    let kf = k as f64;
    let p = prof.params();
    let nr = mu[0].nr();
    let nq = mu[0].nq();
    let wts = ang.weights();
    let mut integrand = vec![0.0; nr];
    for ir in 0..nr {
        let r = grid.nodes()[ir];
        let r2 = r * r;
        let u = prof.u()[ir];
        let (fh, f, ft) = (p.bulk_f_hat(u), p.bulk_f(u), p.bulk_f_tilde(u));
        let base = ir * nq;
        let mut acc_r2 = 0.0;
        let mut acc_plain = 0.0;
        for iq in 0..nq {
            let wq = wts[iq];
            let s = ang.sin_theta()[iq];
            let c = ang.x()[iq];
            let m = [
                mu[0].values[base + iq],
                mu[1].values[base + iq],
                mu[2].values[base + iq],
                mu[3].values[base + iq],
                mu[4].values[base + iq],
            ];
            let n = [
                nu[0].values[base + iq],
                nu[1].values[base + iq],
                nu[2].values[base + iq],
                nu[3].values[base + iq],
                nu[4].values[base + iq],
            ];
            let tm = [
                mu[0].dtheta[base + iq],
                mu[1].dtheta[base + iq],
                mu[2].dtheta[base + iq],
                mu[3].dtheta[base + iq],
                mu[4].dtheta[base + iq],
            ];
            let tn = [
                nu[0].dtheta[base + iq],
                nu[1].dtheta[base + iq],
                nu[2].dtheta[base + iq],
                nu[3].dtheta[base + iq],
                nu[4].dtheta[base + iq],
            ];
            let mut grad = 0.0;
            let mut mass = 0.0;
            for j in 0..5 {
                let w = if j == 0 { 1.0 / 3.0 } else { 1.0 };
                let gm = dmu[j][base + iq];
                let gn = dnu[j][base + iq];
                grad += w * (gm * gm + gn * gn);
                mass += w * (m[j] * m[j] + n[j] * n[j]);
            }
            let mut r2_row = grad;
            if include_bulk {
                r2_row += fh * (m[0] * m[0] + n[0] * n[0]) / 3.0
                    + f * (m[1] * m[1] + n[1] * n[1] + m[2] * m[2] + n[2] * n[2])
                    + ft * (m[3] * m[3] + n[3] * n[3] + m[4] * m[4] + n[4] * n[4]);
            }
            if include_mass {
                r2_row += mass;
            }
            acc_r2 += wq * r2_row;

            let bt = |t: &[f64; 5], v: &[f64; 5]| -> f64 {
                let r0 = t[0] - 3.0 * v[2];
                let r1 = t[1] - v[3];
                let r2t = t[2] + v[0] - v[4];
                let r3 = t[3] + v[1];
                let r4 = t[4] + v[2];
                r0 * r0 / 3.0 + r1 * r1 + r2t * r2t + r3 * r3 + r4 * r4
            };
            let mut az = 0.0;
            for b in 0..10 {
                let v = import_bracket(b, kf, s, c, &m, &n);
                az += if b == 0 || b == 5 { v * v / 3.0 } else { v * v };
            }
            acc_plain += wq * (bt(&tm, &m) + bt(&tn, &n) + az / (s * s));
        }
        integrand[ir] = r2 * acc_r2 + acc_plain;
    }
    let pref = if k == 0 { 2.0 * PI } else { PI };
    pref * grid.integrate(&integrand)
}

/// Total second-variation energy of a band-limited frame field,
/// `Q(V) = Σ_k Q(V_k)`, each mode by [`eval_import`].
pub fn eval_q(
    field: &crate::reduction::FrameField,
    prof: &RadialProfile,
    ang: &AngularGrid,
) -> Result<f64, QuadError> {
    let mut total = 0.0;
    for mode in field.modes() {
        total += eval_import(mode.k, prof, ang, &mode.mu, &mode.nu)?;
    }
    Ok(total)
}

/// Evaluate the single-direction axisymmetric form `Q_i(w)`,
/// `i ∈ {0, .., 4}`.
pub fn eval_qi_axisym(
    i: usize,
    prof: &RadialProfile,
    ang: &AngularGrid,
    w: &Field2D,
) -> Result<f64, QuadError> {
    if i > 4 {
        return Err(QuadError::BadHarmonic(i));
    }
    let grid = prof.grid();
    check_field_shape(w, grid, ang)?;
    if i >= 1 {
        // csc²θ weight at both endpoints
        require_vanishing(ang, w, "w", true, true)?;
    }
    let dw = w.radial_derivative(grid);
    let p = prof.params();
    let nr = w.nr();
    let nq = w.nq();
    let wts = ang.weights();
    let mut integrand = vec![0.0; nr];
    for ir in 0..nr {
        let r = grid.nodes()[ir];
        let r2 = r * r;
        let u = prof.u()[ir];
        let bulk = match i {
            0 => p.bulk_f_hat(u),
            1 | 2 => p.bulk_f(u),
            _ => p.bulk_f_tilde(u),
        };
        let base = ir * nq;
        let mut acc_r2 = 0.0;
        let mut acc_plain = 0.0;
        for iq in 0..nq {
            let wq = wts[iq];
            let csc = ang.csc(iq);
            let a = w.values[base + iq];
            let t = w.dtheta[base + iq];
            let g = dw[base + iq];
            let pot = match i {
                0 => 6.0,
                1 | 2 => 4.0 + csc * csc,
                _ => -2.0 + 4.0 * csc * csc,
            };
            acc_r2 += wq * (g * g + bulk * a * a);
            acc_plain += wq * (t * t + pot * a * a);
        }
        integrand[ir] = r2 * acc_r2 + acc_plain;
    }
    Ok(2.0 * PI * grid.integrate(&integrand))
}

/// [`eval_qi_axisym`] with the singular-weight case mapped to `+∞`.
pub fn eval_qi_axisym_or_inf(
    i: usize,
    prof: &RadialProfile,
    ang: &AngularGrid,
    w: &Field2D,
) -> Result<f64, QuadError> {
    match eval_qi_axisym(i, prof, ang, w) {
        Err(QuadError::SingularWeight { .. }) => Ok(f64::INFINITY),
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Hardy decomposition and the weighted Poincaré inequality
// ---------------------------------------------------------------------------

/// Both sides of the weighted Poincaré inequality on the sphere,
///
/// ```text
/// ∫ (|v'|² + k² csc²θ v²) sinθ dθ  >=  (k² + k) ∫ v² sinθ dθ,
/// ```
///
/// evaluated on a Gauss–Legendre grid from nodal values `v` and exact
/// θ-derivative values `dv`.  Returns `(lhs, rhs)`.
pub fn pwh_check(
    k: f64,
    ang: &AngularGrid,
    v: &[f64],
    dv: &[f64],
) -> Result<(f64, f64), QuadError> {
    let nq = ang.order();
    if v.len() != nq || dv.len() != nq {
        return Err(QuadError::LengthMismatch {
            expected: nq,
            got: v.len().min(dv.len()),
        });
    }
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for iq in 0..nq {
        let wq = ang.weights()[iq];
        let csc = ang.csc(iq);
        lhs += wq * (dv[iq] * dv[iq] + k * k * csc * csc * v[iq] * v[iq]);
        rhs += wq * v[iq] * v[iq];
    }
    Ok((lhs, (k * k + k) * rhs))
}

/// Discrete check of the ground-state (Hardy) decomposition
///
/// ```text
/// ∫ (A f'² + V f²) dt  =  ∫ ψ² A g'² dt + ∫ g² (Lψ) ψ dt,   g = f / ψ,
/// ```
///
/// where `L h = -(A h')' + V h`, on a uniform grid `t`.  Endpoint
/// singularities of `V` are tolerated under the pointwise convention
/// `0 · ∞ = 0`, i.e. `f` must vanish identically near a singular endpoint.
/// Returns `(lhs, rhs, lhs - rhs)`.
pub fn hardy_decompose_check(
    t: &[f64],
    a: &[f64],
    v: &[f64],
    psi: &[f64],
    f: &[f64],
) -> Result<(f64, f64, f64), QuadError> {
    let n = t.len();
    for arr in [a, v, psi, f] {
        if arr.len() != n {
            return Err(QuadError::LengthMismatch {
                expected: n,
                got: arr.len(),
            });
        }
    }
    if n < 9 || (n - 1) % 2 != 0 {
        return Err(QuadError::BadField(
            "hardy check needs an odd number of uniformly spaced nodes (>= 9)",
        ));
    }
    let h = t[1] - t[0];
    for i in 1..n - 1 {
        if psi[i] <= 0.0 {
            return Err(QuadError::NonPositivePsi {
                index: i,
                value: psi[i],
            });
        }
    }
    let df = derivative4_uniform(h, f);
    let dpsi = derivative4_uniform(h, psi);
    let mut g = vec![0.0; n];
    for i in 0..n {
        g[i] = if f[i] == 0.0 { 0.0 } else { f[i] / psi[i] };
    }
    let dg = derivative4_uniform(h, &g);
    let apsi: Vec<f64> = a.iter().zip(&dpsi).map(|(ai, di)| ai * di).collect();
    let dapsi = derivative4_uniform(h, &apsi);

    let simpson = |vals: &dyn Fn(usize) -> f64| -> f64 {
        let mut s = vals(0) + vals(n - 1);
        for i in 1..n - 1 {
            s += vals(i) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };

    let lhs = simpson(&|i| {
        let pot = if f[i] == 0.0 { 0.0 } else { v[i] * f[i] * f[i] };
        a[i] * df[i] * df[i] + pot
    });
    let rhs_grad = simpson(&|i| psi[i] * psi[i] * a[i] * dg[i] * dg[i]);
    let rhs_ground = simpson(&|i| {
        if g[i] == 0.0 {
            return 0.0;
        }
        let vpsi = if psi[i] == 0.0 { 0.0 } else { v[i] * psi[i] };
        g[i] * g[i] * (-dapsi[i] + vpsi) * psi[i]
    });
    let rhs = rhs_grad + rhs_ground;
    Ok((lhs, rhs, lhs - rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular::u2_mode;
    use crate::model::Params;
    use crate::profile::{solve_profile, RadialGrid, SolverOptions};

    fn profile(a2: f64, b2: f64, c2: f64, r_max: f64, n: usize) -> RadialProfile {
        let p = Params::new(a2, b2, c2).unwrap();
        let grid = RadialGrid::new(r_max, n).unwrap();
        solve_profile(&p, &grid, &SolverOptions::default()).unwrap()
    }

    fn smooth_triple(grid: &RadialGrid, ncomp: usize, rng: &mut ChaCha8Rng) -> TripleRadial {
        let r_max = grid.r_max();
        let mut comps = vec![vec![0.0; grid.nodes().len()]; 3];
        for comp in comps.iter_mut().take(ncomp) {
            let coefs: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for (i, &r) in grid.nodes().iter().enumerate() {
                comp[i] = coefs
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c * ((j + 1) as f64 * PI * r / r_max).sin())
                    .sum();
            }
        }
        let w4 = comps.pop().unwrap();
        let w2 = comps.pop().unwrap();
        let w0 = comps.pop().unwrap();
        TripleRadial::new(w0, w2, w4).unwrap()
    }

    #[test]
    fn banded_matches_dense_arithmetic() {
        let mut a = Banded::zeros(6, 2);
        let mut dense = [[0.0f64; 6]; 6];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..6 {
            for j in i..(i + 3).min(6) {
                let v = rng.gen_range(-2.0..2.0);
                a.add(i, j, v);
                dense[i][j] += v;
                if i != j {
                    dense[j][i] += v;
                }
            }
        }
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = a.mul_vec(&x);
        for i in 0..6 {
            let want: f64 = (0..6).map(|j| dense[i][j] * x[j]).sum();
            assert!((y[i] - want).abs() < 1e-14, "row {i}: {} vs {want}", y[i]);
        }
        let q = a.quad(&x);
        let want: f64 = (0..6)
            .map(|i| x[i] * (0..6).map(|j| dense[i][j] * x[j]).sum::<f64>())
            .sum();
        assert!((q - want).abs() < 1e-13);
    }

    #[test]
    fn min_eigen_diagonal_example() {
        let mut a = Banded::zeros(2, 1);
        a.add(0, 0, 2.0);
        a.add(1, 1, 5.0);
        let mut b = Banded::zeros(2, 1);
        b.add(0, 0, 1.0);
        b.add(1, 1, 1.0);
        let res = min_eigen(&a, &b, &EigenOptions::default()).unwrap();
        assert!((res.mu_min - 2.0).abs() < 1e-12, "mu = {}", res.mu_min);
        assert!(res.residual < 1e-10);
        assert!(res.vector[0].abs() > 0.99 && res.vector[1].abs() < 1e-6);
    }

    #[test]
    fn inertia_counts_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let mut a = Banded::zeros(n, 2);
        let mut b = Banded::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, rng.gen_range(-3.0..3.0));
            b.add(i, i, rng.gen_range(0.5..2.0));
            if i + 1 < n {
                a.add(i, i + 1, rng.gen_range(-1.0..1.0));
            }
            if i + 2 < n {
                a.add(i, i + 2, rng.gen_range(-0.5..0.5));
            }
        }
        let mut prev = 0;
        for step in -12..=12 {
            let mu = step as f64 * 0.5;
            let c = inertia_below(&a, &b, mu, 3.0).unwrap();
            assert!(c >= prev, "inertia decreased at mu = {mu}");
            prev = c;
        }
        assert_eq!(inertia_below(&a, &b, -1e4, 3.0).unwrap(), 0);
        assert_eq!(inertia_below(&a, &b, 1e4, 3.0).unwrap(), n);
        // min_eigen must land exactly at the 0 -> >=1 transition
        let res = min_eigen(&a, &b, &EigenOptions::default()).unwrap();
        let eps = 1e-6;
        assert_eq!(inertia_below(&a, &b, res.mu_min - eps, 3.0).unwrap(), 0);
        assert!(inertia_below(&a, &b, res.mu_min + eps, 3.0).unwrap() >= 1);
    }

    #[test]
    fn pencil_matches_direct_quadrature() {
        let prof = profile(0.3, 1.0, 1.0, 30.0, 300);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..50 {
            let i = [0usize, 1, 2, 3, 5][trial % 5];
            let ncomp = phi0i_coeffs(i).ncomp;
            let t = smooth_triple(prof.grid(), ncomp, &mut rng);
            let pencil = assemble_phi0i(i, &prof, MassChoice::Plain);
            let comps: Vec<&[f64]> = (0..ncomp).map(|c| t.comp(c)).collect();
            let x = pencil.pack(&comps).unwrap();
            let quad = pencil.a.quad(&x);
            let direct = eval_phi0i_direct(i, &prof, &t).unwrap();
            assert!(
                (quad - direct).abs() <= 1e-8 * (1.0 + quad.abs()),
                "trial {trial} (i = {i}): pencil {quad} vs direct {direct}"
            );
            // mass consistency: x^T B x against the same-element quadrature
            let bquad = pencil.b.quad(&x);
            let mut mass = 0.0;
            let grid = prof.grid();
            let h = grid.h();
            for e in 0..grid.n_intervals() {
                for &(tg, wt) in &gauss3() {
                    let rg = grid.nodes()[e] + tg * h;
                    let mut m = 0.0;
                    for c in 0..ncomp {
                        let w = t.comp(c)[e] * (1.0 - tg) + t.comp(c)[e + 1] * tg;
                        m += w * w;
                    }
                    mass += wt * h * rg * rg * m;
                }
            }
            assert!(
                (bquad - mass).abs() <= 1e-8 * (1.0 + bquad.abs()),
                "mass mismatch at trial {trial}"
            );
        }
    }

    #[test]
    fn phi01_lowest_eigenvalue_is_truncation_kernel() {
        // The translation kernel sits at zero on the whole space; at R = 60
        // the Dirichlet truncation shifts it to ~9.8e-4.
        let prof = profile(0.05, 1.0, 1.0, 60.0, 4000);
        let pencil = assemble_phi0i(1, &prof, MassChoice::Plain);
        let res = pencil.min_eigen(&EigenOptions::default()).unwrap();
        assert!(
            (res.mu_min - 9.775e-4).abs() < 2e-3 * 9.775e-4 + 1e-6,
            "mu1 = {}",
            res.mu_min
        );
        assert!(res.residual < 1e-8);
    }

    #[test]
    fn richardson_ratio_of_mu2_is_second_order() {
        let mut mus = Vec::new();
        for n in [1000usize, 2000, 4000] {
            let prof = profile(0.05, 1.0, 1.0, 60.0, n);
            let pencil = assemble_phi0i(2, &prof, MassChoice::Plain);
            mus.push(pencil.min_eigen(&EigenOptions::default()).unwrap().mu_min);
        }
        let ratio = (mus[0] - mus[1]) / (mus[1] - mus[2]);
        assert!(
            ratio >= 3.5,
            "Richardson ratio {ratio} (mus = {mus:?}) below second-order target"
        );
    }

    #[test]
    fn eigenvector_axis_values_follow_the_regular_branch() {
        // For i >= 2 the regular solution branch has a nonzero limit along
        // (1, 2, -1) at the origin; the free node must pick it up.
        let prof = profile(0.05, 1.0, 1.0, 60.0, 4000);
        let pencil = assemble_phi0i(2, &prof, MassChoice::Plain);
        let res = pencil.min_eigen(&EigenOptions::default()).unwrap();
        let comps = pencil.unpack(&res.vector);
        let v0 = [comps[0][0], comps[1][0], comps[2][0]];
        let norm = (v0[0] * v0[0] + v0[1] * v0[1] + v0[2] * v0[2]).sqrt();
        let peak = comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(norm > 1e-4 * peak, "axis values collapsed: {v0:?}");
        let dir = [1.0, 2.0, -1.0];
        let dn = 6.0f64.sqrt();
        let dot = (v0[0] * dir[0] + v0[1] * dir[1] + v0[2] * dir[2]) / dn;
        let orth = (norm * norm - dot * dot).max(0.0).sqrt();
        assert!(
            orth <= 0.1 * norm,
            "axis values {v0:?} stray from the (1, 2, -1) branch"
        );
    }

    #[test]
    fn mass_choice_preserves_sign_classification() {
        for (a2, i, expect_negative) in [(0.05, 1usize, false), (1.0, 2usize, true)] {
            let prof = profile(a2, if a2 > 0.5 { 0.01 } else { 1.0 }, 1.0, 60.0, 2000);
            let plain = assemble_phi0i(i, &prof, MassChoice::Plain)
                .min_eigen(&EigenOptions::default())
                .unwrap();
            let weighted = assemble_phi0i(i, &prof, MassChoice::GradientWeighted)
                .min_eigen(&EigenOptions::default())
                .unwrap();
            assert_eq!(
                plain.mu_min < -1e-9,
                expect_negative,
                "plain mass: mu = {}",
                plain.mu_min
            );
            assert_eq!(
                weighted.mu_min < -1e-9,
                expect_negative,
                "weighted mass: mu = {}",
                weighted.mu_min
            );
        }
    }

    #[test]
    fn qi_axisym_constant_angle_reduces_to_radial_form() {
        let prof = profile(0.3, 1.0, 1.0, 40.0, 2000);
        let grid = prof.grid();
        let ang = AngularGrid::new(64).unwrap();
        let radial: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&r| (PI * r / grid.r_max()).sin().powi(2) * (-0.1 * r).exp())
            .collect();
        let ones = vec![1.0; ang.order()];
        let zeros = vec![0.0; ang.order()];
        let mut w = Field2D::zeros(grid, &ang);
        w.add_separable(1.0, &radial, &ones, &zeros);
        let q0 = eval_qi_axisym(0, &prof, &ang, &w).unwrap();
        let p = prof.params();
        let dr = grid.derivative4(&radial);
        let mut integrand = vec![0.0; radial.len()];
        for (i, &r) in grid.nodes().iter().enumerate() {
            let u = prof.u()[i];
            integrand[i] =
                (dr[i] * dr[i] + p.bulk_f_hat(u) * radial[i] * radial[i]) * r * r
                    + 6.0 * radial[i] * radial[i];
        }
        let want = 4.0 * PI * grid.integrate(&integrand);
        assert!(
            (q0 - want).abs() <= 1e-10 * (1.0 + want.abs()),
            "Q0 = {q0} vs radial reduction {want}"
        );
    }

    #[test]
    fn q3_sin_squared_reduction_example() {
        let prof = profile(0.3, 1.0, 1.0, 40.0, 2000);
        let grid = prof.grid();
        let ang = AngularGrid::new(64).unwrap();
        let wstar: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&r| r * r * (-0.5 * r).exp())
            .collect();
        let sin2: Vec<f64> = ang.sin_theta().iter().map(|s| s * s).collect();
        let dsin2: Vec<f64> = ang
            .sin_theta()
            .iter()
            .zip(ang.x())
            .map(|(s, x)| 2.0 * s * x)
            .collect();
        let mut w = Field2D::zeros(grid, &ang);
        w.add_separable(1.0, &wstar, &sin2, &dsin2);
        let q3 = eval_qi_axisym(3, &prof, &ang, &w).unwrap();
        let p = prof.params();
        let dw = grid.derivative4(&wstar);
        let mut integrand = vec![0.0; wstar.len()];
        for (i, &r) in grid.nodes().iter().enumerate() {
            let u = prof.u()[i];
            integrand[i] = (dw[i] * dw[i] + p.bulk_f_tilde(u) * wstar[i] * wstar[i]) * r * r
                + 4.0 * wstar[i] * wstar[i];
        }
        let want = 32.0 * PI / 15.0 * grid.integrate(&integrand);
        assert!(
            (q3 - want).abs() <= 1e-10 * (1.0 + want.abs()),
            "Q3 = {q3} vs reduction {want}"
        );
    }

    #[test]
    fn q1_ground_state_factorization_identity() {
        // With w = u(r) η(r) sinθ, the radial operator underlying Q1 at the
        // sinθ angular eigenvalue annihilates u, so only the η-gradient term
        // survives: Q1 = (8π/3) ∫ u² η'² r² dr.  The residual gap is set by
        // the O(h²) accuracy of the discrete profile.
        let prof = profile(1.0, 1.0, 1.0, 60.0, 6000);
        let grid = prof.grid();
        let ang = AngularGrid::new(64).unwrap();
        let eta: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&r| {
                let z: f64 = (r - 20.0) / 8.0;
                (-z * z).exp()
            })
            .collect();
        let ueta: Vec<f64> = prof.u().iter().zip(&eta).map(|(u, e)| u * e).collect();
        let sin: Vec<f64> = ang.sin_theta().to_vec();
        let dsin: Vec<f64> = ang.x().to_vec();
        let mut w = Field2D::zeros(grid, &ang);
        w.add_separable(1.0, &ueta, &sin, &dsin);
        let q1 = eval_qi_axisym(1, &prof, &ang, &w).unwrap();
        let deta = grid.derivative4(&eta);
        let mut integrand = vec![0.0; eta.len()];
        for (i, &r) in grid.nodes().iter().enumerate() {
            let u = prof.u()[i];
            integrand[i] = u * u * deta[i] * deta[i] * r * r;
        }
        let want = 8.0 * PI / 3.0 * grid.integrate(&integrand);
        assert!(
            (q1 - want).abs() <= 2e-3 * (1.0 + want.abs()),
            "Q1 = {q1} vs ground-state identity {want}"
        );
    }

    #[test]
    fn singular_weight_detection() {
        let prof = profile(0.3, 1.0, 1.0, 20.0, 400);
        let grid = prof.grid();
        let ang = AngularGrid::new(64).unwrap();
        let radial: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&r| (PI * r / grid.r_max()).sin())
            .collect();
        // v2 with a nonzero value at θ = 0 makes Φ_2 infinite.
        let bad_ang: Vec<f64> = ang.x().iter().map(|x| 0.5 * (1.0 + x)).collect();
        let bad_dang: Vec<f64> = ang.sin_theta().iter().map(|s| -0.5 * s).collect();
        let mut v2 = Field2D::zeros(grid, &ang);
        v2.add_separable(1.0, &radial, &bad_ang, &bad_dang);
        let zero = Field2D::zeros(grid, &ang);
        let err = eval_phik(2, &prof, &ang, &zero, &v2, &zero).unwrap_err();
        assert!(matches!(err, QuadError::SingularWeight { field: "v2", .. }));
        assert!(eval_phik_or_inf(2, &prof, &ang, &zero, &v2, &zero)
            .unwrap()
            .is_infinite());
        // the same profile times sinθ is admissible
        let sin = ang.sin_theta().to_vec();
        let dsin = ang.x().to_vec();
        let mut ok2 = Field2D::zeros(grid, &ang);
        ok2.add_separable(1.0, &radial, &sin, &dsin);
        assert!(eval_phik(2, &prof, &ang, &zero, &ok2, &zero).is_ok());
        // Q_1 with w not vanishing at the poles is likewise infinite
        let mut w = Field2D::zeros(grid, &ang);
        let ones = vec![1.0; ang.order()];
        let zeros_a = vec![0.0; ang.order()];
        w.add_separable(1.0, &radial, &ones, &zeros_a);
        assert!(matches!(
            eval_qi_axisym(1, &prof, &ang, &w),
            Err(QuadError::SingularWeight { .. })
        ));
        assert!(eval_qi_axisym_or_inf(1, &prof, &ang, &w)
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn import_invariant_under_quarter_period_shift() {
        let prof = profile(0.3, 1.0, 1.0, 20.0, 400);
        let grid = prof.grid();
        let ang = AngularGrid::new(128).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = 2usize;
        let make = |rng: &mut ChaCha8Rng| -> Field2D {
            let radial: Vec<f64> = {
                let c1 = rng.gen_range(-1.0..1.0);
                let c2 = rng.gen_range(-1.0..1.0);
                grid.nodes()
                    .iter()
                    .map(|&r| {
                        (c1 * (PI * r / grid.r_max()).sin()
                            + c2 * (2.0 * PI * r / grid.r_max()).sin())
                            * (-0.2 * r).exp()
                    })
                    .collect()
            };
            // sin²θ-shaped angular factor keeps every bracket admissible
            let a: Vec<f64> = ang.sin_theta().iter().map(|s| s * s).collect();
            let da: Vec<f64> = ang
                .sin_theta()
                .iter()
                .zip(ang.x())
                .map(|(s, x)| 2.0 * s * x)
                .collect();
            let mut f = Field2D::zeros(grid, &ang);
            f.add_separable(1.0, &radial, &a, &da);
            f
        };
        let mu: [Field2D; 5] = std::array::from_fn(|_| make(&mut rng));
        let nu: [Field2D; 5] = std::array::from_fn(|_| make(&mut rng));
        let q1 = eval_import(k, &prof, &ang, &mu, &nu).unwrap();
        // A quarter-period shift in φ sends (μ, ν) to (ν, -μ) and must leave
        // the energy unchanged.
        let neg_mu: [Field2D; 5] = std::array::from_fn(|j| {
            let mut f = mu[j].clone();
            f.scale(-1.0);
            f
        });
        let q2 = eval_import(k, &prof, &ang, &nu, &neg_mu).unwrap();
        assert!(
            (q1 - q2).abs() <= 1e-12 * (1.0 + q1.abs()),
            "quarter-period shift changed the value: {q1} vs {q2}"
        );
    }

    #[test]
    fn import_rejects_nu_for_k0_and_checks_brackets() {
        let prof = profile(0.3, 1.0, 1.0, 20.0, 400);
        let grid = prof.grid();
        let ang = AngularGrid::new(64).unwrap();
        let radial: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&r| (PI * r / grid.r_max()).sin())
            .collect();
        let sin = ang.sin_theta().to_vec();
        let dsin = ang.x().to_vec();
        let mut f = Field2D::zeros(grid, &ang);
        f.add_separable(1.0, &radial, &sin, &dsin);
        let zero = || Field2D::zeros(grid, &ang);
        let mut nu: [Field2D; 5] = std::array::from_fn(|_| zero());
        nu[1] = f.clone();
        let mu: [Field2D; 5] = std::array::from_fn(|_| zero());
        assert!(matches!(
            eval_import(0, &prof, &ang, &mu, &nu),
            Err(QuadError::BadField(_))
        ));
        // k = 1 with a lone μ2 that does not vanish on the axis: the
        // (k ν1 - sin μ0 - cos μ2 - sin μ4) bracket is violated there.
        let ones = vec![1.0; ang.order()];
        let zeros_a = vec![0.0; ang.order()];
        let mut mu_bad: [Field2D; 5] = std::array::from_fn(|_| zero());
        mu_bad[2].add_separable(1.0, &radial, &ones, &zeros_a);
        let nu_zero: [Field2D; 5] = std::array::from_fn(|_| zero());
        assert!(matches!(
            eval_import(1, &prof, &ang, &mu_bad, &nu_zero),
            Err(QuadError::SingularWeight { .. })
        ));
        // pairing it with ν1 = g, μ2 = g cosθ restores admissibility
        let cos = ang.x().to_vec();
        let msin: Vec<f64> = ang.sin_theta().iter().map(|s| -s).collect();
        let mut mu_ok: [Field2D; 5] = std::array::from_fn(|_| zero());
        let mut nu_ok: [Field2D; 5] = std::array::from_fn(|_| zero());
        mu_ok[2].add_separable(1.0, &radial, &cos, &msin);
        nu_ok[1].add_separable(1.0, &radial, &ones, &zeros_a);
        assert!(eval_import(1, &prof, &ang, &mu_ok, &nu_ok).is_ok());
    }

    #[test]
    fn pwh_equality_cases_and_random_inequality() {
        let ang = AngularGrid::new(256).unwrap();
        // k = 2, v = sin²θ: both sides equal 32/5
        let v: Vec<f64> = ang.sin_theta().iter().map(|s| s * s).collect();
        let dv: Vec<f64> = ang
            .sin_theta()
            .iter()
            .zip(ang.x())
            .map(|(s, x)| 2.0 * s * x)
            .collect();
        let (lhs, rhs) = pwh_check(2.0, &ang, &v, &dv).unwrap();
        assert!((lhs - 32.0 / 5.0).abs() < 1e-10, "lhs = {lhs}");
        assert!((rhs - 32.0 / 5.0).abs() < 1e-10, "rhs = {rhs}");
        // k = 1, v = sinθ: equality as well
        let v1 = ang.sin_theta().to_vec();
        let dv1 = ang.x().to_vec();
        let (l1, r1) = pwh_check(1.0, &ang, &v1, &dv1).unwrap();
        assert!((l1 - r1).abs() < 1e-10 * (1.0 + l1.abs()));
        // random perturbations v = sin²θ p(cosθ) stay on the >= side
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let coefs: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut vv = vec![0.0; ang.order()];
            let mut dvv = vec![0.0; ang.order()];
            for iq in 0..ang.order() {
                let x = ang.x()[iq];
                let s = ang.sin_theta()[iq];
                // p = Σ c_j x^j and its x-derivative
                let mut p = 0.0;
                let mut dpdx = 0.0;
                let mut xprev = 0.0;
                let mut xp = 1.0;
                for (j, c) in coefs.iter().enumerate() {
                    p += c * xp;
                    dpdx += c * (j as f64) * xprev;
                    xprev = xp;
                    xp *= x;
                }
                vv[iq] = s * s * p;
                dvv[iq] = 2.0 * s * x * p - s * s * s * dpdx;
            }
            let (l, r) = pwh_check(2.0, &ang, &vv, &dvv).unwrap();
            assert!(l >= r - 1e-10 * (1.0 + l.abs()), "lhs {l} < rhs {r}");
        }
    }

    #[test]
    fn hardy_identity_on_the_sphere_weight() {
        // A = sinθ, V = 4 cscθ, ψ = sin²θ reproduces the k = 2 weighted
        // Poincaré ground state: (Lψ)ψ = 6 sinθ ψ².
        let n = 4001;
        let t: Vec<f64> = (0..n).map(|i| PI * i as f64 / (n - 1) as f64).collect();
        let a: Vec<f64> = t.iter().map(|&x| x.sin()).collect();
        let v: Vec<f64> = t
            .iter()
            .map(|&x| if x.sin() > 0.0 { 4.0 / x.sin() } else { f64::INFINITY })
            .collect();
        let psi: Vec<f64> = t.iter().map(|&x| x.sin() * x.sin()).collect();
        let f: Vec<f64> = t
            .iter()
            .map(|&x| {
                if x < 0.4 || x > PI - 0.4 {
                    0.0
                } else {
                    let z = (x - PI / 2.0) / 0.35;
                    (-z * z).exp() * (x.sin() - 0.4f64.sin())
                }
            })
            .collect();
        let (lhs, rhs, gap) = hardy_decompose_check(&t, &a, &v, &psi, &f).unwrap();
        assert!(
            gap.abs() <= 1e-6 * (1.0 + lhs.abs()),
            "lhs {lhs} rhs {rhs} gap {gap}"
        );
    }

    #[test]
    fn hardy_identity_trivial_psi_is_exact() {
        let n = 201;
        let t: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        let a: Vec<f64> = t.iter().map(|&x| 1.0 + x * x).collect();
        let v = vec![0.0; n];
        let psi = vec![1.0; n];
        let f: Vec<f64> = t.iter().map(|&x| (x * 1.7).sin()).collect();
        let (lhs, rhs, gap) = hardy_decompose_check(&t, &a, &v, &psi, &f).unwrap();
        assert_eq!(gap, 0.0, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn hardy_identity_radial_q0_ground_state() {
        // A = r², V = 6 + f̂(u) r², ψ = u' — the ground-state substitution
        // used to bound the k = 0 mode.  (Lψ)ψ = 2u'(6u/r - u') >= 0 because
        // w = r u'/u stays below 6.
        let prof = profile(1.0, 1.0, 1.0, 40.0, 4000);
        let grid = prof.grid();
        let t = grid.nodes().to_vec();
        let a: Vec<f64> = t.iter().map(|&r| r * r).collect();
        let p = prof.params();
        let v: Vec<f64> = t
            .iter()
            .zip(prof.u())
            .map(|(&r, &u)| 6.0 + p.bulk_f_hat(u) * r * r)
            .collect();
        let psi = prof.du().to_vec();
        let f: Vec<f64> = t
            .iter()
            .zip(&psi)
            .map(|(&r, &du)| {
                if r < 1.0 || r > 30.0 {
                    0.0
                } else {
                    let z = (r - 12.0) / 5.0;
                    du * (-z * z).exp()
                }
            })
            .collect();
        let (lhs, rhs, gap) = hardy_decompose_check(&t, &a, &v, &psi, &f).unwrap();
        assert!(
            gap.abs() <= 1e-6 * (1.0 + lhs.abs()),
            "lhs {lhs} rhs {rhs} gap {gap}"
        );
        // the ground-state term itself must be nonnegative
        let dpsi = derivative4_uniform(grid.h(), &psi);
        let apsi: Vec<f64> = a.iter().zip(&dpsi).map(|(ai, di)| ai * di).collect();
        let dapsi = derivative4_uniform(grid.h(), &apsi);
        for i in 1..t.len() - 1 {
            let lp = (-dapsi[i] + v[i] * psi[i]) * psi[i];
            assert!(
                lp >= -1e-7 * (1.0 + lp.abs()),
                "ground-state term negative at r = {}: {lp}",
                t[i]
            );
        }
    }

    #[test]
    fn phik_of_single_u2_mode_matches_scalar_pencil_value() {
        // Φ_0 with v2 = w(r) u²_{0,i}(θ) and v0 = v4 = 0 integrates the same
        // scalar functional as the (λ = i(i+1)) w2-channel: the angular
        // factors are normalized so that the θ-quadrature reproduces
        // ∫ (w'² + f w²) r² + (λ + 4) w² dr exactly.
        let prof = profile(0.3, 1.0, 1.0, 30.0, 1500);
        let grid = prof.grid();
        let ang = AngularGrid::new(128).unwrap();
        let i = 3usize;
        let lam = (i * (i + 1)) as f64;
        let mode = u2_mode(0, i, &ang).unwrap();
        let radial: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&r| (PI * r / grid.r_max()).sin() * (-0.15 * r).exp())
            .collect();
        let mut v2 = Field2D::zeros(grid, &ang);
        v2.add_product(1.0, &radial, &mode);
        let zero = Field2D::zeros(grid, &ang);
        let phi = eval_phik(0, &prof, &ang, &zero, &v2, &zero).unwrap();
        let p = prof.params();
        let dr = grid.derivative4(&radial);
        let mut integrand = vec![0.0; radial.len()];
        for (j, &r) in grid.nodes().iter().enumerate() {
            let u = prof.u()[j];
            integrand[j] = (dr[j] * dr[j] + p.bulk_f(u) * radial[j] * radial[j]) * r * r
                + (lam + 4.0) * radial[j] * radial[j];
        }
        let want = PI * grid.integrate(&integrand);
        assert!(
            (phi - want).abs() <= 1e-8 * (1.0 + want.abs()),
            "phi = {phi} vs scalar channel {want}"
        );
    }

    #[test]
    fn coordinate_dump_is_parseable() {
        let mut a = Banded::zeros(3, 1);
        a.add(0, 0, 1.5);
        a.add(0, 1, -0.25);
        a.add(1, 1, 2.0);
        a.add(2, 2, 3.0);
        let text = a.to_coordinate_text("test pencil");
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "%%MatrixMarket matrix coordinate real symmetric"
        );
        assert!(lines.next().unwrap().starts_with('%'));
        assert_eq!(lines.next().unwrap(), "3 3 4");
        let mut sum = 0.0;
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            assert_eq!(f.len(), 3);
            sum += f[2].parse::<f64>().unwrap();
        }
        assert!((sum - 6.25).abs() < 1e-15);
    }
}
