//! End-to-end acceptance sweep.
//!
//! Eleven numbered criteria, each printing exactly one `[PASS]`/`[FAIL]`
//! line with the measured quantities, asserted together at the end so a
//! failure still reports the full tally.  Run with `-- --nocapture` to see
//! the lines on a green run.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hedgehog::angular::{basis_mode, inner, rayleigh, AngularError, AngularGrid};
use hedgehog::model::{rescale_params, Params};
use hedgehog::profile::{
    profile_w, solve_profile, verify_theorem_properties, RadialGrid, RadialProfile, SolverOptions,
};
use hedgehog::quadforms::{pwh_check, Field2D};
use hedgehog::reduction::{
    change_vars, fourier_split, mode_domination_check, qk_split_check, theta_project, FrameField,
    FrameMode, ModeBlock, Representation,
};
use hedgehog::stability::{
    check_lower_bounds, coercivity_polynomial, instability_witness, kernel_check, mode_spectrum,
    Verdict, WitnessSearch,
};

struct Gate {
    lines: Vec<(String, bool)>,
}

impl Gate {
    fn new() -> Self {
        Gate { lines: Vec::new() }
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        let line = format!(
            "[{}] {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        println!("{line}");
        self.lines.push((line, pass));
    }

    fn finish(self) {
        let tally = self
            .lines
            .iter()
            .map(|(l, _)| l.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let failed = self.lines.iter().filter(|(_, p)| !p).count();
        assert!(failed == 0, "{failed} criteria failed:\n{tally}");
    }
}

fn solve(a2: f64, b2: f64, c2: f64, r_max: f64, n: usize) -> RadialProfile {
    let p = Params::new(a2, b2, c2).unwrap();
    let grid = RadialGrid::new(r_max, n).unwrap();
    solve_profile(&p, &grid, &SolverOptions::default()).unwrap()
}

// -- 1 ----------------------------------------------------------------------

fn criterion_profile_fidelity(gate: &mut Gate) {
    let t0 = Instant::now();
    let prof = solve(0.0, 1.0, 1.0, 60.0, 8000);
    let secs = t0.elapsed().as_secs_f64();
    let res = prof.residual();
    let tail = (prof.u()[8000] - 0.5).abs();
    let monotone = prof.u().windows(2).all(|w| w[1] > w[0]);
    let w = profile_w(&prof);
    let w_ok = w[1..8000].iter().all(|&x| x > 0.0 && x < 2.0);
    let pass = res < 1e-8 && tail < 1e-6 && monotone && w_ok && secs < 10.0;
    gate.check(
        "1 profile-fidelity",
        pass,
        format!(
            "residual {res:.2e}, |u(60)-1/2| {tail:.2e}, monotone {monotone}, \
             0<w<2 {w_ok}, {secs:.2}s"
        ),
    );
}

// -- 2 ----------------------------------------------------------------------

fn criterion_profile_inequalities(gate: &mut Gate) {
    let t0 = Instant::now();
    let grid = RadialGrid::new(60.0, 4000).unwrap();
    let ref0 = solve_profile(
        &Params::new(0.0, 1.0, 1.0).unwrap(),
        &grid,
        &SolverOptions::default(),
    )
    .unwrap();
    let mut all = true;
    let mut worst = f64::INFINITY;
    for a2 in [0.01, 0.1, 1.0, 10.0] {
        let prof = solve_profile(
            &Params::new(a2, 1.0, 1.0).unwrap(),
            &grid,
            &SolverOptions::default(),
        )
        .unwrap();
        let rep = verify_theorem_properties(&prof, &ref0, 30.0).unwrap();
        all &= rep.all_pass();
        for fam in &rep.families {
            worst = worst.min(fam.worst_margin);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = all && secs < 60.0;
    gate.check(
        "2 profile-inequality-suite",
        pass,
        format!(
            "a2 in {{0.01, 0.1, 1, 10}}: all families pass {all}, \
             worst margin {worst:.2e}, {secs:.2}s"
        ),
    );
}

// -- 3 ----------------------------------------------------------------------

fn criterion_angular_spectra(gate: &mut Gate) {
    let ang = AngularGrid::new(96).unwrap();
    let mut worst_rq = 0.0f64;
    let mut worst_norm = 0.0f64;
    let mut degenerate = Vec::new();
    let mut modes = 0usize;
    for k in 0..=2u8 {
        for m in [0u8, 2, 4] {
            for i in 0..=10usize {
                let mode = match basis_mode(k, m, i, &ang) {
                    Ok(mode) => mode,
                    Err(AngularError::DegenerateMode { .. }) => {
                        degenerate.push((k, m, i));
                        continue;
                    }
                    Err(_) => continue,
                };
                modes += 1;
                let lambda = if k == 2 {
                    ((i + 1) * (i + 2)) as f64
                } else {
                    (i * (i + 1)) as f64
                };
                worst_rq = worst_rq.max((rayleigh(&mode, &ang) - lambda).abs());
                let norm2 = inner(&ang, &mode.values, &mode.values).unwrap();
                match m {
                    0 if !(k == 0 && i == 0) => {
                        worst_norm = worst_norm.max((norm2 - lambda).abs())
                    }
                    4 => worst_norm = worst_norm.max((norm2 - (lambda - 2.0)).abs()),
                    _ => {}
                }
            }
        }
    }
    let deg_ok = degenerate == [(0, 4, 1), (1, 4, 1)];
    let pass = worst_rq < 1e-6 && worst_norm < 1e-8 && deg_ok;
    gate.check(
        "3 angular-spectra",
        pass,
        format!(
            "{modes} modes (k<=2, i<=10): worst |RQ-lambda| {worst_rq:.2e}, \
             worst norm gap {worst_norm:.2e}, degenerate pairs {degenerate:?}"
        ),
    );
}

// -- 4 ----------------------------------------------------------------------

fn criterion_pwh_equality(gate: &mut Gate) {
    let ang = AngularGrid::new(64).unwrap();
    let nq = ang.order();
    let mut v = vec![0.0; nq];
    let mut dv = vec![0.0; nq];
    for iq in 0..nq {
        let s = ang.sin_theta()[iq];
        v[iq] = s * s;
        dv[iq] = 2.0 * s * ang.x()[iq];
    }
    let (lhs, rhs) = pwh_check(2.0, &ang, &v, &dv).unwrap();
    let sharp = (lhs - 32.0 / 5.0).abs().max((rhs - 32.0 / 5.0).abs());

    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut worst_margin = f64::INFINITY;
    for _ in 0..100 {
        let a0 = rng.gen_range(-1.0..1.0);
        let a1 = rng.gen_range(-1.0..1.0);
        let mut vr = vec![0.0; nq];
        let mut dvr = vec![0.0; nq];
        for iq in 0..nq {
            let s = ang.sin_theta()[iq];
            let x = ang.x()[iq];
            vr[iq] = s * s * (a0 + a1 * x);
            dvr[iq] = 2.0 * s * x * (a0 + a1 * x) - s * s * s * a1;
        }
        let (l, r) = pwh_check(2.0, &ang, &vr, &dvr).unwrap();
        worst_margin = worst_margin.min(l - r);
    }
    let pass = sharp < 1e-10 && worst_margin >= -1e-10;
    gate.check(
        "4 poincare-hardy-equality",
        pass,
        format!(
            "sharp case |both sides - 32/5| {sharp:.2e}, \
             worst margin over 100 draws {worst_margin:.2e}"
        ),
    );
}

// -- 5 ----------------------------------------------------------------------

/// One azimuthal-mode amplitude slot.  For `k <= 2` the θ-profile is a random
/// combination of the spherical eigenbasis with band `i <= 6`, so the whole
/// chain stays band-limited; for `k = 3, 4` (never θ-projected) a generic
/// admissible `sin²θ (a0 + a1 cosθ)` profile.
fn band_component(
    grid: &RadialGrid,
    ang: &AngularGrid,
    k: usize,
    family: u8,
    rng: &mut ChaCha8Rng,
) -> Field2D {
    let r_max = grid.r_max();
    let radial = |c1: f64, c2: f64| -> Vec<f64> {
        grid.nodes()
            .iter()
            .map(|&r| {
                (c1 * (std::f64::consts::PI * r / r_max).sin()
                    + c2 * (2.0 * std::f64::consts::PI * r / r_max).sin())
                    * (-0.15 * r).exp()
            })
            .collect()
    };
    let mut f = Field2D::zeros(grid, ang);
    if k <= 2 {
        for i in 0..=6usize {
            let Ok(mode) = basis_mode(k as u8, family, i, ang) else {
                continue;
            };
            let c = rng.gen_range(-0.2..0.2);
            f.add_product(c, &radial(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)), &mode);
        }
    } else {
        let a0 = rng.gen_range(-0.5..0.5);
        let a1 = rng.gen_range(-0.5..0.5);
        let nq = ang.order();
        let mut vals = vec![0.0; nq];
        let mut dvals = vec![0.0; nq];
        for iq in 0..nq {
            let x = ang.x()[iq];
            let s = ang.sin_theta()[iq];
            vals[iq] = s * s * (a0 + a1 * x);
            dvals[iq] = 2.0 * s * x * (a0 + a1 * x) - s * s * s * a1;
        }
        f.add_separable(1.0, &radial(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)), &vals, &dvals);
    }
    f
}

const SLOT_FAMILY: [u8; 5] = [0, 2, 2, 4, 4];

fn band_limited_field(
    grid: &RadialGrid,
    ang: &AngularGrid,
    rng: &mut ChaCha8Rng,
) -> FrameField {
    let mut field = FrameField::new();
    for k in 0..=4usize {
        let mu: [Field2D; 5] =
            std::array::from_fn(|j| band_component(grid, ang, k, SLOT_FAMILY[j], rng));
        let nu: [Field2D; 5] = if k == 0 {
            std::array::from_fn(|_| Field2D::zeros(grid, ang))
        } else {
            std::array::from_fn(|j| band_component(grid, ang, k, SLOT_FAMILY[j], rng))
        };
        field.push(FrameMode::new(k, mu, nu).unwrap()).unwrap();
    }
    field
}

fn criterion_decomposition_chain(gate: &mut Gate) {
    let prof = solve(0.3, 1.0, 1.0, 20.0, 400);
    let grid = prof.grid();
    let ang = AngularGrid::new(64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2026);
    let mut worst_add = 0.0f64;
    let mut worst_qk = 0.0f64;
    let mut worst_theta = 0.0f64;
    let mut worst_dom = f64::INFINITY;
    for _ in 0..20 {
        let field = band_limited_field(grid, &ang, &mut rng);
        let split = fourier_split(&field, &prof, &ang, 32).unwrap();
        worst_add = worst_add.max(split.gap);
        for block in &split.blocks {
            let vb = change_vars(block);
            let (_, _, gap) = qk_split_check(&vb, &prof, &ang).unwrap();
            worst_qk = worst_qk.max(gap.abs());
            if block.k <= 2 {
                let proj = theta_project(
                    block.k,
                    &vb.fields[0],
                    &vb.fields[2],
                    &vb.fields[4],
                    8,
                    &prof,
                    &ang,
                )
                .unwrap();
                worst_theta = worst_theta.max(proj.gap.abs());
            } else {
                let rep = mode_domination_check(block, &prof, &ang).unwrap();
                worst_dom = worst_dom.min(rep.margin);
            }
        }
        // the reattachment inequality once more above the field band
        let five = ModeBlock {
            k: 5,
            rep: Representation::Xi,
            fields: std::array::from_fn(|j| band_component(grid, &ang, 5, SLOT_FAMILY[j], &mut rng)),
        };
        let rep = mode_domination_check(&five, &prof, &ang).unwrap();
        worst_dom = worst_dom.min(rep.margin);
    }
    let pass = worst_add < 1e-10 && worst_qk < 1e-8 && worst_theta < 1e-6 && worst_dom >= -1e-9;
    gate.check(
        "5 decomposition-chain",
        pass,
        format!(
            "20 band-limited fields: additivity {worst_add:.2e}, split {worst_qk:.2e}, \
             theta projection {worst_theta:.2e}, domination margin {worst_dom:.2e}"
        ),
    );
}

// -- 6 ----------------------------------------------------------------------

fn criterion_translation_kernel(gate: &mut Gate) {
    let p = Params::new(1.0, 1.0, 1.0).unwrap();
    let prof = solve(1.0, 1.0, 1.0, 2500.0, 50_000);
    let rep = mode_spectrum(&p, &prof, 4).unwrap();
    let mu1 = rep.rows[1].mu_min;
    let ray = rep.kernel_ray_similarity;
    let ang = AngularGrid::new(32).unwrap();
    let kr = kernel_check(&prof, &ang).unwrap();
    let pass = mu1.abs() < 1e-6 && ray > 1.0 - 1e-6 && kr.max_ratio < 1e-6;
    gate.check(
        "6 translation-kernel",
        pass,
        format!(
            "mu_1 {mu1:.2e}, ray similarity 1-{:.2e}, worst Q/|grad|^2 over \
             coordinate translations {:.2e}",
            1.0 - ray,
            kr.max_ratio
        ),
    );
}

// -- 7 ----------------------------------------------------------------------

fn criterion_stable_regime(gate: &mut Gate) {
    let p = Params::new(0.05, 1.0, 1.0).unwrap();
    let prof = solve(0.05, 1.0, 1.0, 60.0, 4000);
    let rep = mode_spectrum(&p, &prof, 8).unwrap();
    let floor = rep.min_mu();
    let verdict_ok = rep.verdict == Verdict::StableWithKernel;
    let pass = floor >= -1e-7 && verdict_ok;
    gate.check(
        "7 stable-regime",
        pass,
        format!(
            "(a2, b2, c2) = (0.05, 1, 1): min mu over i<=8 is {floor:.2e}, \
             verdict {}",
            rep.verdict
        ),
    );
}

// -- 8 ----------------------------------------------------------------------

fn criterion_unstable_regime(gate: &mut Gate) {
    let p = Params::new(1.0, 0.01, 1.0).unwrap();
    let witness = instability_witness(&p, &WitnessSearch::default()).unwrap();
    let prof = solve(1.0, 0.01, 1.0, 60.0, 4000);
    let rep = mode_spectrum(&p, &prof, 6).unwrap();
    let pass = witness.value < 0.0 && rep.min_mu() < 0.0 && rep.is_unstable();
    gate.check(
        "8 unstable-regime",
        pass,
        format!(
            "(a2, b2, c2) = (1, 0.01, 1): witness Q3 {:.4e}, scan min mu {:.4e}, \
             verdict {}",
            witness.value,
            rep.min_mu(),
            rep.verdict
        ),
    );
}

// -- 9 ----------------------------------------------------------------------

fn criterion_lower_bounds(gate: &mut Gate) {
    let prof = solve(0.01, 1.0, 1.0, 40.0, 4000);
    let rep = check_lower_bounds(&prof, 100, 7).unwrap();
    let worst = rep
        .cases
        .iter()
        .map(|c| c.worst_margin)
        .fold(f64::INFINITY, f64::min);
    let violations: usize = rep.cases.iter().map(|c| c.violations).sum();
    let pass = rep.all_pass() && worst >= -1e-9;
    gate.check(
        "9 radial-lower-bounds",
        pass,
        format!(
            "100 seeded triples at a2 = 0.01: {violations} violations, \
             worst margin {worst:.2e}, uniaxial value {:.4e}",
            rep.kernel_uniaxial_value
        ),
    );
}

// -- 10 ---------------------------------------------------------------------

fn criterion_coercivity(gate: &mut Gate) {
    let t0 = Instant::now();
    let scan = coercivity_polynomial(1e-3);
    let secs = t0.elapsed().as_secs_f64();
    let pass = scan.min_value > 0.0 && scan.points == 1_000_000 && secs < 5.0;
    gate.check(
        "10 coercivity-polynomial",
        pass,
        format!(
            "delta0 = 1/1000: min {:.6} at w = {:.4} over {} points, {secs:.2}s",
            scan.min_value, scan.argmin, scan.points
        ),
    );
}

// -- 11 ---------------------------------------------------------------------

fn criterion_refinement_invariance(gate: &mut Gate) {
    let mut verdicts_ok = true;
    let mut notes = Vec::new();
    for (a2, b2, c2) in [(0.05, 1.0, 1.0), (1.0, 0.01, 1.0)] {
        let p = Params::new(a2, b2, c2).unwrap();
        let coarse = mode_spectrum(&p, &solve(a2, b2, c2, 40.0, 1200), 4).unwrap();
        let fine = mode_spectrum(&p, &solve(a2, b2, c2, 40.0, 2400), 4).unwrap();
        verdicts_ok &= coarse.verdict == fine.verdict;

        let resc = rescale_params(&p, 2.0, 0.5).unwrap();
        let image = solve(
            resc.params.a2(),
            resc.params.b2(),
            resc.params.c2(),
            40.0 * resc.mu,
            1200,
        );
        let scaled = mode_spectrum(&resc.params, &image, 4).unwrap();
        verdicts_ok &= scaled.verdict == coarse.verdict;
        notes.push(format!(
            "a2 {a2}: {} / {} / {}",
            coarse.verdict, fine.verdict, scaled.verdict
        ));
    }

    let mu2 = |n: usize| -> f64 {
        let p = Params::new(1.0, 0.01, 1.0).unwrap();
        mode_spectrum(&p, &solve(1.0, 0.01, 1.0, 40.0, n), 4).unwrap().rows[2].mu_min
    };
    let (m1, m2, m4) = (mu2(1000), mu2(2000), mu2(4000));
    let ratio = (m1 - m2) / (m2 - m4);
    let pass = verdicts_ok && ratio >= 3.5;
    gate.check(
        "11 refinement-invariance",
        pass,
        format!(
            "verdicts [{}] unchanged {verdicts_ok}; Richardson ratio {ratio:.3}",
            notes.join("; ")
        ),
    );
}

#[test]
fn acceptance_criteria() {
    let mut gate = Gate::new();
    criterion_profile_fidelity(&mut gate);
    criterion_profile_inequalities(&mut gate);
    criterion_angular_spectra(&mut gate);
    criterion_pwh_equality(&mut gate);
    criterion_decomposition_chain(&mut gate);
    criterion_translation_kernel(&mut gate);
    criterion_stable_regime(&mut gate);
    criterion_unstable_regime(&mut gate);
    criterion_lower_bounds(&mut gate);
    criterion_coercivity(&mut gate);
    criterion_refinement_invariance(&mut gate);
    gate.finish();
}
