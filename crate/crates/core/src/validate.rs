//! Fast numerical self-checks, exposed through the CLI `validate` command.
//!
//! Each check reruns one of the identities the solver leans on (surrogate
//! tightness, gradient consistency, the cascade linearization, projection
//! idempotence, linear-solve residuals, and a small brute-force comparison)
//! on freshly drawn instances. They are scaled down from the full acceptance
//! suite so the whole set finishes in seconds.

use num_complex::Complex64;

use crate::config::RunConfig;
use crate::model::{
    cascade_coefficients, effective_channel, interference_covariance, optimal_auxiliary,
    per_bs_rates, sinr, subgradient_coeffs, surrogate_q, CascadeData, PrecoderData, Selection,
};
use crate::numerics::{
    derive_seed, hermitian_solve, project_ball, project_unit_disk, CMatrix, CVector, Rng,
};
use crate::optimizer::run_algorithm;
use crate::scenario::{build_scenario, ChannelSet};

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn all_passed(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.passed)
}

/// Run every self-check with instance streams derived from `seed`.
pub fn run_all(seed: u64) -> Vec<CheckReport> {
    vec![
        surrogate_tightness(derive_seed(seed, &[1]), 20),
        precoder_gradient(derive_seed(seed, &[2]), 4),
        phase_gradient(derive_seed(seed, &[3]), 4),
        cascade_identity(derive_seed(seed, &[4]), 200),
        projection_idempotence(derive_seed(seed, &[5]), 50),
        linear_solve_residual(derive_seed(seed, &[6]), 50),
        tiny_grid_comparison(derive_seed(seed, &[7])),
    ]
}

struct Instance {
    noise: f64,
    h_effs: Vec<CMatrix>,
    precoders: Vec<CVector>,
    ys: Vec<CVector>,
}

fn random_instance(rng: &mut Rng) -> Instance {
    let n = 2 + (rng.standard_normal().abs() as usize) % 3;
    let k = 1 + (rng.standard_normal().abs() as usize).min(n - 1);
    Instance {
        noise: 0.1,
        h_effs: (0..k).map(|_| rng.sample_cn(n, n)).collect(),
        precoders: (0..k).map(|_| rng.sample_cn_vector(n) * Complex64::from(0.7)).collect(),
        ys: (0..k).map(|_| rng.sample_cn_vector(n)).collect(),
    }
}

/// The surrogate evaluated at its own maximizer must equal the SINR.
fn surrogate_tightness(seed: u64, instances: usize) -> CheckReport {
    let mut rng = Rng::from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let inst = random_instance(&mut rng);
        for (l, h) in inst.h_effs.iter().enumerate() {
            let cov = interference_covariance(inst.noise, h, &inst.precoders, l);
            let (truth, y) = match (
                sinr(h, &cov, &inst.precoders[l]),
                optimal_auxiliary(inst.noise, h, &inst.precoders, l, 0.0),
            ) {
                (Ok(t), Ok(y)) => (t, y),
                _ => {
                    return CheckReport {
                        name: "surrogate-tightness",
                        passed: false,
                        detail: "linear solve failed on a random instance".into(),
                    }
                }
            };
            let q = surrogate_q(inst.noise, h, &inst.precoders, &y, l);
            worst = worst.max((q - truth).abs() / truth.abs().max(1e-12));
        }
    }
    CheckReport {
        name: "surrogate-tightness",
        passed: worst <= 1e-9,
        detail: format!("worst relative gap {worst:.3e} (tolerance 1e-9)"),
    }
}

/// Central finite difference of `f` along the real and imaginary axes of
/// every component, compared against `analytic` under the convention
/// `df = Re(g^H dx)`.
fn fd_check<F: Fn(&CVector) -> f64>(
    f: F,
    x: &CVector,
    analytic: &CVector,
    tol: f64,
) -> Option<f64> {
    let h = 1e-6;
    let scale = analytic.norm().max(1.0);
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        for (step, expect) in [
            (Complex64::new(h, 0.0), analytic[k].re),
            (Complex64::new(0.0, h), analytic[k].im),
        ] {
            let mut plus = x.clone();
            plus[k] += step;
            let mut minus = x.clone();
            minus[k] -= step;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            worst = worst.max((fd - expect).abs() / scale);
        }
    }
    (worst <= tol).then_some(worst)
}

fn precoder_gradient(seed: u64, instances: usize) -> CheckReport {
    let mut rng = Rng::from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let inst = random_instance(&mut rng);
        let k = inst.h_effs.len();
        let spares = vec![1e6; k];
        let data = PrecoderData::build(1.0, inst.noise, &inst.h_effs, &inst.ys, spares);
        let inner = data.inner(&inst.precoders);
        let gammas = subgradient_coeffs(data.bandwidth, &data.qs(&inner), &data.spares);
        let grads = data.gradient(&inner, &gammas);
        for j in 0..k {
            let objective = |wj: &CVector| {
                let mut ws = inst.precoders.clone();
                ws[j] = wj.clone();
                data.objective(&ws)
            };
            match fd_check(objective, &inst.precoders[j], &grads[j], 1e-5) {
                Some(err) => worst = worst.max(err),
                None => {
                    return CheckReport {
                        name: "precoder-gradient",
                        passed: false,
                        detail: format!("finite differences disagree on stream {j}"),
                    }
                }
            }
        }
    }
    CheckReport {
        name: "precoder-gradient",
        passed: true,
        detail: format!("worst relative error {worst:.3e} (tolerance 1e-5)"),
    }
}

struct CascadeInstance {
    channels: ChannelSet,
    selection: Selection,
    precoders: Vec<CVector>,
    ys: Vec<CVector>,
    phi: CVector,
}

fn random_cascade_instance(rng: &mut Rng) -> CascadeInstance {
    let n = 2;
    let k = 2;
    let m = 3 + (rng.standard_normal().abs() as usize) % 3;
    let channels = ChannelSet {
        direct: (0..k).map(|_| rng.sample_cn(n, n)).collect(),
        ris_to_bs: (0..k).map(|_| rng.sample_cn(n, m)).collect(),
        bs_to_ris: rng.sample_cn(m, n),
    };
    CascadeInstance {
        channels,
        selection: Selection::new((0..k).collect()).expect("valid selection"),
        precoders: (0..k).map(|_| rng.sample_cn_vector(n)).collect(),
        ys: (0..k).map(|_| rng.sample_cn_vector(n)).collect(),
        phi: rng.sample_unit_phases(m),
    }
}

fn phase_gradient(seed: u64, instances: usize) -> CheckReport {
    let mut rng = Rng::from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let inst = random_cascade_instance(&mut rng);
        let k = inst.selection.len();
        let data = CascadeData::build(
            1.0,
            0.1,
            &inst.channels,
            &inst.selection,
            &inst.precoders,
            &inst.ys,
            vec![1e6; k],
        );
        let s = data.s_values(&inst.phi);
        let gammas = subgradient_coeffs(data.bandwidth, &data.qs(&s), &data.spares);
        let grad = data.gradient(&s, &gammas);
        match fd_check(|phi| data.objective(phi), &inst.phi, &grad, 1e-5) {
            Some(err) => worst = worst.max(err),
            None => {
                return CheckReport {
                    name: "phase-gradient",
                    passed: false,
                    detail: "finite differences disagree with the cascade gradient".into(),
                }
            }
        }
    }
    CheckReport {
        name: "phase-gradient",
        passed: true,
        detail: format!("worst relative error {worst:.3e} (tolerance 1e-5)"),
    }
}

/// `y^H H_eff(phi) w` must match the affine form `a + b^H phi` to rounding.
fn cascade_identity(seed: u64, draws: usize) -> CheckReport {
    let mut rng = Rng::from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let inst = random_cascade_instance(&mut rng);
        let l = 0;
        let w = &inst.precoders[1];
        let y = &inst.ys[0];
        let ch = &inst.channels;
        let (a, b) = cascade_coefficients(&ch.direct[l], &ch.ris_to_bs[l], &ch.bs_to_ris, y, w);
        let h_eff = effective_channel(&ch.direct[l], &ch.ris_to_bs[l], &ch.bs_to_ris, &inst.phi);
        let direct = y.dotc(&(&h_eff * w));
        let affine = a + b.dotc(&inst.phi);
        let scale = (y.norm() * h_eff.norm() * w.norm()).max(1e-12);
        worst = worst.max((direct - affine).norm() / scale);
    }
    CheckReport {
        name: "cascade-identity",
        passed: worst <= 1e-12,
        detail: format!("worst scaled error {worst:.3e} (tolerance 1e-12)"),
    }
}

fn projection_idempotence(seed: u64, draws: usize) -> CheckReport {
    let mut rng = Rng::from_seed(seed);
    for i in 0..draws {
        let n = 1 + i % 6;
        let v = rng.sample_cn_vector(n) * Complex64::from(3.0);
        let radius = 0.5 + (i % 4) as f64;
        let once = match project_ball(&v, radius) {
            Ok(p) => p,
            Err(e) => {
                return CheckReport {
                    name: "projection-idempotence",
                    passed: false,
                    detail: format!("ball projection failed: {e}"),
                }
            }
        };
        let twice = project_ball(&once, radius).expect("projection of a projected point");
        let disk_once = project_unit_disk(&v);
        let disk_twice = project_unit_disk(&disk_once);
        if once != twice || disk_once != disk_twice || once.norm() > radius * (1.0 + 1e-12) {
            return CheckReport {
                name: "projection-idempotence",
                passed: false,
                detail: format!("projection moved an already-projected point (draw {i})"),
            };
        }
    }
    CheckReport {
        name: "projection-idempotence",
        passed: true,
        detail: format!("{draws} draws, both projections bitwise idempotent"),
    }
}

fn linear_solve_residual(seed: u64, draws: usize) -> CheckReport {
    let mut rng = Rng::from_seed(seed);
    let mut worst = 0.0f64;
    for i in 0..draws {
        let n = 1 + i % 6;
        let b = rng.sample_cn(n, n);
        let mut a = b.ad_mul(&b);
        for d in 0..n {
            a[(d, d)] += Complex64::from(0.1);
        }
        let rhs = rng.sample_cn(n, 2);
        let x = match hermitian_solve(&a, &rhs) {
            Ok(x) => x,
            Err(e) => {
                return CheckReport {
                    name: "linear-solve",
                    passed: false,
                    detail: format!("solve failed on a well-conditioned system: {e}"),
                }
            }
        };
        let residual = (&a * &x - &rhs).norm() / rhs.norm().max(1e-12);
        worst = worst.max(residual);
    }
    CheckReport {
        name: "linear-solve",
        passed: worst <= 1e-8,
        detail: format!("worst relative residual {worst:.3e} (tolerance 1e-8)"),
    }
}

/// Compare the solver against a coarse brute-force grid on a tiny system
/// (one antenna, two BSs, two RIS elements, caps lifted out of the way).
fn tiny_grid_comparison(seed: u64) -> CheckReport {
    let config = RunConfig::from_json(
        r#"{
            "system": {
                "n_antennas": 1, "surviving_bs": 2, "ris_elements": 2,
                "bbu_capacity_bps": 1e12
            },
            "solver": {"max_outer_iterations": 12}
        }"#,
    )
    .expect("valid embedded config");
    let scenario = match build_scenario(&config, seed) {
        Ok(s) => s,
        Err(e) => {
            return CheckReport {
                name: "grid-comparison",
                passed: false,
                detail: format!("scenario build failed: {e}"),
            }
        }
    };
    let result = match run_algorithm(&scenario, &config.solver_config()) {
        Ok(r) => r,
        Err(e) => {
            return CheckReport {
                name: "grid-comparison",
                passed: false,
                detail: format!("solver failed: {e}"),
            }
        }
    };

    // With one antenna a single served BS at full power is optimal for each
    // fixed phase setting, so a 5-degree grid per element over both
    // singleton selections brute-forces the problem.
    let p = &scenario.params;
    let mut best = 0.0f64;
    let steps = 72;
    for l in 0..2 {
        let spare = scenario.traffic.spare[l];
        for i in 0..steps {
            for j in 0..steps {
                let phi = CVector::from_iterator(
                    2,
                    [i, j].iter().map(|&t| {
                        Complex64::from_polar(1.0, t as f64 / steps as f64 * std::f64::consts::TAU)
                    }),
                );
                let ch = &scenario.channels;
                let h_eff =
                    effective_channel(&ch.direct[l], &ch.ris_to_bs[l], &ch.bs_to_ris, &phi);
                let w = CVector::from_element(1, Complex64::from(p.p_max.sqrt()));
                let rate = per_bs_rates(p.bandwidth, p.noise_power, &[h_eff], &[w.clone()])
                    .map(|r| r[0])
                    .unwrap_or(0.0);
                best = best.max(rate.min(spare));
            }
        }
    }
    let achieved = result.redistribution.total;
    let passed = achieved >= 0.98 * best;
    CheckReport {
        name: "grid-comparison",
        passed,
        detail: format!(
            "solver {achieved:.6e} vs grid {best:.6e} ({:.4} of grid, threshold 0.98)",
            if best > 0.0 { achieved / best } else { 1.0 }
        ),
    }
}
