//! Exact single-qubit density-matrix simulation used to check the
//! closed-form neuron dynamics.

use alloc::vec::Vec;

use libm::{cos, exp, sin, sqrt};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::neuron::{decay_angle, memory_angle, qlif_step, DecayMode, QlifConfig, QlifInput, QlifState};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// 2x2 density matrix in the computational basis `{|0>, |1>}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix {
    pub rho: [[Complex64; 2]; 2],
}

impl DensityMatrix {
    pub fn ground() -> Self {
        Self { rho: [[ONE, ZERO], [ZERO, ZERO]] }
    }

    pub fn excited_population(&self) -> f64 {
        self.rho[1][1].re
    }

    pub fn trace(&self) -> Complex64 {
        self.rho[0][0] + self.rho[1][1]
    }

    /// Hermitian, unit trace and positive semidefinite, each within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rho;
        let hermitian = (r[0][1] - r[1][0].conj()).norm() <= tol
            && r[0][0].im.abs() <= tol
            && r[1][1].im.abs() <= tol;
        let unit = (self.trace() - ONE).norm() <= tol;
        // eigenvalues of a Hermitian 2x2: (tr +- sqrt(tr^2 - 4 det)) / 2
        let tr = self.trace().re;
        let det = (r[0][0] * r[1][1] - r[0][1] * r[1][0]).re;
        let disc = (tr * tr - 4.0 * det).max(0.0);
        let min_eig = 0.5 * (tr - sqrt(disc));
        hermitian && unit && min_eig >= -tol
    }

    fn conjugate_by(&self, u: &[[Complex64; 2]; 2]) -> Self {
        let mut tmp = [[ZERO; 2]; 2];
        let mut out = [[ZERO; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                tmp[i][j] = u[i][0] * self.rho[0][j] + u[i][1] * self.rho[1][j];
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = tmp[i][0] * u[j][0].conj() + tmp[i][1] * u[j][1].conj();
            }
        }
        Self { rho: out }
    }
}

/// `rho -> R_X(angle) rho R_X(angle)^dagger`.
pub fn apply_rx(rho: &DensityMatrix, angle: f64) -> DensityMatrix {
    let c = Complex64::new(cos(0.5 * angle), 0.0);
    let s = Complex64::new(0.0, -sin(0.5 * angle));
    rho.conjugate_by(&[[c, s], [s, c]])
}

/// Amplitude damping for an idle period `tau` with relaxation time `t1`.
pub fn amplitude_damp(rho: &DensityMatrix, tau: f64, t1: f64) -> DensityMatrix {
    let keep = exp(-tau / t1);
    let r = &rho.rho;
    let excited = r[1][1] * keep;
    let coherence = sqrt(keep);
    DensityMatrix { rho: [[ONE - excited, r[0][1] * coherence], [r[1][0] * coherence, excited]] }
}

/// Excited population after reinstating `alpha` and applying one input
/// through the gate sequence of `oracle_mode`.
pub fn oracle_population(alpha: f64, input: &QlifInput, t1: f64, oracle_mode: DecayMode) -> f64 {
    let memory = memory_angle(alpha).unwrap_or(f64::NAN);
    let rho = apply_rx(&DensityMatrix::ground(), memory);
    let rho = if input.x {
        apply_rx(&rho, input.theta)
    } else {
        match oracle_mode {
            DecayMode::PhysicalExponential => amplitude_damp(&rho, input.tau, t1),
            DecayMode::PaperExact => apply_rx(&rho, decay_angle(alpha, input.tau, t1).unwrap_or(f64::NAN)),
        }
    };
    rho.excited_population()
}

/// `|oracle - kernel|` for one step, both using `cfg.decay_mode`.
pub fn verify_step(alpha: f64, input: &QlifInput, cfg: &QlifConfig) -> f64 {
    verify_against(alpha, input, cfg, cfg.decay_mode)
}

/// As [`verify_step`] but with the oracle forced to `oracle_mode`.
pub fn verify_against(alpha: f64, input: &QlifInput, cfg: &QlifConfig, oracle_mode: DecayMode) -> f64 {
    let kernel = qlif_step(QlifState { alpha }, *input, cfg).alpha_pre_reset;
    (oracle_population(alpha, input, cfg.t1, oracle_mode) - kernel).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Spike,
    Delay,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Spike => "spike",
            Branch::Delay => "delay",
        }
    }
}

/// Residual statistics for one branch and decay mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSummary {
    pub branch: Branch,
    pub kernel_mode: DecayMode,
    pub oracle_mode: DecayMode,
    pub samples: usize,
    pub max: f64,
    pub mean: f64,
}

/// Random battery: for each decay mode, `samples` spike-branch cases with
/// `(alpha, theta) in [0,1] x [0, 2 pi)` and `samples` delay cases with
/// `alpha in [0,1]`, `tau / t1 in [0, 5)`. `oracle_override` forces the
/// oracle's delay semantics (used to demonstrate a mode mismatch).
pub fn verify_battery(samples: usize, seed: u64, oracle_override: Option<DecayMode>) -> Vec<ResidualSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for mode in [DecayMode::PaperExact, DecayMode::PhysicalExponential] {
        let oracle_mode = oracle_override.unwrap_or(mode);
        for branch in [Branch::Spike, Branch::Delay] {
            let (mut max, mut sum) = (0.0f64, 0.0);
            for i in 0..samples {
                let t1 = 0.5 + 1.5 * rng.random::<f64>();
                let cfg = QlifConfig { decay_mode: mode, t1, ..QlifConfig::default() };
                let (alpha, input) = if i == 0 && branch == Branch::Delay {
                    // worked case: alpha = 1/2, tau / t1 = ln 2
                    (0.5, QlifInput { x: false, theta: 0.0, tau: core::f64::consts::LN_2 * t1 })
                } else {
                    let alpha = rng.random::<f64>();
                    match branch {
                        Branch::Spike => (alpha, QlifInput { x: true, theta: rng.random::<f64>() * core::f64::consts::TAU, tau: 0.0 }),
                        Branch::Delay => (alpha, QlifInput { x: false, theta: 0.0, tau: 5.0 * t1 * rng.random::<f64>() }),
                    }
                };
                let r = verify_against(alpha, &input, &cfg, oracle_mode);
                max = max.max(r);
                sum += r;
            }
            out.push(ResidualSummary {
                branch,
                kernel_mode: mode,
                oracle_mode,
                samples,
                max,
                mean: if samples > 0 { sum / samples as f64 } else { 0.0 },
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, LN_2, PI};
    use proptest::prelude::*;

    fn mixed() -> DensityMatrix {
        let rho = apply_rx(&DensityMatrix::ground(), 1.1);
        amplitude_damp(&rho, 0.4, 1.0)
    }

    #[test]
    fn rotation_populations() {
        assert!((apply_rx(&DensityMatrix::ground(), PI).excited_population() - 1.0).abs() < 1e-15);
        assert!((apply_rx(&DensityMatrix::ground(), FRAC_PI_2).excited_population() - 0.5).abs() < 1e-15);
        let m = mixed();
        assert_eq!(apply_rx(&m, 0.0), m);
    }

    #[test]
    fn damping_values() {
        let m = mixed();
        let same = amplitude_damp(&m, 0.0, 1.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((same.rho[i][j] - m.rho[i][j]).norm() < 1e-15);
            }
        }
        let half = apply_rx(&DensityMatrix::ground(), FRAC_PI_2);
        assert!((amplitude_damp(&half, LN_2, 1.0).excited_population() - 0.25).abs() < 1e-15);
        let relaxed = amplitude_damp(&half, 1e4, 1.0);
        assert!((relaxed.rho[0][0] - ONE).norm() < 1e-15 && relaxed.rho[0][1].norm() < 1e-15);
    }

    #[test]
    fn worked_cases() {
        let spike = QlifInput { x: true, theta: PI, tau: 0.0 };
        assert!(verify_step(0.0, &spike, &QlifConfig::default()) < 1e-12);
        let delay = QlifInput { x: false, theta: 0.0, tau: LN_2 };
        let phys = QlifConfig { decay_mode: DecayMode::PhysicalExponential, ..QlifConfig::default() };
        assert!((oracle_population(0.5, &delay, 1.0, DecayMode::PhysicalExponential) - 0.25).abs() < 1e-12);
        assert!(verify_step(0.5, &delay, &phys) < 1e-12);
        let exact = QlifConfig::default();
        let target = (2.0 - sqrt(3.0)) / 4.0;
        assert!((oracle_population(0.5, &delay, 1.0, DecayMode::PaperExact) - target).abs() < 1e-12);
        assert!(verify_step(0.5, &delay, &exact) < 1e-12);
        let forced = verify_against(0.5, &delay, &exact, DecayMode::PhysicalExponential);
        assert!((forced - (0.25 - target)).abs() < 1e-12);
    }

    #[test]
    fn battery_is_tight() {
        for row in verify_battery(1000, 17, None) {
            assert!(row.max < 1e-12, "{row:?}");
        }
        let forced = verify_battery(50, 17, Some(DecayMode::PhysicalExponential));
        assert!(forced.iter().any(|r| r.max > 0.1));
    }

    proptest! {
        #[test]
        fn channels_preserve_validity(a in -7.0f64..7.0, tau in 0.0f64..10.0, b in -7.0f64..7.0) {
            let rho = apply_rx(&DensityMatrix::ground(), a);
            prop_assert!(rho.is_valid(1e-12));
            let rho = amplitude_damp(&rho, tau, 1.3);
            prop_assert!(rho.is_valid(1e-12));
            prop_assert!(apply_rx(&rho, b).is_valid(1e-12));
        }

        #[test]
        fn rotation_group_law(a in -7.0f64..7.0, b in -7.0f64..7.0) {
            let rho = mixed();
            let two = apply_rx(&apply_rx(&rho, a), b);
            let one = apply_rx(&rho, a + b);
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((two.rho[i][j] - one.rho[i][j]).norm() < 1e-12);
                }
            }
        }
    }
}
