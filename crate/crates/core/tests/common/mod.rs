#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varcf::intervention::Mechanism;
use varcf::model::{CovarianceSpec, RandomModelSpec};
use varcf::{InterventionSchedule, ScheduleEntry, VarModel, Window};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stable_model(dim: usize, lag: usize, seed: u64) -> VarModel {
    RandomModelSpec {
        dim,
        lag,
        coeff_low: -0.5,
        coeff_high: 0.5,
        zero_prob: 0.3,
        covariance: CovarianceSpec::Toeplitz {
            diag: 1.0,
            off: 0.5,
        },
        seed,
        require_stable: true,
        max_attempts: 1000,
    }
    .generate()
    .unwrap()
}

pub fn any_model(dim: usize, lag: usize, seed: u64) -> VarModel {
    RandomModelSpec {
        require_stable: false,
        max_attempts: 1,
        ..spec(dim, lag, seed)
    }
    .generate()
    .unwrap()
}

fn spec(dim: usize, lag: usize, seed: u64) -> RandomModelSpec {
    RandomModelSpec {
        dim,
        lag,
        coeff_low: -0.5,
        coeff_high: 0.5,
        zero_prob: 0.3,
        covariance: CovarianceSpec::Toeplitz {
            diag: 1.0,
            off: 0.5,
        },
        seed,
        require_stable: false,
        max_attempts: 1,
    }
}

/// Up to `max_entries` temporally disjoint clamp windows inside `[first, horizon]`.
pub fn random_clamps(
    rng: &mut impl Rng,
    dim: usize,
    first: usize,
    horizon: usize,
    max_entries: usize,
) -> InterventionSchedule {
    let mut entries = Vec::new();
    let mut cursor = first;
    for _ in 0..rng.random_range(0..=max_entries) {
        if cursor > horizon {
            break;
        }
        let start = rng.random_range(cursor..=horizon);
        let end = rng.random_range(start..=horizon.min(start + 15));
        let signal = (start..=end).map(|_| rng.random_range(-3.0..3.0)).collect();
        entries.push(
            ScheduleEntry::clamp(
                rng.random_range(0..dim),
                Window::new(start, end).unwrap(),
                signal,
            )
            .unwrap(),
        );
        cursor = end + 1;
    }
    InterventionSchedule::new(entries).unwrap()
}

/// `x_{i,t} += delta` with the node's own mechanism otherwise untouched.
pub fn shift(model: &VarModel, node: usize, t: usize, delta: f64) -> ScheduleEntry {
    let rows = model
        .coeffs()
        .iter()
        .map(|b| b.row(node).iter().copied().collect())
        .collect();
    ScheduleEntry::new(
        node,
        Window::new(t, t).unwrap(),
        Mechanism::Modify {
            rows,
            sigma: 1.0,
            signal: vec![delta],
        },
    )
    .unwrap()
}

pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
