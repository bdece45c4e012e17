//! Scenario parameters and Monte-Carlo channel generation.
//!
//! Users are dropped uniformly in distance between `min_dist_m` and
//! `cell_radius_m`; the large-scale gain combines log-normal shadowing in dB
//! with a power-law distance profile referenced to `min_dist_m`.  Estimated
//! channels are scaled circularly-symmetric Gaussian vectors, and the true
//! channel adds an estimation error drawn uniformly from the norm ball of
//! per-user radius epsilon (or its surface for stress tests).
//!
//! Every trial draws from its own counter-derived stream, so a trial's
//! channels depend only on `(seed, trial_index)` and never on how trials are
//! scheduled across workers.  The per-user draw order inside a trial is
//! fixed: distance, shadowing, estimate entries, error direction, error
//! radius.  Because the error is the last draw and is scaled by epsilon at
//! the end, two scenarios differing only in epsilon produce bit-identical
//! estimates and proportional errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::hermitian::ComplexVector;
use num_complex::Complex64;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("invalid scenario: {field}: {why}")]
    Invalid { field: &'static str, why: String },
}

/// Full parameter set for one cell.
///
/// `gamma_min` (linear SINR targets) and `noise_var` are indexed by original
/// user, as is `epsilon`; decoding order is decided per trial from estimated
/// channel norms.  Targets follow the user through the reordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Transmit antennas at the base station.
    pub m: usize,
    /// Single-antenna users sharing the resource.
    pub k: usize,
    /// Channel error-ball radius per user (dimensionless channel units).
    pub epsilon: Vec<f64>,
    /// Linear SINR target per user.
    pub gamma_min: Vec<f64>,
    /// Receiver noise variance per user.
    pub noise_var: Vec<f64>,
    pub cell_radius_m: f64,
    pub min_dist_m: f64,
    pub shadow_std_db: f64,
    pub pathloss_exp: f64,
    pub seed: u64,
}

impl Scenario {
    /// Baseline cell used throughout the experiment suite: 8 antennas, 3
    /// users, 10 dB targets, error radius 0.06, noise 0.01, 100..1000 m ring
    /// with 8 dB shadowing and exponent 3.8.
    pub fn default_downlink() -> Self {
        Scenario::uniform(8, 3, 0.06, 10.0, 0.01)
    }

    /// Scenario with one shared epsilon, SINR target, and noise level.
    pub fn uniform(m: usize, k: usize, epsilon: f64, gamma_min: f64, noise_var: f64) -> Self {
        Scenario {
            m,
            k,
            epsilon: vec![epsilon; k],
            gamma_min: vec![gamma_min; k],
            noise_var: vec![noise_var; k],
            cell_radius_m: 1000.0,
            min_dist_m: 100.0,
            shadow_std_db: 8.0,
            pathloss_exp: 3.8,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let fail = |field: &'static str, why: String| Err(ChannelError::Invalid { field, why });
        if self.m == 0 {
            return fail("M", "need at least one antenna".into());
        }
        if self.k == 0 {
            return fail("K", "need at least one user".into());
        }
        for (name, list) in [
            ("epsilon", &self.epsilon),
            ("gamma_min", &self.gamma_min),
            ("noise_var", &self.noise_var),
        ] {
            if list.len() != self.k {
                return fail(
                    match name {
                        "epsilon" => "epsilon",
                        "gamma_min" => "gamma_min",
                        _ => "noise_var",
                    },
                    format!("expected {} entries, got {}", self.k, list.len()),
                );
            }
        }
        if self.epsilon.iter().any(|&e| !(e >= 0.0)) {
            return fail("epsilon", "error radii must be >= 0".into());
        }
        if self.gamma_min.iter().any(|&g| !(g > 0.0)) {
            return fail("gamma_min", "SINR targets must be > 0".into());
        }
        if self.noise_var.iter().any(|&s| !(s > 0.0)) {
            return fail("noise_var", "noise variances must be > 0".into());
        }
        if !(self.min_dist_m > 0.0) || !(self.cell_radius_m > self.min_dist_m) {
            return fail("cell_radius_m", "need 0 < min_dist_m < cell_radius_m".into());
        }
        if !(self.shadow_std_db >= 0.0) {
            return fail("shadow_std_db", "shadowing spread must be >= 0".into());
        }
        if !(self.pathloss_exp >= 0.0) {
            return fail("pathloss_exp", "path-loss exponent must be >= 0".into());
        }
        Ok(())
    }
}

/// One trial's channels: estimates, errors, true channels, decoding order.
///
/// `order[p]` is the original index of the user decoded at position p;
/// position 0 is the weakest user by estimated norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub h_hat: Vec<ComplexVector>,
    pub delta: Vec<ComplexVector>,
    pub h_true: Vec<ComplexVector>,
    pub order: Vec<usize>,
}

/// Per-trial random stream: same seed, one ChaCha stream per trial counter.
pub fn trial_rng(seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_index);
    rng
}

/// Draws one trial's channel set. Deterministic in `(s.seed, trial_index)`.
pub fn generate_channels(s: &Scenario, trial_index: u64) -> ChannelSet {
    let mut rng = trial_rng(s.seed, trial_index);
    let mut h_hat = Vec::with_capacity(s.k);
    let mut delta = Vec::with_capacity(s.k);
    let mut h_true = Vec::with_capacity(s.k);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;

    for user in 0..s.k {
        let d: f64 = rng.gen_range(s.min_dist_m..=s.cell_radius_m);
        let shadow_db: f64 = {
            let z: f64 = rng.sample(StandardNormal);
            z * s.shadow_std_db
        };
        let gain = 10f64.powf(shadow_db / 10.0) * (d / s.min_dist_m).powf(-s.pathloss_exp);
        let amp = gain.sqrt();

        let mut entries = Vec::with_capacity(s.m);
        for _ in 0..s.m {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            entries.push(Complex64::new(re * inv_sqrt2 * amp, im * inv_sqrt2 * amp));
        }
        let est = ComplexVector::new(entries);
        let err = sample_error(&mut rng, s.m, s.epsilon[user], false);
        h_true.push(est.add(&err));
        h_hat.push(est);
        delta.push(err);
    }

    let order = order_users(&h_hat);
    ChannelSet { h_hat, delta, h_true, order }
}

/// Estimation-error draw: uniform over the complex norm ball of radius
/// epsilon (`surface_only` restricts to the sphere).  The direction comes
/// from normalized Gaussians; the ball radius uses the u^(1/(2 dim)) law for
/// the 2*dim-real-dimensional ball.  Direction and radius are drawn even for
/// epsilon = 0 so the stream position does not depend on epsilon.
pub fn sample_error(
    rng: &mut impl Rng,
    dim: usize,
    epsilon: f64,
    surface_only: bool,
) -> ComplexVector {
    let mut dir = Vec::with_capacity(dim);
    for _ in 0..dim {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        dir.push(Complex64::new(re, im));
    }
    let u: f64 = rng.gen_range(0.0..1.0);
    let radius = if surface_only { epsilon } else { epsilon * u.powf(1.0 / (2 * dim) as f64) };

    let dir = ComplexVector::new(dir);
    let nrm = dir.norm();
    if nrm <= 1e-300 {
        // Degenerate Gaussian draw; fall back to a fixed direction.
        return ComplexVector::basis(dim, 0).scale(radius);
    }
    dir.scale(radius / nrm)
}

/// Decoding order: ascending estimated norm, ties broken by original index.
pub fn order_users(h_hat: &[ComplexVector]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..h_hat.len()).collect();
    idx.sort_by(|&a, &b| {
        h_hat[a]
            .norm_sq()
            .partial_cmp(&h_hat[b].norm_sq())
            .expect("finite channel norms")
            .then(a.cmp(&b))
    });
    idx
}

/// Reindexes a per-user slice into decoded order.
pub fn apply_order<T: Clone>(order: &[usize], xs: &[T]) -> Vec<T> {
    order.iter().map(|&i| xs[i].clone()).collect()
}
