//! Deterministic fixtures shared by the benchmarks.

use noma_robust_core::channel::{generate_channels, Scenario};
use noma_robust_core::formulation::DesignInputs;
use noma_robust_core::hermitian::HermitianMatrix;

/// Dense well-conditioned Hermitian matrix built from channel draws.
pub fn dense_hermitian(dim: usize) -> HermitianMatrix {
    let s = Scenario::uniform(dim, 4, 0.0, 1.0, 0.01);
    let cs = generate_channels(&s, 0);
    let mut a = HermitianMatrix::from_diag(&vec![1e-3; dim]);
    for h in &cs.h_hat {
        a.add_scaled(&HermitianMatrix::outer(h), 1.0);
    }
    a
}

/// First 8-antenna 3-user trial whose weakest user clears the feasibility
/// prescreen with 50% margin; solves to optimality with the default options.
pub fn solvable_fullsize_inputs() -> DesignInputs {
    let s = Scenario::uniform(8, 3, 0.06, 2.0, 0.01);
    let margin = s.epsilon[0] * (1.0 + s.gamma_min[0].sqrt()) * 1.5;
    for trial in 0..200 {
        let cs = generate_channels(&s, trial);
        if cs.h_hat.iter().all(|h| h.norm_sq().sqrt() > margin) {
            return DesignInputs::from_scenario(&s, &cs);
        }
    }
    unreachable!("no prescreen-passing trial in 200 draws");
}
