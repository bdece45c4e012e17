//! Robust power minimization as a block-diagonal semidefinite program.
//!
//! Decision variables are K Hermitian Gram matrices W_k (the relaxation of
//! w_k w_k^H) plus one scalar multiplier per worst-case SINR constraint.
//! With users in decoded order (position 0 weakest), receiver l must decode
//! message k for every k <= l. Writing phi_k = W_k / gamma_k - sum_{m>k} W_m
//! for the signal-minus-interference part and nu_k = -sum_{m<k} W_m for the
//! canceled-layer residual, the requirement "SINR of layer (k, l) >= gamma_k
//! for every channel error with ||d|| <= eps_l" is equivalent (losslessly,
//! one quadratic uncertainty constraint) to the existence of lambda_kl >= 0
//! with
//!
//!   [ lambda_kl I + phi_k + nu_k        phi_k h_l          ]
//!   [ (phi_k h_l)^H        h_l^H phi_k h_l - sigma_l^2 - lambda_kl eps_l^2 ]  >= 0,
//!
//! where h_l is the channel estimate. Total transmit power sum tr(W_k) is
//! the objective. A rank-one optimum always exists, so beamformers are
//! recovered from the principal eigenpair and the second-to-first eigenvalue
//! ratio is reported as the recovery quality.

use num_complex::Complex64;

use crate::channel::{apply_order, ChannelSet, Scenario};
use crate::hermitian::{BlockDiagMatrix, ComplexVector, HermitianMatrix};
use crate::solver::{self, SdpSolution, SolverOptions, SolverStatus};

// ---------------------------------------------------------------------------
// Problem representation
// ---------------------------------------------------------------------------

/// One affine term x_var * F inside an LMI block. `entries` is the upper
/// triangle (i <= j) of the Hermitian coefficient F; diagonal entries are
/// real and mirrored entries are implied by conjugation.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpTerm {
    pub var: usize,
    pub entries: Vec<(usize, usize, Complex64)>,
}

/// Where a block comes from, for bookkeeping and structured recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// W_k >= 0.
    Gram(usize),
    /// Worst-case SINR layer: message k decoded at receiver l (k <= l).
    SinrLayer { k: usize, l: usize },
    /// lambda_kl >= 0 as a 1x1 block.
    MultiplierSign { k: usize, l: usize },
    /// Hand-built block with no special meaning.
    Generic,
}

/// Hermitian-affine constraint block F0 + sum_i x_i F_i >= 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub dim: usize,
    pub f0: Vec<(usize, usize, Complex64)>,
    pub terms: Vec<SdpTerm>,
    pub kind: BlockKind,
}

impl LmiBlock {
    /// Dense value of the block at x.
    pub fn evaluate(&self, x: &[f64]) -> HermitianMatrix {
        let mut m = HermitianMatrix::zeros(self.dim);
        for &(i, j, z) in &self.f0 {
            m.add_entry(i, j, z);
        }
        for term in &self.terms {
            let xv = x[term.var];
            if xv == 0.0 {
                continue;
            }
            for &(i, j, z) in &term.entries {
                m.add_entry(i, j, z * xv);
            }
        }
        m
    }
}

/// Variable layout bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VarIndex {
    /// K Gram matrices of size M (M^2 real coordinates each: M diagonal
    /// entries, then re/im pairs over the upper triangle in row-major
    /// order), followed by one multiplier per active layer (k, l), k <= l.
    /// Layers with a zero error radius need no multiplier (the worst case
    /// over a radius-zero ball is the nominal constraint itself, a scalar
    /// inequality) and are skipped in the numbering; `lam` flags the active
    /// layers in enumeration order, k outer and l in k..K.
    Noma { m: usize, k: usize, lam: Vec<bool> },
    /// No structured recovery (hand-built problems).
    Opaque,
}

impl VarIndex {
    /// Layout with every layer multiplier present.
    pub fn noma_full(m: usize, k: usize) -> VarIndex {
        VarIndex::Noma { m, k, lam: vec![true; k * (k + 1) / 2] }
    }

    /// Layout for the given per-user error radii: layer (k, l) carries a
    /// multiplier only when user l has nonzero radius.
    pub fn noma_for(m: usize, k: usize, epsilon: &[f64]) -> VarIndex {
        let mut lam = Vec::with_capacity(k * (k + 1) / 2);
        for _kk in 0..k {
            for l in _kk..k {
                lam.push(epsilon[l] > 0.0);
            }
        }
        VarIndex::Noma { m, k, lam }
    }

    pub fn num_vars(&self) -> Option<usize> {
        match self {
            VarIndex::Noma { m, k, lam } => {
                Some(k * m * m + lam.iter().filter(|&&a| a).count())
            }
            VarIndex::Opaque => None,
        }
    }

    fn noma(&self) -> (usize, usize) {
        match self {
            VarIndex::Noma { m, k, .. } => (*m, *k),
            VarIndex::Opaque => panic!("structured recovery on an opaque variable layout"),
        }
    }

    /// Position of layer (k, l) in the enumeration order.
    fn layer_pos(&self, k: usize, l: usize) -> usize {
        let (_, kk) = self.noma();
        debug_assert!(k <= l && l < kk);
        k * kk - k * (k + 1) / 2 + k + (l - k)
    }

    /// Whether layer (k, l) carries a multiplier variable.
    pub fn has_multiplier(&self, k: usize, l: usize) -> bool {
        match self {
            VarIndex::Noma { lam, .. } => lam[self.layer_pos(k, l)],
            VarIndex::Opaque => false,
        }
    }

    /// Coordinate of Re W_k[i,i].
    pub fn gram_diag(&self, k: usize, i: usize) -> usize {
        let (m, _) = self.noma();
        debug_assert!(i < m);
        k * m * m + i
    }

    /// Coordinate of Re W_k[i,j], i < j.
    pub fn gram_re(&self, k: usize, i: usize, j: usize) -> usize {
        let (m, _) = self.noma();
        debug_assert!(i < j && j < m);
        k * m * m + m + 2 * Self::upper_pos(m, i, j)
    }

    /// Coordinate of Im W_k[i,j], i < j.
    pub fn gram_im(&self, k: usize, i: usize, j: usize) -> usize {
        self.gram_re(k, i, j) + 1
    }

    /// Coordinate of lambda_kl; the layer must be active.
    pub fn multiplier(&self, k: usize, l: usize) -> usize {
        let (m, kk) = self.noma();
        let pos = self.layer_pos(k, l);
        let lam = match self {
            VarIndex::Noma { lam, .. } => lam,
            VarIndex::Opaque => unreachable!(),
        };
        assert!(lam[pos], "layer ({k},{l}) has no multiplier");
        kk * m * m + lam[..pos].iter().filter(|&&a| a).count()
    }

    fn upper_pos(m: usize, i: usize, j: usize) -> usize {
        i * m - i * (i + 1) / 2 + (j - i - 1)
    }

    /// Rebuilds W_k from a solution vector.
    pub fn recover_gram(&self, x: &[f64], k: usize) -> HermitianMatrix {
        let (m, _) = self.noma();
        let mut w = HermitianMatrix::zeros(m);
        for i in 0..m {
            w.set_entry(i, i, Complex64::new(x[self.gram_diag(k, i)], 0.0));
            for j in (i + 1)..m {
                w.set_entry(
                    i,
                    j,
                    Complex64::new(x[self.gram_re(k, i, j)], x[self.gram_im(k, i, j)]),
                );
            }
        }
        w
    }

    /// Multiplier value for layer (k, l); zero for layers that have none
    /// (radius-zero balls need no S-procedure certificate).
    pub fn recover_multiplier(&self, x: &[f64], k: usize, l: usize) -> f64 {
        if self.has_multiplier(k, l) {
            x[self.multiplier(k, l)]
        } else {
            0.0
        }
    }
}

/// Block-diagonal SDP: minimize c^T x subject to every block PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub blocks: Vec<LmiBlock>,
    pub var_index: VarIndex,
}

impl SdpProblem {
    pub fn generic(num_vars: usize, objective: Vec<f64>, blocks: Vec<LmiBlock>) -> Self {
        assert_eq!(objective.len(), num_vars);
        SdpProblem { num_vars, objective, blocks, var_index: VarIndex::Opaque }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x.iter()).map(|(c, v)| c * v).sum()
    }

    /// All blocks evaluated at x.
    pub fn constraint_value(&self, x: &[f64]) -> BlockDiagMatrix {
        BlockDiagMatrix::new(self.blocks.iter().map(|b| b.evaluate(x)).collect())
    }
}

// ---------------------------------------------------------------------------
// Design inputs (decoded order)
// ---------------------------------------------------------------------------

/// Everything the builders need, already permuted into decoded order:
/// position 0 is the weakest user by estimated norm, and each user's target,
/// noise level, and error radius travel with the user.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignInputs {
    pub m: usize,
    pub k: usize,
    pub h_hat: Vec<ComplexVector>,
    pub gamma: Vec<f64>,
    pub noise_var: Vec<f64>,
    pub epsilon: Vec<f64>,
}

impl DesignInputs {
    pub fn from_scenario(s: &Scenario, cs: &ChannelSet) -> Self {
        DesignInputs {
            m: s.m,
            k: s.k,
            h_hat: apply_order(&cs.order, &cs.h_hat),
            gamma: apply_order(&cs.order, &s.gamma_min),
            noise_var: apply_order(&cs.order, &s.noise_var),
            epsilon: apply_order(&cs.order, &s.epsilon),
        }
    }

    pub fn raw(
        h_hat: Vec<ComplexVector>,
        gamma: Vec<f64>,
        noise_var: Vec<f64>,
        epsilon: Vec<f64>,
    ) -> Self {
        let k = h_hat.len();
        assert!(k > 0 && gamma.len() == k && noise_var.len() == k && epsilon.len() == k);
        let m = h_hat[0].dim();
        assert!(h_hat.iter().all(|h| h.dim() == m));
        DesignInputs { m, k, h_hat, gamma, noise_var, epsilon }
    }

    fn with_zero_epsilon(&self) -> DesignInputs {
        let mut out = self.clone();
        out.epsilon = vec![0.0; self.k];
        out
    }

    /// Single-user subproblem for user `k` with SINR target `gamma`.
    fn single_user(&self, k: usize, gamma: f64) -> DesignInputs {
        DesignInputs {
            m: self.m,
            k: 1,
            h_hat: vec![self.h_hat[k].clone()],
            gamma: vec![gamma],
            noise_var: vec![self.noise_var[k]],
            epsilon: vec![self.epsilon[k]],
        }
    }
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

/// Worst-case power minimization for the given inputs.
///
/// Block layout: K Gram blocks (dim M), then K(K+1)/2 SINR layers (dim M+1)
/// with k outer and l inner, then the matching multiplier sign blocks.
pub fn build_robust_sdp(inputs: &DesignInputs) -> SdpProblem {
    let (m, k) = (inputs.m, inputs.k);
    let index = VarIndex::noma_for(m, k, &inputs.epsilon);
    let num_vars = index.num_vars().expect("structured layout");

    let mut objective = vec![0.0; num_vars];
    for kk in 0..k {
        for i in 0..m {
            objective[index.gram_diag(kk, i)] = 1.0;
        }
    }

    let mut blocks = Vec::with_capacity(k + k * (k + 1));
    for kk in 0..k {
        blocks.push(gram_block(&index, m, kk));
    }
    for kk in 0..k {
        for l in kk..k {
            blocks.push(sinr_layer_block(&index, inputs, kk, l));
        }
    }
    for kk in 0..k {
        for l in kk..k {
            if !index.has_multiplier(kk, l) {
                continue;
            }
            blocks.push(LmiBlock {
                dim: 1,
                f0: Vec::new(),
                terms: vec![SdpTerm {
                    var: index.multiplier(kk, l),
                    entries: vec![(0, 0, Complex64::new(1.0, 0.0))],
                }],
                kind: BlockKind::MultiplierSign { k: kk, l },
            });
        }
    }

    SdpProblem { num_vars, objective, blocks, var_index: index }
}

/// Same structure with every error radius set to zero; identical to the
/// robust build at epsilon = 0 by construction.
pub fn build_nonrobust_sdp(inputs: &DesignInputs) -> SdpProblem {
    build_robust_sdp(&inputs.with_zero_epsilon())
}

/// Orthogonal-access target: each user gets a 1/K time share, so delivering
/// the rate of SINR target gamma needs (1 + gamma)^K - 1 in its own slot.
pub fn oma_target(gamma: f64, k: usize) -> f64 {
    (1.0 + gamma).powi(k as i32) - 1.0
}

/// K independent single-user robust problems at the inflated targets.
/// Reported power for the scheme is the time-shared average (1/K) sum P_k.
pub fn build_oma_problems(inputs: &DesignInputs) -> Vec<SdpProblem> {
    (0..inputs.k)
        .map(|k| {
            build_robust_sdp(&inputs.single_user(k, oma_target(inputs.gamma[k], inputs.k)))
        })
        .collect()
}

fn gram_block(index: &VarIndex, m: usize, k: usize) -> LmiBlock {
    let one = Complex64::new(1.0, 0.0);
    let i_unit = Complex64::new(0.0, 1.0);
    let mut terms = Vec::with_capacity(m * m);
    for i in 0..m {
        terms.push(SdpTerm { var: index.gram_diag(k, i), entries: vec![(i, i, one)] });
    }
    for i in 0..m {
        for j in (i + 1)..m {
            terms.push(SdpTerm { var: index.gram_re(k, i, j), entries: vec![(i, j, one)] });
            terms.push(SdpTerm { var: index.gram_im(k, i, j), entries: vec![(i, j, i_unit)] });
        }
    }
    terms.sort_by_key(|t| t.var);
    LmiBlock { dim: m, f0: Vec::new(), terms, kind: BlockKind::Gram(k) }
}

/// The bordered block for layer (k, l). Gram m enters with coefficient
/// 1/gamma_k (m = k), -1 (m > k, full bordered pattern), or -1 restricted to
/// the top-left corner (m < k, canceled-layer residual: only the error part
/// of the channel reaches the detector).
///
/// A zero error radius collapses the ball to the estimate itself: the layer
/// becomes the scalar nominal constraint (the bordered form only recovers it
/// as the multiplier grows without bound, which an interior method cannot
/// follow), with the canceled-layer terms gone entirely.
fn sinr_layer_block(index: &VarIndex, inputs: &DesignInputs, k: usize, l: usize) -> LmiBlock {
    let m = inputs.m;
    let h = &inputs.h_hat[l];
    let sigma2 = inputs.noise_var[l];
    let eps = inputs.epsilon[l];
    let one = Complex64::new(1.0, 0.0);
    let i_unit = Complex64::new(0.0, 1.0);

    if eps == 0.0 {
        let mut terms: Vec<SdpTerm> = Vec::new();
        for mm in k..inputs.k {
            let coef = if mm == k { 1.0 / inputs.gamma[k] } else { -1.0 };
            for p in 0..m {
                terms.push(SdpTerm {
                    var: index.gram_diag(mm, p),
                    entries: vec![(0, 0, coef * h[p].norm_sqr() * one)],
                });
                for q in (p + 1)..m {
                    let hpq = h[p].conj() * h[q];
                    terms.push(SdpTerm {
                        var: index.gram_re(mm, p, q),
                        entries: vec![(0, 0, coef * 2.0 * hpq.re * one)],
                    });
                    terms.push(SdpTerm {
                        var: index.gram_im(mm, p, q),
                        entries: vec![(0, 0, coef * -2.0 * hpq.im * one)],
                    });
                }
            }
        }
        terms.sort_by_key(|t| t.var);
        return LmiBlock {
            dim: 1,
            f0: vec![(0, 0, -sigma2 * one)],
            terms,
            kind: BlockKind::SinrLayer { k, l },
        };
    }

    let mut terms: Vec<SdpTerm> = Vec::new();

    for mm in 0..inputs.k {
        let coef = if mm == k {
            1.0 / inputs.gamma[k]
        } else {
            -1.0
        };
        let bordered = mm >= k;
        for p in 0..m {
            // W_mm[p,p]
            let mut entries = vec![(p, p, coef * one)];
            if bordered {
                entries.push((p, m, coef * h[p]));
                entries.push((m, m, coef * h[p].norm_sqr() * one));
            }
            terms.push(SdpTerm { var: index.gram_diag(mm, p), entries });
            for q in (p + 1)..m {
                // Re W_mm[p,q]
                let mut entries = vec![(p, q, coef * one)];
                if bordered {
                    entries.push((p, m, coef * h[q]));
                    entries.push((q, m, coef * h[p]));
                    entries.push((m, m, coef * 2.0 * (h[p].conj() * h[q]).re * one));
                }
                terms.push(SdpTerm { var: index.gram_re(mm, p, q), entries });
                // Im W_mm[p,q]
                let mut entries = vec![(p, q, coef * i_unit)];
                if bordered {
                    entries.push((p, m, coef * i_unit * h[q]));
                    entries.push((q, m, -coef * i_unit * h[p]));
                    entries.push((m, m, coef * -2.0 * (h[p].conj() * h[q]).im * one));
                }
                terms.push(SdpTerm { var: index.gram_im(mm, p, q), entries });
            }
        }
    }

    // Multiplier: identity in the error corner, -eps^2 against the constant.
    let mut entries: Vec<(usize, usize, Complex64)> = (0..m).map(|i| (i, i, one)).collect();
    entries.push((m, m, -eps * eps * one));
    terms.push(SdpTerm { var: index.multiplier(k, l), entries });

    terms.sort_by_key(|t| t.var);
    LmiBlock {
        dim: m + 1,
        f0: vec![(m, m, -sigma2 * one)],
        terms,
        kind: BlockKind::SinrLayer { k, l },
    }
}

// ---------------------------------------------------------------------------
// Beamformer extraction
// ---------------------------------------------------------------------------

/// Raised when a Gram matrix is not numerically rank-one. Carries the full
/// extraction so callers can keep the design and flag the trial instead of
/// discarding it.
#[derive(Debug, Clone)]
pub struct RankOneViolation {
    pub user: usize,
    pub ratio: f64,
    pub w: Vec<ComplexVector>,
    pub ratios: Vec<f64>,
}

impl std::fmt::Display for RankOneViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Gram matrix of user {} has eigenvalue ratio {:.3e}, not rank-one",
            self.user, self.ratio
        )
    }
}

impl std::error::Error for RankOneViolation {}

/// Principal-eigenpair extraction w_k = sqrt(lambda_1) u_1 for every Gram
/// matrix, with the lambda_2 / lambda_1 ratio as recovery quality. Errors
/// when any ratio exceeds `tol_rank`.
pub fn extract_beamformers(
    grams: &[HermitianMatrix],
    tol_rank: f64,
) -> Result<(Vec<ComplexVector>, Vec<f64>), RankOneViolation> {
    let mut ws = Vec::with_capacity(grams.len());
    let mut ratios = Vec::with_capacity(grams.len());
    for g in grams {
        let evs = g.eigenvalues();
        let top = evs[evs.len() - 1];
        let second = if evs.len() >= 2 { evs[evs.len() - 2].max(0.0) } else { 0.0 };
        if top <= 0.0 {
            ws.push(ComplexVector::zeros(g.dim()));
            ratios.push(0.0);
            continue;
        }
        let (lam, u) = g.principal_eigpair();
        ws.push(u.scale(lam.max(0.0).sqrt()));
        ratios.push(second / top);
    }
    let mut worst = (0usize, 0.0f64);
    for (i, &r) in ratios.iter().enumerate() {
        if r > worst.1 {
            worst = (i, r);
        }
    }
    if worst.1 > tol_rank {
        return Err(RankOneViolation { user: worst.0, ratio: worst.1, w: ws, ratios });
    }
    Ok((ws, ratios))
}

// ---------------------------------------------------------------------------
// Design pipeline
// ---------------------------------------------------------------------------

/// Default eigenvalue-ratio threshold for accepting an extraction.
pub const DEFAULT_RANK_TOL: f64 = 1e-4;

/// A solved design in decoded order.
#[derive(Debug, Clone)]
pub struct BeamDesign {
    pub w: Vec<ComplexVector>,
    pub grams: Vec<HermitianMatrix>,
    /// Multiplier per layer, k outer then l in k..K.
    pub lambda: Vec<f64>,
    /// Sum of ||w_k||^2.
    pub total_power: f64,
    /// lambda_2 / lambda_1 per user.
    pub rank_ratio: Vec<f64>,
    pub status: SolverStatus,
    pub iterations: usize,
    pub gap: f64,
}

impl BeamDesign {
    pub fn max_rank_ratio(&self) -> f64 {
        self.rank_ratio.iter().copied().fold(0.0, f64::max)
    }

    fn empty(k: usize, m: usize, status: SolverStatus) -> BeamDesign {
        BeamDesign {
            w: vec![ComplexVector::zeros(m); k],
            grams: vec![HermitianMatrix::zeros(m); k],
            lambda: Vec::new(),
            total_power: f64::NAN,
            rank_ratio: vec![0.0; k],
            status,
            iterations: 0,
            gap: f64::NAN,
        }
    }
}

/// Builds, solves, and extracts the robust design. Scenarios with an
/// estimate already inside its own error ball are provably infeasible (the
/// ball contains the zero channel) and are reported without a solve.
pub fn design_robust(inputs: &DesignInputs, opts: &SolverOptions) -> BeamDesign {
    if provably_infeasible(inputs) {
        return BeamDesign::empty(inputs.k, inputs.m, SolverStatus::Infeasible);
    }
    let problem = build_robust_sdp(inputs);
    let sol = solver::solve(&problem, opts);
    assemble_design(&problem, &sol, inputs.k)
}

/// Robust pipeline at epsilon = 0.
pub fn design_nonrobust(inputs: &DesignInputs, opts: &SolverOptions) -> BeamDesign {
    design_robust(&inputs.with_zero_epsilon(), opts)
}

/// Orthogonal-access baseline: K independent single-user designs.
#[derive(Debug, Clone)]
pub struct OmaDesign {
    pub per_user: Vec<BeamDesign>,
    /// Time-shared average power (1/K) sum P_k.
    pub avg_power: f64,
    pub status: SolverStatus,
    pub iterations: usize,
}

pub fn design_oma(inputs: &DesignInputs, opts: &SolverOptions) -> OmaDesign {
    let mut per_user = Vec::with_capacity(inputs.k);
    for k in 0..inputs.k {
        let sub = inputs.single_user(k, oma_target(inputs.gamma[k], inputs.k));
        per_user.push(design_robust(&sub, opts));
    }
    let status = per_user
        .iter()
        .map(|d| d.status)
        .fold(SolverStatus::Optimal, combine_status);
    let iterations = per_user.iter().map(|d| d.iterations).sum();
    let avg_power = if status == SolverStatus::Optimal {
        per_user.iter().map(|d| d.total_power).sum::<f64>() / inputs.k as f64
    } else {
        f64::NAN
    };
    OmaDesign { per_user, avg_power, status, iterations }
}

fn combine_status(acc: SolverStatus, s: SolverStatus) -> SolverStatus {
    use SolverStatus::*;
    match (acc, s) {
        (NumericalFailure, _) | (_, NumericalFailure) => NumericalFailure,
        (Infeasible, _) | (_, Infeasible) => Infeasible,
        (MaxIters, _) | (_, MaxIters) => MaxIters,
        _ => Optimal,
    }
}

/// True when some user's estimated channel norm does not exceed its error
/// radius: the uncertainty ball then contains the zero channel, forcing a
/// worst-case SINR of zero for that user's own layer.
pub fn provably_infeasible(inputs: &DesignInputs) -> bool {
    inputs
        .h_hat
        .iter()
        .zip(inputs.epsilon.iter())
        .any(|(h, &eps)| h.norm() <= eps)
}

/// Decodes a solver result into a design. Extraction failures are kept, not
/// dropped: the design carries its eigenvalue ratios either way and callers
/// decide what to do with flagged trials.
pub fn assemble_design(problem: &SdpProblem, sol: &SdpSolution, k: usize) -> BeamDesign {
    let index = &problem.var_index;
    let m = match index {
        VarIndex::Noma { m, .. } => *m,
        VarIndex::Opaque => panic!("assemble_design needs the structured layout"),
    };
    if sol.status != SolverStatus::Optimal {
        let mut d = BeamDesign::empty(k, m, sol.status);
        d.iterations = sol.iterations;
        d.gap = sol.gap;
        return d;
    }
    let grams: Vec<HermitianMatrix> = (0..k).map(|kk| index.recover_gram(&sol.x, kk)).collect();
    let mut lambda = Vec::with_capacity(k * (k + 1) / 2);
    for kk in 0..k {
        for l in kk..k {
            lambda.push(index.recover_multiplier(&sol.x, kk, l));
        }
    }
    let (w, rank_ratio) = match extract_beamformers(&grams, DEFAULT_RANK_TOL) {
        Ok((w, r)) => (w, r),
        Err(v) => (v.w, v.ratios),
    };
    let total_power = w.iter().map(|wk| wk.norm_sq()).sum();
    BeamDesign {
        w,
        grams,
        lambda,
        total_power,
        rank_ratio,
        status: sol.status,
        iterations: sol.iterations,
        gap: sol.gap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_inputs(m: usize, k: usize, eps: f64, rng: &mut impl Rng) -> DesignInputs {
        let h_hat = (0..k)
            .map(|_| {
                ComplexVector::new(
                    (0..m).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect(),
                )
            })
            .collect();
        DesignInputs::raw(h_hat, vec![2.0; k], vec![0.01; k], vec![eps; k])
    }

    #[test]
    fn block_census_for_three_users_eight_antennas() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = random_inputs(8, 3, 0.06, &mut rng);
        let p = build_robust_sdp(&inputs);
        assert_eq!(p.num_vars, 3 * 64 + 6);
        let grams = p.blocks.iter().filter(|b| matches!(b.kind, BlockKind::Gram(_))).count();
        let layers =
            p.blocks.iter().filter(|b| matches!(b.kind, BlockKind::SinrLayer { .. })).count();
        let signs =
            p.blocks.iter().filter(|b| matches!(b.kind, BlockKind::MultiplierSign { .. })).count();
        assert_eq!((grams, layers, signs), (3, 6, 6));
        for b in &p.blocks {
            match b.kind {
                BlockKind::Gram(_) => assert_eq!(b.dim, 8),
                BlockKind::SinrLayer { .. } => assert_eq!(b.dim, 9),
                BlockKind::MultiplierSign { .. } => assert_eq!(b.dim, 1),
                BlockKind::Generic => panic!("unexpected generic block"),
            }
        }
    }

    #[test]
    fn single_user_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = random_inputs(4, 1, 0.1, &mut rng);
        let p = build_robust_sdp(&inputs);
        assert_eq!(p.num_vars, 16 + 1);
        assert_eq!(p.blocks.len(), 3);
    }

    /// The affine map must agree entrywise with the matrix formula
    /// C = [[lam I + phi + nu, phi h], [h^H phi, h^H phi h - sigma^2 - lam eps^2]]
    /// assembled directly from recovered Gram matrices at a random point.
    #[test]
    fn layer_blocks_match_direct_formula_at_random_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(m, k) in &[(2usize, 2usize), (3, 3), (4, 2)] {
            let inputs = random_inputs(m, k, 0.07, &mut rng);
            let p = build_robust_sdp(&inputs);
            let x: Vec<f64> = (0..p.num_vars).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let index = &p.var_index;
            let grams: Vec<HermitianMatrix> =
                (0..k).map(|kk| index.recover_gram(&x, kk)).collect();

            for block in &p.blocks {
                match block.kind {
                    BlockKind::Gram(kk) => {
                        let got = block.evaluate(&x);
                        assert!(matrices_close(&got, &grams[kk], 1e-12));
                    }
                    BlockKind::SinrLayer { k: kk, l } => {
                        let lam = index.recover_multiplier(&x, kk, l);
                        let want = direct_layer_matrix(&inputs, &grams, kk, l, lam);
                        let got = block.evaluate(&x);
                        assert!(
                            matrices_close(&got, &want, 1e-11),
                            "layer ({kk},{l}) mismatch at m={m} k={k}"
                        );
                    }
                    BlockKind::MultiplierSign { k: kk, l } => {
                        let got = block.evaluate(&x);
                        let lam = index.recover_multiplier(&x, kk, l);
                        assert!((got.at(0, 0).re - lam).abs() < 1e-14);
                    }
                    BlockKind::Generic => panic!("unexpected generic block"),
                }
            }
        }
    }

    fn matrices_close(a: &HermitianMatrix, b: &HermitianMatrix, tol: f64) -> bool {
        assert_eq!(a.dim(), b.dim());
        let mut worst = 0.0f64;
        for i in 0..a.dim() {
            for j in 0..a.dim() {
                worst = worst.max((a.at(i, j) - b.at(i, j)).norm());
            }
        }
        worst <= tol
    }

    fn direct_layer_matrix(
        inputs: &DesignInputs,
        grams: &[HermitianMatrix],
        k: usize,
        l: usize,
        lam: f64,
    ) -> HermitianMatrix {
        let m = inputs.m;
        let h = &inputs.h_hat[l];
        let mut phi = grams[k].scaled(1.0 / inputs.gamma[k]);
        for mm in (k + 1)..inputs.k {
            phi.add_scaled(&grams[mm], -1.0);
        }
        let mut nu = HermitianMatrix::zeros(m);
        for mm in 0..k {
            nu.add_scaled(&grams[mm], -1.0);
        }
        let mut top_left = phi.clone();
        top_left.add_scaled(&nu, 1.0);
        top_left.add_scaled(&HermitianMatrix::identity(m), lam);
        let col = phi.matvec(h);
        let corner =
            phi.quad_form(h) - inputs.noise_var[l] - lam * inputs.epsilon[l] * inputs.epsilon[l];
        HermitianMatrix::bordered(&top_left, &col, corner)
    }

    #[test]
    fn zero_epsilon_build_equals_nonrobust_build() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut inputs = random_inputs(3, 2, 0.2, &mut rng);
        let nonrobust = build_nonrobust_sdp(&inputs);
        inputs.epsilon = vec![0.0; 2];
        let robust_at_zero = build_robust_sdp(&inputs);
        assert_eq!(robust_at_zero, nonrobust);
    }

    #[test]
    fn orthogonal_access_target_arithmetic() {
        assert!((oma_target(10.0, 3) - 1330.0).abs() < 1e-9);
        assert!((oma_target(2.5, 1) - 2.5).abs() < 1e-12);
        assert!((oma_target(1.0, 2) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn oma_problems_are_single_user_robust_builds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = random_inputs(3, 2, 0.05, &mut rng);
        let probs = build_oma_problems(&inputs);
        assert_eq!(probs.len(), 2);
        for (k, p) in probs.iter().enumerate() {
            let want = build_robust_sdp(
                &inputs.single_user(k, oma_target(inputs.gamma[k], inputs.k)),
            );
            assert_eq!(*p, want);
        }
    }

    #[test]
    fn variable_layout_round_trip() {
        let index = VarIndex::noma_full(3, 2);
        assert_eq!(index.num_vars(), Some(2 * 9 + 3));
        // All coordinates distinct and in range.
        let mut seen = vec![false; 21];
        for k in 0..2 {
            for i in 0..3 {
                seen[index.gram_diag(k, i)] = true;
                for j in (i + 1)..3 {
                    seen[index.gram_re(k, i, j)] = true;
                    seen[index.gram_im(k, i, j)] = true;
                }
            }
        }
        for k in 0..2 {
            for l in k..2 {
                seen[index.multiplier(k, l)] = true;
            }
        }
        assert!(seen.iter().all(|&b| b), "every coordinate must be addressable");

        let mut x = vec![0.0; 21];
        x[index.gram_re(1, 0, 2)] = 0.25;
        x[index.gram_im(1, 0, 2)] = -0.5;
        x[index.gram_diag(1, 1)] = 2.0;
        let w = index.recover_gram(&x, 1);
        assert!((w.at(0, 2) - c(0.25, -0.5)).norm() < 1e-15);
        assert!((w.at(2, 0) - c(0.25, 0.5)).norm() < 1e-15);
        assert!((w.at(1, 1) - c(2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn extraction_recovers_rank_one_factor() {
        let u = ComplexVector::from_re_im(&[(0.6, 0.0), (0.0, 0.8)]);
        let g = HermitianMatrix::outer(&u).scaled(4.0);
        let (ws, ratios) = extract_beamformers(&[g], 1e-4).unwrap();
        assert!((ws[0].norm() - 2.0).abs() < 1e-10);
        assert!(ratios[0] < 1e-12);
        // Direction matches u up to the phase convention.
        let alignment = ws[0].inner(&u).norm() / (ws[0].norm() * u.norm());
        assert!((alignment - 1.0).abs() < 1e-10);
    }

    #[test]
    fn extraction_flags_rank_two_gram() {
        let g = HermitianMatrix::from_diag(&[1.0, 0.5]);
        let err = extract_beamformers(&[g], 1e-4).unwrap_err();
        assert_eq!(err.user, 0);
        assert!((err.ratio - 0.5).abs() < 1e-12);
        // The extraction is still usable.
        assert!((err.w[0].norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn extraction_of_zero_gram_is_zero_beamformer() {
        let g = HermitianMatrix::zeros(3);
        let (ws, ratios) = extract_beamformers(&[g], 1e-4).unwrap();
        assert_eq!(ws[0], ComplexVector::zeros(3));
        assert_eq!(ratios[0], 0.0);
    }

    #[test]
    fn scenario_inputs_follow_the_user_through_reordering() {
        let mut s = Scenario::uniform(1, 2, 0.0, 5.0, 0.01);
        s.gamma_min = vec![5.0, 7.0];
        s.noise_var = vec![0.01, 0.02];
        s.epsilon = vec![0.1, 0.2];
        // User 0 is stronger, so decoded order is [1, 0].
        let cs = ChannelSet {
            h_hat: vec![
                ComplexVector::from_re_im(&[(3.0, 0.0)]),
                ComplexVector::from_re_im(&[(1.0, 0.0)]),
            ],
            delta: vec![ComplexVector::zeros(1), ComplexVector::zeros(1)],
            h_true: vec![
                ComplexVector::from_re_im(&[(3.0, 0.0)]),
                ComplexVector::from_re_im(&[(1.0, 0.0)]),
            ],
            order: vec![1, 0],
        };
        let inputs = DesignInputs::from_scenario(&s, &cs);
        assert_eq!(inputs.gamma, vec![7.0, 5.0]);
        assert_eq!(inputs.noise_var, vec![0.02, 0.01]);
        assert_eq!(inputs.epsilon, vec![0.2, 0.1]);
        assert!((inputs.h_hat[0].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn provable_infeasibility_detects_zero_in_ball() {
        let h = ComplexVector::from_re_im(&[(0.05, 0.0)]);
        let inputs = DesignInputs::raw(vec![h], vec![10.0], vec![0.01], vec![0.06]);
        assert!(provably_infeasible(&inputs));
        let h = ComplexVector::from_re_im(&[(0.07, 0.0)]);
        let inputs = DesignInputs::raw(vec![h], vec![10.0], vec![0.01], vec![0.06]);
        assert!(!provably_infeasible(&inputs));
    }
}
