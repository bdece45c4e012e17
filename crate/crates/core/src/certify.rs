//! Worst-case SINR certification for a fixed set of Gram matrices.
//!
//! For each decoding layer the worst case over the estimation-error ball is
//! characterized exactly by a one-multiplier matrix inequality, so certifying
//! a target reduces to: does some multiplier make the bordered matrix PSD?
//! The certified SINR is found by bisecting the target; the inner multiplier
//! search maximizes the minimum eigenvalue, which is concave in the
//! multiplier.

use crate::hermitian::{ComplexVector, HermitianMatrix};

/// One decoding layer: receiver `rx` decodes the message of user `msg`
/// (`msg <= rx` in decoding order).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSinr {
    pub msg: usize,
    pub rx: usize,
    pub sinr: f64,
}

/// SINR per decoding layer, in message-major order ((0,0), (0,1), ..).
/// Values are worst-case or sampled depending on how the report was built.
#[derive(Clone, Debug)]
pub struct SinrReport {
    pub layers: Vec<LayerSinr>,
}

impl SinrReport {
    pub fn min_sinr(&self) -> f64 {
        self.layers.iter().map(|l| l.sinr).fold(f64::INFINITY, f64::min)
    }

    pub fn min_for_rx(&self, rx: usize) -> f64 {
        self.layers
            .iter()
            .filter(|l| l.rx == rx)
            .map(|l| l.sinr)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Certified worst-case SINR of one layer together with the multiplier that
/// witnesses the boundary target.
#[derive(Clone, Copy, Debug)]
pub struct WorstCase {
    pub sinr: f64,
    pub lambda: f64,
}

/// SINR of layer (`msg`, rx) under a concrete channel realization: receivers
/// cancel earlier messages using the estimate, so those leak only through the
/// estimation error, while later messages interfere at full strength.
pub fn layer_sinr_at(
    grams: &[HermitianMatrix],
    h_hat_rx: &ComplexVector,
    h_true_rx: &ComplexVector,
    noise_rx: f64,
    msg: usize,
) -> f64 {
    let delta = h_true_rx.sub(h_hat_rx);
    let signal = grams[msg].quad_form(h_true_rx).max(0.0);
    let mut denom = noise_rx;
    for (m, w) in grams.iter().enumerate() {
        if m < msg {
            denom += w.quad_form(&delta).max(0.0);
        } else if m > msg {
            denom += w.quad_form(h_true_rx).max(0.0);
        }
    }
    signal / denom
}

/// Achieved SINR of every layer for one realization of the true channels.
pub fn achieved_sinr(
    grams: &[HermitianMatrix],
    h_hat: &[ComplexVector],
    h_true: &[ComplexVector],
    noise: &[f64],
) -> SinrReport {
    let k = grams.len();
    assert_eq!(h_hat.len(), k);
    assert_eq!(h_true.len(), k);
    assert_eq!(noise.len(), k);
    let mut layers = Vec::with_capacity(k * (k + 1) / 2);
    for msg in 0..k {
        for rx in msg..k {
            let sinr = layer_sinr_at(grams, &h_hat[rx], &h_true[rx], noise[rx], msg);
            layers.push(LayerSinr { msg, rx, sinr });
        }
    }
    SinrReport { layers }
}

/// Bordered test matrix for layer (`msg`, rx) at target `gamma` and
/// multiplier `lam`: PSD iff the layer meets `gamma` for every error in the
/// ball certified by `lam`.
fn layer_lmi(
    grams: &[HermitianMatrix],
    h_hat: &ComplexVector,
    epsilon: f64,
    noise: f64,
    msg: usize,
    gamma: f64,
    lam: f64,
) -> HermitianMatrix {
    let m = h_hat.dim();
    let mut phi = grams[msg].scaled(1.0 / gamma);
    for w in &grams[msg + 1..] {
        phi.add_scaled(w, -1.0);
    }
    let mut top = phi.clone();
    for w in &grams[..msg] {
        top.add_scaled(w, -1.0);
    }
    for i in 0..m {
        top.add_entry(i, i, num_complex::Complex64::new(lam, 0.0));
    }
    let col = phi.matvec(h_hat);
    let corner = phi.quad_form(h_hat) - noise - lam * epsilon * epsilon;
    HermitianMatrix::bordered(&top, &col, corner)
}

/// Maximize min-eig of the layer matrix over the multiplier; the function is
/// concave, so a geometric bracket plus golden-section suffices.
fn best_multiplier(
    grams: &[HermitianMatrix],
    h_hat: &ComplexVector,
    epsilon: f64,
    noise: f64,
    msg: usize,
    gamma: f64,
) -> (f64, f64) {
    let g = |lam: f64| {
        layer_lmi(grams, h_hat, epsilon, noise, msg, gamma, lam).min_eigenvalue()
    };
    let mut hi = 1.0;
    let mut g_prev = g(hi);
    loop {
        let next = hi * 4.0;
        let g_next = g(next);
        if g_next <= g_prev || next > 1e14 {
            hi = next;
            break;
        }
        hi = next;
        g_prev = g_next;
    }
    let inv_phi = 0.618_033_988_749_894_9_f64;
    let (mut a, mut b) = (0.0_f64, hi);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut g1 = g(x1);
    let mut g2 = g(x2);
    for _ in 0..90 {
        if g1 >= g2 {
            b = x2;
            x2 = x1;
            g2 = g1;
            x1 = b - inv_phi * (b - a);
            g1 = g(x1);
        } else {
            a = x1;
            x1 = x2;
            g1 = g2;
            x2 = a + inv_phi * (b - a);
            g2 = g(x2);
        }
    }
    if g1 >= g2 {
        (x1, g1)
    } else {
        (x2, g2)
    }
}

/// Certified worst-case SINR of layer (`msg`, rx) over the error ball of
/// radius `epsilon` at the given receiver, by bisection on the target.
pub fn worst_case_layer(
    grams: &[HermitianMatrix],
    h_hat_rx: &ComplexVector,
    epsilon_rx: f64,
    noise_rx: f64,
    msg: usize,
) -> WorstCase {
    assert!(msg < grams.len());
    let nominal = layer_sinr_at(grams, h_hat_rx, h_hat_rx, noise_rx, msg);
    if epsilon_rx == 0.0 || nominal == 0.0 {
        return WorstCase { sinr: nominal, lambda: 0.0 };
    }
    if h_hat_rx.norm() <= epsilon_rx {
        // The ball contains a zero channel, so no positive target survives.
        return WorstCase { sinr: 0.0, lambda: 0.0 };
    }
    let scale: f64 = 1.0
        + noise_rx
        + grams.iter().map(|w| w.frob_norm()).sum::<f64>() * (1.0 + h_hat_rx.norm_sq());
    let tol = 1e-12 * scale;
    let feasible = |gamma: f64| -> Option<f64> {
        let (lam, best) = best_multiplier(grams, h_hat_rx, epsilon_rx, noise_rx, msg, gamma);
        (best >= -tol).then_some(lam)
    };
    let mut lo = 0.0_f64;
    let mut hi = nominal;
    let mut lambda = 0.0_f64;
    if let Some(lam) = feasible(nominal) {
        return WorstCase { sinr: nominal, lambda: lam };
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        match feasible(mid) {
            Some(lam) => {
                lo = mid;
                lambda = lam;
            }
            None => hi = mid,
        }
    }
    WorstCase { sinr: lo, lambda }
}

/// Certified worst-case SINR of every layer of a design.
pub fn certify_design(
    grams: &[HermitianMatrix],
    h_hat: &[ComplexVector],
    epsilon: &[f64],
    noise: &[f64],
) -> SinrReport {
    let k = grams.len();
    assert_eq!(h_hat.len(), k);
    assert_eq!(epsilon.len(), k);
    assert_eq!(noise.len(), k);
    let mut layers = Vec::with_capacity(k * (k + 1) / 2);
    for msg in 0..k {
        for rx in msg..k {
            let wc = worst_case_layer(grams, &h_hat[rx], epsilon[rx], noise[rx], msg);
            layers.push(LayerSinr { msg, rx, sinr: wc.sinr });
        }
    }
    SinrReport { layers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn unit_gram(dir: &ComplexVector, power: f64) -> HermitianMatrix {
        HermitianMatrix::outer(&dir.scale((power / dir.norm_sq()).sqrt()))
    }

    #[test]
    fn scalar_worst_case_matches_closed_form() {
        // M = 1, one user: worst channel is anti-aligned, so the certified
        // value must be (|h| - eps)^2 p / sigma^2.
        let h = ComplexVector::new(vec![c(0.8, -0.6)]);
        let p = 2.5;
        let grams = vec![unit_gram(&h, p)];
        for &eps in &[0.1, 0.3, 0.7] {
            let wc = worst_case_layer(&grams, &h, eps, 0.05, 0);
            let want = (1.0 - eps) * (1.0 - eps) * p / 0.05;
            assert!(
                (wc.sinr - want).abs() / want < 1e-8,
                "eps={eps}: got {} want {want}",
                wc.sinr
            );
            assert!(wc.lambda > 0.0, "ball constraint must be engaged");
        }
    }

    #[test]
    fn matched_filter_worst_case_matches_closed_form() {
        let h = ComplexVector::new(vec![c(1.0, 0.5), c(-0.3, 0.2), c(0.4, -1.1)]);
        let p = 1.7;
        let noise = 0.2;
        let eps = 0.25;
        let grams = vec![unit_gram(&h, p)];
        let wc = worst_case_layer(&grams, &h, eps, noise, 0);
        let want = (h.norm() - eps).powi(2) * p / noise;
        assert!((wc.sinr - want).abs() / want < 1e-8, "got {} want {want}", wc.sinr);
    }

    #[test]
    fn two_user_scalar_layers_match_closed_forms() {
        // M = 1, K = 2 admits hand closed forms.  Decoding the second
        // message, the first is cancelled up to the estimation error, so the
        // worst error simultaneously shrinks the signal and leaks maximally:
        // (|h|-e)^2 p1 / (e^2 p0 + s2).  Decoding the first message under
        // full interference is monotone in |h|^2, worst at |h|-e.
        let h_abs = 1.3_f64;
        let h = ComplexVector::new(vec![c(h_abs, 0.0)]);
        let (p0, p1) = (3.0, 0.8);
        let noise = 0.1;
        let eps = 0.3;
        let grams = vec![
            HermitianMatrix::from_diag(&[p0]),
            HermitianMatrix::from_diag(&[p1]),
        ];
        let wc0 = worst_case_layer(&grams, &h, eps, noise, 0);
        let shrunk = (h_abs - eps) * (h_abs - eps);
        let want0 = shrunk * p0 / (shrunk * p1 + noise);
        assert!((wc0.sinr - want0).abs() / want0 < 1e-8, "got {} want {want0}", wc0.sinr);

        let wc1 = worst_case_layer(&grams, &h, eps, noise, 1);
        let want1 = shrunk * p1 / (eps * eps * p0 + noise);
        assert!((wc1.sinr - want1).abs() / want1 < 1e-8, "got {} want {want1}", wc1.sinr);
    }

    #[test]
    fn zero_radius_reduces_to_nominal() {
        let h = vec![
            ComplexVector::new(vec![c(0.9, 0.2), c(-0.4, 0.6)]),
            ComplexVector::new(vec![c(1.2, -0.3), c(0.5, 0.8)]),
        ];
        let grams = vec![unit_gram(&h[0], 1.0), unit_gram(&h[1], 2.0)];
        let noise = [0.1, 0.2];
        let report = certify_design(&grams, &h, &[0.0, 0.0], &noise);
        let nominal = achieved_sinr(&grams, &h, &h, &noise);
        for (w, n) in report.layers.iter().zip(nominal.layers.iter()) {
            assert_eq!(w.sinr, n.sinr);
        }
    }

    #[test]
    fn certified_value_lower_bounds_sampled_minimum() {
        // The certificate claims a bound over the whole ball, so no sampled
        // channel may fall below it, and dense sampling in 4 real dimensions
        // should come close to it.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for inst in 0..6 {
            let h_hat = vec![
                channel::sample_error(&mut rng, 2, 1.0, true),
                channel::sample_error(&mut rng, 2, 1.6, true),
            ];
            let grams = vec![
                unit_gram(&h_hat[0].add(&channel::sample_error(&mut rng, 2, 0.2, false)), 2.0),
                unit_gram(&h_hat[1].add(&channel::sample_error(&mut rng, 2, 0.2, false)), 1.0),
            ];
            let noise = [0.05, 0.08];
            let eps = [0.25, 0.2];
            for msg in 0..2 {
                for rx in msg..2 {
                    let wc = worst_case_layer(&grams, &h_hat[rx], eps[rx], noise[rx], msg);
                    let mut sampled = f64::INFINITY;
                    for _ in 0..20_000 {
                        let d = channel::sample_error(&mut rng, 2, eps[rx], true);
                        let h = h_hat[rx].add(&d);
                        sampled = sampled
                            .min(layer_sinr_at(&grams, &h_hat[rx], &h, noise[rx], msg));
                    }
                    assert!(
                        wc.sinr <= sampled * (1.0 + 1e-9),
                        "inst {inst} layer ({msg},{rx}): certified {} above sampled {sampled}",
                        wc.sinr
                    );
                    assert!(
                        wc.sinr >= sampled * 0.90,
                        "inst {inst} layer ({msg},{rx}): certified {} far below sampled {sampled}",
                        wc.sinr
                    );
                }
            }
        }
    }

    #[test]
    fn worst_case_shrinks_as_the_ball_grows() {
        let h = ComplexVector::new(vec![c(1.1, -0.2), c(0.3, 0.9), c(-0.6, 0.4)]);
        let grams = vec![unit_gram(&h, 2.0), HermitianMatrix::identity(3).scaled(0.3)];
        let mut last = f64::INFINITY;
        for &eps in &[0.0, 0.05, 0.1, 0.2, 0.4] {
            let wc = worst_case_layer(&grams, &h, eps, 0.1, 0);
            assert!(
                wc.sinr <= last + 1e-12,
                "worst case rose from {last} to {} at eps={eps}",
                wc.sinr
            );
            last = wc.sinr;
        }
    }

    #[test]
    fn ball_containing_the_origin_certifies_zero() {
        let h = ComplexVector::new(vec![c(0.1, 0.05)]);
        let grams = vec![HermitianMatrix::from_diag(&[1.0])];
        let wc = worst_case_layer(&grams, &h, 0.2, 0.1, 0);
        assert_eq!(wc.sinr, 0.0);
    }

    #[test]
    fn achieved_sinr_matches_hand_computation() {
        // M = 1, K = 2, real numbers chosen for a by-hand check.
        let h_hat = vec![
            ComplexVector::new(vec![c(1.0, 0.0)]),
            ComplexVector::new(vec![c(2.0, 0.0)]),
        ];
        let h_true = vec![
            ComplexVector::new(vec![c(0.9, 0.0)]),
            ComplexVector::new(vec![c(2.2, 0.0)]),
        ];
        let grams = vec![
            HermitianMatrix::from_diag(&[4.0]),
            HermitianMatrix::from_diag(&[1.0]),
        ];
        let noise = [0.5, 0.25];
        let rep = achieved_sinr(&grams, &h_hat, &h_true, &noise);
        // (0,0): 0.81*4 / (0.81*1 + 0.5)
        // (0,1): 4.84*4 / (4.84*1 + 0.25)
        // (1,1): 4.84*1 / (0.04*4 + 0.25)
        let want = [
            (0, 0, 3.24 / 1.31),
            (0, 1, 19.36 / 5.09),
            (1, 1, 4.84 / 0.41),
        ];
        assert_eq!(rep.layers.len(), 3);
        for ((msg, rx, w), got) in want.iter().zip(rep.layers.iter()) {
            assert_eq!((got.msg, got.rx), (*msg, *rx));
            assert!((got.sinr - w).abs() / w < 1e-12, "layer ({msg},{rx})");
        }
        assert!((rep.min_sinr() - 3.24 / 1.31).abs() < 1e-12);
        assert_eq!(rep.min_for_rx(0), rep.layers[0].sinr);
    }

    #[test]
    fn boundary_multiplier_witnesses_the_certificate() {
        let h = ComplexVector::new(vec![c(0.9, 0.3), c(-0.5, 0.7)]);
        let grams = vec![unit_gram(&h, 1.5), HermitianMatrix::identity(2).scaled(0.2)];
        let (eps, noise) = (0.15, 0.1);
        let wc = worst_case_layer(&grams, &h, eps, noise, 0);
        let slightly_inside = wc.sinr * (1.0 - 1e-6);
        let m = layer_lmi(&grams, &h, eps, noise, 0, slightly_inside, wc.lambda);
        assert!(
            m.min_eigenvalue() >= -1e-7,
            "witness multiplier fails just inside the boundary: {}",
            m.min_eigenvalue()
        );
    }
}
