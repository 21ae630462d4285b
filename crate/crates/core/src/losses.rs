//! Training losses: pixelwise cross-entropy on labeled views, the one-way
//! relative cross-entropy that pushes predictions under their transferred
//! upper bound, and the bootstrapping prior against frozen pseudo-masks.
//! Every loss returns its analytic gradient alongside the scalar.

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, PixelGrid, ProbMap};

/// Clamp applied inside the labeled cross-entropy to keep log() finite. This
/// bounds the best achievable loss at -W*H*log(1 - CE_CLAMP) instead of zero.
pub const CE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_p: f64,
}

impl LossWeights {
    pub fn new(lambda_s: f64, lambda_p: f64) -> Result<Self> {
        if !(lambda_s.is_finite() && lambda_p.is_finite() && lambda_s >= 0.0 && lambda_p >= 0.0) {
            return Err(Error::BadWeights);
        }
        Ok(LossWeights { lambda_s, lambda_p })
    }
}

impl Default for LossWeights {
    /// The bootstrapping prior gets less weight than cross-supervision so the
    /// transfers can overrule a bad pseudo-mask instead of being pinned to it.
    fn default() -> Self {
        LossWeights {
            lambda_s: 1.0,
            lambda_p: 0.1,
        }
    }
}

fn check_dims(pred: &ProbMap, w: usize, h: usize) -> Result<()> {
    if pred.width() != w || pred.height() != h {
        return Err(Error::SizeMismatch {
            want_w: w,
            want_h: h,
            got_w: pred.width(),
            got_h: pred.height(),
        });
    }
    Ok(())
}

/// Summed binary cross-entropy against a ground-truth mask, with the
/// probability clamped to [CE_CLAMP, 1 - CE_CLAMP]. The gradient is taken
/// through the clamp, so it is zero on the clamp plateaus.
pub fn labeled_loss(pred: &ProbMap, truth: &BinaryMask) -> Result<(f64, PixelGrid)> {
    check_dims(pred, truth.width(), truth.height())?;
    let mut grad = PixelGrid::zeros(pred.width(), pred.height());
    let mut loss = 0.0;
    for (i, (&p, &y)) in pred.as_slice().iter().zip(truth.as_slice()).enumerate() {
        let pc = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
        let y = f64::from(y);
        loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        if p == pc {
            grad.as_mut_slice()[i] = (pc - y) / (pc * (1.0 - pc));
        }
    }
    Ok((loss, grad))
}

/// One-way relative cross-entropy sum (1 - transferred) * target. Zero exactly
/// when every pixel has target = 0 or transferred = 1; anything the target
/// believes in beyond its transferred upper bound is penalized linearly.
/// Returns (loss, d/d target, d/d transferred).
pub fn cross_supervision_loss(
    target: &ProbMap,
    transferred: &ProbMap,
) -> Result<(f64, PixelGrid, PixelGrid)> {
    check_dims(transferred, target.width(), target.height())?;
    let mut g_target = PixelGrid::zeros(target.width(), target.height());
    let mut g_transferred = PixelGrid::zeros(target.width(), target.height());
    let mut loss = 0.0;
    for (i, (&p, &u)) in target
        .as_slice()
        .iter()
        .zip(transferred.as_slice())
        .enumerate()
    {
        loss += (1.0 - u) * p;
        g_target.as_mut_slice()[i] = 1.0 - u;
        g_transferred.as_mut_slice()[i] = -p;
    }
    Ok((loss, g_target, g_transferred))
}

/// Bootstrapping prior sum (1 - pseudo) * pred: pulls predictions toward zero
/// outside the frozen pseudo-mask and leaves them free inside it.
pub fn prior_loss(pred: &ProbMap, pseudo: &BinaryMask) -> Result<(f64, PixelGrid)> {
    check_dims(pred, pseudo.width(), pseudo.height())?;
    let mut grad = PixelGrid::zeros(pred.width(), pred.height());
    let mut loss = 0.0;
    for (i, (&p, &z)) in pred.as_slice().iter().zip(pseudo.as_slice()).enumerate() {
        let w = 1.0 - f64::from(z);
        loss += w * p;
        grad.as_mut_slice()[i] = w;
    }
    Ok((loss, grad))
}

/// Threshold a probability map with a strict greater-than, so a value exactly
/// at the threshold stays background.
pub fn binarize(pred: &ProbMap, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::BadProbability(threshold));
    }
    let data = pred
        .as_slice()
        .iter()
        .map(|&p| u8::from(p > threshold))
        .collect();
    BinaryMask::from_vec(pred.width(), pred.height(), data)
}

/// Weighted total of the three loss parts; rejects non-finite parts since a
/// NaN here means training has already diverged.
pub fn total_loss(parts: (f64, f64, f64), weights: &LossWeights) -> Result<f64> {
    let (l_l, l_s, l_p) = parts;
    for (v, what) in [(l_l, "labeled loss"), (l_s, "cross loss"), (l_p, "prior loss")] {
        if !v.is_finite() {
            return Err(Error::NonFinite { what });
        }
    }
    Ok(l_l + weights.lambda_s * l_s + weights.lambda_p * l_p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_probmap(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ProbMap {
        let data = (0..w * h).map(|_| rng.gen_range(0.05..0.95)).collect();
        ProbMap::from_vec(w, h, data).unwrap()
    }

    fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BinaryMask {
        let data = (0..w * h).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        BinaryMask::from_vec(w, h, data).unwrap()
    }

    #[test]
    fn labeled_loss_perfect_prediction_is_near_zero() {
        let truth = BinaryMask::from_vec(4, 4, vec![1; 16]).unwrap();
        let pred = ProbMap::constant(4, 4, 1.0 - CE_CLAMP).unwrap();
        let (loss, grad) = labeled_loss(&pred, &truth).unwrap();
        let expected = -16.0 * (1.0 - CE_CLAMP).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!(loss < 1e-5);
        // At the clamp boundary the values pass through unchanged, so the
        // gradient is the analytic one, not the plateau zero.
        assert!(grad.as_slice().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn labeled_loss_uniform_half_is_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = random_mask(&mut rng, 10, 10);
        let pred = ProbMap::constant(10, 10, 0.5).unwrap();
        let (loss, _) = labeled_loss(&pred, &truth).unwrap();
        assert!((loss - 100.0 * std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn labeled_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = random_mask(&mut rng, 8, 8);
        let pred = random_probmap(&mut rng, 8, 8);
        let (_, grad) = labeled_loss(&pred, &truth).unwrap();
        let eps = 1e-6;
        for i in [0usize, 7, 31, 63] {
            let mut lo = pred.clone();
            let mut hi = pred.clone();
            let v = pred.as_slice()[i];
            lo.set(i % 8, i / 8, v - eps).unwrap();
            hi.set(i % 8, i / 8, v + eps).unwrap();
            let (ll, _) = labeled_loss(&lo, &truth).unwrap();
            let (lh, _) = labeled_loss(&hi, &truth).unwrap();
            let fd = (lh - ll) / (2.0 * eps);
            let g = grad.as_slice()[i];
            assert!(
                (fd - g).abs() <= 1e-6 * g.abs().max(1.0),
                "pixel {i}: fd {fd} vs analytic {g}"
            );
        }
    }

    #[test]
    fn cross_loss_zero_target_or_full_bound_vanishes() {
        let zeros = ProbMap::zeros(6, 6);
        let bound = ProbMap::constant(6, 6, 0.3).unwrap();
        assert_eq!(cross_supervision_loss(&zeros, &bound).unwrap().0, 0.0);
        let ones = ProbMap::constant(6, 6, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let target = random_probmap(&mut rng, 6, 6);
        assert_eq!(cross_supervision_loss(&target, &ones).unwrap().0, 0.0);
    }

    #[test]
    fn cross_loss_known_sum() {
        let target = ProbMap::constant(10, 10, 1.0).unwrap();
        let bound = ProbMap::constant(10, 10, 0.25).unwrap();
        let (loss, g_t, g_u) = cross_supervision_loss(&target, &bound).unwrap();
        assert!((loss - 75.0).abs() < 1e-12);
        assert!(g_t.as_slice().iter().all(|&g| (g - 0.75).abs() < 1e-12));
        assert!(g_u.as_slice().iter().all(|&g| (g + 1.0).abs() < 1e-12));
    }

    #[test]
    fn cross_loss_penalizes_exceeding_the_bound() {
        // Raising the target belief at a pixel whose bound is below 1 must
        // strictly increase the loss.
        let bound = ProbMap::constant(3, 3, 0.8).unwrap();
        let low = ProbMap::constant(3, 3, 0.4).unwrap();
        let mut high = low.clone();
        high.set(1, 1, 0.6).unwrap();
        let l_low = cross_supervision_loss(&low, &bound).unwrap().0;
        let l_high = cross_supervision_loss(&high, &bound).unwrap().0;
        assert!(l_high > l_low);
    }

    #[test]
    fn prior_loss_known_sum_and_trivial_zeros() {
        let mut data = vec![0u8; 100];
        for v in data.iter_mut().take(30) {
            *v = 1;
        }
        let pseudo = BinaryMask::from_vec(10, 10, data).unwrap();
        let pred = ProbMap::constant(10, 10, 0.4).unwrap();
        let (loss, grad) = prior_loss(&pred, &pseudo).unwrap();
        assert!((loss - 28.0).abs() < 1e-12);
        assert_eq!(grad.as_slice().iter().sum::<f64>(), 70.0);

        let all_ones = BinaryMask::from_vec(10, 10, vec![1; 100]).unwrap();
        assert_eq!(prior_loss(&pred, &all_ones).unwrap().0, 0.0);
        assert_eq!(prior_loss(&ProbMap::zeros(10, 10), &pseudo).unwrap().0, 0.0);
    }

    #[test]
    fn binarize_is_strict_and_idempotent() {
        let pred = ProbMap::from_vec(3, 1, vec![0.5, 0.6, 0.49999]).unwrap();
        let mask = binarize(&pred, 0.5).unwrap();
        assert_eq!(mask.as_slice(), &[0, 1, 0]);
        let again = binarize(&mask.to_probmap(), 0.5).unwrap();
        assert_eq!(mask.as_slice(), again.as_slice());
        assert!(binarize(&pred, 0.0).is_err());
        assert!(binarize(&pred, 1.0).is_err());
    }

    #[test]
    fn total_loss_weighted_sum_and_divergence_guard() {
        let w = LossWeights::new(1.0, 1.0).unwrap();
        assert_eq!(total_loss((2.0, 3.0, 4.0), &w).unwrap(), 9.0);
        let labeled_only = LossWeights::new(0.0, 0.0).unwrap();
        assert_eq!(total_loss((2.0, 3.0, 4.0), &labeled_only).unwrap(), 2.0);
        assert!(total_loss((f64::NAN, 0.0, 0.0), &w).is_err());
        assert!(LossWeights::new(-1.0, 0.0).is_err());
    }
}
