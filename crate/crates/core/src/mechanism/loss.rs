use serde::{Deserialize, Serialize};

use super::MechanismError;

/// Predictions are clamped to `[LOSS_EPS, 1 − LOSS_EPS]`.
pub const LOSS_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskLoss {
    pub bce: f64,
    pub dice: f64,
    pub total: f64,
}

/// Class-balanced BCE plus Dice. A sum counts as empty when it does not
/// exceed what the clamp floor alone contributes (`N · LOSS_EPS`), so an
/// all-world prediction of an all-world mask has zero Dice loss.
pub fn bce_dice_loss(pred: &[f64], gt: &[bool]) -> Result<MaskLoss, MechanismError> {
    if pred.len() != gt.len() {
        return Err(MechanismError::DimMismatch(format!("{} predictions for {} labels", pred.len(), gt.len())));
    }
    if pred.iter().any(|p| !p.is_finite()) {
        return Err(MechanismError::NonFinite);
    }
    let n = pred.len();
    if n == 0 {
        return Ok(MaskLoss { bce: 0.0, dice: 0.0, total: 0.0 });
    }
    let nf = n as f64;
    let n1 = gt.iter().filter(|&&g| g).count();
    let n0 = n - n1;
    let weight = |count: usize| if count == 0 { 0.0 } else { nf / (2.0 * count as f64) };
    let (w1, w0) = (weight(n1), weight(n0));

    let mut bce = 0.0;
    let (mut inter, mut sum_p) = (0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        let p = p.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
        bce -= if g { w1 * p.ln() } else { w0 * (1.0 - p).ln() };
        sum_p += p;
        if g {
            inter += p;
        }
    }
    bce /= nf;
    let sum_g = n1 as f64;
    let floor = nf * LOSS_EPS * (1.0 + 1e-9);
    let dice = if n1 == 0 && sum_p <= floor { 0.0 } else { 1.0 - 2.0 * inter / (sum_p + sum_g) };
    Ok(MaskLoss { bce, dice, total: bce + dice })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnealShape {
    #[default]
    Linear,
    Cosine,
}

/// Mask-loss weight decaying from `lambda0` to `0.2 · lambda0`.
pub fn anneal_lambda(step: usize, total_steps: usize, lambda0: f64) -> Result<f64, MechanismError> {
    anneal_lambda_with(step, total_steps, lambda0, AnnealShape::Linear)
}

pub fn anneal_lambda_with(
    step: usize,
    total_steps: usize,
    lambda0: f64,
    shape: AnnealShape,
) -> Result<f64, MechanismError> {
    if total_steps == 0 || step > total_steps {
        return Err(MechanismError::StepOutOfRange { step, total: total_steps });
    }
    if !(lambda0.is_finite() && lambda0 >= 0.0) {
        return Err(MechanismError::BadParam("lambda0 must be finite and non-negative"));
    }
    let end = 0.2 * lambda0;
    if step == 0 {
        return Ok(lambda0);
    }
    if step == total_steps {
        return Ok(end);
    }
    let t = step as f64 / total_steps as f64;
    let v = match shape {
        AnnealShape::Linear => lambda0 - (lambda0 - end) * t,
        AnnealShape::Cosine => end + (lambda0 - end) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()),
    };
    Ok(v.clamp(end, lambda0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let gt: Vec<bool> = (0..16).map(|i| i % 2 == 0).collect();
        let pred: Vec<f64> = gt.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
        let l = bce_dice_loss(&pred, &gt).unwrap();
        assert!(l.bce < 1e-6 && l.dice < 1e-6, "{l:?}");
    }

    #[test]
    fn dice_of_full_prediction_on_half_mask() {
        let gt: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let l = bce_dice_loss(&[1.0; 20], &gt).unwrap();
        assert!((l.dice - 1.0 / 3.0).abs() < 1e-6, "{l:?}");
    }

    #[test]
    fn empty_mask_predicted_empty() {
        let l = bce_dice_loss(&[LOSS_EPS; 12], &[false; 12]).unwrap();
        assert_eq!(l.dice, 0.0);
        assert!(l.bce < 1e-6);
        assert_eq!(l.total, l.bce);
        let l = bce_dice_loss(&[0.3; 12], &[false; 12]).unwrap();
        assert_eq!(l.dice, 1.0);
    }

    #[test]
    fn class_weights_balance() {
        // One positive among four: both classes carry half the loss mass.
        let l = bce_dice_loss(&[0.5; 4], &[true, false, false, false]).unwrap();
        assert!((l.bce - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_dice_loss(&[0.5; 3], &[true; 4]).is_err());
    }

    #[test]
    fn anneal_examples() {
        assert_eq!(anneal_lambda(0, 100, 0.3).unwrap(), 0.3);
        assert_eq!(anneal_lambda(100, 100, 0.3).unwrap(), 0.2 * 0.3);
        assert!((anneal_lambda(100, 100, 0.3).unwrap() - 0.06).abs() < 1e-15);
        assert!((anneal_lambda(50, 100, 0.3).unwrap() - 0.18).abs() < 1e-12);
        assert!(anneal_lambda(101, 100, 0.3).is_err());
        assert!(anneal_lambda(0, 0, 0.3).is_err());
        let c = anneal_lambda_with(50, 100, 0.3, AnnealShape::Cosine).unwrap();
        assert!((c - 0.18).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn anneal_non_increasing(total in 1usize..500, lambda0 in 0.0f64..10.0, cosine in any::<bool>()) {
            let shape = if cosine { AnnealShape::Cosine } else { AnnealShape::Linear };
            let mut last = f64::INFINITY;
            for s in 0..=total {
                let v = anneal_lambda_with(s, total, lambda0, shape).unwrap();
                prop_assert!(v <= last);
                last = v;
            }
            prop_assert_eq!(last, 0.2 * lambda0);
        }

        #[test]
        fn perfect_prediction_beats_perturbed(
            cells in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 4..64),
        ) {
            let gt: Vec<bool> = cells.iter().map(|c| c.0).collect();
            let p: Vec<f64> = cells.iter().map(|c| c.1).collect();
            let n = gt.len() as f64;
            let off: f64 = p.iter().zip(&gt).map(|(&p, &g)| (p - f64::from(u8::from(g))).abs()).sum();
            prop_assume!(off > 0.05 * n);
            let perfect: Vec<f64> = gt.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
            prop_assert!(bce_dice_loss(&perfect, &gt).unwrap().total < bce_dice_loss(&p, &gt).unwrap().total);
        }
    }
}
