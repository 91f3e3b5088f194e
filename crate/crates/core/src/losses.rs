//! The style-discovery objective and the MHP baseline, over probabilistic
//! mask stacks so everything is differentiable end to end.
//!
//! Three terms are summed per (image, ground-truth mask) pair:
//! - `l1`: Dice loss of the best-matching style channel m* (winner-take-all;
//!   gradients flow only through that channel),
//! - `l2`: Dice loss of the probability-weighted sum of all channels, which
//!   keeps less likely styles plausible in proportion to their likelihood,
//! - `l3`: cross-entropy pushing the style classifier toward m*.
//!
//! The selection m* is a discrete argmax and is never differentiated.
//! Analytic gradients live next to each loss so the training loop and the
//! finite-difference checks share one definition.

use crate::data::BinaryMask;
use crate::error::{Error, Result};
use crate::metrics;
use crate::tensor::Tensor3;

/// Epsilon guarding the cross-entropy logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// The M per-style probabilistic segmentation outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMaskStack {
    values: Tensor3,
}

impl SoftMaskStack {
    /// Validates that every entry lies in [0,1].
    pub fn new(values: Tensor3) -> Result<Self> {
        if values.channels() == 0 {
            return Err(Error::InvalidInput("stack needs at least one style".into()));
        }
        if values.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("stack entries must lie in [0,1]".into()));
        }
        Ok(SoftMaskStack { values })
    }

    /// Construction for callers that guarantee the range (sigmoid outputs).
    pub(crate) fn new_unchecked(values: Tensor3) -> Self {
        SoftMaskStack { values }
    }

    pub fn style_count(&self) -> usize {
        self.values.channels()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    /// Channel for 0-based style index `j` (style j+1).
    pub fn channel(&self, j: usize) -> &[f32] {
        self.values.channel(j)
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.values
    }

    fn check_dims(&self, gt: &BinaryMask) -> Result<()> {
        if gt.height() != self.height() || gt.width() != self.width() {
            return Err(Error::DimMismatch(format!(
                "stack {}x{} vs mask {}x{}",
                self.height(),
                self.width(),
                gt.height(),
                gt.width()
            )));
        }
        Ok(())
    }
}

/// Classifier output: an M-way distribution over styles.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleProbabilities {
    p: Vec<f64>,
}

impl StyleProbabilities {
    /// Validates non-negativity and sum 1 ± 1e-6.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidInput("empty probability vector".into()));
        }
        if p.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidInput("negative style probability".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "style probabilities sum to {total}, expected 1"
            )));
        }
        Ok(StyleProbabilities { p })
    }

    pub fn uniform(m: usize) -> Self {
        StyleProbabilities {
            p: vec![1.0 / m as f64; m],
        }
    }

    /// Bypasses the sum-to-one check. For finite-difference probing of
    /// losses at perturbed points; not part of the training path.
    #[doc(hidden)]
    pub fn new_unnormalized(p: Vec<f64>) -> Self {
        StyleProbabilities { p }
    }

    /// One-hot at 1-based style index.
    pub fn one_hot(m: usize, style: usize) -> Self {
        let mut p = vec![0.0; m];
        p[style - 1] = 1.0;
        StyleProbabilities { p }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .p
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| v * v.ln())
            .sum::<f64>()
    }
}

/// How m* is selected from the prediction stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionRule {
    /// Soft Dice on the raw probabilistic channels (default; keeps selection
    /// consistent with the optimized quantity).
    Soft,
    /// Hard Dice on channels thresholded at 0.5.
    Hard,
}

impl Default for SelectionRule {
    fn default() -> Self {
        SelectionRule::Soft
    }
}

/// Knobs shared by the loss terms.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    /// Smoothing added to the soft-Dice numerator and denominator.
    pub smooth: f64,
    /// Weights of (l1, l2, l3); the published objective is (1, 1, 1).
    pub weights: [f64; 3],
    pub selection: SelectionRule,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            smooth: 1.0,
            weights: [1.0, 1.0, 1.0],
            selection: SelectionRule::Soft,
        }
    }
}

/// Per-pair loss terms. `m_star` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
    pub m_star: usize,
}

/// Index (1-based) of the predicted style closest to the ground truth.
/// Ties break to the lowest index; the decision carries no gradient.
pub fn best_style_index(
    gt: &BinaryMask,
    preds: &SoftMaskStack,
    smooth: f64,
    rule: SelectionRule,
) -> Result<usize> {
    preds.check_dims(gt)?;
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for j in 0..preds.style_count() {
        let score = match rule {
            SelectionRule::Soft => metrics::soft_dice(preds.channel(j), gt, smooth)?,
            SelectionRule::Hard => {
                let hard = BinaryMask::from_plane(preds.channel(j), gt.height(), gt.width(), 0.5)?;
                metrics::dice(&hard, gt)?
            }
        };
        if score > best_score {
            best_score = score;
            best = j;
        }
    }
    Ok(best + 1)
}

/// Winner-take-all Dice loss: `1 - soft_dice(preds[m*], gt)`.
pub fn loss_l1(gt: &BinaryMask, preds: &SoftMaskStack, smooth: f64) -> Result<f64> {
    let m_star = best_style_index(gt, preds, smooth, SelectionRule::Soft)?;
    Ok(1.0 - metrics::soft_dice(preds.channel(m_star - 1), gt, smooth)?)
}

/// Probability-weighted plausibility loss:
/// `1 - soft_dice(sum_j p_j * preds[j], gt)`.
pub fn loss_l2(
    gt: &BinaryMask,
    preds: &SoftMaskStack,
    p: &StyleProbabilities,
    smooth: f64,
) -> Result<f64> {
    preds.check_dims(gt)?;
    check_style_count(preds, p)?;
    let weighted = weighted_sum(preds, p);
    let terms = dice_terms_f64(&weighted, gt, smooth);
    Ok(1.0 - terms.ratio())
}

/// Cross-entropy of the classifier against m* (1-based).
pub fn loss_l3(p: &StyleProbabilities, m_star: usize) -> Result<f64> {
    if m_star == 0 || m_star > p.len() {
        return Err(Error::InvalidInput(format!(
            "m_star {m_star} out of range 1..={}",
            p.len()
        )));
    }
    Ok(-(p.as_slice()[m_star - 1] + LOG_EPS).ln())
}

/// The full objective: m* is selected once and shared by all three terms.
pub fn total_loss(
    gt: &BinaryMask,
    preds: &SoftMaskStack,
    p: &StyleProbabilities,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    check_style_count(preds, p)?;
    let m_star = best_style_index(gt, preds, cfg.smooth, cfg.selection)?;
    let l1 = 1.0 - metrics::soft_dice(preds.channel(m_star - 1), gt, cfg.smooth)?;
    let l2 = loss_l2(gt, preds, p, cfg.smooth)?;
    let l3 = loss_l3(p, m_star)?;
    let [w1, w2, w3] = cfg.weights;
    Ok(LossBreakdown {
        l1,
        l2,
        l3,
        total: w1 * l1 + w2 * l2 + w3 * l3,
        m_star,
    })
}

/// Relaxed winner-take-all baseline: weight `1 - eps` on the best channel's
/// Dice loss and `eps / (M-1)` on every other channel's.
pub fn mhp_loss(gt: &BinaryMask, preds: &SoftMaskStack, eps: f64, smooth: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidInput(format!("mhp eps {eps} must be in [0,1)")));
    }
    let m = preds.style_count();
    let m_star = best_style_index(gt, preds, smooth, SelectionRule::Soft)?;
    let mut total = 0.0;
    for j in 0..m {
        let w = if j + 1 == m_star {
            1.0 - eps
        } else {
            eps / (m - 1) as f64
        };
        if w != 0.0 {
            total += w * (1.0 - metrics::soft_dice(preds.channel(j), gt, smooth)?);
        }
    }
    Ok(total)
}

fn check_style_count(preds: &SoftMaskStack, p: &StyleProbabilities) -> Result<()> {
    if preds.style_count() != p.len() {
        return Err(Error::DimMismatch(format!(
            "stack has {} styles but p has {}",
            preds.style_count(),
            p.len()
        )));
    }
    Ok(())
}

/// Probability-weighted channel combination, kept in f64 so l2 and its
/// gradients are smooth functions of the f32 inputs.
fn weighted_sum(preds: &SoftMaskStack, p: &StyleProbabilities) -> Vec<f64> {
    let n = preds.height() * preds.width();
    let mut acc = vec![0.0f64; n];
    for j in 0..preds.style_count() {
        let w = p.as_slice()[j];
        for (a, &v) in acc.iter_mut().zip(preds.channel(j)) {
            *a += w * v as f64;
        }
    }
    // Convex combination of [0,1] values; the clamp only absorbs
    // floating-point drift.
    for v in acc.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    acc
}

// ---------------------------------------------------------------------------
// Analytic gradients. Layouts match the inputs: stack gradients are CHW
// vectors of length M*H*W, probability gradients have length M.
// ---------------------------------------------------------------------------

struct DiceTerms {
    numer: f64,
    denom: f64,
}

impl DiceTerms {
    fn ratio(&self) -> f64 {
        if self.denom == 0.0 {
            1.0
        } else {
            self.numer / self.denom
        }
    }
}

fn dice_terms(pred: &[f32], gt: &BinaryMask, smooth: f64) -> DiceTerms {
    let mut inter = 0.0f64;
    let mut pred_sum = 0.0f64;
    let mut target_sum = 0.0f64;
    for (&p, &t) in pred.iter().zip(gt.grid()) {
        pred_sum += p as f64;
        if t != 0 {
            inter += p as f64;
            target_sum += 1.0;
        }
    }
    DiceTerms {
        numer: 2.0 * inter + smooth,
        denom: pred_sum + target_sum + smooth,
    }
}

fn dice_terms_f64(pred: &[f64], gt: &BinaryMask, smooth: f64) -> DiceTerms {
    let mut inter = 0.0f64;
    let mut pred_sum = 0.0f64;
    let mut target_sum = 0.0f64;
    for (&p, &t) in pred.iter().zip(gt.grid()) {
        pred_sum += p;
        if t != 0 {
            inter += p;
            target_sum += 1.0;
        }
    }
    DiceTerms {
        numer: 2.0 * inter + smooth,
        denom: pred_sum + target_sum + smooth,
    }
}

/// d(1 - numer/denom)/d pred_x = (numer - 2*t_x*denom) / denom^2.
fn dice_loss_grad_into(terms: &DiceTerms, gt: &BinaryMask, scale: f64, out: &mut [f64]) {
    if terms.denom == 0.0 {
        return; // convention point: both empty, loss constant 0
    }
    let d2 = terms.denom * terms.denom;
    for (o, &t) in out.iter_mut().zip(gt.grid()) {
        let tx = t as f64;
        *o += scale * (terms.numer - 2.0 * tx * terms.denom) / d2;
    }
}

/// `loss_l1` with its gradient w.r.t. the stack (non-zero only in channel m*).
pub fn grad_l1(
    gt: &BinaryMask,
    preds: &SoftMaskStack,
    smooth: f64,
) -> Result<(f64, usize, Vec<f64>)> {
    let m_star = best_style_index(gt, preds, smooth, SelectionRule::Soft)?;
    let n = preds.height() * preds.width();
    let mut grad = vec![0.0f64; preds.style_count() * n];
    let terms = dice_terms(preds.channel(m_star - 1), gt, smooth);
    let loss = 1.0 - terms.ratio();
    dice_loss_grad_into(
        &terms,
        gt,
        1.0,
        &mut grad[(m_star - 1) * n..m_star * n],
    );
    Ok((loss, m_star, grad))
}

/// `loss_l2` with gradients w.r.t. the stack (all channels) and w.r.t. p.
pub fn grad_l2(
    gt: &BinaryMask,
    preds: &SoftMaskStack,
    p: &StyleProbabilities,
    smooth: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    preds.check_dims(gt)?;
    check_style_count(preds, p)?;
    let n = preds.height() * preds.width();
    let m = preds.style_count();

    let weighted = weighted_sum(preds, p);
    let terms = dice_terms_f64(&weighted, gt, smooth);
    let loss = 1.0 - terms.ratio();

    // dL/dw_x, shared by both chain rules.
    let mut dw = vec![0.0f64; n];
    dice_loss_grad_into(&terms, gt, 1.0, &mut dw);

    let mut grad_preds = vec![0.0f64; m * n];
    let mut grad_p = vec![0.0f64; m];
    for j in 0..m {
        let pj = p.as_slice()[j];
        let channel = preds.channel(j);
        let out = &mut grad_preds[j * n..(j + 1) * n];
        let mut acc = 0.0f64;
        for x in 0..n {
            out[x] = pj * dw[x];
            acc += dw[x] * channel[x] as f64;
        }
        grad_p[j] = acc;
    }
    Ok((loss, grad_preds, grad_p))
}

/// `loss_l3` with its gradient w.r.t. p.
pub fn grad_l3(p: &StyleProbabilities, m_star: usize) -> Result<(f64, Vec<f64>)> {
    let loss = loss_l3(p, m_star)?;
    let mut grad = vec![0.0f64; p.len()];
    grad[m_star - 1] = -1.0 / (p.as_slice()[m_star - 1] + LOG_EPS);
    Ok((loss, grad))
}

/// Full objective with gradients for one pair.
pub struct TotalGrad {
    pub breakdown: LossBreakdown,
    pub d_preds: Vec<f64>,
    pub d_p: Vec<f64>,
}

pub fn grad_total(
    gt: &BinaryMask,
    preds: &SoftMaskStack,
    p: &StyleProbabilities,
    cfg: &LossConfig,
) -> Result<TotalGrad> {
    check_style_count(preds, p)?;
    let m_star = best_style_index(gt, preds, cfg.smooth, cfg.selection)?;
    let n = preds.height() * preds.width();
    let [w1, w2, w3] = cfg.weights;

    let terms = dice_terms(preds.channel(m_star - 1), gt, cfg.smooth);
    let l1 = 1.0 - terms.ratio();
    let mut d_preds = vec![0.0f64; preds.style_count() * n];
    dice_loss_grad_into(&terms, gt, w1, &mut d_preds[(m_star - 1) * n..m_star * n]);

    let (l2, g2_preds, g2_p) = grad_l2(gt, preds, p, cfg.smooth)?;
    for (d, g) in d_preds.iter_mut().zip(&g2_preds) {
        *d += w2 * g;
    }

    let (l3, g3_p) = grad_l3(p, m_star)?;
    let d_p: Vec<f64> = g2_p
        .iter()
        .zip(&g3_p)
        .map(|(a, b)| w2 * a + w3 * b)
        .collect();

    Ok(TotalGrad {
        breakdown: LossBreakdown {
            l1,
            l2,
            l3,
            total: w1 * l1 + w2 * l2 + w3 * l3,
            m_star,
        },
        d_preds,
        d_p,
    })
}

/// `mhp_loss` with its gradient w.r.t. the stack. Channel weights are fixed
/// by m* before differentiation, exactly like the l1 selection.
pub fn grad_mhp(
    gt: &BinaryMask,
    preds: &SoftMaskStack,
    eps: f64,
    smooth: f64,
) -> Result<(f64, usize, Vec<f64>)> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidInput(format!("mhp eps {eps} must be in [0,1)")));
    }
    let m = preds.style_count();
    let m_star = best_style_index(gt, preds, smooth, SelectionRule::Soft)?;
    let n = preds.height() * preds.width();
    let mut grad = vec![0.0f64; m * n];
    let mut loss = 0.0;
    for j in 0..m {
        let w = if j + 1 == m_star {
            1.0 - eps
        } else {
            eps / (m - 1) as f64
        };
        if w == 0.0 {
            continue;
        }
        let terms = dice_terms(preds.channel(j), gt, smooth);
        loss += w * (1.0 - terms.ratio());
        dice_loss_grad_into(&terms, gt, w, &mut grad[j * n..(j + 1) * n]);
    }
    Ok((loss, m_star, grad))
}
