//! The two trainable functions: an M-headed segmentation network and a
//! style classifier.
//!
//! The segmentation network is a small conv encoder whose per-stage feature
//! maps are bilinearly resized to full resolution, concatenated, and mapped
//! by a 1x1 convolution with a sigmoid to M mask channels. The classifier
//! consumes the image concatenated with one mask (4 channels), downsamples
//! through conv stages, global-average-pools, and ends in an M-way softmax.
//! Neither network has stochastic layers, so inference is deterministic.

pub mod nn;

use nn::{
    avgpool2, avgpool2_backward, global_avg_pool, global_avg_pool_backward, relu, relu_backward,
    sigmoid, sigmoid_backward, softmax, softmax_backward, Conv, Linear, ResizePlan,
};

use crate::data::BinaryMask;
use crate::error::{Error, Result};
use crate::exec;
use crate::losses::{SoftMaskStack, StyleProbabilities};
use crate::rng::Rng;
use crate::tensor::Tensor3;

const IMG_CHANNELS: usize = 3;
const CLS_CHANNELS: usize = 4; // image + mask
const WIDTH_CAP_SHIFT: u32 = 3; // widths stop doubling after 8x base

fn stage_width(base: usize, stage: usize) -> usize {
    base << (stage as u32).min(WIDTH_CAP_SHIFT)
}

/// Segmentation model shape.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SegModelConfig {
    /// Number of predicted styles (M = 1 is the plain single-mask baseline).
    pub m: usize,
    pub base_width: usize,
    pub n_stages: usize,
    pub resolution: usize,
}

impl SegModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::config("model.m", "must be at least 1"));
        }
        if self.n_stages < 2 {
            return Err(Error::config("model.n_stages", "must be at least 2"));
        }
        if self.base_width == 0 {
            return Err(Error::config("model.base_width", "must be positive"));
        }
        let factor = 1 << (self.n_stages - 1);
        if self.resolution % factor != 0 {
            return Err(Error::config(
                "model.resolution",
                format!(
                    "{} not divisible by 2^(n_stages-1) = {factor}",
                    self.resolution
                ),
            ));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        (0..self.n_stages)
            .map(|s| stage_width(self.base_width, s))
            .collect()
    }
}

/// Style classifier shape.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClsModelConfig {
    pub m: usize,
    pub base_width: usize,
    pub n_stages: usize,
    pub resolution: usize,
}

impl ClsModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::config(
                "classifier.m",
                "style classifier needs at least 2 styles (single-style runs skip it)",
            ));
        }
        if self.n_stages == 0 || self.base_width == 0 {
            return Err(Error::config(
                "classifier",
                "n_stages and base_width must be positive",
            ));
        }
        let factor = 1 << self.n_stages;
        if self.resolution % factor != 0 {
            return Err(Error::config(
                "classifier.resolution",
                format!("{} not divisible by 2^n_stages = {factor}", self.resolution),
            ));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        (0..self.n_stages)
            .map(|s| stage_width(self.base_width, s))
            .collect()
    }
}

/// M-headed segmentation network.
#[derive(Debug, Clone)]
pub struct SegModel {
    pub cfg: SegModelConfig,
    convs: Vec<Conv>,
    fuse: Conv,
    plans: Vec<ResizePlan>,
}

/// Intermediate activations kept for one backward pass.
pub struct SegCache {
    inputs: Vec<Tensor3>,
    feats: Vec<Tensor3>,
    cat: Tensor3,
    out: Tensor3,
}

impl SegModel {
    pub fn init(cfg: SegModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(seed);
        let widths = cfg.widths();
        let mut convs = Vec::with_capacity(cfg.n_stages);
        let mut in_c = IMG_CHANNELS;
        for &w in &widths {
            convs.push(Conv::init(in_c, w, 3, &mut rng));
            in_c = w;
        }
        let cat_c: usize = widths.iter().sum();
        let fuse = Conv::init(cat_c, cfg.m, 1, &mut rng);
        let plans = (0..cfg.n_stages)
            .map(|s| {
                let side = cfg.resolution >> s;
                ResizePlan::new(side, side, cfg.resolution, cfg.resolution)
            })
            .collect();
        Ok(SegModel {
            cfg,
            convs,
            fuse,
            plans,
        })
    }

    /// Total trainable parameter count for a config.
    pub fn param_count(cfg: &SegModelConfig) -> usize {
        let widths = cfg.widths();
        let mut total = 0;
        let mut in_c = IMG_CHANNELS;
        for &w in &widths {
            total += Conv::param_count(in_c, w, 3);
            in_c = w;
        }
        total + Conv::param_count(widths.iter().sum(), cfg.m, 1)
    }

    fn check_resolution(&self, image: &Tensor3) -> Result<()> {
        if image.height() != self.cfg.resolution
            || image.width() != self.cfg.resolution
            || image.channels() != IMG_CHANNELS
        {
            return Err(Error::DimMismatch(format!(
                "expected {}x{}x{} image, got {}x{}x{}",
                IMG_CHANNELS,
                self.cfg.resolution,
                self.cfg.resolution,
                image.channels(),
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// Inference forward: M sigmoid mask channels at full resolution.
    pub fn forward(&self, image: &Tensor3) -> Result<SoftMaskStack> {
        Ok(self.run(image)?.1)
    }

    /// Forward keeping activations for [`SegModel::backward`].
    pub fn forward_cached(&self, image: &Tensor3) -> Result<(SoftMaskStack, SegCache)> {
        let (cache, stack) = self.run(image)?;
        Ok((stack, cache))
    }

    fn run(&self, image: &Tensor3) -> Result<(SegCache, SoftMaskStack)> {
        self.check_resolution(image)?;
        let res = self.cfg.resolution;
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut feats = Vec::with_capacity(self.convs.len());
        let mut x = image.clone();
        for (s, conv) in self.convs.iter().enumerate() {
            if s > 0 {
                x = avgpool2(&x);
            }
            inputs.push(x.clone());
            let feat = relu(&conv.forward(&x));
            feats.push(feat.clone());
            x = feat;
        }

        // Multi-scale fusion: every stage resized to full resolution.
        let cat_c: usize = feats.iter().map(|f| f.channels()).sum();
        let mut cat = Tensor3::zeros(cat_c, res, res);
        let mut offset = 0;
        for (s, feat) in feats.iter().enumerate() {
            for c in 0..feat.channels() {
                let mut dst = vec![0.0f32; res * res];
                self.plans[s].forward_plane(feat.channel(c), &mut dst);
                cat.channel_mut(offset + c).copy_from_slice(&dst);
            }
            offset += feat.channels();
        }

        let out = sigmoid(&self.fuse.forward(&cat));
        let stack = SoftMaskStack::new_unchecked(out.clone());
        Ok((
            SegCache {
                inputs,
                feats,
                cat,
                out,
            },
            stack,
        ))
    }

    /// Parameter gradients (flat, aligned with [`SegModel::params_flat`])
    /// for upstream gradient `d_out` over the output stack (CHW).
    pub fn backward(&self, cache: &SegCache, d_out: &[f32]) -> Vec<f32> {
        let res = self.cfg.resolution;
        let d_logits = sigmoid_backward(&cache.out, d_out);
        let (d_cat, d_fuse_w, d_fuse_b) = self.fuse.backward(&cache.cat, &d_logits);

        // Route concat gradients back through each stage's upsampling.
        let mut d_feats: Vec<Tensor3> = Vec::with_capacity(self.convs.len());
        let mut offset = 0;
        for (s, feat) in cache.feats.iter().enumerate() {
            let side = res >> s;
            let mut d_feat = Tensor3::zeros(feat.channels(), side, side);
            for c in 0..feat.channels() {
                self.plans[s].backward_plane(d_cat.channel(offset + c), d_feat.channel_mut(c));
            }
            d_feats.push(d_feat);
            offset += feat.channels();
        }

        // Walk the encoder backwards, accumulating the skip gradients.
        let mut conv_grads: Vec<(Vec<f32>, Vec<f32>)> = Vec::with_capacity(self.convs.len());
        conv_grads.resize(self.convs.len(), (Vec::new(), Vec::new()));
        let mut d_feat = d_feats.pop().expect("at least one stage");
        for s in (0..self.convs.len()).rev() {
            let d_z = relu_backward(&cache.feats[s], &d_feat);
            let (d_input, d_w, d_b) = self.convs[s].backward(&cache.inputs[s], &d_z);
            conv_grads[s] = (d_w, d_b);
            if s > 0 {
                let mut below = d_feats.pop().expect("stage gradient");
                let up = avgpool2_backward(&d_input);
                for (a, b) in below.as_mut_slice().iter_mut().zip(up.as_slice()) {
                    *a += b;
                }
                d_feat = below;
            }
        }

        let mut flat = Vec::with_capacity(Self::param_count(&self.cfg));
        for (d_w, d_b) in &conv_grads {
            flat.extend_from_slice(d_w);
            flat.extend_from_slice(d_b);
        }
        flat.extend_from_slice(&d_fuse_w);
        flat.extend_from_slice(&d_fuse_b);
        flat
    }

    pub fn params_flat(&self) -> Vec<f32> {
        let mut flat = Vec::with_capacity(Self::param_count(&self.cfg));
        for conv in &self.convs {
            flat.extend_from_slice(&conv.w);
            flat.extend_from_slice(&conv.b);
        }
        flat.extend_from_slice(&self.fuse.w);
        flat.extend_from_slice(&self.fuse.b);
        flat
    }

    pub fn set_params_flat(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != Self::param_count(&self.cfg) {
            return Err(Error::DimMismatch(format!(
                "segmentation parameter blob has {} values, expected {}",
                flat.len(),
                Self::param_count(&self.cfg)
            )));
        }
        let mut off = 0;
        let mut take = |dst: &mut [f32]| {
            dst.copy_from_slice(&flat[off..off + dst.len()]);
            off += dst.len();
        };
        for conv in &mut self.convs {
            take(&mut conv.w);
            take(&mut conv.b);
        }
        take(&mut self.fuse.w);
        take(&mut self.fuse.b);
        Ok(())
    }

    /// Batched inference; items are independent, so this equals stacking
    /// per-item forwards.
    pub fn forward_batch(&self, images: &[&Tensor3]) -> Result<Vec<SoftMaskStack>> {
        exec::map_slice(images, |img| self.forward(img))
            .into_iter()
            .collect()
    }
}

/// Style classifier over (image, mask) pairs.
#[derive(Debug, Clone)]
pub struct StyleClassifier {
    pub cfg: ClsModelConfig,
    convs: Vec<Conv>,
    head: Linear,
}

pub struct ClsCache {
    inputs: Vec<Tensor3>,
    feats: Vec<Tensor3>,
    pooled_last: Tensor3,
    gap: Vec<f32>,
    p: Vec<f32>,
}

impl StyleClassifier {
    pub fn init(cfg: ClsModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(seed);
        let widths = cfg.widths();
        let mut convs = Vec::with_capacity(cfg.n_stages);
        let mut in_c = CLS_CHANNELS;
        for &w in &widths {
            convs.push(Conv::init(in_c, w, 3, &mut rng));
            in_c = w;
        }
        let head = Linear::init(in_c, cfg.m, &mut rng);
        Ok(StyleClassifier { cfg, convs, head })
    }

    pub fn param_count(cfg: &ClsModelConfig) -> usize {
        let widths = cfg.widths();
        let mut total = 0;
        let mut in_c = CLS_CHANNELS;
        for &w in &widths {
            total += Conv::param_count(in_c, w, 3);
            in_c = w;
        }
        total + Linear::param_count(in_c, cfg.m)
    }

    fn assemble_input(&self, image: &Tensor3, mask: &BinaryMask) -> Result<Tensor3> {
        if image.height() != self.cfg.resolution
            || image.width() != self.cfg.resolution
            || image.channels() != IMG_CHANNELS
        {
            return Err(Error::DimMismatch(format!(
                "classifier expects {0}x{0} RGB image, got {1}x{2}x{3}",
                self.cfg.resolution,
                image.channels(),
                image.height(),
                image.width()
            )));
        }
        if mask.height() != image.height() || mask.width() != image.width() {
            return Err(Error::DimMismatch(format!(
                "mask {}x{} does not match image {}x{}",
                mask.height(),
                mask.width(),
                image.height(),
                image.width()
            )));
        }
        let plane = mask.to_plane();
        Tensor3::stack_planes(
            &[
                image.channel(0),
                image.channel(1),
                image.channel(2),
                &plane,
            ],
            image.height(),
            image.width(),
        )
    }

    /// Inference forward: the M-way style distribution for (image, mask).
    pub fn forward(&self, image: &Tensor3, mask: &BinaryMask) -> Result<StyleProbabilities> {
        let (_, p) = self.run(image, mask)?;
        Ok(p)
    }

    pub fn forward_cached(
        &self,
        image: &Tensor3,
        mask: &BinaryMask,
    ) -> Result<(StyleProbabilities, ClsCache)> {
        let (cache, p) = self.run(image, mask)?;
        Ok((p, cache))
    }

    fn run(&self, image: &Tensor3, mask: &BinaryMask) -> Result<(ClsCache, StyleProbabilities)> {
        let mut x = self.assemble_input(image, mask)?;
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut feats = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            inputs.push(x.clone());
            let feat = relu(&conv.forward(&x));
            feats.push(feat.clone());
            x = avgpool2(&feat);
        }
        let gap = global_avg_pool(&x);
        let logits = self.head.forward(&gap);
        let p = softmax(&logits);
        let probs = StyleProbabilities::new(p.iter().map(|&v| v as f64).collect())?;
        Ok((
            ClsCache {
                inputs,
                feats,
                pooled_last: x,
                gap,
                p,
            },
            probs,
        ))
    }

    /// Parameter gradients (flat) for upstream gradient `d_p` over the
    /// output probabilities.
    pub fn backward(&self, cache: &ClsCache, d_p: &[f64]) -> Vec<f32> {
        let d_p32: Vec<f32> = d_p.iter().map(|&v| v as f32).collect();
        let d_logits = softmax_backward(&cache.p, &d_p32);
        let (d_gap, d_head_w, d_head_b) = self.head.backward(&cache.gap, &d_logits);

        let last = &cache.pooled_last;
        let mut d_x = global_avg_pool_backward(
            &d_gap,
            last.channels(),
            last.height(),
            last.width(),
        );

        let mut conv_grads: Vec<(Vec<f32>, Vec<f32>)> = Vec::new();
        conv_grads.resize(self.convs.len(), (Vec::new(), Vec::new()));
        for s in (0..self.convs.len()).rev() {
            let d_feat = avgpool2_backward(&d_x);
            let d_z = relu_backward(&cache.feats[s], &d_feat);
            let (d_input, d_w, d_b) = self.convs[s].backward(&cache.inputs[s], &d_z);
            conv_grads[s] = (d_w, d_b);
            d_x = d_input;
        }

        let mut flat = Vec::with_capacity(Self::param_count(&self.cfg));
        for (d_w, d_b) in &conv_grads {
            flat.extend_from_slice(d_w);
            flat.extend_from_slice(d_b);
        }
        flat.extend_from_slice(&d_head_w);
        flat.extend_from_slice(&d_head_b);
        flat
    }

    pub fn params_flat(&self) -> Vec<f32> {
        let mut flat = Vec::with_capacity(Self::param_count(&self.cfg));
        for conv in &self.convs {
            flat.extend_from_slice(&conv.w);
            flat.extend_from_slice(&conv.b);
        }
        flat.extend_from_slice(&self.head.w);
        flat.extend_from_slice(&self.head.b);
        flat
    }

    pub fn set_params_flat(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != Self::param_count(&self.cfg) {
            return Err(Error::DimMismatch(format!(
                "classifier parameter blob has {} values, expected {}",
                flat.len(),
                Self::param_count(&self.cfg)
            )));
        }
        let mut off = 0;
        let mut take = |dst: &mut [f32]| {
            dst.copy_from_slice(&flat[off..off + dst.len()]);
            off += dst.len();
        };
        for conv in &mut self.convs {
            take(&mut conv.w);
            take(&mut conv.b);
        }
        take(&mut self.head.w);
        take(&mut self.head.b);
        Ok(())
    }

    pub fn forward_batch(
        &self,
        pairs: &[(&Tensor3, &BinaryMask)],
    ) -> Result<Vec<StyleProbabilities>> {
        exec::map_slice(pairs, |(img, mask)| self.forward(img, mask))
            .into_iter()
            .collect()
    }
}
