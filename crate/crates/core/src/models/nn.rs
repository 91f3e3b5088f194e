//! Hand-rolled layers with explicit backward passes, plus Adam.
//!
//! Everything is f32, single-threaded within one forward/backward call;
//! callers parallelize across batch items.

use crate::rng::Rng;
use crate::tensor::Tensor3;

/// 2D convolution, stride 1, square kernel (1 or 3), zero padding k/2.
#[derive(Debug, Clone)]
pub struct Conv {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    /// Weights, [out][in][ky][kx] contiguous.
    pub w: Vec<f32>,
    pub b: Vec<f32>,
}

impl Conv {
    pub fn init(in_c: usize, out_c: usize, k: usize, rng: &mut Rng) -> Self {
        let fan_in = (in_c * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let w = (0..out_c * in_c * k * k)
            .map(|_| (rng.normal() * std) as f32)
            .collect();
        Conv {
            in_c,
            out_c,
            k,
            w,
            b: vec![0.0; out_c],
        }
    }

    pub fn param_count(in_c: usize, out_c: usize, k: usize) -> usize {
        out_c * in_c * k * k + out_c
    }

    pub fn forward(&self, input: &Tensor3) -> Tensor3 {
        debug_assert_eq!(input.channels(), self.in_c);
        let (h, w) = (input.height(), input.width());
        let pad = self.k / 2;
        let mut out = Tensor3::zeros(self.out_c, h, w);
        for co in 0..self.out_c {
            out.channel_mut(co).fill(self.b[co]);
        }
        for co in 0..self.out_c {
            for ci in 0..self.in_c {
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let wv = self.w[((co * self.in_c + ci) * self.k + ky) * self.k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        shift_axpy(
                            out.channel_mut(co),
                            input.channel(ci),
                            h,
                            w,
                            ky as i32 - pad as i32,
                            kx as i32 - pad as i32,
                            wv,
                        );
                    }
                }
            }
        }
        out
    }

    /// Returns (d_input, d_w, d_b) for upstream gradient `d_out`.
    pub fn backward(&self, input: &Tensor3, d_out: &Tensor3) -> (Tensor3, Vec<f32>, Vec<f32>) {
        let (h, w) = (input.height(), input.width());
        let pad = self.k / 2;
        let mut d_input = Tensor3::zeros(self.in_c, h, w);
        let mut d_w = vec![0.0f32; self.w.len()];
        let mut d_b = vec![0.0f32; self.out_c];

        for co in 0..self.out_c {
            d_b[co] = d_out.channel(co).iter().sum();
        }
        for co in 0..self.out_c {
            for ci in 0..self.in_c {
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let dy = ky as i32 - pad as i32;
                        let dx = kx as i32 - pad as i32;
                        let widx = ((co * self.in_c + ci) * self.k + ky) * self.k + kx;
                        // dW = <d_out, shifted input>
                        d_w[widx] +=
                            shift_dot(d_out.channel(co), input.channel(ci), h, w, dy, dx);
                        // d_input accumulates d_out scattered with the
                        // opposite shift.
                        let wv = self.w[widx];
                        if wv != 0.0 {
                            shift_axpy_t(
                                d_input.channel_mut(ci),
                                d_out.channel(co),
                                h,
                                w,
                                dy,
                                dx,
                                wv,
                            );
                        }
                    }
                }
            }
        }
        (d_input, d_w, d_b)
    }
}

/// out[y][x] += wv * src[y+dy][x+dx] over the valid window.
fn shift_axpy(out: &mut [f32], src: &[f32], h: usize, w: usize, dy: i32, dx: i32, wv: f32) {
    let (y0, y1) = row_window(h, dy);
    let (x0, x1) = row_window(w, dx);
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as i32 + dy) as usize;
        let o = &mut out[y * w + x0..y * w + x1];
        let s = &src[sy * w + (x0 as i32 + dx) as usize..][..x1 - x0];
        for (ov, sv) in o.iter_mut().zip(s) {
            *ov += wv * sv;
        }
    }
}

/// out[y+dy][x+dx] += wv * src[y][x]: the adjoint scatter of `shift_axpy`.
fn shift_axpy_t(out: &mut [f32], src: &[f32], h: usize, w: usize, dy: i32, dx: i32, wv: f32) {
    let (y0, y1) = row_window(h, dy);
    let (x0, x1) = row_window(w, dx);
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as i32 + dy) as usize;
        let o = &mut out[sy * w + (x0 as i32 + dx) as usize..][..x1 - x0];
        let s = &src[y * w + x0..y * w + x1];
        for (ov, sv) in o.iter_mut().zip(s) {
            *ov += wv * sv;
        }
    }
}

/// Sum over the valid window of a[y][x] * b[y+dy][x+dx].
fn shift_dot(a: &[f32], b: &[f32], h: usize, w: usize, dy: i32, dx: i32) -> f32 {
    let (y0, y1) = row_window(h, dy);
    let (x0, x1) = row_window(w, dx);
    if x0 >= x1 {
        return 0.0;
    }
    let mut acc = 0.0f32;
    for y in y0..y1 {
        let sy = (y as i32 + dy) as usize;
        let ra = &a[y * w + x0..y * w + x1];
        let rb = &b[sy * w + (x0 as i32 + dx) as usize..][..x1 - x0];
        for (av, bv) in ra.iter().zip(rb) {
            acc += av * bv;
        }
    }
    acc
}

fn row_window(n: usize, d: i32) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { n - d as usize } else { n };
    (lo.min(n), hi)
}

pub fn relu(t: &Tensor3) -> Tensor3 {
    let mut out = t.clone();
    for v in out.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// d_z = d_a where the activation was positive.
pub fn relu_backward(activated: &Tensor3, d_a: &Tensor3) -> Tensor3 {
    let mut out = d_a.clone();
    for (g, &a) in out.as_mut_slice().iter_mut().zip(activated.as_slice()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
    out
}

/// 2x2 average pooling, stride 2. Dimensions must be even.
pub fn avgpool2(t: &Tensor3) -> Tensor3 {
    let (c, h, w) = (t.channels(), t.height(), t.width());
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let mut out = Tensor3::zeros(c, h / 2, w / 2);
    for ci in 0..c {
        for y in 0..h / 2 {
            for x in 0..w / 2 {
                let s = t.at(ci, 2 * y, 2 * x)
                    + t.at(ci, 2 * y, 2 * x + 1)
                    + t.at(ci, 2 * y + 1, 2 * x)
                    + t.at(ci, 2 * y + 1, 2 * x + 1);
                *out.at_mut(ci, y, x) = 0.25 * s;
            }
        }
    }
    out
}

pub fn avgpool2_backward(d_out: &Tensor3) -> Tensor3 {
    let (c, h, w) = (d_out.channels(), d_out.height(), d_out.width());
    let mut d_in = Tensor3::zeros(c, h * 2, w * 2);
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let g = 0.25 * d_out.at(ci, y, x);
                *d_in.at_mut(ci, 2 * y, 2 * x) = g;
                *d_in.at_mut(ci, 2 * y, 2 * x + 1) = g;
                *d_in.at_mut(ci, 2 * y + 1, 2 * x) = g;
                *d_in.at_mut(ci, 2 * y + 1, 2 * x + 1) = g;
            }
        }
    }
    d_in
}

/// Precomputed bilinear sampling taps (half-pixel convention) for one axis.
#[derive(Debug, Clone)]
pub struct ResizePlan {
    pub src_h: usize,
    pub src_w: usize,
    pub dst_h: usize,
    pub dst_w: usize,
    rows: Vec<(usize, usize, f32)>, // (i0, i1, frac)
    cols: Vec<(usize, usize, f32)>,
}

impl ResizePlan {
    pub fn new(src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Self {
        let taps = |src: usize, dst: usize| -> Vec<(usize, usize, f32)> {
            (0..dst)
                .map(|i| {
                    let f = ((i as f32 + 0.5) * src as f32 / dst as f32 - 0.5)
                        .clamp(0.0, (src - 1) as f32);
                    let i0 = f.floor() as usize;
                    let i1 = (i0 + 1).min(src - 1);
                    (i0, i1, f - i0 as f32)
                })
                .collect()
        };
        ResizePlan {
            src_h,
            src_w,
            dst_h,
            dst_w,
            rows: taps(src_h, dst_h),
            cols: taps(src_w, dst_w),
        }
    }

    pub fn forward_plane(&self, src: &[f32], dst: &mut [f32]) {
        for (y, &(y0, y1, wy)) in self.rows.iter().enumerate() {
            for (x, &(x0, x1, wx)) in self.cols.iter().enumerate() {
                let a = src[y0 * self.src_w + x0];
                let b = src[y0 * self.src_w + x1];
                let c = src[y1 * self.src_w + x0];
                let d = src[y1 * self.src_w + x1];
                dst[y * self.dst_w + x] = a * (1.0 - wy) * (1.0 - wx)
                    + b * (1.0 - wy) * wx
                    + c * wy * (1.0 - wx)
                    + d * wy * wx;
            }
        }
    }

    /// Adjoint: scatters destination gradients back to source taps.
    pub fn backward_plane(&self, d_dst: &[f32], d_src: &mut [f32]) {
        for (y, &(y0, y1, wy)) in self.rows.iter().enumerate() {
            for (x, &(x0, x1, wx)) in self.cols.iter().enumerate() {
                let g = d_dst[y * self.dst_w + x];
                d_src[y0 * self.src_w + x0] += g * (1.0 - wy) * (1.0 - wx);
                d_src[y0 * self.src_w + x1] += g * (1.0 - wy) * wx;
                d_src[y1 * self.src_w + x0] += g * wy * (1.0 - wx);
                d_src[y1 * self.src_w + x1] += g * wy * wx;
            }
        }
    }
}

/// Fully connected layer.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_f: usize,
    pub out_f: usize,
    pub w: Vec<f32>, // [out][in]
    pub b: Vec<f32>,
}

impl Linear {
    pub fn init(in_f: usize, out_f: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / in_f as f64).sqrt();
        Linear {
            in_f,
            out_f,
            w: (0..out_f * in_f).map(|_| (rng.normal() * std) as f32).collect(),
            b: vec![0.0; out_f],
        }
    }

    pub fn param_count(in_f: usize, out_f: usize) -> usize {
        out_f * in_f + out_f
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        (0..self.out_f)
            .map(|o| {
                let row = &self.w[o * self.in_f..(o + 1) * self.in_f];
                self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>()
            })
            .collect()
    }

    pub fn backward(&self, x: &[f32], d_out: &[f32]) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let mut d_x = vec![0.0f32; self.in_f];
        let mut d_w = vec![0.0f32; self.w.len()];
        for o in 0..self.out_f {
            let g = d_out[o];
            let row = &self.w[o * self.in_f..(o + 1) * self.in_f];
            for i in 0..self.in_f {
                d_x[i] += g * row[i];
                d_w[o * self.in_f + i] = g * x[i];
            }
        }
        (d_x, d_w, d_out.to_vec())
    }
}

pub fn sigmoid(t: &Tensor3) -> Tensor3 {
    let mut out = t.clone();
    for v in out.as_mut_slice() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    out
}

/// d_z from d_out and the sigmoid outputs.
pub fn sigmoid_backward(out: &Tensor3, d_out: &[f32]) -> Tensor3 {
    let mut d_z = out.clone();
    for (g, (&o, &d)) in d_z
        .as_mut_slice()
        .iter_mut()
        .zip(out.as_slice().iter().zip(d_out))
    {
        *g = d * o * (1.0 - o);
    }
    d_z
}

pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f32 = exps.iter().sum();
    exps.iter().map(|&v| v / total).collect()
}

/// d_logits from d_p and the softmax outputs:
/// `p_i * (d_i - sum_j d_j p_j)`.
pub fn softmax_backward(p: &[f32], d_p: &[f32]) -> Vec<f32> {
    let dot: f32 = p.iter().zip(d_p).map(|(a, b)| a * b).sum();
    p.iter().zip(d_p).map(|(&pi, &di)| pi * (di - dot)).collect()
}

/// Global average pooling over the spatial dims.
pub fn global_avg_pool(t: &Tensor3) -> Vec<f32> {
    let n = t.plane_len() as f32;
    (0..t.channels())
        .map(|c| t.channel(c).iter().sum::<f32>() / n)
        .collect()
}

pub fn global_avg_pool_backward(d_out: &[f32], c: usize, h: usize, w: usize) -> Tensor3 {
    let mut d_in = Tensor3::zeros(c, h, w);
    let scale = 1.0 / (h * w) as f32;
    for ci in 0..c {
        let g = d_out[ci] * scale;
        d_in.channel_mut(ci).fill(g);
    }
    d_in
}

/// Adam with bias correction; state lives in flat vectors parallel to the
/// flattened parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] as f64;
            let m = self.beta1 * self.m[i] as f64 + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.v[i] as f64 + (1.0 - self.beta2) * g * g;
            self.m[i] = m as f32;
            self.v[i] = v as f32;
            let m_hat = m / b1t;
            let v_hat = v / b2t;
            params[i] -= (self.lr * m_hat / (v_hat.sqrt() + self.eps)) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor3 {
        let mut rng = Rng::new(seed);
        let data = (0..c * h * w).map(|_| rng.range_f64(-1.0, 1.0) as f32).collect();
        Tensor3::from_vec(c, h, w, data).unwrap()
    }

    #[test]
    fn conv_matches_naive_reference() {
        let mut rng = Rng::new(1);
        let conv = Conv::init(2, 3, 3, &mut rng);
        let input = tiny_tensor(2, 5, 6, 2);
        let out = conv.forward(&input);

        // Naive triple loop.
        for co in 0..3 {
            for y in 0..5i32 {
                for x in 0..6i32 {
                    let mut acc = conv.b[co];
                    for ci in 0..2 {
                        for ky in 0..3i32 {
                            for kx in 0..3i32 {
                                let iy = y + ky - 1;
                                let ix = x + kx - 1;
                                if iy < 0 || ix < 0 || iy >= 5 || ix >= 6 {
                                    continue;
                                }
                                let wv = conv.w
                                    [((co * 2 + ci) * 3 + ky as usize) * 3 + kx as usize];
                                acc += wv * input.at(ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    let got = out.at(co, y as usize, x as usize);
                    assert!((got - acc).abs() < 1e-5, "({co},{y},{x}): {got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let conv = Conv::init(2, 2, 3, &mut rng);
        let input = tiny_tensor(2, 4, 4, 4);
        // Scalar objective: sum of squared outputs / 2 -> d_out = out.
        let out = conv.forward(&input);
        let (d_input, d_w, d_b) = conv.backward(&input, &out);
        let objective = |c: &Conv, inp: &Tensor3| -> f64 {
            c.forward(inp)
                .as_slice()
                .iter()
                .map(|&v| 0.5 * v as f64 * v as f64)
                .sum()
        };
        let h = 1e-3f32;
        // Weight gradients.
        for idx in [0usize, 5, 11, 17, 23, 35] {
            let mut cp = conv.clone();
            cp.w[idx] += h;
            let mut cm = conv.clone();
            cm.w[idx] -= h;
            let fd = (objective(&cp, &input) - objective(&cm, &input)) / (2.0 * h as f64);
            assert!(
                (fd - d_w[idx] as f64).abs() < 2e-3 * fd.abs().max(1.0),
                "w[{idx}]: {fd} vs {}",
                d_w[idx]
            );
        }
        // Bias gradient.
        let mut cp = conv.clone();
        cp.b[1] += h;
        let mut cm = conv.clone();
        cm.b[1] -= h;
        let fd = (objective(&cp, &input) - objective(&cm, &input)) / (2.0 * h as f64);
        assert!((fd - d_b[1] as f64).abs() < 2e-3 * fd.abs().max(1.0));
        // Input gradient.
        for idx in [0usize, 7, 15, 31] {
            let mut ip = input.clone();
            ip.as_mut_slice()[idx] += h;
            let mut im = input.clone();
            im.as_mut_slice()[idx] -= h;
            let fd = (objective(&conv, &ip) - objective(&conv, &im)) / (2.0 * h as f64);
            assert!(
                (fd - d_input.as_slice()[idx] as f64).abs() < 2e-3 * fd.abs().max(1.0),
                "in[{idx}]: {fd} vs {}",
                d_input.as_slice()[idx]
            );
        }
    }

    #[test]
    fn avgpool_roundtrip_shapes_and_adjoint() {
        let t = tiny_tensor(2, 6, 8, 5);
        let p = avgpool2(&t);
        assert_eq!((p.channels(), p.height(), p.width()), (2, 3, 4));
        // <pool(x), y> == <x, pool_backward(y)> for the adjoint.
        let y = tiny_tensor(2, 3, 4, 6);
        let lhs: f64 = p
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        let back = avgpool2_backward(&y);
        let rhs: f64 = t
            .as_slice()
            .iter()
            .zip(back.as_slice())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }

    #[test]
    fn resize_adjoint_property() {
        let plan = ResizePlan::new(4, 4, 9, 9);
        let x = tiny_tensor(1, 4, 4, 7);
        let mut up = vec![0.0f32; 81];
        plan.forward_plane(x.channel(0), &mut up);
        let y = tiny_tensor(1, 9, 9, 8);
        let lhs: f64 = up
            .iter()
            .zip(y.channel(0))
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        let mut down = vec![0.0f32; 16];
        plan.backward_plane(y.channel(0), &mut down);
        let rhs: f64 = x
            .channel(0)
            .iter()
            .zip(&down)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }

    #[test]
    fn resize_identity_when_same_size() {
        let plan = ResizePlan::new(5, 5, 5, 5);
        let x = tiny_tensor(1, 5, 5, 9);
        let mut out = vec![0.0f32; 25];
        plan.forward_plane(x.channel(0), &mut out);
        assert_eq!(out, x.channel(0));
    }

    #[test]
    fn softmax_sums_to_one_and_backward_is_centered() {
        let p = softmax(&[1.0, 2.0, -0.5]);
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        // Softmax outputs sum to 1, so logit gradients sum to ~0.
        let d = softmax_backward(&p, &[0.3, -0.7, 1.1]);
        assert!(d.iter().sum::<f32>().abs() < 1e-6);
    }

    #[test]
    fn adam_changes_params_on_nonzero_grad() {
        let mut params = vec![1.0f32, -0.5];
        let mut adam = Adam::new(1e-3, 2);
        adam.step(&mut params, &[0.1, 0.0]);
        assert_ne!(params[0], 1.0);
        assert_eq!(params[1], -0.5); // zero grad, zero moments -> no move
    }
}
