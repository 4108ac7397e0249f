//! Forward and backward rules for everything except convolution.

use rand::Rng;

use super::{Graph, Mode, Result, Rule, Tensor, TensorError, TensorId};

/// Pointwise nonlinearities used by the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// x for x > 0, eˣ − 1 otherwise (α = 1).
    Elu,
    /// 1 / (1 + e⁻ˣ).
    Sigmoid,
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

/// Per-channel running mean/variance for batch-norm inference.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormStats {
    /// Fresh stats: zero mean, unit variance.
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

impl Graph {
    /// 2×2 max pooling with stride 2. Gradient flows to the window maximum
    /// only; ties resolve to the first cell in scan order.
    pub fn maxpool2x2(&mut self, input: TensorId) -> Result<TensorId> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::invalid(
                "maxpool2x2",
                format!("spatial size {h}x{w} must be even"),
            ));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0u32; out.len()];
        let data = x.data();
        for nc in 0..n * c {
            let base = nc * h * w;
            let obase = nc * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i00 = base + (2 * oy) * w + 2 * ox;
                    // Scan order (0,0), (0,1), (1,0), (1,1); strict > keeps the first.
                    let mut best = i00;
                    for cand in [i00 + 1, i00 + w, i00 + w + 1] {
                        if data[cand] > data[best] {
                            best = cand;
                        }
                    }
                    out[obase + oy * ow + ox] = data[best];
                    argmax[obase + oy * ow + ox] = best as u32;
                }
            }
        }
        let tensor = Tensor::from_vec(&[n, c, oh, ow], out);
        Ok(self.push(tensor, Rule::MaxPool2x2 { input, argmax }))
    }

    /// Nearest-neighbor 2× upsampling: each pixel becomes a 2×2 block.
    pub fn upsample_nearest2x(&mut self, input: TensorId) -> Result<TensorId> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * oh * ow];
        let data = x.data();
        for nc in 0..n * c {
            let base = nc * h * w;
            let obase = nc * oh * ow;
            for y in 0..h {
                for x_ in 0..w {
                    let v = data[base + y * w + x_];
                    let o = obase + (2 * y) * ow + 2 * x_;
                    out[o] = v;
                    out[o + 1] = v;
                    out[o + ow] = v;
                    out[o + ow + 1] = v;
                }
            }
        }
        let tensor = Tensor::from_vec(&[n, c, oh, ow], out);
        Ok(self.push(tensor, Rule::Upsample2x { input }))
    }

    /// Per-channel batch normalization with trainable scale/shift.
    ///
    /// Train mode normalizes over batch×H×W with ε = 1e-5 and updates the
    /// running stats in place with momentum 0.9; infer mode normalizes with
    /// the running stats and leaves them untouched.
    pub fn batchnorm(
        &mut self,
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mode: Mode,
        stats: &mut BatchNormStats,
    ) -> Result<TensorId> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        let g_t = self.value(gamma);
        let b_t = self.value(beta);
        if g_t.shape() != [c] || b_t.shape() != [c] || stats.mean.len() != c {
            return Err(TensorError::shape(
                "batchnorm",
                format!(
                    "input has {c} channels; gamma {:?}, beta {:?}, stats {}",
                    g_t.shape(),
                    b_t.shape(),
                    stats.mean.len()
                ),
            ));
        }
        let m = (n * h * w) as f64;
        let plane = h * w;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut sum = 0.0;
                    for bi in 0..n {
                        let base = (bi * c + ch) * plane;
                        sum += x.data()[base..base + plane].iter().sum::<f64>();
                    }
                    let mu = sum / m;
                    let mut sq = 0.0;
                    for bi in 0..n {
                        let base = (bi * c + ch) * plane;
                        for &v in &x.data()[base..base + plane] {
                            let d = v - mu;
                            sq += d * d;
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = sq / m;
                }
                for ch in 0..c {
                    stats.mean[ch] = BN_MOMENTUM * stats.mean[ch] + (1.0 - BN_MOMENTUM) * mean[ch];
                    stats.var[ch] = BN_MOMENTUM * stats.var[ch] + (1.0 - BN_MOMENTUM) * var[ch];
                }
                (mean, var)
            }
            Mode::Infer => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut out = vec![0.0; x.len()];
        for bi in 0..n {
            for ch in 0..c {
                let base = (bi * c + ch) * plane;
                let (mu, s) = (mean[ch], inv_std[ch]);
                let (gv, bv) = (g_t.data()[ch], b_t.data()[ch]);
                for i in base..base + plane {
                    out[i] = gv * (x.data()[i] - mu) * s + bv;
                }
            }
        }
        let tensor = Tensor::from_vec(x.shape(), out);
        Ok(self.push(
            tensor,
            Rule::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            },
        ))
    }

    pub fn elu(&mut self, input: TensorId) -> TensorId {
        self.pointwise(input, Activation::Elu)
    }

    pub fn sigmoid(&mut self, input: TensorId) -> TensorId {
        self.pointwise(input, Activation::Sigmoid)
    }

    pub fn pointwise(&mut self, input: TensorId, activation: Activation) -> TensorId {
        let x = self.value(input);
        let out: Vec<f64> = match activation {
            Activation::Elu => x
                .data()
                .iter()
                .map(|&v| if v > 0.0 { v } else { v.exp() - 1.0 })
                .collect(),
            Activation::Sigmoid => x.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        };
        let tensor = Tensor::from_vec(x.shape(), out);
        self.push(tensor, Rule::Pointwise { input, activation })
    }

    /// Inverted dropout: train mode zeroes elements with probability `rate`
    /// and scales survivors by 1/(1−rate); infer mode is the identity.
    pub fn dropout(
        &mut self,
        input: TensorId,
        rate: f64,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<TensorId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::invalid(
                "dropout",
                format!("rate {rate} outside [0, 1)"),
            ));
        }
        let x = self.value(input);
        if mode == Mode::Infer || rate == 0.0 {
            let tensor = Tensor::from_vec(x.shape(), x.data().to_vec());
            return Ok(self.push(
                tensor,
                Rule::Dropout {
                    input,
                    kept: Vec::new(),
                    scale: 1.0,
                },
            ));
        }
        let scale = 1.0 / (1.0 - rate);
        let mut kept = Vec::with_capacity(x.len());
        for _ in 0..x.len() {
            kept.push(rng.gen::<f64>() >= rate);
        }
        let out: Vec<f64> = x
            .data()
            .iter()
            .zip(kept.iter())
            .map(|(&v, &keep)| if keep { v * scale } else { 0.0 })
            .collect();
        let tensor = Tensor::from_vec(x.shape(), out);
        Ok(self.push(tensor, Rule::Dropout { input, kept, scale }))
    }

    /// Channel-wise (spatial) dropout: each (batch, channel) plane is kept
    /// or zeroed as a unit, with inverted scaling like [`Graph::dropout`].
    /// One rng draw per plane.
    pub fn dropout_channels(
        &mut self,
        input: TensorId,
        rate: f64,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<TensorId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::invalid(
                "dropout_channels",
                format!("rate {rate} outside [0, 1)"),
            ));
        }
        let x = self.value(input);
        if mode == Mode::Infer || rate == 0.0 {
            let tensor = Tensor::from_vec(x.shape(), x.data().to_vec());
            return Ok(self.push(
                tensor,
                Rule::Dropout {
                    input,
                    kept: Vec::new(),
                    scale: 1.0,
                },
            ));
        }
        let (n, c, h, w) = x.dims4()?;
        let plane = h * w;
        let scale = 1.0 / (1.0 - rate);
        let mut kept = vec![false; x.len()];
        let mut out = vec![0.0; x.len()];
        for nc in 0..n * c {
            if rng.gen::<f64>() >= rate {
                kept[nc * plane..(nc + 1) * plane].fill(true);
                for i in nc * plane..(nc + 1) * plane {
                    out[i] = x.data()[i] * scale;
                }
            }
        }
        let tensor = Tensor::from_vec(x.shape(), out);
        Ok(self.push(tensor, Rule::Dropout { input, kept, scale }))
    }

    /// Concatenate two NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let ta = self.value(a);
        let tb = self.value(b);
        let (na, ca, ha, wa) = ta.dims4()?;
        let (nb, cb, hb, wb) = tb.dims4()?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(TensorError::shape(
                "concat_channels",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let plane = ha * wa;
        let mut out = Vec::with_capacity((ca + cb) * na * plane);
        for bi in 0..na {
            out.extend_from_slice(&ta.data()[bi * ca * plane..(bi + 1) * ca * plane]);
            out.extend_from_slice(&tb.data()[bi * cb * plane..(bi + 1) * cb * plane]);
        }
        let tensor = Tensor::from_vec(&[na, ca + cb, ha, wa], out);
        Ok(self.push(tensor, Rule::ConcatChannels { a, b, a_channels: ca }))
    }

    /// Elementwise a − b for equal shapes.
    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let ta = self.value(a);
        let tb = self.value(b);
        if ta.shape() != tb.shape() {
            return Err(TensorError::shape(
                "sub",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let out: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data().iter())
            .map(|(x, y)| x - y)
            .collect();
        let tensor = Tensor::from_vec(ta.shape(), out);
        Ok(self.push(tensor, Rule::Sub { a, b }))
    }

    /// Mean squared error over all elements, as a scalar node.
    pub fn mse(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId> {
        let p = self.value(pred);
        let t = self.value(target);
        if p.shape() != t.shape() {
            return Err(TensorError::shape(
                "mse",
                format!("{:?} vs {:?}", p.shape(), t.shape()),
            ));
        }
        let n = p.len() as f64;
        let sum: f64 = p
            .data()
            .iter()
            .zip(t.data().iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(self.push(Tensor::scalar(sum / n), Rule::Mse { pred, target }))
    }

    /// Soft Sørensen–Dice coefficient, averaged over batch and channels,
    /// as a scalar node: (2·Σpg + ε) / (Σp + Σg + ε) with ε = 1e-6.
    pub fn soft_dice(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId> {
        let p = self.value(pred);
        let t = self.value(target);
        if p.shape() != t.shape() {
            return Err(TensorError::shape(
                "soft_dice",
                format!("{:?} vs {:?}", p.shape(), t.shape()),
            ));
        }
        let (n, c, h, w) = p.dims4()?;
        let plane = h * w;
        let mut acc = 0.0;
        for nc in 0..n * c {
            let pd = &p.data()[nc * plane..(nc + 1) * plane];
            let td = &t.data()[nc * plane..(nc + 1) * plane];
            let inter: f64 = pd.iter().zip(td.iter()).map(|(a, b)| a * b).sum();
            let sp: f64 = pd.iter().sum();
            let sg: f64 = td.iter().sum();
            acc += (2.0 * inter + DICE_EPS) / (sp + sg + DICE_EPS);
        }
        let value = acc / (n * c) as f64;
        Ok(self.push(Tensor::scalar(value), Rule::SoftDice { pred, target }))
    }

    /// Σ input·weights as a scalar node; the backward rule is the weight
    /// vector itself, which makes this the scalarizer for gradient checks.
    pub fn weighted_sum(&mut self, input: TensorId, weights: &[f64]) -> Result<TensorId> {
        let x = self.value(input);
        if x.len() != weights.len() {
            return Err(TensorError::shape(
                "weighted_sum",
                format!("{} elements vs {} weights", x.len(), weights.len()),
            ));
        }
        let sum: f64 = x.data().iter().zip(weights.iter()).map(|(a, b)| a * b).sum();
        Ok(self.push(
            Tensor::scalar(sum),
            Rule::WeightedSum {
                input,
                weights: weights.to_vec(),
            },
        ))
    }
}

const DICE_EPS: f64 = 1e-6;

pub(super) fn maxpool_backward(
    graph: &Graph,
    upstream: &[f64],
    input: TensorId,
    argmax: &[u32],
    contribs: &mut Vec<(TensorId, Vec<f64>)>,
) {
    if !graph.wants_grad(input) {
        return;
    }
    let mut grad = vec![0.0; graph.value(input).len()];
    for (o, &src) in argmax.iter().enumerate() {
        grad[src as usize] += upstream[o];
    }
    contribs.push((input, grad));
}

pub(super) fn upsample_backward(
    graph: &Graph,
    upstream: &[f64],
    input: TensorId,
    contribs: &mut Vec<(TensorId, Vec<f64>)>,
) {
    if !graph.wants_grad(input) {
        return;
    }
    let x = graph.value(input);
    let (n, c, h, w) = x.dims4().expect("upsample input rank checked in forward");
    let ow = 2 * w;
    let mut grad = vec![0.0; x.len()];
    for nc in 0..n * c {
        let base = nc * h * w;
        let obase = nc * (2 * h) * ow;
        for y in 0..h {
            for x_ in 0..w {
                let o = obase + (2 * y) * ow + 2 * x_;
                grad[base + y * w + x_] =
                    upstream[o] + upstream[o + 1] + upstream[o + ow] + upstream[o + ow + 1];
            }
        }
    }
    contribs.push((input, grad));
}

#[allow(clippy::too_many_arguments)]
pub(super) fn batchnorm_backward(
    graph: &Graph,
    upstream: &[f64],
    input: TensorId,
    gamma: TensorId,
    beta: TensorId,
    mean: &[f64],
    inv_std: &[f64],
    contribs: &mut Vec<(TensorId, Vec<f64>)>,
) -> Result<()> {
    let x = graph.value(input);
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let m = (n * h * w) as f64;
    let g_data = graph.value(gamma).data();

    // Per-channel reductions Σdy and Σdy·x̂, in batch-major index order.
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for bi in 0..n {
        for ch in 0..c {
            let base = (bi * c + ch) * plane;
            let (mu, s) = (mean[ch], inv_std[ch]);
            for i in base..base + plane {
                let xhat = (x.data()[i] - mu) * s;
                sum_dy[ch] += upstream[i];
                sum_dy_xhat[ch] += upstream[i] * xhat;
            }
        }
    }

    if graph.wants_grad(input) {
        // Training statistics depend on the input, so the mean/variance
        // terms appear in the gradient:
        //   dx = γ·s·(dy − Σdy/m − x̂·Σ(dy·x̂)/m)
        let mut grad = vec![0.0; x.len()];
        for bi in 0..n {
            for ch in 0..c {
                let base = (bi * c + ch) * plane;
                let (mu, s, gv) = (mean[ch], inv_std[ch], g_data[ch]);
                let mean_dy = sum_dy[ch] / m;
                let mean_dy_xhat = sum_dy_xhat[ch] / m;
                for i in base..base + plane {
                    let xhat = (x.data()[i] - mu) * s;
                    grad[i] = gv * s * (upstream[i] - mean_dy - xhat * mean_dy_xhat);
                }
            }
        }
        contribs.push((input, grad));
    }
    if graph.wants_grad(gamma) {
        contribs.push((gamma, sum_dy_xhat));
    }
    if graph.wants_grad(beta) {
        contribs.push((beta, sum_dy));
    }
    Ok(())
}

pub(super) fn pointwise_backward(
    graph: &Graph,
    upstream: &[f64],
    input: TensorId,
    activation: Activation,
    out: &Tensor,
    contribs: &mut Vec<(TensorId, Vec<f64>)>,
) {
    if !graph.wants_grad(input) {
        return;
    }
    let x = graph.value(input);
    let grad: Vec<f64> = match activation {
        Activation::Elu => x
            .data()
            .iter()
            .zip(out.data().iter())
            .zip(upstream.iter())
            .map(|((&xv, &yv), &up)| if xv > 0.0 { up } else { up * (yv + 1.0) })
            .collect(),
        Activation::Sigmoid => out
            .data()
            .iter()
            .zip(upstream.iter())
            .map(|(&yv, &up)| up * yv * (1.0 - yv))
            .collect(),
    };
    contribs.push((input, grad));
}

pub(super) fn dropout_backward(
    graph: &Graph,
    upstream: &[f64],
    input: TensorId,
    kept: &[bool],
    scale: f64,
    contribs: &mut Vec<(TensorId, Vec<f64>)>,
) {
    if !graph.wants_grad(input) {
        return;
    }
    let grad: Vec<f64> = if kept.is_empty() {
        upstream.to_vec()
    } else {
        upstream
            .iter()
            .zip(kept.iter())
            .map(|(&up, &keep)| if keep { up * scale } else { 0.0 })
            .collect()
    };
    contribs.push((input, grad));
}

pub(super) fn concat_backward(
    graph: &Graph,
    upstream: &[f64],
    a: TensorId,
    b: TensorId,
    a_channels: usize,
    contribs: &mut Vec<(TensorId, Vec<f64>)>,
) -> Result<()> {
    let ta = graph.value(a);
    let tb = graph.value(b);
    let (n, _, h, w) = ta.dims4()?;
    let cb = tb.shape()[1];
    let plane = h * w;
    let stride = (a_channels + cb) * plane;
    if graph.wants_grad(a) {
        let mut grad = Vec::with_capacity(ta.len());
        for bi in 0..n {
            grad.extend_from_slice(&upstream[bi * stride..bi * stride + a_channels * plane]);
        }
        contribs.push((a, grad));
    }
    if graph.wants_grad(b) {
        let mut grad = Vec::with_capacity(tb.len());
        for bi in 0..n {
            grad.extend_from_slice(
                &upstream[bi * stride + a_channels * plane..(bi + 1) * stride],
            );
        }
        contribs.push((b, grad));
    }
    Ok(())
}

pub(super) fn sub_backward(
    graph: &Graph,
    upstream: &[f64],
    a: TensorId,
    b: TensorId,
    contribs: &mut Vec<(TensorId, Vec<f64>)>,
) {
    if graph.wants_grad(a) {
        contribs.push((a, upstream.to_vec()));
    }
    if graph.wants_grad(b) {
        contribs.push((b, upstream.iter().map(|v| -v).collect()));
    }
}

pub(super) fn mse_backward(
    graph: &Graph,
    upstream: f64,
    pred: TensorId,
    target: TensorId,
    contribs: &mut Vec<(TensorId, Vec<f64>)>,
) {
    let p = graph.value(pred);
    let t = graph.value(target);
    let scale = 2.0 * upstream / p.len() as f64;
    if graph.wants_grad(pred) {
        let grad: Vec<f64> = p
            .data()
            .iter()
            .zip(t.data().iter())
            .map(|(a, b)| scale * (a - b))
            .collect();
        contribs.push((pred, grad));
    }
    if graph.wants_grad(target) {
        let grad: Vec<f64> = p
            .data()
            .iter()
            .zip(t.data().iter())
            .map(|(a, b)| -scale * (a - b))
            .collect();
        contribs.push((target, grad));
    }
}

pub(super) fn soft_dice_backward(
    graph: &Graph,
    upstream: f64,
    pred: TensorId,
    target: TensorId,
    contribs: &mut Vec<(TensorId, Vec<f64>)>,
) -> Result<()> {
    let p = graph.value(pred);
    let t = graph.value(target);
    let (n, c, h, w) = p.dims4()?;
    let plane = h * w;
    let norm = upstream / (n * c) as f64;
    let want_pred = graph.wants_grad(pred);
    let want_target = graph.wants_grad(target);
    let mut grad_p = if want_pred { vec![0.0; p.len()] } else { vec![] };
    let mut grad_t = if want_target { vec![0.0; t.len()] } else { vec![] };
    for nc in 0..n * c {
        let pd = &p.data()[nc * plane..(nc + 1) * plane];
        let td = &t.data()[nc * plane..(nc + 1) * plane];
        let inter: f64 = pd.iter().zip(td.iter()).map(|(a, b)| a * b).sum();
        let sp: f64 = pd.iter().sum();
        let sg: f64 = td.iter().sum();
        let den = sp + sg + DICE_EPS;
        let num = 2.0 * inter + DICE_EPS;
        if want_pred {
            for i in 0..plane {
                grad_p[nc * plane + i] = norm * (2.0 * td[i] * den - num) / (den * den);
            }
        }
        if want_target {
            for i in 0..plane {
                grad_t[nc * plane + i] = norm * (2.0 * pd[i] * den - num) / (den * den);
            }
        }
    }
    if want_pred {
        contribs.push((pred, grad_p));
    }
    if want_target {
        contribs.push((target, grad_t));
    }
    Ok(())
}

pub(super) fn weighted_sum_backward(
    graph: &Graph,
    upstream: f64,
    input: TensorId,
    weights: &[f64],
    contribs: &mut Vec<(TensorId, Vec<f64>)>,
) {
    if !graph.wants_grad(input) {
        return;
    }
    contribs.push((input, weights.iter().map(|w| w * upstream).collect()));
}

#[cfg(test)]
mod tests {
    use super::super::{Graph, Mode, Tensor};
    use super::BatchNormStats;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn maxpool_picks_window_max() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let y = g.maxpool2x2(x).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
    }

    #[test]
    fn maxpool_rejects_odd_size() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[1, 1, 3, 4]));
        assert!(g.maxpool2x2(x).is_err());
    }

    #[test]
    fn maxpool_tie_break_routes_to_first_cell() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::filled(&[1, 1, 4, 4], 2.5).requires_grad(true));
        let y = g.maxpool2x2(x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 2.5));
        let s = g.weighted_sum(y, &[1.0; 4]).unwrap();
        g.backward(s).unwrap();
        let grad = g.grad(x).unwrap();
        // Full gradient lands on the top-left cell of each 2x2 window.
        let expect = [
            1.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, //
            1.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(grad, &expect);
    }

    #[test]
    fn upsample_block_replicates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let y = g.upsample_nearest2x(x).unwrap();
        let expect = [
            1.0, 1.0, 2.0, 2.0, //
            1.0, 1.0, 2.0, 2.0, //
            3.0, 3.0, 4.0, 4.0, //
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(g.value(y).data(), &expect);
        assert_eq!(g.value(y).shape(), &[1, 1, 4, 4]);
    }

    #[test]
    fn upsample_then_maxpool_is_identity() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..24).map(|i| (i as f64).sin()).collect();
        let x = g.leaf(Tensor::from_vec(&[1, 2, 3, 4], data.clone()));
        let up = g.upsample_nearest2x(x).unwrap();
        let down = g.maxpool2x2(up).unwrap();
        assert_eq!(g.value(down).data(), &data[..]);
    }

    #[test]
    fn batchnorm_normalizes_to_beta_and_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::randn(&[4, 3, 5, 5], 2.3, &mut rng));
        let gamma = g.leaf(Tensor::from_vec(&[3], vec![1.5, -0.5, 2.0]));
        let beta = g.leaf(Tensor::from_vec(&[3], vec![0.3, 0.0, -1.0]));
        let mut stats = BatchNormStats::new(3);
        let y = g.batchnorm(x, gamma, beta, Mode::Train, &mut stats).unwrap();
        let out = g.value(y);
        let plane = 25;
        for ch in 0..3 {
            let mut vals = Vec::new();
            for bi in 0..4 {
                let base = (bi * 3 + ch) * plane;
                vals.extend_from_slice(&out.data()[base..base + plane]);
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64)
                .sqrt();
            let beta_v = [0.3, 0.0, -1.0][ch];
            let gamma_v: f64 = [1.5, -0.5, 2.0][ch];
            assert!((m - beta_v).abs() < 1e-6, "channel {ch} mean {m}");
            assert!((sd - gamma_v.abs()).abs() < 1e-3, "channel {ch} std {sd}");
        }
    }

    #[test]
    fn batchnorm_identity_on_standardized_input() {
        // Zero-mean unit-variance input with gamma=1, beta=0 passes through.
        let n = 512;
        let mut data: Vec<f64> = (0..n).map(|i| (i as f64 / n as f64) * 2.0 - 1.0).collect();
        let m = data.iter().sum::<f64>() / n as f64;
        let sd = (data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
        for v in &mut data {
            *v = (*v - m) / sd;
        }
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2, 1, 16, 16], data.clone()));
        let gamma = g.leaf(Tensor::filled(&[1], 1.0));
        let beta = g.leaf(Tensor::zeros(&[1]));
        let mut stats = BatchNormStats::new(1);
        let y = g.batchnorm(x, gamma, beta, Mode::Train, &mut stats).unwrap();
        for (a, b) in g.value(y).data().iter().zip(data.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_running_stats_momentum() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::filled(&[1, 1, 2, 2], 10.0));
        let gamma = g.leaf(Tensor::filled(&[1], 1.0));
        let beta = g.leaf(Tensor::zeros(&[1]));
        let mut stats = BatchNormStats::new(1);
        g.batchnorm(x, gamma, beta, Mode::Train, &mut stats).unwrap();
        // 0.9 * 0 + 0.1 * 10 for the mean; 0.9 * 1 + 0.1 * 0 for the variance.
        assert!((stats.mean[0] - 1.0).abs() < 1e-12);
        assert!((stats.var[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_channel_mismatch_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[1, 3, 2, 2]));
        let gamma = g.leaf(Tensor::zeros(&[2]));
        let beta = g.leaf(Tensor::zeros(&[3]));
        let mut stats = BatchNormStats::new(3);
        assert!(g.batchnorm(x, gamma, beta, Mode::Train, &mut stats).is_err());
    }

    #[test]
    fn activation_fixed_points() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[3], vec![0.0, -20.0, 0.0]));
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).data()[0], 0.5);
        let e = g.elu(x);
        assert_eq!(g.value(e).data()[0], 0.0);
        // ELU approaches -1 from above for very negative inputs.
        let v = g.value(e).data()[1];
        assert!(v < -0.999999997 && v > -1.0, "elu(-20) = {v}");
    }

    #[test]
    fn dropout_rate_zero_and_infer_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[50], data.clone()));
        let a = g.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(g.value(a).data(), &data[..]);
        let b = g.dropout(x, 0.9, Mode::Infer, &mut rng).unwrap();
        assert_eq!(g.value(b).data(), &data[..]);
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[4]));
        assert!(g.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_survivor_statistics() {
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::filled(&[n], 1.0));
        let y = g.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        let out = g.value(y).data();
        let survivors = out.iter().filter(|&&v| v != 0.0).count();
        let frac = survivors as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "survivor fraction {frac}");
        let mean = out.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "inverted-dropout mean {mean}");
    }

    #[test]
    fn channel_dropout_zeroes_whole_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::filled(&[4, 50, 3, 3], 1.0));
        let y = g.dropout_channels(x, 0.4, Mode::Train, &mut rng).unwrap();
        let out = g.value(y).data();
        let mut survivors = 0;
        for nc in 0..200 {
            let plane = &out[nc * 9..(nc + 1) * 9];
            let first = plane[0];
            assert!(plane.iter().all(|&v| v == first), "plane must be uniform");
            assert!(first == 0.0 || (first - 1.0 / 0.6).abs() < 1e-12);
            if first != 0.0 {
                survivors += 1;
            }
        }
        let frac = survivors as f64 / 200.0;
        assert!((frac - 0.6).abs() < 0.12, "survivor fraction {frac}");
    }

    #[test]
    fn concat_shapes_and_split_roundtrip() {
        let mut g = Graph::new();
        let a_data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| i as f64).collect();
        let b_data: Vec<f64> = (0..2 * 5 * 4 * 4).map(|i| -(i as f64)).collect();
        let a = g.leaf(Tensor::from_vec(&[2, 3, 4, 4], a_data.clone()));
        let b = g.leaf(Tensor::from_vec(&[2, 5, 4, 4], b_data.clone()));
        let y = g.concat_channels(a, b).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 8, 4, 4]);
        // Slicing the concatenation recovers both inputs bit-exactly.
        let out = g.value(y).data();
        let plane = 16;
        for bi in 0..2 {
            let base = bi * 8 * plane;
            assert_eq!(
                &out[base..base + 3 * plane],
                &a_data[bi * 3 * plane..(bi + 1) * 3 * plane]
            );
            assert_eq!(
                &out[base + 3 * plane..base + 8 * plane],
                &b_data[bi * 5 * plane..(bi + 1) * 5 * plane]
            );
        }
    }

    #[test]
    fn concat_spatial_mismatch_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[1, 2, 4, 4]));
        let b = g.leaf(Tensor::zeros(&[1, 2, 4, 5]));
        assert!(g.concat_channels(a, b).is_err());
    }

    #[test]
    fn mse_known_values() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::filled(&[2, 1, 2, 2], 1.0));
        let t = g.leaf(Tensor::zeros(&[2, 1, 2, 2]));
        let same = g.mse(p, p).unwrap();
        assert_eq!(g.value(same).item(), 0.0);
        let one = g.mse(p, t).unwrap();
        assert_eq!(g.value(one).item(), 1.0);
    }

    #[test]
    fn soft_dice_endpoints() {
        let mut g = Graph::new();
        let mask = g.leaf(Tensor::from_vec(
            &[1, 1, 2, 2],
            vec![1.0, 0.0, 1.0, 0.0],
        ));
        let same = g.soft_dice(mask, mask).unwrap();
        assert!((g.value(same).item() - 1.0).abs() < 1e-5);

        let other = g.leaf(Tensor::from_vec(
            &[1, 1, 2, 2],
            vec![0.0, 1.0, 0.0, 1.0],
        ));
        let disjoint = g.soft_dice(mask, other).unwrap();
        assert!(g.value(disjoint).item().abs() < 1e-5);
    }

    #[test]
    fn ops_pure_given_seed() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut g = Graph::new();
            let x = g.leaf(Tensor::randn(&[1, 2, 4, 4], 1.0, &mut rng));
            let d = g.dropout(x, 0.4, Mode::Train, &mut rng).unwrap();
            let s = g.sigmoid(d);
            g.value(s).data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
