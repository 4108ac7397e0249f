//! U-Net builder and forward pass.
//!
//! The network is an encoder/decoder with skip connections. Each level runs
//! [conv3×3 → batchnorm → ELU] twice; encoder levels end with channel
//! dropout and a 2×2 maxpool, decoder levels start with nearest-neighbor
//! upsampling and a skip concatenation and end with channel dropout. The
//! skip tensor is taken before pooling, after dropout. A 1×1 convolution
//! plus sigmoid maps the final features to the two output channels
//! (foreground and background heatmaps). Channel counts double per encoder
//! level from `base_filters` up to `base_filters·2^depth` in the bottleneck.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{
    BatchNormStats, Graph, Mode, Padding, Tensor, TensorError, TensorId,
};

#[derive(Debug, thiserror::Error)]
pub enum UNetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Architecture hyperparameters. Spatial sizes must divide by `2^depth`
/// because every encoder level halves them once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_filters: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input_width: usize,
    pub input_height: usize,
    /// Per-level channel-dropout rates, shallow to deep; the decoder
    /// mirrors them. Empty means the default linear ramp 0.3 → 0.5.
    pub dropout_schedule: Vec<f64>,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            depth: 4,
            base_filters: 16,
            in_channels: 3,
            out_channels: 2,
            input_width: 512,
            input_height: 288,
            dropout_schedule: Vec::new(),
        }
    }
}

impl UNetConfig {
    /// The documented ramp: 0.3 at the shallowest block rising linearly to
    /// 0.5 at the block next to the bottleneck.
    pub fn default_dropout_schedule(depth: usize) -> Vec<f64> {
        if depth <= 1 {
            return vec![0.3; depth];
        }
        (0..depth)
            .map(|i| 0.3 + 0.2 * i as f64 / (depth - 1) as f64)
            .collect()
    }

    /// The schedule actually used: the explicit one, or the default ramp.
    pub fn dropout_rates(&self) -> Vec<f64> {
        if self.dropout_schedule.is_empty() {
            Self::default_dropout_schedule(self.depth)
        } else {
            self.dropout_schedule.clone()
        }
    }

    pub fn validate(&self) -> Result<(), UNetError> {
        if self.depth == 0 {
            return Err(UNetError::Config("depth must be at least 1".into()));
        }
        if self.base_filters == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(UNetError::Config("channel counts must be positive".into()));
        }
        let div = 1usize << self.depth;
        if self.input_width % div != 0 || self.input_height % div != 0 {
            return Err(UNetError::Config(format!(
                "input {}x{} must be divisible by 2^depth = {div}",
                self.input_width, self.input_height
            )));
        }
        let rates = self.dropout_rates();
        if rates.len() != self.depth {
            return Err(UNetError::Config(format!(
                "dropout schedule has {} rates for depth {}",
                rates.len(),
                self.depth
            )));
        }
        for &r in &rates {
            if !(0.0..1.0).contains(&r) {
                return Err(UNetError::Config(format!("dropout rate {r} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Encoder output channels per level, shallow to deep.
    fn level_channels(&self) -> Vec<usize> {
        (0..self.depth).map(|i| self.base_filters << i).collect()
    }

    fn bottleneck_channels(&self) -> usize {
        self.base_filters << self.depth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    /// He-normal weights (std = √(2 / fan_in), suiting ELU), zero bias.
    fn he_init(out_c: usize, in_c: usize, k: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (in_c * k * k) as f64).sqrt();
        ConvParams {
            weights: Tensor::randn(&[out_c, in_c, k, k], std, rng),
            bias: Tensor::zeros(&[out_c]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: BatchNormStats,
}

impl BnParams {
    fn new(channels: usize) -> Self {
        BnParams {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            stats: BatchNormStats::new(channels),
        }
    }
}

/// The [conv→BN→ELU]×2 unit shared by every level.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBnBlock {
    pub conv1: ConvParams,
    pub bn1: BnParams,
    pub conv2: ConvParams,
    pub bn2: BnParams,
}

impl ConvBnBlock {
    fn new(in_c: usize, out_c: usize, rng: &mut impl Rng) -> Self {
        ConvBnBlock {
            conv1: ConvParams::he_init(out_c, in_c, 3, rng),
            bn1: BnParams::new(out_c),
            conv2: ConvParams::he_init(out_c, out_c, 3, rng),
            bn2: BnParams::new(out_c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNetModel {
    config: UNetConfig,
    /// Shallow to deep.
    encoder: Vec<ConvBnBlock>,
    bottleneck: ConvBnBlock,
    /// Deep to shallow: `decoder[0]` consumes the bottleneck.
    decoder: Vec<ConvBnBlock>,
    head: ConvParams,
}

/// A training forward pass: the graph (to extend with a loss and run
/// backward on) plus the ids of the output node and every parameter leaf.
pub struct ForwardPass {
    pub graph: Graph,
    pub output: TensorId,
    pub param_ids: Vec<(String, TensorId)>,
}

impl UNetModel {
    /// Builds a model with freshly initialized parameters. Construction
    /// order fixes the rng stream, so equal seeds give equal models.
    pub fn build(config: UNetConfig, rng: &mut impl Rng) -> Result<Self, UNetError> {
        config.validate()?;
        let levels = config.level_channels();
        let mut encoder = Vec::with_capacity(config.depth);
        let mut in_c = config.in_channels;
        for &out_c in &levels {
            encoder.push(ConvBnBlock::new(in_c, out_c, rng));
            in_c = out_c;
        }
        let bottleneck = ConvBnBlock::new(in_c, config.bottleneck_channels(), rng);
        let mut decoder = Vec::with_capacity(config.depth);
        let mut carried = config.bottleneck_channels();
        for &skip_c in levels.iter().rev() {
            // Upsampled carry concatenated with the skip, reduced to the
            // skip's own width.
            decoder.push(ConvBnBlock::new(carried + skip_c, skip_c, rng));
            carried = skip_c;
        }
        let head = ConvParams::he_init(config.out_channels, carried, 1, rng);
        Ok(UNetModel {
            config,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// Trainable tensors in a fixed order (BN running stats excluded).
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        fn push_block<'a>(prefix: &str, b: &'a ConvBnBlock, out: &mut Vec<(String, &'a Tensor)>) {
            out.push((format!("{prefix}.conv1.weight"), &b.conv1.weights));
            out.push((format!("{prefix}.conv1.bias"), &b.conv1.bias));
            out.push((format!("{prefix}.bn1.gamma"), &b.bn1.gamma));
            out.push((format!("{prefix}.bn1.beta"), &b.bn1.beta));
            out.push((format!("{prefix}.conv2.weight"), &b.conv2.weights));
            out.push((format!("{prefix}.conv2.bias"), &b.conv2.bias));
            out.push((format!("{prefix}.bn2.gamma"), &b.bn2.gamma));
            out.push((format!("{prefix}.bn2.beta"), &b.bn2.beta));
        }
        for (i, b) in self.encoder.iter().enumerate() {
            push_block(&format!("enc{i}"), b, &mut out);
        }
        push_block("bottleneck", &self.bottleneck, &mut out);
        for (i, b) in self.decoder.iter().enumerate() {
            push_block(&format!("dec{i}"), b, &mut out);
        }
        out.push(("head.weight".into(), &self.head.weights));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    /// Mutable view of the same tensors in the same order.
    pub fn named_parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        fn push_block<'a>(
            prefix: &str,
            b: &'a mut ConvBnBlock,
            out: &mut Vec<(String, &'a mut Tensor)>,
        ) {
            out.push((format!("{prefix}.conv1.weight"), &mut b.conv1.weights));
            out.push((format!("{prefix}.conv1.bias"), &mut b.conv1.bias));
            out.push((format!("{prefix}.bn1.gamma"), &mut b.bn1.gamma));
            out.push((format!("{prefix}.bn1.beta"), &mut b.bn1.beta));
            out.push((format!("{prefix}.conv2.weight"), &mut b.conv2.weights));
            out.push((format!("{prefix}.conv2.bias"), &mut b.conv2.bias));
            out.push((format!("{prefix}.bn2.gamma"), &mut b.bn2.gamma));
            out.push((format!("{prefix}.bn2.beta"), &mut b.bn2.beta));
        }
        for (i, b) in self.encoder.iter_mut().enumerate() {
            push_block(&format!("enc{i}"), b, &mut out);
        }
        push_block("bottleneck", &mut self.bottleneck, &mut out);
        for (i, b) in self.decoder.iter_mut().enumerate() {
            push_block(&format!("dec{i}"), b, &mut out);
        }
        out.push(("head.weight".into(), &mut self.head.weights));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }

    /// Non-trainable state: the BN running statistics, as (name, values).
    pub fn named_buffers(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        let push_block = |prefix: String, b: &ConvBnBlock, out: &mut Vec<(String, Vec<f64>)>| {
            out.push((format!("{prefix}.bn1.running_mean"), b.bn1.stats.mean.clone()));
            out.push((format!("{prefix}.bn1.running_var"), b.bn1.stats.var.clone()));
            out.push((format!("{prefix}.bn2.running_mean"), b.bn2.stats.mean.clone()));
            out.push((format!("{prefix}.bn2.running_var"), b.bn2.stats.var.clone()));
        };
        for (i, b) in self.encoder.iter().enumerate() {
            push_block(format!("enc{i}"), b, &mut out);
        }
        push_block("bottleneck".into(), &self.bottleneck, &mut out);
        for (i, b) in self.decoder.iter().enumerate() {
            push_block(format!("dec{i}"), b, &mut out);
        }
        out
    }

    /// Restores one buffer by name; length must match.
    pub fn set_buffer(&mut self, name: &str, values: &[f64]) -> Result<(), UNetError> {
        let (prefix, field) = name
            .rsplit_once('.')
            .ok_or_else(|| UNetError::Config(format!("malformed buffer name {name:?}")))?;
        let (block_name, bn_name) = prefix
            .rsplit_once('.')
            .ok_or_else(|| UNetError::Config(format!("malformed buffer name {name:?}")))?;
        let block: &mut ConvBnBlock = if block_name == "bottleneck" {
            &mut self.bottleneck
        } else if let Some(i) = block_name.strip_prefix("enc") {
            let i: usize = i
                .parse()
                .map_err(|_| UNetError::Config(format!("bad block in {name:?}")))?;
            self.encoder
                .get_mut(i)
                .ok_or_else(|| UNetError::Config(format!("no block for {name:?}")))?
        } else if let Some(i) = block_name.strip_prefix("dec") {
            let i: usize = i
                .parse()
                .map_err(|_| UNetError::Config(format!("bad block in {name:?}")))?;
            self.decoder
                .get_mut(i)
                .ok_or_else(|| UNetError::Config(format!("no block for {name:?}")))?
        } else {
            return Err(UNetError::Config(format!("unknown block in {name:?}")));
        };
        let bn = match bn_name {
            "bn1" => &mut block.bn1,
            "bn2" => &mut block.bn2,
            _ => return Err(UNetError::Config(format!("unknown batchnorm in {name:?}"))),
        };
        let slot = match field {
            "running_mean" => &mut bn.stats.mean,
            "running_var" => &mut bn.stats.var,
            _ => return Err(UNetError::Config(format!("unknown buffer field {name:?}"))),
        };
        if slot.len() != values.len() {
            return Err(UNetError::Config(format!(
                "buffer {name:?} expects {} values, got {}",
                slot.len(),
                values.len()
            )));
        }
        slot.copy_from_slice(values);
        Ok(())
    }

    /// Trainable element count.
    pub fn param_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_input(&self, batch: &Tensor) -> Result<(), UNetError> {
        let (_, c, h, w) = batch.dims4().map_err(UNetError::Tensor)?;
        if c != self.config.in_channels
            || h != self.config.input_height
            || w != self.config.input_width
        {
            return Err(UNetError::Config(format!(
                "input {c}x{h}x{w} does not match configured {}x{}x{}",
                self.config.in_channels, self.config.input_height, self.config.input_width
            )));
        }
        Ok(())
    }

    /// Training forward: builds a graph with every parameter as a
    /// gradient-tracked leaf, batchnorm in train mode (running stats
    /// updated in place), dropout masks drawn from `rng`.
    pub fn forward_train(
        &mut self,
        batch: &Tensor,
        rng: &mut impl Rng,
    ) -> Result<ForwardPass, UNetError> {
        self.check_input(batch)?;
        self.forward_impl(batch, Mode::Train, rng)
    }

    /// Inference forward: running statistics, no dropout, no gradients.
    pub fn infer(&self, batch: &Tensor) -> Result<Tensor, UNetError> {
        self.check_input(batch)?;
        // forward_impl takes &mut self only because train mode writes the
        // running stats; infer mode never touches them and never draws from
        // the rng, so a clone keeps this method &self at the cost of one
        // parameter copy per call.
        let mut no_rng = NoDrawRng;
        let pass = self.clone().forward_impl(batch, Mode::Infer, &mut no_rng)?;
        Ok(pass.graph.value(pass.output).clone())
    }

    fn forward_impl(
        &mut self,
        batch: &Tensor,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<ForwardPass, UNetError> {
        let train = mode == Mode::Train;
        let mut g = Graph::new();
        let mut param_ids: Vec<(String, TensorId)> = Vec::new();
        let x = g.leaf(batch.clone());
        let rates = self.config.dropout_rates();

        // Leaf insertion helper: parameters track gradients only in train.
        fn leaf(
            g: &mut Graph,
            ids: &mut Vec<(String, TensorId)>,
            name: String,
            t: &Tensor,
            train: bool,
        ) -> TensorId {
            let id = g.leaf(t.clone().requires_grad(train));
            ids.push((name, id));
            id
        }

        fn block(
            g: &mut Graph,
            ids: &mut Vec<(String, TensorId)>,
            prefix: &str,
            b: &mut ConvBnBlock,
            x: TensorId,
            mode: Mode,
            train: bool,
        ) -> Result<TensorId, UNetError> {
            let w1 = leaf(g, ids, format!("{prefix}.conv1.weight"), &b.conv1.weights, train);
            let b1 = leaf(g, ids, format!("{prefix}.conv1.bias"), &b.conv1.bias, train);
            let g1 = leaf(g, ids, format!("{prefix}.bn1.gamma"), &b.bn1.gamma, train);
            let be1 = leaf(g, ids, format!("{prefix}.bn1.beta"), &b.bn1.beta, train);
            let c1 = g.conv2d(x, w1, b1, Padding::Same)?;
            let n1 = g.batchnorm(c1, g1, be1, mode, &mut b.bn1.stats)?;
            let a1 = g.elu(n1);

            let w2 = leaf(g, ids, format!("{prefix}.conv2.weight"), &b.conv2.weights, train);
            let b2 = leaf(g, ids, format!("{prefix}.conv2.bias"), &b.conv2.bias, train);
            let g2 = leaf(g, ids, format!("{prefix}.bn2.gamma"), &b.bn2.gamma, train);
            let be2 = leaf(g, ids, format!("{prefix}.bn2.beta"), &b.bn2.beta, train);
            let c2 = g.conv2d(a1, w2, b2, Padding::Same)?;
            let n2 = g.batchnorm(c2, g2, be2, mode, &mut b.bn2.stats)?;
            Ok(g.elu(n2))
        }

        // Encoder: keep each level's dropout output as the skip tensor.
        let mut skips: Vec<TensorId> = Vec::with_capacity(self.config.depth);
        let mut cur = x;
        for (i, enc) in self.encoder.iter_mut().enumerate() {
            let features = block(&mut g, &mut param_ids, &format!("enc{i}"), enc, cur, mode, train)?;
            let dropped = g.dropout_channels(features, rates[i], mode, rng)?;
            skips.push(dropped);
            cur = g.maxpool2x2(dropped)?;
        }

        cur = block(
            &mut g,
            &mut param_ids,
            "bottleneck",
            &mut self.bottleneck,
            cur,
            mode,
            train,
        )?;

        // Decoder mirrors the schedule: decoder[0] (deepest) uses the last rate.
        for (j, dec) in self.decoder.iter_mut().enumerate() {
            let level = self.config.depth - 1 - j;
            let up = g.upsample_nearest2x(cur)?;
            let joined = g.concat_channels(up, skips[level])?;
            let features = block(
                &mut g,
                &mut param_ids,
                &format!("dec{j}"),
                dec,
                joined,
                mode,
                train,
            )?;
            cur = g.dropout_channels(features, rates[level], mode, rng)?;
        }

        let hw = leaf(&mut g, &mut param_ids, "head.weight".into(), &self.head.weights, train);
        let hb = leaf(&mut g, &mut param_ids, "head.bias".into(), &self.head.bias, train);
        let logits = g.conv2d(cur, hw, hb, Padding::Same)?;
        let output = g.sigmoid(logits);

        Ok(ForwardPass {
            graph: g,
            output,
            param_ids,
        })
    }
}

/// Rng stand-in for inference paths, where no draw may ever happen.
struct NoDrawRng;

impl rand::RngCore for NoDrawRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("inference must not consume randomness")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("inference must not consume randomness")
    }
    fn fill_bytes(&mut self, _dest: &mut [u8]) {
        unreachable!("inference must not consume randomness")
    }
    fn try_fill_bytes(&mut self, _dest: &mut [u8]) -> Result<(), rand::Error> {
        unreachable!("inference must not consume randomness")
    }
}

/// End-to-end gradient check on a tiny network (depth 1, base 2, 16×16,
/// single input channel): analytic gradients of the full training loss
/// (MSE − soft Dice) against central finite differences over every
/// parameter. Returns the worst relative error.
pub fn gradient_check_tiny(seed: u64) -> f64 {
    use crate::tensor::gradcheck::{rel_error, FD_EPS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let config = UNetConfig {
        depth: 1,
        base_filters: 2,
        in_channels: 1,
        out_channels: 2,
        input_width: 16,
        input_height: 16,
        dropout_schedule: vec![0.3],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = UNetModel::build(config, &mut rng).unwrap();
    let batch = Tensor::randn(&[1, 1, 16, 16], 1.0, &mut rng);
    // A plausible two-channel target: foreground in [0,1], background complement.
    let fg: Vec<f64> = (0..256)
        .map(|_| {
            let v: f64 = rng.gen();
            v
        })
        .collect();
    let mut target_data = fg.clone();
    target_data.extend(fg.iter().map(|v| 1.0 - v));
    let target = Tensor::from_vec(&[1, 2, 16, 16], target_data);
    let mask_seed = seed.wrapping_mul(0x51_7c_c1).wrapping_add(3);

    let loss_of = |model: &mut UNetModel| -> f64 {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let mut pass = model.forward_train(&batch, &mut mask_rng).unwrap();
        let t = pass.graph.leaf(target.clone());
        let m = pass.graph.mse(pass.output, t).unwrap();
        let d = pass.graph.soft_dice(pass.output, t).unwrap();
        let l = pass.graph.sub(m, d).unwrap();
        pass.graph.value(l).item()
    };

    // Analytic pass.
    let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let mut pass = model.forward_train(&batch, &mut mask_rng).unwrap();
    let t = pass.graph.leaf(target.clone());
    let m = pass.graph.mse(pass.output, t).unwrap();
    let d = pass.graph.soft_dice(pass.output, t).unwrap();
    let l = pass.graph.sub(m, d).unwrap();
    pass.graph.backward(l).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = pass
        .param_ids
        .iter()
        .map(|(name, id)| (name.clone(), pass.graph.grad(*id).unwrap().to_vec()))
        .collect();
    drop(pass);

    let mut worst = 0.0f64;
    for (name, grads) in &analytic {
        for i in 0..grads.len() {
            let orig = {
                let mut params = model.named_parameters_mut();
                let (_, tensor) = params
                    .iter_mut()
                    .find(|(n, _)| n == name)
                    .expect("parameter name from forward exists on model");
                let orig = tensor.data()[i];
                tensor.data_mut()[i] = orig + FD_EPS;
                orig
            };
            let hi = loss_of(&mut model);
            {
                let mut params = model.named_parameters_mut();
                let (_, tensor) = params.iter_mut().find(|(n, _)| n == name).unwrap();
                tensor.data_mut()[i] = orig - FD_EPS;
            }
            let lo = loss_of(&mut model);
            {
                let mut params = model.named_parameters_mut();
                let (_, tensor) = params.iter_mut().find(|(n, _)| n == name).unwrap();
                tensor.data_mut()[i] = orig;
            }
            let fd = (hi - lo) / (2.0 * FD_EPS);
            worst = worst.max(rel_error(grads[i], fd));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Closed-form parameter count, written independently of the builder:
    /// walk the channel progression and add conv and BN terms per block.
    fn closed_form_count(cfg: &UNetConfig) -> usize {
        let conv = |in_c: usize, out_c: usize, k: usize| in_c * out_c * k * k + out_c;
        let bn = |c: usize| 2 * c;
        let block = |in_c: usize, out_c: usize| {
            conv(in_c, out_c, 3) + bn(out_c) + conv(out_c, out_c, 3) + bn(out_c)
        };
        let mut total = 0;
        let mut in_c = cfg.in_channels;
        let mut enc_out = Vec::new();
        for i in 0..cfg.depth {
            let out_c = cfg.base_filters << i;
            total += block(in_c, out_c);
            enc_out.push(out_c);
            in_c = out_c;
        }
        let bott = cfg.base_filters << cfg.depth;
        total += block(in_c, bott);
        let mut carried = bott;
        for &skip in enc_out.iter().rev() {
            total += block(carried + skip, skip);
            carried = skip;
        }
        total + conv(carried, cfg.out_channels, 1)
    }

    #[test]
    fn default_config_has_expected_parameter_count() {
        let cfg = UNetConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = UNetModel::build(cfg.clone(), &mut rng).unwrap();
        assert_eq!(closed_form_count(&cfg), 1_965_586);
        assert_eq!(model.param_count(), 1_965_586);
    }

    #[test]
    fn hand_counted_minimal_config() {
        // depth 1, base 1, in 1, out 1:
        //   enc:  conv 1→1 (10) + bn (2) + conv 1→1 (10) + bn (2) = 24
        //   bott: conv 1→2 (20) + bn (4) + conv 2→2 (38) + bn (4) = 66
        //   dec:  conv 3→1 (28) + bn (2) + conv 1→1 (10) + bn (2) = 42
        //   head: 1×1 conv 1→1 = 2
        let cfg = UNetConfig {
            depth: 1,
            base_filters: 1,
            in_channels: 1,
            out_channels: 1,
            input_width: 16,
            input_height: 16,
            dropout_schedule: vec![0.3],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = UNetModel::build(cfg, &mut rng).unwrap();
        assert_eq!(model.param_count(), 134);
    }

    #[test]
    fn doubling_base_filters_roughly_quadruples_params() {
        let small = UNetConfig::default();
        let big = UNetConfig {
            base_filters: 32,
            ..UNetConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = UNetModel::build(small, &mut rng).unwrap().param_count();
        let b = UNetModel::build(big, &mut rng).unwrap().param_count();
        let ratio = b as f64 / a as f64;
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn dropout_schedule_ramp() {
        let r = UNetConfig::default_dropout_schedule(4);
        let expect = [0.3, 0.3 + 0.2 / 3.0, 0.3 + 0.4 / 3.0, 0.5];
        for (a, b) in r.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(UNetConfig::default_dropout_schedule(1), vec![0.3]);
    }

    #[test]
    fn rejects_indivisible_input() {
        let cfg = UNetConfig {
            input_width: 100,
            input_height: 90,
            ..UNetConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = UNetModel::build(cfg, &mut rng).unwrap_err();
        assert!(err.to_string().contains("divisible by 2^depth = 16"), "{err}");
    }

    #[test]
    fn toy_structure_counts() {
        let cfg = UNetConfig {
            depth: 1,
            base_filters: 4,
            in_channels: 3,
            out_channels: 2,
            input_width: 16,
            input_height: 16,
            dropout_schedule: vec![0.3],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = UNetModel::build(cfg, &mut rng).unwrap();
        let names: Vec<String> = model
            .named_parameters()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        let convs = names.iter().filter(|n| n.ends_with(".weight")).count();
        // 2 encoder + 2 bottleneck + 2 decoder + 1 head.
        assert_eq!(convs, 7);
        assert!(names.contains(&"enc0.conv1.weight".to_string()));
        assert!(names.contains(&"bottleneck.conv2.bias".to_string()));
        assert!(names.contains(&"dec0.bn2.beta".to_string()));
        assert!(names.contains(&"head.weight".to_string()));
    }

    #[test]
    fn same_seed_builds_identical_models() {
        let cfg = UNetConfig {
            depth: 2,
            base_filters: 4,
            input_width: 32,
            input_height: 32,
            ..UNetConfig::default()
        };
        let a = UNetModel::build(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = UNetModel::build(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let c = UNetModel::build(cfg, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_ne!(a, c);
    }

    fn small_model(seed: u64) -> (UNetModel, Tensor) {
        let cfg = UNetConfig {
            depth: 2,
            base_filters: 4,
            in_channels: 3,
            out_channels: 2,
            input_width: 32,
            input_height: 32,
            ..UNetConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = UNetModel::build(cfg, &mut rng).unwrap();
        let batch = Tensor::randn(&[2, 3, 32, 32], 1.0, &mut rng);
        (model, batch)
    }

    #[test]
    fn output_shape_and_range() {
        let (model, batch) = small_model(1);
        let out = model.infer(&batch).unwrap();
        assert_eq!(out.shape(), &[2, 2, 32, 32]);
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn infer_is_deterministic() {
        let (model, batch) = small_model(2);
        let a = model.infer(&batch).unwrap();
        let b = model.infer(&batch).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn forward_rejects_wrong_input_size() {
        let (mut model, _) = small_model(3);
        let bad = Tensor::zeros(&[1, 3, 16, 16]);
        assert!(model.infer(&bad).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(model.forward_train(&bad, &mut rng).is_err());
    }

    #[test]
    fn untrained_foreground_mean_not_saturated() {
        for seed in 0..10 {
            let (model, batch) = small_model(seed);
            let out = model.infer(&batch).unwrap();
            // Channel 0 of sample 0.
            let plane = 32 * 32;
            let mean: f64 = out.data()[..plane].iter().sum::<f64>() / plane as f64;
            assert!(
                mean > 0.05 && mean < 0.95,
                "seed {seed}: foreground mean {mean}"
            );
        }
    }

    #[test]
    fn train_forward_updates_running_stats() {
        let (mut model, batch) = small_model(4);
        let before = model.named_buffers();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        model.forward_train(&batch, &mut rng).unwrap();
        let after = model.named_buffers();
        assert_ne!(before, after, "train mode must move the running stats");
        // Inference must not.
        let frozen = model.named_buffers();
        model.infer(&batch).unwrap();
        assert_eq!(frozen, model.named_buffers());
    }

    #[test]
    fn buffer_round_trip_by_name() {
        let (mut model, _) = small_model(6);
        let buffers = model.named_buffers();
        for (name, values) in &buffers {
            let tweaked: Vec<f64> = values.iter().map(|v| v + 0.5).collect();
            model.set_buffer(name, &tweaked).unwrap();
        }
        for ((_, before), (_, after)) in buffers.iter().zip(model.named_buffers().iter()) {
            for (b, a) in before.iter().zip(after.iter()) {
                assert!((a - b - 0.5).abs() < 1e-12);
            }
        }
        assert!(model.set_buffer("enc9.bn1.running_mean", &[0.0]).is_err());
        assert!(model.set_buffer("enc0.bn1.nonsense", &[0.0]).is_err());
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let err = gradient_check_tiny(1);
        assert!(err < 1e-3, "worst relative error {err}");
    }

    #[test]
    fn sgd_step_decreases_loss() {
        let mut successes = 0;
        for seed in 0..20 {
            let cfg = UNetConfig {
                depth: 1,
                base_filters: 2,
                in_channels: 1,
                out_channels: 2,
                input_width: 16,
                input_height: 16,
                dropout_schedule: vec![0.3],
            };
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let mut model = UNetModel::build(cfg, &mut rng).unwrap();
            let batch = Tensor::randn(&[1, 1, 16, 16], 1.0, &mut rng);
            let fg: Vec<f64> = (0..256).map(|_| rng.gen::<f64>()).collect();
            let mut target_data = fg.clone();
            target_data.extend(fg.iter().map(|v| 1.0 - v));
            let target = Tensor::from_vec(&[1, 2, 16, 16], target_data);

            let loss_with = |model: &mut UNetModel, mask_seed: u64| {
                let mut mrng = ChaCha8Rng::seed_from_u64(mask_seed);
                let mut pass = model.forward_train(&batch, &mut mrng).unwrap();
                let t = pass.graph.leaf(target.clone());
                let m = pass.graph.mse(pass.output, t).unwrap();
                let d = pass.graph.soft_dice(pass.output, t).unwrap();
                let l = pass.graph.sub(m, d).unwrap();
                (pass, l)
            };

            let (mut pass, l) = loss_with(&mut model, seed);
            let before = pass.graph.value(l).item();
            pass.graph.backward(l).unwrap();
            let grads: Vec<(String, Vec<f64>)> = pass
                .param_ids
                .iter()
                .map(|(n, id)| (n.clone(), pass.graph.grad(*id).unwrap().to_vec()))
                .collect();
            drop(pass);
            for (name, grad) in &grads {
                let mut params = model.named_parameters_mut();
                let (_, tensor) = params.iter_mut().find(|(n, _)| n == name).unwrap();
                for (p, g) in tensor.data_mut().iter_mut().zip(grad.iter()) {
                    *p -= 1e-3 * g;
                }
            }
            let (pass2, l2) = loss_with(&mut model, seed);
            let after = pass2.graph.value(l2).item();
            if after < before {
                successes += 1;
            }
        }
        assert!(successes >= 19, "only {successes}/20 seeds improved");
    }

    #[test]
    fn spatial_size_preserved_for_other_divisible_inputs() {
        let cfg = UNetConfig {
            depth: 3,
            base_filters: 2,
            in_channels: 3,
            out_channels: 2,
            input_width: 40,
            input_height: 24,
            ..UNetConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = UNetModel::build(cfg, &mut rng).unwrap();
        let batch = Tensor::randn(&[1, 3, 24, 40], 0.5, &mut rng);
        let out = model.infer(&batch).unwrap();
        assert_eq!(out.shape(), &[1, 2, 24, 40]);
    }
}
