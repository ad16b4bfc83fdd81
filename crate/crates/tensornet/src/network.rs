//! Asymmetric encoder–decoder: a deep spatial encoder, a shallower decoder
//! that widens the channel count gradually, and a resize + 1×1 head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f32 = 0.01;
const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Sigmoid,
    Identity,
}

/// Feeds the pre-pool activation of encoder level `encoder` into decoder level `decoder`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipLink {
    pub encoder: usize,
    pub decoder: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// (H, W, channels)
    pub input: [usize; 3],
    /// (H_out, W_out, bands)
    pub output: [usize; 3],
    pub encoder_levels: usize,
    /// Input channels followed by one entry per encoder level.
    pub encoder_channels: Vec<usize>,
    pub decoder_levels: usize,
    /// Bottleneck channels followed by one entry per decoder level.
    pub decoder_channels: Vec<usize>,
    pub skip_map: Vec<SkipLink>,
    pub activation: Activation,
    pub output_activation: Activation,
}

/// Decoder level `d` takes encoder level `decoder_levels − 1 − d`.
pub fn mirrored_skips(decoder_levels: usize) -> Vec<SkipLink> {
    (0..decoder_levels)
        .map(|d| SkipLink {
            encoder: decoder_levels - 1 - d,
            decoder: d,
        })
        .collect()
}

impl NetworkConfig {
    /// 1024×1024×8 → 286×286×299.
    pub fn full() -> Self {
        NetworkConfig {
            input: [1024, 1024, 8],
            output: [286, 286, 299],
            encoder_levels: 5,
            encoder_channels: vec![8, 32, 64, 128, 256, 512],
            decoder_levels: 3,
            decoder_channels: vec![512, 416, 352, 299],
            skip_map: mirrored_skips(3),
            activation: Activation::LeakyRelu,
            output_activation: Activation::Sigmoid,
        }
    }

    /// 64×64×8 → 16×16×32.
    pub fn tiny() -> Self {
        NetworkConfig {
            input: [64, 64, 8],
            output: [16, 16, 32],
            encoder_levels: 4,
            encoder_channels: vec![8, 16, 32, 64, 128],
            decoder_levels: 2,
            decoder_channels: vec![128, 64, 32],
            skip_map: mirrored_skips(2),
            activation: Activation::LeakyRelu,
            output_activation: Activation::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TensorError::Config(m));
        let (e, d) = (self.encoder_levels, self.decoder_levels);
        if self.input.contains(&0) || self.output.contains(&0) {
            return bad(format!("zero dimension in input {:?} or output {:?}", self.input, self.output));
        }
        if self.encoder_channels.len() != e + 1 || self.decoder_channels.len() != d + 1 {
            return bad(format!(
                "channel lists must have levels + 1 entries ({} encoder, {} decoder)",
                e + 1,
                d + 1
            ));
        }
        if self.encoder_channels.contains(&0) || self.decoder_channels.contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if d == 0 || d >= e {
            return bad(format!("need 0 < decoder_levels < encoder_levels, got {d} and {e}"));
        }
        if self.encoder_channels[0] != self.input[2] {
            return bad(format!("encoder starts at {} channels, input has {}", self.encoder_channels[0], self.input[2]));
        }
        if self.decoder_channels[0] != self.encoder_channels[e] {
            return bad(format!(
                "decoder starts at {} channels, bottleneck has {}",
                self.decoder_channels[0], self.encoder_channels[e]
            ));
        }
        if self.decoder_channels[d] != self.output[2] {
            return bad(format!("decoder ends at {} channels, output has {} bands", self.decoder_channels[d], self.output[2]));
        }
        for pair in self.decoder_channels.windows(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if b > 2 * a {
                return bad(format!("decoder step {} → {} exceeds ratio 2", pair[0], pair[1]));
            }
        }
        if (self.input[0] >> e) == 0 || (self.input[1] >> e) == 0 {
            return bad(format!("input {}×{} too small for {e} pooling levels", self.input[0], self.input[1]));
        }
        let mut used = vec![false; d];
        for s in &self.skip_map {
            if s.encoder >= e || s.decoder >= d || used[s.decoder] {
                return bad(format!("invalid or duplicate skip link {s:?}"));
            }
            used[s.decoder] = true;
        }
        if self.activation == Activation::Sigmoid {
            return bad("hidden activation must be leaky_relu or identity".into());
        }
        if self.output_activation == Activation::LeakyRelu {
            return bad("output activation must be sigmoid or identity".into());
        }
        Ok(())
    }

    fn skip_for(&self, decoder: usize) -> Option<usize> {
        self.skip_map.iter().find(|s| s.decoder == decoder).map(|s| s.encoder)
    }

    /// Parameter names and shapes in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut conv = |name: String, f: usize, c: usize, k: usize| {
            out.push((format!("{name}.weight"), vec![f, c, k, k]));
            out.push((format!("{name}.bias"), vec![f]));
        };
        for l in 0..self.encoder_levels {
            let (c, f) = (self.encoder_channels[l], self.encoder_channels[l + 1]);
            conv(format!("enc{l}.conv0"), f, c, KERNEL);
            conv(format!("enc{l}.conv1"), f, f, KERNEL);
        }
        for l in 0..self.decoder_levels {
            let skip = self.skip_for(l).map_or(0, |e| self.encoder_channels[e + 1]);
            let (c, f) = (self.decoder_channels[l] + skip, self.decoder_channels[l + 1]);
            conv(format!("dec{l}.conv0"), f, c, KERNEL);
            conv(format!("dec{l}.conv1"), f, f, KERNEL);
        }
        let last = self.decoder_channels[self.decoder_levels];
        conv("head".into(), self.output[2], last, 1);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    params: Vec<Tensor>,
}

/// Output node and the graph nodes of every parameter (in storage order).
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Var,
    pub params: Vec<Var>,
}

/// Builds a network with He-uniform weights and zero biases.
pub fn build_network<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Result<Network> {
    cfg.validate()?;
    let params = cfg
        .param_shapes()
        .into_iter()
        .map(|(_, shape)| {
            if shape.len() == 1 {
                return Tensor::zeros(&shape);
            }
            let fan_in = shape[1] * shape[2] * shape[3];
            let bound = (6.0 / fan_in as f64).sqrt() as f32;
            let data = (0..shape.iter().product::<usize>()).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::new(shape, data).expect("shape product matches")
        })
        .collect();
    Ok(Network {
        config: cfg.clone(),
        params,
    })
}

impl Network {
    /// Wraps existing parameters, checking them against the config.
    pub fn from_params(cfg: &NetworkConfig, params: Vec<Tensor>) -> Result<Self> {
        cfg.validate()?;
        let shapes = cfg.param_shapes();
        if shapes.len() != params.len() {
            return Err(TensorError::Shape(format!("{} parameter tensors, expected {}", params.len(), shapes.len())));
        }
        for ((name, shape), p) in shapes.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(TensorError::Shape(format!("{name}: {:?}, expected {shape:?}", p.shape())));
            }
        }
        Ok(Network {
            config: cfg.clone(),
            params,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn activate(&self, g: &mut Graph, x: Var, a: Activation) -> Result<Var> {
        match a {
            Activation::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Identity => Ok(x),
        }
    }

    /// Records the forward pass of a `[N, C, H, W]` input on `g`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Forward> {
        let params: Vec<Var> = self.params.iter().map(|p| g.param(p.clone())).collect();
        let output = self.forward_with_params(g, x, &params)?;
        Ok(Forward { output, params })
    }

    /// Forward pass using caller-owned parameter nodes (storage order, shapes as configured).
    pub fn forward_with_params(&self, g: &mut Graph, x: Var, params: &[Var]) -> Result<Var> {
        let cfg = &self.config;
        let (_, c, h, w) = g.value(x).dims4()?;
        if [h, w, c] != cfg.input {
            return Err(TensorError::Shape(format!(
                "input {:?} does not match configured (H, W, C) {:?}",
                g.value(x).shape(),
                cfg.input
            )));
        }
        let shapes = cfg.param_shapes();
        if params.len() != shapes.len() {
            return Err(TensorError::Shape(format!("{} parameter nodes, expected {}", params.len(), shapes.len())));
        }
        for ((name, shape), &p) in shapes.iter().zip(params) {
            if g.value(p).shape() != shape.as_slice() {
                return Err(TensorError::Shape(format!("{name}: {:?}, expected {shape:?}", g.value(p).shape())));
            }
        }
        let mut next = params.iter().copied();
        let mut conv = |g: &mut Graph, x: Var| -> Result<Var> {
            let k = next.next().expect("parameter count checked at build");
            let b = next.next().expect("parameter count checked at build");
            g.conv2d(x, k, b)
        };

        let mut skips = Vec::with_capacity(cfg.encoder_levels);
        let mut cur = x;
        for _ in 0..cfg.encoder_levels {
            cur = conv(g, cur)?;
            cur = self.activate(g, cur, cfg.activation)?;
            cur = conv(g, cur)?;
            cur = self.activate(g, cur, cfg.activation)?;
            skips.push(cur);
            cur = g.maxpool2(cur)?;
        }
        for l in 0..cfg.decoder_levels {
            let (_, _, ch, cw) = g.value(cur).dims4()?;
            cur = g.resize(cur, 2 * ch, 2 * cw)?;
            if let Some(e) = cfg.skip_for(l) {
                let s = g.resize(skips[e], 2 * ch, 2 * cw)?;
                cur = g.concat(cur, s)?;
            }
            cur = conv(g, cur)?;
            cur = self.activate(g, cur, cfg.activation)?;
            cur = conv(g, cur)?;
            cur = self.activate(g, cur, cfg.activation)?;
        }
        cur = g.resize(cur, cfg.output[0], cfg.output[1])?;
        cur = conv(g, cur)?;
        self.activate(g, cur, cfg.output_activation)
    }

    /// Forward pass without keeping the graph.
    pub fn predict(&self, input: Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(input);
        let f = self.forward(&mut g, x)?;
        Ok(g.value(f.output).clone())
    }
}
