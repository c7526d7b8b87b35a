//! 1D U-Net for single-channel segments, conditioned on the noise level.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};
use crate::nn::{Init, ParamStore, Real};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub base_width: usize,
    pub channel_mults: Vec<usize>,
    pub res_blocks: usize,
    /// Levels (0 = full resolution) that get self-attention after each block.
    pub attention_levels: Vec<usize>,
    pub emb_width: usize,
    pub groups: usize,
    pub heads: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl UNetConfig {
    /// Base 64, multipliers (1, 2, 4), two blocks per level, attention at the
    /// coarsest level (length 80 for 320-sample input).
    pub fn paper() -> Self {
        Self {
            base_width: 64,
            channel_mults: vec![1, 2, 4],
            res_blocks: 2,
            attention_levels: vec![2],
            emb_width: 128,
            groups: 8,
            heads: 1,
        }
    }

    /// Small enough to train a few thousand iterations on one CPU core.
    pub fn desk() -> Self {
        Self {
            base_width: 24,
            channel_mults: vec![1, 2, 2],
            res_blocks: 1,
            attention_levels: vec![2],
            emb_width: 64,
            groups: 4,
            heads: 1,
        }
    }

    /// For gradient checks and fast tests.
    pub fn tiny() -> Self {
        Self {
            base_width: 8,
            channel_mults: vec![1, 2],
            res_blocks: 1,
            attention_levels: vec![1],
            emb_width: 8,
            groups: 2,
            heads: 1,
        }
    }

    pub fn validate(&self, length: usize) -> Result<()> {
        if self.base_width == 0 || self.channel_mults.is_empty() || self.channel_mults.contains(&0) {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if self.res_blocks == 0 || self.emb_width == 0 || self.emb_width % 2 != 0 {
            return Err(Error::Config("need at least one block and an even embedding width".into()));
        }
        if self.heads == 0 || self.groups == 0 {
            return Err(Error::Config("heads and groups must be positive".into()));
        }
        let down = 1usize << (self.channel_mults.len() - 1);
        if length % down != 0 {
            return Err(Error::Config(format!("input length {length} is not divisible by {down}")));
        }
        for &lvl in &self.attention_levels {
            let Some(m) = self.channel_mults.get(lvl) else {
                return Err(Error::Config(format!("attention level {lvl} does not exist")));
            };
            if (self.base_width * m) % self.heads != 0 {
                return Err(Error::Config("attention width must divide into heads".into()));
            }
        }
        Ok(())
    }

    fn groups_for(&self, ch: usize) -> usize {
        (1..=self.groups.min(ch)).rev().find(|g| ch % g == 0).unwrap_or(1)
    }
}

/// `[cos(f_j c), sin(f_j c)]` with frequencies geometric from 1000 down to 0.1.
pub fn noise_embedding<T: Real>(c_noise: &[T], width: usize) -> Vec<T> {
    let half = width / 2;
    let mut out = Vec::with_capacity(c_noise.len() * width);
    for &c in c_noise {
        let c = c.as_f64() * 1000.0;
        let freqs = (0..half).map(|j| (-(10_000f64).ln() * j as f64 / half as f64).exp());
        let (cos, sin): (Vec<f64>, Vec<f64>) = freqs.map(|f| ((c * f).cos(), (c * f).sin())).unzip();
        out.extend(cos.into_iter().chain(sin).map(T::of));
    }
    out
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: usize,
    beta: usize,
    groups: usize,
}

#[derive(Debug, Clone)]
struct Conv {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct ResBlock {
    norm1: Norm,
    conv1: Conv,
    emb: Dense,
    norm2: Norm,
    conv2: Conv,
    skip: Option<Conv>,
}

#[derive(Debug, Clone)]
struct AttnBlock {
    heads: usize,
    norm: Norm,
    qkv: Conv,
    proj: Conv,
}

#[derive(Debug, Clone)]
enum Layer {
    Res(ResBlock),
    Attn(AttnBlock),
    Down(Conv),
    Up(Conv),
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    cfg: &'a UNetConfig,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, zero: bool) -> Conv {
        let init = if zero { Init::Zeros } else { Init::FanIn(cin * k) };
        Conv {
            w: self.store.add(format!("{name}.weight"), &[cout, cin, k], init, &mut self.rng),
            b: self.store.add(format!("{name}.bias"), &[cout], Init::Zeros, &mut self.rng),
            stride,
            pad: k / 2,
        }
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Dense {
        Dense {
            w: self.store.add(format!("{name}.weight"), &[fan_out, fan_in], Init::FanIn(fan_in), &mut self.rng),
            b: self.store.add(format!("{name}.bias"), &[fan_out], Init::Zeros, &mut self.rng),
        }
    }

    fn norm(&mut self, name: &str, ch: usize) -> Norm {
        Norm {
            gamma: self.store.add(format!("{name}.gamma"), &[ch], Init::Ones, &mut self.rng),
            beta: self.store.add(format!("{name}.beta"), &[ch], Init::Zeros, &mut self.rng),
            groups: self.cfg.groups_for(ch),
        }
    }

    fn res(&mut self, name: &str, cin: usize, cout: usize) -> ResBlock {
        let emb = self.cfg.emb_width;
        ResBlock {
            norm1: self.norm(&format!("{name}.norm1"), cin),
            conv1: self.conv(&format!("{name}.conv1"), cin, cout, 3, 1, false),
            emb: self.dense(&format!("{name}.emb"), emb, cout),
            norm2: self.norm(&format!("{name}.norm2"), cout),
            conv2: self.conv(&format!("{name}.conv2"), cout, cout, 3, 1, true),
            skip: (cin != cout).then(|| self.conv(&format!("{name}.skip"), cin, cout, 1, 1, false)),
        }
    }

    fn attn(&mut self, name: &str, ch: usize) -> AttnBlock {
        AttnBlock {
            heads: self.cfg.heads,
            norm: self.norm(&format!("{name}.norm"), ch),
            qkv: self.conv(&format!("{name}.qkv"), ch, 3 * ch, 1, 1, false),
            proj: self.conv(&format!("{name}.proj"), ch, ch, 1, 1, true),
        }
    }
}

/// Raw network `F(c_in x, c_noise)`; preconditioning lives in the caller.
#[derive(Debug, Clone)]
pub struct UNet {
    pub config: UNetConfig,
    pub length: usize,
    emb1: Dense,
    emb2: Dense,
    input: Conv,
    down: Vec<Layer>,
    mid: Vec<Layer>,
    up: Vec<Layer>,
    out_norm: Norm,
    out_conv: Conv,
}

impl UNet {
    /// Build the layer graph and a freshly initialized parameter store.
    pub fn new(config: UNetConfig, length: usize, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate(length)?;
        let mut store = ParamStore::default();
        let mut b = Builder {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cfg: &config,
        };
        let e = config.emb_width;
        let emb1 = b.dense("embed.0", e, e);
        let emb2 = b.dense("embed.1", e, e);
        let base = config.base_width;
        let input = b.conv("input", 1, base, 3, 1, false);

        let levels = config.channel_mults.len();
        let mut skips = vec![base];
        let mut ch = base;
        let mut down = Vec::new();
        for (lvl, &m) in config.channel_mults.iter().enumerate() {
            let out = base * m;
            for i in 0..config.res_blocks {
                down.push(Layer::Res(b.res(&format!("down.{lvl}.res{i}"), ch, out)));
                ch = out;
                if config.attention_levels.contains(&lvl) {
                    down.push(Layer::Attn(b.attn(&format!("down.{lvl}.attn{i}"), ch)));
                }
                skips.push(ch);
            }
            if lvl + 1 < levels {
                down.push(Layer::Down(b.conv(&format!("down.{lvl}.downsample"), ch, ch, 3, 2, false)));
                skips.push(ch);
            }
        }

        let mid = vec![
            Layer::Res(b.res("mid.res0", ch, ch)),
            Layer::Attn(b.attn("mid.attn", ch)),
            Layer::Res(b.res("mid.res1", ch, ch)),
        ];

        let mut up = Vec::new();
        for (lvl, &m) in config.channel_mults.iter().enumerate().rev() {
            let out = base * m;
            for i in 0..=config.res_blocks {
                let skip = skips.pop().expect("one skip per block");
                up.push(Layer::Res(b.res(&format!("up.{lvl}.res{i}"), ch + skip, out)));
                ch = out;
                if config.attention_levels.contains(&lvl) {
                    up.push(Layer::Attn(b.attn(&format!("up.{lvl}.attn{i}"), ch)));
                }
            }
            if lvl > 0 {
                up.push(Layer::Up(b.conv(&format!("up.{lvl}.upsample"), ch, ch, 3, 1, false)));
            }
        }
        debug_assert!(skips.is_empty());
        let out_norm = b.norm("out.norm", ch);
        let out_conv = b.conv("out.conv", ch, 1, 3, 1, true);
        let net = UNet {
            config,
            length,
            emb1,
            emb2,
            input,
            down,
            mid,
            up,
            out_norm,
            out_conv,
        };
        Ok((net, store))
    }

    /// Forward pass for `x: [B, 1, length]` and one `c_noise` per batch row.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore, params: &[T], x: Var, c_noise: &[T]) -> Var {
        let ctx = Ctx { store, params };
        let batch = c_noise.len();
        assert_eq!(tape.shape(x), &[batch, 1, self.length], "network input shape");
        let e = self.config.emb_width;
        let emb_in = tape.input(noise_embedding(c_noise, e), &[batch, e]);
        let h = ctx.dense(tape, &self.emb1, emb_in);
        let h = tape.silu(h);
        let emb = ctx.dense(tape, &self.emb2, h);
        let emb = tape.silu(emb);

        let mut h = ctx.conv(tape, &self.input, x);
        let mut skips = vec![h];
        for (i, layer) in self.down.iter().enumerate() {
            h = ctx.layer(tape, layer, h, emb);
            // a block followed by attention contributes the attended output
            if !matches!(self.down.get(i + 1), Some(Layer::Attn(_))) {
                skips.push(h);
            }
        }
        for layer in &self.mid {
            h = ctx.layer(tape, layer, h, emb);
        }
        for layer in &self.up {
            if let Layer::Res(_) = layer {
                let skip = skips.pop().expect("one skip per block");
                h = tape.concat(h, skip);
            }
            h = ctx.layer(tape, layer, h, emb);
        }
        let h = ctx.norm(tape, &self.out_norm, h);
        let h = tape.silu(h);
        ctx.conv(tape, &self.out_conv, h)
    }
}

struct Ctx<'a, T> {
    store: &'a ParamStore,
    params: &'a [T],
}

impl<T: Real> Ctx<'_, T> {
    fn p(&self, tape: &mut Tape<T>, id: usize) -> Var {
        let info = &self.store.tensors[id];
        tape.param(&self.params[info.range()], &info.shape, info.offset)
    }

    fn conv(&self, tape: &mut Tape<T>, c: &Conv, x: Var) -> Var {
        let (w, b) = (self.p(tape, c.w), self.p(tape, c.b));
        tape.conv1d(x, w, Some(b), c.stride, c.pad)
    }

    fn dense(&self, tape: &mut Tape<T>, d: &Dense, x: Var) -> Var {
        let (w, b) = (self.p(tape, d.w), self.p(tape, d.b));
        tape.linear(x, w, b)
    }

    fn norm(&self, tape: &mut Tape<T>, n: &Norm, x: Var) -> Var {
        let (g, b) = (self.p(tape, n.gamma), self.p(tape, n.beta));
        tape.group_norm(x, g, b, n.groups)
    }

    fn layer(&self, tape: &mut Tape<T>, layer: &Layer, x: Var, emb: Var) -> Var {
        match layer {
            Layer::Res(r) => {
                let h = self.norm(tape, &r.norm1, x);
                let h = tape.silu(h);
                let h = self.conv(tape, &r.conv1, h);
                let e = self.dense(tape, &r.emb, emb);
                let h = tape.add_channel(h, e);
                let h = self.norm(tape, &r.norm2, h);
                let h = tape.silu(h);
                let h = self.conv(tape, &r.conv2, h);
                let skip = match &r.skip {
                    Some(c) => self.conv(tape, c, x),
                    None => x,
                };
                tape.add(skip, h)
            }
            Layer::Attn(a) => {
                let h = self.norm(tape, &a.norm, x);
                let qkv = self.conv(tape, &a.qkv, h);
                let h = tape.attention(qkv, a.heads);
                let h = self.conv(tape, &a.proj, h);
                tape.add(x, h)
            }
            Layer::Down(c) => self.conv(tape, c, x),
            Layer::Up(c) => {
                let h = tape.upsample(x);
                self.conv(tape, c, h)
            }
        }
    }
}
