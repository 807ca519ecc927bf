//! Variational autoencoder over `N x N` single-channel inputs.
//!
//! The encoder is a circularly padded conv stack with global average pooling,
//! applied to the input and to its doubly mirrored copy; the two pooled
//! vectors are summed before the `mu`/`logvar` heads. The decoder mirrors the
//! encoder with nearest-neighbour upsampling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distmat::{mirror_entries, DistanceMatrix, RawMatrix};
use crate::error::{Error, Result};
use crate::loss::{sample_loss, LossBreakdown, LossWeights, RecMode, ReindexTable};
use crate::tensor::{
    conv_backward, conv_forward, dense_backward, dense_forward, global_avg_pool,
    global_avg_pool_backward, leaky, leaky_backward, upsample2, upsample2_backward, ConvGeometry,
    Padding, Scalar,
};

pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub matrix_size: usize,
    pub latent_dim: usize,
    pub blocks: usize,
    pub base_channels: usize,
    pub seed: u64,
    pub padding: Padding,
    /// Sum encoder features of the input and its doubly mirrored copy.
    pub mirror_sum: bool,
}

impl ModelConfig {
    pub fn new(matrix_size: usize, latent_dim: usize, blocks: usize, base_channels: usize, seed: u64) -> Self {
        Self {
            matrix_size,
            latent_dim,
            blocks,
            base_channels,
            seed,
            padding: Padding::Circular,
            mirror_sum: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.matrix_size;
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Config(format!("matrix_size must be a power of two >= 4, got {n}")));
        }
        if self.blocks == 0 {
            return Err(Error::Config("blocks must be at least 1".into()));
        }
        if self.blocks >= usize::BITS as usize || n >> self.blocks < 2 {
            return Err(Error::Config(format!(
                "{} blocks reduce a {n}x{n} input below 2x2",
                self.blocks
            )));
        }
        if self.latent_dim < 2 {
            return Err(Error::Config("latent_dim must be at least 2".into()));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be at least 1".into()));
        }
        Ok(())
    }

    /// Spatial side at the bottleneck.
    pub fn bottleneck_size(&self) -> usize {
        self.matrix_size >> self.blocks
    }

    /// Channels at the bottleneck, i.e. the pooled feature width.
    pub fn feature_dim(&self) -> usize {
        self.base_channels << self.blocks
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    He,
    Linear,
}

#[derive(Debug, Default)]
struct LayoutBuilder {
    specs: Vec<TensorSpec>,
    /// `None` marks a bias, which starts at zero.
    inits: Vec<Option<Init>>,
    total: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Option<Init>) -> usize {
        let offset = self.total;
        let spec = TensorSpec { name, shape, offset };
        self.total += spec.len();
        self.specs.push(spec);
        self.inits.push(init);
        offset
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, init: Init) -> (usize, usize) {
        let w = self.push(format!("{name}.weight"), vec![c_out, c_in, 3, 3], Some(init));
        let b = self.push(format!("{name}.bias"), vec![c_out], None);
        (w, b)
    }

    fn dense(&mut self, name: &str, n_in: usize, n_out: usize, init: Init) -> (usize, usize) {
        let w = self.push(format!("{name}.weight"), vec![n_out, n_in], Some(init));
        let b = self.push(format!("{name}.bias"), vec![n_out], None);
        (w, b)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Conv {
        geo: ConvGeometry,
        c_in: usize,
        c_out: usize,
        w: usize,
        b: usize,
        input_grad: bool,
    },
    Leaky,
    Upsample {
        c: usize,
        h: usize,
        w: usize,
    },
    Gap {
        c: usize,
        hw: usize,
    },
    Dense {
        n_in: usize,
        n_out: usize,
        w: usize,
        b: usize,
    },
}

/// What an op keeps from its forward pass for the backward pass.
enum Saved<T> {
    Cols(Vec<T>),
    Input(Vec<T>),
    Nothing,
}

#[derive(Debug, Clone)]
struct Stack {
    ops: Vec<Op>,
}

impl Stack {
    fn forward<T: Scalar>(&self, params: &[T], input: &[T], tape: Option<&mut Vec<Saved<T>>>) -> Vec<T> {
        let mut tape = tape;
        let mut x = input.to_vec();
        for op in &self.ops {
            let (y, saved) = match op {
                Op::Conv {
                    geo,
                    c_in,
                    c_out,
                    w,
                    b,
                    ..
                } => {
                    let wl = c_out * c_in * 9;
                    let (y, cols) = conv_forward(
                        geo,
                        &x,
                        *c_in,
                        &params[*w..w + wl],
                        &params[*b..b + c_out],
                        *c_out,
                    );
                    (y, Saved::Cols(cols))
                }
                Op::Leaky => {
                    let y = x.iter().map(|&v| leaky(v)).collect();
                    (y, Saved::Input(std::mem::take(&mut x)))
                }
                Op::Upsample { c, h, w } => (upsample2(&x, *c, *h, *w), Saved::Nothing),
                Op::Gap { c, hw } => (global_avg_pool(&x, *c, *hw), Saved::Nothing),
                Op::Dense { n_in, n_out, w, b } => {
                    let y = dense_forward(&params[*w..w + n_in * n_out], &params[*b..b + n_out], &x, *n_out);
                    (y, Saved::Input(std::mem::take(&mut x)))
                }
            };
            if let Some(t) = tape.as_deref_mut() {
                t.push(saved);
            }
            x = y;
        }
        x
    }

    /// Returns the input gradient (empty if the first op skips it).
    fn backward<T: Scalar>(&self, params: &[T], tape: Vec<Saved<T>>, grad_out: Vec<T>, grads: &mut [T]) -> Vec<T> {
        let mut g = grad_out;
        for (op, saved) in self.ops.iter().zip(tape).rev() {
            g = match (op, saved) {
                (
                    Op::Conv {
                        geo,
                        c_in,
                        c_out,
                        w,
                        b,
                        input_grad,
                    },
                    Saved::Cols(cols),
                ) => {
                    let wl = c_out * c_in * 9;
                    let (gw, gb) = split_pair(grads, *w, wl, *b, *c_out);
                    conv_backward(
                        geo,
                        &cols,
                        *c_in,
                        &params[*w..w + wl],
                        *c_out,
                        &g,
                        gw,
                        gb,
                        *input_grad,
                    )
                    .unwrap_or_default()
                }
                (Op::Leaky, Saved::Input(pre)) => {
                    leaky_backward(&pre, &mut g);
                    g
                }
                (Op::Upsample { c, h, w }, _) => upsample2_backward(&g, *c, *h, *w),
                (Op::Gap { hw, .. }, _) => global_avg_pool_backward(&g, *hw),
                (Op::Dense { n_in, n_out, w, b }, Saved::Input(x)) => {
                    let (gw, gb) = split_pair(grads, *w, n_in * n_out, *b, *n_out);
                    dense_backward(&params[*w..w + n_in * n_out], &x, &g, gw, gb)
                }
                _ => unreachable!("tape does not match the op sequence"),
            };
        }
        g
    }
}

/// Disjoint mutable views of a weight tensor and the bias that follows it.
fn split_pair<T>(grads: &mut [T], w: usize, wl: usize, b: usize, bl: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(w + wl <= b);
    let (lo, hi) = grads.split_at_mut(b);
    (&mut lo[w..w + wl], &mut hi[..bl])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Vec<f64>,
}

/// `z = mu + exp(logvar / 2) * eps`; with no noise source `eps = 0`.
pub fn reparameterize<R: Rng + ?Sized>(mu: &[f64], logvar: &[f64], noise: Option<&mut R>) -> Vec<f64> {
    match noise {
        None => mu.to_vec(),
        Some(rng) => mu
            .iter()
            .zip(logvar)
            .map(|(&m, &lv)| {
                let e: f64 = StandardNormal.sample(rng);
                m + (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp() * e
            })
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    layout: Vec<TensorSpec>,
    params: Vec<T>,
    encoder: Stack,
    decoder: Stack,
    mu_head: (usize, usize),
    logvar_head: (usize, usize),
}

struct Architecture {
    layout: LayoutBuilder,
    encoder: Stack,
    decoder: Stack,
    mu_head: (usize, usize),
    logvar_head: (usize, usize),
}

fn build(config: &ModelConfig) -> Result<Architecture> {
    config.validate()?;
    let n = config.matrix_size;
    let c0 = config.base_channels;
    let pad = config.padding;
    let mut lb = LayoutBuilder::default();

    let mut enc = Vec::new();
    let (w, b) = lb.conv("encoder.stem", 1, c0, Init::He);
    enc.push(Op::Conv {
        geo: ConvGeometry::new(n, n, 1, pad),
        c_in: 1,
        c_out: c0,
        w,
        b,
        input_grad: false,
    });
    enc.push(Op::Leaky);
    let (mut side, mut ch) = (n, c0);
    for s in 0..config.blocks {
        let (w, b) = lb.conv(&format!("encoder.block{s}.conv"), ch, 2 * ch, Init::He);
        enc.push(Op::Conv {
            geo: ConvGeometry::new(side, side, 1, pad),
            c_in: ch,
            c_out: 2 * ch,
            w,
            b,
            input_grad: true,
        });
        enc.push(Op::Leaky);
        ch *= 2;
        let (w, b) = lb.conv(&format!("encoder.block{s}.down"), ch, ch, Init::He);
        enc.push(Op::Conv {
            geo: ConvGeometry::new(side, side, 2, pad),
            c_in: ch,
            c_out: ch,
            w,
            b,
            input_grad: true,
        });
        enc.push(Op::Leaky);
        side /= 2;
    }
    enc.push(Op::Gap { c: ch, hw: side * side });

    let f = config.feature_dim();
    let d = config.latent_dim;
    let mu_head = lb.dense("head.mu", f, d, Init::Linear);
    let logvar_head = lb.dense("head.logvar", f, d, Init::Linear);

    let mut dec = Vec::new();
    let g = config.bottleneck_size();
    let (w, b) = lb.dense("decoder.input", d, f * g * g, Init::He);
    dec.push(Op::Dense {
        n_in: d,
        n_out: f * g * g,
        w,
        b,
    });
    dec.push(Op::Leaky);
    let (mut side, mut ch) = (g, f);
    for s in 0..config.blocks {
        dec.push(Op::Upsample { c: ch, h: side, w: side });
        side *= 2;
        let (w, b) = lb.conv(&format!("decoder.block{s}.conv"), ch, ch / 2, Init::He);
        dec.push(Op::Conv {
            geo: ConvGeometry::new(side, side, 1, pad),
            c_in: ch,
            c_out: ch / 2,
            w,
            b,
            input_grad: true,
        });
        dec.push(Op::Leaky);
        ch /= 2;
    }
    let (w, b) = lb.conv("decoder.output", ch, 1, Init::Linear);
    dec.push(Op::Conv {
        geo: ConvGeometry::new(n, n, 1, pad),
        c_in: ch,
        c_out: 1,
        w,
        b,
        input_grad: true,
    });

    Ok(Architecture {
        layout: lb,
        encoder: Stack { ops: enc },
        decoder: Stack { ops: dec },
        mu_head,
        logvar_head,
    })
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64().unwrap()).collect()
}

fn from_f64<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64_lossy(x)).collect()
}

/// Per-sample result of a training forward/backward pass.
#[derive(Debug, Clone)]
pub struct SampleStep<T> {
    pub breakdown: LossBreakdown,
    pub grads: Vec<T>,
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters: fan-in scaled uniform weights, zero biases.
    pub fn init(config: ModelConfig) -> Result<Self> {
        let arch = build(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![T::zero(); arch.layout.total];
        for (spec, init) in arch.layout.specs.iter().zip(&arch.layout.inits) {
            let Some(init) = init else { continue };
            let fan_in: usize = spec.shape[1..].iter().product();
            let bound = match init {
                Init::He => (6.0 / fan_in as f64).sqrt(),
                Init::Linear => 1.0 / (fan_in as f64).sqrt(),
            };
            for p in &mut params[spec.offset..spec.offset + spec.len()] {
                *p = T::from_f64_lossy(rng.random_range(-bound..bound));
            }
        }
        Ok(Self::assemble(config, arch, params))
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self> {
        let arch = build(&config)?;
        if params.len() != arch.layout.total {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                arch.layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("parameters must be finite".into()));
        }
        Ok(Self::assemble(config, arch, params))
    }

    fn assemble(config: ModelConfig, arch: Architecture, params: Vec<T>) -> Self {
        Self {
            config,
            layout: arch.layout.specs,
            params,
            encoder: arch.encoder,
            decoder: arch.decoder,
            mu_head: arch.mu_head,
            logvar_head: arch.logvar_head,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::from_f64_lossy(p.to_f64().unwrap())).collect(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            mu_head: self.mu_head,
            logvar_head: self.logvar_head,
        }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        let n = self.config.matrix_size;
        if len != n * n {
            return Err(Error::Shape(format!(
                "model expects {n}x{n} inputs, got {len} entries"
            )));
        }
        Ok(())
    }

    fn head(&self, (w, b): (usize, usize), h: &[T]) -> Vec<T> {
        let (f, d) = (self.config.feature_dim(), self.config.latent_dim);
        dense_forward(&self.params[w..w + f * d], &self.params[b..b + d], h, d)
    }

    fn features(&self, x: &[T], tapes: Option<&mut [Vec<Saved<T>>; 2]>) -> Vec<T> {
        let p = &self.params;
        match tapes {
            None => {
                let mut h = self.encoder.forward(p, x, None);
                if self.config.mirror_sum {
                    let hm = self.encoder.forward(p, &mirror_entries(x), None);
                    h.iter_mut().zip(hm).for_each(|(a, b)| *a += b);
                }
                h
            }
            Some([t0, t1]) => {
                let mut h = self.encoder.forward(p, x, Some(t0));
                if self.config.mirror_sum {
                    let hm = self.encoder.forward(p, &mirror_entries(x), Some(t1));
                    h.iter_mut().zip(hm).for_each(|(a, b)| *a += b);
                }
                h
            }
        }
    }

    /// `(mu, logvar)` for a row-major `N x N` input; `logvar` is clamped.
    pub fn encode_slice(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.check_input(x.len())?;
        let h = self.features(x, None);
        let mu = self.head(self.mu_head, &h);
        let lo = T::from_f64_lossy(LOGVAR_MIN);
        let hi = T::from_f64_lossy(LOGVAR_MAX);
        let lv = self.head(self.logvar_head, &h).into_iter().map(|v| v.max(lo).min(hi)).collect();
        Ok((mu, lv))
    }

    /// Row-major `N x N` decoder output.
    pub fn decode_slice(&self, z: &[T]) -> Result<Vec<T>> {
        if z.len() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "latent has {} dimensions, model expects {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        Ok(self.decoder.forward(&self.params, z, None))
    }

    /// Posterior parameters of a distance matrix (eval mode: `z = mu`).
    pub fn encode(&self, d: &DistanceMatrix) -> Result<LatentCode> {
        self.encode_raw(d.entries())
    }

    /// Posterior parameters of an arbitrary `N x N` input.
    pub fn encode_raw(&self, x: &[f64]) -> Result<LatentCode> {
        let (mu, lv) = self.encode_slice(&from_f64::<T>(x))?;
        let mu = to_f64(&mu);
        Ok(LatentCode {
            z: mu.clone(),
            logvar: to_f64(&lv),
            mu,
        })
    }

    pub fn decode(&self, z: &[f64]) -> Result<RawMatrix> {
        let out = self.decode_slice(&from_f64::<T>(z))?;
        RawMatrix::new(self.config.matrix_size, to_f64(&out))
    }

    fn forward_train(
        &self,
        x: &[T],
        eps: &[T],
        weights: &LossWeights,
        table: &ReindexTable,
        mode: RecMode,
    ) -> Result<TrainForward<T>> {
        self.check_input(x.len())?;
        if eps.len() != self.config.latent_dim {
            return Err(Error::Shape("noise length differs from latent_dim".into()));
        }
        let d = self.config.latent_dim;
        let mut enc_tapes = [Vec::new(), Vec::new()];
        let h = self.features(x, Some(&mut enc_tapes));
        let mu = self.head(self.mu_head, &h);
        let lv_raw = self.head(self.logvar_head, &h);
        let lo = T::from_f64_lossy(LOGVAR_MIN);
        let hi = T::from_f64_lossy(LOGVAR_MAX);
        let lv: Vec<T> = lv_raw.iter().map(|&v| v.max(lo).min(hi)).collect();
        let half = T::from_f64_lossy(0.5);
        let sd: Vec<T> = lv.iter().map(|&v| (v * half).exp()).collect();
        let z: Vec<T> = (0..d).map(|i| mu[i] + sd[i] * eps[i]).collect();
        let mut dec_tape = Vec::new();
        let pred = self.decoder.forward(&self.params, &z, Some(&mut dec_tape));
        let loss = sample_loss(&pred, x, &mu, &lv, weights, table, mode);
        Ok(TrainForward {
            enc_tapes,
            dec_tape,
            h,
            lv_raw,
            sd,
            pred,
            loss,
        })
    }

    /// Forward pass, loss and full parameter gradient for one input that is
    /// also its own reconstruction target. `eps` is the reparameterization
    /// noise.
    pub fn sample_step(
        &self,
        x: &[T],
        eps: &[T],
        weights: &LossWeights,
        table: &ReindexTable,
        mode: RecMode,
    ) -> Result<SampleStep<T>> {
        let fw = self.forward_train(x, eps, weights, table, mode)?;
        let (f, d) = (self.config.feature_dim(), self.config.latent_dim);
        let lo = T::from_f64_lossy(LOGVAR_MIN);
        let hi = T::from_f64_lossy(LOGVAR_MAX);
        let half = T::from_f64_lossy(0.5);
        let lg = fw.loss;

        let mut grads = vec![T::zero(); self.params.len()];
        let dz = self.decoder.backward(&self.params, fw.dec_tape, lg.d_pred, &mut grads);
        let d_mu: Vec<T> = (0..d).map(|i| lg.d_mu[i] + dz[i]).collect();
        let d_lv: Vec<T> = (0..d)
            .map(|i| {
                if fw.lv_raw[i] > lo && fw.lv_raw[i] < hi {
                    lg.d_logvar[i] + dz[i] * eps[i] * fw.sd[i] * half
                } else {
                    T::zero()
                }
            })
            .collect();

        let mut dh = vec![T::zero(); f];
        for ((w, b), g) in [(self.mu_head, &d_mu), (self.logvar_head, &d_lv)] {
            let (gw, gb) = split_pair(&mut grads, w, f * d, b, d);
            let part = dense_backward(&self.params[w..w + f * d], &fw.h, g, gw, gb);
            dh.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
        let [t0, t1] = fw.enc_tapes;
        self.encoder.backward(&self.params, t0, dh.clone(), &mut grads);
        if self.config.mirror_sum {
            self.encoder.backward(&self.params, t1, dh, &mut grads);
        }
        Ok(SampleStep {
            breakdown: lg.breakdown,
            grads,
        })
    }

    /// Which side of every non-smooth point the objective sits on: signs of
    /// all rectifier inputs, the logvar clamp, the negativity hinge, and the
    /// selected reindexing. Two parameter vectors with equal signatures lie
    /// on the same smooth piece.
    pub fn branch_signature(
        &self,
        x: &[T],
        eps: &[T],
        weights: &LossWeights,
        table: &ReindexTable,
        mode: RecMode,
    ) -> Result<Vec<u32>> {
        let fw = self.forward_train(x, eps, weights, table, mode)?;
        let lo = T::from_f64_lossy(LOGVAR_MIN);
        let hi = T::from_f64_lossy(LOGVAR_MAX);
        let mut sig = Vec::new();
        let stacks = [
            (&self.encoder, &fw.enc_tapes[0]),
            (&self.encoder, &fw.enc_tapes[1]),
            (&self.decoder, &fw.dec_tape),
        ];
        for (stack, tape) in stacks {
            for (op, saved) in stack.ops.iter().zip(tape) {
                if let (Op::Leaky, Saved::Input(v)) = (op, saved) {
                    sig.extend(v.iter().map(|&a| u32::from(a > T::zero())));
                }
            }
        }
        sig.extend(fw.lv_raw.iter().map(|&v| u32::from(v > lo && v < hi)));
        sig.extend(fw.pred.iter().map(|&v| u32::from(v < T::zero())));
        if let Some(r) = fw.loss.breakdown.argmin_reindexing {
            sig.push(r.origin as u32);
            sig.push(u32::from(r.direction.sign() > 0));
        }
        Ok(sig)
    }
}

struct TrainForward<T> {
    enc_tapes: [Vec<Saved<T>>; 2],
    dec_tape: Vec<Saved<T>>,
    h: Vec<T>,
    lv_raw: Vec<T>,
    sd: Vec<T>,
    pred: Vec<T>,
    loss: crate::loss::SampleGrad<T>,
}

/// Adam moments and counters stored alongside parameters for exact resume.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub epoch: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SDMCKPT\0";
const CHECKPOINT_VERSION: u32 = 1;

fn ck_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn io_ck(e: std::io::Error) -> Error {
    ck_err(format!("truncated or unreadable checkpoint: {e}"))
}

/// Self-describing binary checkpoint: magic, version, JSON config, named
/// tensors with shapes and little-endian `f32` data, optional optimizer state.
pub fn write_checkpoint<W: Write>(
    mut w: W,
    model: &Model<f32>,
    optimizer: Option<&OptimizerSnapshot>,
) -> Result<()> {
    if let Some(o) = optimizer {
        if o.m.len() != model.params.len() || o.v.len() != model.params.len() {
            return Err(Error::Shape("optimizer state does not match parameter count".into()));
        }
    }
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    let cfg = serde_json::to_vec(&model.config)?;
    w.write_u32::<LittleEndian>(cfg.len() as u32)?;
    w.write_all(&cfg)?;
    w.write_u32::<LittleEndian>(model.layout.len() as u32)?;
    for spec in &model.layout {
        w.write_u16::<LittleEndian>(spec.name.len() as u16)?;
        w.write_all(spec.name.as_bytes())?;
        w.write_u8(spec.shape.len() as u8)?;
        for &s in &spec.shape {
            w.write_u32::<LittleEndian>(s as u32)?;
        }
        for &p in &model.params[spec.offset..spec.offset + spec.len()] {
            w.write_f32::<LittleEndian>(p)?;
        }
    }
    match optimizer {
        None => w.write_u8(0)?,
        Some(o) => {
            w.write_u8(1)?;
            w.write_u64::<LittleEndian>(o.step)?;
            w.write_u64::<LittleEndian>(o.epoch)?;
            for &x in o.m.iter().chain(&o.v) {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Model<f32>, Option<OptimizerSnapshot>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_ck)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ck_err("not a model checkpoint (bad magic bytes)"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_ck)?;
    if version != CHECKPOINT_VERSION {
        return Err(ck_err(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let len = r.read_u32::<LittleEndian>().map_err(io_ck)? as usize;
    let mut cfg = vec![0u8; len];
    r.read_exact(&mut cfg).map_err(io_ck)?;
    let config: ModelConfig =
        serde_json::from_slice(&cfg).map_err(|e| ck_err(format!("bad config block: {e}")))?;
    let arch = build(&config).map_err(|e| ck_err(format!("invalid stored config: {e}")))?;
    let count = r.read_u32::<LittleEndian>().map_err(io_ck)? as usize;
    if count != arch.layout.specs.len() {
        return Err(ck_err("tensor count does not match the stored config"));
    }
    let mut params = vec![0f32; arch.layout.total];
    for spec in &arch.layout.specs {
        let nl = r.read_u16::<LittleEndian>().map_err(io_ck)? as usize;
        let mut name = vec![0u8; nl];
        r.read_exact(&mut name).map_err(io_ck)?;
        let nd = r.read_u8().map_err(io_ck)? as usize;
        let mut shape = Vec::with_capacity(nd);
        for _ in 0..nd {
            shape.push(r.read_u32::<LittleEndian>().map_err(io_ck)? as usize);
        }
        if name != spec.name.as_bytes() || shape != spec.shape {
            return Err(ck_err(format!("tensor {} has unexpected name or shape", spec.name)));
        }
        r.read_f32_into::<LittleEndian>(&mut params[spec.offset..spec.offset + spec.len()])
            .map_err(io_ck)?;
    }
    let optimizer = match r.read_u8().map_err(io_ck)? {
        0 => None,
        1 => {
            let step = r.read_u64::<LittleEndian>().map_err(io_ck)?;
            let epoch = r.read_u64::<LittleEndian>().map_err(io_ck)?;
            let mut m = vec![0f32; params.len()];
            let mut v = vec![0f32; params.len()];
            r.read_f32_into::<LittleEndian>(&mut m).map_err(io_ck)?;
            r.read_f32_into::<LittleEndian>(&mut v).map_err(io_ck)?;
            Some(OptimizerSnapshot { step, epoch, m, v })
        }
        _ => return Err(ck_err("bad optimizer flag")),
    };
    let model = Model::from_params(config, params).map_err(|e| ck_err(e.to_string()))?;
    Ok((model, optimizer))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model<f32>,
    optimizer: Option<&OptimizerSnapshot>,
) -> Result<()> {
    // Write to a sibling file first so a crash never leaves a partial checkpoint.
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    write_checkpoint(BufWriter::new(File::create(&tmp)?), model, optimizer)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model<f32>, Option<OptimizerSnapshot>)> {
    let f = File::open(path.as_ref()).map_err(|e| {
        ck_err(format!("cannot open {}: {e}", path.as_ref().display()))
    })?;
    read_checkpoint(BufReader::new(f))
}
