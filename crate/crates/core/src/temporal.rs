//! Multi-scale temporal variational encoder and the latent motion loss.
//!
//! Three parallel branches see the sequence at strides 1, 2 and 4. Each is two
//! width-3 convolutions followed by temporal mean pooling and Gaussian mean /
//! log-variance heads. The embedding is the concatenation of the three mean
//! heads, so its size does not depend on the sequence length.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::constraints::LossGrad;
use crate::error::{Error, Result};
use crate::motion::MotionSeq;
use crate::optim::Adam;
use crate::params::{accumulate, BoundParams, ParamStore};
use crate::tape::{Tape, Tensor, Var};

pub const STRIDES: [usize; 3] = [1, 2, 4];
pub const MIN_FRAMES: usize = 8;
pub const LOGVAR_RANGE: (f64, f64) = (-10.0, 10.0);
const KERNEL: usize = 3;
const TIME_FEATURES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub channels: usize,
    pub hidden: usize,
    pub latent: usize,
}

impl EncoderConfig {
    pub fn new(channels: usize) -> Self {
        EncoderConfig { channels, hidden: 32, latent: 64 }
    }

    pub fn embedding_dim(&self) -> usize {
        self.latent * STRIDES.len()
    }
}

/// Concatenated mean-head outputs of the three branches.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentEmbedding(pub Vec<f64>);

impl LatentEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn squared_distance(&self, other: &LatentEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

fn init_encoder(cfg: &EncoderConfig, rng: &mut ChaCha8Rng, store: &mut ParamStore) {
    let (c, h, z) = (cfg.channels, cfg.hidden, cfg.latent);
    for s in STRIDES {
        let p = format!("enc.s{s}");
        store.insert_normal(&format!("{p}.conv1.w"), h, KERNEL * c, (1.0 / (KERNEL * c) as f64).sqrt(), rng);
        store.insert_normal(&format!("{p}.conv1.b"), 1, h, 0.0, rng);
        store.insert_normal(&format!("{p}.conv2.w"), h, KERNEL * h, (1.0 / (KERNEL * h) as f64).sqrt(), rng);
        store.insert_normal(&format!("{p}.conv2.b"), 1, h, 0.0, rng);
        store.insert_normal(&format!("{p}.mu.w"), z, h, (1.0 / h as f64).sqrt(), rng);
        store.insert_normal(&format!("{p}.mu.b"), 1, z, 0.0, rng);
        store.insert_normal(&format!("{p}.logvar.w"), z, h, 0.1 * (1.0 / h as f64).sqrt(), rng);
        store.insert_normal(&format!("{p}.logvar.b"), 1, z, 0.0, rng);
    }
}

/// Records the encoder on `tape`; returns the concatenated mean and log-variance.
fn encoder_graph(tape: &mut Tape, p: &BoundParams, x: Var) -> Result<(Var, Var)> {
    let mut mus = Vec::new();
    let mut lvs = Vec::new();
    for s in STRIDES {
        let n = |k: &str| p.var(&format!("enc.s{s}.{k}"));
        let h = tape.conv(x, n("conv1.w")?, n("conv1.b")?, KERNEL, s)?;
        let h = tape.silu(h);
        let h = tape.conv(h, n("conv2.w")?, n("conv2.b")?, KERNEL, 1)?;
        let h = tape.silu(h);
        let pooled = tape.mean_rows(h);
        mus.push(tape.linear(pooled, n("mu.w")?, n("mu.b")?)?);
        let lv = tape.linear(pooled, n("logvar.w")?, n("logvar.b")?)?;
        lvs.push(tape.clamp(lv, LOGVAR_RANGE.0, LOGVAR_RANGE.1));
    }
    Ok((tape.concat(&mus)?, tape.concat(&lvs)?))
}

fn motion_tensor(m: &MotionSeq) -> Tensor {
    Tensor { rows: m.frames(), cols: m.channels(), data: m.data().to_vec() }
}

fn check_length(m: &MotionSeq) -> Result<()> {
    if m.frames() < MIN_FRAMES {
        return Err(Error::SequenceTooShort { needed: MIN_FRAMES, got: m.frames() });
    }
    Ok(())
}

/// The encoder half of the VAE.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalEncoder {
    cfg: EncoderConfig,
    params: ParamStore,
    frozen: bool,
}

impl TemporalEncoder {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_encoder(&cfg, &mut rng, &mut params);
        TemporalEncoder { cfg, params, frozen: false }
    }

    /// Rebuilds an encoder from stored `enc.*` arrays, inferring its shape.
    pub fn from_params(store: &ParamStore) -> Result<Self> {
        let conv1 = store.require("enc.s1.conv1.w")?;
        let mu = store.require("enc.s1.mu.w")?;
        let cfg = EncoderConfig { channels: conv1.cols / KERNEL, hidden: conv1.rows, latent: mu.rows };
        let mut params = ParamStore::new();
        for (n, t) in store.iter().filter(|(n, _)| n.starts_with("enc.")) {
            params.insert(n, t.clone());
        }
        let reference = TemporalEncoder::new(cfg, 0);
        for (n, t) in reference.params.iter() {
            let got = params.require(n)?;
            if got.rows != t.rows || got.cols != t.cols {
                return Err(Error::Format(format!("encoder array `{n}` has the wrong shape")));
            }
        }
        Ok(TemporalEncoder { cfg, params, frozen: true })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn check_input(&self, m: &MotionSeq) -> Result<()> {
        check_length(m)?;
        if m.channels() != self.cfg.channels {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects {} channels, got {}",
                self.cfg.channels,
                m.channels()
            )));
        }
        Ok(())
    }

    /// Deterministic embedding from the mean heads.
    pub fn encode(&self, motion: &MotionSeq) -> Result<LatentEmbedding> {
        self.check_input(motion)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let x = tape.leaf(motion_tensor(motion));
        let (mu, _) = encoder_graph(&mut tape, &p, x)?;
        Ok(LatentEmbedding(tape.value(mu).data.clone()))
    }

    /// `‖g(gen) − target‖²` and its gradient with respect to `gen`'s channels.
    pub fn motion_loss_to(&self, gen: &MotionSeq, target: &LatentEmbedding) -> Result<LossGrad> {
        if !self.frozen {
            return Err(Error::BadConfig("motion loss requires a frozen encoder".into()));
        }
        self.check_input(gen)?;
        if target.dim() != self.cfg.embedding_dim() {
            return Err(Error::DimensionMismatch(target.dim(), self.cfg.embedding_dim()));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let x = tape.leaf(motion_tensor(gen));
        let (mu, _) = encoder_graph(&mut tape, &p, x)?;
        let t = tape.leaf(Tensor::row_vector(target.0.clone()));
        let d = tape.sub(mu, t)?;
        let loss = tape.sum_squares(d);
        let value = tape.value(loss).data[0];
        let mut g = tape.backward(loss)?;
        let grad = g.take(x).map(|t| t.data).unwrap_or_else(|| vec![0.0; gen.data().len()]);
        Ok(LossGrad { value, grad })
    }
}

/// Latent motion loss between a generated and a ground-truth sequence.
pub fn motion_loss(enc: &TemporalEncoder, gen: &MotionSeq, gt: &MotionSeq) -> Result<LossGrad> {
    if gen.frames() != gt.frames() {
        return Err(Error::LengthMismatch(gen.frames(), gt.frames()));
    }
    gen.same_shape(gt)?;
    let target = enc.encode(gt)?;
    enc.motion_loss_to(gen, &target)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeStepStats {
    pub recon_mse: f64,
    pub kl: f64,
}

/// Encoder plus a time-conditioned decoder, trained with the reparameterized ELBO.
#[derive(Clone, Debug)]
pub struct TemporalVae {
    cfg: EncoderConfig,
    params: ParamStore,
    adam: Adam,
    rng: ChaCha8Rng,
}

fn time_features(frames: usize) -> Tensor {
    let mut data = Vec::with_capacity(frames * TIME_FEATURES);
    for f in 0..frames {
        let phase = f as f64 / frames as f64;
        for k in 0..TIME_FEATURES / 2 {
            let w = std::f64::consts::PI * (k + 1) as f64 * phase;
            data.push(w.sin());
            data.push(w.cos());
        }
    }
    Tensor { rows: frames, cols: TIME_FEATURES, data }
}

impl TemporalVae {
    pub fn new(cfg: EncoderConfig, seed: u64, lr: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_encoder(&cfg, &mut rng, &mut params);
        let (c, h, zd) = (cfg.channels, cfg.hidden, cfg.embedding_dim());
        params.insert_normal("dec.z.w", h, zd, (1.0 / zd as f64).sqrt(), &mut rng);
        params.insert_normal("dec.z.b", 1, h, 0.0, &mut rng);
        params.insert_normal("dec.t.w", h, TIME_FEATURES, (1.0 / TIME_FEATURES as f64).sqrt(), &mut rng);
        params.insert_normal("dec.t.b", 1, h, 0.0, &mut rng);
        params.insert_normal("dec.conv.w", h, KERNEL * h, (1.0 / (KERNEL * h) as f64).sqrt(), &mut rng);
        params.insert_normal("dec.conv.b", 1, h, 0.0, &mut rng);
        params.insert_normal("dec.out.w", c, h, (1.0 / h as f64).sqrt(), &mut rng);
        params.insert_normal("dec.out.b", 1, c, 0.0, &mut rng);
        let adam = Adam::new(&params, lr);
        TemporalVae { cfg, params, adam, rng }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Loss terms and parameter gradients for one clip with fixed noise `eps`.
    fn clip_objective(&self, clip: &MotionSeq, eps: &[f64], beta: f64) -> Result<(f64, f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let x = tape.leaf(motion_tensor(clip));
        let (mu, lv) = encoder_graph(&mut tape, &p, x)?;

        let half = tape.scale(lv, 0.5);
        let std = tape.exp(half);
        let e = tape.leaf(Tensor::row_vector(eps.to_vec()));
        let noise = tape.mul(std, e)?;
        let z = tape.add(mu, noise)?;

        let tf = tape.leaf(time_features(clip.frames()));
        let ht = tape.linear(tf, p.var("dec.t.w")?, p.var("dec.t.b")?)?;
        let hz = tape.linear(z, p.var("dec.z.w")?, p.var("dec.z.b")?)?;
        let h = tape.add_row(ht, hz)?;
        let h = tape.silu(h);
        let h = tape.conv(h, p.var("dec.conv.w")?, p.var("dec.conv.b")?, KERNEL, 1)?;
        let h = tape.silu(h);
        let recon = tape.linear(h, p.var("dec.out.w")?, p.var("dec.out.b")?)?;
        let diff = tape.sub(recon, x)?;
        let sq = tape.sum_squares(diff);
        let n = clip.data().len() as f64;
        let recon_mse = tape.value(sq).data[0] / n;

        let mu_v = &tape.value(mu).data;
        let lv_v = &tape.value(lv).data;
        let kl: f64 = mu_v.iter().zip(lv_v).map(|(m, l)| 0.5 * (m * m + l.exp() - 1.0 - l)).sum();

        let mut g = if beta > 0.0 {
            let musq = tape.sum_squares(mu);
            let elv = tape.exp(lv);
            let lin = tape.sub(elv, lv)?;
            let lin = tape.sum(lin);
            let kl_node = tape.add(musq, lin)?;
            let kl_node = tape.scale(kl_node, 0.5);
            let recon_node = tape.scale(sq, 1.0 / n);
            let weighted_kl = tape.scale(kl_node, beta);
            let total = tape.add(recon_node, weighted_kl)?;
            tape.backward(total)?
        } else {
            let recon_node = tape.scale(sq, 1.0 / n);
            tape.backward(recon_node)?
        };
        Ok((recon_mse, kl, p.collect(&mut g)))
    }

    /// One Adam step on `recon + beta * KL`, averaged over `batch`.
    pub fn train_step(&mut self, batch: &[MotionSeq], beta: f64) -> Result<VaeStepStats> {
        if batch.is_empty() {
            return Err(Error::BadConfig("empty VAE batch".into()));
        }
        for clip in batch {
            check_length(clip)?;
            if clip.channels() != self.cfg.channels {
                return Err(Error::ShapeMismatch(format!(
                    "VAE expects {} channels, got {}",
                    self.cfg.channels,
                    clip.channels()
                )));
            }
        }
        let d = self.cfg.embedding_dim();
        let noise: Vec<Vec<f64>> =
            batch.iter().map(|_| (0..d).map(|_| self.rng.sample(StandardNormal)).collect()).collect();
        let mut grads = self.params.zeros_like();
        let mut stats = VaeStepStats { recon_mse: 0.0, kl: 0.0 };
        let w = 1.0 / batch.len() as f64;
        for (clip, eps) in batch.iter().zip(&noise) {
            let (r, k, g) = self.clip_objective(clip, eps, beta)?;
            stats.recon_mse += w * r;
            stats.kl += w * k;
            accumulate(&mut grads, &g, w);
        }
        if !stats.recon_mse.is_finite() || !stats.kl.is_finite() {
            return Err(Error::NonFiniteLoss(format!("VAE step: recon {}, kl {}", stats.recon_mse, stats.kl)));
        }
        self.adam.step(&mut self.params, &grads)?;
        Ok(stats)
    }

    /// Reconstruction MSE of `clip` through the mean path (no sampling).
    pub fn reconstruction_mse(&self, clip: &MotionSeq) -> Result<f64> {
        let zeros = vec![0.0; self.cfg.embedding_dim()];
        Ok(self.clip_objective(clip, &zeros, 0.0)?.0)
    }

    /// A frozen copy of the encoder half.
    pub fn encoder(&self) -> TemporalEncoder {
        let mut params = ParamStore::new();
        for (n, t) in self.params.iter().filter(|(n, _)| n.starts_with("enc.")) {
            params.insert(n, t.clone());
        }
        TemporalEncoder { cfg: self.cfg, params, frozen: true }
    }
}
