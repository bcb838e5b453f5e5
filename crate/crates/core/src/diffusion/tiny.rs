//! A small per-position MLP denoiser with hand-written backpropagation.
//!
//! Every latent position of every frame is mapped independently from
//! `[x_t, reference, color condition, depth condition, task one-hot, α, σ]`
//! through two tanh layers to the raw output. Weights are shared across
//! positions and frames.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Denoiser, NoiseSchedule};
use crate::conditioning::ConditionStack;
use crate::error::{Error, Result};
use crate::modality::LatentTensor;

const MAGIC: &[u8; 8] = b"SFTD0001";

/// What the raw network output is trained to match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    V,
    Eps,
}

/// A denoiser exposing flat parameters and a backward pass for its raw output.
pub trait TrainableDenoiser: Denoiser {
    fn objective(&self) -> Objective;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn raw_output(&self, x_t: &LatentTensor, t: usize, cond: &ConditionStack) -> Result<LatentTensor>;
    /// Gradient of `Σ grad_out ⊙ raw_output` with respect to the parameters.
    fn raw_backward(
        &self,
        x_t: &LatentTensor,
        t: usize,
        cond: &ConditionStack,
        grad_out: &LatentTensor,
    ) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TinyConfig {
    pub channels: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyDenoiser {
    channels: usize,
    width: usize,
    objective: Objective,
    params: Vec<f64>,
    sched: NoiseSchedule,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    layer_sizes: [usize; 4],
    objective: Objective,
    schedule_steps: usize,
    schedule_digest: String,
    param_count: usize,
}

struct Layout {
    input: usize,
    width: usize,
    out: usize,
}

impl Layout {
    fn w1(&self) -> usize {
        0
    }
    fn b1(&self) -> usize {
        self.width * self.input
    }
    fn w2(&self) -> usize {
        self.b1() + self.width
    }
    fn b2(&self) -> usize {
        self.w2() + self.width * self.width
    }
    fn w3(&self) -> usize {
        self.b2() + self.width
    }
    fn b3(&self) -> usize {
        self.w3() + self.out * self.width
    }
    fn total(&self) -> usize {
        self.b3() + self.out
    }
}

impl TinyDenoiser {
    pub fn new(cfg: TinyConfig, objective: Objective, sched: NoiseSchedule, seed: u64) -> Result<Self> {
        if cfg.channels == 0 || cfg.width == 0 {
            return Err(Error::invalid("denoiser channels and width must be positive"));
        }
        let layout = Self::layout_for(cfg.channels, cfg.width);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total()];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize, gain: f64| {
            let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.gen_range(-bound..bound);
            }
        };
        fill(layout.w1()..layout.b1(), layout.input, layout.width, 1.0);
        fill(layout.w2()..layout.b2(), layout.width, layout.width, 1.0);
        fill(layout.w3()..layout.b3(), layout.width, layout.out, 0.1);
        Ok(Self {
            channels: cfg.channels,
            width: cfg.width,
            objective,
            params,
            sched,
        })
    }

    fn layout_for(channels: usize, width: usize) -> Layout {
        Layout {
            input: 4 * channels + 5,
            width,
            out: channels,
        }
    }

    fn layout(&self) -> Layout {
        Self::layout_for(self.channels, self.width)
    }

    pub fn config(&self) -> TinyConfig {
        TinyConfig {
            channels: self.channels,
            width: self.width,
        }
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check(&self, x_t: &LatentTensor, cond: &ConditionStack) -> Result<()> {
        if cond.frame_shape().2 != self.channels {
            return Err(Error::shape(
                format!("{} latent channels", self.channels),
                format!("{}", cond.frame_shape().2),
            ));
        }
        let (h, w, c) = cond.clip_shape();
        if x_t.shape() != (h, w, c) {
            return Err(Error::shape(format!("{:?}", (h, w, c)), format!("{:?}", x_t.shape())));
        }
        Ok(())
    }

    fn features(&self, x_t: &LatentTensor, t: usize, cond: &ConditionStack, pos: usize, out: &mut [f64]) {
        let c = self.channels;
        let (fh, fw, _) = cond.frame_shape();
        let frame_len = fh * fw;
        let frame = pos / frame_len;
        let local = pos % frame_len;
        let range = local * c..(local + 1) * c;
        out[..c].copy_from_slice(&x_t.data[pos * c..(pos + 1) * c]);
        out[c..2 * c].copy_from_slice(&cond.ref_latent().data[range.clone()]);
        out[2 * c..3 * c].copy_from_slice(&cond.color_latents()[frame].data[range.clone()]);
        out[3 * c..4 * c].copy_from_slice(&cond.depth_latents()[frame].data[range]);
        out[4 * c..4 * c + 3].copy_from_slice(&cond.task().one_hot());
        out[4 * c + 3] = self.sched.alpha(t);
        out[4 * c + 4] = self.sched.sigma(t);
    }

    /// Forward pass for one position; fills the hidden activations.
    fn forward_position(&self, input: &[f64], h1: &mut [f64], h2: &mut [f64], out: &mut [f64]) {
        let l = self.layout();
        let p = &self.params;
        for j in 0..l.width {
            let row = &p[l.w1() + j * l.input..l.w1() + (j + 1) * l.input];
            let s: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + p[l.b1() + j];
            h1[j] = s.tanh();
        }
        for j in 0..l.width {
            let row = &p[l.w2() + j * l.width..l.w2() + (j + 1) * l.width];
            let s: f64 = row.iter().zip(h1.iter()).map(|(w, x)| w * x).sum::<f64>() + p[l.b2() + j];
            h2[j] = s.tanh();
        }
        for k in 0..l.out {
            let row = &p[l.w3() + k * l.width..l.w3() + (k + 1) * l.width];
            out[k] = row.iter().zip(h2.iter()).map(|(w, x)| w * x).sum::<f64>() + p[l.b3() + k];
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let l = self.layout();
        let header = Header {
            layer_sizes: [l.input, l.width, l.width, l.out],
            objective: self.objective,
            schedule_steps: self.sched.num_steps(),
            schedule_digest: self.sched.digest(),
            param_count: self.params.len(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(12 + json.len() + 4 * self.params.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        for p in &self.params {
            buf.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    /// Loads a model; the linear schedule is rebuilt and checked against the
    /// stored digest.
    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::format(path, "missing model magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| Error::format(path, "truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let [input, width, width2, out] = header.layer_sizes;
        if width != width2 || input != 4 * out + 5 {
            return Err(Error::format(path, "unsupported layer sizes"));
        }
        let sched = NoiseSchedule::ddpm(header.schedule_steps)?;
        if sched.digest() != header.schedule_digest {
            return Err(Error::format(path, "schedule digest mismatch"));
        }
        let blob = &bytes[12 + hlen..];
        let layout = Self::layout_for(out, width);
        if blob.len() != 4 * layout.total() || header.param_count != layout.total() {
            return Err(Error::format(path, "parameter blob size mismatch"));
        }
        let params = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Ok(Self {
            channels: out,
            width,
            objective: header.objective,
            params,
            sched,
        })
    }
}

impl Denoiser for TinyDenoiser {
    fn predict_v(&self, x_t: &LatentTensor, t: usize, cond: &ConditionStack) -> Result<LatentTensor> {
        let raw = self.raw_output(x_t, t, cond)?;
        match self.objective {
            Objective::V => Ok(raw),
            Objective::Eps => {
                // ε = σ·x_t + α·v  ⇒  v = (ε − σ·x_t) / α
                let (a, s) = (self.sched.alpha(t), self.sched.sigma(t));
                raw.axpby(1.0 / a, x_t, -s / a)
            }
        }
    }
}

impl TrainableDenoiser for TinyDenoiser {
    fn objective(&self) -> Objective {
        self.objective
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn raw_output(&self, x_t: &LatentTensor, t: usize, cond: &ConditionStack) -> Result<LatentTensor> {
        self.check(x_t, cond)?;
        self.sched.check_step(t)?;
        let l = self.layout();
        let mut input = vec![0.0; l.input];
        let (mut h1, mut h2) = (vec![0.0; l.width], vec![0.0; l.width]);
        let mut out = LatentTensor::zeros(x_t.h, x_t.w, x_t.c);
        for pos in 0..x_t.h * x_t.w {
            self.features(x_t, t, cond, pos, &mut input);
            let c = self.channels;
            self.forward_position(&input, &mut h1, &mut h2, &mut out.data[pos * c..(pos + 1) * c]);
        }
        Ok(out)
    }

    fn raw_backward(
        &self,
        x_t: &LatentTensor,
        t: usize,
        cond: &ConditionStack,
        grad_out: &LatentTensor,
    ) -> Result<Vec<f64>> {
        self.check(x_t, cond)?;
        x_t.check_same_shape(grad_out)?;
        self.sched.check_step(t)?;
        let l = self.layout();
        let p = &self.params;
        let c = self.channels;
        let mut grad = vec![0.0; p.len()];
        let mut input = vec![0.0; l.input];
        let (mut h1, mut h2) = (vec![0.0; l.width], vec![0.0; l.width]);
        let mut out = vec![0.0; c];
        let (mut d2, mut d1) = (vec![0.0; l.width], vec![0.0; l.width]);
        for pos in 0..x_t.h * x_t.w {
            self.features(x_t, t, cond, pos, &mut input);
            self.forward_position(&input, &mut h1, &mut h2, &mut out);
            let g_out = &grad_out.data[pos * c..(pos + 1) * c];

            d2.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..c {
                grad[l.b3() + k] += g_out[k];
                for j in 0..l.width {
                    grad[l.w3() + k * l.width + j] += g_out[k] * h2[j];
                    d2[j] += g_out[k] * p[l.w3() + k * l.width + j];
                }
            }
            // Through tanh: d/ds tanh(s) = 1 − tanh².
            for j in 0..l.width {
                d2[j] *= 1.0 - h2[j] * h2[j];
            }
            d1.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..l.width {
                grad[l.b2() + j] += d2[j];
                for i in 0..l.width {
                    grad[l.w2() + j * l.width + i] += d2[j] * h1[i];
                    d1[i] += d2[j] * p[l.w2() + j * l.width + i];
                }
            }
            for i in 0..l.width {
                d1[i] *= 1.0 - h1[i] * h1[i];
            }
            for j in 0..l.width {
                grad[l.b1() + j] += d1[j];
                let row = l.w1() + j * l.input;
                for (g, x) in grad[row..row + l.input].iter_mut().zip(&input) {
                    *g += d1[j] * x;
                }
            }
        }
        Ok(grad)
    }
}
