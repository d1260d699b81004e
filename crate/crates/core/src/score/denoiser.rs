//! Small learned noise predictor trained by denoising score matching.
//!
//! The prediction is a per-dimension baseline fitted to the data plus a
//! multi-layer perceptron residual:
//!
//! ```text
//! eps(x_t, t) = baseline(x_t, t) + MLP([x_t, time_features(t)])
//! ```
//!
//! Per dimension the baseline models the data as a two-component mixture: a
//! "rest" spike at the smallest value (when at least two samples sit exactly
//! there, as silent piano-roll cells do) and a Gaussian fitted to the rest of
//! the samples. Its noise prediction is exact for data with independent
//! dimensions of that form, which gives a full-rank skip path even when the
//! hidden layers are narrow.
//!
//! # File format
//!
//! All integers little-endian.
//!
//! | field | type |
//! |---|---|
//! | magic `b"SCGDEN02"` | 8 bytes |
//! | sample rank `r` | u32 |
//! | sample dims | `r` x u32 |
//! | time feature count | u32 |
//! | layer count `L` | u32 |
//! | per layer: inputs, outputs | 2 x u32 |
//! | schedule steps | u32 |
//! | schedule beta start, beta end | 2 x f64 |
//! | sigma kind (0 posterior, 1 beta) | u32 |
//! | baseline present (0/1) | u32 |
//! | training steps | u32 |
//! | learning rate, final loss | 2 x f32 |
//! | training seed | u64 |
//! | parameters | f32 ... |
//!
//! Parameters are, per layer, the row-major `outputs x inputs` weight matrix
//! followed by the bias; then, if present, five baseline arrays of one value
//! per sample element each: rest weight, rest value, rest variance, active
//! mean, active variance.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Domain};
use crate::schedule::{NoiseSchedule, ScheduleSpec, SigmaKind};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SCGDEN02";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Number of sinusoidal timestep features (even).
    pub time_features: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Floor applied to the fitted per-dimension variances.
    pub variance_floor: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            time_features: 16,
            train_steps: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            variance_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub steps: usize,
    pub learning_rate: f32,
    pub final_loss: f32,
    pub seed: u64,
    /// Minibatch loss per optimizer step; not persisted.
    pub loss_log: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl Dense {
    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn forward(&self, input: &[f32], out: &mut Vec<f32>) {
        out.clear();
        out.extend(
            self.weight
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| b + dot(row, input)),
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Baseline {
    rest_weight: Vec<f32>,
    rest_mean: Vec<f32>,
    rest_var: Vec<f32>,
    mean: Vec<f32>,
    var: Vec<f32>,
}

impl Baseline {
    fn arrays(&self) -> [&Vec<f32>; 5] {
        [
            &self.rest_weight,
            &self.rest_mean,
            &self.rest_var,
            &self.mean,
            &self.var,
        ]
    }

    /// Per-dimension fit; `floor` bounds both variances from below.
    fn fit(dataset: &[Tensor], dim: usize, floor: f64) -> Self {
        let mut b = Baseline {
            rest_weight: Vec::with_capacity(dim),
            rest_mean: Vec::with_capacity(dim),
            rest_var: vec![floor as f32; dim],
            mean: Vec::with_capacity(dim),
            var: Vec::with_capacity(dim),
        };
        let n = dataset.len();
        let mut col = vec![0.0f64; n];
        for j in 0..dim {
            for (c, x) in col.iter_mut().zip(dataset) {
                *c = x.data()[j];
            }
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let at_rest = col.iter().filter(|&&v| v == lo).count();
            let active: Vec<f64> = if at_rest >= 2 {
                col.iter().cloned().filter(|&v| v != lo).collect()
            } else {
                col.clone()
            };
            let rest_weight = 1.0 - active.len() as f64 / n as f64;
            let (m, v) = if active.is_empty() {
                (lo, floor)
            } else {
                let m = active.iter().sum::<f64>() / active.len() as f64;
                let v = active.iter().map(|a| (a - m).powi(2)).sum::<f64>() / active.len() as f64;
                (m, v.max(floor))
            };
            b.rest_weight.push(rest_weight as f32);
            b.rest_mean.push(lo as f32);
            b.mean.push(m as f32);
            b.var.push(v as f32);
        }
        b
    }
}

/// Learned noise predictor. Immutable once trained; evaluation is re-entrant.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedDenoiser {
    sample_shape: Vec<usize>,
    time_features: usize,
    layers: Vec<Dense>,
    baseline: Option<Baseline>,
    schedule: ScheduleSpec,
    meta: TrainingMeta,
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f32>() + tail
}

fn axpy(a: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn silu(z: f32) -> f32 {
    z / (1.0 + (-z).exp())
}

fn silu_grad(z: f32) -> f32 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

/// Sinusoidal features of the integer timestep.
pub fn time_features(t: usize, count: usize) -> Vec<f32> {
    let half = count / 2;
    let mut out = Vec::with_capacity(count);
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out.push(arg.sin() as f32);
        out.push(arg.cos() as f32);
    }
    out
}

impl LearnedDenoiser {
    /// Fresh, untrained network. The output layer starts at zero so the
    /// prediction initially equals the Gaussian baseline (once fitted).
    pub fn untrained(
        sample_shape: &[usize],
        config: &DenoiserConfig,
        schedule: ScheduleSpec,
        seed: u64,
    ) -> Result<Self> {
        if sample_shape.is_empty() || sample_shape.contains(&0) {
            return Err(Error::param(format!("invalid sample shape {sample_shape:?}")));
        }
        if config.time_features == 0 || !config.time_features.is_multiple_of(2) {
            return Err(Error::param("time feature count must be a positive even number"));
        }
        let dim: usize = sample_shape.iter().product();
        let mut widths = vec![dim + config.time_features];
        widths.extend(&config.hidden);
        widths.push(dim);
        let mut rng = substream(seed, Domain::Train, u64::MAX, 0);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (inputs, outputs) = (w[0], w[1]);
                let std = (1.0 / inputs as f64).sqrt();
                let weight = if i == last {
                    vec![0.0; inputs * outputs]
                } else {
                    (0..inputs * outputs)
                        .map(|_| (std * rng.sample::<f64, _>(StandardNormal)) as f32)
                        .collect()
                };
                Dense {
                    inputs,
                    outputs,
                    weight,
                    bias: vec![0.0; outputs],
                }
            })
            .collect();
        Ok(Self {
            sample_shape: sample_shape.to_vec(),
            time_features: config.time_features,
            layers,
            baseline: None,
            schedule,
            meta: TrainingMeta {
                steps: 0,
                learning_rate: config.learning_rate as f32,
                final_loss: f32::NAN,
                seed,
                loss_log: Vec::new(),
            },
        })
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn schedule_spec(&self) -> ScheduleSpec {
        self.schedule
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub fn is_trained(&self) -> bool {
        self.meta.steps > 0
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    fn dim(&self) -> usize {
        self.sample_shape.iter().product()
    }

    fn network_input(&self, x: &[f64], t: usize) -> Vec<f32> {
        let mut input: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        input.extend(time_features(t, self.time_features));
        input
    }

    /// Runs the MLP, keeping pre-activations for backprop.
    fn forward_cached(&self, input: Vec<f32>) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
        let mut acts = vec![input];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(acts.last().unwrap(), &mut z);
            let a = if i + 1 == self.layers.len() {
                z.clone()
            } else {
                z.iter().map(|&v| silu(v)).collect()
            };
            pre.push(z);
            acts.push(a);
        }
        (acts, pre)
    }

    fn forward(&self, input: &[f32]) -> Vec<f32> {
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if i + 1 < self.layers.len() {
                next.iter_mut().for_each(|v| *v = silu(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    fn baseline_into(&self, x: &[f64], alpha_bar: f64, out: &mut [f64]) {
        let Some(b) = &self.baseline else {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        };
        let s = alpha_bar.sqrt();
        let n = (1.0 - alpha_bar).sqrt();
        // Component k: marginal N(s mu_k, abar v_k + 1 - abar); eps is the
        // responsibility-weighted average of the per-component predictions.
        let comp = |x: f64, w: f64, mu: f64, v: f64| {
            let var = alpha_bar * v + 1.0 - alpha_bar;
            let r = x - s * mu;
            (w.ln() - 0.5 * var.ln() - r * r / (2.0 * var), n * r / var)
        };
        for (j, o) in out.iter_mut().enumerate() {
            let w = b.rest_weight[j] as f64;
            let active = comp(x[j], 1.0 - w, b.mean[j] as f64, b.var[j] as f64);
            *o = if w <= 0.0 {
                active.1
            } else {
                let rest = comp(x[j], w, b.rest_mean[j] as f64, b.rest_var[j] as f64);
                if w >= 1.0 {
                    rest.1
                } else {
                    let top = rest.0.max(active.0);
                    let (er, ea) = ((rest.0 - top).exp(), (active.0 - top).exp());
                    (er * rest.1 + ea * active.1) / (er + ea)
                }
            };
        }
    }

    /// Noise prediction at step `t` of `sched`.
    pub fn eps(&self, x: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
        if !self.is_trained() {
            return Err(Error::State("denoiser has not been trained".into()));
        }
        x.ensure_shape(&self.sample_shape)?;
        sched.check_step(t)?;
        if sched.steps() != self.schedule.steps {
            return Err(Error::param(format!(
                "denoiser trained for {} steps, schedule has {}",
                self.schedule.steps,
                sched.steps()
            )));
        }
        self.eps_unchecked(x.data(), t, sched.alpha_bar(t))
    }

    fn eps_unchecked(&self, x: &[f64], t: usize, alpha_bar: f64) -> Result<Tensor> {
        let out = self.forward(&self.network_input(x, t));
        let mut eps = vec![0.0; x.len()];
        self.baseline_into(x, alpha_bar, &mut eps);
        for (e, o) in eps.iter_mut().zip(out) {
            *e += o as f64;
        }
        Tensor::new(self.sample_shape.clone(), eps)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes();
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        u32le(&mut out, self.sample_shape.len());
        for &d in &self.sample_shape {
            u32le(&mut out, d);
        }
        u32le(&mut out, self.time_features);
        u32le(&mut out, self.layers.len());
        for l in &self.layers {
            u32le(&mut out, l.inputs);
            u32le(&mut out, l.outputs);
        }
        u32le(&mut out, self.schedule.steps);
        out.extend_from_slice(&self.schedule.beta_start.to_le_bytes());
        out.extend_from_slice(&self.schedule.beta_end.to_le_bytes());
        u32le(
            &mut out,
            match self.schedule.sigma {
                SigmaKind::Posterior => 0,
                SigmaKind::Beta => 1,
            },
        );
        u32le(&mut out, self.baseline.is_some() as usize);
        u32le(&mut out, self.meta.steps);
        out.extend_from_slice(&self.meta.learning_rate.to_le_bytes());
        out.extend_from_slice(&self.meta.final_loss.to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        let mut put = |vals: &[f32]| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for l in &self.layers {
            put(&l.weight);
            put(&l.bias);
        }
        if let Some(b) = &self.baseline {
            for a in b.arrays() {
                put(a);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad denoiser magic".into()));
        }
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("implausible sample rank {rank}")));
        }
        let sample_shape = (0..rank)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let time_features = r.u32()? as usize;
        let nlayers = r.u32()? as usize;
        if nlayers == 0 || nlayers > 64 {
            return Err(Error::Format(format!("implausible layer count {nlayers}")));
        }
        let dims = (0..nlayers)
            .map(|_| Ok((r.u32()? as usize, r.u32()? as usize)))
            .collect::<Result<Vec<_>>>()?;
        let dim: usize = sample_shape.iter().product();
        if dims[0].0 != dim + time_features
            || dims.last().unwrap().1 != dim
            || dims.windows(2).any(|w| w[0].1 != w[1].0)
        {
            return Err(Error::Format("layer table inconsistent with sample shape".into()));
        }
        let steps = r.u32()? as usize;
        let beta_start = r.f64()?;
        let beta_end = r.f64()?;
        let sigma = match r.u32()? {
            0 => SigmaKind::Posterior,
            1 => SigmaKind::Beta,
            k => return Err(Error::Format(format!("unknown sigma kind {k}"))),
        };
        let has_baseline = r.u32()? != 0;
        let train_steps = r.u32()? as usize;
        let learning_rate = r.f32()?;
        let final_loss = r.f32()?;
        let seed = r.u64()?;
        let mut layers = Vec::with_capacity(nlayers);
        for (inputs, outputs) in dims {
            let weight = r.f32s(inputs * outputs)?;
            let bias = r.f32s(outputs)?;
            layers.push(Dense {
                inputs,
                outputs,
                weight,
                bias,
            });
        }
        let baseline = if has_baseline {
            Some(Baseline {
                rest_weight: r.f32s(dim)?,
                rest_mean: r.f32s(dim)?,
                rest_var: r.f32s(dim)?,
                mean: r.f32s(dim)?,
                var: r.f32s(dim)?,
            })
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after parameters",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            sample_shape,
            time_features,
            layers,
            baseline,
            schedule: ScheduleSpec {
                steps,
                beta_start,
                beta_end,
                sigma,
            },
            meta: TrainingMeta {
                steps: train_steps,
                learning_rate,
                final_loss,
                seed,
                loss_log: Vec::new(),
            },
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("truncated denoiser file at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: i32,
    lr: f32,
}

impl Adam {
    const B1: f32 = 0.9;
    const B2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(sizes: &[usize], lr: f32) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            lr,
        }
    }

    fn begin(&mut self) -> (f32, f32) {
        self.step += 1;
        (1.0 - Self::B1.powi(self.step), 1.0 - Self::B2.powi(self.step))
    }

    fn update(&mut self, slot: usize, params: &mut [f32], grads: &[f32], corr: (f32, f32)) {
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g;
            v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g * g;
            let mh = m[i] / corr.0;
            let vh = v[i] / corr.1;
            params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Fits a denoiser to `dataset` by minimizing `E ||eps - eps_hat(x_t, t)||^2`
/// with `t` uniform over `1..=T`. Deterministic given `seed`.
pub fn train_denoiser(
    dataset: &[Tensor],
    schedule: ScheduleSpec,
    config: &DenoiserConfig,
    seed: u64,
) -> Result<LearnedDenoiser> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::param("training dataset is empty"))?;
    for x in dataset {
        x.ensure_same_shape(first)?;
    }
    if config.batch_size == 0 || config.train_steps == 0 {
        return Err(Error::param("batch size and step count must be positive"));
    }
    let sched = schedule.build()?;
    let mut model = LearnedDenoiser::untrained(first.shape(), config, schedule, seed)?;
    let dim = model.dim();

    model.baseline = Some(Baseline::fit(dataset, dim, config.variance_floor));

    let sizes: Vec<usize> = model
        .layers
        .iter()
        .flat_map(|l| [l.weight.len(), l.bias.len()])
        .collect();
    let mut adam = Adam::new(&sizes, config.learning_rate as f32);
    let mut grads: Vec<Vec<f32>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
    let mut rng = substream(seed, Domain::Train, 0, 0);
    let scale = 1.0 / (dim * config.batch_size) as f32;
    let mut baseline = vec![0.0f64; dim];
    let mut loss_log = Vec::with_capacity(config.train_steps);

    for step in 0..config.train_steps {
        grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
        let mut loss = 0.0f32;
        for _ in 0..config.batch_size {
            let x0 = &dataset[rng.random_range(0..dataset.len())];
            let t = rng.random_range(1..=sched.steps());
            let ab = sched.alpha_bar(t);
            let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
            let eps: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let x_t: Vec<f64> = x0.data().iter().zip(&eps).map(|(x, e)| sa * x + sn * e).collect();
            model.baseline_into(&x_t, ab, &mut baseline);
            let (acts, pre) = model.forward_cached(model.network_input(&x_t, t));
            let out = acts.last().unwrap();
            let mut delta: Vec<f32> = out
                .iter()
                .zip(eps.iter().zip(&baseline))
                .map(|(o, (e, b))| *o - (e - b) as f32)
                .collect();
            loss += delta.iter().map(|d| d * d).sum::<f32>() * scale;
            delta.iter_mut().for_each(|d| *d *= 2.0 * scale);

            for li in (0..model.layers.len()).rev() {
                let layer = &model.layers[li];
                let input = &acts[li];
                {
                    let gw = &mut grads[2 * li];
                    for (o, &d) in delta.iter().enumerate() {
                        if d != 0.0 {
                            axpy(d, input, &mut gw[o * layer.inputs..(o + 1) * layer.inputs]);
                        }
                    }
                }
                for (gb, d) in grads[2 * li + 1].iter_mut().zip(&delta) {
                    *gb += d;
                }
                if li == 0 {
                    break;
                }
                let mut back = vec![0.0f32; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    axpy(d, &layer.weight[o * layer.inputs..(o + 1) * layer.inputs], &mut back);
                }
                delta = back.iter().zip(&pre[li - 1]).map(|(b, z)| b * silu_grad(*z)).collect();
            }
        }
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                message: format!("loss became {loss}"),
            });
        }
        loss_log.push(loss);
        let corr = adam.begin();
        for (li, layer) in model.layers.iter_mut().enumerate() {
            adam.update(2 * li, &mut layer.weight, &grads[2 * li], corr);
            adam.update(2 * li + 1, &mut layer.bias, &grads[2 * li + 1], corr);
        }
    }

    let tail = loss_log.len().min(50);
    model.meta = TrainingMeta {
        steps: config.train_steps,
        learning_rate: config.learning_rate as f32,
        final_loss: loss_log[loss_log.len() - tail..].iter().sum::<f32>() / tail as f32,
        seed,
        loss_log,
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_tensor;

    fn small_schedule() -> ScheduleSpec {
        ScheduleSpec {
            steps: 100,
            beta_start: 1e-3,
            beta_end: 0.2,
            sigma: SigmaKind::Posterior,
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let r = train_denoiser(&[], small_schedule(), &DenoiserConfig::default(), 0);
        assert!(matches!(r, Err(Error::Parameter(_))));
    }

    #[test]
    fn mixed_shapes_rejected() {
        let data = vec![Tensor::zeros(&[2]), Tensor::zeros(&[3])];
        assert!(train_denoiser(&data, small_schedule(), &DenoiserConfig::default(), 0).is_err());
    }

    #[test]
    fn untrained_model_refuses_evaluation() {
        let m = LearnedDenoiser::untrained(&[2], &DenoiserConfig::default(), small_schedule(), 1).unwrap();
        let s = small_schedule().build().unwrap();
        assert!(matches!(m.eps(&Tensor::zeros(&[2]), 5, &s), Err(Error::State(_))));
    }

    #[test]
    fn backprop_matches_finite_differences() {
        // Single-sample loss gradient vs central differences on a few parameters.
        let cfg = DenoiserConfig {
            hidden: vec![5],
            time_features: 4,
            ..Default::default()
        };
        let mut m = LearnedDenoiser::untrained(&[3], &cfg, small_schedule(), 9).unwrap();
        // Give the zero-initialized output layer some weight so every path carries gradient.
        let mut rng = substream(5, Domain::Oracle, 0, 0);
        for w in m.layers[1].weight.iter_mut() {
            *w = rng.random_range(-0.5..0.5);
        }
        let input: Vec<f32> = vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9, 0.5];
        let target = [0.1f32, -0.2, 0.4];
        let loss_of = |m: &LearnedDenoiser| -> f64 {
            m.forward(&input)
                .iter()
                .zip(&target)
                .map(|(o, t)| ((o - t) as f64).powi(2))
                .sum()
        };
        // Analytic gradient via the same backprop used in training.
        let (acts, pre) = m.forward_cached(input.clone());
        let mut delta: Vec<f32> = acts[2].iter().zip(&target).map(|(o, t)| 2.0 * (o - t)).collect();
        let g1: Vec<f32> = {
            let mut g = vec![0.0; m.layers[1].weight.len()];
            for (o, &d) in delta.iter().enumerate() {
                axpy(d, &acts[1], &mut g[o * 5..(o + 1) * 5]);
            }
            g
        };
        let mut back = vec![0.0f32; 5];
        for (o, &d) in delta.iter().enumerate() {
            axpy(d, &m.layers[1].weight[o * 5..(o + 1) * 5], &mut back);
        }
        delta = back.iter().zip(&pre[0]).map(|(b, z)| b * silu_grad(*z)).collect();
        let mut g0 = vec![0.0f32; m.layers[0].weight.len()];
        for (o, &d) in delta.iter().enumerate() {
            axpy(d, &acts[0], &mut g0[o * 7..(o + 1) * 7]);
        }

        let h = 1e-3f32;
        for (layer, grads) in [(0usize, &g0), (1usize, &g1)] {
            for idx in [0usize, 3, 7, 11] {
                let mut mp = m.clone();
                mp.layers[layer].weight[idx] += h;
                let mut mm = m.clone();
                mm.layers[layer].weight[idx] -= h;
                let fd = (loss_of(&mp) - loss_of(&mm)) / (2.0 * h as f64);
                let an = grads[idx] as f64;
                assert!(
                    (fd - an).abs() < 2e-3 * (1.0 + an.abs()),
                    "layer {layer} idx {idx}: {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn single_point_dataset_learns_true_noise() {
        // With one data point c the optimal predictor is (x_t - sqrt(abar) c) / sqrt(1 - abar),
        // which the fitted baseline already represents up to the variance floor.
        let c = Tensor::vector(vec![0.5, -1.0]);
        let data = vec![c.clone(); 4];
        let cfg = DenoiserConfig {
            hidden: vec![16],
            train_steps: 200,
            batch_size: 32,
            variance_floor: 1e-8,
            ..Default::default()
        };
        let spec = small_schedule();
        let m = train_denoiser(&data, spec, &cfg, 3).unwrap();
        let s = spec.build().unwrap();
        let mut err = 0.0;
        let mut count = 0;
        for t in [20, 50, 90] {
            for k in 0..20 {
                let eps = normal_tensor(&[2], 17, Domain::Oracle, t as u64, k);
                let x_t = crate::schedule::forward_diffuse(&c, t, &eps, &s).unwrap();
                let pred = m.eps(&x_t, t, &s).unwrap();
                err += pred
                    .lincomb(1.0, &eps, -1.0)
                    .unwrap()
                    .data()
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>();
                count += 2;
            }
        }
        assert!(err / (count as f64) < 1e-3, "validation mse {}", err / count as f64);
        assert!(m.meta().final_loss < 1e-2);
    }

    #[test]
    fn training_is_deterministic_and_roundtrips() {
        let data: Vec<Tensor> = (0..16).map(|i| normal_tensor(&[3], 2, Domain::Oracle, 0, i)).collect();
        let cfg = DenoiserConfig {
            hidden: vec![8],
            train_steps: 20,
            batch_size: 4,
            ..Default::default()
        };
        let a = train_denoiser(&data, small_schedule(), &cfg, 11).unwrap();
        let b = train_denoiser(&data, small_schedule(), &cfg, 11).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let back = LearnedDenoiser::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), a.to_bytes());
        let s = small_schedule().build().unwrap();
        let x = Tensor::vector(vec![0.1, 0.2, 0.3]);
        assert_eq!(back.eps(&x, 7, &s).unwrap(), a.eps(&x, 7, &s).unwrap());
    }

    #[test]
    fn truncated_file_rejected() {
        let data = vec![Tensor::vector(vec![1.0, 2.0])];
        let cfg = DenoiserConfig {
            hidden: vec![4],
            train_steps: 2,
            batch_size: 2,
            ..Default::default()
        };
        let m = train_denoiser(&data, small_schedule(), &cfg, 0).unwrap();
        let bytes = m.to_bytes();
        assert!(matches!(
            LearnedDenoiser::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(LearnedDenoiser::from_bytes(&bad), Err(Error::Format(_))));
    }
}
