//! Generator (local/global pathways with PK and plasma heads) and the
//! PatchGAN discriminator.

use dcepk_core::{PkMap, TkModel};
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Conv2dParams, ParamStore, Tensor, Var};
use crate::error::{shape_err, NnError, Result};

/// Network-space scale of each PK parameter (K^trans in min⁻¹).
pub fn pk_scale_factors(model: TkModel) -> Vec<f64> {
    match model {
        TkModel::ETofts => vec![20.0, 40.0, 4.0],
        TkModel::Patlak => vec![40.0, 8.0],
    }
}

/// Plasma curves enter and leave the network multiplied by this factor.
pub const CP_SCALE: f64 = 0.1;

/// Upper physical bound per parameter, model order.
fn pk_upper_bounds(model: TkModel) -> Vec<f64> {
    vec![1.0; model.n_params()]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub in_channels: usize,
    pub base_channels: usize,
    pub dilations: [usize; 3],
    pub out_pk_channels: usize,
    pub cp_hidden_units: usize,
}

impl GeneratorSpec {
    pub fn new(model: TkModel, n_frames: usize) -> Self {
        GeneratorSpec {
            in_channels: n_frames,
            base_channels: 64,
            dilations: [2, 4, 8],
            out_pk_channels: model.n_params(),
            cp_hidden_units: 256,
        }
    }

    pub fn with_base_channels(mut self, base: usize) -> Self {
        self.base_channels = base;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels < 2 || self.base_channels == 0 || self.cp_hidden_units == 0 {
            return Err(NnError::Config(format!("invalid generator spec {self:?}")));
        }
        if !(2..=3).contains(&self.out_pk_channels) || self.dilations.contains(&0) {
            return Err(NnError::Config(format!("invalid generator spec {self:?}")));
        }
        Ok(())
    }

    /// Smallest accepted patch side.
    pub fn min_input(&self) -> usize {
        2 * self.dilations.iter().max().copied().unwrap_or(1) + 1
    }

    /// Pixels of context on each side that influence one output pixel.
    pub fn receptive_radius(&self) -> usize {
        1 + self.dilations.iter().sum::<usize>().max(3)
    }

    pub fn model(&self) -> TkModel {
        if self.out_pk_channels == 3 { TkModel::ETofts } else { TkModel::Patlak }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    pub base_filters: usize,
    pub n_layers: usize,
}

impl DiscriminatorSpec {
    pub fn new(in_channels: usize) -> Self {
        DiscriminatorSpec { in_channels, base_filters: 32, n_layers: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_filters == 0 || self.n_layers < 2 {
            return Err(NnError::Config(format!("invalid discriminator spec {self:?}")));
        }
        Ok(())
    }

    fn layer_params(&self, i: usize) -> Conv2dParams {
        let stride = if i + 1 < self.n_layers { 2 } else { 1 };
        Conv2dParams { stride, padding: 1, dilation: 1 }
    }

    /// Score-map side for a square input side, if the input is large enough.
    pub fn output_size(&self, input: usize) -> Option<usize> {
        let mut s = input;
        for i in 0..self.n_layers {
            s = self.layer_params(i).output_size(s, 4)?;
        }
        FINAL_LAYER.output_size(s, 4)
    }
}

const FINAL_LAYER: Conv2dParams = Conv2dParams { stride: 1, padding: 1, dilation: 1 };

/// Indices of a convolution's weight and bias in a [`ParamStore`].
#[derive(Clone, Copy, Debug)]
struct ConvLayer {
    weight: usize,
    bias: usize,
    params: Conv2dParams,
}

impl ConvLayer {
    fn forward<'t>(&self, p: &BoundParams<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.conv2d(p.var(self.weight), p.var(self.bias), self.params)
    }
}

#[derive(Clone, Copy, Debug)]
struct DenseLayer {
    weight: usize,
    bias: usize,
}

impl DenseLayer {
    fn forward<'t>(&self, p: &BoundParams<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.linear(p.var(self.weight), p.var(self.bias))
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("positive std");
        Tensor::from_fn(shape, |_| dist.sample(&mut self.rng))
    }

    /// He-normal weights (gain √2 for rectified layers, 1 for linear outputs)
    /// and zero bias.
    fn conv(&mut self, store: &mut ParamStore, name: &str, shape: [usize; 4], params: Conv2dParams, gain: f64) -> ConvLayer {
        let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
        let weight = store.insert(format!("{name}.weight"), self.normal(&shape, gain / fan_in.sqrt()));
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[shape[0]]));
        ConvLayer { weight, bias, params }
    }

    fn dense(&mut self, store: &mut ParamStore, name: &str, out: usize, inp: usize, gain: f64) -> DenseLayer {
        let weight = store.insert(format!("{name}.weight"), self.normal(&[out, inp], gain / (inp as f64).sqrt()));
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[out]));
        DenseLayer { weight, bias }
    }
}

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

/// Generator outputs for one batch.
pub struct GeneratorOutput<'t> {
    /// Scaled PK maps [B, out_pk, H, W].
    pub pk: Var<'t>,
    /// Scaled plasma curve [B, n_frames].
    pub cp: Var<'t>,
}

pub struct Generator {
    spec: GeneratorSpec,
    pub params: ParamStore,
    initial: ConvLayer,
    local: [ConvLayer; 3],
    global: [ConvLayer; 3],
    pk_head: [ConvLayer; 3],
    cp_head: [DenseLayer; 2],
}

impl Generator {
    pub fn new(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed) };
        let mut store = ParamStore::default();
        let (t, b) = (spec.in_channels, spec.base_channels);
        let same3 = Conv2dParams::same(3, 1);
        let one = Conv2dParams::same(1, 1);
        let initial = init.conv(&mut store, "initial", [b, t, 3, 3], same3, RELU_GAIN);
        let local = [0, 1, 2].map(|i| init.conv(&mut store, &format!("local{i}"), [b, b, 3, 3], same3, RELU_GAIN));
        let global = [0, 1, 2].map(|i| {
            init.conv(&mut store, &format!("global{i}"), [b, b, 3, 3], Conv2dParams::same(3, spec.dilations[i]), RELU_GAIN)
        });
        let pk_head = [
            init.conv(&mut store, "pk0", [b, 2 * b, 1, 1], one, RELU_GAIN),
            init.conv(&mut store, "pk1", [b, b, 1, 1], one, RELU_GAIN),
            init.conv(&mut store, "pk2", [spec.out_pk_channels, b, 1, 1], one, 1.0),
        ];
        let cp_head = [
            init.dense(&mut store, "cp0", spec.cp_hidden_units, 2 * b, RELU_GAIN),
            init.dense(&mut store, "cp1", t, spec.cp_hidden_units, 1.0),
        ];
        Ok(Generator { spec, params: store, initial, local, global, pk_head, cp_head })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    /// `x` is [B, n_frames, H, W]. With `mask` [B, H, W] the plasma head
    /// pools over masked pixels only.
    pub fn forward<'t>(&self, p: &BoundParams<'t>, x: Var<'t>, mask: Option<&Tensor>) -> Result<GeneratorOutput<'t>> {
        let shape = x.shape();
        let [_, t, h, w] = shape[..] else { return shape_err("generator", format!("expected [B, T, H, W], got {shape:?}")) };
        if t != self.spec.in_channels {
            return shape_err("generator", format!("{t} input frames, spec expects {}", self.spec.in_channels));
        }
        let min = self.spec.min_input();
        if h < min || w < min {
            return shape_err("generator", format!("{h}x{w} input is below the {min}x{min} minimum"));
        }
        let f0 = self.initial.forward(p, x)?.relu()?;
        let mut local = f0;
        for layer in &self.local {
            local = layer.forward(p, local)?.relu()?;
        }
        let mut global = f0;
        for layer in &self.global {
            global = layer.forward(p, global)?.relu()?;
        }
        let features = Var::concat_channels(&[local, global])?;

        let mut pk = features;
        for (i, layer) in self.pk_head.iter().enumerate() {
            pk = layer.forward(p, pk)?;
            if i + 1 < self.pk_head.len() {
                pk = pk.relu()?;
            }
        }
        let pooled = match mask {
            Some(m) => features.masked_avg_pool(m.clone())?,
            None => features.global_avg_pool()?,
        };
        let hidden = self.cp_head[0].forward(p, pooled)?.relu()?;
        let cp = self.cp_head[1].forward(p, hidden)?;
        Ok(GeneratorOutput { pk, cp })
    }
}

pub struct Discriminator {
    spec: DiscriminatorSpec,
    pub params: ParamStore,
    layers: Vec<(ConvLayer, Option<(usize, usize)>)>,
    last: ConvLayer,
}

pub const DISCRIMINATOR_SLOPE: f64 = 0.2;

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed) };
        let mut store = ParamStore::default();
        let mut layers = Vec::with_capacity(spec.n_layers);
        let mut channels = spec.in_channels;
        let gain = (2.0 / (1.0 + DISCRIMINATOR_SLOPE * DISCRIMINATOR_SLOPE)).sqrt();
        for i in 0..spec.n_layers {
            let filters = spec.base_filters << i;
            let conv = init.conv(&mut store, &format!("d{i}"), [filters, channels, 4, 4], spec.layer_params(i), gain);
            let norm = (i > 0).then(|| {
                let g = store.insert(format!("d{i}.norm.gamma"), Tensor::full(&[filters], 1.0));
                let b = store.insert(format!("d{i}.norm.beta"), Tensor::zeros(&[filters]));
                (g, b)
            });
            layers.push((conv, norm));
            channels = filters;
        }
        let last = init.conv(&mut store, "final", [1, channels, 4, 4], FINAL_LAYER, 1.0);
        Ok(Discriminator { spec, params: store, layers, last })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    /// Raw score map [B, 1, h, w] for scaled PK patches [B, C, H, W].
    pub fn forward<'t>(&self, p: &BoundParams<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let [_, c, h, w] = shape[..] else { return shape_err("discriminator", format!("expected [B, C, H, W], got {shape:?}")) };
        if c != self.spec.in_channels {
            return shape_err("discriminator", format!("{c} channels, spec expects {}", self.spec.in_channels));
        }
        if self.spec.output_size(h).is_none() || self.spec.output_size(w).is_none() {
            return shape_err("discriminator", format!("{h}x{w} input is too small"));
        }
        let mut y = x;
        for (conv, norm) in &self.layers {
            y = conv.forward(p, y)?;
            if let Some((g, b)) = norm {
                y = y.instance_norm(p.var(*g), p.var(*b))?;
            }
            y = y.leaky_relu(DISCRIMINATOR_SLOPE)?;
        }
        self.last.forward(p, y)
    }
}

/// Unscales one generator PK output ([P, H, W] or [1, P, H, W]) and clamps
/// every parameter to [0, bound].
pub fn clamp_inference_output(pk: &Tensor, model: TkModel) -> Result<PkMap> {
    let (p, h, w) = match pk.shape() {
        &[p, h, w] | &[1, p, h, w] => (p, h, w),
        s => return shape_err("clamp_inference_output", format!("unexpected shape {s:?}")),
    };
    if p != model.n_params() {
        return shape_err("clamp_inference_output", format!("{p} channels for {model}"));
    }
    let scales = pk_scale_factors(model);
    let upper = pk_upper_bounds(model);
    let hw = h * w;
    let data: Vec<f64> = pk
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / hw;
            let x = v / scales[c];
            if x.is_nan() { 0.0 } else { x.clamp(0.0, upper[c]) }
        })
        .collect();
    let stack = Array3::from_shape_vec((p, h, w), data).expect("sized from the tensor");
    Ok(PkMap::from_stack(model, &stack)?)
}
