//! Built-in differentiable operators and their `Var` conveniences.

use super::conv::{matmul, matmul_a_bt, matmul_at_b, Conv2d, Conv2dParams};
use super::tape::{Function, Var};
use super::tensor::Tensor;
use crate::error::{shape_err, Result};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

struct Elementwise(Binary);

impl Function for Elementwise {
    fn name(&self) -> &'static str {
        match self.0 {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (a, b) = (inputs[0], inputs[1]);
        same_shape(self.name(), a, b)?;
        Ok(match self.0 {
            Binary::Add => a.zip_map(b, |x, y| x + y),
            Binary::Sub => a.zip_map(b, |x, y| x - y),
            Binary::Mul => a.zip_map(b, |x, y| x * y),
        })
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(match self.0 {
            Binary::Add => vec![Some(g.clone()), Some(g.clone())],
            Binary::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
            Binary::Mul => vec![Some(g.zip_map(inputs[1], |a, b| a * b)), Some(g.zip_map(inputs[0], |a, b| a * b))],
        })
    }
}

/// Unary maps whose derivative depends on the input only.
#[derive(Clone, Copy)]
enum Unary {
    Scale(f64),
    AddScalar(f64),
    Abs,
    Square,
    Relu,
    LeakyRelu(f64),
}

impl Unary {
    fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Scale(c) => c * x,
            Unary::AddScalar(c) => x + c,
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu(s) => if x > 0.0 { x } else { s * x },
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Unary::Scale(c) => c,
            Unary::AddScalar(_) => 1.0,
            Unary::Abs => if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 },
            Unary::Square => 2.0 * x,
            Unary::Relu => if x > 0.0 { 1.0 } else { 0.0 },
            Unary::LeakyRelu(s) => if x > 0.0 { 1.0 } else { s },
        }
    }
}

struct Pointwise(Unary);

impl Function for Pointwise {
    fn name(&self) -> &'static str {
        match self.0 {
            Unary::Scale(_) => "scale",
            Unary::AddScalar(_) => "add_scalar",
            Unary::Abs => "abs",
            Unary::Square => "square",
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
        }
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let f = self.0;
        Ok(inputs[0].map(|x| f.eval(x)))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let f = self.0;
        Ok(vec![Some(g.zip_map(inputs[0], |gv, x| gv * f.derivative(x)))])
    }
}

/// Mean of all elements, returned as a 0-d tensor.
struct Mean;

impl Function for Mean {
    fn name(&self) -> &'static str {
        "mean"
    }
    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        if x.is_empty() {
            return shape_err("mean", "empty tensor");
        }
        Ok(Tensor::scalar(x.sum() / x.len() as f64))
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let x = inputs[0];
        Ok(vec![Some(Tensor::full(x.shape(), g.item() / x.len() as f64))])
    }
}

/// Concatenation of 4-d tensors along the channel axis.
struct ConcatChannels;

impl Function for ConcatChannels {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (b, _, h, w) = inputs[0].dims4("concat")?;
        let mut channels = 0;
        for t in inputs {
            let (tb, tc, th, tw) = t.dims4("concat")?;
            if (tb, th, tw) != (b, h, w) {
                return shape_err("concat", format!("{:?} vs {:?}", t.shape(), inputs[0].shape()));
            }
            channels += tc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(b * channels * hw);
        for bi in 0..b {
            for t in inputs {
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[bi * c * hw..(bi + 1) * c * hw]);
            }
        }
        Tensor::new(vec![b, channels, h, w], out)
    }
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (b, total, h, w) = out.dims4("concat")?;
        let hw = h * w;
        let mut grads: Vec<Vec<f64>> = inputs.iter().map(|t| Vec::with_capacity(t.len())).collect();
        for bi in 0..b {
            let mut offset = bi * total * hw;
            for (t, dst) in inputs.iter().zip(grads.iter_mut()) {
                let n = t.shape()[1] * hw;
                dst.extend_from_slice(&g.data()[offset..offset + n]);
                offset += n;
            }
        }
        inputs.iter().zip(grads).map(|(t, d)| Tensor::new(t.shape().to_vec(), d).map(Some)).collect()
    }
}

/// [B, C, H, W] → [B, C] averaging over pixels, optionally over a per-sample
/// pixel mask [B, H, W] only.
struct AvgPool {
    weights: Option<Tensor>,
    counts: Vec<f64>,
}

impl Function for AvgPool {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }
    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        let (b, c, h, w) = x.dims4("global_avg_pool")?;
        let hw = h * w;
        if let Some(m) = &self.weights {
            if m.shape() != [b, h, w] {
                return shape_err("global_avg_pool", format!("mask {:?} for input {:?}", m.shape(), x.shape()));
            }
        }
        self.counts = (0..b)
            .map(|bi| match &self.weights {
                Some(m) => m.data()[bi * hw..(bi + 1) * hw].iter().sum::<f64>().max(1.0),
                None => hw as f64,
            })
            .collect();
        let mut out = vec![0.0; b * c];
        for bi in 0..b {
            for ci in 0..c {
                let plane = &x.data()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                let s: f64 = match &self.weights {
                    Some(m) => plane.iter().zip(&m.data()[bi * hw..(bi + 1) * hw]).map(|(v, m)| v * m).sum(),
                    None => plane.iter().sum(),
                };
                out[bi * c + ci] = s / self.counts[bi];
            }
        }
        Tensor::new(vec![b, c], out)
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let x = inputs[0];
        let (b, c, h, w) = x.dims4("global_avg_pool")?;
        let hw = h * w;
        let mut dx = vec![0.0; x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let gv = g.data()[bi * c + ci] / self.counts[bi];
                let plane = &mut dx[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                match &self.weights {
                    Some(m) => plane.iter_mut().zip(&m.data()[bi * hw..(bi + 1) * hw]).for_each(|(d, m)| *d = gv * m),
                    None => plane.fill(gv),
                }
            }
        }
        Ok(vec![Some(Tensor::new(x.shape().to_vec(), dx)?)])
    }
}

/// y = x·Wᵀ + b with x [B, in], W [out, in], b [out].
struct Linear;

impl Function for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let [x, w, bias] = inputs else { return shape_err("linear", "expects (input, weight, bias)") };
        let (b, n_in) = x.dims2("linear")?;
        let (n_out, w_in) = w.dims2("linear")?;
        if w_in != n_in || bias.shape() != [n_out] {
            return shape_err("linear", format!("input {:?}, weight {:?}, bias {:?}", x.shape(), w.shape(), bias.shape()));
        }
        let mut out = vec![0.0; b * n_out];
        matmul_a_bt(x.data(), w.data(), b, n_in, n_out, &mut out);
        for row in out.chunks_mut(n_out) {
            row.iter_mut().zip(bias.data()).for_each(|(y, c)| *y += c);
        }
        Tensor::new(vec![b, n_out], out)
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (b, n_in) = x.dims2("linear")?;
        let n_out = w.shape()[0];
        let dx = if needs[0] {
            let mut dx = vec![0.0; b * n_in];
            matmul(g.data(), w.data(), b, n_out, n_in, &mut dx);
            Some(Tensor::new(vec![b, n_in], dx)?)
        } else {
            None
        };
        let mut dw = vec![0.0; n_out * n_in];
        matmul_at_b(g.data(), x.data(), n_out, b, n_in, &mut dw);
        let mut db = vec![0.0; n_out];
        for row in g.data().chunks(n_out) {
            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
        }
        Ok(vec![dx, Some(Tensor::new(vec![n_out, n_in], dw)?), Some(Tensor::new(vec![n_out], db)?)])
    }
}

/// Per-instance, per-channel normalisation with affine terms
/// (gamma [C], beta [C]); biased variance, ε inside the square root.
struct InstanceNorm {
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Function for InstanceNorm {
    fn name(&self) -> &'static str {
        "instance_norm"
    }
    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let [x, gamma, beta] = inputs else { return shape_err("instance_norm", "expects (input, gamma, beta)") };
        let (b, c, h, w) = x.dims4("instance_norm")?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return shape_err("instance_norm", format!("affine terms must have shape [{c}]"));
        }
        let hw = h * w;
        let n = hw as f64;
        self.normalized = vec![0.0; x.len()];
        self.inv_std = vec![0.0; b * c];
        let mut out = vec![0.0; x.len()];
        for p in 0..b * c {
            let ci = p % c;
            let plane = &x.data()[p * hw..(p + 1) * hw];
            let mean = plane.iter().sum::<f64>() / n;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
            self.inv_std[p] = inv;
            for i in 0..hw {
                let xh = (plane[i] - mean) * inv;
                self.normalized[p * hw + i] = xh;
                out[p * hw + i] = gamma.data()[ci] * xh + beta.data()[ci];
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let (b, c, h, w) = x.dims4("instance_norm")?;
        let hw = h * w;
        let n = hw as f64;
        let mut dx = vec![0.0; x.len()];
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for p in 0..b * c {
            let ci = p % c;
            let gp = &g.data()[p * hw..(p + 1) * hw];
            let xh = &self.normalized[p * hw..(p + 1) * hw];
            let sum_g: f64 = gp.iter().sum();
            let sum_gx: f64 = gp.iter().zip(xh).map(|(a, b)| a * b).sum();
            dgamma[ci] += sum_gx;
            dbeta[ci] += sum_g;
            let scale = gamma.data()[ci] * self.inv_std[p] / n;
            for i in 0..hw {
                dx[p * hw + i] = scale * (n * gp[i] - sum_g - xh[i] * sum_gx);
            }
        }
        Ok(vec![
            Some(Tensor::new(x.shape().to_vec(), dx)?),
            Some(Tensor::new(vec![c], dgamma)?),
            Some(Tensor::new(vec![c], dbeta)?),
        ])
    }
}

impl<'t> Var<'t> {
    fn unary(self, f: Unary) -> Result<Var<'t>> {
        self.tape().apply(Pointwise(f), &[self])
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape().apply(Elementwise(Binary::Add), &[self, other])
    }
    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape().apply(Elementwise(Binary::Sub), &[self, other])
    }
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape().apply(Elementwise(Binary::Mul), &[self, other])
    }
    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary(Unary::Scale(c))
    }
    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary(Unary::AddScalar(c))
    }
    pub fn abs(self) -> Result<Var<'t>> {
        self.unary(Unary::Abs)
    }
    pub fn square(self) -> Result<Var<'t>> {
        self.unary(Unary::Square)
    }
    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(Unary::Relu)
    }
    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t>> {
        self.unary(Unary::LeakyRelu(slope))
    }
    pub fn mean(self) -> Result<Var<'t>> {
        self.tape().apply(Mean, &[self])
    }

    /// Mean absolute difference.
    pub fn l1(self, other: Var<'t>) -> Result<Var<'t>> {
        self.sub(other)?.abs()?.mean()
    }

    pub fn conv2d(self, weight: Var<'t>, bias: Var<'t>, params: Conv2dParams) -> Result<Var<'t>> {
        self.tape().apply(Conv2d::new(params), &[self, weight, bias])
    }
    pub fn linear(self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        self.tape().apply(Linear, &[self, weight, bias])
    }
    pub fn instance_norm(self, gamma: Var<'t>, beta: Var<'t>) -> Result<Var<'t>> {
        self.tape().apply(InstanceNorm { normalized: Vec::new(), inv_std: Vec::new() }, &[self, gamma, beta])
    }
    pub fn global_avg_pool(self) -> Result<Var<'t>> {
        self.tape().apply(AvgPool { weights: None, counts: Vec::new() }, &[self])
    }
    /// Average over the pixels where `mask` [B, H, W] is non-zero.
    pub fn masked_avg_pool(self, mask: Tensor) -> Result<Var<'t>> {
        self.tape().apply(AvgPool { weights: Some(mask), counts: Vec::new() }, &[self])
    }

    pub fn concat_channels(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let Some(first) = parts.first() else { return shape_err("concat", "no inputs") };
        first.tape().apply(ConcatChannels, parts)
    }
}
