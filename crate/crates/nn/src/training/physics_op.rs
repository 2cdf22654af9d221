//! Differentiable f_TK: scaled PK maps and a scaled plasma curve to relative
//! signal enhancement S/S0 − 1.

use dcepk_core::physics::{ExpConvStep, SpgrSignal};
use dcepk_core::{per_min_to_per_s, AcqParams, TkModel};

use crate::autodiff::{Function, Tensor};
use crate::error::{shape_err, Result};
use crate::networks::{pk_scale_factors, CP_SCALE};

/// Lower clamp on v_e inside the training forward model.
pub const VE_FLOOR: f64 = 1e-3;
/// Lower clamp on tissue concentration (mM), tightened further when the
/// protocol needs it to keep the signal equation finite.
pub const CT_FLOOR: f64 = -0.5;

/// Inputs: pk [B, P, H, W] in network scale, cp [B, T] in network scale.
/// Output: [B, T, H, W]; zero outside the mask.
///
/// K^trans and v_e clamps pass gradients straight through, so a parameter
/// pushed past its floor can recover.
pub struct TkForward {
    model: TkModel,
    times: Vec<f64>,
    /// Per-voxel signal models [B·H·W]; `None` outside the mask.
    signal: Vec<Option<SpgrSignal>>,
    ct_floor: Vec<f64>,
    scales: Vec<f64>,
}

/// Per-step recursion weights: I_i = decay·I_{i−1} + w_curr·c_i + w_prev·c_{i−1}.
struct Steps {
    steps: Vec<ExpConvStep>,
}

impl Steps {
    fn new(model: TkModel, kep: f64, times: &[f64]) -> Self {
        let make = |dt: f64| match model {
            TkModel::ETofts => ExpConvStep::new(kep, dt),
            TkModel::Patlak => ExpConvStep {
                decay: 1.0,
                w_curr: 0.5 * dt,
                w_prev: 0.5 * dt,
                d_decay: 0.0,
                d_w_curr: 0.0,
                d_w_prev: 0.0,
            },
        };
        let mut steps: Vec<ExpConvStep> = Vec::with_capacity(times.len().saturating_sub(1));
        let mut last: Option<(f64, ExpConvStep)> = None;
        for w in times.windows(2) {
            let dt = w[1] - w[0];
            // Uniform grids reuse the weights of the previous interval.
            let step = match last {
                Some((prev, step)) if prev == dt => step,
                _ => make(dt),
            };
            last = Some((dt, step));
            steps.push(step);
        }
        Steps { steps }
    }

    /// Convolution and its derivative with respect to the rate.
    fn apply(&self, c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = c.len();
        let mut conv = vec![0.0; n];
        let mut deriv = vec![0.0; n];
        for i in 1..n {
            let s = &self.steps[i - 1];
            conv[i] = s.decay * conv[i - 1] + s.w_curr * c[i] + s.w_prev * c[i - 1];
            deriv[i] = s.decay * deriv[i - 1] + s.d_decay * conv[i - 1] + s.d_w_curr * c[i] + s.d_w_prev * c[i - 1];
        }
        (conv, deriv)
    }

    /// Transpose of the convolution applied to `u`.
    fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let mut mu = vec![0.0; n];
        for i in (1..n).rev() {
            mu[i] = u[i] + if i + 1 < n { self.steps[i].decay * mu[i + 1] } else { 0.0 };
        }
        let mut out = vec![0.0; n];
        for j in 0..n {
            if j >= 1 {
                out[j] += self.steps[j - 1].w_curr * mu[j];
            }
            if j + 1 < n {
                out[j] += self.steps[j].w_prev * mu[j + 1];
            }
        }
        out
    }
}

/// Physical parameters of one voxel after unscaling and clamping.
struct Voxel {
    k_per_s: f64,
    vp: f64,
    kep: f64,
}

impl TkForward {
    /// `t1` and `mask` are [B, H, W]; mask entries are 0 or 1.
    pub fn new(model: TkModel, acq: &AcqParams, t1: &Tensor, mask: &Tensor) -> Result<Self> {
        if t1.shape() != mask.shape() || t1.shape().len() != 3 {
            return shape_err("tk_forward", format!("t1 {:?} and mask {:?} must be [B, H, W]", t1.shape(), mask.shape()));
        }
        let (a_floor, cos_alpha) = (acq.tr_seconds(), acq.flip_angle_radians().cos());
        let b = acq.r1_per_mm_per_s() * acq.tr_seconds();
        let mut signal = Vec::with_capacity(t1.len());
        let mut ct_floor = Vec::with_capacity(t1.len());
        for (&t, &m) in t1.data().iter().zip(mask.data()) {
            if m > 0.5 {
                signal.push(Some(SpgrSignal::new(t, acq)?));
                // Denominator of the signal equation vanishes at −(A − ln cos α)/B.
                let a = a_floor / t;
                let singular = -(a - cos_alpha.ln()) / b;
                ct_floor.push(CT_FLOOR.max(0.5 * singular));
            } else {
                signal.push(None);
                ct_floor.push(0.0);
            }
        }
        Ok(TkForward { model, times: acq.time_grid(), signal, ct_floor, scales: pk_scale_factors(model) })
    }

    fn voxel(&self, raw: &[f64]) -> (Voxel, f64) {
        let k_per_s = per_min_to_per_s((raw[0] / self.scales[0]).max(0.0));
        let vp = raw[1] / self.scales[1];
        let ve = match self.model {
            TkModel::ETofts => (raw[2] / self.scales[2]).max(VE_FLOOR),
            TkModel::Patlak => f64::INFINITY,
        };
        let kep = if self.model == TkModel::ETofts { k_per_s / ve } else { 0.0 };
        (Voxel { k_per_s, vp, kep }, ve)
    }

    fn check(&self, pk: &Tensor, cp: &Tensor) -> Result<(usize, usize, usize)> {
        let (b, p, h, w) = pk.dims4("tk_forward")?;
        let (cb, t) = cp.dims2("tk_forward")?;
        if p != self.model.n_params() || cb != b || t != self.times.len() || self.signal.len() != b * h * w {
            return shape_err(
                "tk_forward",
                format!("pk {:?}, cp {:?}, {} voxels of auxiliary data", pk.shape(), cp.shape(), self.signal.len()),
            );
        }
        Ok((b, p, h * w))
    }
}

impl Function for TkForward {
    fn name(&self) -> &'static str {
        "tk_forward"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (pk, cp) = (inputs[0], inputs[1]);
        let (b, p, hw) = self.check(pk, cp)?;
        let t = self.times.len();
        let mut out = vec![0.0; b * t * hw];
        let mut raw = vec![0.0; p];
        for bi in 0..b {
            let plasma: Vec<f64> = cp.data()[bi * t..(bi + 1) * t].iter().map(|v| v / CP_SCALE).collect();
            for px in 0..hw {
                let Some(signal) = &self.signal[bi * hw + px] else { continue };
                for (c, r) in raw.iter_mut().enumerate() {
                    *r = pk.data()[(bi * p + c) * hw + px];
                }
                let (v, _) = self.voxel(&raw);
                let (conv, _) = Steps::new(self.model, v.kep, &self.times).apply(&plasma);
                let floor = self.ct_floor[bi * hw + px];
                for ti in 0..t {
                    let ct = (v.vp * plasma[ti] + v.k_per_s * conv[ti]).max(floor);
                    out[(bi * t + ti) * hw + px] = signal.relative_signal(ct)? - 1.0;
                }
            }
        }
        Tensor::new(vec![b, t, pk.shape()[2], pk.shape()[3]], out)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (pk, cp) = (inputs[0], inputs[1]);
        let (b, p, hw) = self.check(pk, cp)?;
        let t = self.times.len();
        let k_chain = per_min_to_per_s(1.0) / self.scales[0];
        let mut d_pk = vec![0.0; pk.len()];
        let mut d_cp = vec![0.0; cp.len()];
        let mut raw = vec![0.0; p];
        let mut u = vec![0.0; t];
        for bi in 0..b {
            let plasma: Vec<f64> = cp.data()[bi * t..(bi + 1) * t].iter().map(|v| v / CP_SCALE).collect();
            let mut d_plasma = vec![0.0; t];
            for px in 0..hw {
                let Some(signal) = &self.signal[bi * hw + px] else { continue };
                for (c, r) in raw.iter_mut().enumerate() {
                    *r = pk.data()[(bi * p + c) * hw + px];
                }
                let (v, _) = self.voxel(&raw);
                let steps = Steps::new(self.model, v.kep, &self.times);
                let (conv, dconv) = steps.apply(&plasma);
                let floor = self.ct_floor[bi * hw + px];
                let (mut gk, mut gvp, mut gve) = (0.0, 0.0, 0.0);
                for ti in 0..t {
                    let ct = v.vp * plasma[ti] + v.k_per_s * conv[ti];
                    u[ti] = if ct < floor {
                        0.0
                    } else {
                        grad.data()[(bi * t + ti) * hw + px] * signal.relative_signal_derivative(ct)
                    };
                    gk += u[ti] * (conv[ti] + v.kep * dconv[ti]);
                    gvp += u[ti] * plasma[ti];
                    gve -= u[ti] * v.kep * v.kep * dconv[ti];
                }
                d_pk[bi * p * hw + px] = gk * k_chain;
                d_pk[(bi * p + 1) * hw + px] = gvp / self.scales[1];
                if self.model == TkModel::ETofts {
                    d_pk[(bi * p + 2) * hw + px] = gve / self.scales[2];
                }
                if needs[1] {
                    let back = steps.adjoint(&u);
                    for ti in 0..t {
                        d_plasma[ti] += v.vp * u[ti] + v.k_per_s * back[ti];
                    }
                }
            }
            for ti in 0..t {
                d_cp[bi * t + ti] = d_plasma[ti] / CP_SCALE;
            }
        }
        Ok(vec![
            needs[0].then(|| Tensor::new(pk.shape().to_vec(), d_pk)).transpose()?,
            needs[1].then(|| Tensor::new(cp.shape().to_vec(), d_cp)).transpose()?,
        ])
    }
}
