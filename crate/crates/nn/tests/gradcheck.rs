//! Central finite differences against every registered operator's adjoint.

use dcepk_nn::autodiff::{Conv2dParams, Tape, Tensor, Var};
use dcepk_nn::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const REL_TOL: f64 = 1e-4;
const INSTANCES: usize = 20;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so kinked ops stay on one side within ±H.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) { v } else { -v }
    })
}

/// Scalar probe ⟨f(inputs), R⟩ with a fixed random R.
fn probe<'t>(out: Var<'t>, r: &Tensor) -> Result<Var<'t>> {
    let weights = out.tape().constant(r.clone());
    out.mul(weights)?.mean()
}

fn check<F>(name: &str, seed: u64, inputs: Vec<Tensor>, f: F)
where
    F: for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |values: &[Tensor], r: Option<&Tensor>| -> (f64, Vec<Tensor>, Tensor) {
        let tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&vars).unwrap();
        let out_value = (*out.value()).clone();
        let r = r.cloned().unwrap_or_else(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
            random(&mut rng, out_value.shape())
        });
        let loss = probe(out, &r).unwrap();
        let value = loss.value().item();
        let grads = tape.backward(loss).unwrap();
        (value, vars.iter().map(|v| grads.get_or_zeros(*v)).collect(), r)
    };
    let (_, analytic, r) = eval(&inputs, None);
    for (k, input) in inputs.iter().enumerate() {
        let scale = analytic[k].max_abs().max(1e-12);
        for i in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= H;
            let numeric = (eval(&plus, Some(&r)).0 - eval(&minus, Some(&r)).0) / (2.0 * H);
            let a = analytic[k].data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-2 * scale);
            assert!(
                (a - numeric).abs() <= REL_TOL * denom,
                "{name} instance {seed}, input {k}, element {i}: analytic {a}, numeric {numeric}"
            );
        }
    }
}

fn for_instances(name: &str, mut build: impl FnMut(&mut ChaCha8Rng, u64)) {
    for seed in 0..INSTANCES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + name.len() as u64);
        build(&mut rng, seed);
    }
}

fn small_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    vec![rng.random_range(1..3), rng.random_range(1..4), rng.random_range(2..5), rng.random_range(2..5)]
}

#[test]
fn elementwise_binary_ops() {
    for_instances("binary", |rng, seed| {
        let shape = small_shape(rng);
        let (a, b) = (random(rng, &shape), random(rng, &shape));
        check("add", seed, vec![a.clone(), b.clone()], |v| v[0].add(v[1]));
        check("sub", seed, vec![a.clone(), b.clone()], |v| v[0].sub(v[1]));
        check("mul", seed, vec![a, b], |v| v[0].mul(v[1]));
    });
}

#[test]
fn pointwise_ops() {
    for_instances("pointwise", |rng, seed| {
        let shape = small_shape(rng);
        let x = away_from_zero(rng, &shape);
        let c: f64 = rng.random_range(-3.0..3.0);
        check("scale", seed, vec![x.clone()], |v| v[0].scale(c));
        check("add_scalar", seed, vec![x.clone()], |v| v[0].add_scalar(c));
        check("abs", seed, vec![x.clone()], |v| v[0].abs());
        check("square", seed, vec![x.clone()], |v| v[0].square());
        check("relu", seed, vec![x.clone()], |v| v[0].relu());
        check("leaky_relu", seed, vec![x], |v| v[0].leaky_relu(0.2));
    });
}

#[test]
fn reductions_and_losses() {
    for_instances("reductions", |rng, seed| {
        let shape = small_shape(rng);
        let (a, b) = (away_from_zero(rng, &shape), random(rng, &shape));
        check("mean", seed, vec![a.clone()], |v| v[0].mean());
        // Differences kept away from the |·| kink.
        let shifted = Tensor::new(shape.clone(), b.data().iter().zip(a.data()).map(|(x, d)| x + d).collect()).unwrap();
        check("l1", seed, vec![shifted, b], |v| v[0].l1(v[1]));
    });
}

#[test]
fn concat_and_pooling() {
    for_instances("concat", |rng, seed| {
        let (b, h, w) = (rng.random_range(1..3), rng.random_range(2..5), rng.random_range(2..5));
        let (cx, cy) = (rng.random_range(1..4), rng.random_range(1..4));
        let x = random(rng, &[b, cx, h, w]);
        let y = random(rng, &[b, cy, h, w]);
        check("concat", seed, vec![x.clone(), y], |v| Var::concat_channels(&[v[0], v[1]]));
        check("global_avg_pool", seed, vec![x.clone()], |v| v[0].global_avg_pool());
        let mask = Tensor::from_fn(&[b, h, w], |i| ((i * 7 + seed as usize) % 3 != 0) as u8 as f64);
        check("masked_avg_pool", seed, vec![x], move |v| v[0].masked_avg_pool(mask.clone()));
    });
}

#[test]
fn linear() {
    for_instances("linear", |rng, seed| {
        let (b, n_in, n_out) = (rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..6));
        let inputs = vec![random(rng, &[b, n_in]), random(rng, &[n_out, n_in]), random(rng, &[n_out])];
        check("linear", seed, inputs, |v| v[0].linear(v[1], v[2]));
    });
}

#[test]
fn conv2d_with_stride_padding_and_dilation() {
    for_instances("conv2d", |rng, seed| {
        let k = [1usize, 3, 4][seed as usize % 3];
        let dilation = if k == 3 { rng.random_range(1..3) } else { 1 };
        let stride = if k == 4 { 2 } else { rng.random_range(1..3) };
        let padding = if k == 1 { 0 } else { rng.random_range(0..dilation * (k - 1) / 2 + 2) };
        let params = Conv2dParams { stride, padding, dilation };
        let (b, c, o) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let size = rng.random_range(dilation * (k - 1) + 1..9);
        let inputs = vec![random(rng, &[b, c, size, size + 1]), random(rng, &[o, c, k, k]), random(rng, &[o])];
        check("conv2d", seed, inputs, move |v| v[0].conv2d(v[1], v[2], params));
    });
}

#[test]
fn instance_norm() {
    for_instances("instance_norm", |rng, seed| {
        let (b, c) = (rng.random_range(1..3), rng.random_range(1..4));
        let (h, w) = (rng.random_range(2..5), rng.random_range(2..5));
        let inputs = vec![random(rng, &[b, c, h, w]), random(rng, &[c]), random(rng, &[c])];
        check("instance_norm", seed, inputs, |v| v[0].instance_norm(v[1], v[2]));
    });
}

#[test]
fn composed_graph_with_reuse() {
    for_instances("composite", |rng, seed| {
        let x = random(rng, &[2, 2, 5, 5]);
        let w = random(rng, &[3, 2, 3, 3]);
        let b = random(rng, &[3]);
        check("composite", seed, vec![x, w, b], |v| {
            let y = v[0].conv2d(v[1], v[2], Conv2dParams::same(3, 2))?;
            let z = y.square()?.add(y)?;
            Var::concat_channels(&[z, v[0]])?.global_avg_pool()
        });
    });
}

#[test]
fn tracer_kinetic_forward() {
    use dcepk_core::{AcqParams, TkModel};
    use dcepk_nn::training::TkForward;

    let acq = AcqParams::tumor_protocol().with_n_frames(6).unwrap();
    for_instances("tk_forward", |rng, seed| {
        let model = if seed % 2 == 0 { TkModel::ETofts } else { TkModel::Patlak };
        let (b, h, w) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let t1 = Tensor::from_fn(&[b, h, w], |_| rng.random_range(0.8..2.0));
        let mask = Tensor::from_fn(&[b, h, w], |i| if i == 0 || rng.random_bool(0.7) { 1.0 } else { 0.0 });
        let p = model.n_params();
        let ranges = [(0.05, 0.6), (0.05, 0.4), (0.1, 0.8)];
        let mut pk = Tensor::zeros(&[b, p, h, w]);
        for (i, v) in pk.data_mut().iter_mut().enumerate() {
            let (lo, hi) = ranges[(i / (h * w)) % p];
            *v = rng.random_range(lo..hi);
        }
        let cp = Tensor::from_fn(&[b, 6], |_| rng.random_range(0.0..0.6));
        check("tk_forward", seed, vec![pk, cp], move |v| {
            let op = TkForward::new(model, &acq, &t1, &mask)?;
            v[0].tape().apply(op, &[v[0], v[1]])
        });
    });
}
