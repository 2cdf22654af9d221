use dcepk_core::TkModel;
use dcepk_nn::autodiff::{Tape, Tensor};
use dcepk_nn::networks::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};

fn input(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |i| ((i as f64) * 0.013).sin() * 0.5)
}

fn run_generator(g: &Generator, x: Tensor) -> (Tensor, Tensor) {
    let tape = Tape::new();
    let p = g.params.bind(&tape, false);
    let out = g.forward(&p, tape.constant(x), None).unwrap();
    ((*out.pk.value()).clone(), (*out.cp.value()).clone())
}

#[test]
fn generator_output_shapes() {
    let g = Generator::new(GeneratorSpec::new(TkModel::ETofts, 65), 1).unwrap();
    let (pk, cp) = run_generator(&g, input(&[4, 65, 48, 48]));
    assert_eq!(pk.shape(), &[4, 3, 48, 48]);
    assert_eq!(cp.shape(), &[4, 65]);

    let g = Generator::new(GeneratorSpec::new(TkModel::Patlak, 60), 1).unwrap();
    let (pk, cp) = run_generator(&g, input(&[2, 60, 48, 48]));
    assert_eq!(pk.shape(), &[2, 2, 48, 48]);
    assert_eq!(cp.shape(), &[2, 60]);
}

#[test]
fn generator_is_deterministic_and_rejects_bad_input() {
    let g = Generator::new(GeneratorSpec::new(TkModel::ETofts, 5).with_base_channels(4), 3).unwrap();
    let (a, ca) = run_generator(&g, input(&[1, 5, 20, 20]));
    let (b, cb) = run_generator(&g, input(&[1, 5, 20, 20]));
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    let tape = Tape::new();
    let p = g.params.bind(&tape, false);
    assert!(g.forward(&p, tape.constant(input(&[1, 6, 20, 20])), None).is_err());
    assert!(g.forward(&p, tape.constant(input(&[1, 5, 16, 20])), None).is_err());
}

fn conv_params(out: usize, inp: usize, k: usize) -> usize {
    out * inp * k * k + out
}

#[test]
fn pinned_parameter_counts() {
    // base 64, 65 frames, three PK maps, 256 hidden units.
    let (t, b, h) = (65, 64, 256);
    let initial = conv_params(b, t, 3);
    let pathways = 6 * conv_params(b, b, 3);
    let pk_head = conv_params(b, 2 * b, 1) + conv_params(b, b, 1) + conv_params(3, b, 1);
    let cp_head = (2 * b * h + h) + (h * t + t);
    let expected = initial + pathways + pk_head + cp_head;
    assert_eq!(expected, 321_412);
    let g = Generator::new(GeneratorSpec::new(TkModel::ETofts, 65), 0).unwrap();
    assert_eq!(g.params.count(), expected);

    // 32 → 64 → 128 → 256 filters of 4×4, instance-norm affine pairs after the
    // first layer, one-channel head.
    let mut expected = 0;
    let mut c = 3;
    for i in 0..4 {
        let f = 32 << i;
        expected += conv_params(f, c, 4) + if i > 0 { 2 * f } else { 0 };
        c = f;
    }
    expected += conv_params(1, c, 4);
    assert_eq!(expected, 695_137);
    let d = Discriminator::new(DiscriminatorSpec::new(3), 0).unwrap();
    assert_eq!(d.params.count(), expected);
    assert_eq!(Discriminator::new(DiscriminatorSpec::new(3), 9).unwrap().params.count(), expected);
}

#[test]
fn pk_head_is_fully_convolutional() {
    let spec = GeneratorSpec::new(TkModel::ETofts, 4).with_base_channels(6);
    let radius = spec.receptive_radius();
    assert!(radius <= 16);
    let g = Generator::new(spec, 5).unwrap();
    let full = input(&[1, 4, 96, 96]);
    let (pk_full, _) = run_generator(&g, full.clone());
    // Each 48×48 quadrant is computed from a 64×64 crop reaching 16 pixels
    // past its inner edges.
    for (oy, ox) in [(0usize, 0usize), (0, 32), (32, 0), (32, 32)] {
        let crop = Tensor::from_fn(&[1, 4, 64, 64], |i| {
            let (c, y, x) = (i / 4096, (i / 64) % 64, i % 64);
            full.data()[c * 9216 + (oy + y) * 96 + ox + x]
        });
        let (pk_crop, _) = run_generator(&g, crop);
        let (qy, qx) = (if oy == 0 { 0 } else { 48 }, if ox == 0 { 0 } else { 48 });
        for c in 0..3 {
            for y in qy..qy + 48 {
                for x in qx..qx + 48 {
                    let a = pk_full.data()[c * 9216 + y * 96 + x];
                    let b = pk_crop.data()[c * 4096 + (y - oy) * 64 + (x - ox)];
                    assert!((a - b).abs() <= 1e-5, "channel {c} ({y}, {x}): {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn plasma_head_depends_on_one_interior_pixel() {
    let g = Generator::new(GeneratorSpec::new(TkModel::Patlak, 6).with_base_channels(4), 2).unwrap();
    let x = input(&[1, 6, 24, 24]);
    let tape = Tape::new();
    let p = g.params.bind(&tape, false);
    let xv = tape.leaf(x.clone());
    let out = g.forward(&p, xv, None).unwrap();
    let grads = tape.backward(out.cp.mean().unwrap()).unwrap();
    let pixel = 12 * 24 + 11;
    let g_pixel: f64 = (0..6).map(|c| grads.get(xv).unwrap().data()[c * 576 + pixel].abs()).sum();
    assert!(g_pixel > 0.0);

    let mut changed = x.clone();
    for c in 0..6 {
        changed.data_mut()[c * 576 + pixel] += 1.0;
    }
    let (_, before) = run_generator(&g, x);
    let (_, after) = run_generator(&g, changed);
    assert_ne!(before, after);
}

#[test]
fn discriminator_score_map_size_is_pinned() {
    let spec = DiscriminatorSpec::new(3);
    assert_eq!(spec.output_size(48), Some(4));
    let d = Discriminator::new(spec, 1).unwrap();
    let tape = Tape::new();
    let p = d.params.bind(&tape, false);
    let y = d.forward(&p, tape.constant(input(&[2, 3, 48, 48]))).unwrap();
    assert_eq!(y.shape(), vec![2, 1, 4, 4]);
}

#[test]
fn discriminator_permutes_with_the_batch() {
    let d = Discriminator::new(DiscriminatorSpec::new(2), 4).unwrap();
    let x = Tensor::from_fn(&[3, 2, 32, 32], |i| ((i * 31 % 97) as f64 / 97.0) - 0.5);
    let per = 2 * 32 * 32;
    let order = [2usize, 0, 1];
    let permuted = Tensor::from_fn(&[3, 2, 32, 32], |i| x.data()[order[i / per] * per + i % per]);
    let score = |t: Tensor| {
        let tape = Tape::new();
        let p = d.params.bind(&tape, false);
        (*d.forward(&p, tape.constant(t)).unwrap().value()).clone()
    };
    let (a, b) = (score(x), score(permuted));
    let n = a.len() / 3;
    for (k, &src) in order.iter().enumerate() {
        assert_eq!(&b.data()[k * n..(k + 1) * n], &a.data()[src * n..(src + 1) * n]);
    }
}

#[test]
fn zero_final_layer_gives_zero_scores() {
    let mut d = Discriminator::new(DiscriminatorSpec::new(3), 4).unwrap();
    for name in ["final.weight", "final.bias"] {
        d.params.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    let tape = Tape::new();
    let p = d.params.bind(&tape, false);
    let y = d.forward(&p, tape.constant(Tensor::zeros(&[2, 3, 48, 48]))).unwrap();
    assert!(y.value().data().iter().all(|&v| v == 0.0));
}
