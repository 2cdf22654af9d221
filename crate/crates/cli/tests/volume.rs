use dcepk_cli::volume::{decode, encode, read_volume, sidecar_path, write_volume, Dtype, Sidecar};
use dcepk_core::{AcqParams, TkModel};
use ndarray::{ArrayD, IxDyn};
use proptest::prelude::*;

fn bits(a: &ArrayD<f64>) -> Vec<u64> {
    a.iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #[test]
    fn f64_round_trip_is_bitwise(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let n: usize = dims.iter().product();
        let mut x = seed;
        let values: Vec<f64> = (0..n)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f64::from_bits(x >> 2)
            })
            .collect();
        let data = ArrayD::from_shape_vec(IxDyn(&dims), values).unwrap();
        let (back, dtype) = decode(&encode(&data, Dtype::F64).unwrap(), "p").unwrap();
        prop_assert_eq!(dtype, Dtype::F64);
        prop_assert_eq!(back.shape(), data.shape());
        prop_assert_eq!(bits(&back), bits(&data));
    }

    #[test]
    fn f32_round_trip_is_bitwise(values in prop::collection::vec(any::<f32>(), 1..40)) {
        let n = values.len();
        let data = ArrayD::from_shape_vec(IxDyn(&[n]), values.iter().map(|&v| v as f64).collect()).unwrap();
        let bytes = encode(&data, Dtype::F32).unwrap();
        let (back, _) = decode(&bytes, "p").unwrap();
        let back32: Vec<u32> = back.iter().map(|&v| (v as f32).to_bits()).collect();
        let orig32: Vec<u32> = values.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(back32, orig32);
        prop_assert_eq!(encode(&back, Dtype::F32).unwrap(), bytes);
    }
}

#[test]
fn sidecar_carries_dims_model_and_acquisition() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.dcev");
    let data = ArrayD::from_shape_fn(IxDyn(&[3, 2, 4]), |i| (i[0] * 8 + i[1] * 4 + i[2]) as f64 * 0.5);
    let acq = AcqParams::tumor_protocol();
    let side = Sidecar::new(Dtype::F64, "a.u.").with_model(TkModel::Patlak).with_acq(acq);
    write_volume(&path, &data, &side).unwrap();
    assert!(sidecar_path(&path).ends_with("v.json"));
    let v = read_volume(&path).unwrap();
    assert_eq!(v.data, data);
    assert_eq!(v.sidecar.dims, vec![3, 2, 4]);
    assert_eq!(v.sidecar.model, Some(TkModel::Patlak));
    assert_eq!(v.sidecar.acq, Some(acq));
}

#[test]
fn sidecar_disagreement_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.dcev");
    let data = ArrayD::from_elem(IxDyn(&[2, 2]), 1.0);
    write_volume(&path, &data, &Sidecar::new(Dtype::F32, "")).unwrap();
    let side = sidecar_path(&path);
    let text = std::fs::read_to_string(&side).unwrap().replacen("\"f32\"", "\"f64\"", 1);
    std::fs::write(&side, text).unwrap();
    let err = read_volume(&path).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    std::fs::remove_file(&side).unwrap();
    assert_eq!(read_volume(&path).unwrap_err().exit_code(), 3);
}
