use meanba::archive::{archive_read, archive_write, decode, encode, ArchiveError, NamedTensor, TensorData};
use meanba::model::{build_toy_model, ToyConfig, ToyModel};
use meanba::{Error, Tensor3, Tensor4};
use proptest::prelude::*;

fn bits(set: &[NamedTensor]) -> Vec<(String, Vec<usize>, Vec<u64>)> {
    set.iter()
        .map(|t| {
            let raw = match &t.data {
                TensorData::F32(v) => v.iter().map(|x| x.to_bits() as u64).collect(),
                TensorData::F64(v) => v.iter().map(|x| x.to_bits()).collect(),
            };
            (t.name.clone(), t.shape.clone(), raw)
        })
        .collect()
}

fn tensor_strategy(idx: usize) -> impl Strategy<Value = NamedTensor> {
    (prop::collection::vec(1usize..4, 0..4), any::<bool>(), any::<u64>()).prop_map(move |(shape, wide, seed)| {
        let len: usize = shape.iter().product();
        // arbitrary bit patterns, NaN payloads included
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            s
        };
        let data = if wide {
            TensorData::F64((0..len).map(|_| f64::from_bits(next())).collect())
        } else {
            TensorData::F32((0..len).map(|_| f32::from_bits((next() >> 32) as u32)).collect())
        };
        NamedTensor::new(format!("t{idx}.w"), shape, data).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn file_round_trip_is_bitwise(a in tensor_strategy(0), b in tensor_strategy(1), c in tensor_strategy(2)) {
        let set = vec![a, b, c];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.mbt");
        archive_write(&set, &path).unwrap();
        let back = archive_read(&path).unwrap();
        prop_assert_eq!(bits(&back), bits(&set));
    }
}

#[test]
fn truncated_file_is_reported() {
    let t = Tensor3::from_fn([1, 2, 3], |_, d, l| (d * 3 + l) as f32).unwrap();
    let bytes = encode(&[NamedTensor::from_tensor3("x", &t)]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.mbt");
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(
        archive_read(&path),
        Err(Error::Archive(ArchiveError::TruncatedPayload { .. }))
    ));
    assert!(matches!(decode(b"garbage"), Err(ArchiveError::MalformedManifest(_))));
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(archive_read(dir.path().join("nope")), Err(Error::Io { .. })));
}

#[test]
fn tensors_and_models_survive_disk() {
    let dir = tempfile::tempdir().unwrap();
    let t4 = Tensor4::from_fn([2, 3, 4, 5], |b, d, l, n| (b + d * l) as f64 - n as f64 * 0.25).unwrap();
    let path = dir.path().join("t.mbt");
    archive_write(&[NamedTensor::from_tensor4("a_bar", &t4)], &path).unwrap();
    assert_eq!(archive_read(&path).unwrap()[0].to_tensor4::<f64>().unwrap(), t4);

    let config = ToyConfig { depths: vec![1, 2], base_channels: 4, base_height: 4, base_width: 4, state: 3, num_classes: 3 };
    let model = build_toy_model(11, &config).unwrap();
    let path = dir.path().join("model.mbt");
    archive_write(&model.to_archive(), &path).unwrap();
    let back = ToyModel::from_archive(&archive_read(&path).unwrap()).unwrap();
    assert_eq!(back, model);
}
