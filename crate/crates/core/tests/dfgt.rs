use promptrefine::tensor::{read_file, read_tensor, write_file, write_tensor, TensorData};
use promptrefine::{DenseTensor, Error};
use proptest::prelude::*;

fn tensor() -> impl Strategy<Value = DenseTensor> {
    prop::collection::vec(1usize..6, 1..=4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        let data = prop_oneof![
            prop::collection::vec(any::<u32>().prop_map(f32::from_bits), n)
                .prop_map(TensorData::F32),
            prop::collection::vec(any::<u8>(), n).prop_map(TensorData::U8),
            prop::collection::vec(any::<i32>(), n).prop_map(TensorData::I32),
        ];
        (Just(shape), data).prop_map(|(s, d)| DenseTensor::new(s, d).unwrap())
    })
}

proptest! {
    #[test]
    fn round_trips(t in tensor()) {
        let mut buf = Vec::new();
        let n = write_tensor(&t, &mut buf).unwrap();
        prop_assert_eq!(n, buf.len());
        prop_assert_eq!(n, 7 + 4 * t.ndim() + t.len() * t.dtype().size());
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.to_bytes(), buf);
    }

    #[test]
    fn truncation_is_detected(t in tensor(), cut in any::<prop::sample::Index>()) {
        let buf = t.to_bytes();
        let short = &buf[..cut.index(buf.len())];
        prop_assert!(DenseTensor::from_bytes(short).is_err());
    }
}

#[test]
fn header_layout() {
    let t = DenseTensor::from_i32(vec![2], vec![1, -2]).unwrap();
    assert_eq!(
        t.to_bytes(),
        [b'D', b'F', b'G', b'T', 1, 2, 1, 2, 0, 0, 0, 1, 0, 0, 0, 0xfe, 0xff, 0xff, 0xff]
    );
    let mut bad = t.to_bytes();
    bad[0] = b'X';
    assert!(matches!(
        DenseTensor::from_bytes(&bad),
        Err(Error::BadMagic(_))
    ));
    let mut bad = t.to_bytes();
    bad[4] = 2;
    assert!(matches!(
        DenseTensor::from_bytes(&bad),
        Err(Error::UnsupportedVersion(2))
    ));
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.dfgt");
    let t =
        DenseTensor::from_f32(vec![2, 3], vec![0.5, -1.0, 2.0, f32::INFINITY, 0.0, -0.0]).unwrap();
    write_file(&p, &t).unwrap();
    assert_eq!(read_file(&p).unwrap().to_bytes(), t.to_bytes());
    assert!(read_file(dir.path().join("missing.dfgt")).is_err());
}
