use omnidistill::formats::odim::{dequantize, encode_labeled, quantize};
use omnidistill::formats::text::{parse_manifest, parse_trace, render_manifest, render_trace};
use omnidistill::formats::{self, Dataset, FormatError, Manifest};
use omnidistill_core::data::{make_synthetic, ImageShape, LabeledDataset, SyntheticSpec, UnlabeledPool};
use omnidistill_core::distill::{init_distilled, DistillConfig};
use omnidistill_core::model::{init_params, Architecture};
use omnidistill_core::selection::Admission;
use proptest::prelude::*;

fn small_labeled() -> LabeledDataset {
    make_synthetic(&SyntheticSpec {
        per_class: 4,
        shape: ImageShape::new(5, 4, 2),
        ..SyntheticSpec::default()
    })
    .unwrap()
    .labeled
}

#[test]
fn odim_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.odim");
    let d = small_labeled();
    let hash = [7u8; 32];
    formats::write_labeled(&path, &d, Some(&hash)).unwrap();
    let f = formats::read_dataset(&path).unwrap();
    assert_eq!(f.config_hash, Some(hash));
    let Dataset::Labeled(back) = f.data else { panic!("expected labels") };
    assert_eq!(back.pixels(), d.pixels());
    assert_eq!(back.labels(), d.labels());
    assert_eq!(back.num_classes(), 3);
    assert_eq!(back.shape(), ImageShape::new(5, 4, 2));
}

#[test]
fn odim_header_layout() {
    let d = small_labeled();
    let bytes = encode_labeled(&d, None).unwrap();
    assert_eq!(&bytes[..4], b"ODIM");
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
    assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 1);
    assert_eq!(u16::from_le_bytes([bytes[8], bytes[9]]), 3);
    assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 12);
    assert_eq!(u16::from_le_bytes([bytes[14], bytes[15]]), 5);
    assert_eq!(u16::from_le_bytes([bytes[16], bytes[17]]), 4);
    assert_eq!(bytes[18], 2);
    assert_eq!(bytes.len(), 19 + 12 * 40 + 2 * 12);
}

#[test]
fn odim_truncated_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.odim");
    let bytes = encode_labeled(&small_labeled(), None).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(
        formats::read_dataset(&path),
        Err(FormatError::TruncatedPayload { .. })
    ));
}

#[test]
fn odim_count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.odim");
    let mut bytes = encode_labeled(&small_labeled(), None).unwrap();
    // Declare one image fewer than the file holds.
    bytes[10] -= 1;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(formats::read_dataset(&path), Err(FormatError::HeaderMismatch(_))));
}

#[test]
fn odim_label_beyond_declared_classes_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.odim");
    let mut bytes = encode_labeled(&small_labeled(), None).unwrap();
    bytes[8] = 2;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        formats::read_dataset(&path),
        Err(FormatError::LabelOutOfRange { label: 2, classes: 2 })
    ));
}

#[test]
fn odim_rejects_bad_magic_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.odim");
    let mut bytes = encode_labeled(&small_labeled(), None).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(formats::read_dataset(&path), Err(FormatError::BadMagic { .. })));
    bytes[0] = b'O';
    bytes[6] |= 0x80;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(formats::read_dataset(&path), Err(FormatError::CorruptHeader(_))));
}

#[test]
fn pool_round_trip_and_unlabeled_rejected_as_labeled() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.odim");
    let pool = UnlabeledPool::new("p", ImageShape::new(2, 2, 1), vec![0.0, 1.0, dequantize(17), dequantize(200)]).unwrap();
    formats::write_pool(&path, &pool, 3, None).unwrap();
    assert_eq!(formats::read_pool(&path).unwrap().pixels(), pool.pixels());
    assert!(matches!(formats::read_labeled(&path), Err(FormatError::HeaderMismatch(_))));
}

#[test]
fn missing_file_is_an_io_error() {
    let r = formats::read_dataset(std::path::Path::new("/nonexistent/omnidistill/x.odim"));
    assert!(matches!(r, Err(FormatError::Io { .. })));
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for (i, arch) in [
        Architecture::mlp(ImageShape::new(4, 4, 1), &[6, 5], 4, 3).unwrap(),
        Architecture::tiny_conv(ImageShape::new(6, 6, 2), 3, 3, &[5], 4, 2).unwrap(),
    ]
    .into_iter()
    .enumerate()
    {
        let p = init_params::<f32>(&arch, i as u64).unwrap();
        let path = dir.path().join(format!("{i}.odmp"));
        formats::write_checkpoint(&path, &p, &[i as u8; 32]).unwrap();
        let (back, hash) = formats::read_checkpoint(&path).unwrap();
        assert_eq!(back.arch(), p.arch());
        assert_eq!(back.tensors(), p.tensors());
        assert_eq!(hash, [i as u8; 32]);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(
            formats::read_checkpoint(&path),
            Err(FormatError::TruncatedPayload { .. })
        ));
    }
}

#[test]
fn distilled_set_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let arch = Architecture::mlp(ImageShape::new(3, 3, 1), &[], 4, 3).unwrap();
    let cfg = DistillConfig {
        n: 5,
        ..DistillConfig::for_classes(3)
    };
    let mut set = init_distilled::<f32>(&cfg, &arch).unwrap();
    set.config_hash = [3; 32];
    set.iteration = 42;
    set.log_eta = -1.25;
    let path = dir.path().join("d.odds");
    formats::write_distilled(&path, &set).unwrap();
    assert_eq!(formats::read_distilled(&path).unwrap(), set);
    assert_eq!(formats::embedded_hash(&path).unwrap(), Some([3; 32]));
}

#[test]
fn manifest_round_trip_keeps_nine_significant_digits() {
    let m = Manifest {
        config_hash: [0xab; 32],
        num_classes: 3,
        admissions: vec![
            Admission {
                source_id: 4,
                label: 2,
                distance: 0.123456789012,
            },
            Admission {
                source_id: 17,
                label: 0,
                distance: 1.5e-7,
            },
        ],
    };
    let text = render_manifest(&m);
    assert!(text.contains("4\t2\t1.23456789e-1\n"));
    let back = parse_manifest(&text).unwrap();
    assert_eq!(back.source_ids(), vec![4, 17]);
    assert_eq!(back.labels(), vec![2, 0]);
    assert!((back.admissions[0].distance - 0.123456789).abs() < 1e-15);
    assert_eq!(back.config_hash, [0xab; 32]);
}

#[test]
fn manifest_rejects_label_out_of_range() {
    let text = format!("# config {}\n# classes 2\n1\t2\t1e-1\n", "00".repeat(32));
    assert!(matches!(parse_manifest(&text), Err(FormatError::LabelOutOfRange { .. })));
}

#[test]
fn trace_round_trip() {
    let losses = [1.0986, 0.5, 1e-3];
    let text = render_trace(&[1; 32], &losses, 0);
    assert_eq!(text.lines().count(), 4);
    let (h, back) = parse_trace(&text).unwrap();
    assert_eq!(h, [1; 32]);
    for (a, b) in back.iter().zip(losses) {
        assert!((a - b).abs() <= 1e-9 * b);
    }
}

proptest! {
    #[test]
    fn quantized_pixels_round_trip(levels in proptest::collection::vec(any::<u8>(), 12..=12)) {
        for &k in &levels {
            prop_assert_eq!(quantize(dequantize(k)), k);
        }
    }

    #[test]
    fn odim_round_trip_random(
        n in 0usize..20,
        h in 1usize..5,
        w in 1usize..5,
        c in 1usize..4,
        m in 1usize..6,
        seed: u64,
        with_hash: bool,
    ) {
        let len = n * h * w * c;
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 33) as usize
        };
        let pixels: Vec<f32> = (0..len).map(|_| dequantize((next() % 256) as u8)).collect();
        let labels: Vec<usize> = (0..n).map(|_| next() % m).collect();
        let d = LabeledDataset::new("r", ImageShape::new(h, w, c), m, pixels, labels).unwrap();
        let hash = with_hash.then_some([9u8; 32]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.odim");
        formats::write_labeled(&path, &d, hash.as_ref()).unwrap();
        let back = formats::read_labeled(&path).unwrap();
        prop_assert_eq!(back.pixels(), d.pixels());
        prop_assert_eq!(back.labels(), d.labels());
        prop_assert_eq!(formats::read_dataset(&path).unwrap().config_hash, hash);
    }
}
