use super::*;
use alloc::vec;
use proptest::prelude::*;

fn toy(n: usize, m: usize) -> LabeledDataset {
    let shape = ImageShape::new(2, 2, 1);
    let pixels = (0..n * 4).map(|i| (i % 256) as f32 / 255.0).collect();
    let labels = (0..n).map(|i| i % m).collect();
    LabeledDataset::new("toy", shape, m, pixels, labels).unwrap()
}

#[test]
fn forty_two_items_split_five_to_one() {
    let d = toy(42, 7);
    let (train, test) = split(&d, (5, 1), 3).unwrap();
    assert_eq!((train.len(), test.len()), (35, 7));
}

#[test]
fn stratified_split_keeps_one_test_item_per_class() {
    let d = toy(42, 7);
    let (_, test) = split(&d, (5, 1), 11).unwrap();
    assert_eq!(test.class_counts(), vec![1; 7]);
}

#[test]
fn one_to_zero_ratio_is_all_train() {
    let d = toy(10, 2);
    let (train, test) = split(&d, (1, 0), 0).unwrap();
    assert_eq!(train, d);
    assert!(test.is_empty());
}

#[test]
fn split_errors() {
    let d = toy(10, 2);
    assert_eq!(split(&d, (0, 0), 0), Err(DataError::Ratio(0, 0)));
    let empty = LabeledDataset::new("e", ImageShape::new(1, 1, 1), 2, vec![], vec![]).unwrap();
    assert_eq!(split(&empty, (5, 1), 0), Err(DataError::Empty));
}

#[test]
fn dataset_rejects_out_of_range_label() {
    let r = LabeledDataset::new("x", ImageShape::new(1, 1, 1), 2, vec![0.0], vec![2]);
    assert_eq!(r, Err(DataError::LabelOutOfRange { label: 2, classes: 2 }));
}

#[test]
fn batch_is_nhwc() {
    let d = toy(3, 3);
    let b = d.batch::<f64>(&[2, 0]);
    assert_eq!(b.shape(), &[2, 2, 2, 1]);
    assert_eq!(b.data()[0], d.image(2)[0] as f64);
    assert_eq!(b.data()[4], d.image(0)[0] as f64);
}

#[test]
fn pool_labeled_by_source_id() {
    let pool = UnlabeledPool::new("p", ImageShape::new(1, 2, 1), vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
    let d = pool.labeled(&[2, 0], &[1, 0], 2).unwrap();
    assert_eq!(d.pixels(), &[0.4, 0.5, 0.0, 0.1]);
    assert!(pool.labeled(&[7], &[0], 2).is_err());
}

#[test]
fn synthetic_is_deterministic() {
    let spec = SyntheticSpec {
        pool_size: 50,
        ..SyntheticSpec::default()
    };
    let a = make_synthetic(&spec).unwrap();
    let b = make_synthetic(&spec).unwrap();
    assert_eq!(a.labeled, b.labeled);
    assert_eq!(a.pool, b.pool);
    let c = make_synthetic(&SyntheticSpec { seed: 1, ..spec }).unwrap();
    assert_ne!(a.labeled.pixels(), c.labeled.pixels());
}

#[test]
fn synthetic_pixels_are_quantized_unit_interval() {
    for kind in [GeneratorKind::GaussianBlobs, GeneratorKind::BarsAndStripes, GeneratorKind::ShiftedDomain] {
        let spec = SyntheticSpec {
            kind,
            per_class: 10,
            shape: ImageShape::new(6, 6, 3),
            shift: DomainShift {
                brightness: 0.3,
                noise: 0.2,
                rotation: 0.5,
            },
            pool_size: 20,
            ..SyntheticSpec::default()
        };
        let data = make_synthetic(&spec).unwrap();
        let pool = data.pool.unwrap();
        for &v in data.labeled.pixels().iter().chain(pool.pixels()) {
            assert!((0.0..=1.0).contains(&v));
            let level = (v * 255.0).round();
            assert_eq!(level / 255.0, v);
        }
    }
}

#[test]
fn synthetic_rejects_bad_spec() {
    let one_class = SyntheticSpec {
        num_classes: 1,
        ..SyntheticSpec::default()
    };
    assert!(matches!(make_synthetic(&one_class), Err(DataError::Spec(_))));
    let negative_noise = SyntheticSpec {
        pixel_noise: -0.1,
        ..SyntheticSpec::default()
    };
    assert!(matches!(make_synthetic(&negative_noise), Err(DataError::Spec(_))));
}

#[test]
fn zero_shift_pool_matches_anchor_statistics() {
    // Mean pixel intensity of the pool vs the anchor: two-sample z-test at 3 sigma.
    let spec = SyntheticSpec {
        per_class: 200,
        pool_size: 600,
        ..SyntheticSpec::default()
    };
    let data = make_synthetic(&spec).unwrap();
    let pool = data.pool.unwrap();
    let image_means = |px: &[f32], n: usize| -> Vec<f64> {
        px.chunks(px.len() / n).map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / c.len() as f64).collect()
    };
    let stats = |xs: &[f64]| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var / n)
    };
    let (ma, va) = stats(&image_means(data.labeled.pixels(), data.labeled.len()));
    let (mp, vp) = stats(&image_means(pool.pixels(), pool.len()));
    let z = (ma - mp).abs() / (va + vp).sqrt();
    assert!(z < 3.0, "z = {z}");

    // A nonzero brightness shift is detected by the same statistic.
    let shifted = make_synthetic(&SyntheticSpec {
        shift: DomainShift {
            brightness: 0.1,
            ..DomainShift::default()
        },
        ..spec
    })
    .unwrap();
    let sp = shifted.pool.unwrap();
    let (ms, vs) = stats(&image_means(sp.pixels(), sp.len()));
    assert!((ms - ma).abs() / (va + vs).sqrt() > 3.0);
}

fn nearest_centroid_accuracy(train: &LabeledDataset, test: &LabeledDataset) -> f64 {
    let d = train.shape().len();
    let m = train.num_classes();
    let mut centers = vec![vec![0.0f64; d]; m];
    let counts = train.class_counts();
    for i in 0..train.len() {
        for (c, &v) in centers[train.labels()[i]].iter_mut().zip(train.image(i)) {
            *c += v as f64;
        }
    }
    for (c, &n) in centers.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
    let correct = (0..test.len())
        .filter(|&i| {
            let x = test.image(i);
            let dist = |c: &Vec<f64>| c.iter().zip(x).map(|(a, &b)| (a - b as f64).powi(2)).sum::<f64>();
            let best = (0..m).min_by(|&a, &b| dist(&centers[a]).total_cmp(&dist(&centers[b]))).unwrap();
            best == test.labels()[i]
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn gaussian_blobs_are_nearest_centroid_learnable() {
    let data = make_synthetic(&SyntheticSpec::default()).unwrap();
    assert_eq!(data.labeled.len(), 600);
    let (train, test) = split(&data.labeled, (2, 1), 0).unwrap();
    let acc = nearest_centroid_accuracy(&train, &test);
    assert!(acc >= 0.9, "nearest-centroid accuracy {acc}");
}

#[test]
fn bars_are_nearest_centroid_learnable() {
    let data = make_synthetic(&SyntheticSpec {
        kind: GeneratorKind::BarsAndStripes,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let (train, test) = split(&data.labeled, (2, 1), 0).unwrap();
    assert!(nearest_centroid_accuracy(&train, &test) >= 0.9);
}

proptest! {
    #[test]
    fn split_is_a_seeded_partition(n in 1usize..80, m in 2usize..6, a in 0usize..6, b in 0usize..4, seed: u64) {
        prop_assume!(a + b > 0);
        let d = toy(n, m);
        let (train, test) = split(&d, (a, b), seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), n);
        let mut all: Vec<(Vec<u32>, usize)> = train
            .labels()
            .iter()
            .enumerate()
            .map(|(i, &l)| (train.image(i).iter().map(|v| v.to_bits()).collect(), l))
            .chain(test.labels().iter().enumerate().map(|(i, &l)| (test.image(i).iter().map(|v| v.to_bits()).collect(), l)))
            .collect();
        let mut orig: Vec<(Vec<u32>, usize)> = (0..n)
            .map(|i| (d.image(i).iter().map(|v| v.to_bits()).collect(), d.labels()[i]))
            .collect();
        all.sort();
        orig.sort();
        prop_assert_eq!(all, orig);
        let again = split(&d, (a, b), seed).unwrap();
        prop_assert_eq!(again, (train, test));
    }
}
