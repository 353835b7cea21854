use omnidistill::config::{hash_json, ArchName, PipelineConfig};
use omnidistill::synth_spec::{parse_spec, render_spec, spec_hash};
use omnidistill::Error;
use omnidistill_core::data::GeneratorKind;

#[test]
fn empty_file_gives_defaults() {
    let c = PipelineConfig::from_toml("").unwrap();
    assert_eq!(c, PipelineConfig::default());
    assert_eq!(c.train.learning_rate, 0.001);
    assert_eq!(c.train.momentum, 0.9);
    assert_eq!(c.selection.delta, 0.05);
    assert_eq!(c.compare.seeds.len(), 5);
}

#[test]
fn sections_override_defaults() {
    let c = PipelineConfig::from_toml(
        r#"
        seed = 7
        [architecture]
        kind = "tiny-conv"
        filters = 4
        [distill]
        iterations = 10
        snapshot_every = 5
        [distill.architecture]
        hidden = []
        "#,
    )
    .unwrap();
    assert_eq!(c.seed, 7);
    assert_eq!(c.architecture.kind, ArchName::TinyConv);
    assert_eq!(c.architecture.filters, 4);
    assert_eq!(c.distill.iterations, 10);
    assert_eq!(c.distill_architecture().hidden, Vec::<usize>::new());
}

#[test]
fn unknown_keys_are_rejected() {
    for text in ["sede = 1", "[train]\nlearning_rte = 0.1", "[bogus]\nx = 1"] {
        assert!(matches!(PipelineConfig::from_toml(text), Err(Error::Input(_))), "{text}");
    }
}

#[test]
fn config_round_trips_through_toml() {
    let mut c = PipelineConfig::default();
    c.selection.per_class_cap = Some(12);
    c.paths.test = Some("test.odim".into());
    let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash(), c.hash());
}

#[test]
fn hash_tracks_every_field() {
    let base = PipelineConfig::default();
    let mut other = base.clone();
    other.train.epochs += 1;
    assert_ne!(base.hash(), other.hash());
    let mut other = base.clone();
    other.distill.alpha *= 2.0;
    assert_ne!(base.hash(), other.hash());
}

#[test]
fn hash_ignores_key_order() {
    let a: serde_json::Value = serde_json::from_str(r#"{"b": 1, "a": [1, 2], "c": {"y": 0, "x": 1}}"#).unwrap();
    let b: serde_json::Value = serde_json::from_str(r#"{"c": {"x": 1, "y": 0}, "a": [1, 2], "b": 1}"#).unwrap();
    assert_eq!(hash_json(&a), hash_json(&b));
}

#[test]
fn synthetic_spec_parses_and_renders() {
    let spec = parse_spec(
        "# acceptance pool\nkind = bars-and-stripes\nclasses = 7\nper_class = 6 # trailing comment\n\
         height = 6\nwidth = 6\nchannels = 3\nbrightness = 0.1\nrotation = 0.2\npool_size = 9\nseed = 4\n",
    )
    .unwrap();
    assert_eq!(spec.kind, GeneratorKind::BarsAndStripes);
    assert_eq!((spec.num_classes, spec.per_class, spec.pool_size, spec.seed), (7, 6, 9, 4));
    assert_eq!(spec.shape.channels, 3);
    assert_eq!(spec.shift.brightness, 0.1);
    let again = parse_spec(&render_spec(&spec)).unwrap();
    assert_eq!(again, spec);
    assert_eq!(spec_hash(&again), spec_hash(&spec));
}

#[test]
fn synthetic_spec_rejects_unknown_keys_and_values() {
    assert!(parse_spec("colour = red").is_err());
    assert!(parse_spec("kind = spirals").is_err());
    assert!(parse_spec("classes = three").is_err());
    assert!(parse_spec("classes 3").is_err());
}
