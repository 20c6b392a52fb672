use agmh::format::{self, Checkpoint, FormatError};
use agmh_core::head::HeadShape;
use agmh_core::{synth, AdlDenominator, AgmhModel, CodeDatabase, FeatureSet, PackedCode, Rng, Split, SyntheticSpec, Tensor, TrainConfig};

fn le32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn le64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn two_item_set() -> FeatureSet {
    let mut set = FeatureSet::new(2, 1, 2);
    set.push(70, 3, Split::Query, Tensor::new(&[2, 1, 2], vec![1.0, -2.0, 0.5, 0.25]).unwrap()).unwrap();
    set.push(9, 0, Split::Retrieval, Tensor::new(&[2, 1, 2], vec![0.0, 1e-300, -0.0, 7.0]).unwrap()).unwrap();
    set
}

#[test]
fn features_match_hand_written_bytes() {
    let mut want = b"AGMHFEAT".to_vec();
    le32(&mut want, 1);
    le64(&mut want, 2);
    for e in [2, 1, 2] {
        le32(&mut want, e);
    }
    le64(&mut want, 70);
    le32(&mut want, 3);
    want.push(0);
    f64s(&mut want, &[1.0, -2.0, 0.5, 0.25]);
    le64(&mut want, 9);
    le32(&mut want, 0);
    want.push(1);
    f64s(&mut want, &[0.0, 1e-300, -0.0, 7.0]);

    let set = two_item_set();
    assert_eq!(format::encode_features(&set), want);
    let back = format::decode_features(&want).unwrap();
    assert_eq!(back, set);
    assert!(back.features[1].data()[2].is_sign_negative());
}

#[test]
fn standard_benchmark_round_trips_bitwise() {
    let set = synth::generate(&SyntheticSpec::standard_benchmark(3)).unwrap();
    let bytes = format::encode_features(&set);
    let back = format::decode_features(&bytes).unwrap();
    assert_eq!(back, set);
    assert_eq!(format::encode_features(&back), bytes);
}

#[test]
fn codes_match_hand_written_bytes() {
    let a: Vec<i8> = (0..70).map(|j| if j % 3 == 0 { 1 } else { -1 }).collect();
    let b = vec![-1i8; 70];
    let mut db = CodeDatabase::new(70);
    db.push(5, 1, PackedCode::pack(&a).unwrap()).unwrap();
    db.push(6, 2, PackedCode::pack(&b).unwrap()).unwrap();

    let mut want = b"AGMHCODE".to_vec();
    le32(&mut want, 1);
    le32(&mut want, 70);
    le64(&mut want, 2);
    let mut words = [0u64; 2];
    for j in (0..70).step_by(3) {
        words[j / 64] |= 1 << (j % 64);
    }
    le64(&mut want, 5);
    le32(&mut want, 1);
    le64(&mut want, words[0]);
    le64(&mut want, words[1]);
    le64(&mut want, 6);
    le32(&mut want, 2);
    le64(&mut want, 0);
    le64(&mut want, 0);

    assert_eq!(format::encode_codes(&db), want);
    let back = format::decode_codes(&want).unwrap();
    assert_eq!(back.ids(), &[5, 6]);
    assert_eq!(back.labels(), &[1, 2]);
    assert_eq!(back.codes()[0].unpack(), a);
    assert_eq!(back.codes()[1].unpack(), b);
}

fn checkpoint(seed: u64) -> Checkpoint {
    let config = TrainConfig {
        descriptors: 2,
        channels: 3,
        memory_units: 2,
        memory_slots: 2,
        adl_denominator: AdlDenominator::Pairs,
        siea: false,
        seed: 77,
        ..TrainConfig::desk(5)
    };
    let mut model = AgmhModel::init(config.head_shape(4), 5, &mut Rng::new(seed)).unwrap();
    model.center = Rng::new(seed + 1).gaussian_tensor(&[6], 1.0);
    Checkpoint { config, model }
}

#[test]
fn checkpoint_matches_documented_layout() {
    let ckpt = checkpoint(1);
    let (c, m) = (&ckpt.config, &ckpt.model);
    let mut want = b"AGMHMODL".to_vec();
    le32(&mut want, 1);
    for v in [4, 2, 3, 2, 2, 5] {
        le32(&mut want, v);
    }
    f64s(&mut want, &[c.alpha, c.beta, c.lr, c.lr_drop_factor]);
    for v in [c.outer_iterations, c.epochs_per_iteration, c.batch_size, c.query_sample_size, c.lr_drop_at] {
        le32(&mut want, v as u32);
    }
    le64(&mut want, 77);
    want.extend_from_slice(&[1, 0, 1]);
    for d in &m.head.descriptors {
        for conv in [&d.transform_in, &d.transform_out, &d.query_proj] {
            f64s(&mut want, conv.weight.data());
            f64s(&mut want, conv.bias.data());
        }
        for t in d.mem_keys.iter().chain(&d.interact) {
            f64s(&mut want, t.data());
        }
        f64s(&mut want, d.mem_value.data());
        f64s(&mut want, d.align.weight.data());
        f64s(&mut want, d.align.bias.data());
    }
    f64s(&mut want, m.hash.weight.data());
    f64s(&mut want, m.center.data());

    assert_eq!(format::encode_checkpoint(&ckpt), want);
    assert_eq!(format::decode_checkpoint(&want).unwrap(), ckpt);
}

#[test]
fn truncation_reports_the_offset() {
    let bytes = format::encode_features(&two_item_set());
    // magic 8, version 4, count 8, extents 12, first id 8, label 4, split 1.
    let first_values = 8 + 4 + 8 + 12 + 8 + 4 + 1;
    let err = format::decode_features(&bytes[..first_values + 5]).unwrap_err();
    assert_eq!(err.offset, first_values as u64);
    assert!(err.to_string().contains(&format!("at byte {first_values}")));

    for cut in 0..bytes.len() {
        let err = format::decode_features(&bytes[..cut]).unwrap_err();
        assert!(err.offset <= cut as u64, "{cut}: {err}");
    }
    let ckpt = format::encode_checkpoint(&checkpoint(2));
    for cut in (0..ckpt.len()).step_by(7) {
        assert!(format::decode_checkpoint(&ckpt[..cut]).is_err());
    }
    let codes = format::encode_codes(&CodeDatabase::new(3));
    assert!(format::decode_codes(&codes[..codes.len() - 1]).is_err());
}

#[test]
fn malformed_content_is_rejected() {
    let good = format::encode_features(&two_item_set());
    let at = |bytes: &[u8]| -> FormatError { format::decode_features(bytes).unwrap_err() };

    let mut magic = good.clone();
    magic[0] = b'X';
    assert_eq!(at(&magic).offset, 0);

    let mut version = good.clone();
    version[8] = 2;
    assert_eq!(at(&version).offset, 8);

    let mut split = good.clone();
    split[8 + 4 + 8 + 12 + 12] = 7;
    assert_eq!(at(&split).offset, 44);

    let mut trailing = good.clone();
    trailing.push(0);
    assert_eq!(at(&trailing).offset, good.len() as u64);

    let mut high = format::encode_codes(&{
        let mut db = CodeDatabase::new(3);
        db.push(0, 0, PackedCode::pack(&[1, 1, 1]).unwrap()).unwrap();
        db
    });
    let word = high.len() - 8;
    high[word] = 0xFF;
    assert_eq!(format::decode_codes(&high).unwrap_err().offset, word as u64);

    let mut flag = format::encode_checkpoint(&checkpoint(3));
    let flags = 12 + 6 * 4 + 4 * 8 + 5 * 4 + 8;
    flag[flags] = 2;
    assert_eq!(format::decode_checkpoint(&flag).unwrap_err().offset, flags as u64);
}

#[test]
fn files_round_trip_and_missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/model.agmh");
    let ckpt = checkpoint(4);
    format::save_checkpoint(&path, &ckpt).unwrap();
    assert_eq!(format::load_checkpoint(&path).unwrap(), ckpt);
    assert_eq!(ckpt.model.head.shape, HeadShape { in_channels: 4, channels: 3, descriptors: 2, memory_units: 2, memory_slots: 2 });

    let err = format::load_features(&dir.path().join("absent")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    std::fs::write(dir.path().join("bad"), b"AGMHFEAT").unwrap();
    let err = format::load_features(&dir.path().join("bad")).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("at byte 8"));
}
