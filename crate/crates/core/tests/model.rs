use qrnnt::lstm::Weight;
use qrnnt::model::*;
use qrnnt::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn calib(arch: &ArchConfig, seed: u64) -> CalibrationData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let utterances = (0..3)
        .map(|_| {
            (0..9)
                .map(|_| (0..arch.encoder_input).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect()
        })
        .collect();
    let labels = (0..3)
        .map(|_| (0..6).map(|_| rng.random_range(1..arch.vocab)).collect())
        .collect();
    CalibrationData { utterances, labels }
}

fn quantized(kind: NetKind, low_bits: u32) -> Result<Network> {
    let arch = ArchConfig::toy();
    let net = Network::build(&arch, kind, 5)?;
    quantize_model(&net, &QuantScheme::mixed_default(&arch, low_bits), &calib(&arch, 9))
}

fn weight_codes(net: &Network) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut push = |w: &Weight| {
        if let Weight::Quant(q) = w {
            out.push(q.packed().payload().to_vec());
        }
    };
    for (_, l) in net.layers() {
        match l {
            LayerRef::Lstm(l) => l.dirs.iter().for_each(|d| {
                push(&d.w_ih);
                push(&d.w_hh)
            }),
            LayerRef::Linear(l) => push(&l.weight),
            LayerRef::Embedding(e) => push(&e.table),
        }
    }
    out
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    for kind in NetKind::ALL {
        let net = quantized(kind, 4).unwrap();
        let bytes = to_bytes(&net).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&back).unwrap(), bytes, "{kind:?}");
        let (h, _) = read_header(&bytes).unwrap();
        let planned = plan_layout(&ArchConfig::toy(), kind, &QuantScheme::mixed_default(&ArchConfig::toy(), 4)).unwrap();
        assert_eq!(planned.len(), h.tensors.len());
        for (p, t) in planned.iter().zip(&h.tensors) {
            assert_eq!((&p.name, &p.shape, p.storage, p.offset, p.length), (&t.name, &t.shape, t.storage, t.offset, t.length));
        }
    }
}

#[test]
fn roundtrip_preserves_decoding_outputs() {
    let net = quantized(NetKind::Rnnt, 4).unwrap();
    let back = from_bytes(&to_bytes(&net).unwrap()).unwrap();
    let (a, b) = (net.as_rnnt().unwrap(), back.as_rnnt().unwrap());
    let x = calib(&ArchConfig::toy(), 1).utterances.remove(0);
    let mut c = qrnnt::lstm::QuantCallCounter::default();
    assert_eq!(a.encode(&x, &mut c).unwrap(), b.encode(&x, &mut c).unwrap());
}

#[test]
fn truncated_and_overlapping_checkpoints_rejected() {
    let net = quantized(NetKind::LmSrc, 4).unwrap();
    let bytes = to_bytes(&net).unwrap();
    let cut = &bytes[..bytes.len() - 3];
    assert!(matches!(from_bytes(cut), Err(Error::CorruptCheckpoint(_))));
    assert!(matches!(from_bytes(b"QRT0xxxxxxxxxxxx"), Err(Error::CorruptCheckpoint(_))));

    let (mut header, payload) = read_header(&bytes).unwrap();
    header.tensors[1].offset = header.tensors[0].offset + 1;
    let json = serde_json::to_vec(&header).unwrap();
    let mut evil = MAGIC.to_vec();
    evil.extend_from_slice(&(json.len() as u64).to_le_bytes());
    evil.extend_from_slice(&json);
    evil.extend_from_slice(payload);
    match from_bytes(&evil) {
        Err(Error::CorruptCheckpoint(m)) => assert!(m.contains("overlap"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn identity_scheme_stores_real32() {
    let arch = ArchConfig::toy();
    let net = Network::build(&arch, NetKind::Rnnt, 2).unwrap();
    let q = quantize_model(&net, &QuantScheme::identity(), &CalibrationData::default()).unwrap();
    let (h, _) = read_header(&to_bytes(&q).unwrap()).unwrap();
    let report = SizeReport::from_entries(&h.tensors);
    assert_eq!(report.compression, 1.0);
    assert_eq!(report.fraction(Storage::Real32), 1.0);
    assert_eq!(report.total_params, arch.rnnt_params());
}

#[test]
fn requantization_is_idempotent_on_codes() {
    let arch = ArchConfig::toy();
    for kind in NetKind::ALL {
        let once = quantized(kind, 4).unwrap();
        let twice = quantize_model(&once, &QuantScheme::mixed_default(&arch, 4), &calib(&arch, 9)).unwrap();
        assert_eq!(weight_codes(&once), weight_codes(&twice));
        assert!(!weight_codes(&once).is_empty());
    }
}

#[test]
fn missing_calibration_is_reported() {
    let arch = ArchConfig::toy();
    let net = Network::build(&arch, NetKind::LmExt, 1).unwrap();
    let scheme = QuantScheme::mixed_default(&arch, 4);
    match quantize_model(&net, &scheme, &CalibrationData::default()) {
        Err(Error::MissingCalibration { layer, .. }) => assert_eq!(layer, "lm_ext.lstm0"),
        other => panic!("{other:?}"),
    }
    let rnnt = Network::build(&arch, NetKind::Rnnt, 1).unwrap();
    match quantize_model(&rnnt, &scheme, &CalibrationData::default()) {
        Err(Error::MissingCalibration { layer, kind }) => {
            assert_eq!(layer, "enc.lstm0");
            assert_eq!(kind, "input");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn quantized_model_tracks_float_model() {
    let arch = ArchConfig::toy();
    let net = Network::build(&arch, NetKind::Rnnt, 5).unwrap();
    let q = quantized(NetKind::Rnnt, 4).unwrap();
    let x = calib(&arch, 9).utterances.remove(0);
    let mut c = qrnnt::lstm::QuantCallCounter::default();
    let a = net.as_rnnt().unwrap().encode(&x, &mut c).unwrap();
    let b = q.as_rnnt().unwrap().encode(&x, &mut c).unwrap();
    let num: f64 = a.iter().flatten().zip(b.iter().flatten()).map(|(u, v)| ((u - v) as f64).powi(2)).sum();
    let den: f64 = a.iter().flatten().map(|u| (*u as f64).powi(2)).sum();
    assert!(num / den < 0.25, "relative error {}", num / den);
    assert!(c.activation_calls > 0);
}

#[test]
fn full_size_parameter_counts() {
    let a = ArchConfig::default();
    let within = |v: usize, target: f64| (v as f64 / target - 1.0).abs() <= 0.02;
    assert!(within(a.rnnt_params(), 57.2e6));
    assert!(within(a.encoder_params(), 54.6e6));
    assert!(within(a.prediction_params(), 2.6e6));
    assert!(within(a.lm_ext_params(), 51.0e6));
    assert!(within(a.lm_src_params(), 2.6e6));
}

#[test]
fn committed_scheme_files_match_generator() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let arch = ArchConfig::from_toml(&std::fs::read_to_string(root.join("arch_default.toml")).unwrap()).unwrap();
    assert_eq!(arch, ArchConfig::default());
    for (file, bits) in [("scheme_default.toml", 4), ("scheme_w2a4.toml", 2)] {
        let text = std::fs::read_to_string(root.join(file)).unwrap();
        assert_eq!(QuantScheme::from_toml(&text).unwrap(), QuantScheme::mixed_default(&arch, bits), "{file}");
    }
}
