//! Acceptance criteria, one report line each. Run with `--nocapture` to see
//! the table.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use qrnnt::decode::*;
use qrnnt::hwsim::*;
use qrnnt::lstm::{run_stack, Placement, QuantCallCounter};
use qrnnt::model::*;
use qrnnt::quant::*;
use qrnnt::tensor::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Oracle boundary for 10^5 standard-Gaussian samples (seed 7) at 4 bits.
const GAUSS4_ORACLE_ALPHA: f64 = 2.498_459_728_266_968_5;

type Criterion = (&'static str, &'static str, fn() -> Outcome, Duration);

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn read_config(name: &str) -> String {
    std::fs::read_to_string(configs().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn gaussian(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0f32, 1.0).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

fn laplace(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(-0.5..0.5);
            (-u.signum() * (1.0 - 2.0 * u.abs()).ln()) as f32
        })
        .collect()
}

fn mse(x: &[f32], p: &QuantParams) -> f64 {
    error_decomposition(x, p).unwrap().total_mse
}

fn random_params(rng: &mut ChaCha8Rng, bits: u32) -> QuantParams {
    if rng.random_bool(0.5) {
        QuantParams::symmetric(bits, rng.random_range(0.01..10.0)).unwrap()
    } else {
        let lower = rng.random_range(-10.0..5.0);
        QuantParams::asymmetric(bits, lower, lower + rng.random_range(0.01..10.0)).unwrap()
    }
}

fn grid_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    let mut cases = 0;
    for bits in [2, 4, 8] {
        for _ in 0..1000 {
            cases += 1;
            let p = random_params(&mut rng, bits);
            let (lo, hi) = p.code_range();
            let codes: Vec<u8> = (lo..=hi).map(|c| c as u8).collect();
            let back = quantize_int(&dequantize(&codes, &p).unwrap(), &p).unwrap();
            if back != codes {
                failures.push(format!("roundtrip {p:?}"));
            }
            let mut x: Vec<f32> = (0..256).map(|_| rng.random_range(p.lower * 1.5 - 1.0..p.upper * 1.5 + 1.0) as f32).collect();
            x.sort_by(f32::total_cmp);
            let q = quantize_int(&x, &p).unwrap();
            if q.windows(2).any(|w| w[0] > w[1]) {
                failures.push(format!("monotonicity {p:?}"));
            }
            let y = fake_quantize(&x, &p).unwrap();
            let bound = p.scale / 2.0 * (1.0 + 1e-6) + 1e-6 * p.upper.abs().max(p.lower.abs());
            for (a, b) in x.iter().zip(&y) {
                let a64 = *a as f64;
                if a64 >= p.lower && a64 <= p.upper && (a64 - *b as f64).abs() > bound {
                    failures.push(format!("residual {a} -> {b} under {p:?}"));
                    break;
                }
            }
        }
    }
    check(failures.is_empty(), format!("{cases} parameter sets, {} failures {:?}", failures.len(), failures.first()))
}

fn sawb_oracle() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, x) in [("gaussian", gaussian(100_000, 7)), ("laplace", laplace(100_000, 8))] {
        let oracle = bounds_sawb(&x, 4, SawbMode::OracleGrid).unwrap().upper;
        let closed = bounds_sawb(&x, 4, SawbMode::closed_form()).unwrap().upper;
        let ratio = closed / oracle;
        pass &= (ratio - 1.0).abs() <= 0.10;
        notes.push(format!("{name} closed/oracle {ratio:.3}"));
        if name == "gaussian" {
            pass &= (oracle - GAUSS4_ORACLE_ALPHA).abs() < 1e-9;
            notes.push(format!("oracle alpha {oracle:.6}"));
        }
    }
    for seed in 0..5 {
        let mut x = gaussian(100_000, 20 + seed);
        for (i, v) in [4.5f32, -5.0, 6.0, -7.5, 8.0].iter().enumerate() {
            x[i * 997] = *v;
        }
        let oracle = bounds_sawb(&x, 4, SawbMode::OracleGrid).unwrap();
        let max = bounds_max(&x, 4, true).unwrap();
        pass &= mse(&x, &oracle) <= mse(&x, &max);
        if seed == 0 {
            notes.push(format!("outliers: oracle mse {:.2e} vs max {:.2e}", mse(&x, &oracle), mse(&x, &max)));
        }
    }
    check(pass, notes.join(", "))
}

fn pact() -> Outcome {
    let x = gaussian(100_000, 7);
    let oracle = bounds_sawb(&x, 4, SawbMode::OracleGrid).unwrap().upper;
    let cal = calibrate_pact(&x, 4, 500, 10.0).unwrap();
    let (lo, hi) = (-cal.params.lower / oracle, cal.params.upper / oracle);
    let pass = (lo - 1.0).abs() <= 0.10 && (hi - 1.0).abs() <= 0.10 && cal.final_mse <= cal.initial_mse;
    check(
        pass,
        format!("alpha-/oracle {lo:.3}, alpha+/oracle {hi:.3}, mse {:.3e} -> {:.3e}", cal.initial_mse, cal.final_mse),
    )
}

fn call_counts() -> Outcome {
    let arch = ArchConfig {
        encoder_layers: 6,
        ..ArchConfig::toy()
    };
    let net = Network::build(&arch, NetKind::Rnnt, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<Vec<f32>> = (0..152)
        .map(|_| (0..arch.encoder_input).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let calib = CalibrationData {
        utterances: vec![x.clone()],
        labels: vec![vec![1, 2, 3]],
    };
    let mut counts = Vec::new();
    for placement in [Placement::Inner, Placement::Outer] {
        let scheme = QuantScheme {
            placement,
            ..QuantScheme::mixed_default(&arch, 4)
        };
        let q = quantize_model(&net, &scheme, &calib).unwrap();
        let mut counter = QuantCallCounter::default();
        run_stack(&q.as_rnnt().unwrap().encoder.layers, &x, &mut counter).unwrap();
        counts.push(counter.activation_calls);
    }
    let reduction = 1.0 - counts[1] as f64 / counts[0] as f64;
    check(
        counts == [3648, 1976] && (reduction - 0.458).abs() < 5e-4,
        format!("inner {}, outer {}, reduction {:.1}%", counts[0], counts[1], 100.0 * reduction),
    )
}

fn kernels() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut overflow = 0;
    for case in 0..1000 {
        let bits_w = if case % 2 == 0 { 4 } else { 8 };
        let bits_x = if case % 3 == 0 { 8 } else { 4 };
        let (rows, cols) = (rng.random_range(1..40), rng.random_range(1..300));
        let w_real: Vec<f32> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = PackedTensor::quantize(&w_real, vec![rows, cols], bounds_max(&w_real, bits_w, true).unwrap()).unwrap();
        let lower = rng.random_range(-3.0..0.0);
        let xp = QuantParams::asymmetric(bits_x, lower, lower + rng.random_range(0.5..4.0)).unwrap().to_kernel();
        let batch = rng.random_range(1..4);
        let xs: Vec<PackedTensor> = (0..batch)
            .map(|_| {
                let v: Vec<f32> = (0..cols).map(|_| rng.random_range(-3.0..4.0)).collect();
                PackedTensor::quantize(&v, vec![cols], xp).unwrap()
            })
            .collect();
        let bias_v: Vec<f32> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = FloatTensor::vector(bias_v.clone()).unwrap();
        let wd = w.dequantize();
        let out = if batch == 1 {
            match qgemv(&w, &xs[0], &bias) {
                Ok(o) => o.values,
                Err(_) => {
                    overflow += 1;
                    continue;
                }
            }
        } else {
            match qgemm(&w, &xs, &bias) {
                Ok(o) => o.values,
                Err(_) => {
                    overflow += 1;
                    continue;
                }
            }
        };
        for (b, x) in xs.iter().enumerate() {
            let xd = x.dequantize();
            for r in 0..rows {
                let terms = (0..cols).map(|c| wd[r * cols + c] as f64 * xd[c] as f64);
                let (dot, mag) = terms.fold((0.0, 0.0), |(s, m), t| (s + t, m + t.abs()));
                let reference = dot + bias_v[r] as f64;
                let scale = mag + (bias_v[r] as f64).abs();
                let err = (out[b * rows + r] as f64 - reference).abs() / scale.max(f64::MIN_POSITIVE);
                worst = worst.max(err);
            }
        }
    }
    check(
        worst <= 1e-5 && overflow == 0,
        format!("1000 cases, worst relative error {worst:.2e}, overflow checks triggered {overflow}"),
    )
}

fn sizes() -> Outcome {
    let arch = ArchConfig::from_toml(&read_config("arch_default.toml")).unwrap();
    let s44 = QuantScheme::from_toml(&read_config("scheme_default.toml")).unwrap();
    let s24 = QuantScheme::from_toml(&read_config("scheme_w2a4.toml")).unwrap();
    let rnnt = planned_size(&arch, &[NetKind::Rnnt], &s44).unwrap();
    let full = planned_size(&arch, &NetKind::ALL, &s44).unwrap();
    let low = planned_size(&arch, &[NetKind::Rnnt], &s24).unwrap();
    let within = |v: f64, t: f64| (v / t - 1.0).abs() <= 0.05;
    let pass = within(rnnt.size_mb, 30.9)
        && within(rnnt.compression, 7.2)
        && within(full.size_mb, 57.2)
        && within(full.compression, 7.6)
        && within(low.size_mb, 18.3)
        && within(low.compression, 12.2)
        && full.fraction(Storage::Packed4) >= 0.94;
    check(
        pass,
        format!(
            "rnnt 4/4 {:.2} MB ({:.2}x), full 4/4 {:.2} MB ({:.2}x, {:.1}% at 4 bits), rnnt 2/4 {:.2} MB ({:.2}x)",
            rnnt.size_mb,
            rnnt.compression,
            full.size_mb,
            full.compression,
            100.0 * full.fraction(Storage::Packed4),
            low.size_mb,
            low.compression
        ),
    )
}

fn decoder_equivalences() -> Outcome {
    let arch = ArchConfig::toy();
    let features = |frames: usize, seed: u64| -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..frames)
            .map(|_| (0..arch.encoder_input).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    };
    let cfg = |beam, weights| DecodeConfig {
        beam,
        weights,
        ..DecodeConfig::default()
    };
    let mut greedy_ok = 0;
    for seed in 0..50 {
        let mut m = Rnnt::build(&arch, 1000 + seed).unwrap();
        m.joint.bias[BLANK] += [0.0, 2.0, 3.5][seed as usize % 3];
        let x = features(6 + seed as usize % 5, seed);
        let r = beam_search(&x, &DecodeNets::new(&m, None, None), &cfg(1, FusionWeights::OFF)).unwrap();
        let (labels, score) = greedy_oracle(&m, &x, DecodeConfig::default().max_symbols_per_frame);
        if r.labels == labels && (r.score - score).abs() < 1e-9 {
            greedy_ok += 1;
        }
    }
    let (mut fusion_off, mut cache, mut determinism) = (true, true, true);
    for seed in 0..5 {
        let mut m = Rnnt::build(&arch, 2000 + seed).unwrap();
        m.joint.bias[BLANK] += 2.0;
        let ext = LanguageModel::build(&arch, NetKind::LmExt, 3000 + seed).unwrap();
        let src = LanguageModel::build(&arch, NetKind::LmSrc, 4000 + seed).unwrap();
        let x = features(8, 50 + seed);
        let plain = DecodeNets::new(&m, None, None);
        let fused = DecodeNets::new(&m, Some(&ext), Some(&src));
        for beam in [1, 4, 16] {
            let a = beam_search(&x, &plain, &cfg(beam, FusionWeights::OFF)).unwrap();
            let b = beam_search(&x, &fused, &cfg(beam, FusionWeights::OFF)).unwrap();
            fusion_off &= labels_to_text(&a.labels).as_bytes() == labels_to_text(&b.labels).as_bytes();
        }
        let on = DecodeConfig {
            record_trace: true,
            record_beams: true,
            ..cfg(16, FusionWeights::default())
        };
        let off = DecodeConfig { use_cache: false, ..on };
        let a = beam_search(&x, &fused, &on).unwrap();
        let b = beam_search(&x, &fused, &off).unwrap();
        cache &= a.score.to_bits() == b.score.to_bits() && a.labels == b.labels && a.finalists == b.finalists;
        let again = beam_search(&x, &fused, &on).unwrap();
        determinism &= a == again
            && a.workload.as_ref().map(WorkloadTrace::to_json) == again.workload.as_ref().map(WorkloadTrace::to_json);
    }
    check(
        greedy_ok == 50 && fusion_off && cache && determinism,
        format!(
            "greedy oracle {greedy_ok}/50, fusion-off identical {fusion_off}, cache score-identical {cache}, deterministic {determinism}"
        ),
    )
}

/// Frame-synchronous greedy decoding written against the network API only.
fn greedy_oracle(rnnt: &Rnnt, x: &[Vec<f32>], cap: usize) -> (Vec<usize>, f64) {
    let mut c = QuantCallCounter::default();
    let enc = rnnt.encode(x, &mut c).unwrap();
    let (mut state, mut dec) = rnnt.pred_step(&rnnt.pred_start().unwrap(), BLANK, &mut c).unwrap();
    let (mut labels, mut score) = (Vec::new(), 0.0);
    for e in &enc {
        let mut emitted = 0;
        loop {
            let lp = rnnt.joint(e, &dec, &mut c).unwrap();
            let mut k = (0..lp.len()).fold(0, |best, i| if lp[i] > lp[best] { i } else { best });
            if emitted == cap {
                k = BLANK;
            }
            score += lp[k];
            if k == BLANK {
                break;
            }
            labels.push(k);
            emitted += 1;
            (state, dec) = rnnt.pred_step(&state, k, &mut c).unwrap();
        }
    }
    (labels, score)
}

fn fusion_scoring() -> Outcome {
    let w = DecodeConfig::from_toml(&read_config("decode_default.toml")).unwrap().weights;
    let defaults = w == FusionWeights { mu: 0.7, lambda: 0.5, rho: 0.2 } && w == FusionWeights::default();
    let parts = ScoreParts {
        log_p_rnnt: -2.0,
        log_p_ext: -1.0,
        log_p_src: -3.0,
        labels: 5,
    };
    let worked = fusion_score(&parts, &w);
    // Exact up to the rounding of the decimal weights.
    let worked_ok = (worked - -0.2).abs() <= 4.0 * f64::EPSILON;
    let off_ok = fusion_score(&parts, &FusionWeights::OFF) == -2.0;
    let rho_only = FusionWeights { mu: 0.0, lambda: 0.0, rho: 0.2 };
    let empty_ok = fusion_score(&ScoreParts::default(), &rho_only) == 0.0;
    let more = ScoreParts {
        log_p_rnnt: -4.5,
        log_p_ext: -2.0,
        log_p_src: -1.0,
        labels: 2,
    };
    let more_ok = fusion_score(&more, &FusionWeights { mu: 0.5, lambda: 0.25, rho: 1.0 }) == -3.25;
    check(
        defaults && worked_ok && off_ok && empty_ok && more_ok,
        format!("defaults from config {defaults}, worked example {worked:.17}, off {off_ok}, empty {empty_ok}, extra {more_ok}"),
    )
}

fn hw_anchors() -> Outcome {
    let hw32 = HwConfig::from_toml(&read_config("hw_bw32.toml")).unwrap();
    let hw64 = HwConfig::from_toml(&read_config("hw_bw64.toml")).unwrap();
    let w = WorkloadProfile::from_toml(&read_config("workload_default.toml")).unwrap();
    let arch = ArchConfig::from_toml(&read_config("arch_default.toml")).unwrap();
    let run = |p, lms, beam, hw: &HwConfig| simulate(&arch_trace(&arch, p, lms, &w, beam).unwrap(), hw).unwrap();
    let r16 = run(PrecisionProfile::Real16, true, 16, &hw32);
    let r8 = run(PrecisionProfile::Int8, true, 16, &hw32);
    let r4 = run(PrecisionProfile::Mixed4, true, 16, &hw32);
    let r4_64 = run(PrecisionProfile::Mixed4, true, 16, &hw64);
    let r4_64_b1 = run(PrecisionProfile::Mixed4, true, 1, &hw64);
    let r16_nolm = run(PrecisionProfile::Real16, false, 16, &hw32);
    let acc = compare(&r16, &r4);
    let acc64 = compare(&r16, &r4_64);
    let rel = |v: f64, t: f64, tol: f64| (v / t - 1.0).abs() <= tol;
    let pts = |v: f64, t: f64| (v - t).abs() <= 0.03;
    let anchors = [
        ("rtf real16", r16.rtf, 0.221, rel(r16.rtf, 0.221, 0.10)),
        ("rtf int8", r8.rtf, 0.116, rel(r8.rtf, 0.116, 0.10)),
        ("rtf int4", r4.rtf, 0.065, rel(r4.rtf, 0.065, 0.10)),
        ("rtf int4 64G", r4_64.rtf, 0.038, rel(r4_64.rtf, 0.038, 0.10)),
        ("accel 64G", acc64.total, 5.8, rel(acc64.total, 5.8, 0.10)),
        ("accel enc", acc.encoder, 3.8, rel(acc.encoder, 3.8, 0.10)),
        ("accel dec", acc.decoder, 3.6, rel(acc.decoder, 3.6, 0.10)),
        ("accel total", acc.total, 3.4, rel(acc.total, 3.4, 0.10)),
        ("non-accel share", r4.share(Component::NonAccelerable), 0.12, pts(r4.share(Component::NonAccelerable), 0.12)),
        ("encoder share", r16_nolm.share(Component::Encoder), 0.87, pts(r16_nolm.share(Component::Encoder), 0.87)),
        ("lm_ext share", r16.share(Component::LmExt), 0.56, pts(r16.share(Component::LmExt), 0.56)),
        ("beam-1 64G", r4_64_b1.rtf, 0.022, rel(r4_64_b1.rtf, 0.022, 0.15)),
    ];
    let failed: Vec<&str> = anchors.iter().filter(|a| !a.3).map(|a| a.0).collect();
    let detail = anchors
        .iter()
        .map(|(n, v, t, _)| format!("{n} {v:.4}/{t}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(failed.is_empty(), format!("{detail}; failed {failed:?}"))
}

fn wer_cases() -> Outcome {
    let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let same = wer(&words("a b c"), &words("a b c"));
    let mixed = wer(&words("a x c d"), &words("a b c"));
    let empty = wer(&[], &words("a b c d"));
    let pass = same.percent() == 0.0
        && (mixed.substitutions, mixed.insertions, mixed.deletions) == (1, 1, 0)
        && (mixed.percent() - 200.0 / 3.0).abs() < 1e-9
        && empty.deletions == 4
        && empty.percent() == 100.0;
    check(
        pass,
        format!(
            "WER numbers need trained models and licensed corpora: NOT REPRODUCED; scorer cases {:.1}% / {:.1}% / {:.1}%",
            same.percent(),
            mixed.percent(),
            empty.percent()
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("1", "quantizer grid suite", grid_suite, Duration::from_secs(10)),
        ("2", "SAWB oracle", sawb_oracle, Duration::from_secs(30)),
        ("3", "PACT calibration", pact, Duration::from_secs(30)),
        ("4", "call-count formulas", call_counts, Duration::from_secs(10)),
        ("5", "integer-kernel equivalence", kernels, Duration::from_secs(30)),
        ("6", "size accounting", sizes, Duration::from_secs(5)),
        ("7", "decoder equivalences", decoder_equivalences, Duration::from_secs(120)),
        ("8", "fusion scoring", fusion_scoring, Duration::from_secs(5)),
        ("9", "hw simulator calibration", hw_anchors, Duration::from_secs(60)),
        ("10", "WER (scorer only)", wer_cases, Duration::from_secs(5)),
    ];
    let mut failed = Vec::new();
    for (id, name, run, limit) in criteria {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let pass = out.pass && took <= limit;
        println!(
            "{} {id:>2} {name}: {} [{:.2}s / {}s]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
        if !pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
