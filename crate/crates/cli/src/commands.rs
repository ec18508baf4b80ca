use std::path::Path;

use qrnnt::decode::{
    beam_search, labels_to_text, text_to_labels, wer_text, DecodeConfig, DecodeNets, FusionWeights, ScoreParts,
    WerCounts,
};
use qrnnt::features::FeatureSet;
use qrnnt::hwsim::{
    compare, simulate, sweep_beam, Component, HwConfig, ModelProfile, PrecisionProfile, RtfReport, WorkloadProfile,
    WorkloadTrace,
};
use qrnnt::model::{
    load_checkpoint, load_header, quantize_model, save_checkpoint, vocabulary_sweep, ArchConfig, CalibrationData,
    LanguageModel, NetKind, Network, QuantScheme, SizeReport,
};
use qrnnt::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::report::{read_text, write, RunReport};
use crate::{Cli, Command, Decode, GenData, InitModel, Quantize, Simulate, Sweep};

pub fn run(cli: &Cli) -> Result<()> {
    let report = match &cli.command {
        Command::InitModel(a) => init_model(a)?,
        Command::Quantize(a) => quantize(a)?,
        Command::Decode(a) => decode(a)?,
        Command::Simulate(a) => simulate_cmd(a)?,
        Command::Sweep(a) => sweep(a)?,
        Command::GenData(a) => gen_data(a)?,
    };
    let text = report.to_json();
    if let Some(path) = &cli.report {
        write(path, format!("{text}\n"))?;
    }
    println!("{text}");
    Ok(())
}

fn load_arch(path: Option<&Path>, report: &mut RunReport) -> Result<ArchConfig> {
    match path {
        Some(p) => {
            let text = read_text(p)?;
            report.digest_bytes("arch", text.as_bytes());
            ArchConfig::from_toml(&text)
        }
        None => {
            let arch = ArchConfig::default();
            report.digest_bytes("arch", arch.to_toml().as_bytes());
            Ok(arch)
        }
    }
}

fn load_hw(spec: &str, role: &str, report: &mut RunReport) -> Result<HwConfig> {
    let path = Path::new(spec);
    let hw = if path.is_file() {
        HwConfig::from_toml(&read_text(path)?)?
    } else {
        HwConfig::preset(spec)?
    };
    report.digest_bytes(role, hw.to_toml().as_bytes());
    Ok(hw)
}

fn load_net(path: &Path, role: &str, report: &mut RunReport) -> Result<Network> {
    report.digest_file(role, path)?;
    load_checkpoint(path)
}

fn init_model(a: &InitModel) -> Result<RunReport> {
    let mut report = RunReport::new("init-model", Some(a.seed));
    let arch = load_arch(a.arch.as_deref(), &mut report)?;
    let targets = [
        (NetKind::Rnnt, Some(&a.out), a.seed),
        (NetKind::LmExt, a.lm_ext_out.as_ref(), a.seed.wrapping_add(1)),
        (NetKind::LmSrc, a.lm_src_out.as_ref(), a.seed.wrapping_add(2)),
    ];
    let mut written = Vec::new();
    for (kind, path, seed) in targets {
        let Some(path) = path else { continue };
        let net = Network::build(&arch, kind, seed)?;
        save_checkpoint(&net, path)?;
        report.digest_file(&format!("out.{}", kind.name()), path)?;
        written.push(json!({
            "kind": kind.name(),
            "path": path,
            "seed": seed,
            "params": net.param_count(),
        }));
    }
    report.set_outputs(json!({
        "checkpoints": written,
        "arch_params": {
            "encoder": arch.encoder_params(),
            "prediction": arch.prediction_params(),
            "joint": arch.joint_params(),
            "rnnt": arch.rnnt_params(),
            "lm_ext": arch.lm_ext_params(),
            "lm_src": arch.lm_src_params(),
        },
    }))?;
    Ok(report)
}

fn quantize(a: &Quantize) -> Result<RunReport> {
    let mut report = RunReport::new("quantize", None);
    let net = load_net(&a.ckpt, "ckpt", &mut report)?;
    let scheme = match a.scheme.as_str() {
        "default" => QuantScheme::mixed_default(net.arch(), 4),
        "w2a4" => QuantScheme::mixed_default(net.arch(), 2),
        file => QuantScheme::from_toml(&read_text(Path::new(file))?)?,
    };
    report.digest_bytes("scheme", scheme.to_toml().as_bytes());
    let mut data = CalibrationData::default();
    if let Some(path) = &a.calib {
        report.digest_file("calib", path)?;
        data.utterances = FeatureSet::load(path)?.utterances;
    }
    data.labels = match &a.calib_text {
        Some(path) => {
            report.digest_file("calib_text", path)?;
            read_text(path)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(text_to_labels)
                .collect::<Result<_>>()?
        }
        None => vec![vocabulary_sweep(net.arch().vocab)],
    };
    let q = quantize_model(&net, &scheme, &data)?;
    save_checkpoint(&q, &a.out)?;
    report.digest_file("out", &a.out)?;
    let size = SizeReport::from_entries(&load_header(&a.out)?.tensors);
    report.set_outputs(json!({
        "kind": q.kind().name(),
        "path": a.out,
        "size": size,
    }))?;
    Ok(report)
}

#[derive(Serialize)]
struct UtteranceOutput {
    index: usize,
    frames: usize,
    text: String,
    score: f64,
    parts: ScoreParts,
    cache_hits: u64,
    cache_misses: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wer: Option<WerCounts>,
}

fn lm_of<'a>(net: &'a Option<Network>, kind: NetKind, path: &Option<std::path::PathBuf>) -> Result<Option<&'a LanguageModel>> {
    match net {
        None => Ok(None),
        Some(n) => match n.as_lm() {
            Some(lm) if lm.kind == kind => Ok(Some(lm)),
            _ => Err(Error::Precondition(format!(
                "{} holds a {} network, expected {}",
                path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                n.kind().name(),
                kind.name()
            ))),
        },
    }
}

fn decode(a: &Decode) -> Result<RunReport> {
    let mut report = RunReport::new("decode", None);
    let mut cfg = match &a.config {
        Some(path) => {
            let text = read_text(path)?;
            DecodeConfig::from_toml(&text)?
        }
        None => DecodeConfig::default(),
    };
    if let Some(b) = a.beam {
        cfg.beam = b as usize;
    }
    if let Some(m) = a.max_symbols_per_frame {
        cfg.max_symbols_per_frame = m as usize;
    }
    cfg.weights = FusionWeights {
        mu: a.mu.unwrap_or(cfg.weights.mu),
        lambda: a.lambda.unwrap_or(cfg.weights.lambda),
        rho: a.rho.unwrap_or(cfg.weights.rho),
    };
    cfg.use_cache &= !a.no_cache;
    cfg.record_trace = a.trace.is_some();
    cfg.validate()?;
    report.digest_bytes("decode_config", cfg.to_toml().as_bytes());

    let net = load_net(&a.ckpt, "ckpt", &mut report)?;
    let rnnt = net
        .as_rnnt()
        .ok_or_else(|| Error::Precondition(format!("{} is not a transducer checkpoint", a.ckpt.display())))?;
    let ext_net = a.lm_ext.as_ref().map(|p| load_net(p, "lm_ext", &mut report)).transpose()?;
    let src_net = a.lm_src.as_ref().map(|p| load_net(p, "lm_src", &mut report)).transpose()?;
    let ext = lm_of(&ext_net, NetKind::LmExt, &a.lm_ext)?;
    let src = lm_of(&src_net, NetKind::LmSrc, &a.lm_src)?;
    report.digest_file("features", &a.features)?;
    let features = FeatureSet::load(&a.features)?;
    let refs = match &a.refs {
        Some(path) => {
            report.digest_file("refs", path)?;
            let lines: Vec<String> = read_text(path)?.lines().map(str::to_string).collect();
            if lines.len() != features.utterances.len() {
                return Err(Error::Precondition(format!(
                    "{} reference lines for {} utterances",
                    lines.len(),
                    features.utterances.len()
                )));
            }
            Some(lines)
        }
        None => None,
    };

    let nets = DecodeNets::new(rnnt, ext, src);
    let results = features
        .utterances
        .par_iter()
        .map(|x| beam_search(x, &nets, &cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut total = WerCounts::default();
    let mut merged = WorkloadTrace::new(0);
    let mut outputs = Vec::with_capacity(results.len());
    for (i, r) in results.iter().enumerate() {
        let text = labels_to_text(&r.labels);
        let reference = refs.as_ref().map(|l| l[i].clone());
        let wer = reference.as_ref().map(|rf| wer_text(&text, rf));
        if let Some(w) = &wer {
            total.add(w);
        }
        if let Some(t) = &r.workload {
            merged.extend(t);
        }
        outputs.push(UtteranceOutput {
            index: i,
            frames: features.utterances[i].len(),
            text,
            score: r.score,
            parts: r.parts,
            cache_hits: r.cache_hits,
            cache_misses: r.cache_misses,
            reference,
            wer,
        });
    }
    if let Some(path) = &a.out {
        let lines: String = outputs.iter().map(|o| format!("{}\n", o.text)).collect();
        write(path, lines)?;
    }
    if let Some(path) = &a.trace {
        write(path, merged.to_json())?;
    }
    report.set_outputs(json!({
        "config": cfg,
        "utterances": outputs,
        "wer": refs.as_ref().map(|_| json!({"counts": total, "percent": total.percent()})),
        "trace": a.trace,
    }))?;
    Ok(report)
}

const CSV_HEADER: &str = "beam,component,seconds,rtf\n";

fn csv_rows(beam: Option<usize>, r: &RtfReport) -> String {
    let beam = beam.map(|b| b.to_string()).unwrap_or_default();
    let mut out = String::new();
    for c in Component::ALL {
        out.push_str(&format!("{beam},{},{},{}\n", c.name(), r.breakdown.get(c), r.component_rtf(c)));
    }
    out.push_str(&format!("{beam},total,{},{}\n", r.total_s, r.rtf));
    out
}

fn simulate_cmd(a: &Simulate) -> Result<RunReport> {
    let mut report = RunReport::new("simulate", None);
    report.digest_file("trace", &a.trace)?;
    let trace = WorkloadTrace::from_json(&read_text(&a.trace)?)?;
    let hw = load_hw(&a.hw, "hw", &mut report)?;
    let rtf = simulate(&trace, &hw)?;
    let acceleration = match &a.baseline_hw {
        Some(spec) => Some(compare(&simulate(&trace, &load_hw(spec, "baseline_hw", &mut report)?)?, &rtf)),
        None => None,
    };
    if let Some(path) = &a.csv {
        write(path, format!("{CSV_HEADER}{}", csv_rows(a.beam.map(|b| b as usize), &rtf)))?;
    }
    report.set_outputs(json!({
        "rtf": rtf,
        "acceleration": acceleration,
        "cache_hits": trace.cache_hits,
        "cache_misses": trace.cache_misses,
    }))?;
    Ok(report)
}

fn parse_beams(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidConfig {
        path: "beams".into(),
        detail: format!("`{spec}` is not a range `a..b` or list `a,b,c` of widths in 1..=16"),
    };
    let beams: Vec<usize> = match spec.split_once("..") {
        Some((lo, hi)) => {
            let lo: usize = lo.trim().parse().map_err(|_| bad())?;
            let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            (lo..=hi).collect()
        }
        None => spec
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?,
    };
    if beams.is_empty() || beams.iter().any(|b| !(1..=16).contains(b)) {
        return Err(bad());
    }
    Ok(beams)
}

fn parse_precision(name: &str) -> Result<PrecisionProfile> {
    match name {
        "real16" => Ok(PrecisionProfile::Real16),
        "int8" => Ok(PrecisionProfile::Int8),
        "int4" | "mixed4" => Ok(PrecisionProfile::Mixed4),
        _ => Err(Error::InvalidConfig {
            path: "precision".into(),
            detail: format!("unknown precision `{name}`; expected real16, int8 or mixed4"),
        }),
    }
}

fn sweep(a: &Sweep) -> Result<RunReport> {
    let mut report = RunReport::new("sweep", None);
    let beams = parse_beams(&a.beams)?;
    let arch = load_arch(a.arch.as_deref(), &mut report)?;
    let precision = parse_precision(&a.precision)?;
    let hw = load_hw(&a.hw, "hw", &mut report)?;
    let workload = match &a.workload {
        Some(path) => {
            report.digest_file("workload", path)?;
            WorkloadProfile::from_toml(&read_text(path)?)?
        }
        None => WorkloadProfile::default(),
    };
    let model = ModelProfile::from_arch(&arch, precision, !a.no_lms);
    let reports = sweep_beam(&model, &workload, &hw, &beams)?;
    if let Some(path) = &a.csv {
        let body: String = reports.iter().map(|(b, r)| csv_rows(Some(*b), r)).collect();
        write(path, format!("{CSV_HEADER}{body}"))?;
    }
    let per_beam: Vec<_> = reports.iter().map(|(b, r)| json!({"beam": b, "rtf": r})).collect();
    report.set_outputs(json!({
        "precision": precision.name(),
        "with_lms": !a.no_lms,
        "reports": per_beam,
    }))?;
    Ok(report)
}

const TOY_WORDS: [&str; 12] = [
    "yes", "no", "okay", "right", "well", "i", "think", "so", "that's", "good", "uh-huh", "really",
];

fn gen_data(a: &GenData) -> Result<RunReport> {
    let mut report = RunReport::new("gen-data", Some(a.seed));
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let dim = a.dim as usize;
    let mut utterances = Vec::with_capacity(a.utterances as usize);
    let mut refs = Vec::with_capacity(a.utterances as usize);
    for _ in 0..a.utterances {
        let frames: Vec<Vec<f32>> = (0..a.frames)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        utterances.push(frames);
        let n = rng.random_range(1..=5);
        let words: Vec<&str> = (0..n).map(|_| TOY_WORDS[rng.random_range(0..TOY_WORDS.len())]).collect();
        refs.push(words.join(" "));
    }
    let set = FeatureSet { dim, utterances };
    set.save(&a.out)?;
    report.digest_file("out", &a.out)?;
    if let Some(path) = &a.refs_out {
        write(path, refs.iter().map(|r| format!("{r}\n")).collect::<String>())?;
        report.digest_file("refs_out", path)?;
    }
    report.set_outputs(json!({
        "features": a.out,
        "refs": a.refs_out,
        "utterances": a.utterances,
        "frames": a.frames,
        "dim": dim,
    }))?;
    Ok(report)
}
