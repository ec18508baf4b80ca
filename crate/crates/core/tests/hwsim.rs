use qrnnt::hwsim::*;
use qrnnt::model::ArchConfig;
use qrnnt::Error;

fn matmul(macs: u64, bytes: u64) -> OpRecord {
    OpRecord {
        kind: OpKind::Matmul,
        precision: Precision::Int8,
        macs,
        bytes,
        items: 0,
        device: Device::Coprocessor,
        component: Component::Encoder,
    }
}

fn hw() -> HwConfig {
    HwConfig::bw32()
}

#[test]
fn empty_trace_has_zero_rtf() {
    let r = simulate(&WorkloadTrace::default(), &hw()).unwrap();
    assert_eq!((r.total_s, r.rtf), (0.0, 0.0));
}

#[test]
fn single_op_takes_the_max_branch() {
    let h = hw();
    let compute = matmul(4_000_000_000, 10);
    let mut t = WorkloadTrace::new(1);
    t.push(compute);
    let r = simulate(&t, &h).unwrap();
    let expect = 4e9 / h.peak_macs_per_s.int8 + h.kernel_launch_overhead;
    assert!((r.total_s - expect).abs() < 1e-15);

    let mut t = WorkloadTrace::new(1);
    t.push(matmul(10, 8_000_000));
    let r = simulate(&t, &h).unwrap();
    let expect = 8e6 / h.link_bandwidth + h.kernel_launch_overhead;
    assert!((r.total_s - expect).abs() < 1e-15);
    assert!((r.rtf - expect / h.frame_duration).abs() < 1e-15);
}

#[test]
fn cpu_ops_use_item_latency() {
    let h = hw();
    let mut t = WorkloadTrace::new(2);
    t.push(OpRecord {
        kind: OpKind::Sort,
        precision: Precision::Real16,
        macs: 0,
        bytes: 0,
        items: 100,
        device: Device::Cpu,
        component: Component::NonAccelerable,
    });
    let r = simulate(&t, &h).unwrap();
    assert!((r.breakdown.non_accelerable - 100.0 * h.cpu_op_latency.sort).abs() < 1e-18);
    let mut bad = t.clone();
    bad.ops[0].device = Device::Coprocessor;
    assert!(matches!(simulate(&bad, &h), Err(Error::Simulation(_))));
}

#[test]
fn self_comparison_is_unity() {
    let a = ArchConfig::default();
    let t = arch_trace(&a, PrecisionProfile::Mixed4, true, &WorkloadProfile::default(), 16).unwrap();
    let r = simulate(&t, &hw()).unwrap();
    let c = compare(&r, &r);
    for v in [c.encoder, c.decoder, c.total, c.prediction, c.lm_ext, c.lm_src, c.non_accelerable] {
        assert_eq!(v, 1.0);
    }
}

#[test]
fn breakdown_sums_and_bandwidth_monotone() {
    let a = ArchConfig::default();
    let w = WorkloadProfile::default();
    for p in [PrecisionProfile::Real16, PrecisionProfile::Int8, PrecisionProfile::Mixed4] {
        for beam in [1, 4, 16] {
            let t = arch_trace(&a, p, true, &w, beam).unwrap();
            let r32 = simulate(&t, &HwConfig::bw32()).unwrap();
            let r64 = simulate(&t, &HwConfig::bw64()).unwrap();
            assert_eq!(r32.breakdown.sum(), r32.total_s);
            assert!(r64.rtf < r32.rtf, "{p:?} beam {beam}");
        }
    }
}

#[test]
fn smaller_beams_never_cost_more() {
    let profile = ModelProfile::from_arch(&ArchConfig::default(), PrecisionProfile::Mixed4, true);
    let beams: Vec<usize> = (1..=16).collect();
    let reports = sweep_beam(&profile, &WorkloadProfile::default(), &HwConfig::bw64(), &beams).unwrap();
    let top = reports.last().unwrap().1.rtf;
    for (b, r) in &reports {
        assert!(r.rtf <= top, "beam {b}");
    }
    assert_eq!(reports[0].1.breakdown.non_accelerable, 0.0);
}

#[test]
fn presets_and_committed_configs() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in PRESETS {
        let text = std::fs::read_to_string(root.join(format!("hw_{name}.toml"))).unwrap();
        assert_eq!(HwConfig::from_toml(&text).unwrap(), HwConfig::preset(name).unwrap());
    }
    let w = std::fs::read_to_string(root.join("workload_default.toml")).unwrap();
    assert_eq!(WorkloadProfile::from_toml(&w).unwrap(), WorkloadProfile::default());
    match HwConfig::preset("bw128") {
        Err(e) => assert!(e.to_string().contains("bw32, bw64"), "{e}"),
        Ok(_) => panic!("unknown preset accepted"),
    }
}

#[test]
fn invalid_configs_rejected() {
    let mut h = hw();
    h.peak_macs_per_s.int4 = 1.0;
    assert!(h.validate().is_err());
    let mut h = hw();
    h.link_bandwidth = 0.0;
    assert!(h.validate().is_err());
}

#[test]
fn trace_json_roundtrip() {
    let t = arch_trace(&ArchConfig::toy(), PrecisionProfile::Int8, true, &WorkloadProfile::default(), 4).unwrap();
    assert_eq!(WorkloadTrace::from_json(&t.to_json()).unwrap(), t);
}
