mod common;

use common::oracles::oracle_front;
use rand::Rng;
use tinyissimo::model::{build_graph, NetworkConfig};
use tinyissimo::perf::{
    check_claims, compare, default_frequencies, dvfs_sweep, pareto, read_points_csv, write_points_csv, Backend,
    Dataset, OperatingPoint, ParetoPoint, PerfModel,
};

fn graph(name: &str) -> tinyissimo::model::ModelGraph {
    build_graph(&NetworkConfig::preset(name).unwrap()).unwrap()
}

#[test]
fn pareto_matches_quadratic_oracle() {
    let mut rng = common::rng(42);
    for case in 0..1000 {
        let n = rng.gen_range(0..=80);
        let coarse = rng.gen_bool(0.5);
        let points: Vec<ParetoPoint> = (0..n)
            .map(|i| {
                let v = |rng: &mut rand_chacha::ChaCha8Rng| {
                    if coarse {
                        rng.gen_range(0..8) as f64
                    } else {
                        rng.gen_range(0.0..1000.0)
                    }
                };
                ParetoPoint { label: format!("p{i}"), latency_ms: v(&mut rng), energy_uj: v(&mut rng) }
            })
            .collect();
        let front = pareto(&points).unwrap();
        assert_eq!(front, oracle_front(&points), "case {case}");
        assert_eq!(pareto(&front).unwrap(), front, "idempotence, case {case}");
    }
}

#[test]
fn pareto_rejects_nan_and_csv_round_trips() {
    let bad = vec![ParetoPoint { label: "x".into(), latency_ms: f64::NAN, energy_uj: 1.0 }];
    assert!(pareto(&bad).is_err());
    let pts = vec![
        ParetoPoint { label: "a, quoted".into(), latency_ms: 1.25, energy_uj: 3.0 },
        ParetoPoint { label: "b".into(), latency_ms: 0.1 + 0.2, energy_uj: 1e-9 },
    ];
    assert_eq!(read_points_csv(&write_points_csv(&pts)).unwrap(), pts);
    assert!(read_points_csv("label,latency_ms\nx,1\n").is_err());
}

#[test]
fn calibration_reproduces_its_own_measurements() {
    let ds = Dataset::embedded();
    let model = PerfModel::calibrate(&ds, "TY:3-3-88").unwrap();
    let g = graph("TY:3-3-88");
    let at370 = OperatingPoint::at(370e6).unwrap();
    let single = model.predict(&g, Backend::SingleCore, at370).unwrap();
    assert!((single.latency_ms() - 69.77).abs() < 0.01);
    let multi = model.predict(&g, Backend::MultiCore, at370).unwrap();
    assert!((single.cycles / multi.cycles - 6.14).abs() < 1e-3);
    let ne = model.predict(&g, Backend::Accelerator, at370).unwrap();
    assert!((ne.mac_per_cycle - 41.22).abs() < 0.01);
    for (backend, mhz, mw) in [(Backend::Accelerator, 370.0, 70.3), (Backend::Accelerator, 150.0, 20.04)] {
        let op = OperatingPoint::at(mhz * 1e6).unwrap();
        let p = model.power_model(backend).unwrap().power(&op) * 1e3;
        assert!((p - mw).abs() / mw < 1e-6, "{backend:?} {mhz}: {p}");
    }
}

#[test]
fn sweep_trades_latency_for_energy() {
    let model = PerfModel::default_calibrated().unwrap();
    let g = graph("TY:3-3-88");
    for backend in Backend::ALL {
        let reports = dvfs_sweep(&model, &g, backend, &default_frequencies()).unwrap();
        for w in reports.windows(2) {
            assert!(w[1].latency_s < w[0].latency_s);
            assert!(w[1].power_w > w[0].power_w);
        }
        let cycles = reports[0].cycles;
        assert!(reports.iter().all(|r| r.cycles == cycles));
    }
    assert!(OperatingPoint::at(400e6).is_err());
    assert!(OperatingPoint::new(370e6, 0.6).is_err());
}

#[test]
fn backends_rank_as_expected() {
    let model = PerfModel::default_calibrated().unwrap();
    let op = OperatingPoint::at(370e6).unwrap();
    for name in ["TY:3-3-88", "TY:10-3-112", "TY:20-7-224"] {
        let g = graph(name);
        let s = model.predict(&g, Backend::SingleCore, op).unwrap();
        let m = model.predict(&g, Backend::MultiCore, op).unwrap();
        let a = model.predict(&g, Backend::Accelerator, op).unwrap();
        assert!(s.latency_s > m.latency_s && m.latency_s > a.latency_s, "{name}");
        assert!(s.mac_per_cycle <= model.peak_mac_per_cycle(Backend::SingleCore) + 1e-9);
        assert!(a.mac_per_cycle <= model.peak_mac_per_cycle(Backend::Accelerator) + 1e-9);
        let layer_sum: f64 = m.layers.iter().map(|l| l.cycles).sum();
        assert!((layer_sum - m.cycles).abs() < 1e-6 * m.cycles);
    }
}

#[test]
fn compare_reports_deviation_and_unknown_keys() {
    let ds = Dataset::embedded();
    let model = PerfModel::default_calibrated().unwrap();
    let r = model.predict(&graph("TY:3-3-88"), Backend::Accelerator, OperatingPoint::at(370e6).unwrap()).unwrap();
    let rows = compare(&[r.to_record()], &ds.records, 0.2).unwrap();
    let lat = rows.iter().find(|d| d.metric == "latency_ms").unwrap();
    assert!((lat.reference - 2.12).abs() < 1e-12);
    assert!((lat.rel_error - (lat.predicted - 2.12) / 2.12).abs() < 1e-12);
    let odd = model.predict(&graph("TY:20-3-88"), Backend::Accelerator, OperatingPoint::at(370e6).unwrap()).unwrap();
    assert!(compare(&[odd.to_record()], &ds.records, 0.2).is_err());
}

#[test]
fn stated_ratios_recompute_from_records() {
    let ds = Dataset::embedded();
    let checks = check_claims(&ds, 0.05).unwrap();
    let by = |n: &str| checks.iter().find(|c| c.name == n).unwrap();
    assert!((by("ne_vs_max78000_latency").computed - 5.5 / 2.12).abs() < 1e-12);
    assert!((by("ne_vs_max78000_energy").computed - 196.0 / 149.0).abs() < 1e-12);
    assert!((by("ne_vs_multi_speedup_88").computed - 11.3 / 2.12).abs() < 1e-12);
}
