use std::process::Command;

use slo_autoscale::agent::Phase;
use slo_autoscale::domain::{validate_assignment, CORES, DATA_QUALITY};
use slo_autoscale::harness::{
    report, run_experiment, ExperimentConfig, Trace, METRICS_FILE, TRACE_FILE,
};
use slo_autoscale::store::MetricStore;

fn short(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        cycles_explore: 10,
        cycles_exploit: 5,
        ..ExperimentConfig::default()
    }
}

#[test]
fn default_run_follows_the_protocol() {
    let cfg = ExperimentConfig::default();
    let x = run_experiment(&cfg).unwrap();
    assert_eq!(x.trace.len(), 60);
    for (i, e) in x.trace.entries.iter().enumerate() {
        assert_eq!(e.cycle, i as u64);
        assert_eq!(
            e.phase,
            if i < 30 {
                Phase::Explore
            } else {
                Phase::Exploit
            }
        );
        assert_eq!(e.diagnostics.phase, e.phase);
        assert_eq!(
            validate_assignment(&e.assignment, &cfg.services, cfg.budget),
            Ok(())
        );
        assert_eq!(e.records.len(), 3);
    }
    assert_eq!(x.store.len(), 180);
}

#[test]
fn recorded_fulfillment_matches_recorded_metrics() {
    let cfg = ExperimentConfig::default();
    let x = run_experiment(&cfg).unwrap();
    for e in &x.trace.entries {
        let mut sum = 0.0;
        for spec in &cfg.services {
            let r = e.records.iter().find(|r| r.service == spec.id).unwrap();
            let (num, den) = spec.slos.iter().fold((0.0, 0.0), |(n, d), slo| {
                let f = (r.metrics[&slo.variable] / slo.threshold).clamp(0.0, 1.0);
                (n + slo.weight * f, d + slo.weight)
            });
            let f = num / den;
            assert!((e.service_fulfillment[&spec.id] - f).abs() < 1e-9);
            sum += f;
        }
        assert!((e.global_fulfillment - sum / 3.0).abs() < 1e-9);
    }
}

#[test]
fn records_carry_the_applied_configuration() {
    let x = run_experiment(&short(3)).unwrap();
    for e in &x.trace.entries {
        for r in &e.records {
            for k in [CORES, DATA_QUALITY] {
                assert_eq!(Some(r.metrics[k]), e.assignment.get(&r.service, k));
            }
        }
    }
}

#[test]
fn no_exploration_falls_back_to_random() {
    let cfg = ExperimentConfig {
        cycles_explore: 0,
        cycles_exploit: 8,
        ..ExperimentConfig::default()
    };
    let x = run_experiment(&cfg).unwrap();
    assert_eq!(x.trace.len(), 8);
    let first = &x.trace.entries[0];
    assert_eq!(first.phase, Phase::Exploit);
    assert!(first.diagnostics.fallback.is_some());
    assert!(first.diagnostics.fits.is_empty());
    // six samples fit the 2-input services; the 3-input service needs ten
    let last = &x.trace.entries[7];
    assert!(last.diagnostics.fallback.is_some());
}

#[test]
fn same_seed_same_bytes() {
    assert_eq!(
        run_experiment(&short(9)).unwrap().trace.to_jsonl(),
        run_experiment(&short(9)).unwrap().trace.to_jsonl()
    );
    assert_ne!(
        run_experiment(&short(9)).unwrap().trace.to_jsonl(),
        run_experiment(&short(10)).unwrap().trace.to_jsonl()
    );
}

#[test]
fn outputs_are_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        output: Some(dir.path().join("nested")),
        ..short(1)
    };
    let x = run_experiment(&cfg).unwrap();
    let t = Trace::load(dir.path().join("nested").join(TRACE_FILE)).unwrap();
    let s = MetricStore::load(dir.path().join("nested").join(METRICS_FILE)).unwrap();
    assert_eq!(t, x.trace);
    assert_eq!(s.records(), x.store.records());
}

#[test]
fn report_csv_has_one_row_per_cycle() {
    let x = run_experiment(&short(2)).unwrap();
    let r = report(&x.trace, Some(1.0)).unwrap();
    assert_eq!(r.csv.lines().count(), x.trace.len() + 1);
    let header = r.csv.lines().next().unwrap();
    assert!(
        header.starts_with("cycle,phase,global,cv_fulfillment,cv_cores,cv_quality,cv_model,cv_r2")
    );
    assert!(r.summary.exploit_mean.is_some());

    let explore_only = Trace {
        entries: x.trace.entries[..10].to_vec(),
    };
    let r = report(&explore_only, None).unwrap();
    assert!(r.summary.exploit_mean.is_none());
    assert!(!r.summary.to_string().contains("exploitation"));
}

#[test]
fn cli_run_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"cycles_explore": 6, "cycles_exploit": 4}"#).unwrap();
    let bin = env!("CARGO_BIN_EXE_slo-autoscale");
    let out = dir.path().join("out");

    let run = Command::new(bin)
        .args(["--seed", "5", "--config"])
        .arg(&config)
        .args(["run", "--no-oracle", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(run.status.success());
    for f in ["trace.jsonl", "metrics.jsonl", "report.csv", "summary.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);

    let replay = Command::new(bin)
        .args(["replay", "--no-oracle"])
        .arg(out.join("trace.jsonl"))
        .output()
        .unwrap();
    assert!(replay.status.success());
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert_eq!(String::from_utf8(replay.stdout).unwrap(), summary);

    std::fs::write(&config, r#"{"budget": -1}"#).unwrap();
    let bad = Command::new(bin)
        .arg("--config")
        .arg(&config)
        .arg("oracle")
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
