use proptest::prelude::*;
use risjrc_core::config::{Profile, ScenarioConfig};
use risjrc_core::par::Mode;
use risjrc_core::runner::{
    emit_summary, format_float, load, persist, read_csv, run_fig2, sort_rows, write_csv, ResultRow, CSV_COLUMNS,
};

fn row(tag: &str, sweep_val: f64, value: f64, seed: u64) -> ResultRow {
    ResultRow {
        experiment: "fig4".into(),
        sweep_var: "rcs_db".into(),
        sweep_val,
        tag: tag.into(),
        metric_name: "worst_peb".into(),
        metric_value: value,
        unit: "m".into(),
        seed,
        iters: 3,
        wall_ms: 0,
    }
}

fn tiny() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::for_profile(Profile::Desk);
    cfg.run.seeds = 2;
    cfg.run.n_mc = 10;
    cfg.sweeps.pilot_dbm = vec![0.0, 30.0];
    cfg.sweeps.n_rf = vec![10, 20];
    cfg
}

#[test]
fn header_and_infinity() {
    let rows = vec![row("random", -20.0, f64::INFINITY, 1), row("random", 0.0, 0.125, 1)];
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(lines.next().unwrap(), "fig4,rcs_db,-20,random,worst_peb,inf,m,1,3,0");
    assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
}

#[test]
fn empty_output_still_has_header() {
    let mut buf = Vec::new();
    write_csv(&[], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().trim_end(), CSV_COLUMNS.join(","));
}

#[test]
fn wrong_header_is_rejected() {
    assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let rows = vec![row("optimized", -40.0, 3.5e3, 2), row("noris-4", -40.0, f64::INFINITY, 2)];
    persist(&rows, &path).unwrap();
    assert_eq!(load(&path).unwrap(), rows);
}

#[test]
fn sorting_orders_by_tag_then_sweep_then_seed() {
    let mut rows = vec![row("random", 0.0, 1.0, 2), row("optimized", 0.0, 1.0, 1), row("random", -20.0, 1.0, 3), row("random", 0.0, 1.0, 1)];
    sort_rows(&mut rows);
    let keys: Vec<(&str, f64, u64)> = rows.iter().map(|r| (r.tag.as_str(), r.sweep_val, r.seed)).collect();
    assert_eq!(keys, [("optimized", 0.0, 1), ("random", -20.0, 3), ("random", 0.0, 1), ("random", 0.0, 2)]);
}

#[test]
fn fig2_rows_are_reproducible_and_complete() {
    let cfg = tiny();
    let a = run_fig2(&cfg, Mode::Parallel).unwrap();
    let b = run_fig2(&cfg, Mode::Sequential).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
    assert!(a.iter().all(|r| r.wall_ms == 0 && r.iters == 20 && r.metric_value > 0.0));
    let summary = emit_summary(&a);
    assert!(summary.contains("nrf10") && summary.contains("nrf20"));

    let mut per_seed = cfg.clone();
    per_seed.run.averaged = false;
    let rows = run_fig2(&per_seed, Mode::Parallel).unwrap();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows.iter().filter(|r| r.seed == 2).count(), 4);
}

#[test]
fn timing_fills_wall_clock() {
    let mut cfg = tiny();
    cfg.run.seeds = 1;
    cfg.sweeps.n_rf = vec![20];
    cfg.run.timing = true;
    let rows = run_fig2(&cfg, Mode::Parallel).unwrap();
    assert!(rows.iter().all(|r| r.wall_ms > 0));
}

proptest! {
    #[test]
    fn floats_survive_the_text_form(v in prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), Just(f64::INFINITY)]) {
        let back: f64 = format_float(v).parse().unwrap();
        prop_assert_eq!(back, if v == 0.0 { 0.0 } else { v });
    }

    #[test]
    fn rows_survive_csv(values in proptest::collection::vec(-1e12f64..1e12, 1..20), seed in 0u64..1000) {
        let rows: Vec<ResultRow> = values.iter().enumerate().map(|(i, &v)| row("t", i as f64, v, seed)).collect();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }
}
