use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lobres::dist::Family;
use lobres::fit::{Design, FittedModel};
use lobres::pipeline::fit_family;
use lobres::quantile::{default_grid, quantile_surface, read_grid_csv};
use lobres::synth::{gen_ted_sample, TedGenConfig};
use lobres::ted::{covariate_index, design, read_ted_csv, write_ted_csv};

fn lobres(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lobres")).args(args).env_remove("LOBRES_FAMILY").output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synth5.json")
}

fn ted_fixture(dir: &Path) -> PathBuf {
    let sample = gen_ted_sample(&TedGenConfig { records_per_day: 600, ..TedGenConfig::default() }, 0).unwrap();
    let path = dir.join("ted.csv");
    write_ted_csv(&sample.to_records(28_860_000).unwrap(), fs::File::create(&path).unwrap()).unwrap();
    path
}

const SAMPLE_COVARIATES: &str = "prevTEDavg,spreads,lask,mobuy";

#[test]
fn extract_ted_on_series_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let series = tmp.path().join("series.csv");
    fs::write(&series, "timestamp_ms,value\n0,3\n1000,6\n2000,6\n3000,3\n4000,7\n5000,3\n").unwrap();
    let out = ok(lobres(&["extract-ted", "--series", series.to_str().unwrap(), "--threshold", "5"]));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "T_ms,tau_ms,censored\n1000,2000,0\n4000,1000,0\n");
}

#[test]
fn fit_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let ted = ted_fixture(tmp.path());
    for (family, mode) in [(Family::Lognormal, "single"), (Family::Gamma, "two-link")] {
        let out = ok(lobres(&[
            "fit", "--ted", ted.to_str().unwrap(), "--family", family.name(), "--link-mode", mode,
            "--covariates", SAMPLE_COVARIATES,
        ]));
        let records = read_ted_csv(fs::File::open(&ted).unwrap()).unwrap();
        let cols: Vec<usize> = SAMPLE_COVARIATES.split(',').map(|n| covariate_index(n).unwrap()).collect();
        let (rows, tau) = design(&records, &cols, false);
        let d = Design::new(SAMPLE_COVARIATES.split(',').map(String::from).collect(), &rows).unwrap();
        let lib = fit_family(family, mode.parse().unwrap(), &d, &tau, &Default::default()).unwrap();
        assert_eq!(String::from_utf8(out.stdout).unwrap(), format!("{}\n", lib.to_json().unwrap()));
    }
}

#[test]
fn family_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let ted = ted_fixture(tmp.path());
    let out = Command::new(env!("CARGO_BIN_EXE_lobres"))
        .args(["fit", "--ted", ted.to_str().unwrap(), "--covariates", SAMPLE_COVARIATES])
        .env("LOBRES_FAMILY", "weibull")
        .output()
        .unwrap();
    let m = FittedModel::from_json(&String::from_utf8(ok(out).stdout).unwrap()).unwrap();
    assert_eq!(m.family, Family::Weibull);
}

#[test]
fn surface_from_saved_model_matches_in_process() {
    let tmp = tempfile::tempdir().unwrap();
    let ted = ted_fixture(tmp.path());
    let model = tmp.path().join("m.json");
    let surface = tmp.path().join("s.csv");
    ok(lobres(&[
        "fit", "--ted", ted.to_str().unwrap(), "--family", "gengamma", "--covariates", SAMPLE_COVARIATES,
        "--out", model.to_str().unwrap(),
    ]));
    ok(lobres(&[
        "quantile-surface", "--model", model.to_str().unwrap(), "--first", "prevTEDavg", "--second", "spreads",
        "--points", "6", "--levels", "0.5,0.9", "--out", surface.to_str().unwrap(),
    ]));
    let m = FittedModel::from_json(&fs::read_to_string(&model).unwrap()).unwrap();
    let (g1, g2) = (default_grid(&m, 0, 6).unwrap(), default_grid(&m, 1, 6).unwrap());
    let direct = quantile_surface(&m, (0, &g1), (1, &g2), &[0.5, 0.9], None, false).unwrap();
    let rows = read_grid_csv(fs::File::open(&surface).unwrap()).unwrap();
    assert_eq!(rows.len(), 72);
    for (i, (a, b, u, q)) in rows.iter().enumerate() {
        let (i1, i2, k) = (i / 12, (i / 2) % 6, i % 2);
        assert_eq!((*a, b.unwrap(), *u), (g1[i1], g2[i2], [0.5, 0.9][k]));
        let want = direct.get(i1, i2, k);
        assert!((q - want).abs() <= 1e-12 * want, "{q} vs {want}");
    }
}

#[test]
fn schema_mismatch_names_column() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "T_ms,tau,censored,trigger\n").unwrap();
    let out = lobres(&["fit", "--ted", bad.to_str().unwrap(), "--family", "gamma"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("'tau'") && err.contains("tau_ms"), "{err}");
}

#[test]
fn stages_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    ok(lobres(&["simulate", "--config", config().to_str().unwrap(), "--days", "1", "--out", sim.to_str().unwrap()]));
    let events = sim.join("day_000.csv");
    let index = sim.join("day_000.index.csv");
    let series = tmp.path().join("series.csv");
    ok(lobres(&["replay", "--events", events.to_str().unwrap(), "--out", series.to_str().unwrap()]));
    assert!(fs::read_to_string(&series).unwrap().starts_with("timestamp_ms,value\n"));
    let ted = tmp.path().join("ted.csv");
    ok(lobres(&[
        "extract-ted", "--events", events.to_str().unwrap(), "--index", index.to_str().unwrap(),
        "--out", ted.to_str().unwrap(),
    ]));
    let records = read_ted_csv(fs::File::open(&ted).unwrap()).unwrap();
    assert!(records.len() >= 100);
    let sel = tmp.path().join("sel");
    ok(lobres(&["select", "--ted", ted.to_str().unwrap(), "--covariates", "fixed_subset", "--out", sel.to_str().unwrap()]));
    let heat = fs::read_to_string(sel.join("inclusion.csv")).unwrap();
    assert_eq!(heat.lines().count(), 10);
}

#[test]
fn run_then_report_reproduces_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let rep = tmp.path().join("rep");
    ok(lobres(&[
        "run", "--config", config().to_str().unwrap(), "--family", "lognormal,gamma", "--covariates", "fixed_subset",
        "--out", run.to_str().unwrap(),
    ]));
    ok(lobres(&["report", "--run-dir", run.to_str().unwrap(), "--out", rep.to_str().unwrap()]));
    for f in ["deviance_table.csv", "r2_summary.csv", "deviance_by_day.csv"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(rep.join(f)).unwrap(), "{f}");
    }
}
