//! End-to-end checks of the `hgmm` binary: exit codes, determinism and
//! degenerate metric cases.

use std::path::Path;
use std::process::{Command, Output};

use hgmm::gaussian::{Gaussian, HybridMixture};
use hgmm::io::{load_frames, read_metric_csv, save_frames};
use hgmm::models::{ManhattanGrid, Scenario};

fn hgmm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgmm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run hgmm")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn cache(dir: &Path) {
    let o = hgmm(dir, &["optimize-split", "--n", "5", "--sigma", "0.3", "--out", "cache.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn optimize_split_writes_cartesian_product_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["optimize-split", "--n", "3,5", "--sigma", "0.3,0.5", "--grid-step", "0.01", "--out", "a.json"];
    assert_eq!(code(&hgmm(dir.path(), &args)), 0);
    let mut again = args;
    again[8] = "b.json";
    assert_eq!(code(&hgmm(dir.path(), &again)), 0);
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    let lib = hgmm::splitting::SplitLibrary::from_json(std::str::from_utf8(&a).unwrap()).unwrap();
    assert_eq!(lib.entries.len(), 4);
    assert!(dir.path().join("a.json.manifest.json").exists());
}

#[test]
fn even_split_count_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = hgmm(dir.path(), &["optimize-split", "--n", "4", "--sigma", "0.3", "--out", "c.json"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("N must be odd"));
}

#[test]
fn benchmark_flags_and_cache_keys() {
    let dir = tempfile::tempdir().unwrap();
    let o = hgmm(dir.path(), &["benchmark", "--model", "ungm", "--samples", "0", "--no-split"]);
    assert_eq!(code(&o), 2);
    cache(dir.path());
    let o = hgmm(
        dir.path(),
        &["benchmark", "--model", "ungm", "--samples", "5", "--split", "7:0.3", "--cache", "cache.json"],
    );
    assert_eq!(code(&o), 4);
    let o = hgmm(dir.path(), &["benchmark", "--model", "ungm", "--samples", "100", "--seed", "7", "--no-split"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    let mean: f64 = text
        .lines()
        .find(|l| l.starts_with("no-split"))
        .and_then(|l| l.split_whitespace().nth(3))
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.45..=0.75).contains(&mean), "{text}");
}

#[test]
fn run_is_byte_identical_in_sequential_mode() {
    let dir = tempfile::tempdir().unwrap();
    cache(dir.path());
    let base = ["--sequential", "run", "--scenario", "intersection", "--cache", "cache.json", "--out"];
    for out in ["a.jsonl", "b.jsonl"] {
        let mut args = base.to_vec();
        args.push(out);
        let o = hgmm(dir.path(), &args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    let frames = load_frames(&dir.path().join("a.jsonl")).unwrap();
    assert_eq!(frames.frames.len(), 35);
    let manifest = hgmm::io::RunManifest::load(&dir.path().join("a.jsonl.manifest.json")).unwrap();
    assert!(manifest.changed_inputs().unwrap().is_empty());
}

#[test]
fn straight_run_has_35_frames_and_inf_disables_splitting() {
    let dir = tempfile::tempdir().unwrap();
    let o = hgmm(
        dir.path(),
        &["run", "--scenario", "intersection", "--e-res-max", "inf", "--horizon", "3.5", "--dt", "0.1", "--out", "f.jsonl"],
    );
    assert_eq!(code(&o), 0);
    for f in load_frames(&dir.path().join("f.jsonl")).unwrap().frames {
        assert_eq!(f.len(), f.hypotheses().len());
    }
    let o = hgmm(dir.path(), &["run", "--scenario", "straight", "--out", "s.jsonl"]);
    assert_eq!(code(&o), 0);
    assert_eq!(load_frames(&dir.path().join("s.jsonl")).unwrap().frames.len(), 35);
}

#[test]
fn off_network_scenario_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Scenario::straight();
    s.initial[0].alpha = "nowhere".into();
    std::fs::write(dir.path().join("bad.json"), s.to_json()).unwrap();
    let o = hgmm(dir.path(), &["run", "--scenario", "bad.json", "--out", "f.jsonl"]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn nll_on_matching_particles_is_finite_and_unfloored() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--horizon", "1.0", "--scenario", "turn"];
    let mut run = vec!["run", "--out", "f.jsonl"];
    run.extend(args);
    assert_eq!(code(&hgmm(dir.path(), &run)), 0);
    let mut parts = vec!["particles", "--count", "2000", "--out", "p.jsonl"];
    parts.extend(args);
    assert_eq!(code(&hgmm(dir.path(), &parts)), 0);
    let o = hgmm(dir.path(), &["evaluate", "nll", "--frames", "f.jsonl", "--particles", "p.jsonl", "--out", "n.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains(", 0 floored"));
    let rows = read_metric_csv(&std::fs::read_to_string(dir.path().join("n.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.value.is_finite()));

    let mut short = vec!["run", "--out", "g.jsonl", "--horizon", "0.5", "--scenario", "turn"];
    short.truncate(8);
    assert_eq!(code(&hgmm(dir.path(), &short)), 0);
    let o = hgmm(dir.path(), &["evaluate", "nll", "--frames", "g.jsonl", "--particles", "p.jsonl", "--out", "n.csv"]);
    assert_eq!(code(&o), 6);
}

fn point_mass_frames(dir: &Path) {
    let net = ManhattanGrid::default().build().unwrap();
    net.save(&dir.join("net.json")).unwrap();
    let road = ManhattanGrid::road_id(0, 0, 'E');
    let line = &net.segment(&road).unwrap().centerline;
    let frames: Vec<HybridMixture> = (1..=5)
        .map(|k| {
            let p = line.point_at(2.0 * k as f64);
            let mut f = HybridMixture::single(
                road.as_str(),
                Gaussian::new_unchecked(nalgebra::DVector::from_vec(vec![p[0], p[1], 10.0, 0.0]), nalgebra::DMatrix::zeros(4, 4)),
            );
            f.time_index = k;
            f
        })
        .collect();
    save_frames(&dir.join("f.jsonl"), &frames, 0.1).unwrap();
}

#[test]
fn eote_of_centerline_point_masses_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    point_mass_frames(dir.path());
    let o = hgmm(dir.path(), &["evaluate", "eote", "--frames", "f.jsonl", "--network", "net.json", "--out", "e.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_metric_csv(&std::fs::read_to_string(dir.path().join("e.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.value == 0.0), "{rows:?}");
}

#[test]
fn collision_with_disjoint_geometry_is_zero_and_timestamps_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    point_mass_frames(dir.path());
    let ego: String = std::iter::once("t,x,y,theta".to_string())
        .chain((1..=5).map(|k| format!("{},-500,-500,0", k as f64 * 0.1)))
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(dir.path().join("ego.csv"), ego).unwrap();
    let o = hgmm(dir.path(), &["evaluate", "collision", "--frames", "f.jsonl", "--ego", "ego.csv", "--out", "c.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_metric_csv(&std::fs::read_to_string(dir.path().join("c.csv")).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.value == 0.0));

    std::fs::write(dir.path().join("late.csv"), "t,x,y,theta\n0.1,0,0,0\n0.5,0,0,0\n0.6,0,0,0\n0.7,0,0,0\n0.8,0,0,0\n").unwrap();
    let o = hgmm(dir.path(), &["evaluate", "collision", "--frames", "f.jsonl", "--ego", "late.csv", "--out", "c.csv"]);
    assert_eq!(code(&o), 6);
    std::fs::write(dir.path().join("obs.csv"), "t,x,y\n9.0,0,0\n").unwrap();
    let o = hgmm(dir.path(), &["evaluate", "ll", "--frames", "f.jsonl", "--observations", "obs.csv", "--out", "l.csv"]);
    assert_eq!(code(&o), 6);
}
