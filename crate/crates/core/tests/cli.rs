use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pnp_dse::cli::run;
use pnp_dse::linalg::Mat;
use pnp_dse::model::{PlantGraph, Subsystem, SubsystemId};
use pnp_dse::plant_file::{write_graph, PlugInFile};
use pnp_dse::pnp::PlugIn;
use pnp_dse::zonotope::Zonotope;
use serde_json::Value;

fn scalar(id: u32, a: f64, parents: &[(u32, f64)], e: f64, d: f64) -> Subsystem {
    Subsystem {
        id: SubsystemId(id),
        a: Mat::from_element(1, 1, a),
        b: Mat::from_element(1, 1, 1.0),
        c: Mat::from_element(1, 1, 1.0),
        d: Mat::from_element(1, 1, d),
        couplings: parents
            .iter()
            .map(|(j, v)| (SubsystemId(*j), Mat::from_element(1, 1, *v)))
            .collect(),
        error_set: Zonotope::from_box(&[e]).unwrap(),
        dist_set: Zonotope::from_box(&[0.05]).unwrap(),
    }
}

fn write_plant(dir: &Path, name: &str, subs: Vec<Subsystem>) -> PathBuf {
    let path = dir.join(name);
    write_graph(&PlantGraph::new(subs).unwrap(), &path).unwrap();
    path
}

fn chain_plant(dir: &Path) -> PathBuf {
    write_plant(
        dir,
        "chain.json",
        vec![
            scalar(1, 0.9, &[], 1.0, 1.0),
            scalar(2, 0.7, &[(1, 0.2)], 1.0, 1.0),
            scalar(3, 0.6, &[(2, 0.1)], 1.0, 1.0),
        ],
    )
}

fn cli(args: &[&dyn AsRef<std::ffi::OsStr>]) -> i32 {
    let mut full = vec![std::ffi::OsString::from("pnp-dse")];
    full.extend(args.iter().map(|a| a.as_ref().to_os_string()));
    run(full)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synthesize(plant: &Path, out: &Path) -> i32 {
    cli(&[&"synthesize", &plant, &"--out-dir", &out])
}

#[test]
fn decoupled_noiseless_plant_has_zero_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let plant = write_plant(
        dir.path(),
        "toy.json",
        vec![scalar(1, 0.9, &[], 1.0, 0.0), scalar(2, 0.5, &[], 1.0, 0.0)],
    );
    let out = dir.path().join("out");
    assert_eq!(synthesize(&plant, &out), 0);
    let report = json(&out.join("report.json"));
    for id in ["1", "2"] {
        assert_eq!(report[id]["status"], "certified");
        assert_eq!(report[id]["beta"], 0.0);
        assert_eq!(report[id]["gamma"], 0.0);
    }
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "synthesize");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn necessary_condition_violation_fails_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let plant = write_plant(
        dir.path(),
        "tight.json",
        vec![scalar(1, 0.5, &[], 1.0, 1.0), scalar(2, 0.5, &[(1, 0.5)], 0.1, 1.0)],
    );
    let out = dir.path().join("out");
    assert_eq!(cli(&[&"synthesize", &plant, &"--delta-default", &"0", &"--out-dir", &out]), 3);
    let report = json(&out.join("report.json"));
    assert_eq!(report["2"]["status"], "failed");
    assert_eq!(report["2"]["stage"], "necessary_condition");
    assert!(!out.join("gains.json").exists());
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let plant = chain_plant(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(synthesize(&plant, &a), 0);
    assert_eq!(synthesize(&plant, &b), 0);
    for name in ["gains.json", "report.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
    }
    let manifest = |d: &Path| {
        let mut m = json(&d.join("manifest.json"));
        m.as_object_mut().unwrap().remove("timestamp");
        m
    };
    let first = manifest(&a);
    assert_eq!(synthesize(&plant, &a), 0);
    assert_eq!(manifest(&a), first);

    let gains = a.join("gains.json");
    let (s1, s2) = (dir.path().join("s1"), dir.path().join("s2"));
    for out in [&s1, &s2] {
        let code = cli(&[&"simulate", &plant, &gains, &"--seed", &"3", &"--check-rpi", &"--out-dir", out]);
        assert_eq!(code, 0);
    }
    let trace = std::fs::read_to_string(s1.join("trace.csv")).unwrap();
    assert_eq!(trace, std::fs::read_to_string(s2.join("trace.csv")).unwrap());
    assert_eq!(trace.lines().count(), 1 + 101 * 3);
    assert!(trace.lines().skip(1).all(|l| l.ends_with(",true,true")));
}

#[test]
fn certify_accepts_synthesized_gains() {
    let dir = tempfile::tempdir().unwrap();
    let plant = chain_plant(dir.path());
    let syn = dir.path().join("syn");
    assert_eq!(synthesize(&plant, &syn), 0);
    let out = dir.path().join("cert");
    assert_eq!(cli(&[&"certify", &plant, &syn.join("gains.json"), &"--out-dir", &out]), 0);
    let report = json(&out.join("report.json"));
    assert!(report["collective_spectral_radius"].as_f64().unwrap() < 1.0);
    assert_eq!(report["subsystems"]["2"]["invariance_violations"], 0);
}

#[test]
fn simulate_rejects_zero_horizon_and_stale_gains() {
    let dir = tempfile::tempdir().unwrap();
    let plant = chain_plant(dir.path());
    let syn = dir.path().join("syn");
    assert_eq!(synthesize(&plant, &syn), 0);
    let gains = syn.join("gains.json");
    let out = dir.path().join("sim");
    assert_eq!(cli(&[&"simulate", &plant, &gains, &"--horizon", &"0", &"--out-dir", &out]), 2);

    let other = write_plant(
        dir.path(),
        "other.json",
        vec![
            scalar(1, 0.8, &[], 1.0, 1.0),
            scalar(2, 0.7, &[(1, 0.2)], 1.0, 1.0),
            scalar(3, 0.6, &[(2, 0.1)], 1.0, 1.0),
        ],
    );
    assert_eq!(cli(&[&"simulate", &other, &gains, &"--out-dir", &out]), 2);
    assert!(!out.join("trace.csv").exists());
}

#[test]
fn unplug_leaf_redesigns_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let plant = chain_plant(dir.path());
    let syn = dir.path().join("syn");
    assert_eq!(synthesize(&plant, &syn), 0);
    let out = dir.path().join("unplug");
    assert_eq!(cli(&[&"unplug", &plant, &syn.join("gains.json"), &"3", &"--out-dir", &out]), 0);
    let tx = json(&out.join("transaction.json"));
    assert_eq!(tx["redesigned"], serde_json::json!([]));
    assert_eq!(tx["outcome"]["status"], "accepted");
    let smaller = json(&out.join("plant.json"));
    assert_eq!(smaller["subsystems"].as_array().unwrap().len(), 2);
}

#[test]
fn plug_in_reports_redesigns_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let plant = chain_plant(dir.path());
    let syn = dir.path().join("syn");
    assert_eq!(synthesize(&plant, &syn), 0);
    let gains = syn.join("gains.json");

    let file = |name: &str, child: f64| {
        let path = dir.path().join(name);
        PlugInFile::from_plug_in(&PlugIn {
            subsystem: scalar(4, 0.5, &[(3, 0.1)], 1.0, 1.0),
            child_couplings: BTreeMap::from([(SubsystemId(1), Mat::from_element(1, 1, child))]),
        })
        .write(&path)
        .unwrap();
        path
    };

    let good = file("good.json", 0.05);
    let out = dir.path().join("good");
    assert_eq!(cli(&[&"plug-in", &plant, &gains, &good, &"--out-dir", &out]), 0);
    let tx = json(&out.join("transaction.json"));
    assert_eq!(tx["redesigned"], serde_json::json!([1, 4]));
    assert!(out.join("gains.json").exists());

    let bad = file("bad.json", 5.0);
    let out = dir.path().join("bad");
    let before = std::fs::read(&gains).unwrap();
    assert_eq!(cli(&[&"plug-in", &plant, &gains, &bad, &"--delta-default", &"0", &"--out-dir", &out]), 5);
    let tx = json(&out.join("transaction.json"));
    assert_eq!(tx["outcome"]["status"], "rejected");
    assert_eq!(tx["outcome"]["failing"], 1);
    assert!(!out.join("plant.json").exists());
    assert_eq!(std::fs::read(&gains).unwrap(), before);
}

#[test]
fn outputs_never_overwrite_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let plant = chain_plant(dir.path());
    let syn = dir.path().join("syn");
    assert_eq!(synthesize(&plant, &syn), 0);
    let gains = syn.join("gains.json");
    assert_eq!(cli(&[&"unplug", &plant, &gains, &"3", &"--out-dir", &syn]), 2);
    assert!(json(&gains)["subsystems"]["3"].is_object());
}

#[test]
fn bench_generate_writes_plant_and_extension() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&[&"bench", &"generate", &"--seed", &"1", &"--extension", &"--out-dir", &dir.path()]), 0);
    let graph = pnp_dse::plant_file::read_graph(&dir.path().join("plant.json")).unwrap();
    assert_eq!(graph.len(), 4);
    assert!(graph.subsystems().all(|s| s.order() == 16));
    let ext = PlugInFile::read(&dir.path().join("extension.json")).unwrap();
    assert_eq!(ext.subsystem.id, SubsystemId(5));
    assert_eq!(ext.child_couplings.keys().copied().collect::<Vec<_>>(), vec![SubsystemId(2)]);
}
