use std::fs;
use std::path::Path;

use falconwing::cli::{run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};
use falconwing::dynamics::DynParams;

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("falconwing").chain(args.iter().copied()))
}

fn out(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[test]
fn simulate_writes_artifacts_with_config_header() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "sim");
    assert_eq!(
        cli(&[
            "simulate",
            "--task",
            "tracking",
            "--maneuver",
            "left-s-descent",
            "--policy",
            "state",
            "--trials",
            "10",
            "--seed",
            "7",
            "--out",
            &o
        ]),
        EXIT_OK
    );
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&o).join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["metrics"]["sr"], 1.0);
    assert_eq!(metrics["seed"], 7);
    assert_eq!(metrics["config"]["maneuver"], "left-s-descent");
    let trials = fs::read_to_string(Path::new(&o).join("trials.csv")).unwrap();
    assert!(trials.contains("# seed = 7"));
    let rows = data_lines(&Path::new(&o).join("trials.csv"));
    assert_eq!(rows[0], "seed,success,ate_cm,art_s,ald_cm");
    assert_eq!(rows.len(), 11);
    let traj =
        fs::read_to_string(Path::new(&o).join("trajectories/trial_000_follower.csv")).unwrap();
    assert!(traj.starts_with("# falconwing simulate\n"));
    assert!(traj.contains("# trial_seed = "));
}

#[test]
fn landing_and_jobs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (out(dir.path(), "a"), out(dir.path(), "b"));
    assert_eq!(
        cli(&["simulate", "--task", "landing", "--trials", "4", "--seed", "3", "--out", &a]),
        EXIT_OK
    );
    assert_eq!(
        cli(&[
            "simulate", "--task", "landing", "--trials", "4", "--seed", "3", "--jobs", "3",
            "--out", &b
        ]),
        EXIT_OK
    );
    let strip = |p: &str| -> Vec<String> {
        data_lines(&Path::new(p).join("trials.csv"))
            .iter()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                format!("{},{},{},{}", f[0], f[1], f[2], f[4])
            })
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&a).join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(m["metrics"]["sr"], 1.0);
    assert!(m["metrics"]["ald"].as_f64().unwrap() <= 100.0);
}

#[test]
fn usage_and_runtime_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "x");
    assert_eq!(
        cli(&["simulate", "--maneuver", "straight", "--out", &o]),
        EXIT_USAGE
    );
    assert_eq!(
        cli(&["simulate", "--task", "tracking", "--out", &o]),
        EXIT_USAGE
    );
    assert_eq!(
        cli(&[
            "simulate",
            "--task",
            "tracking",
            "--maneuver",
            "loop",
            "--out",
            &o
        ]),
        EXIT_USAGE
    );
    assert_eq!(
        cli(&[
            "simulate",
            "--task",
            "tracking",
            "--maneuver",
            "straight",
            "--policy",
            "rgb",
            "--out",
            &o
        ]),
        EXIT_USAGE
    );
    assert_eq!(
        cli(&["simulate", "--task", "landing", "--scale", "3", "--out", &o]),
        EXIT_USAGE
    );
    assert_eq!(
        cli(&[
            "simulate",
            "--task",
            "landing",
            "--params",
            "{\"k_pitch\": -1}",
            "--out",
            &o
        ]),
        EXIT_USAGE
    );
    assert_eq!(
        cli(&["sysid", "--input", "/definitely/missing.csv", "--out", &o]),
        EXIT_RUNTIME
    );
    assert_eq!(cli(&["sysid", "--out", &o]), EXIT_USAGE);
    assert_eq!(cli(&["sweep", "--scale", "0.5,abc"]), EXIT_USAGE);
    assert_eq!(cli(&["sweep", "--scale", "0.25,1.0"]), EXIT_USAGE);
    assert_eq!(cli(&["sweep"]), EXIT_USAGE);
    assert_eq!(
        cli(&["linkdemo", "--transport", "carrier-pigeon", "--out", &o]),
        EXIT_USAGE
    );
    assert_eq!(cli(&["linkdemo", "--drop", "1.5", "--out", &o]), EXIT_USAGE);
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "trials = 2\nwingspan = 3\n").unwrap();
    assert_eq!(
        cli(&[
            "simulate",
            "--task",
            "landing",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            &o
        ]),
        EXIT_USAGE
    );
    assert_eq!(
        cli(&[
            "simulate",
            "--task",
            "landing",
            "--config",
            "/missing.cfg",
            "--out",
            &o
        ]),
        EXIT_RUNTIME
    );
}

#[test]
fn config_file_supplies_options() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "task = tracking\nmaneuver = right-s-ascent\ntrials = 2\nseed = 11\ngains.standoff = 3.5\n",
    )
    .unwrap();
    let o = out(dir.path(), "c");
    assert_eq!(
        cli(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--trials",
            "3",
            "--out",
            &o
        ]),
        EXIT_OK
    );
    assert_eq!(data_lines(&Path::new(&o).join("trials.csv")).len(), 4);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&o).join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(m["seed"], 11);
    assert_eq!(m["config"]["gains.standoff"], "3.5");
}

#[test]
fn sysid_generate_recovers_reference() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "id");
    assert_eq!(
        cli(&[
            "sysid",
            "--generate",
            "--guess-scale",
            "2",
            "--seed",
            "5",
            "--out",
            &o
        ]),
        EXIT_OK
    );
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&o).join("fit.json")).unwrap()).unwrap();
    let params: DynParams = serde_json::from_value(fit["params"].clone()).unwrap();
    for (a, b) in params
        .to_array()
        .iter()
        .zip(DynParams::reference().to_array())
    {
        assert!(((a - b) / b).abs() < 1e-3, "{a} vs {b}");
    }
    assert_eq!(fit["seed"], 5);
    assert!(Path::new(&o).join("excitation_000.csv").exists());

    // The written fit feeds back in as --params.
    let fit_path = Path::new(&o).join("fit.json");
    let o2 = out(dir.path(), "refit");
    assert_eq!(
        cli(&[
            "simulate",
            "--task",
            "landing",
            "--trials",
            "2",
            "--params",
            fit_path.to_str().unwrap(),
            "--out",
            &o2
        ]),
        EXIT_OK
    );
}

#[test]
fn sweep_rows_and_state_policy_independence() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path(), "sw");
    assert_eq!(
        cli(&[
            "sweep",
            "--scale",
            "0.5,0.75,1.0,1.5,2.0",
            "--trials",
            "3",
            "--policy",
            "state",
            "--out",
            &o
        ]),
        EXIT_OK
    );
    let rows = data_lines(&Path::new(&o).join("sweep.csv"));
    assert_eq!(rows[0], "kind,level,trials,sr");
    assert_eq!(rows.len(), 6);
    assert!(
        rows[1..].iter().all(|r| r.ends_with(",3,1.000000")),
        "{rows:?}"
    );
}

#[test]
fn linkdemo_drops_are_seeded_and_mode_switch_lands_on_tick() {
    let dir = tempfile::tempdir().unwrap();
    let logs: Vec<Vec<serde_json::Value>> = ["l1", "l2"]
        .iter()
        .map(|name| {
            let o = out(dir.path(), name);
            let code = cli(&[
                "linkdemo",
                "--transport",
                "memory",
                "--drop",
                "0.1",
                "--seed",
                "9",
                "--duration",
                "4",
                "--manual-at",
                "30",
                "--out",
                &o,
            ]);
            assert_eq!(code, EXIT_OK);
            fs::read_to_string(Path::new(&o).join("link_log.jsonl"))
                .unwrap()
                .lines()
                .skip(1)
                .map(|l| serde_json::from_str(l).unwrap())
                .collect()
        })
        .collect();
    let dropped = |log: &[serde_json::Value]| -> Vec<u64> {
        log.iter()
            .filter(|t| t["dropped"] == true)
            .map(|t| t["tick"].as_u64().unwrap())
            .collect()
    };
    assert_eq!(dropped(&logs[0]), dropped(&logs[1]));
    assert!(!dropped(&logs[0]).is_empty());
    assert_eq!(logs[0].len(), 80);
    assert_eq!(logs[0][29]["mode"], "autonomous");
    assert_eq!(logs[0][30]["mode"], "manual");
}
