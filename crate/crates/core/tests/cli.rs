use std::path::Path;
use std::process::{Command, Output};

use genprior::harness;
use genprior::solvers::{self, read_trace_csv, Instance};

fn genprior(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genprior")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(genprior(&["recipe", "--k", "4", "--d", "3"]).status.code(), Some(0));
    assert_eq!(genprior(&["recipe", "--k", "4", "--d", "1"]).status.code(), Some(1));
    assert_eq!(genprior(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(genprior(&["solve", "--dims", "4,30", "--m", "10"]).status.code(), Some(1));
    assert_eq!(genprior(&["check-patterns", "--rows", "30", "--ell", "2"]).status.code(), Some(1));
    assert_eq!(genprior(&["recipe", "--k", "4000000", "--d", "40"]).status.code(), Some(2));
    let diverge = genprior(&["solve", "--dims", "4,30,60", "--m", "20", "--step-scale", "1e200", "--max-iters", "20"]);
    assert_eq!(diverge.status.code(), Some(2));
    assert_eq!(genprior(&["solve", "--net", "/nonexistent/net.bin", "--m", "5"]).status.code(), Some(3));
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"not a network").unwrap();
    assert_eq!(genprior(&["check-wdc", "--net", path(&bad)]).status.code(), Some(1));
    let unwritable = dir.path().join("missing").join("out.csv");
    assert_eq!(genprior(&["recipe", "--k", "2", "--d", "2", "--out", path(&unwritable)]).status.code(), Some(3));
    assert_eq!(genprior(&["--help"]).status.code(), Some(0));
}

#[test]
fn saved_instance_reproduces_the_solve() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("cs.inst");
    let first = genprior(&[
        "solve", "--dims", "4,30,60", "--kind", "cs", "--m", "40", "--noise", "gaussian", "--noise-level", "0.01",
        "--seed", "5", "--max-iters", "200", "--save-instance", path(&inst),
    ]);
    assert!(first.status.success());
    let second = genprior(&["solve", "--instance", path(&inst), "--seed", "5", "--max-iters", "200"]);
    assert!(second.status.success());
    assert_eq!(first.stdout, second.stdout);
    let loaded = Instance::load(&inst).unwrap();
    assert_eq!(loaded.kind, genprior::InstanceKind::CompressedSensing);
    let rows = read_trace_csv(first.stdout.as_slice()).unwrap();
    assert_eq!(rows.len(), 201);
    let cfg = genprior::SolverConfig { max_iters: 200, seed: 5, ..Default::default() };
    let direct = solvers::solve(&loaded, &cfg).unwrap();
    assert_eq!(rows.last().unwrap().f, direct.records.last().unwrap().f);
}

#[test]
fn net_file_feeds_other_commands() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.bin");
    assert!(genprior(&["gen-net", "--dims", "3,20,40", "--seed", "9", "--out", path(&net)]).status.success());
    let loaded = genprior::GenerativeNet::load(&net).unwrap();
    assert_eq!(loaded.dims(), &[3, 20, 40]);
    let by_file = genprior(&["check-wdc", "--net", path(&net), "--samples", "10", "--layer", "2"]);
    let by_dims = genprior(&["check-wdc", "--dims", "3,20,40", "--seed", "9", "--samples", "10", "--layer", "2"]);
    assert!(by_file.status.success());
    assert_eq!(by_file.stdout, genprior(&["check-wdc", "--net", path(&net), "--samples", "10", "--layer", "2", "--seed", "0"]).stdout);
    // same weights, different estimator seed
    assert_ne!(by_file.stdout, by_dims.stdout);
    let text = String::from_utf8(by_file.stdout).unwrap();
    assert!(text.lines().skip(1).all(|l| l.starts_with("WDC,2,")));
}

#[test]
fn experiment_rows_do_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.cfg");
    std::fs::write(
        &cfg,
        "[experiment]\nname = jobs\nkind = den\nseeds = 0..4\n[net]\ndims = 4,30,60\n[sweep]\naxis = sigma\nvalues = 0, 0.05, 0.1\n\
         [instance]\nnoise = gaussian\n[solver]\nmax_iters = 300\n",
    )
    .unwrap();
    let one = dir.path().join("one.csv");
    let three = dir.path().join("three.csv");
    assert!(genprior(&["experiment", "--config", path(&cfg), "--jobs", "1", "--out", path(&one)]).status.success());
    assert!(genprior(&["experiment", "--config", path(&cfg), "--jobs", "3", "--out", path(&three)]).status.success());
    assert_eq!(std::fs::read(&one).unwrap(), std::fs::read(&three).unwrap());
    let summary = std::fs::read(dir.path().join("one_summary.csv")).unwrap();
    assert_eq!(summary, std::fs::read(dir.path().join("three_summary.csv")).unwrap());
    let rows = harness::read_rows_csv(std::fs::File::open(&one).unwrap()).unwrap();
    assert_eq!(rows.len(), 12);
    let summary = harness::read_summary_csv(summary.as_slice()).unwrap();
    assert_eq!(summary.len(), 3);
    assert!(summary[0].median_signal_err.unwrap() < summary[2].median_signal_err.unwrap());
}

#[test]
fn conditions_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cond.cfg");
    let out = dir.path().join("cond.csv");
    std::fs::write(
        &cfg,
        format!("[net]\nk = 2\nd = 2\nseed = 4\n[conditions]\nsamples = 8\npairs = 8\noutput = {}\n", out.display()),
    )
    .unwrap();
    assert!(genprior(&["conditions", "--config", path(&cfg)]).status.success());
    let rows = genprior::conditions::read_condition_csv(std::fs::File::open(&out).unwrap()).unwrap();
    use genprior::conditions::ConditionKind as K;
    for kind in [K::Wdc, K::R2wdc, K::LambdaConc, K::NormAngle, K::Lipschitz, K::Convexity, K::PatternCount, K::Recipe] {
        assert!(rows.iter().any(|r| r.condition == kind), "{kind:?} missing");
    }
}
