use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpe-psn"))
        .args(args)
        .env("MPE_PSN_WORKERS", "2")
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = run(dir.path(), &["verify", "--trials", "50"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(dir.path().join("verify_report.csv").exists());

    let fault = run(dir.path(), &["verify", "--trials", "50", "--inject-fault"]);
    assert_eq!(fault.status.code(), Some(1));
    let report = fs::read_to_string(dir.path().join("verify_report.csv")).unwrap();
    assert!(report.starts_with("check,trials,failures,max_error,status,first_failure\n"));
    assert!(report.lines().any(|l| l.starts_with("t0_exactness,") && l.contains(",fail,")));

    assert_eq!(run(dir.path(), &["verify", "--trials", "0"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["train", "--synaptic-delay", "2"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["train", "--lambda", "1.5", "--epochs", "1"]).status.code(), Some(2));
}

#[test]
fn missing_inputs_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["estimate", "--input", "nope.csv"][..],
        &["train", "--dataset", "nope.csv", "--epochs", "1"][..],
    ] {
        let o = run(dir.path(), args);
        assert_eq!(o.status.code(), Some(2));
        assert!(stderr(&o).contains("nope.csv"), "{}", stderr(&o));
    }
}

#[test]
fn malformed_dataset_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "# dataset 2,2,3,1\n0.1,0.2,0.3,0\n0.1,oops,0.3\n").unwrap();
    let o = run(dir.path(), &["train", "--dataset", "bad.csv", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.csv") && err.contains('3'), "{err}");
}

#[test]
fn gen_data_then_train_on_it() {
    let dir = tempfile::tempdir().unwrap();
    let g = run(dir.path(), &["gen-data", "--samples-per-class", "20", "--out", "d.csv"]);
    assert!(g.status.success(), "{}", stderr(&g));
    let t = run(
        dir.path(),
        &["train", "--dataset", "d.csv", "--epochs", "3", "--neurons", "8", "--out", "log.csv"],
    );
    assert!(t.status.success(), "{}", stderr(&t));
    let log = fs::read_to_string(dir.path().join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(stdout(&t).lines().last().unwrap().starts_with("final epoch=3 "));
}

#[test]
fn membrane_loss_switch_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["train", "--epochs", "2", "--samples-per-class", "32", "--lambda", "0.5"];
    let on = run(dir.path(), &[&common[..], &["--out", "on.csv"]].concat());
    let off = run(dir.path(), &[&common[..], &["--mem-loss", "off", "--out", "off.csv"]].concat());
    assert!(on.status.success() && off.status.success());
    let on = fs::read_to_string(dir.path().join("on.csv")).unwrap();
    let off = fs::read_to_string(dir.path().join("off.csv")).unwrap();
    let header = on.lines().next().unwrap();
    assert_eq!(header, off.lines().next().unwrap());
    assert!(header.starts_with("epoch,loss_cls,loss_mem,loss_total,train_acc,test_acc,l2_norm_layer_0"));
    assert_ne!(on.lines().nth(1), off.lines().nth(1));
}

#[test]
fn lif_training_logs_zero_estimation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["train", "--neuron-kind", "lif", "--epochs", "1", "--samples-per-class", "16", "--out", "lif.csv"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("l2_norm_mean=0.000000"));
}

#[test]
fn bench_writes_one_file_per_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["bench", "--time-steps", "2,4", "--neurons", "16,64", "--workers", "1,2", "--reps", "5", "--out", "b.csv"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for w in [1, 2] {
        let csv = fs::read_to_string(dir.path().join(format!("b.w{w}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("T,N,B,workers,reps,seq_median_ns,par_median_ns,ratio"));
        let rows: Vec<_> = lines.collect();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.split(',').nth(3) == Some(&*w.to_string())));
        assert!(dir.path().join(format!("b.w{w}.matrix.dat")).exists());
    }
    assert_eq!(stdout(&o).matches("wrote ").count(), 2);

    let bad = run(dir.path(), &["bench", "--reps", "2", "--out", "c.csv"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn estimate_sections_depend_on_mode() {
    let dir = tempfile::tempdir().unwrap();
    let s = run(dir.path(), &["estimate", "--mode", "sampled", "--out", "e.csv"]);
    let e = run(dir.path(), &["estimate", "--mode", "expectation"]);
    assert!(s.status.success() && e.status.success());
    assert!(stdout(&s).contains("sampled spike fraction"));
    assert!(stdout(&e).contains("expectation mode"));
    let csv = fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,l2_norm"));
    assert_eq!(csv.lines().count(), 9);
}

#[test]
fn zero_input_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let zero = mpe_psn::numerics::Tensor::zeros(&[2, 1, 3]);
    mpe_psn::io::save_tensor(&zero, &dir.path().join("zero.csv")).unwrap();
    let o = run(dir.path(), &["estimate", "--input", "zero.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("min 0.500000 mean 0.500000 max 0.500000"), "{}", stdout(&o));
}

#[test]
fn train_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["train", "--epochs", "3", "--samples-per-class", "24", "--seed", "11", "--out", "a.csv"];
    let first = run(dir.path(), &args);
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    let second = run(dir.path(), &args);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(a, fs::read(dir.path().join("a.csv")).unwrap());
}
