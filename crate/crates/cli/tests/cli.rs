use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn rdvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdvae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rdvae(args);
    assert!(
        out.status.success(),
        "rdvae {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen", "--dataset", "mix", "--seed", "7", "--out", s(d)]);
    }
    let bin_a = fs::read(a.join("dataset.bin")).unwrap();
    assert_eq!(bin_a, fs::read(b.join("dataset.bin")).unwrap());
    assert_eq!(
        fs::read(a.join("dataset.json")).unwrap(),
        fs::read(b.join("dataset.json")).unwrap()
    );
    // x, s and density as little-endian f64.
    assert_eq!(bin_a.len(), 50_000 * (16 + 3 + 1) * 8);
    let header: serde_json::Value = serde_json::from_slice(&fs::read(a.join("dataset.json")).unwrap()).unwrap();
    assert_eq!(header["spec"]["ambient_dim"], 16);
    assert_eq!(header["spec"]["sample_count"], 50_000);
}

#[test]
fn gen_rejects_idx() {
    let dir = tempfile::tempdir().unwrap();
    let out = rdvae(&["gen", "--dataset", "idx", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_resume_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    let common = ["--dataset", "norm", "--n", "512", "--batch", "64", "--seed", "3"];

    let mut args = vec!["train", "--epochs", "4", "--out", s(&full)];
    args.extend(common);
    ok(&args);

    let mut args = vec!["train", "--epochs", "2", "--out", s(&part)];
    args.extend(common);
    ok(&args);
    let ckpt = part.join("checkpoint.json");
    let resumed = dir.path().join("resumed");
    ok(&["train", "--epochs", "4", "--resume", s(&ckpt), "--out", s(&resumed)]);

    let hist = |d: &Path| fs::read_to_string(d.join("history.csv")).unwrap();
    assert_eq!(hist(&full).lines().count(), 5);
    assert_eq!(hist(&full), hist(&resumed));

    let an = dir.path().join("an");
    let out = ok(&["analyze", "--checkpoint", s(&full.join("checkpoint.json")), "--out", s(&an)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("informative"));
    for f in ["report.json", "perdim.csv", "scatter.csv", "traverse.csv", "config.json"] {
        assert!(an.join(f).exists(), "{f} missing");
    }
    assert_eq!(fs::read_to_string(an.join("scatter.csv")).unwrap().lines().count(), 513);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(an.join("report.json")).unwrap()).unwrap();
    let cfg: serde_json::Value = serde_json::from_slice(&fs::read(an.join("config.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"], cfg["config_hash"]);
}

#[test]
fn rdcheck_is_fast_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    ok(&["rdcheck", "--out", s(dir.path())]);
    assert!(t.elapsed().as_secs_f64() < 10.0);
    let rates = fs::read_to_string(dir.path().join("rate_id.csv")).unwrap();
    assert_eq!(rates.lines().count(), 1 + 17 * 4);
    assert!(rates.starts_with("mu,sigma,numeric,closed,kl_plus_offset,abs_gap"));
    let curve = fs::read_to_string(dir.path().join("rdcurve.csv")).unwrap();
    assert!(curve.starts_with("d,R_opt,D_opt"));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "sweep", "--datasets", "mix,norm", "--losses", "mse,down", "--lambdas", "10,100", "--epochs", "1", "--n",
        "256", "--jobs", "2", "--out", s(dir.path()),
    ]);
    let mut rdr = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(&headers[0], "dataset");
    let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 8);
    assert_eq!(&rows[0][0], "mix");
    assert_eq!(&rows[7][0], "norm");
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(rdvae(&["train", "--config", s(&bad), "--out", s(dir.path())]).status.code(), Some(2));
    assert_eq!(rdvae(&["train", "--batch", "0", "--out", s(dir.path())]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(
        rdvae(&["analyze", "--checkpoint", s(&missing), "--out", s(dir.path())]).status.code(),
        Some(4)
    );
    let diverge = dir.path().join("div");
    let out = rdvae(&[
        "train", "--dataset", "mix", "--n", "256", "--lambda", "1.7e308", "--epochs", "3", "--out", s(&diverge),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(diverge.join("checkpoint.json").exists());
}
