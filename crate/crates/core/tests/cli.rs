use std::path::Path;
use std::process::{Command, Output};

fn hgtdp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgtdp"))
        .args(args)
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

fn trained(dir: &Path) {
    let o = hgtdp(
        &["train", "--fixture", "overfit", "--epochs", "2", "--seed", "3", "--out-dir", "run", "--quiet"],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn train_then_eval_predict_and_embed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    let log = std::fs::read_to_string(d.join("run/train.log")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch\tl_mse"));

    let o = hgtdp(
        &["eval", "--checkpoint", "run/model.hgtd", "--fixture", "overfit", "--split", "train", "--report", "r.txt"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let block = stdout(&o);
    for key in ["mse = ", "ci = ", "r2m = ", "pearson = ", "n_samples = 32", "dp = true"] {
        assert!(block.contains(key), "{block}");
    }
    assert_eq!(std::fs::read_to_string(d.join("r.txt")).unwrap(), block);
    assert_eq!(std::fs::read_to_string(d.join("r.record")).unwrap().lines().count(), 1);

    let o = hgtdp(
        &[
            "predict", "--checkpoint", "run/model.hgtd", "--fixture", "overfit",
            "--smiles", "CCO", "--sequence", "MKTAYIAKQRQISFVKSHFSRQ",
            "--drug-id", "drug0", "--target-id", "target0",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    let fields: Vec<&str> = line.trim().split('\t').collect();
    assert_eq!(fields[3], "-");
    assert!(fields[2].parse::<f64>().unwrap().is_finite());

    let o = hgtdp(
        &["predict", "--checkpoint", "run/model.hgtd", "--fixture", "overfit", "--smiles", "c1ccccc1N", "--sequence", "MKKA"],
        d,
    );
    assert!(stdout(&o).trim().ends_with("cold_drug,cold_target"), "{}", stdout(&o));

    let o = hgtdp(
        &["embed", "--checkpoint", "run/model.hgtd", "--fixture", "overfit", "--split", "train", "--out", "e.tsv"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let emb = std::fs::read_to_string(d.join("e.tsv")).unwrap();
    let header: Vec<&str> = emb.lines().next().unwrap().split('\t').collect();
    assert_eq!(header.len(), 385);
    assert_eq!(header[384], "label");
    assert_eq!(emb.lines().count(), 33);
}

#[test]
fn multi_seed_training_writes_one_directory_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = hgtdp(
        &["train", "--fixture", "four", "--seeds", "1,2", "--epochs", "1", "--out-dir", "m", "--quiet"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("m/seed1/model.hgtd").exists());
    assert!(dir.path().join("m/seed2/train.log").exists());
}

#[test]
fn convert_writes_canonical_tsv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("d.json"), r#"{"a":"CCO","b":"c1ccccc1"}"#).unwrap();
    std::fs::write(d.join("t.txt"), "x\tMKTAYIAK\ny\tMSTNPKPQ\n").unwrap();
    std::fs::write(d.join("m.txt"), "10000 1\nnan 100\n").unwrap();
    std::fs::write(d.join("train.json"), "[0, 2]").unwrap();
    std::fs::write(d.join("test.json"), "[1]").unwrap();
    let o = hgtdp(
        &[
            "convert", "--drugs", "d.json", "--targets", "t.txt", "--matrix", "m.txt", "--transform", "kd-to-pkd",
            "--train-index", "train.json", "--test-index", "test.json", "--out", "out.tsv",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "samples=3\ttrain=2\ttest=1\tskipped_missing=1");
    let tsv = std::fs::read_to_string(d.join("out.tsv")).unwrap();
    assert!(tsv.contains("a\tCCO\tx\tMKTAYIAK\t5\ttrain"), "{tsv}");
    assert!(tsv.contains("a\tCCO\ty\tMSTNPKPQ\t9\ttest"), "{tsv}");
}

#[test]
fn errors_are_one_line_with_class_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.conf"), "learning_rate = 1\n").unwrap();
    let o = hgtdp(&["train", "--config", "bad.conf", "--fixture", "four"], d);
    assert_eq!(o.status.code(), Some(19));
    assert!(stderr(&o).starts_with("error[config]:"));
    assert_eq!(stderr(&o).lines().count(), 1);

    std::fs::write(d.join("bad.tsv"), "drug_id\tsmiles\n").unwrap();
    let o = hgtdp(&["train", "--data", "bad.tsv"], d);
    assert!(stderr(&o).starts_with("error["), "{}", stderr(&o));
    assert!(!o.status.success());

    trained(d);
    let o = hgtdp(&["eval", "--checkpoint", "run/model.hgtd", "--fixture", "four"], d);
    assert_eq!(o.status.code(), Some(21));

    std::fs::write(d.join("junk.hgtd"), b"not a checkpoint").unwrap();
    let o = hgtdp(&["eval", "--checkpoint", "junk.hgtd", "--fixture", "overfit"], d);
    assert_eq!(o.status.code(), Some(21));

    let o = hgtdp(&["train", "--bogus"], d);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_ops_only_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = hgtdp(&["gradcheck", "--ops-only"], dir.path());
    assert!(o.status.success());
    let table = stdout(&o);
    assert!(table.lines().skip(1).all(|l| l.ends_with("pass")), "{table}");
    assert!(table.contains("op:layer_norm(x)"));
}
