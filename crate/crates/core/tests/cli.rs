use std::path::Path;
use std::process::{Command, Output};

fn acit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acit"))
        .args(args)
        .arg("--log-level=warn")
        .output()
        .expect("run acit")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_dataset(dir: &Path) {
    let o = acit(&[
        "gen-data",
        "--out",
        dir.to_str().unwrap(),
        "--scenarios",
        "4",
        "--set",
        "channels=8",
        "--set",
        "max_len=22",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&acit(&[])), 1);
    assert_eq!(code(&acit(&["no-such-command"])), 1);
    assert_eq!(code(&acit(&["inspect", "--set", "no_such_key=1"])), 1);
    assert_eq!(code(&acit(&["inspect", "--set", "tfa_heads=5"])), 1);
    assert_eq!(code(&acit(&["inspect", "--preset", "huge"])), 1);
    assert_eq!(code(&acit(&["infer", "--clip", "/nonexistent"])), 1);
}

#[test]
fn help_exits_zero() {
    let o = acit(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("gen-data"));
}

#[test]
fn missing_inputs_exit_two() {
    let o = acit(&["infer", "--clip", "/nonexistent/clip", "--init-seed", "1"]);
    assert_eq!(code(&o), 2);
    let o = acit(&["eval", "--data", "/nonexistent", "--checkpoint", "/nonexistent"]);
    assert!(matches!(code(&o), 1 | 2));
}

#[test]
fn gen_data_refuses_a_non_empty_directory() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("keep.txt"), "x").unwrap();
    let o = acit(&["gen-data", "--out", tmp.path().to_str().unwrap(), "--scenarios", "3"]);
    assert_eq!(code(&o), 1);
    assert!(tmp.path().join("keep.txt").exists());
    assert!(!tmp.path().join("manifest.tsv").exists());
}

#[test]
fn inspect_prints_the_paper_scale_shape_chain() {
    let o = acit(&["inspect", "--preset", "paper"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    for needle in [
        "visual maps 16x8x8x1024 x4",
        "tokens 64x256",
        "fused 16x768",
        "encoder input 17x768",
        "logit 1",
    ] {
        assert!(out.contains(needle), "missing '{needle}' in\n{out}");
    }
}

#[test]
fn generate_train_eval_infer_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    small_dataset(&data);
    assert!(data.join("manifest.tsv").exists());

    let common = ["--set", "channels=8", "--set", "d_token=8", "--set", "tfa_ffn=64"];
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--epochs",
        "1",
        "--lr",
        "1e-3",
    ];
    args.extend(common);
    let o = acit(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(run.join("epochs.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_acc,val_auc"));
    assert_eq!(log.lines().count(), 2);

    let ckpt = run.join("checkpoint");
    let csv = tmp.path().join("eval.csv");
    let o = acit(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--split",
        "val",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("split,n,acc,auc"));

    let clip = std::fs::read_dir(data.join("val")).unwrap().next().unwrap().unwrap().path();
    let o = acit(&["infer", "--clip", clip.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.starts_with("probability="), "{out}");
    assert!(out.contains("decision=C") || out.contains("decision=NC"));

    // A model whose width disagrees with the stored maps.
    let o = acit(&[
        "infer",
        "--clip",
        clip.to_str().unwrap(),
        "--init-seed",
        "1",
        "--set",
        "channels=16",
    ]);
    assert_eq!(code(&o), 2);
}
