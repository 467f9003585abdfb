use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use handctx::annotation::RgbImage;

fn handctx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handctx")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every file under `dir`, relative path and bytes, in sorted order.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gradcheck_exit_codes() {
    let ok = handctx(&["gradcheck"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    assert!(stdout(&ok).contains("w_theta") && !stdout(&ok).contains("FAIL"));

    assert_eq!(code(&handctx(&["gradcheck", "--h", "1", "--w", "1", "--m", "3"])), 0);

    let bad = handctx(&["gradcheck", "--corrupt-backward"]);
    assert_eq!(code(&bad), 1);
    assert!(stdout(&bad).contains("FAIL"));

    let big = handctx(&["gradcheck", "--h", "32", "--w", "32", "--m", "8"]);
    assert_eq!(code(&big), 2);
    assert!(stderr(&big).contains("4096"));

    assert_eq!(code(&handctx(&["gradcheck", "--bogus"])), 2);
    assert!(!stdout(&handctx(&["gradcheck", "--help"])).contains("corrupt"));
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gc.txt");
    fs::write(&cfg, "h=2\nw=3\nm=2\nk=2\nseed=5\n").unwrap();
    let out = tmp.path().join("out");
    let o = handctx(&["gradcheck", "--config", p(&cfg), "--set", "m=3", "--w", "1", "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    let resolved = fs::read_to_string(out.join("config.txt")).unwrap();
    assert_eq!(resolved, "h=2\nw=1\nm=3\nk=2\nseed=5\ndetector=false\n");

    fs::write(&cfg, "lambda=-1\n").unwrap();
    let o = handctx(&["train", "--config", p(&cfg), "--out", p(&tmp.path().join("t"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lambda"));
    assert!(!tmp.path().join("t").exists(), "validation must happen before any work");

    fs::write(&cfg, "not a pair\n").unwrap();
    assert_eq!(code(&handctx(&["gradcheck", "--config", p(&cfg)])), 2);
    assert_eq!(code(&handctx(&["gradcheck", "--set", "nope=1"])), 2);
}

fn derive_fixture(dir: &Path) {
    fs::create_dir_all(dir.join("images")).unwrap();
    fs::write(
        dir.join("dets.jsonl"),
        concat!(
            r#"{"image_id":"img1","confidence":0.9,"wrist":[10,11],"keypoints":[[10,31],[12,31],[8,31]]}"#,
            "\n",
            r#"{"image_id":"img1","confidence":0.8,"wrist":[30,30],"keypoints":[[40,30]]}"#,
            "\n"
        ),
    )
    .unwrap();
    fs::write(
        dir.join("persons.jsonl"),
        r#"{"image_id":"img1","wrists":[[10,10,2],[50,50,2]],"elbows":[[10,20,2],[50,60,2]]}"#,
    )
    .unwrap();
    RgbImage::filled(64, 64, [128, 128, 128]).write(&dir.join("images/img1.ppm")).unwrap();
}

#[test]
fn derive_command() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    derive_fixture(d);
    let args = |out: &str| {
        vec![
            "derive".to_string(),
            "--detections".into(),
            p(&d.join("dets.jsonl")).into(),
            "--keypoints".into(),
            p(&d.join("persons.jsonl")).into(),
            "--images".into(),
            p(&d.join("images")).into(),
            "--out".into(),
            p(&d.join(out)).into(),
        ]
    };
    let run = |out: &str| {
        let a = args(out);
        handctx(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let o = run("a");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("kept 1 rejected 1"));
    assert_eq!(code(&run("b")), 0);
    assert_eq!(snapshot(&d.join("a")), snapshot(&d.join("b")));

    fs::write(d.join("dets.jsonl"), "").unwrap();
    fs::write(d.join("persons.jsonl"), "").unwrap();
    let o = run("empty");
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(d.join("empty/annotations.txt")).unwrap(), "");

    fs::remove_file(d.join("dets.jsonl")).unwrap();
    let o = run("missing");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dets.jsonl"));
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("gt.txt"), "a 0 0 10 0 10 10 0 10 3 0\na 50 0 60 0 60 10 50 10 3 0\n").unwrap();
    fs::write(d.join("dets.txt"), "a 0 0 10 10 0.9 0\na 50 0 60 10 0.8 0.05\n").unwrap();
    let o = handctx(&[
        "eval",
        "--detections",
        p(&d.join("dets.txt")),
        "--ground-truth",
        p(&d.join("gt.txt")),
        "--out",
        p(&d.join("e")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("ap: 1.000000"));
    assert!(stdout(&o).contains("orientation_acc@10: 1.000000"));
    assert!(d.join("e/pr.csv").is_file() && d.join("e/pr.svg").is_file() && d.join("e/config.txt").is_file());

    fs::write(d.join("dets.txt"), "a 0 0 10\n").unwrap();
    let o = handctx(&["eval", "--detections", p(&d.join("dets.txt")), "--ground-truth", p(&d.join("gt.txt")), "--out", p(&d.join("e"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dets.txt:1"));
}

#[test]
fn plot_marks_the_reported_point() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("pr.csv"), "recall,precision\n0.25,1\n0.5,0.9\n0.75,0.81\n0.9,0.6\n").unwrap();
    let o = handctx(&["plot", "--input", p(&d.join("pr.csv")), "--out", p(&d.join("plot"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = fs::read_to_string(d.join("plot/pr.svg")).unwrap();
    assert!(svg.contains(r#"data-recall="0.75" data-precision="0.81""#));
    assert_eq!(code(&handctx(&["plot", "--input", p(&d.join("none.csv")), "--out", p(&d.join("plot"))])), 2);
}

const TINY: [&str; 8] = ["--set", "image_size=32", "--set", "channels=4", "--set", "parts=2", "--set", "max_hands=1"];

#[test]
fn gen_train_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (g, t, e) = (d.join("g"), d.join("t"), d.join("e"));
    let mut gen = vec!["gen", "--n", "3", "--seed", "4", "--out", p(&g)];
    gen.extend(TINY);
    assert_eq!(code(&handctx(&gen)), 0);
    assert_eq!(fs::read_dir(d.join("g/images")).unwrap().count(), 3);

    let mut train = vec!["train", "--epochs", "2", "--train-scenes", "4", "--val-scenes", "2", "--out", p(&t)];
    train.extend(TINY);
    let o = handctx(&train);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(d.join("t/metrics.csv")).unwrap().lines().count(), 3);

    let o = handctx(&["eval", "--checkpoint", p(&t.join("checkpoint.bin")), "--out", p(&e)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("ap: "));
    assert!(d.join("e/detections.txt").is_file());
}
