use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tfup::cache::load_cache;
use tfup::embedding::{load_normalized, save_embeddings};
use tfup::eval::load_report;
use tfup::{zero_shot_classify, LogitScale};

fn tfup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfup")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = tfup(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

struct Fx {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fx {
    fn new(extra: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let mut args = vec![
            "gen-synthetic", "--output", root.to_str().unwrap(), "--classes", "4", "--dim", "16",
            "--train-per-class", "30", "--test-per-class", "10",
        ];
        args.extend_from_slice(extra);
        ok(&args);
        Self { _dir: dir, root }
    }

    fn p(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into_owned()
    }

    fn eval(&self, extra: &[&str], out: &str) -> tfup::eval::EvalReport {
        let (test, text, man, cls, o) = (self.p("test.tfb"), self.p("text.tfb"), self.p("manifest.csv"), self.p("classes.txt"), self.p(out));
        let mut args = vec!["eval", "--test", &test, "--text", &text, "--manifest", &man, "--classes", &cls, "--output", &o];
        args.extend_from_slice(extra);
        ok(&args);
        load_report(&o).unwrap().remove(0)
    }
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn missing_file_exits_2_naming_the_path() {
    let fx = Fx::new(&[]);
    let missing = fx.p("nope.tfb");
    let out = tfup(&["build-cache", "--train", &missing, "--text", &fx.p("text.tfb"), "--output", &fx.p("c.tfc")]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains(&missing));
}

#[test]
fn k_below_n_exits_2() {
    let fx = Fx::new(&[]);
    let out = tfup(&[
        "build-cache", "--train", &fx.p("train.tfb"), "--text", &fx.p("text.tfb"), "--output", &fx.p("c.tfc"), "--k", "2", "--n", "4",
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("k must be >= n"));
    assert!(!Path::new(&fx.p("c.tfc")).exists());
}

#[test]
fn dimension_mismatch_exits_2() {
    let fx = Fx::new(&[]);
    let other = Fx::new(&["--dim", "8"]);
    let out = tfup(&["infer", "--test", &fx.p("test.tfb"), "--text", &other.p("text.tfb"), "--no-cache", "--output", &fx.p("p.csv")]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn corrupt_inputs_exit_3() {
    let fx = Fx::new(&[]);
    let bytes = std::fs::read(fx.p("test.tfb")).unwrap();
    std::fs::write(fx.p("cut.tfb"), &bytes[..bytes.len() / 2]).unwrap();
    let out = tfup(&["infer", "--test", &fx.p("cut.tfb"), "--text", &fx.p("text.tfb"), "--no-cache", "--output", &fx.p("p.csv")]);
    assert_eq!(exit_code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("truncated"));

    std::fs::write(fx.p("bad.tfc"), b"TFB1not a cache").unwrap();
    let out = tfup(&["infer", "--test", &fx.p("test.tfb"), "--text", &fx.p("text.tfb"), "--cache", &fx.p("bad.tfc"), "--output", &fx.p("p.csv")]);
    assert_eq!(exit_code(&out), 3);
}

#[test]
fn zero_row_exits_3() {
    let fx = Fx::new(&[]);
    let m = tfup::EmbeddingMatrix::with_prefix(ndarray::Array2::zeros((2, 16)), "z").unwrap();
    save_embeddings(&m, fx.p("zero.tfb")).unwrap();
    let out = tfup(&["infer", "--test", &fx.p("zero.tfb"), "--text", &fx.p("text.tfb"), "--no-cache", "--output", &fx.p("p.csv")]);
    assert_eq!(exit_code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("z0"));
}

#[test]
fn divergent_training_exits_4() {
    let fx = Fx::new(&[]);
    let out = tfup(&[
        "train", "--train", &fx.p("train.tfb"), "--text", &fx.p("text.tfb"), "--output", &fx.p("a.tfa"),
        "--learning-rate", "1e300", "--theta", "0.3",
    ]);
    assert_eq!(exit_code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn build_cache_writes_summary_and_balanced_cache() {
    let fx = Fx::new(&[]);
    let stdout = ok(&["build-cache", "--train", &fx.p("train.tfb"), "--text", &fx.p("text.tfb"), "--classes", &fx.p("classes.txt"), "--output", &fx.p("c.tfc"), "--n", "5", "--k", "7"]);
    assert!(stdout.contains("K=7, N=5"));
    let cache = load_cache(fx.p("c.tfc")).unwrap();
    assert_eq!(cache.len(), cache.meta.class_counts.iter().sum::<usize>());
    assert!(cache.meta.class_counts.iter().all(|&c| c <= 5));
    let echoed = std::fs::read_to_string(fx.p("c.tfc.config.toml")).unwrap();
    assert!(echoed.contains("k = 7") && echoed.contains("n = 5"));
}

#[test]
fn no_cache_inference_equals_zero_shot_oracle() {
    let fx = Fx::new(&[]);
    ok(&["infer", "--test", &fx.p("test.tfb"), "--text", &fx.p("text.tfb"), "--no-cache", "--output", &fx.p("p.csv")]);
    let test = load_normalized(fx.p("test.tfb")).unwrap();
    let text = load_normalized(fx.p("text.tfb")).unwrap();
    let zs = zero_shot_classify(&test, &text, LogitScale::CLIP).unwrap();
    let mut rdr = csv::Reader::from_path(fx.p("p.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), test.rows());
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(&r[0], test.ids()[i]);
        assert_eq!(r[1].parse::<usize>().unwrap(), zs.labels[i]);
        assert_eq!(r[2].parse::<f64>().unwrap(), zs.confidence[i]);
    }
}

#[test]
fn zero_learning_rate_matches_initial_checkpoint() {
    let fx = Fx::new(&[]);
    let train = |lr: &str, epochs: &str, out: &str| {
        ok(&["train", "--train", &fx.p("train.tfb"), "--text", &fx.p("text.tfb"), "--output", &fx.p(out),
             "--learning-rate", lr, "--epochs", epochs, "--seed", "4"]);
    };
    train("0", "5", "lr0.tfa");
    train("0.01", "0", "init.tfa");
    let a = tfup::adapter::load_checkpoint(fx.p("lr0.tfa")).unwrap();
    let b = tfup::adapter::load_checkpoint(fx.p("init.tfa")).unwrap();
    assert_eq!(a.params, b.params);
    let ra = fx.eval(&["--train", &fx.p("train.tfb"), "--checkpoint", &fx.p("lr0.tfa")], "ra.jsonl");
    let rb = fx.eval(&["--train", &fx.p("train.tfb"), "--checkpoint", &fx.p("init.tfa")], "rb.jsonl");
    assert_eq!((ra.accuracy, &ra.confusion), (rb.accuracy, &rb.confusion));
    let lines = std::fs::read_to_string(fx.p("lr0.tfa.report.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 1 + 5);
}

#[test]
fn sweep_alpha_zero_before_training_is_zero_shot() {
    let fx = Fx::new(&[]);
    let zs = fx.eval(&["--no-cache"], "z.jsonl");
    ok(&["sweep", "--train", &fx.p("train.tfb"), "--test", &fx.p("test.tfb"), "--text", &fx.p("text.tfb"),
         "--manifest", &fx.p("manifest.csv"), "--classes", &fx.p("classes.txt"),
         "--alphas", "0,0.2", "--epochs", "0", "--output", &fx.p("s.jsonl")]);
    let reports = load_report(fx.p("s.jsonl")).unwrap();
    assert_eq!(reports.len(), 2);
    let at_zero = reports.iter().find(|r| r.config.alpha == 0.0).unwrap();
    assert_eq!(at_zero.confusion, zs.confusion);
}

#[test]
fn degenerate_fixture_is_perfect_in_every_mode() {
    let fx = Fx::new(&["--sigma", "0", "--text-noise", "0"]);
    assert_eq!(fx.eval(&["--no-cache"], "z.jsonl").accuracy, 1.0);
    assert_eq!(fx.eval(&["--train", &fx.p("train.tfb")], "t.jsonl").accuracy, 1.0);
    ok(&["train", "--train", &fx.p("train.tfb"), "--text", &fx.p("text.tfb"), "--output", &fx.p("a.tfa"), "--epochs", "2"]);
    let r = fx.eval(&["--train", &fx.p("train.tfb"), "--checkpoint", &fx.p("a.tfa")], "a.jsonl");
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.mode, "tfup-t adapter");
}

#[test]
fn config_file_is_overridden_by_flags_and_echoed() {
    let fx = Fx::new(&[]);
    std::fs::write(fx.p("run.toml"), "gamma = 0.25\nk = 12\n[train]\nseed = 9\n").unwrap();
    let r = fx.eval(&["--train", &fx.p("train.tfb"), "--config", &fx.p("run.toml"), "--k", "10"], "r.jsonl");
    assert_eq!((r.config.gamma, r.config.k, r.config.train.seed), (0.25, 10, 9));
    let echoed = tfup::RunConfig::load(fx.p("r.jsonl.config.toml")).unwrap();
    assert_eq!(echoed, r.config);

    std::fs::write(fx.p("bad.toml"), "gama = 1\n").unwrap();
    let out = tfup(&["infer", "--test", &fx.p("test.tfb"), "--text", &fx.p("text.tfb"), "--no-cache", "--output", &fx.p("p.csv"), "--config", &fx.p("bad.toml")]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn train_report_has_final_eval_records() {
    let fx = Fx::new(&[]);
    ok(&["train", "--train", &fx.p("train.tfb"), "--text", &fx.p("text.tfb"), "--test", &fx.p("test.tfb"),
         "--manifest", &fx.p("manifest.csv"), "--classes", &fx.p("classes.txt"), "--output", &fx.p("a.tfa"),
         "--epochs", "2", "--report", &fx.p("rep.jsonl")]);
    let text = std::fs::read_to_string(fx.p("rep.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let kinds: Vec<&str> = records.iter().map(|r| r["record"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["init", "epoch", "epoch", "eval", "eval"]);
}
