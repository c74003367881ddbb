use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
epochs = 2
batch_size = 4
backbone.input_size = 12
backbone.stages = 2:3:2
backbone.feature_dim = 4
depth_attention.tokens = 2
depth_attention.d_model = 2
depth_attention.heads = 1
fusion_attention.tokens = 2
fusion_attention.d_model = 2
fusion_attention.heads = 1
ps.input_length = 64
ps.grouped_blocks = 3:1 5:2
ps.mixed_blocks = 3:2
ps.feature_dim = 4
";

fn psme(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psme")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Three subjects of 12×12 clips plus a tiny config file.
fn fixture(root: &Path) -> (String, String) {
    let data = root.join("data");
    let o = psme(&["synth", "--out", s(&data), "--subjects", "3", "--per-subject", "3", "--classes", "2", "--seed", "7", "--size", "12"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("9 samples, 3 subjects, 2 classes, seed 7"));
    let cfg = root.join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    (s(&data).to_string(), s(&cfg).to_string())
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(psme(&["synth", "--bogus"]).status.code(), Some(2));
    assert_eq!(psme(&[]).status.code(), Some(2));
    assert_eq!(psme(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs = 3\nlearning_rate = 1\n").unwrap();
    let o = psme(&["eval-loso", "--data", "nowhere", "--config", s(&cfg), "--report", "out"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `learning_rate`"));
    assert_eq!(psme(&["synth", "--out", s(dir.path()), "--subjects", "1"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_1() {
    let o = psme(&["eval-loso", "--data", "/definitely/not/here", "--report", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn synth_layout() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path());
    let data = Path::new(&data);
    assert!(data.join("meta.csv").is_file());
    let dirs = fs::read_dir(data).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(dirs, 9);
    for f in ["colour.ten", "depth.ten", "ps.csv"] {
        assert!(data.join("s02_02").join(f).is_file(), "{}", f);
    }
}

#[test]
fn denoise_keeps_schema_and_reports_snr() {
    let dir = tempfile::tempdir().unwrap();
    let n = 512;
    let mut clean = String::from("t,eda,ecg,ppg\n");
    let mut noisy = clean.clone();
    let mut state = 1u64;
    for i in 0..n {
        let t = i as f64 / 100.0;
        let x = (std::f64::consts::TAU * 2.0 * t).sin();
        let mut e = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.7
        };
        clean.push_str(&format!("{},{},{},{}\n", t, x, x, x));
        noisy.push_str(&format!("{},{},{},{}\n", t, x + e(), x + e(), x + e()));
    }
    let (c, i, o) = (dir.path().join("clean.csv"), dir.path().join("in.csv"), dir.path().join("out.csv"));
    fs::write(&c, clean).unwrap();
    fs::write(&i, noisy).unwrap();
    let out = psme(&["denoise", "--in", s(&i), "--out", s(&o), "--wavelet", "db4", "--levels", "4", "--clean", s(&c)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    for ch in ["eda", "ecg", "ppg"] {
        let line = text.lines().find(|l| l.starts_with(ch)).unwrap();
        let delta: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
        assert!(delta > 1.0, "{}", line);
    }
    let written = fs::read_to_string(&o).unwrap();
    assert!(written.starts_with("t,eda,ecg,ppg\n0,"));
    assert_eq!(written.lines().count(), n + 1);
    assert_eq!(psme(&["denoise", "--in", s(&i), "--out", s(&o), "--wavelet", "sym4"]).status.code(), Some(2));
}

#[test]
fn train_writes_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path());
    let ck = dir.path().join("ck");
    let o = psme(&["train", "--data", &data, "--config", &cfg, "--hold-out-subject", "sub01", "--out", s(&ck), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let loaded = psme::checkpoint::load(&ck).unwrap();
    assert_eq!(loaded.loss_log.len(), 2);
    assert_eq!(loaded.config.model.seed, 3);
    assert_eq!(loaded.config.model.num_classes, 2);
    let o = psme(&["train", "--data", &data, "--config", &cfg, "--hold-out-subject", "nobody", "--out", s(&ck)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_loso_single_arm_and_ablation_table() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path());
    let rep = dir.path().join("rep");
    let o = psme(&["eval-loso", "--data", &data, "--config", &cfg, "--report", s(&rep), "--arms", "colour", "--fusion", "uniform", "--jobs", "2", "--seed", "11"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("predictions.csv"));
    let text = fs::read_to_string(rep.join("report.txt")).unwrap();
    assert!(text.starts_with("seed = 11\narm = colour\nfusion = guided\nweighting = uniform\n"), "{}", text);
    assert!(text.contains("[confusion]") && text.contains("folds = 3"));
    let csv = fs::read_to_string(rep.join("predictions.csv")).unwrap();
    assert!(csv.starts_with("sample_id,subject,true,pred,p_0,p_1,seed\n"));
    assert_eq!(csv.lines().count(), 10);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",11")));

    let all = dir.path().join("all");
    let o = psme(&["eval-loso", "--data", &data, "--config", &cfg, "--report", s(&all), "--arms", "all", "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(all.join("ablations.csv")).unwrap();
    assert_eq!(table.lines().count(), 9);
    assert!(fs::read_to_string(all.join("report.txt")).unwrap().contains("not reproducible without CAS(ME)^3"));
    assert!(all.join("fusion-colour+depth+ps-concat/predictions.csv").is_file());
    assert_eq!(psme(&["eval-loso", "--data", &data, "--report", s(&all), "--arms", "voice"]).status.code(), Some(2));
}

#[test]
fn gradcheck_command_passes() {
    let o = psme(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("full_model"));
}
