use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cfplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfplan")).current_dir(root()).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn trace(cfg: &str, dir: &Path) -> String {
    let out = dir.join(format!("{}.jsonl", Path::new(cfg).file_stem().unwrap().to_str().unwrap()));
    stdout(&cfplan(&["run", cfg, "--out", out.to_str().unwrap()]));
    out.to_str().unwrap().to_string()
}

#[test]
fn infer_prints_exact_and_decimal() {
    let s = stdout(&cfplan(&["infer", "envs/dice_f.cid", "--event", "S = 12"]));
    assert!(s.starts_with("1/36 ~ 2.77"), "{s}");
    let s = stdout(&cfplan(&["infer", "envs/dice_c.cid", "--event", "S = 7", "--given", "X = 1"]));
    assert!(s.starts_with("1 ~"), "{s}");
}

#[test]
fn solve_reports_policy_and_cap() {
    let s = stdout(&cfplan(&["solve", "envs/myopia.cid"]));
    assert!(s.contains("pi(0) = invest"), "{s}");
    let o = cfplan(&["solve", "envs/paperclip.cid", "--steps", "6", "--cap", "10"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn indiff_on_counterfactual_world() {
    let s = stdout(&cfplan(&["indiff", "envs/worlds/paperclip_ci.cid", "--node", "I_1", "--steps", "2"]));
    assert!(s.contains("on_path_to_value false") && s.contains("numeric passed"), "{s}");
    let s = stdout(&cfplan(&["indiff", "envs/worlds/paperclip_fi.cid", "--node", "I_1", "--steps", "2"]));
    assert!(s.contains("numeric failed"), "{s}");
}

#[test]
fn transform_script_applies() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("six.ct");
    std::fs::write(&script, "label c2;\nset Y const 6;\n").unwrap();
    let s = stdout(&cfplan(&["transform", "envs/dice_f.cid", "--script", script.to_str().unwrap()]));
    assert!(s.contains("diagram c2") && s.contains("ann=const 6"), "{s}");
}

#[test]
fn run_writes_trace_and_bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = trace("configs/stop_button_si.toml", dir.path());
    let text = std::fs::read_to_string(path).unwrap();
    let modes: Vec<String> = text
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["mode"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(modes, ["go", "go", "go", "stop", "stop", "stop"]);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "ticks = 3\n[env]\nname = \"nowhere\"\n[agent]\nkind = \"FP\"\n").unwrap();
    assert_eq!(cfplan(&["run", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(cfplan(&["run", "configs/missing.toml"]).status.code(), Some(2));
}

#[test]
fn compare_finds_first_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let itf = trace("configs/paperclip_itf.toml", dir.path());
    let itc = trace("configs/paperclip_itc.toml", dir.path());
    let s = stdout(&cfplan(&["compare", &itf, &itc]));
    assert!(s.starts_with("first divergence at t=0"), "{s}");
    assert!(s.contains("\"A_huge\" vs \"A_clips\""), "{s}");

    let sth = trace("configs/myopia_sth.toml", dir.path());
    let fp = trace("configs/myopia_fp.toml", dir.path());
    let s = stdout(&cfplan(&["compare", &sth, &fp]));
    assert!(s.contains("t=0") && s.contains("\"greedy\" vs \"invest\""), "{s}");

    assert!(stdout(&cfplan(&["compare", &itf, &itf])).starts_with("no divergence"));
}

#[test]
fn env_export_matches_shipped_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    stdout(&cfplan(&["env", "export", "factory", "--dir", d]));
    for ext in ["cid", "toml"] {
        let a = std::fs::read_to_string(dir.path().join(format!("factory.{ext}"))).unwrap();
        let b = std::fs::read_to_string(root().join(format!("envs/factory.{ext}"))).unwrap();
        assert_eq!(a, b);
    }
    stdout(&cfplan(&["env", "export", "factory", "--dir", d, "--param", "beta=0"]));
    assert_ne!(std::fs::read_to_string(dir.path().join("factory.cid")).unwrap(), std::fs::read_to_string(root().join("envs/factory.cid")).unwrap());
    assert_eq!(cfplan(&["env", "export", "factory", "--dir", d, "--param", "nope=1"]).status.code(), Some(2));
}
