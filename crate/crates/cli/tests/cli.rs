use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::sync::Arc;

fn perfest(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perfest")).args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = perfest(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--n", "30", "--seed", "7", "--out", "a.csv"], dir.path());
    ok(&["gen", "--n", "30", "--seed", "7", "--out", "b.csv"], dir.path());
    ok(&["gen", "--n", "30", "--seed", "8", "--out", "c.csv"], dir.path());
    let p = dir.path();
    assert_eq!(read(p.join("a.csv")), read(p.join("b.csv")));
    assert_eq!(read(p.join("a.profile")), read(p.join("b.profile")));
    assert_eq!(read(p.join("a.truth.csv")), read(p.join("b.truth.csv")));
    assert_ne!(read(p.join("a.csv")), read(p.join("c.csv")));
    assert_eq!(read(p.join("a.csv")).lines().count(), 1 + 30 * 40);
}

#[test]
fn gen_with_population_and_profile_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("pop.kv"), "groups=slow\nslow.kind=asymptotic\nslow.weight=1\nslow.a=50,60\n").unwrap();
    std::fs::write(p.join("skew.kv"), "name=skew\nnum_classes=2\nclass_fractions=0.3,0.7\nE=1\ne_full=10\n").unwrap();
    ok(&["gen", "--n", "4", "--population", "pop.kv", "--profile", "skew.kv", "--out", "c.csv"], p);
    let profile = read(p.join("c.profile"));
    assert!(profile.contains("balanced=false") && profile.contains("E=1\n"));
    assert_eq!(read(p.join("c.csv")).lines().count(), 1 + 4 * 10);
    // loss check follows the unbalanced profile
    ok(&["replay", "--corpus", "c.csv", "--out", "o.csv"], p);
    assert_eq!(read(p.join("o.csv")).lines().count(), 5);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["gen", "--n", "3", "--out", "c.csv"], p);
    assert_eq!(perfest(&["replay", "--corpus", "missing.csv"], p).status.code(), Some(2));
    assert_eq!(perfest(&["replay", "--corpus", "c.csv", "--set", "t=0"], p).status.code(), Some(2));
    assert_eq!(perfest(&["replay", "--corpus", "c.csv", "--set", "nonsense"], p).status.code(), Some(2));
    assert_eq!(perfest(&["serve", "--transport", "pigeon"], p).status.code(), Some(2));
    assert_eq!(perfest(&["gen", "--n", "3"], p).status.code(), Some(2));
    std::fs::write(p.join("bad.csv"), "model_id,epoch,val_acc,val_loss\nm,1,50,1\nm,0.5,50,1\n").unwrap();
    std::fs::copy(p.join("c.profile"), p.join("bad.profile")).unwrap();
    let out = perfest(&["baseline", "--corpus", "bad.csv"], p);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"m\""));
    // a directory where the output file should go is a runtime failure
    std::fs::create_dir(p.join("taken")).unwrap();
    assert_eq!(perfest(&["baseline", "--corpus", "c.csv", "--out", "taken"], p).status.code(), Some(1));
    let remote = perfest(&["replay", "--corpus", "c.csv", "--remote", "http://127.0.0.1:9"], p);
    assert_eq!(remote.status.code(), Some(1));
}

#[test]
fn fit_reports_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let pts: String = (1..=14).map(|x| format!("{x},{}\n", 85.0 - 1.5f64.powf(2.0 - x as f64))).collect();
    std::fs::write(p.join("p.csv"), format!("x,val_acc\n{pts}")).unwrap();
    let out = String::from_utf8(ok(&["fit", "--points", "p.csv"], p).stdout).unwrap();
    let a: f64 = out.lines().find_map(|l| l.strip_prefix("a=")).unwrap().parse().unwrap();
    assert!((a - 85.0).abs() < 1e-3, "{out}");
    assert!(out.contains("status=ok"));
    let out = String::from_utf8(ok(&["fit", "--points", "p.csv", "--box", "a_bounds=0.5,80"], p).stdout).unwrap();
    assert!(out.contains("a=80\n"), "{out}");
    assert_eq!(perfest(&["fit", "--points", "p.csv", "--box", "e_max=3"], p).status.code(), Some(2));
    std::fs::write(p.join("short.csv"), "1,2\n2,3\n").unwrap();
    assert_eq!(perfest(&["fit", "--points", "short.csv"], p).status.code(), Some(2));
}

#[test]
fn serve_stdio_ends_with_stop() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_perfest"))
        .args(["serve", "--transport", "stdio"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    {
        let stdin = child.stdin.as_mut().unwrap();
        for k in 1..=40 {
            // alternating values keep predictions moving, so only the horizon stops it
            let acc = if k % 2 == 0 { 20.0 + k as f64 } else { 5.0 };
            writeln!(stdin, r#"{{"model":"nn","epoch":{},"val_acc":{acc},"val_loss":1}}"#, 0.5 * k as f64).unwrap();
        }
    }
    drop(child.stdin.take());
    let out = child.wait_with_output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(text.lines().count(), 40);
    assert_eq!(last["action"], "stop");
    assert_eq!(last["stop_epoch"], 20.0);
}

#[test]
fn remote_replay_matches_local() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["gen", "--n", "20", "--seed", "3", "--out", "c.csv"], p);
    ok(&["replay", "--corpus", "c.csv", "--out", "local.csv"], p);

    let rt = tokio::runtime::Runtime::new().unwrap();
    // the server's own defaults differ; the client sends the full config
    let mut defaults = perfest_core::EngineConfig::default();
    defaults.analyzer.threshold = 3.0;
    let registry = Arc::new(perfest_core::SessionRegistry::new(defaults).unwrap());
    let listener = rt.block_on(perfest_server::bind("127.0.0.1:0")).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    rt.spawn(perfest_server::serve_http(listener, registry));

    ok(&["replay", "--corpus", "c.csv", "--remote", &url, "--out", "remote.csv"], p);
    assert_eq!(read(p.join("local.csv")), read(p.join("remote.csv")));
    // replaying again works because sessions are closed afterwards
    ok(&["replay", "--corpus", "c.csv", "--remote", &url, "--out", "remote2.csv"], p);
    assert_eq!(read(p.join("local.csv")), read(p.join("remote2.csv")));
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["gen", "--n", "10", "--seed", "1", "--out", "c.csv"], p);
    std::fs::write(p.join("strict.kv"), "# tighter window\nN=6\nt=0.1\n").unwrap();
    ok(&["replay", "--corpus", "c.csv", "--out", "default.csv"], p);
    ok(&["replay", "--corpus", "c.csv", "--config", "strict.kv", "--out", "strict.csv"], p);
    ok(&["replay", "--corpus", "c.csv", "--config", "strict.kv", "--set", "N=3", "--set", "t=0.5", "--out", "back.csv"], p);
    let stops = |f: &str| -> f64 {
        read(p.join(f)).lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum()
    };
    assert!(stops("strict.csv") > stops("default.csv"));
    assert_eq!(read(p.join("back.csv")), read(p.join("default.csv")));
}
