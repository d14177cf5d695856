use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn mipsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mipsim")).args(args).output().unwrap()
}

fn mipsim_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_mipsim"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn scratch(name: &str, text: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("exit_status");
    fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn minimal_scenario_succeeds() {
    let o = mipsim(&["run", scenarios().join("minimal.scn").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).lines().all(|l| l.split('\t').nth(1) == Some("NOTE")));
}

#[test]
fn happy_path_expectation_succeeds() {
    let o = mipsim(&["run", scenarios().join("registration.scn").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("RRP\tfa->mn\tcode=0"));
}

#[test]
fn trace_file_matches_golden() {
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("triangle.trace");
    let src = scenarios().join("triangle.scn");
    let o = mipsim(&["run", src.to_str().unwrap(), "--trace", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    assert_eq!(fs::read(&out).unwrap(), fs::read(scenarios().join("triangle.trace")).unwrap());
}

#[test]
fn failed_expectation_exits_one() {
    let text = fs::read_to_string(scenarios().join("registration.scn")).unwrap() + "expect rrp code=133\n";
    let o = mipsim(&["run", scratch("fail.scn", &text).to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("FAILED"));
}

#[test]
fn malformed_sa_exits_two_with_line() {
    let text = "subnet a\nnode x HA addr=10.0.0.1 subnet=a\nnode y FA addr=10.0.0.2 subnet=a\nsa x y spi=256 alg=hmac-md5 key=zz replay=none\n";
    let o = mipsim(&["run", scratch("bad.scn", text).to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":4:"), "{}", stderr(&o));
}

#[test]
fn missing_file_exits_two() {
    assert_eq!(mipsim(&["run", "/nonexistent/x.scn"]).status.code(), Some(2));
    assert_eq!(mipsim(&["dissect", "/nonexistent/x.hex"]).status.code(), Some(2));
}

#[test]
fn dissect_from_stdin() {
    let zero = format!("01{}", "00".repeat(23));
    let o = mipsim_stdin(&["dissect", "-"], &zero);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("type=RRQ length=24 flags=- lifetime=0"));
    assert_eq!(mipsim_stdin(&["dissect", "-"], "01 02").status.code(), Some(2));
    assert_eq!(mipsim_stdin(&["dissect", "-"], "xyz").status.code(), Some(2));
}

#[test]
fn dissect_with_keys() {
    let keys = scratch(
        "keys",
        "sa 10.0.1.5 10.0.1.1 spi=256 alg=hmac-md5 key=000102030405060708090a0b0c0d0e0f replay=none\n",
    );
    let zero = scratch("zero.hex", &format!("01{}", "00".repeat(23)));
    let o = mipsim(&["dissect", zero.to_str().unwrap(), "--keys", keys.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let bad_keys = scratch("bad_keys", "sa a b spi=1\n");
    let o = mipsim(&["dissect", zero.to_str().unwrap(), "--keys", bad_keys.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn keygen_output() {
    let a = mipsim(&["keygen", "--seed", "7"]);
    assert_eq!(a.status.code(), Some(0));
    let key = stdout(&a).trim().to_string();
    assert_eq!(key.len(), 32);
    assert!(key.chars().all(|c| c.is_ascii_hexdigit()));
    assert_eq!(stdout(&mipsim(&["keygen", "--seed", "7"])).trim(), key);
    assert_eq!(stdout(&mipsim(&["keygen"])).trim().len(), 32);
}

#[test]
fn selftest_passes() {
    let o = mipsim(&["selftest", "--trials", "1000", "--seed", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("mean=0.500617"));
    assert!(stdout(&o).contains("result=pass"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(mipsim(&[]).status.code(), Some(2));
    assert_eq!(mipsim(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(mipsim(&["selftest", "--trials", "many"]).status.code(), Some(2));
    assert_eq!(mipsim(&["selftest", "--trials", "0"]).status.code(), Some(2));
    assert_eq!(mipsim(&["--help"]).status.code(), Some(0));
}
