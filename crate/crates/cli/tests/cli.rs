//! Black-box tests of the `rawb` binary: argument plumbing, exit codes,
//! and the TCP demo paths.

use std::io::Write;
use std::net::TcpListener;
use std::process::{Child, Command, Stdio};

fn rawb() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rawb"))
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

fn wait_for_port(port: u16) {
    for _ in 0..100 {
        if std::net::TcpStream::connect(("127.0.0.1", port)).is_ok() {
            return;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    panic!("prover never came up on port {port}");
}

struct KillOnDrop(Child);

impl Drop for KillOnDrop {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn usage_errors_exit_3() {
    let status = rawb().arg("frobnicate").stderr(Stdio::null()).status().unwrap();
    assert_eq!(status.code(), Some(3));
    let status = rawb()
        .args(["check", "--spec", "99"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
    let status = rawb()
        .args(["scenario", "no-such-scenario"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn check_verifies_and_mutation_fails() {
    let out = rawb().arg("check").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for id in 2..=11 {
        assert!(stdout.contains(&format!("{id},verified")), "spec {id} missing:\n{stdout}");
    }

    let dir = tempfile::tempdir().unwrap();
    let out = rawb()
        .args(["check", "--mutate", "dma:drop-guard:1", "--spec", "9"])
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(dir.path().join("counterexample-spec09.txt").exists());
}

#[test]
fn simulate_then_replay_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let program = dir.path().join("p.asm");
    std::fs::write(&program, "NOP\nLOAD r4, 0x6A00\nHALT\n").unwrap();
    let trace = dir.path().join("t.csv");
    let out = rawb()
        .arg("simulate")
        .arg("--program")
        .arg(&program)
        .arg("--trace")
        .arg(&trace)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = rawb().arg("replay").arg("--trace").arg(&trace).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("replay ok"));
}

#[test]
fn tcp_prove_verify_accept_and_reject() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("key.bin");
    let image = dir.path().join("image.bin");
    let other = dir.path().join("other.bin");
    assert_eq!(
        rawb()
            .arg("keygen")
            .arg("--out")
            .arg(&key)
            .args(["--seed", "9"])
            .status()
            .unwrap()
            .code(),
        Some(0)
    );
    std::fs::write(&image, vec![0x51u8; 1024]).unwrap();
    std::fs::write(&other, vec![0x52u8; 1024]).unwrap();

    // Accepting round.
    let port = free_port();
    let server = KillOnDrop(
        rawb()
            .arg("prove")
            .args(["--listen", &format!("127.0.0.1:{port}"), "--once"])
            .arg("--key")
            .arg(&key)
            .arg("--image")
            .arg(&image)
            .stdout(Stdio::null())
            .spawn()
            .unwrap(),
    );
    wait_for_port(port);
    let status = rawb()
        .arg("verify")
        .args(["--connect", &format!("127.0.0.1:{port}"), "--seed", "1"])
        .arg("--key")
        .arg(&key)
        .arg("--image")
        .arg(&image)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    drop(server);

    // Mismatched image: reject, exit 2. Key comes from the environment.
    let port = free_port();
    let server = KillOnDrop(
        rawb()
            .arg("prove")
            .args(["--listen", &format!("127.0.0.1:{port}"), "--once"])
            .env("VRASED_KEY_FILE", &key)
            .arg("--image")
            .arg(&other)
            .stdout(Stdio::null())
            .spawn()
            .unwrap(),
    );
    wait_for_port(port);
    let status = rawb()
        .arg("verify")
        .args(["--connect", &format!("127.0.0.1:{port}"), "--seed", "1"])
        .env("VRASED_KEY_FILE", &key)
        .arg("--image")
        .arg(&image)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    drop(server);
}

#[test]
fn tcp_auth_round_with_replay_test() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("key.bin");
    let image = dir.path().join("image.bin");
    rawb()
        .arg("keygen")
        .arg("--out")
        .arg(&key)
        .args(["--seed", "10"])
        .status()
        .unwrap();
    std::fs::write(&image, vec![0x53u8; 512]).unwrap();

    let port = free_port();
    // The replay test needs two connections; serve until killed.
    let server = KillOnDrop(
        rawb()
            .arg("prove")
            .args(["--listen", &format!("127.0.0.1:{port}"), "--auth"])
            .arg("--key")
            .arg(&key)
            .arg("--image")
            .arg(&image)
            .stdout(Stdio::null())
            .spawn()
            .unwrap(),
    );
    wait_for_port(port);
    let out = rawb()
        .arg("verify")
        .args(["--connect", &format!("127.0.0.1:{port}"), "--auth", "--replay-test", "--seed", "2"])
        .arg("--key")
        .arg(&key)
        .arg("--image")
        .arg(&image)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Accept"), "{stdout}");
    assert!(stdout.contains("stale challenge rejected"), "{stdout}");
    assert_eq!(out.status.code(), Some(2));

    // Region-specified request against the same prover: attests a window
    // of the image (the default attested base is 0x4000).
    let status = rawb()
        .arg("verify")
        .args([
            "--connect",
            &format!("127.0.0.1:{port}"),
            "--auth",
            "--region",
            "0x4010:0x404F",
            "--seed",
            "3",
        ])
        .arg("--key")
        .arg(&key)
        .arg("--image")
        .arg(&image)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    drop(server);

    // Flush anything buffered so the kill is clean on slow machines.
    std::io::stdout().flush().ok();
}
