use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_cake");

fn cake(home: &Path, seed: Option<u64>, args: &[&str]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.arg("--home").arg(home).args(args).env_remove("CAKE_HOME").env_remove("CAKE_SEED");
    if let Some(seed) = seed {
        cmd.arg("--seed").arg(seed.to_string());
    }
    cmd.current_dir(home.parent().unwrap()).output().unwrap()
}

fn ok(out: Output) -> String {
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "exit {:?}\nstdout:\n{stdout}\nstderr:\n{}", out.status, String::from_utf8_lossy(&out.stderr));
    stdout
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// Compares with a checked-in file; `UPDATE_GOLDEN=1` rewrites it.
fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "output differs from {}", path.display());
}

struct Fixture {
    _dir: tempfile::TempDir,
    home: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let home = dir.path().join("home");
        ok(cake(&home, Some(1), &["init"]));
        Self { _dir: dir, home }
    }

    fn run(&self, args: &[&str]) -> Output {
        cake(&self.home, None, args)
    }

    fn file(&self, name: &str, contents: &str) -> PathBuf {
        let path = self.home.parent().unwrap().join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    fn out(&self, name: &str) -> PathBuf {
        self.home.parent().unwrap().join(name)
    }
}

const BOM: &str = r#"[
  {"plaintext": "shared terms", "policy": "14548487 and (Manufacturer or Supplier)"},
  {"plaintext": "electronic parts", "policy": "14548487 and (Manufacturer or (Supplier and Electronics))"},
  {"plaintext_b64": "AAEC/w==", "policy": "14548487 and (Manufacturer or (Supplier and Mechanics))"}
]"#;

#[test]
fn fresh_ledger_inspect_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let home = dir.path().join("home");
    ok(cake(&home, Some(1), &["init"]));
    golden("ledger_fresh.txt", &ok(cake(&home, None, &["ledger", "inspect"])));
}

#[test]
fn drone_scenario_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let home = dir.path().join("unused");
    let first = ok(cake(&home, Some(42), &["scenario", "run"]));
    golden("scenario_drone.txt", &first);
    assert!(first.ends_with("PASS\n"));
}

#[test]
fn owner_and_reader_round_trip() {
    let f = Fixture::new();
    ok(f.run(&["account", "new", "manufacturer"]));
    let supplier = ok(f.run(&["account", "new", "electronics"])).trim().to_string();
    ok(f.run(&["certifier", "set-attrs", &supplier, "14548487", "Supplier", "Electronics"]));
    let listing = ok(f.run(&["account", "list"]));
    assert!(listing.contains("electronics") && listing.contains(&supplier));

    let slices = f.file("bom.json", BOM);
    let id = ok(f.run(&["owner", "send", "--as", "manufacturer", "--file", slices.to_str().unwrap()])).trim().to_string();
    id.parse::<u64>().unwrap();

    let key = f.out("e.key.json");
    let out = ok(f.run(&["reader", "key", "--as", "electronics", &id, "--out", key.to_str().unwrap()]));
    assert!(out.contains("locator Qm"));

    let recovered = f.out("e.slices.json");
    let out = ok(f.run(&[
        "reader",
        "access",
        "--as",
        "electronics",
        &id,
        "--key",
        key.to_str().unwrap(),
        "--out",
        recovered.to_str().unwrap(),
    ]));
    assert_eq!(out.matches("integrity ok").count(), 2, "{out}");
    assert!(out.contains("slice 1 (") && out.contains("slice 2 (") && !out.contains("slice 3 ("));
    let text = std::fs::read_to_string(&recovered).unwrap();
    assert!(text.contains("shared terms") && text.contains("electronic parts") && !text.contains("AAEC"));

    let ledger = ok(f.run(&["ledger", "inspect", "--eth-eur", "2000"]));
    assert!(ledger.contains("readers (1)") && ledger.contains("messages (1)") && ledger.contains("receipts (2)"));
    assert!(ledger.contains("Supplier, Electronics"));
    assert!(ledger.contains(&id));
}

#[test]
fn exit_codes_follow_error_kinds() {
    let f = Fixture::new();
    ok(f.run(&["account", "new", "owner"]));
    ok(f.run(&["account", "new", "mechanics"]));
    ok(f.run(&["account", "new", "stranger"]));
    ok(f.run(&["certifier", "set-attrs", "mechanics", "14548487", "Supplier", "Mechanics"]));

    let bad = f.file("bad.json", r#"[{"plaintext": "x", "policy": "Supplier and"}]"#);
    let out = f.run(&["owner", "send", "--as", "owner", "--file", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("slice 1"));

    let only_electronics = f.file("e.json", r#"[{"plaintext": "pcb", "policy": "Supplier and Electronics"}]"#);
    let id = ok(f.run(&["owner", "send", "--as", "owner", "--file", only_electronics.to_str().unwrap()])).trim().to_string();
    let key = f.out("m.key.json");
    ok(f.run(&["reader", "key", "--as", "mechanics", &id, "--out", key.to_str().unwrap()]));
    let out = f.run(&["reader", "access", "--as", "mechanics", &id, "--key", key.to_str().unwrap()]);
    assert_eq!(code(&out), 3);

    assert_eq!(code(&f.run(&["reader", "key", "--as", "stranger", &id])), 6);
    assert_eq!(code(&f.run(&["reader", "key", "--as", "mechanics", "12345"])), 6);
    assert_eq!(code(&f.run(&["reader", "key", "--as", "nobody", &id])), 6);
    assert_eq!(code(&f.run(&["certifier", "set-attrs", "mechanics", "Pilot"])), 2);
    assert_eq!(code(&f.run(&["frobnicate"])), 2);
    assert_eq!(code(&f.run(&["init"])), 2);

    let payloadless = f.file("none.json", r#"[{"policy": "Supplier"}]"#);
    assert_eq!(code(&f.run(&["owner", "send", "--as", "owner", "--file", payloadless.to_str().unwrap()])), 2);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn_server(home: &Path, role: &str) -> (Server, String) {
    let mut child = Command::new(BIN)
        .arg("--home")
        .arg(home)
        .args(["serve", role, "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit(' ').next().unwrap().to_string();
    (Server(child), addr)
}

#[test]
fn commands_work_against_served_managers() {
    let f = Fixture::new();
    ok(f.run(&["account", "new", "manufacturer"]));
    ok(f.run(&["account", "new", "mechanics"]));
    ok(f.run(&["certifier", "set-attrs", "mechanics", "14548487", "Supplier", "Mechanics"]));
    let (_sdm, sdm_addr) = spawn_server(&f.home, "sdm");
    let (_skm, skm_addr) = spawn_server(&f.home, "skm");

    let slices = f.file("bom.json", BOM);
    let id = ok(f.run(&["owner", "send", "--as", "manufacturer", "--connect", &sdm_addr, "--file", slices.to_str().unwrap()]))
        .trim()
        .to_string();
    let key = f.out("m.key.json");
    ok(f.run(&["reader", "key", "--as", "mechanics", "--connect", &skm_addr, &id, "--out", key.to_str().unwrap()]));
    let recovered = f.out("m.slices.json");
    let out = ok(f.run(&[
        "reader",
        "access",
        "--as",
        "mechanics",
        "--connect",
        &skm_addr,
        &id,
        "--key",
        key.to_str().unwrap(),
        "--out",
        recovered.to_str().unwrap(),
    ]));
    assert!(out.contains("slice 1 (") && !out.contains("slice 2 (") && out.contains("slice 3 ("), "{out}");
    let text = std::fs::read_to_string(&recovered).unwrap();
    assert!(text.contains("\"plaintext_b64\": \"AAEC/w==\""));
}
