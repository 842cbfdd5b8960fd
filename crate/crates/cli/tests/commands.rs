use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use soapbridge::store::{catalog_path, load_catalog, ProcKind};

const BIN: &str = env!("CARGO_BIN_EXE_soapbridge");

fn soapbridge(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("SOAPBRIDGE_CONFIG")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited by signal")
}

fn stdout_lines(o: &Output) -> Vec<String> {
    String::from_utf8(o.stdout.clone())
        .unwrap()
        .lines()
        .map(String::from)
        .collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn seed(dir: &Path, fixture: &str) {
    let o = soapbridge(&["db-seed", "--catalog-dir", dir.to_str().unwrap(), "--fixture", fixture]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn write_config(dir: &Path, extra_folder: &str) -> PathBuf {
    let path = dir.join("host.conf");
    std::fs::write(
        &path,
        format!(
            "# test host\nbind = 127.0.0.1:0\ncatalog_dir = cat\n\n[folder \"/OracleWebService\"]\nservice = Service.asmx employee\n{extra_folder}"
        ),
    )
    .unwrap();
    path
}

struct Serving {
    child: Child,
    addr: String,
    log: Arc<Mutex<Vec<String>>>,
}

impl Serving {
    fn start(config: &Path, extra: &[&str]) -> Serving {
        let mut child = Command::new(BIN)
            .arg("serve")
            .arg("--config")
            .arg(config)
            .args(extra)
            .env_remove("SOAPBRIDGE_CONFIG")
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
        let first = lines.next().unwrap().unwrap();
        let addr = first
            .strip_prefix("listening on http://")
            .unwrap_or_else(|| panic!("unexpected first line: {first}"))
            .to_owned();
        let log = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&log);
        std::thread::spawn(move || {
            for l in lines.map_while(Result::ok) {
                sink.lock().unwrap().push(l);
            }
        });
        Serving { child, addr, log }
    }

    fn url(&self) -> String {
        format!("http://{}/OracleWebService/Service.asmx", self.addr)
    }

    fn log_lines(&self, prefix: &str) -> usize {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|l| l.starts_with(prefix))
            .count()
    }

    fn interrupt(mut self) -> i32 {
        let pid = self.child.id().to_string();
        assert!(Command::new("kill").args(["-INT", &pid]).status().unwrap().success());
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            if let Some(status) = self.child.try_wait().unwrap() {
                return status.code().expect("exited by signal");
            }
            assert!(Instant::now() < deadline, "serve ignored SIGINT");
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

impl Drop for Serving {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn served(fixture: &str) -> (tempfile::TempDir, Serving) {
    let dir = tempfile::tempdir().unwrap();
    seed(&dir.path().join("cat"), fixture);
    let cfg = write_config(dir.path(), "");
    let s = Serving::start(&cfg, &[]);
    (dir, s)
}

fn call(url: &str, op: &str, args: &[&str]) -> Output {
    let mut argv = vec!["call", "--url", url, "--op", op];
    for a in args {
        argv.extend(["--arg", a]);
    }
    soapbridge(&argv)
}

#[test]
fn db_seed_is_byte_identical_and_loads_back() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    seed(a.path(), "default");
    seed(b.path(), "default");
    let pa = catalog_path(a.path(), "XE");
    let first = std::fs::read(&pa).unwrap();
    assert_eq!(first, std::fs::read(catalog_path(b.path(), "XE")).unwrap());
    seed(a.path(), "default");
    assert_eq!(first, std::fs::read(&pa).unwrap());

    let cat = load_catalog(&pa).unwrap();
    assert_eq!(cat.table("EMPLOYEES").unwrap().rows().len(), 3);
    let procs: Vec<_> = cat.packages().flat_map(|(_, p)| p.iter()).collect();
    assert_eq!(procs.len(), 5);
    assert!(procs.iter().any(|p| matches!(p.kind, ProcKind::Count { .. })));
    assert!(cat.authenticate("csharp", "csharp"));

    seed(a.path(), "empty");
    assert!(load_catalog(&pa).unwrap().table("EMPLOYEES").unwrap().rows().is_empty());
}

#[test]
fn db_seed_into_unwritable_location_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    let o = soapbridge(&[
        "db-seed",
        "--catalog-dir",
        file.join("sub").to_str().unwrap(),
        "--fixture",
        "default",
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("plain"), "{}", stderr(&o));
    let o = soapbridge(&[
        "db-seed",
        "--catalog-dir",
        dir.path().to_str().unwrap(),
        "--fixture",
        "other",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn describe_is_golden_and_stable() {
    let (_dir, srv) = served("default");
    let a = soapbridge(&["describe", "--url", &srv.url()]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(
        stdout_lines(&a),
        [
            "AddEmployee(last_name:string, first_name:string, job:string, salary:double) -> int",
            "CountEmployees() -> int",
            "DeleteEmployee(id:int) -> boolean",
            "GetEmployeeById(id:int) -> Employee",
            "GetEmployeesData() -> list<string>",
        ]
    );
    let b = soapbridge(&["describe", "--url", &srv.url()]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn call_prints_rows_records_and_scalars() {
    let (_dir, srv) = served("default");
    let url = srv.url();
    let rows = call(&url, "GetEmployeesData", &[]);
    assert_eq!(code(&rows), 0, "{}", stderr(&rows));
    let lines = stdout_lines(&rows);
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l.matches('|').count() == 4));
    assert_eq!(lines[0], "1|KING|ADA|PRESIDENT|5000");

    let rec = call(&url, "GetEmployeeById", &["id=2"]);
    assert_eq!(
        stdout_lines(&rec),
        [
            "id=2",
            "last_name=BLAKE",
            "first_name=ROBERT",
            "job=MANAGER",
            "salary=2850"
        ]
    );

    let add = call(
        &url,
        "AddEmployee",
        &["last_name=NEW", "first_name=N", "job=J", "salary=1e3"],
    );
    assert_eq!(stdout_lines(&add), ["4"]);
    assert_eq!(stdout_lines(&call(&url, "DeleteEmployee", &["id=1"])), ["true"]);
    assert_eq!(stdout_lines(&call(&url, "DeleteEmployee", &["id=1"])), ["false"]);
    assert_eq!(stdout_lines(&call(&url, "CountEmployees", &[])), ["3"]);
}

#[test]
fn count_on_empty_catalog_is_zero() {
    let (_dir, srv) = served("empty");
    let o = call(&srv.url(), "CountEmployees", &[]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_lines(&o), ["0"]);
}

#[test]
fn bad_arguments_are_exit_2_without_a_call() {
    let (_dir, srv) = served("default");
    let url = srv.url();
    for (op, args) in [
        ("GetEmployeeById", vec!["id=abc"]),
        ("GetEmployeeById", vec![]),
        ("GetEmployeeById", vec!["id=1", "extra=2"]),
        (
            "AddEmployee",
            vec!["last_name=A", "first_name=B", "job=C", "salary=lots"],
        ),
        ("NoSuchOp", vec![]),
    ] {
        let o = call(&url, op, &args);
        assert_eq!(code(&o), 2, "{op} {args:?}: {}", stderr(&o));
    }
    // Wait for the access log to catch up with the WSDL fetches.
    let deadline = Instant::now() + Duration::from_secs(5);
    while srv.log_lines("GET ") < 5 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(10));
    }
    assert_eq!(srv.log_lines("GET "), 5);
    assert_eq!(srv.log_lines("POST "), 0);
}

#[test]
fn faults_are_exit_5_with_the_fault_string() {
    let (_dir, srv) = served("default");
    let o = call(&srv.url(), "GetEmployeeById", &["id=99"]);
    assert_eq!(code(&o), 5);
    assert!(stderr(&o).contains("99"), "{}", stderr(&o));
    let o = call(
        &srv.url(),
        "AddEmployee",
        &["last_name= ", "first_name=B", "job=C", "salary=1"],
    );
    assert_eq!(code(&o), 5);
    assert!(stdout_lines(&o).is_empty());
}

#[test]
fn transport_failures_are_exit_4() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let closed = format!("http://127.0.0.1:{port}/OracleWebService/Service.asmx");
    for url in [closed.as_str(), "not a url", "ftp://localhost/x"] {
        assert_eq!(code(&soapbridge(&["describe", "--url", url])), 4, "{url}");
        assert_eq!(code(&call(url, "CountEmployees", &[])), 4, "{url}");
    }
    let (_dir, srv) = served("default");
    let missing = srv.url().replace("Service.asmx", "Missing.asmx");
    assert_eq!(code(&soapbridge(&["describe", "--url", &missing])), 4);
}

#[test]
fn serve_logs_requests_and_stops_on_interrupt() {
    let (_dir, srv) = served("default");
    assert_eq!(code(&call(&srv.url(), "CountEmployees", &[])), 0);
    let deadline = Instant::now() + Duration::from_secs(5);
    while srv.log_lines("POST ") < 1 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(10));
    }
    let line = srv
        .log
        .lock()
        .unwrap()
        .iter()
        .find(|l| l.starts_with("POST "))
        .cloned()
        .unwrap();
    let parts: Vec<&str> = line.split(' ').collect();
    assert_eq!(parts[..3], ["POST", "/OracleWebService/Service.asmx", "200"]);
    assert!(parts[3].ends_with("ms"));
    assert_eq!(srv.interrupt(), 0);
}

#[test]
fn mutations_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    seed(&dir.path().join("cat"), "default");
    let cfg = write_config(dir.path(), "");
    let srv = Serving::start(&cfg, &[]);
    let add = call(
        &srv.url(),
        "AddEmployee",
        &["last_name=KEPT", "first_name=K", "job=J", "salary=1"],
    );
    assert_eq!(stdout_lines(&add), ["4"]);
    assert_eq!(srv.interrupt(), 0);
    let srv = Serving::start(&cfg, &[]);
    assert_eq!(stdout_lines(&call(&srv.url(), "CountEmployees", &[])), ["4"]);
    assert_eq!(
        stdout_lines(&call(&srv.url(), "GetEmployeeById", &["id=4"]))[1],
        "last_name=KEPT"
    );
}

#[test]
fn serve_config_errors_are_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");

    let o = soapbridge(&["serve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains(&catalog_path(&dir.path().join("cat"), "XE").display().to_string()),
        "{}",
        stderr(&o)
    );

    let o = soapbridge(&["serve"]);
    assert_eq!(code(&o), 2);
    let o = soapbridge(&["serve", "--config", dir.path().join("nope.conf").to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "bind = 127.0.0.1:0\n[folder \"/a\"]\nservice = S.asmx ledger\n").unwrap();
    let o = soapbridge(&["serve", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let empty = dir.path().join("empty.conf");
    std::fs::write(&empty, "bind = 127.0.0.1:0\n").unwrap();
    assert_eq!(code(&soapbridge(&["serve", "--config", empty.to_str().unwrap()])), 2);

    seed(&dir.path().join("cat"), "default");
    let wrong_pw = dir.path().join("pw.conf");
    std::fs::write(
        &wrong_pw,
        "bind = 127.0.0.1:0\ncatalog_dir = cat\nconnection = User Id=csharp;password=nope;Data Source=XE;\n[folder \"/a\"]\nservice = S.asmx employee\n",
    )
    .unwrap();
    assert_eq!(code(&soapbridge(&["serve", "--config", wrong_pw.to_str().unwrap()])), 2);

    assert_eq!(code(&soapbridge(&[])), 2);
    assert_eq!(code(&soapbridge(&["frobnicate"])), 2);
    assert_eq!(code(&soapbridge(&["--help"])), 0);
}

#[test]
fn config_path_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let other = tempfile::tempdir().unwrap();
    seed(&other.path().join("elsewhere"), "empty");
    let cfg = write_config(dir.path(), "");
    let mut child = Command::new(BIN)
        .args([
            "serve",
            "--catalog-dir",
            other.path().join("elsewhere").to_str().unwrap(),
        ])
        .env("SOAPBRIDGE_CONFIG", &cfg)
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stderr.take().unwrap())
        .read_line(&mut first)
        .unwrap();
    let addr = first.trim().strip_prefix("listening on http://").unwrap().to_owned();
    let url = format!("http://{addr}/OracleWebService/Service.asmx");
    assert_eq!(stdout_lines(&call(&url, "CountEmployees", &[])), ["0"]);
    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn second_bind_on_a_port_is_exit_3() {
    let (dir, srv) = served("default");
    let o = soapbridge(&[
        "serve",
        "--config",
        dir.path().join("host.conf").to_str().unwrap(),
        "--bind",
        &srv.addr,
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = soapbridge(&[
        "serve",
        "--config",
        dir.path().join("host.conf").to_str().unwrap(),
        "--bind",
        "no-such-host.invalid:99999",
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn permissions_from_config() {
    let dir = tempfile::tempdir().unwrap();
    seed(&dir.path().join("cat"), "default");
    let cfg = write_config(
        dir.path(),
        "\n[folder \"/Locked\"]\nread = true\nexecute = false\nservice = Service.asmx employee\n",
    );
    let srv = Serving::start(&cfg, &[]);
    let locked = format!("http://{}/Locked/Service.asmx", srv.addr);
    assert_eq!(code(&soapbridge(&["describe", "--url", &locked])), 0);
    assert_eq!(code(&call(&locked, "CountEmployees", &[])), 4);
    assert_eq!(stdout_lines(&call(&srv.url(), "CountEmployees", &[])), ["3"]);
}
