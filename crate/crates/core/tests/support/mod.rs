//! Seeded generators and independent oracles shared by the integration and
//! acceptance suites.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use soapbridge::contract::{OperationDescriptor, RecordDef, ServiceDescriptor, TypeRef};
use soapbridge::soap::{FaultCode, SoapEnvelope, SoapFault, Value};
use soapbridge::store::{Catalog, Cell, ColumnType, ProcKind, Procedure, Projection, Table};
use soapbridge::xml::{Element, QName, XmlNode};

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Text
// ---------------------------------------------------------------------------

const TEXT_PIECES: &[&str] = &[
    "a", "Z", "0", " ", "  ", "<", ">", "&", "\"", "'", "\t", "\n", "\r", "\r\n", "]]>", "&amp;", "é", "日本", "😀",
    "\\", "|", ";", "=", "!", "{", "}", "x y", "--", "?>",
];

pub fn random_text(rng: &mut TestRng, max_pieces: usize) -> String {
    let n = rng.random_range(0..=max_pieces);
    (0..n).map(|_| *TEXT_PIECES.choose(rng).unwrap()).collect()
}

const NAME_STARTS: &[&str] = &["a", "B", "_", "x", "é", "Item", "n", "日"];
const NAME_RESTS: &[&str] = &["", "1", "-", ".", "b", "_z", "Name", "9"];

pub fn random_ncname(rng: &mut TestRng) -> String {
    format!(
        "{}{}{}",
        NAME_STARTS.choose(rng).unwrap(),
        NAME_RESTS.choose(rng).unwrap(),
        NAME_RESTS.choose(rng).unwrap()
    )
}

const NAMESPACES: &[&str] = &[
    "",
    "urn:a",
    "urn:b:c",
    "http://example.org/ns",
    "http://example.org/ns?q=1&r=2",
];

// ---------------------------------------------------------------------------
// XML trees
// ---------------------------------------------------------------------------

pub fn random_tree(rng: &mut TestRng, depth: usize) -> Element {
    let ns = *NAMESPACES.choose(rng).unwrap();
    let mut e = Element::new(QName::new(ns, random_ncname(rng)));
    let mut used: Vec<QName> = Vec::new();
    for _ in 0..rng.random_range(0..4) {
        let ans = if rng.random_bool(0.7) {
            ""
        } else {
            *NAMESPACES.choose(rng).unwrap()
        };
        let name = QName::new(ans, random_ncname(rng));
        if !used.contains(&name) {
            used.push(name.clone());
            e.set_attribute(name, random_text(rng, 4));
        }
    }
    if depth > 0 {
        for _ in 0..rng.random_range(0..5) {
            if rng.random_bool(0.4) {
                e.push_text(&random_text(rng, 5));
            } else {
                e.push_child(random_tree(rng, depth - 1));
            }
        }
    } else if rng.random_bool(0.5) {
        e.push_text(&random_text(rng, 6));
    }
    e
}

fn naive_escape(s: &str) -> String {
    // Every markup-significant or whitespace character as a numeric
    // reference, so the parser's normalisation rules never apply.
    let mut out = String::new();
    for c in s.chars() {
        match c {
            '<' | '>' | '&' | '"' | '\'' | '\t' | '\n' | '\r' => out.push_str(&format!("&#{};", c as u32)),
            c => out.push(c),
        }
    }
    out
}

/// Independent serializer: every element and attribute declares its own
/// prefix inline, all special characters are character references.
pub fn naive_serialize(e: &Element) -> String {
    let mut out = String::from("<?xml version=\"1.0\"?>");
    naive_element(e, &mut out);
    out
}

fn naive_element(e: &Element, out: &mut String) {
    let tag = if e.name().namespace_uri().is_empty() {
        e.name().local_name().to_owned()
    } else {
        format!("e:{}", e.name().local_name())
    };
    out.push('<');
    out.push_str(&tag);
    if !e.name().namespace_uri().is_empty() {
        out.push_str(&format!(" xmlns:e=\"{}\"", naive_escape(e.name().namespace_uri())));
    }
    for (i, (name, value)) in e.attributes().iter().enumerate() {
        if name.namespace_uri().is_empty() {
            out.push_str(&format!(" {}=\"{}\"", name.local_name(), naive_escape(value)));
        } else {
            out.push_str(&format!(
                " xmlns:a{i}=\"{}\" a{i}:{}='{}'",
                naive_escape(name.namespace_uri()),
                name.local_name(),
                naive_escape(value)
            ));
        }
    }
    out.push('>');
    for child in e.children() {
        match child {
            XmlNode::Element(c) => naive_element(c, out),
            XmlNode::Text(t) => out.push_str(&naive_escape(t)),
        }
    }
    out.push_str(&format!("</{tag}>"));
}

// ---------------------------------------------------------------------------
// Descriptors, values and envelopes
// ---------------------------------------------------------------------------

const SCALARS: &[TypeRef] = &[
    TypeRef::Text,
    TypeRef::Int,
    TypeRef::Boolean,
    TypeRef::Double,
    TypeRef::TextList,
];

fn random_type(rng: &mut TestRng, records: &[RecordDef], allow_void: bool) -> TypeRef {
    if allow_void && rng.random_bool(0.15) {
        return TypeRef::Void;
    }
    if !records.is_empty() && rng.random_bool(0.3) {
        return TypeRef::Record(records.choose(rng).unwrap().name.clone());
    }
    SCALARS.choose(rng).unwrap().clone()
}

fn distinct_names(rng: &mut TestRng, prefix: &str, count: std::ops::RangeInclusive<usize>) -> Vec<String> {
    let n = rng.random_range(count);
    let mut names: Vec<String> = Vec::new();
    while names.len() < n {
        let name = format!("{prefix}{}", random_ncname(rng).replace(['.', '-'], "_"));
        if !names.contains(&name) {
            names.push(name);
        }
    }
    names
}

/// A valid descriptor: records nest at most two deep, operation names never
/// end in `Response`.
pub fn random_descriptor(rng: &mut TestRng) -> ServiceDescriptor {
    let record_names = distinct_names(rng, "Rec", 0..=3);
    let mut records: Vec<RecordDef> = Vec::new();
    let mut flat: Vec<RecordDef> = Vec::new();
    for name in record_names {
        let nested_ok = !flat.is_empty() && rng.random_bool(0.5);
        let mut r = RecordDef::new(name);
        for f in distinct_names(rng, "f", 1..=4) {
            let ty = if nested_ok && rng.random_bool(0.4) {
                TypeRef::Record(flat.choose(rng).unwrap().name.clone())
            } else {
                SCALARS.choose(rng).unwrap().clone()
            };
            r = r.field(f, ty);
        }
        let is_flat = !r.fields.iter().any(|(_, t)| matches!(t, TypeRef::Record(_)));
        if is_flat {
            flat.push(r.clone());
        }
        records.push(r);
    }
    let mut operations = Vec::new();
    for name in distinct_names(rng, "Op", 1..=5) {
        let mut op = OperationDescriptor::new(name, random_type(rng, &records, true));
        for p in distinct_names(rng, "p", 0..=4) {
            op = op.param(p, random_type(rng, &records, false));
        }
        if rng.random_bool(0.5) {
            op = op.doc(random_text(rng, 5));
        }
        operations.push(op);
    }
    let ns = ["urn:svc:", "http://example.org/svc/", "urn:x-"].choose(rng).unwrap();
    ServiceDescriptor {
        service_name: format!("S{}", random_ncname(rng).replace(['.', '-'], "_")),
        target_namespace: format!("{ns}{}", rng.random_range(0..1000)),
        records,
        operations,
    }
}

pub fn random_double(rng: &mut TestRng) -> f64 {
    match rng.random_range(0..6) {
        0 => *[
            0.0,
            1.0,
            -1.0,
            5000.0,
            0.1,
            1e300,
            -2.5e-300,
            f64::MAX,
            f64::MIN_POSITIVE,
        ]
        .choose(rng)
        .unwrap(),
        1 => rng.random_range(-1e6..1e6),
        2 => rng.random_range(0..100_000) as f64 / 100.0,
        _ => loop {
            let v = f64::from_bits(rng.random());
            if v.is_finite() {
                break v;
            }
        },
    }
}

pub fn random_value(rng: &mut TestRng, ty: &TypeRef, records: &[RecordDef]) -> Value {
    match ty {
        TypeRef::Text => Value::Text(random_text(rng, 6)),
        TypeRef::Int => Value::Int(match rng.random_range(0..4) {
            0 => *[0, 1, -1, i64::MAX, i64::MIN].choose(rng).unwrap(),
            _ => rng.random(),
        }),
        TypeRef::Boolean => Value::Boolean(rng.random()),
        TypeRef::Double => Value::Double(random_double(rng)),
        TypeRef::TextList => Value::TextList((0..rng.random_range(0..4)).map(|_| random_text(rng, 4)).collect()),
        TypeRef::Record(name) => {
            let def = records.iter().find(|r| &r.name == name).expect("record exists");
            Value::Record {
                type_name: name.clone(),
                fields: def
                    .fields
                    .iter()
                    .map(|(f, t)| (f.clone(), random_value(rng, t, records)))
                    .collect(),
            }
        }
        TypeRef::Void => panic!("no values of type void"),
    }
}

pub fn random_fault(rng: &mut TestRng) -> SoapFault {
    let code = *[
        FaultCode::Client,
        FaultCode::Server,
        FaultCode::VersionMismatch,
        FaultCode::MustUnderstand,
    ]
    .choose(rng)
    .unwrap();
    let f = SoapFault::new(code, random_text(rng, 5));
    if rng.random_bool(0.5) {
        f.with_detail(random_text(rng, 5))
    } else {
        f
    }
}

pub fn random_envelope(rng: &mut TestRng, d: &ServiceDescriptor) -> SoapEnvelope {
    let op = d.operations.choose(rng).unwrap();
    let qname = QName::new(d.target_namespace.as_str(), op.name.as_str());
    match rng.random_range(0..3) {
        0 => SoapEnvelope::Call {
            operation: qname,
            args: op
                .params
                .iter()
                .map(|(n, t)| (n.clone(), random_value(rng, t, &d.records)))
                .collect(),
        },
        1 => SoapEnvelope::Response {
            operation: qname,
            result: match &op.returns {
                TypeRef::Void => None,
                t => Some(random_value(rng, t, &d.records)),
            },
        },
        _ => SoapEnvelope::Fault(random_fault(rng)),
    }
}

// ---------------------------------------------------------------------------
// Catalogs
// ---------------------------------------------------------------------------

fn catalog_name(rng: &mut TestRng, prefix: &str) -> String {
    const PARTS: &[&str] = &["A", "B", "X1", "_Z", "EMP", "9", "NAME"];
    let n = rng.random_range(0..3);
    let mut s = prefix.to_owned();
    for _ in 0..n {
        s.push_str(PARTS.choose(rng).unwrap());
    }
    s
}

fn random_cell(rng: &mut TestRng, ty: ColumnType) -> Cell {
    match ty {
        ColumnType::Text => Cell::Text(random_text(rng, 5)),
        ColumnType::Int => Cell::Int(rng.random_range(-1000..1000)),
        ColumnType::Double => Cell::Double(random_double(rng)),
    }
}

fn random_projection(rng: &mut TestRng, cols: &[(String, ColumnType)]) -> Projection {
    match rng.random_range(0..3) {
        0 => Projection::All,
        1 => Projection::Columns(
            (0..rng.random_range(1..=cols.len()))
                .map(|_| cols.choose(rng).unwrap().0.clone())
                .collect(),
        ),
        _ => {
            let mut t = String::new();
            for _ in 0..rng.random_range(0..4) {
                if rng.random_bool(0.5) {
                    t.push_str(&format!("{{{}}}", cols.choose(rng).unwrap().0));
                } else {
                    t.push_str(["|", "{{", "}}", " - ", "\t", "x"].choose(rng).unwrap());
                }
            }
            Projection::format(&t, "OUT").expect("generated template is valid")
        }
    }
}

pub fn random_catalog(rng: &mut TestRng) -> Catalog {
    let ds = *["XE", "ORCL", "test-db", "a.b"].choose(rng).unwrap();
    let mut cat = Catalog::new(ds);
    for _ in 0..rng.random_range(0..3) {
        let u = random_text(rng, 3);
        let p = random_text(rng, 3);
        cat.add_user(&u, &p);
    }
    let mut tables: Vec<(String, Vec<(String, ColumnType)>)> = Vec::new();
    for i in 0..rng.random_range(0..4) {
        let name = format!("{}{i}", catalog_name(rng, "T"));
        let mut cols: Vec<(String, ColumnType)> = Vec::new();
        if rng.random_bool(0.5) {
            cols.push(("ID".into(), ColumnType::Int));
        }
        for j in 0..rng.random_range(1..5) {
            let ty = *[ColumnType::Text, ColumnType::Int, ColumnType::Double]
                .choose(rng)
                .unwrap();
            cols.push((format!("{}{j}", catalog_name(rng, "C")), ty));
        }
        let spec: Vec<(&str, ColumnType)> = cols.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        let mut table = Table::new(&name, &spec).unwrap();
        let auto = table.has_auto_id();
        for r in 0..rng.random_range(0..8) {
            let row = cols
                .iter()
                .enumerate()
                .map(|(k, (_, ty))| {
                    if auto && k == 0 {
                        Cell::Int(r as i64 * 2 + 1)
                    } else {
                        random_cell(rng, *ty)
                    }
                })
                .collect();
            table.push_row(row).unwrap();
        }
        cat.add_table(table).unwrap();
        tables.push((name, cols));
    }
    if !tables.is_empty() {
        for pkg in 0..rng.random_range(0..3) {
            let pkg_name = format!("PKG{pkg}");
            for p in 0..rng.random_range(1..5) {
                let (table, cols) = tables.choose(rng).unwrap().clone();
                let column = cols.choose(rng).unwrap().0.clone();
                let kind = match rng.random_range(0..5) {
                    0 => ProcKind::SelectAll {
                        table,
                        projection: random_projection(rng, &cols),
                    },
                    1 => ProcKind::SelectWhereEq {
                        table,
                        column,
                        projection: random_projection(rng, &cols),
                    },
                    2 => ProcKind::Insert { table },
                    3 => ProcKind::DeleteWhereEq { table, column },
                    _ => ProcKind::Count { table },
                };
                cat.add_procedure(&pkg_name, Procedure::new(&format!("P{p}"), kind).unwrap())
                    .unwrap();
            }
        }
    }
    cat
}

// ---------------------------------------------------------------------------
// Employee model
// ---------------------------------------------------------------------------

/// Row text computed without the library: `id|last|first|job|salary`.
pub fn expected_row_text(id: i64, last: &str, first: &str, job: &str, salary_text: &str) -> String {
    [id.to_string().as_str(), last, first, job, salary_text].join("|")
}

/// In-memory shadow of the employee table.
#[derive(Debug, Clone, Default)]
pub struct ShadowEmployees {
    pub rows: Vec<(i64, String, String, String, f64)>,
    pub next_id: i64,
}

impl ShadowEmployees {
    pub fn seeded() -> Self {
        ShadowEmployees {
            rows: vec![
                (1, "KING".into(), "ADA".into(), "PRESIDENT".into(), 5000.0),
                (2, "BLAKE".into(), "ROBERT".into(), "MANAGER".into(), 2850.0),
                (3, "SMITH".into(), "JOHN".into(), "CLERK".into(), 800.0),
            ],
            next_id: 4,
        }
    }

    pub fn empty() -> Self {
        ShadowEmployees {
            rows: Vec::new(),
            next_id: 1,
        }
    }

    /// Applies an add the model expects to succeed; returns the new id.
    pub fn add(&mut self, last: &str, first: &str, job: &str, salary: f64) -> i64 {
        let id = self.next_id;
        self.next_id += 1;
        self.rows.push((id, last.into(), first.into(), job.into(), salary));
        id
    }

    pub fn delete(&mut self, id: i64) -> bool {
        let before = self.rows.len();
        self.rows.retain(|r| r.0 != id);
        before != self.rows.len()
    }

    pub fn get(&self, id: i64) -> Option<&(i64, String, String, String, f64)> {
        self.rows.iter().find(|r| r.0 == id)
    }

    /// Whether the service should accept these arguments.
    pub fn valid(last: &str, first: &str, job: &str, salary: f64) -> bool {
        let clean = |s: &str| !s.contains(['|', '\n', '\r']);
        !last.trim().is_empty() && clean(last) && clean(first) && clean(job) && salary.is_finite() && salary >= 0.0
    }
}

// ---------------------------------------------------------------------------
// Loopback servers
// ---------------------------------------------------------------------------

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use soapbridge::employee::{self, DataManager, EmployeeService};
use soapbridge::host::{Permissions, RunningServer, ServiceHost, ServiceRegistration};
use soapbridge::store::{catalog_path, open_session, parse_connection_string, save_catalog};

pub struct EmployeeServer {
    pub dir: tempfile::TempDir,
    pub server: RunningServer,
    pub manager: DataManager,
    /// Requests answered so far, from the access log.
    pub requests: Arc<AtomicUsize>,
}

impl EmployeeServer {
    pub fn service_url(&self) -> String {
        format!(
            "{}{}/{}",
            self.server.base_url(),
            employee::FOLDER_PATH,
            employee::SERVICE_FILE
        )
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

pub fn start_employee_server(fixture: employee::Fixture, perms: Permissions, bind: &str) -> EmployeeServer {
    let dir = tempfile::tempdir().unwrap();
    save_catalog(
        &employee::fixture_catalog(fixture),
        &catalog_path(dir.path(), employee::DATA_SOURCE),
    )
    .unwrap();
    let conn = parse_connection_string(employee::DEFAULT_CONNECTION).unwrap();
    let session = Arc::new(open_session(dir.path(), &conn).unwrap());
    let manager = DataManager::new(session);
    let mut host = ServiceHost::new();
    let requests = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&requests);
    host.set_access_log(move |_| {
        counter.fetch_add(1, Ordering::SeqCst);
    });
    host.add_folder(employee::FOLDER_PATH, perms).unwrap();
    host.register_service(
        employee::FOLDER_PATH,
        employee::SERVICE_FILE,
        EmployeeService::new(manager.clone()).registration(),
    )
    .unwrap();
    let server = host.bind(bind).unwrap().spawn();
    EmployeeServer {
        dir,
        server,
        manager,
        requests,
    }
}

/// `Echo<Kind>(v) -> v` for every value kind, plus `Boom()` which panics
/// and `Nothing()` returning void.
pub fn echo_descriptor() -> ServiceDescriptor {
    let rec = RecordDef::new("Pair")
        .field("left", TypeRef::Text)
        .field("right", TypeRef::Double);
    let outer = RecordDef::new("Outer")
        .field("pair", TypeRef::Record("Pair".into()))
        .field("tags", TypeRef::TextList)
        .field("flag", TypeRef::Boolean)
        .field("n", TypeRef::Int);
    let mut ops = Vec::new();
    for (name, ty) in [
        ("EchoText", TypeRef::Text),
        ("EchoInt", TypeRef::Int),
        ("EchoBoolean", TypeRef::Boolean),
        ("EchoDouble", TypeRef::Double),
        ("EchoList", TypeRef::TextList),
        ("EchoPair", TypeRef::Record("Pair".into())),
        ("EchoOuter", TypeRef::Record("Outer".into())),
    ] {
        ops.push(OperationDescriptor::new(name, ty.clone()).param("v", ty));
    }
    ops.push(OperationDescriptor::new("Boom", TypeRef::Int));
    ops.push(OperationDescriptor::new("Nothing", TypeRef::Void));
    ServiceDescriptor {
        service_name: "Echo".into(),
        target_namespace: "urn:test:echo".into(),
        records: vec![rec, outer],
        operations: ops,
    }
}

pub struct EchoServer {
    pub server: RunningServer,
    pub invocations: Arc<AtomicUsize>,
}

impl EchoServer {
    pub fn service_url(&self) -> String {
        format!("{}/echo/Echo.asmx", self.server.base_url())
    }
}

pub fn start_echo_server(perms: Permissions) -> EchoServer {
    let invocations = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&invocations);
    let handler = move |op: &str, mut args: Vec<(String, Value)>| {
        counter.fetch_add(1, Ordering::SeqCst);
        match op {
            "Boom" => panic!("handler failure"),
            "Nothing" => Ok(None),
            _ => Ok(Some(args.remove(0).1)),
        }
    };
    let mut host = ServiceHost::new();
    host.add_folder("/echo", perms).unwrap();
    host.register_service(
        "/echo",
        "Echo.asmx",
        ServiceRegistration::new(echo_descriptor(), Arc::new(handler)).unwrap(),
    )
    .unwrap();
    EchoServer {
        server: host.bind("127.0.0.1:0").unwrap().spawn(),
        invocations,
    }
}

/// Bit-level equality: doubles compare by representation.
pub fn values_identical(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Double(x), Value::Double(y)) => x.to_bits() == y.to_bits(),
        (
            Value::Record {
                type_name: ta,
                fields: fa,
            },
            Value::Record {
                type_name: tb,
                fields: fb,
            },
        ) => {
            ta == tb
                && fa.len() == fb.len()
                && fa
                    .iter()
                    .zip(fb)
                    .all(|((na, va), (nb, vb))| na == nb && values_identical(va, vb))
        }
        _ => a == b,
    }
}

/// Sends raw bytes and returns the raw response text.
pub fn raw_http(addr: std::net::SocketAddr, request: &[u8]) -> String {
    use std::io::{Read, Write};
    let mut s = std::net::TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(std::time::Duration::from_secs(10))).unwrap();
    s.write_all(request).unwrap();
    let _ = s.shutdown(std::net::Shutdown::Write);
    let mut out = Vec::new();
    let _ = s.read_to_end(&mut out);
    String::from_utf8_lossy(&out).into_owned()
}

pub fn status_of(raw_response: &str) -> u16 {
    raw_response.split(' ').nth(1).and_then(|s| s.parse().ok()).unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Model-based CRUD
// ---------------------------------------------------------------------------

use soapbridge::employee::EmployeeError;

fn random_name(rng: &mut TestRng) -> String {
    match rng.random_range(0..10) {
        0 => String::new(),
        1 => " ".into(),
        2 => "A|B".into(),
        3 => "line\nbreak".into(),
        _ => random_text(rng, 3).replace(['|', '\n', '\r'], "_") + "N",
    }
}

/// Runs `len` random operations against `m` and the shadow, checking every
/// result. Returns a description of the first divergence.
pub fn run_model_sequence(
    rng: &mut TestRng,
    m: &DataManager,
    shadow: &mut ShadowEmployees,
    len: usize,
) -> Result<(), String> {
    for step in 0..len {
        let span = shadow.next_id + 2;
        match rng.random_range(0..5) {
            0 => {
                let last = random_name(rng);
                let first = random_name(rng).replace("N", "");
                let job = random_text(rng, 2);
                let salary = match rng.random_range(0..6) {
                    0 => -1.0,
                    1 => f64::INFINITY,
                    _ => random_double(rng).abs(),
                };
                let got = m.add_employee(&last, &first, &job, salary);
                if ShadowEmployees::valid(&last, &first, &job, salary) {
                    let want = shadow.add(&last, &first, &job, salary);
                    match got {
                        Ok(id) if id == want => {}
                        other => return Err(format!("step {step}: add -> {other:?}, want id {want}")),
                    }
                } else if !matches!(got, Err(EmployeeError::Validation { .. })) {
                    return Err(format!("step {step}: invalid add accepted: {got:?}"));
                }
            }
            1 => {
                let id = rng.random_range(0..span);
                let got = m.delete_employee(id).map_err(|e| e.to_string())?;
                if got != shadow.delete(id) {
                    return Err(format!("step {step}: delete {id} -> {got}"));
                }
            }
            2 => {
                let got = m.count_employees().map_err(|e| e.to_string())?;
                if got != shadow.rows.len() as i64 {
                    return Err(format!("step {step}: count {got}, want {}", shadow.rows.len()));
                }
            }
            3 => {
                let id = rng.random_range(0..span);
                match (m.get_employee_by_id(id), shadow.get(id)) {
                    (Ok(r), Some(w)) => {
                        if (r.id, &r.last_name, &r.first_name, &r.job) != (w.0, &w.1, &w.2, &w.3)
                            || r.salary.to_bits() != w.4.to_bits()
                        {
                            return Err(format!("step {step}: get {id} -> {r:?}, want {w:?}"));
                        }
                    }
                    (Err(EmployeeError::NotFound(n)), None) if n == id => {}
                    (got, want) => return Err(format!("step {step}: get {id} -> {got:?}, want {want:?}")),
                }
            }
            _ => {
                let rows = m.get_employees_data().map_err(|e| e.to_string())?;
                if rows.len() != shadow.rows.len() {
                    return Err(format!(
                        "step {step}: list has {} rows, want {}",
                        rows.len(),
                        shadow.rows.len()
                    ));
                }
                for (line, w) in rows.iter().zip(&shadow.rows) {
                    let f: Vec<&str> = line.split('|').collect();
                    let ok = f.len() == 5
                        && f[0].parse::<i64>().ok() == Some(w.0)
                        && (f[1], f[2], f[3]) == (w.1.as_str(), w.2.as_str(), w.3.as_str())
                        && f[4].parse::<f64>().map(f64::to_bits).ok() == Some(w.4.to_bits());
                    if !ok {
                        return Err(format!("step {step}: row `{line}` does not match {w:?}"));
                    }
                }
            }
        }
    }
    Ok(())
}

/// A manager over a fresh copy of `fixture` in `dir`.
pub fn fresh_manager(dir: &std::path::Path, fixture: employee::Fixture) -> DataManager {
    save_catalog(
        &employee::fixture_catalog(fixture),
        &catalog_path(dir, employee::DATA_SOURCE),
    )
    .unwrap();
    let conn = parse_connection_string(employee::DEFAULT_CONNECTION).unwrap();
    DataManager::new(Arc::new(open_session(dir, &conn).unwrap()))
}
