//! The `soapbridge` command line: `serve`, `describe`, `call` and `db-seed`.

pub mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use soapbridge::client::{fetch_wsdl, CallError, ServiceProxy, DEFAULT_TIMEOUT};
use soapbridge::contract::{OperationDescriptor, RecordDef, ServiceDescriptor, TypeRef};
use soapbridge::employee::{fixture_catalog, DataManager, EmployeeService, Fixture, DATA_SOURCE};
use soapbridge::host::{HostError, Permissions, ServiceHost, ShutdownHandle};
use soapbridge::soap::{parse_boolean, parse_double, parse_int, Value};
use soapbridge::store::{catalog_path, open_session, parse_connection_string, save_catalog};

use config::{HostConfig, ServiceKind};

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    /// Bad arguments, config or catalog.
    pub const USAGE: u8 = 2;
    pub const BIND: u8 = 3;
    /// Transport failure or unusable contract.
    pub const TRANSPORT: u8 = 4;
    pub const FAULT: u8 = 5;
}

#[derive(Debug, Parser)]
#[command(
    name = "soapbridge",
    version,
    about = "SOAP web service host, client and table store"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Host the configured services until interrupted.
    Serve {
        #[arg(long, env = "SOAPBRIDGE_CONFIG")]
        config: PathBuf,
        /// Overrides `bind` from the config.
        #[arg(long)]
        bind: Option<String>,
        /// Overrides `catalog_dir` from the config.
        #[arg(long)]
        catalog_dir: Option<PathBuf>,
    },
    /// Print the operations of a service, one per line.
    Describe {
        #[arg(long)]
        url: String,
    },
    /// Invoke one operation and print its result.
    Call {
        #[arg(long)]
        url: String,
        #[arg(long)]
        op: String,
        /// `name=value`; repeat for list items, `rec.field=value` for records.
        #[arg(long = "arg", value_name = "NAME=VALUE")]
        args: Vec<String>,
    },
    /// Write the XE catalog fixture.
    DbSeed {
        #[arg(long)]
        catalog_dir: PathBuf,
        #[arg(long, value_parser = ["default", "empty"])]
        fixture: String,
    },
}

/// Parses `argv` and runs the command. `on_serving` receives the shutdown
/// handle once `serve` is listening.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write, on_serving: &mut dyn FnMut(ShutdownHandle)) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match cli.command {
        Command::Serve {
            config,
            bind,
            catalog_dir,
        } => cmd_serve(&config, bind, catalog_dir, err, on_serving),
        Command::Describe { url } => cmd_describe(&url, out, err),
        Command::Call { url, op, args } => cmd_call(&url, &op, &args, out, err),
        Command::DbSeed { catalog_dir, fixture } => {
            cmd_db_seed(&catalog_dir, Fixture::parse(&fixture).expect("clap checked"), out, err)
        }
    }
}

macro_rules! fail {
    ($err:expr, $code:expr, $($fmt:tt)*) => {{
        let _ = writeln!($err, "error: {}", format_args!($($fmt)*));
        return $code;
    }};
}

pub fn cmd_serve(
    config_path: &std::path::Path,
    bind: Option<String>,
    catalog_dir: Option<PathBuf>,
    err: &mut dyn Write,
    on_serving: &mut dyn FnMut(ShutdownHandle),
) -> u8 {
    let mut cfg = match HostConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => fail!(err, exit::USAGE, "{e}"),
    };
    if let Some(b) = bind {
        cfg.bind = b;
    }
    if let Some(d) = catalog_dir {
        cfg.catalog_dir = d;
    }
    if let Err(e) = cfg.check_servable() {
        fail!(err, exit::USAGE, "{e}");
    }

    let conn = match parse_connection_string(&cfg.connection) {
        Ok(c) => c,
        Err(e) => fail!(err, exit::USAGE, "connection string: {e}"),
    };
    let path = catalog_path(&cfg.catalog_dir, &conn.data_source);
    if !path.is_file() {
        fail!(err, exit::USAGE, "catalog file {} not found", path.display());
    }
    let mut session = match open_session(&cfg.catalog_dir, &conn) {
        Ok(s) => s,
        Err(e) => fail!(err, exit::USAGE, "{}: {e}", path.display()),
    };
    session.set_autosave(true);
    let session = Arc::new(session);

    let mut host = ServiceHost::new();
    host.set_max_body_bytes(cfg.max_body_bytes);
    host.set_access_log(|entry| eprintln!("{entry}"));
    let mut published = Vec::new();
    for folder in &cfg.folders {
        let perms = Permissions {
            read: folder.read,
            execute: folder.execute,
        };
        if let Err(e) = host.add_folder(&folder.path, perms) {
            fail!(err, exit::USAGE, "{e}");
        }
        for svc in &folder.services {
            let registration = match svc.kind {
                ServiceKind::Employee => EmployeeService::new(DataManager::new(Arc::clone(&session))).registration(),
            };
            if let Err(e) = host.register_service(&folder.path, &svc.name, registration) {
                fail!(err, exit::USAGE, "{e}");
            }
            published.push(format!("{}/{}", folder.path.trim_end_matches('/'), svc.name));
        }
    }

    let server = match host.bind(&cfg.bind) {
        Ok(s) => s,
        Err(e @ HostError::BindFailure { .. }) => fail!(err, exit::BIND, "{e}"),
        Err(e) => fail!(err, exit::USAGE, "{e}"),
    };
    let addr = server.local_addr();
    let _ = writeln!(err, "listening on http://{addr}");
    for p in &published {
        let _ = writeln!(err, "serving http://{addr}{p}");
    }
    let _ = err.flush();
    on_serving(server.shutdown_handle());
    match server.run() {
        Ok(()) => {
            let _ = writeln!(err, "stopped");
            exit::OK
        }
        Err(e) => fail!(err, exit::BIND, "{e}"),
    }
}

/// `name(param:type, ...) -> type`
pub fn describe_line(op: &OperationDescriptor) -> String {
    let params: Vec<String> = op.params.iter().map(|(n, t)| format!("{n}:{t}")).collect();
    format!("{}({}) -> {}", op.name, params.join(", "), op.returns)
}

/// One line per operation, sorted by name.
pub fn describe_lines(d: &ServiceDescriptor) -> Vec<String> {
    let mut ops: Vec<&OperationDescriptor> = d.operations.iter().collect();
    ops.sort_by(|a, b| a.name.cmp(&b.name));
    ops.into_iter().map(describe_line).collect()
}

pub fn cmd_describe(url: &str, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let (descriptor, _) = match fetch_wsdl(url, DEFAULT_TIMEOUT) {
        Ok(x) => x,
        Err(e) => fail!(err, exit::TRANSPORT, "{e}"),
    };
    for line in describe_lines(&descriptor) {
        let _ = writeln!(out, "{line}");
    }
    exit::OK
}

#[derive(Debug)]
struct ArgValues {
    values: BTreeMap<String, Vec<String>>,
}

impl ArgValues {
    fn parse(raw: &[String]) -> Result<ArgValues, String> {
        let mut values: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for a in raw {
            let (k, v) = a
                .split_once('=')
                .ok_or_else(|| format!("argument `{a}` is not name=value"))?;
            values.entry(k.to_owned()).or_default().push(v.to_owned());
        }
        Ok(ArgValues { values })
    }

    fn build(&mut self, key: &str, ty: &TypeRef, records: &[RecordDef]) -> Result<Value, String> {
        if let TypeRef::TextList = ty {
            return Ok(Value::TextList(self.values.remove(key).unwrap_or_default()));
        }
        if let TypeRef::Record(name) = ty {
            let def = records
                .iter()
                .find(|r| &r.name == name)
                .ok_or_else(|| format!("unknown record `{name}`"))?;
            let mut fields = Vec::new();
            for (f, fty) in &def.fields {
                fields.push((f.clone(), self.build(&format!("{key}.{f}"), fty, records)?));
            }
            return Ok(Value::Record {
                type_name: name.clone(),
                fields,
            });
        }
        let text = match self.values.remove(key).as_deref() {
            Some([v]) => v.clone(),
            Some(_) => return Err(format!("argument `{key}` given more than once")),
            None => return Err(format!("missing argument `{key}`")),
        };
        let bad = || format!("argument `{key}`: `{text}` is not a valid {ty}");
        Ok(match ty {
            TypeRef::Text => Value::Text(text.clone()),
            TypeRef::Int => Value::Int(parse_int(&text).ok_or_else(bad)?),
            TypeRef::Boolean => Value::Boolean(parse_boolean(&text).ok_or_else(bad)?),
            TypeRef::Double => Value::Double(parse_double(&text).ok_or_else(bad)?),
            TypeRef::Void => return Err(format!("argument `{key}` has type void")),
            TypeRef::TextList | TypeRef::Record(_) => unreachable!(),
        })
    }
}

/// Turns `name=value` arguments into typed operation arguments.
pub fn build_arguments(
    op: &OperationDescriptor,
    records: &[RecordDef],
    raw: &[String],
) -> Result<Vec<(String, Value)>, String> {
    let mut args = ArgValues::parse(raw)?;
    let mut built = Vec::new();
    for (name, ty) in &op.params {
        built.push((name.clone(), args.build(name, ty, records)?));
    }
    if let Some(extra) = args.values.keys().next() {
        return Err(format!("operation `{}` has no parameter `{extra}`", op.name));
    }
    Ok(built)
}

fn render_value(prefix: &str, value: &Value, lines: &mut Vec<String>) {
    match value {
        Value::TextList(items) if prefix.is_empty() => lines.extend(items.iter().cloned()),
        Value::TextList(items) => lines.extend(items.iter().map(|i| format!("{prefix}={i}"))),
        Value::Record { fields, .. } => {
            for (f, v) in fields {
                let key = if prefix.is_empty() {
                    f.clone()
                } else {
                    format!("{prefix}.{f}")
                };
                render_value(&key, v, lines);
            }
        }
        scalar => {
            let text = scalar.lexical().unwrap_or_default();
            lines.push(if prefix.is_empty() {
                text
            } else {
                format!("{prefix}={text}")
            });
        }
    }
}

/// Output lines for a call result.
pub fn render_result(value: Option<&Value>) -> Vec<String> {
    let mut lines = Vec::new();
    if let Some(v) = value {
        render_value("", v, &mut lines);
    }
    lines
}

pub fn cmd_call(url: &str, op: &str, raw_args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let (descriptor, endpoint) = match fetch_wsdl(url, DEFAULT_TIMEOUT) {
        Ok(x) => x,
        Err(e) => fail!(err, exit::TRANSPORT, "{e}"),
    };
    let Some(operation) = descriptor.operation(op) else {
        fail!(err, exit::USAGE, "service has no operation `{op}`");
    };
    let args = match build_arguments(operation, &descriptor.records, raw_args) {
        Ok(a) => a,
        Err(e) => fail!(err, exit::USAGE, "{e}"),
    };
    let proxy = match ServiceProxy::new(descriptor.clone(), &endpoint) {
        Ok(p) => p,
        Err(e) => fail!(err, exit::TRANSPORT, "{e}"),
    };
    let arg_refs: Vec<(&str, Value)> = args.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
    match proxy.call(op, &arg_refs) {
        Ok(v) => {
            for line in render_result(v.as_ref()) {
                let _ = writeln!(out, "{line}");
            }
            exit::OK
        }
        Err(CallError::Fault(f)) => fail!(err, exit::FAULT, "{}", f.fault_string()),
        Err(e) => fail!(err, exit::TRANSPORT, "{e}"),
    }
}

pub fn cmd_db_seed(dir: &std::path::Path, fixture: Fixture, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    if let Err(e) = std::fs::create_dir_all(dir) {
        fail!(err, exit::USAGE, "cannot create {}: {e}", dir.display());
    }
    let path = catalog_path(dir, DATA_SOURCE);
    if let Err(e) = save_catalog(&fixture_catalog(fixture), &path) {
        fail!(err, exit::USAGE, "cannot write {}: {e}", path.display());
    }
    let _ = writeln!(out, "wrote {}", path.display());
    exit::OK
}
