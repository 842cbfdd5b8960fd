//! Hosting services over HTTP under virtual folders.
//!
//! A [`ServiceHost`] owns a fixed routing table: folders (URL path prefixes
//! with read/execute permissions) holding services addressed by file name,
//! e.g. `/OracleWebService` + `Service.asmx`. Reading a service (its WSDL
//! or browser test page) requires `read`; invoking it via SOAP POST requires
//! `execute`.
//!
//! [`Server`] runs the host on a TCP listener, one thread per connection and
//! one exchange per connection.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::contract::{generate_wsdl, validate_descriptor, ServiceDescriptor, TypeRef, Violation};
use crate::http::{self, HttpRequest, HttpResponse};
use crate::soap::{self, FaultCode, SoapEnvelope, SoapError, SoapFault, Value};
use crate::xml::{self, serialize_fragment, Element, QName};

pub const DEFAULT_MAX_BODY_BYTES: usize = 4 * 1024 * 1024;
pub const XML_CONTENT_TYPE: &str = "text/xml; charset=utf-8";
pub const HTML_CONTENT_TYPE: &str = "text/html; charset=utf-8";

const IO_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Permissions {
    pub read: bool,
    pub execute: bool,
}

impl Permissions {
    pub const ALL: Permissions = Permissions {
        read: true,
        execute: true,
    };
}

/// Invokes one operation. The host only calls this for operations in the
/// registration's descriptor, with arguments already decoded and typed.
/// Errors become SOAP faults.
pub trait OperationHandler: Send + Sync {
    fn invoke(&self, operation: &str, args: Vec<(String, Value)>) -> Result<Option<Value>, SoapFault>;
}

impl<F> OperationHandler for F
where
    F: Fn(&str, Vec<(String, Value)>) -> Result<Option<Value>, SoapFault> + Send + Sync,
{
    fn invoke(&self, operation: &str, args: Vec<(String, Value)>) -> Result<Option<Value>, SoapFault> {
        self(operation, args)
    }
}

#[derive(Clone)]
pub struct ServiceRegistration {
    descriptor: ServiceDescriptor,
    handler: Arc<dyn OperationHandler>,
}

impl ServiceRegistration {
    pub fn new(descriptor: ServiceDescriptor, handler: Arc<dyn OperationHandler>) -> Result<Self, HostError> {
        let violations = validate_descriptor(&descriptor);
        if !violations.is_empty() {
            return Err(HostError::InvalidDescriptor(violations));
        }
        Ok(ServiceRegistration { descriptor, handler })
    }

    pub fn descriptor(&self) -> &ServiceDescriptor {
        &self.descriptor
    }
}

impl fmt::Debug for ServiceRegistration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ServiceRegistration")
            .field("service", &self.descriptor.service_name)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct VirtualFolder {
    path: String,
    permissions: Permissions,
    services: BTreeMap<String, ServiceRegistration>,
}

impl VirtualFolder {
    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn permissions(&self) -> Permissions {
        self.permissions
    }

    pub fn services(&self) -> impl Iterator<Item = (&str, &ServiceRegistration)> {
        self.services.iter().map(|(n, r)| (n.as_str(), r))
    }
}

#[derive(Debug, Error)]
pub enum HostError {
    #[error("invalid folder path `{0}`: must start with '/' and have no trailing slash")]
    InvalidFolderPath(String),
    #[error("folder `{0}` is already configured")]
    DuplicateFolder(String),
    #[error("no folder `{0}` is configured")]
    UnknownFolder(String),
    #[error("service `{0}` is already registered in this folder")]
    DuplicateService(String),
    #[error("invalid service name `{0}`")]
    InvalidServiceName(String),
    #[error("invalid service descriptor: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidDescriptor(Vec<Violation>),
    #[error("cannot bind {address}: {reason}")]
    BindFailure { address: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One handled request, reported to the access-log hook.
#[derive(Debug, Clone)]
pub struct AccessLogEntry {
    pub method: String,
    pub path: String,
    pub status: u16,
    pub duration: Duration,
}

impl fmt::Display for AccessLogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {:.3}ms",
            self.method,
            self.path,
            self.status,
            self.duration.as_secs_f64() * 1e3
        )
    }
}

type AccessLog = Arc<dyn Fn(&AccessLogEntry) + Send + Sync>;

pub struct ServiceHost {
    folders: BTreeMap<String, VirtualFolder>,
    max_body_bytes: usize,
    access_log: Option<AccessLog>,
}

impl Default for ServiceHost {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for ServiceHost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ServiceHost")
            .field("folders", &self.folders)
            .field("max_body_bytes", &self.max_body_bytes)
            .finish_non_exhaustive()
    }
}

fn valid_folder_path(path: &str) -> bool {
    path.starts_with('/')
        && (path == "/" || !path.ends_with('/'))
        && !path.contains(['?', '#', ' ', '\\'])
        && !path.contains("//")
}

impl ServiceHost {
    pub fn new() -> Self {
        ServiceHost {
            folders: BTreeMap::new(),
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            access_log: None,
        }
    }

    pub fn set_max_body_bytes(&mut self, limit: usize) {
        self.max_body_bytes = limit;
    }

    pub fn max_body_bytes(&self) -> usize {
        self.max_body_bytes
    }

    /// Installs a hook called once per answered request.
    pub fn set_access_log(&mut self, hook: impl Fn(&AccessLogEntry) + Send + Sync + 'static) {
        self.access_log = Some(Arc::new(hook));
    }

    pub fn add_folder(&mut self, path: &str, permissions: Permissions) -> Result<(), HostError> {
        if !valid_folder_path(path) {
            return Err(HostError::InvalidFolderPath(path.to_owned()));
        }
        if self.folders.contains_key(path) {
            return Err(HostError::DuplicateFolder(path.to_owned()));
        }
        self.folders.insert(
            path.to_owned(),
            VirtualFolder {
                path: path.to_owned(),
                permissions,
                services: BTreeMap::new(),
            },
        );
        Ok(())
    }

    pub fn folder(&self, path: &str) -> Option<&VirtualFolder> {
        self.folders.get(path)
    }

    /// Publishes `registration` at `folder_path/service_name`.
    pub fn register_service(
        &mut self,
        folder_path: &str,
        service_name: &str,
        registration: ServiceRegistration,
    ) -> Result<(), HostError> {
        let folder = self
            .folders
            .get_mut(folder_path)
            .ok_or_else(|| HostError::UnknownFolder(folder_path.to_owned()))?;
        if service_name.is_empty() || service_name.contains(['/', '?', '#', ' ', '\\']) {
            return Err(HostError::InvalidServiceName(service_name.to_owned()));
        }
        if folder.services.contains_key(service_name) {
            return Err(HostError::DuplicateService(service_name.to_owned()));
        }
        folder.services.insert(service_name.to_owned(), registration);
        Ok(())
    }

    fn route(&self, path: &str) -> Option<(&VirtualFolder, &ServiceRegistration)> {
        let (folder_path, service) = path.rsplit_once('/')?;
        let folder_path = if folder_path.is_empty() { "/" } else { folder_path };
        let folder = self.folders.get(folder_path)?;
        folder.services.get(service).map(|reg| (folder, reg))
    }

    /// Answers one request. Never fails: every problem becomes an HTTP
    /// status or a SOAP fault.
    pub fn handle_request(&self, req: &HttpRequest) -> HttpResponse {
        let Some((folder, reg)) = self.route(&req.path) else {
            return HttpResponse::status_only(404);
        };
        match req.method.as_str() {
            "GET" => {
                if !folder.permissions.read {
                    return HttpResponse::new(403, "text/plain; charset=utf-8", Vec::new());
                }
                let url = format!("http://{}{}", authority(req), req.path);
                if req.query.eq_ignore_ascii_case("wsdl") {
                    let doc = generate_wsdl(&reg.descriptor, &url);
                    HttpResponse::new(200, XML_CONTENT_TYPE, xml::serialize_document(&doc))
                } else {
                    HttpResponse::new(200, HTML_CONTENT_TYPE, render_test_page(reg, &url))
                }
            }
            "POST" => {
                if !folder.permissions.execute {
                    return HttpResponse::new(403, "text/plain; charset=utf-8", Vec::new());
                }
                match dispatch(reg, req) {
                    Ok(envelope) => soap_response(200, &envelope),
                    Err(fault) => soap_response(500, &SoapEnvelope::Fault(fault)),
                }
            }
            _ => {
                let mut resp = HttpResponse::status_only(405);
                resp.headers.insert("Allow", "GET, POST");
                resp
            }
        }
    }

    /// Binds a listener; the server starts accepting on [`Server::run`].
    pub fn bind(self, address: &str) -> Result<Server, HostError> {
        let bind_failure = |reason: String| HostError::BindFailure {
            address: address.to_owned(),
            reason,
        };
        let addrs: Vec<SocketAddr> = address
            .to_socket_addrs()
            .map_err(|e| bind_failure(e.to_string()))?
            .collect();
        let listener = TcpListener::bind(&addrs[..]).map_err(|e| bind_failure(e.to_string()))?;
        let local_addr = listener.local_addr()?;
        Ok(Server {
            listener,
            local_addr,
            host: Arc::new(self),
            stopping: Arc::new(AtomicBool::new(false)),
        })
    }
}

fn authority(req: &HttpRequest) -> &str {
    req.headers
        .get("Host")
        .filter(|h| !h.is_empty() && !h.contains(['/', ' ', '"', '<', '>']))
        .unwrap_or("localhost")
}

fn soap_response(status: u16, envelope: &SoapEnvelope) -> HttpResponse {
    let doc = soap::encode_envelope(envelope);
    HttpResponse::new(status, XML_CONTENT_TYPE, xml::serialize_document(&doc))
}

fn client_fault(message: impl Into<String>) -> SoapFault {
    SoapFault::new(FaultCode::Client, message)
}

fn dispatch(reg: &ServiceRegistration, req: &HttpRequest) -> Result<SoapEnvelope, SoapFault> {
    let desc = &reg.descriptor;
    let doc =
        xml::parse_document(&req.body).map_err(|e| client_fault(format!("request is not well-formed XML: {e}")))?;
    let envelope = soap::decode_envelope(&doc, desc).map_err(|e| match e {
        SoapError::VersionMismatch(_) => SoapFault::new(FaultCode::VersionMismatch, e.to_string()),
        other => client_fault(other.to_string()),
    })?;
    let SoapEnvelope::Call { operation, args } = envelope else {
        return Err(client_fault("request body is not an operation call"));
    };
    let op = desc
        .operation(operation.local_name())
        .expect("decode_envelope only yields known operations");

    if let Some(action) = req.headers.get("SOAPAction") {
        let action = action.trim().trim_matches('"');
        if !action.is_empty() && action != desc.soap_action(&op.name) {
            return Err(client_fault(format!(
                "SOAPAction `{action}` does not match operation {}",
                op.name
            )));
        }
    }

    let outcome = catch_unwind(AssertUnwindSafe(|| reg.handler.invoke(&op.name, args)));
    let result = match outcome {
        Ok(r) => r?,
        Err(_) => {
            return Err(SoapFault::new(
                FaultCode::Server,
                format!("operation {} failed unexpectedly", op.name),
            ))
        }
    };
    match (&op.returns, &result) {
        (TypeRef::Void, None) => {}
        (TypeRef::Void, Some(_)) | (_, None) => {
            return Err(SoapFault::new(
                FaultCode::Server,
                format!("operation {} produced a result of the wrong shape", op.name),
            ))
        }
        (ty, Some(v)) => soap::check_value(v, ty, &desc.records).map_err(|e| {
            SoapFault::new(
                FaultCode::Server,
                format!("operation {} produced an invalid result: {e}", op.name),
            )
        })?,
    }
    Ok(SoapEnvelope::Response {
        operation: QName::new(desc.target_namespace.as_str(), op.name.as_str()),
        result,
    })
}

fn html(local: &str) -> Element {
    Element::new(QName::local(local))
}

/// Text shown on the test page when an operation takes no parameters.
pub const NO_PARAMETERS: &str = "(no parameters)";

/// Well-formed XHTML describing a service: name, target namespace, and each
/// operation under its own `<h2>` heading with parameters and return type.
pub fn render_test_page(reg: &ServiceRegistration, base_url: &str) -> String {
    let d = &reg.descriptor;
    let mut body = html("body")
        .with_child(html("h1").with_text(&d.service_name))
        .with_child(
            html("p")
                .with_text("Target namespace: ")
                .with_child(html("code").with_text(&d.target_namespace)),
        )
        .with_child(
            html("p")
                .with_text("Endpoint: ")
                .with_child(html("a").with_attr("href", base_url).with_text(base_url))
                .with_text(" | ")
                .with_child(
                    html("a")
                        .with_attr("href", format!("{base_url}?wsdl"))
                        .with_text("Service description (WSDL)"),
                ),
        );
    for op in &d.operations {
        let mut section = html("div")
            .with_attr("class", "operation")
            .with_attr("id", format!("op-{}", op.name))
            .with_child(html("h2").with_text(&op.name));
        if let Some(doc) = &op.doc {
            section.push_child(html("p").with_attr("class", "doc").with_text(doc));
        }
        if op.params.is_empty() {
            section.push_child(html("p").with_attr("class", "params").with_text(NO_PARAMETERS));
        } else {
            let mut list = html("ul").with_attr("class", "params");
            for (name, ty) in &op.params {
                list.push_child(
                    html("li")
                        .with_child(html("code").with_text(name))
                        .with_text(&format!(" : {ty}")),
                );
            }
            section.push_child(list);
        }
        section.push_child(
            html("p")
                .with_attr("class", "returns")
                .with_text(&format!("Returns: {}", op.returns)),
        );
        body.push_child(section);
    }
    for r in &d.records {
        let mut list = html("ul");
        for (name, ty) in &r.fields {
            list.push_child(html("li").with_text(&format!("{name} : {ty}")));
        }
        body.push_child(
            html("div")
                .with_attr("class", "record")
                .with_child(html("p").with_child(html("strong").with_text(&format!("record {}", r.name))))
                .with_child(list),
        );
    }
    let page = html("html")
        .with_child(
            html("head")
                .with_child(html("meta").with_attr("charset", "utf-8"))
                .with_child(html("title").with_text(&d.service_name)),
        )
        .with_child(body);
    serialize_fragment(&page)
}

// ---------------------------------------------------------------------------
// TCP server
// ---------------------------------------------------------------------------

/// A bound, not yet running, server.
pub struct Server {
    listener: TcpListener,
    local_addr: SocketAddr,
    host: Arc<ServiceHost>,
    stopping: Arc<AtomicBool>,
}

/// Stops a running server from another thread.
#[derive(Clone)]
pub struct ShutdownHandle {
    stopping: Arc<AtomicBool>,
    wake_addr: SocketAddr,
}

impl ShutdownHandle {
    /// Stops accepting connections. Requests already being handled finish.
    pub fn shutdown(&self) {
        if !self.stopping.swap(true, Ordering::SeqCst) {
            // Unblock accept().
            let _ = TcpStream::connect_timeout(&self.wake_addr, Duration::from_secs(1));
        }
    }
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn host(&self) -> &ServiceHost {
        &self.host
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        let mut wake_addr = self.local_addr;
        if wake_addr.ip().is_unspecified() {
            wake_addr.set_ip(match wake_addr {
                SocketAddr::V4(_) => std::net::Ipv4Addr::LOCALHOST.into(),
                SocketAddr::V6(_) => std::net::Ipv6Addr::LOCALHOST.into(),
            });
        }
        ShutdownHandle {
            stopping: Arc::clone(&self.stopping),
            wake_addr,
        }
    }

    /// Accepts connections until shut down, then waits for in-flight
    /// requests to complete.
    pub fn run(self) -> Result<(), HostError> {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        for stream in self.listener.incoming() {
            if self.stopping.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(_) => {
                    // Transient accept failure (e.g. fd exhaustion).
                    thread::sleep(Duration::from_millis(10));
                    continue;
                }
            };
            let host = Arc::clone(&self.host);
            workers.retain(|w| !w.is_finished());
            workers.push(thread::spawn(move || serve_connection(&host, stream)));
        }
        for w in workers {
            let _ = w.join();
        }
        Ok(())
    }

    /// Runs the server on a background thread.
    pub fn spawn(self) -> RunningServer {
        let addr = self.local_addr;
        let handle = self.shutdown_handle();
        let thread = thread::spawn(move || self.run());
        RunningServer {
            addr,
            handle,
            thread: Some(thread),
        }
    }
}

/// A server running on a background thread; shut down on drop.
pub struct RunningServer {
    addr: SocketAddr,
    handle: ShutdownHandle,
    thread: Option<JoinHandle<Result<(), HostError>>>,
}

impl RunningServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// `http://addr`, without a trailing slash.
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        self.handle.clone()
    }

    pub fn stop(mut self) -> Result<(), HostError> {
        self.stop_inner()
    }

    fn stop_inner(&mut self) -> Result<(), HostError> {
        self.handle.shutdown();
        match self.thread.take() {
            Some(t) => t.join().unwrap_or(Ok(())),
            None => Ok(()),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}

fn serve_connection(host: &ServiceHost, stream: TcpStream) {
    let started = Instant::now();
    let _ = stream.set_read_timeout(Some(IO_TIMEOUT));
    let _ = stream.set_write_timeout(Some(IO_TIMEOUT));
    let Ok(read_half) = stream.try_clone() else {
        return;
    };
    let mut reader = BufReader::new(read_half);
    let (method, path, response) = match http::read_request(&mut reader, host.max_body_bytes) {
        Ok(req) => {
            let resp = host.handle_request(&req);
            (req.method, req.path, resp)
        }
        Err(e) => match e.status() {
            Some(status) => ("-".to_owned(), "-".to_owned(), HttpResponse::status_only(status)),
            None => return,
        },
    };
    let mut writer = BufWriter::new(&stream);
    if http::write_response(&mut writer, &response).is_ok() {
        drop(writer);
        let _ = stream.shutdown(Shutdown::Write);
        // Drain whatever the peer still sends so close() does not reset the
        // connection before the response is read.
        let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
        let _ = std::io::copy(&mut std::io::Read::take(&mut reader, 1 << 20), &mut std::io::sink());
    }
    if let Some(log) = &host.access_log {
        log(&AccessLogEntry {
            method,
            path,
            status: response.status,
            duration: started.elapsed(),
        });
    }
}
