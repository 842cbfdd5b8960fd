//! Dynamic client: fetch a service's WSDL and call its operations.
//!
//! A [`ServiceProxy`] checks every call against the fetched descriptor
//! before touching the network, sends exactly one HTTP request per call and
//! never retries or follows redirects.

use std::fmt;
use std::io::{self, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use thiserror::Error;
use url::Url;

use crate::contract::{parse_wsdl, validate_descriptor, ServiceDescriptor, TypeRef};
use crate::host::XML_CONTENT_TYPE;
use crate::http::{self, HttpError, HttpRequest, HttpResponse};
use crate::soap::{self, check_value, SoapEnvelope, SoapFault, Value};
use crate::xml::{self, QName};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// Cap on response bodies the client will read.
pub const MAX_RESPONSE_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("invalid URL `{0}`")]
    InvalidUrl(String),
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CallError {
    #[error("transport error: {0}")]
    Transport(#[from] TransportError),
    #[error("fault {}: {}", .0.code(), .0.fault_string())]
    Fault(SoapFault),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("timed out")]
    Timeout,
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock)
}

fn io_error(e: io::Error) -> CallError {
    if is_timeout(&e) {
        CallError::Timeout
    } else {
        CallError::Transport(TransportError::Io(e.to_string()))
    }
}

fn http_error(e: HttpError) -> CallError {
    match e {
        HttpError::Io(e) => io_error(e),
        other => CallError::Transport(TransportError::Protocol(other.to_string())),
    }
}

/// Parses an absolute `http://` URL.
pub fn parse_http_url(url: &str) -> Result<Url, TransportError> {
    let parsed = Url::parse(url).map_err(|_| TransportError::InvalidUrl(url.to_owned()))?;
    if parsed.scheme() != "http" || parsed.host_str().is_none() {
        return Err(TransportError::InvalidUrl(url.to_owned()));
    }
    Ok(parsed)
}

/// A TCP stream whose reads and writes share one deadline.
struct DeadlineStream {
    stream: TcpStream,
    deadline: Instant,
}

impl DeadlineStream {
    fn arm(&self) -> io::Result<()> {
        let left = self
            .deadline
            .checked_duration_since(Instant::now())
            .filter(|d| !d.is_zero())
            .ok_or_else(|| io::Error::from(io::ErrorKind::TimedOut))?;
        self.stream.set_read_timeout(Some(left))?;
        self.stream.set_write_timeout(Some(left))
    }
}

impl Read for DeadlineStream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.arm()?;
        self.stream.read(buf)
    }
}

impl Write for DeadlineStream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.arm()?;
        self.stream.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.stream.flush()
    }
}

fn host_header(url: &Url) -> String {
    let host = url.host_str().unwrap_or_default();
    match url.port() {
        Some(p) => format!("{host}:{p}"),
        None => host.to_owned(),
    }
}

/// One request/response exchange on a fresh connection. `req`'s target is
/// taken from `url`.
pub fn exchange(url: &Url, mut req: HttpRequest, timeout: Duration) -> Result<HttpResponse, CallError> {
    let deadline = Instant::now() + timeout;
    let addrs: Vec<SocketAddr> = url
        .socket_addrs(|| Some(80))
        .map_err(|e| CallError::Transport(TransportError::Io(e.to_string())))?;
    let mut last_err = None;
    let mut stream = None;
    for addr in addrs {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Err(CallError::Timeout);
        }
        match TcpStream::connect_timeout(&addr, left) {
            Ok(s) => {
                stream = Some(s);
                break;
            }
            Err(e) => last_err = Some(e),
        }
    }
    let stream = match (stream, last_err) {
        (Some(s), _) => s,
        (None, Some(e)) => return Err(io_error(e)),
        (None, None) => {
            return Err(CallError::Transport(TransportError::Io(format!(
                "no addresses for {url}"
            ))))
        }
    };
    let _ = stream.set_nodelay(true);
    let mut conn = DeadlineStream { stream, deadline };

    req.path = url.path().to_owned();
    req.query = url.query().unwrap_or_default().to_owned();
    req.headers.insert("Host", host_header(url));
    http::write_request(&mut conn, &req).map_err(io_error)?;
    let mut reader = BufReader::new(conn);
    http::read_response(&mut reader, MAX_RESPONSE_BYTES).map_err(http_error)
}

/// `url` with its query replaced by `wsdl`.
pub fn wsdl_url(url: &str) -> Result<Url, TransportError> {
    let mut u = parse_http_url(url)?;
    if !u.query().is_some_and(|q| q.eq_ignore_ascii_case("wsdl")) {
        u.set_query(Some("wsdl"));
    }
    Ok(u)
}

/// Fetches and parses `url?wsdl`; returns the descriptor and the endpoint
/// address it declares.
pub fn fetch_wsdl(url: &str, timeout: Duration) -> Result<(ServiceDescriptor, String), CallError> {
    let u = wsdl_url(url)?;
    let resp = exchange(&u, HttpRequest::new("GET", "/"), timeout)?;
    if resp.status != 200 {
        return Err(TransportError::Status(resp.status).into());
    }
    let doc = xml::parse_document(&resp.body)
        .map_err(|e| CallError::Contract(format!("service description is not XML: {e}")))?;
    parse_wsdl(&doc).map_err(|e| CallError::Contract(e.to_string()))
}

/// Calls the operations of one service.
#[derive(Debug, Clone)]
pub struct ServiceProxy {
    descriptor: ServiceDescriptor,
    endpoint: Url,
    timeout: Duration,
}

impl ServiceProxy {
    /// Fetches the WSDL at `url` and targets the endpoint it declares.
    pub fn connect(url: &str) -> Result<Self, CallError> {
        Self::connect_with_timeout(url, DEFAULT_TIMEOUT)
    }

    pub fn connect_with_timeout(url: &str, timeout: Duration) -> Result<Self, CallError> {
        let (descriptor, endpoint) = fetch_wsdl(url, timeout)?;
        Ok(Self::new(descriptor, &endpoint)?.with_timeout(timeout))
    }

    pub fn new(descriptor: ServiceDescriptor, endpoint: &str) -> Result<Self, CallError> {
        let violations = validate_descriptor(&descriptor);
        if let Some(v) = violations.first() {
            return Err(CallError::Contract(format!("invalid descriptor: {v}")));
        }
        let endpoint = parse_http_url(endpoint).map_err(|e| CallError::Contract(format!("bad endpoint: {e}")))?;
        Ok(ServiceProxy {
            descriptor,
            endpoint,
            timeout: DEFAULT_TIMEOUT,
        })
    }

    /// Covers connect, send and receive together.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn descriptor(&self) -> &ServiceDescriptor {
        &self.descriptor
    }

    pub fn endpoint(&self) -> &str {
        self.endpoint.as_str()
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    /// Checks `args` against the operation's parameter list: same names,
    /// same order, well-typed values.
    pub fn check_call(&self, operation: &str, args: &[(&str, Value)]) -> Result<(), CallError> {
        let d = &self.descriptor;
        let op = d
            .operation(operation)
            .ok_or_else(|| CallError::Contract(format!("unknown operation `{operation}`")))?;
        if args.len() != op.params.len() {
            return Err(CallError::Contract(format!(
                "{operation}: expected {} arguments, got {}",
                op.params.len(),
                args.len()
            )));
        }
        for ((name, value), (pname, ty)) in args.iter().zip(&op.params) {
            if name != pname {
                return Err(CallError::Contract(format!(
                    "{operation}: expected argument `{pname}`, got `{name}`"
                )));
            }
            check_value(value, ty, &d.records).map_err(|e| CallError::Contract(format!("{operation}.{pname}: {e}")))?;
        }
        Ok(())
    }

    /// Invokes `operation`. Returns `None` for void operations.
    pub fn call(&self, operation: &str, args: &[(&str, Value)]) -> Result<Option<Value>, CallError> {
        self.check_call(operation, args)?;
        let owned = args.iter().map(|(n, v)| ((*n).to_owned(), v.clone())).collect();
        self.call_unchecked(operation, owned)
    }

    /// Sends a call without the client-side checks. The response is still
    /// decoded and checked against the descriptor.
    pub fn call_unchecked(&self, operation: &str, args: Vec<(String, Value)>) -> Result<Option<Value>, CallError> {
        let d = &self.descriptor;
        let qname = QName::try_new(d.target_namespace.as_str(), operation)
            .map_err(|_| CallError::Contract(format!("invalid operation name `{operation}`")))?;
        let envelope = SoapEnvelope::Call { operation: qname, args };
        let action = d.soap_action(operation);
        let resp = post_envelope(&self.endpoint, &envelope, Some(&action), self.timeout)?;
        self.decode_response(operation, resp)
    }

    fn decode_response(&self, operation: &str, resp: HttpResponse) -> Result<Option<Value>, CallError> {
        let is_xml = resp
            .content_type()
            .is_some_and(|ct| ct.to_ascii_lowercase().starts_with("text/xml"));
        if !matches!(resp.status, 200 | 500) || !is_xml {
            return Err(TransportError::Status(resp.status).into());
        }
        let malformed = |e: &dyn fmt::Display| {
            if resp.status == 500 {
                CallError::Transport(TransportError::Status(500))
            } else {
                CallError::Contract(format!("malformed response: {e}"))
            }
        };
        let doc = xml::parse_document(&resp.body).map_err(|e| malformed(&e))?;
        let envelope = soap::decode_envelope(&doc, &self.descriptor).map_err(|e| malformed(&e))?;
        match envelope {
            SoapEnvelope::Fault(f) => Err(CallError::Fault(f)),
            _ if resp.status != 200 => Err(TransportError::Status(resp.status).into()),
            SoapEnvelope::Response { operation: got, result } => {
                if got.local_name() != operation {
                    return Err(CallError::Contract(format!(
                        "response is for {}, expected {operation}",
                        got.local_name()
                    )));
                }
                let op = self
                    .descriptor
                    .operation(operation)
                    .expect("decoded responses name known operations");
                match (&op.returns, &result) {
                    (TypeRef::Void, None) => Ok(None),
                    (ty, Some(v)) if *ty != TypeRef::Void => {
                        check_value(v, ty, &self.descriptor.records)
                            .map_err(|e| CallError::Contract(format!("{operation} result: {e}")))?;
                        Ok(result)
                    }
                    _ => Err(CallError::Contract(format!(
                        "{operation} result does not match return type {}",
                        op.returns
                    ))),
                }
            }
            SoapEnvelope::Call { .. } => Err(CallError::Contract("response body holds a call, not a result".into())),
        }
    }
}

/// POSTs an envelope. `soap_action` is sent quoted when given.
pub fn post_envelope(
    endpoint: &Url,
    envelope: &SoapEnvelope,
    soap_action: Option<&str>,
    timeout: Duration,
) -> Result<HttpResponse, CallError> {
    let body = xml::serialize_document(&soap::encode_envelope(envelope));
    post_raw(endpoint, body, soap_action, timeout)
}

/// POSTs raw bytes as a SOAP request.
pub fn post_raw(
    endpoint: &Url,
    body: Vec<u8>,
    soap_action: Option<&str>,
    timeout: Duration,
) -> Result<HttpResponse, CallError> {
    let mut req = HttpRequest::new("POST", "/").with_body(body);
    req.headers.insert("Content-Type", XML_CONTENT_TYPE);
    if let Some(a) = soap_action {
        req.headers.insert("SOAPAction", format!("\"{a}\""));
    }
    exchange(endpoint, req, timeout)
}
