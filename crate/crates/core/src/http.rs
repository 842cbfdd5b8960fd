//! Minimal HTTP/1.1 message framing shared by the host and the client.
//!
//! Bodies are framed by `Content-Length` only; chunked transfer coding is
//! rejected. Every connection carries exactly one exchange.

use std::io::{self, BufRead, Read, Write};

use thiserror::Error;

/// Upper bound on the request line plus headers.
pub const MAX_HEAD_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Headers(Vec<(String, String)>);

impl Headers {
    pub fn new() -> Self {
        Headers(Vec::new())
    }

    /// First value for `name`, compared case-insensitively.
    pub fn get(&self, name: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: impl Into<String>) {
        let name = name.into();
        self.0.retain(|(n, _)| !n.eq_ignore_ascii_case(&name));
        self.0.push((name, value.into()));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(n, v)| (n.as_str(), v.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    pub path: String,
    /// Text after `?`, without the `?`; empty when absent.
    pub query: String,
    pub headers: Headers,
    pub body: Vec<u8>,
}

impl HttpRequest {
    pub fn new(method: &str, target: &str) -> Self {
        let (path, query) = split_target(target);
        HttpRequest {
            method: method.to_owned(),
            path: path.to_owned(),
            query: query.to_owned(),
            headers: Headers::new(),
            body: Vec::new(),
        }
    }

    pub fn header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.insert(name, value);
        self
    }

    pub fn with_body(mut self, body: Vec<u8>) -> Self {
        self.body = body;
        self
    }

    pub fn target(&self) -> String {
        if self.query.is_empty() {
            self.path.clone()
        } else {
            format!("{}?{}", self.path, self.query)
        }
    }
}

fn split_target(target: &str) -> (&str, &str) {
    target.split_once('?').unwrap_or((target, ""))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: Headers,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn new(status: u16, content_type: &str, body: impl Into<Vec<u8>>) -> Self {
        let mut headers = Headers::new();
        headers.insert("Content-Type", content_type);
        HttpResponse {
            status,
            headers,
            body: body.into(),
        }
    }

    /// A plain-text response carrying the reason phrase.
    pub fn status_only(status: u16) -> Self {
        Self::new(
            status,
            "text/plain; charset=utf-8",
            format!("{} {}\n", status, reason_phrase(status)),
        )
    }

    pub fn content_type(&self) -> Option<&str> {
        self.headers.get("Content-Type")
    }
}

pub fn reason_phrase(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        403 => "Forbidden",
        404 => "Not Found",
        405 => "Method Not Allowed",
        408 => "Request Timeout",
        411 => "Length Required",
        413 => "Payload Too Large",
        431 => "Request Header Fields Too Large",
        500 => "Internal Server Error",
        501 => "Not Implemented",
        505 => "HTTP Version Not Supported",
        _ => "Unknown",
    }
}

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("connection closed before a complete message")]
    Closed,
    #[error("bad message: {0}")]
    BadMessage(String),
    #[error("Content-Length required")]
    LengthRequired,
    #[error("chunked transfer coding is not supported")]
    Chunked,
    #[error("body of {0} bytes exceeds the limit")]
    TooLarge(u64),
    #[error("message head exceeds {MAX_HEAD_BYTES} bytes")]
    HeadTooLarge,
    #[error("unsupported HTTP version {0}")]
    Version(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl HttpError {
    /// Status a server should answer with, if any answer is possible.
    pub fn status(&self) -> Option<u16> {
        match self {
            HttpError::Closed | HttpError::Io(_) => None,
            HttpError::BadMessage(_) | HttpError::Chunked => Some(400),
            HttpError::LengthRequired => Some(411),
            HttpError::TooLarge(_) => Some(413),
            HttpError::HeadTooLarge => Some(431),
            HttpError::Version(_) => Some(505),
        }
    }
}

fn read_line(reader: &mut impl BufRead, budget: &mut usize) -> Result<String, HttpError> {
    let mut buf = Vec::new();
    let limit = (*budget as u64) + 1;
    let n = Read::take(&mut *reader, limit).read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Err(HttpError::Closed);
    }
    if n > *budget {
        return Err(HttpError::HeadTooLarge);
    }
    *budget -= n;
    if buf.last() != Some(&b'\n') {
        return Err(HttpError::Closed);
    }
    buf.pop();
    if buf.last() == Some(&b'\r') {
        buf.pop();
    }
    String::from_utf8(buf).map_err(|_| HttpError::BadMessage("non-UTF-8 header line".into()))
}

fn read_headers(reader: &mut impl BufRead, budget: &mut usize) -> Result<Headers, HttpError> {
    let mut headers = Headers::new();
    loop {
        let line = read_line(reader, budget)?;
        if line.is_empty() {
            return Ok(headers);
        }
        let (name, value) = line
            .split_once(':')
            .ok_or_else(|| HttpError::BadMessage(format!("bad header line `{line}`")))?;
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(HttpError::BadMessage(format!("bad header name `{name}`")));
        }
        headers.0.push((name.to_owned(), value.trim().to_owned()));
    }
}

fn content_length(headers: &Headers) -> Result<Option<u64>, HttpError> {
    if headers
        .get("Transfer-Encoding")
        .is_some_and(|te| !te.eq_ignore_ascii_case("identity"))
    {
        return Err(HttpError::Chunked);
    }
    let mut found: Option<u64> = None;
    for (n, v) in headers.iter() {
        if n.eq_ignore_ascii_case("Content-Length") {
            let len: u64 = v
                .parse()
                .map_err(|_| HttpError::BadMessage(format!("bad Content-Length `{v}`")))?;
            if found.is_some_and(|f| f != len) {
                return Err(HttpError::BadMessage("conflicting Content-Length".into()));
            }
            found = Some(len);
        }
    }
    Ok(found)
}

fn read_body(reader: &mut impl BufRead, len: u64, max: usize) -> Result<Vec<u8>, HttpError> {
    if len > max as u64 {
        return Err(HttpError::TooLarge(len));
    }
    let mut body = vec![0; len as usize];
    reader.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => HttpError::Closed,
        _ => HttpError::Io(e),
    })?;
    Ok(body)
}

/// Reads one request. POST requires `Content-Length`; other methods may omit
/// it. Bodies larger than `max_body` are refused without being read.
pub fn read_request(reader: &mut impl BufRead, max_body: usize) -> Result<HttpRequest, HttpError> {
    let mut budget = MAX_HEAD_BYTES;
    let line = read_line(reader, &mut budget)?;
    let mut parts = line.split(' ');
    let (Some(method), Some(target), Some(version), None) = (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(HttpError::BadMessage(format!("bad request line `{line}`")));
    };
    if method.is_empty() || !method.bytes().all(|b| b.is_ascii_uppercase()) {
        return Err(HttpError::BadMessage(format!("bad method `{method}`")));
    }
    if !target.starts_with('/') {
        return Err(HttpError::BadMessage(format!("bad request target `{target}`")));
    }
    if version != "HTTP/1.1" && version != "HTTP/1.0" {
        return Err(HttpError::Version(version.to_owned()));
    }
    let headers = read_headers(reader, &mut budget)?;
    let body = match content_length(&headers)? {
        Some(len) => read_body(reader, len, max_body)?,
        None if method == "POST" => return Err(HttpError::LengthRequired),
        None => Vec::new(),
    };
    let (path, query) = split_target(target);
    Ok(HttpRequest {
        method: method.to_owned(),
        path: path.to_owned(),
        query: query.to_owned(),
        headers,
        body,
    })
}

/// Writes a response with `Content-Length` and `Connection: close`.
pub fn write_response(w: &mut impl Write, resp: &HttpResponse) -> io::Result<()> {
    let mut head = format!("HTTP/1.1 {} {}\r\n", resp.status, reason_phrase(resp.status));
    for (n, v) in resp.headers.iter() {
        if n.eq_ignore_ascii_case("Content-Length") || n.eq_ignore_ascii_case("Connection") {
            continue;
        }
        head.push_str(&format!("{n}: {v}\r\n"));
    }
    head.push_str(&format!(
        "Content-Length: {}\r\nConnection: close\r\n\r\n",
        resp.body.len()
    ));
    w.write_all(head.as_bytes())?;
    w.write_all(&resp.body)?;
    w.flush()
}

/// Writes a request with `Content-Length` and `Connection: close`. The
/// caller supplies `Host`.
pub fn write_request(w: &mut impl Write, req: &HttpRequest) -> io::Result<()> {
    let mut head = format!("{} {} HTTP/1.1\r\n", req.method, req.target());
    for (n, v) in req.headers.iter() {
        if n.eq_ignore_ascii_case("Content-Length") || n.eq_ignore_ascii_case("Connection") {
            continue;
        }
        head.push_str(&format!("{n}: {v}\r\n"));
    }
    if req.method == "POST" || !req.body.is_empty() {
        head.push_str(&format!("Content-Length: {}\r\n", req.body.len()));
    }
    head.push_str("Connection: close\r\n\r\n");
    w.write_all(head.as_bytes())?;
    w.write_all(&req.body)?;
    w.flush()
}

/// Reads one response. A response without `Content-Length` extends to the
/// end of the stream.
pub fn read_response(reader: &mut impl BufRead, max_body: usize) -> Result<HttpResponse, HttpError> {
    let mut budget = MAX_HEAD_BYTES;
    let line = read_line(reader, &mut budget)?;
    let mut parts = line.splitn(3, ' ');
    let version = parts.next().unwrap_or_default();
    if !version.starts_with("HTTP/1.") {
        return Err(HttpError::BadMessage(format!("bad status line `{line}`")));
    }
    let status: u16 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .filter(|s| (100..1000).contains(s))
        .ok_or_else(|| HttpError::BadMessage(format!("bad status line `{line}`")))?;
    let headers = read_headers(reader, &mut budget)?;
    let body = match content_length(&headers)? {
        Some(len) => read_body(reader, len, max_body)?,
        None => {
            let mut body = Vec::new();
            let limit = max_body as u64 + 1;
            Read::take(&mut *reader, limit).read_to_end(&mut body)?;
            if body.len() > max_body {
                return Err(HttpError::TooLarge(body.len() as u64));
            }
            body
        }
    };
    Ok(HttpResponse { status, headers, body })
}
