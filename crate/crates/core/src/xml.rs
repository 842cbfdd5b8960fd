//! A namespace-aware subset of XML 1.0.
//!
//! The parser builds an immutable tree of [`Element`]s and text with every
//! prefix resolved to its namespace URI. DOCTYPE declarations and processing
//! instructions (other than the leading XML declaration) are rejected;
//! comments are discarded; CDATA sections inside elements are read as text.
//!
//! Whitespace-only text that sits between child elements is dropped, so
//! data-oriented documents compare equal regardless of indentation.
//!
//! The serializer always writes UTF-8 with an XML declaration. Namespaces are
//! written with prefixes only, never as a default namespace. Prefixes declared
//! on an element with [`Element::declare_prefix`] are honored; every other
//! namespace gets a generated `ns0`, `ns1`, ... prefix in first-use order.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

/// Namespace permanently bound to the `xml` prefix.
pub const XML_NS: &str = "http://www.w3.org/XML/1998/namespace";

const XML_DECLARATION: &str = r#"<?xml version="1.0" encoding="utf-8"?>"#;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum XmlError {
    #[error("malformed XML at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("unbound namespace prefix `{0}`")]
    UnboundPrefix(String),
    #[error("duplicate attribute `{0}`")]
    DuplicateAttribute(String),
    #[error("unsupported XML construct: {0}")]
    UnsupportedConstruct(String),
    #[error("bad entity reference at byte {0}")]
    BadEntityReference(usize),
    #[error("invalid XML name `{0}`")]
    InvalidName(String),
}

impl XmlError {
    fn malformed(offset: usize, reason: impl Into<String>) -> Self {
        XmlError::Malformed {
            offset,
            reason: reason.into(),
        }
    }
}

/// Returns true if `s` is usable as an unprefixed XML name.
pub fn is_ncname(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if is_name_start(c) => chars.all(is_name_char),
        _ => false,
    }
}

fn is_name_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_name_char(c: char) -> bool {
    c == '_' || c == '-' || c == '.' || c.is_alphanumeric()
}

fn is_xml_space(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\n' | '\r')
}

/// An expanded name: local part plus namespace URI (empty for no namespace).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QName {
    namespace_uri: String,
    local_name: String,
}

impl QName {
    /// Builds a name, panicking if `local_name` is not an NCName.
    ///
    /// Use [`QName::try_new`] for names that come from untrusted input.
    pub fn new(namespace_uri: impl Into<String>, local_name: impl Into<String>) -> Self {
        match Self::try_new(namespace_uri, local_name) {
            Ok(name) => name,
            Err(err) => panic!("{err}"),
        }
    }

    pub fn try_new(namespace_uri: impl Into<String>, local_name: impl Into<String>) -> Result<Self, XmlError> {
        let local_name = local_name.into();
        if !is_ncname(&local_name) {
            return Err(XmlError::InvalidName(local_name));
        }
        Ok(QName {
            namespace_uri: namespace_uri.into(),
            local_name,
        })
    }

    /// A name in no namespace.
    pub fn local(local_name: impl Into<String>) -> Self {
        Self::new("", local_name)
    }

    pub fn local_name(&self) -> &str {
        &self.local_name
    }

    pub fn namespace_uri(&self) -> &str {
        &self.namespace_uri
    }

    pub fn is(&self, namespace_uri: &str, local_name: &str) -> bool {
        self.namespace_uri == namespace_uri && self.local_name == local_name
    }
}

impl fmt::Display for QName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.namespace_uri.is_empty() {
            f.write_str(&self.local_name)
        } else {
            write!(f, "{{{}}}{}", self.namespace_uri, self.local_name)
        }
    }
}

#[derive(Debug, Clone)]
pub enum XmlNode {
    Element(Element),
    Text(String),
}

impl XmlNode {
    pub fn as_element(&self) -> Option<&Element> {
        match self {
            XmlNode::Element(e) => Some(e),
            XmlNode::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            XmlNode::Text(t) => Some(t),
            XmlNode::Element(_) => None,
        }
    }
}

impl From<Element> for XmlNode {
    fn from(e: Element) -> Self {
        XmlNode::Element(e)
    }
}

impl PartialEq for XmlNode {
    fn eq(&self, other: &Self) -> bool {
        nodes_equal(self, other)
    }
}

/// An element node. Attribute names are unique and adjacent text children
/// are always merged.
#[derive(Debug, Clone)]
pub struct Element {
    name: QName,
    attributes: Vec<(QName, String)>,
    children: Vec<XmlNode>,
    // (prefix, uri); "" is the default namespace. Not part of equality.
    namespace_decls: Vec<(String, String)>,
}

impl Element {
    pub fn new(name: QName) -> Self {
        Element {
            name,
            attributes: Vec::new(),
            children: Vec::new(),
            namespace_decls: Vec::new(),
        }
    }

    pub fn name(&self) -> &QName {
        &self.name
    }

    pub fn attributes(&self) -> &[(QName, String)] {
        &self.attributes
    }

    pub fn children(&self) -> &[XmlNode] {
        &self.children
    }

    /// Namespace declarations made on this element, as `(prefix, uri)`.
    /// The empty prefix stands for a default namespace declaration.
    pub fn namespace_decls(&self) -> &[(String, String)] {
        &self.namespace_decls
    }

    pub fn attribute(&self, name: &QName) -> Option<&str> {
        self.attributes.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }

    /// Value of an attribute in no namespace.
    pub fn attr(&self, local_name: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(n, _)| n.namespace_uri.is_empty() && n.local_name == local_name)
            .map(|(_, v)| v.as_str())
    }

    /// Sets an attribute, replacing any previous value under the same name.
    pub fn set_attribute(&mut self, name: QName, value: impl Into<String>) {
        let value = value.into();
        match self.attributes.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.attributes.push((name, value)),
        }
    }

    pub fn with_attribute(mut self, name: QName, value: impl Into<String>) -> Self {
        self.set_attribute(name, value);
        self
    }

    /// Shorthand for an attribute in no namespace.
    pub fn with_attr(self, local_name: &str, value: impl Into<String>) -> Self {
        self.with_attribute(QName::local(local_name), value)
    }

    pub fn push_child(&mut self, child: impl Into<XmlNode>) {
        match child.into() {
            XmlNode::Text(t) => self.push_text(&t),
            e @ XmlNode::Element(_) => self.children.push(e),
        }
    }

    pub fn with_child(mut self, child: impl Into<XmlNode>) -> Self {
        self.push_child(child);
        self
    }

    pub fn push_text(&mut self, text: &str) {
        if text.is_empty() {
            return;
        }
        if let Some(XmlNode::Text(last)) = self.children.last_mut() {
            last.push_str(text);
        } else {
            self.children.push(XmlNode::Text(text.to_owned()));
        }
    }

    pub fn with_text(mut self, text: &str) -> Self {
        self.push_text(text);
        self
    }

    /// Asks the serializer to bind `prefix` to `uri` on this element.
    ///
    /// Panics if `prefix` is not an NCName, is `xml`/`xmlns`, or `uri` is empty.
    pub fn declare_prefix(&mut self, prefix: &str, uri: &str) {
        assert!(
            is_ncname(prefix) && prefix != "xml" && prefix != "xmlns" && !uri.is_empty(),
            "invalid namespace declaration {prefix}={uri}"
        );
        self.namespace_decls.retain(|(p, _)| p != prefix);
        self.namespace_decls.push((prefix.to_owned(), uri.to_owned()));
    }

    pub fn with_prefix(mut self, prefix: &str, uri: &str) -> Self {
        self.declare_prefix(prefix, uri);
        self
    }

    pub fn child_elements(&self) -> impl DoubleEndedIterator<Item = &Element> {
        self.children.iter().filter_map(XmlNode::as_element)
    }

    pub fn has_child_elements(&self) -> bool {
        self.children.iter().any(|c| c.as_element().is_some())
    }

    /// First child element with the given expanded name.
    pub fn find_child(&self, namespace_uri: &str, local_name: &str) -> Option<&Element> {
        self.child_elements().find(|e| e.name.is(namespace_uri, local_name))
    }

    /// Concatenation of the direct text children.
    pub fn text(&self) -> String {
        self.children.iter().filter_map(XmlNode::as_text).collect()
    }

    /// True if every direct text child is whitespace.
    pub fn has_only_whitespace_text(&self) -> bool {
        self.children
            .iter()
            .filter_map(XmlNode::as_text)
            .all(|t| t.chars().all(is_xml_space))
    }

    fn normalized_children(&self) -> Vec<&XmlNode> {
        if self.has_child_elements() {
            self.children
                .iter()
                .filter(|c| match c {
                    XmlNode::Text(t) => !t.chars().all(is_xml_space),
                    XmlNode::Element(_) => true,
                })
                .collect()
        } else {
            self.children.iter().collect()
        }
    }
}

impl PartialEq for Element {
    fn eq(&self, other: &Self) -> bool {
        elements_equal(self, other)
    }
}

/// A document: exactly one root element, always UTF-8.
#[derive(Debug, Clone, PartialEq)]
pub struct XmlDocument {
    root: Element,
}

impl XmlDocument {
    pub fn new(root: Element) -> Self {
        XmlDocument { root }
    }

    pub fn root(&self) -> &Element {
        &self.root
    }

    pub fn into_root(self) -> Element {
        self.root
    }

    pub fn encoding(&self) -> &'static str {
        "utf-8"
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serialize_document(self)
    }
}

/// Structural equality: names by (local, uri), attributes as a set, children
/// in order after whitespace normalization. Prefixes are ignored.
pub fn nodes_equal(a: &XmlNode, b: &XmlNode) -> bool {
    match (a, b) {
        (XmlNode::Text(x), XmlNode::Text(y)) => x == y,
        (XmlNode::Element(x), XmlNode::Element(y)) => elements_equal(x, y),
        _ => false,
    }
}

fn elements_equal(a: &Element, b: &Element) -> bool {
    if a.name != b.name || a.attributes.len() != b.attributes.len() {
        return false;
    }
    let mut xs: Vec<_> = a.attributes.iter().collect();
    let mut ys: Vec<_> = b.attributes.iter().collect();
    xs.sort();
    ys.sort();
    if xs != ys {
        return false;
    }
    let ca = a.normalized_children();
    let cb = b.normalized_children();
    ca.len() == cb.len() && ca.iter().zip(&cb).all(|(x, y)| nodes_equal(x, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EscapeContext {
    ElementContent,
    AttributeValue,
}

/// Escapes `raw` for the given context. `<`, `>` and `&` are always escaped,
/// `"` in attribute values, and control characters that a parser would
/// otherwise normalize become numeric references.
pub fn escape_text(raw: &str, context: EscapeContext) -> String {
    let mut out = String::with_capacity(raw.len());
    escape_into(&mut out, raw, context);
    out
}

fn escape_into(out: &mut String, raw: &str, context: EscapeContext) {
    let attr = context == EscapeContext::AttributeValue;
    for c in raw.chars() {
        match c {
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '&' => out.push_str("&amp;"),
            '"' if attr => out.push_str("&quot;"),
            '\t' if attr => out.push_str("&#9;"),
            '\n' if attr => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' | '\n' => out.push(c),
            c if (c as u32) < 0x20 || c == '\u{7f}' => {
                out.push_str(&format!("&#x{:X};", c as u32));
            }
            c => out.push(c),
        }
    }
}

/// Decodes the five predefined entities and numeric character references.
pub fn unescape_text(escaped: &str) -> Result<String, XmlError> {
    unescape_at(escaped, 0)
}

fn unescape_at(escaped: &str, base: usize) -> Result<String, XmlError> {
    if !escaped.contains('&') {
        return Ok(escaped.to_owned());
    }
    let mut out = String::with_capacity(escaped.len());
    let mut rest = escaped;
    let mut offset = base;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        offset += amp;
        rest = &rest[amp..];
        let semi = rest.find(';').ok_or(XmlError::BadEntityReference(offset))?;
        let name = &rest[1..semi];
        let decoded = match name {
            "lt" => '<',
            "gt" => '>',
            "amp" => '&',
            "quot" => '"',
            "apos" => '\'',
            _ => decode_char_ref(name).ok_or(XmlError::BadEntityReference(offset))?,
        };
        out.push(decoded);
        offset += semi + 1;
        rest = &rest[semi + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn decode_char_ref(name: &str) -> Option<char> {
    let digits = name.strip_prefix('#')?;
    let code = if let Some(hex) = digits.strip_prefix('x') {
        if hex.is_empty() || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return None;
        }
        u32::from_str_radix(hex, 16).ok()?
    } else {
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok()?
    };
    char::from_u32(code)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Serializes a document to UTF-8 bytes, starting with the XML declaration.
pub fn serialize_document(doc: &XmlDocument) -> Vec<u8> {
    let mut out = String::from(XML_DECLARATION);
    write_root(&mut out, &doc.root);
    out.into_bytes()
}

/// Serializes an element without an XML declaration.
pub fn serialize_fragment(element: &Element) -> String {
    let mut out = String::new();
    write_root(&mut out, element);
    out
}

fn write_root(out: &mut String, root: &Element) {
    let mut reserved: HashSet<String> = HashSet::new();
    collect_declared_prefixes(root, &mut reserved);
    let mut uris = Vec::new();
    collect_namespaces(root, &mut uris);

    let mut writer = Writer {
        out,
        scopes: vec![("xml".to_owned(), XML_NS.to_owned())],
        reserved,
        next_generated: 0,
    };

    // Namespaces not covered by the root's explicit declarations are declared
    // once on the root with generated prefixes.
    let mut root_extra = Vec::new();
    for uri in uris {
        let covered = root.namespace_decls.iter().any(|(p, u)| !p.is_empty() && *u == uri);
        if !covered && !root_extra.iter().any(|(_, u)| *u == uri) {
            let prefix = writer.fresh_prefix();
            root_extra.push((prefix, uri));
        }
    }
    writer.write_element(root, root_extra);
}

fn collect_declared_prefixes(e: &Element, out: &mut HashSet<String>) {
    for (p, _) in &e.namespace_decls {
        out.insert(p.clone());
    }
    for c in e.child_elements() {
        collect_declared_prefixes(c, out);
    }
}

fn collect_namespaces(e: &Element, out: &mut Vec<String>) {
    let mut note = |uri: &str| {
        if !uri.is_empty() && uri != XML_NS && !out.iter().any(|u| u == uri) {
            out.push(uri.to_owned());
        }
    };
    note(&e.name.namespace_uri);
    for (n, _) in &e.attributes {
        note(&n.namespace_uri);
    }
    for c in e.child_elements() {
        collect_namespaces(c, out);
    }
}

struct Writer<'a> {
    out: &'a mut String,
    scopes: Vec<(String, String)>,
    reserved: HashSet<String>,
    next_generated: usize,
}

impl Writer<'_> {
    fn fresh_prefix(&mut self) -> String {
        loop {
            let candidate = format!("ns{}", self.next_generated);
            self.next_generated += 1;
            if !self.reserved.contains(&candidate) {
                self.reserved.insert(candidate.clone());
                return candidate;
            }
        }
    }

    fn lookup_prefix(&self, uri: &str) -> Option<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for (p, u) in self.scopes.iter().rev() {
            if seen.contains(&p.as_str()) {
                continue;
            }
            if u == uri {
                return Some(p);
            }
            seen.push(p);
        }
        None
    }

    fn prefix_for(&mut self, uri: &str, local_decls: &mut Vec<(String, String)>) -> String {
        if let Some(p) = self.lookup_prefix(uri) {
            return p.to_owned();
        }
        let prefix = self.fresh_prefix();
        self.scopes.push((prefix.clone(), uri.to_owned()));
        local_decls.push((prefix.clone(), uri.to_owned()));
        prefix
    }

    fn qualified(&mut self, name: &QName, local_decls: &mut Vec<(String, String)>) -> String {
        if name.namespace_uri.is_empty() {
            name.local_name.clone()
        } else {
            let prefix = self.prefix_for(&name.namespace_uri, local_decls);
            format!("{prefix}:{}", name.local_name)
        }
    }

    fn write_element(&mut self, e: &Element, extra_decls: Vec<(String, String)>) {
        let depth = self.scopes.len();
        let mut decls: Vec<(String, String)> = e
            .namespace_decls
            .iter()
            .filter(|(p, _)| !p.is_empty())
            .cloned()
            .collect();
        decls.extend(extra_decls);
        self.scopes.extend(decls.iter().cloned());

        let tag = self.qualified(&e.name, &mut decls);
        let attrs: Vec<(String, &str)> = e
            .attributes
            .iter()
            .map(|(n, v)| (self.qualified(n, &mut decls), v.as_str()))
            .collect();

        self.out.push('<');
        self.out.push_str(&tag);
        for (p, u) in &decls {
            self.out.push_str(" xmlns:");
            self.out.push_str(p);
            self.out.push_str("=\"");
            escape_into(self.out, u, EscapeContext::AttributeValue);
            self.out.push('"');
        }
        for (n, v) in attrs {
            self.out.push(' ');
            self.out.push_str(&n);
            self.out.push_str("=\"");
            escape_into(self.out, v, EscapeContext::AttributeValue);
            self.out.push('"');
        }
        if e.children.is_empty() {
            self.out.push_str("/>");
        } else {
            self.out.push('>');
            for child in &e.children {
                match child {
                    XmlNode::Text(t) => escape_into(self.out, t, EscapeContext::ElementContent),
                    XmlNode::Element(c) => self.write_element(c, Vec::new()),
                }
            }
            self.out.push_str("</");
            self.out.push_str(&tag);
            self.out.push('>');
        }
        self.scopes.truncate(depth);
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Parses a complete document.
pub fn parse_document(input: &[u8]) -> Result<XmlDocument, XmlError> {
    let text = std::str::from_utf8(input).map_err(|e| XmlError::malformed(e.valid_up_to(), "invalid UTF-8"))?;
    Parser::new(text).document()
}

/// Parses a document from a string.
pub fn parse_str(input: &str) -> Result<XmlDocument, XmlError> {
    Parser::new(input).document()
}

struct Frame {
    raw_name: String,
    element: Element,
    scope_len: usize,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    scopes: Vec<(String, String)>,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            pos: 0,
            scopes: vec![("xml".to_owned(), XML_NS.to_owned())],
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn starts_with(&self, s: &str) -> bool {
        self.rest().starts_with(s)
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn err(&self, reason: impl Into<String>) -> XmlError {
        XmlError::malformed(self.pos, reason)
    }

    fn skip_ws(&mut self) -> bool {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if !is_xml_space(c) {
                break;
            }
            self.pos += 1;
        }
        self.pos > start
    }

    fn expect(&mut self, s: &str) -> Result<(), XmlError> {
        if self.starts_with(s) {
            self.pos += s.len();
            Ok(())
        } else {
            Err(self.err(format!("expected `{s}`")))
        }
    }

    fn document(mut self) -> Result<XmlDocument, XmlError> {
        if self.starts_with("\u{feff}") {
            self.pos += '\u{feff}'.len_utf8();
        }
        if self.starts_with("<?xml") && self.src[self.pos + 5..].chars().next().is_some_and(is_xml_space) {
            self.xml_declaration()?;
        }
        self.misc()?;
        if !self.starts_with("<") {
            return Err(self.err("expected root element"));
        }
        let root = self.root_element()?;
        self.misc()?;
        if self.pos < self.src.len() {
            return Err(self.err("content after root element"));
        }
        Ok(XmlDocument { root })
    }

    fn xml_declaration(&mut self) -> Result<(), XmlError> {
        let start = self.pos;
        let end = self
            .rest()
            .find("?>")
            .ok_or_else(|| self.err("unterminated XML declaration"))?;
        let body = &self.src[start + 5..start + end];
        if !body.contains("version") {
            return Err(self.err("XML declaration without version"));
        }
        if let Some(idx) = body.find("encoding") {
            let tail = body[idx + 8..].trim_start().trim_start_matches('=').trim_start();
            let enc: String = tail
                .trim_start_matches(['"', '\''])
                .chars()
                .take_while(|c| *c != '"' && *c != '\'')
                .collect();
            if !enc.eq_ignore_ascii_case("utf-8") && !enc.eq_ignore_ascii_case("utf8") {
                return Err(XmlError::UnsupportedConstruct(format!("encoding {enc}")));
            }
        }
        self.pos = start + end + 2;
        Ok(())
    }

    /// Whitespace and comments outside the root element.
    fn misc(&mut self) -> Result<(), XmlError> {
        loop {
            self.skip_ws();
            if self.starts_with("<!--") {
                self.comment()?;
            } else if self.starts_with("<!DOCTYPE") {
                return Err(XmlError::UnsupportedConstruct("DOCTYPE".into()));
            } else if self.starts_with("<?") {
                return Err(XmlError::UnsupportedConstruct("processing instruction".into()));
            } else if self.starts_with("<![CDATA[") {
                return Err(XmlError::UnsupportedConstruct("CDATA outside the root element".into()));
            } else {
                return Ok(());
            }
        }
    }

    fn comment(&mut self) -> Result<(), XmlError> {
        let end = self.rest()[4..]
            .find("-->")
            .ok_or_else(|| self.err("unterminated comment"))?;
        self.pos += 4 + end + 3;
        Ok(())
    }

    fn raw_name(&mut self) -> Result<&'a str, XmlError> {
        let start = self.pos;
        for c in self.rest().chars() {
            if is_name_char(c) || c == ':' {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(self.err("expected a name"));
        }
        Ok(&self.src[start..self.pos])
    }

    fn split_name(&self, raw: &str, at: usize) -> Result<(Option<&'a str>, &'a str), XmlError> {
        let raw: &'a str = &self.src[at..at + raw.len()];
        let (prefix, local) = match raw.split_once(':') {
            Some((p, l)) => (Some(p), l),
            None => (None, raw),
        };
        if !is_ncname(local) || prefix.is_some_and(|p| !is_ncname(p)) {
            return Err(XmlError::malformed(at, format!("invalid name `{raw}`")));
        }
        Ok((prefix, local))
    }

    fn lookup(&self, prefix: &str) -> Option<&str> {
        self.scopes
            .iter()
            .rev()
            .find(|(p, _)| p == prefix)
            .map(|(_, u)| u.as_str())
    }

    fn root_element(&mut self) -> Result<Element, XmlError> {
        let mut stack: Vec<Frame> = Vec::new();
        loop {
            // At a '<' that opens a start tag.
            let (frame, empty) = self.start_tag()?;
            if empty {
                let element = self.close(frame);
                match stack.last_mut() {
                    Some(parent) => parent.element.children.push(XmlNode::Element(element)),
                    None => return Ok(element),
                }
            } else {
                stack.push(frame);
            }

            // Content until the next start tag, or until the stack empties.
            loop {
                let Some(top) = stack.last_mut() else {
                    unreachable!("content loop entered with empty stack")
                };
                let text_start = self.pos;
                let lt = self.rest().find('<');
                let Some(lt) = lt else {
                    return Err(XmlError::malformed(
                        self.src.len(),
                        format!("unexpected end of input inside <{}>", top.raw_name),
                    ));
                };
                if lt > 0 {
                    let raw = &self.src[text_start..text_start + lt];
                    let text = unescape_at(&normalize_newlines(raw), text_start).map_err(|e| match e {
                        XmlError::BadEntityReference(o) => XmlError::malformed(o, "bad entity reference"),
                        other => other,
                    })?;
                    top.element.push_text(&text);
                    self.pos += lt;
                }
                if self.starts_with("</") {
                    let frame = stack.pop().expect("non-empty stack");
                    self.end_tag(&frame)?;
                    let element = self.close(frame);
                    match stack.last_mut() {
                        Some(parent) => parent.element.children.push(XmlNode::Element(element)),
                        None => return Ok(element),
                    }
                } else if self.starts_with("<!--") {
                    self.comment()?;
                } else if self.starts_with("<![CDATA[") {
                    let body_start = self.pos + 9;
                    let end = self.src[body_start..]
                        .find("]]>")
                        .ok_or_else(|| self.err("unterminated CDATA section"))?;
                    let text = normalize_newlines(&self.src[body_start..body_start + end]);
                    stack.last_mut().expect("non-empty stack").element.push_text(&text);
                    self.pos = body_start + end + 3;
                } else if self.starts_with("<?") {
                    return Err(XmlError::UnsupportedConstruct("processing instruction".into()));
                } else if self.starts_with("<!") {
                    return Err(XmlError::UnsupportedConstruct("markup declaration".into()));
                } else {
                    break;
                }
            }
        }
    }

    fn close(&mut self, frame: Frame) -> Element {
        self.scopes.truncate(frame.scope_len);
        let mut element = frame.element;
        if element.has_child_elements() {
            element.children.retain(|c| match c {
                XmlNode::Text(t) => !t.chars().all(is_xml_space),
                XmlNode::Element(_) => true,
            });
        }
        element
    }

    fn start_tag(&mut self) -> Result<(Frame, bool), XmlError> {
        let tag_start = self.pos;
        self.expect("<")?;
        let name_at = self.pos;
        let raw_name = self.raw_name()?;
        let (prefix, local) = self.split_name(raw_name, name_at)?;

        let mut raw_attrs: Vec<(&'a str, usize, String)> = Vec::new();
        let empty;
        loop {
            let had_ws = self.skip_ws();
            if self.starts_with("/>") {
                self.pos += 2;
                empty = true;
                break;
            }
            if self.starts_with(">") {
                self.pos += 1;
                empty = false;
                break;
            }
            if self.pos >= self.src.len() {
                return Err(self.err("unexpected end of input in start tag"));
            }
            if !had_ws {
                return Err(self.err("expected whitespace before attribute"));
            }
            let at = self.pos;
            let name = self.raw_name()?;
            self.skip_ws();
            self.expect("=")?;
            self.skip_ws();
            let quote = match self.peek() {
                Some(q @ ('"' | '\'')) => q,
                _ => return Err(self.err("expected quoted attribute value")),
            };
            self.pos += 1;
            let value_start = self.pos;
            let end = self
                .rest()
                .find(quote)
                .ok_or_else(|| self.err("unterminated attribute value"))?;
            let raw_value = &self.src[value_start..value_start + end];
            if let Some(lt) = raw_value.find('<') {
                return Err(XmlError::malformed(value_start + lt, "`<` in attribute value"));
            }
            let normalized: String = normalize_newlines(raw_value)
                .chars()
                .map(|c| if is_xml_space(c) { ' ' } else { c })
                .collect();
            let value = unescape_at(&normalized, value_start).map_err(|e| match e {
                XmlError::BadEntityReference(o) => XmlError::malformed(o, "bad entity reference"),
                other => other,
            })?;
            self.pos = value_start + end + 1;
            if raw_attrs.iter().any(|(n, _, _)| *n == name) {
                return Err(XmlError::DuplicateAttribute(name.to_owned()));
            }
            raw_attrs.push((name, at, value));
        }

        let scope_len = self.scopes.len();
        let mut decls = Vec::new();
        let mut plain = Vec::new();
        for (name, at, value) in raw_attrs {
            if name == "xmlns" {
                decls.push((String::new(), value));
            } else if let Some(p) = name.strip_prefix("xmlns:") {
                if !is_ncname(p) || p == "xmlns" {
                    return Err(XmlError::malformed(at, format!("cannot declare prefix `{p}`")));
                }
                if value.is_empty() {
                    return Err(XmlError::malformed(at, format!("empty URI for prefix `{p}`")));
                }
                if (p == "xml") != (value == XML_NS) {
                    return Err(XmlError::malformed(at, "misuse of the xml prefix"));
                }
                decls.push((p.to_owned(), value));
            } else {
                plain.push((name, at, value));
            }
        }
        self.scopes.extend(decls.iter().cloned());

        let ns = match prefix {
            Some(p) => self
                .lookup(p)
                .ok_or_else(|| XmlError::UnboundPrefix(p.to_owned()))?
                .to_owned(),
            None => self.lookup("").unwrap_or("").to_owned(),
        };
        let mut element = Element::new(QName {
            namespace_uri: ns,
            local_name: local.to_owned(),
        });
        element.namespace_decls = decls;
        for (name, at, value) in plain {
            let (p, l) = self.split_name(name, at)?;
            let ns = match p {
                Some(p) => self
                    .lookup(p)
                    .ok_or_else(|| XmlError::UnboundPrefix(p.to_owned()))?
                    .to_owned(),
                None => String::new(),
            };
            let qname = QName {
                namespace_uri: ns,
                local_name: l.to_owned(),
            };
            if element.attributes.iter().any(|(n, _)| *n == qname) {
                return Err(XmlError::DuplicateAttribute(name.to_owned()));
            }
            element.attributes.push((qname, value));
        }
        let _ = tag_start;
        Ok((
            Frame {
                raw_name: raw_name.to_owned(),
                element,
                scope_len,
            },
            empty,
        ))
    }

    fn end_tag(&mut self, frame: &Frame) -> Result<(), XmlError> {
        let at = self.pos;
        self.expect("</")?;
        let name = self.raw_name()?;
        if name != frame.raw_name {
            return Err(XmlError::malformed(
                at,
                format!("mismatched end tag: expected </{}>, found </{name}>", frame.raw_name),
            ));
        }
        self.skip_ws();
        self.expect(">")
    }
}

fn normalize_newlines(raw: &str) -> std::borrow::Cow<'_, str> {
    if raw.contains('\r') {
        std::borrow::Cow::Owned(raw.replace("\r\n", "\n").replace('\r', "\n"))
    } else {
        std::borrow::Cow::Borrowed(raw)
    }
}

/// Prefix bindings in scope at some element, for resolving QName-valued
/// attribute content such as `type="tns:Employee"`.
#[derive(Debug, Clone, Default)]
pub struct NamespaceContext {
    bindings: Vec<(String, String)>,
}

impl NamespaceContext {
    pub fn new() -> Self {
        NamespaceContext {
            bindings: vec![("xml".to_owned(), XML_NS.to_owned())],
        }
    }

    /// Context inside `element`.
    pub fn enter(&self, element: &Element) -> Self {
        let mut bindings = self.bindings.clone();
        bindings.extend(element.namespace_decls.iter().cloned());
        NamespaceContext { bindings }
    }

    pub fn uri_for(&self, prefix: &str) -> Option<&str> {
        self.bindings
            .iter()
            .rev()
            .find(|(p, _)| p == prefix)
            .map(|(_, u)| u.as_str())
    }

    /// Resolves `prefix:local` (or `local` against the default namespace).
    pub fn resolve(&self, value: &str) -> Result<QName, XmlError> {
        let value = value.trim();
        match value.split_once(':') {
            Some((p, l)) => {
                let uri = self.uri_for(p).ok_or_else(|| XmlError::UnboundPrefix(p.to_owned()))?;
                QName::try_new(uri, l)
            }
            None => QName::try_new(self.uri_for("").unwrap_or(""), value),
        }
    }
}
