//! SOAP 1.1 envelopes in the document/literal wrapped convention.
//!
//! ```text
//! Call      <Envelope><Body><Op><arg>..</arg>..</Op></Body></Envelope>
//! Response  <Envelope><Body><OpResponse><OpResult>..</OpResult></OpResponse></Body></Envelope>
//! Fault     <Envelope><Body><Fault><faultcode/><faultstring/><detail/></Fault></Body></Envelope>
//! ```
//!
//! Operation wrappers and everything beneath them live in the service's
//! target namespace. Scalar values travel as their canonical lexical form.

use std::fmt;

use thiserror::Error;

use crate::contract::{RecordDef, ServiceDescriptor, TypeRef};
use crate::xml::{Element, QName, XmlDocument};

pub const SOAP_ENV_NS: &str = "http://schemas.xmlsoap.org/soap/envelope/";
pub const SOAP12_ENV_NS: &str = "http://www.w3.org/2003/05/soap-envelope";

/// Element name of each item in a serialized [`Value::TextList`].
pub const LIST_ITEM: &str = "string";

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Text(String),
    Int(i64),
    Boolean(bool),
    /// Always finite.
    Double(f64),
    TextList(Vec<String>),
    Record {
        type_name: String,
        fields: Vec<(String, Value)>,
    },
}

impl Value {
    pub fn type_ref(&self) -> TypeRef {
        match self {
            Value::Text(_) => TypeRef::Text,
            Value::Int(_) => TypeRef::Int,
            Value::Boolean(_) => TypeRef::Boolean,
            Value::Double(_) => TypeRef::Double,
            Value::TextList(_) => TypeRef::TextList,
            Value::Record { type_name, .. } => TypeRef::Record(type_name.clone()),
        }
    }

    /// Field of a record value.
    pub fn field(&self, name: &str) -> Option<&Value> {
        match self {
            Value::Record { fields, .. } => fields.iter().find(|(n, _)| n == name).map(|(_, v)| v),
            _ => None,
        }
    }

    /// Canonical lexical form of a scalar; `None` for lists and records.
    pub fn lexical(&self) -> Option<String> {
        match self {
            Value::Text(s) => Some(s.clone()),
            Value::Int(i) => Some(i.to_string()),
            Value::Boolean(b) => Some(b.to_string()),
            Value::Double(d) => Some(format_double(*d)),
            Value::TextList(_) | Value::Record { .. } => None,
        }
    }
}

/// Shortest decimal text that parses back to exactly `v`.
///
/// Integral values below 10^15 print without a fraction (`5000`); very
/// large or very small magnitudes use exponent form (`1e300`).
pub fn format_double(v: f64) -> String {
    let abs = v.abs();
    if abs == 0.0 || (1e-6..1e15).contains(&abs) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Parses the lexical forms accepted for doubles. Non-finite values are
/// rejected.
pub fn parse_double(s: &str) -> Option<f64> {
    let s = s.trim_matches(is_xml_space);
    let plausible = !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.' | b'e' | b'E'));
    if !plausible {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn parse_int(s: &str) -> Option<i64> {
    let s = s.trim_matches(is_xml_space);
    let digits = s.strip_prefix(['+', '-']).unwrap_or(s);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

pub fn parse_boolean(s: &str) -> Option<bool> {
    match s.trim_matches(is_xml_space) {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

fn is_xml_space(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\n' | '\r')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultCode {
    Client,
    Server,
    VersionMismatch,
    MustUnderstand,
}

impl FaultCode {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultCode::Client => "Client",
            FaultCode::Server => "Server",
            FaultCode::VersionMismatch => "VersionMismatch",
            FaultCode::MustUnderstand => "MustUnderstand",
        }
    }

    /// Parses `prefix:Code` or `prefix:Code.Subcode`.
    pub fn from_qualified(text: &str) -> Option<Self> {
        let text = text.trim_matches(is_xml_space);
        let local = text.rsplit_once(':').map_or(text, |(_, l)| l);
        match local.split('.').next()? {
            "Client" => Some(FaultCode::Client),
            "Server" => Some(FaultCode::Server),
            "VersionMismatch" => Some(FaultCode::VersionMismatch),
            "MustUnderstand" => Some(FaultCode::MustUnderstand),
            _ => None,
        }
    }
}

impl fmt::Display for FaultCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoapFault {
    code: FaultCode,
    string: String,
    detail: Option<String>,
}

impl SoapFault {
    /// An empty `fault_string` is replaced by a generic message.
    pub fn new(code: FaultCode, fault_string: impl Into<String>) -> Self {
        let mut string = fault_string.into();
        if string.is_empty() {
            string = format!("{code} fault");
        }
        SoapFault {
            code,
            string,
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    pub fn code(&self) -> FaultCode {
        self.code
    }

    pub fn fault_string(&self) -> &str {
        &self.string
    }

    pub fn detail(&self) -> Option<&str> {
        self.detail.as_deref()
    }
}

impl fmt::Display for SoapFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.string)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SoapEnvelope {
    Call {
        operation: QName,
        args: Vec<(String, Value)>,
    },
    Response {
        operation: QName,
        result: Option<Value>,
    },
    Fault(SoapFault),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SoapError {
    #[error("not a SOAP 1.1 envelope: {0}")]
    NotSoap(String),
    #[error("envelope uses namespace {0}; only SOAP 1.1 is supported")]
    VersionMismatch(String),
    #[error("unknown operation `{0}`")]
    UnknownOperation(String),
    #[error("type mismatch for `{param}`: expected {expected}, found {found}")]
    TypeMismatch {
        param: String,
        expected: String,
        found: String,
    },
    #[error("malformed SOAP body: {0}")]
    MalformedBody(String),
}

fn env(local: &str) -> Element {
    Element::new(QName::new(SOAP_ENV_NS, local))
}

/// Builds the envelope document for a call, response, or fault.
pub fn encode_envelope(envelope: &SoapEnvelope) -> XmlDocument {
    let body_child = match envelope {
        SoapEnvelope::Call { operation, args } => {
            let mut wrapper = Element::new(operation.clone());
            for (name, value) in args {
                wrapper.push_child(encode_value(
                    QName::new(operation.namespace_uri(), name.as_str()),
                    value,
                ));
            }
            wrapper
        }
        SoapEnvelope::Response { operation, result } => {
            let ns = operation.namespace_uri();
            let mut wrapper = Element::new(QName::new(ns, format!("{}Response", operation.local_name())));
            if let Some(value) = result {
                wrapper.push_child(encode_value(
                    QName::new(ns, format!("{}Result", operation.local_name())),
                    value,
                ));
            }
            wrapper
        }
        SoapEnvelope::Fault(fault) => {
            let mut el = env("Fault")
                .with_child(Element::new(QName::local("faultcode")).with_text(&format!("soap:{}", fault.code)))
                .with_child(Element::new(QName::local("faultstring")).with_text(&fault.string));
            if let Some(detail) = &fault.detail {
                el.push_child(Element::new(QName::local("detail")).with_text(detail));
            }
            el
        }
    };
    XmlDocument::new(
        env("Envelope")
            .with_prefix("soap", SOAP_ENV_NS)
            .with_child(env("Body").with_child(body_child)),
    )
}

/// Serializes one value as an element named `name`. List items and record
/// fields are placed in `name`'s namespace.
pub fn encode_value(name: QName, value: &Value) -> Element {
    let ns = name.namespace_uri().to_owned();
    let mut el = Element::new(name);
    match value {
        Value::TextList(items) => {
            for item in items {
                el.push_child(Element::new(QName::new(ns.as_str(), LIST_ITEM)).with_text(item));
            }
        }
        Value::Record { fields, .. } => {
            for (field, v) in fields {
                el.push_child(encode_value(QName::new(ns.as_str(), field.as_str()), v));
            }
        }
        scalar => {
            el.push_text(&scalar.lexical().expect("scalar value"));
        }
    }
    el
}

fn mismatch(param: &Element, expected: &TypeRef, found: impl Into<String>) -> SoapError {
    let mut found = found.into();
    if found.chars().count() > 40 {
        found = found.chars().take(40).collect::<String>() + "...";
    }
    SoapError::TypeMismatch {
        param: param.name().local_name().to_owned(),
        expected: expected.to_string(),
        found,
    }
}

/// Reads `element` as a value of type `expected`. Record types are looked up
/// in `records`. Surrounding whitespace is trimmed for numeric and boolean
/// text, never for `Text`.
pub fn decode_value(element: &Element, expected: &TypeRef, records: &[RecordDef]) -> Result<Value, SoapError> {
    let ns = element.name().namespace_uri();
    let scalar_text = || -> Result<String, SoapError> {
        if element.has_child_elements() {
            Err(mismatch(element, expected, "element content"))
        } else {
            Ok(element.text())
        }
    };
    match expected {
        TypeRef::Text => Ok(Value::Text(scalar_text()?)),
        TypeRef::Int => {
            let text = scalar_text()?;
            parse_int(&text)
                .map(Value::Int)
                .ok_or_else(|| mismatch(element, expected, format!("`{text}`")))
        }
        TypeRef::Double => {
            let text = scalar_text()?;
            parse_double(&text)
                .map(Value::Double)
                .ok_or_else(|| mismatch(element, expected, format!("`{text}`")))
        }
        TypeRef::Boolean => {
            let text = scalar_text()?;
            parse_boolean(&text)
                .map(Value::Boolean)
                .ok_or_else(|| mismatch(element, expected, format!("`{text}`")))
        }
        TypeRef::TextList => {
            if !element.has_only_whitespace_text() {
                return Err(mismatch(element, expected, format!("text `{}`", element.text())));
            }
            element
                .child_elements()
                .map(|item| {
                    if item.name().is(ns, LIST_ITEM) && !item.has_child_elements() {
                        Ok(item.text())
                    } else {
                        Err(mismatch(element, expected, format!("item {}", item.name())))
                    }
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Value::TextList)
        }
        TypeRef::Record(type_name) => {
            let def = records
                .iter()
                .find(|r| r.name == *type_name)
                .ok_or_else(|| SoapError::MalformedBody(format!("record type `{type_name}` is not defined")))?;
            if !element.has_only_whitespace_text() {
                return Err(mismatch(element, expected, format!("text `{}`", element.text())));
            }
            let children: Vec<&Element> = element.child_elements().collect();
            if children.len() != def.fields.len() {
                return Err(mismatch(
                    element,
                    expected,
                    format!("{} fields instead of {}", children.len(), def.fields.len()),
                ));
            }
            let mut fields = Vec::with_capacity(def.fields.len());
            for (child, (fname, fty)) in children.iter().zip(&def.fields) {
                if !child.name().is(ns, fname) {
                    return Err(mismatch(
                        element,
                        expected,
                        format!("field {} where `{fname}` was expected", child.name()),
                    ));
                }
                fields.push((fname.clone(), decode_value(child, fty, records)?));
            }
            Ok(Value::Record {
                type_name: type_name.clone(),
                fields,
            })
        }
        TypeRef::Void => Err(SoapError::MalformedBody("void has no value".into())),
    }
}

/// Checks that `value` is a well-formed instance of `expected`. Returns a
/// description of the first problem.
pub fn check_value(value: &Value, expected: &TypeRef, records: &[RecordDef]) -> Result<(), String> {
    match (value, expected) {
        (Value::Text(_), TypeRef::Text)
        | (Value::Int(_), TypeRef::Int)
        | (Value::Boolean(_), TypeRef::Boolean)
        | (Value::TextList(_), TypeRef::TextList) => Ok(()),
        (Value::Double(d), TypeRef::Double) => {
            if d.is_finite() {
                Ok(())
            } else {
                Err(format!("non-finite double {d}"))
            }
        }
        (Value::Record { type_name, fields }, TypeRef::Record(expected_name)) => {
            if type_name != expected_name {
                return Err(format!("record {type_name} where {expected_name} was expected"));
            }
            let def = records
                .iter()
                .find(|r| r.name == *type_name)
                .ok_or_else(|| format!("record type {type_name} is not defined"))?;
            if fields.len() != def.fields.len() {
                return Err(format!(
                    "record {type_name} has {} fields, expected {}",
                    fields.len(),
                    def.fields.len()
                ));
            }
            for ((name, v), (fname, fty)) in fields.iter().zip(&def.fields) {
                if name != fname {
                    return Err(format!(
                        "record {type_name} field `{name}` where `{fname}` was expected"
                    ));
                }
                check_value(v, fty, records).map_err(|e| format!("{fname}: {e}"))?;
            }
            Ok(())
        }
        (v, t) => Err(format!("{} value where {t} was expected", v.type_ref())),
    }
}

/// The Body's single payload element, or the reason there is none.
fn body_payload(doc: &XmlDocument) -> Result<&Element, SoapError> {
    let root = doc.root();
    if root.name().local_name() == "Envelope" && root.name().namespace_uri() == SOAP12_ENV_NS {
        return Err(SoapError::VersionMismatch(SOAP12_ENV_NS.into()));
    }
    if !root.name().is(SOAP_ENV_NS, "Envelope") {
        return Err(SoapError::NotSoap(format!("root element is {}", root.name())));
    }
    if !root.has_only_whitespace_text() {
        return Err(SoapError::MalformedBody("text inside Envelope".into()));
    }
    let parts: Vec<&Element> = root.child_elements().collect();
    let body = match parts.as_slice() {
        [b] if b.name().is(SOAP_ENV_NS, "Body") => *b,
        [h, b] if h.name().is(SOAP_ENV_NS, "Header") && b.name().is(SOAP_ENV_NS, "Body") => *b,
        _ => {
            return Err(SoapError::MalformedBody(
                "Envelope must hold an optional Header and one Body".into(),
            ))
        }
    };
    if !body.has_only_whitespace_text() {
        return Err(SoapError::MalformedBody("text inside Body".into()));
    }
    let mut payload = body.child_elements();
    match (payload.next(), payload.next()) {
        (Some(p), None) => Ok(p),
        (None, _) => Err(SoapError::MalformedBody("empty Body".into())),
        _ => Err(SoapError::MalformedBody("Body holds more than one element".into())),
    }
}

fn decode_fault(el: &Element) -> Result<SoapFault, SoapError> {
    let text_of = |name: &str| el.find_child("", name).map(Element::text);
    let code_text = text_of("faultcode").ok_or_else(|| SoapError::MalformedBody("Fault without faultcode".into()))?;
    let code = FaultCode::from_qualified(&code_text)
        .ok_or_else(|| SoapError::MalformedBody(format!("unknown faultcode `{code_text}`")))?;
    let string = text_of("faultstring").ok_or_else(|| SoapError::MalformedBody("Fault without faultstring".into()))?;
    let mut fault = SoapFault::new(code, string);
    if let Some(detail) = el.find_child("", "detail") {
        fault.detail = Some(descendant_text(detail));
    }
    Ok(fault)
}

fn descendant_text(el: &Element) -> String {
    let mut out = String::new();
    for c in el.children() {
        match c {
            crate::xml::XmlNode::Text(t) => out.push_str(t),
            crate::xml::XmlNode::Element(e) => out.push_str(&descendant_text(e)),
        }
    }
    out
}

/// Decodes any envelope, using `contract` to type the payload.
pub fn decode_envelope(doc: &XmlDocument, contract: &ServiceDescriptor) -> Result<SoapEnvelope, SoapError> {
    let payload = body_payload(doc)?;
    if payload.name().is(SOAP_ENV_NS, "Fault") {
        return decode_fault(payload).map(SoapEnvelope::Fault);
    }
    let name = payload.name();
    if name.namespace_uri() != contract.target_namespace {
        return Err(SoapError::UnknownOperation(name.to_string()));
    }
    if let Some(op) = contract.operation(name.local_name()) {
        return decode_call_payload(payload, op, contract);
    }
    if let Some(op) = name
        .local_name()
        .strip_suffix("Response")
        .and_then(|base| contract.operation(base))
    {
        return decode_response_payload(payload, op, contract);
    }
    Err(SoapError::UnknownOperation(name.local_name().to_owned()))
}

fn decode_call_payload(
    payload: &Element,
    op: &crate::contract::OperationDescriptor,
    contract: &ServiceDescriptor,
) -> Result<SoapEnvelope, SoapError> {
    if !payload.has_only_whitespace_text() {
        return Err(SoapError::MalformedBody(format!("text inside <{}>", op.name)));
    }
    let ns = contract.target_namespace.as_str();
    let children: Vec<&Element> = payload.child_elements().collect();
    let mut args = Vec::with_capacity(op.params.len());
    for (i, (pname, pty)) in op.params.iter().enumerate() {
        let child = children
            .get(i)
            .ok_or_else(|| SoapError::MalformedBody(format!("missing parameter `{pname}` of {}", op.name)))?;
        if !child.name().is(ns, pname) {
            return Err(SoapError::MalformedBody(format!(
                "found {} where parameter `{pname}` of {} was expected",
                child.name(),
                op.name
            )));
        }
        args.push((pname.clone(), decode_value(child, pty, &contract.records)?));
    }
    if let Some(extra) = children.get(op.params.len()) {
        return Err(SoapError::MalformedBody(format!(
            "unexpected element {} in {}",
            extra.name(),
            op.name
        )));
    }
    Ok(SoapEnvelope::Call {
        operation: payload.name().clone(),
        args,
    })
}

fn decode_response_payload(
    payload: &Element,
    op: &crate::contract::OperationDescriptor,
    contract: &ServiceDescriptor,
) -> Result<SoapEnvelope, SoapError> {
    if !payload.has_only_whitespace_text() {
        return Err(SoapError::MalformedBody(format!("text inside <{}Response>", op.name)));
    }
    let ns = contract.target_namespace.as_str();
    let children: Vec<&Element> = payload.child_elements().collect();
    let result = match (&op.returns, children.as_slice()) {
        (TypeRef::Void, []) => None,
        (TypeRef::Void, _) => {
            return Err(SoapError::MalformedBody(format!(
                "{} returns nothing but the response has content",
                op.name
            )))
        }
        (ty, [result]) if result.name().is(ns, &op.result_element()) => {
            Some(decode_value(result, ty, &contract.records)?)
        }
        _ => {
            return Err(SoapError::MalformedBody(format!(
                "expected a single {} element",
                op.result_element()
            )))
        }
    };
    Ok(SoapEnvelope::Response {
        operation: QName::new(ns, op.name.as_str()),
        result,
    })
}
