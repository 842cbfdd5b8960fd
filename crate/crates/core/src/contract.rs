//! Service contracts and their WSDL 1.1 projection.
//!
//! A [`ServiceDescriptor`] is the single source of truth for a service:
//! the host generates WSDL and decodes requests from it, and the client
//! rebuilds it from fetched WSDL. The WSDL dialect is document/literal
//! wrapped: every operation `Op` has a request element `Op` and a response
//! element `OpResponse` whose only child (if any) is `OpResult`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::xml::{is_ncname, Element, NamespaceContext, QName, XmlDocument};

pub const WSDL_NS: &str = "http://schemas.xmlsoap.org/wsdl/";
pub const WSDL_SOAP_NS: &str = "http://schemas.xmlsoap.org/wsdl/soap/";
pub const XSD_NS: &str = "http://www.w3.org/2001/XMLSchema";
pub const SOAP_HTTP_TRANSPORT: &str = "http://schemas.xmlsoap.org/soap/http";

/// Maximum nesting of record types: a record may hold records that hold none.
pub const MAX_RECORD_DEPTH: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypeRef {
    Text,
    Int,
    Boolean,
    Double,
    TextList,
    Record(String),
    Void,
}

impl fmt::Display for TypeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeRef::Text => f.write_str("string"),
            TypeRef::Int => f.write_str("int"),
            TypeRef::Boolean => f.write_str("boolean"),
            TypeRef::Double => f.write_str("double"),
            TypeRef::TextList => f.write_str("list<string>"),
            TypeRef::Record(name) => f.write_str(name),
            TypeRef::Void => f.write_str("void"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordDef {
    pub name: String,
    pub fields: Vec<(String, TypeRef)>,
}

impl RecordDef {
    pub fn new(name: impl Into<String>) -> Self {
        RecordDef {
            name: name.into(),
            fields: Vec::new(),
        }
    }

    pub fn field(mut self, name: impl Into<String>, ty: TypeRef) -> Self {
        self.fields.push((name.into(), ty));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperationDescriptor {
    pub name: String,
    pub params: Vec<(String, TypeRef)>,
    pub returns: TypeRef,
    pub doc: Option<String>,
}

impl OperationDescriptor {
    pub fn new(name: impl Into<String>, returns: TypeRef) -> Self {
        OperationDescriptor {
            name: name.into(),
            params: Vec::new(),
            returns,
            doc: None,
        }
    }

    pub fn param(mut self, name: impl Into<String>, ty: TypeRef) -> Self {
        self.params.push((name.into(), ty));
        self
    }

    pub fn doc(mut self, doc: impl Into<String>) -> Self {
        self.doc = Some(doc.into());
        self
    }

    pub fn response_element(&self) -> String {
        format!("{}Response", self.name)
    }

    pub fn result_element(&self) -> String {
        format!("{}Result", self.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceDescriptor {
    pub service_name: String,
    pub target_namespace: String,
    pub records: Vec<RecordDef>,
    pub operations: Vec<OperationDescriptor>,
}

impl ServiceDescriptor {
    pub fn operation(&self, name: &str) -> Option<&OperationDescriptor> {
        self.operations.iter().find(|op| op.name == name)
    }

    pub fn record(&self, name: &str) -> Option<&RecordDef> {
        self.records.iter().find(|r| r.name == name)
    }

    /// The soapAction value for `operation` (unquoted).
    pub fn soap_action(&self, operation: &str) -> String {
        format!("{}/{}", self.target_namespace, operation)
    }
}

/// One broken descriptor rule, located by a slash-separated path such as
/// `operation/AddEmployee/param/salary`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn has_uri_scheme(s: &str) -> bool {
    match s.split_once(':') {
        Some((scheme, rest)) => {
            !rest.is_empty()
                && scheme.starts_with(|c: char| c.is_ascii_alphabetic())
                && scheme
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
        }
        None => false,
    }
}

/// Checks every descriptor rule; an empty result means the descriptor is valid.
pub fn validate_descriptor(d: &ServiceDescriptor) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut report = |path: String, message: String| out.push(Violation { path, message });

    if !is_ncname(&d.service_name) {
        report(
            "service".into(),
            format!("service name `{}` is not a valid XML name", d.service_name),
        );
    }
    if d.target_namespace.is_empty() {
        report("service".into(), "target namespace is empty".into());
    } else if !has_uri_scheme(&d.target_namespace) || d.target_namespace.contains(char::is_whitespace) {
        report(
            "service".into(),
            format!("target namespace `{}` is not an absolute URI", d.target_namespace),
        );
    }
    if d.operations.is_empty() {
        report("service".into(), "service declares no operations".into());
    }

    let record_names: HashSet<&str> = d.records.iter().map(|r| r.name.as_str()).collect();
    let check_type = |ty: &TypeRef, path: &str, allow_void: bool, out: &mut Vec<(String, String)>| match ty {
        TypeRef::Void if !allow_void => out.push((path.to_owned(), "void is only legal as a return type".into())),
        TypeRef::Record(name) if !record_names.contains(name.as_str()) => {
            out.push((path.to_owned(), format!("undefined record type `{name}`")))
        }
        _ => {}
    };
    let mut type_problems = Vec::new();

    let mut seen_records = HashSet::new();
    for r in &d.records {
        let path = format!("record/{}", r.name);
        if !is_ncname(&r.name) {
            report(path.clone(), "record name is not a valid XML name".into());
        }
        if !seen_records.insert(r.name.as_str()) {
            report(path.clone(), format!("duplicate record `{}`", r.name));
        }
        let mut fields = HashSet::new();
        for (fname, ty) in &r.fields {
            let fpath = format!("{path}/field/{fname}");
            if !is_ncname(fname) {
                report(fpath.clone(), "field name is not a valid XML name".into());
            }
            if !fields.insert(fname.as_str()) {
                report(fpath.clone(), format!("duplicate field `{fname}`"));
            }
            check_type(ty, &fpath, false, &mut type_problems);
        }
        if d.records.iter().filter(|x| x.name == r.name).count() == 1 {
            match record_depth(d, &r.name, &mut Vec::new()) {
                Some(depth) if depth <= MAX_RECORD_DEPTH => {}
                Some(depth) => report(path, format!("record nesting depth {depth} exceeds {MAX_RECORD_DEPTH}")),
                None => report(path, "record type is recursive".into()),
            }
        }
    }

    let mut seen_ops = HashSet::new();
    let op_names: HashSet<&str> = d.operations.iter().map(|o| o.name.as_str()).collect();
    for op in &d.operations {
        let path = format!("operation/{}", op.name);
        if !is_ncname(&op.name) {
            report(path.clone(), "operation name is not a valid XML name".into());
        }
        if !seen_ops.insert(op.name.as_str()) {
            report(path.clone(), format!("duplicate operation `{}`", op.name));
        }
        if let Some(base) = op.name.strip_suffix("Response") {
            if op_names.contains(base) {
                report(
                    path.clone(),
                    format!("name collides with the response wrapper of `{base}`"),
                );
            }
        }
        let mut params = HashSet::new();
        for (pname, ty) in &op.params {
            let ppath = format!("{path}/param/{pname}");
            if !is_ncname(pname) {
                report(ppath.clone(), "parameter name is not a valid XML name".into());
            }
            if !params.insert(pname.as_str()) {
                report(ppath.clone(), format!("duplicate parameter `{pname}`"));
            }
            check_type(ty, &ppath, false, &mut type_problems);
        }
        check_type(&op.returns, &format!("{path}/returns"), true, &mut type_problems);
    }
    for (path, message) in type_problems {
        report(path, message);
    }
    out
}

/// Nesting depth of a record (1 = only scalar fields); `None` for cycles.
/// Undefined references count as depth 0; they are reported separately.
fn record_depth<'a>(d: &'a ServiceDescriptor, name: &'a str, visiting: &mut Vec<&'a str>) -> Option<usize> {
    if visiting.contains(&name) {
        return None;
    }
    let Some(rec) = d.record(name) else {
        return Some(0);
    };
    visiting.push(name);
    let mut depth = 1;
    for (_, ty) in &rec.fields {
        if let TypeRef::Record(inner) = ty {
            depth = depth.max(1 + record_depth(d, inner, visiting)?);
        }
    }
    visiting.pop();
    Some(depth)
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

fn wsdl(local: &str) -> Element {
    Element::new(QName::new(WSDL_NS, local))
}

fn xsd(local: &str) -> Element {
    Element::new(QName::new(XSD_NS, local))
}

fn soapb(local: &str) -> Element {
    Element::new(QName::new(WSDL_SOAP_NS, local))
}

fn xsd_type_name(ty: &TypeRef) -> Option<String> {
    Some(match ty {
        TypeRef::Text => "xsd:string".into(),
        TypeRef::Int => "xsd:long".into(),
        TypeRef::Boolean => "xsd:boolean".into(),
        TypeRef::Double => "xsd:double".into(),
        TypeRef::Record(name) => format!("tns:{name}"),
        TypeRef::TextList | TypeRef::Void => return None,
    })
}

fn text_list_type() -> Element {
    xsd("complexType").with_child(
        xsd("sequence").with_child(
            xsd("element")
                .with_attr("name", "string")
                .with_attr("type", "xsd:string")
                .with_attr("minOccurs", "0")
                .with_attr("maxOccurs", "unbounded"),
        ),
    )
}

fn schema_element(name: &str, ty: &TypeRef) -> Element {
    let el = xsd("element")
        .with_attr("name", name)
        .with_attr("minOccurs", "1")
        .with_attr("maxOccurs", "1");
    match xsd_type_name(ty) {
        Some(t) => el.with_attr("type", t),
        None => el.with_child(text_list_type()),
    }
}

fn sequence_of<'a>(fields: impl Iterator<Item = (&'a str, &'a TypeRef)>) -> Element {
    let mut seq = xsd("sequence");
    for (name, ty) in fields {
        seq.push_child(schema_element(name, ty));
    }
    seq
}

/// Projects a valid descriptor onto a WSDL 1.1 document whose single port
/// points at `endpoint_url`.
pub fn generate_wsdl(d: &ServiceDescriptor, endpoint_url: &str) -> XmlDocument {
    let tns = d.target_namespace.as_str();
    let port_type_name = format!("{}Soap", d.service_name);

    let mut schema = xsd("schema")
        .with_attr("targetNamespace", tns)
        .with_attr("elementFormDefault", "qualified");
    for op in &d.operations {
        schema.push_child(
            xsd("element")
                .with_attr("name", op.name.as_str())
                .with_child(xsd("complexType").with_child(sequence_of(op.params.iter().map(|(n, t)| (n.as_str(), t))))),
        );
        let result_name = op.result_element();
        let result: Vec<(&str, &TypeRef)> = match op.returns {
            TypeRef::Void => Vec::new(),
            ref ty => vec![(result_name.as_str(), ty)],
        };
        schema.push_child(
            xsd("element")
                .with_attr("name", op.response_element())
                .with_child(xsd("complexType").with_child(sequence_of(result.into_iter()))),
        );
    }
    for r in &d.records {
        schema.push_child(
            xsd("complexType")
                .with_attr("name", r.name.as_str())
                .with_child(sequence_of(r.fields.iter().map(|(n, t)| (n.as_str(), t)))),
        );
    }

    let mut root = wsdl("definitions")
        .with_prefix("wsdl", WSDL_NS)
        .with_prefix("soap", WSDL_SOAP_NS)
        .with_prefix("xsd", XSD_NS)
        .with_prefix("tns", tns)
        .with_attr("name", d.service_name.as_str())
        .with_attr("targetNamespace", tns)
        .with_child(wsdl("types").with_child(schema));

    for op in &d.operations {
        root.push_child(
            wsdl("message")
                .with_attr("name", format!("{}SoapIn", op.name))
                .with_child(
                    wsdl("part")
                        .with_attr("name", "parameters")
                        .with_attr("element", format!("tns:{}", op.name)),
                ),
        );
        root.push_child(
            wsdl("message")
                .with_attr("name", format!("{}SoapOut", op.name))
                .with_child(
                    wsdl("part")
                        .with_attr("name", "parameters")
                        .with_attr("element", format!("tns:{}", op.response_element())),
                ),
        );
    }

    let mut port_type = wsdl("portType").with_attr("name", port_type_name.as_str());
    for op in &d.operations {
        let mut el = wsdl("operation").with_attr("name", op.name.as_str());
        if let Some(doc) = &op.doc {
            el.push_child(wsdl("documentation").with_text(doc));
        }
        el.push_child(wsdl("input").with_attr("message", format!("tns:{}SoapIn", op.name)));
        el.push_child(wsdl("output").with_attr("message", format!("tns:{}SoapOut", op.name)));
        port_type.push_child(el);
    }
    root.push_child(port_type);

    let mut binding = wsdl("binding")
        .with_attr("name", port_type_name.as_str())
        .with_attr("type", format!("tns:{port_type_name}"))
        .with_child(
            soapb("binding")
                .with_attr("transport", SOAP_HTTP_TRANSPORT)
                .with_attr("style", "document"),
        );
    for op in &d.operations {
        binding.push_child(
            wsdl("operation")
                .with_attr("name", op.name.as_str())
                .with_child(
                    soapb("operation")
                        .with_attr("soapAction", d.soap_action(&op.name))
                        .with_attr("style", "document"),
                )
                .with_child(wsdl("input").with_child(soapb("body").with_attr("use", "literal")))
                .with_child(wsdl("output").with_child(soapb("body").with_attr("use", "literal"))),
        );
    }
    root.push_child(binding);

    root.push_child(
        wsdl("service").with_attr("name", d.service_name.as_str()).with_child(
            wsdl("port")
                .with_attr("name", port_type_name.as_str())
                .with_attr("binding", format!("tns:{port_type_name}"))
                .with_child(soapb("address").with_attr("location", endpoint_url)),
        ),
    );
    XmlDocument::new(root)
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WsdlError {
    #[error("document is not a WSDL 1.1 definitions element")]
    NotWsdl,
    #[error("unsupported WSDL feature: {0}")]
    UnsupportedWsdlFeature(String),
    #[error("missing WSDL section `{0}`")]
    MissingSection(String),
    #[error("unresolved type reference `{0}`")]
    UnresolvedTypeReference(String),
}

fn unsupported(msg: impl Into<String>) -> WsdlError {
    WsdlError::UnsupportedWsdlFeature(msg.into())
}

fn required_attr<'a>(e: &'a Element, name: &str) -> Result<&'a str, WsdlError> {
    e.attr(name)
        .ok_or_else(|| unsupported(format!("<{}> without `{name}` attribute", e.name().local_name())))
}

fn resolve_attr(ctx: &NamespaceContext, e: &Element, name: &str) -> Result<QName, WsdlError> {
    let raw = required_attr(e, name)?;
    ctx.resolve(raw)
        .map_err(|_| WsdlError::UnresolvedTypeReference(raw.to_owned()))
}

/// Rejects any attribute outside `allowed` (namespaced attributes are
/// extensibility and also rejected).
fn only_attrs(e: &Element, allowed: &[&str]) -> Result<(), WsdlError> {
    for (name, _) in e.attributes() {
        if !name.namespace_uri().is_empty() || !allowed.contains(&name.local_name()) {
            return Err(unsupported(format!(
                "attribute `{name}` on <{}>",
                e.name().local_name()
            )));
        }
    }
    Ok(())
}

fn no_text(e: &Element) -> Result<(), WsdlError> {
    if e.has_only_whitespace_text() {
        Ok(())
    } else {
        Err(unsupported(format!(
            "unexpected text inside <{}>",
            e.name().local_name()
        )))
    }
}

struct SchemaReader<'a> {
    tns: &'a str,
    record_names: HashSet<String>,
}

impl SchemaReader<'_> {
    fn type_of(&self, ctx: &NamespaceContext, el: &Element) -> Result<TypeRef, WsdlError> {
        let ctx = ctx.enter(el);
        let inline: Vec<&Element> = el.child_elements().collect();
        match (el.attr("type"), inline.as_slice()) {
            (Some(_), []) => {
                let q = resolve_attr(&ctx, el, "type")?;
                if q.namespace_uri() == XSD_NS {
                    match q.local_name() {
                        "string" => Ok(TypeRef::Text),
                        "long" | "int" => Ok(TypeRef::Int),
                        "boolean" => Ok(TypeRef::Boolean),
                        "double" => Ok(TypeRef::Double),
                        other => Err(unsupported(format!("schema type xsd:{other}"))),
                    }
                } else if q.namespace_uri() == self.tns && self.record_names.contains(q.local_name()) {
                    Ok(TypeRef::Record(q.local_name().to_owned()))
                } else {
                    Err(WsdlError::UnresolvedTypeReference(q.to_string()))
                }
            }
            (None, [ct]) if ct.name().is(XSD_NS, "complexType") => {
                self.text_list(&ctx, ct)?;
                Ok(TypeRef::TextList)
            }
            _ => Err(unsupported(format!(
                "element `{}` has no supported type",
                el.attr("name").unwrap_or("?")
            ))),
        }
    }

    fn text_list(&self, ctx: &NamespaceContext, ct: &Element) -> Result<(), WsdlError> {
        only_attrs(ct, &[])?;
        let fields = self.sequence_raw(ctx, ct)?;
        match fields.as_slice() {
            [item] => {
                let ok = item.attr("name") == Some("string")
                    && item.attr("minOccurs") == Some("0")
                    && item.attr("maxOccurs") == Some("unbounded")
                    && item.child_elements().next().is_none()
                    && ctx
                        .enter(item)
                        .resolve(item.attr("type").unwrap_or(""))
                        .is_ok_and(|q| q.is(XSD_NS, "string"));
                only_attrs(item, &["name", "type", "minOccurs", "maxOccurs"])?;
                if ok {
                    Ok(())
                } else {
                    Err(unsupported("anonymous complex type other than a string list"))
                }
            }
            _ => Err(unsupported("anonymous complex type other than a string list")),
        }
    }

    /// The `<element>` children of a complexType's single sequence.
    fn sequence_raw<'e>(&self, _ctx: &NamespaceContext, ct: &'e Element) -> Result<Vec<&'e Element>, WsdlError> {
        no_text(ct)?;
        let children: Vec<&Element> = ct.child_elements().collect();
        let seq = match children.as_slice() {
            [] => return Ok(Vec::new()),
            [seq] if seq.name().is(XSD_NS, "sequence") => *seq,
            _ => return Err(unsupported("complex type content other than one sequence")),
        };
        only_attrs(seq, &[])?;
        no_text(seq)?;
        seq.child_elements()
            .map(|e| {
                if e.name().is(XSD_NS, "element") {
                    Ok(e)
                } else {
                    Err(unsupported(format!("<{}> inside a sequence", e.name().local_name())))
                }
            })
            .collect()
    }

    fn fields(&self, ctx: &NamespaceContext, ct: &Element) -> Result<Vec<(String, TypeRef)>, WsdlError> {
        let ctx = ctx.enter(ct);
        let mut out = Vec::new();
        for el in self.sequence_raw(&ctx, ct)? {
            only_attrs(el, &["name", "type", "minOccurs", "maxOccurs"])?;
            for occurs in ["minOccurs", "maxOccurs"] {
                if el.attr(occurs).is_some_and(|v| v != "1") {
                    return Err(unsupported(format!(
                        "{occurs} other than 1 on `{}`",
                        el.attr("name").unwrap_or("?")
                    )));
                }
            }
            let name = required_attr(el, "name")?.to_owned();
            out.push((name, self.type_of(&ctx, el)?));
        }
        Ok(out)
    }
}

#[derive(Default)]
struct Sections<'a> {
    types: Option<&'a Element>,
    messages: Vec<&'a Element>,
    port_types: Vec<&'a Element>,
    bindings: Vec<&'a Element>,
    services: Vec<&'a Element>,
}

/// Rebuilds a descriptor and endpoint address from a WSDL document in the
/// subset produced by [`generate_wsdl`]. Sibling sections may appear in any
/// order; anything outside the subset is an error.
pub fn parse_wsdl(doc: &XmlDocument) -> Result<(ServiceDescriptor, String), WsdlError> {
    let root = doc.root();
    if !root.name().is(WSDL_NS, "definitions") {
        return Err(WsdlError::NotWsdl);
    }
    let ctx = NamespaceContext::new().enter(root);
    let tns = root
        .attr("targetNamespace")
        .ok_or_else(|| WsdlError::MissingSection("targetNamespace".into()))?
        .to_owned();
    no_text(root)?;

    let mut sections = Sections::default();
    for child in root.child_elements() {
        if child.name().namespace_uri() != WSDL_NS {
            return Err(unsupported(format!("extension element {}", child.name())));
        }
        match child.name().local_name() {
            "types" => {
                if sections.types.replace(child).is_some() {
                    return Err(unsupported("multiple types sections"));
                }
            }
            "message" => sections.messages.push(child),
            "portType" => sections.port_types.push(child),
            "binding" => sections.bindings.push(child),
            "service" => sections.services.push(child),
            "documentation" => {}
            "import" => return Err(unsupported("wsdl:import")),
            other => return Err(unsupported(format!("wsdl:{other}"))),
        }
    }
    let types = sections
        .types
        .ok_or_else(|| WsdlError::MissingSection("types".into()))?;
    let port_type = single(&sections.port_types, "portType")?;
    let binding = single(&sections.bindings, "binding")?;
    let service = single(&sections.services, "service")?;

    // Schema.
    let types_ctx = ctx.enter(types);
    no_text(types)?;
    let schemas: Vec<&Element> = types.child_elements().collect();
    let schema = match schemas.as_slice() {
        [s] if s.name().is(XSD_NS, "schema") => *s,
        [] => return Err(WsdlError::MissingSection("schema".into())),
        _ => return Err(unsupported("types must hold exactly one xsd:schema")),
    };
    only_attrs(schema, &["targetNamespace", "elementFormDefault"])?;
    if schema.attr("targetNamespace") != Some(tns.as_str()) {
        return Err(unsupported("schema target namespace differs from definitions"));
    }
    if schema.attr("elementFormDefault") != Some("qualified") {
        return Err(unsupported("unqualified element form"));
    }
    no_text(schema)?;
    let schema_ctx = types_ctx.enter(schema);

    let mut complex_types = Vec::new();
    let mut top_elements = Vec::new();
    for item in schema.child_elements() {
        match (item.name().namespace_uri(), item.name().local_name()) {
            (XSD_NS, "complexType") => complex_types.push(item),
            (XSD_NS, "element") => top_elements.push(item),
            _ => return Err(unsupported(format!("schema item {}", item.name()))),
        }
    }
    let reader = SchemaReader {
        tns: &tns,
        record_names: complex_types
            .iter()
            .filter_map(|ct| ct.attr("name").map(str::to_owned))
            .collect(),
    };
    let mut records = Vec::new();
    for ct in &complex_types {
        only_attrs(ct, &["name"])?;
        let name = required_attr(ct, "name")?.to_owned();
        let fields = reader.fields(&schema_ctx, ct)?;
        records.push(RecordDef { name, fields });
    }
    let mut wrappers: HashMap<String, Vec<(String, TypeRef)>> = HashMap::new();
    for el in &top_elements {
        only_attrs(el, &["name"])?;
        no_text(el)?;
        let name = required_attr(el, "name")?.to_owned();
        let kids: Vec<&Element> = el.child_elements().collect();
        let ct = match kids.as_slice() {
            [ct] if ct.name().is(XSD_NS, "complexType") => *ct,
            _ => {
                return Err(unsupported(format!(
                    "wrapper element `{name}` without inline complex type"
                )))
            }
        };
        only_attrs(ct, &[])?;
        let el_ctx = schema_ctx.enter(el);
        let fields = reader.fields(&el_ctx, ct)?;
        if wrappers.insert(name.clone(), fields).is_some() {
            return Err(unsupported(format!("duplicate element `{name}`")));
        }
    }

    // Messages: name -> element.
    let mut messages: BTreeMap<String, QName> = BTreeMap::new();
    for m in &sections.messages {
        let m_ctx = ctx.enter(m);
        only_attrs(m, &["name"])?;
        let name = required_attr(m, "name")?.to_owned();
        let parts: Vec<&Element> = m.child_elements().collect();
        let part = match parts.as_slice() {
            [p] if p.name().is(WSDL_NS, "part") => *p,
            _ => return Err(unsupported(format!("message `{name}` must have one part"))),
        };
        if part.attr("type").is_some() {
            return Err(unsupported("type-based message parts (rpc style)"));
        }
        only_attrs(part, &["name", "element"])?;
        if part.attr("name") != Some("parameters") {
            return Err(unsupported("message part not named `parameters`"));
        }
        let element = resolve_attr(&m_ctx.enter(part), part, "element")?;
        messages.insert(name, element);
    }
    let message_element = |qname: &QName| -> Result<&QName, WsdlError> {
        if qname.namespace_uri() != tns {
            return Err(WsdlError::UnresolvedTypeReference(qname.to_string()));
        }
        messages
            .get(qname.local_name())
            .ok_or_else(|| WsdlError::UnresolvedTypeReference(qname.to_string()))
    };
    let wrapper = |qname: &QName| -> Result<&Vec<(String, TypeRef)>, WsdlError> {
        if qname.namespace_uri() != tns {
            return Err(WsdlError::UnresolvedTypeReference(qname.to_string()));
        }
        wrappers
            .get(qname.local_name())
            .ok_or_else(|| WsdlError::UnresolvedTypeReference(qname.to_string()))
    };

    // Port type.
    let pt_ctx = ctx.enter(port_type);
    only_attrs(port_type, &["name"])?;
    let port_type_name = required_attr(port_type, "name")?;
    let mut operations = Vec::new();
    for op_el in port_type.child_elements() {
        if !op_el.name().is(WSDL_NS, "operation") {
            if op_el.name().is(WSDL_NS, "documentation") {
                continue;
            }
            return Err(unsupported(format!("portType child {}", op_el.name())));
        }
        only_attrs(op_el, &["name", "parameterOrder"])?;
        let op_ctx = pt_ctx.enter(op_el);
        let name = required_attr(op_el, "name")?.to_owned();
        let mut doc = None;
        let mut input = None;
        let mut output = None;
        for part in op_el.child_elements() {
            match (part.name().namespace_uri(), part.name().local_name()) {
                (WSDL_NS, "documentation") => doc = Some(part.text()),
                (WSDL_NS, "input") if input.is_none() => {
                    input = Some(resolve_attr(&op_ctx.enter(part), part, "message")?)
                }
                (WSDL_NS, "output") if output.is_none() => {
                    output = Some(resolve_attr(&op_ctx.enter(part), part, "message")?)
                }
                (WSDL_NS, "fault") => return Err(unsupported("declared operation faults")),
                _ => return Err(unsupported(format!("operation child {}", part.name()))),
            }
        }
        let (Some(input), Some(output)) = (input, output) else {
            return Err(unsupported(format!("operation `{name}` is not request-response")));
        };
        let request = message_element(&input)?;
        let response = message_element(&output)?;
        if request.local_name() != name {
            return Err(unsupported(format!("request element of `{name}` is not wrapped")));
        }
        if response.local_name() != format!("{name}Response") {
            return Err(unsupported(format!("response element of `{name}` is not wrapped")));
        }
        let params = wrapper(request)?.clone();
        let result_fields = wrapper(response)?;
        let returns = match result_fields.as_slice() {
            [] => TypeRef::Void,
            [(rname, ty)] if *rname == format!("{name}Result") => ty.clone(),
            _ => {
                return Err(unsupported(format!(
                    "response of `{name}` is not a single {name}Result"
                )))
            }
        };
        operations.push(OperationDescriptor {
            name,
            params,
            returns,
            doc,
        });
    }

    // Binding.
    let b_ctx = ctx.enter(binding);
    only_attrs(binding, &["name", "type"])?;
    let binding_name = required_attr(binding, "name")?;
    let bound_type = resolve_attr(&b_ctx, binding, "type")?;
    if !bound_type.is(&tns, port_type_name) {
        return Err(WsdlError::UnresolvedTypeReference(bound_type.to_string()));
    }
    let mut saw_soap_binding = false;
    let mut bound_ops: Vec<String> = Vec::new();
    for item in binding.child_elements() {
        match (item.name().namespace_uri(), item.name().local_name()) {
            (WSDL_SOAP_NS, "binding") => {
                only_attrs(item, &["transport", "style"])?;
                if item.attr("transport") != Some(SOAP_HTTP_TRANSPORT) {
                    return Err(unsupported("non-HTTP SOAP transport"));
                }
                if item.attr("style").is_some_and(|s| s != "document") {
                    return Err(unsupported(format!(
                        "{}-style binding",
                        item.attr("style").unwrap_or_default()
                    )));
                }
                saw_soap_binding = true;
            }
            (WSDL_NS, "operation") => {
                only_attrs(item, &["name"])?;
                let name = required_attr(item, "name")?;
                bound_ops.push(name.to_owned());
                check_binding_operation(item, &format!("{tns}/{name}"))?;
            }
            (WSDL_NS, "documentation") => {}
            _ => return Err(unsupported(format!("binding child {}", item.name()))),
        }
    }
    if !saw_soap_binding {
        return Err(unsupported("binding without soap:binding (SOAP 1.1 only)"));
    }
    let mut declared: Vec<&str> = operations.iter().map(|o| o.name.as_str()).collect();
    let mut bound: Vec<&str> = bound_ops.iter().map(String::as_str).collect();
    declared.sort_unstable();
    bound.sort_unstable();
    if declared != bound {
        return Err(unsupported("binding operations differ from portType operations"));
    }

    // Service.
    let s_ctx = ctx.enter(service);
    only_attrs(service, &["name"])?;
    let service_name = required_attr(service, "name")?.to_owned();
    let mut ports = Vec::new();
    for item in service.child_elements() {
        match (item.name().namespace_uri(), item.name().local_name()) {
            (WSDL_NS, "port") => ports.push(item),
            (WSDL_NS, "documentation") => {}
            _ => return Err(unsupported(format!("service child {}", item.name()))),
        }
    }
    let port = match ports.as_slice() {
        [p] => *p,
        [] => return Err(WsdlError::MissingSection("port".into())),
        _ => return Err(unsupported("multiple ports")),
    };
    only_attrs(port, &["name", "binding"])?;
    let port_binding = resolve_attr(&s_ctx.enter(port), port, "binding")?;
    if !port_binding.is(&tns, binding_name) {
        return Err(WsdlError::UnresolvedTypeReference(port_binding.to_string()));
    }
    let addresses: Vec<&Element> = port.child_elements().collect();
    let endpoint = match addresses.as_slice() {
        [a] if a.name().is(WSDL_SOAP_NS, "address") => {
            only_attrs(a, &["location"])?;
            required_attr(a, "location")?.to_owned()
        }
        [] => return Err(WsdlError::MissingSection("soap:address".into())),
        _ => return Err(unsupported("port content other than one soap:address")),
    };

    let descriptor = ServiceDescriptor {
        service_name,
        target_namespace: tns,
        records,
        operations,
    };
    if let Some(v) = validate_descriptor(&descriptor).first() {
        return Err(unsupported(format!("invalid contract: {v}")));
    }
    Ok((descriptor, endpoint))
}

fn single<'a>(items: &[&'a Element], section: &str) -> Result<&'a Element, WsdlError> {
    match items {
        [one] => Ok(one),
        [] => Err(WsdlError::MissingSection(section.into())),
        _ => Err(unsupported(format!("multiple {section} sections"))),
    }
}

fn check_binding_operation(op: &Element, expected_action: &str) -> Result<(), WsdlError> {
    let mut saw_operation = false;
    let mut directions = 0;
    for item in op.child_elements() {
        match (item.name().namespace_uri(), item.name().local_name()) {
            (WSDL_SOAP_NS, "operation") => {
                only_attrs(item, &["soapAction", "style"])?;
                if item.attr("style").is_some_and(|s| s != "document") {
                    return Err(unsupported("rpc-style operation binding"));
                }
                if item.attr("soapAction") != Some(expected_action) {
                    return Err(unsupported(format!(
                        "soapAction `{}` (expected `{expected_action}`)",
                        item.attr("soapAction").unwrap_or_default()
                    )));
                }
                saw_operation = true;
            }
            (WSDL_NS, "input" | "output") => {
                directions += 1;
                let bodies: Vec<&Element> = item.child_elements().collect();
                match bodies.as_slice() {
                    [b] if b.name().is(WSDL_SOAP_NS, "body") => {
                        only_attrs(b, &["use"])?;
                        if b.attr("use") != Some("literal") {
                            return Err(unsupported("non-literal soap:body use"));
                        }
                    }
                    _ => return Err(unsupported("binding message without one soap:body")),
                }
            }
            (WSDL_NS, "documentation") => {}
            _ => return Err(unsupported(format!("binding operation child {}", item.name()))),
        }
    }
    if !saw_operation || directions != 2 {
        return Err(unsupported("incomplete binding operation"));
    }
    Ok(())
}
