//! Web-services toolkit: a SOAP 1.1 service host with WSDL contracts, a
//! file-backed table store with procedure packages, and a WSDL-driven client.
//!
//! Layers, bottom up:
//!
//! - [`xml`]: namespace-aware XML subset parser and serializer.
//! - [`soap`]: envelopes and typed values.
//! - [`contract`]: service descriptors and WSDL 1.1 generation/parsing.
//! - [`store`]: catalogs, sessions, procedures and forward-only readers.
//! - [`employee`]: the reference employee service over the store.
//! - [`host`]: HTTP hosting with virtual folders and permissions.
//! - [`client`]: dynamic proxies built from fetched WSDL.

pub mod client;
pub mod contract;
pub mod employee;
pub mod host;
pub mod http;
pub mod soap;
pub mod store;
pub mod xml;

pub use client::{CallError, ServiceProxy};

pub use contract::{
    generate_wsdl, parse_wsdl, validate_descriptor, OperationDescriptor, RecordDef, ServiceDescriptor, TypeRef,
};

pub use host::{Permissions, ServiceHost, ServiceRegistration};
pub use soap::{FaultCode, SoapEnvelope, SoapFault, Value};
pub use store::{open_session, parse_connection_string, ConnectionDescriptor, Session};
pub use xml::{Element, QName, XmlDocument, XmlNode};
