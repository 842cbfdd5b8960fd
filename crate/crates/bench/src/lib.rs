//! Shared fixtures for the benchmarks.

use std::path::Path;
use std::sync::Arc;

use soapbridge::contract::generate_wsdl;
use soapbridge::employee::{
    build_descriptor, fixture_catalog, DataManager, EmployeeService, Fixture, DATA_SOURCE, DEFAULT_CONNECTION,
    FOLDER_PATH, SERVICE_FILE, TABLE, TARGET_NAMESPACE,
};
use soapbridge::host::{Permissions, ServiceHost};
use soapbridge::http::HttpRequest;
use soapbridge::soap::{encode_envelope, SoapEnvelope, Value};
use soapbridge::store::{catalog_path, open_session, parse_connection_string, save_catalog, Catalog, Cell};
use soapbridge::xml::{serialize_document, QName};

/// The XE catalog holding `rows` employees.
pub fn employee_catalog(rows: usize) -> Catalog {
    let mut cat = fixture_catalog(Fixture::Empty);
    let table = cat.table_mut(TABLE).expect("fixture table");
    for i in 1..=rows as i64 {
        table
            .push_row(vec![
                Cell::Int(i),
                Cell::Text(format!("LAST{i}")),
                Cell::Text(format!("FIRST{i}")),
                Cell::Text("CLERK".into()),
                Cell::Double(1000.0 + i as f64 / 4.0),
            ])
            .expect("row fits schema");
    }
    cat
}

pub fn wsdl_bytes() -> Vec<u8> {
    serialize_document(&generate_wsdl(
        &build_descriptor(),
        "http://localhost:1576/OracleWebService/Service.asmx",
    ))
}

pub fn add_employee_envelope() -> SoapEnvelope {
    SoapEnvelope::Call {
        operation: QName::new(TARGET_NAMESPACE, "AddEmployee"),
        args: vec![
            ("last_name".into(), Value::Text("O'NEIL & SONS".into())),
            ("first_name".into(), Value::Text("ADA".into())),
            ("job".into(), Value::Text("CLERK".into())),
            ("salary".into(), Value::Double(1250.5)),
        ],
    }
}

pub fn rows_response(rows: usize) -> SoapEnvelope {
    SoapEnvelope::Response {
        operation: QName::new(TARGET_NAMESPACE, "GetEmployeesData"),
        result: Some(Value::TextList(
            (1..=rows).map(|i| format!("{i}|LAST{i}|FIRST{i}|CLERK|{i}")).collect(),
        )),
    }
}

pub fn envelope_bytes(env: &SoapEnvelope) -> Vec<u8> {
    serialize_document(&encode_envelope(env))
}

/// An employee host over a catalog of `rows` employees written to `dir`.
pub fn employee_host(dir: &Path, rows: usize) -> ServiceHost {
    save_catalog(&employee_catalog(rows), &catalog_path(dir, DATA_SOURCE)).expect("write catalog");
    let conn = parse_connection_string(DEFAULT_CONNECTION).expect("default connection string");
    let session = Arc::new(open_session(dir, &conn).expect("open catalog"));
    let mut host = ServiceHost::new();
    host.add_folder(FOLDER_PATH, Permissions::ALL).expect("folder");
    host.register_service(
        FOLDER_PATH,
        SERVICE_FILE,
        EmployeeService::new(DataManager::new(session)).registration(),
    )
    .expect("service");
    host
}

/// A POST of `env` to the employee service.
pub fn soap_post(env: &SoapEnvelope, operation: &str) -> HttpRequest {
    let mut req = HttpRequest::new("POST", &format!("{FOLDER_PATH}/{SERVICE_FILE}")).with_body(envelope_bytes(env));
    req.headers.insert("Host", "localhost:1576");
    req.headers.insert("Content-Type", "text/xml; charset=utf-8");
    req.headers.insert(
        "SOAPAction",
        format!("\"{}\"", build_descriptor().soap_action(operation)),
    );
    req
}
