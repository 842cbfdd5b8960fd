//! The employee service: a manager over the `EMP_PKG` procedures of a
//! store session, published as a SOAP service.

use std::sync::Arc;

use thiserror::Error;

use crate::contract::{OperationDescriptor, RecordDef, ServiceDescriptor, TypeRef};
use crate::host::{OperationHandler, ServiceRegistration};
use crate::soap::{format_double, FaultCode, SoapFault, Value};
use crate::store::{
    Catalog, Cell, ColumnType, ProcKind, Procedure, ProcedureResult, Projection, RowReader, Session, StoreError, Table,
};

pub const FOLDER_PATH: &str = "/OracleWebService";
pub const SERVICE_FILE: &str = "Service.asmx";
pub const SERVICE_NAME: &str = "Service";
pub const TARGET_NAMESPACE: &str = "urn:oraclews:employee";
pub const DEFAULT_CONNECTION: &str = "User Id=csharp;password=csharp;Data Source=XE;";
pub const DATA_SOURCE: &str = "XE";
pub const PACKAGE: &str = "EMP_PKG";
pub const TABLE: &str = "EMPLOYEES";
pub const RECORD: &str = "Employee";

/// Column of the formatted `GET_ALL` projection.
const ROW_COLUMN: &str = "ROW";
const ROW_TEMPLATE: &str = "{ID}|{LAST_NAME}|{FIRST_NAME}|{JOB}|{SALARY}";

pub const SEED_ROWS: [(i64, &str, &str, &str, f64); 3] = [
    (1, "KING", "ADA", "PRESIDENT", 5000.0),
    (2, "BLAKE", "ROBERT", "MANAGER", 2850.0),
    (3, "SMITH", "JOHN", "CLERK", 800.0),
];

pub fn build_descriptor() -> ServiceDescriptor {
    let text = || TypeRef::Text;
    ServiceDescriptor {
        service_name: SERVICE_NAME.into(),
        target_namespace: TARGET_NAMESPACE.into(),
        records: vec![RecordDef::new(RECORD)
            .field("id", TypeRef::Int)
            .field("last_name", text())
            .field("first_name", text())
            .field("job", text())
            .field("salary", TypeRef::Double)],
        operations: vec![
            OperationDescriptor::new("GetEmployeesData", TypeRef::TextList)
                .doc("All employees as id|last_name|first_name|job|salary lines."),
            OperationDescriptor::new("GetEmployeeById", TypeRef::Record(RECORD.into()))
                .param("id", TypeRef::Int)
                .doc("One employee by id."),
            OperationDescriptor::new("AddEmployee", TypeRef::Int)
                .param("last_name", text())
                .param("first_name", text())
                .param("job", text())
                .param("salary", TypeRef::Double)
                .doc("Adds an employee and returns the new id."),
            OperationDescriptor::new("DeleteEmployee", TypeRef::Boolean)
                .param("id", TypeRef::Int)
                .doc("Deletes an employee; true if one was removed."),
            OperationDescriptor::new("CountEmployees", TypeRef::Int).doc("Number of employees."),
        ],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmployeeRecord {
    pub id: i64,
    pub last_name: String,
    pub first_name: String,
    pub job: String,
    pub salary: f64,
}

impl EmployeeRecord {
    /// The `id|last|first|job|salary` line used by `GetEmployeesData`.
    pub fn row_text(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}",
            self.id,
            self.last_name,
            self.first_name,
            self.job,
            format_double(self.salary)
        )
    }

    pub fn to_value(&self) -> Value {
        Value::Record {
            type_name: RECORD.into(),
            fields: vec![
                ("id".into(), Value::Int(self.id)),
                ("last_name".into(), Value::Text(self.last_name.clone())),
                ("first_name".into(), Value::Text(self.first_name.clone())),
                ("job".into(), Value::Text(self.job.clone())),
                ("salary".into(), Value::Double(self.salary)),
            ],
        }
    }

    pub fn from_value(v: &Value) -> Option<EmployeeRecord> {
        let text = |name: &str| match v.field(name)? {
            Value::Text(s) => Some(s.clone()),
            _ => None,
        };
        Some(EmployeeRecord {
            id: match v.field("id")? {
                Value::Int(i) => *i,
                _ => return None,
            },
            last_name: text("last_name")?,
            first_name: text("first_name")?,
            job: text("job")?,
            salary: match v.field("salary")? {
                Value::Double(d) => *d,
                _ => return None,
            },
        })
    }
}

#[derive(Debug, Error)]
pub enum EmployeeError {
    #[error("invalid {field}: {reason}")]
    Validation { field: &'static str, reason: String },
    #[error("no employee with id {0}")]
    NotFound(i64),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Unexpected(String),
}

impl EmployeeError {
    fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        EmployeeError::Validation {
            field,
            reason: reason.into(),
        }
    }

    /// Caller mistakes are Client faults; store failures are Server faults.
    pub fn to_fault(&self) -> SoapFault {
        let code = match self {
            EmployeeError::Validation { .. } | EmployeeError::NotFound(_) => FaultCode::Client,
            EmployeeError::Store(_) | EmployeeError::Unexpected(_) => FaultCode::Server,
        };
        SoapFault::new(code, self.to_string())
    }
}

fn check_text(field: &'static str, s: &str, required: bool) -> Result<(), EmployeeError> {
    if required && s.trim().is_empty() {
        return Err(EmployeeError::invalid(field, "must not be empty"));
    }
    if s.contains(['|', '\n', '\r']) {
        return Err(EmployeeError::invalid(field, "must not contain '|' or line breaks"));
    }
    Ok(())
}

/// Runs the `EMP_PKG` procedures on a session. Safe to share between
/// threads; locking is the session's.
#[derive(Debug, Clone)]
pub struct DataManager {
    session: Arc<Session>,
}

impl DataManager {
    pub fn new(session: Arc<Session>) -> Self {
        DataManager { session }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    fn exec(&self, proc_: &str, args: &[Value]) -> Result<ProcedureResult, EmployeeError> {
        Ok(self.session.execute_procedure(PACKAGE, proc_, args)?)
    }

    fn rows(&self, proc_: &str, args: &[Value]) -> Result<RowReader, EmployeeError> {
        match self.exec(proc_, args)? {
            ProcedureResult::Rows(r) => Ok(r),
            other => unexpected(proc_, &other),
        }
    }

    fn affected(&self, proc_: &str, args: &[Value]) -> Result<(u64, Option<i64>), EmployeeError> {
        match self.exec(proc_, args)? {
            ProcedureResult::Affected { count, generated_id } => Ok((count, generated_id)),
            other => unexpected(proc_, &other),
        }
    }

    pub fn get_employees_data(&self) -> Result<Vec<String>, EmployeeError> {
        let mut reader = self.rows("GET_ALL", &[])?;
        let mut out = Vec::new();
        while reader.next() {
            match reader.get(ROW_COLUMN)? {
                Value::Text(s) => out.push(s),
                other => return unexpected("GET_ALL", &other),
            }
        }
        Ok(out)
    }

    pub fn get_employee_by_id(&self, id: i64) -> Result<EmployeeRecord, EmployeeError> {
        let mut reader = self.rows("GET_BY_ID", &[Value::Int(id)])?;
        if !reader.next() {
            return Err(EmployeeError::NotFound(id));
        }
        let text = |col: &str| -> Result<String, EmployeeError> {
            match reader.get(col)? {
                Value::Text(s) => Ok(s),
                other => unexpected("GET_BY_ID", &other),
            }
        };
        let record = EmployeeRecord {
            id,
            last_name: text("LAST_NAME")?,
            first_name: text("FIRST_NAME")?,
            job: text("JOB")?,
            salary: match reader.get("SALARY")? {
                Value::Double(d) => d,
                other => return unexpected("GET_BY_ID", &other),
            },
        };
        Ok(record)
    }

    pub fn add_employee(
        &self,
        last_name: &str,
        first_name: &str,
        job: &str,
        salary: f64,
    ) -> Result<i64, EmployeeError> {
        check_text("last_name", last_name, true)?;
        check_text("first_name", first_name, false)?;
        check_text("job", job, false)?;
        if !salary.is_finite() || salary < 0.0 {
            return Err(EmployeeError::invalid("salary", "must be finite and not negative"));
        }
        let args = [
            Value::Text(last_name.into()),
            Value::Text(first_name.into()),
            Value::Text(job.into()),
            Value::Double(salary),
        ];
        match self.affected("INS", &args)? {
            (1, Some(id)) => Ok(id),
            other => unexpected("INS", &other),
        }
    }

    pub fn delete_employee(&self, id: i64) -> Result<bool, EmployeeError> {
        Ok(self.affected("DEL", &[Value::Int(id)])?.0 > 0)
    }

    pub fn count_employees(&self) -> Result<i64, EmployeeError> {
        match self.exec("COUNT", &[])? {
            ProcedureResult::Scalar(n) => Ok(n),
            other => unexpected("COUNT", &other),
        }
    }
}

fn unexpected<T>(proc_: &str, got: &dyn std::fmt::Debug) -> Result<T, EmployeeError> {
    Err(EmployeeError::Unexpected(format!(
        "{PACKAGE}.{proc_} returned an unexpected result {got:?}"
    )))
}

/// Dispatches SOAP operations to a [`DataManager`].
#[derive(Debug, Clone)]
pub struct EmployeeService {
    manager: DataManager,
}

impl EmployeeService {
    pub fn new(manager: DataManager) -> Self {
        EmployeeService { manager }
    }

    pub fn registration(self) -> ServiceRegistration {
        ServiceRegistration::new(build_descriptor(), Arc::new(self)).expect("the employee descriptor is valid")
    }
}

fn arg<'a>(args: &'a [(String, Value)], name: &str) -> &'a Value {
    &args
        .iter()
        .find(|(n, _)| n == name)
        .expect("the host checks arguments against the descriptor")
        .1
}

fn int_arg(args: &[(String, Value)], name: &str) -> i64 {
    match arg(args, name) {
        Value::Int(i) => *i,
        other => panic!("argument {name} has type {}", other.type_ref()),
    }
}

fn text_arg<'a>(args: &'a [(String, Value)], name: &str) -> &'a str {
    match arg(args, name) {
        Value::Text(s) => s,
        other => panic!("argument {name} has type {}", other.type_ref()),
    }
}

impl OperationHandler for EmployeeService {
    fn invoke(&self, operation: &str, args: Vec<(String, Value)>) -> Result<Option<Value>, SoapFault> {
        let m = &self.manager;
        let result = match operation {
            "GetEmployeesData" => m.get_employees_data().map(Value::TextList),
            "GetEmployeeById" => m.get_employee_by_id(int_arg(&args, "id")).map(|r| r.to_value()),
            "AddEmployee" => {
                let salary = match arg(&args, "salary") {
                    Value::Double(d) => *d,
                    other => panic!("argument salary has type {}", other.type_ref()),
                };
                m.add_employee(
                    text_arg(&args, "last_name"),
                    text_arg(&args, "first_name"),
                    text_arg(&args, "job"),
                    salary,
                )
                .map(Value::Int)
            }
            "DeleteEmployee" => m.delete_employee(int_arg(&args, "id")).map(Value::Boolean),
            "CountEmployees" => m.count_employees().map(Value::Int),
            other => return Err(SoapFault::new(FaultCode::Client, format!("unknown operation {other}"))),
        };
        result.map(Some).map_err(|e| e.to_fault())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixture {
    Default,
    Empty,
}

impl Fixture {
    pub fn parse(s: &str) -> Option<Fixture> {
        match s {
            "default" => Some(Fixture::Default),
            "empty" => Some(Fixture::Empty),
            _ => None,
        }
    }
}

/// The `XE` catalog: user csharp/csharp, the `EMPLOYEES` table and the
/// `EMP_PKG` package. `Default` also holds the three seed rows.
pub fn fixture_catalog(fixture: Fixture) -> Catalog {
    let mut cat = Catalog::new(DATA_SOURCE);
    cat.add_user("csharp", "csharp");
    let mut table = Table::new(
        TABLE,
        &[
            ("ID", ColumnType::Int),
            ("LAST_NAME", ColumnType::Text),
            ("FIRST_NAME", ColumnType::Text),
            ("JOB", ColumnType::Text),
            ("SALARY", ColumnType::Double),
        ],
    )
    .expect("fixture schema is valid");
    if fixture == Fixture::Default {
        for (id, last, first, job, salary) in SEED_ROWS {
            table
                .push_row(vec![
                    Cell::Int(id),
                    Cell::Text(last.into()),
                    Cell::Text(first.into()),
                    Cell::Text(job.into()),
                    Cell::Double(salary),
                ])
                .expect("seed rows match the schema");
        }
    }
    cat.add_table(table).expect("single table");
    let t = || TABLE.to_owned();
    let procs = [
        (
            "GET_ALL",
            ProcKind::SelectAll {
                table: t(),
                projection: Projection::format(ROW_TEMPLATE, ROW_COLUMN).expect("valid template"),
            },
        ),
        (
            "GET_BY_ID",
            ProcKind::SelectWhereEq {
                table: t(),
                column: "ID".into(),
                projection: Projection::All,
            },
        ),
        ("INS", ProcKind::Insert { table: t() }),
        (
            "DEL",
            ProcKind::DeleteWhereEq {
                table: t(),
                column: "ID".into(),
            },
        ),
        ("COUNT", ProcKind::Count { table: t() }),
    ];
    for (name, kind) in procs {
        cat.add_procedure(PACKAGE, Procedure::new(name, kind).expect("valid name"))
            .expect("fixture procedures are valid");
    }
    cat
}
