//! Command-line front end and HTTP service for the scenario engine.

pub mod commands;
pub mod server;

use evscen_core::Error;
use serde_json::{json, Value};

/// Machine-readable error document shared by the CLI and the service.
pub fn error_json(e: &Error) -> Value {
    let mut body = json!({ "kind": e.kind(), "message": e.to_string() });
    if let Error::Invalid { field, .. } = e {
        body["field"] = json!(field);
    }
    json!({ "error": body })
}
