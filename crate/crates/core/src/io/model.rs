//! JSON model documents.
//!
//! Every document is a JSON object carrying `schema_version` and `kind`
//! next to the model's own fields. Floats are written as shortest
//! round-trip decimals, so a save/load cycle reproduces every bit.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::types::{CiRegressor, PartitionModel};

pub const SCHEMA_VERSION: u64 = 1;

/// A model type with a JSON document representation.
pub trait ModelDocument: Serialize + DeserializeOwned {
    const KIND: &'static str;

    fn check(&self) -> Result<()>;
}

impl ModelDocument for PartitionModel {
    const KIND: &'static str = "partition_model";

    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl ModelDocument for CiRegressor {
    const KIND: &'static str = "ci_regressor";

    fn check(&self) -> Result<()> {
        self.validate()
    }
}

pub fn to_json<T: ModelDocument>(model: &T) -> Result<String> {
    model.check()?;
    let Value::Object(mut fields) = serde_json::to_value(model)? else {
        return Err(Error::Invariant("model did not serialize to an object".into()));
    };
    fields.insert("schema_version".into(), SCHEMA_VERSION.into());
    fields.insert("kind".into(), T::KIND.into());
    let mut text = serde_json::to_string(&Value::Object(fields))?;
    text.push('\n');
    Ok(text)
}

pub fn from_json<T: ModelDocument>(text: &str) -> Result<T> {
    let Value::Object(mut fields) = serde_json::from_str(text)? else {
        return Err(Error::Invariant("model document is not a JSON object".into()));
    };
    match fields.remove("schema_version") {
        Some(Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(Value::Number(n)) => return Err(Error::SchemaVersion(n.as_u64().unwrap_or(0))),
        _ => return Err(Error::Invariant("missing schema_version".into())),
    }
    match fields.remove("kind") {
        Some(Value::String(kind)) if kind == T::KIND => {}
        Some(Value::String(kind)) => {
            return Err(Error::ModelKind {
                expected: T::KIND,
                found: kind,
            })
        }
        _ => {
            return Err(Error::ModelKind {
                expected: T::KIND,
                found: String::new(),
            })
        }
    }
    let model: T = serde_json::from_value(Value::Object(fields))?;
    model.check()?;
    Ok(model)
}

pub fn save_model<T: ModelDocument>(model: &T, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json(model)?)?;
    Ok(())
}

pub fn load_model<T: ModelDocument>(path: impl AsRef<Path>) -> Result<T> {
    from_json(&fs::read_to_string(path)?)
}
