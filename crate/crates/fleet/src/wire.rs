//! JSON message codec. Every message carries `"format_version": 1`; unknown fields
//! are ignored on decode and schema violations report the offending field path.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use fleetnav_core::protocol::PROTOCOL_FORMAT_VERSION;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("schema error at `{path}`: {message}")]
pub struct SchemaError {
    /// Dotted path to the offending field; `.` for the document root.
    pub path: String,
    pub message: String,
}

impl SchemaError {
    fn root(message: impl Into<String>) -> Self {
        Self { path: ".".into(), message: message.into() }
    }
}

/// Encodes a struct-shaped message with the format version stamped in.
pub fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    let mut v = serde_json::to_value(msg).expect("message types serialize infallibly");
    if let Value::Object(map) = &mut v {
        map.insert("format_version".into(), Value::from(PROTOCOL_FORMAT_VERSION));
    }
    serde_json::to_vec(&v).expect("json values serialize infallibly")
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, SchemaError> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| SchemaError::root(e.to_string()))?;
    decode_value(v)
}

pub fn decode_value<T: DeserializeOwned>(mut v: Value) -> Result<T, SchemaError> {
    let Value::Object(map) = &mut v else {
        return Err(SchemaError::root("expected a JSON object"));
    };
    match map.remove("format_version") {
        None => {}
        Some(Value::Number(n)) if n.as_u64() == Some(PROTOCOL_FORMAT_VERSION as u64) => {}
        Some(other) => {
            return Err(SchemaError {
                path: "format_version".into(),
                message: format!("unsupported format version {other}"),
            })
        }
    }
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        // missing fields are reported by the parent; name the field itself
        match missing_field(&inner) {
            Some(field) if path == "." => SchemaError { path: field.to_string(), message: inner },
            Some(field) => SchemaError { path: format!("{path}.{field}"), message: inner },
            None => SchemaError { path, message: inner },
        }
    })
}

fn missing_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}

#[cfg(test)]
mod tests {
    use super::*;
    use fleetnav_core::protocol::{RecordingRequest, TaskDescriptor};
    use proptest::prelude::*;

    fn request(id: &str, seed: u64) -> RecordingRequest {
        RecordingRequest::new(id.into(), TaskDescriptor::policy_episode(seed), 1_700_000_000_000)
    }

    #[test]
    fn request_roundtrip_and_version_stamp() {
        let r = request("req-1", 42);
        let bytes = encode(&r);
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(decode::<RecordingRequest>(&bytes).unwrap(), r);
    }

    #[test]
    fn missing_request_id_is_named() {
        let mut v: Value = serde_json::from_slice(&encode(&request("a", 1))).unwrap();
        v.as_object_mut().unwrap().remove("request_id");
        let err = decode_value::<RecordingRequest>(v).unwrap_err();
        assert_eq!(err.path, "request_id");
    }

    #[test]
    fn nested_errors_carry_paths() {
        let mut v: Value = serde_json::from_slice(&encode(&request("a", 1))).unwrap();
        v["task"]["layout_seed"] = Value::from("seven");
        let err = decode_value::<RecordingRequest>(v.clone()).unwrap_err();
        assert_eq!(err.path, "task.layout_seed");
        v["task"].as_object_mut().unwrap().remove("layout_seed");
        assert_eq!(decode_value::<RecordingRequest>(v).unwrap_err().path, "task.layout_seed");
    }

    #[test]
    fn extra_fields_are_dropped() {
        let r = request("a", 3);
        let mut v: Value = serde_json::from_slice(&encode(&r)).unwrap();
        v["x"] = Value::from(12);
        assert_eq!(decode_value::<RecordingRequest>(v).unwrap(), r);
    }

    #[test]
    fn wrong_version_rejected() {
        let mut v: Value = serde_json::from_slice(&encode(&request("a", 3))).unwrap();
        v["format_version"] = Value::from(2);
        assert_eq!(decode_value::<RecordingRequest>(v).unwrap_err().path, "format_version");
        assert!(decode::<RecordingRequest>(b"[1,2]").is_err());
        assert!(decode::<RecordingRequest>(b"{").is_err());
    }

    proptest! {
        #[test]
        fn any_request_roundtrips(id in "[a-z0-9-]{1,24}", seed in any::<u64>(), created in any::<u64>(),
                                  workers in proptest::collection::vec("[a-z]{1,8}", 0..4), policy in proptest::option::of(any::<u64>())) {
            let mut r = RecordingRequest::new(id, TaskDescriptor::policy_episode(seed), created);
            r.permitted_workers = workers;
            r.policy_id = policy;
            prop_assert_eq!(decode::<RecordingRequest>(&encode(&r)).unwrap(), r);
        }
    }
}
