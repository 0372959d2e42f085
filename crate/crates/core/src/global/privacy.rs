//! Structural scan for anything in a JSON document that could carry image
//! data. Legitimate payloads are small: numbers, short labels and one
//! float embedding, so the rules can afford to be blunt.

use serde_json::Value;
use thiserror::Error;

const FORBIDDEN_KEYS: [&str; 14] =
    ["image", "img", "pixel", "crop", "jpeg", "jpg", "png", "bitmap", "blob", "bytes", "base64", "thumbnail", "photo", "face"];
const MAX_STRING: usize = 256;
const MAX_ARRAY: usize = 4096;
/// Arrays this long holding only whole numbers in 0..=255 look like raw
/// bytes, whether written as integers or as floats.
pub const BYTE_RUN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrivacyViolation {
    #[error("field {path} has a pixel-like name")]
    ForbiddenKey { path: String },
    #[error("field {path} holds a {len}-character string")]
    LongString { path: String, len: usize },
    #[error("field {path} holds an encoded binary blob")]
    EncodedBlob { path: String },
    #[error("field {path} holds a byte array")]
    ByteArray { path: String },
    #[error("field {path} holds an array of {len} elements")]
    OversizedArray { path: String, len: usize },
}

fn looks_base64(s: &str) -> bool {
    s.len() >= 64 && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'+' | b'/' | b'=' | b'-' | b'_'))
}

fn byte_like(v: &Value) -> bool {
    v.as_u64().is_some_and(|n| n <= 255) || v.as_f64().is_some_and(|f| f.fract() == 0.0 && (0.0..=255.0).contains(&f))
}

fn walk(v: &Value, path: &mut String) -> Result<(), PrivacyViolation> {
    match v {
        Value::String(s) => {
            if s.starts_with("data:") || looks_base64(s) {
                return Err(PrivacyViolation::EncodedBlob { path: path.clone() });
            }
            if s.len() > MAX_STRING {
                return Err(PrivacyViolation::LongString { path: path.clone(), len: s.len() });
            }
            Ok(())
        }
        Value::Array(items) => {
            if items.len() > MAX_ARRAY {
                return Err(PrivacyViolation::OversizedArray { path: path.clone(), len: items.len() });
            }
            if items.len() >= BYTE_RUN && items.iter().all(byte_like) {
                return Err(PrivacyViolation::ByteArray { path: path.clone() });
            }
            for (i, x) in items.iter().enumerate() {
                let len = path.len();
                path.push_str(&format!("[{i}]"));
                walk(x, path)?;
                path.truncate(len);
            }
            Ok(())
        }
        Value::Object(map) => {
            for (k, x) in map {
                let len = path.len();
                if !path.is_empty() {
                    path.push('.');
                }
                path.push_str(k);
                let lower = k.to_ascii_lowercase();
                if FORBIDDEN_KEYS.iter().any(|f| lower.contains(f)) {
                    return Err(PrivacyViolation::ForbiddenKey { path: path.clone() });
                }
                walk(x, path)?;
                path.truncate(len);
            }
            Ok(())
        }
        Value::Null | Value::Bool(_) | Value::Number(_) => Ok(()),
    }
}

/// Rejects documents with pixel-like field names, encoded blobs, long
/// strings or byte arrays anywhere inside them.
pub fn scan(value: &Value) -> Result<(), PrivacyViolation> {
    walk(value, &mut String::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn legitimate_payloads_pass() {
        let v: Vec<f32> = (0..512).map(|i| (i as f32 / 512.0) - 0.5).collect();
        scan(&json!({"vector": v, "camera_id": "cam-1", "local_id": 3, "capture_time": 5, "quality": 0.8})).unwrap();
        scan(&json!({"frame_start": 0, "start_time": 0, "frame_period_ns": 1, "persons": vec![3u32; 30], "objects": vec![1u32; 30]}))
            .unwrap();
    }

    #[test]
    fn pixel_carriers_fail() {
        assert!(matches!(scan(&json!({"crop_png": 1})), Err(PrivacyViolation::ForbiddenKey { .. })));
        assert!(matches!(scan(&json!({"a": {"Pixels": []}})), Err(PrivacyViolation::ForbiddenKey { .. })));
        assert!(matches!(scan(&json!({"note": "A".repeat(80)})), Err(PrivacyViolation::EncodedBlob { .. })));
        assert!(matches!(scan(&json!({"note": "data:image/png;base64,xx"})), Err(PrivacyViolation::EncodedBlob { .. })));
        assert!(matches!(scan(&json!({"v": vec![7u8; 100]})), Err(PrivacyViolation::ByteArray { .. })));
        assert!(matches!(scan(&json!({"v": vec![7.0f32; 100]})), Err(PrivacyViolation::ByteArray { .. })));
        assert!(matches!(scan(&json!({"v": vec![0.5f32; 5000]})), Err(PrivacyViolation::OversizedArray { .. })));
    }

    proptest! {
        #[test]
        fn any_byte_blob_is_caught(bytes in proptest::collection::vec(any::<u8>(), 64..400), key in "[a-z]{1,8}") {
            let as_array = json!({ key.clone(): bytes.clone() });
            prop_assert!(scan(&as_array).is_err());
            let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
            let as_hex = json!({ key: hex });
            prop_assert!(scan(&as_hex).is_err());
        }
    }
}
