//! JSON output with lexicographically sorted object keys.

use serde::Serialize;

/// Compact JSON with sorted keys. Going through `serde_json::Value` sorts
/// keys because its map is a `BTreeMap` without the `preserve_order` feature.
pub fn to_sorted_string<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable value");
    serde_json::to_string(&v).expect("value serializes")
}

/// Indented variant of [`to_sorted_string`], newline-terminated.
pub fn to_sorted_string_pretty<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable value");
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}
