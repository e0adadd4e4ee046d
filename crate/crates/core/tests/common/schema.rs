//! Minimal JSON Schema validator covering the subset the shipped schema
//! files use: type, properties, required, additionalProperties, items,
//! minimum, maximum.

use serde_json::Value;

pub fn validate(schema: &Value, value: &Value, path: &str) -> Result<(), String> {
    if let Some(t) = schema.get("type").and_then(|t| t.as_str()) {
        let ok = match t {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "number" => value.is_number(),
            "integer" => value.is_i64() || value.is_u64(),
            "boolean" => value.is_boolean(),
            other => return Err(format!("{path}: unsupported schema type {other:?}")),
        };
        if !ok {
            return Err(format!("{path}: expected {t}, got {value}"));
        }
    }
    if let Some(min) = schema.get("minimum").and_then(|m| m.as_f64()) {
        let v = value
            .as_f64()
            .ok_or_else(|| format!("{path}: not numeric"))?;
        if v < min {
            return Err(format!("{path}: {v} below minimum {min}"));
        }
    }
    if let Some(max) = schema.get("maximum").and_then(|m| m.as_f64()) {
        let v = value
            .as_f64()
            .ok_or_else(|| format!("{path}: not numeric"))?;
        if v > max {
            return Err(format!("{path}: {v} above maximum {max}"));
        }
    }
    if let Some(obj) = value.as_object() {
        if let Some(required) = schema.get("required").and_then(|r| r.as_array()) {
            for key in required {
                let key = key.as_str().unwrap_or_default();
                if !obj.contains_key(key) {
                    return Err(format!("{path}: missing required key {key:?}"));
                }
            }
        }
        let props = schema.get("properties").and_then(|p| p.as_object());
        let additional = schema.get("additionalProperties");
        for (key, val) in obj {
            let sub_path = format!("{path}/{key}");
            match props.and_then(|p| p.get(key)) {
                Some(sub_schema) => validate(sub_schema, val, &sub_path)?,
                None => match additional {
                    Some(Value::Bool(false)) => {
                        return Err(format!("{path}: unexpected key {key:?}"))
                    }
                    Some(Value::Bool(true)) | None => {}
                    Some(sub_schema) => validate(sub_schema, val, &sub_path)?,
                },
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            validate(items, v, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}
