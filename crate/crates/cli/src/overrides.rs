//! `--a.b value` overrides of scalar config leaves.

use anyhow::{bail, Result};
use serde_json::{Map, Value};

/// Top-level scalar leaves that can be overridden without a dot.
pub const TOP_LEVEL: [&str; 2] = ["seed", "output_dir"];

/// Removes every `--key.path value` (or `--key.path=value`) pair from
/// `args` and returns them. Only dotted flags and [`TOP_LEVEL`] keys count.
pub fn extract(args: &mut Vec<String>) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let Some(name) = args[i].strip_prefix("--") else {
            i += 1;
            continue;
        };
        let (key, inline) = match name.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (name.to_string(), None),
        };
        if !key.contains('.') && !TOP_LEVEL.contains(&key.as_str()) {
            i += 1;
            continue;
        }
        match inline {
            Some(v) => {
                out.push((key, v));
                args.remove(i);
            }
            None => {
                if i + 1 >= args.len() {
                    bail!("override --{key} needs a value");
                }
                let v = args.remove(i + 1);
                args.remove(i);
                out.push((key, v));
            }
        }
    }
    Ok(out)
}

/// Sets `key` (dot-separated) in `root`. The value is parsed as JSON when it
/// is valid JSON and taken as a string otherwise.
pub fn apply(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.into()));
    if parsed.is_object() || parsed.is_array() {
        bail!("override `{key}`: only scalar values can be overridden");
    }
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override `{key}`: empty path segment");
    }
    let mut node = root;
    for (depth, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
        let Some(obj) = node.as_object_mut() else {
            bail!("override `{key}`: `{}` is not an object", parts[..depth].join("."));
        };
        if depth + 1 == parts.len() {
            obj.insert((*part).to_string(), parsed);
            return Ok(());
        }
        node = obj.entry((*part).to_string()).or_insert(Value::Null);
    }
    unreachable!("non-empty path")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn extracts_dotted_flags_only() {
        let mut args: Vec<String> = ["train", "--config", "c.json", "--train.batch_size", "32", "--scheme.kind=hard", "--seed", "4", "--force"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let o = extract(&mut args).unwrap();
        assert_eq!(o, vec![("train.batch_size".into(), "32".into()), ("scheme.kind".into(), "hard".into()), ("seed".into(), "4".into())]);
        assert_eq!(args, vec!["train", "--config", "c.json", "--force"]);
    }

    #[test]
    fn missing_value_errors() {
        let mut args = vec!["--train.way".to_string()];
        assert!(extract(&mut args).is_err());
    }

    #[test]
    fn applies_typed_values() {
        let mut v = json!({"train": {"way": 5}});
        apply(&mut v, "train.way", "10").unwrap();
        apply(&mut v, "scheme.kind", "uniform").unwrap();
        apply(&mut v, "train.learning_rate", "0.01").unwrap();
        assert_eq!(v, json!({"train": {"way": 10, "learning_rate": 0.01}, "scheme": {"kind": "uniform"}}));
        assert!(apply(&mut v, "train.way.x", "1").is_err());
        assert!(apply(&mut v, "train.hidden", "[1,2]").is_err());
    }
}
