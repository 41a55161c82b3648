//! Dotted-key overrides applied to a configuration tree.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// `key=value` pairs in command-line order. The same key twice with
/// different values is a conflict.
pub fn parse_overrides(raw: &[String]) -> Result<Vec<(String, Value)>, CliError> {
    let mut seen: BTreeMap<String, Value> = BTreeMap::new();
    let mut out = Vec::new();
    for item in raw {
        let (key, text) = item.split_once('=').ok_or_else(|| CliError::Config(format!("override `{item}` is not key=value")))?;
        let key = key.trim();
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(CliError::Config(format!("override `{item}` has an empty key segment")));
        }
        // bare words are strings; everything else must be valid JSON
        let value = serde_json::from_str(text.trim()).unwrap_or_else(|_| Value::String(text.trim().to_string()));
        match seen.get(key) {
            Some(prev) if *prev != value => return Err(CliError::Conflict(format!("`{key}` set to both {prev} and {value}"))),
            Some(_) => continue,
            None => {
                seen.insert(key.to_string(), value.clone());
                out.push((key.to_string(), value));
            }
        }
    }
    Ok(out)
}

/// Set `key` in `tree`. Every segment must already exist, except below a
/// null (an unset optional block).
fn set(tree: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let unknown = || CliError::Config(format!("unknown key `{key}`"));
    let segments: Vec<&str> = key.split('.').collect();
    let mut node = tree;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => {
                if !map.contains_key(*seg) && !map.is_empty() {
                    return Err(unknown());
                }
                map.entry(seg.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| unknown())?;
                items.get_mut(idx).ok_or_else(unknown)?
            }
            _ => return Err(unknown()),
        };
        if last {
            *node = value;
            return Ok(());
        }
    }
    Ok(())
}

/// Deserialize with the path of the first offending field in the error.
pub fn from_tree<T: DeserializeOwned>(tree: Value, origin: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(tree).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            CliError::Config(format!("{origin}: {inner}"))
        } else {
            CliError::Config(format!("{origin}: at `{path}`: {inner}"))
        }
    })
}

/// Fill defaults, apply the overrides, and validate the result by
/// deserializing it again.
pub fn resolve<T: Serialize + DeserializeOwned>(tree: Value, overrides: &[(String, Value)], origin: &str) -> Result<T, CliError> {
    let filled: T = from_tree(tree, origin)?;
    let mut tree = serde_json::to_value(&filled).map_err(|e| CliError::Config(e.to_string()))?;
    for (k, v) in overrides {
        set(&mut tree, k, v.clone())?;
    }
    from_tree(tree, origin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dockflight_core::sim::ScenarioSpec;

    fn ov(items: &[&str]) -> Vec<(String, Value)> {
        parse_overrides(&items.iter().map(|s| s.to_string()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn values_are_typed() {
        let o = ov(&["a=1.5", "b=true", "c=assembly", "d=[1,2]"]);
        assert_eq!(o[0].1, Value::from(1.5));
        assert_eq!(o[1].1, Value::Bool(true));
        assert_eq!(o[2].1, Value::from("assembly"));
        assert_eq!(o[3].1, serde_json::json!([1, 2]));
    }

    #[test]
    fn conflicts_and_repeats() {
        assert!(matches!(parse_overrides(&["a=1".into(), "a=2".into()]), Err(CliError::Conflict(_))));
        assert_eq!(ov(&["a=1", "a=1"]).len(), 1);
        assert!(parse_overrides(&["a.=1".into()]).is_err());
        assert!(parse_overrides(&["novalue".into()]).is_err());
    }

    #[test]
    fn nested_override_applies() {
        let spec: ScenarioSpec = resolve(Value::Object(Default::default()), &ov(&["fsm.tolerances.e2_x=0.004", "seed=9", "duration=3"]), "cli").unwrap();
        assert_eq!(spec.fsm.tolerances.e2_x, 0.004);
        assert_eq!(spec.seed, 9);
        assert_eq!(spec.duration, Some(3.0));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = resolve::<ScenarioSpec>(Value::Object(Default::default()), &ov(&["rotr.alpha=0.3"]), "cli").unwrap_err();
        assert!(err.to_string().contains("rotr.alpha"), "{err}");
        let err = resolve::<ScenarioSpec>(serde_json::json!({"fsm": {"tik": 0.1}}), &[], "spec.json").unwrap_err();
        assert!(err.to_string().contains("fsm.tik") || err.to_string().contains("tik"), "{err}");
    }

    #[test]
    fn type_errors_name_the_path() {
        let err = resolve::<ScenarioSpec>(Value::Object(Default::default()), &ov(&["fsm.tick=fast"]), "cli").unwrap_err();
        assert!(err.to_string().contains("fsm.tick"), "{err}");
    }
}
