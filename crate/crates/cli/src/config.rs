//! `--config FILE`: a JSON object whose keys are long flag names.
//!
//! The file is expanded into `--key=value` arguments placed ahead of the
//! user's own, so anything given on the command line overrides it.

use serde_json::Value;

const SUBCOMMANDS: [&str; 10] = [
    "ingest",
    "align",
    "fit",
    "predict",
    "counterfactual",
    "si-compare",
    "cluster",
    "impact",
    "gap",
    "synth-gen",
];

const GLOBAL_KEYS: [&str; 3] = ["seed", "jobs", "out-dir"];
const GLOBAL_WITH_VALUE: [&str; 4] = ["--config", "--seed", "--jobs", "--out-dir"];

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn subcommand_index(argv: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].as_str();
        if SUBCOMMANDS.contains(&a) {
            return Some(i);
        }
        i += if GLOBAL_WITH_VALUE.contains(&a) { 2 } else { 1 };
    }
    None
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn render(key: &str, v: &Value) -> Result<Option<String>, String> {
    let bad = || format!("config key '{key}' has an unsupported value {v}");
    let text = match v {
        Value::Null => return Ok(None),
        Value::Array(items) => items
            .iter()
            .map(|x| scalar(x).ok_or_else(bad))
            .collect::<Result<Vec<_>, _>>()?
            .join(","),
        Value::Object(map) => map
            .iter()
            .map(|(k, x)| scalar(x).map(|x| format!("{k}={x}")).ok_or_else(bad))
            .collect::<Result<Vec<_>, _>>()?
            .join(","),
        other => scalar(other).ok_or_else(bad)?,
    };
    Ok(Some(format!("--{key}={text}")))
}

/// Inserts the arguments from `--config` into `argv`.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>, String> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| format!("config {path}: {e}"))?;
    let Value::Object(map) = value else {
        return Err(format!("config {path} must hold a JSON object"));
    };
    let mut global = Vec::new();
    let mut local = Vec::new();
    for (key, v) in &map {
        let key = key.replace('_', "-");
        if key == "config" {
            return Err("a config file cannot name another config file".into());
        }
        if let Some(arg) = render(&key, v)? {
            if GLOBAL_KEYS.contains(&key.as_str()) {
                global.push(arg);
            } else {
                local.push(arg);
            }
        }
    }
    let mut out = Vec::with_capacity(argv.len() + map.len());
    out.push(argv[0].clone());
    out.extend(global);
    match subcommand_index(&argv) {
        Some(i) => {
            out.extend(argv[1..=i].iter().cloned());
            out.extend(local);
            out.extend(argv[i + 1..].iter().cloned());
        }
        None => out.extend(argv[1..].iter().cloned()),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn values_render_as_flags() {
        assert_eq!(render("k", &serde_json::json!(4)).unwrap().unwrap(), "--k=4");
        assert_eq!(render("normalize", &serde_json::json!(false)).unwrap().unwrap(), "--normalize=false");
        assert_eq!(render("bins", &serde_json::json!([2000, 4000])).unwrap().unwrap(), "--bins=2000,4000");
        assert_eq!(
            render("overrides", &serde_json::json!({"AT": "2020-03-16"})).unwrap().unwrap(),
            "--overrides=AT=2020-03-16"
        );
        assert!(render("x", &serde_json::json!([[1]])).is_err());
    }

    #[test]
    fn config_goes_before_user_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"k": 3, "seed": 9, "window": "0:60"}"#).unwrap();
        let p = path.to_str().unwrap();
        let argv = strings(&["synthctl", "--config", p, "cluster", "--k", "5"]);
        let out = expand(argv).unwrap();
        assert_eq!(out, strings(&["synthctl", "--seed=9", "--config", p, "cluster", "--k=3", "--window=0:60", "--k", "5"]));
    }
}
