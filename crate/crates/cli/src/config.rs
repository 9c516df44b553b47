//! Optional JSON config file. The file holds one object per command, keyed by the
//! command name, whose keys are the long flag names (`-` or `_` both accepted):
//!
//! ```json
//! { "fit": { "steps": 500, "lr": 0.003 }, "sample": { "n": 100000 } }
//! ```
//!
//! A value from the file only fills a flag that was not given on the command line.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{io_err, CliError, CliResult};

pub struct ConfigFile {
    sections: Map<String, Value>,
}

impl ConfigFile {
    pub fn empty() -> Self {
        ConfigFile { sections: Map::new() }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        match serde_json::from_str(&text) {
            Ok(Value::Object(sections)) => Ok(ConfigFile { sections }),
            Ok(_) => Err(CliError::input(format!("{}: config must be a JSON object", path.display()))),
            Err(e) => Err(CliError::input(format!("{}: {e}", path.display()))),
        }
    }

    /// Fills unset fields of `args` from the section named `command`.
    pub fn apply<T: Serialize + DeserializeOwned>(&self, command: &str, args: T) -> CliResult<T> {
        let Some(section) = self.sections.get(command) else {
            return Ok(args);
        };
        let Value::Object(section) = section else {
            return Err(CliError::input(format!("config section `{command}` must be an object")));
        };
        let Value::Object(mut fields) = serde_json::to_value(&args)? else {
            unreachable!("argument structs serialize to objects");
        };
        for (key, value) in section {
            let key = key.replace('-', "_");
            let Some(slot) = fields.get_mut(&key) else {
                return Err(CliError::input(format!("config section `{command}` has unknown key `{key}`")));
            };
            if slot.is_null() || *slot == Value::Bool(false) {
                *slot = value.clone();
            }
        }
        serde_json::from_value(Value::Object(fields))
            .map_err(|e| CliError::input(format!("config section `{command}`: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Args {
        steps: Option<usize>,
        lr: Option<f64>,
        verbose: bool,
    }

    fn cfg(json: &str) -> ConfigFile {
        let Value::Object(sections) = serde_json::from_str(json).unwrap() else { panic!() };
        ConfigFile { sections }
    }

    #[test]
    fn flags_win_over_the_file() {
        let c = cfg(r#"{"fit": {"steps": 10, "lr": 0.5, "verbose": true}}"#);
        let a = c
            .apply("fit", Args { steps: Some(3), lr: None, verbose: false })
            .unwrap();
        assert_eq!(a, Args { steps: Some(3), lr: Some(0.5), verbose: true });
    }

    #[test]
    fn unknown_keys_and_bad_types_are_rejected() {
        let c = cfg(r#"{"fit": {"stepz": 10}}"#);
        assert!(c.apply("fit", Args { steps: None, lr: None, verbose: false }).is_err());
        let c = cfg(r#"{"fit": {"steps": "many"}}"#);
        assert!(c.apply("fit", Args { steps: None, lr: None, verbose: false }).is_err());
    }

    #[test]
    fn other_sections_are_ignored() {
        let c = cfg(r#"{"sample": {"n": 5}}"#);
        let a = c.apply("fit", Args { steps: None, lr: None, verbose: false }).unwrap();
        assert_eq!(a.steps, None);
    }
}
