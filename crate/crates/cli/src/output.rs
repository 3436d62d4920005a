use serde::Serialize;
use serde_json::Value;

/// Command result: JSON for `--json`, text otherwise.
pub struct Output {
    pub value: Value,
    pub text: String,
    pub exit_code: u8,
}

impl Output {
    pub fn new<T: Serialize>(value: &T, text: impl Into<String>) -> anyhow::Result<Self> {
        Ok(Self { value: serde_json::to_value(value)?, text: text.into(), exit_code: 0 })
    }

    pub fn text(text: impl Into<String>) -> Self {
        let text = text.into();
        Self { value: Value::String(text.clone()), text, exit_code: 0 }
    }

    pub fn with_exit(mut self, code: u8) -> Self {
        self.exit_code = code;
        self
    }

    pub fn print(&self, json: bool) {
        if json {
            println!("{}", serde_json::to_string_pretty(&self.value).expect("JSON value serializes"));
        } else if !self.text.is_empty() {
            println!("{}", self.text.trim_end());
        }
    }
}
