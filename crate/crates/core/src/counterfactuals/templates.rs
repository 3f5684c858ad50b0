//! Prompt rewording templates.
//!
//! A template file `<id>.txt` holds a language tag on its first line and the
//! template body after it. A body containing `{question}` is a wrapper and the
//! prompt replaces the placeholder; any other body is a system prefix placed on
//! its own line above the prompt. Either way the prompt itself is kept verbatim.

use std::collections::BTreeMap;
use std::path::Path;

use super::CounterfactualError;

pub const PLACEHOLDER: &str = "{question}";
pub const IDENTITY_ID: &str = "identity";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub language: String,
    pub system_prefix: String,
    /// Text around the prompt, with `{question}` marking where it goes.
    pub identity_wrapper: Option<String>,
}

impl PromptTemplate {
    pub fn identity() -> Self {
        Self {
            id: IDENTITY_ID.into(),
            language: "any".into(),
            system_prefix: String::new(),
            identity_wrapper: None,
        }
    }

    pub fn parse(id: &str, text: &str) -> Result<Self, CounterfactualError> {
        let text = text.strip_prefix('\u{feff}').unwrap_or(text);
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        let language = header.trim().to_string();
        if language.is_empty() {
            return Err(CounterfactualError::Template(format!("{id}: missing language header")));
        }
        let body = body.trim_end_matches(['\n', '\r']);
        if body.matches(PLACEHOLDER).count() > 1 {
            return Err(CounterfactualError::Template(format!("{id}: more than one {PLACEHOLDER}")));
        }
        let (system_prefix, identity_wrapper) = if body.contains(PLACEHOLDER) {
            (String::new(), Some(body.to_string()))
        } else if body.is_empty() {
            (String::new(), None)
        } else {
            (format!("{body}\n"), None)
        };
        Ok(Self { id: id.to_string(), language, system_prefix, identity_wrapper })
    }

    fn wrapper_parts(&self) -> (&str, &str) {
        match &self.identity_wrapper {
            Some(w) => w.split_once(PLACEHOLDER).unwrap_or((w.as_str(), "")),
            None => ("", ""),
        }
    }

    pub fn apply(&self, prompt: &str) -> String {
        let (before, after) = self.wrapper_parts();
        format!("{}{before}{prompt}{after}", self.system_prefix)
    }

    /// Recovers the prompt from an output of [`PromptTemplate::apply`].
    pub fn strip<'a>(&self, output: &'a str) -> Option<&'a str> {
        let (before, after) = self.wrapper_parts();
        output
            .strip_prefix(self.system_prefix.as_str())?
            .strip_prefix(before)?
            .strip_suffix(after)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

const BUILTIN: [(&str, &str); 3] = [
    ("TC-V1", include_str!("../../templates/TC-V1.txt")),
    ("TC-V2", include_str!("../../templates/TC-V2.txt")),
    ("TC-V3", include_str!("../../templates/TC-V3.txt")),
];

impl TemplateRegistry {
    pub fn empty() -> Self {
        let mut templates = BTreeMap::new();
        templates.insert(IDENTITY_ID.to_string(), PromptTemplate::identity());
        Self { templates }
    }

    /// The shipped TC-V1/TC-V2/TC-V3 templates plus `identity`.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        for (id, text) in BUILTIN {
            reg.insert(PromptTemplate::parse(id, text).expect("shipped templates parse"));
        }
        reg
    }

    pub fn insert(&mut self, tpl: PromptTemplate) {
        self.templates.insert(tpl.id.clone(), tpl);
    }

    /// Adds (or replaces) every `<id>.txt` found in `dir`.
    pub fn load_dir(&mut self, dir: &Path) -> Result<(), CounterfactualError> {
        let entries = std::fs::read_dir(dir).map_err(|e| CounterfactualError::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| CounterfactualError::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let text = std::fs::read_to_string(&path).map_err(|e| CounterfactualError::io(&path, e))?;
            self.insert(PromptTemplate::parse(id, &text)?);
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, CounterfactualError> {
        self.templates
            .get(id)
            .ok_or_else(|| CounterfactualError::UnknownTemplate(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

/// Applies the template `id` from `registry` to `prompt`.
pub fn apply_template(prompt: &str, id: &str, registry: &TemplateRegistry) -> Result<String, CounterfactualError> {
    Ok(registry.get(id)?.apply(prompt))
}
