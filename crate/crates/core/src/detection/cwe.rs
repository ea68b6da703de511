use std::collections::BTreeMap;
use std::path::Path;

/// CWE descriptions for the CWE-enhanced baseline.
///
/// Either a table (`CWE-416<TAB>description` per line) looked up by the CWE
/// of the analyzed code, or one free-text description used for every code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CweDescriptions {
    Table(BTreeMap<String, String>),
    Fixed(String),
}

impl CweDescriptions {
    /// The descriptions shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../../data/cwe_descriptions.tsv"))
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    /// A text whose non-empty lines all look like `CWE-<n><TAB>...` is a
    /// table; anything else is a fixed description.
    pub fn parse(text: &str) -> Self {
        let rows: Option<BTreeMap<String, String>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (id, desc) = l.split_once('\t')?;
                let id = id.trim();
                let digits = id.strip_prefix("CWE-")?;
                (!digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()))
                    .then(|| (id.to_string(), desc.trim().to_string()))
            })
            .collect();
        match rows {
            Some(t) if !t.is_empty() => CweDescriptions::Table(t),
            _ => CweDescriptions::Fixed(text.trim().to_string()),
        }
    }

    pub fn lookup(&self, cwe_id: Option<&str>) -> Option<&str> {
        match self {
            CweDescriptions::Fixed(s) => (!s.is_empty()).then_some(s.as_str()),
            CweDescriptions::Table(t) => t.get(cwe_id?).map(String::as_str),
        }
    }
}
