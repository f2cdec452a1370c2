use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::AttributeId;

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("line {line}: expected `name<TAB>u64`")]
    Malformed { line: usize },
    #[error("line {line}: invalid attribute name {name:?}")]
    BadName { line: usize, name: String },
    #[error("duplicate attribute name {0:?}")]
    DuplicateName(String),
    #[error("attribute value {0} is bound to two names")]
    DuplicateValue(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Public, off-chain mapping between attribute names and their numeric identifiers.
///
/// The mapping is a bijection over the names it contains. Numeric literals
/// without a name are valid attributes on their own (case ids, for instance).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AttributeDictionary {
    by_name: BTreeMap<String, AttributeId>,
    by_id: BTreeMap<AttributeId, String>,
}

impl AttributeDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: u64) -> Result<(), DictionaryError> {
        if !is_valid_name(name) {
            return Err(DictionaryError::BadName { line: 0, name: name.to_string() });
        }
        if self.by_name.contains_key(name) {
            return Err(DictionaryError::DuplicateName(name.to_string()));
        }
        let id = AttributeId(value);
        if self.by_id.contains_key(&id) {
            return Err(DictionaryError::DuplicateValue(value));
        }
        self.by_name.insert(name.to_string(), id);
        self.by_id.insert(id, name.to_string());
        Ok(())
    }

    pub fn with(mut self, name: &str, value: u64) -> Result<Self, DictionaryError> {
        self.insert(name, value)?;
        Ok(self)
    }

    pub fn id_of(&self, name: &str) -> Option<AttributeId> {
        self.by_name.get(name).copied()
    }

    pub fn name_of(&self, id: AttributeId) -> Option<&str> {
        self.by_id.get(&id).map(String::as_str)
    }

    /// Resolves a name or a decimal literal.
    pub fn resolve(&self, token: &str) -> Option<AttributeId> {
        if !token.is_empty() && token.bytes().all(|b| b.is_ascii_digit()) {
            return token.parse().ok().map(AttributeId);
        }
        self.id_of(token)
    }

    /// Name when known, otherwise the decimal value.
    pub fn label(&self, id: AttributeId) -> String {
        self.name_of(id).map(str::to_string).unwrap_or_else(|| id.to_string())
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, AttributeId)> {
        self.by_name.iter().map(|(n, id)| (n.as_str(), *id))
    }

    /// Parses the `name<TAB>u64` format. `#` starts a comment; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, DictionaryError> {
        let mut dict = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            if line.trim().is_empty() {
                continue;
            }
            let (name, value) = line.split_once('\t').ok_or(DictionaryError::Malformed { line: line_no })?;
            let name = name.trim();
            let value: u64 = value.trim().parse().map_err(|_| DictionaryError::Malformed { line: line_no })?;
            if !is_valid_name(name) {
                return Err(DictionaryError::BadName { line: line_no, name: name.to_string() });
            }
            dict.insert(name, value)?;
        }
        Ok(dict)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DictionaryError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut entries: Vec<_> = self.by_id.iter().collect();
        entries.sort();
        for (id, name) in entries {
            let _ = writeln!(out, "{name}\t{id}");
        }
        out
    }
}

/// Names must be usable as policy tokens: not numeric, not a keyword.
pub(crate) fn is_valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.chars().all(super::parser::is_attr_char)
        && !name.bytes().all(|b| b.is_ascii_digit())
        && !super::parser::is_keyword(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tab_separated_with_comments() {
        let dict = AttributeDictionary::parse("# roles\nSupplier\t16\n\nElectronics\t3 # field\n").unwrap();
        assert_eq!(dict.id_of("Supplier"), Some(AttributeId(16)));
        assert_eq!(dict.name_of(AttributeId(3)), Some("Electronics"));
        assert_eq!(dict.resolve("14548487"), Some(AttributeId(14548487)));
        assert_eq!(dict.resolve("supplier"), None);
        assert_eq!(AttributeDictionary::parse(&dict.to_text()).unwrap(), dict);
    }

    #[test]
    fn rejects_non_bijective_entries() {
        assert!(matches!(
            AttributeDictionary::parse("A\t1\nB\t1\n"),
            Err(DictionaryError::DuplicateValue(1))
        ));
        assert!(matches!(
            AttributeDictionary::parse("A\t1\nA\t2\n"),
            Err(DictionaryError::DuplicateName(_))
        ));
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(AttributeDictionary::parse("A 1\n"), Err(DictionaryError::Malformed { line: 1 })));
        assert!(matches!(AttributeDictionary::parse("and\t1\n"), Err(DictionaryError::BadName { .. })));
        assert!(matches!(AttributeDictionary::parse("42\t1\n"), Err(DictionaryError::BadName { .. })));
        assert!(matches!(AttributeDictionary::parse("A\t-1\n"), Err(DictionaryError::Malformed { .. })));
    }
}
