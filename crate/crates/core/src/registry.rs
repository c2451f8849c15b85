//! Domain, slot-type and intent registries.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Intent label marking an unclear request.
pub const UNKNOWN_INTENT: &str = "Unknown";

/// Sentinel database name for an unresolved domain. The spelling is kept
/// as-is; `unknownDomain` is accepted as an alias.
pub const UNKNOWN_DOMAIN: &str = "unknowDomain";
pub const UNKNOWN_DOMAIN_ALIAS: &str = "unknownDomain";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("unknown domain {0:?}")]
    UnknownDomain(String),
    #[error("intent {intent:?} is not registered")]
    UnknownIntent { intent: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainId {
    Property,
    LandAuction,
    Finance,
}

impl DomainId {
    /// Registry order; the cross-domain execution fallback walks this list.
    pub const ALL: [DomainId; 3] = [DomainId::Property, DomainId::LandAuction, DomainId::Finance];

    pub fn as_str(self) -> &'static str {
        match self {
            DomainId::Property => "property",
            DomainId::LandAuction => "land_auction",
            DomainId::Finance => "finance",
        }
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainId {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DomainId::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| RegistryError::UnknownDomain(s.to_string()))
    }
}

/// A domain, or the unresolved sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum DomainRef {
    Known(DomainId),
    Unknown,
}

impl DomainRef {
    pub fn known(self) -> Option<DomainId> {
        match self {
            DomainRef::Known(d) => Some(d),
            DomainRef::Unknown => None,
        }
    }
}

impl fmt::Display for DomainRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainRef::Known(d) => d.fmt(f),
            DomainRef::Unknown => f.write_str(UNKNOWN_DOMAIN),
        }
    }
}

impl From<DomainRef> for String {
    fn from(d: DomainRef) -> String {
        d.to_string()
    }
}

impl TryFrom<String> for DomainRef {
    type Error = RegistryError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if s == UNKNOWN_DOMAIN || s == UNKNOWN_DOMAIN_ALIAS {
            Ok(DomainRef::Unknown)
        } else {
            s.parse().map(DomainRef::Known)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSpec {
    /// Name used in underspecification labels and clarification text.
    pub label: String,
    /// Proper-noun slots (project or enterprise names) eligible for
    /// abbreviation.
    #[serde(default)]
    pub entity: bool,
    /// Columns holding values of this slot, per domain.
    pub domains: IndexMap<DomainId, Vec<String>>,
}

/// Ordered slot-type registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlotRegistry {
    types: IndexMap<String, SlotSpec>,
}

impl SlotRegistry {
    pub fn new(types: IndexMap<String, SlotSpec>) -> Self {
        Self { types }
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        read_json(path)
    }

    pub fn get(&self, slot_type: &str) -> Option<&SlotSpec> {
        self.types.get(slot_type)
    }

    pub fn contains(&self, slot_type: &str) -> bool {
        self.types.contains_key(slot_type)
    }

    /// Resolves a slot-type key or its label to the key.
    pub fn resolve<'a>(&'a self, name: &str) -> Option<&'a str> {
        if let Some((k, _)) = self.types.get_key_value(name) {
            return Some(k.as_str());
        }
        self.types
            .iter()
            .find(|(_, s)| s.label == name)
            .map(|(k, _)| k.as_str())
    }

    pub fn label<'a>(&'a self, slot_type: &'a str) -> &'a str {
        self.types.get(slot_type).map(|s| s.label.as_str()).unwrap_or(slot_type)
    }

    pub fn columns(&self, slot_type: &str, domain: DomainId) -> Option<&[String]> {
        self.types
            .get(slot_type)
            .and_then(|s| s.domains.get(&domain))
            .map(|v| v.as_slice())
    }

    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.types.keys().map(|k| k.as_str())
    }

    /// Position of a slot type in registry order.
    pub fn position(&self, slot_type: &str) -> usize {
        self.types.get_index_of(slot_type).unwrap_or(usize::MAX)
    }

    pub fn entity_types(&self) -> impl Iterator<Item = &str> {
        self.types.iter().filter(|(_, s)| s.entity).map(|(k, _)| k.as_str())
    }
}

/// Intent → domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntentRegistry {
    intents: IndexMap<String, DomainId>,
}

impl IntentRegistry {
    pub fn new(intents: IndexMap<String, DomainId>) -> Self {
        Self { intents }
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        read_json(path)
    }

    pub fn domain_of(&self, intent: &str) -> Option<DomainId> {
        self.intents.get(intent).copied()
    }

    pub fn contains(&self, intent: &str) -> bool {
        self.intents.contains_key(intent)
    }

    pub fn intents(&self) -> impl Iterator<Item = (&str, DomainId)> {
        self.intents.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, RegistryError> {
    let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| RegistryError::Json {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_names_round_trip() {
        for d in DomainId::ALL {
            assert_eq!(d.as_str().parse::<DomainId>().unwrap(), d);
        }
        assert!("housing".parse::<DomainId>().is_err());
    }

    #[test]
    fn sentinel_alias_is_canonicalized() {
        let a = DomainRef::try_from(UNKNOWN_DOMAIN_ALIAS.to_string()).unwrap();
        assert_eq!(a, DomainRef::Unknown);
        assert_eq!(a.to_string(), "unknowDomain");
        let json = serde_json::to_string(&DomainRef::Known(DomainId::LandAuction)).unwrap();
        assert_eq!(json, "\"land_auction\"");
    }

    #[test]
    fn resolves_labels_to_keys() {
        let reg: SlotRegistry = serde_json::from_str(
            r#"{"ProjectName": {"label": "project name", "entity": true, "domains": {"property": ["project_name"]}},
                "City": {"label": "City", "domains": {"property": ["city"]}}}"#,
        )
        .unwrap();
        assert_eq!(reg.resolve("project name"), Some("ProjectName"));
        assert_eq!(reg.resolve("City"), Some("City"));
        assert_eq!(reg.resolve("Planet"), None);
        assert_eq!(reg.position("City"), 1);
        assert_eq!(reg.entity_types().collect::<Vec<_>>(), vec!["ProjectName"]);
    }
}
