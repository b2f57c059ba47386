use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{ArcId, NodeId};

/// Identifier of a processing element in the resource pool.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceId(pub String);

impl ResourceId {
    pub fn new(id: impl Into<String>) -> Self {
        ResourceId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PowerClass {
    #[serde(alias = "green")]
    Green,
    #[serde(alias = "amber")]
    Amber,
    #[serde(alias = "red")]
    Red,
}

impl PowerClass {
    /// Preference rank used when recruiting under a power contract (lower is better).
    pub fn rank(self) -> u8 {
        match self {
            PowerClass::Green => 0,
            PowerClass::Amber => 1,
            PowerClass::Red => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChannelKind {
    #[serde(alias = "plain")]
    Plain,
    #[serde(alias = "ssl")]
    Ssl,
}

/// Closed set of metadata keys. Anything else lives under `ext.`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetaKey {
    Location,
    Secure,
    PowerClass,
    ProcType,
    ChannelKind,
    Bandwidth,
    Ext(String),
}

impl MetaKey {
    pub fn name(&self) -> String {
        match self {
            MetaKey::Location => "location".into(),
            MetaKey::Secure => "secure".into(),
            MetaKey::PowerClass => "powerClass".into(),
            MetaKey::ProcType => "procType".into(),
            MetaKey::ChannelKind => "channelKind".into(),
            MetaKey::Bandwidth => "bandwidth".into(),
            MetaKey::Ext(k) => format!("ext.{k}"),
        }
    }

    /// Whether a value has the type this key requires.
    pub fn admits(&self, value: &MetaValue) -> bool {
        matches!(
            (self, value),
            (MetaKey::Location, MetaValue::Resource(_))
                | (MetaKey::Secure, MetaValue::Flag(_))
                | (MetaKey::PowerClass, MetaValue::Power(_))
                | (MetaKey::ProcType, MetaValue::Text(_))
                | (MetaKey::ChannelKind, MetaValue::Channel(_))
                | (MetaKey::Bandwidth, MetaValue::Number(_))
                | (MetaKey::Ext(_), _)
        )
    }

    /// `location` is node-only, `channelKind` arc-only; the rest go anywhere.
    pub fn allowed_on_node(&self) -> bool {
        !matches!(self, MetaKey::ChannelKind)
    }

    pub fn allowed_on_arc(&self) -> bool {
        !matches!(self, MetaKey::Location)
    }

    /// Decodes a JSON value according to this key's type.
    pub fn decode(&self, value: serde_json::Value) -> Result<MetaValue, serde_json::Error> {
        Ok(match self {
            MetaKey::Location => MetaValue::Resource(serde_json::from_value(value)?),
            MetaKey::Secure => MetaValue::Flag(serde_json::from_value(value)?),
            MetaKey::PowerClass => MetaValue::Power(serde_json::from_value(value)?),
            MetaKey::ProcType => MetaValue::Text(serde_json::from_value(value)?),
            MetaKey::ChannelKind => MetaValue::Channel(serde_json::from_value(value)?),
            MetaKey::Bandwidth => MetaValue::Number(serde_json::from_value(value)?),
            MetaKey::Ext(_) => match value {
                serde_json::Value::Bool(b) => MetaValue::Flag(b),
                serde_json::Value::Number(n) => MetaValue::Number(n.as_f64().unwrap_or(0.0)),
                serde_json::Value::String(s) => MetaValue::Text(s),
                other => MetaValue::Text(other.to_string()),
            },
        })
    }
}

impl fmt::Display for MetaKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown metadata key `{0}`")]
pub struct UnknownKey(pub String);

impl FromStr for MetaKey {
    type Err = UnknownKey;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "location" => MetaKey::Location,
            "secure" => MetaKey::Secure,
            "powerClass" => MetaKey::PowerClass,
            "procType" => MetaKey::ProcType,
            "channelKind" => MetaKey::ChannelKind,
            "bandwidth" => MetaKey::Bandwidth,
            other => match other.strip_prefix("ext.") {
                Some(rest) if !rest.is_empty() => MetaKey::Ext(rest.to_string()),
                _ => return Err(UnknownKey(other.to_string())),
            },
        })
    }
}

impl Serialize for MetaKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for MetaKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum MetaValue {
    Resource(ResourceId),
    Flag(bool),
    Power(PowerClass),
    Text(String),
    Channel(ChannelKind),
    Number(f64),
}

/// Typed key/value metadata attached to a node or an arc.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetadataSet {
    entries: BTreeMap<MetaKey, MetaValue>,
}

impl MetadataSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &MetaKey) -> Option<&MetaValue> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MetaKey, &MetaValue)> {
        self.entries.iter()
    }

    /// Sets `key` to `value`, returning the previous value. The caller is
    /// responsible for type checking via [`MetaKey::admits`].
    pub(crate) fn set(&mut self, key: MetaKey, value: MetaValue) -> Option<MetaValue> {
        self.entries.insert(key, value)
    }

    pub(crate) fn remove(&mut self, key: &MetaKey) -> Option<MetaValue> {
        self.entries.remove(key)
    }

    pub fn location(&self) -> Option<&ResourceId> {
        match self.entries.get(&MetaKey::Location) {
            Some(MetaValue::Resource(r)) => Some(r),
            _ => None,
        }
    }

    pub fn secure(&self) -> Option<bool> {
        match self.entries.get(&MetaKey::Secure) {
            Some(MetaValue::Flag(b)) => Some(*b),
            _ => None,
        }
    }

    pub fn power_class(&self) -> Option<PowerClass> {
        match self.entries.get(&MetaKey::PowerClass) {
            Some(MetaValue::Power(p)) => Some(*p),
            _ => None,
        }
    }

    pub fn channel_kind(&self) -> Option<ChannelKind> {
        match self.entries.get(&MetaKey::ChannelKind) {
            Some(MetaValue::Channel(c)) => Some(*c),
            _ => None,
        }
    }

    /// Builder-style insert with type checking.
    pub fn with(mut self, key: MetaKey, value: MetaValue) -> Self {
        debug_assert!(key.admits(&value), "{key} does not admit {value:?}");
        self.entries.insert(key, value);
        self
    }
}

impl Serialize for MetadataSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.entries.len()))?;
        for (k, v) in &self.entries {
            map.serialize_entry(&k.name(), v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for MetadataSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, serde_json::Value>::deserialize(d)?;
        let mut entries = BTreeMap::new();
        for (k, v) in raw {
            let key: MetaKey = k.parse().map_err(D::Error::custom)?;
            let value = key.decode(v).map_err(D::Error::custom)?;
            entries.insert(key, value);
        }
        Ok(MetadataSet { entries })
    }
}

/// Something metadata can be attached to.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Node(NodeId),
    Arc(ArcId),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Node(n) => write!(f, "node {n}"),
            Target::Arc(a) => write!(f, "arc {a}"),
        }
    }
}
