use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One of the three input streams. The declaration order `T < V < A`
/// fixes the hard-negative cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Video,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Video, Modality::Audio];

    /// The three unordered cross-modal pairs used by pairwise alignment.
    pub const PAIRS: [(Modality, Modality); 3] = [
        (Modality::Text, Modality::Video),
        (Modality::Text, Modality::Audio),
        (Modality::Video, Modality::Audio),
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> char {
        match self {
            Modality::Text => 't',
            Modality::Video => 'v',
            Modality::Audio => 'a',
        }
    }

    /// Slot shuffled for the hard negative at global step `step`.
    pub fn for_step(step: u64) -> Modality {
        Self::ALL[(step % 3) as usize]
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Nonempty subset of modalities, the "view" a query or gallery is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ViewSet(u8);

impl ViewSet {
    pub const T: ViewSet = ViewSet(0b001);
    pub const V: ViewSet = ViewSet(0b010);
    pub const A: ViewSet = ViewSet(0b100);
    pub const TV: ViewSet = ViewSet(0b011);
    pub const TA: ViewSet = ViewSet(0b101);
    pub const VA: ViewSet = ViewSet(0b110);
    pub const TVA: ViewSet = ViewSet(0b111);

    pub fn new(modalities: &[Modality]) -> Result<Self> {
        let bits = modalities.iter().fold(0u8, |acc, m| acc | (1 << m.index()));
        if bits == 0 {
            Err(Error::EmptySubset)
        } else {
            Ok(ViewSet(bits))
        }
    }

    pub fn single(m: Modality) -> Self {
        ViewSet(1 << m.index())
    }

    pub fn contains(self, m: Modality) -> bool {
        self.0 & (1 << m.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_disjoint(self, other: ViewSet) -> bool {
        self.0 & other.0 == 0
    }

    pub fn union(self, other: ViewSet) -> ViewSet {
        ViewSet(self.0 | other.0)
    }

    /// Members in `T, V, A` order.
    pub fn modalities(self) -> impl Iterator<Item = Modality> {
        Modality::ALL.into_iter().filter(move |m| self.contains(*m))
    }

    /// The only member of a single-modality view.
    pub fn as_single(self) -> Option<Modality> {
        (self.len() == 1).then(|| self.modalities().next().expect("one member"))
    }

    /// Every nonempty subset of `{T, V, A}`.
    pub fn all() -> impl Iterator<Item = ViewSet> {
        (1u8..8).map(ViewSet)
    }

    /// Short label; dual views use the benchmark's names `tv`, `av`, `at`.
    pub fn label(self) -> &'static str {
        match self.0 {
            0b001 => "t",
            0b010 => "v",
            0b100 => "a",
            0b011 => "tv",
            0b110 => "av",
            0b101 => "at",
            0b111 => "tva",
            _ => "",
        }
    }
}

impl fmt::Display for ViewSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ViewSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut bits = 0u8;
        for c in s.chars() {
            let m = match c.to_ascii_lowercase() {
                't' => Modality::Text,
                'v' => Modality::Video,
                'a' => Modality::Audio,
                _ => return Err(Error::InvalidArgument(format!("bad view `{s}`"))),
            };
            let bit = 1 << m.index();
            if bits & bit != 0 {
                return Err(Error::InvalidArgument(format!("repeated modality in `{s}`")));
            }
            bits |= bit;
        }
        if bits == 0 {
            return Err(Error::EmptySubset);
        }
        Ok(ViewSet(bits))
    }
}

impl Serialize for ViewSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for ViewSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
