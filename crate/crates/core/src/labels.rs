//! Track component vocabulary: component labels, footage names, the
//! fifteen canonical defect cases and run manifests pairing control frames
//! with the frames under inspection.
//!
//! Label grammar: `tie "B"` for blocks, `rail "-" tie kind` for screws (S),
//! washers (W) and connectors (C). Rails are 1 and 2, ties 1 through 9, and
//! connectors only exist at ties 1 and 9.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const RAILS: u8 = 2;
pub const TIES: u8 = 9;
pub const CASES: u8 = 15;
pub const TRIALS: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("malformed component label {0:?}")]
    Malformed(String),
    #[error("rail {0} out of range (expected 1 or 2)")]
    BadRail(u8),
    #[error("tie {0} out of range (expected 1..=9)")]
    BadTie(u8),
    #[error("connector tie {0} invalid (connectors exist only at ties 1 and 9)")]
    BadConnectorTie(u8),
    #[error("block label {0:?} must not carry a rail prefix")]
    RailOnBlock(String),
    #[error("malformed footage name {0:?}")]
    MalformedFootage(String),
    #[error("case number {0} out of range (expected 1..=15)")]
    BadCase(u8),
    #[error("trial {0} out of range (expected 1..=5)")]
    BadTrial(u8),
    #[error("bad medium letter {0:?} (expected F or V)")]
    BadMedium(char),
    #[error("{0} selection is empty")]
    EmptySelection(&'static str),
}

/// The four kinds of track component that can go missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComponentKind {
    Screw,
    Washer,
    Block,
    Connector,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 4] = [
        ComponentKind::Screw,
        ComponentKind::Washer,
        ComponentKind::Block,
        ComponentKind::Connector,
    ];

    pub fn letter(self) -> char {
        match self {
            ComponentKind::Screw => 'S',
            ComponentKind::Washer => 'W',
            ComponentKind::Block => 'B',
            ComponentKind::Connector => 'C',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        match c {
            'S' => Some(ComponentKind::Screw),
            'W' => Some(ComponentKind::Washer),
            'B' => Some(ComponentKind::Block),
            'C' => Some(ComponentKind::Connector),
            _ => None,
        }
    }
}

impl FromStr for ComponentKind {
    type Err = LabelError;

    /// Accepts the single letter or the lowercase English name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "screw" | "screws" => Ok(ComponentKind::Screw),
            "w" | "washer" | "washers" => Ok(ComponentKind::Washer),
            "b" | "block" | "blocks" => Ok(ComponentKind::Block),
            "c" | "connector" | "connectors" => Ok(ComponentKind::Connector),
            _ => Err(LabelError::Malformed(s.to_string())),
        }
    }
}

/// One physical component of the standard track.
///
/// Field order gives the canonical listing order: screws, washers, blocks,
/// connectors; then by rail; then by tie.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentId {
    kind: ComponentKind,
    rail: Option<u8>,
    tie: u8,
}

impl ComponentId {
    pub fn block(tie: u8) -> Result<Self, LabelError> {
        check_tie(tie)?;
        Ok(Self { kind: ComponentKind::Block, rail: None, tie })
    }

    /// A screw, washer or connector on the given rail.
    pub fn on_rail(kind: ComponentKind, rail: u8, tie: u8) -> Result<Self, LabelError> {
        if kind == ComponentKind::Block {
            return Err(LabelError::RailOnBlock(format!("{rail}-{tie}B")));
        }
        if !(1..=RAILS).contains(&rail) {
            return Err(LabelError::BadRail(rail));
        }
        check_tie(tie)?;
        if kind == ComponentKind::Connector && tie != 1 && tie != TIES {
            return Err(LabelError::BadConnectorTie(tie));
        }
        Ok(Self { kind, rail: Some(rail), tie })
    }

    pub fn kind(&self) -> ComponentKind {
        self.kind
    }

    pub fn rail(&self) -> Option<u8> {
        self.rail
    }

    pub fn tie(&self) -> u8 {
        self.tie
    }
}

fn check_tie(tie: u8) -> Result<(), LabelError> {
    if (1..=TIES).contains(&tie) {
        Ok(())
    } else {
        Err(LabelError::BadTie(tie))
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rail {
            Some(rail) => write!(f, "{}-{}{}", rail, self.tie, self.kind.letter()),
            None => write!(f, "{}{}", self.tie, self.kind.letter()),
        }
    }
}

impl FromStr for ComponentId {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || LabelError::Malformed(s.to_string());
        let bytes = s.as_bytes();
        let digit = |b: u8| b.is_ascii_digit().then(|| b - b'0');
        match bytes {
            [t, k] => {
                let tie = digit(*t).ok_or_else(malformed)?;
                match ComponentKind::from_letter(*k as char) {
                    Some(ComponentKind::Block) => ComponentId::block(tie),
                    _ => Err(malformed()),
                }
            }
            [r, b'-', t, k] => {
                let rail = digit(*r).ok_or_else(malformed)?;
                let tie = digit(*t).ok_or_else(malformed)?;
                match ComponentKind::from_letter(*k as char) {
                    Some(ComponentKind::Block) => Err(LabelError::RailOnBlock(s.to_string())),
                    Some(kind) => ComponentId::on_rail(kind, rail, tie),
                    None => Err(malformed()),
                }
            }
            _ => Err(malformed()),
        }
    }
}

pub fn parse_component_label(text: &str) -> Result<ComponentId, LabelError> {
    text.parse()
}

pub fn format_component_label(id: ComponentId) -> String {
    id.to_string()
}

impl Serialize for ComponentId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ComponentId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Every component of the standard track: 9 blocks, 18 screws, 18 washers
/// and 4 connectors, in canonical order.
pub fn inventory() -> Vec<ComponentId> {
    let mut all = Vec::with_capacity(49);
    for kind in ComponentKind::ALL {
        all.extend(inventory_of(kind));
    }
    all.sort();
    all
}

pub fn inventory_of(kind: ComponentKind) -> Vec<ComponentId> {
    let mut out = Vec::new();
    match kind {
        ComponentKind::Block => {
            out.extend((1..=TIES).map(|t| ComponentId::block(t).expect("valid tie")));
        }
        ComponentKind::Connector => {
            for rail in 1..=RAILS {
                for tie in [1, TIES] {
                    out.push(ComponentId::on_rail(kind, rail, tie).expect("valid connector"));
                }
            }
        }
        _ => {
            for rail in 1..=RAILS {
                for tie in 1..=TIES {
                    out.push(ComponentId::on_rail(kind, rail, tie).expect("valid fastener"));
                }
            }
        }
    }
    out
}

/// Set of missing components. Empty means the track is safe.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DefectSet(BTreeSet<ComponentId>);

impl DefectSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses a comma-separated label list such as `"1-8S, 2-8S, 8B"`.
    pub fn parse_list(text: &str) -> Result<Self, LabelError> {
        let mut set = DefectSet::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            set.insert(part.parse()?);
        }
        Ok(set)
    }

    pub fn insert(&mut self, id: ComponentId) -> bool {
        self.0.insert(id)
    }

    pub fn contains(&self, id: &ComponentId) -> bool {
        self.0.contains(id)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ComponentId> {
        self.0.iter()
    }

    pub fn intersection_count(&self, other: &DefectSet) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn difference_count(&self, other: &DefectSet) -> usize {
        self.0.difference(&other.0).count()
    }

    pub fn labels(&self) -> Vec<String> {
        self.0.iter().map(ToString::to_string).collect()
    }
}

impl FromIterator<ComponentId> for DefectSet {
    fn from_iter<I: IntoIterator<Item = ComponentId>>(iter: I) -> Self {
        DefectSet(iter.into_iter().collect())
    }
}

impl fmt::Display for DefectSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.labels().join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCase {
    pub number: u8,
    pub description: &'static str,
    pub defects: DefectSet,
}

const CASE_TABLE: [(&str, &str); 15] = [
    ("Standard Good Track", ""),
    ("1 Screw, 1 Washer, 1 Block, 1 Connector missing", "1-9S, 1-9W, 9B, 1-9C"),
    (
        "2 Screws, 2 Washers, 2 Blocks, 2 Connectors missing",
        "1-5S, 2-5S, 1-5W, 2-5W, 5B, 9B, 1-9C, 2-9C",
    ),
    ("1 Screw missing", "1-7S"),
    ("2 Screws missing", "1-7S, 2-4S"),
    ("1 Washer missing", "1-3W"),
    ("2 Washers missing", "1-3W, 2-7W"),
    ("1 Block missing", "1B"),
    ("2 Block missing", "2B, 6B"),
    ("1 Connector missing", "1-1C"),
    ("2 Connectors missing", "2-1C, 2-9C"),
    ("1 Screw, 1 Washer, 1 Connector missing", "1-3S, 1-3W, 2-1C"),
    ("2 Screws, 2 Washers missing", "1-7S, 2-4S, 1-7W, 2-4W"),
    ("2 Screws, 2 Washers, 1 Block missing", "1-8S, 2-8S, 1-8W, 2-8W, 8B"),
    (
        "2 Screws, 2 Washers, 1 Block, 1 Connector missing",
        "1-8S, 2-8S, 1-8W, 2-8W, 8B, 2-1C",
    ),
];

/// The fifteen canonical scenarios, ordered by case number.
pub fn standard_test_cases() -> Vec<TestCase> {
    CASE_TABLE
        .iter()
        .enumerate()
        .map(|(i, (description, labels))| TestCase {
            number: i as u8 + 1,
            description,
            defects: DefectSet::parse_list(labels).expect("case table labels are valid"),
        })
        .collect()
}

pub fn test_case(number: u8) -> Result<TestCase, LabelError> {
    check_case(number)?;
    Ok(standard_test_cases().swap_remove(number as usize - 1))
}

fn check_case(case: u8) -> Result<(), LabelError> {
    if (1..=CASES).contains(&case) {
        Ok(())
    } else {
        Err(LabelError::BadCase(case))
    }
}

fn check_trial(trial: u8) -> Result<(), LabelError> {
    if (1..=TRIALS).contains(&trial) {
        Ok(())
    } else {
        Err(LabelError::BadTrial(trial))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Medium {
    Frame,
    Video,
}

impl Medium {
    fn letter(self) -> char {
        match self {
            Medium::Frame => 'F',
            Medium::Video => 'V',
        }
    }
}

/// Footage identifier such as `01_F_T2` (case 1, still frame, trial 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FootageId {
    case_number: u8,
    medium: Medium,
    trial: u8,
}

impl FootageId {
    pub fn new(case_number: u8, medium: Medium, trial: u8) -> Result<Self, LabelError> {
        check_case(case_number)?;
        check_trial(trial)?;
        Ok(Self { case_number, medium, trial })
    }

    pub fn frame(case_number: u8, trial: u8) -> Result<Self, LabelError> {
        Self::new(case_number, Medium::Frame, trial)
    }

    pub fn case_number(&self) -> u8 {
        self.case_number
    }

    pub fn medium(&self) -> Medium {
        self.medium
    }

    pub fn trial(&self) -> u8 {
        self.trial
    }

    pub fn file_name(&self, extension: &str) -> String {
        format!("{self}.{extension}")
    }
}

impl fmt::Display for FootageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}_{}_T{}", self.case_number, self.medium.letter(), self.trial)
    }
}

impl FromStr for FootageId {
    type Err = LabelError;

    /// Parses `NN_M_Tt`, ignoring a trailing file extension.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let stem = s.split_once('.').map_or(s, |(stem, _)| stem);
        let malformed = || LabelError::MalformedFootage(s.to_string());
        let b = stem.as_bytes();
        if b.len() != 7 || b[2] != b'_' || b[4] != b'_' || b[5] != b'T' {
            return Err(malformed());
        }
        if !(b[0].is_ascii_digit() && b[1].is_ascii_digit() && b[6].is_ascii_digit()) {
            return Err(malformed());
        }
        let case_number = (b[0] - b'0') * 10 + (b[1] - b'0');
        let medium = match b[3] {
            b'F' => Medium::Frame,
            b'V' => Medium::Video,
            other => return Err(LabelError::BadMedium(other as char)),
        };
        FootageId::new(case_number, medium, b[6] - b'0')
    }
}

pub fn parse_footage_name(text: &str) -> Result<FootageId, LabelError> {
    text.parse()
}

impl Serialize for FootageId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FootageId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How control frames are chosen for each inspected frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairingPolicy {
    /// Trial t is compared against control trial t.
    #[default]
    SameTrial,
    /// Trial t is compared against control trial (t mod 5) + 1.
    ShiftedTrial,
}

impl FromStr for PairingPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "same" | "same-trial" => Ok(PairingPolicy::SameTrial),
            "shifted" | "shifted-trial" => Ok(PairingPolicy::ShiftedTrial),
            _ => Err(format!("unknown pairing policy {s:?} (expected same or shifted)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPair {
    pub control: FootageId,
    pub variable: FootageId,
    pub expected: DefectSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub pairs: Vec<RunPair>,
    pub pairing_policy: PairingPolicy,
}

/// One pair per (case, trial), case-major, comparing each frame against a
/// frame of the standard track.
pub fn build_run_manifest(
    cases: &[u8],
    trials: &[u8],
    policy: PairingPolicy,
) -> Result<RunManifest, LabelError> {
    if cases.is_empty() {
        return Err(LabelError::EmptySelection("case"));
    }
    if trials.is_empty() {
        return Err(LabelError::EmptySelection("trial"));
    }
    let table = standard_test_cases();
    let mut pairs = Vec::with_capacity(cases.len() * trials.len());
    for &case in cases {
        check_case(case)?;
        for &trial in trials {
            check_trial(trial)?;
            let control_trial = match policy {
                PairingPolicy::SameTrial => trial,
                PairingPolicy::ShiftedTrial => trial % TRIALS + 1,
            };
            pairs.push(RunPair {
                control: FootageId::frame(1, control_trial)?,
                variable: FootageId::frame(case, trial)?,
                expected: table[case as usize - 1].defects.clone(),
            });
        }
    }
    Ok(RunManifest { pairs, pairing_policy: policy })
}

/// Parses selections like `1-15`, `1,4,8` or `2-5,9`.
pub fn parse_number_list(text: &str) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let parse = |s: &str| s.trim().parse::<u8>().map_err(|e| format!("{s:?}: {e}"));
        match part.split_once('-') {
            Some((lo, hi)) => {
                let (lo, hi) = (parse(lo)?, parse(hi)?);
                if lo > hi {
                    return Err(format!("empty range {part:?}"));
                }
                out.extend(lo..=hi);
            }
            None => out.push(parse(part)?),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> ComponentId {
        s.parse().unwrap()
    }

    #[test]
    fn parses_table_labels() {
        let screw = id("1-8S");
        assert_eq!(screw.kind(), ComponentKind::Screw);
        assert_eq!(screw.rail(), Some(1));
        assert_eq!(screw.tie(), 8);

        let block = id("8B");
        assert_eq!(block.kind(), ComponentKind::Block);
        assert_eq!(block.rail(), None);
        assert_eq!(block.tie(), 8);
    }

    #[test]
    fn rejects_bad_labels() {
        assert_eq!("2-5C".parse::<ComponentId>(), Err(LabelError::BadConnectorTie(5)));
        assert_eq!("3-5S".parse::<ComponentId>(), Err(LabelError::BadRail(3)));
        assert_eq!("1-0S".parse::<ComponentId>(), Err(LabelError::BadTie(0)));
        assert!(matches!("1-5B".parse::<ComponentId>(), Err(LabelError::RailOnBlock(_))));
        for bad in ["", "B", "5b", " 5B", "5B ", "1-5X", "1_5S", "10B", "1-10S", "S"] {
            assert!(bad.parse::<ComponentId>().is_err(), "{bad:?} accepted");
        }
    }

    #[test]
    fn formats_canonically() {
        let washer = ComponentId::on_rail(ComponentKind::Washer, 2, 4).unwrap();
        assert_eq!(format_component_label(washer), "2-4W");
        assert_eq!(ComponentId::block(1).unwrap().to_string(), "1B");
        let conn = ComponentId::on_rail(ComponentKind::Connector, 1, 9).unwrap();
        assert_eq!(conn.to_string(), "1-9C");
    }

    #[test]
    fn inventory_has_49_components() {
        let inv = inventory();
        assert_eq!(inv.len(), 49);
        let count = |k| inv.iter().filter(|c| c.kind() == k).count();
        assert_eq!(count(ComponentKind::Block), 9);
        assert_eq!(count(ComponentKind::Screw), 18);
        assert_eq!(count(ComponentKind::Washer), 18);
        assert_eq!(count(ComponentKind::Connector), 4);
        for c in &inv {
            assert_eq!(parse_component_label(&c.to_string()).unwrap(), *c);
        }
    }

    #[test]
    fn footage_names() {
        let f = parse_footage_name("01_F_T2").unwrap();
        assert_eq!((f.case_number(), f.medium(), f.trial()), (1, Medium::Frame, 2));
        let v = parse_footage_name("15_V_T5.mp4").unwrap();
        assert_eq!((v.case_number(), v.medium(), v.trial()), (15, Medium::Video, 5));
        assert_eq!(v.to_string(), "15_V_T5");
        assert_eq!(parse_footage_name("16_F_T1"), Err(LabelError::BadCase(16)));
        assert_eq!(parse_footage_name("00_F_T1"), Err(LabelError::BadCase(0)));
        assert_eq!(parse_footage_name("01_X_T1"), Err(LabelError::BadMedium('X')));
        assert_eq!(parse_footage_name("01_F_T6"), Err(LabelError::BadTrial(6)));
        assert!(parse_footage_name("1_F_T1").is_err());
    }

    #[test]
    fn case_table() {
        let cases = standard_test_cases();
        assert_eq!(cases.len(), 15);
        assert!(cases[0].defects.is_empty());
        assert!(cases[1..].iter().all(|c| !c.defects.is_empty()));
        assert_eq!(cases[3].defects.to_string(), "1-7S");
        assert_eq!(cases[11].defects, DefectSet::parse_list("1-3S, 1-3W, 2-1C").unwrap());
        assert_eq!(cases[14].defects.to_string(), "1-8S, 2-8S, 1-8W, 2-8W, 8B, 2-1C");
        // hand count of the table rows 2..=15: 4+8+1+2+1+2+1+2+1+2+3+4+5+6
        let total: usize = cases.iter().map(|c| c.defects.len()).sum();
        assert_eq!(total, 42);
        let inv: BTreeSet<_> = inventory().into_iter().collect();
        assert!(cases.iter().flat_map(|c| c.defects.iter()).all(|c| inv.contains(c)));
    }

    #[test]
    fn manifests() {
        let same = build_run_manifest(&[15], &[5], PairingPolicy::SameTrial).unwrap();
        assert_eq!(same.pairs[0].control.to_string(), "01_F_T5");
        assert_eq!(same.pairs[0].variable.to_string(), "15_F_T5");

        let shifted = build_run_manifest(&[15], &[1, 5], PairingPolicy::ShiftedTrial).unwrap();
        assert_eq!(shifted.pairs[0].control.to_string(), "01_F_T2");
        assert_eq!(shifted.pairs[0].variable.to_string(), "15_F_T1");
        assert_eq!(shifted.pairs[1].control.to_string(), "01_F_T1");

        let cases: Vec<u8> = (1..=15).collect();
        let trials: Vec<u8> = (1..=5).collect();
        let full = build_run_manifest(&cases, &trials, PairingPolicy::SameTrial).unwrap();
        assert_eq!(full.pairs.len(), 75);
        assert!(full.pairs.iter().all(|p| p.control.case_number() == 1));

        assert_eq!(
            build_run_manifest(&[], &[1], PairingPolicy::SameTrial),
            Err(LabelError::EmptySelection("case"))
        );
        assert!(build_run_manifest(&[16], &[1], PairingPolicy::SameTrial).is_err());
    }

    #[test]
    fn number_lists() {
        assert_eq!(parse_number_list("1-3,7").unwrap(), vec![1, 2, 3, 7]);
        assert_eq!(parse_number_list("").unwrap(), Vec::<u8>::new());
        assert!(parse_number_list("5-2").is_err());
    }
}
