//! Radio frame configurations and the sliding codebook shared by every cell.
//!
//! A pattern is a fixed-length sequence of DL/UL slots. Patterns sharing a
//! DL:UL ratio are grouped into a sub-codebook whose members are cyclic
//! shifts of one base placement. All sub-codebooks together form the flat,
//! globally indexed codebook that cells exchange `bits()`-wide indices over.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, contract_err, Error, Result};

pub const DEFAULT_FRAME_LENGTH: usize = 10;
/// Patterns are stored as a bit mask, one bit per slot.
pub const MAX_FRAME_LENGTH: usize = 64;

/// Link direction of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "DL")]
    Dl,
    #[serde(rename = "UL")]
    Ul,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::Dl => Direction::Ul,
            Direction::Ul => Direction::Dl,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Direction::Dl => 'D',
            Direction::Ul => 'U',
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Dl => f.write_str("DL"),
            Direction::Ul => f.write_str("UL"),
        }
    }
}

/// DL:UL slot split of a pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Ratio {
    pub dl: u32,
    pub ul: u32,
}

impl Ratio {
    pub fn new(dl: u32, ul: u32) -> Self {
        Ratio { dl, ul }
    }

    pub fn frame_length(&self) -> u32 {
        self.dl + self.ul
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.dl, self.ul)
    }
}

/// A radio frame configuration: one direction per slot.
///
/// Bit `t` of the mask is set when slot `t` is DL.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct RfcPattern {
    len: u8,
    dl_mask: u64,
}

impl RfcPattern {
    pub fn from_slots(slots: &[Direction]) -> Result<Self> {
        if slots.is_empty() || slots.len() > MAX_FRAME_LENGTH {
            return config_err(format!(
                "pattern length {} outside 1..={MAX_FRAME_LENGTH}",
                slots.len()
            ));
        }
        let dl_mask = slots
            .iter()
            .enumerate()
            .filter(|(_, d)| **d == Direction::Dl)
            .fold(0u64, |m, (t, _)| m | (1 << t));
        Ok(RfcPattern {
            len: slots.len() as u8,
            dl_mask,
        })
    }

    /// `dl` consecutive DL slots followed by `ul` consecutive UL slots.
    pub fn block(dl: usize, ul: usize) -> Result<Self> {
        let len = dl + ul;
        if len == 0 || len > MAX_FRAME_LENGTH {
            return config_err(format!("pattern length {len} outside 1..={MAX_FRAME_LENGTH}"));
        }
        Ok(RfcPattern {
            len: len as u8,
            dl_mask: low_bits(dl),
        })
    }

    pub fn uniform(direction: Direction, len: usize) -> Result<Self> {
        match direction {
            Direction::Dl => Self::block(len, 0),
            Direction::Ul => Self::block(0, len),
        }
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Direction of slot `t`; `t` wraps around the frame.
    pub fn slot(&self, t: usize) -> Direction {
        if self.dl_mask >> (t % self.len()) & 1 == 1 {
            Direction::Dl
        } else {
            Direction::Ul
        }
    }

    pub fn slots(&self) -> impl Iterator<Item = Direction> + '_ {
        (0..self.len()).map(move |t| self.slot(t))
    }

    pub fn dl_count(&self) -> u32 {
        self.dl_mask.count_ones()
    }

    pub fn ul_count(&self) -> u32 {
        self.len as u32 - self.dl_count()
    }

    pub fn ratio(&self) -> Ratio {
        Ratio::new(self.dl_count(), self.ul_count())
    }
}

fn low_bits(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

impl fmt::Display for RfcPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.slots() {
            write!(f, "{}", d.symbol())?;
        }
        Ok(())
    }
}

impl fmt::Debug for RfcPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RfcPattern({self})")
    }
}

impl FromStr for RfcPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let slots = s
            .trim()
            .chars()
            .map(|c| match c {
                'D' | 'd' => Ok(Direction::Dl),
                'U' | 'u' => Ok(Direction::Ul),
                other => Err(Error::Parse(format!(
                    "invalid slot symbol {other:?} in pattern {s:?}"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        RfcPattern::from_slots(&slots)
    }
}

impl Serialize for RfcPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RfcPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rotates `p` right by `k` slots: slot `t` of the result is slot
/// `(t - k) mod F` of `p`. `k` is reduced modulo the frame length.
pub fn cyclic_shift(p: &RfcPattern, k: usize) -> RfcPattern {
    let len = p.len();
    let k = k % len;
    if k == 0 {
        return *p;
    }
    let full = low_bits(len);
    let mask = ((p.dl_mask << k) | (p.dl_mask >> (len - k))) & full;
    RfcPattern {
        len: p.len,
        dl_mask: mask,
    }
}

/// Number of slots in which `a` and `b` carry opposite directions.
pub fn misalignment(a: &RfcPattern, b: &RfcPattern) -> Result<u32> {
    if a.len != b.len {
        return contract_err(format!(
            "misalignment between patterns of length {} and {}",
            a.len, b.len
        ));
    }
    Ok((a.dl_mask ^ b.dl_mask).count_ones())
}

/// One ratio of a codebook configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubCodebookSpec {
    pub dl: u32,
    pub ul: u32,
    /// Members are shifts of the base by multiples of `stride`.
    #[serde(default = "default_stride")]
    pub stride: u32,
}

fn default_stride() -> u32 {
    1
}

/// Parameters of the codebook construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CodebookConfigRepr", into = "CodebookConfigRepr")]
pub struct CodebookConfig {
    pub frame_length: usize,
    pub sub_codebooks: Vec<SubCodebookSpec>,
}

/// Scenario-file form: either a named preset or an explicit ratio list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookConfigRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shift_stride: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sub_codebooks: Option<Vec<SubCodebookSpec>>,
}

impl TryFrom<CodebookConfigRepr> for CodebookConfig {
    type Error = Error;

    fn try_from(r: CodebookConfigRepr) -> Result<Self> {
        let mut cfg = match (r.preset, r.sub_codebooks) {
            (Some(_), Some(_)) => {
                return config_err("codebook: give either `preset` or `sub_codebooks`, not both")
            }
            (Some(name), None) => CodebookConfig::preset(&name)?,
            (None, Some(subs)) => CodebookConfig {
                frame_length: r.frame_length.unwrap_or(DEFAULT_FRAME_LENGTH),
                sub_codebooks: subs,
            },
            (None, None) => CodebookConfig::default(),
        };
        if let Some(stride) = r.shift_stride {
            for s in &mut cfg.sub_codebooks {
                s.stride = stride;
            }
        }
        if let Some(f) = r.frame_length {
            if f != cfg.frame_length {
                return config_err(format!(
                    "codebook: frame_length {f} does not match the ratios (sum {})",
                    cfg.frame_length
                ));
            }
        }
        Ok(cfg)
    }
}

impl From<CodebookConfig> for CodebookConfigRepr {
    fn from(c: CodebookConfig) -> Self {
        CodebookConfigRepr {
            preset: None,
            frame_length: Some(c.frame_length),
            shift_stride: None,
            sub_codebooks: Some(c.sub_codebooks),
        }
    }
}

impl Default for CodebookConfig {
    /// Seven ratios from 2:8 to 8:2, every cyclic shift: 70 patterns, 7 bits.
    fn default() -> Self {
        CodebookConfig::uniform(DEFAULT_FRAME_LENGTH, &(2..=8).map(|d| (d, 10 - d)).collect::<Vec<_>>(), 1)
    }
}

impl CodebookConfig {
    pub fn uniform(frame_length: usize, ratios: &[(u32, u32)], stride: u32) -> Self {
        CodebookConfig {
            frame_length,
            sub_codebooks: ratios
                .iter()
                .map(|&(dl, ul)| SubCodebookSpec { dl, ul, stride })
                .collect(),
        }
    }

    /// 55-pattern layout over the same seven ratios: the three central
    /// ratios use every second shift (5 members each), the four outer ratios
    /// every shift (10 members each). Fits a 6-bit index.
    pub fn n55() -> Self {
        let strides = [1, 1, 2, 2, 2, 1, 1];
        CodebookConfig {
            frame_length: DEFAULT_FRAME_LENGTH,
            sub_codebooks: (2..=8)
                .zip(strides)
                .map(|(dl, stride)| SubCodebookSpec {
                    dl,
                    ul: 10 - dl,
                    stride,
                })
                .collect(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" | "n70" => Ok(CodebookConfig::default()),
            "n55" => Ok(CodebookConfig::n55()),
            other => config_err(format!("unknown codebook preset {other:?} (expected default, n70 or n55)")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.frame_length;
        if f == 0 || f > MAX_FRAME_LENGTH {
            return config_err(format!("frame_length {f} outside 1..={MAX_FRAME_LENGTH}"));
        }
        if self.sub_codebooks.is_empty() {
            return config_err("codebook needs at least one ratio");
        }
        for (i, s) in self.sub_codebooks.iter().enumerate() {
            if (s.dl + s.ul) as usize != f {
                return config_err(format!(
                    "ratio {}:{} does not sum to frame length {f}",
                    s.dl, s.ul
                ));
            }
            if s.dl == 0 || s.ul == 0 {
                return config_err(format!(
                    "ratio {}:{} needs at least one DL and one UL slot",
                    s.dl, s.ul
                ));
            }
            if s.stride == 0 {
                return config_err(format!("ratio {}:{} has stride 0", s.dl, s.ul));
            }
            if self.sub_codebooks[..i].iter().any(|o| o.dl == s.dl) {
                return config_err(format!("duplicate ratio {}:{}", s.dl, s.ul));
            }
        }
        Ok(())
    }
}

/// Patterns of one DL:UL ratio, all cyclic shifts of the first member.
#[derive(Debug, Clone, PartialEq)]
pub struct SubCodebook {
    pub ratio: Ratio,
    pub patterns: Vec<RfcPattern>,
    /// Shift of each member relative to the first member.
    pub shifts: Vec<u32>,
    /// Flat index of the first member.
    pub first_index: usize,
}

impl SubCodebook {
    pub fn indices(&self) -> Range<usize> {
        self.first_index..self.first_index + self.patterns.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodebookEntry {
    pub pattern: RfcPattern,
    pub sub_codebook: usize,
    pub shift: u32,
}

/// The shared codebook. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RfcCodebook {
    frame_length: usize,
    sub_codebooks: Vec<SubCodebook>,
    entries: Vec<CodebookEntry>,
    bits: u32,
}

pub(crate) fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

impl RfcCodebook {
    /// Builds the codebook: for each ratio the base is the DL block followed
    /// by the UL block, and members are its right-shifts by multiples of the
    /// stride. Sub-codebooks are ordered by ascending DL count; the flat index
    /// runs sub-codebook-major, shift-minor.
    pub fn build(config: &CodebookConfig) -> Result<Self> {
        config.validate()?;
        let mut specs = config.sub_codebooks.clone();
        specs.sort_by_key(|s| s.dl);
        let groups = specs
            .iter()
            .map(|s| {
                let base = RfcPattern::block(s.dl as usize, s.ul as usize)?;
                let mut members: Vec<(RfcPattern, u32)> = Vec::new();
                for k in (0..config.frame_length).step_by(s.stride as usize) {
                    let p = cyclic_shift(&base, k);
                    if !members.iter().any(|(q, _)| *q == p) {
                        members.push((p, k as u32));
                    }
                }
                Ok((Ratio::new(s.dl, s.ul), members))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_groups(config.frame_length, groups)
    }

    fn from_groups(frame_length: usize, groups: Vec<(Ratio, Vec<(RfcPattern, u32)>)>) -> Result<Self> {
        let mut sub_codebooks = Vec::with_capacity(groups.len());
        let mut entries = Vec::new();
        for (sub, (ratio, members)) in groups.into_iter().enumerate() {
            let first_index = entries.len();
            for &(pattern, shift) in &members {
                if entries.iter().any(|e: &CodebookEntry| e.pattern == pattern) {
                    return config_err(format!("pattern {pattern} appears twice in the codebook"));
                }
                entries.push(CodebookEntry {
                    pattern,
                    sub_codebook: sub,
                    shift,
                });
            }
            sub_codebooks.push(SubCodebook {
                ratio,
                patterns: members.iter().map(|m| m.0).collect(),
                shifts: members.iter().map(|m| m.1).collect(),
                first_index,
            });
        }
        let bits = ceil_log2(entries.len());
        Ok(RfcCodebook {
            frame_length,
            sub_codebooks,
            entries,
            bits,
        })
    }

    pub fn frame_length(&self) -> usize {
        self.frame_length
    }

    /// Total number of patterns, N.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index width in bits, B = ceil(log2 N).
    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn sub_codebooks(&self) -> &[SubCodebook] {
        &self.sub_codebooks
    }

    pub fn entries(&self) -> &[CodebookEntry] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> Result<&CodebookEntry> {
        self.entries.get(index).ok_or_else(|| {
            Error::Contract(format!(
                "pattern index {index} outside codebook of size {}",
                self.len()
            ))
        })
    }

    pub fn pattern(&self, index: usize) -> Result<&RfcPattern> {
        self.entry(index).map(|e| &e.pattern)
    }

    pub fn ratio_of(&self, index: usize) -> Result<Ratio> {
        self.entry(index).map(|e| self.sub_codebooks[e.sub_codebook].ratio)
    }

    pub fn find(&self, pattern: &RfcPattern) -> Option<usize> {
        self.entries.iter().position(|e| e.pattern == *pattern)
    }

    pub fn sub_codebook_of_ratio(&self, ratio: Ratio) -> Option<usize> {
        self.sub_codebooks.iter().position(|s| s.ratio == ratio)
    }

    /// Dumps the codebook as a TOML document listing every pattern string.
    pub fn to_document(&self) -> String {
        let doc = CodebookDocument {
            frame_length: self.frame_length,
            sub_codebook: self
                .sub_codebooks
                .iter()
                .map(|s| SubCodebookDocument {
                    dl: s.ratio.dl,
                    ul: s.ratio.ul,
                    patterns: s.patterns.iter().map(|p| p.to_string()).collect(),
                })
                .collect(),
        };
        toml::to_string(&doc).expect("codebook document serializes")
    }

    /// Loads a document written by [`RfcCodebook::to_document`], checking every
    /// codebook invariant.
    pub fn from_document(text: &str) -> Result<Self> {
        let doc: CodebookDocument =
            toml::from_str(text).map_err(|e| Error::Parse(format!("codebook document: {e}")))?;
        let f = doc.frame_length;
        let mut groups = Vec::with_capacity(doc.sub_codebook.len());
        for (i, s) in doc.sub_codebook.iter().enumerate() {
            let ratio = Ratio::new(s.dl, s.ul);
            if ratio.frame_length() as usize != f || s.dl == 0 || s.ul == 0 {
                return config_err(format!("sub-codebook {i}: invalid ratio {ratio} for frame length {f}"));
            }
            if let Some(prev) = groups.last().map(|g: &(Ratio, Vec<(RfcPattern, u32)>)| g.0) {
                if prev.dl >= ratio.dl {
                    return config_err(format!(
                        "sub-codebook {i}: ratio {ratio} not strictly after {prev}"
                    ));
                }
            }
            let patterns = s
                .patterns
                .iter()
                .map(|p| p.parse::<RfcPattern>())
                .collect::<Result<Vec<_>>>()?;
            let Some(first) = patterns.first().copied() else {
                return config_err(format!("sub-codebook {i} is empty"));
            };
            let mut members = Vec::with_capacity(patterns.len());
            for p in patterns {
                if p.len() != f || p.ratio() != ratio {
                    return config_err(format!("pattern {p} does not have ratio {ratio}"));
                }
                let shift = (0..f).find(|&k| cyclic_shift(&first, k) == p).ok_or_else(|| {
                    Error::Config(format!("pattern {p} is not a cyclic shift of {first}"))
                })?;
                members.push((p, shift as u32));
            }
            groups.push((ratio, members));
        }
        if groups.is_empty() {
            return config_err("codebook document has no sub-codebooks");
        }
        Self::from_groups(f, groups)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookDocument {
    frame_length: usize,
    sub_codebook: Vec<SubCodebookDocument>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubCodebookDocument {
    dl: u32,
    ul: u32,
    patterns: Vec<String>,
}

/// A codebook index rendered at exactly B bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexBits {
    pub value: u64,
    pub width: u32,
}

impl fmt::Display for IndexBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in (0..self.width).rev() {
            write!(f, "{}", (self.value >> i) & 1)?;
        }
        Ok(())
    }
}

pub fn encode_index(cb: &RfcCodebook, pattern_id: usize) -> Result<IndexBits> {
    cb.entry(pattern_id)?;
    Ok(IndexBits {
        value: pattern_id as u64,
        width: cb.bits(),
    })
}

pub fn decode_index(cb: &RfcCodebook, bits: IndexBits) -> Result<usize> {
    if bits.width != cb.bits() {
        return contract_err(format!(
            "index is {} bits wide, codebook uses {}",
            bits.width,
            cb.bits()
        ));
    }
    let idx = bits.value as usize;
    cb.entry(idx)?;
    Ok(idx)
}

/// The sub-codebook other than `exclude` whose DL count is closest to the
/// requested ratio. Ties go to the smaller DL count.
pub fn nearest_ratio_subcb(cb: &RfcCodebook, requested: Ratio, exclude: usize) -> Result<usize> {
    if cb.sub_codebook_of_ratio(requested).is_none() {
        return contract_err(format!("ratio {requested} is not in the codebook"));
    }
    if exclude >= cb.sub_codebooks().len() {
        return contract_err(format!("sub-codebook {exclude} does not exist"));
    }
    cb.sub_codebooks()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != exclude)
        .min_by_key(|(_, s)| (s.ratio.dl.abs_diff(requested.dl), s.ratio.dl))
        .map(|(i, _)| i)
        .ok_or(Error::NoNeighbor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> RfcPattern {
        s.parse().unwrap()
    }

    #[test]
    fn single_balanced_ratio_has_ten_distinct_shifts() {
        let cb = RfcCodebook::build(&CodebookConfig::uniform(10, &[(5, 5)], 1)).unwrap();
        assert_eq!(cb.sub_codebooks().len(), 1);
        assert_eq!(cb.len(), 10);
        // brute force: every rotation of the block string is distinct
        let base = "DDDDDUUUUU";
        let rotations: Vec<String> = (0..10)
            .map(|k| format!("{}{}", &base[10 - k..], &base[..10 - k]))
            .collect();
        for (i, a) in rotations.iter().enumerate() {
            assert_eq!(cb.pattern(i).unwrap().to_string(), *a);
            for b in &rotations[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn default_preset_sizes() {
        let cb = RfcCodebook::build(&CodebookConfig::default()).unwrap();
        assert_eq!(cb.sub_codebooks().len(), 7);
        assert_eq!(cb.len(), 70);
        assert_eq!(cb.bits(), 7);
    }

    #[test]
    fn n55_preset_sizes() {
        let cb = RfcCodebook::build(&CodebookConfig::n55()).unwrap();
        assert_eq!(cb.sub_codebooks().len(), 7);
        assert_eq!(cb.len(), 55);
        assert_eq!(cb.bits(), 6);
    }

    #[test]
    fn degenerate_ratios_rejected() {
        let err = RfcCodebook::build(&CodebookConfig::uniform(10, &[(10, 0)], 1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = RfcCodebook::build(&CodebookConfig::uniform(10, &[(4, 5)], 1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = RfcCodebook::build(&CodebookConfig::uniform(10, &[(4, 6), (4, 6)], 1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn misalignment_examples() {
        let a = p("DDDDDUUUUU");
        assert_eq!(misalignment(&a, &a).unwrap(), 0);
        assert_eq!(misalignment(&p("DDDDDDDDDD"), &p("UUUUUUUUUU")).unwrap(), 10);
        assert_eq!(misalignment(&a, &p("UDDDDDUUUU")).unwrap(), 2);
        assert!(matches!(misalignment(&a, &p("DDU")), Err(Error::Contract(_))));
    }

    #[test]
    fn shift_examples() {
        let a = p("DDDDDUUUUU");
        assert_eq!(cyclic_shift(&a, 0), a);
        assert_eq!(cyclic_shift(&a, 10), a);
        assert_eq!(cyclic_shift(&a, 5), p("UUUUUDDDDD"));
        assert_eq!(cyclic_shift(&a, 1), p("UDDDDDUUUU"));
    }

    #[test]
    fn index_encoding() {
        let cb = RfcCodebook::build(&CodebookConfig::default()).unwrap();
        assert_eq!(encode_index(&cb, 0).unwrap().to_string(), "0000000");
        assert_eq!(encode_index(&cb, 69).unwrap().to_string(), "1000101");
        assert!(matches!(encode_index(&cb, 70), Err(Error::Contract(_))));
        let n55 = RfcCodebook::build(&CodebookConfig::n55()).unwrap();
        assert_eq!(encode_index(&n55, 54).unwrap().width, 6);
        for i in 0..cb.len() {
            assert_eq!(decode_index(&cb, encode_index(&cb, i).unwrap()).unwrap(), i);
        }
    }

    #[test]
    fn nearest_ratio_examples() {
        let cb = RfcCodebook::build(&CodebookConfig::default()).unwrap();
        let sub = |d: u32| cb.sub_codebook_of_ratio(Ratio::new(d, 10 - d)).unwrap();
        assert_eq!(nearest_ratio_subcb(&cb, Ratio::new(2, 8), sub(2)).unwrap(), sub(3));
        assert_eq!(nearest_ratio_subcb(&cb, Ratio::new(5, 5), sub(5)).unwrap(), sub(4));
        assert_eq!(nearest_ratio_subcb(&cb, Ratio::new(8, 2), sub(8)).unwrap(), sub(7));
        let single = RfcCodebook::build(&CodebookConfig::uniform(10, &[(5, 5)], 1)).unwrap();
        assert_eq!(nearest_ratio_subcb(&single, Ratio::new(5, 5), 0), Err(Error::NoNeighbor));
    }

    #[test]
    fn document_round_trip_and_validation() {
        for cfg in [CodebookConfig::default(), CodebookConfig::n55()] {
            let cb = RfcCodebook::build(&cfg).unwrap();
            let text = cb.to_document();
            assert!(text.contains("\"DDDDDUUUUU\""));
            assert_eq!(RfcCodebook::from_document(&text).unwrap(), cb);
        }
        let bad = "frame_length = 4\n[[sub_codebook]]\ndl = 2\nul = 2\npatterns = [\"DDUU\", \"DUDU\"]\n";
        assert!(matches!(RfcCodebook::from_document(bad), Err(Error::Config(_))));
    }

    #[test]
    fn build_is_deterministic() {
        let a = RfcCodebook::build(&CodebookConfig::n55()).unwrap();
        let b = RfcCodebook::build(&CodebookConfig::n55()).unwrap();
        assert_eq!(a, b);
    }

    fn pattern_strategy(len: usize) -> impl Strategy<Value = RfcPattern> {
        proptest::collection::vec(any::<bool>(), len).prop_map(|v| {
            let slots: Vec<_> = v
                .into_iter()
                .map(|b| if b { Direction::Dl } else { Direction::Ul })
                .collect();
            RfcPattern::from_slots(&slots).unwrap()
        })
    }

    proptest! {
        #[test]
        fn misalignment_is_a_metric(a in pattern_strategy(10), b in pattern_strategy(10), c in pattern_strategy(10)) {
            let ab = misalignment(&a, &b).unwrap();
            prop_assert_eq!(ab, misalignment(&b, &a).unwrap());
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(misalignment(&a, &c).unwrap() <= ab + misalignment(&b, &c).unwrap());
        }

        #[test]
        fn shift_matches_definition_and_keeps_ratio(a in pattern_strategy(10), k in 0usize..30) {
            let s = cyclic_shift(&a, k);
            prop_assert_eq!(s.ratio(), a.ratio());
            for t in 0..10 {
                prop_assert_eq!(s.slot(t), a.slot((t + 10 - k % 10) % 10));
            }
            prop_assert_eq!(p(&s.to_string()), s);
        }
    }

    #[test]
    fn sub_codebooks_closed_under_their_shift_set() {
        for cfg in [CodebookConfig::default(), CodebookConfig::n55()] {
            let cb = RfcCodebook::build(&cfg).unwrap();
            for (spec, sub) in cfg.sub_codebooks.iter().zip(cb.sub_codebooks()) {
                for q in &sub.patterns {
                    assert_eq!(q.ratio(), sub.ratio);
                    let shifted = cyclic_shift(q, spec.stride as usize);
                    assert!(sub.patterns.contains(&shifted));
                }
            }
        }
    }
}
