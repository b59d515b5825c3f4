use std::collections::BTreeSet;
use std::collections::HashMap;
use std::path::Path;

use super::{Mask, IGNORE_INDEX};
use crate::error::{Error, Result};

/// One line of a palette file: `class_id R G B name`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaletteEntry {
    pub class_id: u8,
    pub rgb: [u8; 3],
    pub name: String,
}

/// Maps source labels or palette colors onto dense target classes
/// `0..K`, with [`IGNORE_INDEX`] allowed as a target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    labels: Option<Box<[Option<u8>; 256]>>,
    colors: HashMap<[u8; 3], u8>,
    palette: Vec<PaletteEntry>,
    num_classes: usize,
}

fn dense_class_count(targets: impl Iterator<Item = u8>) -> Result<usize> {
    let set: BTreeSet<u8> = targets.filter(|&t| t != IGNORE_INDEX).collect();
    let k = set.len();
    if let Some((i, &t)) = set.iter().enumerate().find(|(i, &t)| usize::from(t) != *i) {
        return Err(Error::Dataset(format!(
            "target classes must be dense in [0, {k}); class {i} is missing (next is {t})"
        )));
    }
    Ok(k)
}

impl ClassMap {
    /// Label remapping from `(source, target)` pairs.
    pub fn from_labels(pairs: &[(u8, u8)]) -> Result<Self> {
        let mut table = Box::new([None; 256]);
        for &(s, t) in pairs {
            if table[usize::from(s)].is_some_and(|old| old != t) {
                return Err(Error::Dataset(format!("source label {s} mapped twice")));
            }
            table[usize::from(s)] = Some(t);
        }
        Ok(Self {
            num_classes: dense_class_count(pairs.iter().map(|p| p.1))?,
            labels: Some(table),
            colors: HashMap::new(),
            palette: Vec::new(),
        })
    }

    /// `k -> k` for `k < K`, plus `255 -> 255`.
    pub fn identity(num_classes: usize) -> Self {
        let mut pairs: Vec<(u8, u8)> = (0..num_classes.min(255)).map(|k| (k as u8, k as u8)).collect();
        pairs.push((IGNORE_INDEX, IGNORE_INDEX));
        Self::from_labels(&pairs).expect("identity map is dense")
    }

    pub fn from_palette(entries: Vec<PaletteEntry>) -> Result<Self> {
        let mut colors = HashMap::new();
        for e in &entries {
            if let Some(old) = colors.insert(e.rgb, e.class_id) {
                if old != e.class_id {
                    let [r, g, b] = e.rgb;
                    return Err(Error::Dataset(format!("color ({r}, {g}, {b}) mapped twice")));
                }
            }
        }
        Ok(Self {
            num_classes: dense_class_count(entries.iter().map(|e| e.class_id))?,
            labels: None,
            colors,
            palette: entries,
        })
    }

    pub fn parse_palette(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::ConfigParse {
                line: i + 1,
                msg: format!("expected `class_id R G B name`, got `{line}`"),
            };
            if parts.len() < 4 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<u8>().map_err(|_| bad());
            entries.push(PaletteEntry {
                class_id: num(parts[0])?,
                rgb: [num(parts[1])?, num(parts[2])?, num(parts[3])?],
                name: parts[4..].join(" "),
            });
        }
        Self::from_palette(entries)
    }

    pub fn load_palette(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_palette(&std::fs::read_to_string(path)?)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    pub fn palette(&self) -> &[PaletteEntry] {
        &self.palette
    }

    pub fn resolve_color(&self, rgb: [u8; 3]) -> Result<u8> {
        self.colors
            .get(&rgb)
            .copied()
            .ok_or(Error::UnmappedColor(rgb[0], rgb[1], rgb[2]))
    }

    pub fn map_label(&self, label: u8) -> Result<u8> {
        match &self.labels {
            Some(t) => t[usize::from(label)].ok_or(Error::UnmappedLabel(label)),
            None => Err(Error::UnmappedLabel(label)),
        }
    }

    /// Pointwise relabeling.
    pub fn remap(&self, mask: &Mask) -> Result<Mask> {
        let labels = mask.labels.iter().map(|&l| self.map_label(l)).collect::<Result<Vec<u8>>>()?;
        Mask::new(mask.height, mask.width, labels)
    }
}
