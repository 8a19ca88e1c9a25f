//! Lookup tables behind the character- and word-substitution augmenters.
//!
//! All tables read the same line format, `key<TAB>value1,value2,...`, with
//! blank lines and `#` comments ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::AugmentError;

fn parse_tab_table(path: &Path) -> Result<Vec<(usize, String, Vec<String>)>, AugmentError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, values) = line.split_once('\t').ok_or_else(|| AugmentError::Table {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected `key<TAB>values`".into(),
        })?;
        let values: Vec<String> = values
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(str::to_string)
            .collect();
        rows.push((i + 1, key.trim().to_string(), values));
    }
    Ok(rows)
}

fn single_char(path: &Path, line: usize, s: &str) -> Result<char, AugmentError> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(AugmentError::Table {
            path: path.to_path_buf(),
            line,
            message: format!("`{s}` is not a single character"),
        }),
    }
}

fn char_table(path: &Path) -> Result<BTreeMap<char, Vec<char>>, AugmentError> {
    let mut map: BTreeMap<char, Vec<char>> = BTreeMap::new();
    for (line, key, values) in parse_tab_table(path)? {
        let k = single_char(path, line, &key)?;
        let entry = map.entry(k).or_default();
        for v in values {
            let c = single_char(path, line, &v)?;
            if c != k && !entry.contains(&c) {
                entry.push(c);
            }
        }
    }
    Ok(map)
}

/// Physical key adjacency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyboardLayout {
    adjacency: BTreeMap<char, Vec<char>>,
}

const QWERTY_ROWS: [&str; 4] = ["1234567890", "qwertyuiop", "asdfghjkl", "zxcvbnm"];

impl KeyboardLayout {
    /// QWERTY rows treated as a grid: a key's neighbours are its left and
    /// right keys plus the keys at columns `i-1..=i+1` of the rows above and
    /// below. This yields `g → r t y f h v b n`.
    pub fn qwerty() -> Self {
        let rows: Vec<Vec<char>> = QWERTY_ROWS.iter().map(|r| r.chars().collect()).collect();
        let mut adjacency = BTreeMap::new();
        for (r, row) in rows.iter().enumerate() {
            for (i, &key) in row.iter().enumerate() {
                let mut n = Vec::new();
                for rr in [r.checked_sub(1), Some(r), Some(r + 1)]
                    .into_iter()
                    .flatten()
                {
                    let Some(other) = rows.get(rr) else { continue };
                    for j in i.saturating_sub(1)..=i + 1 {
                        if let Some(&c) = other.get(j) {
                            if c != key {
                                n.push(c);
                            }
                        }
                    }
                }
                adjacency.insert(key, n);
            }
        }
        KeyboardLayout { adjacency }
    }

    pub fn from_file(path: &Path) -> Result<Self, AugmentError> {
        Ok(KeyboardLayout {
            adjacency: char_table(path)?,
        })
    }

    /// Neighbours of a lowercase key.
    pub fn neighbors(&self, c: char) -> &[char] {
        self.adjacency.get(&c).map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Default for KeyboardLayout {
    fn default() -> Self {
        Self::qwerty()
    }
}

/// Character pairs an OCR engine plausibly confuses. Stored symmetrically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionTable {
    pairs: BTreeMap<char, Vec<char>>,
}

const OCR_PAIRS: [(char, char); 30] = [
    ('0', 'o'),
    ('0', 'O'),
    ('0', 'D'),
    ('1', 'l'),
    ('1', 'I'),
    ('I', 'l'),
    ('1', '7'),
    ('2', 'Z'),
    ('2', 'z'),
    ('5', 'S'),
    ('5', 's'),
    ('6', 'b'),
    ('6', 'G'),
    ('8', 'B'),
    ('9', 'g'),
    ('9', 'q'),
    ('4', 'A'),
    ('e', 'c'),
    ('u', 'v'),
    ('n', 'h'),
    ('h', 'b'),
    ('f', 't'),
    ('i', 'j'),
    ('O', 'Q'),
    ('C', 'G'),
    ('E', 'F'),
    ('P', 'R'),
    ('U', 'V'),
    ('m', 'n'),
    ('a', 'o'),
];

impl ConfusionTable {
    pub fn default_ocr() -> Self {
        Self::from_pairs(OCR_PAIRS.iter().copied())
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (char, char)>) -> Self {
        let mut map: BTreeMap<char, Vec<char>> = BTreeMap::new();
        for (a, b) in pairs {
            for (x, y) in [(a, b), (b, a)] {
                let e = map.entry(x).or_default();
                if !e.contains(&y) {
                    e.push(y);
                }
            }
        }
        ConfusionTable { pairs: map }
    }

    /// Loads a table file; entries are symmetrized like the built-in table.
    pub fn from_file(path: &Path) -> Result<Self, AugmentError> {
        let raw = char_table(path)?;
        Ok(Self::from_pairs(
            raw.into_iter()
                .flat_map(|(k, vs)| vs.into_iter().map(move |v| (k, v))),
        ))
    }

    pub fn misreads(&self, c: char) -> &[char] {
        self.pairs.get(&c).map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Default for ConfusionTable {
    fn default() -> Self {
        Self::default_ocr()
    }
}

/// Frequently misspelled English words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MisspellTable {
    entries: BTreeMap<String, Vec<String>>,
}

const MISSPELLINGS: [(&str, &[&str]); 50] = [
    ("because", &["becouse", "becuase"]),
    ("accommodate", &["accomodate", "acommodate"]),
    ("achieve", &["acheive"]),
    ("across", &["accross"]),
    ("aggressive", &["agressive"]),
    ("apparently", &["apparantly"]),
    ("appearance", &["appearence"]),
    ("argument", &["arguement"]),
    ("basically", &["basicly"]),
    ("beginning", &["begining"]),
    ("believe", &["beleive"]),
    ("business", &["buisness"]),
    ("calendar", &["calender"]),
    ("cemetery", &["cemetary"]),
    ("colleague", &["collegue"]),
    ("coming", &["comming"]),
    ("committee", &["commitee"]),
    ("completely", &["completly"]),
    ("conscious", &["concious"]),
    ("definitely", &["definately", "definatly"]),
    ("disappear", &["dissapear"]),
    ("embarrass", &["embarass"]),
    ("environment", &["enviroment"]),
    ("existence", &["existance"]),
    ("familiar", &["familar"]),
    ("finally", &["finaly"]),
    ("foreign", &["foriegn"]),
    ("forty", &["fourty"]),
    ("friend", &["freind"]),
    ("government", &["goverment"]),
    ("happened", &["happend"]),
    ("immediately", &["immediatly"]),
    ("independent", &["independant"]),
    ("knowledge", &["knowlege"]),
    ("necessary", &["neccessary", "necesary"]),
    ("occasion", &["occassion"]),
    ("occurred", &["occured"]),
    ("persistent", &["persistant"]),
    ("possession", &["posession"]),
    ("really", &["realy"]),
    ("receive", &["recieve"]),
    ("recommend", &["reccommend", "recomend"]),
    ("separate", &["seperate"]),
    ("successful", &["succesful"]),
    ("surprise", &["suprise"]),
    ("tomorrow", &["tommorow", "tomorow"]),
    ("truly", &["truely"]),
    ("until", &["untill"]),
    ("weird", &["wierd"]),
    ("which", &["wich"]),
];

impl MisspellTable {
    pub fn default_english() -> Self {
        MisspellTable {
            entries: MISSPELLINGS
                .iter()
                .map(|(w, m)| (w.to_string(), m.iter().map(|s| s.to_string()).collect()))
                .collect(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, AugmentError> {
        let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (_, key, values) in parse_tab_table(path)? {
            entries
                .entry(key.to_lowercase())
                .or_default()
                .extend(values);
        }
        Ok(MisspellTable { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Misspellings of a lowercase word.
    pub fn misspellings(&self, word: &str) -> &[String] {
        self.entries.get(word).map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Default for MisspellTable {
    fn default() -> Self {
        Self::default_english()
    }
}

/// Synonym sets keyed by lowercase word. Synonymy is made symmetric on
/// load: if `b ∈ syn(a)` then `a ∈ syn(b)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Thesaurus {
    synsets: BTreeMap<String, Vec<String>>,
    source_tag: String,
}

impl Thesaurus {
    pub fn from_pairs<I, S>(rows: I, source_tag: &str) -> Self
    where
        I: IntoIterator<Item = (S, Vec<S>)>,
        S: AsRef<str>,
    {
        let mut sets: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (word, syns) in rows {
            let w = word.as_ref().trim().to_lowercase();
            for s in syns {
                let s = s.as_ref().trim().to_lowercase();
                if s.is_empty() || s == w {
                    continue;
                }
                sets.entry(w.clone()).or_default().insert(s.clone());
                sets.entry(s).or_default().insert(w.clone());
            }
        }
        Thesaurus {
            synsets: sets
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect(),
            source_tag: source_tag.to_string(),
        }
    }

    pub fn from_file(path: &Path, source_tag: &str) -> Result<Self, AugmentError> {
        let rows = parse_tab_table(path)?;
        Ok(Self::from_pairs(
            rows.into_iter().map(|(_, k, v)| (k, v)),
            source_tag,
        ))
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn is_empty(&self) -> bool {
        self.synsets.is_empty()
    }

    pub fn len(&self) -> usize {
        self.synsets.len()
    }

    /// Synonyms of a lowercase word, sorted.
    pub fn synonyms(&self, word: &str) -> &[String] {
        self.synsets.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.synsets.iter()
    }
}
