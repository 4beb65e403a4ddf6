//! LIWC-style dictionaries and category-frequency features.
//!
//! Dictionary format:
//!
//! ```text
//! %
//! 1	negemo
//! 2	cogproc
//! %
//! sad	1
//! cry*	1
//! think	2
//! ```
//!
//! A trailing `*` marks a stem that matches any token starting with it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LexiconError {
    #[error("malformed dictionary header at line {line}: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("line {line}: entry `{word}` references undeclared category {id}")]
    UnknownCategoryId { line: usize, word: String, id: u32 },
    #[error("dictionary declares no categories or no entries")]
    EmptyLexicon,
    #[error("malformed entry at line {line}: {reason}")]
    MalformedEntry { line: usize, reason: String },
    #[error("standardizer needs at least 2 rows, got {0}")]
    InsufficientRows(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    /// `(id, name)` in declaration order; this order is the feature order.
    categories: Vec<(u32, String)>,
    exact: HashMap<String, BTreeSet<u32>>,
    stems: HashMap<String, BTreeSet<u32>>,
    position: HashMap<u32, usize>,
    longest_stem: usize,
}

impl Lexicon {
    /// Parses the `%`-delimited dictionary format.
    pub fn parse(content: &str) -> Result<Lexicon, LexiconError> {
        let mut lines = content.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));

        // skip leading blank lines, then expect the opening `%`
        let opening = lines.by_ref().find(|(_, l)| !l.trim().is_empty());
        match opening {
            Some((_, l)) if l.trim() == "%" => {}
            Some((n, _)) => {
                return Err(LexiconError::MalformedHeader { line: n, reason: "expected opening `%`".into() })
            }
            None => return Err(LexiconError::EmptyLexicon),
        }

        let mut categories: Vec<(u32, String)> = Vec::new();
        let mut position = HashMap::new();
        let mut closed = false;
        for (n, line) in lines.by_ref() {
            let line = line.trim();
            if line == "%" {
                closed = true;
                break;
            }
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let (id, name) = match (fields.next(), fields.next(), fields.next()) {
                (Some(id), Some(name), None) => (id, name),
                _ => {
                    return Err(LexiconError::MalformedHeader { line: n, reason: format!("expected `id<TAB>name`, got {line:?}") })
                }
            };
            let id: u32 = id
                .parse()
                .map_err(|_| LexiconError::MalformedHeader { line: n, reason: format!("category id {id:?} is not an integer") })?;
            if position.insert(id, categories.len()).is_some() {
                return Err(LexiconError::MalformedHeader { line: n, reason: format!("category {id} declared twice") });
            }
            categories.push((id, name.to_string()));
        }
        if !closed {
            return Err(LexiconError::MalformedHeader { line: 0, reason: "header is never closed by `%`".into() });
        }

        let mut exact: HashMap<String, BTreeSet<u32>> = HashMap::new();
        let mut stems: HashMap<String, BTreeSet<u32>> = HashMap::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields: Vec<&str> = line.split('\t').map(str::trim).filter(|f| !f.is_empty()).collect();
            if fields.len() < 2 {
                fields = line.split_whitespace().collect();
            }
            if fields.len() < 2 {
                return Err(LexiconError::MalformedEntry { line: n, reason: format!("entry {line:?} has no category ids") });
            }
            let word = fields[0].to_lowercase();
            let mut ids = BTreeSet::new();
            for raw in &fields[1..] {
                let id: u32 = raw
                    .parse()
                    .map_err(|_| LexiconError::MalformedEntry { line: n, reason: format!("category id {raw:?} is not an integer") })?;
                if !position.contains_key(&id) {
                    return Err(LexiconError::UnknownCategoryId { line: n, word, id });
                }
                ids.insert(id);
            }
            let (target, key) = match word.strip_suffix('*') {
                Some(stem) => (&mut stems, stem.to_string()),
                None => (&mut exact, word),
            };
            if key.is_empty() {
                return Err(LexiconError::MalformedEntry { line: n, reason: "empty word".into() });
            }
            target.entry(key).or_default().extend(ids);
        }

        if categories.is_empty() || (exact.is_empty() && stems.is_empty()) {
            return Err(LexiconError::EmptyLexicon);
        }
        let longest_stem = stems.keys().map(|s| s.chars().count()).max().unwrap_or(0);
        Ok(Lexicon { categories, exact, stems, position, longest_stem })
    }

    /// Writes the dictionary back out; entries are sorted so output is stable.
    pub fn serialize(&self) -> String {
        let mut out = String::from("%\n");
        for (id, name) in &self.categories {
            let _ = writeln!(out, "{id}\t{name}");
        }
        out.push_str("%\n");
        let mut entries: BTreeMap<String, &BTreeSet<u32>> = BTreeMap::new();
        for (w, ids) in &self.exact {
            entries.insert(w.clone(), ids);
        }
        for (s, ids) in &self.stems {
            entries.insert(format!("{s}*"), ids);
        }
        for (word, ids) in entries {
            out.push_str(&word);
            for id in ids {
                let _ = write!(out, "\t{id}");
            }
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn category_names(&self) -> Vec<&str> {
        self.categories.iter().map(|(_, n)| n.as_str()).collect()
    }

    pub fn exact_entry_count(&self) -> usize {
        self.exact.len()
    }

    pub fn stem_entry_count(&self) -> usize {
        self.stems.len()
    }

    /// Category ids a single lowercase token falls into: the union of its exact
    /// entry and its longest matching stem.
    pub fn lookup(&self, token: &str) -> BTreeSet<u32> {
        let mut ids = self.exact.get(token).cloned().unwrap_or_default();
        if let Some(stem_ids) = self.longest_stem_match(token) {
            ids.extend(stem_ids.iter().copied());
        }
        ids
    }

    fn longest_stem_match(&self, token: &str) -> Option<&BTreeSet<u32>> {
        if self.stems.is_empty() {
            return None;
        }
        let mut ends: Vec<usize> = token.char_indices().map(|(i, _)| i).skip(1).collect();
        ends.push(token.len());
        ends.truncate(self.longest_stem);
        ends.iter().rev().find_map(|&end| self.stems.get(&token[..end]))
    }

    /// Per-category relative frequencies: matched-token count over total
    /// token count. A token adds at most one to each category.
    pub fn extract_features(&self, text: &str) -> LexiconFeatures {
        let tokens = tokenize(text);
        let mut counts = vec![0usize; self.categories.len()];
        for token in &tokens {
            for id in self.lookup(token) {
                counts[self.position[&id]] += 1;
            }
        }
        let total = tokens.len();
        let values = counts
            .into_iter()
            .map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect();
        LexiconFeatures { values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconFeatures {
    pub values: Vec<f64>,
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Lowercased runs of alphabetic characters, keeping apostrophes that sit
/// between two letters. Typographic apostrophes are folded to `'`.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphabetic() {
            current.extend(c.to_lowercase());
        } else if is_apostrophe(c)
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphabetic())
        {
            current.push('\'');
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Per-dimension z-score parameters fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; exactly 0 for constant columns.
    pub std: Vec<f64>,
    pub fitted_on: usize,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Standardizer, LexiconError> {
        if rows.len() < 2 {
            return Err(LexiconError::InsufficientRows(rows.len()));
        }
        let dim = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(LexiconError::DimensionMismatch { expected: dim, actual: bad.len() });
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        let mut std = vec![0.0; dim];
        for j in 0..dim {
            let first = rows[0][j];
            if rows.iter().all(|r| r[j] == first) {
                mean[j] = first;
                continue;
            }
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = var.sqrt();
        }
        Ok(Standardizer { mean, std, fitted_on: rows.len() })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) / std`, with zero-variance dimensions mapped to 0.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, LexiconError> {
        if x.len() != self.dim() {
            return Err(LexiconError::DimensionMismatch { expected: self.dim(), actual: x.len() });
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| if s == 0.0 { 0.0 } else { (v - m) / s })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "%\n1\tnegemo\n2\tcogproc\n%\nsad\t1\ncry*\t1\nthink\t2\n";

    #[test]
    fn parses_header_and_entries() {
        let lex = Lexicon::parse(SMALL).unwrap();
        assert_eq!(lex.category_names(), ["negemo", "cogproc"]);
        assert_eq!(lex.exact_entry_count(), 2);
        assert_eq!(lex.stem_entry_count(), 1);
    }

    #[test]
    fn unknown_category_is_rejected() {
        let err = Lexicon::parse("%\n1\tnegemo\n%\nsad\t7\n").unwrap_err();
        assert!(matches!(err, LexiconError::UnknownCategoryId { id: 7, .. }));
    }

    #[test]
    fn duplicate_words_merge() {
        let lex = Lexicon::parse("%\n1\tnegemo\n2\tsad\n%\nsad\t1\nsad\t2\n").unwrap();
        assert_eq!(lex.lookup("sad"), BTreeSet::from([1, 2]));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(Lexicon::parse("1\tnegemo\n%\n"), Err(LexiconError::MalformedHeader { .. })));
        assert!(matches!(Lexicon::parse("%\n1\tnegemo\nsad\t1\n"), Err(LexiconError::MalformedHeader { .. })));
        assert!(matches!(Lexicon::parse("%\nx\tnegemo\n%\n"), Err(LexiconError::MalformedHeader { .. })));
        assert_eq!(Lexicon::parse(""), Err(LexiconError::EmptyLexicon));
        assert_eq!(Lexicon::parse("%\n%\n"), Err(LexiconError::EmptyLexicon));
        assert_eq!(Lexicon::parse("%\n1\tnegemo\n%\n"), Err(LexiconError::EmptyLexicon));
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("I can't sleep."), ["i", "can't", "sleep"]);
        assert_eq!(tokenize("2am again"), ["am", "again"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("'quoted' rock'n'roll don’t"), ["quoted", "rock'n'roll", "don't"]);
        assert_eq!(tokenize("ÉTÉ naïve"), ["été", "naïve"]);
    }

    #[test]
    fn five_token_fixture() {
        // "i feel sad and crying": 5 tokens, "sad" exact, "crying" via "cry*"
        let lex = Lexicon::parse(SMALL).unwrap();
        let f = lex.extract_features("i feel sad and crying");
        assert_eq!(f.values, vec![2.0 / 5.0, 0.0]);
        assert_eq!(f.values[0], 0.4);
    }

    #[test]
    fn no_matches_gives_zeros() {
        let lex = Lexicon::parse(SMALL).unwrap();
        assert_eq!(lex.extract_features("the weather is fine").values, vec![0.0, 0.0]);
        assert_eq!(lex.extract_features("").values, vec![0.0, 0.0]);
    }

    #[test]
    fn exact_and_stem_in_different_categories_both_count() {
        // hand fixture: "cry" is exact in 1 and stem in 2; "cry cry dog" has
        // 3 tokens, each "cry" adds one to both categories
        let lex = Lexicon::parse("%\n1\tsad\n2\taffect\n%\ncry\t1\ncry*\t2\n").unwrap();
        let f = lex.extract_features("cry cry dog");
        assert_eq!(f.values, vec![2.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn longest_stem_wins() {
        let lex = Lexicon::parse("%\n1\ta\n2\tb\n%\nhap*\t1\nhappi*\t2\n").unwrap();
        assert_eq!(lex.lookup("happiness"), BTreeSet::from([2]));
        assert_eq!(lex.lookup("happen"), BTreeSet::from([1]));
        assert!(lex.lookup("ha").is_empty());
    }

    #[test]
    fn standardizer_population_std() {
        let rows = vec![vec![1.0, 0.4], vec![2.0, 0.4], vec![3.0, 0.4]];
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.mean[0], 2.0);
        assert!((s.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.std[0] - 0.81650).abs() < 1e-5);
        assert_eq!(s.mean[1], 0.4);
        assert_eq!(s.std[1], 0.0);

        let z: Vec<f64> = rows.iter().map(|r| s.apply(r).unwrap()[0]).collect();
        for (got, want) in z.iter().zip([-1.22474, 0.0, 1.22474]) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
        assert_eq!(s.apply(&[9.0, 123.0]).unwrap()[1], 0.0);
    }

    #[test]
    fn constant_column_with_rounding_noise_is_exactly_zero_std() {
        let rows = vec![vec![0.1]; 3];
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.std, vec![0.0]);
    }

    #[test]
    fn standardizer_errors() {
        assert_eq!(Standardizer::fit(&[vec![1.0]]), Err(LexiconError::InsufficientRows(1)));
        let s = Standardizer::fit(&[vec![0.0; 64], vec![1.0; 64]]).unwrap();
        assert_eq!(s.apply(&[0.0; 10]), Err(LexiconError::DimensionMismatch { expected: 64, actual: 10 }));
    }
}
