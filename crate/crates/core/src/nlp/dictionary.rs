use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::text::{negated_at, tokenize, Token};
use crate::error::{Error, Result};
use crate::vocab::VocabularyStore;

/// One dictionary row: `surface_term,cui,concept_id,category`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub surface_term: String,
    pub cui: String,
    pub concept_id: i64,
    pub category: Option<String>,
}

pub fn read_dictionary(input: impl io::Read) -> Result<Vec<DictionaryEntry>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn load_dictionary(path: &Path) -> Result<Vec<DictionaryEntry>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dictionary(f)
}

/// CUI → concept id links for dictionary terms whose concept could not be
/// matched by name. Read from a reviewable `cui,concept_id` CSV.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManualLinks(pub BTreeMap<String, i64>);

impl ManualLinks {
    pub fn read(input: impl io::Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Link {
            cui: String,
            concept_id: i64,
        }
        let mut reader = csv::Reader::from_reader(input);
        let mut map = BTreeMap::new();
        for row in reader.deserialize::<Link>() {
            let link = row?;
            map.insert(link.cui, link.concept_id);
        }
        Ok(ManualLinks(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(f)
    }
}

/// A dictionary term with no usable concept id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LinkGap {
    pub surface_term: String,
    pub cui: String,
    pub concept_id: i64,
}

#[derive(Debug, Default, Clone)]
struct TrieNode {
    children: HashMap<u32, u32>,
    /// Entry indices whose normalized term ends here.
    terminal: Vec<usize>,
}

/// Token trie over normalized surface terms.
#[derive(Debug, Clone)]
pub struct CompiledDictionary {
    entries: Vec<DictionaryEntry>,
    token_ids: HashMap<String, u32>,
    nodes: Vec<TrieNode>,
    gaps: Vec<LinkGap>,
    links: ManualLinks,
}

/// One dictionary hit in a note.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    /// Offset of the first matched char, in Unicode scalar values.
    pub char_offset: usize,
    pub char_len: usize,
    pub byte_start: usize,
    pub byte_end: usize,
    /// The note text covered by the match, verbatim.
    pub matched_text: String,
    /// Index into [`CompiledDictionary::entries`].
    pub entry: usize,
    /// A negation trigger precedes the mention.
    pub negated: bool,
}

/// Builds the matcher. The dictionary must not be empty, and every term must
/// have at least one alphanumeric token. Entries whose concept id is 0 are
/// resolved through `links` by CUI; remaining zeros, and ids absent from
/// `vocab` when one is given, are reported as [`LinkGap`]s.
pub fn compile_dictionary(
    entries: Vec<DictionaryEntry>,
    links: &ManualLinks,
    vocab: Option<&VocabularyStore>,
) -> Result<CompiledDictionary> {
    if entries.is_empty() {
        return Err(Error::Validation("dictionary is empty".into()));
    }
    let mut dict = CompiledDictionary {
        entries: Vec::with_capacity(entries.len()),
        token_ids: HashMap::new(),
        nodes: vec![TrieNode::default()],
        gaps: Vec::new(),
        links: links.clone(),
    };
    dict.add_entries(entries, vocab)?;
    Ok(dict)
}

impl CompiledDictionary {
    fn add_entries(&mut self, entries: Vec<DictionaryEntry>, vocab: Option<&VocabularyStore>) -> Result<usize> {
        let before = self.entries.len();
        for mut entry in entries {
            let tokens = tokenize(&entry.surface_term);
            if tokens.is_empty() {
                return Err(Error::Validation(format!(
                    "dictionary term {:?} has no alphanumeric content",
                    entry.surface_term
                )));
            }
            if entry.concept_id == 0 {
                if let Some(&id) = self.links.0.get(&entry.cui) {
                    entry.concept_id = id;
                }
            }
            let known = entry.concept_id != 0 && vocab.is_none_or(|v| v.contains(entry.concept_id));
            if !known {
                log::warn!(
                    "dictionary term {:?} ({}) has no linked concept",
                    entry.surface_term,
                    entry.cui
                );
                self.gaps.push(LinkGap {
                    surface_term: entry.surface_term.clone(),
                    cui: entry.cui.clone(),
                    concept_id: entry.concept_id,
                });
            }

            let mut node = 0usize;
            for t in &tokens {
                let next_tid = self.token_ids.len() as u32;
                let tid = *self.token_ids.entry(t.norm.clone()).or_insert(next_tid);
                let next_node = self.nodes.len() as u32;
                let child = *self.nodes[node].children.entry(tid).or_insert(next_node);
                if child == next_node {
                    self.nodes.push(TrieNode::default());
                }
                node = child as usize;
            }
            // same normalized term and same concept would emit twice
            let duplicate = self.nodes[node]
                .terminal
                .iter()
                .any(|&i| self.entries[i].concept_id == entry.concept_id);
            if duplicate {
                continue;
            }
            self.nodes[node].terminal.push(self.entries.len());
            self.entries.push(entry);
        }
        Ok(self.entries.len() - before)
    }

    /// Adds more entries in place; returns how many were new.
    pub fn extend(&mut self, entries: Vec<DictionaryEntry>, vocab: Option<&VocabularyStore>) -> Result<usize> {
        self.add_entries(entries, vocab)
    }

    pub fn entries(&self) -> &[DictionaryEntry] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> &DictionaryEntry {
        &self.entries[index]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn gaps(&self) -> &[LinkGap] {
        &self.gaps
    }

    /// Whether `norm` (a normalized single token) occurs in any term.
    pub fn has_token(&self, norm: &str) -> bool {
        self.token_ids.contains_key(norm)
    }

    /// All non-overlapping longest matches, left to right, at token boundaries.
    /// A normalized term shared by several concepts yields one mention per concept.
    pub fn extract(&self, text: &str) -> Vec<Mention> {
        let tokens = tokenize(text);
        self.extract_tokens(text, &tokens)
    }

    pub(crate) fn extract_tokens(&self, text: &str, tokens: &[Token]) -> Vec<Mention> {
        let ids: Vec<Option<u32>> = tokens
            .iter()
            .map(|t| self.token_ids.get(t.norm.as_str()).copied())
            .collect();
        let mut mentions = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let mut node = 0usize;
            let mut best: Option<(usize, usize)> = None; // (last token index, node)
            let mut j = i;
            while j < tokens.len() {
                let Some(tid) = ids[j] else { break };
                let Some(&child) = self.nodes[node].children.get(&tid) else {
                    break;
                };
                node = child as usize;
                if !self.nodes[node].terminal.is_empty() {
                    best = Some((j, node));
                }
                j += 1;
            }
            match best {
                Some((last, node)) => {
                    let (first, end) = (&tokens[i], &tokens[last]);
                    let matched_text = text[first.byte_start..end.byte_end].to_owned();
                    let negated = negated_at(tokens, i);
                    for &entry in &self.nodes[node].terminal {
                        mentions.push(Mention {
                            char_offset: first.char_start,
                            char_len: end.char_end - first.char_start,
                            byte_start: first.byte_start,
                            byte_end: end.byte_end,
                            matched_text: matched_text.clone(),
                            entry,
                            negated,
                        });
                    }
                    i = last + 1;
                }
                None => i += 1,
            }
        }
        mentions
    }
}

/// Convenience wrapper matching the single-note extraction contract.
pub fn extract_note(note_text: &str, dict: &CompiledDictionary) -> Vec<Mention> {
    dict.extract(note_text)
}

/// Categories of the rehabilitation exercise extension.
pub const KNOWN_CATEGORIES: [&str; 9] = [
    "type of motion",
    "side of body",
    "location on body",
    "plane of motion",
    "duration",
    "set and rep information",
    "exercise purpose",
    "exercise type",
    "body position",
];

/// A parsed category file, ready to merge into a compiled dictionary.
#[derive(Debug, Clone, Default)]
pub struct CategoryExtension {
    pub entries: Vec<DictionaryEntry>,
    pub warnings: Vec<String>,
}

/// Reads a `surface_term,cui,concept_id,category` file of custom rule terms.
/// Unknown category labels are kept verbatim with a warning; a missing
/// category is an error.
pub fn read_custom_categories(input: impl io::Read) -> Result<CategoryExtension> {
    let entries = read_dictionary(input)?;
    let mut warnings = Vec::new();
    for e in &entries {
        match e.category.as_deref() {
            None | Some("") => {
                return Err(Error::Validation(format!(
                    "custom term {:?} has no category",
                    e.surface_term
                )))
            }
            Some(c) if !KNOWN_CATEGORIES.contains(&c) => {
                let msg = format!("unknown category {c:?} for term {:?}", e.surface_term);
                log::warn!("{msg}");
                warnings.push(msg);
            }
            Some(_) => {}
        }
    }
    Ok(CategoryExtension { entries, warnings })
}

pub fn load_custom_categories(path: &Path) -> Result<CategoryExtension> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_custom_categories(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn entry(term: &str, id: i64) -> DictionaryEntry {
        DictionaryEntry {
            surface_term: term.into(),
            cui: format!("C{id}"),
            concept_id: id,
            category: None,
        }
    }

    fn dict(entries: Vec<DictionaryEntry>) -> CompiledDictionary {
        compile_dictionary(entries, &ManualLinks::default(), None).unwrap()
    }

    #[test]
    fn finds_fall() {
        let d = dict(vec![entry("fall", 436583)]);
        let m = d.extract("a fall at home");
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].char_offset, m[0].matched_text.as_str()), (2, "fall"));
        assert_eq!(d.entry(m[0].entry).concept_id, 436583);
    }

    #[test]
    fn token_boundary() {
        let d = dict(vec![entry("x", 1)]);
        assert!(d.extract("taxi").is_empty());
        assert_eq!(d.extract("x-ray x.").len(), 1);
    }

    #[test]
    fn verbatim_variant_and_offset() {
        let d = dict(vec![entry("accident and fell", 436583)]);
        let text = "Patient had an accident and fell yesterday";
        let m = d.extract(text);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].matched_text, "accident and fell");
        assert_eq!(m[0].char_offset, text.find('a').map(|_| 15).unwrap());
        assert_eq!(&text[15..32], "accident and fell");
    }

    #[test]
    fn casing_and_spacing_preserved_in_matched_text() {
        let d = dict(vec![entry("accident a fall", 436583)]);
        let m = d.extract("Hx: Accident  a fall.");
        assert_eq!(m[0].matched_text, "Accident  a fall");
    }

    #[test]
    fn longest_match_wins() {
        let d = dict(vec![entry("fall", 1), entry("fall and injured", 2)]);
        let m = d.extract("had a fall and injured her hip");
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].matched_text, "fall and injured");
        // falls back to the shorter term when the long one does not complete
        let m = d.extract("a fall and then");
        assert_eq!(m[0].matched_text, "fall");
    }

    #[test]
    fn empty_note_and_empty_dictionary() {
        let d = dict(vec![entry("fall", 1)]);
        assert!(d.extract("").is_empty());
        assert!(compile_dictionary(vec![], &ManualLinks::default(), None).is_err());
    }

    #[test]
    fn shared_term_emits_once_per_concept() {
        let d = dict(vec![entry("CVA", 1), entry("cva", 2), entry("Cva", 1)]);
        assert_eq!(d.len(), 2);
        let m = d.extract("old CVA");
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].char_offset, m[1].char_offset);
    }

    #[test]
    fn negation_marks_mention() {
        let d = dict(vec![entry("fall", 1)]);
        assert!(d.extract("Patient denies fall.")[0].negated);
        assert!(!d.extract("Patient reports fall.")[0].negated);
    }

    #[test]
    fn manual_links_fill_missing_concepts() {
        let mut links = ManualLinks::default();
        links.0.insert("C0085639".into(), 436583);
        let mut e = entry("tumble", 0);
        e.cui = "C0085639".into();
        let d = compile_dictionary(vec![e, entry("wobble", 0)], &links, None).unwrap();
        assert_eq!(d.entries()[0].concept_id, 436583);
        assert_eq!(d.gaps().len(), 1);
        assert_eq!(d.gaps()[0].surface_term, "wobble");
    }

    #[test]
    fn manual_links_csv() {
        let links = ManualLinks::read("cui,concept_id\nC1,5\n".as_bytes()).unwrap();
        assert_eq!(links.0["C1"], 5);
    }

    #[test]
    fn fixture_dictionary_is_fully_linked() {
        let v = VocabularyStore::fixture();
        let d = compile_dictionary(fixtures::dictionary_entries(), &ManualLinks::default(), Some(&v)).unwrap();
        assert!(d.gaps().is_empty(), "{:?}", d.gaps());
    }

    #[test]
    fn rehab_extension_adds_101_entries() {
        let v = VocabularyStore::fixture();
        let mut d = compile_dictionary(fixtures::dictionary_entries(), &ManualLinks::default(), Some(&v)).unwrap();
        let before = d.len();
        let ext = read_custom_categories(fixtures::REHAB_CATEGORIES_CSV.as_bytes()).unwrap();
        assert!(ext.warnings.is_empty());
        let cats: std::collections::BTreeSet<_> = ext.entries.iter().map(|e| e.category.clone().unwrap()).collect();
        assert_eq!(cats.len(), 9);
        d.extend(ext.entries, Some(&v)).unwrap();
        assert_eq!(d.len(), before + 101);
        assert!(d.gaps().is_empty());

        let m = d.extract("Strengthening of the left knee in supine.");
        let found: Vec<(&str, &str)> = m
            .iter()
            .map(|m| (m.matched_text.as_str(), d.entry(m.entry).category.as_deref().unwrap()))
            .collect();
        assert_eq!(
            found,
            vec![
                ("Strengthening", "exercise purpose"),
                ("left", "side of body"),
                ("knee", "location on body"),
                ("supine", "body position"),
            ]
        );
    }

    #[test]
    fn empty_extension_changes_nothing() {
        let ext = read_custom_categories("surface_term,cui,concept_id,category\n".as_bytes()).unwrap();
        let mut d = dict(vec![entry("fall", 1)]);
        assert_eq!(d.extend(ext.entries, None).unwrap(), 0);
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn unknown_category_warns_but_keeps_label() {
        let ext = read_custom_categories("surface_term,cui,concept_id,category\ntheraband,X1,0,equipment\n".as_bytes())
            .unwrap();
        assert_eq!(ext.warnings.len(), 1);
        assert_eq!(ext.entries[0].category.as_deref(), Some("equipment"));
    }
}
