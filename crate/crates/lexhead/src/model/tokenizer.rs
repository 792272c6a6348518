//! Byte-level BPE tokenizer (GPT-2 file format: `vocab.json` + `merges.txt`).
//!
//! Every byte has a printable glyph representation, so arbitrary input always
//! round-trips: bytes 0x21..0x7e map to themselves, everything else is shifted
//! into U+0100.. (space becomes `Ġ`). Vocabulary entries shaped like
//! `<|...|>` are treated as atomic special tokens and never split.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Glyph GPT-2 style tokenizers use for a leading space inside token strings.
pub const SPACE_MARKER: char = '\u{0120}'; // 'Ġ'

fn byte_glyph_table() -> ([char; 256], HashMap<char, u8>) {
    let mut to_glyph = ['\0'; 256];
    let mut used = [false; 256];
    for b in 0x21..=0x7e_u16 {
        to_glyph[b as usize] = char::from_u32(b as u32).unwrap();
        used[b as usize] = true;
    }
    for b in 0xa1..=0xac_u16 {
        to_glyph[b as usize] = char::from_u32(b as u32).unwrap();
        used[b as usize] = true;
    }
    for b in 0xae..=0xff_u16 {
        to_glyph[b as usize] = char::from_u32(b as u32).unwrap();
        used[b as usize] = true;
    }
    let mut n = 0u32;
    for b in 0..256usize {
        if !used[b] {
            to_glyph[b] = char::from_u32(256 + n).unwrap();
            n += 1;
        }
    }
    let mut from_glyph = HashMap::with_capacity(256);
    for (b, &g) in to_glyph.iter().enumerate() {
        from_glyph.insert(g, b as u8);
    }
    (to_glyph, from_glyph)
}

/// Map raw bytes into the glyph alphabet used by vocab/merge files.
pub fn bytes_to_glyphs(bytes: &[u8]) -> String {
    let (table, _) = byte_glyph_table();
    bytes.iter().map(|&b| table[b as usize]).collect()
}

/// Tokenized prompt: ids plus the text they came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub source_text: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub struct Tokenizer {
    vocab: HashMap<String, u32>,
    inv_vocab: Vec<String>,
    merge_ranks: HashMap<(String, String), usize>,
    specials: Vec<(String, u32)>,
    byte_to_glyph: [char; 256],
    glyph_to_byte: HashMap<char, u8>,
}

impl Tokenizer {
    /// Load `vocab.json` and `merges.txt` from a model directory.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let vocab_path = dir.join("vocab.json");
        let merges_path = dir.join("merges.txt");
        let vocab_raw = std::fs::read_to_string(&vocab_path)
            .map_err(|e| Error::io(vocab_path.display().to_string(), e))?;
        let merges_raw = std::fs::read_to_string(&merges_path)
            .map_err(|e| Error::io(merges_path.display().to_string(), e))?;
        let vocab: HashMap<String, u32> = serde_json::from_str(&vocab_raw)
            .map_err(|e| Error::Tokenizer(format!("vocab.json: {e}")))?;
        let mut merges = Vec::new();
        for (lineno, line) in merges_raw.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with("#version") {
                continue;
            }
            let (a, b) = line.split_once(' ').ok_or_else(|| {
                Error::Tokenizer(format!("merges.txt line {}: expected 'A B'", lineno + 1))
            })?;
            merges.push((a.to_string(), b.to_string()));
        }
        Self::from_parts(vocab, merges)
    }

    /// Build from an in-memory vocabulary and ordered merge list.
    pub fn from_parts(vocab: HashMap<String, u32>, merges: Vec<(String, String)>) -> Result<Self> {
        let n = vocab.len();
        let mut inv_vocab = vec![String::new(); n];
        for (tok, &id) in &vocab {
            let slot = inv_vocab
                .get_mut(id as usize)
                .ok_or_else(|| Error::Tokenizer(format!("token id {id} >= vocab size {n}")))?;
            if !slot.is_empty() {
                return Err(Error::Tokenizer(format!("duplicate token id {id}")));
            }
            *slot = tok.clone();
        }
        let merge_ranks = merges
            .into_iter()
            .enumerate()
            .map(|(rank, pair)| (pair, rank))
            .collect();
        let mut specials: Vec<(String, u32)> = vocab
            .iter()
            .filter(|(tok, _)| tok.starts_with("<|") && tok.ends_with("|>"))
            .map(|(tok, &id)| (tok.clone(), id))
            .collect();
        // longest-first so overlapping specials resolve deterministically
        specials.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        let (byte_to_glyph, glyph_to_byte) = byte_glyph_table();
        Ok(Self {
            vocab,
            inv_vocab,
            merge_ranks,
            specials,
            byte_to_glyph,
            glyph_to_byte,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.inv_vocab.len()
    }

    /// The glyph-space string for a token id (space markers preserved).
    pub fn token_string(&self, id: u32) -> Option<&str> {
        self.inv_vocab.get(id as usize).map(|s| s.as_str())
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.vocab.get(token).copied()
    }

    /// Id of a special token such as `<|mask|>`, if present.
    pub fn special_id(&self, token: &str) -> Option<u32> {
        self.specials
            .iter()
            .find(|(t, _)| t == token)
            .map(|(_, id)| *id)
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::new();
        for piece in self.split_specials(text) {
            match piece {
                Piece::Special(id) => ids.push(id),
                Piece::Text(t) => self.encode_plain(t, &mut ids),
            }
        }
        TokenSequence {
            ids,
            source_text: text.to_string(),
        }
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut bytes = Vec::new();
        let mut out = String::new();
        for &id in ids {
            let Some(tok) = self.token_string(id) else {
                continue;
            };
            if tok.starts_with("<|") && tok.ends_with("|>") {
                if !bytes.is_empty() {
                    out.push_str(&String::from_utf8_lossy(&bytes));
                    bytes.clear();
                }
                out.push_str(tok);
            } else {
                for g in tok.chars() {
                    if let Some(&b) = self.glyph_to_byte.get(&g) {
                        bytes.push(b);
                    }
                }
            }
        }
        if !bytes.is_empty() {
            out.push_str(&String::from_utf8_lossy(&bytes));
        }
        out
    }

    fn split_specials<'a>(&self, text: &'a str) -> Vec<Piece<'a>> {
        let mut pieces = Vec::new();
        let mut rest = text;
        'outer: while !rest.is_empty() {
            for (tok, id) in &self.specials {
                if let Some(at) = rest.find(tok.as_str()) {
                    if at > 0 {
                        pieces.push(Piece::Text(&rest[..at]));
                    }
                    pieces.push(Piece::Special(*id));
                    rest = &rest[at + tok.len()..];
                    continue 'outer;
                }
            }
            pieces.push(Piece::Text(rest));
            break;
        }
        pieces
    }

    fn encode_plain(&self, text: &str, out: &mut Vec<u32>) {
        for pretoken in pretokenize(text) {
            let glyphs: String = pretoken
                .bytes()
                .map(|b| self.byte_to_glyph[b as usize])
                .collect();
            for part in self.bpe(&glyphs) {
                match self.vocab.get(&part) {
                    Some(&id) => out.push(id),
                    None => {
                        // byte fallback: every single glyph is expected in vocab
                        for g in part.chars() {
                            if let Some(&id) = self.vocab.get(g.to_string().as_str()) {
                                out.push(id);
                            }
                        }
                    }
                }
            }
        }
    }

    fn bpe(&self, glyphs: &str) -> Vec<String> {
        let mut parts: Vec<String> = glyphs.chars().map(|c| c.to_string()).collect();
        if parts.len() < 2 {
            return parts;
        }
        loop {
            let mut best: Option<(usize, usize)> = None; // (rank, index)
            for i in 0..parts.len() - 1 {
                if let Some(&rank) = self
                    .merge_ranks
                    .get(&(parts[i].clone(), parts[i + 1].clone()))
                {
                    if best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((_, i)) = best else { break };
            let merged = format!("{}{}", parts[i], parts[i + 1]);
            parts.splice(i..i + 2, [merged]);
            if parts.len() < 2 {
                break;
            }
        }
        parts
    }
}

enum Piece<'a> {
    Text(&'a str),
    Special(u32),
}

fn is_letter(c: char) -> bool {
    c.is_alphabetic()
}

fn is_digit(c: char) -> bool {
    c.is_numeric()
}

/// Split text the way GPT-2's pre-tokenizer regex does:
/// contractions, optional-space letter runs, digit runs, punctuation runs,
/// and whitespace runs that leave their final character to lead the next
/// token when one follows.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    let at = |k: usize| chars.get(k).map(|&(_, c)| c);
    let byte_of = |k: usize| chars.get(k).map_or(text.len(), |&(o, _)| o);
    while i < chars.len() {
        let start = byte_of(i);
        // contractions: 's 't 're 've 'm 'll 'd
        if at(i) == Some('\'') {
            let two = |a: char| at(i + 1) == Some(a);
            let three = |a: char, b: char| at(i + 1) == Some(a) && at(i + 2) == Some(b);
            let taken = if three('r', 'e') || three('v', 'e') || three('l', 'l') {
                3
            } else if two('s') || two('t') || two('m') || two('d') {
                2
            } else {
                0
            };
            if taken > 0 {
                i += taken;
                tokens.push(&text[start..byte_of(i)]);
                continue;
            }
        }
        let lead_space = at(i) == Some(' ');
        let j = if lead_space { i + 1 } else { i };
        if let Some(c) = at(j) {
            if is_letter(c) {
                let mut k = j;
                while at(k).is_some_and(is_letter) {
                    k += 1;
                }
                i = k;
                tokens.push(&text[start..byte_of(i)]);
                continue;
            }
            if is_digit(c) {
                let mut k = j;
                while at(k).is_some_and(is_digit) {
                    k += 1;
                }
                i = k;
                tokens.push(&text[start..byte_of(i)]);
                continue;
            }
            if !c.is_whitespace() {
                let mut k = j;
                while at(k).is_some_and(|c| !c.is_whitespace() && !is_letter(c) && !is_digit(c)) {
                    k += 1;
                }
                i = k;
                tokens.push(&text[start..byte_of(i)]);
                continue;
            }
        }
        // whitespace run; hold back the final char if a non-space follows
        debug_assert!(at(i).is_some_and(char::is_whitespace));
        let mut k = i;
        while at(k).is_some_and(char::is_whitespace) {
            k += 1;
        }
        let followed = k < chars.len();
        i = if followed && k - i > 1 { k - 1 } else { k };
        tokens.push(&text[start..byte_of(i)]);
    }
    tokens
}

/// Deterministic byte-level BPE trainer.
///
/// Builds a vocabulary of the 256 byte glyphs, the supplied special tokens,
/// and greedy most-frequent-pair merges learned from `corpus` until
/// `target_vocab` entries exist or no pair repeats. Ties break
/// lexicographically so training is reproducible.
pub fn train_bpe(
    corpus: &str,
    target_vocab: usize,
    specials: &[&str],
) -> (HashMap<String, u32>, Vec<(String, String)>) {
    let (byte_to_glyph, _) = byte_glyph_table();
    let mut vocab: HashMap<String, u32> = HashMap::new();
    let mut next_id = 0u32;
    for b in 0..256usize {
        vocab.insert(byte_to_glyph[b].to_string(), next_id);
        next_id += 1;
    }

    // word -> count, each word a glyph-char sequence from one pretoken
    let mut words: HashMap<Vec<String>, u64> = HashMap::new();
    for pre in pretokenize(corpus) {
        let glyphs: Vec<String> = pre
            .bytes()
            .map(|b| byte_to_glyph[b as usize].to_string())
            .collect();
        *words.entry(glyphs).or_insert(0) += 1;
    }

    let budget = target_vocab.saturating_sub(specials.len());
    let mut merges = Vec::new();
    while vocab.len() < budget {
        let mut pair_counts: HashMap<(String, String), u64> = HashMap::new();
        for (word, &count) in &words {
            for w in word.windows(2) {
                *pair_counts
                    .entry((w[0].clone(), w[1].clone()))
                    .or_insert(0) += count;
            }
        }
        let Some((pair, count)) = pair_counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        else {
            break;
        };
        if count < 2 {
            break;
        }
        let merged = format!("{}{}", pair.0, pair.1);
        vocab.insert(merged.clone(), next_id);
        next_id += 1;
        merges.push(pair.clone());
        let mut new_words = HashMap::with_capacity(words.len());
        for (word, count) in words {
            let mut out = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == pair.0 && word[i + 1] == pair.1 {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(word[i].clone());
                    i += 1;
                }
            }
            *new_words.entry(out).or_insert(0) += count;
        }
        words = new_words;
    }
    for s in specials {
        vocab.insert((*s).to_string(), next_id);
        next_id += 1;
    }
    (vocab, merges)
}
