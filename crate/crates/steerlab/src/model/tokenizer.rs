//! Tokenizer with two modes: a byte-level scheme that is bijective on byte
//! strings, and a greedy lowest-rank BPE over character symbols.
//!
//! Files on disk: `vocab.json` maps token string to id; an optional
//! `merges.txt` (one space-separated pair per line, rank = line order)
//! switches the tokenizer into BPE mode.
//!
//! Byte tokens are spelled `<0xAB>`. Any other `<...>` vocab entry is treated
//! as a special token: encode matches special strings literally (longest
//! first) before falling back to byte/BPE encoding, and decode emits the
//! special's spelling verbatim.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("tokenizer io: {0}")]
    Io(#[from] std::io::Error),
    #[error("vocab json: {0}")]
    VocabJson(#[from] serde_json::Error),
    #[error("malformed merges line {line}: {text:?}")]
    MalformedMerge { line: usize, text: String },
    #[error("token id {0} out of range for vocab of {1}")]
    IdOutOfRange(u32, usize),
    #[error("no vocab entry can represent {0:?}")]
    UnknownToken(String),
    #[error("duplicate id {0} in vocab")]
    DuplicateId(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizerMode {
    ByteLevel,
    Bpe,
}

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

fn parse_byte_token(tok: &str) -> Option<u8> {
    let hex = tok.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    mode: TokenizerMode,
    vocab: HashMap<String, u32>,
    /// Inverse of `vocab`, indexed by id.
    id_to_token: Vec<Option<String>>,
    /// (left, right) -> rank; lower rank merges first.
    merge_ranks: HashMap<(String, String), usize>,
    /// Special token spellings, longest first, with their ids.
    specials: Vec<(String, u32)>,
}

impl Tokenizer {
    /// Build from in-memory parts. `merges` empty means byte-level mode.
    pub fn new(
        vocab: HashMap<String, u32>,
        merges: Vec<(String, String)>,
    ) -> Result<Self, TokenizerError> {
        let max_id = vocab.values().copied().max().map_or(0, |m| m as usize + 1);
        let mut id_to_token: Vec<Option<String>> = vec![None; max_id];
        for (tok, &id) in &vocab {
            let slot = &mut id_to_token[id as usize];
            if slot.is_some() {
                return Err(TokenizerError::DuplicateId(id));
            }
            *slot = Some(tok.clone());
        }
        let mode = if merges.is_empty() {
            TokenizerMode::ByteLevel
        } else {
            TokenizerMode::Bpe
        };
        let mut specials: Vec<(String, u32)> = vocab
            .iter()
            .filter(|(tok, _)| {
                tok.starts_with('<') && tok.ends_with('>') && parse_byte_token(tok).is_none()
            })
            .map(|(tok, &id)| (tok.clone(), id))
            .collect();
        specials.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        let merge_ranks = merges
            .into_iter()
            .enumerate()
            .map(|(rank, pair)| (pair, rank))
            .collect();
        Ok(Self {
            mode,
            vocab,
            id_to_token,
            merge_ranks,
            specials,
        })
    }

    /// Load `vocab.json` (+ optional `merges.txt`) from a directory.
    pub fn load(dir: &Path) -> Result<Self, TokenizerError> {
        let vocab: HashMap<String, u32> =
            serde_json::from_str(&fs::read_to_string(dir.join("vocab.json"))?)?;
        let merges_path = dir.join("merges.txt");
        let merges = if merges_path.exists() {
            parse_merges(&fs::read_to_string(merges_path)?)?
        } else {
            Vec::new()
        };
        Self::new(vocab, merges)
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.vocab.get(token).copied()
    }

    /// Encode a text. Special token spellings embedded in the text map to
    /// their single id; everything between them goes through the mode's
    /// segment encoder.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>, TokenizerError> {
        let mut ids = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            // find the earliest special occurrence; ties broken by the
            // longest spelling since `specials` is sorted longest first
            let hit = self
                .specials
                .iter()
                .filter_map(|(tok, id)| rest.find(tok.as_str()).map(|at| (at, tok, *id)))
                .min_by_key(|(at, tok, _)| (*at, usize::MAX - tok.len()));
            match hit {
                Some((at, tok, id)) => {
                    self.encode_segment(&rest[..at], &mut ids)?;
                    ids.push(id);
                    rest = &rest[at + tok.len()..];
                }
                None => {
                    self.encode_segment(rest, &mut ids)?;
                    rest = "";
                }
            }
        }
        Ok(ids)
    }

    fn encode_segment(&self, seg: &str, out: &mut Vec<u32>) -> Result<(), TokenizerError> {
        if seg.is_empty() {
            return Ok(());
        }
        match self.mode {
            TokenizerMode::ByteLevel => {
                for b in seg.bytes() {
                    let tok = byte_token(b);
                    let id = self
                        .vocab
                        .get(&tok)
                        .ok_or(TokenizerError::UnknownToken(tok))?;
                    out.push(*id);
                }
                Ok(())
            }
            TokenizerMode::Bpe => self.encode_bpe(seg, out),
        }
    }

    /// Greedy BPE: start from single-character symbols and repeatedly merge
    /// the adjacent pair with the lowest rank until none applies.
    fn encode_bpe(&self, seg: &str, out: &mut Vec<u32>) -> Result<(), TokenizerError> {
        let mut symbols: Vec<String> = seg.chars().map(|c| c.to_string()).collect();
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.merge_ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&rank| (rank, i))
                })
                .min();
            match best {
                Some((_, i)) => {
                    let merged = format!("{}{}", symbols[i], symbols[i + 1]);
                    symbols.splice(i..=i + 1, [merged]);
                }
                None => break,
            }
        }
        for sym in symbols {
            match self.vocab.get(&sym) {
                Some(&id) => out.push(id),
                None => return Err(TokenizerError::UnknownToken(sym)),
            }
        }
        Ok(())
    }

    /// Decode ids to bytes. Byte tokens contribute their byte; special tokens
    /// and BPE tokens contribute their UTF-8 spelling.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>, TokenizerError> {
        let mut out = Vec::new();
        for &id in ids {
            let tok = self
                .id_to_token
                .get(id as usize)
                .and_then(|t| t.as_ref())
                .ok_or(TokenizerError::IdOutOfRange(id, self.vocab_size()))?;
            match parse_byte_token(tok) {
                Some(b) => out.push(b),
                None => out.extend_from_slice(tok.as_bytes()),
            }
        }
        Ok(out)
    }

    /// Decode to a string, replacing invalid UTF-8 with U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }
}

fn parse_merges(text: &str) -> Result<Vec<(String, String)>, TokenizerError> {
    let mut merges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(l), Some(r), None) => merges.push((l.to_string(), r.to_string())),
            _ => {
                return Err(TokenizerError::MalformedMerge {
                    line: i + 1,
                    text: line.to_string(),
                })
            }
        }
    }
    Ok(merges)
}

/// The vocab every fixture model uses: 256 byte tokens at their byte value,
/// then `<bos>`, `<eos>`, `<pad>`, `<unk>` at 256..260.
pub fn byte_level_vocab() -> HashMap<String, u32> {
    let mut vocab = HashMap::new();
    for b in 0..=255u8 {
        vocab.insert(byte_token(b), b as u32);
    }
    for (i, special) in ["<bos>", "<eos>", "<pad>", "<unk>"].iter().enumerate() {
        vocab.insert((*special).to_string(), 256 + i as u32);
    }
    vocab
}
