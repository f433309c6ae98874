//! Plain-text tokenizer file.
//!
//! ```text
//! bpe<TAB>vocab_size<TAB>N
//! #merges<TAB>K
//! <left> <right>          (K lines, printable byte form)
//! #vocab<TAB>N
//! <token><TAB><id>[<TAB>special]
//! ```
//!
//! Bytes are written with the usual byte-level printable mapping, so merge
//! lines never contain raw spaces.

use std::io::{BufRead, Write};
use std::sync::OnceLock;

use super::{TokenId, TokenizerModel, BYTE_OFFSET, NUM_SPECIALS, SPECIAL_NAMES};
use crate::error::{LabError, Result};

fn byte_tables() -> &'static ([char; 256], std::collections::HashMap<char, u8>) {
    static TABLES: OnceLock<([char; 256], std::collections::HashMap<char, u8>)> = OnceLock::new();
    TABLES.get_or_init(|| {
        let printable = |b: u32| {
            (u32::from(b'!')..=u32::from(b'~')).contains(&b)
                || (0xA1..=0xAC).contains(&b)
                || (0xAE..=0xFF).contains(&b)
        };
        let mut fwd = ['\0'; 256];
        let mut extra = 0u32;
        for b in 0..256u32 {
            let c = if printable(b) {
                b
            } else {
                extra += 1;
                255 + extra
            };
            fwd[b as usize] = char::from_u32(c).expect("valid scalar");
        }
        let back = fwd.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        (fwd, back)
    })
}

/// Maps raw bytes to a printable string without whitespace.
pub fn bytes_to_printable(bytes: &[u8]) -> String {
    let (fwd, _) = byte_tables();
    bytes.iter().map(|&b| fwd[b as usize]).collect()
}

pub fn printable_to_bytes(s: &str) -> Option<Vec<u8>> {
    let (_, back) = byte_tables();
    s.chars().map(|c| back.get(&c).copied()).collect()
}

pub fn write_tokenizer<W: Write>(mut w: W, model: &TokenizerModel) -> Result<()> {
    writeln!(w, "{}\tvocab_size\t{}", model.family(), model.vocab_size())?;
    writeln!(w, "#merges\t{}", model.merges().len())?;
    for &(a, b) in model.merges() {
        let left = bytes_to_printable(model.token_bytes(a).expect("merge id in range"));
        let right = bytes_to_printable(model.token_bytes(b).expect("merge id in range"));
        writeln!(w, "{left} {right}")?;
    }
    writeln!(w, "#vocab\t{}", model.vocab_size())?;
    for (id, name) in SPECIAL_NAMES.iter().enumerate() {
        writeln!(w, "{name}\t{id}\tspecial")?;
    }
    for id in NUM_SPECIALS..model.vocab_size() {
        let bytes = model.token_bytes(id as TokenId).expect("id in range");
        writeln!(w, "{}\t{}", bytes_to_printable(bytes), id)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> LabError {
    LabError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Reads a tokenizer file and checks that the vocab section agrees with the
/// tokens the merges produce.
pub fn read_tokenizer<R: BufRead>(r: R) -> Result<TokenizerModel> {
    let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
    let mut it = lines.iter().enumerate().map(|(i, l)| (i + 1, l.as_str()));

    let (ln, header) = it.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let fields: Vec<&str> = header.split('\t').collect();
    if fields.len() != 3 || fields[1] != "vocab_size" {
        return Err(parse_err(ln, "header must be `<family>\\tvocab_size\\t<N>`"));
    }
    let family = fields[0].to_string();
    let vocab_size: usize = fields[2]
        .parse()
        .map_err(|_| parse_err(ln, "bad vocab size"))?;

    let (ln, merges_hdr) = it.next().ok_or_else(|| parse_err(2, "missing #merges"))?;
    let n_merges: usize = merges_hdr
        .strip_prefix("#merges\t")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| parse_err(ln, "expected `#merges\\t<K>`"))?;

    let mut by_bytes: std::collections::HashMap<Vec<u8>, TokenId> = (0..=255u8)
        .map(|b| (vec![b], BYTE_OFFSET + b as TokenId))
        .collect();
    let mut merges = Vec::with_capacity(n_merges);
    for k in 0..n_merges {
        let (ln, line) = it.next().ok_or_else(|| parse_err(0, "truncated merges"))?;
        let (l, r) = line
            .split_once(' ')
            .ok_or_else(|| parse_err(ln, "merge line must be `<left> <right>`"))?;
        let lb = printable_to_bytes(l).ok_or_else(|| parse_err(ln, "bad token text"))?;
        let rb = printable_to_bytes(r).ok_or_else(|| parse_err(ln, "bad token text"))?;
        let a = *by_bytes
            .get(&lb)
            .ok_or_else(|| parse_err(ln, format!("unknown token {l:?}")))?;
        let b = *by_bytes
            .get(&rb)
            .ok_or_else(|| parse_err(ln, format!("unknown token {r:?}")))?;
        merges.push((a, b));
        let mut joined = lb;
        joined.extend(rb);
        by_bytes
            .entry(joined)
            .or_insert((NUM_SPECIALS + 256 + k) as TokenId);
    }
    let model = TokenizerModel::from_merges(family, merges)?;
    if model.vocab_size() != vocab_size {
        return Err(parse_err(
            1,
            format!(
                "header vocab_size {vocab_size} but merges produce {}",
                model.vocab_size()
            ),
        ));
    }

    let (ln, vocab_hdr) = it.next().ok_or_else(|| parse_err(0, "missing #vocab"))?;
    if vocab_hdr != format!("#vocab\t{vocab_size}") {
        return Err(parse_err(ln, "expected `#vocab\\t<N>`"));
    }
    let mut seen = 0usize;
    for (ln, line) in it {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() < 2 {
            return Err(parse_err(ln, "vocab line must be `<token>\\t<id>`"));
        }
        let id: TokenId = parts[1].parse().map_err(|_| parse_err(ln, "bad id"))?;
        let expected = if parts.get(2) == Some(&"special") {
            SPECIAL_NAMES
                .get(id as usize)
                .map(|s| s.as_bytes().to_vec())
        } else {
            printable_to_bytes(parts[0]).filter(|_| id as usize >= NUM_SPECIALS)
        };
        match (expected, model.token_bytes(id)) {
            (Some(e), Some(actual)) if e == actual && (parts.get(2) == Some(&"special")) == ((id as usize) < NUM_SPECIALS) => {}
            _ => return Err(parse_err(ln, format!("vocab entry {line:?} disagrees with merges"))),
        }
        seen += 1;
    }
    if seen != vocab_size {
        return Err(parse_err(0, format!("vocab lists {seen} entries, expected {vocab_size}")));
    }
    Ok(model)
}
