//! Parallel-corpus ingestion, vocabularies and target-side word classes.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::WordId;

pub const UNK_TOKEN: &str = "<unk>";
pub const NULL_TOKEN: &str = "<null>";
pub const VOCAB_HEADER: &str = "#dwalign-vocab v1";
pub const TRIPLE_PIPE: &str = " ||| ";

/// Which side of the corpus a vocabulary belongs to. Only source
/// vocabularies carry the NULL word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabSide {
    Source,
    Target,
}

/// Token/id mapping with corpus frequencies.
///
/// Ids are dense. Specials come first (`<null>` then `<unk>` on the source
/// side, `<unk>` alone on the target side), followed by the surviving word
/// types in decreasing frequency, ties broken by first occurrence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    token_to_id: HashMap<String, WordId>,
    id_to_token: Vec<String>,
    freq: Vec<u64>,
    unk_id: WordId,
    null_id: Option<WordId>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    freq: Vec<u64>,
    unk_id: WordId,
    null_id: Option<WordId>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        let token_to_id = r
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as WordId))
            .collect();
        Vocab {
            token_to_id,
            id_to_token: r.tokens,
            freq: r.freq,
            unk_id: r.unk_id,
            null_id: r.null_id,
        }
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            tokens: v.id_to_token,
            freq: v.freq,
            unk_id: v.unk_id,
            null_id: v.null_id,
        }
    }
}

impl Vocab {
    /// Builds a vocabulary, mapping every token seen fewer than `min_count`
    /// times to UNK. UNK's frequency is the total frequency of the replaced
    /// tokens.
    pub fn build<S: AsRef<str>>(sentences: &[Vec<S>], min_count: u64, side: VocabSide) -> Result<Vocab> {
        if min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be >= 1".into()));
        }
        let mut counts: HashMap<&str, (u64, usize)> = HashMap::new();
        let mut order = 0usize;
        for tok in sentences.iter().flatten() {
            let tok = tok.as_ref();
            let entry = counts.entry(tok).or_insert_with(|| {
                order += 1;
                (0, order)
            });
            entry.0 += 1;
        }

        let mut vocab = Vocab::specials(side);
        let mut kept: Vec<(&str, u64, usize)> = Vec::new();
        let mut unk_freq = 0;
        for (tok, (count, first)) in counts {
            if count >= min_count && tok != UNK_TOKEN && tok != NULL_TOKEN {
                kept.push((tok, count, first));
            } else {
                unk_freq += count;
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        vocab.freq[vocab.unk_id as usize] = unk_freq;
        for (tok, count, _) in kept {
            vocab.push(tok.to_string(), count);
        }
        Ok(vocab)
    }

    fn specials(side: VocabSide) -> Vocab {
        let mut v = Vocab {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            freq: Vec::new(),
            unk_id: 0,
            null_id: None,
        };
        if side == VocabSide::Source {
            v.null_id = Some(v.push(NULL_TOKEN.to_string(), 0));
        }
        v.unk_id = v.push(UNK_TOKEN.to_string(), 0);
        v
    }

    fn push(&mut self, token: String, freq: u64) -> WordId {
        let id = self.id_to_token.len() as WordId;
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
        self.freq.push(freq);
        id
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn side(&self) -> VocabSide {
        if self.null_id.is_some() {
            VocabSide::Source
        } else {
            VocabSide::Target
        }
    }

    pub fn unk_id(&self) -> WordId {
        self.unk_id
    }

    pub fn null_id(&self) -> Option<WordId> {
        self.null_id
    }

    pub fn is_special(&self, id: WordId) -> bool {
        id == self.unk_id || Some(id) == self.null_id
    }

    /// Id of `token`, if it is a known type.
    pub fn get(&self, token: &str) -> Option<WordId> {
        self.token_to_id.get(token).copied()
    }

    /// Id of `token`, falling back to UNK.
    pub fn id(&self, token: &str) -> WordId {
        self.get(token).unwrap_or(self.unk_id)
    }

    pub fn token(&self, id: WordId) -> &str {
        &self.id_to_token[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn freq(&self, id: WordId) -> u64 {
        self.freq[id as usize]
    }

    pub fn freqs(&self) -> &[u64] {
        &self.freq
    }

    pub fn total_count(&self) -> u64 {
        self.freq.iter().sum()
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<WordId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[WordId]) -> Vec<&str> {
        ids.iter().map(|&id| self.token(id)).collect()
    }

    /// Writes the `#dwalign-vocab v1` text format: one `token<TAB>freq`
    /// per line in id order.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{VOCAB_HEADER}")?;
        for (tok, f) in self.id_to_token.iter().zip(&self.freq) {
            writeln!(w, "{tok}\t{f}")?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(reader: R, context: &str) -> Result<Vocab> {
        let mut lines = BufReader::new(reader).lines();
        match lines.next() {
            Some(Ok(h)) if h.trim_end() == VOCAB_HEADER => {}
            Some(Err(e)) => return Err(Error::io(context, e)),
            _ => return Err(Error::format(context, 1, format!("expected header `{VOCAB_HEADER}`"))),
        }
        let mut v = Vocab {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            freq: Vec::new(),
            unk_id: 0,
            null_id: None,
        };
        let mut unk = None;
        for (n, line) in lines.enumerate() {
            let lineno = n + 2;
            let line = line.map_err(|e| Error::io(context, e))?;
            let (tok, f) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(context, lineno, "expected `token<TAB>freq`"))?;
            let f: u64 = f
                .trim_end()
                .parse()
                .map_err(|_| Error::format(context, lineno, format!("bad frequency `{f}`")))?;
            if tok.is_empty() || v.token_to_id.contains_key(tok) {
                return Err(Error::format(
                    context,
                    lineno,
                    format!("empty or duplicate token `{tok}`"),
                ));
            }
            let id = v.push(tok.to_string(), f);
            match tok {
                UNK_TOKEN => unk = Some(id),
                NULL_TOKEN => v.null_id = Some(id),
                _ => {}
            }
        }
        v.unk_id = unk.ok_or_else(|| Error::format(context, 1, "vocabulary lacks `<unk>`"))?;
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        crate::serialize::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Vocab::read_from(f, &path.display().to_string())
    }
}

/// One encoded sentence pair. `src` holds positions 1..=I (the NULL word at
/// position 0 is implicit), `tgt` holds positions 1..=J.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub src: Vec<WordId>,
    pub tgt: Vec<WordId>,
}

impl SentencePair {
    pub fn new(src: Vec<WordId>, tgt: Vec<WordId>) -> Self {
        SentencePair { src, tgt }
    }

    /// Source length I, excluding NULL.
    pub fn src_len(&self) -> usize {
        self.src.len()
    }

    /// Target length J.
    pub fn tgt_len(&self) -> usize {
        self.tgt.len()
    }
}

/// Tokenized but not yet encoded parallel text.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawCorpus {
    pub src: Vec<Vec<String>>,
    pub tgt: Vec<Vec<String>>,
}

impl RawCorpus {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

fn tokenize(line: &str) -> Vec<String> {
    line.split_ascii_whitespace().map(str::to_string).collect()
}

/// Parses `SOURCE ||| TARGET` lines. Each line must contain exactly one
/// separator.
pub fn parse_triple_pipe<R: BufRead>(reader: R, context: &str) -> Result<RawCorpus> {
    let mut raw = RawCorpus::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(context, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.matches("|||").count() != 1 {
            return Err(Error::format(context, n + 1, "expected exactly one ` ||| ` separator"));
        }
        let (src, tgt) = line
            .split_once(TRIPLE_PIPE)
            .ok_or_else(|| Error::format(context, n + 1, "separator must be ` ||| `"))?;
        raw.src.push(tokenize(src));
        raw.tgt.push(tokenize(tgt));
    }
    Ok(raw)
}

pub fn read_triple_pipe(path: &Path) -> Result<RawCorpus> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_triple_pipe(BufReader::new(f), &path.display().to_string())
}

pub fn read_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .map(|l| l.map(|l| tokenize(&l)).map_err(|e| Error::io(path, e)))
        .collect()
}

/// Reads a parallel corpus stored as two line-aligned files.
pub fn read_two_files(src: &Path, tgt: &Path) -> Result<RawCorpus> {
    let src = read_lines(src)?;
    let tgt = read_lines(tgt)?;
    if src.len() != tgt.len() {
        return Err(Error::LineCountMismatch {
            source_lines: src.len(),
            target_lines: tgt.len(),
        });
    }
    Ok(RawCorpus { src, tgt })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EncodeStats {
    pub dropped_empty: usize,
    pub dropped_long: usize,
}

/// Encoded parallel corpus together with both vocabularies.
#[derive(Clone, Debug)]
pub struct ParallelCorpus {
    pairs: Vec<SentencePair>,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
}

impl ParallelCorpus {
    /// Encodes line pairs against existing vocabularies. Pairs with an empty
    /// side, or with a side longer than `max_len`, are dropped and counted.
    pub fn encode<S: AsRef<str>>(
        src_lines: &[Vec<S>],
        tgt_lines: &[Vec<S>],
        src_vocab: Vocab,
        tgt_vocab: Vocab,
        max_len: Option<usize>,
    ) -> Result<(ParallelCorpus, EncodeStats)> {
        if src_lines.len() != tgt_lines.len() {
            return Err(Error::LineCountMismatch {
                source_lines: src_lines.len(),
                target_lines: tgt_lines.len(),
            });
        }
        if src_vocab.null_id().is_none() {
            return Err(Error::InvalidArgument("source vocabulary must contain NULL".into()));
        }
        let mut stats = EncodeStats::default();
        let mut pairs = Vec::with_capacity(src_lines.len());
        for (s, t) in src_lines.iter().zip(tgt_lines) {
            if s.is_empty() || t.is_empty() {
                stats.dropped_empty += 1;
                continue;
            }
            if max_len.is_some_and(|m| s.len() > m || t.len() > m) {
                stats.dropped_long += 1;
                continue;
            }
            pairs.push(SentencePair::new(src_vocab.encode(s), tgt_vocab.encode(t)));
        }
        Ok((
            ParallelCorpus {
                pairs,
                src_vocab,
                tgt_vocab,
            },
            stats,
        ))
    }

    /// Builds both vocabularies from the kept pairs and encodes them.
    pub fn from_raw(raw: &RawCorpus, min_count: u64, max_len: Option<usize>) -> Result<(ParallelCorpus, EncodeStats)> {
        if raw.src.len() != raw.tgt.len() {
            return Err(Error::LineCountMismatch {
                source_lines: raw.src.len(),
                target_lines: raw.tgt.len(),
            });
        }
        let keep = |s: &Vec<String>, t: &Vec<String>| {
            !s.is_empty() && !t.is_empty() && max_len.is_none_or(|m| s.len() <= m && t.len() <= m)
        };
        let (src_kept, tgt_kept): (Vec<_>, Vec<_>) = raw
            .src
            .iter()
            .zip(&raw.tgt)
            .filter(|(s, t)| keep(s, t))
            .map(|(s, t)| (s.clone(), t.clone()))
            .unzip();
        let src_vocab = Vocab::build(&src_kept, min_count, VocabSide::Source)?;
        let tgt_vocab = Vocab::build(&tgt_kept, min_count, VocabSide::Target)?;
        ParallelCorpus::encode(&raw.src, &raw.tgt, src_vocab, tgt_vocab, max_len)
    }

    /// Assembles a corpus from already-encoded pairs.
    pub fn from_pairs(pairs: Vec<SentencePair>, src_vocab: Vocab, tgt_vocab: Vocab) -> Result<Self> {
        if src_vocab.null_id().is_none() {
            return Err(Error::InvalidArgument("source vocabulary must contain NULL".into()));
        }
        for (n, p) in pairs.iter().enumerate() {
            if p.src.is_empty() || p.tgt.is_empty() {
                return Err(Error::InvalidArgument(format!("pair {n} has an empty side")));
            }
            let bad_src = p.src.iter().any(|&e| e as usize >= src_vocab.len());
            let bad_tgt = p.tgt.iter().any(|&f| f as usize >= tgt_vocab.len());
            if bad_src || bad_tgt {
                return Err(Error::InvalidArgument(format!(
                    "pair {n} has an id outside its vocabulary"
                )));
            }
        }
        Ok(ParallelCorpus {
            pairs,
            src_vocab,
            tgt_vocab,
        })
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn src_vocab(&self) -> &Vocab {
        &self.src_vocab
    }

    pub fn tgt_vocab(&self) -> &Vocab {
        &self.tgt_vocab
    }

    pub fn target_tokens(&self) -> usize {
        self.pairs.iter().map(|p| p.tgt.len()).sum()
    }
}

/// Frequency-based partition of the target vocabulary into classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPartition {
    class_of: Vec<u32>,
    members: Vec<Vec<WordId>>,
    within_index: Vec<u32>,
}

impl ClassPartition {
    /// Greedy construction over word types in decreasing frequency (ties by
    /// id). A non-empty class is closed before the next word is added once
    /// its cumulative frequency has reached `T / sqrt(|V|)` or its size has
    /// reached `sqrt(|V|)`, `T` being the total token count.
    pub fn build(vocab: &Vocab) -> ClassPartition {
        let freqs = vocab.freqs();
        let n = freqs.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| freqs[b].cmp(&freqs[a]).then(a.cmp(&b)));

        let sqrt_v = (n as f64).sqrt();
        let total: u64 = freqs.iter().sum();
        let freq_cap = total as f64 / sqrt_v;

        let mut members: Vec<Vec<WordId>> = Vec::new();
        let mut current: Vec<WordId> = Vec::new();
        let mut cum = 0u64;
        for id in order {
            if !current.is_empty() && (cum as f64 >= freq_cap || current.len() as f64 >= sqrt_v) {
                members.push(std::mem::take(&mut current));
                cum = 0;
            }
            current.push(id as WordId);
            cum += freqs[id];
        }
        if !current.is_empty() {
            members.push(current);
        }
        Self::from_members_unchecked(members, n)
    }

    /// All words in one class; the class factor is then always 1.
    pub fn single(vocab_size: usize) -> ClassPartition {
        Self::from_members_unchecked(vec![(0..vocab_size as WordId).collect()], vocab_size)
    }

    /// Builds a partition from explicit member lists, checking that every id
    /// in `0..vocab_size` appears exactly once and no class is empty.
    pub fn from_members(members: Vec<Vec<WordId>>, vocab_size: usize) -> Result<ClassPartition> {
        let mut seen = vec![false; vocab_size];
        for class in &members {
            if class.is_empty() {
                return Err(Error::InvalidArgument("empty class".into()));
            }
            for &w in class {
                let slot = seen
                    .get_mut(w as usize)
                    .ok_or_else(|| Error::InvalidArgument(format!("class member {w} out of range")))?;
                if *slot {
                    return Err(Error::InvalidArgument(format!("word {w} in more than one class")));
                }
                *slot = true;
            }
        }
        if let Some(w) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("word {w} has no class")));
        }
        Ok(Self::from_members_unchecked(members, vocab_size))
    }

    fn from_members_unchecked(members: Vec<Vec<WordId>>, vocab_size: usize) -> ClassPartition {
        let mut class_of = vec![0; vocab_size];
        let mut within_index = vec![0; vocab_size];
        for (c, class) in members.iter().enumerate() {
            for (k, &w) in class.iter().enumerate() {
                class_of[w as usize] = c as u32;
                within_index[w as usize] = k as u32;
            }
        }
        ClassPartition {
            class_of,
            members,
            within_index,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.members.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.class_of.len()
    }

    pub fn class_of(&self, f: WordId) -> usize {
        self.class_of[f as usize] as usize
    }

    pub fn members(&self, class: usize) -> &[WordId] {
        &self.members[class]
    }

    pub fn all_members(&self) -> &[Vec<WordId>] {
        &self.members
    }

    pub fn within_index(&self, f: WordId) -> usize {
        self.within_index[f as usize] as usize
    }
}
