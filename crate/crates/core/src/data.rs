//! Corpus files, vocabulary, splits, batching and a synthetic generator.
//!
//! A domain lives in up to three files next to each other:
//! `<name>.task.train`, `<name>.task.val` (optional) and `<name>.task.test`,
//! one example per line as `label<TAB>text` (or `text<TAB>label` with
//! `label_last`). Labels are `0`/`1`; text is split on whitespace.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::layers::{EmbeddingTable, PAD_ID, UNK_ID};
use crate::net::Labels;
use crate::numerics::RngStream;

/// A tokenized but not yet encoded example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawExample {
    pub label: usize,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainCorpus {
    pub name: String,
    pub train: Vec<RawExample>,
    pub val: Vec<RawExample>,
    pub test: Vec<RawExample>,
}

/// Encoded example; `tokens` holds the true (unpadded) sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub y_s: usize,
    pub y_d: usize,
}

impl Example {
    pub fn labels(&self) -> Labels {
        Labels {
            y_s: self.y_s,
            y_d: self.y_d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedDomain {
    pub name: String,
    pub index: usize,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "dev" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split `{s}`"))),
        }
    }
}

impl EncodedDomain {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn split_path(dir: &Path, name: &str, split: Split) -> PathBuf {
    dir.join(format!("{name}.task.{}", split.as_str()))
}

/// Share of malformed lines above which a file is rejected.
pub const MAX_MALFORMED: f64 = 0.10;

/// Parses corpus lines. Malformed lines (no tab, bad label, empty text) are
/// skipped and counted; more than [`MAX_MALFORMED`] of them is an error.
pub fn parse_examples(text: &str, path: &Path, label_last: bool) -> Result<(Vec<RawExample>, usize)> {
    let mut out = Vec::new();
    let mut bad = 0usize;
    let mut total = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let parts = if label_last { line.rsplit_once('\t').map(|(t, l)| (l, t)) } else { line.split_once('\t') };
        let Some((label, body)) = parts else {
            bad += 1;
            continue;
        };
        let label = match label.trim() {
            "0" => 0,
            "1" => 1,
            _ => {
                bad += 1;
                continue;
            }
        };
        let tokens: Vec<String> = body.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            bad += 1;
            continue;
        }
        out.push(RawExample { label, tokens });
    }
    if bad > 0 {
        warn!("{}: skipped {bad} of {total} malformed lines", path.display());
    }
    if total > 0 && bad as f64 > MAX_MALFORMED * total as f64 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{bad} of {total} lines malformed"),
        });
    }
    Ok((out, bad))
}

fn read_split(path: &Path, label_last: bool) -> Result<Vec<RawExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_examples(&text, path, label_last)?.0)
}

/// Loads one domain. The validation file is optional; when absent `val` is
/// left empty for [`split_val`] to fill.
pub fn load_corpus(dir: &Path, name: &str, label_last: bool) -> Result<DomainCorpus> {
    let train = read_split(&split_path(dir, name, Split::Train), label_last)?;
    let test = read_split(&split_path(dir, name, Split::Test), label_last)?;
    let val_path = split_path(dir, name, Split::Val);
    let val = if val_path.exists() { read_split(&val_path, label_last)? } else { Vec::new() };
    Ok(DomainCorpus {
        name: name.to_string(),
        train,
        val,
        test,
    })
}

/// Domain names found in `dir`, i.e. every `<name>.task.train`, sorted.
pub fn discover_domains(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(name) = entry.file_name().to_str().and_then(|f| f.strip_suffix(".task.train")) {
            names.push(name.to_string());
        }
    }
    names.sort();
    Ok(names)
}

fn format_examples(examples: &[RawExample]) -> String {
    let mut s = String::new();
    for ex in examples {
        let _ = writeln!(s, "{}\t{}", ex.label, ex.tokens.join(" "));
    }
    s
}

/// Writes all three splits (an empty `val` still produces an empty file).
pub fn write_corpus(dir: &Path, corpus: &DomainCorpus) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (split, ex) in [(Split::Train, &corpus.train), (Split::Val, &corpus.val), (Split::Test, &corpus.test)] {
        let path = split_path(dir, &corpus.name, split);
        fs::write(&path, format_examples(ex)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Moves `⌈ratio·n⌉` training examples to `val`, stratified by label.
/// Relative order is preserved in both parts.
pub fn split_val(corpus: &DomainCorpus, ratio: f64, rng: &mut RngStream) -> Result<DomainCorpus> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid(format!("split ratio must lie in [0, 1), got {ratio}")));
    }
    let n = corpus.train.len();
    if n == 0 {
        return Err(Error::invalid(format!("{}: empty training split", corpus.name)));
    }
    if ratio == 0.0 {
        warn!("{}: validation ratio 0, validation split is empty", corpus.name);
        return Ok(corpus.clone());
    }
    let k = (ratio * n as f64).ceil() as usize;
    let mut by_class: [Vec<usize>; 2] = [vec![], vec![]];
    for (i, ex) in corpus.train.iter().enumerate() {
        by_class[ex.label].push(i);
    }
    for c in by_class.iter_mut() {
        rng.shuffle(c);
    }
    // largest-remainder allocation of k over the two classes
    let quota: Vec<f64> = by_class.iter().map(|c| k as f64 * c.len() as f64 / n as f64).collect();
    let mut take: Vec<usize> = quota.iter().map(|q| q.floor() as usize).collect();
    if take[0] + take[1] < k {
        let c = if quota[0].fract() >= quota[1].fract() { 0 } else { 1 };
        take[c] += 1;
    }
    for c in 0..2 {
        let other = 1 - c;
        if take[c] == 0 && !by_class[c].is_empty() && take[other] > 1 {
            take[c] = 1;
            take[other] -= 1;
        }
    }
    let mut in_val = vec![false; n];
    for c in 0..2 {
        let len = by_class[c].len();
        for &i in &by_class[c][len - take[c].min(len)..] {
            in_val[i] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (ex, &v) in corpus.train.iter().zip(&in_val) {
        if v { val.push(ex.clone()) } else { train.push(ex.clone()) }
    }
    Ok(DomainCorpus {
        name: corpus.name.clone(),
        train,
        val,
        test: corpus.test.clone(),
    })
}

/// Token ↔ id map; ids 0 and 1 are PAD and UNK.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pub min_freq: usize,
}

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

impl Vocab {
    /// Builds from an ordered list of regular tokens (ids start at 2).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>, min_freq: usize) -> Result<Self> {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocab {
            tokens: all,
            index,
            min_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied().filter(|&i| i > UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Regular tokens in id order (without PAD/UNK).
    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }

    /// Ids for `tokens`, truncated to `max_len`.
    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        tokens.iter().take(max_len).map(|t| self.id(t)).collect()
    }
}

/// Vocabulary over the training splits only, most frequent first, ties
/// broken lexicographically; tokens seen fewer than `min_freq` times are left
/// out and encode as UNK.
pub fn build_vocab(corpora: &[DomainCorpus], min_freq: usize) -> Result<Vocab> {
    if corpora.is_empty() {
        return Err(Error::invalid("no corpora to build a vocabulary from"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for c in corpora {
        for ex in &c.train {
            for t in &ex.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut items: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, n)| n >= min_freq.max(1) && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocab::from_tokens(items.into_iter().map(|(t, _)| t.to_string()), min_freq)
}

fn encode_split(raw: &[RawExample], vocab: &Vocab, domain: usize, max_len: usize) -> Vec<Example> {
    raw.iter()
        .map(|ex| Example {
            tokens: vocab.encode(&ex.tokens, max_len),
            y_s: ex.label,
            y_d: domain,
        })
        .collect()
}

pub fn encode_corpus(corpus: &DomainCorpus, vocab: &Vocab, domain: usize, max_len: usize) -> EncodedDomain {
    EncodedDomain {
        name: corpus.name.clone(),
        index: domain,
        train: encode_split(&corpus.train, vocab, domain, max_len),
        val: encode_split(&corpus.val, vocab, domain, max_len),
        test: encode_split(&corpus.test, vocab, domain, max_len),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VectorStats {
    /// Share of regular vocabulary tokens that received a vector.
    pub coverage: f64,
    pub duplicates: usize,
}

/// Overwrites embedding rows from a `token v1 v2 ...` text file. Tokens not
/// in the vocabulary are ignored; repeated tokens keep the last line.
pub fn load_vectors(path: &Path, vocab: &Vocab, table: &mut EmbeddingTable) -> Result<VectorStats> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dim = table.dim();
    let mut seen = vec![false; vocab.len()];
    let mut duplicates = 0;
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        if values.len() != dim {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected {dim} values, found {}", values.len()),
            });
        }
        if let Some(id) = vocab.get(token) {
            if seen[id] {
                duplicates += 1;
            }
            seen[id] = true;
            table.weights.row_mut(id).copy_from_slice(&values);
        }
    }
    if duplicates > 0 {
        warn!("{}: {duplicates} duplicate tokens, last occurrence kept", path.display());
    }
    let regular = vocab.len() - 2;
    let covered = seen.iter().filter(|&&s| s).count();
    Ok(VectorStats {
        coverage: if regular == 0 { 0.0 } else { covered as f64 / regular as f64 },
        duplicates,
    })
}

/// Parameters of the synthetic multi-domain corpus.
///
/// Every domain has one marker token and a set of topic words. Sentiment is
/// carried either by shared polarity words (`pos*`/`neg*`) or, with
/// probability `domain_utility[j]`, only by flip words (`fa*`/`fb*`) whose
/// polarity is reversed between even and odd domains.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_domains: usize,
    /// Total ids including PAD and UNK.
    pub vocab_size: usize,
    pub seq_len: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub domain_utility: Vec<f64>,
    /// Probability that an example opens with its domain marker.
    pub marker_rate: f64,
    /// Probability that a filler position holds a topic word of the domain.
    pub topic_rate: f64,
    /// Sentiment-bearing words per example.
    pub polar_words: usize,
}

impl SynthSpec {
    pub fn new(num_domains: usize, domain_utility: Vec<f64>) -> Self {
        SynthSpec {
            num_domains,
            vocab_size: 300,
            seq_len: 16,
            n_train: 800,
            n_val: 200,
            n_test: 200,
            domain_utility,
            marker_rate: 0.5,
            topic_rate: 0.15,
            polar_words: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_domains == 0 || self.domain_utility.len() != self.num_domains {
            return Err(Error::invalid("need one utility value per domain"));
        }
        if self.domain_utility.iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(Error::invalid("domain utility must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.marker_rate) || !(0.0..=1.0).contains(&self.topic_rate) {
            return Err(Error::invalid("rates must lie in [0, 1]"));
        }
        if self.seq_len < self.polar_words + 2 || self.polar_words == 0 {
            return Err(Error::invalid("sequence too short for the polar words"));
        }
        let layout = self.layout();
        if layout.filler == 0 {
            return Err(Error::invalid(format!(
                "vocab_size {} too small for {} domains",
                self.vocab_size, self.num_domains
            )));
        }
        Ok(())
    }

    fn layout(&self) -> SynthLayout {
        let regular = self.vocab_size.saturating_sub(2);
        let polar = (regular / 10).max(2);
        let flip = (regular / 20).max(2);
        let topic = (regular / 4 / self.num_domains.max(1)).max(1);
        let used = self.num_domains + 2 * polar + 2 * flip + topic * self.num_domains;
        SynthLayout {
            polar,
            flip,
            topic,
            filler: regular.saturating_sub(used),
        }
    }
}

struct SynthLayout {
    polar: usize,
    flip: usize,
    topic: usize,
    filler: usize,
}

pub fn domain_name(j: usize) -> String {
    format!("domain{j}")
}

fn synth_example(spec: &SynthSpec, lay: &SynthLayout, j: usize, label: usize, rng: &mut RngStream) -> RawExample {
    let len = spec.seq_len / 2 + rng.below(spec.seq_len - spec.seq_len / 2 + 1);
    let len = len.max(spec.polar_words + 1);
    let mut tokens: Vec<String> = (0..len)
        .map(|_| {
            if rng.bernoulli(spec.topic_rate) {
                format!("t{j}_{}", rng.below(lay.topic))
            } else {
                format!("w{}", rng.below(lay.filler))
            }
        })
        .collect();
    if rng.bernoulli(spec.marker_rate) {
        tokens[0] = format!("m{j}");
    }
    let flip = rng.bernoulli(spec.domain_utility[j]);
    let mut slots: Vec<usize> = (1..len).collect();
    rng.shuffle(&mut slots);
    for &pos in slots.iter().take(spec.polar_words) {
        tokens[pos] = if flip {
            // `fa` reads positive in even domains, negative in odd ones
            let prefix = if (label == 1) == (j % 2 == 0) { "fa" } else { "fb" };
            format!("{prefix}{}", rng.below(lay.flip))
        } else {
            let prefix = if label == 1 { "pos" } else { "neg" };
            format!("{prefix}{}", rng.below(lay.polar))
        };
    }
    RawExample { label, tokens }
}

fn synth_split(spec: &SynthSpec, lay: &SynthLayout, j: usize, n: usize, rng: &mut RngStream) -> Vec<RawExample> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    rng.shuffle(&mut labels);
    labels.into_iter().map(|y| synth_example(spec, lay, j, y, rng)).collect()
}

/// Generates one corpus per domain, each from its own RNG sub-stream.
pub fn gen_synthetic(spec: &SynthSpec, seed: u64) -> Result<Vec<DomainCorpus>> {
    spec.validate()?;
    let lay = spec.layout();
    let root = RngStream::new(seed).derive("synthetic");
    Ok((0..spec.num_domains)
        .map(|j| {
            let mut rng = root.derive_index("domain", j as u64);
            DomainCorpus {
                name: domain_name(j),
                train: synth_split(spec, &lay, j, spec.n_train, &mut rng),
                val: synth_split(spec, &lay, j, spec.n_val, &mut rng),
                test: synth_split(spec, &lay, j, spec.n_test, &mut rng),
            }
        })
        .collect())
}

/// Padded mini-batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Every row padded with PAD to the longest sequence in the batch.
    pub ids: Vec<Vec<usize>>,
    pub labels: Vec<Labels>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Splits `examples` into batches, shuffling first when `rng` is given.
/// The last batch may be short.
pub fn batches(examples: &[Example], batch_size: usize, rng: Option<&mut RngStream>) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(r) = rng {
        r.shuffle(&mut order);
    }
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let width = chunk.iter().map(|&i| examples[i].tokens.len()).max().unwrap_or(0);
            let ids = chunk
                .iter()
                .map(|&i| {
                    let mut row = examples[i].tokens.clone();
                    row.resize(width, PAD_ID);
                    row
                })
                .collect();
            Batch {
                ids,
                labels: chunk.iter().map(|&i| examples[i].labels()).collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_stream;
    use proptest::prelude::*;

    fn raw(label: usize, text: &str) -> RawExample {
        RawExample {
            label,
            tokens: text.split_whitespace().map(String::from).collect(),
        }
    }

    #[test]
    fn parse_lines() {
        let p = Path::new("x");
        let (ex, bad) = parse_examples("1\tgreat camera\n", p, false).unwrap();
        assert_eq!(ex, vec![raw(1, "great camera")]);
        assert_eq!(bad, 0);
        let (ex, _) = parse_examples("great camera\t0\n", p, true).unwrap();
        assert_eq!(ex, vec![raw(0, "great camera")]);

        let mut text = String::new();
        for i in 0..19 {
            text.push_str(&format!("{}\tw{i}\n", i % 2));
        }
        text.push_str("1\t   \n");
        let (ex, bad) = parse_examples(&text, p, false).unwrap();
        assert_eq!((ex.len(), bad), (19, 1));
        text.push_str("2\tbad label\nno tab here\n");
        assert!(parse_examples(&text, p, false).is_err());
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = DomainCorpus {
            name: "books".into(),
            train: vec![raw(1, "a good read"), raw(0, "dull"), raw(1, "loved it")],
            val: vec![raw(0, "meh")],
            test: vec![raw(1, "great")],
        };
        write_corpus(dir.path(), &c).unwrap();
        assert_eq!(load_corpus(dir.path(), "books", false).unwrap(), c);
        assert_eq!(discover_domains(dir.path()).unwrap(), vec!["books".to_string()]);

        fs::remove_file(split_path(dir.path(), "books", Split::Val)).unwrap();
        assert!(load_corpus(dir.path(), "books", false).unwrap().val.is_empty());
        assert!(load_corpus(dir.path(), "dvd", false).is_err());
    }

    fn corpus_of(n: usize, seed: u64) -> DomainCorpus {
        let mut r = rng_stream(seed);
        DomainCorpus {
            name: "c".into(),
            train: (0..n).map(|i| raw(r.below(2), &format!("tok{i}"))).collect(),
            val: vec![],
            test: vec![],
        }
    }

    #[test]
    fn split_val_cases() {
        let c = corpus_of(10, 1);
        let s = split_val(&c, 0.2, &mut rng_stream(3)).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (8, 2));
        assert_eq!(s, split_val(&c, 0.2, &mut rng_stream(3)).unwrap());
        let s0 = split_val(&c, 0.0, &mut rng_stream(3)).unwrap();
        assert!(s0.val.is_empty());
        assert!(split_val(&corpus_of(0, 1), 0.2, &mut rng_stream(0)).is_err());

        // both classes reach val even when one is rare
        let mut c = corpus_of(20, 2);
        for (i, ex) in c.train.iter_mut().enumerate() {
            ex.label = (i == 7) as usize;
        }
        let s = split_val(&c, 0.2, &mut rng_stream(5)).unwrap();
        assert!(s.val.iter().any(|e| e.label == 1) && s.val.iter().any(|e| e.label == 0));
    }

    proptest! {
        #[test]
        fn split_is_deterministic_and_disjoint(n in 1usize..80, seed in any::<u64>()) {
            let c = corpus_of(n, seed);
            let a = split_val(&c, 0.2, &mut rng_stream(seed)).unwrap();
            let b = split_val(&c, 0.2, &mut rng_stream(seed)).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.val.len(), (0.2 * n as f64).ceil() as usize);
            let mut all: Vec<_> = a.train.iter().chain(&a.val).map(|e| e.tokens[0].clone()).collect();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), n);
        }
    }

    #[test]
    fn vocab_cases() {
        let c = DomainCorpus {
            name: "c".into(),
            train: vec![raw(1, "a a b")],
            val: vec![raw(0, "z")],
            test: vec![raw(0, "a q")],
        };
        let v = build_vocab(std::slice::from_ref(&c), 1).unwrap();
        assert_eq!((v.id("a"), v.id("b"), v.len()), (2, 3, 4));
        assert_eq!(v.id("z"), UNK_ID);
        let enc = encode_corpus(&c, &v, 3, 64);
        assert_eq!(enc.test[0].tokens, vec![2, UNK_ID]);
        assert_eq!(enc.test[0].y_d, 3);
        assert_eq!(v.len(), 4);

        let v3 = build_vocab(std::slice::from_ref(&c), 3).unwrap();
        assert_eq!(v3.len(), 2);
        assert_eq!(v3.encode(&c.train[0].tokens, 64), vec![UNK_ID; 3]);
        assert_eq!(v.encode(&c.train[0].tokens, 2), vec![2, 2]);

        let tie = DomainCorpus {
            train: vec![raw(1, "c b a b c")],
            ..c
        };
        let v = build_vocab(&[tie], 1).unwrap();
        assert_eq!(v.regular_tokens(), &["b", "c", "a"]);
    }

    #[test]
    fn vectors_cases() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocab::from_tokens(["good".to_string(), "bad".to_string()], 1).unwrap();
        let mut table = EmbeddingTable::random(&mut rng_stream(1), 4, 2, 0.5).unwrap();
        let before = table.clone();

        let p = dir.path().join("none.txt");
        fs::write(&p, "other 1 2\n").unwrap();
        let s = load_vectors(&p, &v, &mut table).unwrap();
        assert_eq!(s.coverage, 0.0);
        assert_eq!(table, before);

        fs::write(&p, "good 0.1 0.2\ngood 0.3 0.4\n").unwrap();
        let s = load_vectors(&p, &v, &mut table).unwrap();
        assert_eq!(table.weights.row(2), &[0.3, 0.4]);
        assert_eq!(table.weights.row(3), before.weights.row(3));
        assert_eq!((s.coverage, s.duplicates), (0.5, 1));

        fs::write(&p, "good 0.1 0.2\nbad 0.1\n").unwrap();
        match load_vectors(&p, &v, &mut table) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    fn spec(utility: Vec<f64>) -> SynthSpec {
        SynthSpec {
            n_train: 1000,
            ..SynthSpec::new(utility.len(), utility)
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let s = spec(vec![0.0, 0.5, 1.0]);
        let a = gen_synthetic(&s, 9).unwrap();
        assert_eq!(a, gen_synthetic(&s, 9).unwrap());
        assert_ne!(a, gen_synthetic(&s, 10).unwrap());
        for c in &a {
            let pos = c.train.iter().filter(|e| e.label == 1).count() as f64 / c.train.len() as f64;
            assert!((pos - 0.5).abs() <= 0.02);
            assert!(c.train.iter().all(|e| (8..=16).contains(&e.tokens.len())));
        }
        let v = build_vocab(&a, 1).unwrap();
        assert!(v.len() <= s.vocab_size);
    }

    #[test]
    fn zero_utility_is_solvable_without_domain() {
        let a = gen_synthetic(&spec(vec![0.0, 0.0]), 4).unwrap();
        for ex in a.iter().flat_map(|c| c.train.iter().chain(&c.test)) {
            let score: i64 = ex
                .tokens
                .iter()
                .map(|t| (t.starts_with("pos") as i64) - (t.starts_with("neg") as i64))
                .sum();
            assert_eq!(score > 0, ex.label == 1);
        }
    }

    #[test]
    fn full_utility_hides_sentiment_from_polarity_words() {
        let a = gen_synthetic(&spec(vec![1.0, 1.0]), 5).unwrap();
        // counts[word class][label], pooled over an even and an odd domain
        let mut counts = [[0usize; 2]; 2];
        for ex in a.iter().flat_map(|c| &c.train) {
            assert!(!ex.tokens.iter().any(|t| t.starts_with("pos") || t.starts_with("neg")));
            let fa = ex.tokens.iter().any(|t| t.starts_with("fa"));
            counts[fa as usize][ex.label] += 1;
        }
        for row in counts {
            let share = row[1] as f64 / (row[0] + row[1]) as f64;
            assert!((share - 0.5).abs() < 0.03, "{counts:?}");
        }
    }

    #[test]
    fn batching() {
        let exs: Vec<Example> = (0..10)
            .map(|i| Example {
                tokens: vec![2 + i; 1 + i % 3],
                y_s: i % 2,
                y_d: 0,
            })
            .collect();
        let b = batches(&exs, 4, None).unwrap();
        assert_eq!(b.iter().map(Batch::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(b[0].ids[0], vec![2, PAD_ID, PAD_ID]);
        assert_eq!(b[0].ids[1], vec![3, 3, PAD_ID]);
        let s1 = batches(&exs, 4, Some(&mut rng_stream(1))).unwrap();
        assert_eq!(s1, batches(&exs, 4, Some(&mut rng_stream(1))).unwrap());
        assert_ne!(s1, b);
        assert!(batches(&exs, 0, None).is_err());
    }
}
