//! Description side: tokens, word vectors, the recurrent encoder and the
//! language-to-object classifier.

mod tokenize;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{format_err, Error, Result};
use crate::scene::NUM_CLASSES;
use crate::seed::{rng_for, stream};
use crate::tensor::{gru_sequence, GruWeights, Linear, ParamId, ParamStore, Real, Tape, Tensor, Var};

pub use tokenize::tokenize;

pub const EMBEDDING_DIM: usize = 300;
pub const HIDDEN_DIM: usize = 256;
pub const MAX_TOKENS: usize = 126;
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

/// Dense token index; `<pad>` is 0 and `<unk>` is 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;

    /// Specials first, then the given tokens in sorted order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = tokens.into_iter().filter(|t| *t != PAD && *t != UNK).collect();
        let list = [PAD, UNK].into_iter().chain(set).map(str::to_string).collect();
        Self::from_tokens(list).expect("specials are present")
    }

    /// Takes an explicit index order; the first two entries must be the specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD || tokens[1] != UNK {
            return Err(format_err("vocabulary", "must start with <pad> and <unk>"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(format_err("vocabulary", format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids, truncated to `max_len`.
    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        tokens.iter().take(max_len).map(|t| self.id(t)).collect()
    }

    /// One token per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// `V × dim` word vectors aligned with a [`Vocabulary`].
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub vectors: Tensor<f32>,
    pub frozen: bool,
}

fn random_row<R: Rng>(rng: &mut R, dim: usize) -> impl Iterator<Item = f32> + '_ {
    (0..dim).map(move |_| 0.1 * rng.sample::<f32, _>(StandardNormal))
}

impl EmbeddingTable {
    /// Seeded Gaussian rows scaled by 0.1; the padding row is zero.
    pub fn random(vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        let mut data = Vec::with_capacity(vocab.len() * dim);
        for i in 0..vocab.len() {
            let mut rng = rng_for(seed, stream::EMBEDDING, i as u64);
            if i == Vocabulary::PAD_ID {
                data.extend(std::iter::repeat(0.0).take(dim));
            } else {
                data.extend(random_row(&mut rng, dim));
            }
        }
        EmbeddingTable {
            vectors: Tensor::new(vec![vocab.len(), dim], data).expect("sized above"),
            frozen: true,
        }
    }

    /// Reads a word-vector text file (`word v1 … v_dim` per line). Tokens
    /// absent from the file keep a seeded random row.
    pub fn load_text(path: &Path, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<Self> {
        let mut table = Self::random(vocab, dim, seed);
        let reader = BufReader::new(fs::File::open(path)?);
        let data = table.vectors.data_mut();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split(' ').filter(|s| !s.is_empty());
            let Some(word) = parts.next() else { continue };
            let Some(&id) = vocab.index.get(word) else { continue };
            let values = parts
                .map(|p| p.parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| format_err("word vectors", format!("line {}: {e}", lineno + 1)))?;
            if values.len() != dim {
                return Err(format_err(
                    "word vectors",
                    format!("line {}: {} values, expected {dim}", lineno + 1, values.len()),
                ));
            }
            data[id * dim..(id + 1) * dim].copy_from_slice(&values);
        }
        Ok(table)
    }

    /// Writes every row except the specials in the same text format.
    pub fn write_text(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for id in 2..vocab.len() {
            write!(w, "{}", vocab.token(id))?;
            for v in self.vectors.row(id) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// GRU encoder plus the 18-way classifier over its final state.
#[derive(Clone, Debug)]
pub struct LanguageEncoder {
    pub embedding: ParamId,
    pub gru: GruWeights,
    pub classifier: Linear,
    pub max_tokens: usize,
}

impl LanguageEncoder {
    /// Registers `lang.embedding`, `lang.gru.*` and `lang.cls.*`.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        table: &EmbeddingTable,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let embedding = store.add("lang.embedding", table.vectors.cast())?;
        store.set_trainable(embedding, !table.frozen);
        let gru = GruWeights::new(store, "lang.gru", table.dim(), hidden, rng)?;
        let classifier = Linear::new(store, "lang.cls", hidden, NUM_CLASSES, rng)?;
        Ok(LanguageEncoder {
            embedding,
            gru,
            classifier,
            max_tokens: MAX_TOKENS,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden_dim
    }

    /// Runs the GRU from a zero state over the (truncated) token ids and
    /// returns the final hidden state, shape `[1, hidden]`.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Empty("token list".into()));
        }
        let ids = &ids[..ids.len().min(self.max_tokens)];
        let table = tape.param(store, self.embedding);
        let xs = tape.gather_rows(table, ids)?;
        let h0 = tape.constant(Tensor::zeros(&[1, self.gru.hidden_dim]));
        gru_sequence(tape, store, &self.gru, xs, h0)
    }

    /// 18 class logits, shape `[1, 18]`.
    pub fn classify<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, e: Var) -> Result<Var> {
        self.classifier.forward(tape, store, e)
    }
}
