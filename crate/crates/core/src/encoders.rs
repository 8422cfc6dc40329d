//! Order-aware plot-summary encoding.
//!
//! Each sentence is reduced to one vector by a position-weighted sum of its
//! word embeddings; the sentence vectors are reduced the same way to give the
//! plot embedding. Element `j` (1-based) of a length-`L` sequence is weighted
//! per embedding index `k` (1-based) by
//! `l[j][k] = (1 - j/L) - (k/d) * (1 - 2j/L)`.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor_core::{ops, Graph, Tensor, Var};

/// Position weights `l[j][k]` for a sequence of `len` elements of width `dim`.
pub fn position_weights<T: Scalar>(len: usize, dim: usize) -> Tensor<T> {
    let (l, d) = (len as f64, dim as f64);
    let mut data = Vec::with_capacity(len * dim);
    for j in 1..=len {
        let j = j as f64;
        for k in 1..=dim {
            let k = k as f64;
            data.push(T::of((1.0 - j / l) - (k / d) * (1.0 - 2.0 * j / l)));
        }
    }
    Tensor::new(vec![len, dim], data).expect("len and dim are positive")
}

/// `f = Σ_j l_j ⊙ w_j` over the rows `w_j` of an `L×d` matrix.
pub fn positional_encode<T: Scalar>(elements: &Tensor<T>) -> Result<Tensor<T>> {
    let (len, dim) = elements
        .dims2()
        .map_err(|_| Error::Shape(format!("positional_encode expects L×d, got {:?}", elements.shape())))?;
    let weights = position_weights::<T>(len, dim);
    let mut out = vec![T::zero(); dim];
    for (w_row, e_row) in weights.data().chunks(dim).zip(elements.data().chunks(dim)) {
        for ((o, &w), &e) in out.iter_mut().zip(w_row).zip(e_row) {
            *o += w * e;
        }
    }
    Ok(Tensor::vector(out))
}

/// Splits plot text into sentences of lowercase tokens. Sentences end at
/// `.`, `!` or `?`; remaining punctuation is stripped before splitting on
/// whitespace. Sentences with no tokens are dropped.
pub fn tokenize_plot(text: &str) -> Vec<Vec<String>> {
    text.split(['.', '!', '?'])
        .map(|s| {
            let cleaned: String = s
                .chars()
                .filter(|c| !c.is_ascii_punctuation())
                .flat_map(char::to_lowercase)
                .collect();
            cleaned.split_whitespace().map(str::to_string).collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// Dense token → id map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenIndex {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl TokenIndex {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut index = TokenIndex::default();
        for t in tokens {
            let t = t.into();
            if index.ids.contains_key(&t) {
                return Err(Error::Vocabulary(format!("duplicate token {t:?}")));
            }
            index.ids.insert(t.clone(), index.tokens.len());
            index.tokens.push(t);
        }
        Ok(index)
    }

    /// Collects every distinct token of the given texts, sorted.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut all: Vec<String> = texts.into_iter().flat_map(tokenize_plot).flatten().collect();
        all.sort();
        all.dedup();
        Self::from_tokens(all).expect("deduplicated")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.ids
            .get(token)
            .copied()
            .ok_or_else(|| Error::Vocabulary(format!("unknown token {token:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    Trained,
    Loaded,
}

/// Tokens together with their word-embedding table (`V×d_w`).
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary<T> {
    pub index: TokenIndex,
    pub embeddings: Tensor<T>,
    pub source: EmbeddingSource,
}

impl<T: Scalar> Vocabulary<T> {
    pub fn new(index: TokenIndex, embeddings: Tensor<T>, source: EmbeddingSource) -> Result<Self> {
        let (v, d) = embeddings.dims2()?;
        if v != index.len() || d == 0 {
            return Err(Error::Vocabulary(format!(
                "embedding table {:?} does not fit {} tokens",
                embeddings.shape(),
                index.len()
            )));
        }
        Ok(Vocabulary {
            index,
            embeddings,
            source,
        })
    }

    /// Seeded Gaussian embeddings with standard deviation `1/sqrt(dim)`.
    pub fn seeded(index: TokenIndex, dim: usize, seed: u64) -> Result<Self> {
        if index.is_empty() {
            return Err(Error::Vocabulary("empty vocabulary".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("finite");
        let data = (0..index.len() * dim).map(|_| T::of(normal.sample(&mut rng))).collect();
        let table = Tensor::new(vec![index.len(), dim], data)?;
        Self::new(index, table, EmbeddingSource::Trained)
    }

    /// Parses lines of the form `token v1 v2 ... v_dw`.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let values = parts
                .map(|p| p.parse::<f64>().map(T::of))
                .collect::<std::result::Result<Vec<T>, _>>()
                .map_err(|e| Error::Schema {
                    line: n + 1,
                    message: format!("bad embedding value: {e}"),
                })?;
            match dim {
                None if values.is_empty() => {
                    return Err(Error::Schema {
                        line: n + 1,
                        message: "token has no embedding values".into(),
                    })
                }
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::Schema {
                        line: n + 1,
                        message: format!("expected {d} values, found {}", values.len()),
                    })
                }
                _ => {}
            }
            tokens.push(tok.to_string());
            data.extend(values);
        }
        let dim = dim.ok_or_else(|| Error::Vocabulary("embedding file is empty".into()))?;
        let index = TokenIndex::from_tokens(tokens)?;
        let table = Tensor::new(vec![index.len(), dim], data)?;
        Self::new(index, table, EmbeddingSource::Loaded)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::MissingFile {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_text(&text)
    }

    pub fn dim(&self) -> usize {
        self.embeddings.shape()[1]
    }
}

/// A plot summary as sentences of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotDocument {
    sentences: Vec<Vec<usize>>,
}

impl PlotDocument {
    pub fn new(sentences: Vec<Vec<usize>>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::EmptyInput("plot document"));
        }
        if sentences.iter().any(Vec::is_empty) {
            return Err(Error::EmptyInput("plot sentence"));
        }
        Ok(PlotDocument { sentences })
    }

    pub fn from_text(text: &str, index: &TokenIndex) -> Result<Self> {
        let sentences = tokenize_plot(text)
            .iter()
            .map(|s| s.iter().map(|t| index.id(t)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::new(sentences)
    }

    pub fn sentences(&self) -> &[Vec<usize>] {
        &self.sentences
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match self.sentences.iter().flatten().find(|&&id| id >= vocab_size) {
            Some(id) => Err(Error::Vocabulary(format!(
                "token id {id} outside vocabulary of {vocab_size}"
            ))),
            None => Ok(()),
        }
    }
}

/// Two-level positional encoding of a plot, optionally projected from the
/// word dimension to the model dimension by `proj` (`d×d_w`).
pub fn encode_plot<T: Scalar>(doc: &PlotDocument, vocab: &Vocabulary<T>, proj: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    doc.validate(vocab.index.len())?;
    let dim = vocab.dim();
    let mut sentence_vecs = Vec::with_capacity(doc.sentences.len());
    for s in &doc.sentences {
        let mut rows = Vec::with_capacity(s.len() * dim);
        for &id in s {
            rows.extend_from_slice(vocab.embeddings.row(id));
        }
        let words = Tensor::new(vec![s.len(), dim], rows)?;
        sentence_vecs.extend_from_slice(positional_encode(&words)?.data());
    }
    let sentences = Tensor::new(vec![doc.sentences.len(), dim], sentence_vecs)?;
    let plot = positional_encode(&sentences)?;
    match proj {
        Some(p) => ops::matmul(p, &plot),
        None => Ok(plot),
    }
}

/// Graph version of [`encode_plot`] against an embedding-table variable.
pub fn encode_plot_graph<T: Scalar>(
    graph: &mut Graph<T>,
    doc: &PlotDocument,
    table: Var,
    proj: Option<Var>,
) -> Result<Var> {
    doc.validate(graph.shape(table)[0])?;
    let mut sentence_vars = Vec::with_capacity(doc.sentences.len());
    for s in &doc.sentences {
        let words = graph.gather(table, s)?;
        sentence_vars.push(graph.positional_encode(words)?);
    }
    let stacked = graph.stack_rows(&sentence_vars)?;
    let plot = graph.positional_encode(stacked)?;
    match proj {
        Some(p) => graph.matmul(p, plot),
        None => Ok(plot),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_by_hand() {
        let w1: Tensor<f64> = position_weights(1, 2);
        assert_eq!(w1.data(), &[0.5, 1.0]);
        let w2: Tensor<f64> = position_weights(2, 2);
        assert_eq!(w2.data(), &[0.5, 0.5, 0.5, 1.0]);
        // j = L/2 makes the k term vanish
        let w4: Tensor<f64> = position_weights(4, 5);
        assert!(w4.row(1).iter().all(|&x| x == 0.5));
    }

    #[test]
    fn encode_by_hand() {
        let one = Tensor::<f64>::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(positional_encode(&one).unwrap().data(), &[0.5, 1.0]);
        let two = Tensor::<f64>::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(positional_encode(&two).unwrap().data(), &[0.5, 1.0]);
        let zeros = Tensor::<f64>::zeros(&[3, 4]);
        assert!(positional_encode(&zeros).unwrap().data().iter().all(|&x| x == 0.0));
        assert!(matches!(Tensor::<f64>::from_rows(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn tokenizer_rules() {
        let s = tokenize_plot("The hero, Rises!  A villain falls... Why?");
        assert_eq!(
            s,
            vec![vec!["the", "hero", "rises"], vec!["a", "villain", "falls"], vec!["why"]]
        );
    }

    #[test]
    fn one_sentence_document_uses_outer_weights() {
        let index = TokenIndex::from_tokens(["a", "b"]).unwrap();
        let table = Tensor::<f64>::matrix(2, 2, vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        let vocab = Vocabulary::new(index, table, EmbeddingSource::Loaded).unwrap();
        let doc = PlotDocument::new(vec![vec![0, 1]]).unwrap();
        // inner: rows weighted [.5,.5] and [.5,1] -> [2, 6]; outer L=1 -> [1, 6]
        assert_eq!(encode_plot(&doc, &vocab, None).unwrap().data(), &[1.0, 6.0]);
    }

    #[test]
    fn unknown_tokens_and_ids_are_vocabulary_errors() {
        let index = TokenIndex::from_tokens(["a"]).unwrap();
        assert!(matches!(PlotDocument::from_text("a b.", &index), Err(Error::Vocabulary(_))));
        let vocab = Vocabulary::<f64>::seeded(index, 3, 1).unwrap();
        let doc = PlotDocument::new(vec![vec![0, 4]]).unwrap();
        assert!(matches!(encode_plot(&doc, &vocab, None), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn embedding_file_parsing() {
        let v = Vocabulary::<f64>::parse_text("hero 0.5 1\nvillain -1 2.5\n").unwrap();
        assert_eq!(v.dim(), 2);
        assert_eq!(v.index.id("villain").unwrap(), 1);
        assert_eq!(v.source, EmbeddingSource::Loaded);
        assert!(matches!(
            Vocabulary::<f64>::parse_text("a 1 2\nb 3\n"),
            Err(Error::Schema { line: 2, .. })
        ));
    }
}
