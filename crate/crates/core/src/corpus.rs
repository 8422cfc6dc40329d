//! Feature sequences, corpus manifests, segment sampling, stratified splits
//! and the seeded synthetic corpus.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoders::TokenIndex;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor_core::{Container, Tensor};

pub const FEATURES_ENTRY: &str = "features";
const NAMED_GENRES: [&str; 5] = ["action", "comedy", "drama", "horror", "romance"];

/// Per-frame feature vectors of one video, `T×F`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<T> {
    pub frames: Tensor<T>,
}

impl<T: Scalar> FeatureSequence<T> {
    pub fn new(frames: Tensor<T>) -> Result<Self> {
        frames.dims2()?;
        Ok(FeatureSequence { frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.shape()[1]
    }

    /// Rows at the given frame indices, as an `L×F` matrix.
    pub fn select(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let f = self.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * f);
        for &i in indices {
            if i >= self.num_frames() {
                return Err(Error::Shape(format!("frame {i} out of range for {} frames", self.num_frames())));
            }
            data.extend_from_slice(self.frames.row(i));
        }
        Tensor::new(vec![indices.len(), f], data)
    }
}

pub fn write_features<T: Scalar>(seq: &FeatureSequence<T>, path: &Path) -> Result<()> {
    let mut c = Container::new();
    c.push(FEATURES_ENTRY, &seq.frames);
    c.write(path)
}

pub fn read_features(path: &Path) -> Result<FeatureSequence<f32>> {
    let c = Container::read(path)?;
    let entry = match c.entries() {
        [e] if e.name == FEATURES_ENTRY => e,
        _ => {
            return Err(Error::Format(format!(
                "{}: feature file must hold exactly one entry named \"features\"",
                path.display()
            )))
        }
    };
    if entry.data.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "{}: features must be rank 2, got shape {:?}",
            path.display(),
            entry.data.shape()
        )));
    }
    FeatureSequence::new(entry.data.to_tensor())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Train,
    Eval,
}

/// Picks one frame from each of `segments` near-equal contiguous spans of
/// `frames` frames: a uniform draw in train mode, the span midpoint in eval
/// mode. With fewer frames than segments the indices are `⌊i·T/L⌋`.
pub fn sample_segments(frames: usize, segments: usize, mode: SampleMode, rng: &mut Rng) -> Vec<usize> {
    let (t, l) = (frames.max(1), segments.max(1));
    if t < l {
        return (0..l).map(|i| i * t / l).collect();
    }
    (0..l)
        .map(|i| {
            let start = i * t / l;
            let len = (i + 1) * t / l - start;
            match mode {
                SampleMode::Eval => start + len / 2,
                SampleMode::Train => start + rng.random_range(0..len),
            }
        })
        .collect()
}

/// One line of a corpus manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub features: String,
    pub plot: String,
    pub genre: String,
    pub rating: f64,
}

/// A validated manifest entry with paths resolved against the manifest
/// directory.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub id: String,
    pub features: PathBuf,
    pub plot: PathBuf,
    pub genre: usize,
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub items: Vec<CorpusItem>,
    /// Sorted distinct genre labels; `CorpusItem::genre` indexes this.
    pub genres: Vec<String>,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Manifest> {
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Schema {
            line: n + 1,
            message: e.to_string(),
        })?;
        if !(1.0..=10.0).contains(&rec.rating) {
            return Err(Error::Range(format!(
                "line {}: rating {} outside [1, 10]",
                n + 1,
                rec.rating
            )));
        }
        records.push(rec);
    }
    let mut genres: Vec<String> = records.iter().map(|r| r.genre.clone()).collect();
    genres.sort();
    genres.dedup();
    let items = records
        .iter()
        .map(|r| CorpusItem {
            id: r.id.clone(),
            features: base.join(&r.features),
            plot: base.join(&r.plot),
            genre: genres.binary_search(&r.genre).expect("collected above"),
            rating: r.rating,
        })
        .collect();
    Ok(Manifest { records, items, genres })
}

/// Reads and validates a JSON-lines manifest; every referenced file must exist.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::MissingFile {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let manifest = parse_manifest(&text, base)?;
    for item in &manifest.items {
        for p in [&item.features, &item.plot] {
            if !p.is_file() {
                return Err(Error::MissingFile {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "referenced by manifest"),
                });
            }
        }
    }
    Ok(manifest)
}

pub fn manifest_to_string(records: &[ManifestRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(records: &[ManifestRecord], path: &Path) -> Result<()> {
    std::fs::write(path, manifest_to_string(records)?)?;
    Ok(())
}

/// Item indices of a train/test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded split stratified by label: each class contributes
/// `round(fraction · n)` items (at least one on each side) to training.
pub fn split_train_test(labels: &[usize], fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    if labels.len() < 2 {
        return Err(Error::Stratification(format!("need at least 2 items, got {}", labels.len())));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut rng = Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut members) in by_class {
        if members.len() < 2 {
            return Err(Error::Stratification(format!(
                "class {class} has {} item(s); stratification needs at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let k = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok(Split { train, test })
}

/// Parameters of the synthetic corpus.
///
/// Items get a latent topic `z ∈ [0,1]^K`. Frames carry `z` through a fixed
/// linear map, a genre offset that lives in the same topic subspace (so
/// time-averaged features identify genre only approximately), and a
/// genre-specific low-frequency oscillation that identifies genre exactly but
/// averages out over time. Plots mix genre words with words naming the
/// quantized level of each topic coordinate. Ratings follow `‖z‖`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_items: usize,
    pub num_genres: usize,
    pub frames_per_item: usize,
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub sentences_per_plot: usize,
    pub words_per_sentence: usize,
    pub template_noise: f64,
    pub seed: u64,
    /// Dimension `K` of the per-item latent topic.
    pub topic_dim: usize,
    /// Quantization levels per topic coordinate in plot text.
    pub topic_levels: usize,
    /// Size of the genre offset inside the topic subspace.
    pub genre_shift: f64,
    /// Amplitude of the genre oscillation.
    pub modulation: f64,
    /// Snap each topic coordinate to its word level, so the plot pins the
    /// topic exactly.
    pub quantize_topics: bool,
    /// Shuffle word order inside each sentence.
    pub shuffle_words: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_items: 250,
            num_genres: 5,
            frames_per_item: 64,
            feature_dim: 64,
            vocab_size: 60,
            sentences_per_plot: 4,
            words_per_sentence: 12,
            template_noise: 0.1,
            seed: 2018,
            topic_dim: 8,
            topic_levels: 2,
            genre_shift: 2.0,
            modulation: 1.0,
            quantize_topics: true,
            shuffle_words: false,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_items", self.num_items),
            ("num_genres", self.num_genres),
            ("frames_per_item", self.frames_per_item),
            ("feature_dim", self.feature_dim),
            ("vocab_size", self.vocab_size),
            ("sentences_per_plot", self.sentences_per_plot),
            ("words_per_sentence", self.words_per_sentence),
            ("topic_dim", self.topic_dim),
            ("topic_levels", self.topic_levels),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synthetic spec: {name} must be positive")));
        }
        for (name, v) in [
            ("template_noise", self.template_noise),
            ("genre_shift", self.genre_shift),
            ("modulation", self.modulation),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("synthetic spec: {name} must be finite and non-negative")));
            }
        }
        let topic_words = self.topic_dim * self.topic_levels;
        if self.vocab_size < topic_words + self.num_genres {
            return Err(Error::Config(format!(
                "synthetic spec: vocab_size {} too small for {topic_words} topic words plus one word per genre",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn genre_names(&self) -> Vec<String> {
        if self.num_genres <= NAMED_GENRES.len() {
            NAMED_GENRES[..self.num_genres].iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.num_genres).map(|g| format!("genre{g}")).collect()
        }
    }
}

/// In-memory synthetic item, before it is written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticItem {
    pub id: String,
    pub genre: usize,
    pub topic: Vec<f64>,
    pub rating: f64,
    pub frames: Tensor<f32>,
    pub plot_text: String,
}

/// Corpus-level templates shared by all items.
struct Templates {
    base: Vec<f64>,
    /// `F×K`, row-major.
    topic_map: Vec<f64>,
    genre_centers: Vec<Vec<f64>>,
    wave: [Vec<f64>; 2],
    phases: Vec<f64>,
    genre_words: Vec<Vec<String>>,
    genre_word_weights: Vec<Vec<f64>>,
}

fn gaussian_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn topic_word(k: usize, level: usize) -> String {
    format!("t{k}v{level}")
}

fn draw_weighted(rng: &mut Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Generates the corpus in memory; a pure function of `spec`.
pub fn synthesize(spec: &SyntheticSpec) -> Result<(Vec<SyntheticItem>, Vec<String>)> {
    spec.validate()?;
    let mut rng = Rng::seed_from_u64(spec.seed);
    let (f, k, g_count) = (spec.feature_dim, spec.topic_dim, spec.num_genres);
    let names = spec.genre_names();

    let base = gaussian_vec(&mut rng, f);
    let topic_map = gaussian_vec(&mut rng, f * k);
    let genre_centers = (0..g_count)
        .map(|_| {
            let c = gaussian_vec(&mut rng, k);
            let n = c.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            c.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let wave = [gaussian_vec(&mut rng, f), gaussian_vec(&mut rng, f)];
    let phases = (0..g_count).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    let free_words = spec.vocab_size - k * spec.topic_levels;
    let mut genre_words = vec![Vec::new(); g_count];
    for w in 0..free_words {
        let g = w % g_count;
        let word = format!("{}{}", names[g], genre_words[g].len());
        genre_words[g].push(word);
    }
    let log_normal = Normal::new(0.0, 0.5).expect("finite");
    let genre_word_weights = genre_words
        .iter()
        .map(|ws| ws.iter().map(|_| { let x: f64 = log_normal.sample(&mut rng); x.exp() }).collect())
        .collect();
    let tpl = Templates {
        base,
        topic_map,
        genre_centers,
        wave,
        phases,
        genre_words,
        genre_word_weights,
    };

    let noise = Normal::new(0.0, 1.0).expect("finite");
    let mut items = Vec::with_capacity(spec.num_items);
    for i in 0..spec.num_items {
        let genre = i % g_count;
        let topic: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let topic: Vec<f64> = if spec.quantize_topics {
            topic.iter().map(|&z| quantize(z, spec.topic_levels)).collect()
        } else {
            topic
        };
        // L1 norm: topics are non-negative, so this is their mean
        let norm = topic.iter().sum::<f64>() / k as f64;
        let jitter: f64 = noise.sample(&mut rng);
        let raw = 1.0 + 8.0 * (norm + 0.01 * jitter).clamp(0.0, 1.0);
        let rating = (raw * 10.0).round() / 10.0;

        let shifted: Vec<f64> = topic
            .iter()
            .zip(&tpl.genre_centers[genre])
            .map(|(z, c)| z + spec.genre_shift * c)
            .collect();
        let mean: Vec<f64> = (0..f)
            .map(|j| {
                tpl.base[j]
                    + (0..k)
                        .map(|q| tpl.topic_map[j * k + q] * shifted[q])
                        .sum::<f64>()
            })
            .collect();
        let t_len = spec.frames_per_item;
        let freq = (genre + 1) as f64;
        let mut frames = Vec::with_capacity(t_len * f);
        for t in 0..t_len {
            let angle = 2.0 * PI * freq * t as f64 / t_len as f64 + tpl.phases[genre];
            let (s, c) = angle.sin_cos();
            for j in 0..f {
                let eps: f64 = noise.sample(&mut rng);
                let v = mean[j]
                    + spec.modulation * (s * tpl.wave[0][j] + c * tpl.wave[1][j])
                    + spec.template_noise * eps;
                frames.push(v as f32);
            }
        }
        let frames = Tensor::new(vec![t_len, f], frames)?;

        let plot_text = synth_plot(spec, &tpl, genre, &topic, &mut rng);
        items.push(SyntheticItem {
            id: format!("item{i:04}"),
            genre,
            topic,
            rating,
            frames,
            plot_text,
        });
    }
    Ok((items, names))
}

fn topic_level(z: f64, levels: usize) -> usize {
    ((z * levels as f64) as usize).min(levels - 1)
}

fn quantize(z: f64, levels: usize) -> f64 {
    if levels == 1 {
        0.5
    } else {
        topic_level(z, levels) as f64 / (levels - 1) as f64
    }
}

fn synth_plot(spec: &SyntheticSpec, tpl: &Templates, genre: usize, topic: &[f64], rng: &mut Rng) -> String {
    let k = spec.topic_dim;
    let w = spec.words_per_sentence;
    let per_sentence = k.min(w);
    let mut text = String::new();
    for s in 0..spec.sentences_per_plot {
        let mut words: Vec<String> = (0..w)
            .map(|slot| {
                if slot < per_sentence {
                    let dim = (s * per_sentence + slot) % k;
                    let level = topic_level(topic[dim], spec.topic_levels);
                    topic_word(dim, level)
                } else {
                    // 10% of genre words come from some other genre
                    let g = if rng.random::<f64>() < 0.1 {
                        rng.random_range(0..spec.num_genres)
                    } else {
                        genre
                    };
                    let pick = draw_weighted(rng, &tpl.genre_word_weights[g]);
                    tpl.genre_words[g][pick].clone()
                }
            })
            .collect();
        if spec.shuffle_words {
            words.shuffle(rng);
        }
        if s > 0 {
            text.push(' ');
        }
        let _ = write!(text, "{}.", words.join(" "));
    }
    text.push('\n');
    text
}

/// Writes the synthetic corpus under `out_dir` (feature files, plot texts and
/// `manifest.jsonl`) and returns the manifest path.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<PathBuf> {
    let (items, names) = synthesize(spec)?;
    std::fs::create_dir_all(out_dir.join("features"))?;
    std::fs::create_dir_all(out_dir.join("plots"))?;
    let mut records = Vec::with_capacity(items.len());
    for item in &items {
        let feat_rel = format!("features/{}.vsnt", item.id);
        let plot_rel = format!("plots/{}.txt", item.id);
        write_features(&FeatureSequence::new(item.frames.clone())?, &out_dir.join(&feat_rel))?;
        std::fs::write(out_dir.join(&plot_rel), &item.plot_text)?;
        records.push(ManifestRecord {
            id: item.id.clone(),
            features: feat_rel,
            plot: plot_rel,
            genre: names[item.genre].clone(),
            rating: item.rating,
        });
    }
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&records, &manifest)?;
    Ok(manifest)
}

/// A corpus item with its features and plot text in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedItem {
    pub id: String,
    pub features: FeatureSequence<f32>,
    pub plot_text: String,
    pub genre: usize,
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub items: Vec<LoadedItem>,
    pub genres: Vec<String>,
}

impl Corpus {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = load_manifest(manifest_path)?;
        let mut items = Vec::with_capacity(manifest.items.len());
        let mut feature_dim = None;
        for item in &manifest.items {
            let features = read_features(&item.features)?;
            match feature_dim {
                None => feature_dim = Some(features.feature_dim()),
                Some(f) if f != features.feature_dim() => {
                    return Err(Error::Shape(format!(
                        "{}: feature dimension {} differs from the corpus dimension {f}",
                        item.features.display(),
                        features.feature_dim()
                    )))
                }
                _ => {}
            }
            let plot_text = std::fs::read_to_string(&item.plot).map_err(|source| Error::MissingFile {
                path: item.plot.clone(),
                source,
            })?;
            items.push(LoadedItem {
                id: item.id.clone(),
                features,
                plot_text,
                genre: item.genre,
                rating: item.rating,
            });
        }
        Ok(Corpus {
            items,
            genres: manifest.genres,
        })
    }

    /// Builds the corpus straight from the generator, skipping the files.
    pub fn synthetic(spec: &SyntheticSpec) -> Result<Self> {
        let (items, names) = synthesize(spec)?;
        let items = items
            .into_iter()
            .map(|it| {
                Ok(LoadedItem {
                    id: it.id,
                    features: FeatureSequence::new(it.frames)?,
                    plot_text: it.plot_text,
                    genre: it.genre,
                    rating: it.rating,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        // manifest loading sorts genre labels; keep the same convention
        let mut sorted = names.clone();
        sorted.sort();
        let remap: Vec<usize> = names.iter().map(|n| sorted.binary_search(n).expect("same set")).collect();
        let items = items
            .into_iter()
            .map(|mut it| {
                it.genre = remap[it.genre];
                it
            })
            .collect();
        Ok(Corpus { items, genres: sorted })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.items.first().map(|i| i.features.feature_dim())
    }

    pub fn genre_labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.genre).collect()
    }

    pub fn ratings(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.rating).collect()
    }

    /// Every token that appears in any plot.
    pub fn token_index(&self) -> TokenIndex {
        TokenIndex::build(self.items.iter().map(|i| i.plot_text.as_str()))
    }

    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            genres: self.genres.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> Rng {
        Rng::seed_from_u64(0)
    }

    #[test]
    fn eval_sampling_rules() {
        assert_eq!(sample_segments(10, 5, SampleMode::Eval, &mut rng()), vec![1, 3, 5, 7, 9]);
        assert_eq!(sample_segments(4, 4, SampleMode::Eval, &mut rng()), vec![0, 1, 2, 3]);
        assert_eq!(sample_segments(3, 5, SampleMode::Eval, &mut rng()), vec![0, 0, 1, 1, 2]);
    }

    #[test]
    fn train_sampling_stays_in_segment() {
        let mut r = rng();
        for _ in 0..50 {
            let idx = sample_segments(37, 8, SampleMode::Train, &mut r);
            for (i, &x) in idx.iter().enumerate() {
                assert!(x >= i * 37 / 8 && x < (i + 1) * 37 / 8);
            }
        }
    }

    #[test]
    fn manifest_errors() {
        let base = Path::new(".");
        let good = r#"{"id":"a","features":"f.vsnt","plot":"p.txt","genre":"drama","rating":7.5}"#;
        let missing = r#"{"id":"b","features":"f.vsnt","plot":"p.txt","rating":7.5}"#;
        let high = r#"{"id":"c","features":"f.vsnt","plot":"p.txt","genre":"drama","rating":11.0}"#;
        assert_eq!(parse_manifest(&format!("{good}\n{good}\n{good}\n"), base).unwrap().items.len(), 3);
        match parse_manifest(&format!("{good}\n{missing}\n"), base) {
            Err(Error::Schema { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("genre"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
        assert!(matches!(parse_manifest(high, base), Err(Error::Range(_))));
    }

    #[test]
    fn split_sizes() {
        let labels: Vec<usize> = (0..500).map(|i| i % 5).collect();
        let s = split_train_test(&labels, 0.8, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (400, 100));
        for g in 0..5 {
            assert_eq!(s.train.iter().filter(|&&i| labels[i] == g).count(), 80);
            assert_eq!(s.test.iter().filter(|&&i| labels[i] == g).count(), 20);
        }
        assert_eq!(s, split_train_test(&labels, 0.8, 3).unwrap());
        assert!(matches!(
            split_train_test(&[0, 0, 1], 0.8, 3),
            Err(Error::Stratification(_))
        ));
    }

    #[test]
    fn zero_noise_items_share_genre_template() {
        let spec = SyntheticSpec {
            num_items: 10,
            template_noise: 0.0,
            ..SyntheticSpec::default()
        };
        let (items, _) = synthesize(&spec).unwrap();
        // item 0 and item 5 share genre 0; their frame difference must lie in
        // the topic component, which is constant over time
        let (a, b) = (&items[0].frames, &items[5].frames);
        let f = spec.feature_dim;
        let diff0: Vec<f32> = (0..f).map(|j| a.get2(0, j) - b.get2(0, j)).collect();
        for t in 1..spec.frames_per_item {
            for j in 0..f {
                assert!((a.get2(t, j) - b.get2(t, j) - diff0[j]).abs() < 1e-4);
            }
        }
    }
}
