//! Uncertainty estimators. Higher values always mean more uncertain.
//!
//! Probability-based aggregators (Confidence, Entropy, Semantic Entropy,
//! SentSAR) are parameterized by a [`Scorer`]; the consistency baselines work
//! on generation texts alone.

use std::fmt;

use ndarray::Array2;

use crate::data::{QuestionSample, MIN_PROB};
use crate::error::{Error, Result};
use crate::numerics::{rouge_l_f, symmetric_eigen};
use crate::oracle::{EquivalenceOracle, SimilarityOracle};
use crate::scoring::{Score, Scorer};

/// Default SentSAR temperature.
pub const DEFAULT_SENTSAR_TEMPERATURE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UeMethod {
    Confidence,
    Entropy,
    SemanticEntropy,
    SentSar,
    LexicalSimilarity,
    NumSemanticGroups,
    Degree,
    Eccentricity,
}

impl UeMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            UeMethod::Confidence => "confidence",
            UeMethod::Entropy => "entropy",
            UeMethod::SemanticEntropy => "se",
            UeMethod::SentSar => "sentsar",
            UeMethod::LexicalSimilarity => "lexsim",
            UeMethod::NumSemanticGroups => "num_sets",
            UeMethod::Degree => "degree",
            UeMethod::Eccentricity => "eccentricity",
        }
    }
}

impl fmt::Display for UeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeScore {
    pub value: f64,
    pub method: UeMethod,
}

impl UeScore {
    fn new(value: f64, method: UeMethod) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidInput(format!("{method} produced non-finite value {value}")));
        }
        Ok(Self { value, method })
    }

    pub fn higher_means_more_uncertain(&self) -> bool {
        true
    }
}

/// A partition of generation indices into disjoint non-empty groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    clusters: Vec<Vec<usize>>,
}

impl Clustering {
    pub fn new(clusters: Vec<Vec<usize>>) -> Result<Self> {
        if clusters.is_empty() || clusters.iter().any(Vec::is_empty) {
            return Err(Error::InvalidInput("clustering needs non-empty groups".into()));
        }
        let mut all: Vec<usize> = clusters.iter().flatten().copied().collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("clusters overlap".into()));
        }
        Ok(Self { clusters })
    }

    pub fn singletons(indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| vec![i]).collect())
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

/// Symmetric pairwise similarity with unit diagonal, entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(Array2<f64>);

impl SimilarityMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let n = entries.nrows();
        if n != entries.ncols() || n == 0 {
            return Err(Error::InvalidInput("similarity matrix must be square and non-empty".into()));
        }
        for i in 0..n {
            if (entries[[i, i]] - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                let w = entries[[i, j]];
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::InvalidInput(format!("entry ({i}, {j}) = {w} outside [0, 1]")));
                }
                if (w - entries[[j, i]]).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!("entry ({i}, {j}) breaks symmetry")));
                }
            }
        }
        Ok(Self(entries))
    }

    /// Pairwise similarity of texts, symmetrized by averaging both directions.
    pub fn from_texts(texts: &[&str], sim: &dyn SimilarityOracle) -> Result<Self> {
        let n = texts.len();
        let mut w = Array2::<f64>::eye(n);
        for i in 0..n {
            for j in (i + 1)..n {
                let s = 0.5 * (sim.similarity(texts[i], texts[j])? + sim.similarity(texts[j], texts[i])?);
                let s = s.clamp(0.0, 1.0);
                w[[i, j]] = s;
                w[[j, i]] = s;
            }
        }
        Self::new(w)
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }
}

/// Scores of the given generations.
pub fn scores_for(sample: &QuestionSample, scorer: &dyn Scorer, indices: &[usize]) -> Result<Vec<Score>> {
    indices.iter().map(|&i| scorer.score(sample, i)).collect()
}

fn selected(sample: &QuestionSample, include_most_likely: bool) -> Result<Vec<usize>> {
    let idx = sample.sampled_indices(include_most_likely);
    if idx.is_empty() {
        return Err(Error::InvalidInput(format!("sample {} has no sampled generations", sample.id)));
    }
    Ok(idx)
}

/// Negative score of the most-likely generation.
pub fn confidence(sample: &QuestionSample, scorer: &dyn Scorer) -> Result<UeScore> {
    let i = sample
        .most_likely_index()
        .ok_or_else(|| Error::NoMostLikely(sample.id.clone()))?;
    UeScore::new(-scorer.score(sample, i)?.value(), UeMethod::Confidence)
}

/// Monte-Carlo entropy: `-(1/B) sum_b ln score_b`.
pub fn entropy_from_scores(scores: &[Score]) -> Result<UeScore> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("entropy over zero generations".into()));
    }
    let mean_log = scores.iter().map(Score::log_value).sum::<f64>() / scores.len() as f64;
    UeScore::new(-mean_log, UeMethod::Entropy)
}

pub fn entropy(sample: &QuestionSample, scorer: &dyn Scorer, include_most_likely: bool) -> Result<UeScore> {
    let idx = selected(sample, include_most_likely)?;
    entropy_from_scores(&scores_for(sample, scorer, &idx)?)
}

/// Greedy clustering over `indices` in order: each generation joins the first
/// cluster whose representative (lowest-index member) is equivalent to it in
/// both directions, otherwise it opens a new cluster.
pub fn cluster_indices(sample: &QuestionSample, indices: &[usize], equiv: &dyn EquivalenceOracle) -> Result<Clustering> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("nothing to cluster".into()));
    }
    let gens = sample.generations();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &j in indices {
        let text = &gens
            .get(j)
            .ok_or_else(|| Error::InvalidInput(format!("generation {j} out of range")))?
            .text;
        let mut home = None;
        for (c, members) in clusters.iter().enumerate() {
            if equiv.equivalent(&gens[members[0]].text, text)? {
                home = Some(c);
                break;
            }
        }
        match home {
            Some(c) => clusters[c].push(j),
            None => clusters.push(vec![j]),
        }
    }
    Clustering::new(clusters)
}

/// Clusters every generation of the sample.
pub fn cluster_semantically(sample: &QuestionSample, equiv: &dyn EquivalenceOracle) -> Result<Clustering> {
    let all: Vec<usize> = (0..sample.generations().len()).collect();
    cluster_indices(sample, &all, equiv)
}

/// `-(1/|C|) sum_c ln P(c)` with `P(c)` the plain sum of member scores.
pub fn semantic_entropy_from_scores(scores: &[(usize, Score)], clustering: &Clustering) -> Result<UeScore> {
    let mut total = 0.0;
    for cluster in clustering.clusters() {
        let mut mass = 0.0;
        for member in cluster {
            let s = scores
                .iter()
                .find(|(i, _)| i == member)
                .ok_or_else(|| Error::InvalidInput(format!("no score for clustered generation {member}")))?;
            mass += s.1.value();
        }
        total += mass.max(MIN_PROB).ln();
    }
    UeScore::new(-total / clustering.len() as f64, UeMethod::SemanticEntropy)
}

pub fn semantic_entropy(sample: &QuestionSample, scorer: &dyn Scorer, clustering: &Clustering) -> Result<UeScore> {
    let scored = clustering
        .clusters()
        .iter()
        .flatten()
        .map(|&i| scorer.score(sample, i).map(|s| (i, s)))
        .collect::<Result<Vec<_>>>()?;
    semantic_entropy_from_scores(&scored, clustering)
}

/// SentSAR from precomputed scores and texts.
///
/// `E_b = s_b + (1/t) sum_{j != b} sim(text_b, text_j) s_j`, then
/// `-(1/B) sum_b ln E_b`.
pub fn sentsar_from_scores(
    scores: &[Score],
    texts: &[&str],
    sim: &dyn SimilarityOracle,
    temperature: f64,
) -> Result<UeScore> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidInput(format!("temperature {temperature} must be positive")));
    }
    if scores.is_empty() || scores.len() != texts.len() {
        return Err(Error::InvalidInput("sentsar needs one text per score".into()));
    }
    let b = scores.len();
    let mut sum_log = 0.0;
    for i in 0..b {
        let mut neighbours = 0.0;
        for j in 0..b {
            if j != i {
                neighbours += sim.similarity(texts[i], texts[j])? * scores[j].value();
            }
        }
        let enhanced = scores[i].value() + neighbours / temperature;
        sum_log += enhanced.max(MIN_PROB).ln();
    }
    UeScore::new(-sum_log / b as f64, UeMethod::SentSar)
}

pub fn sentsar(
    sample: &QuestionSample,
    scorer: &dyn Scorer,
    sim: &dyn SimilarityOracle,
    temperature: f64,
    include_most_likely: bool,
) -> Result<UeScore> {
    let idx = selected(sample, include_most_likely)?;
    let scores = scores_for(sample, scorer, &idx)?;
    let texts: Vec<&str> = idx.iter().map(|&i| sample.generations()[i].text.as_str()).collect();
    sentsar_from_scores(&scores, &texts, sim, temperature)
}

/// Negative mean Rouge-L F over unordered pairs of sampled generations.
pub fn lexical_similarity(sample: &QuestionSample, include_most_likely: bool) -> Result<UeScore> {
    let idx = selected(sample, include_most_likely)?;
    if idx.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "lexical similarity needs at least 2 generations, sample {} has {}",
            sample.id,
            idx.len()
        )));
    }
    let gens = sample.generations();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            total += rouge_l_f(&gens[i].text, &gens[j].text);
            pairs += 1;
        }
    }
    UeScore::new(-(total / pairs as f64), UeMethod::LexicalSimilarity)
}

pub fn num_semantic_groups(clustering: &Clustering) -> UeScore {
    UeScore {
        value: clustering.len() as f64,
        method: UeMethod::NumSemanticGroups,
    }
}

/// `sum_i (B - d_i) / B^2` with `d_i` the row sums of `W`.
pub fn degree_uncertainty(w: &SimilarityMatrix) -> UeScore {
    let b = w.size() as f64;
    let value = w
        .entries()
        .rows()
        .into_iter()
        .map(|row| b - row.sum())
        .sum::<f64>()
        / (b * b);
    UeScore {
        value,
        method: UeMethod::Degree,
    }
}

/// Spread of the generations in the spectral embedding of the normalized
/// graph Laplacian `I - D^-1/2 W D^-1/2`, using the eigenvectors of the
/// `num_eigvecs` smallest eigenvalues.
pub fn eccentricity_uncertainty(w: &SimilarityMatrix, num_eigvecs: usize) -> Result<UeScore> {
    let n = w.size();
    if num_eigvecs == 0 || num_eigvecs > n {
        return Err(Error::InvalidInput(format!(
            "num_eigvecs {num_eigvecs} must be in 1..={n}"
        )));
    }
    let entries = w.entries();
    let inv_sqrt_deg: Vec<f64> = entries
        .rows()
        .into_iter()
        .map(|row| {
            let d = row.sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut lap = Array2::<f64>::eye(n);
    for i in 0..n {
        for j in 0..n {
            lap[[i, j]] -= inv_sqrt_deg[i] * entries[[i, j]] * inv_sqrt_deg[j];
        }
    }
    let eig = symmetric_eigen(&lap)?;
    let mut total = 0.0;
    for k in 0..num_eigvecs {
        let v = eig.eigenvectors.column(k);
        let mean = v.sum() / n as f64;
        total += v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    }
    UeScore::new(total.sqrt(), UeMethod::Eccentricity)
}
