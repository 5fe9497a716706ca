//! Summary rewards: entailment-based faithfulness, semantic area of the
//! sentence embeddings, min-max normalization, and the per-minibatch
//! reward alternation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, pca2, polygon_area, EmbeddingMatrix};
use crate::scalar::Scalar;
use crate::scoring::Scorer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Nli,
    SemanticArea,
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardKind::Nli => "nli",
            RewardKind::SemanticArea => "semantic_area",
        })
    }
}

impl std::str::FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nli" => Ok(RewardKind::Nli),
            "semantic_area" | "area" => Ok(RewardKind::SemanticArea),
            other => Err(Error::InvalidArgument(format!("unknown reward {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub nli: f64,
    pub semantic_area_raw: f64,
    pub semantic_area: f64,
}

/// Round-robin reward choice, one entry per minibatch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardSchedule {
    order: Vec<RewardKind>,
    cursor: u64,
}

impl Default for RewardSchedule {
    fn default() -> Self {
        Self { order: vec![RewardKind::Nli, RewardKind::SemanticArea], cursor: 0 }
    }
}

impl RewardSchedule {
    pub fn new(order: Vec<RewardKind>) -> Result<Self> {
        if order.is_empty() {
            return Err(Error::InvalidArgument("reward schedule needs at least one reward".into()));
        }
        Ok(Self { order, cursor: 0 })
    }

    pub fn order(&self) -> &[RewardKind] {
        &self.order
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    /// Reward for the next minibatch; advances the cursor by one.
    pub fn next_reward(&mut self) -> RewardKind {
        let kind = self.peek();
        self.cursor += 1;
        kind
    }

    pub fn peek(&self) -> RewardKind {
        self.order[(self.cursor % self.order.len() as u64) as usize]
    }
}

/// Mean over summary sentences (rows) of the best entailment probability
/// from any input premise (columns).
pub fn nli_from_table<F: Scalar>(table: &[Vec<F>]) -> Result<F> {
    if table.is_empty() {
        return Err(Error::Precondition("NLI reward needs at least one summary sentence".into()));
    }
    let mut total = F::zero();
    for row in table {
        let best = row
            .iter()
            .copied()
            .reduce(F::max)
            .ok_or_else(|| Error::Precondition("NLI reward needs at least one input sentence".into()))?;
        total = total + best;
    }
    Ok(total / F::from_count(table.len()))
}

/// Faithfulness reward: for each summary sentence the maximum entailment
/// probability over the input premises, averaged over the summary.
pub fn nli_reward<S: Scorer + ?Sized>(summary: &[String], input: &[String], entail: &S) -> Result<f64> {
    if summary.is_empty() || input.is_empty() {
        return Err(Error::Precondition(format!(
            "NLI reward needs a non-empty summary and input (got {} and {} sentences)",
            summary.len(),
            input.len()
        )));
    }
    let pairs: Vec<(String, String)> = summary
        .iter()
        .flat_map(|claim| input.iter().map(move |premise| (premise.clone(), claim.clone())))
        .collect();
    let probs = entail.entail(&pairs)?;
    if probs.len() != pairs.len() {
        return Err(Error::Transport {
            retries: 0,
            message: format!("entailment scorer returned {} probabilities for {} pairs", probs.len(), pairs.len()),
        });
    }
    let table: Vec<Vec<f64>> = probs.chunks(input.len()).map(<[f64]>::to_vec).collect();
    nli_from_table(&table)
}

/// Area of the convex hull of the rows after projecting them onto their
/// own top two principal components. Zero for fewer than three rows.
pub fn semantic_area_from_embeddings<F: Scalar>(m: &EmbeddingMatrix<F>) -> Result<F> {
    if m.rows() < 3 {
        return Ok(F::zero());
    }
    let points = pca2(m)?;
    Ok(polygon_area(&convex_hull(&points)))
}

pub fn semantic_area_raw<S: Scorer + ?Sized>(summary: &[String], embedder: &S) -> Result<f64> {
    if summary.is_empty() {
        return Err(Error::Precondition("semantic area needs at least one summary sentence".into()));
    }
    if summary.len() < 3 {
        return Ok(0.0);
    }
    let vectors = embedder.embed(summary)?;
    semantic_area_from_embeddings(&EmbeddingMatrix::from_rows(&vectors)?)
}

/// `(v - min) / (max - min)`; a zero span maps everything to zero.
pub fn minmax_normalize<F: Scalar>(values: &[F]) -> Vec<F> {
    let Some(first) = values.first().copied() else { return Vec::new() };
    let (lo, hi) = values.iter().fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if span <= F::zero() {
        return vec![F::zero(); values.len()];
    }
    values.iter().map(|&v| ((v - lo) / span).max(F::zero()).min(F::one())).collect()
}

/// Which input sentences act as entailment premises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PremiseSet {
    #[default]
    All,
    RelevantOnly,
}

/// Rewards for a population of summaries, with the areas min-max
/// normalized across that population.
pub fn reward_bundles<S: Scorer + ?Sized, E: Scorer + ?Sized>(
    examples: &[(Vec<String>, Vec<String>)],
    entail: &S,
    embedder: &E,
) -> Result<Vec<RewardBundle>> {
    let mut nli = Vec::with_capacity(examples.len());
    let mut raw = Vec::with_capacity(examples.len());
    for (summary, input) in examples {
        nli.push(nli_reward(summary, input, entail)?);
        raw.push(semantic_area_raw(summary, embedder)?);
    }
    let norm = minmax_normalize(&raw);
    Ok(nli
        .into_iter()
        .zip(raw)
        .zip(norm)
        .map(|((nli, semantic_area_raw), semantic_area)| RewardBundle { nli, semantic_area_raw, semantic_area })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{pair_key, text_hash, ScoreFixture};
    use approx::assert_abs_diff_eq;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn nli_table_examples() {
        let t = vec![vec![0.1, 0.8], vec![0.6, 0.3]];
        assert_abs_diff_eq!(nli_from_table(&t).unwrap(), 0.7, epsilon = 1e-15);
        assert!(nli_from_table::<f64>(&[]).is_err());
        assert!(nli_from_table::<f64>(&[vec![]]).is_err());
    }

    #[test]
    fn nli_identity_premise_contributes_one() {
        let mut f = ScoreFixture::new(2);
        f.entailments.insert(pair_key("a", "a"), 1.0);
        f.entailments.insert(pair_key("b", "a"), 0.2);
        assert_eq!(nli_reward(&s(&["a"]), &s(&["a", "b"]), &f).unwrap(), 1.0);
    }

    #[test]
    fn nli_requires_both_sides() {
        let f = ScoreFixture::new(2);
        assert!(matches!(nli_reward(&[], &s(&["a"]), &f), Err(Error::Precondition(_))));
        assert!(matches!(nli_reward(&s(&["a"]), &[], &f), Err(Error::Precondition(_))));
    }

    fn emb_fixture(rows: &[(&str, Vec<f64>)]) -> ScoreFixture {
        let mut f = ScoreFixture::new(rows[0].1.len());
        for (t, v) in rows {
            f.embeddings.insert(text_hash(t), v.clone());
        }
        f
    }

    #[test]
    fn area_small_summaries() {
        let f = emb_fixture(&[("a", vec![1.0, 0.0, 0.0]), ("b", vec![1.0, 0.0, 0.0]), ("c", vec![1.0, 0.0, 0.0])]);
        assert_eq!(semantic_area_raw(&s(&["a"]), &f).unwrap(), 0.0);
        assert_eq!(semantic_area_raw(&s(&["a", "b", "c"]), &f).unwrap(), 0.0);
    }

    #[test]
    fn area_unit_square_lifted_into_five_dimensions() {
        // Orthonormal pair spanning a plane in R^5, plus an offset.
        let u = [0.6, 0.0, 0.8, 0.0, 0.0];
        let w = [0.0, 0.6, 0.0, 0.0, -0.8];
        let off = [3.0, -1.0, 2.0, 0.5, 7.0];
        let corners = [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)];
        let rows: Vec<(String, Vec<f64>)> = corners
            .iter()
            .enumerate()
            .map(|(i, (a, b))| (format!("s{i}"), (0..5).map(|k| off[k] + a * u[k] + b * w[k]).collect()))
            .collect();
        let f = emb_fixture(&rows.iter().map(|(t, v)| (t.as_str(), v.clone())).collect::<Vec<_>>());
        let texts: Vec<String> = rows.iter().map(|(t, _)| t.clone()).collect();
        assert_abs_diff_eq!(semantic_area_raw(&texts, &f).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[5.0, 5.0]), vec![0.0, 0.0]);
        assert_eq!(minmax_normalize(&[0.0, 1.0]), vec![0.0, 1.0]);
        assert!(minmax_normalize::<f64>(&[]).is_empty());
    }

    #[test]
    fn schedule_round_robin() {
        let mut sch = RewardSchedule::default();
        let got: Vec<_> = (0..4).map(|_| sch.next_reward()).collect();
        use RewardKind::*;
        assert_eq!(got, vec![Nli, SemanticArea, Nli, SemanticArea]);
        assert_eq!(sch.cursor(), 4);

        let mut single = RewardSchedule::new(vec![Nli]).unwrap();
        assert!((0..5).all(|_| single.next_reward() == Nli));
        assert!(RewardSchedule::new(vec![]).is_err());
    }

    #[test]
    fn schedule_survives_serialization() {
        let mut sch = RewardSchedule::default();
        sch.next_reward();
        let json = serde_json::to_string(&sch).unwrap();
        let mut restored: RewardSchedule = serde_json::from_str(&json).unwrap();
        assert_eq!(restored.next_reward(), RewardKind::SemanticArea);
        assert_eq!(restored.next_reward(), RewardKind::Nli);
    }

    #[test]
    fn reward_kind_parsing() {
        assert_eq!("NLI".parse::<RewardKind>().unwrap(), RewardKind::Nli);
        assert_eq!("area".parse::<RewardKind>().unwrap(), RewardKind::SemanticArea);
        assert!("rouge".parse::<RewardKind>().is_err());
    }
}
