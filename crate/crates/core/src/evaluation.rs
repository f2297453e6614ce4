//! Candidate ranking, recall/MRR metrics and the latency comparison between
//! knowledge-free scoring and the full retrieval pipeline.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{access_counts, ExtractionConfig, KnowledgeBase, SubgraphSpec};
use crate::gnn::GnnModel;
use crate::numerics::{kernels, sigmoid, Tensor};
use crate::sample::MrsSample;
use crate::text::{trans_a, ScorerSnapshot};
use crate::training::{SelectionModel, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub sample: usize,
    pub scores: Vec<f64>,
    /// 1-based rank of the true response.
    pub rank: usize,
}

/// Ranks `scores` descending; equal scores rank the lower index first.
pub fn rank_from_scores(sample: usize, scores: Vec<f64>, positive: usize) -> Result<RankResult> {
    if positive >= scores.len() {
        return Err(Error::Metric(format!("positive index {positive} of {} candidates", scores.len())));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Metric(format!("non-finite score {bad}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let rank = order.iter().position(|&i| i == positive).expect("positive present") + 1;
    Ok(RankResult { sample, scores, rank })
}

fn positive_of(sample: &MrsSample) -> Result<usize> {
    sample.validate(true)?;
    Ok(sample.positive_index().expect("validated"))
}

/// Scores every candidate with the encoder alone and fails if any knowledge
/// graph access happened meanwhile.
pub fn rank_candidates(model: &SelectionModel, sample: &MrsSample, sample_index: usize) -> Result<RankResult> {
    let before = access_counts().total();
    let positive = positive_of(sample)?;
    let scores = (0..sample.len()).map(|c| model.score(sample, c)).collect::<Result<Vec<_>>>()?;
    let touched = access_counts().total() - before;
    if touched != 0 {
        return Err(Error::KnowledgeAccess(touched));
    }
    rank_from_scores(sample_index, scores, positive)
}

/// Scores with precomputed subgraphs, one per candidate.
pub fn rank_with_specs(model: &SelectionModel, sample: &MrsSample, sample_index: usize, specs: &[SubgraphSpec]) -> Result<RankResult> {
    let positive = positive_of(sample)?;
    if specs.len() != sample.len() {
        return Err(Error::Sample(format!("{} subgraphs for {} candidates", specs.len(), sample.len())));
    }
    let scores = (0..sample.len())
        .map(|c| model.score_with(sample, sample_index, c, Some(&specs[c])))
        .collect::<Result<Vec<_>>>()?;
    rank_from_scores(sample_index, scores, positive)
}

/// Retrieves subgraphs on the fly and scores with them.
pub fn rank_online(
    model: &SelectionModel,
    kb: &KnowledgeBase,
    snapshot: &ScorerSnapshot,
    config: &ExtractionConfig,
    sample: &MrsSample,
    sample_index: usize,
) -> Result<RankResult> {
    let specs = (0..sample.len())
        .map(|c| kb.build_subgraph(snapshot, sample, sample_index, c, config))
        .collect::<Result<Vec<_>>>()?;
    rank_with_specs(model, sample, sample_index, &specs)
}

/// Fraction of results whose true response ranks within the top `k` of `n`.
pub fn r_at_k(results: &[RankResult], n: usize, k: usize) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Metric("no results".into()));
    }
    if k == 0 || k > n {
        return Err(Error::Metric(format!("k={k} outside 1..={n}")));
    }
    if let Some(r) = results.iter().find(|r| r.scores.len() != n) {
        return Err(Error::Metric(format!("sample {} has {} candidates, expected {n}", r.sample, r.scores.len())));
    }
    let hits = results.iter().filter(|r| r.rank <= k).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Mean reciprocal rank.
pub fn mrr(results: &[RankResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Metric("no results".into()));
    }
    Ok(results.iter().map(|r| 1.0 / r.rank as f64).sum::<f64>() / results.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_candidates: usize,
    pub r_at_1: f64,
    pub r_at_2: f64,
    pub r_at_5: f64,
    pub mrr: f64,
    pub n_samples: usize,
}

pub fn metric_report(results: &[RankResult]) -> Result<MetricReport> {
    let n = results
        .first()
        .map(|r| r.scores.len())
        .ok_or_else(|| Error::Metric("no results".into()))?;
    let at = |k: usize| r_at_k(results, n, k.min(n));
    Ok(MetricReport {
        n_candidates: n,
        r_at_1: at(1)?,
        r_at_2: at(2)?,
        r_at_5: at(5)?,
        mrr: mrr(results)?,
        n_samples: results.len(),
    })
}

/// Knowledge-free evaluation over a dataset.
pub fn evaluate(model: &SelectionModel, samples: &[MrsSample]) -> Result<(Vec<RankResult>, MetricReport)> {
    let before = access_counts().total();
    let results = samples
        .iter()
        .enumerate()
        .map(|(i, s)| rank_candidates(model, s, i))
        .collect::<Result<Vec<_>>>()?;
    let touched = access_counts().total() - before;
    if touched != 0 {
        return Err(Error::KnowledgeAccess(touched));
    }
    let report = metric_report(&results)?;
    Ok((results, report))
}

/// Evaluation with precomputed subgraphs, indexed `[sample][candidate]`.
pub fn evaluate_with_specs(
    model: &SelectionModel,
    samples: &[MrsSample],
    specs: &[Vec<SubgraphSpec>],
) -> Result<(Vec<RankResult>, MetricReport)> {
    let results = samples
        .iter()
        .zip(specs)
        .enumerate()
        .map(|(i, (s, sp))| rank_with_specs(model, s, i, sp))
        .collect::<Result<Vec<_>>>()?;
    let report = metric_report(&results)?;
    Ok((results, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub average: f64,
    pub worst: f64,
    pub best: f64,
}

impl LatencyStats {
    pub fn of(times: &[f64]) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Metric("no timings".into()));
        }
        Ok(LatencyStats {
            average: times.iter().sum::<f64>() / times.len() as f64,
            worst: times.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            best: times.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }
}

/// Per-instance seconds for both paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub instances: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub qo_free: LatencyStats,
    pub online: LatencyStats,
    /// `online.average / qo_free.average`.
    pub ratio: f64,
    pub qo_free_seconds: Vec<f64>,
    pub online_seconds: Vec<f64>,
}

pub const WARMUP: usize = 3;

/// Head and GNN used to score the online path when the model itself has no
/// knowledge-reading head.
struct OnlineScorer {
    gnn: GnnModel,
    head_w: Vec<f64>,
    head_b: f64,
}

impl OnlineScorer {
    fn for_model(model: &SelectionModel, kg_relations: usize, seed: u64) -> Result<Self> {
        let d = model.encoder.dim();
        let gnn = match &model.gnn {
            Some(g) => g.clone(),
            None => GnnModel::new(crate::gnn::GnnConfig::default(), d, kg_relations)?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = Tensor::uniform(&[2 * d, 1], (1.0 / (2 * d) as f64).sqrt(), &mut rng);
        Ok(OnlineScorer {
            gnn,
            head_w: head.into_data(),
            head_b: 0.0,
        })
    }

    /// Full pipeline for one instance: extraction, GNN, knowledge-aware head.
    fn rank(
        &self,
        model: &SelectionModel,
        kb: &KnowledgeBase,
        snapshot: &ScorerSnapshot,
        config: &ExtractionConfig,
        sample: &MrsSample,
        index: usize,
    ) -> Result<RankResult> {
        if model.variant == Variant::S3 {
            return rank_online(model, kb, snapshot, config, sample, index);
        }
        let positive = positive_of(sample)?;
        let mut scores = Vec::with_capacity(sample.len());
        for c in 0..sample.len() {
            let spec = kb.build_subgraph(snapshot, sample, index, c, config)?;
            let (seq, _) = trans_a(model.encoder.vocab(), sample, c, model.max_seq_len)?;
            let h = model.encoder.encode(&seq)?;
            let hx = self.gnn.propagate(&spec, &h)?;
            let mut feats = h;
            feats.extend(hx);
            scores.push(sigmoid(kernels::dot(&feats, &self.head_w) + self.head_b));
        }
        rank_from_scores(index, scores, positive)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn time_once(f: &mut impl FnMut() -> Result<()>) -> Result<f64> {
    let start = Instant::now();
    f()?;
    Ok(start.elapsed().as_secs_f64().max(1e-9))
}

/// Median-of-`repetitions` wall time per instance for knowledge-free ranking
/// and for the retrieval + GNN pipeline, after [`WARMUP`] untimed runs.
pub fn latency_bench(
    model: &SelectionModel,
    samples: &[MrsSample],
    kb: &KnowledgeBase,
    snapshot: &ScorerSnapshot,
    config: &ExtractionConfig,
    repetitions: usize,
) -> Result<LatencyReport> {
    if samples.is_empty() || repetitions == 0 {
        return Err(Error::Config("latency bench needs samples and repetitions".into()));
    }
    if model.variant.needs_knowledge_at_inference() {
        return Err(Error::Config(format!("variant {} has no knowledge-free path", model.variant)));
    }
    let online = OnlineScorer::for_model(model, kb.kg.num_relations(), 0x0b1e)?;
    let (mut qo, mut on) = (Vec::new(), Vec::new());
    for (i, s) in samples.iter().enumerate() {
        let mut fast = || rank_candidates(model, s, i).map(drop);
        let mut slow = || online.rank(model, kb, snapshot, config, s, i).map(drop);
        for _ in 0..WARMUP {
            fast()?;
            slow()?;
        }
        let mut a = Vec::with_capacity(repetitions);
        let mut b = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            a.push(time_once(&mut fast)?);
            b.push(time_once(&mut slow)?);
        }
        qo.push(median(a));
        on.push(median(b));
    }
    let qo_free = LatencyStats::of(&qo)?;
    let online_stats = LatencyStats::of(&on)?;
    Ok(LatencyReport {
        instances: samples.len(),
        repetitions,
        warmup: WARMUP,
        qo_free,
        online: online_stats,
        ratio: online_stats.average / qo_free.average,
        qo_free_seconds: qo,
        online_seconds: on,
    })
}
