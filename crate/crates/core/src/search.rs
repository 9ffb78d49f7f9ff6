//! Hyperparameter optimizers: random search and a (μ + λ) evolutionary
//! strategy over a pipeline's parameter space.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::Direction;
use crate::error::{Error, Result};
use crate::pipeline::{
    enumerate, sample_step, sample_with, Cardinality, EstimatorRef, ParamConfig, ParamDist, PipelineSpec, StepChoice,
    StepSpec, Value,
};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Random,
    Evolutionary,
}

/// Finite spaces at most this large are enumerated when fresh draws keep
/// colliding with evaluated configurations.
const ENUMERATION_LIMIT: u128 = 100_000;
const FRESH_DRAW_ATTEMPTS: usize = 64;

fn default_mu() -> usize {
    4
}
fn default_lambda() -> usize {
    8
}
fn default_mutation_scale() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchStrategy {
    pub kind: StrategyKind,
    pub budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_mu")]
    pub mu: usize,
    #[serde(default = "default_lambda")]
    pub lambda: usize,
    #[serde(default = "default_mutation_scale")]
    pub mutation_scale: f64,
    /// Never evaluate the same configuration twice in a finite space.
    #[serde(default = "default_true")]
    pub exhaustive_dedup: bool,
}

impl SearchStrategy {
    pub fn random(budget: usize) -> Self {
        SearchStrategy {
            kind: StrategyKind::Random,
            budget,
            seed: None,
            mu: default_mu(),
            lambda: default_lambda(),
            mutation_scale: default_mutation_scale(),
            exhaustive_dedup: true,
        }
    }

    pub fn evolutionary(budget: usize) -> Self {
        SearchStrategy {
            kind: StrategyKind::Evolutionary,
            ..SearchStrategy::random(budget)
        }
    }

    pub fn check(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.budget < 1 {
            out.push(("budget", "must be >= 1".to_string()));
        }
        if self.kind == StrategyKind::Evolutionary {
            if self.mu < 1 {
                out.push(("mu", "must be >= 1".to_string()));
            }
            if self.lambda < 1 {
                out.push(("lambda", "must be >= 1".to_string()));
            }
            if !(self.mutation_scale > 0.0 && self.mutation_scale.is_finite()) {
                out.push(("mutation_scale", format!("must be > 0, got {}", self.mutation_scale)));
            }
        }
        out
    }
}

/// One evaluated configuration. Failed evaluations carry `error` and no
/// value, and rank below every successful one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub config: ParamConfig,
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub direction: Direction,
    pub candidates: Vec<Candidate>,
    pub best: usize,
}

fn rank_key(direction: Direction, c: &Candidate) -> f64 {
    match (c.value, direction) {
        (None, d) => d.worst(),
        (Some(v), Direction::HigherBetter) => v,
        (Some(v), Direction::LowerBetter) => -v,
    }
}

/// Index of the best candidate; ties go to the earliest evaluation.
fn best_index(direction: Direction, candidates: &[Candidate]) -> usize {
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if rank_key(direction, c) > rank_key(direction, &candidates[best]) {
            best = i;
        }
    }
    best
}

pub fn best_of(trace: &SearchTrace) -> Result<&ParamConfig> {
    if trace.candidates.is_empty() {
        return Err(Error::invalid("empty search trace"));
    }
    Ok(&trace.candidates[best_index(trace.direction, &trace.candidates)].config)
}

/// Draws configurations, skipping already-seen ones when dedup is active.
struct Sampler<'a> {
    space: &'a PipelineSpec,
    rng: ChaCha8Rng,
    seen: HashSet<String>,
    dedup: bool,
    enumeration: Option<Vec<ParamConfig>>,
}

impl Sampler<'_> {
    fn fresh(&mut self) -> Result<Option<ParamConfig>> {
        for _ in 0..FRESH_DRAW_ATTEMPTS {
            let c = sample_with(self.space, &mut self.rng)?;
            if self.admit(&c) {
                return Ok(Some(c));
            }
        }
        if !self.dedup {
            unreachable!("admit always accepts without dedup");
        }
        let Cardinality::Finite(n) = self.space.space_cardinality() else {
            return Ok(None);
        };
        if n > ENUMERATION_LIMIT {
            return Ok(None);
        }
        let all = self
            .enumeration
            .get_or_insert_with(|| enumerate(self.space).unwrap_or_default());
        let unseen: Vec<&ParamConfig> = all.iter().filter(|c| !self.seen.contains(&c.key())).collect();
        if unseen.is_empty() {
            return Ok(None);
        }
        let c = unseen[self.rng.gen_range(0..unseen.len())].clone();
        self.seen.insert(c.key());
        Ok(Some(c))
    }

    fn admit(&mut self, c: &ParamConfig) -> bool {
        !self.dedup || self.seen.insert(c.key())
    }
}

/// Search `space` for the configuration optimizing `objective`.
///
/// `objective(index, config)` is called once per candidate with its
/// evaluation index. Random search draws the whole budget up front;
/// the evolutionary strategy evaluates μ random parents, then generations of
/// λ mutated children, keeping the best μ of parents and children (earlier
/// evaluation wins ties). Candidates of one batch are evaluated in parallel
/// and recorded in index order. Errors from `objective` mark the candidate
/// failed, except [`Error::Cancelled`], which aborts the search.
pub fn optimize<F>(
    space: &PipelineSpec,
    strategy: &SearchStrategy,
    seed: u64,
    direction: Direction,
    objective: F,
) -> Result<SearchTrace>
where
    F: Fn(usize, &ParamConfig) -> Result<f64> + Sync,
{
    if let Some((field, msg)) = strategy.check().into_iter().next() {
        return Err(Error::invalid(format!("search {field}: {msg}")));
    }
    let finite = matches!(space.space_cardinality(), Cardinality::Finite(_));
    let mut sampler = Sampler {
        space,
        rng: seeding::rng(strategy.seed.unwrap_or(seed)),
        seen: HashSet::new(),
        dedup: strategy.exhaustive_dedup && finite,
        enumeration: None,
    };
    let mut candidates: Vec<Candidate> = Vec::new();
    let evaluate = |batch: Vec<ParamConfig>, start: usize| -> Result<Vec<Candidate>> {
        batch
            .into_par_iter()
            .enumerate()
            .map(|(j, config)| {
                let index = start + j;
                match objective(index, &config) {
                    Ok(v) if !v.is_nan() => Ok(Candidate {
                        index,
                        config,
                        value: Some(v),
                        error: None,
                    }),
                    Ok(_) => Ok(Candidate {
                        index,
                        config,
                        value: None,
                        error: Some("objective is NaN".into()),
                    }),
                    Err(Error::Cancelled) => Err(Error::Cancelled),
                    Err(e) => Ok(Candidate {
                        index,
                        config,
                        value: None,
                        error: Some(e.to_string()),
                    }),
                }
            })
            .collect()
    };

    let first = match strategy.kind {
        StrategyKind::Random => strategy.budget,
        StrategyKind::Evolutionary => strategy.mu.min(strategy.budget),
    };
    let mut batch = Vec::new();
    while batch.len() < first {
        match sampler.fresh()? {
            Some(c) => batch.push(c),
            None => break,
        }
    }
    candidates.extend(evaluate(batch, 0)?);

    if strategy.kind == StrategyKind::Evolutionary {
        let mut survivors: Vec<usize> = (0..candidates.len()).collect();
        'generations: while candidates.len() < strategy.budget && !survivors.is_empty() {
            let n_children = strategy.lambda.min(strategy.budget - candidates.len());
            let mut children = Vec::with_capacity(n_children);
            for _ in 0..n_children {
                let parent = survivors[sampler.rng.gen_range(0..survivors.len())];
                let mut child = None;
                for _ in 0..FRESH_DRAW_ATTEMPTS {
                    let c = mutate(
                        space,
                        &candidates[parent].config,
                        strategy.mutation_scale,
                        &mut sampler.rng,
                    )?;
                    if sampler.admit(&c) {
                        child = Some(c);
                        break;
                    }
                }
                let child = match child {
                    Some(c) => c,
                    None => match sampler.fresh()? {
                        Some(c) => c,
                        None => {
                            if children.is_empty() {
                                break 'generations;
                            }
                            break;
                        }
                    },
                };
                children.push(child);
            }
            let start = candidates.len();
            candidates.extend(evaluate(children, start)?);
            let mut pool: Vec<usize> = survivors.iter().copied().chain(start..candidates.len()).collect();
            pool.sort_by(|&a, &b| {
                rank_key(direction, &candidates[b])
                    .total_cmp(&rank_key(direction, &candidates[a]))
                    .then(a.cmp(&b))
            });
            pool.truncate(strategy.mu);
            survivors = pool;
        }
    }
    let best = best_index(direction, &candidates);
    Ok(SearchTrace {
        direction,
        candidates,
        best,
    })
}

/// Perturb every parameter of a configuration: ranges take a Gaussian step
/// of `scale` times their span (in the range's own scale) and are clipped;
/// Choice values and Select branches are redrawn with probability `scale`.
/// A redrawn Select branch gets freshly sampled parameters.
pub fn mutate<R: Rng + ?Sized>(
    space: &PipelineSpec,
    config: &ParamConfig,
    scale: f64,
    rng: &mut R,
) -> Result<ParamConfig> {
    let steps = space
        .steps
        .iter()
        .zip(&config.steps)
        .map(|(step, choice)| mutate_step(step, choice, scale, rng))
        .collect::<Result<_>>()?;
    Ok(ParamConfig { steps })
}

fn mutate_step<R: Rng + ?Sized>(step: &StepSpec, choice: &StepChoice, scale: f64, rng: &mut R) -> Result<StepChoice> {
    let mut node = step;
    for (depth, &i) in choice.path.iter().enumerate() {
        let EstimatorRef::Select { select } = &node.estimator else {
            return Err(Error::invalid("select path does not match the space"));
        };
        if select.len() > 1 && rng.gen_bool(scale.min(1.0)) {
            let j = rng.gen_range(0..select.len());
            if j != i {
                let mut fresh = sample_step(&select[j], rng)?;
                let mut path = choice.path[..depth].to_vec();
                path.push(j);
                path.append(&mut fresh.path);
                fresh.path = path;
                return Ok(fresh);
            }
        }
        node = select
            .get(i)
            .ok_or_else(|| Error::invalid("select path does not match the space"))?;
    }
    let dists = node.effective_dists()?;
    let mut params = choice.params.clone();
    for (name, dist) in &dists {
        let Some(current) = choice.params.get(name) else {
            params.insert(name.clone(), dist.draw(rng));
            continue;
        };
        let next = match dist {
            ParamDist::Fixed { value } => value.clone(),
            ParamDist::Choice { values } => {
                if values.len() > 1 && rng.gen_bool(scale.min(1.0)) {
                    values[rng.gen_range(0..values.len())].clone()
                } else {
                    current.clone()
                }
            }
            ParamDist::FloatRange { lo, hi, scale: s } => {
                let (a, b) = (s.forward(*lo), s.forward(*hi));
                let x = s.forward(current.as_f64().unwrap_or(*lo));
                let step = Normal::new(0.0, scale * (b - a)).unwrap().sample(rng);
                Value::Float(s.inverse((x + step).clamp(a, b)).clamp(*lo, *hi))
            }
            ParamDist::IntRange { lo, hi, scale: s } => {
                let (a, b) = (s.forward(*lo as f64), s.forward(*hi as f64));
                let x = s.forward(current.as_f64().unwrap_or(*lo as f64));
                let step = Normal::new(0.0, scale * (b - a)).unwrap().sample(rng);
                Value::Int((s.inverse(x + step).round() as i64).clamp(*lo, *hi))
            }
        };
        params.insert(name.clone(), next);
    }
    Ok(StepChoice {
        estimator: choice.estimator.clone(),
        path: choice.path.clone(),
        params,
    })
}
