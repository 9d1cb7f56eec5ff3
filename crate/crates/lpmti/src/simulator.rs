//! Depth-first simulation of one perturbed branching-walk realization.
//!
//! A replicate grows the tree with an explicit stack, applying the block-m
//! model to generations in (t_{m-1}, t_m], and extracts every statistic in a
//! single pass: nothing proportional to the leaf count is ever materialized.
//! Memory stays O(depth x max offspring) while the leaf count reaches 2^20
//! and beyond.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cumulant::CenteringSpec;
use crate::displacement::{exp1, DisplacementModel};
use crate::error::{Error, Result};
use crate::rng::{replicate_seed, stream, StreamRole};

pub const DEFAULT_PARTICLE_BUDGET: u64 = 1 << 26;
pub const DEFAULT_TOPK: usize = 2;

/// Block lengths q_1..q_k with their cumulative boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Schedule {
    q: Vec<u64>,
    /// bounds[m] = q_1 + ... + q_m, with bounds[0] = 0 and bounds[k] = n.
    bounds: Vec<u64>,
}

impl Schedule {
    pub fn new(q: Vec<u64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::Schedule("at least one block is required".into()));
        }
        let mut bounds = Vec::with_capacity(q.len() + 1);
        let mut acc: u64 = 0;
        bounds.push(0);
        for &qi in &q {
            acc = acc
                .checked_add(qi)
                .ok_or_else(|| Error::Schedule("block lengths overflow".into()))?;
            bounds.push(acc);
        }
        Ok(Schedule { q, bounds })
    }

    /// Total number of generations.
    pub fn n(&self) -> u64 {
        *self.bounds.last().unwrap()
    }

    /// Number of blocks.
    pub fn k(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[u64] {
        &self.q
    }

    /// Cumulative boundaries t_0..t_k.
    pub fn boundaries(&self) -> &[u64] {
        &self.bounds
    }

    /// End of the first block.
    pub fn t1(&self) -> u64 {
        self.bounds[1]
    }

    /// Index of the block governing generation `t` (1-based generation,
    /// t in (t_{m-1}, t_m]).
    pub fn block_for_generation(&self, t: u64) -> usize {
        debug_assert!(t >= 1 && t <= self.n());
        // first boundary >= t, skipping bounds[0] = 0
        self.bounds[1..].partition_point(|&b| b < t)
    }
}

/// Everything one replicate needs: the models, the schedule, the tilt and
/// the extraction knobs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub models: Vec<DisplacementModel>,
    pub schedule: Schedule,
    pub theta: f64,
    pub topk: usize,
    pub particle_budget: u64,
    pub record_first_block: bool,
    nu_at_theta: Vec<f64>,
}

impl RunConfig {
    pub fn new(models: Vec<DisplacementModel>, schedule: Schedule, theta: f64) -> Result<Self> {
        if models.len() != schedule.k() {
            return Err(Error::Mismatch(format!(
                "{} models vs {} schedule blocks",
                models.len(),
                schedule.k()
            )));
        }
        if !theta.is_finite() || theta <= 0.0 {
            return Err(Error::Regime("theta must be positive and finite".into()));
        }
        for (i, model) in models.iter().enumerate() {
            let report = model.validate();
            if !report.a2_ok {
                return Err(Error::InvalidModel(format!(
                    "block {} model fails non-triviality ({})",
                    i + 1,
                    report
                        .a2_failure
                        .map(|c| c.to_string())
                        .unwrap_or_else(|| "?".into())
                )));
            }
        }
        let nu_at_theta = models
            .iter()
            .map(|m| m.nu(theta))
            .collect::<Result<Vec<_>>>()?;
        Ok(RunConfig {
            models,
            schedule,
            theta,
            topk: DEFAULT_TOPK,
            particle_budget: DEFAULT_PARTICLE_BUDGET,
            record_first_block: true,
            nu_at_theta,
        })
    }

    /// Skip the non-triviality gate. Degenerate models make several of the
    /// exact-value checks below expressible; not part of the public surface.
    #[cfg(test)]
    pub(crate) fn new_unchecked(
        models: Vec<DisplacementModel>,
        schedule: Schedule,
        theta: f64,
    ) -> Result<Self> {
        let nu_at_theta = models
            .iter()
            .map(|m| m.nu(theta))
            .collect::<Result<Vec<_>>>()?;
        Ok(RunConfig {
            models,
            schedule,
            theta,
            topk: DEFAULT_TOPK,
            particle_budget: DEFAULT_PARTICLE_BUDGET,
            record_first_block: true,
            nu_at_theta,
        })
    }

    pub fn with_topk(mut self, topk: usize) -> Self {
        self.topk = topk.max(1);
        self
    }

    pub fn with_particle_budget(mut self, budget: u64) -> Self {
        self.particle_budget = budget;
        self
    }

    pub fn with_record_first_block(mut self, record: bool) -> Self {
        self.record_first_block = record;
        self
    }

    /// Cached nu_i(theta) per block.
    pub fn nu_at_theta(&self) -> &[f64] {
        &self.nu_at_theta
    }

    /// Expected leaf count must fit the budget before a replicate starts.
    fn check_expected_leaves(&self) -> Result<()> {
        let log_expected: f64 = self
            .models
            .iter()
            .zip(self.schedule.q())
            .map(|(m, &q)| q as f64 * m.mean_offspring().ln())
            .sum();
        if log_expected > (self.particle_budget as f64).ln() {
            return Err(Error::BudgetExceeded {
                budget: self.particle_budget,
                created: log_expected.exp().min(u64::MAX as f64) as u64,
                replicate: None,
            });
        }
        Ok(())
    }
}

/// Per-replicate statistics of one simulated tree.
#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub theta: f64,
    /// Right-most unperturbed leaf position.
    pub r_n: f64,
    /// Right-most perturbed position: max of S(v) - (1/theta) log E_v.
    pub r_star: f64,
    /// log sum_leaves e^{theta S(v)}.
    pub log_w: f64,
    /// Largest perturbed scores theta S(v) - log E_v, descending.
    pub top_scores: Vec<f64>,
    /// Same partition function restricted to the first block's generation.
    pub first_block_log_w: f64,
    /// First-block derivative statistic
    /// -sum (theta S_v - q_1 nu_1(theta)) e^{theta S_v - q_1 nu_1(theta)}.
    pub d_stat: f64,
    /// Largest weight share at the first block boundary.
    pub m_share: f64,
    pub leaf_count: u64,
}

/// Streaming log-sum-exp with a running maximum; rescales whenever a new
/// maximum arrives so theta S(v) in the hundreds cannot overflow.
#[derive(Debug, Clone)]
pub(crate) struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    pub(crate) fn new() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, x: f64) {
        if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    pub(crate) fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Bounded top-k tracker. Earlier arrivals win ties, so the final order is
/// traversal order among equals.
#[derive(Debug)]
struct TopK {
    cap: usize,
    values: Vec<f64>,
    min_idx: usize,
}

impl TopK {
    fn new(cap: usize) -> Self {
        TopK {
            cap: cap.max(1),
            values: Vec::with_capacity(cap.max(1)),
            min_idx: 0,
        }
    }

    #[inline]
    fn offer(&mut self, x: f64) {
        if self.values.len() < self.cap {
            self.values.push(x);
            if self.values.len() == self.cap {
                self.refresh_min();
            }
            return;
        }
        if x > self.values[self.min_idx] {
            self.values[self.min_idx] = x;
            self.refresh_min();
        }
    }

    fn refresh_min(&mut self) {
        let mut idx = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v < self.values[idx] {
                idx = i;
            }
        }
        self.min_idx = idx;
    }

    fn into_sorted_desc(mut self) -> Vec<f64> {
        self.values.sort_by(|a, b| b.total_cmp(a));
        self.values
    }
}

/// Simulate one replicate. A deterministic function of `(config, seed)`.
pub fn simulate(config: &RunConfig, seed: u64) -> Result<RunResult> {
    if config.topk < 1 {
        return Err(Error::Mismatch("topk must be >= 1".into()));
    }
    config.check_expected_leaves()?;

    let theta = config.theta;
    let n = config.schedule.n();
    let t1 = config.schedule.t1();
    let d_center = config.schedule.q()[0] as f64 * config.nu_at_theta[0];
    let record_fb = config.record_first_block;

    let mut tree_rng = stream(seed, StreamRole::Tree);
    let mut leaf_rng = stream(seed, StreamRole::LeafPerturbation);

    // model index per generation, resolved once instead of per node
    let block_of: Vec<u8> = (1..=n)
        .map(|t| config.schedule.block_for_generation(t) as u8)
        .collect();

    let mut lse = LogSumExp::new();
    let mut fb_lse = LogSumExp::new();
    let mut top = TopK::new(config.topk);
    let mut r_n = f64::NEG_INFINITY;
    let mut fb_max = f64::NEG_INFINITY;
    let mut d_stat = 0.0;
    let mut leaf_count: u64 = 0;
    let mut created: u64 = 1;

    let mut stack: Vec<(u32, f64)> = Vec::with_capacity(4 * (n as usize + 1));
    stack.push((0, 0.0));
    let mut kids: Vec<f64> = Vec::new();

    while let Some((depth, pos)) = stack.pop() {
        let t = depth as u64;
        if record_fb && t == t1 {
            let x = theta * pos;
            fb_lse.push(x);
            if x > fb_max {
                fb_max = x;
            }
            let u = x - d_center;
            d_stat -= u * u.exp();
        }
        if t == n {
            let score = theta * pos - exp1(&mut leaf_rng).ln();
            lse.push(theta * pos);
            top.offer(score);
            if pos > r_n {
                r_n = pos;
            }
            leaf_count += 1;
            continue;
        }
        let block = block_of[t as usize] as usize;
        config.models[block].sample_into(&mut kids, &mut tree_rng);
        created += kids.len() as u64;
        if created > config.particle_budget {
            return Err(Error::BudgetExceeded {
                budget: config.particle_budget,
                created,
                replicate: None,
            });
        }
        for &dx in kids.iter().rev() {
            stack.push((depth + 1, pos + dx));
        }
    }

    let top_scores = top.into_sorted_desc();
    let best = top_scores[0];
    Ok(RunResult {
        theta,
        r_n,
        r_star: best / theta,
        log_w: lse.value(),
        top_scores,
        first_block_log_w: if record_fb { fb_lse.value() } else { f64::NAN },
        d_stat: if record_fb { d_stat } else { f64::NAN },
        m_share: if record_fb {
            (fb_max - fb_lse.value()).exp()
        } else {
            f64::NAN
        },
        leaf_count,
    })
}

/// The coupling arm: (log W_n(theta) - log E) / theta for a fresh
/// independent Exponential(1) draw. Its law equals that of `r_star` from the
/// direct arm at every n.
pub fn coupled_rightmost(log_w: f64, theta: f64, rng: &mut ChaCha8Rng) -> f64 {
    (log_w - exp1(rng).ln()) / theta
}

/// Subtract the deterministic centering from the perturbed maximum.
pub fn centered_r_star(result: &RunResult, centering: &CenteringSpec) -> Result<f64> {
    if (result.theta - centering.theta).abs() > 1e-12 {
        return Err(Error::Mismatch(format!(
            "result theta {} vs centering theta {}",
            result.theta, centering.theta
        )));
    }
    Ok(result.r_star - centering.total)
}

/// Run `reps` independent replicates. Replicate r uses the stream derived
/// from `(master_seed, r)`; output order and content are independent of the
/// worker count.
pub fn batch(
    config: &RunConfig,
    reps: u64,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<RunResult>> {
    if reps < 1 {
        return Err(Error::Mismatch("reps must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::ThreadPool(e.to_string()))?;
    let results: Vec<Result<RunResult>> = pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|rep| {
                simulate(config, replicate_seed(master_seed, rep))
                    .map_err(|e| e.with_replicate(rep))
            })
            .collect()
    });
    // collect in index order so the first failing replicate wins
    results.into_iter().collect()
}

/// Convenience: per-replicate samples of theta * r_star.
pub fn perturbed_max_scores(results: &[RunResult]) -> Vec<f64> {
    results.iter().map(|r| r.theta * r.r_star).collect()
}
