//! Reference solutions: the discretized global transfer operator on small
//! grids, the restriction of continuous densities to cell masses, and a Monte
//! Carlo solver for the continuous dynamics.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::densities::{decode_symbols, encode_symbols, pattern_count, Interval, SparseDensity};
use crate::error::{CpaError, Result};
use crate::models::{ArsenatePipe, PipeState};
use crate::partition::{CellPartition, Symbol};
use crate::translator::{cell_points, image_counts, BuildStats, FlowMap};

/// Largest global state space [`build_pb`] will enumerate.
pub const MAX_GLOBAL_STATES: u64 = 1_000_000;

/// Row-stochastic transition estimate between global states over `{1, .., m}`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalTransition {
    pub m: usize,
    pub base: usize,
    /// Rows by preimage code; `None` marks a row without retained samples.
    pub rows: BTreeMap<u64, Option<Vec<(u64, f64)>>>,
    pub stats: BuildStats,
}

impl GlobalTransition {
    pub fn window(&self) -> Interval {
        Interval {
            lo: 1,
            hi: self.m as i64,
        }
    }

    pub fn row(&self, code: u64) -> Option<&[(u64, f64)]> {
        self.rows.get(&code).and_then(|r| r.as_deref())
    }
}

/// Estimates the global transition matrix from product test sets.
///
/// Interior sites move under `flow`; the sites of `K` keep their symbol.
/// `counts[k]` test points are used in the cell of site `k + 1`, drawn from the
/// same per-cell streams as the local function estimate, so both agree
/// exactly when the pattern window covers the whole grid. `states` restricts
/// the rows that are estimated.
pub fn build_pb(
    flow: &dyn FlowMap,
    partition: &dyn CellPartition,
    m: usize,
    counts: &[usize],
    seed: u64,
    states: Option<&[u64]>,
) -> Result<GlobalTransition> {
    let base = partition.num_symbols();
    let total = pattern_count(base, m).ok().filter(|t| *t <= MAX_GLOBAL_STATES);
    let Some(total) = total else {
        return Err(CpaError::StateSpaceTooLarge {
            states: (base as u128).saturating_pow(m as u32),
            limit: MAX_GLOBAL_STATES as u128,
        });
    };
    let u = flow.neighborhood();
    let (r, s) = ((-u.lo) as usize, u.hi as usize);
    if m < r + s + 1 {
        return Err(CpaError::Geometry(format!("{m} sites leave no interior for neighbourhood {u}")));
    }
    if counts.len() != m || counts.contains(&0) {
        return Err(CpaError::InvalidParameters(format!(
            "need {m} positive test point counts, got {counts:?}"
        )));
    }
    let n = partition.dim();
    let max_count = *counts.iter().max().expect("m >= 1");
    let bank: Vec<Vec<f64>> = (0..base)
        .map(|c| cell_points(partition, c, max_count, seed))
        .collect::<Result<_>>()?;
    let codes: Vec<u64> = match states {
        Some(list) => {
            if let Some(bad) = list.iter().find(|c| **c >= total) {
                return Err(CpaError::InvalidSymbol {
                    symbol: *bad as usize,
                    count: total as usize,
                });
            }
            list.to_vec()
        }
        None => (0..total).collect(),
    };
    let interior = m - r - s;
    let b = base as u64;
    let results: Vec<(u64, Option<Vec<(u64, f64)>>, BuildStats)> = codes
        .into_par_iter()
        .map(|code| {
            let cells = decode_symbols(base, m, code);
            let points: Vec<Vec<f64>> = cells
                .iter()
                .zip(counts)
                .map(|(&c, &k)| bank[c][..k * n].to_vec())
                .collect();
            let mut stats = BuildStats {
                preimages: 1,
                ..Default::default()
            };
            let hist = image_counts(flow, partition, interior, &points, &mut stats)?;
            let hits: u64 = hist.values().sum();
            if hits == 0 {
                stats.unexplored = 1;
                return Ok((code, None, stats));
            }
            let left = encode_symbols(base, &cells[..r]);
            let right = encode_symbols(base, &cells[m - s..]);
            let row = hist
                .into_iter()
                .map(|(c, k)| {
                    let full = (left * b.pow(interior as u32) + c) * b.pow(s as u32) + right;
                    (full, k as f64 / hits as f64)
                })
                .collect::<BTreeMap<_, _>>()
                .into_iter()
                .collect();
            Ok((code, Some(row), stats))
        })
        .collect::<Result<_>>()?;
    let mut rows = BTreeMap::new();
    let mut stats = BuildStats::default();
    for (code, row, st) in results {
        rows.insert(code, row);
        stats.preimages += st.preimages;
        stats.unexplored += st.unexplored;
        stats.image_points += st.image_points;
        stats.clamped += st.clamped;
        stats.dropped += st.dropped;
    }
    Ok(GlobalTransition { m, base, rows, stats })
}

/// `gᵀ P`, renormalized.
pub fn apply_pb(p: &GlobalTransition, g: &SparseDensity) -> Result<SparseDensity> {
    if g.window() != p.window() || g.base() != p.base {
        return Err(CpaError::WindowMismatch {
            expected: format!("{} over {} symbols", p.window(), p.base),
            found: format!("{} over {} symbols", g.window(), g.base()),
        });
    }
    let mut out: BTreeMap<u64, f64> = BTreeMap::new();
    for (chi, w) in g.iter() {
        let row = p.row(chi).ok_or(CpaError::UnexploredPreimage {
            code: chi,
            site: None,
            step: None,
        })?;
        for &(psi, q) in row {
            *out.entry(psi).or_insert(0.0) += w * q;
        }
    }
    SparseDensity::from_weights(p.window(), p.base, out)?.normalize()
}

/// Midpoint rule on a cell box with `nodes` points per axis.
fn integrate_box(lower: &[f64], upper: &[f64], nodes: usize, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let d = lower.len();
    let h: Vec<f64> = lower.iter().zip(upper).map(|(a, b)| (b - a) / nodes as f64).collect();
    let volume: f64 = h.iter().product();
    let mut x = vec![0.0; d];
    let mut idx = vec![0usize; d];
    let mut acc = 0.0;
    loop {
        for k in 0..d {
            x[k] = lower[k] + (idx[k] as f64 + 0.5) * h[k];
        }
        acc += f(&x);
        let mut k = d;
        loop {
            if k == 0 {
                return acc * volume;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < nodes {
                break;
            }
            idx[k] = 0;
        }
    }
}

fn global_cell(partition: &dyn CellPartition, m: usize, code: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lower = Vec::with_capacity(m * partition.dim());
    let mut upper = Vec::with_capacity(m * partition.dim());
    for s in decode_symbols(partition.num_symbols(), m, code) {
        let cell = partition.cell_bounds(Symbol(s))?;
        lower.extend_from_slice(cell.lower());
        upper.extend_from_slice(cell.upper());
    }
    Ok((lower, upper))
}

/// Cell masses `∫_{Ω_φ} g` of a density on `Ω^m`, normalized.
pub fn restrict(
    partition: &dyn CellPartition,
    m: usize,
    g: &(dyn Fn(&[f64]) -> f64 + Sync),
    nodes: usize,
) -> Result<SparseDensity> {
    let total = pattern_count(partition.num_symbols(), m)?;
    if total > MAX_GLOBAL_STATES {
        return Err(CpaError::StateSpaceTooLarge {
            states: total as u128,
            limit: MAX_GLOBAL_STATES as u128,
        });
    }
    let masses = (0..total)
        .into_par_iter()
        .map(|code| {
            let (lo, hi) = global_cell(partition, m, code)?;
            Ok((code, integrate_box(&lo, &hi, nodes.max(1), g)))
        })
        .collect::<Result<Vec<_>>>()?;
    let window = Interval { lo: 1, hi: m as i64 };
    SparseDensity::from_weights(window, partition.num_symbols(), masses)?.normalize()
}

/// The piecewise-constant density with the given cell masses.
pub fn piecewise_density<'a>(
    partition: &'a dyn CellPartition,
    masses: &'a SparseDensity,
) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
    let m = masses.window().len();
    let n = partition.dim();
    move |x: &[f64]| {
        let mut symbols = Vec::with_capacity(m);
        for k in 0..m {
            match partition.encode(&x[k * n..(k + 1) * n]) {
                Ok(s) => symbols.push(s.index()),
                Err(_) => return 0.0,
            }
        }
        let code = encode_symbols(partition.num_symbols(), &symbols);
        let (lo, hi) = global_cell(partition, m, code).expect("symbols come from the partition");
        let volume: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
        masses.get(code) / volume
    }
}

/// `∫ |R(g) - g|` over `Ω^m` by the midpoint rule with `nodes` points per
/// axis inside every cell.
pub fn restriction_l1_error(
    partition: &dyn CellPartition,
    m: usize,
    g: &(dyn Fn(&[f64]) -> f64 + Sync),
    nodes: usize,
) -> Result<f64> {
    let masses = restrict(partition, m, g, nodes)?;
    let parts = (0..pattern_count(partition.num_symbols(), m)?)
        .into_par_iter()
        .map(|code| {
            let (lo, hi) = global_cell(partition, m, code)?;
            let volume: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
            let level = masses.get(code) / volume;
            Ok(integrate_box(&lo, &hi, nodes.max(1), &|x| (g(x) - level).abs()))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum())
}

/// A continuous model on `{1, .., m}` that the Monte Carlo solver can run.
pub trait GlobalModel: Sync {
    type State: Send;

    fn sites(&self) -> usize;

    /// Boundary sites `K_l` and `K_r`.
    fn boundary_sites(&self) -> (Interval, Interval);

    fn init(&self, values: &[Vec<f64>]) -> Result<Self::State>;

    /// One coarse step with the given boundary values held throughout.
    fn advance(&self, state: &mut Self::State, left: &[Vec<f64>], right: &[Vec<f64>]) -> Result<()>;

    /// Values at the sites `{1, .., m}`.
    fn observe(&self, state: &Self::State) -> Vec<Vec<f64>>;
}

/// Repeated application of a coarse flow map at the interior sites.
pub struct CoarseModel {
    flow: Arc<dyn FlowMap>,
    m: usize,
}

impl CoarseModel {
    pub fn new(flow: Arc<dyn FlowMap>, m: usize) -> Result<Self> {
        let u = flow.neighborhood();
        if m < u.len() {
            return Err(CpaError::Geometry(format!("{m} sites leave no interior for neighbourhood {u}")));
        }
        Ok(Self { flow, m })
    }
}

impl GlobalModel for CoarseModel {
    type State = Vec<Vec<f64>>;

    fn sites(&self) -> usize {
        self.m
    }

    fn boundary_sites(&self) -> (Interval, Interval) {
        let u = self.flow.neighborhood();
        (
            Interval { lo: 1, hi: -u.lo },
            Interval {
                lo: self.m as i64 - u.hi + 1,
                hi: self.m as i64,
            },
        )
    }

    fn init(&self, values: &[Vec<f64>]) -> Result<Self::State> {
        Ok(values.to_vec())
    }

    fn advance(&self, state: &mut Self::State, left: &[Vec<f64>], right: &[Vec<f64>]) -> Result<()> {
        let u = self.flow.neighborhood();
        let (r, s) = ((-u.lo) as usize, u.hi as usize);
        state[..r].clone_from_slice(left);
        state[self.m - s..].clone_from_slice(right);
        let n = self.flow.dim();
        let mut window = vec![0.0; u.len() * n];
        let mut next = state.clone();
        for i in r..self.m - s {
            for (t, site) in state[i - r..=i + s].iter().enumerate() {
                window[t * n..(t + 1) * n].copy_from_slice(site);
            }
            self.flow.apply(&window, &mut next[i])?;
        }
        *state = next;
        Ok(())
    }

    fn observe(&self, state: &Self::State) -> Vec<Vec<f64>> {
        state.clone()
    }
}

impl GlobalModel for ArsenatePipe {
    type State = PipeState;

    fn sites(&self) -> usize {
        ArsenatePipe::sites(self)
    }

    fn boundary_sites(&self) -> (Interval, Interval) {
        (
            Interval::single(1),
            Interval::empty_at(ArsenatePipe::sites(self) as i64 + 1),
        )
    }

    fn init(&self, values: &[Vec<f64>]) -> Result<Self::State> {
        let report: Vec<[f64; 2]> = values.iter().map(|v| [v[0], v[1]]).collect();
        Ok(self.initial_state(&report))
    }

    fn advance(&self, state: &mut Self::State, left: &[Vec<f64>], _right: &[Vec<f64>]) -> Result<()> {
        ArsenatePipe::advance(self, state, [left[0][0], left[0][1]])
    }

    fn observe(&self, state: &Self::State) -> Vec<Vec<f64>> {
        self.report(state).into_iter().map(|v| v.to_vec()).collect()
    }
}

/// Draws one point per site: a pattern from `density`, then a uniform point in
/// each cell of the pattern.
pub fn sample_points(
    partition: &dyn CellPartition,
    density: &SparseDensity,
    rng: &mut dyn RngCore,
) -> Result<Vec<Vec<f64>>> {
    if density.window().is_empty() {
        return Ok(Vec::new());
    }
    let code = density.sample(rng)?;
    decode_symbols(partition.num_symbols(), density.window().len(), code)
        .into_iter()
        .map(|s| Ok(partition.sample_cell(Symbol(s), rng, 1)?.remove(0)))
        .collect()
}

/// Sampler of initial values for one run.
pub type InitialSampler<'a> = dyn Fn(&mut dyn RngCore) -> Result<Vec<Vec<f64>>> + Sync + 'a;

/// Sampler of `(K_l, K_r)` values for a given step.
pub type BoundarySampler<'a> = dyn Fn(&mut dyn RngCore, usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> + Sync + 'a;

/// Monte Carlo run parameters.
pub struct McSetup<'a> {
    /// Runs `first_run .. first_run + runs`, each on its own random stream.
    pub first_run: u64,
    pub runs: u64,
    pub steps: usize,
    pub seed: u64,
    /// Steps at which histograms are recorded (0 is the initial state).
    pub report_steps: Vec<usize>,
    /// Partitions used to encode the observations.
    pub partitions: Vec<&'a dyn CellPartition>,
}

/// Symbol counts per recorded step, partition and site.
#[derive(Clone, Debug, PartialEq)]
pub struct McReport {
    pub runs: u64,
    pub report_steps: Vec<usize>,
    /// `counts[t][k][i][s]`: runs at recorded step `t` whose site `i + 1`
    /// lies in cell `s` of partition `k`.
    pub counts: Vec<Vec<Vec<Vec<u64>>>>,
    /// Observations that had to be clamped into the domain.
    pub clamped: u64,
}

impl McReport {
    fn empty(setup: &McSetup, m: usize) -> Self {
        Self {
            runs: 0,
            report_steps: setup.report_steps.clone(),
            counts: setup
                .report_steps
                .iter()
                .map(|_| {
                    setup
                        .partitions
                        .iter()
                        .map(|p| vec![vec![0; p.num_symbols()]; m])
                        .collect()
                })
                .collect(),
            clamped: 0,
        }
    }

    /// Sums the counts of independent runs.
    pub fn merge(mut self, other: &McReport) -> Result<Self> {
        if self.report_steps != other.report_steps || self.counts.len() != other.counts.len() {
            return Err(CpaError::Mismatch("reports cover different steps".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (pa, pb) in a.iter_mut().zip(b) {
                for (sa, sb) in pa.iter_mut().zip(pb) {
                    for (x, y) in sa.iter_mut().zip(sb) {
                        *x += y;
                    }
                }
            }
        }
        self.runs += other.runs;
        self.clamped += other.clamped;
        Ok(self)
    }

    /// Empirical symbol density at `site` (1-based) for recorded step index `t`.
    pub fn density(&self, t: usize, partition: usize, site: usize) -> Result<SparseDensity> {
        let counts = &self.counts[t][partition][site - 1];
        let runs = self.runs as f64;
        SparseDensity::from_weights(
            Interval::single(0),
            counts.len(),
            counts.iter().enumerate().map(|(s, &c)| (s as u64, c as f64 / runs)),
        )
    }
}

/// Runs the model from sampled initial and boundary values and histograms the
/// observations.
pub fn mc_reference<M: GlobalModel>(
    model: &M,
    initial: &InitialSampler,
    boundary: &BoundarySampler,
    setup: &McSetup,
) -> Result<McReport> {
    let m = model.sites();
    let record = |report: &mut McReport, t: usize, values: &[Vec<f64>]| -> Result<()> {
        for (k, p) in setup.partitions.iter().enumerate() {
            for (i, v) in values.iter().enumerate() {
                let mut v = v.clone();
                report.clamped += p.domain().clamp(&mut v) as u64;
                let s = p.encode(&v)?.index();
                report.counts[t][k][i][s] += 1;
            }
        }
        Ok(())
    };
    (setup.first_run..setup.first_run + setup.runs)
        .into_par_iter()
        .try_fold(
            || McReport::empty(setup, m),
            |mut report, run| {
                let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
                rng.set_stream(run);
                let values = initial(&mut rng)?;
                if values.len() != m {
                    return Err(CpaError::Geometry(format!("initial sampler gave {} sites, need {m}", values.len())));
                }
                let mut state = model.init(&values)?;
                for (t, _) in setup.report_steps.iter().enumerate().filter(|(_, s)| **s == 0) {
                    record(&mut report, t, &values)?;
                }
                for n in 1..=setup.steps {
                    let (left, right) = boundary(&mut rng, n)?;
                    model.advance(&mut state, &left, &right)?;
                    let wanted: Vec<usize> = setup
                        .report_steps
                        .iter()
                        .enumerate()
                        .filter(|(_, s)| **s == n)
                        .map(|(t, _)| t)
                        .collect();
                    if !wanted.is_empty() {
                        let mut obs = model.observe(&state);
                        let (kl, kr) = model.boundary_sites();
                        for (j, site) in kl.sites().enumerate() {
                            obs[site as usize - 1] = left[j].clone();
                        }
                        for (j, site) in kr.sites().enumerate() {
                            obs[site as usize - 1] = right[j].clone();
                        }
                        for t in wanted {
                            record(&mut report, t, &obs)?;
                        }
                    }
                }
                report.runs += 1;
                Ok(report)
            },
        )
        .try_reduce(|| McReport::empty(setup, m), |a, b| a.merge(&b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::IdentityFlow;
    use crate::partition::UniformPartition;

    #[test]
    fn identity_transition_is_identity() {
        let p = UniformPartition::unit_interval(3).unwrap();
        let pb = build_pb(&IdentityFlow::new(1), &p, 2, &[3, 3], 7, None).unwrap();
        for code in 0..9 {
            assert_eq!(pb.row(code).unwrap(), &[(code, 1.0)]);
        }
    }

    #[test]
    fn restriction_of_uniform_is_uniform() {
        let p = UniformPartition::unit_interval(4).unwrap();
        let r = restrict(&p, 2, &|_| 1.0, 3).unwrap();
        for c in 0..16 {
            assert!((r.get(c) - 1.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn guard_rejects_large_grids() {
        let p = UniformPartition::unit_interval(10).unwrap();
        let err = build_pb(&IdentityFlow::new(1), &p, 7, &[1; 7], 0, None).unwrap_err();
        assert!(matches!(err, CpaError::StateSpaceTooLarge { .. }));
    }
}
