//! Sparse densities over patterns.
//!
//! A pattern assigns one symbol to every site of a contiguous window of sites.
//! Patterns are keyed by a compact integer code: the symbols read as digits in
//! base `|E|`, the leftmost site being the most significant digit. Restricting a
//! pattern to a sub-window is then a division followed by a remainder.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CpaError, Result};
use crate::partition::Symbol;

pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Integer interval `{lo, .., hi}` of sites. `hi == lo - 1` is the empty interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub lo: i64,
    pub hi: i64,
}

impl Interval {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if hi < lo - 1 {
            Err(CpaError::InvalidInterval { lo, hi })
        } else {
            Ok(Self { lo, hi })
        }
    }

    pub fn single(site: i64) -> Self {
        Self { lo: site, hi: site }
    }

    pub fn empty_at(lo: i64) -> Self {
        Self { lo, hi: lo - 1 }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    pub fn contains(&self, site: i64) -> bool {
        self.lo <= site && site <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        other.is_empty() || (self.lo <= other.lo && other.hi <= self.hi)
    }

    /// `l + self`.
    pub fn shift(&self, l: i64) -> Self {
        Self {
            lo: self.lo + l,
            hi: self.hi + l,
        }
    }

    /// Minkowski sum `self + other` of two non-empty intervals.
    pub fn sum(&self, other: &Interval) -> Self {
        Self {
            lo: self.lo + other.lo,
            hi: self.hi + other.hi,
        }
    }

    pub fn intersect(&self, other: &Interval) -> Self {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if hi < lo {
            Self::empty_at(lo)
        } else {
            Self { lo, hi }
        }
    }

    pub fn sites(&self) -> impl Iterator<Item = i64> {
        self.lo..=self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            write!(f, "{{}}")
        } else {
            write!(f, "{{{}, .., {}}}", self.lo, self.hi)
        }
    }
}

/// `base^len`, failing when the pattern space does not fit into a `u64` code.
pub fn pattern_count(base: usize, len: usize) -> Result<u64> {
    (base as u64)
        .checked_pow(len as u32)
        .ok_or(CpaError::PatternSpaceOverflow { base, len })
}

pub fn encode_symbols(base: usize, symbols: &[usize]) -> u64 {
    symbols
        .iter()
        .fold(0u64, |acc, &s| acc * base as u64 + s as u64)
}

pub fn decode_symbols(base: usize, len: usize, mut code: u64) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = (code % base as u64) as usize;
        code /= base as u64;
    }
    out
}

/// Restricts a pattern code over `window` to the sub-window `sub`.
pub fn restrict_code(base: usize, window: &Interval, sub: &Interval, code: u64) -> u64 {
    if sub.is_empty() {
        return 0;
    }
    let b = base as u64;
    let drop_right = (window.hi - sub.hi) as u32;
    (code / b.pow(drop_right)) % b.pow(sub.len() as u32)
}

/// Symbol at `site` of a pattern code over `window`.
pub fn symbol_at(base: usize, window: &Interval, site: i64, code: u64) -> usize {
    restrict_code(base, window, &Interval::single(site), code) as usize
}

/// Explicit form of a pattern.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Pattern {
    pub window: Interval,
    pub symbols: Vec<Symbol>,
}

impl Pattern {
    pub fn new(window: Interval, symbols: Vec<Symbol>) -> Result<Self> {
        if symbols.len() != window.len() {
            return Err(CpaError::WindowMismatch {
                expected: format!("{} symbols", window.len()),
                found: format!("{} symbols", symbols.len()),
            });
        }
        Ok(Self { window, symbols })
    }

    pub fn from_code(window: Interval, base: usize, code: u64) -> Self {
        Self {
            window,
            symbols: decode_symbols(base, window.len(), code)
                .into_iter()
                .map(Symbol)
                .collect(),
        }
    }

    pub fn code(&self, base: usize) -> u64 {
        let raw: Vec<usize> = self.symbols.iter().map(|s| s.0).collect();
        encode_symbols(base, &raw)
    }
}

/// Nonnegative weights over the patterns of one window, stored sparsely.
///
/// Only strictly positive weights are stored. Iteration is in increasing code
/// order so that every reduction over a density is deterministic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseDensity {
    window: Interval,
    base: usize,
    weights: BTreeMap<u64, f64>,
}

impl SparseDensity {
    /// Collects weights, summing duplicate codes and dropping zeros. No normalization.
    pub fn from_weights<I>(window: Interval, base: usize, weights: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, f64)>,
    {
        let space = pattern_count(base, window.len())?;
        let mut map = BTreeMap::new();
        for (code, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(CpaError::InvalidWeight(w));
            }
            if code >= space {
                return Err(CpaError::InvalidSymbol {
                    symbol: code as usize,
                    count: space as usize,
                });
            }
            if w > 0.0 {
                *map.entry(code).or_insert(0.0) += w;
            }
        }
        Ok(Self {
            window,
            base,
            weights: map,
        })
    }

    /// Builds from a map whose weights are already known to be valid and positive.
    pub(crate) fn from_map_unchecked(window: Interval, base: usize, weights: BTreeMap<u64, f64>) -> Self {
        Self {
            window,
            base,
            weights,
        }
    }

    pub fn point(window: Interval, base: usize, code: u64) -> Result<Self> {
        Self::from_weights(window, base, [(code, 1.0)])
    }

    pub fn point_pattern(pattern: &Pattern, base: usize) -> Result<Self> {
        Self::point(pattern.window, base, pattern.code(base))
    }

    /// Uniform weight over all patterns of the window.
    pub fn uniform(window: Interval, base: usize) -> Result<Self> {
        let n = pattern_count(base, window.len())?;
        let w = 1.0 / n as f64;
        Self::from_weights(window, base, (0..n).map(|c| (c, w)))
    }

    pub fn window(&self) -> Interval {
        self.window
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, code: u64) -> f64 {
        self.weights.get(&code).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.weights.iter().map(|(c, w)| (*c, *w))
    }

    pub fn support(&self) -> impl Iterator<Item = u64> + '_ {
        self.weights.keys().copied()
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.total() - 1.0).abs() <= NORMALIZATION_TOLERANCE
    }

    pub fn normalize(&self) -> Result<Self> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(CpaError::ZeroMass);
        }
        Ok(Self {
            window: self.window,
            base: self.base,
            weights: self.weights.iter().map(|(c, w)| (*c, w / total)).collect(),
        })
    }

    /// Removes entries below `threshold` and renormalizes. A zero threshold is the identity.
    pub fn prune(&self, threshold: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&threshold) {
            return Err(CpaError::InvalidThreshold(threshold));
        }
        if threshold == 0.0 {
            return Ok(self.clone());
        }
        let kept = Self {
            window: self.window,
            base: self.base,
            weights: self
                .weights
                .iter()
                .filter(|(_, w)| **w >= threshold)
                .map(|(c, w)| (*c, *w))
                .collect(),
        };
        kept.normalize()
    }

    /// Mass removed by [`prune`](Self::prune) at `threshold`, relative to the total.
    pub fn pruned_mass(&self, threshold: f64) -> f64 {
        let total = self.total();
        if total <= 0.0 {
            return 0.0;
        }
        self.weights.values().filter(|w| **w < threshold).sum::<f64>() / total
    }

    fn check_compatible(&self, other: &SparseDensity) -> Result<()> {
        if self.window.len() != other.window.len() || self.base != other.base {
            return Err(CpaError::WindowMismatch {
                expected: format!("{} over {} symbols", self.window, self.base),
                found: format!("{} over {} symbols", other.window, other.base),
            });
        }
        Ok(())
    }

    /// `Σ |a − b|` over the union of supports.
    pub fn l1_distance(&self, other: &SparseDensity) -> Result<f64> {
        self.check_compatible(other)?;
        let mut sum = 0.0;
        for (c, w) in &self.weights {
            sum += (w - other.get(*c)).abs();
        }
        for (c, w) in &other.weights {
            if !self.weights.contains_key(c) {
                sum += w;
            }
        }
        Ok(sum)
    }

    /// Marginal onto the sub-window `sub` (absolute sites).
    pub fn marginal(&self, sub: &Interval) -> Result<Self> {
        if !self.window.contains_interval(sub) {
            return Err(CpaError::WindowMismatch {
                expected: format!("sub-window of {}", self.window),
                found: sub.to_string(),
            });
        }
        let mut out = BTreeMap::new();
        for (c, w) in &self.weights {
            *out.entry(restrict_code(self.base, &self.window, sub, *c)).or_insert(0.0) += w;
        }
        Ok(Self {
            window: *sub,
            base: self.base,
            weights: out,
        })
    }

    /// Relabels the sites: the same patterns over a window of equal length.
    pub fn relabel(&self, window: Interval) -> Result<Self> {
        if window.len() != self.window.len() {
            return Err(CpaError::WindowMismatch {
                expected: format!("window of length {}", self.window.len()),
                found: window.to_string(),
            });
        }
        Ok(Self {
            window,
            base: self.base,
            weights: self.weights.clone(),
        })
    }

    /// `λ·self + (1−λ)·other` without renormalization.
    pub fn mix(&self, other: &SparseDensity, lambda: f64) -> Result<Self> {
        self.check_compatible(other)?;
        let mut out: BTreeMap<u64, f64> = self.weights.iter().map(|(c, w)| (*c, lambda * w)).collect();
        for (c, w) in &other.weights {
            *out.entry(*c).or_insert(0.0) += (1.0 - lambda) * w;
        }
        out.retain(|_, w| *w > 0.0);
        Ok(Self {
            window: self.window,
            base: self.base,
            weights: out,
        })
    }

    /// Draws one pattern code proportionally to the weights.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u64> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(CpaError::ZeroMass);
        }
        let mut target = rng.gen::<f64>() * total;
        let mut last = 0;
        for (c, w) in &self.weights {
            last = *c;
            if target < *w {
                return Ok(*c);
            }
            target -= w;
        }
        Ok(last)
    }

    /// Product density over the concatenated window `self.window ∪ other.window`.
    /// `other` must start right after `self` ends.
    pub fn product(&self, other: &SparseDensity) -> Result<Self> {
        if other.window.lo != self.window.hi + 1 || self.base != other.base {
            return Err(CpaError::WindowMismatch {
                expected: format!("window starting at {}", self.window.hi + 1),
                found: other.window.to_string(),
            });
        }
        let window = Interval::new(self.window.lo, other.window.hi)?;
        pattern_count(self.base, window.len())?;
        let shift = (self.base as u64).pow(other.window.len() as u32);
        let mut out = BTreeMap::new();
        for (a, wa) in &self.weights {
            for (b, wb) in &other.weights {
                out.insert(a * shift + b, wa * wb);
            }
        }
        Ok(Self {
            window,
            base: self.base,
            weights: out,
        })
    }
}

/// A collection of pattern densities, one per site of `sites`, each over the
/// pattern window `v` (relative to its site).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeBruijnDensity {
    sites: Interval,
    v: Interval,
    base: usize,
    at: Vec<SparseDensity>,
}

impl DeBruijnDensity {
    /// Every per-site density must be over window `v` and normalized.
    pub fn new(sites: Interval, v: Interval, base: usize, at: Vec<SparseDensity>) -> Result<Self> {
        if sites.is_empty() || at.len() != sites.len() {
            return Err(CpaError::WindowMismatch {
                expected: format!("{} site densities", sites.len()),
                found: format!("{}", at.len()),
            });
        }
        for d in &at {
            if d.window() != v || d.base() != base {
                return Err(CpaError::WindowMismatch {
                    expected: format!("{v} over {base} symbols"),
                    found: format!("{} over {} symbols", d.window(), d.base()),
                });
            }
            if !d.is_normalized() {
                return Err(CpaError::ZeroMass);
            }
        }
        Ok(Self { sites, v, base, at })
    }

    pub(crate) fn new_unchecked(sites: Interval, v: Interval, base: usize, at: Vec<SparseDensity>) -> Self {
        Self { sites, v, base, at }
    }

    /// Independent sites: the pattern density at `i` is the product of the
    /// single-site densities over `i + V`. `site_densities` covers
    /// `sites + V`, each over the one-site window `{0}`.
    pub fn from_site_product(sites: Interval, v: Interval, site_densities: &[SparseDensity]) -> Result<Self> {
        let covered = sites.sum(&v);
        if site_densities.len() != covered.len() {
            return Err(CpaError::WindowMismatch {
                expected: format!("{} single-site densities for {covered}", covered.len()),
                found: format!("{}", site_densities.len()),
            });
        }
        let base = site_densities[0].base();
        let mut at = Vec::with_capacity(sites.len());
        for i in sites.sites() {
            let first = (i + v.lo - covered.lo) as usize;
            let mut acc = site_densities[first].relabel(Interval::single(v.lo))?.normalize()?;
            for (k, rel) in (v.lo + 1..=v.hi).enumerate() {
                let next = site_densities[first + k + 1]
                    .relabel(Interval::single(rel))?
                    .normalize()?;
                acc = acc.product(&next)?;
            }
            at.push(acc);
        }
        Self::new(sites, v, base, at)
    }

    pub fn sites(&self) -> Interval {
        self.sites
    }

    pub fn pattern_window(&self) -> Interval {
        self.v
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn at(&self, site: i64) -> &SparseDensity {
        &self.at[(site - self.sites.lo) as usize]
    }

    pub fn densities(&self) -> &[SparseDensity] {
        &self.at
    }

    /// Single-site marginal at offset 0 of each site's pattern.
    pub fn site_marginals(&self) -> Vec<SparseDensity> {
        self.at
            .iter()
            .map(|d| {
                d.marginal(&Interval::single(0))
                    .expect("pattern window contains offset 0")
            })
            .collect()
    }

    /// Largest L1 distance between corresponding site densities.
    pub fn max_l1_distance(&self, other: &DeBruijnDensity) -> Result<f64> {
        if self.sites != other.sites {
            return Err(CpaError::WindowMismatch {
                expected: self.sites.to_string(),
                found: other.sites.to_string(),
            });
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.at.iter().zip(&other.at) {
            worst = worst.max(a.l1_distance(b)?);
        }
        Ok(worst)
    }

    pub fn support_sizes(&self) -> Vec<usize> {
        self.at.iter().map(|d| d.len()).collect()
    }

    /// Applies [`SparseDensity::prune`] site by site.
    pub fn prune(&self, threshold: f64) -> Result<Self> {
        let at = self
            .at
            .iter()
            .map(|d| d.prune(threshold))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new_unchecked(self.sites, self.v, self.base, at))
    }
}
