//! Localization of global pattern densities and their reconstruction.
//!
//! `beta_w` takes a density over `E^{V+W}` to its per-site pattern marginals.
//! `alpha_w_i` goes back: it glues overlapping patterns, weighting the anchor
//! pattern at site `i` by its probability and every other pattern by its
//! probability conditioned on the overlap with its inner neighbour. `alpha_w`
//! averages the reconstructions over all anchors.
//!
//! Reconstruction is only defined for extendable inputs, i.e. when every
//! supported pattern can be glued into at least one consistent assembly.
//! Overlaps only ever involve adjacent sites (two patterns further apart share
//! sites that lie inside the pattern between them), so extendability reduces to
//! pairwise consistency of neighbours.

use std::collections::{BTreeMap, HashMap};

use crate::densities::{DeBruijnDensity, Interval, SparseDensity};
use crate::error::{CpaError, Result};

pub const FACTORIZATION_TOLERANCE: f64 = 1e-9;

/// Pattern window `V = {-p, .., q}` and site set `W = {-t, .., u}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatternGeometry {
    pub v: Interval,
    pub w: Interval,
}

impl PatternGeometry {
    pub fn new(v: Interval, w: Interval) -> Result<Self> {
        if v.lo > 0 || v.hi < 0 {
            return Err(CpaError::Geometry(format!("pattern window {v} must contain 0")));
        }
        if w.is_empty() {
            return Err(CpaError::Geometry("site set W must not be empty".into()));
        }
        Ok(Self { v, w })
    }

    /// `V + W`, the window of the global patterns.
    pub fn global_window(&self) -> Interval {
        self.v.sum(&self.w)
    }

    /// `V₊ = {-p+1, .., q}`.
    pub fn v_plus(&self) -> Interval {
        Interval { lo: self.v.lo + 1, hi: self.v.hi }
    }

    /// `V₋ = {-p, .., q-1}`.
    pub fn v_minus(&self) -> Interval {
        Interval { lo: self.v.lo, hi: self.v.hi - 1 }
    }
}

/// Per-site pattern marginals of a density over `V + W`.
pub fn beta_w(g: &SparseDensity, geom: &PatternGeometry) -> Result<DeBruijnDensity> {
    let window = geom.global_window();
    if g.window() != window {
        return Err(CpaError::WindowMismatch {
            expected: window.to_string(),
            found: g.window().to_string(),
        });
    }
    let at = geom
        .w
        .sites()
        .map(|i| g.marginal(&geom.v.shift(i))?.relabel(geom.v)?.normalize())
        .collect::<Result<Vec<_>>>()?;
    DeBruijnDensity::new(geom.w, geom.v, g.base(), at)
}

fn check_geometry(g: &DeBruijnDensity, geom: &PatternGeometry) -> Result<()> {
    if g.sites() != geom.w || g.pattern_window() != geom.v {
        return Err(CpaError::WindowMismatch {
            expected: format!("sites {} with patterns {}", geom.w, geom.v),
            found: format!("sites {} with patterns {}", g.sites(), g.pattern_window()),
        });
    }
    Ok(())
}

/// Anchored reconstruction `α_{W,i}` of a global density over `V + W`.
pub fn alpha_w_i(g: &DeBruijnDensity, i: i64, geom: &PatternGeometry) -> Result<SparseDensity> {
    check_geometry(g, geom)?;
    if !geom.w.contains(i) {
        return Err(CpaError::Geometry(format!("anchor {i} not in {}", geom.w)));
    }
    let glue = Glue::new(g.densities(), g.pattern_window().len(), g.base(), g.sites().lo);
    let assemblies = glue.anchored((i - geom.w.lo) as usize)?;
    SparseDensity::from_weights(geom.global_window(), g.base(), assemblies)
}

/// Anchor-averaged reconstruction `α_W`.
pub fn alpha_w(g: &DeBruijnDensity, geom: &PatternGeometry) -> Result<SparseDensity> {
    check_geometry(g, geom)?;
    let glue = Glue::new(g.densities(), g.pattern_window().len(), g.base(), g.sites().lo);
    Ok(SparseDensity::from_map_unchecked(
        geom.global_window(),
        g.base(),
        glue.averaged()?,
    ))
}

/// True when every supported pattern takes part in a consistent gluing.
pub fn is_extendable(g: &DeBruijnDensity) -> bool {
    first_dead_end(g.densities(), g.pattern_window().len(), g.base()).is_none()
}

/// Index of a site holding a pattern with no consistent neighbour, if any.
fn first_dead_end(at: &[SparseDensity], len: usize, base: usize) -> Option<usize> {
    if len <= 1 {
        return None;
    }
    let overlap = (base as u64).pow(len as u32 - 1);
    for j in 0..at.len().saturating_sub(1) {
        let suffixes: std::collections::HashSet<u64> = at[j].support().map(|c| c % overlap).collect();
        let prefixes: std::collections::HashSet<u64> = at[j + 1].support().map(|c| c / base as u64).collect();
        if at[j].support().any(|c| !prefixes.contains(&(c % overlap))) {
            return Some(j);
        }
        if at[j + 1].support().any(|c| !suffixes.contains(&(c / base as u64))) {
            return Some(j + 1);
        }
    }
    None
}

/// Drops patterns that cannot be glued to both neighbours and renormalizes.
/// Returns the trimmed density and the largest per-site mass removed.
pub fn trim_to_extendable(g: &DeBruijnDensity) -> Result<(DeBruijnDensity, f64)> {
    let len = g.pattern_window().len();
    if len <= 1 {
        return Ok((g.clone(), 0.0));
    }
    let base = g.base() as u64;
    let overlap = base.pow(len as u32 - 1);
    let mut supports: Vec<std::collections::BTreeSet<u64>> =
        g.densities().iter().map(|d| d.support().collect()).collect();
    for j in 1..supports.len() {
        let suffixes: std::collections::HashSet<u64> = supports[j - 1].iter().map(|c| c % overlap).collect();
        supports[j].retain(|c| suffixes.contains(&(c / base)));
    }
    for j in (0..supports.len().saturating_sub(1)).rev() {
        let prefixes: std::collections::HashSet<u64> = supports[j + 1].iter().map(|c| c / base).collect();
        supports[j].retain(|c| prefixes.contains(&(c % overlap)));
    }
    let mut removed: f64 = 0.0;
    let mut at = Vec::with_capacity(supports.len());
    for (j, (d, keep)) in g.densities().iter().zip(&supports).enumerate() {
        let kept = SparseDensity::from_weights(
            d.window(),
            d.base(),
            d.iter().filter(|(c, _)| keep.contains(c)),
        )?;
        let lost = 1.0 - kept.total() / d.total();
        removed = removed.max(lost);
        let kept = kept.normalize().map_err(|_| CpaError::NonExtendable {
            site: g.sites().lo + j as i64,
        })?;
        at.push(kept);
    }
    Ok((
        DeBruijnDensity::new_unchecked(g.sites(), g.pattern_window(), g.base(), at),
        removed,
    ))
}

/// True when `g = α_{W,i} β_W(g)` for every anchor `i`, within 1e-9 in L1.
pub fn is_v_factorizable(g: &SparseDensity, geom: &PatternGeometry) -> Result<bool> {
    let local = beta_w(g, geom)?;
    for i in geom.w.sites() {
        let back = alpha_w_i(&local, i, geom)?;
        if back.l1_distance(g)? > FACTORIZATION_TOLERANCE {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Conditional tables for gluing a run of consecutive pattern densities.
pub(crate) struct Glue<'a> {
    at: &'a [SparseDensity],
    first_site: i64,
    len: usize,
    base: u64,
    /// `base^(len-1)`: size of the overlap space between neighbouring patterns.
    overlap: u64,
    /// Per site: V₋ prefix → (last symbol, μ[last | prefix]).
    right: Vec<HashMap<u64, Vec<(u64, f64)>>>,
    /// Per site: V₊ suffix → (first symbol, μ[first | suffix]).
    left: Vec<HashMap<u64, Vec<(u64, f64)>>>,
}

impl<'a> Glue<'a> {
    pub(crate) fn new(at: &'a [SparseDensity], len: usize, base: usize, first_site: i64) -> Self {
        let base = base as u64;
        let overlap = base.pow(len as u32 - 1);
        let mut right = Vec::with_capacity(at.len());
        let mut left = Vec::with_capacity(at.len());
        for d in at {
            let mut prefix_mass: HashMap<u64, f64> = HashMap::new();
            let mut suffix_mass: HashMap<u64, f64> = HashMap::new();
            for (c, w) in d.iter() {
                *prefix_mass.entry(c / base).or_insert(0.0) += w;
                *suffix_mass.entry(c % overlap).or_insert(0.0) += w;
            }
            let mut r: HashMap<u64, Vec<(u64, f64)>> = HashMap::new();
            let mut l: HashMap<u64, Vec<(u64, f64)>> = HashMap::new();
            for (c, w) in d.iter() {
                r.entry(c / base)
                    .or_default()
                    .push((c % base, w / prefix_mass[&(c / base)]));
                l.entry(c % overlap)
                    .or_default()
                    .push((c / overlap, w / suffix_mass[&(c % overlap)]));
            }
            right.push(r);
            left.push(l);
        }
        Self {
            at,
            first_site,
            len,
            base,
            overlap,
            right,
            left,
        }
    }

    /// All assemblies with positive weight for the anchor at index `anchor`,
    /// in a deterministic order.
    pub(crate) fn anchored(&self, anchor: usize) -> Result<Vec<(u64, f64)>> {
        let mut current: Vec<(u64, f64)> = self.at[anchor].iter().collect();
        let mut span = self.len as u32;
        for l in anchor + 1..self.at.len() {
            let mut next = Vec::with_capacity(current.len());
            for (code, w) in &current {
                let prefix = code % self.overlap;
                let ext = self.right[l].get(&prefix).ok_or(CpaError::NonExtendable {
                    site: self.first_site + l as i64 - 1,
                })?;
                for (last, cond) in ext {
                    next.push((code * self.base + last, w * cond));
                }
            }
            current = next;
            span += 1;
        }
        for k in (0..anchor).rev() {
            let mut next = Vec::with_capacity(current.len());
            let place = self.base.pow(span);
            let shift = self.base.pow(span - (self.len as u32 - 1));
            for (code, w) in &current {
                let suffix = code / shift;
                let ext = self.left[k].get(&suffix).ok_or(CpaError::NonExtendable {
                    site: self.first_site + k as i64 + 1,
                })?;
                for (first, cond) in ext {
                    next.push((code + first * place, w * cond));
                }
            }
            current = next;
            span += 1;
        }
        Ok(current)
    }

    /// Mean of the anchored reconstructions over all anchors.
    pub(crate) fn averaged(&self) -> Result<BTreeMap<u64, f64>> {
        let n = self.at.len();
        if n == 1 {
            return Ok(self.at[0].iter().collect());
        }
        let mut acc: BTreeMap<u64, f64> = BTreeMap::new();
        for anchor in 0..n {
            for (c, w) in self.anchored(anchor)? {
                *acc.entry(c).or_insert(0.0) += w;
            }
        }
        let scale = 1.0 / n as f64;
        for w in acc.values_mut() {
            *w *= scale;
        }
        acc.retain(|_, w| *w > 0.0);
        Ok(acc)
    }
}
