//! Estimation of the local function from a flow map, composition of local
//! functions for wider pattern windows, and table persistence.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::debruijn::Glue;
use crate::densities::{pattern_count, restrict_code, Interval, SparseDensity};
use crate::error::{CpaError, Result};
use crate::partition::{CellPartition, PartitionSpec, Symbol};

/// Largest preimage space a dense table may cover.
pub const MAX_TABLE_ROWS: u64 = 1 << 24;

/// A deterministic, site-independent update rule with the locality property.
pub trait FlowMap: Send + Sync {
    /// Components per site.
    fn dim(&self) -> usize;

    /// The neighbourhood `U = {-r, .., s}`.
    fn neighborhood(&self) -> Interval;

    /// The time step `τ` of one application.
    fn time_step(&self) -> f64;

    /// Maps the values at `i + U` (concatenated, `dim()` each) to the new value at `i`.
    fn apply(&self, window: &[f64], out: &mut [f64]) -> Result<()>;
}

/// Counters gathered while estimating a table.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub preimages: u64,
    pub unexplored: u64,
    pub image_points: u64,
    pub clamped: u64,
    pub dropped: u64,
}

impl BuildStats {
    fn merge(mut self, other: BuildStats) -> BuildStats {
        self.preimages += other.preimages;
        self.unexplored += other.unexplored;
        self.image_points += other.image_points;
        self.clamped += other.clamped;
        self.dropped += other.dropped;
        self
    }

    pub fn clamp_rate(&self) -> f64 {
        if self.image_points == 0 {
            0.0
        } else {
            self.clamped as f64 / self.image_points as f64
        }
    }
}

/// Table metadata, also the header of the file formats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableHeader {
    pub dim: usize,
    pub partition: PartitionSpec,
    pub symbols: usize,
    pub u: Interval,
    pub v: Interval,
    pub tau: f64,
    pub seed: u64,
    /// Test points per cell for each site of `U + V`, left to right.
    pub counts: Vec<usize>,
    /// Set when the table was composed from a narrower one over this site set.
    pub composed_over: Option<Interval>,
}

/// `f₀: E^{U+V} → D(E^V)` stored densely by preimage code.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFunction {
    header: TableHeader,
    /// Image codes ascending with their probabilities; `None` marks an unexplored preimage.
    rows: Vec<Option<Vec<(u64, f64)>>>,
}

impl LocalFunction {
    pub fn from_rows(header: TableHeader, rows: Vec<Option<Vec<(u64, f64)>>>) -> Result<Self> {
        let window = header.u.sum(&header.v);
        let expected = pattern_count(header.symbols, window.len())?;
        if rows.len() as u64 != expected {
            return Err(CpaError::Mismatch(format!(
                "{} rows given for {expected} preimage patterns",
                rows.len()
            )));
        }
        let images = pattern_count(header.symbols, header.v.len())?;
        for row in rows.iter().flatten() {
            let mut total = 0.0;
            for w in row.windows(2) {
                if w[0].0 >= w[1].0 {
                    return Err(CpaError::Format("image codes must be strictly ascending".into()));
                }
            }
            for &(c, p) in row {
                if c >= images {
                    return Err(CpaError::Format(format!("image code {c} out of range")));
                }
                if !(p.is_finite() && p > 0.0) {
                    return Err(CpaError::InvalidWeight(p));
                }
                total += p;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(CpaError::Format(format!("image density sums to {total}")));
            }
        }
        Ok(Self { header, rows })
    }

    pub fn header(&self) -> &TableHeader {
        &self.header
    }

    pub fn neighborhood(&self) -> Interval {
        self.header.u
    }

    pub fn pattern_window(&self) -> Interval {
        self.header.v
    }

    /// `U + V`.
    pub fn preimage_window(&self) -> Interval {
        self.header.u.sum(&self.header.v)
    }

    pub fn base(&self) -> usize {
        self.header.symbols
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn explored_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.is_some()).count()
    }

    pub fn rows(&self) -> impl Iterator<Item = (u64, Option<&[(u64, f64)]>)> + '_ {
        self.rows.iter().enumerate().map(|(c, r)| (c as u64, r.as_deref()))
    }

    /// The image density of preimage `code`, or `None` when unexplored.
    pub fn get(&self, code: u64) -> Option<&[(u64, f64)]> {
        self.rows.get(code as usize).and_then(|r| r.as_deref())
    }

    pub fn lookup(&self, code: u64) -> Result<&[(u64, f64)]> {
        self.get(code).ok_or(CpaError::UnexploredPreimage {
            code,
            site: None,
            step: None,
        })
    }

    /// The image density of preimage `code` as a density over `V`.
    pub fn image(&self, code: u64) -> Result<SparseDensity> {
        let row = self.lookup(code)?;
        SparseDensity::from_weights(self.header.v, self.header.symbols, row.iter().copied())
    }

    pub fn check_partition(&self, partition: &dyn CellPartition) -> Result<()> {
        if partition.num_symbols() != self.header.symbols || partition.spec() != self.header.partition {
            return Err(CpaError::Mismatch(format!(
                "table built for {:?} with {} symbols",
                self.header.partition, self.header.symbols
            )));
        }
        Ok(())
    }
}

/// Read access to a local function, possibly computed lazily.
pub trait LocalRule: Send + Sync {
    fn header(&self) -> &TableHeader;

    /// The image density of preimage `code`, `None` when unexplored.
    fn row(&self, code: u64) -> Result<Option<&[(u64, f64)]>>;

    fn neighborhood(&self) -> Interval {
        self.header().u
    }

    fn pattern_window(&self) -> Interval {
        self.header().v
    }

    fn base(&self) -> usize {
        self.header().symbols
    }
}

impl LocalRule for LocalFunction {
    fn header(&self) -> &TableHeader {
        &self.header
    }

    fn row(&self, code: u64) -> Result<Option<&[(u64, f64)]>> {
        Ok(self.get(code))
    }
}

/// Fixed test points of one cell: the first `count` draws of the cell's own stream.
pub fn cell_points(partition: &dyn CellPartition, cell: usize, count: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell as u64);
    Ok(partition
        .sample_cell(Symbol(cell), &mut rng, count)?
        .into_iter()
        .flatten()
        .collect())
}

/// Encodes an image point, clamping it into the domain first. Returns the
/// symbol and whether a clamp happened, or `None` for non-finite points.
pub(crate) fn encode_image(partition: &dyn CellPartition, point: &mut [f64]) -> Result<Option<(usize, bool)>> {
    if point.iter().any(|x| !x.is_finite()) {
        return Ok(None);
    }
    let clamped = partition.domain().clamp(point);
    Ok(Some((partition.encode(point)?.index(), clamped)))
}

/// Iterates the index tuples of a product of index ranges, last position fastest.
pub(crate) struct Odometer {
    radix: Vec<usize>,
    current: Vec<usize>,
    started: bool,
}

impl Odometer {
    pub(crate) fn new(radix: Vec<usize>) -> Self {
        let current = vec![0; radix.len()];
        Self {
            radix,
            current,
            started: false,
        }
    }

    pub(crate) fn advance(&mut self) -> Option<&[usize]> {
        if !self.started {
            self.started = true;
            return if self.radix.iter().all(|&r| r > 0) {
                Some(&self.current)
            } else {
                None
            };
        }
        for k in (0..self.radix.len()).rev() {
            self.current[k] += 1;
            if self.current[k] < self.radix[k] {
                return Some(&self.current);
            }
            self.current[k] = 0;
        }
        None
    }
}

/// Image pattern counts for one preimage given the test points of every
/// window site (`points[j]` flat, `dim` values per point).
pub(crate) fn image_counts(
    flow: &dyn FlowMap,
    partition: &dyn CellPartition,
    v_len: usize,
    points: &[Vec<f64>],
    stats: &mut BuildStats,
) -> Result<BTreeMap<u64, u64>> {
    let n = flow.dim();
    let u_len = flow.neighborhood().len();
    let base = partition.num_symbols() as u64;
    let counts: Vec<usize> = points.iter().map(|p| p.len() / n).collect();
    // For every offset, the image symbol of each tuple of points in its window.
    let mut symbols: Vec<Vec<Option<usize>>> = Vec::with_capacity(v_len);
    let mut window = vec![0.0; u_len * n];
    let mut out = vec![0.0; n];
    for k in 0..v_len {
        let radix = counts[k..k + u_len].to_vec();
        let mut table = Vec::with_capacity(radix.iter().product());
        let mut odo = Odometer::new(radix);
        while let Some(idx) = odo.advance() {
            for (t, &i) in idx.iter().enumerate() {
                window[t * n..(t + 1) * n].copy_from_slice(&points[k + t][i * n..(i + 1) * n]);
            }
            flow.apply(&window, &mut out)?;
            let encoded = encode_image(partition, &mut out)?;
            stats.image_points += 1;
            match encoded {
                Some((s, clamped)) => {
                    stats.clamped += clamped as u64;
                    table.push(Some(s));
                }
                None => {
                    stats.dropped += 1;
                    table.push(None);
                }
            }
        }
        symbols.push(table);
    }
    let mut hist = BTreeMap::new();
    if v_len == 1 {
        for s in symbols[0].iter().flatten() {
            *hist.entry(*s as u64).or_insert(0) += 1;
        }
        return Ok(hist);
    }
    // Strides of each offset's sub-window inside its own table.
    let strides: Vec<Vec<usize>> = (0..v_len)
        .map(|k| {
            let mut s = vec![1; u_len];
            for t in (0..u_len - 1).rev() {
                s[t] = s[t + 1] * counts[k + t + 1];
            }
            s
        })
        .collect();
    let mut odo = Odometer::new(counts.clone());
    'tuples: while let Some(idx) = odo.advance() {
        let mut code = 0;
        for k in 0..v_len {
            let pos: usize = (0..u_len).map(|t| idx[k + t] * strides[k][t]).sum();
            match symbols[k][pos] {
                Some(s) => code = code * base + s as u64,
                None => continue 'tuples,
            }
        }
        *hist.entry(code).or_insert(0) += 1;
    }
    Ok(hist)
}

/// Everything needed to estimate single rows of `f₀`.
struct Estimator {
    flow: Arc<dyn FlowMap>,
    partition: Arc<dyn CellPartition>,
    header: TableHeader,
    /// Test points of every cell, enough for the largest count.
    bank: Vec<Vec<f64>>,
}

impl Estimator {
    fn new(
        flow: Arc<dyn FlowMap>,
        partition: Arc<dyn CellPartition>,
        v: Interval,
        counts: &[usize],
        seed: u64,
    ) -> Result<Self> {
        let u = flow.neighborhood();
        if v.lo > 0 || v.hi < 0 {
            return Err(CpaError::Geometry(format!("pattern window {v} must contain 0")));
        }
        if u.lo > 0 || u.hi < 0 {
            return Err(CpaError::Geometry(format!("neighbourhood {u} must contain 0")));
        }
        if flow.dim() != partition.dim() {
            return Err(CpaError::Mismatch(format!(
                "flow has {} components, partition {}",
                flow.dim(),
                partition.dim()
            )));
        }
        let window = u.sum(&v);
        if counts.len() != window.len() || counts.contains(&0) {
            return Err(CpaError::InvalidParameters(format!(
                "need {} positive test point counts, got {counts:?}",
                window.len()
            )));
        }
        let base = partition.num_symbols();
        let rows = pattern_count(base, window.len())?;
        if rows > MAX_TABLE_ROWS {
            return Err(CpaError::StateSpaceTooLarge {
                states: rows as u128,
                limit: MAX_TABLE_ROWS as u128,
            });
        }
        let max_count = *counts.iter().max().expect("nonempty");
        let bank = (0..base)
            .map(|cell| cell_points(partition.as_ref(), cell, max_count, seed))
            .collect::<Result<_>>()?;
        let header = TableHeader {
            dim: partition.dim(),
            partition: partition.spec(),
            symbols: base,
            u,
            v,
            tau: flow.time_step(),
            seed,
            counts: counts.to_vec(),
            composed_over: None,
        };
        Ok(Self {
            flow,
            partition,
            header,
            bank,
        })
    }

    fn rows(&self) -> u64 {
        pattern_count(self.header.symbols, self.header.u.sum(&self.header.v).len()).expect("checked in new")
    }

    fn row(&self, code: u64, stats: &mut BuildStats) -> Result<Option<Vec<(u64, f64)>>> {
        let window = self.header.u.sum(&self.header.v);
        let n = self.header.dim;
        let cells = crate::densities::decode_symbols(self.header.symbols, window.len(), code);
        let points: Vec<Vec<f64>> = cells
            .iter()
            .zip(&self.header.counts)
            .map(|(&c, &k)| self.bank[c][..k * n].to_vec())
            .collect();
        stats.preimages += 1;
        let hist = image_counts(
            self.flow.as_ref(),
            self.partition.as_ref(),
            self.header.v.len(),
            &points,
            stats,
        )?;
        let total: u64 = hist.values().sum();
        if total == 0 {
            stats.unexplored += 1;
            return Ok(None);
        }
        Ok(Some(
            hist.into_iter().map(|(c, k)| (c, k as f64 / total as f64)).collect(),
        ))
    }
}

fn warn_on_clamps(stats: &BuildStats) {
    if stats.clamp_rate() > 0.01 {
        log::warn!(
            "{:.2}% of image points left the domain and were clamped",
            100.0 * stats.clamp_rate()
        );
    }
}

/// Estimates `f₀` by pushing product test sets through the flow map.
///
/// `counts` gives the number of test points per cell for each site of
/// `U + V`, left to right. The points of a cell are fixed by `seed` and the
/// cell, so preimages sharing a cell at a site share its points.
pub fn estimate_f0(
    flow: Arc<dyn FlowMap>,
    partition: Arc<dyn CellPartition>,
    v: Interval,
    counts: &[usize],
    seed: u64,
) -> Result<(LocalFunction, BuildStats)> {
    let est = Estimator::new(flow, partition, v, counts, seed)?;
    let results: Vec<(Option<Vec<(u64, f64)>>, BuildStats)> = (0..est.rows())
        .into_par_iter()
        .map(|code| {
            let mut stats = BuildStats::default();
            let row = est.row(code, &mut stats)?;
            Ok((row, stats))
        })
        .collect::<Result<_>>()?;
    let mut stats = BuildStats::default();
    let mut rows = Vec::with_capacity(results.len());
    for (row, s) in results {
        rows.push(row);
        stats = stats.merge(s);
    }
    warn_on_clamps(&stats);
    Ok((
        LocalFunction {
            header: est.header,
            rows,
        },
        stats,
    ))
}

/// A local function whose rows are estimated the first time they are read.
///
/// Rows equal those of [`estimate_f0`] with the same arguments.
pub struct LazyLocalFunction {
    est: Estimator,
    rows: Vec<OnceLock<Option<Vec<(u64, f64)>>>>,
    stats: std::sync::Mutex<BuildStats>,
}

impl LazyLocalFunction {
    pub fn new(
        flow: Arc<dyn FlowMap>,
        partition: Arc<dyn CellPartition>,
        v: Interval,
        counts: &[usize],
        seed: u64,
    ) -> Result<Self> {
        let est = Estimator::new(flow, partition, v, counts, seed)?;
        let rows = (0..est.rows()).map(|_| OnceLock::new()).collect();
        Ok(Self {
            est,
            rows,
            stats: Default::default(),
        })
    }

    /// Counters over the rows estimated so far.
    pub fn stats(&self) -> BuildStats {
        self.stats.lock().expect("stats lock").clone()
    }

    /// Number of rows estimated so far.
    pub fn estimated_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.get().is_some()).count()
    }

    /// Estimates every remaining row and returns the full table.
    pub fn into_table(self) -> Result<LocalFunction> {
        (0..self.rows.len() as u64)
            .into_par_iter()
            .try_for_each(|c| self.row(c).map(|_| ()))?;
        warn_on_clamps(&self.stats());
        let rows = self
            .rows
            .into_iter()
            .map(|r| r.into_inner().expect("all rows estimated"))
            .collect();
        Ok(LocalFunction {
            header: self.est.header,
            rows,
        })
    }
}

impl LocalRule for LazyLocalFunction {
    fn header(&self) -> &TableHeader {
        &self.est.header
    }

    fn row(&self, code: u64) -> Result<Option<&[(u64, f64)]>> {
        let Some(cell) = self.rows.get(code as usize) else {
            return Ok(None);
        };
        if let Some(row) = cell.get() {
            return Ok(row.as_deref());
        }
        let mut stats = BuildStats::default();
        let row = self.est.row(code, &mut stats)?;
        if cell.set(row).is_ok() {
            let mut total = self.stats.lock().expect("stats lock");
            *total = total.clone().merge(stats);
        }
        Ok(cell.get().expect("just set").as_deref())
    }
}

/// Builds the local function for `V = Ṽ + W` from one for `Ṽ` by gluing the
/// narrow images over `W`. This approximates a directly estimated table.
pub fn compose_f0(small: &dyn LocalRule, w: Interval) -> Result<LocalFunction> {
    if w.is_empty() {
        return Err(CpaError::Geometry("composition needs a nonempty site set".into()));
    }
    let base = small.base();
    let u = small.neighborhood();
    let small_v = small.pattern_window();
    let small_window = u.sum(&small_v);
    let v = small_v.sum(&w);
    let window = u.sum(&v);
    let rows_total = pattern_count(base, window.len())?;
    if rows_total > MAX_TABLE_ROWS {
        return Err(CpaError::StateSpaceTooLarge {
            states: rows_total as u128,
            limit: MAX_TABLE_ROWS as u128,
        });
    }
    let rows: Vec<Option<Vec<(u64, f64)>>> = (0..rows_total)
        .into_par_iter()
        .map(|code| {
            let mut parts = Vec::with_capacity(w.len());
            for i in w.sites() {
                let sub = restrict_code(base, &window, &small_window.shift(i), code);
                let Some(row) = small.row(sub)? else {
                    return Ok(None);
                };
                parts.push(SparseDensity::from_map_unchecked(
                    small_v,
                    base,
                    row.iter().copied().collect(),
                ));
            }
            let glue = Glue::new(&parts, small_v.len(), base, w.lo);
            Ok(glue.averaged().ok().map(|g| g.into_iter().collect()))
        })
        .collect::<Result<_>>()?;
    let mut header = small.header().clone();
    header.v = v;
    header.composed_over = (w != Interval::single(0)).then_some(w);
    Ok(LocalFunction { header, rows })
}

const MAGIC: &[u8; 4] = b"CPA1";
const VERSION: u32 = 1;

/// On-disk representations of a table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Binary,
    Json,
}

impl TableFormat {
    /// JSON for `.json` paths, binary otherwise.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => TableFormat::Json,
            _ => TableFormat::Binary,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonTable {
    magic: String,
    version: u32,
    header: TableHeader,
    records: Vec<JsonRecord>,
    checksum: u32,
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    preimage: u64,
    images: Vec<(u64, f64)>,
}

/// Header and records in the binary layout, without magic and checksum.
fn binary_payload(table: &LocalFunction) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let header = serde_json::to_vec(&table.header)?;
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(table.explored_rows() as u64).to_le_bytes());
    for (code, row) in table.rows() {
        if let Some(row) = row {
            buf.extend_from_slice(&code.to_le_bytes());
            buf.extend_from_slice(&(row.len() as u32).to_le_bytes());
            for (c, p) in row {
                buf.extend_from_slice(&c.to_le_bytes());
                buf.extend_from_slice(&p.to_bits().to_le_bytes());
            }
        }
    }
    Ok(buf)
}

pub fn write_table<W: Write>(table: &LocalFunction, format: TableFormat, mut out: W) -> Result<()> {
    let payload = binary_payload(table)?;
    let checksum = crc32fast::hash(&payload);
    match format {
        TableFormat::Binary => {
            out.write_all(MAGIC)?;
            out.write_all(&payload)?;
            out.write_all(&checksum.to_le_bytes())?;
        }
        TableFormat::Json => {
            let doc = JsonTable {
                magic: String::from_utf8_lossy(MAGIC).into_owned(),
                version: VERSION,
                header: table.header.clone(),
                records: table
                    .rows()
                    .filter_map(|(c, r)| {
                        r.map(|r| JsonRecord {
                            preimage: c,
                            images: r.to_vec(),
                        })
                    })
                    .collect(),
                checksum,
            };
            serde_json::to_writer_pretty(&mut out, &doc)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_f0(table: &LocalFunction, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    write_table(table, TableFormat::for_path(path), std::io::BufWriter::new(file))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(CpaError::Format("unexpected end of table data".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn assemble(header: TableHeader, records: Vec<(u64, Vec<(u64, f64)>)>) -> Result<LocalFunction> {
    let declared = header.symbols;
    let actual = header.partition.build()?.num_symbols();
    if declared != actual {
        return Err(CpaError::Mismatch(format!(
            "header declares {declared} symbols, partition has {actual}"
        )));
    }
    let total = pattern_count(declared, header.u.sum(&header.v).len())?;
    if total > MAX_TABLE_ROWS {
        return Err(CpaError::StateSpaceTooLarge {
            states: total as u128,
            limit: MAX_TABLE_ROWS as u128,
        });
    }
    let mut rows = vec![None; total as usize];
    for (code, images) in records {
        let slot = rows
            .get_mut(code as usize)
            .ok_or_else(|| CpaError::Format(format!("preimage code {code} out of range")))?;
        *slot = Some(images);
    }
    LocalFunction::from_rows(header, rows)
}

fn parse_binary(data: &[u8]) -> Result<LocalFunction> {
    if data.len() < 8 || &data[..4] != MAGIC {
        return Err(CpaError::Format("missing CPA1 magic".into()));
    }
    let body = &data[4..data.len() - 4];
    let stored = u32::from_le_bytes(data[data.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CpaError::Checksum { stored, computed });
    }
    let mut cur = Cursor { data: body, pos: 0 };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CpaError::Format(format!("unsupported table version {version}")));
    }
    let header_len = cur.u32()? as usize;
    let header: TableHeader = serde_json::from_slice(cur.take(header_len)?)?;
    let explored = cur.u64()?;
    let mut records = Vec::new();
    for _ in 0..explored {
        let code = cur.u64()?;
        let len = cur.u32()? as usize;
        let mut images = Vec::with_capacity(len);
        for _ in 0..len {
            let c = cur.u64()?;
            let p = f64::from_bits(cur.u64()?);
            images.push((c, p));
        }
        records.push((code, images));
    }
    if cur.pos != body.len() {
        return Err(CpaError::Format("trailing bytes after records".into()));
    }
    assemble(header, records)
}

fn parse_json(data: &[u8]) -> Result<LocalFunction> {
    let doc: JsonTable = serde_json::from_slice(data)?;
    if doc.magic.as_bytes() != MAGIC {
        return Err(CpaError::Format(format!("wrong magic {:?}", doc.magic)));
    }
    if doc.version != VERSION {
        return Err(CpaError::Format(format!("unsupported table version {}", doc.version)));
    }
    let table = assemble(
        doc.header,
        doc.records.into_iter().map(|r| (r.preimage, r.images)).collect(),
    )?;
    let computed = crc32fast::hash(&binary_payload(&table)?);
    if computed != doc.checksum {
        return Err(CpaError::Checksum {
            stored: doc.checksum,
            computed,
        });
    }
    Ok(table)
}

/// Reads a table in either format, recognised by its first bytes.
pub fn read_table<R: Read>(mut input: R) -> Result<LocalFunction> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    match data.iter().find(|b| !b.is_ascii_whitespace()) {
        Some(b'{') => parse_json(&data),
        _ => parse_binary(&data),
    }
}

pub fn load_f0(path: &Path) -> Result<LocalFunction> {
    read_table(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::IdentityFlow;
    use crate::partition::UniformPartition;

    #[test]
    fn identity_table_is_a_delta() {
        let p = UniformPartition::unit_interval(3).unwrap();
        let (f0, stats) = estimate_f0(Arc::new(IdentityFlow::new(1)), Arc::new(p), Interval::single(0), &[4], 1).unwrap();
        assert_eq!(stats.unexplored, 0);
        for c in 0..3 {
            assert_eq!(f0.lookup(c).unwrap(), &[(c, 1.0)]);
        }
    }

    #[test]
    fn odometer_visits_product_in_order() {
        let mut odo = Odometer::new(vec![2, 3]);
        let mut seen = Vec::new();
        while let Some(i) = odo.advance() {
            seen.push(i.to_vec());
        }
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[1], vec![0, 1]);
        assert_eq!(seen[5], vec![1, 2]);
        assert!(Odometer::new(vec![2, 0]).advance().is_none());
    }

    #[test]
    fn binary_and_json_roundtrip() {
        let p = UniformPartition::unit_interval(2).unwrap();
        let (f0, _) = estimate_f0(
            Arc::new(IdentityFlow::new(1)),
            Arc::new(p),
            Interval::new(0, 1).unwrap(),
            &[2, 3],
            5,
        )
        .unwrap();
        for format in [TableFormat::Binary, TableFormat::Json] {
            let mut buf = Vec::new();
            write_table(&f0, format, &mut buf).unwrap();
            assert_eq!(read_table(&buf[..]).unwrap(), f0);
        }
    }

    #[test]
    fn json_keeps_every_float_bit() {
        let flow = Arc::new(crate::models::AveragingFlow);
        let p = Arc::new(crate::models::AveragingFlow::partition());
        let (f0, _) = estimate_f0(flow, p, Interval::single(0), &[7, 7], 2).unwrap();
        let mut buf = Vec::new();
        write_table(&f0, TableFormat::Json, &mut buf).unwrap();
        assert_eq!(read_table(&buf[..]).unwrap(), f0);
    }
}
