//! Binning of individual records onto a regular (u, s) Lexis grid.
//!
//! Each record lives in the single row given by its age at diagnosis `u`.
//! Exposure is the exact overlap of `[s_entry, s_exit)` with each s-bin; an
//! event is counted in the bin whose half-open-from-below interval `(lo, hi]`
//! contains `s_exit`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt17;

/// Tolerance for treating a coordinate as lying on a bin edge.
const EDGE_TOL: f64 = 1e-9;

/// Causes are coded 1 (cause of interest) and 2 (competing); 0 is censoring.
pub const N_CAUSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub id: String,
    pub u: f64,
    pub s_entry: f64,
    pub s_exit: f64,
    pub cause: u8,
}

impl IndividualRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.u.is_finite() && self.u > 0.0) {
            return Err(format!("u must be positive and finite, got {}", self.u));
        }
        if !(self.s_entry.is_finite() && self.s_exit.is_finite()) {
            return Err("s_entry and s_exit must be finite".into());
        }
        if self.s_entry < 0.0 || self.s_entry >= self.s_exit {
            return Err(format!(
                "need 0 <= s_entry < s_exit, got s_entry={} s_exit={}",
                self.s_entry, self.s_exit
            ));
        }
        if self.cause > 2 {
            return Err(format!("cause must be 0, 1 or 2, got {}", self.cause));
        }
        Ok(())
    }
}

/// One axis of the grid: `n` bins of width `width` starting at `lo`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub width: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, width: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && width.is_finite()) {
            return Err(Error::InvalidInput("grid bounds must be finite".into()));
        }
        if width <= 0.0 {
            return Err(Error::InvalidInput(format!("bin width must be positive, got {width}")));
        }
        if hi <= lo {
            return Err(Error::InvalidInput(format!("grid range must satisfy hi > lo, got [{lo}, {hi}]")));
        }
        let n = ((hi - lo) / width - EDGE_TOL).ceil().max(1.0) as usize;
        Ok(Axis { lo, width, n })
    }

    pub fn hi(&self) -> f64 {
        self.edge(self.n)
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.width
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.edge(i)).collect()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.lo + (i as f64 + 0.5) * self.width).collect()
    }

    fn within(&self, x: f64) -> bool {
        let slack = EDGE_TOL * self.width;
        x >= self.lo - slack && x <= self.hi() + slack
    }

    /// Bin of a point with `[lo, hi)` semantics, the top edge mapping to the
    /// last bin.
    pub fn bin_lower_closed(&self, x: f64) -> usize {
        let pos = (x - self.lo) / self.width;
        ((pos + EDGE_TOL).floor().max(0.0) as usize).min(self.n - 1)
    }

    /// Bin of a point with `(lo, hi]` semantics, the bottom edge mapping to
    /// the first bin.
    pub fn bin_upper_closed(&self, x: f64) -> usize {
        let pos = (x - self.lo) / self.width;
        let k = (pos - EDGE_TOL).ceil() as i64 - 1;
        k.clamp(0, self.n as i64 - 1) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexisGrid {
    pub u: Axis,
    pub s: Axis,
}

impl LexisGrid {
    pub fn n_u(&self) -> usize {
        self.u.n
    }

    pub fn n_s(&self) -> usize {
        self.s.n
    }

    pub fn u_edges(&self) -> Vec<f64> {
        self.u.edges()
    }

    pub fn s_edges(&self) -> Vec<f64> {
        self.s.edges()
    }
}

/// Regular grid; an upper bound that is not a whole number of widths away
/// from the lower bound is pushed out to the next edge.
pub fn build_grid(u_lo: f64, u_hi: f64, h_u: f64, s_lo: f64, s_hi: f64, h_s: f64) -> Result<LexisGrid> {
    Ok(LexisGrid {
        u: Axis::new(u_lo, u_hi, h_u)?,
        s: Axis::new(s_lo, s_hi, h_s)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedData {
    pub grid: LexisGrid,
    /// Event counts, index 0 for cause 1 and index 1 for cause 2.
    pub events: Vec<DMatrix<f64>>,
    pub exposure: DMatrix<f64>,
}

impl BinnedData {
    pub fn zeros(grid: LexisGrid) -> Self {
        let (nu, ns) = (grid.n_u(), grid.n_s());
        BinnedData {
            grid,
            events: vec![DMatrix::zeros(nu, ns); N_CAUSES],
            exposure: DMatrix::zeros(nu, ns),
        }
    }

    /// Events for cause 1 or 2.
    pub fn events_for(&self, cause: usize) -> Result<&DMatrix<f64>> {
        cause
            .checked_sub(1)
            .and_then(|i| self.events.get(i))
            .ok_or_else(|| Error::InvalidInput(format!("unknown cause {cause}")))
    }

    pub fn total_events(&self, cause: usize) -> Result<f64> {
        Ok(self.events_for(cause)?.sum())
    }
}

/// Running compensated (Neumaier) sums over a matrix.
struct CompensatedMatrix {
    sum: DMatrix<f64>,
    comp: DMatrix<f64>,
}

impl CompensatedMatrix {
    fn zeros(nr: usize, nc: usize) -> Self {
        CompensatedMatrix {
            sum: DMatrix::zeros(nr, nc),
            comp: DMatrix::zeros(nr, nc),
        }
    }

    fn add(&mut self, i: usize, j: usize, x: f64) {
        let s = self.sum[(i, j)];
        let t = s + x;
        if s.abs() >= x.abs() {
            self.comp[(i, j)] += (s - t) + x;
        } else {
            self.comp[(i, j)] += (x - t) + s;
        }
        self.sum[(i, j)] = t;
    }

    fn finish(self) -> DMatrix<f64> {
        self.sum + self.comp
    }
}

fn check_in_grid(rec: &IndividualRecord, grid: &LexisGrid) -> bool {
    grid.u.within(rec.u) && grid.s.within(rec.s_entry) && grid.s.within(rec.s_exit)
}

pub fn bin_records(records: &[IndividualRecord], grid: &LexisGrid) -> Result<BinnedData> {
    let outside: Vec<String> = records
        .iter()
        .filter(|r| !check_in_grid(r, grid))
        .map(|r| r.id.clone())
        .collect();
    if !outside.is_empty() {
        return Err(Error::RecordsOutsideGrid { ids: outside });
    }
    for r in records {
        r.validate().map_err(|m| Error::InvalidInput(format!("record {}: {m}", r.id)))?;
    }

    let (nu, ns) = (grid.n_u(), grid.n_s());
    let mut events = vec![DMatrix::zeros(nu, ns); N_CAUSES];
    let mut exposure = CompensatedMatrix::zeros(nu, ns);
    for r in records {
        let j = grid.u.bin_lower_closed(r.u);
        add_exposure(&mut exposure, j, &grid.s, r.s_entry, r.s_exit);
        if r.cause > 0 {
            let k = grid.s.bin_upper_closed(r.s_exit);
            events[r.cause as usize - 1][(j, k)] += 1.0;
        }
    }
    Ok(BinnedData {
        grid: grid.clone(),
        events,
        exposure: exposure.finish(),
    })
}

fn add_exposure(acc: &mut CompensatedMatrix, row: usize, axis: &Axis, entry: f64, exit: f64) {
    let first = axis.bin_lower_closed(entry);
    let last = axis.bin_upper_closed(exit);
    for k in first..=last {
        let lo = axis.edge(k);
        let hi = axis.edge(k + 1);
        let overlap = exit.min(hi) - entry.max(lo);
        if overlap > 0.0 {
            acc.add(row, k, overlap);
        }
    }
}

/// Numbers at risk at the lower edge of every s-bin, per u-row, plus the
/// number still under observation at the upper edge of the last bin.
#[derive(Debug, Clone, PartialEq)]
pub struct AtRiskCounts {
    pub entering: DMatrix<f64>,
    pub end_survivors: Vec<f64>,
}

pub fn at_risk_counts(records: &[IndividualRecord], grid: &LexisGrid) -> Result<AtRiskCounts> {
    let (nu, ns) = (grid.n_u(), grid.n_s());
    let mut entering = DMatrix::zeros(nu, ns);
    let mut end_survivors = vec![0.0; nu];
    let top = grid.s.hi();
    for r in records {
        if !check_in_grid(r, grid) {
            return Err(Error::RecordsOutsideGrid { ids: vec![r.id.clone()] });
        }
        let j = grid.u.bin_lower_closed(r.u);
        for k in 0..ns {
            let lo = grid.s.edge(k);
            if r.s_entry <= lo + EDGE_TOL * grid.s.width && r.s_exit > lo + EDGE_TOL * grid.s.width {
                entering[(j, k)] += 1.0;
            }
        }
        if r.s_exit >= top - EDGE_TOL * grid.s.width {
            end_survivors[j] += 1.0;
        }
    }
    Ok(AtRiskCounts { entering, end_survivors })
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: String,
    u: f64,
    #[serde(default)]
    s_entry: Option<f64>,
    s_exit: f64,
    cause: u8,
}

/// Reads `id,u,s_entry,s_exit,cause` records. Row numbers in errors count
/// the header as row 1.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<IndividualRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in ["id", "u", "s_exit", "cause"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Data {
                row: 1,
                message: format!("missing column `{required}`"),
            });
        }
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<RawRecord>().enumerate() {
        let line = i + 2;
        let raw = row.map_err(|e| Error::Data {
            row: line,
            message: e.to_string(),
        })?;
        let rec = IndividualRecord {
            id: raw.id,
            u: raw.u,
            s_entry: raw.s_entry.unwrap_or(0.0),
            s_exit: raw.s_exit,
            cause: raw.cause,
        };
        rec.validate().map_err(|message| Error::Data { row: line, message })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_records_file(path: &Path) -> Result<Vec<IndividualRecord>> {
    read_records(std::fs::File::open(path)?)
}

pub fn write_records<W: Write>(records: &[IndividualRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "u", "s_entry", "s_exit", "cause"])?;
    for r in records {
        w.write_record([
            r.id.clone(),
            fmt17(r.u),
            fmt17(r.s_entry),
            fmt17(r.s_exit),
            r.cause.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const BINNED_HEADER: [&str; 7] = ["u_lo", "u_hi", "s_lo", "s_hi", "events_cause1", "events_cause2", "exposure"];

/// Writes binned data in long format, one row per bin.
pub fn write_binned<W: Write>(data: &BinnedData, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(BINNED_HEADER)?;
    let g = &data.grid;
    for j in 0..g.n_u() {
        for k in 0..g.n_s() {
            w.write_record([
                fmt17(g.u.edge(j)),
                fmt17(g.u.edge(j + 1)),
                fmt17(g.s.edge(k)),
                fmt17(g.s.edge(k + 1)),
                fmt17(data.events[0][(j, k)]),
                fmt17(data.events[1][(j, k)]),
                fmt17(data.exposure[(j, k)]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct RawBin {
    u_lo: f64,
    s_lo: f64,
    events_cause1: f64,
    events_cause2: f64,
    exposure: f64,
}

fn edge_index(axis: &Axis, x: f64) -> Option<usize> {
    let pos = (x - axis.lo) / axis.width;
    let i = pos.round();
    ((pos - i).abs() <= EDGE_TOL * pos.abs().max(1.0) && i >= 0.0 && (i as usize) < axis.n).then_some(i as usize)
}

/// Reads counts written by [`write_binned`]; bins are located by their lower
/// edges and absent bins stay zero. `u_hi`/`s_hi` columns are optional.
pub fn read_binned<R: Read>(reader: R, grid: &LexisGrid) -> Result<BinnedData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in ["u_lo", "s_lo", "events_cause1", "events_cause2", "exposure"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Data {
                row: 1,
                message: format!("missing column `{required}`"),
            });
        }
    }
    let mut data = BinnedData::zeros(grid.clone());
    let mut seen = vec![false; grid.n_u() * grid.n_s()];
    for (i, row) in rdr.deserialize::<RawBin>().enumerate() {
        let line = i + 2;
        let bad = |message: String| Error::Data { row: line, message };
        let raw = row.map_err(|e| bad(e.to_string()))?;
        let j = edge_index(&grid.u, raw.u_lo).ok_or_else(|| bad(format!("u_lo {} is not a lower bin edge of the grid", raw.u_lo)))?;
        let k = edge_index(&grid.s, raw.s_lo).ok_or_else(|| bad(format!("s_lo {} is not a lower bin edge of the grid", raw.s_lo)))?;
        for (name, v) in [("events_cause1", raw.events_cause1), ("events_cause2", raw.events_cause2), ("exposure", raw.exposure)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if std::mem::replace(&mut seen[j + grid.n_u() * k], true) {
            return Err(bad(format!("duplicate bin (u_lo={}, s_lo={})", raw.u_lo, raw.s_lo)));
        }
        data.events[0][(j, k)] = raw.events_cause1;
        data.events[1][(j, k)] = raw.events_cause2;
        data.exposure[(j, k)] = raw.exposure;
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, u: f64, s_entry: f64, s_exit: f64, cause: u8) -> IndividualRecord {
        IndividualRecord {
            id: id.into(),
            u,
            s_entry,
            s_exit,
            cause,
        }
    }

    fn default_grid() -> LexisGrid {
        build_grid(50.0, 100.0, 1.0, 0.0, 10.5, 0.5).unwrap()
    }

    #[test]
    fn grid_dimensions() {
        let g = default_grid();
        assert_eq!((g.n_u(), g.n_s()), (50, 21));
        let g = build_grid(0.0, 1.0, 1.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!((g.n_u(), g.n_s()), (1, 1));
        let g = build_grid(50.0, 100.3, 1.0, 0.0, 10.5, 0.5).unwrap();
        assert_eq!(g.n_u(), 51);
        assert_eq!(g.u.hi(), 101.0);
        assert!(build_grid(0.0, 1.0, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(build_grid(0.0, 1.0, 1.0, 0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn single_record_overlap() {
        let b = bin_records(&[rec("a", 52.3, 0.0, 1.2, 1)], &default_grid()).unwrap();
        assert_eq!(b.events[0][(2, 2)], 1.0);
        assert_eq!(b.events[0].sum(), 1.0);
        assert_eq!(b.events[1].sum(), 0.0);
        let row: Vec<f64> = b.exposure.row(2).iter().copied().collect();
        assert!((row[0] - 0.5).abs() < 1e-12);
        assert!((row[1] - 0.5).abs() < 1e-12);
        assert!((row[2] - 0.2).abs() < 1e-12);
        assert!(row[3..].iter().all(|v| *v == 0.0));
        assert_eq!(b.exposure.sum() - b.exposure.row(2).sum(), 0.0);
    }

    #[test]
    fn censored_record_has_no_events() {
        let b = bin_records(&[rec("a", 52.3, 0.0, 1.2, 0)], &default_grid()).unwrap();
        assert_eq!(b.events[0].sum() + b.events[1].sum(), 0.0);
        assert!((b.exposure.sum() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn event_on_edge_goes_below() {
        let b = bin_records(&[rec("a", 60.0, 0.0, 1.0, 2)], &default_grid()).unwrap();
        assert_eq!(b.events[1][(10, 1)], 1.0);
        assert_eq!(b.exposure[(10, 2)], 0.0);
        // u on an edge goes to the upper bin, except at the top
        let b = bin_records(&[rec("b", 100.0, 0.0, 10.5, 0)], &default_grid()).unwrap();
        assert!((b.exposure.row(49).sum() - 10.5).abs() < 1e-12);
    }

    #[test]
    fn late_entry_skips_early_bins() {
        let b = bin_records(&[rec("a", 70.2, 1.25, 2.0, 1)], &default_grid()).unwrap();
        assert_eq!(b.exposure[(20, 0)], 0.0);
        assert_eq!(b.exposure[(20, 1)], 0.0);
        assert!((b.exposure[(20, 2)] - 0.25).abs() < 1e-12);
        assert!((b.exposure[(20, 3)] - 0.5).abs() < 1e-12);
        assert_eq!(b.events[0][(20, 3)], 1.0);
    }

    #[test]
    fn outside_records_listed() {
        let recs = vec![
            rec("ok", 60.0, 0.0, 1.0, 0),
            rec("young", 40.0, 0.0, 1.0, 0),
            rec("long", 60.0, 0.0, 11.0, 0),
        ];
        match bin_records(&recs, &default_grid()) {
            Err(Error::RecordsOutsideGrid { ids }) => assert_eq!(ids, vec!["young", "long"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_missing_entry_defaults_to_zero() {
        let text = "id,u,s_entry,s_exit,cause\na,60.5,,2.0,1\nb,70,0.5,3,0\n";
        let recs = read_records(text.as_bytes()).unwrap();
        assert_eq!(recs[0].s_entry, 0.0);
        assert_eq!(recs[1].s_entry, 0.5);
        let text = "id,u,s_exit,cause\na,60.5,2.0,1\n";
        assert_eq!(read_records(text.as_bytes()).unwrap()[0].s_entry, 0.0);
    }

    #[test]
    fn csv_errors_carry_row_numbers() {
        let text = "id,u,s_entry,s_exit,cause\na,60.5,0,2.0,1\nb,70,3,1,0\n";
        match read_records(text.as_bytes()) {
            Err(Error::Data { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "id,u,s_entry,s_exit,cause\na,x,0,2.0,1\n";
        assert!(matches!(read_records(text.as_bytes()), Err(Error::Data { row: 2, .. })));
        let text = "id,u,s_entry,s_exit,cause\na,60,0,2.0,7\n";
        assert!(matches!(read_records(text.as_bytes()), Err(Error::Data { row: 2, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![rec("a", 60.123456789, 0.0, 2.5, 1), rec("b", 99.9, 0.25, 10.5, 0)];
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn at_risk_counts_track_entries() {
        let recs = vec![rec("a", 55.5, 0.0, 1.2, 1), rec("b", 55.1, 0.0, 10.5, 0)];
        let ar = at_risk_counts(&recs, &default_grid()).unwrap();
        assert_eq!(ar.entering[(5, 0)], 2.0);
        assert_eq!(ar.entering[(5, 2)], 2.0);
        assert_eq!(ar.entering[(5, 3)], 1.0);
        assert_eq!(ar.end_survivors[5], 1.0);
    }

    fn arb_record(i: usize) -> impl Strategy<Value = IndividualRecord> {
        (50.0f64..100.0, 0.0f64..4.0, 0.01f64..4.0, 0u8..3).prop_map(move |(u, e, len, c)| {
            rec(&format!("r{i}"), u, e, e + len, c)
        })
    }

    proptest! {
        #[test]
        fn conservation(recs in proptest::collection::vec((0usize..1).prop_flat_map(arb_record), 1..200)) {
            let b = bin_records(&recs, &default_grid()).unwrap();
            for cause in 1..=2u8 {
                let n = recs.iter().filter(|r| r.cause == cause).count() as f64;
                prop_assert_eq!(b.events[cause as usize - 1].sum(), n);
            }
            let total: f64 = recs.iter().map(|r| r.s_exit - r.s_entry).sum();
            prop_assert!((b.exposure.sum() - total).abs() < 1e-9);
            for j in 0..b.grid.n_u() {
                for k in 0..b.grid.n_s() {
                    if b.events[0][(j, k)] + b.events[1][(j, k)] > 0.0 {
                        prop_assert!(b.exposure[(j, k)] > 0.0);
                    }
                }
            }
        }

        #[test]
        fn shift_by_whole_bins_shifts_columns(
            recs in proptest::collection::vec((0usize..1).prop_flat_map(arb_record), 1..50),
            shift in 1usize..4,
        ) {
            let grid = default_grid();
            let delta = shift as f64 * grid.s.width;
            let shifted: Vec<_> = recs.iter().map(|r| {
                rec(&r.id, r.u, r.s_entry + delta, r.s_exit + delta, r.cause)
            }).collect();
            let a = bin_records(&recs, &grid).unwrap();
            let b = bin_records(&shifted, &grid).unwrap();
            for j in 0..grid.n_u() {
                for k in 0..(grid.n_s() - shift) {
                    prop_assert!((a.exposure[(j, k)] - b.exposure[(j, k + shift)]).abs() < 1e-9);
                    prop_assert_eq!(a.events[0][(j, k)], b.events[0][(j, k + shift)]);
                }
            }
        }
    }

    #[test]
    fn binned_round_trip_and_errors() {
        let grid = build_grid(0.0, 3.0, 1.0, 0.0, 1.0, 0.5).unwrap();
        let mut data = BinnedData::zeros(grid.clone());
        data.events[0][(1, 0)] = 2.0;
        data.events[1][(2, 1)] = 1.0;
        data.exposure[(1, 0)] = 1.0 / 7.0;
        data.exposure[(2, 1)] = 3.0;
        let mut buf = Vec::new();
        write_binned(&data, &mut buf).unwrap();
        let back = read_binned(buf.as_slice(), &grid).unwrap();
        assert_eq!(back, data);
        let text = "u_lo,s_lo,events_cause1,events_cause2,exposure\n1,0.5,1,0,2\n";
        let sparse = read_binned(text.as_bytes(), &grid).unwrap();
        assert_eq!(sparse.events[0][(1, 1)], 1.0);
        assert_eq!(sparse.exposure.sum(), 2.0);
        let off_edge = "u_lo,s_lo,events_cause1,events_cause2,exposure\n1.5,0,1,0,2\n";
        assert!(matches!(read_binned(off_edge.as_bytes(), &grid), Err(Error::Data { row: 2, .. })));
        let dup = "u_lo,s_lo,events_cause1,events_cause2,exposure\n1,0,1,0,2\n1,0,1,0,2\n";
        assert!(matches!(read_binned(dup.as_bytes(), &grid), Err(Error::Data { row: 3, .. })));
        let neg = "u_lo,s_lo,events_cause1,events_cause2,exposure\n1,0,-1,0,2\n";
        assert!(matches!(read_binned(neg.as_bytes(), &grid), Err(Error::Data { row: 2, .. })));
        assert!(matches!(read_binned("u_lo,s_lo\n".as_bytes(), &grid), Err(Error::Data { row: 1, .. })));
    }
}
