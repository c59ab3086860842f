//! Multipath component (MPC) traces: data model, CSV wire format and validation.
//!
//! A trace is a flat CSV with one propagation path per row. Rows sharing the
//! same `(t, tx_id, rx_id)` form one snapshot of one link. Snapshots keep the
//! order in which they first appear in the file so that a writer/parser pair
//! is an exact round trip; [`TraceSet::time_index`] gives the sorted view.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use thiserror::Error;

/// Exact header of the trace CSV.
pub const TRACE_HEADER: [&str; 12] = [
    "t",
    "tx_id",
    "rx_id",
    "path_id",
    "path_type",
    "delay_s",
    "gain_mag",
    "phase_rad",
    "aod_az_deg",
    "aod_zen_deg",
    "aoa_az_deg",
    "aoa_zen_deg",
];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace header is missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: column `{column}` is not a valid value: {value:?}")]
    Parse {
        row: usize,
        column: &'static str,
        value: String,
    },
    #[error("row {row}: column `{column}` out of range: {value}")]
    OutOfRange {
        row: usize,
        column: &'static str,
        value: f64,
    },
    #[error("row {row}: malformed CSV record: {source}")]
    Csv {
        row: usize,
        #[source]
        source: csv::Error,
    },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Propagation mechanism of a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PathType {
    Los,
    Reflection,
    Diffraction,
    Scattering,
}

impl PathType {
    pub fn as_str(self) -> &'static str {
        match self {
            PathType::Los => "LOS",
            PathType::Reflection => "REFL",
            PathType::Diffraction => "DIFF",
            PathType::Scattering => "SCAT",
        }
    }
}

impl fmt::Display for PathType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PathType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "LOS" => Ok(PathType::Los),
            "REFL" => Ok(PathType::Reflection),
            "DIFF" => Ok(PathType::Diffraction),
            "SCAT" => Ok(PathType::Scattering),
            _ => Err(()),
        }
    }
}

/// Transmitter/receiver pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkId {
    pub tx_id: u32,
    pub rx_id: u32,
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.tx_id, self.rx_id)
    }
}

/// One multipath component.
///
/// Angles are in degrees: azimuth in `[-180, 180)`, zenith (from +z) in
/// `[0, 180]`. The departure direction points from the transmitter toward
/// the first interaction; the arrival direction points from the receiver
/// toward the last interaction. `phase_rad` is the total path phase at the
/// carrier, carrier-delay term included. `gain_mag` is a linear field
/// amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcRecord {
    pub t: f64,
    pub tx_id: u32,
    pub rx_id: u32,
    pub path_id: u32,
    pub path_type: PathType,
    pub delay_s: f64,
    pub gain_mag: f64,
    pub phase_rad: f64,
    pub aod_az_deg: f64,
    pub aod_zen_deg: f64,
    pub aoa_az_deg: f64,
    pub aoa_zen_deg: f64,
}

impl MpcRecord {
    pub fn link(&self) -> LinkId {
        LinkId {
            tx_id: self.tx_id,
            rx_id: self.rx_id,
        }
    }

    /// True when any numeric field is NaN or infinite.
    pub fn is_non_finite(&self) -> bool {
        [
            self.t,
            self.delay_s,
            self.gain_mag,
            self.phase_rad,
            self.aod_az_deg,
            self.aod_zen_deg,
            self.aoa_az_deg,
            self.aoa_zen_deg,
        ]
        .iter()
        .any(|v| !v.is_finite())
    }
}

/// All paths of one link at one snapshot time, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub link: LinkId,
    pub records: Vec<MpcRecord>,
}

impl Snapshot {
    pub fn has_los(&self) -> bool {
        self.records.iter().any(|r| r.path_type == PathType::Los)
    }
}

/// Parsed trace grouped into snapshots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceSet {
    snapshots: Vec<Snapshot>,
    time_index: Vec<f64>,
}

impl TraceSet {
    /// Groups records by `(t, link)`. Groups keep first-appearance order and
    /// records keep their relative order inside a group.
    pub fn from_records<I: IntoIterator<Item = MpcRecord>>(records: I) -> Self {
        let mut snapshots: Vec<Snapshot> = Vec::new();
        let mut slot: HashMap<(u64, LinkId), usize> = HashMap::new();
        for rec in records {
            let key = (rec.t.to_bits(), rec.link());
            let idx = *slot.entry(key).or_insert_with(|| {
                snapshots.push(Snapshot {
                    t: rec.t,
                    link: rec.link(),
                    records: Vec::new(),
                });
                snapshots.len() - 1
            });
            snapshots[idx].records.push(rec);
        }
        Self::from_snapshots(snapshots)
    }

    /// Builds a set from pre-grouped snapshots. Empty snapshots are kept and
    /// count as legal outages, but they do not survive a CSV round trip.
    pub fn from_snapshots(snapshots: Vec<Snapshot>) -> Self {
        let mut times: Vec<f64> = snapshots.iter().map(|s| s.t).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        Self {
            snapshots,
            time_index: times,
        }
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    /// Sorted distinct snapshot times over all links.
    pub fn time_index(&self) -> &[f64] {
        &self.time_index
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn record_count(&self) -> usize {
        self.snapshots.iter().map(|s| s.records.len()).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &MpcRecord> {
        self.snapshots.iter().flat_map(|s| s.records.iter())
    }

    pub fn links(&self) -> BTreeSet<LinkId> {
        self.snapshots.iter().map(|s| s.link).collect()
    }

    /// Snapshots of one link sorted by time.
    pub fn link_snapshots(&self, link: LinkId) -> Vec<&Snapshot> {
        let mut out: Vec<&Snapshot> = self.snapshots.iter().filter(|s| s.link == link).collect();
        out.sort_by(|a, b| a.t.total_cmp(&b.t));
        out
    }
}

/// Parses a trace CSV.
///
/// Columns are located by header name; extra columns are ignored with a
/// warning. Row numbers in errors count data rows from 1.
pub fn parse_trace<R: Read>(input: R) -> Result<TraceSet, TraceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| TraceError::Csv { row: 0, source: e })?
        .clone();

    let mut columns = [0usize; 12];
    for (slot, name) in columns.iter_mut().zip(TRACE_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TraceError::MissingColumn(name.to_string()))?;
    }
    for extra in headers.iter().filter(|h| !TRACE_HEADER.contains(h)) {
        log::warn!("ignoring unknown trace column `{extra}`");
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| TraceError::Csv {
            row: row_no,
            source: e,
        })?;
        records.push(parse_row(&row, &columns, row_no)?);
    }
    Ok(TraceSet::from_records(records))
}

fn parse_row(
    row: &csv::StringRecord,
    columns: &[usize; 12],
    row_no: usize,
) -> Result<MpcRecord, TraceError> {
    let field = |k: usize| row.get(columns[k]).unwrap_or("");
    let bad = |k: usize| TraceError::Parse {
        row: row_no,
        column: TRACE_HEADER[k],
        value: field(k).to_string(),
    };
    let float = |k: usize| -> Result<f64, TraceError> {
        let v: f64 = field(k).parse().map_err(|_| bad(k))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(bad(k))
        }
    };
    let id = |k: usize| -> Result<u32, TraceError> { field(k).parse().map_err(|_| bad(k)) };
    let range = |k: usize, v: f64, ok: bool| -> Result<f64, TraceError> {
        if ok {
            Ok(v)
        } else {
            Err(TraceError::OutOfRange {
                row: row_no,
                column: TRACE_HEADER[k],
                value: v,
            })
        }
    };
    let zenith = |k: usize| -> Result<f64, TraceError> {
        let v = float(k)?;
        range(k, v, (0.0..=180.0).contains(&v))
    };
    let azimuth = |k: usize| -> Result<f64, TraceError> {
        let v = float(k)?;
        range(k, v, (-180.0..180.0).contains(&v))
    };

    let delay_s = float(5)?;
    let gain_mag = float(6)?;
    Ok(MpcRecord {
        t: float(0)?,
        tx_id: id(1)?,
        rx_id: id(2)?,
        path_id: id(3)?,
        path_type: field(4).parse().map_err(|_| bad(4))?,
        delay_s: range(5, delay_s, delay_s >= 0.0)?,
        gain_mag: range(6, gain_mag, gain_mag >= 0.0)?,
        phase_rad: float(7)?,
        aod_az_deg: azimuth(8)?,
        aod_zen_deg: zenith(9)?,
        aoa_az_deg: azimuth(10)?,
        aoa_zen_deg: zenith(11)?,
    })
}

/// Writes a trace CSV. Floats use the shortest representation that parses
/// back to the identical value.
pub fn write_trace<W: Write>(trace: &TraceSet, out: W) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| TraceError::Csv { row: 0, source: e };
    w.write_record(TRACE_HEADER).map_err(io)?;
    for r in trace.records() {
        w.write_record([
            r.t.to_string(),
            r.tx_id.to_string(),
            r.rx_id.to_string(),
            r.path_id.to_string(),
            r.path_type.as_str().to_string(),
            r.delay_s.to_string(),
            r.gain_mag.to_string(),
            r.phase_rad.to_string(),
            r.aod_az_deg.to_string(),
            r.aod_zen_deg.to_string(),
            r.aoa_az_deg.to_string(),
            r.aoa_zen_deg.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_to_string(trace: &TraceSet) -> String {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV output is UTF-8")
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    DuplicateLos { t: f64, link: LinkId },
    NonMonotonicTime { link: LinkId, previous_t: f64, t: f64 },
    DuplicatePathId { t: f64, link: LinkId, path_id: u32 },
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::DuplicateLos { t, link } => {
                write!(f, "DuplicateLos: link {link} at t={t} has more than one LOS path")
            }
            ViolationKind::NonMonotonicTime { link, previous_t, t } => write!(
                f,
                "NonMonotonicTime: link {link} snapshot t={t} follows t={previous_t}"
            ),
            ViolationKind::DuplicatePathId { t, link, path_id } => write!(
                f,
                "DuplicatePathId: link {link} at t={t} repeats path_id {path_id}"
            ),
        }
    }
}

/// Invariant violations of a trace. Empty iff the trace is valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<ViolationKind>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "trace valid: no violations");
        }
        writeln!(f, "{} violation(s):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

pub fn validate_trace(trace: &TraceSet) -> ValidationReport {
    let mut violations = Vec::new();
    let mut last_t: HashMap<LinkId, f64> = HashMap::new();
    for snap in trace.snapshots() {
        if let Some(&prev) = last_t.get(&snap.link) {
            if snap.t <= prev {
                violations.push(ViolationKind::NonMonotonicTime {
                    link: snap.link,
                    previous_t: prev,
                    t: snap.t,
                });
            }
        }
        last_t.insert(snap.link, snap.t);

        let los = snap
            .records
            .iter()
            .filter(|r| r.path_type == PathType::Los)
            .count();
        if los > 1 {
            violations.push(ViolationKind::DuplicateLos {
                t: snap.t,
                link: snap.link,
            });
        }

        let mut seen = BTreeSet::new();
        for r in &snap.records {
            if !seen.insert(r.path_id) {
                violations.push(ViolationKind::DuplicatePathId {
                    t: snap.t,
                    link: snap.link,
                    path_id: r.path_id,
                });
            }
        }
    }
    ValidationReport { violations }
}
