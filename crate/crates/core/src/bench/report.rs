use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{BenchRun, CurveFit, EquivalenceCheck, ScalingResult, SkippedRun};
use crate::error::Result;

pub const CSV_HEADER: &str = "method,scheme,N,trial,wall_seconds,peak_bytes,nnz_P";

const THRESHOLD_NOTE: &str = "Acceptance thresholds on time exponents (sparse <= 1.4, \
naive >= 1.7) are looser than the reference values (about 1.1 and 2.0) to absorb \
hardware and allocator variance; absolute times are machine specific.";

pub fn write_csv<W: Write>(runs: &[BenchRun], out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{CSV_HEADER}")?;
    for r in runs {
        writeln!(
            out,
            "{},{},{},{},{:.6},{},{}",
            r.method, r.scheme, r.n, r.trial, r.wall_seconds, r.peak_bytes, r.nnz_p
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    fits: &'a [CurveFit],
    runs: &'a [BenchRun],
    skipped: &'a [SkippedRun],
    equivalence: &'a [EquivalenceCheck],
    notes: Vec<&'static str>,
}

#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub summary: PathBuf,
}

/// Write `results.csv` and `summary.json` (fits, per-run detail, skips)
/// into `dir`, creating it if needed.
pub fn emit_report(result: &ScalingResult, fits: &[CurveFit], dir: &Path) -> Result<ReportPaths> {
    fs::create_dir_all(dir)?;
    let paths = ReportPaths {
        csv: dir.join("results.csv"),
        summary: dir.join("summary.json"),
    };
    write_csv(&result.runs, File::create(&paths.csv)?)?;
    let summary = Summary {
        fits,
        runs: &result.runs,
        skipped: &result.skipped,
        equivalence: &result.equivalence,
        notes: vec![THRESHOLD_NOTE],
    };
    let mut f = BufWriter::new(File::create(&paths.summary)?);
    serde_json::to_writer_pretty(&mut f, &summary)?;
    writeln!(f)?;
    f.flush()?;
    Ok(paths)
}
