//! Sweep results and their CSV / gnuplot emission.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub const CSV_HEADER: &str = "scheme,scenario,snr_db,metric,value,stderr,n";

/// One (scheme, SNR) point: the metric mean, its standard error and the
/// number of samples behind it (frames for MSE, bits for BER).
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub scheme: String,
    pub scenario: String,
    pub snr_db: f64,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn get(&self, scheme: &str, snr_db: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.scheme == scheme && r.snr_db == snr_db)
    }

    /// Rows of one scheme in SNR order.
    pub fn curve(&self, scheme: &str) -> Vec<&SweepRow> {
        let mut v: Vec<&SweepRow> = self.rows.iter().filter(|r| r.scheme == scheme).collect();
        v.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
        v
    }

    pub fn schemes(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.rows
            .iter()
            .filter(|r| seen.insert(r.scheme.clone()))
            .map(|r| r.scheme.clone())
            .collect()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{:.16e},{:.16e},{}",
                r.scheme, r.scenario, r.snr_db, r.metric, r.value, r.stderr, r.n
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ASCII output")
    }
}

/// Writes the CSV table to `path`.
pub fn emit_results(results: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, results.to_csv_string())?;
    Ok(())
}

/// gnuplot script plotting every scheme of `results` from `csv_name` on a
/// log-scale metric axis, one curve per scheme.
pub fn plot_script(results: &SweepResult, csv_name: &str, title: &str) -> String {
    let metric = results.rows.first().map_or("value", |r| r.metric.as_str());
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set logscale y");
    let _ = writeln!(s, "set grid");
    let _ = writeln!(s, "set key top right");
    let _ = writeln!(s, "set xlabel 'SNR (dB)'");
    let _ = writeln!(s, "set ylabel '{}'", metric.to_uppercase());
    let _ = writeln!(s, "set title '{title}'");
    let _ = writeln!(s, "set terminal pngcairo size 800,600");
    let _ = writeln!(s, "set output '{}.png'", csv_name.trim_end_matches(".csv"));
    let curves: Vec<String> = results
        .schemes()
        .iter()
        .map(|sch| {
            format!(
                "'{csv_name}' using (strcol(1) eq '{sch}' ? $3 : 1/0):5:6 with yerrorlines title '{sch}'"
            )
        })
        .collect();
    if curves.is_empty() {
        let _ = writeln!(s, "# no data");
    } else {
        let _ = writeln!(s, "plot {}", curves.join(", \\\n     "));
    }
    s
}

pub fn write_plot_script(results: &SweepResult, csv_name: &str, title: &str, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, plot_script(results, csv_name, title))?;
    Ok(())
}
