//! Aggregating a results directory back into a summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rootsgd::analysis::mean_and_se;

use crate::runner::REPLICATES_HEADER;
use crate::HarnessError;

/// Reads `replicates.csv` (plus `manifest.csv` and `covariance.csv` when
/// present) from `dir` and renders a fixed-width table of Monte Carlo means
/// and standard errors per probed iteration.
pub fn report(dir: &Path) -> Result<String, HarnessError> {
    let path = dir.join("replicates.csv");
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(REPLICATES_HEADER) {
        return Err(HarnessError::Runtime(format!(
            "{}: unexpected header, want {REPLICATES_HEADER:?}",
            path.display()
        )));
    }
    let mut by_t: BTreeMap<usize, [Vec<f64>; 4]> = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || HarnessError::Runtime(format!("{}:{}: malformed row {line:?}", path.display(), n + 2));
        if fields.len() != 6 {
            return Err(bad());
        }
        let t: usize = fields[1].parse().map_err(|_| bad())?;
        let entry = by_t.entry(t).or_default();
        for k in 0..4 {
            entry[k].push(fields[k + 2].parse().map_err(|_| bad())?);
        }
    }

    let mut out = String::new();
    let manifest = dir.join("manifest.csv");
    if let Ok(m) = fs::read_to_string(&manifest) {
        for line in m.lines().skip(1) {
            if let Some((k, v)) = line.split_once(',') {
                let _ = writeln!(out, "{k:>26}  {v}");
            }
        }
        out.push('\n');
    }
    let _ = writeln!(
        out,
        "{:>10} {:>6} {:>24} {:>24} {:>24} {:>24}",
        "t", "n", "E|grad F|^2 (se)", "E|theta-theta*|^2 (se)", "E|v|^2 (se)", "E|z|^2 (se)"
    );
    for (t, cols) in &by_t {
        let _ = write!(out, "{t:>10} {:>6}", cols[0].len());
        for col in cols {
            let (m, se) = mean_and_se(col);
            let _ = write!(out, " {:>24}", format!("{m:.4e} ({se:.1e})"));
        }
        out.push('\n');
    }
    let cov = dir.join("covariance.csv");
    if let Ok(c) = fs::read_to_string(&cov) {
        for line in c.lines() {
            if let Some(v) = line.strip_prefix("frobenius_relative_gap,,,") {
                let _ = writeln!(out, "\ncovariance Frobenius-relative gap: {v}");
            }
        }
    }
    Ok(out)
}
