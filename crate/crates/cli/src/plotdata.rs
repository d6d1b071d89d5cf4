//! Plot-data CSV files derived from the array-valued results.

use std::fs;
use std::path::{Path, PathBuf};

use crate::envelope::Results;
use crate::error::CliError;

/// One CSV file: header plus numeric rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(file: &str, header: &[&str]) -> Self {
        Table {
            file: file.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

/// Tables for every array in `results`; empty arrays give header-only tables.
pub fn tables(results: &Results) -> Vec<Table> {
    match results {
        Results::Moment(m) => {
            let mut t = Table::new("eps_ladder.csv", &["eps", "mean", "stderr"]);
            t.rows = m.eps_ladder.iter().map(|r| vec![r.eps, r.mean, r.stderr]).collect();
            vec![t]
        }
        Results::Chaos(c) => {
            let mut terms = Table::new("chaos_terms.csv", &["n", "value", "stderr", "partial_sum"]);
            terms.rows = c
                .series
                .terms
                .iter()
                .map(|t| vec![t.n as f64, t.value, t.stderr, t.partial_sum])
                .collect();
            let mut bounds = Table::new("chaos_bounds.csv", &["n", "value", "stderr", "constant"]);
            bounds.rows = c
                .bounds
                .iter()
                .map(|b| vec![b.n as f64, b.value, b.stderr, b.constant])
                .collect();
            vec![terms, bounds]
        }
        Results::Variational(v) => {
            let mut trace = Table::new("trace.csv", &["iteration", "total", "interaction", "kinetic"]);
            trace.rows = v
                .trace
                .iter()
                .map(|e| vec![e.iteration as f64, e.total, e.interaction, e.kinetic])
                .collect();
            let g = &v.argmax;
            let mut header = vec!["slice".to_string(), "s".to_string()];
            header.extend((1..=g.ell).map(|c| format!("x{c}")));
            header.push("value".into());
            let mut argmax = Table {
                file: "argmax.csv".into(),
                header,
                rows: Vec::new(),
            };
            let mut x = vec![0.0; g.ell];
            for i in 0..g.slices {
                let s = (i as f64 + 0.5) / g.slices as f64;
                for (p, &value) in g.slice(i).iter().enumerate() {
                    g.coords(p, &mut x);
                    let mut row = vec![i as f64, s];
                    row.extend_from_slice(&x);
                    row.push(value);
                    argmax.rows.push(row);
                }
            }
            vec![trace, argmax]
        }
        Results::Lyapunov(l) => {
            let mut t = Table::new(
                "t_ladder.csv",
                &["t", "eps", "log_moment", "log_stderr", "normalized", "normalized_stderr"],
            );
            t.rows = l
                .estimate
                .points
                .iter()
                .map(|p| vec![p.t, p.eps, p.log_moment, p.log_stderr, p.normalized, p.normalized_stderr])
                .collect();
            vec![t]
        }
        Results::Indices(_) | Results::Validate(_) | Results::Selftest(_) => Vec::new(),
    }
}

pub fn write_table(path: &Path, table: &Table) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every table of `results` into `dir` and returns the paths.
pub fn emit_plotdata(results: &Results, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for table in tables(results) {
        let path = dir.join(&table.file);
        write_table(&path, &table)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pamkit_core::functional::{Formula, LadderRung, MomentEstimate};
    use pamkit_core::paths::SeedSpec;

    fn moment(ladder: Vec<LadderRung>) -> Results {
        Results::Moment(MomentEstimate {
            formula: Formula::Bridge,
            n: 2,
            t: 1.0,
            eps: Some(0.1),
            mean: 1.0,
            stderr: 0.1,
            samples: 10,
            seed: SeedSpec::new(1, 0),
            shards: 1,
            grid_m: 4,
            acceptance: 1.0,
            clip_hit_rate: None,
            max_exponent: 0.0,
            eps_ladder: ladder,
            extrapolated: None,
        })
    }

    #[test]
    fn ladder_rows_and_header() {
        let rungs = (0..3)
            .map(|i| LadderRung {
                eps: 0.5f64.powi(i),
                mean: 2.0,
                stderr: 0.1,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plotdata(&moment(rungs), dir.path()).unwrap();
        let text = std::fs::read_to_string(&files[0]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "eps,mean,stderr");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn empty_array_gives_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plotdata(&moment(Vec::new()), dir.path()).unwrap();
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text, "eps,mean,stderr\n");
    }
}
