//! Aggregated experiment rows and their CSV form.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const REPORT_HEADER: [&str; 9] = [
    "strategy",
    "parameter",
    "rerank_mode",
    "mean_toxicity",
    "distinct1",
    "distinct2",
    "diversity",
    "repetition4",
    "sample_count",
];

/// One (condition, re-rank mode) cell. Ratios are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub strategy: String,
    pub parameter: f64,
    pub rerank_mode: String,
    pub mean_toxicity: f64,
    pub distinct1: f64,
    pub distinct2: f64,
    pub diversity: f64,
    pub repetition4: f64,
    pub sample_count: usize,
}

/// Rounds to the four decimals the CSV carries.
pub fn quantize(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

impl ReportRow {
    /// Copy with every real rounded to report precision, so that it survives
    /// a CSV round trip unchanged.
    pub fn quantized(&self) -> Self {
        ReportRow {
            parameter: quantize(self.parameter),
            mean_toxicity: quantize(self.mean_toxicity),
            distinct1: quantize(self.distinct1),
            distinct2: quantize(self.distinct2),
            diversity: quantize(self.diversity),
            repetition4: quantize(self.repetition4),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn new(rows: Vec<ReportRow>) -> Self {
        ExperimentReport { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn quantized(&self) -> Self {
        ExperimentReport::new(self.rows.iter().map(ReportRow::quantized).collect())
    }

    pub fn find(&self, strategy: &str, parameter: f64, rerank_mode: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| {
            r.strategy == strategy && r.parameter == parameter && r.rerank_mode == rerank_mode
        })
    }

    /// `(parameter, mean_toxicity)` points per `(strategy, rerank_mode)`, in
    /// row order.
    pub fn curves(&self) -> BTreeMap<(String, String), Vec<(f64, f64)>> {
        let mut out: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
        for r in &self.rows {
            out.entry((r.strategy.clone(), r.rerank_mode.clone()))
                .or_default()
                .push((r.parameter, r.mean_toxicity));
        }
        out
    }

    /// Writes one `curve_<strategy>[_<mode>].tsv` per curve into `dir` and
    /// returns the written paths. The mode suffix is omitted for `off`.
    pub fn write_curves(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let mut paths = Vec::new();
        for ((strategy, mode), points) in self.curves() {
            let name = if mode == "off" {
                format!("curve_{strategy}.tsv")
            } else {
                format!("curve_{strategy}_{mode}.tsv")
            };
            let path = dir.join(name);
            let mut buf = Vec::new();
            write_curve(&mut buf, &points).map_err(|e| Error::io(&path, e))?;
            std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

pub fn write_curve<W: Write>(mut w: W, points: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(w, "parameter\tmean_toxicity")?;
    for (x, y) in points {
        writeln!(w, "{x:.4}\t{y:.4}")?;
    }
    Ok(())
}

pub fn write_report<W: Write>(w: W, report: &ExperimentReport) -> Result<()> {
    if report.is_empty() {
        return Err(Error::param("refusing to write an empty report"));
    }
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(REPORT_HEADER)?;
    for r in &report.rows {
        out.write_record([
            r.strategy.clone(),
            format!("{:.4}", r.parameter),
            r.rerank_mode.clone(),
            format!("{:.4}", r.mean_toxicity),
            format!("{:.4}", r.distinct1),
            format!("{:.4}", r.distinct2),
            format!("{:.4}", r.diversity),
            format!("{:.4}", r.repetition4),
            r.sample_count.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<report>", e))?;
    Ok(())
}

pub fn emit_report(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_report(&mut buf, report)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_report<R: Read>(r: R, path: &Path) -> Result<ExperimentReport> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers()?.clone();
    if header.iter().ne(REPORT_HEADER) {
        return Err(Error::Format(format!(
            "{}: unexpected report header {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let parse_err = |column: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("bad {column} value"),
        };
        let real = |idx: usize| -> Result<f64> {
            rec[idx]
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(REPORT_HEADER[idx]))
        };
        let sample_count: usize = rec[8].parse().map_err(|_| parse_err("sample_count"))?;
        rows.push(ReportRow {
            strategy: rec[0].to_string(),
            parameter: real(1)?,
            rerank_mode: rec[2].to_string(),
            mean_toxicity: real(3)?,
            distinct1: real(4)?,
            distinct2: real(5)?,
            diversity: real(6)?,
            repetition4: real(7)?,
            sample_count,
        });
    }
    Ok(ExperimentReport::new(rows))
}

pub fn parse_report(path: &Path) -> Result<ExperimentReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_report(std::io::BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(strategy: &str, parameter: f64, mode: &str, tox: f64) -> ReportRow {
        ReportRow {
            strategy: strategy.into(),
            parameter,
            rerank_mode: mode.into(),
            mean_toxicity: tox,
            distinct1: 0.5,
            distinct2: 0.75,
            diversity: 0.625,
            repetition4: 0.01,
            sample_count: 20,
        }
    }

    fn text(report: &ExperimentReport) -> String {
        let mut buf = Vec::new();
        write_report(&mut buf, report).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn one_row_is_header_plus_one_line() {
        let s = text(&ExperimentReport::new(vec![row(
            "top_k", 10.0, "off", 0.123456,
        )]));
        assert_eq!(
            s,
            "strategy,parameter,rerank_mode,mean_toxicity,distinct1,distinct2,diversity,repetition4,sample_count\n\
             top_k,10.0000,off,0.1235,0.5000,0.7500,0.6250,0.0100,20\n"
        );
        assert!(!s.contains('\r'));
    }

    #[test]
    fn empty_report_is_rejected() {
        assert!(write_report(Vec::new(), &ExperimentReport::default()).is_err());
    }

    #[test]
    fn bad_header_and_bad_value() {
        let p = Path::new("r.csv");
        assert!(matches!(
            read_report("a,b\n1,2\n".as_bytes(), p),
            Err(Error::Format(_))
        ));
        let bad = "strategy,parameter,rerank_mode,mean_toxicity,distinct1,distinct2,diversity,repetition4,sample_count\n\
                   top_k,x,off,0,0,0,0,0,1\n";
        match read_report(bad.as_bytes(), p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn curves_group_by_strategy_and_mode() {
        let r = ExperimentReport::new(vec![
            row("top_k", 10.0, "off", 0.1),
            row("top_k", 10.0, "detoxify", 0.05),
            row("top_k", 20.0, "off", 0.2),
            row("beam", 5.0, "off", 0.3),
        ]);
        let c = r.curves();
        assert_eq!(
            c[&("top_k".into(), "off".into())],
            vec![(10.0, 0.1), (20.0, 0.2)]
        );
        assert_eq!(c.len(), 3);
        let mut buf = Vec::new();
        write_curve(&mut buf, &c[&("beam".into(), "off".into())]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "parameter\tmean_toxicity\n5.0000\t0.3000\n"
        );
    }

    proptest! {
        #[test]
        fn round_trip(rows in prop::collection::vec(
            (0.0f64..1000.0, 0.0f64..1.0, 0.0f64..1.0, 1usize..10_000), 1..50)
        ) {
            let report = ExperimentReport::new(
                rows.iter()
                    .map(|&(p, t, d, n)| ReportRow {
                        parameter: p,
                        mean_toxicity: t,
                        distinct1: d,
                        sample_count: n,
                        ..row("top_p", 0.0, "toxify", 0.0)
                    })
                    .collect(),
            )
            .quantized();
            let s = text(&report);
            let back = read_report(s.as_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, report);
        }
    }
}
