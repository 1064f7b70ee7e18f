//! Case data files: `date,region,new_cases` with ISO-8601 dates.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

pub use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::objective::CaseSeries;

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

pub fn day_to_date(start: NaiveDate, day: usize) -> NaiveDate {
    start + chrono::Days::new(day as u64)
}

/// Reads every region's series over days `0..=last_day` from `start`.
///
/// Rows outside the window are skipped; missing days become zero and are flagged.
pub fn read_cases(path: &Path, start: NaiveDate, last_day: usize) -> Result<Vec<CaseSeries>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| err(1, format!("missing column `{name}`")))
    };
    let (c_date, c_region, c_cases) = (col("date")?, col("region")?, col("new_cases")?);

    let mut order: Vec<String> = Vec::new();
    let mut values: HashMap<String, Vec<Option<f64>>> = HashMap::new();
    let mut skipped = 0usize;
    for rec in reader.records() {
        let rec = rec.map_err(|e| err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let date = parse_date(&rec[c_date])
            .ok_or_else(|| err(line, format!("`{}` is not a YYYY-MM-DD date", &rec[c_date])))?;
        let cases: f64 = rec[c_cases]
            .parse()
            .map_err(|_| err(line, format!("`{}` is not a number", &rec[c_cases])))?;
        if !(cases >= 0.0) || !cases.is_finite() {
            return Err(err(line, format!("new_cases must be >= 0, got {cases}")));
        }
        let offset = (date - start).num_days();
        if offset < 0 || offset as usize > last_day {
            skipped += 1;
            continue;
        }
        let region = rec[c_region].to_string();
        let slot = values.entry(region.clone()).or_insert_with(|| {
            order.push(region.clone());
            vec![None; last_day + 1]
        });
        if slot[offset as usize].replace(cases).is_some() {
            return Err(err(line, format!("duplicate entry for `{region}` on {date}")));
        }
    }
    if skipped > 0 {
        log::info!("{}: skipped {skipped} rows outside the study window", path.display());
    }
    if order.is_empty() {
        return Err(err(1, "no rows inside the study window".into()));
    }
    let series: Vec<CaseSeries> = order
        .into_iter()
        .map(|r| {
            let v = values.remove(&r).expect("recorded");
            CaseSeries::with_gaps(r, v)
        })
        .collect::<Result<_>>()?;
    for s in &series {
        let gaps = s.filled.iter().filter(|&&f| f).count();
        if gaps > 0 {
            log::warn!("`{}`: {gaps} missing days filled with zero", s.region);
        }
    }
    Ok(series)
}

pub fn cases_to_string(series: &[CaseSeries], start: NaiveDate, comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        for l in c.lines() {
            out.push_str("# ");
            out.push_str(l);
            out.push('\n');
        }
    }
    out.push_str("date,region,new_cases\n");
    let days = series.iter().map(|s| s.new_cases.len()).max().unwrap_or(0);
    for d in 0..days {
        let date = day_to_date(start, d);
        for s in series {
            if let Some(v) = s.new_cases.get(d) {
                out.push_str(&format!("{date},{},{v}\n", s.region));
            }
        }
    }
    out
}

pub fn write_cases(path: &Path, series: &[CaseSeries], start: NaiveDate, comment: Option<&str>) -> Result<()> {
    fs::write(path, cases_to_string(series, start, comment)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 10, 1).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let series = vec![
            CaseSeries::new("BA", vec![0.0, 1.0, 2.5, 1.0 / 3.0]).unwrap(),
            CaseSeries::new("IO", vec![3.0, 0.0, 1e-7, 12.0]).unwrap(),
        ];
        write_cases(&p, &series, start(), Some("config_hash=abc")).unwrap();
        let back = read_cases(&p, start(), 3).unwrap();
        assert_eq!(back, series);
    }

    #[test]
    fn gaps_window_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        fs::write(
            &p,
            "date,region,new_cases\n2020-09-30,A,9\n2020-10-01,A,1\n2020-10-03,A,4\n2020-10-02,B,2\n2020-10-09,A,1\n",
        )
        .unwrap();
        let s = read_cases(&p, start(), 2).unwrap();
        assert_eq!(s[0].region, "A");
        assert_eq!(s[0].new_cases, vec![1.0, 0.0, 4.0]);
        assert_eq!(s[0].filled, vec![false, true, false]);
        assert_eq!(s[1].cumulative, vec![0.0, 2.0, 2.0]);

        fs::write(&p, "date,region,new_cases\n2020-10-01,A,1\n2020-10-01,A,2\n").unwrap();
        assert!(matches!(read_cases(&p, start(), 2), Err(Error::Parse { line: 3, .. })));
        fs::write(&p, "date,region,new_cases\n2020-10-01,A,-1\n").unwrap();
        assert!(read_cases(&p, start(), 2).is_err());
        fs::write(&p, "day,region,new_cases\n").unwrap();
        assert!(read_cases(&p, start(), 2).is_err());
    }

    #[test]
    fn dates() {
        assert_eq!(day_to_date(start(), 32).to_string(), "2020-11-02");
        assert_eq!(day_to_date(start(), 77).to_string(), "2020-12-17");
    }
}
