//! Behavior weights and base rates estimated from an interaction log.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::env::BEHAVIORS;
use crate::error::{Error, Result};

/// Share of malformed data rows tolerated before loading aborts.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionStats {
    pub row_count: usize,
    pub malformed_rows: usize,
    /// `(behavior, positive count)` for each known behavior in the header.
    pub positives: Vec<(String, usize)>,
    /// Distinct `(user_id, session_id)` pairs, or distinct users when the log
    /// has no `session_id` column.
    pub session_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FittedBehavior {
    pub name: String,
    pub rate: f64,
    pub omega: f64,
    pub bias: f64,
}

/// Counts rows and behavior positives of a comma-separated log with a
/// header line and no quoting.
pub fn load_interactions(path: &Path) -> Result<InteractionStats> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .quoting(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let user = col("user_id").ok_or_else(|| Error::Format("missing column `user_id`".into()))?;
    col("item_id").ok_or_else(|| Error::Format("missing column `item_id`".into()))?;
    let session = col("session_id");
    let behaviors: Vec<(String, usize)> = BEHAVIORS
        .iter()
        .filter_map(|b| col(b).map(|i| (b.to_string(), i)))
        .collect();
    if behaviors.is_empty() {
        return Err(Error::Format(format!(
            "no behavior column; expected one of {}",
            BEHAVIORS.join(", ")
        )));
    }

    let mut positives = vec![0usize; behaviors.len()];
    let mut sessions: BTreeSet<(String, String)> = BTreeSet::new();
    let (mut rows, mut malformed) = (0usize, 0usize);
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => return Err(csv_error(path, e)),
            Err(_) => {
                malformed += 1;
                continue;
            }
        }
        if record.len() != header.len() {
            malformed += 1;
            continue;
        }
        let flags: Option<Vec<bool>> = behaviors
            .iter()
            .map(|(_, i)| match record[*i].trim() {
                "0" => Some(false),
                "1" => Some(true),
                _ => None,
            })
            .collect();
        let Some(flags) = flags else {
            malformed += 1;
            continue;
        };
        rows += 1;
        for (p, f) in positives.iter_mut().zip(flags) {
            *p += usize::from(f);
        }
        let sid = session.map(|i| record[i].trim().to_string()).unwrap_or_default();
        sessions.insert((record[user].trim().to_string(), sid));
    }
    let total = rows + malformed;
    if total > 0 && malformed as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(Error::Format(format!(
            "{malformed} of {total} rows in {} are malformed",
            path.display()
        )));
    }
    Ok(InteractionStats {
        row_count: rows,
        malformed_rows: malformed,
        positives: behaviors
            .into_iter()
            .map(|(b, _)| b)
            .zip(positives)
            .collect(),
        session_count: sessions.len(),
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// `p_b = positives / rows`, `c_b = logit(p_b)`, `ω_b ∝ 1/p_b` with
/// `max ω = 1`.
pub fn fit_rates(stats: &InteractionStats) -> Result<Vec<FittedBehavior>> {
    if stats.row_count == 0 {
        return Err(Error::Argument("no interaction rows to fit".into()));
    }
    let mut fits = Vec::with_capacity(stats.positives.len());
    for (name, count) in &stats.positives {
        let p = *count as f64 / stats.row_count as f64;
        if *count == 0 || *count >= stats.row_count {
            return Err(Error::DegenerateRate {
                behavior: name.clone(),
                rate: p,
            });
        }
        fits.push(FittedBehavior {
            name: name.clone(),
            rate: p,
            omega: 1.0 / p,
            bias: (p / (1.0 - p)).ln(),
        });
    }
    let max = fits.iter().map(|f| f.omega).fold(0.0, f64::max);
    for f in &mut fits {
        f.omega /= max;
    }
    Ok(fits)
}

/// Config lines `calib.omega.<b> = ω` and `calib.c.<b> = c`.
pub fn calibration_lines(fits: &[FittedBehavior]) -> String {
    let mut out = String::new();
    for f in fits {
        writeln!(out, "calib.omega.{} = {:?}", f.name, f.omega).expect("string write");
        writeln!(out, "calib.c.{} = {:?}", f.name, f.bias).expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn counts_positives() {
        let mut text = String::from("user_id,item_id,click,like\n");
        for i in 0..10 {
            text += &format!("{},{},{},0\n", i % 3, i, u8::from(i < 4));
        }
        let f = write(&text);
        let s = load_interactions(f.path()).unwrap();
        assert_eq!(s.row_count, 10);
        assert_eq!(s.positives, vec![("click".into(), 4), ("like".into(), 0)]);
        assert_eq!(s.session_count, 3);
        assert_eq!(s.malformed_rows, 0);
    }

    #[test]
    fn header_only_then_fit_rejects() {
        let f = write("user_id,item_id,click\n");
        let s = load_interactions(f.path()).unwrap();
        assert_eq!(s.row_count, 0);
        assert!(fit_rates(&s).is_err());
    }

    #[test]
    fn absent_behavior_not_reported() {
        let f = write("user_id,item_id,long_view\n1,2,1\n1,3,0\n");
        let s = load_interactions(f.path()).unwrap();
        assert_eq!(s.positives, vec![("long_view".into(), 1)]);
    }

    #[test]
    fn missing_required_column() {
        let f = write("user_id,click\n1,1\n");
        assert!(matches!(load_interactions(f.path()), Err(Error::Format(_))));
        let f = write("user_id,item_id,rating\n1,1,5\n");
        assert!(matches!(load_interactions(f.path()), Err(Error::Format(_))));
    }

    #[test]
    fn malformed_rows_threshold() {
        let mut text = String::from("user_id,item_id,session_id,click\n");
        for i in 0..199 {
            text += &format!("{},{i},{},{}\n", i % 5, i % 2, i % 2);
        }
        text += "1,2,3\n";
        let s = load_interactions(write(&text).path()).unwrap();
        assert_eq!((s.row_count, s.malformed_rows), (199, 1));
        assert_eq!(s.session_count, 10);
        text += "1,2,3,yes\n1,2,3,2\n";
        assert!(matches!(load_interactions(write(&text).path()), Err(Error::Format(_))));
    }

    #[test]
    fn fit_examples() {
        let stats = |p: &[(&str, usize)], n| InteractionStats {
            row_count: n,
            malformed_rows: 0,
            positives: p.iter().map(|(b, c)| (b.to_string(), *c)).collect(),
            session_count: 1,
        };
        let f = fit_rates(&stats(&[("click", 4)], 10)).unwrap();
        assert!((f[0].bias + 0.405465108108164).abs() < 1e-12);
        let f = fit_rates(&stats(&[("click", 5)], 10)).unwrap();
        assert_eq!(f[0].bias, 0.0);
        let f = fit_rates(&stats(&[("click", 50), ("like", 10)], 100)).unwrap();
        assert!((f[0].omega - 0.2).abs() < 1e-12 && f[1].omega == 1.0);
        match fit_rates(&stats(&[("click", 3), ("like", 10)], 10)) {
            Err(Error::DegenerateRate { behavior, rate }) => {
                assert_eq!(behavior, "like");
                assert_eq!(rate, 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lines_are_config_syntax() {
        let fits = vec![FittedBehavior {
            name: "click".into(),
            rate: 0.5,
            omega: 1.0,
            bias: 0.0,
        }];
        assert_eq!(calibration_lines(&fits), "calib.omega.click = 1.0\ncalib.c.click = 0.0\n");
    }

    #[test]
    fn loading_is_deterministic() {
        let f = write("user_id,item_id,click,like\n1,1,1,0\n2,2,0,1\n3,3,1,1\n4,4,0,0\n");
        let a = fit_rates(&load_interactions(f.path()).unwrap()).unwrap();
        let b = fit_rates(&load_interactions(f.path()).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
