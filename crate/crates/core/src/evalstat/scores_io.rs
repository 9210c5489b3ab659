use std::io::{Read, Write};

use super::{RocPoint, ScoreSet};
use crate::error::{Error, Result};

/// Reads `exam_id,score,label` rows. Errors carry the 1-based file line.
pub fn read_scores_csv<R: Read>(reader: R) -> Result<ScoreSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::CsvRow { line: 1, reason: format!("missing column {name}") })
    };
    let (ci, cs, cl) = (col("exam_id")?, col("score")?, col("label")?);
    let (mut ids, mut scores, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::CsvRow { line: e.position().map(|p| p.line()).unwrap_or(0), reason: e.to_string() })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let score: f64 = field(cs).parse().map_err(|_| Error::CsvRow { line, reason: format!("bad score {:?}", field(cs)) })?;
        let label: u8 = match field(cl) {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::CsvRow { line, reason: format!("bad label {other:?}") });
            }
        };
        if !score.is_finite() {
            return Err(Error::CsvRow { line, reason: format!("non-finite score {score}") });
        }
        ids.push(field(ci).to_string());
        scores.push(score);
        labels.push(label);
    }
    ScoreSet::with_ids(ids, scores, labels)
}

pub fn write_scores_csv<W: Write>(s: &ScoreSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["exam_id", "score", "label"])?;
    for ((id, score), label) in s.ids.iter().zip(&s.scores).zip(&s.labels) {
        // shortest round-trip formatting keeps re-read AUCs bit-identical
        w.write_record([id.as_str(), &format!("{score:?}"), &label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_roc_csv<W: Write>(points: &[RocPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "fpr", "tpr"])?;
    for p in points {
        w.write_record([format!("{:?}", p.threshold), format!("{:?}", p.fpr), format!("{:?}", p.tpr)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_scores_exactly() {
        let s = ScoreSet::with_ids(vec!["a".into(), "b".into(), "c".into()], vec![0.1 + 0.2, 1.0 / 3.0, 0.75], vec![0, 1, 1]).unwrap();
        let mut buf = Vec::new();
        write_scores_csv(&s, &mut buf).unwrap();
        assert_eq!(read_scores_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "exam_id,score,label\na,0.5,1\nb,oops,0\n";
        match read_scores_csv(text.as_bytes()) {
            Err(Error::CsvRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "exam_id,score,label\na,0.5,2\n";
        assert!(matches!(read_scores_csv(text.as_bytes()), Err(Error::CsvRow { line: 2, .. })));
    }
}
