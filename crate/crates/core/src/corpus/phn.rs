//! TIMIT-style `.phn` files.

use crate::error::{Error, Result};
use crate::phoneset::fold_timit61;

use super::AnnotationSegment;

/// Parses `start end label` lines in samples; labels are folded to the
/// 39-phone set and folded-away labels (`q`) are dropped.
pub fn parse_phn(text: &str, sample_rate: u32) -> Result<Vec<AnnotationSegment>> {
    if sample_rate == 0 {
        return Err(Error::Config("sample rate must be positive".into()));
    }
    let sr = sample_rate as f64;
    let mut out = Vec::new();
    let mut prev_start: Option<u64> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(line_no, format!("expected 3 fields, found {}", fields.len())));
        }
        let start: u64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad start sample `{}`", fields[0])))?;
        let end: u64 = fields[1]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad end sample `{}`", fields[1])))?;
        if end <= start {
            return Err(Error::parse(line_no, format!("end sample {end} not after start {start}")));
        }
        if let Some(p) = prev_start {
            if start < p {
                return Err(Error::parse(line_no, format!("start sample {start} precedes previous start {p}")));
            }
        }
        prev_start = Some(start);
        let label = fold_timit61(fields[2]).map_err(|e| Error::parse(line_no, e.to_string()))?;
        if let Some(label) = label {
            out.push(AnnotationSegment::correct(start as f64 / sr, end as f64 / sr, label)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ErrorType;

    #[test]
    fn examples() {
        let segs = parse_phn("0 1600 h#\n1600 3200 aa\n", 16000).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].start_s, segs[0].end_s), (0.0, 0.1));
        assert_eq!(segs[0].canonical.as_str(), "sil");
        assert_eq!((segs[1].start_s, segs[1].end_s), (0.1, 0.2));
        assert_eq!(segs[1].perceived.as_str(), "aa");
        assert!(segs.iter().all(|s| s.error == ErrorType::None));
    }

    #[test]
    fn glottal_stop_dropped() {
        let segs = parse_phn("0 10 q\n10 20 ix\n\n", 16000).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].canonical.as_str(), "ih");
    }

    #[test]
    fn errors_report_line() {
        let err = parse_phn("0 10 aa\n100 50 aa", 16000).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_phn("0 10 aa\n20 30 aa\n5 40 aa", 16000).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(parse_phn("0 10", 16000).is_err());
        assert!(parse_phn("0 x aa", 16000).is_err());
        assert!(parse_phn("0 10 zz", 16000).is_err());
    }
}
