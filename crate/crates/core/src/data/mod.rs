//! Dataset ingestion: manifests, image decoding and preprocessing, and the
//! augmentation pipeline.

pub mod augment;
pub mod image;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use crate::rng::sample_rng;

/// One labelled sample: 0 = benign, 1 = malignant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub image_path: PathBuf,
    pub label: u8,
}

/// Parse a manifest: UTF-8 text, a `path,label` header, then one
/// comma-separated record per line. Relative paths are resolved against the
/// manifest's directory. Blank lines are skipped.
pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "path,label" => {}
        Some((_, header)) => {
            return Err(parse_err(
                1,
                format!("expected header 'path,label', got '{}'", header.trim()),
            ))
        }
        None => return Err(parse_err(1, "empty manifest".to_string())),
    }

    let mut records = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        // Split at the last comma so paths containing commas still parse.
        let (path_part, label_part) = line.rsplit_once(',').ok_or_else(|| {
            parse_err(line_no, format!("expected 'path,label', got '{line}'"))
        })?;
        let path_part = path_part.trim();
        if path_part.is_empty() {
            return Err(parse_err(line_no, "empty image path".to_string()));
        }
        let label = match label_part.trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(parse_err(
                    line_no,
                    format!("label must be 0 or 1, got '{other}'"),
                ))
            }
        };
        let image_path = {
            let p = Path::new(path_part);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        records.push(SampleRecord { image_path, label });
    }
    Ok(records)
}

/// (benign, malignant) record counts.
pub fn class_counts(records: &[SampleRecord]) -> (usize, usize) {
    let malignant = records.iter().filter(|r| r.label == 1).count();
    (records.len() - malignant, malignant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_manifest(content: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn header_plus_two_rows_gives_two_records() {
        let (dir, path) = write_manifest("path,label\na.png,0\nsub/b.jpg,1\n");
        let records = load_manifest(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].image_path, dir.path().join("a.png"));
        assert_eq!(records[0].label, 0);
        assert_eq!(records[1].image_path, dir.path().join("sub/b.jpg"));
        assert_eq!(records[1].label, 1);
    }

    #[test]
    fn bad_label_names_its_line() {
        let (_dir, path) = write_manifest("path,label\na.png,0\nb.png,2\n");
        let err = load_manifest(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains('2'), "{msg}");
    }

    #[test]
    fn missing_header_is_an_error() {
        let (_dir, path) = write_manifest("a.png,0\n");
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("header"), "{err}");
    }

    #[test]
    fn empty_file_is_an_error() {
        let (_dir, path) = write_manifest("");
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_manifest(Path::new("/nonexistent/manifest.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }

    #[test]
    fn blank_lines_are_skipped() {
        let (_dir, path) = write_manifest("path,label\n\na.png,1\n\n");
        let records = load_manifest(&path).unwrap();
        assert_eq!(records.len(), 1);
    }

    #[test]
    fn absolute_paths_are_kept() {
        let (_dir, path) = write_manifest("path,label\n/data/x.png,0\n");
        let records = load_manifest(&path).unwrap();
        assert_eq!(records[0].image_path, Path::new("/data/x.png"));
    }

    #[test]
    fn missing_comma_is_a_parse_error() {
        let (_dir, path) = write_manifest("path,label\nnocomma\n");
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn empty_path_is_rejected() {
        let (_dir, path) = write_manifest("path,label\n,1\n");
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn class_counts_tally_labels() {
        let records = vec![
            SampleRecord {
                image_path: "a".into(),
                label: 0,
            },
            SampleRecord {
                image_path: "b".into(),
                label: 1,
            },
            SampleRecord {
                image_path: "c".into(),
                label: 0,
            },
        ];
        assert_eq!(class_counts(&records), (2, 1));
    }
}
