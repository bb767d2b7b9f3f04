//! Dataset manifests: one `input_path<TAB>gt_path` per line. Relative paths
//! resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use super::{read_depth_pgm, DepthSample, MAX_RANGE};
use crate::error::{Error, Result};

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<(PathBuf, PathBuf)>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.lines() {
        let trimmed = line.trim_end_matches('\r');
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            let mut parts = trimmed.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    out.push((base.join(a), base.join(b)));
                }
                _ => {
                    return Err(Error::Format {
                        offset,
                        msg: format!("manifest line '{trimmed}' is not input<TAB>gt"),
                    })
                }
            }
        }
        offset += line.len() + 1;
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, pairs: &[(String, String)]) -> Result<()> {
    let mut s = String::new();
    for (a, b) in pairs {
        s.push_str(a);
        s.push('\t');
        s.push_str(b);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Loads every pair in a manifest. Sample ids are the input file stems.
pub fn load_dataset(manifest: impl AsRef<Path>) -> Result<Vec<DepthSample>> {
    let pairs = read_manifest(manifest)?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    pairs
        .iter()
        .map(|(inp, gt)| {
            let id = inp
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            DepthSample::new(id, read_depth_pgm(inp)?, read_depth_pgm(gt)?, MAX_RANGE)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        write_manifest(&p, &[("a.pgm".into(), "b.pgm".into())]).unwrap();
        let pairs = read_manifest(&p).unwrap();
        assert_eq!(pairs, vec![(dir.path().join("a.pgm"), dir.path().join("b.pgm"))]);
        fs::write(&p, "ok\tfine\nbroken line\n").unwrap();
        match read_manifest(&p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
    }
}
