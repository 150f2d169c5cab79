//! File helpers shared by the dataset, tensor, training-log and benchmark
//! writers.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{read_tensor_csv, write_tensor_csv, Tensor};

/// Writes `contents` to a temporary file next to `path`, then renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_tensor(t: &Tensor, path: &Path) -> Result<()> {
    write_atomic(path, write_tensor_csv(t).as_bytes())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path)?;
    read_tensor_csv(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let p = Path::new("/nonexistent-dir-for-mpe-psn/x.csv");
        assert!(write_atomic(p, b"x").is_err());
    }

    #[test]
    fn tensor_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let t = Tensor::new(&[2, 1, 2], vec![0.1, -2.5, 1e-300, 3.0]).unwrap();
        save_tensor(&t, &p).unwrap();
        assert_eq!(load_tensor(&p).unwrap(), t);
    }
}
