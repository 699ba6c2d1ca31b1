//! Snapshot files, versioned CSV tables and checksums.
//!
//! Snapshot layout (little-endian): `b"KACL"`, format version `u32`, particle
//! count `u64`, `γ` as `f64`, time as `f64`, then `N·3` velocity components.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{KacError, Result, Vec3};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"KACL";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const CSV_SCHEMA_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 8;

/// Contents of a snapshot file.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub gamma: f64,
    pub time: f64,
    pub velocities: Vec<Vec3>,
}

pub fn encode_snapshot(s: &Snapshot) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 24 * s.velocities.len());
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(s.velocities.len() as u64).to_le_bytes());
    buf.extend_from_slice(&s.gamma.to_le_bytes());
    buf.extend_from_slice(&s.time.to_le_bytes());
    for v in &s.velocities {
        for c in v.iter() {
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    buf
}

pub fn decode_snapshot(bytes: &[u8], path: &Path) -> Result<Snapshot> {
    let corrupt = |reason: String| KacError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(corrupt("bad magic bytes".into()));
    }
    let word = |at: usize| -> [u8; 8] { bytes[at..at + 8].try_into().unwrap() };
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SNAPSHOT_VERSION {
        return Err(KacError::Version {
            found: version,
            supported: SNAPSHOT_VERSION,
        });
    }
    let n = u64::from_le_bytes(word(8));
    let gamma = f64::from_le_bytes(word(16));
    let time = f64::from_le_bytes(word(24));
    let expected = (n as u128) * 24 + HEADER_LEN as u128;
    if bytes.len() as u128 != expected {
        return Err(corrupt(format!(
            "header announces {n} particles ({expected} bytes) but the file has {} bytes",
            bytes.len()
        )));
    }
    if !(0.0..=1.0).contains(&gamma) || !time.is_finite() || time < 0.0 {
        return Err(corrupt(format!("implausible header values gamma = {gamma}, t = {time}")));
    }
    let velocities: Vec<Vec3> = bytes[HEADER_LEN..]
        .chunks_exact(24)
        .map(|c| {
            let f = |k: usize| f64::from_le_bytes(c[8 * k..8 * k + 8].try_into().unwrap());
            Vec3::new(f(0), f(1), f(2))
        })
        .collect();
    if velocities.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(corrupt("non-finite velocity".into()));
    }
    Ok(Snapshot {
        gamma,
        time,
        velocities,
    })
}

pub fn write_snapshot(path: &Path, s: &Snapshot) -> Result<()> {
    std::fs::write(path, encode_snapshot(s)).map_err(|e| KacError::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| KacError::io(path, e))?;
    decode_snapshot(&bytes, path)
}

/// Writes a CSV table whose first line is `# kaclab <table> schema v1`.
pub fn write_csv(path: &Path, table: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let file = File::create(path).map_err(|e| KacError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "# kaclab {table} schema v{CSV_SCHEMA_VERSION}")?;
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    };
    go().map_err(|e| KacError::io(path, e))
}

/// Reads a table written by [`write_csv`], returning header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| KacError::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    let header = lines
        .next()
        .ok_or_else(|| KacError::Corrupt {
            path: path.to_path_buf(),
            reason: "missing header".into(),
        })?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok((header, rows))
}

/// Column `name` of a table parsed as numbers.
pub fn csv_column(header: &[String], rows: &[Vec<String>], name: &str, path: &Path) -> Result<Vec<f64>> {
    let k = header.iter().position(|h| h == name).ok_or_else(|| KacError::Corrupt {
        path: path.to_path_buf(),
        reason: format!("missing column {name}"),
    })?;
    rows.iter()
        .map(|r| {
            r.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| KacError::Corrupt {
                path: path.to_path_buf(),
                reason: format!("bad value in column {name}"),
            })
        })
        .collect()
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| KacError::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Shortest round-trip formatting for CSV cells.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Snapshot {
        Snapshot {
            gamma: 0.5,
            time: 1.25,
            velocities: vec![Vec3::new(1.0, -2.0, 0.5), Vec3::new(0.0, 3.0, -1.0)],
        }
    }

    #[test]
    fn snapshot_layout() {
        let bytes = encode_snapshot(&sample());
        assert_eq!(&bytes[..4], b"KACL");
        assert_eq!(bytes.len(), 32 + 48);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        let back = decode_snapshot(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn damaged_snapshots_are_rejected() {
        let good = encode_snapshot(&sample());
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(decode_snapshot(&magic, Path::new("x")), Err(KacError::Corrupt { .. })));
        let mut version = good.clone();
        version[4] = 9;
        assert!(matches!(
            decode_snapshot(&version, Path::new("x")),
            Err(KacError::Version { found: 9, supported: 1 })
        ));
        assert!(decode_snapshot(&good[..good.len() - 1], Path::new("x")).is_err());
        assert!(decode_snapshot(&good[..10], Path::new("x")).is_err());
    }

    #[test]
    fn csv_tables_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, "demo", &["a", "b"], &[vec![num(0.1), num(2.0)]]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# kaclab demo schema v1\na,b\n"));
        let (h, rows) = read_csv(&p).unwrap();
        assert_eq!(csv_column(&h, &rows, "a", &p).unwrap(), vec![0.1]);
        assert_eq!(sha256_file(&p).unwrap().len(), 64);
    }
}
