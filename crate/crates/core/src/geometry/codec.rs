//! Point-cloud files: `.xyz` text (one `x y z` triple per line) and `.dpc`
//! binary (`DPC1`, `u32` count, little-endian `f64` triples).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::PointCloud;
use crate::error::{arg_err, Error, Result};

pub const CLOUD_MAGIC: &[u8; 4] = b"DPC1";

pub fn write_dpc(cloud: &PointCloud) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + cloud.len() * 24);
    buf.extend_from_slice(CLOUD_MAGIC);
    buf.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in cloud.points() {
        for v in p {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn read_dpc(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let err = |offset: usize, message: &str| Error::Parse {
        path: path.to_path_buf(),
        location: format!("byte {offset}"),
        message: message.to_string(),
    };
    if bytes.len() < 8 {
        return Err(err(0, "file shorter than header"));
    }
    if &bytes[..4] != CLOUD_MAGIC {
        return Err(err(0, "bad magic, expected DPC1"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if n == 0 {
        return Err(arg_err!("{}: empty point cloud", path.display()));
    }
    let body = &bytes[8..];
    if body.len() != n * 24 {
        return Err(err(8, &format!("expected {} payload bytes, found {}", n * 24, body.len())));
    }
    let points = body
        .chunks_exact(24)
        .map(|c| {
            let f = |k: usize| f64::from_le_bytes(c[k * 8..k * 8 + 8].try_into().unwrap());
            [f(0), f(1), f(2)]
        })
        .collect();
    PointCloud::new(points)
}

fn write_xyz(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 72);
    for p in cloud.points() {
        s.push_str(&format!("{:.16e} {:.16e} {:.16e}\n", p[0], p[1], p[2]));
    }
    s
}

fn read_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            location: format!("line {}", lineno + 1),
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 values, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (k, f) in fields.iter().enumerate() {
            p[k] = f
                .parse::<f64>()
                .map_err(|_| err(format!("not a number: {f:?}")))?;
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(arg_err!("{}: empty point cloud", path.display()));
    }
    PointCloud::new(points)
}

enum Format {
    Text,
    Binary,
}

fn format_of(path: &Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") => Ok(Format::Text),
        Some("dpc") => Ok(Format::Binary),
        _ => Err(arg_err!(
            "{}: unknown cloud extension (use .xyz or .dpc)",
            path.display()
        )),
    }
}

pub fn save_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    let bytes = match format_of(path)? {
        Format::Text => write_xyz(cloud).into_bytes(),
        Format::Binary => write_dpc(cloud),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let format = format_of(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Binary => read_dpc(&bytes, path),
        Format::Text => {
            let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                location: format!("byte {}", e.utf8_error().valid_up_to()),
                message: "invalid UTF-8".into(),
            })?;
            read_xyz(&text, path)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_numeric_token_names_line() {
        let err = read_xyz("0 0 0\n1 2 abc\n", Path::new("x.xyz")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn empty_files_rejected() {
        assert!(matches!(
            read_xyz("\n\n", Path::new("e.xyz")),
            Err(Error::Argument(_))
        ));
        let mut bytes = CLOUD_MAGIC.to_vec();
        bytes.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            read_dpc(&bytes, Path::new("e.dpc")),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn text_round_trip_is_value_exact() {
        let c = PointCloud::new(vec![[0.1, -1.0 / 3.0, 1e-300], [123456.789, 2.0, -0.0]]).unwrap();
        let back = read_xyz(&write_xyz(&c), Path::new("t.xyz")).unwrap();
        for (a, b) in c.points().iter().zip(back.points()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-12 * a[k].abs().max(1.0));
            }
        }
    }
}
