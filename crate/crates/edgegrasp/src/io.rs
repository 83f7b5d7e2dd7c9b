//! Cloud file formats: ASCII PLY (x y z, optional nx ny nz) and CSV
//! (x,y,z per line). Coordinates are meters.
//!
//! The PLY writer records the camera origin, when present, as a
//! `comment viewpoint x y z` header line, and the reader restores it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// Load a cloud from a `.ply` or `.csv` file based on its extension.
pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => read_ply(path),
        Some("csv") => read_csv(path),
        other => Err(Error::UnsupportedFormat(format!(
            "{:?} (expected .ply or .csv)",
            other.unwrap_or("none")
        ))),
    }
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let mut vertex_count = None;
    let mut properties: Vec<String> = Vec::new();
    let mut viewpoint = None;
    let parse_err = |details: &str| Error::Parse {
        path: path.to_path_buf(),
        details: details.to_string(),
    };

    match lines.next() {
        Some(Ok(l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err("missing ply magic")),
    }
    loop {
        let line = match lines.next() {
            Some(Ok(l)) => l,
            _ => return Err(parse_err("unexpected end of header")),
        };
        let line = line.trim().to_string();
        if line == "end_header" {
            break;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(parse_err("only ascii format is supported")),
            ["comment", "viewpoint", x, y, z] => {
                let parse = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| parse_err("bad viewpoint coordinate"))
                };
                viewpoint = Some(Vector3::new(parse(x)?, parse(y)?, parse(z)?));
            }
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                vertex_count = Some(n.parse::<usize>().map_err(|_| parse_err("bad vertex count"))?);
            }
            ["element", ..] => return Err(parse_err("only vertex elements are supported")),
            ["property", _, name] => properties.push(name.to_string()),
            _ => return Err(parse_err(&format!("unrecognised header line: {line}"))),
        }
    }

    let vertex_count = vertex_count.ok_or_else(|| parse_err("missing vertex element"))?;
    let idx_of = |name: &str| properties.iter().position(|p| p == name);
    let (xi, yi, zi) = match (idx_of("x"), idx_of("y"), idx_of("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(parse_err("missing x/y/z properties")),
    };
    let normal_idx = match (idx_of("nx"), idx_of("ny"), idx_of("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };

    let mut points = Vec::with_capacity(vertex_count);
    let mut normals = normal_idx.map(|_| Vec::with_capacity(vertex_count));
    for _ in 0..vertex_count {
        let line = match lines.next() {
            Some(Ok(l)) => l,
            _ => return Err(parse_err("fewer vertices than declared")),
        };
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err("bad vertex value"))?;
        if vals.len() < properties.len() {
            return Err(parse_err("vertex line has too few values"));
        }
        points.push(Vector3::new(vals[xi], vals[yi], vals[zi]));
        if let (Some(out), Some((a, b, c))) = (normals.as_mut(), normal_idx) {
            out.push(Vector3::new(vals[a], vals[b], vals[c]));
        }
    }
    Ok(PointCloud {
        points,
        normals,
        viewpoint,
    })
}

pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    writeln!(w, "ply").map_err(io_err)?;
    writeln!(w, "format ascii 1.0").map_err(io_err)?;
    if let Some(vp) = cloud.viewpoint {
        writeln!(w, "comment viewpoint {} {} {}", vp.x, vp.y, vp.z).map_err(io_err)?;
    }
    writeln!(w, "element vertex {}", cloud.len()).map_err(io_err)?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property double {axis}").map_err(io_err)?;
    }
    if cloud.normals.is_some() {
        for axis in ["nx", "ny", "nz"] {
            writeln!(w, "property double {axis}").map_err(io_err)?;
        }
    }
    writeln!(w, "end_header").map_err(io_err)?;
    for (i, p) in cloud.points.iter().enumerate() {
        match cloud.normals.as_ref() {
            Some(normals) => {
                let n = normals[i];
                writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z).map_err(io_err)?
            }
            None => writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(io_err)?,
        }
    }
    Ok(())
}

/// Read a cloud from CSV with one `x,y,z` triple per line. Blank lines and
/// `#` comments are skipped.
pub fn read_csv(path: &Path) -> Result<PointCloud> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                details: format!("bad value on line {}", lineno + 1),
            })?;
        if vals.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                details: format!("expected 3 values on line {}, got {}", lineno + 1, vals.len()),
            });
        }
        points.push(Vector3::new(vals[0], vals[1], vals[2]));
    }
    Ok(PointCloud::from_points(points))
}
