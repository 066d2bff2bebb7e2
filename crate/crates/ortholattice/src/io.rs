//! File emission and parsing: PGM/PNG images, legacy VTK fields, metrics CSV
//! and design checkpoints.
//!
//! All grid fields in memory are row-major with row 0 at the *bottom*; image
//! formats store rows top-to-bottom, so writers flip vertically.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimize::DesignState;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

fn bad(msg: impl Into<String>) -> IoError {
    IoError::Format(msg.into())
}

/// Quantize a unit-interval value to one byte.
fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Write a scalar field in [0, 1] as binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, field: &[f64], nx: usize, ny: usize) -> Result<(), IoError> {
    assert_eq!(field.len(), nx * ny);
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "P5\n{nx} {ny}\n255\n")?;
    for iy in (0..ny).rev() {
        let row: Vec<u8> = field[iy * nx..(iy + 1) * nx].iter().map(|&v| quantize(v)).collect();
        w.write_all(&row)?;
    }
    Ok(())
}

/// Read a binary PGM written by [`write_pgm`]; returns `(field, nx, ny)` with
/// row 0 at the bottom and values mapped back to [0, 1].
pub fn read_pgm(path: &Path) -> Result<(Vec<f64>, usize, usize), IoError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut token = || -> Result<String, IoError> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("unexpected end of PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(bad("not a P5 PGM"));
    }
    let nx: usize = token()?.parse().map_err(|_| bad("bad width"))?;
    let ny: usize = token()?.parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = token()?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad(format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + nx * ny {
        return Err(bad("truncated PGM payload"));
    }
    let mut field = vec![0.0; nx * ny];
    for ry in 0..ny {
        let iy = ny - 1 - ry;
        for ix in 0..nx {
            field[iy * nx + ix] = bytes[pos + ry * nx + ix] as f64 / 255.0;
        }
    }
    Ok((field, nx, ny))
}

/// Write a scalar field in [0, 1] as an 8-bit grayscale PNG.
pub fn write_png(path: &Path, field: &[f64], nx: usize, ny: usize) -> Result<(), IoError> {
    assert_eq!(field.len(), nx * ny);
    let mut img = image::GrayImage::new(nx as u32, ny as u32);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let iy = ny - 1 - y as usize;
        *p = image::Luma([quantize(field[iy * nx + x as usize])]);
    }
    img.save(path)?;
    Ok(())
}

/// Write cell-centered scalar fields on a uniform grid as a legacy ASCII VTK
/// rectilinear-grid file. Values are rounded to f32.
pub fn write_vtk(
    path: &Path,
    nx: usize,
    ny: usize,
    h: f64,
    fields: &[(&str, &[f64])],
) -> Result<(), IoError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "ortholattice fields")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET RECTILINEAR_GRID")?;
    writeln!(w, "DIMENSIONS {} {} 1", nx + 1, ny + 1)?;
    writeln!(w, "X_COORDINATES {} float", nx + 1)?;
    for i in 0..=nx {
        write!(w, "{} ", (i as f64 * h) as f32)?;
    }
    writeln!(w)?;
    writeln!(w, "Y_COORDINATES {} float", ny + 1)?;
    for i in 0..=ny {
        write!(w, "{} ", (i as f64 * h) as f32)?;
    }
    writeln!(w)?;
    writeln!(w, "Z_COORDINATES 1 float")?;
    writeln!(w, "0")?;
    writeln!(w, "CELL_DATA {}", nx * ny)?;
    for (name, data) in fields {
        assert_eq!(data.len(), nx * ny, "field {name} has wrong length");
        writeln!(w, "SCALARS {name} float 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for (i, &v) in data.iter().enumerate() {
            write!(w, "{}", v as f32)?;
            if (i + 1) % 8 == 0 || i + 1 == data.len() {
                writeln!(w)?;
            } else {
                write!(w, " ")?;
            }
        }
    }
    Ok(())
}

/// Parsed VTK cell data: `(nx, ny, named fields)`.
pub struct VtkCellData {
    pub nx: usize,
    pub ny: usize,
    pub x: Vec<f32>,
    pub y: Vec<f32>,
    pub fields: Vec<(String, Vec<f32>)>,
}

/// Read a legacy ASCII rectilinear-grid VTK file with cell-centered scalars.
pub fn read_vtk(path: &Path) -> Result<VtkCellData, IoError> {
    let mut tokens: Vec<String> = Vec::new();
    for line in BufReader::new(std::fs::File::open(path)?).lines().skip(2) {
        tokens.extend(line?.split_whitespace().map(str::to_string));
    }
    let mut it = tokens.into_iter().peekable();
    let expect = |want: &str, it: &mut std::iter::Peekable<std::vec::IntoIter<String>>| -> Result<(), IoError> {
        match it.next() {
            Some(t) if t == want => Ok(()),
            other => Err(bad(format!("expected {want}, got {other:?}"))),
        }
    };
    let num = |it: &mut std::iter::Peekable<std::vec::IntoIter<String>>| -> Result<f64, IoError> {
        it.next()
            .ok_or_else(|| bad("unexpected end of file"))?
            .parse()
            .map_err(|e| bad(format!("bad number: {e}")))
    };
    expect("ASCII", &mut it)?;
    expect("DATASET", &mut it)?;
    expect("RECTILINEAR_GRID", &mut it)?;
    expect("DIMENSIONS", &mut it)?;
    let nxp = num(&mut it)? as usize;
    let nyp = num(&mut it)? as usize;
    let _nzp = num(&mut it)? as usize;
    let coords = |axis: &str, n: usize, it: &mut std::iter::Peekable<std::vec::IntoIter<String>>| -> Result<Vec<f32>, IoError> {
        match it.next() {
            Some(t) if t == format!("{axis}_COORDINATES") => {}
            other => return Err(bad(format!("expected {axis}_COORDINATES, got {other:?}"))),
        }
        let cnt = num(it)? as usize;
        if cnt != n {
            return Err(bad(format!("{axis} coordinate count {cnt} != {n}")));
        }
        it.next(); // dtype
        (0..n).map(|_| num(it).map(|v| v as f32)).collect()
    };
    let x = coords("X", nxp, &mut it)?;
    let y = coords("Y", nyp, &mut it)?;
    let _z = coords("Z", 1, &mut it)?;
    expect("CELL_DATA", &mut it)?;
    let ncell = num(&mut it)? as usize;
    let (nx, ny) = (nxp - 1, nyp - 1);
    if ncell != nx * ny {
        return Err(bad(format!("cell count {ncell} != {nx}*{ny}")));
    }
    let mut fields = Vec::new();
    while it.peek().is_some() {
        expect("SCALARS", &mut it)?;
        let name = it.next().ok_or_else(|| bad("missing field name"))?;
        it.next(); // dtype
        it.next(); // components
        expect("LOOKUP_TABLE", &mut it)?;
        it.next(); // table name
        let data: Result<Vec<f32>, _> = (0..ncell).map(|_| num(&mut it).map(|v| v as f32)).collect();
        fields.push((name, data?));
    }
    Ok(VtkCellData { nx, ny, x, y, fields })
}

/// One row of the run metrics table.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub problem: String,
    pub nx: usize,
    pub ny: usize,
    pub form: usize,
    pub m_infill: f64,
    pub v_max: f64,
    pub epsilon_hf: f64,
    pub adaptive: bool,
    pub iters: usize,
    /// coarse-scale compliance and volume fraction
    pub j_coarse: f64,
    pub v_coarse: f64,
    /// fine-scale reference compliance (refined coarse design)
    pub j_fine: f64,
    /// projected-lattice compliance and volume fraction
    pub j_proj: f64,
    pub v_proj: f64,
    pub seams: usize,
    pub map_residual_1: f64,
    pub map_residual_2: f64,
    pub t_opt_s: f64,
    pub t_proj_s: f64,
    pub t_eval_s: f64,
}

pub const METRICS_HEADER: &str = "schema,problem,nx,ny,form,m_infill,v_max,epsilon_hf,adaptive,iters,\
j_coarse,v_coarse,j_fine,j_proj,v_proj,seams,map_residual_1,map_residual_2,t_opt_s,t_proj_s,t_eval_s";
pub const METRICS_SCHEMA: &str = "ortholattice-metrics-v1";

/// Write the metrics table; an empty record list yields a header-only file.
pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<(), IoError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            METRICS_SCHEMA,
            r.problem,
            r.nx,
            r.ny,
            r.form,
            r.m_infill,
            r.v_max,
            r.epsilon_hf,
            r.adaptive,
            r.iters,
            r.j_coarse,
            r.v_coarse,
            r.j_fine,
            r.j_proj,
            r.v_proj,
            r.seams,
            r.map_residual_1,
            r.map_residual_2,
            r.t_opt_s,
            r.t_proj_s,
            r.t_eval_s
        )?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    state: DesignState,
}

/// Serialize a design iterate to JSON.
pub fn write_checkpoint(path: &Path, state: &DesignState) -> Result<(), IoError> {
    let cp = Checkpoint {
        version: 1,
        state: state.clone(),
    };
    let w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(w, &cp)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<DesignState, IoError> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let cp: Checkpoint = serde_json::from_reader(r)?;
    if cp.version != 1 {
        return Err(bad(format!("unsupported checkpoint version {}", cp.version)));
    }
    Ok(cp.state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn pgm_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.pgm");
        // rows stored bottom-up: bottom [0.5, 0.25], top [0.0, 1.0]
        write_pgm(&p, &[0.5, 0.25, 0.0, 1.0], 2, 2).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..9], b"P5\n2 2\n25");
        assert_eq!(&bytes[bytes.len() - 4..], &[0u8, 255, 128, 64]);
    }

    #[test]
    fn pgm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.pgm");
        let field: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        write_pgm(&p, &field, 4, 3).unwrap();
        let (back, nx, ny) = read_pgm(&p).unwrap();
        assert_eq!((nx, ny), (4, 3));
        for (a, b) in field.iter().zip(&back) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn png_writes_valid_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        write_png(&p, &[0.0, 0.5, 1.0, 0.25], 2, 2).unwrap();
        let img = image::open(&p).unwrap().into_luma8();
        assert_eq!(img.dimensions(), (2, 2));
        // top row of the image is the last stored row
        assert_eq!(img.get_pixel(0, 0).0[0], 255);
        assert_eq!(img.get_pixel(0, 1).0[0], 0);
    }

    #[test]
    fn vtk_roundtrip_f32() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.vtk");
        let rho: Vec<f64> = (0..6).map(|i| (i as f64 * 0.137).sin().abs()).collect();
        let theta: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        write_vtk(&p, 3, 2, 0.25, &[("rho", &rho), ("theta", &theta)]).unwrap();
        let data = read_vtk(&p).unwrap();
        assert_eq!((data.nx, data.ny), (3, 2));
        assert_eq!(data.x.len(), 4);
        assert!((data.x[3] - 0.75).abs() < 1e-7);
        assert_eq!(data.fields.len(), 2);
        assert_eq!(data.fields[0].0, "rho");
        for (a, b) in rho.iter().zip(&data.fields[0].1) {
            assert_eq!(*a as f32, *b);
        }
        for (a, b) in theta.iter().zip(&data.fields[1].1) {
            assert_eq!(*a as f32, *b);
        }
    }

    #[test]
    fn metrics_empty_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&p, &[]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn metrics_row_parses_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rec = MetricsRecord {
            problem: "mbb".into(),
            nx: 300,
            ny: 100,
            form: 1,
            m_infill: 0.5,
            v_max: 0.4,
            epsilon_hf: 20.0,
            adaptive: true,
            iters: 321,
            j_coarse: 291.14,
            j_proj: 295.0,
            ..Default::default()
        };
        write_metrics(&p, &[rec]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header.len(), row.len());
        assert_eq!(row[0], METRICS_SCHEMA);
        let j: f64 = row[header.iter().position(|&h| h == "j_coarse").unwrap()].parse().unwrap();
        assert_eq!(j, 291.14);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("state.json");
        let g = Grid::without_padding(3, 2, 0.5);
        let n = g.num_elements();
        let state = DesignState {
            grid: g,
            mu: (0..n).map(|i| i as f64 / n as f64).collect(),
            a1: vec![0.6; n],
            a2: vec![0.7; n],
            theta: vec![0.1; n],
            beta: 8.0,
            iter: 42,
        };
        write_checkpoint(&p, &state).unwrap();
        let back = read_checkpoint(&p).unwrap();
        assert_eq!(back.iter, 42);
        assert_eq!(back.beta, 8.0);
        assert_eq!(back.mu, state.mu);
        assert_eq!(back.grid, state.grid);
    }
}
