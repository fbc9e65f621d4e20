//! Artifact formats: 8-bit PGM images with a JSON sidecar, raw little-endian
//! f32 field dumps, a plain SVG scatter plot, and atomic file writes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Header line plus rows, newline-terminated.
pub fn csv_text(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

fn field_dims<T: Real>(f: &Tensor<T>) -> Result<(usize, usize)> {
    match *f.shape() {
        [h, w] => Ok((h, w)),
        _ => Err(Error::config(format!(
            "expected an [H,W] field, got {:?}",
            f.shape()
        ))),
    }
}

/// Min-max scale applied to an image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgmSidecar {
    pub width: usize,
    pub height: usize,
    pub min: f64,
    pub max: f64,
    pub maxval: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

/// Binary PGM bytes, each pixel `round(255 * (x - min) / (max - min))`;
/// a constant field maps to 0.
pub fn encode_pgm<T: Real>(f: &Tensor<T>) -> Result<(Vec<u8>, PgmSidecar)> {
    let (h, w) = field_dims(f)?;
    let vals: Vec<f64> = f.data().iter().map(|x| x.to_f64_lossy()).collect();
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    let span = max - min;
    bytes.extend(vals.iter().map(|&x| {
        if span > 0.0 {
            (255.0 * (x - min) / span).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    Ok((
        bytes,
        PgmSidecar {
            width: w,
            height: h,
            min,
            max,
            maxval: 255,
            source: None,
        },
    ))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

/// Writes `path` and its `<path>.json` sidecar.
pub fn write_pgm<T: Real>(
    path: &Path,
    f: &Tensor<T>,
    source: Option<&str>,
) -> Result<Vec<PathBuf>> {
    let (bytes, mut meta) = encode_pgm(f)?;
    meta.source = source.map(str::to_string);
    write_atomic(path, &bytes)?;
    let side = sidecar_path(path);
    write_json(&side, &meta)?;
    Ok(vec![path.to_path_buf(), side])
}

/// Parses binary PGM bytes into `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || Error::config("not a binary 8-bit PGM file");
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| bad())?
                .to_string(),
        );
    }
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    if fields[0] != "P5" || num(&fields[3])? != 255 {
        return Err(bad());
    }
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let pixels = bytes.get(pos..pos + w * h).ok_or_else(bad)?.to_vec();
    Ok((w, h, pixels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpSidecar {
    pub width: usize,
    pub height: usize,
    pub dtype: String,
    pub field: String,
    pub step: usize,
}

pub const DUMP_DTYPE: &str = "f32le";

/// Row-major little-endian f32 dump with a `<path>.json` sidecar.
pub fn write_dump<T: Real>(
    path: &Path,
    f: &Tensor<T>,
    field: &str,
    step: usize,
) -> Result<Vec<PathBuf>> {
    let (h, w) = field_dims(f)?;
    let bytes: Vec<u8> = f
        .data()
        .iter()
        .flat_map(|x| (x.to_f64_lossy() as f32).to_le_bytes())
        .collect();
    write_atomic(path, &bytes)?;
    let side = sidecar_path(path);
    let meta = DumpSidecar {
        width: w,
        height: h,
        dtype: DUMP_DTYPE.to_string(),
        field: field.to_string(),
        step,
    };
    write_json(&side, &meta)?;
    Ok(vec![path.to_path_buf(), side])
}

pub fn read_dump(path: &Path) -> Result<(Tensor<f32>, DumpSidecar)> {
    let meta: DumpSidecar = read_json(&sidecar_path(path))?;
    if meta.dtype != DUMP_DTYPE {
        return Err(Error::config(format!(
            "unsupported dump dtype {:?}",
            meta.dtype
        )));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * meta.width * meta.height {
        return Err(Error::config(format!(
            "{} holds {} bytes, sidecar promises {}x{} f32 values",
            path.display(),
            bytes.len(),
            meta.height,
            meta.width
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((Tensor::new(vec![meta.height, meta.width], data)?, meta))
}

/// One labelled point of a scatter plot.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub label: String,
    pub highlight: bool,
}

/// Minimal SVG scatter: axes with range labels, points, and the highlighted
/// points joined in x order.
pub fn scatter_svg(points: &[ScatterPoint], x_label: &str, y_label: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 50.0;
    let finite: Vec<&ScatterPoint> = points
        .iter()
        .filter(|p| p.x.is_finite() && p.y.is_finite())
        .collect();
    let range = |f: fn(&ScatterPoint) -> f64| {
        let lo = finite.iter().map(|p| f(p)).fold(f64::INFINITY, f64::min);
        let hi = finite
            .iter()
            .map(|p| f(p))
            .fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        }
    };
    let (x0, x1) = range(|p| p.x);
    let (y0, y1) = range(|p| p.y);
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{M} {} L{M} {} L{} {}" stroke="black" fill="none"/>"#,
        M,
        H - M,
        W - M,
        H - M
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        W / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{M}" y="{}" font-size="10">{x0}</text>"#,
        H - M + 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{x1}</text>"#,
        W - M,
        H - M + 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{y0}</text>"#,
        M - 4.0,
        H - M
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{M}" font-size="10" text-anchor="end">{y1}</text>"#,
        M - 4.0
    );

    let mut front: Vec<&&ScatterPoint> = finite.iter().filter(|p| p.highlight).collect();
    front.sort_by(|a, b| a.x.total_cmp(&b.x));
    if front.len() > 1 {
        let d: Vec<String> = front
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{}{} {}", if i == 0 { 'M' } else { 'L' }, sx(p.x), sy(p.y)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" stroke="red" fill="none"/>"#, d.join(" "));
    }
    for p in &finite {
        let color = if p.highlight { "red" } else { "gray" };
        let _ = writeln!(
            s,
            r#"<circle cx="{}" cy="{}" r="4" fill="{color}"><title>{}</title></circle>"#,
            sx(p.x),
            sy(p.y),
            p.label
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10">{}</text>"#,
            sx(p.x) + 6.0,
            sy(p.y) - 6.0,
            p.label
        );
    }
    s.push_str("</svg>\n");
    s
}
