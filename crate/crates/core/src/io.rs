//! Binary and text file formats.
//!
//! Binary files start with a four-byte magic followed by little-endian
//! integers and IEEE doubles, so every value round-trips bit for bit.
//! Every writer goes through a temporary file in the destination directory
//! that is renamed into place once complete.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Grid, SparseDesign};
use crate::model::{Image, Sinogram};
use crate::mri::Segmentation;

pub const IMAGE_MAGIC: &[u8; 4] = b"NPLI";
pub const SINOGRAM_MAGIC: &[u8; 4] = b"NPLS";
pub const LABELS_MAGIC: &[u8; 4] = b"NPLL";
pub const DESIGN_MAGIC: &[u8; 4] = b"NPLD";

/// Write `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Lowercase hex SHA-256 of the bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if buf.len() < 4 || &buf[..4] != magic {
            return Err(Error::format(
                path,
                format!("expected magic {}", String::from_utf8_lossy(magic)),
            ));
        }
        Ok(Reader { path, buf, pos: 4 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format(self.path, "size overflows usize"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        self.expect_at_least(n, 8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn expect_at_least(&self, n: usize, width: usize) -> Result<()> {
        match n.checked_mul(width) {
            Some(b) if b <= self.buf.len() - self.pos => Ok(()),
            _ => Err(Error::format(
                self.path,
                "declared length exceeds file size",
            )),
        }
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.path, "trailing bytes after payload"));
        }
        Ok(())
    }
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_image(image: &Image) -> Vec<u8> {
    let g = image.grid();
    let mut out = Vec::with_capacity(20 + 8 * image.len());
    out.extend_from_slice(IMAGE_MAGIC);
    push_u64(&mut out, g.width as u64);
    push_u64(&mut out, g.height as u64);
    push_f64s(&mut out, image.values());
    out
}

/// Images are stored without the physical extent; `extent` is attached on
/// read.
pub fn decode_image(path: &Path, bytes: &[u8], extent: f64) -> Result<Image> {
    let mut r = Reader::new(path, bytes, IMAGE_MAGIC)?;
    let w = r.usize()?;
    let h = r.usize()?;
    let n = w
        .checked_mul(h)
        .ok_or_else(|| Error::format(path, "grid size overflows"))?;
    let values = r.f64s(n)?;
    r.finish()?;
    Image::new(Grid::new(w, h, extent)?, values)
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    write_atomic(path, &encode_image(image))
}

pub fn read_image(path: &Path, extent: f64) -> Result<Image> {
    decode_image(path, &read_bytes(path)?, extent)
}

pub fn encode_sinogram(s: &Sinogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * s.d());
    out.extend_from_slice(SINOGRAM_MAGIC);
    push_u64(&mut out, s.d() as u64);
    out.extend_from_slice(&s.t().to_le_bytes());
    push_f64s(&mut out, s.values());
    out
}

pub fn decode_sinogram(path: &Path, bytes: &[u8]) -> Result<Sinogram> {
    let mut r = Reader::new(path, bytes, SINOGRAM_MAGIC)?;
    let d = r.usize()?;
    let t = r.f64()?;
    let values = r.f64s(d)?;
    r.finish()?;
    Sinogram::new(values, t)
}

pub fn write_sinogram(path: &Path, s: &Sinogram) -> Result<()> {
    write_atomic(path, &encode_sinogram(s))
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    decode_sinogram(path, &read_bytes(path)?)
}

/// Label maps: magic, width, height, number of maps, then `i32` labels map
/// by map.
pub fn encode_segmentation(seg: &Segmentation) -> Vec<u8> {
    let g = seg.grid();
    let mut out = Vec::new();
    out.extend_from_slice(LABELS_MAGIC);
    push_u64(&mut out, g.width as u64);
    push_u64(&mut out, g.height as u64);
    push_u64(&mut out, seg.images().len() as u64);
    for labels in seg.images() {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

pub fn decode_segmentation(path: &Path, bytes: &[u8], extent: f64) -> Result<Segmentation> {
    let mut r = Reader::new(path, bytes, LABELS_MAGIC)?;
    let w = r.usize()?;
    let h = r.usize()?;
    let k = r.usize()?;
    let grid = Grid::new(w, h, extent)?;
    r.expect_at_least(k.saturating_mul(grid.n_pixels()), 4)?;
    let mut images = Vec::with_capacity(k);
    for _ in 0..k {
        images.push(
            (0..grid.n_pixels())
                .map(|_| r.i32())
                .collect::<Result<Vec<_>>>()?,
        );
    }
    r.finish()?;
    Segmentation::new(grid, images)
}

/// Manifest listing the segment count of every label map.
pub fn segmentation_manifest(seg: &Segmentation) -> String {
    let mut s = format!("images={}\n", seg.images().len());
    for (k, c) in seg.counts().iter().enumerate() {
        let _ = writeln!(s, "segments_{k}={c}");
    }
    s
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

/// Write the label maps and their `.manifest` companion.
pub fn write_segmentation(path: &Path, seg: &Segmentation) -> Result<()> {
    write_atomic(path, &encode_segmentation(seg))?;
    write_text(&manifest_path(path), &segmentation_manifest(seg))
}

/// Read label maps; when the manifest exists its counts must agree.
pub fn read_segmentation(path: &Path, extent: f64) -> Result<Segmentation> {
    let seg = decode_segmentation(path, &read_bytes(path)?, extent)?;
    let mp = manifest_path(path);
    if mp.exists() {
        let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        if text != segmentation_manifest(&seg) {
            return Err(Error::format(
                &mp,
                "segment counts disagree with the label maps",
            ));
        }
    }
    Ok(seg)
}

/// Binary CSR: magic, `d`, `p`, `nnz`, row pointers, column indices (all
/// `u64`), then values and column sums.
pub fn encode_design(a: &SparseDesign) -> Vec<u8> {
    let (ptr, idx, val) = a.csr();
    let mut out = Vec::with_capacity(28 + 8 * (ptr.len() + 2 * idx.len() + a.p()));
    out.extend_from_slice(DESIGN_MAGIC);
    push_u64(&mut out, a.d() as u64);
    push_u64(&mut out, a.p() as u64);
    push_u64(&mut out, a.nnz() as u64);
    for &p in ptr {
        push_u64(&mut out, p as u64);
    }
    for &j in idx {
        push_u64(&mut out, j as u64);
    }
    push_f64s(&mut out, val);
    push_f64s(&mut out, a.col_sums());
    out
}

pub fn decode_design(path: &Path, bytes: &[u8]) -> Result<SparseDesign> {
    let mut r = Reader::new(path, bytes, DESIGN_MAGIC)?;
    let d = r.usize()?;
    let p = r.usize()?;
    let nnz = r.usize()?;
    r.expect_at_least(
        d.saturating_add(1)
            .saturating_add(nnz.saturating_mul(2))
            .saturating_add(p),
        8,
    )?;
    let ptr = (0..=d).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let idx = (0..nnz).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let val = r.f64s(nnz)?;
    let sums = r.f64s(p)?;
    r.finish()?;
    if ptr[0] != 0 || ptr[d] != nnz || ptr.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::format(path, "row pointers are not monotone"));
    }
    let rows = (0..d)
        .map(|i| (ptr[i]..ptr[i + 1]).map(|k| (idx[k], val[k])).collect())
        .collect();
    SparseDesign::from_rows(p, rows)
        .and_then(|a| a.with_col_sums(sums))
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_design(path: &Path, a: &SparseDesign) -> Result<()> {
    write_atomic(path, &encode_design(a))
}

pub fn read_design(path: &Path) -> Result<SparseDesign> {
    decode_design(path, &read_bytes(path)?)
}

/// Text COO: header `d p nnz`, then `i j value` per entry. Column sums are
/// recomputed on reading.
pub fn design_to_coo(a: &SparseDesign) -> String {
    let mut s = format!("{} {} {}\n", a.d(), a.p(), a.nnz());
    for i in 0..a.d() {
        let (cols, vals) = a.row(i);
        for (j, v) in cols.iter().zip(vals) {
            let _ = writeln!(s, "{i} {j} {v}");
        }
    }
    s
}

pub fn design_from_coo(path: &Path, text: &str) -> Result<SparseDesign> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let bad = |msg: &str| Error::format(path, msg.to_string());
    let head: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("missing header"))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad("header must be `d p nnz`")))
        .collect::<Result<_>>()?;
    let [d, p, nnz] = head[..] else {
        return Err(bad("header must be `d p nnz`"));
    };
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d];
    let mut count = 0;
    for line in lines {
        let mut it = line.split_whitespace();
        let (Some(i), Some(j), Some(v), None) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(bad("entries must be `i j value`"));
        };
        let i: usize = i.parse().map_err(|_| bad("bad row index"))?;
        let j: usize = j.parse().map_err(|_| bad("bad column index"))?;
        let v: f64 = v.parse().map_err(|_| bad("bad value"))?;
        if i >= d || j >= p {
            return Err(bad("index out of range"));
        }
        rows[i].push((j, v));
        count += 1;
    }
    if count != nnz {
        return Err(bad("entry count disagrees with header"));
    }
    SparseDesign::from_rows(p, rows)
}

/// `x,y,value` with `x` the column and `y` the row.
pub fn image_csv(image: &Image) -> String {
    let g = image.grid();
    let mut s = String::from("x,y,value\n");
    for (j, v) in image.values().iter().enumerate() {
        let (r, c) = g.row_col(j);
        let _ = writeln!(s, "{c},{r},{v}");
    }
    s
}

pub fn sinogram_csv(sino: &Sinogram) -> String {
    let mut s = String::from("lor,value\n");
    for (i, v) in sino.values().iter().enumerate() {
        let _ = writeln!(s, "{i},{v}");
    }
    s
}

/// 16-bit binary PGM scaled from `[min, max]` to `[0, 65535]`, and the
/// sidecar text recording the scaling.
pub fn encode_pgm(image: &Image) -> (Vec<u8>, String) {
    let g = image.grid();
    let min = image.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let max = image.max();
    let span = max - min;
    let mut out = format!("P5\n{} {}\n65535\n", g.width, g.height).into_bytes();
    for &v in image.values() {
        let q = if span > 0.0 {
            ((v - min) / span * 65535.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&q.to_be_bytes());
    }
    (out, format!("min={min}\nmax={max}\n"))
}

/// Writes `path` and `path.scale.txt`.
pub fn write_pgm(path: &Path, image: &Image) -> Result<()> {
    let (bytes, scale) = encode_pgm(image);
    write_atomic(path, &bytes)?;
    let mut side = path.as_os_str().to_owned();
    side.push(".scale.txt");
    write_text(Path::new(&side), &scale)
}

/// Parse `key=value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(path: &Path, text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::format(
                path,
                format!("line {}: expected key=value", n + 1),
            ));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_and_sinogram_round_trip() {
        let g = Grid::new(3, 2, 1.0).unwrap();
        let img = Image::new(g, vec![0.0, 1.0 / 3.0, 2.5e-300, 7.0, 1e300, 0.1]).unwrap();
        let p = Path::new("mem");
        assert_eq!(decode_image(p, &encode_image(&img), 1.0).unwrap(), img);
        let s = Sinogram::new(vec![0.0, 5.0, 9.0], 2.5).unwrap();
        assert_eq!(decode_sinogram(p, &encode_sinogram(&s)).unwrap(), s);
        assert!(decode_sinogram(p, &encode_image(&img)).is_err());
        let mut short = encode_image(&img);
        short.pop();
        assert!(decode_image(p, &short, 1.0).is_err());
    }

    #[test]
    fn design_round_trips() {
        let a = crate::misspec::design();
        let p = Path::new("mem");
        let b = decode_design(p, &encode_design(&a)).unwrap();
        assert_eq!(b.to_dense(), a.to_dense());
        let c = design_from_coo(p, &design_to_coo(&a)).unwrap();
        assert_eq!(c.to_dense(), a.to_dense());
    }

    #[test]
    fn key_values() {
        let kv = parse_key_values(Path::new("c"), "# head\na = 1\n\nb=x # tail\n").unwrap();
        assert_eq!(kv, vec![("a".into(), "1".into()), ("b".into(), "x".into())]);
        assert!(parse_key_values(Path::new("c"), "novalue\n").is_err());
    }

    #[test]
    fn pgm_header_and_scale() {
        let g = Grid::new(2, 1, 1.0).unwrap();
        let (bytes, side) = encode_pgm(&Image::new(g, vec![1.0, 3.0]).unwrap());
        assert!(bytes.starts_with(b"P5\n2 1\n65535\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 0, 255, 255]);
        assert_eq!(side, "min=1\nmax=3\n");
    }
}
