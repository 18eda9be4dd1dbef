//! Exact Euclidean distance transform and binary masks.
//!
//! The transform is separable: a per-row scan gives each cell its distance
//! to the nearest background cell in the same row, then a per-column lower
//! envelope of parabolas combines rows. Both passes run on integers, so
//! squared distances are exact.

use std::io::Write;
use std::path::Path;

use super::Matrix;
use crate::error::{Error, Result};

/// Boolean grid, `true` = foreground. Cells are stored row-major with
/// `height` rows of `width` cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    cells: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, cells: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("mask dimensions must be positive"));
        }
        if cells.len() != width * height {
            return Err(Error::shape(format!(
                "{} cells for a {width}x{height} mask",
                cells.len()
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            cells,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.cells[y * self.width + x] = value;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn has_background(&self) -> bool {
        self.cells.iter().any(|c| !c)
    }

    /// Parses a binary PGM (`P5`). Nonzero samples are foreground.
    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos)?;
        if magic != b"P5" {
            return Err(Error::Parse("not a binary PGM (missing P5 magic)".into()));
        }
        let width = parse_header_number(next_token(bytes, &mut pos)?, "width")?;
        let height = parse_header_number(next_token(bytes, &mut pos)?, "height")?;
        let maxval = parse_header_number(next_token(bytes, &mut pos)?, "maxval")?;
        if width == 0 || height == 0 {
            return Err(Error::Parse("PGM dimensions must be positive".into()));
        }
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Parse(format!("PGM maxval {maxval} out of range")));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::Parse("PGM header not terminated by whitespace".into()));
        }
        pos += 1;
        let sample = if maxval < 256 { 1 } else { 2 };
        let count = width
            .checked_mul(height)
            .and_then(|c| c.checked_mul(sample))
            .ok_or_else(|| Error::Parse("PGM dimensions overflow".into()))?;
        let raster = bytes
            .get(pos..)
            .filter(|r| r.len() >= count)
            .ok_or_else(|| Error::Parse("PGM raster truncated".into()))?;
        let cells = raster[..count]
            .chunks(sample)
            .map(|s| s.iter().any(|&b| b != 0))
            .collect();
        Self::new(width, height, cells)
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_pgm_bytes(&bytes)
    }

    /// 8-bit P5 encoding: foreground 255, background 0.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.cells.len() + 20);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height).unwrap();
        out.extend(self.cells.iter().map(|&c| if c { 255u8 } else { 0 }));
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_pgm_bytes()).map_err(|e| Error::io(path.as_ref(), e))
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Parse("PGM header truncated".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_header_number(token: &[u8], what: &str) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .filter(|s| s.len() <= 9 && s.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse(format!("invalid PGM {what}")))
}

/// Squared distance from every cell to the nearest background cell
/// (background cells hold 0). Result has `height` rows and `width` columns.
pub fn squared_distance_transform(mask: &BinaryMask) -> Result<Vec<Vec<u64>>> {
    if !mask.has_background() {
        return Err(Error::contract(
            "distance transform needs at least one background cell",
        ));
    }
    let (w, h) = (mask.width, mask.height);

    // Pass 1: horizontal distance to the nearest background in the row.
    let mut row_dist: Vec<Vec<Option<u64>>> = vec![vec![None; w]; h];
    for (y, out) in row_dist.iter_mut().enumerate() {
        let mut last: Option<usize> = None;
        for x in 0..w {
            if !mask.get(x, y) {
                last = Some(x);
            }
            out[x] = last.map(|b| (x - b) as u64);
        }
        let mut next: Option<usize> = None;
        for x in (0..w).rev() {
            if !mask.get(x, y) {
                next = Some(x);
            }
            if let Some(b) = next {
                let d = (b - x) as u64;
                out[x] = Some(out[x].map_or(d, |e| e.min(d)));
            }
        }
    }

    // Pass 2: lower envelope of parabolas (y - y_k)^2 + g_k^2 per column.
    let mut out = vec![vec![0u64; w]; h];
    let mut sites: Vec<i64> = Vec::with_capacity(h);
    let mut starts: Vec<i64> = Vec::with_capacity(h);
    for x in 0..w {
        sites.clear();
        starts.clear();
        let g2 = |y: i64| -> i64 {
            let g = row_dist[y as usize][x].unwrap() as i64;
            g * g
        };
        for y in 0..h as i64 {
            if row_dist[y as usize][x].is_none() {
                continue;
            }
            loop {
                match sites.last() {
                    None => {
                        sites.push(y);
                        starts.push(0);
                        break;
                    }
                    Some(&top) => {
                        let s = separation(top, y, g2(top), g2(y));
                        if s <= *starts.last().unwrap() {
                            sites.pop();
                            starts.pop();
                        } else {
                            sites.push(y);
                            starts.push(s);
                            break;
                        }
                    }
                }
            }
        }
        let mut k = 0;
        for y in 0..h as i64 {
            while k + 1 < sites.len() && starts[k + 1] <= y {
                k += 1;
            }
            let dy = y - sites[k];
            out[y as usize][x] = (dy * dy + g2(sites[k])) as u64;
        }
    }
    Ok(out)
}

/// First integer row at which the parabola rooted at `v` (v > u) is at or
/// below the one rooted at `u`.
fn separation(u: i64, v: i64, gu2: i64, gv2: i64) -> i64 {
    let num = v * v - u * u + gv2 - gu2;
    let den = 2 * (v - u);
    // ceil(num / den) for positive den
    num.div_euclid(den) + i64::from(num.rem_euclid(den) != 0)
}

/// Exact Euclidean distance to the nearest background cell.
pub fn euclidean_distance_transform(mask: &BinaryMask) -> Result<Matrix> {
    let sq = squared_distance_transform(mask)?;
    Ok(Matrix::from_fn(mask.height, mask.width, |y, x| {
        (sq[y][x] as f64).sqrt()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(mask: &BinaryMask) -> Vec<Vec<u64>> {
        let (w, h) = (mask.width(), mask.height());
        let bg: Vec<(i64, i64)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| !mask.get(x, y))
            .map(|(x, y)| (x as i64, y as i64))
            .collect();
        (0..h)
            .map(|y| {
                (0..w)
                    .map(|x| {
                        bg.iter()
                            .map(|&(bx, by)| {
                                let (dx, dy) = (bx - x as i64, by - y as i64);
                                (dx * dx + dy * dy) as u64
                            })
                            .min()
                            .unwrap()
                    })
                    .collect()
            })
            .collect()
    }

    fn disk(size: usize, r: f64) -> BinaryMask {
        let c = (size / 2) as f64;
        let cells = (0..size * size)
            .map(|k| {
                let (x, y) = ((k % size) as f64, (k / size) as f64);
                (x - c).powi(2) + (y - c).powi(2) < r * r
            })
            .collect();
        BinaryMask::new(size, size, cells).unwrap()
    }

    #[test]
    fn single_pixel() {
        let mut m = BinaryMask::empty(5, 5).unwrap();
        m.set(2, 2, true);
        let d = euclidean_distance_transform(&m).unwrap();
        assert_eq!(d[(2, 2)], 1.0);
        assert_eq!(d.sum(), 1.0);
    }

    #[test]
    fn disk_center() {
        let m = disk(21, 5.0);
        let d = euclidean_distance_transform(&m).unwrap();
        assert!((d[(10, 10)] - 5.0).abs() <= 0.5);
        assert_eq!(squared_distance_transform(&m).unwrap(), brute_force(&m));
    }

    #[test]
    fn random_masks_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let w = rng.random_range(1..20);
            let h = rng.random_range(1..20);
            let density = rng.random_range(0.5..0.99);
            let mut cells: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
            let k = rng.random_range(0..w * h);
            cells[k] = false;
            let m = BinaryMask::new(w, h, cells).unwrap();
            assert_eq!(squared_distance_transform(&m).unwrap(), brute_force(&m));
        }
    }

    #[test]
    fn all_foreground_is_an_error() {
        let m = BinaryMask::new(3, 2, vec![true; 6]).unwrap();
        assert!(matches!(
            euclidean_distance_transform(&m),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn pgm_round_trip_and_header_comments() {
        let m = disk(9, 3.0);
        assert_eq!(BinaryMask::from_pgm_bytes(&m.to_pgm_bytes()).unwrap(), m);

        let bytes = b"P5 # comment\n2 # w\n1\n65535\n\x00\x00\x01\x00";
        let m = BinaryMask::from_pgm_bytes(bytes).unwrap();
        assert_eq!(m.cells(), &[false, true]);
    }

    #[test]
    fn malformed_pgm() {
        for bad in [
            &b""[..],
            b"P2\n1 1\n255\n\x00",
            b"P5\n2 2\n255\n\x00",
            b"P5\n0 2\n255\n",
            b"P5\n1 1\n70000\n\x00\x00",
            b"P5\n1 1 255",
        ] {
            assert!(matches!(BinaryMask::from_pgm_bytes(bad), Err(Error::Parse(_))));
        }
    }
}
