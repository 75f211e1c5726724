//! MMRT: `"MMRT1"`, u32 LE `H W C K`, `C` NUL-terminated band names,
//! `C` little-endian f32 planes of `H*W`, then an optional u8 mask plane.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"MMRT1";

#[derive(Clone, Debug, PartialEq)]
pub struct MmrtTile {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub band_names: Vec<String>,
    /// `[C, H, W]` row-major.
    pub bands: Vec<f32>,
    pub mask: Option<Vec<u8>>,
}

impl MmrtTile {
    pub fn channels(&self) -> usize {
        self.band_names.len()
    }

    fn check(&self) -> Result<()> {
        let plane = self.height * self.width;
        if self.bands.len() != plane * self.channels() {
            return Err(Error::Format(format!(
                "MMRT tile has {} band values, expected {}",
                self.bands.len(),
                plane * self.channels()
            )));
        }
        if let Some(m) = &self.mask {
            if m.len() != plane {
                return Err(Error::Format("MMRT mask size differs from band plane".into()));
            }
            if let Some(&l) = m.iter().find(|&&l| l as usize >= self.num_classes) {
                return Err(Error::Format(format!("MMRT mask label {l} >= K={}", self.num_classes)));
            }
        }
        for n in &self.band_names {
            if n.as_bytes().contains(&0) {
                return Err(Error::Format("band name contains NUL".into()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check()?;
        let mut out = Vec::with_capacity(25 + 4 * self.bands.len() + self.height * self.width);
        out.extend_from_slice(MAGIC);
        for v in [self.height, self.width, self.channels(), self.num_classes] {
            let v = u32::try_from(v).map_err(|_| Error::Format("MMRT header field exceeds u32".into()))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        for n in &self.band_names {
            out.extend_from_slice(n.as_bytes());
            out.push(0);
        }
        for v in &self.bands {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(m) = &self.mask {
            out.extend_from_slice(m);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("MMRT: {m}"));
        if bytes.len() < 21 || &bytes[..5] != MAGIC {
            return Err(bad("missing magic"));
        }
        let field = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
        let (height, width, c, num_classes) = (field(0), field(1), field(2), field(3));
        let mut pos = 21;
        let mut band_names = Vec::with_capacity(c);
        for _ in 0..c {
            let end = bytes[pos..].iter().position(|&b| b == 0).ok_or_else(|| bad("unterminated band name"))?;
            let name = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("band name not UTF-8"))?;
            band_names.push(name.to_string());
            pos += end + 1;
        }
        let plane = height.checked_mul(width).ok_or_else(|| bad("size overflow"))?;
        let nbytes = plane.checked_mul(c).and_then(|n| n.checked_mul(4)).ok_or_else(|| bad("size overflow"))?;
        if bytes.len() < pos + nbytes {
            return Err(bad("truncated band data"));
        }
        let bands = bytes[pos..pos + nbytes]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        pos += nbytes;
        let mask = match bytes.len() - pos {
            0 => None,
            n if n == plane => Some(bytes[pos..].to_vec()),
            n => return Err(bad(&format!("{n} trailing bytes, expected 0 or {plane}"))),
        };
        let tile = MmrtTile { height, width, num_classes, band_names, bands, mask };
        tile.check()?;
        Ok(tile)
    }
}

pub fn write_mmrt(path: impl AsRef<Path>, tile: &MmrtTile) -> Result<()> {
    let bytes = tile.to_bytes()?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_mmrt(path: impl AsRef<Path>) -> Result<MmrtTile> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    MmrtTile::from_bytes(&bytes)
}
