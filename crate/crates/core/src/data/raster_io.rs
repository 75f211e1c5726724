use crate::error::{Error, Result};

/// RGB colours by class index; indices past the table wrap around.
pub const PALETTE: [[u8; 3]; 8] = [
    [255, 255, 255], // impervious
    [0, 0, 255],     // building
    [0, 255, 0],     // vegetation / tree
    [255, 255, 0],   // car
    [0, 255, 255],   // low vegetation
    [255, 0, 0],     // clutter
    [128, 0, 128],
    [255, 128, 0],
];

/// Binary (P5) 8-bit PGM holding raw label values.
pub fn mask_to_pgm(mask: &[u8], height: usize, width: usize) -> Result<Vec<u8>> {
    if mask.len() != height * width {
        return Err(Error::shape("mask size differs from dimensions"));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(mask);
    Ok(out)
}

/// Binary (P6) PPM colour preview using [`PALETTE`].
pub fn mask_to_ppm(mask: &[u8], height: usize, width: usize) -> Result<Vec<u8>> {
    if mask.len() != height * width {
        return Err(Error::shape("mask size differs from dimensions"));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for &l in mask {
        out.extend_from_slice(&PALETTE[l as usize % PALETTE.len()]);
    }
    Ok(out)
}

/// Parses a P5 PGM as written by [`mask_to_pgm`]; returns `(height, width, pixels)`.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
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
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header not ASCII"))?);
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("only 8-bit P5 supported"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
    if bytes.len() != pos + w * h {
        return Err(bad("pixel data length mismatch"));
    }
    Ok((h, w, bytes[pos..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip_and_ppm_size() {
        let m = vec![0, 1, 2, 3, 3, 2];
        let pgm = mask_to_pgm(&m, 2, 3).unwrap();
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(read_pgm(&pgm).unwrap(), (2, 3, m.clone()));
        let ppm = mask_to_ppm(&m, 2, 3).unwrap();
        assert_eq!(ppm.len(), b"P6\n3 2\n255\n".len() + 18);
        assert_eq!(&ppm[ppm.len() - 3..], &PALETTE[2]);
        assert!(mask_to_pgm(&m, 3, 3).is_err());
    }
}
