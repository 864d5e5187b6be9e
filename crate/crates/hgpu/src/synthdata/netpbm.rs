//! Binary netpbm encoding: P6 (RGB) and P5 (grayscale), maxval 255 only.
//! Round-trips are byte-exact.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported maxval {0} (only 255)")]
    UnsupportedMaxval(u64),
}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, PnmError> {
    Err(PnmError::Parse {
        offset,
        message: message.into(),
    })
}

pub fn write_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3, "ppm payload size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn write_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height, "pgm payload size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_separators(&mut self) -> Result<(), PnmError> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn read_number(&mut self) -> Result<u64, PnmError> {
        self.skip_separators()?;
        let start = self.pos;
        while let Some(b) = self.bytes.get(self.pos) {
            if b.is_ascii_digit() {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return err(start, "expected ASCII integer in header");
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("digits are utf8");
        text.parse::<u64>()
            .map_err(|_| PnmError::Parse {
                offset: start,
                message: format!("integer out of range: {text}"),
            })
    }
}

fn read_pnm(bytes: &[u8], magic: &[u8; 2], samples: usize) -> Result<(usize, usize, Vec<u8>), PnmError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return err(0, format!(
            "bad magic (expected {})",
            std::str::from_utf8(magic).unwrap()
        ));
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    let width = r.read_number()? as usize;
    let height = r.read_number()? as usize;
    let maxval_pos = r.pos;
    let maxval = r.read_number()?;
    if maxval != 255 {
        let _ = maxval_pos;
        return Err(PnmError::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(r.pos) {
        Some(b) if b.is_ascii_whitespace() => r.pos += 1,
        _ => return err(r.pos, "expected single whitespace before payload"),
    }
    if width == 0 || height == 0 {
        return err(2, "zero image extent");
    }
    let need = width * height * samples;
    let payload = &bytes[r.pos..];
    if payload.len() < need {
        return err(
            bytes.len(),
            format!("truncated payload: need {need} bytes, have {}", payload.len()),
        );
    }
    if payload.len() > need {
        return err(r.pos + need, "trailing bytes after payload");
    }
    Ok((width, height, payload.to_vec()))
}

pub fn read_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), PnmError> {
    read_pnm(bytes, b"P6", 3)
}

pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), PnmError> {
    read_pnm(bytes, b"P5", 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_white_ppm_exact_bytes() {
        let bytes = write_ppm(1, 1, &[0xFF, 0xFF, 0xFF]);
        let mut want = b"P6\n1 1\n255\n".to_vec();
        want.extend_from_slice(&[0xFF, 0xFF, 0xFF]);
        assert_eq!(bytes, want);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let rgb: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 37 % 256) as u8).collect();
        let bytes = write_ppm(4, 3, &rgb);
        let (w, h, back) = read_ppm(&bytes).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, rgb);
        assert_eq!(write_ppm(w, h, &back), bytes);

        let gray: Vec<u8> = (0..6 * 2).map(|i| (i * 41 % 256) as u8).collect();
        let bytes = write_pgm(6, 2, &gray);
        let (w, h, back) = read_pgm(&bytes).unwrap();
        assert_eq!((w, h), (6, 2));
        assert_eq!(back, gray);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# a comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        let (w, h, data) = read_pgm(&bytes).unwrap();
        assert_eq!((w, h, data), (2, 1, vec![7, 9]));
    }

    #[test]
    fn big_maxval_is_rejected() {
        let bytes = b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0".to_vec();
        assert!(matches!(
            read_pgm(&bytes),
            Err(PnmError::UnsupportedMaxval(65535))
        ));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = b"P6\n2 2\n255\nxy".to_vec();
        match read_ppm(&bytes) {
            Err(PnmError::Parse { offset, message }) => {
                assert_eq!(offset, bytes.len());
                assert!(message.contains("truncated"));
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        match read_ppm(b"P3\n1 1\n255\n...") {
            Err(PnmError::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
