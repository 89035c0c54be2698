//! Binary PGM (`P5`) and PPM (`P6`) with maxval 255.
//!
//! Headers may contain `#` comments between tokens. Exactly one whitespace
//! byte separates the maxval from the pixel data. Written files use the
//! canonical `P6\n<w> <h>\n255\n` form.

use super::RgbImage;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b if b.is_ascii_whitespace() => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            if self.pos >= self.bytes.len() {
                return Err(Error::Truncated {
                    what: format!("image header ({what})"),
                });
            }
            return Err(Error::Format(format!("expected {what} in image header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Format(format!("{what} out of range")))
    }
}

/// Decodes a P5/P6 file into a `(1, c, h, w)` tensor scaled to `[0, 1]`.
pub fn read_image(bytes: &[u8]) -> Result<Tensor> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(_) => {
            return Err(Error::BadMagic {
                expected: "P5 or P6",
            })
        }
        None => {
            return Err(Error::Truncated {
                what: "image magic".into(),
            })
        }
    };
    let mut header = HeaderReader { bytes, pos: 2 };
    if !bytes
        .get(2)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(Error::Format("missing whitespace after magic".into()));
    }
    let width = header.number("width")?;
    let height = header.number("height")?;
    let maxval = header.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "unsupported maxval {maxval}, expected 255"
        )));
    }
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        Some(_) => return Err(Error::Format("missing whitespace after maxval".into())),
        None => {
            return Err(Error::Truncated {
                what: "image payload".into(),
            })
        }
    }
    let payload = &bytes[header.pos + 1..];
    let expected = width * height * channels;
    if payload.len() < expected {
        return Err(Error::Truncated {
            what: format!("{width}x{height} image payload"),
        });
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after image payload",
            payload.len() - expected
        )));
    }
    let shape = Shape::new(1, channels, height, width);
    Ok(Tensor::from_fn(shape, |_, c, y, x| {
        payload[(y * width + x) * channels + c] as f32 / 255.0
    }))
}

/// Encodes an RGB image as binary PPM.
pub fn write_image(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.data());
    out
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `(1, 1, h, w)` tensor as PGM or a `(1, 3, h, w)` tensor as PPM.
/// Values are clamped to `[0, 1]` and rounded to the nearest byte.
pub fn write_tensor_image(tensor: &Tensor) -> Result<Vec<u8>> {
    let s = tensor.shape();
    if s.n != 1 || !(s.c == 1 || s.c == 3) {
        return Err(Error::shape("image tensor", "(1, 1|3, h, w)", s));
    }
    let magic = if s.c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", s.w, s.h).into_bytes();
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..s.c {
                out.push(to_byte(tensor.get(0, c, y, x)));
            }
        }
    }
    Ok(out)
}
