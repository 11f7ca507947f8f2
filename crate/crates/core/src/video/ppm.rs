//! Binary PPM (P6, maxval 255) encode/decode, frame-directory I/O, and a
//! reader for concatenated P6 frames on a byte stream (the `--stream` input).

use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `[3,H,W]` frame in `[0,1]` to P6 bytes. Values are clamped and rounded;
/// a frame that came from `decode` round-trips bit-exactly.
pub fn encode(frame: &Tensor<f32>) -> Result<Vec<u8>> {
    let shape = frame.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::InvalidShape {
            op: "ppm encode",
            shape: shape.to_vec(),
            reason: "expected [3,H,W]".into(),
        });
    }
    let (h, w) = (shape[1], shape[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let data = frame.data();
    out.reserve(plane * 3);
    for i in 0..plane {
        for c in 0..3 {
            let v = (data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            out.push(v);
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = HeaderReader { bytes, pos: 0 };
    r.expect_magic()?;
    let w = r.next_int()?;
    let h = r.next_int()?;
    let maxval = r.next_int()?;
    if maxval != 255 {
        return Err(Error::Ppm(format!("unsupported maxval {maxval}, want 255")));
    }
    r.skip_single_whitespace()?;
    let plane = w * h;
    let need = plane * 3;
    if bytes.len() - r.pos < need {
        return Err(Error::Ppm(format!(
            "truncated pixel data: need {need} bytes, have {}",
            bytes.len() - r.pos
        )));
    }
    let pix = &bytes[r.pos..r.pos + need];
    let mut data = vec![0f32; need];
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = pix[i * 3 + c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn expect_magic(&mut self) -> Result<()> {
        if self.bytes.len() < 2 || &self.bytes[..2] != b"P6" {
            return Err(Error::Ppm("missing P6 magic".into()));
        }
        self.pos = 2;
        Ok(())
    }

    /// Skip whitespace and `#` comments, then parse a decimal integer.
    fn next_int(&mut self) -> Result<usize> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_digit())
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Ppm("expected integer in header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Ppm("bad integer in header".into()))
    }

    /// Exactly one whitespace byte separates the header from pixel data.
    fn skip_single_whitespace(&mut self) -> Result<()> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(Error::Ppm("missing whitespace after maxval".into())),
        }
    }
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:06}.ppm"))
}

pub fn write_frame(dir: &Path, index: usize, frame: &Tensor<f32>) -> Result<()> {
    let path = frame_path(dir, index);
    std::fs::write(&path, encode(frame)?).map_err(|e| Error::io(&path, e))
}

pub fn read_frame(dir: &Path, index: usize) -> Result<Tensor<f32>> {
    let path = frame_path(dir, index);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    decode(&bytes)
}

/// Write a whole video directory: frames plus `meta.json`.
pub fn write_video(
    dir: &Path,
    frames: &[Tensor<f32>],
    meta: &super::VideoMeta,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        write_frame(dir, i, f)?;
    }
    meta.save(dir)
}

/// Incremental reader for concatenated P6 frames (stdin / named pipe).
pub struct PpmStream<R> {
    reader: R,
}

impl<R: Read> PpmStream<R> {
    pub fn new(reader: R) -> Self {
        PpmStream { reader }
    }

    /// Next frame, or `None` on clean EOF before a new header.
    pub fn next_frame(&mut self) -> Result<Option<Tensor<f32>>> {
        // Magic first (EOF here is a clean end of stream), then scan until
        // three header integers have each been closed by whitespace.
        let mut magic = [0u8; 2];
        let mut got = 0;
        while got < 2 {
            match self.reader.read(&mut magic[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(Error::Ppm("stream ended mid-header".into())),
                Ok(n) => got += n,
                Err(e) => return Err(Error::io("<stream>", e)),
            }
        }
        if &magic != b"P6" {
            return Err(Error::Ppm("missing P6 magic in stream".into()));
        }
        let mut header = magic.to_vec();
        let mut ints = 0usize;
        let mut in_int = false;
        let mut in_comment = false;
        loop {
            let mut byte = [0u8; 1];
            match self.reader.read(&mut byte) {
                Ok(0) => return Err(Error::Ppm("stream ended mid-header".into())),
                Ok(_) => {}
                Err(e) => return Err(Error::io("<stream>", e)),
            }
            let b = byte[0];
            header.push(b);
            if in_comment {
                in_comment = b != b'\n';
                continue;
            }
            match b {
                b'#' => in_comment = true,
                b'0'..=b'9' => in_int = true,
                _ if b.is_ascii_whitespace() => {
                    if in_int {
                        ints += 1;
                        in_int = false;
                    }
                    if ints == 3 {
                        break;
                    }
                }
                _ => {}
            }
        }
        // Parse dims from the header we collected, then read the payload.
        let mut hr = HeaderReader { bytes: &header, pos: 0 };
        hr.expect_magic()?;
        let w = hr.next_int()?;
        let h = hr.next_int()?;
        let maxval = hr.next_int()?;
        if maxval != 255 {
            return Err(Error::Ppm(format!("unsupported maxval {maxval}")));
        }
        let mut pix = vec![0u8; w * h * 3];
        self.reader
            .read_exact(&mut pix)
            .map_err(|e| Error::io("<stream>", e))?;
        let mut full = header;
        full.extend_from_slice(&pix);
        decode(&full).map(Some)
    }
}
