//! Length-prefixed frame sequences: `u32` little-endian length, then the
//! frame bytes. Used for `.rcpcc` files and for the wire.

use std::io::{self, Read, Write};

use super::{BitstreamError, HEADER_LEN, MAGIC};

/// Largest frame accepted when scanning a stream.
pub const MAX_FRAME_LEN: usize = 64 << 20;

pub fn write_container<W: Write, B: AsRef<[u8]>>(
    mut out: W,
    frames: impl IntoIterator<Item = B>,
) -> io::Result<()> {
    for frame in frames {
        let frame = frame.as_ref();
        let len = u32::try_from(frame.len()).map_err(|_| io::Error::other("frame exceeds 4 GiB"))?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(frame)?;
    }
    out.flush()
}

/// Strict reader: every byte must belong to a well-formed length prefix and
/// frame body.
pub fn read_container<R: Read>(mut input: R) -> Result<Vec<Vec<u8>>, BitstreamError> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| BitstreamError::CorruptStream(e.to_string()))?;
    let mut frames = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let prefix = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| BitstreamError::CorruptStream("truncated length prefix".into()))?;
        let len = u32::from_le_bytes(prefix.try_into().unwrap()) as usize;
        pos += 4;
        let body = bytes
            .get(pos..pos + len)
            .ok_or_else(|| BitstreamError::CorruptStream("truncated frame".into()))?;
        frames.push(body.to_vec());
        pos += len;
    }
    Ok(frames)
}

/// Streaming reader that resynchronizes after garbage.
///
/// A frame candidate is a plausible length prefix immediately followed by the
/// frame magic. Bytes that do not start a candidate are skipped one at a
/// time. When the caller rejects a candidate, scanning resumes one byte past
/// its start, so a corrupt length cannot swallow the following frame.
pub struct ContainerReader<R> {
    inner: R,
    buf: Vec<u8>,
    start: usize,
    eof: bool,
    skipped: u64,
}

impl<R: Read> ContainerReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            buf: Vec::new(),
            start: 0,
            eof: false,
            skipped: 0,
        }
    }

    /// Bytes discarded while searching for frame boundaries.
    pub fn skipped_bytes(&self) -> u64 {
        self.skipped
    }

    fn available(&self) -> usize {
        self.buf.len() - self.start
    }

    /// Reads until `n` bytes are buffered or the input ends.
    fn fill(&mut self, n: usize) -> io::Result<bool> {
        if self.start > 0 && self.start >= self.buf.len() / 2 {
            self.buf.drain(..self.start);
            self.start = 0;
        }
        let mut chunk = [0u8; 16 * 1024];
        while self.available() < n && !self.eof {
            match self.inner.read(&mut chunk) {
                Ok(0) => self.eof = true,
                Ok(k) => self.buf.extend_from_slice(&chunk[..k]),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        Ok(self.available() >= n)
    }

    fn skip(&mut self, n: usize) {
        self.start += n;
        self.skipped += n as u64;
    }

    /// Next frame passed through `decode`. Returns `Some(Err(_))` for a
    /// candidate that `decode` rejected and `None` at end of input.
    pub fn next_frame<T, E>(
        &mut self,
        mut decode: impl FnMut(&[u8]) -> Result<T, E>,
    ) -> io::Result<Option<Result<T, E>>> {
        loop {
            if !self.fill(8)? {
                let rest = self.available();
                self.skip(rest);
                return Ok(None);
            }
            let at = self.start;
            let len = u32::from_le_bytes(self.buf[at..at + 4].try_into().unwrap()) as usize;
            if !(HEADER_LEN..=MAX_FRAME_LEN).contains(&len) || self.buf[at + 4..at + 8] != MAGIC {
                self.skip(1);
                continue;
            }
            if !self.fill(4 + len)? {
                // Truncated candidate at end of input; keep scanning inside it.
                self.skip(1);
                continue;
            }
            let at = self.start;
            match decode(&self.buf[at + 4..at + 4 + len]) {
                Ok(v) => {
                    self.start += 4 + len;
                    return Ok(Some(Ok(v)));
                }
                Err(e) => {
                    self.skip(1);
                    return Ok(Some(Err(e)));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_frame(tag: u8, len: usize) -> Vec<u8> {
        let mut f = MAGIC.to_vec();
        f.resize(len, tag);
        f
    }

    #[test]
    fn strict_round_trip() {
        let frames = vec![fake_frame(1, 50), fake_frame(2, 60)];
        let mut buf = Vec::new();
        write_container(&mut buf, &frames).unwrap();
        assert_eq!(buf.len(), 4 + 50 + 4 + 60);
        assert_eq!(read_container(&buf[..]).unwrap(), frames);
        assert!(read_container(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn scanner_skips_garbage_between_frames() {
        let frames = vec![fake_frame(1, 50), fake_frame(2, 60), fake_frame(3, 70)];
        let mut buf = Vec::new();
        write_container(&mut buf, &frames[..1]).unwrap();
        buf.extend_from_slice(&[0xde, 0xad, 0xbe, 0xef, 0x00, 0x13]);
        write_container(&mut buf, &frames[1..]).unwrap();
        let mut r = ContainerReader::new(&buf[..]);
        let mut got = Vec::new();
        while let Some(f) = r.next_frame(|b| Ok::<_, ()>(b.to_vec())).unwrap() {
            got.push(f.unwrap());
        }
        assert_eq!(got, frames);
        assert_eq!(r.skipped_bytes(), 6);
    }

    #[test]
    fn rejected_candidate_does_not_swallow_successor() {
        // Corrupt the first frame's length so it claims to extend over the
        // second frame.
        let frames = vec![fake_frame(1, 50), fake_frame(2, 60)];
        let mut buf = Vec::new();
        write_container(&mut buf, &frames).unwrap();
        buf[0] = 100;
        let mut r = ContainerReader::new(&buf[..]);
        let mut ok = Vec::new();
        let mut bad = 0;
        while let Some(f) = r
            .next_frame(|b| if b.len() == 60 || b.len() == 50 { Ok(b.to_vec()) } else { Err(()) })
            .unwrap()
        {
            match f {
                Ok(v) => ok.push(v),
                Err(()) => bad += 1,
            }
        }
        assert_eq!(bad, 1);
        assert_eq!(ok, vec![frames[1].clone()]);
    }
}
