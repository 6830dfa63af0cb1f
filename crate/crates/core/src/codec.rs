//! Little-endian record encoding shared by the on-disk formats.

use crate::error::{Error, Result};
use crate::geom::{Box7, ObjectClass};

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }

    pub fn box7(&mut self, b: &Box7) {
        for v in [b.cx, b.cy, b.cz, b.length, b.width, b.height, b.heading] {
            self.f64(v);
        }
        self.u8(b.class.as_byte());
        match b.score {
            Some(s) => {
                self.u8(1);
                self.f64(s);
            }
            None => self.u8(0),
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    /// Names the record in parse errors.
    pub context: String,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], context: impl Into<String>) -> Self {
        Self {
            buf,
            pos: 0,
            context: context.into(),
        }
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            segment_id: self.context.clone(),
            offset: self.pos as u64,
            message: msg.into(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn finish(&self) -> Result<()> {
        if self.is_done() {
            Ok(())
        } else {
            Err(self.err("trailing bytes"))
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated: need {n} bytes")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8]) -> Result<()> {
        if self.take(expected.len())? != expected {
            self.pos -= expected.len();
            return Err(self.err("bad magic"));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        let start = self.pos;
        let s = self.take(n)?;
        std::str::from_utf8(s).map(str::to_owned).map_err(|e| {
            let mut r = self.err(e.to_string());
            if let Error::Parse { offset, .. } = &mut r {
                *offset = start as u64;
            }
            r
        })
    }

    /// Element count, rejected if the remaining bytes cannot hold it.
    pub fn count(&mut self, min_item_bytes: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item_bytes) > self.buf.len() - self.pos {
            return Err(self.err(format!("count {n} exceeds remaining data")));
        }
        Ok(n)
    }

    pub fn box7(&mut self) -> Result<Box7> {
        let mut v = [0.0; 7];
        for x in &mut v {
            *x = self.f64()?;
        }
        let class = self.u8()?;
        let class = ObjectClass::from_byte(class).ok_or_else(|| self.err(format!("bad class byte {class}")))?;
        let score = match self.u8()? {
            0 => None,
            1 => Some(self.f64()?),
            t => return Err(self.err(format!("bad score tag {t}"))),
        };
        // Fields are stored verbatim; no re-normalization so round-trips are exact.
        Ok(Box7 {
            cx: v[0],
            cy: v[1],
            cz: v[2],
            length: v[3],
            width: v[4],
            height: v[5],
            heading: v[6],
            class,
            score,
        })
    }
}

/// Minimum encoded size of a box.
pub(crate) const BOX_BYTES: usize = 7 * 8 + 2;
