//! Named-tensor container: the on-disk format for checkpoints and caches.
//!
//! Layout, all integers little-endian:
//!   magic "FOCUS1" | count u64 | entries...
//! entry:
//!   name_len u64 | name utf-8 | dtype u8 | rank u64 | extents u64*rank | raw values
//! dtype tags: 0 = f64, 1 = complex128 (re,im f64 pairs), 2 = i64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{FocusError, Result};

pub const MAGIC: &[u8; 6] = b"FOCUS1";

const TAG_F64: u8 = 0;
const TAG_C128: u8 = 1;
const TAG_I64: u8 = 2;

/// Sanity bound against hostile or corrupt headers (bytes and counts).
const MAX_ELEMS: u64 = 1 << 33;
const MAX_NAME: u64 = 1 << 16;
const MAX_RANK: u64 = 32;

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    F64 { shape: Vec<usize>, data: Vec<f64> },
    C128 { shape: Vec<usize>, data: Vec<Complex64> },
    I64 { shape: Vec<usize>, data: Vec<i64> },
}

impl Entry {
    pub fn shape(&self) -> &[usize] {
        match self {
            Entry::F64 { shape, .. } | Entry::C128 { shape, .. } | Entry::I64 { shape, .. } => shape,
        }
    }

    pub fn as_f64(&self) -> Option<(&[usize], &[f64])> {
        match self {
            Entry::F64 { shape, data } => Some((shape, data)),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<(&[usize], &[i64])> {
        match self {
            Entry::I64 { shape, data } => Some((shape, data)),
            _ => None,
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        let want: usize = self.shape().iter().product();
        let got = match self {
            Entry::F64 { data, .. } => data.len(),
            Entry::C128 { data, .. } => data.len(),
            Entry::I64 { data, .. } => data.len(),
        };
        if want != got {
            return Err(FocusError::Format(format!(
                "entry {name}: shape {:?} wants {want} values, got {got}",
                self.shape()
            )));
        }
        Ok(())
    }
}

/// Ordered collection of named tensors. Names are unique.
#[derive(Default, Clone, Debug)]
pub struct Container {
    entries: Vec<(String, Entry)>,
}

impl Container {
    pub fn new() -> Container {
        Container::default()
    }

    pub fn push(&mut self, name: &str, entry: Entry) -> Result<()> {
        entry.check(name)?;
        if self.get(name).is_some() {
            return Err(FocusError::Format(format!("duplicate tensor name {name}")));
        }
        self.entries.push((name.to_string(), entry));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn require_f64(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.get(name)
            .and_then(Entry::as_f64)
            .ok_or_else(|| FocusError::Format(format!("missing f64 tensor {name}")))
    }

    pub fn require_i64(&self, name: &str) -> Result<(&[usize], &[i64])> {
        self.get(name)
            .and_then(Entry::as_i64)
            .ok_or_else(|| FocusError::Format(format!("missing i64 tensor {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (name, entry) in &self.entries {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let (tag, shape) = match entry {
                Entry::F64 { shape, .. } => (TAG_F64, shape),
                Entry::C128 { shape, .. } => (TAG_C128, shape),
                Entry::I64 { shape, .. } => (TAG_I64, shape),
            };
            w.write_all(&[tag])?;
            w.write_all(&(shape.len() as u64).to_le_bytes())?;
            for &dim in shape.iter() {
                w.write_all(&(dim as u64).to_le_bytes())?;
            }
            match entry {
                Entry::F64 { data, .. } => {
                    for &x in data {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                Entry::C128 { data, .. } => {
                    for z in data {
                        w.write_all(&z.re.to_le_bytes())?;
                        w.write_all(&z.im.to_le_bytes())?;
                    }
                }
                Entry::I64 { data, .. } => {
                    for &x in data {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Container> {
        let mut magic = [0u8; 6];
        read_exact(r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(FocusError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(MAGIC),
            )));
        }
        let count = read_u64(r, "tensor count")?;
        if count > MAX_ELEMS {
            return Err(FocusError::Format(format!("implausible tensor count {count}")));
        }
        let mut out = Container::new();
        for _ in 0..count {
            let name_len = read_u64(r, "name length")?;
            if name_len > MAX_NAME {
                return Err(FocusError::Format(format!("implausible name length {name_len}")));
            }
            let mut name_bytes = vec![0u8; name_len as usize];
            read_exact(r, &mut name_bytes, "tensor name")?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| FocusError::Format("tensor name is not utf-8".into()))?;
            let mut tag = [0u8; 1];
            read_exact(r, &mut tag, "dtype tag")?;
            let rank = read_u64(r, "rank")?;
            if rank > MAX_RANK {
                return Err(FocusError::Format(format!("implausible rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            let mut count_elems = 1u64;
            for _ in 0..rank {
                let dim = read_u64(r, "extent")?;
                count_elems = count_elems.saturating_mul(dim.max(1));
                shape.push(dim as usize);
            }
            if count_elems > MAX_ELEMS {
                return Err(FocusError::Format(format!("implausible element count in {name}")));
            }
            let n: usize = shape.iter().product();
            let entry = match tag[0] {
                TAG_F64 => {
                    let mut data = vec![0.0f64; n];
                    for x in data.iter_mut() {
                        *x = read_f64(r, &name)?;
                    }
                    Entry::F64 { shape, data }
                }
                TAG_C128 => {
                    let mut data = vec![Complex64::new(0.0, 0.0); n];
                    for z in data.iter_mut() {
                        let re = read_f64(r, &name)?;
                        let im = read_f64(r, &name)?;
                        *z = Complex64::new(re, im);
                    }
                    Entry::C128 { shape, data }
                }
                TAG_I64 => {
                    let mut data = vec![0i64; n];
                    for x in data.iter_mut() {
                        let mut b = [0u8; 8];
                        read_exact(r, &mut b, &name)?;
                        *x = i64::from_le_bytes(b);
                    }
                    Entry::I64 { shape, data }
                }
                t => return Err(FocusError::Format(format!("unknown dtype tag {t} in {name}"))),
            };
            out.push(&name, entry)?;
        }
        Ok(out)
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Container> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path).map_err(|e| {
            FocusError::Format(format!("cannot open {}: {e}", path.display()))
        })?);
        Container::read_from(&mut r)
            .map_err(|e| FocusError::Format(format!("{}: {e}", path.display())))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| FocusError::Format(format!("unexpected end of file reading {what}")))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}
