//! Binary checkpoint format for particle sets.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! "RPVE"                       magic, 4 bytes
//! u16 version                  = 1
//! u8  mode                     0 = full ensemble, 1 = multi-head
//! base spec                    u32 width count, u32 widths…, u8 activation
//! [multi-head] head spec       same encoding
//! [multi-head] u8 frozen
//! u64 spec digest              FNV-1a over the bytes from `mode` up to here
//! u32 n
//! u64 seed
//! u64 step
//! [multi-head] f64 × |base|    base parameters
//! f64 × |particle| × n         particle parameters, particle by particle
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpSpec, ParamVector};
use crate::particles::{ParticleSet, SharedBase};

pub const MAGIC: &[u8; 4] = b"RPVE";
pub const VERSION: u16 = 1;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn spec_block(ps: &ParticleSet) -> Vec<u8> {
    let mut out = vec![ps.mode().tag()];
    out.extend(ps.base_spec().descriptor_bytes());
    if let Some(s) = ps.shared() {
        out.extend(s.head_spec.descriptor_bytes());
        out.push(s.frozen as u8);
    }
    out
}

pub fn encode(ps: &ParticleSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let block = spec_block(ps);
    out.extend_from_slice(&block);
    out.extend_from_slice(&fnv1a64(&block).to_le_bytes());
    out.extend_from_slice(&(ps.n() as u32).to_le_bytes());
    out.extend_from_slice(&ps.seed().to_le_bytes());
    out.extend_from_slice(&ps.step().to_le_bytes());
    if let Some(s) = ps.shared() {
        for v in s.params.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for p in ps.particles() {
        for v in p.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedCheckpoint)?;
        if end > self.buf.len() {
            return Err(Error::TruncatedCheckpoint);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::TruncatedCheckpoint)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn spec(&mut self) -> Result<MlpSpec> {
        let count = self.u32()? as usize;
        if count > self.buf.len() {
            return Err(Error::TruncatedCheckpoint);
        }
        let widths = (0..count)
            .map(|_| self.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let tag = self.u8()?;
        let act = Activation::from_tag(tag)
            .ok_or_else(|| Error::MalformedCheckpoint(format!("unknown activation tag {tag}")))?;
        MlpSpec::new(widths, act).map_err(|e| Error::MalformedCheckpoint(e.to_string()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParticleSet> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::TruncatedCheckpoint);
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let block_start = r.pos;
    let mode = r.u8()?;
    let base_spec = r.spec()?;
    let head = match mode {
        0 => None,
        1 => {
            let head_spec = r.spec()?;
            let frozen = match r.u8()? {
                0 => false,
                1 => true,
                t => return Err(Error::MalformedCheckpoint(format!("bad frozen flag {t}"))),
            };
            Some((head_spec, frozen))
        }
        t => return Err(Error::MalformedCheckpoint(format!("unknown mode tag {t}"))),
    };
    let computed = fnv1a64(&bytes[block_start..r.pos]);
    let stored = r.u64()?;
    if stored != computed {
        return Err(Error::SpecDigestMismatch { stored, computed });
    }
    let n = r.u32()? as usize;
    let seed = r.u64()?;
    let step = r.u64()?;
    let shared = match head {
        None => None,
        Some((head_spec, frozen)) => Some(SharedBase {
            params: ParamVector::new(r.f64s(base_spec.parameter_count())?),
            head_spec,
            frozen,
        }),
    };
    let per = shared
        .as_ref()
        .map_or(&base_spec, |s| &s.head_spec)
        .parameter_count();
    let mut particles = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        particles.push(ParamVector::new(r.f64s(per)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::TrailingBytes(bytes.len() - r.pos));
    }
    ParticleSet::from_parts(base_spec, shared, particles, seed, step)
        .map_err(|e| Error::MalformedCheckpoint(e.to_string()))
}

pub fn save_checkpoint(ps: &ParticleSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(ps))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParticleSet> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::Mode;

    fn sample() -> ParticleSet {
        let base = MlpSpec::new(vec![2, 6], Activation::Tanh).unwrap();
        let head = MlpSpec::new(vec![6, 3], Activation::Tanh).unwrap();
        let mut ps = ParticleSet::init(Mode::MultiHead, base, Some(head), 3, 77).unwrap();
        ps.set_step(12);
        ps.particles_mut()[0].as_mut_slice()[0] = f64::MIN_POSITIVE / 3.0;
        ps
    }

    #[test]
    fn round_trip_is_exact() {
        let ps = sample();
        let back = decode(&encode(&ps)).unwrap();
        assert_eq!(back, ps);
        for (a, b) in back.particles().iter().zip(ps.particles()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..4], b"RPVE");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes[6], 1);
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = encode(&sample());
        for cut in [0, 3, 5, 20, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::TruncatedCheckpoint)), "cut {cut}");
        }
    }

    #[test]
    fn version_byte_flip_rejected() {
        let mut bytes = encode(&sample());
        bytes[4] ^= 0x01;
        assert!(matches!(decode(&bytes), Err(Error::VersionMismatch { found: 0, .. })));
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic)));
    }

    #[test]
    fn spec_corruption_hits_digest() {
        let mut bytes = encode(&sample());
        // second byte of the first base width
        bytes[12] ^= 0x01;
        assert!(matches!(decode(&bytes), Err(Error::SpecDigestMismatch { .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&sample());
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(Error::TrailingBytes(1))));
    }
}
