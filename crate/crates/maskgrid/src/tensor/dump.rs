//! Binary tensor dump: the fixture exchange format of the `check` command.
//!
//! Layout, all little-endian: 4 x u32 shape `(V, U, H, W)`, 2 x f64 units
//! `(sigma_vu, sigma_hw)`, 1 byte representation tag (0 = natural,
//! 1 = aligned), then `V*U*H*W` f64 samples in row-major `(v, u, y, x)` order.

use std::io::{Read, Write};

use super::{Repr, Shape4, StructuredTensor, Units};
use crate::error::{Error, Result};

pub fn write_tensor(w: &mut impl Write, t: &StructuredTensor) -> Result<()> {
    let s = t.shape();
    for dim in [s.v, s.u, s.h, s.w] {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::Format(format!("axis length {dim} exceeds u32")))?;
        w.write_all(&dim.to_le_bytes())?;
    }
    w.write_all(&t.units().sigma_vu().to_le_bytes())?;
    w.write_all(&t.units().sigma_hw().to_le_bytes())?;
    w.write_all(&[match t.repr() {
        Repr::Natural => 0u8,
        Repr::Aligned => 1u8,
    }])?;
    for value in t.data() {
        w.write_all(&value.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<StructuredTensor> {
    let mut u32buf = [0u8; 4];
    let mut dims = [0usize; 4];
    for d in &mut dims {
        r.read_exact(&mut u32buf)?;
        *d = u32::from_le_bytes(u32buf) as usize;
    }
    let mut f64buf = [0u8; 8];
    r.read_exact(&mut f64buf)?;
    let sigma_vu = f64::from_le_bytes(f64buf);
    r.read_exact(&mut f64buf)?;
    let sigma_hw = f64::from_le_bytes(f64buf);
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let repr = match tag[0] {
        0 => Repr::Natural,
        1 => Repr::Aligned,
        other => return Err(Error::Format(format!("unknown repr tag {other}"))),
    };
    let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3])?;
    let units = Units::new(sigma_vu, sigma_hw)?;
    let mut data = Vec::with_capacity(shape.len());
    for _ in 0..shape.len() {
        r.read_exact(&mut f64buf)?;
        data.push(f64::from_le_bytes(f64buf));
    }
    StructuredTensor::from_vec(shape, units, repr, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trip() {
        let t = StructuredTensor::from_fn(
            Shape4::new(3, 2, 4, 5).unwrap(),
            Units::new(8.0, 4.0).unwrap(),
            Repr::Aligned,
            |v, u, y, x| v as f64 * 1000.0 + u as f64 * 100.0 + y as f64 * 10.0 + x as f64,
        );
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        // 4*4 shape + 2*8 units + 1 tag + 8 per sample
        assert_eq!(buf.len(), 16 + 16 + 1 + t.len() * 8);
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn bad_tag_is_rejected() {
        let t = StructuredTensor::zeros(
            Shape4::new(1, 1, 1, 1).unwrap(),
            Units::isotropic(1.0).unwrap(),
            Repr::Natural,
        );
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf[32] = 7;
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }
}
