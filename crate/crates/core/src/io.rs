//! On-disk formats: flat binary state snapshots with a 16-byte header
//! (magic, K, flags, l as IEEE-754) and the trajectory dump row layout.

use crate::error::{Error, Result};
use crate::state::StateE;
use std::io::{Read, Write};

pub const SNAPSHOT_MAGIC: u32 = 0x5741_5645; // "WAVE"

/// Header flags.
pub const FLAG_NONE: u16 = 0;
pub const FLAG_EXPLODED: u16 = 1;

/// Write a snapshot: header (magic u32, K u16, flags u16, l f64, all
/// little-endian) followed by K position and K velocity coefficients.
pub fn write_snapshot<W: Write>(
    w: &mut W,
    z: &StateE,
    ell: f64,
    flags: u16,
) -> std::io::Result<()> {
    let k = z.modes() as u16;
    w.write_all(&SNAPSHOT_MAGIC.to_le_bytes())?;
    w.write_all(&k.to_le_bytes())?;
    w.write_all(&flags.to_le_bytes())?;
    w.write_all(&ell.to_le_bytes())?;
    for c in z.position.iter().chain(z.velocity.iter()) {
        w.write_all(&c.to_le_bytes())?;
    }
    Ok(())
}

/// Read a snapshot written by [`write_snapshot`].
pub fn read_snapshot<R: Read>(r: &mut R) -> Result<(StateE, f64, u16)> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)
        .map_err(|e| Error::InvalidConfig(format!("snapshot header: {e}")))?;
    let magic = u32::from_le_bytes(head[0..4].try_into().unwrap());
    if magic != SNAPSHOT_MAGIC {
        return Err(Error::InvalidConfig(format!(
            "bad snapshot magic {magic:#x}"
        )));
    }
    let k = u16::from_le_bytes(head[4..6].try_into().unwrap()) as usize;
    let flags = u16::from_le_bytes(head[6..8].try_into().unwrap());
    let ell = f64::from_le_bytes(head[8..16].try_into().unwrap());
    let mut payload = vec![0u8; 16 * k];
    r.read_exact(&mut payload)
        .map_err(|e| Error::InvalidConfig(format!("snapshot payload: {e}")))?;
    let mut coeffs = Vec::with_capacity(2 * k);
    for chunk in payload.chunks_exact(8) {
        coeffs.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let velocity = coeffs.split_off(k);
    Ok((StateE::new(coeffs, velocity), ell, flags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn snapshot_roundtrip(
            pos in prop::collection::vec(-1e3f64..1e3, 1..24),
            vel in prop::collection::vec(-1e3f64..1e3, 1..24),
            ell in 0.1f64..100.0,
            flags in 0u16..4,
        ) {
            let k = pos.len().min(vel.len());
            let z = StateE::new(pos[..k].to_vec(), vel[..k].to_vec());
            let mut buf = Vec::new();
            write_snapshot(&mut buf, &z, ell, flags).unwrap();
            prop_assert_eq!(buf.len(), 16 + 16 * k);
            let (back, ell2, flags2) = read_snapshot(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, z);
            prop_assert_eq!(ell2.to_bits(), ell.to_bits());
            prop_assert_eq!(flags2, flags);
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = vec![0u8; 32];
        assert!(read_snapshot(&mut buf.as_slice()).is_err());
    }
}
