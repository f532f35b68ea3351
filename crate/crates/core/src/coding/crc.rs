/// Which CRC is attached to a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrcKind {
    /// CRC-24, generator 0x1864CFB, used on transport blocks.
    Data24,
    /// CRC-16, generator 0x11021, used on control information.
    Control16,
}

impl CrcKind {
    pub fn width(self) -> usize {
        match self {
            CrcKind::Data24 => 24,
            CrcKind::Control16 => 16,
        }
    }

    // Generator without the leading x^width term.
    fn poly(self) -> u32 {
        match self {
            CrcKind::Data24 => 0x0086_4CFB,
            CrcKind::Control16 => 0x1021,
        }
    }
}

fn remainder(bits: &[u8], kind: CrcKind) -> u32 {
    let width = kind.width();
    let mask = (1u32 << width) - 1;
    let top = width - 1;
    let poly = kind.poly();
    let mut reg = 0u32;
    for &b in bits {
        let feedback = ((reg >> top) & 1) ^ u32::from(b & 1);
        reg = (reg << 1) & mask;
        if feedback == 1 {
            reg ^= poly;
        }
    }
    reg
}

/// Appends the CRC, most significant bit first. Register starts at zero.
pub fn crc_attach(bits: &[u8], kind: CrcKind) -> Vec<u8> {
    let width = kind.width();
    let rem = remainder(bits, kind);
    let mut out = Vec::with_capacity(bits.len() + width);
    out.extend_from_slice(bits);
    out.extend((0..width).rev().map(|i| ((rem >> i) & 1) as u8));
    out
}

/// True iff the trailing CRC matches the preceding payload.
pub fn crc_check(bits: &[u8], kind: CrcKind) -> bool {
    let width = kind.width();
    if bits.len() < width {
        return false;
    }
    let (payload, tail) = bits.split_at(bits.len() - width);
    let rem = remainder(payload, kind);
    tail.iter()
        .enumerate()
        .all(|(i, &b)| u32::from(b & 1) == (rem >> (width - 1 - i)) & 1)
}
