//! Synthetic baseline RAM blob standing in for the real firmware dump,
//! which cannot ship with the repository. Only the handful of RAM sites
//! the tools touch carry meaningful bytes; everything else is zero.

use crate::image::RAM_SIZE;
use crate::symbols::SymbolMap;
use crate::thumb::{encode_bl, Instr};
use crate::{Error, Result};

/// Build the baseline RAM image: a 16-byte receive routine at the
/// `wlc_bmac_recv` address whose shape matches the real function's
/// prologue closely enough for the patch tooling to work against it:
///
/// ```text
/// PUSH {R4,LR}
/// MOVS R4, R0
/// BL   dma_rx
/// MOVS R0, R4
/// BL   dma_rxfill
/// POP  {R4,PC}
/// ```
///
/// The coreinit maccontrol mask/value words are left zero, so an
/// unpatched boot programs no maccontrol bits.
pub fn baseline_ram(syms: &SymbolMap) -> Result<Vec<u8>> {
    let base = crate::image::RAM_BASE;
    let recv = syms.addr_of("wlc_bmac_recv")?;
    let dma_rx = syms.addr_of("dma_rx")?;
    let dma_rxfill = syms.addr_of("dma_rxfill")?;

    let mut ram = vec![0u8; RAM_SIZE as usize];
    let mut cursor = recv;
    let mut emit = |bytes: &[u8], cursor: &mut u32| -> Result<()> {
        let off = (*cursor)
            .checked_sub(base)
            .ok_or(Error::Unmapped { addr: *cursor, len: bytes.len() as u32 })?
            as usize;
        ram[off..off + bytes.len()].copy_from_slice(bytes);
        *cursor += bytes.len() as u32;
        Ok(())
    };

    emit(&Instr::Push { low_mask: 0x10, lr: true }.encode(), &mut cursor)?;
    emit(&Instr::MovsReg { rd: 4, rm: 0 }.encode(), &mut cursor)?;
    emit(&encode_bl(cursor, dma_rx)?, &mut cursor)?;
    emit(&Instr::MovsReg { rd: 0, rm: 4 }.encode(), &mut cursor)?;
    emit(&encode_bl(cursor, dma_rxfill)?, &mut cursor)?;
    emit(&Instr::Pop { low_mask: 0x10, pc: true }.encode(), &mut cursor)?;
    debug_assert_eq!(cursor, recv + 16);
    Ok(ram)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::FirmwareImage;
    use crate::thumb;

    #[test]
    fn baseline_routine_decodes() {
        let syms = SymbolMap::builtin();
        let img = FirmwareImage::from_ram_bytes(baseline_ram(&syms).unwrap());
        let recv = syms.addr_of("wlc_bmac_recv").unwrap();
        let bytes = img.read_bytes(recv, 16).unwrap();
        let lines = thumb::disassemble(bytes, recv, &syms);
        assert_eq!(lines.len(), 6);
        assert!(lines[2].text.contains("dma_rx"));
        assert!(lines[4].text.contains("dma_rxfill"));
        // the redirect site used by the demo patch set holds the dma_rx BL
        let site = recv + 4;
        assert_eq!(
            thumb::decode_bl(img.read_bytes(site, 4).unwrap(), site).unwrap(),
            syms.addr_of("dma_rx").unwrap()
        );
    }

    #[test]
    fn coreinit_words_start_zero() {
        let syms = SymbolMap::builtin();
        let img = FirmwareImage::from_ram_bytes(baseline_ram(&syms).unwrap());
        assert_eq!(img.read_u32(0x1ab82c).unwrap(), 0);
        assert_eq!(img.read_u32(0x1ab828).unwrap(), 0);
    }
}
