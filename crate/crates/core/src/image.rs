//! Modeled chip address space: ROM and RAM regions with membytes-style
//! read/write/dump primitives.
//!
//! The default layout mirrors the BCM4339: 640 KiB ROM at 0x0 and 768 KiB
//! RAM at 0x180000, with a hard-error gap in between.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const ROM_BASE: u32 = 0x0;
pub const ROM_SIZE: u32 = 640 * 1024;
pub const RAM_BASE: u32 = 0x18_0000;
pub const RAM_SIZE: u32 = 768 * 1024;

#[derive(Debug, Clone)]
pub struct MemoryRegion {
    pub name: String,
    pub base: u32,
    pub writable: bool,
    bytes: Vec<u8>,
}

impl MemoryRegion {
    pub fn new(name: &str, base: u32, writable: bool, bytes: Vec<u8>) -> Self {
        MemoryRegion { name: name.to_string(), base, writable, bytes }
    }

    pub fn zeroed(name: &str, base: u32, size: u32, writable: bool) -> Self {
        Self::new(name, base, writable, vec![0; size as usize])
    }

    pub fn size(&self) -> u32 {
        self.bytes.len() as u32
    }

    /// Exclusive end address.
    pub fn end(&self) -> u64 {
        self.base as u64 + self.bytes.len() as u64
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    fn overlaps(&self, other: &MemoryRegion) -> bool {
        (self.base as u64) < other.end() && (other.base as u64) < self.end()
    }
}

#[derive(Debug, Clone, Default)]
pub struct FirmwareImage {
    regions: Vec<MemoryRegion>,
}

impl FirmwareImage {
    pub fn empty() -> Self {
        FirmwareImage { regions: Vec::new() }
    }

    /// Zero-filled ROM + RAM at the chip's default bases and sizes.
    pub fn with_default_layout() -> Self {
        let mut img = Self::empty();
        img.add_region(MemoryRegion::zeroed("rom", ROM_BASE, ROM_SIZE, false))
            .expect("default layout");
        img.add_region(MemoryRegion::zeroed("ram", RAM_BASE, RAM_SIZE, true))
            .expect("default layout");
        img
    }

    /// Default layout with the given blob as RAM contents. The RAM region
    /// takes the blob's length, so short test blobs stay addressable only
    /// as far as they reach.
    pub fn from_ram_bytes(ram: Vec<u8>) -> Self {
        let mut img = Self::empty();
        img.add_region(MemoryRegion::zeroed("rom", ROM_BASE, ROM_SIZE, false))
            .expect("layout");
        img.add_region(MemoryRegion::new("ram", RAM_BASE, true, ram))
            .expect("layout");
        img
    }

    pub fn add_region(&mut self, region: MemoryRegion) -> Result<()> {
        if self.regions.iter().any(|r| r.overlaps(&region)) {
            return Err(Error::RegionOverlap(region.name));
        }
        self.regions.push(region);
        self.regions.sort_by_key(|r| r.base);
        Ok(())
    }

    pub fn load_region(
        &mut self,
        path: &Path,
        name: &str,
        base: u32,
        writable: bool,
    ) -> Result<&MemoryRegion> {
        let bytes = fs::read(path)?;
        self.add_region(MemoryRegion::new(name, base, writable, bytes))?;
        Ok(self.regions.iter().find(|r| r.name == name).unwrap())
    }

    pub fn regions(&self) -> &[MemoryRegion] {
        &self.regions
    }

    pub fn region(&self, name: &str) -> Option<&MemoryRegion> {
        self.regions.iter().find(|r| r.name == name)
    }

    pub fn region_at(&self, addr: u32) -> Option<&MemoryRegion> {
        self.regions
            .iter()
            .find(|r| (addr as u64) >= r.base as u64 && (addr as u64) < r.end())
    }

    /// Region index + offset for a range that must sit inside one region.
    fn locate(&self, addr: u32, len: u32) -> Result<(usize, usize)> {
        for (i, r) in self.regions.iter().enumerate() {
            if addr >= r.base && addr as u64 + len as u64 <= r.end() {
                return Ok((i, (addr - r.base) as usize));
            }
        }
        Err(Error::Unmapped { addr, len })
    }

    pub fn read_bytes(&self, addr: u32, len: u32) -> Result<&[u8]> {
        if len == 0 {
            return Ok(&[]);
        }
        let (i, off) = self.locate(addr, len)?;
        Ok(&self.regions[i].bytes[off..off + len as usize])
    }

    pub fn read_u16(&self, addr: u32) -> Result<u16> {
        let b = self.read_bytes(addr, 2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn read_u32(&self, addr: u32) -> Result<u32> {
        let b = self.read_bytes(addr, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn write_bytes(&mut self, addr: u32, bytes: &[u8]) -> Result<()> {
        if bytes.is_empty() {
            return Ok(());
        }
        let (i, off) = self.locate(addr, bytes.len() as u32)?;
        let region = &mut self.regions[i];
        if !region.writable {
            return Err(Error::ReadOnly { name: region.name.clone(), addr });
        }
        region.bytes[off..off + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    pub fn write_u32(&mut self, addr: u32, word: u32) -> Result<()> {
        self.write_bytes(addr, &word.to_le_bytes())
    }

    pub fn dump_region(&self, name: &str, path: &Path) -> Result<()> {
        let region = self
            .region(name)
            .ok_or_else(|| Error::UnknownRegion(name.to_string()))?;
        fs::write(path, &region.bytes)?;
        Ok(())
    }

    /// Hexdump: offset, 16 bytes per line, ASCII gutter.
    pub fn hexdump(&self, addr: u32, len: u32) -> Result<String> {
        let data = self.read_bytes(addr, len)?;
        let mut out = String::new();
        for (i, chunk) in data.chunks(16).enumerate() {
            let line_addr = addr + (i as u32) * 16;
            let mut hexpart = String::new();
            let mut ascii = String::new();
            for (j, b) in chunk.iter().enumerate() {
                if j == 8 {
                    hexpart.push(' ');
                }
                hexpart.push_str(&format!("{b:02x} "));
                ascii.push(if b.is_ascii_graphic() || *b == b' ' {
                    *b as char
                } else {
                    '.'
                });
            }
            out.push_str(&format!("{line_addr:08x}  {hexpart:<49} |{ascii}|\n"));
        }
        Ok(out)
    }
}
