//! Instruction-level executor for generated stub code. BL targets that
//! match a registered trap address invoke native handlers, so hardware
//! access never happens through modeled memory-mapped I/O.

use std::fmt;

use crate::image::FirmwareImage;
use crate::symbols::SymbolMap;
use crate::thumb::{self, Instr};
use crate::{Error, Result};

/// Link address signalling return-to-caller; outside every mapped region.
pub const RETURN_SENTINEL: u32 = 0xFFFF_FFFE;
pub const STACK_TOP: u32 = 0x5000_0000;
pub const STACK_SIZE: u32 = 4096;
pub const DEFAULT_FUEL: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TrapTag {
    Printf,
    DmaRx,
    DmaRxfill,
    DnglSendpkt,
    WlcBmacMctrl,
    MonitorRecv,
}

impl TrapTag {
    pub fn name(&self) -> &'static str {
        match self {
            TrapTag::Printf => "printf",
            TrapTag::DmaRx => "dma_rx",
            TrapTag::DmaRxfill => "dma_rxfill",
            TrapTag::DnglSendpkt => "dngl_sendpkt",
            TrapTag::WlcBmacMctrl => "wlc_bmac_mctrl",
            TrapTag::MonitorRecv => "monitor_recv",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "printf" => TrapTag::Printf,
            "dma_rx" => TrapTag::DmaRx,
            "dma_rxfill" => TrapTag::DmaRxfill,
            "dngl_sendpkt" => TrapTag::DnglSendpkt,
            "wlc_bmac_mctrl" => TrapTag::WlcBmacMctrl,
            "monitor_recv" => TrapTag::MonitorRecv,
            _ => return None,
        })
    }
}

/// Environment a running stub calls back into.
pub trait TrapEnv {
    fn trap_at(&self, addr: u32) -> Option<TrapTag>;
    fn handle_trap(
        &mut self,
        tag: TrapTag,
        args: [u32; 4],
        image: &FirmwareImage,
    ) -> Result<u32>;
}

#[derive(Debug, Clone)]
pub struct CpuState {
    pub regs: [u32; 13],
    pub sp: u32,
    pub lr: u32,
    pub pc: u32,
    pub flag_n: bool,
    pub flag_z: bool,
    stack: Vec<u8>,
}

impl CpuState {
    pub fn new(entry: u32, args: [u32; 4]) -> Self {
        let mut regs = [0u32; 13];
        regs[..4].copy_from_slice(&args);
        CpuState {
            regs,
            sp: STACK_TOP,
            lr: RETURN_SENTINEL,
            pc: entry,
            flag_n: false,
            flag_z: false,
            stack: vec![0; STACK_SIZE as usize],
        }
    }

    fn push_word(&mut self, word: u32) -> Result<()> {
        if self.sp < STACK_TOP - STACK_SIZE + 4 {
            return Err(Error::StackFault("overflow", self.sp));
        }
        self.sp -= 4;
        let off = (self.sp - (STACK_TOP - STACK_SIZE)) as usize;
        self.stack[off..off + 4].copy_from_slice(&word.to_le_bytes());
        Ok(())
    }

    fn pop_word(&mut self) -> Result<u32> {
        if self.sp >= STACK_TOP {
            return Err(Error::StackFault("underflow", self.sp));
        }
        let off = (self.sp - (STACK_TOP - STACK_SIZE)) as usize;
        let w = u32::from_le_bytes(self.stack[off..off + 4].try_into().unwrap());
        self.sp += 4;
        Ok(w)
    }

    fn set_flags(&mut self, v: u32) {
        self.flag_n = v & 0x8000_0000 != 0;
        self.flag_z = v == 0;
    }
}

#[derive(Debug, Clone)]
pub struct ExecRecord {
    pub addr: u32,
    pub text: String,
}

impl fmt::Display for ExecRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.text)
    }
}

pub struct Interp {
    pub cpu: CpuState,
    syms: SymbolMap,
}

impl Interp {
    pub fn new(entry: u32, args: [u32; 4]) -> Self {
        Interp { cpu: CpuState::new(entry, args), syms: SymbolMap::new() }
    }

    /// Attach a symbol map so trace records carry call annotations.
    pub fn with_symbols(entry: u32, args: [u32; 4], syms: SymbolMap) -> Self {
        Interp { cpu: CpuState::new(entry, args), syms }
    }

    pub fn finished(&self) -> bool {
        self.cpu.pc == RETURN_SENTINEL
    }

    pub fn result(&self) -> u32 {
        self.cpu.regs[0]
    }

    /// Execute one instruction.
    pub fn step(&mut self, image: &FirmwareImage, env: &mut dyn TrapEnv) -> Result<ExecRecord> {
        let pc = self.cpu.pc;
        if pc & 1 != 0 {
            return Err(Error::Misaligned(pc));
        }
        let avail = image.read_bytes(pc, 4).or_else(|_| image.read_bytes(pc, 2))?;
        let (instr, width) = thumb::decode(avail);
        let record = ExecRecord {
            addr: pc,
            text: thumb::disassemble(&avail[..width as usize], pc, &self.syms)
                .remove(0)
                .text,
        };
        let mut next = pc + width;
        match instr {
            Instr::Push { low_mask, lr } => {
                // lowest register at the lowest address
                let mut words = Vec::new();
                for b in 0..8 {
                    if low_mask & (1 << b) != 0 {
                        words.push(self.cpu.regs[b as usize]);
                    }
                }
                if lr {
                    words.push(self.cpu.lr);
                }
                for w in words.iter().rev() {
                    self.cpu.push_word(*w)?;
                }
            }
            Instr::Pop { low_mask, pc: pops_pc } => {
                for b in 0..8 {
                    if low_mask & (1 << b) != 0 {
                        let w = self.cpu.pop_word()?;
                        self.cpu.regs[b as usize] = w;
                    }
                }
                if pops_pc {
                    next = self.cpu.pop_word()?;
                }
            }
            Instr::MovsReg { rd, rm } => {
                let v = self.cpu.regs[rm as usize];
                self.cpu.regs[rd as usize] = v;
                self.cpu.set_flags(v);
            }
            Instr::MovReg { rd, rm } => {
                let v = match rm {
                    13 => self.cpu.sp,
                    14 => self.cpu.lr,
                    15 => pc + 4,
                    r => self.cpu.regs[r as usize],
                };
                match rd {
                    13 => self.cpu.sp = v,
                    14 => self.cpu.lr = v,
                    15 => next = v & !1,
                    r => self.cpu.regs[r as usize] = v,
                }
            }
            Instr::MovsImm { rd, imm } => {
                self.cpu.regs[rd as usize] = imm as u32;
                self.cpu.set_flags(imm as u32);
            }
            Instr::AddImm { rd, imm } => {
                let v = self.cpu.regs[rd as usize].wrapping_add(imm as u32);
                self.cpu.regs[rd as usize] = v;
                self.cpu.set_flags(v);
            }
            Instr::SubImm { rd, imm } => {
                let v = self.cpu.regs[rd as usize].wrapping_sub(imm as u32);
                self.cpu.regs[rd as usize] = v;
                self.cpu.set_flags(v);
            }
            Instr::LdrLit { rt, word_off } => {
                let addr = ((pc + 4) & !3) + 4 * word_off as u32;
                self.cpu.regs[rt as usize] = image.read_u32(addr)?;
            }
            Instr::Bl { offset } => {
                let target = (pc as i64 + 4 + offset as i64) as u32;
                if let Some(tag) = env.trap_at(target) {
                    let args = [
                        self.cpu.regs[0],
                        self.cpu.regs[1],
                        self.cpu.regs[2],
                        self.cpu.regs[3],
                    ];
                    self.cpu.regs[0] = env.handle_trap(tag, args, image)?;
                } else if image.region_at(target).is_some() {
                    self.cpu.lr = pc + 4;
                    next = target;
                } else {
                    return Err(Error::UntrappedCall(target));
                }
            }
            Instr::BW { offset } => {
                next = (pc as i64 + 4 + offset as i64) as u32;
            }
            Instr::BxLr => {
                next = self.cpu.lr & !1;
            }
            Instr::Nop => {}
            Instr::Data(w) => {
                return Err(Error::Undecodable { addr: pc, word: w });
            }
        }
        self.cpu.pc = next;
        Ok(record)
    }
}

/// Run a stub to completion, returning its r0.
pub fn call_stub(
    image: &FirmwareImage,
    entry: u32,
    args: [u32; 4],
    env: &mut dyn TrapEnv,
    fuel: u64,
) -> Result<u32> {
    call_stub_inner(image, entry, args, env, fuel, false).map(|(r, _)| r)
}

/// Like [`call_stub`], but also collects a one-line-per-step trace.
pub fn call_stub_traced(
    image: &FirmwareImage,
    entry: u32,
    args: [u32; 4],
    env: &mut dyn TrapEnv,
    fuel: u64,
) -> Result<(u32, Vec<ExecRecord>)> {
    let (r, t) = call_stub_inner(image, entry, args, env, fuel, true)?;
    Ok((r, t.unwrap_or_default()))
}

fn call_stub_inner(
    image: &FirmwareImage,
    entry: u32,
    args: [u32; 4],
    env: &mut dyn TrapEnv,
    fuel: u64,
    trace: bool,
) -> Result<(u32, Option<Vec<ExecRecord>>)> {
    let mut interp = Interp::new(entry, args);
    let mut records = trace.then(Vec::new);
    for _ in 0..fuel {
        if interp.finished() {
            return Ok((interp.result(), records));
        }
        let rec = interp.step(image, env)?;
        if let Some(r) = records.as_mut() {
            r.push(rec);
        }
    }
    if interp.finished() {
        return Ok((interp.result(), records));
    }
    Err(Error::FuelExhausted(fuel))
}

#[cfg(test)]
pub(crate) mod testenv {
    use super::*;
    use std::collections::BTreeMap;

    /// Records trap invocations; each tag returns a fixed value.
    #[derive(Default)]
    pub struct MockEnv {
        pub traps: BTreeMap<u32, TrapTag>,
        pub returns: BTreeMap<u32, u32>,
        pub calls: Vec<(TrapTag, [u32; 4])>,
        pub console: String,
    }

    impl TrapEnv for MockEnv {
        fn trap_at(&self, addr: u32) -> Option<TrapTag> {
            self.traps.get(&addr).copied()
        }

        fn handle_trap(
            &mut self,
            tag: TrapTag,
            args: [u32; 4],
            image: &FirmwareImage,
        ) -> Result<u32> {
            self.calls.push((tag, args));
            if tag == TrapTag::Printf {
                let mut addr = args[0];
                while let Ok(s) = image.read_bytes(addr, 1) {
                    if s[0] == 0 {
                        break;
                    }
                    self.console.push(s[0] as char);
                    addr += 1;
                }
            }
            let key = self
                .traps
                .iter()
                .find(|(_, t)| **t == tag)
                .map(|(a, _)| *a)
                .unwrap_or(0);
            Ok(self.returns.get(&key).copied().unwrap_or(0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testenv::MockEnv;
    use super::*;
    use crate::thumb::{assemble_stub, HookArg, HookOp, HookProgram};

    fn hello_image_and_stub() -> (FirmwareImage, u32) {
        let syms = SymbolMap::builtin();
        let prog = HookProgram {
            ops: vec![
                HookOp::SaveScratch,
                HookOp::Call {
                    symbol: "printf".into(),
                    args: vec![HookArg::Str("hello world".into())],
                },
                HookOp::Call {
                    symbol: "dma_rx".into(),
                    args: vec![HookArg::Forwarded(0)],
                },
                HookOp::ReturnLastResult,
            ],
        };
        let stub = assemble_stub(&prog, 0x180000, &syms).unwrap();
        let mut img = FirmwareImage::with_default_layout();
        img.write_bytes(stub.base, &stub.bytes()).unwrap();
        (img, stub.base)
    }

    #[test]
    fn hello_world_executes() {
        let (img, entry) = hello_image_and_stub();
        let mut env = MockEnv::default();
        env.traps.insert(0x126F0, TrapTag::Printf);
        env.traps.insert(0x8C69C, TrapTag::DmaRx);
        env.returns.insert(0x8C69C, 0xCAFE);
        let r = call_stub(&img, entry, [0x1234, 0, 0, 0], &mut env, DEFAULT_FUEL).unwrap();
        assert_eq!(env.console, "hello world");
        let dma_calls: Vec<_> = env
            .calls
            .iter()
            .filter(|(t, _)| *t == TrapTag::DmaRx)
            .collect();
        assert_eq!(dma_calls.len(), 1);
        assert_eq!(dma_calls[0].1[0], 0x1234, "forwarded first argument");
        assert_eq!(r, 0xCAFE, "stub returns the hooked function's result");
    }

    #[test]
    fn minimal_bx_lr_returns_first_arg() {
        let mut img = FirmwareImage::with_default_layout();
        img.write_bytes(0x180000, &[0x70, 0x47]).unwrap();
        let mut env = MockEnv::default();
        let r = call_stub(&img, 0x180000, [42, 0, 0, 0], &mut env, 10).unwrap();
        assert_eq!(r, 42);
    }

    #[test]
    fn infinite_branch_exhausts_fuel_exactly() {
        let mut img = FirmwareImage::with_default_layout();
        // B.W to self: offset -4
        let b = thumb::encode_bw(0x180000, 0x180000).unwrap();
        img.write_bytes(0x180000, &b).unwrap();
        let mut env = MockEnv::default();
        match call_stub(&img, 0x180000, [0; 4], &mut env, 57) {
            Err(Error::FuelExhausted(57)) => {}
            other => panic!("expected fuel exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn step_push_semantics() {
        let mut img = FirmwareImage::with_default_layout();
        img.write_bytes(0x180000, &[0x10, 0xB5]).unwrap(); // PUSH {R4,LR}
        let mut env = MockEnv::default();
        let mut interp = Interp::new(0x180000, [0; 4]);
        interp.cpu.regs[4] = 7;
        let sp0 = interp.cpu.sp;
        interp.step(&img, &mut env).unwrap();
        assert_eq!(interp.cpu.sp, sp0 - 8);
    }

    #[test]
    fn step_movs_copies_register() {
        let mut img = FirmwareImage::with_default_layout();
        img.write_bytes(0x180000, &[0x04, 0x00]).unwrap(); // MOVS R4, R0
        let mut env = MockEnv::default();
        let mut interp = Interp::new(0x180000, [0xAB, 0, 0, 0]);
        interp.step(&img, &mut env).unwrap();
        assert_eq!(interp.cpu.regs[4], 0xAB);
    }

    #[test]
    fn step_ldr_literal_loads_pool_word() {
        let (img, entry) = hello_image_and_stub();
        let mut env = MockEnv::default();
        let mut interp = Interp::new(entry, [0; 4]);
        interp.step(&img, &mut env).unwrap(); // PUSH
        interp.step(&img, &mut env).unwrap(); // MOVS
        interp.step(&img, &mut env).unwrap(); // LDR R0, =pool
        assert_eq!(interp.cpu.regs[0], 0x0018_0018);
    }

    #[test]
    fn bl_to_unmapped_untrapped_fails() {
        let mut img = FirmwareImage::with_default_layout();
        let b = thumb::encode_bl(0x180000, 0xF0_0000).unwrap();
        img.write_bytes(0x180000, &b).unwrap();
        let mut env = MockEnv::default();
        assert!(matches!(
            call_stub(&img, 0x180000, [0; 4], &mut env, 10),
            Err(Error::UntrappedCall(0xF0_0000))
        ));
    }

    #[test]
    fn stack_balanced_on_return() {
        let (img, entry) = hello_image_and_stub();
        let mut env = MockEnv::default();
        env.traps.insert(0x126F0, TrapTag::Printf);
        env.traps.insert(0x8C69C, TrapTag::DmaRx);
        let mut interp = Interp::new(entry, [0; 4]);
        let sp0 = interp.cpu.sp;
        while !interp.finished() {
            interp.step(&img, &mut env).unwrap();
        }
        assert_eq!(interp.cpu.sp, sp0);
    }

    #[test]
    fn trace_is_deterministic() {
        let (img, entry) = hello_image_and_stub();
        let run = || {
            let mut env = MockEnv::default();
            env.traps.insert(0x126F0, TrapTag::Printf);
            env.traps.insert(0x8C69C, TrapTag::DmaRx);
            let (_, t) =
                call_stub_traced(&img, entry, [1, 2, 3, 4], &mut env, DEFAULT_FUEL).unwrap();
            t.iter().map(|r| r.text.clone()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
