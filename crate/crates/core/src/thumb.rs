//! Thumb instruction subset the hook framework emits, plus stub assembly
//! from a small hook IR and a disassembler for the same subset.
//!
//! Generated code is straight-line Thumb: calls are PC-relative BL, string
//! and large integer constants go through a literal pool placed 4-aligned
//! after the code, strings follow the pool zero-terminated.

use crate::symbols::SymbolMap;
use crate::{Error, Result};

pub const BL_RANGE: i64 = 1 << 24; // signed 25-bit halfword offset

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instr {
    /// PUSH of low registers (bitmask r0..r7) plus optionally LR.
    Push { low_mask: u8, lr: bool },
    /// POP of low registers plus optionally PC.
    Pop { low_mask: u8, pc: bool },
    /// MOVS Rd, Rm (flag-setting register move, low registers).
    MovsReg { rd: u8, rm: u8 },
    /// MOV Rd, Rm (high-register form; accepted by the decoder only).
    MovReg { rd: u8, rm: u8 },
    MovsImm { rd: u8, imm: u8 },
    AddImm { rd: u8, imm: u8 },
    SubImm { rd: u8, imm: u8 },
    /// LDR Rt, [PC, #word_off*4]
    LdrLit { rt: u8, word_off: u8 },
    /// 32-bit BL, halfword offset relative to pc+4.
    Bl { offset: i32 },
    /// 32-bit B.W, same offset rules, no link.
    BW { offset: i32 },
    BxLr,
    Nop,
    /// Anything outside the subset: raw data halfword.
    Data(u16),
}

impl Instr {
    pub fn width(&self) -> u32 {
        match self {
            Instr::Bl { .. } | Instr::BW { .. } => 4,
            _ => 2,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match *self {
            Instr::Push { low_mask, lr } => {
                half(0xB400 | ((lr as u16) << 8) | low_mask as u16)
            }
            Instr::Pop { low_mask, pc } => {
                half(0xBC00 | ((pc as u16) << 8) | low_mask as u16)
            }
            Instr::MovsReg { rd, rm } => half((rm as u16) << 3 | rd as u16),
            Instr::MovReg { rd, rm } => {
                let d = (rd >> 3) as u16;
                half(0x4600 | d << 7 | (rm as u16) << 3 | (rd & 7) as u16)
            }
            Instr::MovsImm { rd, imm } => half(0x2000 | (rd as u16) << 8 | imm as u16),
            Instr::AddImm { rd, imm } => half(0x3000 | (rd as u16) << 8 | imm as u16),
            Instr::SubImm { rd, imm } => half(0x3800 | (rd as u16) << 8 | imm as u16),
            Instr::LdrLit { rt, word_off } => {
                half(0x4800 | (rt as u16) << 8 | word_off as u16)
            }
            Instr::Bl { offset } => branch25_bytes(offset, true).to_vec(),
            Instr::BW { offset } => branch25_bytes(offset, false).to_vec(),
            Instr::BxLr => half(0x4770),
            Instr::Nop => half(0xBF00),
            Instr::Data(w) => half(w),
        }
    }
}

fn half(w: u16) -> Vec<u8> {
    w.to_le_bytes().to_vec()
}

/// Split a halfword (even) offset into the S:I1:I2:imm10:imm11 fields.
fn branch25_bytes(offset: i32, link: bool) -> [u8; 4] {
    let imm = (offset as u32) & 0x1FF_FFFF;
    let s = (imm >> 24) & 1;
    let i1 = (imm >> 23) & 1;
    let i2 = (imm >> 22) & 1;
    let imm10 = (imm >> 12) & 0x3FF;
    let imm11 = (imm >> 1) & 0x7FF;
    let j1 = (i1 ^ 1) ^ s;
    let j2 = (i2 ^ 1) ^ s;
    let hw1 = 0xF000 | (s << 10) as u16 | imm10 as u16;
    let base: u16 = if link { 0xD000 } else { 0x9000 };
    let hw2 = base | (j1 << 13) as u16 | (j2 << 11) as u16 | imm11 as u16;
    let mut out = [0u8; 4];
    out[..2].copy_from_slice(&hw1.to_le_bytes());
    out[2..].copy_from_slice(&hw2.to_le_bytes());
    out
}

fn branch25_offset(hw1: u16, hw2: u16) -> i32 {
    let s = ((hw1 >> 10) & 1) as u32;
    let imm10 = (hw1 & 0x3FF) as u32;
    let j1 = ((hw2 >> 13) & 1) as u32;
    let j2 = ((hw2 >> 11) & 1) as u32;
    let imm11 = (hw2 & 0x7FF) as u32;
    let i1 = !(j1 ^ s) & 1;
    let i2 = !(j2 ^ s) & 1;
    let mut imm = (s << 24) | (i1 << 23) | (i2 << 22) | (imm10 << 12) | (imm11 << 1);
    if s != 0 {
        imm |= 0xFE00_0000; // sign extend
    }
    imm as i32
}

fn branch_offset(pc: u32, target: u32) -> Result<i32> {
    if pc & 1 != 0 {
        return Err(Error::Misaligned(pc));
    }
    if target & 1 != 0 {
        return Err(Error::Misaligned(target));
    }
    let offset = target as i64 - (pc as i64 + 4);
    if offset < -BL_RANGE || offset > BL_RANGE - 2 {
        return Err(Error::BranchRange { pc, offset });
    }
    Ok(offset as i32)
}

pub fn encode_bl(pc: u32, target: u32) -> Result<[u8; 4]> {
    Ok(branch25_bytes(branch_offset(pc, target)?, true))
}

pub fn encode_bw(pc: u32, target: u32) -> Result<[u8; 4]> {
    Ok(branch25_bytes(branch_offset(pc, target)?, false))
}

fn decode_branch(bytes: &[u8], pc: u32, link: bool) -> Result<u32> {
    let which = if link { "BL" } else { "B.W" };
    if bytes.len() < 4 {
        return Err(Error::NotABranch(pc, which));
    }
    let hw1 = u16::from_le_bytes([bytes[0], bytes[1]]);
    let hw2 = u16::from_le_bytes([bytes[2], bytes[3]]);
    let expect = if link { 0xD000 } else { 0x9000 };
    if hw1 & 0xF800 != 0xF000 || hw2 & 0xD000 != expect {
        return Err(Error::NotABranch(pc, which));
    }
    let offset = branch25_offset(hw1, hw2);
    Ok((pc as i64 + 4 + offset as i64) as u32)
}

pub fn decode_bl(bytes: &[u8], pc: u32) -> Result<u32> {
    decode_branch(bytes, pc, true)
}

pub fn decode_bw(bytes: &[u8], pc: u32) -> Result<u32> {
    decode_branch(bytes, pc, false)
}

/// Decode one instruction; unknown encodings come back as `Data` so the
/// disassembler can keep going. Returns the instruction and its byte width.
pub fn decode(bytes: &[u8]) -> (Instr, u32) {
    if bytes.len() < 2 {
        return (Instr::Data(0), 2);
    }
    let hw = u16::from_le_bytes([bytes[0], bytes[1]]);
    // 32-bit encodings start with 0b111 01/10/11 in the top five bits.
    if hw & 0xF800 == 0xF000 && bytes.len() >= 4 {
        let hw2 = u16::from_le_bytes([bytes[2], bytes[3]]);
        if hw2 & 0xD000 == 0xD000 {
            return (Instr::Bl { offset: branch25_offset(hw, hw2) }, 4);
        }
        if hw2 & 0xD000 == 0x9000 {
            return (Instr::BW { offset: branch25_offset(hw, hw2) }, 4);
        }
        return (Instr::Data(hw), 2);
    }
    let instr = match hw {
        0 => Instr::Data(0),
        _ if hw & 0xFFC0 == 0x0000 => Instr::MovsReg {
            rd: (hw & 7) as u8,
            rm: ((hw >> 3) & 7) as u8,
        },
        _ if hw & 0xF800 == 0x2000 => Instr::MovsImm {
            rd: ((hw >> 8) & 7) as u8,
            imm: (hw & 0xFF) as u8,
        },
        _ if hw & 0xF800 == 0x3000 => Instr::AddImm {
            rd: ((hw >> 8) & 7) as u8,
            imm: (hw & 0xFF) as u8,
        },
        _ if hw & 0xF800 == 0x3800 => Instr::SubImm {
            rd: ((hw >> 8) & 7) as u8,
            imm: (hw & 0xFF) as u8,
        },
        0x4770 => Instr::BxLr,
        _ if hw & 0xFF00 == 0x4600 => Instr::MovReg {
            rd: (((hw >> 7) & 1) << 3) as u8 | (hw & 7) as u8,
            rm: ((hw >> 3) & 0xF) as u8,
        },
        _ if hw & 0xF800 == 0x4800 => Instr::LdrLit {
            rt: ((hw >> 8) & 7) as u8,
            word_off: (hw & 0xFF) as u8,
        },
        _ if hw & 0xFE00 == 0xB400 => Instr::Push {
            low_mask: (hw & 0xFF) as u8,
            lr: hw & 0x100 != 0,
        },
        _ if hw & 0xFE00 == 0xBC00 => Instr::Pop {
            low_mask: (hw & 0xFF) as u8,
            pc: hw & 0x100 != 0,
        },
        0xBF00 => Instr::Nop,
        _ => Instr::Data(hw),
    };
    (instr, 2)
}

// ---------------------------------------------------------------------------
// Hook IR

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HookArg {
    /// Forward parameter `k` of the hooked function (only k = 0 survives
    /// across an earlier call; it is stashed in r4 by `SaveScratch`).
    Forwarded(u8),
    Str(String),
    Int(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HookOp {
    SaveScratch,
    Call { symbol: String, args: Vec<HookArg> },
    /// BL the symbol with whatever is already in r0-r3; the following
    /// `ReturnLastResult` hands its r0 back to the caller.
    TailCall { symbol: String },
    ReturnLastResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HookProgram {
    pub ops: Vec<HookOp>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedStub {
    pub base: u32,
    pub code: Vec<u8>,
    /// (offset from base, word value)
    pub literal_pool: Vec<(u32, u32)>,
    /// (offset from base, text without terminator)
    pub strings: Vec<(u32, String)>,
    pub total_size: u32,
}

impl EncodedStub {
    /// Full byte image: code, zero fill to 4-alignment, pool words, strings.
    pub fn bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.total_size as usize];
        out[..self.code.len()].copy_from_slice(&self.code);
        for &(off, word) in &self.literal_pool {
            out[off as usize..off as usize + 4].copy_from_slice(&word.to_le_bytes());
        }
        for (off, s) in &self.strings {
            let o = *off as usize;
            out[o..o + s.len()].copy_from_slice(s.as_bytes());
            out[o + s.len()] = 0;
        }
        out
    }
}

fn align4(v: u32) -> u32 {
    (v + 3) & !3
}

enum PoolRef {
    Str(usize),
    Word,
}

fn validate(prog: &HookProgram) -> Result<bool> {
    if prog.ops.is_empty() {
        return Err(Error::Program("empty program".into()));
    }
    let saves = prog.ops.iter().filter(|o| matches!(o, HookOp::SaveScratch)).count();
    if saves > 1 || (saves == 1 && prog.ops[0] != HookOp::SaveScratch) {
        return Err(Error::Program("save_scratch must be the first op".into()));
    }
    if !matches!(prog.ops.last(), Some(HookOp::ReturnLastResult)) {
        return Err(Error::Program("program must end with return_last_result".into()));
    }
    for op in &prog.ops {
        if let HookOp::Call { args, .. } = op {
            if args.len() > 4 {
                return Err(Error::Program("at most 4 register arguments".into()));
            }
            for a in args {
                if let HookArg::Forwarded(k) = a {
                    if *k != 0 {
                        return Err(Error::Program(
                            "only parameter 0 can be forwarded".into(),
                        ));
                    }
                    if saves == 0 {
                        return Err(Error::Program(
                            "forwarded parameter requires save_scratch".into(),
                        ));
                    }
                }
            }
        }
    }
    Ok(saves == 1)
}

/// Assemble a hook program at `base`: straight-line code, then the
/// 4-aligned literal pool, then zero-terminated strings.
pub fn assemble_stub(prog: &HookProgram, base: u32, syms: &SymbolMap) -> Result<EncodedStub> {
    if base & 1 != 0 {
        return Err(Error::Misaligned(base));
    }
    let uses_scratch = validate(prog)?;

    // sizing pass: code length and pool/string layout are base-independent
    let mut code_len = 0u32;
    let mut pool_refs: Vec<PoolRef> = Vec::new();
    let mut strings: Vec<String> = Vec::new();
    for op in &prog.ops {
        match op {
            HookOp::SaveScratch => code_len += 4,
            HookOp::Call { args, .. } => {
                for a in args {
                    match a {
                        HookArg::Forwarded(_) => code_len += 2,
                        HookArg::Int(v) if *v <= 0xFF => code_len += 2,
                        HookArg::Int(_) => {
                            pool_refs.push(PoolRef::Word);
                            code_len += 2;
                        }
                        HookArg::Str(s) => {
                            pool_refs.push(PoolRef::Str(strings.len()));
                            strings.push(s.clone());
                            code_len += 2;
                        }
                    }
                }
                code_len += 4;
            }
            HookOp::TailCall { .. } => code_len += 4,
            HookOp::ReturnLastResult => code_len += 2,
        }
    }

    let (pool_off, mut total);
    if pool_refs.is_empty() {
        pool_off = code_len;
        total = code_len;
    } else {
        pool_off = align4(code_len);
        total = pool_off + 4 * pool_refs.len() as u32;
    }
    let mut string_offs = Vec::with_capacity(strings.len());
    for s in &strings {
        string_offs.push(total);
        total += s.len() as u32 + 1;
    }

    // emit pass
    let mut code = Vec::with_capacity(code_len as usize);
    let mut pool_words: Vec<(u32, u32)> = Vec::new();
    let mut pool_cursor = 0usize;
    let emit = |i: Instr, code: &mut Vec<u8>| code.extend_from_slice(&i.encode());

    for op in &prog.ops {
        match op {
            HookOp::SaveScratch => {
                emit(Instr::Push { low_mask: 0x10, lr: true }, &mut code);
                emit(Instr::MovsReg { rd: 4, rm: 0 }, &mut code);
            }
            HookOp::Call { symbol, .. } | HookOp::TailCall { symbol } => {
                if let HookOp::Call { args, .. } = op {
                    for (slot, a) in args.iter().enumerate() {
                        let rd = slot as u8;
                        match a {
                            HookArg::Forwarded(_) => {
                                emit(Instr::MovsReg { rd, rm: 4 }, &mut code)
                            }
                            HookArg::Int(v) if *v <= 0xFF => {
                                emit(Instr::MovsImm { rd, imm: *v as u8 }, &mut code)
                            }
                            HookArg::Int(v) => {
                                let entry_off = pool_off + 4 * pool_cursor as u32;
                                pool_words.push((entry_off, *v));
                                pool_cursor += 1;
                                ldr_lit(rd, base, code.len() as u32, entry_off, &mut code)?;
                            }
                            HookArg::Str(_) => {
                                let entry_off = pool_off + 4 * pool_cursor as u32;
                                let s_idx = match pool_refs[pool_cursor] {
                                    PoolRef::Str(i) => i,
                                    PoolRef::Word => unreachable!("ref order"),
                                };
                                pool_words.push((entry_off, base + string_offs[s_idx]));
                                pool_cursor += 1;
                                ldr_lit(rd, base, code.len() as u32, entry_off, &mut code)?;
                            }
                        }
                    }
                }
                let target = syms.addr_of(symbol)?;
                let pc = base + code.len() as u32;
                let offset = branch_offset(pc, target)?;
                emit(Instr::Bl { offset }, &mut code);
            }
            HookOp::ReturnLastResult => {
                if uses_scratch {
                    emit(Instr::Pop { low_mask: 0x10, pc: true }, &mut code);
                } else {
                    emit(Instr::BxLr, &mut code);
                }
            }
        }
    }
    debug_assert_eq!(code.len() as u32, code_len);

    let strings_out = strings
        .into_iter()
        .zip(string_offs)
        .map(|(s, off)| (off, s))
        .collect();
    Ok(EncodedStub {
        base,
        code,
        literal_pool: pool_words,
        strings: strings_out,
        total_size: total,
    })
}

fn ldr_lit(rt: u8, base: u32, code_off: u32, entry_off: u32, code: &mut Vec<u8>) -> Result<()> {
    let pc_base = (base + code_off + 4) & !3;
    let entry_addr = base + entry_off;
    if entry_addr < pc_base || (entry_addr - pc_base) % 4 != 0 {
        return Err(Error::LiteralRange(base + code_off));
    }
    let words = (entry_addr - pc_base) / 4;
    if words > 0xFF {
        return Err(Error::LiteralRange(base + code_off));
    }
    code.extend_from_slice(&Instr::LdrLit { rt, word_off: words as u8 }.encode());
    Ok(())
}

// ---------------------------------------------------------------------------
// Disassembly

#[derive(Debug, Clone)]
pub struct DisasmLine {
    pub addr: u32,
    pub instr: Instr,
    pub text: String,
}

fn reglist(low_mask: u8, extra: Option<&str>) -> String {
    let mut parts: Vec<String> = (0..8)
        .filter(|b| low_mask & (1 << b) != 0)
        .map(|b| format!("R{b}"))
        .collect();
    if let Some(e) = extra {
        parts.push(e.to_string());
    }
    format!("{{{}}}", parts.join(","))
}

fn regname(r: u8) -> String {
    match r {
        13 => "SP".into(),
        14 => "LR".into(),
        15 => "PC".into(),
        n => format!("R{n}"),
    }
}

fn render(addr: u32, instr: &Instr, syms: &SymbolMap) -> String {
    let (mnemonic, ops, comment) = match *instr {
        Instr::Push { low_mask, lr } => {
            ("PUSH", reglist(low_mask, lr.then_some("LR")), None)
        }
        Instr::Pop { low_mask, pc } => ("POP", reglist(low_mask, pc.then_some("PC")), None),
        Instr::MovsReg { rd, rm } => ("MOVS", format!("R{rd}, R{rm}"), None),
        Instr::MovReg { rd, rm } => ("MOV", format!("{}, {}", regname(rd), regname(rm)), None),
        Instr::MovsImm { rd, imm } => ("MOVS", format!("R{rd}, #0x{imm:X}"), None),
        Instr::AddImm { rd, imm } => ("ADDS", format!("R{rd}, #0x{imm:X}"), None),
        Instr::SubImm { rd, imm } => ("SUBS", format!("R{rd}, #0x{imm:X}"), None),
        Instr::LdrLit { rt, word_off } => {
            let target = ((addr + 4) & !3) + 4 * word_off as u32;
            ("LDR", format!("R{rt}, =0x{target:X}"), None)
        }
        Instr::Bl { offset } => {
            let target = (addr as i64 + 4 + offset as i64) as u32;
            let c = syms.reverse_lookup(target).map(|s| s.name.clone());
            ("BL", format!("0x{target:X}"), c)
        }
        Instr::BW { offset } => {
            let target = (addr as i64 + 4 + offset as i64) as u32;
            let c = syms.reverse_lookup(target).map(|s| s.name.clone());
            ("B.W", format!("0x{target:X}"), c)
        }
        Instr::BxLr => ("BX", "LR".to_string(), None),
        Instr::Nop => ("NOP", String::new(), None),
        Instr::Data(w) => ("DCW", format!("0x{w:04X}"), None),
    };
    let mut line = format!("{addr:08X}  {mnemonic:<6} {ops}");
    if let Some(c) = comment {
        line = format!("{line} ; {c}");
    }
    line.trim_end().to_string()
}

pub fn disassemble(bytes: &[u8], base: u32, syms: &SymbolMap) -> Vec<DisasmLine> {
    let mut lines = Vec::new();
    let mut off = 0usize;
    while off < bytes.len() {
        let (instr, width) = decode(&bytes[off..]);
        let addr = base + off as u32;
        lines.push(DisasmLine { addr, text: render(addr, &instr, syms), instr });
        off += width as usize;
    }
    lines
}
