//! Reference semantics used for differential testing.
//!
//! [`interpret_asm`] runs the original instruction stream for a single
//! lane; [`evaluate_decompiled`] runs the lowered statement tree with C
//! semantics. Both start from the same [`Env`] and return the ordered
//! global-memory writes.
//!
//! The single lane is lane 0 of a wavefront with no other lanes: mask
//! registers are tested through bit 0, and exec never holds other bits.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::abi::{AbiMap, BuiltinId, BuiltinKind, SlotTarget, View};
use crate::asm::{Instruction, KernelConfig, Operand, Prefix, SpecialReg};
use crate::expr::{arith_conv, BinOp, Expr, ExprKind, UnOp};
use crate::lower::{Lowered, Stmt};
use crate::sym::Statement;
use crate::types::{type_from_suffix, Base, DataType};

const STEP_LIMIT: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("outside the modelled subset: {0}")]
    Unsupported(String),
    #[error("use of undeclared variable `{0}`")]
    Undeclared(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("step limit exceeded")]
    StepLimit,
    #[error("jump to unknown label `{0}`")]
    UnknownLabel(String),
}

type Res<T> = Result<T, OracleError>;

fn unsupported<T>(why: impl Into<String>) -> Res<T> {
    Err(OracleError::Unsupported(why.into()))
}

/// One global-memory write.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemWrite {
    pub addr: u64,
    pub bytes: u32,
    pub value: u64,
}

pub type Trace = Vec<MemWrite>;

/// Work-item coordinates, dispatch settings, argument values and the seed
/// for the initial memory contents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Env {
    pub global_offset: [u64; 3],
    pub group_id: [u32; 3],
    pub local_id: [u32; 3],
    pub local_size: [u32; 3],
    pub global_size: [u32; 3],
    pub work_dim: u32,
    /// Raw bits per argument name; pointers hold their base address.
    pub args: HashMap<String, u64>,
    pub kernarg_base: u64,
    pub mem_seed: u64,
}

impl Env {
    pub fn builtin(&self, id: BuiltinId) -> u64 {
        let d = id.dim.unwrap_or(0) as usize;
        match id.kind {
            BuiltinKind::GlobalOffset => self.global_offset[d],
            BuiltinKind::LocalId => self.local_id[d] as u64,
            BuiltinKind::GroupId => self.group_id[d] as u64,
            BuiltinKind::GlobalSize => self.global_size[d] as u64,
            BuiltinKind::LocalSize => self.local_size[d] as u64,
            BuiltinKind::NumGroups => (self.global_size[d] / self.local_size[d].max(1)) as u64,
            BuiltinKind::WorkDim => self.work_dim as u64,
            BuiltinKind::GlobalId => {
                self.group_id[d] as u64 * self.local_size[d] as u64
                    + self.local_id[d] as u64
                    + self.global_offset[d]
            }
        }
    }
}

/// Draws a consistent environment: ids lie inside the dispatch, offsets
/// and sizes stay small enough for 32-bit builtins.
pub fn sample_env(config: &KernelConfig, rng: &mut impl Rng) -> Env {
    let mut env = Env {
        global_offset: [0; 3],
        group_id: [0; 3],
        local_id: [0; 3],
        local_size: [1; 3],
        global_size: [1; 3],
        work_dim: config.dim_count().max(1) as u32,
        args: HashMap::new(),
        kernarg_base: 0x7f00_0000_0000,
        mem_seed: rng.gen(),
    };
    for d in 0..3 {
        let ls = config.cws[d].max(1);
        let groups = rng.gen_range(1..=64u32);
        env.local_size[d] = ls;
        env.global_size[d] = groups * ls;
        env.group_id[d] = rng.gen_range(0..groups);
        env.local_id[d] = rng.gen_range(0..ls);
        env.global_offset[d] = if rng.gen_bool(0.25) {
            0
        } else {
            rng.gen_range(0..1u64 << 20)
        };
    }
    let mut next_buffer = 1u64;
    for arg in config.args.iter().filter(|a| !a.implicit) {
        let bits = if arg.type_text.ends_with('*') {
            let base = next_buffer << 36;
            next_buffer += 1;
            base
        } else {
            match arg.ocl_type {
                Some(t) if t.is_float() && t.bits == 32 => {
                    (rng.gen_range(-1000.0f32..1000.0)).to_bits() as u64
                }
                Some(t) if t.is_float() => rng.gen_range(-1000.0f64..1000.0).to_bits(),
                _ => {
                    // Mostly small values so that comparisons go both ways.
                    if rng.gen_bool(0.5) {
                        rng.gen_range(0..64u64)
                    } else {
                        rng.gen()
                    }
                }
            }
        };
        env.args.insert(arg.name.clone(), bits);
    }
    env
}

fn indeterminate(seed: u64, name: &str) -> u64 {
    name.bytes().fold(mix(seed ^ 0x5bd1_e995), |h, b| mix(h ^ b as u64))
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Byte-addressed memory whose unwritten bytes are a fixed function of
/// the seed and the address.
#[derive(Clone, Debug)]
struct Memory {
    seed: u64,
    bytes: HashMap<u64, u8>,
    trace: Trace,
}

impl Memory {
    fn new(config: &KernelConfig, abi: &AbiMap, env: &Env) -> Memory {
        let mut m = Memory {
            seed: env.mem_seed,
            bytes: HashMap::new(),
            trace: Vec::new(),
        };
        for e in abi.entries.iter().filter(|e| e.view == View::Kernarg) {
            let value = match &e.target {
                SlotTarget::Builtin(b) => env.builtin(*b),
                SlotTarget::Arg(i) => env.args.get(&config.args[*i].name).copied().unwrap_or(0),
                SlotTarget::Reserved(_) => 0,
            };
            m.poke(env.kernarg_base + e.offset as u64, e.size.min(8), value);
        }
        m
    }

    fn read(&self, addr: u64, n: u32) -> u64 {
        let mut v = 0u64;
        for i in (0..n as u64).rev() {
            let a = addr.wrapping_add(i);
            let b = match self.bytes.get(&a) {
                Some(b) => *b,
                None => mix(self.seed ^ a) as u8,
            };
            v = (v << 8) | b as u64;
        }
        v
    }

    fn poke(&mut self, addr: u64, n: u32, value: u64) {
        for i in 0..n as u64 {
            self.bytes.insert(addr.wrapping_add(i), (value >> (8 * i)) as u8);
        }
    }

    fn store(&mut self, addr: u64, n: u32, value: u64) {
        let value = value & mask(n * 8);
        self.poke(addr, n, value);
        self.trace.push(MemWrite {
            addr,
            bytes: n,
            value,
        });
    }
}

fn mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

fn sext(v: u64, bits: u32) -> i64 {
    if bits >= 64 {
        v as i64
    } else {
        let s = 64 - bits;
        ((v << s) as i64) >> s
    }
}

// ---------------------------------------------------------------------
// Assembly interpreter

struct Lane<'a> {
    sgpr: [u32; 104],
    vgpr: [u32; 256],
    vcc: u64,
    exec: u64,
    scc: bool,
    m0: u32,
    mem: Memory,
    abi: &'a AbiMap,
    env: &'a Env,
}

enum Flow {
    Next,
    Jump(String),
    End,
}

fn suffix_ty(i: &Instruction, idx: usize) -> Option<DataType> {
    i.suffix(idx).map(type_from_suffix)
}

fn f32v(v: u32) -> f32 {
    f32::from_bits(v)
}

impl Lane<'_> {
    fn active(&self) -> bool {
        self.exec & 1 == 1
    }

    fn op<'i>(&self, i: &'i Instruction, k: usize) -> Res<&'i Operand> {
        i.operands
            .get(k)
            .ok_or_else(|| OracleError::Unsupported(format!("missing operand {k}")))
    }

    fn read32(&self, i: &Instruction, k: usize) -> Res<u32> {
        Ok(match self.op(i, k)? {
            Operand::Sgpr(r) => self.sgpr[*r as usize],
            Operand::Vgpr(r) => self.vgpr[*r as usize],
            Operand::Special(SpecialReg::M0) => self.m0,
            Operand::Special(SpecialReg::Scc) => self.scc as u32,
            Operand::Special(SpecialReg::Vcc | SpecialReg::VccLo) => self.vcc as u32,
            Operand::Special(SpecialReg::VccHi) => (self.vcc >> 32) as u32,
            Operand::Special(SpecialReg::Exec | SpecialReg::ExecLo) => self.exec as u32,
            Operand::Special(SpecialReg::ExecHi) => (self.exec >> 32) as u32,
            Operand::Int(v) => *v as u32,
            Operand::Float(f) => (*f as f32).to_bits(),
            other => return unsupported(format!("operand {other:?}")),
        })
    }

    fn pair(&self, i: &Instruction, k: usize) -> Res<(bool, usize)> {
        match self.op(i, k)? {
            Operand::SgprRange(a, b) if b - a == 1 => Ok((false, *a as usize)),
            Operand::VgprRange(a, b) if b - a == 1 => Ok((true, *a as usize)),
            other => unsupported(format!("operand {other:?} is not a pair")),
        }
    }

    fn read64(&self, i: &Instruction, k: usize, float: bool) -> Res<u64> {
        Ok(match self.op(i, k)? {
            Operand::SgprRange(..) | Operand::VgprRange(..) => {
                let (v, lo) = self.pair(i, k)?;
                let regs: &[u32] = if v { &self.vgpr } else { &self.sgpr };
                regs[lo] as u64 | (regs[lo + 1] as u64) << 32
            }
            Operand::Special(SpecialReg::Vcc) => self.vcc,
            Operand::Special(SpecialReg::Exec) => self.exec,
            Operand::Int(v) => *v as u64,
            Operand::Float(f) if float => f.to_bits(),
            Operand::Float(f) => (*f as f32).to_bits() as u64,
            other => return unsupported(format!("operand {other:?}")),
        })
    }

    fn write32(&mut self, i: &Instruction, k: usize, v: u32) -> Res<()> {
        let vector = matches!(i.prefix, Prefix::V | Prefix::Flat);
        if vector && !self.active() {
            return Ok(());
        }
        match self.op(i, k)? {
            Operand::Sgpr(r) => self.sgpr[*r as usize] = v,
            Operand::Vgpr(r) => self.vgpr[*r as usize] = v,
            Operand::Special(SpecialReg::M0) => self.m0 = v,
            Operand::Special(SpecialReg::VccLo) => self.vcc = (self.vcc & !0xffff_ffff) | v as u64,
            Operand::Special(SpecialReg::VccHi) => {
                self.vcc = (self.vcc & 0xffff_ffff) | (v as u64) << 32
            }
            Operand::Special(SpecialReg::ExecLo) => self.exec = v as u64 & 1,
            Operand::Special(SpecialReg::ExecHi) => {}
            other => return unsupported(format!("destination {other:?}")),
        }
        Ok(())
    }

    fn write64(&mut self, i: &Instruction, k: usize, v: u64) -> Res<()> {
        let vector = matches!(i.prefix, Prefix::V | Prefix::Flat);
        if vector && !self.active() {
            return Ok(());
        }
        match self.op(i, k)? {
            Operand::Special(SpecialReg::Vcc) => self.vcc = v,
            Operand::Special(SpecialReg::Exec) => self.exec = v & 1,
            _ => {
                let (vec, lo) = self.pair(i, k)?;
                let regs: &mut [u32] = if vec { &mut self.vgpr } else { &mut self.sgpr };
                regs[lo] = v as u32;
                regs[lo + 1] = (v >> 32) as u32;
            }
        }
        Ok(())
    }

    /// Writes this lane's predicate bit; the lane's bit is clear when it is
    /// inactive.
    fn write_mask(&mut self, i: &Instruction, k: usize, bit: bool) -> Res<()> {
        let v = (bit && self.active()) as u64;
        match self.op(i, k)? {
            Operand::Special(SpecialReg::Vcc) => self.vcc = v,
            Operand::Special(SpecialReg::Exec) => self.exec = v,
            _ => {
                let (vec, lo) = self.pair(i, k)?;
                let regs: &mut [u32] = if vec { &mut self.vgpr } else { &mut self.sgpr };
                regs[lo] = v as u32;
                regs[lo + 1] = 0;
            }
        }
        Ok(())
    }

    fn mask_bit(&self, i: &Instruction, k: usize) -> Res<bool> {
        Ok(self.read64(i, k, false)? & 1 == 1)
    }

    fn exec_instr(&mut self, i: &Instruction) -> Res<Flow> {
        if i.opaque {
            return unsupported(format!("`{}`", i.source_text));
        }
        if !i.modifiers.iter().all(|m| m == "glc" || m == "slc") {
            return unsupported("modifiers");
        }
        let target = || -> Res<String> {
            match i.operands.first() {
                Some(Operand::Label(l)) => Ok(l.clone()),
                _ => unsupported("branch without label"),
            }
        };
        let jump_if = |c: bool| -> Res<Flow> {
            if c {
                Ok(Flow::Jump(target()?))
            } else {
                Ok(Flow::Next)
            }
        };
        match i.mnemonic.as_str() {
            "s_endpgm" => return Ok(Flow::End),
            "s_waitcnt" | "s_nop" => return Ok(Flow::Next),
            "s_branch" => return Ok(Flow::Jump(target()?)),
            "s_cbranch_scc0" => return jump_if(!self.scc),
            "s_cbranch_scc1" => return jump_if(self.scc),
            "s_cbranch_vccz" => return jump_if(self.vcc & 1 == 0),
            "s_cbranch_vccnz" => return jump_if(self.vcc & 1 == 1),
            "s_cbranch_execz" => return jump_if(!self.active()),
            "s_cbranch_execnz" => return jump_if(self.active()),
            _ => {}
        }
        match i.prefix {
            Prefix::S => self.scalar(i)?,
            Prefix::V => self.vector(i)?,
            Prefix::Flat => self.flat(i)?,
            _ => return unsupported(format!("`{}`", i.mnemonic)),
        }
        Ok(Flow::Next)
    }

    fn scalar(&mut self, i: &Instruction) -> Res<()> {
        let root = i.root.as_str();
        if root.starts_with("load_dword") {
            return self.scalar_load(i);
        }
        let ty = suffix_ty(i, 0).ok_or_else(|| OracleError::Unsupported(i.mnemonic.clone()))?;
        let signed = ty.base == Base::Signed;
        if let Some(kind) = root.strip_prefix("cmp_") {
            if ty.width() != 32 {
                return unsupported("64-bit scalar compare");
            }
            let a = self.read32(i, 0)?;
            let b = self.read32(i, 1)?;
            self.scc = compare_int(kind, a as u64, b as u64, signed, 32)?;
            return Ok(());
        }
        let wide = ty.width() == 64;
        match (root, wide) {
            ("mov", false) => {
                let v = self.read32(i, 1)?;
                self.write32(i, 0, v)
            }
            ("mov", true) => {
                let v = self.read64(i, 1, false)?;
                self.write64(i, 0, v)
            }
            ("movk", false) => {
                let Operand::Int(v) = self.op(i, 1)? else {
                    return unsupported("movk immediate");
                };
                self.write32(i, 0, *v as u16 as i16 as i32 as u32)
            }
            ("add" | "sub", false) => {
                let a = self.read32(i, 1)?;
                let b = self.read32(i, 2)?;
                let (r, c) = if root == "add" {
                    let (r, c) = a.overflowing_add(b);
                    let o = (a as i32).overflowing_add(b as i32).1;
                    (r, if signed { o } else { c })
                } else {
                    let (r, c) = a.overflowing_sub(b);
                    let o = (a as i32).overflowing_sub(b as i32).1;
                    (r, if signed { o } else { c })
                };
                self.scc = c;
                self.write32(i, 0, r)
            }
            ("addc" | "subb", false) => {
                let a = self.read32(i, 1)? as u64;
                let b = self.read32(i, 2)? as u64;
                let c = self.scc as u64;
                let r = if root == "addc" {
                    a + b + c
                } else {
                    a.wrapping_sub(b).wrapping_sub(c)
                };
                self.scc = r >> 32 != 0;
                self.write32(i, 0, r as u32)
            }
            ("mul", false) => {
                let r = self.read32(i, 1)?.wrapping_mul(self.read32(i, 2)?);
                self.write32(i, 0, r)
            }
            ("and" | "or" | "xor" | "andn2" | "orn2" | "nand" | "nor" | "xnor", _) => {
                let (a, b) = if wide {
                    (self.read64(i, 1, false)?, self.read64(i, 2, false)?)
                } else {
                    (self.read32(i, 1)? as u64, self.read32(i, 2)? as u64)
                };
                let r = match root {
                    "and" => a & b,
                    "or" => a | b,
                    "xor" => a ^ b,
                    "andn2" => a & !b,
                    "orn2" => a | !b,
                    "nand" => !(a & b),
                    "nor" => !(a | b),
                    _ => !(a ^ b),
                };
                let r = r & mask(ty.width());
                self.scc = r != 0;
                if wide {
                    self.write64(i, 0, r)
                } else {
                    self.write32(i, 0, r as u32)
                }
            }
            ("not", _) => {
                if wide {
                    let r = !self.read64(i, 1, false)?;
                    self.scc = r != 0;
                    self.write64(i, 0, r)
                } else {
                    let r = !self.read32(i, 1)?;
                    self.scc = r != 0;
                    self.write32(i, 0, r)
                }
            }
            ("lshl" | "lshr" | "ashr", _) => {
                let bits = ty.width();
                let n = self.read32(i, 2)? & (bits - 1);
                let a = if wide {
                    self.read64(i, 1, false)?
                } else {
                    self.read32(i, 1)? as u64
                };
                let r = match root {
                    "lshl" => a << n,
                    "lshr" => a >> n,
                    _ => (sext(a, bits) >> n) as u64,
                } & mask(bits);
                self.scc = r != 0;
                if wide {
                    self.write64(i, 0, r)
                } else {
                    self.write32(i, 0, r as u32)
                }
            }
            ("min" | "max", false) => {
                let a = self.read32(i, 1)?;
                let b = self.read32(i, 2)?;
                let lt = if signed {
                    (a as i32) < (b as i32)
                } else {
                    a < b
                };
                let (r, s) = if root == "min" {
                    (if lt { a } else { b }, lt)
                } else {
                    (if lt { b } else { a }, !lt)
                };
                self.scc = s;
                self.write32(i, 0, r)
            }
            ("cselect", false) => {
                let r = if self.scc {
                    self.read32(i, 1)?
                } else {
                    self.read32(i, 2)?
                };
                self.write32(i, 0, r)
            }
            ("cselect", true) => {
                let r = if self.scc {
                    self.read64(i, 1, false)?
                } else {
                    self.read64(i, 2, false)?
                };
                self.write64(i, 0, r)
            }
            ("and_saveexec" | "or_saveexec", true) => {
                let old = self.exec;
                let s = self.read64(i, 1, false)?;
                let new = if root == "and_saveexec" { s & old } else { s | old };
                self.write64(i, 0, old)?;
                self.exec = new & 1;
                self.scc = self.exec != 0;
                Ok(())
            }
            _ => unsupported(format!("`{}`", i.mnemonic)),
        }
    }

    fn scalar_load(&mut self, i: &Instruction) -> Res<()> {
        let dwords: u32 = match i.root.as_str() {
            "load_dword" => 1,
            "load_dwordx2" => 2,
            "load_dwordx4" => 4,
            "load_dwordx8" => 8,
            "load_dwordx16" => 16,
            _ => return unsupported("scalar load width"),
        };
        let first = match self.op(i, 0)? {
            Operand::Sgpr(r) => *r as usize,
            Operand::SgprRange(a, b) if (b - a + 1) as u32 == dwords => *a as usize,
            _ => return unsupported("scalar load destination"),
        };
        let base = self.read64(i, 1, false)?;
        let off = match self.op(i, 2)? {
            Operand::Int(v) if *v >= 0 => *v as u64,
            _ => return unsupported("scalar load offset"),
        };
        if base == self.env.kernarg_base && dwords == 1 {
            let hit = self
                .abi
                .entries
                .iter()
                .find(|e| e.view == View::Settings && e.offset as u64 == off);
            if let Some(e) = hit {
                let v = match &e.target {
                    SlotTarget::Builtin(b) => self.env.builtin(*b),
                    _ => return unsupported("settings slot"),
                };
                self.sgpr[first] = v as u32;
                return Ok(());
            }
        }
        for k in 0..dwords as u64 {
            self.sgpr[first + k as usize] = self.mem.read(base + off + 4 * k, 4) as u32;
        }
        Ok(())
    }

    fn vector(&mut self, i: &Instruction) -> Res<()> {
        let root = i.root.as_str();
        let ty = suffix_ty(i, 0).ok_or_else(|| OracleError::Unsupported(i.mnemonic.clone()))?;
        let ty1 = suffix_ty(i, 1);
        let n = i.operands.len();
        let signed = ty.base == Base::Signed;
        if let Some(kind) = root.strip_prefix("cmpx_").or_else(|| root.strip_prefix("cmp_")) {
            let c = if ty.is_float() {
                if ty.width() == 64 {
                    let a = f64::from_bits(self.read64(i, 1, true)?);
                    let b = f64::from_bits(self.read64(i, 2, true)?);
                    compare_float(kind, a, b)?
                } else {
                    let a = f32v(self.read32(i, 1)?) as f64;
                    let b = f32v(self.read32(i, 2)?) as f64;
                    compare_float(kind, a, b)?
                }
            } else if ty.width() == 64 {
                let a = self.read64(i, 1, false)?;
                let b = self.read64(i, 2, false)?;
                compare_int(kind, a, b, signed, 64)?
            } else {
                let a = self.read32(i, 1)? as u64;
                let b = self.read32(i, 2)? as u64;
                compare_int(kind, a, b, signed, 32)?
            };
            let c = c && self.active();
            self.write_mask(i, 0, c)?;
            if root.starts_with("cmpx_") {
                self.exec = c as u64;
            }
            return Ok(());
        }
        match (root, ty.width()) {
            ("mov", 32) => {
                let v = self.read32(i, 1)?;
                self.write32(i, 0, v)
            }
            ("cndmask", 32) => {
                let m = if n >= 4 {
                    self.mask_bit(i, 3)?
                } else {
                    self.vcc & 1 == 1
                };
                let v = if m {
                    self.read32(i, 2)?
                } else {
                    self.read32(i, 1)?
                };
                self.write32(i, 0, v)
            }
            ("add" | "sub" | "subrev", 32) if !ty.is_float() => {
                let (ai, bi) = if n == 4 { (2, 3) } else { (1, 2) };
                let a = self.read32(i, ai)?;
                let b = self.read32(i, bi)?;
                let (a, b) = if root == "subrev" { (b, a) } else { (a, b) };
                let (r, c) = if root == "add" {
                    a.overflowing_add(b)
                } else {
                    a.overflowing_sub(b)
                };
                if n == 4 {
                    self.write_mask(i, 1, c)?;
                }
                self.write32(i, 0, r)
            }
            ("addc" | "subb" | "subbrev", 32) if n == 5 => {
                let a = self.read32(i, 2)? as u64;
                let b = self.read32(i, 3)? as u64;
                let (a, b) = if root == "subbrev" { (b, a) } else { (a, b) };
                let cin = self.mask_bit(i, 4)? as u64;
                let r = if root == "addc" {
                    a + b + cin
                } else {
                    a.wrapping_sub(b).wrapping_sub(cin)
                };
                self.write_mask(i, 1, r >> 32 != 0)?;
                self.write32(i, 0, r as u32)
            }
            ("add" | "sub" | "subrev" | "mul" | "min" | "max", 32) if ty.is_float() => {
                let a = f32v(self.read32(i, 1)?);
                let b = f32v(self.read32(i, 2)?);
                let r = match root {
                    "add" => a + b,
                    "sub" => a - b,
                    "subrev" => b - a,
                    "mul" => a * b,
                    "min" => a.min(b),
                    _ => a.max(b),
                };
                self.write32(i, 0, r.to_bits())
            }
            ("mac", 32) if ty.is_float() => {
                let a = f32v(self.read32(i, 1)?);
                let b = f32v(self.read32(i, 2)?);
                let c = f32v(self.read32(i, 0)?);
                self.write32(i, 0, (a * b + c).to_bits())
            }
            ("mad", 32) if ty.is_float() => {
                let a = f32v(self.read32(i, 1)?);
                let b = f32v(self.read32(i, 2)?);
                let c = f32v(self.read32(i, 3)?);
                self.write32(i, 0, (a * b + c).to_bits())
            }
            ("min" | "max", 32) => {
                let a = self.read32(i, 1)?;
                let b = self.read32(i, 2)?;
                let lt = if signed {
                    (a as i32) < (b as i32)
                } else {
                    a < b
                };
                let r = if (root == "min") == lt { a } else { b };
                self.write32(i, 0, r)
            }
            ("mul_lo", 32) => {
                let r = self.read32(i, 1)?.wrapping_mul(self.read32(i, 2)?);
                self.write32(i, 0, r)
            }
            ("mul_hi", 32) if ty1.is_none() => {
                let a = self.read32(i, 1)?;
                let b = self.read32(i, 2)?;
                let r = if signed {
                    ((a as i32 as i64 * b as i32 as i64) >> 32) as u32
                } else {
                    ((a as u64 * b as u64) >> 32) as u32
                };
                self.write32(i, 0, r)
            }
            ("mul" | "mul_hi" | "mad", 32) if ty1.map(|t| t.bits) == Some(24) => {
                let ext = |v: u32| -> i64 {
                    if signed {
                        sext(v as u64 & 0xff_ffff, 24)
                    } else {
                        (v & 0xff_ffff) as i64
                    }
                };
                let p = ext(self.read32(i, 1)?) * ext(self.read32(i, 2)?);
                let r = match root {
                    "mul_hi" => (p >> 32) as u32,
                    "mul" => p as u32,
                    _ => (p as u32).wrapping_add(self.read32(i, 3)?),
                };
                self.write32(i, 0, r)
            }
            ("and" | "or" | "xor", 32) => {
                let a = self.read32(i, 1)?;
                let b = self.read32(i, 2)?;
                let r = match root {
                    "and" => a & b,
                    "or" => a | b,
                    _ => a ^ b,
                };
                self.write32(i, 0, r)
            }
            ("not", 32) => {
                let r = !self.read32(i, 1)?;
                self.write32(i, 0, r)
            }
            ("lshlrev" | "lshrrev" | "ashrrev" | "lshl" | "lshr" | "ashr", 32) => {
                let rev = root.ends_with("rev");
                let (vi, ni) = if rev { (2, 1) } else { (1, 2) };
                let a = self.read32(i, vi)?;
                let s = self.read32(i, ni)? & 31;
                let r = if root.starts_with("lshl") {
                    a << s
                } else if root.starts_with("lshr") {
                    a >> s
                } else {
                    ((a as i32) >> s) as u32
                };
                self.write32(i, 0, r)
            }
            ("lshlrev" | "lshrrev" | "ashrrev" | "lshl" | "lshr" | "ashr", 64) => {
                let rev = root.ends_with("rev");
                let (vi, ni) = if rev { (2, 1) } else { (1, 2) };
                let a = self.read64(i, vi, false)?;
                let s = self.read32(i, ni)? & 63;
                let r = if root.starts_with("lshl") {
                    a << s
                } else if root.starts_with("lshr") {
                    a >> s
                } else {
                    ((a as i64) >> s) as u64
                };
                self.write64(i, 0, r)
            }
            ("cvt", 32) if ty.is_float() => {
                let a = self.read32(i, 1)?;
                let r = match ty1 {
                    Some(t) if t == DataType::i32() => a as i32 as f32,
                    Some(t) if t == DataType::u32() => a as f32,
                    _ => return unsupported("conversion source"),
                };
                self.write32(i, 0, r.to_bits())
            }
            ("cvt", 32) => {
                if ty1 != Some(DataType::f32()) {
                    return unsupported("conversion source");
                }
                let a = f32v(self.read32(i, 1)?);
                let r = if ty.is_signed() { a as i32 as u32 } else { a as u32 };
                self.write32(i, 0, r)
            }
            _ => unsupported(format!("`{}`", i.mnemonic)),
        }
    }

    fn flat(&mut self, i: &Instruction) -> Res<()> {
        let m = i.mnemonic.as_str();
        let dwords = if m.ends_with("x2") { 2 } else { 1 };
        match m {
            "flat_load_dword" | "flat_load_dwordx2" => {
                let addr = self.read64(i, 1, false)?;
                if !self.active() {
                    return Ok(());
                }
                let v = self.mem.read(addr, 4 * dwords);
                match (self.op(i, 0)?, dwords) {
                    (Operand::Vgpr(r), 1) => self.vgpr[*r as usize] = v as u32,
                    (Operand::VgprRange(a, b), 2) if b - a == 1 => {
                        self.vgpr[*a as usize] = v as u32;
                        self.vgpr[*b as usize] = (v >> 32) as u32;
                    }
                    _ => return unsupported("load destination"),
                }
                Ok(())
            }
            "flat_store_dword" | "flat_store_dwordx2" => {
                let addr = self.read64(i, 0, false)?;
                let v = if dwords == 2 {
                    self.read64(i, 1, false)?
                } else {
                    self.read32(i, 1)? as u64
                };
                if self.active() {
                    self.mem.store(addr, 4 * dwords, v);
                }
                Ok(())
            }
            _ => unsupported(format!("`{m}`")),
        }
    }
}

fn compare_int(kind: &str, a: u64, b: u64, signed: bool, bits: u32) -> Res<bool> {
    let ord = if signed {
        sext(a, bits).cmp(&sext(b, bits))
    } else {
        (a & mask(bits)).cmp(&(b & mask(bits)))
    };
    use std::cmp::Ordering::*;
    Ok(match kind {
        "lt" => ord == Less,
        "le" => ord != Greater,
        "gt" => ord == Greater,
        "ge" => ord != Less,
        "eq" => ord == Equal,
        "ne" | "neq" | "lg" => ord != Equal,
        _ => return unsupported(format!("compare `{kind}`")),
    })
}

fn compare_float(kind: &str, a: f64, b: f64) -> Res<bool> {
    Ok(match kind {
        "lt" => a < b,
        "le" => a <= b,
        "gt" => a > b,
        "ge" => a >= b,
        "eq" => a == b,
        // Ordered not-equal: false when either side is NaN.
        #[allow(clippy::nonminimal_bool)]
        "lg" => a < b || a > b,
        "neq" | "ne" => a != b,
        _ => return unsupported(format!("compare `{kind}`")),
    })
}

/// Runs the original instruction stream for one lane and returns its
/// global-memory writes.
pub fn interpret_asm(
    instrs: &[Instruction],
    config: &KernelConfig,
    abi: &AbiMap,
    env: &Env,
) -> Res<Trace> {
    let mut labels = HashMap::new();
    for (idx, i) in instrs.iter().enumerate() {
        for l in &i.labels {
            labels.insert(l.as_str(), idx);
        }
    }
    let mut lane = Lane {
        sgpr: [0; 104],
        vgpr: [0; 256],
        vcc: 0,
        exec: 1,
        scc: false,
        m0: 0,
        mem: Memory::new(config, abi, env),
        abi,
        env,
    };
    lane.sgpr[abi.kernarg_base as usize] = env.kernarg_base as u32;
    lane.sgpr[abi.kernarg_base as usize + 1] = (env.kernarg_base >> 32) as u32;
    for (d, r) in abi.local_id_regs.iter().enumerate() {
        lane.vgpr[*r as usize] = env.local_id[d];
    }
    for (d, r) in abi.group_id_regs.iter().enumerate() {
        lane.sgpr[*r as usize] = env.group_id[d];
    }
    let mut pc = 0;
    let mut steps = 0;
    while pc < instrs.len() {
        steps += 1;
        if steps > STEP_LIMIT {
            return Err(OracleError::StepLimit);
        }
        match lane.exec_instr(&instrs[pc])? {
            Flow::Next => pc += 1,
            Flow::End => break,
            Flow::Jump(l) => {
                pc = *labels
                    .get(l.as_str())
                    .ok_or_else(|| OracleError::UnknownLabel(l.clone()))?
            }
        }
    }
    Ok(lane.mem.trace)
}

// ---------------------------------------------------------------------
// Statement-tree evaluator

fn truthy(bits: u64, ty: DataType) -> bool {
    if ty.is_float() {
        match ty.bits {
            64 => f64::from_bits(bits) != 0.0,
            _ => f32::from_bits(bits as u32) != 0.0,
        }
    } else {
        bits & mask(ty.width()) != 0
    }
}

fn int_value(bits: u64, ty: DataType) -> i128 {
    if ty.base == Base::Bool {
        return (bits & 1) as i128;
    }
    let w = ty.width();
    if ty.is_signed() && !ty.is_pointer() {
        sext(bits, w) as i128
    } else {
        (bits & mask(w)) as i128
    }
}

fn float_value(bits: u64, ty: DataType) -> f64 {
    match ty.bits {
        64 => f64::from_bits(bits),
        _ => f32::from_bits(bits as u32) as f64,
    }
}

fn from_float(v: f64, ty: DataType) -> u64 {
    match ty.bits {
        64 => v.to_bits(),
        _ => (v as f32).to_bits() as u64,
    }
}

/// C value conversion of `bits` from `from` to `to`.
fn convert(bits: u64, from: DataType, to: DataType) -> u64 {
    if from == to {
        return bits;
    }
    if to.base == Base::Bool && !to.is_pointer() {
        return truthy(bits, from) as u64;
    }
    if to.is_float() {
        if from.is_float() {
            return from_float(float_value(bits, from), to);
        }
        let v = int_value(bits, from);
        return match to.bits {
            64 => (v as f64).to_bits(),
            _ => {
                if from.is_signed() {
                    (v as i64 as f32).to_bits() as u64
                } else {
                    (v as u64 as f32).to_bits() as u64
                }
            }
        };
    }
    let v: i128 = if from.is_float() {
        let f = float_value(bits, from);
        if to.is_signed() {
            f as i64 as i128
        } else {
            f as u64 as i128
        }
    } else {
        int_value(bits, from)
    };
    (v as u64) & mask(to.width())
}

struct Eval<'a> {
    env: &'a Env,
    vars: HashMap<String, (DataType, Option<u64>)>,
    mem: Memory,
}

enum Exit {
    Normal,
    Return,
    Goto(String),
}

impl Eval<'_> {
    fn expr(&self, e: &Expr) -> Res<u64> {
        let ty = e.ty;
        Ok(match &e.kind {
            ExprKind::Const(b) => *b,
            ExprKind::Builtin(id) => self.env.builtin(*id) & mask(ty.width()),
            ExprKind::Arg(name) => match self.env.args.get(name) {
                Some(v) => *v & mask(ty.width()),
                None => return unsupported(format!("argument `{name}` has no value")),
            },
            ExprKind::Var(name) => match self.vars.get(name) {
                Some((_, Some(v))) => *v,
                // Indeterminate: arbitrary, but fixed for the run.
                Some((vty, None)) => indeterminate(self.env.mem_seed, name) & mask(vty.width()),
                None => return Err(OracleError::Undeclared(name.clone())),
            },
            ExprKind::KernargBase => self.env.kernarg_base,
            ExprKind::Unary(op, a) => {
                let v = self.expr(a)?;
                match op {
                    UnOp::LNot => !truthy(v, a.ty) as u64,
                    UnOp::Neg if ty.is_float() => from_float(-float_value(convert(v, a.ty, ty), ty), ty),
                    UnOp::Neg => convert(v, a.ty, ty).wrapping_neg() & mask(ty.width()),
                    UnOp::Not => !convert(v, a.ty, ty) & mask(ty.width()),
                }
            }
            ExprKind::Binary(op, a, b) => self.binary(*op, a, b, ty)?,
            ExprKind::Cast(a) => convert(self.expr(a)?, a.ty, ty),
            ExprKind::Bitcast(a) => self.expr(a)? & mask(ty.width()),
            ExprKind::Call(name, args) => self.call(name, args, ty)?,
            ExprKind::Ternary(c, a, b) => {
                if truthy(self.expr(c)?, c.ty) {
                    convert(self.expr(a)?, a.ty, ty)
                } else {
                    convert(self.expr(b)?, b.ty, ty)
                }
            }
            ExprKind::Deref(_) | ExprKind::Index(..) => {
                let addr = self.address(e)?;
                self.mem.read(addr, ty.byte_size())
            }
        })
    }

    /// Address of a `Deref` or `Index` lvalue.
    fn address(&self, e: &Expr) -> Res<u64> {
        match &e.kind {
            ExprKind::Deref(p) => self.expr(p),
            ExprKind::Index(base, idx) => {
                let b = self.expr(base)?;
                let i = int_value(self.expr(idx)?, idx.ty) as i64;
                let size = base.ty.element().map(|t| t.byte_size()).unwrap_or(1) as i64;
                Ok(b.wrapping_add(i.wrapping_mul(size) as u64))
            }
            _ => unsupported("not an lvalue"),
        }
    }

    fn binary(&self, op: BinOp, a: &Expr, b: &Expr, ty: DataType) -> Res<u64> {
        if op.is_logical() {
            let l = truthy(self.expr(a)?, a.ty);
            return Ok(match op {
                BinOp::LAnd => l && truthy(self.expr(b)?, b.ty),
                _ => l || truthy(self.expr(b)?, b.ty),
            } as u64);
        }
        let x = self.expr(a)?;
        let y = self.expr(b)?;
        if op.is_comparison() {
            let common = if a.ty.is_pointer() || b.ty.is_pointer() {
                DataType::u64()
            } else {
                arith_conv(a.ty, b.ty)
            };
            let (x, y) = (convert(x, a.ty, common), convert(y, b.ty, common));
            let ord = if common.is_float() {
                let (p, q) = (float_value(x, common), float_value(y, common));
                match p.partial_cmp(&q) {
                    Some(o) => o,
                    None => return Ok((op == BinOp::Ne) as u64),
                }
            } else {
                int_value(x, common).cmp(&int_value(y, common))
            };
            use std::cmp::Ordering::*;
            return Ok(match op {
                BinOp::Eq => ord == Equal,
                BinOp::Ne => ord != Equal,
                BinOp::Lt => ord == Less,
                BinOp::Le => ord != Greater,
                BinOp::Gt => ord == Greater,
                _ => ord != Less,
            } as u64);
        }
        if ty.is_pointer() {
            let (p, off, off_ty) = if a.ty.is_pointer() {
                (x, y, b.ty)
            } else {
                (y, x, a.ty)
            };
            let size = ty.element().map(|t| t.byte_size()).unwrap_or(1) as i64;
            let k = (int_value(off, off_ty) as i64).wrapping_mul(size) as u64;
            return Ok(match op {
                BinOp::Add => p.wrapping_add(k),
                BinOp::Sub => p.wrapping_sub(k),
                _ => return unsupported("pointer arithmetic"),
            });
        }
        let w = ty.width();
        if matches!(op, BinOp::Shl | BinOp::Shr) {
            let l = convert(x, a.ty, ty);
            // Shift counts wrap at the operand width.
            let n = (int_value(y, b.ty) as u64 & (w as u64 - 1)) as u32;
            return Ok(match op {
                BinOp::Shl => (l << n) & mask(w),
                _ if ty.is_signed() => (sext(l, w) >> n) as u64 & mask(w),
                _ => (l & mask(w)) >> n,
            });
        }
        let (x, y) = (convert(x, a.ty, ty), convert(y, b.ty, ty));
        if ty.is_float() {
            let (p, q) = (float_value(x, ty), float_value(y, ty));
            let r = if ty.bits == 64 {
                match op {
                    BinOp::Add => p + q,
                    BinOp::Sub => p - q,
                    BinOp::Mul => p * q,
                    BinOp::Div => p / q,
                    _ => return unsupported("float operator"),
                }
            } else {
                let (p, q) = (p as f32, q as f32);
                (match op {
                    BinOp::Add => p + q,
                    BinOp::Sub => p - q,
                    BinOp::Mul => p * q,
                    BinOp::Div => p / q,
                    _ => return unsupported("float operator"),
                }) as f64
            };
            return Ok(from_float(r, ty));
        }
        let (sx, sy) = (int_value(x, ty), int_value(y, ty));
        let r: u64 = match op {
            BinOp::Add => x.wrapping_add(y),
            BinOp::Sub => x.wrapping_sub(y),
            BinOp::Mul => x.wrapping_mul(y),
            BinOp::Div | BinOp::Rem => {
                if sy == 0 {
                    return Err(OracleError::DivisionByZero);
                }
                let r = if op == BinOp::Div { sx / sy } else { sx % sy };
                r as u64
            }
            BinOp::And => x & y,
            BinOp::Or => x | y,
            BinOp::Xor => x ^ y,
            _ => return unsupported("operator"),
        };
        Ok(r & mask(w))
    }

    fn call(&self, name: &str, args: &[crate::expr::ExprRef], ty: DataType) -> Res<u64> {
        let vals = args
            .iter()
            .map(|a| Ok(convert(self.expr(a)?, a.ty, ty)))
            .collect::<Res<Vec<u64>>>();
        match name {
            "min" | "max" => {
                let v = vals?;
                let (a, b) = (int_value(v[0], ty), int_value(v[1], ty));
                let r = if name == "min" { a.min(b) } else { a.max(b) };
                Ok(r as u64 & mask(ty.width()))
            }
            "fmin" | "fmax" => {
                let v = vals?;
                let (a, b) = (f32::from_bits(v[0] as u32), f32::from_bits(v[1] as u32));
                let r = if name == "fmin" { a.min(b) } else { a.max(b) };
                Ok(r.to_bits() as u64)
            }
            "mul_hi" => {
                let v = vals?;
                let (a, b) = (int_value(v[0], ty), int_value(v[1], ty));
                Ok(((a * b) >> ty.width()) as u64 & mask(ty.width()))
            }
            "convert_int_sat" | "convert_uint_sat" => {
                let a = &args[0];
                let f = float_value(self.expr(a)?, a.ty);
                Ok(if name == "convert_int_sat" {
                    f as i32 as u32 as u64
                } else {
                    f as u32 as u64
                })
            }
            _ => unsupported(format!("call `{name}`")),
        }
    }

    fn statement(&mut self, s: &Statement) -> Res<Exit> {
        match s {
            Statement::Decl { name, ty, init } => {
                let v = match init {
                    Some(e) => Some(convert(self.expr(e)?, e.ty, *ty)),
                    None => None,
                };
                self.vars.insert(name.clone(), (*ty, v));
            }
            Statement::Assign { name, value } => {
                let v = self.expr(value)?;
                let Some((ty, _)) = self.vars.get(name).cloned() else {
                    return Err(OracleError::Undeclared(name.clone()));
                };
                self.vars.insert(name.clone(), (ty, Some(convert(v, value.ty, ty))));
            }
            Statement::Store {
                target,
                value,
                guard,
            } => {
                if let Some(g) = guard {
                    if !truthy(self.expr(g)?, g.ty) {
                        return Ok(Exit::Normal);
                    }
                }
                let addr = self.address(target)?;
                let v = convert(self.expr(value)?, value.ty, target.ty);
                self.mem.store(addr, target.ty.byte_size(), v);
            }
            Statement::RawAsm { text, .. } => {
                return unsupported(format!("inline assembly `{text}`"));
            }
            Statement::Return => return Ok(Exit::Return),
        }
        Ok(Exit::Normal)
    }

    fn block(&mut self, stmts: &[Stmt], steps: &mut usize) -> Res<Exit> {
        let mut pc = 0;
        while pc < stmts.len() {
            *steps += 1;
            if *steps > STEP_LIMIT {
                return Err(OracleError::StepLimit);
            }
            let exit = match &stmts[pc] {
                Stmt::Simple(s) => self.statement(s)?,
                Stmt::If { cond, then_, else_ } => {
                    if truthy(self.expr(cond)?, cond.ty) {
                        self.block(then_, steps)?
                    } else {
                        self.block(else_, steps)?
                    }
                }
                Stmt::Label(_) | Stmt::Comment(_) => Exit::Normal,
                Stmt::Goto(l) => Exit::Goto(l.clone()),
                Stmt::CondGoto { cond, label } => {
                    if truthy(self.expr(cond)?, cond.ty) {
                        Exit::Goto(label.clone())
                    } else {
                        Exit::Normal
                    }
                }
            };
            match exit {
                Exit::Normal => pc += 1,
                Exit::Return => return Ok(Exit::Return),
                Exit::Goto(l) => {
                    let found = stmts
                        .iter()
                        .position(|s| matches!(s, Stmt::Label(x) if *x == l));
                    match found {
                        Some(p) => pc = p,
                        None => return Ok(Exit::Goto(l)),
                    }
                }
            }
        }
        Ok(Exit::Normal)
    }
}

/// Runs a lowered kernel body with C semantics.
pub fn evaluate_decompiled(
    lowered: &Lowered,
    config: &KernelConfig,
    abi: &AbiMap,
    env: &Env,
) -> Res<Trace> {
    let mut ev = Eval {
        env,
        vars: HashMap::new(),
        mem: Memory::new(config, abi, env),
    };
    for d in &lowered.decls {
        ev.statement(d)?;
    }
    let mut steps = 0;
    if let Exit::Goto(l) = ev.block(&lowered.body, &mut steps)? {
        return Err(OracleError::UnknownLabel(l));
    }
    Ok(ev.mem.trace)
}
