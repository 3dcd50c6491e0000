//! The AMDGPU-Pro kernel ABI: registers initialized at dispatch and the
//! offset table mapping kernarg loads to builtins and arguments.

use std::fmt;

use thiserror::Error;

use crate::asm::{ArgDecl, KernelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BuiltinKind {
    GlobalOffset,
    LocalId,
    GroupId,
    GlobalSize,
    LocalSize,
    NumGroups,
    WorkDim,
    GlobalId,
}

impl BuiltinKind {
    pub fn function_name(self) -> &'static str {
        match self {
            BuiltinKind::GlobalOffset => "get_global_offset",
            BuiltinKind::LocalId => "get_local_id",
            BuiltinKind::GroupId => "get_group_id",
            BuiltinKind::GlobalSize => "get_global_size",
            BuiltinKind::LocalSize => "get_local_size",
            BuiltinKind::NumGroups => "get_num_groups",
            BuiltinKind::WorkDim => "get_work_dim",
            BuiltinKind::GlobalId => "get_global_id",
        }
    }

    fn from_short_name(name: &str) -> Option<BuiltinKind> {
        Some(match name {
            "global_offset" => BuiltinKind::GlobalOffset,
            "local_id" => BuiltinKind::LocalId,
            "group_id" => BuiltinKind::GroupId,
            "global_size" => BuiltinKind::GlobalSize,
            "local_size" => BuiltinKind::LocalSize,
            "num_groups" => BuiltinKind::NumGroups,
            "work_dim" => BuiltinKind::WorkDim,
            "global_id" => BuiltinKind::GlobalId,
            _ => return None,
        })
    }
}

/// A work-item builtin call such as `get_global_id(0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BuiltinId {
    pub kind: BuiltinKind,
    /// `None` only for `get_work_dim`.
    pub dim: Option<u8>,
}

impl BuiltinId {
    pub fn new(kind: BuiltinKind, dim: u8) -> BuiltinId {
        BuiltinId {
            kind,
            dim: Some(dim),
        }
    }

    pub fn work_dim() -> BuiltinId {
        BuiltinId {
            kind: BuiltinKind::WorkDim,
            dim: None,
        }
    }

    /// Parses `global_size(0)` or `work_dim`.
    pub fn parse(text: &str) -> Option<BuiltinId> {
        let text = text.trim();
        let text = text.strip_prefix("get_").unwrap_or(text);
        match text.split_once('(') {
            Some((name, rest)) => {
                let dim: u8 = rest.strip_suffix(')')?.trim().parse().ok()?;
                let kind = BuiltinKind::from_short_name(name.trim())?;
                (dim < 3 && kind != BuiltinKind::WorkDim).then_some(BuiltinId::new(kind, dim))
            }
            None => {
                let name = text.strip_suffix("()").unwrap_or(text);
                (BuiltinKind::from_short_name(name)? == BuiltinKind::WorkDim)
                    .then_some(BuiltinId::work_dim())
            }
        }
    }
}

impl fmt::Display for BuiltinId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dim {
            Some(d) => write!(f, "{}({d})", self.kind.function_name()),
            None => write!(f, "{}()", self.kind.function_name()),
        }
    }
}

/// The two ways the kernarg base pair is addressed. 32-bit loads at the
/// settings offsets read dispatch settings; everything else reads the
/// argument block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum View {
    Kernarg,
    Settings,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SlotTarget {
    Builtin(BuiltinId),
    /// Index into `KernelConfig::args`.
    Arg(usize),
    /// Occupies layout space but is never decompiled.
    Reserved(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbiEntry {
    pub view: View,
    pub offset: u32,
    pub size: u32,
    pub target: SlotTarget,
}

/// Which part of a table entry a load covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Entire,
    Low,
    High,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbiHit<'a> {
    pub entry: &'a AbiEntry,
    pub part: Part,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AbiError {
    #[error("{view:?} offsets overlap: {first} at {a:#x} and {second} at {b:#x}")]
    Overlap {
        view: View,
        first: String,
        a: u32,
        second: String,
        b: u32,
    },
    #[error("line {line}: invalid ABI override `{text}`")]
    BadOverride { line: usize, text: String },
}

/// Size of the implicit-argument block used when the listing declares none.
pub const DEFAULT_IMPLICIT_BLOCK: u32 = 0x30;

pub const SETTINGS_GLOBAL_SIZE: [u32; 3] = [0xc, 0x10, 0x14];
pub const SETTINGS_WORK_DIM: u32 = 0x20010;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbiMap {
    /// Low register of the kernarg base pair, `s[4:5]`.
    pub kernarg_base: u16,
    pub local_id_regs: Vec<u16>,
    pub group_id_regs: Vec<u16>,
    pub entries: Vec<AbiEntry>,
}

/// In-memory size of a kernel argument.
pub fn arg_size(arg: &ArgDecl) -> u32 {
    if let Some(ty) = arg.ocl_type {
        return ty.byte_size().max(1);
    }
    let t = arg.type_text.trim();
    if t.ends_with('*') {
        return 8;
    }
    let split = t.find(|c: char| c.is_ascii_digit()).unwrap_or(t.len());
    let (scalar, lanes) = t.split_at(split);
    let elem = match scalar {
        "char" | "uchar" => 1,
        "short" | "ushort" | "half" => 2,
        "long" | "ulong" | "double" | "size_t" => 8,
        _ => 4,
    };
    let lanes: u32 = lanes.parse().unwrap_or(1);
    let lanes = if lanes == 3 { 4 } else { lanes.max(1) };
    elem * lanes
}

fn align_up(v: u32, a: u32) -> u32 {
    v.div_ceil(a) * a
}

fn implicit_target(name: &str) -> SlotTarget {
    if let Some(d) = name.strip_prefix("_global_offset_") {
        if let Ok(d) = d.parse::<u8>() {
            if d < 3 {
                return SlotTarget::Builtin(BuiltinId::new(BuiltinKind::GlobalOffset, d));
            }
        }
    }
    SlotTarget::Reserved(name.to_string())
}

impl AbiMap {
    pub fn build(config: &KernelConfig) -> Result<AbiMap, AbiError> {
        let dims = config.dim_count().max(1);
        let mut entries = Vec::new();
        let mut offset = 0u32;
        if !config.args.iter().any(|a| a.implicit) {
            for d in 0..3u8 {
                entries.push(AbiEntry {
                    view: View::Kernarg,
                    offset: 8 * d as u32,
                    size: 8,
                    target: SlotTarget::Builtin(BuiltinId::new(BuiltinKind::GlobalOffset, d)),
                });
            }
            for (i, name) in ["_printf_buffer", "_vqueue_pointer", "_aqlwrap_pointer"]
                .iter()
                .enumerate()
            {
                entries.push(AbiEntry {
                    view: View::Kernarg,
                    offset: 0x18 + 8 * i as u32,
                    size: 8,
                    target: SlotTarget::Reserved(name.to_string()),
                });
            }
            offset = DEFAULT_IMPLICIT_BLOCK;
        }
        for (idx, arg) in config.args.iter().enumerate() {
            let size = arg_size(arg);
            offset = align_up(offset, size.min(16));
            let target = if arg.implicit {
                implicit_target(&arg.name)
            } else {
                SlotTarget::Arg(idx)
            };
            entries.push(AbiEntry {
                view: View::Kernarg,
                offset,
                size,
                target,
            });
            offset += size;
        }
        for (d, off) in SETTINGS_GLOBAL_SIZE.iter().enumerate() {
            entries.push(AbiEntry {
                view: View::Settings,
                offset: *off,
                size: 4,
                target: SlotTarget::Builtin(BuiltinId::new(BuiltinKind::GlobalSize, d as u8)),
            });
        }
        entries.push(AbiEntry {
            view: View::Settings,
            offset: SETTINGS_WORK_DIM,
            size: 4,
            target: SlotTarget::Builtin(BuiltinId::work_dim()),
        });
        let map = AbiMap {
            kernarg_base: 4,
            local_id_regs: (0..dims as u16).collect(),
            group_id_regs: if config.uses_args {
                (6..6 + dims as u16).collect()
            } else {
                Vec::new()
            },
            entries,
        };
        map.check(config)?;
        Ok(map)
    }

    fn describe(&self, e: &AbiEntry, config: &KernelConfig) -> String {
        match &e.target {
            SlotTarget::Builtin(b) => b.to_string(),
            SlotTarget::Arg(i) => config.args[*i].name.clone(),
            SlotTarget::Reserved(n) => n.clone(),
        }
    }

    fn check(&self, config: &KernelConfig) -> Result<(), AbiError> {
        for view in [View::Kernarg, View::Settings] {
            let mut es: Vec<&AbiEntry> = self.entries.iter().filter(|e| e.view == view).collect();
            es.sort_by_key(|e| e.offset);
            for w in es.windows(2) {
                if w[0].offset + w[0].size > w[1].offset {
                    return Err(AbiError::Overlap {
                        view,
                        first: self.describe(w[0], config),
                        a: w[0].offset,
                        second: self.describe(w[1], config),
                        b: w[1].offset,
                    });
                }
            }
        }
        Ok(())
    }

    /// Applies `view:offset = target` lines, e.g.
    /// `settings:0xc = global_size(0)` or `kernarg:0x8 = none`.
    pub fn apply_overrides(&mut self, text: &str, config: &KernelConfig) -> Result<(), AbiError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || AbiError::BadOverride {
                line: i + 1,
                text: raw.trim().to_string(),
            };
            let (key, value) = line.split_once('=').ok_or_else(bad)?;
            let (view, off) = key.trim().split_once(':').ok_or_else(bad)?;
            let view = match view.trim() {
                "kernarg" => View::Kernarg,
                "settings" => View::Settings,
                _ => return Err(bad()),
            };
            let off = off.trim();
            let offset = match off.strip_prefix("0x") {
                Some(h) => u32::from_str_radix(h, 16).ok(),
                None => off.parse().ok(),
            }
            .ok_or_else(bad)?;
            self.entries
                .retain(|e| !(e.view == view && e.offset == offset));
            let value = value.trim();
            if value == "none" {
                continue;
            }
            let builtin = BuiltinId::parse(value).ok_or_else(bad)?;
            let size = match (view, builtin.kind) {
                (View::Settings, _) | (_, BuiltinKind::WorkDim) => 4,
                _ => 8,
            };
            self.entries.push(AbiEntry {
                view,
                offset,
                size,
                target: SlotTarget::Builtin(builtin),
            });
        }
        self.check(config)
    }

    /// Resolves a 32-bit load at `offset`: the settings view first, then
    /// the argument block.
    pub fn lookup_dword(&self, offset: u32) -> Option<AbiHit<'_>> {
        self.entries
            .iter()
            .find(|e| e.view == View::Settings && e.offset == offset)
            .map(|entry| AbiHit {
                entry,
                part: Part::Entire,
            })
            .or_else(|| self.lookup_kernarg_dword(offset))
    }

    /// Resolves a 32-bit load inside the argument block only.
    pub fn lookup_kernarg_dword(&self, offset: u32) -> Option<AbiHit<'_>> {
        self.entries
            .iter()
            .filter(|e| e.view == View::Kernarg)
            .find_map(|entry| {
                let part = match (entry.size, offset.checked_sub(entry.offset)?) {
                    (4, 0) => Part::Entire,
                    (8, 0) => Part::Low,
                    (8, 4) => Part::High,
                    _ => return None,
                };
                Some(AbiHit { entry, part })
            })
    }

    /// Resolves a 64-bit load; only whole 8-byte entries match.
    pub fn lookup_qword(&self, offset: u32) -> Option<AbiHit<'_>> {
        self.entries
            .iter()
            .find(|e| e.view == View::Kernarg && e.offset == offset && e.size == 8)
            .map(|entry| AbiHit {
                entry,
                part: Part::Entire,
            })
    }

    /// Byte offset of the named explicit argument.
    pub fn arg_offset(&self, config: &KernelConfig, name: &str) -> Option<u32> {
        self.entries.iter().find_map(|e| match e.target {
            SlotTarget::Arg(i) if config.args[i].name == name => Some(e.offset),
            _ => None,
        })
    }
}

/// The constant the compiler substitutes for `get_local_size(dim)`.
pub fn local_size(config: &KernelConfig, dim: usize) -> u32 {
    config.cws.get(dim).copied().unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{parse_config, SourceLine};

    fn config(text: &str) -> KernelConfig {
        let lines: Vec<SourceLine> = text
            .lines()
            .enumerate()
            .map(|(i, t)| SourceLine {
                number: i + 1,
                text: t.to_string(),
            })
            .collect();
        parse_config(&lines).unwrap()
    }

    pub(crate) const DATA_X_ARGS: &str = ".dims x\n.cws 64, 1, 1\n.useargs\n.arg _global_offset_0, \"size_t\", long\n.arg _global_offset_1, \"size_t\", long\n.arg _global_offset_2, \"size_t\", long\n.arg _printf_buffer, \"size_t\", void*, global, , ronly\n.arg _vqueue_pointer, \"size_t\", long\n.arg _aqlwrap_pointer, \"size_t\", long\n.arg data, \"int*\", int*, global,\n.arg x, \"int\", int\n";

    fn builtin_at(abi: &AbiMap, off: u32) -> Option<BuiltinId> {
        match abi.lookup_dword(off).map(|h| h.entry.target.clone()) {
            Some(SlotTarget::Builtin(b)) => Some(b),
            _ => None,
        }
    }

    #[test]
    fn fixed_offsets() {
        for cfg in [config(".dims x"), config(DATA_X_ARGS)] {
            let abi = AbiMap::build(&cfg).unwrap();
            assert_eq!(
                abi.lookup_qword(0).unwrap().entry.target,
                SlotTarget::Builtin(BuiltinId::new(BuiltinKind::GlobalOffset, 0))
            );
            for d in 0..3u8 {
                assert_eq!(
                    builtin_at(&abi, SETTINGS_GLOBAL_SIZE[d as usize]),
                    Some(BuiltinId::new(BuiltinKind::GlobalSize, d))
                );
            }
            assert_eq!(builtin_at(&abi, 0x20010), Some(BuiltinId::work_dim()));
        }
    }

    #[test]
    fn global_offset_slots_follow_listing_layout() {
        let abi = AbiMap::build(&config(DATA_X_ARGS)).unwrap();
        for d in 0..3u8 {
            assert_eq!(
                abi.lookup_qword(8 * d as u32).unwrap().entry.target,
                SlotTarget::Builtin(BuiltinId::new(BuiltinKind::GlobalOffset, d))
            );
        }
    }

    // Offset accumulator written independently of AbiMap::build: every
    // argument of DATA_X_ARGS is 8 bytes except the trailing int.
    #[test]
    fn explicit_args_after_implicit_block() {
        let cfg = config(DATA_X_ARGS);
        let abi = AbiMap::build(&cfg).unwrap();
        let sizes = [8u32, 8, 8, 8, 8, 8, 8, 4];
        let mut expected = Vec::new();
        let mut acc = 0u32;
        for s in sizes {
            while acc % s != 0 {
                acc += 1;
            }
            expected.push(acc);
            acc += s;
        }
        assert_eq!(abi.arg_offset(&cfg, "data"), Some(expected[6]));
        assert_eq!(abi.arg_offset(&cfg, "x"), Some(expected[7]));
        assert_eq!(expected[6], 0x30);
        assert_eq!(expected[7], 0x38);
    }

    #[test]
    fn args_without_implicit_block_use_default_layout() {
        let cfg = config(".arg a, \"float*\", float*, global\n.arg n, \"int\", int\n.arg b, \"float*\", float*, global");
        let abi = AbiMap::build(&cfg).unwrap();
        assert_eq!(abi.arg_offset(&cfg, "a"), Some(0x30));
        assert_eq!(abi.arg_offset(&cfg, "n"), Some(0x38));
        assert_eq!(abi.arg_offset(&cfg, "b"), Some(0x40));
    }

    #[test]
    fn register_sets_follow_dims() {
        let abi = AbiMap::build(&config(".dims x\n.useargs")).unwrap();
        assert_eq!(abi.local_id_regs, vec![0]);
        assert_eq!(abi.group_id_regs, vec![6]);
        let abi = AbiMap::build(&config(".dims xyz\n.useargs")).unwrap();
        assert_eq!(abi.group_id_regs, vec![6, 7, 8]);
        let abi = AbiMap::build(&config(".dims x")).unwrap();
        assert!(abi.group_id_regs.is_empty());
    }

    #[test]
    fn kernarg_halves() {
        let cfg = config(DATA_X_ARGS);
        let abi = AbiMap::build(&cfg).unwrap();
        let hit = abi.lookup_dword(0x34).unwrap();
        assert_eq!(hit.part, Part::High);
        assert_eq!(hit.entry.target, SlotTarget::Arg(6));
        assert_eq!(abi.lookup_dword(0x38).unwrap().part, Part::Entire);
        // 0x10 as a dword hits the settings view, as a qword the arg block
        assert_eq!(
            builtin_at(&abi, 0x10),
            Some(BuiltinId::new(BuiltinKind::GlobalSize, 1))
        );
    }

    #[test]
    fn overrides() {
        let cfg = config(".dims x");
        let mut abi = AbiMap::build(&cfg).unwrap();
        abi.apply_overrides("# comment\nsettings:0x18 = local_size(0)\n", &cfg)
            .unwrap();
        assert_eq!(
            builtin_at(&abi, 0x18),
            Some(BuiltinId::new(BuiltinKind::LocalSize, 0))
        );
        assert!(matches!(
            abi.apply_overrides("settings:0xe = global_size(0)", &cfg),
            Err(AbiError::Overlap { .. })
        ));
        let mut abi = AbiMap::build(&cfg).unwrap();
        assert!(matches!(
            abi.apply_overrides("bogus", &cfg),
            Err(AbiError::BadOverride { line: 1, .. })
        ));
    }

    #[test]
    fn local_size_is_cws() {
        assert_eq!(local_size(&config(".cws 8, 8, 2"), 0), 8);
        assert_eq!(local_size(&config(".cws 64, 1, 1"), 1), 1);
        assert_eq!(local_size(&config(".dims x"), 2), 1);
    }

    #[test]
    fn builtin_parse_roundtrip() {
        assert_eq!(
            BuiltinId::parse("global_size(2)"),
            Some(BuiltinId::new(BuiltinKind::GlobalSize, 2))
        );
        assert_eq!(BuiltinId::parse("work_dim"), Some(BuiltinId::work_dim()));
        assert_eq!(BuiltinId::parse("work_dim(0)"), None);
        assert_eq!(
            BuiltinId::new(BuiltinKind::GlobalId, 1).to_string(),
            "get_global_id(1)"
        );
    }
}
