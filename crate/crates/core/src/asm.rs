//! Listing frontend: kernel extraction, `.config` parsing and instruction
//! parsing for CLRX / CodeXL style GCN disassembly.

use std::fmt;

use thiserror::Error;

use crate::diag::Diagnostic;
use crate::types::{parse_ocl_type, AddressSpace, DataType};

/// Highest addressable scalar register index.
pub const MAX_SGPR: u16 = 103;
/// Highest addressable vector register index.
pub const MAX_VGPR: u16 = 255;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceLine {
    /// 1-based line number in the input file.
    pub number: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelSection {
    pub name: String,
    pub name_line: usize,
    pub config_lines: Vec<SourceLine>,
    pub text_lines: Vec<SourceLine>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("line {line}: `.text` without a preceding `.kernel`")]
    TextWithoutKernel { line: usize },
    #[error("line {line}: `.kernel` directive without a name")]
    MissingKernelName { line: usize },
}

/// Which part of the listing a line belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineClass {
    Preamble,
    KernelHeader,
    Config,
    Text,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Start,
    Kernel,
    Config,
    Text,
}

fn is_kernel_directive(first: &str) -> bool {
    first == ".kernel" || first == "kernel"
}

/// Assigns every input line to exactly one part of the listing.
pub fn classify_lines(listing: &str) -> Result<Vec<LineClass>, FormatError> {
    let mut out = Vec::new();
    let mut status = Status::Start;
    for (idx, raw) in listing.lines().enumerate() {
        let line = raw.trim();
        let first = line.split_whitespace().next().unwrap_or("");
        if is_kernel_directive(first) {
            if line.split_whitespace().nth(1).is_none() {
                return Err(FormatError::MissingKernelName { line: idx + 1 });
            }
            status = Status::Kernel;
            out.push(LineClass::KernelHeader);
            continue;
        }
        if line == ".config" {
            if status == Status::Start {
                out.push(LineClass::Preamble);
                continue;
            }
            status = Status::Config;
            out.push(LineClass::KernelHeader);
            continue;
        }
        if line == ".text" {
            if status == Status::Start {
                return Err(FormatError::TextWithoutKernel { line: idx + 1 });
            }
            status = Status::Text;
            out.push(LineClass::KernelHeader);
            continue;
        }
        out.push(match status {
            Status::Start => LineClass::Preamble,
            Status::Kernel => LineClass::KernelHeader,
            Status::Config => LineClass::Config,
            Status::Text => LineClass::Text,
        });
    }
    Ok(out)
}

/// Splits a listing into one section per `.kernel` directive.
///
/// Lines between `.config` and `.text` become configuration lines, lines
/// after `.text` up to the next `.kernel` become text lines. Anything
/// before the first kernel is ignored. Blank lines are dropped and
/// trailing whitespace is trimmed.
pub fn split_kernels(listing: &str) -> Result<Vec<KernelSection>, FormatError> {
    let classes = classify_lines(listing)?;
    let mut sections: Vec<KernelSection> = Vec::new();
    for ((idx, raw), class) in listing.lines().enumerate().zip(classes) {
        let number = idx + 1;
        let text = raw.trim_end();
        let trimmed = text.trim();
        let first = trimmed.split_whitespace().next().unwrap_or("");
        match class {
            LineClass::Preamble => {}
            LineClass::KernelHeader => {
                if is_kernel_directive(first) {
                    let name = trimmed.split_whitespace().nth(1).unwrap_or_default();
                    sections.push(KernelSection {
                        name: name.to_string(),
                        name_line: number,
                        config_lines: Vec::new(),
                        text_lines: Vec::new(),
                    });
                }
            }
            LineClass::Config | LineClass::Text if trimmed.is_empty() => {}
            LineClass::Config => {
                let cur = sections.last_mut().expect("config line inside a kernel");
                cur.config_lines.push(SourceLine {
                    number,
                    text: text.to_string(),
                });
            }
            LineClass::Text => {
                let cur = sections.last_mut().expect("text line inside a kernel");
                cur.text_lines.push(SourceLine {
                    number,
                    text: text.to_string(),
                });
            }
        }
    }
    Ok(sections)
}

/// Where a kernel argument lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArgSpace {
    Global,
    Constant,
    Local,
    Private,
    ByValue,
}

impl ArgSpace {
    pub fn address_space(self) -> Option<AddressSpace> {
        match self {
            ArgSpace::Global => Some(AddressSpace::Global),
            ArgSpace::Constant => Some(AddressSpace::Constant),
            ArgSpace::Local => Some(AddressSpace::Local),
            ArgSpace::Private => Some(AddressSpace::Private),
            ArgSpace::ByValue => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArgDecl {
    pub name: String,
    /// The quoted type name, e.g. `int*`.
    pub source_type: String,
    /// The argument type field as written, e.g. `int*` or `long`.
    pub type_text: String,
    pub ocl_type: Option<DataType>,
    pub address_space: ArgSpace,
    /// Compiler-inserted argument (name starts with `_`).
    pub implicit: bool,
    /// Remaining qualifier fields (`const`, `restrict`, `volatile`, ...).
    pub qualifiers: Vec<String>,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelConfig {
    pub dims: [bool; 3],
    pub cws: [u32; 3],
    /// Whether `.cws` appeared at all.
    pub cws_declared: bool,
    pub sgprsnum: Option<u32>,
    pub vgprsnum: Option<u32>,
    pub uses_args: bool,
    pub args: Vec<ArgDecl>,
    pub raw_other: Vec<String>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            dims: [true, false, false],
            cws: [1, 1, 1],
            cws_declared: false,
            sgprsnum: None,
            vgprsnum: None,
            uses_args: false,
            args: Vec::new(),
            raw_other: Vec::new(),
        }
    }
}

impl KernelConfig {
    pub fn dim_count(&self) -> usize {
        self.dims.iter().filter(|d| **d).count()
    }

    pub fn explicit_args(&self) -> impl Iterator<Item = &ArgDecl> {
        self.args.iter().filter(|a| !a.implicit)
    }

    pub fn work_group_items(&self) -> u64 {
        self.cws.iter().map(|c| *c as u64).product()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: malformed .arg directive `{text}`")]
    MalformedArg { line: usize, text: String },
    #[error("line {line}: invalid `{text}`: {reason}")]
    BadDirective {
        line: usize,
        text: String,
        reason: String,
    },
}

fn parse_uint(text: &str) -> Option<u64> {
    let t = text.trim();
    if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()
    } else {
        t.parse().ok()
    }
}

pub fn parse_config(lines: &[SourceLine]) -> Result<KernelConfig, ConfigError> {
    let mut cfg = KernelConfig::default();
    for line in lines {
        let text = strip_comment(&line.text);
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let (head, rest) = match text.find(char::is_whitespace) {
            Some(pos) => (&text[..pos], text[pos..].trim()),
            None => (text, ""),
        };
        let bad = |reason: &str| ConfigError::BadDirective {
            line: line.number,
            text: text.to_string(),
            reason: reason.to_string(),
        };
        match head.trim_start_matches('.') {
            "dims" => {
                let mut dims = [false; 3];
                for c in rest.chars() {
                    match c {
                        'x' => dims[0] = true,
                        'y' => dims[1] = true,
                        'z' => dims[2] = true,
                        c if c.is_whitespace() || c == ',' => {}
                        _ => return Err(bad("dimensions must be drawn from x, y, z")),
                    }
                }
                if dims == [false; 3] {
                    return Err(bad("no dimensions given"));
                }
                cfg.dims = dims;
            }
            "cws" | "reqd_work_group_size" => {
                let mut cws = [1u32; 3];
                let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
                if parts.len() > 3 || parts.iter().all(|p| p.is_empty()) {
                    return Err(bad("expected up to three sizes"));
                }
                for (slot, part) in cws.iter_mut().zip(&parts) {
                    if part.is_empty() {
                        continue;
                    }
                    match parse_uint(part) {
                        Some(v) if v >= 1 && v <= u32::MAX as u64 => *slot = v as u32,
                        _ => return Err(bad("work-group sizes must be positive integers")),
                    }
                }
                cfg.cws = cws;
                cfg.cws_declared = true;
            }
            "sgprsnum" | "sgprnum" => {
                cfg.sgprsnum = Some(parse_uint(rest).ok_or_else(|| bad("expected a count"))? as u32)
            }
            "vgprsnum" | "vgprnum" => {
                cfg.vgprsnum = Some(parse_uint(rest).ok_or_else(|| bad("expected a count"))? as u32)
            }
            "useargs" => cfg.uses_args = true,
            "arg" if head.starts_with('.') => cfg.args.push(parse_arg(line.number, text, rest)?),
            _ => cfg.raw_other.push(text.to_string()),
        }
    }
    Ok(cfg)
}

fn parse_arg(line: usize, text: &str, rest: &str) -> Result<ArgDecl, ConfigError> {
    let malformed = || ConfigError::MalformedArg {
        line,
        text: text.to_string(),
    };
    let fields: Vec<&str> = rest.split(',').map(str::trim).collect();
    if fields.len() < 3 || fields[0].is_empty() {
        return Err(malformed());
    }
    let name = fields[0].to_string();
    let (source_type, type_idx) = match fields[1].strip_prefix('"') {
        Some(q) => (q.strip_suffix('"').ok_or_else(malformed)?.to_string(), 2),
        None => (fields[1].to_string(), 1),
    };
    let type_text = fields[type_idx].to_string();
    if type_text.is_empty() {
        return Err(malformed());
    }
    let mut rest_fields = fields[type_idx + 1..].iter().copied();
    let is_pointer = type_text.ends_with('*');
    let address_space = if is_pointer {
        match rest_fields.next().unwrap_or("") {
            "" | "global" => ArgSpace::Global,
            "constant" => ArgSpace::Constant,
            "local" => ArgSpace::Local,
            "private" => ArgSpace::Private,
            _ => return Err(malformed()),
        }
    } else {
        ArgSpace::ByValue
    };
    let qualifiers = rest_fields
        .filter(|f| !f.is_empty())
        .map(str::to_string)
        .collect();
    let ocl_type = parse_ocl_type(&type_text, address_space.address_space());
    Ok(ArgDecl {
        implicit: name.starts_with('_'),
        name,
        source_type,
        type_text,
        ocl_type,
        address_space,
        qualifiers,
        line,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Prefix {
    S,
    V,
    Ds,
    Flat,
    Other,
}

impl Prefix {
    pub fn as_str(self) -> &'static str {
        match self {
            Prefix::S => "s",
            Prefix::V => "v",
            Prefix::Ds => "ds",
            Prefix::Flat => "flat",
            Prefix::Other => "",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SuffixKind {
    I,
    U,
    F,
    B,
}

/// A data-type suffix such as `u32` or `f64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TypeSuffix {
    pub kind: SuffixKind,
    pub bits: u8,
}

impl TypeSuffix {
    pub fn parse(token: &str) -> Option<TypeSuffix> {
        let mut chars = token.chars();
        let kind = match chars.next()? {
            'i' => SuffixKind::I,
            'u' => SuffixKind::U,
            'f' => SuffixKind::F,
            'b' => SuffixKind::B,
            _ => return None,
        };
        let bits = match chars.as_str() {
            "8" => 8,
            "16" => 16,
            "24" => 24,
            "32" => 32,
            "64" => 64,
            _ => return None,
        };
        Some(TypeSuffix { kind, bits })
    }
}

impl fmt::Display for TypeSuffix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.kind {
            SuffixKind::I => 'i',
            SuffixKind::U => 'u',
            SuffixKind::F => 'f',
            SuffixKind::B => 'b',
        };
        write!(f, "{c}{}", self.bits)
    }
}

/// Splits a lowercase mnemonic into prefix, root and up to two suffixes.
pub fn decompose_mnemonic(name: &str) -> (Prefix, String, Vec<TypeSuffix>) {
    let tokens: Vec<&str> = name.split('_').collect();
    let prefix = match tokens[0] {
        "s" => Prefix::S,
        "v" => Prefix::V,
        "ds" => Prefix::Ds,
        "flat" => Prefix::Flat,
        _ => return (Prefix::Other, name.to_string(), Vec::new()),
    };
    if tokens.len() < 2 || tokens[1..].iter().any(|t| t.is_empty()) {
        return (Prefix::Other, name.to_string(), Vec::new());
    }
    let body = &tokens[1..];
    let mut n_suffix = 0;
    while n_suffix < 2
        && body.len() > n_suffix + 1
        && TypeSuffix::parse(body[body.len() - 1 - n_suffix]).is_some()
    {
        n_suffix += 1;
    }
    let split = body.len() - n_suffix;
    let root = body[..split].join("_");
    let suffixes = body[split..]
        .iter()
        .map(|t| TypeSuffix::parse(t).expect("checked above"))
        .collect();
    (prefix, root, suffixes)
}

/// Inverse of [`decompose_mnemonic`].
pub fn compose_mnemonic(prefix: Prefix, root: &str, suffixes: &[TypeSuffix]) -> String {
    let mut out = String::new();
    if prefix != Prefix::Other {
        out.push_str(prefix.as_str());
        out.push('_');
    }
    out.push_str(root);
    for s in suffixes {
        out.push('_');
        out.push_str(&s.to_string());
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SpecialReg {
    Exec,
    ExecLo,
    ExecHi,
    Vcc,
    VccLo,
    VccHi,
    Scc,
    M0,
    Other(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Operand {
    Sgpr(u16),
    Vgpr(u16),
    /// Inclusive range `s[first:last]`.
    SgprRange(u16, u16),
    VgprRange(u16, u16),
    Special(SpecialReg),
    Int(i64),
    Float(f64),
    Label(String),
    /// Opaque operand text such as `lgkmcnt(0)` or `abs(v1)`.
    Expr(String),
}

impl Operand {
    pub fn as_label(&self) -> Option<&str> {
        match self {
            Operand::Label(l) => Some(l),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instruction {
    pub mnemonic: String,
    pub prefix: Prefix,
    pub root: String,
    pub suffixes: Vec<TypeSuffix>,
    pub operands: Vec<Operand>,
    /// Trailing modifiers such as `glc` or `offset:16`.
    pub modifiers: Vec<String>,
    /// Labels defined at this instruction.
    pub labels: Vec<String>,
    pub source_text: String,
    pub line: usize,
    /// Operand syntax could not be parsed; the line is carried verbatim.
    pub opaque: bool,
    /// Inserted by control-flow normalization, not present in the input.
    pub synthetic: bool,
}

impl Instruction {
    /// Fallback for lines whose operands could not be parsed.
    pub fn opaque(line: usize, source_text: &str) -> Instruction {
        let mnemonic = source_text
            .split_whitespace()
            .next()
            .unwrap_or("")
            .to_ascii_lowercase();
        Instruction {
            root: mnemonic.clone(),
            mnemonic,
            prefix: Prefix::Other,
            suffixes: Vec::new(),
            operands: Vec::new(),
            modifiers: Vec::new(),
            labels: Vec::new(),
            source_text: source_text.to_string(),
            line,
            opaque: true,
            synthetic: false,
        }
    }

    /// Builds an instruction from generated text (used for synthetic
    /// branches inserted by normalization).
    pub fn synthetic(text: &str, line: usize) -> Instruction {
        match parse_instruction(text, line) {
            Ok(ParsedLine::Instruction(mut i)) => {
                i.synthetic = true;
                i
            }
            _ => panic!("synthetic instruction `{text}` must parse"),
        }
    }

    pub fn suffix(&self, idx: usize) -> Option<TypeSuffix> {
        self.suffixes.get(idx).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParsedLine {
    Ignorable,
    Label(String),
    Instruction(Instruction),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: cannot parse `{source_text}`: {message}")]
pub struct InstrParseError {
    pub line: usize,
    pub source_text: String,
    pub message: String,
}

/// Removes `/* */`, `//`, `#` and `;` comments.
pub fn strip_comment(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut rest = line;
    while let Some(start) = rest.find("/*") {
        out.push_str(&rest[..start]);
        match rest[start + 2..].find("*/") {
            Some(end) => {
                out.push(' ');
                rest = &rest[start + 2 + end + 2..];
            }
            None => {
                rest = "";
            }
        }
    }
    out.push_str(rest);
    let cut = ["//", "#", ";"]
        .iter()
        .filter_map(|m| out.find(m))
        .min()
        .unwrap_or(out.len());
    out.truncate(cut);
    out
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with(|c: char| c.is_ascii_digit())
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$')
}

/// Classifies one `.text` line.
pub fn parse_instruction(line: &str, line_no: usize) -> Result<ParsedLine, InstrParseError> {
    let source_text = line.trim().to_string();
    let code = strip_comment(line);
    let mut code = code.trim();
    if code.is_empty() {
        return Ok(ParsedLine::Ignorable);
    }
    let mut labels = Vec::new();
    while let Some(pos) = code.find(':') {
        let name = code[..pos].trim();
        if !is_identifier(name) || name.contains(char::is_whitespace) {
            break;
        }
        labels.push(name.to_string());
        code = code[pos + 1..].trim();
    }
    if code.is_empty() {
        return Ok(match labels.len() {
            0 => ParsedLine::Ignorable,
            1 => ParsedLine::Label(labels.remove(0)),
            // several labels on one line: keep the first, the rest alias it
            _ => ParsedLine::Label(labels.remove(0)),
        });
    }
    if code.starts_with('.') {
        return Ok(ParsedLine::Ignorable);
    }
    let err = |message: String| InstrParseError {
        line: line_no,
        source_text: source_text.clone(),
        message,
    };
    let (mnemonic, operand_text) = match code.find(char::is_whitespace) {
        Some(pos) => (&code[..pos], code[pos..].trim()),
        None => (code, ""),
    };
    let mnemonic = mnemonic.to_ascii_lowercase();
    if !mnemonic
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || c == '_')
    {
        return Err(err(format!("invalid mnemonic `{mnemonic}`")));
    }
    let (prefix, root, suffixes) = decompose_mnemonic(&mnemonic);
    let (operands, modifiers) = if mnemonic == "s_waitcnt" {
        let ops = if operand_text.is_empty() {
            Vec::new()
        } else {
            vec![Operand::Expr(operand_text.to_string())]
        };
        (ops, Vec::new())
    } else {
        parse_operands(operand_text).map_err(err)?
    };
    Ok(ParsedLine::Instruction(Instruction {
        mnemonic,
        prefix,
        root,
        suffixes,
        operands,
        modifiers,
        labels,
        source_text,
        line: line_no,
        opaque: false,
        synthetic: false,
    }))
}

fn split_top_level(text: &str, sep: impl Fn(char) -> bool) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            c if depth == 0 && sep(c) => {
                parts.push(&text[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    parts.push(&text[start..]);
    parts
}

fn parse_operands(text: &str) -> Result<(Vec<Operand>, Vec<String>), String> {
    if text.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut parts: Vec<String> = split_top_level(text, |c| c == ',')
        .into_iter()
        .map(|p| p.trim().to_string())
        .collect();
    let mut modifiers = Vec::new();
    let last = parts.pop().unwrap_or_default();
    let mut tail = split_top_level(&last, char::is_whitespace)
        .into_iter()
        .filter(|t| !t.is_empty());
    let last_op = tail.next().unwrap_or("").to_string();
    modifiers.extend(tail.map(str::to_string));
    parts.push(last_op);
    let operands = parts
        .iter()
        .map(|p| parse_operand(p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((operands, modifiers))
}

fn parse_index(text: &str, max: u16, what: &str) -> Result<u16, String> {
    let idx: u16 = text
        .trim()
        .parse()
        .map_err(|_| format!("bad {what} register index `{text}`"))?;
    if idx > max {
        return Err(format!("{what} register index {idx} exceeds {max}"));
    }
    Ok(idx)
}

fn parse_register(text: &str) -> Result<Option<Operand>, String> {
    let (class, rest) = match text.as_bytes().first() {
        Some(b's') => ('s', &text[1..]),
        Some(b'v') => ('v', &text[1..]),
        _ => return Ok(None),
    };
    let max = if class == 's' { MAX_SGPR } else { MAX_VGPR };
    if let Some(inner) = rest.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        let (first, last) = match inner.split_once(':') {
            Some((a, b)) => (parse_index(a, max, "range")?, parse_index(b, max, "range")?),
            None => {
                let i = parse_index(inner, max, "range")?;
                (i, i)
            }
        };
        if first > last {
            return Err(format!("reversed register range `{text}`"));
        }
        return Ok(Some(match (class, first == last) {
            ('s', true) => Operand::Sgpr(first),
            ('v', true) => Operand::Vgpr(first),
            ('s', false) => Operand::SgprRange(first, last),
            _ => Operand::VgprRange(first, last),
        }));
    }
    if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()) {
        let idx = parse_index(rest, max, if class == 's' { "scalar" } else { "vector" })?;
        return Ok(Some(if class == 's' {
            Operand::Sgpr(idx)
        } else {
            Operand::Vgpr(idx)
        }));
    }
    Ok(None)
}

fn parse_number(text: &str) -> Option<Operand> {
    let (neg, body) = match text.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, text),
    };
    if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        let v = u64::from_str_radix(hex, 16).ok()? as i64;
        return Some(Operand::Int(if neg { v.wrapping_neg() } else { v }));
    }
    if !body.starts_with(|c: char| c.is_ascii_digit()) {
        return None;
    }
    if let Ok(v) = body.parse::<u64>() {
        let v = v as i64;
        return Some(Operand::Int(if neg { v.wrapping_neg() } else { v }));
    }
    if body.contains(['.', 'e']) {
        let v: f64 = body.parse().ok()?;
        return Some(Operand::Float(if neg { -v } else { v }));
    }
    None
}

fn parse_operand(text: &str) -> Result<Operand, String> {
    if text.is_empty() {
        return Err("empty operand".to_string());
    }
    let lower = text.to_ascii_lowercase();
    let special = match lower.as_str() {
        "exec" => Some(SpecialReg::Exec),
        "exec_lo" => Some(SpecialReg::ExecLo),
        "exec_hi" => Some(SpecialReg::ExecHi),
        "vcc" => Some(SpecialReg::Vcc),
        "vcc_lo" => Some(SpecialReg::VccLo),
        "vcc_hi" => Some(SpecialReg::VccHi),
        "scc" => Some(SpecialReg::Scc),
        "m0" => Some(SpecialReg::M0),
        "vccz" | "execz" | "tba" | "tma" | "flat_scratch" | "flat_scratch_lo"
        | "flat_scratch_hi" | "xnack_mask" => Some(SpecialReg::Other(lower.clone())),
        _ if lower.starts_with("ttmp") => Some(SpecialReg::Other(lower.clone())),
        _ => None,
    };
    if let Some(s) = special {
        return Ok(Operand::Special(s));
    }
    if let Some(reg) = parse_register(&lower)? {
        return Ok(reg);
    }
    if let Some(num) = parse_number(&lower) {
        return Ok(num);
    }
    if lower.starts_with(|c: char| c.is_ascii_digit() || c == '-') {
        return Err(format!("invalid literal `{text}`"));
    }
    if text.contains(['(', '|']) {
        return Ok(Operand::Expr(text.to_string()));
    }
    if is_identifier(text) {
        return Ok(Operand::Label(text.to_string()));
    }
    Err(format!("unrecognized operand `{text}`"))
}

/// Parses the text lines of a kernel into instructions, attaching each
/// label to the instruction that follows it. Unparseable lines are kept as
/// opaque instructions and reported.
pub fn parse_program(lines: &[SourceLine]) -> (Vec<Instruction>, Vec<Diagnostic>) {
    let mut out = Vec::new();
    let mut diags = Vec::new();
    let mut pending: Vec<(String, usize)> = Vec::new();
    for line in lines {
        let mut instr = match parse_instruction(&line.text, line.number) {
            Ok(ParsedLine::Ignorable) => continue,
            Ok(ParsedLine::Label(l)) => {
                pending.push((l, line.number));
                continue;
            }
            Ok(ParsedLine::Instruction(i)) => i,
            Err(e) => {
                diags.push(Diagnostic::warning(Some(e.line), e.message.clone()));
                Instruction::opaque(line.number, line.text.trim())
            }
        };
        let mut labels: Vec<String> = pending.drain(..).map(|(l, _)| l).collect();
        labels.append(&mut instr.labels);
        instr.labels = labels;
        out.push(instr);
    }
    for (label, line) in pending {
        diags.push(Diagnostic::warning(
            Some(line),
            format!("label `{label}` is not followed by an instruction"),
        ));
    }
    (out, diags)
}

#[cfg(test)]
mod tests {
    use super::*;

    const VECADD_HEADER: &str = ".kernel vecadd\n.config\n    dims xyz\n    .cws 8, 8, 2\n    .useargs\n.text\n    v_mov_b32 v1, 0\n    s_endpgm\n";

    fn lines(text: &str) -> Vec<SourceLine> {
        text.lines()
            .enumerate()
            .map(|(i, t)| SourceLine {
                number: i + 1,
                text: t.to_string(),
            })
            .collect()
    }

    #[test]
    fn split_listing_one() {
        let ks = split_kernels(VECADD_HEADER).unwrap();
        assert_eq!(ks.len(), 1);
        assert_eq!(ks[0].name, "vecadd");
        assert_eq!(ks[0].config_lines.len(), 3);
        assert_eq!(ks[0].text_lines.last().unwrap().text.trim(), "s_endpgm");
    }

    #[test]
    fn split_empty_and_errors() {
        assert!(split_kernels("").unwrap().is_empty());
        assert_eq!(
            split_kernels(".amd\n.text\ns_endpgm\n"),
            Err(FormatError::TextWithoutKernel { line: 2 })
        );
        assert_eq!(
            split_kernels(".kernel\n"),
            Err(FormatError::MissingKernelName { line: 1 })
        );
    }

    // independent partition: walk the lines by hand and slice on markers
    #[test]
    fn split_two_kernels_matches_line_partition() {
        let text = ".amd\n.gpu Bonaire\n.kernel a\n.config\n.dims x\n.text\ns_nop 0\ns_endpgm\n.kernel b\n.config\n.cws 4\n.useargs\n.text\nv_mov_b32 v0, 1\ns_endpgm\n";
        let all: Vec<&str> = text.lines().collect();
        let ka = all.iter().position(|l| *l == ".kernel a").unwrap();
        let kb = all.iter().position(|l| *l == ".kernel b").unwrap();
        let part = |from: usize, to: usize, start: &str, end: &str| -> Vec<String> {
            let s = (from..to).find(|i| all[*i] == start).unwrap() + 1;
            let e = (s..to).find(|i| all[*i] == end).unwrap_or(to);
            all[s..e].iter().map(|l| l.to_string()).collect()
        };
        let ks = split_kernels(text).unwrap();
        assert_eq!(ks.len(), 2);
        let texts = |v: &[SourceLine]| v.iter().map(|l| l.text.clone()).collect::<Vec<_>>();
        assert_eq!(texts(&ks[0].config_lines), part(ka, kb, ".config", ".text"));
        assert_eq!(texts(&ks[0].text_lines), part(ka, kb, ".text", ".kernel b"));
        assert_eq!(texts(&ks[1].config_lines), part(kb, all.len(), ".config", ".text"));
        assert_eq!(texts(&ks[1].text_lines), part(kb, all.len(), ".text", "<eof>"));
    }

    #[test]
    fn config_listing_one() {
        let ks = split_kernels(VECADD_HEADER).unwrap();
        let cfg = parse_config(&ks[0].config_lines).unwrap();
        assert_eq!(cfg.cws, [8, 8, 2]);
        assert_eq!(cfg.dim_count(), 3);
        assert_eq!(cfg.work_group_items(), 128);
        assert!(cfg.uses_args);
    }

    #[test]
    fn config_defaults() {
        let cfg = parse_config(&lines(".dims x\n.sgprsnum 13")).unwrap();
        assert_eq!(cfg.cws, [1, 1, 1]);
        assert_eq!(cfg.sgprsnum, Some(13));
        let cfg = parse_config(&lines(".cws 64")).unwrap();
        assert_eq!(cfg.cws, [64, 1, 1]);
    }

    #[test]
    fn config_listing_three_args() {
        let text = r#".dims x
.cws 64, 1, 1
.sgprnum 13
.vgprnum 3
.floatmode 0xc0
.pgmsrc1 0x00ac0040
.pgmsrc2 0x0000008c
.dx10clamp
.ieeeemode
.useargs
.priority 0
.arg _global_offset_0, "size_t", long
.arg _global_offset_1, "size_t", long
.arg _global_offset_2, "size_t", long
.arg _printf_buffer, "size_t", void*, global, , ronly
.arg _vqueue_pointer, "size_t", long
.arg _aqlwrap_pointer, "size_t", long
.arg data, "int*", int*, global,
.arg x, "int", int"#;
        let cfg = parse_config(&lines(text)).unwrap();
        assert_eq!(cfg.args.len(), 8);
        assert!(cfg.args[..6].iter().all(|a| a.implicit));
        assert_eq!(cfg.args[6].name, "data");
        assert_eq!(cfg.args[6].address_space, ArgSpace::Global);
        assert_eq!(cfg.args[6].source_type, "int*");
        assert_eq!(cfg.args[7].name, "x");
        assert_eq!(cfg.args[7].address_space, ArgSpace::ByValue);
        assert_eq!(cfg.args[7].ocl_type, Some(DataType::i32()));
        assert!(cfg.raw_other.contains(&".floatmode 0xc0".to_string()));
        assert!(cfg.raw_other.contains(&".dx10clamp".to_string()));
    }

    #[test]
    fn config_bad_arg() {
        let err = parse_config(&lines(".arg x, int")).unwrap_err();
        assert!(matches!(err, ConfigError::MalformedArg { line: 1, .. }));
    }

    #[test]
    fn decompose_examples() {
        let u = |b| TypeSuffix {
            kind: SuffixKind::U,
            bits: b,
        };
        assert_eq!(
            decompose_mnemonic("v_mul_hi_u32_u24"),
            (Prefix::V, "mul_hi".to_string(), vec![u(32), u(24)])
        );
        assert_eq!(
            decompose_mnemonic("s_add_u32"),
            (Prefix::S, "add".to_string(), vec![u(32)])
        );
        assert_eq!(
            decompose_mnemonic("s_endpgm"),
            (Prefix::S, "endpgm".to_string(), vec![])
        );
        assert_eq!(
            decompose_mnemonic("s_load_dwordx2"),
            (Prefix::S, "load_dwordx2".to_string(), vec![])
        );
        assert_eq!(
            decompose_mnemonic("buffer_load_dword"),
            (Prefix::Other, "buffer_load_dword".to_string(), vec![])
        );
    }

    #[test]
    fn parse_scalar_load() {
        let ParsedLine::Instruction(i) =
            parse_instruction("  s_load_dwordx2 s[2:3], s[4:5], 0x0", 3).unwrap()
        else {
            panic!()
        };
        assert_eq!(i.prefix, Prefix::S);
        assert_eq!(i.root, "load_dwordx2");
        assert_eq!(
            i.operands,
            vec![
                Operand::SgprRange(2, 3),
                Operand::SgprRange(4, 5),
                Operand::Int(0)
            ]
        );
        assert_eq!(i.source_text, "s_load_dwordx2 s[2:3], s[4:5], 0x0");
    }

    #[test]
    fn parse_misc_lines() {
        assert_eq!(
            parse_instruction(".L42:", 1).unwrap(),
            ParsedLine::Label(".L42".to_string())
        );
        assert_eq!(parse_instruction("   # note", 1).unwrap(), ParsedLine::Ignorable);
        assert_eq!(parse_instruction("", 1).unwrap(), ParsedLine::Ignorable);
        let ParsedLine::Instruction(i) = parse_instruction("s_endpgm", 1).unwrap() else {
            panic!()
        };
        assert!(i.operands.is_empty());
        let ParsedLine::Instruction(i) =
            parse_instruction("/*7e020280*/ v_mov_b32 v1, 1.0 // c", 1).unwrap()
        else {
            panic!()
        };
        assert_eq!(i.operands[1], Operand::Float(1.0));
        let ParsedLine::Instruction(i) =
            parse_instruction("flat_load_dword v1, v[2:3] glc slc", 1).unwrap()
        else {
            panic!()
        };
        assert_eq!(i.modifiers, vec!["glc", "slc"]);
        let ParsedLine::Instruction(i) = parse_instruction("L1: s_branch .L2", 1).unwrap() else {
            panic!()
        };
        assert_eq!(i.labels, vec!["L1"]);
        assert_eq!(i.operands, vec![Operand::Label(".L2".into())]);
    }

    #[test]
    fn parse_rejects_out_of_range_registers() {
        assert!(parse_instruction("v_mov_b32 v256, 0", 7).is_err());
        assert!(parse_instruction("s_mov_b32 s104, 0", 7).is_err());
        assert!(parse_instruction("s_mov_b64 s[3:2], 0", 7).is_err());
        let e = parse_instruction("v_mov_b32 v1, ", 9).unwrap_err();
        assert_eq!(e.source_text, "v_mov_b32 v1,");
    }

    #[test]
    fn program_attaches_labels() {
        let (prog, diags) = parse_program(&lines(".L1:\n.L1b:\ns_nop 0\nv_mov_b32 v1, v300\ns_endpgm"));
        assert_eq!(prog.len(), 3);
        assert_eq!(prog[0].labels, vec![".L1", ".L1b"]);
        assert!(prog[1].opaque);
        assert_eq!(prog[1].source_text, "v_mov_b32 v1, v300");
        assert_eq!(diags.len(), 1);
    }
}
