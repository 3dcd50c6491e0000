//! Data types recovered from kernel argument declarations and from
//! instruction type suffixes.

use std::fmt;

use crate::asm::{ArgDecl, ArgSpace, SuffixKind, TypeSuffix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Base {
    Signed,
    Unsigned,
    Float,
    /// Untyped bits, as seen on `b32`/`b64` instructions.
    Binary,
    /// Per-lane predicate (a comparison result or an exec/vcc mask bit).
    Bool,
    Void,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AddressSpace {
    Global,
    Constant,
    Local,
    Private,
}

impl AddressSpace {
    pub fn qualifier(self) -> &'static str {
        match self {
            AddressSpace::Global => "__global",
            AddressSpace::Constant => "__constant",
            AddressSpace::Local => "__local",
            AddressSpace::Private => "__private",
        }
    }
}

/// A scalar or pointer type. For pointers `base`/`bits` describe the
/// innermost element and `ptr_depth` counts the levels of indirection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DataType {
    pub base: Base,
    pub bits: u8,
    pub ptr_depth: u8,
    pub space: Option<AddressSpace>,
}

impl DataType {
    pub const fn scalar(base: Base, bits: u8) -> Self {
        DataType {
            base,
            bits,
            ptr_depth: 0,
            space: None,
        }
    }

    pub const fn unknown() -> Self {
        Self::scalar(Base::Unknown, 32)
    }
    pub const fn bool() -> Self {
        Self::scalar(Base::Bool, 1)
    }
    pub const fn i32() -> Self {
        Self::scalar(Base::Signed, 32)
    }
    pub const fn u32() -> Self {
        Self::scalar(Base::Unsigned, 32)
    }
    pub const fn i64() -> Self {
        Self::scalar(Base::Signed, 64)
    }
    pub const fn u64() -> Self {
        Self::scalar(Base::Unsigned, 64)
    }
    pub const fn f32() -> Self {
        Self::scalar(Base::Float, 32)
    }
    pub const fn b32() -> Self {
        Self::scalar(Base::Binary, 32)
    }
    pub const fn b64() -> Self {
        Self::scalar(Base::Binary, 64)
    }

    pub fn pointer_to(elem: DataType, space: AddressSpace) -> Self {
        DataType {
            base: elem.base,
            bits: elem.bits,
            ptr_depth: elem.ptr_depth + 1,
            space: Some(space),
        }
    }

    pub fn is_pointer(&self) -> bool {
        self.ptr_depth > 0
    }

    pub fn is_unknown(&self) -> bool {
        self.ptr_depth == 0 && self.base == Base::Unknown
    }

    pub fn is_integer(&self) -> bool {
        self.ptr_depth == 0
            && matches!(
                self.base,
                Base::Signed | Base::Unsigned | Base::Binary | Base::Bool | Base::Unknown
            )
    }

    pub fn is_float(&self) -> bool {
        self.ptr_depth == 0 && self.base == Base::Float
    }

    pub fn is_signed(&self) -> bool {
        self.ptr_depth == 0 && self.base == Base::Signed
    }

    /// Storage width in bits (pointers are 64-bit, predicates occupy an int).
    pub fn width(&self) -> u32 {
        if self.is_pointer() {
            64
        } else if self.base == Base::Bool || self.bits == 24 {
            32
        } else {
            self.bits as u32
        }
    }

    pub fn byte_size(&self) -> u32 {
        self.width().div_ceil(8)
    }

    /// The pointee type of a pointer.
    pub fn element(&self) -> Option<DataType> {
        if !self.is_pointer() {
            return None;
        }
        let depth = self.ptr_depth - 1;
        Some(DataType {
            base: self.base,
            bits: self.bits,
            ptr_depth: depth,
            space: if depth > 0 { self.space } else { None },
        })
    }

    /// The type a value of this type is declared with in emitted code:
    /// binary becomes unsigned, 24-bit widens to 32, unknown becomes uint.
    pub fn concrete(&self) -> DataType {
        if self.is_pointer() {
            return *self;
        }
        let bits = if self.bits == 24 { 32 } else { self.bits };
        match self.base {
            Base::Binary => DataType::scalar(Base::Unsigned, bits),
            Base::Unknown => DataType::u32(),
            Base::Void => DataType::u32(),
            _ => DataType::scalar(self.base, bits),
        }
    }

    /// Integer type of the same width with the given signedness.
    pub fn with_sign(&self, signed: bool) -> DataType {
        let base = if signed { Base::Signed } else { Base::Unsigned };
        DataType::scalar(base, self.width() as u8)
    }

    /// OpenCL C spelling, e.g. `uint` or `__global float *`.
    pub fn c_name(&self) -> String {
        if self.is_pointer() {
            let elem = self.element().expect("pointer");
            let stars = "*".repeat(1);
            if elem.is_pointer() {
                return format!("{}{}", elem.c_name(), stars);
            }
            let q = self.space.unwrap_or(AddressSpace::Global).qualifier();
            return format!("{q} {} {stars}", elem.scalar_name());
        }
        self.scalar_name().to_string()
    }

    fn scalar_name(&self) -> &'static str {
        let c = self.concrete();
        match (c.base, c.bits) {
            (Base::Signed, 8) => "char",
            (Base::Unsigned, 8) => "uchar",
            (Base::Signed, 16) => "short",
            (Base::Unsigned, 16) => "ushort",
            (Base::Signed, 64) => "long",
            (Base::Unsigned, 64) => "ulong",
            (Base::Signed, _) => "int",
            (Base::Unsigned, _) => "uint",
            (Base::Float, 16) => "half",
            (Base::Float, 64) => "double",
            (Base::Float, _) => "float",
            (Base::Bool, _) => "int",
            (Base::Void, _) | (Base::Binary, _) | (Base::Unknown, _) => "uint",
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_pointer() {
            return write!(f, "{}", self.c_name());
        }
        let letter = match self.base {
            Base::Signed => "i",
            Base::Unsigned => "u",
            Base::Float => "f",
            Base::Binary => "b",
            Base::Bool => return write!(f, "bool"),
            Base::Void => return write!(f, "void"),
            Base::Unknown => return write!(f, "unknown"),
        };
        write!(f, "{letter}{}", self.bits)
    }
}

pub fn type_from_suffix(suffix: TypeSuffix) -> DataType {
    let base = match suffix.kind {
        SuffixKind::I => Base::Signed,
        SuffixKind::U => Base::Unsigned,
        SuffixKind::F => Base::Float,
        SuffixKind::B => Base::Binary,
    };
    match suffix.bits {
        8 | 16 | 24 | 32 | 64 => DataType::scalar(base, suffix.bits),
        _ => DataType::unknown(),
    }
}

/// Parses an OpenCL scalar or pointer type name as written in `.arg`
/// directives. Returns `None` for types this decompiler does not model
/// (vectors, images, structures).
pub fn parse_ocl_type(text: &str, space: Option<AddressSpace>) -> Option<DataType> {
    let text = text.trim();
    let depth = text.chars().rev().take_while(|c| *c == '*').count();
    let name = text[..text.len() - depth].trim();
    let name = name
        .strip_prefix("const ")
        .or_else(|| name.strip_prefix("volatile "))
        .unwrap_or(name)
        .trim();
    let elem = match name {
        "char" | "signed char" => DataType::scalar(Base::Signed, 8),
        "uchar" | "unsigned char" | "bool" => DataType::scalar(Base::Unsigned, 8),
        "short" => DataType::scalar(Base::Signed, 16),
        "ushort" | "unsigned short" => DataType::scalar(Base::Unsigned, 16),
        "int" => DataType::i32(),
        "uint" | "unsigned int" | "unsigned" => DataType::u32(),
        "long" => DataType::i64(),
        "ulong" | "unsigned long" | "size_t" => DataType::u64(),
        "half" => DataType::scalar(Base::Float, 16),
        "float" => DataType::f32(),
        "double" => DataType::scalar(Base::Float, 64),
        "void" => DataType::scalar(Base::Void, 8),
        _ => return None,
    };
    if depth == 0 {
        if elem.base == Base::Void {
            return None;
        }
        return Some(elem);
    }
    let mut ty = elem;
    for _ in 0..depth {
        ty = DataType::pointer_to(ty, space.unwrap_or(AddressSpace::Global));
    }
    Some(ty)
}

/// Outcome of reconciling two observations of one value's type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TypeConflict {
    Sign { kept: DataType, dropped: DataType },
    Width { kept: DataType, dropped: DataType },
    Kind { kept: DataType, dropped: DataType },
}

impl fmt::Display for TypeConflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeConflict::Sign { kept, dropped } => {
                write!(f, "signedness conflict: kept {kept}, ignored {dropped}")
            }
            TypeConflict::Width { kept, dropped } => {
                write!(f, "width conflict: widened to {kept}, ignored {dropped}")
            }
            TypeConflict::Kind { kept, dropped } => {
                write!(f, "type conflict: kept {kept}, ignored {dropped}")
            }
        }
    }
}

/// Reconciles two type observations, `a` being the earlier one.
///
/// Unknown yields the other side; binary yields its typed partner of the
/// same width; a sign conflict keeps the first observation; a width
/// conflict keeps the wider type.
pub fn unify(a: DataType, b: DataType) -> (DataType, Option<TypeConflict>) {
    if a == b {
        return (a, None);
    }
    if a.is_unknown() {
        return (b, None);
    }
    if b.is_unknown() {
        return (a, None);
    }
    if a.is_pointer() || b.is_pointer() {
        let kept = if a.is_pointer() { a } else { b };
        let dropped = if a.is_pointer() { b } else { a };
        return (kept, Some(TypeConflict::Kind { kept, dropped }));
    }
    let (wa, wb) = (a.width(), b.width());
    if wa != wb {
        let (kept, dropped) = if wb > wa { (b, a) } else { (a, b) };
        return (kept, Some(TypeConflict::Width { kept, dropped }));
    }
    match (a.base, b.base) {
        (Base::Binary, _) => (b, None),
        (_, Base::Binary) => (a, None),
        (Base::Signed, Base::Unsigned) | (Base::Unsigned, Base::Signed) => {
            (a, Some(TypeConflict::Sign { kept: a, dropped: b }))
        }
        _ => (a, Some(TypeConflict::Kind { kept: a, dropped: b })),
    }
}

/// Declared type of one kernel argument.
#[derive(Clone, Debug, PartialEq)]
pub struct ArgType {
    pub name: String,
    /// `None` when the type string is not modelled; the declaration text is
    /// then carried through verbatim.
    pub ty: Option<DataType>,
    pub space: ArgSpace,
    pub implicit: bool,
}

/// Per-kernel type environment built from the argument declarations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TypeEnv {
    pub args: Vec<ArgType>,
    /// Arguments whose type could not be interpreted.
    pub unresolved: Vec<String>,
}

impl TypeEnv {
    pub fn arg(&self, name: &str) -> Option<&ArgType> {
        self.args.iter().find(|a| a.name == name)
    }

    pub fn explicit(&self) -> impl Iterator<Item = &ArgType> {
        self.args.iter().filter(|a| !a.implicit)
    }
}

pub fn types_from_config(args: &[ArgDecl]) -> TypeEnv {
    let mut env = TypeEnv::default();
    for arg in args {
        if arg.ocl_type.is_none() {
            env.unresolved.push(arg.name.clone());
        }
        env.args.push(ArgType {
            name: arg.name.clone(),
            ty: arg.ocl_type,
            space: arg.address_space,
            implicit: arg.implicit,
        });
    }
    env
}
