//! Minimal textual IR for the context analyzer.
//!
//! Line-oriented, with a versioned header. Grammar:
//!
//! ```text
//! ir v1
//! record S1 { p: fnptr<irq_sig>, name: data }
//! object s1: S1
//! func init_s1(p: fnptr<irq_sig>) {
//!   %0 = const_addr @handler_a
//!   %1 = stack_alloc
//!   %2 = heap_alloc kmalloc
//!   %3 = copy %0
//!   %4 = cast %3
//!   store s1.p, %p
//!   store $slot, %0
//!   call @init_s1(%0)
//!   call %p(%1)
//!   call s1.p()
//! }
//! ```
//!
//! Values are `%name` (parameters and instruction results share the
//! namespace) or `object.field` references; store targets are declared
//! object fields or `$local` slots. Comments start with `#` or `//`.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IrError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown reference `{name}`")]
    UnknownReference { line: usize, name: String },
    #[error("line {line}: call to `{callee}` passes {got} args, declared {want}")]
    ArityMismatch {
        line: usize,
        callee: String,
        got: usize,
        want: usize,
    },
    #[error("duplicate definition of `{0}`")]
    Duplicate(String),
    #[error("missing or unsupported header (expected `ir v1`)")]
    BadHeader,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldKind {
    Data,
    FnPtr { sig: Option<String> },
}

impl FieldKind {
    pub fn is_fnptr(&self) -> bool {
        matches!(self, FieldKind::FnPtr { .. })
    }

    /// Canonicalized type string, the input to the type-signature hash.
    pub fn type_string(&self) -> String {
        match self {
            FieldKind::Data => "data".to_string(),
            FieldKind::FnPtr { sig: Some(s) } => format!("fnptr<{s}>"),
            FieldKind::FnPtr { sig: None } => "fnptr".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Field {
    pub name: String,
    pub kind: FieldKind,
}

#[derive(Debug, Clone)]
pub struct Record {
    pub name: String,
    pub fields: Vec<Field>,
}

impl Record {
    pub fn field(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct IrObject {
    pub name: String,
    pub record: String,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub kind: FieldKind,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum IrValue {
    /// `%name`: a parameter or instruction result.
    Name(String),
    /// `object.field`: the current value of a declared object's field.
    FieldRef { object: String, field: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rhs {
    ConstAddr(String),
    StackAlloc,
    HeapAlloc(String),
    Copy(IrValue),
    Cast(IrValue),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreTarget {
    Field { object: String, field: String },
    Local(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Callee {
    Direct(String),
    Value(IrValue),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IrInstr {
    Def { name: String, rhs: Rhs },
    Store { target: StoreTarget, value: IrValue },
    Call { callee: Callee, args: Vec<IrValue> },
}

#[derive(Debug, Clone)]
pub struct IrFunction {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<IrInstr>,
}

impl IrFunction {
    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }
}

#[derive(Debug, Clone, Default)]
pub struct IrProgram {
    pub records: Vec<Record>,
    pub objects: Vec<IrObject>,
    pub functions: Vec<IrFunction>,
}

impl IrProgram {
    pub fn record(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn object(&self, name: &str) -> Option<&IrObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn function(&self, name: &str) -> Option<&IrFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Record type of an object's field, if declared.
    pub fn field_kind(&self, object: &str, field: &str) -> Option<&FieldKind> {
        let obj = self.object(object)?;
        self.record(&obj.record)?.field(field).map(|f| &f.kind)
    }

    /// All direct call sites of `callee`: (caller name, instruction index).
    pub fn callers_of(&self, callee: &str) -> Vec<(&str, usize)> {
        let mut out = Vec::new();
        for f in &self.functions {
            for (i, instr) in f.body.iter().enumerate() {
                if let IrInstr::Call {
                    callee: Callee::Direct(c),
                    ..
                } = instr
                {
                    if c == callee {
                        out.push((f.name.as_str(), i));
                    }
                }
            }
        }
        out
    }
}

pub fn parse_ir(text: &str) -> Result<IrProgram, IrError> {
    let mut program = IrProgram::default();
    let mut seen: BTreeMap<String, ()> = BTreeMap::new();
    let mut cur: Option<IrFunction> = None;
    let mut header_ok = false;

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = strip_comment(raw).trim().to_string();
        if line.is_empty() {
            continue;
        }
        if !header_ok {
            if line == "ir v1" {
                header_ok = true;
                continue;
            }
            return Err(IrError::BadHeader);
        }

        if let Some(rest) = line.strip_prefix("record ") {
            let (name, body) = rest.split_once('{').ok_or_else(|| perr(lineno, "expected `{`"))?;
            let name = name.trim().to_string();
            if seen.insert(format!("record {name}"), ()).is_some() {
                return Err(IrError::Duplicate(name));
            }
            let body = body
                .trim()
                .strip_suffix('}')
                .ok_or_else(|| perr(lineno, "record must close with `}` on one line"))?;
            let mut fields = Vec::new();
            for part in body.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let (fname, kind) = part
                    .split_once(':')
                    .ok_or_else(|| perr(lineno, format!("bad field `{part}`")))?;
                fields.push(Field {
                    name: fname.trim().to_string(),
                    kind: parse_kind(kind.trim(), lineno)?,
                });
            }
            program.records.push(Record { name, fields });
            continue;
        }

        if let Some(rest) = line.strip_prefix("object ") {
            let (name, record) = rest
                .split_once(':')
                .ok_or_else(|| perr(lineno, "expected `object name: Record`"))?;
            let name = name.trim().to_string();
            let record = record.trim().to_string();
            if program.record(&record).is_none() {
                return Err(IrError::UnknownReference { line: lineno, name: record });
            }
            if seen.insert(format!("object {name}"), ()).is_some() {
                return Err(IrError::Duplicate(name));
            }
            program.objects.push(IrObject { name, record });
            continue;
        }

        if let Some(rest) = line.strip_prefix("func ") {
            if cur.is_some() {
                return Err(perr(lineno, "nested function definition"));
            }
            let rest = rest
                .trim()
                .strip_suffix('{')
                .ok_or_else(|| perr(lineno, "expected `{` at end of func line"))?
                .trim();
            let (name, params_text) = rest
                .split_once('(')
                .ok_or_else(|| perr(lineno, "expected parameter list"))?;
            let params_text = params_text
                .strip_suffix(')')
                .ok_or_else(|| perr(lineno, "unterminated parameter list"))?;
            let name = name.trim().to_string();
            if seen.insert(format!("func {name}"), ()).is_some() {
                return Err(IrError::Duplicate(name));
            }
            let mut params = Vec::new();
            for part in params_text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let (pname, kind) = part
                    .split_once(':')
                    .ok_or_else(|| perr(lineno, format!("bad parameter `{part}`")))?;
                params.push(Param {
                    name: pname.trim().to_string(),
                    kind: parse_kind(kind.trim(), lineno)?,
                });
            }
            cur = Some(IrFunction {
                name,
                params,
                body: Vec::new(),
            });
            continue;
        }

        if line == "}" {
            match cur.take() {
                Some(f) => program.functions.push(f),
                None => return Err(perr(lineno, "stray `}`")),
            }
            continue;
        }

        let f = cur
            .as_mut()
            .ok_or_else(|| perr(lineno, "instruction outside of function"))?;
        f.body.push(parse_instr(&line, lineno)?);
    }

    if cur.is_some() {
        return Err(IrError::BadHeader);
    }
    validate(&program)?;
    Ok(program)
}

fn strip_comment(line: &str) -> &str {
    let line = match line.find("//") {
        Some(i) => &line[..i],
        None => line,
    };
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn perr(line: usize, msg: impl Into<String>) -> IrError {
    IrError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_kind(s: &str, line: usize) -> Result<FieldKind, IrError> {
    if s == "data" {
        return Ok(FieldKind::Data);
    }
    if s == "fnptr" {
        return Ok(FieldKind::FnPtr { sig: None });
    }
    if let Some(rest) = s.strip_prefix("fnptr<") {
        if let Some(sig) = rest.strip_suffix('>') {
            return Ok(FieldKind::FnPtr {
                sig: Some(sig.to_string()),
            });
        }
    }
    Err(perr(line, format!("unknown kind `{s}`")))
}

fn parse_value(s: &str, line: usize) -> Result<IrValue, IrError> {
    let s = s.trim();
    if let Some(name) = s.strip_prefix('%') {
        return Ok(IrValue::Name(name.to_string()));
    }
    if let Some((obj, field)) = s.split_once('.') {
        return Ok(IrValue::FieldRef {
            object: obj.trim().to_string(),
            field: field.trim().to_string(),
        });
    }
    Err(perr(line, format!("bad value `{s}`")))
}

fn parse_args(s: &str, line: usize) -> Result<Vec<IrValue>, IrError> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| parse_value(p, line))
        .collect()
}

fn parse_instr(line: &str, lineno: usize) -> Result<IrInstr, IrError> {
    if let Some(rest) = line.strip_prefix("store ") {
        let (target, value) = rest
            .split_once(',')
            .ok_or_else(|| perr(lineno, "store needs `target, value`"))?;
        let target = target.trim();
        let target = if let Some(local) = target.strip_prefix('$') {
            StoreTarget::Local(local.to_string())
        } else if let Some((obj, field)) = target.split_once('.') {
            StoreTarget::Field {
                object: obj.trim().to_string(),
                field: field.trim().to_string(),
            }
        } else {
            return Err(perr(lineno, format!("bad store target `{target}`")));
        };
        return Ok(IrInstr::Store {
            target,
            value: parse_value(value, lineno)?,
        });
    }

    if let Some(rest) = line.strip_prefix("call ") {
        let (callee_text, args_text) = rest
            .split_once('(')
            .ok_or_else(|| perr(lineno, "call needs an argument list"))?;
        let args_text = args_text
            .trim()
            .strip_suffix(')')
            .ok_or_else(|| perr(lineno, "unterminated argument list"))?;
        let callee_text = callee_text.trim();
        let callee = if let Some(name) = callee_text.strip_prefix('@') {
            Callee::Direct(name.to_string())
        } else {
            Callee::Value(parse_value(callee_text, lineno)?)
        };
        return Ok(IrInstr::Call {
            callee,
            args: parse_args(args_text, lineno)?,
        });
    }

    if let Some((lhs, rhs)) = line.split_once('=') {
        let name = lhs
            .trim()
            .strip_prefix('%')
            .ok_or_else(|| perr(lineno, "definition target must be `%name`"))?
            .to_string();
        let rhs = rhs.trim();
        let rhs = if let Some(sym) = rhs.strip_prefix("const_addr ") {
            let sym = sym
                .trim()
                .strip_prefix('@')
                .ok_or_else(|| perr(lineno, "const_addr takes `@symbol`"))?;
            Rhs::ConstAddr(sym.to_string())
        } else if rhs == "stack_alloc" {
            Rhs::StackAlloc
        } else if let Some(alloc) = rhs.strip_prefix("heap_alloc ") {
            Rhs::HeapAlloc(alloc.trim().to_string())
        } else if let Some(v) = rhs.strip_prefix("copy ") {
            Rhs::Copy(parse_value(v, lineno)?)
        } else if let Some(v) = rhs.strip_prefix("cast ") {
            Rhs::Cast(parse_value(v, lineno)?)
        } else {
            return Err(perr(lineno, format!("unknown instruction `{rhs}`")));
        };
        return Ok(IrInstr::Def { name, rhs });
    }

    Err(perr(lineno, format!("unparseable instruction `{line}`")))
}

/// Whole-program checks: store targets resolve to declared record fields,
/// direct-call arity matches the callee declaration.
fn validate(program: &IrProgram) -> Result<(), IrError> {
    for f in &program.functions {
        for (i, instr) in f.body.iter().enumerate() {
            let line = i + 1; // body-relative; good enough for diagnostics
            match instr {
                IrInstr::Store {
                    target: StoreTarget::Field { object, field },
                    ..
                } => {
                    if program.field_kind(object, field).is_none() {
                        return Err(IrError::UnknownReference {
                            line,
                            name: format!("{object}.{field}"),
                        });
                    }
                }
                IrInstr::Call {
                    callee: Callee::Direct(callee),
                    args,
                } => {
                    if let Some(target) = program.function(callee) {
                        if target.params.len() != args.len() {
                            return Err(IrError::ArityMismatch {
                                line,
                                callee: callee.clone(),
                                got: args.len(),
                                want: target.params.len(),
                            });
                        }
                    }
                }
                IrInstr::Call {
                    callee: Callee::Value(IrValue::FieldRef { object, field }),
                    ..
                } => {
                    if program.field_kind(object, field).is_none() {
                        return Err(IrError::UnknownReference {
                            line,
                            name: format!("{object}.{field}"),
                        });
                    }
                }
                _ => {}
            }
        }
    }
    Ok(())
}
