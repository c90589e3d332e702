//! AArch64 listing ingestion.
//!
//! Parses textual disassembly into a normalized instruction stream and
//! classifies each instruction into the symbol sets the validator operates
//! on (arithmetic, load, store, address calculation, PA forms, branches).
//!
//! Two input shapes are accepted:
//!
//! - the toolkit's canonical format: function headers `<name>:` (optionally
//!   `addr <name>:`), one instruction per line as `addr: mnemonic operands`,
//!   local labels as bare `name:` lines;
//! - `objdump -d`-style dumps: hex address prefixes, an encoded-bytes column
//!   (ignored), tab separators, and `addr <sym>` branch targets.
//!
//! Addresses may be omitted in hand-written fixtures, in which case they are
//! assigned sequentially in 4-byte steps.

mod classify;

pub use classify::{
    classify, BranchTarget, ClassTable, ClassifiedFunction, InstrClass, PacContext, PacKeySel,
};

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// A normalized register operand. W-register aliases fold onto their
/// X-register ids; `lr` is `X(30)`, `xzr`/`wzr` read as constant zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Reg {
    /// General-purpose register x0..x30.
    X(u8),
    Sp,
    /// The zero register (xzr/wzr).
    Zero,
    /// Exception link register (elr_el1), consumed by `eret`.
    Elr,
    /// Saved program status register (spsr_el1).
    Spsr,
}

impl Reg {
    pub const LR: Reg = Reg::X(30);
    pub const FP: Reg = Reg::X(29);

    pub fn parse(s: &str) -> Option<Reg> {
        let s = s.trim();
        match s {
            "sp" | "wsp" => return Some(Reg::Sp),
            "xzr" | "wzr" => return Some(Reg::Zero),
            "lr" => return Some(Reg::X(30)),
            "fp" => return Some(Reg::X(29)),
            "elr" | "elr_el1" => return Some(Reg::Elr),
            "spsr" | "spsr_el1" => return Some(Reg::Spsr),
            _ => {}
        }
        let (prefix, rest) = s.split_at(1);
        if prefix != "x" && prefix != "w" {
            return None;
        }
        let n: u8 = rest.parse().ok()?;
        match n {
            0..=30 => Some(Reg::X(n)),
            31 => Some(Reg::Zero),
            _ => None,
        }
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reg::X(n) => write!(f, "x{n}"),
            Reg::Sp => write!(f, "sp"),
            Reg::Zero => write!(f, "xzr"),
            Reg::Elr => write!(f, "elr_el1"),
            Reg::Spsr => write!(f, "spsr_el1"),
        }
    }
}

/// Memory operand addressing mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AddrMode {
    Offset,
    PreIndex,
    PostIndex,
}

/// One operand in its normalized form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Reg),
    /// `#imm` immediate.
    Imm(i64),
    /// Memory form `[base{, #off}]{!}` / `[base], #off`, with an optional
    /// register index (`[x0, x1]`).
    Mem {
        base: Reg,
        index: Option<Reg>,
        offset: i64,
        mode: AddrMode,
    },
    /// Numeric code address (branch target, adrp page, ...).
    Addr(u64),
    /// Symbolic label reference.
    Label(String),
    /// `:lo12:sym` low-part relocation operand.
    LoPart(String),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) => write!(f, "#{v}"),
            Operand::Mem {
                base,
                index,
                offset,
                mode,
            } => match (mode, index) {
                (AddrMode::PostIndex, _) => write!(f, "[{base}], #{offset}"),
                (AddrMode::PreIndex, _) => write!(f, "[{base}, #{offset}]!"),
                (AddrMode::Offset, Some(idx)) => write!(f, "[{base}, {idx}]"),
                (AddrMode::Offset, None) => {
                    if *offset == 0 {
                        write!(f, "[{base}]")
                    } else {
                        write!(f, "[{base}, #{offset}]")
                    }
                }
            },
            Operand::Addr(a) => write!(f, "0x{a:x}"),
            Operand::Label(l) => write!(f, "{l}"),
            Operand::LoPart(l) => write!(f, ":lo12:{l}"),
        }
    }
}

/// One decoded instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    /// Byte offset within the image.
    pub address: u64,
    pub mnemonic: String,
    pub operands: Vec<Operand>,
    /// Original source line, preserved for reports.
    pub raw_text: String,
}

impl Instruction {
    /// Canonical text form: `addr: mnemonic op, op, ...`.
    pub fn canonical(&self) -> String {
        let mut s = format!("{:8x}: {}", self.address, self.mnemonic);
        for (i, op) in self.operands.iter().enumerate() {
            if i == 0 {
                s.push(' ');
            } else {
                s.push_str(", ");
            }
            s.push_str(&op.to_string());
        }
        s
    }
}

/// A parsed function: a name, an entry address and its instruction stream.
#[derive(Debug, Clone)]
pub struct FunctionListing {
    pub name: String,
    pub entry: u64,
    pub instructions: Vec<Instruction>,
}

impl FunctionListing {
    /// Canonical listing text for the whole function.
    pub fn canonical(&self) -> String {
        let mut out = format!("<{}>:\n", self.name);
        for ins in &self.instructions {
            out.push_str(&ins.canonical());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum AsmError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate function name `{0}`")]
    DuplicateFunction(String),
    #[error("function `{name}` line {line}: address 0x{addr:x} does not increase")]
    NonMonotonicAddress { name: String, line: usize, addr: u64 },
    #[error("class table line {line}: {msg}")]
    ClassTable { line: usize, msg: String },
}

fn perr(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Parse a full listing into its functions.
///
/// Every input line is consumed as a function header, an instruction, a
/// local label, a comment, or rejected with its line number.
pub fn parse_listing(text: &str) -> Result<Vec<FunctionListing>, AsmError> {
    struct PendingFn {
        name: String,
        entry: Option<u64>,
        instructions: Vec<Instruction>,
        pending_labels: Vec<String>,
        header_line: usize,
    }

    let mut functions: Vec<FunctionListing> = Vec::new();
    let mut seen: BTreeMap<String, ()> = BTreeMap::new();
    let mut labels: BTreeMap<String, u64> = BTreeMap::new();
    let mut unresolved: Vec<(usize, usize, usize, String)> = Vec::new(); // (fn, instr, operand, label)
    let mut cur: Option<PendingFn> = None;

    let finish =
        |cur: &mut Option<PendingFn>, functions: &mut Vec<FunctionListing>| -> Result<(), AsmError> {
            if let Some(p) = cur.take() {
                if p.instructions.is_empty() {
                    return Err(perr(p.header_line, format!("function `{}` is empty", p.name)));
                }
                functions.push(FunctionListing {
                    entry: p.entry.unwrap_or(0),
                    name: p.name,
                    instructions: p.instructions,
                });
            }
            Ok(())
        };

    for (lineno, raw_line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = strip_comment(raw_line).trim();
        if line.is_empty() {
            continue;
        }

        if let Some((addr, name)) = parse_function_header(line) {
            finish(&mut cur, &mut functions)?;
            if seen.insert(name.clone(), ()).is_some() {
                return Err(AsmError::DuplicateFunction(name));
            }
            cur = Some(PendingFn {
                name,
                entry: addr,
                instructions: Vec::new(),
                pending_labels: Vec::new(),
                header_line: lineno,
            });
            continue;
        }

        // A bare `name:` inside a function is a local label.
        if let Some(label) = parse_local_label(line) {
            match cur.as_mut() {
                Some(p) => p.pending_labels.push(label),
                None => return Err(perr(lineno, "label outside of any function")),
            }
            continue;
        }

        let p = match cur.as_mut() {
            Some(p) => p,
            None => return Err(perr(lineno, "instruction outside of any function")),
        };

        let (explicit_addr, body) = split_address(line, lineno)?;
        let address = match explicit_addr {
            Some(a) => a,
            None => match p.instructions.last() {
                Some(prev) => prev.address + 4,
                None => p.entry.unwrap_or(0),
            },
        };
        if let Some(prev) = p.instructions.last() {
            if address <= prev.address {
                return Err(AsmError::NonMonotonicAddress {
                    name: p.name.clone(),
                    line: lineno,
                    addr: address,
                });
            }
        }
        if p.entry.is_none() {
            p.entry = Some(address);
        }

        for label in p.pending_labels.drain(..) {
            labels.insert(label, address);
        }

        let instr = parse_instruction(address, body, raw_line, lineno)?;
        // Remember label operands for resolution against local labels.
        for (oi, op) in instr.operands.iter().enumerate() {
            if let Operand::Label(l) = op {
                unresolved.push((functions.len(), p.instructions.len(), oi, l.clone()));
            }
        }
        p.instructions.push(instr);
    }
    finish(&mut cur, &mut functions)?;

    for (fi, ii, oi, label) in unresolved {
        if let Some(&addr) = labels.get(&label) {
            functions[fi].instructions[ii].operands[oi] = Operand::Addr(addr);
        }
    }

    Ok(functions)
}

fn strip_comment(line: &str) -> &str {
    let line = match line.find("//") {
        Some(i) => &line[..i],
        None => line,
    };
    let line = match line.find(';') {
        Some(i) => &line[..i],
        None => line,
    };
    // Lines starting with '#' are comments; '#' elsewhere prefixes immediates.
    if line.trim_start().starts_with('#') {
        ""
    } else {
        line
    }
}

/// `<name>:` or `addr <name>:` headers. Angle brackets mark function names;
/// bare `name:` lines are local labels.
fn parse_function_header(line: &str) -> Option<(Option<u64>, String)> {
    let line = line.strip_suffix(':')?;
    let line = line.trim();
    if let Some(rest) = line.strip_suffix('>') {
        let (before, name) = rest.rsplit_once('<')?;
        let before = before.trim();
        let addr = if before.is_empty() {
            None
        } else {
            Some(parse_hex(before)?)
        };
        return Some((addr, name.to_string()));
    }
    None
}

fn parse_local_label(line: &str) -> Option<String> {
    let name = line.strip_suffix(':')?;
    if !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$')
        && !name.chars().next().unwrap().is_ascii_digit()
    {
        Some(name.to_string())
    } else {
        None
    }
}

fn parse_hex(s: &str) -> Option<u64> {
    let s = s.strip_prefix("0x").unwrap_or(s);
    u64::from_str_radix(s, 16).ok()
}

/// Split an optional `addr:` prefix off an instruction line, skipping an
/// objdump byte column when present.
fn split_address(line: &str, lineno: usize) -> Result<(Option<u64>, &str), AsmError> {
    if let Some((head, rest)) = line.split_once(':') {
        let head = head.trim();
        if !head.is_empty() && head.chars().all(|c| c.is_ascii_hexdigit()) {
            let addr = parse_hex(head).ok_or_else(|| perr(lineno, "bad address"))?;
            let mut body = rest.trim();
            // objdump interleaves the 8-hex-digit encoding column.
            if let Some((first, tail)) = body.split_once(char::is_whitespace) {
                if first.len() == 8 && first.chars().all(|c| c.is_ascii_hexdigit()) {
                    body = tail.trim();
                }
            }
            if body.is_empty() {
                return Err(perr(lineno, "missing mnemonic after address"));
            }
            return Ok((Some(addr), body));
        }
    }
    Ok((None, line))
}

fn parse_instruction(
    address: u64,
    body: &str,
    raw: &str,
    lineno: usize,
) -> Result<Instruction, AsmError> {
    let body = body.trim();
    let (mnemonic, ops_text) = match body.split_once(char::is_whitespace) {
        Some((m, rest)) => (m, rest.trim()),
        None => (body, ""),
    };
    if mnemonic.is_empty() {
        return Err(perr(lineno, "missing mnemonic"));
    }
    let mnemonic = mnemonic.to_ascii_lowercase();
    let operands = parse_operands(ops_text, &mnemonic, lineno)?;
    Ok(Instruction {
        address,
        mnemonic,
        operands,
        raw_text: raw.to_string(),
    })
}

fn parse_operands(text: &str, mnemonic: &str, lineno: usize) -> Result<Vec<Operand>, AsmError> {
    let mut ops = Vec::new();
    let mut rest = text.trim();
    while !rest.is_empty() {
        let (op, tail) = parse_one_operand(rest, mnemonic, lineno)?;
        ops.push(op);
        rest = tail.trim_start();
        if let Some(t) = rest.strip_prefix(',') {
            rest = t.trim_start();
        }
    }
    Ok(ops)
}

fn parse_one_operand<'a>(
    text: &'a str,
    mnemonic: &str,
    lineno: usize,
) -> Result<(Operand, &'a str), AsmError> {
    let text = text.trim_start();
    if let Some(rest) = text.strip_prefix('[') {
        return parse_mem_operand(rest, lineno);
    }
    if let Some(rest) = text.strip_prefix('#') {
        let (tok, tail) = take_token(rest);
        let v = parse_int(tok).ok_or_else(|| perr(lineno, format!("bad immediate `#{tok}`")))?;
        return Ok((Operand::Imm(v), tail));
    }
    if let Some(rest) = text.strip_prefix(":lo12:") {
        let (tok, tail) = take_token(rest);
        return Ok((Operand::LoPart(tok.to_string()), tail));
    }
    let (tok, tail) = take_token(text);
    if tok.is_empty() {
        return Err(perr(lineno, "empty operand"));
    }
    if let Some(r) = Reg::parse(tok) {
        return Ok((Operand::Reg(r), tail));
    }
    // `addr <sym>` objdump branch-target form collapses onto the address.
    if let Some(a) = parse_hex_operand(tok) {
        let tail2 = tail.trim_start();
        if let Some(rest) = tail2.strip_prefix('<') {
            if let Some(end) = rest.find('>') {
                return Ok((Operand::Addr(a), &rest[end + 1..]));
            }
        }
        return Ok((Operand::Addr(a), tail));
    }
    if is_identifier(tok) {
        return Ok((Operand::Label(tok.to_string()), tail));
    }
    Err(perr(
        lineno,
        format!("unrecognized operand `{tok}` for `{mnemonic}`"),
    ))
}

fn parse_mem_operand(text: &str, lineno: usize) -> Result<(Operand, &str), AsmError> {
    let close = text
        .find(']')
        .ok_or_else(|| perr(lineno, "unterminated memory operand"))?;
    let inner = &text[..close];
    let mut after = &text[close + 1..];

    let mut parts = inner.split(',').map(str::trim);
    let base_tok = parts
        .next()
        .ok_or_else(|| perr(lineno, "empty memory operand"))?;
    let base =
        Reg::parse(base_tok).ok_or_else(|| perr(lineno, format!("bad base register `{base_tok}`")))?;
    let mut offset = 0i64;
    let mut index = None;
    if let Some(second) = parts.next() {
        if let Some(imm) = second.strip_prefix('#') {
            offset = parse_int(imm).ok_or_else(|| perr(lineno, format!("bad offset `{second}`")))?;
        } else if let Some(r) = Reg::parse(second) {
            index = Some(r);
        } else if let Some(v) = parse_int(second) {
            offset = v;
        } else {
            return Err(perr(lineno, format!("bad memory operand part `{second}`")));
        }
    }

    let mut mode = AddrMode::Offset;
    if let Some(rest) = after.strip_prefix('!') {
        mode = AddrMode::PreIndex;
        after = rest;
    } else {
        let trimmed = after.trim_start();
        if let Some(rest) = trimmed.strip_prefix(',') {
            let rest = rest.trim_start();
            if let Some(imm) = rest.strip_prefix('#') {
                let (tok, tail) = take_token(imm);
                if let Some(v) = parse_int(tok) {
                    return Ok((
                        Operand::Mem {
                            base,
                            index,
                            offset: v,
                            mode: AddrMode::PostIndex,
                        },
                        tail,
                    ));
                }
            }
        }
    }
    Ok((
        Operand::Mem {
            base,
            index,
            offset,
            mode,
        },
        after,
    ))
}

fn take_token(text: &str) -> (&str, &str) {
    let end = text
        .find(|c: char| c == ',' || c.is_whitespace())
        .unwrap_or(text.len());
    (&text[..end], &text[end..])
}

fn parse_int(s: &str) -> Option<i64> {
    let (neg, s) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let v = if let Some(hex) = s.strip_prefix("0x") {
        i64::from_str_radix(hex, 16).ok()?
    } else {
        s.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn parse_hex_operand(s: &str) -> Option<u64> {
    if let Some(hex) = s.strip_prefix("0x") {
        return u64::from_str_radix(hex, 16).ok();
    }
    // Bare hex only when it cannot be an identifier-looking token.
    if s.chars().all(|c| c.is_ascii_hexdigit()) && s.chars().any(|c| c.is_ascii_digit()) {
        return u64::from_str_radix(s, 16).ok();
    }
    None
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$' || c == '@')
}

#[cfg(test)]
mod tests;
