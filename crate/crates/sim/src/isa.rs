//! The 16-bit micro-ISA and its two-pass assembler.
//!
//! Every instruction occupies four bytes `[opcode, operand, addr_lo,
//! addr_hi]` and executes in one cycle with at most one data-memory access.
//! Instruction fetch does not assert the read-enable line; only data
//! accesses drive `r_en`/`w_en`/`d_addr`.
//!
//! Opcode table (register operand in the low nibble, second register in the
//! high nibble):
//!
//! | op   | mnemonic        | effect                                   |
//! |------|-----------------|------------------------------------------|
//! | 0x00 | `HALT`          | stop; also the contents of erased memory |
//! | 0x01 | `NOP`           |                                          |
//! | 0x02 | `MOVI r, imm`   | `r = imm` (16-bit immediate in addr)     |
//! | 0x03 | `LOAD r, addr`  | `r = mem[addr]` (byte, zero-extended)    |
//! | 0x04 | `STORE r, addr` | `mem[addr] = low_byte(r)`                |
//! | 0x05 | `ADD rd, rs`    | `rd += rs`, sets Z                       |
//! | 0x06 | `SUB rd, rs`    | `rd -= rs`, sets Z                       |
//! | 0x07 | `CMP rd, rs`    | sets Z from `rd == rs`                   |
//! | 0x08 | `JMP addr`      |                                          |
//! | 0x09 | `JZ addr`       | jump when Z                              |
//! | 0x0A | `CALL addr`     | push return address, jump                |
//! | 0x0B | `RET`           | pop return address                       |
//! | 0x0C | `EINT`          | enable interrupt delivery                |
//! | 0x0D | `DINT`          | disable interrupt delivery               |
//!
//! Assembly text is one instruction per line with `;` or `#` comments,
//! optional `label:` definitions, a `.org 0xNNNN` directive for the load
//! address and `.entry <label|addr>` for the start point.

use std::collections::HashMap;

use thiserror::Error;

pub const INSTR_SIZE: u16 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instr {
    Halt,
    Nop,
    Movi { rd: u8, imm: u16 },
    Load { rd: u8, addr: u16 },
    Store { rs: u8, addr: u16 },
    Add { rd: u8, rs: u8 },
    Sub { rd: u8, rs: u8 },
    Cmp { rd: u8, rs: u8 },
    Jmp { addr: u16 },
    Jz { addr: u16 },
    Call { addr: u16 },
    Ret,
    Eint,
    Dint,
}

impl Instr {
    pub fn encode(&self) -> [u8; 4] {
        let (op, operand, addr) = match *self {
            Instr::Halt => (0x00, 0, 0),
            Instr::Nop => (0x01, 0, 0),
            Instr::Movi { rd, imm } => (0x02, rd, imm),
            Instr::Load { rd, addr } => (0x03, rd, addr),
            Instr::Store { rs, addr } => (0x04, rs, addr),
            Instr::Add { rd, rs } => (0x05, rd | rs << 4, 0),
            Instr::Sub { rd, rs } => (0x06, rd | rs << 4, 0),
            Instr::Cmp { rd, rs } => (0x07, rd | rs << 4, 0),
            Instr::Jmp { addr } => (0x08, 0, addr),
            Instr::Jz { addr } => (0x09, 0, addr),
            Instr::Call { addr } => (0x0A, 0, addr),
            Instr::Ret => (0x0B, 0, 0),
            Instr::Eint => (0x0C, 0, 0),
            Instr::Dint => (0x0D, 0, 0),
        };
        [op, operand, addr as u8, (addr >> 8) as u8]
    }

    pub fn decode(bytes: [u8; 4]) -> Result<Instr, u8> {
        let operand = bytes[1];
        let addr = bytes[2] as u16 | (bytes[3] as u16) << 8;
        let rd = operand & 0x0F;
        let rs = operand >> 4;
        Ok(match bytes[0] {
            0x00 => Instr::Halt,
            0x01 => Instr::Nop,
            0x02 => Instr::Movi { rd, imm: addr },
            0x03 => Instr::Load { rd, addr },
            0x04 => Instr::Store { rs: rd, addr },
            0x05 => Instr::Add { rd, rs },
            0x06 => Instr::Sub { rd, rs },
            0x07 => Instr::Cmp { rd, rs },
            0x08 => Instr::Jmp { addr },
            0x09 => Instr::Jz { addr },
            0x0A => Instr::Call { addr },
            0x0B => Instr::Ret,
            0x0C => Instr::Eint,
            0x0D => Instr::Dint,
            bad => return Err(bad),
        })
    }
}

/// An assembled program image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub origin: u16,
    pub entry: u16,
    pub bytes: Vec<u8>,
}

impl Program {
    pub fn from_instrs(origin: u16, instrs: &[Instr]) -> Program {
        let mut bytes = Vec::with_capacity(instrs.len() * 4);
        for i in instrs {
            bytes.extend_from_slice(&i.encode());
        }
        Program { origin, entry: origin, bytes }
    }

    pub fn end(&self) -> u32 {
        self.origin as u32 + self.bytes.len() as u32
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct AsmError {
    pub line: usize,
    pub msg: String,
}

const DEFAULT_ORIGIN: u16 = 0x0200;

enum Operand {
    None,
    RegReg(u8, u8),
    RegAddr(u8, String),
    Addr(String),
}

/// Assembles program text. Labels resolve to instruction addresses.
pub fn assemble(text: &str) -> Result<Program, AsmError> {
    struct Line {
        number: usize,
        mnemonic: String,
        operand: Operand,
    }

    let err = |line: usize, msg: String| AsmError { line, msg };
    let mut origin: Option<u16> = None;
    let mut entry_spec: Option<(usize, String)> = None;
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut lines: Vec<Line> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let number = idx + 1;
        let mut code = raw;
        for sep in [';', '#'] {
            if let Some(pos) = code.find(sep) {
                code = &code[..pos];
            }
        }
        let mut code = code.trim();
        // Peel leading label definitions.
        while let Some(colon) = code.find(':') {
            let (label, rest) = code.split_at(colon);
            let label = label.trim();
            if label.is_empty()
                || !label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_')
                || label.chars().next().unwrap().is_ascii_digit()
            {
                return Err(err(number, format!("bad label `{label}`")));
            }
            if labels.insert(label.to_string(), lines.len()).is_some() {
                return Err(err(number, format!("duplicate label `{label}`")));
            }
            code = rest[1..].trim();
        }
        if code.is_empty() {
            continue;
        }
        let (mnemonic, rest) = match code.split_once(char::is_whitespace) {
            Some((m, r)) => (m, r.trim()),
            None => (code, ""),
        };
        let mnemonic_up = mnemonic.to_ascii_uppercase();
        if mnemonic_up == ".ORG" {
            let value = parse_number(rest).ok_or_else(|| err(number, format!("bad .org `{rest}`")))?;
            origin = Some(value);
            continue;
        }
        if mnemonic_up == ".ENTRY" {
            entry_spec = Some((number, rest.to_string()));
            continue;
        }
        let args: Vec<&str> = if rest.is_empty() {
            Vec::new()
        } else {
            rest.split(',').map(str::trim).collect()
        };
        let operand = match mnemonic_up.as_str() {
            "HALT" | "NOP" | "RET" | "EINT" | "DINT" => {
                if !args.is_empty() {
                    return Err(err(number, format!("{mnemonic_up} takes no operands")));
                }
                Operand::None
            }
            "MOVI" | "LOAD" | "STORE" => {
                if args.len() != 2 {
                    return Err(err(number, format!("{mnemonic_up} needs `r, value`")));
                }
                let reg = parse_reg(args[0]).ok_or_else(|| err(number, format!("bad register `{}`", args[0])))?;
                Operand::RegAddr(reg, args[1].to_string())
            }
            "ADD" | "SUB" | "CMP" => {
                if args.len() != 2 {
                    return Err(err(number, format!("{mnemonic_up} needs `rd, rs`")));
                }
                let rd = parse_reg(args[0]).ok_or_else(|| err(number, format!("bad register `{}`", args[0])))?;
                let rs = parse_reg(args[1]).ok_or_else(|| err(number, format!("bad register `{}`", args[1])))?;
                Operand::RegReg(rd, rs)
            }
            "JMP" | "JZ" | "CALL" => {
                if args.len() != 1 {
                    return Err(err(number, format!("{mnemonic_up} needs one target")));
                }
                Operand::Addr(args[0].to_string())
            }
            other => return Err(err(number, format!("unknown mnemonic `{other}`"))),
        };
        lines.push(Line { number, mnemonic: mnemonic_up, operand });
    }

    let origin = origin.unwrap_or(DEFAULT_ORIGIN);
    let resolve = |token: &str, line: usize| -> Result<u16, AsmError> {
        if let Some(v) = parse_number(token) {
            return Ok(v);
        }
        labels
            .get(token)
            .map(|&i| origin.wrapping_add(i as u16 * INSTR_SIZE))
            .ok_or_else(|| err(line, format!("unknown label or number `{token}`")))
    };

    let mut instrs = Vec::with_capacity(lines.len());
    for line in &lines {
        let i = match (&line.mnemonic[..], &line.operand) {
            ("HALT", _) => Instr::Halt,
            ("NOP", _) => Instr::Nop,
            ("RET", _) => Instr::Ret,
            ("EINT", _) => Instr::Eint,
            ("DINT", _) => Instr::Dint,
            ("MOVI", Operand::RegAddr(r, v)) => Instr::Movi { rd: *r, imm: resolve(v, line.number)? },
            ("LOAD", Operand::RegAddr(r, v)) => Instr::Load { rd: *r, addr: resolve(v, line.number)? },
            ("STORE", Operand::RegAddr(r, v)) => Instr::Store { rs: *r, addr: resolve(v, line.number)? },
            ("ADD", Operand::RegReg(rd, rs)) => Instr::Add { rd: *rd, rs: *rs },
            ("SUB", Operand::RegReg(rd, rs)) => Instr::Sub { rd: *rd, rs: *rs },
            ("CMP", Operand::RegReg(rd, rs)) => Instr::Cmp { rd: *rd, rs: *rs },
            ("JMP", Operand::Addr(v)) => Instr::Jmp { addr: resolve(v, line.number)? },
            ("JZ", Operand::Addr(v)) => Instr::Jz { addr: resolve(v, line.number)? },
            ("CALL", Operand::Addr(v)) => Instr::Call { addr: resolve(v, line.number)? },
            _ => unreachable!("operand shape checked in pass one"),
        };
        instrs.push(i);
    }

    let entry = match entry_spec {
        Some((line, token)) => resolve(&token, line)?,
        None => origin,
    };
    let mut program = Program::from_instrs(origin, &instrs);
    program.entry = entry;
    Ok(program)
}

fn parse_reg(token: &str) -> Option<u8> {
    let rest = token.strip_prefix('r').or_else(|| token.strip_prefix('R'))?;
    let n: u8 = rest.parse().ok()?;
    (n < 16).then_some(n)
}

fn parse_number(token: &str) -> Option<u16> {
    let token = token.trim();
    let v = if let Some(hexpart) = token.strip_prefix("0x").or_else(|| token.strip_prefix("0X")) {
        u32::from_str_radix(hexpart, 16).ok()?
    } else {
        token.parse::<u32>().ok()?
    };
    (v <= 0xFFFF).then_some(v as u16)
}
