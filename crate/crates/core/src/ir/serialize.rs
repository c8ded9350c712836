use std::fmt::Write;

use super::model::*;
use super::parse::IR_VERSION;

/// Writes the canonical text form of a universe.
///
/// Output is sorted by contract name, function name and block label, so two
/// universes that compare equal serialize identically.
pub fn serialize_ir(universe: &Universe) -> String {
    let mut canonical = universe.clone();
    canonical.canonicalize();
    let mut out = String::new();
    writeln!(out, "ir-version {IR_VERSION}").unwrap();
    for c in &canonical.contracts {
        write_contract(&mut out, c);
    }
    out
}

fn write_contract(out: &mut String, c: &Contract) {
    write!(out, "contract {}", c.name).unwrap();
    if let Some(addr) = c.address {
        write!(out, " @0x{}", hex::encode(addr)).unwrap();
    }
    out.push('\n');
    for s in &c.state_vars {
        write!(
            out,
            "statevar {} slot={} kind={}",
            s.name,
            format_word(&s.slot),
            s.kind
        )
        .unwrap();
        if let Some(label) = s.label {
            write!(out, " label={label}").unwrap();
        }
        out.push('\n');
    }
    for f in &c.functions {
        let params: Vec<String> = f.params.iter().map(|p| format!("{}:{}", p.name, p.ty)).collect();
        writeln!(out, "function {} {}({})", f.name, f.visibility, params.join(",")).unwrap();
        // The entry block is recorded as the first block in the text.
        let entry = f.blocks.iter().filter(|b| b.label == f.entry);
        let rest = f.blocks.iter().filter(|b| b.label != f.entry);
        for b in entry.chain(rest) {
            writeln!(out, "block {}", b.label).unwrap();
            for i in &b.instructions {
                writeln!(out, "  {}", format_instruction(i, f)).unwrap();
            }
        }
    }
}

pub fn format_operand(op: &Operand, f: &Function) -> String {
    match op {
        Operand::Value(v) => v.to_string(),
        Operand::Param(i) => match f.params.get(*i as usize) {
            Some(p) => format!("%{}", p.name),
            None => format!("%#{i}"),
        },
        Operand::Lit(w) => format_word(w),
    }
}

fn format_state_ref(r: &StateRef, f: &Function) -> String {
    match &r.key {
        Some(k) => format!("${}[{}]", r.var, format_operand(k, f)),
        None => format!("${}", r.var),
    }
}

fn format_callee(c: &Callee, f: &Function) -> String {
    match c {
        Callee::Named { contract, function } => format!("{contract}.{function}"),
        Callee::Dynamic {
            address,
            function: Some(func),
        } => format!("{}.{func}", format_operand(address, f)),
        Callee::Dynamic {
            address,
            function: None,
        } => format_operand(address, f),
        Callee::Internal { function } => function.clone(),
    }
}

/// Renders one instruction in the textual grammar (without indentation).
pub fn format_instruction(i: &Instruction, f: &Function) -> String {
    let mut parts: Vec<String> = Vec::new();
    if let Some(r) = i.result {
        parts.push(format!("{r} ="));
    }
    parts.push(i.opcode.mnemonic().to_string());
    let ops = |xs: &[Operand]| xs.iter().map(|o| format_operand(o, f)).collect::<Vec<_>>();
    match i.opcode {
        Opcode::Jump | Opcode::JumpI => {
            parts.extend(ops(&i.operands));
            parts.extend(i.targets.iter().map(|t| t.to_string()));
        }
        Opcode::Sload | Opcode::Sstore => {
            if let Some(r) = &i.state_ref {
                parts.push(format_state_ref(r, f));
            }
            parts.extend(ops(&i.operands));
        }
        Opcode::CallValueCall => {
            let (amount, rest) = i.operands.split_first().map_or((&[][..], &[][..]), |(a, r)| {
                (std::slice::from_ref(a), r)
            });
            parts.extend(ops(amount));
            if let Some(c) = &i.callee {
                parts.push(format_callee(c, f));
            }
            parts.extend(ops(rest));
        }
        op if op.is_call() => {
            if let Some(c) = &i.callee {
                parts.push(format_callee(c, f));
            }
            parts.extend(ops(&i.operands));
        }
        _ => parts.extend(ops(&i.operands)),
    }
    parts.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_ir;

    #[test]
    fn empty_contract_is_header_only() {
        let u = Universe::new(vec![Contract::new("Empty")]);
        assert_eq!(serialize_ir(&u), "ir-version 1\ncontract Empty\n");
    }

    #[test]
    fn output_is_sorted() {
        let text = "contract Z\ncontract A\nfunction g public()\nblock b1\n  STOP\nfunction f public()\nblock b3\n  JUMP b1\nblock b1\n  STOP\n";
        let out = serialize_ir(&parse_ir(text).unwrap());
        let expected = "ir-version 1\ncontract A\nfunction f public()\nblock b3\n  JUMP b1\nblock b1\n  STOP\nfunction g public()\nblock b1\n  STOP\ncontract Z\n";
        assert_eq!(out, expected);
    }
}
