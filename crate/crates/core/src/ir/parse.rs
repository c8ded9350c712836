//! Line-oriented textual IR reader.
//!
//! ```text
//! ir-version 1
//! contract FundsHandler @0x00000000000000000000000000000000000000aa
//! statevar refunds slot=3 kind=mapping label=BalanceMapping
//! function recordBid public(bidder:address)
//! block b0
//!   v0 = CALLVALUE
//!   v1 = SLOAD $refunds[%bidder]
//!   v2 = ADD v1 v0
//!   SSTORE $refunds[%bidder] v2
//!   STOP
//! ```
//!
//! `#` starts a comment. Blank lines are ignored.

use std::collections::HashSet;

use super::model::*;
use super::validate::{validate, ViolationKind};
use super::IrError;

pub const IR_VERSION: u32 = 1;

/// Parses and validates an IR universe.
pub fn parse_ir(text: &str) -> Result<Universe, IrError> {
    let universe = parse_unvalidated(text)?;
    let violations = validate(&universe);
    if violations.is_empty() {
        return Ok(universe);
    }
    if let Some(v) = violations
        .iter()
        .find(|v| v.kind == ViolationKind::UseBeforeDef)
    {
        return Err(IrError::UndefinedValueUse {
            location: v.location.clone(),
            message: v.message.clone(),
        });
    }
    Err(IrError::Invalid(violations))
}

/// Parses without running [`validate`]; syntax errors and duplicate block
/// labels are still reported.
pub fn parse_unvalidated(text: &str) -> Result<Universe, IrError> {
    let mut p = Parser::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        p.line(line, content)?;
    }
    Ok(Universe::new(p.finish()))
}

#[derive(Default)]
struct Parser {
    contracts: Vec<Contract>,
    seen_version: bool,
    seen_any: bool,
    block_labels: HashSet<BlockLabel>,
}

fn syntax(line: usize, message: impl Into<String>) -> IrError {
    IrError::Syntax {
        line,
        message: message.into(),
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

impl Parser {
    fn finish(self) -> Vec<Contract> {
        self.contracts
    }

    fn line(&mut self, line: usize, content: &str) -> Result<(), IrError> {
        let mut words = content.split_whitespace();
        let head = words.next().unwrap_or_default();
        match head {
            "ir-version" => {
                if self.seen_version || self.seen_any {
                    return Err(syntax(line, "`ir-version` must be the first line"));
                }
                let v: u32 = words
                    .next()
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| syntax(line, "expected version number"))?;
                if v != IR_VERSION || words.next().is_some() {
                    return Err(syntax(line, format!("unsupported IR version {v}")));
                }
                self.seen_version = true;
                Ok(())
            }
            "contract" => {
                self.seen_any = true;
                self.contract(line, words.collect())
            }
            "statevar" => {
                self.seen_any = true;
                self.statevar(line, words.collect())
            }
            "function" => {
                self.seen_any = true;
                self.function(line, content["function".len()..].trim())
            }
            "block" => {
                self.seen_any = true;
                self.block(line, words.collect())
            }
            _ => {
                self.seen_any = true;
                self.instruction(line, content)
            }
        }
    }

    fn current_contract(&mut self, line: usize) -> Result<&mut Contract, IrError> {
        self.contracts
            .last_mut()
            .ok_or_else(|| syntax(line, "declaration outside of a contract"))
    }

    fn current_function(&mut self, line: usize) -> Result<&mut Function, IrError> {
        self.current_contract(line)?
            .functions
            .last_mut()
            .ok_or_else(|| syntax(line, "block outside of a function"))
    }

    fn contract(&mut self, line: usize, words: Vec<&str>) -> Result<(), IrError> {
        let (name, addr) = match words.as_slice() {
            [name] => (*name, None),
            [name, addr] => (*name, Some(*addr)),
            _ => return Err(syntax(line, "expected `contract <name> [@<address>]`")),
        };
        if !is_ident(name) {
            return Err(syntax(line, format!("bad contract name `{name}`")));
        }
        let address = match addr {
            None => None,
            Some(a) => Some(parse_address(a).ok_or_else(|| syntax(line, "bad address"))?),
        };
        let mut c = Contract::new(name);
        c.address = address;
        self.contracts.push(c);
        Ok(())
    }

    fn statevar(&mut self, line: usize, words: Vec<&str>) -> Result<(), IrError> {
        let Some((name, attrs)) = words.split_first() else {
            return Err(syntax(line, "expected `statevar <name> slot=<n> kind=<k>`"));
        };
        if !is_ident(name) {
            return Err(syntax(line, format!("bad state variable name `{name}`")));
        }
        let (mut slot, mut kind, mut label) = (None, None, None);
        for attr in attrs {
            let (k, v) = attr
                .split_once('=')
                .ok_or_else(|| syntax(line, format!("expected key=value, got `{attr}`")))?;
            match k {
                "slot" => slot = Some(parse_word(v).ok_or_else(|| syntax(line, "bad slot"))?),
                "kind" => {
                    kind = Some(
                        v.parse::<StateKind>()
                            .map_err(|_| syntax(line, format!("bad kind `{v}`")))?,
                    )
                }
                "label" => {
                    label = Some(v.parse().map_err(|e| syntax(line, format!("{e}")))?);
                }
                _ => return Err(syntax(line, format!("unknown attribute `{k}`"))),
            }
        }
        let var = StateVar {
            name: name.to_string(),
            slot: slot.ok_or_else(|| syntax(line, "missing slot="))?,
            kind: kind.ok_or_else(|| syntax(line, "missing kind="))?,
            label,
        };
        self.current_contract(line)?.state_vars.push(var);
        Ok(())
    }

    fn function(&mut self, line: usize, rest: &str) -> Result<(), IrError> {
        let bad = || syntax(line, "expected `function <name> <public|private>(<p:type>,...)`");
        let (name, sig) = rest.split_once(char::is_whitespace).ok_or_else(bad)?;
        let sig = sig.trim();
        let open = sig.find('(').ok_or_else(bad)?;
        let close = sig.rfind(')').ok_or_else(bad)?;
        if close != sig.len() - 1 || close < open {
            return Err(bad());
        }
        let visibility = match sig[..open].trim() {
            "public" => Visibility::Public,
            "private" => Visibility::Private,
            other => return Err(syntax(line, format!("bad visibility `{other}`"))),
        };
        let mut params = Vec::new();
        for p in sig[open + 1..close].split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (pname, ty) = p
                .split_once(':')
                .ok_or_else(|| syntax(line, format!("expected <name>:<type>, got `{p}`")))?;
            let (pname, ty) = (pname.trim(), ty.trim());
            if !is_ident(pname) || !is_ident(ty) {
                return Err(syntax(line, format!("bad parameter `{p}`")));
            }
            if params.iter().any(|q: &Param| q.name == pname) {
                return Err(syntax(line, format!("duplicate parameter `{pname}`")));
            }
            params.push(Param {
                name: pname.to_string(),
                ty: ty.to_string(),
            });
        }
        if !is_ident(name) {
            return Err(syntax(line, format!("bad function name `{name}`")));
        }
        self.block_labels.clear();
        self.current_contract(line)?.functions.push(Function {
            name: name.to_string(),
            visibility,
            params,
            entry: BlockLabel(u32::MAX),
            blocks: Vec::new(),
        });
        Ok(())
    }

    fn block(&mut self, line: usize, words: Vec<&str>) -> Result<(), IrError> {
        let [label] = words.as_slice() else {
            return Err(syntax(line, "expected `block b<N>`"));
        };
        let label = parse_label(label).ok_or_else(|| syntax(line, "expected `block b<N>`"))?;
        let contract = self.contracts.last().map(|c| c.name.clone()).unwrap_or_default();
        let dup = !self.block_labels.insert(label);
        let f = self.current_function(line)?;
        if dup {
            return Err(IrError::DuplicateBlockId {
                id: format!("{contract}.{}.{label}", f.name),
            });
        }
        if f.blocks.is_empty() {
            f.entry = label;
        }
        f.blocks.push(BasicBlock {
            label,
            instructions: Vec::new(),
        });
        Ok(())
    }

    fn instruction(&mut self, line: usize, content: &str) -> Result<(), IrError> {
        let f = self.current_function(line)?;
        let params: Vec<String> = f.params.iter().map(|p| p.name.clone()).collect();
        let block = f
            .blocks
            .last_mut()
            .ok_or_else(|| syntax(line, "instruction outside of a block"))?;
        let inst = parse_instruction(line, content, &params)?;
        block.instructions.push(inst);
        Ok(())
    }
}

pub(crate) fn parse_address(s: &str) -> Option<[u8; 20]> {
    let hex_str = s.strip_prefix('@').unwrap_or(s);
    let hex_str = hex_str.strip_prefix("0x")?;
    let bytes = hex::decode(hex_str).ok()?;
    bytes.try_into().ok()
}

fn parse_label(s: &str) -> Option<BlockLabel> {
    let n = s.strip_prefix('b')?;
    if n.is_empty() || !n.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    n.parse().ok().map(BlockLabel)
}

fn parse_value(s: &str) -> Option<ValueId> {
    let n = s.strip_prefix('v')?;
    if n.is_empty() || !n.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    n.parse().ok().map(ValueId)
}

fn parse_operand(line: usize, s: &str, params: &[String]) -> Result<Operand, IrError> {
    if let Some(v) = parse_value(s) {
        return Ok(Operand::Value(v));
    }
    if let Some(p) = s.strip_prefix('%') {
        return params
            .iter()
            .position(|q| q == p)
            .map(|i| Operand::Param(i as u32))
            .ok_or_else(|| syntax(line, format!("unknown parameter `%{p}`")));
    }
    parse_word(s)
        .map(Operand::Lit)
        .ok_or_else(|| syntax(line, format!("bad operand `{s}`")))
}

fn parse_state_ref(line: usize, s: &str, params: &[String]) -> Result<StateRef, IrError> {
    let body = &s[1..];
    let (name, key) = match body.find('[') {
        Some(open) => {
            let inner = body[open + 1..]
                .strip_suffix(']')
                .ok_or_else(|| syntax(line, format!("unterminated key in `{s}`")))?;
            (&body[..open], Some(parse_operand(line, inner, params)?))
        }
        None => (body, None),
    };
    if !is_ident(name) {
        return Err(syntax(line, format!("bad state reference `{s}`")));
    }
    Ok(StateRef {
        var: name.to_string(),
        key,
    })
}

fn parse_callee(line: usize, s: &str, params: &[String]) -> Result<Callee, IrError> {
    match s.split_once('.') {
        Some((left, func)) => {
            if !is_ident(func) {
                return Err(syntax(line, format!("bad call target `{s}`")));
            }
            match parse_operand(line, left, params) {
                Ok(address) => Ok(Callee::Dynamic {
                    address,
                    function: Some(func.to_string()),
                }),
                Err(_) if is_ident(left) => Ok(Callee::Named {
                    contract: left.to_string(),
                    function: func.to_string(),
                }),
                Err(e) => Err(e),
            }
        }
        None => Ok(Callee::Dynamic {
            address: parse_operand(line, s, params)?,
            function: None,
        }),
    }
}

fn parse_instruction(line: usize, content: &str, params: &[String]) -> Result<Instruction, IrError> {
    let (result, rhs) = match content.split_once('=') {
        Some((lhs, rhs)) => {
            let lhs = lhs.trim();
            let v = parse_value(lhs)
                .ok_or_else(|| syntax(line, format!("bad result name `{lhs}`")))?;
            (Some(v), rhs.trim())
        }
        None => (None, content),
    };
    let mut words = rhs.split_whitespace();
    let mnemonic = words.next().ok_or_else(|| syntax(line, "missing opcode"))?;
    let opcode: Opcode = mnemonic.parse().map_err(|_| IrError::UnknownOpcode {
        line,
        opcode: mnemonic.to_string(),
    })?;
    let args: Vec<&str> = words.collect();
    let mut inst = Instruction::new(opcode);
    inst.result = result;
    if result.is_some()
        && (opcode.is_terminator() || matches!(opcode, Opcode::Sstore | Opcode::Mstore))
    {
        return Err(syntax(line, format!("{opcode} does not produce a value")));
    }
    let operands = |xs: &[&str]| -> Result<Vec<Operand>, IrError> {
        xs.iter().map(|x| parse_operand(line, x, params)).collect()
    };
    match opcode {
        Opcode::Jump => {
            let [t] = args.as_slice() else {
                return Err(syntax(line, "expected `JUMP b<N>`"));
            };
            inst.targets = vec![parse_label(t).ok_or_else(|| syntax(line, "bad jump target"))?];
        }
        Opcode::JumpI => {
            let [c, t, f] = args.as_slice() else {
                return Err(syntax(line, "expected `JUMPI <cond> b<T> b<F>`"));
            };
            inst.operands = vec![parse_operand(line, c, params)?];
            inst.targets = vec![
                parse_label(t).ok_or_else(|| syntax(line, "bad jump target"))?,
                parse_label(f).ok_or_else(|| syntax(line, "bad jump target"))?,
            ];
        }
        Opcode::Sload => match args.as_slice() {
            [r] if r.starts_with('$') => inst.state_ref = Some(parse_state_ref(line, r, params)?),
            [k] => inst.operands = vec![parse_operand(line, k, params)?],
            _ => return Err(syntax(line, "expected `SLOAD $<var>[<key>]` or `SLOAD <slot>`")),
        },
        Opcode::Sstore => match args.as_slice() {
            [r, v] if r.starts_with('$') => {
                inst.state_ref = Some(parse_state_ref(line, r, params)?);
                inst.operands = vec![parse_operand(line, v, params)?];
            }
            [k, v] => inst.operands = operands(&[k, v])?,
            _ => return Err(syntax(line, "expected `SSTORE $<var>[<key>] <value>`")),
        },
        Opcode::CallValueCall => {
            let [amount, target, rest @ ..] = args.as_slice() else {
                return Err(syntax(line, "expected `CALLVALUECALL <amount> <target> <args>`"));
            };
            inst.operands = operands(&[amount])?;
            inst.operands.extend(operands(rest)?);
            inst.callee = Some(parse_callee(line, target, params)?);
        }
        Opcode::Call | Opcode::StaticCall | Opcode::DelegateCall => {
            let [target, rest @ ..] = args.as_slice() else {
                return Err(syntax(line, format!("expected `{opcode} <target> <args>`")));
            };
            inst.operands = operands(rest)?;
            inst.callee = Some(parse_callee(line, target, params)?);
        }
        Opcode::InternalCall => {
            let [func, rest @ ..] = args.as_slice() else {
                return Err(syntax(line, "expected `INTERNALCALL <function> <args>`"));
            };
            if !is_ident(func) {
                return Err(syntax(line, format!("bad function name `{func}`")));
            }
            inst.operands = operands(rest)?;
            inst.callee = Some(Callee::Internal {
                function: func.to_string(),
            });
        }
        _ => inst.operands = operands(&args)?,
    }
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_an_empty_universe() {
        assert_eq!(parse_ir("").unwrap(), Universe::default());
        assert_eq!(parse_ir("ir-version 1\n# nothing\n").unwrap(), Universe::default());
    }

    #[test]
    fn rejects_unknown_opcode() {
        let text = "contract A\nfunction f public()\nblock b0\n  v0 = FROB 1\n  STOP\n";
        match parse_ir(text) {
            Err(IrError::UnknownOpcode { line, opcode }) => {
                assert_eq!(line, 4);
                assert_eq!(opcode, "FROB");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_block() {
        let text = "contract A\nfunction f public()\nblock b0\n  STOP\nblock b0\n  STOP\n";
        assert!(matches!(
            parse_ir(text),
            Err(IrError::DuplicateBlockId { id }) if id == "A.f.b0"
        ));
    }

    #[test]
    fn rejects_use_before_def() {
        let text = "contract A\nfunction f public()\nblock b0\n  v1 = ADD v0 1\n  STOP\n";
        assert!(matches!(parse_ir(text), Err(IrError::UndefinedValueUse { .. })));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let text = "contract A\nstatevar x slot=zz kind=scalar\n";
        assert!(matches!(parse_ir(text), Err(IrError::Syntax { line: 2, .. })));
        assert!(matches!(
            parse_ir("ir-version 2\n"),
            Err(IrError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_ir("statevar x slot=0 kind=scalar\n"),
            Err(IrError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_ir("contract A\nstatevar x slot=0 kind=scalar label=Money\n"),
            Err(IrError::Syntax { line: 2, .. })
        ));
    }

    #[test]
    fn parses_operand_forms() {
        let text = "\
contract A
statevar m slot=1 kind=mapping
function f public(who:address, amt:uint)
block b0
  v0 = SLOAD $m[%who]
  v1 = ADD v0 %amt
  SSTORE $m[%who] v1
  v2 = CONST 0xffffffffffffffffffffffffffffffffff
  v3 = SLOAD v2
  CALLVALUECALL v1 v3.withdraw %who
  v4 = CALL B.g v1 7
  RETURN v4
";
        let u = parse_ir(text).unwrap();
        let f = &u.contracts[0].functions[0];
        let insts = &f.blocks[0].instructions;
        assert_eq!(insts.len(), 8);
        assert_eq!(
            insts[0].state_ref,
            Some(StateRef {
                var: "m".into(),
                key: Some(Operand::Param(0))
            })
        );
        assert_eq!(insts[1].operands, vec![Operand::Value(ValueId(0)), Operand::Param(1)]);
        assert_eq!(
            insts[5].callee,
            Some(Callee::Dynamic {
                address: Operand::Value(ValueId(3)),
                function: Some("withdraw".into())
            })
        );
        assert_eq!(
            insts[6].callee,
            Some(Callee::Named {
                contract: "B".into(),
                function: "g".into()
            })
        );
        assert_eq!(insts[6].operands.len(), 2);
    }
}
