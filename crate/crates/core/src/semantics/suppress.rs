use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::SemanticCategory;
use crate::detect::{Indicator, Rule};
use crate::ir::flow::DefUse;
use crate::ir::{Opcode, Operand, Program};

/// Silences findings of `rule` whose arithmetic operands all load state
/// variables labeled with one of `categories`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuppressionRule {
    pub id: String,
    pub rule: Rule,
    pub categories: BTreeSet<SemanticCategory>,
}

pub fn default_suppression_rules() -> Vec<SuppressionRule> {
    vec![SuppressionRule {
        id: "overflow-balance-arith".into(),
        rule: Rule::Overflow,
        categories: BTreeSet::from([SemanticCategory::BalanceMapping, SemanticCategory::SupplyUint]),
    }]
}

fn operand_label(program: &Program<'_>, du: &DefUse, ind: &Indicator, op: &Operand) -> Option<SemanticCategory> {
    let Operand::Value(v) = op else { return None };
    let load = program.instr(du.sole_def(*v)?);
    if load.opcode != Opcode::Sload {
        return None;
    }
    let f = program.func_of(ind.block);
    program.state_var(program.state_of(f, load)?).label
}

/// The id of the first rule that silences `ind`, if any.
pub fn suppression_for<'r>(program: &Program<'_>, rules: &'r [SuppressionRule], ind: &Indicator) -> Option<&'r str> {
    let inst = program.instr(ind.site);
    if inst.operands.is_empty() {
        return None;
    }
    let du = DefUse::new(program, program.func_of(ind.block));
    rules
        .iter()
        .filter(|r| r.rule == ind.rule)
        .find(|r| {
            inst.operands
                .iter()
                .all(|op| operand_label(program, &du, ind, op).is_some_and(|c| r.categories.contains(&c)))
        })
        .map(|r| r.id.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::detect_indicators;
    use crate::graphs::{build_callgraph, Bindings};
    use crate::ir::parse_ir;

    fn suppressed(labels: (&str, &str)) -> Vec<Option<String>> {
        let src = format!(
            "\
contract Token
statevar balances slot=0 kind=mapping{}
statevar frozen slot=1 kind=mapping{}
function total public(a:address)
block b0
  v0 = SLOAD $balances[%a]
  v1 = SLOAD $frozen[%a]
  v2 = ADD v0 v1
  RETURN v2
",
            labels.0, labels.1
        );
        let u = parse_ir(&src).unwrap();
        let p = Program::new(&u);
        let cg = build_callgraph(&p, &Bindings::new());
        let rules = default_suppression_rules();
        detect_indicators(&p, &cg)
            .iter()
            .map(|i| suppression_for(&p, &rules, i).map(str::to_string))
            .collect()
    }

    #[test]
    fn balance_plus_balance_is_suppressed() {
        let l = " label=BalanceMapping";
        assert_eq!(suppressed((l, l)), vec![Some("overflow-balance-arith".to_string())]);
    }

    #[test]
    fn one_unlabeled_operand_keeps_finding() {
        assert_eq!(suppressed((" label=BalanceMapping", "")), vec![None]);
        assert_eq!(suppressed(("", "")), vec![None]);
    }

    #[test]
    fn other_rules_are_untouched() {
        let mut rules = default_suppression_rules();
        rules[0].rule = Rule::Reentrancy;
        let l = " label=BalanceMapping";
        let src = format!("contract A\nstatevar b slot=0 kind=mapping{l}\nfunction f public(a:address)\nblock b0\n  v0 = SLOAD $b[%a]\n  v1 = ADD v0 v0\n  RETURN v1\n");
        let u = parse_ir(&src).unwrap();
        let p = Program::new(&u);
        let cg = build_callgraph(&p, &Bindings::new());
        let inds = detect_indicators(&p, &cg);
        assert!(inds.iter().all(|i| suppression_for(&p, &rules, i).is_none()));
    }
}
