//! Deterministic pattern-matching of a parsed formula onto one of the five
//! bias variants.

use super::{
    BiasClass, Constraint, FormulaAst, FormulaError, Index, RelOp, Symbol, SymbolKind,
};

/// The relation shape shared by every classifiable formula: a single
/// conditioned symbol, identical on both sides, with a scalar value each.
struct Shape<'a> {
    target: &'a Symbol,
    cond: &'a Symbol,
    lhs_value: &'a Symbol,
    rhs_value: &'a Symbol,
}

fn shape(ast: &FormulaAst) -> Result<Shape<'_>, FormulaError> {
    let rel = &ast.relation;
    let reject = |reason: &str| FormulaError::Unclassifiable {
        reason: reason.to_string(),
    };
    if rel.lhs.conditions.len() != 1 || rel.rhs.conditions.len() != 1 {
        return Err(reject("each side must condition on exactly one symbol"));
    }
    let (lhs_sym, lhs_val) = &rel.lhs.conditions[0];
    let (rhs_sym, rhs_val) = &rel.rhs.conditions[0];
    if lhs_sym != rhs_sym {
        return Err(reject("both sides must condition the same symbol"));
    }
    let (Some(lhs_value), Some(rhs_value)) = (lhs_val.as_ref(), rhs_val.as_ref()) else {
        return Err(reject("conditions must assign scalar values"));
    };
    Ok(Shape {
        target: &rel.lhs.target,
        cond: lhs_sym,
        lhs_value,
        rhs_value,
    })
}

fn as_int(sym: &Symbol) -> Option<i64> {
    sym.name.parse().ok()
}

/// The two condition values are attested distinct: an explicit `a != b`
/// constraint covers them, or they are distinct integer literals.
fn consts_distinct(ast: &FormulaAst, s: &Shape) -> bool {
    if s.lhs_value == s.rhs_value {
        return false;
    }
    if let (Some(a), Some(b)) = (as_int(s.lhs_value), as_int(s.rhs_value)) {
        if a != b {
            return true;
        }
    }
    ast.quantifier.constraints.iter().any(|c| match c {
        Constraint::ConstDistinct(a, b) => {
            (a == s.lhs_value && b == s.rhs_value) || (a == s.rhs_value && b == s.lhs_value)
        }
        _ => false,
    })
}

/// Target and conditioned indices are attested distinct: an explicit
/// `i != i'` constraint, or distinct integer subscripts.
fn indices_distinct(ast: &FormulaAst, s: &Shape) -> bool {
    match (&s.target.index, &s.cond.index) {
        (Some(Index::Literal(a)), Some(Index::Literal(b))) if a != b => return true,
        _ => {}
    }
    let (Some(ti), Some(ci)) = (&s.target.index, &s.cond.index) else {
        return false;
    };
    ast.quantifier.constraints.iter().any(|c| match c {
        Constraint::IndexDistinct(a, b) => (a == ti && b == ci) || (a == ci && b == ti),
        _ => false,
    })
}

/// Non-negated membership group of `sym`, if any.
fn group_of<'a>(ast: &'a FormulaAst, sym: &Symbol) -> Option<&'a Symbol> {
    ast.quantifier.constraints.iter().find_map(|c| match c {
        Constraint::Membership {
            symbol,
            group,
            negated: false,
        } if symbol == sym => Some(group),
        _ => None,
    })
}

/// Negated membership group of `sym`, if any.
fn excluded_group_of<'a>(ast: &'a FormulaAst, sym: &Symbol) -> Option<&'a Symbol> {
    ast.quantifier.constraints.iter().find_map(|c| match c {
        Constraint::Membership {
            symbol,
            group,
            negated: true,
        } if symbol == sym => Some(group),
        _ => None,
    })
}

fn groups_distinct(ast: &FormulaAst, ga: &Symbol, gb: &Symbol) -> bool {
    if ga != gb {
        return true;
    }
    ast.quantifier.constraints.iter().any(|c| match c {
        Constraint::GroupDistinct(a, b) => (a == ga && b == gb) || (a == gb && b == ga),
        _ => false,
    })
}

/// Classify one formula into its bias variant.
///
/// The match is deterministic over (relation operator, conditioned-symbol
/// kind, membership layout): equality across distinct latents with no
/// groups is disentanglement; equality across groups is inter-group
/// combination; inequality within one group is intra-group combination;
/// a property condition yields the conditional pair, dependent (`!=`, in
/// the property group) or independent (`==`, outside it).
pub fn classify_bias(ast: &FormulaAst) -> Result<BiasClass, FormulaError> {
    let s = shape(ast)?;
    let reject = |reason: &str| FormulaError::Unclassifiable {
        reason: reason.to_string(),
    };
    let consts_ok = consts_distinct(ast, &s);

    match (ast.relation.op, s.cond.kind) {
        (RelOp::Equal, SymbolKind::LatentVar) => {
            let target_group = group_of(ast, s.target);
            let cond_group = group_of(ast, s.cond);
            match (target_group, cond_group) {
                (Some(ga), Some(gb)) => {
                    if !consts_ok {
                        return Err(reject("condition values are not constrained distinct"));
                    }
                    if groups_distinct(ast, ga, gb) {
                        Ok(BiasClass::CombinationInterGroup)
                    } else {
                        Err(reject(
                            "equality with both latents in one group matches no pattern",
                        ))
                    }
                }
                (None, None) => {
                    if !indices_distinct(ast, &s) {
                        return Err(reject("latent indices are not constrained distinct"));
                    }
                    if !consts_ok {
                        return Err(reject("condition values are not constrained distinct"));
                    }
                    Ok(BiasClass::Disentanglement)
                }
                _ => Err(reject("membership must cover both latents or neither")),
            }
        }
        (RelOp::NotEqual, SymbolKind::LatentVar) => {
            let (Some(ga), Some(gb)) = (group_of(ast, s.target), group_of(ast, s.cond)) else {
                return Err(reject(
                    "inequality over latents requires both in a shared group",
                ));
            };
            if ga != gb {
                return Err(reject("inequality over latents requires one shared group"));
            }
            if !consts_ok {
                return Err(reject("condition values are not constrained distinct"));
            }
            Ok(BiasClass::CombinationIntraGroup)
        }
        (RelOp::NotEqual, SymbolKind::PropertyVar) => {
            if group_of(ast, s.target).is_none() {
                return Err(reject(
                    "dependent conditional requires the latent in the property group",
                ));
            }
            if !consts_ok {
                return Err(reject("condition values are not constrained distinct"));
            }
            Ok(BiasClass::ConditionalDependent)
        }
        (RelOp::Equal, SymbolKind::PropertyVar) => {
            if excluded_group_of(ast, s.target).is_none() {
                return Err(reject(
                    "independent conditional requires the latent outside the property group",
                ));
            }
            if !consts_ok {
                return Err(reject("condition values are not constrained distinct"));
            }
            Ok(BiasClass::ConditionalIndependent)
        }
        _ => Err(reject("unsupported operator/condition combination")),
    }
}

/// Classify a batch, preserving order. Fails on the first unclassifiable
/// formula.
pub fn classify_all(asts: &[FormulaAst]) -> Result<Vec<BiasClass>, FormulaError> {
    asts.iter().map(classify_bias).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{parse_formula, CANONICAL_FORMULAS as CANONICAL};

    #[test]
    fn canonical_formulas_classify_bijectively() {
        let mut seen = Vec::new();
        for (text, expected) in CANONICAL {
            let ast = parse_formula(text).unwrap();
            let bias = classify_bias(&ast).unwrap();
            assert_eq!(bias, expected, "for `{text}`");
            assert!(!seen.contains(&bias), "duplicate class {bias:?}");
            seen.push(bias);
        }
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn concrete_indices_classify_without_explicit_index_constraint() {
        let ast = parse_formula("P(z[1] | z[2] = a) == P(z[1] | z[2] = b) forall a != b").unwrap();
        assert_eq!(classify_bias(&ast).unwrap(), BiasClass::Disentanglement);
    }

    #[test]
    fn equal_without_constraints_is_unclassifiable() {
        let ast = parse_formula("P(z[1] | z[2] = a) == P(z[1] | z[2] = a)").unwrap();
        assert!(matches!(
            classify_bias(&ast),
            Err(FormulaError::Unclassifiable { .. })
        ));
    }

    #[test]
    fn same_group_equality_is_unclassifiable() {
        let ast = parse_formula(
            "P(z[i] | z[j] = a) == P(z[i] | z[j] = b) forall z[i] in G, z[j] in G, a != b",
        )
        .unwrap();
        assert!(classify_bias(&ast).is_err());
    }

    #[test]
    fn classify_is_total_over_parseable_formulas() {
        // Every parseable formula either classifies or raises, never panics.
        let samples = [
            "P(z[1]) == P(z[1])",
            "P(z[2] | z[3]) != P(z[2] | z[3])",
            "P(z[i] | z[i'] = a) != P(z[i] | z[i'] = b) forall i != i', a != b",
            "P(z[i] | p[k] = a) == P(z[i] | p[k] = b) forall z[i] in G[k], a != b",
        ];
        for text in samples {
            let ast = parse_formula(text).unwrap();
            let _ = classify_bias(&ast);
        }
    }

    #[test]
    fn classify_all_preserves_order() {
        let asts: Vec<_> = CANONICAL
            .iter()
            .map(|(text, _)| parse_formula(text).unwrap())
            .collect();
        let classes = classify_all(&asts).unwrap();
        let expected: Vec<_> = CANONICAL.iter().map(|(_, b)| *b).collect();
        assert_eq!(classes, expected);
    }
}
