//! Lexer and recursive-descent parser for the formula DSL.

use super::{
    Constraint, FormulaAst, FormulaError, FormulaFileError, Index, ParsedFormula, ProbTerm,
    Quantifier, RelOp, Relation, Symbol, SymbolKind,
};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Pipe,
    Comma,
    EqEq,
    NotEq,
    Eq,
    Forall,
    In,
    Not,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    offset: usize,
}

fn syntax(offset: usize, message: impl Into<String>) -> FormulaError {
    FormulaError::Syntax {
        offset,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Spanned>, FormulaError> {
    let mut toks = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(offset, ch)) = chars.peek() {
        match ch {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                toks.push(Spanned { tok: Tok::LParen, offset });
            }
            ')' => {
                chars.next();
                toks.push(Spanned { tok: Tok::RParen, offset });
            }
            '[' => {
                chars.next();
                toks.push(Spanned { tok: Tok::LBracket, offset });
            }
            ']' => {
                chars.next();
                toks.push(Spanned { tok: Tok::RBracket, offset });
            }
            '|' => {
                chars.next();
                toks.push(Spanned { tok: Tok::Pipe, offset });
            }
            ',' => {
                chars.next();
                toks.push(Spanned { tok: Tok::Comma, offset });
            }
            '=' => {
                chars.next();
                if matches!(chars.peek(), Some(&(_, '='))) {
                    chars.next();
                    toks.push(Spanned { tok: Tok::EqEq, offset });
                } else {
                    toks.push(Spanned { tok: Tok::Eq, offset });
                }
            }
            '!' => {
                chars.next();
                if matches!(chars.peek(), Some(&(_, '='))) {
                    chars.next();
                    toks.push(Spanned { tok: Tok::NotEq, offset });
                } else {
                    return Err(syntax(offset, "expected `!=`"));
                }
            }
            // Unicode aliases for the ASCII operators.
            '≠' => {
                chars.next();
                toks.push(Spanned { tok: Tok::NotEq, offset });
            }
            '∀' => {
                chars.next();
                toks.push(Spanned { tok: Tok::Forall, offset });
            }
            '∈' => {
                chars.next();
                toks.push(Spanned { tok: Tok::In, offset });
            }
            '∉' => {
                chars.next();
                toks.push(Spanned { tok: Tok::Not, offset });
                toks.push(Spanned { tok: Tok::In, offset });
            }
            c if c.is_ascii_digit() => {
                let mut digits = String::new();
                while let Some(&(_, d)) = chars.peek() {
                    if d.is_ascii_digit() {
                        digits.push(d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                let value: i64 = digits
                    .parse()
                    .map_err(|_| syntax(offset, "integer literal out of range"))?;
                toks.push(Spanned { tok: Tok::Int(value), offset });
            }
            c if c.is_alphabetic() => {
                let mut name = String::new();
                while let Some(&(_, d)) = chars.peek() {
                    if d.is_alphanumeric() {
                        name.push(d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                // Trailing primes attach to the identifier: i', G'.
                while let Some(&(_, d)) = chars.peek() {
                    if d == '\'' || d == '′' {
                        name.push('\'');
                        chars.next();
                    } else {
                        break;
                    }
                }
                let tok = match name.as_str() {
                    "forall" => Tok::Forall,
                    "in" => Tok::In,
                    "not" => Tok::Not,
                    _ => Tok::Ident(name),
                };
                toks.push(Spanned { tok, offset });
            }
            _ => return Err(syntax(offset, format!("unexpected character `{ch}`"))),
        }
    }
    Ok(toks)
}

/// A raw symbol reference before kind resolution.
#[derive(Debug, Clone)]
struct RawSymbol {
    name: String,
    index: Option<Index>,
    offset: usize,
    /// True when the subscript used explicit brackets.
    bracketed: bool,
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn new(text: &str) -> Result<Self, FormulaError> {
        let toks = lex(text)?;
        Ok(Parser {
            toks,
            pos: 0,
            end: text.len(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|s| s.offset).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), FormulaError> {
        let offset = self.offset();
        match self.next() {
            Some(s) if s.tok == want => Ok(()),
            _ => Err(syntax(offset, format!("expected {what}"))),
        }
    }

    /// `ident [ '[' (ident | int) ']' ]`
    fn parse_raw_symbol(&mut self) -> Result<RawSymbol, FormulaError> {
        let offset = self.offset();
        let name = match self.next() {
            Some(Spanned { tok: Tok::Ident(n), .. }) => n,
            _ => return Err(syntax(offset, "expected an identifier")),
        };
        let mut index = None;
        let mut bracketed = false;
        if matches!(self.peek(), Some(Tok::LBracket)) {
            self.next();
            bracketed = true;
            let idx_offset = self.offset();
            index = Some(match self.next() {
                Some(Spanned { tok: Tok::Ident(n), .. }) => Index::Free(n),
                Some(Spanned { tok: Tok::Int(v), .. }) => Index::Literal(v),
                _ => return Err(syntax(idx_offset, "expected an index inside `[ ]`")),
            });
            self.expect(Tok::RBracket, "`]`")?;
        }
        Ok(RawSymbol {
            name,
            index,
            offset,
            bracketed,
        })
    }

    /// Resolve a symbol in variable position (probability target, condition
    /// variable, membership subject): must be a latent or property variable.
    fn resolve_variable(&self, raw: &RawSymbol) -> Result<Symbol, FormulaError> {
        let kind = if raw.name.starts_with('z') {
            SymbolKind::LatentVar
        } else if raw.name.starts_with('p') {
            SymbolKind::PropertyVar
        } else {
            return Err(FormulaError::UnknownSymbolKind {
                name: raw.name.clone(),
                offset: raw.offset,
            });
        };
        Ok(Symbol {
            kind,
            name: raw.name.clone(),
            index: raw.index.clone(),
        })
    }

    /// Resolve a symbol in scalar-value position. Uppercase identifiers are
    /// reserved for groups; indexed names are not scalars.
    fn resolve_scalar(&self, raw: &RawSymbol) -> Result<Symbol, FormulaError> {
        let first = raw.name.chars().next().unwrap_or(' ');
        if raw.bracketed || first.is_uppercase() {
            return Err(FormulaError::UnknownSymbolKind {
                name: raw.name.clone(),
                offset: raw.offset,
            });
        }
        Ok(Symbol {
            kind: SymbolKind::ScalarConst,
            name: raw.name.clone(),
            index: None,
        })
    }

    /// `P '(' symbol [ '|' cond (',' cond)* ] ')'`
    fn parse_prob_term(&mut self) -> Result<ProbTerm, FormulaError> {
        let offset = self.offset();
        match self.next() {
            Some(Spanned { tok: Tok::Ident(p), .. }) if p == "P" || p == "p" => {}
            _ => return Err(syntax(offset, "expected a probability term `P(...)`")),
        }
        self.expect(Tok::LParen, "`(`")?;
        let raw_target = self.parse_raw_symbol()?;
        let target = self.resolve_variable(&raw_target)?;
        if target.kind != SymbolKind::LatentVar {
            return Err(syntax(
                raw_target.offset,
                "probability target must be a latent variable (z*)",
            ));
        }

        let mut conditions = Vec::new();
        if matches!(self.peek(), Some(Tok::Pipe)) {
            self.next();
            loop {
                let raw_sym = self.parse_raw_symbol()?;
                let sym = self.resolve_variable(&raw_sym)?;
                let mut value = None;
                if matches!(self.peek(), Some(Tok::Eq)) {
                    self.next();
                    let val_offset = self.offset();
                    value = Some(match self.peek() {
                        Some(Tok::Int(v)) => {
                            let v = *v;
                            self.next();
                            Symbol {
                                kind: SymbolKind::ScalarConst,
                                name: v.to_string(),
                                index: None,
                            }
                        }
                        Some(Tok::Ident(_)) => {
                            let raw_val = self.parse_raw_symbol()?;
                            self.resolve_scalar(&raw_val)?
                        }
                        _ => return Err(syntax(val_offset, "expected a scalar value after `=`")),
                    });
                }
                if conditions.iter().any(|(s, _): &(Symbol, _)| *s == sym) {
                    return Err(syntax(
                        raw_sym.offset,
                        format!("duplicate condition on `{}`", sym.render()),
                    ));
                }
                conditions.push((sym, value));
                if matches!(self.peek(), Some(Tok::Comma)) {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(ProbTerm { target, conditions })
    }

    /// One comma-separated item of the `forall` clause, before membership
    /// grouping: either a bare symbol, a membership, or a distinctness pair.
    fn parse_constraint_item(&mut self) -> Result<RawItem, FormulaError> {
        let lhs = self.parse_raw_symbol()?;
        match self.peek() {
            Some(Tok::In) => {
                self.next();
                let group = self.parse_raw_symbol()?;
                Ok(RawItem::Membership {
                    symbols: vec![lhs],
                    group,
                    negated: false,
                })
            }
            Some(Tok::Not) => {
                self.next();
                self.expect(Tok::In, "`in` after `not`")?;
                let group = self.parse_raw_symbol()?;
                Ok(RawItem::Membership {
                    symbols: vec![lhs],
                    group,
                    negated: true,
                })
            }
            Some(Tok::NotEq) => {
                self.next();
                let rhs = self.parse_raw_symbol()?;
                Ok(RawItem::Distinct(lhs, rhs))
            }
            _ => Ok(RawItem::Bare(lhs)),
        }
    }
}

enum RawItem {
    Bare(RawSymbol),
    Membership {
        symbols: Vec<RawSymbol>,
        group: RawSymbol,
        negated: bool,
    },
    Distinct(RawSymbol, RawSymbol),
}

/// Free index variable names used as subscripts anywhere in the relation.
fn relation_index_names(rel: &Relation) -> Vec<String> {
    let mut names = Vec::new();
    let push_sym = |sym: &Symbol, names: &mut Vec<String>| {
        if let Some(Index::Free(n)) = &sym.index {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
    };
    for term in [&rel.lhs, &rel.rhs] {
        push_sym(&term.target, &mut names);
        for (sym, _) in &term.conditions {
            push_sym(sym, &mut names);
        }
    }
    names
}

/// Scalar constants used as condition values anywhere in the relation.
fn relation_value_names(rel: &Relation) -> Vec<String> {
    let mut names = Vec::new();
    for term in [&rel.lhs, &rel.rhs] {
        for (_, val) in &term.conditions {
            if let Some(v) = val {
                if !names.contains(&v.name) {
                    names.push(v.name.clone());
                }
            }
        }
    }
    names
}

/// Variable symbols (targets and condition variables) of the relation.
fn relation_variables(rel: &Relation) -> Vec<Symbol> {
    let mut syms = Vec::new();
    for term in [&rel.lhs, &rel.rhs] {
        if !syms.contains(&term.target) {
            syms.push(term.target.clone());
        }
        for (sym, _) in &term.conditions {
            if !syms.contains(sym) {
                syms.push(sym.clone());
            }
        }
    }
    syms
}

/// Parse one formula. The input must contain exactly one relation with an
/// optional `forall` clause.
pub fn parse_formula(text: &str) -> Result<FormulaAst, FormulaError> {
    if text.trim().is_empty() {
        return Err(syntax(0, "empty formula"));
    }
    let mut parser = Parser::new(text)?;

    let lhs = parser.parse_prob_term()?;
    let op_offset = parser.offset();
    let op = match parser.next() {
        Some(Spanned { tok: Tok::EqEq, .. }) => RelOp::Equal,
        Some(Spanned { tok: Tok::NotEq, .. }) => RelOp::NotEqual,
        _ => return Err(syntax(op_offset, "expected `==` or `!=` between terms")),
    };
    let rhs = parser.parse_prob_term()?;
    if lhs.target != rhs.target {
        return Err(syntax(
            op_offset,
            format!(
                "both sides must condition the same latent variable ({} vs {})",
                lhs.target.render(),
                rhs.target.render()
            ),
        ));
    }
    let relation = Relation { lhs, rhs, op };

    let mut constraints = Vec::new();
    if matches!(parser.peek(), Some(Tok::Forall)) {
        parser.next();
        let mut items = Vec::new();
        loop {
            items.push((parser.offset(), parser.parse_constraint_item()?));
            if matches!(parser.peek(), Some(Tok::Comma)) {
                parser.next();
            } else {
                break;
            }
        }
        constraints = resolve_constraints(&relation, items)?;
    }

    if let Some(_tok) = parser.peek() {
        return Err(syntax(parser.offset(), "unexpected trailing input"));
    }

    Ok(FormulaAst {
        relation,
        quantifier: Quantifier { constraints },
        source_text: text.trim().to_string(),
    })
}

/// Turn raw `forall` items into typed constraints. Bare symbols buffer onto
/// the next membership (`forall z[i], z[i'] in G`), and `x != y` pairs are
/// disambiguated against the relation: group names, then free indices, then
/// scalar constants.
fn resolve_constraints(
    relation: &Relation,
    items: Vec<(usize, RawItem)>,
) -> Result<Vec<Constraint>, FormulaError> {
    let index_names = relation_index_names(relation);
    let value_names = relation_value_names(relation);
    let variables = relation_variables(relation);

    let mut constraints = Vec::new();
    let mut pending: Vec<RawSymbol> = Vec::new();
    let mut group_names: Vec<Symbol> = Vec::new();

    for (offset, item) in items {
        match item {
            RawItem::Bare(sym) => pending.push(sym),
            RawItem::Membership {
                symbols,
                group,
                negated,
            } => {
                let mut all = std::mem::take(&mut pending);
                all.extend(symbols);
                let group = Symbol {
                    kind: SymbolKind::GroupVar,
                    name: group.name.clone(),
                    index: group.index.clone(),
                };
                if !group.name.starts_with('G') {
                    return Err(FormulaError::UnknownSymbolKind {
                        name: group.name.clone(),
                        offset,
                    });
                }
                if !group_names.contains(&group) {
                    group_names.push(group.clone());
                }
                for raw in all {
                    let sym = Symbol {
                        kind: if raw.name.starts_with('z') {
                            SymbolKind::LatentVar
                        } else if raw.name.starts_with('p') {
                            SymbolKind::PropertyVar
                        } else {
                            return Err(FormulaError::UnknownSymbolKind {
                                name: raw.name,
                                offset: raw.offset,
                            });
                        },
                        name: raw.name.clone(),
                        index: raw.index.clone(),
                    };
                    if !variables.contains(&sym) {
                        return Err(syntax(
                            raw.offset,
                            format!("`{}` does not appear in the relation", sym.render()),
                        ));
                    }
                    constraints.push(Constraint::Membership {
                        symbol: sym,
                        group: group.clone(),
                        negated,
                    });
                }
            }
            RawItem::Distinct(a, b) => {
                if !pending.is_empty() {
                    return Err(syntax(
                        offset,
                        "dangling symbol before a distinctness constraint",
                    ));
                }
                constraints.push(resolve_distinct(
                    &a,
                    &b,
                    &index_names,
                    &value_names,
                    &group_names,
                )?);
            }
        }
    }
    if let Some(raw) = pending.first() {
        return Err(syntax(
            raw.offset,
            "dangling symbol in forall clause (expected `in`, `not in`, or `!=`)",
        ));
    }
    Ok(constraints)
}

fn resolve_distinct(
    a: &RawSymbol,
    b: &RawSymbol,
    index_names: &[String],
    value_names: &[String],
    group_names: &[Symbol],
) -> Result<Constraint, FormulaError> {
    // Group pair: both sides name groups (G, G', G[k]).
    if a.name.starts_with('G') && b.name.starts_with('G') {
        let mk = |raw: &RawSymbol| Symbol {
            kind: SymbolKind::GroupVar,
            name: raw.name.clone(),
            index: raw.index.clone(),
        };
        let (ga, gb) = (mk(a), mk(b));
        for g in [&ga, &gb] {
            if !group_names.contains(g) {
                return Err(syntax(
                    a.offset,
                    format!("group `{}` is not declared by a membership constraint", g.render()),
                ));
            }
        }
        return Ok(Constraint::GroupDistinct(ga, gb));
    }

    // Index pair: both sides are free subscripts of the relation.
    if !a.bracketed
        && !b.bracketed
        && index_names.contains(&a.name)
        && index_names.contains(&b.name)
    {
        return Ok(Constraint::IndexDistinct(
            Index::Free(a.name.clone()),
            Index::Free(b.name.clone()),
        ));
    }

    // Scalar pair: both sides are condition values of the relation.
    if !a.bracketed
        && !b.bracketed
        && value_names.contains(&a.name)
        && value_names.contains(&b.name)
    {
        return Ok(Constraint::ConstDistinct(
            Symbol::scalar(&a.name),
            Symbol::scalar(&b.name),
        ));
    }

    Err(syntax(
        a.offset,
        format!(
            "`{} != {}` references neither indices, condition values, nor groups of the relation",
            a.name, b.name
        ),
    ))
}

/// Parse a formula file: UTF-8 text, one formula per line, `#` starts a
/// comment to end of line, blank lines ignored.
pub fn parse_formula_file(text: &str) -> Result<Vec<ParsedFormula>, FormulaFileError> {
    let mut out = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        if line.trim().is_empty() {
            continue;
        }
        let ast = parse_formula(line).map_err(|inner| FormulaFileError {
            line: line_no,
            inner,
        })?;
        out.push(ParsedFormula { line: line_no, ast });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::classify_bias;

    #[test]
    fn parses_disentanglement_formula() {
        let ast =
            parse_formula("P(z[i] | z[i'] = a) == P(z[i] | z[i'] = b) forall i != i', a != b")
                .unwrap();
        assert_eq!(ast.relation.op, RelOp::Equal);
        assert_eq!(ast.quantifier.constraints.len(), 2);
        assert!(matches!(
            ast.quantifier.constraints[0],
            Constraint::IndexDistinct(..)
        ));
        assert!(matches!(
            ast.quantifier.constraints[1],
            Constraint::ConstDistinct(..)
        ));
    }

    #[test]
    fn parses_conditional_membership() {
        let ast =
            parse_formula("P(z[i] | p[k] = a) != P(z[i] | p[k] = b) forall z[i] in G[k], a != b")
                .unwrap();
        assert_eq!(ast.relation.op, RelOp::NotEqual);
        let m = &ast.quantifier.constraints[0];
        match m {
            Constraint::Membership { symbol, group, negated } => {
                assert_eq!(symbol.render(), "z[i]");
                assert_eq!(group.render(), "G[k]");
                assert!(!negated);
            }
            other => panic!("expected membership, got {other:?}"),
        }
    }

    #[test]
    fn parses_shared_membership_list() {
        let ast = parse_formula(
            "P(z[i] | z[i'] = a) != P(z[i] | z[i'] = b) forall z[i], z[i'] in G, i != i', a != b",
        )
        .unwrap();
        let memberships: Vec<_> = ast
            .quantifier
            .constraints
            .iter()
            .filter(|c| matches!(c, Constraint::Membership { .. }))
            .collect();
        assert_eq!(memberships.len(), 2);
    }

    #[test]
    fn degenerate_identity_parses_but_does_not_classify() {
        let ast = parse_formula("P(z[1] | z[2] = a) == P(z[1] | z[2] = a)").unwrap();
        assert!(ast.quantifier.constraints.is_empty());
        assert!(matches!(
            classify_bias(&ast),
            Err(FormulaError::Unclassifiable { .. })
        ));
    }

    #[test]
    fn unicode_aliases_accepted() {
        let ascii =
            parse_formula("P(z[i] | p[k] = a) == P(z[i] | p[k] = b) forall z[i] not in G[k], a != b")
                .unwrap();
        let unicode =
            parse_formula("P(z[i] | p[k] = a) == P(z[i] | p[k] = b) ∀ z[i] ∉ G[k], a ≠ b")
                .unwrap();
        assert_eq!(ascii, unicode);
    }

    #[test]
    fn syntax_error_carries_offset() {
        let err = parse_formula("P(z[i] | z[i'] = a) == ").unwrap_err();
        match err {
            FormulaError::Syntax { offset, .. } => assert_eq!(offset, 23),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_symbol_kind_rejected() {
        let err = parse_formula("P(z[i] | q[k] = a) == P(z[i] | q[k] = b)").unwrap_err();
        assert!(matches!(err, FormulaError::UnknownSymbolKind { .. }));
    }

    #[test]
    fn mismatched_targets_rejected() {
        let err = parse_formula("P(z[1] | z[3] = a) == P(z[2] | z[3] = b)").unwrap_err();
        assert!(matches!(err, FormulaError::Syntax { .. }));
    }

    #[test]
    fn duplicate_condition_rejected() {
        let err = parse_formula("P(z[i] | z[j] = a, z[j] = b) == P(z[i] | z[j] = a)").unwrap_err();
        assert!(matches!(err, FormulaError::Syntax { .. }));
    }

    #[test]
    fn render_round_trips() {
        let texts = [
            "P(z[i] | z[i'] = a) == P(z[i] | z[i'] = b) forall i != i', a != b",
            "P(z[i] | z[j] = a) == P(z[i] | z[j] = b) forall z[i] in G, z[j] in G', G != G', a != b",
            "P(z[i] | z[i'] = a) != P(z[i] | z[i'] = b) forall z[i], z[i'] in G, i != i', a != b",
            "P(z[i] | p[k] = a) != P(z[i] | p[k] = b) forall z[i] in G[k], a != b",
            "P(z[j] | p[k] = a) == P(z[j] | p[k] = b) forall z[j] not in G[k], a != b",
            "P(z[1]) == P(z[1])",
            "P(z[2] | z[3]) != P(z[2] | z[3])",
        ];
        for text in texts {
            let ast = parse_formula(text).unwrap();
            let rendered = ast.render();
            let reparsed = parse_formula(&rendered)
                .unwrap_or_else(|e| panic!("render of `{text}` failed to reparse: {e}"));
            assert_eq!(ast, reparsed, "round-trip mismatch for `{text}`");
        }
    }

    #[test]
    fn file_parsing_reports_line_numbers() {
        let file = "# two formulas and a bad line\n\
                    P(z[i] | z[i'] = a) == P(z[i] | z[i'] = b) forall i != i', a != b\n\
                    \n\
                    P(z[i] | z[i'] = a) == oops\n";
        let err = parse_formula_file(file).unwrap_err();
        assert_eq!(err.line, 4);
    }

    #[test]
    fn file_parsing_strips_comments() {
        let file = "P(z[1]) == P(z[1])  # degenerate but parseable\n";
        let parsed = parse_formula_file(file).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].line, 1);
    }
}
