//! The inductive-bias formula DSL: AST types, parsing, symbol extraction,
//! and bias classification.
//!
//! A formula is a probabilistic statement over latent variables, e.g.
//!
//! ```text
//! P(z[i] | z[i'] = a) == P(z[i] | z[i'] = b) forall i != i', a != b
//! ```
//!
//! The concrete syntax is a one-screen grammar: probability terms
//! `P(sym | sym = const, ...)`, relations `==` / `!=`, and a `forall`
//! clause with comma-separated constraints (`i != i'`, `a != b`,
//! `z[i] in G`, `z[j] not in G[k]`, `G != G'`). Unicode `∀`, `≠`, `∈`,
//! `∉`, and `′` are accepted as aliases for the ASCII forms.

mod classify;
mod parse;

pub use classify::{classify_all, classify_bias};
pub use parse::{parse_formula, parse_formula_file};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What a symbol denotes. Resolved from the identifier prefix: `z*` latent,
/// `p*` property, `G*` group; anything else in a value position is a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SymbolKind {
    LatentVar,
    PropertyVar,
    GroupVar,
    ScalarConst,
}

/// A subscript: a free index variable like `i` or `k'`, or a concrete integer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Index {
    Free(String),
    Literal(i64),
}

impl std::fmt::Display for Index {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Index::Free(name) => write!(f, "{name}"),
            Index::Literal(n) => write!(f, "{n}"),
        }
    }
}

/// A named symbol occurring in a formula, with an optional subscript.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Symbol {
    pub kind: SymbolKind,
    pub name: String,
    pub index: Option<Index>,
}

impl Symbol {
    pub fn latent(index: Index) -> Self {
        Symbol {
            kind: SymbolKind::LatentVar,
            name: "z".to_string(),
            index: Some(index),
        }
    }

    pub fn scalar(name: &str) -> Self {
        Symbol {
            kind: SymbolKind::ScalarConst,
            name: name.to_string(),
            index: None,
        }
    }

    /// Canonical rendering, e.g. `z[i']`, `p[k]`, `G`, `a`.
    pub fn render(&self) -> String {
        match &self.index {
            Some(idx) => format!("{}[{}]", self.name, idx),
            None => self.name.clone(),
        }
    }
}

/// A probability term `P(target | sym = const, ...)`. The conditions hold
/// the conditioned symbol and its (optional) assigned scalar value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbTerm {
    pub target: Symbol,
    pub conditions: Vec<(Symbol, Option<Symbol>)>,
}

impl ProbTerm {
    pub fn render(&self) -> String {
        let mut out = format!("P({}", self.target.render());
        if !self.conditions.is_empty() {
            out.push_str(" | ");
            let parts: Vec<String> = self
                .conditions
                .iter()
                .map(|(sym, val)| match val {
                    Some(v) => format!("{} = {}", sym.render(), v.render()),
                    None => sym.render(),
                })
                .collect();
            out.push_str(&parts.join(", "));
        }
        out.push(')');
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelOp {
    Equal,
    NotEqual,
}

impl RelOp {
    pub fn render(&self) -> &'static str {
        match self {
            RelOp::Equal => "==",
            RelOp::NotEqual => "!=",
        }
    }
}

/// Two probability terms over the same latent variable, related by `==`/`!=`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub lhs: ProbTerm,
    pub rhs: ProbTerm,
    pub op: RelOp,
}

/// One constraint of the `forall` clause.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Constraint {
    /// `i != i'` over free index variables of the relation.
    IndexDistinct(Index, Index),
    /// `a != b` over scalar constants of the relation.
    ConstDistinct(Symbol, Symbol),
    /// `z[i] in G` / `z[j] not in G[k]`.
    Membership {
        symbol: Symbol,
        group: Symbol,
        negated: bool,
    },
    /// `G != G'`.
    GroupDistinct(Symbol, Symbol),
}

impl Constraint {
    pub fn render(&self) -> String {
        match self {
            Constraint::IndexDistinct(a, b) => format!("{a} != {b}"),
            Constraint::ConstDistinct(a, b) => format!("{} != {}", a.render(), b.render()),
            Constraint::Membership {
                symbol,
                group,
                negated,
            } => {
                let kw = if *negated { "not in" } else { "in" };
                format!("{} {} {}", symbol.render(), kw, group.render())
            }
            Constraint::GroupDistinct(a, b) => format!("{} != {}", a.render(), b.render()),
        }
    }
}

/// The `forall` clause. May be empty (classification then rejects).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Quantifier {
    pub constraints: Vec<Constraint>,
}

/// A parsed formula. `source_text` is the raw input, carried for
/// diagnostics and manifests; equality compares structure only, so the
/// parse/render round-trip is an identity.
#[derive(Debug, Clone)]
pub struct FormulaAst {
    pub relation: Relation,
    pub quantifier: Quantifier,
    pub source_text: String,
}

impl PartialEq for FormulaAst {
    fn eq(&self, other: &Self) -> bool {
        self.relation == other.relation && self.quantifier == other.quantifier
    }
}

impl Eq for FormulaAst {}

impl FormulaAst {
    /// Canonical textual rendering; parses back to an equal AST.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{} {} {}",
            self.relation.lhs.render(),
            self.relation.op.render(),
            self.relation.rhs.render()
        );
        if !self.quantifier.constraints.is_empty() {
            out.push_str(" forall ");
            let parts: Vec<String> = self
                .quantifier
                .constraints
                .iter()
                .map(Constraint::render)
                .collect();
            out.push_str(&parts.join(", "));
        }
        out
    }
}

/// The five supported bias patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasClass {
    Disentanglement,
    CombinationInterGroup,
    CombinationIntraGroup,
    ConditionalDependent,
    ConditionalIndependent,
}

impl BiasClass {
    pub fn is_conditional(&self) -> bool {
        matches!(
            self,
            BiasClass::ConditionalDependent | BiasClass::ConditionalIndependent
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            BiasClass::Disentanglement => "disentanglement",
            BiasClass::CombinationInterGroup => "combination_inter_group",
            BiasClass::CombinationIntraGroup => "combination_intra_group",
            BiasClass::ConditionalDependent => "conditional_dependent",
            BiasClass::ConditionalIndependent => "conditional_independent",
        }
    }
}

/// The five canonical bias formulas transcribed into the DSL, paired with
/// the class each one exemplifies. These are the reference patterns for
/// classification and the default few-shot examples.
pub const CANONICAL_FORMULAS: [(&str, BiasClass); 5] = [
    (
        "P(z[i] | z[i'] = a) == P(z[i] | z[i'] = b) forall i != i', a != b",
        BiasClass::Disentanglement,
    ),
    (
        "P(z[i] | z[j] = a) == P(z[i] | z[j] = b) forall z[i] in G, z[j] in G', G != G', a != b",
        BiasClass::CombinationInterGroup,
    ),
    (
        "P(z[i] | z[i'] = a) != P(z[i] | z[i'] = b) forall z[i], z[i'] in G, i != i', a != b",
        BiasClass::CombinationIntraGroup,
    ),
    (
        "P(z[i] | p[k] = a) != P(z[i] | p[k] = b) forall z[i] in G[k], a != b",
        BiasClass::ConditionalDependent,
    ),
    (
        "P(z[j] | p[k] = a) == P(z[j] | p[k] = b) forall z[j] not in G[k], a != b",
        BiasClass::ConditionalIndependent,
    ),
];

#[derive(Debug, Error)]
pub enum FormulaError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown symbol kind `{name}` at byte {offset}: expected z*, p*, G*, or a scalar name")]
    UnknownSymbolKind { name: String, offset: usize },
    #[error("formula matches no supported bias pattern: {reason}")]
    Unclassifiable { reason: String },
}

/// A formula file error, pointing at the 1-based source line.
#[derive(Debug, Error)]
#[error("line {line}: {inner}")]
pub struct FormulaFileError {
    pub line: usize,
    #[source]
    pub inner: FormulaError,
}

/// One formula from a formula file, with its 1-based line number.
#[derive(Debug, Clone)]
pub struct ParsedFormula {
    pub line: usize,
    pub ast: FormulaAst,
}

/// Deduplicated symbols of the formula in first-appearance order:
/// relation left-to-right (target, then conditions), then quantifier
/// constraints. Bare index variables are subscripts, not symbols, so
/// `IndexDistinct` contributes nothing.
pub fn extract_symbols(ast: &FormulaAst) -> Vec<Symbol> {
    let mut seen: Vec<Symbol> = Vec::new();
    let push = |sym: &Symbol, seen: &mut Vec<Symbol>| {
        if !seen.contains(sym) {
            seen.push(sym.clone());
        }
    };

    for term in [&ast.relation.lhs, &ast.relation.rhs] {
        push(&term.target, &mut seen);
        for (sym, val) in &term.conditions {
            push(sym, &mut seen);
            if let Some(v) = val {
                push(v, &mut seen);
            }
        }
    }
    for constraint in &ast.quantifier.constraints {
        match constraint {
            Constraint::IndexDistinct(_, _) => {}
            Constraint::ConstDistinct(a, b) => {
                push(a, &mut seen);
                push(b, &mut seen);
            }
            Constraint::Membership { symbol, group, .. } => {
                push(symbol, &mut seen);
                push(group, &mut seen);
            }
            Constraint::GroupDistinct(a, b) => {
                push(a, &mut seen);
                push(b, &mut seen);
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> FormulaAst {
        parse_formula(text).expect("formula should parse")
    }

    #[test]
    fn extract_symbols_disentanglement_order() {
        let ast = parse("P(z[i] | z[i'] = a) == P(z[i] | z[i'] = b) forall i != i', a != b");
        let syms = extract_symbols(&ast);
        let rendered: Vec<String> = syms.iter().map(Symbol::render).collect();
        assert_eq!(rendered, vec!["z[i]", "z[i']", "a", "b"]);
    }

    #[test]
    fn extract_symbols_conditional_includes_group() {
        let ast = parse("P(z[i] | p[k] = a) != P(z[i] | p[k] = b) forall z[i] in G[k], a != b");
        let syms = extract_symbols(&ast);
        let rendered: Vec<String> = syms.iter().map(Symbol::render).collect();
        assert_eq!(rendered, vec!["z[i]", "p[k]", "a", "b", "G[k]"]);
    }

    #[test]
    fn extract_symbols_single_term() {
        let ast = parse("P(z[1]) == P(z[1])");
        let syms = extract_symbols(&ast);
        assert_eq!(syms.len(), 1);
        assert_eq!(syms[0].render(), "z[1]");
    }

    #[test]
    fn extract_symbols_is_duplicate_free() {
        let ast = parse(
            "P(z[i] | z[j] = a) == P(z[i] | z[j] = b) forall z[i] in G, z[j] in G', G != G', a != b",
        );
        let syms = extract_symbols(&ast);
        let mut dedup = syms.clone();
        dedup.dedup();
        assert_eq!(syms.len(), dedup.len());
        for pair in syms.windows(2) {
            assert_ne!(pair[0], pair[1]);
        }
    }
}
