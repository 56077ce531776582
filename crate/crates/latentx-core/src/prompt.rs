//! Prompt composition: the symbol-to-word lookup grammar, the per-bias
//! adaptive templates, the fixed ending, and an opt-in LLM refinement path
//! with few-shot examples.
//!
//! The deterministic template path is the default; every template and the
//! fixed ending are stored byte-exact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::{extract_symbols, BiasClass, FormulaAst, ProbTerm, RelOp, Symbol, SymbolKind};
use crate::gateway::{ChatModel, ChatRequest, GatewayError};

/// The constant instruction appended to every adaptive prompt.
pub const FIXED_ENDING: &str = "What is the pattern of change? Write in a sentence. If there is no clear pattern, just write \"No clear explanation\".";

/// The literal slot the conditional templates carry for the property name.
pub const PROPERTY_SLOT: &str = "[property_k]";

const TEMPLATE_DISENTANGLEMENT: &str =
    "These two rows of images show the same pattern of change despite other variations.";
const TEMPLATE_COMBINATION_INTER_GROUP: &str = "The pattern of change is associated with a group. The first two rows of images show the same pattern of change despite other variations in another group.";
const TEMPLATE_COMBINATION_INTRA_GROUP: &str = "The pattern of change is associated with a group. The pattern of change in the last two rows of images should change given other variations.";
const TEMPLATE_CONDITIONAL_DEPENDENT: &str = "If the pattern of change is associated with the group of the property of interest, this image sequence will change as other variations in [property_k].";
const TEMPLATE_CONDITIONAL_INDEPENDENT: &str = "If the pattern of change is not associated with the group of the property of interest, this image sequence will remain constant despite other variations in [property_k].";

/// The adaptive-prompt template for a bias variant, property slot included.
pub fn template_for(bias: BiasClass) -> &'static str {
    match bias {
        BiasClass::Disentanglement => TEMPLATE_DISENTANGLEMENT,
        BiasClass::CombinationInterGroup => TEMPLATE_COMBINATION_INTER_GROUP,
        BiasClass::CombinationIntraGroup => TEMPLATE_COMBINATION_INTRA_GROUP,
        BiasClass::ConditionalDependent => TEMPLATE_CONDITIONAL_DEPENDENT,
        BiasClass::ConditionalIndependent => TEMPLATE_CONDITIONAL_INDEPENDENT,
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no lookup rule matches the fragment `{0}`")]
    NoRuleMatch(String),
    #[error("conditional bias requires a property name")]
    MissingProperty,
    #[error("gateway failure during refinement: {0}")]
    Gateway(#[from] GatewayError),
}

/// An AST fragment presented to the lookup grammar.
#[derive(Debug, Clone)]
pub enum AstFragment<'a> {
    /// A conditioned probability term over a latent target.
    TargetTerm(&'a ProbTerm),
    /// The conditioned symbol, read as the variation held against the target.
    ConditionVariation(&'a Symbol),
    /// A bare symbol: property or group variables have rules, others do not.
    Symbol(&'a Symbol),
    /// Membership operator; negated is non-membership.
    Membership { negated: bool },
    /// The relation operator.
    Op(RelOp),
}

impl AstFragment<'_> {
    fn render(&self) -> String {
        match self {
            AstFragment::TargetTerm(term) => term.render(),
            AstFragment::ConditionVariation(sym) => sym.render(),
            AstFragment::Symbol(sym) => sym.render(),
            AstFragment::Membership { negated: false } => "in".to_string(),
            AstFragment::Membership { negated: true } => "not in".to_string(),
            AstFragment::Op(op) => op.render().to_string(),
        }
    }
}

/// Look one fragment up in the symbol-to-word grammar, returning the rule
/// id (1..8) and its exact phrase.
pub fn map_symbol(fragment: &AstFragment) -> Result<(u8, &'static str), PromptError> {
    match fragment {
        AstFragment::TargetTerm(term) if term.target.kind == SymbolKind::LatentVar => {
            Ok((1, "pattern of change"))
        }
        AstFragment::ConditionVariation(sym)
            if matches!(sym.kind, SymbolKind::LatentVar | SymbolKind::PropertyVar) =>
        {
            Ok((2, "other variations"))
        }
        AstFragment::Symbol(sym) if sym.kind == SymbolKind::PropertyVar => {
            Ok((3, "property of interests"))
        }
        AstFragment::Symbol(sym) if sym.kind == SymbolKind::GroupVar => Ok((4, "a group")),
        AstFragment::Membership { negated: false } => Ok((5, "associated with")),
        AstFragment::Membership { negated: true } => Ok((6, "not associated with")),
        AstFragment::Op(RelOp::Equal) => Ok((7, "same")),
        AstFragment::Op(RelOp::NotEqual) => Ok((8, "change")),
        other => Err(PromptError::NoRuleMatch(other.render())),
    }
}

/// One grammar-rule application recorded while composing a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleUse {
    pub rule: u8,
    pub matched: String,
}

/// A composed prompt: the formula-derived adaptive text plus the fixed
/// ending, with the trace of grammar rules that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub adaptive_text: String,
    pub fixed_ending: String,
    pub rule_trace: Vec<RuleUse>,
    pub bias: BiasClass,
    pub property_name: Option<String>,
}

impl PromptBundle {
    /// The full prompt sent to the multimodal model: adaptive text and
    /// fixed ending joined by a newline.
    pub fn full_prompt(&self) -> String {
        format!("{}\n{}", self.adaptive_text, self.fixed_ending)
    }
}

fn trace_fragment(
    trace: &mut Vec<RuleUse>,
    fragment: &AstFragment,
) -> Result<(), PromptError> {
    let (rule, _phrase) = map_symbol(fragment)?;
    trace.push(RuleUse {
        rule,
        matched: fragment.render(),
    });
    Ok(())
}

/// Groups referenced by membership constraints, non-negated first.
fn first_group(ast: &FormulaAst, negated: bool) -> Option<&Symbol> {
    ast.quantifier.constraints.iter().find_map(|c| match c {
        crate::formula::Constraint::Membership {
            group,
            negated: n,
            ..
        } if *n == negated => Some(group),
        _ => None,
    })
}

/// Compose the adaptive prompt for a classified formula, leaving the
/// property slot in place when no property name is supplied. The property
/// substitution is the only variable part; everything else is the verbatim
/// template for the bias.
pub fn compose_prompt_raw(
    ast: &FormulaAst,
    bias: BiasClass,
    property_name: Option<&str>,
) -> Result<PromptBundle, PromptError> {
    let mut adaptive = template_for(bias).to_string();
    if let Some(name) = property_name {
        adaptive = adaptive.replace(PROPERTY_SLOT, name);
    }

    let lhs = &ast.relation.lhs;
    let cond_symbol = lhs.conditions.first().map(|(sym, _)| sym);
    let mut trace = Vec::new();

    trace_fragment(&mut trace, &AstFragment::TargetTerm(lhs))?;
    if let Some(cond) = cond_symbol {
        trace_fragment(&mut trace, &AstFragment::ConditionVariation(cond))?;
    }
    match bias {
        BiasClass::Disentanglement => {
            trace_fragment(&mut trace, &AstFragment::Op(ast.relation.op))?;
        }
        BiasClass::CombinationInterGroup | BiasClass::CombinationIntraGroup => {
            if let Some(group) = first_group(ast, false) {
                trace_fragment(&mut trace, &AstFragment::Symbol(group))?;
            }
            trace_fragment(&mut trace, &AstFragment::Membership { negated: false })?;
            trace_fragment(&mut trace, &AstFragment::Op(ast.relation.op))?;
        }
        BiasClass::ConditionalDependent | BiasClass::ConditionalIndependent => {
            let negated = bias == BiasClass::ConditionalIndependent;
            if let Some(cond) = cond_symbol {
                trace_fragment(&mut trace, &AstFragment::Symbol(cond))?;
            }
            if let Some(group) = first_group(ast, negated) {
                trace_fragment(&mut trace, &AstFragment::Symbol(group))?;
            }
            trace_fragment(&mut trace, &AstFragment::Membership { negated })?;
            trace_fragment(&mut trace, &AstFragment::Op(ast.relation.op))?;
        }
    }

    Ok(PromptBundle {
        adaptive_text: adaptive,
        fixed_ending: FIXED_ENDING.to_string(),
        rule_trace: trace,
        bias,
        property_name: property_name.map(|s| s.to_string()),
    })
}

/// Compose the prompt for a classified formula. Conditional biases require
/// the property name that fills the template slot.
pub fn compose_prompt(
    ast: &FormulaAst,
    bias: BiasClass,
    property_name: Option<&str>,
) -> Result<PromptBundle, PromptError> {
    if bias.is_conditional() && property_name.is_none() {
        return Err(PromptError::MissingProperty);
    }
    compose_prompt_raw(ast, bias, property_name)
}

/// Few-shot (formula, prompt) pairs plus optional free-text notes per
/// symbol, keyed by the symbol's rendered form.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FewShotSet {
    pub examples: Vec<(String, String)>,
    pub symbol_info: BTreeMap<String, String>,
}

impl FewShotSet {
    /// The five canonical (formula, prompt) pairs.
    pub fn canonical() -> Self {
        FewShotSet {
            examples: crate::formula::CANONICAL_FORMULAS
                .iter()
                .map(|(formula, bias)| (formula.to_string(), template_for(*bias).to_string()))
                .collect(),
            symbol_info: BTreeMap::new(),
        }
    }

    /// Parse the few-shot file format:
    ///
    /// ```text
    /// # comment
    /// formula: P(z[i] | z[i'] = a) == P(z[i] | z[i'] = b) forall i != i', a != b
    /// prompt: These two rows of images show the same pattern of change despite other variations.
    ///
    /// symbol: z[i] = the latent coordinate under study
    /// ```
    ///
    /// `formula:`/`prompt:` lines pair up in order; `symbol:` lines add
    /// per-symbol notes.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut set = FewShotSet::default();
        let mut pending_formula: Option<String> = None;
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("formula:") {
                if pending_formula.is_some() {
                    return Err(format!("line {line_no}: formula without a prompt"));
                }
                pending_formula = Some(rest.trim().to_string());
            } else if let Some(rest) = line.strip_prefix("prompt:") {
                let formula = pending_formula
                    .take()
                    .ok_or_else(|| format!("line {line_no}: prompt without a formula"))?;
                set.examples.push((formula, rest.trim().to_string()));
            } else if let Some(rest) = line.strip_prefix("symbol:") {
                let (name, info) = rest
                    .split_once('=')
                    .ok_or_else(|| format!("line {line_no}: expected `symbol: name = text`"))?;
                set.symbol_info
                    .insert(name.trim().to_string(), info.trim().to_string());
            } else {
                return Err(format!(
                    "line {line_no}: expected `formula:`, `prompt:`, or `symbol:`"
                ));
            }
        }
        if pending_formula.is_some() {
            return Err("trailing formula without a prompt".to_string());
        }
        Ok(set)
    }
}

/// Result of the LLM refinement path: the bundle actually produced, and
/// whether the deterministic template was used because the model reply
/// failed the structural guard.
#[derive(Debug, Clone)]
pub struct RefinedPrompt {
    pub bundle: PromptBundle,
    pub fallback_used: bool,
}

fn sentence_count(text: &str) -> usize {
    text.split(['.', '!', '?'])
        .filter(|s| !s.trim().is_empty())
        .count()
}

/// A refined reply is acceptable when it names the pattern of change and
/// stays within three sentences; anything else falls back to the template.
fn reply_acceptable(reply: &str) -> bool {
    let trimmed = reply.trim();
    !trimmed.is_empty()
        && trimmed.to_lowercase().contains("pattern of change")
        && sentence_count(trimmed) <= 3
}

/// Refine the adaptive prompt through a text model, following the
/// in-context route: gather a short meaning for every extracted symbol,
/// then generate the prompt from the formula, the few-shot pairs, and the
/// gathered meanings. Transport failures surface as errors; a structurally
/// unacceptable reply falls back to the deterministic template. The fixed
/// ending is never model-generated.
pub fn refine_prompt_llm(
    ast: &FormulaAst,
    bias: BiasClass,
    property_name: Option<&str>,
    fewshot: &FewShotSet,
    model: &dyn ChatModel,
) -> Result<RefinedPrompt, PromptError> {
    let base = compose_prompt(ast, bias, property_name)?;

    let examples_block: String = fewshot
        .examples
        .iter()
        .map(|(formula, prompt)| format!("Formula: {formula}\nPrompt: {prompt}\n"))
        .collect();

    let mut semantics = Vec::new();
    for symbol in extract_symbols(ast) {
        let rendered = symbol.render();
        let info = fewshot
            .symbol_info
            .get(&rendered)
            .map(|s| s.as_str())
            .unwrap_or("none");
        let prompt = format!(
            "Give a short meaning for one mathematical symbol from a formula over latent variables.\n\
             {examples_block}\
             Symbol: {rendered}\n\
             Known information: {info}\n\
             Meaning:"
        );
        let reply = model.sample(&ChatRequest::new(prompt, Vec::new()))?;
        semantics.push((rendered, reply.trim().to_string()));
    }

    let semantics_block: String = semantics
        .iter()
        .map(|(sym, meaning)| format!("- {sym}: {meaning}\n"))
        .collect();
    let generation_prompt = format!(
        "Convert the formula into a one-to-three sentence image-comparison prompt that names the pattern of change.\n\
         {examples_block}\
         Symbol meanings:\n{semantics_block}\
         Formula: {}\n\
         Prompt:",
        ast.render()
    );
    let reply = model.sample(&ChatRequest::new(generation_prompt, Vec::new()))?;

    if reply_acceptable(&reply) {
        let mut bundle = base;
        bundle.adaptive_text = reply.trim().to_string();
        Ok(RefinedPrompt {
            bundle,
            fallback_used: false,
        })
    } else {
        Ok(RefinedPrompt {
            bundle: base,
            fallback_used: true,
        })
    }
}
