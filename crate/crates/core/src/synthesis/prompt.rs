//! Context bundle and prompt assembly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::engine::{default_ruleset_text, Thresholds};
use crate::predicate_lang::{BuiltinCatalog, DEFAULT_PREDICATES};
use crate::syntax::strip_hash_comments;

pub const GRAMMAR_TEXT: &str = include_str!("../../assets/context/rules.g4");
pub const MAP_SCHEMA_TEXT: &str = include_str!("../../assets/context/map_schema.xsd");

/// Headers of the six prompt blocks, in prompt order.
pub const PROMPT_HEADERS: [&str; 6] = [
    "### CONTEXT: RULE GRAMMAR",
    "### CONTEXT: CURRENT RULESET",
    "### CONTEXT: PREDICATE CATALOG",
    "### CONTEXT: MAP SCHEMA",
    "### CONSTRAINTS AND OUTPUT CONTRACT",
    "### DEFECT DESCRIPTION",
];

pub const GRAMMAR_SENTENCE: &str = "Do not modify the ANTLR grammar. Output must comply with the existing syntax and directly integrate with the verification pipeline.";

/// Grammar of the predicate language, stated in the constraint block.
pub const PDL_GRAMMAR: &str = "\
definition := 'pred' IDENT '(' params? ')' ':=' expr ';'
params     := IDENT ':' ('lanelet' | 'number') (',' IDENT ':' ('lanelet' | 'number'))*
expr       := conj ('||' conj)*
conj       := unary ('&&' unary)*
unary      := '!' unary | cmp
cmp        := primary (('<' | '<=' | '>' | '>=' | '==' | '!=') primary)?
primary    := '(' expr ')' | NUMBER | IDENT | IDENT '(' (expr (',' expr)*)? ')'";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("context artifact `{0}` is empty after removing comments")]
    Empty(&'static str),
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The four context artifacts, comments removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextBundle {
    pub grammar_text: String,
    pub ruleset_text: String,
    /// Registered predicates followed by the builtin catalog.
    pub pdl_text: String,
    pub map_schema_text: String,
}

/// File names of the context artifacts inside a registry directory.
pub const GRAMMAR_FILE: &str = "grammar.g4";
pub const SCHEMA_FILE: &str = "map_schema.xsd";

impl ContextBundle {
    pub fn new(grammar: &str, ruleset: &str, pdl: &str, map_schema: &str) -> Result<Self, BundleError> {
        let grammar_text = strip_grammar_comments(grammar);
        let ruleset_text = strip_hash_comments(ruleset);
        let predicates = strip_hash_comments(pdl);
        let map_schema_text = strip_xml_comments(map_schema);
        for (name, text) in [
            ("grammar", &grammar_text),
            ("ruleset", &ruleset_text),
            ("predicates", &predicates),
            ("map schema", &map_schema_text),
        ] {
            if text.trim().is_empty() {
                return Err(BundleError::Empty(name));
            }
        }
        let pdl_text = format!("{predicates}{}", BuiltinCatalog::standard().describe());
        Ok(ContextBundle {
            grammar_text,
            ruleset_text,
            pdl_text,
            map_schema_text,
        })
    }

    /// Shipped grammar and schema with the default rules and predicates.
    pub fn default_bundle(t: &Thresholds) -> Self {
        Self::new(GRAMMAR_TEXT, &default_ruleset_text(t), DEFAULT_PREDICATES, MAP_SCHEMA_TEXT)
            .expect("shipped context is nonempty")
    }

    /// Reads grammar, schema, rules and predicates from a registry directory.
    pub fn from_dir(dir: &Path) -> Result<Self, BundleError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|source| BundleError::Read {
                path: path.display().to_string(),
                source,
            })
        };
        Self::new(
            &read(GRAMMAR_FILE)?,
            &read(super::registry::RULES_FILE)?,
            &read(super::registry::PREDICATES_FILE)?,
            &read(SCHEMA_FILE)?,
        )
    }
}

/// Removes `//` and `/* */` comments outside single-quoted literals, then
/// blank lines.
pub fn strip_grammar_comments(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut chars = src.chars().peekable();
    let mut in_quote = false;
    while let Some(c) = chars.next() {
        if in_quote {
            out.push(c);
            if c == '\\' {
                if let Some(n) = chars.next() {
                    out.push(n);
                }
            } else if c == '\'' {
                in_quote = false;
            }
            continue;
        }
        match (c, chars.peek()) {
            ('\'', _) => {
                in_quote = true;
                out.push(c);
            }
            ('/', Some('/')) => {
                while chars.peek().is_some_and(|&n| n != '\n') {
                    chars.next();
                }
            }
            ('/', Some('*')) => {
                chars.next();
                let mut prev = ' ';
                for n in chars.by_ref() {
                    if prev == '*' && n == '/' {
                        break;
                    }
                    prev = n;
                }
            }
            _ => out.push(c),
        }
    }
    drop_blank_lines(&out)
}

pub fn strip_xml_comments(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut rest = src;
    while let Some(start) = rest.find("<!--") {
        out.push_str(&rest[..start]);
        rest = match rest[start + 4..].find("-->") {
            Some(end) => &rest[start + 4 + end + 3..],
            None => "",
        };
    }
    out.push_str(rest);
    drop_blank_lines(&out)
}

fn drop_blank_lines(s: &str) -> String {
    let mut out = String::new();
    for line in s.lines() {
        let line = line.trim_end();
        if !line.trim().is_empty() {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

/// A natural-language defect request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSpecRequest {
    pub description: String,
    pub name_hint: Option<String>,
}

impl RuleSpecRequest {
    pub fn new(description: impl Into<String>, name_hint: Option<String>) -> Option<Self> {
        let description = description.into();
        (!description.trim().is_empty()).then_some(RuleSpecRequest {
            description,
            name_hint,
        })
    }
}

fn block(out: &mut String, header: &str, body: &str) {
    out.push_str(header);
    out.push('\n');
    out.push_str(body.trim_end());
    out.push_str("\n\n");
}

pub fn build_prompt(bundle: &ContextBundle, req: &RuleSpecRequest) -> String {
    let mut out = String::new();
    out.push_str(
        "You extend a rule-based verifier for lanelet maps with elevation. Write one new rule \
         and the predicates it needs for the defect described at the end.\n\n",
    );
    block(&mut out, PROMPT_HEADERS[0], &bundle.grammar_text);
    block(&mut out, PROMPT_HEADERS[1], &bundle.ruleset_text);
    block(&mut out, PROMPT_HEADERS[2], &bundle.pdl_text);
    block(&mut out, PROMPT_HEADERS[3], &bundle.map_schema_text);

    let mut c = String::new();
    let _ = writeln!(c, "{GRAMMAR_SENTENCE}");
    let _ = writeln!(c, "- Write exactly one rule. Quantify only over L, pairs(L) or succ_pairs(L).");
    let _ = writeln!(c, "- Predicates are written in the predicate language below, not in a general-purpose language:");
    for line in PDL_GRAMMAR.lines() {
        let _ = writeln!(c, "    {line}");
    }
    let _ = writeln!(
        c,
        "- A predicate body may call only the builtins listed in the catalog, its own parameters, and \
         predicates defined before it. There is no recursion, arithmetic or looping."
    );
    let _ = writeln!(c, "- Pass thresholds as number parameters from the rule instead of hard-coding them in predicates.");
    let _ = writeln!(c, "- New rule and predicate names must differ from every existing rule, predicate and builtin.");
    let _ = writeln!(c, "Answer with three fenced sections, in this order, each fence on its own line:");
    for (tag, what) in [
        ("RULE", "the rule declaration"),
        ("PREDICATE", "the predicate definitions"),
        ("EXPLANATION", "a brief explanation of what the rule checks"),
    ] {
        let _ = writeln!(c, "---BEGIN {tag}---");
        let _ = writeln!(c, "<{what}>");
        let _ = writeln!(c, "---END {tag}---");
    }
    block(&mut out, PROMPT_HEADERS[4], &c);

    let mut d = req.description.trim().to_string();
    if let Some(hint) = &req.name_hint {
        let _ = write!(d, "\nSuggested rule name: {hint}");
    }
    block(&mut out, PROMPT_HEADERS[5], &d);
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> RuleSpecRequest {
        RuleSpecRequest::new("Detect lanelets with excessive slope.", None).unwrap()
    }

    #[test]
    fn blocks_appear_in_order() {
        let p = build_prompt(&ContextBundle::default_bundle(&Thresholds::default()), &request());
        let mut last = 0;
        for h in PROMPT_HEADERS {
            let at = p.find(h).unwrap_or_else(|| panic!("{h} missing"));
            assert!(at >= last, "{h} out of order");
            last = at;
        }
        let constraints = p.find(PROMPT_HEADERS[4]).unwrap();
        let sentence = p.find(GRAMMAR_SENTENCE).unwrap();
        let defect = p.find(PROMPT_HEADERS[5]).unwrap();
        assert!(constraints < sentence && sentence < defect);
        for tag in ["RULE", "PREDICATE", "EXPLANATION"] {
            assert!(p.contains(&format!("---BEGIN {tag}---")));
        }
        assert!(p[defect..].contains("excessive slope"));
        assert!(p.contains("builtin grade_max(lanelet) -> number"));
    }

    #[test]
    fn comments_are_removed() {
        let b = ContextBundle::new(
            "// top\ngrammar G; /* block\n comment */ r : 'a//b' ;\n",
            "# c\nrule r: forall l in L . p(l); # tail\n",
            "# secret note\npred p(l: lanelet) := grade_max(l) <= 1;\n",
            "<!-- hidden -->\n<a/>\n",
        )
        .unwrap();
        let p = build_prompt(&b, &request());
        for gone in ["secret note", "top", "block", "hidden", "tail"] {
            assert!(!p.contains(gone), "{gone}");
        }
        assert!(p.contains("r : 'a//b' ;"));
    }

    #[test]
    fn deterministic() {
        let b = ContextBundle::default_bundle(&Thresholds::default());
        assert_eq!(build_prompt(&b, &request()), build_prompt(&b, &request()));
    }

    #[test]
    fn empty_artifact_rejected() {
        assert!(matches!(
            ContextBundle::new("g", "# only a comment\n", "p", "s"),
            Err(BundleError::Empty("ruleset"))
        ));
        assert!(RuleSpecRequest::new("  ", None).is_none());
    }
}
