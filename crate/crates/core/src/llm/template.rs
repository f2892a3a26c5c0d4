use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template '{template}': placeholder '{{{name}}}' is unbound")]
    Unbound { template: String, name: String },
    #[error("template '{template}': binding '{name}' matches no placeholder")]
    UnknownBinding { template: String, name: String },
}

/// Prompt text with `{name}` placeholders. `{{` and `}}` render as literal
/// braces; any other brace is kept as is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn pieces(body: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    let mut literal_start = 0;
    let mut offset = 0;
    while let Some(pos) = rest.find(['{', '}']) {
        let at = offset + pos;
        let tail = &body[at..];
        let step = if tail.starts_with("{{") || tail.starts_with("}}") {
            out.push(Piece::Text(&body[literal_start..at + 1]));
            literal_start = at + 2;
            2
        } else if let Some(close) = tail.strip_prefix('{').and_then(|t| t.find('}')) {
            let name = &tail[1..1 + close];
            if is_ident(name) {
                out.push(Piece::Text(&body[literal_start..at]));
                out.push(Piece::Slot(name));
                literal_start = at + close + 2;
                close + 2
            } else {
                1
            }
        } else {
            1
        };
        offset = at + step;
        rest = &body[offset..];
    }
    out.push(Piece::Text(&body[literal_start..]));
    out
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            body: body.into(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        pieces(&self.body)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(name) => Some(name),
                Piece::Text(_) => None,
            })
            .collect()
    }

    /// Single-pass substitution. Bound values are inserted verbatim and never
    /// re-expanded. Every placeholder must be bound and every binding used.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        let slots = self.placeholders();
        if let Some((name, _)) = bindings.iter().find(|(n, _)| !slots.contains(n)) {
            return Err(TemplateError::UnknownBinding {
                template: self.name.clone(),
                name: name.to_string(),
            });
        }
        let mut out = String::with_capacity(self.body.len());
        for piece in pieces(&self.body) {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => {
                    let value = bindings
                        .iter()
                        .rev()
                        .find(|(n, _)| *n == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| TemplateError::Unbound {
                            template: self.name.clone(),
                            name: name.to_string(),
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// The prompts shipped with the crate. They are compiled in and cannot be
/// replaced at runtime.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub system: PromptTemplate,
    pub extract_codes: PromptTemplate,
    pub generate_letter: PromptTemplate,
    pub reflect: PromptTemplate,
    pub reflections_header: &'static str,
}

impl PromptSet {
    pub const EXTRACT_CODES: &'static str = "extract_codes";
    pub const GENERATE_LETTER: &'static str = "generate_letter";
    pub const REFLECT: &'static str = "reflect";
    /// Prompt revision, recorded in audit trails.
    pub const VERSION: &'static str = "1";

    pub fn bundled() -> Self {
        Self {
            system: PromptTemplate::new("system", include_str!("../../prompts/system.txt")),
            extract_codes: PromptTemplate::new(
                Self::EXTRACT_CODES,
                include_str!("../../prompts/extract_codes.txt"),
            ),
            generate_letter: PromptTemplate::new(
                Self::GENERATE_LETTER,
                include_str!("../../prompts/generate_letter.txt"),
            ),
            reflect: PromptTemplate::new(Self::REFLECT, include_str!("../../prompts/reflect.txt")),
            reflections_header: "Reflections on your previous attempts (address every point):",
        }
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::bundled()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_single_placeholder() {
        let t = PromptTemplate::new("t", "Report: {report}");
        assert_eq!(t.render(&[("report", "X")]).unwrap(), "Report: X");
    }

    #[test]
    fn unbound_and_unknown_bindings_fail() {
        let t = PromptTemplate::new("t", "Report: {report}");
        assert!(matches!(t.render(&[]), Err(TemplateError::Unbound { .. })));
        assert!(matches!(
            t.render(&[("report", "x"), ("extra", "y")]),
            Err(TemplateError::UnknownBinding { .. })
        ));
    }

    #[test]
    fn bound_braces_are_not_expanded() {
        let t = PromptTemplate::new("t", "A {a} B {b}");
        let out = t.render(&[("a", "{b}"), ("b", "{{x}}")]).unwrap();
        assert_eq!(out, "A {b} B {{x}}");
    }

    #[test]
    fn escapes_and_stray_braces() {
        let t = PromptTemplate::new("t", "{{literal}} {Not_A_Slot} {x} { } }");
        assert_eq!(t.placeholders(), ["x"].into());
        assert_eq!(t.render(&[("x", "1")]).unwrap(), "{literal} {Not_A_Slot} 1 { } }");
    }

    #[test]
    fn bundled_templates_have_expected_slots() {
        let p = PromptSet::bundled();
        assert!(p.system.placeholders().is_empty());
        assert_eq!(p.extract_codes.placeholders(), ["report"].into());
        assert_eq!(
            p.generate_letter.placeholders(),
            ["reflections", "report", "target_grade"].into()
        );
        assert_eq!(p.reflect.placeholders(), ["feedback", "letter"].into());
        assert!(p.generate_letter.body().contains(super::super::DELIMITER));
    }
}
