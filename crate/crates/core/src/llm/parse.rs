//! Parsers for the `letter / === ICD-10 CODES === / CODE | description`
//! output contract.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DELIMITER: &str = "=== ICD-10 CODES ===";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("completion is empty")]
    Empty,
    #[error("letter body is empty")]
    EmptyLetter,
    #[error("zero parseable lines")]
    ZeroParseableLines,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedGeneration {
    pub letter_body: String,
    /// `(raw code, stated description)` pairs in the order given.
    pub declared_codes: Vec<(String, String)>,
}

/// Parses one `CODE | description` line. Leading list markers (`-`, `*`,
/// `•`) are tolerated; the code must be a single token.
fn parse_code_line(line: &str) -> Option<(String, String)> {
    let line = line.trim().trim_start_matches(['-', '*', '•']).trim_start();
    let (code, description) = line.split_once('|')?;
    let code = code.trim();
    if code.is_empty() || code.contains(char::is_whitespace) {
        return None;
    }
    Some((code.to_string(), description.trim().to_string()))
}

fn code_lines<'a>(lines: impl Iterator<Item = &'a str>) -> Vec<(String, String)> {
    lines
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| {
            let parsed = parse_code_line(l);
            if parsed.is_none() {
                tracing::warn!(line = l.trim(), "skipping non-conforming code line");
            }
            parsed
        })
        .collect()
}

pub fn parse_generation(raw: &str) -> Result<ParsedGeneration, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let mut body_lines = Vec::new();
    let mut lines = raw.lines();
    let mut found = false;
    for line in lines.by_ref() {
        if line.trim() == DELIMITER {
            found = true;
            break;
        }
        body_lines.push(line);
    }
    let letter_body = body_lines.join("\n").trim().to_string();
    if letter_body.is_empty() {
        return Err(ParseError::EmptyLetter);
    }
    if !found {
        tracing::warn!("generation has no ICD-10 delimiter; treating it as declaring no codes");
    }
    Ok(ParsedGeneration {
        letter_body,
        declared_codes: code_lines(lines),
    })
}

pub fn parse_code_list(raw: &str) -> Result<Vec<(String, String)>, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let codes = code_lines(raw.lines());
    if codes.is_empty() {
        return Err(ParseError::ZeroParseableLines);
    }
    Ok(codes)
}

/// Inverse of [`parse_generation`] for well-formed input. Used to build
/// scripts and fixtures.
pub fn format_generation(letter: &str, codes: &[(impl AsRef<str>, impl AsRef<str>)]) -> String {
    let mut out = String::from(letter.trim());
    out.push('\n');
    out.push_str(DELIMITER);
    for (code, description) in codes {
        out.push('\n');
        out.push_str(code.as_ref());
        out.push_str(" | ");
        out.push_str(description.as_ref());
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_with_codes() {
        let p = parse_generation(
            "Dear patient...\n=== ICD-10 CODES ===\nE11.9 | Type 2 diabetes mellitus without complications",
        )
        .unwrap();
        assert_eq!(p.letter_body, "Dear patient...");
        assert_eq!(
            p.declared_codes,
            vec![(
                "E11.9".to_string(),
                "Type 2 diabetes mellitus without complications".to_string()
            )]
        );
    }

    #[test]
    fn generation_without_delimiter() {
        let p = parse_generation("Dear patient, all is well.").unwrap();
        assert!(p.declared_codes.is_empty());
        assert_eq!(p.letter_body, "Dear patient, all is well.");
    }

    #[test]
    fn generation_with_empty_body() {
        assert_eq!(
            parse_generation("=== ICD-10 CODES ===\nE11.9 | d"),
            Err(ParseError::EmptyLetter)
        );
        assert_eq!(parse_generation("  "), Err(ParseError::Empty));
    }

    #[test]
    fn generation_skips_junk_code_lines() {
        let p = parse_generation("Hi.\n  === ICD-10 CODES ===  \n- I10 | HTN\n\nnot a code\nE 11 | x\n").unwrap();
        assert_eq!(p.declared_codes, vec![("I10".to_string(), "HTN".to_string())]);
    }

    #[test]
    fn code_list() {
        let two = parse_code_list(
            "E11.9 | Type 2 diabetes mellitus without complications\nI10 | Essential (primary) hypertension",
        )
        .unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two[1].0, "I10");
        let trailing = parse_code_list(
            "E11.9 | Type 2 diabetes mellitus without complications\nI10 | Essential (primary) hypertension\n\n\n",
        )
        .unwrap();
        assert_eq!(two, trailing);
        assert_eq!(parse_code_list("no codes here"), Err(ParseError::ZeroParseableLines));
    }

    #[test]
    fn format_then_parse() {
        let text = format_generation("Hello there.", &[("I10", "Essential (primary) hypertension")]);
        let p = parse_generation(&text).unwrap();
        assert_eq!(p.letter_body, "Hello there.");
        assert_eq!(p.declared_codes.len(), 1);
    }
}
