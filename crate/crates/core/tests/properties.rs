//! Property tests for the scoring primitives, each checked against an
//! independent oracle.

use std::collections::{BTreeSet, HashSet};
use std::sync::OnceLock;

use proptest::prelude::*;
use radletter_core::icd10::{Icd10Code, Registry, BUNDLED_TABLE};
use radletter_core::llm::{format_generation, parse_generation};
use radletter_core::readability::{fkgl, readability_score, text_stats, ReadabilityConfig, TextStats};
use radletter_core::scoring::{accuracy, overall_score, ScoreWeights};

fn bundled() -> &'static Registry {
    static REG: OnceLock<Registry> = OnceLock::new();
    REG.get_or_init(Registry::bundled)
}

/// Undotted codes read straight from the table text.
fn oracle_codes() -> &'static HashSet<String> {
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        BUNDLED_TABLE
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .map(|l| l.split('\t').next().unwrap().replace('.', ""))
            .collect()
    })
}

fn code_shape() -> impl Strategy<Value = String> {
    "[A-Z][0-9][0-9A-Z]([0-9A-Z]{0,4})"
}

const POOL: &[(&str, &str)] = &[
    ("E11.9", "Type 2 diabetes mellitus without complications"),
    ("I10", "Essential (primary) hypertension"),
    ("R91.1", "Solitary pulmonary nodule"),
    ("K76.0", "Fatty (change of) liver, not elsewhere classified"),
    ("N20.0", "Calculus of kidney"),
    ("J18.9", "Pneumonia, unspecified organism"),
    ("E04.1", "Nontoxic single thyroid nodule"),
    ("M51.36", "Other intervertebral disc degeneration, lumbar region"),
    ("K80.20", "Calculus of gallbladder without cholecystitis without obstruction"),
    ("J90", "Pleural effusion, not elsewhere classified"),
];
const INVALID: &[&str] = &["Z99.999", "A00.00", "Q99.99", "hello", "", "E11.", "1E1.9", "R91.7"];

fn small_registry() -> Registry {
    let table: String = POOL.iter().map(|(c, d)| format!("{c}\t{d}\n")).collect();
    Registry::parse(&table, "test").unwrap()
}

/// Varied spellings of a valid code: case, dot and padding.
fn spelled(code: &str, variant: u8) -> String {
    match variant % 4 {
        0 => code.to_string(),
        1 => code.to_lowercase(),
        2 => code.replace('.', ""),
        _ => format!("  {} ", code.to_lowercase()),
    }
}

fn undotted_upper(raw: &str) -> String {
    raw.trim().to_uppercase().replace('.', "")
}

/// Double-loop oracle: for each report code, scan the letter's codes for a
/// valid spelling of it.
fn oracle_accuracy(original: &[&str], letter: &[String]) -> f64 {
    if original.is_empty() {
        return 1.0;
    }
    let valid: HashSet<String> = POOL.iter().map(|(c, _)| c.replace('.', "")).collect();
    let mut hits = 0;
    for o in original {
        let want = o.replace('.', "");
        let mut found = false;
        for l in letter {
            let raw = l.trim();
            let dots = raw.matches('.').count();
            let dot_ok = dots == 0 || (dots == 1 && raw.find('.') == Some(3) && raw.len() > 4);
            let u = undotted_upper(raw);
            if dot_ok && valid.contains(&u) && u == want {
                found = true;
            }
        }
        if found {
            hits += 1;
        }
    }
    hits as f64 / original.len() as f64
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z]{1,12}", 1..15).prop_map(|w| {
        let mut s = w.join(" ");
        s.push('.');
        let mut c = s.chars();
        let first = c.next().unwrap().to_ascii_uppercase();
        std::iter::once(first).chain(c).collect()
    })
}

fn passage() -> impl Strategy<Value = String> {
    prop::collection::vec(sentence(), 1..8).prop_map(|s| s.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn normalize_is_idempotent(raw in code_shape(), lower in any::<bool>()) {
        let input = if lower { raw.to_lowercase() } else { raw.clone() };
        let once = Icd10Code::normalize(&input).unwrap();
        let twice = Icd10Code::normalize(once.as_str()).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(undotted_upper(once.as_str()), raw);
    }

    #[test]
    fn validation_matches_table(raw in code_shape()) {
        let code = Icd10Code::normalize(&raw).unwrap();
        prop_assert_eq!(bundled().validate(&code), oracle_codes().contains(&raw));
    }

    #[test]
    fn registry_code_spellings_agree(index in 0usize..98_000, variant in any::<u8>()) {
        let entry = bundled().entries().nth(index % bundled().len()).unwrap();
        let code = entry.code.as_str();
        let again = Icd10Code::normalize(&spelled(code, variant)).unwrap();
        prop_assert_eq!(again.as_str(), code);
        prop_assert!(bundled().validate(&again));
    }

    #[test]
    fn fkgl_matches_formula(s in 1usize..50, w_extra in 0usize..400, y_extra in 0usize..800) {
        let w = s + w_extra;
        let y = w + y_extra;
        let stats = TextStats::new(s, w, y).unwrap();
        let expected = 0.39 * (w as f64 / s as f64) + 11.8 * (y as f64 / w as f64) - 15.59;
        prop_assert!((fkgl(&stats) - expected).abs() < 1e-9);
    }

    #[test]
    fn readability_bounded_and_symmetric(
        target in 1.0f64..14.0,
        span in 0.5f64..20.0,
        offset in 0.0f64..40.0,
    ) {
        let cfg = ReadabilityConfig::new(target, span).unwrap();
        let above = readability_score(target + offset, &cfg);
        let below = readability_score(target - offset, &cfg);
        prop_assert!((0.0..=1.0).contains(&above));
        prop_assert!((above - below).abs() < 1e-12);
        prop_assert_eq!(readability_score(target, &cfg), 1.0);
        let expected = (1.0 - offset / span).max(0.0);
        prop_assert!((above - expected).abs() < 1e-9);
    }

    #[test]
    fn doubling_text_keeps_grade(text in passage()) {
        let single = text_stats(&text).unwrap();
        let double = text_stats(&format!("{text} {text}")).unwrap();
        prop_assert_eq!(double.sentences(), 2 * single.sentences());
        prop_assert_eq!(double.words(), 2 * single.words());
        prop_assert_eq!(double.syllables(), 2 * single.syllables());
        prop_assert!((fkgl(&single) - fkgl(&double)).abs() < 1e-9);
    }

    #[test]
    fn accuracy_matches_double_loop(
        original in prop::sample::subsequence((0..POOL.len()).collect::<Vec<_>>(), 0..=8),
        letter in prop::collection::vec((0..POOL.len() + INVALID.len(), any::<u8>()), 0..=10),
    ) {
        let reg = small_registry();
        let original: Vec<&str> = original.into_iter().map(|i| POOL[i].0).collect();
        let letter: Vec<String> = letter
            .into_iter()
            .map(|(i, v)| if i < POOL.len() { spelled(POOL[i].0, v) } else { INVALID[i - POOL.len()].to_string() })
            .collect();
        let set: BTreeSet<Icd10Code> = original.iter().map(|c| Icd10Code::normalize(c).unwrap()).collect();
        let got = accuracy(&set, &letter, &reg);
        prop_assert!((got.fraction - oracle_accuracy(&original, &letter)).abs() < 1e-12);
        prop_assert_eq!(got.matched.len() + got.missing.len(), set.len());
        prop_assert_eq!(got.vacuous, set.is_empty());
    }

    #[test]
    fn accuracy_ignores_order_and_duplicates(
        original in prop::sample::subsequence((0..POOL.len()).collect::<Vec<_>>(), 1..=8),
        letter in prop::collection::vec(0..POOL.len(), 0..=10),
        seed in any::<u64>(),
    ) {
        let reg = small_registry();
        let set: BTreeSet<Icd10Code> = original.iter().map(|&i| Icd10Code::normalize(POOL[i].0).unwrap()).collect();
        let codes: Vec<&str> = letter.iter().map(|&i| POOL[i].0).collect();
        let mut shuffled: Vec<&str> = codes.iter().chain(codes.iter()).copied().collect();
        let n = shuffled.len().max(1) as u64;
        shuffled.rotate_left((seed % n) as usize);
        shuffled.reverse();
        prop_assert_eq!(accuracy(&set, &codes, &reg), accuracy(&set, &shuffled, &reg));
    }

    #[test]
    fn overall_is_weighted_sum_and_monotone(
        r in 0.0f64..=1.0, a in 0.0f64..=1.0, dr in 0.0f64..=1.0, da in 0.0f64..=1.0,
    ) {
        let w = ScoreWeights::default();
        let base = overall_score(r, a, &w).unwrap();
        prop_assert!((base - (0.3 * r + 0.7 * a)).abs() < 1e-12);
        let r2 = (r + dr).min(1.0);
        let a2 = (a + da).min(1.0);
        prop_assert!(overall_score(r2, a, &w).unwrap() >= base);
        prop_assert!(overall_score(r, a2, &w).unwrap() >= base);
        prop_assert!(overall_score(r + 1.0 + dr, a, &w).is_err());
    }

    #[test]
    fn generation_round_trip(
        letter in "[A-Za-z][A-Za-z ,.]{0,40}(\n[A-Za-z ,.]{0,40}){0,4}",
        codes in prop::collection::vec(("[A-Z][0-9]{2}(\\.[0-9]{1,2})?", "[A-Za-z][A-Za-z ,()]{0,30}[A-Za-z)]"), 0..6),
    ) {
        let text = format_generation(&letter, &codes);
        let parsed = parse_generation(&text).unwrap();
        prop_assert_eq!(parsed.letter_body, letter.trim());
        prop_assert_eq!(parsed.declared_codes, codes);
    }
}
