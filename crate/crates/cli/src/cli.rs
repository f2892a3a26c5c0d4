use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "radletter", version, about = "Patient-friendly radiology letters with iterative self-reflection")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Scripted,
}

#[derive(Debug, Args, Default)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,

    /// Script file for the scripted backend.
    #[arg(long, global = true)]
    pub script: Option<PathBuf>,

    /// ICD-10 table (CODE<TAB>DESCRIPTION); defaults to the bundled release.
    #[arg(long, global = true)]
    pub registry: Option<PathBuf>,

    #[arg(long, global = true)]
    pub n_candidates: Option<usize>,

    #[arg(long, global = true)]
    pub max_trials: Option<usize>,

    #[arg(long, global = true)]
    pub target_grade: Option<f64>,

    /// Overall-score threshold that ends the loop early.
    #[arg(long, global = true)]
    pub early_stop: Option<f64>,

    /// Readability and accuracy weights, e.g. `0.3,0.7`.
    #[arg(long, global = true, value_parser = parse_weights)]
    pub weights: Option<(f64, f64)>,

    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    #[arg(long, short = 'o', global = true)]
    pub output_dir: Option<PathBuf>,

    /// FHIR server base URL.
    #[arg(long, global = true)]
    pub fhir_url: Option<String>,

    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

fn parse_weights(s: &str) -> Result<(f64, f64), String> {
    let (r, a) = s
        .split_once(',')
        .ok_or_else(|| "expected two comma-separated numbers".to_string())?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok((parse(r)?, parse(a)?))
}

#[derive(Debug, Args, Clone, Default)]
pub struct ReportArgs {
    /// Report text file.
    pub report: Option<PathBuf>,

    /// Pull the report from the FHIR server (DiagnosticReport id).
    #[arg(long, conflicts_with = "report")]
    pub report_id: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract and validate the report's ICD-10 codes.
    ExtractCodes(ReportArgs),
    /// Flesch-Kincaid grade and standardized readability of a text file.
    Readability {
        text: PathBuf,
    },
    /// One generation with no reflection, scored like pipeline candidates.
    ZeroShot(ReportArgs),
    /// Full generate / score / reflect loop.
    Reflect {
        #[command(flatten)]
        report: ReportArgs,

        /// Push the final letter to the FHIR server as a DocumentReference.
        #[arg(long)]
        push: bool,

        /// Patient reference for the pushed document (defaults to the report subject).
        #[arg(long)]
        patient_ref: Option<String>,
    },
    /// Zero-shot vs reflected comparison over a corpus directory.
    Eval {
        corpus: PathBuf,
    },
    /// Run an in-memory FHIR server until interrupted.
    #[cfg(feature = "stub-server")]
    ServeStub {
        /// Report text files to seed as DiagnosticReport resources (id = file stem).
        seed: Vec<PathBuf>,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_flag() {
        assert_eq!(parse_weights("0.3,0.7"), Ok((0.3, 0.7)));
        assert_eq!(parse_weights(" 0.5 , 0.5"), Ok((0.5, 0.5)));
        assert!(parse_weights("0.3").is_err());
        assert!(parse_weights("a,b").is_err());
    }

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "radletter", "reflect", "r.txt", "--backend", "scripted", "--script", "s.json", "--max-trials", "1",
            "--json",
        ])
        .unwrap();
        assert_eq!(cli.global.backend, Some(BackendKind::Scripted));
        assert_eq!(cli.global.max_trials, Some(1));
        assert!(cli.global.json);
        assert!(matches!(cli.command, Command::Reflect { push: false, .. }));
    }

    #[test]
    fn report_file_and_id_conflict() {
        assert!(Cli::try_parse_from(["radletter", "zero-shot", "r.txt", "--report-id", "x"]).is_err());
    }
}
