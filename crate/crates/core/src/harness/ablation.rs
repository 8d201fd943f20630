use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::train::{train_observed, EpochObserver, RunReport};
use super::RunConfig;
use crate::model::GuidanceStage;
use crate::qcr::PromptMode;
use crate::qgmc::QgmcVariant;
use crate::{Error, Result};

/// Rows of the ablation suite, in table order.
pub const SUITE: [&str; 14] = [
    "full",
    "wo_qgmc",
    "wo_sti",
    "wo_tfi",
    "wo_stfi",
    "wo_qcr",
    "wo_all",
    "rm_b",
    "rm_m",
    "rm_f",
    "variant_a",
    "variant_b",
    "variant_c",
    "variant_d",
];

fn canonical(name: &str) -> Option<&'static str> {
    let key: String = name
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let key = key.replace("w_o_", "wo_").replace("r_m_", "rm_");
    let alias = match key.as_str() {
        "prompt_none" => "rm_f",
        "prompt_keywords" => "full",
        k => k,
    };
    SUITE.iter().copied().find(|&s| s == alias)
}

/// Applies a named suite row to `base`.
///
/// `prompt_none` and `prompt_keywords` are accepted as aliases of `rm_f` and
/// `full`; `w/o X` and `r/m X` spellings are accepted too.
pub fn apply_ablation(base: &RunConfig, name: &str) -> Result<RunConfig> {
    let row = canonical(name).ok_or_else(|| Error::Config(format!("unknown ablation `{name}`")))?;
    let mut cfg = base.clone();
    let a = &mut cfg.ablation;
    match row {
        "full" => {}
        "wo_qgmc" => a.disable_qgmc = true,
        "wo_sti" => a.disable_sti = true,
        "wo_tfi" => a.disable_tfi = true,
        "wo_stfi" => {
            a.disable_sti = true;
            a.disable_tfi = true;
        }
        "wo_qcr" => a.disable_qcr = true,
        "wo_all" => {
            a.disable_qgmc = true;
            a.disable_sti = true;
            a.disable_tfi = true;
            a.disable_qcr = true;
        }
        "rm_b" => a.query_guidance_removed.push(GuidanceStage::Beginning),
        "rm_m" => a.query_guidance_removed.push(GuidanceStage::Middle),
        "rm_f" => {
            a.query_guidance_removed.push(GuidanceStage::Final);
            a.prompt_mode = PromptMode::None;
        }
        v => {
            a.qgmc_variant = v.trim_start_matches("variant_").parse::<QgmcVariant>()?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub report: RunReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "nan".into())
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&RunReport> {
        self.rows.iter().find(|r| r.variant == variant).map(|r| &r.report)
    }

    /// Tab-separated comparison table with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\taudio_acc\tvisual_acc\tav_acc\toverall_acc\n");
        for r in &self.rows {
            let a = &r.report.accuracy;
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.4}",
                r.variant,
                cell(a.audio),
                cell(a.visual),
                cell(a.audio_visual),
                a.overall
            )
            .expect("string write");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

/// Trains the listed rows from one base configuration and seed. Rows whose
/// resolved configuration equals an earlier row's reuse its report, since
/// training is deterministic.
pub fn run_ablation_rows(
    base: &RunConfig,
    rows: &[&str],
    progress: &mut dyn FnMut(&str, usize, f64, f64),
) -> Result<AblationTable> {
    let mut done: Vec<(RunConfig, RunReport)> = Vec::new();
    let mut out = Vec::with_capacity(rows.len());
    for &name in rows {
        let cfg = apply_ablation(base, name)?;
        let report = match done.iter().find(|(c, _)| *c == cfg) {
            Some((_, r)) => r.clone(),
            None => {
                let observer: &mut EpochObserver = &mut |e, l, lr| progress(name, e, l, lr);
                let (_, r) = train_observed(&cfg, observer)?;
                done.push((cfg, r.clone()));
                r
            }
        };
        out.push(AblationRow {
            variant: canonical(name).expect("validated").to_string(),
            report,
        });
    }
    Ok(AblationTable { rows: out })
}

pub fn run_ablation_suite(base: &RunConfig) -> Result<AblationTable> {
    run_ablation_rows(base, &SUITE, &mut |_, _, _, _| {})
}
