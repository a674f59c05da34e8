use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, EvalReport, HybridConfig, PipelineError, Subset};
use crate::corpus::{CanonicalLink, Document};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub config: HybridConfig,
    pub report: EvalReport,
}

/// Module combinations first, then the two component ablations of the full
/// model.
pub fn ablation_matrix(base: &HybridConfig) -> Vec<(String, HybridConfig)> {
    let with = |cls: bool, gen: bool, rfx: bool| HybridConfig {
        use_cls: cls,
        use_gen: gen,
        use_rfx: rfx,
        use_gcn: true,
        use_cross_attention: true,
        ..base.clone()
    };
    vec![
        ("GEN".into(), with(false, true, false)),
        ("CLS".into(), with(true, false, false)),
        ("GEN+CLS".into(), with(true, true, false)),
        ("GEN+RFX".into(), with(false, true, true)),
        ("CLS+RFX".into(), with(true, false, true)),
        ("full".into(), with(true, true, true)),
        (
            "w/o GCN".into(),
            HybridConfig {
                use_gcn: false,
                ..with(true, true, true)
            },
        ),
        (
            "w/o CrossAtt".into(),
            HybridConfig {
                use_cross_attention: false,
                ..with(true, true, true)
            },
        ),
    ]
}

/// Train and evaluate every configuration of the matrix.
pub fn run_ablation(
    base: &HybridConfig,
    train_docs: &[Document],
    test_docs: &[Document],
    subset: Subset,
) -> Result<Vec<AblationRow>, PipelineError> {
    let mut rows = Vec::new();
    for (name, config) in ablation_matrix(base) {
        log::info!("ablation row {name}");
        let (model, _) = train(&config, train_docs, None)?;
        let pred: Vec<CanonicalLink> = model.decode(test_docs)?.into_iter().flat_map(|p| p.links).collect();
        rows.push(AblationRow {
            name,
            config,
            report: evaluate(&pred, test_docs, subset)?,
        });
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<14} {:>7} {:>7} {:>7}", "model", "P", "R", "F1");
    for r in rows {
        let p = &r.report.overall;
        let _ = writeln!(
            out,
            "{:<14} {:>7.1} {:>7.1} {:>7.1}",
            r.name, p.precision, p.recall, p.f1
        );
    }
    out
}
