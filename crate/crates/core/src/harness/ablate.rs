//! Ablation runners: one fresh training run per grid point, shared seed.

use crate::encoders::{tokenize, ABNORMAL_TEMPLATE, NORMAL_TEMPLATE};
use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::harness::evaluate::evaluate;
use crate::harness::train::train;
use crate::metrics::MetricsReport;
use crate::synthdata::Dataset;

pub const MARGIN_GRID: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
pub const TOKEN_GRID: [usize; 3] = [10, 20, 35];

/// Row labels of the component table, in order.
pub const COMPONENT_ROWS: [&str; 4] = ["baseline", "+prompt", "+TPCA", "+MC-Loss (full)"];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub dice_percent: f64,
    pub accuracy_percent: f64,
    pub pauc_percent: f64,
}

impl AblationRow {
    fn from_report(label: String, report: &MetricsReport) -> Self {
        Self {
            label,
            dice_percent: report.dice_percent,
            accuracy_percent: report.accuracy_percent,
            pauc_percent: report.pauc_percent,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    /// Name of the varied quantity, used as the first column header.
    pub variable: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Tab-separated table with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\tdice\taccuracy\tpauc\n", self.variable);
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.label, r.dice_percent, r.accuracy_percent, r.pauc_percent
            ));
        }
        out
    }
}

/// Trains and evaluates each `(label, config)` point in order.
pub fn run_grid(
    variable: &str,
    points: Vec<(String, TrainConfig)>,
    dataset: &Dataset,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationTable> {
    if points.is_empty() {
        return Err(Error::invalid("grid", "ablation grid is empty"));
    }
    let mut rows = Vec::with_capacity(points.len());
    for (label, cfg) in points {
        let outcome = train(&cfg, dataset)?;
        let report = evaluate(&outcome.model, &dataset.test)?;
        let row = AblationRow::from_report(label, &report);
        on_row(&row);
        rows.push(row);
    }
    Ok(AblationTable {
        variable: variable.to_string(),
        rows,
    })
}

/// Per-point configs never evaluate mid-run; only the final model is scored.
fn point(base: &TrainConfig) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.eval_every = 0;
    cfg
}

pub fn margin_configs(base: &TrainConfig, grid: &[f64]) -> Vec<(String, TrainConfig)> {
    grid.iter()
        .map(|&tau| {
            let mut cfg = point(base);
            cfg.margin = tau;
            (tau.to_string(), cfg)
        })
        .collect()
}

/// Longest anchor template, in words, for the configured category.
fn anchor_len(base: &TrainConfig) -> Result<usize> {
    let normal = tokenize(NORMAL_TEMPLATE, &base.model.category)?.len();
    let abnormal = tokenize(ABNORMAL_TEMPLATE, &base.model.category)?.len();
    Ok(normal.max(abnormal))
}

/// Token-count grid. The sequence length grows when the anchor words plus
/// `K` would not fit.
pub fn token_configs(base: &TrainConfig, grid: &[usize]) -> Result<Vec<(String, TrainConfig)>> {
    let anchor = anchor_len(base)?;
    Ok(grid
        .iter()
        .map(|&k| {
            let mut cfg = point(base);
            cfg.model.learnable_tokens = k;
            cfg.model.prompt_len = cfg.model.prompt_len.max(anchor + k);
            (k.to_string(), cfg)
        })
        .collect())
}

/// Cumulative component toggles: baseline (no prompt, no TPCA, no MC loss),
/// then learnable prompt, then TPCA, then MC loss.
pub fn component_configs(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let toggles = [(false, false, false), (true, false, false), (true, true, false), (true, true, true)];
    COMPONENT_ROWS
        .iter()
        .zip(toggles)
        .map(|(label, (prompt, tpca, mc))| {
            let mut cfg = point(base);
            if !prompt {
                cfg.model.learnable_tokens = 0;
            }
            cfg.model.use_tpca = tpca;
            cfg.use_mc_loss = mc;
            (label.to_string(), cfg)
        })
        .collect()
}

pub fn ablate_margin(
    base: &TrainConfig,
    dataset: &Dataset,
    grid: &[f64],
    on_row: impl FnMut(&AblationRow),
) -> Result<AblationTable> {
    run_grid("margin", margin_configs(base, grid), dataset, on_row)
}

pub fn ablate_tokens(
    base: &TrainConfig,
    dataset: &Dataset,
    grid: &[usize],
    on_row: impl FnMut(&AblationRow),
) -> Result<AblationTable> {
    run_grid("tokens", token_configs(base, grid)?, dataset, on_row)
}

pub fn ablate_components(
    base: &TrainConfig,
    dataset: &Dataset,
    on_row: impl FnMut(&AblationRow),
) -> Result<AblationTable> {
    run_grid("model", component_configs(base), dataset, on_row)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_have_the_published_sizes() {
        let base = TrainConfig::default();
        assert_eq!(margin_configs(&base, &MARGIN_GRID).len(), 4);
        assert_eq!(token_configs(&base, &TOKEN_GRID).unwrap().len(), 3);
        assert_eq!(component_configs(&base).len(), 4);
    }

    #[test]
    fn token_grid_lengthens_the_sequence() {
        let base = TrainConfig::default();
        let points = token_configs(&base, &TOKEN_GRID).unwrap();
        let lens: Vec<usize> = points.iter().map(|(_, c)| c.model.prompt_len).collect();
        assert_eq!(lens, vec![16, 26, 41]);
        for (_, cfg) in &points {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn component_toggles_are_cumulative() {
        let rows = component_configs(&TrainConfig::default());
        let flags: Vec<(usize, bool, bool)> = rows
            .iter()
            .map(|(_, c)| (c.model.learnable_tokens, c.model.use_tpca, c.use_mc_loss))
            .collect();
        assert_eq!(flags, vec![(0, false, false), (10, false, false), (10, true, false), (10, true, true)]);
        assert_eq!(rows[1].1.model.fused_width(), 32);
        assert_eq!(rows[2].1.model.fused_width(), 32 + 16);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let ds = Dataset {
            train: Vec::new(),
            test: Vec::new(),
        };
        assert!(run_grid("margin", Vec::new(), &ds, |_| {}).is_err());
    }
}
