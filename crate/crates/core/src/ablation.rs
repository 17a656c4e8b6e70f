//! The six-configuration study: per-game accuracies, ordering rules and the
//! normalized pairwise drop matrix.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{common_choice_accuracy, SplitAssignment, SplitLabel};
use crate::nn::Topology;
use crate::sampler::{ModelConfig, SamplerContext};
use crate::training::{evaluate_accuracy, train_with_progress, EpochRecord, TrainSchedule, TrainedModel};
use crate::{Error, Result};

/// A configuration whose training or evaluation failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFailure {
    pub config: ModelConfig,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameResult {
    pub game_id: String,
    pub subject_id: Option<String>,
    /// Validation accuracy per configuration, indexed by [`ModelConfig::index`].
    pub accuracies: [Option<f64>; 6],
    /// Validation accuracy of always predicting the train majority action.
    pub common: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub failures: Vec<ConfigFailure>,
}

impl GameResult {
    pub fn accuracy(&self, config: ModelConfig) -> Option<f64> {
        self.accuracies[config.index()]
    }
}

/// Outcome of [`run_ablation`]: the summary plus every model that trained.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub result: GameResult,
    pub models: Vec<TrainedModel>,
}

/// Trains and evaluates `configs` on a shared split.
///
/// Failures of individual configurations are recorded in the result instead
/// of aborting; only problems with the store or split itself are returned as
/// errors. Configurations train in parallel on the current rayon pool and
/// their results do not depend on scheduling.
pub fn run_ablation(
    ctx: &SamplerContext<'_>,
    split: &SplitAssignment,
    configs: &[ModelConfig],
    topology: &Topology,
    schedule: &TrainSchedule,
    on_epoch: &(dyn Fn(ModelConfig, &EpochRecord) + Sync),
) -> Result<AblationRun> {
    let store = ctx.store();
    if store.is_empty() {
        return Err(Error::EmptyStore("nothing to train on".into()));
    }
    split.check_covers(store)?;
    let common = common_choice_accuracy(store, split)?;

    let outcomes: Vec<(ModelConfig, Result<(TrainedModel, f64)>)> = configs
        .par_iter()
        .map(|&config| {
            let out = train_with_progress(ctx, split, config, topology, schedule, &mut |r| on_epoch(config, r))
                .and_then(|m| {
                    let acc = evaluate_accuracy(&m.network, ctx, split, SplitLabel::Val)?;
                    Ok((m, acc))
                });
            (config, out)
        })
        .collect();

    let mut accuracies = [None; 6];
    let mut failures = Vec::new();
    let mut models = Vec::new();
    for (config, outcome) in outcomes {
        match outcome {
            Ok((model, acc)) => {
                accuracies[config.index()] = Some(acc);
                models.push(model);
            }
            Err(e) => failures.push(ConfigFailure {
                config,
                kind: e.kind().to_string(),
                message: e.to_string(),
            }),
        }
    }
    Ok(AblationRun {
        result: GameResult {
            game_id: store.game_id.clone(),
            subject_id: store.subject_id.clone(),
            accuracies,
            common,
            n_train: split.count(SplitLabel::Train),
            n_val: split.count(SplitLabel::Val),
            failures,
        },
        models,
    })
}

/// `Acc_m − Acc_n` for one game.
pub fn raw_difference(result: &GameResult, m: ModelConfig, n: ModelConfig) -> Option<f64> {
    Some(result.accuracy(m)? - result.accuracy(n)?)
}

/// Percent drop of `row` relative to `col`, normalized by how far `col`
/// beats the common choice. `None` when either accuracy is missing or `col`
/// does not beat the common choice.
pub fn normalized_drop(result: &GameResult, row: ModelConfig, col: ModelConfig) -> Option<f64> {
    if row == col {
        return Some(0.0);
    }
    let denom = result.accuracy(col)? - result.common;
    if !(denom > 0.0) {
        return None;
    }
    Some(100.0 * raw_difference(result, row, col)? / denom)
}

/// Median; mean of the two central values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropEntry {
    pub row: ModelConfig,
    pub col: ModelConfig,
    /// Median over the games that were not excluded.
    pub median: Option<f64>,
    /// One value per game, in input order; `None` marks an excluded game.
    pub per_game: Vec<Option<f64>>,
    pub excluded: usize,
}

/// 6 × 6 matrix of median normalized drops, rows and columns in A–F order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMatrix {
    pub games: Vec<String>,
    pub entries: Vec<DropEntry>,
}

impl AblationMatrix {
    pub fn entry(&self, row: ModelConfig, col: ModelConfig) -> &DropEntry {
        &self.entries[row.index() * 6 + col.index()]
    }

    pub fn median(&self, row: ModelConfig, col: ModelConfig) -> Option<f64> {
        self.entry(row, col).median
    }
}

/// Builds the matrix, leaving entries without any usable game at `None`.
pub fn drop_matrix(results: &[GameResult]) -> Result<AblationMatrix> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("drop matrix needs at least one game".into()));
    }
    let mut entries = Vec::with_capacity(36);
    for row in ModelConfig::ALL {
        for col in ModelConfig::ALL {
            let per_game: Vec<Option<f64>> = results.iter().map(|r| normalized_drop(r, row, col)).collect();
            let kept: Vec<f64> = per_game.iter().flatten().copied().collect();
            entries.push(DropEntry {
                row,
                col,
                median: median(&kept),
                excluded: per_game.len() - kept.len(),
                per_game,
            });
        }
    }
    Ok(AblationMatrix {
        games: results.iter().map(|r| r.game_id.clone()).collect(),
        entries,
    })
}

/// Like [`drop_matrix`] but fails when some entry excludes every game.
pub fn normalized_drop_matrix(results: &[GameResult]) -> Result<AblationMatrix> {
    let m = drop_matrix(results)?;
    if let Some(e) = m.entries.iter().find(|e| e.median.is_none()) {
        return Err(Error::DegenerateDenominator {
            row: e.row.letter(),
            col: e.col.letter(),
        });
    }
    Ok(m)
}

/// Ordering rules checked per game; all comparisons are strict.
pub const RULES: [&str; 8] = ["A>B", "C>D", "A>C", "E>F", "A>E", "B>D", "B>F", "min>common"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCount {
    pub rule: String,
    pub satisfied: usize,
    /// Games where every accuracy the rule needs is present.
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    pub games: usize,
    pub rules: Vec<RuleCount>,
}

fn rule_holds(rule: &str, r: &GameResult) -> Option<bool> {
    if rule == "min>common" {
        let accs: Option<Vec<f64>> = r.accuracies.iter().copied().collect();
        return Some(accs?.iter().all(|&a| a > r.common));
    }
    let (a, b) = rule.split_once('>')?;
    let a: ModelConfig = a.parse().ok()?;
    let b: ModelConfig = b.parse().ok()?;
    Some(r.accuracy(a)? > r.accuracy(b)?)
}

pub fn rule_check(results: &[GameResult]) -> RuleReport {
    let rules = RULES
        .iter()
        .map(|&rule| {
            let outcomes: Vec<bool> = results.iter().filter_map(|r| rule_holds(rule, r)).collect();
            RuleCount {
                rule: rule.to_string(),
                satisfied: outcomes.iter().filter(|&&b| b).count(),
                evaluated: outcomes.len(),
            }
        })
        .collect();
    RuleReport {
        games: results.len(),
        rules,
    }
}
