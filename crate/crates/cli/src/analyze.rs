//! `analyze`: combine run outputs into the drop matrix, rule counts and the
//! clustering of response vectors.

use std::path::{Path, PathBuf};

use ablation_lab::ablation::{drop_matrix, rule_check, AblationMatrix, GameResult, RuleReport};
use ablation_lab::clustering::{
    cluster_profiles, kmeans_fit, silhouette, tsne_embed, ClusterModel, KMeansParams, ResponseVector, TsneParams,
    DEFAULT_MAX_ITERS,
};
use ablation_lab::derive_seed;
use ablation_lab::sampler::ModelConfig;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{required, AnalysisSettings, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{fmt_f64, fmt_opt, prepare_out_dir, write_json, Table};
use crate::run::{read_game_results, read_responses, write_game_results, GAME_RESULTS, RESPONSES};
use crate::AnalyzeArgs;

pub const DROP_MATRIX: &str = "drop_matrix.csv";
pub const DROP_MATRIX_LONG: &str = "drop_matrix_long.csv";
pub const RULES: &str = "rules.json";
pub const CLUSTERS: &str = "clusters.csv";
pub const PROFILES: &str = "profiles.csv";
pub const COMPOSITION: &str = "composition.csv";
pub const SILHOUETTE: &str = "silhouette.csv";
pub const SILHOUETTE_SUMMARY: &str = "silhouette_summary.csv";
pub const TSNE: &str = "tsne.csv";
pub const SUMMARY: &str = "analysis.json";

const ARTIFACTS: [&str; 11] = [
    GAME_RESULTS,
    DROP_MATRIX,
    DROP_MATRIX_LONG,
    RULES,
    CLUSTERS,
    PROFILES,
    COMPOSITION,
    SILHOUETTE,
    SILHOUETTE_SUMMARY,
    TSNE,
    SUMMARY,
];

/// Scope name used for statistics over every game together.
pub const POOLED: &str = "pooled";

/// A scope or step that could not be computed, with the reason.
#[derive(Debug, Clone, Serialize)]
pub struct Skipped {
    pub step: String,
    pub scope: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisSummary {
    pub settings: AnalysisSettings,
    pub games: Vec<String>,
    pub responses: usize,
    /// Drop-matrix entries where every game was excluded.
    pub degenerate_entries: Vec<String>,
    pub rules: RuleReport,
    pub clusters: Option<ClusterModel>,
    pub silhouette: Vec<ScopeScore>,
    pub skipped: Vec<Skipped>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScopeScore {
    pub scope: String,
    pub scored: usize,
    pub overall: f64,
}

/// Identifies a game in the combined tables; the subject is appended when set.
pub fn game_key(game_id: &str, subject_id: Option<&str>) -> String {
    match subject_id {
        Some(s) => format!("{game_id}/{s}"),
        None => game_id.to_string(),
    }
}

fn settings(args: &AnalyzeArgs, file: &RunConfig) -> CliResult<AnalysisSettings> {
    let mut s = file.analysis;
    if let Some(v) = args.k {
        s.k = v;
    }
    if let Some(v) = args.perplexity {
        s.perplexity = v;
    }
    if let Some(v) = args.seed.or(file.seed) {
        s.seed = v;
    }
    if let Some(v) = args.silhouette_sample {
        s.silhouette_sample = v;
    }
    if let Some(v) = args.tsne_sample {
        s.tsne_pooled_sample = v;
    }
    if let Some(v) = args.tsne_game_sample {
        s.tsne_game_sample = v;
    }
    if let Some(v) = args.tsne_iterations {
        s.tsne_iterations = v;
    }
    s.validate()?;
    Ok(s)
}

/// Sorted seeded subsample of `0..n` with at most `m` elements.
pub fn subsample(n: usize, m: usize, seed: u64) -> Vec<usize> {
    if n <= m {
        return (0..n).collect();
    }
    let mut v = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, m).into_vec();
    v.sort_unstable();
    v
}

pub fn analyze(args: &AnalyzeArgs) -> CliResult<AnalysisSummary> {
    let file = RunConfig::load_optional(args.config.as_deref())?;
    let settings = settings(args, &file)?;
    let dirs: Vec<PathBuf> = if args.results.is_empty() { file.paths.results.clone() } else { args.results.clone() };
    if dirs.is_empty() {
        return Err(CliError::Config("missing required setting --results".into()));
    }
    let out = required(args.out.clone(), file.paths.out.clone(), "--out")?;

    let mut results: Vec<GameResult> = Vec::new();
    let mut vectors: Vec<ResponseVector> = Vec::new();
    let mut groups: Vec<String> = Vec::new();
    for dir in &dirs {
        let path = dir.join(GAME_RESULTS);
        let rows = read_game_results(&path)?;
        let rpath = dir.join(RESPONSES);
        if rpath.exists() {
            let [r] = rows.as_slice() else {
                return Err(CliError::table(&path, "responses need exactly one game row alongside"));
            };
            let v = read_responses(&rpath)?;
            groups.extend(std::iter::repeat_n(game_key(&r.game_id, r.subject_id.as_deref()), v.len()));
            vectors.extend(v);
        }
        results.extend(rows);
    }
    let keys: Vec<String> = results
        .iter()
        .map(|r| game_key(&r.game_id, r.subject_id.as_deref()))
        .collect();
    for (i, k) in keys.iter().enumerate() {
        if keys[..i].contains(k) {
            return Err(CliError::Config(format!("game {k} appears in more than one result")));
        }
    }

    prepare_out_dir(&out, args.force, &ARTIFACTS)?;
    write_game_results(&out.join(GAME_RESULTS), &results)?;
    let matrix = drop_matrix(&results)?;
    write_drop_matrix(&out, &matrix, &keys)?;
    let rules = rule_check(&results);
    write_json(&out.join(RULES), &rules)?;

    let mut summary = AnalysisSummary {
        settings,
        games: keys,
        responses: vectors.len(),
        degenerate_entries: matrix
            .entries
            .iter()
            .filter(|e| e.median.is_none())
            .map(|e| format!("{}{}", e.row, e.col))
            .collect(),
        rules,
        clusters: None,
        silhouette: Vec::new(),
        skipped: Vec::new(),
    };
    if vectors.len() < settings.k {
        summary.skipped.push(Skipped {
            step: "clustering".into(),
            scope: POOLED.into(),
            reason: format!("{} response vectors for k = {}", vectors.len(), settings.k),
        });
    } else {
        cluster_stage(&out, &vectors, &groups, &settings, &mut summary)?;
    }
    write_json(&out.join(SUMMARY), &summary)?;
    Ok(summary)
}

fn write_drop_matrix(out: &Path, m: &AblationMatrix, keys: &[String]) -> CliResult<()> {
    let mut header = vec!["row", "col", "median", "excluded"];
    header.extend(keys.iter().map(String::as_str));
    let mut wide = Table::create(&out.join(DROP_MATRIX), &header)?;
    let mut long = Table::create(&out.join(DROP_MATRIX_LONG), &["row", "col", "game", "value"])?;
    for e in &m.entries {
        let mut row = vec![e.row.to_string(), e.col.to_string(), fmt_opt(e.median), e.excluded.to_string()];
        row.extend(e.per_game.iter().map(|v| fmt_opt(*v)));
        wide.row(row)?;
        for (k, v) in keys.iter().zip(&e.per_game) {
            long.row([e.row.to_string(), e.col.to_string(), k.clone(), fmt_opt(*v)])?;
        }
    }
    wide.finish()?;
    long.finish()
}

/// Scopes in output order: pooled first, then games by first appearance.
fn scopes(groups: &[String]) -> Vec<(String, Vec<usize>)> {
    let mut out = vec![(POOLED.to_string(), (0..groups.len()).collect::<Vec<_>>())];
    let mut order: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        match order.iter_mut().find(|(name, _)| name == g) {
            Some((_, v)) => v.push(i),
            None => order.push((g.clone(), vec![i])),
        }
    }
    out.extend(order);
    out
}

fn z_header(prefix: &str) -> Vec<String> {
    ModelConfig::ALL.iter().map(|c| format!("{prefix}{c}")).collect()
}

fn cluster_stage(
    out: &Path,
    vectors: &[ResponseVector],
    groups: &[String],
    s: &AnalysisSettings,
    summary: &mut AnalysisSummary,
) -> CliResult<()> {
    let points: Vec<[f64; 6]> = vectors.iter().map(|v| v.z).collect();
    let model = kmeans_fit(
        &points,
        &KMeansParams {
            k: s.k,
            restarts: s.restarts,
            max_iters: DEFAULT_MAX_ITERS,
            seed: s.seed,
        },
    )?;
    let labels: Vec<usize> = points.iter().map(|p| model.assign(p)).collect();

    let mut header: Vec<String> = ["game", "state", "cluster"].map(String::from).to_vec();
    header.extend(z_header("z_"));
    let mut t = Table::create(&out.join(CLUSTERS), &header.iter().map(String::as_str).collect::<Vec<_>>())?;
    for ((v, g), l) in vectors.iter().zip(groups).zip(&labels) {
        let mut row = vec![g.clone(), v.state.to_string(), l.to_string()];
        row.extend(v.z.iter().map(|&z| fmt_f64(z)));
        t.row(row)?;
    }
    t.finish()?;

    let group_refs: Vec<&str> = groups.iter().map(String::as_str).collect();
    let profiles = cluster_profiles(s.k, &points, &labels, &group_refs)?;
    let mut header: Vec<String> = ["cluster", "count", "proportion"].map(String::from).to_vec();
    header.extend(z_header("mean_"));
    let mut t = Table::create(&out.join(PROFILES), &header.iter().map(String::as_str).collect::<Vec<_>>())?;
    for c in 0..s.k {
        let mut row = vec![c.to_string(), profiles.counts[c].to_string(), fmt_f64(profiles.proportions[c])];
        match &profiles.means[c] {
            Some(m) => row.extend(m.iter().map(|&v| fmt_f64(v))),
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        t.row(row)?;
    }
    t.finish()?;
    let mut t = Table::create(&out.join(COMPOSITION), &["game", "cluster", "count", "proportion"])?;
    for g in &profiles.per_group {
        for c in 0..s.k {
            t.row([g.group.clone(), c.to_string(), g.counts[c].to_string(), fmt_f64(g.proportions[c])])?;
        }
    }
    t.finish()?;

    let scopes = scopes(groups);
    let mut scores = Table::create(&out.join(SILHOUETTE), &["scope", "game", "state", "cluster", "score"])?;
    let mut means = Table::create(&out.join(SILHOUETTE_SUMMARY), &["scope", "cluster", "mean"])?;
    for (si, (scope, members)) in scopes.iter().enumerate() {
        let sub: Vec<[f64; 6]> = members.iter().map(|&i| points[i]).collect();
        let sub_labels: Vec<usize> = members.iter().map(|&i| labels[i]).collect();
        match silhouette(&sub, &sub_labels, s.silhouette_sample, derive_seed(s.seed, 1000 + si as u64)) {
            Ok(sil) => {
                for (&j, &score) in sil.indices.iter().zip(&sil.scores) {
                    let i = members[j];
                    scores.row([
                        scope.clone(),
                        groups[i].clone(),
                        vectors[i].state.to_string(),
                        labels[i].to_string(),
                        fmt_f64(score),
                    ])?;
                }
                for (c, m) in sil.cluster_means.iter().enumerate() {
                    means.row([scope.clone(), c.to_string(), fmt_opt(*m)])?;
                }
                means.row([scope.clone(), "all".to_string(), fmt_f64(sil.overall)])?;
                summary.silhouette.push(ScopeScore {
                    scope: scope.clone(),
                    scored: sil.indices.len(),
                    overall: sil.overall,
                });
            }
            Err(e) => summary.skipped.push(Skipped {
                step: "silhouette".into(),
                scope: scope.clone(),
                reason: e.to_string(),
            }),
        }
    }
    scores.finish()?;
    means.finish()?;

    let mut t = Table::create(&out.join(TSNE), &["scope", "game", "state", "cluster", "x", "y"])?;
    for (si, (scope, members)) in scopes.iter().enumerate() {
        let cap = if si == 0 { s.tsne_pooled_sample } else { s.tsne_game_sample };
        let picked: Vec<usize> = subsample(members.len(), cap, derive_seed(s.seed, 2000 + si as u64))
            .into_iter()
            .map(|j| members[j])
            .collect();
        let sub: Vec<[f64; 6]> = picked.iter().map(|&i| points[i]).collect();
        let params = TsneParams {
            perplexity: s.perplexity,
            iterations: s.tsne_iterations,
            seed: derive_seed(s.seed, 3000 + si as u64),
        };
        match tsne_embed(&sub, &params) {
            Ok(y) => {
                for (&i, p) in picked.iter().zip(&y) {
                    t.row([
                        scope.clone(),
                        groups[i].clone(),
                        vectors[i].state.to_string(),
                        labels[i].to_string(),
                        fmt_f64(p[0]),
                        fmt_f64(p[1]),
                    ])?;
                }
            }
            Err(e) => summary.skipped.push(Skipped {
                step: "tsne".into(),
                scope: scope.clone(),
                reason: e.to_string(),
            }),
        }
    }
    t.finish()?;
    summary.clusters = Some(model);
    Ok(())
}
