//! Active-learning experiment loop.
//!
//! One experiment cell fixes a selection strategy and an augmentation mode
//! and repeats, for a number of independent runs: draw an initial labeled
//! batch, then per round subsample candidates, select a query batch, spend
//! oracle labels on it, optionally add adversarial variants of the queried
//! samples (which reuse the oracle label and cost nothing), and retrain
//! from scratch. Every random draw comes from a stream derived from
//! `(run seed, purpose, round)`, so augmentation activity never perturbs
//! later selections' randomness and identically seeded cells agree on
//! round-1 selections regardless of augmentation mode.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackParams};
use crate::data::{Dataset, Sample};
use crate::metrics::{self, DiversityStat};
use crate::nn::{self, AdamState, MlpModel, TrainConfig};
use crate::strategies::{self, Byproduct};
use crate::verifier::{self, HarvestParams, TimeBasis, TraceOutcome};
use crate::{Error, Result};

/// Slack added to a byproduct margin estimate when it seeds the harvest
/// radius, so the verified region safely contains the decision boundary.
pub const HARVEST_MARGIN_SLACK: f64 = 0.05;

/// Virtual-clock rate (branch-and-bound node expansions per second) used
/// for verification budgets when timing is suppressed. Calibrated to
/// roughly one CPU-second of desk-scale solver work, it makes suppressed
/// runs cut searches at identical points on every rerun and machine.
pub const VIRTUAL_NODE_RATE: u64 = 1_200;

/// Maximum number of source samples whose adversarial sets enter the
/// diversity measurement.
pub const DIVERSITY_SOURCE_CAP: usize = 50;

/// Query-batch selection strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Random,
    Fvaal,
    Dfal,
    Badge,
}

impl StrategyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Fvaal => "fvaal",
            StrategyKind::Dfal => "dfal",
            StrategyKind::Badge => "badge",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(StrategyKind::Random),
            "fvaal" => Ok(StrategyKind::Fvaal),
            "dfal" => Ok(StrategyKind::Dfal),
            "badge" => Ok(StrategyKind::Badge),
            other => Err(Error::invalid(format!(
                "unknown strategy `{other}` (expected random, fvaal, dfal, or badge)"
            ))),
        }
    }
}

/// How queried samples are augmented before retraining.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationMode {
    /// Oracle-labeled queries only.
    None,
    /// Fast gradient-sign attacks at evenly spaced radii, filtered to
    /// actual prediction flips.
    FgsmAdv,
    /// Verifier-harvested counterexamples (plus the strategy byproduct).
    FvAdv,
    /// Only the selection strategy's own adversarial byproduct.
    NativeSingle,
}

impl AugmentationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AugmentationMode::None => "none",
            AugmentationMode::FgsmAdv => "fgsm_adv",
            AugmentationMode::FvAdv => "fv_adv",
            AugmentationMode::NativeSingle => "native_single",
        }
    }
}

impl std::str::FromStr for AugmentationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AugmentationMode::None),
            "fgsm_adv" => Ok(AugmentationMode::FgsmAdv),
            "fv_adv" => Ok(AugmentationMode::FvAdv),
            "native_single" => Ok(AugmentationMode::NativeSingle),
            other => Err(Error::invalid(format!(
                "unknown augmentation `{other}` (expected none, fgsm_adv, fv_adv, or native_single)"
            ))),
        }
    }
}

/// How experiment timing behaves.
///
/// `Wall` measures real per-phase times and runs verification against real
/// wall-clock deadlines. `Suppressed` reports all times as zero and runs
/// verification on a deterministic virtual clock ([`VIRTUAL_NODE_RATE`]
/// node expansions per second), so identically seeded reruns produce
/// byte-identical outputs even when verification budgets are exhausted
/// mid-search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    #[default]
    Wall,
    Suppressed,
}

/// Full specification of one experiment cell.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub strategy: StrategyKind,
    pub augmentation: AugmentationMode,
    /// Initial labeled batch size.
    pub n_init: usize,
    /// Number of acquisition rounds after the initial fit.
    pub rounds: usize,
    /// Candidate sub-pool size per round (clipped to the unlabeled pool).
    pub n_sub: usize,
    /// Oracle queries per round.
    pub n_query: usize,
    /// Adversarial additions per queried sample (counting the strategy's
    /// native byproduct when one exists).
    pub n_adv: usize,
    /// Hidden width of the classifier trained each round.
    pub hidden_dim: usize,
    pub train: TrainConfig,
    pub attack: AttackParams<f64>,
    pub harvest: HarvestParams<f64>,
    /// Inclusive radius range for the gradient-sign augmentation sweep.
    pub fgsm_eps_range: (f64, f64),
    /// Harvest radius for sources without a margin byproduct.
    pub fixed_query_eps: f64,
    pub seed: u64,
    pub runs: usize,
    pub timing: TimingMode,
    /// Emit a progress line per round on standard error.
    pub progress: bool,
}

impl ExperimentConfig {
    pub fn new(strategy: StrategyKind, augmentation: AugmentationMode) -> Self {
        Self {
            strategy,
            augmentation,
            n_init: 20,
            rounds: 10,
            n_sub: 500,
            n_query: 20,
            n_adv: 3,
            hidden_dim: 32,
            train: TrainConfig::default(),
            attack: AttackParams::default(),
            harvest: HarvestParams::default(),
            fgsm_eps_range: (0.05, 0.1),
            fixed_query_eps: 0.01,
            seed: 42,
            runs: 5,
            timing: TimingMode::Wall,
            progress: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::invalid("runs must be at least 1"));
        }
        if self.n_init == 0 || self.n_query == 0 || self.n_adv == 0 {
            return Err(Error::invalid(
                "n_init, n_query, and n_adv must be positive",
            ));
        }
        if self.n_sub < self.n_query {
            return Err(Error::invalid(format!(
                "n_sub ({}) must be at least n_query ({})",
                self.n_sub, self.n_query
            )));
        }
        if self.hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim must be positive"));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.train.learning_rate > 0.0) || !self.train.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive and finite"));
        }
        let (lo, hi) = self.fgsm_eps_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!(
                "fgsm_eps_range ({lo}, {hi}) must satisfy 0 < low <= high <= 1"
            )));
        }
        if !(self.fixed_query_eps > 0.0 && self.fixed_query_eps <= 1.0) {
            return Err(Error::invalid("fixed_query_eps must lie in (0, 1]"));
        }
        self.attack.validate()?;
        self.harvest.validate()?;
        if self.augmentation == AugmentationMode::NativeSingle
            && !matches!(self.strategy, StrategyKind::Fvaal | StrategyKind::Dfal)
        {
            return Err(Error::invalid(
                "native_single augmentation requires a byproduct-producing strategy (fvaal or dfal)",
            ));
        }
        Ok(())
    }
}

/// One row of the per-round experiment log.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub run: usize,
    pub round: usize,
    /// Cumulative oracle labels spent.
    pub labeled: usize,
    /// Test accuracy of the model retrained this round.
    pub accuracy: f64,
    /// Adversarial training points added this round.
    pub adv_added: usize,
    /// Verifier query outcomes this round.
    pub sat: usize,
    pub unsat: usize,
    pub timeout: usize,
    pub select_ms: u64,
    pub verify_ms: u64,
    pub train_ms: u64,
}

/// Everything produced by one independent run of a cell.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub run: usize,
    pub records: Vec<RoundRecord>,
    /// Ids chosen per round; index 0 is the initial batch.
    pub selections: Vec<Vec<usize>>,
    /// Total oracle labels spent (augmented points are free).
    pub oracle_calls: usize,
    /// Pairwise feature-space diversity of the final round's adversarial
    /// additions, when it added at least two points.
    pub diversity: Option<DiversityStat>,
    pub final_model: MlpModel<f64>,
}

// Purpose tags for deriving independent random streams.
const PURPOSE_INIT_POOL: u64 = 1;
const PURPOSE_SUBSAMPLE: u64 = 2;
const PURPOSE_SELECT: u64 = 3;
const PURPOSE_MODEL: u64 = 4;
const PURPOSE_SHUFFLE: u64 = 5;
const PURPOSE_DIVERSITY: u64 = 6;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for `(run seed, purpose, round)`, independent of whatever
/// happened in other streams or earlier rounds.
fn derive_seed(run_seed: u64, purpose: u64, round: usize) -> u64 {
    mix64(
        run_seed
            .wrapping_add(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add((round as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)),
    )
}

fn elapsed_ms(timing: TimingMode, start: Instant) -> u64 {
    match timing {
        TimingMode::Wall => start.elapsed().as_millis() as u64,
        TimingMode::Suppressed => 0,
    }
}

fn remove_ids(pool: &mut Vec<usize>, remove: &[usize]) {
    let set: BTreeSet<usize> = remove.iter().copied().collect();
    pool.retain(|id| !set.contains(id));
}

/// A queried sample handed to augmentation: its features, the oracle
/// label just purchased, and any attack byproduct from selection.
#[derive(Clone, Debug)]
pub struct AugmentSource {
    pub id: usize,
    pub features: Vec<f64>,
    pub oracle_label: usize,
    pub byproduct: Option<Byproduct<f64>>,
}

/// Adversarial points generated for one source; they inherit its label.
#[derive(Clone, Debug)]
pub struct AugmentedSet {
    pub source_id: usize,
    pub label: usize,
    pub points: Vec<Vec<f64>>,
}

/// Augmentation output for a whole query batch, with verifier outcome
/// counts (nonzero only for the verified mode).
#[derive(Clone, Debug, Default)]
pub struct AugmentResult {
    pub sets: Vec<AugmentedSet>,
    pub sat: usize,
    pub unsat: usize,
    pub timeout: usize,
}

/// Generates adversarial additions for the queried batch under the
/// configured mode. Verified harvesting fans out across sources and the
/// results merge in source order, so the output is independent of worker
/// scheduling.
pub fn augment(
    model: &MlpModel<f64>,
    sources: &[AugmentSource],
    cfg: &ExperimentConfig,
) -> Result<AugmentResult> {
    match cfg.augmentation {
        AugmentationMode::None => Ok(AugmentResult::default()),
        AugmentationMode::NativeSingle => {
            let sets = sources
                .iter()
                .map(|src| AugmentedSet {
                    source_id: src.id,
                    label: src.oracle_label,
                    points: byproduct_point(src).into_iter().collect(),
                })
                .collect();
            Ok(AugmentResult {
                sets,
                ..AugmentResult::default()
            })
        }
        AugmentationMode::FgsmAdv => {
            let sets = sources
                .iter()
                .map(|src| fgsm_augment_one(model, src, cfg))
                .collect::<Result<Vec<_>>>()?;
            Ok(AugmentResult {
                sets,
                ..AugmentResult::default()
            })
        }
        AugmentationMode::FvAdv => {
            let per_source: Vec<(AugmentedSet, usize, usize, usize)> = sources
                .par_iter()
                .map(|src| fv_augment_one(model, src, cfg))
                .collect();
            let mut out = AugmentResult::default();
            for (set, sat, unsat, timeout) in per_source {
                out.sets.push(set);
                out.sat += sat;
                out.unsat += unsat;
                out.timeout += timeout;
            }
            Ok(out)
        }
    }
}

fn byproduct_point(src: &AugmentSource) -> Option<Vec<f64>> {
    src.byproduct
        .as_ref()
        .and_then(|b| b.adversarial.as_ref())
        .cloned()
}

fn fv_augment_one(
    model: &MlpModel<f64>,
    src: &AugmentSource,
    cfg: &ExperimentConfig,
) -> (AugmentedSet, usize, usize, usize) {
    // The strategy byproduct joins the set first and is excluded from the
    // harvest like any other already-found adversarial input.
    let mut points: Vec<Vec<f64>> = byproduct_point(src).into_iter().collect();
    let k_eff = cfg.n_adv - points.len();
    let (mut sat, mut unsat, mut timeout) = (0, 0, 0);
    if k_eff > 0 {
        let eps0 = src
            .byproduct
            .as_ref()
            .and_then(|b| b.margin)
            .map(|m| m + HARVEST_MARGIN_SLACK)
            .unwrap_or(cfg.fixed_query_eps);
        let mut params = cfg.harvest.clone();
        params.k = k_eff;
        let basis = match cfg.timing {
            TimingMode::Wall => TimeBasis::Wall,
            TimingMode::Suppressed => TimeBasis::VirtualNodes {
                nodes_per_sec: VIRTUAL_NODE_RATE,
            },
        };
        let outcome =
            verifier::harvest_traced_seeded(model, &src.features, &params, eps0, &points, basis);
        for trace in &outcome.trace {
            match trace.outcome {
                TraceOutcome::Sat => sat += 1,
                TraceOutcome::Unsat => unsat += 1,
                TraceOutcome::Timeout => timeout += 1,
            }
        }
        #[cfg(debug_assertions)]
        assert_fv_set_valid(
            model,
            src,
            &points,
            &outcome,
            cfg.harvest.exclusion_radius,
        );
        points.extend(outcome.points);
    }
    (
        AugmentedSet {
            source_id: src.id,
            label: src.oracle_label,
            points,
        },
        sat,
        unsat,
        timeout,
    )
}

/// Debug-build re-validation of one verified augmented set, independent of
/// the solver's internal acceptance check: every point must flip the
/// model's prediction at the source and lie in the unit box, every
/// harvested point must lie within its own query radius of the source, and
/// all pairs must stay separated by the exclusion radius on at least one
/// coordinate.
#[cfg(debug_assertions)]
fn assert_fv_set_valid(
    model: &MlpModel<f64>,
    src: &AugmentSource,
    seeds: &[Vec<f64>],
    outcome: &verifier::HarvestOutcome<f64>,
    radius: f64,
) {
    let source_class = model.predict(&src.features);
    let sat_eps: Vec<f64> = outcome
        .trace
        .iter()
        .filter(|t| t.outcome == TraceOutcome::Sat)
        .map(|t| t.epsilon)
        .collect();
    assert_eq!(
        outcome.points.len(),
        sat_eps.len(),
        "harvest must yield exactly one point per Sat verdict"
    );
    let all: Vec<&Vec<f64>> = seeds.iter().chain(outcome.points.iter()).collect();
    for (i, p) in all.iter().copied().enumerate() {
        assert_ne!(
            model.predict(p),
            source_class,
            "augmented point must flip the model's prediction"
        );
        assert!(
            p.iter().all(|&v| (0.0..=1.0).contains(&v)),
            "augmented point must stay inside the unit box"
        );
        if i >= seeds.len() {
            let eps = sat_eps[i - seeds.len()] + 1e-12;
            assert!(
                p.iter()
                    .zip(&src.features)
                    .all(|(&v, &x)| (v - x).abs() <= eps),
                "harvested point must lie within its query radius of the source"
            );
        }
        for q in &all[..i] {
            assert!(
                p.iter().zip(q.iter()).any(|(&v, &w)| (v - w).abs() >= radius - 1e-12),
                "augmented points must stay exclusion-separated"
            );
        }
    }
}

fn fgsm_augment_one(
    model: &MlpModel<f64>,
    src: &AugmentSource,
    cfg: &ExperimentConfig,
) -> Result<AugmentedSet> {
    let mut points: Vec<Vec<f64>> = byproduct_point(src).into_iter().collect();
    let k_eff = cfg.n_adv - points.len();
    let src_pred = model.predict(&src.features);
    let (lo, hi) = cfg.fgsm_eps_range;
    for i in 0..k_eff {
        let eps = if k_eff == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (k_eff - 1) as f64
        };
        let adv = attacks::fgsm(model, &src.features, src.oracle_label, eps)?;
        if model.predict(&adv) != src_pred {
            points.push(adv);
        }
    }
    dedupe_exact(&mut points);
    Ok(AugmentedSet {
        source_id: src.id,
        label: src.oracle_label,
        points,
    })
}

fn dedupe_exact(points: &mut Vec<Vec<f64>>) {
    let mut seen: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    points.retain(|p| {
        if seen.contains(p) {
            false
        } else {
            seen.push(p.clone());
            true
        }
    });
}

fn fit(
    cfg: &ExperimentConfig,
    input_dim: usize,
    num_classes: usize,
    data: &[(Vec<f64>, usize)],
    run_seed: u64,
    round: usize,
) -> Result<(MlpModel<f64>, u64)> {
    let start = Instant::now();
    let mut model = MlpModel::init(
        input_dim,
        cfg.hidden_dim,
        num_classes,
        derive_seed(run_seed, PURPOSE_MODEL, round),
    );
    let mut state = AdamState::new(&model);
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = derive_seed(run_seed, PURPOSE_SHUFFLE, round);
    nn::train(&mut model, &mut state, data, &train_cfg)?;
    Ok((model, elapsed_ms(cfg.timing, start)))
}

/// Runs every independent run of one experiment cell.
///
/// The label budget is exactly `n_init + rounds * n_query` oracle calls
/// per run (less when the unlabeled pool runs dry, which ends the run
/// early with partial records); adversarial additions reuse their source's
/// label and never touch the budget.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    train_pool: &Dataset<f64>,
    test_set: &Dataset<f64>,
) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    if train_pool.input_dim != test_set.input_dim {
        return Err(Error::invalid(format!(
            "train/test input dims differ: {} vs {}",
            train_pool.input_dim, test_set.input_dim
        )));
    }
    if train_pool.num_classes != test_set.num_classes {
        return Err(Error::invalid(format!(
            "train/test class counts differ: {} vs {}",
            train_pool.num_classes, test_set.num_classes
        )));
    }
    if train_pool.len() < cfg.n_init {
        return Err(Error::invalid(format!(
            "training pool ({} samples) smaller than n_init ({})",
            train_pool.len(),
            cfg.n_init
        )));
    }
    if test_set.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    (0..cfg.runs)
        .map(|r| run_single(cfg, train_pool, test_set, r))
        .collect()
}

fn run_single(
    cfg: &ExperimentConfig,
    train_pool: &Dataset<f64>,
    test_set: &Dataset<f64>,
    run: usize,
) -> Result<RunOutput> {
    let run_seed = cfg.seed.wrapping_add(run as u64);
    let input_dim = train_pool.input_dim;
    let num_classes = train_pool.num_classes;

    let mut unlabeled: Vec<usize> = (0..train_pool.len()).collect();
    let mut labeled: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut oracle_calls = 0usize;
    let mut records = Vec::with_capacity(cfg.rounds + 1);
    let mut selections = Vec::with_capacity(cfg.rounds + 1);
    let mut final_adv_sets: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut final_adv_round = 0usize;

    // Round 0: uniform initial batch, first fit.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run_seed, PURPOSE_INIT_POOL, 0));
    let mut init_ids =
        strategies::select_random::<f64, _>(&unlabeled, cfg.n_init, &mut rng)?.chosen_ids;
    init_ids.sort_unstable();
    remove_ids(&mut unlabeled, &init_ids);
    for &id in &init_ids {
        let s = &train_pool.samples[id];
        labeled.push((s.features.clone(), s.label));
        oracle_calls += 1;
    }
    selections.push(init_ids);

    let (mut model, train_ms) = fit(cfg, input_dim, num_classes, &labeled, run_seed, 0)?;
    let accuracy = nn::accuracy(&model, test_set)?;
    records.push(RoundRecord {
        run,
        round: 0,
        labeled: oracle_calls,
        accuracy,
        adv_added: 0,
        sat: 0,
        unsat: 0,
        timeout: 0,
        select_ms: 0,
        verify_ms: 0,
        train_ms,
    });
    if cfg.progress {
        eprintln!(
            "[{}_{} run {run}] round 0: labeled={oracle_calls} acc={accuracy:.4}",
            cfg.strategy.as_str(),
            cfg.augmentation.as_str()
        );
    }

    for t in 1..=cfg.rounds {
        if unlabeled.len() < cfg.n_query {
            break; // Pool exhausted: end the run with partial records.
        }
        let n_sub_eff = cfg.n_sub.min(unlabeled.len());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run_seed, PURPOSE_SUBSAMPLE, t));
        let mut cand_ids =
            strategies::select_random::<f64, _>(&unlabeled, n_sub_eff, &mut rng)?.chosen_ids;
        cand_ids.sort_unstable();
        let candidates: Vec<&Sample<f64>> =
            cand_ids.iter().map(|&id| &train_pool.samples[id]).collect();

        let select_start = Instant::now();
        let selection = match cfg.strategy {
            StrategyKind::Random => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(run_seed, PURPOSE_SELECT, t));
                strategies::select_random::<f64, _>(&cand_ids, cfg.n_query, &mut rng)?
            }
            StrategyKind::Fvaal => {
                strategies::select_fvaal(&model, &candidates, cfg.n_query, &cfg.attack)?
            }
            StrategyKind::Dfal => {
                strategies::select_dfal(&model, &candidates, cfg.n_query, &cfg.attack)?
            }
            StrategyKind::Badge => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(run_seed, PURPOSE_SELECT, t));
                strategies::select_badge(&model, &candidates, cfg.n_query, &mut rng)?
            }
        };
        let select_ms = elapsed_ms(cfg.timing, select_start);

        // Spend the oracle budget on the chosen batch.
        let sources: Vec<AugmentSource> = selection
            .chosen_ids
            .iter()
            .map(|&id| {
                let s = &train_pool.samples[id];
                AugmentSource {
                    id,
                    features: s.features.clone(),
                    oracle_label: s.label,
                    byproduct: selection.byproducts.get(&id).cloned(),
                }
            })
            .collect();
        oracle_calls += sources.len();

        let verify_start = Instant::now();
        let aug = augment(&model, &sources, cfg)?;
        let verify_ms = elapsed_ms(cfg.timing, verify_start);

        remove_ids(&mut unlabeled, &selection.chosen_ids);
        for src in &sources {
            labeled.push((src.features.clone(), src.oracle_label));
        }
        let mut adv_added = 0;
        for set in &aug.sets {
            for p in &set.points {
                labeled.push((p.clone(), set.label));
                adv_added += 1;
            }
        }

        let (new_model, train_ms) = fit(cfg, input_dim, num_classes, &labeled, run_seed, t)?;
        model = new_model;
        let accuracy = nn::accuracy(&model, test_set)?;
        records.push(RoundRecord {
            run,
            round: t,
            labeled: oracle_calls,
            accuracy,
            adv_added,
            sat: aug.sat,
            unsat: aug.unsat,
            timeout: aug.timeout,
            select_ms,
            verify_ms,
            train_ms,
        });
        selections.push(selection.chosen_ids.clone());
        final_adv_sets = aug.sets.iter().map(|s| s.points.clone()).collect();
        final_adv_round = t;
        if cfg.progress {
            eprintln!(
                "[{}_{} run {run}] round {t}: labeled={oracle_calls} acc={accuracy:.4} adv+={adv_added} sat/unsat/timeout={}/{}/{}",
                cfg.strategy.as_str(),
                cfg.augmentation.as_str(),
                aug.sat,
                aug.unsat,
                aug.timeout
            );
        }
    }

    let total_adv_points: usize = final_adv_sets.iter().map(|s| s.len()).sum();
    let diversity = if total_adv_points >= 2 {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(run_seed, PURPOSE_DIVERSITY, final_adv_round));
        Some(metrics::diversity(
            &model,
            &final_adv_sets,
            DIVERSITY_SOURCE_CAP,
            &mut rng,
        )?)
    } else {
        None
    };
    Ok(RunOutput {
        run,
        records,
        selections,
        oracle_calls,
        diversity,
        final_model: model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;
    use crate::linalg::Matrix;
    use std::time::Duration;

    /// 1-input net predicting class 1 exactly above x = 0.5.
    fn boundary_net() -> MlpModel<f64> {
        let mut m = MlpModel::zeros(1, 1, 2);
        m.w1 = Matrix::from_vec(1, 1, vec![10.0]);
        m.b1 = vec![5.0];
        m.w2 = Matrix::from_vec(2, 1, vec![0.0, 1.0]);
        m.b2 = vec![0.0, -10.0];
        m
    }

    fn small_cfg(strategy: StrategyKind, augmentation: AugmentationMode) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(strategy, augmentation);
        cfg.n_init = 10;
        cfg.rounds = 2;
        cfg.n_sub = 30;
        cfg.n_query = 5;
        cfg.n_adv = 2;
        cfg.hidden_dim = 8;
        cfg.train.epochs = 5;
        cfg.runs = 2;
        cfg.timing = TimingMode::Suppressed;
        cfg.harvest.time_limit = Duration::from_secs(5);
        cfg
    }

    fn blob_split(seed: u64, n: usize) -> (Dataset<f64>, Dataset<f64>) {
        let all = synthetic_blobs::<f64>(seed, n, 4, 3, 0.12).unwrap();
        all.split_at(n * 3 / 4)
    }

    #[test]
    fn zero_rounds_yields_one_record_per_run() {
        let (train, test) = blob_split(1, 80);
        let mut cfg = small_cfg(StrategyKind::Random, AugmentationMode::None);
        cfg.rounds = 0;
        let runs = run_experiment(&cfg, &train, &test).unwrap();
        assert_eq!(runs.len(), 2);
        for (r, out) in runs.iter().enumerate() {
            assert_eq!(out.records.len(), 1);
            assert_eq!(out.records[0].round, 0);
            assert_eq!(out.records[0].labeled, cfg.n_init);
            assert_eq!(out.oracle_calls, cfg.n_init);
            assert_eq!(out.selections.len(), 1);
            assert_eq!(out.selections[0].len(), cfg.n_init);
            assert_eq!(out.records[0].run, r);
            assert!(out.diversity.is_none());
        }
    }

    #[test]
    fn reruns_with_same_seed_are_identical() {
        let (train, test) = blob_split(2, 80);
        let cfg = small_cfg(StrategyKind::Random, AugmentationMode::None);
        let a = run_experiment(&cfg, &train, &test).unwrap();
        let b = run_experiment(&cfg, &train, &test).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.records, y.records);
            assert_eq!(x.selections, y.selections);
        }
    }

    #[test]
    fn label_budget_is_exact_and_unaffected_by_augmentation() {
        let (train, test) = blob_split(3, 120);
        let plain = small_cfg(StrategyKind::Fvaal, AugmentationMode::None);
        let augmented = small_cfg(StrategyKind::Fvaal, AugmentationMode::FvAdv);
        let a = run_experiment(&plain, &train, &test).unwrap();
        let b = run_experiment(&augmented, &train, &test).unwrap();
        for out in a.iter().chain(&b) {
            let completed = out.records.len() - 1;
            assert_eq!(out.oracle_calls, plain.n_init + completed * plain.n_query);
            assert_eq!(
                out.records.last().unwrap().labeled,
                out.oracle_calls,
                "labeled column tracks the oracle budget"
            );
        }
        // Augmented runs add training points without spending labels.
        let adv_total: usize = b[0].records.iter().map(|r| r.adv_added).sum();
        assert!(adv_total > 0, "verified augmentation found no points");
        assert_eq!(a[0].oracle_calls, b[0].oracle_calls);
    }

    #[test]
    fn round_one_selection_is_augmentation_invariant() {
        let (train, test) = blob_split(4, 100);
        for strategy in [StrategyKind::Fvaal, StrategyKind::Random, StrategyKind::Badge] {
            let mut plain = small_cfg(strategy, AugmentationMode::None);
            plain.rounds = 1;
            plain.runs = 1;
            let mut augmented = small_cfg(strategy, AugmentationMode::FvAdv);
            augmented.rounds = 1;
            augmented.runs = 1;
            if strategy == StrategyKind::Random || strategy == StrategyKind::Badge {
                // native byproducts only exist for fvaal/dfal; fv_adv is
                // still legal and must not disturb selection.
            }
            let a = run_experiment(&plain, &train, &test).unwrap();
            let b = run_experiment(&augmented, &train, &test).unwrap();
            assert_eq!(
                a[0].selections, b[0].selections,
                "strategy {strategy:?}: selections diverged at round 1"
            );
        }
    }

    #[test]
    fn accuracy_improves_with_more_labels_on_blobs() {
        let (train, test) = blob_split(5, 400);
        let mut cfg = small_cfg(StrategyKind::Random, AugmentationMode::None);
        cfg.rounds = 4;
        cfg.n_query = 15;
        cfg.n_init = 15;
        cfg.n_sub = 100;
        cfg.runs = 3;
        // Adam moves each weight by roughly the learning rate per step, so
        // a few hundred steps at 0.01 are needed before small batches can
        // separate the blobs.
        cfg.train.epochs = 40;
        cfg.train.learning_rate = 0.01;
        let runs = run_experiment(&cfg, &train, &test).unwrap();
        let improved = runs
            .iter()
            .filter(|r| {
                r.records.last().unwrap().accuracy > r.records.first().unwrap().accuracy
            })
            .count();
        assert!(improved >= 2, "accuracy improved in only {improved}/3 runs");
        for r in &runs {
            assert!(
                r.records.last().unwrap().accuracy > 0.5,
                "final accuracy {:.3} too low",
                r.records.last().unwrap().accuracy
            );
        }
    }

    #[test]
    fn pool_exhaustion_stops_cleanly() {
        let (train, test) = blob_split(6, 40); // 30 train samples
        let mut cfg = small_cfg(StrategyKind::Random, AugmentationMode::None);
        cfg.n_init = 10;
        cfg.n_query = 10;
        cfg.n_sub = 10;
        cfg.rounds = 5;
        cfg.runs = 1;
        let runs = run_experiment(&cfg, &train, &test).unwrap();
        let out = &runs[0];
        // 30 samples: initial 10, then two full rounds of 10.
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.oracle_calls, 30);
    }

    #[test]
    fn verified_augmentation_labels_points_with_oracle_label() {
        let model = boundary_net();
        let src = AugmentSource {
            id: 0,
            features: vec![0.49],
            oracle_label: 0,
            byproduct: None,
        };
        let mut cfg = small_cfg(StrategyKind::Fvaal, AugmentationMode::FvAdv);
        cfg.n_adv = 3;
        let out = augment(&model, &[src], &cfg).unwrap();
        assert_eq!(out.sets.len(), 1);
        let set = &out.sets[0];
        assert_eq!(set.label, 0);
        assert_eq!(set.points.len(), 3, "harvest should find 3 witnesses");
        assert_eq!(out.sat, 3);
        for p in &set.points {
            assert_eq!(model.predict(p), 1, "witness must flip the prediction");
            assert!(p[0] > 0.5);
        }
    }

    #[test]
    fn verified_augmentation_reuses_native_byproduct() {
        let model = boundary_net();
        let adv = vec![0.51];
        let src = AugmentSource {
            id: 7,
            features: vec![0.49],
            oracle_label: 0,
            byproduct: Some(Byproduct {
                adversarial: Some(adv.clone()),
                margin: Some(0.02),
            }),
        };
        let mut cfg = small_cfg(StrategyKind::Fvaal, AugmentationMode::FvAdv);
        cfg.n_adv = 2;
        let out = augment(&model, &[src.clone()], &cfg).unwrap();
        assert_eq!(out.sets[0].points[0], adv, "byproduct comes first");
        assert_eq!(out.sets[0].points.len(), 2, "one harvested on top");

        // native_single keeps only the byproduct.
        let mut cfg = small_cfg(StrategyKind::Fvaal, AugmentationMode::NativeSingle);
        cfg.n_adv = 2;
        let out = augment(&model, &[src], &cfg).unwrap();
        assert_eq!(out.sets[0].points, vec![adv]);
        assert_eq!(out.sat + out.unsat + out.timeout, 0);
    }

    #[test]
    fn gradient_sign_augmentation_filters_and_dedupes() {
        // Boundary net: source at 0.48 flips under all three radii.
        let model = boundary_net();
        let src = AugmentSource {
            id: 0,
            features: vec![0.48],
            oracle_label: 0,
            byproduct: None,
        };
        let mut cfg = small_cfg(StrategyKind::Random, AugmentationMode::FgsmAdv);
        cfg.n_adv = 3;
        let out = augment(&model, &[src], &cfg).unwrap();
        let pts = &out.sets[0].points;
        assert_eq!(pts.len(), 3);
        assert!((pts[0][0] - 0.53).abs() < 1e-12);
        assert!((pts[1][0] - 0.555).abs() < 1e-12);
        assert!((pts[2][0] - 0.58).abs() < 1e-12);

        // Constant model: nothing flips, nothing is added.
        let zero = MlpModel::<f64>::zeros(1, 1, 2);
        let src = AugmentSource {
            id: 0,
            features: vec![0.5],
            oracle_label: 0,
            byproduct: None,
        };
        let out = augment(&zero, &[src], &cfg).unwrap();
        assert!(out.sets[0].points.is_empty());

        // Saturated source far from the boundary: all radii clamp to the
        // same corner, so duplicates collapse.
        let src = AugmentSource {
            id: 0,
            features: vec![0.97],
            oracle_label: 1,
            byproduct: None,
        };
        let out = augment(&model, &[src], &cfg).unwrap();
        assert!(out.sets[0].points.len() <= 1);
    }

    #[test]
    fn config_validation_rejects_inconsistent_cells() {
        let mut cfg = small_cfg(StrategyKind::Random, AugmentationMode::NativeSingle);
        assert!(cfg.validate().is_err(), "native_single needs byproducts");
        cfg = small_cfg(StrategyKind::Badge, AugmentationMode::NativeSingle);
        assert!(cfg.validate().is_err());
        cfg = small_cfg(StrategyKind::Dfal, AugmentationMode::NativeSingle);
        assert!(cfg.validate().is_ok());

        let mut cfg = small_cfg(StrategyKind::Random, AugmentationMode::None);
        cfg.n_sub = 3; // below n_query
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg(StrategyKind::Random, AugmentationMode::None);
        cfg.runs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg(StrategyKind::Random, AugmentationMode::None);
        cfg.fgsm_eps_range = (0.2, 0.1);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn derived_streams_differ_across_purpose_and_round() {
        let mut seen = std::collections::BTreeSet::new();
        for purpose in 1..=6u64 {
            for round in 0..20usize {
                assert!(seen.insert(derive_seed(99, purpose, round)));
            }
        }
    }

    #[test]
    fn diversity_is_reported_for_final_round_additions() {
        let (train, test) = blob_split(7, 100);
        let mut cfg = small_cfg(StrategyKind::Fvaal, AugmentationMode::FvAdv);
        cfg.rounds = 1;
        cfg.runs = 1;
        let runs = run_experiment(&cfg, &train, &test).unwrap();
        let adv_last = runs[0].records.last().unwrap().adv_added;
        if adv_last >= 2 {
            let d = runs[0].diversity.expect("diversity for >=2 adversarial points");
            assert!(d.mean >= 0.0);
            assert!(d.pair_count >= 1);
        } else {
            assert!(runs[0].diversity.is_none());
        }
    }
}
