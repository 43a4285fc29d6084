//! The full method comparison on a toy problem, repeated over seeds.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::generator::{generate, ToyData, ToySpec};
use super::novelty_score;
use crate::calibration::{fit_novelty_percentiles, fit_novelty_scaling, fit_temperature, Calibrator};
use crate::distillation::{fit_student_temperature, train_distilled, train_g_distilled, DistillConfig};
use crate::ensemble::{combine, ensemble_of_calibrated, DEFAULT_MEMBERS};
use crate::error::{Error, Result};
use crate::math::{derive_seed, softmax_into};
use crate::metrics::{evaluate_by_group, nll, GroupReports, MetricsReport, NLL_CLIP};
use crate::mlp::{predict, train, Dataset, DropoutScope, MlpConfig, MlpModel, TrainConfig, TrainLog};
use crate::predictions::{GroupTag, PredictionSet, ProbabilitySet};
use crate::uncertainty::{train_bayesian, BayesConfig, McSamples};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Single,
    TScaled,
    Ensemble,
    EnsembleTScaled,
    Distill,
    GDistill,
    Bayesian,
    NoveltyScaled,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Single,
        Method::TScaled,
        Method::Ensemble,
        Method::EnsembleTScaled,
        Method::Distill,
        Method::GDistill,
        Method::Bayesian,
        Method::NoveltyScaled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Single => "single",
            Method::TScaled => "t_scaled",
            Method::Ensemble => "ensemble",
            Method::EnsembleTScaled => "ensemble_t_scaled",
            Method::Distill => "distill",
            Method::GDistill => "g_distill",
            Method::Bayesian => "bayesian",
            Method::NoveltyScaled => "novelty_scaled",
        }
    }

    fn needs_full_ensemble(self) -> bool {
        matches!(
            self,
            Method::Ensemble | Method::EnsembleTScaled | Method::Distill | Method::GDistill
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

/// Parses `all` or a comma-separated list of method names.
pub fn parse_roster(text: &str) -> Result<Vec<Method>> {
    if text.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    let mut roster: Vec<Method> = text
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_>>()?;
    roster.sort();
    roster.dedup();
    if roster.is_empty() {
        return Err(Error::Empty("method roster"));
    }
    Ok(roster)
}

/// Temperatures at which the first member's NLL is traced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRange {
    pub t_min: f64,
    pub t_max: f64,
    pub steps: usize,
}

impl SweepRange {
    pub fn temperatures(&self) -> Result<Vec<f64>> {
        if !(self.t_min > 0.0) || self.t_max < self.t_min || self.steps < 2 {
            return Err(Error::invalid("sweep needs 0 < t_min <= t_max and steps >= 2"));
        }
        let span = self.t_max - self.t_min;
        Ok((0..self.steps)
            .map(|i| self.t_min + span * i as f64 / (self.steps - 1) as f64)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub width: usize,
    pub hidden_layers: usize,
    pub members: usize,
    pub dropout_rate: f64,
    pub use_batchnorm: bool,
    /// Settings for ensemble members and the Bayesian model; the seed is
    /// replaced per model.
    pub train: TrainConfig,
    /// Student settings; `distill.train.seed` is replaced per student.
    pub distill: DistillConfig,
    pub bayes: BayesConfig,
    /// Softmax temperature of the max-probability novelty score.
    pub novelty_temperature: f64,
    pub sweep: SweepRange,
    /// Retrain every model on train and validation data with the epoch
    /// schedule of its first run before evaluating. Temperatures stay
    /// fitted on the first run's validation predictions.
    pub retrain: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        let train = TrainConfig {
            learning_rate: 3e-3,
            batch_size: 100,
            max_epochs: 30,
            ..TrainConfig::default()
        };
        ToyConfig {
            width: 128,
            hidden_layers: 3,
            members: DEFAULT_MEMBERS,
            dropout_rate: 0.2,
            use_batchnorm: true,
            distill: DistillConfig {
                train: train.clone(),
                ..DistillConfig::default()
            },
            train,
            bayes: BayesConfig::default(),
            novelty_temperature: 1000.0,
            sweep: SweepRange {
                t_min: 0.25,
                t_max: 10.0,
                steps: 40,
            },
            retrain: true,
        }
    }
}

impl ToyConfig {
    pub fn network(&self) -> MlpConfig {
        MlpConfig {
            input_dim: 2,
            hidden_widths: vec![self.width; self.hidden_layers],
            class_count: 2,
            dropout_rate: self.dropout_rate,
            dropout_scope: DropoutScope::AllHidden,
            use_batchnorm: self.use_batchnorm,
            aleatoric_head: false,
        }
    }
}

/// First-member NLL on each grid partition across a temperature sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub temperatures: Vec<f64>,
    pub familiar_nll: Vec<f64>,
    pub novel_nll: Vec<f64>,
}

impl SweepCurve {
    fn argmin(values: &[f64], temps: &[f64]) -> Option<f64> {
        values
            .iter()
            .zip(temps)
            .min_by(|a, b| a.0.total_cmp(b.0))
            .map(|(_, &t)| t)
    }

    pub fn best_familiar_t(&self) -> Option<f64> {
        Self::argmin(&self.familiar_nll, &self.temperatures)
    }

    pub fn best_novel_t(&self) -> Option<f64> {
        Self::argmin(&self.novel_nll, &self.temperatures)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub reports: BTreeMap<Method, GroupReports>,
    pub failures: BTreeMap<Method, String>,
    /// Fitted temperatures, keyed by what they calibrate.
    pub temperatures: BTreeMap<String, f64>,
    /// Students whose fitted temperature was raised to 1.
    pub clamped: Vec<Method>,
    pub novelty_calibrator: Option<Calibrator>,
    pub member_epochs: Vec<usize>,
    pub sweep: Option<SweepCurve>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub count: usize,
}

impl Stat {
    fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat {
            mean,
            std,
            count: values.len(),
        })
    }
}

/// Mean ± std across seeds; `e99` only over seeds where it is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub nll: Stat,
    pub brier: Stat,
    pub label_error: Stat,
    pub ece: Stat,
    pub e99: Option<Stat>,
}

impl MetricSummary {
    fn of(reports: &[&MetricsReport]) -> Option<Self> {
        let col = |f: fn(&MetricsReport) -> f64| reports.iter().map(|r| f(r)).collect::<Vec<_>>();
        Some(MetricSummary {
            nll: Stat::of(&col(|r| r.nll))?,
            brier: Stat::of(&col(|r| r.brier))?,
            label_error: Stat::of(&col(|r| r.label_error))?,
            ece: Stat::of(&col(|r| r.ece))?,
            e99: Stat::of(&reports.iter().filter_map(|r| r.e99).collect::<Vec<_>>()),
        })
    }
}

/// Per-point NLL of every method on the first seed's grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub seed: u64,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub groups: Vec<GroupTag>,
    pub nll: BTreeMap<Method, Vec<f64>>,
}

impl Heatmap {
    /// CSV with header `x0,x1,group,method,nll`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x0,x1,group,method,nll\n");
        for (method, values) in &self.nll {
            for (i, v) in values.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    self.x0[i], self.x1[i], self.groups[i], method, v
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRun {
    pub spec: ToySpec,
    pub config: ToyConfig,
    pub roster: Vec<Method>,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedResult>,
    pub summary: BTreeMap<Method, BTreeMap<GroupTag, MetricSummary>>,
    pub heatmap: Option<Heatmap>,
}

impl ToyRun {
    /// Per-seed values of one quantity, skipping seeds where it is missing.
    pub fn per_seed(&self, method: Method, group: GroupTag, f: impl Fn(&MetricsReport) -> Option<f64>) -> Vec<Option<f64>> {
        self.per_seed
            .iter()
            .map(|s| s.reports.get(&method).and_then(|r| r.get(&group)).and_then(&f))
            .collect()
    }
}

/// Checks that no evaluation point leaks into training, validation or the
/// unlabeled pool, and that train/val lie in the familiar region.
pub fn audit(spec: &ToySpec, data: &ToyData) -> Result<()> {
    let grid: HashSet<&str> = data.grid_ids.iter().map(String::as_str).collect();
    let fitted = data.train_ids.iter().chain(&data.val_ids).chain(&data.unsup_ids);
    for id in fitted {
        if grid.contains(id.as_str()) {
            return Err(Error::invalid(format!("evaluation point `{id}` used for fitting")));
        }
    }
    for set in [&data.train, &data.val] {
        for row in set.inputs.rows() {
            if !spec.familiar_region.contains([row[0], row[1]]) {
                return Err(Error::invalid("training or validation point outside the familiar region"));
            }
        }
    }
    Ok(())
}

fn softmax_rows(logits: &Array2<f64>, t: f64) -> Array2<f64> {
    let mut out = logits.clone();
    let mut buf = vec![0.0; logits.ncols()];
    for (mut o, z) in out.rows_mut().into_iter().zip(logits.rows()) {
        softmax_into(z.as_slice().expect("standard layout"), t, &mut buf);
        o.iter_mut().zip(&buf).for_each(|(a, b)| *a = *b);
    }
    out
}

fn point_nll(probs: &ProbabilitySet) -> Vec<f64> {
    (0..probs.len())
        .map(|i| {
            let y = probs.labels()[i].expect("grid rows are labeled");
            -probs.row(i)[y].clamp(NLL_CLIP.0, NLL_CLIP.1).ln()
        })
        .collect()
}

fn fixed_t(cal: &Calibrator) -> f64 {
    match cal {
        Calibrator::Fixed { t } => *t,
        Calibrator::NoveltyLinear { t0, .. } => *t0,
    }
}

struct Member {
    /// First-run model; also serves as the novelty detector.
    fitted: MlpModel,
    /// Model that is evaluated (the retrained one when retraining).
    model: MlpModel,
    /// First-run validation predictions, used for calibration.
    val: PredictionSet,
    grid: PredictionSet,
}

/// A model after its first run and, optionally, after retraining.
struct Stages {
    fitted: MlpModel,
    model: MlpModel,
    epochs: usize,
}

type FitFn<'f> = dyn Fn(&mut MlpModel, &Dataset, &Dataset, Option<Vec<f64>>) -> Result<TrainLog> + 'f;

struct SeedContext<'a> {
    config: &'a ToyConfig,
    seed: u64,
    data: ToyData,
    train_val: Dataset,
    no_val: Dataset,
}

impl SeedContext<'_> {
    fn train_config(&self, stream: u64, schedule: Option<Vec<f64>>) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, stream),
            lr_schedule: schedule,
            ..self.config.train.clone()
        }
    }

    /// Trains on train/val, then optionally replays the schedule on
    /// train+val from the same initialisation.
    fn stages(&self, network: MlpConfig, init_stream: u64, fit: &FitFn<'_>) -> Result<Stages> {
        let init = MlpModel::init(network, derive_seed(self.seed, init_stream))?;
        let mut fitted = init.clone();
        let log = fit(&mut fitted, &self.data.train, &self.data.val, None)?;
        let model = if self.config.retrain {
            let mut again = init;
            fit(&mut again, &self.train_val, &self.no_val, Some(log.schedule()))?;
            again
        } else {
            fitted.clone()
        };
        Ok(Stages {
            fitted,
            model,
            epochs: log.epochs.len(),
        })
    }

    fn member(&self, index: usize) -> Result<(Member, usize)> {
        let stream = 200 + index as u64;
        let fit = |m: &mut MlpModel, tr: &Dataset, va: &Dataset, sched: Option<Vec<f64>>| {
            train(m, tr, va, &self.train_config(stream, sched))
        };
        let st = self.stages(self.config.network(), 100 + index as u64, &fit)?;
        let val = predict(&st.fitted, self.data.val.inputs.view(), &self.data.val_meta())?;
        let grid = predict(&st.model, self.data.grid.inputs.view(), &self.data.grid_meta())?;
        Ok((
            Member {
                fitted: st.fitted,
                model: st.model,
                val,
                grid,
            },
            st.epochs,
        ))
    }

    fn student(
        &self,
        teacher: &dyn Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
        with_unsup: bool,
    ) -> Result<(ProbabilitySet, f64, bool)> {
        // both students share initialisation and batch order
        let fit = |m: &mut MlpModel, tr: &Dataset, va: &Dataset, sched: Option<Vec<f64>>| {
            let cfg = DistillConfig {
                train: TrainConfig {
                    seed: derive_seed(self.seed, 301),
                    lr_schedule: sched,
                    ..self.config.distill.train.clone()
                },
                ..self.config.distill.clone()
            };
            if with_unsup {
                train_g_distilled(m, teacher, tr, va, self.data.unsup.view(), &cfg)
            } else {
                train_distilled(m, teacher, tr, va, &cfg)
            }
        };
        let st = self.stages(self.config.network(), 300, &fit)?;
        let val = predict(&st.fitted, self.data.val.inputs.view(), &self.data.val_meta())?;
        let (cal, clamped) = fit_student_temperature(&val)?;
        let grid = predict(&st.model, self.data.grid.inputs.view(), &self.data.grid_meta())?;
        Ok((cal.apply(&grid)?, fixed_t(&cal), clamped))
    }

    fn bayesian(&self) -> Result<(ProbabilitySet, f64)> {
        let bayes = &self.config.bayes;
        let fit = |m: &mut MlpModel, tr: &Dataset, va: &Dataset, sched: Option<Vec<f64>>| {
            train_bayesian(m, tr, va, bayes, &self.train_config(401, sched))
        };
        let st = self.stages(bayes.network(&self.config.network()), 400, &fit)?;
        let val_mc = McSamples::draw(&st.fitted, self.data.val.inputs.view(), bayes, derive_seed(self.seed, 402))?;
        let t = val_mc.fit_temperature(&self.data.val.labels)?;
        let grid_mc = McSamples::draw(&st.model, self.data.grid.inputs.view(), bayes, derive_seed(self.seed, 403))?;
        let meta = self.data.grid_meta();
        let probs = ProbabilitySet::new(
            meta.iter().map(|m| m.id.clone()).collect(),
            grid_mc.probabilities(t),
            meta.iter().map(|m| m.label).collect(),
            meta.iter().map(|m| m.group).collect(),
        )?;
        Ok((probs, t))
    }

    fn novelty_scaled(&self, first: &Member) -> Result<(ProbabilitySet, Calibrator)> {
        let t = self.config.novelty_temperature;
        let score = |x: ArrayView2<f64>| novelty_score(&first.fitted, x, t);
        let percentiles = fit_novelty_percentiles(&score(self.data.train.inputs.view())?)?;
        let val = first.val.with_novelty(&score(self.data.val.inputs.view())?)?;
        let cal = fit_novelty_scaling(&val, percentiles)?;
        let grid = first.grid.with_novelty(&score(self.data.grid.inputs.view())?)?;
        Ok((cal.apply(&grid)?, cal))
    }

    fn sweep(&self, first: &Member) -> Result<SweepCurve> {
        let temperatures = self.config.sweep.temperatures()?;
        let fam = first.grid.filter_by_group(GroupTag::FamiliarTest);
        let nov = first.grid.filter_by_group(GroupTag::NovelTest);
        let curve = |set: &PredictionSet| -> Result<Vec<f64>> {
            if set.is_empty() {
                return Ok(Vec::new());
            }
            temperatures
                .iter()
                .map(|&t| nll(&Calibrator::fixed(t)?.apply(set)?))
                .collect()
        };
        Ok(SweepCurve {
            familiar_nll: curve(&fam)?,
            novel_nll: curve(&nov)?,
            temperatures,
        })
    }
}

/// Everything one seed produces: the result plus each method's grid
/// probabilities (kept for the heat map).
fn run_seed(
    spec: &ToySpec,
    config: &ToyConfig,
    roster: &[Method],
    seed: u64,
) -> Result<(SeedResult, BTreeMap<Method, ProbabilitySet>, Array2<f64>, Vec<GroupTag>)> {
    let spec = ToySpec {
        seed,
        ..spec.clone()
    };
    let data = generate(&spec)?;
    audit(&spec, &data)?;
    let train_val = Dataset::new(
        concatenate(Axis(0), &[data.train.inputs.view(), data.val.inputs.view()])
            .map_err(|e| Error::shape(e.to_string()))?,
        data.train.labels.iter().chain(&data.val.labels).copied().collect(),
    )?;
    let ctx = SeedContext {
        config,
        seed,
        data,
        train_val,
        no_val: Dataset::new(Array2::zeros((0, 2)), Vec::new())?,
    };
    let mut result = SeedResult {
        seed,
        reports: BTreeMap::new(),
        failures: BTreeMap::new(),
        temperatures: BTreeMap::new(),
        clamped: Vec::new(),
        novelty_calibrator: None,
        member_epochs: Vec::new(),
        sweep: None,
    };
    let mut probs: BTreeMap<Method, ProbabilitySet> = BTreeMap::new();
    let mut record = |result: &mut SeedResult, method: Method, outcome: Result<ProbabilitySet>| {
        if !roster.contains(&method) {
            return;
        }
        match outcome.and_then(|p| Ok((evaluate_by_group(&p)?, p))) {
            Ok((reports, p)) => {
                result.reports.insert(method, reports);
                probs.insert(method, p);
            }
            Err(e) => {
                result.failures.insert(method, e.to_string());
            }
        }
    };

    let needs_members = roster.iter().any(|m| *m != Method::Bayesian);
    let member_count = if roster.iter().any(|m| m.needs_full_ensemble()) {
        config.members.max(1)
    } else {
        1
    };
    let members: Result<Vec<Member>> = if needs_members {
        (0..member_count)
            .map(|i| {
                ctx.member(i).map(|(m, epochs)| {
                    result.member_epochs.push(epochs);
                    m
                })
            })
            .collect()
    } else {
        Ok(Vec::new())
    };

    match members {
        Err(e) => {
            for &m in roster.iter().filter(|m| **m != Method::Bayesian) {
                result.failures.insert(m, format!("ensemble member training failed: {e}"));
            }
        }
        Ok(members) if needs_members => {
            let first = &members[0];
            record(&mut result, Method::Single, Ok(first.grid.to_probabilities()));
            let ts = fit_temperature(&first.val).and_then(|cal| {
                result.temperatures.insert("single".into(), fixed_t(&cal));
                cal.apply(&first.grid)
            });
            record(&mut result, Method::TScaled, ts);
            match ctx.sweep(first) {
                Ok(curve) => result.sweep = Some(curve),
                Err(e) => {
                    result.failures.insert(Method::Single, format!("sweep failed: {e}"));
                }
            }
            if roster.contains(&Method::NoveltyScaled) {
                let ns = ctx.novelty_scaled(first).map(|(p, cal)| {
                    result.novelty_calibrator = Some(cal);
                    p
                });
                record(&mut result, Method::NoveltyScaled, ns);
            }

            if roster.iter().any(|m| m.needs_full_ensemble()) {
                let grids: Vec<ProbabilitySet> = members.iter().map(|m| m.grid.to_probabilities()).collect();
                record(&mut result, Method::Ensemble, combine(&grids));
                let pairs: Vec<(PredictionSet, PredictionSet)> =
                    members.iter().map(|m| (m.grid.clone(), m.val.clone())).collect();
                let calibrated = ensemble_of_calibrated(&pairs);
                let member_ts: Vec<f64> = match &calibrated {
                    Ok((_, cals)) => cals.iter().map(fixed_t).collect(),
                    Err(_) => Vec::new(),
                };
                for (i, t) in member_ts.iter().enumerate() {
                    result.temperatures.insert(format!("member_{i}"), *t);
                }
                record(&mut result, Method::EnsembleTScaled, calibrated.map(|(p, _)| p));

                if !member_ts.is_empty() {
                    let teacher = |x: ArrayView2<f64>| -> Result<Array2<f64>> {
                        let mut sum = Array2::zeros((x.nrows(), 2));
                        for (m, &t) in members.iter().zip(&member_ts) {
                            sum += &softmax_rows(&m.model.logits(x)?, t);
                        }
                        Ok(sum / members.len() as f64)
                    };
                    for (method, with_unsup) in [(Method::Distill, false), (Method::GDistill, true)] {
                        if !roster.contains(&method) {
                            continue;
                        }
                        let out = ctx.student(&teacher, with_unsup).map(|(p, t, clamped)| {
                            result.temperatures.insert(method.as_str().into(), t);
                            if clamped {
                                result.clamped.push(method);
                            }
                            p
                        });
                        record(&mut result, method, out);
                    }
                } else {
                    for method in [Method::Distill, Method::GDistill] {
                        if roster.contains(&method) {
                            result.failures.insert(method, "no calibrated teacher".into());
                        }
                    }
                }
            }
        }
        Ok(_) => {}
    }

    if roster.contains(&Method::Bayesian) {
        let out = ctx.bayesian().map(|(p, t)| {
            result.temperatures.insert("bayesian".into(), t);
            p
        });
        record(&mut result, Method::Bayesian, out);
    }
    Ok((result, probs, ctx.data.grid.inputs.clone(), ctx.data.grid_groups.clone()))
}

/// Runs every method in `roster` for each seed and aggregates the results.
///
/// Each seed regenerates the data with `spec.seed` replaced by that seed
/// and derives all model seeds from it. A failing method is recorded in the
/// seed's `failures` without stopping the others; a failing seed (bad data)
/// aborts the run.
pub fn run_experiment(spec: &ToySpec, config: &ToyConfig, roster: &[Method], seeds: &[u64]) -> Result<ToyRun> {
    if roster.is_empty() {
        return Err(Error::Empty("method roster"));
    }
    if seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    spec.validate()?;
    config.sweep.temperatures()?;
    let mut roster = roster.to_vec();
    roster.sort();
    roster.dedup();

    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut heatmap = None;
    for (k, &seed) in seeds.iter().enumerate() {
        let (result, probs, grid, groups) = run_seed(spec, config, &roster, seed)?;
        if k == 0 {
            heatmap = Some(Heatmap {
                seed,
                x0: grid.column(0).to_vec(),
                x1: grid.column(1).to_vec(),
                groups,
                nll: probs.iter().map(|(m, p)| (*m, point_nll(p))).collect(),
            });
        }
        per_seed.push(result);
    }

    let mut summary = BTreeMap::new();
    for &method in &roster {
        let mut by_group = BTreeMap::new();
        for group in [GroupTag::FamiliarTest, GroupTag::NovelTest] {
            let reports: Vec<&MetricsReport> = per_seed
                .iter()
                .filter_map(|s| s.reports.get(&method).and_then(|r| r.get(&group)))
                .collect();
            if let Some(s) = MetricSummary::of(&reports) {
                by_group.insert(group, s);
            }
        }
        summary.insert(method, by_group);
    }

    Ok(ToyRun {
        spec: spec.clone(),
        config: config.clone(),
        roster,
        seeds: seeds.to_vec(),
        per_seed,
        summary,
        heatmap,
    })
}
