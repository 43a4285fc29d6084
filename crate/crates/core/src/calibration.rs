//! Temperature scaling and novelty-weighted temperature scaling.
//!
//! A fixed calibrator divides every logit vector by one temperature fitted to
//! minimise validation NLL. The novelty-weighted variant lets the temperature
//! grow with a per-sample novelty score, `T(x) = T0 + T1 * novelty(x)`,
//! where raw scores are mapped to `[0, 1]` using the 5th and 95th percentile
//! of training scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::NLL_CLIP;
use crate::predictions::{PredictionSet, ProbabilitySet};

/// Temperature search interval for [`fit_temperature`].
pub const T_RANGE: (f64, f64) = (0.05, 10.0);
const COARSE_GRID_POINTS: usize = 200;
const GOLDEN_TOLERANCE: f64 = 1e-4;

/// Grid for the novelty-weighted fit: both axes step by 0.25 up to 4.
pub const NOVELTY_GRID_STEP: f64 = 0.25;
pub const NOVELTY_GRID_MAX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Calibrator {
    Fixed {
        t: f64,
    },
    NoveltyLinear {
        t0: f64,
        t1: f64,
        p5: f64,
        p95: f64,
    },
}

impl Calibrator {
    pub fn fixed(t: f64) -> Result<Self> {
        let c = Calibrator::Fixed { t };
        c.validate()?;
        Ok(c)
    }

    pub fn novelty_linear(t0: f64, t1: f64, p5: f64, p95: f64) -> Result<Self> {
        let c = Calibrator::NoveltyLinear { t0, t1, p5, p95 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Calibrator::Fixed { t } if t > 0.0 && t.is_finite() => Ok(()),
            Calibrator::Fixed { t } => Err(Error::invalid(format!("temperature {t} must be > 0"))),
            Calibrator::NoveltyLinear { t0, t1, p5, p95 } => {
                if !(t0 > 0.0 && t0 + t1 > 0.0) {
                    return Err(Error::invalid(format!(
                        "novelty temperatures t0={t0}, t1={t1} must keep T positive on [0, 1]"
                    )));
                }
                if !(p5 <= p95) {
                    return Err(Error::invalid(format!("percentiles out of order: {p5} > {p95}")));
                }
                Ok(())
            }
        }
    }

    /// Temperature used for a sample with the given raw novelty score.
    pub fn temperature(&self, novelty: Option<f64>) -> Result<f64> {
        match *self {
            Calibrator::Fixed { t } => Ok(t),
            Calibrator::NoveltyLinear { t0, t1, p5, p95 } => {
                let raw = novelty.ok_or_else(|| Error::MissingNovelty(String::new()))?;
                Ok(t0 + t1 * normalize_novelty(raw, p5, p95))
            }
        }
    }

    pub fn apply(&self, set: &PredictionSet) -> Result<ProbabilitySet> {
        self.validate()?;
        let temps = self.temperatures(set)?;
        let mut i = 0;
        Ok(set.to_probabilities_with(|_| {
            i += 1;
            temps[i - 1]
        }))
    }

    fn temperatures(&self, set: &PredictionSet) -> Result<Vec<f64>> {
        set.records()
            .iter()
            .map(|r| {
                self.temperature(r.novelty).map_err(|e| match e {
                    Error::MissingNovelty(_) => Error::MissingNovelty(r.id.clone()),
                    e => e,
                })
            })
            .collect()
    }
}

pub fn apply(cal: &Calibrator, set: &PredictionSet) -> Result<ProbabilitySet> {
    cal.apply(set)
}

/// Minimises a function of temperature over [`T_RANGE`].
///
/// A 200-point log-spaced grid locates the best cell, golden-section search
/// refines inside the neighbouring cells to `|ΔT| < 1e-4`, and `T = 1` is
/// always considered as a candidate. Returns `(T, objective(T))`.
pub fn minimize_temperature(mut objective: impl FnMut(f64) -> f64) -> (f64, f64) {
    let (lo, hi) = (T_RANGE.0.ln(), T_RANGE.1.ln());
    let grid: Vec<f64> = (0..COARSE_GRID_POINTS)
        .map(|i| (lo + (hi - lo) * i as f64 / (COARSE_GRID_POINTS - 1) as f64).exp())
        .collect();
    let values: Vec<f64> = grid.iter().map(|&t| objective(t)).collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("non-empty grid");

    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(grid.len() - 1)];
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = objective(c);
    let mut fd = objective(d);
    while b - a > GOLDEN_TOLERANCE {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = objective(d);
        }
    }
    let mid = 0.5 * (a + b);
    let candidates = [(mid, objective(mid)), (grid[best], values[best]), (1.0, objective(1.0))];
    candidates
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("non-empty")
}

/// Precomputed labeled logits for fast NLL-versus-temperature evaluation.
pub(crate) struct LabeledLogits<'a> {
    rows: Vec<(&'a [f64], usize)>,
}

impl<'a> LabeledLogits<'a> {
    pub(crate) fn new(set: &'a PredictionSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::Empty("validation set"));
        }
        let rows = set
            .records()
            .iter()
            .map(|r| {
                r.label
                    .map(|y| (r.logits.as_slice(), y))
                    .ok_or_else(|| Error::Unlabeled(r.id.clone()))
            })
            .collect::<Result<_>>()?;
        Ok(LabeledLogits { rows })
    }

    /// Clipped NLL with row `i` divided by `temperature(i)`.
    pub(crate) fn nll_with(&self, temperature: impl Fn(usize) -> f64) -> f64 {
        let mut buf = Vec::new();
        let total: f64 = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, (logits, y))| {
                buf.resize(logits.len(), 0.0);
                crate::math::softmax_into(logits, temperature(i), &mut buf);
                -buf[*y].clamp(NLL_CLIP.0, NLL_CLIP.1).ln()
            })
            .sum();
        total / self.rows.len() as f64
    }
}

/// Single temperature minimising NLL on `val`.
pub fn fit_temperature(val: &PredictionSet) -> Result<Calibrator> {
    let data = LabeledLogits::new(val)?;
    let (t, _) = minimize_temperature(|t| data.nll_with(|_| t));
    Calibrator::fixed(t)
}

/// Maps a raw novelty score to `[0, 1]` using the training percentiles.
///
/// When `p5 == p95` every score maps to 0.5.
pub fn normalize_novelty(raw: f64, p5: f64, p95: f64) -> f64 {
    if p95 <= p5 {
        return 0.5;
    }
    ((raw - p5) / (p95 - p5)).clamp(0.0, 1.0)
}

/// Percentile `q ∈ [0, 1]` of sorted data, interpolating linearly between
/// order statistics (position `q * (n - 1)`).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// 5th and 95th percentile of training novelty scores.
pub fn fit_novelty_percentiles(train_scores: &[f64]) -> Result<(f64, f64)> {
    if train_scores.len() < 2 {
        return Err(Error::invalid("need at least two novelty scores"));
    }
    if train_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite novelty score"));
    }
    let mut sorted = train_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((percentile(&sorted, 0.05), percentile(&sorted, 0.95)))
}

/// Grid search for `(T0, T1)` minimising validation NLL.
///
/// `T0` ranges over `0.25..=4` and `T1` over `0..=4`, both in 0.25 steps.
/// Ties go to the smaller `T1`, then the smaller `T0`.
pub fn fit_novelty_scaling(val: &PredictionSet, percentiles: (f64, f64)) -> Result<Calibrator> {
    let (p5, p95) = percentiles;
    let data = LabeledLogits::new(val)?;
    let novelty: Vec<f64> = val
        .records()
        .iter()
        .map(|r| {
            r.novelty
                .map(|v| normalize_novelty(v, p5, p95))
                .ok_or_else(|| Error::MissingNovelty(r.id.clone()))
        })
        .collect::<Result<_>>()?;

    let steps = (NOVELTY_GRID_MAX / NOVELTY_GRID_STEP).round() as usize;
    let mut best: Option<(f64, f64, f64)> = None;
    for i1 in 0..=steps {
        let t1 = i1 as f64 * NOVELTY_GRID_STEP;
        for i0 in 1..=steps {
            let t0 = i0 as f64 * NOVELTY_GRID_STEP;
            let v = data.nll_with(|i| t0 + t1 * novelty[i]);
            if best.is_none_or(|(_, _, b)| v < b) {
                best = Some((t0, t1, v));
            }
        }
    }
    let (t0, t1, _) = best.expect("non-empty grid");
    Calibrator::novelty_linear(t0, t1, p5, p95)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::nll;
    use crate::predictions::{GroupTag, PredictionRecord};
    use proptest::prelude::*;

    fn set_of(rows: &[(Vec<f64>, usize, Option<f64>)]) -> PredictionSet {
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, (l, y, n))| PredictionRecord {
                id: format!("r{i}"),
                logits: l.clone(),
                label: Some(*y),
                group: GroupTag::Val,
                novelty: *n,
            })
            .collect();
        PredictionSet::new(rows[0].0.len(), records).unwrap()
    }

    /// Four binary samples with logits `[scale * ln 3, 0]`, three labeled 0.
    fn matched_fixture(scale: f64, novelty: Option<f64>) -> PredictionSet {
        let l = vec![scale * 3f64.ln(), 0.0];
        set_of(&[
            (l.clone(), 0, novelty),
            (l.clone(), 0, novelty),
            (l.clone(), 0, novelty),
            (l, 1, novelty),
        ])
    }

    /// Brute-force minimiser over a dense linear grid.
    fn dense_grid_argmin(set: &PredictionSet, points: usize) -> f64 {
        let (lo, hi) = T_RANGE;
        (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .map(|t| (t, nll(&Calibrator::Fixed { t }.apply(set).unwrap()).unwrap()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    #[test]
    fn apply_examples() {
        let set = set_of(&[(vec![2.0, 0.0], 0, Some(7.0)), (vec![-1.0, 3.0], 1, Some(0.0))]);
        assert_eq!(Calibrator::Fixed { t: 1.0 }.apply(&set).unwrap(), set.to_probabilities());

        let p = Calibrator::Fixed { t: 2.0 }.apply(&set).unwrap();
        assert!((p.row(0)[0] - 0.731059).abs() < 1e-6);
        assert!((p.row(0)[1] - 0.268941).abs() < 1e-6);

        let lin = Calibrator::novelty_linear(1.0, 0.0, 0.0, 10.0).unwrap();
        assert_eq!(lin.apply(&set).unwrap(), set.to_probabilities());
    }

    #[test]
    fn novelty_linear_needs_scores() {
        let set = set_of(&[(vec![2.0, 0.0], 0, None)]);
        let lin = Calibrator::novelty_linear(1.0, 1.0, 0.0, 1.0).unwrap();
        assert!(matches!(lin.apply(&set), Err(Error::MissingNovelty(id)) if id == "r0"));
    }

    #[test]
    fn rejects_invalid_calibrators() {
        assert!(Calibrator::fixed(0.0).is_err());
        assert!(Calibrator::fixed(-1.0).is_err());
        assert!(Calibrator::novelty_linear(0.0, 1.0, 0.0, 1.0).is_err());
        assert!(Calibrator::novelty_linear(1.0, -1.5, 0.0, 1.0).is_err());
        assert!(Calibrator::novelty_linear(1.0, 0.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn fit_recovers_matched_temperatures() {
        for scale in [1.0, 3.0] {
            let set = matched_fixture(scale, None);
            let oracle = dense_grid_argmin(&set, 10_000);
            assert!((oracle - scale).abs() < 1e-3, "oracle {oracle}");
            match fit_temperature(&set).unwrap() {
                Calibrator::Fixed { t } => {
                    assert!((t - scale).abs() < 1e-3, "t={t}");
                    assert!((t - oracle).abs() < 1e-3);
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn fit_on_flat_objective_matches_grid_minimum() {
        // every row already beyond the clip bound for most temperatures
        let set = set_of(&[(vec![50.0, 0.0], 0, None), (vec![50.0, 0.0], 0, None)]);
        let cal = fit_temperature(&set).unwrap();
        let fitted = nll(&cal.apply(&set).unwrap()).unwrap();
        let grid_min = (0..1000)
            .map(|i| 0.05 + 9.95 * i as f64 / 999.0)
            .map(|t| nll(&Calibrator::Fixed { t }.apply(&set).unwrap()).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!((fitted - grid_min).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_empty() {
        let empty = PredictionSet::empty(2).unwrap();
        assert!(matches!(fit_temperature(&empty), Err(Error::Empty(_))));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_novelty(50.0, 10.0, 90.0), 0.5);
        assert_eq!(normalize_novelty(5.0, 10.0, 90.0), 0.0);
        assert_eq!(normalize_novelty(100.0, 10.0, 90.0), 1.0);
        assert_eq!(normalize_novelty(3.0, 2.0, 2.0), 0.5);
    }

    #[test]
    fn percentile_examples() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        let (p5, p95) = fit_novelty_percentiles(&scores).unwrap();
        assert!((p5 - 5.95).abs() < 1e-12 && (p95 - 95.05).abs() < 1e-12);
        assert_eq!(fit_novelty_percentiles(&[4.0; 9]).unwrap(), (4.0, 4.0));
        let (a, b) = fit_novelty_percentiles(&[1.0, 0.0]).unwrap();
        assert!((a - 0.05).abs() < 1e-12 && (b - 0.95).abs() < 1e-12);
        assert!(fit_novelty_percentiles(&[1.0]).is_err());
    }

    #[test]
    fn novelty_fit_degenerate_novelty_picks_zero_weight() {
        // normalized novelty is 0 everywhere: T1 is irrelevant
        let set = matched_fixture(3.0, Some(0.0));
        let cal = fit_novelty_scaling(&set, (0.0, 1.0)).unwrap();
        assert_eq!(
            cal,
            Calibrator::NoveltyLinear { t0: 3.0, t1: 0.0, p5: 0.0, p95: 1.0 }
        );

        // best grid temperature for a T*=1 fixture is T0 = 1
        let set = matched_fixture(1.0, Some(-5.0));
        match fit_novelty_scaling(&set, (0.0, 1.0)).unwrap() {
            Calibrator::NoveltyLinear { t0, t1, .. } => assert_eq!((t0, t1), (1.0, 0.0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn novelty_fit_uses_the_weight_when_it_helps() {
        // familiar rows are calibrated at T=1, novel rows are confidently wrong
        let mut rows = Vec::new();
        for i in 0..40 {
            rows.push((vec![3f64.ln(), 0.0], usize::from(i % 4 == 3), Some(0.0)));
        }
        for i in 0..40 {
            rows.push((vec![4.0, 0.0], usize::from(i % 2 == 0), Some(1.0)));
        }
        match fit_novelty_scaling(&set_of(&rows), (0.0, 1.0)).unwrap() {
            Calibrator::NoveltyLinear { t0, t1, .. } => {
                assert!(t0 <= 1.25, "t0={t0}");
                assert!(t1 >= 3.0, "t1={t1}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_shapes() {
        let fixed = serde_json::to_string(&Calibrator::Fixed { t: 1.5 }).unwrap();
        assert_eq!(fixed, r#"{"kind":"fixed","t":1.5}"#);
        let lin = Calibrator::NoveltyLinear { t0: 1.0, t1: 0.5, p5: 0.1, p95: 0.9 };
        let s = serde_json::to_string(&lin).unwrap();
        assert_eq!(s, r#"{"kind":"novelty_linear","t0":1.0,"t1":0.5,"p5":0.1,"p95":0.9}"#);
        assert_eq!(serde_json::from_str::<Calibrator>(&s).unwrap(), lin);
    }

    fn arb_val() -> impl Strategy<Value = PredictionSet> {
        (2usize..5).prop_flat_map(|c| {
            prop::collection::vec((prop::collection::vec(-8.0f64..8.0, c), 0..c), 1..30)
                .prop_map(|rows| {
                    let rows: Vec<_> = rows.into_iter().map(|(l, y)| (l, y, None)).collect();
                    set_of(&rows)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn argmax_and_order_invariant(set in arb_val(), t in 1e-3f64..1e3) {
            let raw = set.to_probabilities();
            let scaled = Calibrator::Fixed { t }.apply(&set).unwrap();
            for i in 0..set.len() {
                let (a, b) = (raw.row(i), scaled.row(i));
                prop_assert_eq!(crate::math::argmax(a), crate::math::argmax(b));
                let z = &set.records()[i].logits;
                for j in 0..z.len() {
                    for k in 0..z.len() {
                        if z[j] > z[k] {
                            prop_assert!(b[j] >= b[k]);
                        }
                    }
                }
            }
        }

        #[test]
        fn huge_temperature_is_uniform(set in arb_val()) {
            let p = Calibrator::Fixed { t: 1e6 }.apply(&set).unwrap();
            for i in 0..set.len() {
                let row = p.row(i);
                let gap = crate::math::max_value(row) - row.iter().copied().fold(1.0, f64::min);
                prop_assert!(gap < 1e-3);
            }
        }

        #[test]
        fn fit_never_worse_than_identity(set in arb_val()) {
            let cal = fit_temperature(&set).unwrap();
            let fitted = nll(&cal.apply(&set).unwrap()).unwrap();
            let base = nll(&set.to_probabilities()).unwrap();
            prop_assert!(fitted <= base + 1e-12);
        }

        #[test]
        fn confidence_decreases_with_temperature(a in -5.0f64..5.0, d in 0.01f64..5.0, t in 0.1f64..5.0) {
            let set = set_of(&[(vec![a + d, a], 0, None)]);
            let lo = Calibrator::Fixed { t }.apply(&set).unwrap().row(0)[0];
            let hi = Calibrator::Fixed { t: t * 1.1 }.apply(&set).unwrap().row(0)[0];
            prop_assert!(hi < lo);
        }

        #[test]
        fn zero_weight_equals_fixed(set in arb_val(), t0 in 0.1f64..5.0, nov in -3.0f64..3.0) {
            let scores = vec![nov; set.len()];
            let set = set.with_novelty(&scores).unwrap();
            let lin = Calibrator::novelty_linear(t0, 0.0, -1.0, 1.0).unwrap();
            prop_assert_eq!(lin.apply(&set).unwrap(), Calibrator::Fixed { t: t0 }.apply(&set).unwrap());
        }
    }
}
