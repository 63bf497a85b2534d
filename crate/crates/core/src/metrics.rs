//! Forecast and survival evaluation metrics.
//!
//! Forecasts are scored with a population-aggregated MASE against the
//! copy-forward baseline. Event risk is scored with an inverse probability of
//! censoring weighted (IPCW) concordance index and a time-dependent Brier
//! score, both using a Kaplan-Meier estimate of the censoring distribution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::{percentile_sorted, three_sigma, OutlierMode, VariableStats};

pub fn copy_forward_forecast(last_value: f64, horizon: usize) -> Vec<f64> {
    vec![last_value; horizon]
}

/// One (patient, variable, week offset) forecast with its truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub patient_id: String,
    pub split_week: u32,
    /// Indication or other grouping key.
    pub group: String,
    pub variable: String,
    pub offset: u32,
    pub truth: f64,
    pub prediction: Option<f64>,
    pub last: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaseResult {
    pub variable: String,
    /// `None` when the copy-forward error is zero (unevaluable).
    pub mase: Option<f64>,
    pub numerator: f64,
    pub denominator: f64,
    pub pairs: usize,
    pub missing_predictions: usize,
}

/// Aggregated MASE of one variable: pooled absolute forecast error over pooled
/// absolute copy-forward error. Truths, predictions and last values are capped
/// at `mean ± 3 sd` when `stats` knows the variable. Points without a
/// prediction are left out of both sums.
pub fn aggregated_mase(
    points: &[ForecastPoint],
    variable: &str,
    stats: Option<&VariableStats>,
) -> MaseResult {
    let cap = stats
        .and_then(|s| s.get(variable))
        .map(|s| (s.mean, s.std_dev));
    let capped = |x: f64| match cap {
        Some((m, sd)) => three_sigma(x, m, sd, OutlierMode::Cap).unwrap_or(x),
        None => x,
    };
    let mut selected: Vec<&ForecastPoint> = points.iter().filter(|p| p.variable == variable).collect();
    selected.sort_by(|a, b| {
        (&a.patient_id, a.split_week, a.offset).cmp(&(&b.patient_id, b.split_week, b.offset))
    });
    let (mut num, mut den, mut pairs, mut missing) = (0.0, 0.0, 0, 0);
    for p in selected {
        let Some(pred) = p.prediction else {
            missing += 1;
            continue;
        };
        let truth = capped(p.truth);
        num += (truth - capped(pred)).abs();
        den += (truth - capped(p.last)).abs();
        pairs += 1;
    }
    MaseResult {
        variable: variable.to_string(),
        mase: (den > 0.0).then(|| num / den),
        numerator: num,
        denominator: den,
        pairs,
        missing_predictions: missing,
    }
}

/// The `k` variables whose copy-forward MAPE on train is highest; ties go to
/// the lexicographically smaller name. Variables without a MAPE are skipped.
pub fn top_k_varying(stats: &VariableStats, k: usize) -> Vec<String> {
    let mut ranked: Vec<(&String, f64)> = stats
        .variables
        .iter()
        .filter_map(|(name, s)| s.copy_forward_mape.map(|m| (name, m)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(k).map(|(n, _)| n.clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Quartiles {
        q1: percentile_sorted(&v, 0.25),
        median: percentile_sorted(&v, 0.5),
        q3: percentile_sorted(&v, 0.75),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaseSummary {
    pub variables: BTreeMap<String, MaseResult>,
    /// Median and IQR over evaluable variables.
    pub quartiles: Option<Quartiles>,
    pub evaluable: usize,
    pub unevaluable: usize,
}

fn summarize(points: &[ForecastPoint], variables: &[String], stats: Option<&VariableStats>) -> MaseSummary {
    let results: BTreeMap<String, MaseResult> = variables
        .iter()
        .map(|v| (v.clone(), aggregated_mase(points, v, stats)))
        .filter(|(_, r)| r.pairs > 0 || r.missing_predictions > 0)
        .collect();
    let values: Vec<f64> = results.values().filter_map(|r| r.mase).collect();
    MaseSummary {
        quartiles: quartiles(&values),
        evaluable: values.len(),
        unevaluable: results.len() - values.len(),
        variables: results,
    }
}

/// MASE with indications pooled before the per-variable ratio, and per
/// indication separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaseReport {
    pub pooled: MaseSummary,
    pub by_group: BTreeMap<String, MaseSummary>,
    /// Median and IQR over all (group, variable) MASE values.
    pub across_groups: Option<Quartiles>,
}

pub fn mase_report(
    points: &[ForecastPoint],
    variables: &[String],
    stats: Option<&VariableStats>,
) -> MaseReport {
    let mut groups: BTreeMap<&str, Vec<ForecastPoint>> = BTreeMap::new();
    for p in points {
        groups.entry(&p.group).or_default().push(p.clone());
    }
    let by_group: BTreeMap<String, MaseSummary> = groups
        .into_iter()
        .map(|(g, pts)| (g.to_string(), summarize(&pts, variables, stats)))
        .collect();
    let all: Vec<f64> = by_group
        .values()
        .flat_map(|s| s.variables.values().filter_map(|r| r.mase))
        .collect();
    MaseReport {
        pooled: summarize(points, variables, stats),
        across_groups: quartiles(&all),
        by_group,
    }
}

/// Observed time (weeks from the landmark), event indicator and risk score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub time: f64,
    pub event: bool,
    pub risk: f64,
}

/// Kaplan-Meier estimate of the censoring survival function `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringKm {
    /// Distinct censoring times, ascending, with `G` just after each.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl CensoringKm {
    /// `G(t)`, right-continuous.
    pub fn at(&self, t: f64) -> f64 {
        let n = self.times.partition_point(|&s| s <= t);
        if n == 0 { 1.0 } else { self.values[n - 1] }
    }

    /// `G(t-)`, the value just before `t`.
    pub fn before(&self, t: f64) -> f64 {
        let n = self.times.partition_point(|&s| s < t);
        if n == 0 { 1.0 } else { self.values[n - 1] }
    }
}

/// Product-limit estimator with censorings as the events. The set at risk of
/// censoring at `t` is everyone with `T >= t`, including subjects whose event
/// is at `t`.
pub fn km_censoring(points: &[SurvivalPoint]) -> CensoringKm {
    let mut sorted: Vec<&SurvivalPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let n = sorted.len();
    let mut km = CensoringKm { times: Vec::new(), values: Vec::new() };
    let mut g = 1.0;
    let mut i = 0;
    while i < n {
        let t = sorted[i].time;
        let at_risk = n - i;
        let mut j = i;
        let mut censored = 0;
        while j < n && sorted[j].time == t {
            censored += usize::from(!sorted[j].event);
            j += 1;
        }
        if censored > 0 {
            g *= 1.0 - censored as f64 / at_risk as f64;
            km.times.push(t);
            km.values.push(g);
        }
        i = j;
    }
    km
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskTies {
    /// Tied risk scores count one half.
    #[default]
    Half,
    /// Tied risk scores count zero.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CIndexOptions {
    pub ties: RiskTies,
    /// Only pairs whose earlier time is at most this horizon are comparable.
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CIndex {
    pub value: f64,
    pub comparable_pairs: u64,
    pub numerator: f64,
    pub denominator: f64,
}

/// Weight of a comparable pair whose earlier (event) time is `t`:
/// `G(t-)^-2`. The left limit keeps the weight finite when the last subjects
/// are censored at `t`.
pub fn pair_weight(km: &CensoringKm, t: f64) -> f64 {
    km.before(t).powi(-2)
}

/// Fenwick tree of counts over risk ranks.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< i`.
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// IPCW concordance: over pairs with `T_i < T_j` and an event at `T_i`, the
/// weighted share where `R_i > R_j`. `None` without comparable pairs.
/// Runs in `O(n log n)`.
pub fn ipcw_cindex(points: &[SurvivalPoint], options: CIndexOptions) -> Option<CIndex> {
    let km = km_censoring(points);
    let mut risks: Vec<f64> = points.iter().map(|p| p.risk).collect();
    risks.sort_by(f64::total_cmp);
    risks.dedup();
    let rank = |r: f64| risks.partition_point(|&x| x < r);

    let mut order: Vec<&SurvivalPoint> = points.iter().collect();
    order.sort_by(|a, b| b.time.total_cmp(&a.time));
    let mut tree = Fenwick(vec![0; risks.len() + 1]);
    let mut later = 0u64;
    let tie_credit = match options.ties {
        RiskTies::Half => 0.5,
        RiskTies::Strict => 0.0,
    };
    let (mut num, mut den, mut pairs) = (0.0, 0.0, 0u64);
    let mut i = 0;
    while i < order.len() {
        let t = order[i].time;
        let mut j = i;
        while j < order.len() && order[j].time == t {
            j += 1;
        }
        let in_horizon = options.horizon.is_none_or(|h| t <= h);
        if in_horizon && later > 0 {
            let w = pair_weight(&km, t);
            for p in order[i..j].iter().filter(|p| p.event) {
                let r = rank(p.risk);
                let below = tree.prefix(r);
                let tied = tree.prefix(r + 1) - below;
                num += w * (below as f64 + tie_credit * tied as f64);
                den += w * later as f64;
                pairs += later;
            }
        }
        for p in &order[i..j] {
            tree.add(rank(p.risk));
        }
        later += (j - i) as u64;
        i = j;
    }
    (pairs > 0).then(|| CIndex {
        value: num / den,
        comparable_pairs: pairs,
        numerator: num,
        denominator: den,
    })
}

/// IPCW Brier score at horizon `tau` for predicted event probabilities
/// `probs[i]` (by `tau`). Events by `tau` weigh `1 / G(T-)`, subjects still
/// event-free after `tau` weigh `1 / G(tau)`, and subjects censored by `tau`
/// contribute zero. `None` for an empty set or an infinite weight.
pub fn brier_score(points: &[SurvivalPoint], probs: &[f64], tau: f64) -> Option<f64> {
    if points.is_empty() || points.len() != probs.len() {
        return None;
    }
    let km = km_censoring(points);
    let mut total = 0.0;
    for (p, &q) in points.iter().zip(probs) {
        let term = if p.event && p.time <= tau {
            (1.0 - q).powi(2) / km.before(p.time)
        } else if p.time > tau {
            q.powi(2) / km.at(tau)
        } else {
            0.0
        };
        if !term.is_finite() {
            return None;
        }
        total += term;
    }
    Some(total / points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sp(time: f64, event: bool, risk: f64) -> SurvivalPoint {
        SurvivalPoint { time, event, risk }
    }

    /// Hand product-limit: walk each censoring time and multiply by the
    /// fraction of the at-risk set not censored there.
    fn km_oracle(points: &[SurvivalPoint], t: f64) -> f64 {
        let mut times: Vec<f64> = points.iter().filter(|p| !p.event).map(|p| p.time).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut g = 1.0;
        for s in times.into_iter().filter(|&s| s <= t) {
            let at_risk = points.iter().filter(|p| p.time >= s).count() as f64;
            let c = points.iter().filter(|p| !p.event && p.time == s).count() as f64;
            g *= 1.0 - c / at_risk;
        }
        g
    }

    /// The defining double sum, pair by pair.
    fn cindex_oracle(points: &[SurvivalPoint], ties: f64, horizon: Option<f64>) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for a in points {
            if !a.event || horizon.is_some_and(|h| a.time > h) {
                continue;
            }
            let g_minus = {
                let mut g = 1.0;
                let mut times: Vec<f64> =
                    points.iter().filter(|p| !p.event && p.time < a.time).map(|p| p.time).collect();
                times.sort_by(f64::total_cmp);
                times.dedup();
                for s in times {
                    let at_risk = points.iter().filter(|p| p.time >= s).count() as f64;
                    let c = points.iter().filter(|p| !p.event && p.time == s).count() as f64;
                    g *= 1.0 - c / at_risk;
                }
                g
            };
            let w = 1.0 / (g_minus * g_minus);
            for b in points {
                if a.time < b.time {
                    den += w;
                    if a.risk > b.risk {
                        num += w;
                    } else if a.risk == b.risk {
                        num += ties * w;
                    }
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    #[test]
    fn mase_examples() {
        let pt = |offset, truth, pred, last| ForecastPoint {
            patient_id: "p".into(),
            split_week: 0,
            group: "g".into(),
            variable: "v".into(),
            offset,
            truth,
            prediction: Some(pred),
            last,
        };
        let r = aggregated_mase(&[pt(1, 10.0, 11.0, 10.0), pt(2, 12.0, 11.0, 10.0)], "v", None);
        assert_eq!(r.mase, Some(1.0));
        let r = aggregated_mase(&[pt(1, 10.0, 10.0, 9.0), pt(2, 12.0, 12.0, 9.0)], "v", None);
        assert_eq!(r.mase, Some(0.0));
        let r = aggregated_mase(&[pt(1, 7.0, 3.0, 7.0)], "v", None);
        assert_eq!(r.mase, None);
        let mut missing = pt(3, 50.0, 0.0, 10.0);
        missing.prediction = None;
        let r = aggregated_mase(&[pt(1, 10.0, 11.0, 10.0), pt(2, 12.0, 11.0, 10.0), missing], "v", None);
        assert_eq!((r.mase, r.missing_predictions, r.pairs), (Some(1.0), 1, 2));
        assert_eq!(copy_forward_forecast(4.4, 3), vec![4.4; 3]);
        assert!(copy_forward_forecast(1.0, 0).is_empty());
    }

    #[test]
    fn top_k_ranking() {
        use crate::cohort::VariableStat;
        let stat = |mape: Option<f64>| VariableStat {
            count: 1,
            mean: 0.0,
            std_dev: 1.0,
            pair_count: 0,
            copy_forward_rmse: 0.0,
            nrmse: 0.0,
            score: 0.0,
            sampling_prob: 0.0,
            copy_forward_mape: mape,
            quintile_edges: None,
            retained: true,
        };
        let stats = VariableStats {
            min_observations: 1,
            variables: [
                ("B".to_string(), stat(Some(0.2))),
                ("A".to_string(), stat(Some(0.5))),
                ("C".to_string(), stat(Some(0.5))),
                ("D".to_string(), stat(None)),
            ]
            .into(),
        };
        assert_eq!(top_k_varying(&stats, 1), vec!["A"]);
        assert_eq!(top_k_varying(&stats, 30), vec!["A", "C", "B"]);
    }

    #[test]
    fn km_examples() {
        let none = [sp(1.0, true, 0.0), sp(2.0, true, 0.0), sp(3.0, true, 0.0)];
        assert_eq!(km_censoring(&none).at(2.5), 1.0);
        let all = [sp(5.0, false, 0.0); 4];
        let km = km_censoring(&all);
        assert_eq!(km.at(4.9), 1.0);
        assert_eq!(km.at(5.0), 0.0);
        assert_eq!(km.before(5.0), 1.0);
        // at risk 5,4,3,2,1 at times 1..5; censorings at 2 and 4
        let mixed = [
            sp(1.0, true, 0.0),
            sp(2.0, false, 0.0),
            sp(3.0, true, 0.0),
            sp(4.0, false, 0.0),
            sp(5.0, true, 0.0),
        ];
        let km = km_censoring(&mixed);
        assert!((km.at(2.0) - 0.75).abs() < 1e-15);
        assert!((km.at(4.0) - 0.375).abs() < 1e-15);
        for t in [0.5, 1.0, 2.0, 3.5, 4.0, 9.0] {
            assert!((km.at(t) - km_oracle(&mixed, t)).abs() < 1e-15);
        }
    }

    #[test]
    fn cindex_examples() {
        let times = [1.0, 2.0, 3.0, 4.0, 5.0];
        let anti: Vec<_> = times.iter().map(|&t| sp(t, true, 10.0 - t)).collect();
        let with: Vec<_> = times.iter().map(|&t| sp(t, true, t)).collect();
        let flat: Vec<_> = times.iter().map(|&t| sp(t, true, 0.3)).collect();
        let opts = CIndexOptions::default();
        assert_eq!(ipcw_cindex(&anti, opts).unwrap().value, 1.0);
        assert_eq!(ipcw_cindex(&with, opts).unwrap().value, 0.0);
        assert_eq!(ipcw_cindex(&flat, opts).unwrap().value, 0.5);
        let strict = CIndexOptions { ties: RiskTies::Strict, horizon: None };
        assert_eq!(ipcw_cindex(&flat, strict).unwrap().value, 0.0);
        assert!(ipcw_cindex(&[sp(1.0, false, 0.0), sp(2.0, false, 1.0)], opts).is_none());
    }

    #[test]
    fn cindex_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..200 {
            let n = rng.random_range(2..=50);
            let pts: Vec<SurvivalPoint> = (0..n)
                .map(|_| sp(rng.random_range(1..=20) as f64, rng.random_bool(0.6), rng.random_range(0..8) as f64 / 7.0))
                .collect();
            let horizon = (case % 3 == 0).then_some(10.0);
            let fast = ipcw_cindex(&pts, CIndexOptions { ties: RiskTies::Half, horizon }).map(|c| c.value);
            let slow = cindex_oracle(&pts, 0.5, horizon);
            match (fast, slow) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12, "case {case}: {a} vs {b}"),
                (a, b) => assert_eq!(a, b, "case {case}"),
            }
        }
    }

    #[test]
    fn brier_examples() {
        let pts = [sp(1.0, true, 0.0), sp(5.0, true, 0.0), sp(6.0, false, 0.0)];
        assert_eq!(brier_score(&pts, &[1.0, 0.0, 0.0], 3.0), Some(0.0));
        assert_eq!(brier_score(&pts, &[0.5, 0.5, 0.5], 3.0), Some(0.25));
        // censored at 2 before tau=3: G(2)=2/3 with 3 at risk; the event at 1
        // weighs 1/G(1-)=1, the subjects at 4 and 5 weigh 1/G(3)=1.5
        let pts = [sp(1.0, true, 0.0), sp(2.0, false, 0.0), sp(4.0, true, 0.0), sp(5.0, false, 0.0)];
        let got = brier_score(&pts, &[0.8, 0.4, 0.3, 0.1], 3.0).unwrap();
        let g2 = 1.0 - 1.0 / 3.0;
        let expected = ((1.0 - 0.8f64).powi(2) + 0.3f64.powi(2) / g2 + 0.1f64.powi(2) / g2) / 4.0;
        assert!((got - expected).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn uncensored_cindex_is_harrell(
            raw in prop::collection::vec((1u32..30, 0u32..10), 2..40)
        ) {
            let pts: Vec<_> = raw.iter().map(|&(t, r)| sp(t as f64, true, r as f64)).collect();
            let (mut num, mut den) = (0.0, 0.0);
            for a in &pts {
                for b in &pts {
                    if a.time < b.time {
                        den += 1.0;
                        num += if a.risk > b.risk { 1.0 } else if a.risk == b.risk { 0.5 } else { 0.0 };
                    }
                }
            }
            let got = ipcw_cindex(&pts, CIndexOptions::default()).map(|c| c.value);
            prop_assert_eq!(got, (den > 0.0).then(|| num / den));
        }

        #[test]
        fn cindex_rank_invariant(
            raw in prop::collection::vec((1u32..30, any::<bool>(), -5.0f64..5.0), 2..40)
        ) {
            let pts: Vec<_> = raw.iter().map(|&(t, e, r)| sp(t as f64, e, r)).collect();
            let moved: Vec<_> = pts.iter().map(|p| sp(p.time, p.event, (p.risk * 0.7).exp() + 3.0)).collect();
            let a = ipcw_cindex(&pts, CIndexOptions::default()).map(|c| c.value);
            let b = ipcw_cindex(&moved, CIndexOptions::default()).map(|c| c.value);
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn km_is_a_survival_curve(raw in prop::collection::vec((1u32..30, any::<bool>()), 1..40)) {
            let pts: Vec<_> = raw.iter().map(|&(t, e)| sp(t as f64, e, 0.0)).collect();
            let km = km_censoring(&pts);
            prop_assert_eq!(km.at(0.0), 1.0);
            let mut prev = 1.0;
            for t in 0..32 {
                let g = km.at(t as f64);
                prop_assert!(g <= prev && g >= 0.0);
                prop_assert!((g - km_oracle(&pts, t as f64)).abs() < 1e-12);
                prev = g;
            }
        }
    }
}
