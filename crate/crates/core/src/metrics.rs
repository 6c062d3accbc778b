//! Reported quantities: average accuracy, confidence intervals,
//! characteristic times and node-wise spread.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::strategies::StrategyKind;

/// Thresholds, as percent of the centralized accuracy, reported in summaries.
pub const CHARACTERISTIC_FRACTIONS: [u32; 4] = [50, 80, 90, 95];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no records to aggregate")]
    Empty,
    #[error("a confidence interval needs at least two replicas, got {0}")]
    TooFewReplicas(usize),
    #[error("confidence level {0} must lie in (0, 1)")]
    BadLevel(f64),
}

/// One node's evaluation at one round. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub replica: usize,
    pub round: usize,
    pub node: usize,
    pub strategy: StrategyKind,
    pub accuracy: f64,
    pub test_ce_loss: f64,
    pub comm_floats_sent: u64,
    pub gini: f64,
}

pub fn avg_accuracy(accuracies: &[f64]) -> Result<f64, MetricsError> {
    if accuracies.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(accuracies.iter().sum::<f64>() / accuracies.len() as f64)
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Student-t half-width `t_{(1+level)/2, n−1} · sd / sqrt(n)`.
pub fn confidence_interval(replica_means: &[f64], level: f64) -> Result<f64, MetricsError> {
    let n = replica_means.len();
    if n < 2 {
        return Err(MetricsError::TooFewReplicas(n));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::BadLevel(level));
    }
    let (_, sd) = mean_and_sd(replica_means);
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + level / 2.0);
    Ok(t * sd / (n as f64).sqrt())
}

/// First round whose average accuracy reaches `fraction · centralized_acc`.
pub fn characteristic_time(series: &[f64], centralized_acc: f64, fraction: f64) -> Option<usize> {
    let target = fraction * centralized_acc;
    series.iter().position(|&a| a >= target)
}

/// Same as [`characteristic_time`] for a thinned series of `(round, acc)`.
pub fn characteristic_round(
    series: &[(usize, f64)],
    centralized_acc: f64,
    fraction: f64,
) -> Option<usize> {
    let target = fraction * centralized_acc;
    series.iter().find(|(_, a)| *a >= target).map(|&(r, _)| r)
}

/// Per-replica characteristic times averaged over replicas.
///
/// `None` unless every replica crosses the threshold; with `partial` set,
/// the replicas that do cross are averaged instead.
pub fn mean_characteristic_time(
    per_replica: &[Vec<(usize, f64)>],
    centralized_acc: f64,
    fraction: f64,
    partial: bool,
) -> Option<f64> {
    let times: Vec<usize> = per_replica
        .iter()
        .filter_map(|s| characteristic_round(s, centralized_acc, fraction))
        .collect();
    if times.is_empty() || (!partial && times.len() < per_replica.len()) {
        return None;
    }
    Some(times.iter().sum::<usize>() as f64 / times.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Linear-interpolation quantile (Hyndman–Fan type 7) of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn node_quantiles(values: &[f64]) -> Result<Quantiles, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(Quantiles {
        min: s[0],
        q1: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        q3: quantile_sorted(&s, 0.75),
        max: s[s.len() - 1],
    })
}

/// `series[strategy][replica]` = `(round, mean accuracy over nodes)`.
pub type AvgSeries = BTreeMap<StrategyKind, BTreeMap<usize, Vec<(usize, f64)>>>;

/// Average accuracy over nodes for each strategy, replica and round.
pub fn average_series(records: &[RoundRecord]) -> AvgSeries {
    let mut acc: BTreeMap<(StrategyKind, usize, usize), (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry((r.strategy, r.replica, r.round)).or_insert((0.0, 0));
        e.0 += r.accuracy;
        e.1 += 1;
    }
    let mut out = AvgSeries::new();
    for ((k, rep, round), (sum, n)) in acc {
        out.entry(k)
            .or_default()
            .entry(rep)
            .or_default()
            .push((round, sum / n as f64));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaFinal {
    pub replica: usize,
    pub round: usize,
    pub gini: f64,
    pub avg_accuracy: f64,
    pub node_quantiles: Quantiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    /// Mean over replicas of the last-round average node accuracy.
    pub final_avg_accuracy: f64,
    /// 95% Student-t half-width over replicas; `None` with one replica.
    pub ci_half_width: Option<f64>,
    /// Keyed by percent of the centralized accuracy.
    pub characteristic_times: BTreeMap<String, Option<f64>>,
    pub replicas: Vec<ReplicaFinal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Reference accuracy for characteristic times, if one was available.
    pub centralized_accuracy: Option<f64>,
    pub strategies: BTreeMap<String, StrategySummary>,
}

/// Derive the summary of a set of records.
///
/// The centralized reference is `centralized_override` when given, else the
/// replica mean of the final `Centralized` accuracy found in `records`.
pub fn summarize(records: &[RoundRecord], centralized_override: Option<f64>) -> Summary {
    let series = average_series(records);
    let final_of = |k: StrategyKind| -> Vec<f64> {
        series
            .get(&k)
            .map(|reps| reps.values().filter_map(|s| s.last().map(|p| p.1)).collect())
            .unwrap_or_default()
    };
    let centralized_accuracy = centralized_override.or_else(|| {
        let finals = final_of(StrategyKind::Centralized);
        avg_accuracy(&finals).ok()
    });

    let mut strategies = BTreeMap::new();
    for (&kind, reps) in &series {
        let finals = final_of(kind);
        let mut replicas = Vec::new();
        for (&rep, s) in reps {
            let &(last_round, avg) = s.last().expect("non-empty series");
            let at_last: Vec<&RoundRecord> = records
                .iter()
                .filter(|r| r.strategy == kind && r.replica == rep && r.round == last_round)
                .collect();
            let accs: Vec<f64> = at_last.iter().map(|r| r.accuracy).collect();
            replicas.push(ReplicaFinal {
                replica: rep,
                round: last_round,
                gini: at_last[0].gini,
                avg_accuracy: avg,
                node_quantiles: node_quantiles(&accs).expect("non-empty round"),
            });
        }
        let per_replica: Vec<Vec<(usize, f64)>> = reps.values().cloned().collect();
        let characteristic_times = CHARACTERISTIC_FRACTIONS
            .iter()
            .map(|&pct| {
                let t = centralized_accuracy.filter(|&c| c > 0.0).and_then(|c| {
                    mean_characteristic_time(&per_replica, c, f64::from(pct) / 100.0, false)
                });
                (pct.to_string(), t)
            })
            .collect();
        strategies.insert(
            kind.tag().to_string(),
            StrategySummary {
                final_avg_accuracy: avg_accuracy(&finals).unwrap_or(0.0),
                ci_half_width: confidence_interval(&finals, 0.95).ok(),
                characteristic_times,
                replicas,
            },
        );
    }
    Summary {
        centralized_accuracy,
        strategies,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn averages() {
        assert_eq!(avg_accuracy(&[0.9]).unwrap(), 0.9);
        assert!((avg_accuracy(&[0.2, 0.4, 0.6]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(avg_accuracy(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn confidence_intervals() {
        assert_eq!(confidence_interval(&[0.5, 0.5, 0.5], 0.95).unwrap(), 0.0);
        // sd = 0.2, t(0.975, 3) = 3.18245, sqrt(4) = 2
        let h = confidence_interval(&[0.0, 0.0, 0.0, 0.4], 0.95).unwrap();
        assert!((h - 0.31824).abs() < 1e-5, "{h}");
        let few = confidence_interval(&[0.1, 0.3], 0.95).unwrap();
        let many = confidence_interval(&[0.1, 0.3, 0.1, 0.3, 0.1, 0.3], 0.95).unwrap();
        assert!(many < few);
        assert_eq!(confidence_interval(&[0.3], 0.95), Err(MetricsError::TooFewReplicas(1)));
    }

    #[test]
    fn characteristic_times() {
        let s = [0.3, 0.6, 0.9];
        assert_eq!(characteristic_time(&s, 1.0, 0.5), Some(1));
        assert_eq!(characteristic_time(&s, 1.0, 0.95), None);
        assert_eq!(characteristic_time(&s, 1.0, 0.0), Some(0));

        let a = vec![(0, 0.1), (5, 0.6), (10, 0.9)];
        let b = vec![(0, 0.2), (5, 0.4), (10, 0.95)];
        assert_eq!(mean_characteristic_time(&[a.clone(), b.clone()], 1.0, 0.5, false), Some(7.5));
        assert_eq!(mean_characteristic_time(&[a.clone(), b.clone()], 1.0, 0.93, false), None);
        assert_eq!(mean_characteristic_time(&[a, b], 1.0, 0.93, true), Some(10.0));
    }

    #[test]
    fn quantiles() {
        let q = node_quantiles(&[0.7; 5]).unwrap();
        assert!(q.min == 0.7 && q.q1 == 0.7 && q.median == 0.7 && q.q3 == 0.7 && q.max == 0.7);
        let q = node_quantiles(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!((q.min, q.q1, q.median, q.q3, q.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        let q = node_quantiles(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (1.75, 2.5, 3.25));
        assert_eq!(node_quantiles(&[]), Err(MetricsError::Empty));
    }

    fn rec(strategy: StrategyKind, replica: usize, round: usize, node: usize, accuracy: f64) -> RoundRecord {
        RoundRecord {
            replica,
            round,
            node,
            strategy,
            accuracy,
            test_ce_loss: 1.0,
            comm_floats_sent: 0,
            gini: 0.5,
        }
    }

    #[test]
    fn summary_uses_centralized_reference() {
        use StrategyKind::*;
        let mut records = Vec::new();
        for rep in 0..2 {
            for round in 0..3 {
                records.push(rec(Centralized, rep, round, 0, 0.8));
                records.push(rec(Isolation, rep, round, 0, 0.2 * round as f64));
                records.push(rec(Isolation, rep, round, 1, 0.2 * round as f64 + 0.2));
            }
        }
        let s = summarize(&records, None);
        assert_eq!(s.centralized_accuracy, Some(0.8));
        let iso = &s.strategies["Isolation"];
        assert!((iso.final_avg_accuracy - 0.5).abs() < 1e-12);
        assert_eq!(iso.ci_half_width, Some(0.0));
        // averages per round are 0.1, 0.3, 0.5; 50% of 0.8 is 0.4
        assert_eq!(iso.characteristic_times["50"], Some(2.0));
        assert_eq!(iso.characteristic_times["80"], None);
        assert!((iso.replicas[0].node_quantiles.max - 0.6).abs() < 1e-12);
        let s = summarize(&records, Some(0.2));
        assert_eq!(s.strategies["Isolation"].characteristic_times["50"], Some(0.0));
    }

    proptest! {
        #[test]
        fn ci_is_shift_invariant(v in prop::collection::vec(0.0f64..1.0, 2..10), c in -5.0f64..5.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = confidence_interval(&v, 0.95).unwrap();
            let b = confidence_interval(&shifted, 0.95).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
        }

        #[test]
        fn mean_lies_within_node_range(v in prop::collection::vec(0.0f64..1.0, 1..30)) {
            let m = avg_accuracy(&v).unwrap();
            let q = node_quantiles(&v).unwrap();
            prop_assert!(q.min - 1e-12 <= m && m <= q.max + 1e-12);
            prop_assert!(q.min <= q.q1 && q.q1 <= q.median && q.median <= q.q3 && q.q3 <= q.max);
        }

        #[test]
        fn characteristic_time_monotone_in_fraction(
            series in prop::collection::vec(0.0f64..1.0, 1..40),
            f1 in 0.0f64..1.0,
            f2 in 0.0f64..1.0,
        ) {
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let brute = |f: f64| (0..series.len()).find(|&t| series[t] >= f * 0.9);
            prop_assert_eq!(characteristic_time(&series, 0.9, lo), brute(lo));
            prop_assert_eq!(characteristic_time(&series, 0.9, hi), brute(hi));
            match (characteristic_time(&series, 0.9, lo), characteristic_time(&series, 0.9, hi)) {
                (Some(a), Some(b)) => prop_assert!(a <= b),
                (None, Some(_)) => prop_assert!(false, "higher threshold reached first"),
                _ => {}
            }
        }
    }
}
