//! Mini-batch training with Adam, evaluation reports, and the level-order
//! correlation report for unrated levels.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::labels::RankLabel;
use crate::model::{predicted_label, ModelWeights, Predictor, CLASSES};
use crate::nn::Adam;
use crate::rng::derive;
use crate::stats::{spearman_rho, SpearmanResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop once train accuracy reaches this fraction. Off for real runs.
    pub stop_at_train_accuracy: Option<f64>,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 32,
            lr: 7e-5,
            seed,
            stop_at_train_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub train_accuracy: Option<f64>,
}

pub fn history_tsv(history: &[EpochRecord]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |a| format!("{a:.6}"));
    let mut out = String::from("epoch\ttrain_loss\tval_accuracy\ttrain_accuracy\n");
    for r in history {
        let _ = writeln!(
            out,
            "{}\t{:.9}\t{}\t{}",
            r.epoch,
            r.train_loss,
            fmt(r.val_accuracy),
            fmt(r.train_accuracy)
        );
    }
    out
}

/// Trains in place for a fixed number of epochs, reshuffling each epoch.
pub fn train(
    weights: &mut ModelWeights,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    if train_set.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.lr >= 0.0) {
        return Err(Error::Argument(format!(
            "epochs and batch size must be positive and lr non-negative, got {cfg:?}"
        )));
    }
    let mut rng = derive(cfg.seed, &[0x7261_696e]);
    let adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.get_many(idx)?;
            let loss = weights.loss_and_grads(&batch, &mut rng)?;
            if !loss.is_finite() {
                weights.params.zero_grads();
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            adam.step(&mut weights.params);
            loss_sum += loss * idx.len() as f64;
        }
        let val_accuracy = val_set
            .filter(|v| !v.is_empty())
            .map(|v| evaluate(weights, v).map(|r| r.accuracy))
            .transpose()?;
        let train_accuracy = match cfg.stop_at_train_accuracy {
            Some(_) => Some(evaluate(weights, train_set)?.accuracy),
            None => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_accuracy,
            train_accuracy,
        });
        if let (Some(target), Some(acc)) = (cfg.stop_at_train_accuracy, train_accuracy) {
            if acc >= target {
                break;
            }
        }
    }
    Ok(history)
}

/// Probabilities for every point, in dataset order.
pub fn predict_all<P: Predictor + ?Sized>(predictor: &P, data: &Dataset) -> Result<Vec<[f64; CLASSES]>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    crate::par::map_indexed(&idx, |_, &i| predictor.predict(&data.get(i)?))
        .into_iter()
        .collect()
}

/// Classification summary. In the per-class tables "accuracy" is the share
/// of predictions of that class that were right (precision); recall is
/// reported alongside.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub count: usize,
    /// Fraction correct, 0..=1.
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; CLASSES]; CLASSES],
    pub support: [usize; CLASSES],
    pub class_accuracy: [Option<f64>; CLASSES],
    pub class_recall: [Option<f64>; CLASSES],
    /// Percent of points predicted as each class.
    pub prediction_rate: [f64; CLASSES],
}

impl MetricsReport {
    pub fn from_predictions(truth: &[RankLabel], predicted: &[RankLabel]) -> Result<Self> {
        if truth.is_empty() || truth.len() != predicted.len() {
            return Err(Error::Argument(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut confusion = [[0usize; CLASSES]; CLASSES];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[t.index()][p.index()] += 1;
        }
        let n = truth.len();
        let support = confusion.map(|row| row.iter().sum());
        let predicted_count: [usize; CLASSES] = std::array::from_fn(|k| (0..CLASSES).map(|t| confusion[t][k]).sum());
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        Ok(MetricsReport {
            count: n,
            accuracy: (0..CLASSES).map(|k| confusion[k][k]).sum::<usize>() as f64 / n as f64,
            class_accuracy: std::array::from_fn(|k| ratio(confusion[k][k], predicted_count[k])),
            class_recall: std::array::from_fn(|k| ratio(confusion[k][k], support[k])),
            prediction_rate: predicted_count.map(|c| 100.0 * c as f64 / n as f64),
            confusion,
            support,
        })
    }

    pub fn to_tsv(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |a| format!("{:.2}", 100.0 * a));
        let mut out = String::from("row\tmost\tmid\tleast\ttotal\n");
        let _ = writeln!(
            out,
            "accuracy\t{}\t{}\t{}\t{:.2}",
            pct(self.class_accuracy[0]),
            pct(self.class_accuracy[1]),
            pct(self.class_accuracy[2]),
            100.0 * self.accuracy
        );
        let _ = writeln!(
            out,
            "recall\t{}\t{}\t{}\t-",
            pct(self.class_recall[0]),
            pct(self.class_recall[1]),
            pct(self.class_recall[2])
        );
        let [a, b, c] = self.prediction_rate;
        let _ = writeln!(out, "pred_rate\t{a:.2}\t{b:.2}\t{c:.2}\t{:.2}", a + b + c);
        let [s0, s1, s2] = self.support;
        let _ = writeln!(out, "support\t{s0}\t{s1}\t{s2}\t{}", self.count);
        for (t, row) in self.confusion.iter().enumerate() {
            let _ = writeln!(
                out,
                "true_{}\t{}\t{}\t{}\t{}",
                RankLabel::ALL[t],
                row[0],
                row[1],
                row[2],
                self.support[t]
            );
        }
        out
    }
}

pub fn evaluate<P: Predictor + ?Sized>(predictor: &P, data: &Dataset) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty set".into()));
    }
    let predicted: Vec<RankLabel> = predict_all(predictor, data)?.iter().map(predicted_label).collect();
    MetricsReport::from_predictions(&data.labels(), &predicted)
}

/// One level's share of predicted classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRates {
    pub order: usize,
    pub name: String,
    pub points: usize,
    /// Percent of points whose argmax is each class.
    pub prediction_rate: [f64; CLASSES],
    /// Mean predicted probability per class, in percent.
    pub mean_probability: [f64; CLASSES],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Correlation {
    Defined(SpearmanResult),
    Undefined { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub class: RankLabel,
    pub correlation: Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingReport {
    pub levels: Vec<LevelRates>,
    pub correlations: Vec<CorrelationRow>,
}

impl OrderingReport {
    pub fn correlation(&self, class: RankLabel) -> Result<SpearmanResult> {
        match &self.correlations[class.index()].correlation {
            Correlation::Defined(r) => Ok(*r),
            Correlation::Undefined { reason } => Err(Error::UndefinedCorrelation(reason.clone())),
        }
    }

    pub fn levels_tsv(&self) -> String {
        let mut out = String::from("order\tlevel\tpoints\tmost\tmid\tleast\tmean_p_most\tmean_p_mid\tmean_p_least\n");
        for l in &self.levels {
            let [a, b, c] = l.prediction_rate;
            let [d, e, f] = l.mean_probability;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{a:.2}\t{b:.2}\t{c:.2}\t{d:.2}\t{e:.2}\t{f:.2}",
                l.order, l.name, l.points
            );
        }
        out
    }

    pub fn correlations_tsv(&self) -> String {
        let mut out = String::from("class\trho\tp_value\tci95_low\tci95_high\n");
        for row in &self.correlations {
            let _ = match &row.correlation {
                Correlation::Defined(r) => writeln!(
                    out,
                    "{}\t{:.4}\t{:.4e}\t{:.2}\t{:.2}",
                    row.class, r.rho, r.p_value, r.ci95.0, r.ci95.1
                ),
                Correlation::Undefined { reason } => writeln!(out, "{}\tundefined ({reason})\t-\t-\t-", row.class),
            };
        }
        out
    }
}

/// Per-level class rates over levels in play order (one span per level),
/// and the Spearman correlation of each class rate with that order.
pub fn challenge_ordering_report<P: Predictor + ?Sized>(predictor: &P, data: &Dataset) -> Result<OrderingReport> {
    let probs = predict_all(predictor, data)?;
    let spans = data.spans();
    let mut counts = vec![[0usize; CLASSES]; spans.len()];
    let mut sums = vec![[0.0f64; CLASSES]; spans.len()];
    for (i, p) in probs.iter().enumerate() {
        let s = data.session_of(i);
        counts[s][predicted_label(p).index()] += 1;
        for k in 0..CLASSES {
            sums[s][k] += p[k];
        }
    }
    let mut levels = Vec::with_capacity(spans.len());
    for (order, span) in spans.iter().enumerate() {
        let n: usize = counts[order].iter().sum();
        if n == 0 {
            return Err(Error::Session {
                session: span.id.clone(),
                message: "no data points".into(),
            });
        }
        levels.push(LevelRates {
            order,
            name: span.id.clone(),
            points: n,
            prediction_rate: counts[order].map(|c| 100.0 * c as f64 / n as f64),
            mean_probability: sums[order].map(|s| 100.0 * s / n as f64),
        });
    }
    let order: Vec<f64> = (0..levels.len()).map(|i| i as f64).collect();
    let correlations = RankLabel::ALL
        .iter()
        .map(|&class| {
            let rates: Vec<f64> = levels.iter().map(|l| l.prediction_rate[class.index()]).collect();
            let correlation = match spearman_rho(&order, &rates) {
                Ok(r) => Correlation::Defined(r),
                Err(e @ (Error::UndefinedCorrelation(_) | Error::Argument(_))) => Correlation::Undefined {
                    reason: e.to_string(),
                },
                Err(e) => return Err(e),
            };
            Ok(CorrelationRow { class, correlation })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OrderingReport { levels, correlations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{assemble_dataset, DataPoint, WindowOptions};
    use crate::labels::Metric;
    use crate::levels::{LevelGrid, LEVEL_HEIGHT, TILE_CHANNELS};
    use crate::logs::{synthesize_empty_logs, LogMatrix, SessionSpan, COLUMNS};
    use crate::model::ModelConfig;
    use crate::rng::seeded;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use RankLabel::*;

    struct Fixed(RankLabel);
    impl Predictor for Fixed {
        fn predict(&self, _: &DataPoint) -> Result<[f64; CLASSES]> {
            let mut p = [0.0; CLASSES];
            p[self.0.index()] = 1.0;
            Ok(p)
        }
    }

    struct Perfect;
    impl Predictor for Perfect {
        fn predict(&self, p: &DataPoint) -> Result<[f64; CLASSES]> {
            Fixed(p.label).predict(p)
        }
    }

    fn grid(level: usize, width: usize) -> LevelGrid {
        let tiles = (0..width * LEVEL_HEIGHT).map(|i| ((i + level) % TILE_CHANNELS) as u8).collect();
        LevelGrid::from_tiles(level, width, LEVEL_HEIGHT, tiles).unwrap()
    }

    fn stacked(labels: &[RankLabel], len: usize) -> Dataset {
        let mut rows = Vec::new();
        let mut spans = Vec::new();
        for (s, _) in labels.iter().enumerate() {
            spans.push(SessionSpan {
                id: format!("p{s}/level{s}"),
                player_id: format!("p{s}"),
                level: s,
                start: rows.len(),
                len,
            });
            for t in 0..len {
                let mut r = [0.0; COLUMNS];
                r[36] = t as f64 * 0.5;
                rows.push(r);
            }
        }
        let grids = (0..labels.len()).map(|l| grid(l, 60)).collect();
        assemble_dataset(LogMatrix { rows, spans }, grids, labels.to_vec(), WindowOptions::default()).unwrap()
    }

    #[test]
    fn perfect_predictor() {
        let d = stacked(&[Most, Mid, Least], 40);
        let r = evaluate(&Perfect, &d).unwrap();
        assert_eq!(r.accuracy, 1.0);
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(r.confusion[t][p] > 0, t == p);
            }
        }
        assert_eq!(r.class_accuracy, [Some(1.0); 3]);
    }

    #[test]
    fn all_mid_on_one_two_one_mix() {
        let padded = {
            let logs = synthesize_empty_logs(&[50; 4], &mut seeded(0));
            let grids = (0..4).map(|l| grid(l, 50)).collect();
            assemble_dataset(
                logs,
                grids,
                vec![Most, Mid, Mid, Least],
                WindowOptions {
                    window: 10,
                    pad_start: true,
                },
            )
            .unwrap()
        };
        let r = evaluate(&Fixed(Mid), &padded).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.prediction_rate, [0.0, 100.0, 0.0]);
        assert_eq!(r.class_accuracy, [None, Some(0.5), None]);
    }

    #[test]
    fn symmetric_zero_model_scores_a_third_on_balanced_data() {
        let d = stacked(&[Most, Mid, Least], 109);
        let w = ModelWeights::zeros(ModelConfig::full(Metric::Fun), [0; 32]).unwrap();
        let r = evaluate(&w, &d.subset(&(0..d.len()).step_by(3).collect::<Vec<_>>())).unwrap();
        assert_relative_eq!(r.prediction_rate[0], 100.0);
        let counts = d.label_counts();
        assert_relative_eq!(
            evaluate(&w, &d).unwrap().accuracy,
            counts[0] as f64 / d.len() as f64
        );
    }

    #[test]
    fn lr_zero_leaves_weights_unchanged() {
        let d = stacked(&[Most, Mid, Least], 20);
        let before = ModelWeights::init(ModelConfig::level_only(Metric::Fun), [0; 32], 1).unwrap();
        let mut w = before.clone();
        let cfg = TrainConfig {
            epochs: 1,
            lr: 0.0,
            ..TrainConfig::new(1)
        };
        train(&mut w, &d, None, &cfg).unwrap();
        for ((_, a), (_, b)) in before.params.iter().zip(w.params.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let d = stacked(&[Most, Mid, Least], 30);
        let run = || {
            let mut w = ModelWeights::init(ModelConfig::level_only(Metric::Fun), [0; 32], 2).unwrap();
            let cfg = TrainConfig {
                epochs: 3,
                lr: 1e-3,
                ..TrainConfig::new(5)
            };
            let h = train(&mut w, &d, Some(&d), &cfg).unwrap();
            (crate::model::encode_weights(&w), h)
        };
        let (w1, h1) = run();
        let (w2, h2) = run();
        assert_eq!(w1, w2);
        assert_eq!(h1, h2);
        assert!(h1[2].train_loss < h1[0].train_loss, "{h1:?}");
        assert!(h1.iter().all(|r| r.val_accuracy.is_some()));
    }

    #[test]
    fn divergence_is_reported() {
        let d = stacked(&[Most, Mid, Least], 20);
        let mut w = ModelWeights::init(ModelConfig::level_only(Metric::Fun), [0; 32], 1).unwrap();
        w.params.get_mut("out.b").unwrap().value.data_mut()[0] = f64::NAN;
        let e = train(&mut w, &d, None, &TrainConfig::new(1)).unwrap_err();
        assert!(matches!(e, Error::Diverged { epoch: 1, batch: 0, .. }), "{e}");
    }

    /// Predicts `most` for the first `level/14` share of each level's points.
    struct Monotone {
        data: Dataset,
    }
    impl Predictor for Monotone {
        fn predict(&self, p: &DataPoint) -> Result<[f64; CLASSES]> {
            let span = &self.data.spans()[p.session_id];
            let frac = (p.timestep_index - span.start) as f64 / span.len as f64;
            let most = frac < (p.session_id as f64 + 0.5) / 15.0;
            Ok(if most { [0.8, 0.1, 0.1] } else { [0.1, 0.1, 0.8] })
        }
    }

    fn smb_like() -> Dataset {
        let logs = synthesize_empty_logs(&[150; 15], &mut seeded(3));
        let grids = (0..15).map(|l| grid(l, 150)).collect();
        assemble_dataset(
            logs,
            grids,
            vec![Mid; 15],
            WindowOptions {
                window: 10,
                pad_start: true,
            },
        )
        .unwrap()
    }

    #[test]
    fn ordering_report_for_monotone_predictor() {
        let d = smb_like();
        let r = challenge_ordering_report(&Monotone { data: d.clone() }, &d).unwrap();
        assert_eq!(r.levels.len(), 15);
        assert_eq!(r.correlation(Most).unwrap().rho, 1.0);
        assert_eq!(r.correlation(Least).unwrap().rho, -1.0);
        assert!(r.correlation(Mid).is_err());
        for l in &r.levels {
            assert!((l.prediction_rate.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        }
        assert_eq!(r.correlations_tsv().lines().count(), 4);
    }

    #[test]
    fn ordering_report_for_constant_predictor() {
        let d = smb_like();
        let r = challenge_ordering_report(&Fixed(Most), &d).unwrap();
        assert!(r.levels.iter().all(|l| l.prediction_rate[0] == 100.0));
        assert!(matches!(r.correlation(Most), Err(Error::UndefinedCorrelation(_))));
    }

    proptest! {
        #[test]
        fn report_invariants(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..200)) {
            let truth: Vec<RankLabel> = pairs.iter().map(|p| RankLabel::ALL[p.0]).collect();
            let pred: Vec<RankLabel> = pairs.iter().map(|p| RankLabel::ALL[p.1]).collect();
            let r = MetricsReport::from_predictions(&truth, &pred).unwrap();
            prop_assert!((r.prediction_rate.iter().sum::<f64>() - 100.0).abs() <= 0.01);
            for t in 0..3 {
                prop_assert_eq!(r.confusion[t].iter().sum::<usize>(), truth.iter().filter(|l| l.index() == t).count());
            }
            // overall accuracy is the prediction-rate-weighted class accuracy
            let weighted: f64 = (0..3).map(|k| r.prediction_rate[k] / 100.0 * r.class_accuracy[k].unwrap_or(0.0)).sum();
            prop_assert!((weighted - r.accuracy).abs() < 1e-9);
        }
    }
}
