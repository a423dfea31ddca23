//! Metrics, significance tests and report tables over run journals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::jsonl;
use crate::probe::Origin;
use crate::rag::{RunRecord, System, INVALID};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub n_items: usize,
    pub n_invalid: usize,
}

impl MetricSet {
    pub const NAMES: [&'static str; 7] = [
        "accuracy",
        "micro_precision",
        "micro_recall",
        "micro_f1",
        "macro_precision",
        "macro_recall",
        "macro_f1",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.accuracy,
            self.micro_precision,
            self.micro_recall,
            self.micro_f1,
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
        ]
    }

    fn from_values(v: [f64; 7], n_items: usize, n_invalid: usize) -> Self {
        MetricSet {
            accuracy: v[0],
            micro_precision: v[1],
            micro_recall: v[2],
            micro_f1: v[3],
            macro_precision: v[4],
            macro_recall: v[5],
            macro_f1: v[6],
            n_items,
            n_invalid,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else if p == r {
        // Exact harmonic mean; the general form can be off by an ulp.
        p
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Single-label scoring of (gold, predicted) class pairs. Macro averages run
/// over the classes seen in gold ∪ predicted.
pub fn score_labels(gold: &[&str], predicted: &[&str]) -> Result<MetricSet> {
    if gold.is_empty() {
        return Err(Error::Validation("cannot score an empty cell".into()));
    }
    if gold.len() != predicted.len() {
        return Err(Error::Validation(format!("{} gold labels but {} predictions", gold.len(), predicted.len())));
    }
    let n = gold.len();
    let classes: BTreeSet<&str> = gold.iter().chain(predicted).copied().collect();
    let mut tp = 0;
    let (mut sum_p, mut sum_r, mut sum_f) = (0.0, 0.0, 0.0);
    for c in &classes {
        let c_tp = gold.iter().zip(predicted).filter(|(g, p)| *g == c && *p == c).count();
        let c_pred = predicted.iter().filter(|p| *p == c).count();
        let c_gold = gold.iter().filter(|g| *g == c).count();
        let (p, r) = (ratio(c_tp, c_pred), ratio(c_tp, c_gold));
        sum_p += p;
        sum_r += r;
        sum_f += f1(p, r);
        tp += c_tp;
    }
    let k = classes.len() as f64;
    // Every item carries one gold and one predicted class, so pooled FP and FN
    // both equal n - TP.
    let micro_p = ratio(tp, n);
    let micro_r = ratio(tp, n);
    Ok(MetricSet {
        accuracy: ratio(tp, n),
        micro_precision: micro_p,
        micro_recall: micro_r,
        micro_f1: f1(micro_p, micro_r),
        macro_precision: sum_p / k,
        macro_recall: sum_r / k,
        macro_f1: sum_f / k,
        n_items: n,
        n_invalid: predicted.iter().filter(|p| **p == INVALID).count(),
    })
}

pub fn score_predictions(records: &[RunRecord]) -> Result<MetricSet> {
    if let Some(first) = records.first() {
        if records.iter().any(|r| {
            r.model != first.model || r.system != first.system || r.temperature != first.temperature || r.probe != first.probe
        }) {
            return Err(Error::Validation("records span more than one cell".into()));
        }
    }
    let gold: Vec<&str> = records.iter().map(|r| r.key.as_str()).collect();
    let pred: Vec<&str> = records.iter().map(|r| r.parsed_letter.as_str()).collect();
    score_labels(&gold, &pred)
}

// ---------------------------------------------------------------------------
// Distributions and tests

fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let fix = |v: f64| if v.abs() < TINY { TINY } else { v };
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 / fix(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / fix(1.0 + aa * d);
        c = fix(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / fix(1.0 + aa * d);
        c = fix(1.0 + aa / c);
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`, with `y = 1 - x` passed
/// separately to avoid cancellation.
fn inc_beta(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * y.ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, y) / b
    }
}

/// `P(T > |t|)` for Student's t with `df` degrees of freedom.
fn t_upper_tail(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let t2 = t * t;
    0.5 * inc_beta(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))
}

pub fn student_t_cdf(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(Error::Domain(format!("degrees of freedom must be positive, got {df}")));
    }
    if t.is_nan() {
        return Err(Error::Domain("t is NaN".into()));
    }
    if t == 0.0 {
        return Ok(0.5);
    }
    let tail = t_upper_tail(t, df);
    Ok(if t > 0.0 { 1.0 - tail } else { tail })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    /// `None` when the pooled standard deviation is zero.
    pub cohens_d: Option<f64>,
    /// Both samples constant with different means.
    pub degenerate: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn check_samples(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::Validation(format!("need at least two values per sample, got {} and {}", x.len(), y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("samples must be finite".into()));
    }
    Ok(())
}

/// Classical pooled-SD Cohen's d; `None` when the pooled SD is zero.
pub fn cohens_d(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    check_samples(x, y)?;
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let pooled = (((nx - 1.0) * sample_var(x) + (ny - 1.0) * sample_var(y)) / (nx + ny - 2.0)).sqrt();
    if pooled == 0.0 {
        return Ok(None);
    }
    Ok(Some((mean(x) - mean(y)) / pooled))
}

/// Two-sided Welch test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(x: &[f64], y: &[f64]) -> Result<TTestResult> {
    check_samples(x, y)?;
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (vx, vy) = (sample_var(x) / nx, sample_var(y) / ny);
    let diff = mean(x) - mean(y);
    let d = cohens_d(x, y)?;
    let se2 = vx + vy;
    if se2 == 0.0 {
        let df = nx + ny - 2.0;
        return Ok(if diff == 0.0 {
            TTestResult { t_statistic: 0.0, degrees_of_freedom: df, p_value: 1.0, cohens_d: d, degenerate: false }
        } else {
            TTestResult {
                t_statistic: diff.signum() * f64::INFINITY,
                degrees_of_freedom: df,
                p_value: f64::MIN_POSITIVE,
                cohens_d: d,
                degenerate: true,
            }
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (vx * vx / (nx - 1.0) + vy * vy / (ny - 1.0));
    let p = (2.0 * t_upper_tail(t, df)).min(1.0);
    Ok(TTestResult { t_statistic: t, degrees_of_freedom: df, p_value: p, cohens_d: d, degenerate: false })
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_adjust(pvals: &[f64]) -> Vec<f64> {
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let adj = (pvals[i] * (m - rank) as f64).min(1.0);
        running = running.max(adj);
        out[i] = running;
    }
    out
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

// ---------------------------------------------------------------------------
// Temperature aggregation

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemperatureAggregate {
    pub mean: MetricSet,
    /// Each metric at the highest temperature minus at the lowest.
    pub delta: [f64; 7],
}

impl TemperatureAggregate {
    pub fn delta_macro_f1(&self) -> f64 {
        self.delta[6]
    }
}

/// Unweighted mean over exactly the configured temperatures.
pub fn aggregate_temperatures(cells: &[(f64, MetricSet)], temperatures: &[f64]) -> Result<TemperatureAggregate> {
    let have: BTreeSet<u64> = cells.iter().map(|(t, _)| t.to_bits()).collect();
    let want: BTreeSet<u64> = temperatures.iter().map(|t| t.to_bits()).collect();
    if have != want || cells.len() != temperatures.len() {
        return Err(Error::Validation(format!(
            "expected one cell per temperature {temperatures:?}, got {:?}",
            cells.iter().map(|c| c.0).collect::<Vec<_>>()
        )));
    }
    let k = cells.len() as f64;
    let mut sums = [0.0; 7];
    for (_, m) in cells {
        for (s, v) in sums.iter_mut().zip(m.values()) {
            *s += v;
        }
    }
    let lo = cells.iter().min_by(|a, b| a.0.total_cmp(&b.0)).unwrap().1.values();
    let hi = cells.iter().max_by(|a, b| a.0.total_cmp(&b.0)).unwrap().1.values();
    let mut delta = [0.0; 7];
    for i in 0..7 {
        delta[i] = hi[i] - lo[i];
    }
    Ok(TemperatureAggregate {
        mean: MetricSet::from_values(
            sums.map(|s| s / k),
            cells.iter().map(|c| c.1.n_items).sum(),
            cells.iter().map(|c| c.1.n_invalid).sum(),
        ),
        delta,
    })
}

// ---------------------------------------------------------------------------
// Grid analysis

/// `(model, probe, system)` configuration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Config {
    pub model_rank: usize,
    pub model: String,
    pub probe: Origin,
    pub system: System,
}

/// Cell metrics by configuration, temperature (as bits) and replicate.
pub struct Grid {
    pub cells: BTreeMap<Config, BTreeMap<u64, BTreeMap<u32, MetricSet>>>,
    pub models: Vec<String>,
    pub probes: Vec<Origin>,
    pub systems: Vec<System>,
    pub temperatures: Vec<f64>,
    pub replicates: Vec<u32>,
    pub items_per_probe: BTreeMap<Origin, usize>,
    gaps: Vec<String>,
}

impl Grid {
    pub fn from_records(records: &[RunRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Validation("journal is empty".into()));
        }
        let mut models: Vec<String> = Vec::new();
        let mut grouped: BTreeMap<(Config, u64, u32), Vec<&RunRecord>> = BTreeMap::new();
        for r in records {
            if !(r.temperature.is_finite() && r.temperature >= 0.0) {
                return Err(Error::Validation(format!("record {} has temperature {}", r.item_id, r.temperature)));
            }
            let model_rank = match models.iter().position(|m| *m == r.model) {
                Some(i) => i,
                None => {
                    models.push(r.model.clone());
                    models.len() - 1
                }
            };
            let cfg = Config { model_rank, model: r.model.clone(), probe: r.probe, system: r.system };
            grouped.entry((cfg, (r.temperature + 0.0).to_bits(), r.replicate)).or_default().push(r);
        }
        let probes: BTreeSet<Origin> = records.iter().map(|r| r.probe).collect();
        let systems: BTreeSet<System> = records.iter().map(|r| r.system).collect();
        let temps: BTreeSet<u64> = grouped.keys().map(|k| k.1).collect();
        let reps: BTreeSet<u32> = records.iter().map(|r| r.replicate).collect();
        let mut items: BTreeMap<Origin, BTreeSet<&str>> = BTreeMap::new();
        for r in records {
            items.entry(r.probe).or_default().insert(&r.item_id);
        }

        let mut cells: BTreeMap<Config, BTreeMap<u64, BTreeMap<u32, MetricSet>>> = BTreeMap::new();
        let mut gaps = Vec::new();
        for ((cfg, t, rep), recs) in &grouped {
            let mut seen = BTreeSet::new();
            for r in recs {
                if !seen.insert(r.item_id.as_str()) {
                    return Err(Error::Validation(format!(
                        "duplicate record for item {} in {}/{}/{}/T={}/rep={}",
                        r.item_id, cfg.model, cfg.probe.as_str(), cfg.system, f64::from_bits(*t), rep
                    )));
                }
            }
            let expected = items[&cfg.probe].len();
            if recs.len() != expected {
                gaps.push(format!(
                    "{}/{}/{}/T={}/rep={}: {} of {expected} items",
                    cfg.model,
                    cfg.probe.as_str(),
                    cfg.system,
                    f64::from_bits(*t),
                    rep,
                    recs.len()
                ));
            }
            let owned: Vec<RunRecord> = recs.iter().map(|r| (*r).clone()).collect();
            cells.entry(cfg.clone()).or_default().entry(*t).or_default().insert(*rep, score_predictions(&owned)?);
        }
        let temperatures: Vec<f64> = temps.iter().map(|b| f64::from_bits(*b)).collect();
        for (m_rank, model) in models.iter().enumerate() {
            for &probe in &probes {
                for &system in &systems {
                    let cfg = Config { model_rank: m_rank, model: model.clone(), probe, system };
                    for &t in &temps {
                        for &rep in &reps {
                            let present = cells.get(&cfg).and_then(|c| c.get(&t)).is_some_and(|c| c.contains_key(&rep));
                            if !present {
                                gaps.push(format!(
                                    "{model}/{}/{system}/T={}/rep={rep}: missing",
                                    probe.as_str(),
                                    f64::from_bits(t)
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(Grid {
            cells,
            models,
            probes: probes.into_iter().collect(),
            systems: systems.into_iter().collect(),
            temperatures,
            replicates: reps.into_iter().collect(),
            items_per_probe: items.into_iter().map(|(k, v)| (k, v.len())).collect(),
            gaps,
        })
    }

    pub fn gaps(&self) -> &[String] {
        &self.gaps
    }

    pub fn is_complete(&self) -> bool {
        self.gaps.is_empty()
    }

    fn config(&self, model: usize, probe: Origin, system: System) -> Config {
        Config { model_rank: model, model: self.models[model].clone(), probe, system }
    }

    /// Replicate-mean metrics per temperature, when every temperature is
    /// present.
    fn per_temperature(&self, cfg: &Config) -> Option<Vec<(f64, MetricSet)>> {
        let by_t = self.cells.get(cfg)?;
        let mut out = Vec::new();
        for &t in &self.temperatures {
            let reps = by_t.get(&t.to_bits())?;
            let k = reps.len() as f64;
            let mut sums = [0.0; 7];
            for m in reps.values() {
                for (s, v) in sums.iter_mut().zip(m.values()) {
                    *s += v;
                }
            }
            let n_items = reps.values().map(|m| m.n_items).sum();
            let n_invalid = reps.values().map(|m| m.n_invalid).sum();
            out.push((t, MetricSet::from_values(sums.map(|s| s / k), n_items, n_invalid)));
        }
        Some(out)
    }

    pub fn aggregate(&self, cfg: &Config) -> Option<TemperatureAggregate> {
        aggregate_temperatures(&self.per_temperature(cfg)?, &self.temperatures).ok()
    }

    /// Macro-F1 of every (temperature, replicate) cell of a configuration.
    fn macro_f1_sample(&self, cfg: &Config) -> Vec<f64> {
        self.cells
            .get(cfg)
            .map(|by_t| by_t.values().flat_map(|reps| reps.values().map(|m| m.macro_f1)).collect())
            .unwrap_or_default()
    }

    fn macro_f1_at(&self, cfg: &Config, t: f64) -> Vec<f64> {
        self.cells
            .get(cfg)
            .and_then(|by_t| by_t.get(&t.to_bits()))
            .map(|reps| reps.values().map(|m| m.macro_f1).collect())
            .unwrap_or_default()
    }
}

/// One system compared with the baseline on the temperature cells of a
/// (model, probe) row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineComparison {
    pub model: String,
    pub probe: Origin,
    pub system: System,
    pub mean_macro_f1: f64,
    pub baseline_macro_f1: f64,
    pub test: Option<TTestResult>,
    pub p_raw: Option<f64>,
    pub p_adj: Option<f64>,
    pub stars: &'static str,
}

/// Welch tests of each system against `baseline`, Holm-adjusted across the
/// systems of each (model, probe) row; stars follow the adjusted p.
pub fn compare_to_baseline(grid: &Grid, baseline: System) -> Result<Vec<BaselineComparison>> {
    if !grid.systems.contains(&baseline) {
        return Err(Error::Validation(format!("baseline {baseline} is not in the journal")));
    }
    let mut out = Vec::new();
    for m in 0..grid.models.len() {
        for &probe in &grid.probes {
            let base_cfg = grid.config(m, probe, baseline);
            let y = grid.macro_f1_sample(&base_cfg);
            let base_mean = grid.aggregate(&base_cfg).map_or(f64::NAN, |a| a.mean.macro_f1);
            let mut row: Vec<BaselineComparison> = Vec::new();
            for &system in grid.systems.iter().filter(|s| **s != baseline) {
                let cfg = grid.config(m, probe, system);
                let x = grid.macro_f1_sample(&cfg);
                let test = welch_t_test(&x, &y).ok();
                row.push(BaselineComparison {
                    model: grid.models[m].clone(),
                    probe,
                    system,
                    mean_macro_f1: grid.aggregate(&cfg).map_or(f64::NAN, |a| a.mean.macro_f1),
                    baseline_macro_f1: base_mean,
                    p_raw: test.map(|t| t.p_value),
                    test,
                    p_adj: None,
                    stars: "",
                });
            }
            let tested: Vec<usize> = (0..row.len()).filter(|&i| row[i].p_raw.is_some()).collect();
            let adj = holm_adjust(&tested.iter().map(|&i| row[i].p_raw.unwrap()).collect::<Vec<_>>());
            for (&i, p) in tested.iter().zip(adj) {
                row[i].p_adj = Some(p);
                row[i].stars = stars(p);
            }
            out.extend(row);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemperaturePairTest {
    pub low: f64,
    pub high: f64,
    pub delta_macro_f1: f64,
    pub test: Option<TTestResult>,
    pub p_adj: Option<f64>,
    pub stars: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemperatureAnalysis {
    pub model: String,
    pub probe: Origin,
    pub system: System,
    /// Replicate-mean macro-F1 per temperature.
    pub macro_f1: Vec<(f64, f64)>,
    /// Highest minus lowest temperature.
    pub delta: f64,
    pub pairs: Vec<TemperaturePairTest>,
}

fn temperature_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    pairs.sort_by_key(|&(i, j)| (j - i, i));
    pairs
}

/// Pairwise temperature tests per configuration, Holm-adjusted across the
/// pairs. Tests need at least two replicates per temperature; otherwise
/// only the descriptive deltas are filled.
pub fn temperature_analysis(grid: &Grid) -> Vec<TemperatureAnalysis> {
    let mut out = Vec::new();
    for cfg in grid.cells.keys() {
        let Some(per_t) = grid.per_temperature(cfg) else { continue };
        let macro_f1: Vec<(f64, f64)> = per_t.iter().map(|(t, m)| (*t, m.macro_f1)).collect();
        let delta = macro_f1.last().unwrap().1 - macro_f1[0].1;
        let mut pairs: Vec<TemperaturePairTest> = temperature_pairs(macro_f1.len())
            .into_iter()
            .map(|(i, j)| {
                let (lo, hi) = (grid.temperatures[i], grid.temperatures[j]);
                TemperaturePairTest {
                    low: lo,
                    high: hi,
                    delta_macro_f1: macro_f1[j].1 - macro_f1[i].1,
                    // Sign convention: high minus low.
                    test: welch_t_test(&grid.macro_f1_at(cfg, hi), &grid.macro_f1_at(cfg, lo)).ok(),
                    p_adj: None,
                    stars: "",
                }
            })
            .collect();
        let tested: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].test.is_some()).collect();
        let adj = holm_adjust(&tested.iter().map(|&i| pairs[i].test.unwrap().p_value).collect::<Vec<_>>());
        for (&i, p) in tested.iter().zip(adj) {
            pairs[i].p_adj = Some(p);
            pairs[i].stars = stars(p);
        }
        out.push(TemperatureAnalysis {
            model: cfg.model.clone(),
            probe: cfg.probe,
            system: cfg.system,
            macro_f1,
            delta,
            pairs,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub group_by: &'static str,
    pub group: String,
    pub increases: usize,
    pub decreases: usize,
    pub unchanged: usize,
    pub median_delta: f64,
}

/// A delta that prints as 0.00 counts as no change.
pub fn classify_delta(delta: f64) -> std::cmp::Ordering {
    let cents = (delta * 100.0).round();
    if cents == 0.0 {
        std::cmp::Ordering::Equal
    } else if cents > 0.0 {
        std::cmp::Ordering::Greater
    } else {
        std::cmp::Ordering::Less
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Increase/decrease/no-change counts and median delta, overall and grouped
/// by system, probe and model.
pub fn temperature_sensitivity(analyses: &[TemperatureAnalysis]) -> Vec<SensitivityRow> {
    let row = |group_by: &'static str, group: String, deltas: Vec<f64>| {
        let count = |o| deltas.iter().filter(|d| classify_delta(**d) == o).count();
        SensitivityRow {
            group_by,
            group,
            increases: count(std::cmp::Ordering::Greater),
            decreases: count(std::cmp::Ordering::Less),
            unchanged: count(std::cmp::Ordering::Equal),
            median_delta: median(&deltas),
        }
    };
    let mut rows = vec![row("all", "all".into(), analyses.iter().map(|a| a.delta).collect())];
    let systems: BTreeSet<System> = analyses.iter().map(|a| a.system).collect();
    for s in systems {
        rows.push(row("system", s.to_string(), analyses.iter().filter(|a| a.system == s).map(|a| a.delta).collect()));
    }
    let probes: BTreeSet<Origin> = analyses.iter().map(|a| a.probe).collect();
    for p in probes {
        rows.push(row("probe", p.as_str().into(), analyses.iter().filter(|a| a.probe == p).map(|a| a.delta).collect()));
    }
    let mut models: Vec<&str> = Vec::new();
    for a in analyses {
        if !models.contains(&a.model.as_str()) {
            models.push(&a.model);
        }
    }
    for m in models {
        rows.push(row("model", m.into(), analyses.iter().filter(|a| a.model == m).map(|a| a.delta).collect()));
    }
    rows
}

// ---------------------------------------------------------------------------
// Rendering

/// Two decimals, without a negative zero.
pub fn fmt2(v: f64) -> String {
    if v.is_nan() {
        return "—".into();
    }
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn fmt_p(p: Option<f64>) -> String {
    match p {
        None => "n/a".into(),
        Some(p) if p < 0.001 => format!("{p:.1e}"),
        Some(p) => format!("{p:.3}"),
    }
}

fn fmt_t(t: f64) -> String {
    if t == 0.0 {
        "0".into()
    } else {
        format!("{t}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub markdown: String,
    pub csv: String,
    pub gaps: Vec<String>,
}

impl Report {
    pub fn is_complete(&self) -> bool {
        self.gaps.is_empty()
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    model: &'a str,
    probe: &'a str,
    system: &'a str,
    temperature: String,
    metric: &'a str,
    value: f64,
    p_raw: Option<f64>,
    p_adj: Option<f64>,
    stars: &'a str,
    cohens_d: Option<f64>,
}

pub fn build_report(records: &[RunRecord], baseline: System) -> Result<Report> {
    let grid = Grid::from_records(records)?;
    let comparisons = compare_to_baseline(&grid, baseline)?;
    let temps = temperature_analysis(&grid);
    let sensitivity = temperature_sensitivity(&temps);
    let comparison = |m: &str, p: Origin, s: System| comparisons.iter().find(|c| c.model == m && c.probe == p && c.system == s);

    let mut md = String::new();
    let _ = writeln!(md, "# Evaluation report\n");
    let _ = writeln!(
        md,
        "{} records; models: {}; temperatures: {}; replicates per temperature: {}; baseline: {baseline}.\n",
        records.len(),
        grid.models.len(),
        grid.temperatures.iter().map(|t| fmt_t(*t)).collect::<Vec<_>>().join(", "),
        grid.replicates.len()
    );
    if !grid.is_complete() {
        let _ = writeln!(md, "## Gaps\n\nThe grid is incomplete; affected cells are shown as —.\n");
        for g in grid.gaps() {
            let _ = writeln!(md, "- {g}");
        }
        md.push('\n');
    }

    for &probe in &grid.probes {
        let _ = writeln!(md, "## {} — macro-F1 (mean over temperatures)\n", probe.as_str());
        let header: Vec<String> = grid.systems.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(md, "| model | {} |", header.join(" | "));
        let _ = writeln!(md, "|---|{}", "---|".repeat(header.len()));
        for (m, model) in grid.models.iter().enumerate() {
            let cells: Vec<String> = grid
                .systems
                .iter()
                .map(|&s| {
                    let v = grid.aggregate(&grid.config(m, probe, s)).map_or(f64::NAN, |a| a.mean.macro_f1);
                    let star = comparison(model, probe, s).map_or("", |c| c.stars);
                    if star.is_empty() {
                        fmt2(v)
                    } else {
                        format!("{}<sup>{star}</sup>", fmt2(v))
                    }
                })
                .collect();
            let _ = writeln!(md, "| {model} | {} |", cells.join(" | "));
        }
        let _ = writeln!(
            md,
            "\nWelch two-sample t-test vs {baseline} over the temperature cells, Holm-adjusted across systems per row; \
             <sup>*</sup> p<.05, <sup>**</sup> p<.01, <sup>***</sup> p<.001 (adjusted).\n"
        );

        let _ = writeln!(md, "## {} — accuracy (mean over temperatures)\n", probe.as_str());
        let _ = writeln!(md, "| model | {} |", header.join(" | "));
        let _ = writeln!(md, "|---|{}", "---|".repeat(header.len()));
        for (m, model) in grid.models.iter().enumerate() {
            let cells: Vec<String> = grid
                .systems
                .iter()
                .map(|&s| fmt2(grid.aggregate(&grid.config(m, probe, s)).map_or(f64::NAN, |a| a.mean.accuracy)))
                .collect();
            let _ = writeln!(md, "| {model} | {} |", cells.join(" | "));
        }
        md.push('\n');
    }

    let _ = writeln!(md, "## Tests vs {baseline}\n");
    let _ = writeln!(md, "| model | probe | system | macro-F1 | baseline | t | df | p (raw) | p (Holm) | d |");
    let _ = writeln!(md, "|---|---|---|---|---|---|---|---|---|---|");
    for c in &comparisons {
        let (t, df, d) = match &c.test {
            Some(t) => (format!("{:.3}", t.t_statistic), format!("{:.2}", t.degrees_of_freedom), t.cohens_d.map_or("undefined".into(), |d| format!("{d:.2}"))),
            None => ("n/a".into(), "n/a".into(), "n/a".into()),
        };
        let _ = writeln!(
            md,
            "| {} | {} | {} | {}{} | {} | {t} | {df} | {} | {} | {d} |",
            c.model,
            c.probe.as_str(),
            c.system,
            fmt2(c.mean_macro_f1),
            if c.stars.is_empty() { String::new() } else { format!("<sup>{}</sup>", c.stars) },
            fmt2(c.baseline_macro_f1),
            fmt_p(c.p_raw),
            fmt_p(c.p_adj),
        );
    }
    md.push('\n');

    let _ = writeln!(md, "## Temperature sensitivity by configuration\n");
    let t_cols: Vec<String> = grid.temperatures.iter().map(|t| format!("T={}", fmt_t(*t))).collect();
    let pair_cols: Vec<String> = temperature_pairs(grid.temperatures.len())
        .into_iter()
        .map(|(i, j)| format!("p {}→{}", fmt_t(grid.temperatures[i]), fmt_t(grid.temperatures[j])))
        .collect();
    let _ = writeln!(md, "| model | probe | system | {} | Δ | {} |", t_cols.join(" | "), pair_cols.join(" | "));
    let _ = writeln!(md, "|---|---|---|{}---|{}", "---|".repeat(t_cols.len()), "---|".repeat(pair_cols.len()));
    for a in &temps {
        let vals: Vec<String> = a.macro_f1.iter().map(|(_, v)| fmt2(*v)).collect();
        let ps: Vec<String> = a.pairs.iter().map(|p| format!("{}{}", fmt_p(p.p_adj), if p.stars.is_empty() { String::new() } else { format!("<sup>{}</sup>", p.stars) })).collect();
        let _ = writeln!(md, "| {} | {} | {} | {} | {} | {} |", a.model, a.probe.as_str(), a.system, vals.join(" | "), fmt2(a.delta), ps.join(" | "));
    }
    if grid.replicates.len() < 2 {
        let _ = writeln!(md, "\nOne run per temperature: pairwise temperature tests are not estimable and the deltas are descriptive.");
    }
    md.push('\n');

    let _ = writeln!(md, "## Temperature sensitivity summary (Δ macro-F1, lowest → highest T)\n");
    let _ = writeln!(md, "| group | value | increases | decreases | no change | median Δ |");
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for r in &sensitivity {
        let _ = writeln!(md, "| {} | {} | {} | {} | {} | {} |", r.group_by, r.group, r.increases, r.decreases, r.unchanged, fmt2(r.median_delta));
    }

    // CSV: long format, full precision.
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| Error::Validation(format!("csv: {e}"));
    for cfg in grid.cells.keys() {
        let Some(per_t) = grid.per_temperature(cfg) else { continue };
        for (t, m) in &per_t {
            for (name, v) in MetricSet::NAMES.iter().zip(m.values()) {
                w.serialize(CsvRow { model: &cfg.model, probe: cfg.probe.as_str(), system: cfg.system.as_str(), temperature: fmt_t(*t), metric: name, value: v, p_raw: None, p_adj: None, stars: "", cohens_d: None })
                    .map_err(ser)?;
            }
        }
        let Some(agg) = grid.aggregate(cfg) else { continue };
        let comp = comparison(&cfg.model, cfg.probe, cfg.system);
        for (name, v) in MetricSet::NAMES.iter().zip(agg.mean.values()) {
            let c = comp.filter(|_| *name == "macro_f1");
            w.serialize(CsvRow {
                model: &cfg.model,
                probe: cfg.probe.as_str(),
                system: cfg.system.as_str(),
                temperature: "mean".into(),
                metric: name,
                value: v,
                p_raw: c.and_then(|c| c.p_raw),
                p_adj: c.and_then(|c| c.p_adj),
                stars: c.map_or("", |c| c.stars),
                cohens_d: c.and_then(|c| c.test).and_then(|t| t.cohens_d),
            })
            .map_err(ser)?;
        }
    }
    for a in &temps {
        for p in &a.pairs {
            w.serialize(CsvRow {
                model: &a.model,
                probe: a.probe.as_str(),
                system: a.system.as_str(),
                temperature: format!("{}-{}", fmt_t(p.low), fmt_t(p.high)),
                metric: "delta_macro_f1",
                value: p.delta_macro_f1,
                p_raw: p.test.map(|t| t.p_value),
                p_adj: p.p_adj,
                stars: p.stars,
                cohens_d: p.test.and_then(|t| t.cohens_d),
            })
            .map_err(ser)?;
        }
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| Error::Validation(e.to_string()))?).expect("utf8 csv");

    Ok(Report { markdown: md, csv, gaps: grid.gaps().to_vec() })
}

/// Writes `report.md` and `report.csv` into `out_dir`.
pub fn emit_report(records: &[RunRecord], baseline: System, out_dir: &Path) -> Result<Report> {
    let report = build_report(records, baseline)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    jsonl::write_string(&out_dir.join("report.md"), &report.markdown)?;
    jsonl::write_string(&out_dir.join("report.csv"), &report.csv)?;
    Ok(report)
}
