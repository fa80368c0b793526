//! Accuracy metrics, run aggregation and Welch's two-sample t-test.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::schema::{CLASS_NAMES, NUM_CLASSES};

/// Square count matrix; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if n == 0 || counts.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("confusion matrix", "counts must be a non-empty square matrix"));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::shape("merge", &[self.classes()], &[other.classes()]));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Overall fraction correct.
    pub fn weighted_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyInput("weighted_accuracy"));
        }
        Ok(self.trace() as f64 / total as f64)
    }

    /// Mean per-class recall over classes with at least one true sample.
    pub fn unweighted_accuracy(&self) -> Result<f64> {
        let recalls: Vec<f64> = self
            .counts
            .iter()
            .enumerate()
            .filter_map(|(i, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect();
        if recalls.is_empty() {
            return Err(Error::EmptyInput("unweighted_accuracy"));
        }
        Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                    .collect()
            })
            .collect()
    }

    /// One comma-separated line of counts per true class.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in &self.counts {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let counts = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<u64>()
                            .map_err(|_| Error::invalid("confusion matrix", format!("bad count {c:?}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        ConfusionMatrix::from_counts(counts)
    }

    /// Class-name header, then row-normalized rows to 4 decimals.
    pub fn to_normalized_text(&self) -> String {
        let mut s = String::new();
        let names: Vec<&str> = if self.classes() == NUM_CLASSES {
            CLASS_NAMES.to_vec()
        } else {
            Vec::new()
        };
        if !names.is_empty() {
            s.push_str(&names.join(","));
            s.push('\n');
        }
        for row in self.row_normalized() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

/// Sample mean and sample standard deviation (`n − 1`); `n = 1` gives 0.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput("aggregate"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
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
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const CF_TOL: f64 = 1e-12;
const CF_MAX_ITER: usize = 10_000;

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_TOL {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    if t.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

pub const ALPHA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub significant: bool,
}

/// Welch's unequal-variance two-sample t-test, two-tailed.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("t_test", "each sample needs at least two values"));
    }
    let (ma, sa) = aggregate(a)?;
    let (mb, sb) = aggregate(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sa * sa / na, sb * sb / nb);
    let se2 = va + vb;
    let (t, df, p) = if se2 == 0.0 {
        let df = na + nb - 2.0;
        if ma == mb {
            (0.0, df, 1.0)
        } else {
            let t = if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY };
            (t, df, 0.0)
        }
    } else {
        let t = (ma - mb) / se2.sqrt();
        let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
        (t, df, student_t_two_tailed(t, df))
    };
    Ok(TTest {
        t,
        df,
        p,
        significant: p < ALPHA,
    })
}

/// One row of a two-configuration comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub metric: String,
    pub config_a: String,
    pub n_a: usize,
    pub mean_a: f64,
    pub std_a: f64,
    pub config_b: String,
    pub n_b: usize,
    pub mean_b: f64,
    pub std_b: f64,
    pub test: TTest,
}

pub const COMPARISON_HEADER: &str =
    "metric,config_a,n_runs_a,mean_a,std_a,config_b,n_runs_b,mean_b,std_b,t,df,p_value,significant";

pub fn compare(metric: &str, config_a: &str, a: &[f64], config_b: &str, b: &[f64]) -> Result<ComparisonRow> {
    let (mean_a, std_a) = aggregate(a)?;
    let (mean_b, std_b) = aggregate(b)?;
    Ok(ComparisonRow {
        metric: metric.to_owned(),
        config_a: config_a.to_owned(),
        n_a: a.len(),
        mean_a,
        std_a,
        config_b: config_b.to_owned(),
        n_b: b.len(),
        mean_b,
        std_b,
        test: welch_t_test(a, b)?,
    })
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = format!("{COMPARISON_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.metric,
            r.config_a,
            r.n_a,
            r.mean_a,
            r.std_a,
            r.config_b,
            r.n_b,
            r.mean_b,
            r.std_b,
            r.test.t,
            r.test.df,
            r.test.p,
            r.test.significant
        );
    }
    s
}

/// Metrics of one finished run, as stored in a results file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub config: String,
    pub fold: usize,
    pub seed: u64,
    pub test_wa: f64,
    pub test_uwa: f64,
}

pub const SUMMARY_HEADER: &str = "config,wa_mean,wa_std,uwa_mean,uwa_std,n_runs";

/// Configurations in first-appearance order with their runs.
fn group<'a>(runs: &'a [RunMetrics]) -> Vec<(&'a str, Vec<&'a RunMetrics>)> {
    let mut groups: Vec<(&str, Vec<&RunMetrics>)> = Vec::new();
    for r in runs {
        match groups.iter_mut().find(|(c, _)| *c == r.config) {
            Some((_, v)) => v.push(r),
            None => groups.push((&r.config, vec![r])),
        }
    }
    groups
}

pub fn summary_csv(runs: &[RunMetrics]) -> Result<String> {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for (config, rs) in group(runs) {
        let wa: Vec<f64> = rs.iter().map(|r| r.test_wa).collect();
        let uwa: Vec<f64> = rs.iter().map(|r| r.test_uwa).collect();
        let (wm, ws) = aggregate(&wa)?;
        let (um, us) = aggregate(&uwa)?;
        let _ = writeln!(s, "{config},{wm},{ws},{um},{us},{}", rs.len());
    }
    Ok(s)
}

/// Writes `summary.csv`, `comparisons.csv` (every pair of configurations
/// with at least two runs each, both metrics) and one
/// `confusion_<config>.txt` per configuration with confusion matrices.
pub fn render_outputs(
    runs: &[RunMetrics],
    confusion: &[(String, ConfusionMatrix)],
    out: &Path,
) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let write = |name: &str, text: String| -> Result<()> {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write("summary.csv", summary_csv(runs)?)?;

    let groups = group(runs);
    let mut rows = Vec::new();
    for (i, (ca, ra)) in groups.iter().enumerate() {
        for (cb, rb) in &groups[i + 1..] {
            if ra.len() < 2 || rb.len() < 2 {
                continue;
            }
            for (metric, get) in [
                ("wa", (|r: &RunMetrics| r.test_wa) as fn(&RunMetrics) -> f64),
                ("uwa", |r: &RunMetrics| r.test_uwa),
            ] {
                let a: Vec<f64> = ra.iter().map(|r| get(r)).collect();
                let b: Vec<f64> = rb.iter().map(|r| get(r)).collect();
                rows.push(compare(metric, ca, &a, cb, &b)?);
            }
        }
    }
    write("comparisons.csv", comparison_csv(&rows))?;

    let mut merged: Vec<(&str, ConfusionMatrix)> = Vec::new();
    for (config, cm) in confusion {
        match merged.iter_mut().find(|(c, _)| c == config) {
            Some((_, acc)) => acc.merge(cm)?,
            None => merged.push((config, cm.clone())),
        }
    }
    for (config, cm) in merged {
        write(&format!("confusion_{config}.txt"), cm.to_normalized_text())?;
    }
    Ok(())
}
