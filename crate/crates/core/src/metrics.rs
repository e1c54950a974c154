//! Clustering agreement metrics: ARI, AMI, homogeneity, completeness and
//! V-measure, computed per scene and averaged.
//!
//! Entropies use natural logarithms. Pair counts are exact integers; the
//! expected mutual information is the exact hypergeometric sum.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::Scene;
use crate::decode::ClusterResult;
use crate::{Error, Result};

/// Class-by-cluster count table. Empty rows and columns are dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contingency {
    table: Vec<Vec<u64>>,
    rows: Vec<u64>,
    cols: Vec<u64>,
    n: u64,
}

impl Contingency {
    pub fn from_labels<A: Ord, B: Ord>(truth: &[A], pred: &[B]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::LengthMismatch(format!(
                "{} true labels vs {} predicted labels",
                truth.len(),
                pred.len()
            )));
        }
        let (ti, pi) = (label_index(truth), label_index(pred));
        let mut table = vec![vec![0; pi.len()]; ti.len()];
        for (t, p) in truth.iter().zip(pred) {
            table[ti[t]][pi[p]] += 1;
        }
        Ok(Self::from_table(table))
    }

    pub fn from_table(table: Vec<Vec<u64>>) -> Self {
        let width = table.iter().map(Vec::len).max().unwrap_or(0);
        let mut cols = vec![0u64; width];
        for row in &table {
            for (c, &v) in cols.iter_mut().zip(row) {
                *c += v;
            }
        }
        let keep: Vec<usize> = (0..width).filter(|&j| cols[j] > 0).collect();
        let table: Vec<Vec<u64>> = table
            .into_iter()
            .filter(|row| row.iter().any(|&v| v > 0))
            .map(|row| keep.iter().map(|&j| row.get(j).copied().unwrap_or(0)).collect())
            .collect();
        let rows: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<u64> = keep.iter().map(|&j| cols[j]).collect();
        let n = rows.iter().sum();
        Self { table, rows, cols, n }
    }

    pub fn table(&self) -> &[Vec<u64>] {
        &self.table
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.rows
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.cols
    }

    pub fn total(&self) -> u64 {
        self.n
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.table
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &v)| (i, j, v)))
            .filter(|&(_, _, v)| v > 0)
    }
}

/// Dense index per distinct label, in first-seen order.
fn label_index<L: Ord>(labels: &[L]) -> BTreeMap<&L, usize> {
    let mut m = BTreeMap::new();
    for l in labels {
        let next = m.len();
        m.entry(l).or_insert(next);
    }
    m
}

fn pairs(k: u64) -> i128 {
    let k = k as i128;
    k * (k - 1) / 2
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs()
}

/// ARI as a reduced fraction `(numerator, denominator)`, denominator > 0.
pub fn ari_fraction(t: &Contingency) -> Result<(i128, i128)> {
    if t.n < 2 {
        return Err(Error::TooFewSamples(t.n as usize));
    }
    let index: i128 = t.cells().map(|(_, _, v)| pairs(v)).sum();
    let a: i128 = t.rows.iter().map(|&v| pairs(v)).sum();
    let b: i128 = t.cols.iter().map(|&v| pairs(v)).sum();
    let total = pairs(t.n);
    // (index - a b / total) / ((a + b) / 2 - a b / total), cleared of fractions.
    let num = 2 * (index * total - a * b);
    let den = total * (a + b) - 2 * a * b;
    if den == 0 {
        return Ok((1, 1));
    }
    let g = gcd(num, den).max(1) * den.signum();
    Ok((num / g, den / g))
}

pub fn ari(t: &Contingency) -> Result<f64> {
    let (num, den) = ari_fraction(t)?;
    Ok(num as f64 / den as f64)
}

fn entropy(counts: &[u64], n: u64) -> f64 {
    let n = n as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn mutual_information(t: &Contingency) -> f64 {
    let n = t.n as f64;
    t.cells()
        .map(|(i, j, v)| {
            let v = v as f64;
            v / n * (n * v / (t.rows[i] as f64 * t.cols[j] as f64)).ln()
        })
        .sum()
}

/// `ln k!` for `k = 0..=n`.
fn log_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Expected mutual information between random labelings with the table's
/// margins (hypergeometric model).
pub fn expected_mutual_information(t: &Contingency) -> f64 {
    let n = t.n;
    let lf = log_factorials(n);
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in &t.rows {
        for &b in &t.cols {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            let fixed = lf[a as usize] + lf[b as usize] + lf[(n - a) as usize] + lf[(n - b) as usize] - lf[n as usize];
            for k in lo..=hi {
                let kf = k as f64;
                let log_p =
                    fixed - lf[k as usize] - lf[(a - k) as usize] - lf[(b - k) as usize] - lf[(n + k - a - b) as usize];
                emi += kf / nf * (nf * kf / (a as f64 * b as f64)).ln() * log_p.exp();
            }
        }
    }
    emi
}

/// Below this the AMI denominator is treated as zero.
const AMI_DEGENERATE: f64 = 1e-10;

/// AMI with the arithmetic-mean normalizer.
pub fn ami(t: &Contingency) -> Result<f64> {
    if t.n < 2 {
        return Err(Error::TooFewSamples(t.n as usize));
    }
    let mi = mutual_information(t);
    let emi = expected_mutual_information(t);
    let norm = 0.5 * (entropy(&t.rows, t.n) + entropy(&t.cols, t.n));
    let den = norm - emi;
    if den.abs() < AMI_DEGENERATE {
        if (mi - emi).abs() < AMI_DEGENERATE {
            return Ok(1.0);
        }
        let clamped = if den < 0.0 { -AMI_DEGENERATE } else { AMI_DEGENERATE };
        return Ok((mi - emi) / clamped);
    }
    Ok((mi - emi) / den)
}

/// `(homogeneity, completeness, v_measure)`.
pub fn homogeneity_completeness_v(t: &Contingency) -> (f64, f64, f64) {
    if t.n == 0 {
        return (1.0, 1.0, 1.0);
    }
    let n = t.n as f64;
    let h_true = entropy(&t.rows, t.n);
    let h_pred = entropy(&t.cols, t.n);
    let mut h_true_given_pred = 0.0;
    let mut h_pred_given_true = 0.0;
    for (i, j, v) in t.cells() {
        let v = v as f64;
        h_true_given_pred -= v / n * (v / t.cols[j] as f64).ln();
        h_pred_given_true -= v / n * (v / t.rows[i] as f64).ln();
    }
    let homogeneity = if h_true == 0.0 {
        1.0
    } else {
        1.0 - h_true_given_pred / h_true
    };
    let completeness = if h_pred == 0.0 {
        1.0
    } else {
        1.0 - h_pred_given_true / h_pred
    };
    let v = v_measure(homogeneity, completeness);
    (homogeneity, completeness, v)
}

pub fn v_measure(h: f64, c: f64) -> f64 {
    if h + c == 0.0 {
        0.0
    } else {
        2.0 * h * c / (h + c)
    }
}

/// The five scores. Per-scene values are in natural units; [`evaluate`]
/// reports them scaled by 100.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ari: f64,
    pub ami: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

impl MetricsReport {
    pub const PERFECT: MetricsReport = MetricsReport {
        ari: 1.0,
        ami: 1.0,
        homogeneity: 1.0,
        completeness: 1.0,
        v_measure: 1.0,
    };

    fn fields(&self) -> [f64; 5] {
        [self.ari, self.ami, self.homogeneity, self.completeness, self.v_measure]
    }

    fn from_fields(f: [f64; 5]) -> Self {
        Self {
            ari: f[0],
            ami: f[1],
            homogeneity: f[2],
            completeness: f[3],
            v_measure: f[4],
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_fields(self.fields().map(|v| v * factor))
    }

    /// Unweighted mean of `reports`, `None` when empty.
    pub fn mean(reports: &[MetricsReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let mut acc = [0.0; 5];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.fields()) {
                *a += v;
            }
        }
        Some(Self::from_fields(acc.map(|v| v / reports.len() as f64)))
    }
}

/// All five scores for one labeling. Single-sample labelings are trivially
/// perfect.
pub fn score_labels<A: Ord, B: Ord>(truth: &[A], pred: &[B]) -> Result<MetricsReport> {
    let t = Contingency::from_labels(truth, pred)?;
    if t.total() < 2 {
        return Ok(MetricsReport::PERFECT);
    }
    let (homogeneity, completeness, v_measure) = homogeneity_completeness_v(&t);
    Ok(MetricsReport {
        ari: ari(&t)?,
        ami: ami(&t)?,
        homogeneity,
        completeness,
        v_measure,
    })
}

/// Per-scene scores averaged over scenes, scaled by 100. Results are matched
/// to scenes by position and must carry the same scene ids.
pub fn evaluate(scenes: &[Scene], results: &[ClusterResult]) -> Result<MetricsReport> {
    if scenes.is_empty() || scenes.len() != results.len() {
        return Err(Error::LengthMismatch(format!(
            "{} scenes vs {} clustering results",
            scenes.len(),
            results.len()
        )));
    }
    let per_scene = scenes
        .iter()
        .zip(results)
        .map(|(scene, result)| {
            if scene.scene_id != result.scene_id {
                return Err(Error::LengthMismatch(format!(
                    "result for scene {:?} paired with scene {:?}",
                    result.scene_id, scene.scene_id
                )));
            }
            score_labels(&scene.identities()?, &result.labels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::mean(&per_scene).expect("non-empty").scaled(100.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(truth: &[u32], pred: &[u32]) -> Contingency {
        Contingency::from_labels(truth, pred).unwrap()
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari_fraction(&table(&[0, 0, 1, 1], &[0, 0, 1, 2])).unwrap(), (4, 7));
        assert_eq!(ari(&table(&[0, 0, 1, 1], &[5, 5, 3, 3])).unwrap(), 1.0);
        assert_eq!(ari(&table(&[0, 0, 1, 1], &[0, 0, 0, 0])).unwrap(), 0.0);
        assert!(matches!(ari(&table(&[0], &[0])), Err(Error::TooFewSamples(1))));
    }

    #[test]
    fn ami_examples() {
        assert!((ami(&table(&[0, 0, 1, 1, 2], &[1, 1, 0, 0, 2])).unwrap() - 1.0).abs() < 1e-12);
        let a = ami(&table(&[0, 0, 1, 1, 2, 2], &[0, 1, 1, 2, 2, 2])).unwrap();
        let b = ami(&table(&[0, 0, 1, 1, 2, 2], &[2, 0, 0, 1, 1, 1])).unwrap();
        assert_eq!(a, b);
        // Every 2x2 table with these margins is a or its mirror; E[MI] is the
        // weighted mean: P(diagonal 2) = 1/6, P(1) = 2/3, P(0) = 1/6.
        let t = table(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        let emi = expected_mutual_information(&t);
        assert!((emi - 2.0_f64.ln() / 3.0).abs() < 1e-12, "{emi}");
        let want = (0.0 - emi) / (2.0_f64.ln() - emi);
        assert!((ami(&t).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_vs_two_classes() {
        let (h, c, v) = homogeneity_completeness_v(&table(&[0, 0, 1, 1], &[0, 0, 0, 0]));
        assert_eq!((h, c, v), (0.0, 1.0, 0.0));
        let (h, c, _) = homogeneity_completeness_v(&table(&[0, 0, 1, 1], &[0, 1, 2, 2]));
        assert!((h - 1.0).abs() < 1e-15 && c < 1.0);
        let (h, c, v) = homogeneity_completeness_v(&table(&[3, 3, 4], &[1, 1, 0]));
        assert_eq!((h, c, v), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_margins_are_dropped() {
        let t = Contingency::from_table(vec![vec![2, 0, 0], vec![0, 0, 0], vec![0, 0, 3]]);
        assert_eq!(t.table(), &[vec![2, 0], vec![0, 3]]);
        assert_eq!(t.total(), 5);
    }

    #[test]
    fn all_singletons_are_perfect() {
        let t = table(&[0, 1, 2, 3], &[3, 2, 1, 0]);
        assert_eq!(ami(&t).unwrap(), 1.0);
        assert_eq!(ari(&t).unwrap(), 1.0);
    }

    fn scene(ids: &[u32]) -> Scene {
        use crate::dataio::Detection;
        use crate::geometry::GroundPoint;
        Scene {
            scene_id: format!("s{}", ids.len()),
            num_cameras: 1,
            detections: ids
                .iter()
                .map(|&id| Detection {
                    camera: 0,
                    bbox: None,
                    embedding: vec![1.0],
                    ground: GroundPoint::new(0.0, 0.0),
                    identity: Some(id),
                })
                .collect(),
        }
    }

    fn result(scene: &Scene, labels: Vec<usize>) -> ClusterResult {
        ClusterResult {
            scene_id: scene.scene_id.clone(),
            labels,
            levels_run: 1,
            trace: Vec::new(),
        }
    }

    #[test]
    fn evaluate_examples() {
        let a = scene(&[0, 0, 1, 1]);
        let b = scene(&[0, 0, 1, 1, 2]);
        let perfect = evaluate(std::slice::from_ref(&a), &[result(&a, vec![1, 1, 0, 0])]).unwrap();
        assert_eq!(perfect, MetricsReport::PERFECT.scaled(100.0));

        let mut b2 = b.clone();
        b2.detections.pop();
        b2.scene_id = "other".into();
        let r = evaluate(
            &[a.clone(), b2.clone()],
            &[result(&a, vec![0, 0, 1, 1]), result(&b2, vec![0, 0, 1, 2])],
        )
        .unwrap();
        assert!((r.ari - 50.0 * (1.0 + 4.0 / 7.0)).abs() < 1e-9);
        assert!((r.ari - 78.57).abs() < 0.005);

        assert!(matches!(evaluate(&[], &[]), Err(Error::LengthMismatch(_))));
        assert!(evaluate(std::slice::from_ref(&a), &[result(&b, vec![0; 5])]).is_err());
        let single = scene(&[7]);
        assert_eq!(
            evaluate(std::slice::from_ref(&single), &[result(&single, vec![0])])
                .unwrap()
                .ari,
            100.0
        );
    }
}
