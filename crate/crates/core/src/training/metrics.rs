use std::collections::BTreeMap;

/// Square confusion matrix, rows are true classes and columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    n: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(n_classes: usize) -> Self {
        Self { n: n_classes, counts: vec![0; n_classes * n_classes] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "confusion matrix must be square");
        Self { n, counts: rows.concat() }
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.n + pred] += 1;
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|k| self.get(k, k)).sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        (0..self.n).map(|j| self.get(k, j)).sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        (0..self.n).map(|i| self.get(i, k)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    /// `2tp / (2tp + fp + fn)`, zero when the class never occurs in either
    /// truth or predictions.
    pub fn f1(&self, k: usize) -> f64 {
        let tp = self.get(k, k) as f64;
        let denom = self.row_sum(k) as f64 + self.col_sum(k) as f64;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    }

    pub fn macro_f1(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (0..self.n).map(|k| self.f1(k)).sum::<f64>() / self.n as f64
    }

    /// Cohen's kappa; defined as 1 when chance agreement is already perfect
    /// and the predictions agree, 0 otherwise.
    pub fn kappa(&self) -> f64 {
        let total = self.total() as f64;
        if total == 0.0 {
            return 0.0;
        }
        let p_o = self.trace() as f64 / total;
        let p_e: f64 =
            (0..self.n).map(|k| self.row_sum(k) as f64 * self.col_sum(k) as f64).sum::<f64>() / (total * total);
        if (1.0 - p_e).abs() < f64::EPSILON {
            return if p_o == 1.0 { 1.0 } else { 0.0 };
        }
        (p_o - p_e) / (1.0 - p_e)
    }

    pub fn to_csv(&self, labels: &[String]) -> String {
        let name = |k: usize| labels.get(k).cloned().unwrap_or_else(|| k.to_string());
        let mut out = String::from("true\\pred");
        for k in 0..self.n {
            out.push(',');
            out.push_str(&name(k));
        }
        out.push('\n');
        for i in 0..self.n {
            out.push_str(&name(i));
            for j in 0..self.n {
                out.push_str(&format!(",{}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub confusion: Confusion,
    pub per_snr: BTreeMap<i32, Confusion>,
    pub overall_acc: f64,
    pub macro_f1: f64,
    pub kappa: f64,
}

impl MetricsReport {
    pub fn from_predictions(n_classes: usize, truth: &[usize], pred: &[usize], snr_db: &[i32]) -> Self {
        assert!(truth.len() == pred.len() && truth.len() == snr_db.len(), "parallel slices");
        let mut confusion = Confusion::new(n_classes);
        let mut per_snr: BTreeMap<i32, Confusion> = BTreeMap::new();
        for ((&t, &p), &s) in truth.iter().zip(pred).zip(snr_db) {
            confusion.add(t, p);
            per_snr.entry(s).or_insert_with(|| Confusion::new(n_classes)).add(t, p);
        }
        Self {
            overall_acc: confusion.accuracy(),
            macro_f1: confusion.macro_f1(),
            kappa: confusion.kappa(),
            confusion,
            per_snr,
        }
    }

    pub fn per_snr_acc(&self) -> BTreeMap<i32, f64> {
        self.per_snr.iter().map(|(&s, c)| (s, c.accuracy())).collect()
    }

    /// Best per-SNR accuracy and the SNR where it occurs (lowest SNR on ties).
    pub fn highest_acc(&self) -> Option<(i32, f64)> {
        self.per_snr_acc().into_iter().fold(None, |best, (s, a)| match best {
            Some((_, b)) if b >= a => best,
            _ => Some((s, a)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_two_class_case() {
        let c = Confusion::from_rows(&[vec![50, 0], vec![25, 25]]);
        assert_eq!(c.accuracy(), 0.75);
        assert!((c.f1(0) - 0.8).abs() < 1e-12);
        assert!((c.f1(1) - 2.0 / 3.0).abs() < 1e-12);
        assert!((c.macro_f1() - 0.733_333_333).abs() < 1e-6);
        assert!((c.kappa() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let perfect = Confusion::from_rows(&[vec![5, 0, 0], vec![0, 4, 0], vec![0, 0, 1]]);
        assert_eq!((perfect.accuracy(), perfect.macro_f1(), perfect.kappa()), (1.0, 1.0, 1.0));
        let constant = Confusion::from_rows(&[vec![10, 0], vec![10, 0]]);
        assert_eq!(constant.kappa(), 0.0);
    }

    #[test]
    fn absent_class_drags_macro_f1() {
        let c = Confusion::from_rows(&[vec![3, 0, 0], vec![0, 3, 0], vec![0, 0, 0]]);
        assert!((c.macro_f1() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn report_splits_by_snr() {
        let r = MetricsReport::from_predictions(2, &[0, 1, 0, 1], &[0, 0, 0, 1], &[-10, -10, 10, 10]);
        assert_eq!(r.per_snr_acc()[&-10], 0.5);
        assert_eq!(r.per_snr_acc()[&10], 1.0);
        assert_eq!(r.highest_acc(), Some((10, 1.0)));
        assert_eq!(r.overall_acc, 0.75);
    }
}
