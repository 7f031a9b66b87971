use super::tape::{Op, Tape, Var};
use super::tensor::Tensor;
use super::{NumericsError, Result};

impl Tape {
    /// Mean softmax cross-entropy of `logits: [B, C]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let shape = self.shape(logits);
        let &[batch, classes] = shape else {
            return Err(NumericsError::shape("cross_entropy", format!("logits {shape:?} are not [B, C]")));
        };
        if labels.len() != batch {
            return Err(NumericsError::shape("cross_entropy", format!("{} labels for batch {batch}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(NumericsError::arg("cross_entropy", format!("label {bad} with {classes} classes")));
        }
        let data = self.value(logits).data();
        let mut probs = Vec::with_capacity(data.len());
        let mut total = 0.0;
        for (row, &label) in data.chunks(classes).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let loss = Tensor::scalar(total / batch as f64);
        Ok(self.push(loss, Op::CrossEntropy { logits, labels: labels.to_vec(), probs }))
    }
}

pub(crate) fn cross_entropy_backward(labels: &[usize], probs: &[f64], shape: &[usize], g0: f64) -> Vec<f64> {
    let (batch, classes) = (shape[0], shape[1]);
    let scale = g0 / batch as f64;
    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
    for (b, &l) in labels.iter().enumerate() {
        d[b * classes + l] -= scale;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::zeros(&[3, 4]));
        let l = tape.cross_entropy(x, &[0, 1, 3]).unwrap();
        assert!((tape.value(l).data()[0] - 4f64.ln()).abs() < 1e-14);
        let g = tape.backward(l).unwrap().get(x).unwrap();
        assert!((g.at(&[0, 0]) - (0.25 - 1.0) / 3.0).abs() < 1e-14);
        assert!((g.at(&[0, 1]) - 0.25 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn large_logits_stay_finite() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2], vec![1000.0, -1000.0]).unwrap());
        let l = tape.cross_entropy(x, &[1]).unwrap();
        assert!((tape.value(l).data()[0] - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        assert!(tape.cross_entropy(x, &[2]).is_err());
    }
}
