use crate::error::{Error, Result};
use crate::nn::softmax;

use super::critical::{CriticalSet, HiddenBank};

/// Scoring vector and bias of the attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w: Vec<f64>,
    pub b: f64,
}

impl AttentionParams {
    /// `tanh(w·h + b)`.
    pub fn score(&self, h: &[f64]) -> f64 {
        (self.w.iter().zip(h).map(|(w, h)| w * h).sum::<f64>() + self.b).tanh()
    }
}

/// Softmax of the scores of `states`.
pub fn attention_over<S: AsRef<[f64]>>(states: &[S], ap: &AttentionParams) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(Error::InvalidArgument(
            "attention over an empty bank".into(),
        ));
    }
    let v: Vec<f64> = states.iter().map(|h| ap.score(h.as_ref())).collect();
    Ok(softmax(&v))
}

pub fn attention_weights(bank: &HiddenBank, ap: &AttentionParams) -> Result<Vec<f64>> {
    attention_over(bank.states(), ap)
}

/// Attention-weighted sum of `states`.
pub fn combine<S: AsRef<[f64]>>(states: &[S], alpha: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; states.first().map_or(0, |h| h.as_ref().len())];
    for (h, &a) in states.iter().zip(alpha) {
        for (o, v) in out.iter_mut().zip(h.as_ref()) {
            *o += a * v;
        }
    }
    out
}

/// `h_t` off the critical set; otherwise attention over the bank entries at
/// or before `t`, which must include `t` itself.
pub fn aa_layer(
    h_t: &[f64],
    t: usize,
    critical: &CriticalSet,
    bank: &HiddenBank,
    ap: &AttentionParams,
) -> Result<Vec<f64>> {
    if !critical.contains(t) {
        return Ok(h_t.to_vec());
    }
    if bank.get(t).is_none() {
        return Err(Error::InvalidArgument(format!(
            "critical step {t} is missing from the hidden bank"
        )));
    }
    let states = bank.before(t + 1);
    let alpha = attention_over(states, ap)?;
    Ok(combine(states, &alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ap(w: Vec<f64>, b: f64) -> AttentionParams {
        AttentionParams { w, b }
    }

    #[test]
    fn weights() {
        let mut bank = HiddenBank::new();
        bank.push(0, vec![0.3, -0.1]).unwrap();
        assert_eq!(
            attention_weights(&bank, &ap(vec![1.0, 2.0], 0.1)).unwrap(),
            vec![1.0]
        );
        bank.push(4, vec![0.3, -0.1]).unwrap();
        assert_eq!(
            attention_weights(&bank, &ap(vec![1.0, 2.0], 0.1)).unwrap(),
            vec![0.5, 0.5]
        );
        assert!(attention_weights(&HiddenBank::new(), &ap(vec![1.0], 0.0)).is_err());
    }

    #[test]
    fn closed_form_softmax() {
        // w·h + b = atanh(ln 2) for the first entry and 0 for the second.
        let target = 2f64.ln().atanh();
        let mut bank = HiddenBank::new();
        bank.push(1, vec![target]).unwrap();
        bank.push(2, vec![0.0]).unwrap();
        let a = attention_weights(&bank, &ap(vec![1.0], 0.0)).unwrap();
        assert!((a[0] - 2.0 / 3.0).abs() < 1e-12 && (a[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn layer_branches() {
        let p = ap(vec![0.7, -0.4], 0.2);
        let h = vec![0.25, -0.5];
        let mut bank = HiddenBank::new();
        let none = CriticalSet::from_flags(&[false; 4]);
        assert_eq!(aa_layer(&h, 2, &none, &bank, &p).unwrap(), h);

        let j = CriticalSet::from_flags(&[false, true, false, true]);
        assert!(aa_layer(&h, 1, &j, &bank, &p).is_err());
        bank.push(1, h.clone()).unwrap();
        assert_eq!(aa_layer(&h, 1, &j, &bank, &p).unwrap(), h);
        bank.push(3, h.clone()).unwrap();
        let out = aa_layer(&h, 3, &j, &bank, &p).unwrap();
        for (a, b) in out.iter().zip(&h) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
