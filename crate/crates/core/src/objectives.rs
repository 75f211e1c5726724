//! Joint Dice + soft cross-entropy loss over per-pixel class probabilities.
//!
//! With `N` pixels and `K` classes, `p` the softmax output and `y` the one-hot
//! target:
//!
//! * dice: `1 - (2/N) * sum_n sum_k p*y / (p + y)`, a `0/0` term counts as 0
//! * soft CE: `-(1/N) * sum_n sum_k y * ln(max(p, 1e-8))`
//! * joint: dice + soft CE, unweighted

use crate::error::{Error, Result};
use crate::graph::{CustomBackward, Graph, NodeId};
use crate::tensor::{Scalar, Tensor};

/// Clamp applied to probabilities inside the logarithm only.
pub const CE_CLAMP: f64 = 1e-8;

/// Softmax probabilities `[N, K]` and one-hot targets `[N, K]`.
#[derive(Clone, Debug)]
pub struct PredictionBatch<T> {
    pub probs: Tensor<T>,
    pub onehot: Tensor<T>,
}

impl<T: Scalar> PredictionBatch<T> {
    /// Checks shapes, row sums and one-hot structure.
    pub fn new(probs: Tensor<T>, onehot: Tensor<T>) -> Result<Self> {
        check_pair(&probs, &onehot)?;
        let k = probs.shape()[1];
        for (row, t) in probs.data().chunks(k).zip(onehot.data().chunks(k)) {
            let s: f64 = row.iter().map(|v| v.as_f64()).sum();
            if (s - 1.0).abs() > 1e-5 || row.iter().any(|v| *v < T::zero()) {
                return Err(Error::invalid(format!("probability row sums to {s}")));
            }
            let ones = t.iter().filter(|v| **v == T::one()).count();
            let zeros = t.iter().filter(|v| **v == T::zero()).count();
            if ones != 1 || zeros != k - 1 {
                return Err(Error::invalid("target row is not one-hot"));
            }
        }
        Ok(PredictionBatch { probs, onehot })
    }

    /// One-hot targets from class labels.
    pub fn from_labels(probs: Tensor<T>, labels: &[u8]) -> Result<Self> {
        let onehot = onehot::<T>(labels, probs.shape().get(1).copied().unwrap_or(0))?;
        Self::new(probs, onehot)
    }

    pub fn len(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn onehot<T: Scalar>(labels: &[u8], k: usize) -> Result<Tensor<T>> {
    if labels.is_empty() || k == 0 {
        return Err(Error::invalid("empty label set"));
    }
    let mut data = vec![T::zero(); labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= k {
            return Err(Error::invalid(format!("label {l} outside [0, {k})")));
        }
        data[i * k + l as usize] = T::one();
    }
    Tensor::from_vec(&[labels.len(), k], data)
}

fn check_pair<T: Scalar>(probs: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if probs.rank() != 2 || probs.shape() != target.shape() {
        return Err(Error::shape(format!(
            "loss expects matching [N, K] inputs, got {:?} and {:?}",
            probs.shape(),
            target.shape()
        )));
    }
    Ok(())
}

fn dice_value<T: Scalar>(p: &[T], y: &[T], n: usize) -> T {
    let mut acc = T::zero();
    for (&pv, &yv) in p.iter().zip(y) {
        let d = pv + yv;
        if d != T::zero() {
            acc = acc + pv * yv / d;
        }
    }
    T::one() - T::from_f64(2.0 / n as f64) * acc
}

fn ce_value<T: Scalar>(p: &[T], y: &[T], n: usize) -> T {
    let eps = T::from_f64(CE_CLAMP);
    let mut acc = T::zero();
    for (&pv, &yv) in p.iter().zip(y) {
        if yv != T::zero() {
            acc = acc + yv * pv.max(eps).ln();
        }
    }
    -acc / T::from_f64(n as f64)
}

pub fn dice_loss<T: Scalar>(batch: &PredictionBatch<T>) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    Ok(dice_value(batch.probs.data(), batch.onehot.data(), batch.len()))
}

pub fn soft_ce_loss<T: Scalar>(batch: &PredictionBatch<T>) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    Ok(ce_value(batch.probs.data(), batch.onehot.data(), batch.len()))
}

pub fn joint_loss<T: Scalar>(batch: &PredictionBatch<T>) -> Result<T> {
    Ok(dice_loss(batch)? + soft_ce_loss(batch)?)
}

struct DiceRule;

impl<T: Scalar> CustomBackward<T> for DiceRule {
    fn backward(&self, inputs: &[&Tensor<T>], _o: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let (p, y) = (inputs[0], inputs[1]);
        let scale = -T::from_f64(2.0 / p.shape()[0] as f64) * grad.data()[0];
        // d/dp [p y / (p + y)] = y^2 / (p + y)^2, symmetric in y
        let partial = |num: &Tensor<T>| -> Tensor<T> {
            let data = p
                .data()
                .iter()
                .zip(y.data())
                .zip(num.data())
                .map(|((&pv, &yv), &nv)| {
                    let d = pv + yv;
                    if d == T::zero() {
                        T::zero()
                    } else {
                        scale * nv * nv / (d * d)
                    }
                })
                .collect();
            Tensor::from_parts(p.shape().to_vec(), data)
        };
        Ok(vec![needs[0].then(|| partial(y)), needs[1].then(|| partial(p))])
    }
}

struct CeRule;

impl<T: Scalar> CustomBackward<T> for CeRule {
    fn backward(&self, inputs: &[&Tensor<T>], _o: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let (p, y) = (inputs[0], inputs[1]);
        let eps = T::from_f64(CE_CLAMP);
        let scale = -grad.data()[0] / T::from_f64(p.shape()[0] as f64);
        let gp = needs[0].then(|| {
            let data = p
                .data()
                .iter()
                .zip(y.data())
                .map(|(&pv, &yv)| if pv > eps { scale * yv / pv } else { T::zero() })
                .collect();
            Tensor::from_parts(p.shape().to_vec(), data)
        });
        let gy = needs[1].then(|| p.map(|pv| scale * pv.max(eps).ln()));
        Ok(vec![gp, gy])
    }
}

impl<T: Scalar> Graph<T> {
    /// Dice loss of `probs: [N, K]` against `target: [N, K]`.
    pub fn dice_loss(&mut self, probs: NodeId, target: NodeId) -> Result<NodeId> {
        self.check(probs)?;
        self.check(target)?;
        let (p, y) = (self.value(probs), self.value(target));
        check_pair(p, y)?;
        let v = dice_value(p.data(), y.data(), p.shape()[0]);
        self.push_custom("dice_loss", vec![probs, target], Tensor::scalar(v), Box::new(DiceRule))
    }

    /// Soft cross-entropy of `probs: [N, K]` against `target: [N, K]`.
    pub fn soft_ce_loss(&mut self, probs: NodeId, target: NodeId) -> Result<NodeId> {
        self.check(probs)?;
        self.check(target)?;
        let (p, y) = (self.value(probs), self.value(target));
        check_pair(p, y)?;
        let v = ce_value(p.data(), y.data(), p.shape()[0]);
        self.push_custom("soft_ce_loss", vec![probs, target], Tensor::scalar(v), Box::new(CeRule))
    }

    pub fn joint_loss(&mut self, probs: NodeId, target: NodeId) -> Result<NodeId> {
        let d = self.dice_loss(probs, target)?;
        let c = self.soft_ce_loss(probs, target)?;
        self.add(d, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_batch(n: usize, k: usize) -> PredictionBatch<f64> {
        let probs = Tensor::from_vec(&[n, k], vec![1.0 / k as f64; n * k]).unwrap();
        let labels: Vec<u8> = (0..n).map(|i| (i % k) as u8).collect();
        PredictionBatch::from_labels(probs, &labels).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let labels = [0u8, 2, 1, 1];
        let y = onehot::<f64>(&labels, 3).unwrap();
        let b = PredictionBatch::new(y.clone(), y).unwrap();
        assert!(dice_loss(&b).unwrap().abs() <= 1e-7);
        assert!(soft_ce_loss(&b).unwrap() <= 1e-7);
        assert!(joint_loss(&b).unwrap().abs() <= 1e-7);
    }

    #[test]
    fn uniform_prediction_k6() {
        let b = uniform_batch(12, 6);
        assert!((dice_loss(&b).unwrap() - 5.0 / 7.0).abs() < 1e-12);
        assert!((soft_ce_loss(&b).unwrap() - 6f64.ln()).abs() < 1e-12);
        let j = joint_loss(&b).unwrap();
        assert_eq!(j, dice_loss(&b).unwrap() + soft_ce_loss(&b).unwrap());
        assert!((j - 2.5061).abs() < 1e-4);
    }

    #[test]
    fn zero_on_true_class_and_half() {
        let probs = Tensor::<f64>::from_f64s(&[1, 2], &[0.0, 1.0]).unwrap();
        let b = PredictionBatch::from_labels(probs, &[0]).unwrap();
        assert_eq!(dice_loss(&b).unwrap(), 1.0);
        let probs = Tensor::<f64>::from_f64s(&[1, 2], &[0.5, 0.5]).unwrap();
        let b = PredictionBatch::from_labels(probs, &[0]).unwrap();
        assert!((soft_ce_loss(&b).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_batches() {
        let probs = Tensor::<f64>::from_f64s(&[1, 2], &[0.7, 0.7]).unwrap();
        assert!(PredictionBatch::from_labels(probs, &[0]).is_err());
        let probs = Tensor::<f64>::from_f64s(&[1, 2], &[0.5, 0.5]).unwrap();
        assert!(PredictionBatch::from_labels(probs, &[2]).is_err());
        assert!(onehot::<f64>(&[], 3).is_err());
    }

    #[test]
    fn graph_ops_match_batch_values() {
        let b = uniform_batch(6, 3);
        let mut g = Graph::new();
        let p = g.constant(b.probs.clone());
        let y = g.constant(b.onehot.clone());
        let l = g.joint_loss(p, y).unwrap();
        assert_eq!(g.value(l).item().unwrap(), joint_loss(&b).unwrap());
    }
}
