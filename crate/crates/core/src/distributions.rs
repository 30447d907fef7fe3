//! Log-densities, reparameterised sampling and closed-form divergences for
//! the diagonal Gaussian, categorical and Bernoulli families.
//!
//! All quantities are in nats and are returned per row (shape `[n]`) so
//! callers decide how to reduce over the batch. Priors are fixed: the style
//! prior is a standard normal and the label prior is uniform over `K`.

use alloc::format;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// Diagonal Gaussian over `n×D` rows, parameterised by mean and log standard
/// deviation.
#[derive(Debug, Clone, Copy)]
pub struct GaussianParams {
    pub mu: Var,
    pub log_sigma: Var,
}

impl GaussianParams {
    pub fn new(tape: &Tape, mu: Var, log_sigma: Var) -> Result<Self> {
        if tape.shape(mu) != tape.shape(log_sigma) || tape.shape(mu).rank() != 2 {
            return Err(Error::Dimension {
                op: "gaussian",
                lhs: tape.shape(mu).clone(),
                rhs: tape.shape(log_sigma).clone(),
            });
        }
        Ok(GaussianParams { mu, log_sigma })
    }
}

/// Categorical over `K` classes, one normalised row of log-probabilities per
/// datum.
#[derive(Debug, Clone, Copy)]
pub struct CategoricalParams {
    pub log_probs: Var,
}

impl CategoricalParams {
    pub fn from_logits(tape: &mut Tape, logits: Var) -> Result<Self> {
        Ok(CategoricalParams {
            log_probs: tape.log_softmax(logits)?,
        })
    }

    pub fn num_classes(&self, tape: &Tape) -> usize {
        tape.shape(self.log_probs).dims()[1]
    }

    /// Row probabilities, differentiable.
    pub fn probs(&self, tape: &mut Tape) -> Result<Var> {
        tape.exp(self.log_probs)
    }
}

/// `mu + exp(log_sigma) ⊙ noise`, with `noise` drawn by the caller from a
/// standard normal.
pub fn gaussian_sample(tape: &mut Tape, p: GaussianParams, noise: Var) -> Result<Var> {
    let sigma = tape.exp(p.log_sigma)?;
    let scaled = tape.mul(sigma, noise)?;
    tape.add(p.mu, scaled)
}

/// `KL(q ‖ N(0, I))` per row: `Σ_d ½(μ² + σ² − 1 − 2 log σ)`.
pub fn gaussian_kl_standard(tape: &mut Tape, p: GaussianParams) -> Result<Var> {
    let mu2 = tape.mul(p.mu, p.mu)?;
    let two_ls = tape.scale(p.log_sigma, 2.0);
    let var = tape.exp(two_ls)?;
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, two_ls)?;
    let rows = tape.sum_rows(b)?;
    let d = tape.shape(p.mu).dims()[1] as f64;
    let minus_d = tape.constant(crate::Tensor::scalar(-d));
    let shifted = tape.add(rows, minus_d)?;
    Ok(tape.scale(shifted, 0.5))
}

/// `Σ_k q_k log q_k` per row. Entries that underflow to probability zero
/// contribute exactly zero.
fn neg_entropy(tape: &mut Tape, p: CategoricalParams) -> Result<Var> {
    let probs = p.probs(tape)?;
    let terms = tape.mul(probs, p.log_probs)?;
    tape.sum_rows(terms)
}

/// `KL(q ‖ Uniform(K))` per row: `Σ_k q_k (log q_k + log K)`.
pub fn categorical_kl_uniform(tape: &mut Tape, p: CategoricalParams) -> Result<Var> {
    let k = p.num_classes(tape) as f64;
    let ne = neg_entropy(tape, p)?;
    let log_k = tape.constant(crate::Tensor::scalar(libm::log(k)));
    tape.add(ne, log_k)
}

/// `−Σ_k q_k log q_k` per row.
pub fn categorical_entropy(tape: &mut Tape, p: CategoricalParams) -> Result<Var> {
    let ne = neg_entropy(tape, p)?;
    Ok(tape.neg(ne))
}

/// Bernoulli log-likelihood of intensities `x ∈ [0, 1]` under pixel logits,
/// summed per row. Evaluated as `−[x·softplus(−l) + (1 − x)·softplus(l)]`,
/// which is finite for finite logits and keeps full relative precision when
/// the likelihood is close to one.
pub fn bernoulli_log_prob(tape: &mut Tape, x: Var, logits: Var) -> Result<Var> {
    if let Some((i, v)) = tape
        .value(x)
        .data()
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::Domain {
            op: "bernoulli_log_prob",
            detail: format!("intensity {v} at element {i} outside [0, 1]"),
        });
    }
    let neg_logits = tape.neg(logits);
    let on = tape.softplus(neg_logits);
    let off = tape.softplus(logits);
    let one = tape.constant(crate::Tensor::scalar(1.0));
    let complement = tape.sub(one, x)?;
    let a = tape.mul(x, on)?;
    let b = tape.mul(complement, off)?;
    let nll = tape.add(a, b)?;
    let rows = tape.sum_rows(nll)?;
    Ok(tape.neg(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn gauss(tape: &mut Tape, mu: &[f64], ls: &[f64]) -> GaussianParams {
        let d = mu.len();
        let m = tape.leaf(Tensor::new([1, d], mu.to_vec()).unwrap());
        let s = tape.leaf(Tensor::new([1, d], ls.to_vec()).unwrap());
        GaussianParams::new(tape, m, s).unwrap()
    }

    fn cat(tape: &mut Tape, probs: &[f64]) -> CategoricalParams {
        let logs: alloc::vec::Vec<f64> = probs
            .iter()
            .map(|&p| if p > 0.0 { libm::log(p) } else { -1e4 })
            .collect();
        let logits = tape.leaf(Tensor::new([1, probs.len()], logs).unwrap());
        CategoricalParams::from_logits(tape, logits).unwrap()
    }

    #[test]
    fn sample_passthrough_and_mean() {
        let mut t = Tape::new();
        let p = gauss(&mut t, &[0.0, 0.0], &[0.0, 0.0]);
        let eps = t.constant(Tensor::new([1, 2], alloc::vec![0.3, -1.2]).unwrap());
        let z = gaussian_sample(&mut t, p, eps).unwrap();
        assert_eq!(t.value(z).data(), &[0.3, -1.2]);

        let p = gauss(&mut t, &[1.5, -2.0], &[0.7, 0.1]);
        let zero = t.constant(Tensor::zeros([1, 2]));
        let z = gaussian_sample(&mut t, p, zero).unwrap();
        assert_eq!(t.value(z).data(), &[1.5, -2.0]);
    }

    #[test]
    fn gaussian_kl_closed_forms() {
        let mut t = Tape::new();
        let p = gauss(&mut t, &[0.0], &[0.0]);
        let kl = gaussian_kl_standard(&mut t, p).unwrap();
        assert_eq!(t.value(kl).item(), 0.0);

        let p = gauss(&mut t, &[1.0], &[0.0]);
        let kl = gaussian_kl_standard(&mut t, p).unwrap();
        assert!((t.value(kl).item() - 0.5).abs() < 1e-15);

        let p = gauss(&mut t, &[0.0], &[1.0]);
        let kl = gaussian_kl_standard(&mut t, p).unwrap();
        let expected = 0.5 * (libm::exp(2.0) - 3.0);
        assert!((t.value(kl).item() - expected).abs() < 1e-12);
        assert!((t.value(kl).item() - 2.19453).abs() < 1e-5);
    }

    #[test]
    fn categorical_closed_forms() {
        let mut t = Tape::new();
        let uniform = cat(&mut t, &[0.1; 10]);
        let kl = categorical_kl_uniform(&mut t, uniform).unwrap();
        assert!(t.value(kl).item().abs() < 1e-12);
        let h = categorical_entropy(&mut t, uniform).unwrap();
        assert!((t.value(h).item() - libm::log(10.0)).abs() < 1e-12);

        let mut onehot = [0.0; 10];
        onehot[3] = 1.0;
        let dirac = cat(&mut t, &onehot);
        let kl = categorical_kl_uniform(&mut t, dirac).unwrap();
        assert!((t.value(kl).item() - 2.302585).abs() < 1e-6);
        let h = categorical_entropy(&mut t, dirac).unwrap();
        assert!(t.value(h).item().abs() < 1e-12);

        // direct summation: 0.75 ln 1.5 + 0.25 ln 0.5
        let skew = cat(&mut t, &[0.75, 0.25]);
        let kl = categorical_kl_uniform(&mut t, skew).unwrap();
        assert!((t.value(kl).item() - 0.130812).abs() < 1e-6);

        // −(0.5 ln 0.5 + 0.3 ln 0.3 + 0.2 ln 0.2)
        let three = cat(&mut t, &[0.5, 0.3, 0.2]);
        let h = categorical_entropy(&mut t, three).unwrap();
        assert!((t.value(h).item() - 1.02965).abs() < 1e-5);
    }

    #[test]
    fn bernoulli_values() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new([1, 1], alloc::vec![1.0]).unwrap());
        let l0 = t.constant(Tensor::new([1, 1], alloc::vec![0.0]).unwrap());
        let lp = bernoulli_log_prob(&mut t, x, l0).unwrap();
        assert!((t.value(lp).item() - libm::log(0.5)).abs() < 1e-15);

        let half = t.constant(Tensor::new([1, 1], alloc::vec![0.5]).unwrap());
        let lp = bernoulli_log_prob(&mut t, half, l0).unwrap();
        assert!((t.value(lp).item() - libm::log(0.5)).abs() < 1e-15);

        let l30 = t.constant(Tensor::new([1, 1], alloc::vec![30.0]).unwrap());
        let lp = bernoulli_log_prob(&mut t, x, l30).unwrap();
        let oracle = -libm::log1p(libm::exp(-30.0));
        assert!((t.value(lp).item() - oracle).abs() < 1e-25);
        assert!((t.value(lp).item() + 9.36e-14).abs() < 1e-15);
    }

    #[test]
    fn bernoulli_rejects_out_of_range_intensity() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new([1, 2], alloc::vec![0.5, 1.2]).unwrap());
        let l = t.constant(Tensor::zeros([1, 2]));
        assert!(matches!(
            bernoulli_log_prob(&mut t, x, l),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn gaussian_shape_mismatch() {
        let mut t = Tape::new();
        let m = t.leaf(Tensor::zeros([2, 3]));
        let s = t.leaf(Tensor::zeros([2, 2]));
        assert!(GaussianParams::new(&t, m, s).is_err());
    }
}
