//! Distribution families: log-densities and seeded sampling.

use rand::Rng;
use rand_distr::Distribution;

use super::rng::RngStream;
use super::special::{ln_gamma, logsumexp};
use crate::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_4;

/// Parameterized distribution family.
///
/// Continuous families are parameterized as they appear in the generative
/// models: Normal and Log-Normal by mean and variance (of the underlying
/// normal for Log-Normal), Gamma by shape and rate.
#[derive(Clone, Debug, PartialEq)]
pub enum DistFamily {
    Normal { mean: f64, var: f64 },
    LogNormal { mean: f64, var: f64 },
    Gamma { shape: f64, rate: f64 },
    Beta { alpha: f64, beta: f64 },
    Bernoulli { p: f64 },
    Categorical { logits: Vec<f64> },
}

impl DistFamily {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &'static str, value: f64| Error::Domain {
            op: "DistFamily",
            what,
            value,
        };
        match self {
            DistFamily::Normal { mean, var } | DistFamily::LogNormal { mean, var } => {
                if !mean.is_finite() {
                    return Err(bad("mean", *mean));
                }
                if !(*var > 0.0) || !var.is_finite() {
                    return Err(bad("var", *var));
                }
            }
            DistFamily::Gamma { shape, rate } => {
                if !(*shape > 0.0) || !shape.is_finite() {
                    return Err(bad("shape", *shape));
                }
                if !(*rate > 0.0) || !rate.is_finite() {
                    return Err(bad("rate", *rate));
                }
            }
            DistFamily::Beta { alpha, beta } => {
                if !(*alpha > 0.0) || !alpha.is_finite() {
                    return Err(bad("alpha", *alpha));
                }
                if !(*beta > 0.0) || !beta.is_finite() {
                    return Err(bad("beta", *beta));
                }
            }
            DistFamily::Bernoulli { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(bad("p", *p));
                }
            }
            DistFamily::Categorical { logits } => {
                if logits.is_empty() {
                    return Err(bad("logits.len", 0.0));
                }
                for &l in logits {
                    if !l.is_finite() {
                        return Err(bad("logit", l));
                    }
                }
            }
        }
        Ok(())
    }

    /// Natural-log density (mass for the discrete families) at `x`.
    ///
    /// Discrete families take `x` as an integral-valued f64 index. Points
    /// outside the support signal a domain error carrying the offending
    /// value.
    pub fn logpdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        let oob = |value: f64| Error::Domain {
            op: "logpdf",
            what: "x",
            value,
        };
        match self {
            DistFamily::Normal { mean, var } => {
                if !x.is_finite() {
                    return Err(oob(x));
                }
                let d = x - mean;
                Ok(-0.5 * (LN_2PI + var.ln()) - 0.5 * d * d / var)
            }
            DistFamily::LogNormal { mean, var } => {
                if !(x > 0.0) || !x.is_finite() {
                    return Err(oob(x));
                }
                let lx = x.ln();
                let d = lx - mean;
                Ok(-lx - 0.5 * (LN_2PI + var.ln()) - 0.5 * d * d / var)
            }
            DistFamily::Gamma { shape, rate } => {
                if !(x > 0.0) || !x.is_finite() {
                    return Err(oob(x));
                }
                Ok(shape * rate.ln() - ln_gamma(*shape) + (shape - 1.0) * x.ln() - rate * x)
            }
            DistFamily::Beta { alpha, beta } => {
                if !(x > 0.0 && x < 1.0) {
                    return Err(oob(x));
                }
                let ln_b = ln_gamma(*alpha) + ln_gamma(*beta) - ln_gamma(alpha + beta);
                Ok((alpha - 1.0) * x.ln() + (beta - 1.0) * (1.0 - x).ln() - ln_b)
            }
            DistFamily::Bernoulli { p } => {
                if x == 1.0 {
                    Ok(p.ln())
                } else if x == 0.0 {
                    Ok((1.0 - p).ln())
                } else {
                    Err(oob(x))
                }
            }
            DistFamily::Categorical { logits } => {
                let k = x as usize;
                if x.fract() != 0.0 || x < 0.0 || k >= logits.len() {
                    return Err(oob(x));
                }
                Ok(logits[k] - logsumexp(logits))
            }
        }
    }

    /// Draw a variate (index as f64 for the discrete families).
    pub fn sample(&self, rng: &mut RngStream) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            DistFamily::Normal { mean, var } => mean + var.sqrt() * standard_normal(rng),
            DistFamily::LogNormal { mean, var } => {
                (mean + var.sqrt() * standard_normal(rng)).exp()
            }
            DistFamily::Gamma { shape, rate } => {
                let g = rand_distr::Gamma::new(*shape, 1.0 / rate).expect("validated params");
                g.sample(rng)
            }
            DistFamily::Beta { alpha, beta } => {
                let b = rand_distr::Beta::new(*alpha, *beta).expect("validated params");
                b.sample(rng)
            }
            DistFamily::Bernoulli { p } => {
                if rng.random::<f64>() < *p {
                    1.0
                } else {
                    0.0
                }
            }
            DistFamily::Categorical { logits } => {
                let lse = logsumexp(logits);
                let u: f64 = rng.random();
                let mut cum = 0.0;
                let mut idx = logits.len() - 1;
                for (k, &l) in logits.iter().enumerate() {
                    cum += (l - lse).exp();
                    if u < cum {
                        idx = k;
                        break;
                    }
                }
                idx as f64
            }
        })
    }
}

/// Standard normal draw.
pub fn standard_normal(rng: &mut RngStream) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

/// KL(N(mean, var) ‖ N(mean0, var0)).
pub fn kl_normal(mean: f64, var: f64, mean0: f64, var0: f64) -> Result<f64> {
    for (what, v) in [("var", var), ("var0", var0)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain {
                op: "kl_normal",
                what,
                value: v,
            });
        }
    }
    let d = mean - mean0;
    Ok(0.5 * (var / var0 + d * d / var0 - 1.0 + (var0 / var).ln()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn normal_logpdf_standard_at_zero() {
        let d = DistFamily::Normal {
            mean: 0.0,
            var: 1.0,
        };
        assert!(is_close(d.logpdf(0.0).unwrap(), -0.918_938_5, 1e-7));
    }

    #[test]
    fn categorical_uniform_pair() {
        let d = DistFamily::Categorical {
            logits: vec![0.0, 0.0],
        };
        assert!(is_close(d.logpdf(0.0).unwrap(), -0.693_147_2, 1e-7));
    }

    #[test]
    fn gamma_logpdf_hand_value() {
        // density 4x e^{−2x} at x=1
        let d = DistFamily::Gamma {
            shape: 2.0,
            rate: 2.0,
        };
        assert!(is_close(d.logpdf(1.0).unwrap(), -0.613_705_6, 1e-7));
    }

    #[test]
    fn lognormal_logpdf_at_one() {
        let d = DistFamily::LogNormal {
            mean: 0.0,
            var: 1.0,
        };
        assert!(is_close(d.logpdf(1.0).unwrap(), -0.918_938_5, 1e-7));
    }

    #[test]
    fn out_of_support_is_domain_error() {
        let g = DistFamily::Gamma {
            shape: 2.0,
            rate: 2.0,
        };
        match g.logpdf(-1.0) {
            Err(Error::Domain { value, .. }) => assert_eq!(value, -1.0),
            other => panic!("expected domain error, got {other:?}"),
        }
        let c = DistFamily::Categorical {
            logits: vec![0.0, 0.0],
        };
        assert!(c.logpdf(2.0).is_err());
        assert!(c.logpdf(0.5).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(DistFamily::Normal {
            mean: 0.0,
            var: -1.0
        }
        .validate()
        .is_err());
        assert!(DistFamily::Gamma {
            shape: 0.0,
            rate: 1.0
        }
        .validate()
        .is_err());
        assert!(DistFamily::Categorical {
            logits: vec![f64::INFINITY]
        }
        .validate()
        .is_err());
    }

    #[test]
    fn degenerate_normal_sample_collapses_to_mean() {
        let d = DistFamily::Normal {
            mean: 3.25,
            var: 1e-12,
        };
        let mut rng = RngStream::new(42, 0);
        for _ in 0..16 {
            let x = d.sample(&mut rng).unwrap();
            assert!((x - 3.25).abs() < 1e-5);
        }
    }

    #[test]
    fn bernoulli_one_is_sure() {
        let d = DistFamily::Bernoulli { p: 1.0 };
        let mut rng = RngStream::new(0, 0);
        for _ in 0..8 {
            assert_eq!(d.sample(&mut rng).unwrap(), 1.0);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let d = DistFamily::Gamma {
            shape: 0.5,
            rate: 1.0,
        };
        let mut a = RngStream::new(9, 4);
        let mut b = RngStream::new(9, 4);
        for _ in 0..16 {
            assert_eq!(d.sample(&mut a).unwrap(), d.sample(&mut b).unwrap());
        }
    }

    #[test]
    fn kl_normal_frozen_values() {
        assert_eq!(kl_normal(0.0, 1.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(is_close(kl_normal(1.0, 1.0, 0.0, 1.0).unwrap(), 0.5, 1e-15));
        // ½(σ² + μ² − 1 − ln σ²) at σ²=0.25
        assert!(is_close(
            kl_normal(0.0, 0.25, 0.0, 1.0).unwrap(),
            0.318_147_2,
            1e-7
        ));
    }

    #[test]
    fn kl_normal_rejects_bad_variance() {
        assert!(kl_normal(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(kl_normal(0.0, 1.0, 0.0, -2.0).is_err());
    }
}
