use serde::{Deserialize, Serialize};

use super::{beta::student_t_sf, check_finite, mean, sample_variance, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceModel {
    /// Unequal variances, Welch-Satterthwaite degrees of freedom.
    #[default]
    Welch,
    /// Pooled variance, `n_a + n_b - 2` degrees of freedom.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    #[default]
    TwoSided,
    /// Alternative: mean of `a` is greater than mean of `b`.
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestOptions {
    pub alpha: f64,
    #[serde(default)]
    pub variance: VarianceModel,
    #[serde(default)]
    pub tail: Tail,
}

impl Default for TTestOptions {
    fn default() -> Self {
        TTestOptions {
            alpha: 0.05,
            variance: VarianceModel::Welch,
            tail: Tail::TwoSided,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    /// Infinite for degenerate samples; serialized as `"inf"` / `"-inf"`.
    #[serde(with = "extended_f64")]
    pub t_stat: f64,
    pub df: f64,
    pub p_value: f64,
    pub significant: bool,
    /// Both samples had zero variance; `t`, `p` follow the fixed convention
    /// (equal means: `t = 0`, `p = 1`; different means: `t = ±inf`, `p = 0`).
    #[serde(default)]
    pub degenerate: bool,
}

mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Special(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(v) => Ok(v),
            Repr::Special(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("invalid number {other:?}"))),
            },
        }
    }
}

/// Two-sided Welch t-test at level `alpha`.
pub fn welch_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<TTestResult, StatsError> {
    t_test(
        a,
        b,
        &TTestOptions {
            alpha,
            ..TTestOptions::default()
        },
    )
}

pub fn t_test(a: &[f64], b: &[f64], opts: &TTestOptions) -> Result<TTestResult, StatsError> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(StatsError::DomainError(format!(
            "alpha must lie in (0, 1), got {}",
            opts.alpha
        )));
    }
    for sample in [a, b] {
        if sample.len() < 2 {
            return Err(StatsError::InsufficientData {
                needed: 2,
                got: sample.len(),
            });
        }
        check_finite(sample)?;
    }

    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a), sample_variance(b));

    let (se, df) = match opts.variance {
        VarianceModel::Welch => {
            let (sa, sb) = (va / na, vb / nb);
            let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
            ((sa + sb).sqrt(), df)
        }
        VarianceModel::Pooled => {
            let df = na + nb - 2.0;
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
            ((pooled * (1.0 / na + 1.0 / nb)).sqrt(), df)
        }
    };

    if se == 0.0 {
        let df = na + nb - 2.0;
        let (t_stat, p_value) = if ma == mb {
            (0.0, 1.0)
        } else {
            let t = if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY };
            let p = match opts.tail {
                Tail::TwoSided => 0.0,
                Tail::Greater if t > 0.0 => 0.0,
                Tail::Greater => 1.0,
            };
            (t, p)
        };
        return Ok(TTestResult {
            t_stat,
            df,
            p_value,
            significant: p_value < opts.alpha,
            degenerate: true,
        });
    }

    let t_stat = (ma - mb) / se;
    let upper = student_t_sf(t_stat.abs(), df)?;
    let p_value = match opts.tail {
        Tail::TwoSided => (2.0 * upper).min(1.0),
        Tail::Greater => student_t_sf(t_stat, df)?,
    };
    Ok(TTestResult {
        t_stat,
        df,
        p_value,
        significant: p_value < opts.alpha,
        degenerate: false,
    })
}
