//! Sequential Beta-Bernoulli hypothesis tests on overlap thresholds and
//! Hoeffding measurement planning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const CF_TOL: f64 = 1e-12;
const CF_MAX_ITER: usize = 10_000;

/// Conjugate posterior over a Bernoulli success probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPosterior {
    a: f64,
    b: f64,
}

impl BetaPosterior {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(invalid("a", format!("{a} is not a positive shape")));
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(invalid("b", format!("{b} is not a positive shape")));
        }
        Ok(Self { a, b })
    }

    /// Prior for states expected close to the ground state.
    pub fn near_ground() -> Self {
        Self { a: 10.0, b: 2.0 }
    }

    pub fn uniform() -> Self {
        Self { a: 1.0, b: 1.0 }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    #[must_use]
    pub fn update(self, success: bool) -> Self {
        if success {
            Self { a: self.a + 1.0, ..self }
        } else {
            Self { b: self.b + 1.0, ..self }
        }
    }

    #[must_use]
    pub fn update_batch(self, successes: usize, failures: usize) -> Self {
        Self {
            a: self.a + successes as f64,
            b: self.b + failures as f64,
        }
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn variance(&self) -> f64 {
        let s = self.a + self.b;
        self.a * self.b / (s * s * (s + 1.0))
    }

    /// Posterior probability that `p <= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        regularized_incomplete_beta(self.a, self.b, x)
    }
}

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7).
pub(crate) fn ln_gamma(x: f64) -> f64 {
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
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
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

/// `I_x(a, b)`, the Beta(a, b) cumulative distribution at `x`.
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
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Posterior mass below `h0 - eps` (left) and above `h0 + eps` (right).
pub fn alpha_errors(post: &BetaPosterior, h0: f64, epsilon: f64) -> Result<(f64, f64)> {
    if !(epsilon >= 0.0) {
        return Err(invalid("epsilon", format!("{epsilon} is negative")));
    }
    if !(h0 - epsilon > 0.0 && h0 + epsilon < 1.0) {
        return Err(invalid("h0", format!("[{}, {}] is not inside (0, 1)", h0 - epsilon, h0 + epsilon)));
    }
    let left = post.cdf(h0 - epsilon);
    let right = 1.0 - post.cdf(h0 + epsilon);
    Ok((left, right.max(0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// The success probability lies above the dead zone.
    Accept,
    /// The success probability lies below the dead zone.
    Reject,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestLogRow {
    pub sample_idx: usize,
    pub outcome: bool,
    pub a: f64,
    pub b: f64,
    pub left_err: f64,
    pub right_err: f64,
    pub decision: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub samples_used: usize,
    pub posterior: BetaPosterior,
    pub log: Vec<TestLogRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub prior: BetaPosterior,
    pub h0: f64,
    pub epsilon: f64,
    pub alpha_threshold: f64,
    pub max_samples: usize,
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_threshold > 0.0 && self.alpha_threshold <= 0.5) {
            return Err(invalid("alpha_threshold", format!("{} is outside (0, 0.5]", self.alpha_threshold)));
        }
        alpha_errors(&self.prior, self.h0, self.epsilon)?;
        Ok(())
    }
}

/// Consumes outcomes until one of the two error masses drops below the
/// threshold or `max_samples` outcomes have been used.
pub fn decide<I: IntoIterator<Item = bool>>(outcomes: I, cfg: &TestConfig) -> Result<Decision> {
    cfg.validate()?;
    let mut post = cfg.prior;
    let mut log = Vec::new();
    let mut verdict = Verdict::Undecided;
    for (k, outcome) in outcomes.into_iter().take(cfg.max_samples).enumerate() {
        post = post.update(outcome);
        let (left, right) = alpha_errors(&post, cfg.h0, cfg.epsilon)?;
        verdict = if left < cfg.alpha_threshold {
            Verdict::Accept
        } else if right < cfg.alpha_threshold {
            Verdict::Reject
        } else {
            Verdict::Undecided
        };
        log.push(TestLogRow {
            sample_idx: k,
            outcome,
            a: post.a,
            b: post.b,
            left_err: left,
            right_err: right,
            decision: verdict,
        });
        if verdict != Verdict::Undecided {
            break;
        }
    }
    Ok(Decision {
        verdict,
        samples_used: log.len(),
        posterior: post,
        log,
    })
}

/// Runs [`decide`] on simulated outcomes with success probability `p_true`.
pub fn decide_simulated<G: Rng + ?Sized>(p_true: f64, cfg: &TestConfig, rng: &mut G) -> Result<Decision> {
    if !(0.0..=1.0).contains(&p_true) {
        return Err(invalid("p_true", format!("{p_true} is outside [0, 1]")));
    }
    decide(std::iter::repeat_with(|| rng.random::<f64>() < p_true), cfg)
}

/// Samples for an `epsilon`-accurate mean with failure probability `eta`,
/// for outcomes spanning an interval of width `range`.
pub fn hoeffding_samples(epsilon: f64, eta: f64, range: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid("epsilon", format!("{epsilon} is outside (0, 1)")));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(invalid("eta", format!("{eta} is outside (0, 1)")));
    }
    if !(range > 0.0) {
        return Err(invalid("range", "must be positive"));
    }
    Ok((range * range / 2.0 / (epsilon * epsilon) * (1.0 / eta).ln()).ceil() as usize)
}
