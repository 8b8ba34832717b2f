//! Lexical diversity: MATTR, MTLD and HD-D.

use std::collections::HashMap;
use std::hash::Hash;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MATTR_WINDOW: usize = 50;
pub const DEFAULT_MTLD_THRESHOLD: f64 = 0.72;
pub const DEFAULT_HDD_SAMPLE: usize = 42;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QualityError {
    #[error("empty token sequence")]
    EmptyInput,
    #[error("window must be at least 1")]
    InvalidWindow,
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("sample of {sample} exceeds {tokens} tokens")]
    SampleTooLarge { sample: usize, tokens: usize },
}

/// Lowercased word tokens; apostrophes stay inside words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn distinct<T: Eq + Hash>(tokens: &[T]) -> usize {
    tokens.iter().collect::<std::collections::HashSet<_>>().len()
}

/// Moving-average type-token ratio. Falls back to plain TTR when the
/// sequence is shorter than the window.
pub fn mattr<T: Eq + Hash>(tokens: &[T], window: usize) -> Result<f64, QualityError> {
    if window == 0 {
        return Err(QualityError::InvalidWindow);
    }
    if tokens.is_empty() {
        return Err(QualityError::EmptyInput);
    }
    if tokens.len() < window {
        return Ok(distinct(tokens) as f64 / tokens.len() as f64);
    }
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for t in &tokens[..window] {
        *counts.entry(t).or_default() += 1;
    }
    let mut type_sum = counts.len() as u128;
    for i in window..tokens.len() {
        let out = &tokens[i - window];
        let c = counts.get_mut(out).expect("token in window");
        *c -= 1;
        if *c == 0 {
            counts.remove(out);
        }
        *counts.entry(&tokens[i]).or_default() += 1;
        type_sum += counts.len() as u128;
    }
    let windows = (tokens.len() - window + 1) as u128;
    Ok(type_sum as f64 / (windows * window as u128) as f64)
}

/// One directional pass: tokens per factor.
fn mtld_pass<'a, T: Eq + Hash + 'a>(tokens: impl ExactSizeIterator<Item = &'a T>, threshold: f64) -> f64 {
    let len = tokens.len();
    let mut factors = 0.0;
    let mut types = std::collections::HashSet::new();
    let mut seg_len = 0usize;
    for (i, t) in tokens.enumerate() {
        types.insert(t);
        seg_len += 1;
        let ttr = types.len() as f64 / seg_len as f64;
        if i + 1 == len {
            factors += (1.0 - ttr) / (1.0 - threshold);
        } else if ttr < threshold {
            factors += 1.0;
            types.clear();
            seg_len = 0;
        }
    }
    if factors == 0.0 {
        len as f64
    } else {
        len as f64 / factors
    }
}

/// Measure of textual lexical diversity: mean of the forward and backward
/// passes. The final segment contributes a partial factor.
pub fn mtld<T: Eq + Hash>(tokens: &[T], threshold: f64) -> Result<f64, QualityError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(QualityError::InvalidThreshold(threshold));
    }
    if tokens.is_empty() {
        return Err(QualityError::EmptyInput);
    }
    Ok((mtld_pass(tokens.iter(), threshold) + mtld_pass(tokens.iter().rev(), threshold)) / 2.0)
}

/// HD-D as an exact rational: sum over types of the probability the type
/// shows up in a draw of `sample` tokens, divided by `sample`.
pub fn hdd_exact<T: Eq + Hash>(tokens: &[T], sample: usize) -> Result<BigRational, QualityError> {
    if tokens.is_empty() {
        return Err(QualityError::EmptyInput);
    }
    if sample == 0 {
        return Err(QualityError::InvalidWindow);
    }
    let n_tokens = tokens.len();
    if sample > n_tokens {
        return Err(QualityError::SampleTooLarge { sample, tokens: n_tokens });
    }
    let mut freq: HashMap<&T, usize> = HashMap::new();
    for t in tokens {
        *freq.entry(t).or_default() += 1;
    }
    // P(absent) = C(N - f, n) / C(N, n) = prod_i (N - f - i) / (N - i)
    let falling = |top: usize| -> BigInt {
        (0..sample).fold(BigInt::from(1), |acc, i| if top < i + 1 { BigInt::zero() } else { acc * BigInt::from(top - i) })
    };
    let denominator = falling(n_tokens);
    let mut absent_sum = BigInt::zero();
    for &f in freq.values() {
        absent_sum += falling(n_tokens - f);
    }
    let types = BigInt::from(freq.len());
    let numerator = types * &denominator - absent_sum;
    Ok(BigRational::new(numerator, denominator * BigInt::from(sample)))
}

pub fn hdd<T: Eq + Hash>(tokens: &[T], sample: usize) -> Result<f64, QualityError> {
    Ok(hdd_exact(tokens, sample)?.to_f64().expect("finite ratio"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityParams {
    pub window: usize,
    pub threshold: f64,
    pub sample: usize,
}

impl Default for QualityParams {
    fn default() -> Self {
        QualityParams { window: DEFAULT_MATTR_WINDOW, threshold: DEFAULT_MTLD_THRESHOLD, sample: DEFAULT_HDD_SAMPLE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub tokens: usize,
    pub mattr: f64,
    pub mtld: f64,
    pub hdd: f64,
    /// Plain mean of the three values, with no rescaling.
    pub unweighted_mean: f64,
}

/// All three metrics over the concatenated tokens of `texts`.
pub fn corpus_quality<'a>(texts: impl IntoIterator<Item = &'a str>, params: QualityParams) -> Result<QualityReport, QualityError> {
    let tokens: Vec<String> = texts.into_iter().flat_map(tokenize).collect();
    let mattr = mattr(&tokens, params.window)?;
    let mtld = mtld(&tokens, params.threshold)?;
    let hdd = hdd(&tokens, params.sample.min(tokens.len()))?;
    Ok(QualityReport { tokens: tokens.len(), mattr, mtld, hdd, unweighted_mean: (mattr + mtld + hdd) / 3.0 })
}
