//! Mixed categorical / integer / float hyperparameter spaces.
//!
//! A [`SearchSpace`] is an ordered list of dimensions. The order is the
//! feature order used by [`SearchSpace::encode`], so it is part of the
//! surrogate's contract and of the space hash that guards resumed runs.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fno::activation::ACTIVATION_NAMES;
use crate::fno::model::PADDING_TYPES;
use crate::fno::optim::OPTIMIZER_NAMES;

/// A single hyperparameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(v) => write!(f, "{v}"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v}"),
            Value::Str(v) => f.write_str(v),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

fn default_true() -> bool {
    true
}

/// One dimension of the space. Integer bounds are inclusive unless
/// `inclusive` is false, in which case both ends are excluded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DimensionSpec {
    Categorical {
        name: String,
        choices: Vec<Value>,
    },
    Integer {
        name: String,
        lo: i64,
        hi: i64,
        #[serde(default = "default_true")]
        inclusive: bool,
    },
    Float {
        name: String,
        lo: f64,
        hi: f64,
        #[serde(default)]
        scale: Scale,
    },
}

impl DimensionSpec {
    pub fn categorical<S: Into<String>>(name: S, choices: Vec<Value>) -> Self {
        DimensionSpec::Categorical { name: name.into(), choices }
    }

    pub fn integer<S: Into<String>>(name: S, lo: i64, hi: i64) -> Self {
        DimensionSpec::Integer { name: name.into(), lo, hi, inclusive: true }
    }

    pub fn float<S: Into<String>>(name: S, lo: f64, hi: f64, scale: Scale) -> Self {
        DimensionSpec::Float { name: name.into(), lo, hi, scale }
    }

    pub fn name(&self) -> &str {
        match self {
            DimensionSpec::Categorical { name, .. }
            | DimensionSpec::Integer { name, .. }
            | DimensionSpec::Float { name, .. } => name,
        }
    }

    /// Effective inclusive integer range.
    fn int_range(lo: i64, hi: i64, inclusive: bool) -> (i64, i64) {
        if inclusive {
            (lo, hi)
        } else {
            (lo + 1, hi - 1)
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            DimensionSpec::Categorical { name, choices } => {
                if choices.is_empty() {
                    return Err(Error::Space(format!("`{name}` has no choices")));
                }
                for (i, a) in choices.iter().enumerate() {
                    if choices[..i].contains(a) {
                        return Err(Error::Space(format!("`{name}` repeats choice {a}")));
                    }
                }
            }
            DimensionSpec::Integer { name, lo, hi, inclusive } => {
                let (a, b) = Self::int_range(*lo, *hi, *inclusive);
                if lo >= hi || a > b {
                    return Err(Error::Space(format!("`{name}` has empty range [{lo}, {hi}]")));
                }
            }
            DimensionSpec::Float { name, lo, hi, scale } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::Space(format!("`{name}` needs finite lo < hi")));
                }
                if *scale == Scale::Log && *lo <= 0.0 {
                    return Err(Error::Space(format!("`{name}` is log-scaled but lo <= 0")));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, value: &Value) -> bool {
        match self {
            DimensionSpec::Categorical { choices, .. } => choices.contains(value),
            DimensionSpec::Integer { lo, hi, inclusive, .. } => {
                let (a, b) = Self::int_range(*lo, *hi, *inclusive);
                value.as_i64().is_some_and(|v| v >= a && v <= b)
            }
            DimensionSpec::Float { lo, hi, .. } => {
                value.as_f64().is_some_and(|v| v.is_finite() && v >= *lo && v <= *hi)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        match self {
            DimensionSpec::Categorical { choices, .. } => {
                choices[rng.random_range(0..choices.len())].clone()
            }
            DimensionSpec::Integer { lo, hi, inclusive, .. } => {
                let (a, b) = Self::int_range(*lo, *hi, *inclusive);
                Value::Int(rng.random_range(a..=b))
            }
            DimensionSpec::Float { lo, hi, scale, .. } => match scale {
                Scale::Linear => Value::Float(rng.random_range(*lo..*hi)),
                Scale::Log => {
                    let e = rng.random_range(lo.ln()..hi.ln());
                    Value::Float(e.exp().clamp(*lo, *hi))
                }
            },
        }
    }

    /// Map a value to [0, 1].
    pub fn encode(&self, value: &Value) -> Result<f64> {
        let bad = || Error::Encoding(format!("value {value} not valid for `{}`", self.name()));
        if !self.contains(value) {
            return Err(bad());
        }
        Ok(match self {
            DimensionSpec::Categorical { choices, .. } => {
                let idx = choices.iter().position(|c| c == value).ok_or_else(bad)?;
                if choices.len() == 1 {
                    0.0
                } else {
                    idx as f64 / (choices.len() - 1) as f64
                }
            }
            DimensionSpec::Integer { lo, hi, inclusive, .. } => {
                let (a, b) = Self::int_range(*lo, *hi, *inclusive);
                let v = value.as_i64().ok_or_else(bad)?;
                if a == b {
                    0.0
                } else {
                    (v - a) as f64 / (b - a) as f64
                }
            }
            DimensionSpec::Float { lo, hi, scale, .. } => {
                let v = value.as_f64().ok_or_else(bad)?;
                match scale {
                    Scale::Linear => (v - lo) / (hi - lo),
                    Scale::Log => (v.log10() - lo.log10()) / (hi.log10() - lo.log10()),
                }
            }
        })
    }

    /// Inverse of [`encode`](Self::encode); `u` is clamped to [0, 1] and
    /// discrete dimensions round to the nearest admissible value.
    pub fn decode(&self, u: f64) -> Value {
        let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) };
        match self {
            DimensionSpec::Categorical { choices, .. } => {
                let idx = (u * (choices.len() - 1) as f64).round() as usize;
                choices[idx.min(choices.len() - 1)].clone()
            }
            DimensionSpec::Integer { lo, hi, inclusive, .. } => {
                let (a, b) = Self::int_range(*lo, *hi, *inclusive);
                let v = a as f64 + u * (b - a) as f64;
                Value::Int((v.round() as i64).clamp(a, b))
            }
            DimensionSpec::Float { lo, hi, scale, .. } => {
                let v = match scale {
                    Scale::Linear => lo + u * (hi - lo),
                    Scale::Log => 10f64.powf(lo.log10() + u * (hi.log10() - lo.log10())),
                };
                Value::Float(v.clamp(*lo, *hi))
            }
        }
    }
}

/// Ordered collection of uniquely named dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DimensionSpec>", into = "Vec<DimensionSpec>")]
pub struct SearchSpace {
    dimensions: Vec<DimensionSpec>,
}

impl TryFrom<Vec<DimensionSpec>> for SearchSpace {
    type Error = Error;

    fn try_from(dimensions: Vec<DimensionSpec>) -> Result<Self> {
        SearchSpace::new(dimensions)
    }
}

impl From<SearchSpace> for Vec<DimensionSpec> {
    fn from(space: SearchSpace) -> Self {
        space.dimensions
    }
}

impl SearchSpace {
    pub fn new(dimensions: Vec<DimensionSpec>) -> Result<Self> {
        if dimensions.is_empty() {
            return Err(Error::Space("no dimensions".into()));
        }
        for (i, d) in dimensions.iter().enumerate() {
            d.check()?;
            if dimensions[..i].iter().any(|o| o.name() == d.name()) {
                return Err(Error::Space(format!("duplicate dimension `{}`", d.name())));
            }
        }
        Ok(SearchSpace { dimensions })
    }

    pub fn dimensions(&self) -> &[DimensionSpec] {
        &self.dimensions
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.dimensions.iter().map(|d| d.name())
    }

    pub fn lookup(&self, name: &str) -> Option<&DimensionSpec> {
        self.dimensions.iter().find(|d| d.name() == name)
    }

    pub fn validate(&self, config: &Configuration) -> Result<()> {
        let mut problems = Vec::new();
        for d in &self.dimensions {
            match config.get(d.name()) {
                None => problems.push(format!("missing `{}`", d.name())),
                Some(v) if !d.contains(v) => {
                    problems.push(format!("`{}` = {v} out of range", d.name()))
                }
                _ => {}
            }
        }
        for name in config.values.keys() {
            if self.lookup(name).is_none() {
                problems.push(format!("unknown `{name}`"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let values = self
            .dimensions
            .iter()
            .map(|d| (d.name().to_string(), d.sample(rng)))
            .collect();
        Configuration { values }
    }

    /// Encode a configuration as one coordinate per dimension, in space order.
    pub fn encode(&self, config: &Configuration) -> Result<Vec<f64>> {
        if let Some(name) = config.values.keys().find(|n| self.lookup(n).is_none()) {
            return Err(Error::Encoding(format!("unknown dimension `{name}`")));
        }
        self.dimensions
            .iter()
            .map(|d| {
                let v = config
                    .get(d.name())
                    .ok_or_else(|| Error::Encoding(format!("missing `{}`", d.name())))?;
                d.encode(v)
            })
            .collect()
    }

    pub fn decode(&self, coords: &[f64]) -> Result<Configuration> {
        if coords.len() != self.dimensions.len() {
            return Err(Error::Encoding(format!(
                "expected {} coordinates, got {}",
                self.dimensions.len(),
                coords.len()
            )));
        }
        let values = self
            .dimensions
            .iter()
            .zip(coords)
            .map(|(d, &u)| (d.name().to_string(), d.decode(u)))
            .collect();
        Ok(Configuration { values })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.dimensions).expect("space serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("space serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// A point in a [`SearchSpace`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    pub values: BTreeMap<String, Value>,
}

impl Configuration {
    pub fn get(&self, name: &str) -> Option<&Value> {
        self.values.get(name)
    }

    pub fn set<V: Into<Value>>(&mut self, name: &str, value: V) {
        self.values.insert(name.to_string(), value.into());
    }

    fn need(&self, name: &str) -> Result<&Value> {
        self.get(name).ok_or_else(|| Error::Config(format!("missing `{name}`")))
    }

    pub fn bool(&self, name: &str) -> Result<bool> {
        self.need(name)?
            .as_bool()
            .ok_or_else(|| Error::Config(format!("`{name}` is not a bool")))
    }

    pub fn int(&self, name: &str) -> Result<i64> {
        self.need(name)?
            .as_i64()
            .ok_or_else(|| Error::Config(format!("`{name}` is not an integer")))
    }

    pub fn float(&self, name: &str) -> Result<f64> {
        self.need(name)?
            .as_f64()
            .ok_or_else(|| Error::Config(format!("`{name}` is not a number")))
    }

    pub fn str(&self, name: &str) -> Result<&str> {
        self.need(name)?
            .as_str()
            .ok_or_else(|| Error::Config(format!("`{name}` is not a string")))
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

fn symbols(names: &[&str]) -> Vec<Value> {
    names.iter().map(|&s| Value::from(s)).collect()
}

/// The hyperparameter space searched for the FNO surrogate: data
/// preprocessing, architecture and training dimensions, in that order.
pub fn default_space() -> SearchSpace {
    let bools = vec![Value::Bool(true), Value::Bool(false)];
    SearchSpace::new(vec![
        DimensionSpec::categorical("padding", bools.clone()),
        DimensionSpec::categorical("padding_type", symbols(&PADDING_TYPES)),
        DimensionSpec::categorical("coord_feat", bools),
        DimensionSpec::categorical("lift_act", symbols(&ACTIVATION_NAMES)),
        DimensionSpec::integer("num_FNO", 2, 16),
        DimensionSpec::integer("num_latent_feat", 2, 64),
        DimensionSpec::integer("num_modes", 2, 32),
        DimensionSpec::integer("num_proj_layers", 2, 16),
        DimensionSpec::integer("proj_size", 2, 16),
        DimensionSpec::categorical("proj_act", symbols(&ACTIVATION_NAMES)),
        DimensionSpec::float("alpha", 0.0, 1.0, Scale::Linear),
        DimensionSpec::categorical("optimizer", symbols(&OPTIMIZER_NAMES)),
        DimensionSpec::float("lr", 1e-6, 1e-2, Scale::Log),
        DimensionSpec::float("weight_decay", 0.0, 0.1, Scale::Linear),
        DimensionSpec::integer("batch_size", 2, 64),
    ])
    .expect("default space is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn lookup_matches_table() {
        let s = default_space();
        assert_eq!(s.len(), 15);
        assert_eq!(s.lookup("num_FNO"), Some(&DimensionSpec::integer("num_FNO", 2, 16)));
        assert_eq!(s.lookup("num_modes"), Some(&DimensionSpec::integer("num_modes", 2, 32)));
        assert_eq!(
            s.lookup("alpha"),
            Some(&DimensionSpec::float("alpha", 0.0, 1.0, Scale::Linear))
        );
        assert!(s.lookup("nope").is_none());
    }

    #[test]
    fn single_choice_always_sampled() {
        let s = SearchSpace::new(vec![DimensionSpec::categorical("x", symbols(&["a"]))]).unwrap();
        let mut rng = seed::rng(3);
        for _ in 0..100 {
            assert_eq!(s.sample(&mut rng).get("x"), Some(&Value::from("a")));
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let s = default_space();
        let a = s.sample(&mut seed::rng(42));
        let b = s.sample(&mut seed::rng(42));
        assert_eq!(a, b);
        s.validate(&a).unwrap();
    }

    #[test]
    fn integer_sampling_covers_range_uniformly() {
        let s = default_space();
        let dim = s.lookup("num_FNO").unwrap();
        let mut rng = seed::rng(11);
        let n = 10_000;
        let mut counts = [0usize; 15];
        for _ in 0..n {
            let v = dim.sample(&mut rng).as_i64().unwrap();
            assert!((2..=16).contains(&v));
            counts[(v - 2) as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
        let expected = n as f64 / 15.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 14 degrees of freedom: P(chi2 > 36.12) = 0.001
        assert!(chi2 < 36.12, "chi-square {chi2}");
    }

    #[test]
    fn encode_bounds_and_log_scale() {
        let s = default_space();
        let d = s.lookup("num_FNO").unwrap();
        assert_eq!(d.encode(&Value::Int(2)).unwrap(), 0.0);
        assert_eq!(d.encode(&Value::Int(16)).unwrap(), 1.0);
        let lr = s.lookup("lr").unwrap();
        let expected = ((1e-4f64).log10() - (1e-6f64).log10()) / ((1e-2f64).log10() - (1e-6f64).log10());
        assert!((lr.encode(&Value::Float(1e-4)).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.5).abs() < 1e-12);
        let act = s.lookup("proj_act").unwrap();
        assert_eq!(act.encode(&Value::from("relu")).unwrap(), 0.0);
        assert_eq!(act.encode(&Value::from("squareplus")).unwrap(), 1.0);
    }

    #[test]
    fn encode_rejects_unknown_dimension() {
        let s = default_space();
        let mut c = s.sample(&mut seed::rng(1));
        c.set("bogus", 1i64);
        assert!(matches!(s.encode(&c), Err(Error::Encoding(_))));
    }

    #[test]
    fn invalid_spaces_rejected() {
        assert!(SearchSpace::new(vec![DimensionSpec::integer("a", 3, 3)]).is_err());
        assert!(SearchSpace::new(vec![DimensionSpec::categorical("a", vec![])]).is_err());
        assert!(SearchSpace::new(vec![
            DimensionSpec::integer("a", 0, 3),
            DimensionSpec::integer("a", 0, 4)
        ])
        .is_err());
        assert!(SearchSpace::new(vec![DimensionSpec::float("a", 0.0, 1.0, Scale::Log)]).is_err());
    }

    #[test]
    fn json_roundtrip_and_hash() {
        let s = default_space();
        let back = SearchSpace::from_json(&s.to_json()).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.hash(), back.hash());
        let other = SearchSpace::new(vec![DimensionSpec::integer("a", 0, 3)]).unwrap();
        assert_ne!(s.hash(), other.hash());
    }

    #[test]
    fn validate_reports_offending_fields() {
        let s = default_space();
        let mut c = s.sample(&mut seed::rng(9));
        c.set("num_FNO", 99i64);
        c.values.remove("lr");
        let msg = s.validate(&c).unwrap_err().to_string();
        assert!(msg.contains("num_FNO") && msg.contains("lr"), "{msg}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn decode_inverts_encode(seed in any::<u64>()) {
                let s = default_space();
                let c = s.sample(&mut seed::rng(seed));
                let back = s.decode(&s.encode(&c).unwrap()).unwrap();
                for d in s.dimensions() {
                    let (a, b) = (c.get(d.name()).unwrap(), back.get(d.name()).unwrap());
                    match (a, b) {
                        (Value::Float(x), Value::Float(y)) => {
                            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300) + 1e-15)
                        }
                        _ => prop_assert_eq!(a, b),
                    }
                }
            }

            #[test]
            fn encoded_coordinates_in_unit_interval(seed in any::<u64>()) {
                let s = default_space();
                let c = s.sample(&mut seed::rng(seed));
                for u in s.encode(&c).unwrap() {
                    prop_assert!((0.0..=1.0).contains(&u));
                }
            }
        }
    }
}
