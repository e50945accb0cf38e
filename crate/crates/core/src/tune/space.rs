use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::TuneError;

/// A hyperparameter value. Integers are tried before floats when parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Self::Int(i) => Some(i as f64),
            Self::Float(f) => Some(f),
            Self::Text(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            Self::Int(i) => Some(i),
            Self::Float(f) if f.fract() == 0.0 => Some(f as i64),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Int(i) => write!(f, "{i}"),
            Self::Float(x) => write!(f, "{x}"),
            Self::Text(s) => write!(f, "{s}"),
        }
    }
}

pub type Config = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DimKind {
    ContinuousLog { low: f64, high: f64 },
    ContinuousLinear { low: f64, high: f64 },
    Integer { low: i64, high: i64 },
    Categorical { choices: Vec<ParamValue> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    #[serde(flatten)]
    pub kind: DimKind,
    /// Value used by the default configuration; the range midpoint (or first
    /// choice) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<ParamValue>,
}

impl Dimension {
    pub fn new(name: &str, kind: DimKind) -> Self {
        Self {
            name: name.into(),
            kind,
            default: None,
        }
    }

    pub fn with_default(mut self, value: ParamValue) -> Self {
        self.default = Some(value);
        self
    }

    fn validate(&self) -> Result<(), String> {
        match &self.kind {
            DimKind::ContinuousLog { low, high } => {
                if !(*low > 0.0 && low <= high && high.is_finite()) {
                    return Err(format!("{}: log range needs 0 < low <= high", self.name));
                }
            }
            DimKind::ContinuousLinear { low, high } => {
                if !(low.is_finite() && high.is_finite() && low <= high) {
                    return Err(format!("{}: range needs low <= high", self.name));
                }
            }
            DimKind::Integer { low, high } => {
                if low > high {
                    return Err(format!("{}: range needs low <= high", self.name));
                }
            }
            DimKind::Categorical { choices } => {
                if choices.is_empty() {
                    return Err(format!("{}: no choices", self.name));
                }
            }
        }
        if let Some(d) = &self.default {
            if !self.contains(d) {
                return Err(format!("{}: default {d} is outside the range", self.name));
            }
        }
        Ok(())
    }

    pub fn contains(&self, v: &ParamValue) -> bool {
        match &self.kind {
            DimKind::ContinuousLog { low, high } | DimKind::ContinuousLinear { low, high } => {
                v.as_f64().is_some_and(|x| x >= *low && x <= *high)
            }
            DimKind::Integer { low, high } => v.as_i64().is_some_and(|x| x >= *low && x <= *high),
            DimKind::Categorical { choices } => choices.contains(v),
        }
    }

    /// Whether only one value is possible.
    pub fn is_fixed(&self) -> bool {
        match &self.kind {
            DimKind::ContinuousLog { low, high } | DimKind::ContinuousLinear { low, high } => low == high,
            DimKind::Integer { low, high } => low == high,
            DimKind::Categorical { choices } => choices.len() == 1,
        }
    }

    /// Maps `u ∈ [0, 1]` onto the dimension.
    pub fn from_unit(&self, u: f64) -> ParamValue {
        let u = u.clamp(0.0, 1.0);
        match &self.kind {
            DimKind::ContinuousLog { low, high } => {
                let (a, b) = (low.ln(), high.ln());
                ParamValue::Float((a + u * (b - a)).exp().clamp(*low, *high))
            }
            DimKind::ContinuousLinear { low, high } => {
                ParamValue::Float((low + u * (high - low)).clamp(*low, *high))
            }
            DimKind::Integer { low, high } => {
                let span = (high - low) as f64;
                ParamValue::Int(low + (u * span).round() as i64)
            }
            DimKind::Categorical { choices } => {
                let i = ((u * choices.len() as f64) as usize).min(choices.len() - 1);
                choices[i].clone()
            }
        }
    }

    /// Inverse of [`from_unit`](Self::from_unit); categorical values map to
    /// the centre of their bucket.
    pub fn to_unit(&self, v: &ParamValue) -> f64 {
        match &self.kind {
            DimKind::ContinuousLog { low, high } => {
                if low == high {
                    0.5
                } else {
                    (v.as_f64().unwrap_or(*low).ln() - low.ln()) / (high.ln() - low.ln())
                }
            }
            DimKind::ContinuousLinear { low, high } => {
                if low == high {
                    0.5
                } else {
                    (v.as_f64().unwrap_or(*low) - low) / (high - low)
                }
            }
            DimKind::Integer { low, high } => {
                if low == high {
                    0.5
                } else {
                    (v.as_i64().unwrap_or(*low) - low) as f64 / (high - low) as f64
                }
            }
            DimKind::Categorical { choices } => {
                let i = choices.iter().position(|c| c == v).unwrap_or(0);
                (i as f64 + 0.5) / choices.len() as f64
            }
        }
    }

    fn feature_width(&self) -> usize {
        match &self.kind {
            DimKind::Categorical { choices } => choices.len(),
            _ => 1,
        }
    }
}

/// A named, ordered set of tunable dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub dimensions: Vec<Dimension>,
}

impl ParamSpace {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self, TuneError> {
        let space = Self { dimensions };
        space.validate()?;
        Ok(space)
    }

    pub fn from_json(text: &str) -> Result<Self, TuneError> {
        let space: Self = serde_json::from_str(text).map_err(|e| TuneError::Space(e.to_string()))?;
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<(), TuneError> {
        if self.dimensions.is_empty() {
            return Err(TuneError::Space("no dimensions".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.dimensions {
            if !seen.insert(&d.name) {
                return Err(TuneError::Space(format!("duplicate dimension {}", d.name)));
            }
            d.validate().map_err(TuneError::Space)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    pub fn dimension(&self, name: &str) -> Option<&Dimension> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    pub fn is_single_point(&self) -> bool {
        self.dimensions.iter().all(Dimension::is_fixed)
    }

    pub fn contains(&self, config: &Config) -> bool {
        config.len() == self.dimensions.len()
            && self
                .dimensions
                .iter()
                .all(|d| config.get(&d.name).is_some_and(|v| d.contains(v)))
    }

    pub fn default_config(&self) -> Config {
        self.dimensions
            .iter()
            .map(|d| {
                let v = d.default.clone().unwrap_or_else(|| match &d.kind {
                    DimKind::Categorical { choices } => choices[0].clone(),
                    _ => d.from_unit(0.5),
                });
                (d.name.clone(), v)
            })
            .collect()
    }

    /// One coordinate in `[0, 1]` per dimension.
    pub fn from_unit(&self, u: &[f64]) -> Config {
        self.dimensions
            .iter()
            .zip(u)
            .map(|(d, &x)| (d.name.clone(), d.from_unit(x)))
            .collect()
    }

    pub fn to_unit(&self, config: &Config) -> Vec<f64> {
        self.dimensions
            .iter()
            .map(|d| config.get(&d.name).map_or(0.5, |v| d.to_unit(v)))
            .collect()
    }

    /// Surrogate features: unit coordinates, with categoricals one-hot.
    pub fn encode(&self, config: &Config) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.feature_width());
        for d in &self.dimensions {
            let v = config.get(&d.name);
            match &d.kind {
                DimKind::Categorical { choices } => {
                    out.extend(choices.iter().map(|c| if Some(c) == v { 1.0 } else { 0.0 }))
                }
                _ => out.push(v.map_or(0.5, |v| d.to_unit(v))),
            }
        }
        out
    }

    /// Inverse of [`encode`](Self::encode).
    pub fn decode(&self, features: &[f64]) -> Config {
        let mut at = 0;
        let mut out = Config::new();
        for d in &self.dimensions {
            let w = d.feature_width();
            let slice = &features[at..at + w];
            let value = match &d.kind {
                DimKind::Categorical { choices } => {
                    let best = slice
                        .iter()
                        .enumerate()
                        .fold(0, |b, (i, &x)| if x > slice[b] { i } else { b });
                    choices[best].clone()
                }
                _ => d.from_unit(slice[0]),
            };
            out.insert(d.name.clone(), value);
            at += w;
        }
        out
    }

    pub fn feature_width(&self) -> usize {
        self.dimensions.iter().map(Dimension::feature_width).sum()
    }
}

/// The standard QuartzNet tuning space.
pub fn default_space() -> ParamSpace {
    use DimKind::*;
    use ParamValue::{Float, Int};
    let ints = |v: &[i64]| v.iter().map(|&i| Int(i)).collect();
    ParamSpace::new(vec![
        Dimension::new("learning_rate", ContinuousLog { low: 1e-4, high: 1e-2 }).with_default(Float(1e-3)),
        Dimension::new("weight_decay", ContinuousLog { low: 1e-6, high: 1e-2 }).with_default(Float(1e-4)),
        Dimension::new("dropout", ContinuousLinear { low: 0.0, high: 0.5 }).with_default(Float(0.1)),
        Dimension::new("batch_size", Categorical { choices: ints(&[32, 64, 128, 256]) }).with_default(Int(32)),
        Dimension::new("num_blocks", Integer { low: 2, high: 5 }).with_default(Int(3)),
        Dimension::new("cells_per_block", Integer { low: 1, high: 3 }).with_default(Int(2)),
        Dimension::new("base_channels", Categorical { choices: ints(&[32, 64, 128]) }).with_default(Int(64)),
        Dimension::new("kernel_base", Categorical { choices: ints(&[3, 5, 7]) }).with_default(Int(5)),
    ])
    .expect("default space is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_space_shape() {
        let s = default_space();
        assert_eq!(s.len(), 8);
        let DimKind::Categorical { choices } = &s.dimension("batch_size").unwrap().kind else {
            panic!("batch_size is categorical");
        };
        let sizes: Vec<i64> = choices.iter().map(|c| c.as_i64().unwrap()).collect();
        assert_eq!(sizes, vec![32, 64, 128, 256]);
        assert!(s.contains(&s.default_config()));
    }

    #[test]
    fn json_round_trip() {
        let s = default_space();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(ParamSpace::from_json(&text).unwrap(), s);
    }

    #[test]
    fn invalid_spaces_are_rejected() {
        let dup = vec![
            Dimension::new("a", DimKind::Integer { low: 0, high: 1 }),
            Dimension::new("a", DimKind::Integer { low: 0, high: 1 }),
        ];
        assert!(ParamSpace::new(dup).is_err());
        let neg = vec![Dimension::new("a", DimKind::ContinuousLog { low: -1.0, high: 1.0 })];
        assert!(ParamSpace::new(neg).is_err());
        let empty = vec![Dimension::new("a", DimKind::Categorical { choices: vec![] })];
        assert!(ParamSpace::new(empty).is_err());
    }
}
