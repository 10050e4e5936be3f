use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Asymmetric per-feature costs over the directly changeable features.
/// `f64::INFINITY` on a direction forbids moving that way; on both, the
/// feature is frozen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    #[serde(with = "cost_vec")]
    pub up: Vec<f64>,
    #[serde(with = "cost_vec")]
    pub down: Vec<f64>,
}

impl CostModel {
    pub fn new(up: Vec<f64>, down: Vec<f64>) -> Result<Self> {
        if up.len() != down.len() {
            return Err(Error::Dimension {
                expected: up.len(),
                got: down.len(),
            });
        }
        for (j, (&cu, &cd)) in up.iter().zip(&down).enumerate() {
            if cu.is_nan() || cd.is_nan() || cu < 0.0 || cd < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "cost {j}: costs must be non-negative (got +{cu}, -{cd})"
                )));
            }
        }
        Ok(Self { up, down })
    }

    pub fn symmetric(costs: Vec<f64>) -> Result<Self> {
        Self::new(costs.clone(), costs)
    }

    pub fn len(&self) -> usize {
        self.up.len()
    }

    pub fn is_empty(&self) -> bool {
        self.up.is_empty()
    }

    /// Weighted asymmetric L1 deviation of `z`; infinite when `z` moves a
    /// feature in a locked direction.
    pub fn cost(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: z.len(),
            });
        }
        Ok(self.cost_unchecked(z))
    }

    pub(crate) fn cost_unchecked(&self, z: &[f64]) -> f64 {
        let mut total = 0.0;
        for (j, &zj) in z.iter().enumerate() {
            if zj > 0.0 {
                total += self.up[j] * zj;
            } else if zj < 0.0 {
                total += self.down[j] * -zj;
            }
        }
        total
    }
}

/// Box bounds `lower[j] <= x[j] <= upper[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    #[serde(
        serialize_with = "bound_vec::serialize",
        deserialize_with = "bound_vec::lower"
    )]
    pub lower: Vec<f64>,
    #[serde(
        serialize_with = "bound_vec::serialize",
        deserialize_with = "bound_vec::upper"
    )]
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::Dimension {
                expected: self.lower.len(),
                got: self.upper.len(),
            });
        }
        for (j, (&l, &u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::Infeasible(format!("bounds {j}: lower {l} > upper {u}")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.len()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&l, &u))| l <= v && v <= u)
    }
}

/// Budget plus box bounds, both expressed in the coordinates the projection
/// operates in.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetSpec {
    pub budget: f64,
    pub bounds: Bounds,
}

impl BudgetSpec {
    pub fn new(budget: f64, bounds: Bounds) -> Result<Self> {
        if budget.is_nan() || budget < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "budget must be non-negative, got {budget}"
            )));
        }
        bounds.validate()?;
        Ok(Self { budget, bounds })
    }
}

/// Serde helper for a single cost: numbers pass through, `"locked"` or
/// `"inf"` (and TOML's `inf`) mean a forbidden direction.
pub mod cost_value {
    use serde::{de, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Word(String),
    }

    pub fn parse_word(w: &str) -> Option<f64> {
        match w.trim().to_ascii_lowercase().as_str() {
            "locked" | "inf" | "infinity" => Some(f64::INFINITY),
            other => other.parse().ok(),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("locked")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Word(w) => parse_word(&w)
                .ok_or_else(|| de::Error::custom(format!("invalid cost {w:?}"))),
        }
    }
}

mod cost_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Cost(#[serde(with = "super::cost_value")] f64);

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|&c| Cost(c)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Cost>::deserialize(d)?.into_iter().map(|c| c.0).collect())
    }
}

/// Infinite bounds serialize as `null` so the JSON stays valid.
mod bound_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|&b| if b.is_finite() { Some(b) } else { None })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    fn with_default<'de, D: Deserializer<'de>>(d: D, missing: f64) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|b| b.unwrap_or(missing))
            .collect())
    }

    pub fn lower<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        with_default(d, f64::NEG_INFINITY)
    }

    pub fn upper<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        with_default(d, f64::INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_delta_costs_nothing() {
        let c = CostModel::new(vec![3.0, f64::INFINITY], vec![8.0, 1.0]).unwrap();
        assert_eq!(c.cost(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn unit_deltas_use_direction_costs() {
        // increase-only style cost 3, decrease-only style cost 8
        let c = CostModel::new(vec![3.0], vec![8.0]).unwrap();
        assert_eq!(c.cost(&[1.0]).unwrap(), 3.0);
        assert_eq!(c.cost(&[-1.0]).unwrap(), 8.0);
    }

    #[test]
    fn bidirectional_exercise_and_alcohol() {
        let c = CostModel::symmetric(vec![10.0, 9.0]).unwrap();
        let got = c.cost(&[0.1, -0.2]).unwrap();
        assert!((got - 2.8).abs() < 1e-12);
    }

    #[test]
    fn locked_direction_is_infinite() {
        let c = CostModel::new(vec![2.0], vec![f64::INFINITY]).unwrap();
        assert!(c.cost(&[-0.5]).unwrap().is_infinite());
        assert_eq!(c.cost(&[0.5]).unwrap(), 1.0);
    }

    #[test]
    fn invalid_costs_rejected() {
        assert!(CostModel::new(vec![-1.0], vec![1.0]).is_err());
        assert!(CostModel::new(vec![1.0], vec![]).is_err());
        let c = CostModel::symmetric(vec![1.0, 2.0]).unwrap();
        assert!(c.cost(&[1.0]).is_err());
    }

    #[test]
    fn bounds_and_budget_validation() {
        assert!(Bounds::new(vec![1.0], vec![0.0]).is_err());
        assert!(BudgetSpec::new(-1.0, Bounds::unbounded(1)).is_err());
        assert!(BudgetSpec::new(0.0, Bounds::unbounded(1)).is_ok());
    }

    #[test]
    fn cost_model_json_round_trip_with_locks() {
        let c = CostModel::new(vec![3.0, f64::INFINITY], vec![f64::INFINITY, 0.25]).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("locked"));
        let back: CostModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bounds_json_round_trip_with_infinities() {
        let b = Bounds::new(vec![f64::NEG_INFINITY, 0.0], vec![1.0, f64::INFINITY]).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        let back: Bounds = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
    }
}
