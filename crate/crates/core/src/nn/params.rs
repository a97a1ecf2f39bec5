use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::tape::{Gradients, Tape, Var};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamInit {
    /// N(0, 1/fan_in), with fan_in the number of rows.
    Weight,
    Zeros,
    Ones,
    Normal { std: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: ParamInit,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, init: ParamInit) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            init,
        }
    }
}

/// Named learnable tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if !value.is_finite() {
            return Err(Error::invalid(format!("parameter `{name}` is not finite")));
        }
        if self.tensors.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    /// Replaces a tensor's contents; the shape may not change.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(
                "ParamSet::set",
                format!("`{name}` is {:?}, got {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Matrix::len).sum()
    }

    /// Puts every tensor on the tape as a leaf.
    pub fn attach(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }
}

/// Tape handles for an attached [`ParamSet`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    /// Gradient per parameter name; parameters the loss does not reach get
    /// zeros.
    pub fn collect_grads(&self, tape: &Tape, grads: &mut Gradients) -> BTreeMap<String, Matrix> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = grads.take(v).unwrap_or_else(|| {
                    let (r, c) = tape.shape(v);
                    Matrix::zeros(r, c)
                });
                (name.clone(), g)
            })
            .collect()
    }
}

/// Deterministic initialization from a seed.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::new();
    for spec in specs {
        let value = match spec.init {
            ParamInit::Weight => {
                if spec.rows == 0 {
                    return Err(Error::invalid(format!("`{}` has zero fan-in", spec.name)));
                }
                Matrix::randn(spec.rows, spec.cols, &mut rng).scale(1.0 / (spec.rows as f64).sqrt())
            }
            ParamInit::Zeros => Matrix::zeros(spec.rows, spec.cols),
            ParamInit::Ones => Matrix::filled(spec.rows, spec.cols, 1.0),
            ParamInit::Normal { std } => Matrix::randn(spec.rows, spec.cols, &mut rng).scale(std),
        };
        set.insert(spec.name.clone(), value)?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<ParamSpec> {
        vec![
            ParamSpec::new("a.w", 64, 160, ParamInit::Weight),
            ParamSpec::new("a.b", 1, 160, ParamInit::Zeros),
            ParamSpec::new("ln.g", 1, 8, ParamInit::Ones),
        ]
    }

    #[test]
    fn same_seed_same_params() {
        assert_eq!(init_params(&specs(), 4).unwrap(), init_params(&specs(), 4).unwrap());
        assert_ne!(init_params(&specs(), 4).unwrap(), init_params(&specs(), 5).unwrap());
    }

    #[test]
    fn weight_scale_follows_fan_in() {
        let p = init_params(&specs(), 1).unwrap();
        let w = p.get("a.w").unwrap();
        assert!(w.len() >= 10_000);
        let mean = w.mean();
        let sd = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let target = 1.0 / 8.0;
        assert!((sd - target).abs() / target < 0.1, "sd {sd}");
        assert!(p.get("a.b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_and_non_finite_are_rejected() {
        let mut p = ParamSet::new();
        p.insert("x", Matrix::zeros(1, 1)).unwrap();
        assert!(p.insert("x", Matrix::zeros(1, 1)).is_err());
        assert!(p.insert("y", Matrix::filled(1, 1, f64::NAN)).is_err());
        assert!(p.set("x", Matrix::zeros(2, 1)).is_err());
    }
}
