use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use super::tensor::Tensor2D;
use crate::error::{Error, Result};

/// A trainable tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor2D,
    pub grad: Tensor2D,
}

impl Param {
    pub fn new(value: Tensor2D) -> Self {
        let grad = Tensor2D::zeros(value.rows(), value.cols());
        Param { value, grad }
    }
}

/// Named parameters, iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2D) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Argument(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, Param::new(value));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Dimension(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Dimension(format!("missing parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor2D> {
        self.get(name).map(|p| &p.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor2D> {
        self.get(name).map(|p| &p.grad)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Adds a matrix initialised uniformly in ±√(6/(fan_in+fan_out)).
    pub fn insert_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<()> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        self.insert(name, Tensor2D::from_vec(rows, cols, data)?)
    }

    /// Values of every parameter are equal to `other`'s, bit for bit.
    pub fn values_equal(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, a), (nb, b))| na == nb && a.value == b.value)
    }

    /// Serialises values in the text checkpoint layout: a `name rows cols`
    /// header per tensor followed by `rows` lines of `cols` reals.
    pub fn to_checkpoint_text(&self) -> String {
        let mut out = String::new();
        for (name, p) in &self.entries {
            let _ = writeln!(out, "{} {} {}", name, p.value.rows(), p.value.cols());
            for r in 0..p.value.rows() {
                let line: Vec<String> = p.value.row(r).iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }

    /// Parses tensors written by [`ParamSet::to_checkpoint_text`].
    pub fn from_checkpoint_lines<'a, I>(lines: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut lines = lines.into_iter().filter(|l| !l.trim().is_empty());
        let mut set = ParamSet::new();
        while let Some(header) = lines.next() {
            let fields: Vec<&str> = header.split_whitespace().collect();
            let [name, rows, cols] = fields[..] else {
                return Err(Error::Checkpoint(format!("bad tensor header `{header}`")));
            };
            let parse_dim = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Checkpoint(format!("bad dimension in `{header}`")))
            };
            let (rows, cols) = (parse_dim(rows)?, parse_dim(cols)?);
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let line = lines.next().ok_or_else(|| {
                    Error::Checkpoint(format!("`{name}` truncated at row {r}"))
                })?;
                let before = data.len();
                for tok in line.split_whitespace() {
                    let v: f64 = tok
                        .parse()
                        .map_err(|_| Error::Checkpoint(format!("bad value `{tok}` in `{name}`")))?;
                    data.push(v);
                }
                if data.len() - before != cols {
                    return Err(Error::Checkpoint(format!(
                        "`{name}` row {r} has {} values, expected {cols}",
                        data.len() - before
                    )));
                }
            }
            set.insert(name, Tensor2D::from_vec(rows, cols, data)?)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(set)
    }

    /// Copies values from `loaded` after checking every name and shape.
    pub fn assign_from(&mut self, loaded: &ParamSet) -> Result<()> {
        if self.len() != loaded.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                loaded.len(),
                self.len()
            )));
        }
        for (name, p) in &mut self.entries {
            let src = loaded
                .entries
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks `{name}`")))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, model expects {:?}",
                    src.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}
