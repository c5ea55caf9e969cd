//! The store of learnable tensors.

use std::rc::Rc;

use ndarray::ArrayD;

/// Index of one learnable tensor in a [`Params`] store.
///
/// Ids are dense and allocation-ordered, so optimizer state can live in
/// plain vectors indexed by id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors, owned outside any tape.
///
/// Values sit behind `Rc` so a tape can capture them without copying;
/// in-place updates go through [`Params::value_mut`], which clones only if
/// a tape from an unfinished step still holds the tensor.
///
/// Names are unique and stable for a given model configuration; they are
/// the key checkpoints use to pair saved tensors with rebuilt models.
#[derive(Debug, Clone, Default)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Rc<ArrayD<f64>>>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    /// Registers a tensor under a unique name.
    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name `{name}`"
        );
        assert!(value.len() > 0, "parameter `{name}` must be non-empty");
        self.names.push(name);
        self.values.push(Rc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.values[id.0]
    }

    pub(crate) fn value_rc(&self, id: ParamId) -> Rc<ArrayD<f64>> {
        Rc::clone(&self.values[id.0])
    }

    /// Mutable access for optimizer updates and checkpoint restores.
    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        Rc::make_mut(&mut self.values[id.0])
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &ArrayD<f64>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v.as_ref()))
    }

    /// Looks a parameter up by its registered name.
    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Ids of all parameters whose names start with `prefix` — the handle
    /// a trainer uses to optimize one sub-model of a shared store.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.names
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
    }

    /// Total scalar count across all tensors.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}
