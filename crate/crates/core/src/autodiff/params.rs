//! Named dense parameter arrays and their matching gradients.

use ndarray::Array2;

/// One named parameter. `dims` records the logical rank for serialization;
/// in memory everything is a matrix, with rank-1 arrays stored as one row.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Array2<f64>,
}

/// Ordered map of model parameters. Insertion order is stable, which keeps
/// checkpoint files and rng draws deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, values: Array2<f64>) {
        let name = name.into();
        assert!(
            self.index_of(&name).is_none(),
            "duplicate parameter name {name}"
        );
        assert_eq!(
            dims.iter().product::<usize>(),
            values.len(),
            "dims do not match value count for {name}"
        );
        self.entries.push(ParamEntry { name, dims, values });
    }

    pub fn push_matrix(&mut self, name: impl Into<String>, values: Array2<f64>) {
        let dims = vec![values.nrows(), values.ncols()];
        self.push(name, dims, values);
    }

    pub fn push_vector(&mut self, name: impl Into<String>, values: Array2<f64>) {
        assert_eq!(values.nrows(), 1);
        let dims = vec![values.ncols()];
        self.push(name, dims, values);
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }

    pub fn entry(&self, idx: usize) -> &ParamEntry {
        &self.entries[idx]
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut ParamEntry {
        &mut self.entries[idx]
    }

    /// Total scalar parameter count.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    /// The parameters as they survive checkpoint serialization (f32 payload).
    /// Metrics computed on this set describe the deployable artifact exactly.
    pub fn f32_round_trip(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    dims: e.dims.clone(),
                    values: e.values.mapv(|v| f64::from(v as f32)),
                })
                .collect(),
        }
    }
}

/// Gradients aligned index-for-index with a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct GradSet {
    pub entries: Vec<(String, Array2<f64>)>,
}

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        GradSet {
            entries: params
                .iter()
                .map(|e| (e.name.clone(), Array2::zeros(e.values.dim())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g)
    }

    /// Sum of squared entries across all gradients.
    pub fn squared_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|(_, g)| g.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, g) in &mut self.entries {
            g.mapv_inplace(|v| v * factor);
        }
    }

    pub fn add_assign(&mut self, other: &GradSet) {
        assert_eq!(self.entries.len(), other.entries.len());
        for ((_, g), (_, o)) in self.entries.iter_mut().zip(&other.entries) {
            *g += o;
        }
    }
}
