//! Flat parameter vectors with a named-layer view, plus the cosine geometry
//! used by every stage of the defense.
//!
//! All reductions run sequentially left to right so results are bit-identical
//! regardless of how client training upstream was scheduled.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::ParamError;

/// Norms below this are treated as zero by the cosine helpers.
pub const EPS_ZERO: f64 = 1e-12;

/// Distance reported when either operand of a cosine distance has zero norm.
pub const ZERO_NORM_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerSpec {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered, contiguous layout of named layers over a flat parameter array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSchema {
    layers: Vec<LayerSpec>,
    total: usize,
}

impl LayerSchema {
    /// Builds a schema from `(name, length)` pairs laid out back to back.
    pub fn new<I, S>(layers: I) -> Result<Self, ParamError>
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let mut specs: Vec<LayerSpec> = Vec::new();
        let mut offset = 0usize;
        for (name, len) in layers {
            let name = name.into();
            if len == 0 {
                return Err(ParamError::InvalidSchema(alloc::format!("layer `{name}` has zero length")));
            }
            if specs.iter().any(|s| s.name == name) {
                return Err(ParamError::InvalidSchema(alloc::format!("duplicate layer name `{name}`")));
            }
            specs.push(LayerSpec { name, offset, len });
            offset += len;
        }
        if specs.is_empty() {
            return Err(ParamError::InvalidSchema("schema has no layers".into()));
        }
        Ok(Self { layers: specs, total: offset })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|l| l.name.as_str())
    }

    pub fn find(&self, name: &str) -> Result<&LayerSpec, ParamError> {
        self.layers.iter().find(|l| l.name == name).ok_or_else(|| ParamError::UnknownLayer(name.into()))
    }

    pub fn index_of(&self, name: &str) -> Result<usize, ParamError> {
        self.layers.iter().position(|l| l.name == name).ok_or_else(|| ParamError::UnknownLayer(name.into()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.layers.iter().any(|l| l.name == name)
    }
}

/// A model's parameters (or an update) viewed through a shared [`LayerSchema`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    schema: Arc<LayerSchema>,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, schema: Arc<LayerSchema>) -> Result<Self, ParamError> {
        if values.len() != schema.total_len() {
            return Err(ParamError::LengthMismatch { expected: schema.total_len(), actual: values.len() });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(ParamError::NonFinite { index });
        }
        Ok(Self { values, schema })
    }

    pub fn zeros(schema: Arc<LayerSchema>) -> Self {
        Self { values: alloc::vec![0.0; schema.total_len()], schema }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access for in-place training. Callers keep entries finite.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn schema(&self) -> &Arc<LayerSchema> {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_schema(&self, other: &ParameterVector) -> bool {
        Arc::ptr_eq(&self.schema, &other.schema) || *self.schema == *other.schema
    }

    /// Contiguous slice of the named layer.
    pub fn layer(&self, name: &str) -> Result<&[f64], ParamError> {
        let spec = self.schema.find(name)?;
        Ok(&self.values[spec.offset..spec.offset + spec.len])
    }

    pub fn layer_mut(&mut self, name: &str) -> Result<&mut [f64], ParamError> {
        let spec = self.schema.find(name)?;
        let (offset, len) = (spec.offset, spec.len);
        Ok(&mut self.values[offset..offset + len])
    }

    /// Concatenation of the named layers, in the order given.
    pub fn restrict<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<f64>, ParamError> {
        let mut out = Vec::new();
        for name in names {
            out.extend_from_slice(self.layer(name.as_ref())?);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &ParameterVector) -> Result<ParameterVector, ParamError> {
        self.check_schema(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(ParameterVector { values, schema: self.schema.clone() })
    }

    pub fn add(&self, other: &ParameterVector) -> Result<ParameterVector, ParamError> {
        self.check_schema(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(ParameterVector { values, schema: self.schema.clone() })
    }

    pub fn check_schema(&self, other: &ParameterVector) -> Result<(), ParamError> {
        if self.same_schema(other) {
            Ok(())
        } else {
            Err(ParamError::SchemaMismatch)
        }
    }
}

/// Whether a client was honest or adversarial. Ground truth for metrics only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Role {
    Benign,
    Malicious,
}

/// One client's contribution to a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub delta: ParameterVector,
    pub model: ParameterVector,
    pub sample_count: usize,
    pub true_role: Role,
}

impl ClientUpdate {
    pub fn new(
        client_id: usize,
        model: ParameterVector,
        global: &ParameterVector,
        sample_count: usize,
        true_role: Role,
    ) -> Result<Self, ParamError> {
        if sample_count == 0 {
            return Err(ParamError::EmptyClient(client_id));
        }
        let delta = compute_update(&model, global)?;
        Ok(Self { client_id, delta, model, sample_count, true_role })
    }
}

/// `model - global`.
pub fn compute_update(model: &ParameterVector, global: &ParameterVector) -> Result<ParameterVector, ParamError> {
    model.sub(global)
}

/// Contiguous slice of one layer. Free-function form of [`ParameterVector::layer`].
pub fn layer_slice<'a>(v: &'a ParameterVector, name: &str) -> Result<&'a [f64], ParamError> {
    v.layer(name)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn l2_norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Cosine similarity, or `None` when either vector is (numerically) zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na < EPS_ZERO || nb < EPS_ZERO {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 - cos(a, b)` in `[0, 2]`; [`ZERO_NORM_DISTANCE`] if either norm vanishes.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    match cosine_similarity(a, b) {
        Some(c) => 1.0 - c,
        None => ZERO_NORM_DISTANCE,
    }
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    libm::sqrt(acc)
}

/// Dense symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: alloc::vec![0.0; n * n] }
    }

    /// Builds from row vectors. Rows must be square and symmetric with a zero diagonal.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ParamError> {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(ParamError::LengthMismatch { expected: n, actual: row.len() });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(ParamError::NonFinite { index: i * n + j });
                }
                m.data[i * n + j] = v;
            }
        }
        for i in 0..n {
            if m.get(i, i) != 0.0 {
                return Err(ParamError::InvalidMatrix("non-zero diagonal".into()));
            }
            for j in (i + 1)..n {
                if m.get(i, j) != m.get(j, i) {
                    return Err(ParamError::InvalidMatrix("matrix is not symmetric".into()));
                }
            }
        }
        Ok(m)
    }

    /// Builds from a pairwise function evaluated once per unordered pair.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = f(i, j);
                m.data[i * n + j] = d;
                m.data[j * n + i] = d;
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Pairwise cosine distances between equal-length vectors.
pub fn pairwise_distance_matrix<V: AsRef<[f64]>>(vectors: &[V]) -> Result<DistanceMatrix, ParamError> {
    if vectors.len() < 2 {
        return Err(ParamError::TooFewVectors(vectors.len()));
    }
    let len = vectors[0].as_ref().len();
    if let Some(bad) = vectors.iter().find(|v| v.as_ref().len() != len) {
        return Err(ParamError::LengthMismatch { expected: len, actual: bad.as_ref().len() });
    }
    Ok(DistanceMatrix::from_fn(vectors.len(), |i, j| cosine_distance(vectors[i].as_ref(), vectors[j].as_ref())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ab_schema() -> Arc<LayerSchema> {
        Arc::new(LayerSchema::new([("a", 2), ("b", 3)]).unwrap())
    }

    #[test]
    fn layer_slice_offsets() {
        let v = ParameterVector::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], ab_schema()).unwrap();
        assert_eq!(layer_slice(&v, "b").unwrap(), &[3.0, 4.0, 5.0]);
        assert_eq!(layer_slice(&v, "a").unwrap(), &[1.0, 2.0]);
        assert!(matches!(layer_slice(&v, "c"), Err(ParamError::UnknownLayer(_))));
    }

    #[test]
    fn schema_rejects_bad_layouts() {
        assert!(LayerSchema::new([("a", 2), ("a", 1)]).is_err());
        assert!(LayerSchema::new([("a", 0)]).is_err());
        assert!(LayerSchema::new(Vec::<(&str, usize)>::new()).is_err());
        let s = LayerSchema::new([("x", 4), ("y", 1), ("z", 7)]).unwrap();
        assert_eq!(s.total_len(), 12);
        assert_eq!(s.find("z").unwrap().offset, 5);
    }

    #[test]
    fn parameter_vector_validates() {
        assert!(ParameterVector::new(vec![1.0; 4], ab_schema()).is_err());
        assert!(ParameterVector::new(vec![1.0, 2.0, f64::NAN, 0.0, 0.0], ab_schema()).is_err());
    }

    #[test]
    fn cosine_distance_cases() {
        assert_eq!(cosine_distance(&[1.0, 0.0], &[2.0, 0.0]), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-3.0, 0.0]), 2.0);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), ZERO_NORM_DISTANCE);
    }

    #[test]
    fn pairwise_matrix_cases() {
        let m = pairwise_distance_matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(m.to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);

        let m = pairwise_distance_matrix(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert!((m.get(0, 1) - 0.292_893_218_813_452_5).abs() < 1e-12);

        let m = pairwise_distance_matrix(&vec![vec![0.3, 0.7]; 3]).unwrap();
        assert!(m.to_rows().iter().flatten().all(|&v| v.abs() < 1e-15));

        assert!(pairwise_distance_matrix(&[vec![1.0]]).is_err());
        assert!(pairwise_distance_matrix(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn compute_update_cases() {
        let s = Arc::new(LayerSchema::new([("w", 2)]).unwrap());
        let model = ParameterVector::new(vec![3.0, 3.0], s.clone()).unwrap();
        let global = ParameterVector::new(vec![1.0, 2.0], s.clone()).unwrap();
        assert_eq!(compute_update(&model, &global).unwrap().values(), &[2.0, 1.0]);
        assert!(compute_update(&model, &model).unwrap().values().iter().all(|&v| v == 0.0));

        let other = Arc::new(LayerSchema::new([("v", 2)]).unwrap());
        let foreign = ParameterVector::new(vec![0.0, 0.0], other).unwrap();
        assert_eq!(compute_update(&model, &foreign), Err(ParamError::SchemaMismatch));
    }

    #[test]
    fn distance_matrix_from_rows_validates() {
        assert!(DistanceMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).is_ok());
    }
}
