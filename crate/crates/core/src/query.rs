//! Group queries: `N_gr × N_id` embeddings of width `2·D_p`, stored either
//! directly (naive) or as per-group location queries plus layout queries
//! shared by every group (decomposed).

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Real};
use crate::tensor::{dot, Matrix2D};
use crate::weights::{ParamSource, WeightStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    Naive,
    Decomposed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupQuerySet<T> {
    mode: QueryMode,
    n_groups: usize,
    n_members: usize,
    width: usize,
    /// Row `i * n_members + j` holds `q_{i,j}`.
    queries: Matrix2D<T>,
    location: Option<Matrix2D<T>>,
    layout: Option<Matrix2D<T>>,
}

/// Learnable scalar count of a query set.
pub fn query_parameter_count(mode: QueryMode, n_groups: usize, n_members: usize, width: usize) -> usize {
    match mode {
        QueryMode::Naive => n_groups * n_members * width,
        QueryMode::Decomposed => (n_groups + n_members) * width,
    }
}

fn check_dims(n_groups: usize, n_members: usize, width: usize) -> Result<()> {
    if n_groups == 0 || n_members == 0 || width == 0 {
        return Err(Error::invalid(
            "query dimensions",
            format!("n_groups={n_groups}, n_members={n_members}, width={width} must all be >= 1"),
        ));
    }
    if !width.is_multiple_of(2) {
        return Err(Error::invalid(
            "query width",
            format!("{width} is not 2·D_p (must be even)"),
        ));
    }
    Ok(())
}

impl<T: Real> GroupQuerySet<T> {
    /// Build from location (`N_gr × width`) and layout (`N_id × width`) queries.
    pub fn decomposed(location: Matrix2D<T>, layout: Matrix2D<T>) -> Result<Self> {
        let (n_groups, n_members, width) = (location.rows(), layout.rows(), location.cols());
        check_dims(n_groups, n_members, width)?;
        if layout.cols() != width {
            return Err(Error::shape("layout query width", width, layout.cols()));
        }
        let mut queries = Matrix2D::zeros(n_groups * n_members, width);
        for i in 0..n_groups {
            for j in 0..n_members {
                for ((q, &lo), &la) in queries
                    .row_mut(i * n_members + j)
                    .iter_mut()
                    .zip(location.row(i))
                    .zip(layout.row(j))
                {
                    *q = lo + la;
                }
            }
        }
        Ok(Self {
            mode: QueryMode::Decomposed,
            n_groups,
            n_members,
            width,
            queries,
            location: Some(location),
            layout: Some(layout),
        })
    }

    /// Build from a full `(N_gr·N_id) × width` table.
    pub fn naive(n_groups: usize, n_members: usize, queries: Matrix2D<T>) -> Result<Self> {
        let width = queries.cols();
        check_dims(n_groups, n_members, width)?;
        if queries.rows() != n_groups * n_members {
            return Err(Error::shape("naive query rows", n_groups * n_members, queries.rows()));
        }
        Ok(Self {
            mode: QueryMode::Naive,
            n_groups,
            n_members,
            width,
            queries,
            location: None,
            layout: None,
        })
    }

    pub fn mode(&self) -> QueryMode {
        self.mode
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn n_members(&self) -> usize {
        self.n_members
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `D_p`, half the query width.
    pub fn d_model(&self) -> usize {
        self.width / 2
    }

    pub fn queries(&self) -> &Matrix2D<T> {
        &self.queries
    }

    pub fn location(&self) -> Option<&Matrix2D<T>> {
        self.location.as_ref()
    }

    pub fn layout(&self) -> Option<&Matrix2D<T>> {
        self.layout.as_ref()
    }

    pub fn query(&self, group: usize, member: usize) -> &[T] {
        self.queries.row(group * self.n_members + member)
    }

    /// Positional half of `q_{i,j}`: drives reference points and the
    /// query/key terms of attention.
    pub fn positional(&self, group: usize, member: usize) -> &[T] {
        &self.query(group, member)[..self.d_model()]
    }

    /// Content half of `q_{i,j}`: the initial decoder input.
    pub fn content(&self, group: usize, member: usize) -> &[T] {
        &self.query(group, member)[self.d_model()..]
    }

    pub fn parameter_count(&self) -> usize {
        query_parameter_count(self.mode, self.n_groups, self.n_members, self.width)
    }

    /// Write the learnable tensors under `query.*`.
    pub fn to_store(&self, store: &mut WeightStore) {
        match (&self.location, &self.layout) {
            (Some(lo), Some(la)) => {
                store.insert_matrix("query.location", lo);
                store.insert_matrix("query.layout", la);
            }
            _ => store.insert_matrix("query.naive", &self.queries),
        }
    }
}

/// Construct a group query set from a seed or from `query.*` store entries.
pub fn compose_group_queries<T: Real>(
    mode: QueryMode,
    n_groups: usize,
    n_members: usize,
    width: usize,
    source: ParamSource<'_>,
) -> Result<GroupQuerySet<T>> {
    check_dims(n_groups, n_members, width)?;
    let table = |name: &str, rows: usize| source.matrix::<T>(name, rows, width, width);
    match mode {
        QueryMode::Naive => GroupQuerySet::naive(
            n_groups,
            n_members,
            table("query.naive", n_groups * n_members)?,
        ),
        QueryMode::Decomposed => GroupQuerySet::decomposed(
            table("query.location", n_groups)?,
            table("query.layout", n_members)?,
        ),
    }
}

/// `r_{i,j} = logistic(proj · positional(q_{i,j}))` for every embedding,
/// in row order `i * N_id + j`. `proj` is `2 × D_p`.
pub fn reference_points<T: Real>(qs: &GroupQuerySet<T>, proj: &Matrix2D<T>) -> Result<Vec<[T; 2]>> {
    if proj.rows() != 2 || proj.cols() != qs.d_model() {
        return Err(Error::shape(
            "reference point projection",
            format!("2x{}", qs.d_model()),
            format!("{}x{}", proj.rows(), proj.cols()),
        ));
    }
    let mut out = Vec::with_capacity(qs.n_groups * qs.n_members);
    for i in 0..qs.n_groups {
        for j in 0..qs.n_members {
            let pos = qs.positional(i, j);
            out.push([sigmoid(dot(proj.row(0), pos)), sigmoid(dot(proj.row(1), pos))]);
        }
    }
    Ok(out)
}
