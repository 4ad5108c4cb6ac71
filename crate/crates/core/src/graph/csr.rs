use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compressed sparse row adjacency in canonical form: column indices are
/// strictly increasing within each row.
///
/// Row `i` lists the neighbors `j` that node `i` aggregates from, so
/// `spmm(adj, h)[i] = Σ_j value(i, j) · h[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrAdjacency {
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrAdjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            row_offsets: vec![0; n + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds the symmetric unweighted adjacency of an undirected edge list.
    /// Each edge is stored in both directions; duplicates collapse.
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut arcs = Vec::with_capacity(edges.len() * 2);
        for &(s, d) in edges {
            arcs.push((s, d, 1.0));
            arcs.push((d, s, 1.0));
        }
        Self::from_arcs(n, arcs)
    }

    /// Builds from directed weighted arcs `(row, col, value)`. Duplicate
    /// arcs keep the first value seen after a stable sort.
    pub fn from_arcs(n: usize, mut arcs: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(s, d, _)) = arcs.iter().find(|&&(s, d, _)| s >= n || d >= n) {
            return Err(Error::validation(format!(
                "arc ({s}, {d}) out of range for {n} nodes"
            )));
        }
        arcs.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        arcs.dedup_by(|b, a| a.0 == b.0 && a.1 == b.1);

        let mut row_offsets = vec![0usize; n + 1];
        for &(s, _, _) in &arcs {
            row_offsets[s + 1] += 1;
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices = arcs.iter().map(|a| a.1).collect();
        let values = arcs.iter().map(|a| a.2).collect();
        Ok(Self {
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Wraps raw CSR arrays after checking every structural invariant.
    pub fn from_parts(row_offsets: Vec<usize>, col_indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let adj = Self {
            row_offsets,
            col_indices,
            values,
        };
        adj.validate()?;
        Ok(adj)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.row_offsets.is_empty() || self.row_offsets[0] != 0 {
            return Err(Error::validation("row_offsets must start at 0"));
        }
        if self.row_offsets[n] != self.col_indices.len() || self.values.len() != self.col_indices.len() {
            return Err(Error::validation("row_offsets/col_indices/values lengths disagree"));
        }
        for i in 0..n {
            let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
            if lo > hi {
                return Err(Error::validation(format!("row_offsets decrease at row {i}")));
            }
            let cols = &self.col_indices[lo..hi];
            if cols.iter().any(|&c| c >= n) {
                return Err(Error::validation(format!("row {i} has a column out of range")));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::validation(format!("row {i} is not strictly increasing")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.row_offsets.len() - 1
    }

    /// Number of stored (directed) arcs.
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn row_values(&self, i: usize) -> &[f64] {
        &self.values[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Row index of every stored arc, aligned with `col_indices`.
    pub fn arc_rows(&self) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.nnz());
        for i in 0..self.n() {
            rows.extend(std::iter::repeat_n(i, self.degree(i)));
        }
        rows
    }

    /// Iterator over `(row, col, value)`.
    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n()).flat_map(move |i| {
            let lo = self.row_offsets[i];
            let hi = self.row_offsets[i + 1];
            (lo..hi).map(move |e| (i, self.col_indices[e], self.values[e]))
        })
    }

    pub fn is_symmetric(&self) -> bool {
        self.arcs().all(|(i, j, v)| {
            self.neighbors(j)
                .binary_search(&i)
                .map(|pos| self.row_values(j)[pos] == v)
                .unwrap_or(false)
        })
    }

    /// Same structure with every value replaced.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.nnz() {
            return Err(Error::shape(
                "with_values",
                format!("{} values for {} arcs", values.len(), self.nnz()),
            ));
        }
        Ok(Self {
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
            values,
        })
    }

    /// Transposed adjacency, together with the permutation mapping each arc
    /// of the transpose back to its position in `self`.
    pub fn transpose_with_perm(&self) -> (CsrAdjacency, Vec<usize>) {
        let n = self.n();
        let mut counts = vec![0usize; n + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let row_offsets = counts.clone();
        let mut cursor = counts;
        let mut col_indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut perm = vec![0; self.nnz()];
        // Rows are visited in increasing order, so each transposed row comes
        // out sorted.
        for (e, (i, j, v)) in self.arcs().enumerate() {
            let slot = cursor[j];
            cursor[j] += 1;
            col_indices[slot] = i;
            values[slot] = v;
            perm[slot] = e;
        }
        (
            CsrAdjacency {
                row_offsets,
                col_indices,
                values,
            },
            perm,
        )
    }

    pub fn transpose(&self) -> CsrAdjacency {
        self.transpose_with_perm().0
    }

    /// Adds arc `(i, i)` with value 1 to every node lacking one.
    pub fn with_self_loops(&self) -> CsrAdjacency {
        let mut arcs: Vec<(usize, usize, f64)> = self.arcs().collect();
        for i in 0..self.n() {
            if !self.contains(i, i) {
                arcs.push((i, i, 1.0));
            }
        }
        // Indices are already validated.
        Self::from_arcs(self.n(), arcs).expect("in-range arcs")
    }

    /// Symmetric GCN normalization `D^{-1/2} A D^{-1/2}` over the stored
    /// structure; callers add self-loops first.
    pub fn gcn_normalize(&self) -> Result<CsrAdjacency> {
        let n = self.n();
        let deg: Vec<f64> = (0..n).map(|i| self.degree(i) as f64).collect();
        if let Some(i) = deg.iter().position(|&d| d == 0.0) {
            return Err(Error::validation(format!(
                "node {i} has zero degree; add self-loops before normalizing"
            )));
        }
        let values = self
            .arcs()
            .map(|(i, j, _)| 1.0 / (deg[i] * deg[j]).sqrt())
            .collect();
        self.with_values(values)
    }

    pub fn to_dense(&self) -> Tensor {
        let n = self.n();
        let mut t = Tensor::zeros(n, n);
        for (i, j, v) in self.arcs() {
            t.set(i, j, v);
        }
        t
    }

    /// Block-diagonal union of several adjacencies.
    pub fn block_diagonal(parts: &[&CsrAdjacency]) -> CsrAdjacency {
        let mut row_offsets = vec![0];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        let mut base = 0;
        for adj in parts {
            for i in 0..adj.n() {
                col_indices.extend(adj.neighbors(i).iter().map(|&c| c + base));
                values.extend_from_slice(adj.row_values(i));
                row_offsets.push(col_indices.len());
            }
            base += adj.n();
        }
        CsrAdjacency {
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<CsrAdjacency> {
        let arcs = self.arcs().map(|(i, j, v)| (perm[i], perm[j], v)).collect();
        Self::from_arcs(self.n(), arcs)
    }
}
