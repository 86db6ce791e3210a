//! Contrast matrices and hypothesis families.
//!
//! A contrast matrix has rows of length k*m (group-major over the
//! probability grid) whose group coefficients sum to zero for every
//! probability index. Builders are deterministic so that decision sets
//! have a stable row order.

use crate::error::{Error, Result};
use crate::quantiles::ProbabilityGrid;

/// Which builder produced a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyTag {
    Dunnett,
    Tukey,
    GrandMean,
    Custom,
    KroneckerComposite,
}

/// Test direction of a hypothesis family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// H0: h'q = eps vs H1: h'q != eps
    TwoSided,
    /// H0: h'q <= eps vs H1: h'q > eps
    NonInferiority,
    /// H0: |h'q| >= delta vs H1: |h'q| < delta (TOST)
    Equivalence,
}

impl Direction {
    pub fn name(&self) -> &'static str {
        match self {
            Direction::TwoSided => "two-sided",
            Direction::NonInferiority => "noninferiority",
            Direction::Equivalence => "equivalence",
        }
    }
}

/// A matrix of contrast rows together with human-readable row names.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMatrix {
    rows: Vec<Vec<f64>>,
    row_names: Vec<String>,
    family_tag: FamilyTag,
}

impl ContrastMatrix {
    /// Wrap user-supplied rows as a custom matrix, checking the contrast
    /// property for the given number of grid probabilities.
    pub fn custom(rows: Vec<Vec<f64>>, m: usize) -> Result<Self> {
        let row_names = (1..=rows.len()).map(|i| format!("c{i}")).collect();
        let cm = ContrastMatrix {
            rows,
            row_names,
            family_tag: FamilyTag::Custom,
        };
        validate(&cm, m)?;
        Ok(cm)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.rows[l]
    }

    pub fn row_names(&self) -> &[String] {
        &self.row_names
    }

    pub fn family_tag(&self) -> FamilyTag {
        self.family_tag
    }

    pub fn r(&self) -> usize {
        self.rows.len()
    }

    pub fn cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// The matrix with every row negated (used for TOST and for
    /// hypotheses stated with the reversed inequality).
    pub fn negated(&self) -> Self {
        ContrastMatrix {
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|x| -x).collect())
                .collect(),
            row_names: self.row_names.clone(),
            family_tag: self.family_tag,
        }
    }
}

/// Check rectangular shape, the per-probability-index zero-sum property,
/// and that no row is all zero.
pub fn validate(matrix: &ContrastMatrix, m: usize) -> Result<()> {
    if matrix.rows.is_empty() {
        return Err(Error::Domain("contrast matrix has no rows".into()));
    }
    let cols = matrix.cols();
    if m == 0 || cols == 0 || cols % m != 0 {
        return Err(Error::Domain(format!(
            "contrast matrix with {cols} columns does not fit m = {m} probabilities"
        )));
    }
    let k = cols / m;
    for (l, row) in matrix.rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Domain(format!(
                "row {} has {} entries, expected {cols}",
                l + 1,
                row.len()
            )));
        }
        if row.iter().all(|&x| x == 0.0) {
            return Err(Error::Domain(format!("row {} is all zero", l + 1)));
        }
        let scale: f64 = row.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
        for j in 0..m {
            let sum: f64 = (0..k).map(|i| row[i * m + j]).sum();
            if sum.abs() > 1e-10 * scale {
                return Err(Error::Domain(format!(
                    "row {} violates the contrast property at probability index {} (sum = {sum})",
                    l + 1,
                    j + 1
                )));
            }
        }
    }
    Ok(())
}

/// Many-to-one comparisons against group 1: r = k - 1 rows, row l is
/// e_{l+1} - e_1 (contrast value: group l+1 minus the reference).
pub fn dunnett(k: usize) -> Result<ContrastMatrix> {
    if k < 2 {
        return Err(Error::Domain(format!("dunnett needs k >= 2, got {k}")));
    }
    let mut rows = Vec::with_capacity(k - 1);
    let mut row_names = Vec::with_capacity(k - 1);
    for l in 1..k {
        let mut row = vec![0.0; k];
        row[0] = -1.0;
        row[l] = 1.0;
        rows.push(row);
        row_names.push(format!("{}-1", l + 1));
    }
    Ok(ContrastMatrix {
        rows,
        row_names,
        family_tag: FamilyTag::Dunnett,
    })
}

/// All-pairs comparisons: r = k(k-1)/2 rows ordered by the smaller index
/// first, then the larger.
pub fn tukey(k: usize) -> Result<ContrastMatrix> {
    if k < 2 {
        return Err(Error::Domain(format!("tukey needs k >= 2, got {k}")));
    }
    let mut rows = Vec::with_capacity(k * (k - 1) / 2);
    let mut row_names = Vec::with_capacity(rows.capacity());
    for lo in 0..k {
        for hi in (lo + 1)..k {
            let mut row = vec![0.0; k];
            row[lo] = -1.0;
            row[hi] = 1.0;
            rows.push(row);
            row_names.push(format!("{}-{}", hi + 1, lo + 1));
        }
    }
    Ok(ContrastMatrix {
        rows,
        row_names,
        family_tag: FamilyTag::Tukey,
    })
}

/// Comparisons to the unweighted mean of all groups: r = k rows, row l is
/// e_l - (1/k) * 1.
pub fn grand_mean(k: usize) -> Result<ContrastMatrix> {
    if k < 2 {
        return Err(Error::Domain(format!("grand mean needs k >= 2, got {k}")));
    }
    let w = 1.0 / k as f64;
    let mut rows = Vec::with_capacity(k);
    let mut row_names = Vec::with_capacity(k);
    for l in 0..k {
        let mut row = vec![-w; k];
        row[l] = 1.0 - w;
        rows.push(row);
        row_names.push(format!("{}-mean", l + 1));
    }
    Ok(ContrastMatrix {
        rows,
        row_names,
        family_tag: FamilyTag::GrandMean,
    })
}

/// Effect matrix (0 1 0; -1 0 1) extracting the median and the IQR from
/// the quartile grid {0.25, 0.5, 0.75}.
pub fn median_iqr_effect() -> (Vec<Vec<f64>>, Vec<String>) {
    (
        vec![vec![0.0, 1.0, 0.0], vec![-1.0, 0.0, 1.0]],
        vec!["med".into(), "iqr".into()],
    )
}

/// Kronecker product base (x) effect for simultaneous inference over
/// several quantile functionals. `base` must be built for m = 1; the
/// effect has one column per grid probability. Rows are ordered
/// base-row-major.
pub fn kron_with_effect(
    base: &ContrastMatrix,
    effect: &[Vec<f64>],
    effect_names: &[String],
) -> Result<ContrastMatrix> {
    if effect.is_empty() || effect[0].is_empty() {
        return Err(Error::Domain("empty effect matrix".into()));
    }
    let m = effect[0].len();
    if effect.iter().any(|row| row.len() != m) {
        return Err(Error::Domain("ragged effect matrix".into()));
    }
    if effect_names.len() != effect.len() {
        return Err(Error::Domain(format!(
            "{} effect rows but {} names",
            effect.len(),
            effect_names.len()
        )));
    }
    let k = base.cols();
    let mut rows = Vec::with_capacity(base.r() * effect.len());
    let mut row_names = Vec::with_capacity(rows.capacity());
    for (b, base_row) in base.rows.iter().enumerate() {
        for (e, effect_row) in effect.iter().enumerate() {
            let mut row = Vec::with_capacity(k * m);
            for &g in base_row {
                for &v in effect_row {
                    row.push(g * v);
                }
            }
            rows.push(row);
            row_names.push(format!("{}({})", effect_names[e], base.row_names[b]));
        }
    }
    Ok(ContrastMatrix {
        rows,
        row_names,
        family_tag: FamilyTag::KroneckerComposite,
    })
}

/// A contrast matrix paired with margins, a direction, and the grid it
/// applies to.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisFamily {
    matrix: ContrastMatrix,
    margins: Vec<f64>,
    direction: Direction,
    grid: ProbabilityGrid,
}

impl HypothesisFamily {
    pub fn new(
        matrix: ContrastMatrix,
        margins: Vec<f64>,
        direction: Direction,
        grid: ProbabilityGrid,
    ) -> Result<Self> {
        validate(&matrix, grid.m())?;
        if margins.len() != matrix.r() {
            return Err(Error::Domain(format!(
                "{} margins for {} contrasts",
                margins.len(),
                matrix.r()
            )));
        }
        if margins.iter().any(|e| !e.is_finite()) {
            return Err(Error::Domain("margins must be finite".into()));
        }
        if direction == Direction::Equivalence && margins.iter().any(|&d| d <= 0.0) {
            return Err(Error::Domain(
                "equivalence requires strictly positive margins".into(),
            ));
        }
        Ok(HypothesisFamily {
            matrix,
            margins,
            direction,
            grid,
        })
    }

    /// Family with a scalar margin broadcast to every contrast.
    pub fn with_scalar_margin(
        matrix: ContrastMatrix,
        margin: f64,
        direction: Direction,
        grid: ProbabilityGrid,
    ) -> Result<Self> {
        let r = matrix.r();
        HypothesisFamily::new(matrix, vec![margin; r], direction, grid)
    }

    pub fn matrix(&self) -> &ContrastMatrix {
        &self.matrix
    }

    pub fn margins(&self) -> &[f64] {
        &self.margins
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn grid(&self) -> &ProbabilityGrid {
        &self.grid
    }

    pub fn r(&self) -> usize {
        self.matrix.r()
    }

    /// Number of groups the family addresses.
    pub fn k(&self) -> usize {
        self.matrix.cols() / self.grid.m()
    }

    /// Negate every contrast row and margin. Maps a family stated as
    /// H0: h'q >= eps onto the supported H0: -h'q <= -eps form.
    pub fn flipped(&self) -> Self {
        HypothesisFamily {
            matrix: self.matrix.negated(),
            margins: self.margins.iter().map(|e| -e).collect(),
            direction: self.direction,
            grid: self.grid.clone(),
        }
    }

    /// Same matrix and grid with new margins and direction; used by the
    /// TOST decomposition.
    pub(crate) fn reshaped(
        &self,
        matrix: ContrastMatrix,
        margins: Vec<f64>,
        direction: Direction,
    ) -> Self {
        HypothesisFamily {
            matrix,
            margins,
            direction,
            grid: self.grid.clone(),
        }
    }
}
