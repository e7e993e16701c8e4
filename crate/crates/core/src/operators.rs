//! Grid discretization of the generator.
//!
//! On a uniform grid the local part `L_D φ = a φ'' + b φ'` uses a central
//! second difference and an upwind first difference. The nonlocal part
//!
//! ```text
//! I φ(x) = ∫ [φ(x + j) − φ(x) − j·φ'(x)·1{j0 < 1}] ν(dz)
//! ```
//!
//! is a quadrature sum: jumps shorter than one cell use the local quadratic
//! model `½ j² φ''`, longer jumps read `φ(x + j)` by linear interpolation, and
//! beyond the grid by a linear extension with fixed outward slopes. The net
//! compensator drift is upwinded like `b`, so the assembled matrix is an
//! M-matrix whenever `a >= 0`.
//!
//! Every stencil is an affine form in the grid values; the constant collects
//! the extension contributions.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::LevyQuadrature;
use crate::model::{ProblemSpec, TransactionCost};

/// Uniform grid on `[lower, upper]` with `n` nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(lower: f64, upper: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::invalid(format!("grid needs at least 3 nodes, got {n}")));
        }
        if !(upper > lower) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::invalid(format!("bad grid bounds [{lower}, {upper}]")));
        }
        Ok(Grid1D { lower, upper, n })
    }

    pub fn h(&self) -> f64 {
        (self.upper - self.lower) / (self.n - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.upper
        } else {
            self.lower + i as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    pub fn is_interior(&self, i: usize) -> bool {
        i > 0 && i + 1 < self.n
    }

    /// Index of the node nearest to `x`, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        let t = ((x - self.lower) / self.h()).round();
        t.clamp(0.0, (self.n - 1) as f64) as usize
    }

    /// Refinement with spacing h/2.
    pub fn refined(&self) -> Self {
        Grid1D {
            n: 2 * self.n - 1,
            ..*self
        }
    }
}

/// Outward slopes of the linear extension beyond each end of the grid:
/// `φ(x) = φ_0 + left·(lower − x)` for `x < lower`, and
/// `φ(x) = φ_{N−1} + right·(x − upper)` for `x > upper`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Extension {
    pub left: f64,
    pub right: f64,
}

impl Extension {
    pub fn new(left: f64, right: f64) -> Self {
        Extension { left, right }
    }

    /// Observed outward slope of `g/r` at the box ends, clamped to `[−cap, cap]`.
    pub fn from_cost(spec: &ProblemSpec, grid: &Grid1D, cap: f64) -> Self {
        let h = grid.h();
        let r = spec.discount;
        let left = (spec.running_cost(grid.lower) - spec.running_cost(grid.lower + h)) / h / r;
        let right = (spec.running_cost(grid.upper) - spec.running_cost(grid.upper - h)) / h / r;
        Extension {
            left: left.clamp(-cap, cap),
            right: right.clamp(-cap, cap),
        }
    }
}

/// Affine functional `Σ w_k φ_k + constant` of the grid values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffineForm {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineForm {
    pub fn eval(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(k, w)| w * values[k]).sum::<f64>() + self.constant
    }

    fn add(&mut self, k: usize, w: f64) {
        self.terms.push((k, w));
    }

    /// Adds `w·φ(x)` with interpolation or extension.
    fn add_point(&mut self, grid: &Grid1D, ext: &Extension, x: f64, w: f64) {
        let h = grid.h();
        let last = grid.n - 1;
        if x < grid.lower {
            self.add(0, w);
            self.constant += w * ext.left * (grid.lower - x);
            return;
        }
        if x > grid.upper {
            self.add(last, w);
            self.constant += w * ext.right * (x - grid.upper);
            return;
        }
        let t = (x - grid.lower) / h;
        let k = (t.floor() as usize).min(last - 1);
        let frac = t - k as f64;
        if frac <= 1e-12 {
            self.add(k, w);
        } else if frac >= 1.0 - 1e-12 {
            self.add(k + 1, w);
        } else {
            self.add(k, w * (1.0 - frac));
            self.add(k + 1, w * frac);
        }
    }

    /// Adds `w·φ''(x_i)` (central difference, ghosts from the extension).
    fn add_second_difference(&mut self, grid: &Grid1D, ext: &Extension, i: usize, w: f64) {
        let h = grid.h();
        let c = w / (h * h);
        let x = grid.x(i);
        self.add_point(grid, ext, x - h, c);
        self.add(i, -2.0 * c);
        self.add_point(grid, ext, x + h, c);
    }

    /// Adds `w·φ'(x_i)` by the one-sided difference in the direction of `w`.
    fn add_upwind(&mut self, grid: &Grid1D, ext: &Extension, i: usize, w: f64) {
        if w == 0.0 {
            return;
        }
        let h = grid.h();
        let x = grid.x(i);
        if w > 0.0 {
            self.add_point(grid, ext, x + h, w / h);
            self.add(i, -w / h);
        } else {
            self.add(i, w / h);
            self.add_point(grid, ext, x - h, -w / h);
        }
    }

    /// Sorts and merges duplicate indices.
    pub fn compress(&mut self) {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(k, w) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == k => last.1 += w,
                _ => out.push((k, w)),
            }
        }
        self.terms = out;
    }
}

/// Grid function with its extension rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueField {
    pub grid: Grid1D,
    pub values: Vec<f64>,
    pub extension: Extension,
}

impl ValueField {
    pub fn new(grid: Grid1D, values: Vec<f64>, extension: Extension) -> Result<Self> {
        if values.len() != grid.n {
            return Err(Error::invalid(format!(
                "field has {} values for {} nodes",
                values.len(),
                grid.n
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at node {k}")));
        }
        Ok(ValueField {
            grid,
            values,
            extension,
        })
    }

    /// Samples `g` on the grid; extension slopes are the outward one-cell
    /// slopes of `g` at the ends.
    pub fn from_fn<F: Fn(f64) -> f64>(grid: Grid1D, g: F) -> Result<Self> {
        let values: Vec<f64> = grid.nodes().into_iter().map(&g).collect();
        let h = grid.h();
        let n = grid.n;
        let ext = Extension {
            left: (values[0] - values[1]) / h,
            right: (values[n - 1] - values[n - 2]) / h,
        };
        Self::new(grid, values, ext)
    }

    pub fn constant(grid: Grid1D, c: f64) -> Self {
        ValueField {
            grid,
            values: vec![c; grid.n],
            extension: Extension::default(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let g = &self.grid;
        let v = &self.values;
        let last = g.n - 1;
        if x < g.lower {
            return v[0] + self.extension.left * (g.lower - x);
        }
        if x > g.upper {
            return v[last] + self.extension.right * (x - g.upper);
        }
        let t = (x - g.lower) / g.h();
        let k = (t.floor() as usize).min(last - 1);
        let frac = t - k as f64;
        if frac <= 1e-12 {
            v[k]
        } else if frac >= 1.0 - 1e-12 {
            v[k + 1]
        } else {
            v[k] * (1.0 - frac) + v[k + 1] * frac
        }
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// max_i |φ_{i+1} − φ_i|/h
    pub fn lipschitz_quotient(&self) -> f64 {
        let h = self.grid.h();
        self.values
            .windows(2)
            .map(|w| (w[1] - w[0]).abs() / h)
            .fold(0.0, f64::max)
    }

    pub fn sup_distance(&self, other: &ValueField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Treatment of small jumps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmallJumpMode {
    /// Jumps with `j0 <= eps` are dropped (the truncated amplitude `j^ε`).
    StrictTruncation { eps: f64 },
    /// Jumps with `j0 < delta` are replaced by the extra diffusion
    /// `½ s²(δ, x) = ½ ∫_{j0<δ} j(x,z)² dν`.
    DiffusionCorrection { delta: f64 },
}

impl Default for SmallJumpMode {
    fn default() -> Self {
        SmallJumpMode::StrictTruncation { eps: 0.0 }
    }
}

impl SmallJumpMode {
    pub fn keeps(&self, j0: f64) -> bool {
        match *self {
            SmallJumpMode::StrictTruncation { eps } => j0 > eps,
            SmallJumpMode::DiffusionCorrection { delta } => j0 >= delta,
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            SmallJumpMode::StrictTruncation { eps } => eps,
            SmallJumpMode::DiffusionCorrection { delta } => delta,
        };
        if v >= 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!("small-jump level must be >= 0, got {v}")))
        }
    }
}

/// Which jumps of the η-decomposition a form collects.
#[derive(Clone, Copy, Debug, PartialEq)]
enum JumpPart {
    All,
    /// I¹: `j0 >= 1`, no compensator
    Big,
    /// I²: `η <= j0 < 1`
    Shell(f64),
    /// I³: `j0 < η`
    Small(f64),
}

impl JumpPart {
    fn contains(&self, j0: f64) -> bool {
        match *self {
            JumpPart::All => true,
            JumpPart::Big => j0 >= 1.0,
            JumpPart::Shell(eta) => j0 >= eta && j0 < 1.0,
            JumpPart::Small(eta) => j0 < eta,
        }
    }
}

/// `½ s²(δ, x)` for diffusion-correction mode, zero otherwise.
pub fn diffusion_correction(spec: &ProblemSpec, quad: &LevyQuadrature, mode: SmallJumpMode, x: f64) -> f64 {
    match mode {
        SmallJumpMode::StrictTruncation { .. } => 0.0,
        SmallJumpMode::DiffusionCorrection { delta } => {
            0.5 * quad
                .iter()
                .filter(|(z, _)| spec.jump.bound(*z) < delta)
                .map(|(z, w)| {
                    let y = spec.jump(x, z);
                    w * y * y
                })
                .sum::<f64>()
        }
    }
}

/// Compensated drift `b(x) = b̃(x) − ∫ j·1{j0 >= 1} dν` over the kept jumps.
pub fn compensated_drift(spec: &ProblemSpec, quad: &LevyQuadrature, mode: SmallJumpMode, x: f64) -> f64 {
    let big: f64 = quad
        .iter()
        .filter(|(z, _)| {
            let j0 = spec.jump.bound(*z);
            j0 >= 1.0 && mode.keeps(j0)
        })
        .map(|(z, w)| w * spec.jump(x, z))
        .sum();
    spec.drift(x) - big
}

fn local_form(
    spec: &ProblemSpec,
    grid: &Grid1D,
    ext: &Extension,
    quad: &LevyQuadrature,
    mode: SmallJumpMode,
    i: usize,
) -> AffineForm {
    let x = grid.x(i);
    let a = spec.diffusion(x) + diffusion_correction(spec, quad, mode, x);
    let b = compensated_drift(spec, quad, mode, x);
    let mut form = AffineForm::default();
    form.add_second_difference(grid, ext, i, a);
    form.add_upwind(grid, ext, i, b);
    form
}

/// Net coefficient of φ'(x) in the jump stencil restricted to `part`.
fn jump_drift(spec: &ProblemSpec, grid: &Grid1D, quad: &LevyQuadrature, mode: SmallJumpMode, x: f64, part: JumpPart) -> f64 {
    let h = grid.h();
    let mut c = 0.0;
    for (z, w) in quad.iter() {
        let j0 = spec.jump.bound(z);
        if !mode.keeps(j0) || !part.contains(j0) {
            continue;
        }
        let y = spec.jump(x, z);
        if y.abs() <= h {
            if j0 >= 1.0 {
                c += w * y;
            }
        } else if j0 < 1.0 {
            c -= w * y;
        }
    }
    c
}

fn jump_form(
    spec: &ProblemSpec,
    grid: &Grid1D,
    ext: &Extension,
    quad: &LevyQuadrature,
    mode: SmallJumpMode,
    i: usize,
    part: JumpPart,
) -> AffineForm {
    let h = grid.h();
    let x = grid.x(i);
    let mut form = AffineForm::default();
    let mut curvature = 0.0;
    let mut far_mass = 0.0;
    for (z, w) in quad.iter() {
        let j0 = spec.jump.bound(z);
        if !mode.keeps(j0) || !part.contains(j0) {
            continue;
        }
        let y = spec.jump(x, z);
        if y == 0.0 {
            continue;
        }
        if y.abs() <= h {
            curvature += 0.5 * w * y * y;
        } else {
            form.add_point(grid, ext, x + y, w);
            far_mass += w;
        }
    }
    form.add(i, -far_mass);
    if curvature != 0.0 {
        form.add_second_difference(grid, ext, i, curvature);
    }
    // Upwind direction from the total compensator drift, so that the three
    // parts of the decomposition add up to the full stencil.
    let total = jump_drift(spec, grid, quad, mode, x, JumpPart::All);
    let c = if part == JumpPart::All {
        total
    } else {
        jump_drift(spec, grid, quad, mode, x, part)
    };
    if c != 0.0 {
        let dir = if total >= 0.0 { 1.0 } else { -1.0 };
        if dir > 0.0 {
            form.add_point(grid, ext, x + h, c / h);
            form.add(i, -c / h);
        } else {
            form.add(i, c / h);
            form.add_point(grid, ext, x - h, -c / h);
        }
    }
    form
}

/// `(L_D φ)(x_i)`. Boundary nodes have exterior stencils and are rejected.
#[allow(non_snake_case)]
pub fn apply_Ld(spec: &ProblemSpec, field: &ValueField, quad: &LevyQuadrature, mode: SmallJumpMode, node: usize) -> Result<f64> {
    if !field.grid.is_interior(node) {
        return Err(Error::ExteriorStencil(node));
    }
    Ok(local_form(spec, &field.grid, &field.extension, quad, mode, node).eval(&field.values))
}

fn check_node(field: &ValueField, node: usize) -> Result<()> {
    if node >= field.grid.n {
        return Err(Error::ExteriorStencil(node));
    }
    Ok(())
}

fn check_quadrature(quad: &LevyQuadrature) -> Result<()> {
    if quad.iter().any(|(z, w)| !z.is_finite() || !w.is_finite()) {
        return Err(Error::NonFinite("quadrature node or weight".into()));
    }
    Ok(())
}

/// `(I φ)(x_i)` over the jumps kept by `mode`. In diffusion-correction mode
/// the replaced small jumps are not included here (see
/// [`diffusion_correction`]).
#[allow(non_snake_case)]
pub fn apply_I(spec: &ProblemSpec, field: &ValueField, quad: &LevyQuadrature, mode: SmallJumpMode, node: usize) -> Result<f64> {
    check_node(field, node)?;
    check_quadrature(quad)?;
    mode.validate()?;
    let v = jump_form(spec, &field.grid, &field.extension, quad, mode, node, JumpPart::All).eval(&field.values);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("Iφ at node {node}")));
    }
    Ok(v)
}

/// `(I¹_η φ, I²_η φ, I³_η φ)` at node `i`: jumps with `j0 >= 1`,
/// `η <= j0 < 1` and `j0 < η`.
#[allow(non_snake_case)]
pub fn decompose_I(
    spec: &ProblemSpec,
    field: &ValueField,
    quad: &LevyQuadrature,
    mode: SmallJumpMode,
    node: usize,
    eta: f64,
) -> Result<(f64, f64, f64)> {
    check_node(field, node)?;
    check_quadrature(quad)?;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid(format!("η must lie in (0, 1], got {eta}")));
    }
    let part = |p| jump_form(spec, &field.grid, &field.extension, quad, mode, node, p).eval(&field.values);
    Ok((part(JumpPart::Big), part(JumpPart::Shell(eta)), part(JumpPart::Small(eta))))
}

/// Displacement grid `{k·h : |k| <= K}` including ξ = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XiGrid {
    pub step: f64,
    pub max_index: usize,
}

impl XiGrid {
    /// Displacements spanning the full grid width.
    pub fn spanning(grid: &Grid1D) -> Self {
        XiGrid {
            step: grid.h(),
            max_index: grid.n - 1,
        }
    }

    pub fn len(&self) -> usize {
        2 * self.max_index + 1
    }

    pub fn is_empty(&self) -> bool {
        self.step <= 0.0 || !self.step.is_finite()
    }

    /// Signed indices ordered by |k|, then left first.
    fn ordered(&self) -> impl Iterator<Item = i64> {
        let m = self.max_index as i64;
        std::iter::once(0).chain((1..=m).flat_map(|k| [-k, k]))
    }
}

/// `Mu` with its minimizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub mu: ValueField,
    pub xi_star: Vec<f64>,
    /// Minimizer attained at the edge of the displacement grid.
    pub at_edge: Vec<bool>,
}

impl Intervention {
    pub fn any_at_edge(&self) -> bool {
        self.at_edge.iter().any(|&e| e)
    }
}

/// `(Mu)(x_i) = min_ξ [u(x_i + ξ) + B(ξ)]` over the displacement grid, ties
/// broken by smallest |ξ| and then leftmost.
pub fn intervention_operator(field: &ValueField, cost: &TransactionCost, xi: &XiGrid) -> Result<Intervention> {
    if xi.is_empty() {
        return Err(Error::EmptyXiGrid);
    }
    let grid = &field.grid;
    let on_grid = (xi.step - grid.h()).abs() <= 1e-12 * grid.h();
    let n = grid.n;
    let mut mu = Vec::with_capacity(n);
    let mut xi_star = Vec::with_capacity(n);
    let mut at_edge = Vec::with_capacity(n);
    for i in 0..n {
        let x = grid.x(i);
        let mut best = f64::INFINITY;
        let mut arg = 0i64;
        for k in xi.ordered() {
            let d = k as f64 * xi.step;
            let target = i as i64 + k;
            let v = if on_grid && target >= 0 && (target as usize) < n {
                field.values[target as usize]
            } else {
                field.eval(x + d)
            };
            let c = v + cost.eval(d);
            if c < best {
                best = c;
                arg = k;
            }
        }
        mu.push(best);
        xi_star.push(arg as f64 * xi.step);
        at_edge.push(arg.unsigned_abs() as usize == xi.max_index && xi.max_index > 0);
    }
    Ok(Intervention {
        mu: ValueField::new(*grid, mu, field.extension)?,
        xi_star,
        at_edge,
    })
}

/// Dense affine operator `u ↦ A u + g_bc` for `A = −L_D − I + r` on all grid
/// nodes; rows at the ends read ghost values from the extension.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    pub grid: Grid1D,
    pub extension: Extension,
    pub mode: SmallJumpMode,
    pub discount: f64,
    /// Row-major `n × n`.
    pub matrix: Vec<f64>,
    pub g_bc: Vec<f64>,
    /// `a(x) = ½σ²` per node, without the correction.
    pub diffusion: Vec<f64>,
    /// `½ s²(δ, x)` per node (zero in strict-truncation mode).
    pub correction: Vec<f64>,
    /// Compensated drift `b` per node.
    pub drift: Vec<f64>,
}

impl OperatorMatrix {
    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.grid.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.grid.n;
        &self.matrix[i * n..(i + 1) * n]
    }

    /// `A u + g_bc`
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.grid.n)
            .map(|i| self.row(i).iter().zip(u).map(|(a, b)| a * b).sum::<f64>() + self.g_bc[i])
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "row,col,value")?;
        let n = self.grid.n;
        for i in 0..n {
            for j in 0..n {
                let v = self.entry(i, j);
                if v != 0.0 {
                    writeln!(w, "{i},{j},{v:.17e}")?;
                }
            }
            writeln!(w, "{i},bc,{:.17e}", self.g_bc[i])?;
        }
        Ok(())
    }
}

/// Assembles `A = −L_D − I + r`. Fails if the local part is not an M-matrix.
#[allow(non_snake_case)]
pub fn assemble_A(
    spec: &ProblemSpec,
    grid: &Grid1D,
    quad: &LevyQuadrature,
    mode: SmallJumpMode,
    extension: Extension,
) -> Result<OperatorMatrix> {
    spec.validate()?;
    mode.validate()?;
    check_quadrature(quad)?;
    let n = grid.n;
    let r = spec.discount;
    let rows: Vec<Result<(Vec<f64>, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut local = local_form(spec, grid, &extension, quad, mode, i);
            local.compress();
            for &(k, w) in &local.terms {
                let ok = if k == i { w <= 0.0 } else { w >= 0.0 };
                if !ok || !w.is_finite() {
                    return Err(Error::NonMonotoneStencil { node: i, entry: -w });
                }
            }
            let jump = jump_form(spec, grid, &extension, quad, mode, i, JumpPart::All);
            let mut row = vec![0.0; n];
            row[i] += r;
            for &(k, w) in local.terms.iter().chain(&jump.terms) {
                row[k] -= w;
            }
            let g = -(local.constant + jump.constant);
            if row.iter().any(|v| !v.is_finite()) || !g.is_finite() {
                return Err(Error::NonFinite(format!("operator row {i}")));
            }
            Ok((row, g))
        })
        .collect();
    let mut matrix = Vec::with_capacity(n * n);
    let mut g_bc = Vec::with_capacity(n);
    for row in rows {
        let (row, g) = row?;
        matrix.extend_from_slice(&row);
        g_bc.push(g);
    }
    let xs = grid.nodes();
    Ok(OperatorMatrix {
        grid: *grid,
        extension,
        mode,
        discount: r,
        matrix,
        g_bc,
        diffusion: xs.iter().map(|&x| spec.diffusion(x)).collect(),
        correction: xs.iter().map(|&x| diffusion_correction(spec, quad, mode, x)).collect(),
        drift: xs.iter().map(|&x| compensated_drift(spec, quad, mode, x)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{LevyMeasure1D, QuadratureBuilder};
    use crate::model::{Drift, Jump, Volatility};
    use approx::assert_relative_eq;

    fn no_jumps() -> ProblemSpec {
        ProblemSpec {
            levy: LevyMeasure1D::Zero,
            ..ProblemSpec::reference()
        }
    }

    fn quad(spec: &ProblemSpec) -> LevyQuadrature {
        QuadratureBuilder::new(&spec.levy).build().unwrap()
    }

    const FULL: SmallJumpMode = SmallJumpMode::StrictTruncation { eps: 0.0 };

    #[test]
    fn grid_basics() {
        let g = Grid1D::new(-1.0, 1.0, 5).unwrap();
        assert_eq!(g.h(), 0.5);
        assert_eq!(g.nodes(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(Grid1D::new(0.0, 1.0, 2).is_err());
        assert!(Grid1D::new(1.0, 1.0, 5).is_err());
        assert_eq!(g.refined().n, 9);
    }

    #[test]
    fn field_extension() {
        let g = Grid1D::new(0.0, 1.0, 3).unwrap();
        let f = ValueField::new(g, vec![1.0, 2.0, 4.0], Extension::new(0.5, 3.0)).unwrap();
        assert_eq!(f.eval(0.25), 1.5);
        assert_eq!(f.eval(-2.0), 2.0);
        assert_eq!(f.eval(2.0), 7.0);
        assert!(ValueField::new(g, vec![1.0, f64::NAN, 0.0], Extension::default()).is_err());
    }

    #[test]
    fn local_operator_examples() {
        let spec = ProblemSpec {
            drift: Drift::Constant { value: 0.7 },
            ..no_jumps()
        };
        let q = quad(&spec);
        let g = Grid1D::new(-2.0, 2.0, 41).unwrap();
        let c = ValueField::constant(g, 3.0);
        assert_eq!(apply_Ld(&spec, &c, &q, FULL, 5).unwrap(), 0.0);
        let lin = ValueField::from_fn(g, |x| x).unwrap();
        assert_relative_eq!(apply_Ld(&spec, &lin, &q, FULL, 7).unwrap(), 0.7, epsilon = 1e-12);
        let spec = ProblemSpec {
            drift: Drift::Zero,
            ..no_jumps()
        };
        let quadratic = ValueField::from_fn(g, |x| 0.5 * x * x).unwrap();
        assert_relative_eq!(apply_Ld(&spec, &quadratic, &q, FULL, 20).unwrap(), 0.08, epsilon = 1e-10);
        assert!(matches!(apply_Ld(&spec, &quadratic, &q, FULL, 0), Err(Error::ExteriorStencil(0))));
    }

    #[test]
    fn nonlocal_quadratic_matches_second_moment() {
        let spec = ProblemSpec::reference();
        let q = quad(&spec);
        let g = Grid1D::new(-1.5, 1.5, 30001).unwrap();
        let phi = ValueField::from_fn(g, |x| 0.5 * x * x).unwrap();
        let v = apply_I(&spec, &phi, &q, FULL, 15000).unwrap();
        assert_relative_eq!(v, 2.0, max_relative = 1e-3);
    }

    #[test]
    fn nonlocal_linear_cancels() {
        let spec = ProblemSpec::reference();
        let q = quad(&spec);
        let g = Grid1D::new(-3.0, 3.0, 121).unwrap();
        let phi = ValueField::from_fn(g, |x| 2.0 * x - 1.0).unwrap();
        for i in [0, 3, 60, 117, 120] {
            assert!(apply_I(&spec, &phi, &q, FULL, i).unwrap().abs() < 1e-10);
        }
        let zero = LevyMeasure1D::Zero;
        let spec0 = ProblemSpec { levy: zero, ..spec };
        let q0 = quad(&spec0);
        assert_eq!(apply_I(&spec0, &phi, &q0, FULL, 60).unwrap(), 0.0);
    }

    #[test]
    fn decomposition_sums_to_full() {
        let spec = ProblemSpec {
            jump: Jump::Modulated { amplitude: 0.1 },
            levy: LevyMeasure1D::PowerLaw {
                intensity: 1.0,
                order: 1.5,
                z_max: 2.0,
            },
            ..ProblemSpec::reference()
        };
        let q = quad(&spec);
        let g = Grid1D::new(-4.0, 4.0, 161).unwrap();
        let phi = ValueField::from_fn(g, |x: f64| x.sin() + 0.1 * x * x).unwrap();
        for eta in [1.0, 0.5, 0.1, 0.03, 0.01] {
            for i in [0, 40, 80, 160] {
                let (a, b, c) = decompose_I(&spec, &phi, &q, FULL, i, eta).unwrap();
                let full = apply_I(&spec, &phi, &q, FULL, i).unwrap();
                assert!((a + b + c - full).abs() < 1e-10);
                if eta == 1.0 {
                    assert_eq!(b, 0.0);
                }
            }
        }
    }

    #[test]
    fn intervention_examples() {
        let g = Grid1D::new(-2.0, 2.0, 41).unwrap();
        let xi = XiGrid::spanning(&g);
        let b = TransactionCost::Affine {
            fixed: 1.0,
            proportional: 0.1,
        };
        let c = ValueField::constant(g, 2.0);
        let m = intervention_operator(&c, &b, &xi).unwrap();
        assert!(m.mu.values.iter().all(|&v| v == 3.0));
        assert!(m.xi_star.iter().all(|&x| x == 0.0));

        let sq = ValueField::from_fn(g, |x| x * x).unwrap();
        let k_only = TransactionCost::Affine {
            fixed: 1.0,
            proportional: 0.0,
        };
        let m = intervention_operator(&sq, &k_only, &xi).unwrap();
        for i in 0..g.n {
            assert_relative_eq!(m.mu.values[i], 1.0, epsilon = 1e-12);
            assert_relative_eq!(m.xi_star[i], -g.x(i), epsilon = 1e-12);
        }

        let abs = ValueField::from_fn(g, f64::abs).unwrap();
        let steep = TransactionCost::Affine {
            fixed: 1.0,
            proportional: 2.0,
        };
        let m = intervention_operator(&abs, &steep, &xi).unwrap();
        for i in 0..g.n {
            assert_relative_eq!(m.mu.values[i], g.x(i).abs() + 1.0, epsilon = 1e-12);
            assert_eq!(m.xi_star[i], 0.0);
        }
        let empty = XiGrid {
            step: 0.0,
            max_index: 3,
        };
        assert!(matches!(intervention_operator(&abs, &steep, &empty), Err(Error::EmptyXiGrid)));
    }

    #[test]
    fn intervention_ties_prefer_small_then_left() {
        let g = Grid1D::new(-2.0, 2.0, 5).unwrap();
        let f = ValueField::new(g, vec![0.0, 5.0, 5.0, 5.0, 0.0], Extension::new(1.0, 1.0)).unwrap();
        let k_only = TransactionCost::Affine {
            fixed: 1.0,
            proportional: 0.0,
        };
        let m = intervention_operator(&f, &k_only, &XiGrid::spanning(&g)).unwrap();
        assert_eq!(m.xi_star[2], -2.0);
        assert_eq!(m.xi_star[1], -1.0);
        assert!(!m.at_edge[2]);
        assert!(m.at_edge[4] || m.xi_star[4] == 0.0);
    }

    #[test]
    fn textbook_tridiagonal() {
        let spec = ProblemSpec {
            drift: Drift::Zero,
            volatility: Volatility::Constant { sigma: 2f64.sqrt() },
            ..no_jumps()
        };
        let g = Grid1D::new(0.0, 1.0, 11).unwrap();
        let a = assemble_A(&spec, &g, &quad(&spec), FULL, Extension::default()).unwrap();
        let h = g.h();
        for i in 1..10 {
            assert_relative_eq!(a.entry(i, i), 2.0 / (h * h) + 1.0, max_relative = 1e-12);
            assert_relative_eq!(a.entry(i, i - 1), -1.0 / (h * h), max_relative = 1e-12);
            assert_eq!(a.entry(i, i + 3), 0.0);
        }
    }

    #[test]
    fn matrix_reproduces_direct_application() {
        let spec = ProblemSpec {
            jump: Jump::Modulated { amplitude: 0.1 },
            drift: Drift::Nonlinear {
                theta: 0.5,
                amplitude: 0.3,
            },
            ..ProblemSpec::reference()
        };
        let q = quad(&spec);
        let g = Grid1D::new(-3.0, 3.0, 61).unwrap();
        let ext = Extension::new(0.4, 0.6);
        let a = assemble_A(&spec, &g, &q, FULL, ext).unwrap();
        let values: Vec<f64> = g.nodes().iter().map(|x| (1.3 * x).cos() + 0.2 * x).collect();
        let field = ValueField::new(g, values.clone(), ext).unwrap();
        let au = a.apply(&values);
        for i in 1..g.n - 1 {
            let direct = -apply_Ld(&spec, &field, &q, FULL, i).unwrap() - apply_I(&spec, &field, &q, FULL, i).unwrap()
                + spec.discount * values[i];
            assert!((au[i] - direct).abs() < 1e-10, "{i}: {} vs {direct}", au[i]);
        }
        for i in 0..g.n {
            let row_sum: f64 = a.row(i).iter().sum();
            assert!((row_sum - spec.discount).abs() < 1e-9, "{i}: {row_sum}");
        }
    }

    #[test]
    fn assembled_matrix_is_monotone() {
        let spec = ProblemSpec::reference();
        let q = quad(&spec);
        let g = Grid1D::new(-10.0, 10.0, 201).unwrap();
        let a = assemble_A(&spec, &g, &q, FULL, Extension::new(0.5, 0.5)).unwrap();
        for i in 0..g.n {
            let mut off = 0.0;
            for j in 0..g.n {
                if i != j {
                    assert!(a.entry(i, j) <= 0.0);
                    off += a.entry(i, j).abs();
                }
            }
            assert!(a.entry(i, i) >= off + spec.discount - 1e-9);
        }
    }

    #[test]
    fn diffusion_correction_mode_reports_extra_diffusion() {
        let spec = ProblemSpec::reference();
        let q = QuadratureBuilder::new(&spec.levy).breaks(&[0.1]).build().unwrap();
        let g = Grid1D::new(-2.0, 2.0, 41).unwrap();
        let mode = SmallJumpMode::DiffusionCorrection { delta: 0.1 };
        let a = assemble_A(&spec, &g, &q, mode, Extension::default()).unwrap();
        assert_relative_eq!(a.correction[5], 0.5 * 4.0 * 0.1f64.sqrt(), max_relative = 1e-6);
        assert_relative_eq!(a.diffusion[5], 0.08, max_relative = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn intervention_monotone_and_translation_invariant(
                vals in proptest::collection::vec(-5.0f64..5.0, 21),
                bump in proptest::collection::vec(0.0f64..2.0, 21),
                c in -3.0f64..3.0,
            ) {
                let g = Grid1D::new(-1.0, 1.0, 21).unwrap();
                let xi = XiGrid::spanning(&g);
                let b = TransactionCost::Affine { fixed: 0.5, proportional: 0.3 };
                let ext = Extension::new(0.2, 0.2);
                let u = ValueField::new(g, vals.clone(), ext).unwrap();
                let v = ValueField::new(g, vals.iter().zip(&bump).map(|(a, d)| a + d).collect(), ext).unwrap();
                let w = ValueField::new(g, vals.iter().map(|a| a + c).collect(), ext).unwrap();
                let mu = intervention_operator(&u, &b, &xi).unwrap().mu;
                let mv = intervention_operator(&v, &b, &xi).unwrap().mu;
                let mw = intervention_operator(&w, &b, &xi).unwrap().mu;
                for i in 0..g.n {
                    prop_assert!(mu.values[i] <= mv.values[i] + 1e-12);
                    prop_assert!((mw.values[i] - mu.values[i] - c).abs() < 1e-12);
                }
            }

            #[test]
            fn constants_are_scaled_by_discount(c in -10.0f64..10.0, i in 1usize..80) {
                let spec = ProblemSpec::reference();
                let q = QuadratureBuilder::new(&spec.levy).nodes(64).build().unwrap();
                let g = Grid1D::new(-4.0, 4.0, 81).unwrap();
                let a = assemble_A(&spec, &g, &q, FULL, Extension::default()).unwrap();
                let au = a.apply(&vec![c; g.n]);
                prop_assert!((au[i] - spec.discount * c).abs() < 1e-9 * (1.0 + c.abs()));
            }

            #[test]
            fn discrete_comparison(vals in proptest::collection::vec(0.0f64..3.0, 41), i in 1usize..40) {
                let spec = ProblemSpec::reference();
                let q = QuadratureBuilder::new(&spec.levy).nodes(64).build().unwrap();
                let g = Grid1D::new(-2.0, 2.0, 41).unwrap();
                let a = assemble_A(&spec, &g, &q, FULL, Extension::new(0.3, 0.3)).unwrap();
                let mut v = vals.clone();
                let mut u: Vec<f64> = vals.iter().map(|x| x - 0.5).collect();
                u[i] = v[i];
                v[i] = u[i];
                let au = a.apply(&u);
                let av = a.apply(&v);
                prop_assert!(au[i] >= av[i] - 1e-9);
            }
        }
    }
}
