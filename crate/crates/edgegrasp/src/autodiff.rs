//! Minimal reverse-mode automatic differentiation over dense f64 matrices.
//!
//! A [`Tape`] records a forward computation as a flat list of nodes; each op
//! stores a closure that routes upstream gradients to its parents. Calling
//! [`Tape::backward`] walks the list in reverse and accumulates a gradient
//! for every node, in particular the leaves holding trainable parameters.
//!
//! Scalar features are `N×D` matrices. Vector features (`vn_*` ops) pack
//! `N×C×3` as `N×(3C)` row-major, i.e. column `c*3 + a` holds spatial
//! component `a` of channel `c`; rotations act on the 3-component groups.
//!
//! Gradient routing for the piecewise ops (relu masks, max pools, clamps)
//! follows the forward-time branch, so analytic gradients match central
//! finite differences away from the (measure-zero) branch boundaries.

use std::cell::RefCell;

use ndarray::Array2;

/// Dense row-major matrix of f64.
pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackFn = Box<dyn Fn(&Mat, &[Node], &mut [Option<Mat>])>;

struct Node {
    value: Mat,
    back: Option<BackFn>,
}

/// Gradients per tape node, indexed by `Var`.
pub struct Gradients(Vec<Option<Mat>>);

impl Gradients {
    /// Gradient of the loss w.r.t. `var`; zeros if the loss does not depend
    /// on it (e.g. pooling-direction weights, whose effect is selection-only).
    pub fn get(&self, var: Var, tape: &Tape) -> Mat {
        match &self.0[var.0] {
            Some(g) => g.clone(),
            None => Mat::zeros(tape.shape(var)),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

fn accumulate(grads: &mut [Option<Mat>], id: usize, g: Mat) {
    match &mut grads[id] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&self, value: Mat, back: Option<BackFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, back });
        Var(nodes.len() - 1)
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record a leaf. Leaves get gradients but propagate nothing further.
    pub fn leaf(&self, value: Mat) -> Var {
        self.push(value, None)
    }

    pub fn value(&self, var: Var) -> Mat {
        self.nodes.borrow()[var.0].value.clone()
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        let v = &nodes[var.0].value;
        (v.nrows(), v.ncols())
    }

    pub fn scalar_value(&self, var: Var) -> f64 {
        self.nodes.borrow()[var.0].value[(0, 0)]
    }

    /// Reverse pass from a 1×1 loss node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.len(), 1, "loss must be a 1x1 node");
        let mut grads: Vec<Option<Mat>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::ones((1, 1)));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].clone() else { continue };
            if let Some(back) = &nodes[id].back {
                back(&g, &nodes, &mut grads);
            }
        }
        Gradients(grads)
    }

    // ---- scalar-feature ops -------------------------------------------

    /// `x · wᵀ + b` with `w: out×in`, `b: 1×out` broadcast over rows.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = {
            let n = self.nodes.borrow();
            (n[x.0].value.clone(), n[w.0].value.clone(), n[b.0].value.clone())
        };
        assert_eq!(xv.ncols(), wv.ncols(), "linear: in-dim mismatch");
        assert_eq!(bv.nrows(), 1);
        assert_eq!(bv.ncols(), wv.nrows());
        let mut out = xv.dot(&wv.t());
        out += &bv;
        self.push(
            out,
            Some(Box::new(move |g, nodes, grads| {
                let gx = g.dot(&nodes[w.0].value);
                let gw = g.t().dot(&nodes[x.0].value);
                let gb = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
                accumulate(grads, x.0, gx);
                accumulate(grads, w.0, gw);
                accumulate(grads, b.0, gb);
            })),
        )
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let out = {
            let n = self.nodes.borrow();
            n[a.0].value.dot(&n[b.0].value)
        };
        self.push(
            out,
            Some(Box::new(move |g, nodes, grads| {
                accumulate(grads, a.0, g.dot(&nodes[b.0].value.t()));
                accumulate(grads, b.0, nodes[a.0].value.t().dot(g));
            })),
        )
    }

    pub fn relu(&self, x: Var) -> Var {
        let out = self.nodes.borrow()[x.0].value.mapv(|v| v.max(0.0));
        self.push(
            out,
            Some(Box::new(move |g, nodes, grads| {
                let mask = nodes[x.0].value.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                accumulate(grads, x.0, g * &mask);
            })),
        )
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let out = self.nodes.borrow()[x.0].value.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let saved = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                let d = saved.mapv(|s| s * (1.0 - s));
                accumulate(grads, x.0, g * &d);
            })),
        )
    }

    pub fn ln(&self, x: Var) -> Var {
        let out = self.nodes.borrow()[x.0].value.mapv(f64::ln);
        self.push(
            out,
            Some(Box::new(move |g, nodes, grads| {
                let d = nodes[x.0].value.mapv(|v| 1.0 / v);
                accumulate(grads, x.0, g * &d);
            })),
        )
    }

    pub fn sqrt(&self, x: Var) -> Var {
        let out = self.nodes.borrow()[x.0].value.mapv(f64::sqrt);
        let saved = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                let d = saved.mapv(|s| 0.5 / s);
                accumulate(grads, x.0, g * &d);
            })),
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = {
            let n = self.nodes.borrow();
            &n[a.0].value + &n[b.0].value
        };
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                accumulate(grads, a.0, g.clone());
                accumulate(grads, b.0, g.clone());
            })),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let out = {
            let n = self.nodes.borrow();
            &n[a.0].value - &n[b.0].value
        };
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                accumulate(grads, a.0, g.clone());
                accumulate(grads, b.0, -g);
            })),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let out = {
            let n = self.nodes.borrow();
            &n[a.0].value * &n[b.0].value
        };
        self.push(
            out,
            Some(Box::new(move |g, nodes, grads| {
                accumulate(grads, a.0, g * &nodes[b.0].value);
                accumulate(grads, b.0, g * &nodes[a.0].value);
            })),
        )
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let out = {
            let n = self.nodes.borrow();
            &n[a.0].value / &n[b.0].value
        };
        self.push(
            out,
            Some(Box::new(move |g, nodes, grads| {
                let bv = &nodes[b.0].value;
                let av = &nodes[a.0].value;
                accumulate(grads, a.0, g / bv);
                accumulate(grads, b.0, -(g * av) / (bv * bv));
            })),
        )
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        let out = self.nodes.borrow()[x.0].value.mapv(|v| v * c);
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                accumulate(grads, x.0, g.mapv(|v| v * c));
            })),
        )
    }

    pub fn add_scalar(&self, x: Var, c: f64) -> Var {
        let out = self.nodes.borrow()[x.0].value.mapv(|v| v + c);
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                accumulate(grads, x.0, g.clone());
            })),
        )
    }

    /// Clamp into `[lo, hi]`; gradient passes only where unclamped.
    pub fn clamp(&self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.nodes.borrow()[x.0].value.mapv(|v| v.clamp(lo, hi));
        self.push(
            out,
            Some(Box::new(move |g, nodes, grads| {
                let mask = nodes[x.0]
                    .value
                    .mapv(|v| if v >= lo && v <= hi { 1.0 } else { 0.0 });
                accumulate(grads, x.0, g * &mask);
            })),
        )
    }

    pub fn concat_cols(&self, a: Var, b: Var) -> Var {
        let (av, bv) = {
            let n = self.nodes.borrow();
            (n[a.0].value.clone(), n[b.0].value.clone())
        };
        assert_eq!(av.nrows(), bv.nrows(), "concat_cols: row mismatch");
        let ca = av.ncols();
        let out = ndarray::concatenate(ndarray::Axis(1), &[av.view(), bv.view()]).unwrap();
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                let ga = g.slice(ndarray::s![.., ..ca]).to_owned();
                let gb = g.slice(ndarray::s![.., ca..]).to_owned();
                accumulate(grads, a.0, ga);
                accumulate(grads, b.0, gb);
            })),
        )
    }

    /// Select rows by index; indices may repeat.
    pub fn gather_rows(&self, x: Var, indices: Vec<usize>) -> Var {
        let xv = self.nodes.borrow()[x.0].value.clone();
        let cols = xv.ncols();
        let mut out = Mat::zeros((indices.len(), cols));
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).assign(&xv.row(i));
        }
        let rows_in = xv.nrows();
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                let mut gx = Mat::zeros((rows_in, cols));
                for (r, &i) in indices.iter().enumerate() {
                    let mut row = gx.row_mut(i);
                    row += &g.row(r);
                }
                accumulate(grads, x.0, gx);
            })),
        )
    }

    /// Repeat a 1×D row n times.
    pub fn broadcast_rows(&self, x: Var, n: usize) -> Var {
        let xv = self.nodes.borrow()[x.0].value.clone();
        assert_eq!(xv.nrows(), 1, "broadcast_rows expects a single row");
        let out = Mat::from_shape_fn((n, xv.ncols()), |(_, c)| xv[(0, c)]);
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                let gx = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
                accumulate(grads, x.0, gx);
            })),
        )
    }

    /// Per-segment columnwise max over contiguous row ranges.
    ///
    /// `segments[s] = (start, end)` delimits the rows of segment `s`; the
    /// output has one row per segment. The first maximal row wins ties, so
    /// gradient routing is deterministic.
    pub fn segment_max(&self, x: Var, segments: Vec<(usize, usize)>) -> Var {
        let xv = self.nodes.borrow()[x.0].value.clone();
        let cols = xv.ncols();
        let rows_in = xv.nrows();
        let mut out = Mat::zeros((segments.len(), cols));
        let mut argmax = vec![0usize; segments.len() * cols];
        for (s, &(start, end)) in segments.iter().enumerate() {
            assert!(start < end && end <= rows_in, "bad segment {start}..{end}");
            for c in 0..cols {
                let mut best_row = start;
                let mut best = xv[(start, c)];
                for r in start + 1..end {
                    if xv[(r, c)] > best {
                        best = xv[(r, c)];
                        best_row = r;
                    }
                }
                out[(s, c)] = best;
                argmax[s * cols + c] = best_row;
            }
        }
        let n_seg = segments.len();
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                let mut gx = Mat::zeros((rows_in, cols));
                for s in 0..n_seg {
                    for c in 0..cols {
                        gx[(argmax[s * cols + c], c)] += g[(s, c)];
                    }
                }
                accumulate(grads, x.0, gx);
            })),
        )
    }

    pub fn sum_all(&self, x: Var) -> Var {
        let xv = self.nodes.borrow()[x.0].value.clone();
        let total = xv.sum();
        let shape = (xv.nrows(), xv.ncols());
        self.push(
            Mat::from_elem((1, 1), total),
            Some(Box::new(move |g, _, grads| {
                accumulate(grads, x.0, Mat::from_elem(shape, g[(0, 0)]));
            })),
        )
    }

    // ---- vector-feature ops -------------------------------------------

    /// Channel-mixing map `out[n,co,·] = Σ_ci w[co,ci]·x[n,ci,·]`, the only
    /// linear layer that commutes with rotations (no bias).
    pub fn vn_linear(&self, x: Var, w: Var) -> Var {
        let (xv, wv) = {
            let n = self.nodes.borrow();
            (n[x.0].value.clone(), n[w.0].value.clone())
        };
        let c_in = wv.ncols();
        let c_out = wv.nrows();
        assert_eq!(xv.ncols(), c_in * 3, "vn_linear: channel mismatch");
        let n_rows = xv.nrows();
        // Work one spatial component at a time so each product is a gemm.
        let mut out = Mat::zeros((n_rows, c_out * 3));
        let mut comp = Mat::zeros((n_rows, c_in));
        for a in 0..3 {
            for r in 0..n_rows {
                for c in 0..c_in {
                    comp[(r, c)] = xv[(r, c * 3 + a)];
                }
            }
            let prod = comp.dot(&wv.t());
            for r in 0..n_rows {
                for c in 0..c_out {
                    out[(r, c * 3 + a)] = prod[(r, c)];
                }
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, nodes, grads| {
                let wv = &nodes[w.0].value;
                let xv = &nodes[x.0].value;
                let n_rows = xv.nrows();
                let mut gx = Mat::zeros((n_rows, c_in * 3));
                let mut gw = Mat::zeros((c_out, c_in));
                let mut gcomp = Mat::zeros((n_rows, c_out));
                let mut xcomp = Mat::zeros((n_rows, c_in));
                for a in 0..3 {
                    for r in 0..n_rows {
                        for c in 0..c_out {
                            gcomp[(r, c)] = g[(r, c * 3 + a)];
                        }
                        for c in 0..c_in {
                            xcomp[(r, c)] = xv[(r, c * 3 + a)];
                        }
                    }
                    let gxa = gcomp.dot(wv);
                    for r in 0..n_rows {
                        for c in 0..c_in {
                            gx[(r, c * 3 + a)] = gxa[(r, c)];
                        }
                    }
                    gw += &gcomp.t().dot(&xcomp);
                }
                accumulate(grads, x.0, gx);
                accumulate(grads, w.0, gw);
            })),
        )
    }

    /// Per-(row, channel) inner product of two packed vector features:
    /// `out[n,c] = Σ_a a[n,c,a]·b[n,c,a]`.
    pub fn vn_dot(&self, a: Var, b: Var) -> Var {
        let (av, bv) = {
            let n = self.nodes.borrow();
            (n[a.0].value.clone(), n[b.0].value.clone())
        };
        assert_eq!(av.dim(), bv.dim(), "vn_dot: shape mismatch");
        let channels = av.ncols() / 3;
        let mut out = Mat::zeros((av.nrows(), channels));
        for r in 0..av.nrows() {
            for c in 0..channels {
                let mut s = 0.0;
                for k in 0..3 {
                    s += av[(r, c * 3 + k)] * bv[(r, c * 3 + k)];
                }
                out[(r, c)] = s;
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, nodes, grads| {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                let mut ga = Mat::zeros(av.dim());
                let mut gb = Mat::zeros(bv.dim());
                for r in 0..av.nrows() {
                    for c in 0..channels {
                        let gv = g[(r, c)];
                        for k in 0..3 {
                            ga[(r, c * 3 + k)] = gv * bv[(r, c * 3 + k)];
                            gb[(r, c * 3 + k)] = gv * av[(r, c * 3 + k)];
                        }
                    }
                }
                accumulate(grads, a.0, ga);
                accumulate(grads, b.0, gb);
            })),
        )
    }

    /// Scale each channel 3-vector by a per-(row, channel) scalar.
    pub fn vn_scale(&self, v: Var, s: Var) -> Var {
        let (vv, sv) = {
            let n = self.nodes.borrow();
            (n[v.0].value.clone(), n[s.0].value.clone())
        };
        let channels = sv.ncols();
        assert_eq!(vv.ncols(), channels * 3, "vn_scale: channel mismatch");
        assert_eq!(vv.nrows(), sv.nrows());
        let mut out = vv.clone();
        for r in 0..vv.nrows() {
            for c in 0..channels {
                for k in 0..3 {
                    out[(r, c * 3 + k)] *= sv[(r, c)];
                }
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, nodes, grads| {
                let vv = &nodes[v.0].value;
                let sv = &nodes[s.0].value;
                let mut gv = Mat::zeros(vv.dim());
                let mut gs = Mat::zeros(sv.dim());
                for r in 0..vv.nrows() {
                    for c in 0..channels {
                        let mut acc = 0.0;
                        for k in 0..3 {
                            gv[(r, c * 3 + k)] = g[(r, c * 3 + k)] * sv[(r, c)];
                            acc += g[(r, c * 3 + k)] * vv[(r, c * 3 + k)];
                        }
                        gs[(r, c)] = acc;
                    }
                }
                accumulate(grads, v.0, gv);
                accumulate(grads, s.0, gs);
            })),
        )
    }

    /// Per-channel row selection: `out[s, c, ·] = x[idx[s][c], c, ·]`.
    ///
    /// Used by the vector max pool; the selection indices come from forward
    /// values and are treated as constants, so gradient flows only into the
    /// selected entries of `x`.
    pub fn vn_gather_channel_rows(&self, x: Var, idx: Vec<Vec<usize>>) -> Var {
        let xv = self.nodes.borrow()[x.0].value.clone();
        let channels = xv.ncols() / 3;
        let rows_in = xv.nrows();
        let mut out = Mat::zeros((idx.len(), xv.ncols()));
        for (s, per_channel) in idx.iter().enumerate() {
            assert_eq!(per_channel.len(), channels);
            for (c, &r) in per_channel.iter().enumerate() {
                for k in 0..3 {
                    out[(s, c * 3 + k)] = xv[(r, c * 3 + k)];
                }
            }
        }
        let cols = xv.ncols();
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                let mut gx = Mat::zeros((rows_in, cols));
                for (s, per_channel) in idx.iter().enumerate() {
                    for (c, &r) in per_channel.iter().enumerate() {
                        for k in 0..3 {
                            gx[(r, c * 3 + k)] += g[(s, c * 3 + k)];
                        }
                    }
                }
                accumulate(grads, x.0, gx);
            })),
        )
    }

    /// Per-row contraction of a packed vector feature with a per-row 3×3
    /// matrix: `out[n, c, r] = Σ_a f[n, c, a]·t[n, r, a]` (i.e. `f·tᵀ`).
    pub fn vn_contract(&self, f: Var, t: Var) -> Var {
        let (fv, tv) = {
            let n = self.nodes.borrow();
            (n[f.0].value.clone(), n[t.0].value.clone())
        };
        assert_eq!(tv.ncols(), 9, "vn_contract: t must be N×(3·3)");
        assert_eq!(fv.nrows(), tv.nrows());
        let channels = fv.ncols() / 3;
        let mut out = Mat::zeros((fv.nrows(), channels * 3));
        for n in 0..fv.nrows() {
            for c in 0..channels {
                for r in 0..3 {
                    let mut s = 0.0;
                    for a in 0..3 {
                        s += fv[(n, c * 3 + a)] * tv[(n, r * 3 + a)];
                    }
                    out[(n, c * 3 + r)] = s;
                }
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, nodes, grads| {
                let fv = &nodes[f.0].value;
                let tv = &nodes[t.0].value;
                let mut gf = Mat::zeros(fv.dim());
                let mut gt = Mat::zeros(tv.dim());
                for n in 0..fv.nrows() {
                    for c in 0..channels {
                        for r in 0..3 {
                            let gv = g[(n, c * 3 + r)];
                            for a in 0..3 {
                                gf[(n, c * 3 + a)] += gv * tv[(n, r * 3 + a)];
                                gt[(n, r * 3 + a)] += gv * fv[(n, c * 3 + a)];
                            }
                        }
                    }
                }
                accumulate(grads, f.0, gf);
                accumulate(grads, t.0, gt);
            })),
        )
    }
}

/// Central-difference gradients of `f` w.r.t. each entry of each parameter.
///
/// The independent oracle used by the gradient test suites: evaluates `f`
/// at `p ± h` per entry and never touches the tape.
pub fn finite_difference_gradients(
    mut f: impl FnMut(&[Mat]) -> f64,
    params: &[Mat],
    h: f64,
) -> Vec<Mat> {
    let mut work: Vec<Mat> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut grad = Mat::zeros(params[pi].dim());
        for r in 0..params[pi].nrows() {
            for c in 0..params[pi].ncols() {
                let orig = work[pi][(r, c)];
                work[pi][(r, c)] = orig + h;
                let up = f(&work);
                work[pi][(r, c)] = orig - h;
                let down = f(&work);
                work[pi][(r, c)] = orig;
                grad[(r, c)] = (up - down) / (2.0 * h);
            }
        }
        out.push(grad);
    }
    out
}

/// Largest relative error between analytic and reference gradients, with an
/// absolute floor below which entries count as matching.
pub fn max_relative_error(analytic: &Mat, reference: &Mat, abs_floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, r) in analytic.iter().zip(reference.iter()) {
        let diff = (a - r).abs();
        if diff <= abs_floor {
            continue;
        }
        worst = worst.max(diff / a.abs().max(r.abs()).max(abs_floor));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_mat(rows: usize, cols: usize, rng: &mut crate::rng::Stream) -> Mat {
        Mat::from_shape_fn((rows, cols), |_| rng.gen::<f64>() * 2.0 - 1.0)
    }

    /// Check tape gradients against finite differences for a graph builder.
    fn check_grads(
        params: Vec<Mat>,
        build: impl Fn(&Tape, &[Var]) -> Var,
        tol: f64,
    ) {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&tape, &vars);
        let grads = tape.backward(loss);

        let fd = finite_difference_gradients(
            |ps| {
                let t = Tape::new();
                let vs: Vec<Var> = ps.iter().map(|p| t.leaf(p.clone())).collect();
                t.scalar_value(build(&t, &vs))
            },
            &params,
            1e-5,
        );
        for (i, fd_grad) in fd.iter().enumerate() {
            let analytic = grads.get(vars[i], &tape);
            let err = max_relative_error(&analytic, fd_grad, 1e-8);
            assert!(err < tol, "param {i}: rel err {err}");
        }
    }

    #[test]
    fn linear_relu_chain_gradients() {
        let mut rng = crate::rng::master(50);
        let x = random_mat(5, 4, &mut rng);
        let w = random_mat(3, 4, &mut rng);
        let b = random_mat(1, 3, &mut rng);
        check_grads(vec![x, w, b], |t, v| {
            let h = t.relu(t.linear(v[0], v[1], v[2]));
            t.sum_all(h)
        }, 1e-6);
    }

    #[test]
    fn sigmoid_ln_clamp_gradients() {
        let mut rng = crate::rng::master(51);
        let x = random_mat(4, 3, &mut rng);
        check_grads(vec![x], |t, v| {
            let s = t.sigmoid(v[0]);
            let c = t.clamp(s, 1e-7, 1.0 - 1e-7);
            let l = t.ln(c);
            t.sum_all(l)
        }, 1e-6);
    }

    #[test]
    fn elementwise_ops_gradients() {
        let mut rng = crate::rng::master(52);
        let a = random_mat(3, 3, &mut rng);
        let b = random_mat(3, 3, &mut rng).mapv(|v| v + 3.0); // keep away from 0 for div
        check_grads(vec![a, b], |t, v| {
            let m = t.mul(v[0], v[1]);
            let d = t.div(m, v[1]);
            let s = t.sub(d, v[0]); // ~0 but gradient structure is nontrivial
            let q = t.add(s, t.scale(v[0], 0.5));
            t.sum_all(t.mul(q, q))
        }, 1e-5);
    }

    #[test]
    fn sqrt_gradient() {
        let mut rng = crate::rng::master(53);
        let a = random_mat(3, 2, &mut rng).mapv(|v| v.abs() + 0.5);
        check_grads(vec![a], |t, v| t.sum_all(t.sqrt(v[0])), 1e-6);
    }

    #[test]
    fn gather_concat_broadcast_gradients() {
        let mut rng = crate::rng::master(54);
        let x = random_mat(5, 3, &mut rng);
        let y = random_mat(1, 2, &mut rng);
        check_grads(vec![x, y], |t, v| {
            let g = t.gather_rows(v[0], vec![0, 2, 2, 4]);
            let b = t.broadcast_rows(v[1], 4);
            let c = t.concat_cols(g, b);
            t.sum_all(t.mul(c, c))
        }, 1e-6);
    }

    #[test]
    fn segment_max_forward_and_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, 5.0], [3.0, 2.0], [7.0, 1.0], [2.0, 9.0]]);
        let m = tape.segment_max(x, vec![(0, 2), (2, 4)]);
        assert_eq!(tape.value(m), array![[3.0, 5.0], [7.0, 9.0]]);

        let mut rng = crate::rng::master(55);
        let xr = random_mat(6, 4, &mut rng);
        check_grads(vec![xr], |t, v| {
            let m = t.segment_max(v[0], vec![(0, 3), (3, 6)]);
            t.sum_all(t.mul(m, m))
        }, 1e-6);
    }

    #[test]
    fn matmul_gradient() {
        let mut rng = crate::rng::master(56);
        let a = random_mat(3, 4, &mut rng);
        let b = random_mat(4, 2, &mut rng);
        check_grads(vec![a, b], |t, v| {
            let p = t.matmul(v[0], v[1]);
            t.sum_all(t.mul(p, p))
        }, 1e-6);
    }

    #[test]
    fn vn_linear_matches_loop_oracle_and_gradient() {
        let mut rng = crate::rng::master(57);
        let x = random_mat(4, 5 * 3, &mut rng);
        let w = random_mat(3, 5, &mut rng);
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let wv = tape.leaf(w.clone());
        let out = tape.value(tape.vn_linear(xv, wv));
        for n in 0..4 {
            for co in 0..3 {
                for a in 0..3 {
                    let mut s = 0.0;
                    for ci in 0..5 {
                        s += w[(co, ci)] * x[(n, ci * 3 + a)];
                    }
                    assert!((out[(n, co * 3 + a)] - s).abs() < 1e-12);
                }
            }
        }
        check_grads(vec![x, w], |t, v| {
            let o = t.vn_linear(v[0], v[1]);
            t.sum_all(t.mul(o, o))
        }, 1e-6);
    }

    #[test]
    fn vn_dot_scale_gradients() {
        let mut rng = crate::rng::master(58);
        let a = random_mat(3, 4 * 3, &mut rng);
        let b = random_mat(3, 4 * 3, &mut rng);
        check_grads(vec![a, b], |t, v| {
            let d = t.vn_dot(v[0], v[1]);
            let s = t.vn_scale(v[0], d);
            t.sum_all(t.mul(s, s))
        }, 1e-5);
    }

    #[test]
    fn vn_contract_matches_loop_oracle_and_gradient() {
        let mut rng = crate::rng::master(59);
        let f = random_mat(3, 4 * 3, &mut rng);
        let tmat = random_mat(3, 9, &mut rng);
        let tape = Tape::new();
        let fv = tape.leaf(f.clone());
        let tv = tape.leaf(tmat.clone());
        let out = tape.value(tape.vn_contract(fv, tv));
        for n in 0..3 {
            for c in 0..4 {
                for r in 0..3 {
                    let mut s = 0.0;
                    for a in 0..3 {
                        s += f[(n, c * 3 + a)] * tmat[(n, r * 3 + a)];
                    }
                    assert!((out[(n, c * 3 + r)] - s).abs() < 1e-12);
                }
            }
        }
        check_grads(vec![f, tmat], |t, v| {
            let o = t.vn_contract(v[0], v[1]);
            t.sum_all(t.mul(o, o))
        }, 1e-5);
    }

    #[test]
    fn vn_gather_channel_rows_gradient() {
        let mut rng = crate::rng::master(60);
        let x = random_mat(5, 3 * 3, &mut rng);
        let idx = vec![vec![0, 2, 4], vec![1, 1, 3]];
        check_grads(vec![x], move |t, v| {
            let g = t.vn_gather_channel_rows(v[0], idx.clone());
            t.sum_all(t.mul(g, g))
        }, 1e-6);
    }

    #[test]
    fn gradient_accumulates_over_shared_parents() {
        // y = x + x: dy/dx = 2 everywhere.
        let tape = Tape::new();
        let x = tape.leaf(array![[1.5]]);
        let y = tape.add(x, x);
        let grads = tape.backward(y);
        assert_eq!(grads.get(x, &tape)[(0, 0)], 2.0);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(array![[2.0]]);
        let unused = tape.leaf(array![[5.0, 5.0]]);
        let y = tape.mul(x, x);
        let grads = tape.backward(y);
        assert_eq!(grads.get(unused, &tape), Mat::zeros((1, 2)));
    }
}
