//! Layer-wise neuron alignment: naive weight matching, covariance-weighted
//! weight matching and activation matching.
//!
//! A stack entry `π` for hidden layer `ℓ` pairs neuron `i` of network A with
//! neuron `π(i)` of network B. Applying the stack to B gives the permuted
//! network whose layer-`ℓ` weights are `W̃[i, j] = W[π_ℓ(i), π_{ℓ−1}(j)]`.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::assignment::{pairwise_sq_dist, solve_lap, CostMatrix, Permutation};
use crate::error::{Error, Result};
use crate::network::{Layer, Mlp};
use crate::numerics::{approx_dim, psd_sqrt, second_moment, sq_dist, Matrix};

/// One permutation per hidden layer; input and output layers are fixed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PermutationStack {
    layers: Vec<Permutation>,
}

impl PermutationStack {
    pub fn new(layers: Vec<Permutation>) -> Self {
        Self { layers }
    }

    pub fn identity(net: &Mlp) -> Self {
        let dims = &net.arch().dims;
        Self::new(
            dims[1..dims.len() - 1]
                .iter()
                .map(|&m| Permutation::identity(m))
                .collect(),
        )
    }

    /// Uniformly random permutations at every hidden layer.
    pub fn random(net: &Mlp, rng: &mut crate::numerics::RngState) -> Self {
        let dims = &net.arch().dims;
        Self::new(
            dims[1..dims.len() - 1]
                .iter()
                .map(|&m| Permutation::new(rng.permutation(m)).expect("bijective"))
                .collect(),
        )
    }

    pub fn layers(&self) -> &[Permutation] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.layers.iter().all(Permutation::is_identity)
    }

    pub fn inverse(&self) -> Self {
        Self::new(self.layers.iter().map(Permutation::inverse).collect())
    }

    pub fn check(&self, net: &Mlp) -> Result<()> {
        let dims = &net.arch().dims;
        let hidden = &dims[1..dims.len() - 1];
        if self.layers.len() != hidden.len()
            || self.layers.iter().zip(hidden).any(|(p, &m)| p.len() != m)
        {
            return Err(Error::Argument(format!(
                "stack sizes {:?} do not match hidden widths {:?}",
                self.layers.iter().map(Permutation::len).collect::<Vec<_>>(),
                hidden
            )));
        }
        Ok(())
    }

    /// Row order for layer `l` (1-based), identity at the output.
    fn rows(&self, l: usize, m: usize) -> Vec<usize> {
        match self.layers.get(l - 1) {
            Some(p) => p.as_slice().to_vec(),
            None => (0..m).collect(),
        }
    }
}

/// `W̃^ℓ = Π_ℓ W^ℓ Π_{ℓ−1}ᵀ`, `b̃^ℓ = Π_ℓ b^ℓ`.
pub fn apply_stack(net: &Mlp, stack: &PermutationStack) -> Result<Mlp> {
    stack.check(net)?;
    let mut out = net.clone();
    let n_layers = net.layers().len();
    for l in 1..=n_layers {
        let layer = net.layer(l);
        let rows = stack.rows(l, layer.weight.rows());
        let cols = if l == 1 {
            (0..layer.weight.cols()).collect()
        } else {
            stack.rows(l - 1, layer.weight.cols())
        };
        out.layers_mut()[l - 1] = Layer {
            weight: layer.weight.select_rows(&rows).select_cols(&cols),
            bias: layer.bias.as_ref().map(|b| rows.iter().map(|&r| b[r]).collect()),
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    NaiveWm,
    CovWm,
    ActivationM,
}

impl MatchKind {
    pub const ALL: [MatchKind; 3] = [MatchKind::NaiveWm, MatchKind::CovWm, MatchKind::ActivationM];

    pub fn needs_probe(self) -> bool {
        !matches!(self, MatchKind::NaiveWm)
    }

    pub fn name(self) -> &'static str {
        match self {
            MatchKind::NaiveWm => "naive_wm",
            MatchKind::CovWm => "cov_wm",
            MatchKind::ActivationM => "activation_m",
        }
    }
}

impl fmt::Display for MatchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MatchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MatchKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown matching method {s:?}")))
    }
}

/// A matching method with its probe batch (`m₀ × samples`, one column per
/// input) when the method needs one.
#[derive(Debug, Clone, Copy)]
pub struct MatchMethod<'a> {
    kind: MatchKind,
    probe: Option<&'a Matrix>,
}

impl<'a> MatchMethod<'a> {
    pub fn new(kind: MatchKind, probe: Option<&'a Matrix>) -> Result<Self> {
        match (kind.needs_probe(), probe) {
            (true, None) => Err(Error::Config(format!("{kind} needs a probe batch"))),
            (true, Some(p)) if p.cols() == 0 => {
                Err(Error::Config(format!("{kind} needs a nonempty probe batch")))
            }
            (false, Some(_)) => Err(Error::Config(format!("{kind} takes no probe batch"))),
            _ => Ok(Self { kind, probe }),
        }
    }

    pub fn naive() -> Self {
        Self {
            kind: MatchKind::NaiveWm,
            probe: None,
        }
    }

    pub fn kind(&self) -> MatchKind {
        self.kind
    }
}

fn check_pair(a: &Mlp, b: &Mlp) -> Result<()> {
    if a.arch() != b.arch() {
        return Err(Error::Argument(format!(
            "networks differ in architecture: {:?} vs {:?}",
            a.arch(),
            b.arch()
        )));
    }
    Ok(())
}

fn check_probe(a: &Mlp, probe: &Matrix) -> Result<()> {
    if probe.cols() == 0 {
        return Err(Error::Argument("probe batch is empty".into()));
    }
    if probe.rows() != a.arch().input_dim() {
        return Err(Error::Argument(format!(
            "probe has {} rows, network input is {}",
            probe.rows(),
            a.arch().input_dim()
        )));
    }
    Ok(())
}

/// Second moments `Σ_A^0 … Σ_A^L` of the input and of every hidden layer of
/// `a` on the probe.
fn layer_moments(a: &Mlp, probe: &Matrix) -> Result<Vec<Matrix>> {
    let trace = a.forward(probe)?;
    let mut out = vec![second_moment(probe)?];
    for h in &trace.hidden {
        out.push(second_moment(h)?);
    }
    Ok(out)
}

/// `psd_sqrt(Σ)`, padded with a unit diagonal entry for the bias column.
fn weighting(sigma: &Matrix, bias: bool) -> Result<Matrix> {
    let r = psd_sqrt(sigma)?;
    if !bias {
        return Ok(r);
    }
    let n = r.rows();
    Ok(Matrix::from_fn(n + 1, n + 1, |i, j| {
        if i < n && j < n {
            r.get(i, j)
        } else if i == j {
            1.0
        } else {
            0.0
        }
    }))
}

/// Rows of A's layer and of B's layer with columns in A's basis, both in the
/// geometry of `kind` (weights, Σ-whitened weights, or probe activations).
struct LayerView {
    a: Matrix,
    b: Matrix,
}

/// Per-layer context shared by matching and reporting.
struct Views<'a> {
    a: &'a Mlp,
    b: &'a Mlp,
    moments: Option<Vec<Matrix>>,
    acts: Option<(Vec<Matrix>, Vec<Matrix>)>,
    weights: Vec<OnceLock<Matrix>>,
}

impl<'a> Views<'a> {
    fn new(a: &'a Mlp, b: &'a Mlp, probe: Option<&Matrix>) -> Result<Self> {
        check_pair(a, b)?;
        let (moments, acts) = match probe {
            Some(p) => {
                check_probe(a, p)?;
                let ha = a.forward(p)?.hidden;
                let hb = b.forward(p)?.hidden;
                (Some(layer_moments(a, p)?), Some((ha, hb)))
            }
            None => (None, None),
        };
        let weights = (0..a.hidden_layers()).map(|_| OnceLock::new()).collect();
        Ok(Self { a, b, moments, acts, weights })
    }

    /// Cached `weighting` of `Σ_A^{l−1}`.
    fn weighting(&self, l: usize) -> Result<&Matrix> {
        let cell = &self.weights[l - 1];
        if let Some(r) = cell.get() {
            return Ok(r);
        }
        let moments = self.moments.as_ref().expect("probe checked");
        let r = weighting(&moments[l - 1], self.a.arch().use_bias)?;
        Ok(cell.get_or_init(|| r))
    }

    /// B's layer `l` augmented rows with columns permuted by `prev`.
    fn b_rows(&self, l: usize, prev: Option<&Permutation>) -> Matrix {
        let layer = self.b.layer(l);
        let w = match prev {
            Some(p) => layer.weight.select_cols(p.as_slice()),
            None => layer.weight.clone(),
        };
        Layer {
            weight: w,
            bias: layer.bias.clone(),
        }
        .augmented()
    }

    fn view(&self, kind: MatchKind, l: usize, prev: Option<&Permutation>) -> Result<LayerView> {
        match kind {
            MatchKind::NaiveWm => Ok(LayerView {
                a: self.a.layer(l).augmented(),
                b: self.b_rows(l, prev),
            }),
            MatchKind::CovWm => {
                let r = self.weighting(l)?;
                Ok(LayerView {
                    a: self.a.layer(l).augmented().matmul(r)?,
                    b: self.b_rows(l, prev).matmul(r)?,
                })
            }
            MatchKind::ActivationM => {
                let (ha, hb) = self.acts.as_ref().expect("probe checked");
                let s = (ha[l - 1].cols() as f64).sqrt();
                Ok(LayerView {
                    a: ha[l - 1].scale(1.0 / s),
                    b: hb[l - 1].scale(1.0 / s),
                })
            }
        }
    }
}

/// Greedy layer-by-layer alignment of `b` onto `a` (layers `1 … L` in order,
/// each using the permutation already chosen for the layer below).
pub fn match_layers(a: &Mlp, b: &Mlp, method: MatchMethod<'_>) -> Result<PermutationStack> {
    let views = Views::new(a, b, method.probe)?;
    let mut stack: Vec<Permutation> = Vec::with_capacity(a.hidden_layers());
    for l in 1..=a.hidden_layers() {
        let v = views.view(method.kind, l, stack.last())?;
        let cost = pairwise_sq_dist(&v.a, &v.b)?;
        stack.push(solve_lap(&cost).permutation);
    }
    Ok(PermutationStack::new(stack))
}

/// The layer cost matrix method `kind` would solve at layer `l` given the
/// permutation of the layer below.
pub fn layer_cost_matrix(
    a: &Mlp,
    b: &Mlp,
    kind: MatchKind,
    probe: Option<&Matrix>,
    l: usize,
    prev: Option<&Permutation>,
) -> Result<CostMatrix> {
    MatchMethod::new(kind, probe)?;
    let v = Views::new(a, b, probe)?.view(kind, l, prev)?;
    pairwise_sq_dist(&v.a, &v.b)
}

/// Diagnostics for one hidden layer under a fixed stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: usize,
    pub width: usize,
    /// `‖W_A − Π W_B Π_{ℓ−1}ᵀ‖²`.
    pub naive_cost: f64,
    /// The same difference in the `Σ_A^{ℓ−1}` semi-norm.
    pub sigma_cost: f64,
    /// `(1/s)‖Z_A − Π Z_B‖²` on the probe.
    pub activation_cost: f64,
    /// `Dim(W_A W_Aᵀ)`.
    pub dim_weights: f64,
    /// `Dim(W_A Σ_A^{ℓ−1} W_Aᵀ)`.
    pub dim_weighted: f64,
    /// `Dim(Σ_A^ℓ)`.
    pub dim_activations: f64,
}

fn paired_cost(v: &LayerView, perm: &Permutation) -> f64 {
    (0..v.a.rows())
        .map(|i| sq_dist(v.a.row(i), v.b.row(perm.apply(i))))
        .sum()
}

/// `Dim` of a matrix that may be zero; a zero matrix reports NaN.
fn dim_or_nan(s: &Matrix) -> f64 {
    approx_dim(&symmetrize(s)).unwrap_or(f64::NAN)
}

fn symmetrize(s: &Matrix) -> Matrix {
    s.add(&s.transpose()).expect("square").scale(0.5)
}

/// Costs of all three methods evaluated under the same `stack`, plus the
/// approximate dimensions of the matrices each method effectively sees.
pub fn matching_report(
    a: &Mlp,
    b: &Mlp,
    stack: &PermutationStack,
    probe: &Matrix,
) -> Result<Vec<LayerReport>> {
    stack.check(b)?;
    let views = Views::new(a, b, Some(probe))?;
    let moments = views.moments.as_ref().expect("probe given");
    let mut out = Vec::with_capacity(stack.len());
    for l in 1..=stack.len() {
        let prev = if l == 1 { None } else { Some(&stack.layers()[l - 2]) };
        let perm = &stack.layers()[l - 1];
        let naive = views.view(MatchKind::NaiveWm, l, prev)?;
        let weighted = views.view(MatchKind::CovWm, l, prev)?;
        let acts = views.view(MatchKind::ActivationM, l, prev)?;

        // Σ padded like the cost weighting so all Dim values use the same rows.
        let (wa, war) = (&naive.a, &weighted.a);
        out.push(LayerReport {
            layer: l,
            width: perm.len(),
            naive_cost: paired_cost(&naive, perm),
            sigma_cost: paired_cost(&weighted, perm),
            activation_cost: paired_cost(&acts, perm),
            dim_weights: dim_or_nan(&wa.matmul_t(wa)?),
            dim_weighted: dim_or_nan(&war.matmul_t(war)?),
            dim_activations: dim_or_nan(&moments[l]),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_weights, Activation, Architecture, InitScheme};
    use crate::numerics::RngState;

    fn net(dims: &[usize], act: Activation, bias: bool, seed: u64) -> Mlp {
        let arch = Architecture::new(dims.to_vec(), act, bias).unwrap();
        let mut m = init_weights(&arch, &InitScheme::GaussianIid, &mut RngState::new(seed)).unwrap();
        if bias {
            let mut rng = RngState::new(seed ^ 0xb1a5);
            for layer in m.layers_mut() {
                layer.bias.as_mut().unwrap().iter_mut().for_each(|b| *b = 0.1 * rng.normal());
            }
        }
        m
    }

    fn probe(m0: usize, s: usize, seed: u64) -> Matrix {
        let mut rng = RngState::new(seed);
        Matrix::from_fn(m0, s, |_, _| rng.normal())
    }

    #[test]
    fn identity_and_inverse_stacks() {
        let a = net(&[3, 5, 4, 2], Activation::Relu, true, 1);
        assert_eq!(apply_stack(&a, &PermutationStack::identity(&a)).unwrap(), a);
        let s = PermutationStack::random(&a, &mut RngState::new(2));
        let back = apply_stack(&apply_stack(&a, &s).unwrap(), &s.inverse()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn swap_preserves_function() {
        let a = net(&[3, 2, 1], Activation::Relu, false, 3);
        let s = PermutationStack::new(vec![Permutation::new(vec![1, 0]).unwrap()]);
        let b = apply_stack(&a, &s).unwrap();
        assert_ne!(a, b);
        let x = probe(3, 100, 4);
        let d = a.predict(&x).unwrap().sub(&b.predict(&x).unwrap()).unwrap();
        assert!(d.max_abs() <= 1e-9);
    }

    #[test]
    fn stack_size_mismatch() {
        let a = net(&[3, 5, 2], Activation::Relu, false, 1);
        let s = PermutationStack::new(vec![Permutation::identity(4)]);
        assert!(apply_stack(&a, &s).is_err());
    }

    #[test]
    fn every_method_undoes_a_permutation() {
        let a = net(&[4, 6, 5, 3], Activation::Tanh, true, 11);
        let s = PermutationStack::random(&a, &mut RngState::new(12));
        let b = apply_stack(&a, &s).unwrap();
        let p = probe(4, 64, 13);
        for kind in MatchKind::ALL {
            let probe = kind.needs_probe().then_some(&p);
            let got = match_layers(&a, &b, MatchMethod::new(kind, probe).unwrap()).unwrap();
            assert_eq!(got, s.inverse(), "{kind}");
        }
        let got = match_layers(&a, &b, MatchMethod::naive()).unwrap();
        let report = matching_report(&a, &b, &got, &p).unwrap();
        assert!(report.iter().all(|r| r.naive_cost == 0.0));
    }

    #[test]
    fn whitened_probe_matches_naive() {
        let a = net(&[3, 8, 2], Activation::Relu, false, 21);
        let b = net(&[3, 8, 2], Activation::Relu, false, 22);
        // Columns √s·e_i have second moment exactly I.
        let s = 3.0f64;
        let p = Matrix::from_fn(3, 3, |i, j| if i == j { s.sqrt() } else { 0.0 });
        let naive = match_layers(&a, &b, MatchMethod::naive()).unwrap();
        let cov = match_layers(&a, &b, MatchMethod::new(MatchKind::CovWm, Some(&p)).unwrap()).unwrap();
        let rep_n = matching_report(&a, &b, &naive, &p).unwrap();
        let rep_c = matching_report(&a, &b, &cov, &p).unwrap();
        assert!((rep_n[0].naive_cost - rep_c[0].naive_cost).abs() < 1e-12);
        assert!((rep_n[0].sigma_cost - rep_n[0].naive_cost).abs() < 1e-12);
    }

    #[test]
    fn two_neurons_match_brute_force() {
        for seed in 0..20 {
            let a = net(&[3, 2, 1], Activation::Relu, false, 100 + seed);
            let b = net(&[3, 2, 1], Activation::Relu, false, 200 + seed);
            let got = match_layers(&a, &b, MatchMethod::naive()).unwrap();
            let cost = |p: &[usize]| -> f64 {
                (0..2)
                    .map(|i| sq_dist(a.layer(1).weight.row(i), b.layer(1).weight.row(p[i])))
                    .sum()
            };
            let best = if cost(&[0, 1]) <= cost(&[1, 0]) { cost(&[0, 1]) } else { cost(&[1, 0]) };
            assert!((cost(got.layers()[0].as_slice()) - best).abs() <= 1e-15);
        }
    }

    #[test]
    fn missing_probe_is_config_error() {
        assert!(matches!(MatchMethod::new(MatchKind::CovWm, None), Err(Error::Config(_))));
        assert!(matches!(MatchMethod::new(MatchKind::ActivationM, None), Err(Error::Config(_))));
        assert!(MatchMethod::new(MatchKind::NaiveWm, None).is_ok());
    }

    #[test]
    fn report_examples() {
        let a = net(&[3, 6, 2], Activation::Relu, false, 5);
        let p = probe(3, 50, 6);
        let rep = matching_report(&a, &a, &PermutationStack::identity(&a), &p).unwrap();
        let r = &rep[0];
        assert_eq!((r.naive_cost, r.sigma_cost, r.activation_cost), (0.0, 0.0, 0.0));

        // Rank-one first layer.
        let mut low = a.clone();
        let row: Vec<f64> = low.layer(1).weight.row(0).to_vec();
        for i in 0..6 {
            let c = (i + 1) as f64;
            low.layers_mut()[0].weight.row_mut(i).iter_mut().zip(&row).for_each(|(w, r)| *w = c * r);
        }
        let rep = matching_report(&low, &a, &PermutationStack::identity(&a), &p).unwrap();
        assert!((rep[0].dim_weights - 1.0).abs() < 1e-12);
    }

    #[test]
    fn method_names_round_trip() {
        for k in MatchKind::ALL {
            assert_eq!(k.to_string().parse::<MatchKind>().unwrap(), k);
        }
        assert!("wm".parse::<MatchKind>().is_err());
    }
}
