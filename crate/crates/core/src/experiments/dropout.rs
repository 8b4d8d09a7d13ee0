use serde::{Deserialize, Serialize};

use crate::assignment::wasserstein;
use crate::error::{Error, Result};
use crate::network::{Activation, Mlp};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutGap {
    /// `E |(2/N) Σ_{i<N/2} σ(wᵢx) − (1/N) Σ σ(wᵢx)|` over the inputs.
    pub drop_error: f64,
    /// `W₁` between the first-half and second-half neuron weight rows.
    pub w1_bound: f64,
    /// Largest input norm; the bound is guaranteed when this is ≤ 1.
    pub max_input_norm: f64,
}

impl DropoutGap {
    pub fn holds(&self) -> bool {
        self.drop_error <= self.w1_bound + 1e-9
    }
}

/// Error of keeping only the first half of the hidden neurons of a two-layer
/// network `x ↦ (1/N) Σ σ(wᵢx)` (renormalized by 2), against the `W₁`
/// distance between the two halves of its neuron weights.
pub fn dropout_gap(net: &Mlp, inputs: &Matrix) -> Result<DropoutGap> {
    let arch = net.arch();
    if arch.hidden_layers() != 1 || arch.output_dim() != 1 || arch.use_bias {
        return Err(Error::Argument(
            "dropout gap needs a bias-free d → N → 1 network".into(),
        ));
    }
    if !matches!(arch.activation, Activation::Relu | Activation::Tanh) {
        return Err(Error::Argument("dropout gap needs a 1-Lipschitz activation".into()));
    }
    let n = arch.dims[1];
    if n % 2 != 0 {
        return Err(Error::Argument(format!("hidden width {n} is odd")));
    }
    let uniform = 1.0 / n as f64;
    if net.layer(2).weight.data().iter().any(|&a| (a - uniform).abs() > 1e-12 * uniform) {
        return Err(Error::Argument("second layer must be uniform 1/N".into()));
    }
    if inputs.cols() == 0 {
        return Err(Error::Argument("no evaluation inputs".into()));
    }
    let hidden = &net.forward(inputs)?.hidden[0];
    let half = n / 2;
    let s = inputs.cols();
    let drop_error = (0..s)
        .map(|c| {
            let (mut kept, mut all) = (0.0, 0.0);
            for i in 0..n {
                let v = hidden.get(i, c);
                all += v;
                if i < half {
                    kept += v;
                }
            }
            (2.0 * kept / n as f64 - all / n as f64).abs()
        })
        .sum::<f64>()
        / s as f64;
    let w = &net.layer(1).weight;
    let first: Vec<usize> = (0..half).collect();
    let second: Vec<usize> = (half..n).collect();
    let w1_bound = wasserstein(&w.select_rows(&first), &w.select_rows(&second), 1)?;
    let max_input_norm = (0..s)
        .map(|c| inputs.column(c).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    Ok(DropoutGap {
        drop_error,
        w1_bound,
        max_input_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Architecture, Layer};

    fn two_layer(rows: &[Vec<f64>], act: Activation) -> Mlp {
        let n = rows.len();
        let d = rows[0].len();
        let arch = Architecture::new(vec![d, n, 1], act, false).unwrap();
        Mlp::new(
            arch,
            vec![
                Layer { weight: Matrix::from_rows(rows).unwrap(), bias: None },
                Layer { weight: Matrix::new(1, n, vec![1.0 / n as f64; n]).unwrap(), bias: None },
            ],
        )
        .unwrap()
    }

    #[test]
    fn equal_rows() {
        let net = two_layer(&vec![vec![0.3, -0.2]; 4], Activation::Relu);
        let x = Matrix::from_rows(&[[0.5, 0.1], [-0.3, 0.6]]).unwrap();
        let g = dropout_gap(&net, &x).unwrap();
        assert_eq!((g.drop_error, g.w1_bound), (0.0, 0.0));
    }

    #[test]
    fn two_neurons_by_hand() {
        let net = two_layer(&[vec![1.0], vec![-0.5]], Activation::Tanh);
        let x = Matrix::from_rows(&[[0.8]]).unwrap();
        let g = dropout_gap(&net, &x).unwrap();
        let want = ((0.8f64).tanh() - (-0.4f64).tanh()).abs() / 2.0;
        assert!((g.drop_error - want).abs() < 1e-15);
        assert!((g.w1_bound - 1.5).abs() < 1e-15);
        assert!(g.holds());
    }

    #[test]
    fn rejects_odd_width_and_nonuniform_readout() {
        let net = two_layer(&[vec![1.0], vec![2.0], vec![3.0]], Activation::Relu);
        assert!(dropout_gap(&net, &Matrix::from_rows(&[[0.1]]).unwrap()).is_err());
        let mut net = two_layer(&[vec![1.0], vec![2.0]], Activation::Relu);
        net.layers_mut()[1].weight.set(0, 0, 0.9);
        assert!(dropout_gap(&net, &Matrix::from_rows(&[[0.1]]).unwrap()).is_err());
    }
}
