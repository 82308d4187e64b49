use rand::Rng;

use super::{Layer, Mode, Param};
use crate::tensor::{gemm, Tensor};

/// Affine map `y = x W^T + b` on `[N, in]` inputs.
pub struct Linear {
    in_features: usize,
    out_features: usize,
    weight: Param,
    bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng>(name: &str, in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self {
            in_features,
            out_features,
            weight: Param::uniform(format!("{name}.weight"), &[out_features, in_features], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), &[out_features], bound, rng),
            input: None,
        }
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }
}

impl Layer for Linear {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let n = input.batch();
        assert_eq!(input.item_len(), self.in_features, "linear input width");
        let mut out = Tensor::zeros(&[n, self.out_features]);
        for row in out.data_mut().chunks_mut(self.out_features) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(
            n,
            self.in_features,
            self.out_features,
            1.0,
            input.data(),
            false,
            &self.weight.value,
            true,
            1.0,
            out.data_mut(),
        );
        self.input = Some(input.clone());
        out
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let input = self.input.as_ref().expect("linear backward before forward");
        let n = input.batch();
        for row in grad_output.data().chunks(self.out_features) {
            for (b, g) in self.bias.grad.iter_mut().zip(row) {
                *b += g;
            }
        }
        gemm(
            self.out_features,
            n,
            self.in_features,
            1.0,
            grad_output.data(),
            true,
            input.data(),
            false,
            1.0,
            &mut self.weight.grad,
        );
        let mut grad_input = Tensor::zeros(input.shape());
        gemm(
            n,
            self.out_features,
            self.in_features,
            1.0,
            grad_output.data(),
            false,
            &self.weight.value,
            false,
            0.0,
            grad_input.data_mut(),
        );
        grad_input
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
