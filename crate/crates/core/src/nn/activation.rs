use super::{Layer, Mode, Param};
use crate::tensor::Tensor;

#[derive(Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let mut out = input.clone();
        self.mask.clear();
        self.mask.reserve(out.len());
        for v in out.data_mut() {
            let active = *v > 0.0;
            self.mask.push(active);
            if !active {
                *v = 0.0;
            }
        }
        out
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let mut grad = grad_output.clone();
        for (g, active) in grad.data_mut().iter_mut().zip(&self.mask) {
            if !active {
                *g = 0.0;
            }
        }
        grad
    }

    fn visit(&self, _f: &mut dyn FnMut(&Param)) {}

    fn visit_mut(&mut self, _f: &mut dyn FnMut(&mut Param)) {}
}
