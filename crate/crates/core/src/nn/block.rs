use rand::Rng;

use super::{BatchNorm2d, Conv2d, Layer, Mode, Param, Relu};
use crate::tensor::Tensor;

#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Sequential {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        let mut iter = self.layers.iter_mut();
        let Some(first) = iter.next() else {
            return input.clone();
        };
        let mut x = first.forward(input, mode);
        for layer in iter {
            x = layer.forward(&x, mode);
        }
        x
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let mut iter = self.layers.iter_mut().rev();
        let Some(last) = iter.next() else {
            return grad_output.clone();
        };
        let mut g = last.backward(grad_output);
        for layer in iter {
            g = layer.backward(&g);
        }
        g
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        for layer in &self.layers {
            layer.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for layer in &mut self.layers {
            layer.visit_mut(f);
        }
    }
}

/// Two 3x3 conv-BN stages with an identity or 1x1-projection shortcut.
pub struct BasicBlock {
    residual: Sequential,
    shortcut: Option<Sequential>,
    out_relu: Relu,
}

impl BasicBlock {
    pub fn new<R: Rng>(name: &str, in_channels: usize, out_channels: usize, stride: usize, rng: &mut R) -> Self {
        let mut residual = Sequential::new();
        residual
            .push(Conv2d::new(&format!("{name}.conv1"), in_channels, out_channels, 3, stride, 1, rng))
            .push(BatchNorm2d::new(&format!("{name}.bn1"), out_channels))
            .push(Relu::new())
            .push(Conv2d::new(&format!("{name}.conv2"), out_channels, out_channels, 3, 1, 1, rng))
            .push(BatchNorm2d::new(&format!("{name}.bn2"), out_channels));
        let shortcut = (stride != 1 || in_channels != out_channels).then(|| {
            let mut s = Sequential::new();
            s.push(Conv2d::new(&format!("{name}.shortcut.conv"), in_channels, out_channels, 1, stride, 0, rng))
                .push(BatchNorm2d::new(&format!("{name}.shortcut.bn"), out_channels));
            s
        });
        Self { residual, shortcut, out_relu: Relu::new() }
    }
}

impl Layer for BasicBlock {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        let mut sum = self.residual.forward(input, mode);
        match &mut self.shortcut {
            Some(s) => sum.add_assign(&s.forward(input, mode)),
            None => sum.add_assign(input),
        }
        self.out_relu.forward(&sum, mode)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let g = self.out_relu.backward(grad_output);
        let mut grad_input = self.residual.backward(&g);
        match &mut self.shortcut {
            Some(s) => grad_input.add_assign(&s.backward(&g)),
            None => grad_input.add_assign(&g),
        }
        grad_input
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.residual.visit(f);
        if let Some(s) = &self.shortcut {
            s.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.residual.visit_mut(f);
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(f);
        }
    }
}

/// `[N, C, H, W] -> [N, C]` spatial mean.
#[derive(Default)]
pub struct GlobalAvgPool {
    input_shape: Vec<usize>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for GlobalAvgPool {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let (n, c, h, w) = input.dims4();
        let plane = h * w;
        let data = input.data().chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
        self.input_shape = input.shape().to_vec();
        Tensor::new(vec![n, c], data).expect("pooled shape")
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let plane = self.input_shape[2] * self.input_shape[3];
        let scale = 1.0 / plane as f64;
        let data = grad_output.data().iter().flat_map(|g| std::iter::repeat_n(g * scale, plane)).collect();
        Tensor::new(self.input_shape.clone(), data).expect("unpooled shape")
    }

    fn visit(&self, _f: &mut dyn FnMut(&Param)) {}

    fn visit_mut(&mut self, _f: &mut dyn FnMut(&mut Param)) {}
}
