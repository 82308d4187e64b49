use super::{Layer, Mode, Param};
use crate::tensor::Tensor;

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `(N, H, W)`.
///
/// Train mode normalizes with biased batch statistics and folds the unbiased
/// variance into the running estimate; eval mode uses the running estimate.
pub struct BatchNorm2d {
    channels: usize,
    gamma: Param,
    beta: Param,
    running_mean: Param,
    running_var: Param,
    cache: Option<Cache>,
}

struct Cache {
    mode: Mode,
    shape: Vec<usize>,
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(format!("{name}.gamma"), &[channels], vec![1.0; channels]),
            beta: Param::new(format!("{name}.beta"), &[channels], vec![0.0; channels]),
            running_mean: Param::buffer(format!("{name}.running_mean"), &[channels], vec![0.0; channels]),
            running_var: Param::buffer(format!("{name}.running_var"), &[channels], vec![1.0; channels]),
            cache: None,
        }
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        let (n, c, h, w) = input.dims4();
        assert_eq!(c, self.channels);
        let plane = h * w;
        let count = (n * plane) as f64;
        let x = input.data();

        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for (ch, (m, v)) in mean.iter_mut().zip(var.iter_mut()).enumerate() {
                    let mut s = 0.0;
                    for b in 0..n {
                        let off = (b * c + ch) * plane;
                        s += x[off..off + plane].iter().sum::<f64>();
                    }
                    *m = s / count;
                    let mut sq = 0.0;
                    for b in 0..n {
                        let off = (b * c + ch) * plane;
                        sq += x[off..off + plane].iter().map(|v| (v - *m) * (v - *m)).sum::<f64>();
                    }
                    *v = sq / count;
                }
                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                for ch in 0..c {
                    self.running_mean.value[ch] = (1.0 - MOMENTUM) * self.running_mean.value[ch] + MOMENTUM * mean[ch];
                    self.running_var.value[ch] =
                        (1.0 - MOMENTUM) * self.running_var.value[ch] + MOMENTUM * var[ch] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.value.clone(), self.running_var.value.clone()),
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + EPS).sqrt()).collect();
        let mut normalized = vec![0.0; x.len()];
        let mut out = Tensor::zeros(input.shape());
        let y = out.data_mut();
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let (g, bt, m, is) = (self.gamma.value[ch], self.beta.value[ch], mean[ch], inv_std[ch]);
                for i in off..off + plane {
                    let xh = (x[i] - m) * is;
                    normalized[i] = xh;
                    y[i] = g * xh + bt;
                }
            }
        }
        self.cache = Some(Cache { mode, shape: input.shape().to_vec(), normalized, inv_std });
        out
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let cache = self.cache.as_ref().expect("batchnorm backward before forward");
        let (n, c, h, w) = (cache.shape[0], cache.shape[1], cache.shape[2], cache.shape[3]);
        let plane = h * w;
        let count = (n * plane) as f64;
        let dy = grad_output.data();
        let xh = &cache.normalized;
        let mut grad_input = Tensor::zeros(&cache.shape);
        let dx = grad_input.data_mut();
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xh = 0.0;
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    sum_dy += dy[i];
                    sum_dy_xh += dy[i] * xh[i];
                }
            }
            self.gamma.grad[ch] += sum_dy_xh;
            self.beta.grad[ch] += sum_dy;
            let scale = self.gamma.value[ch] * cache.inv_std[ch];
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    dx[i] = match cache.mode {
                        Mode::Train => scale * (dy[i] - sum_dy / count - xh[i] * sum_dy_xh / count),
                        Mode::Eval => scale * dy[i],
                    };
                }
            }
        }
        grad_input
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}
