use rand::Rng;

use super::{Layer, Mode, Param};
use crate::tensor::{gemm, Tensor};

/// Bias-free 2-D convolution (square kernel) lowered to GEMM through im2col.
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    /// `[out_channels, in_channels * kernel * kernel]`
    weight: Param,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_out = out_channels * kernel * kernel;
        let weight = Param::kaiming_normal(
            format!("{name}.weight"),
            &[out_channels, in_channels * kernel * kernel],
            fan_out,
            rng,
        );
        Self { in_channels, out_channels, kernel, stride, padding, weight, input: None }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let ho = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let wo = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (ho, wo)
    }

    fn im2col(&self, image: &[f64], h: usize, w: usize, cols: &mut [f64]) {
        let (ho, wo) = self.output_size(h, w);
        let k = self.kernel;
        let pad = self.padding as isize;
        let plane = ho * wo;
        for c in 0..self.in_channels {
            let src = &image[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            out_row.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            *v = if ix < 0 || ix >= w as isize { 0.0 } else { src_row[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, image: &mut [f64]) {
        let (ho, wo) = self.output_size(h, w);
        let k = self.kernel;
        let pad = self.padding as isize;
        let plane = ho * wo;
        for c in 0..self.in_channels {
            let dst = &mut image[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let (n, c, h, w) = input.dims4();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (ho, wo) = self.output_size(h, w);
        let ckk = c * self.kernel * self.kernel;
        let plane = ho * wo;
        let mut cols = vec![0.0; ckk * plane];
        let mut out = Tensor::zeros(&[n, self.out_channels, ho, wo]);
        let out_item = self.out_channels * plane;
        for i in 0..n {
            self.im2col(input.item(i), h, w, &mut cols);
            let dst = &mut out.data_mut()[i * out_item..(i + 1) * out_item];
            gemm(self.out_channels, ckk, plane, 1.0, &self.weight.value, false, &cols, false, 0.0, dst);
        }
        self.input = Some(input.clone());
        out
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let input = self.input.as_ref().expect("conv backward before forward");
        let (n, c, h, w) = input.dims4();
        let (ho, wo) = self.output_size(h, w);
        let ckk = c * self.kernel * self.kernel;
        let plane = ho * wo;
        let mut cols = vec![0.0; ckk * plane];
        let mut dcols = vec![0.0; ckk * plane];
        let mut grad_input = Tensor::zeros(input.shape());
        let in_item = c * h * w;
        for i in 0..n {
            let dout = grad_output.item(i);
            self.im2col(input.item(i), h, w, &mut cols);
            // dW += dout * cols^T
            gemm(self.out_channels, plane, ckk, 1.0, dout, false, &cols, true, 1.0, &mut self.weight.grad);
            // dcols = W^T * dout
            gemm(ckk, self.out_channels, plane, 1.0, &self.weight.value, true, dout, false, 0.0, &mut dcols);
            let dst = &mut grad_input.data_mut()[i * in_item..(i + 1) * in_item];
            self.col2im(&dcols, h, w, dst);
        }
        grad_input
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
    }
}
