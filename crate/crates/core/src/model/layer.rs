//! Affine maps shared by every network: dense matrices or convolution banks.

use crate::tensor::{check_finite, matvec, matvec_t_acc, outer_acc, ConvGeometry, Padding, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Weight `outputs × inputs`, acting on rank-1 inputs.
    Dense,
    /// Kernel bank `out_ch × in_ch × k × k`, acting on `in_ch × h × w` maps.
    Conv(Padding),
}

/// `y = W x (+ b)`. Convolution biases hold one scalar per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Layer {
    pub fn dense(inputs: usize, outputs: usize, with_bias: bool) -> Self {
        Self {
            kind: LayerKind::Dense,
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: with_bias.then(|| Tensor::zeros(&[outputs])),
        }
    }

    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, padding: Padding, with_bias: bool) -> Self {
        Self {
            kind: LayerKind::Conv(padding),
            weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: with_bias.then(|| Tensor::zeros(&[out_channels])),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Glorot fans; convolution fans include the kernel's spatial size.
    pub fn fans(&self) -> (usize, usize) {
        let s = self.weight.shape();
        match self.kind {
            LayerKind::Dense => (s[1], s[0]),
            LayerKind::Conv(_) => (s[1] * s[2] * s[3], s[0] * s[2] * s[3]),
        }
    }

    fn geometry(&self, x_shape: &[usize]) -> Result<ConvGeometry> {
        match self.kind {
            LayerKind::Conv(padding) => Ok(ConvGeometry::new(x_shape, self.weight.shape(), padding)?),
            LayerKind::Dense => unreachable!("geometry of dense layer"),
        }
    }

    pub fn output_shape(&self, x_shape: &[usize]) -> Result<Vec<usize>> {
        match self.kind {
            LayerKind::Dense => {
                if x_shape != [self.inputs()] {
                    return Err(Error::Shape(format!(
                        "dense layer expects [{}], got {x_shape:?}",
                        self.inputs()
                    )));
                }
                Ok(vec![self.outputs()])
            }
            LayerKind::Conv(_) => Ok(self.geometry(x_shape)?.output_shape().to_vec()),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shape = self.output_shape(x.shape())?;
        let mut out = vec![0.0; shape.iter().product()];
        match self.kind {
            LayerKind::Dense => {
                matvec(self.weight.data(), self.outputs(), self.inputs(), x.data(), &mut out);
                if let Some(b) = &self.bias {
                    for (o, bv) in out.iter_mut().zip(b.data()) {
                        *o += bv;
                    }
                }
            }
            LayerKind::Conv(_) => {
                let g = self.geometry(x.shape())?;
                g.forward_acc(x.data(), self.weight.data(), &mut out);
                if let Some(b) = &self.bias {
                    let plane = g.out_h * g.out_w;
                    for (c, &bv) in b.data().iter().enumerate() {
                        for o in &mut out[c * plane..(c + 1) * plane] {
                            *o += bv;
                        }
                    }
                }
            }
        }
        check_finite("layer forward", &out)?;
        Ok(Tensor::from_parts(shape, out))
    }

    /// `d_weight += ∂⟨dy, W x⟩/∂W`.
    pub fn accumulate_weight_grad(&self, x: &Tensor, dy: &Tensor, d_weight: &mut Tensor) -> Result<()> {
        match self.kind {
            LayerKind::Dense => outer_acc(d_weight.data_mut(), dy.data(), x.data()),
            LayerKind::Conv(_) => {
                let g = self.geometry(x.shape())?;
                g.backward_kernel_acc(dy.data(), x.data(), d_weight.data_mut());
            }
        }
        Ok(())
    }

    /// `d_bias += ∂⟨dy, b⟩/∂b`; sums each output plane for convolutions.
    pub fn accumulate_bias_grad(&self, dy: &Tensor, d_bias: &mut Tensor) {
        let db = d_bias.data_mut();
        match self.kind {
            LayerKind::Dense => {
                for (d, g) in db.iter_mut().zip(dy.data()) {
                    *d += g;
                }
            }
            LayerKind::Conv(_) => {
                let plane = dy.len() / db.len();
                for (c, d) in db.iter_mut().enumerate() {
                    *d += dy.data()[c * plane..(c + 1) * plane].iter().sum::<f64>();
                }
            }
        }
    }

    /// Gradient with respect to the layer input.
    pub fn input_grad(&self, x_shape: &[usize], dy: &Tensor) -> Result<Tensor> {
        let mut dx = vec![0.0; x_shape.iter().product()];
        match self.kind {
            LayerKind::Dense => matvec_t_acc(self.weight.data(), self.outputs(), self.inputs(), dy.data(), &mut dx),
            LayerKind::Conv(_) => {
                let g = self.geometry(x_shape)?;
                g.backward_input_acc(dy.data(), self.weight.data(), &mut dx);
            }
        }
        Ok(Tensor::from_parts(x_shape.to_vec(), dx))
    }

    pub(crate) fn params(&self) -> Vec<&Tensor> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }

    pub(crate) fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut names = vec![format!("{prefix}.weight")];
        if self.bias.is_some() {
            names.push(format!("{prefix}.bias"));
        }
        names
    }

    pub(crate) fn param_len(&self) -> usize {
        1 + usize::from(self.bias.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sample_normal, Rng};

    #[test]
    fn dense_forward_backward() {
        let mut l = Layer::dense(2, 3, true);
        l.weight = Tensor::from_rows(&[&[1.0, 2.0], &[0.0, -1.0], &[3.0, 0.5]]).unwrap();
        l.bias = Some(Tensor::vector(vec![0.5, 0.0, -1.0]).unwrap());
        let x = Tensor::vector(vec![2.0, 1.0]).unwrap();
        let y = l.forward(&x).unwrap();
        assert_eq!(y.data(), &[4.5, -1.0, 5.5]);

        let dy = Tensor::vector(vec![1.0, 2.0, -1.0]).unwrap();
        let mut dw = Tensor::zeros(&[3, 2]);
        l.accumulate_weight_grad(&x, &dy, &mut dw).unwrap();
        assert_eq!(dw.data(), &[2.0, 1.0, 4.0, 2.0, -2.0, -1.0]);
        let dx = l.input_grad(&[2], &dy).unwrap();
        assert_eq!(dx.data(), &[1.0 - 3.0, 2.0 - 2.0 - 0.5]);
    }

    #[test]
    fn conv_bias_is_per_channel_scalar() {
        let mut rng = Rng::new(1);
        let mut l = Layer::conv(2, 3, 3, Padding::Same, true);
        l.weight = sample_normal(&mut rng, &[3, 2, 3, 3], 0.0, 1.0).unwrap();
        l.bias = Some(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let x = sample_normal(&mut rng, &[2, 5, 6], 0.0, 1.0).unwrap();
        let with = l.forward(&x).unwrap();
        l.bias = Some(Tensor::zeros(&[3]));
        let without = l.forward(&x).unwrap();
        for c in 0..3 {
            for i in 0..30 {
                let d = with.data()[c * 30 + i] - without.data()[c * 30 + i];
                assert!((d - (c + 1) as f64).abs() < 1e-12);
            }
        }
        let mut db = Tensor::zeros(&[3]);
        l.accumulate_bias_grad(&Tensor::full(&[3, 5, 6], 1.0), &mut db);
        assert_eq!(db.data(), &[30.0, 30.0, 30.0]);
    }

    #[test]
    fn dense_rejects_wrong_input() {
        let l = Layer::dense(4, 2, false);
        assert!(l.forward(&Tensor::zeros(&[3])).is_err());
        assert!(l.forward(&Tensor::zeros(&[1, 2, 2])).is_err());
    }
}
