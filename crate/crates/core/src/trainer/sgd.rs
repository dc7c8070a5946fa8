use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum and L2 weight decay:
/// `d = g + wd·p; buf = μ·buf + d; p ← p − lr·buf`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    buffers: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f32, weight_decay: f32) -> Self {
        Self {
            momentum,
            weight_decay,
            buffers: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor<f32>>, grads: &[Tensor<f32>], lr: f32) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.buffers.is_empty() {
            self.buffers = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        let (mu, wd) = (self.momentum, self.weight_decay);
        for ((p, g), buf) in params.into_iter().zip(grads).zip(&mut self.buffers) {
            if p.shape() != g.shape() || buf.len() != p.numel() {
                return Err(Error::Dimension {
                    op: "sgd step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            for ((pv, &gv), b) in p.data_mut().iter_mut().zip(g.data()).zip(buf.iter_mut()) {
                let d = gv + wd * *pv;
                *b = mu * *b + d;
                *pv -= lr * *b;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_steps_by_hand() {
        let mut p = Tensor::new(vec![1], vec![1.0f32]).unwrap();
        let g = Tensor::new(vec![1], vec![0.5f32]).unwrap();
        let mut opt = Sgd::new(0.9, 0.0);
        opt.step(vec![&mut p], std::slice::from_ref(&g), 0.1).unwrap();
        assert!((p.data()[0] - 0.95).abs() < 1e-7);
        // buf = 0.9·0.5 + 0.5 = 0.95
        opt.step(vec![&mut p], std::slice::from_ref(&g), 0.1).unwrap();
        assert!((p.data()[0] - 0.855).abs() < 1e-6);
    }

    #[test]
    fn zero_lr_leaves_params_bitwise() {
        let mut p = Tensor::new(vec![3], vec![0.3f32, -2.0, 7.5]).unwrap();
        let before = p.clone();
        let g = Tensor::new(vec![3], vec![1.0f32, 2.0, -3.0]).unwrap();
        let mut opt = Sgd::new(0.9, 1e-4);
        opt.step(vec![&mut p], std::slice::from_ref(&g), 0.0).unwrap();
        assert_eq!(p, before);
    }
}
