//! Stochastic gradient descent with classical momentum.

/// One in-place update: `v <- m*v + g; w <- w - lr*v`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    assert_eq!(params.len(), grads.len(), "param/grad shape mismatch");
    assert_eq!(params.len(), velocity.len(), "param/velocity shape mismatch");
    for ((w, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
}

/// Momentum state for a list of parameter arrays, keyed by visitation order.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Sgd {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Apply one step to parameters visited in a stable order. The velocity
    /// buffers are created lazily on the first step.
    pub fn step<'a>(&mut self, params: impl Iterator<Item = (&'a mut Vec<f64>, &'a Vec<f64>)>) {
        let mut idx = 0;
        for (w, g) in params {
            if self.velocity.len() <= idx {
                self.velocity.push(vec![0.0; w.len()]);
            }
            sgd_step(w, g, &mut self.velocity[idx], self.lr, self.momentum);
            idx += 1;
        }
    }
}
