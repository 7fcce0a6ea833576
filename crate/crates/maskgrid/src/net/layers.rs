//! Minimal differentiable layers over [`FeatureMap`]s.
//!
//! Forward passes are pure; backward passes accumulate parameter gradients
//! into buffers owned by each layer and return the input gradient.

use crate::rng::SplitMix64;
use crate::tensor::FeatureMap;

/// 2D convolution with square kernel (1x1 or 3x3), stride 1, zero padding
/// that preserves the spatial shape.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub ksize: usize,
    /// Weights in `(cout, cin, ky, kx)` order.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub gw: Vec<f64>,
    pub gb: Vec<f64>,
}

impl Conv2d {
    /// He-style fan-in initialization, zero bias.
    pub fn new(cin: usize, cout: usize, ksize: usize, rng: &mut SplitMix64) -> Conv2d {
        assert!(ksize % 2 == 1, "kernel size must be odd");
        let fan_in = cin * ksize * ksize;
        let std = (2.0 / fan_in as f64).sqrt();
        let w = (0..cout * fan_in).map(|_| std * rng.next_gaussian()).collect();
        Conv2d {
            cin,
            cout,
            ksize,
            w,
            b: vec![0.0; cout],
            gw: vec![0.0; cout * fan_in],
            gb: vec![0.0; cout],
        }
    }

    pub fn zero_grad(&mut self) {
        self.gw.fill(0.0);
        self.gb.fill(0.0);
    }

    #[inline]
    fn widx(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        ((co * self.cin + ci) * self.ksize + ky) * self.ksize + kx
    }

    pub fn forward(&self, x: &FeatureMap) -> FeatureMap {
        assert_eq!(x.channels(), self.cin, "conv input channel mismatch");
        let (h, w) = (x.height(), x.width());
        let pad = (self.ksize / 2) as i64;
        let mut out = FeatureMap::zeros(self.cout, h, w, x.stride());
        for co in 0..self.cout {
            let ostart = co * h * w;
            out.data_mut()[ostart..ostart + h * w].fill(self.b[co]);
            for ci in 0..self.cin {
                let xplane = x.channel(ci);
                for ky in 0..self.ksize {
                    let dy = ky as i64 - pad;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as i64).min(h as i64 - dy) as usize;
                    for kx in 0..self.ksize {
                        let dx = kx as i64 - pad;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as i64).min(w as i64 - dx) as usize;
                        let wv = self.w[self.widx(co, ci, ky, kx)];
                        if wv == 0.0 {
                            continue;
                        }
                        let odata = out.data_mut();
                        for y in y0..y1 {
                            let srow = ((y as i64 + dy) as usize) * w;
                            let orow = ostart + y * w;
                            for x in x0..x1 {
                                odata[orow + x] += wv * xplane[srow + (x as i64 + dx) as usize];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulate `gw`/`gb` from `(x, dy)` and return `dx`.
    pub fn backward(&mut self, x: &FeatureMap, dy: &FeatureMap) -> FeatureMap {
        assert_eq!(dy.channels(), self.cout);
        let (h, w) = (x.height(), x.width());
        let pad = (self.ksize / 2) as i64;
        let mut dx = x.zeros_like();
        for co in 0..self.cout {
            let dplane = dy.channel(co);
            self.gb[co] += dplane.iter().sum::<f64>();
            for ci in 0..self.cin {
                let xplane = x.channel(ci);
                for ky in 0..self.ksize {
                    let dyo = ky as i64 - pad;
                    let y0 = (-dyo).max(0) as usize;
                    let y1 = (h as i64).min(h as i64 - dyo) as usize;
                    for kx in 0..self.ksize {
                        let dxo = kx as i64 - pad;
                        let x0 = (-dxo).max(0) as usize;
                        let x1 = (w as i64).min(w as i64 - dxo) as usize;
                        let wi = self.widx(co, ci, ky, kx);
                        let wv = self.w[wi];
                        let mut gacc = 0.0;
                        let dxdata = dx.data_mut();
                        let plane_base = ci * h * w;
                        for y in y0..y1 {
                            let srow = ((y as i64 + dyo) as usize) * w;
                            let drow = y * w;
                            for x in x0..x1 {
                                let g = dplane[drow + x];
                                let si = srow + (x as i64 + dxo) as usize;
                                gacc += g * xplane[si];
                                dxdata[plane_base + si] += wv * g;
                            }
                        }
                        self.gw[wi] += gacc;
                    }
                }
            }
        }
        dx
    }
}

pub fn relu(x: &FeatureMap) -> FeatureMap {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient of relu given the forward *output* and upstream gradient.
pub fn relu_backward(out: &FeatureMap, dy: &FeatureMap) -> FeatureMap {
    let mut dx = dy.clone();
    for (g, o) in dx.data_mut().iter_mut().zip(out.data()) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

/// 2x2 average pooling with stride 2; doubles the map's image stride.
pub fn avg_pool2(x: &FeatureMap) -> FeatureMap {
    let (h, w) = (x.height() / 2, x.width() / 2);
    assert!(h > 0 && w > 0, "map too small to pool");
    let mut out = FeatureMap::zeros(x.channels(), h, w, x.stride() * 2.0);
    for c in 0..x.channels() {
        let xp = x.channel(c);
        let base = c * h * w;
        let odata = out.data_mut();
        for y in 0..h {
            for xx in 0..w {
                let r0 = 2 * y * x.width() + 2 * xx;
                let r1 = r0 + x.width();
                odata[base + y * w + xx] = 0.25 * (xp[r0] + xp[r0 + 1] + xp[r1] + xp[r1 + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(x: &FeatureMap, dy: &FeatureMap) -> FeatureMap {
    let mut dx = x.zeros_like();
    let (h, w) = (dy.height(), dy.width());
    for c in 0..x.channels() {
        let dplane = dy.channel(c);
        let base = c * x.height() * x.width();
        let dxdata = dx.data_mut();
        for y in 0..h {
            for xx in 0..w {
                let g = 0.25 * dplane[y * w + xx];
                let r0 = base + 2 * y * x.width() + 2 * xx;
                let r1 = r0 + x.width();
                dxdata[r0] += g;
                dxdata[r0 + 1] += g;
                dxdata[r1] += g;
                dxdata[r1 + 1] += g;
            }
        }
    }
    dx
}

/// Numerically safe logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
